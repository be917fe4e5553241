//! Core of the hint loop: synthetic corpora, window scoring, calibrated
//! segmentation, hint ranking, rater simulation, evaluation metrics and the
//! feedback store that turns reviews back into training labels.

pub mod evaluation;
pub mod feedbackstore;
pub mod io;
pub mod pipeline;
pub mod ranker;
pub mod ratersim;
pub mod scoring;
pub mod seeding;
pub mod segmenter;
pub mod synthdata;
pub mod taxonomy;
