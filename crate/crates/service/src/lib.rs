//! Review service: leases videos to expert and generalist raters, serves
//! precomputed hints, records submissions in the feedback store and reports
//! experiment metrics over HTTP.

pub mod clock;
pub mod http;
pub mod service;

pub use clock::{Clock, ManualClock, SystemClock};
pub use http::{router, serve, ErrorBody, NextTaskResponse};
pub use service::{
    quota, read_request_log, HintView, LoggedRequest, MediaStrip, MetricsResponse, ReviewService, ReviewTask,
    ServiceConfig, ServiceData, ServiceError, SubmitAck, SubmitRequest, SubmittedAnnotation, SubmittedResponse,
    TaskStatus, TaskView,
};
