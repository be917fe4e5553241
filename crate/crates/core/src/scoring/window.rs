use crate::synthdata::FrameFeatureSeries;

use super::ScoringError;

/// Flat concatenation of rows `start..start + n`; rows past the last frame are
/// zero ("empty") rows.
pub fn aggregate_window(
    features: &FrameFeatureSeries,
    start: usize,
    n: usize,
) -> Result<Vec<f64>, ScoringError> {
    let frame_count = features.frame_count();
    if start >= frame_count {
        return Err(ScoringError::WindowOutOfRange { start, frame_count });
    }
    let dims = features.dims;
    let mut out = vec![0.0; n * dims];
    let last = (start + n).min(frame_count);
    let filled = (last - start) * dims;
    out[..filled].copy_from_slice(&features.values[start * dims..last * dims]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn six_frames() -> FrameFeatureSeries {
        FrameFeatureSeries {
            video_id: "v".into(),
            dims: 2,
            values: (0..12).map(|v| v as f64 + 1.0).collect(),
        }
    }

    #[test]
    fn interior_window_is_plain_concatenation() {
        let w = aggregate_window(&six_frames(), 0, 3).unwrap();
        assert_eq!(w, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn last_frame_pads_with_zero_rows() {
        let w = aggregate_window(&six_frames(), 5, 3).unwrap();
        assert_eq!(w, vec![11.0, 12.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn start_past_end_is_error() {
        assert!(matches!(
            aggregate_window(&six_frames(), 6, 3),
            Err(ScoringError::WindowOutOfRange { start: 6, frame_count: 6 })
        ));
    }

    proptest! {
        #[test]
        fn padding_tail_is_exactly_zero(frames in 1usize..40, dims in 1usize..5, n in 1usize..12, pick in 0usize..1000) {
            let f = FrameFeatureSeries {
                video_id: "v".into(),
                dims,
                values: (0..frames * dims).map(|i| 1.0 + i as f64).collect(),
            };
            let start = pick % frames;
            let w = aggregate_window(&f, start, n).unwrap();
            prop_assert_eq!(w.len(), n * dims);
            let real = frames.saturating_sub(start).min(n);
            prop_assert!(w[..real * dims].iter().all(|&v| v != 0.0));
            prop_assert!(w[real * dims..].iter().all(|&v| v == 0.0));
        }
    }
}
