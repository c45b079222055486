//! Synchronous fill-drain pipeline composition.

use serde::Serialize;

use super::EngineError;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PipelineTiming<T> {
    pub total: T,
    /// Time beyond a perfectly balanced, bubble-free schedule.
    pub bubble: T,
}

/// `total = Σ stage + (m − 1) · max stage`;
/// `bubble = total − m · Σ stage / p`.
pub fn time_pipeline<T: Scalar>(
    stage_times: &[T],
    microbatches: u64,
) -> Result<PipelineTiming<T>, EngineError> {
    if stage_times.is_empty() {
        return Err(EngineError::EmptyPipeline);
    }
    if microbatches == 0 {
        return Err(EngineError::NoMicrobatches);
    }
    let sum = stage_times.iter().fold(T::zero(), |a, &t| a + t);
    let max = stage_times.iter().fold(T::zero(), |a, &t| a.max_of(t));
    let m = T::from_count(microbatches);
    let total = sum + (m - T::one()) * max;
    let work = m * sum / T::from_count(stage_times.len() as u64);
    Ok(PipelineTiming {
        total,
        bubble: total - work,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_stages_eight_microbatches() {
        let t = time_pipeline(&[1.0; 4], 8).unwrap();
        assert_eq!(t.total, 11.0);
        assert_eq!(t.bubble, 3.0);
    }

    #[test]
    fn single_stage_has_no_bubble() {
        let t = time_pipeline(&[2.5], 6).unwrap();
        assert_eq!(t.total, 15.0);
        assert_eq!(t.bubble, 0.0);
    }

    #[test]
    fn one_microbatch_is_the_sum() {
        let t = time_pipeline(&[1.0, 2.0, 3.0], 1).unwrap();
        assert_eq!(t.total, 6.0);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(time_pipeline::<f64>(&[], 3).is_err());
    }
}
