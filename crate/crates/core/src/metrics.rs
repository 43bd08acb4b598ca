//! Inference accuracy and selection consistency.
//!
//! Consistency is the lag-2 autocorrelation of the selected error norm: a
//! kernel that keeps picking the same association yields a smooth trace.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;
use crate::scene_sim::DemoSequence;
use crate::trainer::{infer, TrainError, TrainedKernel};

/// Lag used for the consistency metric.
pub const CONSISTENCY_LAG: usize = 2;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no frames to score")]
    Empty,
    #[error("autocorrelation at lag {lag} needs more than {lag} samples, got {len}")]
    TooShort { len: usize, lag: usize },
    #[error("lag must be >= 1")]
    ZeroLag,
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("writing report: {0}")]
    Io(#[from] std::io::Error),
    #[error("writing report: {0}")]
    Csv(#[from] csv::Error),
}

/// Percentage of frames whose selected id-set equals `truth` (order ignored).
/// `None` marks a frame without a selection.
pub fn accuracy(winners: &[Option<Vec<u32>>], truth: &[u32]) -> Result<f64, MetricsError> {
    if winners.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut truth = truth.to_vec();
    truth.sort_unstable();
    let hits = winners
        .iter()
        .filter(|w| {
            w.as_ref().is_some_and(|w| {
                let mut w = w.clone();
                w.sort_unstable();
                w == truth
            })
        })
        .count();
    Ok(hits as f64 * 100.0 / winners.len() as f64)
}

/// Sample autocorrelation at `lag` with the full-series mean and the biased
/// (full-length) denominator. `None` for a zero-variance series.
pub fn autocorr<T: Real>(series: &[T], lag: usize) -> Result<Option<T>, MetricsError> {
    if lag == 0 {
        return Err(MetricsError::ZeroLag);
    }
    if series.len() <= lag {
        return Err(MetricsError::TooShort { len: series.len(), lag });
    }
    let mean = series.iter().copied().sum::<T>() / T::from_usize_lossy(series.len());
    let dev: Vec<T> = series.iter().map(|&x| x - mean).collect();
    let var: T = dev.iter().map(|&d| d * d).sum();
    if var == T::zero() {
        return Ok(None);
    }
    let cov: T = dev.iter().zip(&dev[lag..]).map(|(&a, &b)| a * b).sum();
    Ok(Some(cov / var))
}

/// Lag-2 autocorrelation of the selected error norms; a constant trace counts
/// as perfectly consistent (1).
pub fn con_acc<T: Real>(error_norms: &[T]) -> Result<T, MetricsError> {
    if error_norms.len() < 3 {
        return Err(MetricsError::TooShort { len: error_norms.len(), lag: CONSISTENCY_LAG });
    }
    Ok(autocorr(error_norms, CONSISTENCY_LAG)?.unwrap_or_else(T::one))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct FrameResult<T> {
    pub frame: usize,
    /// Selected ids, `None` when no candidate was usable.
    pub winner_ids: Option<Vec<u32>>,
    pub error_norm: Option<T>,
    pub correct: bool,
    pub low_confidence: bool,
    /// Every ground-truth feature was visible on this frame.
    pub task_visible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct EvalReport<T> {
    /// Percent of all frames with the ground-truth selection.
    pub acc: f64,
    /// Percent over frames where the ground truth is visible.
    pub acc_visible: Option<f64>,
    /// `None` when fewer than three frames produced a selection.
    pub con_acc: Option<T>,
    pub n_frames: usize,
    pub frames: Vec<FrameResult<T>>,
}

impl<T: Real> EvalReport<T> {
    pub fn per_frame_winners(&self) -> Vec<Option<Vec<u32>>> {
        self.frames.iter().map(|f| f.winner_ids.clone()).collect()
    }

    /// Selected error norms over frames with a selection.
    pub fn error_norms(&self) -> Vec<T> {
        self.frames.iter().filter_map(|f| f.error_norm).collect()
    }

    /// Per-frame CSV: `frame,winner_ids,error_norm,correct`, ids joined by `;`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), MetricsError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["frame", "winner_ids", "error_norm", "correct"])?;
        for f in &self.frames {
            let ids = f
                .winner_ids
                .as_ref()
                .map(|ids| ids.iter().map(u32::to_string).collect::<Vec<_>>().join(";"))
                .unwrap_or_default();
            let norm = f.error_norm.map(|n| n.to_string()).unwrap_or_default();
            w.write_record([f.frame.to_string(), ids, norm, f.correct.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the trained kernel on every frame of `demo` and scores it against the
/// demo's ground truth.
pub fn evaluate<T: Real>(demo: &DemoSequence<T>, kernel: &TrainedKernel<T>) -> Result<EvalReport<T>, MetricsError> {
    let truth = demo.ground_truth.id_set();
    let mut frames = Vec::with_capacity(demo.n_frames());
    for (t, frame) in demo.frames.iter().enumerate() {
        let task_visible = demo.ground_truth_visible(t);
        let result = match infer(frame, kernel) {
            Ok(inf) => {
                let ids = inf.winner.id_set();
                FrameResult {
                    frame: t,
                    correct: ids == truth,
                    winner_ids: Some(ids),
                    error_norm: Some(inf.error.norm()),
                    low_confidence: inf.low_confidence,
                    task_visible,
                }
            }
            Err(TrainError::AllInvisible) => FrameResult {
                frame: t,
                winner_ids: None,
                error_norm: None,
                correct: false,
                low_confidence: true,
                task_visible,
            },
            Err(e) => return Err(e.into()),
        };
        frames.push(result);
    }
    let winners: Vec<Option<Vec<u32>>> = frames.iter().map(|f| f.winner_ids.clone()).collect();
    let acc = accuracy(&winners, &truth)?;
    let visible: Vec<Option<Vec<u32>>> =
        frames.iter().filter(|f| f.task_visible).map(|f| f.winner_ids.clone()).collect();
    let acc_visible = accuracy(&visible, &truth).ok();
    let norms: Vec<T> = frames.iter().filter_map(|f| f.error_norm).collect();
    let con_acc = con_acc(&norms).ok();
    Ok(EvalReport { acc, acc_visible, con_acc, n_frames: frames.len(), frames })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn accuracy_examples() {
        let right = Some(vec![4, 2]);
        let wrong = Some(vec![2, 3]);
        let mut w = vec![right.clone(); 9];
        w.push(wrong.clone());
        assert_eq!(accuracy(&w, &[2, 4]).unwrap(), 90.0);
        assert_eq!(accuracy(&vec![right; 7], &[2, 4]).unwrap(), 100.0);
        assert_eq!(accuracy(&[wrong, None, None, None, None], &[2, 4]).unwrap(), 0.0);
        assert!(accuracy(&[], &[1, 2]).is_err());
    }

    #[test]
    fn autocorr_examples() {
        let r: f64 = autocorr(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 2).unwrap().unwrap();
        assert!((r - 1.0 / 17.5).abs() < 1e-12);
        let alt: Vec<f64> = (0..20).map(|t| if t % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!(autocorr(&alt, 2).unwrap().unwrap() > 0.0);
        assert_eq!(autocorr(&[3.0; 8], 2).unwrap(), None);
        assert!(autocorr(&[1.0, 2.0], 2).is_err());
        assert!(autocorr(&[1.0, 2.0, 3.0], 0).is_err());
    }

    #[test]
    fn con_acc_examples() {
        assert_eq!(con_acc(&[7.0; 10]).unwrap(), 1.0);
        assert!(con_acc(&[1.0, 2.0]).is_err());
        // Independent evaluation of the defining sums on 50 * 0.9^t, t = 0..59.
        let decay: Vec<f64> = (0..60).map(|t| 50.0 * 0.9f64.powi(t)).collect();
        assert!((con_acc(&decay).unwrap() - 0.794_983_9).abs() < 1e-6);
    }

    #[test]
    fn white_noise_is_inconsistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let trials = 2000;
        let mut small = 0;
        for _ in 0..trials {
            let x: Vec<f64> = (0..60).map(|_| StandardNormal.sample(&mut rng)).collect();
            if con_acc(&x).unwrap().abs() < 0.3 {
                small += 1;
            }
        }
        assert!(small as f64 >= 0.95 * trials as f64, "{small}/{trials}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]
        #[test]
        fn autocorr_invariances(x in prop::collection::vec(-100.0f64..100.0, 4..50), shift in -1e3f64..1e3, scale in 0.01f64..100.0, neg in any::<bool>(), lag in 1usize..4) {
            prop_assume!(x.len() > lag);
            let Some(r) = autocorr(&x, lag).unwrap() else { return Ok(()) };
            prop_assert!(r.abs() <= 1.0 + 1e-12);
            let a = if neg { -scale } else { scale };
            let shifted: Vec<f64> = x.iter().map(|v| v + shift).collect();
            let scaled: Vec<f64> = x.iter().map(|v| a * v).collect();
            prop_assert!((autocorr(&shifted, lag).unwrap().unwrap() - r).abs() < 1e-12);
            prop_assert!((autocorr(&scaled, lag).unwrap().unwrap() - r).abs() < 1e-12);
        }
    }
}
