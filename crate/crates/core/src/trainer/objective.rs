use serde::{Deserialize, Serialize};

use super::candidates::{build_candidates, instantiate, Association};
use super::{TrainConfig, TrainError};
use crate::geometry::{ErrorSignal, KernelKind};
use crate::neural::{forward_cached, KernelGraph, NetParams};
use crate::scalar::Real;
use crate::scene_sim::FeatureObservation;

const QUALITY_EPS: f64 = 1e-6;

/// Control-signal quality of an error-norm trace: rewards overall decrease and
/// penalizes frame-to-frame jumps, both relative to the largest norm.
pub fn quality_score<T: Real>(norms: &[T], lambda_dec: T, lambda_smooth: T) -> Result<T, TrainError> {
    if norms.len() < 2 {
        return Err(TrainError::ShortTrace(norms.len()));
    }
    let scale = norms.iter().copied().fold(T::zero(), T::max) + T::lit(QUALITY_EPS);
    let dec = (norms[0] - norms[norms.len() - 1]) / scale;
    let jumps = norms.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0])).sum::<T>();
    let smooth = -jumps / (T::from_usize_lossy(norms.len() - 1) * scale * scale);
    Ok(lambda_dec * dec + lambda_smooth * smooth)
}

/// Softmax of `scores` and the index of its largest entry (lowest index on ties).
pub fn select_out<T: Real>(scores: &[T]) -> Result<(Vec<T>, usize), TrainError> {
    if scores.is_empty() {
        return Err(TrainError::NoCandidates);
    }
    let mut winner = 0;
    for (k, &s) in scores.iter().enumerate() {
        if s > scores[winner] {
            winner = k;
        }
    }
    let top = scores[winner];
    let exp: Vec<T> = scores.iter().map(|&s| (s - top).exp()).collect();
    let total: T = exp.iter().copied().sum();
    Ok((exp.into_iter().map(|e| e / total).collect(), winner))
}

/// A candidate association with its per-frame graphs and errors on a demo.
#[derive(Debug, Clone)]
pub struct CandidateInstance<T> {
    pub association: Association,
    /// `None` on frames where the candidate is unusable.
    pub graphs: Vec<Option<KernelGraph<T>>>,
    pub errors: Vec<Option<ErrorSignal<T>>>,
    /// Quality of the error trace over usable frames; `None` with fewer than two.
    pub quality: Option<T>,
}

impl<T: Real> CandidateInstance<T> {
    pub fn usable(&self, t: usize) -> bool {
        self.graphs[t].is_some()
    }

    pub fn error_norms(&self) -> Vec<T> {
        self.errors.iter().flatten().map(|e| e.norm()).collect()
    }
}

/// Every candidate of one kernel kind instantiated on every frame of a demo.
#[derive(Debug, Clone)]
pub struct CandidateSet<T> {
    pub kind: KernelKind,
    pub n_frames: usize,
    pub candidates: Vec<CandidateInstance<T>>,
}

impl<T: Real> CandidateSet<T> {
    pub fn from_frames(
        frames: &[Vec<FeatureObservation<T>>],
        kind: KernelKind,
        lambda_dec: T,
        lambda_smooth: T,
    ) -> Result<Self, TrainError> {
        let mut candidates = Vec::new();
        for association in build_candidates(frames, kind)? {
            let mut graphs = Vec::with_capacity(frames.len());
            let mut errors = Vec::with_capacity(frames.len());
            for (t, frame) in frames.iter().enumerate() {
                match instantiate(&association, frame)? {
                    Some((g, e)) => {
                        graphs.push(Some(g));
                        errors.push(Some(e.at_frame(t)));
                    }
                    None => {
                        graphs.push(None);
                        errors.push(None);
                    }
                }
            }
            let norms: Vec<T> = errors.iter().flatten().map(|e| e.norm()).collect();
            let quality = quality_score(&norms, lambda_dec, lambda_smooth).ok();
            candidates.push(CandidateInstance { association, graphs, errors, quality });
        }
        if candidates.iter().all(|c| c.quality.is_none()) {
            return Err(TrainError::AllInvisible);
        }
        Ok(Self { kind, n_frames: frames.len(), candidates })
    }

    /// Candidates that take part in training: usable on at least two frames.
    pub fn trainable(&self) -> impl Iterator<Item = &CandidateInstance<T>> {
        self.candidates.iter().filter(|c| c.quality.is_some())
    }
}

/// Value of the training objective and its parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown<T> {
    pub loss: T,
    /// `alpha_gcr` times the summed squared score changes.
    pub gcr_term: T,
    /// `alpha_rsw` times the summed residual selection mass.
    pub rsw_term: T,
    /// Summed expected quality under the per-frame selection distribution.
    pub expected_quality: T,
}

/// Objective on `set`; with `grads` given, also adds its gradient into it.
///
/// `L = -sum_t sum_j g_jt Q_j + alpha_gcr sum_t sum_j (b_j,t+1 - b_jt)^2
///      + alpha_rsw sum_t (1 - sum_j g_jt^2)`, with `g_t = softmax(b_t / alpha_conf)`
/// over the candidates usable on frame `t`.
pub fn loss<T: Real>(
    set: &CandidateSet<T>,
    params: &NetParams<T>,
    config: &TrainConfig,
    grads: Option<&mut NetParams<T>>,
) -> Result<LossBreakdown<T>, TrainError> {
    let layers = config.layers;
    let temp = T::lit(config.alpha_conf);
    let (a_gcr, a_rsw) = (T::lit(config.alpha_gcr), T::lit(config.alpha_rsw));
    let active: Vec<&CandidateInstance<T>> = set.trainable().collect();
    let want_grad = grads.is_some();

    // Scores (and caches for the reverse pass) of every usable (candidate, frame).
    let mut scores: Vec<Vec<Option<T>>> = Vec::with_capacity(active.len());
    let mut caches = Vec::new();
    for c in &active {
        let mut row = Vec::with_capacity(set.n_frames);
        for g in &c.graphs {
            row.push(match g {
                Some(g) => {
                    let (b, cache) = forward_cached(g, params, layers)?;
                    if want_grad {
                        caches.push(cache);
                    }
                    Some(b)
                }
                None => None,
            });
        }
        scores.push(row);
    }

    let mut upstream: Vec<Vec<T>> = scores.iter().map(|r| vec![T::zero(); r.len()]).collect();
    let (mut quality_sum, mut rsw_sum, mut gcr_sum) = (T::zero(), T::zero(), T::zero());
    for t in 0..set.n_frames {
        let members: Vec<usize> = (0..active.len()).filter(|&j| scores[j][t].is_some()).collect();
        if members.is_empty() {
            continue;
        }
        let scaled: Vec<T> = members.iter().map(|&j| scores[j][t].unwrap() / temp).collect();
        let (g, _) = select_out(&scaled)?;
        let q: Vec<T> = members.iter().map(|&j| active[j].quality.unwrap()).collect();
        let mean_q: T = g.iter().zip(&q).map(|(&a, &b)| a * b).sum();
        let purity: T = g.iter().map(|&a| a * a).sum();
        quality_sum = quality_sum + mean_q;
        rsw_sum = rsw_sum + T::one() - purity;
        for (k, &j) in members.iter().enumerate() {
            let d_quality = -g[k] * (q[k] - mean_q);
            let d_rsw = -T::lit(2.0) * g[k] * (g[k] - purity);
            upstream[j][t] = upstream[j][t] + (d_quality + a_rsw * d_rsw) / temp;
        }
    }
    for (j, row) in scores.iter().enumerate() {
        for t in 1..row.len() {
            if let (Some(prev), Some(cur)) = (row[t - 1], row[t]) {
                let d = cur - prev;
                gcr_sum = gcr_sum + d * d;
                let dd = T::lit(2.0) * a_gcr * d;
                upstream[j][t] = upstream[j][t] + dd;
                upstream[j][t - 1] = upstream[j][t - 1] - dd;
            }
        }
    }

    if let Some(grads) = grads {
        let mut caches = caches.into_iter();
        for (j, row) in scores.iter().enumerate() {
            for (t, s) in row.iter().enumerate() {
                if s.is_some() {
                    let cache = caches.next().expect("one cache per usable score");
                    cache.accumulate_backward(params, upstream[j][t], grads);
                }
            }
        }
    }

    let gcr_term = a_gcr * gcr_sum;
    let rsw_term = a_rsw * rsw_sum;
    Ok(LossBreakdown { loss: -quality_sum + gcr_term + rsw_term, gcr_term, rsw_term, expected_quality: quality_sum })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ImagePoint;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn quality_examples() {
        let q = quality_score(&[4.0, 3.0, 2.0, 1.0], 1.0, 0.0).unwrap();
        assert!(close(q, 3.0 / (4.0 + 1e-6), 1e-15));
        assert!(close(q, 0.75, 1e-6));
        assert_eq!(quality_score(&[2.0; 5], 1.0, 1.0).unwrap(), 0.0);
        assert!(close(quality_score(&[1.0, 2.0, 3.0, 4.0], 1.0, 0.0).unwrap(), -0.75, 1e-6));
        assert!(matches!(quality_score(&[1.0], 1.0, 1.0), Err(TrainError::ShortTrace(1))));
        // Smoothness term by hand: jumps of 1 over max 4, three steps.
        let s = quality_score(&[4.0, 3.0, 2.0, 1.0], 0.0, 1.0).unwrap();
        assert!(close(s, -3.0 / (3.0 * (4.0f64 + 1e-6).powi(2)), 1e-15));
    }

    #[test]
    fn select_out_examples() {
        let (g, w) = select_out(&[0.0; 4]).unwrap();
        assert_eq!((g, w), (vec![0.25; 4], 0));
        let (g, w) = select_out(&[0.0, 3f64.ln()]).unwrap();
        assert!(close(g[0], 0.25, 1e-15) && close(g[1], 0.75, 1e-15) && w == 1);
        let (g, w) = select_out(&[1000.0, 1001.0]).unwrap();
        let s = |x: f64| 1.0 / (1.0 + (-x).exp());
        assert!(close(g[0], s(-1.0), 1e-15) && close(g[1], s(1.0), 1e-15) && w == 1);
        assert!(matches!(select_out::<f64>(&[]), Err(TrainError::NoCandidates)));
    }

    fn point(id: u32, u: f64, v: f64, descriptor: f64) -> FeatureObservation<f64> {
        FeatureObservation {
            id,
            pixel: ImagePoint::new(u, v),
            visible: true,
            descriptor: vec![descriptor, 1.0 - descriptor],
            feature_class: Default::default(),
            entity: None,
        }
    }

    fn toy_frames(n: usize) -> Vec<Vec<FeatureObservation<f64>>> {
        (0..n)
            .map(|t| {
                let u = 320.0 + 50.0 * 0.8f64.powi(t as i32);
                vec![point(0, u, 240.0, 0.1), point(1, 320.0, 240.0, 0.5), point(2, 420.0, 250.0, 0.9)]
            })
            .collect()
    }

    #[test]
    fn loss_examples() {
        let set = CandidateSet::from_frames(&toy_frames(6), KernelKind::P2p, 1.0, 1.0).unwrap();
        let zero = NetParams::zeros(4, 4);
        let cfg = TrainConfig { alpha_gcr: 0.0, alpha_rsw: 0.0, ..TrainConfig::default() };
        let l = loss(&set, &zero, &cfg, None).unwrap();
        let mean_q = set.candidates.iter().map(|c| c.quality.unwrap()).sum::<f64>() / 3.0;
        assert!(close(l.loss, -mean_q * 6.0, 1e-12));
        // Constant scores: no consistency penalty; uniform over three: 1 - 3/9 per frame.
        let cfg = TrainConfig::default();
        let l = loss(&set, &zero, &cfg, None).unwrap();
        assert_eq!(l.gcr_term, 0.0);
        assert!(close(l.rsw_term, 0.1 * 6.0 * (1.0 - 3.0 / 9.0), 1e-12));
    }

    #[test]
    fn uniform_four_way_residual_mass() {
        let g = select_out(&[0.3; 4]).unwrap().0;
        assert!(close(1.0 - g.iter().map(|x| x * x).sum::<f64>(), 0.75, 1e-15));
    }

    #[test]
    fn ground_truth_has_best_quality_on_toy() {
        let set = CandidateSet::from_frames(&toy_frames(10), KernelKind::P2p, 1.0, 1.0).unwrap();
        let best = set.candidates.iter().max_by(|a, b| a.quality.partial_cmp(&b.quality).unwrap()).unwrap();
        assert_eq!(best.association.id_set(), vec![0, 1]);
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let mut frames = toy_frames(5);
        frames[2][2].visible = false;
        let set = CandidateSet::from_frames(&frames, KernelKind::P2p, 1.0, 1.0).unwrap();
        let cfg = TrainConfig {
            alpha_gcr: 0.3,
            alpha_rsw: 0.2,
            alpha_conf: 0.7,
            hidden: 4,
            layers: 2,
            ..TrainConfig::default()
        };
        for seed in 0..3 {
            let p = NetParams::<f64>::random_dense(4, 4, seed, 0.7);
            let mut grads = p.zeros_like();
            loss(&set, &p, &cfg, Some(&mut grads)).unwrap();
            let mut probe = p.clone();
            let h = 1e-5;
            for b in 0..17 {
                for k in 0..p.blocks()[b].len() {
                    let orig = p.blocks()[b][k];
                    probe.blocks_mut()[b][k] = orig + h;
                    let up = loss(&set, &probe, &cfg, None).unwrap().loss;
                    probe.blocks_mut()[b][k] = orig - h;
                    let down = loss(&set, &probe, &cfg, None).unwrap().loss;
                    probe.blocks_mut()[b][k] = orig;
                    let numeric = (up - down) / (2.0 * h);
                    let exact = grads.blocks()[b][k];
                    let rel = (numeric - exact).abs() / exact.abs().max(numeric.abs()).max(1e-3);
                    assert!(rel < 1e-4, "block {b}[{k}]: {exact} vs {numeric}");
                }
            }
        }
    }
}
