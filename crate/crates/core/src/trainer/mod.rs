//! Learning which feature association a demonstration is about.
//!
//! Every candidate association is scored per frame by the graph network; a
//! softmax over the scores is the selection distribution. Training maximizes
//! the expected control-signal quality of the selected candidate's error trace,
//! with penalties on score jumps between frames and on diffuse selections.

mod candidates;
mod objective;

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use candidates::{build_candidates, instantiate, node_encoding, Association};
pub use objective::{loss, quality_score, select_out, CandidateInstance, CandidateSet, LossBreakdown};

use crate::geometry::{ErrorSignal, KernelKind};
use crate::neural::{forward, NetParams, NeuralError, DEFAULT_HIDDEN, DEFAULT_LAYERS};
use crate::scalar::Real;
use crate::scene_sim::{DemoSequence, FeatureObservation};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("not enough features for a {kind} candidate: need {needed}")]
    TooFewFeatures { kind: KernelKind, needed: String },
    #[error("no candidate is usable on enough frames")]
    AllInvisible,
    #[error("select-out over zero candidates")]
    NoCandidates,
    #[error("quality needs at least two frames, got {0}")]
    ShortTrace(usize),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {0}")]
    Diverged(usize),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("writing loss trace: {0}")]
    Io(#[from] std::io::Error),
    #[error("writing loss trace: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub alpha_gcr: f64,
    pub alpha_rsw: f64,
    pub lambda_dec: f64,
    pub lambda_smooth: f64,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Demonstrator confidence; used as the softmax temperature.
    pub alpha_conf: f64,
    pub hidden: usize,
    pub layers: usize,
    /// Gradients with a larger global L2 norm are rescaled to this norm before
    /// the update; 0 disables clipping.
    pub max_grad_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha_gcr: 0.1,
            alpha_rsw: 0.1,
            lambda_dec: 1.0,
            lambda_smooth: 1.0,
            lr: 0.05,
            epochs: 300,
            seed: 0,
            alpha_conf: 1.0,
            hidden: DEFAULT_HIDDEN,
            layers: DEFAULT_LAYERS,
            max_grad_norm: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        for (name, v) in [
            ("alpha_gcr", self.alpha_gcr),
            ("alpha_rsw", self.alpha_rsw),
            ("lambda_dec", self.lambda_dec),
            ("lambda_smooth", self.lambda_smooth),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if !(self.alpha_conf > 0.0 && self.alpha_conf <= 1.0) {
            return bad(format!("alpha_conf must lie in (0, 1], got {}", self.alpha_conf));
        }
        if !(self.max_grad_norm >= 0.0 && self.max_grad_norm.is_finite()) {
            return bad(format!("max_grad_norm must be finite and >= 0, got {}", self.max_grad_norm));
        }
        if self.hidden == 0 || self.layers == 0 {
            return bad("hidden and layers must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub gcr_term: f64,
    pub rsw_term: f64,
    pub expected_quality: f64,
}

/// Network weights learned for one kernel kind, with the run that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct TrainedKernel<T> {
    pub kernel_kind: KernelKind,
    pub params: NetParams<T>,
    pub config: TrainConfig,
    /// Objective before every update, plus one final entry after the last.
    pub loss_trace: Vec<EpochRecord>,
}

impl<T: Real> TrainedKernel<T> {
    pub fn initial_loss(&self) -> f64 {
        self.loss_trace.first().map_or(f64::NAN, |r| r.loss)
    }

    pub fn final_loss(&self) -> f64 {
        self.loss_trace.last().map_or(f64::NAN, |r| r.loss)
    }

    /// Loss trace as CSV: `epoch,loss,gcr_term,rsw_term,expected_quality`.
    pub fn write_loss_csv<W: Write>(&self, out: W) -> Result<(), TrainError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "loss", "gcr_term", "rsw_term", "expected_quality"])?;
        for r in &self.loss_trace {
            w.write_record([
                r.epoch.to_string(),
                r.loss.to_string(),
                r.gcr_term.to_string(),
                r.rsw_term.to_string(),
                r.expected_quality.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn record<T: Real>(epoch: usize, l: &LossBreakdown<T>) -> EpochRecord {
    EpochRecord {
        epoch,
        loss: l.loss.to_f64_lossy(),
        gcr_term: l.gcr_term.to_f64_lossy(),
        rsw_term: l.rsw_term.to_f64_lossy(),
        expected_quality: l.expected_quality.to_f64_lossy(),
    }
}

/// Fits the network for `kind` to one demonstration by full-batch gradient descent.
pub fn train<T: Real>(
    demo: &DemoSequence<T>,
    kind: KernelKind,
    config: &TrainConfig,
) -> Result<TrainedKernel<T>, TrainError> {
    config.validate()?;
    let set = CandidateSet::from_frames(&demo.frames, kind, T::lit(config.lambda_dec), T::lit(config.lambda_smooth))?;
    train_on(&set, config)
}

/// Training on an already instantiated candidate set.
pub fn train_on<T: Real>(set: &CandidateSet<T>, config: &TrainConfig) -> Result<TrainedKernel<T>, TrainError> {
    config.validate()?;
    let input_dim = set
        .candidates
        .iter()
        .flat_map(|c| c.graphs.iter().flatten())
        .map(|g| g.input_dim())
        .next()
        .ok_or(TrainError::AllInvisible)?;
    let mut params = NetParams::random(input_dim, config.hidden, config.seed);
    let lr = T::lit(config.lr);
    let mut trace = Vec::with_capacity(config.epochs + 1);
    let mut grads = params.zeros_like();
    for epoch in 0..config.epochs {
        grads.scale(T::zero());
        let l = loss(set, &params, config, Some(&mut grads))?;
        if !l.loss.is_finite() || !grads.is_finite() {
            return Err(TrainError::Diverged(epoch));
        }
        trace.push(record(epoch, &l));
        let g = grads.l2_norm();
        let step = if config.max_grad_norm > 0.0 && g > T::lit(config.max_grad_norm) {
            lr * T::lit(config.max_grad_norm) / g
        } else {
            lr
        };
        params.axpy(-step, &grads);
    }
    let l = loss(set, &params, config, None)?;
    if !l.loss.is_finite() {
        return Err(TrainError::Diverged(config.epochs));
    }
    trace.push(record(config.epochs, &l));
    Ok(TrainedKernel { kernel_kind: set.kind, params, config: config.clone(), loss_trace: trace })
}

/// Selection made on a single frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct Inference<T> {
    pub winner: Association,
    /// Selection probability of every usable candidate, in `associations` order.
    pub weights: Vec<T>,
    pub associations: Vec<Association>,
    /// Geometric error of the winner on this frame: the control signal.
    pub error: ErrorSignal<T>,
    /// Largest weight is below twice the uniform weight.
    pub low_confidence: bool,
}

/// Scores every candidate usable on `frame` and returns the selected association.
pub fn infer<T: Real>(frame: &[FeatureObservation<T>], trained: &TrainedKernel<T>) -> Result<Inference<T>, TrainError> {
    let kind = trained.kernel_kind;
    let all = build_candidates(std::slice::from_ref(&frame.to_vec()), kind)?;
    let temp = T::lit(trained.config.alpha_conf);
    let mut associations = Vec::new();
    let mut errors = Vec::new();
    let mut scores = Vec::new();
    for assoc in all {
        if let Some((graph, error)) = instantiate(&assoc, frame)? {
            scores.push(forward(&graph, &trained.params, trained.config.layers)? / temp);
            associations.push(assoc);
            errors.push(error);
        }
    }
    if scores.is_empty() {
        return Err(TrainError::AllInvisible);
    }
    let (weights, w) = select_out(&scores)?;
    let m = T::from_usize_lossy(weights.len());
    let low_confidence = weights.len() > 1 && weights[w] < T::lit(2.0) / m;
    Ok(Inference {
        winner: associations[w].clone(),
        weights,
        associations,
        error: errors.swap_remove(w),
        low_confidence,
    })
}
