//! Closing the loop on a learned error signal.
//!
//! Calibrated mode (IBVS) maps the image error to actuator motion through the
//! point interaction matrix with known intrinsics and depth. Uncalibrated mode
//! (UVS) probes each degree of freedom once, then refines the error Jacobian
//! with rank-one secant updates.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::KernelKind;
use crate::linalg::{LinalgError, Matrix};
use crate::scalar::{norm, Real};
use crate::scene_sim::{FeatureObservation, Role, SimWorld};
use crate::trainer::{infer, instantiate, Association, TrainError, TrainedKernel};

#[derive(Debug, Error)]
pub enum ServoError {
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("control system is singular; use a positive damping")]
    Singular,
    #[error("secant update needs a nonzero step")]
    ZeroStep,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("kernel selection is not confident (top weight below twice uniform)")]
    LowConfidence,
    #[error("error norm {norm} exceeds 10x the initial {initial}")]
    Diverged { norm: f64, initial: f64 },
    #[error("{0} errors have no analytic interaction matrix; use uvs mode")]
    NoInteractionModel(KernelKind),
    #[error("feature {0} is not visible")]
    FeatureLost(u32),
    #[error("invalid servo configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Inference(#[from] TrainError),
    #[error("writing trajectory: {0}")]
    Io(#[from] std::io::Error),
    #[error("writing trajectory: {0}")]
    Csv(#[from] csv::Error),
}

impl From<LinalgError> for ServoError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::Singular => ServoError::Singular,
            LinalgError::Shape(s) => ServoError::Dimension(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServoMode {
    Ibvs,
    Uvs,
}

impl ServoMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ServoMode::Ibvs => "ibvs",
            ServoMode::Uvs => "uvs",
        }
    }
}

impl std::fmt::Display for ServoMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ServoMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ibvs" => Ok(ServoMode::Ibvs),
            "uvs" => Ok(ServoMode::Uvs),
            _ => Err(format!("unknown servo mode `{s}` (expected ibvs or uvs)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServoConfig {
    pub gain: f64,
    /// Convergence threshold on the error norm (px for image errors).
    pub tol: f64,
    pub max_steps: usize,
    pub mode: ServoMode,
    /// Damping of the pseudo-inverse.
    pub damping: f64,
    /// Size of the exploratory move per degree of freedom in uvs mode.
    pub probe_step: f64,
    /// Broyden updates are skipped while the predicted error change `|J dq|`
    /// is below this, so sensor noise does not dominate the secant.
    pub min_update: f64,
}

impl Default for ServoConfig {
    fn default() -> Self {
        Self {
            gain: 0.1,
            tol: 1.0,
            max_steps: 200,
            mode: ServoMode::Ibvs,
            damping: 1e-9,
            probe_step: 0.005,
            min_update: 0.5,
        }
    }
}

impl ServoConfig {
    pub fn validate(&self) -> Result<(), ServoError> {
        let bad = |m: String| Err(ServoError::InvalidConfig(m));
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            return bad(format!("gain must be > 0, got {}", self.gain));
        }
        if !(self.tol > 0.0) {
            return bad(format!("tol must be > 0, got {}", self.tol));
        }
        if !(self.damping >= 0.0 && self.damping.is_finite()) {
            return bad(format!("damping must be >= 0, got {}", self.damping));
        }
        if !(self.probe_step > 0.0 && self.probe_step.is_finite()) {
            return bad(format!("probe_step must be > 0, got {}", self.probe_step));
        }
        if !(self.min_update >= 0.0 && self.min_update.is_finite()) {
            return bad(format!("min_update must be >= 0, got {}", self.min_update));
        }
        Ok(())
    }
}

/// Interaction matrix of a point at normalized image coordinates `(x, y)` and
/// depth `z`, relating camera velocity `(v, w)` to image velocity.
pub fn interaction_matrix_point<T: Real>(x: T, y: T, z: T) -> Result<Matrix<T>, ServoError> {
    if !(z > T::zero()) {
        return Err(ServoError::NonPositiveDepth(z.to_f64_lossy()));
    }
    let (o, l) = (T::zero(), T::one());
    let iz = l / z;
    Ok(Matrix::from_rows(&[vec![-iz, o, x * iz, x * y, -(l + x * x), y], vec![o, -iz, y * iz, l + y * y, -x * y, -x]])?)
}

/// `Δq = -gain · Lᵀ (L Lᵀ + damping·I)⁻¹ e`.
pub fn control_step<T: Real>(error: &[T], jacobian: &Matrix<T>, gain: T, damping: T) -> Result<Vec<T>, ServoError> {
    if jacobian.rows() != error.len() {
        return Err(ServoError::Dimension(format!("{} error entries, {} Jacobian rows", error.len(), jacobian.rows())));
    }
    let mut gram = jacobian.mul(&jacobian.transpose())?;
    for i in 0..gram.rows() {
        gram[(i, i)] = gram[(i, i)] + damping;
    }
    let y = gram.solve(&Matrix::from_vec(error.len(), 1, error.to_vec())?)?;
    let dq = jacobian.transpose().mul_vec(y.as_slice())?;
    Ok(dq.into_iter().map(|v| -gain * v).collect())
}

/// Rank-one secant update: `J' = J + (Δe - JΔq) Δqᵀ / (Δqᵀ Δq)`.
pub fn broyden_update<T: Real>(jacobian: &Matrix<T>, dq: &[T], de: &[T]) -> Result<Matrix<T>, ServoError> {
    if jacobian.cols() != dq.len() || jacobian.rows() != de.len() {
        return Err(ServoError::Dimension(format!(
            "{}x{} Jacobian with step {} and change {}",
            jacobian.rows(),
            jacobian.cols(),
            dq.len(),
            de.len()
        )));
    }
    let sq: T = dq.iter().map(|&v| v * v).sum();
    if !(sq.sqrt() > T::lit(1e-12)) {
        return Err(ServoError::ZeroStep);
    }
    let predicted = jacobian.mul_vec(dq)?;
    let mut out = jacobian.clone();
    for i in 0..jacobian.rows() {
        let r = (de[i] - predicted[i]) / sq;
        for j in 0..jacobian.cols() {
            out[(i, j)] = out[(i, j)] + r * dq[j];
        }
    }
    Ok(out)
}

/// Something the loop can move and measure.
pub trait Plant<T: Real> {
    fn dof(&self) -> usize;
    /// Error vector measured at actuator pose `q`.
    fn measure(&mut self, q: &[T]) -> Result<Vec<T>, ServoError>;
    /// Model Jacobian `∂e/∂q` at `q`, used by calibrated mode.
    fn model_jacobian(&mut self, q: &[T]) -> Result<Matrix<T>, ServoError>;
}

/// `e(q) = A q - c`.
#[derive(Debug, Clone)]
pub struct LinearPlant<T> {
    pub a: Matrix<T>,
    pub c: Vec<T>,
}

impl<T: Real> Plant<T> for LinearPlant<T> {
    fn dof(&self) -> usize {
        self.a.cols()
    }

    fn measure(&mut self, q: &[T]) -> Result<Vec<T>, ServoError> {
        Ok(self.a.mul_vec(q)?.into_iter().zip(&self.c).map(|(a, &c)| a - c).collect())
    }

    fn model_jacobian(&mut self, _q: &[T]) -> Result<Matrix<T>, ServoError> {
        Ok(self.a.clone())
    }
}

/// How a scene plant picks the association whose error it reports.
#[derive(Debug, Clone)]
pub enum Selector<'a, T> {
    /// Run the learned kernel on every rendered frame.
    Kernel(&'a TrainedKernel<T>),
    /// Always use this association (e.g. the simulator's ground truth).
    Fixed(Association),
}

/// Simulated scene: every measurement renders a frame, selects an
/// association, and returns its geometric error.
pub struct ScenePlant<'a, T> {
    pub world: SimWorld<T>,
    pub selector: Selector<'a, T>,
    /// Association selected on the latest frame.
    pub last_winner: Option<Association>,
    last_frame: Vec<FeatureObservation<T>>,
}

impl<'a, T: Real> ScenePlant<'a, T> {
    pub fn new(world: SimWorld<T>, selector: Selector<'a, T>) -> Self {
        Self { world, selector, last_winner: None, last_frame: Vec::new() }
    }

    /// Plant servoing the world's own ground-truth association.
    pub fn ground_truth(world: SimWorld<T>) -> Self {
        let gt = &world.ground_truth;
        let entities = match gt.kind {
            KernelKind::P2p => vec![vec![gt.ids[0]], vec![gt.ids[1]]],
            KernelKind::P2l | KernelKind::P2c => vec![vec![gt.ids[0]], gt.ids[1..].to_vec()],
            KernelKind::L2l => vec![gt.ids[..2].to_vec(), gt.ids[2..].to_vec()],
        };
        let assoc = Association { kind: gt.kind, entities };
        Self::new(world, Selector::Fixed(assoc))
    }

    /// Pixel velocity of feature `id` per unit actuator motion.
    fn feature_jacobian(&self, id: u32, q: &[T]) -> Result<Matrix<T>, ServoError> {
        let feature = self.world.feature(id).ok_or(ServoError::FeatureLost(id))?;
        if feature.role != Role::Object {
            return Ok(Matrix::zeros(2, 3));
        }
        let obs = self.last_frame.iter().find(|o| o.id == id).ok_or(ServoError::FeatureLost(id))?;
        let (_, depth) = self.world.clean_view(id, q).ok_or(ServoError::FeatureLost(id))?;
        let cam = &self.world.camera;
        let (x, y) = cam.normalized(&obs.pixel);
        let l = interaction_matrix_point(x, y, depth)?;
        // A world translation of the point is a camera translation of -R·dq.
        let mut out = Matrix::zeros(2, 3);
        for r in 0..2 {
            for c in 0..3 {
                let v: T = (0..3).map(|k| l[(r, k)] * cam.rotation[k][c]).sum();
                out[(r, c)] = -cam.f * v;
            }
        }
        Ok(out)
    }
}

impl<T: Real> Plant<T> for ScenePlant<'_, T> {
    fn dof(&self) -> usize {
        self.world.dof()
    }

    fn measure(&mut self, q: &[T]) -> Result<Vec<T>, ServoError> {
        let frame = self.world.render(q);
        let (winner, error) = match &self.selector {
            Selector::Kernel(kernel) => {
                let inf = infer(&frame, kernel)?;
                if inf.low_confidence {
                    return Err(ServoError::LowConfidence);
                }
                (inf.winner, inf.error)
            }
            Selector::Fixed(assoc) => match instantiate(assoc, &frame)? {
                Some((_, error)) => (assoc.clone(), error),
                None => return Err(ServoError::FeatureLost(assoc.ids()[0])),
            },
        };
        self.last_winner = Some(winner);
        self.last_frame = frame;
        Ok(error.values)
    }

    fn model_jacobian(&mut self, q: &[T]) -> Result<Matrix<T>, ServoError> {
        let winner = self.last_winner.clone().ok_or_else(|| ServoError::Dimension("no measurement yet".into()))?;
        if winner.kind != KernelKind::P2p {
            return Err(ServoError::NoInteractionModel(winner.kind));
        }
        let a = self.feature_jacobian(winner.entities[0][0], q)?;
        let b = self.feature_jacobian(winner.entities[1][0], q)?;
        Ok(a.sub(&b)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct ServoSample<T> {
    pub step: usize,
    /// Actuator pose after this step.
    pub q: Vec<T>,
    /// Error measured at `q`.
    pub error: Vec<T>,
    pub error_norm: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct Trajectory<T> {
    pub mode: ServoMode,
    pub initial_q: Vec<T>,
    pub initial_error_norm: T,
    /// One entry per control step; empty when the start already meets `tol`.
    pub steps: Vec<ServoSample<T>>,
    pub converged: bool,
    /// Exploratory moves spent estimating the initial Jacobian (uvs).
    pub probes: usize,
}

impl<T: Real> Trajectory<T> {
    pub fn final_error_norm(&self) -> T {
        self.steps.last().map_or(self.initial_error_norm, |s| s.error_norm)
    }

    /// Error norms including the initial one.
    pub fn error_norms(&self) -> Vec<T> {
        std::iter::once(self.initial_error_norm).chain(self.steps.iter().map(|s| s.error_norm)).collect()
    }

    /// CSV `step,q0..q{n-1},error_norm,mode`, with the starting pose as step 0.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ServoError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["step".to_string()];
        header.extend((0..self.initial_q.len()).map(|k| format!("q{k}")));
        header.extend(["error_norm".to_string(), "mode".to_string()]);
        w.write_record(&header)?;
        let row = |step: usize, q: &[T], n: T| {
            let mut r = vec![step.to_string()];
            r.extend(q.iter().map(|v| v.to_string()));
            r.push(n.to_string());
            r.push(self.mode.to_string());
            r
        };
        if !self.steps.is_empty() {
            w.write_record(row(0, &self.initial_q, self.initial_error_norm))?;
        }
        for s in &self.steps {
            w.write_record(row(s.step, &s.q, s.error_norm))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Exploratory finite-difference Jacobian at `q`, one probe per degree of freedom.
pub fn probe_jacobian<T: Real, P: Plant<T>>(plant: &mut P, q: &[T], e: &[T], step: T) -> Result<Matrix<T>, ServoError> {
    let mut j = Matrix::zeros(e.len(), q.len());
    for k in 0..q.len() {
        let mut probe = q.to_vec();
        probe[k] = probe[k] + step;
        let ep = plant.measure(&probe)?;
        if ep.len() != e.len() {
            return Err(ServoError::Dimension("error size changed while probing".into()));
        }
        let col: Vec<T> = ep.iter().zip(e).map(|(&a, &b)| (a - b) / step).collect();
        j.set_col(k, &col);
    }
    // Leave the plant observed at `q` again.
    plant.measure(q)?;
    Ok(j)
}

/// Runs the control loop from `q0` until `‖e‖ < tol`, `max_steps`, or an error.
/// In uvs mode `initial_jacobian` skips the exploratory probes.
pub fn closed_loop<T: Real, P: Plant<T>>(
    plant: &mut P,
    q0: &[T],
    config: &ServoConfig,
    initial_jacobian: Option<Matrix<T>>,
) -> Result<Trajectory<T>, ServoError> {
    config.validate()?;
    if q0.len() != plant.dof() {
        return Err(ServoError::Dimension(format!(
            "start pose has {} entries, plant has {} dof",
            q0.len(),
            plant.dof()
        )));
    }
    let (gain, damping, tol) = (T::lit(config.gain), T::lit(config.damping), T::lit(config.tol));
    let mut q = q0.to_vec();
    let mut e = plant.measure(&q)?;
    let initial = norm(&e);
    let mut traj = Trajectory {
        mode: config.mode,
        initial_q: q.clone(),
        initial_error_norm: initial,
        steps: Vec::new(),
        converged: initial < tol,
        probes: 0,
    };
    if traj.converged || config.max_steps == 0 {
        return Ok(traj);
    }
    let mut jacobian = match (config.mode, initial_jacobian) {
        (ServoMode::Uvs, Some(j)) => Some(j),
        (ServoMode::Uvs, None) => {
            traj.probes = q.len();
            Some(probe_jacobian(plant, &q, &e, T::lit(config.probe_step))?)
        }
        (ServoMode::Ibvs, _) => None,
    };
    for step in 1..=config.max_steps {
        let model = match &jacobian {
            Some(j) => j.clone(),
            None => plant.model_jacobian(&q)?,
        };
        let dq = control_step(&e, &model, gain, damping)?;
        q.iter_mut().zip(&dq).for_each(|(a, &d)| *a = *a + d);
        let next = plant.measure(&q)?;
        if let Some(j) = jacobian.as_mut() {
            if norm(&dq) > T::lit(1e-12) && norm(&j.mul_vec(&dq)?) >= T::lit(config.min_update) {
                let de: Vec<T> = next.iter().zip(&e).map(|(&a, &b)| a - b).collect();
                *j = broyden_update(j, &dq, &de)?;
            }
        }
        e = next;
        let n = norm(&e);
        traj.steps.push(ServoSample { step, q: q.clone(), error: e.clone(), error_norm: n });
        if !n.is_finite() || n > T::lit(10.0) * initial {
            return Err(ServoError::Diverged { norm: n.to_f64_lossy(), initial: initial.to_f64_lossy() });
        }
        if n < tol {
            traj.converged = true;
            break;
        }
    }
    Ok(traj)
}
