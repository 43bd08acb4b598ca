//! Synthetic world: pinhole camera, expert demonstrations whose ground-truth
//! association yields a geometrically decaying error, wandering distractors,
//! and the environmental perturbations used for robustness testing.
//!
//! Frames are lists of feature observations rather than rasters. Every
//! feature carries a persistent id and an appearance descriptor.

mod camera;
mod descriptor;
mod generate;
mod perturb;
mod world;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use camera::{in_image, CameraModel, MIN_DEPTH};
pub use descriptor::{base_descriptor, descriptor_of};
pub use generate::gen_demo;
pub use perturb::apply_perturbation;
pub use world::{SimFeature, SimWorld};

use crate::geometry::{ImagePoint, KernelKind};
use crate::scalar::Real;

pub const IMAGE_WIDTH: f64 = 640.0;
pub const IMAGE_HEIGHT: f64 = 480.0;
/// Focal length (px) of the canonical demonstration camera.
pub const DEFAULT_FOCAL: f64 = 500.0;
/// Depth (m) of the fronto-parallel working plane.
pub const WORK_PLANE_DEPTH: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("point is behind the camera (depth {0} m)")]
    BehindCamera(f64),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid demo configuration: {0}")]
    InvalidConfig(String),
    #[error("demo carries no 3D scene track; geometric perturbations need one")]
    MissingWorld,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureClass {
    #[default]
    Point,
    SegmentEndpoint,
    ConicPoint,
}

impl FeatureClass {
    fn is_point(&self) -> bool {
        *self == FeatureClass::Point
    }
}

/// Which part of the scene a feature belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Carried by the demonstrator / robot.
    Object,
    /// Static task target.
    Target,
    Distractor,
}

/// One detected feature on one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct FeatureObservation<T> {
    pub id: u32,
    #[serde(flatten)]
    pub pixel: ImagePoint<T>,
    pub visible: bool,
    pub descriptor: Vec<T>,
    #[serde(rename = "class", default, skip_serializing_if = "FeatureClass::is_point")]
    pub feature_class: FeatureClass,
    /// Segment or conic the feature belongs to; `None` for free points.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity: Option<u32>,
}

/// Ground-truth association for the demo's kernel, ordered object entity first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub kind: KernelKind,
    pub ids: Vec<u32>,
}

impl GroundTruth {
    pub fn id_set(&self) -> Vec<u32> {
        let mut ids = self.ids.clone();
        ids.sort_unstable();
        ids
    }
}

/// Static per-feature metadata of a scene track.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackedFeature {
    pub id: u32,
    pub class: FeatureClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity: Option<u32>,
    pub role: Role,
}

/// 3D state behind a demo, kept so perturbations can re-project.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct SceneTrack<T> {
    /// Same order as the observations inside every frame.
    pub features: Vec<TrackedFeature>,
    /// `positions[frame][feature]`, world meters.
    pub positions: Vec<Vec<[T; 3]>>,
    /// Pixel noise added on top of the clean projection.
    pub pixel_noise: Vec<Vec<[T; 2]>>,
    pub occluded: Vec<Vec<bool>>,
}

/// Demonstration generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n_frames: usize,
    pub n_distractors: usize,
    pub kernel_kind: KernelKind,
    /// Per-frame decay factor of the ground-truth error.
    pub approach_rate: f64,
    /// Gaussian pixel noise (std dev, px).
    pub noise_px: f64,
    /// Ground-truth error magnitude on the first frame (px of image motion).
    pub initial_error_px: f64,
    pub descriptor_dim: usize,
    /// Per-frame Gaussian descriptor jitter (std dev).
    pub descriptor_jitter: f64,
    /// Drives feature ids and appearance.
    pub seed: u64,
    /// Drives positions, motion and noise; defaults to `seed`.
    pub layout_seed: Option<u64>,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_frames: 60,
            n_distractors: 8,
            kernel_kind: KernelKind::P2p,
            approach_rate: 0.9,
            noise_px: 0.5,
            initial_error_px: 50.0,
            descriptor_dim: 16,
            descriptor_jitter: 0.05,
            seed: 0,
            layout_seed: None,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: String| Err(SceneError::InvalidConfig(m));
        if self.n_frames < 2 {
            return bad(format!("n_frames must be >= 2, got {}", self.n_frames));
        }
        if !(self.approach_rate > 0.0 && self.approach_rate < 1.0) {
            return bad(format!("approach_rate must lie in (0, 1), got {}", self.approach_rate));
        }
        if !(self.noise_px >= 0.0) {
            return bad(format!("noise_px must be >= 0, got {}", self.noise_px));
        }
        if !(self.initial_error_px > 0.0 && self.initial_error_px <= 150.0) {
            return bad(format!("initial_error_px must lie in (0, 150], got {}", self.initial_error_px));
        }
        if self.descriptor_dim < 2 {
            return bad(format!("descriptor_dim must be >= 2, got {}", self.descriptor_dim));
        }
        if !(self.descriptor_jitter >= 0.0) {
            return bad(format!("descriptor_jitter must be >= 0, got {}", self.descriptor_jitter));
        }
        if self.n_distractors > 40 {
            return bad(format!("at most 40 distractors fit the image, got {}", self.n_distractors));
        }
        Ok(())
    }

    pub fn layout_seed(&self) -> u64 {
        self.layout_seed.unwrap_or(self.seed)
    }
}

/// An ordered sequence of observed frames plus the simulator's ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct DemoSequence<T> {
    pub camera: CameraModel<T>,
    pub seed: u64,
    pub ground_truth: GroundTruth,
    pub frames: Vec<Vec<FeatureObservation<T>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<GenConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub world: Option<SceneTrack<T>>,
}

impl<T: Real> DemoSequence<T> {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    /// Whether every ground-truth feature is visible on frame `t`.
    pub fn ground_truth_visible(&self, t: usize) -> bool {
        self.ground_truth.ids.iter().all(|id| self.frames[t].iter().any(|o| o.id == *id && o.visible))
    }

    pub fn observation(&self, t: usize, id: u32) -> Option<&FeatureObservation<T>> {
        self.frames[t].iter().find(|o| o.id == id)
    }

    /// Keeps frames `range` only (used to carve evaluation windows).
    pub fn slice_frames(&self, range: std::ops::Range<usize>) -> Self {
        let mut out = self.clone();
        out.frames = self.frames[range.clone()].to_vec();
        if let Some(w) = out.world.as_mut() {
            w.positions = w.positions[range.clone()].to_vec();
            w.pixel_noise = w.pixel_noise[range.clone()].to_vec();
            w.occluded = w.occluded[range].to_vec();
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    RandomTarget,
    ChangeCamera,
    Occlusion,
    OutsideFov,
    ChangeIllumination,
}

impl PerturbationKind {
    pub const ALL: [PerturbationKind; 5] = [
        PerturbationKind::RandomTarget,
        PerturbationKind::ChangeCamera,
        PerturbationKind::Occlusion,
        PerturbationKind::OutsideFov,
        PerturbationKind::ChangeIllumination,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PerturbationKind::RandomTarget => "random_target",
            PerturbationKind::ChangeCamera => "change_camera",
            PerturbationKind::Occlusion => "occlusion",
            PerturbationKind::OutsideFov => "outside_fov",
            PerturbationKind::ChangeIllumination => "change_illumination",
        }
    }

    /// Magnitude used when none is given.
    ///
    /// random_target: translation radius (m); change_camera: max rotation (rad),
    /// translation radius is half of it in meters; occlusion and outside_fov:
    /// fraction of frames (and, for occlusion, of ids) affected;
    /// change_illumination: descriptor noise std dev.
    pub fn default_magnitude(self) -> f64 {
        match self {
            PerturbationKind::RandomTarget => 0.1,
            PerturbationKind::ChangeCamera => 0.1,
            PerturbationKind::Occlusion => 0.2,
            PerturbationKind::OutsideFov => 0.2,
            PerturbationKind::ChangeIllumination => 0.1,
        }
    }
}

impl std::fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PerturbationKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s.replace('-', "_"))
            .ok_or_else(|| format!("unknown perturbation `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSetting {
    pub kind: PerturbationKind,
    pub magnitude: f64,
}

impl PerturbationSetting {
    pub fn new(kind: PerturbationKind, magnitude: f64) -> Self {
        Self { kind, magnitude }
    }

    pub fn with_default_magnitude(kind: PerturbationKind) -> Self {
        Self::new(kind, kind.default_magnitude())
    }
}

/// Mixes a tag into a seed (splitmix64 finalizer) for independent sub-streams.
pub fn sub_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
