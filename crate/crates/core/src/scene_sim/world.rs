use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::generate::{canonical_camera, observe, to_world, unprojectable_pixel, SceneBlueprint};
use super::{
    base_descriptor, descriptor_of, in_image, sub_seed, CameraModel, FeatureClass, FeatureObservation, GenConfig,
    GroundTruth, Role, SceneError,
};
use crate::geometry::ImagePoint;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct SimFeature<T> {
    pub id: u32,
    pub class: FeatureClass,
    pub entity: Option<u32>,
    pub role: Role,
    /// World position with the actuator at rest.
    pub position: [T; 3],
    pub base_descriptor: Vec<T>,
}

/// Live scene for closed-loop runs. The actuator translates every `Object`
/// feature by `q` (world meters); everything else is static.
#[derive(Debug, Clone)]
pub struct SimWorld<T> {
    pub camera: CameraModel<T>,
    pub features: Vec<SimFeature<T>>,
    pub ground_truth: GroundTruth,
    noise_px: T,
    descriptor_jitter: T,
    rng: ChaCha8Rng,
}

impl<T: Real> SimWorld<T> {
    /// Frame-0 layout of the demo `config` would generate, with the object at its
    /// starting pose.
    pub fn from_config(config: &GenConfig) -> Result<Self, SceneError> {
        let blueprint = SceneBlueprint::build(config)?;
        let camera = canonical_camera::<T>();
        let features = blueprint
            .slots_by_id()
            .into_iter()
            .map(|slot| {
                let meta = blueprint.tracked_feature(slot);
                let px = match meta.role {
                    Role::Object => blueprint.object_track[0][slot.1],
                    _ => blueprint.entities[slot.0].pixels[slot.1],
                };
                SimFeature {
                    id: meta.id,
                    class: meta.class,
                    entity: meta.entity,
                    role: meta.role,
                    position: to_world(&camera, px),
                    base_descriptor: base_descriptor(config.seed, meta.id, config.descriptor_dim),
                }
            })
            .collect();
        Ok(Self {
            camera,
            features,
            ground_truth: blueprint.ground_truth(config.kernel_kind),
            noise_px: T::lit(config.noise_px),
            descriptor_jitter: T::lit(config.descriptor_jitter),
            rng: ChaCha8Rng::seed_from_u64(sub_seed(config.layout_seed(), 0x5E27)),
        })
    }

    pub fn with_camera(mut self, camera: CameraModel<T>) -> Self {
        self.camera = camera;
        self
    }

    /// Translational degrees of freedom of the actuator.
    pub fn dof(&self) -> usize {
        3
    }

    pub fn feature(&self, id: u32) -> Option<&SimFeature<T>> {
        self.features.iter().find(|f| f.id == id)
    }

    pub fn position(&self, f: &SimFeature<T>, q: &[T]) -> [T; 3] {
        match f.role {
            Role::Object => [0, 1, 2].map(|k| f.position[k] + q[k]),
            _ => f.position,
        }
    }

    /// Noise-free pixel and camera-frame depth of feature `id` at actuator pose `q`.
    pub fn clean_view(&self, id: u32, q: &[T]) -> Option<(ImagePoint<T>, T)> {
        let f = self.feature(id)?;
        let x = self.position(f, q);
        self.camera.project(&x).ok().map(|p| (p, self.camera.depth(&x)))
    }

    /// Renders one frame at actuator pose `q` with fresh pixel noise and jitter.
    pub fn render(&mut self, q: &[T]) -> Vec<FeatureObservation<T>> {
        let mut out = Vec::with_capacity(self.features.len());
        for f in &self.features {
            let noise = if self.noise_px == T::zero() {
                [T::zero(); 2]
            } else {
                [0, 1].map(|_| self.noise_px * T::lit(self.rng.sample::<f64, _>(StandardNormal)))
            };
            let pixel = observe(&self.camera, &self.position(f, q), noise);
            out.push(FeatureObservation {
                id: f.id,
                visible: pixel.as_ref().is_some_and(in_image),
                pixel: pixel.unwrap_or_else(unprojectable_pixel),
                descriptor: descriptor_of(&f.base_descriptor, self.descriptor_jitter, &mut self.rng),
                feature_class: f.class,
                entity: f.entity,
            });
        }
        out
    }
}
