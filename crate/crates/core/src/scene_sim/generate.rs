use std::f64::consts::{PI, TAU};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{
    base_descriptor, descriptor_of, in_image, sub_seed, CameraModel, DemoSequence, FeatureClass, FeatureObservation,
    GenConfig, GroundTruth, Role, SceneError, SceneTrack, TrackedFeature, DEFAULT_FOCAL, IMAGE_HEIGHT, IMAGE_WIDTH,
    WORK_PLANE_DEPTH,
};
use crate::geometry::{ImagePoint, KernelKind};
use crate::scalar::Real;

const SEGMENT_HALF_LEN: f64 = 60.0;
const CONIC_RADIUS: f64 = 60.0;
const WALK_STEP_MAX: f64 = 2.0;
const WALK_MARGIN: f64 = 20.0;
const MIN_SEPARATION: f64 = 20.0;

type Px = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum EntityShape {
    Point,
    Segment,
    Conic,
}

impl EntityShape {
    fn feature_class(self) -> FeatureClass {
        match self {
            EntityShape::Point => FeatureClass::Point,
            EntityShape::Segment => FeatureClass::SegmentEndpoint,
            EntityShape::Conic => FeatureClass::ConicPoint,
        }
    }
}

/// One geometric entity of the canonical (frame-0) layout, in pixels.
#[derive(Debug, Clone)]
pub(crate) struct EntityLayout {
    pub shape: EntityShape,
    pub role: Role,
    pub pixels: Vec<Px>,
}

/// Feature slots of a generated scene with ids and appearance resolved.
#[derive(Debug, Clone)]
pub(crate) struct SceneBlueprint {
    pub entities: Vec<EntityLayout>,
    /// Pixel track of the object entity members, `object_track[frame][member]`.
    pub object_track: Vec<Vec<Px>>,
    /// `feature_ids[entity][member]`.
    pub feature_ids: Vec<Vec<u32>>,
    /// Group id of every segment / conic entity.
    pub entity_ids: Vec<Option<u32>>,
}

impl SceneBlueprint {
    pub fn build(config: &GenConfig) -> Result<Self, SceneError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(config.layout_seed(), 1));
        let (object, target, object_track) = task_entities(config, &mut rng);
        let mut entities = vec![object, target];
        for k in 0..config.n_distractors {
            let shape = distractor_shape(config.kernel_kind, k);
            let occupied: Vec<Px> = entities
                .iter()
                .flat_map(|e| e.pixels.iter().copied())
                .chain(object_track.last().into_iter().flatten().copied())
                .collect();
            entities.push(place_distractor(shape, &occupied, &mut rng));
        }

        let mut appearance = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, 2));
        let n_features: usize = entities.iter().map(|e| e.pixels.len()).sum();
        let mut ids: Vec<u32> = (0..n_features as u32).collect();
        ids.shuffle(&mut appearance);
        let n_groups = entities.iter().filter(|e| e.shape != EntityShape::Point).count();
        let mut group_ids: Vec<u32> = (0..n_groups as u32).collect();
        group_ids.shuffle(&mut appearance);

        let mut next = ids.into_iter();
        let mut next_group = group_ids.into_iter();
        let feature_ids = entities.iter().map(|e| e.pixels.iter().map(|_| next.next().unwrap()).collect()).collect();
        let entity_ids =
            entities.iter().map(|e| if e.shape == EntityShape::Point { None } else { next_group.next() }).collect();
        Ok(Self { entities, object_track, feature_ids, entity_ids })
    }

    pub fn ground_truth(&self, kind: KernelKind) -> GroundTruth {
        GroundTruth { kind, ids: self.feature_ids[0].iter().chain(&self.feature_ids[1]).copied().collect() }
    }

    /// `(entity, member)` slots in ascending feature-id order.
    pub fn slots_by_id(&self) -> Vec<(usize, usize)> {
        let mut slots: Vec<(usize, usize)> =
            self.entities.iter().enumerate().flat_map(|(e, ent)| (0..ent.pixels.len()).map(move |m| (e, m))).collect();
        slots.sort_by_key(|&(e, m)| self.feature_ids[e][m]);
        slots
    }

    pub fn tracked_feature(&self, (e, m): (usize, usize)) -> TrackedFeature {
        TrackedFeature {
            id: self.feature_ids[e][m],
            class: self.entities[e].shape.feature_class(),
            entity: self.entity_ids[e],
            role: self.entities[e].role,
        }
    }
}

pub(crate) fn canonical_camera<T: Real>() -> CameraModel<T> {
    CameraModel::new(T::lit(DEFAULT_FOCAL), T::lit(IMAGE_WIDTH / 2.0), T::lit(IMAGE_HEIGHT / 2.0))
        .expect("canonical camera is valid")
}

pub(crate) fn to_world<T: Real>(camera: &CameraModel<T>, px: Px) -> [T; 3] {
    camera.back_project(&ImagePoint::new(T::lit(px[0]), T::lit(px[1])), T::lit(WORK_PLANE_DEPTH))
}

/// Pixel observation of a world point plus noise; `None` when it does not project.
pub(crate) fn observe<T: Real>(camera: &CameraModel<T>, x: &[T; 3], noise: [T; 2]) -> Option<ImagePoint<T>> {
    camera.project(x).ok().map(|p| ImagePoint::new(p.u + noise[0], p.v + noise[1]))
}

pub(crate) fn unprojectable_pixel<T: Real>() -> ImagePoint<T> {
    ImagePoint::new(-T::one(), -T::one())
}

/// Generates one expert demonstration.
///
/// The object entity approaches its target so the ground-truth error shrinks by
/// `approach_rate` per frame; distractor entities perform bounded random walks
/// with steps of at most 2 px.
pub fn gen_demo<T: Real>(config: &GenConfig) -> Result<DemoSequence<T>, SceneError> {
    let blueprint = SceneBlueprint::build(config)?;
    let camera = canonical_camera::<T>();
    let n = config.n_frames;

    let mut walk_rng = ChaCha8Rng::seed_from_u64(sub_seed(config.layout_seed(), 3));
    let mut offsets: Vec<Px> = vec![[0.0, 0.0]; blueprint.entities.len()];
    let mut entity_pixels: Vec<Vec<Vec<Px>>> = Vec::with_capacity(n);
    for t in 0..n {
        if t > 0 {
            for (e, ent) in blueprint.entities.iter().enumerate() {
                if ent.role == Role::Distractor {
                    offsets[e] = walk_step(&ent.pixels, offsets[e], &mut walk_rng);
                }
            }
        }
        let frame = blueprint
            .entities
            .iter()
            .enumerate()
            .map(|(e, ent)| match ent.role {
                Role::Object => blueprint.object_track[t].clone(),
                Role::Target => ent.pixels.clone(),
                Role::Distractor => ent.pixels.iter().map(|p| [p[0] + offsets[e][0], p[1] + offsets[e][1]]).collect(),
            })
            .collect();
        entity_pixels.push(frame);
    }

    let slots = blueprint.slots_by_id();
    let features: Vec<TrackedFeature> = slots.iter().map(|&s| blueprint.tracked_feature(s)).collect();
    let bases: Vec<Vec<T>> =
        features.iter().map(|f| base_descriptor(config.seed, f.id, config.descriptor_dim)).collect();

    let mut noise_rng = ChaCha8Rng::seed_from_u64(sub_seed(config.layout_seed(), 4));
    let mut desc_rng = ChaCha8Rng::seed_from_u64(sub_seed(config.layout_seed(), 5));
    let sigma = T::lit(config.noise_px);
    let jitter = T::lit(config.descriptor_jitter);

    let mut positions = Vec::with_capacity(n);
    let mut pixel_noise = Vec::with_capacity(n);
    let mut frames = Vec::with_capacity(n);
    for frame_px in &entity_pixels {
        let world: Vec<[T; 3]> = slots.iter().map(|&(e, m)| to_world(&camera, frame_px[e][m])).collect();
        let noise: Vec<[T; 2]> = slots
            .iter()
            .map(|_| {
                if config.noise_px == 0.0 {
                    [T::zero(); 2]
                } else {
                    [0, 1].map(|_| sigma * T::lit(noise_rng.sample::<f64, _>(StandardNormal)))
                }
            })
            .collect();
        let obs = features
            .iter()
            .zip(&world)
            .zip(&noise)
            .zip(&bases)
            .map(|(((f, x), nz), base)| {
                let pixel = observe(&camera, x, *nz);
                FeatureObservation {
                    id: f.id,
                    visible: pixel.as_ref().is_some_and(in_image),
                    pixel: pixel.unwrap_or_else(unprojectable_pixel),
                    descriptor: descriptor_of(base, jitter, &mut desc_rng),
                    feature_class: f.class,
                    entity: f.entity,
                }
            })
            .collect();
        positions.push(world);
        pixel_noise.push(noise);
        frames.push(obs);
    }

    Ok(DemoSequence {
        camera,
        seed: config.seed,
        ground_truth: blueprint.ground_truth(config.kernel_kind),
        frames,
        config: Some(config.clone()),
        world: Some(SceneTrack { occluded: vec![vec![false; features.len()]; n], features, positions, pixel_noise }),
    })
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn add(p: Px, d: Px, s: f64) -> Px {
    [p[0] + s * d[0], p[1] + s * d[1]]
}

fn sign(rng: &mut ChaCha8Rng) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

/// Object and target entities plus the object's pixel track over all frames.
fn task_entities(config: &GenConfig, rng: &mut ChaCha8Rng) -> (EntityLayout, EntityLayout, Vec<Vec<Px>>) {
    let e0 = config.initial_error_px;
    let rho = config.approach_rate;
    let n = config.n_frames;
    let decay = |t: usize| rho.powi(t as i32);
    let linear = |init: &[Px], fin: &[Px]| -> Vec<Vec<Px>> {
        (0..n)
            .map(|t| init.iter().zip(fin).map(|(a, b)| add(*b, [a[0] - b[0], a[1] - b[1]], decay(t))).collect())
            .collect()
    };
    let entity = |shape, role, pixels| EntityLayout { shape, role, pixels };

    match config.kernel_kind {
        KernelKind::P2p => {
            let b = [uniform(rng, 160.0, 480.0), uniform(rng, 140.0, 340.0)];
            let phi = uniform(rng, 0.0, TAU);
            let a0 = add(b, [phi.cos(), phi.sin()], e0);
            let track = linear(&[a0], &[b]);
            (
                entity(EntityShape::Point, Role::Object, vec![a0]),
                entity(EntityShape::Point, Role::Target, vec![b]),
                track,
            )
        }
        KernelKind::P2l => {
            let c = [uniform(rng, 200.0, 440.0), uniform(rng, 160.0, 320.0)];
            let th = uniform(rng, 0.0, PI);
            let (d, nrm) = ([th.cos(), th.sin()], [-th.sin(), th.cos()]);
            let target = vec![add(c, d, -SEGMENT_HALF_LEN), add(c, d, SEGMENT_HALF_LEN)];
            let fin = add(c, d, uniform(rng, -0.6, 0.6) * SEGMENT_HALF_LEN);
            let init = add(fin, nrm, sign(rng) * e0);
            let track = linear(&[init], &[fin]);
            (
                entity(EntityShape::Point, Role::Object, vec![init]),
                entity(EntityShape::Segment, Role::Target, target),
                track,
            )
        }
        KernelKind::L2l => {
            let c = [uniform(rng, 200.0, 440.0), uniform(rng, 160.0, 320.0)];
            let th = uniform(rng, 0.0, PI);
            let (d, nrm) = ([th.cos(), th.sin()], [-th.sin(), th.cos()]);
            let half = SEGMENT_HALF_LEN + 10.0;
            let target = vec![add(c, d, -half), add(c, d, half)];
            let shift = uniform(rng, -15.0, 15.0);
            let fin = [add(c, d, shift - 40.0), add(c, d, shift + 40.0)];
            let psi = uniform(rng, 0.25, 1.32);
            let s = sign(rng) * e0;
            let init = [add(fin[0], nrm, s * psi.cos()), add(fin[1], nrm, s * psi.sin())];
            let track = linear(&init, &fin);
            (
                entity(EntityShape::Segment, Role::Object, init.to_vec()),
                entity(EntityShape::Segment, Role::Target, target),
                track,
            )
        }
        KernelKind::P2c => {
            let c = [uniform(rng, 200.0, 440.0), uniform(rng, 170.0, 310.0)];
            let th0 = uniform(rng, 0.0, TAU);
            let target = (0..5)
                .map(|k| {
                    let a = th0 + TAU * k as f64 / 5.0 + uniform(rng, -0.2, 0.2);
                    add(c, [a.cos(), a.sin()], CONIC_RADIUS)
                })
                .collect();
            let phi = uniform(rng, 0.0, TAU);
            let dir = [phi.cos(), phi.sin()];
            let r2 = CONIC_RADIUS * CONIC_RADIUS;
            let excess = (CONIC_RADIUS + e0).powi(2) - r2;
            // Radial approach: the algebraic circle residual r² - R² decays geometrically.
            let track: Vec<Vec<Px>> = (0..n).map(|t| vec![add(c, dir, (r2 + decay(t) * excess).sqrt())]).collect();
            let init = track[0][0];
            (
                entity(EntityShape::Point, Role::Object, vec![init]),
                entity(EntityShape::Conic, Role::Target, target),
                track,
            )
        }
    }
}

fn distractor_shape(kind: KernelKind, k: usize) -> EntityShape {
    match kind {
        KernelKind::P2p => EntityShape::Point,
        KernelKind::L2l => EntityShape::Segment,
        KernelKind::P2l if k % 2 == 1 => EntityShape::Segment,
        KernelKind::P2c if k % 2 == 1 => EntityShape::Conic,
        _ => EntityShape::Point,
    }
}

fn place_distractor(shape: EntityShape, occupied: &[Px], rng: &mut ChaCha8Rng) -> EntityLayout {
    let inside = |p: &Px| {
        p[0] >= 3.0 * WALK_MARGIN
            && p[0] <= IMAGE_WIDTH - 3.0 * WALK_MARGIN
            && p[1] >= 3.0 * WALK_MARGIN
            && p[1] <= IMAGE_HEIGHT - 3.0 * WALK_MARGIN
    };
    let mut candidate = Vec::new();
    for _ in 0..200 {
        let c = [uniform(rng, 40.0, IMAGE_WIDTH - 40.0), uniform(rng, 40.0, IMAGE_HEIGHT - 40.0)];
        candidate = match shape {
            EntityShape::Point => vec![c],
            EntityShape::Segment => {
                let th = uniform(rng, 0.0, PI);
                let half = uniform(rng, 30.0, 70.0);
                vec![add(c, [th.cos(), th.sin()], -half), add(c, [th.cos(), th.sin()], half)]
            }
            EntityShape::Conic => {
                let r = uniform(rng, 30.0, 55.0);
                let th0 = uniform(rng, 0.0, TAU);
                (0..5)
                    .map(|k| {
                        let a = th0 + TAU * k as f64 / 5.0 + uniform(rng, -0.2, 0.2);
                        add(c, [a.cos(), a.sin()], r)
                    })
                    .collect()
            }
        };
        let clear = candidate
            .iter()
            .all(|p| inside(p) && occupied.iter().all(|q| (p[0] - q[0]).hypot(p[1] - q[1]) >= MIN_SEPARATION));
        if clear {
            break;
        }
    }
    EntityLayout { shape, role: Role::Distractor, pixels: candidate }
}

/// One rigid random-walk step of at most `WALK_STEP_MAX` px, reflected at the
/// image margin.
fn walk_step(pixels: &[Px], offset: Px, rng: &mut ChaCha8Rng) -> Px {
    let ang = uniform(rng, 0.0, TAU);
    let len = uniform(rng, 0.0, WALK_STEP_MAX);
    let step = [len * ang.cos(), len * ang.sin()];
    let fits = |o: Px| {
        pixels.iter().all(|p| {
            let (u, v) = (p[0] + o[0], p[1] + o[1]);
            (WALK_MARGIN..=IMAGE_WIDTH - WALK_MARGIN).contains(&u)
                && (WALK_MARGIN..=IMAGE_HEIGHT - WALK_MARGIN).contains(&v)
        })
    };
    [1.0, -1.0].into_iter().map(|s| add(offset, step, s)).find(|o| fits(*o)).unwrap_or(offset)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(kind: KernelKind, seed: u64) -> GenConfig {
        GenConfig { kernel_kind: kind, seed, ..GenConfig::default() }
    }

    fn gt_pixels(demo: &DemoSequence<f64>, t: usize) -> Vec<ImagePoint<f64>> {
        demo.ground_truth.ids.iter().map(|id| demo.observation(t, *id).unwrap().pixel).collect()
    }

    #[test]
    fn geometric_decay_without_noise() {
        let cfg = GenConfig { noise_px: 0.0, approach_rate: 0.9, initial_error_px: 50.0, ..config(KernelKind::P2p, 4) };
        let demo = gen_demo::<f64>(&cfg).unwrap();
        let norm = |t| {
            let p = gt_pixels(&demo, t);
            p[0].distance(&p[1])
        };
        assert!((norm(0) - 50.0).abs() < 1e-9);
        assert!((norm(10) - 50.0 * 0.9f64.powi(10)).abs() < 1e-9);
        assert!((norm(10) - 17.4339).abs() < 1e-4);
        for t in 1..demo.n_frames() {
            assert!(norm(t) < norm(t - 1));
        }
    }

    #[test]
    fn default_demo_shape() {
        let demo = gen_demo::<f64>(&GenConfig::default()).unwrap();
        assert_eq!(demo.n_frames(), 60);
        assert!(demo.frames.iter().all(|f| f.len() == 10));
        assert!(demo.frames.iter().all(|f| f.iter().all(|o| o.descriptor.len() == 16)));
        assert!(demo.ground_truth_visible(0));
        let ids: Vec<u32> = demo.frames[0].iter().map(|o| o.id).collect();
        assert_eq!(ids, (0..10).collect::<Vec<_>>());
        for f in &demo.frames {
            assert_eq!(f.iter().map(|o| o.id).collect::<Vec<_>>(), ids);
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        for kind in KernelKind::ALL {
            let a = gen_demo::<f64>(&config(kind, 21)).unwrap();
            let b = gen_demo::<f64>(&config(kind, 21)).unwrap();
            assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
            let c = gen_demo::<f64>(&config(kind, 22)).unwrap();
            assert_ne!(a.frames, c.frames);
        }
    }

    #[test]
    fn layout_seed_keeps_appearance() {
        let a = gen_demo::<f64>(&config(KernelKind::P2p, 5)).unwrap();
        let b = gen_demo::<f64>(&GenConfig { layout_seed: Some(77), ..config(KernelKind::P2p, 5) }).unwrap();
        assert_eq!(a.ground_truth, b.ground_truth);
        let cfg = a.config.as_ref().unwrap();
        for id in 0..10 {
            let base: Vec<f64> = base_descriptor(cfg.seed, id, 16);
            let da = &a.observation(0, id).unwrap().descriptor;
            let db = &b.observation(0, id).unwrap().descriptor;
            let dist = |d: &Vec<f64>| d.iter().zip(&base).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            assert!(dist(da) < 0.5 && dist(db) < 0.5);
        }
        assert_ne!(a.observation(0, 0).unwrap().pixel, b.observation(0, 0).unwrap().pixel);
    }

    #[test]
    fn distractor_steps_are_bounded() {
        let cfg = GenConfig { noise_px: 0.0, ..config(KernelKind::P2p, 9) };
        let demo = gen_demo::<f64>(&cfg).unwrap();
        let track = demo.world.as_ref().unwrap();
        for (k, f) in track.features.iter().enumerate() {
            if f.role != Role::Distractor {
                continue;
            }
            for t in 1..demo.n_frames() {
                let step = demo.frames[t][k].pixel.distance(&demo.frames[t - 1][k].pixel);
                assert!(step <= WALK_STEP_MAX + 1e-9, "step {step}");
            }
        }
    }

    #[test]
    fn entity_structure_per_kind() {
        let count =
            |demo: &DemoSequence<f64>, class| demo.frames[0].iter().filter(|o| o.feature_class == class).count();
        let p2l = gen_demo::<f64>(&config(KernelKind::P2l, 1)).unwrap();
        assert_eq!(count(&p2l, FeatureClass::Point), 5);
        assert_eq!(count(&p2l, FeatureClass::SegmentEndpoint), 10);
        assert_eq!(p2l.ground_truth.ids.len(), 3);
        let l2l = gen_demo::<f64>(&config(KernelKind::L2l, 1)).unwrap();
        assert_eq!(count(&l2l, FeatureClass::SegmentEndpoint), 20);
        assert_eq!(l2l.ground_truth.ids.len(), 4);
        let p2c = gen_demo::<f64>(&config(KernelKind::P2c, 1)).unwrap();
        assert_eq!(count(&p2c, FeatureClass::ConicPoint), 25);
        assert_eq!(p2c.ground_truth.ids.len(), 6);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for bad in [
            GenConfig { n_frames: 1, ..GenConfig::default() },
            GenConfig { approach_rate: 1.0, ..GenConfig::default() },
            GenConfig { approach_rate: 0.0, ..GenConfig::default() },
            GenConfig { noise_px: -0.1, ..GenConfig::default() },
            GenConfig { descriptor_dim: 1, ..GenConfig::default() },
        ] {
            assert!(matches!(gen_demo::<f64>(&bad), Err(SceneError::InvalidConfig(_))));
        }
    }

    #[test]
    fn single_precision_generation() {
        let demo = gen_demo::<f32>(&GenConfig::default()).unwrap();
        assert_eq!(demo.n_frames(), 60);
    }
}
