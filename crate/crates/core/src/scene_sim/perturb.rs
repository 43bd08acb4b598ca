use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::generate::{observe, unprojectable_pixel};
use super::{
    in_image, sub_seed, CameraModel, DemoSequence, PerturbationKind, PerturbationSetting, Role, SceneError, SceneTrack,
    DEFAULT_FOCAL, IMAGE_WIDTH, WORK_PLANE_DEPTH,
};
use crate::linalg::{axis_angle, mat3_mul_vec};
use crate::scalar::Real;

const MAX_REDRAWS: usize = 32;

/// Applies one environmental change to a demo.
///
/// Geometric settings (`random_target`, `change_camera`, `outside_fov`) move
/// 3D features or the camera and re-project, keeping each observation's pixel
/// noise. `occlusion` hides a contiguous id range over a contiguous frame
/// window. `change_illumination` adds Gaussian noise of std dev `magnitude`
/// to every descriptor.
pub fn apply_perturbation<T: Real>(
    demo: &DemoSequence<T>,
    setting: PerturbationSetting,
    seed: u64,
) -> Result<DemoSequence<T>, SceneError> {
    let m = setting.magnitude;
    if !(m >= 0.0 && m.is_finite()) {
        return Err(SceneError::InvalidConfig(format!("perturbation magnitude must be >= 0, got {m}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 0xFE27 + setting.kind as u64));
    let mut out = demo.clone();
    match setting.kind {
        PerturbationKind::Occlusion => occlude(&mut out, m, &mut rng),
        PerturbationKind::ChangeIllumination => {
            if m > 0.0 {
                let s = T::lit(m);
                for obs in out.frames.iter_mut().flatten() {
                    for d in obs.descriptor.iter_mut() {
                        *d = *d + s * T::lit(rng.sample::<f64, _>(StandardNormal));
                    }
                }
            }
        }
        PerturbationKind::RandomTarget => {
            let base = demo.world.as_ref().ok_or(SceneError::MissingWorld)?;
            for _ in 0..MAX_REDRAWS {
                let theta = if m > 0.0 { rng.random_range(-PI..PI) } else { 0.0 };
                let r = m * rng.random::<f64>().sqrt();
                let phi = rng.random_range(0.0..2.0 * PI);
                let mut track = base.clone();
                move_task_features(&mut track, theta, [r * phi.cos(), r * phi.sin()]);
                out.world = Some(track);
                rerender(&mut out);
                if task_in_view(&out) {
                    break;
                }
            }
        }
        PerturbationKind::ChangeCamera => {
            demo.world.as_ref().ok_or(SceneError::MissingWorld)?;
            let original = demo.camera.clone();
            for _ in 0..MAX_REDRAWS {
                let axis = [0, 1, 2].map(|_| rng.sample::<f64, _>(StandardNormal));
                let angle = m * rng.random::<f64>();
                let dir = [0, 1, 2].map(|_| rng.sample::<f64, _>(StandardNormal));
                let dn = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt().max(1e-12);
                let radius = 0.5 * m * rng.random::<f64>().cbrt();
                let rot = axis_angle(axis.map(T::lit), T::lit(angle));
                let shift = dir.map(|d| T::lit(radius * d / dn));
                out.camera = original.moved(&rot, shift)?;
                rerender(&mut out);
                if task_in_view(&out) {
                    break;
                }
            }
        }
        PerturbationKind::OutsideFov => {
            let n = out.n_frames();
            let len = ((m * n as f64).ceil() as usize).min(n.saturating_sub(2));
            let track = out.world.as_mut().ok_or(SceneError::MissingWorld)?;
            if len > 0 {
                let start = rng.random_range(1..=(n - len - 1));
                let away = T::lit(2.0 * IMAGE_WIDTH * WORK_PLANE_DEPTH / DEFAULT_FOCAL);
                for t in start..start + len {
                    for (k, f) in track.features.iter().enumerate() {
                        if f.role == Role::Object {
                            track.positions[t][k][0] = track.positions[t][k][0] + away;
                        }
                    }
                }
                rerender(&mut out);
            }
        }
    }
    Ok(out)
}

fn occlude<T: Real>(demo: &mut DemoSequence<T>, m: f64, rng: &mut ChaCha8Rng) {
    let n = demo.n_frames();
    let mut ids: Vec<u32> = demo.frames[0].iter().map(|o| o.id).collect();
    ids.sort_unstable();
    let frames = ((m * n as f64).ceil() as usize).min(n);
    let count = ((m * ids.len() as f64).ceil() as usize).min(ids.len());
    if frames == 0 || count == 0 {
        return;
    }
    let start = rng.random_range(0..=(n - frames));
    let first = rng.random_range(0..=(ids.len() - count));
    let hidden = &ids[first..first + count];
    for t in start..start + frames {
        for (k, obs) in demo.frames[t].iter_mut().enumerate() {
            if hidden.contains(&obs.id) {
                obs.visible = false;
                if let Some(track) = demo.world.as_mut() {
                    track.occluded[t][k] = true;
                }
            }
        }
    }
}

/// Rigidly rotates (about the plane normal through the target centroid) and
/// translates the target and the object path that leads to it.
fn move_task_features<T: Real>(track: &mut SceneTrack<T>, theta: f64, shift: [f64; 2]) {
    let targets: Vec<usize> = (0..track.features.len()).filter(|&k| track.features[k].role == Role::Target).collect();
    let mut pivot = [T::zero(); 3];
    for &k in &targets {
        for (c, p) in pivot.iter_mut().enumerate() {
            *p = *p + track.positions[0][k][c];
        }
    }
    let count = T::from_usize_lossy(targets.len().max(1));
    let pivot = pivot.map(|p| p / count);
    let rot = axis_angle([T::zero(), T::zero(), T::one()], T::lit(theta));
    let shift = [T::lit(shift[0]), T::lit(shift[1]), T::zero()];
    for frame in track.positions.iter_mut() {
        for (k, x) in frame.iter_mut().enumerate() {
            if track.features[k].role == Role::Distractor {
                continue;
            }
            let rel = [x[0] - pivot[0], x[1] - pivot[1], x[2] - pivot[2]];
            let r = mat3_mul_vec(&rot, &rel);
            *x = [0, 1, 2].map(|c| pivot[c] + r[c] + shift[c]);
        }
    }
}

/// Recomputes pixels and visibility from the scene track.
pub(crate) fn rerender<T: Real>(demo: &mut DemoSequence<T>) {
    let Some(track) = demo.world.as_ref() else { return };
    let camera: &CameraModel<T> = &demo.camera;
    for (t, frame) in demo.frames.iter_mut().enumerate() {
        for (k, obs) in frame.iter_mut().enumerate() {
            let pixel = observe(camera, &track.positions[t][k], track.pixel_noise[t][k]);
            obs.visible = pixel.as_ref().is_some_and(in_image) && !track.occluded[t][k];
            obs.pixel = pixel.unwrap_or_else(unprojectable_pixel);
        }
    }
}

fn task_in_view<T: Real>(demo: &DemoSequence<T>) -> bool {
    let last = demo.n_frames() - 1;
    demo.ground_truth_visible(0) && demo.ground_truth_visible(last)
}
