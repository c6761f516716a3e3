use ndarray::Array2;
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::primitives::ActionPrimitive;
use super::skeleton::Skeleton;
use super::MotionSequence;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSettings {
    pub crossfade: usize,
    pub fps: u32,
    pub noise_std: f64,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            crossfade: 5,
            fps: 20,
            noise_std: 0.003,
        }
    }
}

/// One primitive's frames, independent of where it sits in the sequence.
fn segment(prim: &ActionPrimitive, skel: &Skeleton, frames: usize, seed: u64, noise_std: f64) -> Array2<f64> {
    let j_count = skel.joint_count();
    let tr = &prim.trajectory;
    let mut r = rng::seeded(seed, &[]);
    let phase0: f64 = r.random_range(0.0..std::f64::consts::TAU);
    let mut out = Array2::zeros((frames, 3 * j_count));
    for s in 0..frames {
        let t = s as f64;
        let wave = |ph: f64| (tr.frequency * t + phase0 + ph).sin();
        let root = [
            tr.root_velocity[0] * t,
            skel.rest[0][1] + tr.root_height_offset + tr.root_bob * wave(0.0),
            tr.root_velocity[1] * t,
        ];
        let yaw = tr.yaw_rate * t;
        let (sy, cy) = yaw.sin_cos();
        for j in 0..j_count {
            let mut local = [0.0; 3];
            if j > 0 {
                for k in 0..3 {
                    local[k] = skel.rest[j][k] - skel.rest[0][k]
                        + tr.offsets[j - 1][k]
                        + tr.amplitudes[j - 1][k] * wave(tr.phases[j - 1][k]);
                }
            }
            let rotated = [cy * local[0] + sy * local[2], local[1], -sy * local[0] + cy * local[2]];
            for k in 0..3 {
                let noise: f64 = r.sample(StandardNormal);
                out[[s, 3 * j + k]] = root[k] + rotated[k] + noise_std * noise;
            }
        }
    }
    out
}

/// Concatenates per-primitive segments with a linear crossfade of
/// `settings.crossfade` frames between neighbours. Each segment draws its
/// noise from a stream keyed by (primitive id, occurrence), so reordering the
/// actions reorders segment content without changing it.
pub fn synthesize_motion(
    library: &[ActionPrimitive],
    skel: &Skeleton,
    action_ids: &[usize],
    durations: &[usize],
    settings: SynthSettings,
    rng: &mut rng::Rng,
) -> Result<MotionSequence> {
    if action_ids.is_empty() {
        return Err(Error::EmptyInput("action list"));
    }
    if action_ids.len() != durations.len() {
        return Err(Error::shape("durations", action_ids.len(), durations.len()));
    }
    let w = settings.crossfade;
    let base: u64 = rng.random();
    let mut pieces = Vec::with_capacity(action_ids.len());
    for (i, (&id, &d)) in action_ids.iter().zip(durations).enumerate() {
        let prim = library
            .get(id)
            .ok_or_else(|| Error::config("action_ids", format!("unknown primitive {id}")))?;
        let (lo, hi) = prim.duration_range;
        if d < lo || d > hi {
            return Err(Error::config(
                "durations",
                format!("{d} frames outside [{lo}, {hi}] for `{}`", prim.name),
            ));
        }
        if action_ids.len() > 1 && d <= w {
            return Err(Error::config("crossfade_frames", format!("{w} not below duration {d}")));
        }
        let occurrence = action_ids[..i].iter().filter(|&&x| x == id).count() as u64;
        let seed = rng::derive_seed(base, &[id as u64, occurrence]);
        pieces.push(segment(prim, skel, d, seed, settings.noise_std));
    }

    let total: usize = durations.iter().sum::<usize>() - w * (durations.len() - 1);
    let width = 3 * skel.joint_count();
    let mut frames = Array2::zeros((total, width));
    let mut cursor = 0usize;
    for (i, seg) in pieces.iter().enumerate() {
        let start = if i == 0 { 0 } else { cursor - w };
        for (k, row) in seg.outer_iter().enumerate() {
            let dst = start + k;
            if i > 0 && k < w {
                let alpha = (k + 1) as f64 / (w + 1) as f64;
                let mut d = frames.row_mut(dst);
                d.zip_mut_with(&row, |a, &b| *a = (1.0 - alpha) * *a + alpha * b);
            } else {
                frames.row_mut(dst).assign(&row);
            }
        }
        cursor = start + seg.nrows();
    }
    debug_assert_eq!(cursor, total);
    Ok(MotionSequence {
        frames,
        fps: settings.fps,
        joint_count: skel.joint_count(),
    })
}

/// Output frame ranges (half-open) holding each segment's interior: the
/// frames at least `crossfade` away from both segment ends. These frames are
/// never blended, whatever the action order.
pub fn segment_interiors(durations: &[usize], crossfade: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut cursor = 0usize;
    for (i, &d) in durations.iter().enumerate() {
        let start = if i == 0 { 0 } else { cursor - crossfade };
        if d > 2 * crossfade {
            out.push((start + crossfade, start + d - crossfade));
        }
        cursor = start + d;
    }
    out
}
