use ndarray::Array2;

use super::skeleton::Skeleton;
use super::{FeatureSequence, MotionSequence};
use crate::error::{Error, Result};

/// Vertical foot-joint displacement per frame below which the foot counts as
/// planted.
pub const FOOT_CONTACT_THRESHOLD: f64 = 0.01;

pub fn feature_dim(joint_count: usize) -> usize {
    12 * joint_count - 1
}

/// Widths of (r_va, r_vx, r_vz, r_h, j_p, j_v, j_r, f).
pub fn block_widths(joint_count: usize) -> [usize; 8] {
    let j = joint_count;
    [1, 1, 1, 1, 3 * (j - 1), 3 * j, 6 * (j - 1), 4]
}

type V3 = [f64; 3];

fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: V3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

fn cross(a: V3, b: V3) -> V3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Rotate about +y by `-heading` so the character faces +z.
fn unyaw(v: V3, heading: f64) -> V3 {
    let (s, c) = heading.sin_cos();
    [c * v[0] - s * v[2], v[1], s * v[0] + c * v[2]]
}

fn wrap_angle(mut a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    while a > PI {
        a -= TAU;
    }
    while a < -PI {
        a += TAU;
    }
    a
}

/// First two columns of the minimal rotation taking direction `from` onto
/// direction `to`.
fn rotation_6d(from: V3, to: V3) -> [f64; 6] {
    let (na, nb) = (norm(from), norm(to));
    if na < 1e-12 || nb < 1e-12 {
        return [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
    }
    let a = from.map(|x| x / na);
    let b = to.map(|x| x / nb);
    let c = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let r: [[f64; 3]; 3] = if c > -1.0 + 1e-9 {
        let v = cross(a, b);
        let k = [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]];
        let mut r = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let kk: f64 = (0..3).map(|m| k[i][m] * k[m][j]).sum();
                r[i][j] = if i == j { 1.0 } else { 0.0 } + k[i][j] + kk / (1.0 + c);
            }
        }
        r
    } else {
        // half turn about any axis orthogonal to `a`
        let helper = if a[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        let u = cross(a, helper);
        let nu = norm(u);
        let u = u.map(|x| x / nu);
        let mut r = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] = 2.0 * u[i] * u[j] - if i == j { 1.0 } else { 0.0 };
            }
        }
        r
    };
    [r[0][0], r[1][0], r[2][0], r[0][1], r[1][1], r[2][1]]
}

fn joint(frames: &Array2<f64>, t: usize, j: usize) -> V3 {
    [frames[[t, 3 * j]], frames[[t, 3 * j + 1]], frames[[t, 3 * j + 2]]]
}

fn heading(frames: &Array2<f64>, t: usize, joint_count: usize) -> f64 {
    let (a, b) = if joint_count >= 3 { (1, 2) } else { (0, 1) };
    let v = sub(joint(frames, t, b), joint(frames, t, a));
    v[0].atan2(v[2])
}

/// Converts joint positions into the per-frame pose representation of width
/// `12J - 1`. Velocities are backward differences scaled by `fps`; frame 0
/// reuses frame 1's velocities.
pub fn pose_features(motion: &MotionSequence) -> Result<FeatureSequence> {
    let f = motion.frames.nrows();
    let j_count = motion.joint_count;
    if f < 2 {
        return Err(Error::config("frames", format!("need at least 2 frames, got {f}")));
    }
    if j_count < 2 || motion.frames.ncols() != 3 * j_count {
        return Err(Error::shape("motion frames", 3 * j_count, motion.frames.ncols()));
    }
    let skel = Skeleton::standard(j_count);
    let fps = motion.fps as f64;
    let fr = &motion.frames;
    let d = feature_dim(j_count);
    let headings: Vec<f64> = (0..f).map(|t| heading(fr, t, j_count)).collect();
    let mut out = Array2::<f32>::zeros((f, d));
    for t in 0..f {
        let prev = if t == 0 { 0 } else { t - 1 };
        let cur = if t == 0 { 1 } else { t };
        let mut row = Vec::with_capacity(d);
        let h_prev = headings[prev];
        let h = headings[t];
        row.push(wrap_angle(headings[cur] - h_prev) * fps);
        let root_step = unyaw(sub(joint(fr, cur, 0), joint(fr, prev, 0)), h_prev);
        row.push(root_step[0] * fps);
        row.push(root_step[2] * fps);
        let root = joint(fr, t, 0);
        row.push(root[1]);
        for j in 1..j_count {
            row.extend(unyaw(sub(joint(fr, t, j), root), h));
        }
        for j in 0..j_count {
            let v = unyaw(sub(joint(fr, cur, j), joint(fr, prev, j)), h_prev);
            row.extend(v.map(|x| x * fps));
        }
        for j in 1..j_count {
            let p = skel.parents[j].expect("non-root");
            let bone = unyaw(sub(joint(fr, t, j), joint(fr, t, p)), h);
            row.extend(rotation_6d(skel.rest_bone(j), bone));
        }
        for &foot in &skel.feet {
            let dy = (joint(fr, cur, foot)[1] - joint(fr, prev, foot)[1]).abs();
            row.push(if dy < FOOT_CONTACT_THRESHOLD { 1.0 } else { 0.0 });
        }
        debug_assert_eq!(row.len(), d);
        for (k, v) in row.into_iter().enumerate() {
            out[[t, k]] = v as f32;
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("pose features".into()));
    }
    Ok(FeatureSequence {
        features: out,
        joint_count: j_count,
        fps: motion.fps,
    })
}
