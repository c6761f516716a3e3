use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng;

/// Parametric trajectory for one atomic action, expressed relative to the
/// segment start. Every joint oscillates at the primitive's dominant
/// frequency around a constant displacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryParams {
    /// Dominant angular frequency in radians per frame.
    pub frequency: f64,
    /// Root translation per frame in the horizontal plane (x, z).
    pub root_velocity: [f64; 2],
    /// Yaw change per frame, radians.
    pub yaw_rate: f64,
    pub root_height_offset: f64,
    pub root_bob: f64,
    /// Per non-root joint displacement amplitude (x, y, z).
    pub amplitudes: Vec<[f64; 3]>,
    pub phases: Vec<[f64; 3]>,
    pub offsets: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionPrimitive {
    pub id: usize,
    pub name: String,
    /// Templates with a `{subject}` slot at the front.
    pub phrase_templates: Vec<String>,
    pub duration_range: (usize, usize),
    pub trajectory: TrajectoryParams,
}

impl ActionPrimitive {
    pub fn phrase(&self, template: usize, subject: &str) -> String {
        self.phrase_templates[template].replace("{subject}", subject)
    }
}

/// Names and phrasings of the built-in action vocabulary. Phrases never
/// contain sentence punctuation or the words used as event connectives.
pub const ACTION_TABLE: &[(&str, &[&str])] = &[
    (
        "walk_forward",
        &["{subject} walks forward", "{subject} walks straight ahead", "{subject} takes a few steps forward"],
    ),
    ("sit_down", &["{subject} sits down", "{subject} sits down on a chair"]),
    ("wave", &["{subject} waves with their left hand", "{subject} waves hello"]),
    ("jump", &["{subject} jumps up", "{subject} jumps in place"]),
    ("turn_around", &["{subject} turns around", "{subject} turns to face the other way"]),
    ("crouch", &["{subject} crouches", "{subject} squats down low"]),
    ("kick", &["{subject} kicks with the right leg", "{subject} kicks forward"]),
    ("run", &["{subject} runs forward", "{subject} jogs in a circle"]),
    ("raise_arms", &["{subject} raises both arms", "{subject} lifts their arms up"]),
    ("step_back", &["{subject} steps backward", "{subject} walks backwards"]),
];

/// Builds the primitive library for a skeleton with `joint_count` joints.
///
/// Dominant frequencies are spaced by construction so that no two primitives
/// share one; the remaining coefficients are drawn from `seed`.
pub fn build_library(
    seed: u64,
    joint_count: usize,
    n_primitives: usize,
    duration_range: (usize, usize),
) -> Vec<ActionPrimitive> {
    ACTION_TABLE
        .iter()
        .take(n_primitives)
        .enumerate()
        .map(|(id, (name, templates))| {
            let mut r = rng::seeded(seed, &[0xAC7, id as u64]);
            let frequency = 0.12 + 0.045 * id as f64 + r.random_range(0.0..0.01);
            let speed = r.random_range(0.0..0.06);
            let dir = r.random_range(0.0..std::f64::consts::TAU);
            let mut tri = || -> [f64; 3] {
                [
                    r.random_range(-1.0..1.0),
                    r.random_range(-1.0..1.0),
                    r.random_range(-1.0..1.0),
                ]
            };
            let n = joint_count - 1;
            let amplitudes: Vec<[f64; 3]> = (0..n).map(|_| tri().map(|v| 0.04 + 0.08 * v.abs())).collect();
            let phases: Vec<[f64; 3]> = (0..n).map(|_| tri().map(|v| v * std::f64::consts::PI)).collect();
            let offsets: Vec<[f64; 3]> = (0..n).map(|_| tri().map(|v| 0.25 * v)).collect();
            let yaw_rate = r.random_range(-0.03..0.03);
            let root_height_offset = r.random_range(-0.3..0.1);
            let root_bob = r.random_range(0.0..0.05);
            ActionPrimitive {
                id,
                name: name.to_string(),
                phrase_templates: templates.iter().map(|s| s.to_string()).collect(),
                duration_range,
                trajectory: TrajectoryParams {
                    frequency,
                    root_velocity: [speed * dir.cos(), speed * dir.sin()],
                    yaw_rate,
                    root_height_offset,
                    root_bob,
                    amplitudes,
                    phases,
                    offsets,
                },
            }
        })
        .collect()
}
