//! Synthetic reach-and-place motions with anticipatory gaze.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::geometry::{
    featurize, head_rotation_towards, matrix_to_row_major, GeometryError, RawFrame, TablePlane,
    Vec2, Vec3,
};
use crate::grid::{Cell, GridSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub frame_rate: f64,
    /// Reach duration range, seconds.
    pub duration_min: f64,
    pub duration_max: f64,
    /// Axis-aligned box the palm starts in.
    pub hand_start_min: [f64; 3],
    pub hand_start_max: [f64; 3],
    pub head_pos: [f64; 3],
    pub shoulder_pos: [f64; 3],
    /// Palm height when the object is released.
    pub release_height: f64,
    /// Extra height of the reach arc at its midpoint.
    pub arc_height: f64,
    /// Fraction of the remaining reach time by which the gaze point leads the palm.
    pub gaze_lead: f64,
    /// Palm position noise, m. Tapers to zero as the hand settles.
    pub hand_noise: f64,
    /// Gaze direction noise, rad (yaw and pitch).
    pub gaze_noise: f64,
    /// Fraction of the cell the placement point may be jittered over.
    pub target_jitter: f64,
    pub detection_latency: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            frame_rate: 20.0,
            duration_min: 1.5,
            duration_max: 3.0,
            hand_start_min: [-0.20, 0.25, 0.08],
            hand_start_max: [-0.10, 0.55, 0.15],
            head_pos: [-0.35, 0.40, 0.45],
            shoulder_pos: [-0.30, 0.25, 0.30],
            release_height: 0.03,
            arc_height: 0.06,
            gaze_lead: 0.3,
            hand_noise: 0.005,
            gaze_noise: 0.02,
            target_jitter: 0.8,
            detection_latency: 0.1,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.frame_rate > 0.0) {
            return Err(SimError::BadConfig("frame rate must be positive"));
        }
        if !(self.duration_min > 0.0 && self.duration_max >= self.duration_min) {
            return Err(SimError::BadConfig(
                "duration range must be positive and ordered",
            ));
        }
        if !(self.detection_latency >= 0.0) {
            return Err(SimError::BadConfig(
                "detection latency must be non-negative",
            ));
        }
        if !(0.0..=1.0).contains(&self.gaze_lead) || !(0.0..=1.0).contains(&self.target_jitter) {
            return Err(SimError::BadConfig(
                "gaze lead and target jitter must lie in [0, 1]",
            ));
        }
        if !(self.hand_noise >= 0.0 && self.gaze_noise >= 0.0) {
            return Err(SimError::BadConfig("noise levels must be non-negative"));
        }
        Ok(())
    }
}

/// One recorded or generated placement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanTrajectory {
    pub id: String,
    pub grid: GridSpec,
    pub target_cell: Cell,
    pub target_point: [f64; 2],
    pub release_time: f64,
    pub frames: Vec<RawFrame>,
}

impl HumanTrajectory {
    pub fn target(&self) -> Vec2 {
        Vec2::from(self.target_point)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Per-frame model inputs on a horizontal table.
    pub fn model_inputs(&self) -> Result<Vec<Vec<f64>>, GeometryError> {
        let features = featurize(
            &self.frames,
            &TablePlane::horizontal(),
            gaze_fallback(&self.grid),
        )?;
        Ok(features.iter().map(|f| f.input().to_vec()).collect())
    }
}

/// Gaze hit used before the first valid table intersection: the grid centre.
pub fn gaze_fallback(grid: &GridSpec) -> Vec2 {
    grid.cell_center(Cell::new(grid.n / 2, grid.m / 2))
}

/// Minimum-jerk progress `10s^3 - 15s^4 + 6s^5`.
pub fn min_jerk(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

/// Generates one reach to a jittered point in `target_cell`.
pub fn gen_trajectory(
    rng: &mut ChaCha8Rng,
    grid: &GridSpec,
    target_cell: Cell,
    config: &SimConfig,
    id: impl Into<String>,
) -> Result<HumanTrajectory, SimError> {
    config.validate()?;
    grid.check_cell(target_cell)?;

    let duration = if config.duration_max > config.duration_min {
        rng.random_range(config.duration_min..config.duration_max)
    } else {
        config.duration_min
    };
    let steps = ((duration * config.frame_rate).floor() as usize).max(1);
    let release_time = steps as f64 / config.frame_rate;

    let half = 0.5 * grid.cell_size * config.target_jitter;
    let center = grid.cell_center(target_cell);
    let jitter = |rng: &mut ChaCha8Rng| {
        if half > 0.0 {
            rng.random_range(-half..half)
        } else {
            0.0
        }
    };
    let target = Vec2::new(center.x + jitter(rng), center.y + jitter(rng));

    let start = Vec3::from_fn(|i, _| {
        let (lo, hi) = (config.hand_start_min[i], config.hand_start_max[i]);
        if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        }
    });
    let end = Vec3::new(target.x, target.y, config.release_height);
    let head = Vec3::from(config.head_pos);
    let shoulder_base = Vec3::from(config.shoulder_pos);

    let hand_noise =
        Normal::new(0.0, config.hand_noise.max(f64::MIN_POSITIVE)).expect("finite stddev");
    let gaze_noise =
        Normal::new(0.0, config.gaze_noise.max(f64::MIN_POSITIVE)).expect("finite stddev");

    let mut frames = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 / config.frame_rate;
        let u = t / release_time;
        let s = min_jerk(u);
        let path = |s: f64| {
            start
                + (end - start) * s
                + Vec3::new(
                    0.0,
                    0.0,
                    config.arc_height * (std::f64::consts::PI * s).sin(),
                )
        };
        let clean = if k == steps { end } else { path(s) };

        let settle = 1.0 - s;
        let mut palm = clean;
        if config.hand_noise > 0.0 && k < steps {
            for i in 0..3 {
                palm[i] += hand_noise.sample(rng) * settle;
            }
        }
        let shoulder = shoulder_base + (palm - start) * 0.1;
        let elbow = shoulder + (palm - shoulder) * 0.55 - Vec3::new(0.0, 0.0, 0.10);

        // The eyes look where the hand will be after `gaze_lead` of the
        // remaining reach time.
        let ahead = if k == steps {
            end
        } else {
            path(min_jerk(u + config.gaze_lead * (1.0 - u)))
        };
        let look = Vec2::new(ahead.x, ahead.y);
        let mut dir = Vec3::new(look.x, look.y, 0.0) - head;
        if config.gaze_noise > 0.0 {
            let yaw = dir.y.atan2(dir.x) + gaze_noise.sample(rng);
            let horiz = dir.x.hypot(dir.y);
            let elev = (-dir.z).atan2(horiz) + gaze_noise.sample(rng);
            dir = Vec3::new(elev.cos() * yaw.cos(), elev.cos() * yaw.sin(), -elev.sin());
        }
        let rot = head_rotation_towards(&dir);

        frames.push(RawFrame {
            t,
            palm: palm.into(),
            elbow: elbow.into(),
            shoulder: shoulder.into(),
            head_pos: head.into(),
            head_rot: matrix_to_row_major(&rot),
        });
    }

    Ok(HumanTrajectory {
        id: id.into(),
        grid: *grid,
        target_cell,
        target_point: target.into(),
        release_time,
        frames,
    })
}
