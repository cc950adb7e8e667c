//! Motion planning for a Cartesian gantry arm over the table: STOMP for the
//! horizontal traverse and straight vertical moves for the pick itself.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Vec2, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("goal ({0:.3}, {1:.3}, {2:.3}) lies outside the arm workspace")]
    GoalOutOfWorkspace(f64, f64, f64),
    #[error("start ({0:.3}, {1:.3}, {2:.3}) lies outside the arm workspace")]
    StartOutOfWorkspace(f64, f64, f64),
    #[error("goal lies inside keep-out zone {0}")]
    GoalInsideZone(usize),
    #[error("optimizer could not clear the keep-out zones (cost {0:.4})")]
    NoProgress(f64),
    #[error("invalid planner config: {0}")]
    BadConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gripper {
    Open,
    Closed,
}

/// End-effector pose of the gantry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    pub pos: [f64; 3],
    pub gripper: Gripper,
}

impl ArmState {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self {
            pos: [x, y, z],
            gripper: Gripper::Open,
        }
    }

    pub fn vec(&self) -> Vec3 {
        Vec3::from(self.pos)
    }

    pub fn xy(&self) -> Vec2 {
        Vec2::new(self.pos[0], self.pos[1])
    }
}

/// Kinematic limits and the fixed heights of the pick motion. One instance is
/// shared by every controller so reactive and preemptive runs move at the same
/// speeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArmConfig {
    /// Per-axis speed limits, m/s.
    pub speed: [f64; 3],
    pub travel_z: f64,
    pub pregrasp_z: f64,
    pub grasp_z: f64,
    pub ready: [f64; 3],
    pub bounds_min: [f64; 3],
    pub bounds_max: [f64; 3],
}

impl Default for ArmConfig {
    fn default() -> Self {
        Self {
            speed: [0.25, 0.25, 0.25],
            travel_z: 0.20,
            pregrasp_z: 0.05,
            grasp_z: 0.01,
            ready: [0.55, 0.40, 0.20],
            bounds_min: [-0.05, -0.05, 0.0],
            bounds_max: [0.65, 0.85, 0.40],
        }
    }
}

impl ArmConfig {
    pub fn ready_state(&self) -> ArmState {
        ArmState {
            pos: self.ready,
            gripper: Gripper::Open,
        }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.bounds_min[i] - 1e-12 && p[i] <= self.bounds_max[i] + 1e-12)
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if self.speed.iter().any(|v| !(*v > 0.0)) {
            return Err(PlanError::BadConfig("axis speeds must be positive"));
        }
        if !(self.grasp_z >= 0.0
            && self.grasp_z <= self.pregrasp_z
            && self.pregrasp_z <= self.travel_z)
        {
            return Err(PlanError::BadConfig(
                "heights must satisfy 0 <= grasp <= pre-grasp <= travel",
            ));
        }
        if !self.contains(&Vec3::from(self.ready)) {
            return Err(PlanError::BadConfig("ready pose outside workspace"));
        }
        Ok(())
    }

    /// Minimum time to move between two points under the per-axis limits.
    pub fn segment_time(&self, a: &Vec3, b: &Vec3) -> f64 {
        (0..3)
            .map(|i| (b[i] - a[i]).abs() / self.speed[i])
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    XYTraverse,
    PreGrasp,
    Grasp,
}

/// Circular region on the table the traverse should avoid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeepOutZone {
    pub center: [f64; 2],
    pub radius: f64,
}

impl KeepOutZone {
    fn distance(&self, p: &Vec3) -> f64 {
        (p[0] - self.center[0]).hypot(p[1] - self.center[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StompConfig {
    pub num_waypoints: usize,
    pub rollouts: usize,
    pub iterations: usize,
    /// Largest per-axis noise standard deviation, m.
    pub noise_stddev: [f64; 3],
    pub smoothness_weight: f64,
    pub obstacle_weight: f64,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for StompConfig {
    fn default() -> Self {
        Self {
            num_waypoints: 20,
            rollouts: 8,
            iterations: 50,
            noise_stddev: [0.05, 0.05, 0.0],
            smoothness_weight: 1.0,
            obstacle_weight: 100.0,
            temperature: 10.0,
            seed: 0,
        }
    }
}

impl StompConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        if self.num_waypoints < 3 {
            return Err(PlanError::BadConfig("need at least 3 waypoints"));
        }
        if self.rollouts < 2 {
            return Err(PlanError::BadConfig("need at least 2 rollouts"));
        }
        let weights = [
            self.smoothness_weight,
            self.obstacle_weight,
            self.temperature,
        ];
        if weights
            .iter()
            .chain(&self.noise_stddev)
            .any(|w| !(*w >= 0.0))
        {
            return Err(PlanError::BadConfig(
                "weights and noise must be non-negative",
            ));
        }
        Ok(())
    }
}

/// A timed sequence of arm states. Timestamps are relative to plan start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPlan {
    pub waypoints: Vec<ArmState>,
    pub timestamps: Vec<f64>,
    pub phase: Phase,
    pub cost: f64,
    /// Best cost after each optimizer iteration (empty for straight moves).
    pub cost_history: Vec<f64>,
}

impl TrajectoryPlan {
    pub fn duration(&self) -> f64 {
        self.timestamps.last().copied().unwrap_or(0.0)
    }

    pub fn start(&self) -> &ArmState {
        &self.waypoints[0]
    }

    pub fn goal(&self) -> &ArmState {
        self.waypoints.last().expect("plans are never empty")
    }

    /// Interpolated state `tau` seconds after plan start, clamped to the plan.
    pub fn state_at(&self, tau: f64) -> ArmState {
        if tau <= 0.0 {
            return ArmState {
                gripper: self.waypoints[0].gripper,
                ..self.waypoints[0]
            };
        }
        if tau >= self.duration() {
            return *self.goal();
        }
        let i = self.timestamps.partition_point(|t| *t <= tau);
        let (t0, t1) = (self.timestamps[i - 1], self.timestamps[i]);
        let a = self.waypoints[i - 1].vec();
        let b = self.waypoints[i].vec();
        let s = (tau - t0) / (t1 - t0);
        let p = a + (b - a) * s;
        ArmState {
            pos: p.into(),
            gripper: self.waypoints[0].gripper,
        }
    }

    fn from_points(points: Vec<Vec3>, phase: Phase, arm: &ArmConfig, gripper_end: Gripper) -> Self {
        let mut timestamps = Vec::with_capacity(points.len());
        let mut t = 0.0;
        timestamps.push(0.0);
        for w in points.windows(2) {
            // Strictly increasing even for coincident waypoints.
            t += arm.segment_time(&w[0], &w[1]).max(1e-12);
            timestamps.push(t);
        }
        let last = points.len() - 1;
        let waypoints = points
            .into_iter()
            .enumerate()
            .map(|(i, p)| ArmState {
                pos: p.into(),
                gripper: if i == last {
                    gripper_end
                } else {
                    Gripper::Open
                },
            })
            .collect();
        Self {
            waypoints,
            timestamps,
            phase,
            cost: 0.0,
            cost_history: Vec::new(),
        }
    }

    fn stationary(at: Vec3, phase: Phase, gripper: Gripper) -> Self {
        Self {
            waypoints: vec![ArmState {
                pos: at.into(),
                gripper,
            }],
            timestamps: vec![0.0],
            phase,
            cost: 0.0,
            cost_history: Vec::new(),
        }
    }
}

fn smoothness(points: &[Vec3]) -> f64 {
    points
        .windows(3)
        .map(|w| (w[0] - 2.0 * w[1] + w[2]).norm_squared())
        .sum()
}

fn obstacle(points: &[Vec3], zones: &[KeepOutZone]) -> f64 {
    points
        .iter()
        .flat_map(|p| {
            zones
                .iter()
                .map(move |z| (z.radius - z.distance(p)).max(0.0).powi(2))
        })
        .sum()
}

fn path_cost(points: &[Vec3], zones: &[KeepOutZone], config: &StompConfig) -> f64 {
    config.smoothness_weight * smoothness(points) + config.obstacle_weight * obstacle(points, zones)
}

/// Smoothness plus hinge-squared zone penetration of the plan's waypoints.
pub fn trajectory_cost(plan: &TrajectoryPlan, zones: &[KeepOutZone], config: &StompConfig) -> f64 {
    let pts: Vec<Vec3> = plan.waypoints.iter().map(ArmState::vec).collect();
    path_cost(&pts, zones, config)
}

/// Noise model over interior waypoints: covariance `R^-1` with
/// `R = A^T A`, `A` the second-difference operator.
struct SmoothNoise {
    chol: DMatrix<f64>,
    smoother: DMatrix<f64>,
    scale: f64,
}

impl SmoothNoise {
    fn new(n: usize) -> Self {
        let interior = n - 2;
        // Second differences over the full path, restricted to interior columns.
        let mut a = DMatrix::<f64>::zeros(n - 2, interior);
        for row in 0..n - 2 {
            for (off, coef) in [(0usize, 1.0), (1, -2.0), (2, 1.0)] {
                let col = row + off;
                if col >= 1 && col <= interior {
                    a[(row, col - 1)] = coef;
                }
            }
        }
        let r = a.transpose() * &a;
        let r_inv = r
            .cholesky()
            .expect("second-difference Gram matrix is positive definite")
            .inverse();
        let max_var = r_inv.diagonal().max();
        let chol = r_inv
            .clone()
            .cholesky()
            .expect("inverse is positive definite")
            .l();
        // Columns scaled so the largest entry of each is 1/interior.
        let mut smoother = r_inv;
        for c in 0..interior {
            let col_max = smoother.column(c).max();
            let k = 1.0 / (col_max * interior as f64);
            smoother.column_mut(c).scale_mut(k);
        }
        Self {
            chol,
            smoother,
            scale: 1.0 / max_var.sqrt(),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng, stddev: f64) -> DVector<f64> {
        let k = self.chol.nrows();
        let xi = DVector::from_iterator(k, (0..k).map(|_| StandardNormal.sample(rng)));
        &self.chol * xi * (stddev * self.scale)
    }
}

/// Stochastic trajectory optimization between `start` and `goal`.
///
/// Interior waypoints are perturbed with smooth Gaussian noise over `rollouts`
/// samples; rollouts are averaged with weights `exp(-T * normalized cost)`; the
/// smoothed update is kept only when it does not raise the total cost.
pub fn stomp_plan(
    start: &ArmState,
    goal: &ArmState,
    zones: &[KeepOutZone],
    arm: &ArmConfig,
    config: &StompConfig,
) -> Result<TrajectoryPlan, PlanError> {
    config.validate()?;
    let (s, g) = (start.vec(), goal.vec());
    if !arm.contains(&s) {
        return Err(PlanError::StartOutOfWorkspace(s.x, s.y, s.z));
    }
    if !arm.contains(&g) {
        return Err(PlanError::GoalOutOfWorkspace(g.x, g.y, g.z));
    }
    if let Some(i) = zones.iter().position(|z| z.distance(&g) < z.radius) {
        return Err(PlanError::GoalInsideZone(i));
    }
    if s == g {
        return Ok(TrajectoryPlan::stationary(
            g,
            Phase::XYTraverse,
            goal.gripper,
        ));
    }

    let n = config.num_waypoints;
    let mut path: Vec<Vec3> = (0..n)
        .map(|i| s + (g - s) * (i as f64 / (n - 1) as f64))
        .collect();
    path[0] = s;
    path[n - 1] = g;
    let mut cost = path_cost(&path, zones, config);
    let mut history = Vec::with_capacity(config.iterations);

    let noise = SmoothNoise::new(n);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let interior = n - 2;
    let active_axes: Vec<usize> = (0..3).filter(|&a| config.noise_stddev[a] > 0.0).collect();

    if cost > 0.0 && !active_axes.is_empty() {
        for _ in 0..config.iterations {
            let mut eps: Vec<[DVector<f64>; 3]> = Vec::with_capacity(config.rollouts);
            let mut costs = Vec::with_capacity(config.rollouts);
            for _ in 0..config.rollouts {
                let e: [DVector<f64>; 3] = std::array::from_fn(|axis| {
                    if config.noise_stddev[axis] > 0.0 {
                        noise.sample(&mut rng, config.noise_stddev[axis])
                    } else {
                        DVector::zeros(interior)
                    }
                });
                let candidate = perturbed(&path, &e);
                costs.push(path_cost(&candidate, zones, config));
                eps.push(e);
            }
            let lo = costs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = costs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = if hi - lo > 1e-300 {
                costs
                    .iter()
                    .map(|c| (-config.temperature * (c - lo) / (hi - lo)).exp())
                    .collect()
            } else {
                vec![1.0; costs.len()]
            };
            let total: f64 = weights.iter().sum();

            let update: [DVector<f64>; 3] = std::array::from_fn(|axis| {
                let mut d = DVector::zeros(interior);
                for (w, e) in weights.iter().zip(&eps) {
                    d += &e[axis] * (*w / total);
                }
                &noise.smoother * d
            });
            let candidate = perturbed(&path, &update);
            let c = path_cost(&candidate, zones, config);
            if c <= cost {
                path = candidate;
                cost = c;
            }
            history.push(cost);
        }
    }

    // Any waypoint left marginally inside a zone is pushed onto its boundary.
    if obstacle(&path, zones) > 0.0 {
        for p in path.iter_mut().take(n - 1).skip(1) {
            for z in zones {
                let d = z.distance(p);
                if d < z.radius {
                    let dir = if d > 1e-12 {
                        Vec2::new(p[0] - z.center[0], p[1] - z.center[1]) / d
                    } else {
                        let along = Vec2::new(g.x - s.x, g.y - s.y).normalize();
                        Vec2::new(-along.y, along.x)
                    };
                    let r = z.radius * (1.0 + 1e-9);
                    p[0] = z.center[0] + dir.x * r;
                    p[1] = z.center[1] + dir.y * r;
                }
            }
        }
        if obstacle(&path, zones) > 0.0 || path.iter().any(|p| !arm.contains(p)) {
            return Err(PlanError::NoProgress(path_cost(&path, zones, config)));
        }
        cost = path_cost(&path, zones, config);
    }

    let mut plan = TrajectoryPlan::from_points(path, Phase::XYTraverse, arm, goal.gripper);
    plan.cost = cost;
    plan.cost_history = history;
    Ok(plan)
}

fn perturbed(path: &[Vec3], e: &[DVector<f64>; 3]) -> Vec<Vec3> {
    let mut out = path.to_vec();
    let last = out.len() - 1;
    for (i, p) in out.iter_mut().enumerate().take(last).skip(1) {
        for axis in 0..3 {
            p[axis] += e[axis][i - 1];
        }
    }
    out
}

/// Two-point move used for the vertical pick phases.
pub fn straight_plan(
    start: &ArmState,
    goal: Vec3,
    phase: Phase,
    gripper_end: Gripper,
    arm: &ArmConfig,
) -> Result<TrajectoryPlan, PlanError> {
    if !arm.contains(&goal) {
        return Err(PlanError::GoalOutOfWorkspace(goal.x, goal.y, goal.z));
    }
    let s = start.vec();
    if s == goal {
        return Ok(TrajectoryPlan::stationary(goal, phase, gripper_end));
    }
    Ok(TrajectoryPlan::from_points(
        vec![s, goal],
        phase,
        arm,
        gripper_end,
    ))
}

/// Full pick: traverse to above `target` at travel height, descend to
/// pre-grasp height, descend to grasp height and close the gripper.
pub fn plan_pick_sequence(
    current: &ArmState,
    target: Vec2,
    zones: &[KeepOutZone],
    arm: &ArmConfig,
    stomp: &StompConfig,
) -> Result<Vec<TrajectoryPlan>, PlanError> {
    let mut plans = plan_approach(current, target, zones, arm, stomp)?;
    let grasp = straight_plan(
        plans[1].goal(),
        Vec3::new(target.x, target.y, arm.grasp_z),
        Phase::Grasp,
        Gripper::Closed,
        arm,
    )?;
    plans.push(grasp);
    Ok(plans)
}

/// The first two phases of a pick; predictive motions stop here.
pub fn plan_approach(
    current: &ArmState,
    target: Vec2,
    zones: &[KeepOutZone],
    arm: &ArmConfig,
    stomp: &StompConfig,
) -> Result<Vec<TrajectoryPlan>, PlanError> {
    let above = ArmState::new(target.x, target.y, arm.travel_z);
    let traverse = stomp_plan(current, &above, zones, arm, stomp)?;
    let pregrasp = straight_plan(
        traverse.goal(),
        Vec3::new(target.x, target.y, arm.pregrasp_z),
        Phase::PreGrasp,
        Gripper::Open,
        arm,
    )?;
    Ok(vec![traverse, pregrasp])
}

/// Short correction from a nearby pre-grasp pose to the exact object point:
/// a straight move at pre-grasp height followed by the grasp descent.
pub fn plan_refinement(
    current: &ArmState,
    target: Vec2,
    arm: &ArmConfig,
) -> Result<Vec<TrajectoryPlan>, PlanError> {
    let align = straight_plan(
        current,
        Vec3::new(target.x, target.y, arm.pregrasp_z),
        Phase::PreGrasp,
        Gripper::Open,
        arm,
    )?;
    let grasp = straight_plan(
        align.goal(),
        Vec3::new(target.x, target.y, arm.grasp_z),
        Phase::Grasp,
        Gripper::Closed,
        arm,
    )?;
    Ok(vec![align, grasp])
}
