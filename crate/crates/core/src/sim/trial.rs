use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{gaze_fallback, ArmExecutor, HumanTrajectory, SimConfig, SimError, World, WorldEvent};
use crate::arbitration::{Action, Arbiter, ArbitrationConfig, Decision, PlanId};
use crate::geometry::{build_features, FeatureFrame, RawFrame, TablePlane, Vec2};
use crate::grid::{Cell, GridSpec, Heatmap};
use crate::labels::{make_label, LabelParams};
use crate::model::{Hidden, IntentModel};
use crate::planner::{
    plan_approach, plan_pick_sequence, plan_refinement, ArmConfig, KeepOutZone, StompConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Reactive,
    Preemptive,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Reactive => "reactive",
            Mode::Preemptive => "preemptive",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reactive" => Ok(Mode::Reactive),
            "preemptive" => Ok(Mode::Preemptive),
            other => Err(format!(
                "unknown mode '{other}', expected reactive or preemptive"
            )),
        }
    }
}

/// Source of per-frame heatmaps in preemptive mode.
#[derive(Debug, Clone)]
pub enum Predictor {
    None,
    Model(Arc<IntentModel>),
    /// Emits the label of the true cell, i.e. a perfect but time-ramped
    /// prediction.
    Oracle,
}

/// Everything a single trial depends on besides the trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrialConfig {
    pub grid: GridSpec,
    pub arm: ArmConfig,
    pub stomp: StompConfig,
    pub arbitration: ArbitrationConfig,
    pub labels: LabelParams,
    pub sim: SimConfig,
    /// Virtual time between a motion command and the arm starting to move.
    pub plan_latency: f64,
    pub timeout: f64,
    pub zones: Vec<KeepOutZone>,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            arm: ArmConfig::default(),
            stomp: StompConfig::default(),
            arbitration: ArbitrationConfig::default(),
            labels: LabelParams::default(),
            sim: SimConfig::default(),
            plan_latency: 0.0,
            timeout: 60.0,
            zones: Vec::new(),
        }
    }
}

impl TrialConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.grid.validate()?;
        self.arm.validate()?;
        self.stomp.validate()?;
        self.arbitration.validate()?;
        self.sim.validate()?;
        if !(self.plan_latency >= 0.0) {
            return Err(SimError::BadConfig("plan latency must be non-negative"));
        }
        if !(self.timeout > 0.0) {
            return Err(SimError::BadConfig("timeout must be positive"));
        }
        Ok(())
    }
}

/// Grid error between a predicted and the true cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionError {
    pub dx: usize,
    pub dy: usize,
    pub euclid_grids: f64,
    pub euclid_m: f64,
}

impl PredictionError {
    pub fn between(predicted: Cell, truth: Cell, grid: &GridSpec) -> Self {
        let (dx, dy) = predicted.delta(&truth);
        let euclid_grids = predicted.euclidean(&truth);
        Self {
            dx,
            dy,
            euclid_grids,
            euclid_m: euclid_grids * grid.cell_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub mode: Mode,
    pub seed: u64,
    pub target_cell: Cell,
    pub release_time: f64,
    pub response_time: f64,
    pub start_to_grab: f64,
    /// Last predictive goal at detection time versus the true cell; absent
    /// when no predictive action was launched.
    pub error: Option<PredictionError>,
    pub preempts: usize,
}

impl TrialResult {
    pub fn cell_mode(&self) -> (Cell, Mode) {
        (self.target_cell, self.mode)
    }
}

/// What one frame produced.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub heatmap: Option<Heatmap>,
    pub fused: Option<Heatmap>,
    pub decision: Decision,
}

/// Predict, fuse, arbitrate and plan for one trial at a time. Shared by the
/// offline sim and the live service.
#[derive(Debug, Clone)]
pub struct Pipeline {
    mode: Mode,
    predictor: Predictor,
    config: TrialConfig,
    arbiter: Arbiter,
    plane: TablePlane,
    seed: u64,
    prev: Option<FeatureFrame>,
    hidden: Option<Hidden>,
    frame_index: usize,
    oracle: Option<(Cell, usize)>,
    first_motion: Option<f64>,
    grasped_at: Option<f64>,
    goal_at_detection: Option<Cell>,
    last_preempted: bool,
}

impl Pipeline {
    pub fn new(
        config: TrialConfig,
        mode: Mode,
        predictor: Predictor,
        seed: u64,
    ) -> Result<Self, SimError> {
        config.validate()?;
        if mode == Mode::Preemptive && matches!(predictor, Predictor::None) {
            return Err(SimError::MissingPredictor);
        }
        if let Predictor::Model(m) = &predictor {
            if m.grid().n != config.grid.n || m.grid().m != config.grid.m {
                return Err(crate::grid::GridError::ShapeMismatch {
                    got: (m.grid().n, m.grid().m),
                    want: (config.grid.n, config.grid.m),
                }
                .into());
            }
        }
        Ok(Self {
            arbiter: Arbiter::new(config.arbitration, config.grid)?,
            mode,
            predictor,
            config,
            plane: TablePlane::horizontal(),
            seed,
            prev: None,
            hidden: None,
            frame_index: 0,
            oracle: None,
            first_motion: None,
            grasped_at: None,
            goal_at_detection: None,
            last_preempted: false,
        })
    }

    /// Starts a new trial. The oracle predictor needs the true cell and the
    /// trajectory length.
    pub fn reset(&mut self, oracle: Option<(Cell, usize)>) {
        self.arbiter.reset();
        self.prev = None;
        self.hidden = None;
        self.frame_index = 0;
        self.oracle = oracle;
        self.first_motion = None;
        self.grasped_at = None;
        self.goal_at_detection = None;
        self.last_preempted = false;
    }

    pub fn set_mode(&mut self, mode: Mode) -> Result<(), SimError> {
        if mode == Mode::Preemptive && matches!(self.predictor, Predictor::None) {
            return Err(SimError::MissingPredictor);
        }
        self.mode = mode;
        Ok(())
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn config(&self) -> &TrialConfig {
        &self.config
    }

    pub fn arbiter(&self) -> &Arbiter {
        &self.arbiter
    }

    /// Time the arm first started moving.
    pub fn response_time(&self) -> Option<f64> {
        self.first_motion
    }

    pub fn grasped_at(&self) -> Option<f64> {
        self.grasped_at
    }

    pub fn goal_at_detection(&self) -> Option<Cell> {
        self.goal_at_detection
    }

    /// Whether the most recent decision preempted a running motion.
    pub fn last_preempted(&self) -> bool {
        self.last_preempted
    }

    fn predict(&mut self, features: &FeatureFrame) -> Result<Option<Heatmap>, SimError> {
        let k = self.frame_index;
        Ok(match &self.predictor {
            Predictor::None => None,
            Predictor::Model(model) => {
                let (map, h) = model.forward(&features.input(), self.hidden.as_ref())?;
                self.hidden = Some(h);
                Some(map)
            }
            Predictor::Oracle => match self.oracle {
                Some((cell, len)) => Some(make_label(
                    (cell.x as f64, cell.y as f64),
                    &self.config.grid,
                    &self.config.labels,
                    k.min(len),
                    len.max(1),
                )?),
                None => None,
            },
        })
    }

    /// Featurizes and, in preemptive mode, predicts and arbitrates.
    pub fn on_frame(
        &mut self,
        raw: &RawFrame,
        exec: &mut ArmExecutor,
    ) -> Result<PipelineOutput, SimError> {
        let mut out = PipelineOutput {
            heatmap: None,
            fused: None,
            decision: Decision::default(),
        };
        if self.mode == Mode::Reactive {
            return Ok(out);
        }
        let fallback = gaze_fallback(&self.config.grid);
        let features = build_features(self.prev.as_ref(), raw, &self.plane, fallback)?;
        let map = self.predict(&features)?;
        self.prev = Some(features);
        self.frame_index += 1;
        if let Some(p) = map {
            out.decision = self.arbiter.on_heatmap(p.clone(), raw.t);
            out.fused = Some(self.arbiter.memory().weighted());
            out.heatmap = Some(p);
            self.apply(out.decision, raw.t, exec)?;
        }
        Ok(out)
    }

    pub fn on_object_detected(
        &mut self,
        point: Vec2,
        t: f64,
        exec: &mut ArmExecutor,
    ) -> Result<Decision, SimError> {
        if self.goal_at_detection.is_none() {
            self.goal_at_detection = self.arbiter.last_predictive_goal();
        }
        let d = self.arbiter.on_object_detected(point, t)?;
        self.apply(d, t, exec)?;
        Ok(d)
    }

    pub fn on_motion_finished(
        &mut self,
        plan: PlanId,
        t: f64,
        exec: &mut ArmExecutor,
    ) -> Result<Decision, SimError> {
        let d = self.arbiter.on_motion_finished(plan, t);
        if self.grasped_at.is_none()
            && self.arbiter.state().kind() == crate::arbitration::StateKind::Grasped
        {
            self.grasped_at = Some(t);
        }
        self.apply(d, t, exec)?;
        Ok(d)
    }

    fn plan_seed(&self, plan: PlanId) -> u64 {
        self.config.stomp.seed
            ^ self.seed.rotate_left(32)
            ^ plan.wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }

    /// Hands a decision to the executor: preempt first, then plan and start.
    fn apply(&mut self, d: Decision, t: f64, exec: &mut ArmExecutor) -> Result<(), SimError> {
        self.last_preempted = false;
        if let Some(old) = d.preempt {
            self.last_preempted = exec.preempt(old, t);
        }
        let Some(launch) = d.launch else {
            return Ok(());
        };
        let current = exec.pose_at(t);
        let stomp = StompConfig {
            seed: self.plan_seed(launch.plan),
            ..self.config.stomp.clone()
        };
        let arm = &self.config.arm;
        let zones = &self.config.zones;
        let phases = match launch.action {
            Action::Predictive { point, .. } => {
                plan_approach(&current, Vec2::from(point), zones, arm, &stomp)?
            }
            Action::Definitive { point } => {
                plan_pick_sequence(&current, Vec2::from(point), zones, arm, &stomp)?
            }
            Action::Refinement { point } => plan_refinement(&current, Vec2::from(point), arm)?,
        };
        if let Some(running) = exec.active_plan() {
            // The arbiter only launches over a running plan it preempted.
            exec.preempt(running, t);
        }
        let start = t + self.config.plan_latency;
        exec.start(launch.plan, phases, start);
        self.first_motion.get_or_insert(start);
        Ok(())
    }
}

/// Runs one trial on a fixed trajectory, from the ready pose to a grasp.
pub fn run_trial(
    human: &HumanTrajectory,
    mode: Mode,
    predictor: &Predictor,
    config: &TrialConfig,
    seed: u64,
) -> Result<TrialResult, SimError> {
    let mut pipeline = Pipeline::new(config.clone(), mode, predictor.clone(), seed)?;
    pipeline.reset(Some((human.target_cell, human.len())));
    let mut world = World::new(human.clone(), config.sim.detection_latency, config.arm);

    while pipeline.grasped_at().is_none() {
        let t = world.next_due().ok_or(SimError::Stalled(world.clock()))?;
        if t > config.timeout {
            return Err(SimError::TrialTimeout(config.timeout));
        }
        for event in world.advance_to(t)? {
            let exec = world.executor_mut();
            match event {
                WorldEvent::Frame(raw) => {
                    pipeline.on_frame(&raw, exec)?;
                }
                WorldEvent::ObjectDetected { point, t } => {
                    pipeline.on_object_detected(Vec2::from(point), t, exec)?;
                }
                WorldEvent::MotionFinished { plan, t } => {
                    pipeline.on_motion_finished(plan, t, exec)?;
                }
            }
        }
    }

    let grid = &config.grid;
    let error = match mode {
        Mode::Reactive => None,
        Mode::Preemptive => pipeline
            .goal_at_detection()
            .map(|goal| PredictionError::between(goal, human.target_cell, grid)),
    };
    Ok(TrialResult {
        mode,
        seed,
        target_cell: human.target_cell,
        release_time: human.release_time,
        response_time: pipeline.response_time().expect("a grasp implies a motion"),
        start_to_grab: pipeline.grasped_at().expect("loop exits on grasp"),
        error,
        preempts: pipeline.arbiter().preempt_count(),
    })
}
