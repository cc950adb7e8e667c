//! Predictive/definitive action arbitration.
//!
//! Heatmaps feed a [`PredictionMemory`]; once the fused peak exceeds the
//! execution limit the arm is sent toward the peak cell. A later peak in a
//! different cell only redirects the arm when it falls outside the grid
//! tolerance. When the object is detected, an in-flight predictive motion
//! close enough to the object is allowed to finish and is followed by a short
//! refinement; otherwise it is preempted and a full pick is planned.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec2;
use crate::grid::{Cell, GridSpec, Heatmap};
use crate::memory::{MemoryConfig, MemoryError, PredictionMemory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArbitrationError {
    #[error("detected object at ({0:.3}, {1:.3}) lies outside the workspace grid")]
    ObjectOutOfWorkspace(f64, f64),
    #[error("execution limit must be positive, got {0}")]
    BadGamma(f64),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArbitrationConfig {
    /// Execution limit on the fused peak.
    pub gamma: f64,
    pub tol_x: usize,
    pub tol_y: usize,
    pub memory: MemoryConfig,
}

impl Default for ArbitrationConfig {
    fn default() -> Self {
        Self {
            gamma: 0.05,
            tol_x: 1,
            tol_y: 2,
            memory: MemoryConfig::default(),
        }
    }
}

impl ArbitrationConfig {
    pub fn validate(&self) -> Result<(), ArbitrationError> {
        if !(self.gamma > 0.0) {
            return Err(ArbitrationError::BadGamma(self.gamma));
        }
        self.memory.validate()?;
        Ok(())
    }
}

/// True when `a` and `b` differ by at most the configured number of cells
/// along each axis.
pub fn within_tolerance(a: Cell, b: Cell, config: &ArbitrationConfig) -> bool {
    let (dx, dy) = a.delta(&b);
    dx <= config.tol_x && dy <= config.tol_y
}

pub type PlanId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    /// Approach the centre of a predicted cell, stopping at pre-grasp height.
    Predictive { cell: Cell, point: [f64; 2] },
    /// Full pick of the detected object from wherever the arm is.
    Definitive { point: [f64; 2] },
    /// Short correction from a finished nearby predictive approach.
    Refinement { point: [f64; 2] },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Launch {
    pub plan: PlanId,
    pub action: Action,
}

/// Commands for the executor. A preempt is always acknowledged before the
/// launch in the same decision starts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub preempt: Option<PlanId>,
    pub launch: Option<Launch>,
}

impl Decision {
    pub fn is_empty(&self) -> bool {
        self.preempt.is_none() && self.launch.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum ActionState {
    Idle,
    /// `plan` is `None` once the approach has finished and the arm waits.
    Predictive {
        goal: Cell,
        plan: Option<PlanId>,
    },
    /// With `refine_after`, `plan` is the predictive approach being finished
    /// before the refinement is issued.
    Definitive {
        target: [f64; 2],
        plan: Option<PlanId>,
        refine_after: bool,
    },
    Grasped,
}

impl ActionState {
    pub fn active_plan(&self) -> Option<PlanId> {
        match self {
            ActionState::Predictive { plan, .. } | ActionState::Definitive { plan, .. } => *plan,
            _ => None,
        }
    }

    pub fn kind(&self) -> StateKind {
        match self {
            ActionState::Idle => StateKind::Idle,
            ActionState::Predictive { .. } => StateKind::Predictive,
            ActionState::Definitive { .. } => StateKind::Definitive,
            ActionState::Grasped => StateKind::Grasped,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateKind {
    Idle,
    Predictive,
    Definitive,
    Grasped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ArbiterEvent {
    NewHeatmap { p: Heatmap, t: f64 },
    ObjectDetected { point: [f64; 2], t: f64 },
    MotionFinished { plan: PlanId, t: f64 },
}

impl ArbiterEvent {
    pub fn time(&self) -> f64 {
        match self {
            ArbiterEvent::NewHeatmap { t, .. }
            | ArbiterEvent::ObjectDetected { t, .. }
            | ArbiterEvent::MotionFinished { t, .. } => *t,
        }
    }

    /// Processing rank for events sharing a timestamp.
    fn rank(&self) -> u8 {
        match self {
            ArbiterEvent::ObjectDetected { .. } => 0,
            ArbiterEvent::MotionFinished { .. } => 1,
            ArbiterEvent::NewHeatmap { .. } => 2,
        }
    }
}

/// Stable sort into processing order: by time, detections first on ties.
pub fn order_events(events: &mut [ArbiterEvent]) {
    events.sort_by(|a, b| a.time().total_cmp(&b.time()).then(a.rank().cmp(&b.rank())));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Heatmap,
    Detection,
    MotionFinished,
}

/// One line of the decision log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub t: f64,
    pub event: EventKind,
    pub peak: Option<f64>,
    pub argmax: Option<Cell>,
    pub before: ActionState,
    pub after: ActionState,
    pub decision: Decision,
}

/// Single owner of the prediction memory and the action state.
#[derive(Debug, Clone)]
pub struct Arbiter {
    config: ArbitrationConfig,
    grid: GridSpec,
    memory: PredictionMemory,
    state: ActionState,
    next_plan: PlanId,
    last_predictive_goal: Option<Cell>,
    preempts: usize,
    log: Vec<DecisionRecord>,
}

impl Arbiter {
    pub fn new(config: ArbitrationConfig, grid: GridSpec) -> Result<Self, ArbitrationError> {
        config.validate()?;
        Ok(Self {
            memory: PredictionMemory::new(config.memory, grid)?,
            config,
            grid,
            state: ActionState::Idle,
            next_plan: 1,
            last_predictive_goal: None,
            preempts: 0,
            log: Vec::new(),
        })
    }

    /// Starts a new trial: zeroed memory, idle state, empty log.
    pub fn reset(&mut self) {
        self.memory.reset();
        self.state = ActionState::Idle;
        self.last_predictive_goal = None;
        self.preempts = 0;
        self.log.clear();
    }

    pub fn state(&self) -> &ActionState {
        &self.state
    }

    pub fn config(&self) -> &ArbitrationConfig {
        &self.config
    }

    pub fn memory(&self) -> &PredictionMemory {
        &self.memory
    }

    pub fn log(&self) -> &[DecisionRecord] {
        &self.log
    }

    pub fn preempt_count(&self) -> usize {
        self.preempts
    }

    /// Goal of the most recent predictive action, kept after the state moves on.
    pub fn last_predictive_goal(&self) -> Option<Cell> {
        self.last_predictive_goal
    }

    fn new_plan(&mut self) -> PlanId {
        let id = self.next_plan;
        self.next_plan += 1;
        id
    }

    fn record(
        &mut self,
        t: f64,
        event: EventKind,
        peak: Option<(f64, Cell)>,
        before: ActionState,
        decision: Decision,
    ) {
        if decision.preempt.is_some() {
            self.preempts += 1;
        }
        self.log.push(DecisionRecord {
            t,
            event,
            peak: peak.map(|p| p.0),
            argmax: peak.map(|p| p.1),
            before,
            after: self.state,
            decision,
        });
    }

    pub fn handle(&mut self, event: &ArbiterEvent) -> Result<Decision, ArbitrationError> {
        match event {
            ArbiterEvent::NewHeatmap { p, t } => Ok(self.on_heatmap(p.clone(), *t)),
            ArbiterEvent::ObjectDetected { point, t } => {
                self.on_object_detected(Vec2::from(*point), *t)
            }
            ArbiterEvent::MotionFinished { plan, t } => Ok(self.on_motion_finished(*plan, *t)),
        }
    }

    /// Fuses a new raw heatmap and decides whether to launch, keep or
    /// redirect a predictive action. The fused peak is kept in the log.
    pub fn on_heatmap(&mut self, p: Heatmap, t: f64) -> Decision {
        let before = self.state;
        if matches!(
            self.state,
            ActionState::Definitive { .. } | ActionState::Grasped
        ) {
            // Prediction stops once the object is known.
            self.record(t, EventKind::Heatmap, None, before, Decision::default());
            return Decision::default();
        }
        if self.memory.push(p).is_err() {
            self.record(t, EventKind::Heatmap, None, before, Decision::default());
            return Decision::default();
        }
        let (peak, cell) = self.memory.weighted().peak();
        let mut decision = Decision::default();
        if peak > self.config.gamma {
            let relaunch = match self.state {
                ActionState::Idle => true,
                ActionState::Predictive { goal, .. } => !within_tolerance(goal, cell, &self.config),
                _ => false,
            };
            if relaunch {
                decision.preempt = self.state.active_plan();
                let plan = self.new_plan();
                let point = self.grid.cell_center(cell);
                decision.launch = Some(Launch {
                    plan,
                    action: Action::Predictive {
                        cell,
                        point: point.into(),
                    },
                });
                self.state = ActionState::Predictive {
                    goal: cell,
                    plan: Some(plan),
                };
                self.last_predictive_goal = Some(cell);
            }
        }
        self.record(t, EventKind::Heatmap, Some((peak, cell)), before, decision);
        decision
    }

    /// The object's final position became known.
    pub fn on_object_detected(
        &mut self,
        point: Vec2,
        t: f64,
    ) -> Result<Decision, ArbitrationError> {
        let object_cell = self
            .grid
            .cell_of(&point)
            .map_err(|_| ArbitrationError::ObjectOutOfWorkspace(point.x, point.y))?;
        let before = self.state;
        let target: [f64; 2] = point.into();
        let mut decision = Decision::default();
        match self.state {
            ActionState::Idle => {
                let plan = self.new_plan();
                decision.launch = Some(Launch {
                    plan,
                    action: Action::Definitive { point: target },
                });
                self.state = ActionState::Definitive {
                    target,
                    plan: Some(plan),
                    refine_after: false,
                };
            }
            ActionState::Predictive { goal, plan }
                if within_tolerance(goal, object_cell, &self.config) =>
            {
                match plan {
                    Some(running) => {
                        self.state = ActionState::Definitive {
                            target,
                            plan: Some(running),
                            refine_after: true,
                        };
                    }
                    None => {
                        let plan = self.new_plan();
                        decision.launch = Some(Launch {
                            plan,
                            action: Action::Refinement { point: target },
                        });
                        self.state = ActionState::Definitive {
                            target,
                            plan: Some(plan),
                            refine_after: false,
                        };
                    }
                }
            }
            ActionState::Predictive { plan, .. } => {
                decision.preempt = plan;
                let id = self.new_plan();
                decision.launch = Some(Launch {
                    plan: id,
                    action: Action::Definitive { point: target },
                });
                self.state = ActionState::Definitive {
                    target,
                    plan: Some(id),
                    refine_after: false,
                };
            }
            // Duplicate detections do not change a committed pick.
            ActionState::Definitive { .. } | ActionState::Grasped => {}
        }
        self.record(t, EventKind::Detection, None, before, decision);
        Ok(decision)
    }

    /// An executing plan reached its goal. Stale ids are ignored.
    pub fn on_motion_finished(&mut self, finished: PlanId, t: f64) -> Decision {
        let before = self.state;
        let mut decision = Decision::default();
        if self.state.active_plan() == Some(finished) {
            match self.state {
                ActionState::Predictive { goal, .. } => {
                    self.state = ActionState::Predictive { goal, plan: None };
                }
                ActionState::Definitive {
                    target,
                    refine_after: true,
                    ..
                } => {
                    let plan = self.new_plan();
                    decision.launch = Some(Launch {
                        plan,
                        action: Action::Refinement { point: target },
                    });
                    self.state = ActionState::Definitive {
                        target,
                        plan: Some(plan),
                        refine_after: false,
                    };
                }
                ActionState::Definitive { .. } => self.state = ActionState::Grasped,
                _ => {}
            }
        }
        self.record(t, EventKind::MotionFinished, None, before, decision);
        decision
    }
}
