use serde::{Deserialize, Serialize};

use super::{HumanTrajectory, SimError};
use crate::arbitration::PlanId;
use crate::geometry::{RawFrame, Vec2};
use crate::planner::{ArmConfig, ArmState, TrajectoryPlan};

#[derive(Debug, Clone, PartialEq)]
struct Motion {
    plan: PlanId,
    phases: Vec<TrajectoryPlan>,
    /// Virtual time the first phase starts moving.
    start: f64,
}

impl Motion {
    fn duration(&self) -> f64 {
        self.phases.iter().map(TrajectoryPlan::duration).sum()
    }

    fn state_at(&self, t: f64) -> ArmState {
        let mut tau = t - self.start;
        for phase in &self.phases {
            if tau <= phase.duration() {
                return phase.state_at(tau);
            }
            tau -= phase.duration();
        }
        *self.phases.last().expect("motions have phases").goal()
    }
}

/// Runs at most one multi-phase motion at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmExecutor {
    arm: ArmConfig,
    rest: ArmState,
    motion: Option<Motion>,
}

impl ArmExecutor {
    pub fn new(arm: ArmConfig) -> Self {
        Self {
            rest: arm.ready_state(),
            arm,
            motion: None,
        }
    }

    pub fn arm(&self) -> &ArmConfig {
        &self.arm
    }

    pub fn active_plan(&self) -> Option<PlanId> {
        self.motion.as_ref().map(|m| m.plan)
    }

    pub fn pose_at(&self, t: f64) -> ArmState {
        match &self.motion {
            Some(m) => m.state_at(t),
            None => self.rest,
        }
    }

    /// Starts `phases` at `start`. Any running motion must have been
    /// preempted first.
    pub fn start(&mut self, plan: PlanId, phases: Vec<TrajectoryPlan>, start: f64) {
        debug_assert!(self.motion.is_none(), "a motion is still running");
        debug_assert!(!phases.is_empty());
        self.motion = Some(Motion {
            plan,
            phases,
            start,
        });
    }

    /// Stops `plan` where it is at `t`. Returns false for stale ids.
    pub fn preempt(&mut self, plan: PlanId, t: f64) -> bool {
        if self.active_plan() != Some(plan) {
            return false;
        }
        self.rest = self.pose_at(t);
        self.motion = None;
        true
    }

    /// Plan id and virtual finish time of the running motion.
    pub fn finish(&self) -> Option<(PlanId, f64)> {
        self.motion
            .as_ref()
            .map(|m| (m.plan, m.start + m.duration()))
    }

    /// Ends the running motion at its goal, returning its id and finish time.
    pub fn complete(&mut self) -> Option<(PlanId, f64)> {
        let done = self.finish();
        if let Some(m) = self.motion.take() {
            self.rest = *m.phases.last().expect("motions have phases").goal();
        }
        done
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum ObjectState {
    Hidden,
    Revealed { point: [f64; 2], t: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum WorldEvent {
    Frame(RawFrame),
    ObjectDetected { point: [f64; 2], t: f64 },
    MotionFinished { plan: PlanId, t: f64 },
}

impl WorldEvent {
    pub fn time(&self) -> f64 {
        match self {
            WorldEvent::Frame(f) => f.t,
            WorldEvent::ObjectDetected { t, .. } | WorldEvent::MotionFinished { t, .. } => *t,
        }
    }
}

/// Human replay, object visibility and the arm on one virtual clock.
#[derive(Debug, Clone)]
pub struct World {
    clock: f64,
    human: HumanTrajectory,
    cursor: usize,
    detection_latency: f64,
    object: ObjectState,
    executor: ArmExecutor,
}

impl World {
    pub fn new(human: HumanTrajectory, detection_latency: f64, arm: ArmConfig) -> Self {
        Self {
            clock: 0.0,
            human,
            cursor: 0,
            detection_latency,
            object: ObjectState::Hidden,
            executor: ArmExecutor::new(arm),
        }
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn human(&self) -> &HumanTrajectory {
        &self.human
    }

    pub fn object(&self) -> ObjectState {
        self.object
    }

    pub fn executor(&self) -> &ArmExecutor {
        &self.executor
    }

    pub fn executor_mut(&mut self) -> &mut ArmExecutor {
        &mut self.executor
    }

    pub fn arm(&self) -> ArmState {
        self.executor.pose_at(self.clock)
    }

    pub fn detection_time(&self) -> f64 {
        self.human.release_time + self.detection_latency
    }

    /// Object position as seen by the detector at the current clock.
    pub fn detect_object(&self) -> Option<Vec2> {
        (self.clock >= self.detection_time()).then(|| self.human.target())
    }

    /// Time of the earliest pending event.
    pub fn next_due(&self) -> Option<f64> {
        self.pending().map(|(t, _)| t)
    }

    /// Earliest pending event as (time, rank); detections rank before motion
    /// completions, which rank before frames.
    fn pending(&self) -> Option<(f64, u8)> {
        let mut best: Option<(f64, u8)> = None;
        let mut offer = |t: f64, rank: u8| {
            if best.is_none_or(|(bt, br)| t < bt || (t == bt && rank < br)) {
                best = Some((t, rank));
            }
        };
        if self.object == ObjectState::Hidden {
            offer(self.detection_time(), 0);
        }
        if let Some((_, t)) = self.executor.finish() {
            offer(t, 1);
        }
        if let Some(f) = self.human.frames.get(self.cursor) {
            offer(f.t, 2);
        }
        best
    }

    /// Moves the clock to `t`, firing every event due on the way in order.
    pub fn advance_to(&mut self, t: f64) -> Result<Vec<WorldEvent>, SimError> {
        if t < self.clock {
            return Err(SimError::ClockBackwards {
                now: self.clock,
                to: t,
            });
        }
        let mut events = Vec::new();
        while let Some((due, rank)) = self.pending() {
            if due > t {
                break;
            }
            match rank {
                0 => {
                    let point = self.human.target_point;
                    self.object = ObjectState::Revealed { point, t: due };
                    events.push(WorldEvent::ObjectDetected { point, t: due });
                }
                1 => {
                    let (plan, _) = self.executor.complete().expect("pending motion");
                    events.push(WorldEvent::MotionFinished { plan, t: due });
                }
                _ => {
                    events.push(WorldEvent::Frame(self.human.frames[self.cursor].clone()));
                    self.cursor += 1;
                }
            }
        }
        self.clock = t;
        Ok(events)
    }

    pub fn step(&mut self, dt: f64) -> Result<Vec<WorldEvent>, SimError> {
        if !(dt > 0.0) {
            return Err(SimError::BadStep(dt));
        }
        let mut to = self.clock + dt;
        // Absorb rounding in accumulated steps so a tick lands on its frame.
        if let Some(due) = self.next_due() {
            if due > to && due - to <= 1e-9 * to.abs().max(1.0) {
                to = due;
            }
        }
        self.advance_to(to)
    }
}
