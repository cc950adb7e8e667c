use std::collections::BTreeMap;
use std::sync::Arc;

use handover_core::arbitration::{ActionState, StateKind};
use handover_core::geometry::{RawFrame, Vec2};
use handover_core::grid::GridSpec;
use handover_core::model::IntentModel;
use handover_core::sim::{
    ArmExecutor, Mode, Pipeline, PredictionError, Predictor, SimError, TrialConfig,
};
use thiserror::Error;

use crate::protocol::{ClientMessage, Peak, ServerMessage};

pub type SessionId = u64;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("preemptive mode needs a model, none was loaded")]
    ModelUnavailable,
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error("grid {want_n}x{want_m} does not match the model grid {n}x{m}")]
    GridMismatch {
        want_n: usize,
        want_m: usize,
        n: usize,
        m: usize,
    },
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// One live trial driven by client messages. Client timestamps are the
/// clock; the arm is advanced to each message time before it is handled.
#[derive(Debug)]
pub struct Session {
    id: SessionId,
    pipeline: Pipeline,
    exec: ArmExecutor,
    t0: Option<f64>,
    last_t: Option<f64>,
    placed: Option<[f64; 2]>,
    closed: bool,
}

impl Session {
    fn new(id: SessionId, pipeline: Pipeline) -> Self {
        let exec = ArmExecutor::new(pipeline.config().arm);
        Self {
            id,
            pipeline,
            exec,
            t0: None,
            last_t: None,
            placed: None,
            closed: false,
        }
    }

    pub fn id(&self) -> SessionId {
        self.id
    }

    pub fn mode(&self) -> Mode {
        self.pipeline.mode()
    }

    pub fn state(&self) -> &ActionState {
        self.pipeline.arbiter().state()
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Parses and handles one text message. Malformed input yields an error
    /// message and leaves the session unchanged.
    pub fn handle_text(&mut self, text: &str) -> Vec<ServerMessage> {
        match serde_json::from_str::<ClientMessage>(text) {
            Ok(msg) => self.handle(msg),
            Err(e) => vec![ServerMessage::error(format!("malformed message: {e}"))],
        }
    }

    pub fn handle(&mut self, msg: ClientMessage) -> Vec<ServerMessage> {
        if self.closed {
            return vec![ServerMessage::error("session is closed")];
        }
        let mut out = Vec::new();
        let result = match msg {
            ClientMessage::Frame {
                t,
                palm,
                elbow,
                shoulder,
                head_pos,
                head_rot,
            } => self.on_frame(
                RawFrame {
                    t,
                    palm,
                    elbow,
                    shoulder,
                    head_pos,
                    head_rot,
                },
                &mut out,
            ),
            ClientMessage::Place { point, t } => self.on_place(point, t, &mut out),
            ClientMessage::Reset { mode } => self.on_reset(mode, &mut out),
            ClientMessage::Close {} => {
                self.closed = true;
                Ok(())
            }
        };
        if let Err(e) = result {
            out.push(ServerMessage::error(e));
        }
        out
    }

    fn check_time(&self, t: f64) -> Result<(), String> {
        if !t.is_finite() {
            return Err(format!("timestamp {t} is not finite"));
        }
        match self.last_t {
            Some(last) if t < last => Err(format!(
                "timestamp {t} precedes the previous message at {last}"
            )),
            _ => Ok(()),
        }
    }

    fn on_frame(&mut self, raw: RawFrame, out: &mut Vec<ServerMessage>) -> Result<(), String> {
        raw.validate().map_err(|e| e.to_string())?;
        if let Some(last) = self.last_t {
            if raw.t <= last {
                return Err(format!("frame time {} must be after {last}", raw.t));
            }
        }
        self.check_time(raw.t)?;
        self.t0.get_or_insert(raw.t);
        self.last_t = Some(raw.t);
        self.finish_motions(raw.t, out)?;
        let res = self
            .pipeline
            .on_frame(&raw, &mut self.exec)
            .map_err(|e| e.to_string())?;
        if let (Some(values), Some(fused)) = (&res.heatmap, &res.fused) {
            let (p, cell) = fused.peak();
            out.push(ServerMessage::Heatmap {
                t: raw.t,
                values: values.rows(),
                fused: fused.rows(),
                peak: Peak { p, cell },
            });
        }
        if !res.decision.is_empty() {
            out.push(self.robot(raw.t));
        }
        Ok(())
    }

    fn on_place(
        &mut self,
        point: [f64; 2],
        t: Option<f64>,
        out: &mut Vec<ServerMessage>,
    ) -> Result<(), String> {
        if self.placed.is_some() {
            return Err("object already placed; send reset for a new trial".into());
        }
        let latency = self.pipeline.config().sim.detection_latency;
        let t = t.unwrap_or_else(|| self.last_t.map_or(0.0, |l| l + latency));
        self.check_time(t)?;
        self.finish_motions(t, out)?;
        self.pipeline
            .on_object_detected(Vec2::from(point), t, &mut self.exec)
            .map_err(|e| e.to_string())?;
        self.t0.get_or_insert(t);
        self.last_t = Some(t);
        self.placed = Some(point);
        out.push(self.robot(t));
        // The pick is committed; run it to the grasp.
        self.finish_motions(f64::INFINITY, out)?;
        if self.pipeline.grasped_at().is_none() {
            return Err("arm stopped before reaching the object".into());
        }
        Ok(())
    }

    fn on_reset(&mut self, mode: Option<Mode>, out: &mut Vec<ServerMessage>) -> Result<(), String> {
        if let Some(m) = mode {
            self.pipeline.set_mode(m).map_err(|e| e.to_string())?;
        }
        self.pipeline.reset(None);
        self.exec = ArmExecutor::new(self.pipeline.config().arm);
        self.t0 = None;
        self.last_t = None;
        self.placed = None;
        out.push(self.robot(0.0));
        Ok(())
    }

    /// Completes every motion due by `until`, in time order.
    fn finish_motions(&mut self, until: f64, out: &mut Vec<ServerMessage>) -> Result<(), String> {
        while let Some((_, due)) = self.exec.finish() {
            if due > until {
                break;
            }
            let (plan, t) = self.exec.complete().expect("motion is running");
            self.pipeline
                .on_motion_finished(plan, t, &mut self.exec)
                .map_err(|e| e.to_string())?;
            out.push(self.robot(t));
            if self.pipeline.grasped_at().is_some() {
                out.push(self.metrics());
                break;
            }
        }
        Ok(())
    }

    fn goal(&self) -> Option<[f64; 2]> {
        match self.state() {
            ActionState::Idle => None,
            ActionState::Predictive { goal, .. } => {
                Some(self.pipeline.config().grid.cell_center(*goal).into())
            }
            ActionState::Definitive { target, .. } => Some(*target),
            ActionState::Grasped => self.placed,
        }
    }

    fn robot(&self, t: f64) -> ServerMessage {
        let pose = self.exec.pose_at(t);
        ServerMessage::Robot {
            t,
            pose: pose.pos,
            gripper: pose.gripper,
            action: self.state().kind(),
            goal: self.goal(),
            preempted: self.pipeline.last_preempted(),
        }
    }

    fn metrics(&self) -> ServerMessage {
        let t0 = self.t0.unwrap_or(0.0);
        let grid = &self.pipeline.config().grid;
        let error_grids = match (self.pipeline.goal_at_detection(), self.placed) {
            (Some(goal), Some(p)) => grid
                .cell_of(&Vec2::from(p))
                .ok()
                .map(|cell| PredictionError::between(goal, cell, grid).euclid_grids),
            _ => None,
        };
        ServerMessage::Metrics {
            response_time: self.pipeline.response_time().unwrap_or(t0) - t0,
            start_to_grab: self.pipeline.grasped_at().unwrap_or(t0) - t0,
            error_grids,
        }
    }

    pub fn action(&self) -> StateKind {
        self.state().kind()
    }
}

/// Owns every open session.
#[derive(Debug)]
pub struct SessionManager {
    config: TrialConfig,
    model: Option<Arc<IntentModel>>,
    seed: u64,
    sessions: BTreeMap<SessionId, Session>,
    next_id: SessionId,
}

impl SessionManager {
    pub fn new(
        config: TrialConfig,
        model: Option<Arc<IntentModel>>,
        seed: u64,
    ) -> Result<Self, ServiceError> {
        config.validate()?;
        if let Some(m) = &model {
            check_grid(&config.grid, m.grid())?;
        }
        Ok(Self {
            config,
            model,
            seed,
            sessions: BTreeMap::new(),
            next_id: 1,
        })
    }

    pub fn has_model(&self) -> bool {
        self.model.is_some()
    }

    /// Opens a session with a fresh arbiter and the arm at its ready pose.
    /// `grid` overrides the configured grid; it must match the model's.
    pub fn open_session(
        &mut self,
        mode: Mode,
        grid: Option<GridSpec>,
    ) -> Result<SessionId, ServiceError> {
        let mut config = self.config.clone();
        if let Some(g) = grid {
            g.validate().map_err(SimError::from)?;
            config.grid = g;
        }
        let predictor = match (&self.model, mode) {
            (Some(m), _) => {
                check_grid(&config.grid, m.grid())?;
                Predictor::Model(m.clone())
            }
            (None, Mode::Preemptive) => return Err(ServiceError::ModelUnavailable),
            (None, Mode::Reactive) => Predictor::None,
        };
        let pipeline = Pipeline::new(config, mode, predictor, self.seed)?;
        let id = self.next_id;
        self.next_id += 1;
        self.sessions.insert(id, Session::new(id, pipeline));
        Ok(id)
    }

    pub fn session(&self, id: SessionId) -> Option<&Session> {
        self.sessions.get(&id)
    }

    pub fn handle_message(
        &mut self,
        id: SessionId,
        text: &str,
    ) -> Result<Vec<ServerMessage>, ServiceError> {
        let session = self
            .sessions
            .get_mut(&id)
            .ok_or(ServiceError::UnknownSession(id))?;
        let out = session.handle_text(text);
        if session.is_closed() {
            self.sessions.remove(&id);
        }
        Ok(out)
    }

    pub fn close_session(&mut self, id: SessionId) -> Result<(), ServiceError> {
        self.sessions
            .remove(&id)
            .map(|_| ())
            .ok_or(ServiceError::UnknownSession(id))
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }
}

fn check_grid(want: &GridSpec, model: &GridSpec) -> Result<(), ServiceError> {
    if want.n != model.n || want.m != model.m {
        return Err(ServiceError::GridMismatch {
            want_n: want.n,
            want_m: want.m,
            n: model.n,
            m: model.m,
        });
    }
    Ok(())
}
