//! JSON messages exchanged over a session connection, one object per message.

use handover_core::arbitration::StateKind;
use handover_core::grid::Cell;
use handover_core::planner::Gripper;
use handover_core::sim::Mode;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Frame {
        t: f64,
        palm: [f64; 3],
        elbow: [f64; 3],
        shoulder: [f64; 3],
        head_pos: [f64; 3],
        head_rot: [f64; 9],
    },
    /// The object was put down at `point`. Without `t` the detection time is
    /// the last frame time plus the configured detection latency.
    Place {
        point: [f64; 2],
        #[serde(default)]
        t: Option<f64>,
    },
    Reset {
        #[serde(default)]
        mode: Option<Mode>,
    },
    Close {},
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub p: f64,
    pub cell: Cell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Heatmap {
        t: f64,
        values: Vec<Vec<f64>>,
        fused: Vec<Vec<f64>>,
        peak: Peak,
    },
    Robot {
        t: f64,
        pose: [f64; 3],
        gripper: Gripper,
        action: StateKind,
        /// Current goal on the table, metres.
        goal: Option<[f64; 2]>,
        preempted: bool,
    },
    Metrics {
        response_time: f64,
        start_to_grab: f64,
        error_grids: Option<f64>,
    },
    Error {
        detail: String,
    },
}

impl ServerMessage {
    pub fn error(detail: impl Into<String>) -> Self {
        ServerMessage::Error {
            detail: detail.into(),
        }
    }
}
