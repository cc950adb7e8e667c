//! Live session endpoint. A client streams skeleton frames and the placement
//! event; the service answers with heatmaps, robot state and trial metrics.

pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{ClientMessage, Peak, ServerMessage};
pub use server::{bind, router, serve, AppState};
pub use session::{ServiceError, Session, SessionId, SessionManager};
