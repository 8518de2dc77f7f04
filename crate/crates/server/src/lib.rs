//! Live session server for the sketch-gated control loop.
//!
//! Exposes a `/session` websocket that drives simulated episodes, plus
//! `GET /tasks` and `GET /sessions/{id}/log`. See [`protocol`] for the
//! message envelope.

pub mod engine;
pub mod protocol;
mod service;

pub use engine::{OpenError, SessionEngine, FRAME_INTERVAL};
pub use protocol::{ClientKind, Envelope, ServerKind, PROTOCOL_VERSION};
pub use service::{router, serve, AppState, ServerConfig};
