//! HTTP/WebSocket service for the egostream assistant backend.

pub mod api;
pub mod events;
pub mod mock_models;
pub mod runtime;

pub use api::{router, AppState};
pub use events::{ApiEvent, EventHub, EventKind};
pub use runtime::{RuntimeDeps, StreamRuntime, StreamStatus};
