//! Core of the egostream assistant backend.
//!
//! Everything here is synchronous. The server crate drives these types from
//! its async runtime, one set of loops per registered stream.

pub mod codec;
pub mod config;
pub mod corpus;
pub mod gateway;
pub mod grounding;
pub mod ingest;
pub mod media;
pub mod memory;
pub mod orchestrator;
pub mod retrieval;
pub mod script;
pub mod speech;
pub mod text;
pub mod timeline;

pub use config::Config;
pub use timeline::{Frame, MediaTime, StreamClock, TranscriptSegment};
