//! Batch reward scoring over one immutable corpus, offline or over TCP.

mod engine;
mod protocol;
mod server;

pub use engine::{Engine, EngineConfig, DEFAULT_MAX_STEPS};
pub use protocol::{
    AlignOverrides, ErrorBody, ErrorCode, ErrorResponse, Health, HealthResponse, InlineVectors, Op, Overrides, Reply,
    RewardOverrides, ScoringRequest, ScoringResponse,
};
pub use server::{probe, Client, Server, ShutdownHandle};
