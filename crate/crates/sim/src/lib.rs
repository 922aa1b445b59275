//! A deterministic 2D world standing in for real robots. Units sense the
//! nearest entity, run their detection and response networks and move; the
//! runner drives them through a task script while talking to the services
//! over their public API only.

mod runner;
pub mod scenario;
pub mod world;

use hivemind_server::ClientError;

pub use runner::{render_log, run_scenario, LogEvent, LogLine, RunOutcome, RunStatus};
pub use scenario::Scenario;
pub use world::{create_world, Brain, World, WorldSpec};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid world: {0}")]
    InvalidSpec(String),
    #[error("no unit at index {0}")]
    UnknownUnit(usize),
    #[error("scenario: {0}")]
    Scenario(String),
    #[error("service call failed: {0}")]
    Api(#[from] ClientError),
    #[error(transparent)]
    Core(#[from] hivemind_core::Error),
}

impl From<hivemind_core::ann::CodecError> for SimError {
    fn from(e: hivemind_core::ann::CodecError) -> Self {
        SimError::Core(e.into())
    }
}
