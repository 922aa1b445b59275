pub mod ann;
pub mod error;
pub mod geo;
pub mod graph;
pub mod interop;
pub mod registry;
pub mod seed;
pub mod store;
pub mod swarm;

pub type Id = u64;

pub use error::{Error, Result};
