//! Trace-driven, cycle-approximate simulator of a GPU memory hierarchy backed
//! by persistent memory, with adaptive data-path selection for undo-logging
//! durable transactions.

pub mod agpm;
pub mod engine;
pub mod harness;
pub mod hierarchy;
pub mod persist;
pub mod strategy;
pub mod trace;

pub use engine::{simulate, SimConfig, SimOutput};
pub use harness::{compare, crash_test, run, run_trace, RunConfig, RunStats};
pub use strategy::StrategyKind;
