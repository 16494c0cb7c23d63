//! Durable-write ordering, crash images, recovery and the atomicity oracle.

mod image;
mod plan;
mod recover;

pub use image::{PersistRecord, PersistSource, PersistTrace, PmImage, TxKey, Writer};
pub use plan::{plan_values, TxLayout, ValuePlan};
pub use recover::{
    check_atomicity, check_order, crash_at, recover, AtomicityReport, ByteMismatch, CrashError, OrderViolation, RecoveryError,
    TxViolation,
};
