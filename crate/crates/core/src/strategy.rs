//! Path-selection strategies compared against each other, and the
//! performance-type verdict for a temporal/non-temporal pair.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agpm::{GpuType, PathDecision};
use crate::trace::{MemOp, Role};

pub const DEFAULT_BUCL_THRESHOLD: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    StaticTemporal,
    StaticNonTemporal,
    PmSpec,
    Bucl { threshold: u32 },
    /// Logs non-temporal, data temporal, with ordering fences elided
    /// whenever the timing model proves them redundant. A simplification of
    /// the published mechanism.
    ThemisSimplified,
    Agpm,
    /// Test-only: persists data before its log. Must fail the crash oracle.
    DataFirstMutant,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StrategyError {
    #[error("unknown strategy {0:?} (expected temporal, nt, pmspec, bucl, themis, agpm or data-first-mutant)")]
    Unknown(String),
    #[error("bucl threshold must be at least 1")]
    BadThreshold,
    #[error("normalized times must be positive (got {perf_t}, {perf_nt})")]
    NonPositive { perf_t: f64, perf_nt: f64 },
}

impl StrategyKind {
    /// The six strategies under comparison (the mutant excluded).
    pub const COMPARED: [StrategyKind; 6] = [
        StrategyKind::StaticTemporal,
        StrategyKind::StaticNonTemporal,
        StrategyKind::PmSpec,
        StrategyKind::Bucl { threshold: DEFAULT_BUCL_THRESHOLD },
        StrategyKind::ThemisSimplified,
        StrategyKind::Agpm,
    ];

    pub fn bucl(threshold: u32) -> Result<Self, StrategyError> {
        if threshold == 0 {
            return Err(StrategyError::BadThreshold);
        }
        Ok(StrategyKind::Bucl { threshold })
    }

    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::StaticTemporal => "temporal",
            StrategyKind::StaticNonTemporal => "nt",
            StrategyKind::PmSpec => "pmspec",
            StrategyKind::Bucl { .. } => "bucl",
            StrategyKind::ThemisSimplified => "themis",
            StrategyKind::Agpm => "agpm",
            StrategyKind::DataFirstMutant => "data-first-mutant",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrategyKind::Bucl { threshold } => write!(f, "bucl({threshold})"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for StrategyKind {
    type Err = StrategyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim() {
            "temporal" => StrategyKind::StaticTemporal,
            "nt" => StrategyKind::StaticNonTemporal,
            "pmspec" => StrategyKind::PmSpec,
            "bucl" => StrategyKind::Bucl { threshold: DEFAULT_BUCL_THRESHOLD },
            "themis" => StrategyKind::ThemisSimplified,
            "agpm" => StrategyKind::Agpm,
            "data-first-mutant" => StrategyKind::DataFirstMutant,
            other => return Err(StrategyError::Unknown(other.to_string())),
        })
    }
}

/// What a strategy may look at when routing one PM request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RequestCtx {
    pub op: MemOp,
    pub role: Role,
    /// Coalescing degree of the issuing warp instruction.
    pub degree: usize,
    /// No L1D MSHR was free at issue.
    pub mshr_exhausted: bool,
}

/// Outcome of [`decide`]: a fixed path, or a deferral to the adaptive
/// selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Fixed(PathDecision),
    Adaptive,
}

/// Routes one PM request. Loads always take the cached path: the
/// non-temporal path here is store-only.
pub fn decide(kind: StrategyKind, ctx: &RequestCtx) -> Route {
    use PathDecision::{NonTemporal as Nt, Temporal as T};
    if ctx.op == MemOp::Load {
        return Route::Fixed(T);
    }
    let is_log = ctx.role == Role::LogUpdate;
    Route::Fixed(match kind {
        StrategyKind::StaticTemporal => T,
        StrategyKind::StaticNonTemporal | StrategyKind::ThemisSimplified => {
            if is_log {
                Nt
            } else {
                T
            }
        }
        StrategyKind::PmSpec => Nt,
        StrategyKind::Bucl { threshold } => {
            if ctx.degree > threshold as usize || ctx.mshr_exhausted {
                Nt
            } else {
                T
            }
        }
        StrategyKind::Agpm => {
            if is_log {
                return Route::Adaptive;
            }
            T
        }
        StrategyKind::DataFirstMutant => {
            if is_log {
                T
            } else {
                Nt
            }
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeVerdict {
    pub perf_t: f64,
    pub perf_nt: f64,
    pub diff: f64,
    pub gpu_type: GpuType,
}

/// Lower normalized time is better; a gap of at most 0.05 is a tie.
pub fn classify_type(perf_t: f64, perf_nt: f64) -> Result<TypeVerdict, StrategyError> {
    if !(perf_t > 0.0 && perf_nt > 0.0) {
        return Err(StrategyError::NonPositive { perf_t, perf_nt });
    }
    let diff = (perf_t - perf_nt).abs();
    let gpu_type = if diff <= 0.05 {
        GpuType::III
    } else if perf_t < perf_nt {
        GpuType::I
    } else {
        GpuType::II
    };
    Ok(TypeVerdict { perf_t, perf_nt, diff, gpu_type })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(op: MemOp, role: Role, degree: usize) -> RequestCtx {
        RequestCtx { op, role, degree, mshr_exhausted: false }
    }

    #[test]
    fn baseline_rules() {
        let st = ctx(MemOp::Store, Role::DataUpdate, 1);
        let log = ctx(MemOp::Store, Role::LogUpdate, 1);
        let ld = ctx(MemOp::Load, Role::Plain, 1);
        assert_eq!(decide(StrategyKind::PmSpec, &ld), Route::Fixed(PathDecision::Temporal));
        assert_eq!(decide(StrategyKind::PmSpec, &st), Route::Fixed(PathDecision::NonTemporal));
        assert_eq!(decide(StrategyKind::StaticTemporal, &log), Route::Fixed(PathDecision::Temporal));
        assert_eq!(decide(StrategyKind::StaticNonTemporal, &log), Route::Fixed(PathDecision::NonTemporal));
        assert_eq!(decide(StrategyKind::StaticNonTemporal, &st), Route::Fixed(PathDecision::Temporal));
        assert_eq!(decide(StrategyKind::Agpm, &log), Route::Adaptive);
        assert_eq!(decide(StrategyKind::Agpm, &st), Route::Fixed(PathDecision::Temporal));
    }

    #[test]
    fn bucl_threshold() {
        let b = StrategyKind::bucl(8).unwrap();
        assert_eq!(decide(b, &ctx(MemOp::Store, Role::LogUpdate, 16)), Route::Fixed(PathDecision::NonTemporal));
        assert_eq!(decide(b, &ctx(MemOp::Store, Role::LogUpdate, 8)), Route::Fixed(PathDecision::Temporal));
        let full = RequestCtx { mshr_exhausted: true, ..ctx(MemOp::Store, Role::DataUpdate, 1) };
        assert_eq!(decide(b, &full), Route::Fixed(PathDecision::NonTemporal));
        assert_eq!(StrategyKind::bucl(0), Err(StrategyError::BadThreshold));
    }

    #[test]
    fn verdicts() {
        assert_eq!(classify_type(1.20, 1.40).unwrap().gpu_type, GpuType::I);
        assert_eq!(classify_type(1.40, 1.20).unwrap().gpu_type, GpuType::II);
        assert_eq!(classify_type(1.22, 1.25).unwrap().gpu_type, GpuType::III);
        assert!(classify_type(0.0, 1.0).is_err());
    }

    #[test]
    fn names_round_trip() {
        for k in StrategyKind::COMPARED {
            assert_eq!(k.name().parse::<StrategyKind>().unwrap(), k);
        }
        assert!("fastest".parse::<StrategyKind>().is_err());
    }
}
