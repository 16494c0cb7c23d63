use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::LocalityMetrics;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reason {
    A,
    B,
    C,
    D,
    E,
    F,
    G,
    H,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GpuType {
    I,
    II,
    III,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PathDecision {
    Temporal,
    NonTemporal,
}

impl Reason {
    pub const ALL: [Reason; 8] = [Reason::A, Reason::B, Reason::C, Reason::D, Reason::E, Reason::F, Reason::G, Reason::H];

    pub fn letter(self) -> char {
        (b'a' + self as u8) as char
    }
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for Reason {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.trim().chars();
        match (chars.next(), chars.next()) {
            (Some(c @ 'a'..='h'), None) => Ok(Reason::ALL[(c as u8 - b'a') as usize]),
            _ => Err(format!("unknown reason {s:?}")),
        }
    }
}

impl fmt::Display for GpuType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GpuType::I => "I",
            GpuType::II => "II",
            GpuType::III => "III",
        })
    }
}

impl FromStr for GpuType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "I" => Ok(GpuType::I),
            "II" => Ok(GpuType::II),
            "III" => Ok(GpuType::III),
            other => Err(format!("unknown type {other:?}")),
        }
    }
}

impl fmt::Display for PathDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PathDecision::Temporal => "temporal",
            PathDecision::NonTemporal => "nt",
        })
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    num as f64 / den as f64
}

/// Evaluates the reason predicates in the order h, e, f, c, a, g, b, d and
/// returns the first that holds; f when none does.
pub fn classify_reason(m: &LocalityMetrics, uses_shared_memory: bool) -> Reason {
    let l1 = m.l1d();
    let l2 = m.l2();
    let l1_all_nonzero = l1.iter().all(|&v| v != 0);
    if uses_shared_memory {
        return Reason::H;
    }
    if m.log <= 100 {
        return Reason::E;
    }
    if l1.iter().chain(&l2).all(|&v| v == 0) {
        return Reason::F;
    }
    if l1.iter().all(|&v| v == 0) && l2.iter().all(|&v| v != 0) {
        return Reason::C;
    }
    if m.l1d_t_all != 0 && m.l1d_s_all != 0 && m.l1d_t_log == 0 && m.l1d_s_log == 0 {
        return Reason::A;
    }
    if m.l1d_t_all == 0 && m.l1d_s_all != 0 && m.l1d_t_log == 0 && m.l1d_s_log != 0 {
        return Reason::G;
    }
    if l1_all_nonzero {
        let r = ratio(m.l1d_t_log, m.l1d_t_all).max(ratio(m.l1d_s_log, m.l1d_s_all));
        return if r > 0.25 { Reason::B } else { Reason::D };
    }
    Reason::F
}

pub fn reason_to_path(r: Reason) -> PathDecision {
    match r {
        Reason::A | Reason::C | Reason::D | Reason::G => PathDecision::Temporal,
        Reason::B | Reason::E | Reason::F | Reason::H => PathDecision::NonTemporal,
    }
}

pub fn reason_to_type(r: Reason) -> GpuType {
    match r {
        Reason::A | Reason::C | Reason::D | Reason::G => GpuType::I,
        Reason::B | Reason::H => GpuType::II,
        Reason::E | Reason::F => GpuType::III,
    }
}

/// One row of a metrics table, optionally carrying expected labels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub benchmark: String,
    pub metrics: LocalityMetrics,
    pub shared: bool,
    pub gpu_type: Option<GpuType>,
    pub reason: Option<Reason>,
}

#[derive(Deserialize)]
struct RawRow {
    benchmark: String,
    l1d_t_all: u64,
    l1d_t_log: u64,
    l1d_s_all: u64,
    l1d_s_log: u64,
    l2_t_all: u64,
    l2_t_log: u64,
    l2_s_all: u64,
    l2_s_log: u64,
    all: u64,
    log: u64,
    shared: u8,
    #[serde(rename = "type", default)]
    gpu_type: Option<String>,
    #[serde(default)]
    reason: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum MetricsCsvError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("row {row}: {msg}")]
    Field { row: usize, msg: String },
}

fn opt<T: FromStr<Err = String>>(s: Option<String>, row: usize) -> Result<Option<T>, MetricsCsvError> {
    match s.as_deref().map(str::trim) {
        None | Some("") => Ok(None),
        Some(v) => v.parse().map(Some).map_err(|msg| MetricsCsvError::Field { row, msg }),
    }
}

/// Reads a CSV of metric rows with a header naming the ten variables plus
/// `benchmark` and `shared`; `type` and `reason` columns are optional.
pub fn read_metrics_csv<R: Read>(input: R) -> Result<Vec<MetricsRow>, MetricsCsvError> {
    let mut out = Vec::new();
    for (i, raw) in csv::Reader::from_reader(input).deserialize::<RawRow>().enumerate() {
        let r = raw?;
        let row = i + 1;
        if r.shared > 1 {
            return Err(MetricsCsvError::Field { row, msg: format!("shared must be 0 or 1, got {}", r.shared) });
        }
        out.push(MetricsRow {
            benchmark: r.benchmark,
            metrics: LocalityMetrics {
                l1d_t_all: r.l1d_t_all,
                l1d_t_log: r.l1d_t_log,
                l1d_s_all: r.l1d_s_all,
                l1d_s_log: r.l1d_s_log,
                l2_t_all: r.l2_t_all,
                l2_t_log: r.l2_t_log,
                l2_s_all: r.l2_s_all,
                l2_s_log: r.l2_s_log,
                all: r.all,
                log: r.log,
            },
            shared: r.shared == 1,
            gpu_type: opt(r.gpu_type, row)?,
            reason: opt(r.reason, row)?,
        });
    }
    Ok(out)
}
