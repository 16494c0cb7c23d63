//! Experiment plumbing: single runs normalized against a persistency-free
//! base run, strategy comparisons, crash sweeps and stable exports.

mod crash;
mod export;

pub use crash::{crash_test, CrashPoint, CrashReport};
pub use export::{export, read_json, render, Export, Format, SCHEMA_VERSION};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agpm::{classify_reason, AgpmOptions, GpuType, PathDecision, Reason};
use crate::engine::{simulate, EngineError, SimConfig, SimOutput, DEGREE_BUCKETS};
use crate::hierarchy::{ConfigError, HierarchyConfig};
use crate::strategy::{classify_type, StrategyError, StrategyKind, TypeVerdict};
use crate::trace::{parse_trace, ParseError, Trace};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: ParseError },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error("need ≥2 strategies to compare (got {0})")]
    NeedTwo(usize),
    #[error("crash test needs at least one crash point")]
    NoCrashPoints,
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

impl From<ConfigError> for HarnessError {
    fn from(e: ConfigError) -> Self {
        HarnessError::Config(match e {
            ConfigError::Invalid(m) => m,
            ConfigError::Parse(p) => p.to_string(),
        })
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

/// Contents of a `--config` file. Every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub hierarchy: HierarchyConfig,
    pub agpm: AgpmOptions,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let cfg: ConfigFile =
            toml::from_str(&text).map_err(|e| HarnessError::Format { path: path.to_path_buf(), msg: e.to_string() })?;
        cfg.hierarchy.check()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub hierarchy: HierarchyConfig,
    pub strategy: StrategyKind,
    pub trace: Option<PathBuf>,
    /// Drives crash-point sampling; simulation itself has no randomness.
    pub seed: u64,
    pub agpm: AgpmOptions,
    /// Also simulate the persistency-free base and report the ratio.
    pub normalize: bool,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(strategy: StrategyKind) -> Self {
        RunConfig {
            hierarchy: HierarchyConfig::default(),
            strategy,
            trace: None,
            seed: 0,
            agpm: AgpmOptions::default(),
            normalize: true,
            out: None,
        }
    }

    pub fn with_file(mut self, file: ConfigFile) -> Self {
        self.hierarchy = file.hierarchy;
        self.agpm = file.agpm;
        self
    }

    /// Conflicts and missing files, found before anything is simulated.
    pub fn check(&self) -> Result<(), HarnessError> {
        self.hierarchy.check()?;
        let g = self.agpm.geometry;
        if g.sets == 0 || !g.sets.is_power_of_two() {
            return Err(HarnessError::Config(format!("agpm.geometry.sets must be a power of two (got {})", g.sets)));
        }
        if !(1..=31).contains(&g.counter_bits) {
            return Err(HarnessError::Config(format!("agpm.geometry.counter_bits must be 1..=31 (got {})", g.counter_bits)));
        }
        if let StrategyKind::Bucl { threshold: 0 } = self.strategy {
            return Err(StrategyError::BadThreshold.into());
        }
        if let Some(p) = &self.trace {
            if !p.is_file() {
                return Err(HarnessError::Config(format!("trace {} does not exist", p.display())));
            }
        }
        if let Some(dir) = self.out.as_deref().and_then(Path::parent).filter(|d| !d.as_os_str().is_empty()) {
            if !dir.is_dir() {
                return Err(HarnessError::Config(format!("output directory {} does not exist", dir.display())));
            }
        }
        Ok(())
    }

    pub fn load_trace(&self) -> Result<Trace, HarnessError> {
        let path = self.trace.as_deref().ok_or_else(|| HarnessError::Config("no trace given".into()))?;
        load_trace(path)
    }

    fn sim(&self, strategy: StrategyKind, base: bool) -> SimConfig {
        SimConfig { hierarchy: self.hierarchy.clone(), strategy, agpm: self.agpm, base }
    }
}

pub fn load_trace(path: &Path) -> Result<Trace, HarnessError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    parse_trace(std::io::BufReader::new(f)).map_err(|source| HarnessError::Parse { path: path.to_path_buf(), source })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodStats {
    pub kernel: u32,
    pub index: u32,
    pub threshold: u64,
    pub logs: u64,
    pub cwppr: f64,
    pub warmup_decisions: u64,
    pub reasons: BTreeMap<Reason, u64>,
    pub paths: BTreeMap<PathDecision, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelStats {
    pub kernel: u32,
    pub cycles: f64,
    pub reason: Reason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub strategy: StrategyKind,
    pub total_cycles: f64,
    pub base_cycles: Option<f64>,
    pub normalized_time: Option<f64>,
    pub bytes_s2m: u64,
    pub bytes_m2s: u64,
    pub l1d_hits: u64,
    pub l1d_misses: u64,
    pub l2_hits: u64,
    pub l2_misses: u64,
    pub coalescing: Coalescing,
    pub mem_instrs: u64,
    pub log_count: u64,
    pub all_count: u64,
    pub log_temporal: u64,
    pub log_nt: u64,
    pub fences: u64,
    pub fences_elided: u64,
    pub cwppr: f64,
    pub wpq_bytes: u64,
    pub wpq_stall_cycles: f64,
    pub periods: Vec<PeriodStats>,
    pub kernels: Vec<KernelStats>,
}

/// Memory instructions per coalescing degree, in segment transactions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coalescing {
    #[serde(rename = "[1,2]")]
    pub d1_2: u64,
    #[serde(rename = "(2,8]")]
    pub d3_8: u64,
    #[serde(rename = "(8,16]")]
    pub d9_16: u64,
    #[serde(rename = "(16,32]")]
    pub d17_32: u64,
}

impl From<[u64; 4]> for Coalescing {
    fn from([d1_2, d3_8, d9_16, d17_32]: [u64; 4]) -> Self {
        Coalescing { d1_2, d3_8, d9_16, d17_32 }
    }
}

impl Coalescing {
    pub fn buckets(&self) -> [(&'static str, u64); 4] {
        let v = [self.d1_2, self.d3_8, self.d9_16, self.d17_32];
        std::array::from_fn(|i| (DEGREE_BUCKETS[i], v[i]))
    }

    pub fn total(&self) -> u64 {
        self.d1_2 + self.d3_8 + self.d9_16 + self.d17_32
    }
}

/// `strategy / base`, 1.0 when both are empty; the base is floored at one
/// cycle so a trace with persistency work but no plain work stays finite.
pub fn normalized(total: f64, base: f64) -> f64 {
    if total == 0.0 && base == 0.0 {
        1.0
    } else {
        total / base.max(1.0)
    }
}

impl RunStats {
    pub fn from_output(strategy: StrategyKind, o: &SimOutput, base: Option<f64>, shared: &BTreeMap<u32, bool>) -> Self {
        RunStats {
            strategy,
            total_cycles: o.total_cycles,
            base_cycles: base,
            normalized_time: base.map(|b| normalized(o.total_cycles, b)),
            bytes_s2m: o.hier.bytes_s2m,
            bytes_m2s: o.hier.bytes_m2s,
            l1d_hits: o.hier.l1d_hits,
            l1d_misses: o.hier.l1d_misses,
            l2_hits: o.hier.l2_hits,
            l2_misses: o.hier.l2_misses,
            coalescing: Coalescing::from(o.coalescing),
            mem_instrs: o.mem_instrs,
            log_count: o.log_requests,
            all_count: o.all_requests,
            log_temporal: o.log_paths.get(&PathDecision::Temporal).copied().unwrap_or(0),
            log_nt: o.log_paths.get(&PathDecision::NonTemporal).copied().unwrap_or(0),
            fences: o.fences,
            fences_elided: o.fences_elided,
            cwppr: o.cwppr,
            wpq_bytes: o.wpq_bytes_in,
            wpq_stall_cycles: o.wpq_stall_cycles,
            periods: o
                .periods
                .iter()
                .filter_map(|p| {
                    let r = p.record.as_ref()?;
                    Some(PeriodStats {
                        kernel: r.kernel,
                        index: r.index,
                        threshold: r.threshold,
                        logs: r.logs,
                        cwppr: r.cwppr,
                        warmup_decisions: p.warmup_decisions,
                        reasons: p.reasons.clone(),
                        paths: p.paths.clone(),
                    })
                })
                .collect(),
            kernels: o
                .kernel_metrics
                .iter()
                .zip(&o.kernel_cycles)
                .map(|(&(k, m), &cycles)| KernelStats {
                    kernel: k,
                    cycles,
                    reason: classify_reason(&m, shared.get(&k).copied().unwrap_or(false)),
                })
                .collect(),
        }
    }
}

fn shared_flags(trace: &Trace) -> BTreeMap<u32, bool> {
    trace
        .events
        .iter()
        .filter_map(|e| match e {
            crate::trace::TraceEvent::KernelBegin(m) => Some((m.kernel_id, m.uses_shared_memory)),
            _ => None,
        })
        .collect()
}

/// Simulates the configured trace file.
pub fn run(cfg: &RunConfig) -> Result<RunStats, HarnessError> {
    cfg.check()?;
    let trace = cfg.load_trace()?;
    run_trace(cfg, &trace)
}

/// Simulates `trace` under the configured strategy, plus the base run when
/// normalization is on.
pub fn run_trace(cfg: &RunConfig, trace: &Trace) -> Result<RunStats, HarnessError> {
    let base = if cfg.normalize { Some(base_cycles(cfg, trace)?) } else { None };
    run_with_base(cfg, cfg.strategy, trace, base)
}

fn base_cycles(cfg: &RunConfig, trace: &Trace) -> Result<f64, HarnessError> {
    Ok(simulate(trace, &cfg.sim(cfg.strategy, true))?.total_cycles)
}

fn run_with_base(cfg: &RunConfig, k: StrategyKind, trace: &Trace, base: Option<f64>) -> Result<RunStats, HarnessError> {
    let out = simulate(trace, &cfg.sim(k, false))?;
    Ok(RunStats::from_output(k, &out, base, &shared_flags(trace)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRun {
    pub strategy: StrategyKind,
    pub stats: Option<RunStats>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub a: StrategyKind,
    pub b: StrategyKind,
    /// `a`'s normalized time minus `b`'s.
    pub diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub base_cycles: f64,
    pub runs: Vec<StrategyRun>,
    /// Successful strategies, fastest first.
    pub ranking: Vec<StrategyKind>,
    pub deltas: Vec<Delta>,
    pub verdict: Option<TypeVerdict>,
}

impl Report {
    pub fn stats(&self, k: StrategyKind) -> Option<&RunStats> {
        self.runs.iter().find(|r| r.strategy == k).and_then(|r| r.stats.as_ref())
    }

    pub fn gpu_type(&self) -> Option<GpuType> {
        self.verdict.map(|v| v.gpu_type)
    }
}

/// Runs every strategy on the same trace, in parallel. A failing strategy
/// is reported in its slot without stopping the others.
pub fn compare(cfg: &RunConfig, trace: &Trace, strategies: &[StrategyKind]) -> Result<Report, HarnessError> {
    if strategies.len() < 2 {
        return Err(HarnessError::NeedTwo(strategies.len()));
    }
    cfg.check()?;
    let base = base_cycles(cfg, trace)?;
    let results: Vec<Result<RunStats, HarnessError>> = std::thread::scope(|s| {
        let handles: Vec<_> =
            strategies.iter().map(|&k| s.spawn(move || run_with_base(cfg, k, trace, Some(base)))).collect();
        handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
    });
    let runs: Vec<StrategyRun> = strategies
        .iter()
        .zip(results)
        .map(|(&strategy, r)| match r {
            Ok(stats) => StrategyRun { strategy, stats: Some(stats), error: None },
            Err(e) => StrategyRun { strategy, stats: None, error: Some(e.to_string()) },
        })
        .collect();
    let norm = |r: &StrategyRun| r.stats.as_ref().and_then(|s| s.normalized_time);
    let mut ok: Vec<(StrategyKind, f64)> = runs.iter().filter_map(|r| Some((r.strategy, norm(r)?))).collect();
    let mut deltas = Vec::new();
    for (i, &(a, na)) in ok.iter().enumerate() {
        for &(b, nb) in &ok[i + 1..] {
            deltas.push(Delta { a, b, diff: na - nb });
        }
    }
    ok.sort_by(|x, y| x.1.total_cmp(&y.1));
    let find = |k| runs.iter().find(|r| r.strategy == k).and_then(norm);
    let verdict = match (find(StrategyKind::StaticTemporal), find(StrategyKind::StaticNonTemporal)) {
        (Some(t), Some(nt)) => Some(classify_type(t, nt)?),
        _ => None,
    };
    Ok(Report { base_cycles: base, runs, ranking: ok.into_iter().map(|(k, _)| k).collect(), deltas, verdict })
}
