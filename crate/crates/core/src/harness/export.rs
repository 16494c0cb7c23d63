//! Versioned CSV and JSON output. CSV files open with a `#` line naming
//! the schema and version, then a fixed header row; JSON files wrap the
//! payload as `{"schema", "version", "data"}`.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{io_err, CrashReport, HarnessError, Report, RunStats};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    /// `.csv` means CSV, anything else JSON.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Json,
        }
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(format!("unknown format {s:?} (expected csv or json)")),
        }
    }
}

pub trait Export: Serialize + DeserializeOwned {
    const SCHEMA: &'static str;
    fn csv_header() -> Vec<&'static str>;
    fn csv_rows(&self) -> Vec<Vec<String>>;
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    schema: String,
    version: u32,
    data: T,
}

pub fn export<T: Export>(item: &T, format: Format, path: &Path) -> Result<(), HarnessError> {
    fs::write(path, render(item, format)).map_err(io_err(path))
}

pub fn render<T: Export>(item: &T, format: Format) -> String {
    match format {
        Format::Json => {
            let env = Envelope { schema: T::SCHEMA.to_string(), version: SCHEMA_VERSION, data: item };
            let mut s = serde_json::to_string_pretty(&env).expect("stats are always serializable");
            s.push('\n');
            s
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(T::csv_header()).expect("in-memory write");
            for row in item.csv_rows() {
                w.write_record(row).expect("in-memory write");
            }
            let body = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8");
            format!("# schema={} version={SCHEMA_VERSION}\n{body}", T::SCHEMA)
        }
    }
}

/// Reads a JSON export back, refusing other schemas and versions.
pub fn read_json<T: Export>(path: &Path) -> Result<T, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let bad = |msg: String| HarnessError::Format { path: path.to_path_buf(), msg };
    let env: Envelope<T> = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if env.schema != T::SCHEMA || env.version != SCHEMA_VERSION {
        return Err(bad(format!(
            "expected schema {} version {SCHEMA_VERSION}, found {} version {}",
            T::SCHEMA,
            env.schema,
            env.version
        )));
    }
    Ok(env.data)
}

const STATS_COLUMNS: [&str; 25] = [
    "strategy",
    "total_cycles",
    "base_cycles",
    "normalized_time",
    "bytes_s2m",
    "bytes_m2s",
    "l1d_hits",
    "l1d_misses",
    "l2_hits",
    "l2_misses",
    "[1,2]",
    "(2,8]",
    "(8,16]",
    "(16,32]",
    "mem_instrs",
    "log_count",
    "all_count",
    "log_temporal",
    "log_nt",
    "fences",
    "fences_elided",
    "cwppr",
    "wpq_bytes",
    "wpq_stall_cycles",
    "periods",
];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn stats_row(s: &RunStats) -> Vec<String> {
    let mut row = vec![s.strategy.to_string(), s.total_cycles.to_string(), opt(s.base_cycles), opt(s.normalized_time)];
    row.extend([s.bytes_s2m, s.bytes_m2s, s.l1d_hits, s.l1d_misses, s.l2_hits, s.l2_misses].map(|v| v.to_string()));
    row.extend(s.coalescing.buckets().map(|(_, n)| n.to_string()));
    row.extend([s.mem_instrs, s.log_count, s.all_count, s.log_temporal, s.log_nt, s.fences, s.fences_elided].map(|v| v.to_string()));
    row.extend([s.cwppr.to_string(), s.wpq_bytes.to_string(), s.wpq_stall_cycles.to_string(), s.periods.len().to_string()]);
    row
}

impl Export for RunStats {
    const SCHEMA: &'static str = "agpm-run-stats";

    fn csv_header() -> Vec<&'static str> {
        STATS_COLUMNS.to_vec()
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        vec![stats_row(self)]
    }
}

impl Export for Report {
    const SCHEMA: &'static str = "agpm-compare";

    fn csv_header() -> Vec<&'static str> {
        let mut h = STATS_COLUMNS.to_vec();
        h.push("error");
        h
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        self.runs
            .iter()
            .map(|r| match (&r.stats, &r.error) {
                (Some(s), _) => {
                    let mut row = stats_row(s);
                    row.push(String::new());
                    row
                }
                (None, e) => {
                    let mut row = vec![String::new(); STATS_COLUMNS.len() + 1];
                    row[0] = r.strategy.to_string();
                    row[STATS_COLUMNS.len()] = e.clone().unwrap_or_default();
                    row
                }
            })
            .collect()
    }
}

impl Export for CrashReport {
    const SCHEMA: &'static str = "agpm-crash-report";

    fn csv_header() -> Vec<&'static str> {
        vec!["point", "ok", "violating_txs", "recovery_error"]
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        self.points
            .iter()
            .map(|p| {
                vec![
                    p.point.to_string(),
                    p.ok.to_string(),
                    p.violations.len().to_string(),
                    p.recovery_error.clone().unwrap_or_default(),
                ]
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{compare, run_trace, RunConfig};
    use crate::strategy::StrategyKind;
    use crate::trace::{gen_synthetic, Family, GenParams, Trace};
    use crate::agpm::Reason;

    fn trace() -> Trace {
        let p = GenParams { ctas: 4, log_updates: 200, data_updates: 50, ..GenParams::default() };
        gen_synthetic(Family::Reason(Reason::G), &p, 5).unwrap()
    }

    #[test]
    fn csv_has_versioned_header_and_fixed_columns() {
        let s = run_trace(&RunConfig::new(StrategyKind::Agpm), &trace()).unwrap();
        let text = render(&s, Format::Csv);
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# schema=agpm-run-stats version=1"));
        let header = lines.next().unwrap();
        assert!(header.starts_with("strategy,total_cycles,base_cycles,normalized_time,"));
        assert!(header.contains("\"[1,2]\",\"(2,8]\",\"(8,16]\",\"(16,32]\""));
        assert_eq!(lines.count(), 1);
    }

    #[test]
    fn report_json_round_trips() {
        let ks = [StrategyKind::StaticTemporal, StrategyKind::StaticNonTemporal];
        let r = compare(&RunConfig::new(StrategyKind::Agpm), &trace(), &ks).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        export(&r, Format::Json, &path).unwrap();
        assert_eq!(read_json::<Report>(&path).unwrap(), r);
        assert!(read_json::<RunStats>(&path).is_err());
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(Format::from_path(Path::new("a/b.CSV")), Format::Csv);
        assert_eq!(Format::from_path(Path::new("stats.json")), Format::Json);
        assert_eq!(Format::from_path(Path::new("stats")), Format::Json);
    }
}
