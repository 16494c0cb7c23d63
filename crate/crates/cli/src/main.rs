use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use agpm_core::agpm::{classify_reason, read_metrics_csv, reason_to_path, reason_to_type, size_report, SizeConfig};
use agpm_core::harness::{self, export, render, ConfigFile, Export, Format, RunConfig};
use agpm_core::strategy::StrategyKind;
use agpm_core::trace::{gen_synthetic, serialize, Family, GenParams};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

#[derive(Parser)]
#[command(name = "sim", version, about = "GPU persistent-memory hierarchy simulator")]
struct Cli {
    /// Print the effective configuration as TOML and exit.
    #[arg(long, global = true)]
    dump_config: bool,
    /// TOML file with optional [hierarchy] and [agpm] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Option<Cmd>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one trace under one strategy.
    Run {
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long, default_value = "agpm")]
        strategy: String,
        /// Skip the persistency-free base run.
        #[arg(long)]
        no_normalize: bool,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Write a synthetic trace for one family (a..h, or I, II, III).
    Gen {
        #[arg(long)]
        family: Family,
        #[arg(long, default_value_t = GenParams::default().log_updates)]
        logs: u64,
        #[arg(long, default_value_t = GenParams::default().data_updates)]
        data: u64,
        #[arg(long, default_value_t = GenParams::default().ctas)]
        ctas: u32,
        #[arg(long, default_value_t = GenParams::default().warps)]
        warps: u32,
        #[arg(long, default_value_t = GenParams::default().reuse_distance)]
        reuse: u32,
        #[arg(long, default_value_t = GenParams::default().stride)]
        stride: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run several strategies over the same trace.
    Compare {
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long, value_delimiter = ',', default_value = "temporal,nt,pmspec,bucl,themis,agpm")]
        strategies: Vec<String>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Classify rows of a locality-metrics CSV.
    Classify {
        #[arg(long)]
        metrics: PathBuf,
    },
    /// Crash the run at random points and check recovery.
    CrashTest {
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long, default_value = "agpm")]
        strategy: String,
        #[arg(long, default_value_t = 1000)]
        points: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Storage cost of the AGPM buffers.
    SizeReport {
        #[arg(long, default_value_t = SizeConfig::default().entries_per_buffer)]
        entries: u64,
        #[arg(long, default_value_t = SizeConfig::default().counter_bits)]
        counter_bits: u64,
        #[arg(long, default_value_t = SizeConfig::default().tag_bits)]
        tag_bits: u64,
    },
}

#[derive(Args)]
struct SimArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Coalescing-degree threshold for the bucl strategy.
    #[arg(long)]
    bucl_threshold: Option<u32>,
}

#[derive(Args)]
struct OutArgs {
    /// Output file; `.csv` selects CSV, anything else JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the format implied by the file name (csv or json).
    #[arg(long)]
    format: Option<Format>,
}

impl OutArgs {
    fn emit<T: Export>(&self, item: &T) -> Result<()> {
        match &self.out {
            Some(p) => {
                export(item, self.format.unwrap_or_else(|| Format::from_path(p)), p)?;
                info!("wrote {}", p.display());
            }
            None => print!("{}", render(item, self.format.unwrap_or(Format::Json))),
        }
        Ok(())
    }
}

fn strategy(name: &str, bucl: Option<u32>) -> Result<StrategyKind> {
    let k: StrategyKind = name.parse()?;
    Ok(match (k, bucl) {
        (StrategyKind::Bucl { .. }, Some(t)) => StrategyKind::bucl(t)?,
        _ => k,
    })
}

fn run_config(file: &ConfigFile, sim: &SimArgs, k: StrategyKind, out: Option<&Path>) -> RunConfig {
    let mut cfg = RunConfig::new(k).with_file(file.clone());
    cfg.trace = Some(sim.trace.clone());
    cfg.seed = sim.seed;
    cfg.out = out.map(Path::to_path_buf);
    cfg
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SIM_LOG_LEVEL", "warn")).init();
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<ExitCode> {
    let cli = Cli::parse();
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    if cli.dump_config {
        print!("{}", file.to_toml());
        return Ok(ExitCode::SUCCESS);
    }
    let Some(cmd) = cli.cmd else {
        bail!("no subcommand given (try --help)");
    };
    match cmd {
        Cmd::Run { sim, strategy: s, no_normalize, out } => {
            let mut cfg = run_config(&file, &sim, strategy(&s, sim.bucl_threshold)?, out.out.as_deref());
            cfg.normalize = !no_normalize;
            let stats = harness::run(&cfg)?;
            info!("{}: {} cycles", cfg.strategy, stats.total_cycles);
            out.emit(&stats)?;
        }
        Cmd::Gen { family, logs, data, ctas, warps, reuse, stride, seed, out } => {
            let p = GenParams { ctas, warps, log_updates: logs, data_updates: data, reuse_distance: reuse, stride };
            let text = serialize(&gen_synthetic(family, &p, seed)?);
            match out {
                Some(path) => fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?,
                None => std::io::stdout().write_all(text.as_bytes())?,
            }
        }
        Cmd::Compare { sim, strategies, out } => {
            let ks = strategies.iter().map(|s| strategy(s, sim.bucl_threshold)).collect::<Result<Vec<_>>>()?;
            let cfg = run_config(&file, &sim, ks.first().copied().unwrap_or(StrategyKind::Agpm), out.out.as_deref());
            cfg.check()?;
            let report = harness::compare(&cfg, &cfg.load_trace()?, &ks)?;
            out.emit(&report)?;
        }
        Cmd::Classify { metrics } => {
            let f = fs::File::open(&metrics).with_context(|| format!("opening {}", metrics.display()))?;
            let rows = read_metrics_csv(f).with_context(|| format!("reading {}", metrics.display()))?;
            let mut w = csv::Writer::from_writer(std::io::stdout());
            w.write_record(["benchmark", "reason", "type", "path", "expected_reason", "match"])?;
            let mut mismatches = 0;
            for r in &rows {
                let reason = classify_reason(&r.metrics, r.shared);
                let ok = r.reason.is_none_or(|e| e == reason);
                mismatches += usize::from(!ok);
                w.write_record([
                    r.benchmark.clone(),
                    reason.to_string(),
                    reason_to_type(reason).to_string(),
                    format!("{:?}", reason_to_path(reason)),
                    r.reason.map(|e| e.to_string()).unwrap_or_default(),
                    r.reason.map(|_| ok.to_string()).unwrap_or_default(),
                ])?;
            }
            w.flush()?;
            info!("{} rows, {mismatches} disagree with their expected reason", rows.len());
        }
        Cmd::CrashTest { sim, strategy: s, points, out } => {
            let cfg = run_config(&file, &sim, strategy(&s, sim.bucl_threshold)?, out.out.as_deref());
            cfg.check()?;
            let report = harness::crash_test(&cfg, &cfg.load_trace()?, points, cfg.seed)?;
            eprintln!("{}: {}/{} crash points recovered", report.strategy, report.passed, report.points.len());
            out.emit(&report)?;
            if !report.all_passed() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Cmd::SizeReport { entries, counter_bits, tag_bits } => {
            let c = SizeConfig { entries_per_buffer: entries, counter_bits, tag_bits, ..SizeConfig::default() };
            println!("{}", serde_json::to_string_pretty(&size_report(&c))?);
        }
    }
    Ok(ExitCode::SUCCESS)
}
