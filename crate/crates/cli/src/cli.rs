//! Argument parsing and resolution into fully specified commands.
//!
//! Values are taken from flags first, then from the `--config` file, then
//! (for the seed only) from `CODED_BACKOFF_SEED`, then from defaults.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use coded_backoff_core::adversary::{min_window, theorem_rate, validate_with_rate};
use coded_backoff_core::sim::{default_stride, RunConfig, ScheduleSpec};
use coded_backoff_core::{ArrivalSchedule, Kappa, SchedulePattern};
use thiserror::Error;

use crate::config::{ConfigError, FileConfig, SEED_ENV};
use crate::trace::{load_arrivals, load_slot_trace, SlotTrace, TraceError};

pub const DEFAULT_KAPPA: u32 = 64;
pub const DEFAULT_HORIZON: u64 = 1_000_000;
pub const DEFAULT_TRIALS: u64 = 10_000;

#[derive(Debug, Parser)]
#[command(
    name = "coded-backoff",
    version,
    about = "Decodable backoff on a coded radio channel"
)]
pub struct Cli {
    #[command(subcommand)]
    pub verb: Verb,
}

#[derive(Debug, Subcommand)]
pub enum Verb {
    /// Simulate one arrival schedule.
    Run(SimArgs),
    /// Inject `--n` packets at slot 0 and run until all are delivered.
    Batch(SimArgs),
    /// Run a grid of independent cells.
    Sweep(SweepArgs),
    /// Check an arrival trace against the window-rate cap.
    Validate(ValidateArgs),
    /// Feed a slot trace to the decoding-event detector.
    Replay(ReplayArgs),
    /// Round-trip random transmission matrices through the coding oracle.
    VerifyCoding(CodingArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScheduleKind {
    Batch,
    Smooth,
    Bursts,
    Spread,
    Trace,
}

impl FromStr for ScheduleKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        <Self as ValueEnum>::from_str(s, true)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Human,
    Csv,
    Jsonl,
}

impl FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        <Self as ValueEnum>::from_str(s, true)
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct SimArgs {
    /// Decoding threshold (at least 6).
    #[arg(long)]
    pub kappa: Option<u32>,
    /// Slots to simulate.
    #[arg(long)]
    pub horizon: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub schedule: Option<ScheduleKind>,
    /// Batch size.
    #[arg(long)]
    pub n: Option<u64>,
    /// Adversary window (at least 16 kappa^2).
    #[arg(long)]
    pub w: Option<u64>,
    /// Arrival rate per slot; defaults to 1 - 5/ln(kappa).
    #[arg(long)]
    pub rate: Option<f64>,
    /// Stop generated arrivals at this slot.
    #[arg(long)]
    pub arrivals_until: Option<u64>,
    /// Arrival trace (`slot,count` lines) for `--schedule trace`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Write the JSONL record stream here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Exit with status 2 on the first failed potential check.
    #[arg(long)]
    pub strict_lemmas: bool,
    /// Round-trip every decoding window through random linear coding.
    #[arg(long)]
    pub verify_coding: bool,
    /// Record sparse-system slots.
    #[arg(long)]
    pub sparse: bool,
    /// Track the backlog maximum over every slot.
    #[arg(long)]
    pub continuous_backlog: bool,
    /// Stop once arrivals are over and the system is empty.
    #[arg(long)]
    pub drain: bool,
    /// Sample a slot record every this many slots.
    #[arg(long)]
    pub stride: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    /// Comma-separated thresholds; defaults to `--kappa`.
    #[arg(long, value_delimiter = ',')]
    pub kappas: Vec<u32>,
    /// Runs per threshold.
    #[arg(long)]
    pub runs: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub kappa: Option<u32>,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub w: Option<u64>,
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ReplayArgs {
    /// Decoding threshold (at least 1).
    #[arg(long)]
    pub kappa: Option<u32>,
    /// Slot trace (`slot,a;b;c` lines).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Pending good slots the detector looks back over; defaults to 2 kappa.
    #[arg(long)]
    pub lookback: Option<usize>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CodingArgs {
    #[arg(long)]
    pub kappa: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<u64>,
    /// Fixed matrix size; drawn from 1..=kappa when unset.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Clap(#[from] clap::Error),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunJob {
    pub config: RunConfig,
    pub format: Format,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Run(RunJob),
    Sweep {
        grid: Vec<RunConfig>,
        jobs: usize,
        format: Format,
        out: Option<PathBuf>,
    },
    Validate {
        schedule: ArrivalSchedule,
        kappa: u32,
        w: u64,
        rate: f64,
    },
    Replay {
        trace: SlotTrace,
        kappa: u32,
        lookback: Option<usize>,
        format: Format,
        out: Option<PathBuf>,
    },
    VerifyCoding {
        kappa: u32,
        trials: u64,
        seed: u64,
        size: Option<usize>,
        format: Format,
        out: Option<PathBuf>,
    },
}

/// Parses and resolves `argv` (including the program name), reading the
/// seed fallback from the process environment.
pub fn parse_args<I, T>(argv: I) -> Result<Command, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv)?;
    resolve(cli, std::env::var(SEED_ENV).ok())
}

struct Sources {
    file: FileConfig,
    env_seed: Option<String>,
}

impl Sources {
    fn new(config: Option<&Path>, env_seed: Option<String>) -> Result<Self, CliError> {
        let file = match config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        Ok(Self { file, env_seed })
    }

    fn get<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => Ok(self.file.get(key)?),
        }
    }

    fn flag(&self, flag: bool, key: &str) -> Result<bool, CliError> {
        Ok(flag || self.file.flag(key)?)
    }

    fn path(&self, flag: Option<PathBuf>, key: &str) -> Option<PathBuf> {
        flag.or_else(|| self.file.raw(key).map(PathBuf::from))
    }

    fn seed(&self, flag: Option<u64>) -> Result<u64, CliError> {
        if let Some(s) = self.get(flag, "seed")? {
            return Ok(s);
        }
        match &self.env_seed {
            Some(v) => v
                .trim()
                .parse()
                .map_err(|_| usage(format!("{SEED_ENV}=`{v}` is not a non-negative integer"))),
            None => Ok(0),
        }
    }

    fn kappa(&self, flag: Option<u32>) -> Result<u32, CliError> {
        Ok(self.get(flag, "kappa")?.unwrap_or(DEFAULT_KAPPA))
    }

    fn format(&self, flag: Option<Format>) -> Result<Format, CliError> {
        Ok(self.get(flag, "format")?.unwrap_or_default())
    }
}

fn check_kappa(kappa: u32) -> Result<(), CliError> {
    Kappa::new(kappa).map(|_| ()).map_err(|_| {
        usage(format!(
            "--kappa {kappa} is too small: the protocol needs kappa >= 6"
        ))
    })
}

fn check_window(w: u64, kappa: u32) -> Result<(), CliError> {
    let min = min_window(kappa);
    if w < min {
        return Err(usage(format!(
            "--w {w} is below 16*kappa^2 = {min} for kappa {kappa}"
        )));
    }
    Ok(())
}

fn resolve_rate(rate: Option<f64>, kappa: u32) -> Result<f64, CliError> {
    match rate {
        Some(r) if r > 0.0 && r <= 1.0 => Ok(r),
        Some(r) => Err(usage(format!("--rate {r} must be in (0, 1]"))),
        None => {
            let r = theorem_rate(kappa);
            if r > 0.0 && r <= 1.0 {
                Ok(r)
            } else {
                Err(usage(format!(
                    "default rate 1 - 5/ln({kappa}) = {r:.4} is not in (0, 1]; pass --rate"
                )))
            }
        }
    }
}

/// Default horizon for a batch of `n`: twice the delivery bound.
pub fn batch_horizon(kappa: u32, n: u64) -> u64 {
    let k = kappa as f64;
    let bound = 4.0 * k + n as f64 * (1.0 + 10.0 / k);
    2 * bound.ceil() as u64 + 64
}

fn sim_config(args: &SimArgs, src: &Sources, batch_verb: bool) -> Result<RunConfig, CliError> {
    let kappa = src.kappa(args.kappa)?;
    check_kappa(kappa)?;
    let n = src.get(args.n, "n")?;
    let kind = if batch_verb {
        ScheduleKind::Batch
    } else {
        match src.get(args.schedule, "schedule")? {
            Some(k) => k,
            None if n.is_some() => ScheduleKind::Batch,
            None => ScheduleKind::Smooth,
        }
    };
    let w = src.get(args.w, "w")?;
    let rate = src.get(args.rate, "rate")?;
    let (schedule, default_horizon, drain) = match kind {
        ScheduleKind::Batch => {
            let n = n.ok_or_else(|| usage("batch schedule needs --n"))?;
            if n == 0 {
                return Err(usage("--n must be at least 1"));
            }
            (ScheduleSpec::Batch { n }, batch_horizon(kappa, n), true)
        }
        ScheduleKind::Smooth | ScheduleKind::Bursts | ScheduleKind::Spread => {
            let w = w.unwrap_or_else(|| min_window(kappa));
            check_window(w, kappa)?;
            let rate = resolve_rate(rate, kappa)?;
            let pattern = match kind {
                ScheduleKind::Smooth => SchedulePattern::Smooth,
                ScheduleKind::Bursts => SchedulePattern::FrontloadedBursts,
                _ => SchedulePattern::RandomSpread,
            };
            let spec = ScheduleSpec::Windowed {
                w,
                pattern,
                rate: Some(rate),
                arrivals_until: src.get(args.arrivals_until, "arrivals_until")?,
            };
            (spec, DEFAULT_HORIZON, false)
        }
        ScheduleKind::Trace => {
            let path = src
                .path(args.trace.clone(), "trace")
                .ok_or_else(|| usage("trace schedule needs --trace"))?;
            let mut s = load_arrivals(&path)?;
            if let Some(w) = w {
                check_window(w, kappa)?;
                let rate = resolve_rate(rate, kappa)?;
                if let Err(v) = validate_with_rate(&s, w, rate) {
                    return Err(usage(format!(
                        "{}: window starting at slot {} holds {} arrivals, cap is {}",
                        path.display(),
                        v.window_start,
                        v.sum,
                        v.cap
                    )));
                }
                s.window_w = Some(w);
                s.declared_rate = Some(rate);
            }
            let horizon = s.horizon.max(1);
            (ScheduleSpec::Explicit(Arc::new(s)), horizon, true)
        }
    };
    let horizon = src.get(args.horizon, "horizon")?.unwrap_or(default_horizon);
    if horizon == 0 {
        return Err(usage("--horizon must be at least 1"));
    }
    let seed = src.seed(args.seed)?;
    let mut cfg = RunConfig::new(kappa, horizon, seed, schedule);
    cfg.strict_lemmas = src.flag(args.strict_lemmas, "strict_lemmas")?;
    cfg.verify_coding = src.flag(args.verify_coding, "verify_coding")?;
    cfg.detect_sparse = src.flag(args.sparse, "sparse")?;
    cfg.continuous_backlog = src.flag(args.continuous_backlog, "continuous_backlog")?;
    cfg.stop_when_drained = (drain && batch_verb) || src.flag(args.drain, "drain")?;
    cfg.stride = src
        .get(args.stride, "stride")?
        .unwrap_or(default_stride(horizon));
    if cfg.stride == 0 {
        return Err(usage("--stride must be at least 1"));
    }
    Ok(cfg)
}

/// Resolves parsed arguments. `env_seed` is the raw value of the seed
/// environment variable, if set.
pub fn resolve(cli: Cli, env_seed: Option<String>) -> Result<Command, CliError> {
    match cli.verb {
        Verb::Run(a) => run_job(&a, env_seed, false),
        Verb::Batch(a) => run_job(&a, env_seed, true),
        Verb::Sweep(a) => {
            let src = Sources::new(a.sim.config.as_deref(), env_seed)?;
            let mut kappas = a.kappas.clone();
            if kappas.is_empty() {
                if let Some(list) = src.file.raw("kappas") {
                    for k in list.split(',') {
                        kappas.push(k.trim().parse().map_err(|_| {
                            usage(format!("config key `kappas`: cannot parse `{k}`"))
                        })?);
                    }
                } else {
                    kappas.push(src.kappa(a.sim.kappa)?);
                }
            }
            let mut templates = Vec::new();
            for &k in &kappas {
                let mut args = a.sim.clone();
                args.kappa = Some(k);
                templates.push(sim_config(&args, &src, false)?);
            }
            let runs = src.get(a.runs, "runs")?.unwrap_or(1);
            if runs == 0 {
                return Err(usage("--runs must be at least 1"));
            }
            let jobs = match src.get(a.jobs, "jobs")? {
                Some(0) => return Err(usage("--jobs must be at least 1")),
                Some(j) => j,
                None => std::thread::available_parallelism().map_or(1, |n| n.get()),
            };
            let grid = crate::sweep::seed_grid(&templates, runs, src.seed(a.sim.seed)?);
            Ok(Command::Sweep {
                grid,
                jobs,
                format: src.format(a.sim.format)?,
                out: src.path(a.sim.out.clone(), "out"),
            })
        }
        Verb::Validate(a) => {
            let src = Sources::new(a.config.as_deref(), env_seed)?;
            let kappa = src.kappa(a.kappa)?;
            check_kappa(kappa)?;
            let path = src
                .path(a.trace.clone(), "trace")
                .ok_or_else(|| usage("validate needs --trace"))?;
            let w = src
                .get(a.w, "w")?
                .ok_or_else(|| usage("validate needs --w"))?;
            check_window(w, kappa)?;
            let rate = resolve_rate(src.get(a.rate, "rate")?, kappa)?;
            Ok(Command::Validate {
                schedule: load_arrivals(&path)?,
                kappa,
                w,
                rate,
            })
        }
        Verb::Replay(a) => {
            let src = Sources::new(a.config.as_deref(), env_seed)?;
            let kappa = src.kappa(a.kappa)?;
            if kappa == 0 {
                return Err(usage("--kappa must be at least 1"));
            }
            let lookback = src.get(a.lookback, "lookback")?;
            if lookback == Some(0) {
                return Err(usage("--lookback must be at least 1"));
            }
            let path = src
                .path(a.trace.clone(), "trace")
                .ok_or_else(|| usage("replay needs --trace"))?;
            Ok(Command::Replay {
                trace: load_slot_trace(&path)?,
                kappa,
                lookback,
                format: src.format(a.format)?,
                out: src.path(a.out.clone(), "out"),
            })
        }
        Verb::VerifyCoding(a) => {
            let src = Sources::new(a.config.as_deref(), env_seed)?;
            let kappa = src.kappa(a.kappa)?;
            if kappa == 0 {
                return Err(usage("--kappa must be at least 1"));
            }
            let size = src.get(a.size, "size")?;
            if size == Some(0) {
                return Err(usage("--size must be at least 1"));
            }
            Ok(Command::VerifyCoding {
                kappa,
                trials: src.get(a.trials, "trials")?.unwrap_or(DEFAULT_TRIALS),
                seed: src.seed(a.seed)?,
                size,
                format: src.format(a.format)?,
                out: src.path(a.out.clone(), "out"),
            })
        }
    }
}

fn run_job(a: &SimArgs, env_seed: Option<String>, batch_verb: bool) -> Result<Command, CliError> {
    let src = Sources::new(a.config.as_deref(), env_seed)?;
    Ok(Command::Run(RunJob {
        config: sim_config(a, &src, batch_verb)?,
        format: src.format(a.format)?,
        out: src.path(a.out.clone(), "out"),
    }))
}
