//! Executes resolved commands.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use coded_backoff_core::adversary::{max_window_sum, validate_with_rate, window_cap};
use coded_backoff_core::channel::DecoderState;
use coded_backoff_core::coding::coding_trials;
use coded_backoff_core::sim::{run, NullSink, Record, RunError, RunReport};
use coded_backoff_core::SlotRecord;
use serde::Serialize;
use thiserror::Error;

use crate::cli::{Command, Format, RunJob};
use crate::output::{human_summary, CsvSummary, JsonlSink, CSV_HEADER};
use crate::sweep::{sweep, SweepError};
use crate::trace::SlotTrace;

/// Payload symbols per packet in `verify-coding`.
pub const CODING_PAYLOAD: usize = 8;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("writing output: {0}")]
    Stdout(#[from] io::Error),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Sweep(#[from] SweepError),
    #[error("{failed} of {total} sweep cells failed")]
    Cells {
        failed: usize,
        total: usize,
        lemma_violation: bool,
    },
    #[error("{0}")]
    Failed(String),
}

impl AppError {
    /// 2 for a failed potential check, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            AppError::Run(RunError::LemmaViolation(_) | RunError::AccountingViolation { .. })
            | AppError::Cells {
                lemma_violation: true,
                ..
            } => 2,
            _ => 1,
        }
    }
}

fn create(path: &Path) -> Result<JsonlSink<BufWriter<File>>, AppError> {
    File::create(path)
        .map(|f| JsonlSink::new(BufWriter::new(f)))
        .map_err(|source| AppError::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn finish(sink: JsonlSink<BufWriter<File>>, path: &Path) -> Result<(), AppError> {
    sink.finish().map(drop).map_err(|source| AppError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn execute(cmd: Command, out: &mut dyn Write) -> Result<(), AppError> {
    match cmd {
        Command::Run(job) => run_job(job, out),
        Command::Sweep {
            grid,
            jobs,
            format,
            out: path,
        } => {
            let results = sweep(&grid, jobs)?;
            let mut file = path.as_deref().map(create).transpose()?;
            if format == Format::Csv {
                writeln!(out, "{CSV_HEADER}")?;
            }
            let mut failed = 0;
            let mut lemma_violation = false;
            for (i, (cell, res)) in grid.iter().zip(&results).enumerate() {
                match res {
                    Ok(r) => {
                        if let Some(f) = file.as_mut() {
                            f.write_line(&Record::Report(Box::new(r.clone())));
                        }
                        print_report(out, format, r, None)?;
                    }
                    Err(e) => {
                        failed += 1;
                        lemma_violation |= matches!(
                            e,
                            RunError::LemmaViolation(_) | RunError::AccountingViolation { .. }
                        );
                        eprintln!("cell {i} (kappa {}, seed {}): {e}", cell.kappa, cell.seed);
                    }
                }
            }
            if let (Some(f), Some(p)) = (file, path.as_deref()) {
                finish(f, p)?;
            }
            if failed > 0 {
                return Err(AppError::Cells {
                    failed,
                    total: grid.len(),
                    lemma_violation,
                });
            }
            Ok(())
        }
        Command::Validate {
            schedule,
            kappa: _,
            w,
            rate,
        } => match validate_with_rate(&schedule, w, rate) {
            Ok(()) => {
                writeln!(
                    out,
                    "ok: max window sum {} <= cap {} (w {w}, rate {rate})",
                    max_window_sum(&schedule, w),
                    window_cap(w, rate)
                )?;
                Ok(())
            }
            Err(v) => {
                writeln!(
                    out,
                    "violation: window starting at slot {} holds {} > cap {}",
                    v.window_start, v.sum, v.cap
                )?;
                Err(AppError::Failed(format!(
                    "schedule exceeds the window cap at slot {}",
                    v.window_start
                )))
            }
        },
        Command::Replay {
            trace,
            kappa,
            lookback,
            format,
            out: path,
        } => replay(&trace, kappa, lookback, format, path.as_deref(), out),
        Command::VerifyCoding {
            kappa,
            trials,
            seed,
            size,
            format,
            out: path,
        } => {
            let s = coding_trials(kappa, trials, seed, size, CODING_PAYLOAD);
            let line = CodingLine {
                kind: "coding",
                kappa,
                trials: s.trials,
                seed,
                singular: s.singular,
                singular_rate: s.singular_rate(),
                round_trip_failures: s.round_trip_failures,
            };
            if let Some(p) = path.as_deref() {
                let mut f = create(p)?;
                f.write_line(&line);
                finish(f, p)?;
            }
            match format {
                Format::Human => writeln!(
                    out,
                    "kappa {kappa}  trials {}  singular {}  rate {:.6}  round-trip failures {}",
                    s.trials,
                    s.singular,
                    s.singular_rate(),
                    s.round_trip_failures
                )?,
                Format::Csv => {
                    writeln!(
                        out,
                        "kappa,trials,seed,singular,singular_rate,round_trip_failures"
                    )?;
                    writeln!(
                        out,
                        "{kappa},{},{seed},{},{},{}",
                        s.trials,
                        s.singular,
                        s.singular_rate(),
                        s.round_trip_failures
                    )?;
                }
                Format::Jsonl => {
                    serde_json::to_writer(&mut *out, &line).map_err(io::Error::from)?;
                    writeln!(out)?;
                }
            }
            if s.round_trip_failures > 0 {
                return Err(AppError::Failed(format!(
                    "{} full-rank matrices failed to decode",
                    s.round_trip_failures
                )));
            }
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct CodingLine {
    kind: &'static str,
    kappa: u32,
    trials: u64,
    seed: u64,
    singular: u64,
    singular_rate: f64,
    round_trip_failures: u64,
}

fn print_report(
    out: &mut dyn Write,
    format: Format,
    r: &RunReport,
    elapsed: Option<std::time::Duration>,
) -> io::Result<()> {
    match format {
        Format::Human => writeln!(out, "{}\n", human_summary(r, elapsed)),
        Format::Csv => writeln!(out, "{}", CsvSummary::from_report(r).to_row()),
        Format::Jsonl => {
            serde_json::to_writer(&mut *out, &Record::Report(Box::new(r.clone())))?;
            writeln!(out)
        }
    }
}

fn run_job(job: RunJob, out: &mut dyn Write) -> Result<(), AppError> {
    let start = Instant::now();
    if job.out.is_none() && job.format == Format::Jsonl {
        let mut sink = JsonlSink::new(&mut *out);
        let res = run(&job.config, &mut sink);
        sink.finish()?;
        res?;
        return Ok(());
    }
    let report = match job.out.as_deref() {
        Some(p) => {
            let mut sink = create(p)?;
            let res = run(&job.config, &mut sink);
            finish(sink, p)?;
            res?
        }
        None => run(&job.config, &mut NullSink)?,
    };
    match job.format {
        Format::Human => writeln!(out, "{}", human_summary(&report, Some(start.elapsed())))?,
        Format::Csv => {
            writeln!(out, "{CSV_HEADER}")?;
            print_report(out, Format::Csv, &report, None)?;
        }
        Format::Jsonl => print_report(out, Format::Jsonl, &report, None)?,
    }
    Ok(())
}

#[derive(Serialize)]
struct ReplayEvent<'a> {
    kind: &'static str,
    size: usize,
    window_start: u64,
    window_end: u64,
    good_slots: usize,
    packets: Vec<&'a str>,
}

fn replay(
    trace: &SlotTrace,
    kappa: u32,
    lookback: Option<usize>,
    format: Format,
    path: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), AppError> {
    let lookback = lookback.unwrap_or(2 * kappa as usize);
    let mut decoder = DecoderState::with_lookback(kappa, lookback)
        .map_err(|e| AppError::Failed(e.to_string()))?;
    let mut file = path.map(create).transpose()?;
    if format == Format::Csv {
        writeln!(out, "slot,size,window_start,window_end,good_slots,packets")?;
    }
    let mut count = 0;
    let mut decoded = 0;
    for (slot, tx) in &trace.slots {
        let record = SlotRecord::new(*slot, tx.clone(), kappa)
            .map_err(|e| AppError::Failed(e.to_string()))?;
        let Some(e) = decoder.advance(&record) else {
            continue;
        };
        count += 1;
        decoded += e.size;
        let names: Vec<&str> = e.decoded_packets.iter().map(|&id| trace.name(id)).collect();
        let line = ReplayEvent {
            kind: "event",
            size: e.size,
            window_start: e.window_start,
            window_end: e.window_end,
            good_slots: e.good_slots,
            packets: names.clone(),
        };
        if let Some(f) = file.as_mut() {
            f.write_line(&line);
        }
        match format {
            Format::Human => writeln!(
                out,
                "slot {slot}: DecodingEvent(size {}) window {}..={} ({} good slot{}) packets {}",
                e.size,
                e.window_start,
                e.window_end,
                e.good_slots,
                if e.good_slots == 1 { "" } else { "s" },
                names.join(";")
            )?,
            Format::Csv => writeln!(
                out,
                "{slot},{},{},{},{},{}",
                e.size,
                e.window_start,
                e.window_end,
                e.good_slots,
                names.join(";")
            )?,
            Format::Jsonl => {
                serde_json::to_writer(&mut *out, &line).map_err(io::Error::from)?;
                writeln!(out)?;
            }
        }
    }
    if let (Some(f), Some(p)) = (file, path) {
        finish(f, p)?;
    }
    if format == Format::Human {
        writeln!(
            out,
            "{count} decoding events, {decoded} of {} packets decoded",
            trace.names.len()
        )?;
    }
    Ok(())
}
