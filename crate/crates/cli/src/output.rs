//! JSONL streams, CSV summary rows and human-readable summaries.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::time::Duration;

use coded_backoff_core::sim::{Record, RecordSink, RunReport};
use serde::Serialize;
use thiserror::Error;

/// Writes each record as one JSON object per line.
///
/// The first write error is kept and later records are dropped; check it
/// with [`JsonlSink::finish`].
pub struct JsonlSink<W: Write> {
    out: W,
    error: Option<io::Error>,
}

impl<W: Write> JsonlSink<W> {
    pub fn new(out: W) -> Self {
        Self { out, error: None }
    }

    /// Writes any serializable value as one line.
    pub fn write_line<T: Serialize + ?Sized>(&mut self, value: &T) {
        if self.error.is_some() {
            return;
        }
        let res = serde_json::to_writer(&mut self.out, value)
            .map_err(io::Error::from)
            .and_then(|()| self.out.write_all(b"\n"));
        if let Err(e) = res {
            self.error = Some(e);
        }
    }

    pub fn finish(mut self) -> io::Result<W> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        self.out.flush()?;
        Ok(self.out)
    }
}

impl<W: Write> RecordSink for JsonlSink<W> {
    fn record(&mut self, record: Record) {
        self.write_line(&record);
    }
}

pub const CSV_HEADER: &str = "kappa,w,seed,horizon,arrivals,delivered,max_backlog,p50,p99,max_latency,silent,successful,overfull,error_epochs,throughput";

/// The CSV view of a [`RunReport`]. Empty cells stand for absent values.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSummary {
    pub kappa: u32,
    pub w: Option<u64>,
    pub seed: u64,
    pub horizon: u64,
    pub arrivals: u64,
    pub delivered: u64,
    pub max_backlog: u64,
    pub p50: Option<u64>,
    pub p99: Option<u64>,
    pub max_latency: Option<u64>,
    pub silent: u64,
    pub successful: u64,
    pub overfull: u64,
    pub error_epochs: u64,
    pub throughput: f64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CsvError {
    #[error("expected 15 fields, found {0}")]
    FieldCount(usize),
    #[error("field `{field}`: cannot parse `{value}`")]
    Field { field: &'static str, value: String },
}

impl CsvSummary {
    /// `horizon` is the number of slots simulated and
    /// `throughput = delivered / horizon` on every row.
    pub fn from_report(r: &RunReport) -> Self {
        Self {
            kappa: r.kappa,
            w: r.w,
            seed: r.seed,
            horizon: r.slots_run,
            arrivals: r.arrivals,
            delivered: r.delivered,
            max_backlog: r.max_backlog,
            p50: r.latency.p50,
            p99: r.latency.p99,
            max_latency: r.latency.max,
            silent: r.epochs.silent,
            successful: r.epochs.successful,
            overfull: r.epochs.overfull,
            error_epochs: r.error_epochs,
            throughput: r.throughput,
        }
    }

    pub fn to_row(&self) -> String {
        fn opt(v: Option<u64>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.kappa,
            opt(self.w),
            self.seed,
            self.horizon,
            self.arrivals,
            self.delivered,
            self.max_backlog,
            opt(self.p50),
            opt(self.p99),
            opt(self.max_latency),
            self.silent,
            self.successful,
            self.overfull,
            self.error_epochs,
            self.throughput,
        )
    }

    pub fn parse(row: &str) -> Result<Self, CsvError> {
        let f: Vec<&str> = row.trim_end().split(',').collect();
        if f.len() != 15 {
            return Err(CsvError::FieldCount(f.len()));
        }
        fn num<T: std::str::FromStr>(field: &'static str, s: &str) -> Result<T, CsvError> {
            s.parse().map_err(|_| CsvError::Field {
                field,
                value: s.to_string(),
            })
        }
        fn opt(field: &'static str, s: &str) -> Result<Option<u64>, CsvError> {
            if s.is_empty() {
                Ok(None)
            } else {
                num(field, s).map(Some)
            }
        }
        Ok(Self {
            kappa: num("kappa", f[0])?,
            w: opt("w", f[1])?,
            seed: num("seed", f[2])?,
            horizon: num("horizon", f[3])?,
            arrivals: num("arrivals", f[4])?,
            delivered: num("delivered", f[5])?,
            max_backlog: num("max_backlog", f[6])?,
            p50: opt("p50", f[7])?,
            p99: opt("p99", f[8])?,
            max_latency: opt("max_latency", f[9])?,
            silent: num("silent", f[10])?,
            successful: num("successful", f[11])?,
            overfull: num("overfull", f[12])?,
            error_epochs: num("error_epochs", f[13])?,
            throughput: num("throughput", f[14])?,
        })
    }
}

fn opt_u64(v: Option<u64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

/// Multi-line summary for terminals. Wall-clock time appears only here.
pub fn human_summary(r: &RunReport, elapsed: Option<Duration>) -> String {
    let mut s = String::new();
    let w = r.w.map_or_else(String::new, |w| format!("  w {w}"));
    let _ = writeln!(
        s,
        "kappa {}{w}  seed {}  horizon {} (ran {} slots)",
        r.kappa, r.seed, r.horizon, r.slots_run
    );
    let _ = writeln!(
        s,
        "arrivals {}  delivered {}  censored {}",
        r.arrivals, r.delivered, r.censored
    );
    let _ = writeln!(
        s,
        "backlog max {}  final {}  ({} samples)",
        r.max_backlog, r.final_backlog, r.backlog_samples
    );
    let _ = writeln!(
        s,
        "latency p50 {}  p99 {}  max {}",
        opt_u64(r.latency.p50),
        opt_u64(r.latency.p99),
        opt_u64(r.latency.max)
    );
    let _ = writeln!(
        s,
        "epochs silent {}  successful {}  overfull {}  error {} (rate {:.3e})",
        r.epochs.silent, r.epochs.successful, r.epochs.overfull, r.error_epochs, r.error_rate
    );
    let l = &r.lemmas;
    let _ = writeln!(
        s,
        "potential checks: {} epochs, {} violations; arrivals {}/{}, activations {}/{}, monotone {}/{} violated",
        l.epochs_checked,
        l.violations,
        l.arrival_violations,
        l.arrival_checks,
        l.activation_violations,
        l.activation_checks,
        l.monotone_violations,
        l.monotone_checks
    );
    let _ = writeln!(
        s,
        "decoder agreement: {} events, {} successful epochs, {} mismatches",
        r.agreement.decoding_events, r.agreement.successful_epochs, r.agreement.mismatches
    );
    if let Some(c) = r.coding {
        let _ = writeln!(
            s,
            "coding: {} windows, {} singular, {} round-trip failures",
            c.checked, c.singular, c.round_trip_failures
        );
    }
    if r.sparse_events > 0 {
        let _ = writeln!(s, "sparse-system slots {}", r.sparse_events);
    }
    let _ = write!(s, "throughput {:.6}", r.throughput);
    if let Some(d) = elapsed {
        let _ = write!(s, "\nwall clock {:.3}s", d.as_secs_f64());
    }
    s
}
