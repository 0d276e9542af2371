use std::fs;
use std::path::Path;
use std::process::{Command as Proc, Output};

use clap::Parser;
use coded_backoff::cli::{parse_args, resolve, Cli, CliError, Command, Format};
use coded_backoff::output::{CsvSummary, CSV_HEADER};
use coded_backoff_core::sim::ScheduleSpec;
use coded_backoff_core::SchedulePattern;
use tempfile::TempDir;

fn bin(args: &[&str]) -> Output {
    Proc::new(env!("CARGO_BIN_EXE_coded-backoff"))
        .args(args)
        .env_remove("CODED_BACKOFF_SEED")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn resolved(args: &[&str]) -> Result<Command, CliError> {
    let mut argv = vec!["coded-backoff"];
    argv.extend_from_slice(args);
    resolve(Cli::try_parse_from(argv)?, None)
}

#[test]
fn run_example_resolves() {
    let cmd = resolved(&[
        "run",
        "--kappa",
        "64",
        "--schedule",
        "smooth",
        "--w",
        "65536",
        "--horizon",
        "1000000",
        "--seed",
        "7",
        "--rate",
        "0.5",
    ])
    .unwrap();
    let Command::Run(job) = cmd else { panic!() };
    assert_eq!(job.config.kappa, 64);
    assert_eq!(job.config.horizon, 1_000_000);
    assert_eq!(job.config.seed, 7);
    assert_eq!(job.config.stride, 1);
    assert_eq!(job.format, Format::Human);
    assert_eq!(
        job.config.schedule,
        ScheduleSpec::Windowed {
            w: 65536,
            pattern: SchedulePattern::Smooth,
            rate: Some(0.5),
            arrivals_until: None
        }
    );
}

#[test]
fn defaults_apply() {
    let Command::Run(job) = resolved(&["batch", "--n", "10"]).unwrap() else {
        panic!()
    };
    assert_eq!((job.config.kappa, job.config.seed), (64, 0));
    assert!(job.config.stop_when_drained);
    let Command::Run(job) = resolved(&["run", "--kappa", "256", "--horizon", "2000000"]).unwrap()
    else {
        panic!()
    };
    assert_eq!(job.config.stride, 16);
}

#[test]
fn usage_errors() {
    for args in [
        &["batch", "--n", "0"][..],
        &["run", "--kappa", "4"],
        &["run", "--kappa", "16", "--w", "100"],
        &["run", "--kappa", "64"],
        &["run", "--kappa", "16", "--rate", "1.5"],
        &["run", "--schedule", "trace"],
        &["sweep", "--kappas", "16,5", "--n", "3"],
    ] {
        assert!(
            matches!(resolved(args), Err(CliError::Usage(_))),
            "{args:?}"
        );
    }
    assert!(matches!(
        resolved(&["run", "--frobnicate"]),
        Err(CliError::Clap(_))
    ));
    assert!(matches!(
        resolved(&["run", "--kappa"]),
        Err(CliError::Clap(_))
    ));
}

#[test]
fn config_precedence() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "c.conf",
        "kappa = 16\nseed = 3\nn = 20\nformat = csv\n",
    );
    let Command::Run(job) = resolved(&["run", "--config", &cfg]).unwrap() else {
        panic!()
    };
    assert_eq!((job.config.kappa, job.config.seed), (16, 3));
    assert_eq!(job.config.schedule, ScheduleSpec::Batch { n: 20 });
    assert_eq!(job.format, Format::Csv);
    let Command::Run(job) =
        resolved(&["run", "--config", &cfg, "--kappa", "32", "--seed", "9"]).unwrap()
    else {
        panic!()
    };
    assert_eq!((job.config.kappa, job.config.seed), (32, 9));

    let cli = Cli::try_parse_from(["x", "batch", "--n", "5"]).unwrap();
    let Command::Run(job) = resolve(cli, Some("41".into())).unwrap() else {
        panic!()
    };
    assert_eq!(job.config.seed, 41);
    let cli = Cli::try_parse_from(["x", "batch", "--n", "5", "--config", &cfg]).unwrap();
    let Command::Run(job) = resolve(cli, Some("41".into())).unwrap() else {
        panic!()
    };
    assert_eq!(job.config.seed, 3);
    let cli = Cli::try_parse_from(["x", "batch", "--n", "5"]).unwrap();
    assert!(matches!(
        resolve(cli, Some("abc".into())),
        Err(CliError::Usage(_))
    ));

    let bad = write(dir.path(), "bad.conf", "kappa = 16\nwhat = 1\n");
    assert!(matches!(
        resolved(&["run", "--config", &bad]),
        Err(CliError::Config(_))
    ));
    assert!(matches!(
        resolved(&["run", "--config", "/nonexistent/x.conf"]),
        Err(CliError::Config(_))
    ));
}

#[test]
fn parse_args_reads_program_name() {
    assert!(matches!(
        parse_args(["coded-backoff", "batch", "--n", "2"]),
        Ok(Command::Run(_))
    ));
}

#[test]
fn exit_statuses() {
    assert_eq!(
        bin(&["batch", "--kappa", "16", "--n", "50"]).status.code(),
        Some(0)
    );
    assert_eq!(bin(&["run", "--kappa", "4"]).status.code(), Some(1));
    assert_eq!(bin(&["batch", "--n", "0"]).status.code(), Some(1));
    assert_eq!(bin(&["run", "--nope"]).status.code(), Some(1));
    assert_eq!(bin(&["--help"]).status.code(), Some(0));
    let o = bin(&["run", "--kappa", "4"]);
    let err = String::from_utf8(o.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");

    let dir = TempDir::new().unwrap();
    let trace = write(dir.path(), "a.csv", "0,1\n");
    let o = bin(&[
        "run",
        "--kappa",
        "256",
        "--schedule",
        "trace",
        "--trace",
        &trace,
        "--horizon",
        "40",
        "--strict-lemmas",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = bin(&[
        "run",
        "--kappa",
        "256",
        "--schedule",
        "trace",
        "--trace",
        &trace,
        "--horizon",
        "40",
    ]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn csv_output_parses_back() {
    let o = bin(&[
        "batch", "--kappa", "16", "--n", "200", "--seed", "5", "--format", "csv",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    let row = CsvSummary::parse(lines.next().unwrap()).unwrap();
    assert_eq!(
        (row.kappa, row.seed, row.arrivals, row.delivered),
        (16, 5, 200, 200)
    );
    assert_eq!(row.throughput, row.delivered as f64 / row.horizon as f64);

    let dir = TempDir::new().unwrap();
    let out = dir.path().join("run.jsonl");
    let o = bin(&[
        "batch",
        "--kappa",
        "16",
        "--n",
        "200",
        "--seed",
        "5",
        "--format",
        "csv",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(stdout(&o), text);
    let last = fs::read_to_string(&out)
        .unwrap()
        .lines()
        .last()
        .unwrap()
        .to_string();
    let v: serde_json::Value = serde_json::from_str(&last).unwrap();
    assert_eq!(v["kind"], "report");
    assert_eq!(v["delivered"], 200);
    assert_eq!(v["latency"]["max"], row.max_latency.unwrap());
}

#[test]
fn jsonl_to_stdout() {
    let o = bin(&[
        "batch",
        "--kappa",
        "16",
        "--n",
        "20",
        "--format",
        "jsonl",
        "--verify-coding",
        "--sparse",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut kinds = std::collections::BTreeSet::new();
    for l in text.lines() {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        kinds.insert(v["kind"].as_str().unwrap().to_string());
    }
    for k in ["slot", "epoch", "event", "verdict", "sparse", "report"] {
        assert!(kinds.contains(k), "missing {k}");
    }
}

#[test]
fn replay_section_two_examples() {
    let dir = TempDir::new().unwrap();
    let simultaneous = write(dir.path(), "s.csv", "1,a;b\n2,a;b\n");
    let o = bin(&["replay", "--trace", &simultaneous, "--kappa", "2"]);
    assert!(stdout(&o).contains("slot 2: DecodingEvent(size 2) window 1..=2"));

    let staircase = write(
        dir.path(),
        "st.csv",
        "t,transmitters\n1,a;b;c\n2,b;c\n3,c\n",
    );
    let o = bin(&["replay", "--trace", &staircase, "--kappa", "3"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(
        text.contains("slot 3: DecodingEvent(size 3) window 1..=3 (3 good slots) packets a;b;c"),
        "{text}"
    );
    assert!(text.contains("1 decoding events"));

    let lost = write(dir.path(), "l.csv", "1,a;b\n2,c\n3,a;b\n");
    let o = bin(&[
        "replay", "--trace", &lost, "--kappa", "2", "--format", "csv",
    ]);
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows, ["2,1,2,2,1,c"]);

    let o = bin(&[
        "replay", "--trace", &lost, "--kappa", "2", "--format", "jsonl",
    ]);
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["packets"], serde_json::json!(["c"]));
}

#[test]
fn validate_reports_ok_and_violation() {
    let dir = TempDir::new().unwrap();
    let ok = write(dir.path(), "ok.csv", "0,1000\n5000,1000\n");
    let o = bin(&[
        "validate", "--trace", &ok, "--w", "4096", "--kappa", "16", "--rate", "0.5",
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("ok"));
    let bad = write(dir.path(), "bad.csv", "0,1000\n4000,1049\n");
    let o = bin(&[
        "validate", "--trace", &bad, "--w", "4096", "--kappa", "16", "--rate", "0.5",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(
        stdout(&o).trim(),
        "violation: window starting at slot 0 holds 2049 > cap 2048"
    );
    let bad_line = write(dir.path(), "x.csv", "0,1\nfoo\n");
    let o = bin(&[
        "validate", "--trace", &bad_line, "--w", "4096", "--kappa", "16", "--rate", "0.5",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8(o.stderr).unwrap().contains("line 2"));
}

#[test]
fn verify_coding_prints_rate() {
    let o = bin(&[
        "verify-coding",
        "--kappa",
        "16",
        "--trials",
        "2000",
        "--seed",
        "1",
        "--format",
        "csv",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[1], "2000");
    let rate: f64 = row[4].parse().unwrap();
    assert!(rate < 0.02);
    assert_eq!(row[5], "0");
}

#[test]
fn sweep_rows_and_failures() {
    let o = bin(&[
        "sweep",
        "--kappas",
        "16,64,256",
        "--n",
        "100",
        "--format",
        "csv",
        "--jobs",
        "2",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    let rows: Vec<CsvSummary> = text
        .lines()
        .skip(1)
        .map(|l| CsvSummary::parse(l).unwrap())
        .collect();
    assert_eq!(
        rows.iter().map(|r| r.kappa).collect::<Vec<_>>(),
        [16, 64, 256]
    );
    assert!(rows.iter().all(|r| r.delivered == 100));
    let again = bin(&[
        "sweep",
        "--kappas",
        "16,64,256",
        "--n",
        "100",
        "--format",
        "csv",
        "--jobs",
        "1",
    ]);
    assert_eq!(stdout(&again), text);

    let dir = TempDir::new().unwrap();
    let trace = write(dir.path(), "a.csv", "0,1\n");
    let o = bin(&[
        "sweep",
        "--kappas",
        "16,256",
        "--schedule",
        "trace",
        "--trace",
        &trace,
        "--horizon",
        "40",
        "--strict-lemmas",
        "--format",
        "csv",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stdout(&o).lines().count(), 2);
}
