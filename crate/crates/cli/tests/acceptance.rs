//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use coded_backoff_core::channel::{DecoderState, SlotRecord};
use coded_backoff_core::coding::{coding_trial, coding_trials};
use coded_backoff_core::rng::{DetRng, STREAM_CODING};
use coded_backoff_core::sim::{run, run_quiet, Record, RunConfig, RunReport, ScheduleSpec};
use coded_backoff_core::{PacketId, SchedulePattern};
use sha2::{Digest, Sha256};

/// Arrival rate for the windowed experiments at kappa = 64, where
/// `1 - 5/ln(kappa)` is negative.
const LOAD_64: f64 = 0.7979;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Reports gathered by the batch and backlog experiments, reused by the
/// lemma and agreement criteria.
#[derive(Default)]
struct Shared {
    reports: Vec<RunReport>,
    errors: Vec<String>,
}

fn strict_run(cfg: &mut RunConfig, shared: &mut Shared) -> Option<RunReport> {
    cfg.strict_lemmas = true;
    match run_quiet(cfg) {
        Ok(r) => {
            shared.reports.push(r.clone());
            Some(r)
        }
        Err(e) => {
            shared
                .errors
                .push(format!("kappa {} seed {}: {e}", cfg.kappa, cfg.seed));
            None
        }
    }
}

fn batch_theorem(shared: &mut Shared) -> Outcome {
    let mut worst_ok = u32::MAX;
    let mut max_ratio: f64 = 0.0;
    let mut cells = Vec::new();
    for kappa in [16u32, 64] {
        for n in [1_000u64, 10_000] {
            let k = kappa as f64;
            let bound = 4.0 * k + n as f64 * (1.0 + 10.0 / k);
            let mut ok = 0;
            for seed in 1..=100 {
                let mut cfg =
                    RunConfig::new(kappa, 4 * bound as u64, seed, ScheduleSpec::Batch { n });
                cfg.stop_when_drained = true;
                let Some(r) = strict_run(&mut cfg, shared) else {
                    continue;
                };
                if let (0, Some(last)) = (r.censored, r.last_delivery_slot) {
                    max_ratio = max_ratio.max(last as f64 / bound);
                    if last as f64 <= bound {
                        ok += 1;
                    }
                }
            }
            worst_ok = worst_ok.min(ok);
            cells.push(format!("k{kappa}/n{n}:{ok}"));
        }
    }
    outcome(
        worst_ok >= 99,
        format!(
            "seeds within 4k + n(1 + 10/k) per cell [{}], worst completion/bound {max_ratio:.3}",
            cells.join(" ")
        ),
    )
}

fn smooth_config(kappa: u32, w: u64, rate: Option<f64>, horizon: u64, seed: u64) -> RunConfig {
    RunConfig::new(
        kappa,
        horizon,
        seed,
        ScheduleSpec::Windowed {
            w,
            pattern: SchedulePattern::Smooth,
            rate,
            arrivals_until: None,
        },
    )
}

fn backlog_bound(shared: &mut Shared) -> Outcome {
    let w = 65_536;
    let mut worst = 0;
    let mut runs = 0;
    for seed in 1..=20 {
        let mut cfg = smooth_config(64, w, Some(LOAD_64), 1_000_000, seed);
        if let Some(r) = strict_run(&mut cfg, shared) {
            runs += 1;
            worst = worst.max(r.max_backlog);
        }
    }
    outcome(
        runs == 20 && worst <= 2 * w,
        format!(
            "{runs}/20 runs, max sampled backlog {worst} (2w = {})",
            2 * w
        ),
    )
}

fn lemma_suite(shared: &Shared) -> Outcome {
    let epochs: u64 = shared.reports.iter().map(|r| r.lemmas.epochs_checked).sum();
    let violations: u64 = shared
        .reports
        .iter()
        .map(|r| {
            let l = &r.lemmas;
            l.violations + l.arrival_violations + l.activation_violations + l.monotone_violations
        })
        .sum();
    let pass = shared.errors.is_empty() && violations == 0 && epochs > 0;
    let mut detail = format!(
        "{epochs} epochs over {} strict runs, {violations} violations",
        shared.reports.len()
    );
    if let Some(e) = shared.errors.first() {
        detail.push_str(&format!(", {} aborted (first: {e})", shared.errors.len()));
    }
    outcome(pass, detail)
}

fn decoder_agreement(shared: &Shared) -> Outcome {
    let mismatches: u64 = shared.reports.iter().map(|r| r.agreement.mismatches).sum();
    let counts_equal = shared
        .reports
        .iter()
        .all(|r| r.agreement.decoding_events == r.epochs.successful);
    let events: u64 = shared
        .reports
        .iter()
        .map(|r| r.agreement.decoding_events)
        .sum();

    // Recheck a few traces from the emitted records alone.
    let mut record_mismatch = 0;
    let mut configs = vec![smooth_config(64, 65_536, Some(LOAD_64), 100_000, 99)];
    for seed in 0..5 {
        let mut c = RunConfig::new(64, 100_000, seed, ScheduleSpec::Batch { n: 1000 });
        c.stop_when_drained = true;
        configs.push(c);
    }
    for cfg in &configs {
        let mut records = Vec::new();
        run(cfg, &mut records).unwrap();
        let mut windows = BTreeMap::new();
        let mut epochs = BTreeMap::new();
        for r in &records {
            match r {
                Record::Event(e) => {
                    windows.insert(e.window_end, (e.window_start, e.size as u64));
                }
                Record::Epoch(e) if e.epoch_kind == coded_backoff_core::EpochKind::Successful => {
                    epochs.insert(e.end_slot, (e.start_slot, e.joiners));
                }
                _ => {}
            }
        }
        if windows != epochs {
            record_mismatch += 1;
        }
    }
    outcome(
        mismatches == 0 && counts_equal && record_mismatch == 0 && events > 0,
        format!(
            "{events} decoding events vs successful epochs: {mismatches} slot mismatches, {record_mismatch} record-level mismatches"
        ),
    )
}

fn decoder_examples() -> Outcome {
    fn ids(v: &[u64]) -> Vec<PacketId> {
        v.iter().copied().map(PacketId).collect()
    }
    let (a, b, c) = (1, 2, 3);
    let feed = |kappa: u32, slots: &[(u64, &[u64])]| {
        let mut d = DecoderState::new(kappa).unwrap();
        slots
            .iter()
            .map(|&(t, tx)| d.advance(&SlotRecord::new(t, ids(tx), kappa).unwrap()))
            .collect::<Vec<_>>()
    };
    let mut failures = Vec::new();

    let out = feed(3, &[(1, &[a, b, c]), (2, &[a, b, c]), (3, &[a, b, c])]);
    let ok = out[0].is_none()
        && out[1].is_none()
        && out[2].as_ref().is_some_and(|e| {
            e.size == 3
                && (e.window_start, e.window_end) == (1, 3)
                && e.decoded_packets == ids(&[a, b, c])
        });
    if !ok {
        failures.push("simultaneous");
    }

    let out = feed(3, &[(1, &[a, b, c]), (2, &[b, c]), (3, &[c])]);
    let ok = out[0].is_none()
        && out[1].is_none()
        && out[2].as_ref().is_some_and(|e| {
            e.size == 3
                && (e.window_start, e.window_end) == (1, 3)
                && e.decoded_packets == ids(&[a, b, c])
        });
    if !ok {
        failures.push("staircase");
    }

    let mut d = DecoderState::new(2).unwrap();
    let s1 = d.advance(&SlotRecord::new(1, ids(&[a, b]), 2).unwrap());
    let s2 = d.advance(&SlotRecord::new(2, ids(&[c]), 2).unwrap());
    let s3 = d.advance(&SlotRecord::new(3, ids(&[a, b]), 2).unwrap());
    let pending: Vec<u64> = d.pending_good_slots().map(|(t, _)| t).collect();
    // Silent and bad slots afterwards cannot revive slot 1.
    let later: Vec<_> = (4..10)
        .map(|t| {
            let tx: &[u64] = if t % 2 == 0 { &[] } else { &[4, 5, 6] };
            d.advance(&SlotRecord::new(t, ids(tx), 2).unwrap())
        })
        .collect();
    let ok = s1.is_none()
        && s2.as_ref().is_some_and(|e| {
            e.size == 1
                && (e.window_start, e.window_end) == (2, 2)
                && e.decoded_packets == ids(&[c])
        })
        && s3.is_none()
        && pending == [3]
        && later.iter().all(Option::is_none);
    if !ok {
        failures.push("lost information");
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "simultaneous, staircase and lost-information traces reproduce their events".into()
        } else {
            format!("mismatched: {}", failures.join(", "))
        },
    )
}

fn error_epoch_rarity() -> Outcome {
    let kappa = 256;
    let w = 16 * 256 * 256;
    let cfg = smooth_config(kappa, w, None, 2_000_000, 1);
    match run_quiet(&cfg) {
        Ok(r) => {
            let epochs = r.epochs.total();
            outcome(
                epochs >= 1_000_000 && r.error_rate < 1e-3,
                format!(
                    "{epochs} epochs, {} error epochs, fraction {:.3e} (threshold 1e-3); {} relaxed-case potential violations",
                    r.error_epochs, r.error_rate, r.lemmas.violations
                ),
            )
        }
        Err(e) => outcome(false, format!("run failed: {e}")),
    }
}

fn latency_experiment() -> Outcome {
    let w: u64 = 65_536;
    let horizon = 5_000_000;
    let scale = w as f64 * 8.0 * (w as f64).ln().powi(3);
    let mut max_latency = 0;
    let mut censored = 0;
    let mut runs = 0;
    for seed in 1..=10 {
        let cfg = RunConfig::new(
            64,
            horizon,
            seed,
            ScheduleSpec::Windowed {
                w,
                pattern: SchedulePattern::Smooth,
                rate: Some(LOAD_64),
                arrivals_until: Some(horizon - 4 * w),
            },
        );
        match run_quiet(&cfg) {
            Ok(r) => {
                runs += 1;
                censored += r.censored;
                max_latency = max_latency.max(r.latency.max.unwrap_or(0));
            }
            Err(_) => censored += 1,
        }
    }
    outcome(
        runs == 10 && censored == 0,
        format!(
            "{runs}/10 runs, {censored} censored, max latency {max_latency} slots, max/(w sqrt(k) ln^3 w) = {:.3e}",
            max_latency as f64 / scale
        ),
    )
}

/// GF(2^8) arithmetic built here from shift-and-add multiplication.
struct Field {
    exp: [u8; 512],
    log: [u8; 256],
}

impl Field {
    fn slow_mul(mut a: u8, mut b: u8) -> u8 {
        let mut p = 0;
        while b != 0 {
            if b & 1 != 0 {
                p ^= a;
            }
            let hi = a & 0x80;
            a <<= 1;
            if hi != 0 {
                a ^= 0x1B;
            }
            b >>= 1;
        }
        p
    }

    fn new() -> Self {
        let mut exp = [0u8; 512];
        let mut log = [0u8; 256];
        let mut x = 1u8;
        for (i, e) in exp.iter_mut().take(255).enumerate() {
            *e = x;
            log[x as usize] = i as u8;
            x = Self::slow_mul(x, 3);
        }
        for i in 255..512 {
            exp[i] = exp[i - 255];
        }
        Self { exp, log }
    }

    fn mul(&self, a: u8, b: u8) -> u8 {
        if a == 0 || b == 0 {
            0
        } else {
            self.exp[self.log[a as usize] as usize + self.log[b as usize] as usize]
        }
    }

    fn inv(&self, a: u8) -> u8 {
        self.exp[255 - self.log[a as usize] as usize]
    }

    fn rank(&self, mut m: Vec<Vec<u8>>) -> usize {
        let rows = m.len();
        let cols = m.first().map_or(0, Vec::len);
        let mut rank = 0;
        for col in 0..cols {
            let Some(p) = (rank..rows).find(|&r| m[r][col] != 0) else {
                continue;
            };
            m.swap(rank, p);
            let inv = self.inv(m[rank][col]);
            for r in 0..rows {
                if r != rank && m[r][col] != 0 {
                    let f = self.mul(m[r][col], inv);
                    let pivot = m[rank].clone();
                    for (x, p) in m[r].iter_mut().zip(&pivot) {
                        *x ^= self.mul(f, *p);
                    }
                }
            }
            rank += 1;
        }
        rank
    }
}

/// xorshift64*, independent of the simulator's generator.
struct Xs(u64);

impl Xs {
    fn next(&mut self) -> u64 {
        self.0 ^= self.0 >> 12;
        self.0 ^= self.0 << 25;
        self.0 ^= self.0 >> 27;
        self.0.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }
    fn nonzero(&mut self) -> u8 {
        (1 + (self.next() >> 32) % 255) as u8
    }
}

fn coding_oracle() -> Outcome {
    let f = Field::new();
    let kappa = 16u32;
    let trials = 10_000u64;

    // Exact 2x2 singular probability: P(ad = bc) = sum_x N(x)^2 / 255^4,
    // N(x) = #{(a, d) nonzero : ad = x}.
    let mut hist = [0u64; 256];
    for a in 1..=255u8 {
        for d in 1..=255u8 {
            hist[f.mul(a, d) as usize] += 1;
        }
    }
    let p2 = hist.iter().map(|&n| (n * n) as f64).sum::<f64>() / 255f64.powi(4);

    // Oracle estimate of the singular rate over sizes 1..=kappa.
    let oracle_trials = 40_000u64;
    let mut xs = Xs(0x9E37_79B9_7F4A_7C15);
    let mut oracle_singular = 0u64;
    for _ in 0..oracle_trials {
        let j = 1 + (xs.next() >> 33) as usize % kappa as usize;
        let m: Vec<Vec<u8>> = (0..j)
            .map(|_| (0..j).map(|_| xs.nonzero()).collect())
            .collect();
        oracle_singular += u64::from(f.rank(m) < j);
    }
    let p_oracle = oracle_singular as f64 / oracle_trials as f64;

    let mut rng = DetRng::for_stream(1, STREAM_CODING);
    let mut singular = 0u64;
    let mut rank_disagree = 0u64;
    let mut round_trip_fail = 0u64;
    for _ in 0..trials {
        let t = coding_trial(kappa, None, 8, &mut rng);
        let j = t.matrix.packets.len();
        let rows: Vec<Vec<u8>> = (0..j)
            .map(|r| t.matrix.matrix.row(r).iter().map(|g| g.0).collect())
            .collect();
        let full = f.rank(rows) == j;
        rank_disagree += u64::from(full != t.invertible);
        singular += u64::from(!t.invertible);
        if t.invertible && t.round_trip_ok != Some(true) {
            round_trip_fail += 1;
        }
    }
    let p_hat = singular as f64 / trials as f64;
    let pooled = (singular + oracle_singular) as f64 / (trials + oracle_trials) as f64;
    let sigma =
        (pooled * (1.0 - pooled) * (1.0 / trials as f64 + 1.0 / oracle_trials as f64)).sqrt();
    let within = (p_hat - p_oracle).abs() <= 3.0 * sigma;
    let exact_ok = (p2 - 1.0 / 255.0).abs() < 1e-15;
    let fixed = coding_trials(kappa, trials, 2, Some(2), 8);
    let sigma2 = (p2 * (1.0 - p2) / trials as f64).sqrt();
    let fixed_ok =
        (fixed.singular_rate() - p2).abs() <= 3.0 * sigma2 && fixed.round_trip_failures == 0;
    outcome(
        within && exact_ok && fixed_ok && rank_disagree == 0 && round_trip_fail == 0,
        format!(
            "{trials} matrices: singular rate {p_hat:.5} vs oracle {p_oracle:.5} (3 sigma = {:.5}); rank disagreements {rank_disagree}, round-trip failures {round_trip_fail}; exact 2x2 P = {p2:.6}, fixed-size 2x2 rate {:.5} (3 sigma = {:.5})",
            3.0 * sigma,
            fixed.singular_rate(),
            3.0 * sigma2
        ),
    )
}

fn sha(path: &Path) -> String {
    let bytes = fs::read(path).unwrap();
    Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let stair = dir.path().join("stair.csv");
    fs::write(&stair, "1,a;b;c\n2,b;c\n3,c\n").unwrap();
    let stair = stair.to_str().unwrap().to_string();
    let commands: Vec<(&str, Vec<&str>)> = vec![
        (
            "batch",
            vec![
                "batch",
                "--kappa",
                "16",
                "--n",
                "1000",
                "--seed",
                "3",
                "--strict-lemmas",
            ],
        ),
        (
            "backlog",
            vec![
                "run",
                "--kappa",
                "64",
                "--schedule",
                "smooth",
                "--w",
                "65536",
                "--rate",
                "0.7979",
                "--horizon",
                "100000",
                "--seed",
                "3",
                "--strict-lemmas",
                "--verify-coding",
            ],
        ),
        ("replay", vec!["replay", "--kappa", "3", "--trace", &stair]),
        (
            "rarity",
            vec![
                "run",
                "--kappa",
                "256",
                "--schedule",
                "smooth",
                "--horizon",
                "50000",
                "--seed",
                "3",
            ],
        ),
        (
            "latency",
            vec![
                "run",
                "--kappa",
                "64",
                "--schedule",
                "smooth",
                "--w",
                "65536",
                "--rate",
                "0.7979",
                "--horizon",
                "300000",
                "--arrivals-until",
                "40000",
                "--seed",
                "3",
                "--sparse",
            ],
        ),
        (
            "coding",
            vec![
                "verify-coding",
                "--kappa",
                "16",
                "--trials",
                "10000",
                "--seed",
                "1",
            ],
        ),
        (
            "sweep",
            vec![
                "sweep", "--kappas", "16,64", "--runs", "3", "--n", "500", "--jobs", "2",
            ],
        ),
    ];
    let mut bad = Vec::new();
    for (name, args) in &commands {
        let mut digests = Vec::new();
        for i in 0..2 {
            let out = dir.path().join(format!("{name}-{i}.jsonl"));
            let status = Command::new(env!("CARGO_BIN_EXE_coded-backoff"))
                .args(args)
                .args(["--out", out.to_str().unwrap(), "--format", "csv"])
                .env_remove("CODED_BACKOFF_SEED")
                .output()
                .unwrap()
                .status;
            if !status.success() || fs::metadata(&out).map_or(0, |m| m.len()) == 0 {
                bad.push(format!("{name} (run {i} failed)"));
            }
            digests.push(sha(&out));
        }
        if digests[0] != digests[1] {
            bad.push(format!("{name} (digests differ)"));
        }
    }
    outcome(
        bad.is_empty(),
        if bad.is_empty() {
            format!(
                "{} commands produced byte-identical JSONL on repeat",
                commands.len()
            )
        } else {
            format!("nondeterministic or failing: {}", bad.join(", "))
        },
    )
}

fn main() -> ExitCode {
    let mut shared = Shared::default();
    let mut all = true;
    let mut report = |n: u32, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        all &= o.pass;
        println!(
            "criterion {n} {} {name}: {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    };
    report(1, "batch completion", &mut || batch_theorem(&mut shared));
    report(2, "backlog bound", &mut || backlog_bound(&mut shared));
    report(3, "per-epoch potential bounds", &mut || {
        lemma_suite(&shared)
    });
    report(4, "decoder/epoch equivalence", &mut || {
        decoder_agreement(&shared)
    });
    report(5, "decoding-event examples", &mut decoder_examples);
    report(6, "error-epoch rarity", &mut error_epoch_rarity);
    report(7, "latency, no censoring", &mut latency_experiment);
    report(8, "coding oracle round trip", &mut coding_oracle);
    report(9, "determinism", &mut determinism);
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
