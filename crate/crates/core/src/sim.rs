//! The slot loop: schedule, protocol, channel and potential, slot by slot.
//!
//! Within one slot the order is: arrivals are injected, an epoch begins if
//! none is running, joiners broadcast, the channel classifies the slot and
//! the decoder advances, the protocol decides whether the epoch ended, and
//! finally probabilities are updated and (after a silent slot) inactive
//! packets activate.
//!
//! Epochs run back to back, so the snapshot closing one epoch is also the
//! snapshot opening the next.

use alloc::boxed::Box;
use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{
    batch_schedule, windowed_rate_schedule, ArrivalSchedule, ScheduleError, SchedulePattern,
};
use crate::channel::{ChannelError, DecoderState, DecodingEvent, PacketId, SlotClass, SlotRecord};
use crate::coding::{build_matrix, decode, received_sums, CoeffMode, MessageVector};
use crate::potential::{
    self, check_activation, check_arrivals, check_epoch_delta, check_successful_monotone,
    classify_error_epoch, BoundCase, EpochDeltaVerdict, PotentialSnapshot,
};
use crate::protocol::{EpochKind, EpochOutcome, Kappa, ProtocolError, ProtocolState};
use crate::rng::{DetRng, STREAM_CODING, STREAM_PROTOCOL};

pub use crate::potential::SparseEvent;
pub use crate::rng::mix as mix_seed;

/// Horizons up to this length sample every slot by default.
pub const DENSE_SAMPLING_LIMIT: u64 = 1_000_000;
/// Default stride beyond [`DENSE_SAMPLING_LIMIT`].
pub const SPARSE_STRIDE: u64 = 16;

pub fn default_stride(horizon: u64) -> u64 {
    if horizon <= DENSE_SAMPLING_LIMIT {
        1
    } else {
        SPARSE_STRIDE
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ScheduleSpec {
    /// `n` packets at slot 0.
    Batch { n: u64 },
    /// Generated windowed schedule. Arrivals stop at `arrivals_until` when
    /// set (the run itself continues to the horizon).
    Windowed {
        w: u64,
        pattern: SchedulePattern,
        rate: Option<f64>,
        arrivals_until: Option<u64>,
    },
    /// A fixed schedule, e.g. loaded from a trace.
    Explicit(Arc<ArrivalSchedule>),
}

impl ScheduleSpec {
    pub fn window(&self) -> Option<u64> {
        match self {
            ScheduleSpec::Batch { .. } => None,
            ScheduleSpec::Windowed { w, .. } => Some(*w),
            ScheduleSpec::Explicit(s) => s.window_w,
        }
    }

    /// Materializes the schedule for a run.
    pub fn build(
        &self,
        kappa: u32,
        horizon: u64,
        seed: u64,
    ) -> Result<Arc<ArrivalSchedule>, ScheduleError> {
        match self {
            ScheduleSpec::Batch { n } => Ok(Arc::new(batch_schedule(*n)?)),
            ScheduleSpec::Windowed {
                w,
                pattern,
                rate,
                arrivals_until,
            } => {
                let until = arrivals_until.map_or(horizon, |u| u.min(horizon));
                Ok(Arc::new(windowed_rate_schedule(
                    *w, kappa, until, *pattern, seed, *rate,
                )?))
            }
            ScheduleSpec::Explicit(s) => Ok(Arc::clone(s)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub kappa: u32,
    pub horizon: u64,
    pub seed: u64,
    pub schedule: ScheduleSpec,
    /// Abort on the first failed lemma check.
    pub strict_lemmas: bool,
    /// Round-trip every decoding event through the coding oracle.
    pub verify_coding: bool,
    /// Emit a slot record and a backlog sample every `stride` slots.
    pub stride: u64,
    /// Check every slot for the sparse-system condition.
    pub detect_sparse: bool,
    /// Track the backlog maximum over every slot, not only sampled ones.
    pub continuous_backlog: bool,
    /// Decoder lookback in good slots; `2 * kappa` when unset.
    pub decoder_lookback: Option<usize>,
    /// Symbols per packet payload in coding checks.
    pub payload_len: usize,
    /// End the run once the schedule is exhausted and the system is empty.
    pub stop_when_drained: bool,
}

impl RunConfig {
    pub fn new(kappa: u32, horizon: u64, seed: u64, schedule: ScheduleSpec) -> Self {
        Self {
            kappa,
            horizon,
            seed,
            schedule,
            strict_lemmas: false,
            verify_coding: false,
            stride: default_stride(horizon),
            detect_sparse: false,
            continuous_backlog: false,
            decoder_lookback: None,
            payload_len: 4,
            stop_when_drained: false,
        }
    }

    pub fn validate(&self) -> Result<Kappa, RunError> {
        let kappa = Kappa::new(self.kappa)?;
        if self.horizon == 0 {
            return Err(RunError::ZeroHorizon);
        }
        if self.stride == 0 {
            return Err(RunError::ZeroStride);
        }
        if self.decoder_lookback == Some(0) {
            return Err(RunError::Channel(ChannelError::ZeroLookback));
        }
        Ok(kappa)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RunError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("stride must be at least 1")]
    ZeroStride,
    #[error("potential bound violated in epoch {}..={}: delta {} > bound {} ({:?})",
        .0.start_slot, .0.end_slot, .0.delta_phi, .0.bound, .0.case)]
    LemmaViolation(Box<EpochDeltaVerdict>),
    #[error("{check} accounting violated at slot {slot}")]
    AccountingViolation { check: &'static str, slot: u64 },
}

/// Backlog and potential at one sampled slot (after the slot's updates).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotSample {
    pub slot: u64,
    pub n_t: u64,
    pub m_t: u64,
    pub active: u64,
    pub arrivals: u64,
    pub delivered: u64,
    pub contention: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch_kind: EpochKind,
    pub start_slot: u64,
    pub end_slot: u64,
    pub length: u64,
    pub joiners: u64,
    pub arrivals: u64,
    pub contention: f64,
    pub is_error_epoch: bool,
    pub activated: u64,
}

/// One line of the run's event stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Record {
    Slot(SlotSample),
    Epoch(EpochRecord),
    Event(DecodingEvent),
    Verdict(EpochDeltaVerdict),
    Sparse(SparseEvent),
    Report(Box<RunReport>),
}

pub trait RecordSink {
    /// When false, records are not even built.
    fn enabled(&self) -> bool {
        true
    }
    fn record(&mut self, record: Record);
}

/// Discards everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl RecordSink for NullSink {
    fn enabled(&self) -> bool {
        false
    }
    fn record(&mut self, _: Record) {}
}

impl RecordSink for Vec<Record> {
    fn record(&mut self, record: Record) {
        self.push(record);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochCounts {
    pub silent: u64,
    pub successful: u64,
    pub overfull: u64,
}

impl EpochCounts {
    pub fn total(&self) -> u64 {
        self.silent + self.successful + self.overfull
    }
}

/// Latency in slots from arrival to delivery, over delivered packets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub p50: Option<u64>,
    pub p99: Option<u64>,
    pub max: Option<u64>,
    pub mean: Option<f64>,
}

impl LatencyStats {
    /// Nearest-rank percentiles.
    pub fn from_latencies(mut v: Vec<u64>) -> Self {
        if v.is_empty() {
            return Self::default();
        }
        v.sort_unstable();
        let rank = |q: f64| {
            let r = libm::ceil(q * v.len() as f64) as usize;
            v[r.clamp(1, v.len()) - 1]
        };
        let sum: u128 = v.iter().map(|&x| x as u128).sum();
        Self {
            p50: Some(rank(0.5)),
            p99: Some(rank(0.99)),
            max: v.last().copied(),
            mean: Some(sum as f64 / v.len() as f64),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LemmaSummary {
    pub epochs_checked: u64,
    pub violations: u64,
    pub successful_case: u64,
    pub strict_case: u64,
    pub relaxed_case: u64,
    pub error_case: u64,
    /// Largest `delta_phi - bound` seen; negative when every epoch had slack.
    pub max_excess: Option<f64>,
    pub arrival_checks: u64,
    pub arrival_violations: u64,
    pub activation_checks: u64,
    pub activation_violations: u64,
    pub monotone_checks: u64,
    pub monotone_violations: u64,
    pub first_violation: Option<EpochDeltaVerdict>,
}

impl LemmaSummary {
    pub fn all_satisfied(&self) -> bool {
        self.violations == 0
            && self.arrival_violations == 0
            && self.activation_violations == 0
            && self.monotone_violations == 0
    }
}

/// Decoder events versus successful epochs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgreementSummary {
    pub decoding_events: u64,
    pub successful_epochs: u64,
    pub mismatches: u64,
    pub first_mismatch_slot: Option<u64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CodingSummary {
    pub checked: u64,
    pub singular: u64,
    pub round_trip_failures: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub kappa: u32,
    pub seed: u64,
    pub horizon: u64,
    pub slots_run: u64,
    pub w: Option<u64>,
    pub arrivals: u64,
    pub delivered: u64,
    /// Still in the system when the run stopped.
    pub censored: u64,
    pub max_backlog: u64,
    pub final_backlog: u64,
    pub backlog_samples: u64,
    pub latency: LatencyStats,
    pub last_delivery_slot: Option<u64>,
    pub epochs: EpochCounts,
    pub error_epochs: u64,
    pub error_rate: f64,
    pub sparse_events: u64,
    pub lemmas: LemmaSummary,
    pub agreement: AgreementSummary,
    pub coding: Option<CodingSummary>,
    pub conservation_violations: u64,
    pub latency_violations: u64,
    /// `delivered / slots_run`.
    pub throughput: f64,
}

struct Checker<'k> {
    kappa: &'k Kappa,
    strict: bool,
    summary: LemmaSummary,
}

impl Checker<'_> {
    fn accounting(&mut self, ok: bool, check: &'static str, slot: u64) -> Result<(), RunError> {
        if !ok && self.strict {
            return Err(RunError::AccountingViolation { check, slot });
        }
        Ok(())
    }

    fn arrivals(
        &mut self,
        before: &PotentialSnapshot,
        after: &PotentialSnapshot,
        k: u64,
    ) -> Result<(), RunError> {
        let ok = check_arrivals(self.kappa, before, after, k);
        self.summary.arrival_checks += 1;
        self.summary.arrival_violations += u64::from(!ok);
        self.accounting(ok, "arrival", after.slot)
    }

    fn activation(
        &mut self,
        start: &PotentialSnapshot,
        pre: &PotentialSnapshot,
        post: &PotentialSnapshot,
        is_error: bool,
    ) -> Result<(), RunError> {
        let (_, ok) = check_activation(self.kappa, start, pre, post, is_error);
        self.summary.activation_checks += 1;
        self.summary.activation_violations += u64::from(!ok);
        self.accounting(ok, "activation", post.slot)
    }

    fn monotone(
        &mut self,
        before: &PotentialSnapshot,
        after: &PotentialSnapshot,
        arrivals: u64,
    ) -> Result<(), RunError> {
        let ok = check_successful_monotone(self.kappa, before, after, arrivals);
        self.summary.monotone_checks += 1;
        self.summary.monotone_violations += u64::from(!ok);
        self.accounting(ok, "monotone", after.slot)
    }

    fn epoch(&mut self, v: &EpochDeltaVerdict) -> Result<(), RunError> {
        let s = &mut self.summary;
        s.epochs_checked += 1;
        match v.case {
            BoundCase::Successful => s.successful_case += 1,
            BoundCase::NonErrorStrict => s.strict_case += 1,
            BoundCase::NonErrorRelaxed => s.relaxed_case += 1,
            BoundCase::Error => s.error_case += 1,
        }
        let excess = v.delta_phi - v.bound;
        s.max_excess = Some(s.max_excess.map_or(excess, |m| m.max(excess)));
        if !v.satisfied {
            s.violations += 1;
            if s.first_violation.is_none() {
                s.first_violation = Some(v.clone());
            }
            if self.strict {
                return Err(RunError::LemmaViolation(Box::new(v.clone())));
            }
        }
        Ok(())
    }
}

fn agrees(event: Option<&DecodingEvent>, outcome: Option<&EpochOutcome>) -> bool {
    let successful = outcome.filter(|o| o.kind == EpochKind::Successful);
    match (event, successful) {
        (None, None) => true,
        (Some(e), Some(o)) => {
            e.window_start == o.start_slot
                && e.window_end == o.end_slot
                && e.good_slots as u64 == o.length
                && e.decoded_packets == o.joiners
        }
        _ => false,
    }
}

/// Runs one simulation, streaming records into `sink`.
///
/// The result depends only on `config`. The final record is the report.
pub fn run<S: RecordSink + ?Sized>(
    config: &RunConfig,
    sink: &mut S,
) -> Result<RunReport, RunError> {
    let kappa = config.validate()?;
    let k = kappa.get();
    let schedule = config.schedule.build(k, config.horizon, config.seed)?;
    let arrivals_end = schedule.entries().last().map_or(0, |&(s, _)| s + 1);
    let mut upcoming = schedule.entries().iter().copied().peekable();

    let mut state = ProtocolState::new(
        kappa.clone(),
        DetRng::for_stream(config.seed, STREAM_PROTOCOL),
    );
    let mut decoder = match config.decoder_lookback {
        Some(l) => DecoderState::with_lookback(k, l)?,
        None => DecoderState::new(k)?,
    };
    let mut coding_rng = DetRng::for_stream(config.seed, STREAM_CODING);
    let mut coding = config.verify_coding.then(CodingSummary::default);
    let lookback = config.decoder_lookback.unwrap_or(2 * k as usize);
    let mut good_slots: VecDeque<SlotRecord> = VecDeque::new();

    let mut checker = Checker {
        kappa: &kappa,
        strict: config.strict_lemmas,
        summary: LemmaSummary::default(),
    };
    let mut agreement = AgreementSummary::default();
    let mut epochs = EpochCounts::default();
    let mut error_epochs = 0u64;
    let mut sparse_events = 0u64;
    let mut latencies: Vec<u64> = Vec::new();
    let mut last_delivery = None;
    let mut latency_violations = 0u64;
    let mut conservation_violations = 0u64;
    let mut max_backlog = 0u64;
    let mut backlog_samples = 0u64;
    let emit = sink.enabled();

    let mut epoch_start = potential::snapshot(&state, 0);
    let mut slots_run = 0u64;

    for t in 0..config.horizon {
        slots_run = t + 1;

        let mut arriving = 0;
        while let Some(&(s, n)) = upcoming.peek() {
            if s > t {
                break;
            }
            if s == t {
                arriving += n;
            }
            upcoming.next();
        }
        if arriving > 0 {
            let before = potential::snapshot(&state, t);
            state.inject(arriving, t);
            let after = potential::snapshot(&state, t);
            checker.arrivals(&before, &after, arriving)?;
        }

        if !state.epoch_in_progress() {
            state.begin_epoch(t)?;
        }
        let transmitters = state.transmitters();
        let event = decoder.advance_slot(t, transmitters);
        if let Some(cs) = coding.as_mut() {
            if SlotClass::from_count(transmitters.len(), k) == SlotClass::Good {
                good_slots.push_back(SlotRecord::new(t, transmitters.to_vec(), k)?);
                if good_slots.len() > lookback {
                    good_slots.pop_front();
                }
            }
            if let Some(e) = &event {
                verify_event(
                    e,
                    good_slots.make_contiguous(),
                    config.payload_len,
                    &mut coding_rng,
                    cs,
                );
                good_slots.clear();
            }
        }

        let outcome = state.finish_slot(t)?;
        agreement.decoding_events += u64::from(event.is_some());
        if !agrees(event.as_ref(), outcome.as_ref()) {
            agreement.mismatches += 1;
            agreement.first_mismatch_slot.get_or_insert(t);
        }
        if emit {
            if let Some(e) = event {
                sink.record(Record::Event(e));
            }
        }

        if let Some(out) = outcome {
            let is_error = classify_error_epoch(out.contention, out.kind, &kappa);
            error_epochs += u64::from(is_error);
            match out.kind {
                EpochKind::Silent => epochs.silent += 1,
                EpochKind::Successful => {
                    epochs.successful += 1;
                    agreement.successful_epochs += 1;
                }
                EpochKind::Overfull => epochs.overfull += 1,
            }

            for d in state.apply_probability_updates(&out) {
                let lat = d.delivery_slot.saturating_sub(d.arrival_slot);
                if d.delivery_slot < d.arrival_slot + 1 {
                    latency_violations += 1;
                }
                latencies.push(lat);
                last_delivery = Some(d.delivery_slot);
            }
            let mut activated = 0;
            if out.kind == EpochKind::Silent {
                let pre = potential::snapshot(&state, t);
                activated = state.activate(t);
                let post = potential::snapshot(&state, t);
                checker.activation(&epoch_start, &pre, &post, is_error)?;
            }

            let after = potential::snapshot(&state, t);
            if out.kind == EpochKind::Successful {
                checker.monotone(&epoch_start, &after, out.arrivals_during)?;
            }
            let verdict = check_epoch_delta(&kappa, &epoch_start, &after, &out, is_error);
            if emit {
                sink.record(Record::Epoch(EpochRecord {
                    epoch_kind: out.kind,
                    start_slot: out.start_slot,
                    end_slot: out.end_slot,
                    length: out.length,
                    joiners: out.joiners.len() as u64,
                    arrivals: out.arrivals_during,
                    contention: out.contention,
                    is_error_epoch: is_error,
                    activated,
                }));
                sink.record(Record::Verdict(verdict.clone()));
            }
            checker.epoch(&verdict)?;
            epoch_start = after;
        }

        let backlog = state.in_system();
        let sampled = t % config.stride == 0;
        if sampled || config.continuous_backlog {
            max_backlog = max_backlog.max(backlog);
        }
        if sampled {
            backlog_samples += 1;
            if state.total_injected() != state.delivered_count() + backlog {
                conservation_violations += 1;
            }
            if emit {
                sink.record(Record::Slot(SlotSample {
                    slot: t,
                    n_t: backlog,
                    m_t: state.inactive_count(),
                    active: state.active_count(),
                    arrivals: state.total_injected(),
                    delivered: state.delivered_count(),
                    contention: state.contention(),
                    phi: potential::snapshot(&state, t).phi,
                }));
            }
        }
        if config.detect_sparse {
            let snap = potential::snapshot(&state, t);
            if potential::is_sparse(&snap, &kappa) {
                sparse_events += 1;
                if emit {
                    sink.record(Record::Sparse(SparseEvent {
                        slot: t,
                        phi: snap.phi,
                        contention: snap.contention,
                        p_min: snap.p_min,
                    }));
                }
            }
        }

        if config.stop_when_drained && t + 1 >= arrivals_end && backlog == 0 {
            break;
        }
    }

    let delivered = state.delivered_count();
    let total_epochs = epochs.total();
    let report = RunReport {
        kappa: k,
        seed: config.seed,
        horizon: config.horizon,
        slots_run,
        w: config.schedule.window(),
        arrivals: state.total_injected(),
        delivered,
        censored: state.in_system(),
        max_backlog,
        final_backlog: state.in_system(),
        backlog_samples,
        latency: LatencyStats::from_latencies(latencies),
        last_delivery_slot: last_delivery,
        epochs,
        error_epochs,
        error_rate: if total_epochs == 0 {
            0.0
        } else {
            error_epochs as f64 / total_epochs as f64
        },
        sparse_events,
        lemmas: checker.summary,
        agreement,
        coding,
        conservation_violations,
        latency_violations,
        throughput: delivered as f64 / slots_run as f64,
    };
    if emit {
        sink.record(Record::Report(Box::new(report.clone())));
    }
    Ok(report)
}

fn verify_event(
    event: &DecodingEvent,
    slots: &[SlotRecord],
    payload_len: usize,
    rng: &mut DetRng,
    summary: &mut CodingSummary,
) {
    summary.checked += 1;
    let t = build_matrix(event, slots, CoeffMode::Random, rng);
    let m = MessageVector::random(t.packets.len(), payload_len, rng);
    if !t.is_invertible() {
        summary.singular += 1;
        return;
    }
    let ok = received_sums(&m, &t)
        .and_then(|sums| decode(&sums, &t))
        .is_ok_and(|d| d == m);
    summary.round_trip_failures += u64::from(!ok);
}

/// Convenience for callers that only want the report.
pub fn run_quiet(config: &RunConfig) -> Result<RunReport, RunError> {
    run(config, &mut NullSink)
}

/// Display name of a packet list, used by tools printing events.
pub fn format_packets(ids: &[PacketId]) -> String {
    let mut s = String::new();
    for (i, id) in ids.iter().enumerate() {
        if i > 0 {
            s.push(';');
        }
        s.push_str(&alloc::format!("{}", id.0));
    }
    s
}
