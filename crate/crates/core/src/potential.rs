//! The four-term potential and the per-epoch inequalities it satisfies.
//!
//! ```text
//! phi = N + max(0, 4 kappa log_k(c / sqrt(kappa))) + 4 log_k(1 / p_min) + 5 M / ln(kappa)
//! ```
//!
//! `N` counts packets in the system, `M` inactive packets, `c` is the
//! contention and `p_min` the smallest active joining probability (1 when
//! nothing is active).
//!
//! Deltas between snapshots are summed term by term: the `N`, `M` and `s`
//! parts are exact integers, so only the contention term carries float
//! error. Inequalities are checked with relative slack `1e-9` and absolute
//! slack `1e-12`.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::protocol::{EpochKind, EpochOutcome, Kappa, ProtocolState};

/// Relative slack for lemma inequalities.
pub const REL_TOL: f64 = 1e-9;
/// Absolute slack for lemma inequalities.
pub const ABS_TOL: f64 = 1e-12;
/// Relative slack on contention thresholds, which are compared against sums
/// of irrational powers.
const THRESHOLD_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialSnapshot {
    pub slot: u64,
    pub n_t: u64,
    pub m_t: u64,
    pub contention: f64,
    pub p_min: f64,
    pub n_term: f64,
    pub logc_term: f64,
    pub s_term: f64,
    pub u_term: f64,
    pub phi: f64,
}

impl PotentialSnapshot {
    /// Snapshot from raw quantities; `s` is computed from `p_min` in floats.
    pub fn from_parts(
        kappa: &Kappa,
        slot: u64,
        n_t: u64,
        m_t: u64,
        contention: f64,
        p_min: f64,
    ) -> Self {
        let s_term = 4.0 * kappa.log(1.0 / p_min);
        Self::assemble(kappa, slot, n_t, m_t, contention, p_min, s_term)
    }

    fn assemble(
        kappa: &Kappa,
        slot: u64,
        n_t: u64,
        m_t: u64,
        contention: f64,
        p_min: f64,
        s_term: f64,
    ) -> Self {
        let n_term = n_t as f64;
        let logc_term = logc_term(kappa, contention);
        let u_term = 5.0 * m_t as f64 / kappa.ln();
        Self {
            slot,
            n_t,
            m_t,
            contention,
            p_min,
            n_term,
            logc_term,
            s_term,
            u_term,
            phi: n_term + logc_term + s_term + u_term,
        }
    }
}

/// `max(0, 4 kappa log_kappa(c / sqrt(kappa)))`.
pub fn logc_term(kappa: &Kappa, contention: f64) -> f64 {
    if contention <= kappa.sqrt() {
        return 0.0;
    }
    (4.0 * kappa.as_f64() * kappa.log(contention / kappa.sqrt())).max(0.0)
}

/// Potential of a protocol state. `p_min` sits on the `kappa^(-d/4)`
/// lattice, so the `s` term is exactly the largest active depth.
pub fn snapshot(state: &ProtocolState, slot: u64) -> PotentialSnapshot {
    let kappa = state.kappa();
    let s_term = state.max_depth().map_or(0.0, |d| d as f64);
    PotentialSnapshot::assemble(
        kappa,
        slot,
        state.in_system(),
        state.inactive_count(),
        state.contention(),
        state.p_min(),
        s_term,
    )
}

/// Potential added by each arriving packet: `1 + 5/ln(kappa)`.
pub fn arrival_increment(kappa: &Kappa) -> f64 {
    1.0 + 5.0 / kappa.ln()
}

/// `phi(after) - phi(before)` summed term by term.
pub fn delta_phi(kappa: &Kappa, before: &PotentialSnapshot, after: &PotentialSnapshot) -> f64 {
    let dn = after.n_t as f64 - before.n_t as f64;
    let dm = after.m_t as f64 - before.m_t as f64;
    dn + (after.logc_term - before.logc_term)
        + (after.s_term - before.s_term)
        + 5.0 * dm / kappa.ln()
}

/// `value <= bound` up to the lemma tolerance.
#[inline]
pub fn within(value: f64, bound: f64) -> bool {
    value <= bound + REL_TOL * bound.abs() + ABS_TOL
}

#[inline]
fn at_least_quarter(c: f64, kappa: &Kappa) -> bool {
    c >= kappa.quarter() * (1.0 - THRESHOLD_EPS)
}

#[inline]
fn at_most_three_quarter(c: f64, kappa: &Kappa) -> bool {
    c <= kappa.three_quarter() * (1.0 + THRESHOLD_EPS)
}

/// `p_min < 1/sqrt(kappa)`, read off the `s` term (`s > 2`).
#[inline]
fn p_min_below_initial(s: &PotentialSnapshot) -> bool {
    s.s_term > 2.0 + 1e-9
}

/// Silent epoch at contention `>= kappa^(1/4)`, or overfull epoch at
/// contention `<= kappa^(3/4)`.
pub fn classify_error_epoch(c_before: f64, kind: EpochKind, kappa: &Kappa) -> bool {
    match kind {
        EpochKind::Silent => at_least_quarter(c_before, kappa),
        EpochKind::Overfull => at_most_three_quarter(c_before, kappa),
        EpochKind::Successful => false,
    }
}

/// Which inequality applies to an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundCase {
    /// `dphi <= -l + i(1 + 5/ln k)`
    Successful,
    /// Non-error epoch starting with `phi > 6k`, `p_min < 1/sqrt(k)` or
    /// `c >= k^(1/4)`: `dphi <= -l(1 - 1/k) + i(1 + 5/ln k)`.
    NonErrorStrict,
    /// Any other non-error epoch: the strict bound plus 2.
    NonErrorRelaxed,
    /// `dphi <= k + i(1 + 5/ln k) + 2`
    Error,
}

/// Upper bound on the potential change over an epoch.
pub fn epoch_bound(
    kappa: &Kappa,
    before: &PotentialSnapshot,
    kind: EpochKind,
    length: u64,
    arrivals: u64,
    is_error: bool,
) -> (BoundCase, f64) {
    let k = kappa.as_f64();
    let l = length as f64;
    let inflow = arrivals as f64 * arrival_increment(kappa);
    if is_error {
        return (BoundCase::Error, k + inflow + 2.0);
    }
    if kind == EpochKind::Successful {
        return (BoundCase::Successful, -l + inflow);
    }
    let base = -l * (1.0 - 1.0 / k) + inflow;
    let strict = before.phi > 6.0 * k
        || p_min_below_initial(before)
        || at_least_quarter(before.contention, kappa);
    if strict {
        (BoundCase::NonErrorStrict, base)
    } else {
        (BoundCase::NonErrorRelaxed, base + 2.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochDeltaVerdict {
    pub epoch_kind: EpochKind,
    pub is_error_epoch: bool,
    pub case: BoundCase,
    pub delta_phi: f64,
    pub bound: f64,
    pub satisfied: bool,
    pub start_slot: u64,
    pub end_slot: u64,
    pub length: u64,
    pub arrivals: u64,
    pub phi_before: f64,
    pub c_before: f64,
    pub p_min_before: f64,
}

/// Checks the potential change across one epoch.
///
/// `before` is the snapshot immediately before the epoch's first slot and
/// `after` the one after its last slot's updates and activations.
pub fn check_epoch_delta(
    kappa: &Kappa,
    before: &PotentialSnapshot,
    after: &PotentialSnapshot,
    outcome: &EpochOutcome,
    is_error: bool,
) -> EpochDeltaVerdict {
    let (case, bound) = epoch_bound(
        kappa,
        before,
        outcome.kind,
        outcome.length,
        outcome.arrivals_during,
        is_error,
    );
    let delta = delta_phi(kappa, before, after);
    EpochDeltaVerdict {
        epoch_kind: outcome.kind,
        is_error_epoch: is_error,
        case,
        delta_phi: delta,
        bound,
        satisfied: within(delta, bound),
        start_slot: outcome.start_slot,
        end_slot: outcome.end_slot,
        length: outcome.length,
        arrivals: outcome.arrivals_during,
        phi_before: before.phi,
        c_before: before.contention,
        p_min_before: before.p_min,
    }
}

/// Injecting `k` packets must add exactly `k(1 + 5/ln kappa)`, all of it in
/// the `N` and `u` terms.
pub fn check_arrivals(
    kappa: &Kappa,
    before: &PotentialSnapshot,
    after: &PotentialSnapshot,
    k: u64,
) -> bool {
    let expect = k as f64 * arrival_increment(kappa);
    let d = delta_phi(kappa, before, after);
    after.n_t == before.n_t + k
        && after.m_t == before.m_t + k
        && after.logc_term == before.logc_term
        && after.s_term == before.s_term
        && (d - expect).abs() <= REL_TOL * expect.abs() + ABS_TOL
}

/// Activation at a silent slot: the change from activations alone must be
/// `<= 0` when the epoch is non-error and began with `phi > 6 kappa`, and
/// `< 2` always.
pub fn check_activation(
    kappa: &Kappa,
    epoch_start: &PotentialSnapshot,
    pre_activation: &PotentialSnapshot,
    post_activation: &PotentialSnapshot,
    is_error: bool,
) -> (f64, bool) {
    let d = delta_phi(kappa, pre_activation, post_activation);
    let ok = if !is_error && epoch_start.phi > 6.0 * kappa.as_f64() {
        within(d, 0.0)
    } else {
        d < 2.0
    };
    (d, ok)
}

/// Successful epochs never raise the contention or `s` terms, and change
/// `u` only through arrivals.
pub fn check_successful_monotone(
    kappa: &Kappa,
    before: &PotentialSnapshot,
    after: &PotentialSnapshot,
    arrivals: u64,
) -> bool {
    within(after.logc_term, before.logc_term)
        && after.s_term <= before.s_term
        && after.m_t == before.m_t + arrivals
        && {
            let du = 5.0 * (after.m_t - before.m_t) as f64 / kappa.ln();
            du == 5.0 * arrivals as f64 / kappa.ln()
        }
}

/// Slot with `phi <= 6 kappa`, contention `< kappa^(1/4)` and
/// `p_min >= 1/sqrt(kappa)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparseEvent {
    pub slot: u64,
    pub phi: f64,
    pub contention: f64,
    pub p_min: f64,
}

pub fn is_sparse(s: &PotentialSnapshot, kappa: &Kappa) -> bool {
    s.phi <= 6.0 * kappa.as_f64()
        && !at_least_quarter(s.contention, kappa)
        && !p_min_below_initial(s)
}

pub fn detect_sparse_events<'a, I>(snapshots: I, kappa: &Kappa) -> Vec<SparseEvent>
where
    I: IntoIterator<Item = &'a PotentialSnapshot>,
{
    snapshots
        .into_iter()
        .filter(|s| is_sparse(s, kappa))
        .map(|s| SparseEvent {
            slot: s.slot,
            phi: s.phi,
            contention: s.contention,
            p_min: s.p_min,
        })
        .collect()
}
