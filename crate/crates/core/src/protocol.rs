//! The decodable backoff protocol.
//!
//! Packets arrive inactive and stay silent until they hear a silent slot,
//! at which point they become active with joining probability
//! `1/sqrt(kappa)`. Time is split into epochs: at the start of each epoch
//! every active packet joins independently with its joining probability and
//! the joiners then broadcast in every slot of the epoch. An epoch ends on a
//! silent slot, on a decoding event (at most `kappa` joiners), or after
//! `kappa` slots. Joining probabilities are multiplied by `kappa^(1/4)`
//! after silent epochs and divided by it after overfull ones.
//!
//! Every probability the protocol ever holds is `kappa^(-d/4)` for an
//! integer depth `d >= 0`, so packets store `d` and the float is derived.
//! Activation sets `d = 2`, a silent epoch decrements `d` (never below 0),
//! an overfull epoch increments it.

use alloc::collections::VecDeque;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::PacketId;
use crate::math;
use crate::rng::DetRng;

/// Smallest decoding threshold the protocol accepts.
pub const MIN_KAPPA: u32 = 6;

/// Depth of a freshly activated packet: `p = kappa^(-2/4)`.
pub const INITIAL_DEPTH: u32 = 2;

const DEPTH_TABLE: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("kappa must be at least {MIN_KAPPA}, got {0}")]
    KappaTooSmall(u32),
    #[error("an epoch is already in progress")]
    EpochInProgress,
    #[error("no epoch in progress")]
    NoEpoch,
}

/// Validated decoding threshold with its derived constants.
#[derive(Debug, Clone)]
pub struct Kappa {
    value: u32,
    ln: f64,
    quarter: f64,
    sqrt: f64,
    three_quarter: f64,
    probs: [f64; DEPTH_TABLE],
}

impl PartialEq for Kappa {
    fn eq(&self, other: &Self) -> bool {
        self.value == other.value
    }
}

impl Eq for Kappa {}

impl fmt::Display for Kappa {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

impl Kappa {
    pub fn new(value: u32) -> Result<Self, ProtocolError> {
        if value < MIN_KAPPA {
            return Err(ProtocolError::KappaTooSmall(value));
        }
        let k = value as f64;
        let mut probs = [0.0; DEPTH_TABLE];
        for (d, p) in probs.iter_mut().enumerate() {
            *p = if d == 0 {
                1.0
            } else {
                math::powf(k, -(d as f64) / 4.0)
            };
        }
        Ok(Self {
            value,
            ln: math::ln(k),
            quarter: math::powf(k, 0.25),
            sqrt: math::sqrt(k),
            three_quarter: math::powf(k, 0.75),
            probs,
        })
    }

    #[inline]
    pub fn get(&self) -> u32 {
        self.value
    }

    #[inline]
    pub fn as_f64(&self) -> f64 {
        self.value as f64
    }

    /// Natural log of kappa.
    #[inline]
    pub fn ln(&self) -> f64 {
        self.ln
    }

    /// `kappa^(1/4)`: the update factor and the low edge of good contention.
    #[inline]
    pub fn quarter(&self) -> f64 {
        self.quarter
    }

    /// `sqrt(kappa)`: the target contention.
    #[inline]
    pub fn sqrt(&self) -> f64 {
        self.sqrt
    }

    /// `kappa^(3/4)`: the high edge of good contention.
    #[inline]
    pub fn three_quarter(&self) -> f64 {
        self.three_quarter
    }

    /// `1/sqrt(kappa)`: the initial joining probability.
    #[inline]
    pub fn initial_prob(&self) -> f64 {
        self.prob_at_depth(INITIAL_DEPTH)
    }

    /// `kappa^(-depth/4)`.
    #[inline]
    pub fn prob_at_depth(&self, depth: u32) -> f64 {
        match self.probs.get(depth as usize) {
            Some(&p) => p,
            None => math::powf(self.as_f64(), -(depth as f64) / 4.0),
        }
    }

    /// `log_kappa(x)`.
    #[inline]
    pub fn log(&self, x: f64) -> f64 {
        math::ln(x) / self.ln
    }
}

impl Serialize for Kappa {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u32(self.value)
    }
}

impl<'de> Deserialize<'de> for Kappa {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = u32::deserialize(d)?;
        Kappa::new(v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PacketStatus {
    Inactive,
    Active,
    Delivered,
}

/// A live packet as seen from outside the state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Packet {
    pub id: PacketId,
    pub arrival_slot: u64,
    pub status: PacketStatus,
    pub join_prob: f64,
    pub delivery_slot: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpochKind {
    Silent,
    Successful,
    Overfull,
}

impl fmt::Display for EpochKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EpochKind::Silent => "silent",
            EpochKind::Successful => "successful",
            EpochKind::Overfull => "overfull",
        })
    }
}

/// A finished epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochOutcome {
    pub kind: EpochKind,
    pub start_slot: u64,
    pub end_slot: u64,
    /// Number of slots, in `1..=kappa`.
    pub length: u64,
    /// Sorted.
    pub joiners: Vec<PacketId>,
    /// Packets injected from the epoch's first slot through its last.
    pub arrivals_during: u64,
    /// Contention while the epoch ran (it is frozen for the whole epoch).
    pub contention: f64,
}

/// Decides whether an epoch ends after `slots_elapsed` slots.
///
/// The decoding-event check runs before the `kappa`-slots check, so exactly
/// `kappa` joiners give a successful epoch.
pub fn end_epoch_classify(joiners: usize, slots_elapsed: u64, kappa: u32) -> Option<EpochKind> {
    if joiners == 0 {
        return (slots_elapsed >= 1).then_some(EpochKind::Silent);
    }
    if joiners <= kappa as usize {
        return (slots_elapsed >= joiners as u64).then_some(EpochKind::Successful);
    }
    (slots_elapsed >= kappa as u64).then_some(EpochKind::Overfull)
}

/// The multiplicative update applied to a single joining probability, capped
/// at 1.
pub fn updated_join_prob(p: f64, kind: EpochKind, kappa: &Kappa) -> f64 {
    match kind {
        EpochKind::Silent => (p * kappa.quarter()).min(1.0),
        EpochKind::Overfull => p / kappa.quarter(),
        EpochKind::Successful => p,
    }
}

/// A packet that left the system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delivery {
    pub id: PacketId,
    pub arrival_slot: u64,
    pub delivery_slot: u64,
}

#[derive(Debug, Clone)]
struct ActivePacket {
    id: PacketId,
    arrival_slot: u64,
    depth: u32,
    joined: bool,
}

#[derive(Debug, Clone)]
struct Epoch {
    start_slot: u64,
    joiners: Vec<PacketId>,
    slots_elapsed: u64,
    contention: f64,
}

/// Protocol state for one run.
#[derive(Debug, Clone)]
pub struct ProtocolState {
    kappa: Kappa,
    next_id: u64,
    inactive: VecDeque<(PacketId, u64)>,
    active: Vec<ActivePacket>,
    depth_counts: Vec<u64>,
    contention: f64,
    delivered: u64,
    arrivals_since_boundary: u64,
    epoch: Option<Epoch>,
    rng: DetRng,
}

impl ProtocolState {
    pub fn new(kappa: Kappa, rng: DetRng) -> Self {
        Self {
            kappa,
            next_id: 0,
            inactive: VecDeque::new(),
            active: Vec::new(),
            depth_counts: Vec::new(),
            contention: 0.0,
            delivered: 0,
            arrivals_since_boundary: 0,
            epoch: None,
            rng,
        }
    }

    pub fn kappa(&self) -> &Kappa {
        &self.kappa
    }

    /// Packets in the system (`N_t`).
    pub fn in_system(&self) -> u64 {
        (self.inactive.len() + self.active.len()) as u64
    }

    /// Inactive packets (`M_t`).
    pub fn inactive_count(&self) -> u64 {
        self.inactive.len() as u64
    }

    pub fn active_count(&self) -> u64 {
        self.active.len() as u64
    }

    pub fn delivered_count(&self) -> u64 {
        self.delivered
    }

    pub fn total_injected(&self) -> u64 {
        self.next_id
    }

    /// Sum of joining probabilities of active packets (`c_t`).
    pub fn contention(&self) -> f64 {
        self.contention
    }

    /// Largest depth among active packets, if any. `p_min = kappa^(-d/4)`.
    pub fn max_depth(&self) -> Option<u32> {
        self.depth_counts
            .iter()
            .rposition(|&c| c > 0)
            .map(|d| d as u32)
    }

    /// Minimum joining probability over active packets, 1 when none.
    pub fn p_min(&self) -> f64 {
        self.max_depth()
            .map_or(1.0, |d| self.kappa.prob_at_depth(d))
    }

    /// Active packet counts indexed by depth.
    pub fn depth_counts(&self) -> &[u64] {
        &self.depth_counts
    }

    pub fn epoch_in_progress(&self) -> bool {
        self.epoch.is_some()
    }

    /// Joiners of the running epoch (empty when none is running).
    pub fn transmitters(&self) -> &[PacketId] {
        self.epoch.as_ref().map_or(&[], |e| e.joiners.as_slice())
    }

    /// Looks up a packet still in the system.
    pub fn packet(&self, id: PacketId) -> Option<Packet> {
        if let Ok(i) = self.active.binary_search_by_key(&id, |p| p.id) {
            let p = &self.active[i];
            return Some(Packet {
                id,
                arrival_slot: p.arrival_slot,
                status: PacketStatus::Active,
                join_prob: self.kappa.prob_at_depth(p.depth),
                delivery_slot: None,
            });
        }
        let i = self
            .inactive
            .binary_search_by_key(&id, |&(pid, _)| pid)
            .ok()?;
        Some(Packet {
            id,
            arrival_slot: self.inactive[i].1,
            status: PacketStatus::Inactive,
            join_prob: 0.0,
            delivery_slot: None,
        })
    }

    /// Status of any packet ever injected.
    pub fn status(&self, id: PacketId) -> Option<PacketStatus> {
        if id.0 >= self.next_id {
            return None;
        }
        Some(
            self.packet(id)
                .map_or(PacketStatus::Delivered, |p| p.status),
        )
    }

    /// Injects `count` inactive packets arriving at `slot`. Contention is
    /// unchanged.
    pub fn inject(&mut self, count: u64, slot: u64) {
        for _ in 0..count {
            self.inactive.push_back((PacketId(self.next_id), slot));
            self.next_id += 1;
        }
        self.arrivals_since_boundary += count;
    }

    /// Starts an epoch at `slot`: each active packet, in id order, consumes
    /// one draw and joins with its joining probability.
    pub fn begin_epoch(&mut self, slot: u64) -> Result<&[PacketId], ProtocolError> {
        if self.epoch.is_some() {
            return Err(ProtocolError::EpochInProgress);
        }
        let mut joiners = Vec::new();
        for p in &mut self.active {
            let prob = self.kappa.prob_at_depth(p.depth);
            p.joined = self.rng.bernoulli(prob);
            if p.joined {
                joiners.push(p.id);
            }
        }
        self.epoch = Some(Epoch {
            start_slot: slot,
            joiners,
            slots_elapsed: 0,
            contention: self.contention,
        });
        Ok(self.transmitters())
    }

    /// Closes the current slot of the running epoch. Returns the outcome if
    /// the epoch ended at `slot`; probabilities are not yet updated.
    pub fn finish_slot(&mut self, slot: u64) -> Result<Option<EpochOutcome>, ProtocolError> {
        let epoch = self.epoch.as_mut().ok_or(ProtocolError::NoEpoch)?;
        epoch.slots_elapsed += 1;
        let Some(kind) =
            end_epoch_classify(epoch.joiners.len(), epoch.slots_elapsed, self.kappa.get())
        else {
            return Ok(None);
        };
        let epoch = self.epoch.take().expect("checked above");
        Ok(Some(EpochOutcome {
            kind,
            start_slot: epoch.start_slot,
            end_slot: slot,
            length: epoch.slots_elapsed,
            joiners: epoch.joiners,
            arrivals_during: core::mem::take(&mut self.arrivals_since_boundary),
            contention: epoch.contention,
        }))
    }

    /// Applies the end-of-epoch rule: probability updates, deliveries, and
    /// (after a silent epoch) activation of inactive packets that arrived
    /// before the silent slot.
    pub fn apply_updates(&mut self, outcome: &EpochOutcome) -> (Vec<Delivery>, u64) {
        let delivered = self.apply_probability_updates(outcome);
        let activated = if outcome.kind == EpochKind::Silent {
            self.activate(outcome.end_slot)
        } else {
            0
        };
        (delivered, activated)
    }

    /// The probability/delivery half of [`apply_updates`](Self::apply_updates).
    pub fn apply_probability_updates(&mut self, outcome: &EpochOutcome) -> Vec<Delivery> {
        let mut delivered = Vec::new();
        match outcome.kind {
            EpochKind::Silent => {
                for p in &mut self.active {
                    p.depth = p.depth.saturating_sub(1);
                }
            }
            EpochKind::Overfull => {
                for p in &mut self.active {
                    p.depth += 1;
                }
            }
            EpochKind::Successful => {
                let end = outcome.end_slot;
                self.active.retain(|p| {
                    if p.joined {
                        delivered.push(Delivery {
                            id: p.id,
                            arrival_slot: p.arrival_slot,
                            delivery_slot: end,
                        });
                    }
                    !p.joined
                });
                self.delivered += delivered.len() as u64;
            }
        }
        for p in &mut self.active {
            p.joined = false;
        }
        self.rebuild_depths();
        delivered
    }

    /// Activates every inactive packet that arrived strictly before `slot`
    /// (the silent slot they heard). Returns how many activated.
    pub fn activate(&mut self, slot: u64) -> u64 {
        let mut n = 0;
        while let Some(&(id, arrival)) = self.inactive.front() {
            if arrival >= slot {
                break;
            }
            self.inactive.pop_front();
            self.active.push(ActivePacket {
                id,
                arrival_slot: arrival,
                depth: INITIAL_DEPTH,
                joined: false,
            });
            n += 1;
        }
        if n > 0 {
            self.rebuild_depths();
        }
        n
    }

    fn rebuild_depths(&mut self) {
        self.depth_counts.clear();
        for p in &self.active {
            let d = p.depth as usize;
            if d >= self.depth_counts.len() {
                self.depth_counts.resize(d + 1, 0);
            }
            self.depth_counts[d] += 1;
        }
        self.contention = self
            .depth_counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .fold(0.0, |acc, (d, &c)| {
                acc + c as f64 * self.kappa.prob_at_depth(d as u32)
            });
    }
}
