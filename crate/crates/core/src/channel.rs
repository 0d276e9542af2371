//! Slot semantics of the coded radio channel and the decoding-event detector.
//!
//! A slot is silent with no transmitters, good with between one and `kappa`
//! transmitters, and bad otherwise. The base station accumulates good slots
//! and fires a decoding event of size `j` as soon as some window that starts
//! at a good slot, holds no earlier event, and contains at least `j` good
//! slots has exactly `j` distinct packets transmitting in those good slots.
//! Windows are disjoint: once an event fires, every pending good slot up to
//! it is consumed or dropped for good.
//!
//! The detector knows nothing about the protocol, which is what lets the
//! simulator check the protocol's notion of a successful epoch against it.

use alloc::collections::VecDeque;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of a packet (one agent per packet).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct PacketId(pub u64);

impl fmt::Display for PacketId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChannelError {
    #[error("decoding threshold must be at least 1, got {0}")]
    InvalidKappa(u32),
    #[error("decoder lookback must be at least 1 slot")]
    ZeroLookback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotClass {
    Silent,
    Good,
    Bad,
}

impl SlotClass {
    /// Class of a slot with `count` distinct transmitters.
    #[inline]
    pub fn from_count(count: usize, kappa: u32) -> Self {
        match count {
            0 => SlotClass::Silent,
            c if c <= kappa as usize => SlotClass::Good,
            _ => SlotClass::Bad,
        }
    }
}

/// Classifies a slot by its transmitter set.
pub fn classify_slot(transmitters: &[PacketId], kappa: u32) -> Result<SlotClass, ChannelError> {
    if kappa < 1 {
        return Err(ChannelError::InvalidKappa(kappa));
    }
    Ok(SlotClass::from_count(transmitters.len(), kappa))
}

/// One slot of a channel trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub slot_index: u64,
    /// Sorted, without duplicates.
    pub transmitters: Vec<PacketId>,
    pub class: SlotClass,
}

impl SlotRecord {
    /// Builds a record, normalizing the transmitter set and classifying it.
    pub fn new(
        slot_index: u64,
        mut transmitters: Vec<PacketId>,
        kappa: u32,
    ) -> Result<Self, ChannelError> {
        transmitters.sort_unstable();
        transmitters.dedup();
        let class = classify_slot(&transmitters, kappa)?;
        Ok(Self {
            slot_index,
            transmitters,
            class,
        })
    }
}

/// A decoding event and its window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodingEvent {
    pub size: usize,
    pub window_start: u64,
    pub window_end: u64,
    /// Number of good slots inside the window.
    pub good_slots: usize,
    /// Sorted.
    pub decoded_packets: Vec<PacketId>,
}

/// Consecutive pending good slots that share one transmitter set.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Run {
    len: usize,
    transmitters: Vec<PacketId>,
}

/// Online detector state.
///
/// Pending good slots are stored run-length encoded by transmitter set, so a
/// protocol epoch (one fixed joiner set over many slots) costs one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderState {
    kappa: u32,
    lookback: usize,
    slots: VecDeque<u64>,
    runs: VecDeque<Run>,
    last_event_end: Option<u64>,
    last_slot: Option<u64>,
}

impl DecoderState {
    /// Detector with the default lookback of `2 * kappa` good slots.
    pub fn new(kappa: u32) -> Result<Self, ChannelError> {
        Self::with_lookback(kappa, 2 * kappa as usize)
    }

    pub fn with_lookback(kappa: u32, lookback: usize) -> Result<Self, ChannelError> {
        if kappa < 1 {
            return Err(ChannelError::InvalidKappa(kappa));
        }
        if lookback == 0 {
            return Err(ChannelError::ZeroLookback);
        }
        Ok(Self {
            kappa,
            lookback,
            slots: VecDeque::new(),
            runs: VecDeque::new(),
            last_event_end: None,
            last_slot: None,
        })
    }

    pub fn kappa(&self) -> u32 {
        self.kappa
    }

    pub fn lookback(&self) -> usize {
        self.lookback
    }

    pub fn last_event_end(&self) -> Option<u64> {
        self.last_event_end
    }

    /// Good slots received since the last event that are still usable.
    pub fn pending_good_slots(&self) -> impl Iterator<Item = (u64, &[PacketId])> + '_ {
        let mut slots = self.slots.iter();
        self.runs.iter().flat_map(move |run| {
            let set = run.transmitters.as_slice();
            (&mut slots)
                .take(run.len)
                .map(move |&s| (s, set))
                .collect::<Vec<_>>()
        })
    }

    pub fn pending_len(&self) -> usize {
        self.slots.len()
    }

    /// Feeds one slot. Returns the decoding event that fires at this slot, if
    /// any.
    ///
    /// # Panics
    ///
    /// If slot indices do not strictly increase across calls.
    pub fn advance(&mut self, record: &SlotRecord) -> Option<DecodingEvent> {
        self.advance_slot(record.slot_index, &record.transmitters)
    }

    /// Like [`advance`](Self::advance), taking the slot by parts.
    /// `transmitters` must be sorted and free of duplicates.
    pub fn advance_slot(&mut self, slot: u64, transmitters: &[PacketId]) -> Option<DecodingEvent> {
        if let Some(prev) = self.last_slot {
            assert!(slot > prev, "slot {slot} does not follow slot {prev}");
        }
        self.last_slot = Some(slot);
        debug_assert!(transmitters.windows(2).all(|w| w[0] < w[1]));

        if SlotClass::from_count(transmitters.len(), self.kappa) != SlotClass::Good {
            return None;
        }
        self.push_good(slot, transmitters);
        self.try_decode(slot)
    }

    fn push_good(&mut self, slot: u64, transmitters: &[PacketId]) {
        match self.runs.back_mut() {
            Some(run) if run.transmitters == transmitters => run.len += 1,
            _ => self.runs.push_back(Run {
                len: 1,
                transmitters: transmitters.to_vec(),
            }),
        }
        self.slots.push_back(slot);
        while self.slots.len() > self.lookback {
            self.slots.pop_front();
            let front = self.runs.front_mut().expect("runs cover slots");
            front.len -= 1;
            if front.len == 0 {
                self.runs.pop_front();
            }
        }
    }

    /// Looks for the earliest-starting window ending at `slot` that satisfies
    /// the decoding conditions.
    fn try_decode(&mut self, slot: u64) -> Option<DecodingEvent> {
        let total = self.slots.len();
        let mut union: Vec<PacketId> = Vec::new();
        let mut good = 0usize;
        let mut best: Option<usize> = None;
        for (idx, run) in self.runs.iter().enumerate().rev() {
            union = merge_sorted(&union, &run.transmitters);
            good += run.len;
            // Within a run the union is fixed, so the run's first slot gives
            // the most good slots.
            if union.len() <= good {
                best = Some(idx);
            }
            if union.len() > total {
                break;
            }
        }
        let start_run = best?;

        let mut decoded: Vec<PacketId> = Vec::new();
        let mut good_slots = 0usize;
        for run in self.runs.iter().skip(start_run) {
            decoded = merge_sorted(&decoded, &run.transmitters);
            good_slots += run.len;
        }
        let window_start = self.slots[total - good_slots];
        let event = DecodingEvent {
            size: decoded.len(),
            window_start,
            window_end: slot,
            good_slots,
            decoded_packets: decoded,
        };
        // Everything pending is either inside the window or before it; the
        // latter can never be used again.
        self.slots.clear();
        self.runs.clear();
        self.last_event_end = Some(slot);
        Some(event)
    }
}

fn merge_sorted(a: &[PacketId], b: &[PacketId]) -> Vec<PacketId> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            core::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            core::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            core::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Runs a whole trace through a fresh detector.
pub fn replay(
    kappa: u32,
    lookback: Option<usize>,
    trace: &[SlotRecord],
) -> Result<Vec<DecodingEvent>, ChannelError> {
    let mut decoder = match lookback {
        Some(l) => DecoderState::with_lookback(kappa, l)?,
        None => DecoderState::new(kappa)?,
    };
    Ok(trace.iter().filter_map(|r| decoder.advance(r)).collect())
}
