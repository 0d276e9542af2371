//! Discrete-time simulator for contention resolution on a coded radio
//! channel.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is pure
//! computation: the channel model and its decoding-event detector, the
//! decodable backoff protocol, arrival schedules, a GF(2^8) random linear
//! coding oracle, the four-term potential function with its per-epoch
//! checks, and the slot loop tying them together. File formats, JSONL/CSV
//! output and the command line live in the `coded-backoff` crate.

#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod adversary;
pub mod channel;
pub mod coding;
mod math;
pub mod potential;
pub mod protocol;
pub mod rng;
pub mod sim;

pub use adversary::{ArrivalSchedule, ScheduleError, SchedulePattern, Violation};
pub use channel::{classify_slot, DecoderState, DecodingEvent, PacketId, SlotClass, SlotRecord};
pub use coding::{CodingTrialSummary, CoeffMode, Gf256, MessageVector, TransmissionMatrix};
pub use potential::{EpochDeltaVerdict, PotentialSnapshot};
pub use protocol::{EpochKind, EpochOutcome, Kappa, ProtocolState};
pub use sim::{run, RunConfig, RunError, RunReport};
