//! Text trace formats.
//!
//! Arrival traces have one `slot,count` pair per line. Slot traces have one
//! `slot,transmitters` pair per line, transmitters separated by `;` (an
//! empty field is a silent slot). In both, `#` starts a comment, blank lines
//! are ignored and a non-numeric first line is taken as a header.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use coded_backoff_core::{ArrivalSchedule, PacketId};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

fn parse_err(line: usize, msg: impl Into<String>) -> TraceError {
    TraceError::Parse {
        line,
        msg: msg.into(),
    }
}

fn read(path: &Path) -> Result<String, TraceError> {
    fs::read_to_string(path).map_err(|source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Non-empty, comment-stripped lines as `(line number, two fields)`.
fn records(text: &str) -> Result<Vec<(usize, &str, &str)>, TraceError> {
    let mut out = Vec::new();
    let mut seen = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (a, b) = line
            .split_once(',')
            .ok_or_else(|| parse_err(i + 1, "expected two comma-separated fields"))?;
        let (a, b) = (a.trim(), b.trim());
        let header = !seen && a.parse::<u64>().is_err() && !a.starts_with('-');
        seen = true;
        if !header {
            out.push((i + 1, a, b));
        }
    }
    Ok(out)
}

fn slot_field(line: usize, s: &str) -> Result<u64, TraceError> {
    s.parse()
        .map_err(|_| parse_err(line, format!("slot `{s}` is not a non-negative integer")))
}

pub fn parse_arrivals(text: &str) -> Result<ArrivalSchedule, TraceError> {
    let mut entries = Vec::new();
    for (line, slot, count) in records(text)? {
        let slot = slot_field(line, slot)?;
        let count = count.parse().map_err(|_| {
            parse_err(
                line,
                format!("count `{count}` is not a non-negative integer"),
            )
        })?;
        entries.push((slot, count));
    }
    Ok(ArrivalSchedule::from_entries(entries))
}

pub fn load_arrivals(path: &Path) -> Result<ArrivalSchedule, TraceError> {
    parse_arrivals(&read(path)?)
}

/// A slot-by-slot transmitter trace. Packet names are mapped to ids in
/// order of first appearance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SlotTrace {
    pub names: Vec<String>,
    /// Strictly increasing slots; each transmitter list is sorted.
    pub slots: Vec<(u64, Vec<PacketId>)>,
}

impl SlotTrace {
    pub fn name(&self, id: PacketId) -> &str {
        &self.names[id.0 as usize]
    }
}

pub fn parse_slot_trace(text: &str) -> Result<SlotTrace, TraceError> {
    let mut ids: HashMap<String, PacketId> = HashMap::new();
    let mut trace = SlotTrace::default();
    for (line, slot, tx) in records(text)? {
        let slot = slot_field(line, slot)?;
        if trace.slots.last().is_some_and(|&(prev, _)| prev >= slot) {
            return Err(parse_err(
                line,
                format!("slot {slot} is not after the previous slot"),
            ));
        }
        let mut members = Vec::new();
        for name in tx.split(';').map(str::trim).filter(|n| !n.is_empty()) {
            let next = PacketId(trace.names.len() as u64);
            let id = *ids.entry(name.to_string()).or_insert_with(|| {
                trace.names.push(name.to_string());
                next
            });
            if members.contains(&id) {
                return Err(parse_err(line, format!("packet `{name}` listed twice")));
            }
            members.push(id);
        }
        members.sort_unstable();
        trace.slots.push((slot, members));
    }
    Ok(trace)
}

pub fn load_slot_trace(path: &Path) -> Result<SlotTrace, TraceError> {
    parse_slot_trace(&read(path)?)
}
