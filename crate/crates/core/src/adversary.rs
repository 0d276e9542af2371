//! Arrival schedules and the sliding-window rate constraint.
//!
//! A windowed schedule with window `w` and rate `rho` admits at most
//! `floor(rho * w)` arrivals in every `w` consecutive slots. The default
//! rate is `1 - 5/ln(kappa)`; it is only positive for `kappa > e^5`, so
//! smaller thresholds need an explicit rate.
//!
//! Schedules are oblivious: they are fixed before the run starts.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;
use crate::rng::{DetRng, STREAM_SCHEDULE};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("batch size must be nonzero")]
    EmptyBatch,
    #[error("window {w} is below 16*kappa^2 = {min}")]
    WindowTooSmall { w: u64, min: u64 },
    #[error("window must be at least 1 slot")]
    ZeroWindow,
    #[error("arrival rate {rate} is not in (0, 1] (kappa = {kappa}); pass an explicit rate")]
    BadRate { rate: f64, kappa: u32 },
    #[error("generated schedule violates its own cap: {0:?}")]
    Unsound(Violation),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulePattern {
    /// Evenly spread arrivals, every window exactly at the cap.
    Smooth,
    /// A cap-sized burst at slots `0, w, 2w, ...`.
    FrontloadedBursts,
    /// Random per-slot counts, trimmed so no window exceeds the cap.
    RandomSpread,
}

/// Map from slot to number of packets injected in that slot.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ArrivalSchedule {
    /// Sorted by slot; counts are nonzero.
    entries: Vec<(u64, u64)>,
    /// Slots `>= horizon` carry no arrivals.
    pub horizon: u64,
    pub window_w: Option<u64>,
    pub declared_rate: Option<f64>,
}

impl ArrivalSchedule {
    /// Builds a schedule from `(slot, count)` pairs in any order. Repeated
    /// slots are summed and zero counts dropped. The horizon is one past the
    /// last arrival.
    pub fn from_entries(mut entries: Vec<(u64, u64)>) -> Self {
        entries.sort_unstable_by_key(|&(s, _)| s);
        let mut merged: Vec<(u64, u64)> = Vec::with_capacity(entries.len());
        for (slot, count) in entries {
            if count == 0 {
                continue;
            }
            match merged.last_mut() {
                Some((s, c)) if *s == slot => *c += count,
                _ => merged.push((slot, count)),
            }
        }
        let horizon = merged.last().map_or(0, |&(s, _)| s + 1);
        Self {
            entries: merged,
            horizon,
            window_w: None,
            declared_rate: None,
        }
    }

    pub fn entries(&self) -> &[(u64, u64)] {
        &self.entries
    }

    pub fn count_at(&self, slot: u64) -> u64 {
        self.entries
            .binary_search_by_key(&slot, |&(s, _)| s)
            .map_or(0, |i| self.entries[i].1)
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().map(|&(_, c)| c).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Keeps only arrivals in slots `< horizon`.
    pub fn truncated(mut self, horizon: u64) -> Self {
        self.entries.retain(|&(s, _)| s < horizon);
        self.horizon = self.horizon.min(horizon);
        self
    }
}

/// `1 - 5/ln(kappa)`.
pub fn theorem_rate(kappa: u32) -> f64 {
    1.0 - 5.0 / math::ln(kappa as f64)
}

/// `floor(rate * w)`; negative when the rate is.
pub fn window_cap(w: u64, rate: f64) -> i64 {
    math::floor(rate * w as f64) as i64
}

/// Smallest admissible window for `kappa`: `16 * kappa^2`.
pub fn min_window(kappa: u32) -> u64 {
    16 * (kappa as u64) * (kappa as u64)
}

/// All `n` packets at slot 0.
pub fn batch_schedule(n: u64) -> Result<ArrivalSchedule, ScheduleError> {
    if n == 0 {
        return Err(ScheduleError::EmptyBatch);
    }
    Ok(ArrivalSchedule::from_entries(alloc::vec![(0, n)]))
}

/// First window `[window_start, window_start + w)` whose arrivals exceed the
/// cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub window_start: u64,
    pub sum: u64,
    pub cap: i64,
}

/// Checks every window of `w` slots starting in `[0, horizon)` against
/// `floor((1 - 5/ln kappa) * w)`.
pub fn validate_schedule(s: &ArrivalSchedule, w: u64, kappa: u32) -> Result<(), Violation> {
    validate_with_rate(s, w, theorem_rate(kappa))
}

/// [`validate_schedule`] with an explicit rate.
pub fn validate_with_rate(s: &ArrivalSchedule, w: u64, rate: f64) -> Result<(), Violation> {
    let cap = window_cap(w.max(1), rate);
    let w = w.max(1);
    if s.horizon == 0 {
        return Ok(());
    }
    // The window sum only grows when the window's right edge reaches an
    // arrival, so the first violation starts at 0 or at `slot - w + 1` for
    // some arrival slot.
    let mut candidates: Vec<u64> = alloc::vec![0];
    candidates.extend(
        s.entries
            .iter()
            .map(|&(slot, _)| (slot + 1).saturating_sub(w))
            .filter(|&t| t > 0),
    );
    // Already sorted since entries are sorted.
    let entries = &s.entries;
    let (mut lo, mut hi) = (0usize, 0usize);
    let mut sum = 0u64;
    for t in candidates {
        if t >= s.horizon {
            break;
        }
        while hi < entries.len() && entries[hi].0 < t + w {
            sum += entries[hi].1;
            hi += 1;
        }
        while lo < hi && entries[lo].0 < t {
            sum -= entries[lo].1;
            lo += 1;
        }
        if sum as i128 > cap as i128 {
            return Err(Violation {
                window_start: t,
                sum,
                cap,
            });
        }
    }
    Ok(())
}

/// Largest number of arrivals in any window of `w` consecutive slots.
pub fn max_window_sum(s: &ArrivalSchedule, w: u64) -> u64 {
    let w = w.max(1);
    let entries = &s.entries;
    let mut best = 0;
    let mut sum = 0u64;
    let mut hi = 0usize;
    for lo in 0..entries.len() {
        let start = entries[lo].0;
        while hi < entries.len() && entries[hi].0 < start + w {
            sum += entries[hi].1;
            hi += 1;
        }
        best = best.max(sum);
        sum -= entries[lo].1;
    }
    best
}

/// Generates a schedule over `[0, horizon)` obeying the window cap.
///
/// `rate` defaults to `1 - 5/ln(kappa)`. The result is checked with
/// [`validate_with_rate`] before it is returned.
pub fn windowed_rate_schedule(
    w: u64,
    kappa: u32,
    horizon: u64,
    pattern: SchedulePattern,
    seed: u64,
    rate: Option<f64>,
) -> Result<ArrivalSchedule, ScheduleError> {
    let min = min_window(kappa);
    if w < min {
        return Err(ScheduleError::WindowTooSmall { w, min });
    }
    let rate = rate.unwrap_or_else(|| theorem_rate(kappa));
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(ScheduleError::BadRate { rate, kappa });
    }
    let cap = window_cap(w, rate) as u64;
    let mut entries = Vec::new();
    match pattern {
        SchedulePattern::Smooth => {
            // floor((t+1)C/w) - floor(tC/w): any w consecutive slots sum to C.
            let per = |t: u64| (t as u128 * cap as u128 / w as u128) as u64;
            for t in 0..horizon {
                let n = per(t + 1) - per(t);
                if n > 0 {
                    entries.push((t, n));
                }
            }
        }
        SchedulePattern::FrontloadedBursts => {
            if cap > 0 {
                entries.extend((0..horizon).step_by(w as usize).map(|t| (t, cap)));
            }
        }
        SchedulePattern::RandomSpread => {
            let mut rng = DetRng::for_stream(seed, STREAM_SCHEDULE);
            let half = rate / 2.0;
            let mut window: VecDeque<(u64, u64)> = VecDeque::new();
            let mut in_window = 0u64;
            for t in 0..horizon {
                while let Some(&(s, c)) = window.front() {
                    if s + w > t {
                        break;
                    }
                    in_window -= c;
                    window.pop_front();
                }
                let want = rng.bernoulli(half) as u64 + rng.bernoulli(half) as u64;
                let n = want.min(cap - in_window);
                if n > 0 {
                    window.push_back((t, n));
                    in_window += n;
                    entries.push((t, n));
                }
            }
        }
    }
    let mut schedule = ArrivalSchedule::from_entries(entries);
    schedule.horizon = horizon;
    schedule.window_w = Some(w);
    schedule.declared_rate = Some(rate);
    validate_with_rate(&schedule, w, rate).map_err(ScheduleError::Unsound)?;
    Ok(schedule)
}
