//! Retention classes for streaming-cache entries and a replay simulator
//! that turns a layout plus policy into per-step occupancy.
//!
//! Entry lifetimes are half-open step intervals: an entry is visible to
//! queries at step s iff inserted_at <= s and s < evicted_at. Insertions
//! land before evictions within a step, so an entry inserted and another
//! evicted at the same step never coexist in a recorded live set.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::pattern::{PatternKind, PatternLayout};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetentionClass {
    /// Kept until the decode ends.
    LongTerm,
    /// Evicted when the full stack of this timestep enters the cache.
    UntilStackComplete(usize),
    /// Visible to the inserting step only.
    CurrentStepOnly,
}

/// Retention class and resolved eviction step for every flat position of
/// one layout. Empty positions carry no cache entry and classify as None.
#[derive(Debug, Clone)]
pub struct CachePolicy {
    classes: Vec<Option<RetentionClass>>,
    evict_at: Vec<Option<usize>>,
}

impl CachePolicy {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn class(&self, flat_index: usize) -> Option<RetentionClass> {
        self.classes[flat_index]
    }

    /// First step at which the entry is gone; None for entries that are
    /// never evicted (or positions that never insert one).
    pub fn evict_step(&self, flat_index: usize) -> Option<usize> {
        self.evict_at[flat_index]
    }
}

/// Assigns each position its retention class.
///
/// Stack partials of timestep t survive until the entry whose input is the
/// full stack of t is inserted, which is the level-0 position of t+1; the
/// partials of the final timestep are never evicted. Stack-delay keeps only
/// stream 0 long-term.
pub fn derive_policy(layout: &PatternLayout) -> CachePolicy {
    let spec = layout.spec();
    let c = spec.levels();
    let t_count = spec.timesteps();
    let total = layout.total_steps();
    let mut classes = Vec::with_capacity(layout.flat_len());
    let mut evict_at = Vec::with_capacity(layout.flat_len());
    for pos in layout.positions() {
        let class = if pos.is_empty() {
            None
        } else {
            match spec.kind() {
                PatternKind::Delay | PatternKind::Flat => Some(RetentionClass::LongTerm),
                PatternKind::Stack => {
                    let slot = pos.predicted[0];
                    if slot.level == 0 {
                        Some(RetentionClass::LongTerm)
                    } else {
                        Some(RetentionClass::UntilStackComplete(slot.timestep))
                    }
                }
                PatternKind::StackDelay => {
                    if pos.stream == 0 {
                        Some(RetentionClass::LongTerm)
                    } else {
                        Some(RetentionClass::CurrentStepOnly)
                    }
                }
            }
        };
        let evict = match class {
            None | Some(RetentionClass::LongTerm) => None,
            Some(RetentionClass::UntilStackComplete(t)) => {
                // full stack of t rides in with level 0 of t+1
                (t + 1 < t_count).then(|| c * (t + 1))
            }
            // an eviction past the last step never happens; record None so
            // simulated and realized traces agree on "never evicted"
            Some(RetentionClass::CurrentStepOnly) => {
                (pos.step + 1 < total).then(|| pos.step + 1)
            }
        };
        classes.push(class);
        evict_at.push(evict);
    }
    CachePolicy { classes, evict_at }
}

/// One cache entry's observed lifetime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceEntry {
    pub position: usize,
    pub inserted_at: usize,
    pub evicted_at: Option<usize>,
    pub long_term: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StepStats {
    pub step: usize,
    pub inserted: usize,
    pub evicted: usize,
    pub live: usize,
    pub live_long_term: usize,
}

/// Per-step cache occupancy, stored as entry lifetimes plus a summary
/// sweep.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupancyTrace {
    total_steps: usize,
    entries: Vec<TraceEntry>,
    steps: Vec<StepStats>,
    max_occupancy: usize,
    final_occupancy: usize,
    final_long_term: usize,
}

impl OccupancyTrace {
    pub fn from_entries(total_steps: usize, mut entries: Vec<TraceEntry>) -> Self {
        entries.sort_by_key(|e| (e.inserted_at, e.position));
        let mut inserted = vec![0usize; total_steps];
        let mut inserted_lt = vec![0usize; total_steps];
        let mut evicted = vec![0usize; total_steps];
        let mut evicted_lt = vec![0usize; total_steps];
        for entry in &entries {
            inserted[entry.inserted_at] += 1;
            inserted_lt[entry.inserted_at] += entry.long_term as usize;
            if let Some(out) = entry.evicted_at {
                debug_assert!(out > entry.inserted_at && out <= total_steps);
                if out < total_steps {
                    evicted[out] += 1;
                    evicted_lt[out] += entry.long_term as usize;
                }
            }
        }
        let mut steps = Vec::with_capacity(total_steps);
        let mut live = 0usize;
        let mut live_lt = 0usize;
        let mut max_occupancy = 0usize;
        for step in 0..total_steps {
            live += inserted[step];
            live -= evicted[step];
            live_lt += inserted_lt[step];
            live_lt -= evicted_lt[step];
            max_occupancy = max_occupancy.max(live);
            steps.push(StepStats {
                step,
                inserted: inserted[step],
                evicted: evicted[step],
                live,
                live_long_term: live_lt,
            });
        }
        let final_occupancy = steps.last().map_or(0, |s| s.live);
        let final_long_term = steps.last().map_or(0, |s| s.live_long_term);
        Self {
            total_steps,
            entries,
            steps,
            max_occupancy,
            final_occupancy,
            final_long_term,
        }
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn entries(&self) -> &[TraceEntry] {
        &self.entries
    }

    pub fn step_stats(&self) -> &[StepStats] {
        &self.steps
    }

    pub fn max_occupancy(&self) -> usize {
        self.max_occupancy
    }

    pub fn final_occupancy(&self) -> usize {
        self.final_occupancy
    }

    /// Long-term entries still live at the last step.
    pub fn final_long_term(&self) -> usize {
        self.final_long_term
    }

    /// Flat positions a query at `step` may attend to, ascending. Includes
    /// entries inserted at `step` itself.
    pub fn live_set(&self, step: usize) -> Result<Vec<usize>> {
        if step >= self.total_steps {
            return Err(Error::OutOfRange {
                what: "step",
                value: step,
                range: format!("0..{}", self.total_steps),
            });
        }
        let mut live: Vec<usize> = self
            .entries
            .iter()
            .filter(|e| e.inserted_at <= step && e.evicted_at.is_none_or(|out| out > step))
            .map(|e| e.position)
            .collect();
        live.sort_unstable();
        Ok(live)
    }

    /// CSV with one row per step: step, inserted, evicted, live_count.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,inserted,evicted,live_count\n");
        for s in &self.steps {
            out.push_str(&format!("{},{},{},{}\n", s.step, s.inserted, s.evicted, s.live));
        }
        out
    }
}

/// Replays the decode and records every entry's lifetime under `policy`.
pub fn simulate(layout: &PatternLayout, policy: &CachePolicy) -> OccupancyTrace {
    let mut entries = Vec::new();
    for pos in layout.positions() {
        let Some(class) = policy.class(pos.flat_index) else { continue };
        entries.push(TraceEntry {
            position: pos.flat_index,
            inserted_at: pos.step,
            evicted_at: policy.evict_step(pos.flat_index),
            long_term: class == RetentionClass::LongTerm,
        });
    }
    OccupancyTrace::from_entries(layout.total_steps(), entries)
}
