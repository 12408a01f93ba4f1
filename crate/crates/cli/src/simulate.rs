//! Occupancy replay: a per-step CSV trace for the configured pattern and
//! a per-pattern accounting summary at the same (C, T, k).

use anyhow::Result;
use serde::Serialize;
use stackdelay::cache::{derive_policy, simulate};
use stackdelay::PatternKind;

use crate::config::{ConfigEcho, RunConfig};

#[derive(Serialize)]
pub struct PatternAccounting {
    pub pattern: &'static str,
    /// Forward passes to decode the whole grid.
    pub decoding_steps: usize,
    /// Most live cache entries any single query attends over.
    pub max_context: usize,
    /// Entries still resident once decoding ends.
    pub final_context: usize,
    /// Entries kept for the rest of the session (never scheduled for
    /// eviction).
    pub long_term_context: usize,
}

#[derive(Serialize)]
pub struct SimulateSummary {
    #[serde(flatten)]
    pub config: ConfigEcho,
    pub patterns: Vec<PatternAccounting>,
}

fn accounting(cfg: &RunConfig, kind: PatternKind) -> Result<PatternAccounting> {
    let layout = cfg.spec_for(kind)?.layout();
    let trace = simulate(&layout, &derive_policy(&layout));
    Ok(PatternAccounting {
        pattern: kind.name(),
        decoding_steps: layout.total_steps(),
        max_context: trace.max_occupancy(),
        final_context: trace.final_occupancy(),
        long_term_context: trace.final_long_term(),
    })
}

/// Every number here is recomputed from the layout and policy at call
/// time; nothing is cached or hard-coded.
pub fn occupancy_summary(cfg: &RunConfig) -> Result<SimulateSummary> {
    let patterns = PatternKind::ALL
        .into_iter()
        .map(|kind| accounting(cfg, kind))
        .collect::<Result<_>>()?;
    Ok(SimulateSummary {
        config: cfg.echo(),
        patterns,
    })
}

/// Per-step trace of the configured pattern only.
pub fn trace_csv(cfg: &RunConfig) -> Result<String> {
    let layout = cfg.spec()?.layout();
    Ok(simulate(&layout, &derive_policy(&layout)).to_csv())
}
