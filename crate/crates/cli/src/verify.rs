//! The verification matrix: every cell builds a layout, checks it, checks
//! the mask against the cache replay, and proves the two decode paths
//! agree. One bad cell fails the whole run.

use anyhow::Result;
use serde::Serialize;
use stackdelay::cache::derive_policy;
use stackdelay::decoder::{equivalence_report, WeightBundle, EQUIVALENCE_TOLERANCE};
use stackdelay::mask::{build_mask, heaviest_bit, mask_consistency_against};
use stackdelay::pattern::{validate_layout, PatternSpec};
use stackdelay::PatternKind;

use crate::config::RunConfig;

#[derive(Serialize)]
pub struct VerifyCell {
    pub pattern: &'static str,
    pub levels: usize,
    pub timesteps: usize,
    pub window: usize,
    pub layout_violations: usize,
    pub mask_consistency: usize,
    pub max_deviation: f32,
    pub traces_match: bool,
    pub grid_round_trips: bool,
    pub pass: bool,
}

impl VerifyCell {
    pub fn describe_failure(&self) -> String {
        let mut what = Vec::new();
        if self.layout_violations > 0 {
            what.push(format!("{} layout violations", self.layout_violations));
        }
        if self.mask_consistency > 0 {
            what.push(format!("mask_consistency={}", self.mask_consistency));
        }
        if self.max_deviation > EQUIVALENCE_TOLERANCE {
            what.push(format!("max_deviation={:e}", self.max_deviation));
        }
        if !self.traces_match {
            what.push("cache trace mismatch".into());
        }
        if !self.grid_round_trips {
            what.push("grid did not round-trip".into());
        }
        format!(
            "{} C={} T={} k={}: {}",
            self.pattern,
            self.levels,
            self.timesteps,
            self.window,
            what.join(", ")
        )
    }
}

#[derive(Serialize)]
pub struct VerifyReport {
    pub tolerance: f32,
    pub injected_mask_corruption: bool,
    pub cells: Vec<VerifyCell>,
    pub all_pass: bool,
}

fn check_cell(cfg: &RunConfig, spec: &PatternSpec, inject: bool) -> Result<VerifyCell> {
    let layout = spec.layout();
    let policy = derive_policy(&layout);
    let layout_violations = validate_layout(&layout).len();

    let mut mask = build_mask(&layout, &policy);
    if inject {
        if let Some((q, p)) = heaviest_bit(&mask) {
            mask.flip(q, p);
        }
    }
    let mask_consistency = mask_consistency_against(&mask, &layout, &policy);

    let weights = WeightBundle::seeded(
        cfg.decoder_config(spec.levels(), layout.total_steps()),
        cfg.seed,
    )?;
    let outcome = equivalence_report(&layout, &weights, cfg.seed)?;

    let pass = layout_violations == 0
        && mask_consistency == 0
        && outcome.passes(EQUIVALENCE_TOLERANCE);
    Ok(VerifyCell {
        pattern: spec.kind().name(),
        levels: spec.levels(),
        timesteps: spec.timesteps(),
        window: spec.permutation(),
        layout_violations,
        mask_consistency,
        max_deviation: outcome.max_deviation,
        traces_match: outcome.traces_match,
        grid_round_trips: outcome.grid_round_trips,
        pass,
    })
}

/// Default matrix: all four patterns, C in {2,4}, T in {8,16}, k in {1,3}.
/// A pinned axis (flag or config key) collapses to the single given value.
pub fn run_verify(cfg: &RunConfig, inject: bool) -> Result<VerifyReport> {
    let patterns: Vec<PatternKind> = if cfg.pinned.pattern {
        vec![cfg.pattern]
    } else {
        PatternKind::ALL.to_vec()
    };
    let levels: Vec<usize> = if cfg.pinned.levels { vec![cfg.levels] } else { vec![2, 4] };
    let timesteps: Vec<usize> = if cfg.pinned.timesteps {
        vec![cfg.timesteps]
    } else {
        vec![8, 16]
    };
    let windows: Vec<usize> = if cfg.pinned.window { vec![cfg.window] } else { vec![1, 3] };

    let mut cells = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for &kind in &patterns {
        for &c in &levels {
            for &t in &timesteps {
                for &k in &windows {
                    let spec = PatternSpec::new(kind, c, t, k)?;
                    // patterns that ignore k collapse to one cell
                    if seen.insert((kind, c, t, spec.permutation())) {
                        cells.push(check_cell(cfg, &spec, inject)?);
                    }
                }
            }
        }
    }
    let all_pass = cells.iter().all(|cell| cell.pass);
    Ok(VerifyReport {
        tolerance: EQUIVALENCE_TOLERANCE,
        injected_mask_corruption: inject,
        cells,
        all_pass,
    })
}
