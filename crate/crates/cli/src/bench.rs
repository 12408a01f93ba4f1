//! Relative decoding-speed benchmark. Absolute times on a desk machine
//! mean nothing; the ratios between patterns at one fixed toy
//! configuration are the portable result.
//!
//! Every step runs two forward passes in lockstep (a guided and an
//! unguided one), mirroring how guidance doubles the effective batch in
//! real deployments, and samples once from the blended logits.

use std::time::{Duration, Instant};

use anyhow::Result;
use serde::Serialize;
use stackdelay::cache::{derive_policy, simulate, CachePolicy};
use stackdelay::decoder::{DecodeSession, WeightBundle};
use stackdelay::pattern::PatternLayout;
use stackdelay::sampling::{cfg_combine, Sampler, SamplerConfig};
use stackdelay::PatternKind;

use crate::config::RunConfig;

#[derive(Debug, Clone, Copy)]
pub struct BenchOptions {
    pub runs: usize,
    pub warmup: usize,
    /// Fan each step's streams out across cores. Bitwise-identical either
    /// way; only the wall clock moves.
    pub parallel_streams: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            runs: 5,
            warmup: 1,
            parallel_streams: true,
        }
    }
}

#[derive(Serialize)]
pub struct BenchRow {
    pub pattern: &'static str,
    pub decoding_steps: usize,
    pub max_context: usize,
    pub median_wall_ms: f64,
    pub wall_per_timestep_ms: f64,
    pub steps_ratio_vs_delay: f64,
    pub wall_ratio_vs_delay: f64,
}

#[derive(Serialize)]
pub struct BenchReport {
    pub levels: usize,
    pub timesteps: usize,
    pub window: usize,
    pub seed: u64,
    pub runs: usize,
    pub warmup: usize,
    /// Forward passes per decoding step (guided + unguided).
    pub guidance_passes: usize,
    pub parallel_streams: bool,
    pub rows: Vec<BenchRow>,
}

/// One full guided decode; returns the wall time of the decode loop only.
fn guided_decode(
    layout: &PatternLayout,
    policy: &CachePolicy,
    weights: &WeightBundle,
    sampler_config: SamplerConfig,
    parallel: bool,
) -> Result<Duration> {
    let mut guided = DecodeSession::new(layout, policy, weights)?.parallel_streams(parallel);
    let mut unguided = DecodeSession::new(layout, policy, weights)?.parallel_streams(parallel);
    let mut sampler = Sampler::top_k(sampler_config)?;
    let scale = sampler_config.cfg_scale;

    let start = Instant::now();
    while !guided.is_finished() {
        let cond = guided.step_logits()?;
        let uncond = unguided.step_logits()?;
        let mut tokens = Vec::with_capacity(cond.len());
        for (c, u) in cond.iter().zip(&uncond) {
            let blended = cfg_combine(&c.logits, &u.logits, scale)?;
            tokens.push(sampler.next_token(&blended)? as u32);
        }
        // both sessions must see the same history
        guided.commit_tokens(&tokens)?;
        unguided.commit_tokens(&tokens)?;
    }
    let elapsed = start.elapsed();
    guided.finish()?;
    unguided.finish()?;
    Ok(elapsed)
}

fn median_ms(mut samples: Vec<f64>) -> f64 {
    samples.sort_by(|a, b| a.total_cmp(b));
    let n = samples.len();
    if n % 2 == 1 {
        samples[n / 2]
    } else {
        0.5 * (samples[n / 2 - 1] + samples[n / 2])
    }
}

pub fn run_bench(cfg: &RunConfig, opts: &BenchOptions) -> Result<BenchReport> {
    anyhow::ensure!(opts.runs >= 1, "bench needs at least one timed run");

    // Delay first so its row is the ratio denominator.
    let order = [
        PatternKind::Delay,
        PatternKind::Flat,
        PatternKind::Stack,
        PatternKind::StackDelay,
    ];

    let mut rows = Vec::with_capacity(order.len());
    for kind in order {
        let layout = cfg.spec_for(kind)?.layout();
        let policy = derive_policy(&layout);
        let weights = WeightBundle::seeded(
            cfg.decoder_config(cfg.levels, layout.total_steps()),
            cfg.seed,
        )?;

        for _ in 0..opts.warmup {
            guided_decode(&layout, &policy, &weights, cfg.sampler, opts.parallel_streams)?;
        }
        let mut samples = Vec::with_capacity(opts.runs);
        for _ in 0..opts.runs {
            let wall =
                guided_decode(&layout, &policy, &weights, cfg.sampler, opts.parallel_streams)?;
            samples.push(wall.as_secs_f64() * 1e3);
        }
        let median_wall_ms = median_ms(samples);

        rows.push(BenchRow {
            pattern: kind.name(),
            decoding_steps: layout.total_steps(),
            max_context: simulate(&layout, &policy).max_occupancy(),
            median_wall_ms,
            wall_per_timestep_ms: median_wall_ms / cfg.timesteps as f64,
            steps_ratio_vs_delay: 0.0, // filled in below
            wall_ratio_vs_delay: 0.0,
        });
    }

    let delay_steps = rows[0].decoding_steps as f64;
    let delay_wall = rows[0].median_wall_ms;
    for row in &mut rows {
        row.steps_ratio_vs_delay = row.decoding_steps as f64 / delay_steps;
        row.wall_ratio_vs_delay = row.median_wall_ms / delay_wall;
    }

    Ok(BenchReport {
        levels: cfg.levels,
        timesteps: cfg.timesteps,
        window: cfg.window,
        seed: cfg.seed,
        runs: opts.runs,
        warmup: opts.warmup,
        guidance_passes: 2,
        parallel_streams: opts.parallel_streams,
        rows,
    })
}
