//! A small forward-only transformer that decodes token grids under any
//! layout, either all at once under a dense mask or incrementally through
//! the streaming cache.
//!
//! Both paths call the same numeric kernels and visit attention keys in
//! ascending flat-position order. Because a mask row is by construction the
//! live set of the query's step, the two paths see identical key sequences
//! and their logits agree bitwise; the 1e-5 tolerance below is headroom,
//! not an expectation of drift.

use rayon::prelude::*;

use crate::cache::{derive_policy, simulate, CachePolicy, OccupancyTrace, RetentionClass, TraceEntry};
use crate::error::{Error, Result};
use crate::mask::{build_mask, AttentionMask};
use crate::pattern::{InputRecipe, PatternLayout, SlotRef, TokenGrid};
use crate::rng::XorShiftRng;
use crate::sampling::Sampler;

/// Max absolute logit difference tolerated between incremental and full
/// decoding. Widen to 1e-4 only if fused arithmetic with different rounding
/// enters the kernels.
pub const EQUIVALENCE_TOLERANCE: f32 = 1e-5;

/// Smallest deviation a single flipped mask bit must provoke for the
/// negative control to count as detected.
pub const NEGATIVE_CONTROL_MIN: f32 = 1e-3;

const LN_EPSILON: f32 = 1e-5;
const FF_MULTIPLIER: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Vocabulary per level; the pad id == vocab has an embedding row but
    /// no head column.
    pub vocab: u32,
    pub levels: usize,
    pub max_positions: usize,
}

impl DecoderConfig {
    /// Desk-scale defaults, sized so the verification suites finish in
    /// seconds.
    pub fn desk(levels: usize, max_positions: usize) -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 2,
            vocab: 32,
            levels,
            max_positions,
        }
    }

    pub fn d_ff(&self) -> usize {
        FF_MULTIPLIER * self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_layers == 0 || self.n_heads == 0 {
            return Err(Error::InvalidConfig(
                "d_model, n_layers, and n_heads must be positive".into(),
            ));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidConfig(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !self.d_model.is_multiple_of(2) {
            return Err(Error::InvalidConfig(
                "d_model must be even to split the position code".into(),
            ));
        }
        if self.vocab < 2 {
            return Err(Error::InvalidConfig("vocabulary must have at least 2 ids".into()));
        }
        if self.levels == 0 {
            return Err(Error::InvalidConfig("level count must be at least 1".into()));
        }
        if self.max_positions == 0 {
            return Err(Error::InvalidConfig("max_positions must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub wq: Vec<f32>,
    pub wk: Vec<f32>,
    pub wv: Vec<f32>,
    pub wo: Vec<f32>,
    pub ff_in: Vec<f32>,
    pub ff_out: Vec<f32>,
}

/// All parameters of the decoder, filled deterministically from a seed.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightBundle {
    config: DecoderConfig,
    /// One table per level, (vocab + 1) rows of d_model; the final row
    /// backs the pad id and is never read by a well-formed decode.
    embeddings: Vec<Vec<f32>>,
    bos: Vec<f32>,
    layers: Vec<LayerWeights>,
    /// One d_model x vocab head per level.
    heads: Vec<Vec<f32>>,
}

impl WeightBundle {
    /// Draw order is part of the reproducibility contract: per level the
    /// embedding table row-major, then the BOS vector, then per layer
    /// wq, wk, wv, wo, ff_in, ff_out, then the heads per level. Embeddings
    /// and BOS are unit-variance; matrices are scaled by 1/sqrt(fan_in).
    pub fn seeded(config: DecoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let k = config.vocab as usize;
        let mut rng = XorShiftRng::seed_from_u64(seed);
        let mut draw = |len: usize, std: f32| -> Vec<f32> {
            (0..len).map(|_| rng.standard_normal() as f32 * std).collect()
        };

        let embeddings: Vec<Vec<f32>> =
            (0..config.levels).map(|_| draw((k + 1) * d, 1.0)).collect();
        let bos = draw(d, 1.0);
        let matrix_std = 1.0 / (d as f32).sqrt();
        let ff_out_std = 1.0 / (config.d_ff() as f32).sqrt();
        let layers: Vec<LayerWeights> = (0..config.n_layers)
            .map(|_| LayerWeights {
                wq: draw(d * d, matrix_std),
                wk: draw(d * d, matrix_std),
                wv: draw(d * d, matrix_std),
                wo: draw(d * d, matrix_std),
                ff_in: draw(d * config.d_ff(), matrix_std),
                ff_out: draw(config.d_ff() * d, ff_out_std),
            })
            .collect();
        let heads: Vec<Vec<f32>> = (0..config.levels).map(|_| draw(d * k, matrix_std)).collect();

        Ok(Self {
            config,
            embeddings,
            bos,
            layers,
            heads,
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    fn embedding_row(&self, level: usize, token: u32) -> &[f32] {
        let d = self.config.d_model;
        let start = token as usize * d;
        &self.embeddings[level][start..start + d]
    }
}

/// Fixed code identifying (timestep, level): a half-width sinusoidal code
/// of the timestep next to a half-width code of the level.
pub fn position_code(d_model: usize, timestep: usize, level: usize) -> Vec<f32> {
    let half = d_model / 2;
    let mut code = vec![0f32; d_model];
    fill_sinusoid(timestep, &mut code[..half]);
    fill_sinusoid(level, &mut code[half..]);
    code
}

fn fill_sinusoid(pos: usize, out: &mut [f32]) {
    let width = out.len();
    for (j, cell) in out.iter_mut().enumerate() {
        let pair = (j / 2 * 2) as f32;
        let freq = (10_000f32).powf(-pair / width as f32);
        let angle = pos as f32 * freq;
        *cell = if j % 2 == 0 { angle.sin() } else { angle.cos() };
    }
}

/// Input vector for one position: the position code of the predicted slot
/// plus the level-specific embeddings of the recipe tokens, summed in
/// level-ascending order. A BOS recipe returns the dedicated start vector
/// exactly, with no position code.
pub fn embed_input(
    weights: &WeightBundle,
    recipe: &InputRecipe,
    grid: &TokenGrid,
    predicted: SlotRef,
) -> Vec<f32> {
    match recipe {
        InputRecipe::Bos => weights.bos.clone(),
        InputRecipe::Tokens(slots) => {
            let mut x = position_code(weights.config.d_model, predicted.timestep, predicted.level);
            for slot in slots {
                let row = weights.embedding_row(slot.level, grid.get(*slot));
                for (xi, wi) in x.iter_mut().zip(row) {
                    *xi += wi;
                }
            }
            x
        }
    }
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0f32;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// x (len in_dim) times row-major w (in_dim rows of out_dim), accumulated
/// over inputs in ascending order. Both decode paths use this, which is
/// what keeps them bitwise-aligned.
fn matvec(x: &[f32], w: &[f32], out_dim: usize) -> Vec<f32> {
    let mut out = vec![0f32; out_dim];
    for (i, &xi) in x.iter().enumerate() {
        let row = &w[i * out_dim..(i + 1) * out_dim];
        for (o, &wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
    out
}

fn layer_norm(x: &[f32]) -> Vec<f32> {
    let n = x.len() as f32;
    let mean = x.iter().sum::<f32>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
    let inv = 1.0 / (var + LN_EPSILON).sqrt();
    x.iter().map(|v| (v - mean) * inv).collect()
}

fn softmax_weights(scores: &[f32]) -> Vec<f32> {
    debug_assert!(!scores.is_empty(), "attention over an empty key set");
    let peak = scores.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut weights: Vec<f32> = scores.iter().map(|s| (s - peak).exp()).collect();
    let sum: f32 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }
    // accumulation error grows with the key count, so scale the check
    debug_assert!(
        (weights.iter().sum::<f32>() - 1.0).abs() < 1e-6 * (weights.len() as f32).max(1.0),
        "softmax drifted from 1 over {} keys",
        weights.len()
    );
    weights
}

struct Projected {
    q: Vec<f32>,
    k: Vec<f32>,
    v: Vec<f32>,
}

fn project_qkv(x: &[f32], lw: &LayerWeights, d: usize) -> Projected {
    let normed = layer_norm(x);
    Projected {
        q: matvec(&normed, &lw.wq, d),
        k: matvec(&normed, &lw.wk, d),
        v: matvec(&normed, &lw.wv, d),
    }
}

/// Multi-head attention of one query over keys/values listed in ascending
/// position order.
fn attend_heads(q: &[f32], keys: &[&[f32]], values: &[&[f32]], n_heads: usize) -> Vec<f32> {
    let d = q.len();
    let d_head = d / n_heads;
    let scale = 1.0 / (d_head as f32).sqrt();
    let mut out = vec![0f32; d];
    for h in 0..n_heads {
        let lo = h * d_head;
        let hi = lo + d_head;
        let scores: Vec<f32> = keys.iter().map(|k| dot(&q[lo..hi], &k[lo..hi]) * scale).collect();
        let weights = softmax_weights(&scores);
        for (w, v) in weights.iter().zip(values) {
            for (o, vv) in out[lo..hi].iter_mut().zip(&v[lo..hi]) {
                *o += w * vv;
            }
        }
    }
    out
}

/// Residual attention output plus the pre-LN feed-forward block.
fn finish_block(x: &[f32], attended: &[f32], lw: &LayerWeights, d: usize, d_ff: usize) -> Vec<f32> {
    let mut h: Vec<f32> = x.to_vec();
    for (hi, oi) in h.iter_mut().zip(matvec(attended, &lw.wo, d)) {
        *hi += oi;
    }
    let normed = layer_norm(&h);
    let mut mid = matvec(&normed, &lw.ff_in, d_ff);
    for m in &mut mid {
        *m = m.max(0.0);
    }
    let out = matvec(&mid, &lw.ff_out, d);
    for (hi, oi) in h.iter_mut().zip(out) {
        *hi += oi;
    }
    h
}

/// Logits for one predicted slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotLogits {
    /// Flat index of the producing position.
    pub position: usize,
    pub step: usize,
    pub slot: SlotRef,
    pub logits: Vec<f32>,
}

fn check_grid(config: &DecoderConfig, layout: &PatternLayout, grid: &TokenGrid) -> Result<()> {
    let spec = layout.spec();
    if grid.levels() != spec.levels() || grid.timesteps() != spec.timesteps() {
        return Err(Error::ShapeMismatch(format!(
            "grid is {}x{}, layout wants {}x{}",
            grid.levels(),
            grid.timesteps(),
            spec.levels(),
            spec.timesteps()
        )));
    }
    if grid.vocab() != config.vocab {
        return Err(Error::ShapeMismatch(format!(
            "grid vocabulary {} does not match decoder vocabulary {}",
            grid.vocab(),
            config.vocab
        )));
    }
    Ok(())
}

fn check_layout(config: &DecoderConfig, layout: &PatternLayout) -> Result<()> {
    if layout.spec().levels() != config.levels {
        return Err(Error::ShapeMismatch(format!(
            "layout has {} levels, decoder has {}",
            layout.spec().levels(),
            config.levels
        )));
    }
    if layout.total_steps() > config.max_positions {
        return Err(Error::InvalidConfig(format!(
            "layout needs {} steps but the decoder supports {}",
            layout.total_steps(),
            config.max_positions
        )));
    }
    Ok(())
}

/// Runs the whole sequence through the decoder at once under `mask`,
/// returning logits for every predicted slot in (position, level) order.
pub fn full_forward(
    layout: &PatternLayout,
    grid: &TokenGrid,
    mask: &AttentionMask,
    weights: &WeightBundle,
) -> Result<Vec<SlotLogits>> {
    let config = weights.config();
    check_layout(config, layout)?;
    check_grid(config, layout, grid)?;
    if mask.len() != layout.flat_len() {
        return Err(Error::ShapeMismatch(format!(
            "mask covers {} positions, layout has {}",
            mask.len(),
            layout.flat_len()
        )));
    }
    let d = config.d_model;

    let mut states: Vec<Option<Vec<f32>>> = layout
        .positions()
        .iter()
        .map(|pos| {
            pos.input
                .as_ref()
                .map(|recipe| embed_input(weights, recipe, grid, pos.predicted[0]))
        })
        .collect();

    for lw in &weights.layers {
        let projected: Vec<Option<Projected>> = states
            .iter()
            .map(|s| s.as_ref().map(|x| project_qkv(x, lw, d)))
            .collect();
        let next: Vec<Option<Vec<f32>>> = layout
            .positions()
            .iter()
            .map(|pos| {
                let q_index = pos.flat_index;
                states[q_index].as_ref().map(|x| {
                    let mut keys = Vec::new();
                    let mut values = Vec::new();
                    for (p, proj) in projected.iter().enumerate() {
                        if mask.allows(q_index, p) {
                            let proj = proj
                                .as_ref()
                                .expect("masks never allow attention to empty positions");
                            keys.push(proj.k.as_slice());
                            values.push(proj.v.as_slice());
                        }
                    }
                    let q = &projected[q_index].as_ref().expect("non-empty position").q;
                    let attended = attend_heads(q, &keys, &values, config.n_heads);
                    finish_block(x, &attended, lw, d, config.d_ff())
                })
            })
            .collect();
        states = next;
    }

    let mut out = Vec::new();
    for pos in layout.positions() {
        let Some(x) = &states[pos.flat_index] else { continue };
        for &slot in &pos.predicted {
            out.push(SlotLogits {
                position: pos.flat_index,
                step: pos.step,
                slot,
                logits: matvec(x, &weights.heads[slot.level], config.vocab as usize),
            });
        }
    }
    Ok(out)
}

struct CacheEntry {
    position: usize,
    key: Vec<f32>,
    value: Vec<f32>,
}

/// Incremental decoding state: one pass over the layout's steps, with the
/// per-layer caches physically holding exactly the live entries.
///
/// A session is single-threaded from the caller's view; the optional
/// stream fan-out only parallelizes the independent per-position math
/// inside one step and does not change any result bit.
pub struct DecodeSession<'a> {
    layout: &'a PatternLayout,
    policy: &'a CachePolicy,
    weights: &'a WeightBundle,
    caches: Vec<Vec<CacheEntry>>,
    grid: TokenGrid,
    written: Vec<bool>,
    step: usize,
    awaiting_commit: Option<Vec<SlotRef>>,
    parallel: bool,
    evictions_by_step: Vec<Vec<usize>>,
    trace_entries: Vec<TraceEntry>,
    trace_index: Vec<Option<usize>>,
    logits_trace: Vec<SlotLogits>,
}

impl<'a> DecodeSession<'a> {
    pub fn new(
        layout: &'a PatternLayout,
        policy: &'a CachePolicy,
        weights: &'a WeightBundle,
    ) -> Result<Self> {
        let config = weights.config();
        check_layout(config, layout)?;
        if policy.len() != layout.flat_len() {
            return Err(Error::LengthMismatch {
                expected: layout.flat_len(),
                got: policy.len(),
            });
        }
        let mut evictions_by_step = vec![Vec::new(); layout.total_steps()];
        for pos in layout.positions() {
            if let Some(out) = policy.evict_step(pos.flat_index) {
                debug_assert!(out > pos.step);
                if out < layout.total_steps() {
                    evictions_by_step[out].push(pos.flat_index);
                }
            }
        }
        Ok(Self {
            layout,
            policy,
            weights,
            caches: (0..config.n_layers).map(|_| Vec::new()).collect(),
            grid: TokenGrid::zeros(config.levels, layout.spec().timesteps(), config.vocab)?,
            written: vec![false; config.levels * layout.spec().timesteps()],
            step: 0,
            awaiting_commit: None,
            parallel: false,
            evictions_by_step,
            trace_entries: Vec::new(),
            trace_index: vec![None; layout.flat_len()],
            logits_trace: Vec::new(),
        })
    }

    /// Turns on data-parallel evaluation of the positions within a step.
    /// Results are bitwise identical either way; this only buys wall-clock
    /// time when steps carry several streams and cores are available.
    pub fn parallel_streams(mut self, on: bool) -> Self {
        self.parallel = on;
        self
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.layout.total_steps() && self.awaiting_commit.is_none()
    }

    pub fn current_step(&self) -> usize {
        self.step
    }

    /// Runs the forward pass for the current step and returns logits for
    /// each slot it predicts (possibly none). Call [`commit_tokens`] with
    /// one token per returned entry before advancing further.
    ///
    /// [`commit_tokens`]: DecodeSession::commit_tokens
    pub fn step_logits(&mut self) -> Result<Vec<SlotLogits>> {
        if self.awaiting_commit.is_some() {
            return Err(Error::InvalidConfig(
                "step_logits called twice without commit_tokens".into(),
            ));
        }
        if self.step >= self.layout.total_steps() {
            return Err(Error::OutOfRange {
                what: "step",
                value: self.step,
                range: format!("0..{}", self.layout.total_steps()),
            });
        }
        let config = self.weights.config();
        let d = config.d_model;
        let step = self.step;

        let actives: Vec<&crate::pattern::PositionPlan> = self
            .layout
            .step_positions(step)
            .iter()
            .filter(|p| !p.is_empty())
            .collect();

        // the recipes may only read slots committed at earlier steps
        #[cfg(debug_assertions)]
        for pos in &actives {
            if let Some(InputRecipe::Tokens(slots)) = &pos.input {
                for slot in slots {
                    debug_assert!(
                        self.written[slot.level * self.grid.timesteps() + slot.timestep],
                        "recipe of step {step} reads unwritten {slot}"
                    );
                }
            }
        }

        let mut states: Vec<Vec<f32>> = {
            let embed = |pos: &&crate::pattern::PositionPlan| {
                embed_input(
                    self.weights,
                    pos.input.as_ref().expect("active position has a recipe"),
                    &self.grid,
                    pos.predicted[0],
                )
            };
            if self.parallel && actives.len() > 1 {
                actives.par_iter().map(embed).collect()
            } else {
                actives.iter().map(embed).collect()
            }
        };

        for (layer, lw) in self.weights.layers.iter().enumerate() {
            let projected: Vec<Projected> = if self.parallel && states.len() > 1 {
                states.par_iter().map(|x| project_qkv(x, lw, d)).collect()
            } else {
                states.iter().map(|x| project_qkv(x, lw, d)).collect()
            };

            // insert this step's keys/values, then evict, then let the
            // step's queries attend: same-step entries are visible, entries
            // evicted at this step are not
            for (pos, proj) in actives.iter().zip(&projected) {
                self.caches[layer].push(CacheEntry {
                    position: pos.flat_index,
                    key: proj.k.clone(),
                    value: proj.v.clone(),
                });
                if layer == 0 {
                    self.record_insert(pos.flat_index, step)?;
                }
            }
            if !self.evictions_by_step[step].is_empty() {
                let doomed = self.evictions_by_step[step].clone();
                if layer == 0 {
                    for &position in &doomed {
                        self.record_evict(position, step)?;
                    }
                }
                self.caches[layer].retain(|e| !doomed.contains(&e.position));
            }
            debug_assert!(self.caches[layer].windows(2).all(|w| w[0].position < w[1].position));

            let cache = &self.caches[layer];
            let keys: Vec<&[f32]> = cache.iter().map(|e| e.key.as_slice()).collect();
            let values: Vec<&[f32]> = cache.iter().map(|e| e.value.as_slice()).collect();
            let advance = |(x, proj): (&Vec<f32>, &Projected)| {
                let attended = attend_heads(&proj.q, &keys, &values, config.n_heads);
                finish_block(x, &attended, lw, d, config.d_ff())
            };
            states = if self.parallel && states.len() > 1 {
                states.par_iter().zip(projected.par_iter()).map(advance).collect()
            } else {
                states.iter().zip(projected.iter()).map(advance).collect()
            };
        }

        let mut out = Vec::new();
        let mut pending = Vec::new();
        for (pos, x) in actives.iter().zip(&states) {
            for &slot in &pos.predicted {
                out.push(SlotLogits {
                    position: pos.flat_index,
                    step,
                    slot,
                    logits: matvec(x, &self.weights.heads[slot.level], config.vocab as usize),
                });
                pending.push(slot);
            }
        }
        self.awaiting_commit = Some(pending);
        self.logits_trace.extend(out.iter().cloned());
        Ok(out)
    }

    /// Writes one token per slot returned by the matching [`step_logits`]
    /// call (in the same order) and moves to the next step.
    ///
    /// [`step_logits`]: DecodeSession::step_logits
    pub fn commit_tokens(&mut self, tokens: &[u32]) -> Result<()> {
        let Some(pending) = self.awaiting_commit.take() else {
            return Err(Error::InvalidConfig(
                "commit_tokens called without step_logits".into(),
            ));
        };
        if tokens.len() != pending.len() {
            let expected = pending.len();
            self.awaiting_commit = Some(pending);
            return Err(Error::LengthMismatch {
                expected,
                got: tokens.len(),
            });
        }
        for (&slot, &token) in pending.iter().zip(tokens) {
            self.grid.set(slot, token)?;
            self.written[slot.level * self.grid.timesteps() + slot.timestep] = true;
        }
        self.step += 1;
        Ok(())
    }

    fn record_insert(&mut self, position: usize, step: usize) -> Result<()> {
        if self.trace_index[position].is_some() {
            return Err(Error::CacheIntegrity {
                position,
                step,
                detail: "entry inserted twice",
            });
        }
        self.trace_index[position] = Some(self.trace_entries.len());
        self.trace_entries.push(TraceEntry {
            position,
            inserted_at: step,
            evicted_at: None,
            long_term: self.policy.class(position) == Some(RetentionClass::LongTerm),
        });
        Ok(())
    }

    fn record_evict(&mut self, position: usize, step: usize) -> Result<()> {
        let Some(index) = self.trace_index[position] else {
            return Err(Error::CacheIntegrity {
                position,
                step,
                detail: "eviction of an entry that was never inserted",
            });
        };
        let entry = &mut self.trace_entries[index];
        if entry.evicted_at.is_some() {
            return Err(Error::CacheIntegrity {
                position,
                step,
                detail: "entry evicted twice",
            });
        }
        entry.evicted_at = Some(step);
        Ok(())
    }

    /// Consumes the finished session. Errors if steps remain.
    pub fn finish(self) -> Result<(TokenGrid, Vec<SlotLogits>, OccupancyTrace)> {
        if !self.is_finished() {
            return Err(Error::InvalidConfig(format!(
                "decode stopped at step {} of {}",
                self.step,
                self.layout.total_steps()
            )));
        }
        let trace = OccupancyTrace::from_entries(self.layout.total_steps(), self.trace_entries);
        Ok((self.grid, self.logits_trace, trace))
    }
}

/// Steps a session over the whole layout. With `forced`, tokens come from
/// that grid (teacher forcing) and the sampler is never consulted;
/// otherwise each predicted slot is filled by sampling its logits.
pub fn incremental_decode(
    layout: &PatternLayout,
    policy: &CachePolicy,
    weights: &WeightBundle,
    sampler: &mut Sampler,
    forced: Option<&TokenGrid>,
) -> Result<(TokenGrid, Vec<SlotLogits>, OccupancyTrace)> {
    if let Some(grid) = forced {
        check_grid(weights.config(), layout, grid)?;
    }
    let mut session = DecodeSession::new(layout, policy, weights)?;
    while !session.is_finished() {
        let step_logits = session.step_logits()?;
        let mut tokens = Vec::with_capacity(step_logits.len());
        for slot_logits in &step_logits {
            let token = match forced {
                Some(grid) => grid.get(slot_logits.slot),
                None => sampler.next_token(&slot_logits.logits)? as u32,
            };
            tokens.push(token);
        }
        session.commit_tokens(&tokens)?;
    }
    session.finish()
}

/// Outcome of one incremental-vs-full comparison.
#[derive(Debug, Clone, Copy)]
pub struct EquivalenceOutcome {
    /// Largest absolute logit difference across all predicted slots.
    pub max_deviation: f32,
    /// Number of logit vectors compared.
    pub compared: usize,
    /// Realized cache trace equals the policy replay exactly.
    pub traces_match: bool,
    /// Teacher forcing reproduced the input grid exactly.
    pub grid_round_trips: bool,
}

impl EquivalenceOutcome {
    pub fn passes(&self, tolerance: f32) -> bool {
        self.max_deviation <= tolerance && self.traces_match && self.grid_round_trips
    }
}

fn max_abs_logit_gap(a: &[SlotLogits], b: &[SlotLogits]) -> Result<f32> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let mut worst = 0f32;
    for (x, y) in a.iter().zip(b) {
        if x.slot != y.slot || x.position != y.position {
            return Err(Error::ShapeMismatch(format!(
                "logit traces disagree on slot order: {} vs {}",
                x.slot, y.slot
            )));
        }
        for (&lx, &ly) in x.logits.iter().zip(&y.logits) {
            worst = worst.max((lx - ly).abs());
        }
    }
    Ok(worst)
}

/// Decodes a seeded random grid teacher-forced through the cache and
/// through the dense mask, and compares everything the two paths produce.
pub fn equivalence_report(
    layout: &PatternLayout,
    weights: &WeightBundle,
    grid_seed: u64,
) -> Result<EquivalenceOutcome> {
    let spec = layout.spec();
    let policy = derive_policy(layout);
    let mask = build_mask(layout, &policy);
    let grid = TokenGrid::random(
        spec.levels(),
        spec.timesteps(),
        weights.config().vocab,
        grid_seed,
    )?;
    let full = full_forward(layout, &grid, &mask, weights)?;
    let mut sampler = Sampler::greedy();
    let (decoded, incremental, trace) =
        incremental_decode(layout, &policy, weights, &mut sampler, Some(&grid))?;
    Ok(EquivalenceOutcome {
        max_deviation: max_abs_logit_gap(&full, &incremental)?,
        compared: full.len(),
        traces_match: trace == simulate(layout, &policy),
        grid_round_trips: decoded == grid,
    })
}

/// Negative control: flips one allowed mask bit and reports how far the
/// full forward pass moves. The flipped bit is the oldest visible key of
/// the earliest query that sees more than itself, so the damage lands where
/// attention weights are largest.
pub fn corrupted_mask_deviation(
    layout: &PatternLayout,
    weights: &WeightBundle,
    grid_seed: u64,
) -> Result<f32> {
    let spec = layout.spec();
    let policy = derive_policy(layout);
    let mask = build_mask(layout, &policy);
    let grid = TokenGrid::random(
        spec.levels(),
        spec.timesteps(),
        weights.config().vocab,
        grid_seed,
    )?;
    let clean = full_forward(layout, &grid, &mask, weights)?;

    let Some((q, p)) = crate::mask::heaviest_bit(&mask) else {
        return Err(Error::InvalidConfig(
            "layout too small for the negative control: no query sees more than itself".into(),
        ));
    };
    let mut corrupted = mask.clone();
    corrupted.flip(q, p);
    let damaged = full_forward(layout, &grid, &corrupted, weights)?;
    max_abs_logit_gap(&clean, &damaged)
}
