//! Token grids, interleaving schedules, and the layouts that tie them
//! together.
//!
//! A schedule assigns each grid slot (level i, timestep t) to a decoding
//! step:
//!
//! * delay: step = t + i, one position per step, up to C slots at once
//! * flat: step = C*t + i, one slot per step
//! * stack: same step function as flat, but each step's input is the
//!   partial stack of the current timestep
//! * stack-delay: step = t + (t mod (k+1))*(k-1) + i, with C parallel
//!   streams, stream j carrying level j
//!
//! Levels above 0 always land strictly after level 0 of the same timestep,
//! so every pattern can condition higher levels on the levels below them.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::XorShiftRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatternKind {
    Delay,
    Flat,
    Stack,
    StackDelay,
}

impl PatternKind {
    pub const ALL: [PatternKind; 4] = [
        PatternKind::Delay,
        PatternKind::Flat,
        PatternKind::Stack,
        PatternKind::StackDelay,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PatternKind::Delay => "delay",
            PatternKind::Flat => "flat",
            PatternKind::Stack => "stack",
            PatternKind::StackDelay => "stack-delay",
        }
    }
}

impl fmt::Display for PatternKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PatternKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "delay" => Ok(PatternKind::Delay),
            "flat" => Ok(PatternKind::Flat),
            "stack" => Ok(PatternKind::Stack),
            "stack-delay" | "stack_delay" | "stackdelay" => Ok(PatternKind::StackDelay),
            other => Err(Error::InvalidConfig(format!(
                "unknown pattern '{other}' (expected delay, flat, stack, or stack-delay)"
            ))),
        }
    }
}

/// Stream-0 decoding step of timestep `t` under the permuted schedule with
/// window parameter `k`. `k = 1` is the identity.
pub fn permuted_base(timestep: usize, k: usize) -> usize {
    debug_assert!(k >= 1);
    timestep + (timestep % (k + 1)) * (k - 1)
}

/// A pattern kind plus the grid dimensions and permutation parameter that
/// pin down a concrete schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PatternSpec {
    kind: PatternKind,
    levels: usize,
    timesteps: usize,
    permutation: usize,
}

impl PatternSpec {
    /// `permutation` is only meaningful for stack-delay; other kinds
    /// normalize it to 1.
    pub fn new(
        kind: PatternKind,
        levels: usize,
        timesteps: usize,
        permutation: usize,
    ) -> Result<Self> {
        if levels == 0 {
            return Err(Error::InvalidConfig("level count must be at least 1".into()));
        }
        if timesteps == 0 {
            return Err(Error::InvalidConfig("timestep count must be at least 1".into()));
        }
        if permutation == 0 {
            return Err(Error::InvalidConfig(
                "permutation parameter must be at least 1".into(),
            ));
        }
        let permutation = if kind == PatternKind::StackDelay {
            permutation
        } else {
            1
        };
        Ok(Self {
            kind,
            levels,
            timesteps,
            permutation,
        })
    }

    pub fn kind(&self) -> PatternKind {
        self.kind
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn permutation(&self) -> usize {
        self.permutation
    }

    /// Decoding step of slot (level, timestep).
    pub fn schedule_step(&self, level: usize, timestep: usize) -> Result<usize> {
        if level >= self.levels {
            return Err(Error::OutOfRange {
                what: "level",
                value: level,
                range: format!("0..{}", self.levels),
            });
        }
        if timestep >= self.timesteps {
            return Err(Error::OutOfRange {
                what: "timestep",
                value: timestep,
                range: format!("0..{}", self.timesteps),
            });
        }
        Ok(match self.kind {
            PatternKind::Delay => timestep + level,
            PatternKind::Flat | PatternKind::Stack => self.levels * timestep + level,
            PatternKind::StackDelay => permuted_base(timestep, self.permutation) + level,
        })
    }

    /// One past the largest step any slot occupies.
    pub fn total_steps(&self) -> usize {
        match self.kind {
            PatternKind::Delay => self.timesteps + self.levels - 1,
            PatternKind::Flat | PatternKind::Stack => self.levels * self.timesteps,
            PatternKind::StackDelay => {
                // base(t) = t + (t mod (k+1))*(k-1) grows with t within each
                // residue class mod k+1, and every residue class has its
                // largest representative among the last min(T, k+1)
                // timesteps, so the maximum base lies in that window. The
                // often-quoted T + k(k-1) - 1 form for the max base is exact
                // only when (k+1) divides T; this is exact for every T.
                let window = self.timesteps.min(self.permutation + 1);
                let max_base = (self.timesteps - window..self.timesteps)
                    .map(|t| permuted_base(t, self.permutation))
                    .max()
                    .expect("window is non-empty");
                max_base + self.levels
            }
        }
    }

    pub fn layout(&self) -> PatternLayout {
        build_layout(self)
    }
}

/// Address of one token in the C x T grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SlotRef {
    pub level: usize,
    pub timestep: usize,
}

impl SlotRef {
    pub fn new(level: usize, timestep: usize) -> Self {
        Self { level, timestep }
    }
}

impl fmt::Display for SlotRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(level {}, t {})", self.level, self.timestep)
    }
}

/// What a position consumes as input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InputRecipe {
    /// Start placeholder, used where the natural input would reference t < 0.
    Bos,
    /// Embeddings of these already-decoded slots, summed.
    Tokens(Vec<SlotRef>),
}

/// One (step, stream) cell of a layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PositionPlan {
    pub step: usize,
    pub stream: usize,
    pub flat_index: usize,
    /// Slots this position predicts, level-ascending. Empty for cells the
    /// schedule leaves unused.
    pub predicted: Vec<SlotRef>,
    /// None exactly when `predicted` is empty.
    pub input: Option<InputRecipe>,
}

impl PositionPlan {
    pub fn is_empty(&self) -> bool {
        self.predicted.is_empty()
    }
}

/// Flat view of the schedule: where one slot is decoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ScheduleEntry {
    pub slot: SlotRef,
    pub step: usize,
    pub stream: usize,
}

/// Fully materialized decoding plan: every (step, stream) position, what it
/// predicts, and what it reads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternLayout {
    spec: PatternSpec,
    total_steps: usize,
    positions_per_step: usize,
    lanes: usize,
    /// Length total_steps * positions_per_step, ordered by (step, stream).
    positions: Vec<PositionPlan>,
}

impl PatternLayout {
    /// Assembles a layout from explicit positions, checking only structure
    /// (ordering and index bookkeeping), not semantic validity. Use
    /// [`validate_layout`] for the latter; this exists so tests can build
    /// deliberately broken layouts.
    pub fn from_parts(
        spec: PatternSpec,
        total_steps: usize,
        positions_per_step: usize,
        lanes: usize,
        positions: Vec<PositionPlan>,
    ) -> Result<Self> {
        if positions_per_step == 0 || lanes == 0 {
            return Err(Error::InvalidConfig(
                "positions_per_step and lanes must be at least 1".into(),
            ));
        }
        if positions.len() != total_steps * positions_per_step {
            return Err(Error::LengthMismatch {
                expected: total_steps * positions_per_step,
                got: positions.len(),
            });
        }
        for (idx, pos) in positions.iter().enumerate() {
            let (step, stream) = (idx / positions_per_step, idx % positions_per_step);
            if pos.step != step || pos.stream != stream || pos.flat_index != idx {
                return Err(Error::ShapeMismatch(format!(
                    "position {idx} carries (step {}, stream {}, flat {})",
                    pos.step, pos.stream, pos.flat_index
                )));
            }
            if pos.input.is_some() == pos.predicted.is_empty() {
                return Err(Error::ShapeMismatch(format!(
                    "position {idx} must carry an input recipe iff it predicts something"
                )));
            }
        }
        Ok(Self {
            spec,
            total_steps,
            positions_per_step,
            lanes,
            positions,
        })
    }

    pub fn spec(&self) -> &PatternSpec {
        &self.spec
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    /// Positions decoded in parallel at each step (stack-delay: C, else 1).
    pub fn positions_per_step(&self) -> usize {
        self.positions_per_step
    }

    /// Token cells per step of the patterned sequence. Delay packs C slots
    /// into its single position, so lanes can exceed positions_per_step.
    pub fn lanes(&self) -> usize {
        self.lanes
    }

    pub fn positions(&self) -> &[PositionPlan] {
        &self.positions
    }

    pub fn flat_len(&self) -> usize {
        self.positions.len()
    }

    pub fn position(&self, step: usize, stream: usize) -> &PositionPlan {
        &self.positions[step * self.positions_per_step + stream]
    }

    pub fn step_positions(&self, step: usize) -> &[PositionPlan] {
        let start = step * self.positions_per_step;
        &self.positions[start..start + self.positions_per_step]
    }

    /// Sequence lane that carries `slot` at its position. Levels map to
    /// lanes whenever there is more than one lane.
    pub fn lane_of(&self, slot: SlotRef) -> usize {
        if self.lanes == 1 {
            0
        } else {
            slot.level
        }
    }

    /// Slot-major view of the schedule, ordered by (step, stream, level).
    pub fn schedule_entries(&self) -> Vec<ScheduleEntry> {
        self.positions
            .iter()
            .flat_map(|pos| {
                pos.predicted.iter().map(|&slot| ScheduleEntry {
                    slot,
                    step: pos.step,
                    stream: pos.stream,
                })
            })
            .collect()
    }
}

/// Materializes the schedule, the per-position predictions, and the input
/// recipes for `spec`.
pub fn build_layout(spec: &PatternSpec) -> PatternLayout {
    let c = spec.levels();
    let t_count = spec.timesteps();
    let total = spec.total_steps();
    let (positions_per_step, lanes) = match spec.kind() {
        PatternKind::Delay => (1, c),
        PatternKind::Flat | PatternKind::Stack => (1, 1),
        PatternKind::StackDelay => (c, c),
    };

    let mut positions = Vec::with_capacity(total * positions_per_step);
    match spec.kind() {
        PatternKind::Delay => {
            for step in 0..total {
                let predicted: Vec<SlotRef> = (0..c)
                    .filter(|&i| step >= i && step - i < t_count)
                    .map(|i| SlotRef::new(i, step - i))
                    .collect();
                debug_assert!(!predicted.is_empty());
                let input = if step == 0 {
                    InputRecipe::Bos
                } else {
                    // everything decoded at the previous step feeds this one
                    let prev: &PositionPlan = &positions[step - 1];
                    InputRecipe::Tokens(prev.predicted.clone())
                };
                positions.push(PositionPlan {
                    step,
                    stream: 0,
                    flat_index: step,
                    predicted,
                    input: Some(input),
                });
            }
        }
        PatternKind::Flat => {
            for step in 0..total {
                let slot = SlotRef::new(step % c, step / c);
                let input = if step == 0 {
                    InputRecipe::Bos
                } else {
                    InputRecipe::Tokens(vec![SlotRef::new((step - 1) % c, (step - 1) / c)])
                };
                positions.push(PositionPlan {
                    step,
                    stream: 0,
                    flat_index: step,
                    predicted: vec![slot],
                    input: Some(input),
                });
            }
        }
        PatternKind::Stack => {
            for step in 0..total {
                let (t, i) = (step / c, step % c);
                let input = if i >= 1 {
                    // partial stack of the timestep being decoded
                    InputRecipe::Tokens((0..i).map(|lvl| SlotRef::new(lvl, t)).collect())
                } else if t == 0 {
                    InputRecipe::Bos
                } else {
                    // full stack of the previous timestep
                    InputRecipe::Tokens((0..c).map(|lvl| SlotRef::new(lvl, t - 1)).collect())
                };
                positions.push(PositionPlan {
                    step,
                    stream: 0,
                    flat_index: step,
                    predicted: vec![SlotRef::new(i, t)],
                    input: Some(input),
                });
            }
        }
        PatternKind::StackDelay => {
            let k = spec.permutation();
            // step -> timestep whose base lands there (base is injective)
            let mut base_inv: Vec<Option<usize>> = vec![None; total];
            // step -> timestep whose final level is decoded exactly there
            let mut completed_at: Vec<Option<usize>> = vec![None; total];
            for t in 0..t_count {
                let base = permuted_base(t, k);
                debug_assert!(base_inv[base].is_none(), "base map must be injective");
                base_inv[base] = Some(t);
                completed_at[base + c - 1] = Some(t);
            }
            // step -> most recently completed timestep strictly before it
            let mut last_completed: Vec<Option<usize>> = vec![None; total];
            for step in 1..total {
                last_completed[step] = completed_at[step - 1].or(last_completed[step - 1]);
            }
            for step in 0..total {
                for stream in 0..c {
                    let slot = if step >= stream {
                        base_inv[step - stream].map(|t| SlotRef::new(stream, t))
                    } else {
                        None
                    };
                    let input = slot.map(|slot| {
                        if stream >= 1 {
                            // lower levels of the same timestep, already out
                            InputRecipe::Tokens(
                                (0..stream).map(|lvl| SlotRef::new(lvl, slot.timestep)).collect(),
                            )
                        } else {
                            match last_completed[step] {
                                Some(done) => InputRecipe::Tokens(
                                    (0..c).map(|lvl| SlotRef::new(lvl, done)).collect(),
                                ),
                                None => InputRecipe::Bos,
                            }
                        }
                    });
                    positions.push(PositionPlan {
                        step,
                        stream,
                        flat_index: step * c + stream,
                        predicted: slot.into_iter().collect(),
                        input,
                    });
                }
            }
        }
    }

    PatternLayout {
        spec: *spec,
        total_steps: total,
        positions_per_step,
        lanes,
        positions,
    }
}

/// The logical C x T matrix of token ids, each in [0, vocab).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenGrid {
    levels: usize,
    timesteps: usize,
    vocab: u32,
    /// Level-major: data[level * timesteps + timestep].
    data: Vec<u32>,
}

impl TokenGrid {
    pub fn zeros(levels: usize, timesteps: usize, vocab: u32) -> Result<Self> {
        if levels == 0 || timesteps == 0 {
            return Err(Error::InvalidConfig("grid dimensions must be positive".into()));
        }
        if vocab == 0 {
            return Err(Error::InvalidConfig("vocabulary must be non-empty".into()));
        }
        Ok(Self {
            levels,
            timesteps,
            vocab,
            data: vec![0; levels * timesteps],
        })
    }

    pub fn random(levels: usize, timesteps: usize, vocab: u32, seed: u64) -> Result<Self> {
        let mut grid = Self::zeros(levels, timesteps, vocab)?;
        let mut rng = XorShiftRng::seed_from_u64(seed);
        for cell in &mut grid.data {
            *cell = rng.below(vocab as u64) as u32;
        }
        Ok(grid)
    }

    pub fn from_rows(rows: &[Vec<u32>], vocab: u32) -> Result<Self> {
        let levels = rows.len();
        let timesteps = rows.first().map_or(0, Vec::len);
        let mut grid = Self::zeros(levels, timesteps, vocab)?;
        for (level, row) in rows.iter().enumerate() {
            if row.len() != timesteps {
                return Err(Error::LengthMismatch {
                    expected: timesteps,
                    got: row.len(),
                });
            }
            for (t, &token) in row.iter().enumerate() {
                grid.set(SlotRef::new(level, t), token)?;
            }
        }
        Ok(grid)
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn vocab(&self) -> u32 {
        self.vocab
    }

    pub fn get(&self, slot: SlotRef) -> u32 {
        self.data[slot.level * self.timesteps + slot.timestep]
    }

    pub fn set(&mut self, slot: SlotRef, token: u32) -> Result<()> {
        if token >= self.vocab {
            return Err(Error::OutOfRange {
                what: "token id",
                value: token as usize,
                range: format!("0..{}", self.vocab),
            });
        }
        self.data[slot.level * self.timesteps + slot.timestep] = token;
        Ok(())
    }
}

/// The grid flattened into decode order: `total_steps` rows of `lanes`
/// token cells, with the reserved pad id (== vocab) in cells no slot maps
/// to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternedSequence {
    steps: usize,
    lanes: usize,
    vocab: u32,
    data: Vec<u32>,
}

impl PatternedSequence {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn lanes(&self) -> usize {
        self.lanes
    }

    pub fn vocab(&self) -> u32 {
        self.vocab
    }

    /// The reserved empty/pad token id.
    pub fn special(&self) -> u32 {
        self.vocab
    }

    pub fn get(&self, step: usize, lane: usize) -> u32 {
        self.data[step * self.lanes + lane]
    }

    /// Overwrites one cell; tests use this to corrupt sequences.
    pub fn set(&mut self, step: usize, lane: usize, token: u32) {
        assert!(token <= self.vocab, "token id beyond the pad id");
        self.data[step * self.lanes + lane] = token;
    }

    pub fn step_row(&self, step: usize) -> &[u32] {
        &self.data[step * self.lanes..(step + 1) * self.lanes]
    }

    pub fn cells(&self) -> &[u32] {
        &self.data
    }
}

/// Flattens `grid` into decode order under `layout`.
pub fn apply_pattern(layout: &PatternLayout, grid: &TokenGrid) -> Result<PatternedSequence> {
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
    let special = grid.vocab();
    let mut seq = PatternedSequence {
        steps: layout.total_steps(),
        lanes: layout.lanes(),
        vocab: grid.vocab(),
        data: vec![special; layout.total_steps() * layout.lanes()],
    };
    for pos in layout.positions() {
        for &slot in &pos.predicted {
            seq.data[pos.step * seq.lanes + layout.lane_of(slot)] = grid.get(slot);
        }
    }
    Ok(seq)
}

/// Exact inverse of [`apply_pattern`]. Rejects sequences whose pad cells
/// and predicted cells do not line up with the layout.
pub fn revert_pattern(layout: &PatternLayout, seq: &PatternedSequence) -> Result<TokenGrid> {
    let spec = layout.spec();
    if seq.steps() != layout.total_steps() || seq.lanes() != layout.lanes() {
        return Err(Error::ShapeMismatch(format!(
            "sequence is {} steps x {} lanes, layout wants {} x {}",
            seq.steps(),
            seq.lanes(),
            layout.total_steps(),
            layout.lanes()
        )));
    }
    let mut cell_slot: Vec<Option<SlotRef>> = vec![None; seq.steps() * seq.lanes()];
    for pos in layout.positions() {
        for &slot in &pos.predicted {
            cell_slot[pos.step * seq.lanes() + layout.lane_of(slot)] = Some(slot);
        }
    }
    let mut grid = TokenGrid::zeros(spec.levels(), spec.timesteps(), seq.vocab())?;
    for step in 0..seq.steps() {
        for lane in 0..seq.lanes() {
            let token = seq.get(step, lane);
            match cell_slot[step * seq.lanes() + lane] {
                Some(slot) => {
                    if token == seq.special() {
                        return Err(Error::MalformedSequence(format!(
                            "pad id at step {step} lane {lane}, which predicts {slot}"
                        )));
                    }
                    grid.set(slot, token)?;
                }
                None => {
                    if token != seq.special() {
                        return Err(Error::MalformedSequence(format!(
                            "token {token} at step {step} lane {lane}, which predicts nothing"
                        )));
                    }
                }
            }
        }
    }
    Ok(grid)
}

/// A way a layout can break its contract. Violations are data, not errors,
/// so callers can report all of them at once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayoutViolation {
    /// A grid slot no position predicts.
    MissingSlot(SlotRef),
    /// A grid slot predicted more than once.
    DuplicateSlot(SlotRef),
    /// A predicted slot outside the C x T grid.
    SlotOutOfBounds(SlotRef),
    /// Level i > 0 of a timestep scheduled no later than its level 0.
    LevelZeroNotFirst { timestep: usize, level: usize },
    /// An input recipe referencing a slot decoded at the same or a later
    /// step.
    InputNotEarlier {
        step: usize,
        stream: usize,
        slot: SlotRef,
    },
    /// An input recipe referencing a slot nothing decodes.
    InputUnresolved {
        step: usize,
        stream: usize,
        slot: SlotRef,
    },
}

impl fmt::Display for LayoutViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayoutViolation::MissingSlot(slot) => write!(f, "slot {slot} is never predicted"),
            LayoutViolation::DuplicateSlot(slot) => {
                write!(f, "slot {slot} is predicted more than once")
            }
            LayoutViolation::SlotOutOfBounds(slot) => {
                write!(f, "predicted slot {slot} lies outside the grid")
            }
            LayoutViolation::LevelZeroNotFirst { timestep, level } => write!(
                f,
                "level {level} of timestep {timestep} is not scheduled after level 0"
            ),
            LayoutViolation::InputNotEarlier { step, stream, slot } => write!(
                f,
                "input of (step {step}, stream {stream}) reads {slot}, which is not decoded earlier"
            ),
            LayoutViolation::InputUnresolved { step, stream, slot } => write!(
                f,
                "input of (step {step}, stream {stream}) reads {slot}, which is never decoded"
            ),
        }
    }
}

/// Checks that every slot is predicted exactly once, level 0 of each
/// timestep comes strictly first, and recipes only read slots decoded at
/// strictly earlier steps. Empty result means the layout is sound.
pub fn validate_layout(layout: &PatternLayout) -> Vec<LayoutViolation> {
    let spec = layout.spec();
    let (c, t_count) = (spec.levels(), spec.timesteps());
    let mut violations = Vec::new();

    // slot -> decoding step, while counting coverage
    let mut slot_step: Vec<Option<usize>> = vec![None; c * t_count];
    for pos in layout.positions() {
        for &slot in &pos.predicted {
            if slot.level >= c || slot.timestep >= t_count {
                violations.push(LayoutViolation::SlotOutOfBounds(slot));
                continue;
            }
            let entry = &mut slot_step[slot.level * t_count + slot.timestep];
            if entry.is_some() {
                violations.push(LayoutViolation::DuplicateSlot(slot));
            } else {
                *entry = Some(pos.step);
            }
        }
    }
    for level in 0..c {
        for timestep in 0..t_count {
            if slot_step[level * t_count + timestep].is_none() {
                violations.push(LayoutViolation::MissingSlot(SlotRef::new(level, timestep)));
            }
        }
    }

    for timestep in 0..t_count {
        let Some(base) = slot_step[timestep] else { continue };
        for level in 1..c {
            if let Some(step) = slot_step[level * t_count + timestep] {
                if step <= base {
                    violations.push(LayoutViolation::LevelZeroNotFirst { timestep, level });
                }
            }
        }
    }

    for pos in layout.positions() {
        let Some(InputRecipe::Tokens(slots)) = &pos.input else { continue };
        for &slot in slots {
            let known = slot.level < c && slot.timestep < t_count;
            match known.then(|| slot_step[slot.level * t_count + slot.timestep]).flatten() {
                Some(step) if step < pos.step => {}
                Some(_) => violations.push(LayoutViolation::InputNotEarlier {
                    step: pos.step,
                    stream: pos.stream,
                    slot,
                }),
                None => violations.push(LayoutViolation::InputUnresolved {
                    step: pos.step,
                    stream: pos.stream,
                    slot,
                }),
            }
        }
    }

    violations
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: PatternKind, c: usize, t: usize, k: usize) -> PatternSpec {
        PatternSpec::new(kind, c, t, k).unwrap()
    }

    #[test]
    fn schedule_step_matches_the_four_kinds() {
        assert_eq!(spec(PatternKind::Delay, 4, 8, 1).schedule_step(2, 5).unwrap(), 7);
        assert_eq!(spec(PatternKind::Flat, 4, 8, 1).schedule_step(1, 3).unwrap(), 13);
        assert_eq!(spec(PatternKind::Stack, 4, 8, 1).schedule_step(1, 3).unwrap(), 13);
        assert_eq!(
            spec(PatternKind::StackDelay, 4, 8, 3).schedule_step(0, 1).unwrap(),
            3
        );
    }

    #[test]
    fn stack_delay_with_unit_window_is_delay() {
        let sd = spec(PatternKind::StackDelay, 8, 100, 1);
        let delay = spec(PatternKind::Delay, 8, 100, 1);
        for i in 0..8 {
            for t in 0..100 {
                assert_eq!(
                    sd.schedule_step(i, t).unwrap(),
                    delay.schedule_step(i, t).unwrap()
                );
            }
        }
        assert_eq!(sd.total_steps(), delay.total_steps());
    }

    #[test]
    fn schedule_step_rejects_out_of_range_slots() {
        let s = spec(PatternKind::Delay, 4, 8, 1);
        assert!(matches!(s.schedule_step(4, 0), Err(Error::OutOfRange { .. })));
        assert!(matches!(s.schedule_step(0, 8), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn total_steps_closed_forms() {
        assert_eq!(spec(PatternKind::Delay, 4, 500, 1).total_steps(), 503);
        assert_eq!(spec(PatternKind::Flat, 4, 500, 1).total_steps(), 2000);
        assert_eq!(spec(PatternKind::Stack, 4, 500, 1).total_steps(), 2000);
        assert_eq!(spec(PatternKind::StackDelay, 4, 500, 3).total_steps(), 509);
    }

    #[test]
    fn total_steps_equals_brute_force_max() {
        // includes timestep counts not divisible by k+1, where the naive
        // T + k(k-1) + C - 1 form overshoots
        for kind in PatternKind::ALL {
            for &c in &[1, 2, 4] {
                for &t in &[1, 2, 3, 7, 8, 13, 498] {
                    for &k in &[1, 2, 3, 4] {
                        let s = spec(kind, c, t, k);
                        let max_step = (0..c)
                            .flat_map(|i| (0..t).map(move |tt| (i, tt)))
                            .map(|(i, tt)| s.schedule_step(i, tt).unwrap())
                            .max()
                            .unwrap();
                        assert_eq!(s.total_steps(), max_step + 1, "{kind} C={c} T={t} k={k}");
                    }
                }
            }
        }
    }

    #[test]
    fn permuted_bases_spread_timesteps() {
        let bases: Vec<usize> = (0..8).map(|t| permuted_base(t, 3)).collect();
        assert_eq!(bases, vec![0, 3, 6, 9, 4, 7, 10, 13]);

        let min_sep = |k: usize| {
            (0..99)
                .map(|t| permuted_base(t + 1, k).abs_diff(permuted_base(t, k)))
                .min()
                .unwrap()
        };
        assert_eq!(min_sep(1), 1);
        assert_eq!(min_sep(2), 1); // window boundary collapses the gap
        assert_eq!(min_sep(3), 3);
        assert_eq!(min_sep(4), 4);
    }

    #[test]
    fn delay_layout_predicts_diagonals() {
        let layout = spec(PatternKind::Delay, 4, 8, 1).layout();
        assert_eq!(layout.positions_per_step(), 1);
        assert_eq!(layout.lanes(), 4);
        assert_eq!(
            layout.position(1, 0).predicted,
            vec![SlotRef::new(0, 1), SlotRef::new(1, 0)]
        );
        assert_eq!(layout.position(0, 0).input, Some(InputRecipe::Bos));
        // step 1 reads exactly what step 0 produced
        assert_eq!(
            layout.position(1, 0).input,
            Some(InputRecipe::Tokens(vec![SlotRef::new(0, 0)]))
        );
    }

    #[test]
    fn stack_layout_feeds_partial_then_full_stacks() {
        let layout = spec(PatternKind::Stack, 2, 2, 1).layout();
        let step3 = layout.position(3, 0);
        assert_eq!(step3.predicted, vec![SlotRef::new(1, 1)]);
        assert_eq!(
            step3.input,
            Some(InputRecipe::Tokens(vec![SlotRef::new(0, 1)]))
        );
        // level 0 of t=1 consumes the completed stack of t=0
        assert_eq!(
            layout.position(2, 0).input,
            Some(InputRecipe::Tokens(vec![SlotRef::new(0, 0), SlotRef::new(1, 0)]))
        );
        assert_eq!(layout.position(0, 0).input, Some(InputRecipe::Bos));
    }

    #[test]
    fn stack_delay_streams_carry_their_level() {
        let layout = spec(PatternKind::StackDelay, 4, 8, 3).layout();
        assert_eq!(layout.positions_per_step(), 4);
        let mut level0_steps = Vec::new();
        for pos in layout.positions() {
            if pos.stream == 0 && !pos.is_empty() {
                assert_eq!(pos.predicted.len(), 1);
                assert_eq!(pos.predicted[0].level, 0);
                level0_steps.push((pos.predicted[0].timestep, pos.step));
            }
        }
        level0_steps.sort_unstable();
        let steps: Vec<usize> = level0_steps.iter().map(|&(_, s)| s).collect();
        assert_eq!(steps, vec![0, 3, 6, 9, 4, 7, 10, 13]);
    }

    #[test]
    fn stack_delay_stream_zero_reads_most_recently_completed_stack() {
        let layout = spec(PatternKind::StackDelay, 4, 8, 3).layout();
        // timestep t completes at base(t) + 3; "most recent" goes by that
        // completion step, not by t itself
        let full = |t: usize| {
            Some(InputRecipe::Tokens(
                (0..4).map(|lvl| SlotRef::new(lvl, t)).collect(),
            ))
        };
        let input_for = |t: usize| layout.position(permuted_base(t, 3), 0).input.clone();
        assert_eq!(input_for(0), Some(InputRecipe::Bos));
        assert_eq!(input_for(1), Some(InputRecipe::Bos)); // t=0 completes at step 3, not before it
        assert_eq!(input_for(2), full(0));
        assert_eq!(input_for(4), full(0));
        assert_eq!(input_for(5), full(1));
        assert_eq!(input_for(3), full(4)); // t=4 completed at step 7, later than t=1's step 6
        assert_eq!(input_for(6), full(2));
        assert_eq!(input_for(7), full(3));
    }

    #[test]
    fn stack_delay_higher_streams_read_partial_stacks() {
        let layout = spec(PatternKind::StackDelay, 4, 8, 3).layout();
        for pos in layout.positions() {
            if pos.stream >= 1 && !pos.is_empty() {
                let t = pos.predicted[0].timestep;
                let want: Vec<SlotRef> =
                    (0..pos.stream).map(|lvl| SlotRef::new(lvl, t)).collect();
                assert_eq!(pos.input, Some(InputRecipe::Tokens(want)));
            }
        }
    }

    #[test]
    fn apply_flat_serializes_level_by_level() {
        let grid = TokenGrid::from_rows(&[vec![10, 11], vec![12, 13]], 16).unwrap();
        let layout = spec(PatternKind::Flat, 2, 2, 1).layout();
        let seq = apply_pattern(&layout, &grid).unwrap();
        assert_eq!(seq.cells(), &[10, 12, 11, 13]);
    }

    #[test]
    fn apply_delay_pads_the_ramp() {
        let grid = TokenGrid::from_rows(&[vec![10, 11], vec![12, 13]], 16).unwrap();
        let layout = spec(PatternKind::Delay, 2, 2, 1).layout();
        let seq = apply_pattern(&layout, &grid).unwrap();
        let pad = seq.special();
        assert_eq!(seq.step_row(0), &[10, pad]);
        assert_eq!(seq.step_row(1), &[11, 12]);
        assert_eq!(seq.step_row(2), &[pad, 13]);
    }

    #[test]
    fn revert_is_the_exact_inverse() {
        for kind in PatternKind::ALL {
            for seed in 0..20 {
                let s = spec(kind, 4, 9, 3);
                let layout = s.layout();
                let grid = TokenGrid::random(4, 9, 32, seed).unwrap();
                let seq = apply_pattern(&layout, &grid).unwrap();
                let back = revert_pattern(&layout, &seq).unwrap();
                assert_eq!(back, grid, "{kind} seed {seed}");
            }
        }
    }

    #[test]
    fn revert_flat_example() {
        let layout = spec(PatternKind::Flat, 2, 2, 1).layout();
        let grid = TokenGrid::from_rows(&[vec![10, 11], vec![12, 13]], 16).unwrap();
        let seq = apply_pattern(&layout, &grid).unwrap();
        assert_eq!(seq.cells(), &[10, 12, 11, 13]);
        assert_eq!(revert_pattern(&layout, &seq).unwrap(), grid);
    }

    #[test]
    fn revert_rejects_tokens_in_padding_cells() {
        let layout = spec(PatternKind::Delay, 2, 2, 1).layout();
        let grid = TokenGrid::random(2, 2, 16, 0).unwrap();
        let mut seq = apply_pattern(&layout, &grid).unwrap();
        seq.set(0, 1, 5); // lane 1 of step 0 predicts nothing
        assert!(matches!(
            revert_pattern(&layout, &seq),
            Err(Error::MalformedSequence(_))
        ));
    }

    #[test]
    fn revert_rejects_padding_in_predicted_cells() {
        let layout = spec(PatternKind::Flat, 2, 2, 1).layout();
        let grid = TokenGrid::random(2, 2, 16, 0).unwrap();
        let mut seq = apply_pattern(&layout, &grid).unwrap();
        let pad = seq.special();
        seq.set(2, 0, pad);
        assert!(matches!(
            revert_pattern(&layout, &seq),
            Err(Error::MalformedSequence(_))
        ));
    }

    #[test]
    fn built_in_layouts_validate_cleanly() {
        for kind in PatternKind::ALL {
            for &c in &[1, 2, 4, 8] {
                for &t in &[1, 2, 5, 8, 13] {
                    for &k in &[1, 2, 3, 4] {
                        let layout = spec(kind, c, t, k).layout();
                        let violations = validate_layout(&layout);
                        assert!(
                            violations.is_empty(),
                            "{kind} C={c} T={t} k={k}: {violations:?}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn validate_flags_level_zero_scheduled_last() {
        // both levels of t=0 at step 0: level 0 no longer strictly first
        let s = spec(PatternKind::StackDelay, 2, 1, 1);
        let layout = PatternLayout::from_parts(
            s,
            1,
            2,
            2,
            vec![
                PositionPlan {
                    step: 0,
                    stream: 0,
                    flat_index: 0,
                    predicted: vec![SlotRef::new(0, 0)],
                    input: Some(InputRecipe::Bos),
                },
                PositionPlan {
                    step: 0,
                    stream: 1,
                    flat_index: 1,
                    predicted: vec![SlotRef::new(1, 0)],
                    input: Some(InputRecipe::Bos),
                },
            ],
        )
        .unwrap();
        let violations = validate_layout(&layout);
        assert_eq!(
            violations,
            vec![LayoutViolation::LevelZeroNotFirst { timestep: 0, level: 1 }]
        );
    }

    #[test]
    fn validate_flags_missing_slots() {
        let s = spec(PatternKind::Flat, 2, 1, 1);
        let layout = PatternLayout::from_parts(
            s,
            2,
            1,
            1,
            vec![
                PositionPlan {
                    step: 0,
                    stream: 0,
                    flat_index: 0,
                    predicted: vec![SlotRef::new(0, 0)],
                    input: Some(InputRecipe::Bos),
                },
                PositionPlan {
                    step: 1,
                    stream: 0,
                    flat_index: 1,
                    predicted: vec![],
                    input: None,
                },
            ],
        )
        .unwrap();
        assert_eq!(
            validate_layout(&layout),
            vec![LayoutViolation::MissingSlot(SlotRef::new(1, 0))]
        );
    }

    #[test]
    fn validate_flags_inputs_that_read_the_future() {
        let s = spec(PatternKind::Flat, 1, 2, 1);
        let layout = PatternLayout::from_parts(
            s,
            2,
            1,
            1,
            vec![
                PositionPlan {
                    step: 0,
                    stream: 0,
                    flat_index: 0,
                    // reads the slot decoded one step later
                    predicted: vec![SlotRef::new(0, 0)],
                    input: Some(InputRecipe::Tokens(vec![SlotRef::new(0, 1)])),
                },
                PositionPlan {
                    step: 1,
                    stream: 0,
                    flat_index: 1,
                    predicted: vec![SlotRef::new(0, 1)],
                    input: Some(InputRecipe::Tokens(vec![SlotRef::new(0, 0)])),
                },
            ],
        )
        .unwrap();
        assert_eq!(
            validate_layout(&layout),
            vec![LayoutViolation::InputNotEarlier {
                step: 0,
                stream: 0,
                slot: SlotRef::new(0, 1)
            }]
        );
    }

    #[test]
    fn pattern_names_round_trip() {
        for kind in PatternKind::ALL {
            assert_eq!(kind.name().parse::<PatternKind>().unwrap(), kind);
        }
        assert!("ripple".parse::<PatternKind>().is_err());
    }

    #[test]
    fn specs_reject_degenerate_dimensions() {
        assert!(PatternSpec::new(PatternKind::Flat, 0, 4, 1).is_err());
        assert!(PatternSpec::new(PatternKind::Flat, 4, 0, 1).is_err());
        assert!(PatternSpec::new(PatternKind::StackDelay, 4, 4, 0).is_err());
        // k collapses to 1 where it has no meaning
        assert_eq!(PatternSpec::new(PatternKind::Flat, 4, 4, 3).unwrap().permutation(), 1);
    }
}
