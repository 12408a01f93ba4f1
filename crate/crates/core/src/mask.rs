//! Dense attention masks that give training-time queries exactly the view
//! incremental decoding would give them.
//!
//! Row q of the mask is the cache live set at q's step: nothing more,
//! nothing less. Positions that predict nothing get all-false rows and
//! columns; they carry no token and no cache entry.

use crate::cache::{simulate, CachePolicy};
use crate::pattern::PatternLayout;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    n: usize,
    /// Row-major: allow[q * n + p].
    allow: Vec<bool>,
}

impl AttentionMask {
    pub fn all_false(n: usize) -> Self {
        Self {
            n,
            allow: vec![false; n * n],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn allows(&self, q: usize, p: usize) -> bool {
        self.allow[q * self.n + p]
    }

    pub fn set(&mut self, q: usize, p: usize, allowed: bool) {
        self.allow[q * self.n + p] = allowed;
    }

    /// Inverts one cell; the negative controls use this.
    pub fn flip(&mut self, q: usize, p: usize) {
        self.allow[q * self.n + p] ^= true;
    }

    pub fn row(&self, q: usize) -> &[bool] {
        &self.allow[q * self.n..(q + 1) * self.n]
    }

    /// One line per query, `1` for allowed and `.` for blocked.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.n * (self.n + 1));
        for q in 0..self.n {
            for &cell in self.row(q) {
                out.push(if cell { '1' } else { '.' });
            }
            out.push('\n');
        }
        out
    }

    /// Row-major bitstream, most significant bit first, final byte
    /// zero-padded.
    pub fn to_packed_bits(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.allow.len().div_ceil(8));
        for chunk in self.allow.chunks(8) {
            let mut byte = 0u8;
            for (i, &bit) in chunk.iter().enumerate() {
                if bit {
                    byte |= 1 << (7 - i);
                }
            }
            out.push(byte);
        }
        out
    }
}

/// Materializes the mask for `layout` under `policy`: row q is the live set
/// at q's step, and empty positions stay blocked in both directions.
pub fn build_mask(layout: &PatternLayout, policy: &CachePolicy) -> AttentionMask {
    let trace = simulate(layout, policy);
    let mut mask = AttentionMask::all_false(layout.flat_len());
    for pos in layout.positions() {
        if pos.is_empty() {
            continue;
        }
        let live = trace
            .live_set(pos.step)
            .expect("positions only exist at in-range steps");
        for p in live {
            mask.set(pos.flat_index, p, true);
        }
    }
    mask
}

/// Picks the bit whose removal hurts most for corruption drills: the
/// oldest visible key of the earliest query that sees more than itself.
/// None when no query sees two keys (single-position layouts).
pub fn heaviest_bit(mask: &AttentionMask) -> Option<(usize, usize)> {
    for q in 0..mask.len() {
        let mut first = None;
        let mut seen = 0;
        for p in 0..mask.len() {
            if mask.allows(q, p) {
                seen += 1;
                if first.is_none() {
                    first = Some(p);
                }
                if seen >= 2 {
                    return Some((q, first.unwrap()));
                }
            }
        }
    }
    None
}

/// Largest per-row symmetric difference between `mask` and the live sets
/// the policy replay produces. 0 means the mask reproduces the cache
/// exactly.
pub fn mask_consistency_against(
    mask: &AttentionMask,
    layout: &PatternLayout,
    policy: &CachePolicy,
) -> usize {
    let trace = simulate(layout, policy);
    let n = layout.flat_len();
    let mut worst = 0;
    for pos in layout.positions() {
        let mut expected = vec![false; n];
        if !pos.is_empty() {
            for p in trace.live_set(pos.step).expect("in-range step") {
                expected[p] = true;
            }
        }
        let diff = mask
            .row(pos.flat_index)
            .iter()
            .zip(&expected)
            .filter(|(a, b)| a != b)
            .count();
        worst = worst.max(diff);
    }
    worst
}

/// Builds the mask fresh and scores it against the replayed live sets.
pub fn mask_cache_consistency(layout: &PatternLayout, policy: &CachePolicy) -> usize {
    mask_consistency_against(&build_mask(layout, policy), layout, policy)
}
