//! Token sampling: top-k truncation with temperature, and the guidance
//! combination of conditional and unconditional logits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::XorShiftRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub top_k: usize,
    pub temperature: f32,
    pub cfg_scale: f32,
    pub rng_seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            top_k: 250,
            temperature: 1.0,
            cfg_scale: 3.0,
            rng_seed: 42,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::InvalidConfig("top_k must be at least 1".into()));
        }
        if !self.temperature.is_finite() || self.temperature <= 0.0 {
            return Err(Error::InvalidConfig("temperature must be positive".into()));
        }
        if !self.cfg_scale.is_finite() || self.cfg_scale < 0.0 {
            return Err(Error::InvalidConfig("cfg_scale must be non-negative".into()));
        }
        Ok(())
    }
}

/// Moves the unconditional logits toward (or past) the conditional ones:
/// algebraically uncond + scale * (cond - uncond). Written as a two-sided
/// blend so scale 0 returns uncond and scale 1 returns cond without
/// floating-point residue.
pub fn cfg_combine(cond: &[f32], uncond: &[f32], scale: f32) -> Result<Vec<f32>> {
    if cond.len() != uncond.len() {
        return Err(Error::LengthMismatch {
            expected: cond.len(),
            got: uncond.len(),
        });
    }
    Ok(cond
        .iter()
        .zip(uncond)
        .map(|(&c, &u)| (1.0 - scale) * u + scale * c)
        .collect())
}

/// Probabilities over the full logit vector after keeping the `top_k`
/// largest entries (ties to the lower index) and applying `temperature`.
/// Dropped entries get probability zero.
pub fn top_k_distribution(logits: &[f32], top_k: usize, temperature: f32) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::InvalidConfig("cannot sample from empty logits".into()));
    }
    if top_k == 0 {
        return Err(Error::InvalidConfig("top_k must be at least 1".into()));
    }
    if !temperature.is_finite() || temperature <= 0.0 {
        return Err(Error::InvalidConfig("temperature must be positive".into()));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| {
        logits[b]
            .partial_cmp(&logits[a])
            .expect("finite logits compare totally")
            .then(a.cmp(&b))
    });
    let kept = &order[..top_k.min(logits.len())];
    let peak = logits[kept[0]] as f64;
    let mut dist = vec![0f64; logits.len()];
    let mut sum = 0f64;
    for &i in kept {
        let e = ((logits[i] as f64 - peak) / temperature as f64).exp();
        dist[i] = e;
        sum += e;
    }
    for p in &mut dist {
        *p /= sum;
    }
    Ok(dist)
}

/// Draws one token id from the truncated, temperature-scaled distribution.
pub fn top_k_sample(
    logits: &[f32],
    config: &SamplerConfig,
    rng: &mut XorShiftRng,
) -> Result<usize> {
    let dist = top_k_distribution(logits, config.top_k, config.temperature)?;
    let draw = rng.uniform();
    let mut acc = 0f64;
    let mut last_kept = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_kept = i;
            if draw < acc {
                return Ok(i);
            }
        }
    }
    // rounding can leave acc a hair under 1; the draw falls to the last
    // kept index, which keeps the support property intact
    Ok(last_kept)
}

/// Lowest index among the maxima.
pub fn argmax(logits: &[f32]) -> usize {
    assert!(!logits.is_empty(), "argmax over empty logits");
    let mut best = 0;
    for (i, &l) in logits.iter().enumerate().skip(1) {
        if l > logits[best] {
            best = i;
        }
    }
    best
}

/// Token selection strategy owned by a decode session.
#[derive(Debug, Clone)]
pub enum Sampler {
    /// Deterministic argmax decode.
    Greedy,
    /// Seeded top-k draw.
    TopK {
        config: SamplerConfig,
        rng: XorShiftRng,
    },
}

impl Sampler {
    pub fn greedy() -> Self {
        Sampler::Greedy
    }

    pub fn top_k(config: SamplerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Sampler::TopK {
            rng: XorShiftRng::seed_from_u64(config.rng_seed),
            config,
        })
    }

    pub fn next_token(&mut self, logits: &[f32]) -> Result<usize> {
        match self {
            Sampler::Greedy => {
                if logits.iter().any(|l| !l.is_finite()) {
                    return Err(Error::NonFinite("logits"));
                }
                Ok(argmax(logits))
            }
            Sampler::TopK { config, rng } => top_k_sample(logits, &*config, rng),
        }
    }
}
