//! Layered run configuration: built-in defaults, then an optional JSON
//! config file, then command-line flags. Later layers win key by key.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use stackdelay::decoder::DecoderConfig;
use stackdelay::sampling::SamplerConfig;
use stackdelay::{PatternKind, PatternSpec};

pub const DEFAULT_TIMESTEPS: usize = 500;
pub const DEFAULT_FRAMERATE: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Csv,
}

/// Flags shared by every subcommand. Anything given here overrides the
/// same key in the config file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct CommonArgs {
    /// JSON config file with the same keys as these flags
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Codebook pattern: delay, flat, stack, or stack-delay
    #[arg(long, global = true)]
    pub pattern: Option<PatternKind>,

    /// Codebook levels C
    #[arg(short = 'C', long = "levels", global = true)]
    pub levels: Option<usize>,

    /// Timestep count T; takes precedence over duration x framerate
    #[arg(short = 'T', long = "timesteps", global = true)]
    pub timesteps: Option<usize>,

    /// Audio duration in seconds; T = round(duration x framerate)
    #[arg(long, global = true, value_name = "SECONDS")]
    pub duration: Option<f64>,

    /// Token framerate in Hz
    #[arg(long, global = true, value_name = "HZ")]
    pub framerate: Option<f64>,

    /// Timestep permutation window k (only stack-delay uses it)
    #[arg(short = 'k', long = "window", global = true)]
    pub window: Option<usize>,

    /// Seed for weights, token grids, and sampling
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Sample from the k most likely tokens
    #[arg(long, global = true)]
    pub top_k: Option<usize>,

    /// Softmax temperature over the kept logits
    #[arg(long, global = true)]
    pub temperature: Option<f32>,

    /// Guidance scale blending the paired decode passes
    #[arg(long, global = true)]
    pub cfg_scale: Option<f32>,

    /// Directory for output artifacts; stdout when absent
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Output format for tabular results
    #[arg(long, global = true, value_enum)]
    pub format: Option<OutputFormat>,
}

/// Keys accepted in the config file. All optional; unknown keys are
/// rejected so typos fail loudly instead of silently using a default.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub pattern: Option<PatternKind>,
    pub levels: Option<usize>,
    pub timesteps: Option<usize>,
    pub duration: Option<f64>,
    pub framerate: Option<f64>,
    pub window: Option<usize>,
    pub seed: Option<u64>,
    pub top_k: Option<usize>,
    pub temperature: Option<f32>,
    pub cfg_scale: Option<f32>,
    pub d_model: Option<usize>,
    pub layers: Option<usize>,
    pub heads: Option<usize>,
    pub vocab: Option<u32>,
    pub out: Option<PathBuf>,
    pub format: Option<OutputFormat>,
}

/// Toy transformer dimensions, overridable from the config file.
#[derive(Debug, Clone, Copy)]
pub struct ModelDims {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub vocab: u32,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            d_model: 64,
            layers: 2,
            heads: 2,
            vocab: 32,
        }
    }
}

/// Which axes the user pinned explicitly (flag or file). Commands that
/// sweep a matrix collapse a pinned axis to the single given value.
#[derive(Debug, Clone, Copy, Default)]
pub struct PinnedAxes {
    pub pattern: bool,
    pub levels: bool,
    pub timesteps: bool,
    pub window: bool,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub pattern: PatternKind,
    pub levels: usize,
    pub timesteps: usize,
    pub duration: Option<f64>,
    pub framerate: f64,
    pub window: usize,
    pub seed: u64,
    pub sampler: SamplerConfig,
    pub dims: ModelDims,
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
    pub pinned: PinnedAxes,
}

impl RunConfig {
    pub fn resolve(args: &CommonArgs) -> Result<Self> {
        let file = match &args.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading config file {}", path.display()))?;
                serde_json::from_str::<FileConfig>(&text)
                    .with_context(|| format!("parsing config file {}", path.display()))?
            }
            None => FileConfig::default(),
        };

        let framerate = args
            .framerate
            .or(file.framerate)
            .unwrap_or(DEFAULT_FRAMERATE);
        if !framerate.is_finite() || framerate <= 0.0 {
            bail!("framerate must be a positive number of Hz, got {framerate}");
        }
        let duration = args.duration.or(file.duration);
        if let Some(d) = duration {
            if !d.is_finite() || d <= 0.0 {
                bail!("duration must be a positive number of seconds, got {d}");
            }
        }

        // An explicit T wins within its layer; duration x framerate wins
        // over a T inherited from the layer below.
        let timesteps = match (args.timesteps, args.duration, file.timesteps, file.duration) {
            (Some(t), _, _, _) => t,
            (None, Some(d), _, _) => from_duration(d, framerate)?,
            (None, None, Some(t), _) => t,
            (None, None, None, Some(d)) => from_duration(d, framerate)?,
            _ => DEFAULT_TIMESTEPS,
        };

        let defaults = SamplerConfig::default();
        let sampler = SamplerConfig {
            top_k: args.top_k.or(file.top_k).unwrap_or(defaults.top_k),
            temperature: args
                .temperature
                .or(file.temperature)
                .unwrap_or(defaults.temperature),
            cfg_scale: args
                .cfg_scale
                .or(file.cfg_scale)
                .unwrap_or(defaults.cfg_scale),
            rng_seed: args.seed.or(file.seed).unwrap_or(defaults.rng_seed),
        };
        sampler.validate()?;

        let base_dims = ModelDims::default();
        let dims = ModelDims {
            d_model: file.d_model.unwrap_or(base_dims.d_model),
            layers: file.layers.unwrap_or(base_dims.layers),
            heads: file.heads.unwrap_or(base_dims.heads),
            vocab: file.vocab.unwrap_or(base_dims.vocab),
        };

        let config = Self {
            pattern: args
                .pattern
                .or(file.pattern)
                .unwrap_or(PatternKind::StackDelay),
            levels: args.levels.or(file.levels).unwrap_or(4),
            timesteps,
            duration,
            framerate,
            window: args.window.or(file.window).unwrap_or(3),
            seed: sampler.rng_seed,
            sampler,
            dims,
            out: args.out.clone().or(file.out),
            format: args.format.or(file.format).unwrap_or(OutputFormat::Json),
            pinned: PinnedAxes {
                pattern: args.pattern.or(file.pattern).is_some(),
                levels: args.levels.or(file.levels).is_some(),
                timesteps: args.timesteps.or(file.timesteps).is_some()
                    || duration.is_some(),
                window: args.window.or(file.window).is_some(),
            },
        };

        // surface bad specs and dims as config errors up front
        config.spec()?;
        config.decoder_config(config.levels, 1).validate()?;
        Ok(config)
    }

    pub fn spec(&self) -> Result<PatternSpec> {
        PatternSpec::new(self.pattern, self.levels, self.timesteps, self.window)
            .context("invalid pattern configuration")
    }

    pub fn spec_for(&self, pattern: PatternKind) -> Result<PatternSpec> {
        PatternSpec::new(pattern, self.levels, self.timesteps, self.window)
            .context("invalid pattern configuration")
    }

    pub fn decoder_config(&self, levels: usize, max_positions: usize) -> DecoderConfig {
        DecoderConfig {
            d_model: self.dims.d_model,
            n_layers: self.dims.layers,
            n_heads: self.dims.heads,
            vocab: self.dims.vocab,
            levels,
            max_positions,
        }
    }

    pub fn echo(&self) -> ConfigEcho {
        ConfigEcho {
            pattern: self.pattern.name(),
            levels: self.levels,
            timesteps: self.timesteps,
            window: self.window,
            duration_seconds: self.duration,
            framerate_hz: self.duration.map(|_| self.framerate),
            seed: self.seed,
        }
    }
}

fn from_duration(duration: f64, framerate: f64) -> Result<usize> {
    let t = (duration * framerate).round();
    if !(1.0..=1e9).contains(&t) {
        bail!("duration {duration}s at {framerate}Hz gives unusable T = {t}");
    }
    Ok(t as usize)
}

/// Header block repeated in every JSON artifact so outputs are
/// self-describing; T appears here exactly once per artifact.
#[derive(Debug, Clone, Serialize)]
pub struct ConfigEcho {
    pub pattern: &'static str,
    pub levels: usize,
    pub timesteps: usize,
    pub window: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub framerate_hz: Option<f64>,
    pub seed: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(args: CommonArgs) -> RunConfig {
        RunConfig::resolve(&args).unwrap()
    }

    #[test]
    fn defaults_hold_without_any_input() {
        let cfg = resolve(CommonArgs::default());
        assert_eq!(cfg.pattern, PatternKind::StackDelay);
        assert_eq!(cfg.levels, 4);
        assert_eq!(cfg.timesteps, DEFAULT_TIMESTEPS);
        assert_eq!(cfg.window, 3);
        assert_eq!(cfg.seed, 42);
        assert!(!cfg.pinned.levels);
    }

    #[test]
    fn duration_times_framerate_sets_t() {
        let cfg = resolve(CommonArgs {
            duration: Some(10.0),
            ..CommonArgs::default()
        });
        assert_eq!(cfg.timesteps, 500);
        let cfg = resolve(CommonArgs {
            duration: Some(2.0),
            framerate: Some(25.0),
            ..CommonArgs::default()
        });
        assert_eq!(cfg.timesteps, 50);
    }

    #[test]
    fn explicit_t_beats_duration() {
        let cfg = resolve(CommonArgs {
            timesteps: Some(16),
            duration: Some(10.0),
            ..CommonArgs::default()
        });
        assert_eq!(cfg.timesteps, 16);
    }

    #[test]
    fn zero_window_is_a_config_error() {
        let err = RunConfig::resolve(&CommonArgs {
            window: Some(0),
            ..CommonArgs::default()
        });
        assert!(err.is_err());
    }
}
