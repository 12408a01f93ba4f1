//! Renders the dense attention mask for one configuration.

use anyhow::Result;
use serde::Serialize;
use stackdelay::cache::derive_policy;
use stackdelay::mask::build_mask;

use crate::config::{ConfigEcho, RunConfig};

pub struct MaskArtifacts {
    pub text: String,
    /// Row-major bitstream, MSB first, final byte zero-padded.
    pub packed: Vec<u8>,
    pub n: usize,
    pub echo: ConfigEcho,
}

#[derive(Serialize)]
pub struct MaskJson {
    #[serde(flatten)]
    pub config: ConfigEcho,
    pub n: usize,
    pub rows: Vec<String>,
}

impl MaskArtifacts {
    pub fn to_json(&self) -> MaskJson {
        MaskJson {
            config: self.echo.clone(),
            n: self.n,
            rows: self.text.lines().map(str::to_owned).collect(),
        }
    }
}

pub fn mask_artifacts(cfg: &RunConfig) -> Result<MaskArtifacts> {
    let layout = cfg.spec()?.layout();
    let mask = build_mask(&layout, &derive_policy(&layout));
    Ok(MaskArtifacts {
        text: mask.to_text(),
        packed: mask.to_packed_bits(),
        n: mask.len(),
        echo: cfg.echo(),
    })
}
