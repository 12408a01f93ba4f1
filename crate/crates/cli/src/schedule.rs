//! JSON dump of one materialized layout, the full flat position list
//! included. Key order is fixed by the struct definitions; golden tests
//! depend on it.

use anyhow::Result;
use serde::Serialize;
use stackdelay::pattern::PositionPlan;

use crate::config::{ConfigEcho, RunConfig};

#[derive(Serialize)]
pub struct ScheduleDump {
    #[serde(flatten)]
    pub config: ConfigEcho,
    pub total_steps: usize,
    pub positions_per_step: usize,
    pub lanes: usize,
    pub positions: Vec<PositionPlan>,
}

pub fn schedule_dump(cfg: &RunConfig) -> Result<ScheduleDump> {
    let spec = cfg.spec()?;
    let layout = spec.layout();
    let mut config = cfg.echo();
    // patterns without a permutation normalize k away; echo what the
    // layout actually used
    config.window = spec.permutation();
    Ok(ScheduleDump {
        config,
        total_steps: layout.total_steps(),
        positions_per_step: layout.positions_per_step(),
        lanes: layout.lanes(),
        positions: layout.positions().to_vec(),
    })
}
