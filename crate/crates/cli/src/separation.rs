//! How far apart the permuted schedule places adjacent timesteps. Larger
//! gaps give a stream more intervening context before it must commit to
//! the next frame.

use serde::Serialize;
use stackdelay::pattern::permuted_base;

#[derive(Serialize)]
pub struct SeparationRow {
    pub window: usize,
    pub min: usize,
    pub mean: f64,
}

#[derive(Serialize)]
pub struct SeparationReport {
    /// Gaps are taken over t in [0, horizon).
    pub horizon: usize,
    pub rows: Vec<SeparationRow>,
}

pub fn separation_table(windows: &[usize], horizon: usize) -> SeparationReport {
    let rows = windows
        .iter()
        .map(|&k| {
            let gaps: Vec<usize> = (0..horizon)
                .map(|t| permuted_base(t + 1, k).abs_diff(permuted_base(t, k)))
                .collect();
            SeparationRow {
                window: k,
                min: gaps.iter().copied().min().unwrap_or(0),
                mean: gaps.iter().sum::<usize>() as f64 / gaps.len().max(1) as f64,
            }
        })
        .collect();
    SeparationReport { horizon, rows }
}

pub fn separation_csv(report: &SeparationReport) -> String {
    let mut out = String::from("window,min,mean\n");
    for row in &report.rows {
        out.push_str(&format!("{},{},{}\n", row.window, row.min, row.mean));
    }
    out
}
