//! Reconstruction error metrics and the multiplicative Gaussian noise model.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::DomainSpec;
use crate::error::{Error, Result};
use crate::fd_system::ScalarField;

/// Absolute errors in K.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Mean over all nodes.
    pub mae: f64,
    /// Mean over nodes inside any source rectangle.
    pub cmae: f64,
    /// Mean over the outermost ring of nodes.
    pub bmae: f64,
    /// Maximum over all nodes.
    pub mcae: f64,
}

impl MetricReport {
    /// `run_id,mae,cmae,bmae,mcae` row, no trailing newline.
    pub fn csv_row(&self, run_id: &str) -> String {
        format!("{run_id},{:.6e},{:.6e},{:.6e},{:.6e}", self.mae, self.cmae, self.bmae, self.mcae)
    }
}

pub const METRICS_HEADER: &str = "run_id,mae,cmae,bmae,mcae";

pub fn metrics_csv<'a>(rows: impl IntoIterator<Item = (&'a str, &'a MetricReport)>) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for (id, r) in rows {
        let _ = writeln!(out, "{}", r.csv_row(id));
    }
    out
}

/// Compares two fields on the same grid.
pub fn metrics(pred: &ScalarField, truth: &ScalarField, spec: &DomainSpec) -> Result<MetricReport> {
    if pred.grid != truth.grid {
        return Err(Error::validation(
            "grid",
            format!("prediction K = {} but truth K = {}", pred.grid.k(), truth.grid.k()),
        ));
    }
    let grid = truth.grid;
    let (mut all, mut comp, mut ring) = (0.0, 0.0, 0.0);
    let (mut n_comp, mut n_ring) = (0usize, 0usize);
    let mut max = 0.0f64;
    for i in 0..grid.len() {
        let e = (pred.values[i] - truth.values[i]).abs();
        all += e;
        max = max.max(e);
        if spec.source_at(&grid.point(i)).is_some() {
            comp += e;
            n_comp += 1;
        }
        if grid.is_boundary(i) {
            ring += e;
            n_ring += 1;
        }
    }
    if n_comp == 0 {
        return Err(Error::validation("sources", "no grid node lies inside a source; CMAE is undefined"));
    }
    Ok(MetricReport {
        mae: all / grid.len() as f64,
        cmae: comp / n_comp as f64,
        bmae: ring / n_ring as f64,
        mcae: max,
    })
}

/// `T (1 + eps g)` with `g` standard normal, drawn in order from `seed`.
pub fn add_noise(values: &[f64], eps: f64, seed: u64) -> Result<Vec<f64>> {
    if !(eps.is_finite() && eps >= 0.0) {
        return Err(Error::validation("epsilon", "noise level must be finite and >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(values
        .iter()
        .map(|&t| {
            let g: f64 = StandardNormal.sample(&mut rng);
            t * (1.0 + eps * g)
        })
        .collect())
}
