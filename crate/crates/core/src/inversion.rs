//! PINN training: pretraining under rated intensities, then joint training of
//! the network and the source intensities against observations.

use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffnet::{
    eval_jet, init_params, loss_and_grads, predict, BoundaryPoint, BoundaryTarget, DataPoint, InitScheme,
    InteriorPoint, LossBatches, LossWeights, NetParams, Normalization, OptState, DEFAULT_WIDTHS,
};
use crate::domain::{BoundaryKind, DomainSpec, Edge, Point2};
use crate::error::{Error, Result};
use crate::fd_system::{Grid, ScalarField};
use crate::sampling::{lhs_unit, PositionSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub w_pde: f64,
    pub w_bc: f64,
    pub w_data: f64,
    pub iterations: usize,
    pub lr: f64,
    /// LHS collocation points inside the plate.
    pub n_interior: usize,
    /// Equispaced collocation points on each edge.
    pub n_per_edge: usize,
    pub seed: u64,
    pub phi_trainable: bool,
    pub widths: Vec<usize>,
    /// Stop as soon as the total loss drops to this value.
    pub stop_at_loss: Option<f64>,
    /// Return the iterate with the lowest recorded loss instead of the last.
    pub keep_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            w_pde: 1.0,
            w_bc: 1.0,
            w_data: 1e4,
            iterations: 5000,
            lr: 1e-3,
            n_interior: 4000,
            n_per_edge: 100,
            seed: 0,
            phi_trainable: true,
            widths: DEFAULT_WIDTHS.to_vec(),
            stop_at_loss: None,
            keep_best: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, w) in [("w_pde", self.w_pde), ("w_bc", self.w_bc), ("w_data", self.w_data)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::validation(key, "must be finite and >= 0"));
            }
        }
        if self.iterations == 0 {
            return Err(Error::validation("iterations", "must be >= 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::validation("lr", "must be finite and > 0"));
        }
        if self.n_interior == 0 {
            return Err(Error::validation("n_interior", "must be >= 1"));
        }
        if self.n_per_edge == 0 {
            return Err(Error::validation("n_per_edge", "must be >= 1"));
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            pde: self.w_pde,
            bc: self.w_bc,
            data: self.w_data,
        }
    }
}

/// Loss terms recorded before each update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub total: f64,
    pub pde: f64,
    pub bc: f64,
    pub data: f64,
}

#[derive(Debug, Clone)]
pub struct InversionResult {
    pub params: NetParams,
    pub normalization: Normalization,
    /// Estimated intensities (W/m²).
    pub phi_hat: Vec<f64>,
    /// History row of the returned iterate; `history.len()` when the state
    /// after the last step is returned.
    pub best_iteration: usize,
    pub history: Vec<HistoryRow>,
    pub wall_time: Duration,
}

impl InversionResult {
    /// Loss history as CSV `iter,total,pde,bc,data`.
    pub fn history_csv(&self) -> String {
        history_csv(&self.history)
    }

    pub fn final_loss(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |h| h.total)
    }

    /// Surrogate temperatures at every node of `grid`.
    pub fn field(&self, grid: Grid) -> ScalarField {
        surrogate_field(&self.params, &self.normalization, grid)
    }

    /// First iteration whose recorded total loss is at or below `target`.
    pub fn iterations_to_reach(&self, target: f64) -> Option<usize> {
        self.history.iter().position(|h| h.total <= target)
    }
}

pub fn history_csv(history: &[HistoryRow]) -> String {
    let mut out = String::from("iter,total,pde,bc,data\n");
    for (i, h) in history.iter().enumerate() {
        let _ = writeln!(out, "{i},{:e},{:e},{:e},{:e}", h.total, h.pde, h.bc, h.data);
    }
    out
}

pub fn write_history(path: &Path, history: &[HistoryRow]) -> Result<()> {
    std::fs::write(path, history_csv(history)).map_err(|e| Error::io(path, e))
}

pub fn surrogate_field(params: &NetParams, norm: &Normalization, grid: Grid) -> ScalarField {
    let pts: Vec<Point2> = (0..grid.len()).map(|i| grid.point(i)).collect();
    ScalarField::new(grid, predict(params, norm, &pts))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Collocation {
    pub interior: Vec<InteriorPoint>,
    pub boundary: Vec<BoundaryPoint>,
}

fn boundary_target(kind: BoundaryKind, edge: Edge) -> BoundaryTarget {
    match kind {
        BoundaryKind::Dirichlet { t0 } => BoundaryTarget::Dirichlet { t0 },
        BoundaryKind::Neumann => BoundaryTarget::Flux {
            normal: edge.outward_normal(),
            h_conv: 0.0,
            t0: 0.0,
        },
        BoundaryKind::Robin { h_conv, t0 } => BoundaryTarget::Flux {
            normal: edge.outward_normal(),
            h_conv,
            t0,
        },
    }
}

/// Interior points by Latin hypercube (strictly inside the plate), boundary
/// points at the midpoints of `n_per_edge` equal pieces of each edge, so
/// corners are never sampled.
pub fn collocation_sets(spec: &DomainSpec, cfg: &TrainConfig, seed: u64) -> Result<Collocation> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let interior = lhs_unit(cfg.n_interior, &mut rng)
        .into_iter()
        .map(|(u, v)| {
            let p = Point2::new(u * spec.lx, v * spec.ly);
            InteriorPoint {
                p,
                source: spec.source_at(&p),
            }
        })
        .collect();
    let mut boundary = Vec::with_capacity(4 * cfg.n_per_edge);
    for edge in Edge::ALL {
        let len = if edge.is_horizontal() { spec.lx } else { spec.ly };
        for i in 0..cfg.n_per_edge {
            let s = len * (i as f64 + 0.5) / cfg.n_per_edge as f64;
            let p = match edge {
                Edge::Bottom => Point2::new(s, 0.0),
                Edge::Top => Point2::new(s, spec.ly),
                Edge::Left => Point2::new(0.0, s),
                Edge::Right => Point2::new(spec.lx, s),
            };
            boundary.push(BoundaryPoint {
                p,
                target: boundary_target(spec.boundary_at(edge, s), edge),
            });
        }
    }
    Ok(Collocation { interior, boundary })
}

/// `k (T_xx + T_yy) + phi` at a physical point, with `phi` the intensity
/// vector (W/m²) indexed like `spec.sources`.
pub fn pde_residual(params: &NetParams, norm: &Normalization, spec: &DomainSpec, phi: &[f64], p: &Point2) -> f64 {
    let (x, y) = norm.to_unit(p);
    let j = eval_jet(params, x, y);
    let lap = norm.t_scale * (norm.sx() * norm.sx() * j.dxx + norm.sy() * norm.sy() * j.dyy);
    spec.conductivity * lap + spec.source_at(p).map_or(0.0, |i| phi[i])
}

/// Intensity scale used to train `phi / scale` instead of `phi`.
fn phi_scales(spec: &DomainSpec) -> Vec<f64> {
    spec.sources
        .iter()
        .map(|s| if s.rated_intensity > 0.0 { s.rated_intensity } else { 1.0 })
        .collect()
}

fn train(
    spec: &DomainSpec,
    init: &NetParams,
    batches: &LossBatches,
    cfg: &TrainConfig,
    weights: LossWeights,
    phi_trainable: bool,
) -> Result<InversionResult> {
    let start = Instant::now();
    let norm = Normalization::for_plate(spec.lx, spec.ly);
    let scales = phi_scales(spec);
    let mut params = init.clone();
    let mut u: Vec<f64> = spec.rated_intensities().iter().zip(&scales).map(|(r, s)| r / s).collect();
    let mut opt_params = OptState::new(params.len(), cfg.lr);
    let mut opt_phi = OptState::new(u.len(), cfg.lr);
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut phi: Vec<f64> = u.iter().zip(&scales).map(|(u, s)| u * s).collect();
    let mut best: Option<(f64, usize, NetParams, Vec<f64>)> = None;

    for iteration in 0..cfg.iterations {
        let (value, grads) = loss_and_grads(&params, &norm, spec.conductivity, &phi, batches, &weights)?;
        if !value.total.is_finite() {
            return Err(Error::Training {
                iteration,
                message: format!("loss became {}", value.total),
            });
        }
        history.push(HistoryRow {
            total: value.total,
            pde: value.pde,
            bc: value.bc,
            data: value.data,
        });
        if cfg.keep_best && best.as_ref().is_none_or(|b| value.total < b.0) {
            best = Some((value.total, iteration, params.clone(), phi.clone()));
        }
        if cfg.stop_at_loss.is_some_and(|t| value.total <= t) {
            break;
        }
        let step = |e: Error| match e {
            Error::Optimizer { index } => Error::Training {
                iteration,
                message: format!("non-finite gradient at parameter {index}"),
            },
            other => other,
        };
        opt_params.step(params.as_mut_slice(), &grads.params).map_err(step)?;
        if phi_trainable {
            let g_u: Vec<f64> = grads.phi.iter().zip(&scales).map(|(g, s)| g * s).collect();
            opt_phi.step(&mut u, &g_u).map_err(step)?;
            for ((p, u), s) in phi.iter_mut().zip(&u).zip(&scales) {
                *p = u * s;
            }
        }
    }
    let mut best_iteration = history.len();
    if let Some((_, it, p, f)) = best {
        (best_iteration, params, phi) = (it, p, f);
    }
    Ok(InversionResult {
        params,
        normalization: norm,
        phi_hat: phi,
        best_iteration,
        history,
        wall_time: start.elapsed(),
    })
}

/// Trains a Xavier-initialized network on the PDE and boundary terms with the
/// intensities fixed at their rated values. Observations are not used.
pub fn pretrain(spec: &DomainSpec, cfg: &TrainConfig) -> Result<InversionResult> {
    cfg.validate()?;
    let init = init_params(&cfg.widths, InitScheme::Xavier, cfg.seed)?;
    pretrain_from(spec, &init, cfg)
}

/// [`pretrain`] continued from given parameters.
pub fn pretrain_from(spec: &DomainSpec, init: &NetParams, cfg: &TrainConfig) -> Result<InversionResult> {
    cfg.validate()?;
    let col = collocation_sets(spec, cfg, cfg.seed)?;
    let batches = LossBatches {
        interior: col.interior,
        boundary: col.boundary,
        data: Vec::new(),
    };
    let weights = LossWeights {
        data: 0.0,
        ..cfg.weights()
    };
    train(spec, init, &batches, cfg, weights, false)
}

/// Observation points paired with measured temperatures (K).
pub fn observations(positions: &PositionSet, values: &[f64]) -> Result<Vec<DataPoint>> {
    if positions.len() != values.len() {
        return Err(Error::validation(
            "observations",
            format!("{} positions but {} values", positions.len(), values.len()),
        ));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::validation(format!("observations[{i}]"), "non-finite value"));
    }
    Ok(positions
        .points()
        .iter()
        .zip(values)
        .map(|(&p, &value)| DataPoint { p, value })
        .collect())
}

/// Jointly trains the network (starting from `init`, normally the pretrained
/// parameters) and, when `cfg.phi_trainable`, the intensities (starting at
/// their rated values) against the observations.
pub fn invert(
    spec: &DomainSpec,
    init: &NetParams,
    positions: &PositionSet,
    values: &[f64],
    cfg: &TrainConfig,
) -> Result<InversionResult> {
    cfg.validate()?;
    if cfg.w_data > 0.0 && positions.is_empty() {
        return Err(Error::validation("observations", "no observations but w_data > 0"));
    }
    let data = observations(positions, values)?;
    let col = collocation_sets(spec, cfg, cfg.seed)?;
    let batches = LossBatches {
        interior: col.interior,
        boundary: col.boundary,
        data,
    };
    train(spec, init, &batches, cfg, cfg.weights(), cfg.phi_trainable)
}
