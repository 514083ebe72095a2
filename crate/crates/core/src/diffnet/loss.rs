//! Composite physics-informed loss and its exact gradients.

use serde::{Deserialize, Serialize};

use super::batch::{backward, forward, JetOrder};
use super::NetParams;
use crate::domain::Point2;
use crate::error::{Error, Result};
use crate::par;

/// Points per work item. Fixed so that summation order, and therefore the
/// result bits, do not depend on the thread count.
const CHUNK: usize = 256;

/// Affine maps between physical coordinates/temperatures and the network's
/// normalized inputs/outputs: `xi = 2 x / lx - 1`, `T = t_offset + t_scale * tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub lx: f64,
    pub ly: f64,
    pub t_offset: f64,
    pub t_scale: f64,
}

impl Normalization {
    pub fn for_plate(lx: f64, ly: f64) -> Self {
        Self {
            lx,
            ly,
            t_offset: 298.0,
            t_scale: 50.0,
        }
    }

    pub fn to_unit(&self, p: &Point2) -> (f64, f64) {
        (2.0 * p.x / self.lx - 1.0, 2.0 * p.y / self.ly - 1.0)
    }

    /// `d xi / d x`.
    pub fn sx(&self) -> f64 {
        2.0 / self.lx
    }

    pub fn sy(&self) -> f64 {
        2.0 / self.ly
    }

    /// Divisor turning the PDE residual (W/m²) into kelvin: `k / l²` with
    /// `l` the half-width of the plate.
    pub fn pde_scale(&self, conductivity: f64) -> f64 {
        conductivity * 0.5 * (self.sx() * self.sx() + self.sy() * self.sy())
    }

    /// Divisor turning a boundary flux residual (W/m²) into kelvin: `k / l`.
    pub fn flux_scale(&self, conductivity: f64) -> f64 {
        conductivity * 0.5 * (self.sx() + self.sy())
    }
}

/// PDE collocation point; `source` indexes the intensity vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteriorPoint {
    pub p: Point2,
    pub source: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryTarget {
    /// Residual `T - t0`.
    Dirichlet { t0: f64 },
    /// Residual `k dT/dn + h_conv (T - t0)`; Neumann when `h_conv == 0`.
    Flux { normal: (f64, f64), h_conv: f64, t0: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryPoint {
    pub p: Point2,
    pub target: BoundaryTarget,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataPoint {
    pub p: Point2,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossBatches {
    pub interior: Vec<InteriorPoint>,
    pub boundary: Vec<BoundaryPoint>,
    pub data: Vec<DataPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub pde: f64,
    pub bc: f64,
    pub data: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            pde: 1.0,
            bc: 1.0,
            data: 1e4,
        }
    }
}

/// Weighted total plus the unweighted mean-squared terms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub pde: f64,
    pub bc: f64,
    pub data: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrads {
    pub params: Vec<f64>,
    pub phi: Vec<f64>,
}

struct Problem<'a> {
    params: &'a NetParams,
    norm: Normalization,
    conductivity: f64,
    phi: &'a [f64],
    weights: LossWeights,
}

/// Output of one chunk: sum of squared residuals, parameter and intensity gradients.
struct Partial {
    sq: f64,
    grads: Vec<f64>,
    phi: Vec<f64>,
}

/// One block of points evaluated with a common jet order. `residual` returns
/// the residual and its derivative with respect to each output channel; the
/// `Option` carries the intensity the residual depends on linearly, with its
/// coefficient.
fn run_block<P: Sync>(
    prob: &Problem<'_>,
    points: &[P],
    order: JetOrder,
    coords: impl Fn(&P) -> Point2 + Sync + Send,
    residual: impl Fn(&P, &[f64; 5]) -> (f64, [f64; 5], Option<(usize, f64)>) + Sync + Send,
    scale: f64,
    with_grads: bool,
) -> Partial {
    let chunks: Vec<&[P]> = points.chunks(CHUNK).collect();
    let c = order.channels();
    let partials = par::map(&chunks, |chunk| {
        let pts: Vec<(f64, f64)> = chunk.iter().map(|q| prob.norm.to_unit(&coords(q))).collect();
        let tape = forward(prob.params, &pts, order);
        let n = chunk.len();
        let mut g_out = vec![0.0; c * n];
        let mut sq = 0.0;
        let mut phi = vec![0.0; prob.phi.len()];
        for (i, q) in chunk.iter().enumerate() {
            let mut jet = [0.0; 5];
            for (ch, slot) in jet.iter_mut().enumerate().take(c) {
                *slot = tape.out[ch * n + i];
            }
            let (r, dr, src) = residual(q, &jet);
            sq += r * r;
            let g = 2.0 * r * scale;
            for ch in 0..c {
                g_out[ch * n + i] = g * dr[ch];
            }
            if let Some((j, c)) = src {
                phi[j] += g * c;
            }
        }
        let mut grads = Vec::new();
        if with_grads {
            grads = vec![0.0; prob.params.len()];
            backward(prob.params, &tape, &g_out, &mut grads);
        }
        Partial { sq, grads, phi }
    });
    let mut acc = Partial {
        sq: 0.0,
        grads: if with_grads { vec![0.0; prob.params.len()] } else { Vec::new() },
        phi: vec![0.0; prob.phi.len()],
    };
    for p in partials {
        acc.sq += p.sq;
        for (a, b) in acc.grads.iter_mut().zip(&p.grads) {
            *a += b;
        }
        for (a, b) in acc.phi.iter_mut().zip(&p.phi) {
            *a += b;
        }
    }
    acc
}

fn check_batches(batches: &LossBatches, weights: &LossWeights, phi: &[f64]) -> Result<()> {
    for (name, w) in [("w_pde", weights.pde), ("w_bc", weights.bc), ("w_data", weights.data)] {
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::validation(name, "weights must be finite and non-negative"));
        }
    }
    if weights.pde > 0.0 && batches.interior.is_empty() {
        return Err(Error::validation("interior", "empty PDE batch with nonzero w_pde"));
    }
    if weights.bc > 0.0 && batches.boundary.is_empty() {
        return Err(Error::validation("boundary", "empty boundary batch with nonzero w_bc"));
    }
    if weights.data > 0.0 && batches.data.is_empty() {
        return Err(Error::validation("data", "empty observation batch with nonzero w_data"));
    }
    if let Some(bad) = batches.interior.iter().filter_map(|q| q.source).find(|&j| j >= phi.len()) {
        return Err(Error::validation("phi", format!("collocation point references source {bad}, only {} given", phi.len())));
    }
    Ok(())
}

fn evaluate(prob: &Problem<'_>, batches: &LossBatches, with_grads: bool) -> (LossValue, LossGrads) {
    let ts = prob.norm.t_scale;
    let t0 = prob.norm.t_offset;
    let (sx, sy) = (prob.norm.sx(), prob.norm.sy());
    let k = prob.conductivity;
    let mut value = LossValue::default();
    let mut grads = LossGrads {
        params: vec![0.0; if with_grads { prob.params.len() } else { 0 }],
        phi: vec![0.0; prob.phi.len()],
    };
    let mut absorb = |p: Partial| {
        for (a, b) in grads.params.iter_mut().zip(&p.grads) {
            *a += b;
        }
        for (a, b) in grads.phi.iter_mut().zip(&p.phi) {
            *a += b;
        }
    };

    if prob.weights.pde > 0.0 {
        let n = batches.interior.len() as f64;
        let scale = prob.norm.pde_scale(k);
        let cxx = k * ts * sx * sx / scale;
        let cyy = k * ts * sy * sy / scale;
        let part = run_block(
            prob,
            &batches.interior,
            JetOrder::Second,
            |q| q.p,
            |q, j| {
                let phi = q.source.map_or(0.0, |s| prob.phi[s]);
                let r = cxx * j[3] + cyy * j[4] + phi / scale;
                (r, [0.0, 0.0, 0.0, cxx, cyy], q.source.map(|s| (s, 1.0 / scale)))
            },
            prob.weights.pde / n,
            with_grads,
        );
        value.pde = part.sq / n;
        absorb(part);
    }

    if prob.weights.bc > 0.0 {
        let n = batches.boundary.len() as f64;
        let (fixed, flux): (Vec<BoundaryPoint>, Vec<BoundaryPoint>) = batches
            .boundary
            .iter()
            .partition(|b| matches!(b.target, BoundaryTarget::Dirichlet { .. }));
        let flux_div = prob.norm.flux_scale(k);
        let mut sq = 0.0;
        if !fixed.is_empty() {
            let part = run_block(
                prob,
                &fixed,
                JetOrder::Value,
                |q| q.p,
                |q, j| match q.target {
                    BoundaryTarget::Dirichlet { t0: target } => (t0 + ts * j[0] - target, [ts, 0.0, 0.0, 0.0, 0.0], None),
                    BoundaryTarget::Flux { .. } => unreachable!("partitioned"),
                },
                prob.weights.bc / n,
                with_grads,
            );
            sq += part.sq;
            absorb(part);
        }
        if !flux.is_empty() {
            let part = run_block(
                prob,
                &flux,
                JetOrder::First,
                |q| q.p,
                |q, j| match q.target {
                    BoundaryTarget::Flux { normal, h_conv, t0: ambient } => {
                        let cx = k * ts * sx * normal.0 / flux_div;
                        let cy = k * ts * sy * normal.1 / flux_div;
                        let ch = h_conv / flux_div;
                        let r = cx * j[1] + cy * j[2] + ch * (t0 + ts * j[0] - ambient);
                        (r, [ch * ts, cx, cy, 0.0, 0.0], None)
                    }
                    BoundaryTarget::Dirichlet { .. } => unreachable!("partitioned"),
                },
                prob.weights.bc / n,
                with_grads,
            );
            sq += part.sq;
            absorb(part);
        }
        value.bc = sq / n;
    }

    if prob.weights.data > 0.0 {
        let n = batches.data.len() as f64;
        let part = run_block(
            prob,
            &batches.data,
            JetOrder::Value,
            |q| q.p,
            |q, j| (t0 + ts * j[0] - q.value, [ts, 0.0, 0.0, 0.0, 0.0], None),
            prob.weights.data / n,
            with_grads,
        );
        value.data = part.sq / n;
        absorb(part);
    }

    value.total = prob.weights.pde * value.pde + prob.weights.bc * value.bc + prob.weights.data * value.data;
    (value, grads)
}

/// `w_pde L_pde + w_bc L_bc + w_data L_data` with each term a mean squared
/// residual, and its exact gradient with respect to the network parameters
/// and the source intensities `phi` (W/m²). Terms with zero weight are skipped.
///
/// Every residual is measured in kelvin: the PDE residual `k ΔT + phi` is
/// divided by [`Normalization::pde_scale`] and the flux residual
/// `k dT/dn + h_conv (T - t0)` by [`Normalization::flux_scale`].
pub fn loss_and_grads(
    params: &NetParams,
    norm: &Normalization,
    conductivity: f64,
    phi: &[f64],
    batches: &LossBatches,
    weights: &LossWeights,
) -> Result<(LossValue, LossGrads)> {
    check_batches(batches, weights, phi)?;
    let prob = Problem {
        params,
        norm: *norm,
        conductivity,
        phi,
        weights: *weights,
    };
    Ok(evaluate(&prob, batches, true))
}

/// Loss terms only, skipping the reverse pass.
pub fn loss_value(
    params: &NetParams,
    norm: &Normalization,
    conductivity: f64,
    phi: &[f64],
    batches: &LossBatches,
    weights: &LossWeights,
) -> Result<LossValue> {
    check_batches(batches, weights, phi)?;
    let prob = Problem {
        params,
        norm: *norm,
        conductivity,
        phi,
        weights: *weights,
    };
    Ok(evaluate(&prob, batches, false).0)
}

/// Surrogate temperatures (K) at physical points.
pub fn predict(params: &NetParams, norm: &Normalization, points: &[Point2]) -> Vec<f64> {
    let chunks: Vec<&[Point2]> = points.chunks(CHUNK).collect();
    par::map(&chunks, |chunk| {
        let pts: Vec<(f64, f64)> = chunk.iter().map(|p| norm.to_unit(p)).collect();
        forward(params, &pts, JetOrder::Value)
            .out
            .into_iter()
            .map(|t| norm.t_offset + norm.t_scale * t)
            .collect::<Vec<f64>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::{eval_jet, init_params, InitScheme};

    fn small_problem(seed: u64) -> (NetParams, Normalization, LossBatches, Vec<f64>) {
        let mut params = init_params(&[2, 8, 8, 1], InitScheme::Xavier, seed).unwrap();
        for (i, v) in params.as_mut_slice().iter_mut().enumerate() {
            *v += 0.05 * ((i as f64) * 0.7 + seed as f64).sin();
        }
        let norm = Normalization::for_plate(0.1, 0.1);
        let pt = |i: usize, a: f64, b: f64| Point2::new(0.1 * (0.5 + 0.45 * (i as f64 * a).sin()), 0.1 * (0.5 + 0.45 * (i as f64 * b).cos()));
        let interior = (0..10)
            .map(|i| InteriorPoint {
                p: pt(i, 1.3, 0.7),
                source: if i % 3 == 0 { Some(i % 2) } else { None },
            })
            .collect();
        let boundary = (0..10)
            .map(|i| {
                let s = 0.1 * (i as f64 + 0.5) / 10.0;
                if i % 2 == 0 {
                    BoundaryPoint {
                        p: Point2::new(s, 0.0),
                        target: BoundaryTarget::Dirichlet { t0: 298.0 },
                    }
                } else {
                    BoundaryPoint {
                        p: Point2::new(0.1, s),
                        target: BoundaryTarget::Flux {
                            normal: (1.0, 0.0),
                            h_conv: if i % 4 == 1 { 0.0 } else { 12.0 },
                            t0: 298.0,
                        },
                    }
                }
            })
            .collect();
        let data = (0..10)
            .map(|i| DataPoint {
                p: pt(i, 2.1, 1.9),
                value: 300.0 + i as f64 * 0.3,
            })
            .collect();
        (params, norm, LossBatches { interior, boundary, data }, vec![1500.0, -700.0])
    }

    #[test]
    fn loss_matches_pointwise_reference() {
        let (params, norm, batches, phi) = small_problem(1);
        let w = LossWeights { pde: 0.7, bc: 1.3, data: 2.0 };
        let v = loss_value(&params, &norm, 1.0, &phi, &batches, &w).unwrap();
        let (sx, ts) = (norm.sx(), norm.t_scale);
        let pde: f64 = batches
            .interior
            .iter()
            .map(|q| {
                let (x, y) = norm.to_unit(&q.p);
                let j = eval_jet(&params, x, y);
                let r = (ts * sx * sx * j.laplacian() + q.source.map_or(0.0, |s| phi[s])) / norm.pde_scale(1.0);
                r * r
            })
            .sum::<f64>()
            / 10.0;
        assert!((v.pde - pde).abs() < 1e-11 * pde.max(1.0), "{} vs {}", v.pde, pde);
        let data: f64 = batches
            .data
            .iter()
            .map(|d| {
                let (x, y) = norm.to_unit(&d.p);
                let r = 298.0 + ts * eval_jet(&params, x, y).value - d.value;
                r * r
            })
            .sum::<f64>()
            / 10.0;
        assert!((v.data - data).abs() < 1e-11 * data.max(1.0));
        assert!((v.total - (0.7 * v.pde + 1.3 * v.bc + 2.0 * v.data)).abs() < 1e-9 * v.total);
    }

    fn rel_close(a: f64, b: f64, scale: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(scale)
    }

    #[test]
    fn gradients_match_central_differences() {
        let (mut params, norm, batches, mut phi) = small_problem(2);
        let w = LossWeights { pde: 0.5, bc: 1.0, data: 3.0 };
        let (_, g) = loss_and_grads(&params, &norm, 1.0, &phi, &batches, &w).unwrap();
        let f = |p: &NetParams, phi: &[f64]| loss_value(p, &norm, 1.0, phi, &batches, &w).unwrap().total;
        let gscale = g.params.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for i in 0..params.len() {
            let h = 1e-6;
            let orig = params.as_slice()[i];
            params.as_mut_slice()[i] = orig + h;
            let up = f(&params, &phi);
            params.as_mut_slice()[i] = orig - h;
            let dn = f(&params, &phi);
            params.as_mut_slice()[i] = orig;
            let fd = (up - dn) / (2.0 * h);
            assert!(rel_close(g.params[i], fd, 1e-3 * gscale, 1e-5), "param {i}: {} vs {}", g.params[i], fd);
        }
        for j in 0..phi.len() {
            let h = 10.0;
            let orig = phi[j];
            phi[j] = orig + h;
            let up = f(&params, &phi);
            phi[j] = orig - h;
            let dn = f(&params, &phi);
            phi[j] = orig;
            let fd = (up - dn) / (2.0 * h);
            assert!(rel_close(g.phi[j], fd, 1e-12, 1e-5), "phi {j}: {} vs {}", g.phi[j], fd);
        }
    }

    #[test]
    fn zero_weights_give_zero_loss_and_grads() {
        let (params, norm, batches, phi) = small_problem(3);
        let w = LossWeights { pde: 0.0, bc: 0.0, data: 0.0 };
        let (v, g) = loss_and_grads(&params, &norm, 1.0, &phi, &batches, &w).unwrap();
        assert_eq!(v.total, 0.0);
        assert!(g.params.iter().all(|&x| x == 0.0));
        assert!(g.phi.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn data_term_has_no_phi_gradient() {
        let (params, norm, batches, phi) = small_problem(4);
        let w = LossWeights { pde: 0.0, bc: 0.0, data: 1.0 };
        let (_, g) = loss_and_grads(&params, &norm, 1.0, &phi, &batches, &w).unwrap();
        assert!(g.phi.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn empty_weighted_batch_is_rejected() {
        let (params, norm, mut batches, phi) = small_problem(5);
        batches.data.clear();
        let err = loss_and_grads(&params, &norm, 1.0, &phi, &batches, &LossWeights::default()).unwrap_err();
        assert!(err.to_string().contains("data"));
        let ok = LossWeights { data: 0.0, ..LossWeights::default() };
        assert!(loss_and_grads(&params, &norm, 1.0, &phi, &batches, &ok).is_ok());
    }

    #[test]
    fn linear_field_has_zero_residuals() {
        // tau = a xi + b eta + c is harmonic; with matching data and Dirichlet
        // targets every residual vanishes.
        let params = NetParams::from_flat(&[2, 1], vec![0.02, -0.01, 0.1]).unwrap();
        let norm = Normalization::for_plate(0.1, 0.1);
        let exact = |p: &Point2| {
            let (x, y) = norm.to_unit(p);
            298.0 + 50.0 * (0.02 * x - 0.01 * y + 0.1)
        };
        let interior = vec![InteriorPoint { p: Point2::new(0.03, 0.04), source: None }];
        let boundary = [Point2::new(0.0, 0.05), Point2::new(0.1, 0.02)]
            .into_iter()
            .map(|p| BoundaryPoint { p, target: BoundaryTarget::Dirichlet { t0: exact(&p) } })
            .collect();
        let data = vec![DataPoint { p: Point2::new(0.07, 0.01), value: exact(&Point2::new(0.07, 0.01)) }];
        let batches = LossBatches { interior, boundary, data };
        let v = loss_value(&params, &norm, 1.0, &[], &batches, &LossWeights::default()).unwrap();
        assert_eq!(v.pde, 0.0);
        assert!(v.bc < 1e-24 && v.data < 1e-24);
    }

    #[test]
    fn batch_order_does_not_matter() {
        let (params, norm, batches, phi) = small_problem(6);
        let mut rev = batches.clone();
        rev.interior.reverse();
        rev.boundary.reverse();
        rev.data.reverse();
        let w = LossWeights::default();
        let a = loss_value(&params, &norm, 1.0, &phi, &batches, &w).unwrap();
        let b = loss_value(&params, &norm, 1.0, &phi, &rev, &w).unwrap();
        assert!((a.total - b.total).abs() <= 1e-10 * a.total);
    }

    #[test]
    fn predict_matches_eval_jet() {
        let (params, norm, _, _) = small_problem(7);
        let pts: Vec<Point2> = (0..600).map(|i| Point2::new(0.1 * ((i * 37) % 600) as f64 / 600.0, 0.1 * i as f64 / 600.0)).collect();
        let pred = predict(&params, &norm, &pts);
        for (p, t) in pts.iter().zip(&pred) {
            let (x, y) = norm.to_unit(p);
            assert!((t - (298.0 + 50.0 * eval_jet(&params, x, y).value)).abs() < 1e-10);
        }
    }
}
