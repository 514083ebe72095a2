//! Sensor placement by the condition number of the penalty-augmented
//! finite-difference system, plus the matching linear least-squares
//! reconstruction.
//!
//! With `A = (A1, -h² B)` acting on the stacked unknowns `(T, Y)` and a 0/1
//! selection matrix `O` picking observed nodes, the augmented system is
//!
//! ```text
//! Â = [ λ A ]      Ĉ = [ λ C1 ]
//!     [ O 0 ]          [ C2   ]
//! ```
//!
//! where `C2` holds the observed temperatures, one entry per sensor.

use std::fmt::Write as _;
use std::path::Path;

use faer::linalg::solvers::SolveLstsq;
use faer::linalg::triangular_solve::solve_upper_triangular_in_place;
use faer::{Mat, Par};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fd_system::{CoefficientSystem, Grid, ScalarField};
use crate::par;
use crate::sampling::{PositionSet, Provenance};

/// Largest `max(rows, cols)` accepted by the dense SVD path.
pub const DENSE_LIMIT: usize = 3000;

/// Relative singular-value floor below which a matrix counts as rank deficient.
pub const RANK_TOL: f64 = 1e-12;

/// Observation operator: one row per distinct observed node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionMatrix {
    m: usize,
    n_sources: usize,
    nodes: Vec<usize>,
    /// For each input position, the row it was merged into.
    row_of_position: Vec<usize>,
}

impl SelectionMatrix {
    /// Selection from explicit node indices (duplicates merge).
    pub fn from_nodes(nodes: &[usize], m: usize, n_sources: usize) -> Result<Self> {
        let mut rows: Vec<usize> = Vec::new();
        let mut row_of_position = Vec::with_capacity(nodes.len());
        for (i, &node) in nodes.iter().enumerate() {
            if node >= m {
                return Err(Error::validation(format!("nodes[{i}]"), format!("node {node} outside 0..{m}")));
            }
            let r = match rows.iter().position(|&x| x == node) {
                Some(r) => r,
                None => {
                    rows.push(node);
                    rows.len() - 1
                }
            };
            row_of_position.push(r);
        }
        Ok(Self {
            m,
            n_sources,
            nodes: rows,
            row_of_position,
        })
    }

    pub fn rows(&self) -> usize {
        self.nodes.len()
    }

    /// `m + n`.
    pub fn cols(&self) -> usize {
        self.m + self.n_sources
    }

    /// Observed node of each row.
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    /// Positions that snapped onto an already observed node.
    pub fn merged_positions(&self) -> usize {
        self.row_of_position.len() - self.nodes.len()
    }

    /// Per-row observation values: the mean over the positions merged into each row.
    pub fn row_values(&self, per_position: &[f64]) -> Result<Vec<f64>> {
        if per_position.len() != self.row_of_position.len() {
            return Err(Error::validation(
                "obs_values",
                format!("{} values for {} positions", per_position.len(), self.row_of_position.len()),
            ));
        }
        let mut sum = vec![0.0; self.rows()];
        let mut count = vec![0usize; self.rows()];
        for (&r, &v) in self.row_of_position.iter().zip(per_position) {
            sum[r] += v;
            count[r] += 1;
        }
        Ok(sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect())
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut o = Mat::zeros(self.rows(), self.cols());
        for (r, &node) in self.nodes.iter().enumerate() {
            o[(r, node)] = 1.0;
        }
        o
    }
}

/// Snaps each position to its nearest grid node (exact ties go to the larger
/// index) and builds the selection rows. Positions landing on the same node
/// share a row; see [`SelectionMatrix::merged_positions`].
pub fn selection_from_positions(ps: &PositionSet, grid: &Grid, n_sources: usize) -> SelectionMatrix {
    let nodes: Vec<usize> = ps.points().iter().map(|p| grid.nearest_node(p)).collect();
    SelectionMatrix::from_nodes(&nodes, grid.len(), n_sources).expect("nearest_node stays on the grid")
}

#[derive(Debug, Clone)]
pub struct AugmentedSystem {
    pub a_hat: Mat<f64>,
    pub c_hat: Vec<f64>,
    pub lambda: f64,
    pub grid: Grid,
    pub n_sources: usize,
}

impl AugmentedSystem {
    pub fn rows(&self) -> usize {
        self.a_hat.nrows()
    }

    pub fn cols(&self) -> usize {
        self.a_hat.ncols()
    }
}

/// Dense `Â` for a system and selection.
fn augmented_matrix(sys: &CoefficientSystem, sel: &SelectionMatrix, lambda: f64) -> Result<Mat<f64>> {
    let m = sys.m();
    let n = sys.n();
    if sel.cols() != m + n {
        return Err(Error::validation(
            "selection",
            format!("selection has {} columns, system needs m + n = {}", sel.cols(), m + n),
        ));
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::validation("lambda", "must be finite and > 0"));
    }
    let rows = m + sel.rows();
    let cols = m + n;
    if rows.max(cols) > DENSE_LIMIT {
        return Err(Error::SizeLimit {
            size: rows.max(cols),
            limit: DENSE_LIMIT,
        });
    }
    let h2 = sys.grid.h() * sys.grid.h();
    let mut a = Mat::zeros(rows, cols);
    for i in 0..m {
        for (j, v) in sys.a1.row(i) {
            a[(i, j)] = lambda * v;
        }
        if let Some(s) = sys.membership[i] {
            a[(i, m + s)] = -lambda * h2;
        }
    }
    for (r, &node) in sel.nodes().iter().enumerate() {
        a[(m + r, node)] = 1.0;
    }
    Ok(a)
}

/// Stacks `Â = (λA, O)` and `Ĉ = (λC1, C2)`. `obs_values` has one entry per
/// selection row (see [`SelectionMatrix::row_values`]).
pub fn augment(sys: &CoefficientSystem, sel: &SelectionMatrix, obs_values: &[f64], lambda: f64) -> Result<AugmentedSystem> {
    if obs_values.len() != sel.rows() {
        return Err(Error::validation(
            "obs_values",
            format!("{} values for {} selection rows", obs_values.len(), sel.rows()),
        ));
    }
    let a_hat = augmented_matrix(sys, sel, lambda)?;
    let mut c_hat: Vec<f64> = sys.c1.iter().map(|c| lambda * c).collect();
    c_hat.extend_from_slice(obs_values);
    Ok(AugmentedSystem {
        a_hat,
        c_hat,
        lambda,
        grid: sys.grid,
        n_sources: sys.n(),
    })
}

/// `σ_max / σ_min` of a rectangular matrix, `+inf` when it is not of full
/// column rank (fewer rows than columns, or `σ_min <= 1e-12 σ_max`).
///
/// `σ_min` is computed as `1 / σ_max(R⁻¹)` from a Householder QR `A = QR`.
/// QR's backward error is small column by column, so badly scaled columns
/// (the source columns carry a factor h²) do not cost relative accuracy the
/// way a direct SVD's normwise error would.
pub fn condition_number(a: &Mat<f64>) -> Result<f64> {
    let (r, c) = (a.nrows(), a.ncols());
    if r.max(c) > DENSE_LIMIT {
        return Err(Error::SizeLimit {
            size: r.max(c),
            limit: DENSE_LIMIT,
        });
    }
    if c == 0 {
        return Err(Error::validation("matrix", "no columns"));
    }
    if r < c {
        return Ok(f64::INFINITY);
    }
    let scale = a.norm_max();
    if scale == 0.0 || !scale.is_finite() {
        return Ok(f64::INFINITY);
    }
    let scaled = Mat::from_fn(r, c, |i, j| a[(i, j)] / scale);
    let qr = scaled.qr();
    let rf = qr.thin_R();
    let tri = Mat::from_fn(c, c, |i, j| if j >= i { rf[(i, j)] } else { 0.0 });
    let d0 = (0..c).map(|i| tri[(i, i)].abs()).fold(0.0f64, f64::max);
    if (0..c).any(|i| tri[(i, i)].abs() <= RANK_TOL * d0) {
        return Ok(f64::INFINITY);
    }
    let mut inv = Mat::<f64>::identity(c, c);
    solve_upper_triangular_in_place(tri.as_ref(), inv.as_mut(), Par::Seq);
    let max = largest_singular_value(&tri)?;
    let inv_max = largest_singular_value(&inv)?;
    let kappa = max * inv_max;
    if !kappa.is_finite() || kappa * RANK_TOL >= 1.0 {
        return Ok(f64::INFINITY);
    }
    Ok(kappa)
}

fn largest_singular_value(a: &Mat<f64>) -> Result<f64> {
    let s = a
        .singular_values()
        .map_err(|e| Error::Singular(format!("SVD did not converge: {e:?}")))?;
    Ok(s.iter().copied().fold(0.0f64, f64::max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlacementCandidate {
    pub positions: PositionSet,
    pub selection: SelectionMatrix,
    pub kappa: f64,
}

/// One line of the ranking table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub candidate_id: usize,
    pub provenance: Provenance,
    pub n_obs: usize,
    pub kappa: f64,
}

/// CSV `candidate_id,provenance,n_obs,kappa`.
pub fn ranking_csv(rows: &[RankRow]) -> String {
    let mut out = String::from("candidate_id,provenance,n_obs,kappa\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{:e}", r.candidate_id, r.provenance.name(), r.n_obs, r.kappa);
    }
    out
}

pub fn write_ranking(path: &Path, rows: &[RankRow]) -> Result<()> {
    std::fs::write(path, ranking_csv(rows)).map_err(|e| Error::io(path, e))
}

/// Condition number of the augmented system for one position set.
pub fn candidate_kappa(ps: &PositionSet, sys: &CoefficientSystem, lambda: f64) -> Result<f64> {
    let sel = selection_from_positions(ps, &sys.grid, sys.n());
    condition_number(&augmented_matrix(sys, &sel, lambda)?)
}

/// Evaluates every candidate and returns the minimizer of `κ` together with
/// the ranking table, sorted by `κ` ascending (ties keep input order).
pub fn select_positions(
    candidates: &[PositionSet],
    sys: &CoefficientSystem,
    lambda: f64,
) -> Result<(PlacementCandidate, Vec<RankRow>)> {
    if candidates.is_empty() {
        return Err(Error::validation("candidates", "need at least one candidate"));
    }
    let kappas = par::map(candidates, |ps| candidate_kappa(ps, sys, lambda));
    let mut rows = Vec::with_capacity(candidates.len());
    for (id, (ps, k)) in candidates.iter().zip(kappas).enumerate() {
        rows.push(RankRow {
            candidate_id: id,
            provenance: ps.provenance,
            n_obs: ps.len(),
            kappa: k?,
        });
    }
    rows.sort_by(|a, b| a.kappa.total_cmp(&b.kappa).then(a.candidate_id.cmp(&b.candidate_id)));
    let best = rows[0];
    if !best.kappa.is_finite() {
        return Err(Error::NoIdentifiablePlacement);
    }
    let positions = candidates[best.candidate_id].clone();
    let selection = selection_from_positions(&positions, &sys.grid, sys.n());
    Ok((
        PlacementCandidate {
            positions,
            selection,
            kappa: best.kappa,
        },
        rows,
    ))
}

/// Column-pivoted QR of `Â`, reusable across right-hand sides.
pub struct LeastSquares {
    qr: faer::linalg::solvers::ColPivQr<f64>,
    cols: usize,
}

impl LeastSquares {
    pub fn new(a: &Mat<f64>) -> Result<Self> {
        if a.nrows() < a.ncols() {
            return Err(Error::Reconstruction(format!(
                "{} equations for {} unknowns",
                a.nrows(),
                a.ncols()
            )));
        }
        let qr = a.col_piv_qr();
        let r = qr.R();
        let d0 = r[(0, 0)].abs();
        for i in 0..a.ncols() {
            if r[(i, i)].abs() <= RANK_TOL * d0 {
                return Err(Error::Reconstruction(format!(
                    "rank deficient: |R[{i},{i}]| = {:.3e} vs |R[0,0]| = {d0:.3e}",
                    r[(i, i)].abs()
                )));
            }
        }
        Ok(Self { qr, cols: a.ncols() })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let b = Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]);
        let x = self.qr.solve_lstsq(&b);
        (0..self.cols).map(|i| x[(i, 0)]).collect()
    }
}

/// Least-squares solution of `Â (T, Y) ≈ Ĉ`; unique because `Â` must have
/// full column rank.
pub fn least_squares_reconstruct(aug: &AugmentedSystem) -> Result<(ScalarField, Vec<f64>)> {
    let x = LeastSquares::new(&aug.a_hat)?.solve(&aug.c_hat);
    let m = aug.grid.len();
    Ok((ScalarField::new(aug.grid, x[..m].to_vec()), x[m..].to_vec()))
}

/// One perturbation trial of the least-squares error bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundTrial {
    /// `‖δx̂‖ / ‖x̂‖`.
    pub relative_error: f64,
    /// `(κ / cos θ) ‖δC‖ / ‖Ĉ‖`, `cos θ = ‖Â x̂‖ / ‖Ĉ‖`.
    pub bound: f64,
    /// `κ ‖δC‖ / ‖Ĉ‖`, the bound with `cos θ` relaxed to 1. Informational:
    /// it can fail when `Ĉ` is far from the range of `Â`.
    pub relaxed_bound: f64,
    pub cos_theta: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub kappa: f64,
    pub trials: Vec<BoundTrial>,
}

impl BoundReport {
    pub fn all_hold(&self) -> bool {
        self.trials.iter().all(|t| t.holds)
    }

    /// Largest observed `relative_error / bound`.
    pub fn max_ratio(&self) -> f64 {
        self.trials
            .iter()
            .map(|t| if t.bound > 0.0 { t.relative_error / t.bound } else { 0.0 })
            .fold(0.0, f64::max)
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Checks `‖δx̂‖/‖x̂‖ <= (κ / cos θ) ‖δC‖/‖Ĉ‖ (1 + 1e-8)` for each perturbation of `Ĉ`.
pub fn verify_error_bound(aug: &AugmentedSystem, perturbations: &[Vec<f64>]) -> Result<BoundReport> {
    let kappa = condition_number(&aug.a_hat)?;
    if !kappa.is_finite() {
        return Err(Error::Reconstruction("condition number is infinite".into()));
    }
    let c_norm = norm2(&aug.c_hat);
    if c_norm == 0.0 {
        return Err(Error::validation("c_hat", "bound is undefined for a zero right-hand side"));
    }
    let ls = LeastSquares::new(&aug.a_hat)?;
    let x = ls.solve(&aug.c_hat);
    let x_norm = norm2(&x);
    if x_norm == 0.0 {
        return Err(Error::Reconstruction("relative error undefined: x̂ = 0".into()));
    }
    let ax: Vec<f64> = (0..aug.rows())
        .map(|i| (0..aug.cols()).map(|j| aug.a_hat[(i, j)] * x[j]).sum())
        .collect();
    let cos_theta = norm2(&ax) / c_norm;
    let mut trials = Vec::with_capacity(perturbations.len());
    for (t, dc) in perturbations.iter().enumerate() {
        if dc.len() != aug.c_hat.len() {
            return Err(Error::validation(format!("perturbation[{t}]"), "length differs from Ĉ"));
        }
        let c2: Vec<f64> = aug.c_hat.iter().zip(dc).map(|(c, d)| c + d).collect();
        let x2 = ls.solve(&c2);
        let dx: Vec<f64> = x2.iter().zip(&x).map(|(a, b)| a - b).collect();
        let relative_error = norm2(&dx) / x_norm;
        let rel_c = norm2(dc) / c_norm;
        let bound = kappa / cos_theta * rel_c;
        trials.push(BoundTrial {
            relative_error,
            bound,
            relaxed_bound: kappa * rel_c,
            cos_theta,
            holds: relative_error <= bound * (1.0 + 1e-8),
        });
    }
    Ok(BoundReport { kappa, trials })
}
