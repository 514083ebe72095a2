//! Observation position samplers: Latin hypercube, Halton low-discrepancy and
//! grid-based, plus a randomized star-discrepancy lower bound.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Open01;
use serde::{Deserialize, Serialize};

use crate::domain::{DomainSpec, Point2};
use crate::error::{Error, Result};

/// Points closer than this are considered duplicates.
pub const MIN_SEPARATION: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Lhs,
    Lds,
    Gs,
    Manual,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::Lhs => "lhs",
            Provenance::Lds => "lds",
            Provenance::Gs => "gs",
            Provenance::Manual => "manual",
        }
    }
}

impl std::str::FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lhs" => Ok(Provenance::Lhs),
            "lds" => Ok(Provenance::Lds),
            "gs" => Ok(Provenance::Gs),
            "manual" => Ok(Provenance::Manual),
            other => Err(Error::validation("sampler", format!("unknown sampler `{other}` (lhs | lds | gs | manual)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionSet {
    points: Vec<Point2>,
    pub provenance: Provenance,
    pub seed: Option<u64>,
}

impl PositionSet {
    /// Checks that every point lies in the domain and that no two points
    /// coincide.
    pub fn new(points: Vec<Point2>, spec: &DomainSpec, provenance: Provenance, seed: Option<u64>) -> Result<Self> {
        for p in &points {
            spec.check_inside(p)?;
        }
        if let Some((i, j)) = find_close_pair(&points) {
            return Err(Error::validation(
                format!("points[{j}]"),
                format!("coincides with points[{i}] at ({}, {})", points[i].x, points[i].y),
            ));
        }
        Ok(Self {
            points,
            provenance,
            seed,
        })
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// CSV with header `x_m,y_m`, 9 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x_m,y_m\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{}", sig9(p.x), sig9(p.y));
        }
        out
    }

    /// Parses [`PositionSet::to_csv`] output. Lines starting with `#` are skipped.
    pub fn from_csv(text: &str, spec: &DomainSpec, origin: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        match lines.next() {
            Some("x_m,y_m") => {}
            other => return Err(Error::parse(origin, format!("expected header `x_m,y_m`, found {other:?}"))),
        }
        let mut points = Vec::new();
        for (i, line) in lines.enumerate() {
            let mut cols = line.split(',');
            let mut next = |name: &str| -> Result<f64> {
                let raw = cols.next().ok_or_else(|| Error::parse(origin, format!("row {}: missing {name}", i + 1)))?;
                raw.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::parse(origin, format!("row {}: {name}: {e}", i + 1)))
            };
            let x = next("x_m")?;
            let y = next("y_m")?;
            if cols.next().is_some() {
                return Err(Error::parse(origin, format!("row {}: expected two columns", i + 1)));
            }
            points.push(Point2::new(x, y));
        }
        Self::new(points, spec, Provenance::Manual, None)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path, spec: &DomainSpec) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, spec, &path.display().to_string())
    }
}

/// Decimal with 9 significant digits.
fn sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    let decimals = (8 - exp).max(0) as usize;
    format!("{v:.decimals$}")
}

/// First pair `(i, j)`, `i < j`, closer than [`MIN_SEPARATION`]. Sorting by
/// `x` keeps this near-linear for well-spread sets.
fn find_close_pair(points: &[Point2]) -> Option<(usize, usize)> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].x.total_cmp(&points[b].x));
    for (k, &a) in order.iter().enumerate() {
        for &b in &order[k + 1..] {
            if points[b].x - points[a].x >= MIN_SEPARATION {
                break;
            }
            if points[a].distance(&points[b]) < MIN_SEPARATION {
                return Some((a.min(b), a.max(b)));
            }
        }
    }
    None
}

/// Latin hypercube points in `[0, 1)²`, strictly inside their strata.
pub fn lhs_unit(n: usize, rng: &mut impl Rng) -> Vec<(f64, f64)> {
    let mut px: Vec<usize> = (0..n).collect();
    let mut py: Vec<usize> = (0..n).collect();
    px.shuffle(rng);
    py.shuffle(rng);
    (0..n)
        .map(|i| {
            let ux: f64 = rng.sample(Open01);
            let uy: f64 = rng.sample(Open01);
            ((px[i] as f64 + ux) / n as f64, (py[i] as f64 + uy) / n as f64)
        })
        .collect()
}

/// Latin hypercube sample: each of the `n` equal strata per axis holds
/// exactly one point, located uniformly within its stratum.
pub fn lhs_sample(n: usize, spec: &DomainSpec, seed: u64) -> Result<PositionSet> {
    if n == 0 {
        return Err(Error::validation("n", "need at least one point"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = lhs_unit(n, &mut rng)
        .into_iter()
        .map(|(u, v)| Point2::new(u * spec.lx, v * spec.ly))
        .collect();
    PositionSet::new(points, spec, Provenance::Lhs, Some(seed))
}

/// Radical inverse of `index` in `base`.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while index > 0 {
        r += f * (index % base) as f64;
        index /= base;
        f *= inv;
    }
    r
}

/// Halton points (bases 2, 3) with indices `start, start + 1, ...`, `start >= 1`.
pub fn halton(start: u64, n: usize) -> Vec<(f64, f64)> {
    (0..n as u64)
        .map(|i| (radical_inverse(start + i, 2), radical_inverse(start + i, 3)))
        .collect()
}

/// First `n` Halton points (bases 2 and 3, starting at index 1) scaled to the plate.
pub fn lds_sample(n: usize, spec: &DomainSpec) -> Result<PositionSet> {
    lds_sample_from(n, spec, 1)
}

/// `n` consecutive Halton points starting at index `start` (`>= 1`). Used to
/// draw several disjoint low-discrepancy candidates from one sequence.
pub fn lds_sample_from(n: usize, spec: &DomainSpec, start: u64) -> Result<PositionSet> {
    if n == 0 {
        return Err(Error::validation("n", "need at least one point"));
    }
    if start == 0 {
        return Err(Error::validation("start", "Halton index 0 maps to the corner; start at 1"));
    }
    let points = halton(start, n)
        .into_iter()
        .map(|(u, v)| Point2::new(u * spec.lx, v * spec.ly))
        .collect();
    PositionSet::new(points, spec, Provenance::Lds, None)
}

/// Cell of an `n_cells x n_cells` partition holding `p`. Points on an interior
/// gridline belong to the cell above/right of it.
fn cell_of(p: &Point2, spec: &DomainSpec, n_cells: usize) -> (usize, usize) {
    let idx = |v: f64, side: f64| ((v / side * n_cells as f64).floor() as usize).min(n_cells - 1);
    (idx(p.x, spec.lx), idx(p.y, spec.ly))
}

/// Centers of the cells not occupied by any of `occupied`, row-major from the bottom.
fn empty_cell_centers(spec: &DomainSpec, occupied: &HashSet<(usize, usize)>, n_cells: usize) -> Vec<Point2> {
    let (wx, wy) = (spec.lx / n_cells as f64, spec.ly / n_cells as f64);
    let mut out = Vec::new();
    for row in 0..n_cells {
        for col in 0..n_cells {
            if !occupied.contains(&(col, row)) {
                out.push(Point2::new((col as f64 + 0.5) * wx, (row as f64 + 0.5) * wy));
            }
        }
    }
    out
}

fn check_predefined(predefined: &[Point2]) -> Result<()> {
    if let Some((i, j)) = find_close_pair(predefined) {
        return Err(Error::validation(format!("predefined[{j}]"), format!("duplicates predefined[{i}]")));
    }
    Ok(())
}

/// Source centers, the default predefined positions for grid sampling.
pub fn source_centers(spec: &DomainSpec) -> Vec<Point2> {
    spec.sources.iter().map(|s| s.center).collect()
}

/// Grid-based sample: the predefined points plus the center of every cell of
/// an `n_cells x n_cells` partition that holds no predefined point.
pub fn grid_sample(spec: &DomainSpec, predefined: &[Point2], n_cells: usize) -> Result<PositionSet> {
    if n_cells == 0 {
        return Err(Error::validation("N", "need at least one cell per side"));
    }
    check_predefined(predefined)?;
    for p in predefined {
        spec.check_inside(p)?;
    }
    let occupied: HashSet<_> = predefined.iter().map(|p| cell_of(p, spec, n_cells)).collect();
    let mut points = predefined.to_vec();
    points.extend(empty_cell_centers(spec, &occupied, n_cells));
    PositionSet::new(points, spec, Provenance::Gs, None)
}

/// Grid-based sample with exactly `n` points: the finest partition whose
/// output fits in `n`, topped up with uniformly drawn positions (standing in
/// for engineer-placed sensors). Different seeds give different top-ups.
pub fn grid_sample_exact(spec: &DomainSpec, predefined: &[Point2], n: usize, seed: u64) -> Result<PositionSet> {
    check_predefined(predefined)?;
    if n < predefined.len() {
        return Err(Error::validation(
            "n",
            format!("{n} points requested but {} are predefined", predefined.len()),
        ));
    }
    let mut best = None;
    for n_cells in 1..=n.max(1) {
        let gs = grid_sample(spec, predefined, n_cells)?;
        if gs.len() <= n {
            best = Some(gs);
        } else if n_cells * n_cells > n + predefined.len() {
            break;
        }
    }
    let mut points = best.map(|g| g.points).unwrap_or_else(|| predefined.to_vec());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while points.len() < n {
        let u: f64 = rng.sample(Open01);
        let v: f64 = rng.sample(Open01);
        let p = Point2::new(u * spec.lx, v * spec.ly);
        if points.iter().all(|q| q.distance(&p) >= MIN_SEPARATION) {
            points.push(p);
        }
    }
    PositionSet::new(points, spec, Provenance::Gs, Some(seed))
}

/// How many candidates of each sampler to draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolCounts {
    pub lhs: usize,
    pub lds: usize,
    pub gs: usize,
}

/// Candidate position sets of `n_obs` points each: LHS draws, consecutive
/// disjoint Halton blocks, and grid samples seeded around the source centers.
/// Per-candidate seeds come from one stream seeded by `seed`.
pub fn candidate_pool(spec: &DomainSpec, n_obs: usize, counts: PoolCounts, seed: u64) -> Result<Vec<PositionSet>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(counts.lhs + counts.lds + counts.gs);
    for _ in 0..counts.lhs {
        out.push(lhs_sample(n_obs, spec, rng.random())?);
    }
    for i in 0..counts.lds {
        out.push(lds_sample_from(n_obs, spec, 1 + (i * n_obs) as u64)?);
    }
    let centers = source_centers(spec);
    for _ in 0..counts.gs {
        out.push(grid_sample_exact(spec, &centers, n_obs, rng.random())?);
    }
    Ok(out)
}

/// Lower bound on the star discrepancy of `ps` in unit-square coordinates.
///
/// Takes the largest `|count(B)/n - vol(B)|` over origin-anchored boxes whose
/// upper corner combines sample coordinates (both open and closed boxes, so
/// the one-sided limits are covered) and over `trials` random anchored boxes.
/// Cost is `O(n^3 + trials n)`.
pub fn discrepancy_estimate(ps: &PositionSet, spec: &DomainSpec, trials: usize, seed: u64) -> Result<f64> {
    if ps.is_empty() {
        return Err(Error::validation("positions", "discrepancy of an empty set is undefined"));
    }
    if trials == 0 {
        return Err(Error::validation("trials", "need at least one trial"));
    }
    let pts: Vec<(f64, f64)> = ps.points().iter().map(|p| (p.x / spec.lx, p.y / spec.ly)).collect();
    let n = pts.len() as f64;
    let mut xs: Vec<f64> = pts.iter().map(|p| p.0).chain([1.0]).collect();
    let mut ys: Vec<f64> = pts.iter().map(|p| p.1).chain([1.0]).collect();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    xs.dedup();
    ys.dedup();

    let mut worst = 0.0f64;
    for &a in &xs {
        for &b in &ys {
            let (mut open, mut closed) = (0usize, 0usize);
            for &(x, y) in &pts {
                open += usize::from(x < a && y < b);
                closed += usize::from(x <= a && y <= b);
            }
            let vol = a * b;
            worst = worst.max((open as f64 / n - vol).abs()).max((closed as f64 / n - vol).abs());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let a: f64 = rng.random();
        let b: f64 = rng.random();
        let count = pts.iter().filter(|&&(x, y)| x < a && y < b).count();
        worst = worst.max((count as f64 / n - a * b).abs());
    }
    Ok(worst.clamp(0.0, 1.0))
}
