//! Five-point finite-difference discretization of the steady conduction
//! problem on a node-centered `K x K` grid, and the forward solve.
//!
//! Nodes are numbered `row * K + col`, rows bottom to top, columns left to
//! right. Boundary nodes stay in the system as explicit rows, so the unknown
//! vector always has `m = K^2` entries:
//!
//! * interior: `k (4 t - t_w - t_e - t_s - t_n) = h^2 phi`
//! * Dirichlet: `t = T0`
//! * Neumann: `t_b - t_inner = 0`
//! * Robin: `k (t_b - t_inner) / h + h_conv (t_b - T0) = 0`
//!
//! giving `A1 T = h^2 B Y + C1` with `B` the 0/1 node-in-source indicator.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

use crate::domain::{BoundaryKind, DomainSpec, Edge, Point2};
use crate::error::{Error, Result};

/// Node-centered uniform grid covering the plate, boundary nodes included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    k: usize,
    h: f64,
}

impl Grid {
    pub fn new(k: usize, side: f64) -> Result<Self> {
        if k < 3 {
            return Err(Error::validation("K", format!("need at least 3 nodes per side, got {k}")));
        }
        if !(side.is_finite() && side > 0.0) {
            return Err(Error::validation("plate.lx", "must be finite and positive"));
        }
        Ok(Self {
            k,
            h: side / (k - 1) as f64,
        })
    }

    pub fn for_spec(spec: &DomainSpec, k: usize) -> Result<Self> {
        if (spec.lx - spec.ly).abs() > 1e-12 * spec.lx.max(spec.ly) {
            return Err(Error::validation("plate.ly", "the finite-difference grid needs a square plate (lx == ly)"));
        }
        Self::new(k, spec.lx)
    }

    /// Nodes per side.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Node spacing (m).
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn side(&self) -> f64 {
        self.h * (self.k - 1) as f64
    }

    /// Total node count `K^2`.
    pub fn len(&self) -> usize {
        self.k * self.k
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, row: usize, col: usize) -> Result<usize> {
        grid_index(row, col, self.k)
    }

    /// Inverse of [`grid_index`].
    pub fn row_col(&self, idx: usize) -> (usize, usize) {
        (idx / self.k, idx % self.k)
    }

    pub fn point(&self, idx: usize) -> Point2 {
        let (r, c) = self.row_col(idx);
        Point2::new(c as f64 * self.h, r as f64 * self.h)
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        let (r, c) = self.row_col(idx);
        r == 0 || c == 0 || r == self.k - 1 || c == self.k - 1
    }

    /// Edges a boundary node lies on (empty for interior nodes).
    pub fn edges_of(&self, idx: usize) -> Vec<Edge> {
        let (r, c) = self.row_col(idx);
        let last = self.k - 1;
        let mut edges = Vec::with_capacity(2);
        if r == 0 {
            edges.push(Edge::Bottom);
        }
        if r == last {
            edges.push(Edge::Top);
        }
        if c == 0 {
            edges.push(Edge::Left);
        }
        if c == last {
            edges.push(Edge::Right);
        }
        edges
    }

    /// Nearest node; exact ties go to the larger index.
    pub fn nearest_node(&self, p: &Point2) -> usize {
        let snap = |v: f64| -> usize {
            let s = (v / self.h + 0.5).floor();
            s.clamp(0.0, (self.k - 1) as f64) as usize
        };
        snap(p.y) * self.k + snap(p.x)
    }
}

/// Linear node index, rows bottom to top, 0-based.
pub fn grid_index(row: usize, col: usize, k: usize) -> Result<usize> {
    if row >= k || col >= k {
        return Err(Error::Index { row, col, k });
    }
    Ok(row * k + col)
}

/// Compressed sparse rows with sorted, unique column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseRows {
    fn from_rows(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows.iter().cloned() {
            row.sort_by_key(|e| e.0);
            for (c, v) in row {
                match cols.last() {
                    Some(&last) if cols.len() > *row_ptr.last().unwrap() && last == c => {
                        *vals.last_mut().unwrap() += v;
                    }
                    _ => {
                        cols.push(c);
                        vals.push(v);
                    }
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            nrows: rows.len(),
            ncols,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[span.clone()].iter().copied().zip(self.vals[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|e| e.0 == j).map_or(0.0, |e| e.1)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        let triplets: Vec<_> = (0..self.nrows)
            .flat_map(|i| self.row(i).map(move |(j, v)| Triplet::new(i, j, v)))
            .collect();
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &triplets)
            .map_err(|e| Error::Singular(format!("sparse assembly failed: {e:?}")))
    }
}

/// How each node's row of `A1` was built.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeRow {
    Interior,
    Dirichlet { t0: f64 },
    Neumann { inner: usize },
    Robin { inner: usize, h_conv: f64, t0: f64 },
}

/// Finite-difference operator `A1`, source indicator `B` and boundary data `C1`.
pub struct CoefficientSystem {
    pub grid: Grid,
    pub a1: SparseRows,
    pub c1: Vec<f64>,
    /// Source index per node, `None` outside every source (the rows of `B`).
    pub membership: Vec<Option<usize>>,
    pub n_sources: usize,
    pub conductivity: f64,
    pub rows: Vec<NodeRow>,
    lu: OnceLock<std::result::Result<faer::sparse::linalg::solvers::Lu<usize, f64>, String>>,
}

impl std::fmt::Debug for CoefficientSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoefficientSystem")
            .field("grid", &self.grid)
            .field("nnz", &self.a1.nnz())
            .field("n_sources", &self.n_sources)
            .finish()
    }
}

impl Clone for CoefficientSystem {
    fn clone(&self) -> Self {
        Self {
            grid: self.grid,
            a1: self.a1.clone(),
            c1: self.c1.clone(),
            membership: self.membership.clone(),
            n_sources: self.n_sources,
            conductivity: self.conductivity,
            rows: self.rows.clone(),
            lu: OnceLock::new(),
        }
    }
}

impl CoefficientSystem {
    /// `m = K^2`.
    pub fn m(&self) -> usize {
        self.grid.len()
    }

    /// Number of sources `n` (columns of `B`).
    pub fn n(&self) -> usize {
        self.n_sources
    }

    /// `B` as a sparse `m x n` matrix.
    pub fn b_matrix(&self) -> SparseRows {
        let rows = self
            .membership
            .iter()
            .map(|s| s.map(|j| vec![(j, 1.0)]).unwrap_or_default())
            .collect();
        SparseRows::from_rows(self.n_sources, rows)
    }

    /// Column sums of `B`: nodes inside each source.
    pub fn nodes_per_source(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_sources];
        for j in self.membership.iter().flatten() {
            counts[*j] += 1;
        }
        counts
    }

    /// `h^2 B Y + C1`.
    pub fn rhs(&self, intensities: &[f64]) -> Result<Vec<f64>> {
        if intensities.len() != self.n_sources {
            return Err(Error::validation(
                "intensities",
                format!("expected {} values, got {}", self.n_sources, intensities.len()),
            ));
        }
        let h2 = self.grid.h() * self.grid.h();
        Ok(self
            .c1
            .iter()
            .zip(&self.membership)
            .map(|(c, s)| c + s.map_or(0.0, |j| h2 * intensities[j]))
            .collect())
    }

    /// Right-hand side for an arbitrary source density evaluated at interior nodes.
    pub fn rhs_from_density(&self, density: impl Fn(Point2) -> f64) -> Vec<f64> {
        let h2 = self.grid.h() * self.grid.h();
        (0..self.m())
            .map(|i| match self.rows[i] {
                NodeRow::Interior => self.c1[i] + h2 * density(self.grid.point(i)),
                _ => self.c1[i],
            })
            .collect()
    }

    fn lu(&self) -> Result<&faer::sparse::linalg::solvers::Lu<usize, f64>> {
        let lu = self.lu.get_or_init(|| {
            self.a1
                .to_faer()
                .map_err(|e| e.to_string())
                .and_then(|a| a.sp_lu().map_err(|e| format!("{e:?}")))
        });
        lu.as_ref().map_err(|msg| Error::Solve {
            message: format!("LU factorization failed: {msg}"),
            residual: f64::NAN,
            condition: f64::INFINITY,
        })
    }

    /// Solves `A1 T = rhs` and checks the residual.
    pub fn solve_rhs(&self, rhs: &[f64]) -> Result<ScalarField> {
        let m = self.m();
        assert_eq!(rhs.len(), m);
        let lu = self.lu()?;
        let b = Mat::from_fn(m, 1, |i, _| rhs[i]);
        let x = lu.solve(&b);
        let values: Vec<f64> = (0..m).map(|i| x[(i, 0)]).collect();
        let ax = self.a1.mul_vec(&values);
        let residual = ax.iter().zip(rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = self.c1.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
        if !values.iter().all(|v| v.is_finite()) || residual > 1e-8 * scale {
            let norm_a = (0..m).map(|i| self.a1.row(i).map(|e| e.1.abs()).sum::<f64>()).fold(0.0, f64::max);
            let norm_x = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let norm_b = rhs.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
            return Err(Error::Solve {
                message: "forward system is singular or too ill-conditioned".into(),
                residual,
                condition: norm_a * norm_x / norm_b,
            });
        }
        Ok(ScalarField::new(self.grid, values))
    }
}

/// Builds `A1`, `B` and `C1` for `spec` on a `K x K` grid.
pub fn assemble(spec: &DomainSpec, k: usize) -> Result<CoefficientSystem> {
    spec.validate()?;
    let grid = Grid::for_spec(spec, k)?;
    let m = grid.len();
    let h = grid.h();
    let kc = spec.conductivity;

    let mut rows = Vec::with_capacity(m);
    let mut entries = Vec::with_capacity(m);
    let mut c1 = vec![0.0; m];
    let mut membership = vec![None; m];

    for idx in 0..m {
        let (r, c) = grid.row_col(idx);
        let p = grid.point(idx);
        let edges = grid.edges_of(idx);
        if edges.is_empty() {
            membership[idx] = spec.source_at(&p);
            rows.push(NodeRow::Interior);
            entries.push(vec![
                (idx, 4.0 * kc),
                (idx - 1, -kc),
                (idx + 1, -kc),
                (idx - k, -kc),
                (idx + k, -kc),
            ]);
            continue;
        }
        let (edge, kind) = spec.corner_condition(&edges, &p);
        let inner = match edge {
            Edge::Bottom => (r + 1) * k + c,
            Edge::Top => (r - 1) * k + c,
            Edge::Left => r * k + c + 1,
            Edge::Right => r * k + c - 1,
        };
        match kind {
            BoundaryKind::Dirichlet { t0 } => {
                rows.push(NodeRow::Dirichlet { t0 });
                entries.push(vec![(idx, 1.0)]);
                c1[idx] = t0;
            }
            BoundaryKind::Neumann => {
                rows.push(NodeRow::Neumann { inner });
                entries.push(vec![(idx, 1.0), (inner, -1.0)]);
            }
            BoundaryKind::Robin { h_conv, t0 } => {
                rows.push(NodeRow::Robin { inner, h_conv, t0 });
                entries.push(vec![(idx, kc / h + h_conv), (inner, -kc / h)]);
                c1[idx] = h_conv * t0;
            }
        }
    }

    Ok(CoefficientSystem {
        grid,
        a1: SparseRows::from_rows(m, entries),
        c1,
        membership,
        n_sources: spec.sources.len(),
        conductivity: kc,
        rows,
        lu: OnceLock::new(),
    })
}

/// Solves `A1 T = h^2 B Y + C1` for the given source intensities (W/m²).
pub fn solve_forward(sys: &CoefficientSystem, intensities: &[f64]) -> Result<ScalarField> {
    let rhs = sys.rhs(intensities)?;
    sys.solve_rhs(&rhs)
}

/// Temperatures (K) at every grid node, indexed like [`grid_index`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), grid.len(), "field length must be K^2");
        Self { grid, values }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(Point2) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.point(i))).collect();
        Self { grid, values }
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.grid.k() + col]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Bilinear interpolation; `p` is clamped into the plate.
    pub fn sample(&self, p: &Point2) -> f64 {
        let k = self.grid.k();
        let h = self.grid.h();
        let last = (k - 1) as f64;
        let fx = (p.x / h).clamp(0.0, last);
        let fy = (p.y / h).clamp(0.0, last);
        let c0 = (fx.floor() as usize).min(k - 2);
        let r0 = (fy.floor() as usize).min(k - 2);
        let tx = fx - c0 as f64;
        let ty = fy - r0 as f64;
        let v00 = self.at(r0, c0);
        let v01 = self.at(r0, c0 + 1);
        let v10 = self.at(r0 + 1, c0);
        let v11 = self.at(r0 + 1, c0 + 1);
        (1.0 - ty) * ((1.0 - tx) * v00 + tx * v01) + ty * ((1.0 - tx) * v10 + tx * v11)
    }

    /// Text export: header `K=<K> h=<h>`, then one comma-separated row per grid
    /// row, bottom row first. Values use the shortest round-trip representation.
    pub fn to_text(&self) -> String {
        let k = self.grid.k();
        let mut out = String::with_capacity(self.values.len() * 20);
        let _ = writeln!(out, "K={} h={}", k, self.grid.h());
        for r in 0..k {
            for c in 0..k {
                if c > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{}", self.at(r, c));
            }
            out.push('\n');
        }
        out
    }

    /// Inverse of [`ScalarField::to_text`]; lines starting with `#` are skipped.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim_start().starts_with('#') && !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::parse("field", "empty file"))?;
        let mut k = None;
        let mut h = None;
        for tok in header.split_whitespace() {
            if let Some(v) = tok.strip_prefix("K=") {
                k = Some(v.parse::<usize>().map_err(|e| Error::parse("field header K", e.to_string()))?);
            } else if let Some(v) = tok.strip_prefix("h=") {
                h = Some(v.parse::<f64>().map_err(|e| Error::parse("field header h", e.to_string()))?);
            }
        }
        let k = k.ok_or_else(|| Error::parse("field header", "missing K="))?;
        let h = h.ok_or_else(|| Error::parse("field header", "missing h="))?;
        // Validate through the constructor but keep the stored spacing bit-exact.
        Grid::new(k, h * (k - 1) as f64)?;
        let grid = Grid { k, h };
        let mut values = Vec::with_capacity(k * k);
        for (r, line) in lines.enumerate() {
            let before = values.len();
            for tok in line.split(',') {
                let v = tok
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::parse(format!("field row {r}"), e.to_string()))?;
                values.push(v);
            }
            if values.len() - before != k {
                return Err(Error::parse(format!("field row {r}"), format!("expected {k} values")));
            }
        }
        if values.len() != k * k {
            return Err(Error::parse("field", format!("expected {k} rows, got {}", values.len() / k.max(1))));
        }
        Ok(Self { grid, values })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
