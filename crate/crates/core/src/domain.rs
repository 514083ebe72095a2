//! Plate geometry, boundary conditions and heat-source layouts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Side length of the square plate used by the three presets, in meters.
pub const PRESET_SIDE: f64 = 0.1;
/// Isothermal temperature used by the presets, in Kelvin.
pub const AMBIENT_K: f64 = 298.0;
/// Width of the heat-sink patch of [`Case::Case3`], in meters.
pub const SINK_WIDTH: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// A rectangular component with a uniform intensity (W/m²).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatSource {
    pub center: Point2,
    pub width: f64,
    pub height: f64,
    /// Nominal intensity, known to the inversion.
    pub rated_intensity: f64,
    /// Actual intensity used to generate ground truth.
    pub true_intensity: f64,
}

impl HeatSource {
    pub fn x_min(&self) -> f64 {
        self.center.x - 0.5 * self.width
    }
    pub fn x_max(&self) -> f64 {
        self.center.x + 0.5 * self.width
    }
    pub fn y_min(&self) -> f64 {
        self.center.y - 0.5 * self.height
    }
    pub fn y_max(&self) -> f64 {
        self.center.y + 0.5 * self.height
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    /// Closed-rectangle membership: points on the edge count as inside.
    pub fn contains(&self, p: &Point2) -> bool {
        p.x >= self.x_min() && p.x <= self.x_max() && p.y >= self.y_min() && p.y <= self.y_max()
    }

    fn overlaps(&self, other: &HeatSource) -> bool {
        self.x_min() <= other.x_max()
            && other.x_min() <= self.x_max()
            && self.y_min() <= other.y_max()
            && other.y_min() <= self.y_max()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BoundaryKind {
    /// Fixed temperature `t0` (K).
    Dirichlet { t0: f64 },
    /// Zero normal flux.
    Neumann,
    /// Convective exchange `k dT/dn + h_conv (T - t0) = 0` with outward normal `n`.
    Robin { h_conv: f64, t0: f64 },
}

impl BoundaryKind {
    /// Dirichlet beats Robin beats Neumann when two edges meet at a corner.
    fn priority(&self) -> u8 {
        match self {
            BoundaryKind::Dirichlet { .. } => 2,
            BoundaryKind::Robin { .. } => 1,
            BoundaryKind::Neumann => 0,
        }
    }

    pub fn fixes_temperature(&self) -> bool {
        !matches!(self, BoundaryKind::Neumann)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Edge {
    Bottom,
    Right,
    Top,
    Left,
}

impl Edge {
    pub const ALL: [Edge; 4] = [Edge::Bottom, Edge::Right, Edge::Top, Edge::Left];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Outward unit normal.
    pub fn outward_normal(self) -> (f64, f64) {
        match self {
            Edge::Bottom => (0.0, -1.0),
            Edge::Right => (1.0, 0.0),
            Edge::Top => (0.0, 1.0),
            Edge::Left => (-1.0, 0.0),
        }
    }

    pub fn is_horizontal(self) -> bool {
        matches!(self, Edge::Bottom | Edge::Top)
    }

    pub fn name(self) -> &'static str {
        match self {
            Edge::Bottom => "bottom",
            Edge::Right => "right",
            Edge::Top => "top",
            Edge::Left => "left",
        }
    }
}

/// A condition applied on `[from, to]` along an edge; the coordinate is `x`
/// for horizontal edges and `y` for vertical ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeSegment {
    pub from: f64,
    pub to: f64,
    pub kind: BoundaryKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub default: BoundaryKind,
    /// Later segments take precedence over earlier ones and over `default`.
    pub segments: Vec<EdgeSegment>,
}

impl EdgeSpec {
    pub fn uniform(kind: BoundaryKind) -> Self {
        Self {
            default: kind,
            segments: Vec::new(),
        }
    }

    pub fn kind_at(&self, s: f64) -> BoundaryKind {
        self.segments
            .iter()
            .rev()
            .find(|seg| s >= seg.from && s <= seg.to)
            .map(|seg| seg.kind)
            .unwrap_or(self.default)
    }

    fn kinds(&self) -> impl Iterator<Item = &BoundaryKind> {
        std::iter::once(&self.default).chain(self.segments.iter().map(|s| &s.kind))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Case {
    /// All four edges isothermal.
    Case1,
    /// Bottom edge isothermal, others adiabatic.
    Case2,
    /// Adiabatic everywhere except a centered heat-sink patch on the bottom edge.
    Case3,
}

impl Case {
    pub const ALL: [Case; 3] = [Case::Case1, Case::Case2, Case::Case3];
}

impl std::str::FromStr for Case {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "case1" | "1" => Ok(Case::Case1),
            "case2" | "2" => Ok(Case::Case2),
            "case3" | "3" => Ok(Case::Case3),
            other => Err(Error::validation("preset", format!("unknown case `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub lx: f64,
    pub ly: f64,
    pub conductivity: f64,
    pub sources: Vec<HeatSource>,
    /// Indexed by [`Edge::index`].
    pub edges: [EdgeSpec; 4],
}

impl DomainSpec {
    /// Builds and validates a spec.
    pub fn new(
        lx: f64,
        ly: f64,
        conductivity: f64,
        sources: Vec<HeatSource>,
        edges: [EdgeSpec; 4],
    ) -> Result<Self> {
        let spec = Self {
            lx,
            ly,
            conductivity,
            sources,
            edges,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lx.is_finite() && self.lx > 0.0) {
            return Err(Error::validation("plate.lx", "must be finite and positive"));
        }
        if !(self.ly.is_finite() && self.ly > 0.0) {
            return Err(Error::validation("plate.ly", "must be finite and positive"));
        }
        if !(self.conductivity.is_finite() && self.conductivity > 0.0) {
            return Err(Error::validation("plate.conductivity", "must be finite and positive"));
        }
        for (i, s) in self.sources.iter().enumerate() {
            let key = |f: &str| format!("source[{i}].{f}");
            if !(s.width.is_finite() && s.width > 0.0) {
                return Err(Error::validation(key("size"), "width must be positive"));
            }
            if !(s.height.is_finite() && s.height > 0.0) {
                return Err(Error::validation(key("size"), "height must be positive"));
            }
            if !(s.rated_intensity.is_finite() && s.rated_intensity >= 0.0) {
                return Err(Error::validation(key("rated"), "must be finite and non-negative"));
            }
            if !(s.true_intensity.is_finite() && s.true_intensity >= 0.0) {
                return Err(Error::validation(key("true"), "must be finite and non-negative"));
            }
            // Strictly inside, so boundary nodes never carry a source term.
            if !(s.x_min() > 0.0 && s.x_max() < self.lx && s.y_min() > 0.0 && s.y_max() < self.ly) {
                return Err(Error::validation(
                    key("center"),
                    "rectangle must lie strictly inside the plate",
                ));
            }
            for (j, other) in self.sources.iter().enumerate().take(i) {
                if s.overlaps(other) {
                    return Err(Error::validation(key("center"), format!("overlaps source[{j}]")));
                }
            }
        }
        let mut anchored = false;
        for edge in Edge::ALL {
            let spec = &self.edges[edge.index()];
            let len = if edge.is_horizontal() { self.lx } else { self.ly };
            for (si, seg) in spec.segments.iter().enumerate() {
                if !(seg.from.is_finite() && seg.to.is_finite() && seg.from >= 0.0 && seg.to <= len && seg.from <= seg.to) {
                    return Err(Error::validation(
                        format!("boundary.{}.segment[{si}]", edge.name()),
                        format!("endpoints must satisfy 0 <= from <= to <= {len}"),
                    ));
                }
            }
            for kind in spec.kinds() {
                match *kind {
                    BoundaryKind::Dirichlet { t0 } if !t0.is_finite() => {
                        return Err(Error::validation(format!("boundary.{}.t0", edge.name()), "must be finite"))
                    }
                    BoundaryKind::Robin { h_conv, t0 } if !(t0.is_finite() && h_conv.is_finite() && h_conv > 0.0) => {
                        return Err(Error::validation(
                            format!("boundary.{}.h_conv", edge.name()),
                            "Robin needs finite t0 and positive h_conv",
                        ))
                    }
                    _ => {}
                }
                anchored |= kind.fixes_temperature();
            }
        }
        if !anchored {
            return Err(Error::Singular(
                "no Dirichlet or Robin boundary: the steady problem has no unique solution".into(),
            ));
        }
        Ok(())
    }

    pub fn contains(&self, p: &Point2) -> bool {
        p.x >= 0.0 && p.x <= self.lx && p.y >= 0.0 && p.y <= self.ly
    }

    pub fn check_inside(&self, p: &Point2) -> Result<()> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(Error::DomainViolation {
                x: p.x,
                y: p.y,
                lx: self.lx,
                ly: self.ly,
            })
        }
    }

    /// Index of the source whose closed rectangle contains `p`.
    pub fn source_at(&self, p: &Point2) -> Option<usize> {
        self.sources.iter().position(|s| s.contains(p))
    }

    /// True intensity at `p` (W/m²).
    pub fn intensity_at(&self, p: &Point2) -> Result<f64> {
        self.check_inside(p)?;
        Ok(self.source_at(p).map_or(0.0, |i| self.sources[i].true_intensity))
    }

    pub fn rated_intensities(&self) -> Vec<f64> {
        self.sources.iter().map(|s| s.rated_intensity).collect()
    }

    pub fn true_intensities(&self) -> Vec<f64> {
        self.sources.iter().map(|s| s.true_intensity).collect()
    }

    pub fn edge(&self, edge: Edge) -> &EdgeSpec {
        &self.edges[edge.index()]
    }

    /// Boundary condition at a point of `edge` with along-edge coordinate `s`.
    pub fn boundary_at(&self, edge: Edge, s: f64) -> BoundaryKind {
        self.edge(edge).kind_at(s)
    }

    /// Condition governing a boundary point that may sit on a corner.
    /// Returns the edge whose inward normal is used for flux conditions.
    pub fn corner_condition(&self, edges: &[Edge], p: &Point2) -> (Edge, BoundaryKind) {
        let mut best: Option<(Edge, BoundaryKind)> = None;
        for &e in edges {
            let s = if e.is_horizontal() { p.x } else { p.y };
            let kind = self.boundary_at(e, s);
            best = match best {
                None => Some((e, kind)),
                Some((be, bk)) => {
                    if kind.priority() > bk.priority() || (kind.priority() == bk.priority() && e.is_horizontal() && !be.is_horizontal()) {
                        Some((e, kind))
                    } else {
                        Some((be, bk))
                    }
                }
            };
        }
        best.expect("at least one edge")
    }

    pub fn with_sources(&self, sources: Vec<HeatSource>) -> Result<Self> {
        Self::new(self.lx, self.ly, self.conductivity, sources, self.edges.clone())
    }
}

/// Builds one of the three reference configurations on a 0.1 m square plate
/// with unit conductivity.
pub fn case_preset(case: Case, layout: Vec<HeatSource>) -> Result<DomainSpec> {
    let iso = BoundaryKind::Dirichlet { t0: AMBIENT_K };
    let edges = match case {
        Case::Case1 => [
            EdgeSpec::uniform(iso),
            EdgeSpec::uniform(iso),
            EdgeSpec::uniform(iso),
            EdgeSpec::uniform(iso),
        ],
        Case::Case2 => [
            EdgeSpec::uniform(iso),
            EdgeSpec::uniform(BoundaryKind::Neumann),
            EdgeSpec::uniform(BoundaryKind::Neumann),
            EdgeSpec::uniform(BoundaryKind::Neumann),
        ],
        Case::Case3 => {
            let mid = 0.5 * PRESET_SIDE;
            let bottom = EdgeSpec {
                default: BoundaryKind::Neumann,
                segments: vec![EdgeSegment {
                    from: mid - 0.5 * SINK_WIDTH,
                    to: mid + 0.5 * SINK_WIDTH,
                    kind: iso,
                }],
            };
            [
                bottom,
                EdgeSpec::uniform(BoundaryKind::Neumann),
                EdgeSpec::uniform(BoundaryKind::Neumann),
                EdgeSpec::uniform(BoundaryKind::Neumann),
            ]
        }
    };
    DomainSpec::new(PRESET_SIDE, PRESET_SIDE, 1.0, layout, edges)
}
