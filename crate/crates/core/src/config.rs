//! TOML layout files.
//!
//! ```toml
//! preset = "case1"            # optional: case1 | case2 | case3
//!
//! [plate]                     # optional when a preset is given
//! lx = 0.1
//! ly = 0.1
//! conductivity = 1.0
//!
//! [[boundary]]                # overrides the preset, edge by edge
//! edge = "bottom"             # bottom | right | top | left
//! kind = "dirichlet"          # dirichlet | neumann | robin
//! t0 = 298.0                  # dirichlet, robin
//! h_conv = 10.0               # robin
//! from = 0.045                # optional segment along the edge
//! to = 0.055
//!
//! [[source]]
//! center = [0.03, 0.07]
//! size = [0.02, 0.02]         # width, height
//! rated = 30000.0
//! true = 33000.0              # defaults to `rated`
//! ```
//!
//! A `[[boundary]]` entry without `from`/`to` replaces the edge default;
//! entries with both add a segment that overrides the default on `[from, to]`.

use std::path::Path;

use serde::Deserialize;

use crate::domain::{
    case_preset, BoundaryKind, Case, DomainSpec, Edge, EdgeSegment, EdgeSpec, HeatSource, Point2, PRESET_SIDE,
};
use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    preset: Option<String>,
    plate: Option<PlateSection>,
    #[serde(default)]
    boundary: Vec<BoundaryEntry>,
    #[serde(default)]
    source: Vec<SourceEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlateSection {
    lx: f64,
    ly: f64,
    #[serde(default = "unit")]
    conductivity: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundaryEntry {
    edge: Edge,
    kind: String,
    t0: Option<f64>,
    h_conv: Option<f64>,
    from: Option<f64>,
    to: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SourceEntry {
    center: [f64; 2],
    size: [f64; 2],
    rated: f64,
    #[serde(rename = "true")]
    true_intensity: Option<f64>,
}

/// Parses a layout file from text. `origin` labels error messages.
pub fn parse_spec(text: &str, origin: &str) -> Result<DomainSpec> {
    let file: SpecFile = toml::from_str(text).map_err(|e| Error::parse(origin, e.to_string()))?;

    let sources: Vec<HeatSource> = file
        .source
        .iter()
        .map(|s| HeatSource {
            center: Point2::new(s.center[0], s.center[1]),
            width: s.size[0],
            height: s.size[1],
            rated_intensity: s.rated,
            true_intensity: s.true_intensity.unwrap_or(s.rated),
        })
        .collect();

    let (lx, ly, k, mut edges): (f64, f64, f64, [Option<EdgeSpec>; 4]) = match &file.preset {
        Some(name) => {
            let case: Case = name.parse()?;
            // Build the preset without sources so plate overrides are validated as a whole below.
            let base = case_preset(case, Vec::new())?;
            let [a, b, c, d] = base.edges;
            let (lx, ly, k) = match &file.plate {
                Some(p) => (p.lx, p.ly, p.conductivity),
                None => (PRESET_SIDE, PRESET_SIDE, 1.0),
            };
            (lx, ly, k, [Some(a), Some(b), Some(c), Some(d)])
        }
        None => {
            let p = file
                .plate
                .as_ref()
                .ok_or_else(|| Error::validation("plate", "required when no preset is given"))?;
            (p.lx, p.ly, p.conductivity, [None, None, None, None])
        }
    };

    for (i, b) in file.boundary.iter().enumerate() {
        let key = |f: &str| format!("boundary[{i}].{f}");
        let kind = match b.kind.to_ascii_lowercase().as_str() {
            "dirichlet" => BoundaryKind::Dirichlet {
                t0: b.t0.ok_or_else(|| Error::validation(key("t0"), "required for dirichlet"))?,
            },
            "neumann" => BoundaryKind::Neumann,
            "robin" => BoundaryKind::Robin {
                t0: b.t0.ok_or_else(|| Error::validation(key("t0"), "required for robin"))?,
                h_conv: b.h_conv.ok_or_else(|| Error::validation(key("h_conv"), "required for robin"))?,
            },
            other => return Err(Error::validation(key("kind"), format!("unknown kind `{other}`"))),
        };
        let slot = &mut edges[b.edge.index()];
        match (b.from, b.to) {
            (None, None) => match slot {
                Some(spec) => spec.default = kind,
                None => *slot = Some(EdgeSpec::uniform(kind)),
            },
            (Some(from), Some(to)) => {
                let spec = slot.as_mut().ok_or_else(|| {
                    Error::validation(key("from"), format!("edge `{}` has no default condition yet", b.edge.name()))
                })?;
                spec.segments.push(EdgeSegment { from, to, kind });
            }
            (Some(_), None) => return Err(Error::validation(key("to"), "segment needs both `from` and `to`")),
            (None, Some(_)) => return Err(Error::validation(key("from"), "segment needs both `from` and `to`")),
        }
    }

    let mut resolved = Vec::with_capacity(4);
    for e in Edge::ALL {
        resolved.push(edges[e.index()].take().ok_or_else(|| {
            Error::validation(format!("boundary.{}", e.name()), "no condition given for this edge")
        })?);
    }
    let edges: [EdgeSpec; 4] = resolved.try_into().expect("four edges");
    DomainSpec::new(lx, ly, k, sources, edges)
}

pub fn load_spec(path: &Path) -> Result<DomainSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_spec(&text, &path.display().to_string())
}

/// Serializes a spec back to the layout format (explicit boundaries, no preset).
pub fn spec_to_toml(spec: &DomainSpec) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let _ = writeln!(out, "[plate]\nlx = {:?}\nly = {:?}\nconductivity = {:?}\n", spec.lx, spec.ly, spec.conductivity);
    let kind_fields = |kind: &BoundaryKind| match *kind {
        BoundaryKind::Dirichlet { t0 } => format!("kind = \"dirichlet\"\nt0 = {t0:?}\n"),
        BoundaryKind::Neumann => "kind = \"neumann\"\n".to_string(),
        BoundaryKind::Robin { h_conv, t0 } => format!("kind = \"robin\"\nt0 = {t0:?}\nh_conv = {h_conv:?}\n"),
    };
    for e in Edge::ALL {
        let es = spec.edge(e);
        let _ = writeln!(out, "[[boundary]]\nedge = \"{}\"\n{}", e.name(), kind_fields(&es.default));
        for seg in &es.segments {
            let _ = writeln!(
                out,
                "[[boundary]]\nedge = \"{}\"\n{}from = {:?}\nto = {:?}\n",
                e.name(),
                kind_fields(&seg.kind),
                seg.from,
                seg.to
            );
        }
    }
    for s in &spec.sources {
        let _ = writeln!(
            out,
            "[[source]]\ncenter = [{:?}, {:?}]\nsize = [{:?}, {:?}]\nrated = {:?}\ntrue = {:?}\n",
            s.center.x, s.center.y, s.width, s.height, s.rated_intensity, s.true_intensity
        );
    }
    out
}
