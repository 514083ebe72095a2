use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use tfi_core::config::load_spec;
use tfi_core::diffnet::{Checkpoint, NetParams};
use tfi_core::evaluation::{add_noise, metrics, metrics_csv, MetricReport, METRICS_HEADER};
use tfi_core::inversion::{invert, pretrain, surrogate_field, TrainConfig};
use tfi_core::placement::{ranking_csv, select_positions, PlacementCandidate, RankRow};
use tfi_core::sampling::{candidate_pool, PoolCounts, PositionSet, Provenance};
use tfi_core::{assemble, solve_forward, DomainSpec, ScalarField};

use crate::manifest::{digest_hex, guard, read_untagged, strip_tag, substream, tag_of, Manifest, Outputs};

fn load(spec: &Path) -> Result<DomainSpec> {
    Ok(load_spec(spec)?)
}

fn write_tagged(path: &Path, manifest: &Manifest, contents: &str) -> Result<()> {
    let hash = manifest.hash();
    guard(path, &hash)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, format!("# manifest={hash}\n{contents}")).with_context(|| format!("writing {}", path.display()))
}

/// FD truth with the true intensities.
pub fn truth_field(spec: &DomainSpec, k: usize) -> Result<ScalarField> {
    let sys = assemble(spec, k)?;
    Ok(solve_forward(&sys, &spec.true_intensities())?)
}

pub fn cmd_forward(spec_path: &Path, k: usize, out: &Path) -> Result<ScalarField> {
    let spec = load(spec_path)?;
    let field = truth_field(&spec, k)?;
    let mut m = Manifest::new("forward");
    m.file("spec", spec_path)?.set("k", k);
    write_tagged(out, &m, &field.to_text())?;
    Ok(field)
}

#[derive(Debug, Clone)]
pub struct PlaceArgs {
    pub spec: PathBuf,
    pub k: usize,
    pub n_obs: usize,
    pub pool: PoolCounts,
    pub seed: u64,
    pub lambda: f64,
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct PlacementFile<'a> {
    candidate_id: usize,
    provenance: Provenance,
    n_obs: usize,
    kappa: f64,
    k: usize,
    lambda: f64,
    positions: Vec<[f64; 2]>,
    ranking: &'a [RankRow],
}

pub fn cmd_place(args: &PlaceArgs) -> Result<(PlacementCandidate, Vec<RankRow>)> {
    let spec = load(&args.spec)?;
    let sys = assemble(&spec, args.k)?;
    let candidates = candidate_pool(&spec, args.n_obs, args.pool, substream(args.seed, "candidates", 0))?;
    let (best, ranking) = select_positions(&candidates, &sys, args.lambda)?;

    let mut m = Manifest::new("place");
    m.file("spec", &args.spec)?
        .set("k", args.k)
        .set("n_obs", args.n_obs)
        .set("pool", format!("{}/{}/{}", args.pool.lhs, args.pool.lds, args.pool.gs))
        .set("seed", args.seed)
        .set("lambda", args.lambda);
    let out = Outputs::new(&args.out, &m)?;
    out.write("ranking.csv", &ranking_csv(&ranking))?;
    out.write("positions.csv", &best.positions.to_csv())?;
    let file = PlacementFile {
        candidate_id: ranking[0].candidate_id,
        provenance: best.positions.provenance,
        n_obs: best.positions.len(),
        kappa: best.kappa,
        k: args.k,
        lambda: args.lambda,
        positions: best.positions.points().iter().map(|p| [p.x, p.y]).collect(),
        ranking: &ranking,
    };
    out.write("placement.json", &serde_json::to_string_pretty(&file)?)?;
    Ok((best, ranking))
}

/// Everything an inversion run depends on besides the layout.
#[derive(Debug, Clone)]
pub struct RunInputs {
    pub k: usize,
    pub eps: f64,
    pub seed: u64,
    pub train: TrainConfig,
}

fn run_manifest(spec_path: &Path, positions: &PositionSet, run: &RunInputs, pretrained: &NetParams) -> Result<Manifest> {
    let mut m = Manifest::new("invert");
    m.file("spec", spec_path)?
        .set("sensors", digest_hex(positions.to_csv().as_bytes()))
        .set("k", run.k)
        .set("eps", run.eps)
        .set("seed", run.seed)
        .set("train", serde_json::to_string(&run.train)?)
        .set("pretrained", digest_hex(format!("{:?}", pretrained.as_slice()).as_bytes()));
    Ok(m)
}

/// Noisy observations of the FD truth at the sensor positions.
pub fn observe(truth: &ScalarField, positions: &PositionSet, eps: f64, seed: u64) -> Result<Vec<f64>> {
    let exact: Vec<f64> = positions.points().iter().map(|p| truth.sample(p)).collect();
    Ok(add_noise(&exact, eps, substream(seed, "noise", 0))?)
}

/// Inverts one sensor set and writes the result bundle into `out_dir`.
pub fn run_inversion(
    spec_path: &Path,
    positions: &PositionSet,
    run: &RunInputs,
    pretrained: &NetParams,
    out_dir: &Path,
    run_id: &str,
) -> Result<MetricReport> {
    let spec = load(spec_path)?;
    // Run on exactly the coordinates that `sensors.csv` records.
    let positions = &PositionSet::from_csv(&positions.to_csv(), &spec, "sensors")?;
    let truth = truth_field(&spec, run.k)?;
    let values = observe(&truth, positions, run.eps, run.seed)?;
    let result = invert(&spec, pretrained, positions, &values, &run.train)?;
    let field = surrogate_field(&result.params, &result.normalization, truth.grid);
    let report = metrics(&field, &truth, &spec)?;

    let out = Outputs::new(out_dir, &run_manifest(spec_path, positions, run, pretrained)?)?;
    out.write("sensors.csv", &positions.to_csv())?;
    let mut obs = String::from("x_m,y_m,value\n");
    for (p, v) in positions.points().iter().zip(&values) {
        let _ = writeln!(obs, "{:?},{:?},{:?}", p.x, p.y, v);
    }
    out.write("observations.csv", &obs)?;
    let ckpt = Checkpoint {
        params: result.params.clone(),
        normalization: result.normalization,
    };
    out.write("checkpoint.json", &ckpt.to_json())?;
    out.write("field.txt", &field.to_text())?;
    let mut phi = String::from("source,rated,true,estimate\n");
    for (i, (s, est)) in spec.sources.iter().zip(&result.phi_hat).enumerate() {
        let _ = writeln!(phi, "{i},{:?},{:?},{:?}", s.rated_intensity, s.true_intensity, est);
    }
    out.write("phi.csv", &phi)?;
    out.write("history.csv", &result.history_csv())?;
    out.write("metrics.json", &serde_json::to_string(&report)?)?;
    out.write("metrics.csv", &metrics_csv([(run_id, &report)]))?;
    Ok(report)
}

pub fn read_checkpoint_file(path: &Path) -> Result<NetParams> {
    let text = read_untagged(path)?;
    Ok(Checkpoint::from_json(&text, &path.display().to_string())?.params)
}

/// Pretrained parameters for `(spec, train)`, cached as `<cache_dir>/<hash>.json`.
pub fn pretrained(spec_path: &Path, train: &TrainConfig, cache_dir: &Path) -> Result<NetParams> {
    let mut m = Manifest::new("pretrain");
    m.file("spec", spec_path)?.set("train", serde_json::to_string(train)?);
    let path = cache_dir.join(format!("{}.json", m.hash()));
    if let Ok(text) = fs::read_to_string(&path) {
        if tag_of(&text) == Some(m.hash().as_str()) {
            return read_checkpoint_file(&path);
        }
    }
    let spec = load(spec_path)?;
    let result = pretrain(&spec, train)?;
    let ckpt = Checkpoint {
        params: result.params.clone(),
        normalization: result.normalization,
    };
    write_tagged(&path, &m, &ckpt.to_json())?;
    Ok(result.params)
}

#[derive(Debug, Clone)]
pub struct InvertArgs {
    pub spec: PathBuf,
    pub sensors: PathBuf,
    pub run: RunInputs,
    /// Checkpoint to transfer from; pretrained (and cached in `out`) when absent.
    pub pretrained: Option<PathBuf>,
    pub out: PathBuf,
    pub run_id: String,
}

pub fn cmd_invert(args: &InvertArgs) -> Result<MetricReport> {
    let spec = load(&args.spec)?;
    let positions = PositionSet::read(&args.sensors, &spec)?;
    let params = match &args.pretrained {
        Some(p) => read_checkpoint_file(p)?,
        None => pretrained(&args.spec, &args.run.train, &args.out.join("pretrain"))?,
    };
    run_inversion(&args.spec, &positions, &args.run, &params, &args.out, &args.run_id)
}

pub fn cmd_metrics(pred: &Path, truth: &Path, spec_path: &Path) -> Result<MetricReport> {
    let spec = load(spec_path)?;
    let p = ScalarField::from_text(&read_untagged(pred)?)?;
    let t = ScalarField::from_text(&read_untagged(truth)?)?;
    Ok(metrics(&p, &t, &spec)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Choice {
    /// Smallest condition number.
    MinKappa,
    /// Median condition number, the typical unranked placement.
    MedianKappa,
    /// First candidate, no ranking.
    First,
}

fn default_k() -> usize {
    50
}
fn default_placement_k() -> usize {
    31
}
fn default_one() -> usize {
    1
}
fn default_lambda() -> f64 {
    1.0
}
fn default_choice() -> Choice {
    Choice::MinKappa
}

/// Sweep description, read from TOML. Relative paths are resolved against
/// the plan file's directory.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub spec: PathBuf,
    #[serde(default = "default_k")]
    pub k: usize,
    /// Grid used for condition numbers when ranking several candidates.
    #[serde(default = "default_placement_k")]
    pub placement_k: usize,
    pub sensor_counts: Vec<usize>,
    pub samplers: Vec<Provenance>,
    /// Candidates drawn per sampler and count.
    #[serde(default = "default_one")]
    pub candidates: usize,
    #[serde(default = "default_choice")]
    pub placement: Choice,
    pub noise: Vec<f64>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    pub out: PathBuf,
    #[serde(default)]
    pub train: TrainConfig,
}

impl ExperimentPlan {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut plan: Self = toml::from_str(&text).with_context(|| format!("parsing plan {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if plan.spec.is_relative() {
            plan.spec = base.join(&plan.spec);
        }
        if plan.out.is_relative() {
            plan.out = base.join(&plan.out);
        }
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sensor_counts.is_empty() || self.samplers.is_empty() || self.noise.is_empty() || self.seeds.is_empty() {
            bail!("sensor_counts, samplers, noise and seeds must all be nonempty");
        }
        if self.candidates == 0 {
            bail!("candidates must be >= 1");
        }
        if self.samplers.contains(&Provenance::Manual) {
            bail!("`manual` is not a sampler");
        }
        if self.candidates > 1 {
            let max_obs = self.sensor_counts.iter().max().copied().unwrap_or(0);
            let size = self.placement_k * self.placement_k + max_obs;
            if size > tfi_core::placement::DENSE_LIMIT {
                bail!(
                    "placement_k = {} with {max_obs} sensors gives {size} rows, above the dense limit {}",
                    self.placement_k,
                    tfi_core::placement::DENSE_LIMIT
                );
            }
        }
        self.train.validate()?;
        Ok(())
    }

    /// Cells in a fixed order: counts, then samplers, noise levels, seeds.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &n in &self.sensor_counts {
            for &sampler in &self.samplers {
                for &eps in &self.noise {
                    for &seed in &self.seeds {
                        out.push(Cell { n, sampler, eps, seed });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub n: usize,
    pub sampler: Provenance,
    pub eps: f64,
    pub seed: u64,
}

impl Cell {
    pub fn id(&self) -> String {
        format!("n{}_{}_e{}_s{}", self.n, self.sampler.name(), self.eps, self.seed)
    }
}

/// Sensor set for `(n, sampler)` under a plan; independent of the noise seed.
pub fn plan_positions(plan: &ExperimentPlan, spec: &DomainSpec, n: usize, sampler: Provenance) -> Result<PositionSet> {
    let c = plan.candidates;
    let pool = match sampler {
        Provenance::Lhs => PoolCounts { lhs: c, lds: 0, gs: 0 },
        Provenance::Lds => PoolCounts { lhs: 0, lds: c, gs: 0 },
        Provenance::Gs => PoolCounts { lhs: 0, lds: 0, gs: c },
        Provenance::Manual => bail!("`manual` is not a sampler"),
    };
    let seed = substream(plan.seed, &format!("positions/{}/{n}", sampler.name()), 0);
    let candidates = candidate_pool(spec, n, pool, seed)?;
    if c == 1 || plan.placement == Choice::First {
        return Ok(candidates[0].clone());
    }
    let sys = assemble(spec, plan.placement_k)?;
    let (best, ranking) = select_positions(&candidates, &sys, plan.lambda)?;
    Ok(match plan.placement {
        Choice::MinKappa | Choice::First => best.positions,
        Choice::MedianKappa => candidates[ranking[(ranking.len() - 1) / 2].candidate_id].clone(),
    })
}

#[derive(Debug)]
pub struct CellOutcome {
    pub cell: Cell,
    pub result: Result<MetricReport>,
    pub skipped: bool,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub cells: Vec<CellOutcome>,
}

impl SweepOutcome {
    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.result.is_err()).count()
    }

    pub fn ran(&self) -> usize {
        self.cells.iter().filter(|c| !c.skipped).count()
    }
}

/// Runs every cell of the plan, skipping cells whose metrics already exist
/// under the same manifest. A failing cell is recorded and the sweep goes on.
pub fn cmd_sweep(plan: &ExperimentPlan) -> Result<SweepOutcome> {
    let spec = load(&plan.spec)?;
    fs::create_dir_all(&plan.out)?;
    let params = pretrained(&plan.spec, &plan.train, &plan.out.join("pretrain"))?;
    let mut outcomes = Vec::new();
    for cell in plan.cells() {
        let dir = plan.out.join("cells").join(cell.id());
        let run = RunInputs {
            k: plan.k,
            eps: cell.eps,
            seed: cell.seed,
            train: plan.train.clone(),
        };
        let attempt = || -> Result<(MetricReport, bool)> {
            let positions = plan_positions(plan, &spec, cell.n, cell.sampler)?;
            let hash = run_manifest(&plan.spec, &positions, &run, &params)?.hash();
            let current = |name: &str| {
                fs::read_to_string(dir.join(name)).ok().filter(|t| tag_of(t) == Some(hash.as_str()))
            };
            if let (Some(json), Some(_)) = (current("metrics.json"), current("metrics.csv")) {
                return Ok((serde_json::from_str(strip_tag(&json))?, true));
            }
            Ok((run_inversion(&plan.spec, &positions, &run, &params, &dir, &cell.id())?, false))
        };
        let (result, skipped) = match attempt() {
            Ok((r, skipped)) => (Ok(r), skipped),
            Err(e) => {
                let _ = fs::create_dir_all(&dir);
                let _ = fs::write(dir.join("error.txt"), format!("{e:#}\n"));
                (Err(e), false)
            }
        };
        outcomes.push(CellOutcome { cell, result, skipped });
    }

    let mut summary = format!("{METRICS_HEADER}\n");
    for c in &outcomes {
        if let Ok(r) = &c.result {
            let _ = writeln!(summary, "{}", r.csv_row(&c.cell.id()));
        }
    }
    fs::write(plan.out.join("metrics.csv"), summary)?;
    Ok(SweepOutcome { cells: outcomes })
}
