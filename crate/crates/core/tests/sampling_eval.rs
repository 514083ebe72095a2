use std::collections::HashSet;
use std::path::PathBuf;

use proptest::prelude::*;

use tfi_core::config::load_spec;
use tfi_core::domain::case_preset;
use tfi_core::evaluation::{add_noise, metrics};
use tfi_core::sampling::{
    discrepancy_estimate, grid_sample, lds_sample, lhs_sample, radical_inverse, source_centers,
};
use tfi_core::{Case, DomainSpec, Grid, HeatSource, Point2, ScalarField};

fn reference() -> DomainSpec {
    load_spec(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/reference_case1.toml")).unwrap()
}

fn plate() -> DomainSpec {
    case_preset(Case::Case1, Vec::new()).unwrap()
}

#[test]
fn lhs_occupancy_is_exactly_uniform_over_seeds() {
    let spec = plate();
    let n = 64;
    let mut counts = vec![[0usize; 2]; n];
    for seed in 0..1000 {
        let ps = lhs_sample(n, &spec, seed).unwrap();
        for p in ps.points() {
            let sx = ((p.x / spec.lx) * n as f64).floor() as usize;
            let sy = ((p.y / spec.ly) * n as f64).floor() as usize;
            counts[sx.min(n - 1)][0] += 1;
            counts[sy.min(n - 1)][1] += 1;
        }
    }
    assert!(counts.iter().all(|c| c[0] == 1000 && c[1] == 1000));
}

#[test]
fn halton_first_points() {
    let spec = plate();
    let one = lds_sample(1, &spec).unwrap();
    let p = one.points()[0];
    assert!((p.x - 0.05).abs() < 1e-15 && (p.y - 0.1 / 3.0).abs() < 1e-15);
    let xs: Vec<f64> = lds_sample(3, &spec).unwrap().points().iter().map(|p| p.x / spec.lx).collect();
    for (x, e) in xs.iter().zip([0.5, 0.25, 0.75]) {
        assert!((x - e).abs() < 1e-15, "{x}");
    }
    assert!((radical_inverse(5, 3) - 7.0 / 9.0).abs() < 1e-15);
}

#[test]
fn grid_sample_reference_occupancy() {
    let spec = reference();
    let centers = source_centers(&spec);
    let n = 5;
    let cell = spec.lx / n as f64;
    let occupied: HashSet<(usize, usize)> = centers
        .iter()
        .map(|p| (((p.x / cell).floor() as usize).min(n - 1), ((p.y / cell).floor() as usize).min(n - 1)))
        .collect();
    let ps = grid_sample(&spec, &centers, n).unwrap();
    assert_eq!(ps.len(), centers.len() + n * n - occupied.len());
    for c in &centers {
        assert!(ps.points().contains(c));
    }
}

#[test]
fn lds_beats_mean_lhs_discrepancy() {
    let spec = plate();
    let lds = discrepancy_estimate(&lds_sample(64, &spec).unwrap(), &spec, 2000, 0).unwrap();
    let mean = (0..100)
        .map(|s| discrepancy_estimate(&lhs_sample(64, &spec, s).unwrap(), &spec, 2000, 0).unwrap())
        .sum::<f64>()
        / 100.0;
    assert!(lds < mean, "{lds} vs {mean}");
}

#[test]
fn noise_standard_deviation_matches_closed_form() {
    let (eps, t) = (0.01, 298.0);
    let n = 100_000u64;
    let samples: Vec<f64> = (0..n).map(|seed| add_noise(&[t], eps, seed).unwrap()[0]).collect();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    assert!((sd - eps * t).abs() <= 0.02 * eps * t, "sd {sd}");
}

fn oracle_metrics(pred: &[f64], truth: &[f64], grid: Grid, spec: &DomainSpec) -> [f64; 4] {
    let k = grid.k();
    let (mut all, mut comp, mut ring) = (Vec::new(), Vec::new(), Vec::new());
    for r in 0..k {
        for c in 0..k {
            let i = r * k + c;
            let e = (pred[i] - truth[i]).abs();
            all.push(e);
            let p = Point2::new(c as f64 * grid.h(), r as f64 * grid.h());
            if spec.sources.iter().any(|s| s.contains(&p)) {
                comp.push(e);
            }
            if r == 0 || c == 0 || r == k - 1 || c == k - 1 {
                ring.push(e);
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    [mean(&all), mean(&comp), mean(&ring), all.iter().copied().fold(0.0, f64::max)]
}

fn five_by_five_spec() -> DomainSpec {
    case_preset(
        Case::Case1,
        vec![HeatSource {
            center: Point2::new(0.0375, 0.05),
            width: 0.025,
            height: 0.05,
            rated_intensity: 1.0,
            true_intensity: 1.0,
        }],
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_match_per_node_oracle(
        a in prop::collection::vec(290.0f64..320.0, 25),
        b in prop::collection::vec(290.0f64..320.0, 25),
    ) {
        let spec = five_by_five_spec();
        let grid = Grid::new(5, 0.1).unwrap();
        let pred = ScalarField::new(grid, a.clone());
        let truth = ScalarField::new(grid, b.clone());
        let r = metrics(&pred, &truth, &spec).unwrap();
        let o = oracle_metrics(&a, &b, grid, &spec);
        for (x, y) in [r.mae, r.cmae, r.bmae, r.mcae].iter().zip(o) {
            prop_assert!((x - y).abs() <= 1e-12 * y.max(1.0));
        }
        let swapped = metrics(&truth, &pred, &spec).unwrap();
        prop_assert_eq!(r, swapped);
        prop_assert!(r.mae <= r.mcae && r.cmae <= r.mcae && r.bmae <= r.mcae);
    }

    #[test]
    fn lds_prefix_property(n in 1usize..200) {
        let spec = plate();
        let a = lds_sample(n, &spec).unwrap();
        let b = lds_sample(n + 1, &spec).unwrap();
        prop_assert_eq!(a.points(), &b.points()[..n]);
    }

    #[test]
    fn discrepancy_lies_in_unit_interval(n in 1usize..40, seed in 0u64..500) {
        let spec = plate();
        let d = discrepancy_estimate(&lhs_sample(n, &spec, seed).unwrap(), &spec, 50, seed).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
    }

    #[test]
    fn samplers_stay_in_domain(n in 1usize..100, seed in 0u64..500, cells in 1usize..8) {
        let spec = reference();
        for ps in [lhs_sample(n, &spec, seed).unwrap(), lds_sample(n, &spec).unwrap(), grid_sample(&spec, &source_centers(&spec), cells).unwrap()] {
            prop_assert!(ps.points().iter().all(|p| spec.contains(p)));
        }
    }

    #[test]
    fn intensity_is_locally_constant(i in 0usize..5, fx in 0.05f64..0.95, fy in 0.05f64..0.95, t in 0.0f64..1.0) {
        let spec = reference();
        let s = &spec.sources[i];
        let p = Point2::new(s.center.x + (fx - 0.5) * s.width, s.center.y + (fy - 0.5) * s.height);
        let margin = [p.x - s.x_min(), s.x_max() - p.x, p.y - s.y_min(), s.y_max() - p.y].into_iter().fold(f64::INFINITY, f64::min);
        let q = Point2::new(p.x + 0.99 * margin * t, p.y - 0.99 * margin * (1.0 - t));
        prop_assert_eq!(spec.intensity_at(&p).unwrap(), s.true_intensity);
        prop_assert_eq!(spec.intensity_at(&q).unwrap(), s.true_intensity);
    }
}

#[test]
fn intensity_on_rectangle_edges() {
    let spec = reference();
    for s in &spec.sources {
        for p in [
            Point2::new(s.x_min(), s.center.y),
            Point2::new(s.x_max(), s.center.y),
            Point2::new(s.center.x, s.y_min()),
            Point2::new(s.center.x, s.y_max()),
        ] {
            assert_eq!(spec.intensity_at(&p).unwrap(), s.true_intensity);
        }
    }
}

#[test]
fn source_integral_matches_grid_sum() {
    let spec = reference();
    let k = 200;
    let grid = Grid::for_spec(&spec, k).unwrap();
    let h = grid.h();
    let mut sum = 0.0;
    for i in 0..grid.len() {
        sum += spec.intensity_at(&grid.point(i)).unwrap() * h * h;
    }
    let exact: f64 = spec.sources.iter().map(|s| s.true_intensity * s.area()).sum();
    // one cell row of slack per rectangle side
    let slack: f64 = spec.sources.iter().map(|s| s.true_intensity * 2.0 * (s.width + s.height) * h).sum();
    assert!((sum - exact).abs() <= slack, "{sum} vs {exact}");
}
