use faer::Mat;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tfi_core::domain::case_preset;
use tfi_core::placement::{
    augment, condition_number, least_squares_reconstruct, select_positions, selection_from_positions,
    verify_error_bound, AugmentedSystem, SelectionMatrix,
};
use tfi_core::sampling::{candidate_pool, lhs_sample, PoolCounts, PositionSet, Provenance};
use tfi_core::{assemble, solve_forward, Case, CoefficientSystem, DomainSpec, Grid, HeatSource, Point2};

mod common;
use common::{jacobi_singular_values, oracle_kappa};

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat<f64> {
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn toy_spec() -> DomainSpec {
    case_preset(
        Case::Case1,
        vec![
            HeatSource {
                center: Point2::new(0.03, 0.03),
                width: 0.02,
                height: 0.02,
                rated_intensity: 1e4,
                true_intensity: 1.1e4,
            },
            HeatSource {
                center: Point2::new(0.07, 0.065),
                width: 0.03,
                height: 0.02,
                rated_intensity: 2e4,
                true_intensity: 1.8e4,
            },
        ],
    )
    .unwrap()
}

fn toy_system(k: usize) -> (DomainSpec, CoefficientSystem) {
    let spec = toy_spec();
    let sys = assemble(&spec, k).unwrap();
    (spec, sys)
}

fn exact_aug(spec: &DomainSpec, sys: &CoefficientSystem, ps: &PositionSet, lambda: f64) -> AugmentedSystem {
    let truth = solve_forward(sys, &spec.true_intensities()).unwrap();
    let sel = selection_from_positions(ps, &sys.grid, sys.n());
    let obs: Vec<f64> = sel.nodes().iter().map(|&i| truth.values[i]).collect();
    augment(sys, &sel, &obs, lambda).unwrap()
}

#[test]
fn kappa_matches_svd_oracle_on_random_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for t in 0..20 {
        let cols = rng.random_range(2..9);
        let rows = cols + rng.random_range(0..6);
        let a = random_matrix(rows, cols, &mut rng);
        let k = condition_number(&a).unwrap();
        let o = oracle_kappa(&a);
        assert!((k - o).abs() <= 1e-8 * o, "trial {t}: {k} vs {o}");
    }
}

#[test]
fn kappa_matches_svd_oracle_on_augmented_systems() {
    let (spec, sys) = toy_system(11);
    for seed in 0..3 {
        let ps = lhs_sample(12, &spec, seed).unwrap();
        let aug = exact_aug(&spec, &sys, &ps, 1.0);
        let k = condition_number(&aug.a_hat).unwrap();
        let o = oracle_kappa(&aug.a_hat);
        assert!((k - o).abs() <= 1e-8 * o, "seed {seed}: {k} vs {o}");
    }
}

#[test]
fn kappa_is_scale_invariant() {
    let (spec, sys) = toy_system(11);
    let aug = exact_aug(&spec, &sys, &lhs_sample(10, &spec, 5).unwrap(), 1.0);
    let k = condition_number(&aug.a_hat).unwrap();
    for alpha in [1e-3, 0.5, 7.0, 1e4] {
        let scaled = Mat::from_fn(aug.rows(), aug.cols(), |i, j| alpha * aug.a_hat[(i, j)]);
        let ks = condition_number(&scaled).unwrap();
        assert!((ks - k).abs() <= 1e-12 * k, "alpha {alpha}: {ks} vs {k}");
    }
}

#[test]
fn zero_observations_leave_source_columns_free() {
    let (_, sys) = toy_system(5);
    let sel = SelectionMatrix::from_nodes(&[], sys.m(), sys.n()).unwrap();
    let aug = augment(&sys, &sel, &[], 1.0).unwrap();
    let sv = jacobi_singular_values(&aug.a_hat);
    let rank = sv.iter().filter(|&&s| s > 1e-12 * sv[0]).count();
    assert_eq!(rank, sys.m());
    assert!(condition_number(&aug.a_hat).unwrap().is_infinite());
}

#[test]
fn augmented_matrix_matches_hand_stacking() {
    let spec = case_preset(
        Case::Case1,
        vec![HeatSource {
            center: Point2::new(0.05, 0.05),
            width: 0.01,
            height: 0.01,
            rated_intensity: 1.0,
            true_intensity: 1.0,
        }],
    )
    .unwrap();
    let sys = assemble(&spec, 5).unwrap();
    let nodes = [6usize, 12, 18];
    let sel = SelectionMatrix::from_nodes(&nodes, 25, 1).unwrap();
    let obs = [300.0, 301.0, 302.0];
    let lambda = 2.0;
    let aug = augment(&sys, &sel, &obs, lambda).unwrap();
    let h2 = sys.grid.h() * sys.grid.h();
    assert_eq!((aug.rows(), aug.cols()), (28, 26));
    for i in 0..25 {
        let (r, c) = (i / 5, i % 5);
        let boundary = r == 0 || r == 4 || c == 0 || c == 4;
        for j in 0..25 {
            let a = if boundary {
                f64::from(u8::from(i == j))
            } else if i == j {
                4.0
            } else if j + 1 == i || i + 1 == j || j + 5 == i || i + 5 == j {
                -1.0
            } else {
                0.0
            };
            assert_eq!(aug.a_hat[(i, j)], lambda * a, "({i},{j})");
        }
        let b = if i == 12 { -h2 } else { 0.0 };
        assert_eq!(aug.a_hat[(i, 25)], lambda * b, "({i},25)");
        assert_eq!(aug.c_hat[i], lambda * if boundary { 298.0 } else { 0.0 });
    }
    for (r, &node) in nodes.iter().enumerate() {
        for j in 0..26 {
            assert_eq!(aug.a_hat[(25 + r, j)], f64::from(u8::from(j == node)));
        }
        assert_eq!(aug.c_hat[25 + r], obs[r]);
    }
}

#[test]
fn ranking_matches_svd_oracle() {
    let (spec, sys) = toy_system(11);
    let cands = candidate_pool(&spec, 10, PoolCounts { lhs: 2, lds: 2, gs: 1 }, 9).unwrap();
    let (best, rows) = select_positions(&cands, &sys, 1.0).unwrap();
    let mut oracle: Vec<(f64, usize)> = cands
        .iter()
        .enumerate()
        .map(|(i, ps)| {
            let sel = selection_from_positions(ps, &sys.grid, sys.n());
            let obs = vec![0.0; sel.rows()];
            (oracle_kappa(&augment(&sys, &sel, &obs, 1.0).unwrap().a_hat), i)
        })
        .collect();
    oracle.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let ids: Vec<usize> = rows.iter().map(|r| r.candidate_id).collect();
    let oracle_ids: Vec<usize> = oracle.iter().map(|o| o.1).collect();
    assert_eq!(ids, oracle_ids);
    for (r, o) in rows.iter().zip(&oracle) {
        assert!((r.kappa - o.0).abs() <= 1e-8 * o.0);
    }
    assert_eq!(best.kappa, rows[0].kappa);
}

#[test]
fn full_pool_winner_is_argmin_and_order_invariant() {
    let (spec, sys) = toy_system(11);
    let cands = candidate_pool(&spec, 42, PoolCounts { lhs: 50, lds: 50, gs: 50 }, 1).unwrap();
    let (best, rows) = select_positions(&cands, &sys, 1.0).unwrap();
    assert_eq!(rows.len(), 150);
    assert!(rows.iter().all(|r| best.kappa <= r.kappa));
    let mut reversed = cands.clone();
    reversed.reverse();
    let (best_rev, _) = select_positions(&reversed, &sys, 1.0).unwrap();
    assert_eq!(best_rev.kappa, best.kappa);
}

#[test]
fn least_squares_recovers_zero_source_field() {
    let spec = case_preset(Case::Case1, vec![toy_spec().sources[0].clone()]).unwrap();
    let sys = assemble(&spec, 9).unwrap();
    let ps = lhs_sample(6, &spec, 2).unwrap();
    let sel = selection_from_positions(&ps, &sys.grid, 1);
    let aug = augment(&sys, &sel, &vec![298.0; sel.rows()], 1.0).unwrap();
    let (t, y) = least_squares_reconstruct(&aug).unwrap();
    assert!(t.values.iter().all(|v| (v - 298.0).abs() < 1e-9));
    assert!(y[0].abs() < 1e-6, "{}", y[0]);
}

#[test]
fn least_squares_residual_is_orthogonal_to_range() {
    let (spec, sys) = toy_system(11);
    let ps = lhs_sample(15, &spec, 3).unwrap();
    let mut aug = exact_aug(&spec, &sys, &ps, 1.0);
    let m = sys.m();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for v in &mut aug.c_hat[m..] {
        *v += rng.random_range(-0.5..0.5);
    }
    let (t, y) = least_squares_reconstruct(&aug).unwrap();
    let x: Vec<f64> = t.values.iter().chain(&y).copied().collect();
    let r: Vec<f64> = (0..aug.rows())
        .map(|i| aug.c_hat[i] - (0..aug.cols()).map(|j| aug.a_hat[(i, j)] * x[j]).sum::<f64>())
        .collect();
    let r_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    for j in 0..aug.cols() {
        let col_norm = (0..aug.rows()).map(|i| aug.a_hat[(i, j)].powi(2)).sum::<f64>().sqrt();
        let dot: f64 = (0..aug.rows()).map(|i| aug.a_hat[(i, j)] * r[i]).sum();
        assert!(dot.abs() <= 1e-8 * col_norm * r_norm.max(1.0), "column {j}: {dot}");
    }
}

fn dense_system(a: Mat<f64>, c: Vec<f64>) -> AugmentedSystem {
    AugmentedSystem {
        a_hat: a,
        c_hat: c,
        lambda: 1.0,
        grid: Grid::new(3, 0.1).unwrap(),
        n_sources: 0,
    }
}

#[test]
fn bound_holds_on_random_full_rank_system() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let a = random_matrix(20, 8, &mut rng);
    let c: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
    let perturbations: Vec<Vec<f64>> = (0..1000)
        .map(|_| {
            let scale = 10f64.powf(rng.random_range(-6.0..0.0));
            (0..20).map(|_| scale * rng.random_range(-1.0..1.0)).collect()
        })
        .collect();
    let report = verify_error_bound(&dense_system(a, c), &perturbations).unwrap();
    assert_eq!(report.trials.len(), 1000);
    assert!(report.all_hold());
}

#[test]
fn bound_is_nearly_attained_along_singular_directions() {
    // A = U diag(s) V^T with orthonormal U (20x4) from Gram-Schmidt and V = I.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let raw = random_matrix(20, 4, &mut rng);
    let mut u: Vec<Vec<f64>> = Vec::new();
    for j in 0..4 {
        let mut v: Vec<f64> = (0..20).map(|i| raw[(i, j)]).collect();
        for q in &u {
            let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        u.push(v.into_iter().map(|x| x / n).collect());
    }
    let s = [50.0, 9.0, 3.0, 0.5];
    let a = Mat::from_fn(20, 4, |i, j| u[j][i] * s[j]);
    let c = u[0].clone();
    let dc: Vec<f64> = u[3].iter().map(|x| 1e-3 * x).collect();
    let report = verify_error_bound(&dense_system(a, c), &[dc]).unwrap();
    let t = report.trials[0];
    assert!(t.holds);
    assert!((report.kappa - 100.0).abs() < 1e-9);
    assert!(t.relative_error >= t.bound / 10.0, "{} vs {}", t.relative_error, t.bound);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn snapping_picks_a_nearest_node(x in 0.0f64..=0.1, y in 0.0f64..=0.1) {
        let grid = Grid::new(11, 0.1).unwrap();
        let p = Point2::new(x, y);
        let idx = grid.nearest_node(&p);
        let d = grid.point(idx).distance(&p);
        for j in 0..grid.len() {
            prop_assert!(d <= grid.point(j).distance(&p) + 1e-15);
        }
    }

    #[test]
    fn appending_rows_never_loses_identifiability(seed in 0u64..1000, extra in 1usize..6) {
        let (_, sys) = toy_system(7);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut nodes: Vec<usize> = (0..sys.m()).collect();
        for i in (1..nodes.len()).rev() {
            nodes.swap(i, rng.random_range(0..=i));
        }
        let base = rng.random_range(1..8);
        let k_before = {
            let sel = SelectionMatrix::from_nodes(&nodes[..base], sys.m(), sys.n()).unwrap();
            condition_number(&augment(&sys, &sel, &vec![0.0; base], 1.0).unwrap().a_hat).unwrap()
        };
        let sel = SelectionMatrix::from_nodes(&nodes[..base + extra], sys.m(), sys.n()).unwrap();
        let k_after = condition_number(&augment(&sys, &sel, &vec![0.0; base + extra], 1.0).unwrap().a_hat).unwrap();
        if k_before.is_finite() {
            prop_assert!(k_after.is_finite());
        }
    }
}

#[test]
fn manual_points_and_provenance() {
    let spec = toy_spec();
    let ps = PositionSet::new(vec![Point2::new(0.03, 0.03), Point2::new(0.07, 0.065)], &spec, Provenance::Manual, None)
        .unwrap();
    let (best, _) = select_positions(std::slice::from_ref(&ps), &assemble(&spec, 11).unwrap(), 1.0).unwrap();
    assert_eq!(best.positions.provenance, Provenance::Manual);
    assert!(best.kappa.is_finite());
}
