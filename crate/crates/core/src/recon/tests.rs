use super::*;
use crate::geometry::{make_geometry, GeometryConfig};
use crate::phantom::{rasterize, simulate_sinogram, Ellipsoid, PhantomSpec, PhotonNoise};
use crate::projector::{back_project, forward_project};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small() -> Geometry {
    make_geometry(GeometryConfig {
        volume_dims: [8, 8, 8],
        voxel_size: [4.0; 3],
        num_views: 24,
        detector_cols: 16,
        detector_rows: 8,
        detector_col_spacing: 6.0,
        detector_row_spacing: 8.0,
        ..GeometryConfig::default()
    })
    .unwrap()
}

fn random_volume(g: &Geometry, rng: &mut ChaCha8Rng, scale: f64) -> Volume {
    let vals = (0..g.num_voxels()).map(|_| rng.random::<f64>() * scale).collect();
    Volume::from_values(g.volume_dims(), g.voxel_size(), vals).unwrap()
}

fn phantom() -> PhantomSpec {
    PhantomSpec {
        ellipsoids: vec![
            Ellipsoid::ball([0.0; 3], 13.0, 0.02),
            Ellipsoid::ball([3.0, -2.0, 0.0], 5.0, 0.02),
        ],
    }
}

fn noisy(g: &Geometry) -> Sinogram {
    simulate_sinogram(&phantom(), g, Some(PhotonNoise { i0: 1e4, seed: 3 })).unwrap()
}

fn cfg(mode: ReconMode, beta: f64) -> ReconConfig {
    ReconConfig {
        mode,
        regularizer: Regularizer::new(beta, Potential::Quadratic),
        convergence_tol: 0.0,
        ..ReconConfig::default()
    }
}

fn random_weights(y: &Sinogram, rng: &mut ChaCha8Rng) -> Weights {
    let s = statistical_weights(y, WeightModel::Uniform);
    let vals: Vec<f64> = s.values().iter().map(|_| 0.5 + rng.random::<f64>()).collect();
    let shape = s.shape();
    // Photon weights of a synthetic sinogram give arbitrary positive values.
    let fake = Sinogram::from_values(shape[0], shape[1], shape[2], vals.iter().map(|w| -w.ln()).collect())
        .unwrap();
    statistical_weights(&fake, WeightModel::Photon)
}

#[test]
fn data_cost_is_weighted_half_squared_residual() {
    let g = small();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let y = noisy(&g);
    let w = random_weights(&y, &mut rng);
    let x = random_volume(&g, &mut rng, 0.03);
    let p = forward_project(&x, &g, &ViewSubset::full(&g)).unwrap();
    let expected: f64 = (0..y.values().len())
        .map(|i| 0.5 * w.values()[i] * (y.values()[i] - p.values()[i]).powi(2))
        .sum();
    let got = cost(&x, &y, &w, &cfg(ReconMode::FullMbir, 0.0), &g).unwrap();
    assert!((got - expected).abs() < 1e-12 * expected, "{got} vs {expected}");

    // Half mode only counts the half-scan views.
    let half = half_scan_views(&g, 5).unwrap();
    let sel = half.selection();
    let per = y.view_len();
    let expected_half: f64 = (0..y.values().len())
        .filter(|i| sel[i / per])
        .map(|i| 0.5 * w.values()[i] * (y.values()[i] - p.values()[i]).powi(2))
        .sum();
    let c = ReconConfig { half_scan_start: 5, ..cfg(ReconMode::HalfMbir, 0.0) };
    let got = cost(&x, &y, &w, &c, &g).unwrap();
    assert!((got - expected_half).abs() < 1e-12 * expected_half);
}

#[test]
fn cost_adds_regularizer() {
    let g = small();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let y = noisy(&g);
    let w = statistical_weights(&y, WeightModel::Uniform);
    let x = random_volume(&g, &mut rng, 0.03);
    let c0 = cost(&x, &y, &w, &cfg(ReconMode::FullMbir, 0.0), &g).unwrap();
    let c1 = cost(&x, &y, &w, &cfg(ReconMode::FullMbir, 2.5), &g).unwrap();
    let phi = Regularizer::new(2.5, Potential::Quadratic).value(&x);
    assert!((c1 - c0 - phi).abs() < 1e-12 * c1);
}

fn central_difference(f: &dyn Fn(&Volume) -> f64, x: &Volume, j: usize, h: f64) -> f64 {
    let mut xp = x.clone();
    let mut xm = x.clone();
    xp.values_mut()[j] += h;
    xm.values_mut()[j] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

#[test]
fn gradient_matches_finite_differences_in_every_mode() {
    let g = small();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let y = noisy(&g);
    let w = random_weights(&y, &mut rng);
    let x = random_volume(&g, &mut rng, 0.03);
    for mode in [ReconMode::FullMbir, ReconMode::HalfMbir] {
        let c = ReconConfig {
            regularizer: Regularizer::new(0.7, Potential::Huber { delta: 0.004 }),
            ..cfg(mode, 0.0)
        };
        let grad = gradient(&x, &y, &w, &c, &g).unwrap();
        let f = |v: &Volume| cost(v, &y, &w, &c, &g).unwrap();
        for _ in 0..8 {
            let j = rng.random_range(0..g.num_voxels());
            let fd = central_difference(&f, &x, j, 1e-5);
            let an = grad.values()[j];
            assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-3), "{mode:?} voxel {j}: {fd} vs {an}");
        }
    }
}

#[test]
fn noiseless_solution_is_stationary() {
    let g = small();
    let x = rasterize(&phantom(), 0.0, &g).unwrap();
    let y = forward_project(&x, &g, &ViewSubset::full(&g)).unwrap();
    let w = statistical_weights(&y, WeightModel::Uniform);
    let grad = gradient(&x, &y, &w, &cfg(ReconMode::FullMbir, 0.0), &g).unwrap();
    assert!(grad.values().iter().all(|v| v.abs() < 1e-10));
    let mask = compute_mask(&g, &half_scan_views(&g, 0).unwrap(), 0.0).unwrap();
    let pg = pseudo_gradient(&x, &y, &w, &mask, &cfg(ReconMode::SawMbir, 0.0), &g).unwrap();
    assert!(pg.values().iter().all(|v| v.abs() < 1e-10));
}

#[test]
fn pseudo_gradient_reduces_to_full_and_half_back_projections() {
    let g = small();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let y = noisy(&g);
    let w = random_weights(&y, &mut rng);
    let x = random_volume(&g, &mut rng, 0.03);
    let saw = cfg(ReconMode::SawMbir, 1.5);
    let zero = Mask::constant(g.volume_dims(), 0.0);
    let pg = pseudo_gradient(&x, &y, &w, &zero, &saw, &g).unwrap();
    let grad = gradient(&x, &y, &w, &cfg(ReconMode::FullMbir, 1.5), &g).unwrap();
    assert_eq!(pg.values(), grad.values());

    // mask ≡ 1: half-scan back projection of the full-scan weighted residual.
    let one = Mask::constant(g.volume_dims(), 1.0);
    let pg = pseudo_gradient(&x, &y, &w, &one, &saw, &g).unwrap();
    let full = ViewSubset::full(&g);
    let half = half_scan_views(&g, 0).unwrap();
    let mut wr = forward_project(&x, &g, &full).unwrap().combine(1.0, -1.0, &y);
    wr.values_mut().iter_mut().zip(w.values()).for_each(|(r, wi)| *r *= wi);
    let mut expected = back_project(&wr, &g, &half).unwrap();
    expected.add_scaled(1.0, &Regularizer::new(1.5, Potential::Quadratic).gradient(&x));
    for (a, b) in pg.values().iter().zip(expected.values()) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
    assert!(pseudo_gradient(&x, &y, &w, &one, &cfg(ReconMode::FullMbir, 0.0), &g).is_err());
}

#[test]
fn line_search_reaches_the_exact_minimizer_along_the_gradient() {
    let g = small();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let y = noisy(&g);
    let w = random_weights(&y, &mut rng);
    let x = random_volume(&g, &mut rng, 0.03);
    let c = cfg(ReconMode::FullMbir, 0.0);
    let d = gradient(&x, &y, &w, &c, &g).unwrap();
    let alpha = line_search(&x, &d, &y, &w, &c, &g).unwrap();
    assert!(alpha > 0.0);
    let moved = x.combine(1.0, -alpha, &d);
    let slope_after = gradient(&moved, &y, &w, &c, &g).unwrap().dot(&d);
    let slope_before = d.dot(&d);
    assert!(slope_after.abs() < 1e-8 * slope_before, "{slope_after} vs {slope_before}");
    assert!(cost(&moved, &y, &w, &c, &g).unwrap() < cost(&x, &y, &w, &c, &g).unwrap());
}

#[test]
fn line_search_refuses_ascent_directions() {
    let g = small();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let y = noisy(&g);
    let w = statistical_weights(&y, WeightModel::Uniform);
    let x = random_volume(&g, &mut rng, 0.03);
    let c = cfg(ReconMode::FullMbir, 0.3);
    let d = gradient(&x, &y, &w, &c, &g).unwrap();
    let up = d.combine(-1.0, 0.0, &d);
    assert_eq!(line_search(&x, &up, &y, &w, &c, &g).unwrap(), 0.0);
    let zero = Volume::zeros_for(&g);
    assert_eq!(line_search(&x, &zero, &y, &w, &c, &g).unwrap(), 0.0);
}

#[test]
fn huber_line_search_never_increases_cost() {
    let g = small();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let y = noisy(&g);
    let w = statistical_weights(&y, WeightModel::Uniform);
    let c = ReconConfig {
        regularizer: Regularizer::new(50.0, Potential::Huber { delta: 1e-4 }),
        ..cfg(ReconMode::FullMbir, 0.0)
    };
    for _ in 0..5 {
        let x = random_volume(&g, &mut rng, 0.05);
        let d = gradient(&x, &y, &w, &c, &g).unwrap();
        let alpha = line_search(&x, &d, &y, &w, &c, &g).unwrap();
        let before = cost(&x, &y, &w, &c, &g).unwrap();
        let after = cost(&x.combine(1.0, -alpha, &d), &y, &w, &c, &g).unwrap();
        assert!(after <= before);
    }
}

fn run(y: &Sinogram, g: &Geometry, c: &ReconConfig, mask: Option<&Mask>) -> (Vec<Volume>, ReconReport) {
    let mut iterates = Vec::new();
    let (_, report) = reconstruct_with(y, g, c, mask, None, &mut |_, x| iterates.push(x.clone())).unwrap();
    (iterates, report)
}

#[test]
fn cost_is_monotone_in_every_mode_and_variant() {
    let g = small();
    let y = noisy(&g);
    let mask = compute_mask(&g, &half_scan_views(&g, 0).unwrap(), 4.0).unwrap();
    for mode in [ReconMode::FullMbir, ReconMode::HalfMbir, ReconMode::SawMbir] {
        for (nesterov, subsets) in [(false, 1), (true, 1), (false, 4), (true, 3)] {
            let c = ReconConfig {
                max_iterations: 15,
                nesterov,
                num_subsets: subsets,
                init: Init::Fbp,
                ..cfg(mode, 0.5)
            };
            let (_, report) = run(&y, &g, &c, Some(&mask));
            assert!(
                report.cost.windows(2).all(|p| p[1] <= p[0]),
                "{mode:?} nesterov={nesterov} subsets={subsets}: {:?}",
                report.cost
            );
            assert!(report.cost.last().unwrap() < &report.cost[0]);
        }
    }
}

#[test]
fn saw_with_empty_mask_follows_full_scan_iterates() {
    let g = small();
    let y = noisy(&g);
    let zero = Mask::constant(g.volume_dims(), 0.0);
    for nesterov in [false, true] {
        let full = ReconConfig { max_iterations: 8, nesterov, ..cfg(ReconMode::FullMbir, 0.5) };
        let saw = ReconConfig { mode: ReconMode::SawMbir, ..full.clone() };
        let (a, _) = run(&y, &g, &full, None);
        let (b, _) = run(&y, &g, &saw, Some(&zero));
        assert_eq!(a.len(), b.len());
        for (xa, xb) in a.iter().zip(&b) {
            for (p, q) in xa.values().iter().zip(xb.values()) {
                assert!((p - q).abs() <= 1e-10);
            }
        }
    }
}

#[test]
fn one_subset_is_the_plain_gradient_iteration() {
    let g = small();
    let y = noisy(&g);
    let w = statistical_weights(&y, WeightModel::Uniform);
    let c = ReconConfig { max_iterations: 6, num_subsets: 1, ..cfg(ReconMode::FullMbir, 0.2) };
    let (iterates, _) = run(&y, &g, &c, None);
    let mut x = Volume::zeros_for(&g);
    for expected in iterates.iter().skip(1) {
        let d = gradient(&x, &y, &w, &c, &g).unwrap();
        let alpha = line_search(&x, &d, &y, &w, &c, &g).unwrap();
        x = x.combine(1.0, -alpha, &d);
        assert_eq!(x.values(), expected.values());
    }
}

#[test]
fn fixed_steps_and_reporting() {
    let g = small();
    let y = noisy(&g);
    let c = ReconConfig { max_iterations: 5, step_size: StepSize::Fixed(1e-4), ..cfg(ReconMode::FullMbir, 0.0) };
    let (x, report) = reconstruct(&y, &g, &c).unwrap();
    assert_eq!(report.iterations(), 5);
    assert!(report.step[1..].iter().all(|&s| s == 1e-4));
    let csv = report.to_csv();
    assert!(csv.starts_with("iteration,cost,step,grad_norm,seconds\n"));
    assert_eq!(csv.lines().count(), 7);
    let w = statistical_weights(&y, WeightModel::Uniform);
    let grad = gradient(&x, &y, &w, &c, &g).unwrap();
    assert!((report.final_gradient_inner_product - grad.dot(&grad)).abs() <= 1e-9 * grad.dot(&grad));
}

#[test]
fn converged_runs_stop_early() {
    let g = small();
    let y = noisy(&g);
    let c = ReconConfig { max_iterations: 200, convergence_tol: 1e-3, ..cfg(ReconMode::FullMbir, 0.5) };
    let (_, report) = reconstruct(&y, &g, &c).unwrap();
    assert!(report.iterations() < 200);
}

#[test]
fn invalid_configs_are_rejected() {
    let g = small();
    let y = noisy(&g);
    let bad = [
        ReconConfig { max_iterations: 0, ..ReconConfig::default() },
        ReconConfig { num_subsets: 5, ..ReconConfig::default() },
        ReconConfig { num_subsets: 0, ..ReconConfig::default() },
        ReconConfig { regularizer: Regularizer::new(-1.0, Potential::Quadratic), ..ReconConfig::default() },
        ReconConfig { regularizer: Regularizer::new(1.0, Potential::Huber { delta: 0.0 }), ..ReconConfig::default() },
        ReconConfig { step_size: StepSize::Fixed(-0.1), ..ReconConfig::default() },
        ReconConfig { half_scan_start: 24, ..ReconConfig::default() },
        ReconConfig { convergence_tol: f64::NAN, ..ReconConfig::default() },
    ];
    for c in bad {
        assert!(reconstruct(&y, &g, &c).is_err(), "{c:?}");
    }
    // SAW needs a mask when called directly.
    let saw = cfg(ReconMode::SawMbir, 0.0);
    assert!(reconstruct_with(&y, &g, &saw, None, None, &mut |_, _| {}).is_err());
    // Mismatched sinogram.
    let other = Sinogram::zeros(12, 8, 16);
    assert!(reconstruct(&other, &g, &ReconConfig::default()).is_err());
}

#[test]
fn mask_file_source_round_trips() {
    let g = small();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mask.sawv");
    let m = compute_mask(&g, &half_scan_views(&g, 2).unwrap(), 0.0).unwrap();
    crate::io::write_mask(&m, g.voxel_size(), &path).unwrap();
    let c = ReconConfig { mask_source: MaskSource::File(path), ..cfg(ReconMode::SawMbir, 0.0) };
    assert_eq!(resolve_mask(&g, &c).unwrap().values(), m.values());
}
