use brown_mde::c64;
use brown_mde::dyson::{solve_mde, solve_vde, vde_map, SolverConfig};
use brown_mde::grid::{laplacian5, GridSpec, ScalarField};
use brown_mde::profiles::{
    discretize, reduced_variance_matrix, spectral_radius, BlockPartition, DiscretizedModel, ProfileSpec,
};
use brown_mde::rmt::{hermitized_spectrum, sample, singular_values, SampleConfig};
use brown_mde::rng::Distribution;
use brown_mde::support::{rho_density, s_eps_mask, SupportConfig};
use proptest::prelude::*;

fn two_block(s: [f64; 4], a: [f64; 2]) -> ProfileSpec {
    ProfileSpec::new(
        BlockPartition::uniform(2).unwrap(),
        vec![vec![s[0], s[1]], vec![s[2], s[3]]],
        vec![c64::new(a[0], 0.0), c64::new(a[1], 0.0)],
        0.1,
        1.0,
    )
    .unwrap()
}

fn model(s: [f64; 4], a: [f64; 2], n: usize) -> DiscretizedModel {
    discretize(&two_block(s, a), n).unwrap()
}

fn sup_diff(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn variance() -> impl Strategy<Value = [f64; 4]> {
    prop::array::uniform4(0.3f64..2.0)
}

fn shift() -> impl Strategy<Value = [f64; 2]> {
    prop::array::uniform2(-1.0f64..1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn constant_profiles_discretize_exactly(t in 0.1f64..5.0, re in -2.0f64..2.0, im in -2.0f64..2.0, n in 2usize..40) {
        let m = discretize(&ProfileSpec::constant(t, c64::new(re, im)).unwrap(), n).unwrap();
        let s0 = m.variance_matrix()[0];
        prop_assert!(m.variance_matrix().iter().all(|&s| s == s0));
        prop_assert!(m.deformation().iter().all(|&a| a == c64::new(re, im)));
    }

    #[test]
    fn reduced_matrix_matches_block_row_sums(s in variance(), half in 1usize..20) {
        let n = 2 * half;
        let spec = two_block(s, [0.0, 0.0]);
        let red = reduced_variance_matrix(&spec);
        let m = discretize(&spec, n).unwrap();
        for i in 0..n {
            let row: f64 = (0..n).map(|j| m.variance(i, j)).sum();
            let l = if i < n / 2 { 0 } else { 1 };
            prop_assert!((row - red[l].iter().sum::<f64>()).abs() < 1e-12);
        }
    }

    #[test]
    fn spectral_radius_is_similarity_invariant_and_homogeneous(
        entries in prop::array::uniform9(0.05f64..3.0),
        c in 0.1f64..10.0,
        perm in Just([2usize, 0, 1]),
    ) {
        let m: Vec<Vec<f64>> = (0..3).map(|i| entries[3 * i..3 * i + 3].to_vec()).collect();
        let r = spectral_radius(&m).unwrap();
        let p: Vec<Vec<f64>> = (0..3).map(|i| (0..3).map(|j| m[perm[i]][perm[j]]).collect()).collect();
        prop_assert!((spectral_radius(&p).unwrap() - r).abs() <= 1e-9 * r);
        let scaled: Vec<Vec<f64>> = m.iter().map(|row| row.iter().map(|x| c * x).collect()).collect();
        prop_assert!((spectral_radius(&scaled).unwrap() - c * r).abs() <= 1e-9 * c * r);
    }

    #[test]
    fn vde_solution_is_a_fixed_point(s in variance(), a in shift(), re in -1.5f64..1.5, im in -1.5f64..1.5, eta in 0.05f64..5.0) {
        let m = model(s, a, 10);
        let cfg = SolverConfig::default();
        let sol = solve_vde(&m, c64::new(re, im), eta, None, &cfg).unwrap();
        let (v1, v2) = vde_map(&m, &sol);
        prop_assert!(sup_diff(&v1, &sol.v1) < 10.0 * cfg.tol * sol.v1.iter().fold(1.0, |x: f64, y| x.max(*y)));
        prop_assert!(sup_diff(&v2, &sol.v2) < 10.0 * cfg.tol * sol.v2.iter().fold(1.0, |x: f64, y| x.max(*y)));
    }

    #[test]
    fn real_deformation_gives_conjugation_symmetry(s in variance(), a in shift(), re in -1.5f64..1.5, im in 0.01f64..1.5, eta in 0.05f64..5.0) {
        let m = model(s, a, 10);
        let cfg = SolverConfig::default();
        let up = solve_vde(&m, c64::new(re, im), eta, None, &cfg).unwrap();
        let down = solve_vde(&m, c64::new(re, -im), eta, None, &cfg).unwrap();
        prop_assert!(sup_diff(&up.v1, &down.v1) < 1e-10);
        prop_assert!(sup_diff(&up.v2, &down.v2) < 1e-10);
    }

    #[test]
    fn class_compression_matches_full_solve(s in variance(), a in shift(), re in -1.5f64..1.5, im in -1.5f64..1.5, eta in 0.1f64..5.0) {
        let m = model(s, a, 12);
        let cfg = SolverConfig::default();
        let z = c64::new(re, im);
        let reduced = solve_vde(&m, z, eta, None, &cfg).unwrap();
        let full = solve_vde(&m.without_compression(), z, eta, None, &cfg).unwrap();
        prop_assert!(sup_diff(&reduced.v1, &full.v1) < 1e-10);
        // block-constant
        prop_assert!(reduced.v1[..6].iter().all(|&v| v == reduced.v1[0]));
        prop_assert!(reduced.v1[6..].iter().all(|&v| v == reduced.v1[6]));
    }

    #[test]
    fn mde_on_the_imaginary_axis_matches_vde(s in variance(), a in shift(), re in -1.5f64..1.5, im in -1.5f64..1.5, eta in 0.1f64..5.0) {
        let m = model(s, a, 10);
        let cfg = SolverConfig::default();
        let z = c64::new(re, im);
        let v = solve_vde(&m, z, eta, None, &cfg).unwrap();
        let mde = solve_mde(&m, z, c64::new(0.0, eta), &cfg).unwrap();
        let im1: Vec<f64> = mde.m1.iter().map(|x| x.im).collect();
        let im2: Vec<f64> = mde.m2.iter().map(|x| x.im).collect();
        prop_assert!(sup_diff(&im1, &v.v1) < 1e-10);
        prop_assert!(sup_diff(&im2, &v.v2) < 1e-10);
    }

    #[test]
    fn rho_is_even_in_tau(a in shift(), re in -1.0f64..1.0, tau in 0.05f64..2.0) {
        let m = model([1.0, 1.0, 1.0, 1.0], a, 10);
        let sup = SupportConfig::default();
        let cfg = SolverConfig::default();
        let z = c64::new(re, 0.3);
        let p = rho_density(&m, z, tau, &sup, &cfg).unwrap();
        let q = rho_density(&m, z, -tau, &sup, &cfg).unwrap();
        prop_assert!((p - q).abs() <= 1e-8 * (1.0 + p.abs()));
    }

    #[test]
    fn s_eps_masks_are_nested(values in prop::collection::vec(0.0f64..1.0, 25), e1 in 0.0f64..1.0, e2 in 0.0f64..1.0) {
        let grid = GridSpec::new(0.0, 1.0, 0.0, 1.0, 0.25).unwrap();
        let field = ScalarField::new(grid, values, vec![true; 25], "dist0", "h").unwrap();
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let small = s_eps_mask(&field, lo);
        let big = s_eps_mask(&field, hi);
        prop_assert!(small.iter().zip(&big).all(|(s, b)| !s || *b));
    }

    #[test]
    fn laplacian_is_exact_on_quadratics(a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0, cells in 4usize..40) {
        let h = 2.0 / cells as f64;
        let grid = GridSpec::new(-1.0, 1.0, -1.0, 1.0, h).unwrap();
        let values: Vec<f64> = grid.nodes().iter().map(|z| a * z.re * z.re + b * z.im * z.im + c * z.re * z.im).collect();
        let (lap, ok) = laplacian5(&grid, &values, &vec![true; values.len()]);
        for (l, v) in lap.iter().zip(&ok) {
            if *v {
                prop_assert!((l - 2.0 * (a + b)).abs() < 1e-8 / (h * h));
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_and_hermitization_exact(seed in any::<u64>(), re in -1.0f64..1.0, im in -1.0f64..1.0) {
        let m = model([1.0, 2.0, 2.0, 1.0], [0.5, -0.5], 12);
        let cfg = SampleConfig { n: 12, distribution: Distribution::ComplexGaussian, seed };
        let x = sample(&m, &cfg).unwrap();
        prop_assert!(x.matrix == sample(&m, &cfg).unwrap().matrix);
        let z = c64::new(re, im);
        let ev = hermitized_spectrum(&x, z).unwrap();
        let sv = singular_values(&x, z).unwrap();
        for k in 0..12 {
            prop_assert!((ev[k] + ev[23 - k]).abs() < 1e-8);
            prop_assert!((ev[23 - k] - sv[k]).abs() < 1e-8);
        }
    }
}
