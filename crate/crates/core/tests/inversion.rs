use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srctrace::cgo::{make_mode_functions, make_zero_mode_functions, source_adapted_functions, CgoFunction};
use srctrace::functional::oracle_r_direct;
use srctrace::heat::{BoundarySeries, Grid2D, TimeMesh};
use srctrace::inversion::metrics::{intensity_l2_error, max_position_distance};
use srctrace::inversion::spectral::{in_union, min_pairwise_distance, mode_matrix};
use srctrace::inversion::{
    approximate_intensities, assemble_mode_system, assign, gershgorin_balls, inverse_fourier_intensities,
    locate_sources, position_error, recover_fourier, stability_constant, stability_report, FourierTable, Frequency,
    LocateOptions,
};
use srctrace::quad;
use srctrace::scenario::PaperIntensity;
use srctrace::source::{uniform_times, Intensity, PointSource, SourceSet};
use std::f64::consts::PI;

const T_STAR: f64 = 138_240.0;

fn square() -> Grid2D {
    Grid2D::new(1000.0, 1000.0, 101, 101).unwrap()
}

fn paper_sources(positions: &[[f64; 2]]) -> SourceSet {
    let names = [
        PaperIntensity::G1,
        PaperIntensity::G2,
        PaperIntensity::G3,
        PaperIntensity::G4,
        PaperIntensity::G5,
        PaperIntensity::G6,
    ];
    SourceSet {
        t_star: T_STAR,
        sources: positions
            .iter()
            .zip(names)
            .map(|(p, n)| PointSource {
                position: *p,
                intensity: Intensity::Named(n),
            })
            .collect(),
    }
}

fn exact_r(theta: &SourceSet, functions: &[CgoFunction]) -> Vec<Complex64> {
    functions.iter().map(|v| oracle_r_direct(theta, v).unwrap()).collect()
}

fn coefficient(intensity: &Intensity, alpha: Complex64) -> Complex64 {
    quad::integrate_complex(0.0, T_STAR, 4096, |t| intensity.eval(t, T_STAR) * (alpha * t).exp())
}

#[test]
fn source_at_origin_gives_column_of_ones() {
    let fs = make_mode_functions(2, 4, T_STAR, 1.0, &square()).unwrap();
    let sys = assemble_mode_system(2, &fs, &[[0.0, 0.0]], &[Complex64::new(1.0, 0.0); 4]).unwrap();
    assert!(sys.a.iter().all(|z| *z == Complex64::new(1.0, 0.0)));
}

#[test]
fn source_adapted_system_is_hermitian() {
    let s = [[300.0, 700.0], [650.0, 250.0], [820.0, 800.0]];
    let fs = source_adapted_functions(&s, 2e-5, 0, T_STAR, 1.0).unwrap();
    let sys = assemble_mode_system(0, &fs, &s, &[Complex64::new(0.0, 0.0); 3]).unwrap();
    let defect = (&sys.a - sys.a.adjoint()).norm();
    assert!(defect <= 1e-12 * sys.a.norm());
}

#[test]
fn single_source_coefficient_is_a_scalar_division() {
    let fs = make_mode_functions(3, 1, T_STAR, 1.0, &square()).unwrap();
    let s = [[420.0, 180.0]];
    let r = [Complex64::new(3.0, -1.5)];
    let sol = recover_fourier(&assemble_mode_system(3, &fs, &s, &r).unwrap()).unwrap();
    let expect = r[0] / fs[0].eval(s[0], 0.0).unwrap();
    assert!((sol.lambda[0] - expect).norm() <= 1e-14 * expect.norm());
}

#[test]
fn exact_values_recover_fourier_coefficients() {
    let positions = [[200.0, 800.0], [200.0, 650.0]];
    let theta = paper_sources(&positions);
    for k in 0..=8 {
        let fs = if k == 0 {
            make_zero_mode_functions(4, &square(), 1.0).unwrap()
        } else {
            make_mode_functions(k, 4, T_STAR, 1.0, &square()).unwrap()
        };
        let sys = assemble_mode_system(k, &fs, &positions, &exact_r(&theta, &fs)).unwrap();
        let sol = recover_fourier(&sys).unwrap();
        for (j, src) in theta.sources.iter().enumerate() {
            let expect = coefficient(&src.intensity, fs[0].alpha);
            let err = (sol.lambda[j] - expect).norm() / expect.norm();
            assert!(err <= 1e-8, "k = {k}, source {j}: {err}");
        }
    }
}

#[test]
fn conjugate_modes_give_conjugate_coefficients() {
    let positions = [[300.0, 400.0], [700.0, 650.0], [450.0, 850.0]];
    let theta = paper_sources(&positions);
    for k in 1..=4 {
        let fs = make_mode_functions(k, 3, T_STAR, 1.0, &square()).unwrap();
        let conj: Vec<CgoFunction> = fs.iter().map(|v| v.conj()).collect();
        let plus = recover_fourier(&assemble_mode_system(k, &fs, &positions, &exact_r(&theta, &fs)).unwrap()).unwrap();
        let minus = recover_fourier(&assemble_mode_system(k, &conj, &positions, &exact_r(&theta, &conj)).unwrap()).unwrap();
        for (a, b) in plus.lambda.iter().zip(&minus.lambda) {
            assert!((a.conj() - b).norm() <= 1e-8 * a.norm());
        }
    }
}

#[test]
fn zero_data_locates_nothing() {
    let fs = make_zero_mode_functions(4, &square(), 1.0).unwrap();
    let located = locate_sources(&vec![Complex64::new(0.0, 0.0); fs.len()], &fs, &square(), &LocateOptions::default()).unwrap();
    assert!(!located.detected);
    assert!(located.positions.is_empty());
}

#[test]
fn exact_zero_mode_values_locate_the_sources() {
    let truth = [[200.0, 800.0], [200.0, 650.0], [800.0, 200.0]];
    let theta = paper_sources(&truth);
    let fs = make_zero_mode_functions(5, &square(), 1.0).unwrap();
    let opts = LocateOptions {
        max_sources: 5,
        restarts: 20,
        ..LocateOptions::default()
    };
    let located = locate_sources(&exact_r(&theta, &fs), &fs, &square(), &opts).unwrap();
    assert_eq!(located.positions.len(), 3);
    assert!(max_position_distance(&truth, &located.positions) <= 1e-6 * square().diag());
    for round in &located.rounds {
        assert!(round.restart_objectives.iter().all(|o| round.objective <= *o));
    }
}

#[test]
fn dc_only_table_is_constant() {
    let c = 2.5;
    let table = FourierTable {
        t_star: T_STAR,
        frequency: Frequency::Half,
        modes: vec![vec![Complex64::new(c * T_STAR, 0.0)]],
    };
    let g = inverse_fourier_intensities(&table, &uniform_times(T_STAR, 11)).unwrap();
    assert!(g[0].iter().all(|v| (v - c).abs() < 1e-12));
}

fn exact_table(intensity: &Intensity, k_max: usize) -> FourierTable {
    FourierTable {
        t_star: T_STAR,
        frequency: Frequency::Half,
        modes: (0..=k_max)
            .map(|k| vec![coefficient(intensity, Complex64::new(0.0, -(k as f64) * PI / T_STAR))])
            .collect(),
    }
}

fn series_error(intensity: &Intensity, k_max: usize) -> f64 {
    let times = uniform_times(T_STAR, 2001);
    let g = inverse_fourier_intensities(&exact_table(intensity, k_max), &times).unwrap();
    let truth: Vec<f64> = times.iter().map(|&t| intensity.eval(t, T_STAR)).collect();
    intensity_l2_error(&truth, &g[0])
}

#[test]
fn eight_modes_recover_g4() {
    let err = series_error(&Intensity::Named(PaperIntensity::G4), 8);
    assert!(err <= 0.12, "{err}");
}

#[test]
fn series_tail_shrinks_with_more_modes() {
    let smooth = Intensity::Tabulated {
        dt: T_STAR / 8.0,
        values: vec![0.0, 1.0, 3.0, 2.0, 2.5, 4.0, 1.0, 0.5, 0.2],
    };
    let e4 = series_error(&smooth, 4);
    let e8 = series_error(&smooth, 8);
    let e16 = series_error(&smooth, 16);
    assert!(e16 < e8 && e8 < e4, "{e4} {e8} {e16}");
    let ratio = e8 / e16;
    assert!((1.4..=4.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn zero_trace_gives_zero_approximation() {
    let grid = Grid2D::new(200.0, 200.0, 21, 21).unwrap();
    let mesh = TimeMesh::new(4000.0, 5000.0, 40, 10).unwrap();
    let trace = BoundarySeries::zeros(grid, mesh.times());
    let times = uniform_times(mesh.t_star, 21);
    let res = approximate_intensities(&[[50.0, 70.0], [140.0, 120.0]], &trace, &grid, &mesh, 1.0, 3, &times).unwrap();
    assert!(res.coefficients.iter().flatten().all(|b| *b == 0.0));
    assert!(res.intensities.iter().flatten().all(|g| *g == 0.0));
}

#[test]
fn diagonal_matrix_balls_are_points() {
    let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
        Complex64::new(1.0, 2.0),
        Complex64::new(-3.0, 0.5),
    ]));
    let balls = gershgorin_balls(&a, &[1.0, 4.0]).unwrap();
    assert_eq!(balls[0].center, Complex64::new(1.0, 2.0));
    assert!(balls.iter().all(|b| b.radius == 0.0));
}

#[test]
fn stability_constant_closed_forms() {
    assert_eq!(stability_constant(1, 10.0, 0.3).unwrap(), 1.0);
    let delta = 3.0;
    let r = 2.0 * 2f64.ln() / (delta * delta);
    assert!((stability_constant(2, delta, r).unwrap() - 0.5).abs() < 1e-15);
    assert!(stability_constant(5, 1.0, 1e-3).is_err());
}

#[test]
fn theorem_weights_keep_balls_off_the_origin() {
    let s = [[150.0, 200.0], [700.0, 300.0], [400.0, 800.0], [850.0, 850.0]];
    let delta = min_pairwise_distance(&s);
    let r = 1e-4;
    assert!(delta > (2.0 * 3f64.ln() / r).sqrt());
    for k in 0..=3 {
        let rep = stability_report(&s, r, k, T_STAR, 1.0).unwrap();
        let c = rep.constant.unwrap();
        for b in &rep.balls {
            assert!(b.distance_from_origin() >= c - 1e-12);
        }
        assert!(rep.min_abs_eigenvalue >= c);
    }
}

fn random_layout(rng: &mut ChaCha8Rng, m: usize, min_distance: f64) -> Vec<[f64; 2]> {
    loop {
        let s: Vec<[f64; 2]> = (0..m).map(|_| [rng.random_range(60.0..1000.0), rng.random_range(60.0..1000.0)]).collect();
        if min_pairwise_distance(&s) >= min_distance {
            return s;
        }
    }
}

#[test]
fn stability_bound_holds_for_the_zero_mode_system() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..30 {
        let m = 2 + trial % 4;
        let s = random_layout(&mut rng, m, 150.0);
        let delta = min_pairwise_distance(&s);
        let r_min = 2.0 * ((m - 1) as f64).ln() / (delta * delta);
        let r = (r_min * rng.random_range(1.1..3.0)).max(2e-5);
        let c = stability_constant(m, delta, r).unwrap();
        let fs = source_adapted_functions(&s, r, 0, T_STAR, 1.0).unwrap();
        let a = mode_matrix(&fs, &s);
        // Weighted system: D⁻¹ A D⁻¹ with D = diag(e^{r|s|²/2}) has unit diagonal.
        let d: Vec<f64> = s.iter().map(|p| (0.5 * r * (p[0] * p[0] + p[1] * p[1])).exp()).collect();
        let b = DMatrix::from_fn(m, m, |l, j| a[(l, j)] / (d[l] * d[j]));
        let sv = b.clone().svd(false, false).singular_values;
        let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(smin >= c - 1e-12, "trial {trial}: σ_min {smin} < C {c}");

        let lambda: Vec<Complex64> = (0..m).map(|_| Complex64::new(rng.random_range(0.5..2.0), 0.0)).collect();
        let dr: Vec<Complex64> = (0..m).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * 1e-6).collect();
        let rhs = &b * nalgebra::DVector::from_vec(lambda.clone()) + nalgebra::DVector::from_vec(dr.clone());
        let sol = b.clone().lu().solve(&rhs).unwrap();
        let dl: f64 = sol.iter().zip(&lambda).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
        let nr: f64 = dr.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        assert!(dl <= nr / c * (1.0 + 1e-9));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gershgorin_union_contains_the_spectrum(seed in any::<u64>(), n in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..5.0)).collect();
        let balls = gershgorin_balls(&a, &p).unwrap();
        for z in a.schur().eigenvalues().unwrap().iter() {
            prop_assert!(in_union(&balls, *z));
        }
    }

    #[test]
    fn relabelling_truth_leaves_errors_unchanged(seed in any::<u64>(), m in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth: Vec<[f64; 2]> = (0..m).map(|_| [rng.random_range(0.0..1000.0), rng.random_range(0.0..1000.0)]).collect();
        let est: Vec<[f64; 2]> = truth.iter().map(|p| [p[0] + rng.random_range(-20.0..20.0), p[1] + rng.random_range(-20.0..20.0)]).collect();
        let mut perm: Vec<usize> = (0..m).collect();
        for i in (1..m).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let shuffled: Vec<[f64; 2]> = perm.iter().map(|&i| truth[i]).collect();
        let e1 = position_error(&truth, &est);
        let e2 = position_error(&shuffled, &est);
        prop_assert!((e1 - e2).abs() <= 1e-12 * e1.max(1e-300));
        let original = assign(&truth, &est);
        let relabelled = assign(&shuffled, &est);
        for i in 0..m {
            prop_assert_eq!(relabelled[i], original[perm[i]]);
        }
    }

    #[test]
    fn source_adapted_zero_mode_matrix_is_hermitian(seed in any::<u64>(), m in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s: Vec<[f64; 2]> = (0..m).map(|_| [rng.random_range(0.0..1000.0), rng.random_range(0.0..1000.0)]).collect();
        let r = rng.random_range(1e-6..1e-4);
        let a = mode_matrix(&source_adapted_functions(&s, r, 0, T_STAR, 1.0).unwrap(), &s);
        prop_assert!((&a - a.adjoint()).norm() <= 1e-12 * a.norm());
    }
}
