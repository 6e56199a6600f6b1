use eigeninf::experiment::eta;
use eigeninf::mle::{
    decode, det_sign, detq_sign_map, dispersion_matrix, encode, exact_det_sign,
    expected_s_moments, fluctuation_vector, gaussian_objective, infer_statistical,
    infer_statistical_sample, nearest_fraction, objective_eval, Objective, SignMapGrid,
    StatisticalOptions,
};
use num_rational::BigRational;
use eigeninf::wishart::{null_traces, sample};
use eigeninf::{Error, Family, Field, SpectrumModel};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn half_and_half() -> SpectrumModel {
    SpectrumModel::new(&[(2.0, 0.5), (1.0, 0.5)]).unwrap()
}

fn two(l1: f64, l2: f64, p: f64) -> SpectrumModel {
    SpectrumModel::new(&[(l1, p), (l2, 1.0 - p)]).unwrap()
}

/// Objective whose traces equal their expectation under `theta`.
fn exact_objective(theta: &SpectrumModel, r: f64, n: usize, k: usize, family: Family) -> Objective {
    let alpha = expected_s_moments(theta, r, k, family).unwrap();
    Objective {
        traces: alpha.iter().map(|a| a * n as f64).collect(),
        r,
        n,
        k,
        family,
        beta_scale: 1.0,
    }
}

fn model_distance(a: &SpectrumModel, b: &SpectrumModel) -> f64 {
    a.atoms()
        .zip(b.atoms())
        .map(|((l1, p1), (l2, p2))| (l1 - l2).abs().max((p1 - p2).abs()))
        .fold(0.0, f64::max)
}

fn warm_only() -> StatisticalOptions {
    StatisticalOptions {
        starts: 1,
        ..Default::default()
    }
}

#[test]
fn fluctuations_vanish_at_expected_traces() {
    for family in [Family::Normal, Family::Dual] {
        let obj = exact_objective(&half_and_half(), 0.5, 320, 4, family);
        let v = fluctuation_vector(&obj.traces, &half_and_half(), 0.5, 320, 4, family).unwrap();
        assert!(v.iter().all(|x| x.abs() < 1e-9), "{v:?}");
    }
}

#[test]
fn first_fluctuation_is_linear_in_the_atoms() {
    let obj = exact_objective(&half_and_half(), 0.5, 320, 3, Family::Normal);
    let delta = 1e-3;
    let moved = SpectrumModel::new(&[(2.0 + delta, 0.5), (1.0, 0.5)]).unwrap();
    let v = fluctuation_vector(&obj.traces, &moved, 0.5, 320, 3, Family::Normal).unwrap();
    assert!((v[0] + 320.0 * 0.5 * delta).abs() < 1e-9, "{}", v[0]);
}

#[test]
fn first_fluctuation_has_variance_r_times_beta_scale() {
    let (n, t) = (400, 800);
    let r = n as f64 / t as f64;
    let id = SpectrumModel::single(1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for field in [Field::Complex, Field::Real] {
        let v1: Vec<f64> = (0..10_000)
            .map(|_| {
                let tr = null_traces(n, t, field, 1, &mut rng);
                fluctuation_vector(&tr, &id, r, n, 1, Family::Normal).unwrap()[0]
            })
            .collect();
        let mean = v1.iter().sum::<f64>() / v1.len() as f64;
        let var = v1.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v1.len() - 1) as f64;
        let want = r * field.beta_scale();
        assert!(mean.abs() < 4.0 * (want / v1.len() as f64).sqrt(), "{field:?}: mean {mean}");
        assert!((var / want - 1.0).abs() < 0.05, "{field:?}: var {var} vs {want}");
    }
}

#[test]
fn objective_reference_values() {
    let q = DMatrix::<f64>::identity(4, 4);
    let e = gaussian_objective(&q, &[1.0; 4]);
    assert!((e.value - 4.0).abs() < 1e-15);
    assert!(e.psd);

    let theta = half_and_half();
    let q = dispersion_matrix(&theta, 0.5, 3, Family::Normal, 1.0).unwrap();
    let e = gaussian_objective(q.matrix(), &[0.0; 3]);
    assert!((e.value - q.matrix().determinant().ln()).abs() < 1e-12);

    let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
    let e = gaussian_objective(&bad, &[1.0, 0.0]);
    assert_eq!(e.value, f64::INFINITY);
    assert!(!e.psd && e.det_q < 0.0);
}

#[test]
fn truth_beats_nearby_models() {
    let obj = exact_objective(&half_and_half(), 0.5, 320, 3, Family::Normal);
    let g = |m: &SpectrumModel| objective_eval(&obj, m).unwrap().value;
    let at_truth = g(&half_and_half());
    assert!(at_truth < g(&two(3.0, 1.0, 0.5)));
    assert!(at_truth < g(&two(2.0, 1.0, 0.9)));
}

#[test]
fn gradient_at_truth_comes_from_ln_det_q() {
    let truth = half_and_half();
    // the quadratic part contributes O(N² h²) to a central difference
    let h = 1e-7;
    let mut grads = Vec::new();
    for n in [320, 3200] {
        let obj = exact_objective(&truth, 0.5, n, 3, Family::Normal);
        let g = |l1: f64, l2: f64, p: f64| objective_eval(&obj, &two(l1, l2, p)).unwrap().value;
        let ld = |l1: f64, l2: f64, p: f64| {
            dispersion_matrix(&two(l1, l2, p), 0.5, 3, Family::Normal, 1.0)
                .unwrap()
                .matrix()
                .determinant()
                .ln()
        };
        let fd = |f: &dyn Fn(f64, f64, f64) -> f64| {
            [
                (f(2.0 + h, 1.0, 0.5) - f(2.0 - h, 1.0, 0.5)) / (2.0 * h),
                (f(2.0, 1.0 + h, 0.5) - f(2.0, 1.0 - h, 0.5)) / (2.0 * h),
                (f(2.0, 1.0, 0.5 + h) - f(2.0, 1.0, 0.5 - h)) / (2.0 * h),
            ]
        };
        let (dg, dl) = (fd(&g), fd(&ld));
        for (a, b) in dg.iter().zip(&dl) {
            assert!((a - b).abs() < 1e-5 * b.abs().max(1.0), "N = {n}: {dg:?} vs {dl:?}");
        }
        grads.push(dg);
    }
    // independent of N
    for (a, b) in grads[0].iter().zip(&grads[1]) {
        assert!((a - b).abs() < 1e-5 * a.abs());
    }
}

#[test]
fn warm_start_at_truth_stays_there() {
    let truth = half_and_half();
    let mut offsets = Vec::new();
    for n in [320, 3200] {
        let obj = exact_objective(&truth, 0.5, n, 3, Family::Normal);
        let res = infer_statistical(&obj, 2, Some(&truth), &warm_only()).unwrap();
        assert!(res.is_accepted());
        offsets.push(model_distance(res.model.as_ref().unwrap(), &truth));
    }
    assert!(offsets[0] < 1e-3, "{offsets:?}");
    // the ln det Q pull shifts the minimiser by O(1/N²)
    assert!(offsets[1] < offsets[0] / 50.0, "{offsets:?}");
}

#[test]
fn rescaling_q_shifts_ln_det_and_keeps_the_argmin() {
    let truth = half_and_half();
    let c = 2.0;
    let q = dispersion_matrix(&truth, 0.5, 3, Family::Normal, 1.0).unwrap();
    let qc = dispersion_matrix(&truth, 0.5, 3, Family::Normal, c).unwrap();
    let (g, gc) = (gaussian_objective(q.matrix(), &[0.0; 3]), gaussian_objective(qc.matrix(), &[0.0; 3]));
    assert!((gc.value - g.value - 3.0 * c.ln()).abs() < 1e-12);

    for (n, tol) in [(320, 2e-3), (3200, 2e-5)] {
        let obj = exact_objective(&truth, 0.5, n, 3, Family::Normal);
        let scaled = Objective { beta_scale: c, ..obj.clone() };
        let a = infer_statistical(&obj, 2, Some(&truth), &warm_only()).unwrap();
        let b = infer_statistical(&scaled, 2, Some(&truth), &warm_only()).unwrap();
        let d = model_distance(a.model.as_ref().unwrap(), b.model.as_ref().unwrap());
        assert!(d < tol, "N = {n}: argmins differ by {d}");
    }
}

fn random_theta() -> impl Strategy<Value = SpectrumModel> {
    (0.3f64..3.0, 0.3f64..3.0, 0.1f64..0.9)
        .prop_filter("distinct", |(a, b, _)| (a / b - 1.0).abs() > 0.05)
        .prop_map(|(a, b, p)| two(a, b, p))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn objective_solve_is_accurate(
        theta in random_theta(),
        noise in prop::collection::vec(-2.0f64..2.0, 5),
        k in 3usize..=5,
        r in 0.05f64..0.9,
    ) {
        let mut obj = exact_objective(&theta, r, 200, k, Family::Normal);
        for (t, e) in obj.traces.iter_mut().zip(&noise) {
            *t += e;
        }
        let e = objective_eval(&obj, &theta).unwrap();
        if e.value.is_finite() {
            prop_assert!(e.residual < 1e-10, "{}", e.residual);
        }
    }

    #[test]
    fn determinant_sign_matches_eigenvalue_product(theta in random_theta(), k in 3usize..=5, r in 0.001f64..0.9) {
        let q = dispersion_matrix(&theta, r, k, Family::Normal, 1.0).unwrap();
        let eig = q.matrix().clone().symmetric_eigenvalues();
        let product: f64 = eig.iter().product();
        let bound: f64 = q.matrix().column_iter().map(|c| c.norm()).product();
        let s = det_sign(q.matrix());
        if product.abs() > 1e-9 * bound {
            prop_assert_eq!(s as f64, product.signum());
            let e = gaussian_objective(q.matrix(), &vec![0.0; k]);
            prop_assert_eq!(e.det_q.signum(), product.signum());
            prop_assert_eq!(e.psd, eig.iter().all(|v| *v > 0.0));
        }
    }

    #[test]
    fn encode_inverts_decode(u in prop::collection::vec(-2.0f64..2.0, 5)) {
        let model = decode(&u, 3).unwrap();
        prop_assume!(model.m() == 3);
        let back = encode(&model, 3).unwrap();
        let again = decode(&back, 3).unwrap();
        prop_assert!(model_distance(&model, &again) < 1e-12);
    }
}

#[test]
fn statistical_argument_checks() {
    let obj = exact_objective(&half_and_half(), 0.5, 100, 3, Family::Normal);
    let opts = StatisticalOptions::default();
    assert!(matches!(infer_statistical(&obj, 3, None, &opts), Err(Error::InvalidConfig(_))));
    assert!(matches!(infer_statistical(&obj, 4, None, &opts), Err(Error::InvalidConfig(_))));
    let wide = exact_objective(&half_and_half(), 0.5, 100, 6, Family::Normal);
    assert!(matches!(infer_statistical(&wide, 2, None, &opts), Err(Error::InvalidConfig(_))));
    let nan = Objective {
        traces: vec![f64::NAN; 3],
        ..obj
    };
    assert!(matches!(infer_statistical(&nan, 2, None, &opts), Err(Error::NoFeasibleMinimum)));
}

#[test]
fn statistical_runs_are_reproducible() {
    let s = sample(&half_and_half(), 60, 120, Field::Complex, 2).unwrap();
    let opts = StatisticalOptions::default();
    let a = infer_statistical_sample(&s, 3, Family::Normal, None, 2, &opts).unwrap();
    let b = infer_statistical_sample(&s, 3, Family::Normal, None, 2, &opts).unwrap();
    assert_eq!(a, b);
    let d = infer_statistical_sample(&s, 3, Family::Dual, None, 2, &opts).unwrap();
    assert_eq!(d.family, Family::Dual);
    assert!(d.minimizer.unwrap().feasible_starts > 0);
}

#[test]
fn larger_dispersion_matrix_tightens_estimates() {
    let model = SpectrumModel::new(&[(0.5, 1.0 / 3.0), (1.0, 2.0 / 3.0)]).unwrap();
    let opts = StatisticalOptions::default();
    let mut cols: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for i in 0..100u64 {
        let s = sample(&model, 126, 180, Field::Complex, 1260 + i).unwrap();
        let est: Vec<Option<SpectrumModel>> = [3, 4]
            .iter()
            .map(|&k| {
                infer_statistical_sample(&s, k, Family::Normal, None, 2, &opts)
                    .ok()
                    .filter(|r| r.is_accepted())
                    .and_then(|r| r.model)
            })
            .collect();
        // same samples for both sizes
        if let (Some(a), Some(b)) = (&est[0], &est[1]) {
            for (c, m) in cols.iter_mut().zip([a, b]) {
                c.extend([m.lambdas()[1], m.lambdas()[0], m.weights()[1]]);
            }
        }
    }
    let etas: Vec<f64> = cols
        .iter()
        .map(|c| eta(&DMatrix::from_column_slice(3, c.len() / 3, c)).unwrap())
        .collect();
    assert!(cols[0].len() / 3 >= 90);
    assert!(etas[1] <= etas[0], "k = 3: {}, k = 4: {}", etas[0], etas[1]);
}

#[test]
fn sign_map_shape_and_outputs() {
    let (ls, ps) = SignMapGrid::axes(30, 20, 3.0);
    assert_eq!(ls[29], 3.0);
    assert!((ps[0] - 0.025).abs() < 1e-15);
    let grid = detq_sign_map(0.1, 3, Family::Normal, &ls, &ps).unwrap();
    assert_eq!(grid.cells.len(), 600);
    assert_eq!((grid.width(), grid.height()), (30, 20));
    let total: f64 = [-1, 0, 1].iter().map(|s| grid.fraction(*s)).sum();
    assert!((total - 1.0).abs() < 1e-15);

    let mut pgm = Vec::new();
    grid.write_pgm(&mut pgm).unwrap();
    let pgm = String::from_utf8(pgm).unwrap();
    let mut lines = pgm.lines();
    assert_eq!(lines.next(), Some("P2"));
    assert_eq!(lines.next(), Some("30 20"));
    assert_eq!(lines.next(), Some("255"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().all(|r| r.split(' ').count() == 30));
    // top row is the largest p
    let top: Vec<i8> = (0..30).map(|i| grid.sign(i, 19)).collect();
    let shade = |s: &i8| match s {
        -1 => "0",
        0 => "128",
        _ => "255",
    };
    assert_eq!(rows[0], top.iter().map(shade).collect::<Vec<_>>().join(" "));

    let mut csv = Vec::new();
    grid.write_csv(&mut csv).unwrap();
    let csv = String::from_utf8(csv).unwrap();
    assert_eq!(csv.lines().next(), Some("lambda_s,p,sign"));
    assert_eq!(csv.lines().count(), 601);

    assert!(detq_sign_map(0.1, 3, Family::Normal, &[0.0, 1.0], &ps).is_err());
    assert!(detq_sign_map(0.1, 3, Family::Normal, &ls, &[0.5, 1.0]).is_err());
}

#[test]
fn single_atom_line_is_flat_in_p() {
    for family in [Family::Normal, Family::Dual] {
        let single = dispersion_matrix(&SpectrumModel::single(1.0).unwrap(), 0.1, 3, family, 1.0)
            .unwrap()
            .matrix()
            .determinant();
        for p in [0.1, 0.3, 0.5, 0.9] {
            let det = |ls: f64| {
                dispersion_matrix(&SpectrumModel::two_atom(ls, p).unwrap(), 0.1, 3, family, 1.0)
                    .unwrap()
                    .matrix()
                    .determinant()
            };
            assert_eq!(det(1.0), single);
            // continuous across the line
            for ls in [1.0 - 1e-6, 1.0 + 1e-6] {
                assert!((det(ls) - single).abs() < 1e-4 * single.abs(), "{family:?} p = {p}");
            }
        }
    }
}

#[test]
fn sign_map_agrees_with_direct_determinants() {
    let ls = [0.5, 1.5, 2.5];
    let ps = [0.25, 0.5, 0.75];
    for k in [3, 5] {
        for family in [Family::Normal, Family::Dual] {
            let grid = detq_sign_map(0.1, k, family, &ls, &ps).unwrap();
            for (j, p) in ps.iter().enumerate() {
                for (i, l) in ls.iter().enumerate() {
                    let q = dispersion_matrix(&SpectrumModel::two_atom(*l, *p).unwrap(), 0.1, k, family, 1.0).unwrap();
                    let eig = q.matrix().clone().symmetric_eigenvalues();
                    let want = eig.iter().product::<f64>().signum() as i8;
                    assert_eq!(grid.sign(i, j), want, "{family:?} k = {k} at ({l}, {p})");
                }
            }
        }
    }
}

#[test]
fn grid_coordinates_are_read_back_as_fractions() {
    let (ls, ps) = SignMapGrid::axes(200, 200, 3.0);
    for (i, l) in ls.iter().enumerate() {
        let want = BigRational::new((3 * (i as i64 + 1)).into(), 200.into());
        assert_eq!(nearest_fraction(*l, 1 << 20), Some(want));
    }
    for (j, p) in ps.iter().enumerate() {
        let want = BigRational::new((2 * j as i64 + 1).into(), 400.into());
        assert_eq!(nearest_fraction(*p, 1 << 20), Some(want));
    }
    assert_eq!(nearest_fraction(1.0 / 3.0, 100), Some(BigRational::new(1.into(), 3.into())));
    assert_eq!(nearest_fraction(0.001, 1 << 20), Some(BigRational::new(1.into(), 1000.into())));
    assert_eq!(nearest_fraction(f64::NAN, 10), None);
}

#[test]
fn exact_signs_fill_every_cell() {
    let (ls, ps) = SignMapGrid::axes(20, 20, 3.0);
    for (r, k, family) in [(0.1, 5, Family::Normal), (0.001, 5, Family::Normal), (0.5, 4, Family::Dual)] {
        let grid = detq_sign_map(r, k, family, &ls, &ps).unwrap();
        assert_eq!(grid.fraction(0), 0.0, "r = {r} k = {k} {family:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn exact_sign_agrees_with_resolved_float_sign(
        ls in 0.05f64..3.0,
        p in 0.05f64..0.95,
        r in prop::sample::select(vec![0.001, 0.1, 0.5, 0.9]),
        k in 3usize..=5,
        dual in any::<bool>(),
    ) {
        let family = if dual { Family::Dual } else { Family::Normal };
        // quarter-steps so the exact model equals the float one
        let (ls, p) = ((ls * 400.0).round() / 400.0, (p * 400.0).round() / 400.0);
        prop_assume!(ls != 1.0);
        let theta = SpectrumModel::two_atom(ls, p).unwrap();
        let q = dispersion_matrix(&theta, r, k, family, 1.0).unwrap();
        let float = det_sign(q.matrix());
        let exact = exact_det_sign(&theta, r, k, family).unwrap();
        prop_assert_ne!(exact, 0);
        if float != 0 {
            prop_assert_eq!(float, exact);
        }
    }
}
