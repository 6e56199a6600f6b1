use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use eigeninf::experiment::{eta, run_experiment};
use eigeninf::{Error, ExperimentConfig, Family, MethodSpec};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn small_config() -> ExperimentConfig {
    ExperimentConfig::parse(
        "model = 2:0.5, 1:0.5\n\
         n = 40\n\
         t = 80\n\
         ensemble = 12\n\
         method = analytic m=2\n\
         method = statistical k=3 m=2 warm\n\
         seed = 77\n\
         timing = off\n",
    )
    .unwrap()
}

fn read_dir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect()
}

fn emit_with_threads(cfg: &ExperimentConfig, threads: usize) -> BTreeMap<String, Vec<u8>> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let report = pool.install(|| run_experiment(cfg)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    report.emit(dir.path()).unwrap();
    read_dir(dir.path())
}

#[test]
fn outputs_are_byte_identical_across_runs_and_pools() {
    let cfg = small_config();
    let a = emit_with_threads(&cfg, 1);
    let b = emit_with_threads(&cfg, 1);
    let c = emit_with_threads(&cfg, 3);
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert!(a.contains_key("table.csv"));
    assert!(a.contains_key("estimates_statistical-k3-m2-warm.csv"));
}

#[test]
fn table_schema() {
    let report = run_experiment(&small_config()).unwrap();
    let table = report.table_csv();
    let mut lines = table.lines();
    assert_eq!(
        lines.next(),
        Some("method,n,mean_l1,sd_l1,mean_l2,sd_l2,mean_p1,sd_p1,eta,time_s")
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("analytic-m2,"));
    assert!(rows[1].starts_with("statistical-k3-m2-warm,"));
    for row in rows {
        assert_eq!(row.split(',').count(), 10);
        assert!(row.ends_with(",0.0000000000000000e0"), "{row}");
    }
}

#[test]
fn aggregates_match_the_estimate_files() {
    let report = run_experiment(&small_config()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    report.emit(dir.path()).unwrap();
    for r in &report.methods {
        let label = r.method.label();
        let csv = fs::read_to_string(dir.path().join(format!("estimates_{label}.csv"))).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("sample,l1,l2,p1"));
        let cols: Vec<Vec<f64>> = lines
            .map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect())
            .collect();
        assert_eq!(cols.len(), r.accepted());
        assert!(r.accepted() >= 2);
        let l = cols.len() as f64;
        for d in 0..3 {
            let mean = cols.iter().map(|c| c[d]).sum::<f64>() / l;
            let sd = (cols.iter().map(|c| (c[d] - mean).powi(2)).sum::<f64>() / (l - 1.0)).sqrt();
            assert!((mean - r.means[d]).abs() <= 1e-14 * mean.abs());
            assert!((sd - r.sds[d]).abs() <= 1e-12 * sd.abs());
        }
        let e = DMatrix::from_fn(3, cols.len(), |i, j| cols[j][i]);
        let want = eta(&e).unwrap();
        assert!((want - r.eta.unwrap()).abs() <= 1e-12 * want);

        for a in 1..=2 {
            let hist = fs::read_to_string(dir.path().join(format!("hist_{label}_l{a}.txt"))).unwrap();
            assert_eq!(hist.lines().count(), r.accepted());
        }
        let row = fs::read_to_string(dir.path().join(format!("row_{label}.csv"))).unwrap();
        assert_eq!(row.lines().count(), 2);
    }
}

#[test]
fn single_member_has_no_eta() {
    let mut cfg = small_config();
    cfg.ensemble = 1;
    cfg.methods = vec!["analytic m=2".parse().unwrap()];
    let report = run_experiment(&cfg).unwrap();
    let r = &report.methods[0];
    assert_eq!(r.eta, None);
    if r.accepted() == 1 {
        let row = report.table_csv().lines().nth(1).unwrap().to_string();
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[3], "nan");
        assert_eq!(cols[8], "nan");
    }
    assert!(matches!(
        eta(&DMatrix::<f64>::zeros(3, 1)),
        Err(Error::InsufficientAccepted(1))
    ));
}

#[test]
fn parse_errors_carry_line_numbers() {
    let err = ExperimentConfig::parse("n = 10\n# fine\nt = ten\n").unwrap_err();
    assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    let err = ExperimentConfig::parse("n = 10\nmystery = 1\n").unwrap_err();
    assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    let err = ExperimentConfig::parse("method = bayesian\n").unwrap_err();
    assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
}

#[test]
fn invalid_configs_are_rejected() {
    let base = small_config();
    let cases: Vec<Box<dyn Fn(&mut ExperimentConfig)>> = vec![
        Box::new(|c| c.ensemble = 0),
        Box::new(|c| c.methods.clear()),
        Box::new(|c| c.methods = vec!["analytic m=3".parse().unwrap()]),
        Box::new(|c| c.methods = vec!["statistical k=6 m=2".parse().unwrap()]),
        Box::new(|c| {
            c.methods = vec![MethodSpec::Statistical {
                k: 2,
                m: 2,
                family: Family::Normal,
                warm: false,
            }]
        }),
        Box::new(|c| {
            c.t = 20;
            c.methods = vec!["analytic-dual m=2".parse().unwrap()];
        }),
        Box::new(|c| c.model = vec![(1.0, 0.5), (1.0, 0.5)]),
    ];
    for (i, edit) in cases.iter().enumerate() {
        let mut cfg = base.clone();
        edit(&mut cfg);
        assert!(cfg.validate().is_err(), "case {i}");
        assert!(run_experiment(&cfg).is_err(), "case {i}");
    }
}

#[test]
fn analytic_is_much_faster_than_statistical() {
    let mut cfg = ExperimentConfig::default();
    cfg.ensemble = 10;
    let report = run_experiment(&cfg).unwrap();
    let (a, s) = (report.methods[0].time_s, report.methods[1].time_s);
    assert!(s >= 50.0 * a, "analytic {a} s, statistical {s} s");
}

fn estimates() -> impl Strategy<Value = (DMatrix<f64>, Vec<usize>, Vec<f64>)> {
    (2usize..5, 2usize..20).prop_flat_map(|(rows, cols)| {
        (
            prop::collection::vec(-3.0f64..3.0, rows * cols)
                .prop_map(move |v| DMatrix::from_vec(rows, cols, v)),
            Just((0..cols).collect::<Vec<_>>()).prop_shuffle(),
            prop::collection::vec(-100.0f64..100.0, rows),
        )
    })
}

proptest! {
    #[test]
    fn eta_ignores_sample_order_and_shifts((e, perm, shift) in estimates()) {
        let base = eta(&e).unwrap();
        let permuted = DMatrix::from_fn(e.nrows(), e.ncols(), |i, j| e[(i, perm[j])]);
        let shifted = DMatrix::from_fn(e.nrows(), e.ncols(), |i, j| e[(i, j)] + shift[i]);
        let tol = 1e-9 * base.max(1e-3);
        prop_assert!((eta(&permuted).unwrap() - base).abs() < tol);
        prop_assert!((eta(&shifted).unwrap() - base).abs() < tol);
        prop_assert!(base >= 0.0);
    }

    #[test]
    fn eta_scales_linearly((e, _perm, _shift) in estimates(), c in 0.01f64..100.0) {
        let base = eta(&e).unwrap();
        prop_assert!((eta(&(&e * c)).unwrap() - c * base).abs() < 1e-9 * c * base.max(1e-3));
    }
}
