//! Ensemble benchmark runner: configuration, per-method aggregation, the
//! η spread metric and flat-file output.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mle::{infer_statistical_sample, StatisticalOptions};
use crate::moments::{Family, SpectrumModel};
use crate::optim::SimplexOptions;
use crate::pade::{infer_analytic_sample, InferenceResult, Thresholds};
use crate::wishart::{sample, Field};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodSpec {
    Analytic { m: usize, family: Family },
    Statistical { k: usize, m: usize, family: Family, warm: bool },
}

impl MethodSpec {
    pub fn m(&self) -> usize {
        match *self {
            MethodSpec::Analytic { m, .. } | MethodSpec::Statistical { m, .. } => m,
        }
    }

    /// Short name used in report rows and file names.
    pub fn label(&self) -> String {
        match *self {
            MethodSpec::Analytic { m, family } => match family {
                Family::Normal => format!("analytic-m{m}"),
                Family::Dual => format!("analytic-dual-m{m}"),
            },
            MethodSpec::Statistical { k, m, family, warm } => {
                let fam = if family == Family::Dual { "-dual" } else { "" };
                let w = if warm { "-warm" } else { "" };
                format!("statistical{fam}-k{k}-m{m}{w}")
            }
        }
    }
}

/// `analytic m=2`, `analytic-dual m=2`, `statistical k=3 m=2 warm`, ...
impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            MethodSpec::Analytic { m, family } => {
                let name = if family == Family::Dual { "analytic-dual" } else { "analytic" };
                write!(f, "{name} m={m}")
            }
            MethodSpec::Statistical { k, m, family, warm } => {
                let name = if family == Family::Dual { "statistical-dual" } else { "statistical" };
                write!(f, "{name} k={k} m={m}{}", if warm { " warm" } else { "" })
            }
        }
    }
}

impl FromStr for MethodSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: String| Error::InvalidConfig(format!("method `{s}`: {msg}"));
        let mut words = s.split_whitespace();
        let name = words.next().ok_or_else(|| bad("empty".into()))?;
        let (mut m, mut k, mut warm) = (2usize, 3usize, false);
        for w in words {
            match w.split_once('=') {
                Some(("m", v)) => m = v.parse().map_err(|_| bad(format!("bad m `{v}`")))?,
                Some(("k", v)) => k = v.parse().map_err(|_| bad(format!("bad k `{v}`")))?,
                None if w == "warm" => warm = true,
                _ => return Err(bad(format!("unknown option `{w}`"))),
            }
        }
        match name {
            "analytic" | "analytic-dual" => {
                if warm {
                    return Err(bad("warm start applies to statistical methods".into()));
                }
                let family = if name == "analytic" { Family::Normal } else { Family::Dual };
                Ok(MethodSpec::Analytic { m, family })
            }
            "statistical" | "statistical-dual" => {
                let family = if name == "statistical" { Family::Normal } else { Family::Dual };
                Ok(MethodSpec::Statistical { k, m, family, warm })
            }
            _ => Err(bad(format!("unknown method `{name}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    /// Atoms `(Λ, p)` in the order used for reporting.
    pub model: Vec<(f64, f64)>,
    pub n: usize,
    pub t: usize,
    pub ensemble: usize,
    pub field: Field,
    pub methods: Vec<MethodSpec>,
    pub seed: u64,
    pub output: PathBuf,
    pub thresholds: Thresholds,
    pub starts: usize,
    pub start_seed: u64,
    pub simplex: SimplexOptions,
    /// When false, `time_s` is written as 0 so reports are byte-reproducible.
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let stat = StatisticalOptions::default();
        ExperimentConfig {
            model: vec![(2.0, 0.5), (1.0, 0.5)],
            n: 320,
            t: 640,
            ensemble: 100,
            field: Field::Complex,
            methods: vec![
                MethodSpec::Analytic { m: 2, family: Family::Normal },
                MethodSpec::Statistical { k: 3, m: 2, family: Family::Normal, warm: false },
            ],
            seed: 1,
            output: PathBuf::from("out"),
            thresholds: stat.thresholds,
            starts: stat.starts,
            start_seed: stat.seed,
            simplex: stat.simplex,
            timing: true,
        }
    }
}

impl ExperimentConfig {
    pub fn spectrum(&self) -> Result<SpectrumModel> {
        SpectrumModel::new(&self.model)
    }

    pub fn statistical_options(&self) -> StatisticalOptions {
        StatisticalOptions {
            starts: self.starts,
            seed: self.start_seed,
            simplex: self.simplex,
            thresholds: self.thresholds,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.ensemble < 1 {
            return bad("ensemble must be at least 1".into());
        }
        if self.n < 2 || self.t < 2 {
            return bad("n and t must be at least 2".into());
        }
        let spectrum = self.spectrum()?;
        if spectrum.m() != self.model.len() {
            return bad("model atoms must be distinct".into());
        }
        crate::wishart::multiplicities(&spectrum, self.n)?;
        if self.methods.is_empty() {
            return bad("no methods configured".into());
        }
        for method in &self.methods {
            if method.m() != self.model.len() {
                return bad(format!("{method}: m must equal the number of model atoms"));
            }
            let (family, m, k) = match *method {
                MethodSpec::Analytic { m, family } => (family, m, 2 * m - 1),
                MethodSpec::Statistical { k, m, family, .. } => {
                    if !(3..=5).contains(&k) || k < 2 * m - 1 || m > 3 {
                        return bad(format!("{method}: need m <= 3 and 2m - 1 <= k <= 5"));
                    }
                    (family, m, k)
                }
            };
            if m == 0 {
                return bad(format!("{method}: m must be positive"));
            }
            if family == Family::Dual && self.n >= self.t {
                return bad(format!("{method}: dual methods need n < t"));
            }
            let _ = k;
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment; `method` may repeat.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig {
            methods: Vec::new(),
            ..Default::default()
        };
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse { line: i + 1, msg };
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err("expected `key = value`".into()))?;
            let num = |v: &str| v.parse::<f64>().map_err(|_| err(format!("bad number `{v}`")));
            let int = |v: &str| v.parse::<usize>().map_err(|_| err(format!("bad integer `{v}`")));
            match key {
                "model" => cfg.model = parse_model(value).map_err(err)?,
                "n" => cfg.n = int(value)?,
                "t" => cfg.t = int(value)?,
                "ensemble" => cfg.ensemble = int(value)?,
                "field" => cfg.field = value.parse().map_err(|e: Error| err(e.to_string()))?,
                "method" => cfg
                    .methods
                    .push(value.parse().map_err(|e: Error| err(e.to_string()))?),
                "seed" => cfg.seed = value.parse().map_err(|_| err(format!("bad seed `{value}`")))?,
                "output" => cfg.output = PathBuf::from(value),
                "threshold.imag_rel" => cfg.thresholds.imag_rel = num(value)?,
                "threshold.min_weight" => cfg.thresholds.min_weight = num(value)?,
                "threshold.lambda_min" => cfg.thresholds.lambda_min = num(value)?,
                "threshold.lambda_max" => cfg.thresholds.lambda_max = num(value)?,
                "starts" => cfg.starts = int(value)?,
                "start_seed" => {
                    cfg.start_seed = value.parse().map_err(|_| err(format!("bad seed `{value}`")))?
                }
                "simplex.tolerance" => cfg.simplex.tolerance = num(value)?,
                "simplex.max_evaluations" => cfg.simplex.max_evaluations = int(value)?,
                "simplex.initial_step" => cfg.simplex.initial_step = num(value)?,
                "timing" => {
                    cfg.timing = match value {
                        "on" | "true" => true,
                        "off" | "false" => false,
                        _ => return Err(err(format!("bad timing `{value}`"))),
                    }
                }
                _ => return Err(err(format!("unknown key `{key}`"))),
            }
        }
        if cfg.methods.is_empty() {
            cfg.methods = ExperimentConfig::default().methods;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        ExperimentConfig::parse(&fs::read_to_string(path)?)
    }
}

fn parse_model(v: &str) -> std::result::Result<Vec<(f64, f64)>, String> {
    v.split(',')
        .map(|atom| {
            let (l, p) = atom
                .trim()
                .split_once(':')
                .ok_or_else(|| format!("atom `{atom}` is not `lambda:weight`"))?;
            let l = l.trim().parse::<f64>().map_err(|_| format!("bad eigenvalue `{l}`"))?;
            let p = parse_weight(p.trim()).ok_or_else(|| format!("bad weight `{p}`"))?;
            Ok((l, p))
        })
        .collect()
}

/// Accepts decimals and fractions such as `1/3`.
fn parse_weight(s: &str) -> Option<f64> {
    match s.split_once('/') {
        Some((a, b)) => Some(a.trim().parse::<f64>().ok()? / b.trim().parse::<f64>().ok()?),
        None => s.parse().ok(),
    }
}

/// Every key with its value, in `parse` syntax.
impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let model: Vec<String> = self.model.iter().map(|(l, p)| format!("{l}:{p}")).collect();
        writeln!(f, "model = {}", model.join(", "))?;
        writeln!(f, "n = {}", self.n)?;
        writeln!(f, "t = {}", self.t)?;
        writeln!(f, "ensemble = {}", self.ensemble)?;
        writeln!(f, "field = {}", self.field.name())?;
        for m in &self.methods {
            writeln!(f, "method = {m}")?;
        }
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "output = {}", self.output.display())?;
        writeln!(f, "threshold.imag_rel = {:e}", self.thresholds.imag_rel)?;
        writeln!(f, "threshold.min_weight = {:e}", self.thresholds.min_weight)?;
        writeln!(f, "threshold.lambda_min = {:e}", self.thresholds.lambda_min)?;
        writeln!(f, "threshold.lambda_max = {:e}", self.thresholds.lambda_max)?;
        writeln!(f, "starts = {}", self.starts)?;
        writeln!(f, "start_seed = {}", self.start_seed)?;
        writeln!(f, "simplex.tolerance = {:e}", self.simplex.tolerance)?;
        writeln!(f, "simplex.max_evaluations = {}", self.simplex.max_evaluations)?;
        writeln!(f, "simplex.initial_step = {}", self.simplex.initial_step)?;
        writeln!(f, "timing = {}", if self.timing { "on" } else { "off" })
    }
}

/// Aggregated results of one method over the ensemble.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodReport {
    pub method: MethodSpec,
    pub ensemble: usize,
    /// `(sample index, (λ_1..λ_m, p_1..p_{m-1}))` for accepted samples, in
    /// the configured atom order.
    pub estimates: Vec<(usize, Vec<f64>)>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub eta: Option<f64>,
    pub time_s: f64,
    /// Samples where the method returned an error.
    pub errors: usize,
}

impl MethodReport {
    pub fn accepted(&self) -> usize {
        self.estimates.len()
    }

    /// Estimate matrix with one column per accepted sample.
    pub fn estimate_matrix(&self) -> DMatrix<f64> {
        let rows = self.means.len();
        DMatrix::from_fn(rows, self.estimates.len(), |i, j| self.estimates[j].1[i])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub methods: Vec<MethodReport>,
}

/// `η = sqrt(λ_max(Cov(E)))` for an estimate matrix with one column per
/// sample (covariance divisor `L - 1`).
pub fn eta(e: &DMatrix<f64>) -> Result<f64> {
    let l = e.ncols();
    if l < 2 {
        return Err(Error::InsufficientAccepted(l));
    }
    let mean = e.column_mean();
    let mut centered = e.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let cov = &centered * centered.transpose() / (l as f64 - 1.0);
    let top = cov
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(0.0f64, f64::max);
    Ok(top.sqrt())
}

/// Orders an accepted model like `truth_config`: estimates sorted by
/// decreasing `Λ` are paired with the truth sorted the same way.
pub fn match_to_truth(estimate: &SpectrumModel, truth_config: &[(f64, f64)]) -> Option<Vec<f64>> {
    let m = truth_config.len();
    if estimate.m() != m {
        return None;
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| truth_config[b].0.total_cmp(&truth_config[a].0));
    // estimate atoms are already sorted descending
    let mut lambdas = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for (rank, &slot) in order.iter().enumerate() {
        lambdas[slot] = estimate.lambdas()[rank];
        weights[slot] = estimate.weights()[rank];
    }
    lambdas.extend_from_slice(&weights[..m - 1]);
    Some(lambdas)
}

struct Outcome {
    estimate: Option<Vec<f64>>,
    error: bool,
    seconds: f64,
}

fn run_method(
    method: &MethodSpec,
    s: &crate::wishart::SampleSet,
    cfg: &ExperimentConfig,
    analytic_cache: &mut Option<Option<SpectrumModel>>,
) -> Result<InferenceResult> {
    match *method {
        MethodSpec::Analytic { m, family } => infer_analytic_sample(s, m, family, &cfg.thresholds),
        MethodSpec::Statistical { k, m, family, warm } => {
            let start = if warm {
                analytic_cache
                    .get_or_insert_with(|| {
                        infer_analytic_sample(s, m, Family::Normal, &cfg.thresholds)
                            .ok()
                            .filter(|r| r.is_accepted())
                            .and_then(|r| r.model)
                    })
                    .clone()
            } else {
                None
            };
            infer_statistical_sample(s, k, family, start.as_ref(), m, &cfg.statistical_options())
        }
    }
}

fn run_member(cfg: &ExperimentConfig, truth: &SpectrumModel, index: usize) -> Vec<Outcome> {
    let seed = cfg.seed ^ index as u64;
    let sample = match sample(truth, cfg.n, cfg.t, cfg.field, seed) {
        Ok(s) => s,
        Err(_) => {
            return cfg
                .methods
                .iter()
                .map(|_| Outcome {
                    estimate: None,
                    error: true,
                    seconds: 0.0,
                })
                .collect()
        }
    };
    let mut cache = None;
    cfg.methods
        .iter()
        .map(|method| {
            let clock = Instant::now();
            let result = run_method(method, &sample, cfg, &mut cache);
            let seconds = clock.elapsed().as_secs_f64();
            let estimate = match &result {
                Ok(r) if r.is_accepted() => r
                    .model
                    .as_ref()
                    .and_then(|m| match_to_truth(m, &cfg.model)),
                _ => None,
            };
            Outcome {
                estimate,
                error: result.is_err(),
                seconds,
            }
        })
        .collect()
}

/// Runs every configured method on `ensemble` seeded samples
/// (seed = base XOR index). Members run on the rayon pool and are reduced
/// in index order, so results do not depend on scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let truth = cfg.spectrum()?;
    let outcomes: Vec<Vec<Outcome>> = (0..cfg.ensemble)
        .into_par_iter()
        .map(|i| run_member(cfg, &truth, i))
        .collect();
    let methods = cfg
        .methods
        .iter()
        .enumerate()
        .map(|(mi, method)| {
            let dims = 2 * method.m() - 1;
            let estimates: Vec<(usize, Vec<f64>)> = outcomes
                .iter()
                .enumerate()
                .filter_map(|(i, o)| o[mi].estimate.clone().map(|e| (i, e)))
                .collect();
            let errors = outcomes.iter().filter(|o| o[mi].error).count();
            let time_s = if cfg.timing {
                outcomes.iter().map(|o| o[mi].seconds).sum()
            } else {
                0.0
            };
            let (means, sds) = mean_sd(&estimates, dims);
            let mut report = MethodReport {
                method: *method,
                ensemble: cfg.ensemble,
                estimates,
                means,
                sds,
                eta: None,
                time_s,
                errors,
            };
            report.eta = eta(&report.estimate_matrix()).ok();
            report
        })
        .collect();
    Ok(ExperimentReport {
        config: cfg.clone(),
        methods,
    })
}

fn mean_sd(estimates: &[(usize, Vec<f64>)], dims: usize) -> (Vec<f64>, Vec<f64>) {
    let n = estimates.len() as f64;
    let means: Vec<f64> = (0..dims)
        .map(|d| estimates.iter().map(|e| e.1[d]).sum::<f64>() / n)
        .collect();
    let sds = (0..dims)
        .map(|d| {
            if estimates.len() < 2 {
                return f64::NAN;
            }
            let ss: f64 = estimates.iter().map(|e| (e.1[d] - means[d]).powi(2)).sum();
            (ss / (n - 1.0)).sqrt()
        })
        .collect();
    (means, sds)
}

fn fmt17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        "nan".to_string()
    }
}

impl ExperimentReport {
    fn atoms(&self) -> usize {
        self.config.model.len()
    }

    /// `method,n,mean_l1,sd_l1,...,mean_p1,sd_p1,...,eta,time_s`.
    pub fn table_header(&self) -> String {
        let m = self.atoms();
        let mut cols = vec!["method".to_string(), "n".to_string()];
        for i in 1..=m {
            cols.push(format!("mean_l{i}"));
            cols.push(format!("sd_l{i}"));
        }
        for i in 1..m {
            cols.push(format!("mean_p{i}"));
            cols.push(format!("sd_p{i}"));
        }
        cols.push("eta".into());
        cols.push("time_s".into());
        cols.join(",")
    }

    fn table_row(r: &MethodReport) -> String {
        let m = r.means.len().div_ceil(2);
        let mut cols = vec![r.method.label(), r.accepted().to_string()];
        // λ columns first, then p columns
        for d in (0..m).chain(m..r.means.len()) {
            cols.push(fmt17(r.means[d]));
            cols.push(fmt17(r.sds[d]));
        }
        cols.push(r.eta.map_or("nan".to_string(), fmt17));
        cols.push(fmt17(r.time_s));
        cols.join(",") + "\n"
    }

    pub fn table_csv(&self) -> String {
        let mut out = self.table_header() + "\n";
        for r in &self.methods {
            out.push_str(&Self::table_row(r));
        }
        out
    }

    /// Writes `table.csv`, and per method `row_<method>.csv`,
    /// `estimates_<method>.csv` and one histogram file
    /// per eigenvalue, `hist_<method>_l<i>.txt`, into `dir`.
    pub fn emit(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut put = |name: String, body: String| -> Result<()> {
            let path = dir.join(name);
            fs::write(&path, body)?;
            written.push(path);
            Ok(())
        };
        put("table.csv".into(), self.table_csv())?;
        let m = self.atoms();
        for r in &self.methods {
            let label = r.method.label();
            put(
                format!("row_{label}.csv"),
                self.table_header() + "\n" + &Self::table_row(r),
            )?;
            let mut header = vec!["sample".to_string()];
            header.extend((1..=m).map(|i| format!("l{i}")));
            header.extend((1..m).map(|i| format!("p{i}")));
            let mut body = header.join(",") + "\n";
            for (i, e) in &r.estimates {
                let cols: Vec<String> = e.iter().map(|v| fmt17(*v)).collect();
                body.push_str(&format!("{i},{}\n", cols.join(",")));
            }
            put(format!("estimates_{label}.csv"), body)?;
            for a in 0..m {
                let body: String = r
                    .estimates
                    .iter()
                    .map(|(_, e)| fmt17(e[a]) + "\n")
                    .collect();
                put(format!("hist_{label}_l{}.txt", a + 1), body)?;
            }
        }
        Ok(written)
    }
}
