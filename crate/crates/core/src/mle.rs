//! Two-point (statistical) eigen-inference: fluctuation vector, dispersion
//! matrix, the Gaussian objective `g = v Q⁻¹ v + ln det Q`, its minimisation
//! and `det Q` sign maps.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::moments::{
    double_moments_from_single, dual_double_moments, dual_towers, sigma_to_s_moments, Direction,
    DoubleMomentMatrix, Family, SpectrumModel,
};
use crate::optim::{nelder_mead, SimplexOptions};
use crate::relations::{cached_double, cached_forward, RelationKind, RelationTable, Target};
use crate::pade::{classify, InferenceResult, MinimizerReport, RawAtom, Thresholds};
use crate::wishart::SampleSet;

/// Measured data entering `g`.
#[derive(Clone, Debug, PartialEq)]
pub struct Objective {
    /// `tr S^j` (normal) or `tr S^{-j}` (dual), `j = 1..=k`.
    pub traces: Vec<f64>,
    pub r: f64,
    pub n: usize,
    pub k: usize,
    pub family: Family,
    pub beta_scale: f64,
}

impl Objective {
    pub fn from_sample(s: &SampleSet, k: usize, family: Family) -> Result<Self> {
        Ok(Objective {
            traces: s.traces(k, family)?,
            r: s.r(),
            n: s.n,
            k,
            family,
            beta_scale: s.field.beta_scale(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    /// `g`, or `+∞` when `det Q <= 0`.
    pub value: f64,
    pub det_q: f64,
    /// `Q` admits a Cholesky factorisation.
    pub psd: bool,
    /// `‖Q y - v‖ / (‖Q‖ ‖y‖ + ‖v‖)` for the solve `Q y = v`.
    pub residual: f64,
}

/// Expected moments `α_1..α_order` of `S` (or `α_{-1}..`) under `theta`.
pub fn expected_s_moments(theta: &SpectrumModel, r: f64, order: usize, family: Family) -> Result<Vec<f64>> {
    let m = match family {
        Family::Normal => sigma_to_s_moments(&theta.moments(order), r, order)?,
        Family::Dual => dual_towers(&theta.dual_moments(order), r, order, Direction::SigmaToS)?,
    };
    Ok(m.values().to_vec())
}

/// `v_j = t_j - N α_j^S(Θ)`.
pub fn fluctuation_vector(
    traces: &[f64],
    theta: &SpectrumModel,
    r: f64,
    n: usize,
    k: usize,
    family: Family,
) -> Result<Vec<f64>> {
    let alpha = expected_s_moments(theta, r, k, family)?;
    Ok(traces
        .iter()
        .zip(alpha)
        .take(k)
        .map(|(t, a)| t - n as f64 * a)
        .collect())
}

/// `Q(Θ)` scaled by `beta_scale`.
pub fn dispersion_matrix(
    theta: &SpectrumModel,
    r: f64,
    k: usize,
    family: Family,
    beta_scale: f64,
) -> Result<DoubleMomentMatrix> {
    let q = match family {
        Family::Normal => {
            let s = sigma_to_s_moments(&theta.moments(2 * k), r, 2 * k)?;
            double_moments_from_single(&s, k)?
        }
        Family::Dual => {
            let order = 2 * k + 2;
            let s = dual_towers(&theta.dual_moments(order), r, order, Direction::SigmaToS)?;
            dual_double_moments(&s, k)?
        }
    };
    Ok(q.with_beta_scale(beta_scale))
}

/// `g = vᵀ Q⁻¹ v + ln det Q` through an LU solve.
pub fn gaussian_objective(q: &DMatrix<f64>, v: &[f64]) -> Evaluation {
    let v = DVector::from_column_slice(v);
    let psd = q.clone().cholesky().is_some();
    let lu = q.clone().lu();
    let det_q = lu.determinant();
    if !(det_q > 0.0) {
        return Evaluation {
            value: f64::INFINITY,
            det_q,
            psd,
            residual: f64::NAN,
        };
    }
    let Some(y) = lu.solve(&v) else {
        return Evaluation {
            value: f64::INFINITY,
            det_q,
            psd,
            residual: f64::NAN,
        };
    };
    let residual = (q * &y - &v).norm() / (q.norm() * y.norm() + v.norm()).max(f64::MIN_POSITIVE);
    Evaluation {
        value: v.dot(&y) + det_q.ln(),
        det_q,
        psd,
        residual,
    }
}

pub fn objective_eval(obj: &Objective, theta: &SpectrumModel) -> Result<Evaluation> {
    let v = fluctuation_vector(&obj.traces, theta, obj.r, obj.n, obj.k, obj.family)?;
    let q = dispersion_matrix(theta, obj.r, obj.k, obj.family, obj.beta_scale)?;
    Ok(gaussian_objective(q.matrix(), &v))
}

/// Maps unconstrained coordinates `(ln Λ_1..ln Λ_m, w_1..w_{m-1})` to a
/// model; weights are `softmax(w_1, .., w_{m-1}, 0)`.
pub fn decode(u: &[f64], m: usize) -> Result<SpectrumModel> {
    let mut logits: Vec<f64> = u[m..].to_vec();
    logits.push(0.0);
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|w| (w - top).exp()).collect();
    let total: f64 = e.iter().sum();
    let atoms: Vec<(f64, f64)> = u[..m]
        .iter()
        .zip(&e)
        .map(|(l, w)| (l.exp(), w / total))
        .collect();
    SpectrumModel::new(&atoms)
}

/// Inverse of [`decode`] for a model with exactly `m` atoms.
pub fn encode(model: &SpectrumModel, m: usize) -> Option<Vec<f64>> {
    if model.m() != m {
        return None;
    }
    let mut u: Vec<f64> = model.lambdas().iter().map(|l| l.ln()).collect();
    let last = model.weights()[m - 1].ln();
    u.extend(model.weights()[..m - 1].iter().map(|p| p.ln() - last));
    Some(u)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StatisticalOptions {
    /// Total number of starts, the warm start included.
    pub starts: usize,
    /// Seed of the deterministic Latin-hypercube start spread.
    pub seed: u64,
    pub simplex: SimplexOptions,
    pub thresholds: Thresholds,
}

impl Default for StatisticalOptions {
    fn default() -> Self {
        StatisticalOptions {
            starts: 8,
            seed: 0x5eed,
            simplex: SimplexOptions::default(),
            thresholds: Thresholds::default(),
        }
    }
}

/// Latin-hypercube start points: `Λ` log-uniform in `[0.2 s, 3 s]`,
/// stick-breaking weight fractions uniform in `(0.1, 0.9)`.
pub fn start_points(scale: f64, m: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    if count == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = 2 * m - 1;
    let strata: Vec<Vec<usize>> = (0..dims)
        .map(|_| {
            let mut p: Vec<usize> = (0..count).collect();
            p.shuffle(&mut rng);
            p
        })
        .collect();
    let (lo, hi) = ((0.2 * scale).ln(), (3.0 * scale).ln());
    (0..count)
        .map(|s| {
            let frac = |d: usize| (strata[d][s] as f64 + 0.5) / count as f64;
            let lambdas: Vec<f64> = (0..m).map(|d| (lo + frac(d) * (hi - lo)).exp()).collect();
            // stick-breaking: p_1 = q_1, p_2 = (1 - p_1) q_2, ...
            let mut weights = Vec::with_capacity(m);
            let mut rest = 1.0;
            for d in 0..m - 1 {
                let q = 0.1 + 0.8 * frac(m + d);
                weights.push(rest * q);
                rest *= 1.0 - q;
            }
            weights.push(rest);
            let mut u: Vec<f64> = lambdas.iter().map(|l| l.ln()).collect();
            let last = weights[m - 1].ln();
            u.extend(weights[..m - 1].iter().map(|w| w.ln() - last));
            u
        })
        .collect()
}

/// Minimises `g` over `m`-atom models.
pub fn infer_statistical(
    obj: &Objective,
    m: usize,
    warm_start: Option<&SpectrumModel>,
    opts: &StatisticalOptions,
) -> Result<InferenceResult> {
    if !(1..=3).contains(&m) || !(3..=5).contains(&obj.k) || obj.k < 2 * m - 1 {
        return Err(Error::InvalidConfig(format!(
            "statistical method needs m <= 3, 3 <= k <= 5 and k >= 2m - 1 (m = {m}, k = {})",
            obj.k
        )));
    }
    let n = obj.n as f64;
    let scale = match obj.family {
        Family::Normal => obj.traces[0] / n,
        Family::Dual => 1.0 / ((1.0 - obj.r) * obj.traces[0] / n),
    };
    let mut starts: Vec<Vec<f64>> = Vec::new();
    if let Some(u) = warm_start.and_then(|w| encode(w, m)) {
        starts.push(u);
    }
    let spread = opts.starts.saturating_sub(starts.len());
    starts.extend(start_points(scale, m, spread, opts.seed));

    let mut hit_barrier = false;
    let mut evaluations = 0;
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut feasible_starts = 0;
    for x0 in &starts {
        let res = nelder_mead(
            |u| {
                let value = decode(u, m)
                    .ok()
                    .filter(|t| t.m() == m)
                    .and_then(|t| objective_eval(obj, &t).ok())
                    .map_or(f64::INFINITY, |e| e.value);
                if value == f64::INFINITY {
                    hit_barrier = true;
                }
                value
            },
            x0,
            &opts.simplex,
        );
        evaluations += res.evaluations;
        if res.value.is_finite() {
            feasible_starts += 1;
            if best.as_ref().is_none_or(|b| res.value < b.1) {
                best = Some((res.x, res.value));
            }
        }
    }
    let (u, value) = best.ok_or(Error::NoFeasibleMinimum)?;
    let theta = decode(&u, m)?;
    let eval = objective_eval(obj, &theta)?;
    let raw = theta
        .atoms()
        .map(|(l, p)| {
            let (lambda, weight) = (Complex64::new(l, 0.0), Complex64::new(p, 0.0));
            RawAtom {
                lambda,
                weight,
                status: classify(lambda, weight, &opts.thresholds),
            }
        })
        .collect();
    let mut result = InferenceResult::from_raw(obj.family, m, raw, false);
    result.minimizer = Some(MinimizerReport {
        objective: value,
        det_q: eval.det_q,
        evaluations,
        hit_barrier,
        feasible_starts,
    });
    Ok(result)
}

pub fn infer_statistical_sample(
    s: &SampleSet,
    k: usize,
    family: Family,
    warm_start: Option<&SpectrumModel>,
    m: usize,
    opts: &StatisticalOptions,
) -> Result<InferenceResult> {
    let obj = Objective::from_sample(s, k, family)?;
    infer_statistical(&obj, m, warm_start, opts)
}

/// Eigenvalues of `Q` within this fraction of its spectral radius are
/// treated as unresolved: rounding in the entries can flip their sign.
pub const SIGN_TOL: f64 = 1e-10;

/// Sign of `det Q` from the symmetric eigenvalues: `-1`, `0` (some
/// eigenvalue unresolved, or non-finite input) or `+1`.
pub fn det_sign(q: &DMatrix<f64>) -> i8 {
    if q.iter().any(|v| !v.is_finite()) {
        return 0;
    }
    let eig = q.clone().symmetric_eigenvalues();
    let radius = eig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if !(radius > 0.0) || eig.iter().any(|v| v.abs() <= SIGN_TOL * radius) {
        return 0;
    }
    if eig.iter().filter(|v| **v < 0.0).count() % 2 == 1 {
        -1
    } else {
        1
    }
}

/// Largest denominator [`exact_det_sign`] uses when reading `f64` inputs.
pub const EXACT_DENOMINATOR: i64 = 1 << 20;

/// Closest fraction to `v` with denominator at most `max_den`, by continued
/// fractions. Grid coordinates such as `3 (i + 1) / W` come back exactly.
pub fn nearest_fraction(v: f64, max_den: i64) -> Option<BigRational> {
    if !v.is_finite() || v.abs() > 1e12 {
        return None;
    }
    let (mut h0, mut h1, mut k0, mut k1) = (0i64, 1i64, 1i64, 0i64);
    let mut x = v;
    loop {
        let a = x.floor();
        let (h2, k2) = (a as i64 * h1 + h0, a as i64 * k1 + k0);
        if k2 > max_den {
            break;
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        let frac = x - a;
        if h1 as f64 / k1 as f64 == v || frac == 0.0 {
            break;
        }
        x = 1.0 / frac;
    }
    Some(BigRational::new(h1.into(), k1.into()))
}

/// Sign of `det Q` in exact rational arithmetic for the model obtained by
/// replacing `r` and every `Λ_i`, `p_i` with [`nearest_fraction`]
/// (denominator ≤ [`EXACT_DENOMINATOR`]). `None` for unreadable input or a
/// vanishing dual denominator `α̃_2`.
pub fn exact_det_sign(theta: &SpectrumModel, r: f64, k: usize, family: Family) -> Option<i8> {
    if k > 5 {
        return None;
    }
    let exact = |v: f64| nearest_fraction(v, EXACT_DENOMINATOR);
    let r = exact(r)?;
    let atoms: Vec<(BigRational, BigRational)> = theta
        .atoms()
        .map(|(l, p)| Some((exact(l)?, exact(p)?)))
        .collect::<Option<_>>()?;
    let power_sums = |order: usize, inverse: bool| -> Vec<BigRational> {
        (1..=order)
            .map(|j| {
                atoms.iter().fold(BigRational::zero(), |acc, (l, p)| {
                    let base = if inverse { l.recip() } else { l.clone() };
                    acc + p * num_traits::pow(base, j)
                })
            })
            .collect()
    };
    let eval_all = |table: &RelationTable, vars: &[BigRational]| -> Vec<BigRational> {
        table.relations.iter().map(|rel| rel.numerator.eval_exact(vars)).collect()
    };
    let (table, entries, scale) = match family {
        Family::Normal => {
            let mut vars = vec![r];
            vars.extend(power_sums(10, false));
            let s = eval_all(cached_forward(RelationKind::ForwardTower), &vars);
            let table = cached_double(RelationKind::Double);
            (table, eval_all(table, &s), None)
        }
        Family::Dual => {
            let u = (BigRational::one() - &r).recip();
            let mut vars = vec![r, u];
            vars.extend(power_sums(12, true));
            let s = eval_all(cached_forward(RelationKind::DualForward), &vars);
            let b2 = s[1].clone();
            if b2.is_zero() {
                return None;
            }
            let table = cached_double(RelationKind::DualDouble);
            (table, eval_all(table, &s[1..]), Some(b2))
        }
    };
    let entry = |i: usize, j: usize| -> BigRational {
        let at = table
            .relations
            .iter()
            .position(|rel| rel.target == Target::Pair(i.min(j), i.max(j)))
            .expect("relation table covers dimension 5");
        match &scale {
            Some(b2) => &entries[at] / num_traits::pow(b2.clone(), table.relations[at].denominator_power as usize),
            None => entries[at].clone(),
        }
    };
    let q: Vec<Vec<BigRational>> = (1..=k)
        .map(|i| (1..=k).map(|j| entry(i, j)).collect())
        .collect();
    Some(exact_det(q).signum().to_i8().unwrap_or(0))
}

/// Gaussian elimination over the rationals.
fn exact_det(mut a: Vec<Vec<BigRational>>) -> BigRational {
    let n = a.len();
    let mut det = BigRational::one();
    for c in 0..n {
        let Some(p) = (c..n).find(|&r| !a[r][c].is_zero()) else {
            return BigRational::zero();
        };
        if p != c {
            a.swap(p, c);
            det = -det;
        }
        let pivot = a[c][c].clone();
        for r in c + 1..n {
            let f = &a[r][c] / &pivot;
            for j in c..n {
                let v = &a[c][j] * &f;
                a[r][j] -= v;
            }
        }
        det *= pivot;
    }
    det
}

/// Grid of `sign(det Q)` over two-atom models `((Λ_s, 1), (p, 1 - p))`.
#[derive(Clone, Debug, PartialEq)]
pub struct SignMapGrid {
    pub r: f64,
    pub k: usize,
    pub family: Family,
    pub lambda_s: Vec<f64>,
    pub p: Vec<f64>,
    /// `cells[j * lambda_s.len() + i]` is the sign at `(lambda_s[i], p[j])`.
    pub cells: Vec<i8>,
}

impl SignMapGrid {
    /// Axes `Λ_s = Λ_max (i + 1) / width` and `p = (j + 1/2) / height`.
    pub fn axes(width: usize, height: usize, lambda_max: f64) -> (Vec<f64>, Vec<f64>) {
        let l = (0..width).map(|i| lambda_max * (i + 1) as f64 / width as f64).collect();
        let p = (0..height).map(|j| (j as f64 + 0.5) / height as f64).collect();
        (l, p)
    }

    pub fn width(&self) -> usize {
        self.lambda_s.len()
    }

    pub fn height(&self) -> usize {
        self.p.len()
    }

    pub fn sign(&self, i: usize, j: usize) -> i8 {
        self.cells[j * self.width() + i]
    }

    pub fn fraction(&self, sign: i8) -> f64 {
        self.cells.iter().filter(|&&c| c == sign).count() as f64 / self.cells.len() as f64
    }

    /// `lambda_s,p,sign` rows in grid order.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "lambda_s,p,sign")?;
        for (j, p) in self.p.iter().enumerate() {
            for (i, l) in self.lambda_s.iter().enumerate() {
                writeln!(w, "{l:.16e},{p:.16e},{}", self.sign(i, j))?;
            }
        }
        Ok(())
    }

    /// Plain (P2) graymap, one pixel per cell: 0 negative, 128 zero,
    /// 255 positive. Columns follow `Λ_s`; the top row is the largest `p`.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "P2")?;
        writeln!(w, "{} {}", self.width(), self.height())?;
        writeln!(w, "255")?;
        for j in (0..self.height()).rev() {
            let row: Vec<&str> = (0..self.width())
                .map(|i| match self.sign(i, j) {
                    -1 => "0",
                    0 => "128",
                    _ => "255",
                })
                .collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        Ok(())
    }
}

/// Cells the f64 determinant cannot resolve (see [`det_sign`]) are settled
/// by [`exact_det_sign`].
pub fn detq_sign_map(
    r: f64,
    k: usize,
    family: Family,
    lambda_s: &[f64],
    p: &[f64],
) -> Result<SignMapGrid> {
    if lambda_s.iter().any(|&l| !(l > 0.0)) || p.iter().any(|&q| !(q > 0.0 && q < 1.0)) {
        return Err(Error::InvalidConfig("sign-map grid outside Λ_s > 0, 0 < p < 1".into()));
    }
    let width = lambda_s.len();
    let cells: Vec<i8> = (0..width * p.len())
        .into_par_iter()
        .map(|c| {
            let (i, j) = (c % width, c / width);
            let Ok(theta) = SpectrumModel::two_atom(lambda_s[i], p[j]) else {
                return 0;
            };
            match dispersion_matrix(&theta, r, k, family, 1.0).map(|q| det_sign(q.matrix())) {
                Ok(0) | Err(_) => exact_det_sign(&theta, r, k, family).unwrap_or(0),
                Ok(s) => s,
            }
        })
        .collect();
    Ok(SignMapGrid {
        r,
        k,
        family,
        lambda_s: lambda_s.to_vec(),
        p: p.to_vec(),
        cells,
    })
}
