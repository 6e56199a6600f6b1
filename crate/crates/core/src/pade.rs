//! One-point (analytic) eigen-inference: backward towers, Padé approximants
//! and pole/residue extraction.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::moments::{
    dual_towers, s_to_sigma_moments, sigma_to_s_moments, Direction, Family, MomentVector,
    SpectrumModel, Subject,
};
use crate::wishart::{empirical_moments, SampleSet};

/// Hankel systems with a larger 2-norm condition number are flagged.
pub const ILL_CONDITIONED: f64 = 1e12;

/// Rejection rules for raw atoms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Thresholds {
    /// `|Im Λ| / |Λ|` above this marks a complex pair.
    pub imag_rel: f64,
    /// Weights below this are spurious.
    pub min_weight: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            imag_rel: 1e-6,
            min_weight: 1e-3,
            lambda_min: 1e-8,
            lambda_max: 1e8,
        }
    }
}

/// `A(x) / B(x)` with `B_0 = 1`, the `[m-1/m]` approximant of
/// `1 + Σ_k α_k x^k`.
#[derive(Clone, Debug, PartialEq)]
pub struct RationalApproximant {
    pub numerator: Vec<f64>,
    pub denominator: Vec<f64>,
    /// Condition number of the Hankel system.
    pub condition: f64,
    pub ill_conditioned: bool,
}

impl RationalApproximant {
    pub fn m(&self) -> usize {
        self.denominator.len() - 1
    }

    /// Taylor coefficients `c_0..c_order` of `A/B`.
    pub fn expand(&self, order: usize) -> Vec<f64> {
        let mut c = Vec::with_capacity(order + 1);
        for k in 0..=order {
            let mut v = self.numerator.get(k).copied().unwrap_or(0.0);
            for j in 1..=k.min(self.m()) {
                v -= self.denominator[j] * c[k - j];
            }
            c.push(v);
        }
        c
    }

    /// Roots of `Λ^m B(1/Λ)`, i.e. the reciprocals of the poles in `x`.
    pub fn pole_reciprocals(&self) -> Result<Vec<Complex64>> {
        let m = self.m();
        // monic polynomial Λ^m + B_1 Λ^{m-1} + ... + B_m
        let coeffs: Vec<f64> = self.denominator.clone();
        let mut companion = DMatrix::<f64>::zeros(m, m);
        for j in 0..m {
            companion[(0, j)] = -coeffs[j + 1];
        }
        for i in 1..m {
            companion[(i, i - 1)] = 1.0;
        }
        let roots: Vec<Complex64> = companion.complex_eigenvalues().iter().copied().collect();
        if roots.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::RootFindingFailure(m));
        }
        Ok(roots.into_iter().map(|z| polish(&coeffs, z)).collect())
    }

    /// `p = -A(x) / (x B'(x))` at `x = 1/Λ`.
    pub fn residue_weight(&self, lambda: Complex64) -> Complex64 {
        let x = lambda.inv();
        let a = horner(&self.numerator, x);
        let db: Vec<f64> = (1..self.denominator.len())
            .map(|j| j as f64 * self.denominator[j])
            .collect();
        let b1 = horner(&db, x);
        -a / (x * b1)
    }
}

fn horner(coeffs: &[f64], x: Complex64) -> Complex64 {
    coeffs
        .iter()
        .rev()
        .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * x + c)
}

/// Newton steps on the monic polynomial whose coefficients (highest first)
/// are `coeffs`; keeps the companion root if a step does not help.
fn polish(coeffs: &[f64], mut z: Complex64) -> Complex64 {
    let eval = |z: Complex64| {
        let mut p = Complex64::new(0.0, 0.0);
        let mut dp = Complex64::new(0.0, 0.0);
        for &c in coeffs {
            dp = dp * z + p;
            p = p * z + c;
        }
        (p, dp)
    };
    for _ in 0..4 {
        let (p, dp) = eval(z);
        if p.norm() == 0.0 || dp.norm() == 0.0 {
            break;
        }
        let next = z - p / dp;
        if eval(next).0.norm() >= p.norm() {
            break;
        }
        z = next;
    }
    z
}

/// `[m-1/m]` Padé approximant of `1 + Σ α_k x^k` from `α_1..α_{2m-1}`.
pub fn pade(moments: &[f64], m: usize) -> Result<RationalApproximant> {
    assert!(m >= 1);
    let needed = 2 * m - 1;
    if moments.len() < needed {
        return Err(Error::InsufficientOrder {
            needed,
            got: moments.len(),
        });
    }
    let c = |k: usize| if k == 0 { 1.0 } else { moments[k - 1] };
    // Σ_{j=1}^m B_j c_{k-j} = -c_k for k = m..2m-1
    let h = DMatrix::from_fn(m, m, |row, col| c(m + row - (col + 1)));
    let rhs = DVector::from_fn(m, |row, _| -c(m + row));
    let sv = h.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    if !(smin > 0.0) || !smax.is_finite() {
        return Err(Error::DegenerateDenominator {
            what: "Hankel system",
            value: smin,
        });
    }
    let condition = smax / smin;
    let b = h.lu().solve(&rhs).ok_or(Error::DegenerateDenominator {
        what: "Hankel system",
        value: smin,
    })?;
    let mut denominator = vec![1.0];
    denominator.extend(b.iter());
    let numerator = (0..m)
        .map(|k| (0..=k).map(|j| denominator[j] * c(k - j)).sum())
        .collect();
    Ok(RationalApproximant {
        numerator,
        denominator,
        condition,
        ill_conditioned: condition > ILL_CONDITIONED,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AtomStatus {
    Ok,
    ComplexPair,
    NegativeValue,
    OutOfRange,
    TinyWeight,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RawAtom {
    pub lambda: Complex64,
    pub weight: Complex64,
    pub status: AtomStatus,
}

/// Minimizer diagnostics for the statistical method.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MinimizerReport {
    pub objective: f64,
    pub det_q: f64,
    pub evaluations: usize,
    /// Some iterate of some start landed where `det Q <= 0`.
    pub hit_barrier: bool,
    pub feasible_starts: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferenceResult {
    pub family: Family,
    pub m: usize,
    pub raw: Vec<RawAtom>,
    /// Atoms with `Ok` status, weights renormalised; `None` when all rejected.
    pub model: Option<SpectrumModel>,
    /// `Σ p - 1` over accepted atoms before renormalisation.
    pub weight_sum_deviation: f64,
    pub ill_conditioned: bool,
    pub minimizer: Option<MinimizerReport>,
}

impl InferenceResult {
    pub fn rejected(&self) -> usize {
        self.raw.iter().filter(|a| a.status != AtomStatus::Ok).count()
    }

    /// Every raw atom passed and the model keeps all `m` atoms.
    pub fn is_accepted(&self) -> bool {
        self.rejected() == 0 && self.model.as_ref().is_some_and(|m| m.m() == self.m)
    }

    pub(crate) fn from_raw(
        family: Family,
        m: usize,
        raw: Vec<RawAtom>,
        ill_conditioned: bool,
    ) -> Self {
        let ok: Vec<(f64, f64)> = raw
            .iter()
            .filter(|a| a.status == AtomStatus::Ok)
            .map(|a| (a.lambda.re, a.weight.re))
            .collect();
        let total: f64 = ok.iter().map(|a| a.1).sum();
        let model = if ok.is_empty() {
            None
        } else {
            SpectrumModel::new(&ok).ok()
        };
        InferenceResult {
            family,
            m,
            raw,
            model,
            weight_sum_deviation: if ok.is_empty() { f64::NAN } else { total - 1.0 },
            ill_conditioned,
            minimizer: None,
        }
    }
}

pub(crate) fn classify(lambda: Complex64, weight: Complex64, th: &Thresholds) -> AtomStatus {
    if lambda.im.abs() > th.imag_rel * lambda.norm() {
        AtomStatus::ComplexPair
    } else if lambda.re <= 0.0 {
        AtomStatus::NegativeValue
    } else if lambda.re < th.lambda_min || lambda.re > th.lambda_max {
        AtomStatus::OutOfRange
    } else if !(weight.re >= th.min_weight) {
        AtomStatus::TinyWeight
    } else {
        AtomStatus::Ok
    }
}

/// Reconstructs the spectrum of `Σ` from moments of `S`.
///
/// Normal family: `α_1..α_{2m-1}` of `S`. Dual family: `α_{-1}..α_{-(2m-1)}`
/// of `S` with `r < 1`; atoms of `Σ^{-1}` are inverted back.
pub fn infer_analytic(moments: &MomentVector, m: usize, th: &Thresholds) -> Result<InferenceResult> {
    let r = moments
        .r
        .ok_or_else(|| Error::InvalidConfig("moment vector carries no rectangularity".into()))?;
    if moments.subject != Subject::S {
        return Err(Error::InvalidModel("analytic inference needs moments of S".into()));
    }
    let order = 2 * m - 1;
    let sigma = match moments.family {
        Family::Normal => s_to_sigma_moments(moments, r, order)?,
        Family::Dual => dual_towers(moments, r, order, Direction::SToSigma)?,
    };
    let approx = pade(sigma.values(), m)?;
    let roots = approx.pole_reciprocals()?;
    let raw = roots
        .into_iter()
        .map(|mu| {
            let weight = approx.residue_weight(mu);
            let lambda = match moments.family {
                Family::Normal => mu,
                Family::Dual => mu.inv(),
            };
            RawAtom {
                lambda,
                weight,
                status: classify(lambda, weight, th),
            }
        })
        .collect();
    Ok(InferenceResult::from_raw(
        moments.family,
        m,
        raw,
        approx.ill_conditioned,
    ))
}

pub fn infer_analytic_sample(
    s: &SampleSet,
    m: usize,
    family: Family,
    th: &Thresholds,
) -> Result<InferenceResult> {
    let moments = empirical_moments(s, 2 * m - 1, family)?;
    infer_analytic(&moments, m, th)
}

#[derive(Clone, Debug)]
pub struct ScanEntry {
    pub m: usize,
    pub result: Result<InferenceResult>,
    /// Rejected atoms, or `m` when inference failed outright.
    pub rejected: usize,
    /// Relative RMS misfit of the refitted moments.
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct ScanResult {
    pub best: Option<InferenceResult>,
    pub best_m: Option<usize>,
    pub entries: Vec<ScanEntry>,
}

/// Runs [`infer_analytic`] for every `m` and picks the largest `m` with no
/// rejected atoms, falling back to the smallest moment-refit residual.
///
/// `moments` must hold at least `2 max(m) + 1` entries; the refit residual
/// compares the accepted model's forward moments against all of them.
pub fn model_order_scan(
    moments: &MomentVector,
    m_range: &[usize],
    th: &Thresholds,
) -> Result<ScanResult> {
    let m_max = *m_range
        .iter()
        .max()
        .ok_or_else(|| Error::InvalidConfig("empty model-order range".into()))?;
    let order = 2 * m_max + 1;
    if moments.len() < order {
        return Err(Error::InsufficientOrder {
            needed: order,
            got: moments.len(),
        });
    }
    let entries: Vec<ScanEntry> = m_range
        .iter()
        .map(|&m| {
            let result = infer_analytic(moments, m, th);
            let (rejected, residual) = match &result {
                Ok(res) => (res.rejected(), refit_residual(moments, res, order)),
                Err(_) => (m, f64::INFINITY),
            };
            ScanEntry {
                m,
                result,
                rejected,
                residual,
            }
        })
        .collect();
    let clean = entries
        .iter()
        .filter(|e| e.rejected == 0 && e.result.is_ok())
        .max_by_key(|e| e.m);
    let chosen = clean.or_else(|| {
        entries
            .iter()
            .filter(|e| e.residual.is_finite())
            .min_by(|a, b| a.residual.total_cmp(&b.residual))
    });
    let best = chosen.and_then(|e| e.result.clone().ok());
    let best_m = chosen.map(|e| e.m);
    Ok(ScanResult {
        best,
        best_m,
        entries,
    })
}

fn refit_residual(measured: &MomentVector, res: &InferenceResult, order: usize) -> f64 {
    let Some(model) = &res.model else {
        return f64::INFINITY;
    };
    let r = measured.r.unwrap_or(0.0);
    let predicted = match measured.family {
        Family::Normal => sigma_to_s_moments(&model.moments(order), r, order),
        Family::Dual => dual_towers(&model.dual_moments(order), r, order, Direction::SigmaToS),
    };
    let Ok(predicted) = predicted else {
        return f64::INFINITY;
    };
    let sq: f64 = predicted
        .values()
        .iter()
        .zip(measured.values())
        .map(|(p, q)| ((p - q) / q).powi(2))
        .sum();
    (sq / order as f64).sqrt()
}
