//! Atomic spectra, their moments, the Σ ↔ S moment towers and the
//! double-moment (dispersion) matrices.

use nalgebra::DMatrix;

use crate::algebra::FormalSeries;
use crate::error::{Error, Result};
use crate::relations::{
    backward_series, double_series, dual_backward_series, dual_forward_series, forward_series,
};

/// Relative gap below which two atoms are treated as the same eigenvalue.
const MERGE_TOL: f64 = 1e-12;

/// Discrete spectrum `Σ_i p_i δ(λ - Λ_i)`, atoms sorted by decreasing `Λ`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumModel {
    lambdas: Vec<f64>,
    weights: Vec<f64>,
}

impl SpectrumModel {
    /// Validates, merges coincident atoms and normalises the weights.
    pub fn new(atoms: &[(f64, f64)]) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidModel("no atoms".into()));
        }
        for &(l, p) in atoms {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::InvalidModel(format!("eigenvalue {l} is not positive")));
            }
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::InvalidModel(format!("weight {p} is not positive")));
            }
        }
        let mut sorted = atoms.to_vec();
        sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut lambdas: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut weights: Vec<f64> = Vec::with_capacity(sorted.len());
        for (l, p) in sorted {
            match lambdas.last() {
                Some(&prev) if (prev - l).abs() <= MERGE_TOL * prev => {
                    *weights.last_mut().unwrap() += p;
                }
                _ => {
                    lambdas.push(l);
                    weights.push(p);
                }
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|p| *p /= total);
        Ok(SpectrumModel { lambdas, weights })
    }

    pub fn single(lambda: f64) -> Result<Self> {
        SpectrumModel::new(&[(lambda, 1.0)])
    }

    /// Two atoms `(Λ_s, 1)` with weights `(p, 1 - p)`, the parametrisation
    /// used by sign maps.
    pub fn two_atom(lambda_s: f64, p: f64) -> Result<Self> {
        SpectrumModel::new(&[(lambda_s, p), (1.0, 1.0 - p)])
    }

    pub fn m(&self) -> usize {
        self.lambdas.len()
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn atoms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.lambdas.iter().copied().zip(self.weights.iter().copied())
    }

    /// `α_k = Σ p_i Λ_i^k` for `k = 1..=order`.
    pub fn moments(&self, order: usize) -> MomentVector {
        self.power_sums(order, 1.0, Family::Normal)
    }

    /// `α_{-k} = Σ p_i Λ_i^{-k}` for `k = 1..=order`.
    pub fn dual_moments(&self, order: usize) -> MomentVector {
        self.power_sums(order, -1.0, Family::Dual)
    }

    fn power_sums(&self, order: usize, sign: f64, family: Family) -> MomentVector {
        let values = (1..=order as i32)
            .map(|k| self.atoms().map(|(l, p)| p * l.powf(sign * k as f64)).sum())
            .collect();
        MomentVector::new(Subject::Sigma, family, values)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Subject {
    Sigma,
    S,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    Normal,
    Dual,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Normal => "normal",
            Family::Dual => "dual",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Family::Normal),
            "dual" => Ok(Family::Dual),
            _ => Err(Error::InvalidConfig(format!("unknown family `{s}`"))),
        }
    }
}

/// Moments `α_1..α_K` (or `α_{-1}..α_{-K}` for the dual family).
#[derive(Clone, Debug, PartialEq)]
pub struct MomentVector {
    pub subject: Subject,
    pub family: Family,
    values: Vec<f64>,
    /// Rectangularity `N/T`, present once `S` is involved.
    pub r: Option<f64>,
}

impl MomentVector {
    pub fn new(subject: Subject, family: Family, values: Vec<f64>) -> Self {
        MomentVector {
            subject,
            family,
            values,
            r: None,
        }
    }

    pub fn with_r(mut self, r: f64) -> Self {
        self.r = Some(r);
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The moment of (absolute) index `k`, 1-based.
    pub fn get(&self, k: usize) -> f64 {
        self.values[k - 1]
    }

    fn series(&self, order: usize) -> Result<FormalSeries<f64>> {
        if self.values.len() < order {
            return Err(Error::InsufficientOrder {
                needed: order,
                got: self.values.len(),
            });
        }
        Ok(FormalSeries::from_tail(&self.values, order))
    }

    fn expect(&self, subject: Subject, family: Family) -> Result<()> {
        if self.subject != subject || self.family != family {
            return Err(Error::InvalidModel(format!(
                "expected {subject:?}/{family:?} moments, got {:?}/{:?}",
                self.subject, self.family
            )));
        }
        Ok(())
    }
}

fn check_r(r: f64) -> Result<()> {
    if r.is_finite() && r >= 0.0 {
        Ok(())
    } else {
        Err(Error::RectangularityOutOfRange(r))
    }
}

/// Forward tower: population moments to expected sample moments at `r`.
pub fn sigma_to_s_moments(sigma: &MomentVector, r: f64, order: usize) -> Result<MomentVector> {
    sigma.expect(Subject::Sigma, Family::Normal)?;
    check_r(r)?;
    let s = forward_series(&sigma.series(order)?, &r);
    Ok(MomentVector::new(Subject::S, Family::Normal, s.tail().to_vec()).with_r(r))
}

/// Backward tower, the order-by-order inverse of [`sigma_to_s_moments`].
pub fn s_to_sigma_moments(s: &MomentVector, r: f64, order: usize) -> Result<MomentVector> {
    s.expect(Subject::S, Family::Normal)?;
    check_r(r)?;
    let sigma = backward_series(&s.series(order)?, &r);
    Ok(MomentVector::new(Subject::Sigma, Family::Normal, sigma.tail().to_vec()).with_r(r))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    SigmaToS,
    SToSigma,
}

/// Dual-moment towers; defined only for `r < 1`.
pub fn dual_towers(
    moments: &MomentVector,
    r: f64,
    order: usize,
    direction: Direction,
) -> Result<MomentVector> {
    if !(0.0..1.0).contains(&r) {
        return Err(Error::RectangularityOutOfRange(r));
    }
    let series = moments.series(order)?;
    let (subject, out) = match direction {
        Direction::SigmaToS => {
            moments.expect(Subject::Sigma, Family::Dual)?;
            let u = 1.0 / (1.0 - r);
            (Subject::S, dual_forward_series(&series, &r, &u))
        }
        Direction::SToSigma => {
            moments.expect(Subject::S, Family::Dual)?;
            (Subject::Sigma, dual_backward_series(&series, &r))
        }
    };
    Ok(MomentVector::new(subject, Family::Dual, out.tail().to_vec()).with_r(r))
}

/// Symmetric `k × k` dispersion matrix of connected double moments.
#[derive(Clone, Debug, PartialEq)]
pub struct DoubleMomentMatrix {
    pub family: Family,
    /// `2/β`: 1 for complex data, 2 for real data.
    pub beta_scale: f64,
    entries: DMatrix<f64>,
}

impl DoubleMomentMatrix {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// `α_{i,j}` with 1-based indices, including the `β` scale.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i - 1, j - 1)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    /// Rescales from the `β = 2` normalisation to `beta_scale = 2/β`.
    pub fn with_beta_scale(mut self, beta_scale: f64) -> Self {
        self.entries *= beta_scale / self.beta_scale;
        self.beta_scale = beta_scale;
        self
    }
}

fn bi_to_matrix(table: &crate::algebra::BiSeries<f64>, k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(k, k, |i, j| *table.get(i + 1, j + 1))
}

/// `Q_{ij} = α_{i,j}` from `α_1..α_{2k}` of `S`.
pub fn double_moments_from_single(s: &MomentVector, k: usize) -> Result<DoubleMomentMatrix> {
    s.expect(Subject::S, Family::Normal)?;
    let needed = 2 * k;
    if s.len() < needed {
        return Err(Error::InsufficientOrder {
            needed,
            got: s.len(),
        });
    }
    let mut c = vec![0.0];
    c.extend_from_slice(&s.values[..needed]);
    Ok(DoubleMomentMatrix {
        family: Family::Normal,
        beta_scale: 1.0,
        entries: bi_to_matrix(&double_series(&c, k), k),
    })
}

/// `Q_{ij} = α̃_{i,j}` from the dual moments `α̃_2..α̃_{2k+2}` of `S`.
pub fn dual_double_moments(dual: &MomentVector, k: usize) -> Result<DoubleMomentMatrix> {
    dual.expect(Subject::S, Family::Dual)?;
    let needed = 2 * k + 2;
    if dual.len() < needed {
        return Err(Error::InsufficientOrder {
            needed,
            got: dual.len(),
        });
    }
    let (a1, a2) = (dual.get(1), dual.get(2));
    // α̃_2 >= α̃_1^2 for any positive measure.
    if !(a2.abs() > 1e-12 * a1 * a1) || a2 == 0.0 {
        return Err(Error::DegenerateDenominator {
            what: "dual moment a_-2",
            value: a2.abs(),
        });
    }
    let mut c = vec![0.0];
    c.extend((3..=needed).map(|j| dual.get(j) / a2));
    Ok(DoubleMomentMatrix {
        family: Family::Dual,
        beta_scale: 1.0,
        entries: bi_to_matrix(&double_series(&c, k), k),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_sorts_and_merges() {
        let m = SpectrumModel::new(&[(1.0, 0.25), (2.0, 0.5), (1.0, 0.25)]).unwrap();
        assert_eq!(m.lambdas(), &[2.0, 1.0]);
        assert_eq!(m.weights(), &[0.5, 0.5]);
        assert!(SpectrumModel::new(&[(-1.0, 1.0)]).is_err());
        assert!(SpectrumModel::new(&[(1.0, 0.0)]).is_err());
    }

    #[test]
    fn forward_tower_identity_spectrum() {
        let r = 0.3;
        let sigma = MomentVector::new(Subject::Sigma, Family::Normal, vec![1.0; 3]);
        let s = sigma_to_s_moments(&sigma, r, 3).unwrap();
        let want = [1.0, 1.0 + r, 1.0 + 3.0 * r + r * r];
        for (a, b) in s.values().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn two_atom_forward_values() {
        let m = SpectrumModel::new(&[(2.0, 0.5), (1.0, 0.5)]).unwrap();
        let s = sigma_to_s_moments(&m.moments(3), 0.5, 3).unwrap();
        let want = [1.5, 3.625, 10.96875];
        for (a, b) in s.values().iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn insufficient_order() {
        let sigma = MomentVector::new(Subject::Sigma, Family::Normal, vec![1.0; 2]);
        assert_eq!(
            sigma_to_s_moments(&sigma, 0.1, 3),
            Err(Error::InsufficientOrder { needed: 3, got: 2 })
        );
    }

    #[test]
    fn dual_requires_r_below_one() {
        let d = MomentVector::new(Subject::Sigma, Family::Dual, vec![1.0; 3]);
        assert_eq!(
            dual_towers(&d, 1.0, 3, Direction::SigmaToS),
            Err(Error::RectangularityOutOfRange(1.0))
        );
        let s = dual_towers(&d, 0.5, 2, Direction::SigmaToS).unwrap();
        assert!((s.get(1) - 2.0).abs() < 1e-14);
        assert!((s.get(2) - 8.0).abs() < 1e-13);
    }

    #[test]
    fn mp_variance_of_trace() {
        let r = 0.25;
        let sigma = MomentVector::new(Subject::Sigma, Family::Normal, vec![1.0; 6]);
        let s = sigma_to_s_moments(&sigma, r, 6).unwrap();
        let q = double_moments_from_single(&s, 3).unwrap();
        assert!((q.get(1, 1) - r).abs() < 1e-14);
        assert_eq!(q.get(1, 2), q.get(2, 1));
        let real = q.clone().with_beta_scale(2.0);
        assert!((real.get(1, 1) - 2.0 * r).abs() < 1e-14);
    }

    #[test]
    fn dual_double_degenerate() {
        let d = MomentVector::new(Subject::S, Family::Dual, vec![1.0, 0.0, 1.0, 1.0]);
        assert!(matches!(
            dual_double_moments(&d, 1),
            Err(Error::DegenerateDenominator { .. })
        ));
    }
}
