//! Correlated Wishart sampling, empirical moments and Marchenko–Pastur
//! reference quantities.
//!
//! Randomness: `ChaCha8Rng::seed_from_u64(seed)`, Gaussians from
//! `rand_distr::StandardNormal` (ziggurat). Entries are drawn row by row;
//! complex entries draw the real part before the imaginary part.

use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::moments::{Family, MomentVector, SpectrumModel, Subject};

/// Dual moments need `λ_min > SINGULAR_TOL · λ_max`.
pub const SINGULAR_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Field {
    Real,
    Complex,
}

impl Field {
    pub fn beta(self) -> u32 {
        match self {
            Field::Real => 1,
            Field::Complex => 2,
        }
    }

    /// `2/β`, the factor applied to every double moment.
    pub fn beta_scale(self) -> f64 {
        2.0 / self.beta() as f64
    }

    pub fn name(self) -> &'static str {
        match self {
            Field::Real => "real",
            Field::Complex => "complex",
        }
    }
}

impl std::str::FromStr for Field {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real" => Ok(Field::Real),
            "complex" => Ok(Field::Complex),
            _ => Err(Error::InvalidConfig(format!("unknown field `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataMatrix {
    Real(DMatrix<f64>),
    Complex(DMatrix<Complex64>),
}

/// One draw of `X` (`N × T`) with `S = X X† / T` and its spectrum.
#[derive(Clone, Debug)]
pub struct SampleSet {
    pub field: Field,
    pub n: usize,
    pub t: usize,
    pub seed: u64,
    pub model: SpectrumModel,
    pub x: DataMatrix,
    pub s: DataMatrix,
    /// Eigenvalues of `S`, ascending.
    pub eigenvalues: Vec<f64>,
}

impl SampleSet {
    pub fn r(&self) -> f64 {
        self.n as f64 / self.t as f64
    }

    /// `tr S^j` (or `tr S^{-j}`) for `j = 1..=k`.
    pub fn traces(&self, k: usize, family: Family) -> Result<Vec<f64>> {
        let m = empirical_moments(self, k, family)?;
        Ok(m.values().iter().map(|a| a * self.n as f64).collect())
    }

    /// Writes the eigenvalues one per line with 17 significant digits.
    pub fn write_eigenvalues_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for v in &self.eigenvalues {
            writeln!(w, "{v:.16e}")?;
        }
        Ok(())
    }
}

/// Integer multiplicities `n_i = round(p_i N)`, the largest-weight atom
/// absorbing the rounding remainder.
pub fn multiplicities(model: &SpectrumModel, n: usize) -> Result<Vec<usize>> {
    let err = Error::MultiplicityRoundingError { n };
    if n < model.m() {
        return Err(err);
    }
    let mut counts: Vec<i64> = model
        .weights()
        .iter()
        .map(|p| (p * n as f64).round() as i64)
        .collect();
    let heaviest = model
        .weights()
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    let assigned: i64 = counts.iter().sum();
    counts[heaviest] += n as i64 - assigned;
    for (&c, &p) in counts.iter().zip(model.weights()) {
        if c < 1 || (c as f64 / n as f64 - p).abs() >= 1.0 / n as f64 {
            return Err(err);
        }
    }
    Ok(counts.into_iter().map(|c| c as usize).collect())
}

/// Diagonal of `Σ`: each `Λ_i` repeated `n_i` times, in model order.
pub fn population_diagonal(model: &SpectrumModel, n: usize) -> Result<Vec<f64>> {
    let counts = multiplicities(model, n)?;
    Ok(model
        .lambdas()
        .iter()
        .zip(counts)
        .flat_map(|(&l, c)| std::iter::repeat_n(l, c))
        .collect())
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, n: usize, t: usize) -> DMatrix<f64> {
    // Row-major draw order so the stream layout does not depend on storage.
    let mut m = DMatrix::zeros(n, t);
    for i in 0..n {
        for j in 0..t {
            m[(i, j)] = rng.sample(StandardNormal);
        }
    }
    m
}

/// Draws `X = Σ^{1/2} Y` with iid standard Gaussian `Y` and returns the
/// sample together with `S` and its eigenvalues.
pub fn sample(model: &SpectrumModel, n: usize, t: usize, field: Field, seed: u64) -> Result<SampleSet> {
    if n < 1 || t < 1 {
        return Err(Error::InvalidConfig(format!("bad dimensions {n}x{t}")));
    }
    let diag = population_diagonal(model, n)?;
    let scale: Vec<f64> = diag.iter().map(|l| l.sqrt()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inv_t = 1.0 / t as f64;

    let (x, s, eigenvalues) = match field {
        Field::Real => {
            let mut a = gaussian_matrix(&mut rng, n, t);
            for (i, sc) in scale.iter().enumerate() {
                a.row_mut(i).scale_mut(*sc);
            }
            let mut s = &a * a.transpose() * inv_t;
            symmetrize(&mut s);
            let mut ev: Vec<f64> = s.clone().symmetric_eigenvalues().iter().copied().collect();
            ev.sort_by(f64::total_cmp);
            (DataMatrix::Real(a), DataMatrix::Real(s), ev)
        }
        Field::Complex => {
            let mut re = DMatrix::zeros(n, t);
            let mut im = DMatrix::zeros(n, t);
            let half = std::f64::consts::FRAC_1_SQRT_2;
            for i in 0..n {
                for j in 0..t {
                    let a: f64 = rng.sample(StandardNormal);
                    let b: f64 = rng.sample(StandardNormal);
                    re[(i, j)] = a * half * scale[i];
                    im[(i, j)] = b * half * scale[i];
                }
            }
            // (A + iB)(A + iB)† = A Aᵀ + B Bᵀ + i (B Aᵀ - A Bᵀ)
            let s_re = (&re * re.transpose() + &im * im.transpose()) * inv_t;
            let s_im = (&im * re.transpose() - &re * im.transpose()) * inv_t;
            let mut s = DMatrix::from_fn(n, n, |i, j| Complex64::new(s_re[(i, j)], s_im[(i, j)]));
            hermitize(&mut s);
            let mut ev: Vec<f64> = s.clone().symmetric_eigenvalues().iter().copied().collect();
            ev.sort_by(f64::total_cmp);
            let x = DMatrix::from_fn(n, t, |i, j| Complex64::new(re[(i, j)], im[(i, j)]));
            (DataMatrix::Complex(x), DataMatrix::Complex(s), ev)
        }
    };

    if n < t && eigenvalues[0] <= 0.0 {
        return Err(Error::DegenerateSample(format!(
            "non-positive eigenvalue {:e} with N < T",
            eigenvalues[0]
        )));
    }
    Ok(SampleSet {
        field,
        n,
        t,
        seed,
        model: model.clone(),
        x,
        s,
        eigenvalues,
    })
}

fn symmetrize(s: &mut DMatrix<f64>) {
    let n = s.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (s[(i, j)] + s[(j, i)]);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
}

fn hermitize(s: &mut DMatrix<Complex64>) {
    let n = s.nrows();
    for i in 0..n {
        s[(i, i)].im = 0.0;
        for j in 0..i {
            let v = 0.5 * (s[(i, j)] + s[(j, i)].conj());
            s[(i, j)] = v;
            s[(j, i)] = v.conj();
        }
    }
}

/// `α_k = (1/N) Σ λ_i^k` (or `λ_i^{-k}`) for `k = 1..=order`.
pub fn moments_from_eigenvalues(eigenvalues: &[f64], order: usize, family: Family) -> Result<MomentVector> {
    let n = eigenvalues.len() as f64;
    let values: Vec<f64> = match family {
        Family::Normal => power_sums(eigenvalues.iter().copied(), order),
        Family::Dual => {
            let min = eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
            let max = eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !(min > SINGULAR_TOL * max) {
                return Err(Error::SingularSample { min, max });
            }
            power_sums(eigenvalues.iter().map(|l| 1.0 / l), order)
        }
    };
    Ok(MomentVector::new(Subject::S, family, values.into_iter().map(|v| v / n).collect()))
}

fn power_sums(values: impl Iterator<Item = f64>, order: usize) -> Vec<f64> {
    let mut sums = vec![0.0; order];
    for v in values {
        let mut p = 1.0;
        for s in sums.iter_mut() {
            p *= v;
            *s += p;
        }
    }
    sums
}

pub fn empirical_moments(s: &SampleSet, order: usize, family: Family) -> Result<MomentVector> {
    Ok(moments_from_eigenvalues(&s.eigenvalues, order, family)?.with_r(s.r()))
}

/// Marchenko–Pastur law for `Σ = I` at rectangularity `r ∈ (0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MpReference {
    pub r: f64,
    pub lower: f64,
    pub upper: f64,
}

impl MpReference {
    /// Density of the continuous part on `[lower, upper]`.
    pub fn density(&self, lambda: f64) -> f64 {
        if lambda <= self.lower || lambda >= self.upper {
            return 0.0;
        }
        ((lambda - self.lower) * (self.upper - lambda)).sqrt()
            / (2.0 * std::f64::consts::PI * self.r * lambda)
    }
}

pub fn mp_reference(r: f64) -> MpReference {
    assert!(r > 0.0 && r <= 1.0, "r = {r} outside (0, 1]");
    let sq = r.sqrt();
    MpReference {
        r,
        lower: (1.0 - sq).powi(2),
        upper: (1.0 + sq).powi(2),
    }
}

/// `tr S^j`, `j = 1..=k`, for `Σ = I` from the bidiagonal model of the
/// `β`-Laguerre ensemble: `S` has the spectrum of `B Bᵀ / T` where `B` is
/// lower bidiagonal with `B_ii ~ χ_{β(T-i+1)}/√β` and `B_{i+1,i} ~ χ_{β(N-i)}/√β`.
///
/// Costs `O(N k²)` instead of an `O(N² T)` product and an eigensolve.
pub fn null_traces<R: Rng>(n: usize, t: usize, field: Field, k: usize, rng: &mut R) -> Vec<f64> {
    assert!(n <= t, "bidiagonal model needs N <= T");
    let beta = field.beta() as f64;
    let chi = |dof: f64, rng: &mut R| -> f64 {
        let c: f64 = ChiSquared::new(dof).unwrap().sample(rng);
        (c / beta).sqrt()
    };
    let mut d = Vec::with_capacity(n);
    let mut e = Vec::with_capacity(n.saturating_sub(1));
    for i in 1..=n {
        d.push(chi(beta * (t + 1 - i) as f64, rng));
        if i < n {
            e.push(chi(beta * (n - i) as f64, rng));
        }
    }
    // L = B Bᵀ / T, symmetric tridiagonal.
    let inv_t = 1.0 / t as f64;
    let main: Vec<f64> = (0..n)
        .map(|i| (d[i] * d[i] + if i > 0 { e[i - 1] * e[i - 1] } else { 0.0 }) * inv_t)
        .collect();
    let off: Vec<f64> = (0..n.saturating_sub(1)).map(|i| d[i] * e[i] * inv_t).collect();
    tridiagonal_power_traces(&main, &off, k)
}

/// `tr L^j` for `j = 1..=k`, `L` symmetric tridiagonal, via banded products.
pub fn tridiagonal_power_traces(main: &[f64], off: &[f64], k: usize) -> Vec<f64> {
    let n = main.len();
    // Band storage: row i holds columns i-w ..= i+w at offsets 0..=2w.
    let mut w = 1usize;
    let mut band: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let lo = if i > 0 { off[i - 1] } else { 0.0 };
            let hi = if i + 1 < n { off[i] } else { 0.0 };
            vec![lo, main[i], hi]
        })
        .collect();
    let mut out = vec![main.iter().sum()];
    for _ in 1..k {
        let nw = w + 1;
        let mut next = vec![vec![0.0; 2 * nw + 1]; n];
        for i in 0..n {
            for (off_idx, &v) in band[i].iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                let j = i as isize + off_idx as isize - w as isize;
                if j < 0 || j >= n as isize {
                    continue;
                }
                let j = j as usize;
                // multiply by L: column j of the product row gets v * L[j, c]
                let lj = [
                    (j as isize - 1, if j > 0 { off[j - 1] } else { 0.0 }),
                    (j as isize, main[j]),
                    (j as isize + 1, if j + 1 < n { off[j] } else { 0.0 }),
                ];
                for (c, lv) in lj {
                    if c < 0 || c >= n as isize {
                        continue;
                    }
                    let idx = (c - i as isize + nw as isize) as usize;
                    next[i][idx] += v * lv;
                }
            }
        }
        band = next;
        w = nw;
        out.push((0..n).map(|i| band[i][w]).sum());
    }
    out
}
