//! Truncated formal power series in one and two variables.
//!
//! Everything here is generic over [`Scalar`], so the same composition and
//! inversion code produces exact symbolic relations (over [`Poly`](super::Poly))
//! and numeric moment towers (over `f64`).

use std::ops::{Add, Mul, Neg, Sub};


use super::scalar::Scalar;

/// Power series `c_0 + c_1 x + ... + c_K x^K + O(x^{K+1})`.
#[derive(Clone, Debug, PartialEq)]
pub struct FormalSeries<T> {
    coeffs: Vec<T>,
}

impl<T: Scalar> FormalSeries<T> {
    /// Builds a series of the given order, padding or truncating `coeffs`.
    pub fn new(mut coeffs: Vec<T>, order: usize) -> Self {
        coeffs.resize(order + 1, T::zero());
        FormalSeries { coeffs }
    }

    pub fn zero(order: usize) -> Self {
        FormalSeries::new(Vec::new(), order)
    }

    pub fn constant(c: T, order: usize) -> Self {
        FormalSeries::new(vec![c], order)
    }

    /// The series `x`.
    pub fn variable(order: usize) -> Self {
        let mut s = FormalSeries::zero(order);
        if order >= 1 {
            s.coeffs[1] = T::one();
        }
        s
    }

    /// Series with zero constant term and `tail[k-1]` as the coefficient of `x^k`.
    pub fn from_tail(tail: &[T], order: usize) -> Self {
        let mut c = Vec::with_capacity(order + 1);
        c.push(T::zero());
        c.extend(tail.iter().take(order).cloned());
        FormalSeries::new(c, order)
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeff(&self, k: usize) -> &T {
        &self.coeffs[k]
    }

    pub fn coeffs(&self) -> &[T] {
        &self.coeffs
    }

    /// Coefficients of `x^1 .. x^K`.
    pub fn tail(&self) -> &[T] {
        &self.coeffs[1..]
    }

    pub fn into_coeffs(self) -> Vec<T> {
        self.coeffs
    }

    pub fn scale(&self, c: &T) -> Self {
        FormalSeries {
            coeffs: self.coeffs.iter().map(|a| a.clone() * c.clone()).collect(),
        }
    }

    /// Multiply by `x`, dropping the overflowing top coefficient.
    pub fn shift_up(&self) -> Self {
        let k = self.order();
        let mut c = Vec::with_capacity(k + 1);
        c.push(T::zero());
        c.extend(self.coeffs[..k].iter().cloned());
        FormalSeries { coeffs: c }
    }

    pub fn derivative(&self) -> Self {
        let k = self.order();
        let mut c: Vec<T> = (1..=k)
            .map(|i| self.coeffs[i].clone() * T::from_int(i as i64))
            .collect();
        c.push(T::zero());
        FormalSeries { coeffs: c }
    }

    /// Antiderivative with zero constant term.
    pub fn integral(&self) -> Self {
        let k = self.order();
        let mut c = Vec::with_capacity(k + 1);
        c.push(T::zero());
        for i in 0..k {
            c.push(self.coeffs[i].clone() * T::from_ratio(1, i as i64 + 1));
        }
        FormalSeries { coeffs: c }
    }

    /// `self ∘ inner`; requires `inner` to have zero constant term.
    pub fn compose(&self, inner: &FormalSeries<T>) -> Self {
        assert!(
            inner.coeffs[0].is_zero(),
            "composition requires an inner series without constant term"
        );
        let k = self.order().min(inner.order());
        let inner = inner.truncate(k);
        let mut acc = FormalSeries::constant(self.coeffs[k].clone(), k);
        for i in (0..k).rev() {
            acc = &acc * &inner;
            acc.coeffs[0] = acc.coeffs[0].clone() + self.coeffs[i].clone();
        }
        acc
    }

    pub fn truncate(&self, order: usize) -> Self {
        FormalSeries::new(self.coeffs[..=order.min(self.order())].to_vec(), order)
    }

    /// Multiplicative inverse; `None` when the constant term is not a unit.
    pub fn recip(&self) -> Option<Self> {
        let b0 = self.coeffs[0].try_recip()?;
        let k = self.order();
        let mut b = Vec::with_capacity(k + 1);
        b.push(b0.clone());
        for n in 1..=k {
            let mut s = T::zero();
            for j in 1..=n {
                s = s + self.coeffs[j].clone() * b[n - j].clone();
            }
            b.push(-(b0.clone() * s));
        }
        Some(FormalSeries { coeffs: b })
    }

    /// Logarithm of a series with constant term one, via `∫ f'/f`.
    pub fn ln(&self) -> Option<Self> {
        if !self.coeffs[0].is_one() {
            return None;
        }
        let inv = self.recip()?;
        Some((&self.derivative() * &inv).integral())
    }

    /// Compositional inverse of a series `c_1 x + c_2 x^2 + ...` with unit `c_1`.
    ///
    /// Solves `g = (x - h(g)) / c_1` by fixed-point iteration, where
    /// `self = c_1 x + h`; each pass fixes one more coefficient.
    pub fn reversion(&self) -> Option<Self> {
        if !self.coeffs[0].is_zero() || self.order() == 0 {
            return None;
        }
        let inv_c1 = self.coeffs[1].try_recip()?;
        let k = self.order();
        let mut h = self.clone();
        h.coeffs[1] = T::zero();
        let x = FormalSeries::variable(k);
        let mut g = x.scale(&inv_c1);
        for _ in 1..k {
            g = (&x - &h.compose(&g)).scale(&inv_c1);
        }
        Some(g)
    }

    pub fn evaluate(&self, x: &T) -> T {
        let mut acc = T::zero();
        for c in self.coeffs.iter().rev() {
            acc = acc * x.clone() + c.clone();
        }
        acc
    }
}

impl<T: Scalar> Add for &FormalSeries<T> {
    type Output = FormalSeries<T>;
    fn add(self, rhs: &FormalSeries<T>) -> FormalSeries<T> {
        let k = self.order().min(rhs.order());
        FormalSeries {
            coeffs: (0..=k)
                .map(|i| self.coeffs[i].clone() + rhs.coeffs[i].clone())
                .collect(),
        }
    }
}

impl<T: Scalar> Sub for &FormalSeries<T> {
    type Output = FormalSeries<T>;
    fn sub(self, rhs: &FormalSeries<T>) -> FormalSeries<T> {
        let k = self.order().min(rhs.order());
        FormalSeries {
            coeffs: (0..=k)
                .map(|i| self.coeffs[i].clone() - rhs.coeffs[i].clone())
                .collect(),
        }
    }
}

impl<T: Scalar> Mul for &FormalSeries<T> {
    type Output = FormalSeries<T>;
    fn mul(self, rhs: &FormalSeries<T>) -> FormalSeries<T> {
        let k = self.order().min(rhs.order());
        let mut c = vec![T::zero(); k + 1];
        for (i, a) in self.coeffs.iter().enumerate().take(k + 1) {
            if a.is_zero() {
                continue;
            }
            for (j, b) in rhs.coeffs.iter().enumerate().take(k + 1 - i) {
                c[i + j] = c[i + j].clone() + a.clone() * b.clone();
            }
        }
        FormalSeries { coeffs: c }
    }
}

impl<T: Scalar> Neg for FormalSeries<T> {
    type Output = FormalSeries<T>;
    fn neg(self) -> FormalSeries<T> {
        FormalSeries {
            coeffs: self.coeffs.into_iter().map(|c| -c).collect(),
        }
    }
}

/// Bivariate series truncated at degree `order` in each variable separately.
#[derive(Clone, Debug, PartialEq)]
pub struct BiSeries<T> {
    order: usize,
    // Row-major: coeffs[i * (order + 1) + j] is the coefficient of x^i y^j.
    coeffs: Vec<T>,
}

impl<T: Scalar> BiSeries<T> {
    pub fn zero(order: usize) -> Self {
        BiSeries {
            order,
            coeffs: vec![T::zero(); (order + 1) * (order + 1)],
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.order + 1) + j
    }

    pub fn get(&self, i: usize, j: usize) -> &T {
        &self.coeffs[self.idx(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        let k = self.idx(i, j);
        self.coeffs[k] = v;
    }

    /// `Σ_k c_k h_k(x, y)` where `h_k` is the complete homogeneous symmetric
    /// polynomial of degree `k`, i.e. `(x^{k+1} - y^{k+1}) / (x - y)`.
    ///
    /// `c[k]` is the coefficient of `h_k`; `c[0]` multiplies `h_0 = 1`.
    pub fn divided_difference(c: &[T], order: usize) -> Self {
        let mut s = BiSeries::zero(order);
        for i in 0..=order {
            for j in 0..=order {
                if let Some(v) = c.get(i + j) {
                    s.set(i, j, v.clone());
                }
            }
        }
        s
    }

    pub fn scale(&self, c: &T) -> Self {
        BiSeries {
            order: self.order,
            coeffs: self.coeffs.iter().map(|a| a.clone() * c.clone()).collect(),
        }
    }

    /// `ln(1 + A)` for a series `A` with zero constant term.
    ///
    /// `A` is nilpotent under the truncation, so the Mercator series
    /// terminates after `2 * order` powers.
    pub fn ln_one_plus(&self) -> Self {
        assert!(self.get(0, 0).is_zero(), "ln(1 + A) needs A(0, 0) = 0");
        let mut out = BiSeries::zero(self.order);
        let mut power = self.clone();
        for n in 1..=(2 * self.order) {
            let sign = if n % 2 == 1 { 1 } else { -1 };
            out = &out + &power.scale(&T::from_ratio(sign, n as i64));
            if n < 2 * self.order {
                power = &power * self;
            }
        }
        out
    }
}

impl<T: Scalar> Add for &BiSeries<T> {
    type Output = BiSeries<T>;
    fn add(self, rhs: &BiSeries<T>) -> BiSeries<T> {
        assert_eq!(self.order, rhs.order);
        BiSeries {
            order: self.order,
            coeffs: self
                .coeffs
                .iter()
                .zip(&rhs.coeffs)
                .map(|(a, b)| a.clone() + b.clone())
                .collect(),
        }
    }
}

impl<T: Scalar> Mul for &BiSeries<T> {
    type Output = BiSeries<T>;
    fn mul(self, rhs: &BiSeries<T>) -> BiSeries<T> {
        assert_eq!(self.order, rhs.order);
        let n = self.order;
        let mut out = BiSeries::<T>::zero(n);
        for i1 in 0..=n {
            for j1 in 0..=n {
                let a = self.get(i1, j1);
                if a.is_zero() {
                    continue;
                }
                for i2 in 0..=(n - i1) {
                    for j2 in 0..=(n - j1) {
                        let b = rhs.get(i2, j2);
                        if b.is_zero() {
                            continue;
                        }
                        let k = out.idx(i1 + i2, j1 + j2);
                        out.coeffs[k] = out.coeffs[k].clone() + a.clone() * b.clone();
                    }
                }
            }
        }
        out
    }
}
