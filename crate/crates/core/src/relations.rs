//! Symbolic moment relations generated by formal-series composition.
//!
//! Tower relations express moments of one matrix as polynomials in the
//! moments of the other (and in `r`). Double-moment relations express the
//! connected covariances `α_{i,j}` as polynomials in single moments, obtained
//! from the logarithm of a divided-difference series.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

use crate::algebra::{BiSeries, FormalSeries, Monomial, Poly, Scalar};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RelationKind {
    /// `α_k^S` in terms of `r` and `α_k^Σ`.
    ForwardTower,
    /// `α_k^Σ` in terms of `r` and `α_k^S`.
    BackwardTower,
    /// `α_{-k}^S` in terms of `r`, `s = 1/(1-r)` and `α_{-k}^Σ`.
    DualForward,
    /// `α_{-k}^Σ` in terms of `r` and `α_{-k}^S`.
    DualBackward,
    /// `α_{i,j}` in terms of `α_1..α_{2k}`.
    Double,
    /// `α̃_{i,j} · α̃_2^{i+j}` in terms of `α̃_2..α̃_{2k+2}`.
    DualDouble,
}

impl RelationKind {
    pub const ALL: [RelationKind; 6] = [
        RelationKind::ForwardTower,
        RelationKind::BackwardTower,
        RelationKind::DualForward,
        RelationKind::DualBackward,
        RelationKind::Double,
        RelationKind::DualDouble,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RelationKind::ForwardTower => "forward",
            RelationKind::BackwardTower => "backward",
            RelationKind::DualForward => "dual-forward",
            RelationKind::DualBackward => "dual-backward",
            RelationKind::Double => "double",
            RelationKind::DualDouble => "dual-double",
        }
    }

    fn is_double(self) -> bool {
        matches!(self, RelationKind::Double | RelationKind::DualDouble)
    }

    /// Variable names in slot order for a table of the given order.
    pub fn variables(self, order: usize) -> Vec<String> {
        let moments = |prefix: &str, from: usize, to: usize| -> Vec<String> {
            (from..=to).map(|k| format!("{prefix}{k}")).collect()
        };
        match self {
            RelationKind::ForwardTower
            | RelationKind::BackwardTower
            | RelationKind::DualBackward => {
                let mut v = vec!["r".to_string()];
                v.extend(moments("a", 1, order));
                v
            }
            RelationKind::DualForward => {
                let mut v = vec!["r".to_string(), "s".to_string()];
                v.extend(moments("a", 1, order));
                v
            }
            RelationKind::Double => moments("a", 1, 2 * order),
            RelationKind::DualDouble => moments("b", 2, 2 * order + 2),
        }
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RelationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        RelationKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown relation kind `{s}`")))
    }
}

/// Left-hand side of a relation: a single moment index or a pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Target {
    Single(usize),
    Pair(usize, usize),
}

/// `target = numerator / b2^denominator_power`; the power is zero except for
/// dual double moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Relation {
    pub target: Target,
    pub numerator: Poly,
    pub denominator_power: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelationTable {
    pub kind: RelationKind,
    pub order: usize,
    pub variables: Vec<String>,
    pub relations: Vec<Relation>,
}

impl RelationTable {
    pub fn get(&self, target: Target) -> Option<&Relation> {
        self.relations.iter().find(|r| r.target == target)
    }

    /// Evaluates every relation at `values` (one per variable slot).
    pub fn evaluate(&self, values: &[f64]) -> Vec<f64> {
        assert_eq!(values.len(), self.variables.len());
        self.relations
            .iter()
            .map(|rel| {
                let num = rel.numerator.eval_f64(values);
                num / values[0].powi(rel.denominator_power as i32)
            })
            .collect()
    }

    /// Parses the output of the `Display` impl.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty input".into(),
        })?;
        let mut kind = None;
        let mut order = None;
        let mut variables = None;
        for field in header.trim_start_matches('#').split_whitespace() {
            let (key, value) = field.split_once('=').ok_or(Error::Parse {
                line: 1,
                msg: format!("bad header field `{field}`"),
            })?;
            match key {
                "kind" => kind = Some(value.parse::<RelationKind>()?),
                "order" => {
                    order = Some(value.parse::<usize>().map_err(|e| Error::Parse {
                        line: 1,
                        msg: e.to_string(),
                    })?)
                }
                "vars" => variables = Some(value.split(',').map(str::to_string).collect()),
                _ => {}
            }
        }
        let missing = |what: &str| Error::Parse {
            line: 1,
            msg: format!("header is missing `{what}`"),
        };
        let kind = kind.ok_or_else(|| missing("kind"))?;
        let order = order.ok_or_else(|| missing("order"))?;
        let variables: Vec<String> = variables.ok_or_else(|| missing("vars"))?;

        let mut relations = Vec::new();
        for (n, line) in lines {
            let err = |msg: String| Error::Parse { line: n + 1, msg };
            let (lhs, rhs) = line
                .split_once('=')
                .ok_or_else(|| err("missing `=`".into()))?;
            let target = parse_target(lhs.trim()).ok_or_else(|| err(format!("bad target `{lhs}`")))?;
            let (body, denominator_power) = match rhs.rsplit_once("/ b2^") {
                Some((body, p)) => (
                    body,
                    p.trim().parse().map_err(|_| err("bad denominator".into()))?,
                ),
                None => (rhs, 0),
            };
            let numerator = parse_terms(body, variables.len()).map_err(err)?;
            relations.push(Relation {
                target,
                numerator,
                denominator_power,
            });
        }
        Ok(RelationTable {
            kind,
            order,
            variables,
            relations,
        })
    }
}

/// Line format: a header `# kind=.. order=.. vars=..`, then one relation per
/// line as `alpha[i,j] = (coeff, [exponents]) + ...`, with a trailing
/// `/ b2^p` for dual double moments.
impl fmt::Display for RelationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "# kind={} order={} vars={}",
            self.kind,
            self.order,
            self.variables.join(",")
        )?;
        let n = self.variables.len();
        for rel in &self.relations {
            match rel.target {
                Target::Single(k) => write!(f, "alpha[{k}] =")?,
                Target::Pair(i, j) => write!(f, "alpha[{i},{j}] =")?,
            }
            if rel.numerator.is_empty() {
                write!(f, " 0")?;
            }
            for (t, (m, c)) in rel.numerator.terms().enumerate() {
                let exps: Vec<String> = m.exponents(n).iter().map(u32::to_string).collect();
                let sep = if t == 0 { " " } else { " + " };
                write!(f, "{sep}({c}, [{}])", exps.join(","))?;
            }
            if rel.denominator_power > 0 {
                write!(f, " / b2^{}", rel.denominator_power)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

fn parse_target(s: &str) -> Option<Target> {
    let inner = s.strip_prefix("alpha[")?.strip_suffix(']')?;
    match inner.split_once(',') {
        Some((i, j)) => Some(Target::Pair(i.trim().parse().ok()?, j.trim().parse().ok()?)),
        None => Some(Target::Single(inner.trim().parse().ok()?)),
    }
}

fn parse_terms(body: &str, nvars: usize) -> std::result::Result<Poly, String> {
    let mut poly = Poly::default();
    let body = body.trim();
    if body == "0" {
        return Ok(poly);
    }
    for chunk in body.split(" + ") {
        let chunk = chunk
            .trim()
            .strip_prefix('(')
            .and_then(|c| c.strip_suffix("])"))
            .ok_or_else(|| format!("bad term `{chunk}`"))?;
        let (coeff, exps) = chunk
            .split_once(", [")
            .ok_or_else(|| format!("bad term `{chunk}`"))?;
        let c = parse_rational(coeff.trim()).ok_or_else(|| format!("bad coefficient `{coeff}`"))?;
        let e: Vec<u32> = exps
            .split(',')
            .map(|x| x.trim().parse::<u32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| e.to_string())?;
        if e.len() != nvars {
            return Err(format!("expected {nvars} exponents, got {}", e.len()));
        }
        poly.add_term(Monomial::new(e), c);
    }
    Ok(poly)
}

fn parse_rational(s: &str) -> Option<BigRational> {
    match s.split_once('/') {
        Some((n, d)) => {
            let n: BigInt = n.parse().ok()?;
            let d: BigInt = d.parse().ok()?;
            (!d.is_zero()).then(|| BigRational::new(n, d))
        }
        None => Some(BigRational::from_integer(s.parse().ok()?)),
    }
}

/// Generates the relation table of the given kind to `order`.
///
/// Towers yield `alpha[1..=order]`; double tables yield `alpha[i,j]` for
/// `1 <= i <= j <= order`.
pub fn generate_relations(kind: RelationKind, order: usize) -> RelationTable {
    assert!(order >= 1, "relation order must be at least 1");
    let relations = match kind {
        RelationKind::ForwardTower => singles(forward_tower(order)),
        RelationKind::BackwardTower => singles(backward_tower(order)),
        RelationKind::DualForward => singles(dual_forward(order)),
        RelationKind::DualBackward => singles(dual_backward(order)),
        RelationKind::Double => double(order),
        RelationKind::DualDouble => dual_double(order),
    };
    RelationTable {
        kind,
        order,
        variables: kind.variables(order),
        relations,
    }
}

/// Cached tables for double moments up to dimension 5, shared across threads.
pub fn cached_double(kind: RelationKind) -> &'static RelationTable {
    static DOUBLE: OnceLock<RelationTable> = OnceLock::new();
    static DUAL: OnceLock<RelationTable> = OnceLock::new();
    assert!(kind.is_double());
    let cell = if kind == RelationKind::Double { &DOUBLE } else { &DUAL };
    cell.get_or_init(|| generate_relations(kind, 5))
}

/// Cached forward towers deep enough for dimension-5 dispersion matrices:
/// order 10 (normal) and 12 (dual).
pub fn cached_forward(kind: RelationKind) -> &'static RelationTable {
    static FORWARD: OnceLock<RelationTable> = OnceLock::new();
    static DUAL: OnceLock<RelationTable> = OnceLock::new();
    match kind {
        RelationKind::ForwardTower => FORWARD.get_or_init(|| generate_relations(kind, 10)),
        RelationKind::DualForward => DUAL.get_or_init(|| generate_relations(kind, 12)),
        _ => panic!("{kind} is not a forward tower"),
    }
}

fn singles(series: FormalSeries<Poly>) -> Vec<Relation> {
    series
        .tail()
        .iter()
        .enumerate()
        .map(|(i, p)| Relation {
            target: Target::Single(i + 1),
            numerator: p.clone(),
            denominator_power: 0,
        })
        .collect()
}

fn moment_series(first_slot: usize, order: usize) -> FormalSeries<Poly> {
    let tail: Vec<Poly> = (0..order).map(|k| Poly::var(first_slot + k)).collect();
    FormalSeries::from_tail(&tail, order)
}

/// `M_S(x) = M_Σ(x (1 + r M_S(x)))` for series without constant term.
pub fn forward_series<T: Scalar>(sigma: &FormalSeries<T>, r: &T) -> FormalSeries<T> {
    let x = FormalSeries::variable(sigma.order());
    let mut s = sigma.clone();
    for _ in 1..sigma.order() {
        let inner = &x + &(&x * &s).scale(r);
        s = sigma.compose(&inner);
    }
    s
}

/// Inverse of [`forward_series`]: `M_Σ = M_S ∘ X^{-1}` with `X = x (1 + r M_S)`.
pub fn backward_series<T: Scalar>(s: &FormalSeries<T>, r: &T) -> FormalSeries<T> {
    let big_x = FormalSeries::variable(s.order());
    let mut x = big_x.clone();
    // x = X / (1 + r M_S(x)), one more coefficient per pass.
    for _ in 1..s.order() {
        let denom = &FormalSeries::constant(T::one(), s.order()) + &s.compose(&x).scale(r);
        x = &big_x * &denom.recip().expect("unit constant term");
    }
    s.compose(&x)
}

/// Dual forward map with `u = 1/(1-r)` supplied separately so the same code
/// runs symbolically: `D_S = D_Σ(z u / (1 - r u D_S))`.
pub fn dual_forward_series<T: Scalar>(sigma: &FormalSeries<T>, r: &T, u: &T) -> FormalSeries<T> {
    let k = sigma.order();
    let z = FormalSeries::variable(k);
    let one = FormalSeries::constant(T::one(), k);
    let ru = r.clone() * u.clone();
    let mut d = sigma.scale(&T::zero());
    for _ in 0..k {
        let denom = &one - &d.scale(&ru);
        let inner = (&z * &denom.recip().expect("unit constant term")).scale(u);
        d = sigma.compose(&inner);
    }
    d
}

/// Dual backward map: `D_Σ = D_S ∘ z(Z)` with `z = Z (1 - r - r D_S(z))`.
pub fn dual_backward_series<T: Scalar>(s: &FormalSeries<T>, r: &T) -> FormalSeries<T> {
    let k = s.order();
    let big_z = FormalSeries::variable(k);
    let one_minus_r = T::one() - r.clone();
    let mut z = big_z.scale(&one_minus_r);
    for _ in 1..k {
        let factor = &FormalSeries::constant(one_minus_r.clone(), k) - &s.compose(&z).scale(r);
        z = &big_z * &factor;
    }
    s.compose(&z)
}

fn forward_tower(order: usize) -> FormalSeries<Poly> {
    forward_series(&moment_series(1, order), &Poly::var(0))
}

fn backward_tower(order: usize) -> FormalSeries<Poly> {
    backward_series(&moment_series(1, order), &Poly::var(0))
}

fn dual_forward(order: usize) -> FormalSeries<Poly> {
    dual_forward_series(&moment_series(2, order), &Poly::var(0), &Poly::var(1))
}

fn dual_backward(order: usize) -> FormalSeries<Poly> {
    dual_backward_series(&moment_series(1, order), &Poly::var(0))
}

/// Connected double moments `α_{i,j} = i j [x^i y^j] ln(1 + Σ_k c_k h_k(x, y))`
/// for `c = (0, c_1, c_2, ...)`, where `h_k` is the complete homogeneous
/// polynomial of degree `k`.
pub fn double_series<T: Scalar>(c: &[T], order: usize) -> BiSeries<T> {
    let log = BiSeries::divided_difference(c, order).ln_one_plus();
    let mut out = BiSeries::zero(order);
    for i in 1..=order {
        for j in 1..=order {
            let w = T::from_int((i * j) as i64);
            out.set(i, j, log.get(i, j).clone() * w);
        }
    }
    out
}

fn double(order: usize) -> Vec<Relation> {
    let mut c = vec![Poly::zero()];
    c.extend((0..2 * order).map(Poly::var));
    let table = double_series(&c, order);
    pairs(order)
        .map(|(i, j)| Relation {
            target: Target::Pair(i, j),
            numerator: table.get(i, j).clone(),
            denominator_power: 0,
        })
        .collect()
}

fn dual_double(order: usize) -> Vec<Relation> {
    // Slots: b_{k} at k-2 for k = 2..=2 order + 2, then t = 1/b2.
    let t_slot = 2 * order + 1;
    let t = Poly::var(t_slot);
    let mut c = vec![Poly::zero()];
    c.extend((1..=2 * order).map(|k| &t * &Poly::var(k)));
    let table = double_series(&c, order);
    pairs(order)
        .map(|(i, j)| {
            let power = (i + j) as u32;
            let mut numerator = Poly::default();
            for (t_pow, coeff) in table.get(i, j).collect_in(t_slot) {
                assert!(t_pow <= power);
                let clear = Poly::monomial(BigRational::one(), Monomial::var(0, power - t_pow));
                numerator = &numerator + &(&coeff * &clear);
            }
            Relation {
                target: Target::Pair(i, j),
                numerator,
                denominator_power: power,
            }
        })
        .collect()
}

fn pairs(order: usize) -> impl Iterator<Item = (usize, usize)> {
    (1..=order).flat_map(move |i| (i..=order).map(move |j| (i, j)))
}
