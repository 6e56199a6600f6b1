#![allow(dead_code)]

use eigeninf::algebra::Poly;
use num_rational::BigRational;

/// Parses expressions like `-3 ( a1 ^4-3 a2 a1 ^2+ a2 ^2)` with implicit
/// multiplication into a polynomial over the named variables.
pub fn parse_expr(src: &str, vars: &[String]) -> Poly {
    let tokens = tokenize(src);
    let mut p = Parser { tokens, pos: 0, vars };
    let e = p.expr();
    assert_eq!(p.pos, p.tokens.len(), "trailing tokens in `{src}`");
    e
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(i64),
    Ident(String),
    Plus,
    Minus,
    Caret,
    Open,
    Close,
}

fn tokenize(src: &str) -> Vec<Tok> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' => i += 1,
            '+' => {
                out.push(Tok::Plus);
                i += 1
            }
            '-' => {
                out.push(Tok::Minus);
                i += 1
            }
            '^' => {
                out.push(Tok::Caret);
                i += 1
            }
            '(' => {
                out.push(Tok::Open);
                i += 1
            }
            ')' => {
                out.push(Tok::Close);
                i += 1
            }
            d if d.is_ascii_digit() => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                out.push(Tok::Num(s.parse().unwrap()));
            }
            a if a.is_ascii_alphabetic() => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                    i += 1;
                }
                out.push(Tok::Ident(chars[start..i].iter().collect()));
            }
            other => panic!("unexpected character {other:?}"),
        }
    }
    out
}

struct Parser<'a> {
    tokens: Vec<Tok>,
    pos: usize,
    vars: &'a [String],
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn expr(&mut self) -> Poly {
        let mut acc = Poly::default();
        let mut first = true;
        loop {
            let negative = match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    false
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    true
                }
                _ if first => false,
                _ => break,
            };
            first = false;
            let t = self.term();
            acc = if negative { &acc - &t } else { &acc + &t };
        }
        acc
    }

    fn term(&mut self) -> Poly {
        let mut acc = self.factor();
        while matches!(self.peek(), Some(Tok::Num(_) | Tok::Ident(_) | Tok::Open)) {
            let f = self.factor();
            acc = &acc * &f;
        }
        acc
    }

    fn factor(&mut self) -> Poly {
        let base = match self.tokens[self.pos].clone() {
            Tok::Num(n) => {
                self.pos += 1;
                Poly::from(n)
            }
            Tok::Ident(name) => {
                self.pos += 1;
                let slot = self
                    .vars
                    .iter()
                    .position(|v| *v == name)
                    .unwrap_or_else(|| panic!("unknown variable {name}"));
                Poly::var(slot)
            }
            Tok::Open => {
                self.pos += 1;
                let e = self.expr();
                assert_eq!(self.peek(), Some(&Tok::Close));
                self.pos += 1;
                e
            }
            t => panic!("unexpected token {t:?}"),
        };
        if self.peek() == Some(&Tok::Caret) {
            self.pos += 1;
            let Tok::Num(e) = self.tokens[self.pos] else {
                panic!("exponent must be an integer")
            };
            self.pos += 1;
            let mut out = Poly::from(1);
            for _ in 0..e {
                out = &out * &base;
            }
            return out;
        }
        base
    }
}

/// One row of a published closed-form table.
pub struct FixtureRow {
    pub i: usize,
    pub j: usize,
    pub denominator_power: u32,
    pub expr: Poly,
}

pub fn load_fixture(text: &str, vars: &[String]) -> Vec<FixtureRow> {
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let mut parts = l.split('|');
            let (i, j) = parts.next().unwrap().trim().split_once(',').unwrap();
            let power = parts.next().unwrap().trim().parse().unwrap();
            let expr = parse_expr(parts.next().unwrap(), vars);
            FixtureRow {
                i: i.parse().unwrap(),
                j: j.parse().unwrap(),
                denominator_power: power,
                expr,
            }
        })
        .collect()
}

pub fn rational(n: i64, d: i64) -> BigRational {
    BigRational::new(n.into(), d.into())
}
