//! Exact and floating-point series algebra used to generate and evaluate
//! moment relations.

mod poly;
mod scalar;
mod series;

pub use poly::{Monomial, Poly};
pub use scalar::Scalar;
pub use series::{BiSeries, FormalSeries};
