//! Eigen-inference for covariance matrices with an atomic spectrum.
//!
//! Given one sample covariance `S = X X† / T`, recover the distinct
//! eigenvalues `Λ_i` and weights `p_i` of the population covariance `Σ`:
//!
//! * [`pade`]: the one-point method. Backward moment towers to `Σ`,
//!   then poles and residues of a Padé approximant.
//! * [`mle`]: the two-point method. Gaussian likelihood of the trace
//!   fluctuations, with the dispersion matrix built from double moments.
//! * [`relations`]: exact generation of the moment relations both rely on.

pub mod algebra;
pub mod error;
pub mod experiment;
pub mod mle;
pub mod moments;
pub mod optim;
pub mod pade;
pub mod relations;
pub mod wishart;

pub use error::{Error, Result};
pub use experiment::{ExperimentConfig, ExperimentReport, MethodSpec};
pub use mle::{Objective, SignMapGrid};
pub use moments::{DoubleMomentMatrix, Family, MomentVector, SpectrumModel, Subject};
pub use pade::{InferenceResult, RationalApproximant, Thresholds};
pub use relations::{RelationKind, RelationTable};
pub use wishart::{Field, SampleSet};
