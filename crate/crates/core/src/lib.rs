//! Simulation and statistical verification toolkit for supercritical
//! multitype Markov branching processes in continuous time.
//!
//! The library is organized around the classical objects of the theory:
//!
//! * [`model`] — branching model definition (types, split rates, finite-support
//!   offspring laws) and its first-moment data `M`, `A`, `r`.
//! * [`spectral`] — Perron-Frobenius eigendata `(λ, π, h)`, the ancestral
//!   distribution `α`, the retrospective mutation generator `G` and its
//!   relatives, size-biased offspring laws, the matrix exponential, the
//!   Donsker-Varadhan level-2 rate function, and the variational principle
//!   for `λ`.
//! * [`forward`] — exact simulation of the forward family tree with lineage,
//!   population and occupation queries.
//! * [`biased`] — the size-biased tree with trunk (spine) and the
//!   retrospective mutation chain simulated directly.
//! * [`estimators`] — Monte Carlo verification of the change-of-measure
//!   identity, the Feynman-Kac formula, martingale and limit-theorem checks,
//!   and large-deviation rate estimates.
//! * [`rng`] — reproducible per-replicate random number substreams and the
//!   deterministic parallel replicate harness.

pub mod biased;
pub mod estimators;
pub mod forward;
pub mod linalg;
pub mod model;
pub mod path;
pub mod report;
pub mod rng;
pub mod spectral;

pub use model::{BranchingModel, MeanData, OffspringLaw, TypeIndex};
pub use path::{OccupationVector, SegmentStats, TypePath};
pub use spectral::SpectralData;
