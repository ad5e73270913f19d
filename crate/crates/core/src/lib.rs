//! Numerical engine for the geometry and information theory of Gibbs
//! (equilibrium) probabilities on the full shift over a finite alphabet.
//!
//! The crate is organised around the Ruelle transfer operator:
//!
//! * [`symbolic`] — exact finite-depth representation of the shift space:
//!   words, cylinder indexing, piecewise-constant functions and measures.
//! * [`transfer`] — the Ruelle operator, leading eigendata, pressure, the
//!   normalization map, Gibbs measures, entropy, the asymptotic-variance
//!   metric and kernel (tangent-space) projections.
//! * [`markov`] — closed-form Gibbs objects for stationary Markov chains;
//!   the exact oracle layer used by everything else.
//! * [`kl`] — KL-divergence calculus: one-parameter families, derivative
//!   formulas with their finite-difference oracles, Pythagorean/triangle
//!   defects, Bregman generator and information projections over simplices.
//! * [`basis`] — constructive Haar and Fourier-like bases with Gram,
//!   kernel-residual, Bowen-ratio and change-of-variables verification.
//! * [`geodesic`] — geodesic integration on the Markov surface and on
//!   finite-dimensional submanifold charts, boundary-value shooting, and
//!   the Leibniz-rule / normalization-derivative probes.
//!
//! All heavy inner loops run on rayon when the (default) `parallel` feature
//! is enabled and fall back to sequential iteration without it; results are
//! byte-identical either way because reductions use fixed chunking.

pub mod basis;
pub mod error;
pub mod geodesic;
pub mod kl;
pub mod markov;
pub mod par;
pub mod symbolic;
pub mod transfer;

pub use error::{Error, Result};
pub use symbolic::{CylinderFunction, CylinderMeasure, Word};
pub use transfer::{GibbsData, Potential, TangentVector};
