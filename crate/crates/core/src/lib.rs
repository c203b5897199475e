//! Photon-number statistics for SiPM (silicon photomultiplier) detectors.
//!
//! The crate covers the forward detection model (loss, dark counts and
//! optical crosstalk as column-stochastic response matrices), the source
//! photon-number families produced by multimode parametric down-conversion,
//! maximum-likelihood reconstruction of source parameters from measured count
//! histograms, a lattice Monte Carlo of crosstalk cascades used as an
//! independent check of the analytic crosstalk model, and pulse-height
//! histogram peak fitting.

pub mod distributions;
pub mod error;
pub mod estimation;
pub mod histogram;
pub mod lattice;
pub mod optim;
pub mod pulse;
pub mod response;
mod special;

pub use distributions::{ModeModel, ProbVec, SourceFamily, SourceModel, TRUNC_TOL};
pub use error::{Error, Result};
pub use histogram::CountHistogram;
pub use lattice::{Comparison, LatticeConfig, McResult};
pub use response::{DetectorParams, MatrixKind, ResponseMatrix};
