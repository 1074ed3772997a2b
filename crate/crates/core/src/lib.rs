//! Hermite-spectral simulation of the harmonic-oscillator NLS obtained from
//! NLS on the line by the lens transform, together with Monte Carlo tools for
//! Gaussian random initial data.
//!
//! Layout:
//! - [`hermite`]: Hermite functions, Gauss–Hermite quadrature, transforms.
//! - [`norms`]: `L^p`, Sobolev and Besov norms built on `H = −∂² + x²`.
//! - [`random`]: Gaussian measures, weighted densities, tail estimates.
//! - [`galerkin`]: the truncated flow, its energy law and Jacobian.
//! - [`lens`]: lens transform, free propagation, scattering profiles.
//! - [`harness`]: configuration, records and the Monte Carlo experiments.


// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
pub mod error;
pub mod galerkin;
pub mod harness;
pub mod hermite;
pub mod lens;
pub mod norms;
pub mod random;

pub use error::{Error, Result};
pub use galerkin::{GalerkinConfig, RecordSpec, Trajectory};
pub use hermite::{BasisTable, HermiteState, QuadratureGrid, C64};
pub use random::{MeasureParams, SampleSeed};
