//! Quasi-periodic invariant tori of second-order mechanical systems by
//! Fourier-series shooting.
//!
//! The unknown is the set of Fourier coefficients of the torus section at
//! `φ_1 = 0`. Each grid point of that section is integrated over one base
//! period with Newmark's average-acceleration scheme, transformed back to
//! coefficients and rotated by the rotation numbers; the mismatch with the
//! starting coefficients is the shooting residual.

pub mod continuation;
pub mod error;
pub mod harmonics;
pub mod integrator;
pub mod model;
pub mod oracle;
pub mod registry;
pub mod shooting;
pub mod stability;
pub mod validation;

pub use error::{Error, Result};
pub use harmonics::HarmonicScheme;
pub use model::{FrequencyVector, SecondOrderModel};
