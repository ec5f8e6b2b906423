//! Successive-interference-cancellation receivers for nonlinear fiber channels.
//!
//! The crate covers the correlated phase-and-additive-noise (CPAN) surrogate
//! channel, a split-step Fourier fiber simulator with a DSP front end,
//! Gaussian message-passing SIC detectors for Gaussian and ring
//! constellations, and Monte-Carlo achievable-rate estimation.

// `!(x > 0.0)` comparisons deliberately reject NaN alongside non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod air;
pub mod constellation;
pub mod cpan;
pub mod error;
pub mod estimation;
pub mod experiment;
pub mod fiber;
pub mod math;
pub mod rng;
pub mod sic;

pub use constellation::{ConstellationSpec, RingConstellation};
pub use cpan::{CpanParams, ParamTable};
pub use error::{Error, Result};
pub use fiber::{FiberParams, Waveform};
pub use math::{ComplexGaussianMoments, GaussianMessage};
pub use sic::SicSchedule;
