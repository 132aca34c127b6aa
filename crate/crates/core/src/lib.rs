//! Euler–Maruyama laboratory for McKean–Vlasov SDEs in dimension one.
//!
//! The crate simulates `dX_t = b(t, X_t, μ_t) dt + σ(t, X_t, μ_t) dB_t` with
//! `μ_t` the law of `X_t`, where every coefficient depends on the measure
//! through a finite vector of statistics. Two engines produce the time-`T`
//! law of the Euler scheme:
//!
//! * [`law`] propagates Gaussian laws exactly for the affine-Gaussian class,
//!   with no sampling noise, next to the exact law of the continuous SDE;
//! * [`particles`] runs the interacting particle system with coupled,
//!   counter-based Brownian increments across grid levels.
//!
//! [`expansion`] holds the exact rational constants of the weak-error
//! expansion in powers of `1/n`, Richardson–Romberg combinations and
//! coefficient fits.

pub mod error;
pub mod expansion;
pub mod expr;
pub mod functionals;
pub mod gridrng;
pub mod law;
pub mod measures;
pub mod models;
pub mod particles;

pub use error::{Error, Result};
pub use functionals::MeasureFunctional;
pub use gridrng::{NoiseKey, TimeGrid};
pub use measures::{EmpiricalMeasure, GaussianLaw, StatSpec, Statistic};
pub use models::Model;
