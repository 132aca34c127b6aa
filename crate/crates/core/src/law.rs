//! Exact Gaussian law propagation for the affine-Gaussian model class.
//!
//! With `b = a0 + a1·x + a2·m` and `σ = c(t, m)`, one Euler step maps a
//! Gaussian law to a Gaussian law, and the continuous-time law solves the
//! moment ODEs `m' = a0 + (a1 + a2)·m`, `v' = 2·a1·v + c(t, m)²`. Both are
//! computed here without sampling, so weak errors carry no Monte Carlo noise.

use crate::error::{Error, Result};
use crate::functionals::MeasureFunctional;
use crate::gridrng::TimeGrid;
use crate::measures::{GaussianLaw, Statistic};
use crate::models::Model;

/// Variances in `(-VARIANCE_ROUNDOFF, 0)` are clamped to zero.
pub const VARIANCE_ROUNDOFF: f64 = 1e-15;

/// Step count of the fallback RK4 moment integrator.
pub const RK4_STEPS: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq)]
pub struct LawTrajectory {
    pub grid: TimeGrid,
    pub laws: Vec<GaussianLaw>,
}

impl LawTrajectory {
    pub fn terminal(&self) -> GaussianLaw {
        *self.laws.last().expect("trajectory holds the initial law")
    }
}

fn clamped_law(mean: f64, variance: f64) -> Result<GaussianLaw> {
    if variance < 0.0 && variance > -VARIANCE_ROUNDOFF {
        return GaussianLaw::new(mean, 0.0);
    }
    if variance < 0.0 {
        return Err(Error::NegativeVariance(variance));
    }
    GaussianLaw::new(mean, variance)
}

/// Law after one Euler step of size `eps` from time `t`.
pub fn euler_law_step(model: &Model, law: &GaussianLaw, t: f64, eps: f64) -> Result<GaussianLaw> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("step size {eps} must be positive")));
    }
    let a = model.affine_drift(t)?;
    let m = law.mean();
    let c = model.affine_diffusion(t, m)?;
    let mean = m + eps * (a.a0 + (a.a1 + a.a2) * m);
    let growth = 1.0 + eps * a.a1;
    clamped_law(mean, growth * growth * law.variance() + eps * c * c)
}

pub fn euler_law_trajectory(model: &Model, initial: &GaussianLaw, grid: &TimeGrid) -> Result<LawTrajectory> {
    let mut laws = Vec::with_capacity(grid.steps() + 1);
    laws.push(*initial);
    let eps = grid.eps();
    for k in 0..grid.steps() {
        let next = euler_law_step(model, &laws[k], grid.node(k), eps)?;
        laws.push(next);
    }
    Ok(LawTrajectory { grid: *grid, laws })
}

/// `μ^n_T`, the exact law of the Euler scheme at the horizon.
pub fn euler_terminal_law(model: &Model, initial: &GaussianLaw, grid: &TimeGrid) -> Result<GaussianLaw> {
    let eps = grid.eps();
    (0..grid.steps()).try_fold(*initial, |law, k| euler_law_step(model, &law, grid.node(k), eps))
}

/// `μ_T` for the SDE started from `initial` at time 0.
pub fn exact_law(model: &Model, initial: &GaussianLaw, horizon: f64) -> Result<GaussianLaw> {
    exact_law_between(model, initial, 0.0, horizon)
}

/// Law at time `end` of the SDE started from `initial` at time `start`.
pub fn exact_law_between(model: &Model, initial: &GaussianLaw, start: f64, end: f64) -> Result<GaussianLaw> {
    if !model.is_affine() {
        return Err(Error::ExactLawUnavailable(model.name().to_string()));
    }
    if !(end >= start) {
        return Err(Error::InvalidArgument(format!("exact law from {start} to {end}")));
    }
    let span = end - start;
    if span == 0.0 {
        return Ok(*initial);
    }
    if model.has_constant_coefficients() {
        let a = model.affine_drift(start)?;
        let c = model.affine_diffusion(start, initial.mean())?;
        let mean = initial.mean() * ((a.a1 + a.a2) * span).exp() + a.a0 * growth_integral(a.a1 + a.a2, span);
        let variance =
            initial.variance() * (2.0 * a.a1 * span).exp() + c * c * growth_integral(2.0 * a.a1, span);
        return clamped_law(mean, variance);
    }
    rk4_moments(model, initial, start, span)
}

/// `∫_0^T e^{k s} ds = (e^{kT} − 1)/k`, continuous at `k = 0`.
fn growth_integral(k: f64, span: f64) -> f64 {
    if k == 0.0 {
        span
    } else {
        (k * span).exp_m1() / k
    }
}

fn rk4_moments(model: &Model, initial: &GaussianLaw, start: f64, span: f64) -> Result<GaussianLaw> {
    let rhs = |t: f64, m: f64, v: f64| -> Result<(f64, f64)> {
        let a = model.affine_drift(t)?;
        let c = model.affine_diffusion(t, m)?;
        Ok((a.a0 + (a.a1 + a.a2) * m, 2.0 * a.a1 * v + c * c))
    };
    let h = span / RK4_STEPS as f64;
    let (mut m, mut v) = (initial.mean(), initial.variance());
    // Kahan compensation keeps the 2^16 accumulated increments from adding
    // ~1e-12 of roundoff, which finite differences of V would amplify by 1/h
    let (mut carry_m, mut carry_v) = (0.0, 0.0);
    for k in 0..RK4_STEPS {
        let t = start + k as f64 * h;
        let (k1m, k1v) = rhs(t, m, v)?;
        let (k2m, k2v) = rhs(t + 0.5 * h, m + 0.5 * h * k1m, v + 0.5 * h * k1v)?;
        let (k3m, k3v) = rhs(t + 0.5 * h, m + 0.5 * h * k2m, v + 0.5 * h * k2v)?;
        let (k4m, k4v) = rhs(t + h, m + h * k3m, v + h * k3v)?;
        compensated_add(&mut m, &mut carry_m, h / 6.0 * (k1m + 2.0 * k2m + 2.0 * k3m + k4m));
        compensated_add(&mut v, &mut carry_v, h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v));
    }
    clamped_law(m, v)
}

fn compensated_add(sum: &mut f64, carry: &mut f64, increment: f64) {
    let y = increment - *carry;
    let t = *sum + y;
    *carry = (t - *sum) - y;
    *sum = t;
}

/// `U(μ^n_T) − U(μ_T)` without sampling noise.
pub fn weak_error_exact(
    model: &Model,
    functional: &MeasureFunctional,
    initial: &GaussianLaw,
    grid: &TimeGrid,
) -> Result<f64> {
    let euler = euler_terminal_law(model, initial, grid)?;
    let exact = exact_law(model, initial, grid.horizon())?;
    Ok(functional.evaluate(&euler)? - functional.evaluate(&exact)?)
}

/// `V(r, μ) = U(law of X_T started from μ at time r)`.
pub fn value_function(
    model: &Model,
    functional: &MeasureFunctional,
    r: f64,
    law: &GaussianLaw,
    horizon: f64,
) -> Result<f64> {
    functional.evaluate(&exact_law_between(model, law, r, horizon)?)
}

/// Partial derivatives of `V` in time and in the first two raw moments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueDerivatives {
    pub dr: f64,
    pub ds1: f64,
    pub ds2: f64,
}

/// Residual of the backward equation
/// `∂_r V + ∫ [ b ∂_μV(μ; v) + ½ σ² ∂_v ∂_μV(μ; v) ] μ(dv) = 0`
/// for affine models and functionals depending on the mean and second moment.
///
/// Only `∂_r V`, `∂_{s1} V`, `∂_{s2} V` are finite-differenced (central, step
/// `fd_step`; one-sided second order in `r` near the horizon). The measure
/// derivative is assembled as `∂_μV(μ; v) = ∂_{s1}V + 2v·∂_{s2}V`, and the
/// `μ(dv)` integral is taken in closed form for Gaussian `μ`.
pub fn master_pde_residual(
    model: &Model,
    functional: &MeasureFunctional,
    r: f64,
    law: &GaussianLaw,
    horizon: f64,
    fd_step: f64,
) -> Result<f64> {
    if !model.is_affine() {
        return Err(Error::ExactLawUnavailable(model.name().to_string()));
    }
    let cylindrical_in_low_moments = functional
        .stat_spec()
        .iter()
        .all(|s| matches!(s, Statistic::Moment(1) | Statistic::Moment(2)));
    if !cylindrical_in_low_moments {
        return Err(Error::InvalidArgument(format!(
            "functional `{}` must depend only on the first two moments",
            functional.name()
        )));
    }
    if !(fd_step > 0.0) || !(0.0..=horizon).contains(&r) {
        return Err(Error::InvalidArgument(format!("r = {r}, fd_step = {fd_step}")));
    }

    let d = value_derivatives(model, functional, r, law, horizon, fd_step)?;
    let a = model.affine_drift(r)?;
    let m = law.mean();
    let s2 = law.second_moment();
    let c = model.affine_diffusion(r, m)?;
    let mean_drift = a.a0 + (a.a1 + a.a2) * m;
    let mean_x_drift = a.a0 * m + a.a1 * s2 + a.a2 * m * m;
    Ok(d.dr + d.ds1 * mean_drift + 2.0 * d.ds2 * mean_x_drift + d.ds2 * c * c)
}

pub fn value_derivatives(
    model: &Model,
    functional: &MeasureFunctional,
    r: f64,
    law: &GaussianLaw,
    horizon: f64,
    h: f64,
) -> Result<ValueDerivatives> {
    let (s1, s2) = (law.mean(), law.second_moment());
    let v = |r: f64, s1: f64, s2: f64| -> Result<f64> {
        value_function(model, functional, r, &GaussianLaw::from_moments(s1, s2)?, horizon)
    };
    let dr = if r + h <= horizon && r - h >= 0.0 {
        (v(r + h, s1, s2)? - v(r - h, s1, s2)?) / (2.0 * h)
    } else if r + h > horizon {
        (3.0 * v(r, s1, s2)? - 4.0 * v(r - h, s1, s2)? + v(r - 2.0 * h, s1, s2)?) / (2.0 * h)
    } else {
        (-3.0 * v(r, s1, s2)? + 4.0 * v(r + h, s1, s2)? - v(r + 2.0 * h, s1, s2)?) / (2.0 * h)
    };
    let ds1 = (v(r, s1 + h, s2)? - v(r, s1 - h, s2)?) / (2.0 * h);
    let ds2 = (v(r, s1, s2 + h)? - v(r, s1, s2 - h)?) / (2.0 * h);
    Ok(ValueDerivatives { dr, ds1, ds2 })
}
