//! Cylindrical functionals `U(μ) = F(∫φ_1 dμ, …, ∫φ_J dμ)` and their first
//! order Lions derivatives.
//!
//! For such `U` the lift `Ũ(X) = U(law(X))` has Fréchet derivative
//! `E[∂_μU(law(X); X)·Y]` in direction `Y`, with
//! `∂_μU(μ; v) = Σ_j ∂_jF(s(μ)) · φ_j'(v)`.
//! The gradient `∂_jF` is derived symbolically when the functional is built.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Env, Expr, Var};
use crate::measures::{stats_of_slice, EmpiricalMeasure, Measure, StatSpec, Statistic};

pub const BUILTIN_FUNCTIONALS: [&str; 5] = ["linear", "second_moment", "variance", "variance_squared", "exp_mean"];

#[derive(Debug, Clone, PartialEq)]
pub struct MeasureFunctional {
    name: String,
    stat_spec: StatSpec,
    outer: Expr,
    gradient: Vec<Expr>,
}

impl MeasureFunctional {
    pub fn new(name: impl Into<String>, stat_spec: StatSpec, outer: Expr) -> Result<Self> {
        if outer.depends_on(Var::State) || outer.depends_on(Var::Time) {
            return Err(Error::InvalidArgument("functional outer map may only use s1..sJ".into()));
        }
        if let Some(j) = outer.max_stat_index() {
            if j >= stat_spec.len() {
                return Err(Error::UnboundVariable(format!("s{} (functional has {} statistics)", j + 1, stat_spec.len())));
            }
        }
        let gradient = (0..stat_spec.len()).map(|j| outer.derivative(Var::Stat(j))).collect();
        Ok(Self { name: name.into(), stat_spec, outer, gradient })
    }

    pub fn parse(name: impl Into<String>, stat_spec: StatSpec, outer: &str) -> Result<Self> {
        Self::new(name, stat_spec, outer.parse()?)
    }

    /// `linear` is `∫x dμ`; `second_moment` is `∫x² dμ`.
    pub fn builtin(name: &str) -> Result<Self> {
        let m1 = Statistic::Moment(1);
        let m2 = Statistic::Moment(2);
        let (stats, outer) = match name {
            "linear" => (vec![m1], "s1"),
            "second_moment" => (vec![m2], "s1"),
            "variance" => (vec![m1, m2], "s2 - s1^2"),
            "variance_squared" => (vec![m1, m2], "(s2 - s1^2)^2"),
            "exp_mean" => (vec![m1], "exp(s1)"),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown functional `{name}`; available: {}",
                    BUILTIN_FUNCTIONALS.join(", ")
                )))
            }
        };
        Self::parse(name, StatSpec::new(stats)?, outer)
    }

    /// `U = ∫φ dμ` for a single statistic.
    pub fn linear_in(phi: Statistic) -> Result<Self> {
        Self::parse(format!("linear[{phi:?}]"), StatSpec::new(vec![phi])?, "s1")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn stat_spec(&self) -> &StatSpec {
        &self.stat_spec
    }

    pub fn outer(&self) -> &Expr {
        &self.outer
    }

    pub fn gradient(&self) -> &[Expr] {
        &self.gradient
    }

    pub fn evaluate_stats(&self, stats: &[f64]) -> Result<f64> {
        let value = self.outer.eval(&Env::stats(stats));
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::NonFinite { context: "functional value", value })
        }
    }

    pub fn evaluate<M: Measure + ?Sized>(&self, mu: &M) -> Result<f64> {
        self.evaluate_stats(&mu.stats(&self.stat_spec)?)
    }

    /// `∂_μU(μ; v)` given the statistics of `μ`.
    pub fn lions_derivative_at(&self, stats: &[f64], v: f64) -> f64 {
        let env = Env::stats(stats);
        self.gradient
            .iter()
            .zip(self.stat_spec.iter())
            .map(|(g, phi)| g.eval(&env) * phi.derivative(v))
            .sum()
    }

    pub fn lions_derivative<M: Measure + ?Sized>(&self, mu: &M, v: f64) -> Result<f64> {
        Ok(self.lions_derivative_at(&mu.stats(&self.stat_spec)?, v))
    }

    /// `(1/m) Σ_i ∂_μU(μ; x_i)·η_i` with `μ` the empirical measure of `samples`.
    pub fn lift_inner_product(&self, samples: &[f64], direction: &[f64]) -> Result<f64> {
        check_lengths(samples, direction)?;
        let stats = stats_of_slice(&self.stat_spec, samples)?;
        let sum: f64 = samples
            .iter()
            .zip(direction)
            .map(|(&x, &eta)| self.lions_derivative_at(&stats, x) * eta)
            .sum();
        Ok(sum / samples.len() as f64)
    }

    /// Central difference of the lift, `[Ũ(X + hη) − Ũ(X − hη)] / 2h`.
    pub fn lift_directional_fd(&self, samples: &[f64], direction: &[f64], h: f64) -> Result<f64> {
        check_lengths(samples, direction)?;
        if !(h > 0.0) {
            return Err(Error::InvalidArgument(format!("difference step {h} must be positive")));
        }
        let shifted = |sign: f64| -> Result<f64> {
            let moved = samples.iter().zip(direction).map(|(x, eta)| x + sign * h * eta).collect();
            self.evaluate(&EmpiricalMeasure::new(moved)?)
        };
        Ok((shifted(1.0)? - shifted(-1.0)?) / (2.0 * h))
    }
}

fn check_lengths(samples: &[f64], direction: &[f64]) -> Result<()> {
    if samples.len() != direction.len() {
        return Err(Error::SizeMismatch { left: samples.len(), right: direction.len() });
    }
    Ok(())
}

/// Serializable functional description: a built-in name or an explicit
/// `{stats, outer}` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FunctionalSpec {
    Name(String),
    Custom {
        #[serde(default = "custom_name")]
        name: String,
        stats: StatSpec,
        outer: String,
    },
}

fn custom_name() -> String {
    "custom".into()
}

impl FunctionalSpec {
    pub fn build(&self) -> Result<MeasureFunctional> {
        match self {
            FunctionalSpec::Name(name) => MeasureFunctional::builtin(name),
            FunctionalSpec::Custom { name, stats, outer } => {
                MeasureFunctional::parse(name.clone(), StatSpec::new(stats.as_slice().to_vec())?, outer)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridrng::{standard_normal, NoiseKey};
    use crate::measures::{w2_gaussian_1d, GaussianLaw};

    fn builtin(name: &str) -> MeasureFunctional {
        MeasureFunctional::builtin(name).unwrap()
    }

    #[test]
    fn evaluate_examples() {
        let law = GaussianLaw::new(3.0, 2.0).unwrap();
        assert_eq!(builtin("variance").evaluate(&law).unwrap(), 2.0);
        assert_eq!(builtin("variance_squared").evaluate(&GaussianLaw::new(0.0, 1.0).unwrap()).unwrap(), 1.0);
        let emp = EmpiricalMeasure::new(vec![0.0, 2.0]).unwrap();
        assert_eq!(builtin("second_moment").evaluate(&emp).unwrap(), 2.0);
        assert_eq!(MeasureFunctional::linear_in(Statistic::Moment(2)).unwrap().evaluate(&emp).unwrap(), 2.0);
        let tilt = MeasureFunctional::linear_in(Statistic::ExpTilt(900.0)).unwrap();
        assert!(matches!(tilt.evaluate(&law), Err(Error::UnsupportedStatistic(_))));
    }

    #[test]
    fn unknown_builtin_lists_names() {
        let err = MeasureFunctional::builtin("median").unwrap_err().to_string();
        for name in BUILTIN_FUNCTIONALS {
            assert!(err.contains(name), "{err}");
        }
    }

    #[test]
    fn lions_derivative_examples() {
        let law = GaussianLaw::new(0.0, 1.0).unwrap();
        let other = GaussianLaw::new(-2.0, 5.0).unwrap();
        let lin = builtin("linear");
        for v in [-1.0, 0.0, 2.5] {
            assert_eq!(lin.lions_derivative(&law, v).unwrap(), 1.0);
            assert_eq!(lin.lions_derivative(&other, v).unwrap(), 1.0);
            assert_eq!(builtin("variance").lions_derivative(&law, v).unwrap(), 2.0 * v);
        }
        let constant = MeasureFunctional::parse("c", StatSpec::mean(), "4").unwrap();
        assert_eq!(constant.lions_derivative(&other, 1.7).unwrap(), 0.0);
    }

    #[test]
    fn lift_of_mean_is_exact_along_translations() {
        let u = MeasureFunctional::parse("affine", StatSpec::mean(), "3 * s1 + 1").unwrap();
        let xs = [0.2, -1.0, 4.0];
        for h in [1e-1, 1e-3, 0.7] {
            let fd = u.lift_directional_fd(&xs, &[1.0; 3], h).unwrap();
            assert!((fd - 3.0).abs() < 1e-12, "h = {h}: {fd}");
        }
    }

    fn random_vec(seed: u64, stream: u64, m: usize) -> Vec<f64> {
        (0..m as u64).map(|k| standard_normal(NoiseKey::new(seed, stream, k))).collect()
    }

    #[test]
    fn lift_fd_matches_closed_form_and_is_second_order() {
        let u = builtin("variance");
        let xs = random_vec(1, 0, 37);
        let eta = random_vec(1, 1, 37);
        let exact = u.lift_inner_product(&xs, &eta).unwrap();
        let fd = u.lift_directional_fd(&xs, &eta, 1e-5).unwrap();
        assert!(((fd - exact) / exact).abs() <= 1e-6);

        let u = builtin("exp_mean");
        let exact = u.lift_inner_product(&xs, &eta).unwrap();
        let err = |h: f64| (u.lift_directional_fd(&xs, &eta, h).unwrap() - exact).abs();
        let ratio = err(1e-2) / err(5e-3);
        assert!((ratio - 4.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn lift_consistency_for_all_builtins() {
        for name in BUILTIN_FUNCTIONALS {
            let u = builtin(name);
            for trial in 0..20u64 {
                let m = 2 + (trial as usize * 7) % 99;
                let xs = random_vec(17, 2 * trial, m);
                let eta = random_vec(17, 2 * trial + 1, m);
                let exact = u.lift_inner_product(&xs, &eta).unwrap();
                let fd = u.lift_directional_fd(&xs, &eta, 1e-5).unwrap();
                let rel = (fd - exact).abs() / exact.abs();
                assert!(rel <= 1e-5, "{name} trial {trial}: {fd} vs {exact}");
            }
        }
    }

    #[test]
    fn representation_consistency() {
        for (m, v) in [(0.0, 1.0), (0.7, 0.3), (-1.2, 2.0)] {
            let law = GaussianLaw::new(m, v).unwrap();
            let samples = law.quantile_samples(1_000_000).unwrap();
            for name in ["linear", "second_moment", "variance", "variance_squared"] {
                let u = builtin(name);
                let (a, b) = (u.evaluate(&law).unwrap(), u.evaluate(&samples).unwrap());
                assert!((a - b).abs() <= 1e-3, "{name} at N({m},{v}): {a} vs {b}");
            }
        }
    }

    /// `|U(μ) − U(ν)| ≤ L̂ · W2(μ, ν)` on a bounded box of Gaussian pairs.
    #[test]
    fn lipschitz_probe_is_finite_on_a_box() {
        let laws: Vec<GaussianLaw> = (0..8)
            .flat_map(|i| (0..8).map(move |j| GaussianLaw::new(-1.0 + 0.25 * i as f64, 0.1 + 0.25 * j as f64).unwrap()))
            .collect();
        for name in BUILTIN_FUNCTIONALS {
            let u = builtin(name);
            let mut lhat: f64 = 0.0;
            for a in &laws {
                for b in &laws {
                    let w = w2_gaussian_1d(a, b);
                    if w > 0.0 {
                        lhat = lhat.max((u.evaluate(a).unwrap() - u.evaluate(b).unwrap()).abs() / w);
                    }
                }
            }
            assert!(lhat.is_finite() && lhat < 50.0, "{name}: L̂ = {lhat}");
        }
    }

    #[test]
    fn specs_build() {
        assert_eq!(FunctionalSpec::Name("variance".into()).build().unwrap(), builtin("variance"));
        let custom = FunctionalSpec::Custom {
            name: "m4".into(),
            stats: StatSpec::new(vec![Statistic::Moment(4)]).unwrap(),
            outer: "s1 / 3".into(),
        };
        let u = custom.build().unwrap();
        assert!((u.evaluate(&GaussianLaw::new(0.0, 1.0).unwrap()).unwrap() - 1.0).abs() < 1e-15);
        assert!(FunctionalSpec::Name("median".into()).build().is_err());
        let bad = FunctionalSpec::Custom { name: "x".into(), stats: StatSpec::mean(), outer: "x".into() };
        assert!(bad.build().is_err());
    }
}
