//! Drift/diffusion pairs `b(t, x, s)`, `σ(t, x, s)` whose measure argument is
//! the statistics vector `s`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Env, Expr, Var};
use crate::measures::{StatSpec, Statistic};

/// Names of the built-in models.
pub const BUILTIN_MODELS: [&str; 5] = ["bm", "ou", "mfou", "mf_vol", "curie_weiss"];

/// Half-width of the `(x, s)` box on which built-in Lipschitz bounds hold.
pub const LIPSCHITZ_BOX: f64 = 2.0;

/// `b = a0 + a1·x + a2·s1` at a fixed time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineDrift {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    name: String,
    stat_spec: StatSpec,
    drift: Expr,
    diffusion: Expr,
    parameters: BTreeMap<String, f64>,
    affine: Option<AffineParts>,
    lipschitz_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct AffineParts {
    drift_dx: Expr,
    drift_ds1: Expr,
}

impl Model {
    /// Builds a model, detecting membership in the affine-Gaussian class.
    pub fn new(
        name: impl Into<String>,
        stat_spec: StatSpec,
        drift: Expr,
        diffusion: Expr,
        parameters: BTreeMap<String, f64>,
    ) -> Result<Self> {
        for (label, e) in [("drift", &drift), ("diffusion", &diffusion)] {
            if let Some(j) = e.max_stat_index() {
                if j >= stat_spec.len() {
                    return Err(Error::UnboundVariable(format!(
                        "s{} in {label} (model has {} statistics)",
                        j + 1,
                        stat_spec.len()
                    )));
                }
            }
        }
        let affine = affine_parts(&stat_spec, &drift, &diffusion);
        Ok(Self { name: name.into(), stat_spec, drift, diffusion, parameters, affine, lipschitz_bound: None })
    }

    /// Built-in model with `params` overriding the defaults
    /// (`theta = 1`, `c0 = 1`, `c1 = 0.5`, `kappa = 1`).
    pub fn builtin(name: &str, params: &BTreeMap<String, f64>) -> Result<Self> {
        let allowed: &[&str] = match name {
            "bm" => &["c0"],
            "ou" => &["theta", "c0"],
            "mfou" => &["theta", "c0"],
            "mf_vol" => &["c0", "c1"],
            "curie_weiss" => &["kappa", "c0"],
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown model `{name}`; available: {}",
                    BUILTIN_MODELS.join(", ")
                )))
            }
        };
        if let Some(bad) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::InvalidArgument(format!(
                "model `{name}` has no parameter `{bad}` (parameters: {})",
                allowed.join(", ")
            )));
        }
        let defaults = [("theta", 1.0), ("c0", 1.0), ("c1", 0.5), ("kappa", 1.0)];
        let mut table: BTreeMap<String, f64> = defaults
            .iter()
            .filter(|(k, _)| allowed.contains(k))
            .map(|(k, v)| (k.to_string(), *v))
            .collect();
        table.extend(params.iter().map(|(k, v)| (k.clone(), *v)));
        let p = |k: &str| table[k];

        let (drift, diffusion, bound) = match name {
            "bm" => ("0", "c0", 0.0),
            "ou" => ("-theta * x", "c0", p("theta").abs()),
            "mfou" => ("-theta * (x - s1)", "c0", 2.0 * p("theta").abs()),
            "mf_vol" => ("0", "c0 + c1 * s1", p("c1").abs()),
            _ => {
                let k = p("kappa");
                let box2 = LIPSCHITZ_BOX * LIPSCHITZ_BOX;
                ("-x^3 + x - kappa * (x - s1)", "c0", 3.0 * box2 + (1.0 - k).abs() + 2.0 * k.abs())
            }
        };
        let drift = Expr::parse_with(drift, &table)?;
        let diffusion = Expr::parse_with(diffusion, &table)?;
        let mut model = Model::new(name, StatSpec::mean(), drift, diffusion, table)?;
        model.lipschitz_bound = Some(bound);
        Ok(model)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn stat_spec(&self) -> &StatSpec {
        &self.stat_spec
    }

    pub fn drift(&self) -> &Expr {
        &self.drift
    }

    pub fn diffusion(&self) -> &Expr {
        &self.diffusion
    }

    pub fn parameters(&self) -> &BTreeMap<String, f64> {
        &self.parameters
    }

    pub fn is_affine(&self) -> bool {
        self.affine.is_some()
    }

    /// Declared bound on `|∂_x f| + |∂_s f|` over the box `[-2, 2]²`, `t ∈ [0, 1]`,
    /// for both coefficients. Built-ins only.
    pub fn lipschitz_bound(&self) -> Option<f64> {
        self.lipschitz_bound
    }

    fn check_stats(&self, s: &[f64]) -> Result<()> {
        if s.len() != self.stat_spec.len() {
            return Err(Error::StatsLength { expected: self.stat_spec.len(), got: s.len() });
        }
        Ok(())
    }

    pub fn eval_drift(&self, t: f64, x: f64, s: &[f64]) -> Result<f64> {
        self.check_stats(s)?;
        let value = self.drift.eval(&Env::new(t, x, s));
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::NonFinite { context: "drift", value })
        }
    }

    pub fn eval_diffusion(&self, t: f64, x: f64, s: &[f64]) -> Result<f64> {
        self.check_stats(s)?;
        let value = self.diffusion.eval(&Env::new(t, x, s));
        if !value.is_finite() {
            return Err(Error::NonFinite { context: "diffusion", value });
        }
        if value < 0.0 {
            return Err(Error::DiffusionSign(value));
        }
        Ok(value)
    }

    /// Affine drift coefficients at time `t`.
    pub fn affine_drift(&self, t: f64) -> Result<AffineDrift> {
        let parts = self.affine.as_ref().ok_or_else(|| Error::ExactLawUnavailable(self.name.clone()))?;
        let zeros = vec![0.0; self.stat_spec.len()];
        let env = Env::new(t, 0.0, &zeros);
        Ok(AffineDrift {
            a0: self.drift.eval(&env),
            a1: parts.drift_dx.eval(&env),
            a2: parts.drift_ds1.eval(&env),
        })
    }

    /// `σ = c(t, m)` for affine models, with `m` the mean.
    pub fn affine_diffusion(&self, t: f64, mean: f64) -> Result<f64> {
        if self.affine.is_none() {
            return Err(Error::ExactLawUnavailable(self.name.clone()));
        }
        let mut stats = vec![0.0; self.stat_spec.len()];
        if let Some(first) = stats.first_mut() {
            *first = mean;
        }
        self.eval_diffusion(t, 0.0, &stats)
    }

    /// True when neither coefficient varies with time or the measure, so the
    /// moment ODEs have constant coefficients.
    pub fn has_constant_coefficients(&self) -> bool {
        let Some(parts) = &self.affine else { return false };
        !self.drift.depends_on(Var::Time)
            && !parts.drift_dx.depends_on(Var::Time)
            && !self.diffusion.depends_on(Var::Time)
            && !self.diffusion.depends_on_stats()
    }
}

fn affine_parts(spec: &StatSpec, drift: &Expr, diffusion: &Expr) -> Option<AffineParts> {
    let only_mean = |e: &Expr| e.max_stat_index().is_none_or(|j| j == 0);
    let uses_mean = drift.max_stat_index().is_some() || diffusion.max_stat_index().is_some();
    if uses_mean && spec.as_slice().first() != Some(&Statistic::Moment(1)) {
        return None;
    }
    if !only_mean(drift) || !only_mean(diffusion) || diffusion.depends_on(Var::State) {
        return None;
    }
    let drift_dx = drift.derivative(Var::State);
    let drift_ds1 = drift.derivative(Var::Stat(0));
    let is_coefficient = |e: &Expr| !e.depends_on(Var::State) && !e.depends_on_stats();
    if !is_coefficient(&drift_dx) || !is_coefficient(&drift_ds1) {
        return None;
    }
    Some(AffineParts { drift_dx, drift_ds1 })
}

/// Serializable model description: a built-in name with parameter overrides,
/// or explicit expression strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum ModelSpec {
    Custom {
        name: String,
        stats: StatSpec,
        drift: String,
        diffusion: String,
        #[serde(default)]
        params: BTreeMap<String, f64>,
    },
    Builtin {
        name: String,
        #[serde(default)]
        params: BTreeMap<String, f64>,
    },
}

impl ModelSpec {
    pub fn builtin(name: &str) -> Self {
        ModelSpec::Builtin { name: name.to_string(), params: BTreeMap::new() }
    }

    pub fn build(&self) -> Result<Model> {
        match self {
            ModelSpec::Builtin { name, params } => Model::builtin(name, params),
            ModelSpec::Custom { name, stats, drift, diffusion, params } => Model::new(
                name.clone(),
                StatSpec::new(stats.as_slice().to_vec())?,
                Expr::parse_with(drift, params)?,
                Expr::parse_with(diffusion, params)?,
                params.clone(),
            ),
        }
    }
}

/// Convenience for building a parameter table.
pub fn params(entries: &[(&str, f64)]) -> BTreeMap<String, f64> {
    entries.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn builtin(name: &str, p: &[(&str, f64)]) -> Model {
        Model::builtin(name, &params(p)).unwrap()
    }

    #[test]
    fn drift_examples() {
        assert_eq!(builtin("ou", &[("theta", 1.0)]).eval_drift(0.0, 2.0, &[0.0]).unwrap(), -2.0);
        assert_eq!(builtin("mfou", &[("theta", 1.0)]).eval_drift(0.0, 2.0, &[0.5]).unwrap(), -1.5);
        assert_eq!(builtin("curie_weiss", &[("kappa", 0.0)]).eval_drift(0.0, 1.0, &[0.3]).unwrap(), 0.0);
        let err = builtin("ou", &[]).eval_drift(0.0, 1.0, &[]).unwrap_err();
        assert_eq!(err, Error::StatsLength { expected: 1, got: 0 });
    }

    #[test]
    fn diffusion_examples() {
        let r2 = std::f64::consts::SQRT_2;
        assert_eq!(builtin("ou", &[("c0", r2)]).eval_diffusion(0.3, 5.0, &[1.0]).unwrap(), r2);
        let vol = builtin("mf_vol", &[("c0", 1.0), ("c1", 0.5)]);
        assert_eq!(vol.eval_diffusion(0.0, 0.0, &[2.0]).unwrap(), 2.0);
        let bad = builtin("mf_vol", &[("c0", 1.0), ("c1", -1.0)]);
        let err = bad.eval_diffusion(0.0, 0.0, &[2.0]).unwrap_err();
        assert_eq!(err, Error::DiffusionSign(-1.0));
        assert!(err.to_string().contains("diffusion sign violation"));
    }

    #[test]
    fn registry_rejects_unknowns() {
        assert!(Model::builtin("heston", &BTreeMap::new()).is_err());
        assert!(Model::builtin("ou", &params(&[("kappa", 1.0)])).is_err());
    }

    #[test]
    fn affine_classification() {
        for name in ["bm", "ou", "mfou", "mf_vol"] {
            assert!(builtin(name, &[]).is_affine(), "{name}");
        }
        assert!(!builtin("curie_weiss", &[]).is_affine());
        let a = builtin("mfou", &[("theta", 2.0)]).affine_drift(0.0).unwrap();
        assert_eq!(a, AffineDrift { a0: 0.0, a1: -2.0, a2: 2.0 });
        assert!(builtin("ou", &[]).has_constant_coefficients());
        assert!(!builtin("mf_vol", &[]).has_constant_coefficients());

        let spec = StatSpec::mean();
        let state_dependent_vol =
            Model::new("cev", spec.clone(), "0".parse().unwrap(), "1 + x^2".parse().unwrap(), BTreeMap::new()).unwrap();
        assert!(!state_dependent_vol.is_affine());
        let time_affine =
            Model::new("tv", spec, "t * x + s1".parse().unwrap(), "1 + t".parse().unwrap(), BTreeMap::new()).unwrap();
        assert!(time_affine.is_affine());
        assert!(!time_affine.has_constant_coefficients());
        assert_eq!(time_affine.affine_drift(0.5).unwrap(), AffineDrift { a0: 0.0, a1: 0.5, a2: 1.0 });
    }

    #[test]
    fn custom_models_bind_statistics() {
        let spec = StatSpec::mean();
        let err = Model::new("x", spec, "s2".parse().unwrap(), "1".parse().unwrap(), BTreeMap::new());
        assert!(matches!(err, Err(Error::UnboundVariable(_))));
        let json = r#"{"name":"lin","stats":[{"moment":1}],"drift":"-a*x","diffusion":"b","params":{"a":2,"b":0.5}}"#;
        let spec: ModelSpec = serde_json::from_str(json).unwrap();
        let m = spec.build().unwrap();
        assert!(m.is_affine());
        assert_eq!(m.eval_drift(0.0, 1.0, &[0.0]).unwrap(), -2.0);
        let builtin: ModelSpec = serde_json::from_str(r#"{"name":"ou","params":{"theta":3}}"#).unwrap();
        assert_eq!(builtin, ModelSpec::Builtin { name: "ou".into(), params: params(&[("theta", 3.0)]) });
    }

    /// Finite-difference Lipschitz probe on a grid over the declared box.
    #[test]
    fn lipschitz_probe_below_declared_bound() {
        let h = 1e-6;
        let grid: Vec<f64> = (0..=16).map(|i| -LIPSCHITZ_BOX + i as f64 * LIPSCHITZ_BOX / 8.0).collect();
        for name in BUILTIN_MODELS {
            let m = builtin(name, &[]);
            let bound = m.lipschitz_bound().unwrap();
            let mut worst: f64 = 0.0;
            for t in [0.0, 0.5, 1.0] {
                for &x in &grid {
                    for &s in &grid {
                        for f in [Model::eval_drift, Model::eval_diffusion] {
                            // stencils touching the diffusion sign boundary are skipped
                            let probe = || -> Result<f64> {
                                let dx = (f(&m, t, x + h, &[s])? - f(&m, t, x - h, &[s])?) / (2.0 * h);
                                let ds = (f(&m, t, x, &[s + h])? - f(&m, t, x, &[s - h])?) / (2.0 * h);
                                Ok(dx.abs() + ds.abs())
                            };
                            if let Ok(slope) = probe() {
                                worst = worst.max(slope);
                            }
                        }
                    }
                }
            }
            assert!(worst <= bound * (1.0 + 1e-6) + 1e-6, "{name}: probe {worst} > bound {bound}");
        }
    }

    /// For affine models `b(t,x,s) − b(t,0,s0) = a1·x + a2·(s1 − s01)`.
    #[test]
    fn affine_drift_identity() {
        for name in ["bm", "ou", "mfou", "mf_vol"] {
            let m = builtin(name, &[]);
            let s0 = 0.3;
            for (i, t) in [0.0, 0.4, 1.0].into_iter().enumerate() {
                let a = m.affine_drift(t).unwrap();
                for k in 0..10 {
                    let x = -2.0 + 0.4 * k as f64 + 0.1 * i as f64;
                    let s1 = 1.5 - 0.3 * k as f64;
                    let lhs = m.eval_drift(t, x, &[s1]).unwrap() - m.eval_drift(t, 0.0, &[s0]).unwrap();
                    let rhs = a.a1 * x + a.a2 * (s1 - s0);
                    assert!((lhs - rhs).abs() <= 1e-14, "{name}: {lhs} vs {rhs}");
                }
            }
        }
    }
}
