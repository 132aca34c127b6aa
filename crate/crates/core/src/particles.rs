//! Interacting particle system under the Euler–Maruyama scheme.
//!
//! Each step freezes the statistics of the current empirical measure and
//! moves every particle with
//! `X_{k+1} = X_k + b(t_k, X_k, s_k)·ε + σ(t_k, X_k, s_k)·ΔB_k`.
//! Particle `j` of replication `r` reads its increments from stream
//! `r·m + j`, so replications never share noise and results do not depend on
//! the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Env;
use crate::functionals::MeasureFunctional;
use crate::gridrng::{standard_normal, validate_levels, CoupledNoise, NoiseKey, TimeGrid};
use crate::measures::{stats_of_slice, EmpiricalMeasure, GaussianLaw};
use crate::models::Model;

/// Positions beyond this magnitude count as a blow-up.
pub const BLOW_UP_THRESHOLD: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialCondition {
    Gaussian(GaussianLaw),
    Samples { samples: Vec<f64> },
}

impl InitialCondition {
    pub fn gaussian(mean: f64, variance: f64) -> Result<Self> {
        Ok(InitialCondition::Gaussian(GaussianLaw::new(mean, variance)?))
    }

    pub fn as_gaussian(&self) -> Option<&GaussianLaw> {
        match self {
            InitialCondition::Gaussian(law) => Some(law),
            InitialCondition::Samples { .. } => None,
        }
    }

    /// i.i.d. initial positions for one replication, drawn from the reserved
    /// initial-step keys of each particle stream.
    pub fn positions(&self, m: usize, seed: u64, replication: usize) -> Result<Vec<f64>> {
        match self {
            InitialCondition::Gaussian(law) => {
                let sd = law.std_dev();
                Ok((0..m)
                    .map(|j| law.mean() + sd * standard_normal(NoiseKey::initial(seed, stream_id(replication, m, j))))
                    .collect())
            }
            InitialCondition::Samples { samples } if samples.len() == m => Ok(samples.clone()),
            InitialCondition::Samples { samples } => {
                Err(Error::InvalidPlan(format!("{} initial samples for {m} particles", samples.len())))
            }
        }
    }
}

#[inline]
pub fn stream_id(replication: usize, m: usize, particle: usize) -> u64 {
    (replication as u64) * (m as u64) + particle as u64
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationPlan {
    pub model: Model,
    pub initial: InitialCondition,
    pub horizon: f64,
    /// `n_1 < … < n_L` with integral ratios.
    pub levels: Vec<usize>,
    pub particles: usize,
    pub replications: usize,
    pub seed: u64,
}

impl SimulationPlan {
    pub fn validate(&self) -> Result<()> {
        validate_levels(&self.levels)?;
        TimeGrid::new(self.horizon, self.levels[0])?;
        if self.particles < 2 {
            return Err(Error::InvalidPlan(format!("need at least 2 particles, got {}", self.particles)));
        }
        if self.replications < 1 {
            return Err(Error::InvalidPlan("need at least one replication".into()));
        }
        if let InitialCondition::Samples { samples } = &self.initial {
            if samples.len() != self.particles {
                return Err(Error::InvalidPlan(format!(
                    "{} initial samples for {} particles",
                    samples.len(),
                    self.particles
                )));
            }
        }
        Ok(())
    }

    pub fn noise(&self) -> Result<CoupledNoise> {
        CoupledNoise::new(self.seed, self.horizon, &self.levels)
    }
}

/// Statistics of the particle cloud at one grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsRow {
    pub level: usize,
    pub replication: usize,
    pub step: usize,
    pub t: f64,
    pub stats: Vec<f64>,
}

fn evolve<F>(
    model: &Model,
    mut positions: Vec<f64>,
    grid: &TimeGrid,
    increment: F,
    mut trace: Option<&mut Vec<StatsRow>>,
    tag: (usize, usize),
) -> Result<Vec<f64>>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let eps = grid.eps();
    let spec = model.stat_spec();
    for k in 0..=grid.steps() {
        let t = grid.node(k);
        let stats = stats_of_slice(spec, &positions)?;
        if let Some(rows) = trace.as_deref_mut() {
            rows.push(StatsRow { level: tag.0, replication: tag.1, step: k, t, stats: stats.clone() });
        }
        if k == grid.steps() {
            break;
        }
        let moved: Vec<Result<f64>> = positions
            .par_iter()
            .enumerate()
            .map(|(j, &x)| {
                let env = Env::new(t, x, &stats);
                let b = model.drift().eval(&env);
                let sigma = model.diffusion().eval(&env);
                if sigma < 0.0 {
                    return Err(Error::DiffusionSign(sigma));
                }
                Ok(x + b * eps + sigma * increment(j, k))
            })
            .collect();
        for (j, next) in moved.into_iter().enumerate() {
            let value = next?;
            if !value.is_finite() || value.abs() > BLOW_UP_THRESHOLD {
                return Err(Error::BlowUp { step: k + 1, particle: j, value });
            }
            positions[j] = value;
        }
    }
    Ok(positions)
}

/// Terminal empirical measure of `m` particles on a single grid.
pub fn simulate_particles(
    model: &Model,
    initial: &InitialCondition,
    grid: &TimeGrid,
    m: usize,
    seed: u64,
    replication: usize,
) -> Result<EmpiricalMeasure> {
    if m < 2 {
        return Err(Error::InvalidPlan(format!("need at least 2 particles, got {m}")));
    }
    let noise = CoupledNoise::new(seed, grid.horizon(), &[grid.steps()])?;
    let start = initial.positions(m, seed, replication)?;
    let inc = |j: usize, k: usize| noise.increment(stream_id(replication, m, j), 0, k);
    EmpiricalMeasure::new(evolve(model, start, grid, inc, None, (0, replication))?)
}

/// Output of one coupled replication.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledRun {
    /// Terminal empirical measure per level.
    pub terminal: Vec<EmpiricalMeasure>,
    /// Per-node statistics, filled only when tracing was requested.
    pub trace: Vec<StatsRow>,
}

/// One replication on every level, all levels driven by coarsenings of the
/// same finest-level increments and started from the same particles.
pub fn simulate_coupled(plan: &SimulationPlan, replication: usize) -> Result<Vec<EmpiricalMeasure>> {
    Ok(simulate_coupled_traced(plan, replication, false)?.terminal)
}

pub fn simulate_coupled_traced(plan: &SimulationPlan, replication: usize, record: bool) -> Result<CoupledRun> {
    plan.validate()?;
    let noise = plan.noise()?;
    let m = plan.particles;
    let start = plan.initial.positions(m, plan.seed, replication)?;
    let mut trace = Vec::new();
    let mut terminal = Vec::with_capacity(plan.levels.len());
    for level in 0..plan.levels.len() {
        let grid = noise.grid(level);
        let inc = |j: usize, k: usize| noise.increment(stream_id(replication, m, j), level, k);
        let rows = if record { Some(&mut trace) } else { None };
        let end = evolve(&plan.model, start.clone(), &grid, inc, rows, (grid.steps(), replication))?;
        terminal.push(EmpiricalMeasure::new(end)?);
    }
    Ok(CoupledRun { terminal, trace })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorResult {
    /// Step count `n` of this level.
    pub level: usize,
    pub value: f64,
    /// Sample standard deviation over replications divided by `√R`
    /// (zero for a single replication).
    pub stderr: f64,
    pub values: Vec<f64>,
}

impl EstimatorResult {
    fn from_values(level: usize, values: Vec<f64>) -> Self {
        let r = values.len() as f64;
        let value = values.iter().sum::<f64>() / r;
        let stderr = if values.len() > 1 {
            let var = values.iter().map(|v| (v - value).powi(2)).sum::<f64>() / (r - 1.0);
            (var / r).sqrt()
        } else {
            0.0
        };
        Self { level, value, stderr, values }
    }
}

/// Replication means of `U(μ^{n,m}_T)` at every level of the plan.
pub fn estimate_functional(plan: &SimulationPlan, functional: &MeasureFunctional) -> Result<Vec<EstimatorResult>> {
    Ok(estimate_functional_traced(plan, functional, false)?.0)
}

pub fn estimate_functional_traced(
    plan: &SimulationPlan,
    functional: &MeasureFunctional,
    record: bool,
) -> Result<(Vec<EstimatorResult>, Vec<StatsRow>)> {
    plan.validate()?;
    let per_replication: Vec<Result<(Vec<f64>, Vec<StatsRow>)>> = (0..plan.replications)
        .into_par_iter()
        .map(|r| {
            let run = simulate_coupled_traced(plan, r, record)?;
            let values = run.terminal.iter().map(|mu| functional.evaluate(mu)).collect::<Result<Vec<_>>>()?;
            Ok((values, run.trace))
        })
        .collect();
    let mut columns = vec![Vec::with_capacity(plan.replications); plan.levels.len()];
    let mut trace = Vec::new();
    for result in per_replication {
        let (values, rows) = result?;
        for (column, v) in columns.iter_mut().zip(values) {
            column.push(v);
        }
        trace.extend(rows);
    }
    let results = plan
        .levels
        .iter()
        .zip(columns)
        .map(|(&n, values)| EstimatorResult::from_values(n, values))
        .collect();
    Ok((results, trace))
}
