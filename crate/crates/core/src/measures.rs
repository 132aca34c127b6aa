//! Measure representations in dimension one and the statistics through which
//! every coefficient and functional sees them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridrng::inverse_normal_cdf;

/// Block size of the ordered reduction used for empirical statistics. Sums
/// are formed per block and then combined in ascending block order, so the
/// result does not depend on how many worker threads run the blocks.
pub const REDUCTION_CHUNK: usize = 4096;

/// One scalar statistic `φ`, entering as `∫ φ dμ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    /// Raw moment `x^p`, `p ∈ {1, 2, 3, 4}`.
    Moment(u8),
    /// Exponential tilt `e^{λx}`.
    ExpTilt(f64),
}

impl Statistic {
    pub fn moment(degree: u8) -> Result<Self> {
        if (1..=4).contains(&degree) {
            Ok(Statistic::Moment(degree))
        } else {
            Err(Error::InvalidArgument(format!("moment degree {degree} outside 1..=4")))
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Statistic::Moment(p) => Statistic::moment(p).map(|_| ()),
            Statistic::ExpTilt(l) if l.is_finite() => Ok(()),
            Statistic::ExpTilt(l) => Err(Error::InvalidArgument(format!("tilt rate {l}"))),
        }
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Statistic::Moment(p) => x.powi(p as i32),
            Statistic::ExpTilt(l) => (l * x).exp(),
        }
    }

    /// `φ'(x)`.
    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Statistic::Moment(1) => 1.0,
            Statistic::Moment(p) => p as f64 * x.powi(p as i32 - 1),
            Statistic::ExpTilt(l) => l * (l * x).exp(),
        }
    }

    /// `E[φ(Z)]` for `Z ~ N(mean, variance)`.
    pub fn gaussian_expectation(&self, mean: f64, variance: f64) -> Result<f64> {
        let (m, v) = (mean, variance);
        let value = match *self {
            Statistic::Moment(1) => m,
            Statistic::Moment(2) => m * m + v,
            Statistic::Moment(3) => m * m * m + 3.0 * m * v,
            Statistic::Moment(4) => m.powi(4) + 6.0 * m * m * v + 3.0 * v * v,
            Statistic::Moment(p) => {
                return Err(Error::UnsupportedStatistic(format!("moment of degree {p}")))
            }
            Statistic::ExpTilt(l) => (l * m + 0.5 * l * l * v).exp(),
        };
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::UnsupportedStatistic(format!("{self:?} overflows at N({m}, {v})")))
        }
    }
}

/// Ordered list of statistics `s = (∫φ_1 dμ, …, ∫φ_J dμ)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StatSpec(Vec<Statistic>);

impl StatSpec {
    pub fn new(stats: Vec<Statistic>) -> Result<Self> {
        stats.iter().try_for_each(Statistic::validate)?;
        Ok(Self(stats))
    }

    pub fn mean() -> Self {
        Self(vec![Statistic::Moment(1)])
    }

    pub fn mean_and_second_moment() -> Self {
        Self(vec![Statistic::Moment(1), Statistic::Moment(2)])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Statistic> {
        self.0.iter()
    }

    pub fn as_slice(&self) -> &[Statistic] {
        &self.0
    }
}

impl std::ops::Index<usize> for StatSpec {
    type Output = Statistic;

    fn index(&self, index: usize) -> &Statistic {
        &self.0[index]
    }
}

/// Uniform empirical measure `(1/m) Σ δ_{x_i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    samples: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        if let Some(&bad) = samples.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite { context: "empirical measure sample", value: bad });
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// `N(mean, variance)` on the real line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GaussianParts", into = "GaussianParts")]
pub struct GaussianLaw {
    mean: f64,
    variance: f64,
}

/// Unvalidated wire form, so deserialization goes through [`GaussianLaw::new`].
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GaussianParts {
    mean: f64,
    variance: f64,
}

impl TryFrom<GaussianParts> for GaussianLaw {
    type Error = Error;

    fn try_from(parts: GaussianParts) -> Result<Self> {
        GaussianLaw::new(parts.mean, parts.variance)
    }
}

impl From<GaussianLaw> for GaussianParts {
    fn from(law: GaussianLaw) -> Self {
        GaussianParts { mean: law.mean, variance: law.variance }
    }
}

impl GaussianLaw {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !mean.is_finite() {
            return Err(Error::NonFinite { context: "Gaussian mean", value: mean });
        }
        if !variance.is_finite() || variance < 0.0 {
            return Err(Error::InvalidVariance(variance));
        }
        Ok(Self { mean, variance })
    }

    /// Law with given first two raw moments.
    pub fn from_moments(first: f64, second: f64) -> Result<Self> {
        Self::new(first, second - first * first)
    }

    pub fn dirac(x: f64) -> Result<Self> {
        Self::new(x, 0.0)
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn second_moment(&self) -> f64 {
        self.mean * self.mean + self.variance
    }

    /// Deterministic quantile sample `x_i = F^{-1}((i + 1/2)/m)`.
    pub fn quantile_samples(&self, m: usize) -> Result<EmpiricalMeasure> {
        let sd = self.std_dev();
        let samples = (0..m)
            .map(|i| self.mean + sd * inverse_normal_cdf((i as f64 + 0.5) / m as f64))
            .collect();
        EmpiricalMeasure::new(samples)
    }
}

/// Empirical statistics via the fixed-block ordered reduction.
pub fn stats_of_slice(spec: &StatSpec, samples: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    let j = spec.len();
    let partials: Vec<Vec<f64>> = samples
        .par_chunks(REDUCTION_CHUNK)
        .map(|chunk| {
            spec.iter()
                .map(|phi| chunk.iter().map(|&x| phi.value(x)).sum::<f64>())
                .collect()
        })
        .collect();
    let mut totals = vec![0.0; j];
    for block in &partials {
        for (total, part) in totals.iter_mut().zip(block) {
            *total += part;
        }
    }
    let m = samples.len() as f64;
    Ok(totals.into_iter().map(|s| s / m).collect())
}

pub fn stats_of_empirical(spec: &StatSpec, mu: &EmpiricalMeasure) -> Result<Vec<f64>> {
    stats_of_slice(spec, mu.samples())
}

pub fn stats_of_gaussian(spec: &StatSpec, law: &GaussianLaw) -> Result<Vec<f64>> {
    spec.iter()
        .map(|phi| phi.gaussian_expectation(law.mean, law.variance))
        .collect()
}

/// A representation that can report statistics of itself.
pub trait Measure {
    fn stats(&self, spec: &StatSpec) -> Result<Vec<f64>>;
}

impl Measure for EmpiricalMeasure {
    fn stats(&self, spec: &StatSpec) -> Result<Vec<f64>> {
        stats_of_empirical(spec, self)
    }
}

impl Measure for GaussianLaw {
    fn stats(&self, spec: &StatSpec) -> Result<Vec<f64>> {
        stats_of_gaussian(spec, self)
    }
}

fn sorted(samples: &[f64]) -> Vec<f64> {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Exact W2 between equal-size empirical measures via the sorted coupling.
pub fn w2_empirical_1d(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch { left: a.len(), right: b.len() });
    }
    let (xs, ys) = (sorted(a.samples()), sorted(b.samples()));
    let sum: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sum / xs.len() as f64).sqrt())
}

pub fn w2_gaussian_1d(a: &GaussianLaw, b: &GaussianLaw) -> f64 {
    let dm = a.mean - b.mean;
    let ds = a.std_dev() - b.std_dev();
    (dm * dm + ds * ds).sqrt()
}
