//! Uniform time grids and a counter-based Gaussian increment source.
//!
//! Every Brownian increment is a pure function of `(seed, stream, step)`, so
//! results never depend on execution order. Coupled multi-level runs draw
//! only on the finest grid and obtain coarser increments by summing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifier recorded in run metadata.
pub const GENERATOR_ID: &str = "splitmix64-cascade(seed,stream,step)/u53-midpoint/as241-inverse-cdf";

/// Step index reserved for drawing initial conditions.
pub const INITIAL_STEP: u64 = u64::MAX;

/// Uniform grid `t_k = k·T/n` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGrid(format!("horizon {horizon} must be positive")));
        }
        if steps == 0 {
            return Err(Error::InvalidGrid("step count must be positive".into()));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Step size `ε = T/n`.
    pub fn eps(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.eps()
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(|k| self.node(k))
    }

    /// Index `k` with `t_k ≤ t < t_{k+1}`, for `t ∈ [0, T)`.
    fn interval(&self, t: f64) -> Result<usize> {
        if !(0.0..self.horizon).contains(&t) {
            return Err(Error::TimeOutOfRange { t, horizon: self.horizon });
        }
        let mut k = ((t / self.eps()).floor() as usize).min(self.steps - 1);
        if self.node(k) > t {
            k -= 1;
        } else if k + 1 < self.steps && self.node(k + 1) <= t {
            k += 1;
        }
        Ok(k)
    }

    /// Left grid node `τ(t)`; defined at `t = T` as `T`.
    pub fn tau(&self, t: f64) -> Result<f64> {
        if t == self.horizon {
            return Ok(self.horizon);
        }
        Ok(self.node(self.interval(t)?))
    }

    /// Right grid node `τ̄(t)` for `t ∈ [0, T)`.
    pub fn tau_bar(&self, t: f64) -> Result<f64> {
        Ok(self.node(self.interval(t)? + 1))
    }
}

/// Coordinates of one Brownian increment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoiseKey {
    pub seed: u64,
    pub stream: u64,
    pub step: u64,
}

impl NoiseKey {
    pub fn new(seed: u64, stream: u64, step: u64) -> Self {
        Self { seed, stream, step }
    }

    pub fn initial(seed: u64, stream: u64) -> Self {
        Self::new(seed, stream, INITIAL_STEP)
    }
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
pub fn random_bits(key: NoiseKey) -> u64 {
    splitmix64(splitmix64(splitmix64(key.seed) ^ key.stream) ^ key.step)
}

/// Uniform on the open interval `(0, 1)` from the top 53 bits.
#[inline]
pub fn uniform(key: NoiseKey) -> f64 {
    ((random_bits(key) >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

#[inline]
pub fn standard_normal(key: NoiseKey) -> f64 {
    inverse_normal_cdf(uniform(key))
}

/// `N(0, eps)` draw, deterministic in `key`.
#[inline]
pub fn gaussian_increment(key: NoiseKey, eps: f64) -> f64 {
    eps.sqrt() * standard_normal(key)
}

// AS241 (PPND16) coefficients, highest degree first.
const CENTRAL_NUM: [f64; 8] = [
    2509.0809287301226727,
    33430.575583588128105,
    67265.770927008700853,
    45921.953931549871457,
    13731.693765509461125,
    1971.5909503065514427,
    133.14166789178437745,
    3.387132872796366608,
];
const CENTRAL_DEN: [f64; 8] = [
    5226.495278852545925,
    28729.085735721942674,
    39307.89580009271061,
    21213.794301586595867,
    5394.1960214247511077,
    687.1870074920579083,
    42.313330701600911252,
    1.0,
];
const NEAR_NUM: [f64; 8] = [
    7.7454501427834140764e-4,
    0.0227238449892691845833,
    0.24178072517745061177,
    1.27045825245236838258,
    3.64784832476320460504,
    5.7694972214606914055,
    4.6303378461565452959,
    1.42343711074968357734,
];
const NEAR_DEN: [f64; 8] = [
    1.05075007164441684324e-9,
    5.475938084995344946e-4,
    0.0151986665636164571966,
    0.14810397642748007459,
    0.68976733498510000455,
    1.6763848301838038494,
    2.05319162663775882187,
    1.0,
];
const TAIL_NUM: [f64; 8] = [
    2.01033439929228813265e-7,
    2.71155556874348757815e-5,
    0.0012426609473880784386,
    0.026532189526576123093,
    0.29656057182850489123,
    1.7848265399172913358,
    5.4637849111641143699,
    6.6579046435011037772,
];
const TAIL_DEN: [f64; 8] = [
    2.04426310338993978564e-15,
    1.4215117583164458887e-7,
    1.8463183175100546818e-5,
    7.868691311456132591e-4,
    0.0148753612908506148525,
    0.13692988092273580531,
    0.59983220655588793769,
    1.0,
];

fn horner(coefficients: &[f64], r: f64) -> f64 {
    coefficients.iter().fold(0.0, |acc, &c| acc * r + c)
}


/// Inverse standard normal CDF (Wichura, algorithm AS241, ~1e-16 relative).
pub fn inverse_normal_cdf(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * horner(&CENTRAL_NUM, r) / horner(&CENTRAL_DEN, r);
    }
    let r = (-(if q < 0.0 { p } else { 1.0 - p }).ln()).sqrt();
    let value = if r <= 5.0 {
        horner(&NEAR_NUM, r - 1.6) / horner(&NEAR_DEN, r - 1.6)
    } else {
        horner(&TAIL_NUM, r - 5.0) / horner(&TAIL_DEN, r - 5.0)
    };
    if q < 0.0 {
        -value
    } else {
        value
    }
}

/// Block sums `out[j] = Σ fine[j·ratio .. (j+1)·ratio]`, ascending order.
pub fn coarsen_increments(fine: &[f64], ratio: usize) -> Result<Vec<f64>> {
    if ratio == 0 || fine.len() % ratio != 0 {
        return Err(Error::Divisibility { len: fine.len(), ratio });
    }
    Ok(fine.chunks(ratio).map(block_sum).collect())
}

#[inline]
fn block_sum(block: &[f64]) -> f64 {
    block.iter().fold(0.0, |acc, x| acc + x)
}

/// Brownian increments for a ladder of grid levels `n_1 < … < n_L` on
/// `[0, T]`, all derived from draws on the finest level.
///
/// Level `ℓ` increments are the block sums of level `ℓ+1` increments, so
/// coarsening any level by its ratio reproduces the next coarser level
/// bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledNoise {
    seed: u64,
    horizon: f64,
    levels: Vec<usize>,
}

impl CoupledNoise {
    pub fn new(seed: u64, horizon: f64, levels: &[usize]) -> Result<Self> {
        validate_levels(levels)?;
        TimeGrid::new(horizon, levels[0])?;
        Ok(Self { seed, horizon, levels: levels.to_vec() })
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn grid(&self, level: usize) -> TimeGrid {
        TimeGrid { horizon: self.horizon, steps: self.levels[level] }
    }

    fn finest_eps(&self) -> f64 {
        self.horizon / *self.levels.last().unwrap() as f64
    }

    /// Increment of `stream` over step `step` of level `level`.
    pub fn increment(&self, stream: u64, level: usize, step: usize) -> f64 {
        if level + 1 == self.levels.len() {
            return gaussian_increment(NoiseKey::new(self.seed, stream, step as u64), self.finest_eps());
        }
        let ratio = self.levels[level + 1] / self.levels[level];
        (step * ratio..(step + 1) * ratio)
            .fold(0.0, |acc, fine| acc + self.increment(stream, level + 1, fine))
    }

    /// Full increment array of `stream` on `level`, built by successive
    /// coarsening from the finest draws.
    pub fn increments(&self, stream: u64, level: usize) -> Vec<f64> {
        let finest = self.levels.len() - 1;
        let eps = self.finest_eps();
        let mut current: Vec<f64> = (0..self.levels[finest] as u64)
            .map(|k| gaussian_increment(NoiseKey::new(self.seed, stream, k), eps))
            .collect();
        for l in (level..finest).rev() {
            current = coarsen_increments(&current, self.levels[l + 1] / self.levels[l])
                .expect("level ratios validated at construction");
        }
        current
    }
}

/// Levels must be positive, strictly increasing, with integral ratios.
pub fn validate_levels(levels: &[usize]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::InvalidPlan("no grid levels".into()));
    }
    if levels[0] == 0 {
        return Err(Error::InvalidPlan("grid levels must be positive".into()));
    }
    for pair in levels.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::InvalidPlan(format!("levels not strictly increasing: {pair:?}")));
        }
        if pair[1] % pair[0] != 0 {
            return Err(Error::InvalidPlan(format!(
                "non-integral level ratio {}/{}",
                pair[1], pair[0]
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    #[test]
    fn tau_examples() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        assert_eq!(g.tau(0.3).unwrap(), 0.25);
        assert_eq!(g.tau_bar(0.3).unwrap(), 0.5);
        for k in 0..4 {
            let tk = g.node(k);
            assert_eq!(g.tau(tk).unwrap(), tk);
            assert_eq!(g.tau_bar(tk).unwrap(), g.node(k + 1));
        }
        assert_eq!(g.tau(1.0).unwrap(), 1.0);
        assert!(g.tau_bar(1.0).is_err());
        assert!(g.tau(-0.1).is_err());
        assert!(g.tau(1.5).is_err());
        let one = TimeGrid::new(2.0, 1).unwrap();
        assert_eq!((one.tau(0.0).unwrap(), one.tau_bar(0.0).unwrap()), (0.0, 2.0));
        assert!(TimeGrid::new(0.0, 3).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn tau_exact_on_awkward_nodes() {
        for n in [3usize, 7, 10, 49, 100, 1000] {
            let g = TimeGrid::new(0.3, n).unwrap();
            for k in 0..n {
                let tk = g.node(k);
                assert_eq!(g.tau(tk).unwrap(), tk, "n={n} k={k}");
            }
        }
    }

    proptest! {
        #[test]
        fn tau_brackets(n in 1usize..500, horizon in 0.1f64..10.0, frac in 0.0f64..1.0) {
            let g = TimeGrid::new(horizon, n).unwrap();
            let t = frac * horizon;
            prop_assume!(t < horizon);
            let (lo, hi) = (g.tau(t).unwrap(), g.tau_bar(t).unwrap());
            prop_assert!(lo <= t && t < hi);
            prop_assert!(((hi - lo) - g.eps()).abs() <= 1e-12 * horizon);
        }

        #[test]
        fn coarsening_preserves_total(fine in prop::collection::vec(-1.0f64..1.0, 24), ratio in prop::sample::select(vec![1usize, 2, 3, 4, 6, 8, 12, 24])) {
            let coarse = coarsen_increments(&fine, ratio).unwrap();
            prop_assert_eq!(coarse.len(), 24 / ratio);
            let a: f64 = fine.iter().sum();
            let b: f64 = coarse.iter().sum();
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn coarsen_examples() {
        assert_eq!(coarsen_increments(&[0.25, 0.5], 2).unwrap(), vec![0.75]);
        let v = vec![0.1, -0.2, 0.3];
        assert_eq!(coarsen_increments(&v, 1).unwrap(), v);
        assert_eq!(coarsen_increments(&v, 2), Err(Error::Divisibility { len: 3, ratio: 2 }));
        assert!(coarsen_increments(&v, 0).is_err());
    }

    #[test]
    fn inverse_cdf_matches_statrs() {
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut ps: Vec<f64> = (1..2000).map(|i| i as f64 / 2000.0).collect();
        ps.extend([1e-300, 1e-100, 1e-20, 1e-10, 1e-5, 0.02425, 0.075, 0.5 - 1e-12, 1.0 - 1e-10]);
        for p in ps {
            let ours = inverse_normal_cdf(p);
            let theirs = normal.inverse_cdf(p);
            assert!(
                (ours - theirs).abs() <= 1e-9 * (1.0 + theirs.abs()),
                "p = {p}: {ours} vs {theirs}"
            );
        }
        // 60-digit reference quantiles; the statrs tail CDF is only good to
        // about 1e-10 relative, so these pin the full double precision.
        let references = [
            (1e-300, -37.047096299361199237),
            (1e-20, -9.2623400897984075737),
            (1e-5, -4.2648907939228246285),
            (0.0005, -3.2905267314918947932),
            (0.02425, -1.9729610513118848503),
            (0.3, -0.52440051270804078404),
            (0.75, 0.6744897501960817432),
            (0.999, 3.0902323061678135415),
        ];
        for (p, x) in references {
            let ours = inverse_normal_cdf(p);
            assert!((ours - x).abs() <= 4.0 * f64::EPSILON * x.abs(), "p = {p}: {ours} vs {x}");
        }
        assert_eq!(inverse_normal_cdf(0.5), 0.0);
        assert_eq!(inverse_normal_cdf(0.0), f64::NEG_INFINITY);
    }

    #[test]
    fn increments_are_deterministic_and_calibrated() {
        let key = NoiseKey::new(42, 7, 1234);
        assert_eq!(gaussian_increment(key, 0.01).to_bits(), gaussian_increment(key, 0.01).to_bits());
        let eps = 0.01;
        let n = 1_000_000u64;
        let draws: Vec<f64> = (0..n).map(|k| gaussian_increment(NoiseKey::new(5, 0, k), eps)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() <= 4.0 * (eps / n as f64).sqrt(), "mean {mean}");
        assert!((var / eps - 1.0).abs() <= 0.01, "variance ratio {}", var / eps);
    }

    #[test]
    fn streams_are_uncorrelated() {
        let n = 100_000u64;
        let a: Vec<f64> = (0..n).map(|k| standard_normal(NoiseKey::new(9, 0, k))).collect();
        for stream in [1u64, 2, 1 << 20, u64::MAX - 1] {
            let b: Vec<f64> = (0..n).map(|k| standard_normal(NoiseKey::new(9, stream, k))).collect();
            let corr = pearson(&a, &b);
            assert!(corr.abs() < 0.01, "stream {stream}: correlation {corr}");
        }
        // shifted-step alignment against a neighbouring stream
        let c: Vec<f64> = (1..=n).map(|k| standard_normal(NoiseKey::new(9, 1, k))).collect();
        assert!(pearson(&a, &c).abs() < 0.01);
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn coupled_levels_coarsen_exactly() {
        let noise = CoupledNoise::new(3, 1.0, &[16, 32, 64]).unwrap();
        for stream in [0u64, 1, 99] {
            let arrays: Vec<Vec<f64>> = (0..3).map(|l| noise.increments(stream, l)).collect();
            for l in 0..2 {
                let ratio = noise.levels()[l + 1] / noise.levels()[l];
                let coarse = coarsen_increments(&arrays[l + 1], ratio).unwrap();
                assert!(coarse.iter().zip(&arrays[l]).all(|(a, b)| a.to_bits() == b.to_bits()));
            }
            for (l, arr) in arrays.iter().enumerate() {
                for (k, inc) in arr.iter().enumerate() {
                    assert_eq!(inc.to_bits(), noise.increment(stream, l, k).to_bits());
                }
            }
        }
    }

    #[test]
    fn level_validation() {
        assert!(validate_levels(&[8, 16, 64]).is_ok());
        let err = validate_levels(&[8, 12]).unwrap_err();
        assert!(err.to_string().contains("non-integral level ratio"));
        assert!(validate_levels(&[8, 8]).is_err());
        assert!(validate_levels(&[]).is_err());
    }
}
