//! Weak-error expansion in powers of `1/n`: universal constants,
//! Richardson–Romberg combination and coefficient fitting.
//!
//! With `h(t) = τ̄(t) − t` and the periodic averaging operator
//! `Lg(t) = ∫_0^t (ḡ − g(s)) ds`, one has on the first period
//! `L^i h(t) = Σ_j C_{i,j} ε^{i−j+1} t^j` and mean `α_i ε^{i+1}`, with
//!
//! ```text
//! C_{0,0} = 1, C_{0,1} = −1, α_0 = 1/2,
//! C_{i+1,0} = 0, C_{i+1,1} = α_i − C_{i,0}, C_{i+1,j} = −C_{i,j−1}/j  (j ≥ 2),
//! α_{i+1} = α_i/2 − Σ_j C_{i,j}/((j+1)(j+2)).
//! ```
//!
//! The left-point quadrature identity
//! `(i+1) ∫_0^T (τ̄_t − t)^i f(τ_t) dt = Σ_{j<m} β_j ε^{i+j} ∫_0^T f^{(j)} + O(ε^{i+m})`
//! holds with `β_0 = 1` and `β_j = −α_{j−1}` for `j ≥ 1`.

use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::expr::{Env, Expr, Var};
use crate::gridrng::TimeGrid;

fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

pub fn to_f64(q: &BigRational) -> f64 {
    q.to_f64().unwrap_or(f64::NAN)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RationalConstantTable {
    pub order: usize,
    /// `α_0..=α_order`.
    pub alpha: Vec<BigRational>,
    /// `β_0..=β_order`.
    pub beta: Vec<BigRational>,
    /// Row `i` holds `C_{i,0..=i+1}`.
    pub c: Vec<Vec<BigRational>>,
}

pub fn compute_constants(order: usize) -> RationalConstantTable {
    let mut alpha = vec![rat(1, 2)];
    let mut c = vec![vec![rat(1, 1), rat(-1, 1)]];
    for i in 0..order {
        let row = &c[i];
        let a = &alpha[i];
        let mean_term = row
            .iter()
            .enumerate()
            .fold(BigRational::zero(), |acc, (j, cij)| acc + cij / BigInt::from((j + 1) * (j + 2)));
        let next_alpha = a / BigInt::from(2) - mean_term;
        let mut next = Vec::with_capacity(i + 3);
        next.push(BigRational::zero());
        next.push(a - &row[0]);
        for j in 2..=i + 2 {
            next.push(-&row[j - 1] / BigInt::from(j));
        }
        alpha.push(next_alpha);
        c.push(next);
    }
    let beta = std::iter::once(BigRational::one())
        .chain(alpha.iter().take(order).map(|a| -a))
        .collect();
    RationalConstantTable { order, alpha, beta, c }
}

impl RationalConstantTable {
    /// Rows `(index, α_i, β_i)` as exact fraction strings and decimals.
    pub fn rows(&self) -> Vec<ConstantRow> {
        (0..=self.order)
            .map(|i| ConstantRow {
                index: i,
                alpha: self.alpha[i].to_string(),
                alpha_decimal: to_f64(&self.alpha[i]),
                beta: self.beta[i].to_string(),
                beta_decimal: to_f64(&self.beta[i]),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstantRow {
    pub index: usize,
    pub alpha: String,
    pub alpha_decimal: f64,
    pub beta: String,
    pub beta_decimal: f64,
}

/// Residual of the quadrature identity at one grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureResidual {
    /// `LHS − Σ_{j<m} β_j ε^{i+j} ∫ f^{(j)}`.
    pub raw: f64,
    /// `raw / ε^i`, the residual of the identity after dividing out the
    /// common `ε^i` factor.
    pub scaled: f64,
}

/// Checks the quadrature expansion for `f(t)` (an expression in `t` only)
/// truncated after `m` terms, on the grid's full horizon.
///
/// The left side is integrated exactly per interval,
/// `∫_{t_k}^{t_{k+1}} (t_{k+1} − t)^i dt = ε^{i+1}/(i+1)`. On the right,
/// `∫ f^{(j)} = f^{(j−1)}(T) − f^{(j−1)}(0)` for `j ≥ 1` (symbolic
/// derivatives) and `∫ f` by composite Gauss–Legendre quadrature.
pub fn quadrature_expansion_check(f: &Expr, i: u32, m: usize, grid: &TimeGrid) -> Result<QuadratureResidual> {
    if f.depends_on(Var::State) || f.depends_on_stats() {
        return Err(Error::InvalidArgument("quadrature test function may only depend on t".into()));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("expansion needs at least one term".into()));
    }
    let eps = grid.eps();
    let horizon = grid.horizon();
    let at = |e: &Expr, t: f64| e.eval(&Env::time(t));

    let weight = eps.powi(i as i32 + 1) / (i as f64 + 1.0);
    let node_sum = neumaier_sum((0..grid.steps()).map(|k| at(f, grid.node(k))));
    let lhs = (i as f64 + 1.0) * weight * node_sum;

    let beta = compute_constants(m).beta;
    let mut terms = Vec::with_capacity(m);
    terms.push(to_f64(&beta[0]) * eps.powi(i as i32) * gauss_legendre(|t| at(f, t), 0.0, horizon));
    let mut lower = f.clone();
    for b in beta.iter().take(m).skip(1) {
        let integral = at(&lower, horizon) - at(&lower, 0.0);
        terms.push(to_f64(b) * eps.powi(i as i32 + terms.len() as i32) * integral);
        lower = lower.derivative(Var::Time);
    }
    let raw = lhs - neumaier_sum(terms.into_iter());
    Ok(QuadratureResidual { raw, scaled: raw / eps.powi(i as i32) })
}

fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

const GL_POINTS: usize = 16;
const GL_PANELS: usize = 64;

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Newton iteration on `P_n`.
fn legendre_rule(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|k| {
            let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for j in 2..=n {
                    let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

fn gauss_legendre(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let rule = legendre_rule(GL_POINTS);
    let width = (b - a) / GL_PANELS as f64;
    neumaier_sum((0..GL_PANELS).flat_map(|p| {
        let mid = a + (p as f64 + 0.5) * width;
        let f = &f;
        rule.iter().map(move |&(x, w)| 0.5 * width * w * f(mid + 0.5 * width * x))
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtrapolationResult {
    pub value: f64,
    /// Weights on the last `k` levels; they sum to one.
    pub weights: Vec<BigRational>,
    /// Number of leading error terms `C_1/n, …, C_{k−1}/n^{k−1}` removed.
    pub eliminated_orders: usize,
}

/// Exact weights `w` on `levels` with `Σ w_l = 1` and `Σ w_l n_l^{−p} = 0`
/// for `p = 1..k−1`, `k = levels.len()`.
pub fn richardson_weights(levels: &[usize]) -> Result<Vec<BigRational>> {
    let k = levels.len();
    if k == 0 {
        return Err(Error::InvalidArgument("no levels to combine".into()));
    }
    if levels.contains(&0) {
        return Err(Error::InvalidArgument("levels must be positive".into()));
    }
    // augmented Vandermonde system, row p: Σ_l n_l^{-p} w_l = δ_{p0}
    let mut a: Vec<Vec<BigRational>> = (0..k)
        .map(|p| {
            let mut row: Vec<BigRational> = levels
                .iter()
                .map(|&n| BigRational::new(BigInt::one(), BigInt::from(n).pow(p as u32)))
                .collect();
            row.push(if p == 0 { BigRational::one() } else { BigRational::zero() });
            row
        })
        .collect();
    for col in 0..k {
        let pivot = (col..k)
            .find(|&r| !a[r][col].is_zero())
            .ok_or_else(|| Error::Singular(format!("duplicate levels in {levels:?}")))?;
        a.swap(col, pivot);
        let inv = a[col][col].recip();
        for v in a[col].iter_mut() {
            *v = &*v * &inv;
        }
        for r in 0..k {
            if r != col && !a[r][col].is_zero() {
                let factor = a[r][col].clone();
                for c in col..=k {
                    let delta = &factor * &a[col][c];
                    a[r][c] = &a[r][c] - delta;
                }
            }
        }
    }
    Ok(a.into_iter().map(|row| row[k].clone()).collect())
}

/// Combines the last `k` of `values` (taken at `levels`) to cancel the
/// `1/n, …, 1/n^{k−1}` error terms.
pub fn richardson(values: &[f64], levels: &[usize], k: usize) -> Result<ExtrapolationResult> {
    if values.len() != levels.len() {
        return Err(Error::SizeMismatch { left: values.len(), right: levels.len() });
    }
    if k == 0 || k > levels.len() {
        return Err(Error::InvalidArgument(format!("k = {k} with {} levels", levels.len())));
    }
    if levels.windows(2).any(|w| w[1] == w[0]) {
        return Err(Error::Singular(format!("duplicate levels in {levels:?}")));
    }
    if levels.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument(format!("levels not increasing: {levels:?}")));
    }
    let tail = levels.len() - k;
    let weights = richardson_weights(&levels[tail..])?;
    let value = neumaier_sum(weights.iter().zip(&values[tail..]).map(|(w, v)| to_f64(w) * v));
    Ok(ExtrapolationResult { value, weights, eliminated_orders: k - 1 })
}

/// `k`-level combinations over every window of consecutive levels,
/// reported at the window's finest level.
pub fn richardson_windows(values: &[f64], levels: &[usize], k: usize) -> Result<Vec<(usize, f64)>> {
    if values.len() != levels.len() {
        return Err(Error::SizeMismatch { left: values.len(), right: levels.len() });
    }
    if k == 0 || k > levels.len() {
        return Err(Error::InvalidArgument(format!("k = {k} with {} levels", levels.len())));
    }
    (k..=levels.len())
        .map(|end| {
            let start = end - k;
            let combined = richardson(&values[start..end], &levels[start..end], k)?;
            Ok((levels[end - 1], combined.value))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionFit {
    /// `Ĉ_1..Ĉ_K`.
    pub coefficients: Vec<f64>,
    pub residual_norm: f64,
    /// Ratio of extreme singular values of the scaled design matrix.
    pub condition: f64,
}

/// Least-squares fit `error(n) ≈ Σ_{i≤K} Ĉ_i / n^i`.
///
/// Columns are scaled to `(n_max/n)^i` and the normal equations solved by
/// Cholesky; the coefficients are mapped back to the unscaled basis.
pub fn fit_expansion(pairs: &[(usize, f64)], order: usize) -> Result<ExpansionFit> {
    if order == 0 {
        return Err(Error::InvalidArgument("fit order must be positive".into()));
    }
    let mut distinct: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < order {
        return Err(Error::Underdetermined { needed: order, got: distinct.len() });
    }
    if distinct[0] == 0 {
        return Err(Error::InvalidArgument("levels must be positive".into()));
    }
    let n_max = *distinct.last().unwrap() as f64;
    let design = DMatrix::from_fn(pairs.len(), order, |r, i| (n_max / pairs[r].0 as f64).powi(i as i32 + 1));
    let target = DVector::from_iterator(pairs.len(), pairs.iter().map(|p| p.1));
    let gram = design.transpose() * &design;
    let rhs = design.transpose() * &target;
    let scaled = gram
        .cholesky()
        .ok_or_else(|| Error::Singular("normal equations are not positive definite".into()))?
        .solve(&rhs);
    let residual_norm = (&design * &scaled - &target).norm();
    let singular = design.singular_values();
    let condition = singular.max() / singular.min();
    let coefficients = scaled.iter().enumerate().map(|(i, c)| c * n_max.powi(i as i32 + 1)).collect();
    Ok(ExpansionFit { coefficients, residual_norm, condition })
}

/// Negated least-squares slope of `log|error|` against `log n`.
pub fn estimate_order(pairs: &[(usize, f64)]) -> Result<f64> {
    if let Some(&(n, _)) = pairs.iter().find(|p| p.1 == 0.0) {
        return Err(Error::ExactScheme(n));
    }
    let pts: Vec<(f64, f64)> = pairs.iter().map(|&(n, e)| ((n as f64).ln(), e.abs().ln())).collect();
    let first = pts.first().map(|p| p.0);
    if pts.len() < 2 || pts.iter().all(|p| Some(p.0) == first) {
        return Err(Error::Underdetermined { needed: 2, got: pts.len().min(1) });
    }
    if pts.iter().any(|p| !p.1.is_finite()) {
        return Err(Error::NonFinite { context: "error used in order estimate", value: f64::NAN });
    }
    Ok(-least_squares_slope(&pts))
}

pub fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// True when every weight set sums to exactly one.
pub fn weights_sum_to_one(weights: &[BigRational]) -> bool {
    weights.iter().fold(BigRational::zero(), |acc, w| acc + w).is_one()
}

/// Largest absolute weight, a noise-amplification diagnostic.
pub fn max_abs_weight(weights: &[BigRational]) -> f64 {
    weights.iter().map(|w| to_f64(&w.abs())).fold(0.0, f64::max)
}
