//! Characteristic time `T(μ)`, oracle sampling proportions and the
//! sample-complexity lower bound.
//!
//! Arms are ranked by EVaR, lower is better. For the best arm `b` and an
//! alternative `j`, the confusion cost at proportions `t` is
//! `g_j(t) = inf_{x ∈ [EVaR(μ_b), EVaR(μ_j)]} t_b KL_inf^U(μ_b, x) + t_j KL_inf^L(μ_j, x)`
//! and `T(μ) = max_{t ∈ Σ_K} min_{j ≠ b} g_j(t)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::evar::evar;
use crate::klinf::{KlInfCache, KlInfSettings, Side};
use crate::measures::{DiscreteDistribution, RiskLevel};
use crate::numeric::brent_max;

/// Two arms whose EVaRs differ by at most this much count as tied.
pub const TIE_TOL: f64 = 1e-9;

/// Minimum number of thresholds examined on a common interval.
const PAIR_GRID: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Alternative {
    pub arm: usize,
    /// Common threshold attaining the pairwise infimum.
    pub x: f64,
    pub g_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleSolution {
    pub best: usize,
    pub weights: Vec<f64>,
    pub characteristic_time: f64,
    pub per_alternative: Vec<Alternative>,
}

/// `t · v` with the convention `0 · ∞ = 0`.
fn weighted(t: f64, v: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        t * v
    }
}

/// Pairwise confusion cost with a throwaway cache.
pub fn pairwise_g(
    best: &DiscreteDistribution,
    other: &DiscreteDistribution,
    t_best: f64,
    t_other: f64,
    r: RiskLevel,
) -> Result<(f64, f64)> {
    let cache = KlInfCache::new(KlInfSettings::default());
    pairwise_g_with(&cache, best, other, t_best, t_other, r)
}

/// `inf_x t_best KL^U(best, x) + t_other KL^L(other, x)` over the common
/// interval, by a 64-point grid and golden-section refinement around the
/// best grid point. Returns `(value, x)`.
pub fn pairwise_g_with(
    cache: &KlInfCache,
    best: &DiscreteDistribution,
    other: &DiscreteDistribution,
    t_best: f64,
    t_other: f64,
    r: RiskLevel,
) -> Result<(f64, f64)> {
    if t_best < 0.0 || t_other < 0.0 {
        return Err(Error::InvalidArgument(
            "pairwise weights must be nonnegative".into(),
        ));
    }
    let lo = evar(best, r).value;
    let hi = evar(other, r).value;
    if lo > hi + 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "arms passed in the wrong order: EVaR(best) = {lo} > EVaR(other) = {hi}"
        )));
    }
    if hi - lo <= 1e-12 || (t_best == 0.0 && t_other == 0.0) {
        return Ok((0.0, lo));
    }
    let phi = |x: f64| {
        weighted(t_best, cache.value(Side::Upper, best, x, r))
            + weighted(t_other, cache.value(Side::Lower, other, x, r))
    };
    let xs = threshold_grid(lo, hi);
    let values: Vec<f64> = xs.iter().map(|&x| phi(x)).collect();
    let k = argmin(&values);
    let a = xs[k.saturating_sub(1)];
    let b = xs[(k + 1).min(xs.len() - 1)];
    let (x, neg) = brent_max(|x| -phi(x), a, b, 1e-9);
    let x = KlInfCache::snap(x).clamp(a, b);
    let refined = -neg;
    if refined < values[k] {
        Ok((refined.max(0.0), x))
    } else {
        Ok((values[k].max(0.0), xs[k]))
    }
}

/// Thresholds covering `[lo, hi]`: both endpoints plus the multiples of the
/// largest power of two `h` with `(hi - lo) / h >= PAIR_GRID - 1`.
///
/// Anchoring the grid on a fixed dyadic lattice means a law whose own EVaR
/// did not change reuses its cached projections when the other arm's
/// interval endpoint moves.
pub fn threshold_grid(lo: f64, hi: f64) -> Vec<f64> {
    let width = hi - lo;
    if width <= 0.0 {
        return vec![lo];
    }
    let h = 2f64.powi(((width / (PAIR_GRID - 1) as f64).log2()).floor() as i32);
    let mut xs = vec![lo];
    let mut k = (lo / h).floor() + 1.0;
    while k * h < hi {
        let x = k * h;
        if x > lo {
            xs.push(x);
        }
        k += 1.0;
    }
    xs.push(hi);
    xs
}

/// Minimum value of the parabola through three points, when it is convex
/// and its vertex lies between the outer two.
fn parabola_min(x: [f64; 3], y: [f64; 3]) -> Option<f64> {
    if !y.iter().all(|v| v.is_finite()) {
        return None;
    }
    let d1 = (y[1] - y[0]) / (x[1] - x[0]);
    let d2 = (y[2] - y[1]) / (x[2] - x[1]);
    let a = (d2 - d1) / (x[2] - x[0]);
    if a <= 0.0 {
        return None;
    }
    // p(u) = y0 + d1 (u - x0) + a (u - x0)(u - x1)
    let xv = 0.5 * (x[0] + x[1]) - d1 / (2.0 * a);
    if xv < x[0] || xv > x[2] {
        return None;
    }
    Some(y[0] + d1 * (xv - x[0]) + a * (xv - x[0]) * (xv - x[1]))
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Index of the strictly best arm, or a degenerate-instance error.
pub fn best_arm(instance: &[DiscreteDistribution], r: RiskLevel) -> Result<usize> {
    if instance.len() < 2 {
        return Err(Error::InvalidArgument(
            "an instance needs at least two arms".into(),
        ));
    }
    let values: Vec<f64> = instance.iter().map(|d| evar(d, r).value).collect();
    let best = argmin(&values);
    for (a, v) in values.iter().enumerate() {
        if a != best && (v - values[best]).abs() <= TIE_TOL {
            return Err(Error::DegenerateInstance(format!(
                "arms {best} and {a} share the smallest EVaR {}",
                values[best]
            )));
        }
    }
    Ok(best)
}

/// Projection values of one pair tabulated on a uniform threshold grid.
struct PairTable {
    xs: Vec<f64>,
    upper: Vec<f64>,
    lower: Vec<f64>,
}

impl PairTable {
    fn build(
        cache: &KlInfCache,
        best: &DiscreteDistribution,
        other: &DiscreteDistribution,
        r: RiskLevel,
    ) -> Self {
        let lo = evar(best, r).value;
        let hi = evar(other, r).value;
        let xs = threshold_grid(lo, hi);
        Self {
            upper: xs
                .iter()
                .map(|&x| cache.value(Side::Upper, best, x, r))
                .collect(),
            lower: xs
                .iter()
                .map(|&x| cache.value(Side::Lower, other, x, r))
                .collect(),
            xs,
        }
    }

    /// Tabulated `g(t_b, t_j)` with a parabolic correction around the grid
    /// minimum.
    fn g(&self, tb: f64, tj: f64) -> f64 {
        let n = self.upper.len();
        let mut k = 0;
        let mut best = f64::INFINITY;
        let phi = |i: usize| weighted(tb, self.upper[i]) + weighted(tj, self.lower[i]);
        for i in 0..n {
            let v = phi(i);
            if v < best {
                best = v;
                k = i;
            }
        }
        if k == 0 || k == n - 1 {
            return best.max(0.0);
        }
        let x = [self.xs[k - 1], self.xs[k], self.xs[k + 1]];
        let y = [phi(k - 1), best, phi(k + 1)];
        match parabola_min(x, y) {
            Some(v) => v.max(0.0).min(best),
            None => best.max(0.0),
        }
    }
}

/// Smallest `s ∈ [0, cap]` with `table.g(tb, s) >= c` (g is nondecreasing in s).
fn inverse_weight(table: &PairTable, tb: f64, c: f64, cap: f64) -> f64 {
    if table.g(tb, 0.0) >= c {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, cap);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if table.g(tb, mid) >= c {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-13 {
            break;
        }
    }
    hi
}

/// Best achievable `min_j g_j` once the best arm's share is fixed to `tb`,
/// with the alternative shares that attain it.
fn profile(tables: &[PairTable], tb: f64) -> (f64, Vec<f64>) {
    let rest = 1.0 - tb;
    if tables.len() == 1 {
        return (tables[0].g(tb, rest), vec![rest]);
    }
    let c_max = tables
        .iter()
        .map(|t| t.g(tb, rest))
        .fold(f64::INFINITY, f64::min);
    let need = |c: f64| -> Vec<f64> {
        tables
            .iter()
            .map(|t| inverse_weight(t, tb, c, rest))
            .collect()
    };
    let (mut lo, mut hi) = (0.0, c_max);
    for _ in 0..60 {
        if hi - lo <= 1e-10 * c_max.max(1e-300) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if need(mid).iter().sum::<f64>() <= rest {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut shares = need(lo);
    let used: f64 = shares.iter().sum();
    if used > 0.0 {
        let scale = rest / used;
        for s in &mut shares {
            *s *= scale;
        }
    } else {
        shares.fill(rest / tables.len() as f64);
    }
    let value = tables
        .iter()
        .zip(&shares)
        .map(|(t, &s)| t.g(tb, s))
        .fold(f64::INFINITY, f64::min);
    (value, shares)
}

/// `T(μ)` and the oracle proportions with a throwaway cache.
pub fn characteristic_time(
    instance: &[DiscreteDistribution],
    r: RiskLevel,
) -> Result<OracleSolution> {
    let cache = KlInfCache::new(KlInfSettings::default());
    characteristic_time_with(&cache, instance, r)
}

/// Solves the max-min program by nesting one-dimensional searches on
/// tabulated projection profiles: golden section over the best arm's share,
/// bisection over the common level `c`, and per-alternative bisection for
/// the share reaching `c`. The reported `T` and per-alternative values are
/// then recomputed with [`pairwise_g_with`] at the returned proportions.
pub fn characteristic_time_with(
    cache: &KlInfCache,
    instance: &[DiscreteDistribution],
    r: RiskLevel,
) -> Result<OracleSolution> {
    let best = best_arm(instance, r)?;
    // canonical alternative order so that permuting arms permutes weights exactly
    let mut others: Vec<usize> = (0..instance.len()).filter(|&a| a != best).collect();
    others.sort_by_cached_key(|&j| instance[j].fingerprint());
    let tables: Vec<PairTable> = others
        .iter()
        .map(|&j| PairTable::build(cache, &instance[best], &instance[j], r))
        .collect();

    let (tb, _) = brent_max(|tb| profile(&tables, tb).0, 0.0, 1.0, 1e-9);
    let (_, shares) = profile(&tables, tb);
    let total = tb + shares.iter().sum::<f64>();
    let mut weights = vec![0.0; instance.len()];
    weights[best] = tb / total;
    for (&j, s) in others.iter().zip(&shares) {
        weights[j] = s / total;
    }
    evaluate(cache, instance, r, best, weights)
}

/// `Φ(μ, t) = min_{j ≠ best} g_j(t)` at arbitrary proportions.
pub fn phi(
    cache: &KlInfCache,
    instance: &[DiscreteDistribution],
    r: RiskLevel,
    weights: &[f64],
) -> Result<f64> {
    let best = best_arm(instance, r)?;
    Ok(evaluate(cache, instance, r, best, weights.to_vec())?.characteristic_time)
}

fn evaluate(
    cache: &KlInfCache,
    instance: &[DiscreteDistribution],
    r: RiskLevel,
    best: usize,
    weights: Vec<f64>,
) -> Result<OracleSolution> {
    if weights.len() != instance.len() {
        return Err(Error::InvalidArgument(
            "one weight per arm is required".into(),
        ));
    }
    let mut per_alternative = Vec::with_capacity(instance.len() - 1);
    for j in (0..instance.len()).filter(|&a| a != best) {
        let (g_value, x) = pairwise_g_with(
            cache,
            &instance[best],
            &instance[j],
            weights[best],
            weights[j],
            r,
        )?;
        per_alternative.push(Alternative { arm: j, x, g_value });
    }
    let characteristic_time = per_alternative
        .iter()
        .map(|a| a.g_value)
        .fold(f64::INFINITY, f64::min);
    Ok(OracleSolution {
        best,
        weights,
        characteristic_time,
        per_alternative,
    })
}

/// `ln(1/(4δ)) / T(μ)`, clamped at 0 for `δ >= 1/4`; `+∞` when `T = 0`.
pub fn lower_bound_from_time(characteristic_time: f64, delta: f64) -> f64 {
    let num = (1.0 / (4.0 * delta)).ln().max(0.0);
    if num == 0.0 {
        0.0
    } else if characteristic_time <= 0.0 {
        f64::INFINITY
    } else {
        num / characteristic_time
    }
}

pub fn sample_complexity_lower_bound(
    instance: &[DiscreteDistribution],
    r: RiskLevel,
    delta: f64,
) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    match characteristic_time(instance, r) {
        Ok(sol) => Ok(lower_bound_from_time(sol.characteristic_time, delta)),
        Err(Error::DegenerateInstance(_)) => Ok(lower_bound_from_time(0.0, delta)),
        Err(e) => Err(e),
    }
}
