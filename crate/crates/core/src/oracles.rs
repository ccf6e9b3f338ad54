//! Slow brute-force references for the fast solvers.
//!
//! EVaR and KL evaluations here use their own arithmetic and never call into
//! `measures`/`evar` numerics. [`tmu_grid`] is the exception: it tabulates
//! projection values with the fast `klinf` solvers and only brute-forces the
//! outer simplex and threshold searches.
//!
//! Direction of each bound:
//! * [`evar_grid`] minimizes over a subset of `z`, so it upper-bounds EVaR.
//! * [`klinf_primal_grid`] minimizes over a subset of the feasible laws, so it
//!   upper-bounds the projection.
//! * [`tmu_grid`] maximizes over a subset of the simplex (with a gridded
//!   inner minimum), so it approximates `T(μ)` from below up to the
//!   threshold-grid error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::klinf::{KlInfCache, KlInfSettings, Side};
use crate::measures::{DiscreteDistribution, RiskLevel};

/// Resolutions of the brute-force searches.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub z_points: usize,
    pub simplex_step: f64,
    pub x_points: usize,
}

impl GridSpec {
    pub fn new(z_points: usize, simplex_step: f64, x_points: usize) -> Result<Self> {
        if z_points < 2 || x_points < 2 {
            return Err(Error::InvalidArgument(
                "grid sizes must be at least 2".into(),
            ));
        }
        let cells = (1.0 / simplex_step).round();
        if !(simplex_step > 0.0 && simplex_step <= 0.5) || (cells * simplex_step - 1.0).abs() > 1e-9
        {
            return Err(Error::InvalidArgument(format!(
                "simplex step {simplex_step} must be 1/m for an integer m >= 2"
            )));
        }
        Ok(Self {
            z_points,
            simplex_step,
            x_points,
        })
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            z_points: 100_000,
            simplex_step: 1.0 / 2000.0,
            x_points: 10_000,
        }
    }
}

fn atoms(d: &DiscreteDistribution) -> Vec<(f64, f64)> {
    d.atoms().collect()
}

/// `(ln Σ m e^{z x} + ρ) / z`, shifted by the largest exponent.
fn chernoff(atoms: &[(f64, f64)], rho: f64, z: f64) -> f64 {
    let top = atoms
        .iter()
        .filter(|a| a.1 > 0.0)
        .map(|a| a.0)
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = atoms
        .iter()
        .filter(|a| a.1 > 0.0)
        .map(|&(x, m)| m * (z * (x - top)).exp())
        .sum();
    top + (sum.ln() + rho) / z
}

fn support_max(atoms: &[(f64, f64)]) -> f64 {
    atoms
        .iter()
        .filter(|a| a.1 > 0.0)
        .map(|a| a.0)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// EVaR upper bound from a log-spaced grid `z ∈ [1e-4, 1e4]`, also compared
/// with the boundary value `x_max`.
pub fn evar_grid(d: &DiscreteDistribution, r: RiskLevel, z_points: usize) -> f64 {
    let a = atoms(d);
    let rho = -(1.0 - r.alpha()).ln();
    let (lo, hi) = (1e-4f64.ln(), 1e4f64.ln());
    let n = z_points.max(2);
    (0..n)
        .map(|k| chernoff(&a, rho, (lo + (hi - lo) * k as f64 / (n - 1) as f64).exp()))
        .fold(support_max(&a), f64::min)
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// EVaR by golden-section search on `ln z ∈ [ln 1e-8, ln 1e12]`; the
/// Chernoff objective is unimodal in `z`.
fn evar_golden(atoms: &[(f64, f64)], rho: f64) -> f64 {
    let top = support_max(atoms);
    let f = |u: f64| chernoff(atoms, rho, u.exp());
    let (mut a, mut b) = (1e-8f64.ln(), 1e12f64.ln());
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-11 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    fc.min(fd).min(top)
}

/// Reference EVaR independent of the `evar` module.
pub fn evar_reference(d: &DiscreteDistribution, r: RiskLevel) -> f64 {
    evar_golden(&atoms(d), -(1.0 - r.alpha()).ln())
}

/// `p ln(p/q) - p + q`: nonnegative per atom and summing to the KL
/// divergence between two probability vectors, so partial sums are valid
/// lower bounds for pruning.
fn kl_term(p: f64, q: f64) -> f64 {
    if p == 0.0 {
        q
    } else if q <= 0.0 {
        f64::INFINITY
    } else {
        (p * (p / q).ln() - p + q).max(0.0)
    }
}

/// Primal brute force for `KL_inf^U` (`side = Upper`) or `KL_inf^L`.
///
/// Limited to at most 3 candidate locations; a 4-point support would need a
/// two-dimensional enumeration of ~`(1/step)^2/2` cells.
///
/// Candidate laws live on `supp(η)` plus the endpoint that relieves the
/// constraint (1 for the upper side, 0 for the lower side). All coordinates
/// except the two largest locations run over multiples of `simplex_step`;
/// the remaining mass is split between those two by the exact constrained
/// optimum of the split share, found by bisection on the reference EVaR
/// (which is monotone in that share). Nested steps give nested candidate
/// sets, so halving the step never increases the value. Returns `+∞` if no
/// candidate is feasible.
pub fn klinf_primal_grid(
    eta: &DiscreteDistribution,
    nu: f64,
    r: RiskLevel,
    side: Side,
    simplex_step: f64,
) -> Result<f64> {
    let rho = -(1.0 - r.alpha()).ln();
    let base = atoms(eta);
    let current = evar_golden(&base, rho);
    let feasible = |e: f64| match side {
        Side::Upper => e >= nu,
        Side::Lower => e <= nu,
    };
    if feasible(current) {
        return Ok(0.0);
    }
    let endpoint = match side {
        Side::Upper => 1.0,
        Side::Lower => 0.0,
    };
    let mut support: Vec<(f64, f64)> = base.clone();
    if !support.iter().any(|a| a.0 == endpoint) {
        support.push((endpoint, 0.0));
    }
    support.sort_by(|a, b| a.0.total_cmp(&b.0));
    let m = support.len();
    if m > 3 {
        return Err(Error::InvalidArgument(
            "the primal grid oracle supports at most 3 candidate locations (supp(η) plus the endpoint)"
                .into(),
        ));
    }
    let cells = (1.0 / simplex_step).round() as u64;
    let h = 1.0 / cells as f64;

    let mut best = f64::INFINITY;
    let mut grid = vec![0u64; m.saturating_sub(2)];
    loop {
        let used: u64 = grid.iter().sum();
        if used <= cells {
            let mut fixed = 0.0;
            for (i, &g) in grid.iter().enumerate() {
                fixed += kl_term(support[i].1, g as f64 * h);
            }
            let rest = (cells - used) as f64 * h;
            if fixed < best {
                if let Some(v) = best_split(&support, &grid, h, rest, rho, nu, side, best - fixed) {
                    best = best.min(fixed + v);
                }
            }
        }
        // odometer over the enumerated coordinates
        let mut i = 0;
        loop {
            if i == grid.len() {
                return Ok(best);
            }
            grid[i] += 1;
            if grid.iter().sum::<u64>() <= cells {
                break;
            }
            grid[i] = 0;
            i += 1;
        }
    }
}

/// Minimal KL contribution of the top two atoms sharing `rest` mass subject
/// to the EVaR constraint, or `None` if infeasible or not below `budget`.
#[allow(clippy::too_many_arguments)]
fn best_split(
    support: &[(f64, f64)],
    grid: &[u64],
    h: f64,
    rest: f64,
    rho: f64,
    nu: f64,
    side: Side,
    budget: f64,
) -> Option<f64> {
    let m = support.len();
    let (ep, eq) = (support[m - 2].1, support[m - 1].1);
    let pair = |s: f64| kl_term(ep, (1.0 - s) * rest) + kl_term(eq, s * rest);
    let law = |s: f64| -> Vec<(f64, f64)> {
        let mut v: Vec<(f64, f64)> = grid
            .iter()
            .enumerate()
            .map(|(i, &g)| (support[i].0, g as f64 * h))
            .collect();
        v.push((support[m - 2].0, (1.0 - s) * rest));
        v.push((support[m - 1].0, s * rest));
        v
    };
    let e = |s: f64| evar_golden(&law(s), rho);
    let s_free = if ep + eq > 0.0 { eq / (ep + eq) } else { 0.5 };
    if pair(s_free) >= budget {
        return None;
    }
    // moving mass to the top atom raises EVaR
    let (ok, s) = match side {
        Side::Upper => {
            if e(1.0) < nu {
                return None;
            }
            if e(s_free) >= nu {
                (true, s_free)
            } else {
                let (mut lo, mut hi) = (s_free, 1.0);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if e(mid) >= nu {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                (true, hi)
            }
        }
        Side::Lower => {
            if e(0.0) > nu {
                return None;
            }
            if e(s_free) <= nu {
                (true, s_free)
            } else {
                let (mut lo, mut hi) = (0.0, s_free);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if e(mid) <= nu {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                (true, lo)
            }
        }
    };
    ok.then(|| pair(s)).filter(|v| v.is_finite())
}

/// Exhaustive `T(μ)` for `K <= 3`: maximum over the gridded simplex of the
/// minimum over alternatives of the pairwise cost minimized on `x_points`
/// uniform thresholds. Identical best arms give 0.
pub fn tmu_grid(
    instance: &[DiscreteDistribution],
    r: RiskLevel,
    simplex_step: f64,
    x_points: usize,
) -> Result<f64> {
    let k = instance.len();
    if !(2..=3).contains(&k) {
        return Err(Error::InvalidArgument(
            "the simplex oracle supports 2 or 3 arms".into(),
        ));
    }
    let values: Vec<f64> = instance.iter().map(|d| evar_reference(d, r)).collect();
    let mut best = 0;
    for (a, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = a;
        }
    }
    let others: Vec<usize> = (0..k).filter(|&a| a != best).collect();
    if others
        .iter()
        .any(|&j| (values[j] - values[best]).abs() <= 1e-9)
    {
        return Ok(0.0);
    }
    let cache = KlInfCache::new(KlInfSettings::default());
    let tables: Vec<(Vec<f64>, Vec<f64>)> = others
        .iter()
        .map(|&j| {
            let (lo, hi) = (values[best], values[j]);
            let xs = (0..x_points).map(|i| lo + (hi - lo) * i as f64 / (x_points - 1) as f64);
            xs.map(|x| {
                (
                    cache.value(Side::Upper, &instance[best], x, r),
                    cache.value(Side::Lower, &instance[j], x, r),
                )
            })
            .unzip()
        })
        .collect();
    let g = |table: &(Vec<f64>, Vec<f64>), tb: f64, tj: f64| -> f64 {
        let mut m = f64::INFINITY;
        for (u, l) in table.0.iter().zip(&table.1) {
            let v = if tb == 0.0 { 0.0 } else { tb * u } + if tj == 0.0 { 0.0 } else { tj * l };
            m = m.min(v);
        }
        m
    };
    let cells = (1.0 / simplex_step).round() as u64;
    let h = 1.0 / cells as f64;
    let mut top: f64 = 0.0;
    for ib in 0..=cells {
        let tb = ib as f64 * h;
        if others.len() == 1 {
            top = top.max(g(&tables[0], tb, 1.0 - tb));
            continue;
        }
        for i1 in 0..=(cells - ib) {
            let t1 = i1 as f64 * h;
            let t2 = (cells - ib - i1) as f64 * h;
            let v = g(&tables[0], tb, t1).min(g(&tables[1], tb, t2));
            top = top.max(v);
        }
    }
    Ok(top)
}
