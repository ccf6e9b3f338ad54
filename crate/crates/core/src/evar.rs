//! Exact Entropic Value-at-Risk for finite-support laws.
//!
//! `EVaR_α(d) = inf_{z>0} f_d(z)` with `f_d(z) = (ln E_d[e^{zX}] + ρ) / z`.
//! With `G_d(z) = z Λ'(z) - Λ(z)` we have `f'_d(z) = (G_d(z) - ρ) / z²` and
//! `G_d` nondecreasing, `G_d(0) = 0`, `sup_z G_d = -ln d{x_max}`. So either the
//! mass at `x_max` is at least `1 - α` and the infimum is the limit
//! `z → ∞` (value `x_max`), or `G_d(z*) = ρ` has a unique finite root.

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::measures::{kl_divergence, DiscreteDistribution, RiskLevel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Interior,
    Boundary,
}

/// Minimizing `z` of the MGF program; `Infinite` in the boundary regime.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Minimizer {
    Finite(f64),
    Infinite,
}

impl Minimizer {
    pub fn is_infinite(&self) -> bool {
        matches!(self, Minimizer::Infinite)
    }
}

impl Serialize for Minimizer {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Minimizer::Finite(z) => s.serialize_f64(*z),
            Minimizer::Infinite => s.serialize_str("infinite"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EvarResult {
    pub value: f64,
    pub regime: Regime,
    /// Diagnostic only.
    pub minimizer: Minimizer,
}

/// `f_d(z) = (ln E_d[e^{zX}] + ρ) / z`, evaluated as
/// `x_max + (ln S(z) + ρ) / z` with `S(z) = E_d[e^{-z(x_max - X)}]`.
pub fn evar_objective(d: &DiscreteDistribution, r: RiskLevel, z: f64) -> f64 {
    let m = d.x_max();
    let s: f64 = d.atoms().map(|(x, w)| w * (-z * (m - x)).exp()).sum();
    m + (s.ln() + r.rho()) / z
}

/// `G_d(z) = z Λ'(z) - Λ(z) = -z E_{Q_z}[x_max - X] - ln S(z)`.
pub fn stationarity_gap(d: &DiscreteDistribution, z: f64) -> f64 {
    let m = d.x_max();
    let mut s = 0.0;
    let mut gap = 0.0;
    for (x, w) in d.atoms() {
        let e = w * (-z * (m - x)).exp();
        s += e;
        gap += e * (m - x);
    }
    (-z * gap / s - s.ln()).max(0.0)
}

/// True when the boundary regime applies: mass at `x_max` at least `1 - α`.
pub fn is_boundary(d: &DiscreteDistribution, r: RiskLevel) -> bool {
    d.mass_at_max() >= r.tail()
}

const ROOT_TOL: f64 = 1e-12;
const Z_CEILING: f64 = 1e15;

/// EVaR of `d` at level `r`.
pub fn evar(d: &DiscreteDistribution, r: RiskLevel) -> EvarResult {
    if d.is_point_mass() || is_boundary(d, r) {
        return EvarResult {
            value: d.x_max(),
            regime: Regime::Boundary,
            minimizer: Minimizer::Infinite,
        };
    }
    let rho = r.rho();

    let mut lo = 0.0;
    let mut hi = 1.0;
    while stationarity_gap(d, hi) < rho {
        lo = hi;
        hi *= 2.0;
        if hi > Z_CEILING {
            // G approaches its supremum -ln d{x_max} > ρ slower than float
            // resolution allows; f is then within ρ/z of x_max anyway.
            let value = evar_objective(d, r, hi).min(d.x_max());
            return EvarResult {
                value,
                regime: Regime::Interior,
                minimizer: Minimizer::Finite(hi),
            };
        }
    }

    let mut z = 0.5 * (lo + hi);
    for _ in 0..300 {
        z = 0.5 * (lo + hi);
        let g = stationarity_gap(d, z);
        if (g - rho).abs() <= ROOT_TOL || hi - lo <= ROOT_TOL * (1.0 + z) {
            break;
        }
        if g < rho {
            lo = z;
        } else {
            hi = z;
        }
    }
    let value = evar_objective(d, r, z).min(d.x_max()).max(d.x_min());
    EvarResult {
        value,
        regime: Regime::Interior,
        minimizer: Minimizer::Finite(z),
    }
}

/// `E_q[X]` for a law `q` inside the KL ball `KL(q ‖ d) <= ρ`.
///
/// Any such `q` certifies a lower bound on `evar(d, r)`.
pub fn evar_dual_check(
    d: &DiscreteDistribution,
    r: RiskLevel,
    q: &DiscreteDistribution,
) -> Result<f64> {
    let kl = kl_divergence(q, d);
    if kl > r.rho() + 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "q lies outside the KL ball: KL(q‖d) = {kl} > rho = {}",
            r.rho()
        )));
    }
    Ok(q.mean())
}
