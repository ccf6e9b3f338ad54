//! KL-information projections onto EVaR level sets, solved through their
//! dual programs.
//!
//! * `KL_inf^U(η, ν) = min { KL(η ‖ κ) : EVaR(κ) >= ν }`, dual
//!   `max_{λ1, λ3 >= 0} E_η[ln(1 + λ3 (1 - e^{(λ1/λ3)(X - ν) + ρ}))]`.
//! * `KL_inf^L(η, ν) = min { KL(η ‖ κ) : EVaR(κ) <= ν }`, dual
//!   `inf_{z > 0} sup_{λ ∈ D(z, ν)} E_η[ln(1 - λ (e^{-ρ + zν} - e^{zX}))]`.
//!
//! Both inner problems are concave one-dimensional maximizations. They are
//! parametrized by the fraction `s ∈ [0, 1)` of the largest multiplier that
//! keeps the log argument positive on all of `[0, 1]`, which turns every
//! per-atom factor into `1 + s·b_i` with bounded (or log-encoded) `b_i`.
//! When the optimum sits on that positivity boundary the primal optimizer
//! carries an extra atom at the binding endpoint (1 for the upper side, 0 for
//! the lower side).

use std::collections::HashMap;
use std::sync::Mutex;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::evar::{evar, Minimizer};
use crate::measures::{exponential_tilt, kl_divergence, DiscreteDistribution, RiskLevel};
use std::cell::Cell;

use crate::numeric::{brent_max, ext_real, log1p_exp};

/// EVaR threshold `ν ∈ [0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct Threshold(f64);

impl Threshold {
    pub fn new(nu: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&nu) {
            return Err(Error::InvalidThreshold(nu));
        }
        Ok(Self(nu))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Search parameters of the dual solvers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KlInfSettings {
    /// Log-spaced grid size for the slope `t = λ1/λ3` of the upper dual.
    pub t_grid: usize,
    /// Largest slope searched; raised to `60 / (1 - ν)` for `ν` close to 1.
    pub t_max: f64,
    /// Log-spaced grid size for the outer `z` of the lower dual.
    pub z_grid: usize,
    pub z_max: f64,
    /// Multipliers stay below `(1 - boundary_eps)` times their positivity bound.
    pub boundary_eps: f64,
    /// Golden-section tolerance on the log scale of `t` and `z`.
    pub refine_tol: f64,
}

impl Default for KlInfSettings {
    fn default() -> Self {
        Self {
            t_grid: 128,
            t_max: 200.0,
            z_grid: 256,
            z_max: 1e4,
            boundary_eps: 1e-8,
            refine_tol: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DualSolutionU {
    pub lambda1: f64,
    pub lambda3: f64,
    pub value: f64,
    /// Optimal `κ*`.
    pub primal: DiscreteDistribution,
    /// Worst-case law `Q*` in the KL ball around `κ*`: the tilt of `κ*` at
    /// rate `λ1/λ3`.
    pub witness: DiscreteDistribution,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DualSolutionL {
    #[serde(with = "ext_real")]
    pub z: f64,
    #[serde(with = "ext_real")]
    pub lambda: f64,
    #[serde(with = "ext_real")]
    pub value: f64,
    pub primal: DiscreteDistribution,
}

/// Strict upper bound on `λ3` keeping `1 + λ3(1 - e^{t(x-ν)+ρ}) > 0` for all
/// `x <= xmax`; infinite when `e^{ρ + t(xmax - ν)} <= 1`.
pub fn feasible_lambda3_max(t: f64, nu: Threshold, r: RiskLevel, xmax: f64) -> f64 {
    let c = r.rho() + t * (xmax - nu.value());
    if c <= 0.0 {
        f64::INFINITY
    } else {
        1.0 / c.exp_m1()
    }
}

/// Admissible multipliers `[0, upper)` of the lower dual at fixed `z`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LambdaDomain {
    /// `f64::INFINITY` encodes `[0, ∞)`.
    #[serde(with = "ext_real")]
    pub upper: f64,
}

impl LambdaDomain {
    pub fn is_bounded(&self) -> bool {
        self.upper.is_finite()
    }

    pub fn contains(&self, lambda: f64) -> bool {
        lambda >= 0.0 && lambda < self.upper
    }
}

pub fn feasible_lambda_domain(z: f64, nu: Threshold, r: RiskLevel) -> LambdaDomain {
    let w = z * nu.value() - r.rho();
    LambdaDomain {
        upper: if w <= 0.0 {
            f64::INFINITY
        } else {
            1.0 / w.exp_m1()
        },
    }
}

/// Upper dual objective at `(λ1, λ3)`; `-∞` outside the positivity region
/// on `supp(η)`.
pub fn klu_dual_objective(
    eta: &DiscreteDistribution,
    nu: Threshold,
    r: RiskLevel,
    lambda1: f64,
    lambda3: f64,
) -> f64 {
    if lambda3 == 0.0 {
        return 0.0;
    }
    let a = lambda1 / lambda3;
    let mut total = 0.0;
    for (x, w) in eta.atoms() {
        let f = 1.0 + lambda3 * (1.0 - (a * (x - nu.value()) + r.rho()).exp());
        if f <= 0.0 {
            return f64::NEG_INFINITY;
        }
        total += w * f.ln();
    }
    total
}

/// Lower dual objective at `(z, λ)`; `-∞` where the log argument is not
/// positive on `supp(η)`.
pub fn kll_dual_objective(
    eta: &DiscreteDistribution,
    nu: Threshold,
    r: RiskLevel,
    z: f64,
    lambda: f64,
) -> f64 {
    let big_a = (z * nu.value() - r.rho()).exp();
    let mut total = 0.0;
    for (x, w) in eta.atoms() {
        let f = 1.0 - lambda * (big_a - (z * x).exp());
        if f <= 0.0 {
            return f64::NEG_INFINITY;
        }
        total += w * f.ln();
    }
    total
}

/// Per-atom factor `1 + s·b` of a reparametrized dual.
#[derive(Clone, Copy, Debug)]
enum Coef {
    Lin(f64),
    /// `b = e^{lb}`, too large to hold directly.
    Log(f64),
}

impl Coef {
    fn log_factor(self, s: f64) -> f64 {
        match self {
            Coef::Lin(b) => (s * b).ln_1p(),
            Coef::Log(lb) => {
                if s == 0.0 {
                    0.0
                } else {
                    log1p_exp(s.ln() + lb)
                }
            }
        }
    }

    /// `b / (1 + s b)`
    fn slope(self, s: f64) -> f64 {
        match self {
            Coef::Lin(b) => b / (1.0 + s * b),
            Coef::Log(lb) => 1.0 / ((-lb).exp() + s),
        }
    }

    /// `1 / (1 + s b)`, the KKT density `dκ/dη`.
    fn density(self, s: f64) -> f64 {
        match self {
            Coef::Lin(b) => 1.0 / (1.0 + s * b),
            Coef::Log(lb) => {
                if s == 0.0 {
                    1.0
                } else {
                    (-log1p_exp(s.ln() + lb)).exp()
                }
            }
        }
    }
}

/// Maximizes the concave map `s ↦ Σ_i m_i ln(1 + s b_i)` over `[0, s_max]`.
/// Newton iterations start from `guess`, typically the optimum at the
/// previous outer grid point.
fn maximize_inner(masses: &[f64], coefs: &[Coef], s_max: f64, guess: f64) -> (f64, f64) {
    let value = |s: f64| -> f64 {
        masses
            .iter()
            .zip(coefs)
            .map(|(m, c)| m * c.log_factor(s))
            .sum()
    };
    let slope = |s: f64| -> (f64, f64) {
        let mut d1 = 0.0;
        let mut d2 = 0.0;
        for (m, c) in masses.iter().zip(coefs) {
            let q = c.slope(s);
            d1 += m * q;
            d2 -= m * q * q;
        }
        (d1, d2)
    };

    if slope(0.0).0 <= 0.0 {
        return (0.0, 0.0);
    }
    if slope(s_max).0 >= 0.0 {
        return (s_max, value(s_max));
    }
    let (mut lo, mut hi) = (0.0, s_max);
    let mut s = if guess > 0.0 && guess < s_max {
        guess
    } else {
        0.5 * s_max
    };
    for _ in 0..200 {
        let (d1, d2) = slope(s);
        if d1 > 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        let newton = if d2 < 0.0 { s - d1 / d2 } else { f64::NAN };
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let done = (next - s).abs() <= 1e-16 * (1.0 + s) || hi - lo <= 1e-16 * (1.0 + s);
        s = next;
        if done {
            break;
        }
    }
    (s, value(s))
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
        .collect()
}

struct UpperDual<'a> {
    eta: &'a DiscreteDistribution,
    nu: f64,
    rho: f64,
    s_max: f64,
    last: Cell<f64>,
}

impl UpperDual<'_> {
    /// `c(t) = ρ + t(1 - ν)`; `λ3 = s / (e^c - 1)`.
    fn c(&self, t: f64) -> f64 {
        self.rho + t * (1.0 - self.nu)
    }

    fn coefs(&self, t: f64) -> Vec<Coef> {
        let c = self.c(t);
        let e_c = (-c).exp();
        let denom = -(-c).exp_m1();
        self.eta
            .locations()
            .iter()
            .map(|&x| Coef::Lin((e_c - (-t * (1.0 - x)).exp()) / denom))
            .collect()
    }

    fn profile(&self, t: f64) -> (f64, f64) {
        let out = maximize_inner(
            self.eta.masses(),
            &self.coefs(t),
            self.s_max,
            self.last.get(),
        );
        self.last.set(out.0);
        out
    }

    fn lambda3(&self, t: f64, s: f64) -> f64 {
        s / self.c(t).exp_m1()
    }
}

/// `KL_inf^U(η, ν)` with default settings.
pub fn kl_inf_upper(eta: &DiscreteDistribution, nu: Threshold, r: RiskLevel) -> DualSolutionU {
    kl_inf_upper_with(eta, nu, r, &KlInfSettings::default())
}

pub fn kl_inf_upper_with(
    eta: &DiscreteDistribution,
    nu: Threshold,
    r: RiskLevel,
    settings: &KlInfSettings,
) -> DualSolutionU {
    if evar(eta, r).value >= nu.value() {
        return DualSolutionU {
            lambda1: 0.0,
            lambda3: 0.0,
            value: 0.0,
            primal: eta.clone(),
            witness: eta.clone(),
        };
    }
    let first = solve_upper(eta, nu, r, settings);
    if evar(&first.primal, r).value >= nu.value() - 1e-6 {
        return first;
    }
    let tighter = KlInfSettings {
        boundary_eps: settings.boundary_eps * 1e-2,
        t_grid: settings.t_grid * 2,
        refine_tol: settings.refine_tol * 1e-2,
        ..*settings
    };
    let second = solve_upper(eta, nu, r, &tighter);
    let gap = |s: &DualSolutionU| nu.value() - evar(&s.primal, r).value;
    if gap(&second) < gap(&first) {
        second
    } else {
        first
    }
}

fn solve_upper(
    eta: &DiscreteDistribution,
    nu: Threshold,
    r: RiskLevel,
    settings: &KlInfSettings,
) -> DualSolutionU {
    let nu = nu.value();
    let problem = UpperDual {
        eta,
        nu,
        rho: r.rho(),
        s_max: 1.0 - settings.boundary_eps,
        last: Cell::new(0.0),
    };
    let t_lo = 1e-3f64.min(0.1 * (8.0 * r.rho()).sqrt());
    let t_hi = if nu < 1.0 {
        settings.t_max.max(60.0 / (1.0 - nu)).min(1e9)
    } else {
        1e9
    };
    let grid = log_grid(t_lo, t_hi, settings.t_grid.max(3));
    let values: Vec<f64> = grid.iter().map(|&t| problem.profile(t).1).collect();
    let k = argmax(&values);
    let lo = grid[k.saturating_sub(1)].ln();
    let hi = grid[(k + 1).min(grid.len() - 1)].ln();
    let (log_t, _) = brent_max(|u| problem.profile(u.exp()).1, lo, hi, settings.refine_tol);
    let mut t = log_t.exp();
    let (mut s, mut value) = problem.profile(t);
    if values[k] > value {
        t = grid[k];
        (s, value) = problem.profile(t);
    }

    let coefs = problem.coefs(t);
    let primal = recover_primal(eta, &coefs, s, 1.0);
    let lambda3 = problem.lambda3(t, s);
    let witness = exponential_tilt(&primal, t);
    DualSolutionU {
        lambda1: t * lambda3,
        lambda3,
        value,
        primal,
        witness,
    }
}

/// `κ_i = η_i / (1 + s b_i)` on `supp(η)`, remaining mass at `endpoint`.
fn recover_primal(
    eta: &DiscreteDistribution,
    coefs: &[Coef],
    s: f64,
    endpoint: f64,
) -> DiscreteDistribution {
    let mut atoms: Vec<(f64, f64)> = eta
        .atoms()
        .zip(coefs)
        .map(|((x, m), c)| (x, m * c.density(s)))
        .collect();
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    if total < 1.0 {
        atoms.push((endpoint, 1.0 - total));
    }
    DiscreteDistribution::from_weights(atoms).expect("recovered primal is a valid law")
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
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

struct LowerDual<'a> {
    eta: &'a DiscreteDistribution,
    nu: f64,
    rho: f64,
    s_max: f64,
    last: Cell<f64>,
}

impl LowerDual<'_> {
    /// `b_i = (e^{z x_i} - A) / (A - 1)` with `A = e^{zν - ρ} > 1`.
    fn coefs(&self, z: f64) -> Vec<Coef> {
        let w = z * self.nu - self.rho;
        let denom = -(-w).exp_m1();
        self.eta
            .locations()
            .iter()
            .map(|&x| {
                let u = z * (x - self.nu) + self.rho;
                if u < 600.0 {
                    Coef::Lin(u.exp_m1() / denom)
                } else {
                    Coef::Log(u + (-(-u).exp_m1()).ln() - denom.ln())
                }
            })
            .collect()
    }

    fn profile(&self, z: f64) -> (f64, f64) {
        let out = maximize_inner(
            self.eta.masses(),
            &self.coefs(z),
            self.s_max,
            self.last.get(),
        );
        self.last.set(out.0);
        out
    }

    fn lambda(&self, z: f64, s: f64) -> f64 {
        s / (z * self.nu - self.rho).exp_m1()
    }
}

/// `KL_inf^L(η, ν)` with default settings.
pub fn kl_inf_lower(eta: &DiscreteDistribution, nu: Threshold, r: RiskLevel) -> DualSolutionL {
    kl_inf_lower_with(eta, nu, r, &KlInfSettings::default())
}

pub fn kl_inf_lower_with(
    eta: &DiscreteDistribution,
    nu: Threshold,
    r: RiskLevel,
    settings: &KlInfSettings,
) -> DualSolutionL {
    let e = evar(eta, r);
    if e.value <= nu.value() {
        let z = match e.minimizer {
            Minimizer::Finite(z) => z,
            Minimizer::Infinite => f64::INFINITY,
        };
        return DualSolutionL {
            z,
            lambda: 0.0,
            value: 0.0,
            primal: eta.clone(),
        };
    }
    let nu = nu.value();
    if nu <= 0.0 {
        // only δ0 has EVaR 0 and η is not δ0
        return DualSolutionL {
            z: f64::INFINITY,
            lambda: f64::INFINITY,
            value: f64::INFINITY,
            primal: DiscreteDistribution::point_mass(0.0).expect("valid"),
        };
    }
    let problem = LowerDual {
        eta,
        nu,
        rho: r.rho(),
        s_max: 1.0 - settings.boundary_eps,
        last: Cell::new(0.0),
    };
    let z_lo = r.rho() / nu * (1.0 + 1e-9);
    let z_hi = settings.z_max.max(100.0 * z_lo);
    let grid = log_grid(z_lo, z_hi, settings.z_grid.max(3));
    let values: Vec<f64> = grid.iter().map(|&z| problem.profile(z).1).collect();
    let k = argmin(&values);
    let lo = grid[k.saturating_sub(1)].ln();
    let hi = grid[(k + 1).min(grid.len() - 1)].ln();
    let (log_z, _) = brent_max(|u| -problem.profile(u.exp()).1, lo, hi, settings.refine_tol);
    let mut z = log_z.exp();
    let (mut s, mut value) = problem.profile(z);
    if values[k] < value {
        z = grid[k];
        (s, value) = problem.profile(z);
    }
    let coefs = problem.coefs(z);
    DualSolutionL {
        z,
        lambda: problem.lambda(z, s),
        value,
        primal: recover_primal(eta, &coefs, s, 0.0),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Upper,
    Lower,
}

type CacheKey = (Side, u64, Vec<(u64, u64)>, i64);

/// Memoized projection values keyed on `(side, ρ, η, ν)`.
///
/// Thresholds are snapped to a `1e-9` lattice before evaluation so a cached
/// value is a pure function of its key, whatever the call order.
#[derive(Debug, Default)]
pub struct KlInfCache {
    settings: KlInfSettings,
    map: Mutex<HashMap<CacheKey, f64>>,
}

const CACHE_LATTICE: f64 = 1e9;
const CACHE_CAPACITY: usize = 2_000_000;

impl KlInfCache {
    pub fn new(settings: KlInfSettings) -> Self {
        Self {
            settings,
            map: Mutex::new(HashMap::new()),
        }
    }

    pub fn settings(&self) -> &KlInfSettings {
        &self.settings
    }

    pub fn snap(nu: f64) -> f64 {
        ((nu * CACHE_LATTICE).round() / CACHE_LATTICE).clamp(0.0, 1.0)
    }

    pub fn value(&self, side: Side, eta: &DiscreteDistribution, nu: f64, r: RiskLevel) -> f64 {
        let nu = Self::snap(nu);
        let key = (
            side,
            r.rho().to_bits(),
            eta.fingerprint(),
            (nu * CACHE_LATTICE).round() as i64,
        );
        if let Some(v) = self.map.lock().expect("cache lock").get(&key) {
            return *v;
        }
        let threshold = Threshold(nu);
        let v = match side {
            Side::Upper => kl_inf_upper_with(eta, threshold, r, &self.settings).value,
            Side::Lower => kl_inf_lower_with(eta, threshold, r, &self.settings).value,
        };
        let mut map = self.map.lock().expect("cache lock");
        if map.len() >= CACHE_CAPACITY {
            map.clear();
        }
        map.insert(key, v);
        v
    }

    pub fn len(&self) -> usize {
        self.map.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Checks `KL(η ‖ primal)` against a reported dual value.
pub fn duality_gap(eta: &DiscreteDistribution, primal: &DiscreteDistribution, value: f64) -> f64 {
    (kl_divergence(eta, primal) - value).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{esscher_tilt, RiskLevel};

    fn bern(p: f64) -> DiscreteDistribution {
        DiscreteDistribution::bernoulli(p).unwrap()
    }
    fn risk(a: f64) -> RiskLevel {
        RiskLevel::new(a).unwrap()
    }
    fn th(v: f64) -> Threshold {
        Threshold::new(v).unwrap()
    }

    #[test]
    fn threshold_range() {
        assert!(Threshold::new(-0.1).is_err());
        assert!(Threshold::new(1.1).is_err());
        assert!(Threshold::new(1.0).is_ok());
    }

    #[test]
    fn lambda3_bound_examples() {
        let r = risk(0.5);
        assert!((feasible_lambda3_max(0.0, th(0.3), r, 1.0) - 1.0).abs() < 1e-15);
        // xmax = ν: the exponent is ρ > 0 for every t
        assert!(feasible_lambda3_max(50.0, th(0.9), r, 0.9).is_finite());
        // xmax < ν and t large: the constraint never binds
        assert!(feasible_lambda3_max(50.0, th(0.9), r, 0.2).is_infinite());
        let r = risk(0.2);
        let expected = 1.0 / ((r.rho() + 0.5).exp() - 1.0);
        let got = feasible_lambda3_max(1.0, th(0.5), r, 1.0);
        assert!((got - expected).abs() < 1e-14);
        assert!((got - 0.942594).abs() < 1e-6);
    }

    #[test]
    fn lambda_domain_examples() {
        let r = risk(0.5);
        // z <= ρ/ν: unbounded
        assert!(!feasible_lambda_domain(1.0, th(0.5), r).is_bounded());
        assert!(!feasible_lambda_domain(1e6, th(0.0), r).is_bounded());
        let d = feasible_lambda_domain(2.0, th(0.5), r);
        let expected = 1.0 / (1f64.exp() / 2.0 - 1.0);
        assert!((d.upper - expected).abs() < 1e-12);
        assert!((d.upper - 2.784422).abs() < 1e-6);
        assert!(d.contains(0.0) && !d.contains(d.upper));
    }

    #[test]
    fn upper_zero_when_already_feasible() {
        let eta = DiscreteDistribution::new([(0.2, 0.5), (0.7, 0.5)]).unwrap();
        let r = risk(0.3);
        let e = evar(&eta, r).value;
        let sol = kl_inf_upper(&eta, th(e * 0.9), r);
        assert_eq!(sol.value, 0.0);
        assert_eq!(sol.lambda3, 0.0);
        assert_eq!(sol.primal, eta);
        let d0 = DiscreteDistribution::point_mass(0.0).unwrap();
        assert_eq!(kl_inf_upper(&d0, th(0.0), r).value, 0.0);
    }

    #[test]
    fn lower_zero_when_already_feasible() {
        let eta = DiscreteDistribution::new([(0.2, 0.5), (0.7, 0.5)]).unwrap();
        let r = risk(0.3);
        let sol = kl_inf_lower(&eta, th(0.95), r);
        assert_eq!(sol.value, 0.0);
        assert_eq!(sol.lambda, 0.0);
        let d1 = DiscreteDistribution::point_mass(1.0).unwrap();
        assert_eq!(kl_inf_lower(&d1, th(1.0), r).value, 0.0);
    }

    #[test]
    fn lower_at_zero_threshold_is_infinite() {
        let sol = kl_inf_lower(&bern(0.3), th(0.0), risk(0.2));
        assert!(sol.value.is_infinite());
    }

    #[test]
    fn upper_strong_duality() {
        let r = risk(0.2);
        let eta = bern(0.3);
        let sol = kl_inf_upper(&eta, th(0.9), r);
        assert!(sol.value > 0.0);
        assert!(duality_gap(&eta, &sol.primal, sol.value) < 1e-5);
        assert!(evar(&sol.primal, r).value >= 0.9 - 1e-6);
        assert!(kl_divergence(&sol.witness, &sol.primal) <= r.rho() + 1e-6);
        assert!((sol.witness.mean() - 0.9).abs() < 1e-5);
        // feasibility on the support of η
        let a = sol.lambda1 / sol.lambda3;
        for x in eta.locations() {
            assert!(1.0 + sol.lambda3 * (1.0 - (a * (x - 0.9) + r.rho()).exp()) > 0.0);
        }
    }

    #[test]
    fn upper_moves_mass_to_one_when_support_is_low() {
        let r = risk(0.3);
        let eta = DiscreteDistribution::new([(0.2, 0.6), (0.5, 0.4)]).unwrap();
        let sol = kl_inf_upper(&eta, th(0.8), r);
        assert!(sol.primal.mass_at(1.0) > 0.0);
        assert!(duality_gap(&eta, &sol.primal, sol.value) < 1e-5);
        assert!(evar(&sol.primal, r).value >= 0.8 - 1e-6);
    }

    #[test]
    fn lower_strong_duality_and_tight_moment() {
        let r = risk(0.2);
        let eta = bern(0.7);
        let sol = kl_inf_lower(&eta, th(0.4), r);
        assert!(sol.value > 0.0 && sol.lambda > 0.0);
        assert!(duality_gap(&eta, &sol.primal, sol.value) < 1e-5);
        assert!(evar(&sol.primal, r).value <= 0.4 + 1e-6);
        let mgf: f64 = sol.primal.atoms().map(|(x, w)| w * (sol.z * x).exp()).sum();
        let target = (-r.rho() + sol.z * 0.4).exp();
        assert!((mgf - target).abs() <= 1e-6 * target);
        assert!(feasible_lambda_domain(sol.z, th(0.4), r).contains(sol.lambda));
    }

    #[test]
    fn lower_bounded_by_esscher_rate() {
        let r = risk(0.2);
        let eta = bern(0.7);
        let nu = 0.4;
        let (mut lo, mut hi) = (0.0, 100.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if evar(&esscher_tilt(&eta, mid), r).value <= nu {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let t_star = hi;
        let k = esscher_tilt(&eta, t_star);
        assert!(kl_divergence(&eta, &k) <= t_star);
        let sol = kl_inf_lower(&eta, th(nu), r);
        assert!(sol.value <= kl_divergence(&eta, &k) + 1e-9);
        assert!(sol.value <= t_star);
    }

    #[test]
    fn monotone_in_threshold() {
        let r = risk(0.3);
        let eta = DiscreteDistribution::new([(0.1, 0.3), (0.5, 0.4), (0.9, 0.3)]).unwrap();
        let mut prev_u = 0.0;
        let mut prev_l = f64::INFINITY;
        for k in 1..=40 {
            let nu = k as f64 / 40.0;
            let u = kl_inf_upper(&eta, th(nu), r).value;
            let l = kl_inf_lower(&eta, th(nu), r).value;
            assert!(u >= prev_u - 1e-8, "upper not monotone at {nu}");
            assert!(l <= prev_l + 1e-8, "lower not monotone at {nu}");
            prev_u = u;
            prev_l = l;
        }
    }

    #[test]
    fn both_vanish_at_own_evar() {
        let r = risk(0.25);
        let eta = DiscreteDistribution::new([(0.0, 0.2), (0.4, 0.5), (0.8, 0.3)]).unwrap();
        let e = evar(&eta, r).value;
        assert!(kl_inf_upper(&eta, th(e), r).value <= 1e-6);
        assert!(kl_inf_lower(&eta, th(e), r).value <= 1e-6);
        assert!(kl_inf_upper(&eta, th(e + 1e-4), r).value <= 1e-6);
        assert!(kl_inf_lower(&eta, th(e - 1e-4), r).value <= 1e-6);
    }

    #[test]
    fn lower_inner_concave_in_lambda() {
        let r = risk(0.3);
        let eta = DiscreteDistribution::new([(0.1, 0.4), (0.6, 0.3), (0.95, 0.3)]).unwrap();
        let nu = th(0.5);
        for z in [1.0, 3.0, 10.0] {
            let dom = feasible_lambda_domain(z, nu, r);
            let upper = if dom.is_bounded() {
                dom.upper * 0.999
            } else {
                5.0
            };
            let h = upper / 200.0;
            let vals: Vec<f64> = (0..=200)
                .map(|k| kll_dual_objective(&eta, nu, r, z, k as f64 * h))
                .collect();
            for w in vals.windows(3) {
                assert!(w[0] - 2.0 * w[1] + w[2] <= 1e-9);
            }
        }
    }

    #[test]
    fn cache_is_consistent() {
        let cache = KlInfCache::new(KlInfSettings::default());
        let r = risk(0.2);
        let eta = bern(0.2);
        let a = cache.value(Side::Upper, &eta, 0.7, r);
        let b = cache.value(Side::Upper, &eta, 0.7 + 1e-12, r);
        assert_eq!(a, b);
        assert_eq!(a, kl_inf_upper(&eta, th(0.7), r).value);
        assert_eq!(cache.len(), 1);
    }
}
