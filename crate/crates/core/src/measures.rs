//! Finite-support probability measures on `[0, 1]` and the entropic
//! primitives built on them: log-MGF, tilted moments, KL divergence and the
//! Esscher tilt.
//!
//! Every arm law, empirical measure and projection result in this crate is a
//! [`DiscreteDistribution`]. Values are immutable after construction.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Locations closer than this are merged at construction.
pub const MERGE_TOL: f64 = 1e-12;
/// Atoms lighter than this are dropped at construction.
pub const DROP_TOL: f64 = 1e-15;
/// Allowed deviation of the input mass total from 1 in [`DiscreteDistribution::new`].
pub const SUM_TOL: f64 = 1e-9;

/// A probability measure with finitely many atoms in `[0, 1]`.
///
/// Locations are strictly increasing, masses strictly positive and summing to
/// one. Serialized as a list of `[location, mass]` pairs.
#[derive(Clone, PartialEq)]
pub struct DiscreteDistribution {
    locs: Vec<f64>,
    masses: Vec<f64>,
}

impl DiscreteDistribution {
    /// Builds a distribution from `(location, mass)` pairs.
    ///
    /// Pairs may come in any order. Locations within [`MERGE_TOL`] are merged,
    /// masses below [`DROP_TOL`] dropped, and the result renormalized. The
    /// input masses must already sum to one within [`SUM_TOL`].
    pub fn new(atoms: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let atoms: Vec<(f64, f64)> = atoms.into_iter().collect();
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if total.is_finite() && (total - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidDistribution(format!(
                "masses sum to {total}, expected 1"
            )));
        }
        Self::from_weights(atoms)
    }

    /// Builds a distribution from nonnegative weights, normalizing them.
    pub fn from_weights(atoms: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let mut atoms: Vec<(f64, f64)> = atoms.into_iter().collect();
        for &(x, w) in &atoms {
            if !x.is_finite() || !(0.0..=1.0).contains(&x) {
                return Err(Error::InvalidDistribution(format!(
                    "location {x} outside [0, 1]"
                )));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidDistribution(format!("invalid mass {w}")));
            }
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut locs: Vec<f64> = Vec::with_capacity(atoms.len());
        let mut masses: Vec<f64> = Vec::with_capacity(atoms.len());
        for (x, w) in atoms {
            // -0.0 and 0.0 must share a key
            let x = if x == 0.0 { 0.0 } else { x };
            match locs.last() {
                Some(&last) if x - last <= MERGE_TOL => {
                    *masses.last_mut().unwrap() += w;
                }
                _ => {
                    locs.push(x);
                    masses.push(w);
                }
            }
        }

        let total: f64 = masses.iter().sum();
        if total.is_nan() || total <= 0.0 {
            return Err(Error::InvalidDistribution("no positive mass".into()));
        }
        let mut kept_locs = Vec::with_capacity(locs.len());
        let mut kept = Vec::with_capacity(locs.len());
        for (x, w) in locs.into_iter().zip(masses) {
            if w / total >= DROP_TOL {
                kept_locs.push(x);
                kept.push(w);
            }
        }
        let total: f64 = kept.iter().sum();
        // already-normalized input is left untouched so that rescaling is
        // idempotent and serialized laws read back bit for bit
        if (total - 1.0).abs() > 4.0 * f64::EPSILON * kept.len() as f64 {
            for w in &mut kept {
                *w /= total;
            }
        }
        Ok(Self {
            locs: kept_locs,
            masses: kept,
        })
    }

    pub fn point_mass(location: f64) -> Result<Self> {
        Self::new([(location, 1.0)])
    }

    /// Bernoulli law on `{0, 1}` with success probability `p`.
    pub fn bernoulli(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidDistribution(format!(
                "bernoulli parameter {p} outside [0, 1]"
            )));
        }
        Self::from_weights([(0.0, 1.0 - p), (1.0, p)])
    }

    pub fn len(&self) -> usize {
        self.locs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locs.is_empty()
    }

    pub fn locations(&self) -> &[f64] {
        &self.locs
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn atoms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.locs.iter().copied().zip(self.masses.iter().copied())
    }

    pub fn is_point_mass(&self) -> bool {
        self.locs.len() == 1
    }

    /// Largest support point (essential supremum).
    pub fn x_max(&self) -> f64 {
        *self
            .locs
            .last()
            .expect("distribution has at least one atom")
    }

    pub fn x_min(&self) -> f64 {
        self.locs[0]
    }

    /// Mass sitting at [`Self::x_max`].
    pub fn mass_at_max(&self) -> f64 {
        *self
            .masses
            .last()
            .expect("distribution has at least one atom")
    }

    /// Mass at `location`, matching within [`MERGE_TOL`]; zero if absent.
    pub fn mass_at(&self, location: f64) -> f64 {
        self.atoms()
            .find(|(x, _)| (x - location).abs() <= MERGE_TOL)
            .map_or(0.0, |(_, w)| w)
    }

    pub fn mean(&self) -> f64 {
        self.atoms().map(|(x, w)| x * w).sum()
    }

    /// Exact bit pattern of the atoms, usable as a hash key.
    pub fn fingerprint(&self) -> Vec<(u64, u64)> {
        self.atoms()
            .map(|(x, w)| (x.to_bits(), w.to_bits()))
            .collect()
    }

    /// Total-variation distance `sup_A |p(A) - q(A)|`.
    pub fn total_variation(&self, other: &Self) -> f64 {
        let mut diff = 0.0;
        let (mut i, mut j) = (0, 0);
        while i < self.len() || j < other.len() {
            let xi = self.locs.get(i).copied().unwrap_or(f64::INFINITY);
            let xj = other.locs.get(j).copied().unwrap_or(f64::INFINITY);
            if (xi - xj).abs() <= MERGE_TOL {
                diff += (self.masses[i] - other.masses[j]).abs();
                i += 1;
                j += 1;
            } else if xi < xj {
                diff += self.masses[i];
                i += 1;
            } else {
                diff += other.masses[j];
                j += 1;
            }
        }
        0.5 * diff
    }
}

impl fmt::Debug for DiscreteDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list()
            .entries(self.atoms().map(|(x, w)| [x, w]))
            .finish()
    }
}

impl Serialize for DiscreteDistribution {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let pairs: Vec<[f64; 2]> = self.atoms().map(|(x, w)| [x, w]).collect();
        pairs.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DiscreteDistribution {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let pairs = Vec::<[f64; 2]>::deserialize(deserializer)?;
        DiscreteDistribution::new(pairs.into_iter().map(|[x, w]| (x, w)))
            .map_err(serde::de::Error::custom)
    }
}

/// Confidence level `alpha` in `(0, 1)` together with the KL radius
/// `rho = -ln(1 - alpha)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RiskLevel {
    alpha: f64,
    rho: f64,
}

impl RiskLevel {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidRiskLevel(alpha));
        }
        Ok(Self {
            alpha,
            rho: -(-alpha).ln_1p(),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Tail probability `1 - alpha`.
    pub fn tail(&self) -> f64 {
        1.0 - self.alpha
    }
}

/// Tilted weights `w_i ∝ m_i e^{z x_i}` (normalized), computed with the
/// exponent shifted by its maximum.
fn tilted_weights(d: &DiscreteDistribution, z: f64) -> Vec<f64> {
    let shift = if z >= 0.0 {
        z * d.x_max()
    } else {
        z * d.x_min()
    };
    let mut w: Vec<f64> = d.atoms().map(|(x, m)| m * (z * x - shift).exp()).collect();
    let s: f64 = w.iter().sum();
    for v in &mut w {
        *v /= s;
    }
    w
}

/// `ln E_d[e^{zX}]`.
///
/// Defined for any finite `z`; the max-subtraction keeps it finite for large
/// `|z|`. For `z >= 0` the result lies in `[z * x_min, z * x_max]`.
pub fn log_mgf(d: &DiscreteDistribution, z: f64) -> f64 {
    if z == 0.0 {
        return 0.0;
    }
    if d.is_point_mass() {
        return z * d.x_max();
    }
    let shift = if z >= 0.0 {
        z * d.x_max()
    } else {
        z * d.x_min()
    };
    let s: f64 = d.atoms().map(|(x, m)| m * (z * x - shift).exp()).sum();
    shift + s.ln()
}

/// Mean of the tilted law `dQ_z/dd ∝ e^{zX}`, i.e. the derivative of
/// [`log_mgf`] in `z`.
pub fn tilted_mean(d: &DiscreteDistribution, z: f64) -> f64 {
    if d.is_point_mass() {
        return d.x_max();
    }
    let w = tilted_weights(d, z);
    let mean: f64 = d.locations().iter().zip(&w).map(|(x, w)| x * w).sum();
    mean.clamp(d.x_min(), d.x_max())
}

/// Variance of the tilted law, the second derivative of [`log_mgf`].
pub fn tilted_variance(d: &DiscreteDistribution, z: f64) -> f64 {
    if d.is_point_mass() {
        return 0.0;
    }
    let w = tilted_weights(d, z);
    let mean: f64 = d.locations().iter().zip(&w).map(|(x, w)| x * w).sum();
    d.locations()
        .iter()
        .zip(&w)
        .map(|(x, w)| w * (x - mean) * (x - mean))
        .sum()
}

/// `KL(p ‖ q)`; `f64::INFINITY` when `p` is not absolutely continuous with
/// respect to `q`.
pub fn kl_divergence(p: &DiscreteDistribution, q: &DiscreteDistribution) -> f64 {
    let mut total = 0.0;
    let mut j = 0;
    for (x, mp) in p.atoms() {
        while j < q.len() && q.locs[j] < x - MERGE_TOL {
            j += 1;
        }
        if j == q.len() || (q.locs[j] - x).abs() > MERGE_TOL {
            return f64::INFINITY;
        }
        total += mp * (mp / q.masses[j]).ln();
    }
    total.max(0.0)
}

/// Exponential change of measure `dκ/dd ∝ e^{θX}` on the same support.
pub fn exponential_tilt(d: &DiscreteDistribution, theta: f64) -> DiscreteDistribution {
    if theta == 0.0 {
        return d.clone();
    }
    let w = tilted_weights(d, theta);
    DiscreteDistribution::from_weights(d.locations().iter().copied().zip(w))
        .expect("tilt of a valid distribution is valid")
}

/// Esscher tilt `dκ/dd = e^{-tX} / E_d[e^{-tX}]`.
///
/// `KL(d ‖ κ) = t E_d[X] + ln E_d[e^{-tX}] <= t`.
pub fn esscher_tilt(d: &DiscreteDistribution, t: f64) -> DiscreteDistribution {
    exponential_tilt(d, -t)
}

/// Exact histogram of observed rewards, convertible to an empirical
/// [`DiscreteDistribution`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Histogram {
    counts: BTreeMap<u64, u64>,
    total: u64,
}

impl Histogram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, value: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::InvalidArgument(format!(
                "observation {value} outside [0, 1]"
            )));
        }
        // nonnegative floats order like their bit patterns
        let value = if value == 0.0 { 0.0 } else { value };
        *self.counts.entry(value.to_bits()).or_insert(0) += 1;
        self.total += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn to_distribution(&self) -> Option<DiscreteDistribution> {
        if self.total == 0 {
            return None;
        }
        let n = self.total as f64;
        DiscreteDistribution::from_weights(
            self.counts
                .iter()
                .map(|(&bits, &c)| (f64::from_bits(bits), c as f64 / n)),
        )
        .ok()
    }
}
