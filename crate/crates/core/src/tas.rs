//! Track-and-Stop: C-tracking of oracle proportions, GLRT stopping rule and
//! recommendation of the arm with the smallest empirical EVaR.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evar::evar;
use crate::klinf::KlInfCache;
use crate::measures::{DiscreteDistribution, Histogram, RiskLevel};
use crate::oracle::{characteristic_time_with, pairwise_g_with};

/// `β(n, δ) = ln((K - 1)/δ) + 3 ln(n + 1) + 2`.
pub fn threshold(n: u64, delta: f64, k: usize) -> f64 {
    ((k - 1) as f64 / delta).ln() + 3.0 * ((n + 1) as f64).ln() + 2.0
}

#[derive(Clone, Debug)]
pub struct TrackAndStopState {
    counts: Vec<u64>,
    histograms: Vec<Histogram>,
    empiricals: Vec<Option<DiscreteDistribution>>,
    cumulative_weights: Vec<f64>,
    n: u64,
    delta: f64,
}

impl TrackAndStopState {
    pub fn new(arms: usize, delta: f64) -> Result<Self> {
        if arms < 2 {
            return Err(Error::InvalidArgument(
                "at least two arms are required".into(),
            ));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "delta must lie in (0, 1), got {delta}"
            )));
        }
        Ok(Self {
            counts: vec![0; arms],
            histograms: vec![Histogram::new(); arms],
            empiricals: vec![None; arms],
            cumulative_weights: vec![0.0; arms],
            n: 0,
            delta,
        })
    }

    pub fn arms(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn cumulative_weights(&self) -> &[f64] {
        &self.cumulative_weights
    }

    pub fn empirical(&self, arm: usize) -> Option<&DiscreteDistribution> {
        self.empiricals[arm].as_ref()
    }

    /// All empirical laws, once every arm has been pulled.
    pub fn empiricals(&self) -> Option<Vec<DiscreteDistribution>> {
        self.empiricals.iter().cloned().collect()
    }

    pub fn all_pulled(&self) -> bool {
        self.counts.iter().all(|&c| c > 0)
    }

    pub fn record(&mut self, arm: usize, reward: f64) -> Result<()> {
        if arm >= self.arms() {
            return Err(Error::InvalidArgument(format!("arm {arm} out of range")));
        }
        self.histograms[arm].record(reward)?;
        self.counts[arm] += 1;
        self.n += 1;
        self.empiricals[arm] = self.histograms[arm].to_distribution();
        Ok(())
    }
}

/// C-tracking: forced exploration of arms with fewer than `√n - K/2` pulls,
/// otherwise the arm furthest behind its cumulative oracle share.
pub fn next_arm(state: &mut TrackAndStopState, weights: &[f64]) -> usize {
    let k = state.arms();
    for (c, w) in state.cumulative_weights.iter_mut().zip(weights) {
        *c += w;
    }
    let floor = (state.n as f64).sqrt() - k as f64 / 2.0;
    let mut forced: Option<usize> = None;
    for a in 0..k {
        if (state.counts[a] as f64) < floor
            && forced.is_none_or(|f| state.counts[a] < state.counts[f])
        {
            forced = Some(a);
        }
    }
    if let Some(a) = forced {
        return a;
    }
    let mut best = 0;
    let mut best_gap = f64::NEG_INFINITY;
    for a in 0..k {
        let gap = state.cumulative_weights[a] - state.counts[a] as f64;
        if gap > best_gap {
            best_gap = gap;
            best = a;
        }
    }
    best
}

/// Empirical leader (smallest EVaR, lowest index on ties) and
/// `Z = min_{a ≠ leader} inf_x N_leader KL^U(μ̂_leader, x) + N_a KL^L(μ̂_a, x)`.
pub fn glrt_statistic(
    state: &TrackAndStopState,
    r: RiskLevel,
    cache: &KlInfCache,
) -> Result<(f64, usize)> {
    let emp = state
        .empiricals()
        .ok_or_else(|| Error::InvalidArgument("every arm must be pulled once".into()))?;
    let values: Vec<f64> = emp.iter().map(|d| evar(d, r).value).collect();
    let mut leader = 0;
    for (a, v) in values.iter().enumerate() {
        if *v < values[leader] {
            leader = a;
        }
    }
    let mut z = f64::INFINITY;
    for a in (0..emp.len()).filter(|&a| a != leader) {
        if values[a] == values[leader] {
            return Ok((0.0, leader));
        }
        let (g, _) = pairwise_g_with(
            cache,
            &emp[leader],
            &emp[a],
            state.counts[leader] as f64,
            state.counts[a] as f64,
            r,
        )?;
        z = z.min(g);
    }
    Ok((z, leader))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StopDecision {
    pub stopped: bool,
    pub statistic: f64,
    pub threshold: f64,
    pub recommended: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    /// C-tracking of the oracle proportions.
    #[default]
    Tracking,
    /// Round-robin control: least-pulled arm, lowest index first.
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TasSettings {
    pub horizon_cap: u64,
    /// Recompute oracle weights at every pull.
    pub strict_tracking: bool,
    pub sampling: Sampling,
}

impl Default for TasSettings {
    fn default() -> Self {
        Self {
            horizon_cap: 1_000_000,
            strict_tracking: false,
            sampling: Sampling::Tracking,
        }
    }
}

/// Whether oracle weights are recomputed before pull `n + 1`: every pull up
/// to 200, then every `⌈n/100⌉` pulls.
fn recompute_due(n: u64, last: u64, strict: bool) -> bool {
    strict || n <= 200 || n - last >= n.div_ceil(100)
}

/// A running Track-and-Stop procedure. The caller draws rewards for the arm
/// returned by [`TrackAndStop::choose_arm`] and feeds them to
/// [`TrackAndStop::step`].
pub struct TrackAndStop<'c> {
    state: TrackAndStopState,
    risk: RiskLevel,
    settings: TasSettings,
    cache: &'c KlInfCache,
    weights: Vec<f64>,
    weights_at: u64,
}

impl<'c> TrackAndStop<'c> {
    pub fn new(
        arms: usize,
        delta: f64,
        risk: RiskLevel,
        settings: TasSettings,
        cache: &'c KlInfCache,
    ) -> Result<Self> {
        let state = TrackAndStopState::new(arms, delta)?;
        Ok(Self {
            weights: vec![1.0 / arms as f64; arms],
            weights_at: 0,
            state,
            risk,
            settings,
            cache,
        })
    }

    pub fn state(&self) -> &TrackAndStopState {
        &self.state
    }

    /// Current target proportions.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn choose_arm(&mut self) -> usize {
        let k = self.state.arms();
        if let Some(a) = self.state.counts.iter().position(|&c| c == 0) {
            return a;
        }
        if self.settings.sampling == Sampling::Uniform {
            let mut best = 0;
            for a in 1..k {
                if self.state.counts[a] < self.state.counts[best] {
                    best = a;
                }
            }
            return best;
        }
        let n = self.state.n;
        if recompute_due(n, self.weights_at, self.settings.strict_tracking) {
            self.weights = self.oracle_weights();
            self.weights_at = n;
        }
        let weights = self.weights.clone();
        next_arm(&mut self.state, &weights)
    }

    /// Oracle proportions of the empirical instance; uniform when the
    /// empirical instance has tied leaders.
    fn oracle_weights(&self) -> Vec<f64> {
        let k = self.state.arms();
        let emp = self.state.empiricals().expect("all arms pulled");
        match characteristic_time_with(self.cache, &emp, self.risk) {
            Ok(sol) => sol.weights,
            Err(_) => vec![1.0 / k as f64; k],
        }
    }

    pub fn step(&mut self, arm: usize, reward: f64) -> Result<StopDecision> {
        self.state.record(arm, reward)?;
        let beta = threshold(self.state.n, self.state.delta, self.state.arms());
        if !self.state.all_pulled() {
            return Ok(StopDecision {
                stopped: false,
                statistic: 0.0,
                threshold: beta,
                recommended: None,
            });
        }
        let (statistic, leader) = glrt_statistic(&self.state, self.risk, self.cache)?;
        let stopped = statistic >= beta;
        Ok(StopDecision {
            stopped,
            statistic,
            threshold: beta,
            recommended: stopped.then_some(leader),
        })
    }

    pub fn horizon_reached(&self) -> bool {
        self.state.n >= self.settings.horizon_cap
    }

    /// Runs until stopping or the horizon cap, drawing rewards from `sample`.
    pub fn run(&mut self, mut sample: impl FnMut(usize) -> f64) -> Result<Outcome> {
        let mut last = None;
        while !self.horizon_reached() {
            let arm = self.choose_arm();
            let decision = self.step(arm, sample(arm))?;
            if decision.stopped {
                return Ok(Outcome {
                    tau: self.state.n,
                    recommended: decision.recommended,
                    stopped: true,
                    statistic: decision.statistic,
                    threshold: decision.threshold,
                    counts: self.state.counts.clone(),
                });
            }
            last = Some(decision);
        }
        let last = last.unwrap_or(StopDecision {
            stopped: false,
            statistic: 0.0,
            threshold: threshold(self.state.n, self.state.delta, self.state.arms()),
            recommended: None,
        });
        Ok(Outcome {
            tau: self.state.n,
            recommended: None,
            stopped: false,
            statistic: last.statistic,
            threshold: last.threshold,
            counts: self.state.counts.clone(),
        })
    }
}

/// Result of one Track-and-Stop run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Outcome {
    pub tau: u64,
    pub recommended: Option<usize>,
    /// `false` when the horizon cap was hit first.
    pub stopped: bool,
    pub statistic: f64,
    pub threshold: f64,
    pub counts: Vec<u64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::klinf::KlInfSettings;

    #[test]
    fn threshold_examples() {
        assert!((threshold(0, 0.1, 2) - (10f64.ln() + 2.0)).abs() < 1e-12);
        assert!((threshold(0, 0.1, 2) - 4.302585).abs() < 1e-6);
        assert!((threshold(0, 1.0 / std::f64::consts::E, 2) - 3.0).abs() < 1e-12);
        assert!((threshold(9, 0.05, 3) - 12.596634).abs() < 1e-6);
    }

    #[test]
    fn first_tracking_step_after_init() {
        let mut s = TrackAndStopState::new(3, 0.1).unwrap();
        for a in 0..3 {
            s.record(a, 0.5).unwrap();
        }
        // √3 - 3/2 < 1: no forced exploration
        assert_eq!(next_arm(&mut s, &[0.0, 0.0, 1.0]), 2);
    }

    #[test]
    fn tracking_follows_fixed_weights() {
        let w = [0.2, 0.5, 0.3];
        let mut s = TrackAndStopState::new(3, 0.1).unwrap();
        for a in 0..3 {
            s.record(a, 0.0).unwrap();
        }
        while s.n() < 10_000 {
            let a = next_arm(&mut s, &w);
            s.record(a, 0.0).unwrap();
        }
        let n = s.n() as f64;
        for (c, w) in s.counts().iter().zip(w) {
            assert!((*c as f64 / n - w).abs() <= 2.0 / n.sqrt());
        }
    }

    #[test]
    fn rejects_out_of_range_reward() {
        let cache = KlInfCache::new(KlInfSettings::default());
        let r = RiskLevel::new(0.2).unwrap();
        let mut t = TrackAndStop::new(2, 0.1, r, TasSettings::default(), &cache).unwrap();
        assert!(t.step(0, 1.5).is_err());
    }

    #[test]
    fn identical_empiricals_give_zero_statistic() {
        let cache = KlInfCache::new(KlInfSettings::default());
        let r = RiskLevel::new(0.2).unwrap();
        let mut s = TrackAndStopState::new(2, 0.1).unwrap();
        for x in [0.0, 1.0, 0.5] {
            s.record(0, x).unwrap();
            s.record(1, x).unwrap();
        }
        assert_eq!(glrt_statistic(&s, r, &cache).unwrap(), (0.0, 0));
    }

    #[test]
    fn initialization_round_never_stops() {
        let cache = KlInfCache::new(KlInfSettings::default());
        let r = RiskLevel::new(0.2).unwrap();
        let mut t = TrackAndStop::new(3, 0.1, r, TasSettings::default(), &cache).unwrap();
        for a in 0..3 {
            assert_eq!(t.choose_arm(), a);
            let d = t.step(a, if a == 0 { 0.0 } else { 1.0 }).unwrap();
            assert!(!d.stopped);
        }
    }

    #[test]
    fn recompute_cadence() {
        assert!(recompute_due(150, 149, false));
        assert!(!recompute_due(1000, 995, false));
        assert!(recompute_due(1000, 990, false));
        assert!(recompute_due(1000, 999, true));
    }
}
