//! Bandit environments, seeded reward streams and the Monte-Carlo harness.
//!
//! Seeding contract: trial `i` of a batch with base seed `s` runs with seed
//! [`trial_seed`]`(s, i)`, and arm `a` of a trial with seed `u` draws from
//! ChaCha8 seeded with `u` on stream `a`. Draw `k` of an arm is therefore a
//! fixed function of `(u, a, k)`, independent of scheduling and of how the
//! other arms were sampled.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::error::{Error, Result};
use crate::evar::evar;
use crate::klinf::KlInfCache;
use crate::measures::{DiscreteDistribution, RiskLevel};
use crate::numeric::ext_real;
use crate::oracle::{best_arm, characteristic_time_with, lower_bound_from_time, TIE_TOL};
use crate::tas::{Outcome, TasSettings, TrackAndStop};

pub const DEFAULT_GRID: f64 = 1e-3;

/// Reward law of one arm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ArmSpec {
    Discrete(DiscreteDistribution),
    Bernoulli(f64),
    /// Beta(a, b) draw rounded to the nearest multiple of `grid`.
    BetaQuantized {
        a: f64,
        b: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        grid: Option<f64>,
    },
}

impl ArmSpec {
    /// Sets the grid of quantized arms that do not carry their own.
    pub fn with_default_grid(self, grid: f64) -> Self {
        match self {
            ArmSpec::BetaQuantized { a, b, grid: None } => ArmSpec::BetaQuantized {
                a,
                b,
                grid: Some(grid),
            },
            other => other,
        }
    }

    /// The law actually sampled.
    pub fn law(&self) -> Result<DiscreteDistribution> {
        match self {
            ArmSpec::Discrete(d) => Ok(d.clone()),
            ArmSpec::Bernoulli(p) => DiscreteDistribution::bernoulli(*p),
            ArmSpec::BetaQuantized { a, b, grid } => {
                let (beta, cells) = beta_parts(*a, *b, grid.unwrap_or(DEFAULT_GRID))?;
                let m = cells as f64;
                let cdf = |k: f64| beta.cdf((k / m).clamp(0.0, 1.0));
                DiscreteDistribution::from_weights((0..=cells).map(|k| {
                    let k = k as f64;
                    (k / m, cdf(k + 0.5) - cdf(k - 0.5))
                }))
            }
        }
    }
}

fn beta_parts(a: f64, b: f64, grid: f64) -> Result<(Beta, u64)> {
    let beta =
        Beta::new(a, b).map_err(|e| Error::InvalidDistribution(format!("beta({a}, {b}): {e}")))?;
    if !(grid > 0.0 && grid <= 0.5) {
        return Err(Error::InvalidDistribution(format!(
            "grid step {grid} outside (0, 0.5]"
        )));
    }
    let cells = (1.0 / grid).round();
    if (cells * grid - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!(
            "grid step {grid} does not divide [0, 1]"
        )));
    }
    Ok((beta, cells as u64))
}

enum Sampler {
    Discrete { locs: Vec<f64>, cdf: Vec<f64> },
    Bernoulli(f64),
    Beta { beta: Beta, cells: f64 },
}

impl Sampler {
    fn new(spec: &ArmSpec) -> Result<Self> {
        Ok(match spec {
            ArmSpec::Discrete(d) => {
                let mut acc = 0.0;
                let cdf = d
                    .masses()
                    .iter()
                    .map(|m| {
                        acc += m;
                        acc
                    })
                    .collect();
                Sampler::Discrete {
                    locs: d.locations().to_vec(),
                    cdf,
                }
            }
            ArmSpec::Bernoulli(p) => {
                DiscreteDistribution::bernoulli(*p)?;
                Sampler::Bernoulli(*p)
            }
            ArmSpec::BetaQuantized { a, b, grid } => {
                let (beta, cells) = beta_parts(*a, *b, grid.unwrap_or(DEFAULT_GRID))?;
                Sampler::Beta {
                    beta,
                    cells: cells as f64,
                }
            }
        })
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        let u: f64 = rng.random();
        match self {
            Sampler::Discrete { locs, cdf } => {
                let i = cdf.partition_point(|&c| c <= u).min(locs.len() - 1);
                locs[i]
            }
            Sampler::Bernoulli(p) => {
                if u < *p {
                    1.0
                } else {
                    0.0
                }
            }
            Sampler::Beta { beta, cells } => (beta.inverse_cdf(u) * cells).round() / cells,
        }
    }
}

/// Arms of a bandit problem. Reads either a bare JSON array of arm specs or
/// an object `{"arms": [...]}`; writes the object form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstanceRepr")]
pub struct BanditInstance {
    pub arms: Vec<ArmSpec>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum InstanceRepr {
    Bare(Vec<ArmSpec>),
    Object { arms: Vec<ArmSpec> },
}

impl TryFrom<InstanceRepr> for BanditInstance {
    type Error = Error;

    fn try_from(repr: InstanceRepr) -> Result<Self> {
        match repr {
            InstanceRepr::Bare(arms) | InstanceRepr::Object { arms } => Self::new(arms),
        }
    }
}

impl BanditInstance {
    pub fn new(arms: Vec<ArmSpec>) -> Result<Self> {
        if arms.len() < 2 {
            return Err(Error::InvalidArgument(
                "an instance needs at least two arms".into(),
            ));
        }
        for a in &arms {
            a.law()?;
        }
        Ok(Self { arms })
    }

    pub fn len(&self) -> usize {
        self.arms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arms.is_empty()
    }

    pub fn laws(&self) -> Result<Vec<DiscreteDistribution>> {
        self.arms.iter().map(ArmSpec::law).collect()
    }

    pub fn with_default_grid(self, grid: f64) -> Self {
        Self {
            arms: self
                .arms
                .into_iter()
                .map(|a| a.with_default_grid(grid))
                .collect(),
        }
    }
}

/// Per-trial reward source: one ChaCha8 stream per arm.
pub struct Environment {
    samplers: Vec<Sampler>,
    streams: Vec<ChaCha8Rng>,
}

impl Environment {
    pub fn new(instance: &BanditInstance, seed: u64) -> Result<Self> {
        let samplers = instance
            .arms
            .iter()
            .map(Sampler::new)
            .collect::<Result<Vec<_>>>()?;
        let streams = (0..samplers.len())
            .map(|a| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(a as u64);
                rng
            })
            .collect();
        Ok(Self { samplers, streams })
    }

    pub fn sample(&mut self, arm: usize) -> f64 {
        self.samplers[arm].draw(&mut self.streams[arm])
    }
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of trial `index`: the `(index + 1)`-th SplitMix64 output started at
/// `base`.
pub fn trial_seed(base: u64, index: u64) -> u64 {
    mix64(base.wrapping_add((index + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub seed: u64,
    pub tau: u64,
    pub recommended: Option<usize>,
    pub correct: bool,
    pub stopped: bool,
    pub counts: Vec<u64>,
    pub statistic: f64,
    pub threshold: f64,
    pub wall_time_ms: f64,
}

/// One Track-and-Stop run on `instance` with reward seed `seed`.
///
/// Tied best arms are allowed here (such runs typically end at the horizon
/// cap); any arm sharing the smallest EVaR then counts as correct.
pub fn run_trial(
    instance: &BanditInstance,
    r: RiskLevel,
    delta: f64,
    seed: u64,
    settings: TasSettings,
    cache: &KlInfCache,
) -> Result<TrialRecord> {
    let truth = match best_arm(&instance.laws()?, r) {
        Ok(b) => vec![b],
        Err(Error::DegenerateInstance(_)) => {
            let evars = true_evars(instance, r)?;
            let low = evars.iter().copied().fold(f64::INFINITY, f64::min);
            (0..evars.len())
                .filter(|&a| evars[a] - low <= TIE_TOL)
                .collect()
        }
        Err(e) => return Err(e),
    };
    run_trial_inner(instance, r, delta, 0, seed, settings, cache, &truth)
}

#[allow(clippy::too_many_arguments)]
fn run_trial_inner(
    instance: &BanditInstance,
    r: RiskLevel,
    delta: f64,
    trial: u64,
    seed: u64,
    settings: TasSettings,
    cache: &KlInfCache,
    truth: &[usize],
) -> Result<TrialRecord> {
    let start = Instant::now();
    let mut env = Environment::new(instance, seed)?;
    let mut tas = TrackAndStop::new(instance.len(), delta, r, settings, cache)?;
    let Outcome {
        tau,
        recommended,
        stopped,
        statistic,
        threshold,
        counts,
    } = tas.run(|a| env.sample(a))?;
    Ok(TrialRecord {
        trial,
        seed,
        tau,
        recommended,
        correct: recommended.is_some_and(|a| truth.contains(&a)),
        stopped,
        counts,
        statistic,
        threshold,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McSummary {
    pub delta: f64,
    pub trials: u64,
    /// Wrong recommendations plus undecided runs.
    pub errors: u64,
    pub undecided: u64,
    pub error_rate: f64,
    /// Two-sided 95% Clopper-Pearson upper limit of the error rate.
    pub error_rate_upper: f64,
    pub mean_tau: f64,
    pub std_tau: f64,
    #[serde(rename = "T")]
    pub characteristic_time: f64,
    #[serde(with = "ext_real")]
    pub lower_bound: f64,
    /// `mean_tau · T / ln(1/δ)`.
    pub ratio: f64,
}

impl McSummary {
    pub const CSV_HEADER: &'static str =
        "delta,trials,errors,error_rate,mean_tau,std_tau,T,lower_bound,ratio";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.delta,
            self.trials,
            self.errors,
            self.error_rate,
            self.mean_tau,
            self.std_tau,
            self.characteristic_time,
            self.lower_bound,
            self.ratio
        )
    }
}

/// Upper end of the two-sided `1 - level` Clopper-Pearson interval.
pub fn clopper_pearson_upper(errors: u64, trials: u64, level: f64) -> f64 {
    if errors >= trials {
        return 1.0;
    }
    let b = Beta::new(errors as f64 + 1.0, (trials - errors) as f64).expect("valid shape");
    b.inverse_cdf(1.0 - level / 2.0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McResult {
    pub summary: McSummary,
    pub records: Vec<TrialRecord>,
}

/// Runs `trials` independent Track-and-Stop trials with seeds
/// `trial_seed(base_seed, i)` on up to `jobs` threads. Records come back
/// sorted by trial index and the summary does not depend on `jobs`.
pub fn monte_carlo(
    instance: &BanditInstance,
    r: RiskLevel,
    delta: f64,
    trials: u64,
    base_seed: u64,
    jobs: usize,
    settings: TasSettings,
) -> Result<McResult> {
    let cache = KlInfCache::default();
    monte_carlo_with(
        &cache, instance, r, delta, trials, base_seed, jobs, settings,
    )
}

#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_with(
    cache: &KlInfCache,
    instance: &BanditInstance,
    r: RiskLevel,
    delta: f64,
    trials: u64,
    base_seed: u64,
    jobs: usize,
    settings: TasSettings,
) -> Result<McResult> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    let laws = instance.laws()?;
    let truth = best_arm(&laws, r)?;
    let oracle = characteristic_time_with(cache, &laws, r)?;

    let one = |i: u64| {
        run_trial_inner(
            instance,
            r,
            delta,
            i,
            trial_seed(base_seed, i),
            settings,
            cache,
            &[truth],
        )
    };
    let records = run_indexed(trials, jobs, one)?;

    let n = trials as f64;
    let errors = records.iter().filter(|t| !t.correct).count() as u64;
    let undecided = records.iter().filter(|t| !t.stopped).count() as u64;
    let mean_tau = records.iter().map(|t| t.tau as f64).sum::<f64>() / n;
    let var = if trials > 1 {
        records
            .iter()
            .map(|t| (t.tau as f64 - mean_tau).powi(2))
            .sum::<f64>()
            / (n - 1.0)
    } else {
        0.0
    };
    let t = oracle.characteristic_time;
    let summary = McSummary {
        delta,
        trials,
        errors,
        undecided,
        error_rate: errors as f64 / n,
        error_rate_upper: clopper_pearson_upper(errors, trials, 0.05),
        mean_tau,
        std_tau: var.sqrt(),
        characteristic_time: t,
        lower_bound: lower_bound_from_time(t, delta),
        ratio: mean_tau * t / (1.0 / delta).ln(),
    };
    Ok(McResult { summary, records })
}

#[cfg(feature = "parallel")]
fn run_indexed<T: Send>(
    trials: u64,
    jobs: usize,
    f: impl Fn(u64) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    use rayon::prelude::*;
    if jobs <= 1 {
        return (0..trials).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| (0..trials).into_par_iter().map(f).collect())
}

#[cfg(not(feature = "parallel"))]
fn run_indexed<T>(trials: u64, _jobs: usize, f: impl Fn(u64) -> Result<T>) -> Result<Vec<T>> {
    (0..trials).map(f).collect()
}

/// True EVaR of every arm of `instance`.
pub fn true_evars(instance: &BanditInstance, r: RiskLevel) -> Result<Vec<f64>> {
    Ok(instance.laws()?.iter().map(|d| evar(d, r).value).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(arms: Vec<ArmSpec>) -> BanditInstance {
        BanditInstance::new(arms).unwrap()
    }

    #[test]
    fn degenerate_samplers() {
        let i = inst(vec![
            ArmSpec::Discrete(DiscreteDistribution::point_mass(0.3).unwrap()),
            ArmSpec::Bernoulli(1.0),
        ]);
        let mut env = Environment::new(&i, 7).unwrap();
        for _ in 0..100 {
            assert_eq!(env.sample(0), 0.3);
            assert_eq!(env.sample(1), 1.0);
        }
    }

    #[test]
    fn fair_coin_mean() {
        let i = inst(vec![ArmSpec::Bernoulli(0.5), ArmSpec::Bernoulli(0.5)]);
        let mut env = Environment::new(&i, 11).unwrap();
        let n = 100_000;
        let mean = (0..n).map(|_| env.sample(0)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.006);
    }

    #[test]
    fn beta_samples_sit_on_grid() {
        let arm = ArmSpec::BetaQuantized {
            a: 2.0,
            b: 5.0,
            grid: Some(0.01),
        };
        let law = arm.law().unwrap();
        assert!((law.masses().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let i = inst(vec![arm.clone(), arm]);
        let mut env = Environment::new(&i, 3).unwrap();
        for _ in 0..1000 {
            let x = env.sample(0);
            assert!((0.0..=1.0).contains(&x));
            assert!(((x * 100.0).round() - x * 100.0).abs() < 1e-9);
            assert!(law.mass_at(x) > 0.0);
        }
    }

    #[test]
    fn streams_are_independent_of_interleaving() {
        let i = inst(vec![ArmSpec::Bernoulli(0.3), ArmSpec::Bernoulli(0.6)]);
        let mut a = Environment::new(&i, 5).unwrap();
        let mut b = Environment::new(&i, 5).unwrap();
        let xs: Vec<f64> = (0..50).map(|_| a.sample(1)).collect();
        let ys: Vec<f64> = (0..50)
            .map(|_| {
                b.sample(0);
                b.sample(1)
            })
            .collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn arm_spec_json_forms() {
        let arms: Vec<ArmSpec> = serde_json::from_str(
            r#"[{"bernoulli": 0.2}, {"discrete": [[0.0, 0.5], [1.0, 0.5]]},
                {"beta_quantized": {"a": 2, "b": 3}}]"#,
        )
        .unwrap();
        assert_eq!(arms[0], ArmSpec::Bernoulli(0.2));
        assert!(matches!(arms[2], ArmSpec::BetaQuantized { grid: None, .. }));
        let back: Vec<ArmSpec> =
            serde_json::from_str(&serde_json::to_string(&arms).unwrap()).unwrap();
        assert_eq!(arms, back);
    }

    #[test]
    fn instance_json_forms() {
        let a: BanditInstance =
            serde_json::from_str(r#"[{"bernoulli": 0.2}, {"bernoulli": 0.8}]"#).unwrap();
        let b: BanditInstance =
            serde_json::from_str(r#"{"arms": [{"bernoulli": 0.2}, {"bernoulli": 0.8}]}"#).unwrap();
        assert_eq!(a, b);
        assert!(serde_json::from_str::<BanditInstance>(r#"[{"bernoulli": 0.2}]"#).is_err());
        assert!(serde_json::from_str::<BanditInstance>(
            r#"[{"bernoulli": 1.2}, {"bernoulli": 0.5}]"#
        )
        .is_err());
    }

    #[test]
    fn clopper_pearson_bounds() {
        assert!(
            (clopper_pearson_upper(0, 500, 0.05) - (1.0 - 0.025f64.powf(1.0 / 500.0))).abs() < 1e-9
        );
        assert_eq!(clopper_pearson_upper(5, 5, 0.05), 1.0);
    }

    #[test]
    fn identical_arms_hit_the_horizon() {
        let i = inst(vec![ArmSpec::Bernoulli(0.5), ArmSpec::Bernoulli(0.5)]);
        let cache = KlInfCache::default();
        let r = RiskLevel::new(0.2).unwrap();
        let mut env = Environment::new(&i, 1).unwrap();
        let settings = TasSettings {
            horizon_cap: 200,
            ..TasSettings::default()
        };
        let mut tas = TrackAndStop::new(2, 0.1, r, settings, &cache).unwrap();
        let out = tas.run(|a| env.sample(a)).unwrap();
        assert!(!out.stopped);
        assert_eq!(out.tau, 200);
    }
}
