//! Browser bindings for three interactive views: the EVaR of a law as a
//! function of α, its KL projection profile over thresholds, and one
//! Track-and-Stop run with its oracle proportions.
//!
//! Every export takes plain numbers and JSON strings and returns a JSON
//! string, or an error message the page shows verbatim.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use evar_bai::klinf::{KlInfCache, Side};
use evar_bai::oracle::{characteristic_time_with, lower_bound_from_time};
use evar_bai::sim::{BanditInstance, Environment};
use evar_bai::tas::{TasSettings, TrackAndStop};
use evar_bai::{evar, DiscreteDistribution, RiskLevel};

/// Hard limit on pulls per demo run so the page stays responsive.
const DEMO_HORIZON: u64 = 20_000;

fn parse_law(text: &str) -> Result<DiscreteDistribution, String> {
    serde_json::from_str(text).map_err(|e| format!("distribution: {e}"))
}

fn risk(alpha: f64) -> Result<RiskLevel, String> {
    RiskLevel::new(alpha).map_err(|e| e.to_string())
}

fn to_json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct EvarCurve {
    mean: f64,
    x_max: f64,
    alphas: Vec<f64>,
    values: Vec<f64>,
    /// `true` where the supremum sits at `x_max`.
    boundary: Vec<bool>,
}

/// EVaR over `points` levels spread on `(0, 1)`.
#[wasm_bindgen]
pub fn evar_curve(dist_json: &str, points: u32) -> Result<String, String> {
    let d = parse_law(dist_json)?;
    let points = points.clamp(2, 2000);
    let mut curve = EvarCurve {
        mean: d.mean(),
        x_max: d.x_max(),
        alphas: Vec::new(),
        values: Vec::new(),
        boundary: Vec::new(),
    };
    for i in 0..points {
        let alpha = (i as f64 + 0.5) / points as f64;
        let res = evar(&d, risk(alpha)?);
        curve.alphas.push(alpha);
        curve.values.push(res.value);
        curve
            .boundary
            .push(res.regime == evar_bai::Regime::Boundary);
    }
    to_json(&curve)
}

#[derive(Serialize)]
struct Profile {
    evar: f64,
    thresholds: Vec<f64>,
    /// Cost of raising EVaR to each threshold; `null` where infinite.
    upper: Vec<Option<f64>>,
    /// Cost of lowering EVaR to each threshold; `null` where infinite.
    lower: Vec<Option<f64>>,
}

/// `KL_inf^U` and `KL_inf^L` of a law on a uniform grid of thresholds.
#[wasm_bindgen]
pub fn projection_profile(dist_json: &str, alpha: f64, points: u32) -> Result<String, String> {
    let d = parse_law(dist_json)?;
    let r = risk(alpha)?;
    let points = points.clamp(2, 1000);
    let cache = KlInfCache::default();
    let finite = |v: f64| v.is_finite().then_some(v);
    let mut p = Profile {
        evar: evar(&d, r).value,
        thresholds: Vec::new(),
        upper: Vec::new(),
        lower: Vec::new(),
    };
    for i in 0..points {
        let nu = i as f64 / (points - 1) as f64;
        p.thresholds.push(nu);
        p.upper.push(finite(cache.value(Side::Upper, &d, nu, r)));
        p.lower.push(finite(cache.value(Side::Lower, &d, nu, r)));
    }
    to_json(&p)
}

#[derive(Serialize)]
struct TracePoint {
    n: u64,
    statistic: f64,
    threshold: f64,
}

#[derive(Serialize)]
struct Run {
    evars: Vec<f64>,
    best: usize,
    characteristic_time: f64,
    oracle_weights: Vec<f64>,
    lower_bound: f64,
    tau: u64,
    stopped: bool,
    recommended: Option<usize>,
    counts: Vec<u64>,
    trace: Vec<TracePoint>,
}

/// Oracle proportions of `instance_json` and one Track-and-Stop run with
/// the given seed, capped at a fixed demo horizon.
#[wasm_bindgen]
pub fn track_and_stop(
    instance_json: &str,
    alpha: f64,
    delta: f64,
    seed: u64,
) -> Result<String, String> {
    let instance: BanditInstance =
        serde_json::from_str(instance_json).map_err(|e| format!("instance: {e}"))?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(format!("delta must lie in (0, 1), got {delta}"));
    }
    let r = risk(alpha)?;
    let laws = instance.laws().map_err(|e| e.to_string())?;
    let cache = KlInfCache::default();
    let oracle = characteristic_time_with(&cache, &laws, r).map_err(|e| e.to_string())?;

    let settings = TasSettings {
        horizon_cap: DEMO_HORIZON,
        ..TasSettings::default()
    };
    let mut env = Environment::new(&instance, seed).map_err(|e| e.to_string())?;
    let mut tas =
        TrackAndStop::new(instance.len(), delta, r, settings, &cache).map_err(|e| e.to_string())?;
    let mut trace = Vec::new();
    let mut recommended = None;
    let mut stopped = false;
    while !tas.horizon_reached() {
        let arm = tas.choose_arm();
        let step = tas.step(arm, env.sample(arm)).map_err(|e| e.to_string())?;
        let n = tas.state().n();
        // thin the trace logarithmically
        if step.stopped || n <= 50 || n % (n / 50).max(1) == 0 {
            trace.push(TracePoint {
                n,
                statistic: step.statistic,
                threshold: step.threshold,
            });
        }
        if step.stopped {
            recommended = step.recommended;
            stopped = true;
            break;
        }
    }
    let run = Run {
        evars: laws.iter().map(|d| evar(d, r).value).collect(),
        best: oracle.best,
        characteristic_time: oracle.characteristic_time,
        lower_bound: lower_bound_from_time(oracle.characteristic_time, delta),
        oracle_weights: oracle.weights,
        tau: tas.state().n(),
        stopped,
        recommended,
        counts: tas.state().counts().to_vec(),
        trace,
    };
    to_json(&run)
}
