use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use evar_bai::config::{emit_sweep, parse_config, sweep_csv, Deltas, ExperimentConfig};
use evar_bai::klinf::{kl_inf_lower_with, kl_inf_upper_with, KlInfCache, KlInfSettings, Side};
use evar_bai::oracle::{characteristic_time_with, lower_bound_from_time};
use evar_bai::oracles::{evar_grid, klinf_primal_grid, tmu_grid};
use evar_bai::sim::{monte_carlo_with, run_trial, BanditInstance, McSummary};
use evar_bai::tas::Sampling;
use evar_bai::{evar, DiscreteDistribution, Error, RiskLevel, Threshold};

const EXIT_CONFIG: u8 = 2;
const EXIT_DEGENERATE: u8 = 3;
const EXIT_HORIZON: u8 = 4;

/// Best-arm identification under Entropic Value-at-Risk.
#[derive(Parser)]
#[command(name = "evar-bai", version)]
struct Cli {
    /// JSON experiment config; explicit flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file (per-trial JSONL for `mc`, the CSV table for `sweep`,
    /// a copy of the JSON result otherwise).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for Monte-Carlo trials.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Add brute-force reference values next to the fast results.
    #[arg(long, global = true)]
    oracle: bool,
    /// Recompute oracle weights before every pull.
    #[arg(long, global = true)]
    strict_tracking: bool,
    /// Round-robin sampling control instead of tracking.
    #[arg(long, global = true)]
    uniform: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// EVaR of a discrete law.
    Evar {
        #[arg(long)]
        dist: PathBuf,
        #[arg(long)]
        alpha: f64,
    },
    /// KL projection onto an EVaR half-space.
    Klinf {
        #[arg(long, value_enum)]
        side: SideArg,
        #[arg(long)]
        dist: PathBuf,
        #[arg(long)]
        nu: f64,
        #[arg(long)]
        alpha: f64,
    },
    /// Characteristic time and oracle proportions.
    Oracle {
        #[command(flatten)]
        exp: ExpArgs,
    },
    /// One Track-and-Stop trial.
    Run {
        #[command(flatten)]
        exp: ExpArgs,
    },
    /// Monte-Carlo batch; summary CSV on stdout.
    Mc {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long)]
        trials: Option<u64>,
    },
    /// Monte-Carlo batches over a list of δ; CSV on stdout.
    Sweep {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long)]
        trials: Option<u64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SideArg {
    Upper,
    Lower,
}

#[derive(Args)]
struct ExpArgs {
    /// JSON bandit instance: a list of arm specs or `{"arms": [...]}`.
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Confidence level; a comma-separated list for `sweep`.
    #[arg(long, value_delimiter = ',')]
    delta: Vec<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                // --help and --version
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let body = json!({"error": {"kind": "usage", "message": e.to_string().trim()}});
            eprintln!("{body}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            let mut err = json!({"kind": e.kind(), "message": e.to_string()});
            if let Error::Config { key, .. } = &e {
                err["key"] = json!(key);
            }
            eprintln!("{}", json!({ "error": err }));
            let code = match e {
                Error::DegenerateInstance(_) => EXIT_DEGENERATE,
                Error::Io(_) => 1,
                _ => EXIT_CONFIG,
            };
            ExitCode::from(code)
        }
    }
}

fn read_json<T: DeserializeOwned>(path: &Path, key: &str) -> evar_bai::Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_err(key, format!("{}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let inner = e.path().to_string();
        let at = if inner == "." {
            key.to_string()
        } else {
            format!("{key}{inner}")
        };
        config_err(&at, e.into_inner().to_string())
    })
}

fn config_err(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

fn risk(alpha: f64) -> evar_bai::Result<RiskLevel> {
    RiskLevel::new(alpha).map_err(|e| config_err("alpha", e.to_string()))
}

/// Merges the config file (if any) with explicit flags.
fn experiment(cli: &Cli, exp: &ExpArgs, trials: Option<u64>) -> evar_bai::Result<ExperimentConfig> {
    let base = cli.config.as_deref().map(parse_config).transpose()?;
    if let Some(c) = &base {
        for w in c.warnings() {
            eprintln!("{}", json!({ "warning": w }));
        }
    }
    let instance = match (&exp.instance, &base) {
        (Some(p), _) => read_json::<BanditInstance>(p, "instance")?,
        (None, Some(c)) => c.instance.clone(),
        (None, None) => {
            return Err(config_err(
                "instance",
                "missing (pass --instance or --config)",
            ))
        }
    };
    let alpha = match (exp.alpha, &base) {
        (Some(a), _) => a,
        (None, Some(c)) => c.alpha,
        (None, None) => return Err(config_err("alpha", "missing (pass --alpha or --config)")),
    };
    let delta = match (exp.delta.as_slice(), &base) {
        ([d], _) => Deltas::One(*d),
        ([], Some(c)) => c.delta.clone(),
        ([], None) => Deltas::Many(Vec::new()),
        (ds, _) => Deltas::Many(ds.to_vec()),
    };
    let mut config = match base {
        Some(c) => ExperimentConfig {
            instance,
            alpha,
            delta,
            ..c
        },
        None => ExperimentConfig {
            instance,
            alpha,
            delta,
            trials: ExperimentConfig::DEFAULT_TRIALS,
            seed: 0,
            horizon_cap: 1_000_000,
            quantization_grid: evar_bai::sim::DEFAULT_GRID,
            sampling: Sampling::Tracking,
            strict_tracking: false,
            solver: KlInfSettings::default(),
            output: Default::default(),
        },
    };
    if let Some(s) = exp.seed {
        config.seed = s;
    }
    if let Some(t) = trials {
        config.trials = t;
    }
    config.strict_tracking |= cli.strict_tracking;
    if cli.uniform {
        config.sampling = Sampling::Uniform;
    }
    config.risk()?;
    Ok(config)
}

/// Validates δ once an operation actually needs it.
fn validated(config: &ExperimentConfig) -> evar_bai::Result<Vec<f64>> {
    config.validate()?;
    Ok(config.deltas())
}

fn single_delta(config: &ExperimentConfig) -> evar_bai::Result<f64> {
    match validated(config)?.as_slice() {
        [d] => Ok(*d),
        _ => Err(config_err("delta", "exactly one value is required")),
    }
}

fn emit_json(cli: &Cli, value: &Value) -> evar_bai::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    println!("{text}");
    if let Some(p) = &cli.out {
        std::fs::write(p, format!("{text}\n"))?;
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> evar_bai::Result<ExitCode> {
    match &cli.command {
        Command::Evar { dist, alpha } => {
            let d: DiscreteDistribution = read_json(dist, "dist")?;
            let r = risk(*alpha)?;
            let mut out = serde_json::to_value(evar(&d, r))?;
            if cli.oracle {
                out["oracle"] = json!({ "evar_grid": evar_grid(&d, r, 100_000) });
            }
            emit_json(cli, &out)?;
        }
        Command::Klinf {
            side,
            dist,
            nu,
            alpha,
        } => {
            let d: DiscreteDistribution = read_json(dist, "dist")?;
            let r = risk(*alpha)?;
            let nu_t = Threshold::new(*nu).map_err(|e| config_err("nu", e.to_string()))?;
            let settings = match &cli.config {
                Some(p) => parse_config(p)?.solver,
                None => KlInfSettings::default(),
            };
            let (side, mut out) = match side {
                SideArg::Upper => {
                    let s = kl_inf_upper_with(&d, nu_t, r, &settings);
                    let out = json!({
                        "value": s.value,
                        "dual": {"lambda1": s.lambda1, "lambda3": s.lambda3, "witness": s.witness},
                        "primal": s.primal,
                    });
                    (Side::Upper, out)
                }
                SideArg::Lower => {
                    let s = kl_inf_lower_with(&d, nu_t, r, &settings);
                    let dual = json!({"z": s.z, "lambda": s.lambda});
                    let sol = serde_json::to_value(&s)?;
                    let out = json!({"value": sol["value"], "dual": dual, "primal": s.primal});
                    (Side::Lower, out)
                }
            };
            if cli.oracle {
                out["oracle"] = match klinf_primal_grid(&d, *nu, r, side, 1.0 / 500.0) {
                    Ok(v) => json!({ "klinf_primal_grid": finite_or_str(v), "step": 1.0 / 500.0 }),
                    Err(e) => json!({ "unavailable": e.to_string() }),
                };
            }
            emit_json(cli, &out)?;
        }
        Command::Oracle { exp } => {
            let config = experiment(cli, exp, None)?;
            if config.deltas().is_empty() {
                config.validate_instance()?;
            } else {
                config.validate()?;
            }
            let r = config.risk()?;
            let laws = config.resolved_instance().laws()?;
            let cache = KlInfCache::new(config.solver);
            let sol = characteristic_time_with(&cache, &laws, r)?;
            let mut out = json!({
                "T": sol.characteristic_time,
                "best": sol.best,
                "weights": sol.weights,
                "per_alternative": sol.per_alternative,
            });
            if let [d] = config.deltas().as_slice() {
                out["lower_bound"] =
                    finite_or_str(lower_bound_from_time(sol.characteristic_time, *d));
            }
            if cli.oracle {
                out["oracle"] = match tmu_grid(&laws, r, 1.0 / 400.0, 2000) {
                    Ok(v) => json!({ "tmu_grid": v, "step": 1.0 / 400.0 }),
                    Err(e) => json!({ "unavailable": e.to_string() }),
                };
            }
            emit_json(cli, &out)?;
        }
        Command::Run { exp } => {
            let config = experiment(cli, exp, None)?;
            let delta = single_delta(&config)?;
            let r = config.risk()?;
            let instance = config.resolved_instance();
            let cache = KlInfCache::new(config.solver);
            let rec = run_trial(
                &instance,
                r,
                delta,
                config.seed,
                config.tas_settings(),
                &cache,
            )?;
            let out = json!({
                "seed": rec.seed,
                "tau": rec.tau,
                "recommended": rec.recommended,
                "correct": rec.correct,
                "trajectory_summary": {
                    "stopped": rec.stopped,
                    "counts": rec.counts,
                    "statistic": rec.statistic,
                    "threshold": rec.threshold,
                    "wall_time_ms": rec.wall_time_ms,
                },
            });
            emit_json(cli, &out)?;
            if !rec.stopped {
                return Ok(ExitCode::from(EXIT_HORIZON));
            }
        }
        Command::Mc { exp, trials } => {
            let config = experiment(cli, exp, *trials)?;
            let delta = single_delta(&config)?;
            let r = config.risk()?;
            let instance = config.resolved_instance();
            let cache = KlInfCache::new(config.solver);
            let res = monte_carlo_with(
                &cache,
                &instance,
                r,
                delta,
                config.trials,
                config.seed,
                jobs(cli),
                config.tas_settings(),
            )?;
            let jsonl = cli.out.as_ref().or(config.output.trials_jsonl.as_ref());
            if let Some(p) = jsonl {
                let mut w = BufWriter::new(File::create(p)?);
                for rec in &res.records {
                    serde_json::to_writer(&mut w, rec)?;
                    w.write_all(b"\n")?;
                }
                w.flush()?;
            }
            let csv = format!("{}\n{}\n", McSummary::CSV_HEADER, res.summary.csv_row());
            print!("{csv}");
            if let Some(p) = &config.output.summary_csv {
                std::fs::write(p, &csv)?;
            }
            if cli.oracle {
                let laws = instance.laws()?;
                if let Ok(t) = tmu_grid(&laws, r, 1.0 / 400.0, 2000) {
                    eprintln!(
                        "{}",
                        json!({ "oracle": { "tmu_grid": t, "T": res.summary.characteristic_time } })
                    );
                }
            }
        }
        Command::Sweep { exp, trials } => {
            let config = experiment(cli, exp, *trials)?;
            validated(&config)?;
            let rows = emit_sweep(&config, jobs(cli))?;
            let csv = sweep_csv(&rows);
            print!("{csv}");
            let target = cli.out.as_ref().or(config.output.summary_csv.as_ref());
            if let Some(p) = target {
                std::fs::write(p, &csv)?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn jobs(cli: &Cli) -> usize {
    cli.jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

fn finite_or_str(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}
