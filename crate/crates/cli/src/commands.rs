//! One function per subcommand. Each writes its outputs and then a run
//! manifest beside them.

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use mars_core::agents::{train_policy, ExecEnv, Policy, SimExecEnv, ToyExecEnv, TrainConfig};
use mars_core::analytics::{
    aggregate_forecast, detect_anomaly, forecast_label, histogram_pair, stylized_report, PriceBasis, ReturnSeries,
    StylizedConfig, StylizedInput, Thresholds,
};
use mars_core::book::{orders_from_records, OrderKind};
use mars_core::codec::CodecConfig;
use mars_core::flow::{fit_count_model, tokenize_orders, CountModelConfig, ReplayFlow};
use mars_core::impact::{
    factor_correlation_matrix, fit_long_term_ode, fit_sqrt_law, measure_impact, read_records, search_factors, write_records,
    Candidate, Factor, FactorConfig, ImpactWindow, OdeModel, SearchConfig,
};
use mars_core::io::{load_config, load_minute_returns, scenario_filter, scenario_to_control, TradingSessions, CONFIG_VERSION};
use mars_core::sim::{run_rollouts, SessionConfig, SessionSpec, Trajectory};
use serde_json::{json, Value};

use crate::config::{read_log, SimulateConfig};
use crate::output::{config_hash, load_trajectories, trajectory_dirs, write_json, write_manifest, write_text};
use crate::{Command, Env, FitMode, Metric};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Replay { log, minutes, opening, start_ms, reference, out } => {
            replay(&log, minutes, opening, start_ms, reference, &out)
        }
        Command::Simulate { config, rollouts, seed, out } => simulate(&config, rollouts, seed, &out),
        Command::Forecast { input, from_minute, horizon, low, high, train, out } => {
            let thresholds = low.zip(high).map(|(low, high)| Thresholds { low, high });
            forecast(&input, from_minute, horizon, thresholds, train.as_deref(), &out)
        }
        Command::Impact { with, without, start_minute, end_minute, lookback, config_id, factors, replay_volume, out } => {
            let window = ImpactWindow { start_minute, end_minute, lookback_minutes: lookback, config_id };
            impact(&with, &without, window, factors.as_deref(), replay_volume, &out)
        }
        Command::ImpactFit { records, mode, model, out } => impact_fit(&records, mode, model.as_deref(), &out),
        Command::Stylized { input, report } => stylized(&input, &report),
        Command::Detect { sim, replay, threshold, metric, bins, out } => detect(&sim, &replay, threshold, metric, bins, &out),
        Command::RlTrain { env, config, updates, batch, lr, seed, out } => {
            rl_train(env, config.as_deref(), TrainConfig { updates, batch, lr, seed }, &out)
        }
        Command::ScenarioFilter { returns, tag, window, threshold, max_samples, out } => {
            scenario(&returns, tag.into(), window, threshold, max_samples, &out)
        }
        Command::Tokenize { log, start_ms, reference, out, model_out, order, alpha } => {
            tokenize(&log, start_ms, reference, &out, model_out.as_deref(), CountModelConfig { order, alpha })
        }
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

/// The first limit order's price, which the book quotes around before any
/// trade exists.
fn first_limit_price(records: &[mars_core::book::LogRecord]) -> Option<i64> {
    records.iter().find(|r| r.kind != OrderKind::Cancel).map(|r| r.price)
}

fn replay(log: &Path, minutes: u32, opening: usize, start_ms: Option<u64>, reference: Option<i64>, out: &Path) -> Result<()> {
    let records = read_log(log)?;
    ensure!(!records.is_empty(), "log {} is empty", log.display());
    ensure!(opening <= records.len(), "opening count {opening} exceeds the {} records", records.len());
    let start_ms = start_ms.unwrap_or(records[0].timestamp_ms);
    let reference = reference.or_else(|| first_limit_price(&records)).unwrap_or(SessionConfig::default().reference_price);
    let config = SessionConfig { horizon_minutes: minutes, start_ms, reference_price: reference, ..SessionConfig::default() };
    let mut orders = orders_from_records(&records, start_ms);
    let flow = orders.split_off(opening);
    let traj = SessionSpec::new(config.clone(), Arc::new(ReplayFlow::new(flow))).with_starting(orders).run(0)?;
    traj.write_dir(out)?;
    let params = json!({ "session": config, "opening": opening });
    write_manifest("replay", out, config_hash(&params, &[log.to_path_buf()])?, Some(0), vec![display(out)])
}

fn load_simulate_config(path: &Path) -> Result<SimulateConfig> {
    let mut config: SimulateConfig = load_config(path).with_context(|| format!("loading {}", path.display()))?;
    config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(config)
}

fn simulate(config_path: &Path, rollouts: usize, seed: u64, out: &Path) -> Result<()> {
    ensure!(rollouts > 0, "at least one rollout");
    let config = load_simulate_config(config_path)?;
    let with = config.build_spec_with_agent()?;
    let mut runs = vec![(out.to_path_buf(), with)];
    if config.paired {
        ensure!(config.agent.is_some(), "paired runs need an agent");
        let without = runs[0].1.without_agents();
        runs = vec![(out.join("with"), runs.remove(0).1), (out.join("without"), without)];
    }
    let mut outputs = Vec::new();
    for (dir, spec) in &runs {
        for (i, traj) in run_rollouts(spec, rollouts, seed).into_iter().enumerate() {
            let traj = traj.with_context(|| format!("rollout {i}"))?;
            let path = dir.join(format!("rollout-{i:04}"));
            traj.write_dir(&path)?;
            outputs.push(display(&path));
        }
    }
    let params = json!({ "config": config, "rollouts": rollouts });
    write_manifest("simulate", out, config_hash(&params, &config.inputs())?, Some(seed), outputs)
}

/// Labels of every `horizon`-minute window along each trajectory's mid path.
fn rolling_labels(trajectories: &[Trajectory], horizon: usize) -> Result<Vec<f64>> {
    let permissive = Thresholds { low: 0.0, high: 0.0 };
    let mut labels = Vec::new();
    for traj in trajectories {
        for w in traj.mid_path().windows(horizon + 1) {
            labels.push(forecast_label(w, &permissive)?.0);
        }
    }
    Ok(labels)
}

fn forecast(input: &Path, from: usize, horizon: usize, thresholds: Option<Thresholds>, train: Option<&Path>, out: &Path) -> Result<()> {
    ensure!(horizon > 0, "horizon must be positive");
    let (thresholds, inputs) = match (thresholds, train) {
        (Some(t), _) => (t, vec![input.to_path_buf()]),
        (None, Some(train)) => {
            let labels = rolling_labels(&load_trajectories(train)?, horizon)?;
            (Thresholds::fit(&labels)?, vec![input.to_path_buf(), train.to_path_buf()])
        }
        (None, None) => bail!("either --low/--high or --train is required"),
    };
    let mut votes = Vec::new();
    let mut per_rollout = Vec::new();
    for traj in load_trajectories(input)? {
        let mids = traj.mid_path();
        let Some(window) = mids.get(from..=from + horizon) else {
            bail!("seed {} has {} minutes, fewer than {}", traj.manifest.seed, traj.minutes.len(), from + horizon);
        };
        let (label, direction) = forecast_label(window, &thresholds)?;
        votes.push(direction);
        per_rollout.push(json!({ "seed": traj.manifest.seed, "label": label, "direction": direction }));
    }
    let report = json!({
        "from_minute": from,
        "horizon": horizon,
        "thresholds": { "low": thresholds.low, "high": thresholds.high },
        "direction": aggregate_forecast(&votes),
        "rollouts": per_rollout,
    });
    write_json(out, &report)?;
    let params = json!({ "from_minute": from, "horizon": horizon, "low": thresholds.low, "high": thresholds.high });
    write_manifest("forecast", out, config_hash(&params, &inputs)?, None, vec![display(out)])
}

fn impact(with: &Path, without: &Path, window: ImpactWindow, factors: Option<&Path>, replay_volume: Option<f64>, out: &Path) -> Result<()> {
    let factor_cfg: FactorConfig = match factors {
        Some(p) => load_config(p).with_context(|| format!("loading {}", p.display()))?,
        None => FactorConfig::default(),
    };
    let (a, b) = (trajectory_dirs(with)?, trajectory_dirs(without)?);
    ensure!(a.len() == b.len(), "{} runs with the agent but {} without", a.len(), b.len());
    let mut records = Vec::with_capacity(a.len());
    for (wa, wb) in a.iter().zip(&b) {
        let (ta, tb) = (Trajectory::read_dir(wa)?, Trajectory::read_dir(wb)?);
        let record = measure_impact(&ta, &tb, &window, &factor_cfg, replay_volume)
            .with_context(|| format!("pairing {} with {}", wa.display(), wb.display()))?;
        records.push(record);
    }
    write_records(out, &records)?;
    let params = json!({ "window": window, "factors": factor_cfg, "replay_volume": replay_volume });
    let mut inputs = vec![with.to_path_buf(), without.to_path_buf()];
    inputs.extend(factors.map(Path::to_path_buf));
    write_manifest("impact", out, config_hash(&params, &inputs)?, None, vec![display(out)])
}

fn impact_fit(records_path: &Path, mode: FitMode, model: Option<&Path>, out: &Path) -> Result<()> {
    let records = read_records(records_path)?;
    let mut inputs = vec![records_path.to_path_buf()];
    inputs.extend(model.map(Path::to_path_buf));
    let (result, params) = match mode {
        FitMode::Sqrt => {
            let fit = fit_sqrt_law(&records)?;
            (json!({ "mode": "sqrt", "fit": fit }), json!({ "mode": "sqrt" }))
        }
        FitMode::Ode => {
            let ode: OdeModel = match model {
                Some(p) => load_config(p).with_context(|| format!("loading {}", p.display()))?,
                None => OdeModel::default(),
            };
            let fit = fit_long_term_ode(&records, &ode)?;
            (json!({ "mode": "ode", "model": ode, "fit": fit }), json!({ "mode": "ode", "model": ode }))
        }
        FitMode::Search => {
            let cfg: SearchConfig = match model {
                Some(p) => load_config(p).with_context(|| format!("loading {}", p.display()))?,
                None => SearchConfig::default(),
            };
            let usable: Vec<_> = records
                .iter()
                .filter(|r| r.delta_bp.is_finite() && Factor::DEFAULTS.iter().all(|f| f.value(r).is_some()))
                .collect();
            let target: Vec<f64> = usable.iter().map(|r| r.delta_bp).collect();
            let dictionary: Vec<Candidate> = Factor::DEFAULTS
                .iter()
                .map(|f| {
                    let name = serde_json::to_value(f).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
                    Candidate::new(name, usable.iter().map(|r| f.value(r).expect("filtered above")).collect())
                })
                .collect();
            let report = search_factors(&target, &dictionary, &cfg)?;
            let correlation = factor_correlation_matrix(&records).ok();
            (
                json!({ "mode": "search", "records_used": usable.len(), "report": report, "correlation": correlation }),
                json!({ "mode": "search", "config": cfg }),
            )
        }
    };
    write_json(out, &result)?;
    write_manifest("impact-fit", out, config_hash(&params, &inputs)?, None, vec![display(out)])
}

fn stylized(input: &Path, report_path: &Path) -> Result<()> {
    let inputs: Vec<StylizedInput> = load_trajectories(input)?
        .iter()
        .map(|traj| {
            let series = ReturnSeries::from_trajectory(traj, PriceBasis::LastTrade);
            let volumes: Vec<f64> = traj.minutes.iter().map(|m| m.volume as f64).collect();
            let volumes = (volumes.len() == series.returns.len()).then_some(volumes);
            StylizedInput { series, volumes }
        })
        .collect();
    let config = StylizedConfig::default();
    write_json(report_path, &stylized_report(&inputs, &config))?;
    let params = json!({ "config": config });
    write_manifest("stylized", report_path, config_hash(&params, &[input.to_path_buf()])?, None, vec![display(report_path)])
}

fn minute_samples(trajectories: &[Trajectory], metric: Metric) -> Vec<f64> {
    trajectories
        .iter()
        .flat_map(|t| t.minutes.iter())
        .filter_map(|m| match metric {
            Metric::Spread => m.spread.map(|s| s as f64),
            Metric::Volume => Some(m.volume as f64),
            Metric::Return => Some(m.log_return()).filter(|r| r.is_finite()),
        })
        .collect()
}

fn detect(sim: &Path, replay: &Path, threshold: f64, metric: Metric, bins: usize, out: &Path) -> Result<()> {
    let a = minute_samples(&load_trajectories(sim)?, metric);
    let b = minute_samples(&load_trajectories(replay)?, metric);
    let (ha, hb) = histogram_pair(&a, &b, bins)?;
    let detection = detect_anomaly(&ha, &hb, threshold)?;
    let report = json!({
        "metric": metric,
        "bins": bins,
        "score": detection.score,
        "threshold": detection.threshold,
        "flag": detection.flag,
        "samples": { "sim": a.len(), "replay": b.len() },
        "edges": ha.edges(),
        "sim_masses": ha.masses(),
        "replay_masses": hb.masses(),
    });
    write_json(out, &report)?;
    let params = json!({ "metric": metric, "bins": bins, "threshold": threshold });
    write_manifest("detect", out, config_hash(&params, &[sim.to_path_buf(), replay.to_path_buf()])?, None, vec![display(out)])
}

fn rl_train(env_kind: Env, config: Option<&Path>, train: TrainConfig, out: &Path) -> Result<()> {
    ensure!(train.batch > 0, "batch must be positive");
    let (env, params, inputs): (Box<dyn ExecEnv>, Value, Vec<PathBuf>) = match (env_kind, config) {
        (Env::Toy, _) => {
            let env = ToyExecEnv::default();
            (Box::new(env), json!({ "env": "toy" }), Vec::new())
        }
        (Env::Sim, Some(path)) => {
            let cfg = load_simulate_config(path)?;
            let twap = cfg.agent.clone().unwrap_or_default();
            let env = SimExecEnv::new(cfg.build_spec()?, twap);
            let mut inputs = cfg.inputs();
            inputs.push(path.to_path_buf());
            (Box::new(env), json!({ "env": "sim" }), inputs)
        }
        (Env::Sim, None) => bail!("--env sim needs --config"),
    };
    let report = train_policy(env.as_ref(), Policy::uniform(), &train)?;
    write_text(out, &report.policy.to_json())?;
    let curve = out.with_extension("rewards.json");
    write_json(&curve, &report.mean_rewards)?;
    let params = json!({
        "env": params["env"],
        "updates": train.updates,
        "batch": train.batch,
        "lr": train.lr,
    });
    write_manifest("rl-train", out, config_hash(&params, &inputs)?, Some(train.seed), vec![display(out), display(&curve)])
}

fn scenario(returns: &Path, tag: mars_core::io::ScenarioTag, window: usize, threshold: f64, max_samples: usize, out: &Path) -> Result<()> {
    let sessions = TradingSessions::default();
    let matrix = load_minute_returns(returns, &sessions).with_context(|| format!("loading {}", returns.display()))?;
    let samples = scenario_filter(&matrix, &sessions, window, threshold, max_samples, tag)?;
    let controls = samples.iter().map(|s| scenario_to_control(s, &matrix)).collect::<Result<Vec<_>, _>>()?;
    std::fs::create_dir_all(out)?;
    let (samples_path, controls_path) = (out.join("samples.json"), out.join("controls.json"));
    write_json(&samples_path, &samples)?;
    write_json(&controls_path, &controls)?;
    let params = json!({ "tag": tag, "window": window, "threshold": threshold, "max_samples": max_samples, "version": CONFIG_VERSION });
    write_manifest(
        "scenario-filter",
        out,
        config_hash(&params, &[returns.to_path_buf()])?,
        None,
        vec![display(&samples_path), display(&controls_path)],
    )
}

fn tokenize(log: &Path, start_ms: Option<u64>, reference: Option<i64>, out: &Path, model_out: Option<&Path>, model_cfg: CountModelConfig) -> Result<()> {
    let records = read_log(log)?;
    ensure!(!records.is_empty(), "log {} is empty", log.display());
    let start_ms = start_ms.unwrap_or(records[0].timestamp_ms);
    let reference = reference.or_else(|| first_limit_price(&records)).unwrap_or(SessionConfig::default().reference_price);
    let codec = CodecConfig::default();
    let orders = orders_from_records(&records, start_ms);
    let events = tokenize_orders(&orders, start_ms, reference, &codec)?;
    let mut text = String::from("seq,token,kind,price_bucket,volume_bucket,interval_bucket,spread_bucket,imbalance_bucket,trend\n");
    for (r, e) in records.iter().zip(&events) {
        let p = e.token.parts();
        writeln!(
            text,
            "{},{},{},{},{},{},{},{},{}",
            r.seq,
            e.token.index(),
            p.kind.code(),
            p.price_bucket,
            p.volume_bucket,
            p.interval_bucket,
            e.lob.spread_bucket,
            e.lob.imbalance_bucket,
            e.lob.trend
        )?;
    }
    write_text(out, &text)?;
    let mut outputs = vec![display(out)];
    if let Some(path) = model_out {
        let model = fit_count_model(&[events], model_cfg)?;
        let file = File::create(path).with_context(|| format!("writing {}", path.display()))?;
        model.write_to(BufWriter::new(file))?;
        outputs.push(display(path));
    }
    let params = json!({
        "start_ms": start_ms,
        "reference": reference,
        "codec": codec,
        "model": model_out.map(|_| json!({ "order": model_cfg.order, "alpha": model_cfg.alpha })),
    });
    write_manifest("tokenize", out, config_hash(&params, &[log.to_path_buf()])?, None, outputs)
}
