//! Market impact from paired simulations: records, factors, the
//! square-root law, the long-term impact ODE and factor search.

mod fit;
mod search;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::book::LobSnapshot;
use crate::sim::{Trajectory, MINUTE_MS};

pub use fit::{fit_long_term_ode, fit_sqrt_law, lasso_gram, Decay, Factor, OdeFit, OdeModel, SqrtLawFit, MIN_SQRT_LAW_RECORDS};
pub use search::{correlation_matrix, factor_correlation_matrix, search_factors, Candidate, FactorCorrelation, SearchConfig, SearchReport, SearchStep};

#[derive(Debug, Error)]
pub enum ImpactError {
    #[error("trajectories are not paired: {0}")]
    Unpaired(String),
    #[error("invalid window: {0}")]
    Window(String),
    #[error("invalid factor config: {0}")]
    FactorConfig(String),
    #[error("need at least {needed} usable records, got {got}")]
    InsufficientRecords { needed: usize, got: usize },
    #[error("records have impact curves of different lengths")]
    RaggedCurves,
    #[error("design matrix is singular (condition number {condition:.3e})")]
    Singular { condition: f64 },
    #[error("invalid model: {0}")]
    Model(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// The trading window, in simulated minutes, and the volatility lookback
/// before it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpactWindow {
    pub start_minute: u32,
    /// Exclusive.
    pub end_minute: u32,
    pub lookback_minutes: u32,
    pub config_id: String,
}

impl ImpactWindow {
    fn validate(&self, horizon: u32) -> Result<(), ImpactError> {
        if self.start_minute >= self.end_minute || self.end_minute > horizon {
            return Err(ImpactError::Window(format!(
                "[{}, {}) does not fit a {horizon}-minute session",
                self.start_minute, self.end_minute
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FactorConfig {
    /// Weight of the ask-side transaction share in the pressure factor.
    pub alpha: f64,
    /// Weight of ask volume in the depth factor.
    pub beta: f64,
    /// Weights of the mids preceding the last pre-trade minute, oldest first.
    pub gamma: Vec<f64>,
    /// Floor on |pre-trading moment| before its logarithm.
    pub epsilon: f64,
}

impl Default for FactorConfig {
    fn default() -> Self {
        Self { alpha: 0.5, beta: 0.5, gamma: vec![0.25; 4], epsilon: 1e-6 }
    }
}

impl FactorConfig {
    pub fn new(alpha: f64, beta: f64, gamma: Vec<f64>, epsilon: f64) -> Result<Self, ImpactError> {
        let cfg = Self { alpha, beta, gamma, epsilon };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ImpactError> {
        let open = |x: f64| x > 0.0 && x < 1.0;
        if !open(self.alpha) || !open(self.beta) {
            return Err(ImpactError::FactorConfig("alpha and beta must lie in (0, 1)".into()));
        }
        if self.gamma.is_empty() || !self.gamma.iter().all(|&g| open(g) || (self.gamma.len() == 1 && g == 1.0)) {
            return Err(ImpactError::FactorConfig("each gamma weight must lie in (0, 1)".into()));
        }
        if (self.gamma.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(ImpactError::FactorConfig("gamma weights must sum to 1".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(ImpactError::FactorConfig("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Raw inputs the three derived factors are computed from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FactorInputs {
    /// Minute-close mids before the trading window, oldest first; the last
    /// entry is the last pre-trade minute.
    pub pre_mids: Vec<f64>,
    pub lob_ask_volume: f64,
    pub lob_bid_volume: f64,
    /// Agent transaction volume over the trading window.
    pub agent_volume: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Factors {
    pub resiliency: Option<f64>,
    pub lob_pressure: Option<f64>,
    pub lob_depth: Option<f64>,
}

/// `resiliency = 1 − ln max(|moment|, ε)` with
/// `moment = Σ γₜ·midₜ / mid_last − 1`; `LOB_pressure = (α·ask_share +
/// (1−α)·bid_share)·imbalance`; `LOB_depth = ln(β·ask + (1−β)·bid)`.
pub fn compute_factors(inputs: &FactorInputs, cfg: &FactorConfig) -> Factors {
    let k = cfg.gamma.len();
    let resiliency = (inputs.pre_mids.len() > k).then(|| {
        let last = inputs.pre_mids[inputs.pre_mids.len() - 1];
        let earlier = &inputs.pre_mids[inputs.pre_mids.len() - 1 - k..inputs.pre_mids.len() - 1];
        let moment = cfg.gamma.iter().zip(earlier).map(|(g, m)| g * m).sum::<f64>() / last - 1.0;
        1.0 - moment.abs().max(cfg.epsilon).ln()
    });
    let (ask, bid, a) = (inputs.lob_ask_volume, inputs.lob_bid_volume, inputs.agent_volume);
    let total = ask + bid;
    let lob_pressure = (total > 0.0).then(|| {
        let imbalance = (ask - bid).abs() / total;
        let share = |depth: f64| if a + depth > 0.0 { a / (a + depth) } else { 0.0 };
        (cfg.alpha * share(ask) + (1.0 - cfg.alpha) * share(bid)) * imbalance
    });
    let depth = cfg.beta * ask + (1.0 - cfg.beta) * bid;
    let lob_depth = (depth > 0.0).then(|| depth.ln());
    Factors { resiliency, lob_pressure, lob_depth }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpactRecord {
    /// Mean impact over the trading window in basis points.
    pub delta_bp: f64,
    /// Std of minute log returns over the lookback.
    pub sigma: f64,
    /// Agent traded volume in the window.
    pub q: f64,
    /// Market traded volume in the window.
    pub v: f64,
    pub resiliency: Option<f64>,
    pub lob_pressure: Option<f64>,
    pub lob_depth: Option<f64>,
    pub agent_replay: f64,
    pub agent_rollout: f64,
    /// Mid before trading, in ticks.
    pub mid_pre: f64,
    /// Impact in basis points at each minute close after the window.
    pub y_t: Vec<f64>,
    pub config_id: String,
}

/// Impact of the agent at each minute close: `10⁴ · ln(mid_with / mid_without)`.
fn minute_gaps(with: &Trajectory, without: &Trajectory) -> Vec<f64> {
    with.minutes
        .iter()
        .zip(&without.minutes)
        .map(|(a, b)| 1e4 * (a.close_mid.ticks() / b.close_mid.ticks()).ln())
        .collect()
}

fn snapshot_after(traj: &Trajectory, minute: u32) -> Option<&LobSnapshot> {
    traj.snapshots.iter().find(|(m, _)| *m == minute).map(|(_, s)| s)
}

/// Builds an impact record from a run with the agent and its paired run
/// without it. `replay_volume` is the traded volume of the historical
/// session; without one the counterfactual's volume stands in.
pub fn measure_impact(
    with: &Trajectory,
    without: &Trajectory,
    window: &ImpactWindow,
    factors: &FactorConfig,
    replay_volume: Option<f64>,
) -> Result<ImpactRecord, ImpactError> {
    let (a, b) = (&with.manifest, &without.manifest);
    if a.config_hash != b.config_hash || a.seed != b.seed {
        return Err(ImpactError::Unpaired(format!(
            "seed {} / {} and config {} / {}",
            a.seed, b.seed, a.config_hash, b.config_hash
        )));
    }
    if with.minutes.len() != without.minutes.len() {
        return Err(ImpactError::Unpaired("different numbers of minutes".into()));
    }
    window.validate(with.minutes.len() as u32)?;
    factors.validate()?;

    let (start, end) = (window.start_minute as usize, window.end_minute as usize);
    let gaps = minute_gaps(with, without);
    let delta_bp = gaps[start..end].iter().sum::<f64>() / (end - start) as f64;
    let y_t = gaps[end..].to_vec();

    let lookback = start.saturating_sub(window.lookback_minutes as usize);
    let returns: Vec<f64> = with.minutes[lookback..start].iter().map(|m| m.log_return()).collect();
    let sigma = crate::analytics::moments(&returns).map_or(0.0, |m| m.std);

    let (from_ms, to_ms) = (with.manifest.origin_ms + start as u64 * MINUTE_MS, with.manifest.origin_ms + end as u64 * MINUTE_MS);
    let q: u64 = with
        .agents
        .iter()
        .flat_map(|r| &r.fills)
        .filter(|f| f.timestamp_ms >= from_ms && f.timestamp_ms < to_ms)
        .map(|f| f.volume)
        .sum();
    let v: u64 = with.minutes[start..end].iter().map(|m| m.volume).sum();
    let rollout_total: u64 = with.minutes.iter().map(|m| m.volume).sum();
    let replay_total = replay_volume.unwrap_or_else(|| without.minutes.iter().map(|m| m.volume).sum::<u64>() as f64);
    let share = |total: f64| if total > 0.0 { q as f64 / total } else { 0.0 };

    let mut pre_mids: Vec<f64> = with.minutes.first().map(|m| m.open_mid.ticks()).into_iter().collect();
    pre_mids.extend(with.minutes[..start].iter().map(|m| m.close_mid.ticks()));
    let mid_pre = *pre_mids.last().expect("session has at least one minute");
    let (lob_ask_volume, lob_bid_volume) = match start.checked_sub(1).and_then(|m| snapshot_after(with, m as u32)) {
        Some(s) => (s.asks.iter().map(|l| l.volume as f64).sum(), s.bids.iter().map(|l| l.volume as f64).sum()),
        None => (0.0, 0.0),
    };
    let f = compute_factors(&FactorInputs { pre_mids, lob_ask_volume, lob_bid_volume, agent_volume: q as f64 }, factors);

    Ok(ImpactRecord {
        delta_bp,
        sigma,
        q: q as f64,
        v: v as f64,
        resiliency: f.resiliency,
        lob_pressure: f.lob_pressure,
        lob_depth: f.lob_depth,
        agent_replay: share(replay_total),
        agent_rollout: share(rollout_total as f64),
        mid_pre,
        y_t,
        config_id: window.config_id.clone(),
    })
}

#[derive(Serialize, Deserialize)]
struct RecordRow {
    delta_bp: f64,
    sigma: f64,
    q: f64,
    v: f64,
    resiliency: Option<f64>,
    lob_pressure: Option<f64>,
    lob_depth: Option<f64>,
    agent_replay: f64,
    agent_rollout: f64,
    mid_pre: f64,
    y_t_json: String,
    config_id: String,
}

pub fn write_records(path: &Path, records: &[ImpactRecord]) -> Result<(), ImpactError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(RecordRow {
            delta_bp: r.delta_bp,
            sigma: r.sigma,
            q: r.q,
            v: r.v,
            resiliency: r.resiliency,
            lob_pressure: r.lob_pressure,
            lob_depth: r.lob_depth,
            agent_replay: r.agent_replay,
            agent_rollout: r.agent_rollout,
            mid_pre: r.mid_pre,
            y_t_json: serde_json::to_string(&r.y_t)?,
            config_id: r.config_id.clone(),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<ImpactRecord>, ImpactError> {
    let mut out = Vec::new();
    for row in csv::Reader::from_path(path)?.deserialize() {
        let r: RecordRow = row?;
        out.push(ImpactRecord {
            delta_bp: r.delta_bp,
            sigma: r.sigma,
            q: r.q,
            v: r.v,
            resiliency: r.resiliency,
            lob_pressure: r.lob_pressure,
            lob_depth: r.lob_depth,
            agent_replay: r.agent_replay,
            agent_rollout: r.agent_rollout,
            mid_pre: r.mid_pre,
            y_t: serde_json::from_str(&r.y_t_json)?,
            config_id: r.config_id,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_examples() {
        let cfg = FactorConfig::default();
        let symmetric = FactorInputs { pre_mids: vec![100.0; 6], lob_ask_volume: 100.0, lob_bid_volume: 100.0, agent_volume: 50.0 };
        let f = compute_factors(&symmetric, &cfg);
        assert_eq!(f.lob_pressure, Some(0.0));
        assert!((f.lob_depth.unwrap() - 100f64.ln()).abs() < 1e-12);
        assert!((f.resiliency.unwrap() - (1.0 - 1e-6f64.ln())).abs() < 1e-9);
        let empty = FactorInputs { pre_mids: vec![100.0], ..Default::default() };
        let f = compute_factors(&empty, &cfg);
        assert_eq!((f.resiliency, f.lob_pressure, f.lob_depth), (None, None, None));
    }

    #[test]
    fn pressure_uses_shares_and_imbalance() {
        let cfg = FactorConfig { alpha: 0.25, ..Default::default() };
        let inputs = FactorInputs { pre_mids: vec![], lob_ask_volume: 300.0, lob_bid_volume: 100.0, agent_volume: 100.0 };
        // shares 0.25 and 0.5, imbalance 0.5
        let expected = (0.25 * 0.25 + 0.75 * 0.5) * 0.5;
        assert!((compute_factors(&inputs, &cfg).lob_pressure.unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn config_constraints() {
        assert!(FactorConfig::new(0.0, 0.5, vec![0.5, 0.5], 1e-6).is_err());
        assert!(FactorConfig::new(0.5, 0.5, vec![0.5, 0.6], 1e-6).is_err());
        assert!(FactorConfig::new(0.5, 0.5, vec![0.5, 0.5], 0.0).is_err());
        assert!(FactorConfig::new(0.3, 0.7, vec![0.2, 0.8], 1e-6).is_ok());
    }

    #[test]
    fn records_round_trip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.csv");
        let rec = ImpactRecord {
            delta_bp: 1.5,
            sigma: 0.001,
            q: 1000.0,
            v: 50_000.0,
            resiliency: Some(3.0),
            lob_pressure: None,
            lob_depth: Some(7.1),
            agent_replay: 0.02,
            agent_rollout: 0.019,
            mid_pre: 10_000.5,
            y_t: vec![1.0, 0.5, 0.25],
            config_id: "L1-P0.9".into(),
        };
        write_records(&path, &[rec.clone(), rec.clone()]).unwrap();
        assert_eq!(read_records(&path).unwrap(), vec![rec.clone(), rec]);
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with(
            "delta_bp,sigma,q,v,resiliency,lob_pressure,lob_depth,agent_replay,agent_rollout,mid_pre,y_t_json,config_id"
        ));
    }
}
