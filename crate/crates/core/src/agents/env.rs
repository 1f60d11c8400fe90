//! Episodic execution environments and the policy-gradient trainer.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::policy::{policy_gradient_update, Decision, ExecState, Policy, PolicyError, Sample, Stage};
use super::twap::{TwapAction, TwapAgent, TwapConfig, PARTS};
use super::{price_advantage, reward, Agent, AgentFill, RewardConfig};
use crate::book::{Price, Side};
use crate::sim::{keyed_rng, SessionSpec, SimError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub decisions: Vec<Decision>,
    pub reward: f64,
    pub fulfillment: f64,
    pub price_advantage: Option<f64>,
}

pub trait ExecEnv: Sync {
    /// Runs one episode with actions from `policy`; `seed` fixes all market randomness.
    fn episode(&self, policy: &Arc<Policy>, seed: u64, greedy: bool) -> Result<Episode, SimError>;
}

/// Closed-form buy-side execution game used to exercise the trainer quickly.
///
/// Each interval draws a book imbalance, the sell flow that reaches the bid
/// during the passive phase (larger when the book leans to the ask side) and
/// the depth at five ask levels one tick apart. Passive volume fills at the
/// bid up to the sell flow; the aggressive order walks the ask levels up to
/// AP. Unfilled passive volume is withdrawn at the interval end. The
/// benchmark is L1-P0.9 on the same draws.
#[derive(Clone, Debug)]
pub struct ToyExecEnv {
    pub total_volume: u64,
    pub bid: Price,
    pub reward: RewardConfig,
}

impl Default for ToyExecEnv {
    fn default() -> Self {
        Self { total_volume: 1000, bid: 10_000, reward: RewardConfig::default() }
    }
}

struct ToyInterval {
    imbalance: f64,
    sell_flow: u64,
    depth: [u64; 5],
}

impl ToyExecEnv {
    fn draws(&self, seed: u64) -> Vec<ToyInterval> {
        let mut rng = keyed_rng(seed, 0x7011, 0);
        let v = self.total_volume as f64;
        (0..PARTS)
            .map(|_| {
                let imbalance: f64 = rng.random_range(-1.0..1.0);
                let sell_flow = (0.12 * v * (1.0 - imbalance) * rng.random::<f64>()).round() as u64;
                let depth = std::array::from_fn(|_| (0.05 * v + 0.1 * v * rng.random::<f64>()).round() as u64);
                ToyInterval { imbalance, sell_flow, depth }
            })
            .collect()
    }

    fn play(&self, draws: &[ToyInterval], mut act: impl FnMut(u64, &ExecState) -> TwapAction) -> (u64, Vec<AgentFill>) {
        let cfg = TwapConfig { total_volume: self.total_volume, ..Default::default() };
        let v = self.total_volume;
        let mut executed = 0u64;
        let mut fills = Vec::new();
        let fill = |price: Price, volume: u64, fills: &mut Vec<AgentFill>| {
            if volume > 0 {
                fills.push(AgentFill { timestamp_ms: 0, order_id: 0, side: Side::Bid, maker: false, price, volume });
            }
        };
        for (i, d) in draws.iter().enumerate() {
            let state = ExecState {
                remaining_time: 1.0 - i as f64 / PARTS as f64,
                remaining_volume: 1.0 - executed as f64 / v as f64,
                imbalance: d.imbalance,
                stage: Stage::Passive,
            };
            let a = act(i as u64, &state);
            let passive = (v - executed).min((a.pvr() * v as f64).round() as u64);
            let got = passive.min(d.sell_flow);
            executed += got;
            fill(self.bid, got, &mut fills);
            let mut shortfall = cfg.due_by(i as u64).saturating_sub(executed);
            for k in 0..a.ap as usize {
                let take = shortfall.min(d.depth[k]);
                executed += take;
                shortfall -= take;
                fill(self.bid + 1 + k as Price, take, &mut fills);
            }
        }
        (executed, fills)
    }
}

impl ExecEnv for ToyExecEnv {
    fn episode(&self, policy: &Arc<Policy>, seed: u64, greedy: bool) -> Result<Episode, SimError> {
        let draws = self.draws(seed);
        let mut rng = keyed_rng(seed, 0x7012, 0);
        let mut decisions = Vec::new();
        let (executed, fills) = self.play(&draws, |i, s| {
            let x = s.features();
            let a = if greedy { policy.greedy(&x) } else { policy.sample(&x, &mut rng) };
            decisions.push(Decision { timestamp_ms: i * 30_000, features: x, action: a });
            TwapAction::from_index(a)
        });
        let (_, bench) = self.play(&draws, |_, _| TwapAction { pvr_tenths: 9, ap: 1 });
        let fr = executed as f64 / self.total_volume as f64;
        let pa = price_advantage(&fills, &bench, Side::Bid);
        Ok(Episode { decisions, reward: reward(fr, pa.unwrap_or(0.0), &self.reward), fulfillment: fr, price_advantage: pa })
    }
}

/// Execution inside full simulated sessions, benchmarked against a paired
/// L1-P0.9 run on the same seed.
#[derive(Clone)]
pub struct SimExecEnv {
    pub spec: SessionSpec,
    pub twap: TwapConfig,
    pub reward: RewardConfig,
}

impl SimExecEnv {
    pub fn new(spec: SessionSpec, twap: TwapConfig) -> Self {
        Self { spec: spec.without_agents(), twap, reward: RewardConfig::default() }
    }

    fn run_agent(&self, seed: u64, agent: impl Fn() -> Box<dyn Agent> + Send + Sync + 'static) -> Result<super::AgentReport, SimError> {
        let traj = self.spec.clone().with_agents(move |_| vec![agent()]).run(seed)?;
        Ok(traj.agents.into_iter().next().expect("one agent attached"))
    }
}

impl ExecEnv for SimExecEnv {
    fn episode(&self, policy: &Arc<Policy>, seed: u64, greedy: bool) -> Result<Episode, SimError> {
        let cfg = self.twap.clone();
        let policy = policy.clone();
        let agent = self.run_agent(seed, move || {
            Box::new(
                TwapAgent::with_policy(cfg.clone(), policy.clone(), keyed_rng(seed, 0x7013, 0), greedy)
                    .expect("validated twap config"),
            )
        })?;
        let bench_cfg = TwapConfig { pvr: 0.9, ap: 1, ..self.twap.clone() };
        let bench = self.run_agent(seed, move || Box::new(TwapAgent::new(bench_cfg.clone()).expect("validated twap config")))?;
        let side = self.twap.side;
        let fr = agent.fulfillment();
        let pa = price_advantage(&agent.fills, &bench.fills, side);
        Ok(Episode { decisions: agent.decisions, reward: reward(fr, pa.unwrap_or(0.0), &self.reward), fulfillment: fr, price_advantage: pa })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub updates: usize,
    /// Episodes per update.
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { updates: 10, batch: 8192, lr: 4e-5, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub policy: Policy,
    /// Mean episode reward of each batch, before its update.
    pub mean_rewards: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

fn run_batch(env: &dyn ExecEnv, policy: &Arc<Policy>, seeds: impl IndexedParallelIterator<Item = u64>, greedy: bool) -> Result<Vec<Episode>, SimError> {
    seeds.map(|s| env.episode(policy, s, greedy)).collect()
}

/// REINFORCE over batches of episodes; every decision in an episode is
/// credited with that episode's reward. Episodes run in parallel and are
/// reduced in seed order, so results do not depend on scheduling.
pub fn train_policy(env: &dyn ExecEnv, initial: Policy, cfg: &TrainConfig) -> Result<TrainReport, TrainError> {
    let mut policy = Arc::new(initial);
    let mut mean_rewards = Vec::with_capacity(cfg.updates);
    for u in 0..cfg.updates {
        let base = cfg.seed.wrapping_add((u * cfg.batch) as u64);
        let episodes = run_batch(env, &policy, (0..cfg.batch).into_par_iter().map(|j| base.wrapping_add(j as u64)), false)?;
        mean_rewards.push(episodes.iter().map(|e| e.reward).sum::<f64>() / episodes.len().max(1) as f64);
        let samples: Vec<Sample> = episodes
            .iter()
            .flat_map(|e| e.decisions.iter().map(move |d| Sample { features: d.features, action: d.action, ret: e.reward }))
            .collect();
        if samples.is_empty() {
            continue;
        }
        policy = Arc::new(policy_gradient_update(&policy, &samples, cfg.lr)?);
    }
    Ok(TrainReport { policy: Arc::try_unwrap(policy).unwrap_or_else(|p| (*p).clone()), mean_rewards })
}

/// Mean reward over `episodes` seeded runs starting at `seed`.
pub fn evaluate_policy(env: &dyn ExecEnv, policy: &Policy, episodes: usize, seed: u64, greedy: bool) -> Result<f64, SimError> {
    let policy = Arc::new(policy.clone());
    let eps = run_batch(env, &policy, (0..episodes).into_par_iter().map(|j| seed.wrapping_add(j as u64)), greedy)?;
    Ok(eps.iter().map(|e| e.reward).sum::<f64>() / episodes.max(1) as f64)
}
