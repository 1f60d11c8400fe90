//! Execution agents that inject orders into a running session.
//!
//! [`TwapAgent`] implements the passive/aggressive interval schedule with a
//! fixed (PVR, AP) configuration or with one chosen each interval by a
//! [`Policy`]. The reward, price-advantage and policy-gradient pieces used to
//! train such a policy live here too.

mod env;
mod policy;
mod twap;

use serde::{Deserialize, Serialize};

use crate::book::{OrderId, Price, Side};
use crate::sim::{MarketAccess, SimError};

pub use env::{
    evaluate_policy, train_policy, Episode, ExecEnv, SimExecEnv, ToyExecEnv, TrainConfig, TrainError, TrainReport,
};
pub use policy::{
    policy_gradient_update, Decision, ExecState, Policy, PolicyError, Sample, Stage, ACTIONS, FEATURES,
};
pub use twap::{ActionSource, TwapAction, TwapAgent, TwapConfig, TwapError};

/// An agent is polled before every generated order. Injected orders execute
/// immediately; trades on the agent's resting orders arrive via `on_fill`.
pub trait Agent: Send {
    fn name(&self) -> &str;

    fn on_step(&mut self, market: &mut MarketAccess<'_>) -> Result<(), SimError>;

    /// Every trade involving one of this agent's orders, as maker or taker.
    fn on_fill(&mut self, _fill: &AgentFill) {}

    /// Called once when the session reaches its horizon.
    fn on_finish(&mut self, _market: &mut MarketAccess<'_>) -> Result<(), SimError> {
        Ok(())
    }

    fn report(&self) -> AgentReport;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentFill {
    pub timestamp_ms: u64,
    pub order_id: OrderId,
    /// The agent's side of the trade.
    pub side: Side,
    /// Whether the agent's order was resting (maker) rather than incoming.
    pub maker: bool,
    pub price: Price,
    pub volume: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentReport {
    pub name: String,
    pub side: Option<Side>,
    pub target_volume: u64,
    pub executed: u64,
    pub submitted: u64,
    pub cancelled: u64,
    pub passive_orders: u32,
    pub aggressive_orders: u32,
    pub fills: Vec<AgentFill>,
    pub decisions: Vec<Decision>,
}

impl AgentReport {
    pub fn fulfillment(&self) -> f64 {
        if self.target_volume == 0 {
            0.0
        } else {
            (self.executed as f64 / self.target_volume as f64).min(1.0)
        }
    }

    pub fn vwap(&self) -> Option<f64> {
        vwap(&self.fills)
    }
}

/// Volume-weighted average fill price in ticks; absent without fills.
pub fn vwap(fills: &[AgentFill]) -> Option<f64> {
    let volume: u64 = fills.iter().map(|f| f.volume).sum();
    (volume > 0).then(|| fills.iter().map(|f| f.price as f64 * f.volume as f64).sum::<f64>() / volume as f64)
}

/// How α falls from 1 to 0 as fulfillment passes the knee.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum AlphaSchedule {
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub knee: f64,
    pub schedule: AlphaSchedule,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { knee: 0.95, schedule: AlphaSchedule::Linear }
    }
}

pub fn alpha(fr: f64, cfg: &RewardConfig) -> f64 {
    if fr <= cfg.knee {
        1.0
    } else {
        match cfg.schedule {
            AlphaSchedule::Linear => ((1.0 - fr) / (1.0 - cfg.knee)).max(0.0),
        }
    }
}

/// `α(fr) · fr + pa`.
pub fn reward(fr: f64, pa: f64, cfg: &RewardConfig) -> f64 {
    alpha(fr, cfg) * fr + pa
}

/// VWAP improvement over a benchmark in basis points, positive when the
/// agent bought cheaper (or sold dearer) than the benchmark.
pub fn price_advantage(agent: &[AgentFill], benchmark: &[AgentFill], side: Side) -> Option<f64> {
    let b = vwap(benchmark)?;
    let a = vwap(agent)?;
    Some(match side {
        Side::Bid => 1e4 * (b - a) / b,
        Side::Ask => 1e4 * (a - b) / b,
    })
}
