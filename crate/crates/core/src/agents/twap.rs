//! Interval-split execution with a passive and an aggressive phase.
//!
//! The target volume is split into equal parts, one per interval, with the
//! remainder on the last. At the start of each interval the agent cancels
//! resting volume away from the same-side best quote and tops up a passive
//! order there so that its resting volume reaches `min(V − executed, PVR·V)`.
//! Near the end of the interval, if the cumulative executed volume trails the
//! schedule, it sends the shortfall as a limit order at the AP-th level of the
//! opposite side, first cancelling passive volume if the shortfall would
//! otherwise push outstanding plus executed volume above V.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::policy::{Decision, ExecState, Policy, Stage, ACTIONS};
use super::{Agent, AgentFill, AgentReport};
use crate::book::{Order, OrderId, Price, Side};
use crate::sim::{MarketAccess, SimError};

pub const PARTS: u64 = 10;

#[derive(Debug, Error, PartialEq)]
pub enum TwapError {
    #[error("PVR {0} is not a multiple of 0.1 in [0, 1]")]
    Pvr(f64),
    #[error("AP {0} outside 0..=5")]
    Ap(u8),
    #[error("phase timings must satisfy 0 < passive < interval and duration = {PARTS} × interval")]
    Timing,
    #[error("target volume must be positive")]
    Volume,
}

/// A (PVR, AP) pair; PVR is held in tenths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TwapAction {
    pub pvr_tenths: u8,
    pub ap: u8,
}

impl TwapAction {
    pub fn from_index(index: usize) -> Self {
        assert!(index < ACTIONS, "action index {index} out of range");
        Self { pvr_tenths: (index / 6) as u8, ap: (index % 6) as u8 }
    }

    pub fn index(self) -> usize {
        self.pvr_tenths as usize * 6 + self.ap as usize
    }

    pub fn pvr(self) -> f64 {
        self.pvr_tenths as f64 / 10.0
    }

    /// Label such as `L1-P0.9`.
    pub fn label(self) -> String {
        format!("L{}-P{:.1}", self.ap, self.pvr())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwapConfig {
    pub side: Side,
    pub total_volume: u64,
    /// Delay after the session's minute 0 before the first interval.
    pub start_delay_ms: u64,
    pub duration_ms: u64,
    pub interval_ms: u64,
    pub passive_ms: u64,
    pub pvr: f64,
    pub ap: u8,
}

impl Default for TwapConfig {
    fn default() -> Self {
        Self {
            side: Side::Bid,
            total_volume: 1000,
            start_delay_ms: 0,
            duration_ms: 300_000,
            interval_ms: 30_000,
            passive_ms: 25_000,
            pvr: 0.9,
            ap: 1,
        }
    }
}

impl TwapConfig {
    pub fn validate(&self) -> Result<TwapAction, TwapError> {
        let tenths = (self.pvr * 10.0).round();
        if !(0.0..=10.0).contains(&tenths) || (self.pvr * 10.0 - tenths).abs() > 1e-9 {
            return Err(TwapError::Pvr(self.pvr));
        }
        if self.ap > 5 {
            return Err(TwapError::Ap(self.ap));
        }
        if self.passive_ms == 0 || self.passive_ms >= self.interval_ms || self.duration_ms != PARTS * self.interval_ms {
            return Err(TwapError::Timing);
        }
        if self.total_volume == 0 {
            return Err(TwapError::Volume);
        }
        Ok(TwapAction { pvr_tenths: tenths as u8, ap: self.ap })
    }

    /// Per-interval volume K; the last interval also carries the remainder.
    pub fn part(&self) -> u64 {
        self.total_volume / PARTS
    }

    /// Cumulative volume due by the end of interval `i` (0-based).
    pub fn due_by(&self, i: u64) -> u64 {
        if i + 1 >= PARTS {
            self.total_volume
        } else {
            (i + 1) * self.part()
        }
    }
}

/// Where the per-interval (PVR, AP) comes from.
#[derive(Clone, Debug)]
pub enum ActionSource {
    Fixed(TwapAction),
    Policy { policy: Arc<Policy>, rng: Box<ChaCha8Rng>, greedy: bool },
}

#[derive(Clone, Copy, Debug)]
struct Resting {
    id: OrderId,
    price: Price,
    remaining: u64,
}

pub struct TwapAgent {
    name: String,
    cfg: TwapConfig,
    source: ActionSource,
    action: TwapAction,
    next_phase: u64,
    executed: u64,
    submitted: u64,
    cancelled: u64,
    passive_orders: u32,
    aggressive_orders: u32,
    resting: Vec<Resting>,
    fills: Vec<AgentFill>,
    decisions: Vec<Decision>,
    done: bool,
}

impl TwapAgent {
    pub fn new(cfg: TwapConfig) -> Result<Self, TwapError> {
        let action = cfg.validate()?;
        Ok(Self::with_source(cfg, ActionSource::Fixed(action), action.label()))
    }

    /// An agent whose (PVR, AP) is chosen by `policy` at each interval start.
    pub fn with_policy(cfg: TwapConfig, policy: Arc<Policy>, rng: ChaCha8Rng, greedy: bool) -> Result<Self, TwapError> {
        let action = cfg.validate()?;
        Ok(Self::with_source(cfg, ActionSource::Policy { policy, rng: Box::new(rng), greedy }, "policy".to_string()).with_action(action))
    }

    fn with_source(cfg: TwapConfig, source: ActionSource, name: String) -> Self {
        let action = match &source {
            ActionSource::Fixed(a) => *a,
            ActionSource::Policy { .. } => TwapAction { pvr_tenths: 0, ap: 0 },
        };
        Self {
            name,
            cfg,
            source,
            action,
            next_phase: 0,
            executed: 0,
            submitted: 0,
            cancelled: 0,
            passive_orders: 0,
            aggressive_orders: 0,
            resting: Vec::new(),
            fills: Vec::new(),
            decisions: Vec::new(),
            done: false,
        }
    }

    fn with_action(mut self, action: TwapAction) -> Self {
        self.action = action;
        self
    }

    pub fn executed(&self) -> u64 {
        self.executed
    }

    fn outstanding(&self) -> u64 {
        self.resting.iter().map(|r| r.remaining).sum()
    }

    fn phase_time(&self, origin: u64, phase: u64) -> u64 {
        let start = origin + self.cfg.start_delay_ms + (phase / 2) * self.cfg.interval_ms;
        if phase.is_multiple_of(2) { start } else { start + self.cfg.passive_ms }
    }

    fn state(&self, market: &MarketAccess<'_>, stage: Stage) -> ExecState {
        let start = market.origin_ms() + self.cfg.start_delay_ms;
        let elapsed = market.clock_ms().saturating_sub(start) as f64;
        let snap = market.book().snapshot();
        ExecState {
            remaining_time: 1.0 - elapsed / self.cfg.duration_ms as f64,
            remaining_volume: 1.0 - self.executed as f64 / self.cfg.total_volume as f64,
            imbalance: snap.imbalance().unwrap_or(0.0),
            stage,
        }
    }

    fn choose_action(&mut self, market: &MarketAccess<'_>) {
        let state = self.state(market, Stage::Passive);
        if let ActionSource::Policy { policy, rng, greedy } = &mut self.source {
            let x = state.features();
            let a = if *greedy { policy.greedy(&x) } else { policy.sample(&x, rng) };
            self.action = TwapAction::from_index(a);
            self.decisions.push(Decision { timestamp_ms: market.clock_ms(), features: x, action: a });
        }
    }

    fn submit(&mut self, market: &mut MarketAccess<'_>, price: Price, volume: u64) -> Result<(), SimError> {
        let (id, result) = market.submit(Order::new(0, self.cfg.side.kind(), price, volume))?;
        self.submitted += volume;
        self.executed += result.traded_volume();
        if result.resting > 0 {
            self.resting.push(Resting { id, price, remaining: result.resting });
        }
        Ok(())
    }

    /// Cancels up to `volume` from resting order `idx`.
    fn cancel_at(&mut self, market: &mut MarketAccess<'_>, idx: usize, volume: u64) -> Result<(), SimError> {
        let r = self.resting[idx];
        let result = market.cancel(r.id, r.price, volume.min(r.remaining))?;
        self.cancelled += result.cancelled;
        self.resting[idx].remaining -= result.cancelled.min(r.remaining);
        Ok(())
    }

    fn cancel_all(&mut self, market: &mut MarketAccess<'_>) -> Result<(), SimError> {
        for i in 0..self.resting.len() {
            let v = self.resting[i].remaining;
            self.cancel_at(market, i, v)?;
        }
        self.resting.retain(|r| r.remaining > 0);
        Ok(())
    }

    fn passive_phase(&mut self, market: &mut MarketAccess<'_>) -> Result<(), SimError> {
        self.choose_action(market);
        let book = market.book();
        let (own_best, other_best) = match self.cfg.side {
            Side::Bid => (book.best_bid(), book.best_ask()),
            Side::Ask => (book.best_ask(), book.best_bid()),
        };
        let Some(price) = own_best.or_else(|| {
            other_best.map(|p| match self.cfg.side {
                Side::Bid => p - 1,
                Side::Ask => p + 1,
            })
        }) else {
            return Ok(());
        };
        for i in 0..self.resting.len() {
            if self.resting[i].price != price {
                let v = self.resting[i].remaining;
                self.cancel_at(market, i, v)?;
            }
        }
        self.resting.retain(|r| r.remaining > 0);
        let cap = (self.cfg.total_volume - self.executed.min(self.cfg.total_volume))
            .min((self.action.pvr() * self.cfg.total_volume as f64).round() as u64);
        let at_price: u64 = self.resting.iter().filter(|r| r.price == price).map(|r| r.remaining).sum();
        let room = self.cfg.total_volume.saturating_sub(self.executed + self.outstanding());
        let add = cap.saturating_sub(at_price).min(room);
        if add > 0 && price >= 1 {
            self.passive_orders += 1;
            self.submit(market, price, add)?;
        }
        Ok(())
    }

    fn aggressive_phase(&mut self, market: &mut MarketAccess<'_>, interval: u64) -> Result<(), SimError> {
        let shortfall = self.cfg.due_by(interval).saturating_sub(self.executed);
        if shortfall == 0 || self.action.ap == 0 {
            return Ok(());
        }
        let snap = market.book().snapshot();
        let levels = match self.cfg.side {
            Side::Bid => &snap.asks,
            Side::Ask => &snap.bids,
        };
        let Some(level) = levels.get(self.action.ap as usize - 1).or(levels.last()) else {
            return Ok(());
        };
        let price = level.price;
        let available = self.cfg.total_volume.saturating_sub(self.executed + self.outstanding());
        if shortfall > available {
            let mut need = shortfall - available;
            for i in (0..self.resting.len()).rev() {
                if need == 0 {
                    break;
                }
                let take = need.min(self.resting[i].remaining);
                self.cancel_at(market, i, take)?;
                need = need.saturating_sub(take);
            }
            self.resting.retain(|r| r.remaining > 0);
        }
        let volume = shortfall.min(self.cfg.total_volume.saturating_sub(self.executed + self.outstanding()));
        if volume > 0 {
            self.aggressive_orders += 1;
            self.submit(market, price, volume)?;
        }
        Ok(())
    }
}

impl Agent for TwapAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn on_step(&mut self, market: &mut MarketAccess<'_>) -> Result<(), SimError> {
        if self.done {
            return Ok(());
        }
        let origin = market.origin_ms();
        while self.next_phase < 2 * PARTS && market.clock_ms() >= self.phase_time(origin, self.next_phase) {
            let phase = self.next_phase;
            self.next_phase += 1;
            if phase.is_multiple_of(2) {
                self.passive_phase(market)?;
            } else {
                self.aggressive_phase(market, phase / 2)?;
            }
        }
        if market.clock_ms() >= origin + self.cfg.start_delay_ms + self.cfg.duration_ms {
            self.cancel_all(market)?;
            self.done = true;
        }
        Ok(())
    }

    fn on_fill(&mut self, fill: &AgentFill) {
        self.fills.push(*fill);
        if fill.maker {
            self.executed += fill.volume;
            if let Some(r) = self.resting.iter_mut().find(|r| r.id == fill.order_id) {
                r.remaining = r.remaining.saturating_sub(fill.volume);
            }
            self.resting.retain(|r| r.remaining > 0);
        }
    }

    fn on_finish(&mut self, market: &mut MarketAccess<'_>) -> Result<(), SimError> {
        if !self.done {
            self.cancel_all(market)?;
            self.done = true;
        }
        Ok(())
    }

    fn report(&self) -> AgentReport {
        AgentReport {
            name: self.name.clone(),
            side: Some(self.cfg.side),
            target_volume: self.cfg.total_volume,
            executed: self.executed,
            submitted: self.submitted,
            cancelled: self.cancelled,
            passive_orders: self.passive_orders,
            aggressive_orders: self.aggressive_orders,
            fills: self.fills.clone(),
            decisions: self.decisions.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_and_labels() {
        let cfg = TwapConfig { total_volume: 1000, ..Default::default() };
        assert_eq!(cfg.part(), 100);
        assert_eq!((0..10).map(|i| cfg.due_by(i)).collect::<Vec<_>>(), (1..=10).map(|i| i * 100).collect::<Vec<_>>());
        let odd = TwapConfig { total_volume: 1005, ..Default::default() };
        assert_eq!(odd.due_by(8), 900);
        assert_eq!(odd.due_by(9), 1005);
        assert_eq!(odd.validate().unwrap().label(), "L1-P0.9");
        for i in 0..ACTIONS {
            assert_eq!(TwapAction::from_index(i).index(), i);
        }
    }

    #[test]
    fn validation() {
        assert_eq!(TwapConfig { pvr: 0.35, ..Default::default() }.validate(), Err(TwapError::Pvr(0.35)));
        assert_eq!(TwapConfig { ap: 6, ..Default::default() }.validate(), Err(TwapError::Ap(6)));
        assert_eq!(TwapConfig { passive_ms: 30_000, ..Default::default() }.validate(), Err(TwapError::Timing));
        assert!(TwapConfig { pvr: 0.3, ap: 0, ..Default::default() }.validate().is_ok());
    }
}
