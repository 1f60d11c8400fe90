//! A stochastic order flow with latent activity and buy-pressure factors.
//!
//! Arrivals are Poisson with an intensity scaled by a slowly mean-reverting
//! log-activity process, which clusters volatility. Side choice leans on a
//! second mean-reverting factor. Limit prices are geometric offsets from the
//! same-side best quote, aggressive orders take the opposite best, and cancels
//! hit a random level among the top ten.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use super::control::EnsembleTarget;
use super::{FlowError, MarketView, OrderFlowModel, OrderGenerator};
use crate::book::{Order, OrderKind, OrderSource, Price, Side};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticFlowConfig {
    pub rate_per_sec: f64,
    pub cancel_prob: f64,
    pub aggressive_prob: f64,
    /// Success probability of the geometric price offset.
    pub price_decay: f64,
    pub lot: u64,
    pub volume_sigma: f64,
    /// Per-minute autocorrelation of log-activity and its stationary spread.
    pub activity_persistence: f64,
    pub activity_spread: f64,
    pub pressure_persistence: f64,
    pub pressure_spread: f64,
}

impl Default for SyntheticFlowConfig {
    fn default() -> Self {
        Self {
            rate_per_sec: 4.0,
            cancel_prob: 0.3,
            aggressive_prob: 0.12,
            price_decay: 0.35,
            lot: 100,
            volume_sigma: 0.8,
            activity_persistence: 0.95,
            activity_spread: 0.5,
            pressure_persistence: 0.8,
            pressure_spread: 0.6,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct SyntheticFlow {
    pub config: SyntheticFlowConfig,
}

impl SyntheticFlow {
    pub fn new(config: SyntheticFlowConfig) -> Self {
        Self { config }
    }

    /// A ladder of `levels` resting orders per side around `mid`, all at time zero.
    pub fn opening_orders(&self, mid: Price, levels: usize, rng: &mut ChaCha8Rng) -> Vec<Order> {
        let mut out = Vec::with_capacity(2 * levels);
        for i in 1..=levels as i64 {
            let v = self.volume(rng);
            out.push(Order::bid(0, (mid - i).max(1), v));
            let v = self.volume(rng);
            out.push(Order::ask(0, mid + i, v));
        }
        out
    }

    fn volume(&self, rng: &mut ChaCha8Rng) -> u64 {
        let z: f64 = rng.sample(StandardNormal);
        let lots = (2f64.ln() + self.config.volume_sigma * z).exp().round().max(1.0);
        lots as u64 * self.config.lot
    }
}

impl OrderFlowModel for SyntheticFlow {
    fn name(&self) -> &'static str {
        "synthetic"
    }

    fn start(self: Arc<Self>) -> Box<dyn OrderGenerator> {
        Box::new(SyntheticGenerator { flow: self, activity: 0.0, pressure: 0.0 })
    }
}

struct SyntheticGenerator {
    flow: Arc<SyntheticFlow>,
    activity: f64,
    pressure: f64,
}

/// Advances an AR(1) with per-minute coefficient `rho` and stationary sd `spread` by `dt_ms`.
fn ar_step(x: f64, rho: f64, spread: f64, dt_ms: f64, rng: &mut ChaCha8Rng) -> f64 {
    let r = rho.powf(dt_ms / 60_000.0);
    let z: f64 = rng.sample(StandardNormal);
    r * x + spread * (1.0 - r * r).sqrt() * z
}

fn geometric(p: f64, rng: &mut ChaCha8Rng) -> i64 {
    let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    (u.ln() / (1.0 - p).ln()).floor() as i64
}

impl OrderGenerator for SyntheticGenerator {
    fn next_order(
        &mut self,
        view: &MarketView<'_>,
        _target: Option<&EnsembleTarget>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Option<Order>, FlowError> {
        let cfg = &self.flow.config;
        let rate = cfg.rate_per_sec * self.activity.exp() / 1000.0;
        let dt = Exp::new(rate).map_err(|e| FlowError::InvalidParameter(e.to_string()))?.sample(rng);
        self.activity = ar_step(self.activity, cfg.activity_persistence, cfg.activity_spread, dt, rng);
        self.pressure = ar_step(self.pressure, cfg.pressure_persistence, cfg.pressure_spread, dt, rng);
        let interval = dt.round() as u64;

        let book = view.book;
        let buy = rng.random::<f64>() < 0.5 + 0.3 * self.pressure.tanh();
        let side = if buy { Side::Bid } else { Side::Ask };
        let volume = self.flow.volume(rng);
        let mid = view.mid.price_at_offset(0);
        let (best_bid, best_ask) = (book.best_bid(), book.best_ask());

        let u: f64 = rng.random();
        let order = if u < cfg.cancel_prob && !book.is_empty() {
            let snap = book.snapshot();
            let levels = match (side, snap.bids.is_empty(), snap.asks.is_empty()) {
                (Side::Bid, false, _) | (Side::Ask, _, true) => &snap.bids,
                _ => &snap.asks,
            };
            let total: u64 = levels.iter().map(|l| l.volume).sum();
            let mut pick = rng.random_range(0..total);
            let level = *levels
                .iter()
                .find(|l| {
                    let hit = pick < l.volume;
                    pick = pick.saturating_sub(l.volume);
                    hit
                })
                .expect("pick is below the total volume");
            let share: f64 = rng.random();
            let lots = (share * level.volume as f64 / cfg.lot as f64).ceil().max(1.0) as u64;
            Order::new(0, OrderKind::Cancel, level.price, (lots * cfg.lot).min(level.volume))
        } else if u < cfg.cancel_prob + cfg.aggressive_prob * self.activity.exp().min(3.0) {
            let price = match side {
                Side::Bid => best_ask.unwrap_or(mid + 1),
                Side::Ask => best_bid.unwrap_or(mid - 1),
            };
            Order::new(0, side.kind(), price.max(1), volume)
        } else {
            let offset = geometric(cfg.price_decay, rng);
            let price = match side {
                Side::Bid => {
                    let anchor = best_bid.unwrap_or(mid - 1);
                    let cap = best_ask.map_or(Price::MAX, |a| a - 1);
                    (anchor + 1 - offset).min(cap)
                }
                Side::Ask => {
                    let anchor = best_ask.unwrap_or(mid + 1);
                    let floor = best_bid.map_or(1, |b| b + 1);
                    (anchor - 1 + offset).max(floor)
                }
            };
            Order::new(0, side.kind(), price.max(1), volume)
        };
        Ok(Some(order.with_interval(interval).with_source(OrderSource::Generated)))
    }
}
