//! Shared fixtures for the integration tests: an O(n) reference matcher, a
//! random order-stream generator, and synthetic return processes with known
//! statistical properties.

#![allow(dead_code)]

use std::collections::VecDeque;
use std::sync::Arc;

use mars_core::agents::{Agent, AgentReport};
use mars_core::book::{
    orders_from_records, read_csv_log, write_csv_log, BookError, LimitOrderBook, LogRecord, MatchResult, MatchWarning,
    MidPrice, Order, OrderId, OrderKind, Price, Side, Trade,
};
use chrono::{NaiveDate, NaiveTime};
use mars_core::flow::{ReplayFlow, SyntheticFlow, SyntheticFlowConfig};
use mars_core::io::{MinuteReturnMatrix, TradingSessions};
use mars_core::sim::{MarketAccess, SessionConfig, SessionSpec, SimError, Trajectory, MINUTE_MS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

#[derive(Clone, Debug)]
struct NaiveOrder {
    id: OrderId,
    side: Side,
    price: Price,
    remaining: u64,
}

/// Every resting order in one vector, kept in arrival order. Matching scans
/// the whole vector for the best contra order each time.
#[derive(Clone, Debug, Default)]
pub struct NaiveBook {
    resting: Vec<NaiveOrder>,
    seq: u64,
}

impl NaiveBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn submit(&mut self, order: &Order) -> Result<MatchResult, BookError> {
        match order.kind {
            OrderKind::Bid | OrderKind::Ask => self.limit(order),
            OrderKind::Cancel => self.cancel(order),
        }
    }

    fn best_contra(&self, side: Side, limit: Price) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, o) in self.resting.iter().enumerate() {
            if o.side == side {
                continue;
            }
            let crosses = match side {
                Side::Bid => o.price <= limit,
                Side::Ask => o.price >= limit,
            };
            if !crosses {
                continue;
            }
            // Strictly better price wins; equal price keeps the earlier arrival.
            let better = match best {
                None => true,
                Some(b) => match side {
                    Side::Bid => o.price < self.resting[b].price,
                    Side::Ask => o.price > self.resting[b].price,
                },
            };
            if better {
                best = Some(i);
            }
        }
        best
    }

    fn limit(&mut self, order: &Order) -> Result<MatchResult, BookError> {
        let side = if order.kind == OrderKind::Bid { Side::Bid } else { Side::Ask };
        if order.volume == 0 {
            return Err(BookError::InvalidVolume { id: order.id });
        }
        if order.price < 1 {
            return Err(BookError::InvalidPrice { id: order.id, price: order.price });
        }
        self.seq += 1;
        let mut remaining = order.volume;
        let mut trades = Vec::new();
        while remaining > 0 {
            let Some(i) = self.best_contra(side, order.price) else { break };
            let maker = &mut self.resting[i];
            let fill = remaining.min(maker.remaining);
            maker.remaining -= fill;
            remaining -= fill;
            trades.push(Trade { price: maker.price, volume: fill, aggressor: side, maker: maker.id, taker: order.id, seq: self.seq });
            if maker.remaining == 0 {
                self.resting.remove(i);
            }
        }
        if remaining > 0 {
            self.resting.push(NaiveOrder { id: order.id, side, price: order.price, remaining });
        }
        Ok(MatchResult { trades, accepted: true, resting: remaining, cancelled: 0, warnings: Vec::new() })
    }

    fn cancel(&mut self, order: &Order) -> Result<MatchResult, BookError> {
        if order.volume == 0 {
            return Err(BookError::InvalidVolume { id: order.id });
        }
        self.seq += 1;
        let (side, price) = match order.target {
            Some(target) => match self.resting.iter().find(|o| o.id == target) {
                Some(o) => (o.side, o.price),
                None => {
                    return Ok(MatchResult {
                        accepted: false,
                        warnings: vec![MatchWarning::UnknownTarget { target }],
                        ..MatchResult::default()
                    })
                }
            },
            None => {
                let at = |s: Side| self.resting.iter().any(|o| o.side == s && o.price == order.price);
                let side = if at(Side::Bid) {
                    Side::Bid
                } else if at(Side::Ask) {
                    Side::Ask
                } else {
                    return Ok(MatchResult {
                        accepted: false,
                        warnings: vec![MatchWarning::NothingToCancel { price: order.price }],
                        ..MatchResult::default()
                    });
                };
                (side, order.price)
            }
        };
        let mut left = order.volume;
        let mut i = 0;
        while left > 0 && i < self.resting.len() {
            let o = &mut self.resting[i];
            let eligible = match order.target {
                Some(t) => o.id == t,
                None => o.side == side && o.price == price,
            };
            if !eligible {
                i += 1;
                continue;
            }
            let take = left.min(o.remaining);
            o.remaining -= take;
            left -= take;
            if o.remaining == 0 {
                self.resting.remove(i);
            } else {
                i += 1;
            }
            if order.target.is_some() {
                break;
            }
        }
        let removed = order.volume - left;
        let mut warnings = Vec::new();
        if left > 0 {
            warnings.push(MatchWarning::PartialCancel { price, requested: order.volume, removed });
        }
        Ok(MatchResult { accepted: true, cancelled: removed, warnings, ..MatchResult::default() })
    }

    pub fn volume(&self, side: Side, price: Price) -> u64 {
        self.resting.iter().filter(|o| o.side == side && o.price == price).map(|o| o.remaining).sum()
    }

    pub fn best(&self, side: Side) -> Option<Price> {
        let prices = self.resting.iter().filter(|o| o.side == side).map(|o| o.price);
        match side {
            Side::Bid => prices.max(),
            Side::Ask => prices.min(),
        }
    }

    pub fn resting_count(&self) -> usize {
        self.resting.len()
    }
}

/// A random stream of limit orders, targeted and price-level cancels, and an
/// occasional invalid order. The generator withdraws its oldest limit orders
/// once more than `max_live` are outstanding, which keeps the book small.
pub fn random_stream(seed: u64, len: usize, max_live: usize) -> Vec<Order> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut live: VecDeque<(OrderId, u64)> = VecDeque::new();
    let mut out = Vec::with_capacity(len);
    let center: Price = 1000;
    for n in 0..len as u64 {
        let id = n + 1;
        let roll: f64 = rng.random();
        let order = if live.len() > max_live {
            let (target, volume) = live.pop_front().expect("non-empty");
            let extra = if rng.random_bool(0.2) { rng.random_range(1..50) } else { 0 };
            Order::cancel(id, 0, volume + extra).with_target(target)
        } else if roll < 0.55 {
            let price = center + rng.random_range(-12..=12);
            let volume = rng.random_range(1..=400);
            live.push_back((id, volume));
            if rng.random_bool(0.5) {
                Order::bid(id, price, volume)
            } else {
                Order::ask(id, price, volume)
            }
        } else if roll < 0.75 && !live.is_empty() {
            let k = rng.random_range(0..live.len());
            let (target, volume) = live[k];
            let cut = rng.random_range(1..=volume + 20);
            if cut >= volume {
                live.remove(k);
            }
            Order::cancel(id, 0, cut).with_target(target)
        } else if roll < 0.995 {
            Order::cancel(id, center + rng.random_range(-12..=12), rng.random_range(1..=300))
        } else if rng.random_bool(0.5) {
            Order::bid(id, center, 0)
        } else {
            Order::ask(id, 0, 10)
        };
        out.push(order.with_interval(rng.random_range(0..2000)));
    }
    out
}

pub fn iid_normal(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// x_t = φ·x_{t−1} + ε_t with a burn-in, so the lag-1 autocorrelation is φ.
pub fn ar1(n: usize, phi: f64, seed: u64) -> Vec<f64> {
    let eps = iid_normal(n + 500, seed);
    let mut x = 0.0;
    let mut out = Vec::with_capacity(n);
    for (t, e) in eps.into_iter().enumerate() {
        x = phi * x + e;
        if t >= 500 {
            out.push(x);
        }
    }
    out
}

/// GARCH(1,1): σ²_t = ω + α·r²_{t−1} + β·σ²_{t−1}, r_t = σ_t·z_t.
pub fn garch(n: usize, omega: f64, alpha: f64, beta: f64, seed: u64) -> Vec<f64> {
    let z = iid_normal(n + 1000, seed);
    let mut var = omega / (1.0 - alpha - beta);
    let mut prev: f64 = 0.0;
    let mut out = Vec::with_capacity(n);
    for (t, zt) in z.into_iter().enumerate() {
        var = omega + alpha * prev * prev + beta * var;
        prev = var.sqrt() * zt;
        if t >= 1000 {
            out.push(prev);
        }
    }
    out
}

/// Small Gaussian noise with extreme spikes whose arrivals are Poisson at
/// `rate` per step, either homogeneous or switched on only inside bursts.
pub fn spike_series(n: usize, rate: f64, bursty: bool, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<f64> = (0..n).map(|_| 0.01 * rng.sample::<f64, _>(StandardNormal)).collect();
    let gap = Exp::new(1.0).expect("unit rate");
    let mut t = 0.0;
    loop {
        t += gap.sample(&mut rng) / rate;
        let i = t as usize;
        if i >= n {
            break;
        }
        // Bursty streams keep only events in every fifth block of 500 steps
        // and add the same number again inside those blocks.
        if bursty && !(i / 500).is_multiple_of(5) {
            continue;
        }
        let copies = if bursty { 5 } else { 1 };
        for _ in 0..copies {
            let j = if copies == 1 { i } else { (i / 500) * 500 + rng.random_range(0..500) };
            out[j] = if rng.random_bool(0.5) { 10.0 } else { -10.0 };
        }
    }
    out
}

/// Standard Student-t with `dof` degrees of freedom.
pub fn student_t(n: usize, dof: f64, seed: u64) -> Vec<f64> {
    let dist = rand_distr::StudentT::new(dof).expect("positive dof");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| dist.sample(&mut rng)).collect()
}

pub const OPEN_PRICE: Price = 10_000;

/// A ten-level ladder per side around the open price with ids 1..=20.
pub fn opening_ladder(seed: u64) -> Vec<Order> {
    let flow = SyntheticFlow::new(SyntheticFlowConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ladder = flow.opening_orders(OPEN_PRICE, 10, &mut rng);
    for (i, o) in ladder.iter_mut().enumerate() {
        o.id = i as u64 + 1;
    }
    ladder
}

pub fn synthetic_spec(minutes: u32) -> SessionSpec {
    let config = SessionConfig { horizon_minutes: minutes, reference_price: OPEN_PRICE, ..SessionConfig::default() };
    SessionSpec::new(config, Arc::new(SyntheticFlow::default())).with_starting(opening_ladder(7))
}

/// A recorded order log: the starting ladder plus everything a synthetic
/// session generated, passed through the CSV log format.
pub struct HistoricalLog {
    pub start_ms: u64,
    pub starting: Vec<Order>,
    pub flow: Vec<Order>,
}

pub fn historical_log(seed: u64, minutes: u32) -> HistoricalLog {
    let spec = synthetic_spec(minutes);
    let traj = spec.run(seed).expect("synthetic session runs");
    let start_ms = spec.config.start_ms;
    let mut ts = start_ms;
    let records: Vec<LogRecord> = traj
        .events
        .iter()
        .map(|e| {
            ts += e.order.interval_ms;
            assert_eq!(ts, e.timestamp_ms);
            LogRecord::from_order(&e.order, e.timestamp_ms)
        })
        .collect();
    let mut csv = Vec::new();
    write_csv_log(&mut csv, &records).expect("log writes");
    let orders = orders_from_records(&read_csv_log(csv.as_slice()).expect("log reads"), start_ms);
    let split = traj.manifest.starting_events;
    HistoricalLog { start_ms, starting: orders[..split].to_vec(), flow: orders[split..].to_vec() }
}

pub fn replay_spec(log: &HistoricalLog, minutes: u32) -> SessionSpec {
    let config = SessionConfig {
        horizon_minutes: minutes,
        reference_price: OPEN_PRICE,
        start_ms: log.start_ms,
        ..SessionConfig::default()
    };
    SessionSpec::new(config, Arc::new(ReplayFlow::new(log.flow.clone()))).with_starting(log.starting.clone())
}

/// What feeding a log straight into a book gives per minute: the closing
/// mid, the traded volume, and the trades of every order in log order.
pub struct DirectFeed {
    pub close_mids: Vec<MidPrice>,
    pub volumes: Vec<u64>,
    pub trades: Vec<Vec<Trade>>,
}

pub fn feed_directly(log: &HistoricalLog, minutes: u32) -> DirectFeed {
    let mut book = LimitOrderBook::new();
    let mut trades = Vec::new();
    let mut ts = log.start_ms;
    for o in &log.starting {
        ts += o.interval_ms;
        trades.push(book.submit(o).expect("valid log").trades);
    }
    let origin = ts;
    let end = origin + minutes as u64 * MINUTE_MS;
    let mid = |b: &LimitOrderBook| b.mid_price(Some(OPEN_PRICE)).expect("reference given");
    let mut close_mids = Vec::new();
    let mut volumes = vec![0u64; minutes as usize];
    for o in &log.flow {
        ts += o.interval_ms;
        if ts >= end {
            break;
        }
        while origin + (close_mids.len() as u64 + 1) * MINUTE_MS <= ts {
            close_mids.push(mid(&book));
        }
        let r = book.submit(o).expect("valid log");
        volumes[((ts - origin) / MINUTE_MS) as usize] += r.traded_volume();
        trades.push(r.trades);
    }
    while close_mids.len() < minutes as usize {
        close_mids.push(mid(&book));
    }
    DirectFeed { close_mids, volumes, trades }
}

/// Never trades; used to check that attaching an agent alone changes nothing.
pub struct InertAgent;

impl Agent for InertAgent {
    fn name(&self) -> &str {
        "inert"
    }

    fn on_step(&mut self, _market: &mut MarketAccess<'_>) -> Result<(), SimError> {
        Ok(())
    }

    fn report(&self) -> AgentReport {
        AgentReport { name: "inert".into(), ..AgentReport::default() }
    }
}

pub fn trajectory_files(traj: &Trajectory, dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    traj.write_dir(dir).expect("trajectory writes");
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .expect("dir lists")
        .map(|e| {
            let e = e.expect("entry");
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).expect("file reads"))
        })
        .collect();
    files.sort();
    files
}

/// A quiet hand-built log: a 10-level ladder of 200 lots per level around
/// `OPEN_PRICE`, then one far-away 1-lot bid per second that never trades.
/// A buyer lifting asks here can only push the mid up.
pub fn quiet_log(minutes: u32) -> HistoricalLog {
    let mut starting = Vec::new();
    for k in 1..=10 {
        starting.push(Order::ask(2 * k - 1, OPEN_PRICE + k as i64, 200));
        starting.push(Order::bid(2 * k, OPEN_PRICE - k as i64, 200));
    }
    let flow = (0..minutes as u64 * 60)
        .map(|i| Order::bid(100 + i, OPEN_PRICE - 500, 1).with_interval(1000))
        .collect();
    HistoricalLog { start_ms: 0, starting, flow }
}

pub const SCENARIO_INSTRUMENTS: [&str; 4] = ["600000", "600036", "601318", "601398"];
pub const SCENARIO_DATES: [&str; 3] = ["2023-03-01", "2023-03-02", "2023-03-03"];

/// Three full trading days of small alternating noise for four instruments,
/// with 25-minute drops of −0.06 planted at (date, instrument, start):
/// two on day 0, one on day 1, two on day 2. Day 1 also carries a −0.06 drop
/// split across the lunch break on the instrument that wins day 2.
pub fn planted_scenario_matrix() -> MinuteReturnMatrix {
    let sessions = TradingSessions::default();
    let t = |h, m| NaiveTime::from_hms_opt(h, m, 0).unwrap();
    let dates: Vec<NaiveDate> = SCENARIO_DATES.iter().map(|d| NaiveDate::parse_from_str(d, "%Y-%m-%d").unwrap()).collect();
    let mut rows = Vec::new();
    for &d in &dates {
        for &(a, b) in &sessions.sessions {
            let mut m = a;
            while m <= b {
                rows.push((d, m));
                m += chrono::Duration::minutes(1);
            }
        }
    }
    let mut values: Vec<Vec<f64>> =
        (0..rows.len()).map(|r| (0..4).map(|c| if (r + c) % 2 == 0 { 1e-4 } else { -1e-4 }).collect()).collect();
    let mut plant = |day: usize, col: usize, from: NaiveTime, minutes: usize| {
        let start = rows.iter().position(|&(d, m)| d == dates[day] && m == from).unwrap();
        for row in &mut values[start..start + minutes] {
            row[col] = -0.0024;
        }
    };
    plant(0, 0, t(9, 40), 25);
    plant(0, 1, t(10, 30), 25);
    plant(1, 2, t(13, 10), 25);
    plant(2, 0, t(9, 50), 25);
    plant(2, 3, t(14, 0), 25);
    // Twelve minutes before the break and thirteen after.
    plant(1, 3, t(11, 19), 12);
    plant(1, 3, t(13, 1), 13);
    MinuteReturnMatrix { instruments: SCENARIO_INSTRUMENTS.iter().map(|s| s.to_string()).collect(), rows, values }
}
