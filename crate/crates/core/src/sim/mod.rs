//! The session loop.
//!
//! A [`Session`] replays a starting sequence into a fresh book and then
//! repeatedly polls its agents, asks the flow generator for one order
//! conditioned on the post-injection book, and matches it. Each time the
//! simulated clock crosses a minute boundary the realized minute is
//! summarized, candidate batches for the next minute are drawn from the
//! batch model, one is selected against the control signal, and it becomes
//! the ensemble target for the generated flow.
//!
//! Randomness is drawn from per-purpose, per-event generators keyed by
//! `(seed, purpose, counter)`, so two sessions that differ only in their
//! agents consume identical generated randomness event by event.

mod rollout;
mod trajectory;

use std::collections::VecDeque;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agents::{Agent, AgentFill};
use crate::book::{
    BookError, InstrumentId, LimitOrderBook, MatchResult, MatchingRules, MidPrice, Order, OrderId,
    OrderSource, Price,
};
use crate::codec::CodecConfig;
use crate::flow::{
    generate_candidates, select_batch, BatchModel, EnsembleTarget, FlowError, MarketView,
    MinuteSummary, OrderFlowModel, OrderGenerator, TrendTracker,
};
use crate::order_image::batch_to_image;

pub use rollout::{rollout_thread_count, run_rollouts, run_rollouts_serial, SessionSpec};
pub use trajectory::{
    read_minutes_csv, trajectory_correlation, write_minutes_csv, MinuteRecord, MinuteTarget, SimEvent, Trajectory, TrajectoryError,
    TrajectoryManifest,
};

pub const MINUTE_MS: u64 = 60_000;
/// Injected order ids live above this value; agent `i` owns `[(i+1)·2⁴⁰, (i+2)·2⁴⁰)`.
pub const AGENT_ID_SPACE: u64 = 1 << 40;

const STREAM_FLOW: u64 = 1;
const STREAM_PERTURB: u64 = 2;
const STREAM_SELECT: u64 = 3;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Book(#[from] BookError),
    #[error("agent {agent}: {message}")]
    Agent { agent: String, message: String },
    #[error("invalid session config: {0}")]
    Config(String),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub instrument: InstrumentId,
    /// Clock value the starting sequence's intervals accumulate from.
    pub start_ms: u64,
    pub horizon_minutes: u32,
    pub seed: u64,
    pub control: crate::flow::ControlSignal,
    pub rules: MatchingRules,
    pub tick_size: f64,
    /// Price the book falls back to before any quote or trade exists.
    pub reference_price: Price,
    pub codec: CodecConfig,
    /// Candidate batches drawn at each minute boundary.
    pub candidates: usize,
    /// Ensemble reweighting strength.
    pub lambda: f64,
    /// How many minute-close snapshots the trajectory keeps.
    pub snapshot_ring: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            instrument: InstrumentId(0),
            start_ms: 9 * 3_600_000 + 30 * 60_000,
            horizon_minutes: 30,
            seed: 0,
            control: crate::flow::ControlSignal::none(),
            rules: MatchingRules::default(),
            tick_size: 0.01,
            reference_price: 10_000,
            codec: CodecConfig::default(),
            candidates: 16,
            lambda: 1.0,
            snapshot_ring: 64,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.codec.validate().map_err(|e| SimError::Config(e.to_string()))?;
        if self.candidates == 0 {
            return Err(SimError::Config("candidates must be at least 1".into()));
        }
        if !(self.lambda >= 0.0) || !self.tick_size.is_finite() || self.tick_size <= 0.0 {
            return Err(SimError::Config("lambda must be ≥ 0 and tick size positive".into()));
        }
        if self.reference_price < 1 {
            return Err(SimError::Config("reference price must be positive".into()));
        }
        if self.control.returns.iter().any(|r| !r.is_finite()) {
            return Err(SimError::Config("control returns must be finite".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

/// A generator seeded by `(seed, purpose, counter)`; distinct triples give
/// independent ChaCha keys.
pub fn keyed_rng(seed: u64, purpose: u64, counter: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&purpose.to_le_bytes());
    key[16..24].copy_from_slice(&counter.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    /// Number of events appended by this step (injected plus generated).
    Advanced(usize),
    Complete,
}

/// Everything in a session except its agents, so agents can be handed
/// mutable access to the market while the session iterates over them.
pub struct SessionCore {
    config: SessionConfig,
    flow_name: &'static str,
    generator: Box<dyn OrderGenerator>,
    supports_targets: bool,
    batch: Option<Arc<BatchModel>>,
    book: LimitOrderBook,
    clock_ms: u64,
    origin_ms: u64,
    end_ms: u64,
    next_generated_id: OrderId,
    agent_next_ids: Vec<OrderId>,
    events: Vec<SimEvent>,
    starting_events: usize,
    pending_fills: Vec<(usize, AgentFill)>,
    minutes: Vec<MinuteRecord>,
    targets: Vec<MinuteTarget>,
    snapshots: VecDeque<(u32, crate::book::LobSnapshot)>,
    minute: MinuteAccumulator,
    trend: TrendTracker,
    target: Option<EnsembleTarget>,
    generated: u64,
    done: bool,
}

#[derive(Default)]
struct MinuteAccumulator {
    index: u32,
    open_mid: Option<MidPrice>,
    orders: Vec<Order>,
    volume: u64,
    trades: u32,
    injected: u32,
}

/// Mutable market access granted to one agent during a poll.
pub struct MarketAccess<'a> {
    core: &'a mut SessionCore,
    agent: usize,
}

impl MarketAccess<'_> {
    pub fn clock_ms(&self) -> u64 {
        self.core.clock_ms
    }

    /// Start of simulated minute 0.
    pub fn origin_ms(&self) -> u64 {
        self.core.origin_ms
    }

    pub fn end_ms(&self) -> u64 {
        self.core.end_ms
    }

    pub fn book(&self) -> &LimitOrderBook {
        &self.core.book
    }

    pub fn mid(&self) -> Result<MidPrice, SimError> {
        self.core.mid()
    }

    /// Submits an order at the current clock. The id is assigned from the
    /// agent's id range and returned together with the match result.
    pub fn submit(&mut self, order: Order) -> Result<(OrderId, MatchResult), SimError> {
        let id = self.core.agent_next_ids[self.agent];
        self.core.agent_next_ids[self.agent] += 1;
        let order = Order { id, ..order }.with_source(OrderSource::Injected);
        let ts = self.core.clock_ms;
        let result = self.core.apply(order, ts)?;
        Ok((id, result))
    }

    /// Cancels up to `volume` of one of this agent's resting orders.
    pub fn cancel(&mut self, id: OrderId, price: Price, volume: u64) -> Result<MatchResult, SimError> {
        let order = Order::cancel(0, price, volume).with_target(id);
        self.submit(order).map(|(_, r)| r)
    }
}

fn owner_of(id: OrderId) -> Option<usize> {
    (id >= AGENT_ID_SPACE).then(|| (id / AGENT_ID_SPACE - 1) as usize)
}

impl SessionCore {
    fn mid(&self) -> Result<MidPrice, SimError> {
        Ok(self.book.mid_price(Some(self.config.reference_price))?)
    }

    fn apply(&mut self, order: Order, ts: u64) -> Result<MatchResult, SimError> {
        let mid_before = self.mid()?;
        let result = self.book.submit(&order)?;
        for t in &result.trades {
            for (id, taker) in [(t.maker, false), (t.taker, true)] {
                if let Some(agent) = owner_of(id) {
                    let side = if taker { t.aggressor } else { t.aggressor.opposite() };
                    self.pending_fills.push((
                        agent,
                        AgentFill { timestamp_ms: ts, order_id: id, side, maker: !taker, price: t.price, volume: t.volume },
                    ));
                }
            }
        }
        let seq = self.events.len() as u64;
        if ts >= self.origin_ms && seq >= self.starting_events as u64 {
            let m = &mut self.minute;
            m.volume += result.traded_volume();
            m.trades += result.trades.len() as u32;
            if order.source == OrderSource::Injected {
                m.injected += 1;
            }
            m.orders.push(order.clone());
        }
        self.generator.observe(&order, mid_before);
        self.events.push(SimEvent { seq, timestamp_ms: ts, order, trades: result.trades.clone() });
        self.trend.push(ts, self.mid()?);
        Ok(result)
    }

    fn minute_start(&self, minute: u32) -> u64 {
        self.origin_ms + minute as u64 * MINUTE_MS
    }

    /// Closes every minute that ends at or before `t`, up to the horizon.
    fn close_minutes_until(&mut self, t: u64) -> Result<(), SimError> {
        while (self.minute.index as u64) < self.config.horizon_minutes as u64 && t >= self.minute_start(self.minute.index + 1) {
            self.close_minute()?;
        }
        Ok(())
    }

    fn close_minute(&mut self) -> Result<(), SimError> {
        let close = self.mid()?;
        let acc = std::mem::take(&mut self.minute);
        let open = acc.open_mid.unwrap_or(close);
        let snapshot = self.book.snapshot();
        let image = batch_to_image(&acc.orders, open, acc.index, &self.config.codec);
        self.minutes.push(MinuteRecord {
            minute: acc.index,
            start_ms: self.minute_start(acc.index),
            open_mid: open,
            close_mid: close,
            volume: acc.volume,
            trades: acc.trades,
            events: acc.orders.len() as u32,
            injected: acc.injected,
            spread: snapshot.spread(),
        });
        if self.config.snapshot_ring > 0 {
            if self.snapshots.len() == self.config.snapshot_ring {
                self.snapshots.pop_front();
            }
            self.snapshots.push_back((acc.index, snapshot));
        }
        let next = acc.index + 1;
        self.minute = MinuteAccumulator { index: next, open_mid: Some(close), ..Default::default() };
        if next < self.config.horizon_minutes {
            let ret = (close.ticks() / open.ticks()).ln();
            self.on_minute_boundary(MinuteSummary::of(&image, ret), next)?;
        }
        Ok(())
    }

    /// Draws candidates for `minute`, selects one against the control signal
    /// and installs it as the ensemble target.
    fn on_minute_boundary(&mut self, summary: MinuteSummary, minute: u32) -> Result<(), SimError> {
        let Some(batch) = self.batch.clone() else { return Ok(()) };
        let ref_mid = self.mid()?;
        let mut perturb = keyed_rng(self.config.seed, STREAM_PERTURB, minute as u64);
        let mut select = keyed_rng(self.config.seed, STREAM_SELECT, minute as u64);
        let candidates = generate_candidates(&batch, &summary, self.config.candidates, ref_mid, minute, &mut perturb)?;
        let idx = select_batch(&candidates, |c| batch.implied_return(c), &self.config.control, minute as usize, &mut select)?;
        self.targets.push(MinuteTarget {
            minute,
            key: summary.key(),
            implied_returns: candidates.iter().map(|c| batch.implied_return(c)).collect(),
            selected: idx,
            target_return: self.config.control.target_for(minute as usize),
        });
        let image = candidates.into_iter().nth(idx).expect("index in range");
        self.target = self.supports_targets.then(|| EnsembleTarget::new(image, self.config.lambda));
        Ok(())
    }

    fn finish(&mut self) -> Result<(), SimError> {
        self.close_minutes_until(self.end_ms)?;
        self.clock_ms = self.clock_ms.max(self.end_ms);
        self.done = true;
        Ok(())
    }
}

pub struct Session {
    core: SessionCore,
    agents: Vec<Box<dyn Agent>>,
}

impl Session {
    /// Replays `starting` into a fresh book; simulated minute 0 begins at the
    /// timestamp of the last starting order (or `start_ms` without one).
    pub fn new(
        config: SessionConfig,
        flow: Arc<dyn OrderFlowModel>,
        batch: Option<Arc<BatchModel>>,
        starting: &[Order],
        agents: Vec<Box<dyn Agent>>,
    ) -> Result<Self, SimError> {
        config.validate()?;
        let flow_name = flow.name();
        let supports_targets = flow.supports_targets();
        let mut core = SessionCore {
            generator: flow.start(),
            flow_name,
            supports_targets,
            batch,
            book: LimitOrderBook::with_rules(config.rules.clone()),
            clock_ms: config.start_ms,
            origin_ms: config.start_ms,
            end_ms: config.start_ms,
            next_generated_id: starting.iter().map(|o| o.id).filter(|&id| id < AGENT_ID_SPACE).max().unwrap_or(0) + 1,
            agent_next_ids: (0..agents.len() as u64).map(|i| (i + 1) * AGENT_ID_SPACE).collect(),
            events: Vec::with_capacity(starting.len()),
            starting_events: starting.len(),
            pending_fills: Vec::new(),
            minutes: Vec::new(),
            targets: Vec::new(),
            snapshots: VecDeque::new(),
            minute: MinuteAccumulator::default(),
            trend: TrendTracker::new(MINUTE_MS),
            target: None,
            generated: 0,
            done: false,
            config,
        };
        for o in starting {
            let ts = core.clock_ms + o.interval_ms;
            core.clock_ms = ts;
            core.origin_ms = ts;
            core.apply(o.clone(), ts)?;
        }
        core.end_ms = core.origin_ms + core.config.horizon_minutes as u64 * MINUTE_MS;
        core.minute.open_mid = Some(core.mid()?);
        if core.config.horizon_minutes == 0 {
            core.done = true;
        } else {
            let image = batch_to_image(starting, core.mid()?, 0, &core.config.codec);
            core.on_minute_boundary(MinuteSummary::of(&image, 0.0), 0)?;
        }
        Ok(Self { core, agents })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.core.config
    }

    pub fn book(&self) -> &LimitOrderBook {
        &self.core.book
    }

    pub fn clock_ms(&self) -> u64 {
        self.core.clock_ms
    }

    pub fn events(&self) -> &[SimEvent] {
        &self.core.events
    }

    pub fn minutes(&self) -> &[MinuteRecord] {
        &self.core.minutes
    }

    pub fn is_complete(&self) -> bool {
        self.core.done
    }

    /// The ensemble target currently steering generated orders.
    pub fn target(&self) -> Option<&EnsembleTarget> {
        self.core.target.as_ref()
    }

    fn poll_agents(&mut self) -> Result<(), SimError> {
        for i in 0..self.agents.len() {
            let mut access = MarketAccess { core: &mut self.core, agent: i };
            self.agents[i].on_step(&mut access).map_err(|e| wrap_agent(&*self.agents[i], e))?;
            self.dispatch_fills();
        }
        Ok(())
    }

    fn dispatch_fills(&mut self) {
        for (agent, fill) in self.core.pending_fills.drain(..) {
            if let Some(a) = self.agents.get_mut(agent) {
                a.on_fill(&fill);
            }
        }
    }

    /// One loop iteration: poll agents, then generate and match one order.
    pub fn step(&mut self) -> Result<StepOutcome, SimError> {
        if self.core.done {
            return Ok(StepOutcome::Complete);
        }
        let before = self.core.events.len();
        self.poll_agents()?;

        let core = &mut self.core;
        let mid = core.mid()?;
        let view = MarketView {
            book: &core.book,
            clock_ms: core.clock_ms,
            mid,
            reference: core.config.reference_price,
            trend: core.trend.trend(),
        };
        let mut rng = keyed_rng(core.config.seed, STREAM_FLOW, core.generated);
        core.generated += 1;
        let next = core.generator.next_order(&view, core.target.as_ref(), &mut rng)?;
        let Some(mut order) = next else {
            self.finish()?;
            return Ok(StepOutcome::Complete);
        };
        let t = core.clock_ms + order.interval_ms;
        if t >= core.end_ms {
            self.finish()?;
            return Ok(StepOutcome::Complete);
        }
        core.close_minutes_until(t)?;
        if order.source != OrderSource::Replay {
            order.id = core.next_generated_id;
            core.next_generated_id += 1;
        }
        order.instrument = core.config.instrument;
        core.clock_ms = t;
        core.apply(order, t)?;
        self.dispatch_fills();
        Ok(StepOutcome::Advanced(self.core.events.len() - before))
    }

    fn finish(&mut self) -> Result<(), SimError> {
        // Agents clean up inside the last minute, after the earlier ones have closed.
        self.core.close_minutes_until(self.core.end_ms.saturating_sub(1))?;
        self.core.clock_ms = self.core.clock_ms.max(self.core.end_ms);
        for i in 0..self.agents.len() {
            let mut access = MarketAccess { core: &mut self.core, agent: i };
            self.agents[i].on_finish(&mut access).map_err(|e| wrap_agent(&*self.agents[i], e))?;
            self.dispatch_fills();
        }
        self.core.finish()
    }

    pub fn run(mut self) -> Result<Trajectory, SimError> {
        while self.step()? != StepOutcome::Complete {}
        Ok(self.into_trajectory())
    }

    pub fn into_trajectory(self) -> Trajectory {
        let core = self.core;
        Trajectory {
            manifest: TrajectoryManifest {
                seed: core.config.seed,
                config_hash: core.config.hash(),
                flow: core.flow_name.to_string(),
                final_book_hash: core.book.state_hash(),
                origin_ms: core.origin_ms,
                horizon_minutes: core.config.horizon_minutes,
                starting_events: core.starting_events,
                events: core.events.len(),
            },
            events: core.events,
            minutes: core.minutes,
            targets: core.targets,
            snapshots: core.snapshots.into_iter().collect(),
            agents: self.agents.iter().map(|a| a.report()).collect(),
        }
    }
}

fn wrap_agent(agent: &dyn Agent, e: SimError) -> SimError {
    match e {
        SimError::Agent { .. } => e,
        other => SimError::Agent { agent: agent.name().to_string(), message: other.to_string() },
    }
}

