//! Interpolated n-gram count model over order tokens.
//!
//! Contexts at depth `j` are the coarse book state plus the last `j` tokens,
//! for `j = 0..=k`. The bottom of the backoff chain is the unigram
//! distribution interpolated with a uniform floor, so every token has
//! positive probability before masking. A context with `n` observations and
//! `u` distinct successors keeps `n / (n + u + α)` of the mass on its own
//! empirical distribution and passes the rest down the chain.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::context::{CoarseLobState, TokenContext, TokenEvent};
use super::control::EnsembleTarget;
use super::{FlowError, MarketView, OrderFlowModel, OrderGenerator};
use crate::book::{LimitOrderBook, MidPrice, Order, OrderKind, OrderSource};
use crate::codec::{encode_order, CodecConfig, OrderToken, INTERVAL_BUCKETS, PRICE_BUCKETS, VOCAB_SIZE, VOLUME_BUCKETS};

pub(super) const CELL_COUNT: usize = (VOCAB_SIZE / INTERVAL_BUCKETS) as usize;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountModelConfig {
    /// Number of previous tokens in the deepest context.
    pub order: usize,
    /// Additive backoff strength.
    pub alpha: f64,
}

impl Default for CountModelConfig {
    fn default() -> Self {
        Self { order: 3, alpha: 0.1 }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub(super) struct ContextCounts {
    pub total: u64,
    /// (token index, count), sorted by token.
    pub entries: Vec<(u32, u32)>,
}

#[derive(Clone, Debug)]
pub struct CountModel {
    pub(super) config: CountModelConfig,
    pub(super) contexts: HashMap<u64, ContextCounts>,
    pub(super) unigram: Vec<u32>,
    unigram_total: u64,
    unigram_kappa: f64,
    /// Bottom-level probability mass of each (kind, price, volume) cell.
    bottom_cells: Vec<f64>,
}

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv_mix(mut h: u64, word: u64) -> u64 {
    for b in word.to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Key of the depth-`depth` context: the state and the last `depth` tokens.
pub(super) fn context_key(depth: usize, lob: CoarseLobState, recent: &[OrderToken]) -> u64 {
    let mut h = fnv_mix(FNV_OFFSET, depth as u64);
    h = fnv_mix(h, lob.code() as u64);
    for t in &recent[recent.len() - depth..] {
        h = fnv_mix(h, t.index() as u64);
    }
    h
}

/// Counts every (context, next token) pair in the corpus.
pub fn fit_count_model(corpus: &[Vec<TokenEvent>], config: CountModelConfig) -> Result<CountModel, FlowError> {
    if !(config.alpha > 0.0) {
        return Err(FlowError::InvalidParameter(format!("alpha must be positive, got {}", config.alpha)));
    }
    let mut raw: HashMap<u64, HashMap<u32, u32>> = HashMap::new();
    let mut unigram = vec![0u32; VOCAB_SIZE as usize];
    let mut tokens = Vec::new();
    for stream in corpus {
        tokens.clear();
        tokens.extend(stream.iter().map(|e| e.token));
        for (i, ev) in stream.iter().enumerate() {
            let t = ev.token.index();
            unigram[t as usize] += 1;
            for depth in 0..=config.order.min(i) {
                let key = context_key(depth, ev.lob, &tokens[..i]);
                *raw.entry(key).or_default().entry(t).or_default() += 1;
            }
        }
    }
    if unigram.iter().all(|&c| c == 0) {
        return Err(FlowError::EmptyCorpus);
    }
    let contexts = raw
        .into_iter()
        .map(|(k, succ)| {
            let mut entries: Vec<(u32, u32)> = succ.into_iter().collect();
            entries.sort_unstable();
            let total = entries.iter().map(|&(_, c)| c as u64).sum();
            (k, ContextCounts { total, entries })
        })
        .collect();
    Ok(CountModel::from_parts(config, contexts, unigram))
}

impl CountModel {
    pub(super) fn from_parts(config: CountModelConfig, contexts: HashMap<u64, ContextCounts>, unigram: Vec<u32>) -> Self {
        let unigram_total: u64 = unigram.iter().map(|&c| c as u64).sum();
        let distinct = unigram.iter().filter(|&&c| c > 0).count();
        let mut model = Self {
            config,
            contexts,
            unigram,
            unigram_total,
            unigram_kappa: distinct as f64 + config.alpha,
            bottom_cells: Vec::new(),
        };
        model.bottom_cells = (0..CELL_COUNT)
            .map(|c| (0..INTERVAL_BUCKETS as usize).map(|i| model.bottom(c * INTERVAL_BUCKETS as usize + i)).sum())
            .collect();
        model
    }

    pub fn config(&self) -> CountModelConfig {
        self.config
    }

    pub fn context_count(&self) -> usize {
        self.contexts.len()
    }

    /// Number of (context, token) pairs with a nonzero count.
    pub fn entry_count(&self) -> usize {
        self.contexts.values().map(|c| c.entries.len()).sum()
    }

    /// Unigram probability with the uniform floor: the backoff chain's bottom.
    pub fn bottom(&self, token: usize) -> f64 {
        let k = self.unigram_kappa;
        (self.unigram[token] as f64 + k / VOCAB_SIZE as f64) / (self.unigram_total as f64 + k)
    }

    /// Observed contexts for `ctx`, deepest first.
    fn levels<'a>(&'a self, ctx: &TokenContext) -> impl Iterator<Item = &'a ContextCounts> + 'a {
        let max_depth = self.config.order.min(ctx.recent.len());
        let keys: Vec<u64> = (0..=max_depth).rev().map(|d| context_key(d, ctx.lob, &ctx.recent)).collect();
        keys.into_iter().filter_map(move |k| self.contexts.get(&k))
    }

    fn kappa(&self, c: &ContextCounts) -> f64 {
        c.entries.len() as f64 + self.config.alpha
    }

    /// Unmasked next-token distribution over the full vocabulary.
    pub fn distribution(&self, ctx: &TokenContext) -> Vec<f64> {
        let mut p: Vec<f64> = (0..VOCAB_SIZE as usize).map(|t| self.bottom(t)).collect();
        let mut levels: Vec<&ContextCounts> = self.levels(ctx).collect();
        levels.reverse();
        // Shallow to deep: P_j = (c_j + κ_j P_{j-1}) / (n_j + κ_j).
        for c in levels {
            let kappa = self.kappa(c);
            let denom = c.total as f64 + kappa;
            let keep = kappa / denom;
            p.iter_mut().for_each(|x| *x *= keep);
            for &(t, n) in &c.entries {
                p[t as usize] += n as f64 / denom;
            }
        }
        p
    }

    /// Masked and reweighted distribution: `distribution` times the per-cell
    /// `gate`, renormalized.
    pub fn gated_distribution(&self, ctx: &TokenContext, gate: &[f64]) -> Result<Vec<f64>, FlowError> {
        let mut p = self.distribution(ctx);
        for (t, x) in p.iter_mut().enumerate() {
            *x *= gate[t / INTERVAL_BUCKETS as usize];
        }
        let z: f64 = p.iter().sum();
        if !(z > 0.0) {
            return Err(FlowError::AllMasked);
        }
        p.iter_mut().for_each(|x| *x /= z);
        Ok(p)
    }

    /// Draws one token from the gated distribution without materializing it.
    ///
    /// The backoff chain unrolls into a mixture of each level's empirical
    /// counts plus the bottom distribution, so the draw first picks a
    /// component by its gated mass and then a token within it.
    pub fn sample(&self, ctx: &TokenContext, gate: &[f64], rng: &mut ChaCha8Rng) -> Result<OrderToken, FlowError> {
        let mut components: Vec<(f64, &ContextCounts)> = Vec::new();
        let mut remaining = 1.0;
        for c in self.levels(ctx) {
            let kappa = self.kappa(c);
            let denom = c.total as f64 + kappa;
            components.push((remaining / denom, c));
            remaining *= kappa / denom;
        }
        let masses: Vec<f64> = components
            .iter()
            .map(|&(coef, c)| coef * c.entries.iter().map(|&(t, n)| n as f64 * gate[t as usize / INTERVAL_BUCKETS as usize]).sum::<f64>())
            .collect();
        let bottom_mass: f64 = remaining * gate.iter().zip(&self.bottom_cells).map(|(g, b)| g * b).sum::<f64>();
        let total = masses.iter().sum::<f64>() + bottom_mass;
        if !(total > 0.0) {
            return Err(FlowError::AllMasked);
        }
        let mut u = rng.random::<f64>() * total;
        for (&(coef, c), &mass) in components.iter().zip(&masses) {
            if u < mass {
                let weights = c.entries.iter().map(|&(t, n)| coef * n as f64 * gate[t as usize / INTERVAL_BUCKETS as usize]);
                let pick = pick_weighted(weights, u);
                return Ok(OrderToken::new(c.entries[pick].0).expect("stored tokens are valid"));
            }
            u -= mass;
        }
        let u = u / remaining;
        let cell = pick_weighted(gate.iter().zip(&self.bottom_cells).map(|(g, b)| g * b), u);
        let base = cell * INTERVAL_BUCKETS as usize;
        let within = rng.random::<f64>() * self.bottom_cells[cell];
        let i = pick_weighted((0..INTERVAL_BUCKETS as usize).map(|i| self.bottom(base + i)), within);
        Ok(OrderToken::new((base + i) as u32).expect("index below vocabulary size"))
    }

    /// Mean natural-log probability per token of a token stream, unmasked.
    pub fn log_likelihood(&self, stream: &[TokenEvent]) -> f64 {
        self.score(stream, |model, ctx, t| model.probability(ctx, t))
    }

    /// Same as [`log_likelihood`](Self::log_likelihood) under the bottom
    /// distribution alone (a smoothed unigram baseline).
    pub fn unigram_log_likelihood(&self, stream: &[TokenEvent]) -> f64 {
        self.score(stream, |model, _, t| model.bottom(t.index() as usize))
    }

    fn score(&self, stream: &[TokenEvent], p: impl Fn(&Self, &TokenContext, OrderToken) -> f64) -> f64 {
        if stream.is_empty() {
            return 0.0;
        }
        let mut recent: VecDeque<OrderToken> = VecDeque::new();
        let mut total = 0.0;
        for ev in stream {
            let ctx = TokenContext { recent: recent.iter().copied().collect(), lob: ev.lob };
            total += p(self, &ctx, ev.token).ln();
            recent.push_back(ev.token);
            if recent.len() > self.config.order {
                recent.pop_front();
            }
        }
        total / stream.len() as f64
    }

    /// Probability of one token, walking the chain without the dense vector.
    pub fn probability(&self, ctx: &TokenContext, token: OrderToken) -> f64 {
        let t = token.index();
        let mut levels: Vec<&ContextCounts> = self.levels(ctx).collect();
        levels.reverse();
        let mut p = self.bottom(t as usize);
        for c in levels {
            let kappa = self.kappa(c);
            let n = c.entries.binary_search_by_key(&t, |&(tok, _)| tok).map(|i| c.entries[i].1).unwrap_or(0);
            p = (n as f64 + kappa * p) / (c.total as f64 + kappa);
        }
        p
    }
}

/// Index whose cumulative weight first exceeds `u`; falls back to the last
/// positive weight when rounding leaves `u` past the end.
fn pick_weighted(weights: impl Iterator<Item = f64>, mut u: f64) -> usize {
    let mut last_positive = 0;
    for (i, w) in weights.enumerate() {
        if w > 0.0 {
            if u < w {
                return i;
            }
            u -= w;
            last_positive = i;
        }
    }
    last_positive
}

/// Per-cell feasibility mask times the ensemble reweighting factor.
///
/// Limit orders are feasible at any positive price; a cancel only at a price
/// with resting volume. With a target image, each cell is scaled by
/// `(1 + target count)^λ`, the target cell being found by re-referencing the
/// slot's absolute price to the target's own reference mid.
pub fn cell_gate(book: &LimitOrderBook, mid: MidPrice, target: Option<&EnsembleTarget>, cfg: &CodecConfig) -> Vec<f64> {
    let mut gate = vec![0.0; CELL_COUNT];
    for kind in OrderKind::ALL {
        for slot in 0..PRICE_BUCKETS as u8 {
            let price = cfg.slot_price(slot, mid);
            let feasible = match kind {
                OrderKind::Cancel => price >= 1 && book.volume_at(price) > 0,
                _ => price >= 1,
            };
            if !feasible {
                continue;
            }
            let target_slot = target.map(|t| cfg.price_slot(price, t.image().ref_mid));
            for vb in 0..VOLUME_BUCKETS as u8 {
                let cell = (kind.token_index() as usize * PRICE_BUCKETS as usize + slot as usize) * VOLUME_BUCKETS as usize + vb as usize;
                gate[cell] = match (target, target_slot) {
                    (Some(t), Some(ts)) => t.factor(kind, vb, ts),
                    _ => 1.0,
                };
            }
        }
    }
    gate
}

/// A fitted count model with its codec, usable as a simulation flow backend.
#[derive(Clone, Debug)]
pub struct CountFlow {
    pub model: CountModel,
    pub codec: CodecConfig,
}

impl CountFlow {
    pub fn new(model: CountModel, codec: CodecConfig) -> Self {
        Self { model, codec }
    }

    /// Next-token distribution restricted to tokens feasible in `book`,
    /// optionally reweighted toward `target`.
    pub fn next_distribution(
        &self,
        ctx: &TokenContext,
        book: &LimitOrderBook,
        mid: MidPrice,
        target: Option<&EnsembleTarget>,
    ) -> Result<Vec<f64>, FlowError> {
        self.model.gated_distribution(ctx, &cell_gate(book, mid, target, &self.codec))
    }

    /// Samples a token and realizes it as an order: the slot's price, and a
    /// volume and interval drawn uniformly within the token's buckets.
    pub fn sample_order(
        &self,
        ctx: &TokenContext,
        book: &LimitOrderBook,
        mid: MidPrice,
        target: Option<&EnsembleTarget>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Order, FlowError> {
        let gate = cell_gate(book, mid, target, &self.codec);
        let parts = self.model.sample(ctx, &gate, rng)?.parts();
        let price = self.codec.slot_price(parts.price_bucket, mid);
        let (vlo, vhi) = self.codec.volume_range(parts.volume_bucket);
        let (ilo, ihi) = self.codec.interval_range(parts.interval_bucket);
        let volume = rng.random_range(vlo..vhi);
        let interval = if ihi > ilo { rng.random_range(ilo..ihi) } else { ilo };
        Ok(Order::new(0, parts.kind, price, volume)
            .with_interval(interval)
            .with_source(OrderSource::Generated))
    }
}

impl OrderFlowModel for CountFlow {
    fn name(&self) -> &'static str {
        "count"
    }

    fn start(self: Arc<Self>) -> Box<dyn OrderGenerator> {
        Box::new(CountGenerator { flow: self, recent: VecDeque::new() })
    }

    fn supports_targets(&self) -> bool {
        true
    }
}

struct CountGenerator {
    flow: Arc<CountFlow>,
    recent: VecDeque<OrderToken>,
}

impl OrderGenerator for CountGenerator {
    fn next_order(
        &mut self,
        view: &MarketView<'_>,
        target: Option<&EnsembleTarget>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Option<Order>, FlowError> {
        let ctx = TokenContext {
            recent: self.recent.iter().copied().collect(),
            lob: CoarseLobState::from_snapshot(&view.book.snapshot(), view.trend),
        };
        self.flow.sample_order(&ctx, view.book, view.mid, target, rng).map(Some)
    }

    fn observe(&mut self, order: &Order, mid_before: MidPrice) {
        self.recent.push_back(encode_order(order, mid_before, &self.flow.codec));
        if self.recent.len() > self.flow.model.config.order {
            self.recent.pop_front();
        }
    }
}
