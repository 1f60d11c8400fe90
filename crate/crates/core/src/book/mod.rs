//! Continuous double-auction limit order book with price-time priority.
//!
//! The book is the simulated clearing house: every generated, replayed and
//! injected order passes through [`LimitOrderBook::submit`]. Limit orders
//! match against the opposite side best-price-first and FIFO within a level;
//! the unfilled remainder rests. Cancels carry no side and are resolved by
//! looking the price up on both sides, which is unambiguous because the book
//! is never crossed.

mod log;
mod types;

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use log::{
    orders_from_records, read_binary_log, read_csv_log, write_binary_log, write_csv_log, LogError,
    LogRecord,
};
pub use types::{
    InstrumentId, MatchResult, MatchWarning, MidPrice, Order, OrderId, OrderKind, OrderSource,
    Price, Side, Trade,
};

/// Number of price levels reported per side in a snapshot.
pub const SNAPSHOT_LEVELS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BookError {
    #[error("order {id}: volume must be at least 1")]
    InvalidVolume { id: OrderId },
    #[error("order {id}: price {price} is below one tick")]
    InvalidPrice { id: OrderId, price: Price },
    #[error("order {id}: expected a {expected} order")]
    WrongKind { id: OrderId, expected: &'static str },
    #[error("no mid-price available: book is empty and no reference price was given")]
    NoPriceReference,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mechanism {
    #[default]
    ContinuousDoubleAuction,
}

/// Matching-rule configuration (MTCH_R).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchingRules {
    pub mechanism: Mechanism,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Resting {
    id: OrderId,
    remaining: u64,
    seq: u64,
}

#[derive(Clone, Debug, Default)]
struct Level {
    queue: VecDeque<Resting>,
    total: u64,
}

impl Level {
    fn push(&mut self, entry: Resting) {
        self.total += entry.remaining;
        self.queue.push_back(entry);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriceLevel {
    pub price: Price,
    pub volume: u64,
}

/// Top-of-book summary: up to ten levels per side.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LobSnapshot {
    /// Ascending by price.
    pub asks: Vec<PriceLevel>,
    /// Descending by price.
    pub bids: Vec<PriceLevel>,
}

impl LobSnapshot {
    pub fn best_ask(&self) -> Option<Price> {
        self.asks.first().map(|l| l.price)
    }

    pub fn best_bid(&self) -> Option<Price> {
        self.bids.first().map(|l| l.price)
    }

    /// Mid-price when both sides are populated.
    pub fn mid(&self) -> Option<MidPrice> {
        Some(MidPrice::from_quotes(self.best_ask()?, self.best_bid()?))
    }

    pub fn spread(&self) -> Option<i64> {
        Some(self.best_ask()? - self.best_bid()?)
    }

    pub fn ask_depth(&self) -> u64 {
        self.asks.iter().map(|l| l.volume).sum()
    }

    pub fn bid_depth(&self) -> u64 {
        self.bids.iter().map(|l| l.volume).sum()
    }

    /// (bid depth − ask depth) / (bid depth + ask depth) over the reported levels.
    pub fn imbalance(&self) -> Option<f64> {
        let (b, a) = (self.bid_depth() as f64, self.ask_depth() as f64);
        if a + b == 0.0 {
            None
        } else {
            Some((b - a) / (b + a))
        }
    }
}

/// Mid-price with the fallback chain: both quotes, else the fallback price
/// (last trade, then the configured open reference, supplied by the caller).
pub fn mid_price(snapshot: &LobSnapshot, fallback: Option<Price>) -> Result<MidPrice, BookError> {
    snapshot
        .mid()
        .or_else(|| fallback.map(MidPrice::from_ticks))
        .ok_or(BookError::NoPriceReference)
}

#[derive(Clone, Debug, Default)]
pub struct LimitOrderBook {
    bids: BTreeMap<Price, Level>,
    asks: BTreeMap<Price, Level>,
    locations: HashMap<OrderId, (Side, Price)>,
    last_trade: Option<Price>,
    seq: u64,
    rules: MatchingRules,
}

impl LimitOrderBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_rules(rules: MatchingRules) -> Self {
        Self { rules, ..Self::default() }
    }

    pub fn rules(&self) -> &MatchingRules {
        &self.rules
    }

    pub fn last_trade(&self) -> Option<Price> {
        self.last_trade
    }

    /// Number of events processed so far.
    pub fn sequence(&self) -> u64 {
        self.seq
    }

    pub fn best_bid(&self) -> Option<Price> {
        self.bids.keys().next_back().copied()
    }

    pub fn best_ask(&self) -> Option<Price> {
        self.asks.keys().next().copied()
    }

    /// Resting volume at `price` on whichever side holds it.
    pub fn volume_at(&self, price: Price) -> u64 {
        self.bids
            .get(&price)
            .or_else(|| self.asks.get(&price))
            .map_or(0, |l| l.total)
    }

    pub fn side_volume_at(&self, side: Side, price: Price) -> u64 {
        self.side(side).get(&price).map_or(0, |l| l.total)
    }

    pub fn is_resting(&self, id: OrderId) -> bool {
        self.locations.contains_key(&id)
    }

    /// Remaining volume of a resting order.
    pub fn remaining(&self, id: OrderId) -> Option<u64> {
        let (side, price) = *self.locations.get(&id)?;
        self.side(side)
            .get(&price)?
            .queue
            .iter()
            .find(|r| r.id == id)
            .map(|r| r.remaining)
    }

    pub fn resting_order_count(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bids.is_empty() && self.asks.is_empty()
    }

    fn side(&self, side: Side) -> &BTreeMap<Price, Level> {
        match side {
            Side::Bid => &self.bids,
            Side::Ask => &self.asks,
        }
    }

    fn side_mut(&mut self, side: Side) -> &mut BTreeMap<Price, Level> {
        match side {
            Side::Bid => &mut self.bids,
            Side::Ask => &mut self.asks,
        }
    }

    /// Dispatches on the order kind.
    pub fn submit(&mut self, order: &Order) -> Result<MatchResult, BookError> {
        match order.kind {
            OrderKind::Ask | OrderKind::Bid => self.submit_limit(order),
            OrderKind::Cancel => self.submit_cancel(order),
        }
    }

    pub fn submit_limit(&mut self, order: &Order) -> Result<MatchResult, BookError> {
        let side = order.kind.side().ok_or(BookError::WrongKind {
            id: order.id,
            expected: "limit",
        })?;
        if order.volume == 0 {
            return Err(BookError::InvalidVolume { id: order.id });
        }
        if order.price < 1 {
            return Err(BookError::InvalidPrice { id: order.id, price: order.price });
        }
        self.seq += 1;

        let mut remaining = order.volume;
        let mut trades = Vec::new();
        let contra = side.opposite();
        while remaining > 0 {
            let best = match contra {
                Side::Ask => self.asks.first_entry(),
                Side::Bid => self.bids.last_entry(),
            };
            let Some(mut entry) = best else { break };
            let level_price = *entry.key();
            let crosses = match side {
                Side::Bid => level_price <= order.price,
                Side::Ask => level_price >= order.price,
            };
            if !crosses {
                break;
            }
            let level = entry.get_mut();
            while remaining > 0 {
                let Some(maker) = level.queue.front_mut() else { break };
                let fill = remaining.min(maker.remaining);
                maker.remaining -= fill;
                level.total -= fill;
                remaining -= fill;
                trades.push(Trade {
                    price: level_price,
                    volume: fill,
                    aggressor: side,
                    maker: maker.id,
                    taker: order.id,
                    seq: self.seq,
                });
                if maker.remaining == 0 {
                    let id = maker.id;
                    level.queue.pop_front();
                    self.locations.remove(&id);
                }
            }
            if level.queue.is_empty() {
                entry.remove();
            }
        }
        if let Some(last) = trades.last() {
            self.last_trade = Some(last.price);
        }
        if remaining > 0 {
            let seq = self.seq;
            self.side_mut(side)
                .entry(order.price)
                .or_default()
                .push(Resting { id: order.id, remaining, seq });
            self.locations.insert(order.id, (side, order.price));
        }
        Ok(MatchResult {
            trades,
            accepted: true,
            resting: remaining,
            cancelled: 0,
            warnings: Vec::new(),
        })
    }

    /// Removes up to `order.volume` shares. Untargeted cancels take the
    /// oldest orders at `order.price` first.
    pub fn submit_cancel(&mut self, order: &Order) -> Result<MatchResult, BookError> {
        if order.kind != OrderKind::Cancel {
            return Err(BookError::WrongKind { id: order.id, expected: "cancel" });
        }
        if order.volume == 0 {
            return Err(BookError::InvalidVolume { id: order.id });
        }
        self.seq += 1;
        match order.target {
            Some(target) => Ok(self.cancel_targeted(target, order.volume)),
            None => Ok(self.cancel_at_price(order.price, order.volume)),
        }
    }

    fn cancel_at_price(&mut self, price: Price, volume: u64) -> MatchResult {
        let side = if self.bids.contains_key(&price) {
            Side::Bid
        } else if self.asks.contains_key(&price) {
            Side::Ask
        } else {
            return MatchResult {
                accepted: false,
                warnings: vec![MatchWarning::NothingToCancel { price }],
                ..MatchResult::default()
            };
        };
        let book = match side {
            Side::Bid => &mut self.bids,
            Side::Ask => &mut self.asks,
        };
        let level = book.get_mut(&price).expect("level checked above");
        let mut left = volume;
        while left > 0 {
            let Some(front) = level.queue.front_mut() else { break };
            let take = left.min(front.remaining);
            front.remaining -= take;
            level.total -= take;
            left -= take;
            if front.remaining == 0 {
                let id = front.id;
                level.queue.pop_front();
                self.locations.remove(&id);
            }
        }
        if level.queue.is_empty() {
            book.remove(&price);
        }
        let removed = volume - left;
        let mut warnings = Vec::new();
        if left > 0 {
            warnings.push(MatchWarning::PartialCancel { price, requested: volume, removed });
        }
        MatchResult { accepted: true, cancelled: removed, warnings, ..MatchResult::default() }
    }

    fn cancel_targeted(&mut self, target: OrderId, volume: u64) -> MatchResult {
        let Some(&(side, price)) = self.locations.get(&target) else {
            return MatchResult {
                accepted: false,
                warnings: vec![MatchWarning::UnknownTarget { target }],
                ..MatchResult::default()
            };
        };
        let book = match side {
            Side::Bid => &mut self.bids,
            Side::Ask => &mut self.asks,
        };
        let level = book.get_mut(&price).expect("indexed level exists");
        let pos = level
            .queue
            .iter()
            .position(|r| r.id == target)
            .expect("indexed order rests at its level");
        let entry = &mut level.queue[pos];
        let removed = volume.min(entry.remaining);
        entry.remaining -= removed;
        level.total -= removed;
        if entry.remaining == 0 {
            level.queue.remove(pos);
            self.locations.remove(&target);
        }
        if level.queue.is_empty() {
            book.remove(&price);
        }
        let mut warnings = Vec::new();
        if removed < volume {
            warnings.push(MatchWarning::PartialCancel { price, requested: volume, removed });
        }
        MatchResult { accepted: true, cancelled: removed, warnings, ..MatchResult::default() }
    }

    pub fn snapshot(&self) -> LobSnapshot {
        self.snapshot_depth(SNAPSHOT_LEVELS)
    }

    pub fn snapshot_depth(&self, levels: usize) -> LobSnapshot {
        LobSnapshot {
            asks: self
                .asks
                .iter()
                .take(levels)
                .map(|(&price, l)| PriceLevel { price, volume: l.total })
                .collect(),
            bids: self
                .bids
                .iter()
                .rev()
                .take(levels)
                .map(|(&price, l)| PriceLevel { price, volume: l.total })
                .collect(),
        }
    }

    pub fn mid_price(&self, reference: Option<Price>) -> Result<MidPrice, BookError> {
        match (self.best_ask(), self.best_bid()) {
            (Some(a), Some(b)) => Ok(MidPrice::from_quotes(a, b)),
            _ => self
                .last_trade
                .or(reference)
                .map(MidPrice::from_ticks)
                .ok_or(BookError::NoPriceReference),
        }
    }

    /// SHA-256 over the full resting state, hex encoded.
    pub fn state_hash(&self) -> String {
        let mut h = Sha256::new();
        for (tag, book) in [(b'B', &self.bids), (b'A', &self.asks)] {
            for (price, level) in book {
                h.update([tag]);
                h.update(price.to_le_bytes());
                for r in &level.queue {
                    h.update(r.id.to_le_bytes());
                    h.update(r.remaining.to_le_bytes());
                    h.update(r.seq.to_le_bytes());
                }
            }
        }
        h.update(self.last_trade.unwrap_or(i64::MIN).to_le_bytes());
        hex::encode(h.finalize())
    }

    /// Resting orders at a level in FIFO order, as (id, remaining).
    pub fn level_queue(&self, side: Side, price: Price) -> Vec<(OrderId, u64)> {
        self.side(side)
            .get(&price)
            .map(|l| l.queue.iter().map(|r| (r.id, r.remaining)).collect())
            .unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_book_bid_rests() {
        let mut book = LimitOrderBook::new();
        let res = book.submit(&Order::bid(1, 1000, 100)).unwrap();
        assert!(res.trades.is_empty());
        assert_eq!(res.resting, 100);
        let snap = book.snapshot();
        assert_eq!(snap.bids, vec![PriceLevel { price: 1000, volume: 100 }]);
        assert!(snap.asks.is_empty());
    }

    #[test]
    fn partial_fill_rests_remainder() {
        let mut book = LimitOrderBook::new();
        book.submit(&Order::ask(1, 1002, 50)).unwrap();
        let res = book.submit(&Order::bid(2, 1002, 80)).unwrap();
        assert_eq!(res.trades.len(), 1);
        assert_eq!((res.trades[0].price, res.trades[0].volume), (1002, 50));
        assert_eq!(res.resting, 30);
        assert_eq!(book.best_bid(), Some(1002));
        assert_eq!(book.best_ask(), None);
        assert_eq!(book.last_trade(), Some(1002));
    }

    #[test]
    fn sweep_two_levels() {
        let mut book = LimitOrderBook::new();
        book.submit(&Order::ask(1, 1001, 30)).unwrap();
        book.submit(&Order::ask(2, 1002, 40)).unwrap();
        let res = book.submit(&Order::bid(3, 1002, 100)).unwrap();
        let fills: Vec<_> = res.trades.iter().map(|t| (t.price, t.volume, t.maker)).collect();
        assert_eq!(fills, vec![(1001, 30, 1), (1002, 40, 2)]);
        assert_eq!(res.resting, 30);
        assert_eq!(book.snapshot().bids[0], PriceLevel { price: 1002, volume: 30 });
    }

    #[test]
    fn fifo_within_level() {
        let mut book = LimitOrderBook::new();
        book.submit(&Order::ask(1, 1000, 10)).unwrap();
        book.submit(&Order::ask(2, 1000, 10)).unwrap();
        let res = book.submit(&Order::bid(3, 1000, 15)).unwrap();
        assert_eq!(res.trades[0].maker, 1);
        assert_eq!(res.trades[1].maker, 2);
        assert_eq!(res.trades[1].volume, 5);
        assert_eq!(book.level_queue(Side::Ask, 1000), vec![(2, 5)]);
    }

    #[test]
    fn cancel_oldest_first() {
        let mut book = LimitOrderBook::new();
        book.submit(&Order::bid(1, 1000, 60)).unwrap();
        book.submit(&Order::bid(2, 1000, 40)).unwrap();
        let res = book.submit(&Order::cancel(3, 1000, 70)).unwrap();
        assert_eq!(res.cancelled, 70);
        assert!(res.warnings.is_empty());
        assert_eq!(book.level_queue(Side::Bid, 1000), vec![(2, 30)]);
        assert!(!book.is_resting(1));
    }

    #[test]
    fn cancel_empty_level_warns() {
        let mut book = LimitOrderBook::new();
        let res = book.submit(&Order::cancel(1, 999, 50)).unwrap();
        assert!(!res.accepted);
        assert_eq!(res.warnings, vec![MatchWarning::NothingToCancel { price: 999 }]);
    }

    #[test]
    fn over_cancel_removes_all_with_warning() {
        let mut book = LimitOrderBook::new();
        book.submit(&Order::bid(1, 1000, 100)).unwrap();
        let res = book.submit(&Order::cancel(2, 1000, 500)).unwrap();
        assert_eq!(res.cancelled, 100);
        assert_eq!(
            res.warnings,
            vec![MatchWarning::PartialCancel { price: 1000, requested: 500, removed: 100 }]
        );
        assert!(book.is_empty());
    }

    #[test]
    fn cancel_infers_ask_side() {
        let mut book = LimitOrderBook::new();
        book.submit(&Order::ask(1, 1005, 20)).unwrap();
        let res = book.submit(&Order::cancel(2, 1005, 5)).unwrap();
        assert_eq!(res.cancelled, 5);
        assert_eq!(book.side_volume_at(Side::Ask, 1005), 15);
    }

    #[test]
    fn targeted_cancel_skips_queue_order() {
        let mut book = LimitOrderBook::new();
        book.submit(&Order::bid(1, 1000, 60)).unwrap();
        book.submit(&Order::bid(2, 1000, 40)).unwrap();
        let res = book.submit(&Order::cancel(3, 1000, 40).with_target(2)).unwrap();
        assert_eq!(res.cancelled, 40);
        assert_eq!(book.level_queue(Side::Bid, 1000), vec![(1, 60)]);
        let res = book.submit(&Order::cancel(4, 1000, 1).with_target(2)).unwrap();
        assert_eq!(res.warnings, vec![MatchWarning::UnknownTarget { target: 2 }]);
    }

    #[test]
    fn validation_errors() {
        let mut book = LimitOrderBook::new();
        assert_eq!(
            book.submit(&Order::bid(1, 1000, 0)),
            Err(BookError::InvalidVolume { id: 1 })
        );
        assert_eq!(
            book.submit(&Order::ask(2, 0, 10)),
            Err(BookError::InvalidPrice { id: 2, price: 0 })
        );
        assert!(book.is_empty());
    }

    #[test]
    fn snapshot_and_mid_rules() {
        let mut book = LimitOrderBook::new();
        assert_eq!(book.snapshot(), LobSnapshot::default());
        assert_eq!(book.mid_price(None), Err(BookError::NoPriceReference));
        assert_eq!(book.mid_price(Some(1000)).unwrap(), MidPrice::from_ticks(1000));

        book.submit(&Order::ask(1, 1002, 10)).unwrap();
        book.submit(&Order::bid(2, 1000, 10)).unwrap();
        let snap = book.snapshot();
        assert_eq!(snap.spread(), Some(2));
        assert_eq!(mid_price(&snap, None).unwrap().twice(), 2002);

        let one_sided = LobSnapshot {
            bids: vec![PriceLevel { price: 1000, volume: 100 }],
            asks: vec![],
        };
        assert_eq!(one_sided.mid(), None);
        assert_eq!(mid_price(&one_sided, Some(1001)).unwrap().twice(), 2002);
        assert_eq!(mid_price(&LobSnapshot::default(), None), Err(BookError::NoPriceReference));
    }

    #[test]
    fn snapshot_caps_at_ten_levels() {
        let mut book = LimitOrderBook::new();
        for i in 0..15 {
            book.submit(&Order::ask(i, 1010 + i as i64, 1)).unwrap();
            book.submit(&Order::bid(100 + i, 1000 - i as i64, 1)).unwrap();
        }
        let snap = book.snapshot();
        assert_eq!(snap.asks.len(), 10);
        assert_eq!(snap.bids.len(), 10);
        assert!(snap.asks.windows(2).all(|w| w[0].price < w[1].price));
        assert!(snap.bids.windows(2).all(|w| w[0].price > w[1].price));
    }

    #[test]
    fn mid_price_offsets_round_down() {
        let mid = MidPrice::from_twice(2001); // 1000.5
        assert_eq!(mid.offset_of(1001), 0);
        assert_eq!(mid.offset_of(1000), -1);
        assert_eq!(mid.price_at_offset(0), 1001);
        assert_eq!(mid.price_at_offset(-1), 1000);
        let whole = MidPrice::from_ticks(1001);
        assert_eq!(whole.offset_of(1001), 0);
        assert_eq!(whole.price_at_offset(3), 1004);
    }

    #[test]
    fn state_hash_tracks_contents() {
        let mut a = LimitOrderBook::new();
        let mut b = LimitOrderBook::new();
        a.submit(&Order::bid(1, 1000, 10)).unwrap();
        b.submit(&Order::bid(1, 1000, 10)).unwrap();
        assert_eq!(a.state_hash(), b.state_hash());
        b.submit(&Order::bid(2, 999, 1)).unwrap();
        assert_ne!(a.state_hash(), b.state_hash());
    }
}
