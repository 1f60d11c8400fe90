use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::book::{BookError, LimitOrderBook, LobSnapshot, MidPrice, Order, Price};
use crate::codec::{encode_order, CodecConfig, OrderToken};

const IMBALANCE_EDGES: [f64; 4] = [-0.6, -0.2, 0.2, 0.6];
pub const SPREAD_BUCKETS: u8 = 5;
pub const IMBALANCE_BUCKETS: u8 = 5;
pub const LOB_STATES: u32 = SPREAD_BUCKETS as u32 * IMBALANCE_BUCKETS as u32 * 3;

/// Coarse book state used as conditioning context.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CoarseLobState {
    /// Spread of 1, 2, 3, ≥4 ticks → 0..=3; one-sided or empty book → 4.
    pub spread_bucket: u8,
    /// Depth imbalance in five equal-width bands over [−1, 1].
    pub imbalance_bucket: u8,
    pub trend: i8,
}

impl CoarseLobState {
    pub fn from_snapshot(snapshot: &LobSnapshot, trend: i8) -> Self {
        let spread_bucket = match snapshot.spread() {
            Some(s) => (s.clamp(1, 4) - 1) as u8,
            None => 4,
        };
        let imbalance_bucket = match snapshot.imbalance() {
            Some(x) => IMBALANCE_EDGES.iter().filter(|&&e| x >= e).count() as u8,
            None => 2,
        };
        Self { spread_bucket, imbalance_bucket, trend: trend.signum() }
    }

    pub fn code(self) -> u32 {
        (self.spread_bucket as u32 * IMBALANCE_BUCKETS as u32 + self.imbalance_bucket as u32) * 3
            + (self.trend + 1) as u32
    }
}

/// Conditioning context: the last k tokens (most recent last) plus the coarse book state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenContext {
    pub recent: Vec<OrderToken>,
    pub lob: CoarseLobState,
}

/// Sign of the mid move over a trailing window.
#[derive(Clone, Debug)]
pub struct TrendTracker {
    window_ms: u64,
    history: VecDeque<(u64, MidPrice)>,
}

impl TrendTracker {
    pub fn new(window_ms: u64) -> Self {
        Self { window_ms, history: VecDeque::new() }
    }

    pub fn push(&mut self, ts: u64, mid: MidPrice) {
        self.history.push_back((ts, mid));
        // Keep one sample at or before the window start as the reference.
        while self.history.len() > 1 && self.history[1].0 + self.window_ms <= ts {
            self.history.pop_front();
        }
    }

    pub fn trend(&self) -> i8 {
        match (self.history.front(), self.history.back()) {
            (Some(a), Some(b)) => (b.1.twice() - a.1.twice()).signum() as i8,
            _ => 0,
        }
    }
}

/// One tokenized event and the book state it arrived into.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TokenEvent {
    pub token: OrderToken,
    pub lob: CoarseLobState,
}

/// Feeds `orders` through a fresh book and tokenizes each against the mid
/// and coarse state just before it arrives.
pub fn tokenize_orders(
    orders: &[Order],
    start_ms: u64,
    reference: Price,
    cfg: &CodecConfig,
) -> Result<Vec<TokenEvent>, BookError> {
    let mut book = LimitOrderBook::new();
    let mut trend = TrendTracker::new(60_000);
    let mut clock = start_ms;
    let mut out = Vec::with_capacity(orders.len());
    for o in orders {
        clock += o.interval_ms;
        let mid = book.mid_price(Some(reference))?;
        trend.push(clock, mid);
        let lob = CoarseLobState::from_snapshot(&book.snapshot(), trend.trend());
        out.push(TokenEvent { token: encode_order(o, mid, cfg), lob });
        book.submit(o)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::book::PriceLevel;

    #[test]
    fn coarse_state_codes_are_dense() {
        let mut seen = std::collections::HashSet::new();
        for s in 0..SPREAD_BUCKETS {
            for i in 0..IMBALANCE_BUCKETS {
                for t in -1..=1 {
                    let c = CoarseLobState { spread_bucket: s, imbalance_bucket: i, trend: t }.code();
                    assert!(c < LOB_STATES);
                    seen.insert(c);
                }
            }
        }
        assert_eq!(seen.len(), LOB_STATES as usize);
    }

    #[test]
    fn coarse_state_from_book() {
        let snap = LobSnapshot {
            asks: vec![PriceLevel { price: 1002, volume: 10 }],
            bids: vec![PriceLevel { price: 1000, volume: 90 }],
        };
        let s = CoarseLobState::from_snapshot(&snap, 5);
        assert_eq!(s, CoarseLobState { spread_bucket: 1, imbalance_bucket: 4, trend: 1 });
        let s = CoarseLobState::from_snapshot(&LobSnapshot::default(), 0);
        assert_eq!(s, CoarseLobState { spread_bucket: 4, imbalance_bucket: 2, trend: 0 });
    }

    #[test]
    fn trend_uses_trailing_minute() {
        let mut t = TrendTracker::new(60_000);
        t.push(0, MidPrice::from_ticks(100));
        t.push(30_000, MidPrice::from_ticks(101));
        assert_eq!(t.trend(), 1);
        t.push(100_000, MidPrice::from_ticks(99));
        // Reference is now the 30 s sample (last one at or before 40 s).
        assert_eq!(t.trend(), -1);
        t.push(200_000, MidPrice::from_ticks(99));
        assert_eq!(t.trend(), 0);
    }
}
