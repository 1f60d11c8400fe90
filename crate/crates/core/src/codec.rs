//! Discretization of orders and book context into the order-token space.
//!
//! A token is the mixed-radix index of the tuple (kind, price, volume,
//! interval) with radices 3 × 32 × 32 × 16, giving 49152 indices. Prices are
//! bucketed relative to the current mid; volumes and intervals by
//! configurable log-spaced lower-bound edges.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::book::{mid_price, LobSnapshot, MidPrice, Order, OrderKind, Price, SNAPSHOT_LEVELS};

pub const PRICE_BUCKETS: u32 = 32;
pub const VOLUME_BUCKETS: u32 = 32;
pub const INTERVAL_BUCKETS: u32 = 16;
pub const VOCAB_SIZE: u32 = 3 * PRICE_BUCKETS * VOLUME_BUCKETS * INTERVAL_BUCKETS;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("token index {0} outside [0, {VOCAB_SIZE})")]
    IndexOutOfRange(u32),
    #[error("{name}: expected {expected} edges, got {got}")]
    EdgeCount { name: &'static str, expected: usize, got: usize },
    #[error("{name}: edges must be strictly increasing")]
    EdgesNotIncreasing { name: &'static str },
    #[error("price half-width {0} must lie in [1, 31]")]
    HalfWidth(i64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OrderToken(u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TokenParts {
    pub kind: OrderKind,
    pub price_bucket: u8,
    pub volume_bucket: u8,
    pub interval_bucket: u8,
}

impl OrderToken {
    pub fn new(index: u32) -> Result<Self, CodecError> {
        if index < VOCAB_SIZE {
            Ok(OrderToken(index))
        } else {
            Err(CodecError::IndexOutOfRange(index))
        }
    }

    pub fn index(self) -> u32 {
        self.0
    }

    pub fn from_parts(parts: TokenParts) -> Self {
        let TokenParts { kind, price_bucket, volume_bucket, interval_bucket } = parts;
        debug_assert!((price_bucket as u32) < PRICE_BUCKETS);
        debug_assert!((volume_bucket as u32) < VOLUME_BUCKETS);
        debug_assert!((interval_bucket as u32) < INTERVAL_BUCKETS);
        let idx = ((kind.token_index() * PRICE_BUCKETS + price_bucket as u32) * VOLUME_BUCKETS
            + volume_bucket as u32)
            * INTERVAL_BUCKETS
            + interval_bucket as u32;
        OrderToken(idx)
    }

    pub fn parts(self) -> TokenParts {
        let mut i = self.0;
        let interval_bucket = (i % INTERVAL_BUCKETS) as u8;
        i /= INTERVAL_BUCKETS;
        let volume_bucket = (i % VOLUME_BUCKETS) as u8;
        i /= VOLUME_BUCKETS;
        let price_bucket = (i % PRICE_BUCKETS) as u8;
        i /= PRICE_BUCKETS;
        TokenParts {
            kind: OrderKind::from_token_index(i).expect("validated index"),
            price_bucket,
            volume_bucket,
            interval_bucket,
        }
    }

    /// Index of the (kind, price, volume) cell, ignoring the interval.
    pub fn cell(self) -> u32 {
        self.0 / INTERVAL_BUCKETS
    }
}

/// Inverse of the index arithmetic in [`encode_order`].
pub fn decode_token(index: u32) -> Result<TokenParts, CodecError> {
    Ok(OrderToken::new(index)?.parts())
}

/// Bucket boundaries shared by the token codec and the order-image converter.
///
/// Edges are bucket lower bounds: a value falls in the last bucket whose edge
/// it reaches. The last bucket is open-ended; for sampling it is taken to
/// extend to twice its lower edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodecConfig {
    pub price_half_width: i64,
    pub volume_edges: Vec<u64>,
    pub interval_edges: Vec<u64>,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            price_half_width: 16,
            volume_edges: log_edges(1, 100_000, VOLUME_BUCKETS as usize),
            interval_edges: log_edges(0, 60_000, INTERVAL_BUCKETS as usize),
        }
    }
}

/// `count` strictly increasing integer edges, the first at `first`, the rest
/// geometrically spaced up to `last`.
fn log_edges(first: u64, last: u64, count: usize) -> Vec<u64> {
    let mut edges = vec![first];
    let (lo, hi) = ((first.max(1)) as f64, last as f64);
    for i in 1..count {
        let x = (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (count - 1) as f64).exp().round() as u64;
        let prev = *edges.last().unwrap();
        edges.push(x.max(prev + 1));
    }
    edges
}

fn quantile_edges(values: &[u64], first: u64, count: usize) -> Vec<u64> {
    let mut sorted: Vec<u64> = values.to_vec();
    sorted.sort_unstable();
    let mut edges = vec![first];
    for i in 1..count {
        let q = if sorted.is_empty() {
            0
        } else {
            sorted[(i * sorted.len() / count).min(sorted.len() - 1)]
        };
        let prev = *edges.last().unwrap();
        edges.push(q.max(prev + 1));
    }
    edges
}

fn bucket_of(edges: &[u64], value: u64) -> u8 {
    // Largest i with edges[i] <= value; values below the first edge map to 0.
    edges.partition_point(|&e| e <= value).saturating_sub(1) as u8
}

fn bucket_range(edges: &[u64], bucket: u8) -> (u64, u64) {
    let b = bucket as usize;
    let lo = edges[b];
    let hi = edges.get(b + 1).copied().unwrap_or(lo.max(1) * 2);
    (lo, hi)
}

impl CodecConfig {
    /// Equal-mass edges from a corpus of raw volumes and intervals.
    pub fn from_corpus(volumes: &[u64], intervals: &[u64]) -> Self {
        Self {
            price_half_width: 16,
            volume_edges: quantile_edges(volumes, 1, VOLUME_BUCKETS as usize),
            interval_edges: quantile_edges(intervals, 0, INTERVAL_BUCKETS as usize),
        }
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if !(1..PRICE_BUCKETS as i64).contains(&self.price_half_width) {
            return Err(CodecError::HalfWidth(self.price_half_width));
        }
        for (name, edges, n) in [
            ("volume_edges", &self.volume_edges, VOLUME_BUCKETS as usize),
            ("interval_edges", &self.interval_edges, INTERVAL_BUCKETS as usize),
        ] {
            if edges.len() != n {
                return Err(CodecError::EdgeCount { name, expected: n, got: edges.len() });
            }
            if edges.windows(2).any(|w| w[0] >= w[1]) {
                return Err(CodecError::EdgesNotIncreasing { name });
            }
        }
        Ok(())
    }

    pub fn volume_bucket(&self, volume: u64) -> u8 {
        bucket_of(&self.volume_edges, volume)
    }

    pub fn interval_bucket(&self, interval_ms: u64) -> u8 {
        bucket_of(&self.interval_edges, interval_ms)
    }

    /// Half-open range `[lo, hi)` of volumes in a bucket.
    pub fn volume_range(&self, bucket: u8) -> (u64, u64) {
        let (lo, hi) = bucket_range(&self.volume_edges, bucket);
        (lo.max(1), hi.max(lo.max(1) + 1))
    }

    pub fn interval_range(&self, bucket: u8) -> (u64, u64) {
        bucket_range(&self.interval_edges, bucket)
    }

    /// Price slot of `price` in the window around `mid`, clamped to [0, 31].
    pub fn price_slot(&self, price: Price, mid: MidPrice) -> u8 {
        (mid.offset_of(price) + self.price_half_width).clamp(0, PRICE_BUCKETS as i64 - 1) as u8
    }

    /// The price a slot stands for; edge slots stand for the window boundary.
    pub fn slot_price(&self, slot: u8, mid: MidPrice) -> Price {
        mid.price_at_offset(slot as i64 - self.price_half_width)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

pub fn encode_order(order: &Order, mid: MidPrice, cfg: &CodecConfig) -> OrderToken {
    OrderToken::from_parts(TokenParts {
        kind: order.kind,
        price_bucket: cfg.price_slot(order.price, mid),
        volume_bucket: cfg.volume_bucket(order.volume),
        interval_bucket: cfg.interval_bucket(order.interval_ms),
    })
}

/// Bucketed ten-level volumes and the mid-price drift since the open.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LobFeature {
    /// Ask levels 1..10 followed by bid levels 1..10.
    pub volume_bins: [u8; 2 * SNAPSHOT_LEVELS],
    /// Whole ticks between the current mid and the opening mid.
    pub mid_offset: i64,
}

/// Absent levels bucket to 0. When the book has no mid, `fallback` (last
/// trade) is used, then the opening mid itself.
pub fn encode_lob(
    snapshot: &LobSnapshot,
    fallback: Option<Price>,
    open_mid: MidPrice,
    cfg: &CodecConfig,
) -> LobFeature {
    let mut volume_bins = [0u8; 2 * SNAPSHOT_LEVELS];
    for (i, l) in snapshot.asks.iter().take(SNAPSHOT_LEVELS).enumerate() {
        volume_bins[i] = cfg.volume_bucket(l.volume);
    }
    for (i, l) in snapshot.bids.iter().take(SNAPSHOT_LEVELS).enumerate() {
        volume_bins[SNAPSHOT_LEVELS + i] = cfg.volume_bucket(l.volume);
    }
    let mid = mid_price(snapshot, fallback).unwrap_or(open_mid);
    LobFeature { volume_bins, mid_offset: mid.ticks_since(open_mid) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::book::PriceLevel;
    use proptest::prelude::*;

    #[test]
    fn vocabulary_size() {
        assert_eq!(VOCAB_SIZE, 49152);
    }

    #[test]
    fn corner_indices() {
        let zero = TokenParts { kind: OrderKind::Ask, price_bucket: 0, volume_bucket: 0, interval_bucket: 0 };
        assert_eq!(OrderToken::from_parts(zero).index(), 0);
        assert_eq!(decode_token(0).unwrap(), zero);
        let top = TokenParts { kind: OrderKind::Cancel, price_bucket: 31, volume_bucket: 31, interval_bucket: 15 };
        assert_eq!(OrderToken::from_parts(top).index(), 49151);
        assert_eq!(decode_token(49151).unwrap(), top);
        assert_eq!(decode_token(49152), Err(CodecError::IndexOutOfRange(49152)));
    }

    #[test]
    fn price_at_mid_is_center_slot() {
        let cfg = CodecConfig::default();
        let mid = MidPrice::from_ticks(1000);
        assert_eq!(cfg.price_slot(1000, mid), 16);
        assert_eq!(cfg.price_slot(1000 - 16, mid), 0);
        assert_eq!(cfg.price_slot(1000 - 500, mid), 0);
        assert_eq!(cfg.price_slot(1000 + 15, mid), 31);
        assert_eq!(cfg.price_slot(1000 + 900, mid), 31);
    }

    #[test]
    fn default_config_is_valid() {
        let cfg = CodecConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.volume_bucket(1), 0);
        assert_eq!(cfg.volume_bucket(*cfg.volume_edges.last().unwrap()), 31);
        assert_eq!(cfg.volume_bucket(u64::MAX), 31);
        assert_eq!(cfg.interval_bucket(0), 0);
        assert_eq!(cfg.interval_bucket(10_000_000), 15);
    }

    #[test]
    fn validation_rejects_bad_edges() {
        let mut cfg = CodecConfig::default();
        cfg.volume_edges.pop();
        assert!(matches!(cfg.validate(), Err(CodecError::EdgeCount { .. })));
        let mut cfg = CodecConfig::default();
        cfg.interval_edges[3] = cfg.interval_edges[2];
        assert!(matches!(cfg.validate(), Err(CodecError::EdgesNotIncreasing { .. })));
    }

    #[test]
    fn corpus_calibration_is_equal_mass() {
        let volumes: Vec<u64> = (1..=3200).collect();
        let intervals: Vec<u64> = (0..1600).collect();
        let cfg = CodecConfig::from_corpus(&volumes, &intervals);
        cfg.validate().unwrap();
        let mut counts = [0usize; 32];
        for &v in &volumes {
            counts[cfg.volume_bucket(v) as usize] += 1;
        }
        assert!(counts.iter().all(|&c| (95..=105).contains(&c)), "{counts:?}");
    }

    #[test]
    fn json_round_trip() {
        let cfg = CodecConfig::default();
        assert_eq!(CodecConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn lob_feature_of_empty_book() {
        let cfg = CodecConfig::default();
        let open = MidPrice::from_ticks(1000);
        let f = encode_lob(&LobSnapshot::default(), Some(1003), open, &cfg);
        assert_eq!(f.volume_bins, [0; 20]);
        assert_eq!(f.mid_offset, 3);
        let f = encode_lob(&LobSnapshot::default(), None, open, &cfg);
        assert_eq!(f.mid_offset, 0);
    }

    #[test]
    fn lob_feature_saturates() {
        let cfg = CodecConfig::default();
        let big = *cfg.volume_edges.last().unwrap();
        let snap = LobSnapshot {
            asks: vec![PriceLevel { price: 1001, volume: big }],
            bids: vec![PriceLevel { price: 999, volume: 1 }],
        };
        let f = encode_lob(&snap, None, MidPrice::from_ticks(990), &cfg);
        assert_eq!(f.volume_bins[0], 31);
        assert_eq!(f.volume_bins[10], 0);
        assert_eq!(f.mid_offset, 10);
    }

    proptest! {
        #[test]
        fn buckets_are_monotone(a in 0u64..1_000_000, b in 0u64..1_000_000) {
            let cfg = CodecConfig::default();
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(cfg.volume_bucket(lo) <= cfg.volume_bucket(hi));
            prop_assert!(cfg.interval_bucket(lo) <= cfg.interval_bucket(hi));
        }

        #[test]
        fn lob_encoding_is_idempotent(
            asks in proptest::collection::vec(1u64..200_000, 0..10),
            bids in proptest::collection::vec(1u64..200_000, 0..10),
        ) {
            let cfg = CodecConfig::default();
            let snap = LobSnapshot {
                asks: asks.iter().enumerate().map(|(i, &v)| PriceLevel { price: 1001 + i as i64, volume: v }).collect(),
                bids: bids.iter().enumerate().map(|(i, &v)| PriceLevel { price: 1000 - i as i64, volume: v }).collect(),
            };
            let open = MidPrice::from_ticks(1000);
            let f = encode_lob(&snap, Some(1000), open, &cfg);
            // Re-encode a book rebuilt from each bucket's lower edge.
            let rebuilt = LobSnapshot {
                asks: snap.asks.iter().zip(&f.volume_bins[..10]).map(|(l, &b)| PriceLevel { price: l.price, volume: cfg.volume_range(b).0 }).collect(),
                bids: snap.bids.iter().zip(&f.volume_bins[10..]).map(|(l, &b)| PriceLevel { price: l.price, volume: cfg.volume_range(b).0 }).collect(),
            };
            prop_assert_eq!(encode_lob(&rebuilt, Some(1000), open, &cfg), f);
        }
    }
}
