use serde::{Deserialize, Serialize};

/// Price in integer ticks.
pub type Price = i64;

/// Unique order identifier.
pub type OrderId = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OrderKind {
    Ask,
    Bid,
    Cancel,
}

impl OrderKind {
    pub const ALL: [OrderKind; 3] = [OrderKind::Ask, OrderKind::Bid, OrderKind::Cancel];

    /// Position of the kind in the token tuple (Ask, Bid, Cancel).
    pub fn token_index(self) -> u32 {
        match self {
            OrderKind::Ask => 0,
            OrderKind::Bid => 1,
            OrderKind::Cancel => 2,
        }
    }

    pub fn from_token_index(index: u32) -> Option<Self> {
        match index {
            0 => Some(OrderKind::Ask),
            1 => Some(OrderKind::Bid),
            2 => Some(OrderKind::Cancel),
            _ => None,
        }
    }

    /// Channel in an order image (Bid, Ask, Cancel).
    pub fn channel(self) -> usize {
        match self {
            OrderKind::Bid => 0,
            OrderKind::Ask => 1,
            OrderKind::Cancel => 2,
        }
    }

    pub fn from_channel(channel: usize) -> Option<Self> {
        match channel {
            0 => Some(OrderKind::Bid),
            1 => Some(OrderKind::Ask),
            2 => Some(OrderKind::Cancel),
            _ => None,
        }
    }

    pub fn code(self) -> char {
        match self {
            OrderKind::Ask => 'A',
            OrderKind::Bid => 'B',
            OrderKind::Cancel => 'C',
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        match code {
            "A" => Some(OrderKind::Ask),
            "B" => Some(OrderKind::Bid),
            "C" => Some(OrderKind::Cancel),
            _ => None,
        }
    }

    pub fn side(self) -> Option<Side> {
        match self {
            OrderKind::Ask => Some(Side::Ask),
            OrderKind::Bid => Some(Side::Bid),
            OrderKind::Cancel => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Bid,
    Ask,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Bid => Side::Ask,
            Side::Ask => Side::Bid,
        }
    }

    pub fn kind(self) -> OrderKind {
        match self {
            Side::Bid => OrderKind::Bid,
            Side::Ask => OrderKind::Ask,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OrderSource {
    #[default]
    Generated,
    Injected,
    Replay,
}

impl OrderSource {
    pub fn as_str(self) -> &'static str {
        match self {
            OrderSource::Generated => "generated",
            OrderSource::Injected => "injected",
            OrderSource::Replay => "replay",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "generated" => Some(OrderSource::Generated),
            "injected" => Some(OrderSource::Injected),
            "replay" => Some(OrderSource::Replay),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InstrumentId(pub u32);

/// One market event: a limit order on either side or a cancellation.
///
/// `target` is only meaningful for cancels. When present the cancel removes
/// volume from that specific resting order instead of the oldest order
/// resting at `price`; execution agents use it to withdraw their own quotes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Order {
    pub id: OrderId,
    pub instrument: InstrumentId,
    pub kind: OrderKind,
    pub price: Price,
    pub volume: u64,
    pub interval_ms: u64,
    pub source: OrderSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<OrderId>,
}

impl Order {
    pub fn new(id: OrderId, kind: OrderKind, price: Price, volume: u64) -> Self {
        Self {
            id,
            instrument: InstrumentId::default(),
            kind,
            price,
            volume,
            interval_ms: 0,
            source: OrderSource::Generated,
            target: None,
        }
    }

    pub fn bid(id: OrderId, price: Price, volume: u64) -> Self {
        Self::new(id, OrderKind::Bid, price, volume)
    }

    pub fn ask(id: OrderId, price: Price, volume: u64) -> Self {
        Self::new(id, OrderKind::Ask, price, volume)
    }

    pub fn cancel(id: OrderId, price: Price, volume: u64) -> Self {
        Self::new(id, OrderKind::Cancel, price, volume)
    }

    pub fn with_interval(mut self, interval_ms: u64) -> Self {
        self.interval_ms = interval_ms;
        self
    }

    pub fn with_source(mut self, source: OrderSource) -> Self {
        self.source = source;
        self
    }

    pub fn with_target(mut self, target: OrderId) -> Self {
        self.target = Some(target);
        self
    }

    pub fn with_instrument(mut self, instrument: InstrumentId) -> Self {
        self.instrument = instrument;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Trade {
    pub price: Price,
    pub volume: u64,
    pub aggressor: Side,
    pub maker: OrderId,
    pub taker: OrderId,
    pub seq: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchWarning {
    /// Fewer shares were resting than the cancel asked for.
    PartialCancel { price: Price, requested: u64, removed: u64 },
    /// Nothing rests at the cancel price on either side.
    NothingToCancel { price: Price },
    /// A targeted cancel named an order that is no longer resting.
    UnknownTarget { target: OrderId },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    pub trades: Vec<Trade>,
    pub accepted: bool,
    /// Volume left resting from the incoming limit order.
    pub resting: u64,
    /// Volume removed by a cancel.
    pub cancelled: u64,
    pub warnings: Vec<MatchWarning>,
}

impl MatchResult {
    pub fn traded_volume(&self) -> u64 {
        self.trades.iter().map(|t| t.volume).sum()
    }
}

/// Twice the mid-price in ticks, kept integral so half-tick mids are exact.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MidPrice(i64);

impl MidPrice {
    pub fn from_twice(twice: i64) -> Self {
        MidPrice(twice)
    }

    pub fn from_ticks(price: Price) -> Self {
        MidPrice(price * 2)
    }

    pub fn from_quotes(ask: Price, bid: Price) -> Self {
        MidPrice(ask + bid)
    }

    pub fn twice(self) -> i64 {
        self.0
    }

    pub fn ticks(self) -> f64 {
        self.0 as f64 / 2.0
    }

    /// Whole-tick offset of `price` from the mid, rounded toward negative infinity.
    pub fn offset_of(self, price: Price) -> i64 {
        (2 * price - self.0).div_euclid(2)
    }

    /// Smallest price whose offset from the mid equals `offset`.
    pub fn price_at_offset(self, offset: i64) -> Price {
        (self.0 + 1).div_euclid(2) + offset
    }

    /// Whole ticks between two mids, rounded toward negative infinity.
    pub fn ticks_since(self, origin: MidPrice) -> i64 {
        (self.0 - origin.0).div_euclid(2)
    }
}
