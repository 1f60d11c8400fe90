use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::AgentReport;
use crate::book::{InstrumentId, LobSnapshot, MidPrice, Order, OrderKind, OrderSource, Trade};
use crate::codec::CodecConfig;
use crate::order_image::{batch_to_image, OrderImage};

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed trajectory: {0}")]
    Format(String),
}

/// One order that reached the book and the trades it caused.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimEvent {
    pub seq: u64,
    pub timestamp_ms: u64,
    pub order: Order,
    pub trades: Vec<Trade>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinuteRecord {
    pub minute: u32,
    pub start_ms: u64,
    pub open_mid: MidPrice,
    pub close_mid: MidPrice,
    pub volume: u64,
    pub trades: u32,
    pub events: u32,
    pub injected: u32,
    pub spread: Option<i64>,
}

impl MinuteRecord {
    pub fn log_return(&self) -> f64 {
        (self.close_mid.ticks() / self.open_mid.ticks()).ln()
    }
}

/// The batch selection made at a minute boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinuteTarget {
    pub minute: u32,
    /// Retrieval key of the realized minute that led to this selection.
    pub key: [f64; 4],
    pub implied_returns: Vec<f64>,
    pub selected: usize,
    pub target_return: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryManifest {
    pub seed: u64,
    pub config_hash: String,
    pub flow: String,
    pub final_book_hash: String,
    pub origin_ms: u64,
    pub horizon_minutes: u32,
    pub starting_events: usize,
    pub events: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub manifest: TrajectoryManifest,
    pub events: Vec<SimEvent>,
    pub minutes: Vec<MinuteRecord>,
    pub targets: Vec<MinuteTarget>,
    pub snapshots: Vec<(u32, LobSnapshot)>,
    pub agents: Vec<AgentReport>,
}

#[derive(Serialize, Deserialize)]
struct EventRow {
    seq: u64,
    timestamp_ms: u64,
    order_id: u64,
    instrument: u32,
    kind: String,
    price_ticks: i64,
    volume: u64,
    interval_ms: u64,
    source: String,
    target: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct TradeRow {
    event_seq: u64,
    trade_seq: u64,
    timestamp_ms: u64,
    price_ticks: i64,
    volume: u64,
    aggressor: String,
    maker: u64,
    taker: u64,
}

#[derive(Serialize, Deserialize)]
struct MinuteRow {
    minute: u32,
    start_ms: u64,
    open_mid: f64,
    close_mid: f64,
    volume: u64,
    trades: u32,
    events: u32,
    injected: u32,
    spread: Option<i64>,
}

fn mid_from_f64(x: f64) -> MidPrice {
    MidPrice::from_twice((x * 2.0).round() as i64)
}

impl Trajectory {
    /// Events after the starting sequence.
    pub fn simulated_events(&self) -> &[SimEvent] {
        &self.events[self.manifest.starting_events.min(self.events.len())..]
    }

    pub fn minute_returns(&self) -> Vec<f64> {
        self.minutes.iter().map(MinuteRecord::log_return).collect()
    }

    /// Close mids in ticks, preceded by the first minute's open.
    pub fn mid_path(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.minutes.first().map(|m| m.open_mid.ticks()).into_iter().collect();
        out.extend(self.minutes.iter().map(|m| m.close_mid.ticks()));
        out
    }

    /// Each simulated minute as an order image referenced to its opening mid,
    /// paired with its log return.
    pub fn minute_images(&self, codec: &CodecConfig) -> Vec<(OrderImage, f64)> {
        let events = self.simulated_events();
        let mut cursor = 0;
        self.minutes
            .iter()
            .map(|m| {
                let end = m.start_ms + super::MINUTE_MS;
                let begin = cursor;
                while cursor < events.len() && events[cursor].timestamp_ms < end {
                    cursor += 1;
                }
                let orders: Vec<Order> = events[begin..cursor].iter().map(|e| e.order.clone()).collect();
                (batch_to_image(&orders, m.open_mid, m.minute, codec), m.log_return())
            })
            .collect()
    }

    /// Writes `events.csv`, `trades.csv`, `minutes.csv`, `targets.json`,
    /// `snapshots.json` and `manifest.json`, plus `agents.json` when agents
    /// took part.
    pub fn write_dir(&self, dir: &Path) -> Result<(), TrajectoryError> {
        std::fs::create_dir_all(dir)?;
        let mut ev = csv::Writer::from_path(dir.join("events.csv"))?;
        let mut tr = csv::Writer::from_path(dir.join("trades.csv"))?;
        for e in &self.events {
            ev.serialize(EventRow {
                seq: e.seq,
                timestamp_ms: e.timestamp_ms,
                order_id: e.order.id,
                instrument: e.order.instrument.0,
                kind: e.order.kind.code().to_string(),
                price_ticks: e.order.price,
                volume: e.order.volume,
                interval_ms: e.order.interval_ms,
                source: e.order.source.as_str().to_string(),
                target: e.order.target,
            })?;
            for t in &e.trades {
                tr.serialize(TradeRow {
                    event_seq: e.seq,
                    trade_seq: t.seq,
                    timestamp_ms: e.timestamp_ms,
                    price_ticks: t.price,
                    volume: t.volume,
                    aggressor: t.aggressor.kind().code().to_string(),
                    maker: t.maker,
                    taker: t.taker,
                })?;
            }
        }
        ev.flush()?;
        tr.flush()?;
        write_minutes_csv(&dir.join("minutes.csv"), &self.minutes)?;
        write_json(&dir.join("targets.json"), &self.targets)?;
        write_json(&dir.join("snapshots.json"), &self.snapshots)?;
        write_json(&dir.join("manifest.json"), &self.manifest)?;
        if !self.agents.is_empty() {
            write_json(&dir.join("agents.json"), &self.agents)?;
        }
        Ok(())
    }

    /// Loads a directory written by [`Trajectory::write_dir`].
    pub fn read_dir(dir: &Path) -> Result<Self, TrajectoryError> {
        let manifest = Self::read_manifest(dir)?;
        let mut events = Vec::new();
        for row in csv::Reader::from_path(dir.join("events.csv"))?.deserialize() {
            let r: EventRow = row?;
            let kind = OrderKind::from_code(&r.kind).ok_or_else(|| TrajectoryError::Format(format!("event {}: kind {:?}", r.seq, r.kind)))?;
            let source = OrderSource::parse(&r.source).ok_or_else(|| TrajectoryError::Format(format!("event {}: source {:?}", r.seq, r.source)))?;
            let order = Order {
                id: r.order_id,
                instrument: InstrumentId(r.instrument),
                kind,
                price: r.price_ticks,
                volume: r.volume,
                interval_ms: r.interval_ms,
                source,
                target: r.target,
            };
            events.push(SimEvent { seq: r.seq, timestamp_ms: r.timestamp_ms, order, trades: Vec::new() });
        }
        for row in csv::Reader::from_path(dir.join("trades.csv"))?.deserialize() {
            let r: TradeRow = row?;
            let aggressor = OrderKind::from_code(&r.aggressor)
                .and_then(OrderKind::side)
                .ok_or_else(|| TrajectoryError::Format(format!("trade {}: aggressor {:?}", r.trade_seq, r.aggressor)))?;
            let event = events
                .get_mut(r.event_seq as usize)
                .filter(|e| e.seq == r.event_seq)
                .ok_or_else(|| TrajectoryError::Format(format!("trade {} refers to unknown event {}", r.trade_seq, r.event_seq)))?;
            event.trades.push(Trade { price: r.price_ticks, volume: r.volume, aggressor, maker: r.maker, taker: r.taker, seq: r.trade_seq });
        }
        let agents_path = dir.join("agents.json");
        let agents = if agents_path.exists() { read_json(&agents_path)? } else { Vec::new() };
        Ok(Self {
            manifest,
            events,
            minutes: read_minutes_csv(&dir.join("minutes.csv"))?,
            targets: read_json(&dir.join("targets.json"))?,
            snapshots: read_json(&dir.join("snapshots.json"))?,
            agents,
        })
    }

    pub fn read_manifest(dir: &Path) -> Result<TrajectoryManifest, TrajectoryError> {
        read_json(&dir.join("manifest.json"))
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), TrajectoryError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.flush()?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, TrajectoryError> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn write_minutes_csv(path: &Path, minutes: &[MinuteRecord]) -> Result<(), TrajectoryError> {
    let mut w = csv::Writer::from_path(path)?;
    for m in minutes {
        w.serialize(MinuteRow {
            minute: m.minute,
            start_ms: m.start_ms,
            open_mid: m.open_mid.ticks(),
            close_mid: m.close_mid.ticks(),
            volume: m.volume,
            trades: m.trades,
            events: m.events,
            injected: m.injected,
            spread: m.spread,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_minutes_csv(path: &Path) -> Result<Vec<MinuteRecord>, TrajectoryError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        let m: MinuteRow = row?;
        out.push(MinuteRecord {
            minute: m.minute,
            start_ms: m.start_ms,
            open_mid: mid_from_f64(m.open_mid),
            close_mid: mid_from_f64(m.close_mid),
            volume: m.volume,
            trades: m.trades,
            events: m.events,
            injected: m.injected,
            spread: m.spread,
        });
    }
    Ok(out)
}

/// Pearson correlation of the two minute-return series. Absent when the
/// lengths differ, a series is shorter than two, or either has zero variance.
pub fn trajectory_correlation(a: &Trajectory, b: &Trajectory) -> Option<f64> {
    crate::analytics::pearson(&a.minute_returns(), &b.minute_returns())
}
