//! Order-log files: CSV `seq,timestamp_ms,kind,price_ticks,volume` and the
//! equivalent 33-byte little-endian binary record.

use std::io::{Read, Write};

use thiserror::Error;

use super::{Order, OrderKind, OrderSource, Price};

pub const CSV_HEADER: [&str; 5] = ["seq", "timestamp_ms", "kind", "price_ticks", "volume"];
const RECORD_BYTES: usize = 8 + 8 + 1 + 8 + 8;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing or malformed header (expected {expected})")]
    Header { expected: String },
    #[error("line {line}: {msg}")]
    Row { line: u64, msg: String },
    #[error("binary log length {0} is not a multiple of {RECORD_BYTES}")]
    Truncated(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LogRecord {
    pub seq: u64,
    pub timestamp_ms: u64,
    pub kind: OrderKind,
    pub price: Price,
    pub volume: u64,
}

impl LogRecord {
    pub fn from_order(order: &Order, timestamp_ms: u64) -> Self {
        Self {
            seq: order.id,
            timestamp_ms,
            kind: order.kind,
            price: order.price,
            volume: order.volume,
        }
    }

    /// Converts to an order whose interval is measured from `prev_ts`.
    pub fn to_order(&self, prev_ts: u64) -> Order {
        Order::new(self.seq, self.kind, self.price, self.volume)
            .with_interval(self.timestamp_ms.saturating_sub(prev_ts))
            .with_source(OrderSource::Replay)
    }
}

/// Orders with intervals taken from consecutive timestamps, the first measured from `start_ms`.
pub fn orders_from_records(records: &[LogRecord], start_ms: u64) -> Vec<Order> {
    let mut prev = start_ms;
    records
        .iter()
        .map(|r| {
            let o = r.to_order(prev);
            prev = prev.max(r.timestamp_ms);
            o
        })
        .collect()
}

pub fn write_csv_log<W: Write>(writer: W, records: &[LogRecord]) -> Result<(), LogError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.seq.to_string(),
            r.timestamp_ms.to_string(),
            r.kind.code().to_string(),
            r.price.to_string(),
            r.volume.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv_log<R: Read>(reader: R) -> Result<Vec<LogRecord>, LogError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut rows = rdr.records();
    let header_ok = match rows.next() {
        Some(h) => {
            let h = h?;
            h.iter().take(5).eq(CSV_HEADER.iter().copied())
        }
        None => false,
    };
    if !header_ok {
        return Err(LogError::Header { expected: CSV_HEADER.join(",") });
    }
    let mut out = Vec::new();
    for row in rows {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize| -> Result<&str, LogError> {
            row.get(i).ok_or_else(|| LogError::Row { line, msg: format!("missing column {}", CSV_HEADER[i]) })
        };
        let num = |i: usize| -> Result<i64, LogError> {
            field(i)?.trim().parse::<i64>().map_err(|e| LogError::Row {
                line,
                msg: format!("{}: {e}", CSV_HEADER[i]),
            })
        };
        let kind = OrderKind::from_code(field(2)?.trim()).ok_or_else(|| LogError::Row {
            line,
            msg: format!("unknown kind {:?}", field(2).unwrap_or("")),
        })?;
        let seq = num(0)?;
        let ts = num(1)?;
        let volume = num(4)?;
        if seq < 0 || ts < 0 || volume < 0 {
            return Err(LogError::Row { line, msg: "negative seq, timestamp or volume".into() });
        }
        out.push(LogRecord {
            seq: seq as u64,
            timestamp_ms: ts as u64,
            kind,
            price: num(3)?,
            volume: volume as u64,
        });
    }
    Ok(out)
}

pub fn write_binary_log<W: Write>(mut writer: W, records: &[LogRecord]) -> Result<(), LogError> {
    let mut buf = Vec::with_capacity(records.len() * RECORD_BYTES);
    for r in records {
        buf.extend_from_slice(&r.seq.to_le_bytes());
        buf.extend_from_slice(&r.timestamp_ms.to_le_bytes());
        buf.push(r.kind.code() as u8);
        buf.extend_from_slice(&r.price.to_le_bytes());
        buf.extend_from_slice(&r.volume.to_le_bytes());
    }
    writer.write_all(&buf)?;
    Ok(())
}

pub fn read_binary_log<R: Read>(mut reader: R) -> Result<Vec<LogRecord>, LogError> {
    let mut buf = Vec::new();
    reader.read_to_end(&mut buf)?;
    if buf.len() % RECORD_BYTES != 0 {
        return Err(LogError::Truncated(buf.len()));
    }
    let u64_at = |b: &[u8], at: usize| u64::from_le_bytes(b[at..at + 8].try_into().unwrap());
    buf.chunks_exact(RECORD_BYTES)
        .enumerate()
        .map(|(i, rec)| {
            let code = (rec[16] as char).to_string();
            let kind = OrderKind::from_code(&code).ok_or(LogError::Row {
                line: i as u64 + 1,
                msg: format!("unknown kind byte {}", rec[16]),
            })?;
            Ok(LogRecord {
                seq: u64_at(rec, 0),
                timestamp_ms: u64_at(rec, 8),
                kind,
                price: u64_at(rec, 17) as i64,
                volume: u64_at(rec, 25),
            })
        })
        .collect()
}
