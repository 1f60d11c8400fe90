//! Minute batches of orders as 3 × 32 × 32 count grids ("order images").
//!
//! Channel is the order kind (Bid, Ask, Cancel), height the volume bucket and
//! width the price slot relative to the minute-open mid. Cell values count
//! orders and saturate at 100.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::book::{MidPrice, Order, OrderKind, OrderSource};
use crate::codec::CodecConfig;

pub const CHANNELS: usize = 3;
pub const HEIGHT: usize = 32;
pub const WIDTH: usize = 32;
pub const CELLS: usize = CHANNELS * HEIGHT * WIDTH;
pub const MAX_CELL: u8 = 100;
pub const CENTER_SLOT: i64 = 16;

const MINUTE_MS: u64 = 60_000;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("sidecar: {0}")]
    Json(#[from] serde_json::Error),
    #[error("raw image must be {CELLS} bytes, got {0}")]
    Size(usize),
    #[error("cell value {0} exceeds {MAX_CELL}")]
    CellRange(u8),
    #[error("png: {0}")]
    Png(#[from] png::EncodingError),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OrderImage {
    cells: Vec<u8>,
    pub ref_mid: MidPrice,
    pub minute: u32,
}

#[inline]
fn cell_index(channel: usize, height: usize, width: usize) -> usize {
    (channel * HEIGHT + height) * WIDTH + width
}

impl OrderImage {
    pub fn empty(ref_mid: MidPrice, minute: u32) -> Self {
        Self { cells: vec![0; CELLS], ref_mid, minute }
    }

    pub fn from_cells(cells: Vec<u8>, ref_mid: MidPrice, minute: u32) -> Result<Self, ImageError> {
        if cells.len() != CELLS {
            return Err(ImageError::Size(cells.len()));
        }
        if let Some(&bad) = cells.iter().find(|&&v| v > MAX_CELL) {
            return Err(ImageError::CellRange(bad));
        }
        Ok(Self { cells, ref_mid, minute })
    }

    pub fn get(&self, kind: OrderKind, volume_bucket: u8, price_slot: u8) -> u8 {
        self.cells[cell_index(kind.channel(), volume_bucket as usize, price_slot as usize)]
    }

    /// Sets a cell, clipping to [0, 100].
    pub fn set(&mut self, kind: OrderKind, volume_bucket: u8, price_slot: u8, value: u32) {
        self.cells[cell_index(kind.channel(), volume_bucket as usize, price_slot as usize)] =
            value.min(MAX_CELL as u32) as u8;
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn cells_mut(&mut self) -> &mut [u8] {
        &mut self.cells
    }

    /// Iterates nonzero cells as (kind, volume bucket, price slot, value).
    pub fn nonzero(&self) -> impl Iterator<Item = (OrderKind, u8, u8, u8)> + '_ {
        self.cells.iter().enumerate().filter(|(_, &v)| v > 0).map(|(i, &v)| {
            let channel = i / (HEIGHT * WIDTH);
            let h = (i / WIDTH) % HEIGHT;
            let w = i % WIDTH;
            (OrderKind::from_channel(channel).unwrap(), h as u8, w as u8, v)
        })
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().map(|&v| v as u64).sum()
    }

    /// Writes the raw grid and a `{ref_mid, minute}` JSON sidecar.
    pub fn save(&self, raw_path: &Path, sidecar_path: &Path) -> Result<(), ImageError> {
        std::fs::File::create(raw_path)?.write_all(&self.cells)?;
        let sidecar = Sidecar { ref_mid: self.ref_mid.ticks(), minute: self.minute };
        std::fs::write(sidecar_path, serde_json::to_vec_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load(raw_path: &Path, sidecar_path: &Path) -> Result<Self, ImageError> {
        let mut cells = Vec::new();
        std::fs::File::open(raw_path)?.read_to_end(&mut cells)?;
        let sidecar: Sidecar = serde_json::from_slice(&std::fs::read(sidecar_path)?)?;
        let ref_mid = MidPrice::from_twice((sidecar.ref_mid * 2.0).round() as i64);
        Self::from_cells(cells, ref_mid, sidecar.minute)
    }

    /// Debug PNG: red = bids, green = asks, blue = cancels; rows are volume buckets.
    pub fn write_png<W: Write>(&self, writer: W) -> Result<(), ImageError> {
        let mut enc = png::Encoder::new(writer, WIDTH as u32, HEIGHT as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut data = Vec::with_capacity(WIDTH * HEIGHT * 3);
        for h in 0..HEIGHT {
            for w in 0..WIDTH {
                for c in 0..CHANNELS {
                    let v = self.cells[cell_index(c, h, w)] as u32;
                    data.push((v * 255 / MAX_CELL as u32) as u8);
                }
            }
        }
        let mut writer = enc.write_header()?;
        writer.write_image_data(&data)?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    ref_mid: f64,
    minute: u32,
}

pub fn batch_to_image(orders: &[Order], ref_mid: MidPrice, minute: u32, cfg: &CodecConfig) -> OrderImage {
    let mut counts = vec![0u32; CELLS];
    for o in orders {
        let h = cfg.volume_bucket(o.volume) as usize;
        let w = cfg.price_slot(o.price, ref_mid) as usize;
        counts[cell_index(o.kind.channel(), h, w)] += 1;
    }
    OrderImage {
        cells: counts.into_iter().map(|c| c.min(MAX_CELL as u32) as u8).collect(),
        ref_mid,
        minute,
    }
}

/// Expands each cell into that many orders, with volumes drawn uniformly in
/// the cell's volume bucket and the price the slot stands for. Arrival order
/// is shuffled by `seed`; intervals spread the batch evenly over one minute.
pub fn image_to_batch(img: &OrderImage, seed: u64, cfg: &CodecConfig) -> Vec<Order> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut orders = Vec::with_capacity(img.total() as usize);
    for (kind, h, w, v) in img.nonzero() {
        let (lo, hi) = cfg.volume_range(h);
        let price = cfg.slot_price(w, img.ref_mid).max(1);
        for _ in 0..v {
            let volume = rng.random_range(lo..hi);
            orders.push(Order::new(0, kind, price, volume).with_source(OrderSource::Generated));
        }
    }
    orders.shuffle(&mut rng);
    let interval = if orders.is_empty() { 0 } else { MINUTE_MS / orders.len() as u64 };
    for (i, o) in orders.iter_mut().enumerate() {
        o.id = i as u64;
        o.interval_ms = interval;
    }
    orders
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageStats {
    pub order_count: u64,
    /// Σ bid / (Σ bid + Σ ask); absent without limit orders.
    pub buy_ratio: Option<f64>,
    /// Σ value · (slot − 16) over bids and asks. Bids above the mid and asks
    /// below it both count as aggressive, so aggressive buying is positive
    /// and aggressive selling negative.
    pub net_pressure: f64,
}

pub fn implied_stats(img: &OrderImage) -> ImageStats {
    let (mut bid, mut ask, mut pressure) = (0u64, 0u64, 0i64);
    for (kind, _h, w, v) in img.nonzero() {
        let offset = w as i64 - CENTER_SLOT;
        match kind {
            OrderKind::Bid => {
                bid += v as u64;
                pressure += v as i64 * offset;
            }
            OrderKind::Ask => {
                ask += v as u64;
                pressure += v as i64 * offset;
            }
            OrderKind::Cancel => {}
        }
    }
    ImageStats {
        order_count: img.total(),
        buy_ratio: (bid + ask > 0).then(|| bid as f64 / (bid + ask) as f64),
        net_pressure: pressure as f64,
    }
}
