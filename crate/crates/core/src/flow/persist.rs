//! Binary model files.
//!
//! Count models are stored as a magic tag, a small header and the sorted
//! (context key, token, count) triples, so two fits of the same corpus
//! produce identical bytes. Batch libraries store a JSON header followed by
//! fixed-size entry records. All integers are little-endian.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::batch::{BatchEntry, BatchModel, PerturbationKernel};
use super::count::{ContextCounts, CountModel, CountModelConfig};
use super::FlowError;
use crate::book::MidPrice;
use crate::codec::VOCAB_SIZE;
use crate::order_image::{OrderImage, CELLS};

const COUNT_MAGIC: &[u8; 8] = b"MARSCM1\0";
const BATCH_MAGIC: &[u8; 8] = b"MARSBM1\0";
const VERSION: u32 = 1;
/// Reserved context key under which unigram counts are stored.
const UNIGRAM_KEY: u64 = u64::MAX;

/// Human-readable summary written next to a count model file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountModelManifest {
    pub format: String,
    pub version: u32,
    pub order: usize,
    pub alpha: f64,
    pub vocab_size: u32,
    pub contexts: usize,
    pub entries: usize,
    pub tokens: u64,
}

fn format_err(msg: impl Into<String>) -> FlowError {
    FlowError::Format(msg.into())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N], FlowError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => format_err("truncated file"),
        _ => FlowError::Io(e),
    })?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32, FlowError> {
    Ok(u32::from_le_bytes(read_exact(r)?))
}

fn read_u64(r: &mut impl Read) -> Result<u64, FlowError> {
    Ok(u64::from_le_bytes(read_exact(r)?))
}

fn read_f64(r: &mut impl Read) -> Result<f64, FlowError> {
    Ok(f64::from_le_bytes(read_exact(r)?))
}

fn check_magic(r: &mut impl Read, magic: &[u8; 8]) -> Result<(), FlowError> {
    let got: [u8; 8] = read_exact(r)?;
    if &got != magic {
        return Err(format_err("bad magic"));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    Ok(())
}

impl CountModel {
    pub fn manifest(&self) -> CountModelManifest {
        CountModelManifest {
            format: "MARSCM1".into(),
            version: VERSION,
            order: self.config.order,
            alpha: self.config.alpha,
            vocab_size: VOCAB_SIZE,
            contexts: self.context_count(),
            entries: self.entry_count(),
            tokens: self.unigram.iter().map(|&c| c as u64).sum(),
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), FlowError> {
        let mut triples: Vec<(u64, u32, u32)> = self
            .contexts
            .iter()
            .flat_map(|(&k, c)| c.entries.iter().map(move |&(t, n)| (k, t, n)))
            .collect();
        triples.extend(self.unigram.iter().enumerate().filter(|(_, &c)| c > 0).map(|(t, &c)| (UNIGRAM_KEY, t as u32, c)));
        triples.sort_unstable();
        w.write_all(COUNT_MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.config.order as u32).to_le_bytes())?;
        w.write_all(&self.config.alpha.to_le_bytes())?;
        w.write_all(&(triples.len() as u64).to_le_bytes())?;
        for (k, t, n) in triples {
            w.write_all(&k.to_le_bytes())?;
            w.write_all(&t.to_le_bytes())?;
            w.write_all(&n.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, FlowError> {
        check_magic(&mut r, COUNT_MAGIC)?;
        let order = read_u32(&mut r)? as usize;
        let alpha = read_f64(&mut r)?;
        let n = read_u64(&mut r)?;
        let mut contexts: HashMap<u64, ContextCounts> = HashMap::new();
        let mut unigram = vec![0u32; VOCAB_SIZE as usize];
        for _ in 0..n {
            let key = read_u64(&mut r)?;
            let token = read_u32(&mut r)?;
            let count = read_u32(&mut r)?;
            if token >= VOCAB_SIZE {
                return Err(format_err(format!("token {token} out of range")));
            }
            if key == UNIGRAM_KEY {
                unigram[token as usize] = count;
            } else {
                let c = contexts.entry(key).or_default();
                c.total += count as u64;
                c.entries.push((token, count));
            }
        }
        if unigram.iter().all(|&c| c == 0) {
            return Err(format_err("no unigram counts"));
        }
        if !(alpha > 0.0) {
            return Err(format_err("alpha must be positive"));
        }
        Ok(Self::from_parts(CountModelConfig { order, alpha }, contexts, unigram))
    }

    /// Identity on model content; used to compare fits without touching disk.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory");
        out
    }
}

#[derive(Serialize, Deserialize)]
struct BatchHeader {
    kernel: PerturbationKernel,
    scale: [f64; 4],
    return_coef: f64,
    entries: usize,
}

impl BatchModel {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), FlowError> {
        let header = serde_json::to_vec(&BatchHeader {
            kernel: self.kernel,
            scale: self.scale,
            return_coef: self.return_coef,
            entries: self.entries.len(),
        })
        .map_err(|e| format_err(e.to_string()))?;
        w.write_all(BATCH_MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        for e in &self.entries {
            for k in e.key {
                w.write_all(&k.to_le_bytes())?;
            }
            w.write_all(&e.successor_return.to_le_bytes())?;
            w.write_all(&e.successor.ref_mid.twice().to_le_bytes())?;
            w.write_all(&e.successor.minute.to_le_bytes())?;
            w.write_all(e.successor.cells())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, FlowError> {
        check_magic(&mut r, BATCH_MAGIC)?;
        let len = read_u64(&mut r)? as usize;
        if len > 1 << 20 {
            return Err(format_err("header too large"));
        }
        let mut header = vec![0u8; len];
        r.read_exact(&mut header).map_err(|_| format_err("truncated header"))?;
        let header: BatchHeader = serde_json::from_slice(&header).map_err(|e| format_err(e.to_string()))?;
        let mut entries = Vec::with_capacity(header.entries.min(1 << 16));
        for _ in 0..header.entries {
            let key = [read_f64(&mut r)?, read_f64(&mut r)?, read_f64(&mut r)?, read_f64(&mut r)?];
            let successor_return = read_f64(&mut r)?;
            let ref_mid = MidPrice::from_twice(read_u64(&mut r)? as i64);
            let minute = read_u32(&mut r)?;
            let cells: [u8; CELLS] = read_exact(&mut r)?;
            let successor = OrderImage::from_cells(cells.to_vec(), ref_mid, minute).map_err(|e| format_err(e.to_string()))?;
            entries.push(BatchEntry { key, successor, successor_return });
        }
        Ok(Self { entries, scale: header.scale, kernel: header.kernel, return_coef: header.return_coef })
    }
}
