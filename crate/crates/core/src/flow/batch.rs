//! Minute-level batch proposals by retrieval from a library of historical
//! minute transitions.
//!
//! Each library entry pairs the summary of one minute with the order image and
//! return of the minute that followed it. Candidates for the next minute are
//! drawn from the nearest entries and perturbed with a seeded kernel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::FlowError;
use crate::book::MidPrice;
use crate::order_image::{implied_stats, ImageStats, OrderImage, CELLS, HEIGHT, MAX_CELL, WIDTH};

/// What the retrieval keys on: the realized minute's image statistics and its return.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinuteSummary {
    pub stats: ImageStats,
    /// Log return of the mid over the minute.
    pub minute_return: f64,
}

impl MinuteSummary {
    pub fn of(image: &OrderImage, minute_return: f64) -> Self {
        Self { stats: implied_stats(image), minute_return }
    }

    pub fn key(&self) -> [f64; 4] {
        let n = self.stats.order_count as f64;
        [
            (1.0 + n).ln(),
            self.stats.buy_ratio.unwrap_or(0.5),
            self.stats.net_pressure / n.max(1.0),
            self.minute_return,
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchEntry {
    pub key: [f64; 4],
    pub successor: OrderImage,
    pub successor_return: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationKernel {
    /// Standard deviation of the multiplicative log-normal noise on nonzero cells.
    pub cell_noise: f64,
    /// Largest whole-slot shift applied along the price axis.
    pub max_shift: i64,
    /// How many nearest entries a candidate may be drawn from.
    pub neighbor_pool: usize,
}

impl Default for PerturbationKernel {
    fn default() -> Self {
        Self { cell_noise: 0.3, max_shift: 1, neighbor_pool: 8 }
    }
}

impl PerturbationKernel {
    /// No perturbation: every candidate is the nearest entry's successor.
    pub fn identity() -> Self {
        Self { cell_noise: 0.0, max_shift: 0, neighbor_pool: 1 }
    }

    fn is_identity(&self) -> bool {
        self.cell_noise == 0.0 && self.max_shift == 0 && self.neighbor_pool <= 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchModel {
    pub entries: Vec<BatchEntry>,
    /// Per-dimension spread used to standardize key distances.
    pub scale: [f64; 4],
    pub kernel: PerturbationKernel,
    /// Slope of successor return on successor net pressure, fitted through the origin.
    pub return_coef: f64,
}

impl BatchModel {
    /// Builds the library from sessions of consecutive (image, minute return) pairs.
    pub fn from_sessions(sessions: &[Vec<(OrderImage, f64)>], kernel: PerturbationKernel) -> Result<Self, FlowError> {
        let entries: Vec<BatchEntry> = sessions
            .iter()
            .flat_map(|s| s.windows(2))
            .map(|w| BatchEntry {
                key: MinuteSummary::of(&w[0].0, w[0].1).key(),
                successor: w[1].0.clone(),
                successor_return: w[1].1,
            })
            .collect();
        Self::from_entries(entries, kernel)
    }

    pub fn from_entries(entries: Vec<BatchEntry>, kernel: PerturbationKernel) -> Result<Self, FlowError> {
        if entries.is_empty() {
            return Err(FlowError::EmptyLibrary);
        }
        if kernel.cell_noise < 0.0 || kernel.max_shift < 0 {
            return Err(FlowError::InvalidParameter("perturbation kernel must be non-negative".into()));
        }
        let n = entries.len() as f64;
        let scale = std::array::from_fn(|d| {
            let mean = entries.iter().map(|e| e.key[d]).sum::<f64>() / n;
            let var = entries.iter().map(|e| (e.key[d] - mean).powi(2)).sum::<f64>() / n;
            if var > 0.0 { var.sqrt() } else { 1.0 }
        });
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for e in &entries {
            let x = implied_stats(&e.successor).net_pressure;
            sxy += x * e.successor_return;
            sxx += x * x;
        }
        let return_coef = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        Ok(Self { entries, scale, kernel, return_coef })
    }

    pub fn implied_return(&self, image: &OrderImage) -> f64 {
        self.return_coef * implied_stats(image).net_pressure
    }

    /// Entry indices by increasing standardized distance to `key`, ties by index.
    pub fn nearest(&self, key: &[f64; 4]) -> Vec<usize> {
        let dist = |e: &BatchEntry| -> f64 {
            (0..4).map(|d| ((e.key[d] - key[d]) / self.scale[d]).powi(2)).sum()
        };
        let mut order: Vec<(f64, usize)> = self.entries.iter().enumerate().map(|(i, e)| (dist(e), i)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        order.into_iter().map(|(_, i)| i).collect()
    }
}

/// `n` candidate images for the minute following `query`, each stamped with
/// `ref_mid` and `minute`. Every candidate draws from its own child seed, so
/// the set depends only on the state of `rng`.
pub fn generate_candidates(
    model: &BatchModel,
    query: &MinuteSummary,
    n: usize,
    ref_mid: MidPrice,
    minute: u32,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<OrderImage>, FlowError> {
    if n == 0 {
        return Err(FlowError::NoCandidates);
    }
    let order = model.nearest(&query.key());
    let kernel = model.kernel;
    let pool = kernel.neighbor_pool.clamp(1, order.len());
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut local = ChaCha8Rng::seed_from_u64(rng.random());
        let mut image = if kernel.is_identity() {
            model.entries[order[0]].successor.clone()
        } else {
            let base = &model.entries[order[local.random_range(0..pool)]].successor;
            perturb(base, &kernel, &mut local)
        };
        image.ref_mid = ref_mid;
        image.minute = minute;
        out.push(image);
    }
    Ok(out)
}

fn perturb(base: &OrderImage, kernel: &PerturbationKernel, rng: &mut ChaCha8Rng) -> OrderImage {
    let shift = if kernel.max_shift > 0 { rng.random_range(-kernel.max_shift..=kernel.max_shift) } else { 0 };
    let mut cells = vec![0u8; CELLS];
    for (i, &v) in base.cells().iter().enumerate() {
        if v == 0 {
            continue;
        }
        let w = (i % WIDTH) as i64 + shift;
        if !(0..WIDTH as i64).contains(&w) {
            continue;
        }
        let scaled = if kernel.cell_noise > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            (v as f64 * (kernel.cell_noise * z).exp()).round()
        } else {
            v as f64
        };
        let row = i / WIDTH;
        cells[row * WIDTH + w as usize] = scaled.clamp(0.0, MAX_CELL as f64) as u8;
    }
    debug_assert_eq!(CELLS, 3 * HEIGHT * WIDTH);
    OrderImage::from_cells(cells, base.ref_mid, base.minute).expect("cells clipped to range")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::book::OrderKind;

    fn img(seed: u8) -> OrderImage {
        let mut i = OrderImage::empty(MidPrice::from_ticks(1000), 0);
        i.set(OrderKind::Bid, seed % 32, 16 + seed % 8, 1 + seed as u32);
        i.set(OrderKind::Ask, 2, 14, 3);
        i
    }

    fn library() -> BatchModel {
        let session: Vec<(OrderImage, f64)> = (0..20u8).map(|i| (img(i), (i as f64 - 10.0) * 1e-4)).collect();
        BatchModel::from_sessions(&[session], PerturbationKernel::identity()).unwrap()
    }

    #[test]
    fn exact_key_retrieves_stored_successor() {
        let model = library();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (i, e) in model.entries.iter().enumerate() {
            let q = MinuteSummary::of(&img(i as u8), (i as f64 - 10.0) * 1e-4);
            assert_eq!(q.key(), e.key);
            let c = generate_candidates(&model, &q, 3, e.successor.ref_mid, e.successor.minute, &mut rng).unwrap();
            assert!(c.iter().all(|x| x == &e.successor));
        }
    }

    #[test]
    fn perturbed_candidates_are_seeded() {
        let mut model = library();
        model.kernel = PerturbationKernel::default();
        let q = MinuteSummary::of(&img(3), 0.0);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            generate_candidates(&model, &q, 8, MidPrice::from_ticks(900), 7, &mut rng).unwrap()
        };
        let a = run(1);
        assert_eq!(a, run(1));
        assert_ne!(a, run(2));
        assert!(a.iter().all(|c| c.ref_mid == MidPrice::from_ticks(900) && c.minute == 7));
        assert!(a.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn empty_library_and_zero_candidates_are_errors() {
        assert!(matches!(BatchModel::from_sessions(&[vec![(img(0), 0.0)]], PerturbationKernel::default()), Err(FlowError::EmptyLibrary)));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q = MinuteSummary::of(&img(0), 0.0);
        assert!(matches!(generate_candidates(&library(), &q, 0, MidPrice::from_ticks(1), 0, &mut rng), Err(FlowError::NoCandidates)));
    }

    #[test]
    fn return_coefficient_is_least_squares_through_origin() {
        let mk = |p: u32| {
            let mut i = OrderImage::empty(MidPrice::from_ticks(1000), 0);
            i.set(OrderKind::Bid, 0, 17, p);
            i
        };
        let session = vec![(mk(1), 0.0), (mk(2), 0.2), (mk(4), 0.3)];
        let m = BatchModel::from_sessions(&[session], PerturbationKernel::identity()).unwrap();
        // Successor pressures 2 and 4 with returns 0.2 and 0.3.
        let expected = (2.0 * 0.2 + 4.0 * 0.3) / (4.0 + 16.0);
        assert!((m.return_coef - expected).abs() < 1e-12);
        assert!((m.implied_return(&mk(10)) - 10.0 * expected).abs() < 1e-12);
    }
}
