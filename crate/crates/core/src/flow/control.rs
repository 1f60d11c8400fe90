use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FlowError;
use crate::book::OrderKind;
use crate::codec::{OrderToken, INTERVAL_BUCKETS};
use crate::order_image::{OrderImage, MAX_CELL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlKind {
    None,
    /// Follow a recorded curve of minute returns from the first simulated minute.
    ReplayCurve,
    /// A scenario window: the first `context_minutes` returns describe history
    /// that precedes the simulation, the rest are targets.
    Scenario,
}

/// Minute-level returns the generated flow should track.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSignal {
    pub kind: ControlKind,
    pub returns: Vec<f64>,
    pub context_minutes: usize,
}

impl Default for ControlSignal {
    fn default() -> Self {
        Self::none()
    }
}

impl ControlSignal {
    pub fn none() -> Self {
        Self { kind: ControlKind::None, returns: Vec::new(), context_minutes: 0 }
    }

    pub fn replay_curve(returns: Vec<f64>) -> Self {
        Self { kind: ControlKind::ReplayCurve, returns, context_minutes: 0 }
    }

    pub fn scenario(returns: Vec<f64>, context_minutes: usize) -> Self {
        Self { kind: ControlKind::Scenario, returns, context_minutes }
    }

    /// Target return for simulated minute `minute`, if any.
    pub fn target_for(&self, minute: usize) -> Option<f64> {
        match self.kind {
            ControlKind::None => None,
            ControlKind::ReplayCurve => self.returns.get(minute).copied(),
            ControlKind::Scenario => self.returns.get(self.context_minutes + minute).copied(),
        }
    }

    pub fn is_active(&self) -> bool {
        self.kind != ControlKind::None
    }
}

/// Index of the candidate whose implied return is closest to the control's
/// target for `minute`; ties go to the lowest index. Without a target the
/// pick is uniform.
pub fn select_batch(
    candidates: &[OrderImage],
    implied_return: impl Fn(&OrderImage) -> f64,
    control: &ControlSignal,
    minute: usize,
    rng: &mut ChaCha8Rng,
) -> Result<usize, FlowError> {
    if candidates.is_empty() {
        return Err(FlowError::NoCandidates);
    }
    let Some(target) = control.target_for(minute) else {
        return Ok(rng.random_range(0..candidates.len()));
    };
    let mut best = (0, f64::INFINITY);
    for (i, c) in candidates.iter().enumerate() {
        let gap = (implied_return(c) - target).abs();
        if gap < best.1 {
            best = (i, gap);
        }
    }
    Ok(best.0)
}

/// A minute-level target image with the reweighting strength applied to it.
#[derive(Clone, Debug)]
pub struct EnsembleTarget {
    image: OrderImage,
    lambda: f64,
    factors: [f64; MAX_CELL as usize + 1],
}

impl EnsembleTarget {
    pub fn new(image: OrderImage, lambda: f64) -> Self {
        let factors = std::array::from_fn(|v| (1.0 + v as f64).powf(lambda));
        Self { image, lambda, factors }
    }

    pub fn image(&self) -> &OrderImage {
        &self.image
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `exp(λ · ln(1 + count))` for a target cell.
    pub fn factor(&self, kind: OrderKind, volume_bucket: u8, price_slot: u8) -> f64 {
        self.factors[self.image.get(kind, volume_bucket, price_slot) as usize]
    }
}

/// Reweights a full-vocabulary distribution toward `target` and renormalizes:
/// `p'(t) ∝ p(t) · exp(λ · ln(1 + target[cell(t)]))`. Token price slots are
/// read directly against the target's slots, so both must share a reference
/// mid. Zero-probability tokens stay at zero.
pub fn ensemble_reweight(dist: &[f64], target: &OrderImage, lambda: f64) -> Vec<f64> {
    let t = EnsembleTarget::new(target.clone(), lambda);
    let mut out: Vec<f64> = dist
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let parts = OrderToken::new(i as u32).expect("distribution over the vocabulary").parts();
            p * t.factor(parts.kind, parts.volume_bucket, parts.price_bucket)
        })
        .collect();
    let z: f64 = out.iter().sum();
    if z > 0.0 {
        out.iter_mut().for_each(|x| *x /= z);
    }
    debug_assert_eq!(dist.len() % INTERVAL_BUCKETS as usize, 0);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::book::MidPrice;
    use crate::codec::{TokenParts, VOCAB_SIZE};
    use rand::SeedableRng;

    fn image() -> OrderImage {
        let mut img = OrderImage::empty(MidPrice::from_ticks(100), 0);
        img.set(OrderKind::Bid, 3, 16, 9);
        img
    }

    #[test]
    fn reweight_matches_formula() {
        let v = VOCAB_SIZE as usize;
        let dist = vec![1.0 / v as f64; v];
        let hot = OrderToken::from_parts(TokenParts { kind: OrderKind::Bid, price_bucket: 16, volume_bucket: 3, interval_bucket: 4 });
        let out = ensemble_reweight(&dist, &image(), 0.5);
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let ratio = out[hot.index() as usize] / out[0];
        assert!((ratio - 10f64.powf(0.5)).abs() < 1e-9);
    }

    #[test]
    fn lambda_zero_is_identity() {
        let v = VOCAB_SIZE as usize;
        let dist: Vec<f64> = (0..v).map(|i| (i % 13) as f64).collect();
        let z: f64 = dist.iter().sum();
        let out = ensemble_reweight(&dist, &image(), 0.0);
        for (a, b) in dist.iter().zip(&out) {
            assert!((a / z - b).abs() < 1e-15);
        }
    }

    #[test]
    fn select_prefers_closest_and_lowest_index() {
        let imgs = vec![image(), image(), image()];
        let implied = [0.5, -0.1, 0.1];
        let by_index = |img: &OrderImage| implied[imgs.iter().position(|x| std::ptr::eq(x, img)).unwrap()];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let control = ControlSignal::replay_curve(vec![0.0, 0.45]);
        assert_eq!(select_batch(&imgs, by_index, &control, 0, &mut rng).unwrap(), 1);
        assert_eq!(select_batch(&imgs, by_index, &control, 1, &mut rng).unwrap(), 0);
        // Past the end of the curve the pick is uniform but in range.
        assert!(select_batch(&imgs, by_index, &control, 5, &mut rng).unwrap() < 3);
        assert!(matches!(select_batch(&[], |_| 0.0, &control, 0, &mut rng), Err(FlowError::NoCandidates)));
    }

    #[test]
    fn scenario_targets_skip_context() {
        let c = ControlSignal::scenario(vec![1.0, 2.0, 3.0], 2);
        assert_eq!(c.target_for(0), Some(3.0));
        assert_eq!(c.target_for(1), None);
        assert_eq!(ControlSignal::none().target_for(0), None);
    }
}
