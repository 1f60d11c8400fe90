use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// 11 passive-volume ratios × 6 aggressive price levels.
pub const ACTIONS: usize = 66;
/// Remaining time, remaining volume, imbalance, stage, bias.
pub const FEATURES: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Passive,
    Aggressive,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecState {
    pub remaining_time: f64,
    pub remaining_volume: f64,
    /// (bid depth − ask depth) / (bid depth + ask depth) over ten levels.
    pub imbalance: f64,
    pub stage: Stage,
}

impl ExecState {
    pub fn features(&self) -> [f64; FEATURES] {
        [
            self.remaining_time.clamp(0.0, 1.0),
            self.remaining_volume.clamp(0.0, 1.0),
            self.imbalance.clamp(-1.0, 1.0),
            match self.stage {
                Stage::Passive => 0.0,
                Stage::Aggressive => 1.0,
            },
            1.0,
        ]
    }
}

/// One action taken by a policy-driven agent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub timestamp_ms: u64,
    pub features: [f64; FEATURES],
    pub action: usize,
}

/// A (state, action, return) triple for the policy-gradient update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub features: [f64; FEATURES],
    pub action: usize,
    pub ret: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("non-finite gradient (batch of {batch}, first bad weight at action {action}, feature {feature})")]
    NonFiniteGradient { batch: usize, action: usize, feature: usize },
    #[error("action {0} outside [0, {ACTIONS})")]
    BadAction(usize),
    #[error("empty batch")]
    EmptyBatch,
}

/// Linear softmax policy: score(a) = w[a] · x / τ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub weights: Vec<[f64; FEATURES]>,
    pub temperature: f64,
}

impl Default for Policy {
    fn default() -> Self {
        Self::uniform()
    }
}

impl Policy {
    /// All-zero weights: every action equally likely.
    pub fn uniform() -> Self {
        Self { weights: vec![[0.0; FEATURES]; ACTIONS], temperature: 1.0 }
    }

    pub fn probabilities(&self, x: &[f64; FEATURES]) -> Vec<f64> {
        let scores: Vec<f64> = self
            .weights
            .iter()
            .map(|w| w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() / self.temperature)
            .collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    }

    pub fn log_prob(&self, x: &[f64; FEATURES], action: usize) -> f64 {
        self.probabilities(x)[action].ln()
    }

    pub fn sample(&self, x: &[f64; FEATURES], rng: &mut ChaCha8Rng) -> usize {
        let p = self.probabilities(x);
        let mut u: f64 = rng.random();
        for (a, &pa) in p.iter().enumerate() {
            if u < pa {
                return a;
            }
            u -= pa;
        }
        ACTIONS - 1
    }

    pub fn greedy(&self, x: &[f64; FEATURES]) -> usize {
        let p = self.probabilities(x);
        (0..p.len()).fold(0, |best, a| if p[a] > p[best] { a } else { best })
    }

    /// ∂ log π(a|x) / ∂w[b][f] = (1[b = a] − π(b|x)) · x[f] / τ.
    pub fn grad_log_prob(&self, x: &[f64; FEATURES], action: usize) -> Vec<[f64; FEATURES]> {
        let p = self.probabilities(x);
        p.iter()
            .enumerate()
            .map(|(b, &pb)| {
                let coef = (if b == action { 1.0 } else { 0.0 } - pb) / self.temperature;
                std::array::from_fn(|f| coef * x[f])
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// One REINFORCE step with the batch-mean return as baseline:
/// `w += lr · mean[(G − b) ∇ log π(a|s)]`.
pub fn policy_gradient_update(policy: &Policy, batch: &[Sample], lr: f64) -> Result<Policy, PolicyError> {
    if batch.is_empty() {
        return Err(PolicyError::EmptyBatch);
    }
    if let Some(s) = batch.iter().find(|s| s.action >= ACTIONS) {
        return Err(PolicyError::BadAction(s.action));
    }
    let baseline = batch.iter().map(|s| s.ret).sum::<f64>() / batch.len() as f64;
    let mut grad = vec![[0.0; FEATURES]; ACTIONS];
    for s in batch {
        let adv = s.ret - baseline;
        if adv == 0.0 {
            continue;
        }
        for (g, d) in grad.iter_mut().zip(policy.grad_log_prob(&s.features, s.action)) {
            for f in 0..FEATURES {
                g[f] += adv * d[f];
            }
        }
    }
    let n = batch.len() as f64;
    let mut next = policy.clone();
    for (a, (w, g)) in next.weights.iter_mut().zip(&grad).enumerate() {
        for f in 0..FEATURES {
            let step = lr * g[f] / n;
            if !step.is_finite() {
                return Err(PolicyError::NonFiniteGradient { batch: batch.len(), action: a, feature: f });
            }
            w[f] += step;
        }
    }
    Ok(next)
}
