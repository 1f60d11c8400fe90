//! Return statistics, stylized facts, distribution similarity, forecast
//! labelling and spread-based anomaly detection. Everything here is a pure
//! function of its input.

mod facts;
mod forecast;
mod metrics;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::Trajectory;

pub use facts::{normalize_by_minute_of_day, stylized_report, FactEntry, StylizedConfig, StylizedInput, StylizedReport};
pub use forecast::{aggregate_forecast, forecast_label, Direction};
pub use metrics::{
    detect_anomaly, histogram_pair, overlap_coefficient, quantile, three_class, Detection, Histogram, ThreeClass,
    DEFAULT_BINS, DEFAULT_DETECTION_THRESHOLD,
    Thresholds,
};

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("histograms have different bin edges")]
    EdgeMismatch,
    #[error("invalid histogram: {0}")]
    InvalidHistogram(String),
    #[error("training distribution is degenerate")]
    Degenerate,
    #[error("empty input")]
    Empty,
    #[error("reference mid must be positive, got {0}")]
    NonPositiveReference(f64),
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Pearson correlation; absent for unequal lengths, fewer than two points or
/// zero variance on either side.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    (saa > 0.0 && sbb > 0.0).then(|| (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Sample autocorrelation at each lag (mean and variance over the whole
/// series). Absent for zero variance or a lag not shorter than the series.
pub fn autocorr(series: &[f64], lags: &[usize]) -> Vec<Option<f64>> {
    if series.is_empty() {
        return vec![None; lags.len()];
    }
    let m = mean(series);
    let denom: f64 = series.iter().map(|x| (x - m).powi(2)).sum();
    lags.iter()
        .map(|&k| {
            if k >= series.len() || denom <= 0.0 || !denom.is_finite() {
                return None;
            }
            let num: f64 = series.iter().zip(&series[k..]).map(|(a, b)| (a - m) * (b - m)).sum();
            Some(num / denom)
        })
        .collect()
}

/// Autocorrelation of absolute values.
pub fn volatility_clustering(series: &[f64], lags: &[usize]) -> Vec<Option<f64>> {
    let abs: Vec<f64> = series.iter().map(|x| x.abs()).collect();
    autocorr(&abs, lags)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
    pub skewness: f64,
    /// Fisher excess kurtosis: zero for a normal distribution.
    pub excess_kurtosis: f64,
}

/// Population moments; absent for fewer than four points or zero variance.
pub fn moments(series: &[f64]) -> Option<Moments> {
    if series.len() < 4 {
        return None;
    }
    let m = mean(series);
    let n = series.len() as f64;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in series {
        let d = x - m;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    (m2 > 0.0).then(|| Moments {
        mean: m,
        std: m2.sqrt(),
        skewness: m3 / m2.powf(1.5),
        excess_kurtosis: m4 / (m2 * m2) - 3.0,
    })
}

/// Variance over mean of per-window counts.
pub fn fano_of_counts(counts: &[f64]) -> Option<f64> {
    if counts.len() < 2 {
        return None;
    }
    let m = mean(counts);
    if m <= 0.0 {
        return None;
    }
    let var = counts.iter().map(|c| (c - m).powi(2)).sum::<f64>() / (counts.len() - 1) as f64;
    Some(var / m)
}

/// Fano factor of extreme-return counts: an extreme return is one whose
/// absolute value reaches the `q` quantile of absolute returns; counts are
/// taken over consecutive non-overlapping windows of `window` returns.
pub fn fano_factor(series: &[f64], q: f64, window: usize) -> Option<f64> {
    if window == 0 || series.len() < 2 * window {
        return None;
    }
    let abs: Vec<f64> = series.iter().map(|x| x.abs()).collect();
    let threshold = quantile(&abs, q)?;
    let counts: Vec<f64> = abs
        .chunks_exact(window)
        .map(|w| w.iter().filter(|&&x| x >= threshold).count() as f64)
        .collect();
    fano_of_counts(&counts)
}

/// Log returns of one instrument at a fixed sampling interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    pub instrument: String,
    pub interval_minutes: u32,
    pub basis: PriceBasis,
    pub returns: Vec<f64>,
}

impl ReturnSeries {
    pub fn new(instrument: impl Into<String>, returns: Vec<f64>) -> Self {
        Self { instrument: instrument.into(), interval_minutes: 1, basis: PriceBasis::LastTrade, returns }
    }

    pub fn from_trajectory(traj: &Trajectory, basis: PriceBasis) -> Self {
        Self {
            instrument: format!("seed-{}", traj.manifest.seed),
            interval_minutes: 1,
            basis,
            returns: trade_returns(traj, basis),
        }
    }

    /// Whether the series can feed any statistic.
    pub fn is_usable(&self) -> bool {
        self.returns.len() >= 2 && self.returns.iter().all(|r| r.is_finite())
    }
}

pub fn log_returns(prices: &[f64]) -> Vec<f64> {
    prices.windows(2).map(|w| (w[1] / w[0]).ln()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum PriceBasis {
    #[default]
    LastTrade,
    MeanTrade,
}

/// Per-minute log returns of a trajectory from trade prices. Minutes without
/// trades carry the previous price forward; leading untraded minutes use the
/// minute's opening mid.
pub fn trade_returns(traj: &Trajectory, basis: PriceBasis) -> Vec<f64> {
    let events = traj.simulated_events();
    let mut prices = Vec::with_capacity(traj.minutes.len() + 1);
    let mut cursor = 0;
    let mut last: Option<f64> = None;
    for m in &traj.minutes {
        if prices.is_empty() {
            prices.push(m.open_mid.ticks());
        }
        let end = m.start_ms + crate::sim::MINUTE_MS;
        let (mut sum, mut n) = (0.0, 0usize);
        let mut last_in_minute = None;
        while cursor < events.len() && events[cursor].timestamp_ms < end {
            for t in &events[cursor].trades {
                sum += t.price as f64;
                n += 1;
                last_in_minute = Some(t.price as f64);
            }
            cursor += 1;
        }
        let p = match basis {
            PriceBasis::LastTrade => last_in_minute,
            PriceBasis::MeanTrade => (n > 0).then(|| sum / n as f64),
        };
        last = p.or(last).or(Some(m.close_mid.ticks()));
        prices.push(last.expect("set above"));
    }
    log_returns(&prices)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_edge_cases() {
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]), Some(1.0));
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]), Some(-1.0));
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]), None);
        assert_eq!(pearson(&[1.0], &[1.0]), None);
        assert_eq!(pearson(&[1.0, 2.0], &[1.0, 2.0, 3.0]), None);
    }

    #[test]
    fn autocorr_of_constant_is_absent() {
        let increments = vec![0.5; 100];
        assert_eq!(autocorr(&increments, &[1, 2]), vec![None, None]);
        assert_eq!(autocorr(&[1.0, 2.0], &[5]), vec![None]);
    }

    #[test]
    fn autocorr_alternating_series() {
        let x: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let r = autocorr(&x, &[1, 2]);
        assert!((r[0].unwrap() + 0.999).abs() < 1e-9);
        assert!((r[1].unwrap() - 0.998).abs() < 1e-9);
    }

    #[test]
    fn moments_of_symmetric_two_point() {
        let m = moments(&[-1.0, 1.0, -1.0, 1.0]).unwrap();
        assert_eq!(m.skewness, 0.0);
        assert!((m.excess_kurtosis + 2.0).abs() < 1e-12);
        assert!(moments(&[1.0; 10]).is_none());
    }

    #[test]
    fn fano_requires_two_windows() {
        assert_eq!(fano_factor(&[1.0; 10], 0.99, 10), None);
        assert_eq!(fano_of_counts(&[3.0]), None);
        assert_eq!(fano_of_counts(&[0.0, 0.0]), None);
        assert_eq!(fano_of_counts(&[1.0, 3.0]), Some(1.0));
    }
}
