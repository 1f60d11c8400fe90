use serde::{Deserialize, Serialize};

use super::AnalyticsError;

/// Default bin count for [`histogram_pair`].
pub const DEFAULT_BINS: usize = 64;

/// Empirical quantile with linear interpolation between order statistics.
/// Non-finite values are ignored; absent when nothing remains.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let h = q * (v.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    edges: Vec<f64>,
    masses: Vec<f64>,
}

impl Histogram {
    pub fn new(edges: Vec<f64>, masses: Vec<f64>) -> Result<Self, AnalyticsError> {
        if edges.len() < 2 || masses.len() + 1 != edges.len() {
            return Err(AnalyticsError::InvalidHistogram(format!(
                "{} edges for {} masses",
                edges.len(),
                masses.len()
            )));
        }
        if edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(AnalyticsError::InvalidHistogram("edges must be strictly increasing".into()));
        }
        if masses.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(AnalyticsError::InvalidHistogram("masses must be finite and non-negative".into()));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(AnalyticsError::InvalidHistogram(format!("masses sum to {total}")));
        }
        Ok(Self { edges, masses })
    }

    /// Normalized counts of `samples` in the given bins. The last bin is
    /// closed on the right; values outside the edges are dropped.
    pub fn from_samples(samples: &[f64], edges: Vec<f64>) -> Result<Self, AnalyticsError> {
        if edges.len() < 2 {
            return Err(AnalyticsError::InvalidHistogram("need at least one bin".into()));
        }
        let bins = edges.len() - 1;
        let mut counts = vec![0.0; bins];
        let (lo, hi) = (edges[0], edges[bins]);
        for &x in samples {
            if !x.is_finite() || x < lo || x > hi {
                continue;
            }
            // First edge strictly greater than x, minus one.
            let i = edges.partition_point(|&e| e <= x).saturating_sub(1).min(bins - 1);
            counts[i] += 1.0;
        }
        let total: f64 = counts.iter().sum();
        if total == 0.0 {
            return Err(AnalyticsError::Empty);
        }
        Self::new(edges, counts.into_iter().map(|c| c / total).collect())
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }
}

/// Histograms of two samples over shared equal-width bins spanning their
/// pooled range.
pub fn histogram_pair(a: &[f64], b: &[f64], bins: usize) -> Result<(Histogram, Histogram), AnalyticsError> {
    if bins == 0 {
        return Err(AnalyticsError::InvalidHistogram("zero bins".into()));
    }
    let pooled = a.iter().chain(b).copied().filter(|x| x.is_finite());
    let (mut lo, mut hi) = pooled.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    if !lo.is_finite() {
        return Err(AnalyticsError::Empty);
    }
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let mut edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
    edges[bins] = hi;
    Ok((Histogram::from_samples(a, edges.clone())?, Histogram::from_samples(b, edges)?))
}

/// Σ min(aᵢ, bᵢ) over shared bins.
pub fn overlap_coefficient(a: &Histogram, b: &Histogram) -> Result<f64, AnalyticsError> {
    if a.edges != b.edges {
        return Err(AnalyticsError::EdgeMismatch);
    }
    let s: f64 = a.masses.iter().zip(&b.masses).map(|(x, y)| x.min(*y)).sum();
    Ok(s.clamp(0.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThreeClass {
    Low,
    Medium,
    High,
}

/// Tertile boundaries of a training sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub low: f64,
    pub high: f64,
}

impl Thresholds {
    pub fn fit(train: &[f64]) -> Result<Self, AnalyticsError> {
        let low = quantile(train, 1.0 / 3.0).ok_or(AnalyticsError::Empty)?;
        let high = quantile(train, 2.0 / 3.0).ok_or(AnalyticsError::Empty)?;
        if !(low < high) {
            return Err(AnalyticsError::Degenerate);
        }
        Ok(Self { low, high })
    }

    pub fn classify(&self, value: f64) -> ThreeClass {
        if value < self.low {
            ThreeClass::Low
        } else if value > self.high {
            ThreeClass::High
        } else {
            ThreeClass::Medium
        }
    }
}

pub fn three_class(train: &[f64], value: f64) -> Result<(ThreeClass, Thresholds), AnalyticsError> {
    let t = Thresholds::fit(train)?;
    Ok((t.classify(value), t))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub score: f64,
    pub threshold: f64,
    /// Set when the simulated spread distribution diverges from replay.
    pub flag: bool,
}

pub const DEFAULT_DETECTION_THRESHOLD: f64 = 0.87;

pub fn detect_anomaly(sim: &Histogram, replay: &Histogram, threshold: f64) -> Result<Detection, AnalyticsError> {
    let score = overlap_coefficient(sim, replay)?;
    Ok(Detection { score, threshold, flag: score < threshold })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bins(a: f64, b: f64) -> Histogram {
        Histogram::new(vec![0.0, 1.0, 2.0], vec![a, b]).unwrap()
    }

    #[test]
    fn overlap_examples() {
        let h = two_bins(0.5, 0.5);
        assert_eq!(overlap_coefficient(&h, &h).unwrap(), 1.0);
        assert!((overlap_coefficient(&h, &two_bins(0.3, 0.7)).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(overlap_coefficient(&two_bins(1.0, 0.0), &two_bins(0.0, 1.0)).unwrap(), 0.0);
        let other = Histogram::new(vec![0.0, 1.0, 3.0], vec![0.5, 0.5]).unwrap();
        assert_eq!(overlap_coefficient(&h, &other), Err(AnalyticsError::EdgeMismatch));
    }

    #[test]
    fn histogram_validation() {
        assert!(Histogram::new(vec![0.0, 0.0, 1.0], vec![0.5, 0.5]).is_err());
        assert!(Histogram::new(vec![0.0, 1.0, 2.0], vec![0.5, 0.6]).is_err());
        assert!(Histogram::new(vec![0.0, 1.0], vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn pair_shares_edges_and_includes_max() {
        let (a, b) = histogram_pair(&[0.0, 1.0, 2.0], &[2.0, 4.0], 4).unwrap();
        assert_eq!(a.edges(), b.edges());
        assert_eq!(a.edges(), &[0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(b.masses(), &[0.0, 0.0, 0.5, 0.5]);
        let (c, _) = histogram_pair(&[3.0, 3.0], &[3.0], 64).unwrap();
        assert_eq!(c.masses().iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0, 4.0], 0.5), Some(2.5));
        assert_eq!(quantile(&[], 0.5), None);
        assert_eq!(quantile(&[1.0], 0.99), Some(1.0));
    }

    #[test]
    fn tertiles_reject_degenerate_training() {
        assert_eq!(Thresholds::fit(&[2.0; 30]), Err(AnalyticsError::Degenerate));
        let train: Vec<f64> = (0..=300).map(|i| i as f64 / 300.0).collect();
        let (c, t) = three_class(&train, 0.1).unwrap();
        assert_eq!(c, ThreeClass::Low);
        assert!((t.low - 1.0 / 3.0).abs() < 1e-9 && (t.high - 2.0 / 3.0).abs() < 1e-9);
        assert_eq!(t.classify(0.5), ThreeClass::Medium);
        assert_eq!(t.classify(0.9), ThreeClass::High);
    }

    #[test]
    fn detection_flags_below_threshold() {
        let h = two_bins(0.5, 0.5);
        let d = detect_anomaly(&h, &h, DEFAULT_DETECTION_THRESHOLD).unwrap();
        assert!(!d.flag && d.score == 1.0);
        let d = detect_anomaly(&two_bins(0.36, 0.64), &h, 0.87).unwrap();
        assert!((d.score - 0.86).abs() < 1e-12 && d.flag);
    }
}
