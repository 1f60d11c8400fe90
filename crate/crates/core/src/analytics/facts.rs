//! The eleven stylized facts of asset returns, each assessed per instrument
//! and then aggregated by majority.

use serde::{Deserialize, Serialize};

use super::{autocorr, fano_factor, moments, pearson, ReturnSeries};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StylizedConfig {
    /// Lags checked for linear autocorrelation (1..=lags).
    pub lags: usize,
    /// Returns summed per aggregated observation.
    pub aggregation: usize,
    /// Excess kurtosis above which tails count as heavy.
    pub heavy_tail_kurtosis: f64,
    /// Skewness below `-skew_threshold` counts as gain/loss asymmetry.
    pub skew_threshold: f64,
    /// Aggregated returns count as Gaussian when |excess kurtosis| stays below this.
    pub gaussian_band: f64,
    pub extreme_quantile: f64,
    pub fano_window: usize,
    pub fano_threshold: f64,
    /// Lags over which the slow decay of |r| autocorrelation is measured.
    pub slow_decay_lags: (usize, usize),
    pub minutes_per_day: usize,
    /// Returns per coarse volatility window.
    pub timescale_window: usize,
    /// Lags in coarse windows for the timescale asymmetry.
    pub timescale_lags: usize,
}

impl Default for StylizedConfig {
    fn default() -> Self {
        Self {
            lags: 10,
            aggregation: 10,
            heavy_tail_kurtosis: 1.0,
            skew_threshold: 0.1,
            gaussian_band: 1.0,
            extreme_quantile: 0.99,
            fano_window: 100,
            fano_threshold: 1.5,
            slow_decay_lags: (10, 20),
            minutes_per_day: 240,
            timescale_window: 5,
            timescale_lags: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StylizedInput {
    pub series: ReturnSeries,
    /// Traded volume aligned with the returns, if known.
    pub volumes: Option<Vec<f64>>,
}

impl From<ReturnSeries> for StylizedInput {
    fn from(series: ReturnSeries) -> Self {
        Self { series, volumes: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactEntry {
    pub id: u8,
    pub name: String,
    /// Mean of the per-instrument statistics that could be computed.
    pub statistic: Option<f64>,
    pub criterion: String,
    pub instruments_assessed: usize,
    pub instruments_satisfied: usize,
    /// Majority over assessed instruments; absent when none could be assessed.
    pub satisfied: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StylizedReport {
    pub instruments: usize,
    pub facts: Vec<FactEntry>,
}

impl StylizedReport {
    pub fn fact(&self, id: u8) -> &FactEntry {
        &self.facts[id as usize - 1]
    }
}

const NAMES: [&str; 11] = [
    "absence of autocorrelations",
    "heavy tails",
    "gain/loss asymmetry",
    "aggregational gaussianity",
    "intermittency",
    "volatility clustering",
    "conditional heavy tails",
    "slow decay of autocorrelation in absolute returns",
    "leverage effect",
    "volume/volatility correlation",
    "asymmetry in time scales",
];

/// Divides each return by the RMS of all returns at the same minute of the
/// day, position `i % minutes_per_day`. Minutes with zero RMS map to zero.
pub fn normalize_by_minute_of_day(series: &[f64], minutes_per_day: usize) -> Vec<f64> {
    let mpd = minutes_per_day.max(1);
    let mut sum_sq = vec![0.0; mpd];
    let mut n = vec![0usize; mpd];
    for (i, r) in series.iter().enumerate() {
        sum_sq[i % mpd] += r * r;
        n[i % mpd] += 1;
    }
    let rms: Vec<f64> = sum_sq.iter().zip(&n).map(|(s, &k)| (s / k.max(1) as f64).sqrt()).collect();
    series
        .iter()
        .enumerate()
        .map(|(i, r)| if rms[i % mpd] > 0.0 { r / rms[i % mpd] } else { 0.0 })
        .collect()
}

/// One instrument's statistic and verdict for one fact.
type Assessment = Option<(f64, bool)>;

struct Assessor<'a> {
    r: &'a [f64],
    volumes: Option<&'a [f64]>,
    cfg: &'a StylizedConfig,
    /// Three-sigma white-noise bound for correlations over `r`.
    bound: f64,
}

impl Assessor<'_> {
    fn lagged_corr(&self, x: &[f64], y: &[f64], k: usize) -> Option<f64> {
        (k < x.len()).then(|| pearson(&x[..x.len() - k], &y[k..])).flatten()
    }

    fn no_autocorrelation(&self) -> Assessment {
        let lags: Vec<usize> = (1..=self.cfg.lags).collect();
        let rho: Option<Vec<f64>> = autocorr(self.r, &lags).into_iter().collect();
        let worst = rho?.into_iter().map(f64::abs).fold(0.0, f64::max);
        Some((worst, worst < self.bound))
    }

    fn heavy_tails(&self) -> Assessment {
        let k = moments(self.r)?.excess_kurtosis;
        Some((k, k > self.cfg.heavy_tail_kurtosis))
    }

    fn gain_loss(&self) -> Assessment {
        let s = moments(self.r)?.skewness;
        Some((s, s < -self.cfg.skew_threshold))
    }

    fn aggregational_gaussianity(&self) -> Assessment {
        let agg: Vec<f64> = self.r.chunks_exact(self.cfg.aggregation.max(1)).map(|c| c.iter().sum()).collect();
        let base = moments(self.r)?.excess_kurtosis;
        let k = moments(&agg)?.excess_kurtosis;
        Some((k, k.abs() < self.cfg.gaussian_band && k <= base.max(0.0) + 0.5 * self.cfg.gaussian_band))
    }

    fn intermittency(&self) -> Assessment {
        let f = fano_factor(self.r, self.cfg.extreme_quantile, self.cfg.fano_window)?;
        Some((f, f > self.cfg.fano_threshold))
    }

    fn volatility_clustering(&self) -> Assessment {
        let sq: Vec<f64> = self.r.iter().map(|x| x * x).collect();
        let rho = autocorr(&sq, &[1])[0]?;
        Some((rho, rho > self.bound))
    }

    fn conditional_heavy_tails(&self) -> Assessment {
        if self.r.len() < 2 * self.cfg.minutes_per_day {
            return None;
        }
        let z = normalize_by_minute_of_day(self.r, self.cfg.minutes_per_day);
        let k = moments(&z)?.excess_kurtosis;
        Some((k, k > self.cfg.heavy_tail_kurtosis))
    }

    fn slow_decay(&self) -> Assessment {
        let (from, to) = self.cfg.slow_decay_lags;
        let lags: Vec<usize> = (from..=to).collect();
        let abs: Vec<f64> = self.r.iter().map(|x| x.abs()).collect();
        let rho: Option<Vec<f64>> = autocorr(&abs, &lags).into_iter().collect();
        let rho = rho?;
        let mean = rho.iter().sum::<f64>() / rho.len() as f64;
        Some((mean, mean > self.bound))
    }

    fn leverage(&self) -> Assessment {
        let sq: Vec<f64> = self.r.iter().map(|x| x * x).collect();
        let l: Option<Vec<f64>> = (1..=self.cfg.lags).map(|k| self.lagged_corr(self.r, &sq, k)).collect();
        let l = l?;
        let mean = l.iter().sum::<f64>() / l.len() as f64;
        Some((mean, mean < -self.bound))
    }

    fn volume_volatility(&self) -> Assessment {
        let v = self.volumes?;
        let abs: Vec<f64> = self.r.iter().map(|x| x.abs()).collect();
        let rho = pearson(v, &abs)?;
        Some((rho, rho > self.bound))
    }

    /// Σ over k>0 of corr(coarse(T), fine(T+k)) − corr(fine(T), coarse(T+k)),
    /// with coarse = |Σ r| and fine = Σ |r| over non-overlapping windows.
    fn timescale_asymmetry(&self) -> Assessment {
        let w = self.cfg.timescale_window.max(1);
        let coarse: Vec<f64> = self.r.chunks_exact(w).map(|c| c.iter().sum::<f64>().abs()).collect();
        let fine: Vec<f64> = self.r.chunks_exact(w).map(|c| c.iter().map(|x| x.abs()).sum()).collect();
        let mut total = 0.0;
        for k in 1..=self.cfg.timescale_lags {
            total += self.lagged_corr(&coarse, &fine, k)? - self.lagged_corr(&fine, &coarse, k)?;
        }
        let bound = 3.0 / (coarse.len() as f64).sqrt();
        Some((total, total > bound))
    }

    fn all(&self) -> [Assessment; 11] {
        [
            self.no_autocorrelation(),
            self.heavy_tails(),
            self.gain_loss(),
            self.aggregational_gaussianity(),
            self.intermittency(),
            self.volatility_clustering(),
            self.conditional_heavy_tails(),
            self.slow_decay(),
            self.leverage(),
            self.volume_volatility(),
            self.timescale_asymmetry(),
        ]
    }
}

fn criteria(cfg: &StylizedConfig) -> [String; 11] {
    [
        format!("max |rho(1..{})| < 3/sqrt(n)", cfg.lags),
        format!("excess kurtosis > {}", cfg.heavy_tail_kurtosis),
        format!("skewness < -{}", cfg.skew_threshold),
        format!("|excess kurtosis of {}-sums| < {} and not above base", cfg.aggregation, cfg.gaussian_band),
        format!("fano factor of q{} exceedances > {}", cfg.extreme_quantile, cfg.fano_threshold),
        "rho_r2(1) > 3/sqrt(n)".into(),
        format!("excess kurtosis after minute-of-day scaling > {}", cfg.heavy_tail_kurtosis),
        format!("mean rho_|r|({}..{}) > 3/sqrt(n)", cfg.slow_decay_lags.0, cfg.slow_decay_lags.1),
        format!("mean corr(r_t, r2_t+k), k=1..{} < -3/sqrt(n)", cfg.lags),
        "corr(volume, |r|) > 3/sqrt(n)".into(),
        format!("coarse/fine lead-lag sum over {}-return windows > 3/sqrt(m)", cfg.timescale_window),
    ]
}

/// Assesses every fact on every usable series. Facts that cannot be computed
/// for an instrument are skipped for it; nothing aborts the report.
pub fn stylized_report(inputs: &[StylizedInput], cfg: &StylizedConfig) -> StylizedReport {
    let per_instrument: Vec<[Assessment; 11]> = inputs
        .iter()
        .filter(|i| i.series.is_usable())
        .map(|i| {
            let r = &i.series.returns;
            let volumes = i.volumes.as_deref().filter(|v| v.len() == r.len());
            Assessor { r, volumes, cfg, bound: 3.0 / (r.len() as f64).sqrt() }.all()
        })
        .collect();
    let criteria = criteria(cfg);
    let facts = (0..11)
        .map(|f| {
            let got: Vec<(f64, bool)> = per_instrument.iter().filter_map(|a| a[f]).collect();
            let assessed = got.len();
            let satisfied = got.iter().filter(|(_, s)| *s).count();
            FactEntry {
                id: f as u8 + 1,
                name: NAMES[f].into(),
                statistic: (assessed > 0).then(|| got.iter().map(|(v, _)| v).sum::<f64>() / assessed as f64),
                criterion: criteria[f].clone(),
                instruments_assessed: assessed,
                instruments_satisfied: satisfied,
                satisfied: (assessed > 0).then_some(2 * satisfied > assessed),
            }
        })
        .collect();
    StylizedReport { instruments: per_instrument.len(), facts }
}
