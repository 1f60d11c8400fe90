use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ImpactError, ImpactRecord};

pub const MIN_SQRT_LAW_RECORDS: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SqrtLawFit {
    pub coefficient: f64,
    pub exponent: f64,
    pub r_squared: f64,
    /// Records that satisfied Δ > 0, σ > 0 and 0 < Q/V < 1.
    pub used: usize,
}

impl SqrtLawFit {
    pub fn predict(&self, sigma: f64, participation: f64) -> f64 {
        self.coefficient * sigma * participation.powf(self.exponent)
    }
}

/// Least squares on `ln(Δ/σ) = ln c + γ·ln(Q/V)`, skipping records outside
/// the law's domain.
pub fn fit_sqrt_law(records: &[ImpactRecord]) -> Result<SqrtLawFit, ImpactError> {
    let points: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.delta_bp > 0.0 && r.sigma > 0.0 && r.v > 0.0 && r.q > 0.0 && r.q < r.v)
        .map(|r| ((r.q / r.v).ln(), (r.delta_bp / r.sigma).ln()))
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    if points.len() < MIN_SQRT_LAW_RECORDS {
        return Err(ImpactError::InsufficientRecords { needed: MIN_SQRT_LAW_RECORDS, got: points.len() });
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(ImpactError::Singular { condition: f64::INFINITY });
    }
    let exponent = sxy / sxx;
    let intercept = my - exponent * mx;
    let sse: f64 = points.iter().map(|p| (p.1 - intercept - exponent * p.0).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Ok(SqrtLawFit { coefficient: intercept.exp(), exponent, r_squared, used: points.len() })
}

/// A per-record scalar that scales one column group of the impact ODE.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    SqrtParticipation,
    Sigma,
    MidPrice,
    AgentReplay,
    AgentRollout,
    LobDepth,
    LobPressure,
    Resiliency,
    /// σ·√(Q/V), the square-root process driver.
    SigmaSqrtParticipation,
}

impl Factor {
    pub const DEFAULTS: [Factor; 7] = [
        Factor::SqrtParticipation,
        Factor::MidPrice,
        Factor::AgentReplay,
        Factor::AgentRollout,
        Factor::LobDepth,
        Factor::LobPressure,
        Factor::Resiliency,
    ];

    pub fn value(self, r: &ImpactRecord) -> Option<f64> {
        let participation = (r.v > 0.0).then(|| r.q / r.v);
        let x = match self {
            Factor::SqrtParticipation => participation?.sqrt(),
            Factor::Sigma => r.sigma,
            Factor::MidPrice => r.mid_pre,
            Factor::AgentReplay => r.agent_replay,
            Factor::AgentRollout => r.agent_rollout,
            Factor::LobDepth => r.lob_depth?,
            Factor::LobPressure => r.lob_pressure?,
            Factor::Resiliency => r.resiliency?,
            Factor::SigmaSqrtParticipation => r.sigma * participation?.sqrt(),
        };
        x.is_finite().then_some(x)
    }
}

/// A decay kernel `F(t)` on t > 0, in minutes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decay {
    InverseT,
    InverseSqrtT,
}

impl Decay {
    pub fn value(self, t: f64) -> f64 {
        match self {
            Decay::InverseT => 1.0 / t,
            Decay::InverseSqrtT => 1.0 / t.sqrt(),
        }
    }

    /// `∫₁ᵗ F(s) ds`.
    pub fn integral_from_one(self, t: f64) -> f64 {
        match self {
            Decay::InverseT => t.ln(),
            Decay::InverseSqrtT => 2.0 * (t.sqrt() - 1.0),
        }
    }
}

/// `dY/dt = Σᵢⱼ W[j][i] · Xᵢ · Fⱼ(t)`, fitted with an L1 penalty on W.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OdeModel {
    pub factors: Vec<Factor>,
    pub decay: Vec<Decay>,
    /// Penalty on coefficients of RMS-normalized design columns.
    pub l1: f64,
    pub max_sweeps: usize,
    pub tolerance: f64,
}

impl Default for OdeModel {
    fn default() -> Self {
        Self {
            factors: Factor::DEFAULTS.to_vec(),
            decay: vec![Decay::InverseT, Decay::InverseSqrtT],
            l1: 0.0,
            max_sweeps: 100_000,
            tolerance: 1e-14,
        }
    }
}

impl OdeModel {
    /// The square-root process `dY/dt = σ√(Q/V)/√t` as a one-factor model with
    /// its weights.
    pub fn square_root_process() -> (Self, Vec<Vec<f64>>) {
        let model = Self { factors: vec![Factor::SigmaSqrtParticipation], ..Self::default() };
        (model, vec![vec![0.0], vec![1.0]])
    }

    fn validate(&self) -> Result<(), ImpactError> {
        if self.factors.is_empty() || self.decay.is_empty() {
            return Err(ImpactError::Model("at least one factor and one decay kernel".into()));
        }
        if !(self.l1 >= 0.0) || !self.l1.is_finite() {
            return Err(ImpactError::Model("l1 must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn factor_values(&self, r: &ImpactRecord) -> Option<Vec<f64>> {
        self.factors.iter().map(|f| f.value(r)).collect()
    }

    /// dY/dt at minute `t`.
    pub fn rate(&self, weights: &[Vec<f64>], x: &[f64], t: f64) -> f64 {
        self.decay
            .iter()
            .zip(weights)
            .map(|(d, row)| d.value(t) * row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>())
            .sum()
    }

    /// Y(t) given the anchor Y(1).
    pub fn predict(&self, weights: &[Vec<f64>], x: &[f64], anchor: f64, t: f64) -> f64 {
        anchor
            + self
                .decay
                .iter()
                .zip(weights)
                .map(|(d, row)| d.integral_from_one(t) * row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>())
                .sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdeFit {
    /// `weights[j][i]` pairs decay kernel j with factor i.
    pub weights: Vec<Vec<f64>>,
    pub l1: f64,
    pub records_used: usize,
    pub rows: usize,
    pub sweeps: usize,
    /// Ratio of extreme eigenvalues of the normalized Gram matrix.
    pub condition: f64,
    pub r_squared: f64,
}

impl OdeFit {
    pub fn nonzeros(&self) -> usize {
        self.weights.iter().flatten().filter(|w| **w != 0.0).count()
    }
}

fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

/// Minimizes `½wᵀGw − cᵀw + λ‖w‖₁` by cyclic coordinate descent, then
/// solves the stationarity equations exactly on the active set when the
/// result is consistent with the coordinate-descent signs.
pub fn lasso_gram(gram: &DMatrix<f64>, c: &DVector<f64>, lambda: f64, max_sweeps: usize, tolerance: f64) -> (DVector<f64>, usize) {
    let p = c.len();
    let mut w = DVector::zeros(p);
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        sweeps += 1;
        let mut max_change: f64 = 0.0;
        for k in 0..p {
            let gkk = gram[(k, k)];
            if gkk <= 0.0 {
                continue;
            }
            let partial = c[k] - (gram.row(k) * &w)[0] + gkk * w[k];
            let next = soft_threshold(partial, lambda) / gkk;
            max_change = max_change.max((next - w[k]).abs());
            w[k] = next;
        }
        if max_change <= tolerance {
            break;
        }
    }
    let active: Vec<usize> = (0..p).filter(|&k| w[k] != 0.0).collect();
    if !active.is_empty() {
        let g = DMatrix::from_fn(active.len(), active.len(), |a, b| gram[(active[a], active[b])]);
        let rhs = DVector::from_fn(active.len(), |a, _| c[active[a]] - lambda * w[active[a]].signum());
        if let Some(sol) = g.cholesky().map(|ch| ch.solve(&rhs)) {
            let mut polished = DVector::zeros(p);
            for (a, &k) in active.iter().enumerate() {
                polished[k] = sol[a];
            }
            let signs_agree = active.iter().all(|&k| polished[k].signum() == w[k].signum());
            let grad = c - gram * &polished;
            let kkt = (0..p).filter(|k| !active.contains(k)).all(|k| grad[k].abs() <= lambda * (1.0 + 1e-9) + 1e-12);
            if signs_agree && kkt {
                w = polished;
            }
        }
    }
    (w, sweeps)
}

/// Fits W from impact curves sampled at minutes 1, 2, … after trading.
/// Since `Y(t) − Y(1) = Σ W[j][i]·Xᵢ·∫₁ᵗFⱼ`, the fit is a linear regression
/// through the origin on the anchored curve.
pub fn fit_long_term_ode(records: &[ImpactRecord], model: &OdeModel) -> Result<OdeFit, ImpactError> {
    model.validate()?;
    let usable: Vec<(&ImpactRecord, Vec<f64>)> =
        records.iter().filter_map(|r| model.factor_values(r).map(|x| (r, x))).collect();
    let Some(len) = usable.first().map(|(r, _)| r.y_t.len()) else {
        return Err(ImpactError::InsufficientRecords { needed: 1, got: 0 });
    };
    if usable.iter().any(|(r, _)| r.y_t.len() != len) {
        return Err(ImpactError::RaggedCurves);
    }
    if len < 2 {
        return Err(ImpactError::InsufficientRecords { needed: 1, got: 0 });
    }
    let (m, n) = (model.factors.len(), model.decay.len());
    let p = m * n;
    let rows = usable.len() * (len - 1);
    let mut a = DMatrix::zeros(rows, p);
    let mut y = DVector::zeros(rows);
    for (ri, (r, x)) in usable.iter().enumerate() {
        for k in 1..len {
            let row = ri * (len - 1) + k - 1;
            let t = (k + 1) as f64;
            for (j, d) in model.decay.iter().enumerate() {
                let g = d.integral_from_one(t);
                for i in 0..m {
                    a[(row, j * m + i)] = x[i] * g;
                }
            }
            y[row] = r.y_t[k] - r.y_t[0];
        }
    }
    let scale: Vec<f64> = (0..p)
        .map(|c| {
            let rms = (a.column(c).norm_squared() / rows as f64).sqrt();
            if rms > 0.0 { rms } else { 1.0 }
        })
        .collect();
    for (c, s) in scale.iter().enumerate() {
        a.column_mut(c).scale_mut(1.0 / s);
    }
    let gram = a.transpose() * &a / rows as f64;
    let cvec = a.transpose() * &y / rows as f64;
    let eig = gram.clone().symmetric_eigen().eigenvalues;
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if model.l1 == 0.0 && !(condition < 1e12) && y.norm() > 0.0 {
        return Err(ImpactError::Singular { condition });
    }
    let (w, sweeps) = lasso_gram(&gram, &cvec, model.l1, model.max_sweeps, model.tolerance);
    let fitted = &a * &w;
    let sst = y.norm_squared();
    let r_squared = if sst > 0.0 { 1.0 - (&y - fitted).norm_squared() / sst } else { 1.0 };
    let weights = (0..n).map(|j| (0..m).map(|i| w[j * m + i] / scale[j * m + i]).collect()).collect();
    Ok(OdeFit { weights, l1: model.l1, records_used: usable.len(), rows, sweeps, condition, r_squared })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(delta: f64, sigma: f64, q: f64, v: f64) -> ImpactRecord {
        ImpactRecord {
            delta_bp: delta,
            sigma,
            q,
            v,
            resiliency: None,
            lob_pressure: None,
            lob_depth: None,
            agent_replay: 0.0,
            agent_rollout: 0.0,
            mid_pre: 10_000.0,
            y_t: vec![],
            config_id: String::new(),
        }
    }

    #[test]
    fn noiseless_square_root_law() {
        let recs: Vec<ImpactRecord> = (1..=40)
            .map(|i| {
                let (q, v, s) = (i as f64 * 10.0, 1000.0, 0.5 + i as f64 * 0.01);
                record(s * (q / v).sqrt(), s, q, v)
            })
            .collect();
        let fit = fit_sqrt_law(&recs).unwrap();
        assert!((fit.exponent - 0.5).abs() < 1e-9);
        assert!((fit.coefficient - 1.0).abs() < 1e-9);
        assert!((fit.predict(1.0, 0.4) / fit.predict(1.0, 0.1) - 2.0).abs() < 1e-9);
        assert!(matches!(fit_sqrt_law(&recs[..10]), Err(ImpactError::InsufficientRecords { got: 10, .. })));
    }

    #[test]
    fn decay_integrals() {
        for t in [1.0, 2.0, 7.5, 30.0] {
            // Trapezoid check of the closed forms.
            for d in [Decay::InverseT, Decay::InverseSqrtT] {
                let steps = 200_000;
                let h = (t - 1.0) / steps as f64;
                let num: f64 = (0..steps).map(|k| 0.5 * h * (d.value(1.0 + k as f64 * h) + d.value(1.0 + (k + 1) as f64 * h))).sum();
                assert!((num - d.integral_from_one(t)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn lasso_soft_thresholds_orthogonal_design() {
        let gram = DMatrix::identity(3, 3);
        let c = DVector::from_vec(vec![2.0, -0.5, 0.1]);
        let (w, _) = lasso_gram(&gram, &c, 0.3, 1000, 1e-15);
        for (got, want) in w.iter().zip([1.7, -0.2, 0.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!(w[2], 0.0);
    }
}
