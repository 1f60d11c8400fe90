//! Forward stepwise factor selection by cross-validated R², and factor
//! correlation matrices.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::fit::Factor;
use super::{ImpactError, ImpactRecord};
use crate::analytics::pearson;

/// A named per-record candidate explanatory variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub name: String,
    pub values: Vec<f64>,
}

impl Candidate {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self { name: name.into(), values }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub folds: usize,
    /// Stop once the best remaining candidate adds less held-out R² than this.
    pub min_gain: f64,
    pub max_factors: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { folds: 5, min_gain: 0.01, max_factors: 8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchStep {
    pub name: String,
    pub index: usize,
    pub cv_r2: f64,
    pub gain: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub method: String,
    /// Held-out R² of the intercept-only model.
    pub base_r2: f64,
    pub selected: Vec<SearchStep>,
}

/// Held-out R² of an intercept-plus-`columns` linear model, with folds
/// assigned round-robin by record index.
fn cv_r2(target: &[f64], columns: &[&[f64]], folds: usize) -> f64 {
    let n = target.len();
    let mean = target.iter().sum::<f64>() / n as f64;
    let sst: f64 = target.iter().map(|y| (y - mean).powi(2)).sum();
    let mut sse = 0.0;
    for fold in 0..folds {
        let train: Vec<usize> = (0..n).filter(|i| i % folds != fold).collect();
        let test: Vec<usize> = (0..n).filter(|i| i % folds == fold).collect();
        let design = |rows: &[usize]| DMatrix::from_fn(rows.len(), columns.len() + 1, |r, c| if c == 0 { 1.0 } else { columns[c - 1][rows[r]] });
        let a = design(&train);
        let y = DVector::from_iterator(train.len(), train.iter().map(|&i| target[i]));
        let beta = a.svd(true, true).solve(&y, 1e-10).unwrap_or_else(|_| DVector::zeros(columns.len() + 1));
        let pred = design(&test) * beta;
        sse += test.iter().zip(pred.iter()).map(|(&i, p)| (target[i] - p).powi(2)).sum::<f64>();
    }
    if sst > 0.0 { 1.0 - sse / sst } else { 0.0 }
}

/// Greedy forward selection over `dictionary`, maximizing held-out R² of
/// `target`. Deterministic: ties go to the earlier dictionary entry.
pub fn search_factors(target: &[f64], dictionary: &[Candidate], cfg: &SearchConfig) -> Result<SearchReport, ImpactError> {
    if dictionary.is_empty() {
        return Err(ImpactError::Model("empty factor dictionary".into()));
    }
    if cfg.folds < 2 || target.len() < cfg.folds {
        return Err(ImpactError::InsufficientRecords { needed: cfg.folds.max(2), got: target.len() });
    }
    if let Some(c) = dictionary.iter().find(|c| c.values.len() != target.len()) {
        return Err(ImpactError::Model(format!("candidate {} has {} values for {} records", c.name, c.values.len(), target.len())));
    }
    let base_r2 = cv_r2(target, &[], cfg.folds);
    let mut chosen: Vec<usize> = Vec::new();
    let mut selected = Vec::new();
    let mut current = base_r2;
    while chosen.len() < cfg.max_factors {
        let mut best: Option<(usize, f64)> = None;
        for (k, _) in dictionary.iter().enumerate().filter(|(k, _)| !chosen.contains(k)) {
            let cols: Vec<&[f64]> = chosen.iter().chain([&k]).map(|&i| dictionary[i].values.as_slice()).collect();
            let r2 = cv_r2(target, &cols, cfg.folds);
            if best.is_none_or(|(_, b)| r2 > b) {
                best = Some((k, r2));
            }
        }
        let Some((k, r2)) = best else { break };
        let gain = r2 - current;
        if !(gain >= cfg.min_gain) {
            break;
        }
        chosen.push(k);
        selected.push(SearchStep { name: dictionary[k].name.clone(), index: k, cv_r2: r2, gain });
        current = r2;
    }
    Ok(SearchReport { method: "forward stepwise (cross-validated)".into(), base_r2, selected })
}

/// Pairwise Pearson correlations; absent where either column has zero
/// variance.
pub fn correlation_matrix(columns: &[Vec<f64>]) -> Vec<Vec<Option<f64>>> {
    columns
        .iter()
        .map(|a| {
            columns
                .iter()
                .map(|b| if std::ptr::eq(a, b) { pearson(a, a).map(|_| 1.0) } else { pearson(a, b) })
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorCorrelation {
    pub names: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
    pub records_used: usize,
}

/// Correlations among √(Q/V), σ, resiliency, LOB pressure and LOB depth over
/// the records where all five are present.
pub fn factor_correlation_matrix(records: &[ImpactRecord]) -> Result<FactorCorrelation, ImpactError> {
    let factors = [Factor::SqrtParticipation, Factor::Sigma, Factor::Resiliency, Factor::LobPressure, Factor::LobDepth];
    let rows: Vec<Vec<f64>> = records
        .iter()
        .filter_map(|r| factors.iter().map(|f| f.value(r)).collect::<Option<Vec<f64>>>())
        .collect();
    if rows.len() < 2 {
        return Err(ImpactError::InsufficientRecords { needed: 2, got: rows.len() });
    }
    let columns: Vec<Vec<f64>> = (0..factors.len()).map(|c| rows.iter().map(|r| r[c]).collect()).collect();
    Ok(FactorCorrelation {
        names: ["sqrt_q_v", "sigma", "resiliency", "lob_pressure", "lob_depth"].map(String::from).to_vec(),
        values: correlation_matrix(&columns),
        records_used: rows.len(),
    })
}
