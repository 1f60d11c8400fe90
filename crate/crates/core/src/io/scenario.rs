//! Searching minute-return histories for scenario windows.

use std::collections::HashSet;

use chrono::{NaiveDate, NaiveTime};
use serde::{Deserialize, Serialize};

use super::{minute_index, IoError, MinuteReturnMatrix, TradingSessions};
use crate::flow::ControlSignal;

/// Leading minutes of a scenario window that serve as history rather than
/// targets.
pub const SCENARIO_CONTEXT_MINUTES: usize = 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioTag {
    /// Window return at or below a negative threshold.
    SharpDrop,
    /// Window return at or above a positive threshold.
    SharpRise,
    /// The first half rises by at least |threshold| and the second half falls
    /// by at least as much.
    TrendReversal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSample {
    pub date: NaiveDate,
    pub start: NaiveTime,
    pub end: NaiveTime,
    pub instrument: String,
    pub window_return: f64,
    pub tag: ScenarioTag,
}

fn qualifies(tag: ScenarioTag, returns: &[f64], threshold: f64) -> bool {
    match tag {
        ScenarioTag::SharpDrop => returns.iter().sum::<f64>() <= threshold,
        ScenarioTag::SharpRise => returns.iter().sum::<f64>() >= threshold,
        ScenarioTag::TrendReversal => {
            let (rise, fall) = returns.split_at(returns.len() / 2);
            let t = threshold.abs();
            rise.iter().sum::<f64>() >= t && fall.iter().sum::<f64>() <= -t
        }
    }
}

/// Runs of consecutive rows that share a date and a trading session with no
/// missing minute, as `[start, end)` row ranges.
fn contiguous_runs(matrix: &MinuteReturnMatrix, sessions: &TradingSessions) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=matrix.rows.len() {
        let breaks = i == matrix.rows.len() || {
            let (d0, t0) = matrix.rows[i - 1];
            let (d1, t1) = matrix.rows[i];
            d0 != d1 || sessions.session_of(t0) != sessions.session_of(t1) || minute_index(t1) != minute_index(t0) + 1
        };
        if breaks {
            if i > start {
                runs.push((start, i));
            }
            start = i;
        }
    }
    runs
}

/// Rolling `window`-minute windows inside single trading sessions whose
/// returns match `tag`. Scanning goes by date, start time, then instrument
/// name; a window is kept only if its date, instrument and start time are
/// all unused by earlier picks. At most `max_samples` are returned.
pub fn scenario_filter(
    matrix: &MinuteReturnMatrix,
    sessions: &TradingSessions,
    window: usize,
    threshold: f64,
    max_samples: usize,
    tag: ScenarioTag,
) -> Result<Vec<ScenarioSample>, IoError> {
    if window == 0 || window as u32 > sessions.longest_session() {
        return Err(IoError::Scenario(format!(
            "window of {window} minutes does not fit a {}-minute session",
            sessions.longest_session()
        )));
    }
    match tag {
        ScenarioTag::SharpDrop if !(threshold < 0.0) => {
            return Err(IoError::Scenario("a sharp-drop threshold must be negative".into()))
        }
        ScenarioTag::SharpRise if !(threshold > 0.0) => {
            return Err(IoError::Scenario("a sharp-rise threshold must be positive".into()))
        }
        ScenarioTag::TrendReversal if !(threshold != 0.0 && threshold.is_finite()) => {
            return Err(IoError::Scenario("a reversal threshold must be non-zero".into()))
        }
        _ => {}
    }
    let mut order: Vec<usize> = (0..matrix.instruments.len()).collect();
    order.sort_by(|&a, &b| matrix.instruments[a].cmp(&matrix.instruments[b]));

    let mut candidates = Vec::new();
    for (lo, hi) in contiguous_runs(matrix, sessions) {
        for start in lo..hi.saturating_sub(window - 1) {
            for &col in &order {
                let returns: Vec<f64> = (start..start + window).map(|r| matrix.values[r][col]).collect();
                if qualifies(tag, &returns, threshold) {
                    candidates.push((start, col, returns.iter().sum::<f64>()));
                }
            }
        }
    }
    // Runs are in file order; sort so selection does not depend on it.
    candidates.sort_by(|a, b| {
        let (ka, kb) = (matrix.rows[a.0], matrix.rows[b.0]);
        ka.cmp(&kb).then_with(|| matrix.instruments[a.1].cmp(&matrix.instruments[b.1]))
    });

    let mut seen_dates = HashSet::new();
    let mut seen_instruments = HashSet::new();
    let mut seen_starts = HashSet::new();
    let mut out = Vec::new();
    for (start, col, window_return) in candidates {
        if out.len() >= max_samples {
            break;
        }
        let (date, time) = matrix.rows[start];
        let instrument = &matrix.instruments[col];
        if seen_dates.contains(&date) || seen_instruments.contains(instrument) || seen_starts.contains(&time) {
            continue;
        }
        seen_dates.insert(date);
        seen_instruments.insert(instrument.clone());
        seen_starts.insert(time);
        out.push(ScenarioSample {
            date,
            start: time,
            end: matrix.rows[start + window - 1].1,
            instrument: instrument.clone(),
            window_return,
            tag,
        });
    }
    Ok(out)
}

/// The sample's minute returns as a scenario control: the first
/// [`SCENARIO_CONTEXT_MINUTES`] are context, the rest targets.
pub fn scenario_to_control(sample: &ScenarioSample, matrix: &MinuteReturnMatrix) -> Result<ControlSignal, IoError> {
    let col = matrix
        .column(&sample.instrument)
        .ok_or_else(|| IoError::Scenario(format!("unknown instrument {}", sample.instrument)))?;
    let (from, to) = (minute_index(sample.start), minute_index(sample.end));
    if to < from {
        return Err(IoError::Scenario("window ends before it starts".into()));
    }
    let returns = (from..=to)
        .map(|m| {
            let t = NaiveTime::from_hms_opt(m / 60, m % 60, 0).expect("minute of day");
            matrix
                .row_of(sample.date, t)
                .map(|r| matrix.values[r][col])
                .ok_or_else(|| IoError::Scenario(format!("missing minute {t} on {}", sample.date)))
        })
        .collect::<Result<Vec<f64>, IoError>>()?;
    let context = SCENARIO_CONTEXT_MINUTES.min(returns.len());
    Ok(ControlSignal::scenario(returns, context))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn day_matrix(instruments: &[&str], date: &str, planted: &[(usize, usize, f64)]) -> MinuteReturnMatrix {
        let sessions = TradingSessions::default();
        let date = NaiveDate::parse_from_str(date, "%Y-%m-%d").unwrap();
        let mut rows = Vec::new();
        for (a, b) in &sessions.sessions {
            let mut t = *a;
            while t <= *b {
                rows.push((date, t));
                t += chrono::Duration::minutes(1);
            }
        }
        let mut values = vec![vec![0.0; instruments.len()]; rows.len()];
        for &(row, col, v) in planted {
            values[row][col] = v;
        }
        MinuteReturnMatrix { instruments: instruments.iter().map(|s| s.to_string()).collect(), rows, values }
    }

    #[test]
    fn planted_drop_is_found_with_its_window() {
        // Rows 30..55 of instrument B sum to −0.06.
        let planted: Vec<(usize, usize, f64)> = (30..55).map(|r| (r, 1, -0.0024)).collect();
        let m = day_matrix(&["A", "B"], "2023-01-03", &planted);
        let s = scenario_filter(&m, &TradingSessions::default(), 25, -0.05, 30, ScenarioTag::SharpDrop).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].instrument, "B");
        let control = scenario_to_control(&s[0], &m).unwrap();
        assert_eq!(control.returns.len(), 25);
        assert_eq!(control.context_minutes, SCENARIO_CONTEXT_MINUTES);
    }

    #[test]
    fn lunch_straddling_window_is_excluded() {
        // Last 12 morning minutes and first 13 afternoon minutes.
        let planted: Vec<(usize, usize, f64)> = (108..133).map(|r| (r, 0, -0.003)).collect();
        let m = day_matrix(&["A"], "2023-01-03", &planted);
        assert!(scenario_filter(&m, &TradingSessions::default(), 25, -0.05, 30, ScenarioTag::SharpDrop).unwrap().is_empty());
    }

    #[test]
    fn rejects_bad_requests() {
        let m = day_matrix(&["A"], "2023-01-03", &[]);
        let s = TradingSessions::default();
        assert!(scenario_filter(&m, &s, 121, -0.05, 30, ScenarioTag::SharpDrop).is_err());
        assert!(scenario_filter(&m, &s, 25, 0.05, 30, ScenarioTag::SharpDrop).is_err());
        assert!(scenario_filter(&m, &s, 25, -0.05, 30, ScenarioTag::SharpRise).is_err());
    }

    #[test]
    fn reversal_needs_both_phases() {
        let mut planted: Vec<(usize, usize, f64)> = (0..12).map(|r| (r, 0, 0.005)).collect();
        planted.extend((12..25).map(|r| (r, 0, -0.005)));
        let m = day_matrix(&["A"], "2023-01-03", &planted);
        let s = scenario_filter(&m, &TradingSessions::default(), 25, 0.05, 30, ScenarioTag::TrendReversal).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].start, NaiveTime::from_hms_opt(9, 31, 0).unwrap());
    }
}
