use serde::{Deserialize, Serialize};

use super::metrics::{ThreeClass, Thresholds};
use super::AnalyticsError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Down,
    Flat,
    Up,
}

impl From<ThreeClass> for Direction {
    fn from(c: ThreeClass) -> Self {
        match c {
            ThreeClass::Low => Direction::Down,
            ThreeClass::Medium => Direction::Flat,
            ThreeClass::High => Direction::Up,
        }
    }
}

/// Relative change of the mean future mid over the current one:
/// `l = (mean(m₁..mₙ) − m₀) / m₀`, classed by tertile thresholds.
pub fn forecast_label(mids: &[f64], thresholds: &Thresholds) -> Result<(f64, Direction), AnalyticsError> {
    let (m0, future) = mids.split_first().ok_or(AnalyticsError::Empty)?;
    if future.is_empty() {
        return Err(AnalyticsError::Empty);
    }
    if !(*m0 > 0.0) {
        return Err(AnalyticsError::NonPositiveReference(*m0));
    }
    let mean = future.iter().sum::<f64>() / future.len() as f64;
    let l = (mean - m0) / m0;
    Ok((l, thresholds.classify(l).into()))
}

/// Majority vote over rollout labels. Ties, and an empty vote, resolve to
/// `Flat`.
pub fn aggregate_forecast(labels: &[Direction]) -> Direction {
    let count = |d| labels.iter().filter(|&&l| l == d).count();
    let (down, flat, up) = (count(Direction::Down), count(Direction::Flat), count(Direction::Up));
    if up > down && up > flat {
        Direction::Up
    } else if down > up && down > flat {
        Direction::Down
    } else {
        Direction::Flat
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const T: Thresholds = Thresholds { low: -0.001, high: 0.001 };

    #[test]
    fn label_examples() {
        assert_eq!(forecast_label(&[100.0, 100.0, 100.0], &T).unwrap(), (0.0, Direction::Flat));
        let (l, d) = forecast_label(&[10_000.0, 10_050.0, 10_150.0], &T).unwrap();
        assert!((l - 0.01).abs() < 1e-12);
        assert_eq!(d, Direction::Up);
        assert_eq!(forecast_label(&[0.0, 1.0], &T), Err(AnalyticsError::NonPositiveReference(0.0)));
        assert_eq!(forecast_label(&[1.0], &T), Err(AnalyticsError::Empty));
    }

    #[test]
    fn vote_examples() {
        use Direction::*;
        assert_eq!(aggregate_forecast(&[Up; 5]), Up);
        let mut votes = vec![Down; 65];
        votes.extend([Up; 33]);
        votes.extend([Flat; 30]);
        assert_eq!(aggregate_forecast(&votes), Down);
        assert_eq!(aggregate_forecast(&[Up, Down]), Flat);
        assert_eq!(aggregate_forecast(&[Up, Flat]), Flat);
        assert_eq!(aggregate_forecast(&[]), Flat);
    }
}
