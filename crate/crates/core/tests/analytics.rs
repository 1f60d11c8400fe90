mod common;

use common::{ar1, garch, iid_normal, spike_series, student_t};
use mars_core::analytics::{
    aggregate_forecast, autocorr, detect_anomaly, fano_factor, forecast_label, histogram_pair, moments,
    normalize_by_minute_of_day, overlap_coefficient, stylized_report, three_class, volatility_clustering, Direction,
    Histogram, ReturnSeries, StylizedConfig, ThreeClass, Thresholds, DEFAULT_DETECTION_THRESHOLD,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

fn lags(range: std::ops::RangeInclusive<usize>) -> Vec<usize> {
    range.collect()
}

fn report_for(series: Vec<f64>) -> mars_core::analytics::StylizedReport {
    stylized_report(&[ReturnSeries::new("x", series).into()], &StylizedConfig::default())
}

#[test]
fn constant_increments_have_no_autocorrelation() {
    assert!(autocorr(&[0.5; 100], &[1, 2]).iter().all(Option::is_none));
}

#[test]
fn white_noise_stays_inside_the_bound() {
    let x = iid_normal(10_000, 1);
    let bound = 3.0 / (x.len() as f64).sqrt();
    for r in autocorr(&x, &lags(1..=10)).into_iter().chain(volatility_clustering(&x, &lags(1..=10))) {
        assert!(r.unwrap().abs() < bound);
    }
}

#[test]
fn ar1_lag_one_matches_phi() {
    let r = autocorr(&ar1(10_000, 0.5, 2), &[1])[0].unwrap();
    assert!((r - 0.5).abs() < 0.05, "{r}");
}

#[test]
fn garch_absolute_returns_cluster_and_decay() {
    let x = garch(20_000, 0.05, 0.1, 0.85, 3);
    let acf: Vec<f64> = volatility_clustering(&x, &lags(1..=20)).into_iter().map(Option::unwrap).collect();
    assert!(acf[0] > 0.1, "{}", acf[0]);
    // Least-squares slope of the acf against the lag.
    let n = acf.len() as f64;
    let mx = (n + 1.0) / 2.0;
    let my = acf.iter().sum::<f64>() / n;
    let slope: f64 = acf.iter().enumerate().map(|(i, y)| (i as f64 + 1.0 - mx) * (y - my)).sum::<f64>();
    assert!(slope <= 0.0);
    assert_eq!(volatility_clustering(&x, &[1, 5]), volatility_clustering(&x, &[1, 5]));
}

#[test]
fn moment_baselines() {
    let normal = moments(&iid_normal(100_000, 4)).unwrap();
    assert!(normal.excess_kurtosis.abs() < 0.1, "{}", normal.excess_kurtosis);
    assert!(moments(&student_t(100_000, 4.0, 5)).unwrap().excess_kurtosis > 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let expo: Vec<f64> = (0..10_000).map(|_| 3.0 - rng.random::<f64>().ln()).collect();
    assert!(moments(&expo).unwrap().skewness > 0.0);
    assert!(moments(&[1.0; 10]).is_none());
}

#[test]
fn fano_separates_poisson_from_bursts() {
    let homogeneous = fano_factor(&spike_series(100_000, 0.02, false, 7), 0.99, 100).unwrap();
    assert!((0.8..=1.2).contains(&homogeneous), "{homogeneous}");
    let bursty = fano_factor(&spike_series(100_000, 0.02, true, 8), 0.99, 100).unwrap();
    assert!(bursty > 1.5, "{bursty}");
    assert!(fano_factor(&spike_series(100, 0.02, false, 9), 0.99, 100).is_none());
}

#[test]
fn iid_normal_truth_table() {
    let report = report_for(iid_normal(10_000, 10));
    assert_eq!(report.facts.len(), 11);
    for id in [1, 4] {
        assert_eq!(report.fact(id).satisfied, Some(true), "fact {id}");
    }
    for id in [2, 5, 6, 8] {
        assert_eq!(report.fact(id).satisfied, Some(false), "fact {id}");
    }
}

#[test]
fn garch_truth_table() {
    let report = report_for(garch(20_000, 0.05, 0.1, 0.85, 11));
    for id in [6, 8] {
        assert_eq!(report.fact(id).satisfied, Some(true), "fact {id}");
    }
}

#[test]
fn minute_of_day_normalization_flattens_a_u_shape() {
    let (days, mpd) = (400, 240);
    let z = iid_normal(days * mpd, 12);
    let scale = |m: usize| 1.0 + 2.0 * ((m as f64 - 120.0) / 120.0).powi(2);
    let series: Vec<f64> = z.iter().enumerate().map(|(i, e)| e * scale(i % mpd)).collect();
    let normalized = normalize_by_minute_of_day(&series, mpd);
    let per_minute: Vec<f64> = (0..mpd)
        .map(|m| {
            let xs: Vec<f64> = normalized.iter().skip(m).step_by(mpd).copied().collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64
        })
        .collect();
    let overall = per_minute.iter().sum::<f64>() / mpd as f64;
    for v in per_minute {
        assert!((v / overall - 1.0).abs() < 0.1);
    }
}

fn two_bins(a: f64, b: f64) -> Histogram {
    Histogram::new(vec![0.0, 1.0, 2.0], vec![a, b]).unwrap()
}

#[test]
fn overlap_unit_examples() {
    let h = two_bins(0.5, 0.5);
    assert!((overlap_coefficient(&h, &h).unwrap() - 1.0).abs() < 1e-12);
    assert!(overlap_coefficient(&two_bins(1.0, 0.0), &two_bins(0.0, 1.0)).unwrap().abs() < 1e-12);
    assert!((overlap_coefficient(&h, &two_bins(0.3, 0.7)).unwrap() - 0.8).abs() < 1e-12);
    let other = Histogram::new(vec![0.0, 1.0, 3.0], vec![0.5, 0.5]).unwrap();
    assert!(overlap_coefficient(&h, &other).is_err());
}

fn random_masses(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

proptest! {
    #[test]
    fn overlap_is_symmetric_and_bounded(
        a in proptest::collection::vec(0.001f64..1.0, 8),
        b in proptest::collection::vec(0.001f64..1.0, 8),
    ) {
        let edges: Vec<f64> = (0..=8).map(f64::from).collect();
        let (ha, hb) = (Histogram::new(edges.clone(), random_masses(&a)).unwrap(), Histogram::new(edges, random_masses(&b)).unwrap());
        let ab = overlap_coefficient(&ha, &hb).unwrap();
        prop_assert!((ab - overlap_coefficient(&hb, &ha).unwrap()).abs() < 1e-15);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
        prop_assert!((overlap_coefficient(&ha, &ha).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn uniform_tertiles_and_order_independence() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut train: Vec<f64> = (0..30_000).map(|_| rng.random::<f64>()).collect();
    let (class, t) = three_class(&train, 0.01).unwrap();
    assert_eq!(class, ThreeClass::Low);
    assert!((t.low - 1.0 / 3.0).abs() < 0.01 && (t.high - 2.0 / 3.0).abs() < 0.01);
    train.shuffle(&mut rng);
    assert_eq!(Thresholds::fit(&train).unwrap(), t);
    assert!(Thresholds::fit(&[1.0; 10]).is_err());
}

#[test]
fn forecast_labels_and_training_balance() {
    let t = Thresholds { low: -0.001, high: 0.001 };
    assert_eq!(forecast_label(&[100.0, 100.0, 100.0], &t).unwrap(), (0.0, Direction::Flat));
    let (l, d) = forecast_label(&[10_000.0, 10_050.0, 10_150.0], &t).unwrap();
    assert!((l - 0.01).abs() < 1e-12);
    assert_eq!(d, Direction::Up);
    assert!(forecast_label(&[0.0, 1.0], &t).is_err());

    // Labels of a random walk's 10-step windows, thresholds fit on themselves.
    let steps = iid_normal(30_010, 14);
    let mut mids = vec![10_000.0];
    for s in &steps {
        let last = *mids.last().unwrap();
        mids.push(last * (1.0 + 1e-4 * s));
    }
    let labels: Vec<f64> = (0..30_000).map(|i| {
        let w = &mids[i..=i + 10];
        (w[1..].iter().sum::<f64>() / 10.0 - w[0]) / w[0]
    }).collect();
    let fit = Thresholds::fit(&labels).unwrap();
    for class in [ThreeClass::Low, ThreeClass::Medium, ThreeClass::High] {
        let share = labels.iter().filter(|&&l| fit.classify(l) == class).count() as f64 / labels.len() as f64;
        assert!((share - 1.0 / 3.0).abs() < 0.02, "{class:?}: {share}");
    }
}

#[test]
fn aggregation_examples() {
    assert_eq!(aggregate_forecast(&[Direction::Up; 128]), Direction::Up);
    let mut votes = vec![Direction::Down; 65];
    votes.extend([Direction::Flat; 33]);
    votes.extend([Direction::Up; 30]);
    assert_eq!(aggregate_forecast(&votes), Direction::Down);
    assert_eq!(aggregate_forecast(&[Direction::Up, Direction::Down]), Direction::Flat);
}

#[test]
fn detection_examples() {
    let h = two_bins(0.5, 0.5);
    let d = detect_anomaly(&h, &h, DEFAULT_DETECTION_THRESHOLD).unwrap();
    assert_eq!((d.score, d.flag), (1.0, false));
    let d = detect_anomaly(&two_bins(0.36, 0.64), &two_bins(0.5, 0.5), DEFAULT_DETECTION_THRESHOLD).unwrap();
    assert!((d.score - 0.86).abs() < 1e-12);
    assert!(d.flag);
}

#[test]
fn pooled_histograms_share_edges() {
    let (a, b) = histogram_pair(&[1.0, 2.0, 3.0], &[2.0, 5.0], 4).unwrap();
    assert_eq!(a.edges(), b.edges());
    assert_eq!(a.edges().first(), Some(&1.0));
    assert_eq!(a.edges().last(), Some(&5.0));
}
