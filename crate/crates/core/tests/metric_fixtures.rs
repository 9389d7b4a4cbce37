use idea::dataio::Frequency;
use idea::evalkit::{
    mape, mase, naive2, naive2_forecast, owa, paper_tourism_weights, score_dataset, seasonality_test, smape,
    weighted_average, EvalSeries, MaseDenominator, OwaAggregation,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn yearly(train: &[f64], test: &[f64]) -> EvalSeries {
    EvalSeries {
        train: train.to_vec(),
        test: test.to_vec(),
        period: 1,
        frequency: Frequency::Yearly,
    }
}

fn near(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9
}

#[test]
fn point_metrics_match_hand_values() {
    assert!(near(mape(&[110.0], &[100.0]).unwrap(), 10.0));
    assert!(near(smape(&[110.0], &[100.0]).unwrap(), 200.0 * 10.0 / 210.0));
    assert_eq!(smape(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 0.0);
    assert_eq!(mape(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 0.0);
    let s = yearly(&[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0]);
    assert!(near(mase(&[5.0, 5.0], &s, MaseDenominator::Paper).unwrap(), 0.5));
    assert_eq!(mase(&[5.0, 6.0], &s, MaseDenominator::Paper).unwrap(), 0.0);
}

#[test]
fn naive2_fixtures() {
    assert_eq!(naive2_forecast(&[3.0, 9.0, 42.0], 1, 3).unwrap(), vec![42.0; 3]);
    assert_eq!(naive2_forecast(&[5.0; 40], 12, 6).unwrap(), vec![5.0; 6]);
    let index = [0.8, 1.0, 1.3, 0.9];
    let y: Vec<f64> = (0..48).map(|t| 100.0 * index[t % 4]).collect();
    let f = naive2_forecast(&y, 4, 8).unwrap();
    for (h, v) in f.iter().enumerate() {
        let truth = 100.0 * index[(48 + h) % 4];
        assert!(((v - truth) / truth).abs() <= 0.01, "{v} vs {truth}");
    }
}

#[test]
fn seasonality_test_fixtures() {
    let sine: Vec<f64> = (0..60).map(|t| 10.0 + (2.0 * std::f64::consts::PI * t as f64 / 12.0).sin()).collect();
    assert!(seasonality_test(&sine, 12));
    assert!(!seasonality_test(&sine, 1));
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let noise: Vec<f64> = (0..60).map(|_| rng.gen_range(-1.0..1.0)).collect();
    assert!(!seasonality_test(&noise, 12));
}

#[test]
fn owa_fixtures() {
    let s = yearly(&[1.0, 2.0, 3.0, 5.0], &[6.0, 8.0]);
    let base = naive2(&s).unwrap();
    assert_eq!(owa(&base, &s, MaseDenominator::Paper).unwrap(), 1.0);

    let series = [
        yearly(&[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0]),
        yearly(&[10.0, 10.0, 10.0, 10.0], &[10.0, 12.0]),
        yearly(&[8.0, 6.0, 4.0, 2.0], &[1.0, 1.0]),
    ];
    let forecasts = vec![vec![5.0, 5.0], vec![11.0, 11.0], vec![2.0, 1.0]];
    // naive2 repeats the last training value: [4,4], [10,10], [2,2]
    let smape_m = (100.0 / 11.0 + 100.0 * (1.0 / 21.0 + 1.0 / 23.0) + 100.0 / 3.0) / 3.0;
    let smape_n = (100.0 * (1.0 / 9.0 + 1.0 / 5.0) + 100.0 / 11.0 + 200.0 / 3.0) / 3.0;
    // seasonal-difference scales over train and test: 1, 0.4, 1.4
    let mase_m = (0.5 / 1.0 + 1.0 / 0.4 + 0.5 / 1.4) / 3.0;
    let mase_n = (1.5 / 1.0 + 1.0 / 0.4 + 1.0 / 1.4) / 3.0;
    let expected = 0.5 * (smape_m / smape_n + mase_m / mase_n);
    let got = score_dataset(&forecasts, &series, MaseDenominator::Paper, OwaAggregation::AggregateThenRatio).unwrap();
    assert!(near(got.smape, smape_m));
    assert!(near(got.mase, mase_m));
    assert!(near(got.owa, expected), "{} vs {expected}", got.owa);

    let per_series: f64 = series
        .iter()
        .zip(&forecasts)
        .map(|(e, f)| owa(f, e, MaseDenominator::Paper).unwrap())
        .sum::<f64>()
        / 3.0;
    let got = score_dataset(&forecasts, &series, MaseDenominator::Paper, OwaAggregation::PerSeriesMean).unwrap();
    assert!(near(got.owa, per_series));
}

#[test]
fn closer_forecast_owa_matches_hand_value() {
    let s = yearly(&[1.0, 2.0, 3.0, 4.0], &[6.0, 6.0]);
    // naive2 = [4,4]; [5,5] halves the absolute errors
    let f = [5.0, 5.0];
    let expected = 0.5 * ((100.0 * 2.0 / 11.0) / (100.0 * 4.0 / 10.0) + 0.5);
    assert!(near(owa(&f, &s, MaseDenominator::Paper).unwrap(), expected));
}

#[test]
fn paper_weights_reproduce_hand_average() {
    let values = [
        (Frequency::Yearly, 23.0),
        (Frequency::Quarterly, 14.0),
        (Frequency::Monthly, 18.0),
    ];
    let total = 6.0 * 645.0 + 8.0 * 756.0 + 18.0 * 1428.0 + 8.0 * 174.0;
    let hand = (6.0 * 645.0 * 23.0 + 8.0 * 756.0 * 14.0 + 18.0 * 1428.0 * 18.0) / total;
    assert!(near(weighted_average(&values, &paper_tourism_weights()).unwrap(), hand));
    let flat = [(Frequency::Yearly, 7.0), (Frequency::Monthly, 7.0)];
    let counts = [(Frequency::Yearly, 3.0), (Frequency::Monthly, 9.0)];
    assert!(near(weighted_average(&flat, &counts).unwrap(), 7.0));
}
