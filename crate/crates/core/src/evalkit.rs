//! Point-forecast accuracy metrics and the naive2 reference.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataio::Frequency;
use crate::error::{Error, Result};

/// One-sided 90% normal quantile of the seasonality test.
const SEASONALITY_Z: f64 = 1.645;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSeries {
    pub train: Vec<f64>,
    pub test: Vec<f64>,
    pub period: usize,
    pub frequency: Frequency,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaseDenominator {
    /// Seasonal differences over train and test together.
    #[default]
    Paper,
    /// Seasonal differences over the training part only.
    InSample,
}

impl FromStr for MaseDenominator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "paper" => Ok(Self::Paper),
            "insample" | "in-sample" => Ok(Self::InSample),
            other => Err(Error::InvalidConfig(vec![format!("unknown MASE denominator `{other}`")])),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OwaAggregation {
    /// Ratio of dataset-mean sMAPE and MASE to those of naive2.
    #[default]
    AggregateThenRatio,
    /// Mean of per-series OWA values.
    PerSeriesMean,
}

fn check_lengths(op: &'static str, yhat: &[f64], y: &[f64]) -> Result<()> {
    if yhat.len() != y.len() || y.is_empty() {
        return Err(Error::shape(op, &[&[yhat.len()], &[y.len()]]));
    }
    Ok(())
}

/// `(200/H) Σ |y − ŷ| / (|y| + |ŷ|)`; a term with zero denominator is 0.
pub fn smape(yhat: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths("smape", yhat, y)?;
    let total: f64 = y
        .iter()
        .zip(yhat)
        .map(|(&a, &f)| {
            let den = a.abs() + f.abs();
            if den == 0.0 {
                0.0
            } else {
                (a - f).abs() / den
            }
        })
        .sum();
    Ok(200.0 * total / y.len() as f64)
}

/// `(100/H) Σ |y − ŷ| / |y|`.
pub fn mape(yhat: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths("mape", yhat, y)?;
    let mut total = 0.0;
    for (i, (&a, &f)) in y.iter().zip(yhat).enumerate() {
        if a == 0.0 {
            return Err(Error::ZeroTarget { index: i });
        }
        total += (a - f).abs() / a.abs();
    }
    Ok(100.0 * total / y.len() as f64)
}

/// Mean absolute lag-`s` difference.
pub fn seasonal_scale(values: &[f64], period: usize) -> Option<f64> {
    if period == 0 || values.len() <= period {
        return None;
    }
    let n = values.len() - period;
    Some((period..values.len()).map(|j| (values[j] - values[j - period]).abs()).sum::<f64>() / n as f64)
}

pub fn mase(yhat: &[f64], series: &EvalSeries, denominator: MaseDenominator) -> Result<f64> {
    check_lengths("mase", yhat, &series.test)?;
    let s = series.period.max(1);
    let scale = match denominator {
        MaseDenominator::Paper => {
            let full: Vec<f64> = series.train.iter().chain(&series.test).copied().collect();
            seasonal_scale(&full, s)
        }
        MaseDenominator::InSample => seasonal_scale(&series.train, s),
    };
    let scale = scale.ok_or_else(|| Error::Degenerate(format!("series shorter than period {s} + 1")))?;
    if scale == 0.0 {
        return Err(Error::Degenerate("seasonal differences are all zero".into()));
    }
    let mae = series.test.iter().zip(yhat).map(|(a, f)| (a - f).abs()).sum::<f64>() / yhat.len() as f64;
    Ok(mae / scale)
}

/// Sample autocorrelation at `lag`.
pub fn acf(values: &[f64], lag: usize) -> f64 {
    let n = values.len();
    if lag >= n {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let den: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    if den == 0.0 {
        return 0.0;
    }
    let num: f64 = (0..n - lag).map(|i| (values[i] - mean) * (values[i + lag] - mean)).sum();
    num / den
}

/// 90% autocorrelation test at the seasonal lag.
pub fn seasonality_test(train: &[f64], period: usize) -> bool {
    if period <= 1 || train.len() <= period + 2 {
        return false;
    }
    let sum_sq: f64 = (1..period).map(|i| acf(train, i).powi(2)).sum();
    let limit = SEASONALITY_Z * ((1.0 + 2.0 * sum_sq) / train.len() as f64).sqrt();
    acf(train, period).abs() > limit
}

/// Centred moving average of window `period` (`2×period` when even);
/// `None` at the edges.
fn centred_moving_average(values: &[f64], period: usize) -> Vec<Option<f64>> {
    let n = values.len();
    let mut out = vec![None; n];
    if period % 2 == 1 {
        let half = period / 2;
        for (i, o) in out.iter_mut().enumerate().take(n.saturating_sub(half)).skip(half) {
            *o = Some(values[i - half..=i + half].iter().sum::<f64>() / period as f64);
        }
    } else {
        let half = period / 2;
        for (i, o) in out.iter_mut().enumerate().take(n.saturating_sub(half)).skip(half) {
            let inner: f64 = values[i + 1 - half..i + half].iter().sum();
            let edges = 0.5 * (values[i - half] + values[i + half]);
            *o = Some((inner + edges) / period as f64);
        }
    }
    out
}

/// Multiplicative seasonal indices by phase `j mod period`, normalised to
/// mean 1.
pub fn seasonal_indices(values: &[f64], period: usize) -> Option<Vec<f64>> {
    let ma = centred_moving_average(values, period);
    let mut sums = vec![0.0; period];
    let mut counts = vec![0usize; period];
    for (j, (v, m)) in values.iter().zip(&ma).enumerate() {
        if let Some(m) = m {
            if *m == 0.0 {
                return None;
            }
            sums[j % period] += v / m;
            counts[j % period] += 1;
        }
    }
    if counts.iter().any(|&c| c == 0) {
        return None;
    }
    let raw: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    let mean = raw.iter().sum::<f64>() / period as f64;
    if !(mean.is_finite() && mean != 0.0) {
        return None;
    }
    Some(raw.iter().map(|r| r / mean).collect())
}

/// Last value repeated on seasonally adjusted data when the series tests
/// seasonal; plain last value otherwise.
pub fn naive2_forecast(train: &[f64], period: usize, horizon: usize) -> Result<Vec<f64>> {
    let last = *train.last().ok_or_else(|| Error::Data("naive2 needs a non-empty series".into()))?;
    if period <= 1 || !seasonality_test(train, period) {
        return Ok(vec![last; horizon]);
    }
    if train.len() < 3 * period {
        log::info!("naive2: {} points is too short for period {period}, using last value", train.len());
        return Ok(vec![last; horizon]);
    }
    let Some(si) = seasonal_indices(train, period) else {
        log::info!("naive2: decomposition failed, using last value");
        return Ok(vec![last; horizon]);
    };
    let n = train.len();
    let level = last / si[(n - 1) % period];
    Ok((0..horizon).map(|i| level * si[(n + i) % period]).collect())
}

pub fn naive2(series: &EvalSeries) -> Result<Vec<f64>> {
    naive2_forecast(&series.train, series.period, series.test.len())
}

/// `½ (sMAPE / sMAPE_naive2 + MASE / MASE_naive2)` for one series.
pub fn owa(yhat: &[f64], series: &EvalSeries, denominator: MaseDenominator) -> Result<f64> {
    let reference = naive2(series)?;
    let s_ref = smape(&reference, &series.test)?;
    let m_ref = mase(&reference, series, denominator)?;
    if s_ref == 0.0 || m_ref == 0.0 {
        return Err(Error::Degenerate("naive2 is exact; OWA undefined".into()));
    }
    Ok(0.5 * (smape(yhat, &series.test)? / s_ref + mase(yhat, series, denominator)? / m_ref))
}

/// Dataset-level metrics of one method.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetScore {
    pub smape: f64,
    pub mase: f64,
    pub owa: f64,
}

pub fn score_dataset(
    forecasts: &[Vec<f64>],
    series: &[EvalSeries],
    denominator: MaseDenominator,
    aggregation: OwaAggregation,
) -> Result<DatasetScore> {
    if forecasts.len() != series.len() || series.is_empty() {
        return Err(Error::shape("score_dataset", &[&[forecasts.len()], &[series.len()]]));
    }
    let n = series.len() as f64;
    let mut s = 0.0;
    let mut m = 0.0;
    let mut s_ref = 0.0;
    let mut m_ref = 0.0;
    let mut owa_sum = 0.0;
    for (f, e) in forecasts.iter().zip(series) {
        let reference = naive2(e)?;
        let (sf, mf) = (smape(f, &e.test)?, mase(f, e, denominator)?);
        let (sr, mr) = (smape(&reference, &e.test)?, mase(&reference, e, denominator)?);
        s += sf;
        m += mf;
        s_ref += sr;
        m_ref += mr;
        if aggregation == OwaAggregation::PerSeriesMean {
            if sr == 0.0 || mr == 0.0 {
                return Err(Error::Degenerate("naive2 is exact on a series; OWA undefined".into()));
            }
            owa_sum += 0.5 * (sf / sr + mf / mr);
        }
    }
    let owa = match aggregation {
        OwaAggregation::AggregateThenRatio => {
            if s_ref == 0.0 || m_ref == 0.0 {
                return Err(Error::Degenerate("naive2 is exact; OWA undefined".into()));
            }
            0.5 * (s / s_ref + m / m_ref)
        }
        OwaAggregation::PerSeriesMean => owa_sum / n,
    };
    Ok(DatasetScore {
        smape: s / n,
        mase: m / n,
        owa,
    })
}

/// `Σ_f (N_f / N_tot) · v_f` with `N_tot` summed over every entry of
/// `counts`, including frequencies absent from `values`.
pub fn weighted_average(values: &[(Frequency, f64)], counts: &[(Frequency, f64)]) -> Result<f64> {
    if counts.iter().any(|&(_, c)| !(c > 0.0)) {
        return Err(Error::arg("weighted_average", "counts must be positive"));
    }
    let total: f64 = counts.iter().map(|&(_, c)| c).sum();
    let mut acc = 0.0;
    for &(f, v) in values {
        let (_, c) = counts
            .iter()
            .find(|(g, _)| *g == f)
            .ok_or_else(|| Error::arg("weighted_average", format!("no count for {f}")))?;
        acc += c / total * v;
    }
    Ok(acc)
}

/// Horizon-weighted counts printed with the TOURISM results.
pub fn paper_tourism_weights() -> Vec<(Frequency, f64)> {
    vec![
        (Frequency::Yearly, 6.0 * 645.0),
        (Frequency::Quarterly, 8.0 * 756.0),
        (Frequency::Monthly, 18.0 * 1428.0),
        (Frequency::Others, 8.0 * 174.0),
    ]
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreTable {
    rows: BTreeMap<(String, String, String), f64>,
    order: Vec<(String, String, String)>,
}

impl ScoreTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, method: &str, frequency: &str, metric: &str, value: f64) {
        let key = (method.to_string(), frequency.to_string(), metric.to_string());
        if self.rows.insert(key.clone(), value).is_none() {
            self.order.push(key);
        }
    }

    pub fn get(&self, method: &str, frequency: &str, metric: &str) -> Option<f64> {
        self.rows
            .get(&(method.to_string(), frequency.to_string(), metric.to_string()))
            .copied()
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// `method,frequency,metric,value` in insertion order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,frequency,metric,value\n");
        for key in &self.order {
            let _ = writeln!(out, "{},{},{},{}", key.0, key.1, key.2, self.rows[key]);
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn point_metric_fixtures() {
        assert!(close(mape(&[110.0], &[100.0]).unwrap(), 10.0, 1e-12));
        assert!(close(smape(&[110.0], &[100.0]).unwrap(), 2000.0 / 210.0, 1e-12));
        assert_eq!(smape(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 0.0);
        assert_eq!(smape(&[0.0], &[0.0]).unwrap(), 0.0);
        assert_eq!(smape(&[0.0, 0.0], &[1.0, 2.0]).unwrap(), 200.0);
    }

    #[test]
    fn mape_zero_target_names_index() {
        match mape(&[1.0, 1.0, 1.0], &[1.0, 2.0, 0.0]) {
            Err(Error::ZeroTarget { index }) => assert_eq!(index, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mase_fixture() {
        let e = EvalSeries {
            train: vec![1.0, 2.0, 3.0, 4.0],
            test: vec![5.0, 6.0],
            period: 1,
            frequency: Frequency::Yearly,
        };
        assert!(close(mase(&[5.0, 5.0], &e, MaseDenominator::Paper).unwrap(), 0.5, 1e-12));
        assert!(close(mase(&[5.0, 5.0], &e, MaseDenominator::InSample).unwrap(), 0.5, 1e-12));
        let constant = EvalSeries {
            train: vec![2.0; 4],
            test: vec![2.0; 2],
            ..e
        };
        assert!(matches!(
            mase(&[1.0, 1.0], &constant, MaseDenominator::Paper),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn seasonality_test_cases() {
        let sine: Vec<f64> = (0..48).map(|i| (std::f64::consts::TAU * i as f64 / 12.0).sin()).collect();
        assert!(seasonality_test(&sine, 12));
        assert!(!seasonality_test(&sine, 1));
    }

    #[test]
    fn naive2_last_value_and_constant() {
        assert_eq!(naive2_forecast(&[1.0, 5.0, 42.0], 1, 3).unwrap(), vec![42.0; 3]);
        assert_eq!(naive2_forecast(&[7.0; 40], 12, 4).unwrap(), vec![7.0; 4]);
    }

    #[test]
    fn naive2_reproduces_multiplicative_pattern() {
        let index = [0.8, 1.0, 1.3, 0.9];
        let series: Vec<f64> = (0..40).map(|t| 50.0 * index[t % 4]).collect();
        let f = naive2_forecast(&series, 4, 8).unwrap();
        for (i, v) in f.iter().enumerate() {
            let want = 50.0 * index[(40 + i) % 4];
            assert!((v - want).abs() / want < 0.01, "{v} vs {want}");
        }
    }

    #[test]
    fn owa_of_naive2_is_one() {
        let e = EvalSeries {
            train: vec![3.0, 5.0, 4.0, 6.0, 7.0],
            test: vec![9.0, 8.0],
            period: 1,
            frequency: Frequency::Yearly,
        };
        let n2 = naive2(&e).unwrap();
        assert_eq!(owa(&n2, &e, MaseDenominator::Paper).unwrap(), 1.0);
    }

    #[test]
    fn weighted_average_paper_weights() {
        let w = paper_tourism_weights();
        let vals = [
            (Frequency::Yearly, 20.0),
            (Frequency::Quarterly, 15.0),
            (Frequency::Monthly, 18.0),
        ];
        let tot = 6.0 * 645.0 + 8.0 * 756.0 + 18.0 * 1428.0 + 8.0 * 174.0;
        let want = (6.0 * 645.0 * 20.0 + 8.0 * 756.0 * 15.0 + 18.0 * 1428.0 * 18.0) / tot;
        assert!(close(weighted_average(&vals, &w).unwrap(), want, 1e-12));
        let single = [(Frequency::Yearly, 4.5)];
        assert_eq!(weighted_average(&single, &[(Frequency::Yearly, 3.0)]).unwrap(), 4.5);
    }

    #[test]
    fn score_table_csv() {
        let mut t = ScoreTable::new();
        t.insert("idea", "yearly", "smape", 12.5);
        t.insert("naive2", "yearly", "owa", 1.0);
        assert_eq!(
            t.to_csv(),
            "method,frequency,metric,value\nidea,yearly,smape,12.5\nnaive2,yearly,owa,1\n"
        );
    }
}
