use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use idea::dataio::{
    dataset_stats, generate_synthetic, load_csv, load_manifest, split_train_test, write_csv, Frequency, FrequencySource,
    Protocol, SeriesRecord, SyntheticSpec,
};
use idea::evalkit::{self, paper_tourism_weights, score_dataset, EvalSeries, ScoreTable};
use idea::model::{read_checkpoint, write_checkpoint, IdeaModel};
use idea::train::{build_lookback_ensemble, fit, median, predict, DEFAULT_MULTIPLIERS};

use crate::config::{RunConfig, Weights};
use crate::shift;

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn prepare_out(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.echo(&cfg.out)?;
    Ok(cfg.out.clone())
}

/// Loads `--data` with metadata from the manifest or `--freq`; with both,
/// keeps only rows of that frequency.
pub fn load_records(cfg: &RunConfig) -> Result<Vec<SeriesRecord>> {
    let data = cfg.data.as_ref().ok_or_else(|| anyhow!("--data is required"))?;
    let source = match (&cfg.manifest, cfg.freq) {
        (Some(m), _) => load_manifest(m)?,
        (None, Some(f)) => FrequencySource::Fixed {
            frequency: f,
            period: cfg.protocol.horizon(f).map_or(cfg.train.period, |p| p.0),
            horizon: cfg.model.horizon,
        },
        (None, None) => bail!("pass --freq or --manifest to label the series"),
    };
    let mut records = load_csv(data, &source)?;
    if let (Some(_), Some(f)) = (&cfg.manifest, cfg.freq) {
        records.retain(|r| r.frequency == f);
    }
    if records.is_empty() {
        bail!("no series selected from {}", data.display());
    }
    Ok(records)
}

fn training_parts(records: &[SeriesRecord], horizon: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        if r.horizon != horizon {
            bail!(
                "series `{}` has horizon {} but the model forecasts {horizon} steps",
                r.id,
                r.horizon
            );
        }
        match split_train_test(&r.values, horizon) {
            Ok((train, _)) => out.push(train),
            Err(_) => log::warn!("series `{}` is too short to hold out {horizon} points; skipped", r.id),
        }
    }
    Ok(out)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<String> {
    let records = load_records(cfg)?;
    let out = prepare_out(cfg)?;
    let train = training_parts(&records, cfg.model.horizon)?;
    let mut summary = String::new();
    if cfg.ensemble {
        let ens = build_lookback_ensemble(&train, &cfg.model, &cfg.train, &DEFAULT_MULTIPLIERS)?;
        for slot in &ens.slots {
            write_checkpoint(&slot.model, &out.join(format!("checkpoint_t{}.json", slot.lookback)))?;
            write(&out.join(format!("train_log_t{}.csv", slot.lookback)), &slot.log.to_csv())?;
            let _ = writeln!(
                summary,
                "lookback={} used={} dropped={} final_loss={}",
                slot.lookback,
                slot.used,
                slot.dropped,
                slot.log.entries.last().map_or(f64::NAN, |e| e.train_loss)
            );
        }
    } else {
        let mut model = IdeaModel::<f64>::new(cfg.model.clone())?;
        let log = fit(&mut model, &train, &cfg.train)?;
        write_checkpoint(&model, &out.join("checkpoint.json"))?;
        write(&out.join("train_log.csv"), &log.to_csv())?;
        let _ = writeln!(
            summary,
            "series={} steps={} parameters={} final_loss={}",
            train.len(),
            cfg.train.steps,
            model.store.total_size(),
            log.entries.last().map_or(f64::NAN, |e| e.train_loss)
        );
    }
    write(&out.join("summary.txt"), &summary)?;
    Ok(summary)
}

fn load_models(cfg: &RunConfig) -> Result<Vec<IdeaModel<f64>>> {
    if cfg.checkpoints.is_empty() {
        bail!("at least one --checkpoint is required");
    }
    cfg.checkpoints
        .iter()
        .map(|p| read_checkpoint::<f64>(p).with_context(|| format!("loading {}", p.display())))
        .collect()
}

/// Per model, per history: the forecast, or `None` when the history is
/// shorter than the model's lookback or the horizons differ.
fn model_forecasts(models: &[IdeaModel<f64>], histories: &[Vec<f64>], horizons: &[usize]) -> Result<Vec<Vec<Option<Vec<f64>>>>> {
    let mut out = Vec::with_capacity(models.len());
    for m in models {
        let idx: Vec<usize> = (0..histories.len())
            .filter(|&i| horizons[i] == m.config.horizon && histories[i].len() >= m.config.lookback)
            .collect();
        let subset: Vec<Vec<f64>> = idx.iter().map(|&i| histories[i].clone()).collect();
        let preds = predict(m, &subset)?;
        let mut row = vec![None; histories.len()];
        for (i, p) in idx.into_iter().zip(preds) {
            row[i] = Some(p);
        }
        out.push(row);
    }
    Ok(out)
}

fn fuse(per_model: &[Vec<Option<Vec<f64>>>], i: usize) -> Option<Vec<f64>> {
    let avail: Vec<&Vec<f64>> = per_model.iter().filter_map(|m| m[i].as_ref()).collect();
    let h = avail.first()?.len();
    Some((0..h).map(|j| median(&mut avail.iter().map(|f| f[j]).collect::<Vec<_>>())).collect())
}

fn check_horizons(models: &[IdeaModel<f64>], records: &[SeriesRecord]) -> Result<()> {
    for r in records {
        if !models.iter().any(|m| m.config.horizon == r.horizon) {
            bail!(
                "series `{}` ({}) has horizon {}, no checkpoint forecasts that many steps",
                r.id,
                r.frequency,
                r.horizon
            );
        }
    }
    Ok(())
}

/// Metric rows of one method over evaluation series, bucketed by reporting
/// frequency, plus the averaged column.
fn score_method(
    table: &mut ScoreTable,
    method: &str,
    cfg: &RunConfig,
    series: &[EvalSeries],
    forecasts: &[Vec<f64>],
) -> Result<()> {
    let mut buckets: BTreeMap<Frequency, Vec<usize>> = BTreeMap::new();
    for (i, s) in series.iter().enumerate() {
        buckets.entry(s.frequency.bucket()).or_default().push(i);
    }
    let metrics: &[&str] = match cfg.protocol {
        Protocol::Tourism => &["mape"],
        Protocol::M4 => &["smape", "mase", "owa"],
    };
    let mut per_freq: BTreeMap<&str, Vec<(Frequency, f64)>> = BTreeMap::new();
    let mut counts = Vec::new();
    for (&f, idx) in &buckets {
        let sub: Vec<EvalSeries> = idx.iter().map(|&i| series[i].clone()).collect();
        let fc: Vec<Vec<f64>> = idx.iter().map(|&i| forecasts[i].clone()).collect();
        counts.push((f, idx.len() as f64));
        for &metric in metrics {
            let v = match metric {
                "mape" => {
                    let mut t = 0.0;
                    for (s, p) in sub.iter().zip(&fc) {
                        t += evalkit::mape(p, &s.test)?;
                    }
                    t / sub.len() as f64
                }
                "smape" => mean_smape(&fc, &sub)?,
                "mase" => {
                    let mut t = 0.0;
                    for (s, p) in sub.iter().zip(&fc) {
                        t += evalkit::mase(p, s, cfg.mase_denominator)?;
                    }
                    t / sub.len() as f64
                }
                _ => score_dataset(&fc, &sub, cfg.mase_denominator, cfg.owa_aggregation)?.owa,
            };
            table.insert(method, f.label(), metric, v);
            per_freq.entry(metric).or_default().push((f, v));
        }
    }
    let weights = match cfg.weights {
        Weights::Dataset => counts,
        Weights::Paper => paper_tourism_weights(),
    };
    for &metric in metrics {
        let v = if metric == "owa" {
            score_dataset(forecasts, series, cfg.mase_denominator, cfg.owa_aggregation)?.owa
        } else {
            evalkit::weighted_average(&per_freq[metric], &weights)?
        };
        table.insert(method, "average", metric, v);
    }
    Ok(())
}

fn mean_smape(fc: &[Vec<f64>], series: &[EvalSeries]) -> idea::Result<f64> {
    let mut t = 0.0;
    for (p, s) in fc.iter().zip(series) {
        t += evalkit::smape(p, &s.test)?;
    }
    Ok(t / series.len() as f64)
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<ScoreTable> {
    let records = load_records(cfg)?;
    let models = load_models(cfg)?;
    check_horizons(&models, &records)?;
    let out = prepare_out(cfg)?;
    let mut series = Vec::with_capacity(records.len());
    for r in &records {
        let (train, test) = split_train_test(&r.values, r.horizon)?;
        series.push(EvalSeries {
            train,
            test,
            period: r.period,
            frequency: r.frequency,
        });
    }
    let histories: Vec<Vec<f64>> = series.iter().map(|s| s.train.clone()).collect();
    let horizons: Vec<usize> = records.iter().map(|r| r.horizon).collect();
    let per_model = model_forecasts(&models, &histories, &horizons)?;
    let mut fused = Vec::with_capacity(series.len());
    for (i, r) in records.iter().enumerate() {
        fused.push(fuse(&per_model, i).ok_or_else(|| anyhow!("series `{}` is shorter than every lookback", r.id))?);
    }
    let mut table = ScoreTable::new();
    score_method(&mut table, "idea", cfg, &series, &fused)?;

    if models.len() > 1 {
        // per-model metrics averaged over the models that cover each cell
        let mut slot_tables = Vec::new();
        for (m, preds) in per_model.iter().enumerate() {
            let idx: Vec<usize> = (0..series.len()).filter(|&i| preds[i].is_some()).collect();
            if idx.is_empty() {
                continue;
            }
            let sub: Vec<EvalSeries> = idx.iter().map(|&i| series[i].clone()).collect();
            let fc: Vec<Vec<f64>> = idx.iter().map(|&i| preds[i].clone().unwrap()).collect();
            let mut t = ScoreTable::new();
            score_method(&mut t, "slot", cfg, &sub, &fc).with_context(|| format!("scoring checkpoint {m}"))?;
            slot_tables.push(t);
        }
        let keys: Vec<(String, String)> = table
            .to_csv()
            .lines()
            .skip(1)
            .map(|l| {
                let c: Vec<&str> = l.split(',').collect();
                (c[1].to_string(), c[2].to_string())
            })
            .collect();
        for (freq, metric) in keys {
            let vals: Vec<f64> = slot_tables.iter().filter_map(|t| t.get("slot", &freq, &metric)).collect();
            if !vals.is_empty() {
                table.insert("idea_slot_mean", &freq, &metric, vals.iter().sum::<f64>() / vals.len() as f64);
            }
        }
    }

    let mut naive = Vec::with_capacity(series.len());
    for s in &series {
        naive.push(evalkit::naive2(s)?);
    }
    score_method(&mut table, "naive2", cfg, &series, &naive)?;
    table.write(&out.join("scores.csv"))?;
    let mut summary = String::new();
    for line in table.to_csv().lines().skip(1).filter(|l| l.contains(",average,")) {
        let _ = writeln!(summary, "{line}");
    }
    write(&out.join("summary.txt"), &summary)?;
    Ok(table)
}

/// Outcome of `forecast`: rows written plus per-series failures.
#[derive(Debug, Default)]
pub struct ForecastOutcome {
    pub written: usize,
    pub failures: Vec<String>,
}

pub fn cmd_forecast(cfg: &RunConfig) -> Result<ForecastOutcome> {
    let records = load_records(cfg)?;
    let models = load_models(cfg)?;
    let out = prepare_out(cfg)?;
    let mut histories = Vec::with_capacity(records.len());
    let mut targets = Vec::with_capacity(records.len());
    for r in &records {
        if cfg.holdout {
            match split_train_test(&r.values, r.horizon) {
                Ok((a, b)) => {
                    histories.push(a);
                    targets.push(Some(b));
                }
                Err(_) => {
                    histories.push(Vec::new());
                    targets.push(None);
                }
            }
        } else {
            histories.push(r.values.clone());
            targets.push(None);
        }
    }
    let horizons: Vec<usize> = records.iter().map(|r| r.horizon).collect();
    let per_model = model_forecasts(&models, &histories, &horizons)?;
    let mut text = String::from("id,step,forecast\n");
    let mut plot = String::from("id,index,x,y,yhat\n");
    let mut outcome = ForecastOutcome::default();
    for (i, r) in records.iter().enumerate() {
        let Some(f) = fuse(&per_model, i) else {
            let need = models.iter().filter(|m| m.config.horizon == r.horizon).map(|m| m.config.lookback).min();
            outcome.failures.push(match need {
                Some(t) => format!("series `{}` has {} points, lookback needs {t}", r.id, histories[i].len()),
                None => format!("series `{}`: no checkpoint forecasts {} steps", r.id, r.horizon),
            });
            continue;
        };
        for (j, v) in f.iter().enumerate() {
            let _ = writeln!(text, "{},{},{}", r.id, j + 1, v);
        }
        outcome.written += f.len();
        if cfg.plot_data {
            let t = models
                .iter()
                .filter(|m| m.config.horizon == r.horizon && histories[i].len() >= m.config.lookback)
                .map(|m| m.config.lookback)
                .max()
                .unwrap_or(0);
            let h = &histories[i];
            for (k, v) in h[h.len() - t..].iter().enumerate() {
                let _ = writeln!(plot, "{},{},{},,", r.id, k as i64 - t as i64 + 1, v);
            }
            for (j, v) in f.iter().enumerate() {
                let y = targets[i].as_ref().map(|y| y[j].to_string()).unwrap_or_default();
                let _ = writeln!(plot, "{},{},,{},{}", r.id, j + 1, y, v);
            }
        }
    }
    write(&out.join("forecast.csv"), &text)?;
    if cfg.plot_data {
        write(&out.join("plot.csv"), &plot)?;
    }
    Ok(outcome)
}

pub fn cmd_shift_experiment(cfg: &RunConfig) -> Result<shift::ShiftSummary> {
    let models = load_models(cfg)?;
    let model = &models[0];
    // synthetic samples follow the checkpoint's horizon
    let synth = SyntheticSpec {
        horizon: model.config.horizon,
        ..cfg.synth.clone()
    };
    let out = prepare_out(cfg)?;
    let t = model.config.lookback;
    let typical = match cfg.data {
        Some(_) => shift::typical_from_records(&load_records(cfg)?, t)?,
        None => shift::synthetic_typical(&synth, t, shift::TYPICAL)?,
    };
    let silent = shift::synthetic_silent(&synth, t, shift::SILENT)?;
    let samples = shift::arrange(&typical, &silent)?;
    let records = shift::run_shift(model, &samples)?;
    let summary = shift::summarize(&records)?;
    write(&out.join("activations.csv"), &shift::shift_csv(&records))?;
    write(&out.join("summary.txt"), &summary.to_text())?;
    Ok(summary)
}

pub fn cmd_stats(cfg: &RunConfig) -> Result<String> {
    let records = load_records(cfg)?;
    let out = prepare_out(cfg)?;
    let mut text = String::from("frequency,count,min_length,mean_length,max_length,mean_value\n");
    for s in dataset_stats(&records) {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{}",
            s.frequency, s.count, s.min_length, s.mean_length, s.max_length, s.mean_value
        );
    }
    write(&out.join("stats.csv"), &text)?;
    Ok(text)
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<PathBuf> {
    let records = generate_synthetic(&cfg.synth)?;
    let out = prepare_out(cfg)?;
    let data = out.join("synthetic.csv");
    write_csv(&data, &records)?;
    let s = &cfg.synth;
    write(
        &out.join("manifest.csv"),
        &format!(
            "id_prefix,frequency,period,horizon\n{},{},{},{}\n",
            s.id_prefix, s.frequency, s.period, s.horizon
        ),
    )?;
    Ok(data)
}
