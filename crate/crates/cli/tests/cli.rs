use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use idea::model::{write_checkpoint, IdeaModel, Mode, ModelConfig};

fn idea(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_idea")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = idea(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const MODEL: &[&str] = &[
    "--mode", "generic", "--groups", "2", "--layers", "2", "--hidden-width", "16", "--context-width", "8",
];

/// Synthetic yearly data (H = 6 under the M4 protocol) in `dir/data`.
fn synth(dir: &Path) -> (PathBuf, PathBuf) {
    let out = dir.join("data");
    ok(&[
        "synth", "--out", s(&out), "--freq", "yearly", "--period", "1", "--count", "12", "--length", "40", "--seed", "3",
    ]);
    (out.join("synthetic.csv"), out.join("manifest.csv"))
}

fn train(dir: &Path, data: &Path, manifest: &Path, out: &str) -> PathBuf {
    let out = dir.join(out);
    let mut args = vec![
        "train", "--data", s(data), "--manifest", s(manifest), "--freq", "yearly", "--steps", "20", "--batch", "8",
        "--validation-interval", "5", "--seed", "11", "--out", s(&out),
    ];
    args.extend_from_slice(MODEL);
    ok(&args);
    out
}

fn scores(path: &Path) -> Vec<(String, String, String, f64)> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            (c[0].into(), c[1].into(), c[2].into(), c[3].parse().unwrap())
        })
        .collect()
}

#[test]
fn train_eval_forecast_contracts() {
    let dir = tempfile::tempdir().unwrap();
    let (data, manifest) = synth(dir.path());
    let run = train(dir.path(), &data, &manifest, "run");
    for f in ["checkpoint.json", "train_log.csv", "config.toml", "summary.txt"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let log = std::fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 4);
    let echoed = std::fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(echoed.contains("horizon = 6") && echoed.contains("lookback = 12"));

    let ckpt = run.join("checkpoint.json");
    let ev = dir.path().join("eval");
    ok(&["eval", "--data", s(&data), "--manifest", s(&manifest), "--checkpoint", s(&ckpt), "--out", s(&ev)]);
    let rows = scores(&ev.join("scores.csv"));
    for metric in ["smape", "mase", "owa"] {
        assert!(rows.iter().any(|r| r.0 == "idea" && r.1 == "average" && r.2 == metric));
    }
    let naive_owa = rows.iter().find(|r| r.0 == "naive2" && r.1 == "average" && r.2 == "owa").unwrap();
    assert_eq!(naive_owa.3, 1.0);

    let fc = dir.path().join("fc");
    ok(&[
        "forecast", "--data", s(&data), "--manifest", s(&manifest), "--checkpoint", s(&ckpt), "--out", s(&fc),
        "--plot-data", "--holdout",
    ]);
    let text = std::fs::read_to_string(fc.join("forecast.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("id,step,forecast"));
    assert_eq!(text.lines().count(), 1 + 12 * 6);
    let plot = std::fs::read_to_string(fc.join("plot.csv")).unwrap();
    assert_eq!(plot.lines().count(), 1 + 12 * (12 + 6));

    let st = dir.path().join("stats");
    let out = ok(&["stats", "--data", s(&data), "--manifest", s(&manifest), "--out", s(&st)]);
    assert!(out.contains("yearly,12,40,40,40,"), "{out}");
}

#[test]
fn shift_experiment_follows_the_checkpoint_horizon() {
    let dir = tempfile::tempdir().unwrap();
    let (data, manifest) = synth(dir.path());
    let run = train(dir.path(), &data, &manifest, "run");
    let out = dir.path().join("shift");
    ok(&["shift-experiment", "--checkpoint", s(&run.join("checkpoint.json")), "--seed", "2", "--out", s(&out)]);
    let acts = std::fs::read_to_string(out.join("activations.csv")).unwrap();
    assert_eq!(acts.lines().next(), Some("sample_index,learner_index,activated,relevance"));
    assert_eq!(acts.lines().count(), 1 + 30 * 3);
    assert!(out.join("summary.txt").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (data, manifest) = synth(dir.path());
    let a = train(dir.path(), &data, &manifest, "a");
    let b = train(dir.path(), &data, &manifest, "b");
    for f in ["checkpoint.json", "train_log.csv", "summary.txt"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn zero_model_scores_smape_200() {
    let dir = tempfile::tempdir().unwrap();
    let (data, manifest) = synth(dir.path());
    let cfg = ModelConfig {
        groups: 1,
        layers: 1,
        hidden_width: 4,
        context_width: 4,
        key_width: 4,
        value_width: 4,
        comm_width: 4,
        lookback: 12,
        horizon: 6,
        mode: Mode::Generic,
        ..ModelConfig::default()
    };
    let mut m = IdeaModel::<f64>::new(cfg).unwrap();
    for t in m.store.values_mut() {
        t.data_mut().fill(0.0);
    }
    let ckpt = dir.path().join("zero.json");
    write_checkpoint(&m, &ckpt).unwrap();
    let ev = dir.path().join("eval");
    ok(&["eval", "--data", s(&data), "--manifest", s(&manifest), "--checkpoint", s(&ckpt), "--out", s(&ev)]);
    let rows = scores(&ev.join("scores.csv"));
    let v = rows.iter().find(|r| r.0 == "idea" && r.1 == "average" && r.2 == "smape").unwrap().3;
    assert_eq!(v, 200.0);
}

#[test]
fn errors_exit_nonzero_with_a_message() {
    let out = idea(&["train", "--mode", "fancy"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error: --mode"));
    let out = idea(&["eval", "--data", "/nonexistent/x.csv", "--freq", "yearly", "--checkpoint", "/nonexistent/c.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/x.csv"));
}
