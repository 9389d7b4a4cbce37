//! The distribution-shift activation experiment: 20 typical and 10 silent
//! windows fed one at a time, recording which first-group learners win.

use std::collections::HashMap;
use std::fmt::Write as _;

use anyhow::{bail, Result};
use idea::dataio::{generate_synthetic, Noise, SeriesRecord, SyntheticKind, SyntheticSpec};
use idea::model::{ForwardOptions, IdeaModel};
use idea::train::window_scale;

pub const SAMPLES: usize = 30;
pub const TYPICAL: usize = 20;
pub const SILENT: usize = 10;
/// 1-indexed positions where the sequence turns from typical to silent.
pub const SWITCHES: [usize; 2] = [11, 26];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleKind {
    Typical,
    Silent,
}

/// Kind at 1-indexed position `p`: typical at 1–10 and 16–25, silent at
/// 11–15 and 26–30.
pub fn kind_at(p: usize) -> SampleKind {
    match p {
        11..=15 | 26..=30 => SampleKind::Silent,
        _ => SampleKind::Typical,
    }
}

/// Interleaves the samples into the 30-position layout.
pub fn arrange(typical: &[Vec<f64>], silent: &[Vec<f64>]) -> Result<Vec<(SampleKind, Vec<f64>)>> {
    if typical.len() != TYPICAL || silent.len() != SILENT {
        bail!(
            "need {TYPICAL} typical and {SILENT} silent samples, got {} and {}",
            typical.len(),
            silent.len()
        );
    }
    let (mut t, mut s) = (typical.iter(), silent.iter());
    Ok((1..=SAMPLES)
        .map(|p| {
            let k = kind_at(p);
            let v = match k {
                SampleKind::Typical => t.next(),
                SampleKind::Silent => s.next(),
            };
            (k, v.expect("counts checked").clone())
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShiftRecord {
    /// 0-indexed; the paper's position is `sample_index + 1`.
    pub sample_index: usize,
    pub kind: SampleKind,
    pub activated: Vec<usize>,
    pub relevance: Vec<f64>,
}

/// Feeds each sample through the model and records the first group's
/// activation.
pub fn run_shift(model: &IdeaModel<f64>, samples: &[(SampleKind, Vec<f64>)]) -> Result<Vec<ShiftRecord>> {
    let t = model.config.lookback;
    let mut out = Vec::with_capacity(samples.len());
    for (i, (kind, x)) in samples.iter().enumerate() {
        if x.len() != t {
            bail!("sample {} has length {}, the model's lookback is {t}", i, x.len());
        }
        let s = window_scale(x, 1e-8);
        let scaled: Vec<f64> = x.iter().map(|v| v / s).collect();
        let (_, traces) = model.forward_one(&scaled, &ForwardOptions::default())?;
        let act = &traces[0].activation;
        out.push(ShiftRecord {
            sample_index: i,
            kind: *kind,
            activated: act.activated.clone(),
            relevance: act.relevance.clone(),
        });
    }
    Ok(out)
}

/// `sample_index,learner_index,activated,relevance`, one row per learner.
pub fn shift_csv(records: &[ShiftRecord]) -> String {
    let mut out = String::from("sample_index,learner_index,activated,relevance\n");
    for r in records {
        for (g, rel) in r.relevance.iter().enumerate() {
            let on = r.activated.contains(&g) as u8;
            let _ = writeln!(out, "{},{},{},{}", r.sample_index, g, on, rel);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShiftSummary {
    pub modal_typical: Vec<usize>,
    pub modal_silent: Vec<usize>,
    /// Per switch: whether the set changes between consecutive samples
    /// somewhere in positions `s−1..=s+1`.
    pub switch_changes: [bool; 2],
    /// Per switch: fraction of the three transitions ending at `s−1..=s+1`
    /// where the set changes.
    pub switch_change_rates: [f64; 2],
    /// Fraction of the four samples adjacent to the switches whose set
    /// differs from the other population's modal set.
    pub boundary_agreement: f64,
}

impl ShiftSummary {
    pub fn modal_differs(&self) -> bool {
        self.modal_typical != self.modal_silent
    }

    pub fn passed(&self) -> bool {
        self.modal_differs() && self.switch_changes.iter().all(|&c| c)
    }

    pub fn to_text(&self) -> String {
        format!(
            "modal_typical={:?}\nmodal_silent={:?}\nmodal_differs={}\nswitch_11_change={}\nswitch_26_change={}\n\
             switch_11_change_rate={}\nswitch_26_change_rate={}\nboundary_agreement={}\n",
            self.modal_typical,
            self.modal_silent,
            self.modal_differs(),
            self.switch_changes[0],
            self.switch_changes[1],
            self.switch_change_rates[0],
            self.switch_change_rates[1],
            self.boundary_agreement
        )
    }
}

/// Most frequent set; ties go to the set seen first.
fn modal<'a>(sets: impl Iterator<Item = &'a Vec<usize>>) -> Vec<usize> {
    let mut counts: HashMap<&Vec<usize>, usize> = HashMap::new();
    let mut order = Vec::new();
    for s in sets {
        let c = counts.entry(s).or_insert(0);
        if *c == 0 {
            order.push(s);
        }
        *c += 1;
    }
    let best = order.iter().map(|s| counts[s]).max().unwrap_or(0);
    order
        .into_iter()
        .find(|s| counts[s] == best)
        .cloned()
        .unwrap_or_default()
}

pub fn summarize(records: &[ShiftRecord]) -> Result<ShiftSummary> {
    if records.len() != SAMPLES {
        bail!("expected {SAMPLES} records, got {}", records.len());
    }
    let set = |p: usize| &records[p - 1].activated;
    let modal_typical = modal(records.iter().filter(|r| r.kind == SampleKind::Typical).map(|r| &r.activated));
    let modal_silent = modal(records.iter().filter(|r| r.kind == SampleKind::Silent).map(|r| &r.activated));
    let mut switch_changes = [false; 2];
    let mut switch_change_rates = [0.0; 2];
    for (i, &s) in SWITCHES.iter().enumerate() {
        let changes = (s - 1..=s + 1).filter(|&j| set(j) != set(j - 1)).count();
        switch_changes[i] = changes > 0;
        switch_change_rates[i] = changes as f64 / 3.0;
    }
    let adjacent = [10, 11, 25, 26];
    let agree = adjacent
        .iter()
        .filter(|&&p| match kind_at(p) {
            SampleKind::Typical => *set(p) != modal_silent,
            SampleKind::Silent => *set(p) != modal_typical,
        })
        .count();
    Ok(ShiftSummary {
        modal_typical,
        modal_silent,
        switch_changes,
        switch_change_rates,
        boundary_agreement: agree as f64 / adjacent.len() as f64,
    })
}

/// Synthetic typical windows of length `lookback` drawn from `base`.
pub fn synthetic_typical(base: &SyntheticSpec, lookback: usize, count: usize) -> Result<Vec<Vec<f64>>> {
    let spec = SyntheticSpec {
        kind: SyntheticKind::TrendSeason,
        length: lookback,
        count,
        ..base.clone()
    };
    Ok(generate_synthetic(&spec)?.into_iter().map(|r| r.values).collect())
}

/// Fraction of the typical low level below which silent windows idle.
pub const SILENT_LEVEL_FRACTION: f64 = 0.05;

/// Synthetic silent windows: a near-zero level with small noise, jumping to
/// the typical level range at the last lookback position.
pub fn synthetic_silent(base: &SyntheticSpec, lookback: usize, count: usize) -> Result<Vec<Vec<f64>>> {
    let noise = match base.noise {
        Noise::Absolute(s) => Noise::Absolute(s),
        Noise::RelativeToAmplitude(f) => Noise::Absolute(f * SILENT_LEVEL_FRACTION * base.level.0),
    };
    let spec = SyntheticSpec {
        kind: SyntheticKind::Silent,
        length: lookback,
        count,
        noise,
        level: (0.0, SILENT_LEVEL_FRACTION * base.level.0),
        jump: base.level,
        seed: base.seed.wrapping_add(1),
        ..base.clone()
    };
    Ok(generate_synthetic(&spec)?.into_iter().map(|r| r.values).collect())
}

/// Typical windows from the last `lookback` points of the first series
/// long enough.
pub fn typical_from_records(records: &[SeriesRecord], lookback: usize) -> Result<Vec<Vec<f64>>> {
    let out: Vec<Vec<f64>> = records
        .iter()
        .filter(|r| r.values.len() >= lookback)
        .take(TYPICAL)
        .map(|r| r.values[r.values.len() - lookback..].to_vec())
        .collect();
    if out.len() < TYPICAL {
        bail!("only {} series hold {lookback} points; {TYPICAL} are needed", out.len());
    }
    Ok(out)
}
