//! Series ingestion, splitting, windowing and synthetic generators.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frequency {
    Yearly,
    Quarterly,
    Monthly,
    Weekly,
    Daily,
    Hourly,
    Others,
}

impl Frequency {
    pub const ALL: [Frequency; 7] = [
        Frequency::Yearly,
        Frequency::Quarterly,
        Frequency::Monthly,
        Frequency::Weekly,
        Frequency::Daily,
        Frequency::Hourly,
        Frequency::Others,
    ];

    /// Reporting bucket: weekly, daily and hourly series report as `Others`.
    pub fn bucket(self) -> Frequency {
        match self {
            Frequency::Weekly | Frequency::Daily | Frequency::Hourly => Frequency::Others,
            f => f,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Frequency::Yearly => "yearly",
            Frequency::Quarterly => "quarterly",
            Frequency::Monthly => "monthly",
            Frequency::Weekly => "weekly",
            Frequency::Daily => "daily",
            Frequency::Hourly => "hourly",
            Frequency::Others => "others",
        }
    }
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Frequency {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Frequency::ALL
            .into_iter()
            .find(|f| f.label() == s || f.label()[..1] == s)
            .ok_or_else(|| Error::Data(format!("unknown frequency `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Tourism,
    M4,
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tourism" => Ok(Protocol::Tourism),
            "m4" => Ok(Protocol::M4),
            other => Err(Error::Data(format!("unknown protocol `{other}`"))),
        }
    }
}

impl Protocol {
    /// `(period, horizon)` of a frequency under this protocol.
    pub fn horizon(self, freq: Frequency) -> Option<(usize, usize)> {
        use Frequency::*;
        match (self, freq) {
            (Protocol::Tourism, Yearly) => Some((1, 4)),
            (Protocol::Tourism, Quarterly) => Some((4, 8)),
            (Protocol::Tourism, Monthly) => Some((12, 24)),
            (Protocol::Tourism, _) => None,
            (Protocol::M4, Yearly) => Some((1, 6)),
            (Protocol::M4, Quarterly) => Some((4, 8)),
            (Protocol::M4, Monthly) => Some((12, 18)),
            (Protocol::M4, Weekly) => Some((1, 13)),
            (Protocol::M4, Daily) => Some((1, 14)),
            (Protocol::M4, Hourly) => Some((24, 48)),
            (Protocol::M4, Others) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeriesRecord {
    pub id: String,
    pub values: Vec<f64>,
    pub frequency: Frequency,
    pub period: usize,
    pub horizon: usize,
}

impl SeriesRecord {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Data(format!("series `{}` is empty", self.id)));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("series `{}` has a non-finite value at {i}", self.id)));
        }
        Ok(())
    }
}

/// Frequency metadata attached to every loaded row.
#[derive(Clone, Debug, PartialEq)]
pub enum FrequencySource {
    /// One frequency for the whole file.
    Fixed { frequency: Frequency, period: usize, horizon: usize },
    /// Rows matched by longest id prefix.
    Manifest(Vec<ManifestEntry>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id_prefix: String,
    pub frequency: Frequency,
    pub period: usize,
    pub horizon: usize,
}

impl FrequencySource {
    fn lookup(&self, id: &str) -> Option<(Frequency, usize, usize)> {
        match self {
            FrequencySource::Fixed {
                frequency,
                period,
                horizon,
            } => Some((*frequency, *period, *horizon)),
            FrequencySource::Manifest(entries) => entries
                .iter()
                .filter(|e| id.starts_with(&e.id_prefix))
                .max_by_key(|e| e.id_prefix.len())
                .map(|e| (e.frequency, e.period, e.horizon)),
        }
    }
}

fn parse_error(path: &Path, row: usize, column: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        row,
        column,
        msg: msg.into(),
    }
}

fn open(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(file))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
    parse_error(path, row, 0, e.to_string())
}

/// Reads a sidecar manifest `id_prefix,frequency,period,horizon`.
pub fn load_manifest(path: &Path) -> Result<FrequencySource> {
    let mut entries = Vec::new();
    for (i, rec) in open(path)?.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let row = i + 1;
        if row == 1 && rec.get(0).map(str::trim) == Some("id_prefix") {
            continue;
        }
        if rec.len() != 4 {
            return Err(parse_error(path, row, rec.len(), "expected 4 columns"));
        }
        let int = |c: usize| {
            rec[c]
                .trim()
                .parse::<usize>()
                .map_err(|e| parse_error(path, row, c + 1, format!("`{}`: {e}", &rec[c])))
        };
        entries.push(ManifestEntry {
            id_prefix: rec[0].trim().to_string(),
            frequency: rec[1].parse().map_err(|e: Error| parse_error(path, row, 2, e.to_string()))?,
            period: int(2)?,
            horizon: int(3)?,
        });
    }
    Ok(FrequencySource::Manifest(entries))
}

/// Loads `id,V1,V2,...` rows. Rows and columns in errors are 1-based with
/// the header as row 1.
pub fn load_csv(path: &Path, source: &FrequencySource) -> Result<Vec<SeriesRecord>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, rec) in open(path)?.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let row = i + 1;
        if row == 1 {
            if rec.get(0).map(str::trim) != Some("id") {
                return Err(parse_error(path, 1, 1, "header must start with `id`"));
            }
            continue;
        }
        let id = rec.get(0).unwrap_or("").trim().to_string();
        if id.is_empty() {
            return Err(parse_error(path, row, 1, "missing id"));
        }
        if !seen.insert(id.clone()) {
            return Err(parse_error(path, row, 1, format!("duplicate id `{id}`")));
        }
        let cells: Vec<&str> = rec.iter().skip(1).map(str::trim).collect();
        let used = cells.iter().rposition(|c| !c.is_empty()).map_or(0, |p| p + 1);
        let mut values = Vec::with_capacity(used);
        for (j, cell) in cells[..used].iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_error(path, row, j + 2, format!("`{cell}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_error(path, row, j + 2, format!("`{cell}` is not finite")));
            }
            values.push(v);
        }
        if values.is_empty() {
            return Err(parse_error(path, row, 2, format!("series `{id}` has no values")));
        }
        let (frequency, period, horizon) = source
            .lookup(&id)
            .ok_or_else(|| parse_error(path, row, 1, format!("no manifest entry matches `{id}`")))?;
        out.push(SeriesRecord {
            id,
            values,
            frequency,
            period,
            horizon,
        });
    }
    Ok(out)
}

/// Writes records in the `id,V1,...` layout with round-trip float
/// formatting.
pub fn write_csv(path: &Path, records: &[SeriesRecord]) -> Result<()> {
    let width = records.iter().map(|r| r.values.len()).max().unwrap_or(0);
    let mut text = String::from("id");
    for j in 1..=width {
        text.push_str(&format!(",V{j}"));
    }
    text.push('\n');
    for r in records {
        text.push_str(&r.id);
        for v in &r.values {
            text.push(',');
            text.push_str(&v.to_string());
        }
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `(train, test)` with `test` the last `horizon` values.
pub fn split_train_test(values: &[f64], horizon: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if horizon == 0 {
        return Err(Error::Data("horizon must be >= 1".into()));
    }
    if values.len() <= horizon {
        return Err(Error::Data(format!(
            "series of length {} is too short for horizon {horizon}",
            values.len()
        )));
    }
    let cut = values.len() - horizon;
    Ok((values[..cut].to_vec(), values[cut..].to_vec()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Window<T> {
    pub series: usize,
    /// Index of the first forecast point.
    pub anchor: usize,
    pub x: Vec<T>,
    pub y: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeriesWindows<T> {
    pub windows: Vec<Window<T>>,
    /// Series shorter than `lookback + horizon`.
    pub skipped: usize,
}

/// Every `(x, y)` pair with `x` immediately preceding `y`.
pub fn make_windows<T: Copy>(series: &[Vec<T>], lookback: usize, horizon: usize) -> Result<SeriesWindows<T>> {
    if lookback == 0 || horizon == 0 {
        return Err(Error::Data("lookback and horizon must be >= 1".into()));
    }
    let mut windows = Vec::new();
    let mut skipped = 0;
    for (s, v) in series.iter().enumerate() {
        if v.len() < lookback + horizon {
            skipped += 1;
            continue;
        }
        for anchor in lookback..=v.len() - horizon {
            windows.push(Window {
                series: s,
                anchor,
                x: v[anchor - lookback..anchor].to_vec(),
                y: v[anchor..anchor + horizon].to_vec(),
            });
        }
    }
    Ok(SeriesWindows { windows, skipped })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    TrendSeason,
    Silent,
}

/// Scale of the Gaussian noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Noise {
    /// Fixed standard deviation.
    Absolute(f64),
    /// Standard deviation as a fraction of each series' seasonal amplitude.
    RelativeToAmplitude(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    /// Range of the level `a` (or `c` for silent series).
    pub level: (f64, f64),
    pub slope: (f64, f64),
    pub amplitude: (f64, f64),
    pub period: usize,
    pub noise: Noise,
    pub jump: (f64, f64),
    pub length: usize,
    pub count: usize,
    pub seed: u64,
    pub frequency: Frequency,
    pub horizon: usize,
    pub id_prefix: String,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            kind: SyntheticKind::TrendSeason,
            level: (50.0, 150.0),
            slope: (-0.5, 1.0),
            amplitude: (5.0, 20.0),
            period: 12,
            noise: Noise::RelativeToAmplitude(0.05),
            jump: (5.0, 20.0),
            length: 120,
            count: 10,
            seed: 0,
            frequency: Frequency::Monthly,
            horizon: 18,
            id_prefix: "S".into(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        for (name, (lo, hi)) in [
            ("level", self.level),
            ("slope", self.slope),
            ("amplitude", self.amplitude),
            ("jump", self.jump),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                errs.push(format!("{name} range ({lo}, {hi}) is invalid"));
            }
        }
        if self.period == 0 {
            errs.push("period must be >= 1".into());
        }
        if self.length < 2 {
            errs.push("length must be >= 2".into());
        }
        let n = match self.noise {
            Noise::Absolute(v) | Noise::RelativeToAmplitude(v) => v,
        };
        if !(n >= 0.0 && n.is_finite()) {
            errs.push(format!("noise scale {n} must be finite and >= 0"));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(errs))
        }
    }
}

fn draw<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Deterministic in the spec. Series `i` draws from its own stream.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<SeriesRecord>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(i as u64);
        let level = draw(&mut rng, spec.level);
        let slope = draw(&mut rng, spec.slope);
        let amplitude = draw(&mut rng, spec.amplitude);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let jump = draw(&mut rng, spec.jump);
        let sd = match spec.noise {
            Noise::Absolute(s) => s,
            Noise::RelativeToAmplitude(f) => f * amplitude,
        };
        let noise = Normal::new(0.0, sd).map_err(|e| Error::Data(e.to_string()))?;
        let n = spec.length;
        let values = (0..n)
            .map(|t| {
                let e = if sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                match spec.kind {
                    SyntheticKind::TrendSeason => {
                        let w = std::f64::consts::TAU * t as f64 / spec.period as f64;
                        level + slope * t as f64 + amplitude * (w + phase).sin() + e
                    }
                    SyntheticKind::Silent if t + 1 == n => level + jump + e,
                    SyntheticKind::Silent => level + e,
                }
            })
            .collect();
        out.push(SeriesRecord {
            id: format!("{}{}", spec.id_prefix, i + 1),
            values,
            frequency: spec.frequency,
            period: spec.period,
            horizon: spec.horizon,
        });
    }
    Ok(out)
}

/// Per-frequency summary used by the `stats` command.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyStats {
    pub frequency: Frequency,
    pub count: usize,
    pub min_length: usize,
    pub mean_length: f64,
    pub max_length: usize,
    pub mean_value: f64,
}

pub fn dataset_stats(records: &[SeriesRecord]) -> Vec<FrequencyStats> {
    let mut groups: HashMap<Frequency, Vec<&SeriesRecord>> = HashMap::new();
    for r in records {
        groups.entry(r.frequency).or_default().push(r);
    }
    let mut out: Vec<_> = groups
        .into_iter()
        .map(|(frequency, rs)| {
            let lens: Vec<usize> = rs.iter().map(|r| r.values.len()).collect();
            let total: usize = lens.iter().sum();
            let sum: f64 = rs.iter().flat_map(|r| r.values.iter()).sum();
            FrequencyStats {
                frequency,
                count: rs.len(),
                min_length: *lens.iter().min().unwrap_or(&0),
                mean_length: total as f64 / rs.len() as f64,
                max_length: *lens.iter().max().unwrap_or(&0),
                mean_value: sum / total.max(1) as f64,
            }
        })
        .collect();
    out.sort_by_key(|s| s.frequency);
    out
}
