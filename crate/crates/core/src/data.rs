//! Trial ingestion, windowing, standardization and the synthetic sensor
//! stream.
//!
//! Feature matrices are stored flattened row-major over (timestep, channel):
//! element `(t, c)` of a `W x C` window lives at `t * C + c`. Dense and
//! convolutional classifiers both rely on this layout.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng};

/// One multi-channel recording of one class under one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesTrial {
    pub class_id: usize,
    pub trial_id: usize,
    n_channels: usize,
    /// `T x C`, row-major.
    values: Vec<f64>,
    pub sample_rate_hz: f64,
}

impl TimeSeriesTrial {
    pub fn new(
        class_id: usize,
        trial_id: usize,
        n_channels: usize,
        values: Vec<f64>,
        sample_rate_hz: f64,
    ) -> Result<Self> {
        if n_channels == 0 {
            return Err(Error::Config("trial needs at least one channel".into()));
        }
        if values.is_empty() || values.len() % n_channels != 0 {
            return Err(Error::Shape {
                expected: n_channels,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "trial (class {class_id}, trial {trial_id})"
            )));
        }
        if !(sample_rate_hz > 0.0) {
            return Err(Error::Config("sample_rate_hz must be positive".into()));
        }
        Ok(Self {
            class_id,
            trial_id,
            n_channels,
            values,
            sample_rate_hz,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.n_channels
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_channels..(t + 1) * self.n_channels]
    }
}

/// Where a windowed sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    /// Cut from a recorded trial starting at timestep `start`.
    Raw { trial_id: usize, start: usize },
    /// Interpolated by a generator between stored vectors `anchor` and
    /// `neighbor` of its memory.
    Synthetic { anchor: usize, neighbor: usize },
}

impl Provenance {
    pub fn is_synthetic(&self) -> bool {
        matches!(self, Provenance::Synthetic { .. })
    }
}

/// A fixed-length `W x C` window with a class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowedSample {
    pub features: Vec<f64>,
    pub window: usize,
    pub channels: usize,
    pub class_id: usize,
    pub source: Provenance,
}

impl WindowedSample {
    pub fn new(
        features: Vec<f64>,
        window: usize,
        channels: usize,
        class_id: usize,
        source: Provenance,
    ) -> Result<Self> {
        if features.len() != window * channels {
            return Err(Error::Shape {
                expected: window * channels,
                got: features.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("windowed sample".into()));
        }
        Ok(Self {
            features,
            window,
            channels,
            class_id,
            source,
        })
    }

    pub fn at(&self, t: usize, c: usize) -> f64 {
        self.features[t * self.channels + c]
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }
}

/// Cut a trial into windows of `window` timesteps every `stride` steps.
pub fn window_trial(
    trial: &TimeSeriesTrial,
    window: usize,
    stride: usize,
) -> Result<Vec<WindowedSample>> {
    if window == 0 || stride == 0 {
        return Err(Error::Config(format!(
            "window ({window}) and stride ({stride}) must be positive"
        )));
    }
    let len = trial.len();
    if window > len {
        return Err(Error::TrialTooShort {
            class_id: trial.class_id,
            trial_id: trial.trial_id,
            len,
            window,
        });
    }
    let c = trial.n_channels;
    let count = (len - window) / stride + 1;
    Ok((0..count)
        .map(|i| {
            let start = i * stride;
            WindowedSample {
                features: trial.values[start * c..(start + window) * c].to_vec(),
                window,
                channels: c,
                class_id: trial.class_id,
                source: Provenance::Raw {
                    trial_id: trial.trial_id,
                    start,
                },
            }
        })
        .collect())
}

/// Per-feature mean and population standard deviation over flattened
/// windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Stds below this are treated as zero variance and replaced by 1.
pub const MIN_STD: f64 = 1e-12;

pub fn fit_standardizer(samples: &[WindowedSample]) -> Result<StandardizationParams> {
    let first = samples.first().ok_or(Error::Empty("standardizer samples"))?;
    let dim = first.dim();
    if let Some(bad) = samples.iter().find(|s| s.dim() != dim) {
        return Err(Error::Shape {
            expected: dim,
            got: bad.dim(),
        });
    }
    let n = samples.len() as f64;
    let mut mean = vec![0.0; dim];
    for s in samples {
        for (m, x) in mean.iter_mut().zip(&s.features) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for s in samples {
        for ((v, x), m) in var.iter_mut().zip(&s.features).zip(&mean) {
            let d = x - m;
            *v += d * d;
        }
    }
    let std = var
        .into_iter()
        .map(|v| {
            let sd = (v / n).sqrt();
            if sd < MIN_STD {
                1.0
            } else {
                sd
            }
        })
        .collect();
    Ok(StandardizationParams { mean, std })
}

impl StandardizationParams {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn apply(&self, sample: &WindowedSample) -> Result<WindowedSample> {
        let features = self.transform(&sample.features)?;
        Ok(WindowedSample {
            features,
            ..sample.clone()
        })
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x.len())?;
        Ok(x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| (x - m) / s)
            .collect())
    }

    pub fn inverse(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check(z.len())?;
        Ok(z.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((z, m), s)| z * s + m)
            .collect())
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::Shape {
                expected: self.dim(),
                got: len,
            });
        }
        Ok(())
    }
}

pub fn apply_standardizer(
    params: &StandardizationParams,
    sample: &WindowedSample,
) -> Result<WindowedSample> {
    params.apply(sample)
}

// ---------------------------------------------------------------------------
// Trial CSV

/// A problem found while reading a trial CSV. `row` is the 1-based line
/// number in the file (the header is line 1).
#[derive(Debug, Clone, PartialEq)]
pub struct CsvViolation {
    pub row: usize,
    pub msg: String,
}

impl From<CsvViolation> for Error {
    fn from(v: CsvViolation) -> Self {
        Error::Parse {
            row: v.row,
            msg: v.msg,
        }
    }
}

/// Parse a trial CSV, collecting every schema violation instead of stopping
/// at the first one. Trials are returned only for groups that parsed
/// cleanly.
pub fn inspect_trials<R: std::io::Read>(
    reader: R,
) -> (Vec<TimeSeriesTrial>, Vec<CsvViolation>) {
    let mut violations = Vec::new();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let n_channels = match rdr.headers() {
        Ok(h) => match check_header(h) {
            Ok(c) => c,
            Err(msg) => {
                violations.push(CsvViolation { row: 1, msg });
                return (Vec::new(), violations);
            }
        },
        Err(e) => {
            violations.push(CsvViolation {
                row: 1,
                msg: e.to_string(),
            });
            return (Vec::new(), violations);
        }
    };

    let mut groups: Vec<((usize, usize), Vec<f64>, bool)> = Vec::new();
    let mut seen: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut last_step: Option<u64> = None;

    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                violations.push(CsvViolation {
                    row,
                    msg: e.to_string(),
                });
                continue;
            }
        };
        if rec.len() != n_channels + 3 {
            violations.push(CsvViolation {
                row,
                msg: format!(
                    "expected {} fields ({} channels), found {}",
                    n_channels + 3,
                    n_channels,
                    rec.len()
                ),
            });
            continue;
        }
        let ids: std::result::Result<Vec<u64>, _> =
            (0..3).map(|j| rec[j].parse::<u64>()).collect();
        let ids = match ids {
            Ok(v) => v,
            Err(e) => {
                violations.push(CsvViolation {
                    row,
                    msg: format!("bad class_id/trial_id/step: {e}"),
                });
                continue;
            }
        };
        let key = (ids[0] as usize, ids[1] as usize);
        let step = ids[2];
        let mut values = Vec::with_capacity(n_channels);
        let mut bad = None;
        for j in 0..n_channels {
            match rec[3 + j].parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                Ok(v) => {
                    bad = Some(format!("non-finite value {v} in ch{}", j + 1));
                    break;
                }
                Err(e) => {
                    bad = Some(format!("bad value in ch{}: {e}", j + 1));
                    break;
                }
            }
        }

        let new_group = groups.last().map(|g| g.0) != Some(key);
        if new_group {
            if let Some(prev) = groups.last().map(|g| g.0) {
                if key < prev {
                    violations.push(CsvViolation {
                        row,
                        msg: format!(
                            "rows not sorted by (class_id, trial_id): ({}, {}) after ({}, {})",
                            key.0, key.1, prev.0, prev.1
                        ),
                    });
                }
            }
            if seen.insert(key, groups.len()).is_some() {
                violations.push(CsvViolation {
                    row,
                    msg: format!("trial (class {}, trial {}) is not contiguous", key.0, key.1),
                });
            }
            groups.push((key, Vec::new(), true));
        } else if let Some(prev) = last_step {
            if step <= prev {
                violations.push(CsvViolation {
                    row,
                    msg: format!("steps not increasing: step {step} after {prev}"),
                });
            }
        }
        last_step = Some(step);

        let group = groups.last_mut().expect("group pushed above");
        match bad {
            Some(msg) => {
                group.2 = false;
                violations.push(CsvViolation { row, msg });
            }
            None => group.1.extend(values),
        }
    }

    if groups.is_empty() && violations.is_empty() {
        violations.push(CsvViolation {
            row: 1,
            msg: "no data rows".into(),
        });
    }

    let trials = groups
        .into_iter()
        .filter(|g| g.2 && !g.1.is_empty())
        .filter_map(|((class_id, trial_id), values, _)| {
            TimeSeriesTrial::new(class_id, trial_id, n_channels, values, 1.0).ok()
        })
        .collect();
    (trials, violations)
}

fn check_header(h: &csv::StringRecord) -> std::result::Result<usize, String> {
    let fixed = ["class_id", "trial_id", "step"];
    for (j, name) in fixed.iter().enumerate() {
        if h.get(j) != Some(*name) {
            return Err(format!("missing column `{name}` at position {}", j + 1));
        }
    }
    let n = h.len().saturating_sub(3);
    if n == 0 {
        return Err("no channel columns (expected ch1..chC)".into());
    }
    for j in 0..n {
        let want = format!("ch{}", j + 1);
        if h.get(3 + j) != Some(want.as_str()) {
            return Err(format!("missing column `{want}` at position {}", j + 4));
        }
    }
    Ok(n)
}

pub fn read_trials<R: std::io::Read>(reader: R) -> Result<Vec<TimeSeriesTrial>> {
    let (trials, violations) = inspect_trials(reader);
    match violations.into_iter().next() {
        Some(v) => Err(v.into()),
        None => Ok(trials),
    }
}

pub fn load_trials(path: impl AsRef<Path>) -> Result<Vec<TimeSeriesTrial>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_trials(std::io::BufReader::new(file))
}

/// Render trials in the CSV schema. Values use the shortest representation
/// that parses back to the same `f64`.
pub fn trials_to_csv(trials: &[TimeSeriesTrial]) -> Result<String> {
    let c = match trials.first() {
        Some(t) => t.n_channels,
        None => return Err(Error::Empty("trials")),
    };
    let mut out = String::from("class_id,trial_id,step");
    for j in 1..=c {
        write!(out, ",ch{j}").unwrap();
    }
    out.push('\n');
    let mut sorted: Vec<&TimeSeriesTrial> = trials.iter().collect();
    sorted.sort_by_key(|t| (t.class_id, t.trial_id));
    for t in sorted {
        if t.n_channels != c {
            return Err(Error::Shape {
                expected: c,
                got: t.n_channels,
            });
        }
        for step in 0..t.len() {
            write!(out, "{},{},{}", t.class_id, t.trial_id, step).unwrap();
            for v in t.row(step) {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn save_trials(path: impl AsRef<Path>, trials: &[TimeSeriesTrial]) -> Result<()> {
    let path = path.as_ref();
    let text = trials_to_csv(trials)?;
    crate::report::write_atomic(path, text.as_bytes())
}

// ---------------------------------------------------------------------------
// Synthetic stream

/// Signal parameters for one class: per channel
/// `mean[c] + amplitude * sin(2 pi f t + phase + c pi / 2) + N(0, noise_std^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSignal {
    pub mean: Vec<f64>,
    pub amplitude: f64,
    /// Cycles per timestep.
    pub frequency: f64,
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticStreamConfig {
    pub n_classes: usize,
    pub channels: usize,
    pub trial_length: usize,
    pub trials_per_class: usize,
    pub classes: Vec<ClassSignal>,
    #[serde(default = "default_rate")]
    pub sample_rate_hz: f64,
    pub seed: u64,
}

fn default_rate() -> f64 {
    1.0
}

impl Default for SyntheticStreamConfig {
    /// Three classes, two channels, 5 trials of 6250 steps each (125
    /// non-overlapping windows of 50). Every pair of class means is at least
    /// 3 noise standard deviations apart; both anomalies shift channel 1 and
    /// the second also shifts channel 2, so they share a direction of
    /// deviation from normal operation. Frequencies
    /// are chosen so a 50-step window does not hold a whole number of
    /// periods, which keeps window phases varied within a trial.
    fn default() -> Self {
        let sigma = 1.0;
        Self {
            n_classes: 3,
            channels: 2,
            trial_length: 6250,
            trials_per_class: 5,
            classes: vec![
                ClassSignal {
                    mean: vec![0.0, 0.0],
                    amplitude: 1.0,
                    frequency: 0.047,
                    noise_std: sigma,
                },
                ClassSignal {
                    mean: vec![3.0 * sigma, 0.0],
                    amplitude: 1.5,
                    frequency: 0.083,
                    noise_std: sigma,
                },
                ClassSignal {
                    mean: vec![3.0 * sigma, 3.0 * sigma],
                    amplitude: 2.0,
                    frequency: 0.119,
                    noise_std: sigma,
                },
            ],
            sample_rate_hz: 1.0,
            seed: 2024,
        }
    }
}

impl SyntheticStreamConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::Config(format!("{field}: {msg}")));
        if self.n_classes < 2 {
            return bad("n_classes", "must be at least 2");
        }
        if self.channels == 0 {
            return bad("channels", "must be at least 1");
        }
        if self.trial_length == 0 {
            return bad("trial_length", "must be at least 1");
        }
        if self.trials_per_class == 0 {
            return bad("trials_per_class", "must be at least 1");
        }
        if !(self.sample_rate_hz > 0.0) {
            return bad("sample_rate_hz", "must be positive");
        }
        if self.classes.len() != self.n_classes {
            return Err(Error::Config(format!(
                "classes: {} signal entries for n_classes = {}",
                self.classes.len(),
                self.n_classes
            )));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if c.mean.len() != self.channels {
                return Err(Error::Config(format!(
                    "classes[{i}].mean: length {} does not match channels = {}",
                    c.mean.len(),
                    self.channels
                )));
            }
            let finite = c.mean.iter().all(|v| v.is_finite())
                && c.amplitude.is_finite()
                && c.frequency.is_finite()
                && c.noise_std.is_finite();
            if !finite || c.noise_std < 0.0 {
                return Err(Error::Config(format!(
                    "classes[{i}]: parameters must be finite with noise_std >= 0"
                )));
            }
            for (j, d) in self.classes.iter().enumerate().take(i) {
                if c == d {
                    return Err(Error::Config(format!(
                        "classes[{i}]: identical signal parameters to classes[{j}]"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Generate one trial per (class, trial) with trial ids starting at 1.
/// Each trial has its own seeded stream, so the output is a pure function of
/// the config.
pub fn synthesize_stream(config: &SyntheticStreamConfig) -> Result<Vec<TimeSeriesTrial>> {
    config.validate()?;
    let ch = config.channels;
    let mut trials = Vec::with_capacity(config.n_classes * config.trials_per_class);
    for (class_id, signal) in config.classes.iter().enumerate() {
        for trial_id in 1..=config.trials_per_class {
            let mut r = rng(derive_seed(
                config.seed,
                &format!("synth/class{class_id}/trial{trial_id}"),
            ));
            let phase = r.random::<f64>() * 2.0 * PI;
            let mut values = Vec::with_capacity(config.trial_length * ch);
            for t in 0..config.trial_length {
                for c in 0..ch {
                    let arg = 2.0 * PI * signal.frequency * t as f64 + phase + c as f64 * PI / 2.0;
                    let z: f64 = StandardNormal.sample(&mut r);
                    values.push(signal.mean[c] + signal.amplitude * arg.sin() + signal.noise_std * z);
                }
            }
            trials.push(TimeSeriesTrial::new(
                class_id,
                trial_id,
                ch,
                values,
                config.sample_rate_hz,
            )?);
        }
    }
    Ok(trials)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn trial(len: usize, ch: usize) -> TimeSeriesTrial {
        let values = (0..len * ch).map(|v| v as f64).collect();
        TimeSeriesTrial::new(1, 1, ch, values, 1.0).unwrap()
    }

    fn sample(features: Vec<f64>) -> WindowedSample {
        let n = features.len();
        WindowedSample::new(features, n, 1, 0, Provenance::Raw { trial_id: 1, start: 0 }).unwrap()
    }

    #[test]
    fn window_count_small() {
        let w = window_trial(&trial(250, 2), 50, 50).unwrap();
        assert_eq!(w.len(), 5);
        assert!(w.iter().all(|s| s.window == 50 && s.channels == 2 && s.dim() == 100));
    }

    #[test]
    fn window_count_full_length_trial() {
        // (6250 - 50) / 50 + 1 = 125 non-overlapping windows
        let w = window_trial(&trial(6250, 2), 50, 50).unwrap();
        assert_eq!(w.len(), 125);
    }

    #[test]
    fn window_longer_than_trial_errors() {
        let err = window_trial(&trial(49, 2), 50, 50).unwrap_err();
        assert!(matches!(err, Error::TrialTooShort { len: 49, .. }));
        assert!(err.to_string().contains("trial 1"));
    }

    #[test]
    fn zero_window_or_stride_is_config_error() {
        assert!(matches!(window_trial(&trial(10, 1), 0, 1), Err(Error::Config(_))));
        assert!(matches!(window_trial(&trial(10, 1), 2, 0), Err(Error::Config(_))));
    }

    #[test]
    fn overlapping_windows_and_provenance() {
        let t = trial(20, 3);
        let w = window_trial(&t, 5, 3).unwrap();
        assert_eq!(w.len(), (20 - 5) / 3 + 1);
        for s in &w {
            let Provenance::Raw { start, trial_id } = s.source else {
                panic!("raw expected")
            };
            assert_eq!(trial_id, 1);
            for tt in 0..5 {
                for c in 0..3 {
                    assert_eq!(s.at(tt, c), t.row(start + tt)[c]);
                }
            }
        }
    }

    #[test]
    fn non_overlapping_windows_partition_prefix() {
        let t = trial(137, 2);
        let w = window_trial(&t, 10, 10).unwrap();
        let starts: Vec<usize> = w
            .iter()
            .map(|s| match s.source {
                Provenance::Raw { start, .. } => start,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(starts, (0..13).map(|i| i * 10).collect::<Vec<_>>());
        assert_eq!(w.len() * 10, 137 / 10 * 10);
    }

    #[test]
    fn standardizer_two_points() {
        let p = fit_standardizer(&[sample(vec![0.0]), sample(vec![2.0])]).unwrap();
        assert_eq!(p.mean, vec![1.0]);
        assert_eq!(p.std, vec![1.0]);
    }

    #[test]
    fn standardizer_zero_variance_guard() {
        let s: Vec<_> = (0..3).map(|_| sample(vec![5.0])).collect();
        let p = fit_standardizer(&s).unwrap();
        assert_eq!(p.mean, vec![5.0]);
        assert_eq!(p.std, vec![1.0]);
    }

    #[test]
    fn standardizer_empty_and_mismatch() {
        assert!(matches!(fit_standardizer(&[]), Err(Error::Empty(_))));
        let p = StandardizationParams::identity(2);
        assert!(matches!(p.apply(&sample(vec![1.0])), Err(Error::Shape { .. })));
    }

    #[test]
    fn identity_and_mean_sample() {
        let s = sample(vec![1.5, -2.0, 3.0]);
        assert_eq!(StandardizationParams::identity(3).apply(&s).unwrap(), s);
        let p = StandardizationParams {
            mean: vec![1.5, -2.0, 3.0],
            std: vec![2.0, 0.5, 3.0],
        };
        assert_eq!(p.apply(&s).unwrap().features, vec![0.0; 3]);
    }

    #[test]
    fn csv_minimal_file() {
        let text = "class_id,trial_id,step,ch1,ch2\n0,1,0,1.5,2\n0,1,1,-3e-2,4\n";
        let trials = read_trials(text.as_bytes()).unwrap();
        assert_eq!(trials.len(), 1);
        assert_eq!(trials[0].len(), 2);
        assert_eq!(trials[0].n_channels(), 2);
        assert_eq!(trials[0].values(), &[1.5, 2.0, -0.03, 4.0]);
    }

    #[test]
    fn csv_nan_names_row() {
        let text = "class_id,trial_id,step,ch1\n0,1,0,1\n0,1,1,NaN\n";
        match read_trials(text.as_bytes()) {
            Err(Error::Parse { row, msg }) => {
                assert_eq!(row, 3);
                assert!(msg.contains("non-finite"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_missing_column_and_bad_channel_count() {
        let text = "class_id,step,ch1\n0,0,1\n";
        assert!(matches!(read_trials(text.as_bytes()), Err(Error::Parse { row: 1, .. })));
        let text = "class_id,trial_id,step,ch1,ch2\n0,1,0,1,2\n0,1,1,3\n";
        assert!(matches!(read_trials(text.as_bytes()), Err(Error::Parse { row: 3, .. })));
    }

    #[test]
    fn csv_unsorted_steps_reports_first_offender() {
        let text = "class_id,trial_id,step,ch1\n0,1,0,1\n0,1,2,1\n0,1,1,1\n0,1,3,1\n0,1,0,1\n";
        let (_, v) = inspect_trials(text.as_bytes());
        assert_eq!(v[0].row, 4);
        assert!(v[0].msg.contains("steps not increasing"));
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let cfg = SyntheticStreamConfig {
            trial_length: 40,
            trials_per_class: 2,
            ..Default::default()
        };
        let trials = synthesize_stream(&cfg).unwrap();
        let text = trials_to_csv(&trials).unwrap();
        let back = read_trials(text.as_bytes()).unwrap();
        assert_eq!(back.len(), trials.len());
        for (a, b) in trials.iter().zip(&back) {
            assert_eq!((a.class_id, a.trial_id), (b.class_id, b.trial_id));
            let bits = |t: &TimeSeriesTrial| t.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn synth_degenerate_signal_equals_mean() {
        let cfg = SyntheticStreamConfig {
            n_classes: 2,
            channels: 2,
            trial_length: 30,
            trials_per_class: 2,
            classes: vec![
                ClassSignal { mean: vec![1.0, -2.0], amplitude: 0.0, frequency: 0.1, noise_std: 0.0 },
                ClassSignal { mean: vec![4.0, 0.5], amplitude: 0.0, frequency: 0.2, noise_std: 0.0 },
            ],
            sample_rate_hz: 1.0,
            seed: 3,
        };
        for t in synthesize_stream(&cfg).unwrap() {
            let m = &cfg.classes[t.class_id].mean;
            for step in 0..t.len() {
                assert_eq!(t.row(step), m.as_slice());
            }
        }
    }

    #[test]
    fn synth_is_deterministic() {
        let cfg = SyntheticStreamConfig {
            trial_length: 200,
            ..Default::default()
        };
        assert_eq!(synthesize_stream(&cfg).unwrap(), synthesize_stream(&cfg).unwrap());
        let other = SyntheticStreamConfig { seed: cfg.seed + 1, ..cfg.clone() };
        assert_ne!(synthesize_stream(&cfg).unwrap(), synthesize_stream(&other).unwrap());
    }

    #[test]
    fn synth_default_classes_are_separated() {
        let cfg = SyntheticStreamConfig::default();
        let trials = synthesize_stream(&cfg).unwrap();
        assert_eq!(trials.len(), 15);
        let mut means = vec![vec![0.0; 2]; 3];
        let mut counts = [0usize; 3];
        for t in &trials {
            for step in 0..t.len() {
                for c in 0..2 {
                    means[t.class_id][c] += t.row(step)[c];
                }
            }
            counts[t.class_id] += t.len();
        }
        for (m, n) in means.iter_mut().zip(counts) {
            m.iter_mut().for_each(|v| *v /= n as f64);
        }
        let noise = cfg.classes[0].noise_std;
        for a in 0..3 {
            for b in 0..a {
                let d = means[a]
                    .iter()
                    .zip(&means[b])
                    .map(|(x, y)| (x - y).powi(2))
                    .sum::<f64>()
                    .sqrt();
                // 3 sigma apart up to the sampling error of the means
                assert!(d > 3.0 * noise - 0.05, "classes {a},{b} separated by only {d}");
            }
        }
    }

    #[test]
    fn synth_rejects_zero_classes() {
        let cfg = SyntheticStreamConfig {
            n_classes: 0,
            ..Default::default()
        };
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("n_classes"));
        let dup = SyntheticStreamConfig {
            classes: vec![SyntheticStreamConfig::default().classes[0].clone(); 3],
            ..Default::default()
        };
        assert!(dup.validate().is_err());
    }

    #[test]
    fn standardized_moments() {
        use rand::Rng;
        let mut r = rng(11);
        let samples: Vec<_> = (0..100)
            .map(|_| sample((0..6).map(|j| r.random::<f64>() * (j as f64 + 1.0) + j as f64).collect()))
            .collect();
        let p = fit_standardizer(&samples).unwrap();
        let z: Vec<_> = samples.iter().map(|s| p.apply(s).unwrap()).collect();
        let q = fit_standardizer(&z).unwrap();
        for j in 0..6 {
            assert_abs_diff_eq!(q.mean[j], 0.0, epsilon = 1e-9);
            assert_abs_diff_eq!(q.std[j], 1.0, epsilon = 1e-9);
        }
        for (s, zs) in samples.iter().zip(&z) {
            let back = p.inverse(&zs.features).unwrap();
            for (a, b) in back.iter().zip(&s.features) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-9);
            }
        }
    }
}
