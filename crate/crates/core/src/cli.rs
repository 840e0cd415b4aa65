//! Experiment configuration and the `synth`, `run` and `validate` commands.
//!
//! One JSON document fully determines an experiment. Seeds: repetition `r`
//! runs with `derive_seed(master_seed, "repetition/r")`; inside a run every
//! stream derives from that seed and a role string (see `continual`).
//!
//! Exit statuses: 0 success, 1 runtime failure, 2 configuration or
//! validation failure.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::{Architecture, TrainConfig, DEFAULT_ENSEMBLE_SIZE};
use crate::continual::{
    compare_strategies_partial, ComparisonConfig, ComparisonReport, GeneratorConfig, Method,
    RunConfig, SequenceConfig, Strategy, TaskSequence,
};
use crate::data::{inspect_trials, save_trials, synthesize_stream, SyntheticStreamConfig, TimeSeriesTrial};
use crate::error::Error;
use crate::report::{markdown_report, metrics_csv, write_atomic};

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Parse { .. } | Error::Json(_) | Error::TrialTooShort { .. } => {
                CliError::config(e.to_string())
            }
            other => CliError::runtime(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Trial CSV; relative paths resolve against the config file's directory.
    Csv(PathBuf),
    Synthetic(SyntheticStreamConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierVariant {
    pub name: String,
    /// One architecture per task, or a single one for all tasks.
    pub tasks: Vec<Architecture>,
}

fn default_variants() -> Vec<ClassifierVariant> {
    vec![ClassifierVariant {
        name: "mlp".into(),
        tasks: vec![Architecture::default_dense()],
    }]
}

fn default_strategies() -> Vec<Strategy> {
    Strategy::ALL.to_vec()
}

fn default_ensemble() -> usize {
    DEFAULT_ENSEMBLE_SIZE
}

fn default_lambda() -> f64 {
    100.0
}

fn default_repetitions() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    #[serde(default)]
    pub sequence: SequenceConfig,
    #[serde(default = "default_variants")]
    pub classifiers: Vec<ClassifierVariant>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default = "default_ensemble")]
    pub ensemble_size: usize,
    #[serde(default = "default_lambda")]
    pub ewc_lambda: f64,
    #[serde(default)]
    pub warm_start: bool,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<Strategy>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub master_seed: u64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, Error> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn methods(&self) -> Vec<Method> {
        let mut out = Vec::new();
        for &strategy in &self.strategies {
            for v in &self.classifiers {
                out.push(Method::new(strategy, v.name.clone(), v.tasks.clone()));
            }
        }
        out
    }

    pub fn comparison(&self) -> ComparisonConfig {
        ComparisonConfig {
            methods: self.methods(),
            run: RunConfig {
                train: self.train.clone(),
                generator: self.generator.clone(),
                ensemble_size: self.ensemble_size,
                ewc_lambda: self.ewc_lambda,
                warm_start: self.warm_start,
                seed: self.master_seed,
            },
            repetitions: self.repetitions,
            repetition_seeds: None,
        }
    }

    /// Every problem with the config itself (not the data).
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if let DataSource::Synthetic(s) = &self.data {
            if let Err(e) = s.validate() {
                v.push(format!("data.synthetic: {e}"));
            }
        }
        let seq = &self.sequence;
        if seq.window == 0 {
            v.push("sequence.window must be at least 1".into());
        }
        if seq.stride == 0 {
            v.push("sequence.stride must be at least 1".into());
        }
        if seq.class_order.len() < 2 {
            v.push("sequence.class_order needs at least 2 classes".into());
        }
        if seq.train_trials.is_empty() {
            v.push("sequence.train_trials must not be empty".into());
        }
        if self.strategies.is_empty() {
            v.push("strategies must not be empty".into());
        }
        if self.classifiers.is_empty() {
            v.push("classifiers must not be empty".into());
        }
        let n_tasks = seq.class_order.len().saturating_sub(1);
        for c in &self.classifiers {
            if c.tasks.len() != 1 && c.tasks.len() != n_tasks {
                v.push(format!(
                    "classifiers.{}: {} architectures for {n_tasks} tasks",
                    c.name,
                    c.tasks.len()
                ));
            }
            for (t, arch) in c.tasks.iter().enumerate() {
                let spec = arch.spec((seq.window.max(1), 1), 2, 0);
                if let Err(e) = spec.topology() {
                    v.push(format!("classifiers.{}.tasks[{t}]: {e}", c.name));
                }
            }
        }
        if let Err(e) = self.comparison().validate() {
            v.push(e.to_string());
        }
        v
    }

    fn resolve_data(&self, base: &Path) -> Option<PathBuf> {
        match &self.data {
            DataSource::Csv(p) if p.is_relative() => Some(base.join(p)),
            DataSource::Csv(p) => Some(p.clone()),
            DataSource::Synthetic(_) => None,
        }
    }
}

fn read_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    ExperimentConfig::from_json(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct LoadedData {
    trials: Vec<TimeSeriesTrial>,
    kind: &'static str,
    digest: String,
}

fn load_data(cfg: &ExperimentConfig, base: &Path) -> Result<LoadedData, CliError> {
    match &cfg.data {
        DataSource::Csv(_) => {
            let path = cfg.resolve_data(base).expect("csv source");
            let bytes = std::fs::read(&path)
                .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            let trials = crate::data::read_trials(bytes.as_slice())
                .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            Ok(LoadedData {
                trials,
                kind: "csv",
                digest: sha256_hex(&bytes),
            })
        }
        DataSource::Synthetic(s) => {
            let trials = synthesize_stream(s)?;
            Ok(LoadedData {
                trials,
                kind: "synthetic",
                digest: sha256_hex(serde_json::to_string(s).map_err(Error::from)?.as_bytes()),
            })
        }
    }
}

// ---------------------------------------------------------------------------
// synth

/// Write the trial CSV for a synthetic stream config and return a per-class
/// summary.
pub fn cmd_synth(config_path: &Path, out_path: &Path) -> Result<String, CliError> {
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| CliError::config(format!("{}: {e}", config_path.display())))?;
    let cfg = SyntheticStreamConfig::from_json(&text)
        .map_err(|e| CliError::config(format!("{}: {e}", config_path.display())))?;
    let trials = synthesize_stream(&cfg)?;
    save_trials(out_path, &trials)?;

    let mut out = format!(
        "wrote {} trials ({} classes x {} trials, {} steps, {} channels) to {}\n",
        trials.len(),
        cfg.n_classes,
        cfg.trials_per_class,
        cfg.trial_length,
        cfg.channels,
        out_path.display()
    );
    for class in 0..cfg.n_classes {
        let mut sum = vec![0.0; cfg.channels];
        let mut sq = vec![0.0; cfg.channels];
        let mut n = 0usize;
        for t in trials.iter().filter(|t| t.class_id == class) {
            for step in 0..t.len() {
                for (c, v) in t.row(step).iter().enumerate() {
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
            n += t.len();
        }
        let stats: Vec<String> = (0..cfg.channels)
            .map(|c| {
                let m = sum[c] / n as f64;
                let sd = (sq[c] / n as f64 - m * m).max(0.0).sqrt();
                format!("ch{} mean {m:.3} std {sd:.3}", c + 1)
            })
            .collect();
        writeln!(out, "class {class}: {}", stats.join(", ")).unwrap();
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// validate

/// Check the config and the data it references without training. Returns
/// the "OK" diagnostics, or every violation found.
pub fn cmd_validate(config_path: &Path) -> Result<String, CliError> {
    let cfg = read_config(config_path)?;
    let mut violations = cfg.violations();

    let trials: Vec<TimeSeriesTrial> = match &cfg.data {
        DataSource::Csv(_) => {
            let path = cfg.resolve_data(&config_dir(config_path)).expect("csv source");
            match std::fs::File::open(&path) {
                Ok(f) => {
                    let (trials, v) = inspect_trials(std::io::BufReader::new(f));
                    violations.extend(v.into_iter().map(|v| format!("{}: row {}: {}", path.display(), v.row, v.msg)));
                    trials
                }
                Err(e) => {
                    violations.push(format!("{}: {e}", path.display()));
                    Vec::new()
                }
            }
        }
        DataSource::Synthetic(s) => synthesize_stream(s).unwrap_or_default(),
    };

    let mut counts = String::new();
    if !trials.is_empty() {
        let mut by_class: BTreeMap<usize, Vec<&TimeSeriesTrial>> = BTreeMap::new();
        for t in &trials {
            by_class.entry(t.class_id).or_default().push(t);
        }
        let seq = &cfg.sequence;
        for &c in &seq.class_order {
            let Some(ts) = by_class.get(&c) else {
                violations.push(format!("sequence.class_order: class {c} not present in the data"));
                continue;
            };
            let shortest = ts.iter().map(|t| t.len()).min().unwrap_or(0);
            if seq.window > shortest {
                violations.push(format!(
                    "sequence.window {} exceeds the shortest trial of class {c} ({shortest} steps)",
                    seq.window
                ));
                continue;
            }
            let windows = |t: &TimeSeriesTrial| {
                if seq.window == 0 || seq.stride == 0 {
                    0
                } else {
                    (t.len() - seq.window) / seq.stride + 1
                }
            };
            let is_train = |t: &&&TimeSeriesTrial| seq.train_trials.contains(&t.trial_id);
            let train: usize = ts.iter().filter(is_train).map(|t| windows(t)).sum();
            let test: usize = ts
                .iter()
                .filter(|t| match &seq.test_trials {
                    Some(ids) => ids.contains(&t.trial_id),
                    None => !seq.train_trials.contains(&t.trial_id),
                })
                .map(|t| windows(t))
                .sum();
            if train < 2 {
                violations.push(format!("class {c}: {train} training window(s), need at least 2"));
            }
            if test == 0 {
                violations.push(format!("class {c}: no test windows"));
            }
            writeln!(
                counts,
                "class {c}: {} trials, {train} training windows, {test} test windows",
                ts.len()
            )
            .unwrap();
        }
    }

    if violations.is_empty() {
        Ok(format!("OK\n{counts}"))
    } else {
        Err(CliError::config(violations.join("\n")))
    }
}

// ---------------------------------------------------------------------------
// run

#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub repetitions: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRun {
    pub method: String,
    pub strategy: Strategy,
    pub variant: String,
    pub repetition: usize,
    pub seed: u64,
    pub status: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub master_seed: u64,
    pub repetition_seeds: Vec<u64>,
    pub methods: Vec<String>,
    pub config: ExperimentConfig,
    pub data: DataDigest,
    pub runs: Vec<ManifestRun>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataDigest {
    pub kind: String,
    pub sha256: String,
}

#[derive(Debug)]
pub struct RunOutput {
    pub out_dir: PathBuf,
    pub report: ComparisonReport,
    pub markdown: String,
}

/// Run the configured comparison and write `manifest.json`, `metrics.csv`
/// and `report.md` into the output directory. Outputs are written even when
/// some runs fail; the failures are marked and the call returns a runtime
/// error.
pub fn cmd_run(config_path: &Path, overrides: &RunOverrides) -> Result<RunOutput, CliError> {
    let mut cfg = read_config(config_path)?;
    if let Some(s) = overrides.seed {
        cfg.master_seed = s;
    }
    if let Some(r) = overrides.repetitions {
        cfg.repetitions = r;
    }
    let violations = cfg.violations();
    if !violations.is_empty() {
        return Err(CliError::config(violations.join("\n")));
    }
    let base = config_dir(config_path);
    let out_dir = overrides
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));

    let data = load_data(&cfg, &base)?;
    let seq = TaskSequence::from_trials(&data.trials, &cfg.sequence)?;
    let comparison = cfg.comparison();
    let report = compare_strategies_partial(&seq, &comparison)?;

    std::fs::create_dir_all(&out_dir).map_err(|e| CliError::runtime(format!("{}: {e}", out_dir.display())))?;
    let csv = metrics_csv(&report);
    let markdown = markdown_report(&report, cfg.repetitions);
    write_atomic(&out_dir.join("metrics.csv"), csv.as_bytes())?;
    write_atomic(&out_dir.join("report.md"), markdown.as_bytes())?;

    let mut runs = Vec::new();
    for r in 0..comparison.repetitions {
        for m in &comparison.methods {
            let label = comparison.method_label(m);
            let failed = report.failures.iter().find(|f| f.method == label && f.repetition == r);
            runs.push(ManifestRun {
                method: label,
                strategy: m.strategy,
                variant: m.variant.clone(),
                repetition: r,
                seed: comparison.repetition_seed(r),
                status: match failed {
                    Some(f) => format!("FAILED: {}", f.message),
                    None => "ok".into(),
                },
            });
        }
    }
    let manifest = Manifest {
        tool: "rcl".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        master_seed: cfg.master_seed,
        repetition_seeds: (0..comparison.repetitions).map(|r| comparison.repetition_seed(r)).collect(),
        methods: comparison.methods.iter().map(|m| comparison.method_label(m)).collect(),
        data: DataDigest {
            kind: data.kind.into(),
            sha256: data.digest,
        },
        runs,
        outputs: BTreeMap::from([
            ("metrics.csv".to_string(), sha256_hex(csv.as_bytes())),
            ("report.md".to_string(), sha256_hex(markdown.as_bytes())),
        ]),
        config: cfg,
    };
    let manifest_text = serde_json::to_string_pretty(&manifest).map_err(Error::from)?;
    write_atomic(&out_dir.join("manifest.json"), manifest_text.as_bytes())?;

    if let Some(f) = report.failures.first() {
        return Err(CliError::runtime(format!(
            "{} run(s) FAILED, first: {} repetition {}: {} (partial results in {})",
            report.failures.len(),
            f.method,
            f.repetition,
            f.message,
            out_dir.display()
        )));
    }
    Ok(RunOutput {
        out_dir,
        report,
        markdown,
    })
}
