//! Class-incremental task sequences and the strategies that learn them.
//!
//! Class labels inside a sequence are positions: label 0 is the normal
//! class, label `i` the anomaly introduced by task `i`. Task `i` evaluates
//! on held-out windows of labels `0..=i`.
//!
//! * `rcl` fits one SMOTE generator per class and trains a fresh ensemble
//!   per task on generated windows of earlier classes plus real windows of
//!   the new class.
//! * `finetune` trains on raw classes {0, 1}, then for every later task
//!   widens the output head and keeps training on raw {0, i} only.
//! * `ewc` is `finetune` with a diagonal-Fisher quadratic anchor on the
//!   previous task's parameters.
//! * `baseline` retrains from scratch on raw data of every class seen.
//!
//! Every random stream is derived from the run seed and a role string (see
//! [`crate::seed`]). Roles do not mention the strategy, so strategies that
//! do the same work (e.g. task 1 of `finetune` and `baseline`) produce the
//! same models.

use std::collections::BTreeSet;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{
    fisher_diagonal, init_model, train, Architecture, EWCPenalty, Ensemble, NetModel,
    TrainConfig, DEFAULT_ENSEMBLE_SIZE,
};
use crate::data::{fit_standardizer, window_trial, StandardizationParams, TimeSeriesTrial, WindowedSample};
use crate::error::{Error, Result};
use crate::eval::{aggregate, confusion, metrics, ConfusionMatrix, MetricReport, MetricSummary};
use crate::generator::{fit_generator, ClassGenerator, GenerationRequest, DEFAULT_K};
use crate::seed::derive_seed;

// ---------------------------------------------------------------------------
// Task sequences

/// Training and held-out windows of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSplit {
    /// Class id in the source data.
    pub class_id: usize,
    pub train: Vec<WindowedSample>,
    pub test: Vec<WindowedSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceConfig {
    pub window: usize,
    pub stride: usize,
    /// Source class ids in task order; the first is the normal class.
    pub class_order: Vec<usize>,
    pub train_trials: Vec<usize>,
    /// Defaults to every trial not used for training.
    #[serde(default)]
    pub test_trials: Option<Vec<usize>>,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        Self {
            window: 50,
            stride: 50,
            class_order: vec![0, 1, 2],
            train_trials: vec![1],
            test_trials: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSequence {
    pub window: usize,
    pub channels: usize,
    pub classes: Vec<ClassSplit>,
}

impl TaskSequence {
    /// Build a sequence from raw splits; sample labels are rewritten to
    /// positions in `classes`.
    pub fn new(window: usize, channels: usize, mut classes: Vec<ClassSplit>) -> Result<Self> {
        if classes.len() < 2 {
            return Err(Error::Config(format!(
                "a task sequence needs at least 2 classes, got {}",
                classes.len()
            )));
        }
        for (label, split) in classes.iter_mut().enumerate() {
            if split.train.is_empty() || split.test.is_empty() {
                return Err(Error::Config(format!(
                    "class {} needs both training and test windows",
                    split.class_id
                )));
            }
            let train_trials = trial_ids(&split.train);
            if trial_ids(&split.test).iter().any(|t| train_trials.contains(t)) {
                return Err(Error::Config(format!(
                    "class {}: training and test windows share a trial",
                    split.class_id
                )));
            }
            for s in split.train.iter_mut().chain(split.test.iter_mut()) {
                if s.window != window || s.channels != channels {
                    return Err(Error::Shape {
                        expected: window * channels,
                        got: s.dim(),
                    });
                }
                s.class_id = label;
            }
        }
        Ok(Self {
            window,
            channels,
            classes,
        })
    }

    pub fn from_trials(trials: &[TimeSeriesTrial], config: &SequenceConfig) -> Result<Self> {
        let channels = trials
            .first()
            .ok_or(Error::Empty("trials"))?
            .n_channels();
        if config.train_trials.is_empty() {
            return Err(Error::Config("train_trials must not be empty".into()));
        }
        let mut seen = BTreeSet::new();
        if let Some(dup) = config.class_order.iter().find(|c| !seen.insert(**c)) {
            return Err(Error::Config(format!("class {dup} listed twice in class_order")));
        }
        let mut classes = Vec::new();
        for &class_id in &config.class_order {
            let mut split = ClassSplit {
                class_id,
                train: Vec::new(),
                test: Vec::new(),
            };
            let mut found = false;
            for t in trials.iter().filter(|t| t.class_id == class_id) {
                found = true;
                if t.n_channels() != channels {
                    return Err(Error::Shape {
                        expected: channels,
                        got: t.n_channels(),
                    });
                }
                let is_train = config.train_trials.contains(&t.trial_id);
                let is_test = match &config.test_trials {
                    Some(ids) => ids.contains(&t.trial_id),
                    None => !is_train,
                };
                if is_train && is_test {
                    return Err(Error::Config(format!(
                        "trial {} is listed for both training and testing",
                        t.trial_id
                    )));
                }
                if is_train {
                    split.train.extend(window_trial(t, config.window, config.stride)?);
                } else if is_test {
                    split.test.extend(window_trial(t, config.window, config.stride)?);
                }
            }
            if !found {
                return Err(Error::Config(format!("class {class_id} not present in the data")));
            }
            classes.push(split);
        }
        Self::new(config.window, channels, classes)
    }

    pub fn n_tasks(&self) -> usize {
        self.classes.len() - 1
    }

    pub fn input_shape(&self) -> (usize, usize) {
        (self.window, self.channels)
    }

    /// Held-out windows of labels `0..=task`.
    pub fn test_set(&self, task: usize) -> (Vec<WindowedSample>, Vec<usize>) {
        let samples: Vec<WindowedSample> = self.classes[..=task]
            .iter()
            .flat_map(|c| c.test.iter().cloned())
            .collect();
        let labels = samples.iter().map(|s| s.class_id).collect();
        (samples, labels)
    }

    fn raw_train(&self, labels: &[usize]) -> Vec<WindowedSample> {
        labels
            .iter()
            .flat_map(|&l| self.classes[l].train.iter().cloned())
            .collect()
    }
}

fn trial_ids(samples: &[WindowedSample]) -> BTreeSet<usize> {
    samples
        .iter()
        .filter_map(|s| match s.source {
            crate::data::Provenance::Raw { trial_id, .. } => Some(trial_id),
            _ => None,
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Rcl,
    Ewc,
    Finetune,
    Baseline,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Ewc, Strategy::Finetune, Strategy::Baseline, Strategy::Rcl];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Rcl => "rcl",
            Strategy::Ewc => "ewc",
            Strategy::Finetune => "finetune",
            Strategy::Baseline => "baseline",
        }
    }

    /// Whether the strategy keeps one network across tasks, which pins its
    /// architecture.
    pub fn reuses_network(&self) -> bool {
        matches!(self, Strategy::Ewc | Strategy::Finetune)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub k: usize,
    /// Cap on raw windows each generator retains; `None` keeps all.
    #[serde(default)]
    pub memory_budget: Option<usize>,
    /// Pseudo windows generated per earlier class at each task; `None`
    /// matches the new class's training size.
    #[serde(default)]
    pub pseudo_count: Option<usize>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            memory_budget: None,
            pseudo_count: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub generator: GeneratorConfig,
    pub ensemble_size: usize,
    pub ewc_lambda: f64,
    /// rcl only: start task `i` from the task `i - 1` members (head widened)
    /// instead of fresh networks.
    #[serde(default)]
    pub warm_start: bool,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            generator: GeneratorConfig::default(),
            ensemble_size: DEFAULT_ENSEMBLE_SIZE,
            ewc_lambda: 100.0,
            warm_start: false,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.ensemble_size == 0 {
            return Err(Error::Config("ensemble_size must be at least 1".into()));
        }
        if self.generator.k == 0 {
            return Err(Error::Config("generator.k must be at least 1".into()));
        }
        if matches!(self.generator.memory_budget, Some(b) if b < 2) {
            return Err(Error::Config("generator.memory_budget must be at least 2".into()));
        }
        if self.generator.pseudo_count == Some(0) {
            return Err(Error::Config("generator.pseudo_count must be at least 1".into()));
        }
        if !(self.ewc_lambda >= 0.0) {
            return Err(Error::Config("ewc_lambda must be >= 0".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Run results

/// Raw and synthetic window counts of one label in a training set, tallied
/// from provenance tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassComposition {
    pub label: usize,
    pub raw: usize,
    pub synthetic: usize,
}

fn composition(samples: &[WindowedSample], n_classes: usize) -> Vec<ClassComposition> {
    let mut out: Vec<ClassComposition> = (0..n_classes)
        .map(|label| ClassComposition {
            label,
            raw: 0,
            synthetic: 0,
        })
        .collect();
    for s in samples {
        let c = &mut out[s.class_id];
        if s.source.is_synthetic() {
            c.synthetic += 1;
        } else {
            c.raw += 1;
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct TaskOutcome {
    pub task: usize,
    pub n_classes: usize,
    pub architecture: Architecture,
    pub ensemble: Ensemble,
    pub train_seeds: Vec<u64>,
    pub composition: Vec<ClassComposition>,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricReport,
    pub member_metrics: Vec<MetricReport>,
    pub loss_histories: Vec<Vec<f64>>,
    /// EWC anchors used while training this task, one per member.
    pub penalties: Vec<EWCPenalty>,
}

#[derive(Debug, Clone)]
pub struct ContinualRun {
    pub strategy: Strategy,
    pub seed: u64,
    pub tasks: Vec<TaskOutcome>,
    pub generators: Vec<ClassGenerator>,
    /// Synthetic windows generated per label over the whole run.
    pub replay_counts: Vec<usize>,
    /// Raw windows of earlier classes the strategy keeps around.
    pub memory_footprint: usize,
}

impl ContinualRun {
    pub fn task(&self, task: usize) -> &TaskOutcome {
        &self.tasks[task - 1]
    }

    /// Check that no task's training set holds a raw window of an earlier
    /// class (rcl runs only carry pseudo windows for those).
    pub fn audit_replay_purity(&self) -> Result<()> {
        for t in &self.tasks {
            for c in &t.composition {
                if c.label < t.task && c.raw > 0 {
                    return Err(Error::Config(format!(
                        "task {}: {} raw window(s) of earlier class {}",
                        t.task, c.raw, c.label
                    )));
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Shared machinery

fn member_seed(run_seed: u64, task: usize, member: usize, role: &str) -> u64 {
    derive_seed(run_seed, &format!("task{task}/member{member}/{role}"))
}

fn arch_for_task(archs: &[Architecture], task: usize) -> Result<&Architecture> {
    match archs.len() {
        0 => Err(Error::Config("no classifier architecture given".into())),
        1 => Ok(&archs[0]),
        _ => archs.get(task - 1).ok_or_else(|| {
            Error::Config(format!("no classifier architecture for task {task}"))
        }),
    }
}

/// Start point of a member: a fresh network or a warm model with an optional
/// EWC anchor.
enum Start {
    Fresh,
    Warm(Vec<(NetModel, Option<EWCPenalty>)>),
}

struct Fitted {
    ensemble: Ensemble,
    train_seeds: Vec<u64>,
    histories: Vec<Vec<f64>>,
    standardized: Vec<WindowedSample>,
    labels: Vec<usize>,
}

#[allow(clippy::too_many_arguments)]
fn fit_task_ensemble(
    seq: &TaskSequence,
    task: usize,
    arch: &Architecture,
    samples: &[WindowedSample],
    standardizer: Option<StandardizationParams>,
    start: Start,
    cfg: &RunConfig,
) -> Result<Fitted> {
    let n_classes = task + 1;
    let standardizer = match standardizer {
        Some(s) => s,
        None => fit_standardizer(samples)?,
    };
    let standardized = samples
        .iter()
        .map(|s| standardizer.apply(s))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = standardized.iter().map(|s| s.class_id).collect();

    let starts: Vec<(NetModel, Option<EWCPenalty>)> = match start {
        Start::Fresh => (0..cfg.ensemble_size)
            .map(|m| {
                let spec = arch.spec(seq.input_shape(), n_classes, member_seed(cfg.seed, task, m, "init"));
                Ok((init_model(&spec)?, None))
            })
            .collect::<Result<_>>()?,
        Start::Warm(v) => v,
    };
    let train_seeds: Vec<u64> = (0..starts.len())
        .map(|m| member_seed(cfg.seed, task, m, "shuffle"))
        .collect();

    let trained = starts
        .par_iter()
        .zip(train_seeds.par_iter())
        .map(|((model, penalty), &seed)| {
            let tc = TrainConfig {
                shuffle_seed: seed,
                ..cfg.train.clone()
            };
            train(model, &standardized, &labels, &tc, penalty.as_ref())
        })
        .collect::<Result<Vec<_>>>()?;
    let (members, histories): (Vec<_>, Vec<_>) =
        trained.into_iter().map(|t| (t.model, t.loss_history)).unzip();
    Ok(Fitted {
        ensemble: Ensemble::new(members, standardizer)?,
        train_seeds,
        histories,
        standardized,
        labels,
    })
}

fn evaluate(
    seq: &TaskSequence,
    task: usize,
    ensemble: &Ensemble,
) -> Result<(ConfusionMatrix, MetricReport, Vec<MetricReport>)> {
    let (samples, truth) = seq.test_set(task);
    let n = task + 1;
    let cm = confusion(&truth, &ensemble.predict(&samples)?, n)?;
    let report = metrics(&cm)?;
    let members = ensemble
        .member_predictions(&samples)?
        .iter()
        .map(|pred| metrics(&confusion(&truth, pred, n)?))
        .collect::<Result<Vec<_>>>()?;
    Ok((cm, report, members))
}

#[allow(clippy::too_many_arguments)]
fn outcome(
    seq: &TaskSequence,
    task: usize,
    arch: &Architecture,
    train_samples: &[WindowedSample],
    fitted: Fitted,
    penalties: Vec<EWCPenalty>,
) -> Result<TaskOutcome> {
    let (cm, report, member_metrics) = evaluate(seq, task, &fitted.ensemble)?;
    Ok(TaskOutcome {
        task,
        n_classes: task + 1,
        architecture: arch.clone(),
        ensemble: fitted.ensemble,
        train_seeds: fitted.train_seeds,
        composition: composition(train_samples, task + 1),
        confusion: cm,
        metrics: report,
        member_metrics,
        loss_histories: fitted.histories,
        penalties,
    })
}

// ---------------------------------------------------------------------------
// Strategies

/// Pseudo-replay: generators stand in for stored data of earlier classes.
/// `archs` holds one architecture per task, or a single one used for all.
pub fn run_rcl(seq: &TaskSequence, archs: &[Architecture], cfg: &RunConfig) -> Result<ContinualRun> {
    cfg.validate()?;
    let gc = &cfg.generator;
    let fit = |label: usize| {
        fit_generator(
            label,
            &seq.classes[label].train,
            gc.k,
            gc.memory_budget,
            derive_seed(cfg.seed, &format!("generator/class{label}")),
        )
    };
    let mut generators = vec![fit(0).map_err(|e| e.in_task(0))?];
    let mut replay_counts = vec![0; seq.classes.len()];
    let mut tasks: Vec<TaskOutcome> = Vec::new();

    for task in 1..=seq.n_tasks() {
        let mut run_task = || -> Result<TaskOutcome> {
            let arch = arch_for_task(archs, task)?;
            generators.push(fit(task)?);
            let new_class = &seq.classes[task].train;
            let count = gc.pseudo_count.unwrap_or(new_class.len());
            let request = GenerationRequest::new(count)?;
            let mut mix = Vec::with_capacity(count * task + new_class.len());
            for (label, g) in generators[..task].iter().enumerate() {
                let stream = derive_seed(cfg.seed, &format!("generator/class{label}/task{task}"));
                mix.extend(g.generate_with_seed(request, stream)?);
                replay_counts[label] += count;
            }
            mix.extend(new_class.iter().cloned());

            let start = match tasks.last() {
                Some(prev) if cfg.warm_start && prev.architecture == *arch => Start::Warm(
                    prev.ensemble
                        .members
                        .iter()
                        .enumerate()
                        .map(|(m, model)| {
                            let (wide, _) = model
                                .extend_head(task + 1, member_seed(cfg.seed, task, m, "head"))?;
                            Ok((wide, None))
                        })
                        .collect::<Result<_>>()?,
                ),
                _ => Start::Fresh,
            };
            let fitted = fit_task_ensemble(seq, task, arch, &mix, None, start, cfg)?;
            outcome(seq, task, arch, &mix, fitted, Vec::new())
        };
        let out = run_task().map_err(|e| e.in_task(task))?;
        tasks.push(out);
    }

    let memory_footprint = generators.iter().map(ClassGenerator::memory_len).sum();
    Ok(ContinualRun {
        strategy: Strategy::Rcl,
        seed: cfg.seed,
        tasks,
        generators,
        replay_counts,
        memory_footprint,
    })
}

/// Fine-tuning: task 1 on raw {0, 1}; each later task widens the head and
/// trains on raw {0, i} only.
pub fn run_finetune(seq: &TaskSequence, arch: &Architecture, cfg: &RunConfig) -> Result<ContinualRun> {
    run_sequential(seq, arch, cfg, None)
}

/// Fine-tuning plus a diagonal-Fisher anchor on the previous task's
/// parameters. With `lambda = 0` this is exactly [`run_finetune`].
pub fn run_ewc(
    seq: &TaskSequence,
    arch: &Architecture,
    cfg: &RunConfig,
    lambda: f64,
) -> Result<ContinualRun> {
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("EWC lambda {lambda} must be >= 0")));
    }
    run_sequential(seq, arch, cfg, Some(lambda))
}

fn run_sequential(
    seq: &TaskSequence,
    arch: &Architecture,
    cfg: &RunConfig,
    ewc_lambda: Option<f64>,
) -> Result<ContinualRun> {
    cfg.validate()?;
    let strategy = if ewc_lambda.is_some() {
        Strategy::Ewc
    } else {
        Strategy::Finetune
    };
    let mut tasks: Vec<TaskOutcome> = Vec::new();
    // accumulated Fisher per member, laid out over that member's parameters
    let mut fisher: Vec<Vec<f64>> = Vec::new();

    for task in 1..=seq.n_tasks() {
        let run_task = |fisher: &mut Vec<Vec<f64>>| -> Result<TaskOutcome> {
            let labels: Vec<usize> = if task == 1 { vec![0, 1] } else { vec![0, task] };
            let samples = seq.raw_train(&labels);
            let (fitted, penalties) = match tasks.last() {
                None => (
                    fit_task_ensemble(seq, task, arch, &samples, None, Start::Fresh, cfg)?,
                    Vec::new(),
                ),
                Some(prev) => {
                    let mut starts = Vec::new();
                    let mut penalties = Vec::new();
                    for (m, model) in prev.ensemble.members.iter().enumerate() {
                        let (wide, map) =
                            model.extend_head(task + 1, member_seed(cfg.seed, task, m, "head"))?;
                        let penalty = match ewc_lambda {
                            Some(lambda) => {
                                let anchor = EWCPenalty::new(lambda, model.params.clone(), fisher[m].clone())?
                                    .remap(&map, &wide.params)?;
                                penalties.push(anchor.clone());
                                Some(anchor)
                            }
                            None => None,
                        };
                        starts.push((wide, penalty));
                    }
                    // the shared weights were learned in task 1's input space
                    let std = prev.ensemble.standardizer.clone();
                    (
                        fit_task_ensemble(seq, task, arch, &samples, Some(std), Start::Warm(starts), cfg)?,
                        penalties,
                    )
                }
            };
            if ewc_lambda.is_some() {
                let mut next = Vec::with_capacity(fitted.ensemble.members.len());
                for (m, model) in fitted.ensemble.members.iter().enumerate() {
                    let mut f = fisher_diagonal(model, &fitted.standardized, &fitted.labels)?;
                    if let Some(old) = fisher.get(m) {
                        // carry earlier tasks' importance onto the widened layout
                        let prev_model = &tasks.last().expect("fisher implies a previous task").ensemble.members[m];
                        let (_, map) = prev_model.extend_head(task + 1, 0)?;
                        for (i, &j) in map.iter().enumerate() {
                            f[j] += old[i];
                        }
                    }
                    next.push(f);
                }
                *fisher = next;
            }
            outcome(seq, task, arch, &samples, fitted, penalties)
        };
        let out = run_task(&mut fisher).map_err(|e| e.in_task(task))?;
        tasks.push(out);
    }

    Ok(ContinualRun {
        strategy,
        seed: cfg.seed,
        tasks,
        generators: Vec::new(),
        replay_counts: vec![0; seq.classes.len()],
        memory_footprint: seq.classes[0].train.len(),
    })
}

/// Joint training on raw data of every class seen so far, retrained from
/// scratch at each task.
pub fn run_baseline(seq: &TaskSequence, archs: &[Architecture], cfg: &RunConfig) -> Result<ContinualRun> {
    cfg.validate()?;
    let mut tasks = Vec::new();
    for task in 1..=seq.n_tasks() {
        let run_task = || -> Result<TaskOutcome> {
            let arch = arch_for_task(archs, task)?;
            let labels: Vec<usize> = (0..=task).collect();
            let samples = seq.raw_train(&labels);
            let fitted = fit_task_ensemble(seq, task, arch, &samples, None, Start::Fresh, cfg)?;
            outcome(seq, task, arch, &samples, fitted, Vec::new())
        };
        tasks.push(run_task().map_err(|e| e.in_task(task))?);
    }
    let seen = seq.classes[..seq.classes.len() - 1]
        .iter()
        .map(|c| c.train.len())
        .sum();
    Ok(ContinualRun {
        strategy: Strategy::Baseline,
        seed: cfg.seed,
        tasks,
        generators: Vec::new(),
        replay_counts: vec![0; seq.classes.len()],
        memory_footprint: seen,
    })
}

/// Run one strategy with the given per-task architectures.
pub fn run_strategy(
    seq: &TaskSequence,
    strategy: Strategy,
    archs: &[Architecture],
    cfg: &RunConfig,
) -> Result<ContinualRun> {
    let single = || -> Result<&Architecture> {
        let first = arch_for_task(archs, 1)?;
        if archs.iter().any(|a| a != first) {
            return Err(Error::Config(format!(
                "{strategy} keeps one network across tasks and cannot change architecture"
            )));
        }
        Ok(first)
    };
    match strategy {
        Strategy::Rcl => run_rcl(seq, archs, cfg),
        Strategy::Baseline => run_baseline(seq, archs, cfg),
        Strategy::Finetune => run_finetune(seq, single()?, cfg),
        Strategy::Ewc => run_ewc(seq, single()?, cfg, cfg.ewc_lambda),
    }
}

// ---------------------------------------------------------------------------
// Comparison

/// A strategy paired with the classifier architectures it uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Method {
    pub strategy: Strategy,
    /// Classifier variant name, e.g. "mlp" or "cnn".
    pub variant: String,
    pub archs: Vec<Architecture>,
}

impl Method {
    pub fn new(strategy: Strategy, variant: impl Into<String>, archs: Vec<Architecture>) -> Self {
        Self {
            strategy,
            variant: variant.into(),
            archs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonConfig {
    pub methods: Vec<Method>,
    /// `seed` is the master seed; repetition seeds derive from it.
    pub run: RunConfig,
    pub repetitions: usize,
    /// Explicit per-repetition seeds, overriding derivation.
    #[serde(default)]
    pub repetition_seeds: Option<Vec<u64>>,
}

impl ComparisonConfig {
    pub fn repetition_seed(&self, repetition: usize) -> u64 {
        match &self.repetition_seeds {
            Some(s) => s[repetition],
            None => derive_seed(self.run.seed, &format!("repetition/{repetition}")),
        }
    }

    /// Row labels: the strategy name, with the variant appended when any
    /// strategy appears with more than one variant.
    pub fn method_label(&self, method: &Method) -> String {
        let variants: BTreeSet<&str> = self.methods.iter().map(|m| m.variant.as_str()).collect();
        if variants.len() > 1 {
            format!("{} ({})", method.strategy, method.variant)
        } else {
            method.strategy.to_string()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.run.validate()?;
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no strategies selected".into()));
        }
        if let Some(s) = &self.repetition_seeds {
            if s.len() != self.repetitions {
                return Err(Error::Config(format!(
                    "{} repetition seeds for {} repetitions",
                    s.len(),
                    self.repetitions
                )));
            }
        }
        for m in &self.methods {
            if m.archs.is_empty() {
                return Err(Error::Config(format!("{}: no architecture", m.strategy)));
            }
            if m.strategy.reuses_network() && m.archs.iter().any(|a| *a != m.archs[0]) {
                return Err(Error::Config(format!(
                    "{} keeps one network across tasks and cannot change architecture",
                    m.strategy
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task: usize,
    pub metrics: MetricReport,
    pub member_metrics: Vec<MetricReport>,
}

/// Metrics of one (method, repetition) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: String,
    pub strategy: Strategy,
    pub variant: String,
    pub repetition: usize,
    pub seed: u64,
    pub tasks: Vec<TaskRecord>,
    pub replay_counts: Vec<usize>,
    pub memory_footprint: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub method: String,
    pub repetition: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub strategy: Strategy,
    pub variant: String,
    /// Across-repetition mean/std per task; `None` if every run failed.
    pub tasks: Vec<Option<MetricSummary>>,
    pub replay_counts: Vec<usize>,
    pub memory_footprint: usize,
    pub failed_repetitions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// Source class ids in label order.
    pub class_ids: Vec<usize>,
    pub n_tasks: usize,
    pub records: Vec<RunRecord>,
    pub summaries: Vec<MethodSummary>,
    pub failures: Vec<RunFailure>,
}

impl ComparisonReport {
    pub fn summary(&self, method: &str) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    pub fn records_of<'a>(&'a self, method: &'a str) -> impl Iterator<Item = &'a RunRecord> + 'a {
        self.records.iter().filter(move |r| r.method == method)
    }
}

fn record(method: &Method, label: &str, repetition: usize, run: &ContinualRun) -> RunRecord {
    RunRecord {
        method: label.to_string(),
        strategy: method.strategy,
        variant: method.variant.clone(),
        repetition,
        seed: run.seed,
        tasks: run
            .tasks
            .iter()
            .map(|t| TaskRecord {
                task: t.task,
                metrics: t.metrics.clone(),
                member_metrics: t.member_metrics.clone(),
            })
            .collect(),
        replay_counts: run.replay_counts.clone(),
        memory_footprint: run.memory_footprint,
    }
}

/// Run every method `repetitions` times, recording failures instead of
/// stopping, and summarize mean/std per method and task.
pub fn compare_strategies_partial(seq: &TaskSequence, cfg: &ComparisonConfig) -> Result<ComparisonReport> {
    cfg.validate()?;
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for repetition in 0..cfg.repetitions {
        let seed = cfg.repetition_seed(repetition);
        let run_cfg = RunConfig {
            seed,
            ..cfg.run.clone()
        };
        for method in &cfg.methods {
            let label = cfg.method_label(method);
            match run_strategy(seq, method.strategy, &method.archs, &run_cfg) {
                Ok(run) => records.push(record(method, &label, repetition, &run)),
                Err(e) => failures.push(RunFailure {
                    method: label,
                    repetition,
                    message: e.to_string(),
                }),
            }
        }
    }

    let mut summaries = Vec::new();
    for method in &cfg.methods {
        let label = cfg.method_label(method);
        let runs: Vec<&RunRecord> = records.iter().filter(|r| r.method == label).collect();
        let tasks = (0..seq.n_tasks())
            .map(|t| {
                let reports: Vec<MetricReport> = runs.iter().map(|r| r.tasks[t].metrics.clone()).collect();
                if reports.is_empty() {
                    Ok(None)
                } else {
                    aggregate(&reports).map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        summaries.push(MethodSummary {
            method: label.clone(),
            strategy: method.strategy,
            variant: method.variant.clone(),
            tasks,
            replay_counts: runs.first().map(|r| r.replay_counts.clone()).unwrap_or_default(),
            memory_footprint: runs.first().map(|r| r.memory_footprint).unwrap_or_default(),
            failed_repetitions: failures
                .iter()
                .filter(|f| f.method == label)
                .map(|f| f.repetition)
                .collect(),
        });
    }
    Ok(ComparisonReport {
        class_ids: seq.classes.iter().map(|c| c.class_id).collect(),
        n_tasks: seq.n_tasks(),
        records,
        summaries,
        failures,
    })
}

/// Like [`compare_strategies_partial`] but fails on the first failed run,
/// tagged with its strategy and repetition.
pub fn compare_strategies(seq: &TaskSequence, cfg: &ComparisonConfig) -> Result<ComparisonReport> {
    let report = compare_strategies_partial(seq, cfg)?;
    if let Some(f) = report.failures.first() {
        return Err(Error::Run {
            strategy: f.method.clone(),
            repetition: f.repetition,
            source: Box::new(Error::Config(f.message.clone())),
        });
    }
    Ok(report)
}
