use serde::{Deserialize, Serialize};

use super::config::{DataSource, ExperimentConfig, Variant};
use crate::dal;
use crate::data::{compose_batches, generate_shifted_gaussians, load_tabular, LabeledSet, Tabular};
use crate::error::{Error, Result};
use crate::losses::{combined_loss, LossConfig, LossValue};
use crate::net::{loss_logit_gradient, Network, Progress, Sgd};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_source: f64,
    pub l_target: f64,
    pub total: f64,
    pub target_accuracy: f64,
    /// Learning rate of the last step in the epoch.
    pub learning_rate: f64,
    /// Alpha per DA-layer at the end of the epoch.
    pub alphas: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaPoint {
    /// Number of optimizer steps taken; 0 is the initial value.
    pub iteration: usize,
    pub layer: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub target_accuracy: f64,
    pub source_accuracy: f64,
    pub alpha_trace: Vec<AlphaPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub variant: Variant,
    pub runs: Vec<SeedRecord>,
    pub target_accuracy: MeanStd,
    pub source_accuracy: MeanStd,
}

impl RunReport {
    pub fn from_runs(variant: Variant, runs: Vec<SeedRecord>) -> Self {
        let tgt: Vec<f64> = runs.iter().map(|r| r.target_accuracy).collect();
        let src: Vec<f64> = runs.iter().map(|r| r.source_accuracy).collect();
        Self {
            variant,
            target_accuracy: MeanStd::of(&tgt),
            source_accuracy: MeanStd::of(&src),
            runs,
        }
    }

    /// Checks value ranges and that the aggregates follow from the per-seed
    /// records.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Evaluation(msg));
        for r in &self.runs {
            let accs = r
                .epochs
                .iter()
                .map(|e| e.target_accuracy)
                .chain([r.target_accuracy, r.source_accuracy]);
            if accs.into_iter().any(|a| !(0.0..=1.0).contains(&a)) {
                return bad(format!("seed {}: accuracy outside [0, 1]", r.seed));
            }
            let alphas = r
                .alpha_trace
                .iter()
                .map(|p| p.alpha)
                .chain(r.epochs.iter().flat_map(|e| e.alphas.iter().copied()));
            if alphas.into_iter().any(|a| !(dal::ALPHA_MIN..=dal::ALPHA_MAX).contains(&a)) {
                return bad(format!("seed {}: alpha outside [0.5, 1]", r.seed));
            }
        }
        let again = Self::from_runs(self.variant, self.runs.clone());
        if again.target_accuracy != self.target_accuracy || again.source_accuracy != self.source_accuracy {
            return bad("aggregates do not match per-seed records".into());
        }
        Ok(())
    }
}

/// Passed to the step hook after every optimizer step.
#[derive(Debug, Clone, Copy)]
pub struct StepEvent<'a> {
    pub seed: u64,
    pub epoch: usize,
    /// Steps taken so far, counting this one.
    pub iteration: usize,
    pub learning_rate: f64,
    pub loss: LossValue,
    pub alphas: &'a [f64],
}

/// Per-step callback; returning an error aborts the run.
pub type StepHook<'h> = &'h (dyn Fn(&StepEvent<'_>) -> Result<()> + Sync);

pub fn no_hook(_: &StepEvent<'_>) -> Result<()> {
    Ok(())
}

/// A finished seed: its record and the frozen model.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub record: SeedRecord,
    pub model: Network,
}

/// Source set and labeled target set (target labels are for evaluation).
pub fn load_domains(cfg: &ExperimentConfig) -> Result<(LabeledSet, LabeledSet)> {
    match &cfg.data {
        DataSource::Synthetic(spec) => {
            let g = generate_shifted_gaussians(spec)?;
            Ok((g.source, g.target))
        }
        DataSource::Files { source, target } => {
            let labeled = |path| match load_tabular(path, true)? {
                Tabular::Labeled(s) => Ok(s),
                Tabular::Unlabeled(_) => unreachable!("labeled parse"),
            };
            let (s, t) = (labeled(source)?, labeled(target)?);
            if s.dim() != t.dim() {
                return Err(Error::Data(format!("source has {} features, target {}", s.dim(), t.dim())));
            }
            let classes = s.classes.max(t.classes);
            Ok((
                LabeledSet::new(s.features, s.labels, classes)?,
                LabeledSet::new(t.features, t.labels, classes)?,
            ))
        }
    }
}

/// A frozen copy of `net`. DA-layers that have never seen a training batch
/// first take their moving statistics from one full pass over both sets.
pub fn frozen_copy(net: &Network, source: &Tensor, target: &Tensor) -> Result<Network> {
    let mut n = net.clone();
    if n.da_layers().any(|st| st.updates == 0) {
        let saved: Vec<f64> = n.da_layers().map(|st| st.momentum).collect();
        n.da_layers_mut().for_each(|st| st.momentum = 1.0);
        n.forward(&source.concat_batch(target)?, source.batch())?;
        n.da_layers_mut().zip(saved).for_each(|(st, m)| st.momentum = m);
    }
    n.freeze()?;
    Ok(n)
}

/// Fraction of rows whose argmax prediction equals the label. `source`
/// selects which DA path the rows take.
pub fn accuracy(frozen: &Network, set: &LabeledSet, source: bool) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Data("accuracy over an empty set".into()));
    }
    let n_source = if source { set.len() } else { 0 };
    let probs = frozen.predict(&set.features, n_source)?;
    let hits = set
        .labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| argmax(probs.row(i)) == y)
        .count();
    Ok(hits as f64 / set.len() as f64)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

fn trace_points(iteration: usize, alphas: &[f64]) -> impl Iterator<Item = AlphaPoint> + '_ {
    alphas
        .iter()
        .enumerate()
        .map(move |(layer, &alpha)| AlphaPoint { iteration, layer, alpha })
}

/// Trains one seed on `source` plus the unlabeled view of `target`, then
/// evaluates the frozen model on both sets.
pub fn train_seed(
    cfg: &ExperimentConfig,
    seed: u64,
    source: &LabeledSet,
    target: &LabeledSet,
    hook: StepHook<'_>,
) -> Result<TrainedRun> {
    cfg.check()?;
    let classes = source.classes.max(target.classes);
    let mut net = Network::mlp(source.dim(), &cfg.network.hidden, classes, cfg.network.da_options(), seed)?;
    let target_u = target.unlabeled();
    let sizes = cfg.batch.sizes(source.len(), target_u.len())?;
    let total_iters = cfg.epochs * source.len().div_ceil(sizes.n_source);
    let loss_cfg = LossConfig {
        lambda: cfg.lambda,
        class_count: classes,
    };
    let mut sgd = Sgd::new(cfg.optimizer);

    let mut alpha_trace: Vec<AlphaPoint> = trace_points(0, &net.alphas()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut iteration = 0;
    for epoch in 0..cfg.epochs {
        let mut sum = LossValue::default();
        let mut batches = 0;
        let mut lr = sgd.learning_rate(Progress { epoch, fraction: 0.0 });
        for batch in compose_batches(source, &target_u, sizes, seed, epoch)? {
            let progress = Progress {
                epoch,
                fraction: iteration as f64 / total_iters as f64,
            };
            let trace = net.forward(&batch.features, batch.n_source)?;
            let (loss, _) = combined_loss(&trace.probs, batch.n_source, &batch.source_labels, &loss_cfg)?;
            if !loss.total.is_finite() {
                return Err(Error::NonFinite("training loss"));
            }
            let d_logits = loss_logit_gradient(&trace.probs, batch.n_source, &batch.source_labels, &loss_cfg)?;
            let grads = net.backward(&trace, &d_logits)?;
            lr = sgd.step(&mut net, &grads, progress)?;
            iteration += 1;

            let alphas = net.alphas();
            alpha_trace.extend(trace_points(iteration, &alphas));
            hook(&StepEvent {
                seed,
                epoch,
                iteration,
                learning_rate: lr,
                loss,
                alphas: &alphas,
            })?;
            sum.l_source += loss.l_source;
            sum.l_target += loss.l_target;
            sum.total += loss.total;
            batches += 1;
        }
        let frozen = frozen_copy(&net, &source.features, &target.features)?;
        let b = batches.max(1) as f64;
        epochs.push(EpochRecord {
            epoch,
            l_source: sum.l_source / b,
            l_target: sum.l_target / b,
            total: sum.total / b,
            target_accuracy: accuracy(&frozen, target, false)?,
            learning_rate: lr,
            alphas: net.alphas(),
        });
    }

    let model = frozen_copy(&net, &source.features, &target.features)?;
    Ok(TrainedRun {
        record: SeedRecord {
            seed,
            epochs,
            target_accuracy: accuracy(&model, target, false)?,
            source_accuracy: accuracy(&model, source, true)?,
            alpha_trace,
        },
        model,
    })
}

/// Trains every seed, one thread per seed, and returns the runs in seed
/// order.
pub fn train_all(
    cfg: &ExperimentConfig,
    source: &LabeledSet,
    target: &LabeledSet,
    hook: StepHook<'_>,
) -> Result<Vec<TrainedRun>> {
    cfg.check()?;
    std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .seeds
            .iter()
            .map(|&seed| scope.spawn(move || train_seed(cfg, seed, source, target, hook)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|p| std::panic::resume_unwind(p)))
            .collect()
    })
}

/// Full protocol for one config: build the data, train each seed, freeze,
/// evaluate on the whole target set and aggregate.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    run_experiment_with(cfg, &no_hook).map(|(report, _)| report)
}

pub fn run_experiment_with(cfg: &ExperimentConfig, hook: StepHook<'_>) -> Result<(RunReport, Vec<Network>)> {
    cfg.check()?;
    let (source, target) = load_domains(cfg)?;
    let runs = train_all(cfg, &source, &target, hook)?;
    let (records, models): (Vec<_>, Vec<_>) = runs.into_iter().map(|r| (r.record, r.model)).unzip();
    Ok((RunReport::from_runs(cfg.variant, records), models))
}
