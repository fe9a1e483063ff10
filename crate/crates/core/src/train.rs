//! Training and evaluation drivers: stratified k-fold and holdout protocols.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::csp::accuracy;
use crate::error::{Error, Result};
use crate::graph::{gen_adjacency, row_normalize, GraphDirections, KernelWidth, LatticeVector, TfGraph};
use crate::network::{
    aggregate, commit_batch_statistics, head_and_loss, loss_and_gradients, model_forward, Batch, Mode, ModelConfig,
    ModelParams,
};
use crate::optim::{AdamConfig, RiemannianAdam};
use crate::signal::{build_tf_stack, CovarianceOptions, EpochDataset, SegmentationPlan, TfStack};
use crate::spd::random::rng_from_seed;

/// A preset plan name or an inline plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PlanSpec {
    Named(String),
    Inline(SegmentationPlan),
}

impl PlanSpec {
    pub fn resolve(&self) -> Result<SegmentationPlan> {
        match self {
            PlanSpec::Named(n) => SegmentationPlan::by_name(n),
            PlanSpec::Inline(p) => {
                p.validate()?;
                Ok(p.clone())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Evaluation {
    Kfold { k: usize },
    /// Trial indices from a JSON file `{"train": [...], "test": [...]}`.
    Holdout { split: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoldoutSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl HoldoutSplit {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn validate(&self, n_trials: usize) -> Result<()> {
        if self.train.is_empty() || self.test.is_empty() {
            return Err(Error::Config("holdout split needs training and test trials".into()));
        }
        let mut seen = vec![false; n_trials];
        for &t in self.train.iter().chain(&self.test) {
            if t >= n_trials {
                return Err(Error::Config(format!("split index {t} out of range ({n_trials} trials)")));
            }
            if std::mem::replace(&mut seen[t], true) {
                return Err(Error::Config(format!("trial {t} appears twice in the split")));
            }
        }
        Ok(())
    }
}

fn default_plan() -> PlanSpec {
    PlanSpec::Named("synthetic".into())
}
fn default_directions() -> GraphDirections {
    GraphDirections::new([1, 1, 1, 2], [1, 1, 1, 1])
}
fn default_eps() -> f64 {
    1e-6
}
fn default_momentum() -> f64 {
    0.9
}
fn default_epochs() -> usize {
    50
}
fn default_batch() -> usize {
    32
}
fn default_eval() -> Evaluation {
    Evaluation::Kfold { k: 10 }
}

/// Training configuration, read from JSON; every field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_plan")]
    pub plan: PlanSpec,
    #[serde(default = "default_directions")]
    pub directions: GraphDirections,
    #[serde(default)]
    pub kernel_width: KernelWidth,
    /// `(o₁, o₂, o₃)`; `o₁` must equal the channel count. Defaults to `(n_C, n_C, ⌈n_C/2⌉)`.
    #[serde(default)]
    pub dims: Option<Vec<usize>>,
    #[serde(default = "default_eps")]
    pub reeig_eps: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub rbn_every_layer: bool,
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_eval")]
    pub evaluation: Evaluation,
    #[serde(default)]
    pub covariance: CovarianceOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl TrainConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.plan.resolve()?;
        self.optimizer.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.covariance.shrinkage >= 0.0) {
            return Err(Error::Config("covariance shrinkage must be >= 0".into()));
        }
        if let KernelWidth::Fixed(t) = self.kernel_width {
            if !(t > 0.0) {
                return Err(Error::Config(format!("kernel width {t} must be > 0")));
            }
        }
        if let Evaluation::Kfold { k } = self.evaluation {
            if k < 2 {
                return Err(Error::Config(format!("k-fold needs k >= 2, got {k}")));
            }
        }
        Ok(())
    }

    pub fn model_config(&self, n_nodes: usize, n_channels: usize, n_classes: usize) -> Result<ModelConfig> {
        let dims = self
            .dims
            .clone()
            .unwrap_or_else(|| vec![n_channels, n_channels, n_channels.div_ceil(2)]);
        if dims.first() != Some(&n_channels) {
            return Err(Error::Config(format!(
                "first model dimension must equal the channel count {n_channels}, got {dims:?}"
            )));
        }
        let cfg = ModelConfig {
            n_nodes,
            dims,
            n_classes,
            reeig_eps: self.reeig_eps,
            momentum: self.momentum,
            rbn_every_layer: self.rbn_every_layer,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Class-balanced partition into `k` folds; each trial lands in exactly one fold.
pub fn stratified_folds(labels: &[u32], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > labels.len() {
        return Err(Error::Config(format!("cannot split {} trials into {k} folds", labels.len())));
    }
    let mut rng = rng_from_seed(seed);
    let n_classes = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for c in 0..n_classes as u32 {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&t| labels[t] == c).collect();
        idx.shuffle(&mut rng);
        for t in idx {
            folds[next % k].push(t);
            next += 1;
        }
    }
    for f in folds.iter_mut() {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Graph built from the training trials only.
pub fn fold_graph(stack: &TfStack, train: &[usize], directions: &GraphDirections, width: KernelWidth) -> Result<TfGraph> {
    let lattice = LatticeVector::from_trials(stack, train)?;
    gen_adjacency(&lattice, directions, width)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub max_stiefel_drift: f64,
    pub min_bias_eigenvalue: f64,
    pub min_reeig_eigenvalue: f64,
}

/// Parameters together with the fixed preprocessing they were trained under.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub plan: SegmentationPlan,
    pub covariance: CovarianceOptions,
    pub propagation: DMatrix<f64>,
    pub params: ModelParams,
}

impl TrainedModel {
    pub fn predict(&self, dataset: &EpochDataset) -> Result<(Vec<u32>, f64)> {
        let stack = build_tf_stack(dataset, &self.plan, &self.covariance)?;
        let all: Vec<usize> = (0..stack.n_trials()).collect();
        let inputs = aggregated_inputs(&stack, &self.propagation, &all)?;
        let (logits, cache) = model_forward(&inputs, None, &self.params, Mode::Eval)?;
        let (_, loss, _) = head_and_loss(&cache.features, &self.params.head, &stack.labels)?;
        Ok((argmax_rows(&logits), loss))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub edge_count: usize,
    pub kernel_width: f64,
    pub initial_loss: f64,
    pub final_train_loss: f64,
    pub test_accuracy: f64,
    pub metrics: Vec<EpochMetrics>,
    pub steps: Vec<StepRecord>,
    #[serde(skip)]
    pub model: Option<TrainedModel>,
}

impl FoldResult {
    pub fn max_stiefel_drift(&self) -> f64 {
        self.steps.iter().map(|s| s.max_stiefel_drift).fold(0.0, f64::max)
    }

    pub fn min_bias_eigenvalue(&self) -> f64 {
        self.steps.iter().map(|s| s.min_bias_eigenvalue).fold(f64::INFINITY, f64::min)
    }

    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("epoch,split,loss,accuracy\n");
        for m in &self.metrics {
            out.push_str(&format!("{},{},{:.12e},{:.6}\n", m.epoch, m.split, m.loss, m.accuracy));
        }
        out
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub n_trials: usize,
    pub n_channels: usize,
    pub n_nodes: usize,
    pub param_count: usize,
    pub folds: Vec<FoldResult>,
    pub mean_test_accuracy: f64,
}

impl TrainReport {
    /// JSON summary without per-step records.
    pub fn summary_json(&self) -> Result<String> {
        let folds: Vec<serde_json::Value> = self
            .folds
            .iter()
            .map(|f| {
                serde_json::json!({
                    "fold": f.fold,
                    "n_train": f.n_train,
                    "n_test": f.n_test,
                    "edge_count": f.edge_count,
                    "kernel_width": f.kernel_width,
                    "initial_loss": f.initial_loss,
                    "final_train_loss": f.final_train_loss,
                    "test_accuracy": f.test_accuracy,
                    "max_stiefel_drift": f.max_stiefel_drift(),
                    "min_bias_eigenvalue": f.min_bias_eigenvalue(),
                })
            })
            .collect();
        Ok(serde_json::to_string_pretty(&serde_json::json!({
            "config": self.config,
            "n_trials": self.n_trials,
            "n_channels": self.n_channels,
            "n_nodes": self.n_nodes,
            "param_count": self.param_count,
            "mean_test_accuracy": self.mean_test_accuracy,
            "folds": folds,
        }))?)
    }

    /// Writes `summary.json`, `metrics_fold{i}.csv` and `model_fold{i}.json` into `dir`.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("summary.json"), self.summary_json()?)?;
        for f in &self.folds {
            std::fs::write(dir.join(format!("metrics_fold{}.csv", f.fold)), f.metrics_csv())?;
            if let Some(m) = &f.model {
                std::fs::write(dir.join(format!("model_fold{}.json", f.fold)), serde_json::to_string(m)?)?;
            }
        }
        Ok(())
    }
}

fn argmax_rows(logits: &DMatrix<f64>) -> Vec<u32> {
    logits.row_iter().map(|r| r.transpose().argmax().0 as u32).collect()
}

fn aggregated_inputs(stack: &TfStack, p: &DMatrix<f64>, trials: &[usize]) -> Result<Batch> {
    trials
        .iter()
        .map(|&t| {
            let raw: Vec<DMatrix<f64>> = stack.matrices[t].iter().map(|m| m.as_matrix().clone()).collect();
            aggregate(p, &raw)
        })
        .collect()
}

/// Trains one split and evaluates it on the held-out trials.
pub fn train_split(
    config: &TrainConfig,
    stack: &TfStack,
    plan: &SegmentationPlan,
    train: &[usize],
    test: &[usize],
    fold: usize,
) -> Result<FoldResult> {
    let n_classes = stack.labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let graph = fold_graph(stack, train, &config.directions, config.kernel_width)?;
    let p = row_normalize(&graph.adjacency);
    let train_in = aggregated_inputs(stack, &p, train)?;
    let test_in = aggregated_inputs(stack, &p, test)?;
    let train_labels: Vec<u32> = train.iter().map(|&t| stack.labels[t]).collect();
    let test_labels: Vec<u32> = test.iter().map(|&t| stack.labels[t]).collect();

    let seed = config.seed.wrapping_mul(1_000_003).wrapping_add(fold as u64);
    let mut rng = rng_from_seed(seed);
    let model_cfg = config.model_config(stack.n_nodes(), stack.dim(), n_classes)?;
    let mut params = ModelParams::init(model_cfg, &mut rng)?;
    let mut opt = RiemannianAdam::new(config.optimizer, &params)?;

    let (_, cache) = model_forward(&train_in, None, &params, Mode::Train)?;
    let (_, initial_loss, _) = head_and_loss(&cache.features, &params.head, &train_labels)?;
    let mut metrics = vec![EpochMetrics {
        epoch: 0,
        split: "train".into(),
        loss: initial_loss,
        accuracy: accuracy(&argmax_rows(&(&cache.features * params.head.transpose())), &train_labels),
    }];
    let mut steps = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut final_train_loss = initial_loss;
    let mut test_accuracy = 0.0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut hits, mut seen) = (0.0, 0usize, 0usize);
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Batch = chunk.iter().map(|&i| train_in[i].clone()).collect();
            let labels: Vec<u32> = chunk.iter().map(|&i| train_labels[i]).collect();
            let (loss, logits, grads, cache) = loss_and_gradients(&batch, None, &labels, &params, Mode::Train)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            if cache.min_reeig_eigenvalue < params.config.reeig_eps {
                return Err(Error::NumericalBreakdown(format!(
                    "ReEig output eigenvalue {:e} below threshold",
                    cache.min_reeig_eigenvalue
                )));
            }
            opt.step(&mut params, &grads)?;
            commit_batch_statistics(&mut params, &cache)?;
            loss_sum += loss * chunk.len() as f64;
            hits += argmax_rows(&logits).iter().zip(&labels).filter(|(a, b)| a == b).count();
            seen += chunk.len();
            steps.push(StepRecord {
                epoch,
                step,
                loss,
                max_stiefel_drift: params.max_stiefel_drift(),
                min_bias_eigenvalue: params.min_bias_eigenvalue(),
                min_reeig_eigenvalue: cache.min_reeig_eigenvalue,
            });
        }
        final_train_loss = loss_sum / seen as f64;
        metrics.push(EpochMetrics {
            epoch,
            split: "train".into(),
            loss: final_train_loss,
            accuracy: hits as f64 / seen as f64,
        });
        let (logits, cache) = model_forward(&test_in, None, &params, Mode::Eval)?;
        let (_, test_loss, _) = head_and_loss(&cache.features, &params.head, &test_labels)?;
        test_accuracy = accuracy(&argmax_rows(&logits), &test_labels);
        metrics.push(EpochMetrics {
            epoch,
            split: "test".into(),
            loss: test_loss,
            accuracy: test_accuracy,
        });
    }

    Ok(FoldResult {
        fold,
        n_train: train.len(),
        n_test: test.len(),
        edge_count: graph.edge_count(),
        kernel_width: graph.kernel_width,
        initial_loss,
        final_train_loss,
        test_accuracy,
        metrics,
        steps,
        model: Some(TrainedModel {
            plan: plan.clone(),
            covariance: config.covariance,
            propagation: p,
            params,
        }),
    })
}

/// Builds the time-frequency stack and runs the configured protocol.
pub fn run_train(config: &TrainConfig, dataset: &EpochDataset) -> Result<TrainReport> {
    config.validate()?;
    let plan = config.plan.resolve()?;
    let stack = build_tf_stack(dataset, &plan, &config.covariance)?;
    let splits: Vec<(Vec<usize>, Vec<usize>)> = match &config.evaluation {
        Evaluation::Kfold { k } => {
            let folds = stratified_folds(&dataset.labels, *k, config.seed)?;
            (0..*k)
                .map(|i| {
                    let train = folds.iter().enumerate().filter(|&(j, _)| j != i).flat_map(|(_, f)| f.clone()).collect();
                    (train, folds[i].clone())
                })
                .collect()
        }
        Evaluation::Holdout { split } => {
            let s = HoldoutSplit::load(split)?;
            s.validate(dataset.n_trials)?;
            vec![(s.train, s.test)]
        }
    };
    let folds = splits
        .iter()
        .enumerate()
        .map(|(i, (train, test))| train_split(config, &stack, &plan, train, test, i))
        .collect::<Result<Vec<_>>>()?;
    let mean_test_accuracy = folds.iter().map(|f| f.test_accuracy).sum::<f64>() / folds.len() as f64;
    let param_count = folds
        .first()
        .and_then(|f| f.model.as_ref())
        .map(|m| m.params.param_count())
        .unwrap_or(0);
    Ok(TrainReport {
        config: config.clone(),
        n_trials: dataset.n_trials,
        n_channels: dataset.n_channels,
        n_nodes: stack.n_nodes(),
        param_count,
        folds,
        mean_test_accuracy,
    })
}
