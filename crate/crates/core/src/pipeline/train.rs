//! Minibatch training with Adam and early stopping on validation loss.
//!
//! Graphs are processed one at a time (no block-diagonal batching). The
//! per-graph gradients of a minibatch are computed in parallel, then summed
//! in dataset order so results do not depend on thread scheduling.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::dataset::{Dataset, Split};
use super::metrics::{metrics, Metrics};
use super::model::{build_model, Architecture, Model, ModelConfig, ModelError};
use crate::nn::ParamStore;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss or gradient on graph {graph} at epoch {epoch} (learning rate {learning_rate})")]
    NonFinite { graph: usize, epoch: usize, learning_rate: f64 },
    #[error("training split is empty")]
    EmptyTrainSplit,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub architecture: Architecture,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::default(),
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            epochs: 40,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("beta1 and beta2 must lie in [0, 1)");
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return fail("epsilon must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if self.epochs > 0 && (self.patience == 0 || self.patience > self.epochs) {
            return fail("patience must lie in 1..=epochs");
        }
        Ok(())
    }

    /// Model configuration for `dataset` under this architecture.
    pub fn model_config(&self, dataset: &Dataset) -> ModelConfig {
        let edge_types = dataset
            .graphs
            .first()
            .and_then(|g| g.edge_types())
            .map_or(0, <[_]>::len);
        ModelConfig {
            architecture: self.architecture.clone(),
            input_dim: dataset.feature_dim(),
            num_labels: dataset.num_labels(),
            edge_types,
            seed: self.seed,
        }
    }
}

/// Bias-corrected Adam.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    m: ParamStore,
    v: ParamStore,
}

impl Adam {
    pub fn new(learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self { learning_rate, beta1, beta2, epsilon, step: 0, m: ParamStore::new(), v: ParamStore::new() }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamStore) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (name, g) in grads.iter() {
            let Some(p) = params.get_mut(name) else { continue };
            if self.m.get(name).is_none() {
                self.m.insert(name.clone(), g.mapv(|_| 0.0));
                self.v.insert(name.clone(), g.mapv(|_| 0.0));
            }
            let m = self.m.get_mut(name).expect("moment exists");
            m.zip_mut_with(g, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            let v = self.v.get_mut(name).expect("moment exists");
            v.zip_mut_with(g, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            let (m, v) = (&self.m.get(name).unwrap(), &self.v.get(name).unwrap());
            ndarray::Zip::from(p).and(*m).and(*v).for_each(|p, &m, &v| {
                *p -= self.learning_rate * (m / c1) / ((v / c2).sqrt() + self.epsilon);
            });
        }
    }
}

/// Loss and metrics of a model on a set of graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub graphs: usize,
    /// Mean per-graph loss.
    pub loss: f64,
    pub metrics: Metrics,
}

/// Evaluates `model` on `dataset.graphs[indices]`. Metrics are computed over
/// all (graph, label) decisions.
pub fn evaluate(model: &Model, dataset: &Dataset, indices: &[usize]) -> Result<Evaluation> {
    let per_graph: Vec<(f64, Vec<f64>, Vec<bool>)> = indices
        .par_iter()
        .map(|&i| {
            let g = &dataset.graphs[i];
            let loss = model.loss(g)?;
            let scores = model.predict(g)?.to_vec();
            let labels = model.targets(g)?.iter().map(|&t| t == 1.0).collect();
            Ok((loss, scores, labels))
        })
        .collect::<std::result::Result<_, ModelError>>()?;
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let mut loss = 0.0;
    for (l, s, y) in per_graph {
        loss += l;
        scores.extend(s);
        labels.extend(y);
    }
    let n = indices.len();
    Ok(Evaluation {
        graphs: n,
        loss: if n == 0 { 0.0 } else { loss / n as f64 },
        metrics: metrics(&scores, &labels),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub micro_f1: f64,
    pub roc_auc: Option<f64>,
    pub pr_auc: Option<f64>,
}

impl EpochRecord {
    fn new(epoch: usize, split: Split, e: &Evaluation) -> Self {
        Self {
            epoch,
            split,
            loss: e.loss,
            micro_f1: e.metrics.micro_f1,
            roc_auc: e.metrics.roc_auc,
            pr_auc: e.metrics.pr_auc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// Epoch whose parameters were kept (0 = initialization).
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub parameter_count: usize,
    /// Train and valid records after every epoch, epoch 0 first.
    pub history: Vec<EpochRecord>,
    /// Evaluation of the kept parameters on each non-empty split.
    pub final_metrics: BTreeMap<String, Evaluation>,
}

impl TrainReport {
    /// `epoch,split,loss,f1,roc_auc,pr_auc`, empty cells for undefined AUCs.
    pub fn history_csv(&self) -> Result<String> {
        records_csv(&self.history)
    }
}

pub fn records_csv(records: &[EpochRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "split", "loss", "f1", "roc_auc", "pr_auc"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        w.write_record([
            r.epoch.to_string(),
            r.split.name().to_string(),
            r.loss.to_string(),
            r.micro_f1.to_string(),
            opt(r.roc_auc),
            opt(r.pr_auc),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| TrainError::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// `split,graphs,loss,f1,roc_auc,pr_auc,accuracy`, one row per split in
/// key order, empty cells for undefined AUCs.
pub fn metrics_csv(evaluations: &BTreeMap<String, Evaluation>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["split", "graphs", "loss", "f1", "roc_auc", "pr_auc", "accuracy"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (split, e) in evaluations {
        w.write_record([
            split.clone(),
            e.graphs.to_string(),
            e.loss.to_string(),
            e.metrics.micro_f1.to_string(),
            opt(e.metrics.roc_auc),
            opt(e.metrics.pr_auc),
            e.metrics.accuracy.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| TrainError::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Evaluates every non-empty split.
pub fn evaluate_splits(model: &Model, dataset: &Dataset) -> Result<BTreeMap<String, Evaluation>> {
    let mut out = BTreeMap::new();
    for split in [Split::Train, Split::Valid, Split::Test] {
        let idx = dataset.indices(split);
        if !idx.is_empty() {
            out.insert(split.name().to_string(), evaluate(model, dataset, &idx)?);
        }
    }
    Ok(out)
}

/// Builds a fresh model for `dataset` and trains it.
pub fn train_new(dataset: &Dataset, config: &TrainConfig) -> Result<(Model, TrainReport)> {
    config.validate()?;
    let model = build_model(config.model_config(dataset))?;
    train(model, dataset, config)
}

/// Trains `model` on the train split, keeping the parameters with the
/// lowest validation loss (train loss when there is no validation split).
pub fn train(mut model: Model, dataset: &Dataset, config: &TrainConfig) -> Result<(Model, TrainReport)> {
    config.validate()?;
    let train_idx = dataset.indices(Split::Train);
    if train_idx.is_empty() {
        return Err(TrainError::EmptyTrainSplit);
    }
    let valid_idx = dataset.indices(Split::Valid);

    let mut history = Vec::new();
    let record = |epoch: usize, model: &Model, history: &mut Vec<EpochRecord>| -> Result<f64> {
        let t = evaluate(model, dataset, &train_idx)?;
        history.push(EpochRecord::new(epoch, Split::Train, &t));
        if valid_idx.is_empty() {
            return Ok(t.loss);
        }
        let v = evaluate(model, dataset, &valid_idx)?;
        history.push(EpochRecord::new(epoch, Split::Valid, &v));
        Ok(v.loss)
    };

    let mut best_loss = record(0, &model, &mut history)?;
    let mut best = (0, model.params.clone());
    let mut adam = Adam::new(config.learning_rate, config.beta1, config.beta2, config.epsilon);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order = train_idx.clone();
    let mut epochs_run = 0;
    let mut stopped_early = false;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let results: Vec<_> = batch
                .par_iter()
                .map(|&i| (i, model.loss_and_grad(&dataset.graphs[i])))
                .collect();
            let mut total: Option<ParamStore> = None;
            for (i, r) in results {
                let (loss, grads) = r?;
                let finite = loss.is_finite() && grads.iter().all(|(_, g)| g.iter().all(|v| v.is_finite()));
                if !finite {
                    return Err(TrainError::NonFinite { graph: i, epoch, learning_rate: config.learning_rate });
                }
                match total.as_mut() {
                    None => total = Some(grads),
                    Some(t) => {
                        for (name, g) in grads.iter() {
                            *t.get_mut(name).expect("same parameter set") += g;
                        }
                    }
                }
            }
            let mut total = total.expect("chunks are non-empty");
            let scale = 1.0 / batch.len() as f64;
            for name in total.names() {
                total.get_mut(&name).unwrap().mapv_inplace(|v| v * scale);
            }
            adam.step(&mut model.params, &total);
        }
        epochs_run = epoch;
        let loss = record(epoch, &model, &mut history)?;
        log::debug!("epoch {epoch}: monitored loss {loss:.6}");
        if loss < best_loss {
            best_loss = loss;
            best = (epoch, model.params.clone());
        } else if epoch - best.0 >= config.patience {
            stopped_early = true;
            break;
        }
    }

    model.params = best.1;
    let report = TrainReport {
        epochs_run,
        best_epoch: best.0,
        stopped_early,
        parameter_count: model.parameter_count(),
        history,
        final_metrics: evaluate_splits(&model, dataset)?,
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lapool::{PoolConfig, Selection};
    use crate::pipeline::dataset::MotifTask;

    fn small_arch(pooling: Option<PoolConfig>) -> Architecture {
        Architecture { pooling, pre_pool: vec![16, 16], post_pool: vec![8, 8], readout: 16, hidden: 16, ..Architecture::default() }
    }

    fn single_graph(seed: u64) -> Dataset {
        let task = MotifTask { plant_rate: 0.5, seed, ..MotifTask::default() };
        let mut ds = Dataset::generate(&task, 1).unwrap();
        ds.splits = vec![Split::Train];
        ds
    }

    fn train_losses(report: &TrainReport) -> Vec<f64> {
        report.history.iter().filter(|r| r.split == Split::Train).map(|r| r.loss).collect()
    }

    #[test]
    fn adam_matches_hand_computed_first_steps() {
        let mut p = ParamStore::new();
        p.insert("w", ndarray::array![[1.0]]);
        let mut g = ParamStore::new();
        g.insert("w", ndarray::array![[0.5]]);
        let mut adam = Adam::new(0.1, 0.9, 0.999, 1e-8);
        adam.step(&mut p, &g);
        // first bias-corrected step has size lr * g / (|g| + eps)
        assert!((p.get("w").unwrap()[[0, 0]] - (1.0 - 0.1 * 0.5 / (0.5 + 1e-8))).abs() < 1e-15);
        g.insert("w", ndarray::array![[-1.0]]);
        adam.step(&mut p, &g);
        let m = (0.9 * 0.05 - 0.1) / (1.0 - 0.81);
        let v = (0.999 * 0.001 * 0.25 + 0.001 * 1.0) / (1.0 - 0.999f64.powi(2));
        let expected = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8) - 0.1 * m / (v.sqrt() + 1e-8);
        assert!((p.get("w").unwrap()[[0, 0]] - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_epochs_echo_initial_metrics() {
        let ds = Dataset::generate(&MotifTask::default(), 20).unwrap();
        let config = TrainConfig { epochs: 0, patience: 0, architecture: small_arch(None), ..TrainConfig::default() };
        let (model, report) = train_new(&ds, &config).unwrap();
        assert_eq!(report.epochs_run, 0);
        assert_eq!(report.best_epoch, 0);
        let fresh = build_model(config.model_config(&ds)).unwrap();
        assert_eq!(model, fresh);
        assert_eq!(report.final_metrics, evaluate_splits(&fresh, &ds).unwrap());
        let initial = &report.history[0];
        assert_eq!(initial.loss, report.final_metrics["train"].loss);
    }

    #[test]
    fn memorizes_a_single_graph() {
        let variants = [
            None,
            Some(PoolConfig::default()),
            Some(PoolConfig { selection: Selection::TopK { k: 3 }, ..PoolConfig::default() }),
        ];
        for seed in 0..4 {
            for pooling in variants {
                let ds = single_graph(seed);
                let config = TrainConfig {
                    architecture: Architecture { pooling, ..Architecture::default() },
                    epochs: 200,
                    patience: 200,
                    batch_size: 1,
                    ..TrainConfig::default()
                };
                let (_, report) = train_new(&ds, &config).unwrap();
                let losses = train_losses(&report);
                assert!(losses[10] < losses[0], "seed {seed} {pooling:?}: {:?}", &losses[..=10]);
                let last = report.final_metrics["train"].loss;
                assert!(last < 1e-2, "seed {seed} {pooling:?}: final loss {last}");
            }
        }
    }

    #[test]
    fn reruns_are_bitwise_identical() {
        let ds = Dataset::generate(&MotifTask { seed: 2, ..MotifTask::default() }, 40).unwrap();
        let config = TrainConfig { epochs: 3, patience: 3, architecture: small_arch(Some(PoolConfig::default())), ..TrainConfig::default() };
        let (m1, r1) = train_new(&ds, &config).unwrap();
        let (m2, r2) = train_new(&ds, &config).unwrap();
        assert_eq!(r1.history_csv().unwrap(), r2.history_csv().unwrap());
        assert_eq!(serde_json::to_string(&r1).unwrap(), serde_json::to_string(&r2).unwrap());
        assert_eq!(m1, m2);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = TrainConfig { patience: 50, epochs: 10, ..TrainConfig::default() };
        assert!(matches!(bad.validate(), Err(TrainError::Config(_))));
        let bad = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(matches!(bad.validate(), Err(TrainError::Config(_))));
    }

    #[test]
    fn non_finite_loss_aborts_with_graph_id() {
        let mut ds = Dataset::generate(&MotifTask::default(), 10).unwrap();
        let victim = ds.indices(Split::Train)[0];
        let g = &ds.graphs[victim];
        let mut x = g.node_features().clone();
        x[[0, 0]] = f64::NAN;
        let mut broken = g.with_features(x).unwrap();
        broken.labels = g.labels.clone();
        ds.graphs[victim] = broken;
        let config = TrainConfig { epochs: 1, patience: 1, architecture: small_arch(None), ..TrainConfig::default() };
        match train_new(&ds, &config) {
            Err(TrainError::NonFinite { graph, .. }) => assert_eq!(graph, victim),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn csv_has_header_and_rows() {
        let ds = Dataset::generate(&MotifTask::default(), 20).unwrap();
        let config = TrainConfig { epochs: 1, patience: 1, architecture: small_arch(None), ..TrainConfig::default() };
        let (_, report) = train_new(&ds, &config).unwrap();
        let csv = report.history_csv().unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "epoch,split,loss,f1,roc_auc,pr_auc");
        assert_eq!(lines.len(), 1 + report.history.len());
        let summary = metrics_csv(&report.final_metrics).unwrap();
        let rows: Vec<&str> = summary.lines().collect();
        assert_eq!(rows[0], "split,graphs,loss,f1,roc_auc,pr_auc,accuracy");
        assert_eq!(rows.len(), 1 + report.final_metrics.len());
        assert!(rows[1].starts_with("test,"));
    }
}
