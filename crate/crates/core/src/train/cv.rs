use std::path::PathBuf;

use rayon::prelude::*;

use super::data::SampleSource;
use super::loss::cross_entropy;
use super::optim::{adamw_step, OptimizerState, TrainConfig};
use super::TrainError;
use crate::dataset::{DatasetError, FoldAssignment};
use crate::metrics::{csv_string, FoldScores, MetricReport, PredictionSet};
use crate::nn::weights::{load_weights, LoadOptions};
use crate::nn::{build_architecture, finetune_head, predict, ArchitectureSpec, Float, LayerGraph};
use crate::rng;

#[derive(Debug, Clone, Default)]
pub struct CvOptions {
    /// Folds trained concurrently; 0 or 1 runs them one after another.
    pub jobs: usize,
    /// STRW file to initialise every fold from before head replacement.
    pub initial_weights: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: usize,
    pub test_ids: Vec<usize>,
    pub labels: Vec<usize>,
    pub logits: Vec<Vec<Float>>,
    pub loss_trace: Vec<f64>,
    pub scores: FoldScores,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub report: MetricReport,
    pub folds: Vec<FoldOutcome>,
}

impl CvOutcome {
    /// `fold,sample_id,label,logit_0..logit_{K-1}` for every test sample.
    pub fn predictions_csv(&self) -> Result<String, TrainError> {
        let k = self.folds.iter().flat_map(|f| f.logits.first()).map(Vec::len).next().unwrap_or(0);
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = ["fold", "sample_id", "label"].map(String::from).to_vec();
        header.extend((0..k).map(|c| format!("logit_{c}")));
        w.write_record(&header).map_err(crate::metrics::MetricsError::from)?;
        for f in &self.folds {
            for ((id, y), row) in f.test_ids.iter().zip(&f.labels).zip(&f.logits) {
                let mut rec = vec![f.fold.to_string(), id.to_string(), y.to_string()];
                rec.extend(row.iter().map(|v| format!("{v:e}")));
                w.write_record(&rec).map_err(crate::metrics::MetricsError::from)?;
            }
        }
        Ok(csv_string(w)?)
    }

    /// `fold,epoch,mean_loss`.
    pub fn loss_csv(&self) -> Result<String, TrainError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["fold", "epoch", "mean_loss"]).map_err(crate::metrics::MetricsError::from)?;
        for f in &self.folds {
            for (e, l) in f.loss_trace.iter().enumerate() {
                w.write_record([f.fold.to_string(), e.to_string(), format!("{l:e}")])
                    .map_err(crate::metrics::MetricsError::from)?;
            }
        }
        Ok(csv_string(w)?)
    }
}

fn step_seed(base: u64, step: u64) -> u64 {
    rng::stable_hash(&format!("{base}:{step}"))
}

/// Trains `graph` for `cfg.epochs_per_fold` passes over `train_ids`, each in
/// a fresh seeded order. Returns the trained graph and the mean loss of each
/// epoch.
pub fn train_fold(
    mut graph: LayerGraph,
    train_ids: &[usize],
    source: &dyn SampleSource,
    cfg: &TrainConfig,
) -> Result<(LayerGraph, Vec<f64>), TrainError> {
    cfg.validate()?;
    if graph.num_classes() != source.num_classes() {
        return Err(TrainError::Config(format!(
            "head has {} outputs but the data has {} classes",
            graph.num_classes(),
            source.num_classes()
        )));
    }
    let mut state = OptimizerState::new(graph.parameters().map(|(_, t)| t));
    let mut trace = Vec::with_capacity(cfg.epochs_per_fold);
    let mut step = 0u64;
    for epoch in 0..cfg.epochs_per_fold {
        let mut order = train_ids.to_vec();
        rng::shuffle(&mut rng::stream(cfg.seed, 1 + epoch as u64), &mut order);
        let (mut total, mut seen) = (0.0, 0usize);
        for ids in order.chunks(cfg.batch_size) {
            let (x, y) = source.batch(ids)?;
            let t = graph.forward_train(&x, step_seed(cfg.seed, step))?;
            let (loss, g) = cross_entropy(t.output(), &y)?;
            let grads = graph.backward(&t, &g)?;
            drop(t);
            adamw_step(&mut graph.parameters_mut(), &grads.flat(), &mut state, cfg)?;
            total += loss * ids.len() as f64;
            seen += ids.len();
            step += 1;
        }
        trace.push(if seen == 0 { 0.0 } else { total / seen as f64 });
    }
    Ok((graph, trace))
}

/// Inference logits for `ids`, in order, with their labels.
pub fn evaluate(
    graph: &LayerGraph,
    ids: &[usize],
    source: &dyn SampleSource,
    batch_size: usize,
) -> Result<(Vec<usize>, Vec<Vec<Float>>), TrainError> {
    let mut labels = Vec::with_capacity(ids.len());
    let mut logits = Vec::with_capacity(ids.len());
    for chunk in ids.chunks(batch_size.max(1)) {
        let (x, y) = source.batch(chunk)?;
        let out = predict(graph, &x)?;
        let k = out.shape()[1];
        logits.extend(out.data().chunks(k.max(1)).map(<[Float]>::to_vec));
        labels.extend(y);
    }
    Ok((labels, logits))
}

fn run_fold(
    fold: usize,
    factory: &(dyn Fn() -> Result<LayerGraph, TrainError> + Sync),
    source: &dyn SampleSource,
    fa: &FoldAssignment,
    cfg: &TrainConfig,
) -> Result<FoldOutcome, TrainError> {
    let (train, test): (Vec<usize>, Vec<usize>) = (0..fa.fold_of.len()).partition(|&id| fa.fold_of[id] != fold);
    let graph = factory()?;
    let (graph, loss_trace) = train_fold(graph, &train, source, cfg)?;
    let (labels, logits) = evaluate(&graph, &test, source, cfg.batch_size)?;
    let preds = PredictionSet::from_scores(labels.clone(), &logits)?;
    let scores = FoldScores::from_predictions(&preds)?;
    Ok(FoldOutcome { fold, test_ids: test, labels, logits, loss_trace, scores })
}

/// Cross-validates models produced by `factory` (called once per fold).
pub fn run_cross_validation_with(
    method: &str,
    factory: &(dyn Fn() -> Result<LayerGraph, TrainError> + Sync),
    source: &dyn SampleSource,
    fa: &FoldAssignment,
    cfg: &TrainConfig,
    opts: &CvOptions,
) -> Result<CvOutcome, TrainError> {
    cfg.validate()?;
    if fa.fold_of.len() != source.len() {
        return Err(DatasetError::AssignmentMismatch { assigned: fa.fold_of.len(), samples: source.len() }.into());
    }
    let params = factory()?.param_count();
    let one = |k: usize| run_fold(k, factory, source, fa, cfg).map_err(|e| TrainError::Fold { fold: k, source: Box::new(e) });
    let folds: Vec<FoldOutcome> = if opts.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| TrainError::Config(format!("thread pool: {e}")))?;
        pool.install(|| (0..fa.n_folds).into_par_iter().map(one).collect::<Result<_, _>>())?
    } else {
        (0..fa.n_folds).map(one).collect::<Result<_, _>>()?
    };
    let report = MetricReport::new(
        method,
        params,
        source.len(),
        cfg.epochs_per_fold,
        folds.iter().map(|f| f.scores).collect(),
    );
    Ok(CvOutcome { report, folds })
}

/// Cross-validates the named architecture: each fold starts from the same
/// seeded (or weight-file) initialisation, gets a fresh head sized to the
/// data's classes, is trained on the other folds and scored on its own.
pub fn run_cross_validation(
    spec: &ArchitectureSpec,
    source: &dyn SampleSource,
    fa: &FoldAssignment,
    cfg: &TrainConfig,
    opts: &CvOptions,
) -> Result<CvOutcome, TrainError> {
    let classes = source.num_classes();
    let factory = || -> Result<LayerGraph, TrainError> {
        let mut g = build_architecture(spec)?;
        g.init_parameters(cfg.seed);
        if let Some(path) = &opts.initial_weights {
            load_weights(&mut g, path, LoadOptions { skip_mismatched_head: true })?;
        }
        Ok(finetune_head(g, classes, cfg.seed)?)
    };
    run_cross_validation_with(spec.architecture.name(), &factory, source, fa, cfg, opts)
}
