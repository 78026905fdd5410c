//! Training loop, evaluation and the experiment drivers built on them.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::artifact::Csv;
use crate::config::{MixerKind, RunConfig};
use crate::data::{Dataset, Sample};
use crate::error::{FsruError, Result};
use crate::graph::Graph;
use crate::metrics::Metrics;
use crate::model::FsruModel;
use crate::objectives::LossReport;
use crate::optim::Adam;
use crate::params::Parameters;
use crate::project::{pca_2d, Projection};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// One line of the per-epoch metrics file.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub split: Split,
    pub report: LossReport,
    pub metrics: Metrics,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: FsruModel,
    pub rows: Vec<EpochRow>,
    pub epochs_run: usize,
    /// First epoch (1-based) whose test accuracy met `target_accuracy`.
    pub reached_target: Option<usize>,
    pub final_test: Metrics,
}

impl TrainOutcome {
    pub fn test_rows(&self) -> impl Iterator<Item = &EpochRow> {
        self.rows.iter().filter(|r| r.split == Split::Test)
    }

    /// First epoch whose test accuracy is at least `bar`.
    pub fn first_epoch_reaching(&self, bar: f64) -> Option<usize> {
        self.test_rows().find(|r| r.metrics.accuracy >= bar).map(|r| r.epoch)
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub report: LossReport,
    pub predictions: Vec<u8>,
    /// Probability of class 1 per sample.
    pub rumor_probability: Vec<f64>,
}

/// Size-weighted running mean of loss reports.
#[derive(Default)]
struct ReportMean {
    sum: LossReport,
    weight: f64,
}

impl ReportMean {
    fn add(&mut self, r: &LossReport, n: usize) {
        let w = n as f64;
        self.sum.l_cls += w * r.l_cls;
        self.sum.l_full += w * r.l_full;
        self.sum.l_self += w * r.l_self;
        self.sum.total += w * r.total;
        self.sum.mean_gamma += w * r.mean_gamma;
        self.sum.alpha = r.alpha;
        self.sum.beta = r.beta;
        self.weight += w;
    }

    fn mean(&self) -> LossReport {
        let w = self.weight.max(1.0);
        LossReport {
            l_cls: self.sum.l_cls / w,
            l_full: self.sum.l_full / w,
            l_self: self.sum.l_self / w,
            total: self.sum.total / w,
            mean_gamma: self.sum.mean_gamma / w,
            alpha: self.sum.alpha,
            beta: self.sum.beta,
        }
    }
}

fn argmax_rows(logits: &Tensor) -> (Vec<u8>, Vec<f64>) {
    logits
        .data()
        .chunks(2)
        .map(|row| {
            let p1 = 1.0 / (1.0 + (row[0] - row[1]).exp());
            (u8::from(row[1] > row[0]), p1)
        })
        .unzip()
}

fn split_batch<'a>(batch: &[&'a Sample]) -> (Vec<&'a crate::embedding::TextSample>, Vec<&'a crate::embedding::ImageSample>, Vec<u8>) {
    (
        batch.iter().map(|s| &s.text).collect(),
        batch.iter().map(|s| &s.image).collect(),
        batch.iter().map(|s| s.label).collect(),
    )
}

/// One optimisation step on `batch`; returns the loss report and the
/// pre-update predictions.
fn train_step(model: &mut FsruModel, adam: &mut Adam, batch: &[&Sample]) -> Result<(LossReport, Vec<u8>)> {
    let (texts, images, labels) = split_batch(batch);
    let mut g = Graph::new();
    let vars = model.bind(&mut g);
    let fwd = model.forward(&mut g, &vars, &texts, &images)?;
    let obj = model.objective(&mut g, &fwd, &labels)?;
    let (pred, _) = argmax_rows(g.value(fwd.logits));
    if !obj.report.total.is_finite() {
        return Ok((obj.report, pred));
    }
    let grads = g.backward(obj.total)?;
    let leaves = FsruModel::leaves(&vars);
    let slots: Vec<Option<&Tensor>> = leaves.iter().map(|v| grads.get(*v)).collect();
    let mut params: Vec<&mut Tensor> = model.named_mut().into_iter().map(|(_, t)| t).collect();
    adam.step(&mut params, &slots);
    Ok((obj.report, pred))
}

/// Forward-only evaluation in batches of `config.batch_size`.
pub fn evaluate(model: &FsruModel, data: &Dataset) -> Result<Evaluation> {
    let refs: Vec<&Sample> = data.samples.iter().collect();
    let mut mean = ReportMean::default();
    let mut predictions = Vec::with_capacity(refs.len());
    let mut rumor_probability = Vec::with_capacity(refs.len());
    for batch in refs.chunks(model.config.batch_size) {
        let (texts, images, labels) = split_batch(batch);
        let mut g = Graph::new();
        let vars = model.bind(&mut g);
        let fwd = model.forward(&mut g, &vars, &texts, &images)?;
        let obj = model.objective(&mut g, &fwd, &labels)?;
        mean.add(&obj.report, batch.len());
        let (p, prob) = argmax_rows(g.value(fwd.logits));
        predictions.extend(p);
        rumor_probability.extend(prob);
    }
    Ok(Evaluation {
        metrics: Metrics::from_predictions(&predictions, &data.labels()),
        report: mean.mean(),
        predictions,
        rumor_probability,
    })
}

/// Trains a freshly initialised model on `train`, evaluating on `test`
/// after every epoch.
pub fn train(cfg: &RunConfig, train: &Dataset, test: &Dataset) -> Result<TrainOutcome> {
    train.meta.check(cfg)?;
    test.meta.check(cfg)?;
    if train.is_empty() {
        return Err(FsruError::Config("training set is empty".into()));
    }
    let mut model = FsruModel::new(cfg)?;
    let mut adam = Adam::new(cfg.learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffler = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_0F5A_u64);
    let mut rows = Vec::new();
    let mut reached_target = None;
    let mut final_test = Metrics::default();
    let mut epochs_run = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffler);
        let mut mean = ReportMean::default();
        let mut predictions = Vec::with_capacity(order.len());
        let mut labels = Vec::with_capacity(order.len());
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train.samples[i]).collect();
            let (report, pred) = train_step(&mut model, &mut adam, &batch)?;
            if !report.total.is_finite() {
                log::error!("non-finite loss at epoch {epoch}, batch {b}: {report:?}; samples {chunk:?}");
                return Err(FsruError::NonFiniteLoss {
                    epoch,
                    batch: b,
                    value: report.total,
                });
            }
            mean.add(&report, batch.len());
            predictions.extend(pred);
            labels.extend(batch.iter().map(|s| s.label));
        }
        rows.push(EpochRow {
            epoch,
            split: Split::Train,
            report: mean.mean(),
            metrics: Metrics::from_predictions(&predictions, &labels),
        });
        let eval = evaluate(&model, test)?;
        log::info!(
            "epoch {epoch}: train loss {:.4}, test accuracy {:.4}",
            mean.mean().total,
            eval.metrics.accuracy
        );
        final_test = eval.metrics;
        rows.push(EpochRow {
            epoch,
            split: Split::Test,
            report: eval.report,
            metrics: eval.metrics,
        });
        epochs_run = epoch;
        if let Some(target) = cfg.target_accuracy {
            if eval.metrics.accuracy >= target {
                reached_target = Some(epoch);
                break;
            }
        }
    }
    Ok(TrainOutcome {
        model,
        rows,
        epochs_run,
        reached_target,
        final_test,
    })
}

pub const METRICS_HEADER: [&str; 14] = [
    "epoch",
    "split",
    "l_cls",
    "l_full",
    "l_self",
    "total",
    "mean_gamma",
    "accuracy",
    "precision_rumor",
    "recall_rumor",
    "f1_rumor",
    "precision_nonrumor",
    "recall_nonrumor",
    "f1_nonrumor",
];

pub fn metrics_csv(rows: &[EpochRow]) -> Csv {
    let mut csv = Csv::new(&METRICS_HEADER);
    for r in rows {
        let (l, m) = (&r.report, &r.metrics);
        csv.row(&[
            &r.epoch,
            &r.split,
            &l.l_cls,
            &l.l_full,
            &l.l_self,
            &l.total,
            &l.mean_gamma,
            &m.accuracy,
            &m.rumor.precision,
            &m.rumor.recall,
            &m.rumor.f1,
            &m.nonrumor.precision,
            &m.nonrumor.recall,
            &m.nonrumor.f1,
        ]);
    }
    csv
}

/// `folds`-fold cross-validation over `data`; fold `i` holds out every
/// sample whose index is `i` modulo `folds`.
pub fn kfold(cfg: &RunConfig, data: &Dataset) -> Result<Vec<Metrics>> {
    if cfg.folds < 2 {
        return Err(FsruError::Config("k-fold evaluation needs folds >= 2".into()));
    }
    (0..cfg.folds)
        .map(|fold| {
            let (held, kept): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|i| i % cfg.folds == fold);
            let outcome = train(cfg, &data.subset(&kept), &data.subset(&held))?;
            Ok(outcome.final_test)
        })
        .collect()
}

pub const ABLATIONS: [&str; 5] = ["full", "-usc", "-csc", "-dsf", "-cl"];

/// The configuration of one named ablation variant.
pub fn ablation_config(cfg: &RunConfig, variant: &str) -> Result<RunConfig> {
    let mut c = cfg.clone();
    match variant {
        "full" => {}
        "-usc" => c.ablation.usc = false,
        "-csc" => c.ablation.csc = false,
        "-dsf" => c.ablation.dsf = false,
        "-cl" => c.ablation.cl = false,
        other => return Err(FsruError::Config(format!("unknown ablation `{other}`"))),
    }
    Ok(c)
}

#[derive(Clone, Debug)]
pub struct VariantResult {
    pub name: String,
    pub outcome: TrainOutcome,
}

pub fn ablate(cfg: &RunConfig, train_set: &Dataset, test: &Dataset) -> Result<Vec<VariantResult>> {
    ABLATIONS
        .iter()
        .map(|&name| {
            let c = ablation_config(cfg, name)?;
            Ok(VariantResult {
                name: name.to_string(),
                outcome: train(&c, train_set, test)?,
            })
        })
        .collect()
}

/// Summary CSV: one row per variant with its final test metrics and losses.
pub fn summary_csv(key: &str, results: &[VariantResult]) -> Csv {
    let mut csv = Csv::new(&[
        key,
        "accuracy",
        "precision_rumor",
        "recall_rumor",
        "f1_rumor",
        "precision_nonrumor",
        "recall_nonrumor",
        "f1_nonrumor",
        "l_cls",
        "l_full",
        "l_self",
        "epochs",
    ]);
    for r in results {
        let m = &r.outcome.final_test;
        let last = r.outcome.test_rows().last().map(|row| row.report).unwrap_or_default();
        csv.row(&[
            &r.name,
            &m.accuracy,
            &m.rumor.precision,
            &m.rumor.recall,
            &m.rumor.f1,
            &m.nonrumor.precision,
            &m.nonrumor.recall,
            &m.nonrumor.f1,
            &last.l_cls,
            &last.l_full,
            &last.l_self,
            &r.outcome.epochs_run,
        ]);
    }
    csv
}

pub const SWEEP_K: [usize; 4] = [1, 2, 4, 8];

pub fn sweep_k(cfg: &RunConfig, train_set: &Dataset, test: &Dataset) -> Result<Vec<VariantResult>> {
    SWEEP_K
        .iter()
        .map(|&k| {
            let mut c = cfg.clone();
            c.filters = k;
            Ok(VariantResult {
                name: k.to_string(),
                outcome: train(&c, train_set, test)?,
            })
        })
        .collect()
}

/// Trains one model per mixer on identical data and seed.
pub fn convergence(
    cfg: &RunConfig,
    kinds: &[MixerKind],
    train_set: &Dataset,
    test: &Dataset,
) -> Result<Vec<(MixerKind, TrainOutcome)>> {
    kinds
        .iter()
        .map(|&kind| {
            let mut c = cfg.clone();
            c.mixer = kind;
            Ok((kind, train(&c, train_set, test)?))
        })
        .collect()
}

pub fn convergence_csv(runs: &[(MixerKind, TrainOutcome)]) -> Csv {
    let mut csv = Csv::new(&["epoch", "mixer_kind", "train_loss", "test_accuracy"]);
    for (kind, outcome) in runs {
        let train_rows = outcome.rows.iter().filter(|r| r.split == Split::Train);
        for (tr, te) in train_rows.zip(outcome.test_rows()) {
            csv.row(&[&tr.epoch, kind, &tr.report.total, &te.metrics.accuracy]);
        }
    }
    csv
}

/// Mean spectra of `samples` at each stage of the spectral block:
/// `raw` is `|X|²/l`, `usc` the compressed spectrum, `csc` the co-selected one.
pub fn spectrum_dump(model: &FsruModel, samples: &[&Sample]) -> Result<Csv> {
    let (texts, images, _) = split_batch(samples);
    let mut g = Graph::new();
    let vars = model.bind(&mut g);
    let fwd = model.forward(&mut g, &vars, &texts, &images)?;
    let trace = fwd
        .trace
        .ok_or_else(|| FsruError::Config("spectrum dumps need the spectral mixer".into()))?;
    let mut csv = Csv::new(&["modality", "stage", "token_bin", "channel", "value"]);
    let stages = [
        ("text", "raw", trace.raw_text),
        ("text", "usc", trace.compressed_text),
        ("text", "csc", trace.selected_text),
        ("image", "raw", trace.raw_image),
        ("image", "usc", trace.compressed_image),
        ("image", "csc", trace.selected_image),
    ];
    for (modality, stage, var) in stages {
        let t = g.value(var);
        let (b, len, d) = (t.shape()[0], t.shape()[1], t.shape()[2]);
        for bin in 0..len {
            for c in 0..d {
                let mean = (0..b).map(|s| t.data()[(s * len + bin) * d + c]).sum::<f64>() / b as f64;
                csv.row(&[&modality, &stage, &bin, &c, &mean]);
            }
        }
    }
    Ok(csv)
}

/// Fused feature rows `m` for every sample, `N × d`.
pub fn fused_features(model: &FsruModel, data: &Dataset) -> Result<Tensor> {
    let refs: Vec<&Sample> = data.samples.iter().collect();
    let mut rows = Vec::with_capacity(refs.len() * model.config.d);
    for batch in refs.chunks(model.config.batch_size) {
        let (texts, images, _) = split_batch(batch);
        let mut g = Graph::new();
        let vars = model.bind(&mut g);
        let fwd = model.forward(&mut g, &vars, &texts, &images)?;
        rows.extend_from_slice(g.value(fwd.fused).data());
    }
    Tensor::new(&[refs.len(), model.config.d], rows)
}

pub fn project_features(model: &FsruModel, data: &Dataset) -> Result<(Projection, Csv)> {
    if data.len() < 3 {
        return Err(FsruError::Config("projection needs at least 3 samples".into()));
    }
    let projection = pca_2d(&fused_features(model, data)?);
    let mut csv = Csv::new(&["x", "y", "label"]);
    for (p, s) in projection.points.iter().zip(&data.samples) {
        csv.row(&[&p[0], &p[1], &s.label]);
    }
    Ok((projection, csv))
}
