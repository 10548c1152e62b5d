//! Training loop and the two evaluation protocols: one model per subject on
//! a stratified split, and leave-one-subject-out.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adam::{adam_step, AdamConfig, AdamState};
use crate::checkpoint::{ModelCheckpoint, FORMAT_VERSION};
use crate::dataset::{class_counts, loso_folds, stratified_split, Dataset, Fold, Split, SplitMode};
use crate::dsp::FeatureWindow;
use crate::error::{Error, Result};
use crate::gcn::{
    backward, forward, log_feature, loss_bce, standardize, GcnParams, GraphInput, IN_DIM, N_PARAMS,
};
use crate::metrics::{EvalReport, MetricSummary, DEFAULT_THRESHOLD};
use crate::topology::{propagation_matrix, PropagationMatrix, Topology};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Weight each class by `n / (2 n_class)`.
    pub class_weighting: bool,
    pub split_mode: SplitMode,
    pub test_fraction: f64,
    /// Keep windows flagged by artifact rejection.
    pub include_rejected: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 256,
            lr: 1e-3,
            seed: 0,
            class_weighting: false,
            split_mode: SplitMode::WindowLevel,
            test_fraction: 0.2,
            include_rejected: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::config(format!(
                "test_fraction {} outside [0, 1)",
                self.test_fraction
            )));
        }
        Ok(())
    }
}

/// Mean and population standard deviation of log10 features.
pub fn feature_stats(windows: &[&FeatureWindow]) -> Result<([f64; IN_DIM], [f64; IN_DIM])> {
    if windows.is_empty() {
        return Err(Error::invalid("no windows to compute feature statistics"));
    }
    let n = windows.len() as f64;
    let mut mean = [0.0; IN_DIM];
    for w in windows {
        if let Some(f) = w.features.iter().find(|f| !(**f >= 0.0 && f.is_finite())) {
            return Err(Error::invalid(format!(
                "feature {f} in {:?} is not a finite power",
                w.key()
            )));
        }
        for (m, &f) in mean.iter_mut().zip(&w.features) {
            *m += log_feature(f);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [0.0; IN_DIM];
    for w in windows {
        for i in 0..IN_DIM {
            let d = log_feature(w.features[i]) - mean[i];
            var[i] += d * d;
        }
    }
    let mut std = [0.0; IN_DIM];
    for i in 0..IN_DIM {
        std[i] = (var[i] / n).sqrt();
        if !(std[i] > 0.0) {
            return Err(Error::invalid(format!(
                "feature {i} is constant over the training windows"
            )));
        }
    }
    Ok((mean, std))
}

/// Trains on `windows` with unit edge weights.
pub fn train(
    windows: &[&FeatureWindow],
    topology: &Topology,
    config: &TrainConfig,
) -> Result<ModelCheckpoint> {
    train_with_edge_weights(windows, topology, None, config)
}

pub fn train_with_edge_weights(
    windows: &[&FeatureWindow],
    topology: &Topology,
    edge_weights: Option<&[f64]>,
    config: &TrainConfig,
) -> Result<ModelCheckpoint> {
    config.validate()?;
    let counts = class_counts(windows.iter().copied());
    if counts.negatives == 0 || counts.positives == 0 {
        return Err(Error::invalid(format!(
            "training set needs both classes, has {} negative and {} positive",
            counts.negatives, counts.positives
        )));
    }
    let a = propagation_matrix(topology, edge_weights)?;
    let (mean, std) = feature_stats(windows)?;
    let inputs: Vec<GraphInput> = windows
        .iter()
        .map(|w| standardize(&w.features, &mean, &std).map(|x| GraphInput::replicated(x, a.n())))
        .collect::<Result<_>>()?;
    let labels: Vec<f64> = windows.iter().map(|w| f64::from(w.label)).collect();
    let class_weight = if config.class_weighting {
        let n = windows.len() as f64;
        [
            n / (2.0 * counts.negatives as f64),
            n / (2.0 * counts.positives as f64),
        ]
    } else {
        [1.0, 1.0]
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = GcnParams::glorot(&mut rng);
    let adam = AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(N_PARAMS);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut loss_curve = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grad = GcnParams::zeros();
            for &i in batch {
                let y = labels[i];
                let w = class_weight[usize::from(y == 1.0)];
                let cache = forward(&params, &a, &inputs[i])?;
                epoch_loss += w * loss_bce(cache.p, y);
                let g = backward(&params, &a, &cache, y, w, false);
                grad.add_scaled(&g.params, 1.0);
            }
            let mut flat = params.to_flat();
            let g: Vec<f64> = grad
                .to_flat()
                .iter()
                .map(|v| v / batch.len() as f64)
                .collect();
            adam_step(&mut flat, &g, &mut state, &adam);
            params = GcnParams::from_flat(&flat)?;
        }
        let mean_loss = epoch_loss / windows.len() as f64;
        if !mean_loss.is_finite() || !params.is_finite() {
            return Err(Error::numeric(format!(
                "training diverged in epoch {epoch}"
            )));
        }
        log::debug!("epoch {epoch}: loss {mean_loss:.6}");
        loss_curve.push(mean_loss);
    }

    Ok(ModelCheckpoint {
        format_version: FORMAT_VERSION,
        params,
        feature_mean: mean,
        feature_std: std,
        topology_fingerprint: topology.fingerprint(),
        topology: topology.to_doc(),
        edge_weights: edge_weights.map(<[f64]>::to_vec),
        train_config: config.clone(),
        seed: config.seed,
        loss_curve,
    })
}

/// Positive-class probability of every window, in input order.
pub fn score_windows(
    ck: &ModelCheckpoint,
    a: &PropagationMatrix,
    windows: &[&FeatureWindow],
) -> Result<Vec<f64>> {
    windows
        .par_iter()
        .map(|w| ck.predict(a, &w.features))
        .collect()
}

/// Window-level evaluation. The checkpoint must match `topology`.
pub fn evaluate(
    ck: &ModelCheckpoint,
    topology: &Topology,
    windows: &[&FeatureWindow],
) -> Result<EvalReport> {
    ck.validate()?;
    ck.check_topology(topology, false)?;
    if windows.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty window set"));
    }
    let a = ck.propagation(topology)?;
    let scores = score_windows(ck, &a, windows)?;
    let labels: Vec<u8> = windows.iter().map(|w| w.label).collect();
    EvalReport::from_scores(&scores, &labels, DEFAULT_THRESHOLD)
}

/// Record-level evaluation: each recording is scored by the mean of its
/// window probabilities.
pub fn evaluate_records(
    ck: &ModelCheckpoint,
    topology: &Topology,
    windows: &[&FeatureWindow],
) -> Result<EvalReport> {
    ck.validate()?;
    ck.check_topology(topology, false)?;
    let a = ck.propagation(topology)?;
    let scores = score_windows(ck, &a, windows)?;
    let mut records: BTreeMap<(&str, &str), (f64, usize, u8)> = BTreeMap::new();
    for (w, s) in windows.iter().zip(&scores) {
        let e = records
            .entry((w.subject_id.as_str(), w.record_id.as_str()))
            .or_insert((0.0, 0, w.label));
        e.0 += s;
        e.1 += 1;
    }
    let (rs, rl): (Vec<f64>, Vec<u8>) =
        records.values().map(|&(s, n, y)| (s / n as f64, y)).unzip();
    EvalReport::from_scores(&rs, &rl, DEFAULT_THRESHOLD)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubjectRun {
    pub subject: String,
    pub split: Split,
    pub checkpoint: ModelCheckpoint,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntraSubjectRun {
    pub subjects: Vec<SubjectRun>,
    pub mean: MetricSummary,
}

/// Split and train one model per subject, without evaluating.
pub fn train_intra_subject(
    ds: &Dataset,
    topology: &Topology,
    config: &TrainConfig,
) -> Result<Vec<(Split, ModelCheckpoint)>> {
    config.validate()?;
    let subjects: Vec<&str> = ds.subjects().into_iter().collect();
    if subjects.is_empty() {
        return Err(Error::invalid("dataset has no subjects"));
    }
    subjects
        .par_iter()
        .map(|&s| {
            let split = stratified_split(
                ds,
                s,
                config.test_fraction,
                config.seed,
                config.split_mode,
                config.include_rejected,
            )?;
            let train_w = ds.select(&split.train_indices);
            let ck = train(&train_w, topology, config)?;
            Ok((split, ck))
        })
        .collect()
}

pub fn run_intra_subject(
    ds: &Dataset,
    topology: &Topology,
    config: &TrainConfig,
) -> Result<IntraSubjectRun> {
    let trained = train_intra_subject(ds, topology, config)?;
    let subjects = trained
        .into_par_iter()
        .map(|(split, checkpoint)| {
            let report = evaluate(&checkpoint, topology, &ds.select(&split.test_indices))?;
            Ok(SubjectRun {
                subject: split.subject.clone(),
                split,
                checkpoint,
                report,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = MetricSummary::mean(
        subjects
            .iter()
            .map(|r| r.report.summary())
            .collect::<Vec<_>>()
            .iter(),
    );
    Ok(IntraSubjectRun { subjects, mean })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldRun {
    pub fold: Fold,
    pub checkpoint: ModelCheckpoint,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LosoRun {
    pub folds: Vec<FoldRun>,
    pub mean: MetricSummary,
}

/// Training and test indices of one fold.
pub fn fold_indices(ds: &Dataset, fold: &Fold, include_rejected: bool) -> (Vec<usize>, Vec<usize>) {
    let train = ds.indices_where(|w| w.subject_id != fold.test_subject, include_rejected);
    let test = ds.indices_where(|w| w.subject_id == fold.test_subject, include_rejected);
    (train, test)
}

pub fn run_loso(ds: &Dataset, topology: &Topology, config: &TrainConfig) -> Result<LosoRun> {
    config.validate()?;
    let folds = loso_folds(ds)?;
    let folds = folds
        .into_par_iter()
        .map(|fold| {
            let (train_idx, test_idx) = fold_indices(ds, &fold, config.include_rejected);
            let checkpoint = train(&ds.select(&train_idx), topology, config)?;
            let report = evaluate(&checkpoint, topology, &ds.select(&test_idx))?;
            Ok(FoldRun {
                fold,
                checkpoint,
                report,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = MetricSummary::mean(
        folds
            .iter()
            .map(|f| f.report.summary())
            .collect::<Vec<_>>()
            .iter(),
    );
    Ok(LosoRun { folds, mean })
}

fn points_csv(header: &str, points: &[(f64, f64)]) -> String {
    let mut s = format!("{header}\n");
    for (x, y) in points {
        writeln!(s, "{x},{y}").unwrap();
    }
    s
}

pub fn roc_csv(r: &EvalReport) -> String {
    points_csv("fpr,tpr", &r.roc_points)
}

pub fn pr_csv(r: &EvalReport) -> String {
    points_csv("recall,precision", &r.pr_points)
}

pub fn confusion_csv(r: &EvalReport) -> String {
    let [[tn, fp], [fn_, tp]] = r.confusion;
    format!("actual,pred_0,pred_1\n0,{tn},{fp}\n1,{fn_},{tp}\n")
}

pub fn loss_curve_csv(curve: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (e, l) in curve.iter().enumerate() {
        writeln!(s, "{},{l}", e + 1).unwrap();
    }
    s
}

/// Writes `report.json`, `roc.csv`, `pr.csv`, `confusion.csv` and
/// `loss_curve.csv` into `dir`.
pub fn write_report_files(dir: &Path, report: &EvalReport, loss_curve: &[f64]) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(report)? + "\n",
    )?;
    fs::write(dir.join("roc.csv"), roc_csv(report))?;
    fs::write(dir.join("pr.csv"), pr_csv(report))?;
    fs::write(dir.join("confusion.csv"), confusion_csv(report))?;
    fs::write(dir.join("loss_curve.csv"), loss_curve_csv(loss_curve))?;
    Ok(())
}

/// Results table with one row per subject or fold and a trailing mean row.
pub fn format_table(
    first_column: &str,
    rows: &[(String, MetricSummary)],
    mean: &MetricSummary,
) -> String {
    let mut s = format!(
        "{:<16} {:>8} {:>9} {:>6} {:>8} {:>6}\n",
        first_column, "Accuracy", "Precision", "Recall", "F1-Score", "AUC"
    );
    let mut line = |name: &str, m: &MetricSummary| {
        writeln!(
            s,
            "{:<16} {:>8.3} {:>9.3} {:>6.3} {:>8.3} {:>6.3}",
            name, m.accuracy, m.precision, m.recall, m.f1, m.auc
        )
        .unwrap();
    };
    for (name, m) in rows {
        line(name, m);
    }
    line("Mean", mean);
    s
}
