//! Per-instance edge-mask attribution and per-class aggregation.
//!
//! Each edge `e` gets a logit `theta_e`; its mask `m_e = sigmoid(theta_e)`
//! scales the entries that edge contributes to the normalized propagation
//! matrix, while self-loop entries stay fixed:
//!
//! ```text
//! A_m = base + sum_e m_e * C_e
//! loss = BCE(p(A_m), target) + l1 * mean(m) + l2 * mean(H(m))
//! ```
//!
//! `H` is the binary entropy. The logits are optimized with Adam.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adam::{adam_step, AdamConfig, AdamState};
use crate::checkpoint::ModelCheckpoint;
use crate::dsp::FeatureWindow;
use crate::error::{Error, Result};
use crate::gcn::{backward, forward, loss_bce, sigmoid, GraphInput};
use crate::seeds::derive_seed;
use crate::topology::{edge_contributions, EdgeContributions, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplainTarget {
    /// The model's own thresholded prediction.
    #[default]
    Predicted,
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainerConfig {
    /// Mask-size penalty.
    pub lambda_size: f64,
    /// Mask-entropy penalty.
    pub lambda_entropy: f64,
    pub steps: usize,
    pub lr: f64,
    pub init_std: f64,
    pub seed: u64,
    pub target: ExplainTarget,
    pub per_class_cap: usize,
    /// Aggregate only instances whose prediction matches the label.
    pub correct_only: bool,
}

impl Default for ExplainerConfig {
    fn default() -> Self {
        ExplainerConfig {
            lambda_size: 0.05,
            lambda_entropy: 0.1,
            steps: 100,
            lr: 0.01,
            init_std: 0.1,
            seed: 0,
            target: ExplainTarget::Predicted,
            per_class_cap: 1000,
            correct_only: true,
        }
    }
}

impl ExplainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.per_class_cap == 0 {
            return Err(Error::config("per_class_cap must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("explainer lr must be positive"));
        }
        if !(self.init_std >= 0.0) || !(self.lambda_size >= 0.0) || !(self.lambda_entropy >= 0.0) {
            return Err(Error::config(
                "explainer penalties and init_std must be non-negative",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InstanceKey {
    pub subject_id: String,
    pub record_id: String,
    pub window_index: usize,
}

impl InstanceKey {
    pub fn of(w: &FeatureWindow) -> Self {
        InstanceKey {
            subject_id: w.subject_id.clone(),
            record_id: w.record_id.clone(),
            window_index: w.window_index,
        }
    }

    fn seed(&self, base: u64) -> u64 {
        derive_seed(
            base,
            &[
                &self.subject_id,
                &self.record_id,
                &self.window_index.to_string(),
            ],
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeMask {
    pub key: InstanceKey,
    pub label: u8,
    pub predicted: u8,
    /// Unmasked probability.
    pub p: f64,
    /// One value per topology edge, in topology edge order.
    pub values: Vec<f64>,
    /// BCE of the masked prediction against the target before and after
    /// optimization.
    pub initial_bce: f64,
    pub final_bce: f64,
    /// Full objective at the last step.
    pub final_loss: f64,
}

/// Value and gradient of the explainer objective at logits `theta`.
struct Objective<'a> {
    ck: &'a ModelCheckpoint,
    contrib: &'a EdgeContributions,
    x: &'a GraphInput,
    target: f64,
    lambda_size: f64,
    lambda_entropy: f64,
}

fn entropy(m: f64) -> f64 {
    -(m * m.ln() + (1.0 - m) * (1.0 - m).ln())
}

impl Objective<'_> {
    fn masked_p(&self, masks: &[f64]) -> Result<f64> {
        Ok(forward(&self.ck.params, &self.contrib.assemble(Some(masks)), self.x)?.p)
    }

    /// `(bce, total loss, dloss/dtheta)`.
    fn eval(&self, theta: &[f64]) -> Result<(f64, f64, Vec<f64>)> {
        let e = theta.len() as f64;
        let m: Vec<f64> = theta.iter().map(|&t| sigmoid(t)).collect();
        let a = self.contrib.assemble(Some(&m));
        let cache = forward(&self.ck.params, &a, self.x)?;
        let bce = loss_bce(cache.p, self.target);
        let g = backward(&self.ck.params, &a, &cache, self.target, 1.0, true);
        let dm_bce = self.contrib.scale_gradient(
            g.adjacency
                .as_deref()
                .expect("adjacency gradient requested"),
        );
        let mut loss = bce;
        let mut grad = Vec::with_capacity(m.len());
        for (&mi, dbce) in m.iter().zip(dm_bce) {
            loss += self.lambda_size * mi / e + self.lambda_entropy * entropy(mi) / e;
            let dm = dbce + self.lambda_size / e + self.lambda_entropy / e * ((1.0 - mi) / mi).ln();
            grad.push(dm * mi * (1.0 - mi));
        }
        if !loss.is_finite() || grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite explainer loss"));
        }
        Ok((bce, loss, grad))
    }
}

/// Optimizes an edge mask for one graph input.
///
/// `label` is the ground truth, used when the config targets it and for
/// later aggregation.
pub fn explain_instance(
    ck: &ModelCheckpoint,
    topology: &Topology,
    x: &GraphInput,
    key: InstanceKey,
    label: u8,
    config: &ExplainerConfig,
) -> Result<EdgeMask> {
    ck.check_topology(topology, false)?;
    let contrib = edge_contributions(topology, ck.edge_weights.as_deref())?;
    let p = forward(&ck.params, &contrib.assemble(None), x)?.p;
    let predicted = u8::from(p >= 0.5);
    let target = match config.target {
        ExplainTarget::Predicted => predicted,
        ExplainTarget::GroundTruth => label,
    };
    let obj = Objective {
        ck,
        contrib: &contrib,
        x,
        target: f64::from(target),
        lambda_size: config.lambda_size,
        lambda_entropy: config.lambda_entropy,
    };

    let n_edges = topology.edges().len();
    let mut rng = ChaCha8Rng::seed_from_u64(key.seed(config.seed));
    let init = Normal::new(0.0, config.init_std).map_err(|e| Error::config(e.to_string()))?;
    let mut theta: Vec<f64> = (0..n_edges).map(|_| init.sample(&mut rng)).collect();
    let adam = AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(n_edges);

    let (initial_bce, mut final_loss, mut grad) = obj.eval(&theta)?;
    for _ in 0..config.steps {
        adam_step(&mut theta, &grad, &mut state, &adam);
        let (_, loss, g) = obj.eval(&theta)?;
        final_loss = loss;
        grad = g;
    }
    let values: Vec<f64> = theta.iter().map(|&t| sigmoid(t)).collect();
    let final_bce = loss_bce(obj.masked_p(&values)?, obj.target);
    Ok(EdgeMask {
        key,
        label,
        predicted,
        p,
        values,
        initial_bce,
        final_bce,
        final_loss,
    })
}

/// Probability under explicit mask values; all ones reproduces the unmasked
/// prediction.
pub fn masked_probability(
    ck: &ModelCheckpoint,
    topology: &Topology,
    x: &GraphInput,
    masks: &[f64],
) -> Result<f64> {
    if masks.len() != topology.edges().len() {
        return Err(Error::invalid(format!(
            "{} mask values for {} edges",
            masks.len(),
            topology.edges().len()
        )));
    }
    let contrib = edge_contributions(topology, ck.edge_weights.as_deref())?;
    Ok(forward(&ck.params, &contrib.assemble(Some(masks)), x)?.p)
}

/// Seeded, per-class sample of correctly classified windows, at most `cap`
/// per class. Returned sorted by key.
pub fn select_instances<'a>(
    windows: &[&'a FeatureWindow],
    ck: &ModelCheckpoint,
    topology: &Topology,
    cap: usize,
    seed: u64,
) -> Result<Vec<&'a FeatureWindow>> {
    if cap == 0 {
        return Err(Error::config("per-class cap must be at least 1"));
    }
    let a = ck.propagation(topology)?;
    let scores = crate::train::score_windows(ck, &a, windows)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for label in [0u8, 1] {
        let mut class: Vec<&FeatureWindow> = windows
            .iter()
            .zip(&scores)
            .filter(|(w, &s)| w.label == label && u8::from(s >= 0.5) == label)
            .map(|(w, _)| *w)
            .collect();
        class.sort_by(|a, b| a.key().cmp(&b.key()));
        class.shuffle(&mut rng);
        class.truncate(cap);
        out.extend(class);
    }
    out.sort_by(|a, b| a.key().cmp(&b.key()));
    Ok(out)
}

/// Explains each window in parallel; output follows input order.
pub fn explain_windows(
    ck: &ModelCheckpoint,
    topology: &Topology,
    windows: &[&FeatureWindow],
    config: &ExplainerConfig,
) -> Result<Vec<EdgeMask>> {
    config.validate()?;
    windows
        .par_iter()
        .map(|w| {
            let x = ck.graph_input(&w.features, topology.n_nodes())?;
            explain_instance(ck, topology, &x, InstanceKey::of(w), w.label, config)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeStat {
    pub source: String,
    pub target: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassExplanation {
    pub label: u8,
    pub name: String,
    pub n_instances: usize,
    /// One row per topology edge, in topology order.
    pub edges: Vec<EdgeStat>,
    /// `adjacency[i][j]` is the mean mask of edge `j -> i`.
    pub adjacency: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationReport {
    pub nodes: Vec<String>,
    pub classes: Vec<ClassExplanation>,
    pub config: ExplainerConfig,
    pub n_instances: usize,
}

pub fn class_name(label: u8) -> &'static str {
    if label == 1 {
        "nssi"
    } else {
        "non_nssi"
    }
}

/// Per-class mean and population std of every edge mask, grouped by true
/// label. Classes left empty after filtering are omitted.
pub fn aggregate(
    masks: &[EdgeMask],
    topology: &Topology,
    config: &ExplainerConfig,
) -> Result<ExplanationReport> {
    if masks.is_empty() {
        return Err(Error::invalid("no edge masks to aggregate"));
    }
    let n_edges = topology.edges().len();
    if let Some(m) = masks.iter().find(|m| m.values.len() != n_edges) {
        return Err(Error::invalid(format!(
            "mask for {:?} has {} values, topology has {n_edges} edges",
            m.key,
            m.values.len()
        )));
    }
    let mut sorted: Vec<&EdgeMask> = masks.iter().collect();
    sorted.sort_by(|a, b| a.key.cmp(&b.key));
    let mut by_class: BTreeMap<u8, Vec<&EdgeMask>> = BTreeMap::new();
    for m in sorted {
        if !config.correct_only || m.predicted == m.label {
            by_class.entry(m.label).or_default().push(m);
        }
    }
    let n = topology.n_nodes();
    let mut classes = Vec::new();
    for label in [0u8, 1] {
        let Some(members) = by_class.get(&label) else {
            log::warn!("no {} instances left to aggregate", class_name(label));
            continue;
        };
        let k = members.len() as f64;
        let mut adjacency = vec![vec![0.0; n]; n];
        let edges = topology
            .edges()
            .iter()
            .enumerate()
            .map(|(e, edge)| {
                let mean = members.iter().map(|m| m.values[e]).sum::<f64>() / k;
                let var = members
                    .iter()
                    .map(|m| (m.values[e] - mean).powi(2))
                    .sum::<f64>()
                    / k;
                adjacency[edge.target][edge.source] = mean;
                let (s, t) = topology.edge_names(edge);
                EdgeStat {
                    source: s.to_string(),
                    target: t.to_string(),
                    mean,
                    std: var.sqrt(),
                    n: members.len(),
                }
            })
            .collect();
        classes.push(ClassExplanation {
            label,
            name: class_name(label).to_string(),
            n_instances: members.len(),
            edges,
            adjacency,
        });
    }
    Ok(ExplanationReport {
        nodes: topology.nodes().to_vec(),
        classes,
        config: config.clone(),
        n_instances: masks.len(),
    })
}

pub fn edges_csv(c: &ClassExplanation) -> String {
    let mut s = String::from("source,target,mean,std,n\n");
    for e in &c.edges {
        writeln!(s, "{},{},{},{},{}", e.source, e.target, e.mean, e.std, e.n).unwrap();
    }
    s
}

/// Matrix with a header row and a leading column of node names.
pub fn adjacency_csv(c: &ClassExplanation, nodes: &[String]) -> String {
    let mut s = format!("node,{}\n", nodes.join(","));
    for (name, row) in nodes.iter().zip(&c.adjacency) {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        writeln!(s, "{name},{}", cells.join(",")).unwrap();
    }
    s
}

/// Writes `explanation.json` plus `edges_<class>.csv` and
/// `adjacency_<class>.csv` for each class present.
pub fn write_report_files(dir: &Path, report: &ExplanationReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join("explanation.json"),
        serde_json::to_string_pretty(report)? + "\n",
    )?;
    for c in &report.classes {
        fs::write(dir.join(format!("edges_{}.csv", c.name)), edges_csv(c))?;
        fs::write(
            dir.join(format!("adjacency_{}.csv", c.name)),
            adjacency_csv(c, &report.nodes),
        )?;
    }
    Ok(())
}
