//! Edge-free graph condensation by distribution matching.
//!
//! A task's incoming graph is condensed into a tiny synthetic node set
//! whose class-conditional embedding means match the originals under
//! randomly parameterized wide encoders. Aggregated features are computed
//! once per task (one propagation call, however many encoders and
//! iterations run) and reused; only the synthetic rows are re-embedded
//! while they are optimized. The two-phase variant trains a classifier on
//! the memory bank plus the fresh condensed graph, pseudo-labels
//! high-confidence non-train nodes, and condenses again on the enlarged
//! target set.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NormalizedAdjacency, PropagatedFeatures};
use crate::io;
use crate::linalg::{mean_rows_f64, Matrix};
use crate::memory::MemoryBank;
use crate::nn::{
    self, Activation, ActivationScope, ModelParams, Optimizer, OptimizerConfig, OptKind,
};
use crate::rng::{derive_seed, SplitMix64};
use crate::stream::TaskSpec;
use crate::trainer::{fit_rows, TrainConfig};

const PHASE1_TAG: u64 = 0x9a5e_0001;
const PHASE2_TAG: u64 = 0x9a5e_0002;
const INIT_TAG: u64 = 0x9a5e_0003;
const PL_TAG: u64 = 0x9a5e_0004;

/// Edge-free synthetic replay graph: trainable features, fixed labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CondensedGraph {
    task_id: usize,
    /// Rows grouped by class in ascending class order.
    features: Matrix,
    labels: Vec<u32>,
}

impl CondensedGraph {
    pub fn new(task_id: usize, features: Matrix, labels: Vec<u32>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Dimension("one label per synthetic row required".into()));
        }
        if labels.is_empty() {
            return Err(Error::Validation("condensed graph needs at least one node".into()));
        }
        if labels.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Validation("condensed labels must be grouped ascending".into()));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("condensed features".into()));
        }
        Ok(Self { task_id, features, labels })
    }

    pub fn task_id(&self) -> usize {
        self.task_id
    }

    pub fn budget(&self) -> usize {
        self.labels.len()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Contiguous row range per class, ascending class order.
    pub fn class_ranges(&self) -> Vec<(u32, Range<usize>)> {
        class_ranges(&self.labels)
    }

    /// Label multiset as per-class counts.
    pub fn class_counts(&self) -> BTreeMap<u32, usize> {
        let mut counts = BTreeMap::new();
        for &c in &self.labels {
            *counts.entry(c).or_insert(0) += 1;
        }
        counts
    }
}

fn class_ranges(labels: &[u32]) -> Vec<(u32, Range<usize>)> {
    let mut ranges: Vec<(u32, Range<usize>)> = Vec::new();
    for (i, &c) in labels.iter().enumerate() {
        match ranges.last_mut() {
            Some((last, range)) if *last == c => range.end = i + 1,
            _ => ranges.push((c, i..i + 1)),
        }
    }
    ranges
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Copy propagated feature rows of uniformly sampled same-class train nodes.
    Sample,
    /// Standard Gaussian entries.
    Noise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelAlloc {
    /// Largest-remainder apportionment of the budget over class counts,
    /// with at least one node per class.
    Proportional,
    /// Equal split, remainder to the smallest class ids.
    Balanced,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CondenseConfig {
    pub encoder_dim: usize,
    /// Random encoders in the first (label-only) phase.
    pub encoders_phase1: usize,
    /// Random encoders in the second (pseudo-label) phase.
    pub encoders_phase2: usize,
    pub iters_per_encoder: usize,
    pub feature_lr: f64,
    /// ReLU after the encoder layer; off for the linear-encoder ablation.
    pub encoder_activation: bool,
    pub init: InitMode,
    pub label_alloc: LabelAlloc,
    /// Confidence threshold for accepting pseudo labels.
    pub pl_threshold: f64,
    /// Run the pseudo-label phase at all; off reduces to plain distribution
    /// matching on labelled targets.
    pub pseudo_labels: bool,
    /// Start phase two from the phase-one features instead of re-initializing.
    pub warm_start_phase2: bool,
    pub hops: usize,
    pub self_loops: bool,
    pub seed: u64,
}

impl Default for CondenseConfig {
    fn default() -> Self {
        Self {
            encoder_dim: 4096,
            encoders_phase1: 1,
            encoders_phase2: 1,
            iters_per_encoder: 500,
            feature_lr: 0.001,
            encoder_activation: true,
            init: InitMode::Sample,
            label_alloc: LabelAlloc::Proportional,
            pl_threshold: 0.8,
            pseudo_labels: true,
            warm_start_phase2: true,
            hops: 1,
            self_loops: true,
            seed: 0,
        }
    }
}

impl CondenseConfig {
    /// Many small encoders instead of one wide pass; suited to
    /// high-dimensional features where one initialization undersamples the
    /// parameter space.
    pub fn many_encoders_preset() -> Self {
        Self {
            encoders_phase1: 50,
            encoders_phase2: 50,
            iters_per_encoder: 100,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.encoder_dim == 0
            || self.encoders_phase1 == 0
            || self.encoders_phase2 == 0
            || self.iters_per_encoder == 0
        {
            return Err(Error::Config("condense counts must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.pl_threshold) {
            return Err(Error::Config("pl_threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }

    fn encoder_activation(&self) -> Activation {
        if self.encoder_activation {
            Activation::Relu
        } else {
            Activation::None
        }
    }
}

/// Splits a per-task budget over the classes present.
pub fn allocate_budget(
    class_counts: &BTreeMap<u32, usize>,
    budget: usize,
    strategy: LabelAlloc,
) -> Result<BTreeMap<u32, usize>> {
    let k = class_counts.len();
    if k == 0 {
        return Err(Error::Validation("no classes to allocate".into()));
    }
    if budget < k {
        return Err(Error::Validation(format!("budget {budget} below class count {k}")));
    }
    let classes: Vec<u32> = class_counts.keys().copied().collect();
    let mut alloc: Vec<usize> = match strategy {
        LabelAlloc::Balanced => {
            let base = budget / k;
            let extra = budget % k;
            (0..k).map(|i| base + usize::from(i < extra)).collect()
        }
        LabelAlloc::Proportional => {
            let total: usize = class_counts.values().sum();
            let quotas: Vec<f64> = classes
                .iter()
                .map(|c| budget as f64 * class_counts[c] as f64 / total as f64)
                .collect();
            let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
            let mut remainders: Vec<(usize, f64)> = quotas
                .iter()
                .enumerate()
                .map(|(i, q)| (i, q - q.floor()))
                .collect();
            // Largest remainder first; ties to the smaller class id.
            remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            let mut deficit = budget - alloc.iter().sum::<usize>();
            for (i, _) in remainders {
                if deficit == 0 {
                    break;
                }
                alloc[i] += 1;
                deficit -= 1;
            }
            alloc
        }
    };
    // Every class keeps at least one slot, taken from the largest allocations.
    while let Some(zero) = alloc.iter().position(|&a| a == 0) {
        let donor = alloc
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap();
        alloc[donor] -= 1;
        alloc[zero] += 1;
    }
    Ok(classes.into_iter().zip(alloc).collect())
}

/// Condensation target set: node ids of the incoming graph plus the label
/// each contributes (true for train nodes, predicted for pseudo-labelled
/// ones), sorted by class then node id.
#[derive(Debug, Clone)]
pub struct Targets {
    pub nodes: Vec<u32>,
    pub labels: Vec<u32>,
}

impl Targets {
    pub fn new(mut pairs: Vec<(u32, u32)>) -> Self {
        pairs.sort_unstable_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(&b.0)));
        Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            labels: pairs.iter().map(|p| p.1).collect(),
        }
    }

    pub fn from_train_mask(task: &TaskSpec) -> Self {
        let pairs = task
            .incoming
            .train_ids()
            .into_iter()
            .map(|v| (v, task.incoming.label(v).expect("train nodes are labelled")))
            .collect();
        Self::new(pairs)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn class_counts(&self) -> BTreeMap<u32, usize> {
        let mut counts = BTreeMap::new();
        for &c in &self.labels {
            *counts.entry(c).or_insert(0) += 1;
        }
        counts
    }

    fn class_ranges(&self) -> Vec<(u32, Range<usize>)> {
        class_ranges(&self.labels)
    }
}

/// Initializes the synthetic graph for a task. `propagated` supplies the
/// rows copied in sample mode so that a budget covering every target once is
/// an exact fixed point of the matching loss.
pub fn init_condensed(
    task: &TaskSpec,
    propagated: &Matrix,
    budgets: &BTreeMap<u32, usize>,
    mode: InitMode,
    seed: u64,
) -> Result<CondensedGraph> {
    let mut rng = SplitMix64::new(derive_seed(seed, INIT_TAG));
    let feature_dim = propagated.cols();
    let mut labels = Vec::new();
    let mut rows: Vec<usize> = Vec::new();
    let mut noise: Option<Matrix> = None;
    let budget: usize = budgets.values().sum();
    if let InitMode::Noise = mode {
        let mut m = Matrix::zeros(budget, feature_dim);
        for v in m.as_mut_slice() {
            *v = rng.next_gaussian() as f32;
        }
        noise = Some(m);
    }
    for (&class, &b_c) in budgets {
        let train_of_class: Vec<u32> = task
            .incoming
            .train_ids()
            .into_iter()
            .filter(|&v| task.incoming.label(v) == Some(class))
            .collect();
        if train_of_class.is_empty() {
            return Err(Error::Validation(format!(
                "class {class} has a budget but no train nodes in task {}",
                task.task_id
            )));
        }
        labels.extend(std::iter::repeat_n(class, b_c));
        if let InitMode::Sample = mode {
            if b_c <= train_of_class.len() {
                let picks = rng.sample_indices(train_of_class.len(), b_c);
                rows.extend(picks.into_iter().map(|i| train_of_class[i] as usize));
            } else {
                log::warn!(
                    "class {class}: budget {b_c} exceeds {} train nodes, sampling with replacement",
                    train_of_class.len()
                );
                for _ in 0..b_c {
                    let i = rng.next_index(train_of_class.len());
                    rows.push(train_of_class[i] as usize);
                }
            }
        }
    }
    let features = match mode {
        InitMode::Sample => propagated.gather_rows(&rows),
        InitMode::Noise => noise.unwrap(),
    };
    CondensedGraph::new(task.task_id, features, labels)
}

/// Class-weighted squared distance between per-class mean embeddings, with
/// the analytic gradient w.r.t. every synthetic embedding row.
///
/// `loss = sum_c (n_c / n) * || mean(orig_c) - mean(synth_c) ||^2` where
/// `n_c` comes from `class_counts`; the gradient for a synthetic row of
/// class `c` is `(n_c / n) * 2 (mean(synth_c) - mean(orig_c)) / b_c`.
pub fn mmd_loss(
    orig_by_class: &[Matrix],
    synth_by_class: &[Matrix],
    class_counts: &[usize],
) -> Result<(f64, Vec<Matrix>)> {
    if orig_by_class.len() != synth_by_class.len() || orig_by_class.len() != class_counts.len() {
        return Err(Error::Dimension("per-class inputs must align".into()));
    }
    for (c, (orig, synth)) in orig_by_class.iter().zip(synth_by_class).enumerate() {
        if synth.rows() == 0 {
            return Err(Error::Validation(format!("class slot {c} missing on synthetic side")));
        }
        if orig.rows() == 0 {
            return Err(Error::Validation(format!("class slot {c} missing on original side")));
        }
        if orig.cols() != synth.cols() {
            return Err(Error::Dimension("embedding widths differ".into()));
        }
    }
    let n_total: usize = class_counts.iter().sum();
    let mut loss = 0.0f64;
    let mut grads = Vec::with_capacity(synth_by_class.len());
    for ((orig, synth), &n_c) in orig_by_class.iter().zip(synth_by_class).zip(class_counts) {
        let weight = n_c as f64 / n_total as f64;
        let all_orig: Vec<usize> = (0..orig.rows()).collect();
        let all_synth: Vec<usize> = (0..synth.rows()).collect();
        let mu = mean_rows_f64(orig, &all_orig);
        let mu_tilde = mean_rows_f64(synth, &all_synth);
        let mut sq = 0.0f64;
        let mut grad_row = vec![0.0f32; synth.cols()];
        let scale = weight * 2.0 / synth.rows() as f64;
        for d in 0..synth.cols() {
            let gap = mu[d] - mu_tilde[d];
            sq += gap * gap;
            grad_row[d] = (scale * (mu_tilde[d] - mu[d])) as f32;
        }
        loss += weight * sq;
        let mut g = Matrix::zeros(synth.rows(), synth.cols());
        for r in 0..synth.rows() {
            g.row_mut(r).copy_from_slice(&grad_row);
        }
        grads.push(g);
    }
    Ok((loss, grads))
}

/// One run of `n_encoders` random encoders over fixed targets, updating the
/// synthetic features by Adam on the matching loss. The original side is
/// embedded once per encoder; optimizer state resets with every re-seeded
/// encoder.
fn run_encoders(
    propagated: &Matrix,
    targets: &Targets,
    start: CondensedGraph,
    n_encoders: usize,
    phase_tag: u64,
    cfg: &CondenseConfig,
) -> Result<CondensedGraph> {
    let target_ranges = targets.class_ranges();
    let synth_ranges = start.class_ranges();
    if target_ranges.iter().map(|(c, _)| *c).ne(synth_ranges.iter().map(|(c, _)| *c)) {
        return Err(Error::Validation(
            "target classes differ from condensed label classes".into(),
        ));
    }
    let weights: Vec<f64> = {
        let n = targets.len() as f64;
        target_ranges.iter().map(|(_, r)| r.len() as f64 / n).collect()
    };
    let f_targets =
        propagated.gather_rows(&targets.nodes.iter().map(|&v| v as usize).collect::<Vec<_>>());

    let task_id = start.task_id();
    let labels = start.labels().to_vec();
    let mut x_tilde = start.features;
    for encoder_idx in 0..n_encoders {
        let enc_seed = derive_seed(cfg.seed, phase_tag ^ ((task_id as u64) << 20) ^ encoder_idx as u64);
        let encoder = ModelParams::init(
            &[propagated.cols(), cfg.encoder_dim],
            cfg.encoder_activation(),
            ActivationScope::AllLayers,
            enc_seed,
        )?;
        let orig_emb = nn::forward(&encoder, &f_targets)?;
        let orig_means: Vec<Vec<f64>> = target_ranges
            .iter()
            .map(|(_, r)| mean_rows_f64(&orig_emb, &r.clone().collect::<Vec<_>>()))
            .collect();
        let mut opt = Optimizer::new(OptimizerConfig {
            kind: OptKind::Adam,
            learning_rate: cfg.feature_lr,
        });
        for iter in 0..cfg.iters_per_encoder {
            let trace = nn::forward_traced(&encoder, &x_tilde)?;
            let synth_emb = trace.output();
            let mut loss = 0.0f64;
            let mut d_emb = Matrix::zeros(synth_emb.rows(), synth_emb.cols());
            for (k, (_, range)) in synth_ranges.iter().enumerate() {
                let rows: Vec<usize> = range.clone().collect();
                let mu_tilde = mean_rows_f64(synth_emb, &rows);
                let mut sq = 0.0f64;
                let scale = weights[k] * 2.0 / rows.len() as f64;
                let mut grad_row = vec![0.0f32; synth_emb.cols()];
                for d in 0..synth_emb.cols() {
                    let gap = orig_means[k][d] - mu_tilde[d];
                    sq += gap * gap;
                    grad_row[d] = (scale * (mu_tilde[d] - orig_means[k][d])) as f32;
                }
                loss += weights[k] * sq;
                for r in range.clone() {
                    d_emb.row_mut(r).copy_from_slice(&grad_row);
                }
            }
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "matching loss at encoder seed {enc_seed}, iteration {iter}"
                )));
            }
            let grads = nn::backward(&encoder, &x_tilde, &trace, &d_emb, true)?;
            opt.step_matrix(&mut x_tilde, grads.dx.as_ref().unwrap())?;
        }
    }
    CondensedGraph::new(task_id, x_tilde, labels)
}

/// Plain distribution-matching condensation on the train-labelled targets.
/// Performs exactly one propagation of the incoming graph.
pub fn condense_dm(
    task: &TaskSpec,
    budget: usize,
    cfg: &CondenseConfig,
) -> Result<CondensedGraph> {
    cfg.validate()?;
    let adj = NormalizedAdjacency::from_graph(&task.incoming, cfg.self_loops);
    let propagated = adj.propagate(task.incoming.features(), cfg.hops)?;
    condense_dm_on(task, propagated.values(), budget, cfg)
}

fn condense_dm_on(
    task: &TaskSpec,
    propagated: &Matrix,
    budget: usize,
    cfg: &CondenseConfig,
) -> Result<CondensedGraph> {
    let targets = Targets::from_train_mask(task);
    if targets.is_empty() {
        return Err(Error::Validation(format!("task {} has no train nodes", task.task_id)));
    }
    let budgets = allocate_budget(&targets.class_counts(), budget, cfg.label_alloc)?;
    let init = init_condensed(task, propagated, &budgets, cfg.init, cfg.seed)?;
    run_encoders(propagated, &targets, init, cfg.encoders_phase1, PHASE1_TAG, cfg)
}

/// Pseudo labels for the non-train nodes of a task.
#[derive(Debug, Clone)]
pub struct PseudoLabelResult {
    /// Evaluated nodes (everything outside the train mask), ascending.
    pub candidates: Vec<u32>,
    /// Predicted class per candidate.
    pub labels: Vec<u32>,
    /// Max-softmax confidence per candidate, in (0, 1].
    pub confidence: Vec<f32>,
    /// Confidence cleared the threshold.
    pub accepted: Vec<bool>,
    pub classifier: ModelParams,
}

impl PseudoLabelResult {
    /// Accepted (node, label) pairs.
    pub fn accepted_pairs(&self) -> Vec<(u32, u32)> {
        self.candidates
            .iter()
            .zip(&self.labels)
            .zip(&self.accepted)
            .filter_map(|((&v, &c), &ok)| ok.then_some((v, c)))
            .collect()
    }
}

/// Trains a classifier from scratch on the bank plus the fresh condensed
/// graph, then scores every non-train node of the task on its propagated
/// features. Nodes whose max-softmax confidence clears `threshold` are
/// marked accepted.
pub fn pseudo_label(
    task: &TaskSpec,
    bank: &MemoryBank,
    fresh: &CondensedGraph,
    propagated: &PropagatedFeatures,
    threshold: f64,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<PseudoLabelResult> {
    let (bank_rows, bank_labels) = bank.training_rows(train_cfg.eval_hops, train_cfg.self_loops)?;
    let mut rows: Vec<&Matrix> = Vec::new();
    if bank_rows.rows() > 0 {
        rows.push(&bank_rows);
    }
    rows.push(fresh.features());
    let x = Matrix::vstack(&rows)?;
    let mut labels: Vec<u32> = bank_labels;
    labels.extend_from_slice(fresh.labels());

    let mut classes: Vec<u32> = labels.clone();
    classes.sort_unstable();
    classes.dedup();
    let head_of: BTreeMap<u32, usize> =
        classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let y_head: Vec<usize> = labels.iter().map(|c| head_of[c]).collect();

    let (classifier, _) = fit_rows(
        &x,
        &y_head,
        classes.len(),
        train_cfg,
        derive_seed(seed, PL_TAG ^ task.task_id as u64),
    )?;

    let candidates: Vec<u32> = (0..task.incoming.num_nodes() as u32)
        .filter(|&v| !task.incoming.masks().train[v as usize])
        .collect();
    let mut pl_labels = Vec::with_capacity(candidates.len());
    let mut confidence = Vec::with_capacity(candidates.len());
    let mut accepted = Vec::with_capacity(candidates.len());
    if !candidates.is_empty() {
        let cand_rows = propagated
            .values()
            .gather_rows(&candidates.iter().map(|&v| v as usize).collect::<Vec<_>>());
        let logits = nn::forward(&classifier, &cand_rows)?;
        let probs = nn::softmax_rows(&logits);
        for i in 0..candidates.len() {
            let row = probs.row(i);
            let mut best = 0usize;
            for (j, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = j;
                }
            }
            pl_labels.push(classes[best]);
            confidence.push(row[best]);
            accepted.push(row[best] as f64 >= threshold);
        }
    }
    Ok(PseudoLabelResult { candidates, labels: pl_labels, confidence, accepted, classifier })
}

/// Two-phase pseudo-label-guided condensation.
///
/// Phase one condenses on train-labelled targets; a classifier trained on
/// the bank and the fresh graph then pseudo-labels confident non-train
/// nodes, and phase two re-condenses on the enlarged target set
/// (warm-started from phase one by default) with class weights recomputed
/// over the enlarged set. With no accepted pseudo labels the phase-one
/// result is returned unchanged.
pub fn condense_puma(
    task: &TaskSpec,
    bank: &MemoryBank,
    budget: usize,
    cfg: &CondenseConfig,
    train_cfg: &TrainConfig,
) -> Result<CondensedGraph> {
    cfg.validate()?;
    let adj = NormalizedAdjacency::from_graph(&task.incoming, cfg.self_loops);
    let propagated = adj.propagate(task.incoming.features(), cfg.hops)?;
    let phase1 = condense_dm_on(task, propagated.values(), budget, cfg)?;
    if !cfg.pseudo_labels {
        return Ok(phase1);
    }
    let plr =
        pseudo_label(task, bank, &phase1, &propagated, cfg.pl_threshold, train_cfg, cfg.seed)?;

    // Only classes that own synthetic slots can absorb extra targets.
    let synth_classes: Vec<u32> = phase1.class_ranges().iter().map(|(c, _)| *c).collect();
    let extra: Vec<(u32, u32)> = plr
        .accepted_pairs()
        .into_iter()
        .filter(|(_, c)| synth_classes.contains(c))
        .collect();
    if extra.is_empty() {
        return Ok(phase1);
    }

    let train = Targets::from_train_mask(task);
    let mut pairs: Vec<(u32, u32)> =
        train.nodes.iter().copied().zip(train.labels.iter().copied()).collect();
    pairs.extend(extra);
    let targets2 = Targets::new(pairs);

    let start = if cfg.warm_start_phase2 {
        phase1
    } else {
        let budgets = allocate_budget(
            &Targets::from_train_mask(task).class_counts(),
            budget,
            cfg.label_alloc,
        )?;
        init_condensed(task, propagated.values(), &budgets, cfg.init, cfg.seed)?
    };
    run_encoders(propagated.values(), &targets2, start, cfg.encoders_phase2, PHASE2_TAG, cfg)
}

/// Condensed-graph file: manifest plus a float blob for the features.
#[derive(Serialize, Deserialize)]
struct CondensedFile {
    format_version: u32,
    task_id: usize,
    budget: usize,
    labels: Vec<u32>,
    seed: u64,
    config_echo: serde_json::Value,
    features_b64: String,
    feature_dim: usize,
}

pub fn save_condensed(
    g: &CondensedGraph,
    cfg: &CondenseConfig,
    path: &Path,
) -> Result<()> {
    io::write_json(
        path,
        &CondensedFile {
            format_version: 1,
            task_id: g.task_id,
            budget: g.budget(),
            labels: g.labels.clone(),
            seed: cfg.seed,
            config_echo: serde_json::to_value(cfg)?,
            features_b64: io::encode_f32(g.features.as_slice()),
            feature_dim: g.features.cols(),
        },
    )
}

pub fn load_condensed(path: &Path) -> Result<CondensedGraph> {
    let f: CondensedFile = io::read_json(path)?;
    if f.format_version != 1 {
        return Err(Error::Format(format!("unsupported condensed version {}", f.format_version)));
    }
    if f.labels.len() != f.budget {
        return Err(Error::Format("budget disagrees with label count".into()));
    }
    let data = io::decode_f32(&f.features_b64, f.budget * f.feature_dim)?;
    CondensedGraph::new(f.task_id, Matrix::from_vec(f.budget, f.feature_dim, data)?, f.labels)
}
