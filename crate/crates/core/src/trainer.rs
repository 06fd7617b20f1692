//! Continual training over a task stream.
//!
//! Replay strategies build a memory bank entry per task and, under
//! train-in-memory, fit the classifier on the bank alone; retraining
//! re-initializes all weights before each task's fit. Finetuning (train on
//! the incoming graph only) and joint training (from scratch on every task
//! so far) bracket the replay methods from below and above. Evaluation
//! fills one row of the lower-triangular performance matrix per task,
//! under either class-incremental or task-incremental prediction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::condense::{
    allocate_budget, condense_dm, condense_puma, CondenseConfig,
};
use crate::error::{Error, Result};
use crate::graph::{Graph, NormalizedAdjacency};
use crate::instrument;
use crate::linalg::Matrix;
use crate::memory::{
    plan_budgets, sample_balanced_mean, sample_random_nodes, sparsify_subgraph, BudgetSpec,
    MemoryBank, MemoryKind, ReplayEntry,
};
use crate::metrics::{accuracy, PerformanceMatrix};
use crate::nn::{
    self, Activation, ActivationScope, ModelParams, OptKind, Optimizer, OptimizerConfig,
};
use crate::rng::derive_seed;
use crate::stream::{train_class_counts, TaskStream};

const FIT_TAG: u64 = 0x7a11_0001;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Hidden widths of the classifier MLP (output head grows with the
    /// classes seen).
    pub hidden_dims: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptKind,
    /// Re-initialize all weights before fitting each task.
    pub retrain: bool,
    /// Train on the memory bank only; off trains on the incoming graph
    /// pooled with the bank (the imbalanced regime).
    pub tim: bool,
    /// Propagation hops for test-time features and for edged bank entries.
    pub eval_hops: usize,
    pub self_loops: bool,
    /// Early stop after this many consecutive epochs without the training
    /// loss improving by at least `min_delta`.
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_dims: vec![512, 512],
            epochs: 500,
            learning_rate: 0.01,
            optimizer: OptKind::Adam,
            retrain: true,
            tim: true,
            eval_hops: 1,
            self_loops: true,
            patience: 20,
            min_delta: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::Config("zero hidden dimension".into()));
        }
        Ok(())
    }
}

/// What supplies the replay data (or scheme, for the two non-replay
/// baselines) during a continual run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BankStrategy {
    Puma,
    Cat,
    Random,
    Balanced,
    Sparsified,
    Finetune,
    Joint,
}

impl BankStrategy {
    pub const ALL: [BankStrategy; 7] = [
        BankStrategy::Puma,
        BankStrategy::Cat,
        BankStrategy::Random,
        BankStrategy::Balanced,
        BankStrategy::Sparsified,
        BankStrategy::Finetune,
        BankStrategy::Joint,
    ];

    pub fn builds_bank(&self) -> bool {
        self.memory_kind().is_some()
    }

    fn memory_kind(&self) -> Option<MemoryKind> {
        match self {
            BankStrategy::Puma | BankStrategy::Cat => Some(MemoryKind::Condensed),
            BankStrategy::Random => Some(MemoryKind::RandomNodes),
            BankStrategy::Balanced => Some(MemoryKind::BalancedNodes),
            BankStrategy::Sparsified => Some(MemoryKind::SparsifiedSubgraph),
            BankStrategy::Finetune | BankStrategy::Joint => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BankStrategy::Puma => "puma",
            BankStrategy::Cat => "cat",
            BankStrategy::Random => "random",
            BankStrategy::Balanced => "balanced",
            BankStrategy::Sparsified => "sparsified",
            BankStrategy::Finetune => "finetune",
            BankStrategy::Joint => "joint",
        }
    }
}

impl std::str::FromStr for BankStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown bank strategy '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    ClassIl,
    TaskIl,
}

impl EvalMode {
    pub fn name(&self) -> &'static str {
        match self {
            EvalMode::ClassIl => "class_il",
            EvalMode::TaskIl => "task_il",
        }
    }
}

impl std::str::FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "class_il" | "class-il" => Ok(EvalMode::ClassIl),
            "task_il" | "task-il" => Ok(EvalMode::TaskIl),
            other => Err(Error::Config(format!("unknown eval mode '{other}'"))),
        }
    }
}

/// Mutable state carried across tasks.
#[derive(Debug, Clone)]
pub struct ContinualState {
    pub params: Option<ModelParams>,
    pub bank: MemoryBank,
    /// Classes in first-seen order; the head column of a class is its
    /// position here.
    pub classes_seen: Vec<u32>,
    /// Training-loss curve per fitted task.
    pub loss_curves: Vec<Vec<f64>>,
}

/// Full-batch training of `params` on `(x, y_head)` with plateau early
/// stop; returns the per-epoch loss curve.
pub fn fit_params(
    params: &mut ModelParams,
    x: &Matrix,
    y_head: &[usize],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if x.rows() == 0 {
        return Err(Error::Validation("no training rows".into()));
    }
    let classes = params.output_dim();
    if y_head.iter().any(|&y| y >= classes) {
        return Err(Error::Validation("label outside the model head".into()));
    }
    let mut opt = Optimizer::new(OptimizerConfig {
        kind: cfg.optimizer,
        learning_rate: cfg.learning_rate,
    });
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut best = f64::INFINITY;
    let mut streak = 0usize;
    for _ in 0..cfg.epochs {
        let trace = nn::forward_traced(params, x)?;
        let (loss, dlogits) = nn::softmax_xent(trace.output(), y_head)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("training loss".into()));
        }
        let grads = nn::backward(params, x, &trace, &dlogits, false)?;
        opt.step_params(params, &grads)?;
        curve.push(loss);
        if loss < best - cfg.min_delta {
            best = loss;
            streak = 0;
        } else {
            streak += 1;
            if streak >= cfg.patience {
                break;
            }
        }
    }
    Ok(curve)
}

/// Trains a fresh classifier on plain rows. `y_head` are head indices in
/// `0..n_classes`.
pub fn fit_rows(
    x: &Matrix,
    y_head: &[usize],
    n_classes: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(ModelParams, Vec<f64>)> {
    let mut dims = vec![x.cols()];
    dims.extend_from_slice(&cfg.hidden_dims);
    dims.push(n_classes);
    let mut params =
        ModelParams::init(&dims, Activation::Relu, ActivationScope::HiddenOnly, seed)?;
    let curve = fit_params(&mut params, x, y_head, cfg)?;
    Ok((params, curve))
}

fn head_index(classes_seen: &[u32]) -> BTreeMap<u32, usize> {
    classes_seen.iter().enumerate().map(|(i, &c)| (c, i)).collect()
}

/// Fits the continual model on the memory bank alone. With retraining the
/// parameters are re-initialized from a task-derived seed first; otherwise
/// the previous parameters continue with the head grown to the classes
/// seen.
pub fn fit_on_memory(
    state: &mut ContinualState,
    task_id: usize,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    if state.bank.is_empty() {
        return Err(Error::Validation("memory bank is empty".into()));
    }
    let (rows, labels) = state.bank.training_rows(cfg.eval_hops, cfg.self_loops)?;
    let head = head_index(&state.classes_seen);
    let y: Vec<usize> = labels
        .iter()
        .map(|c| {
            head.get(c).copied().ok_or_else(|| {
                Error::Validation(format!("bank holds class {c} not yet marked as seen"))
            })
        })
        .collect::<Result<_>>()?;
    let seed = derive_seed(cfg.seed, FIT_TAG ^ task_id as u64);
    let curve = if cfg.retrain || state.params.is_none() {
        let (params, curve) = fit_rows(&rows, &y, state.classes_seen.len(), cfg, seed)?;
        state.params = Some(params);
        curve
    } else {
        let mut params =
            state.params.take().unwrap().grow_head(state.classes_seen.len(), seed)?;
        let curve = fit_params(&mut params, &rows, &y, cfg)?;
        state.params = Some(params);
        curve
    };
    Ok(curve)
}

/// Predicts a global class per row. `restrict` limits the argmax to the
/// given classes (task-incremental mode); ties break toward the lowest
/// class id.
pub fn predict_rows(
    params: &ModelParams,
    rows: &Matrix,
    classes_seen: &[u32],
    restrict: Option<&[u32]>,
) -> Result<Vec<u32>> {
    if params.output_dim() != classes_seen.len() {
        return Err(Error::Dimension("head width differs from classes seen".into()));
    }
    let allowed: Vec<usize> = match restrict {
        None => (0..classes_seen.len()).collect(),
        Some(classes) => classes
            .iter()
            .map(|c| {
                classes_seen.iter().position(|s| s == c).ok_or_else(|| {
                    Error::Validation(format!("task class {c} has not been seen"))
                })
            })
            .collect::<Result<_>>()?,
    };
    let logits = nn::forward(params, rows)?;
    let mut out = Vec::with_capacity(rows.rows());
    for i in 0..rows.rows() {
        let row = logits.row(i);
        let mut best: Option<(f32, u32)> = None;
        for &h in &allowed {
            let candidate = (row[h], classes_seen[h]);
            best = Some(match best {
                None => candidate,
                Some(cur) => {
                    if candidate.0 > cur.0 || (candidate.0 == cur.0 && candidate.1 < cur.1) {
                        candidate
                    } else {
                        cur
                    }
                }
            });
        }
        out.push(best.expect("non-empty head").1);
    }
    Ok(out)
}

/// Graph-level prediction: propagates `hops` steps, then classifies every
/// node under the chosen mode.
pub fn predict(
    params: &ModelParams,
    g: &Graph,
    adj: &NormalizedAdjacency,
    hops: usize,
    classes_seen: &[u32],
    mode: EvalMode,
    task_classes: Option<&[u32]>,
) -> Result<Vec<u32>> {
    let restrict = match mode {
        EvalMode::ClassIl => None,
        EvalMode::TaskIl => Some(
            task_classes.ok_or_else(|| Error::Config("task-IL needs task classes".into()))?,
        ),
    };
    let f = adj.propagate(g.features(), hops)?;
    predict_rows(params, f.values(), classes_seen, restrict)
}

/// Everything a continual run needs besides the stream itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSpec {
    pub strategy: BankStrategy,
    pub mode: EvalMode,
    pub train: TrainConfig,
    pub condense: CondenseConfig,
    pub budget: BudgetSpec,
    /// Edge keep probability for the sparsified-subgraph bank.
    pub edge_keep_ratio: f64,
}

impl RunSpec {
    pub fn new(strategy: BankStrategy, mode: EvalMode) -> Self {
        Self {
            strategy,
            mode,
            train: TrainConfig::default(),
            condense: CondenseConfig::default(),
            budget: BudgetSpec::Ratio(0.005),
            edge_keep_ratio: 0.5,
        }
    }
}

/// Stepwise continual run; one `step` handles one task end to end
/// (memorize, fit, evaluate), so callers can checkpoint between tasks and
/// resume from a completed prefix.
pub struct ContinualRun<'a> {
    stream: &'a TaskStream,
    spec: RunSpec,
    budgets: Vec<usize>,
    state: ContinualState,
    matrix: PerformanceMatrix,
    eval_features: Vec<Option<Matrix>>,
    next_task: usize,
}

impl<'a> ContinualRun<'a> {
    pub fn new(stream: &'a TaskStream, spec: RunSpec) -> Result<Self> {
        spec.train.validate()?;
        if stream.tasks.is_empty() {
            return Err(Error::Validation("empty task stream".into()));
        }
        let budgets = plan_budgets(stream, &spec.budget)?;
        let kind = spec.strategy.memory_kind().unwrap_or(MemoryKind::Condensed);
        Ok(Self {
            stream,
            spec,
            budgets,
            state: ContinualState {
                params: None,
                bank: MemoryBank::new(kind),
                classes_seen: Vec::new(),
                loss_curves: Vec::new(),
            },
            matrix: PerformanceMatrix::new(),
            eval_features: vec![None; stream.tasks.len()],
            next_task: 0,
        })
    }

    /// Rebuilds a run that already completed the tasks covered by `matrix`.
    /// The bank must hold exactly those tasks; classes seen are re-derived
    /// from the stream prefix.
    pub fn resume(
        stream: &'a TaskStream,
        spec: RunSpec,
        params: Option<ModelParams>,
        bank: MemoryBank,
        matrix: PerformanceMatrix,
    ) -> Result<Self> {
        let done = matrix.num_rows();
        if done > stream.tasks.len() {
            return Err(Error::Validation("matrix has more rows than the stream has tasks".into()));
        }
        if spec.strategy.builds_bank() && bank.len() != done {
            return Err(Error::Validation(format!(
                "bank holds {} tasks but the matrix covers {done}",
                bank.len()
            )));
        }
        let mut run = Self::new(stream, spec)?;
        for task in &stream.tasks[..done] {
            extend_first_seen(&mut run.state.classes_seen, &task.classes);
        }
        if let Some(p) = &params {
            if p.output_dim() != run.state.classes_seen.len() {
                return Err(Error::Validation("checkpoint head width mismatch".into()));
            }
        }
        run.state.params = params;
        run.state.bank = bank;
        run.matrix = matrix;
        run.next_task = done;
        Ok(run)
    }

    pub fn is_done(&self) -> bool {
        self.next_task >= self.stream.tasks.len()
    }

    pub fn next_task(&self) -> usize {
        self.next_task
    }

    pub fn state(&self) -> &ContinualState {
        &self.state
    }

    pub fn matrix(&self) -> &PerformanceMatrix {
        &self.matrix
    }

    pub fn into_parts(self) -> (ContinualState, PerformanceMatrix) {
        (self.state, self.matrix)
    }

    fn ensure_eval_features(&mut self, task_idx: usize) -> Result<()> {
        if self.eval_features[task_idx].is_none() {
            let g = &self.stream.tasks[task_idx].incoming;
            let adj = NormalizedAdjacency::from_graph(g, self.spec.train.self_loops);
            let f = adj.propagate(g.features(), self.spec.train.eval_hops)?;
            self.eval_features[task_idx] = Some(f.values().clone());
        }
        Ok(())
    }

    /// Propagated train rows and labels of one task's incoming graph.
    fn incoming_train_rows(&mut self, task_idx: usize) -> Result<(Matrix, Vec<u32>)> {
        instrument::count_incoming_rows();
        self.ensure_eval_features(task_idx)?;
        let task = &self.stream.tasks[task_idx];
        let ids = task.incoming.train_ids();
        let rows = self.eval_features[task_idx]
            .as_ref()
            .unwrap()
            .gather_rows(&ids.iter().map(|&v| v as usize).collect::<Vec<_>>());
        let labels =
            ids.iter().map(|&v| task.incoming.label(v).expect("train nodes labelled")).collect();
        Ok((rows, labels))
    }

    fn build_entry(&mut self, k: usize) -> Result<Option<ReplayEntry>> {
        let spec = self.spec.clone();
        let task = &self.stream.tasks[k];
        let budget = self.budgets[k];
        let mut ccfg = spec.condense.clone();
        ccfg.pseudo_labels = matches!(spec.strategy, BankStrategy::Puma) && ccfg.pseudo_labels;
        let entry = match spec.strategy {
            BankStrategy::Puma => Some(ReplayEntry::Condensed(condense_puma(
                task,
                &self.state.bank,
                budget,
                &ccfg,
                &spec.train,
            )?)),
            BankStrategy::Cat => {
                Some(ReplayEntry::Condensed(condense_dm(task, budget, &ccfg)?))
            }
            BankStrategy::Random | BankStrategy::Balanced | BankStrategy::Sparsified => {
                let alloc = allocate_budget(
                    &train_class_counts(&task.incoming),
                    budget,
                    ccfg.label_alloc,
                )?;
                let sampled = match spec.strategy {
                    BankStrategy::Random => {
                        sample_random_nodes(task, &alloc, ccfg.hops, ccfg.self_loops, ccfg.seed)?
                    }
                    BankStrategy::Balanced => {
                        sample_balanced_mean(task, &alloc, ccfg.hops, ccfg.self_loops)?
                    }
                    _ => sparsify_subgraph(task, &alloc, spec.edge_keep_ratio, ccfg.seed)?,
                };
                Some(ReplayEntry::Sampled(sampled))
            }
            BankStrategy::Finetune | BankStrategy::Joint => None,
        };
        Ok(entry)
    }

    /// Processes the next task: memorize, fit, and evaluate all tasks so far.
    pub fn step(&mut self) -> Result<()> {
        if self.is_done() {
            return Err(Error::Validation("stream already finished".into()));
        }
        let k = self.next_task;
        if let Some(entry) = self.build_entry(k)? {
            self.state.bank = self.state.bank.update(entry)?;
        }
        let classes = self.stream.tasks[k].classes.clone();
        extend_first_seen(&mut self.state.classes_seen, &classes);

        let cfg = self.spec.train.clone();
        let seed = derive_seed(cfg.seed, FIT_TAG ^ k as u64);
        let head_classes = self.state.classes_seen.clone();
        let head = head_index(&head_classes);
        let curve = match self.spec.strategy {
            BankStrategy::Finetune => {
                let (rows, labels) = self.incoming_train_rows(k)?;
                let y: Vec<usize> = labels.iter().map(|c| head[c]).collect();
                let mut params = match self.state.params.take() {
                    Some(p) => p.grow_head(head_classes.len(), seed)?,
                    None => fresh_params(rows.cols(), &cfg, head_classes.len(), seed)?,
                };
                let curve = fit_params(&mut params, &rows, &y, &cfg)?;
                self.state.params = Some(params);
                curve
            }
            BankStrategy::Joint => {
                let mut mats = Vec::with_capacity(k + 1);
                let mut labels: Vec<u32> = Vec::new();
                for j in 0..=k {
                    let (rows, l) = self.incoming_train_rows(j)?;
                    mats.push(rows);
                    labels.extend(l);
                }
                let refs: Vec<&Matrix> = mats.iter().collect();
                let x = Matrix::vstack(&refs)?;
                let y: Vec<usize> = labels.iter().map(|c| head[c]).collect();
                let (params, curve) = fit_rows(&x, &y, head_classes.len(), &cfg, seed)?;
                self.state.params = Some(params);
                curve
            }
            _ if cfg.tim => fit_on_memory(&mut self.state, k, &cfg)?,
            _ => {
                // Pooled regime: the incoming graph and the bank as one
                // uniformly weighted batch.
                let (inc_rows, inc_labels) = self.incoming_train_rows(k)?;
                let (bank_rows, bank_labels) =
                    self.state.bank.training_rows(cfg.eval_hops, cfg.self_loops)?;
                let x = if bank_rows.rows() > 0 {
                    Matrix::vstack(&[&inc_rows, &bank_rows])?
                } else {
                    inc_rows
                };
                let mut labels = inc_labels;
                labels.extend(bank_labels);
                let y: Vec<usize> = labels.iter().map(|c| head[c]).collect();
                
                if cfg.retrain || self.state.params.is_none() {
                    let (params, curve) = fit_rows(&x, &y, head_classes.len(), &cfg, seed)?;
                    self.state.params = Some(params);
                    curve
                } else {
                    let mut params =
                        self.state.params.take().unwrap().grow_head(head_classes.len(), seed)?;
                    let curve = fit_params(&mut params, &x, &y, &cfg)?;
                    self.state.params = Some(params);
                    curve
                }
            }
        };
        self.state.loss_curves.push(curve);

        let mut row = Vec::with_capacity(k + 1);
        for j in 0..=k {
            self.ensure_eval_features(j)?;
            let task = &self.stream.tasks[j];
            let restrict = match self.spec.mode {
                EvalMode::ClassIl => None,
                EvalMode::TaskIl => Some(task.classes.as_slice()),
            };
            let pred = predict_rows(
                self.state.params.as_ref().unwrap(),
                self.eval_features[j].as_ref().unwrap(),
                &head_classes,
                restrict,
            )?;
            row.push(accuracy(&pred, task.incoming.labels(), &task.incoming.masks().test)?);
        }
        self.matrix.push_row(row)?;
        self.next_task += 1;
        Ok(())
    }
}

fn fresh_params(
    input_dim: usize,
    cfg: &TrainConfig,
    n_classes: usize,
    seed: u64,
) -> Result<ModelParams> {
    let mut dims = vec![input_dim];
    dims.extend_from_slice(&cfg.hidden_dims);
    dims.push(n_classes);
    ModelParams::init(&dims, Activation::Relu, ActivationScope::HiddenOnly, seed)
}

fn extend_first_seen(seen: &mut Vec<u32>, classes: &[u32]) {
    for &c in classes {
        if !seen.contains(&c) {
            seen.push(c);
        }
    }
}

/// Runs the whole stream under `spec`.
pub fn run_continual(
    stream: &TaskStream,
    spec: RunSpec,
) -> Result<(ContinualState, PerformanceMatrix)> {
    let mut run = ContinualRun::new(stream, spec)?;
    while !run.is_done() {
        run.step()?;
    }
    Ok(run.into_parts())
}
