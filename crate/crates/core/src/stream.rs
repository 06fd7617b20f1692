//! Class-incremental task streams.
//!
//! [`split_stream`] partitions a labeled graph into consecutive tasks of
//! `classes_per_task` classes each, induces the per-task incoming graph on
//! that task's nodes (so no edge ever crosses tasks), assigns
//! train/val/test masks per class through a seeded shuffle, and can hide a
//! fraction of labels per class to exercise the semi-supervised setting.
//! [`generate_sbm`] produces desk-scale stochastic-block-model graphs with
//! Gaussian per-class feature centers.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Masks};
use crate::io;
use crate::linalg::Matrix;
use crate::rng::{derive_seed, SplitMix64};

/// One task of the stream: its class set and the incoming graph
/// (transductive, intra-task edges only, local node ids).
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub task_id: usize,
    pub classes: Vec<u32>,
    pub incoming: Graph,
    /// Maps local node ids back to the source graph.
    pub source_nodes: Vec<u32>,
}

/// Ordered tasks plus the provenance needed to rebuild them.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    pub tasks: Vec<TaskSpec>,
    pub class_order: Vec<u32>,
    pub seed: u64,
}

impl TaskStream {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Train-mask node count summed over all tasks.
    pub fn total_train_nodes(&self) -> usize {
        self.tasks.iter().map(|t| t.incoming.train_ids().len()).sum()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamConfig {
    pub classes_per_task: usize,
    /// Train/val/test fractions; must sum to 1.
    pub ratios: [f64; 3],
    /// Fraction of each class's nodes whose labels are hidden (they stay in
    /// the incoming graph as unlabelled pseudo-label candidates).
    pub unlabel_fraction: f64,
    /// Permute the class-to-task order with the seed instead of ascending ids.
    pub permute_classes: bool,
    pub seed: u64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            classes_per_task: 2,
            ratios: [0.6, 0.2, 0.2],
            unlabel_fraction: 0.0,
            permute_classes: false,
            seed: 0,
        }
    }
}

impl StreamConfig {
    fn validate(&self) -> Result<()> {
        if self.classes_per_task == 0 {
            return Err(Error::Config("classes_per_task must be positive".into()));
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.ratios.iter().any(|&r| r < 0.0) {
            return Err(Error::Config("mask ratios must be non-negative and sum to 1".into()));
        }
        if !(0.0..=1.0).contains(&self.unlabel_fraction) {
            return Err(Error::Config("unlabel_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Splits `g` into a class-incremental stream. Classes are grouped in
/// ascending id order (or a seeded permutation) into consecutive tasks; a
/// trailing remainder smaller than `classes_per_task` is dropped with a
/// notice. Deterministic in `(g, config)`.
pub fn split_stream(g: &Graph, config: &StreamConfig) -> Result<TaskStream> {
    config.validate()?;
    let mut class_order = g.class_set();
    if class_order.len() < config.classes_per_task {
        return Err(Error::Validation(format!(
            "{} labelled classes cannot fill a {}-class task",
            class_order.len(),
            config.classes_per_task
        )));
    }
    if config.permute_classes {
        SplitMix64::new(derive_seed(config.seed, 0xc1a55)).shuffle(&mut class_order);
    }
    let n_tasks = class_order.len() / config.classes_per_task;
    if !class_order.len().is_multiple_of(config.classes_per_task) {
        log::warn!(
            "dropping {} trailing classes that cannot fill a task",
            class_order.len() % config.classes_per_task
        );
        class_order.truncate(n_tasks * config.classes_per_task);
    }

    let mut tasks = Vec::with_capacity(n_tasks);
    for k in 0..n_tasks {
        let classes: Vec<u32> =
            class_order[k * config.classes_per_task..(k + 1) * config.classes_per_task].to_vec();
        let mut members: Vec<u32> = (0..g.num_nodes() as u32)
            .filter(|&v| g.label(v).is_some_and(|c| classes.contains(&c)))
            .collect();
        members.sort_unstable();
        if members.is_empty() {
            return Err(Error::Validation(format!("task {k} has no nodes")));
        }
        let incoming = g.induced_subgraph(&members)?;

        // Per-class label hiding, then a per-class shuffled 60/20/20 split
        // of the remaining labelled nodes.
        let mut labels: Vec<Option<u32>> = incoming.labels().to_vec();
        let mut masks = Masks::empty(incoming.num_nodes());
        for &class in &classes {
            let mut nodes: Vec<usize> =
                (0..incoming.num_nodes()).filter(|&v| labels[v] == Some(class)).collect();
            let mut rng =
                SplitMix64::new(derive_seed(config.seed, (k as u64) << 32 | class as u64));
            if config.unlabel_fraction > 0.0 {
                let hide = ((nodes.len() as f64) * config.unlabel_fraction).floor() as usize;
                rng.shuffle(&mut nodes);
                for &v in nodes.iter().take(hide) {
                    labels[v] = None;
                }
                nodes.drain(..hide);
                nodes.sort_unstable();
            }
            if nodes.len() < 5 {
                log::warn!("class {class} in task {k} has only {} labelled nodes", nodes.len());
            }
            rng.shuffle(&mut nodes);
            let n = nodes.len();
            let n_train = ((n as f64 * config.ratios[0]).floor() as usize).max(1).min(n);
            let n_val = ((n as f64 * config.ratios[1]).floor() as usize).min(n - n_train);
            for (pos, &v) in nodes.iter().enumerate() {
                if pos < n_train {
                    masks.train[v] = true;
                } else if pos < n_train + n_val {
                    masks.val[v] = true;
                } else {
                    masks.test[v] = true;
                }
            }
        }
        let incoming = Graph::new(
            incoming.features().clone(),
            &incoming.undirected_edges().collect::<Vec<_>>(),
            labels,
            masks,
        )?;
        tasks.push(TaskSpec { task_id: k, classes, incoming, source_nodes: members });
    }
    Ok(TaskStream { tasks, class_order, seed: config.seed })
}

/// Stochastic-block-model generator configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SbmConfig {
    pub classes: usize,
    pub nodes_per_class: usize,
    pub feature_dim: usize,
    pub intra_p: f64,
    pub inter_p: f64,
    /// Scale of the per-class Gaussian feature centers.
    pub class_mean_scale: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            nodes_per_class: 200,
            feature_dim: 16,
            intra_p: 0.1,
            inter_p: 0.01,
            class_mean_scale: 1.0,
            noise_std: 0.5,
            seed: 0,
        }
    }
}

impl SbmConfig {
    fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.nodes_per_class == 0 || self.feature_dim == 0 {
            return Err(Error::Config("SBM dimensions must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.intra_p)
            || !(0.0..=1.0).contains(&self.inter_p)
            || self.inter_p > self.intra_p
        {
            return Err(Error::Config("need 0 <= inter_p <= intra_p <= 1".into()));
        }
        Ok(())
    }
}

/// Generates a fully labelled SBM graph: per-class centers drawn once,
/// features center + Gaussian noise, undirected Bernoulli edges.
pub fn generate_sbm(cfg: &SbmConfig) -> Result<Graph> {
    cfg.validate()?;
    let n = cfg.classes * cfg.nodes_per_class;
    let mut center_rng = SplitMix64::new(derive_seed(cfg.seed, 0x5b3c));
    let centers: Vec<Vec<f64>> = (0..cfg.classes)
        .map(|_| {
            (0..cfg.feature_dim)
                .map(|_| cfg.class_mean_scale * center_rng.next_gaussian())
                .collect()
        })
        .collect();

    let mut feat_rng = SplitMix64::new(derive_seed(cfg.seed, 0xfea7));
    let mut data = Vec::with_capacity(n * cfg.feature_dim);
    let mut labels = Vec::with_capacity(n);
    for node in 0..n {
        let class = node / cfg.nodes_per_class;
        labels.push(Some(class as u32));
        for &center in &centers[class] {
            data.push((center + cfg.noise_std * feat_rng.next_gaussian()) as f32);
        }
    }

    let mut edge_rng = SplitMix64::new(derive_seed(cfg.seed, 0xed9e));
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if u / cfg.nodes_per_class == v / cfg.nodes_per_class {
                cfg.intra_p
            } else {
                cfg.inter_p
            };
            if p > 0.0 && edge_rng.next_bool(p) {
                edges.push((u as u32, v as u32));
            }
        }
    }
    Graph::new(
        Matrix::from_vec(n, cfg.feature_dim, data)?,
        &edges,
        labels,
        Masks::empty(n),
    )
}

/// On-disk stream manifest: enough to rebuild every task from the source
/// graph without re-running the split.
#[derive(Serialize, Deserialize)]
struct StreamManifest {
    format_version: u32,
    seed: u64,
    class_order: Vec<u32>,
    tasks: Vec<TaskManifest>,
}

#[derive(Serialize, Deserialize)]
struct TaskManifest {
    task_id: usize,
    classes: Vec<u32>,
    source_nodes: Vec<u32>,
    train: Vec<u32>,
    val: Vec<u32>,
    test: Vec<u32>,
    unlabelled: Vec<u32>,
}

pub fn save_stream(stream: &TaskStream, path: &Path) -> Result<()> {
    let manifest = StreamManifest {
        format_version: 1,
        seed: stream.seed,
        class_order: stream.class_order.clone(),
        tasks: stream
            .tasks
            .iter()
            .map(|t| TaskManifest {
                task_id: t.task_id,
                classes: t.classes.clone(),
                source_nodes: t.source_nodes.clone(),
                train: t.incoming.train_ids(),
                val: t.incoming.val_ids(),
                test: t.incoming.test_ids(),
                unlabelled: (0..t.incoming.num_nodes() as u32)
                    .filter(|&v| t.incoming.label(v).is_none())
                    .collect(),
            })
            .collect(),
    };
    io::write_json(path, &manifest)
}

/// Rebuilds a stream from its manifest and the source graph it was split from.
pub fn load_stream(source: &Graph, path: &Path) -> Result<TaskStream> {
    let manifest: StreamManifest = io::read_json(path)?;
    if manifest.format_version != 1 {
        return Err(Error::Format(format!(
            "unsupported stream manifest version {}",
            manifest.format_version
        )));
    }
    let mut tasks = Vec::with_capacity(manifest.tasks.len());
    for t in manifest.tasks {
        let induced = source.induced_subgraph(&t.source_nodes)?;
        let n = induced.num_nodes();
        let mut labels: Vec<Option<u32>> = induced.labels().to_vec();
        for &v in &t.unlabelled {
            if v as usize >= n {
                return Err(Error::Format("unlabelled id out of range".into()));
            }
            labels[v as usize] = None;
        }
        let mut masks = Masks::empty(n);
        for (ids, target) in
            [(&t.train, &mut masks.train), (&t.val, &mut masks.val), (&t.test, &mut masks.test)]
        {
            for &v in ids {
                if v as usize >= n {
                    return Err(Error::Format("mask id out of range".into()));
                }
                target[v as usize] = true;
            }
        }
        let incoming = Graph::new(
            induced.features().clone(),
            &induced.undirected_edges().collect::<Vec<_>>(),
            labels,
            masks,
        )?;
        tasks.push(TaskSpec {
            task_id: t.task_id,
            classes: t.classes,
            incoming,
            source_nodes: t.source_nodes,
        });
    }
    Ok(TaskStream { tasks, class_order: manifest.class_order, seed: manifest.seed })
}

/// Labelled node count per class over the train mask of `g`.
pub fn train_class_counts(g: &Graph) -> BTreeMap<u32, usize> {
    let mut counts = BTreeMap::new();
    for v in g.train_ids() {
        if let Some(c) = g.label(v) {
            *counts.entry(c).or_insert(0) += 1;
        }
    }
    counts
}
