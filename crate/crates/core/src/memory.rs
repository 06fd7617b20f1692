//! Replay memory banks.
//!
//! A bank is an immutable ordered collection of per-task replay graphs,
//! either condensed (edge-free, synthetic) or sampled from the incoming
//! graph (node features copied verbatim, optionally with a sparsified edge
//! set). Every kind exposes the same training view: feature rows plus
//! labels, with edged entries propagated once before consumption.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::condense::CondensedGraph;
use crate::error::{Error, Result};
use crate::graph::{Graph, Masks, NormalizedAdjacency};
use crate::instrument;
use crate::io;
use crate::linalg::{dot_f64, Matrix};
use crate::rng::{derive_seed, SplitMix64};
use crate::stream::{TaskSpec, TaskStream};

const SAMPLE_TAG: u64 = 0x3a3b_0001;
const EDGE_TAG: u64 = 0x3a3b_0002;

/// Nodes sampled from an incoming graph, with raw features and an optional
/// (possibly sparsified) intra-sample edge set in local ids.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledGraph {
    pub task_id: usize,
    pub features: Matrix,
    pub labels: Vec<u32>,
    pub edges: Vec<(u32, u32)>,
    /// Node ids in the incoming graph the rows were copied from.
    pub source_nodes: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReplayEntry {
    Condensed(CondensedGraph),
    Sampled(SampledGraph),
}

impl ReplayEntry {
    pub fn task_id(&self) -> usize {
        match self {
            ReplayEntry::Condensed(g) => g.task_id(),
            ReplayEntry::Sampled(g) => g.task_id,
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            ReplayEntry::Condensed(g) => g.budget(),
            ReplayEntry::Sampled(g) => g.labels.len(),
        }
    }

    pub fn labels(&self) -> &[u32] {
        match self {
            ReplayEntry::Condensed(g) => g.labels(),
            ReplayEntry::Sampled(g) => &g.labels,
        }
    }

    fn has_edges(&self) -> bool {
        matches!(self, ReplayEntry::Sampled(g) if !g.edges.is_empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryKind {
    Condensed,
    RandomNodes,
    BalancedNodes,
    SparsifiedSubgraph,
}

/// Ordered per-task replay graphs. Updates are persistent: appending
/// returns a new bank and leaves the old value usable.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    kind: MemoryKind,
    entries: Vec<ReplayEntry>,
    budgets: Vec<usize>,
}

impl MemoryBank {
    pub fn new(kind: MemoryKind) -> Self {
        Self { kind, entries: Vec::new(), budgets: Vec::new() }
    }

    pub fn kind(&self) -> MemoryKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ReplayEntry] {
        &self.entries
    }

    pub fn budgets(&self) -> &[usize] {
        &self.budgets
    }

    pub fn total_nodes(&self) -> usize {
        self.entries.iter().map(ReplayEntry::node_count).sum()
    }

    /// Appends the next task's replay graph; its task id must equal the
    /// current bank length.
    pub fn update(&self, entry: ReplayEntry) -> Result<MemoryBank> {
        if entry.task_id() != self.entries.len() {
            return Err(Error::Validation(format!(
                "entry for task {} cannot extend a bank of length {}",
                entry.task_id(),
                self.entries.len()
            )));
        }
        let mut next = self.clone();
        next.budgets.push(entry.node_count());
        next.entries.push(entry);
        Ok(next)
    }

    /// Distinct classes stored across all entries, ascending.
    pub fn classes(&self) -> Vec<u32> {
        let mut classes: Vec<u32> =
            self.entries.iter().flat_map(|e| e.labels().iter().copied()).collect();
        classes.sort_unstable();
        classes.dedup();
        classes
    }

    /// Concatenated training rows and labels over all entries. Edge-free
    /// entries contribute their rows directly; entries with edges are
    /// propagated once here before consumption.
    pub fn training_rows(&self, hops: usize, self_loops: bool) -> Result<(Matrix, Vec<u32>)> {
        let mut mats: Vec<Matrix> = Vec::with_capacity(self.entries.len());
        let mut labels = Vec::new();
        for entry in &self.entries {
            instrument::count_bank_entry();
            labels.extend_from_slice(entry.labels());
            match entry {
                ReplayEntry::Condensed(g) => mats.push(g.features().clone()),
                ReplayEntry::Sampled(g) => {
                    if entry.has_edges() {
                        let graph = Graph::new(
                            g.features.clone(),
                            &g.edges,
                            g.labels.iter().map(|&c| Some(c)).collect(),
                            Masks::empty(g.labels.len()),
                        )?;
                        let adj = NormalizedAdjacency::from_graph(&graph, self_loops);
                        mats.push(adj.propagate(graph.features(), hops)?.values().clone());
                    } else {
                        mats.push(g.features.clone());
                    }
                }
            }
        }
        if mats.is_empty() {
            return Ok((Matrix::zeros(0, 0), labels));
        }
        let refs: Vec<&Matrix> = mats.iter().collect();
        Ok((Matrix::vstack(&refs)?, labels))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(self.entries.len());
        for entry in &self.entries {
            let file = format!("task_{:03}.json", entry.task_id());
            let doc = EntryFile::from(entry);
            let bytes = serde_json::to_vec_pretty(&doc)?;
            fs::write(dir.join(&file), &bytes)?;
            entries.push(EntryRef {
                file,
                task_id: entry.task_id(),
                sha256: io::hex_digest(&bytes),
            });
        }
        io::write_json(
            &dir.join("manifest.json"),
            &BankManifest {
                format_version: 1,
                kind: self.kind,
                budgets: self.budgets.clone(),
                entries,
            },
        )
    }

    pub fn load(dir: &Path) -> Result<MemoryBank> {
        let manifest: BankManifest = io::read_json(&dir.join("manifest.json"))?;
        if manifest.format_version != 1 {
            return Err(Error::Format(format!(
                "unsupported bank manifest version {}",
                manifest.format_version
            )));
        }
        let mut bank = MemoryBank::new(manifest.kind);
        for entry_ref in &manifest.entries {
            let bytes = fs::read(dir.join(&entry_ref.file))
                .map_err(|e| Error::Format(format!("missing bank entry {}: {e}", entry_ref.file)))?;
            if io::hex_digest(&bytes) != entry_ref.sha256 {
                return Err(Error::Format(format!(
                    "bank entry {} fails its checksum",
                    entry_ref.file
                )));
            }
            let doc: EntryFile = serde_json::from_slice(&bytes)
                .map_err(|e| Error::Format(format!("bad bank entry {}: {e}", entry_ref.file)))?;
            bank = bank.update(doc.try_into()?)?;
        }
        if bank.budgets != manifest.budgets {
            return Err(Error::Format("bank budgets disagree with manifest".into()));
        }
        Ok(bank)
    }
}

/// How the stored-node budget is fixed across a stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetSpec {
    /// Fraction of the stream's total train nodes, split evenly per task.
    Ratio(f64),
    /// Fraction of each task's own train nodes (streaming mode where the
    /// stream length is unknown up front).
    RatioPerTask(f64),
    /// Fixed node count per task.
    PerTask(usize),
}

/// Per-task budgets for a stream, each raised to at least the task's class
/// count so every class can hold a node.
pub fn plan_budgets(stream: &TaskStream, spec: &BudgetSpec) -> Result<Vec<usize>> {
    let k = stream.num_tasks();
    if k == 0 {
        return Err(Error::Validation("empty stream".into()));
    }
    let mut budgets = match *spec {
        BudgetSpec::Ratio(r) => {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config("budget ratio must lie in [0, 1]".into()));
            }
            let total = ((stream.total_train_nodes() as f64) * r).round() as usize;
            let base = total / k;
            let extra = total % k;
            (0..k).map(|i| base + usize::from(i < extra)).collect::<Vec<_>>()
        }
        BudgetSpec::RatioPerTask(r) => {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config("budget ratio must lie in [0, 1]".into()));
            }
            stream
                .tasks
                .iter()
                .map(|t| ((t.incoming.train_ids().len() as f64) * r).round() as usize)
                .collect()
        }
        BudgetSpec::PerTask(b) => vec![b; k],
    };
    for (budget, task) in budgets.iter_mut().zip(&stream.tasks) {
        *budget = (*budget).max(task.classes.len());
    }
    Ok(budgets)
}

fn train_nodes_by_class(task: &TaskSpec) -> BTreeMap<u32, Vec<u32>> {
    let mut by_class: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for v in task.incoming.train_ids() {
        if let Some(c) = task.incoming.label(v) {
            by_class.entry(c).or_default().push(v);
        }
    }
    by_class
}

fn sample_nodes(
    task: &TaskSpec,
    budgets: &BTreeMap<u32, usize>,
    seed: u64,
) -> Result<Vec<(u32, u32)>> {
    let by_class = train_nodes_by_class(task);
    let mut rng = SplitMix64::new(derive_seed(seed, SAMPLE_TAG ^ task.task_id as u64));
    let mut picks: Vec<(u32, u32)> = Vec::new();
    for (&class, &b_c) in budgets {
        let Some(pool) = by_class.get(&class) else {
            return Err(Error::Validation(format!(
                "class {class} has a budget but no train nodes"
            )));
        };
        if b_c <= pool.len() {
            let idx = rng.sample_indices(pool.len(), b_c);
            picks.extend(idx.into_iter().map(|i| (pool[i], class)));
        } else {
            log::warn!(
                "class {class}: budget {b_c} exceeds {} train nodes, sampling with replacement",
                pool.len()
            );
            for _ in 0..b_c {
                picks.push((pool[rng.next_index(pool.len())], class));
            }
        }
    }
    picks.sort_unstable_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(picks)
}

fn sampled_from_picks(task: &TaskSpec, picks: Vec<(u32, u32)>) -> SampledGraph {
    let rows: Vec<usize> = picks.iter().map(|&(v, _)| v as usize).collect();
    SampledGraph {
        task_id: task.task_id,
        features: task.incoming.features().gather_rows(&rows),
        labels: picks.iter().map(|&(_, c)| c).collect(),
        edges: Vec::new(),
        source_nodes: picks.into_iter().map(|(v, _)| v).collect(),
    }
}

/// Uniform per-class sampling of train nodes, edge-free. Rows are copied
/// verbatim from the propagated incoming features, the same representation
/// the classifier consumes at training and test time.
pub fn sample_random_nodes(
    task: &TaskSpec,
    budgets: &BTreeMap<u32, usize>,
    hops: usize,
    self_loops: bool,
    seed: u64,
) -> Result<SampledGraph> {
    let adj = NormalizedAdjacency::from_graph(&task.incoming, self_loops);
    let f = adj.propagate(task.incoming.features(), hops)?;
    let picks = sample_nodes(task, budgets, seed)?;
    let mut sampled = sampled_from_picks(task, picks);
    let rows: Vec<usize> = sampled.source_nodes.iter().map(|&v| v as usize).collect();
    sampled.features = f.values().gather_rows(&rows);
    Ok(sampled)
}

/// Per class, the budgeted train nodes whose propagated features sit
/// nearest (squared distance) to the propagated class mean; ties break
/// toward the smaller node id. Stored rows are the propagated features,
/// as for [`sample_random_nodes`].
pub fn sample_balanced_mean(
    task: &TaskSpec,
    budgets: &BTreeMap<u32, usize>,
    hops: usize,
    self_loops: bool,
) -> Result<SampledGraph> {
    let adj = NormalizedAdjacency::from_graph(&task.incoming, self_loops);
    let f = adj.propagate(task.incoming.features(), hops)?;
    let by_class = train_nodes_by_class(task);
    let mut picks: Vec<(u32, u32)> = Vec::new();
    for (&class, &b_c) in budgets {
        let Some(pool) = by_class.get(&class) else {
            return Err(Error::Validation(format!(
                "class {class} has a budget but no train nodes"
            )));
        };
        let ids: Vec<usize> = pool.iter().map(|&v| v as usize).collect();
        let mean = crate::linalg::mean_rows_f64(f.values(), &ids);
        let mean32: Vec<f32> = mean.iter().map(|&v| v as f32).collect();
        let mut scored: Vec<(f64, u32)> = pool
            .iter()
            .map(|&v| {
                let row = f.values().row(v as usize);
                let d2 = dot_f64(row, row) - 2.0 * dot_f64(row, &mean32)
                    + dot_f64(&mean32, &mean32);
                (d2, v)
            })
            .collect();
        scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let take = b_c.min(scored.len());
        if take < b_c {
            log::warn!("class {class}: only {take} train nodes for budget {b_c}");
        }
        picks.extend(scored.into_iter().take(take).map(|(_, v)| (v, class)));
    }
    picks.sort_unstable_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut sampled = sampled_from_picks(task, picks);
    let rows: Vec<usize> = sampled.source_nodes.iter().map(|&v| v as usize).collect();
    sampled.features = f.values().gather_rows(&rows);
    Ok(sampled)
}

/// Random-node selection plus the induced edges among the selected nodes,
/// each kept independently with probability `edge_keep_ratio`. Rows stay
/// raw here; the kept edges drive a fresh aggregation when the entry is
/// consumed for training.
pub fn sparsify_subgraph(
    task: &TaskSpec,
    budgets: &BTreeMap<u32, usize>,
    edge_keep_ratio: f64,
    seed: u64,
) -> Result<SampledGraph> {
    if !(0.0..=1.0).contains(&edge_keep_ratio) {
        return Err(Error::Config("edge_keep_ratio must lie in [0, 1]".into()));
    }
    let picks = sample_nodes(task, budgets, seed)?;
    let mut sampled = sampled_from_picks(task, picks);
    let mut local = BTreeMap::new();
    for (i, &v) in sampled.source_nodes.iter().enumerate() {
        local.insert(v, i as u32);
    }
    let mut rng = SplitMix64::new(derive_seed(seed, EDGE_TAG ^ task.task_id as u64));
    let mut edges = Vec::new();
    for (u, v) in task.incoming.undirected_edges() {
        if let (Some(&lu), Some(&lv)) = (local.get(&u), local.get(&v)) {
            if lu != lv && rng.next_bool(edge_keep_ratio) {
                edges.push((lu, lv));
            }
        }
    }
    sampled.edges = edges;
    Ok(sampled)
}

/// Writes one replay entry in the bank-archive entry format.
pub fn save_entry(entry: &ReplayEntry, path: &Path) -> Result<()> {
    io::write_json(path, &EntryFile::from(entry))
}

pub fn load_entry(path: &Path) -> Result<ReplayEntry> {
    io::read_json::<EntryFile>(path)?.try_into()
}

#[derive(Serialize, Deserialize)]
struct BankManifest {
    format_version: u32,
    kind: MemoryKind,
    budgets: Vec<usize>,
    entries: Vec<EntryRef>,
}

#[derive(Serialize, Deserialize)]
struct EntryRef {
    file: String,
    task_id: usize,
    sha256: String,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum EntryFile {
    Condensed {
        task_id: usize,
        labels: Vec<u32>,
        feature_dim: usize,
        features_b64: String,
    },
    Sampled {
        task_id: usize,
        labels: Vec<u32>,
        feature_dim: usize,
        features_b64: String,
        edges: Vec<(u32, u32)>,
        source_nodes: Vec<u32>,
    },
}

impl From<&ReplayEntry> for EntryFile {
    fn from(entry: &ReplayEntry) -> Self {
        match entry {
            ReplayEntry::Condensed(g) => EntryFile::Condensed {
                task_id: g.task_id(),
                labels: g.labels().to_vec(),
                feature_dim: g.features().cols(),
                features_b64: io::encode_f32(g.features().as_slice()),
            },
            ReplayEntry::Sampled(g) => EntryFile::Sampled {
                task_id: g.task_id,
                labels: g.labels.clone(),
                feature_dim: g.features.cols(),
                features_b64: io::encode_f32(g.features.as_slice()),
                edges: g.edges.clone(),
                source_nodes: g.source_nodes.clone(),
            },
        }
    }
}

impl TryFrom<EntryFile> for ReplayEntry {
    type Error = Error;

    fn try_from(doc: EntryFile) -> Result<ReplayEntry> {
        match doc {
            EntryFile::Condensed { task_id, labels, feature_dim, features_b64 } => {
                let data = io::decode_f32(&features_b64, labels.len() * feature_dim)?;
                Ok(ReplayEntry::Condensed(CondensedGraph::new(
                    task_id,
                    Matrix::from_vec(labels.len(), feature_dim, data)?,
                    labels,
                )?))
            }
            EntryFile::Sampled { task_id, labels, feature_dim, features_b64, edges, source_nodes } => {
                let data = io::decode_f32(&features_b64, labels.len() * feature_dim)?;
                Ok(ReplayEntry::Sampled(SampledGraph {
                    task_id,
                    features: Matrix::from_vec(labels.len(), feature_dim, data)?,
                    labels,
                    edges,
                    source_nodes,
                }))
            }
        }
    }
}
