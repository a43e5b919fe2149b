//! JSON Lines record types and their readers and writers.
//!
//! Every record is written as one line of compact JSON with object keys in
//! sorted order, so equal records always produce equal bytes.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use treelm_core::codec::TrainingExample;
use treelm_core::tasks::TaskKind;
use treelm_core::token::{detokenize, tokenize};
use treelm_core::tree::{Marker, NodeId, SearchTree};

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {source}")]
    Json { path: String, line: usize, source: serde_json::Error },
    #[error("tree {tree_id}: {reason}")]
    BadTree { tree_id: String, reason: String },
}

/// One problem instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub task: TaskKind,
    /// Problem text as rendered by the task.
    pub problem: String,
    pub solvable: bool,
    pub split: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<i32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: usize,
    pub parent: Option<usize>,
    pub action: String,
    pub marker: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeMeta {
    pub k: usize,
    pub temperature: f64,
    pub reward_preset: String,
    pub seed: u64,
    #[serde(default)]
    pub gold_pinned_first: bool,
    #[serde(default)]
    pub policy: String,
}

/// A bootstrapped search tree. Node 0 is the root; its action is empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeRecord {
    pub tree_id: String,
    pub task: TaskKind,
    pub problem_text: String,
    pub nodes: Vec<NodeRecord>,
    pub gold_node_ids: Vec<usize>,
    pub meta: TreeMeta,
}

impl TreeRecord {
    pub fn from_tree(tree_id: &str, task: TaskKind, tree: &SearchTree, gold: &[NodeId], meta: TreeMeta) -> Self {
        let nodes = tree
            .ids()
            .map(|id| {
                let n = tree.node(id).expect("listed id");
                NodeRecord {
                    id: id.index(),
                    parent: n.parent().map(NodeId::index),
                    action: n.action().to_string(),
                    marker: n.marker().name().to_string(),
                }
            })
            .collect();
        TreeRecord {
            tree_id: tree_id.to_string(),
            task,
            problem_text: tree.problem().to_string(),
            nodes,
            gold_node_ids: gold.iter().map(|g| g.index()).collect(),
            meta,
        }
    }

    /// Rebuilds the tree. Nodes must be listed parents-first with ids equal
    /// to their position, which is how [`TreeRecord::from_tree`] writes them.
    pub fn to_tree(&self) -> Result<SearchTree, RecordError> {
        let bad = |reason: String| RecordError::BadTree { tree_id: self.tree_id.clone(), reason };
        let mut tree = SearchTree::new(self.problem_text.clone());
        let Some(root) = self.nodes.first() else { return Err(bad("no nodes".into())) };
        if root.id != 0 || root.parent.is_some() {
            return Err(bad("node 0 must be the root".into()));
        }
        let root_marker = Marker::from_name(&root.marker).ok_or_else(|| bad(format!("marker {:?}", root.marker)))?;
        for (i, n) in self.nodes.iter().enumerate().skip(1) {
            if n.id != i {
                return Err(bad(format!("node {} listed at position {i}", n.id)));
            }
            let marker = Marker::from_name(&n.marker).ok_or_else(|| bad(format!("marker {:?}", n.marker)))?;
            let parent = n.parent.ok_or_else(|| bad(format!("node {i} has no parent")))?;
            let id = tree.add_child(NodeId(parent), &n.action, marker).map_err(|e| bad(e.to_string()))?;
            if id.index() != i {
                return Err(bad(format!("node {i} is out of order")));
            }
        }
        if root_marker != Marker::Sep {
            tree.set_marker(NodeId::ROOT, root_marker).map_err(|e| bad(e.to_string()))?;
        }
        for g in &self.gold_node_ids {
            if *g >= tree.len() {
                return Err(bad(format!("gold node {g} does not exist")));
            }
        }
        Ok(tree)
    }
}

/// A training example with context and target stored as text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub tree_id: String,
    pub node_id: usize,
    pub context: String,
    pub target: String,
}

impl ExampleRecord {
    pub fn from_example(e: &TrainingExample) -> Self {
        ExampleRecord {
            tree_id: e.tree_id.clone(),
            node_id: e.node_id.index(),
            context: detokenize(&e.context),
            target: detokenize(&e.target),
        }
    }

    pub fn to_example(&self) -> TrainingExample {
        TrainingExample {
            tree_id: self.tree_id.clone(),
            node_id: NodeId(self.node_id),
            context: tokenize(&self.context),
            target: tokenize(&self.target),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsRecord {
    pub model_calls: u64,
    pub tokens_generated: u64,
    pub nodes_expanded: u64,
    pub terminals_verified: u64,
    /// Only present when wall times are recorded, so that outputs are
    /// reproducible by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<u64>,
}

/// Cost of a run that stops with candidate budget `k`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostRecord {
    pub model_calls: u64,
    pub tokens_generated: u64,
}

/// Outcome of one method on one instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub instance_id: String,
    pub method: String,
    pub strategy: String,
    pub verdict: String,
    pub candidate_rank: Option<usize>,
    /// Success with candidate budget k, for k = 1..=K.
    pub pass_at: BTreeMap<usize, bool>,
    /// Counters at the point a run with budget k would stop.
    pub cost_at: BTreeMap<usize, CostRecord>,
    pub stats: StatsRecord,
    pub config: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<i32>,
}

/// One record as a line of key-sorted JSON, without the newline.
pub fn to_line<T: Serialize>(record: &T) -> String {
    // serde_json's Value map is ordered by key
    let value = serde_json::to_value(record).expect("records serialize");
    serde_json::to_string(&value).expect("values serialize")
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> RecordError + '_ {
    move |source| RecordError::Io { path: path.display().to_string(), source }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, RecordError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|source| RecordError::Json { path: path.display().to_string(), line: i + 1, source })?;
        out.push(rec);
    }
    Ok(out)
}

/// Like [`read_jsonl`], but a missing file reads as empty.
pub fn read_jsonl_if_exists<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, RecordError> {
    if path.exists() {
        read_jsonl(path)
    } else {
        Ok(Vec::new())
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), RecordError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for r in records {
        writeln!(w, "{}", to_line(r)).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn append_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), RecordError> {
    let file = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        writeln!(w, "{}", to_line(r)).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tree() -> SearchTree {
        let mut t = SearchTree::new("Input:\n4 5 6 9");
        let a = t.add_child(NodeId::ROOT, "4 + 5 = 9", Marker::Sep).unwrap();
        t.add_child(NodeId::ROOT, "4 * 5 = 20", Marker::Fail).unwrap();
        t.add_child(a, "6 + 9 = 15", Marker::Sep).unwrap();
        t
    }

    fn meta() -> TreeMeta {
        TreeMeta {
            k: 5,
            temperature: 0.3,
            reward_preset: "heuristic".into(),
            seed: 1,
            gold_pinned_first: false,
            policy: "canonical".into(),
        }
    }

    #[test]
    fn tree_record_round_trip() {
        let t = tree();
        let rec = TreeRecord::from_tree("t0", TaskKind::Game24, &t, &[NodeId(1)], meta());
        assert_eq!(rec.to_tree().unwrap(), t);
        let line = to_line(&rec);
        let back: TreeRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(to_line(&back), line);
    }

    #[test]
    fn keys_are_sorted() {
        let rec = TreeRecord::from_tree("t0", TaskKind::Game24, &tree(), &[], meta());
        let line = to_line(&rec);
        let keys = ["\"gold_node_ids\"", "\"meta\"", "\"nodes\"", "\"problem_text\"", "\"task\"", "\"tree_id\""];
        let pos: Vec<usize> = keys.iter().map(|k| line.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]), "{line}");
    }

    #[test]
    fn malformed_tree_records_are_rejected() {
        let mut rec = TreeRecord::from_tree("t0", TaskKind::Game24, &tree(), &[], meta());
        rec.nodes[3].parent = Some(2);
        assert!(rec.to_tree().is_err());
        let mut rec = TreeRecord::from_tree("t0", TaskKind::Game24, &tree(), &[], meta());
        rec.nodes[1].marker = "MAYBE".into();
        assert!(rec.to_tree().is_err());
        let mut rec = TreeRecord::from_tree("t0", TaskKind::Game24, &tree(), &[], meta());
        rec.gold_node_ids = vec![9];
        assert!(rec.to_tree().is_err());
    }

    #[test]
    fn example_record_round_trip() {
        let e = TrainingExample {
            tree_id: "t".into(),
            node_id: NodeId(2),
            context: tokenize("Input:\n4 5 6 9\n4 + 5 = 9 [SEP]\n"),
            target: tokenize("[BOS]\n6 + 9 = 15 [SEP] [EOS]"),
        };
        assert_eq!(ExampleRecord::from_example(&e).to_example(), e);
    }
}
