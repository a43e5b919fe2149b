//! Tree-structured decoding: generate a block, parse it, stitch child
//! contexts and expand breadth- or depth-first, verifying terminals in
//! traversal order.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::string::String;
use alloc::vec::Vec;
use core::time::Duration;

use thiserror::Error;

use crate::bootstrap::dedup_candidates;
use crate::codec::{decode_block_text, render_context_text, DecodeError, DecodeMode};
use crate::models::{FinishReason, ModelError, ModelProvider};
use crate::tasks::Task;
use crate::token::EOS;
use crate::tree::{Marker, NodeId, NodePath, SearchTree};

pub mod baselines;

pub use baselines::{run_procedure_clone, run_sequential, run_tot, BaselineOutcome, ChainConfig, PcConfig, TotConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Strategy {
    #[default]
    Bfs,
    Dfs,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Bfs => "bfs",
            Strategy::Dfs => "dfs",
        }
    }

    pub fn from_name(name: &str) -> Option<Strategy> {
        match name {
            "bfs" => Some(Strategy::Bfs),
            "dfs" => Some(Strategy::Dfs),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferenceConfig {
    pub strategy: Strategy,
    /// Children kept per expansion, in generation order.
    pub branch_cap: usize,
    /// Maximum number of expansions (model calls).
    pub node_budget: usize,
    /// Maximum number of terminals verified.
    pub candidate_budget: usize,
    pub dedup: bool,
    pub tolerant_decode: bool,
    pub max_tokens: usize,
    pub temperature: f64,
    /// Return at the first validated goal. Off when collecting pass@k.
    pub stop_on_solution: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            strategy: Strategy::Bfs,
            branch_cap: 5,
            node_budget: 10_000,
            candidate_budget: 10_000,
            dedup: true,
            tolerant_decode: false,
            max_tokens: 1024,
            temperature: 0.0,
            stop_on_solution: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    /// A validated goal; `candidate_rank` is its 1-based position among
    /// verified terminals.
    Solved { path: NodePath, candidate_rank: usize },
    /// The frontier emptied without a validated goal.
    Unsolvable,
    BudgetExhausted,
}

impl Verdict {
    pub fn is_solved(&self) -> bool {
        matches!(self, Verdict::Solved { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Verdict::Solved { .. } => "solved",
            Verdict::Unsolvable => "unsolvable",
            Verdict::BudgetExhausted => "budget_exhausted",
        }
    }

    pub fn candidate_rank(&self) -> Option<usize> {
        match self {
            Verdict::Solved { candidate_rank, .. } => Some(*candidate_rank),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunStats {
    pub model_calls: u64,
    pub tokens_generated: u64,
    pub nodes_expanded: u64,
    pub terminals_verified: u64,
    pub malformed_expansions: u64,
    /// Filled in by callers that have a clock.
    pub wall_time: Duration,
}

/// One verified terminal, with the counters as they stood right after it
/// was verified.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CandidateRecord {
    pub node: NodeId,
    pub valid: bool,
    pub stats: RunStats,
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub tree: SearchTree,
    pub verdict: Verdict,
    pub stats: RunStats,
    /// Verified terminals in traversal order.
    pub candidates: Vec<CandidateRecord>,
}

impl SearchOutcome {
    /// Whether any of the first `k` verified terminals is a solution.
    pub fn success_at(&self, k: usize) -> bool {
        self.candidates.iter().take(k).any(|c| c.valid)
    }

    /// Counters at the moment the search would have stopped with candidate
    /// budget `k`: at the first solution within `k`, else at the `k`-th
    /// terminal, else at the end of the run.
    pub fn stats_at(&self, k: usize) -> RunStats {
        let first = self.candidates.iter().take(k).position(|c| c.valid);
        match first {
            Some(i) => self.candidates[i].stats,
            None if self.candidates.len() >= k && k > 0 => self.candidates[k - 1].stats,
            None => self.stats,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("model failed: {error}")]
    Model { error: ModelError, stats: RunStats },
    #[error("unparseable step {line:?}")]
    ParseFailure { line: String, stats: RunStats },
    #[error("trace does not parse: {error}")]
    TraceParse { error: DecodeError, stats: RunStats },
    #[error("node {0:?} is not an unexpanded viable node")]
    NotExpandable(NodeId),
}

impl SearchError {
    pub fn stats(&self) -> RunStats {
        match self {
            SearchError::Model { stats, .. }
            | SearchError::ParseFailure { stats, .. }
            | SearchError::TraceParse { stats, .. } => *stats,
            SearchError::NotExpandable(_) => RunStats::default(),
        }
    }
}

/// Result of one expansion.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Expansion {
    pub children: Vec<NodeId>,
    /// Set when the output did not decode; the node was marked failed.
    pub malformed: Option<DecodeError>,
}

/// Completes a generation that stopped on `[EOS]` but had the stop string
/// stripped, as remote completion APIs do.
pub fn restore_stop(text: &str, finish: FinishReason) -> String {
    let mut t = String::from(text.trim_end());
    if finish == FinishReason::Stop && !t.ends_with(EOS) {
        t.push(' ');
        t.push_str(EOS);
    }
    t
}

/// Expands one viable leaf: stitched prompt, one model call, strict or
/// tolerant decode, sibling dedup, cap to `branch_cap`.
pub fn expand_node<M: ModelProvider + ?Sized>(
    model: &mut M,
    tree: &mut SearchTree,
    id: NodeId,
    cfg: &InferenceConfig,
    stats: &mut RunStats,
) -> Result<Expansion, SearchError> {
    let node = tree.node(id).ok_or(SearchError::NotExpandable(id))?;
    if node.marker() != Marker::Sep || !node.children().is_empty() {
        return Err(SearchError::NotExpandable(id));
    }
    let path = tree.path_to(id).expect("node exists");
    let prompt = render_context_text(tree.problem(), &path).map_err(|_| SearchError::NotExpandable(id))?;
    let generation = model
        .generate(&prompt, &[EOS], cfg.max_tokens, cfg.temperature)
        .map_err(|error| SearchError::Model { error, stats: *stats })?;
    stats.model_calls += 1;
    stats.nodes_expanded += 1;
    stats.tokens_generated += generation.tokens_generated as u64;
    let text = restore_stop(&generation.text, generation.finish);
    let mode = if cfg.tolerant_decode { DecodeMode::Tolerant } else { DecodeMode::Strict };
    let decoded = match decode_block_text(&text, mode) {
        Ok(d) => d,
        Err(e) => {
            stats.malformed_expansions += 1;
            if id != tree.root() {
                tree.set_marker(id, Marker::Fail).expect("leaf");
            }
            return Ok(Expansion { children: Vec::new(), malformed: Some(e) });
        }
    };
    let mut kept: Vec<String> = Vec::new();
    let mut children = Vec::new();
    for step in decoded.block.children {
        if children.len() >= cfg.branch_cap {
            break;
        }
        if cfg.dedup && !dedup_candidates(&kept, &step.action) {
            continue;
        }
        if let Ok(c) = tree.add_child(id, &step.action, step.marker) {
            kept.push(step.action);
            children.push(c);
        }
    }
    Ok(Expansion { children, malformed: None })
}

struct Run<'a, T: Task> {
    task: &'a T,
    problem: &'a T::Problem,
    cfg: &'a InferenceConfig,
    tree: SearchTree,
    stats: RunStats,
    candidates: Vec<CandidateRecord>,
    solved: Option<Verdict>,
}

impl<T: Task> Run<'_, T> {
    /// Verifies a terminal. Returns true when the search should stop.
    fn verify(&mut self, id: NodeId) -> bool {
        let path = self.tree.path_to(id).expect("node exists");
        let marker = path.last().map(|s| s.marker).unwrap_or(Marker::Sep);
        let valid = marker == Marker::Goal && self.task.validate_solution(self.problem, &path.actions());
        if marker == Marker::Goal && !valid {
            self.tree.set_marker(id, Marker::Fail).expect("terminal leaf");
        }
        self.stats.terminals_verified += 1;
        self.candidates.push(CandidateRecord { node: id, valid, stats: self.stats });
        if valid && self.solved.is_none() {
            self.solved = Some(Verdict::Solved { path, candidate_rank: self.candidates.len() });
        }
        (valid && self.cfg.stop_on_solution) || self.candidates.len() >= self.cfg.candidate_budget
    }
}

/// Runs tree-structured decoding on one problem.
///
/// Breadth-first search verifies terminals as they are discovered, which is
/// level order; depth-first search pushes children in reverse so the first
/// sibling is expanded first, and verifies terminals in preorder.
pub fn run_tree_search<T: Task, M: ModelProvider + ?Sized>(
    model: &mut M,
    task: &T,
    problem: &T::Problem,
    cfg: &InferenceConfig,
) -> Result<SearchOutcome, SearchError> {
    let mut run = Run {
        task,
        problem,
        cfg,
        tree: SearchTree::new(task.render_problem(problem)),
        stats: RunStats::default(),
        candidates: Vec::new(),
        solved: None,
    };
    let mut frontier = VecDeque::from([run.tree.root()]);
    let mut exhausted = false;
    'search: loop {
        let next = match cfg.strategy {
            Strategy::Bfs => frontier.pop_front(),
            Strategy::Dfs => frontier.pop_back(),
        };
        let Some(id) = next else { break };
        if run.tree.node(id).expect("frontier node").marker().is_terminal() {
            if run.verify(id) {
                exhausted = run.solved.is_none();
                break;
            }
            continue;
        }
        if run.stats.nodes_expanded >= cfg.node_budget as u64 {
            exhausted = true;
            break;
        }
        let exp = expand_node(model, &mut run.tree, id, cfg, &mut run.stats)?;
        match cfg.strategy {
            Strategy::Bfs => {
                for c in exp.children {
                    if run.tree.node(c).expect("child").marker().is_terminal() {
                        if run.verify(c) {
                            exhausted = run.solved.is_none();
                            break 'search;
                        }
                    } else {
                        frontier.push_back(c);
                    }
                }
            }
            Strategy::Dfs => frontier.extend(exp.children.into_iter().rev()),
        }
    }
    let verdict = match run.solved.take() {
        Some(v) => v,
        None if exhausted => Verdict::BudgetExhausted,
        None => Verdict::Unsolvable,
    };
    Ok(SearchOutcome { tree: run.tree, verdict, stats: run.stats, candidates: run.candidates })
}

/// success@k for each requested k from one search that keeps going past
/// the first solution until `max(k_values)` terminals are verified.
pub fn pass_at_k<T: Task, M: ModelProvider + ?Sized>(
    model: &mut M,
    task: &T,
    problem: &T::Problem,
    cfg: &InferenceConfig,
    k_values: &[usize],
) -> Result<(BTreeMap<usize, bool>, SearchOutcome), SearchError> {
    let max_k = k_values.iter().copied().max().unwrap_or(1).max(1);
    let cfg = InferenceConfig { stop_on_solution: false, candidate_budget: max_k, ..cfg.clone() };
    let out = run_tree_search(model, task, problem, &cfg)?;
    let map = k_values.iter().map(|&k| (k, out.success_at(k))).collect();
    Ok((map, out))
}
