//! A perfectly trained model: expands nodes exactly as the bootstrap
//! procedure builds them, using the task's transition and goal tests.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{finish_local, Generation, ModelError, ModelProvider};
use crate::bootstrap::{
    build_children, reference_gold, BootstrapConfig, CanonicalPolicy, Candidate, Diagnostics, RankedPolicy, RewardPreset,
    SupervisionPolicy,
};
use crate::codec::{
    encode_block_text, parse_chain_prompt, parse_context, render_context, serialize_tree_dfs, ExpansionBlock,
};
use crate::tasks::{marker_for, Task};
use crate::token::{detokenize, normalize_whitespace};
use crate::tree::{Marker, NodePath, PathStep, SearchTree};

/// What kind of prompt the oracle answers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OracleMode {
    /// Stitched context in, one expansion block out.
    #[default]
    Tree,
    /// Single-chain prompt in, one action line out.
    Step,
    /// Problem prompt in, the whole depth-first trace of the tree out.
    Trace,
}

/// Where the oracle's non-gold children come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Proposals {
    /// Legal actions in canonical order ([`CanonicalPolicy`]).
    Canonical,
    /// Legal actions best-first by the task heuristic ([`RankedPolicy`]).
    #[default]
    Ranked,
}

impl Proposals {
    pub fn name(self) -> &'static str {
        match self {
            Proposals::Canonical => "canonical",
            Proposals::Ranked => "ranked",
        }
    }

    pub fn from_name(name: &str) -> Option<Proposals> {
        match name {
            "canonical" => Some(Proposals::Canonical),
            "ranked" => Some(Proposals::Ranked),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleConfig {
    pub proposals: Proposals,
    /// Children per expansion.
    pub k: usize,
    pub reward: RewardPreset,
    pub gold_pinned_first: bool,
    /// Put the reference solution's action first on the gold path, as the
    /// bootstrap procedure does.
    pub use_gold: bool,
    pub mark_failures: bool,
    /// Seeds temperature sampling in step mode.
    pub seed: u64,
    /// Node cap for trace mode.
    pub max_trace_nodes: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            proposals: Proposals::Ranked,
            k: 5,
            reward: RewardPreset::Heuristic,
            gold_pinned_first: false,
            use_gold: true,
            mark_failures: true,
            seed: 0,
            max_trace_nodes: 100_000,
        }
    }
}

impl OracleConfig {
    /// The bootstrap settings whose trees this oracle reproduces.
    pub fn bootstrap_config(&self) -> BootstrapConfig {
        BootstrapConfig {
            branch_factor: self.k,
            mark_failures: self.mark_failures,
            gold_pinned_first: self.gold_pinned_first,
            ..BootstrapConfig::default()
        }
    }
}

pub struct OracleModel<T: Task> {
    task: T,
    cfg: OracleConfig,
    mode: OracleMode,
    gold: BTreeMap<String, Option<Vec<String>>>,
    rng: ChaCha8Rng,
}

impl<T: Task + Clone> Clone for OracleModel<T> {
    fn clone(&self) -> Self {
        OracleModel {
            task: self.task.clone(),
            cfg: self.cfg.clone(),
            mode: self.mode,
            gold: self.gold.clone(),
            rng: self.rng.clone(),
        }
    }
}

/// Replayed position of a context: the parsed problem, the state reached,
/// the number of actions taken and the gold action to insert, if any.
pub struct Position<T: Task> {
    pub problem: T::Problem,
    pub state: T::State,
    pub depth: usize,
    pub gold: Option<T::Action>,
}

impl<T: Task> OracleModel<T> {
    pub fn new(task: T, cfg: OracleConfig, mode: OracleMode) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        OracleModel { task, cfg, mode, gold: BTreeMap::new(), rng }
    }

    pub fn task(&self) -> &T {
        &self.task
    }

    pub fn config(&self) -> &OracleConfig {
        &self.cfg
    }

    pub fn mode(&self) -> OracleMode {
        self.mode
    }

    /// Replays `actions` from the problem's initial state. Goal states and
    /// illegal actions are rejected since they are never expanded.
    pub fn position<S: AsRef<str>>(&mut self, problem_text: &str, actions: &[S]) -> Result<Position<T>, ModelError> {
        let problem =
            self.task.parse_problem(problem_text).map_err(|e| ModelError::UnparseableContext(e.to_string()))?;
        let mut state = self.task.initial_state(&problem);
        for a in actions {
            let action = self
                .task
                .parse_action(a.as_ref(), &problem, &state)
                .map_err(|e| ModelError::IllegalPathInContext(e.to_string()))?;
            state = self
                .task
                .transition(&problem, &state, &action)
                .map_err(|e| ModelError::IllegalPathInContext(e.to_string()))?;
        }
        if self.task.is_goal(&problem, &state) {
            return Err(ModelError::IllegalPathInContext("path already reaches a goal".to_string()));
        }
        let gold = if self.cfg.use_gold { self.gold_action(problem_text, &problem, &state, actions) } else { None };
        Ok(Position { problem, state, depth: actions.len(), gold })
    }

    fn gold_action<S: AsRef<str>>(
        &mut self,
        problem_text: &str,
        problem: &T::Problem,
        state: &T::State,
        actions: &[S],
    ) -> Option<T::Action> {
        let task = &self.task;
        let gold = self
            .gold
            .entry(normalize_whitespace(problem_text))
            .or_insert_with(|| reference_gold(task, problem))
            .as_ref()?;
        let on_path = actions.len() < gold.len()
            && actions.iter().zip(gold).all(|(a, g)| normalize_whitespace(a.as_ref()) == *g);
        if !on_path {
            return None;
        }
        task.parse_action(&gold[actions.len()], problem, state).ok()
    }

    /// Ordered children for a position, built the way bootstrap builds them.
    pub fn candidates(&self, pos: &Position<T>) -> Vec<Candidate<T>> {
        let mut diag = Diagnostics::default();
        let mut canonical = CanonicalPolicy;
        let mut ranked = RankedPolicy;
        let policy: &mut dyn SupervisionPolicy<T> = match self.cfg.proposals {
            Proposals::Canonical => &mut canonical,
            Proposals::Ranked => &mut ranked,
        };
        build_children(
            &self.task,
            &pos.problem,
            &pos.state,
            pos.depth,
            pos.gold.as_ref(),
            &mut *policy,
            &self.cfg.reward,
            &self.cfg.bootstrap_config(),
            &mut diag,
        )
    }

    /// The block this oracle emits for the last node of `path`.
    pub fn expansion(&mut self, problem_text: &str, path: &NodePath) -> Result<ExpansionBlock, ModelError> {
        if path.last().is_some_and(|s| s.marker != Marker::Sep) {
            return Err(ModelError::IllegalPathInContext("terminal nodes are not expanded".to_string()));
        }
        let pos = self.position(problem_text, &path.actions())?;
        Ok(self.candidates(&pos).into_iter().map(|c| PathStep::new(c.text, c.marker)).collect())
    }

    /// Every legal action at the last node of `path` with the marker the
    /// task assigns to it, in canonical order.
    pub fn legal_children(&mut self, problem_text: &str, path: &NodePath) -> Result<Vec<PathStep>, ModelError> {
        let pos = self.position(problem_text, &path.actions())?;
        let acts = self.task.legal_actions(&pos.problem, &pos.state).unwrap_or_default();
        Ok(acts
            .iter()
            .filter_map(|a| {
                let next = self.task.transition(&pos.problem, &pos.state, a).ok()?;
                let mut m = marker_for(&self.task, &pos.problem, &next, pos.depth + 1);
                if !self.cfg.mark_failures && m == Marker::Fail {
                    m = Marker::Sep;
                }
                Some(PathStep::new(self.task.render_action(a), m))
            })
            .collect())
    }

    /// The next action line for a single-chain prompt: the top candidate at
    /// temperature 0, otherwise a uniform draw among the `k` candidates.
    pub fn step(&mut self, problem_text: &str, actions: &[String], temperature: f64) -> Result<String, ModelError> {
        let pos = self.position(problem_text, actions)?;
        let cands = self.candidates(&pos);
        if cands.is_empty() {
            return Err(ModelError::IllegalPathInContext("no legal actions".to_string()));
        }
        let i = if temperature <= 0.0 { 0 } else { self.rng.gen_range(0..cands.len()) };
        Ok(cands[i].text.clone())
    }
}

/// Grows a complete tree by expanding every viable node breadth-first with
/// `expand`, up to `max_nodes` nodes.
pub fn grow_tree(
    problem_text: &str,
    max_nodes: usize,
    mut expand: impl FnMut(&NodePath) -> Result<ExpansionBlock, ModelError>,
) -> Result<SearchTree, ModelError> {
    let mut tree = SearchTree::new(problem_text);
    let mut queue = VecDeque::from([tree.root()]);
    while let Some(id) = queue.pop_front() {
        let path = tree.path_to(id).expect("node exists");
        let block = expand(&path)?;
        for step in block.children {
            if tree.len() >= max_nodes {
                return Ok(tree);
            }
            let Ok(child) = tree.add_child(id, &step.action, step.marker) else { continue };
            if step.marker == Marker::Sep {
                queue.push_back(child);
            }
        }
    }
    Ok(tree)
}

/// Generated part of a depth-first trace: everything after the problem
/// prompt.
pub fn trace_text(tree: &SearchTree) -> String {
    let prompt = render_context(tree.problem(), &NodePath::default()).map(|t| t.len()).unwrap_or(0);
    let trace = serialize_tree_dfs(tree);
    detokenize(&trace[prompt.min(trace.len())..])
}

pub(crate) fn block_text(block: &ExpansionBlock) -> String {
    encode_block_text(block).unwrap_or_else(|_| "[BOS] [EOS]".to_string())
}

pub(crate) fn parse_tree_context(context: &str) -> Result<(String, NodePath), ModelError> {
    parse_context(context).map_err(|e| ModelError::UnparseableContext(format!("{e}")))
}

pub(crate) fn parse_step_context(context: &str) -> Result<(String, Vec<String>), ModelError> {
    parse_chain_prompt(context).map_err(|e| ModelError::UnparseableContext(format!("{e}")))
}

impl<T: Task> ModelProvider for OracleModel<T> {
    fn generate(&mut self, context: &str, stop: &[&str], max_tokens: usize, temperature: f64) -> Result<Generation, ModelError> {
        let text = match self.mode {
            OracleMode::Tree => {
                let (problem, path) = parse_tree_context(context)?;
                block_text(&self.expansion(&problem, &path)?)
            }
            OracleMode::Step => {
                let (problem, actions) = parse_step_context(context)?;
                let mut line = self.step(&problem, &actions, temperature)?;
                line.push('\n');
                line
            }
            OracleMode::Trace => {
                let (problem, path) = parse_tree_context(context)?;
                if !path.is_empty() {
                    return Err(ModelError::UnparseableContext("trace prompts carry no path".to_string()));
                }
                let max = self.cfg.max_trace_nodes;
                let tree = grow_tree(&problem, max, |p| self.expansion(&problem, p))?;
                trace_text(&tree)
            }
        };
        Ok(finish_local(&text, stop, max_tokens))
    }
}
