//! Comparison decoders: single-chain decoding, whole-trace generation, and
//! external beam search over independently sampled steps.

use alloc::string::String;
use alloc::vec::Vec;

use super::{RunStats, SearchError, Verdict};
use crate::bootstrap::{dedup_candidates, sort_siblings, RewardFn, RewardPreset};
use crate::codec::{parse_trace, render_chain_prompt, render_context_text, DecodeMode};
use crate::models::{Generation, ModelProvider};
use crate::tasks::Task;
use crate::token::{normalize_whitespace, tokenize};
use crate::tree::{Marker, NodePath, PathStep, SearchTree, Traversal};

#[derive(Clone, Debug)]
pub struct BaselineOutcome {
    pub verdict: Verdict,
    pub stats: RunStats,
    /// Parsed tree, for trace generation.
    pub tree: Option<SearchTree>,
    /// Action lines produced, for single-chain decoding.
    pub actions: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainConfig {
    pub max_tokens: usize,
    pub temperature: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig { max_tokens: 64, temperature: 0.0 }
    }
}

fn call<M: ModelProvider + ?Sized>(
    model: &mut M,
    prompt: &str,
    stop: &[&str],
    max_tokens: usize,
    temperature: f64,
    stats: &mut RunStats,
) -> Result<Generation, SearchError> {
    let g = model
        .generate(prompt, stop, max_tokens, temperature)
        .map_err(|error| SearchError::Model { error, stats: *stats })?;
    stats.model_calls += 1;
    stats.tokens_generated += g.tokens_generated as u64;
    Ok(g)
}

fn first_line(text: &str) -> String {
    normalize_whitespace(text.split('\n').find(|l| !l.trim().is_empty()).unwrap_or(""))
}

fn solved_path(actions: &[String]) -> NodePath {
    let n = actions.len();
    NodePath(
        actions
            .iter()
            .enumerate()
            .map(|(i, a)| PathStep::new(a.clone(), if i + 1 == n { Marker::Goal } else { Marker::Sep }))
            .collect(),
    )
}

/// Greedy single-chain decoding, one action line per call, until the task
/// reaches a goal, runs out of legal actions, or hits its depth limit.
pub fn run_sequential<T: Task, M: ModelProvider + ?Sized>(
    model: &mut M,
    task: &T,
    problem: &T::Problem,
    cfg: &ChainConfig,
) -> Result<BaselineOutcome, SearchError> {
    let problem_text = task.render_problem(problem);
    let mut stats = RunStats::default();
    let mut actions: Vec<String> = Vec::new();
    let mut state = task.initial_state(problem);
    let verdict = loop {
        if actions.len() >= task.max_depth(problem) {
            break Verdict::BudgetExhausted;
        }
        let g = call(model, &render_chain_prompt(&problem_text, &actions), &["\n"], cfg.max_tokens, cfg.temperature, &mut stats)?;
        let line = first_line(&g.text);
        let action = task
            .parse_action(&line, problem, &state)
            .map_err(|_| SearchError::ParseFailure { line: line.clone(), stats })?;
        state = task.transition(problem, &state, &action).map_err(|_| SearchError::ParseFailure { line, stats })?;
        actions.push(task.render_action(&action));
        stats.nodes_expanded += 1;
        if task.is_goal(problem, &state) {
            stats.terminals_verified += 1;
            let texts: Vec<&str> = actions.iter().map(|s| s.as_str()).collect();
            break if task.validate_solution(problem, &texts) {
                Verdict::Solved { path: solved_path(&actions), candidate_rank: 1 }
            } else {
                Verdict::BudgetExhausted
            };
        }
        if task.legal_actions(problem, &state).map(|a| a.is_empty()).unwrap_or(true) {
            stats.terminals_verified += 1;
            break Verdict::BudgetExhausted;
        }
    };
    Ok(BaselineOutcome { verdict, stats, tree: None, actions })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcConfig {
    pub max_tokens: usize,
    pub tolerant_decode: bool,
}

impl Default for PcConfig {
    fn default() -> Self {
        PcConfig { max_tokens: 1 << 16, tolerant_decode: true }
    }
}

/// One generation of a whole depth-first trace, parsed back into a tree;
/// the first `k` terminals in trace order are verified.
pub fn run_procedure_clone<T: Task, M: ModelProvider + ?Sized>(
    model: &mut M,
    task: &T,
    problem: &T::Problem,
    k: usize,
    cfg: &PcConfig,
) -> Result<BaselineOutcome, SearchError> {
    let problem_text = task.render_problem(problem);
    let mut stats = RunStats::default();
    let prompt = render_context_text(&problem_text, &NodePath::default())
        .map_err(|_| SearchError::ParseFailure { line: problem_text.clone(), stats })?;
    let g = call(model, &prompt, &[], cfg.max_tokens, 0.0, &mut stats)?;
    let mode = if cfg.tolerant_decode { DecodeMode::Tolerant } else { DecodeMode::Strict };
    let parsed = parse_trace(&problem_text, &tokenize(&g.text), mode)
        .map_err(|error| SearchError::TraceParse { error, stats })?;
    let tree = parsed.tree;
    stats.nodes_expanded = tree.internal_nodes().len() as u64;
    let terminals = tree.terminal_nodes(Traversal::Dfs);
    let mut verdict = None;
    for (i, id) in terminals.iter().take(k).enumerate() {
        stats.terminals_verified += 1;
        let path = tree.path_to(*id).expect("node exists");
        if path.last().is_some_and(|s| s.marker == Marker::Goal) && task.validate_solution(problem, &path.actions()) {
            verdict = Some(Verdict::Solved { path, candidate_rank: i + 1 });
            break;
        }
    }
    let complete = !parsed.truncated
        && terminals.len() <= k
        && tree.ids().all(|id| !tree.children(id).is_empty() || tree.node(id).is_some_and(|n| n.marker().is_terminal()));
    let verdict = verdict.unwrap_or(if complete && tree.len() > 1 { Verdict::Unsolvable } else { Verdict::BudgetExhausted });
    Ok(BaselineOutcome { verdict, stats, tree: Some(tree), actions: Vec::new() })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TotConfig {
    pub breadth: usize,
    pub samples_per_state: usize,
    pub temperature: f64,
    pub evaluator: RewardPreset,
    pub max_candidates: usize,
    pub max_tokens: usize,
}

impl Default for TotConfig {
    fn default() -> Self {
        TotConfig {
            breadth: 5,
            samples_per_state: 20,
            temperature: 0.3,
            evaluator: RewardPreset::Heuristic,
            max_candidates: 100,
            max_tokens: 64,
        }
    }
}

struct Proposal<S> {
    actions: Vec<String>,
    state: S,
    score: f64,
}

/// Level-synchronous beam search: every beam state is sampled
/// `samples_per_state` times with a single-chain prompt, distinct legal
/// proposals are scored by the evaluator, terminal proposals are verified
/// in score order and the best `breadth` viable ones form the next beam.
pub fn run_tot<T: Task, M: ModelProvider + ?Sized>(
    model: &mut M,
    task: &T,
    problem: &T::Problem,
    cfg: &TotConfig,
) -> Result<BaselineOutcome, SearchError> {
    let problem_text = task.render_problem(problem);
    let mut stats = RunStats::default();
    let mut beam: Vec<(Vec<String>, T::State)> = alloc::vec![(Vec::new(), task.initial_state(problem))];
    let max_depth = task.max_depth(problem);
    let mut rank = 0;
    let verdict = 'levels: loop {
        if beam.is_empty() {
            break Verdict::Unsolvable;
        }
        let mut pool: Vec<Proposal<T::State>> = Vec::new();
        for (acts, state) in &beam {
            let prompt = render_chain_prompt(&problem_text, acts);
            let mut seen: Vec<String> = Vec::new();
            stats.nodes_expanded += 1;
            for _ in 0..cfg.samples_per_state {
                let g = call(model, &prompt, &["\n"], cfg.max_tokens, cfg.temperature, &mut stats)?;
                let line = first_line(&g.text);
                let Ok(action) = task.parse_action(&line, problem, state) else { continue };
                let text = task.render_action(&action);
                if !dedup_candidates(&seen, &text) {
                    continue;
                }
                let Ok(next) = task.transition(problem, state, &action) else { continue };
                let score = RewardFn::<T>::score(&cfg.evaluator, task, problem, state, &action);
                seen.push(text.clone());
                let mut actions = acts.clone();
                actions.push(text);
                pool.push(Proposal { actions, state: next, score });
            }
        }
        let order = sort_siblings(&pool.iter().map(|p| p.score).collect::<Vec<_>>());
        let mut slots: Vec<Option<Proposal<T::State>>> = pool.into_iter().map(Some).collect();
        let mut next_beam = Vec::new();
        for i in order {
            let p = slots[i].take().expect("permutation");
            let goal = task.is_goal(problem, &p.state);
            let stuck = task.legal_actions(problem, &p.state).map(|a| a.is_empty()).unwrap_or(true);
            if goal || stuck || p.actions.len() >= max_depth {
                rank += 1;
                stats.terminals_verified += 1;
                let texts: Vec<&str> = p.actions.iter().map(|s| s.as_str()).collect();
                if goal && task.validate_solution(problem, &texts) {
                    break 'levels Verdict::Solved { path: solved_path(&p.actions), candidate_rank: rank };
                }
                if rank >= cfg.max_candidates {
                    break 'levels Verdict::BudgetExhausted;
                }
            } else if next_beam.len() < cfg.breadth {
                next_beam.push((p.actions, p.state));
            }
        }
        beam = next_beam;
    };
    Ok(BaselineOutcome { verdict, stats, tree: None, actions: Vec::new() })
}
