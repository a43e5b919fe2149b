//! Guided search-tree bootstrapping: build training trees that contain a
//! gold trajectory plus deduplicated, reward-ordered sampled branches.

use alloc::collections::VecDeque;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tasks::{marker_for, rendered_actions, Task};
use crate::tree::{Marker, NodeId, SearchTree};

/// Source of candidate actions for a state. Outputs may contain duplicates
/// and strings that are not legal actions; the caller filters them.
pub trait SupervisionPolicy<T: Task> {
    fn sample_actions(&mut self, task: &T, problem: &T::Problem, state: &T::State, n: usize, temperature: f64) -> Vec<String>;
}

/// Every legal action in canonical order, regardless of `n`.
#[derive(Clone, Copy, Debug, Default)]
pub struct CanonicalPolicy;

impl<T: Task> SupervisionPolicy<T> for CanonicalPolicy {
    fn sample_actions(&mut self, task: &T, problem: &T::Problem, state: &T::State, _n: usize, _temperature: f64) -> Vec<String> {
        rendered_actions(task, problem, state)
    }
}

/// Every legal action ordered by the task heuristic, best first; ties keep
/// canonical order. A stand-in for a low-temperature proposer that ranks
/// actions by its own preference.
#[derive(Clone, Copy, Debug, Default)]
pub struct RankedPolicy;

impl<T: Task> SupervisionPolicy<T> for RankedPolicy {
    fn sample_actions(&mut self, task: &T, problem: &T::Problem, state: &T::State, _n: usize, _temperature: f64) -> Vec<String> {
        let Ok(legal) = task.legal_actions(problem, state) else { return Vec::new() };
        let scores: Vec<f64> = legal.iter().map(|a| task.heuristic(problem, state, a)).collect();
        sort_siblings(&scores).into_iter().map(|i| task.render_action(&legal[i])).collect()
    }
}

/// Proposes nothing, so trees contain only the gold trajectory.
#[derive(Clone, Copy, Debug, Default)]
pub struct GoldOnlyPolicy;

impl<T: Task> SupervisionPolicy<T> for GoldOnlyPolicy {
    fn sample_actions(&mut self, _: &T, _: &T::Problem, _: &T::State, _: usize, _: f64) -> Vec<String> {
        Vec::new()
    }
}

/// Uniform draws over legal actions with replacement (temperature > 0), or
/// the canonical prefix (temperature 0).
#[derive(Clone, Debug)]
pub struct SamplingPolicy {
    rng: ChaCha8Rng,
}

impl SamplingPolicy {
    pub fn new(seed: u64) -> Self {
        SamplingPolicy { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl<T: Task> SupervisionPolicy<T> for SamplingPolicy {
    fn sample_actions(&mut self, task: &T, problem: &T::Problem, state: &T::State, n: usize, temperature: f64) -> Vec<String> {
        let legal = rendered_actions(task, problem, state);
        if temperature <= 0.0 || legal.is_empty() {
            return legal.into_iter().take(n).collect();
        }
        (0..n).map(|_| legal.choose(&mut self.rng).expect("nonempty").clone()).collect()
    }
}

/// A sampling policy that, per draw with probability `eps`, emits noise
/// instead: a whitespace-mangled copy of a legal action, a legal-looking
/// action with a corrupted suffix, or garbage.
#[derive(Clone, Debug)]
pub struct NoisyPolicy {
    eps: f64,
    rng: ChaCha8Rng,
}

impl NoisyPolicy {
    pub fn new(eps: f64, seed: u64) -> Self {
        NoisyPolicy { eps: eps.clamp(0.0, 1.0), rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl<T: Task> SupervisionPolicy<T> for NoisyPolicy {
    fn sample_actions(&mut self, task: &T, problem: &T::Problem, state: &T::State, n: usize, _temperature: f64) -> Vec<String> {
        let legal = rendered_actions(task, problem, state);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let Some(base) = legal.choose(&mut self.rng).cloned() else {
                out.push("???".to_string());
                continue;
            };
            if !self.rng.gen_bool(self.eps) {
                out.push(base);
                continue;
            }
            out.push(match self.rng.gen_range(0..3) {
                0 => {
                    let mut s = String::from("  ");
                    s.push_str(&base.replace(' ', "   "));
                    s.push(' ');
                    s
                }
                1 => base + "0",
                _ => "???".to_string(),
            });
        }
        out
    }
}

/// Scores an action in a state; higher is more promising.
pub trait RewardFn<T: Task> {
    fn score(&self, task: &T, problem: &T::Problem, state: &T::State, action: &T::Action) -> f64;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum RewardPreset {
    /// The task's own heuristic.
    #[default]
    Heuristic,
    /// Every action scores 0, so sorting keeps sampling order.
    Uniform,
}

impl RewardPreset {
    pub fn name(self) -> &'static str {
        match self {
            RewardPreset::Heuristic => "heuristic",
            RewardPreset::Uniform => "uniform",
        }
    }

    pub fn from_name(name: &str) -> Option<RewardPreset> {
        match name {
            "heuristic" => Some(RewardPreset::Heuristic),
            "uniform" => Some(RewardPreset::Uniform),
            _ => None,
        }
    }
}

impl<T: Task> RewardFn<T> for RewardPreset {
    fn score(&self, task: &T, problem: &T::Problem, state: &T::State, action: &T::Action) -> f64 {
        match self {
            RewardPreset::Heuristic => task.heuristic(problem, state, action),
            RewardPreset::Uniform => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BootstrapConfig {
    pub branch_factor: usize,
    pub temperature: f64,
    pub max_nodes: usize,
    pub mark_failures: bool,
    /// Keep the gold action first among its siblings after sorting.
    pub gold_pinned_first: bool,
    /// Policy calls per node before giving up on filling `branch_factor`.
    pub sample_rounds: usize,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            branch_factor: 5,
            temperature: 0.3,
            max_nodes: 10_000,
            mark_failures: true,
            gold_pinned_first: false,
            sample_rounds: 3,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BootstrapError {
    #[error("gold path does not validate")]
    InvalidGoldPath,
    #[error("node budget of {0} reached before the gold goal was added")]
    BudgetExceeded(usize),
    #[error("branch factor must be at least 1")]
    ZeroBranchFactor,
}

/// Counters for policy noise filtered during construction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Diagnostics {
    pub policy_calls: usize,
    pub illegal_dropped: usize,
    pub duplicates_dropped: usize,
}

/// A child about to be added, with everything needed to place it.
pub struct Candidate<T: Task> {
    pub text: String,
    pub action: T::Action,
    pub next: T::State,
    pub marker: Marker,
    pub score: f64,
    pub gold: bool,
}

fn dedup_key(text: &str) -> String {
    text.chars().filter(|c| !c.is_whitespace()).collect()
}

/// Whether `candidate` may join `existing` siblings: false when it equals
/// one of them once whitespace is disregarded.
pub fn dedup_candidates<S: AsRef<str>>(existing: &[S], candidate: &str) -> bool {
    let key = dedup_key(candidate);
    !existing.iter().any(|e| dedup_key(e.as_ref()) == key)
}

/// Indices of `scores` ordered by descending score; ties keep input order.
pub fn sort_siblings(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        let (x, y) = (scores[a], scores[b]);
        y.partial_cmp(&x).unwrap_or_else(|| x.is_nan().cmp(&y.is_nan()))
    });
    idx
}

/// The ordered children of one node: the gold action first if given, then
/// policy samples until `branch_factor` distinct legal actions are collected
/// (or the policy runs dry), sorted by reward.
#[allow(clippy::too_many_arguments)]
pub fn build_children<T: Task>(
    task: &T,
    problem: &T::Problem,
    state: &T::State,
    depth: usize,
    gold: Option<&T::Action>,
    policy: &mut dyn SupervisionPolicy<T>,
    reward: &dyn RewardFn<T>,
    cfg: &BootstrapConfig,
    diag: &mut Diagnostics,
) -> Vec<Candidate<T>> {
    let mut out: Vec<Candidate<T>> = Vec::new();
    let push = |out: &mut Vec<Candidate<T>>, action: T::Action, gold: bool| {
        let Ok(next) = task.transition(problem, state, &action) else { return };
        let mut marker = marker_for(task, problem, &next, depth + 1);
        if !cfg.mark_failures && marker == Marker::Fail {
            marker = Marker::Sep;
        }
        let score = reward.score(task, problem, state, &action);
        out.push(Candidate { text: task.render_action(&action), action, next, marker, score, gold });
    };
    if let Some(g) = gold {
        push(&mut out, g.clone(), true);
    }
    let mut rounds = 0;
    while out.len() < cfg.branch_factor && rounds < cfg.sample_rounds {
        rounds += 1;
        diag.policy_calls += 1;
        let samples = policy.sample_actions(task, problem, state, cfg.branch_factor - out.len(), cfg.temperature);
        if samples.is_empty() {
            break;
        }
        for s in samples {
            if out.len() >= cfg.branch_factor {
                break;
            }
            let Ok(action) = task.parse_action(&s, problem, state) else {
                diag.illegal_dropped += 1;
                continue;
            };
            let text = task.render_action(&action);
            let existing: Vec<&str> = out.iter().map(|c| c.text.as_str()).collect();
            if !dedup_candidates(&existing, &text) {
                diag.duplicates_dropped += 1;
                continue;
            }
            push(&mut out, action, false);
        }
    }
    let pinned = cfg.gold_pinned_first && out.first().is_some_and(|c| c.gold);
    let head = if pinned { Some(out.remove(0)) } else { None };
    let order = sort_siblings(&out.iter().map(|c| c.score).collect::<Vec<_>>());
    let mut slots: Vec<Option<Candidate<T>>> = out.into_iter().map(Some).collect();
    head.into_iter().chain(order.into_iter().map(|i| slots[i].take().expect("permutation"))).collect()
}

#[derive(Clone, Debug)]
pub struct Bootstrapped {
    pub tree: SearchTree,
    /// Root-to-goal node ids of the gold trajectory, root excluded.
    pub gold_nodes: Vec<NodeId>,
    pub diagnostics: Diagnostics,
}

/// Breadth-first tree construction around a gold trajectory. Stops right
/// after the expansion that adds the gold goal.
pub fn bootstrap_tree<T: Task, S: AsRef<str>>(
    task: &T,
    problem: &T::Problem,
    gold_path: &[S],
    policy: &mut dyn SupervisionPolicy<T>,
    reward: &dyn RewardFn<T>,
    cfg: &BootstrapConfig,
) -> Result<Bootstrapped, BootstrapError> {
    if cfg.branch_factor == 0 {
        return Err(BootstrapError::ZeroBranchFactor);
    }
    let texts: Vec<&str> = gold_path.iter().map(|s| s.as_ref()).collect();
    if texts.is_empty() || !task.validate_solution(problem, &texts) {
        return Err(BootstrapError::InvalidGoldPath);
    }
    let mut gold_actions = Vec::with_capacity(texts.len());
    let mut st = task.initial_state(problem);
    for t in &texts {
        let a = task.parse_action(t, problem, &st).map_err(|_| BootstrapError::InvalidGoldPath)?;
        st = task.transition(problem, &st, &a).map_err(|_| BootstrapError::InvalidGoldPath)?;
        gold_actions.push(a);
    }
    if !task.is_goal(problem, &st) {
        return Err(BootstrapError::InvalidGoldPath);
    }

    let mut tree = SearchTree::new(task.render_problem(problem));
    let mut diag = Diagnostics::default();
    let mut gold_nodes = Vec::new();
    // (node, state, depth, index of the next gold action if on the gold path)
    let mut queue = VecDeque::from([(tree.root(), task.initial_state(problem), 0usize, Some(0usize))]);
    while let Some((id, state, depth, gold_idx)) = queue.pop_front() {
        let gold = gold_idx.and_then(|i| gold_actions.get(i));
        let children = build_children(task, problem, &state, depth, gold, policy, reward, cfg, &mut diag);
        let mut reached_goal = false;
        for c in children {
            if tree.len() >= cfg.max_nodes {
                return Err(BootstrapError::BudgetExceeded(cfg.max_nodes));
            }
            let child = tree.add_child(id, &c.text, c.marker).expect("rendered legal actions are valid node text");
            let next_gold = if c.gold { gold_idx.map(|i| i + 1) } else { None };
            if c.gold {
                gold_nodes.push(child);
                reached_goal |= next_gold == Some(gold_actions.len());
            }
            if c.marker == Marker::Sep {
                queue.push_back((child, c.next, depth + 1, next_gold));
            }
        }
        if reached_goal {
            return Ok(Bootstrapped { tree, gold_nodes, diagnostics: diag });
        }
    }
    // The gold path always ends in a goal child, so the loop cannot drain
    // first unless the budget stopped it above.
    Err(BootstrapError::BudgetExceeded(cfg.max_nodes))
}

/// Gold action texts for a problem, from the task's reference solver.
pub fn reference_gold<T: Task>(task: &T, problem: &T::Problem) -> Option<Vec<String>> {
    task.reference_solution(problem).map(|acts| acts.iter().map(|a| task.render_action(a)).collect())
}
