//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line
//! with its measured runtime and limit; the binary exits non-zero if any
//! criterion fails.

#[path = "../common/mock.rs"]
mod mock;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use treelm::config::GridGenerator;
use treelm::datasets::{game24_instances, gridworld_instances, Filter, GridParams};
use treelm::records::Instance;
use treelm::remote::{RemoteConfig, RemoteModel};
use treelm_core::bootstrap::{
    bootstrap_tree, reference_gold, BootstrapConfig, Bootstrapped, CanonicalPolicy, NoisyPolicy, RewardPreset,
    SamplingPolicy, SupervisionPolicy,
};
use treelm_core::codec::{
    decode_block_text, encode_block_text, extract_training_examples, parse_context, render_context_text,
};
use treelm_core::models::{finish_local, NGramModel, NoisyModel, OracleConfig, OracleMode, OracleModel};
use treelm_core::search::baselines::{run_procedure_clone, run_sequential, run_tot, ChainConfig, PcConfig, TotConfig};
use treelm_core::search::run_tree_search;
use treelm_core::tasks::game24::{Game24, Game24Problem};
use treelm_core::tasks::{Gridworld, Task, TaskError};
use treelm_core::token::{detokenize, Token};
use treelm_core::{
    DecodeMode, ExpansionBlock, Generation, InferenceConfig, Marker, ModelError, ModelProvider, NodeId, PathStep,
    SearchTree, Strategy, TrainingExample, Verdict,
};

const WORKED: &str = include_str!("../../../core/tests/fixtures/game24_worked_example.txt");
const SEED: u64 = 20_241_016;

type Outcome = Result<String, String>;
type Criterion = (&'static str, u64, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn game24(count: usize, seed: u64, filter: Filter) -> Vec<Instance> {
    game24_instances(count, seed, "acceptance", filter, 10_000_000).expect("game24 instances")
}

fn grids(count: usize, seed: u64, min: i32, max: i32) -> Vec<Instance> {
    let params =
        GridParams { min_size: min, max_size: max, wall_density: 0.2, generator: GridGenerator::Repair, max_attempts: 100_000 };
    gridworld_instances(count, seed, "acceptance", &params).expect("gridworld instances")
}

fn parse<T: Task>(task: &T, inst: &Instance) -> T::Problem {
    task.parse_problem(&inst.problem).expect("instance parses")
}

fn unlimited() -> InferenceConfig {
    InferenceConfig { node_budget: usize::MAX, candidate_budget: usize::MAX, ..InferenceConfig::default() }
}

fn oracle_cfg(pinned: bool, seed: u64) -> OracleConfig {
    OracleConfig { gold_pinned_first: pinned, seed, ..OracleConfig::default() }
}

fn block_of(tree: &SearchTree, id: NodeId) -> ExpansionBlock {
    tree.children(id)
        .iter()
        .map(|&c| {
            let n = tree.node(c).unwrap();
            PathStep::new(n.action(), n.marker())
        })
        .collect()
}

// ---------------------------------------------------------------- 1

fn golden_serialization() -> Outcome {
    let mut t = SearchTree::new("Input:");
    let a = t.add_child(t.root(), "4 + 5 = 9", Marker::Sep).unwrap();
    let b = t.add_child(a, "6 + 9 = 15", Marker::Sep).unwrap();
    t.add_child(b, "9 + 15 = 24", Marker::Goal).unwrap();
    t.add_child(b, "9 - 15 = -6", Marker::Fail).unwrap();
    let path = t.path_to(b).unwrap();
    let block = block_of(&t, b);
    let text = render_context_text(t.problem(), &path).unwrap() + "\nOutput:\n" + &encode_block_text(&block).unwrap();
    ensure(text == WORKED, || format!("encoding differs from fixture:\n{text}"))?;

    let (prompt, out) = WORKED.split_once("\nOutput:\n").ok_or("fixture has no output section")?;
    let (problem, parsed) = parse_context(prompt).map_err(|e| e.to_string())?;
    ensure(problem == "Input:" && parsed == path, || format!("context decodes to {problem:?} {parsed:?}"))?;
    let decoded = decode_block_text(out, DecodeMode::Strict).map_err(|e| e.to_string())?;
    ensure(decoded.block == block && !decoded.truncated, || format!("block decodes to {:?}", decoded.block))?;
    Ok(format!("{} bytes identical, decode inverts", WORKED.len()))
}

// ---------------------------------------------------------------- 2

/// Exhaustive search over exact fractions, independent of the task's own
/// action enumeration.
fn reaches_24(nums: &[(i64, i64)]) -> bool {
    fn norm((n, d): (i64, i64)) -> (i64, i64) {
        fn gcd(a: i64, b: i64) -> i64 {
            if b == 0 {
                a.abs()
            } else {
                gcd(b, a % b)
            }
        }
        let g = gcd(n, d).max(1);
        let s = if d < 0 { -1 } else { 1 };
        (s * n / g, s * d / g)
    }
    if nums.len() == 1 {
        return norm(nums[0]) == (24, 1);
    }
    for i in 0..nums.len() {
        for j in 0..nums.len() {
            if i == j {
                continue;
            }
            let (a, b) = (nums[i], nums[j]);
            let mut results = vec![(a.0 * b.1 + b.0 * a.1, a.1 * b.1), (a.0 * b.1 - b.0 * a.1, a.1 * b.1), (a.0 * b.0, a.1 * b.1)];
            if b.0 != 0 {
                results.push((a.0 * b.1, a.1 * b.0));
            }
            let rest: Vec<(i64, i64)> = (0..nums.len()).filter(|&k| k != i && k != j).map(|k| nums[k]).collect();
            for r in results {
                let mut next = rest.clone();
                next.push(norm(r));
                if reaches_24(&next) {
                    return true;
                }
            }
        }
    }
    false
}

fn numbers(inst: &Instance) -> Vec<(i64, i64)> {
    parse(&Game24, inst).numbers.iter().map(|&n| (n, 1)).collect()
}

fn tslm_oracle<T: Task + Clone>(task: &T, p: &T::Problem, ocfg: OracleConfig, cfg: &InferenceConfig) -> Result<Verdict, String> {
    let mut m = OracleModel::new(task.clone(), ocfg, OracleMode::Tree);
    run_tree_search(&mut m, task, p, cfg).map(|o| o.verdict).map_err(|e| e.to_string())
}

fn unsolvable_detection() -> Outcome {
    let worked = Game24Problem::new(vec![1, 1, 2, 3]);
    ensure(!reaches_24(&[(1, 1), (1, 1), (2, 1), (3, 1)]), || "[1,1,2,3] is solvable by brute force".into())?;
    let v = tslm_oracle(&Game24, &worked, OracleConfig::default(), &unlimited())?;
    ensure(v == Verdict::Unsolvable, || format!("[1,1,2,3] -> {}", v.name()))?;

    let unsolvable = game24(100, SEED, Filter::Unsolvable);
    let solvable = game24(100, SEED + 1, Filter::Solvable);
    for i in &unsolvable {
        ensure(!reaches_24(&numbers(i)), || format!("{} is solvable by brute force", i.problem))?;
    }
    for i in &solvable {
        ensure(reaches_24(&numbers(i)), || format!("{} is unsolvable by brute force", i.problem))?;
    }
    let verdicts = |set: &[Instance]| -> Result<Vec<Verdict>, String> {
        set.par_iter().map(|i| tslm_oracle(&Game24, &parse(&Game24, i), OracleConfig::default(), &unlimited())).collect()
    };
    let hits = verdicts(&unsolvable)?.iter().filter(|v| **v == Verdict::Unsolvable).count();
    let false_alarms = verdicts(&solvable)?.iter().filter(|v| **v == Verdict::Unsolvable).count();
    ensure(hits == 100 && false_alarms == 0, || format!("unsolvable {hits}/100, false alarms {false_alarms}/100"))?;
    Ok(format!("[1,1,2,3] unsolvable; {hits}/100 unsolvable detected; {false_alarms}/100 false alarms"))
}

// ---------------------------------------------------------------- 3

fn table_shape() -> Outcome {
    let solvable = game24(100, SEED + 2, Filter::Solvable);
    let pass1 = solvable
        .par_iter()
        .map(|i| {
            let v = tslm_oracle(&Game24, &parse(&Game24, i), oracle_cfg(true, 0), &InferenceConfig::default())?;
            Ok(v.candidate_rank() == Some(1))
        })
        .collect::<Result<Vec<bool>, String>>()?
        .into_iter()
        .filter(|b| *b)
        .count();

    let grid = grids(100, SEED + 3, 10, 10);
    let exact = grid
        .par_iter()
        .map(|i| {
            let p = parse(&Gridworld, i);
            let gold = reference_gold(&Gridworld, &p).ok_or("grid without reference path")?;
            let v = tslm_oracle(&Gridworld, &p, oracle_cfg(true, 0), &unlimited())?;
            Ok(matches!(v, Verdict::Solved { path, .. } if path.actions() == gold))
        })
        .collect::<Result<Vec<bool>, String>>()?
        .into_iter()
        .filter(|b| *b)
        .count();

    // noisy comparison: both methods see the same eps and the same seed per
    // instance; SC follows the top-1 action, TSLM searches one tree
    let eps = 0.2;
    let noisy = game24(500, SEED + 4, Filter::Solvable);
    let results: Vec<(bool, bool)> = noisy
        .par_iter()
        .enumerate()
        .map(|(n, i)| {
            let p = parse(&Game24, i);
            let seed = SEED ^ (n as u64);
            let mut sc_model = NoisyModel::new(OracleModel::new(Game24, oracle_cfg(true, seed), OracleMode::Step), eps, seed);
            let sc = run_sequential(&mut sc_model, &Game24, &p, &ChainConfig::default()).map_err(|e| e.to_string())?;
            let mut tree_model = NoisyModel::new(OracleModel::new(Game24, oracle_cfg(true, seed), OracleMode::Tree), eps, seed);
            let tslm = run_tree_search(&mut tree_model, &Game24, &p, &InferenceConfig::default()).map_err(|e| e.to_string())?;
            Ok((sc.verdict.is_solved(), tslm.verdict.is_solved()))
        })
        .collect::<Result<_, String>>()?;
    let sc = results.iter().filter(|r| r.0).count() as f64 / results.len() as f64;
    let tslm = results.iter().filter(|r| r.1).count() as f64 / results.len() as f64;
    let detail = format!(
        "game24 pass@1 {pass1}/100; 10x10 exact match {exact}/100; eps=0.2 over 500: TSLM {:.1}% vs SC {:.1}% (gap {:.1} points)",
        100.0 * tslm,
        100.0 * sc,
        100.0 * (tslm - sc)
    );
    ensure(pass1 == 100 && exact == 100 && tslm - sc >= 0.20, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 4

fn relabel(tree: &SearchTree) -> SearchTree {
    let mut out = SearchTree::new(tree.problem());
    let mut map = BTreeMap::from([(tree.root(), out.root())]);
    for id in tree.bfs_order() {
        for &c in tree.children(id) {
            let n = tree.node(c).unwrap();
            let new = out.add_child(map[&id], &format!("n{}", c.index()), n.marker()).unwrap();
            map.insert(c, new);
        }
    }
    out
}

fn ancestors(tree: &SearchTree, id: NodeId) -> Vec<NodeId> {
    let mut out = Vec::new();
    let mut at = tree.node(id).unwrap().parent();
    while let Some(p) = at {
        out.push(p);
        at = tree.node(p).unwrap().parent();
    }
    out
}

fn check_decoupling(tree: &SearchTree) -> Result<usize, String> {
    let tree = relabel(tree);
    let examples = extract_training_examples(&tree, "t");
    let internal = tree.ids().filter(|&id| !tree.children(id).is_empty()).count();
    ensure(examples.len() == internal, || format!("{} examples for {internal} internal nodes", examples.len()))?;
    let label = |id: NodeId| format!("n{}", id.index());
    let all: BTreeSet<String> = tree.ids().filter(|&i| i != tree.root()).map(label).collect();
    for e in &examples {
        let n = e.node_id;
        let mut allowed: BTreeSet<String> = ancestors(&tree, n).into_iter().chain([n]).filter(|&i| i != tree.root()).map(label).collect();
        let context_only = allowed.clone();
        allowed.extend(tree.children(n).iter().map(|&c| label(c)));
        let words = |toks: &[Token]| -> Vec<String> {
            toks.iter().filter_map(|t| match t {
                Token::Word(w) if all.contains(w.as_str()) => Some(w.to_string()),
                _ => None,
            })
            .collect()
        };
        for w in words(&e.context) {
            ensure(context_only.contains(&w), || format!("context of node {} contains {w}", n.index()))?;
        }
        for w in words(&e.target) {
            ensure(allowed.contains(&w), || format!("target of node {} contains {w}", n.index()))?;
        }
        let depth = tree.node(n).unwrap().depth();
        ensure(words(&e.context).len() == depth, || format!("context of node {} omits ancestors", n.index()))?;
    }
    Ok(examples.len())
}

fn bootstrap_game24(inst: &Instance, policy: &mut dyn SupervisionPolicy<Game24>, cfg: &BootstrapConfig) -> Result<Bootstrapped, String> {
    let p = parse(&Game24, inst);
    let gold = reference_gold(&Game24, &p).ok_or("no reference solution")?;
    bootstrap_tree(&Game24, &p, &gold, policy, &RewardPreset::Heuristic, cfg).map_err(|e| e.to_string())
}

fn context_decoupling() -> Outcome {
    let insts = game24(1000, SEED + 5, Filter::Solvable);
    let counts: Vec<usize> = insts
        .par_iter()
        .enumerate()
        .map(|(n, inst)| {
            let seed = SEED ^ n as u64;
            let cfg = BootstrapConfig { branch_factor: 1 + n % 6, gold_pinned_first: n % 2 == 0, ..BootstrapConfig::default() };
            let out = if n % 2 == 0 {
                bootstrap_game24(inst, &mut NoisyPolicy::new(0.3, seed), &cfg)?
            } else {
                bootstrap_game24(inst, &mut SamplingPolicy::new(seed), &cfg)?
            };
            check_decoupling(&out.tree)
        })
        .collect::<Result<_, String>>()?;
    Ok(format!("1000 trees, {} stitched examples, none leaks a sibling subtree", counts.iter().sum::<usize>()))
}

// ---------------------------------------------------------------- 5

/// Any action is legal; a path is solved when its last action starts with
/// "goal".
#[derive(Clone, Copy)]
struct Labels;

impl Task for Labels {
    type Problem = String;
    type State = Vec<String>;
    type Action = String;
    fn name(&self) -> &'static str {
        "labels"
    }
    fn render_problem(&self, p: &String) -> String {
        p.clone()
    }
    fn parse_problem(&self, text: &str) -> Result<String, TaskError> {
        Ok(text.to_string())
    }
    fn initial_state(&self, _: &String) -> Vec<String> {
        Vec::new()
    }
    fn legal_actions(&self, _: &String, _: &Vec<String>) -> Result<Vec<String>, TaskError> {
        Ok(Vec::new())
    }
    fn transition(&self, _: &String, s: &Vec<String>, a: &String) -> Result<Vec<String>, TaskError> {
        Ok(s.iter().cloned().chain([a.clone()]).collect())
    }
    fn is_goal(&self, _: &String, s: &Vec<String>) -> bool {
        s.last().is_some_and(|a| a.starts_with("goal"))
    }
    fn render_action(&self, a: &String) -> String {
        a.clone()
    }
    fn parse_action(&self, text: &str, _: &String, _: &Vec<String>) -> Result<String, TaskError> {
        Ok(text.to_string())
    }
    fn max_depth(&self, _: &String) -> usize {
        16
    }
    fn validate_solution(&self, _: &String, path: &[&str]) -> bool {
        path.last().is_some_and(|a| a.starts_with("goal"))
    }
    fn reference_solution(&self, _: &String) -> Option<Vec<String>> {
        None
    }
}

/// Replays a fixed tree: the context of each node is answered with the
/// block of its children.
struct Replay(BTreeMap<String, String>);

impl Replay {
    fn new(tree: &SearchTree) -> Replay {
        Replay(
            tree.internal_nodes()
                .into_iter()
                .map(|id| {
                    let ctx = render_context_text(tree.problem(), &tree.path_to(id).unwrap()).unwrap();
                    (ctx, encode_block_text(&block_of(tree, id)).unwrap())
                })
                .collect(),
        )
    }
}

impl ModelProvider for Replay {
    fn generate(&mut self, context: &str, stop: &[&str], max_tokens: usize, _: f64) -> Result<Generation, ModelError> {
        let out = self.0.get(context).ok_or_else(|| ModelError::UnparseableContext(context.to_string()))?;
        Ok(finish_local(out, stop, max_tokens))
    }
}

/// The preferred (first) root branch reaches a goal at `deep`; the second
/// branch reaches one at `shallow`. Every chain node also gets a failing
/// sibling.
fn two_goal_tree(shallow: usize, deep: usize) -> SearchTree {
    let mut t = SearchTree::new("labels");
    let root = t.root();
    let mut chains = Vec::new();
    for (name, depth) in [("deep", deep), ("shallow", shallow)] {
        let mut at = root;
        for d in 1..depth {
            at = t.add_child(at, &format!("{name}-{d}"), Marker::Sep).unwrap();
        }
        chains.push((at, name));
    }
    for (at, name) in chains {
        t.add_child(at, &format!("goal-{name}"), Marker::Goal).unwrap();
    }
    for id in t.ids().collect::<Vec<_>>() {
        if t.node(id).unwrap().marker() == Marker::Sep && id != root {
            t.add_child(id, &format!("dead-{}", id.index()), Marker::Fail).unwrap();
        }
    }
    t
}

fn first_goal(tree: &SearchTree, strategy: Strategy) -> Result<String, String> {
    let cfg = InferenceConfig { strategy, ..unlimited() };
    let out = run_tree_search(&mut Replay::new(tree), &Labels, &tree.problem().to_string(), &cfg).map_err(|e| e.to_string())?;
    match out.verdict {
        Verdict::Solved { path, .. } => Ok(path.last().unwrap().action.clone()),
        v => Err(format!("constructed tree not solved: {}", v.name())),
    }
}

fn traversal_properties() -> Outcome {
    let shapes = [(1, 2), (1, 3), (1, 5), (2, 3), (2, 6), (3, 4), (3, 8)];
    for (s, d) in shapes {
        let t = two_goal_tree(s, d);
        let bfs = first_goal(&t, Strategy::Bfs)?;
        let dfs = first_goal(&t, Strategy::Dfs)?;
        ensure(bfs == "goal-shallow" && dfs == "goal-deep", || format!("shallow {s} deep {d}: bfs {bfs}, dfs {dfs}"))?;
    }

    let insts = game24(1000, SEED + 6, Filter::All);
    let agree: Vec<(bool, bool)> = insts
        .par_iter()
        .map(|i| {
            let p = parse(&Game24, i);
            let run = |strategy, stop| {
                let cfg = InferenceConfig { strategy, stop_on_solution: stop, ..unlimited() };
                let mut m = OracleModel::new(Game24, OracleConfig::default(), OracleMode::Tree);
                run_tree_search(&mut m, &Game24, &p, &cfg).map_err(|e| e.to_string())
            };
            let (b, d) = (run(Strategy::Bfs, true)?, run(Strategy::Dfs, true)?);
            let (bf, df) = (run(Strategy::Bfs, false)?, run(Strategy::Dfs, false)?);
            Ok((b.verdict.name() == d.verdict.name() && bf.verdict.name() == df.verdict.name(), bf.tree.same_shape(&df.tree)))
        })
        .collect::<Result<_, String>>()?;
    let same_verdict = agree.iter().filter(|a| a.0).count();
    let same_tree = agree.iter().filter(|a| a.1).count();
    ensure(same_verdict == 1000 && same_tree == 1000, || format!("verdicts agree {same_verdict}/1000, trees agree {same_tree}/1000"))?;
    Ok(format!("{} constructed trees: BFS shallow, DFS deep; 1000/1000 verdicts and full trees agree", shapes.len()))
}

// ---------------------------------------------------------------- 6

fn squash(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

fn check_invariants<T: Task>(task: &T, p: &T::Problem, gold: &[String], out: &Bootstrapped, pinned: bool) -> Result<(), String> {
    let t = &out.tree;
    // gold containment
    ensure(out.gold_nodes.len() == gold.len(), || "gold node count differs from gold length".into())?;
    let mut parent = t.root();
    for (id, g) in out.gold_nodes.iter().zip(gold) {
        let n = t.node(*id).ok_or("gold node missing")?;
        ensure(n.parent() == Some(parent) && squash(n.action()) == squash(g), || format!("gold step {g} misplaced"))?;
        parent = *id;
    }
    ensure(t.node(parent).unwrap().marker() == Marker::Goal, || "gold path does not end in a goal".into())?;
    let gold_set: BTreeSet<NodeId> = out.gold_nodes.iter().copied().collect();

    for id in t.internal_nodes() {
        let kids = t.children(id);
        // dedup
        let keys: BTreeSet<String> = kids.iter().map(|&c| squash(t.node(c).unwrap().action())).collect();
        ensure(keys.len() == kids.len(), || format!("duplicate siblings under node {}", id.index()))?;
        // monotone rewards, recomputed from the replayed state
        let path = t.path_to(id).unwrap();
        let mut state = task.initial_state(p);
        for a in path.actions() {
            let act = task.parse_action(a, p, &state).map_err(|e| e.to_string())?;
            state = task.transition(p, &state, &act).map_err(|e| e.to_string())?;
        }
        let scores: Vec<f64> = kids
            .iter()
            .map(|&c| {
                let act = task.parse_action(t.node(c).unwrap().action(), p, &state).expect("child is legal");
                task.heuristic(p, &state, &act)
            })
            .collect();
        let skip = usize::from(pinned && kids.first().is_some_and(|c| gold_set.contains(c)));
        if pinned && (id == t.root() || gold_set.contains(&id)) && !gold_set.is_empty() {
            let on_path = kids.iter().any(|c| gold_set.contains(c));
            ensure(!on_path || skip == 1, || format!("gold child not first under node {}", id.index()))?;
        }
        ensure(scores[skip..].windows(2).all(|w| w[0] >= w[1]), || format!("rewards not sorted under node {}: {scores:?}", id.index()))?;
    }
    Ok(())
}

fn bootstrap_invariants() -> Outcome {
    let g24 = game24(400, SEED + 7, Filter::Solvable);
    let grid = grids(100, SEED + 8, 3, 7);
    let mut total = 0;
    for pinned in [false, true] {
        let cfg = |n: usize| BootstrapConfig { branch_factor: 2 + n % 5, gold_pinned_first: pinned, ..BootstrapConfig::default() };
        let a: usize = g24
            .par_iter()
            .enumerate()
            .map(|(n, inst)| {
                let p = parse(&Game24, inst);
                let gold = reference_gold(&Game24, &p).unwrap();
                let mut pol = NoisyPolicy::new(0.3, SEED ^ n as u64);
                let out = bootstrap_tree(&Game24, &p, &gold, &mut pol, &RewardPreset::Heuristic, &cfg(n)).map_err(|e| e.to_string())?;
                check_invariants(&Game24, &p, &gold, &out, pinned).map_err(|e| format!("{}: {e}", inst.problem))?;
                Ok(1)
            })
            .sum::<Result<usize, String>>()?;
        let b: usize = grid
            .par_iter()
            .enumerate()
            .map(|(n, inst)| {
                let p = parse(&Gridworld, inst);
                let gold = reference_gold(&Gridworld, &p).unwrap();
                let mut pol = NoisyPolicy::new(0.3, SEED ^ n as u64);
                let out =
                    bootstrap_tree(&Gridworld, &p, &gold, &mut pol, &RewardPreset::Heuristic, &cfg(n)).map_err(|e| e.to_string())?;
                check_invariants(&Gridworld, &p, &gold, &out, pinned).map_err(|e| format!("{}: {e}", inst.id))?;
                Ok(1)
            })
            .sum::<Result<usize, String>>()?;
        total += a + b;
    }
    Ok(format!("{} trees per setting (pinned and unpinned): containment, dedup and ordering hold", total / 2))
}

// ---------------------------------------------------------------- 7

fn efficiency() -> Outcome {
    let insts = game24(200, SEED + 9, Filter::All);
    let ks: Vec<usize> = (1..=10).collect();
    // per instance, per k: (tslm, tot, pc) tokens
    let rows: Vec<Vec<(u64, u64, u64)>> = insts
        .par_iter()
        .enumerate()
        .map(|(n, inst)| {
            let p = parse(&Game24, inst);
            let seed = SEED ^ n as u64;
            ks.iter()
                .map(|&k| {
                    let cfg = InferenceConfig { candidate_budget: k, ..InferenceConfig::default() };
                    let mut tree = OracleModel::new(Game24, oracle_cfg(false, seed), OracleMode::Tree);
                    let tslm = run_tree_search(&mut tree, &Game24, &p, &cfg).map_err(|e| e.to_string())?;
                    let mut step = OracleModel::new(Game24, oracle_cfg(false, seed), OracleMode::Step);
                    let tot_cfg = TotConfig { max_candidates: k, ..TotConfig::default() };
                    let tot = run_tot(&mut step, &Game24, &p, &tot_cfg).map_err(|e| e.to_string())?;
                    let mut trace = OracleModel::new(Game24, oracle_cfg(false, seed), OracleMode::Trace);
                    let pc = run_procedure_clone(&mut trace, &Game24, &p, k, &PcConfig::default()).map_err(|e| e.to_string())?;
                    Ok((tslm.stats.tokens_generated, tot.stats.tokens_generated, pc.stats.tokens_generated))
                })
                .collect()
        })
        .collect::<Result<_, String>>()?;

    let path = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("efficiency_curve.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| e.to_string())?;
    w.write_record(["k", "tslm_tokens", "tot_tokens", "pc_tokens"]).map_err(|e| e.to_string())?;
    let mut failures = Vec::new();
    let mut last = (0.0, 0.0, 0.0);
    for (i, &k) in ks.iter().enumerate() {
        let sum = rows.iter().fold((0u64, 0u64, 0u64), |a, r| (a.0 + r[i].0, a.1 + r[i].1, a.2 + r[i].2));
        let n = rows.len() as f64;
        last = (sum.0 as f64 / n, sum.1 as f64 / n, sum.2 as f64 / n);
        w.write_record([k.to_string(), format!("{:.2}", last.0), format!("{:.2}", last.1), format!("{:.2}", last.2)])
            .map_err(|e| e.to_string())?;
        if !(sum.0 < sum.1 && sum.0 <= sum.2) {
            failures.push(format!("k={k}: tslm {} tot {} pc {}", sum.0, sum.1, sum.2));
        }
    }
    w.flush().map_err(|e| e.to_string())?;
    ensure(failures.is_empty(), || failures.join("; "))?;
    Ok(format!(
        "mean tokens at k=10: TSLM {:.1}, ToT {:.1}, PC {:.1}; curve in {}",
        last.0,
        last.1,
        last.2,
        path.display()
    ))
}

// ---------------------------------------------------------------- 8

/// success@k for k = 1..=10 at branch cap 10, one search per k. A clean
/// oracle must never produce a block that fails to parse; a noisy one may
/// drop every child of a node, which is recorded as a malformed expansion.
fn success_curve<T: Task + Clone, M: ModelProvider>(
    task: &T,
    p: &T::Problem,
    clean: bool,
    mut model: impl FnMut() -> M,
) -> Result<Vec<bool>, String> {
    (1..=10)
        .map(|k| {
            let cfg = InferenceConfig { branch_cap: 10, candidate_budget: k, ..InferenceConfig::default() };
            let out = run_tree_search(&mut model(), task, p, &cfg).map_err(|e| e.to_string())?;
            ensure(!clean || out.stats.malformed_expansions == 0, || format!("{} malformed expansions at k={k}", out.stats.malformed_expansions))?;
            Ok(out.verdict.is_solved())
        })
        .collect()
}

fn monotone(curve: &[bool]) -> bool {
    curve.windows(2).all(|w| w[0] <= w[1])
}

fn branching_extrapolation() -> Outcome {
    let g24 = game24(100, SEED + 10, Filter::All);
    let grid = grids(50, SEED + 11, 4, 6);
    let supervision = |seed| OracleConfig { k: 5, seed, ..OracleConfig::default() };
    let mut runs = 0;
    let mut solved_at = [0usize; 10];
    for eps in [0.0, 0.1] {
        let a: Vec<Vec<bool>> = g24
            .par_iter()
            .enumerate()
            .map(|(n, i)| {
                let p = parse(&Game24, i);
                let seed = SEED ^ n as u64;
                let c = success_curve(&Game24, &p, eps == 0.0, || {
                    NoisyModel::new(OracleModel::new(Game24, supervision(seed), OracleMode::Tree), eps, seed)
                })?;
                ensure(monotone(&c), || format!("{} eps {eps}: {c:?}", i.problem)).map(|_| c)
            })
            .collect::<Result<_, String>>()?;
        let b: Vec<Vec<bool>> = grid
            .par_iter()
            .enumerate()
            .map(|(n, i)| {
                let p = parse(&Gridworld, i);
                let seed = SEED ^ n as u64;
                let c = success_curve(&Gridworld, &p, eps == 0.0, || {
                    NoisyModel::new(OracleModel::new(Gridworld, supervision(seed), OracleMode::Tree), eps, seed)
                })?;
                ensure(monotone(&c), || format!("{} eps {eps}: {c:?}", i.id)).map(|_| c)
            })
            .collect::<Result<_, String>>()?;
        for c in a.iter().chain(&b) {
            runs += 1;
            for (k, s) in c.iter().enumerate() {
                solved_at[k] += usize::from(*s);
            }
        }
    }
    Ok(format!("{runs} instance runs at cap 10 on k=5 supervision, clean oracle never malformed; solved at k=1 {} / k=10 {}", solved_at[0], solved_at[9]))
}

// ---------------------------------------------------------------- 9

fn grid_examples(insts: &[Instance]) -> Vec<TrainingExample> {
    insts
        .par_iter()
        .flat_map_iter(|inst| {
            let p = parse(&Gridworld, inst);
            let gold = reference_gold(&Gridworld, &p).unwrap();
            let out = bootstrap_tree(&Gridworld, &p, &gold, &mut CanonicalPolicy, &RewardPreset::Heuristic, &BootstrapConfig::default())
                .expect("bootstrap");
            extract_training_examples(&out.tree, &inst.id)
        })
        .collect()
}

fn acceptance_rate(model: &NGramModel, contexts: &[String], temperature: f64) -> f64 {
    let mut m = model.clone().with_seed(SEED);
    let ok = contexts
        .iter()
        .filter(|c| {
            let g = m.generate(c, &["[EOS]"], 64, temperature).expect("local generation");
            decode_block_text(&g.text, DecodeMode::Strict).is_ok()
        })
        .count();
    ok as f64 / contexts.len() as f64
}

fn ngram_format() -> Outcome {
    let train = grids(400, SEED + 12, 2, 4);
    let seen: BTreeSet<&str> = train.iter().map(|i| i.problem.as_str()).collect();
    let held: Vec<Instance> = grids(200, SEED + 13, 4, 4).into_iter().filter(|i| !seen.contains(i.problem.as_str())).collect();
    ensure(held.len() >= 50, || format!("only {} held-out grids", held.len()))?;
    let examples = grid_examples(&train);
    let contexts: Vec<String> = grid_examples(&held).iter().map(|e| detokenize(&e.context)).collect();
    let fitted = NGramModel::fit(&examples, 4).map_err(|e| e.to_string())?;
    let uniform = NGramModel::uniform(&examples, 4);
    let f = acceptance_rate(&fitted, &contexts, 1.0);
    let u = acceptance_rate(&uniform, &contexts, 1.0);
    let greedy = acceptance_rate(&fitted, &contexts, 0.0);
    let detail = format!(
        "{} examples, {} held-out 4x4 contexts: fitted {:.1}% (greedy {:.1}%), uniform {:.1}%",
        examples.len(),
        contexts.len(),
        100.0 * f,
        100.0 * greedy,
        100.0 * u
    );
    ensure(f > u, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 10

fn remote_model(url: &str, attempts: u32, timeout: Duration) -> Result<RemoteModel, String> {
    let cfg = RemoteConfig {
        api_key: Some("secret".into()),
        model: "tree-lm".into(),
        attempts,
        backoff: Duration::from_millis(10),
        timeout,
        ..RemoteConfig::new(url)
    };
    RemoteModel::new(cfg).map_err(|e| e.to_string())
}

fn remote_contract() -> Outcome {
    // fields, stop handling, usage
    let server = mock::MockServer::scripted(vec![
        mock::Reply::completion("[BOS]\nup [SEP] [EOS] right [GOAL]", 7),
        mock::Reply::completion("[BOS]\nleft [FAIL] ", 5),
    ]);
    let mut m = remote_model(&server.url, 3, Duration::from_secs(5))?;
    let g = m.generate("Input:\ngrid 2 x 2\n", &["[EOS]"], 32, 0.5).map_err(|e| e.to_string())?;
    let h = m.generate("Input:\ngrid 3 x 3\n", &["[EOS]"], 16, 0.0).map_err(|e| e.to_string())?;
    let reqs = server.requests();
    ensure(reqs.len() == 2, || format!("{} requests", reqs.len()))?;
    let r = &reqs[0];
    let body = r.json();
    ensure(r.method == "POST" && r.path == "/v1/completions", || format!("{} {}", r.method, r.path))?;
    ensure(r.header("authorization") == Some("Bearer secret"), || format!("auth header {:?}", r.header("authorization")))?;
    ensure(
        body["model"] == "tree-lm"
            && body["prompt"] == "Input:\ngrid 2 x 2\n"
            && body["max_tokens"] == 32
            && body["temperature"] == 0.5
            && body["stop"] == serde_json::json!(["[EOS]"]),
        || format!("request body {body}"),
    )?;
    ensure(g.text == "[BOS]\nup [SEP] ", || format!("stop not honoured: {:?}", g.text))?;
    ensure(g.tokens_generated + h.tokens_generated == 12, || "usage not taken from the response".into())?;

    // retry on 500
    let server = mock::MockServer::scripted(vec![
        mock::Reply::status(500),
        mock::Reply::status(500),
        mock::Reply::completion("[BOS]\nup [GOAL] ", 3),
    ]);
    let g = remote_model(&server.url, 3, Duration::from_secs(5))?.generate("x", &["[EOS]"], 8, 0.0).map_err(|e| e.to_string())?;
    ensure(server.requests().len() == 3 && g.text == "[BOS]\nup [GOAL] ", || format!("retry: {} requests, {:?}", server.requests().len(), g.text))?;

    let server = mock::MockServer::scripted(vec![mock::Reply::status(500)]);
    let e = remote_model(&server.url, 3, Duration::from_secs(5))?.generate("x", &[], 8, 0.0);
    ensure(matches!(e, Err(ModelError::Http { status: 500, .. })) && server.requests().len() == 3, || format!("persistent 500: {e:?}"))?;

    let server = mock::MockServer::scripted(vec![mock::Reply::status(400)]);
    let e = remote_model(&server.url, 3, Duration::from_secs(5))?.generate("x", &[], 8, 0.0);
    ensure(matches!(e, Err(ModelError::Http { status: 400, .. })) && server.requests().len() == 1, || format!("client error: {e:?}"))?;

    let server = mock::MockServer::scripted(vec![mock::Reply::ok(r#"{"choices":[{"text":"a"}]}"#)]);
    let e = remote_model(&server.url, 3, Duration::from_secs(5))?.generate("x", &[], 8, 0.0);
    ensure(matches!(e, Err(ModelError::MalformedResponse(_))), || format!("missing usage: {e:?}"))?;

    Ok("fields, auth, stop truncation, usage sum, 500-500-200 retry, no retry on 400".into())
}

// ----------------------------------------------------------------

fn main() {
    let criteria: [Criterion; 10] = [
        ("golden serialization", 1, golden_serialization),
        ("unsolvable detection", 60, unsolvable_detection),
        ("oracle-limit success shape", 600, table_shape),
        ("context decoupling", 60, context_decoupling),
        ("BFS/DFS properties", 60, traversal_properties),
        ("bootstrap invariants", 120, bootstrap_invariants),
        ("efficiency accounting", 300, efficiency),
        ("branching extrapolation", 120, branching_extrapolation),
        ("n-gram format acquisition", 300, ngram_format),
        ("remote client contract", 10, remote_contract),
    ];
    let mut failed = 0;
    for (n, (name, limit, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        let result = result.and_then(|d| if secs <= *limit as f64 { Ok(d) } else { Err(format!("{d}; over time limit")) });
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(e) => ("FAIL", e),
        };
        failed += usize::from(result.is_err());
        println!("criterion {:>2} {tag} {name} ({secs:.2}s, limit {limit}s): {detail}", n + 1);
        std::io::stdout().flush().ok();
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
