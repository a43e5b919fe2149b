//! Training-data pipeline: bootstrap trees, extract examples, fit the
//! n-gram model. Each stage appends to its output and skips records that
//! are already present, so an interrupted run can be resumed.

use std::collections::BTreeSet;
use std::path::Path;

use anyhow::Context;
use rayon::prelude::*;
use treelm_core::bootstrap::{
    bootstrap_tree, reference_gold, BootstrapConfig, CanonicalPolicy, GoldOnlyPolicy, NoisyPolicy, RankedPolicy, SamplingPolicy,
    SupervisionPolicy,
};
use treelm_core::codec::extract_training_examples;
use treelm_core::models::NGramModel;
use treelm_core::tasks::{Game24, Gridworld, Task, TaskKind};

use crate::config::{Config, PolicySpec};
use crate::provider::salt;
use crate::records::{
    append_jsonl, read_jsonl, read_jsonl_if_exists, ExampleRecord, Instance, TreeMeta, TreeRecord,
};

pub fn bootstrap_config(cfg: &Config) -> BootstrapConfig {
    BootstrapConfig {
        branch_factor: cfg.supervision_k,
        temperature: cfg.temperature,
        max_nodes: cfg.max_nodes,
        mark_failures: true,
        gold_pinned_first: cfg.gold_pinned_first,
        sample_rounds: cfg.sample_rounds,
    }
}

fn policy<T: Task>(spec: PolicySpec, seed: u64) -> Box<dyn SupervisionPolicy<T>> {
    match spec {
        PolicySpec::Canonical => Box::new(CanonicalPolicy),
        PolicySpec::Ranked => Box::new(RankedPolicy),
        PolicySpec::Gold => Box::new(GoldOnlyPolicy),
        PolicySpec::Sampling => Box::new(SamplingPolicy::new(seed)),
        PolicySpec::Noisy(eps) => Box::new(NoisyPolicy::new(eps, seed)),
    }
}

/// Bootstraps one tree around the task's reference solution.
pub fn bootstrap_instance<T: Task>(task: &T, inst: &Instance, cfg: &Config) -> anyhow::Result<TreeRecord> {
    let problem = task.parse_problem(&inst.problem)?;
    let gold = reference_gold(task, &problem).context("instance has no reference solution")?;
    let seed = cfg.seed ^ salt(&inst.id);
    let mut pol = policy::<T>(cfg.policy, seed);
    let out = bootstrap_tree(task, &problem, &gold, pol.as_mut(), &cfg.reward, &bootstrap_config(cfg))?;
    let meta = TreeMeta {
        k: cfg.supervision_k,
        temperature: cfg.temperature,
        reward_preset: cfg.reward.name().to_string(),
        seed,
        gold_pinned_first: cfg.gold_pinned_first,
        policy: cfg.policy.to_string(),
    };
    Ok(TreeRecord::from_tree(&inst.id, inst.task, &out.tree, &out.gold_nodes, meta))
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StageReport {
    pub written: usize,
    pub skipped: usize,
    /// `(id, error)` for records that could not be produced.
    pub failures: Vec<(String, String)>,
}

fn pool(workers: usize) -> anyhow::Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(workers).build()?)
}

/// Bootstraps every solvable instance not yet in `out`. Unsolvable
/// instances have no gold trajectory and are skipped.
pub fn bootstrap_file(instances: &Path, out: &Path, cfg: &Config) -> anyhow::Result<StageReport> {
    let instances: Vec<Instance> = read_jsonl(instances)?;
    let done: BTreeSet<String> = read_jsonl_if_exists::<TreeRecord>(out)?.into_iter().map(|t| t.tree_id).collect();
    let mut report = StageReport::default();
    let todo: Vec<&Instance> = instances
        .iter()
        .filter(|i| {
            let skip = done.contains(&i.id) || !i.solvable;
            report.skipped += usize::from(skip);
            !skip
        })
        .collect();
    let results: Vec<(String, anyhow::Result<TreeRecord>)> = pool(cfg.workers)?.install(|| {
        todo.par_iter()
            .map(|inst| {
                let r = match inst.task {
                    TaskKind::Game24 => bootstrap_instance(&Game24, inst, cfg),
                    TaskKind::Gridworld => bootstrap_instance(&Gridworld, inst, cfg),
                };
                (inst.id.clone(), r)
            })
            .collect()
    });
    let mut trees = Vec::new();
    for (id, r) in results {
        match r {
            Ok(t) => trees.push(t),
            Err(e) => report.failures.push((id, format!("{e:#}"))),
        }
    }
    append_jsonl(out, &trees)?;
    report.written = trees.len();
    Ok(report)
}

/// One example per internal node of every tree; pairs already present in
/// `out` are skipped.
pub fn extract_file(trees: &Path, out: &Path) -> anyhow::Result<StageReport> {
    let trees: Vec<TreeRecord> = read_jsonl(trees)?;
    let done: BTreeSet<(String, usize)> =
        read_jsonl_if_exists::<ExampleRecord>(out)?.into_iter().map(|e| (e.tree_id, e.node_id)).collect();
    let mut report = StageReport::default();
    let mut examples = Vec::new();
    for rec in &trees {
        let tree = match rec.to_tree() {
            Ok(t) => t,
            Err(e) => {
                report.failures.push((rec.tree_id.clone(), e.to_string()));
                continue;
            }
        };
        for e in extract_training_examples(&tree, &rec.tree_id) {
            if done.contains(&(e.tree_id.clone(), e.node_id.index())) {
                report.skipped += 1;
            } else {
                examples.push(ExampleRecord::from_example(&e));
            }
        }
    }
    append_jsonl(out, &examples)?;
    report.written = examples.len();
    Ok(report)
}

/// Fits the n-gram model on every example in `examples` and writes it as
/// JSON to `out`.
pub fn fit_ngram_file(examples: &Path, out: &Path, cfg: &Config) -> anyhow::Result<NGramModel> {
    let records: Vec<ExampleRecord> = read_jsonl(examples)?;
    let examples: Vec<_> = records.iter().map(ExampleRecord::to_example).collect();
    let model = NGramModel::fit_with_alpha(&examples, cfg.ngram_order, cfg.ngram_alpha)?;
    let json = serde_json::to_string(&model.to_file())?;
    std::fs::write(out, json).with_context(|| format!("writing {}", out.display()))?;
    Ok(model)
}
