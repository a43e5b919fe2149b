//! Per-instance evaluation of the tree decoder and the baselines, and the
//! summary tables built from the resulting records.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use treelm_core::models::OracleMode;
use treelm_core::search::baselines::{run_procedure_clone, run_sequential, run_tot, ChainConfig, PcConfig, TotConfig};
use treelm_core::search::{run_tree_search, InferenceConfig, RunStats, SearchError, Verdict};
use treelm_core::tasks::Task;

use crate::config::{Config, Method};
use crate::provider::{provider, salt, Loaded};
use crate::records::{CostRecord, Instance, ResultRecord, StatsRecord};

pub fn inference_config(cfg: &Config) -> InferenceConfig {
    InferenceConfig {
        strategy: cfg.strategy,
        branch_cap: cfg.k,
        node_budget: cfg.node_budget,
        candidate_budget: cfg.candidates,
        dedup: cfg.dedup,
        tolerant_decode: cfg.tolerant_decode,
        max_tokens: cfg.max_tokens,
        temperature: cfg.infer_temperature,
        stop_on_solution: true,
    }
}

pub fn tot_config(cfg: &Config, max_candidates: usize) -> TotConfig {
    TotConfig {
        breadth: cfg.tot_breadth,
        samples_per_state: cfg.tot_samples,
        temperature: cfg.tot_temperature,
        evaluator: cfg.reward,
        max_candidates,
        max_tokens: 64,
    }
}

fn stats_record(s: &RunStats) -> StatsRecord {
    StatsRecord {
        model_calls: s.model_calls,
        tokens_generated: s.tokens_generated,
        nodes_expanded: s.nodes_expanded,
        terminals_verified: s.terminals_verified,
        wall_time_ms: None,
    }
}

fn cost(s: &RunStats) -> CostRecord {
    CostRecord { model_calls: s.model_calls, tokens_generated: s.tokens_generated }
}

struct Run {
    verdict: Verdict,
    stats: RunStats,
    pass_at: BTreeMap<usize, bool>,
    cost_at: BTreeMap<usize, CostRecord>,
}

fn ks(cfg: &Config) -> std::ops::RangeInclusive<usize> {
    1..=cfg.pass_k
}

/// Runs `method` once with the full candidate budget. Success at budget k
/// is read off the solution's candidate rank; the cost at budget k comes
/// from the candidate log for tree search, from one rerun per k for the
/// beam search, and is the whole run for the single-generation baselines.
fn run_method<T: Task + Clone + Send + 'static>(
    task: &T,
    problem: &T::Problem,
    method: Method,
    loaded: &Loaded,
    cfg: &Config,
    salt: u64,
) -> Result<Run, SearchError> {
    let (verdict, stats, cost_at) = match method {
        Method::Tslm => {
            let mut model = provider(task, loaded, cfg, OracleMode::Tree, salt);
            let out = run_tree_search(&mut model, task, problem, &inference_config(cfg))?;
            let cost_at = ks(cfg).map(|k| (k, cost(&out.stats_at(k)))).collect();
            (out.verdict, out.stats, cost_at)
        }
        Method::Sc => {
            let mut model = provider(task, loaded, cfg, OracleMode::Step, salt);
            let chain = ChainConfig { max_tokens: 64, temperature: cfg.infer_temperature };
            let out = run_sequential(&mut model, task, problem, &chain)?;
            let cost_at = ks(cfg).map(|k| (k, cost(&out.stats))).collect();
            (out.verdict, out.stats, cost_at)
        }
        Method::Pc => {
            let mut model = provider(task, loaded, cfg, OracleMode::Trace, salt);
            let out = run_procedure_clone(&mut model, task, problem, cfg.candidates, &PcConfig::default())?;
            let cost_at = ks(cfg).map(|k| (k, cost(&out.stats))).collect();
            (out.verdict, out.stats, cost_at)
        }
        Method::Tot => {
            let mut cost_at = BTreeMap::new();
            for k in ks(cfg) {
                let mut model = provider(task, loaded, cfg, OracleMode::Step, salt);
                cost_at.insert(k, cost(&run_tot(&mut model, task, problem, &tot_config(cfg, k))?.stats));
            }
            let mut model = provider(task, loaded, cfg, OracleMode::Step, salt);
            let out = run_tot(&mut model, task, problem, &tot_config(cfg, cfg.candidates))?;
            (out.verdict, out.stats, cost_at)
        }
    };
    let rank = verdict.candidate_rank();
    let pass_at = ks(cfg).map(|k| (k, rank.is_some_and(|r| r <= k))).collect();
    Ok(Run { verdict, stats, pass_at, cost_at })
}

/// Evaluates one method on one instance. Errors are recorded in the
/// result rather than returned.
pub fn evaluate_instance<T: Task + Clone + Send + 'static>(
    task: &T,
    inst: &Instance,
    method: Method,
    loaded: &Loaded,
    cfg: &Config,
    fingerprint: &str,
) -> ResultRecord {
    let start = Instant::now();
    let run = task
        .parse_problem(&inst.problem)
        .map_err(|e| (e.to_string(), RunStats::default()))
        .and_then(|p| run_method(task, &p, method, loaded, cfg, salt(&inst.id)).map_err(|e| (e.to_string(), e.stats())));
    let wall = start.elapsed().as_millis() as u64;
    let mut rec = ResultRecord {
        instance_id: inst.id.clone(),
        method: method.name().to_string(),
        strategy: cfg.strategy.name().to_string(),
        verdict: String::new(),
        candidate_rank: None,
        pass_at: BTreeMap::new(),
        cost_at: BTreeMap::new(),
        stats: StatsRecord::default(),
        config: fingerprint.to_string(),
        error: None,
        width: inst.width,
        height: inst.height,
    };
    match run {
        Ok(run) => {
            rec.verdict = run.verdict.name().to_string();
            rec.candidate_rank = run.verdict.candidate_rank();
            rec.pass_at = run.pass_at;
            rec.cost_at = run.cost_at;
            rec.stats = stats_record(&run.stats);
        }
        Err((msg, stats)) => {
            rec.verdict = "error".to_string();
            rec.pass_at = ks(cfg).map(|k| (k, false)).collect();
            rec.cost_at = ks(cfg).map(|k| (k, cost(&stats))).collect();
            rec.stats = stats_record(&stats);
            rec.error = Some(msg);
        }
    }
    if cfg.record_wall_time {
        rec.stats.wall_time_ms = Some(wall);
    }
    rec
}

/// Every configured method on every instance, in input order (instances
/// outer, methods inner), run on `cfg.workers` threads.
pub fn evaluate_all(instances: &[Instance], loaded: &Loaded, cfg: &Config) -> anyhow::Result<Vec<ResultRecord>> {
    let fp = cfg.fingerprint();
    let jobs: Vec<(&Instance, Method)> = instances.iter().flat_map(|i| cfg.methods.iter().map(move |m| (i, *m))).collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build()?;
    Ok(pool.install(|| {
        jobs.par_iter()
            .map(|(inst, m)| crate::with_task!(inst.task, t => evaluate_instance(&t, inst, *m, loaded, cfg, &fp)))
            .collect()
    }))
}

/// One row of the summary table.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub k: usize,
    pub n: usize,
    pub mean_success: f64,
    pub mean_tokens: f64,
    pub mean_model_calls: f64,
    /// Present only when every record carries a wall time.
    pub mean_wall_ms: Option<f64>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Per method and candidate budget means over all records, methods in
/// name order.
pub fn summarize(records: &[ResultRecord]) -> Vec<SummaryRow> {
    let mut by_method: BTreeMap<&str, Vec<&ResultRecord>> = BTreeMap::new();
    for r in records {
        by_method.entry(&r.method).or_default().push(r);
    }
    let mut rows = Vec::new();
    for (method, recs) in by_method {
        let max_k = recs.iter().filter_map(|r| r.pass_at.keys().max()).max().copied().unwrap_or(0);
        let walls: Option<Vec<u64>> = recs.iter().map(|r| r.stats.wall_time_ms).collect();
        for k in 1..=max_k {
            rows.push(SummaryRow {
                method: method.to_string(),
                k,
                n: recs.len(),
                mean_success: mean(recs.iter().map(|r| f64::from(u8::from(r.pass_at.get(&k).copied().unwrap_or(false))))),
                mean_tokens: mean(recs.iter().map(|r| r.cost_at.get(&k).map_or(0.0, |c| c.tokens_generated as f64))),
                mean_model_calls: mean(recs.iter().map(|r| r.cost_at.get(&k).map_or(0.0, |c| c.model_calls as f64))),
                mean_wall_ms: walls.as_ref().map(|w| mean(w.iter().map(|x| *x as f64))),
            });
        }
    }
    rows
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "k", "mean_success", "mean_tokens", "mean_model_calls", "mean_wall_ms"])?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.k.to_string(),
            format!("{:.6}", r.mean_success),
            format!("{:.3}", r.mean_tokens),
            format!("{:.3}", r.mean_model_calls),
            r.mean_wall_ms.map(|m| format!("{m:.3}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Fraction of solved instances per method and grid size.
#[derive(Clone, Debug, PartialEq)]
pub struct GridCell {
    pub method: String,
    pub width: i32,
    pub height: i32,
    pub n: usize,
    pub success: f64,
}

pub fn extrapolation(records: &[ResultRecord]) -> Vec<GridCell> {
    let mut cells: BTreeMap<(&str, i32, i32), (usize, usize)> = BTreeMap::new();
    for r in records {
        if let (Some(w), Some(h)) = (r.width, r.height) {
            let c = cells.entry((&r.method, w, h)).or_default();
            c.0 += 1;
            c.1 += usize::from(r.candidate_rank.is_some());
        }
    }
    cells
        .into_iter()
        .map(|((m, w, h), (n, ok))| GridCell { method: m.to_string(), width: w, height: h, n, success: ok as f64 / n as f64 })
        .collect()
}

pub fn write_extrapolation_csv(path: &Path, cells: &[GridCell]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "width", "height", "n", "success"])?;
    for c in cells {
        w.write_record([c.method.clone(), c.width.to_string(), c.height.to_string(), c.n.to_string(), format!("{:.6}", c.success)])?;
    }
    w.flush()?;
    Ok(())
}

/// Fraction of records per method whose verdict is Unsolvable.
pub fn unsolvable_rates(records: &[ResultRecord]) -> BTreeMap<String, (usize, usize)> {
    let mut out: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for r in records {
        let e = out.entry(r.method.clone()).or_default();
        e.0 += usize::from(r.verdict == Verdict::Unsolvable.name());
        e.1 += 1;
    }
    out
}
