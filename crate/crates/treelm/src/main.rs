use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use treelm::config::{Config, ConfigError, Method};
use treelm::datasets::{game24_instances, gridworld_instances, Filter, GridParams};
use treelm::evaluate::{evaluate_all, extrapolation, summarize, unsolvable_rates, write_extrapolation_csv, write_summary_csv};
use treelm::pipeline::{bootstrap_file, extract_file, fit_ngram_file, StageReport};
use treelm::records::{read_jsonl, to_line, write_jsonl, Instance, ResultRecord};
use treelm::provider;
use treelm_core::tasks::{Task, TaskKind};

#[derive(Parser)]
#[command(name = "treelm", version, about = "Tree-structured decoding experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides one configuration key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses one per core.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct SearchFlags {
    #[arg(long)]
    task: Option<String>,
    /// oracle | noisy:<eps> | ngram:<path> | remote
    #[arg(long)]
    model: Option<String>,
    /// bfs | dfs
    #[arg(long)]
    strategy: Option<String>,
    /// Children kept per expansion.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    node_budget: Option<usize>,
    /// Terminals verified before the search gives up.
    #[arg(long)]
    candidates: Option<usize>,
    /// Report pass@k for k = 1..=N.
    #[arg(long)]
    pass_k: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate problem instances as JSON Lines.
    GenDatasets {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value = "test")]
        split: String,
        /// all | solvable | unsolvable (Game24 only)
        #[arg(long, default_value = "all")]
        filter: String,
        #[arg(long)]
        min_size: Option<i32>,
        #[arg(long)]
        max_size: Option<i32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bootstrap supervision trees for solvable instances.
    Bootstrap {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        instances: PathBuf,
        /// ranked | canonical | gold | sampling | noisy:<eps>
        #[arg(long)]
        policy: Option<String>,
        /// Children per node.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        temperature: Option<f64>,
        /// heuristic | uniform
        #[arg(long)]
        reward: Option<String>,
        /// Keep the gold child first among its siblings.
        #[arg(long)]
        gold_pinned: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract per-node training examples from trees.
    Extract {
        #[arg(long)]
        trees: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the n-gram model on training examples.
    FitNgram {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        examples: PathBuf,
        #[arg(long)]
        order: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run tree search on one problem or an instance file.
    Infer {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        search: SearchFlags,
        #[arg(long, conflicts_with = "problem")]
        instances: Option<PathBuf>,
        /// Problem text; `\n` sequences are read as newlines.
        #[arg(long)]
        problem: Option<String>,
        /// Result records; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate methods on an instance file and write summary tables.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        search: SearchFlags,
        #[arg(long)]
        instances: PathBuf,
        /// Comma-separated subset of tslm, sc, pc, tot.
        #[arg(long)]
        methods: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        summary: PathBuf,
        /// Solved fraction per grid size.
        #[arg(long)]
        extrapolation: Option<PathBuf>,
    },
    /// Rebuild summary tables from result records.
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        summary: Option<PathBuf>,
        #[arg(long)]
        extrapolation: Option<PathBuf>,
    },
}

/// Failures that map to exit code 1.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn usage(e: impl std::fmt::Display) -> anyhow::Error {
    UsageError(e.to_string()).into()
}

fn resolve(common: &Common, flags: &[(&str, Option<String>)]) -> anyhow::Result<Config> {
    let mut cfg = Config::default();
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg.apply_text(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    }
    let apply = |cfg: &mut Config, k: &str, v: &str| cfg.set(k, v).map_err(|e: ConfigError| usage(e));
    for kv in &common.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        apply(&mut cfg, k.trim(), v.trim())?;
    }
    if let Some(s) = common.seed {
        apply(&mut cfg, "seed", &s.to_string())?;
    }
    if let Some(w) = common.workers {
        apply(&mut cfg, "workers", &w.to_string())?;
    }
    for (k, v) in flags {
        if let Some(v) = v {
            apply(&mut cfg, k, v)?;
        }
    }
    Ok(cfg)
}

fn search_flags(s: &SearchFlags) -> Vec<(&'static str, Option<String>)> {
    vec![
        ("task", s.task.clone()),
        ("model", s.model.clone()),
        ("strategy", s.strategy.clone()),
        ("k", s.k.map(|v| v.to_string())),
        ("node_budget", s.node_budget.map(|v| v.to_string())),
        ("candidates", s.candidates.map(|v| v.to_string())),
        ("pass_k", s.pass_k.map(|v| v.to_string())),
    ]
}

fn report_stage(name: &str, r: &StageReport) -> Outcome {
    eprintln!("{name}: {} written, {} skipped, {} failed", r.written, r.skipped, r.failures.len());
    for (id, e) in &r.failures {
        eprintln!("  {id}: {e}");
    }
    if r.failures.is_empty() {
        Outcome::Ok
    } else {
        Outcome::Partial
    }
}

fn write_tables(records: &[ResultRecord], summary: Option<&Path>, extra: Option<&Path>) -> anyhow::Result<()> {
    let rows = summarize(records);
    if let Some(p) = summary {
        write_summary_csv(p, &rows)?;
    }
    if let Some(p) = extra {
        write_extrapolation_csv(p, &extrapolation(records))?;
    }
    let unsolvable = unsolvable_rates(records);
    for r in rows.iter().filter(|r| r.k == 1 || Some(r.k) == rows.iter().filter(|x| x.method == r.method).map(|x| x.k).max()) {
        let (u, n) = unsolvable.get(&r.method).copied().unwrap_or_default();
        eprintln!(
            "{:<5} k={:<3} n={:<5} success={:.4} tokens={:.1} calls={:.2} unsolvable={u}/{n}",
            r.method, r.k, r.n, r.mean_success, r.mean_tokens, r.mean_model_calls
        );
    }
    Ok(())
}

fn results_outcome(records: &[ResultRecord]) -> Outcome {
    let failed: Vec<&ResultRecord> = records.iter().filter(|r| r.error.is_some()).collect();
    for r in &failed {
        eprintln!("{} ({}): {}", r.instance_id, r.method, r.error.as_deref().unwrap_or_default());
    }
    if failed.is_empty() {
        Outcome::Ok
    } else {
        Outcome::Partial
    }
}

enum Outcome {
    Ok,
    Partial,
}

fn run(cmd: Cmd) -> anyhow::Result<Outcome> {
    match cmd {
        Cmd::GenDatasets { common, task, count, split, filter, min_size, max_size, out } => {
            let cfg = resolve(
                &common,
                &[("task", task), ("grid_min", min_size.map(|v| v.to_string())), ("grid_max", max_size.map(|v| v.to_string()))],
            )?;
            let filter = Filter::from_name(&filter).ok_or_else(|| usage(format!("unknown filter {filter:?}")))?;
            let instances = match cfg.task {
                TaskKind::Game24 => {
                    let draws = count.saturating_mul(1000).max(1000);
                    game24_instances(count, cfg.seed, &split, filter, draws)?
                }
                TaskKind::Gridworld => {
                    if filter == Filter::Unsolvable {
                        return Err(usage("generated grids are always solvable"));
                    }
                    let params = GridParams {
                        min_size: cfg.grid_min,
                        max_size: cfg.grid_max,
                        wall_density: cfg.wall_density,
                        generator: cfg.grid_generator,
                        max_attempts: cfg.max_attempts,
                    };
                    gridworld_instances(count, cfg.seed, &split, &params)?
                }
            };
            write_jsonl(&out, &instances)?;
            eprintln!("{} instances written to {}", instances.len(), out.display());
            Ok(Outcome::Ok)
        }
        Cmd::Bootstrap { common, instances, policy, k, temperature, reward, gold_pinned, out } => {
            let cfg = resolve(
                &common,
                &[
                    ("policy", policy),
                    ("supervision_k", k.map(|v| v.to_string())),
                    ("temperature", temperature.map(|v| v.to_string())),
                    ("reward", reward),
                    ("gold_pinned_first", gold_pinned.then(|| "true".to_string())),
                ],
            )?;
            Ok(report_stage("bootstrap", &bootstrap_file(&instances, &out, &cfg)?))
        }
        Cmd::Extract { trees, out } => Ok(report_stage("extract", &extract_file(&trees, &out)?)),
        Cmd::FitNgram { common, examples, order, out } => {
            let cfg = resolve(&common, &[("ngram_order", order.map(|v| v.to_string()))])?;
            let model = fit_ngram_file(&examples, &out, &cfg)?;
            eprintln!("order {} model with {} vocabulary entries written to {}", model.order(), model.vocab().len(), out.display());
            Ok(Outcome::Ok)
        }
        Cmd::Infer { common, search, instances, problem, out } => {
            let cfg = resolve(&common, &search_flags(&search))?;
            let cfg = Config { methods: vec![Method::Tslm], ..cfg };
            let instances: Vec<Instance> = match (instances, problem) {
                (Some(path), None) => read_jsonl(&path)?,
                (None, Some(text)) => {
                    let text = text.replace("\\n", "\n");
                    let canonical = treelm::with_task!(cfg.task, t => {
                        let p = t.parse_problem(&text).map_err(usage)?;
                        t.render_problem(&p)
                    });
                    vec![Instance {
                        id: "cli".to_string(),
                        task: cfg.task,
                        problem: canonical,
                        solvable: true,
                        split: "cli".to_string(),
                        width: None,
                        height: None,
                    }]
                }
                _ => bail!(usage("give either --instances or --problem")),
            };
            let loaded = provider::load(&cfg)?;
            let records = evaluate_all(&instances, &loaded, &cfg)?;
            match out {
                Some(p) => write_jsonl(&p, &records)?,
                None => records.iter().for_each(|r| println!("{}", to_line(r))),
            }
            for r in &records {
                eprintln!(
                    "{}: {} rank={} calls={} tokens={}",
                    r.instance_id,
                    r.verdict,
                    r.candidate_rank.map_or("-".to_string(), |k| k.to_string()),
                    r.stats.model_calls,
                    r.stats.tokens_generated
                );
            }
            Ok(results_outcome(&records))
        }
        Cmd::Evaluate { common, search, instances, methods, out, summary, extrapolation } => {
            let mut flags = search_flags(&search);
            flags.push(("methods", methods));
            let cfg = resolve(&common, &flags)?;
            let instances: Vec<Instance> = read_jsonl(&instances)?;
            let loaded = provider::load(&cfg)?;
            let records = evaluate_all(&instances, &loaded, &cfg)?;
            write_jsonl(&out, &records)?;
            write_tables(&records, Some(&summary), extrapolation.as_deref())?;
            Ok(results_outcome(&records))
        }
        Cmd::Report { results, summary, extrapolation } => {
            let records: Vec<ResultRecord> = read_jsonl(&results)?;
            write_tables(&records, summary.as_deref(), extrapolation.as_deref())?;
            Ok(Outcome::Ok)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.cmd) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
