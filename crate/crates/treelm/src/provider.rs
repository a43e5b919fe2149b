//! Building model providers from configuration.

use std::path::Path;
use std::time::Duration;

use anyhow::{anyhow, Context};
use treelm_core::models::ngram::NGramFile;
use treelm_core::models::{fnv1a64, ModelProvider, NGramModel, NoisyModel, OracleConfig, OracleMode, OracleModel, Proposals};
use treelm_core::tasks::Task;

use crate::config::{Config, ModelSpec, PolicySpec};
use crate::remote::{RemoteConfig, RemoteModel};

/// Model state loaded once per run and shared by all instances.
#[derive(Clone, Debug)]
pub enum Loaded {
    Oracle,
    Noisy(f64),
    NGram(Box<NGramModel>),
    Remote(RemoteModel),
}

pub fn load_ngram(path: &Path) -> anyhow::Result<NGramModel> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: NGramFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(NGramModel::from_file(file))
}

pub fn load(cfg: &Config) -> anyhow::Result<Loaded> {
    Ok(match &cfg.model {
        ModelSpec::Oracle => Loaded::Oracle,
        ModelSpec::Noisy(e) => Loaded::Noisy(*e),
        ModelSpec::NGram(path) => Loaded::NGram(Box::new(load_ngram(path)?)),
        ModelSpec::Remote => {
            let mut rc = RemoteConfig::from_env(&cfg.endpoint)
                .ok_or_else(|| anyhow!("remote model needs an endpoint (config `endpoint` or TSLM_ENDPOINT)"))?;
            rc.model = cfg.remote_model.clone();
            rc.max_in_flight = cfg.max_in_flight;
            rc.timeout = Duration::from_millis(cfg.timeout_ms);
            Loaded::Remote(RemoteModel::new(rc)?)
        }
    })
}

/// Oracle children follow the canonical bootstrap policy when that is the
/// configured one and the ranked policy otherwise, since sampled policies
/// have no deterministic counterpart.
pub fn oracle_config(cfg: &Config, salt: u64) -> OracleConfig {
    OracleConfig {
        proposals: match cfg.policy {
            PolicySpec::Canonical => Proposals::Canonical,
            _ => Proposals::Ranked,
        },
        k: cfg.supervision_k,
        reward: cfg.reward,
        gold_pinned_first: cfg.gold_pinned_first,
        use_gold: true,
        mark_failures: true,
        seed: cfg.seed ^ salt,
        max_trace_nodes: cfg.max_nodes,
    }
}

/// Per-instance salt, so that seeded models draw independently per instance
/// while staying reproducible.
pub fn salt(instance_id: &str) -> u64 {
    fnv1a64(&[instance_id.as_bytes()])
}

/// A provider answering prompts of the given `mode` for one instance.
/// Oracle-backed models honour the mode; learned and remote models answer
/// whatever prompt they are given.
pub fn provider<T: Task + Clone + Send + 'static>(
    task: &T,
    loaded: &Loaded,
    cfg: &Config,
    mode: OracleMode,
    salt: u64,
) -> Box<dyn ModelProvider + Send> {
    match loaded {
        Loaded::Oracle => Box::new(OracleModel::new(task.clone(), oracle_config(cfg, salt), mode)),
        Loaded::Noisy(eps) => {
            let oracle = OracleModel::new(task.clone(), oracle_config(cfg, salt), mode);
            Box::new(NoisyModel::new(oracle, *eps, cfg.seed ^ salt))
        }
        Loaded::NGram(m) => Box::new(m.clone().with_seed(cfg.seed ^ salt)),
        Loaded::Remote(r) => Box::new(r.clone()),
    }
}
