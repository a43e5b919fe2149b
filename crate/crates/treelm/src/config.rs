//! Run configuration.
//!
//! The file format is one `key = value` pair per line. Blank lines and lines
//! starting with `#` are ignored, as is anything after a `#` on a value line.
//! Keys are case-sensitive and must be one of the keys listed in
//! [`Config::KEYS`]; values are trimmed. Later lines override earlier ones,
//! and command-line flags override the file.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;
use treelm_core::bootstrap::RewardPreset;
use treelm_core::search::Strategy;
use treelm_core::tasks::TaskKind;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for {key}")]
    BadValue { key: String, value: String },
}

/// Which model answers generation requests.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelSpec {
    Oracle,
    Noisy(f64),
    NGram(PathBuf),
    Remote,
}

impl FromStr for ModelSpec {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.split_once(':') {
            None if s == "oracle" => Ok(ModelSpec::Oracle),
            None if s == "remote" => Ok(ModelSpec::Remote),
            Some(("noisy", eps)) => match eps.parse::<f64>() {
                Ok(e) if (0.0..=1.0).contains(&e) => Ok(ModelSpec::Noisy(e)),
                _ => Err(()),
            },
            Some(("ngram", path)) if !path.is_empty() => Ok(ModelSpec::NGram(PathBuf::from(path))),
            _ => Err(()),
        }
    }
}

impl std::fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelSpec::Oracle => f.write_str("oracle"),
            ModelSpec::Noisy(e) => write!(f, "noisy:{e}"),
            ModelSpec::NGram(p) => write!(f, "ngram:{}", p.display()),
            ModelSpec::Remote => f.write_str("remote"),
        }
    }
}

/// Supervision policy used to bootstrap training trees.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PolicySpec {
    Canonical,
    Ranked,
    Gold,
    Sampling,
    Noisy(f64),
}

impl FromStr for PolicySpec {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.split_once(':') {
            None if s == "canonical" => Ok(PolicySpec::Canonical),
            None if s == "ranked" => Ok(PolicySpec::Ranked),
            None if s == "gold" => Ok(PolicySpec::Gold),
            None if s == "sampling" => Ok(PolicySpec::Sampling),
            Some(("noisy", eps)) => match eps.parse::<f64>() {
                Ok(e) if (0.0..=1.0).contains(&e) => Ok(PolicySpec::Noisy(e)),
                _ => Err(()),
            },
            _ => Err(()),
        }
    }
}

impl std::fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PolicySpec::Canonical => f.write_str("canonical"),
            PolicySpec::Ranked => f.write_str("ranked"),
            PolicySpec::Gold => f.write_str("gold"),
            PolicySpec::Sampling => f.write_str("sampling"),
            PolicySpec::Noisy(e) => write!(f, "noisy:{e}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    Tslm,
    Sc,
    Pc,
    Tot,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Tslm, Method::Sc, Method::Pc, Method::Tot];

    pub fn name(self) -> &'static str {
        match self {
            Method::Tslm => "tslm",
            Method::Sc => "sc",
            Method::Pc => "pc",
            Method::Tot => "tot",
        }
    }
}

impl FromStr for Method {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridGenerator {
    Rejection,
    Repair,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub task: TaskKind,
    pub seed: u64,
    pub strategy: Strategy,
    /// Children kept per expansion at inference.
    pub k: usize,
    /// Children per node in supervision trees and oracle blocks.
    pub supervision_k: usize,
    pub node_budget: usize,
    /// Terminals verified before a search gives up.
    pub candidates: usize,
    /// pass@k is reported for k = 1..=pass_k.
    pub pass_k: usize,
    pub dedup: bool,
    pub tolerant_decode: bool,
    pub max_tokens: usize,
    pub temperature: f64,
    /// Sampling temperature for the inference model.
    pub infer_temperature: f64,
    pub reward: RewardPreset,
    pub gold_pinned_first: bool,
    pub sample_rounds: usize,
    pub max_nodes: usize,
    pub policy: PolicySpec,
    pub model: ModelSpec,
    pub methods: Vec<Method>,
    pub tot_breadth: usize,
    pub tot_samples: usize,
    pub tot_temperature: f64,
    pub ngram_order: usize,
    pub ngram_alpha: f64,
    pub grid_generator: GridGenerator,
    pub wall_density: f64,
    pub grid_min: i32,
    pub grid_max: i32,
    pub max_attempts: usize,
    pub remote_model: String,
    pub endpoint: String,
    pub max_in_flight: usize,
    pub timeout_ms: u64,
    pub workers: usize,
    pub record_wall_time: bool,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            task: TaskKind::Game24,
            seed: 0,
            strategy: Strategy::Bfs,
            k: 5,
            supervision_k: 5,
            node_budget: 10_000,
            candidates: 1000,
            pass_k: 10,
            dedup: true,
            tolerant_decode: false,
            max_tokens: 1024,
            temperature: 0.3,
            infer_temperature: 0.0,
            reward: RewardPreset::Heuristic,
            gold_pinned_first: false,
            sample_rounds: 3,
            max_nodes: 10_000,
            policy: PolicySpec::Ranked,
            model: ModelSpec::Oracle,
            methods: vec![Method::Tslm],
            tot_breadth: 5,
            tot_samples: 20,
            tot_temperature: 0.3,
            ngram_order: 4,
            ngram_alpha: 0.5,
            grid_generator: GridGenerator::Repair,
            wall_density: 0.2,
            grid_min: 4,
            grid_max: 10,
            max_attempts: 100_000,
            remote_model: "default".to_string(),
            endpoint: String::new(),
            max_in_flight: 4,
            timeout_ms: 60_000,
            workers: 0,
            record_wall_time: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue { key: key.to_string(), value: value.to_string() })
}

fn positive(key: &str, value: &str) -> Result<usize, ConfigError> {
    match parse::<usize>(key, value)? {
        0 => Err(ConfigError::BadValue { key: key.to_string(), value: value.to_string() }),
        n => Ok(n),
    }
}

impl Config {
    pub const KEYS: [&'static str; 37] = [
        "task",
        "seed",
        "strategy",
        "k",
        "supervision_k",
        "node_budget",
        "candidates",
        "pass_k",
        "dedup",
        "tolerant_decode",
        "max_tokens",
        "temperature",
        "infer_temperature",
        "reward",
        "gold_pinned_first",
        "sample_rounds",
        "max_nodes",
        "policy",
        "model",
        "methods",
        "tot_breadth",
        "tot_samples",
        "tot_temperature",
        "ngram_order",
        "ngram_alpha",
        "grid_generator",
        "wall_density",
        "grid_min",
        "grid_max",
        "max_attempts",
        "remote_model",
        "endpoint",
        "max_in_flight",
        "timeout_ms",
        "workers",
        "record_wall_time",
        "grid_size",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = || ConfigError::BadValue { key: key.to_string(), value: value.to_string() };
        match key {
            "task" => self.task = TaskKind::from_name(value).ok_or_else(bad)?,
            "seed" => self.seed = parse(key, value)?,
            "strategy" => self.strategy = Strategy::from_name(value).ok_or_else(bad)?,
            "k" => self.k = positive(key, value)?,
            "supervision_k" => self.supervision_k = positive(key, value)?,
            "node_budget" => self.node_budget = positive(key, value)?,
            "candidates" => self.candidates = positive(key, value)?,
            "pass_k" => self.pass_k = positive(key, value)?,
            "dedup" => self.dedup = parse(key, value)?,
            "tolerant_decode" => self.tolerant_decode = parse(key, value)?,
            "max_tokens" => self.max_tokens = positive(key, value)?,
            "temperature" => self.temperature = parse(key, value)?,
            "infer_temperature" => self.infer_temperature = parse(key, value)?,
            "reward" => self.reward = RewardPreset::from_name(value).ok_or_else(bad)?,
            "gold_pinned_first" => self.gold_pinned_first = parse(key, value)?,
            "sample_rounds" => self.sample_rounds = positive(key, value)?,
            "max_nodes" => self.max_nodes = positive(key, value)?,
            "policy" => self.policy = value.parse().map_err(|_| bad())?,
            "model" => self.model = value.parse().map_err(|_| bad())?,
            "methods" => {
                let methods: Result<Vec<Method>, ()> = value.split(',').map(|m| m.trim().parse()).collect();
                self.methods = methods.map_err(|_| bad())?;
                if self.methods.is_empty() {
                    return Err(bad());
                }
            }
            "tot_breadth" => self.tot_breadth = positive(key, value)?,
            "tot_samples" => self.tot_samples = positive(key, value)?,
            "tot_temperature" => self.tot_temperature = parse(key, value)?,
            "ngram_order" => self.ngram_order = positive(key, value)?,
            "ngram_alpha" => self.ngram_alpha = parse(key, value)?,
            "grid_generator" => {
                self.grid_generator = match value {
                    "rejection" => GridGenerator::Rejection,
                    "repair" => GridGenerator::Repair,
                    _ => return Err(bad()),
                }
            }
            "wall_density" => {
                self.wall_density = parse(key, value)?;
                if !(0.0..1.0).contains(&self.wall_density) {
                    return Err(bad());
                }
            }
            "grid_min" => self.grid_min = parse(key, value)?,
            "grid_max" => self.grid_max = parse(key, value)?,
            // shorthand for grid_min = grid_max
            "grid_size" => {
                let n = parse(key, value)?;
                self.grid_min = n;
                self.grid_max = n;
            }
            "max_attempts" => self.max_attempts = positive(key, value)?,
            "remote_model" => self.remote_model = value.to_string(),
            "endpoint" => self.endpoint = value.to_string(),
            "max_in_flight" => self.max_in_flight = positive(key, value)?,
            "timeout_ms" => self.timeout_ms = parse(key, value)?,
            "workers" => self.workers = parse(key, value)?,
            "record_wall_time" => self.record_wall_time = parse(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1 });
            }
            self.set(key, value.trim())?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Config, ConfigError> {
        let mut cfg = Config::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// The fully resolved configuration in the file format, one line per
    /// key in a fixed order. Parsing the result gives back `self`.
    pub fn render(&self) -> String {
        let methods: Vec<&str> = self.methods.iter().map(|m| m.name()).collect();
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        line("task", self.task.name().to_string());
        line("seed", self.seed.to_string());
        line("strategy", self.strategy.name().to_string());
        line("k", self.k.to_string());
        line("supervision_k", self.supervision_k.to_string());
        line("node_budget", self.node_budget.to_string());
        line("candidates", self.candidates.to_string());
        line("pass_k", self.pass_k.to_string());
        line("dedup", self.dedup.to_string());
        line("tolerant_decode", self.tolerant_decode.to_string());
        line("max_tokens", self.max_tokens.to_string());
        line("temperature", self.temperature.to_string());
        line("infer_temperature", self.infer_temperature.to_string());
        line("reward", self.reward.name().to_string());
        line("gold_pinned_first", self.gold_pinned_first.to_string());
        line("sample_rounds", self.sample_rounds.to_string());
        line("max_nodes", self.max_nodes.to_string());
        line("policy", self.policy.to_string());
        line("model", self.model.to_string());
        line("methods", methods.join(","));
        line("tot_breadth", self.tot_breadth.to_string());
        line("tot_samples", self.tot_samples.to_string());
        line("tot_temperature", self.tot_temperature.to_string());
        line("ngram_order", self.ngram_order.to_string());
        line("ngram_alpha", self.ngram_alpha.to_string());
        line(
            "grid_generator",
            match self.grid_generator {
                GridGenerator::Rejection => "rejection",
                GridGenerator::Repair => "repair",
            }
            .to_string(),
        );
        line("wall_density", self.wall_density.to_string());
        line("grid_min", self.grid_min.to_string());
        line("grid_max", self.grid_max.to_string());
        line("max_attempts", self.max_attempts.to_string());
        line("remote_model", self.remote_model.clone());
        line("endpoint", self.endpoint.clone());
        line("max_in_flight", self.max_in_flight.to_string());
        line("timeout_ms", self.timeout_ms.to_string());
        line("workers", self.workers.to_string());
        line("record_wall_time", self.record_wall_time.to_string());
        out
    }

    /// First 16 hex digits of the SHA-256 of [`Config::render`].
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.render().as_bytes());
        digest.iter().take(8).fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}
