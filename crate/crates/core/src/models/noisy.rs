//! The oracle with seeded per-child corruption, standing in for an
//! imperfectly trained model.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracle::{block_text, grow_tree, parse_step_context, parse_tree_context, trace_text, OracleMode, OracleModel};
use super::{finish_local, fnv1a64, Generation, ModelError, ModelProvider};
use crate::codec::ExpansionBlock;
use crate::tasks::Task;
use crate::tree::{Marker, NodePath, PathStep};

/// Running totals of corruption draws. `corrupted` counts every child that
/// drew a corruption, including marker flips on goal children, which leave
/// the child unchanged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NoiseCounts {
    pub children: u64,
    pub corrupted: u64,
    pub flips: u64,
    pub drops: u64,
    pub replacements: u64,
}

pub struct NoisyModel<T: Task> {
    oracle: OracleModel<T>,
    eps: f64,
    seed: u64,
    counts: NoiseCounts,
}

impl<T: Task + Clone> Clone for NoisyModel<T> {
    fn clone(&self) -> Self {
        NoisyModel { oracle: self.oracle.clone(), eps: self.eps, seed: self.seed, counts: self.counts }
    }
}

impl<T: Task> NoisyModel<T> {
    /// `eps` is clamped to `[0, 1]`. Randomness is derived from `seed` and
    /// the prompt, so outputs do not depend on call order.
    pub fn new(oracle: OracleModel<T>, eps: f64, seed: u64) -> Self {
        NoisyModel { oracle, eps: eps.clamp(0.0, 1.0), seed, counts: NoiseCounts::default() }
    }

    pub fn counts(&self) -> NoiseCounts {
        self.counts
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    fn rng_for(&self, salt: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(fnv1a64(&[&self.seed.to_le_bytes(), salt.as_bytes()]))
    }

    /// The oracle block for `path` with each child independently corrupted
    /// with probability `eps`.
    pub fn expansion(&mut self, problem_text: &str, path: &NodePath) -> Result<ExpansionBlock, ModelError> {
        let block = self.oracle.expansion(problem_text, path)?;
        if self.eps == 0.0 {
            self.counts.children += block.len() as u64;
            return Ok(block);
        }
        let mut salt = String::from(problem_text);
        for s in path.steps() {
            salt.push('\n');
            salt.push_str(&s.action);
            salt.push_str(s.marker.name());
        }
        let mut rng = self.rng_for(&salt);
        let legal = self.oracle.legal_children(problem_text, path)?;
        let mut out: Vec<PathStep> = Vec::with_capacity(block.len());
        let originals: Vec<String> = block.children.iter().map(|c| c.action.clone()).collect();
        for child in block.children {
            self.counts.children += 1;
            if !rng.gen_bool(self.eps) {
                out.push(child);
                continue;
            }
            self.counts.corrupted += 1;
            match rng.gen_range(0..3) {
                0 => {
                    self.counts.flips += 1;
                    let marker = match child.marker {
                        Marker::Sep => Marker::Fail,
                        Marker::Fail => Marker::Sep,
                        Marker::Goal => Marker::Goal,
                    };
                    out.push(PathStep::new(child.action, marker));
                }
                1 => self.counts.drops += 1,
                _ => {
                    self.counts.replacements += 1;
                    let others: Vec<&PathStep> = legal
                        .iter()
                        .filter(|l| !originals.contains(&l.action) && !out.iter().any(|o| o.action == l.action))
                        .collect();
                    if let Some(r) = others.choose(&mut rng) {
                        out.push((*r).clone());
                    }
                }
            }
        }
        Ok(ExpansionBlock::new(out))
    }

    /// The oracle's next action, replaced by a different legal action with
    /// probability `eps`.
    pub fn step(&mut self, problem_text: &str, actions: &[String], temperature: f64) -> Result<String, ModelError> {
        let chosen = self.oracle.step(problem_text, actions, temperature)?;
        self.counts.children += 1;
        if self.eps == 0.0 {
            return Ok(chosen);
        }
        let mut salt = String::from(problem_text);
        for a in actions {
            salt.push('\n');
            salt.push_str(a);
        }
        // temperature draws must differ between repeated calls on one prompt
        if temperature > 0.0 {
            salt.push_str(&chosen);
            salt.push_str(&alloc::format!("#{}", self.counts.children));
        }
        let mut rng = self.rng_for(&salt);
        if !rng.gen_bool(self.eps) {
            return Ok(chosen);
        }
        self.counts.corrupted += 1;
        self.counts.replacements += 1;
        let path = NodePath(actions.iter().map(|a| PathStep::new(a.clone(), Marker::Sep)).collect());
        let legal = self.oracle.legal_children(problem_text, &path)?;
        let others: Vec<&PathStep> = legal.iter().filter(|l| l.action != chosen).collect();
        Ok(others.choose(&mut rng).map(|s| s.action.clone()).unwrap_or(chosen))
    }
}

impl<T: Task> ModelProvider for NoisyModel<T> {
    fn generate(&mut self, context: &str, stop: &[&str], max_tokens: usize, temperature: f64) -> Result<Generation, ModelError> {
        let text = match self.oracle.mode() {
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
                let (problem, _) = parse_tree_context(context)?;
                let max = self.oracle.config().max_trace_nodes;
                let tree = grow_tree(&problem, max, |p| self.expansion(&problem, p))?;
                trace_text(&tree)
            }
        };
        Ok(finish_local(&text, stop, max_tokens))
    }
}
