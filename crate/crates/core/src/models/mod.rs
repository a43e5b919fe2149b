//! Text-generation providers queried during inference.

use alloc::boxed::Box;
use alloc::string::String;

use thiserror::Error;

use crate::token::{detokenize, tokenize};

pub mod ngram;
pub mod noisy;
pub mod oracle;

pub use ngram::NGramModel;
pub use noisy::{NoiseCounts, NoisyModel};
pub use oracle::{OracleConfig, OracleMode, OracleModel, Proposals};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum FinishReason {
    /// A stop string was produced or the model ended on its own.
    Stop,
    /// `max_tokens` was reached.
    Length,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Generation {
    pub text: String,
    pub tokens_generated: usize,
    pub finish: FinishReason,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("context does not parse: {0}")]
    UnparseableContext(String),
    #[error("context path cannot be expanded: {0}")]
    IllegalPathInContext(String),
    #[error("http {status}: {body}")]
    Http { status: u16, body: String },
    #[error("request timed out")]
    Timeout,
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("empty training corpus")]
    EmptyCorpus,
}

/// A language model behind a completion-style interface.
pub trait ModelProvider {
    /// Continues `context`. Local models keep the stop string that ended
    /// generation in `text`; remote models may strip it.
    fn generate(&mut self, context: &str, stop: &[&str], max_tokens: usize, temperature: f64) -> Result<Generation, ModelError>;
}

impl<M: ModelProvider + ?Sized> ModelProvider for &mut M {
    fn generate(&mut self, context: &str, stop: &[&str], max_tokens: usize, temperature: f64) -> Result<Generation, ModelError> {
        (**self).generate(context, stop, max_tokens, temperature)
    }
}

impl<M: ModelProvider + ?Sized> ModelProvider for Box<M> {
    fn generate(&mut self, context: &str, stop: &[&str], max_tokens: usize, temperature: f64) -> Result<Generation, ModelError> {
        (**self).generate(context, stop, max_tokens, temperature)
    }
}

/// Applies stop strings and the token limit to a complete local output.
/// Text is cut right after the earliest stop string; a text longer than
/// `max_tokens` tokens is cut to that many.
pub fn finish_local(text: &str, stop: &[&str], max_tokens: usize) -> Generation {
    let cut = stop
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s).map(|i| i + s.len()))
        .min()
        .unwrap_or(text.len());
    let text = &text[..cut];
    let tokens = tokenize(text);
    if tokens.len() > max_tokens {
        Generation { text: detokenize(&tokens[..max_tokens]), tokens_generated: max_tokens, finish: FinishReason::Length }
    } else {
        Generation { text: String::from(text), tokens_generated: tokens.len(), finish: FinishReason::Stop }
    }
}

/// 64-bit FNV-1a, for deriving per-call seeds and corpus fingerprints.
pub fn fnv1a64(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for b in *part {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        // separator so that ("ab", "c") and ("a", "bc") differ
        h ^= 0xff;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
