//! Word-level n-gram model with add-alpha smoothing and backoff, fitted by
//! counting target tokens conditioned on the preceding context.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{fnv1a64, FinishReason, Generation, ModelError, ModelProvider};
use crate::codec::TrainingExample;
use crate::token::{detokenize, tokenize, Token, RESERVED};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct Counts {
    total: u64,
    next: BTreeMap<u32, u64>,
}

#[derive(Clone, Debug)]
pub struct NGramModel {
    order: usize,
    alpha: f64,
    vocab: Vec<String>,
    index: BTreeMap<String, u32>,
    table: BTreeMap<Vec<u32>, Counts>,
    fingerprint: u64,
    rng: ChaCha8Rng,
}

/// `(history, [(next, count)])`.
pub type NGramRow = (Vec<u32>, Vec<(u32, u64)>);

/// Plain-data form of a fitted model for persistence.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NGramFile {
    pub order: usize,
    pub alpha: f64,
    pub vocab: Vec<String>,
    pub table: Vec<NGramRow>,
    pub fingerprint: u64,
}

pub const DEFAULT_ORDER: usize = 4;
pub const DEFAULT_ALPHA: f64 = 0.5;

fn word(t: &Token) -> String {
    match t {
        Token::Newline => "\n".to_string(),
        t => t.as_str().to_string(),
    }
}

fn token(w: &str) -> Token {
    if w == "\n" {
        Token::Newline
    } else {
        Token::from_word(w)
    }
}

impl NGramModel {
    fn with_vocab(order: usize, alpha: f64, words: impl IntoIterator<Item = String>) -> Self {
        let mut vocab: Vec<String> = Vec::new();
        let mut index = BTreeMap::new();
        let base = RESERVED.iter().map(|s| s.to_string()).chain(core::iter::once("\n".to_string()));
        for w in base.chain(words) {
            if !index.contains_key(&w) {
                index.insert(w.clone(), vocab.len() as u32);
                vocab.push(w);
            }
        }
        NGramModel {
            order: order.max(1),
            alpha,
            vocab,
            index,
            table: BTreeMap::new(),
            fingerprint: 0,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    fn corpus_words(examples: &[TrainingExample]) -> Vec<String> {
        examples.iter().flat_map(|e| e.context.iter().chain(&e.target)).map(word).collect()
    }

    /// Maximum-likelihood counts of every target token given up to
    /// `order - 1` preceding tokens of `context ++ target`.
    pub fn fit(examples: &[TrainingExample], order: usize) -> Result<Self, ModelError> {
        Self::fit_with_alpha(examples, order, DEFAULT_ALPHA)
    }

    pub fn fit_with_alpha(examples: &[TrainingExample], order: usize, alpha: f64) -> Result<Self, ModelError> {
        if examples.iter().all(|e| e.target.is_empty()) {
            return Err(ModelError::EmptyCorpus);
        }
        let mut m = Self::with_vocab(order, alpha, Self::corpus_words(examples));
        let mut fp = 0u64;
        for e in examples {
            let ids: Vec<u32> = e.context.iter().chain(&e.target).map(|t| m.index[&word(t)]).collect();
            for i in e.context.len()..ids.len() {
                for h in 0..m.order.min(i + 1) {
                    let c = m.table.entry(ids[i - h..i].to_vec()).or_default();
                    c.total += 1;
                    *c.next.entry(ids[i]).or_default() += 1;
                }
            }
            let text = detokenize(&e.context) + &detokenize(&e.target);
            fp = fnv1a64(&[&fp.to_le_bytes(), text.as_bytes()]);
        }
        m.fingerprint = fp;
        Ok(m)
    }

    /// A model over the corpus vocabulary with no counts: every token is
    /// equally likely everywhere.
    pub fn uniform(examples: &[TrainingExample], order: usize) -> Self {
        Self::with_vocab(order, DEFAULT_ALPHA, Self::corpus_words(examples))
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Vocabulary ids for `text`; out-of-vocabulary tokens map to `None`.
    pub fn encode(&self, text: &str) -> Vec<Option<u32>> {
        tokenize(text).iter().map(|t| self.index.get(&word(t)).copied()).collect()
    }

    /// Next-token distribution after `history`, using the longest suffix of
    /// at most `order - 1` known tokens that was seen in training.
    pub fn distribution(&self, history: &[Option<u32>]) -> Vec<f64> {
        let known = history.iter().rev().take_while(|t| t.is_some()).count();
        let max_h = (self.order - 1).min(known);
        let tail: Vec<u32> = history[history.len() - max_h..].iter().map(|t| t.expect("known")).collect();
        let v = self.vocab.len() as f64;
        for h in (0..=max_h).rev() {
            if let Some(c) = self.table.get(&tail[max_h - h..]) {
                let denom = c.total as f64 + self.alpha * v;
                let mut p = alloc::vec![self.alpha / denom; self.vocab.len()];
                for (w, n) in &c.next {
                    p[*w as usize] = (*n as f64 + self.alpha) / denom;
                }
                return p;
            }
        }
        alloc::vec![1.0 / v; self.vocab.len()]
    }

    fn pick(&mut self, p: &[f64], temperature: f64) -> usize {
        if temperature <= 0.0 {
            let mut best = 0;
            for (i, x) in p.iter().enumerate() {
                if *x > p[best] {
                    best = i;
                }
            }
            return best;
        }
        let w: Vec<f64> = p.iter().map(|x| Float::powf(*x, 1.0 / temperature)).collect();
        let total: f64 = w.iter().sum();
        let mut r = self.rng.gen::<f64>() * total;
        for (i, x) in w.iter().enumerate() {
            r -= x;
            if r <= 0.0 {
                return i;
            }
        }
        w.len() - 1
    }

    pub fn to_file(&self) -> NGramFile {
        NGramFile {
            order: self.order,
            alpha: self.alpha,
            vocab: self.vocab.clone(),
            table: self.table.iter().map(|(h, c)| (h.clone(), c.next.iter().map(|(w, n)| (*w, *n)).collect())).collect(),
            fingerprint: self.fingerprint,
        }
    }

    pub fn from_file(f: NGramFile) -> Self {
        let index = f.vocab.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        let table = f
            .table
            .into_iter()
            .map(|(h, next)| {
                let next: BTreeMap<u32, u64> = next.into_iter().collect();
                (h, Counts { total: next.values().sum(), next })
            })
            .collect();
        NGramModel {
            order: f.order.max(1),
            alpha: f.alpha,
            vocab: f.vocab,
            index,
            table,
            fingerprint: f.fingerprint,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }
}

impl ModelProvider for NGramModel {
    /// Emits tokens until `[EOS]`, a stop string, or `max_tokens`.
    fn generate(&mut self, context: &str, stop: &[&str], max_tokens: usize, temperature: f64) -> Result<Generation, ModelError> {
        let mut history = self.encode(context);
        let mut out: Vec<Token> = Vec::new();
        let eos = self.index[crate::token::EOS];
        while out.len() < max_tokens {
            let p = self.distribution(&history);
            let w = self.pick(&p, temperature) as u32;
            history.push(Some(w));
            out.push(token(&self.vocab[w as usize]));
            if w == eos {
                break;
            }
            let text = detokenize(&out);
            if stop.iter().any(|s| !s.is_empty() && text.ends_with(s)) {
                break;
            }
        }
        let finish = if out.len() >= max_tokens && out.last().map(word).as_deref() != Some(crate::token::EOS) {
            FinishReason::Length
        } else {
            FinishReason::Stop
        };
        Ok(Generation { text: detokenize(&out), tokens_generated: out.len(), finish })
    }
}
