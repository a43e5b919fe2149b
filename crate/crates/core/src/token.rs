//! Whitespace tokenizer over the serialization vocabulary.
//!
//! A token is either one of the five structural tokens, a newline, or a run
//! of non-whitespace characters. Spaces separate tokens and are not tokens
//! themselves.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

pub const BOS: &str = "[BOS]";
pub const EOS: &str = "[EOS]";
pub const SEP: &str = "[SEP]";
pub const FAIL: &str = "[FAIL]";
pub const GOAL: &str = "[GOAL]";

/// All reserved strings. None of them may appear inside action text.
pub const RESERVED: [&str; 5] = [BOS, EOS, SEP, FAIL, GOAL];

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Token {
    Bos,
    Eos,
    Sep,
    Fail,
    Goal,
    Newline,
    Word(String),
}

impl Token {
    pub fn from_word(word: &str) -> Token {
        match word {
            BOS => Token::Bos,
            EOS => Token::Eos,
            SEP => Token::Sep,
            FAIL => Token::Fail,
            GOAL => Token::Goal,
            "\n" => Token::Newline,
            w => Token::Word(w.to_string()),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            Token::Bos => BOS,
            Token::Eos => EOS,
            Token::Sep => SEP,
            Token::Fail => FAIL,
            Token::Goal => GOAL,
            Token::Newline => "\n",
            Token::Word(w) => w,
        }
    }

    pub fn is_special(&self) -> bool {
        !matches!(self, Token::Word(_) | Token::Newline)
    }

    pub fn is_marker(&self) -> bool {
        matches!(self, Token::Sep | Token::Fail | Token::Goal)
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Splits text into tokens. Newlines (`\n`, with an optional preceding `\r`)
/// become [`Token::Newline`]; any other whitespace separates tokens.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    for (i, line) in text.split('\n').enumerate() {
        if i > 0 {
            out.push(Token::Newline);
        }
        out.extend(line.split_whitespace().map(Token::from_word));
    }
    out
}

/// Inverse of [`tokenize`]: a single space between adjacent non-newline
/// tokens, nothing around newlines.
pub fn detokenize(tokens: &[Token]) -> String {
    let mut out = String::new();
    let mut prev_newline = true;
    for tok in tokens {
        match tok {
            Token::Newline => {
                out.push('\n');
                prev_newline = true;
            }
            t => {
                if !prev_newline {
                    out.push(' ');
                }
                out.push_str(t.as_str());
                prev_newline = false;
            }
        }
    }
    out
}

/// Number of tokens `text` splits into.
pub fn count_tokens(text: &str) -> usize {
    tokenize(text).len()
}

/// Trims and collapses every run of whitespace (newlines included) to one
/// space.
pub fn normalize_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for (i, w) in text.split_whitespace().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(w);
    }
    out
}

/// True when `text` contains any reserved structural token as a substring.
pub fn contains_reserved(text: &str) -> bool {
    RESERVED.iter().any(|r| text.contains(r))
}
