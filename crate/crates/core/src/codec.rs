//! Token-level codec for expansion blocks, stitched contexts and whole-tree
//! traces.
//!
//! Layout of one expansion block:
//!
//! ```text
//! [BOS]
//! 9 + 15 = 24 [GOAL]
//! 9 - 15 = -6 [FAIL] [EOS]
//! ```
//!
//! A marker follows its action after one space, entries are separated by a
//! newline, and `[EOS]` sits on the line of the final marker.

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::token::{self, detokenize, tokenize, Token};
use crate::tree::{Marker, NodeId, NodePath, PathStep, SearchTree};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ExpansionBlock {
    pub children: Vec<PathStep>,
}

impl ExpansionBlock {
    pub fn new(children: Vec<PathStep>) -> Self {
        ExpansionBlock { children }
    }

    pub fn len(&self) -> usize {
        self.children.len()
    }

    pub fn is_empty(&self) -> bool {
        self.children.is_empty()
    }
}

impl FromIterator<PathStep> for ExpansionBlock {
    fn from_iter<I: IntoIterator<Item = PathStep>>(iter: I) -> Self {
        ExpansionBlock { children: iter.into_iter().collect() }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("expansion block has no children")]
    EmptyBlock,
    #[error("invalid action text {0:?}")]
    InvalidAction(String),
    #[error("path entry {0} is not viable but has descendants")]
    NonViableInterior(usize),
    #[error("problem text contains a reserved token")]
    ReservedInProblem,
    #[error("malformed context: {0}")]
    MalformedContext(&'static str),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("block does not start with [BOS]")]
    MissingBos,
    #[error("block is not closed by [EOS]")]
    MissingEos,
    #[error("action text without a marker")]
    DanglingAction,
    #[error("marker without action text")]
    EmptyAction,
    #[error("expansion block has no children")]
    EmptyBlock,
    #[error("unexpected {0} inside a block")]
    UnexpectedToken(Token),
    #[error("content after [EOS]")]
    TrailingContent,
}

/// Strict decoding rejects anything but a complete block. Tolerant decoding
/// also accepts output cut off before `[EOS]`, keeping every complete entry.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum DecodeMode {
    #[default]
    Strict,
    Tolerant,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decoded {
    pub block: ExpansionBlock,
    /// Set when the closing `[EOS]` was missing (tolerant mode only).
    pub truncated: bool,
}

fn action_tokens(action: &str) -> Result<Vec<Token>, CodecError> {
    let norm = token::normalize_whitespace(action);
    if norm.is_empty() || token::contains_reserved(&norm) {
        return Err(CodecError::InvalidAction(norm));
    }
    Ok(norm.split(' ').map(|w| Token::Word(w.into())).collect())
}

fn push_entry(out: &mut Vec<Token>, step: &PathStep) -> Result<(), CodecError> {
    out.extend(action_tokens(&step.action)?);
    out.push(step.marker.token());
    Ok(())
}

pub fn encode_block(block: &ExpansionBlock) -> Result<Vec<Token>, CodecError> {
    if block.children.is_empty() {
        return Err(CodecError::EmptyBlock);
    }
    let mut out = Vec::new();
    out.push(Token::Bos);
    out.push(Token::Newline);
    for (i, child) in block.children.iter().enumerate() {
        if i > 0 {
            out.push(Token::Newline);
        }
        push_entry(&mut out, child)?;
    }
    out.push(Token::Eos);
    Ok(out)
}

pub fn encode_block_text(block: &ExpansionBlock) -> Result<String, CodecError> {
    encode_block(block).map(|t| detokenize(&t))
}

/// Parses one block starting at `tokens[pos]` (leading newlines skipped).
/// Returns the block, whether it was truncated, and the position after `[EOS]`.
fn decode_at(tokens: &[Token], mut pos: usize, mode: DecodeMode) -> Result<(Decoded, usize), DecodeError> {
    while tokens.get(pos) == Some(&Token::Newline) {
        pos += 1;
    }
    if tokens.get(pos) != Some(&Token::Bos) {
        return Err(DecodeError::MissingBos);
    }
    pos += 1;
    let mut children = Vec::new();
    let mut words: Vec<&str> = Vec::new();
    loop {
        let Some(tok) = tokens.get(pos) else {
            return match mode {
                DecodeMode::Strict => Err(DecodeError::MissingEos),
                DecodeMode::Tolerant if children.is_empty() => Err(DecodeError::EmptyBlock),
                DecodeMode::Tolerant => Ok((Decoded { block: ExpansionBlock { children }, truncated: true }, pos)),
            };
        };
        pos += 1;
        match tok {
            Token::Word(w) => words.push(w),
            Token::Newline => {
                if !words.is_empty() {
                    return Err(DecodeError::DanglingAction);
                }
            }
            Token::Sep | Token::Fail | Token::Goal => {
                if words.is_empty() {
                    return Err(DecodeError::EmptyAction);
                }
                let marker = Marker::from_token(tok).expect("marker token");
                children.push(PathStep::new(words.join(" "), marker));
                words.clear();
            }
            Token::Eos => {
                if !words.is_empty() {
                    return Err(DecodeError::DanglingAction);
                }
                if children.is_empty() {
                    return Err(DecodeError::EmptyBlock);
                }
                return Ok((Decoded { block: ExpansionBlock { children }, truncated: false }, pos));
            }
            Token::Bos => return Err(DecodeError::UnexpectedToken(Token::Bos)),
        }
    }
}

/// Decodes model output into an expansion block.
pub fn decode_block(tokens: &[Token], mode: DecodeMode) -> Result<Decoded, DecodeError> {
    let (decoded, end) = decode_at(tokens, 0, mode)?;
    if mode == DecodeMode::Strict && tokens[end..].iter().any(|t| *t != Token::Newline) {
        return Err(DecodeError::TrailingContent);
    }
    Ok(decoded)
}

pub fn decode_block_text(text: &str, mode: DecodeMode) -> Result<Decoded, DecodeError> {
    decode_block(&tokenize(text), mode)
}

/// The stitched prompt for expanding the last node of `path`: the problem,
/// a newline, then one `action marker` line per path entry.
pub fn render_context(problem: &str, path: &NodePath) -> Result<Vec<Token>, CodecError> {
    if token::contains_reserved(problem) {
        return Err(CodecError::ReservedInProblem);
    }
    let steps = path.steps();
    if let Some(i) = steps.iter().take(steps.len().saturating_sub(1)).position(|s| s.marker != Marker::Sep) {
        return Err(CodecError::NonViableInterior(i));
    }
    let mut out = tokenize(problem);
    out.push(Token::Newline);
    for step in steps {
        push_entry(&mut out, step)?;
        out.push(Token::Newline);
    }
    Ok(out)
}

pub fn render_context_text(problem: &str, path: &NodePath) -> Result<String, CodecError> {
    render_context(problem, path).map(|t| detokenize(&t))
}

/// Inverse of [`render_context`]: splits a stitched prompt into the problem
/// text and the path. Path lines are the ones ending in a marker; they must
/// follow every problem line.
pub fn parse_context(text: &str) -> Result<(String, NodePath), CodecError> {
    let tokens = tokenize(text);
    let lines: Vec<&[Token]> = tokens.split(|t| *t == Token::Newline).collect();
    let first_path = lines
        .iter()
        .position(|l| l.last().is_some_and(|t| t.is_marker()))
        .unwrap_or(lines.len());
    let mut problem_lines = &lines[..first_path];
    while problem_lines.last().is_some_and(|l| l.is_empty()) {
        problem_lines = &problem_lines[..problem_lines.len() - 1];
    }
    if problem_lines.iter().flat_map(|l| l.iter()).any(|t| t.is_special()) {
        return Err(CodecError::MalformedContext("reserved token in problem"));
    }
    if problem_lines.is_empty() {
        return Err(CodecError::MalformedContext("missing problem"));
    }
    let mut problem_tokens = Vec::new();
    for (i, l) in problem_lines.iter().enumerate() {
        if i > 0 {
            problem_tokens.push(Token::Newline);
        }
        problem_tokens.extend_from_slice(l);
    }
    let mut steps = Vec::new();
    for line in &lines[first_path..] {
        if line.is_empty() {
            continue;
        }
        let (last, body) = line.split_last().expect("nonempty");
        let marker = Marker::from_token(last).ok_or(CodecError::MalformedContext("path line without marker"))?;
        if body.is_empty() || body.iter().any(|t| t.is_special()) {
            return Err(CodecError::MalformedContext("bad path line"));
        }
        steps.push(PathStep::new(detokenize(body), marker));
    }
    let path = NodePath(steps);
    if let Some(i) = path.steps().iter().take(path.len().saturating_sub(1)).position(|s| s.marker != Marker::Sep) {
        return Err(CodecError::NonViableInterior(i));
    }
    Ok((detokenize(&problem_tokens), path))
}

/// Header line separating the problem from the action lines of a
/// single-chain prompt.
pub const CHAIN_HEADER: &str = "Output:";

/// Prompt for single-chain decoding: the problem, an `Output:` line, then
/// one line per action taken so far. No structural tokens.
pub fn render_chain_prompt<S: AsRef<str>>(problem: &str, actions: &[S]) -> String {
    let mut out = String::from(problem.trim_end());
    out.push('\n');
    out.push_str(CHAIN_HEADER);
    out.push('\n');
    for a in actions {
        out.push_str(&token::normalize_whitespace(a.as_ref()));
        out.push('\n');
    }
    out
}

/// Inverse of [`render_chain_prompt`].
pub fn parse_chain_prompt(text: &str) -> Result<(String, Vec<String>), CodecError> {
    let lines: Vec<&str> = text.split('\n').collect();
    let header = lines
        .iter()
        .position(|l| l.trim() == CHAIN_HEADER)
        .ok_or(CodecError::MalformedContext("missing chain header"))?;
    let problem = lines[..header].join("\n");
    if problem.trim().is_empty() {
        return Err(CodecError::MalformedContext("missing problem"));
    }
    let actions = lines[header + 1..]
        .iter()
        .map(|l| token::normalize_whitespace(l))
        .filter(|l| !l.is_empty())
        .collect();
    Ok((problem, actions))
}

/// Full-tree serialization in depth-first preorder: the problem prompt, then
/// the root's block with every internal child's block nested right after
/// that child's entry.
pub fn serialize_tree_dfs(tree: &SearchTree) -> Vec<Token> {
    let mut out = render_context(tree.problem(), &NodePath::default()).unwrap_or_else(|_| tokenize(tree.problem()));
    if !tree.children(tree.root()).is_empty() {
        emit_nested(tree, tree.root(), &mut out);
    }
    out
}

fn emit_nested(tree: &SearchTree, id: NodeId, out: &mut Vec<Token>) {
    out.push(Token::Bos);
    out.push(Token::Newline);
    let children = tree.children(id);
    for (i, &c) in children.iter().enumerate() {
        let node = tree.node(c).expect("child exists");
        out.extend(node.action().split(' ').map(|w| Token::Word(w.into())));
        out.push(node.marker().token());
        if i + 1 < children.len() {
            out.push(Token::Newline);
        }
        if !node.is_leaf() {
            emit_nested(tree, c, out);
        }
    }
    out.push(Token::Eos);
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedTrace {
    pub tree: SearchTree,
    /// Set when the trace ended before every block was closed.
    pub truncated: bool,
}

/// Parses a [`serialize_tree_dfs`] trace that follows `problem`'s prompt.
/// `tokens` holds only the generated part, starting at the root's `[BOS]`.
/// In tolerant mode a truncated trace yields the tree parsed so far.
pub fn parse_trace(problem: &str, tokens: &[Token], mode: DecodeMode) -> Result<ParsedTrace, DecodeError> {
    let mut tree = SearchTree::new(problem);
    let mut pos = 0;
    while tokens.get(pos) == Some(&Token::Newline) {
        pos += 1;
    }
    if tokens.get(pos) != Some(&Token::Bos) {
        return Err(DecodeError::MissingBos);
    }
    let root = tree.root();
    let (end, truncated) = match parse_nested(tokens, pos + 1, &mut tree, root) {
        Ok(end) => (end, false),
        Err(DecodeError::MissingEos) if mode == DecodeMode::Tolerant && tree.len() > 1 => (tokens.len(), true),
        Err(e) => return Err(e),
    };
    if !truncated && mode == DecodeMode::Strict && tokens[end..].iter().any(|t| *t != Token::Newline) {
        return Err(DecodeError::TrailingContent);
    }
    Ok(ParsedTrace { tree, truncated })
}

fn parse_nested(tokens: &[Token], mut pos: usize, tree: &mut SearchTree, parent: NodeId) -> Result<usize, DecodeError> {
    let mut words: Vec<&str> = Vec::new();
    let mut last_child: Option<(NodeId, Marker)> = None;
    let mut any = false;
    loop {
        let Some(tok) = tokens.get(pos) else {
            return Err(DecodeError::MissingEos);
        };
        pos += 1;
        match tok {
            Token::Word(w) => words.push(w),
            Token::Newline => {
                if !words.is_empty() {
                    return Err(DecodeError::DanglingAction);
                }
            }
            Token::Sep | Token::Fail | Token::Goal => {
                if words.is_empty() {
                    return Err(DecodeError::EmptyAction);
                }
                let marker = Marker::from_token(tok).expect("marker token");
                let id = tree
                    .add_child(parent, &words.join(" "), marker)
                    .map_err(|_| DecodeError::UnexpectedToken(tok.clone()))?;
                words.clear();
                last_child = Some((id, marker));
                any = true;
            }
            Token::Bos => {
                match last_child.take() {
                    Some((id, Marker::Sep)) if words.is_empty() => {
                        pos = parse_nested(tokens, pos, tree, id)?;
                    }
                    _ => return Err(DecodeError::UnexpectedToken(Token::Bos)),
                }
            }
            Token::Eos => {
                if !words.is_empty() {
                    return Err(DecodeError::DanglingAction);
                }
                if !any {
                    return Err(DecodeError::EmptyBlock);
                }
                return Ok(pos);
            }
        }
    }
}

/// One supervised example: the stitched prompt for a node and the encoded
/// block of its children.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainingExample {
    pub tree_id: String,
    pub node_id: NodeId,
    pub context: Vec<Token>,
    pub target: Vec<Token>,
}

/// One example per internal node, in BFS order.
///
/// Ancestors are visible through the context, earlier siblings through the
/// already-generated prefix of the target, and nothing from any other
/// subtree appears in either.
pub fn extract_training_examples(tree: &SearchTree, tree_id: &str) -> Vec<TrainingExample> {
    tree.internal_nodes()
        .into_iter()
        .filter_map(|id| {
            let path = tree.path_to(id).ok()?;
            let context = render_context(tree.problem(), &path).ok()?;
            let block: ExpansionBlock = tree
                .children(id)
                .iter()
                .map(|&c| {
                    let n = tree.node(c).expect("child exists");
                    PathStep::new(n.action(), n.marker())
                })
                .collect();
            let target = encode_block(&block).ok()?;
            Some(TrainingExample { tree_id: tree_id.into(), node_id: id, context, target })
        })
        .collect()
}
