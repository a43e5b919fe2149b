//! In-memory search trees.
//!
//! Nodes live in a dense arena indexed by [`NodeId`]. Index 0 is always the
//! synthetic root, a [`Marker::Sep`] node with empty action text that stands
//! for the problem statement. Child order is insertion order and never
//! changes afterwards: it is the sibling precedence every context and
//! traversal relies on.

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::token::{self, Token};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NodeId(pub usize);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);

    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Structural label carried by every node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Marker {
    /// Viable, may be expanded further.
    Sep,
    /// Dead end.
    Fail,
    /// Solution.
    Goal,
}

impl Marker {
    pub fn token(self) -> Token {
        match self {
            Marker::Sep => Token::Sep,
            Marker::Fail => Token::Fail,
            Marker::Goal => Token::Goal,
        }
    }

    pub fn from_token(tok: &Token) -> Option<Marker> {
        match tok {
            Token::Sep => Some(Marker::Sep),
            Token::Fail => Some(Marker::Fail),
            Token::Goal => Some(Marker::Goal),
            _ => None,
        }
    }

    pub fn is_terminal(self) -> bool {
        !matches!(self, Marker::Sep)
    }

    /// Short name used by the JSONL schemas ("SEP", "FAIL", "GOAL").
    pub fn name(self) -> &'static str {
        match self {
            Marker::Sep => "SEP",
            Marker::Fail => "FAIL",
            Marker::Goal => "GOAL",
        }
    }

    pub fn from_name(name: &str) -> Option<Marker> {
        match name {
            "SEP" => Some(Marker::Sep),
            "FAIL" => Some(Marker::Fail),
            "GOAL" => Some(Marker::Goal),
            _ => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreeError {
    #[error("unknown parent node {0}")]
    UnknownParent(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} is a terminal and cannot have children")]
    ParentNotViable(NodeId),
    #[error("the root has no context")]
    RootHasNoContext,
    #[error("invalid action text {0:?}")]
    InvalidActionText(String),
    #[error("node {0} already has children")]
    NotALeaf(NodeId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeNode {
    action: String,
    marker: Marker,
    parent: Option<NodeId>,
    children: Vec<NodeId>,
    depth: usize,
}

impl TreeNode {
    pub fn action(&self) -> &str {
        &self.action
    }

    pub fn marker(&self) -> Marker {
        self.marker
    }

    pub fn parent(&self) -> Option<NodeId> {
        self.parent
    }

    pub fn children(&self) -> &[NodeId] {
        &self.children
    }

    /// Distance from the root; the root has depth 0.
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// One `(action, marker)` entry of a root-to-node path.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PathStep {
    pub action: String,
    pub marker: Marker,
}

impl PathStep {
    pub fn new(action: impl Into<String>, marker: Marker) -> Self {
        PathStep { action: action.into(), marker }
    }
}

/// Root-to-node action sequence, excluding the synthetic root.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NodePath(pub Vec<PathStep>);

impl NodePath {
    pub fn steps(&self) -> &[PathStep] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn actions(&self) -> Vec<&str> {
        self.0.iter().map(|s| s.action.as_str()).collect()
    }

    pub fn last(&self) -> Option<&PathStep> {
        self.0.last()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Traversal {
    /// Depth first, sibling order second.
    Bfs,
    /// Preorder in sibling order.
    Dfs,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SearchTree {
    problem: String,
    nodes: Vec<TreeNode>,
}

impl SearchTree {
    pub fn new(problem: impl Into<String>) -> Self {
        SearchTree {
            problem: problem.into(),
            nodes: vec![TreeNode {
                action: String::new(),
                marker: Marker::Sep,
                parent: None,
                children: Vec::new(),
                depth: 0,
            }],
        }
    }

    pub fn problem(&self) -> &str {
        &self.problem
    }

    pub fn root(&self) -> NodeId {
        NodeId::ROOT
    }

    /// Number of nodes including the root.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn node(&self, id: NodeId) -> Option<&TreeNode> {
        self.nodes.get(id.0)
    }

    fn get(&self, id: NodeId) -> Result<&TreeNode, TreeError> {
        self.nodes.get(id.0).ok_or(TreeError::UnknownNode(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len()).map(NodeId)
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        self.nodes.get(id.0).map(|n| n.children.as_slice()).unwrap_or(&[])
    }

    /// Appends a new leaf as the last child of `parent`.
    ///
    /// Action text is whitespace-normalized; empty text or text containing a
    /// reserved structural token is rejected.
    pub fn add_child(
        &mut self,
        parent: NodeId,
        action: &str,
        marker: Marker,
    ) -> Result<NodeId, TreeError> {
        let p = self.nodes.get(parent.0).ok_or(TreeError::UnknownParent(parent))?;
        if p.marker.is_terminal() {
            return Err(TreeError::ParentNotViable(parent));
        }
        let action = token::normalize_whitespace(action);
        if action.is_empty() || token::contains_reserved(&action) {
            return Err(TreeError::InvalidActionText(action));
        }
        let depth = p.depth + 1;
        let id = NodeId(self.nodes.len());
        self.nodes.push(TreeNode { action, marker, parent: Some(parent), children: Vec::new(), depth });
        self.nodes[parent.0].children.push(id);
        Ok(id)
    }

    /// Re-labels a childless node. Used to demote unverifiable goals and
    /// malformed expansions to [`Marker::Fail`].
    pub fn set_marker(&mut self, id: NodeId, marker: Marker) -> Result<(), TreeError> {
        let node = self.nodes.get_mut(id.0).ok_or(TreeError::UnknownNode(id))?;
        if !node.children.is_empty() {
            return Err(TreeError::NotALeaf(id));
        }
        if id == NodeId::ROOT {
            return Err(TreeError::ParentNotViable(id));
        }
        node.marker = marker;
        Ok(())
    }

    pub fn path_to(&self, id: NodeId) -> Result<NodePath, TreeError> {
        let mut steps = Vec::new();
        let mut cur = self.get(id)?;
        while let Some(parent) = cur.parent {
            steps.push(PathStep::new(cur.action.clone(), cur.marker));
            cur = &self.nodes[parent.0];
        }
        steps.reverse();
        Ok(NodePath(steps))
    }

    /// The conditioning set of a node: its ancestors' entries in root-to-parent
    /// order, followed by its earlier siblings in sibling order.
    pub fn context_of(&self, id: NodeId) -> Result<Vec<PathStep>, TreeError> {
        let node = self.get(id)?;
        let parent = node.parent.ok_or(TreeError::RootHasNoContext)?;
        let mut ctx = self.path_to(parent)?.0;
        for &sib in &self.nodes[parent.0].children {
            if sib == id {
                break;
            }
            let s = &self.nodes[sib.0];
            ctx.push(PathStep::new(s.action.clone(), s.marker));
        }
        Ok(ctx)
    }

    /// All `Fail`/`Goal` nodes in the requested traversal order.
    pub fn terminal_nodes(&self, order: Traversal) -> Vec<NodeId> {
        let visit: Vec<NodeId> = match order {
            Traversal::Bfs => self.bfs_order(),
            Traversal::Dfs => self.dfs_order(),
        };
        visit.into_iter().filter(|id| self.nodes[id.0].marker.is_terminal()).collect()
    }

    pub fn bfs_order(&self) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut queue = VecDeque::from([NodeId::ROOT]);
        while let Some(id) = queue.pop_front() {
            out.push(id);
            queue.extend(self.nodes[id.0].children.iter().copied());
        }
        out
    }

    pub fn dfs_order(&self) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![NodeId::ROOT];
        while let Some(id) = stack.pop() {
            out.push(id);
            stack.extend(self.nodes[id.0].children.iter().rev().copied());
        }
        out
    }

    /// Nodes with at least one child, in BFS order. The root counts when it
    /// has children.
    pub fn internal_nodes(&self) -> Vec<NodeId> {
        self.bfs_order().into_iter().filter(|id| !self.nodes[id.0].children.is_empty()).collect()
    }

    pub fn depth(&self, id: NodeId) -> Option<usize> {
        self.node(id).map(|n| n.depth)
    }

    /// Equal problem, actions, markers and child order, regardless of how
    /// node ids were assigned.
    pub fn same_shape(&self, other: &SearchTree) -> bool {
        fn eq(a: &SearchTree, x: NodeId, b: &SearchTree, y: NodeId) -> bool {
            let (nx, ny) = (&a.nodes[x.0], &b.nodes[y.0]);
            nx.action == ny.action
                && nx.marker == ny.marker
                && nx.children.len() == ny.children.len()
                && nx.children.iter().zip(&ny.children).all(|(cx, cy)| eq(a, *cx, b, *cy))
        }
        self.problem == other.problem && eq(self, NodeId::ROOT, other, NodeId::ROOT)
    }
}
