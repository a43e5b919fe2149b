//! Task environments with exact oracles.

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::tree::Marker;

pub mod game24;
pub mod gridworld;

pub use game24::Game24;
pub use gridworld::Gridworld;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TaskError {
    #[error("state is terminal")]
    TerminalState,
    #[error("malformed equation {0:?}")]
    MalformedEquation(String),
    #[error("illegal action {0:?}")]
    IllegalAction(String),
    #[error("malformed problem: {0}")]
    MalformedProblem(String),
    #[error("goal unreachable")]
    Unreachable,
    #[error("no instance accepted after {0} attempts")]
    GenerationBudgetExceeded(usize),
}

/// A planning environment: states, ordered legal actions, transitions and a
/// goal test, plus text rendering for problems and actions.
pub trait Task {
    type Problem: Clone;
    type State: Clone;
    type Action: Clone;

    fn name(&self) -> &'static str;

    fn render_problem(&self, problem: &Self::Problem) -> String;

    fn parse_problem(&self, text: &str) -> Result<Self::Problem, TaskError>;

    fn initial_state(&self, problem: &Self::Problem) -> Self::State;

    /// Legal actions in a deterministic canonical order.
    fn legal_actions(&self, problem: &Self::Problem, state: &Self::State) -> Result<Vec<Self::Action>, TaskError>;

    fn transition(&self, problem: &Self::Problem, state: &Self::State, action: &Self::Action) -> Result<Self::State, TaskError>;

    fn is_goal(&self, problem: &Self::Problem, state: &Self::State) -> bool;

    /// States from which no goal is reachable within the remaining depth.
    /// `depth` is the number of actions taken to reach `state`.
    fn is_dead_end(&self, _problem: &Self::Problem, _state: &Self::State, _depth: usize) -> bool {
        false
    }

    fn render_action(&self, action: &Self::Action) -> String;

    /// Parses action text and checks that it is legal in `state`.
    fn parse_action(&self, text: &str, problem: &Self::Problem, state: &Self::State) -> Result<Self::Action, TaskError>;

    fn max_depth(&self, problem: &Self::Problem) -> usize;

    fn validate_solution(&self, problem: &Self::Problem, path: &[&str]) -> bool;

    /// A known-correct action sequence, if the instance is solvable.
    fn reference_solution(&self, problem: &Self::Problem) -> Option<Vec<Self::Action>>;

    /// Task-specific promise of taking `action` in `state`; higher is better.
    fn heuristic(&self, _problem: &Self::Problem, _state: &Self::State, _action: &Self::Action) -> f64 {
        0.0
    }
}

/// The marker a node gets after `depth` actions have led to `state`.
pub fn marker_for<T: Task>(task: &T, problem: &T::Problem, state: &T::State, depth: usize) -> Marker {
    if task.is_goal(problem, state) {
        return Marker::Goal;
    }
    if depth >= task.max_depth(problem) || task.is_dead_end(problem, state, depth) {
        return Marker::Fail;
    }
    match task.legal_actions(problem, state) {
        Ok(a) if !a.is_empty() => Marker::Sep,
        _ => Marker::Fail,
    }
}

/// Replays action texts from the initial state.
pub fn replay<T: Task, S: AsRef<str>>(task: &T, problem: &T::Problem, actions: &[S]) -> Result<T::State, TaskError> {
    let mut state = task.initial_state(problem);
    for a in actions {
        let action = task.parse_action(a.as_ref(), problem, &state)?;
        state = task.transition(problem, &state, &action)?;
    }
    Ok(state)
}

/// Legal actions rendered to text.
pub fn rendered_actions<T: Task>(task: &T, problem: &T::Problem, state: &T::State) -> Vec<String> {
    task.legal_actions(problem, state)
        .map(|acts| acts.iter().map(|a| task.render_action(a)).collect())
        .unwrap_or_default()
}

/// Either supported task, for callers that pick one at runtime.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum TaskKind {
    Game24,
    Gridworld,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Game24 => "game24",
            TaskKind::Gridworld => "gridworld",
        }
    }

    pub fn from_name(name: &str) -> Option<TaskKind> {
        match name {
            "game24" => Some(TaskKind::Game24),
            "gridworld" => Some(TaskKind::Gridworld),
            _ => None,
        }
    }
}
