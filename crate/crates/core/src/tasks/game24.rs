//! Game of 24 over exact rationals.
//!
//! A state is the multiset of remaining numbers, kept in a fixed order: the
//! untouched inputs in their original order followed by intermediate results
//! in the order they were produced. Each action combines two numbers with
//! `+ - * /` and appends the result.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use num_rational::Ratio;
use num_traits::{Signed, ToPrimitive, Zero};
use rand::Rng;

use super::{Task, TaskError};

pub type Rational = Ratio<i64>;

const TARGET: i64 = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
}

impl Op {
    fn symbol(self) -> &'static str {
        match self {
            Op::Add => "+",
            Op::Sub => "-",
            Op::Mul => "*",
            Op::Div => "/",
        }
    }

    fn parse(s: &str) -> Option<Op> {
        match s {
            "+" => Some(Op::Add),
            "-" | "−" => Some(Op::Sub),
            "*" | "×" | "x" => Some(Op::Mul),
            "/" | "÷" => Some(Op::Div),
            _ => None,
        }
    }

    fn apply(self, a: Rational, b: Rational) -> Option<Rational> {
        match self {
            Op::Add => Some(a + b),
            Op::Sub => Some(a - b),
            Op::Mul => Some(a * b),
            Op::Div if b.is_zero() => None,
            Op::Div => Some(a / b),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Game24Problem {
    pub numbers: Vec<i64>,
}

impl Game24Problem {
    pub fn new(numbers: impl Into<Vec<i64>>) -> Self {
        Game24Problem { numbers: numbers.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Game24State {
    pub numbers: Vec<Rational>,
    pub history: Vec<String>,
}

/// `numbers[left] op numbers[right]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Equation {
    pub left: usize,
    pub right: usize,
    pub op: Op,
    pub lhs: Rational,
    pub rhs: Rational,
    pub result: Rational,
}

impl fmt::Display for Equation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} = {}", self.lhs, self.op.symbol(), self.rhs, self.result)
    }
}

/// Syntactic form of `a op b = c`.
struct ParsedEquation {
    lhs: Rational,
    op: Op,
    rhs: Rational,
    result: Rational,
}

fn parse_rational(s: &str) -> Option<Rational> {
    s.parse::<Rational>().ok()
}

fn parse_equation(text: &str) -> Result<ParsedEquation, TaskError> {
    let malformed = || TaskError::MalformedEquation(text.to_string());
    let parts: Vec<&str> = text.split_whitespace().collect();
    let [a, op, b, eq, c] = parts.as_slice() else {
        return Err(malformed());
    };
    if *eq != "=" {
        return Err(malformed());
    }
    Ok(ParsedEquation {
        lhs: parse_rational(a).ok_or_else(malformed)?,
        op: Op::parse(op).ok_or_else(malformed)?,
        rhs: parse_rational(b).ok_or_else(malformed)?,
        result: parse_rational(c).ok_or_else(malformed)?,
    })
}

fn to_f64(r: Rational) -> f64 {
    r.to_f64().unwrap_or(f64::MAX)
}

/// Game of 24: reach a single number equal to 24.
#[derive(Clone, Copy, Debug, Default)]
pub struct Game24;

impl Game24 {
    /// Checks a solution path. Unparseable lines are an error; well-formed
    /// but wrong paths are `Ok(false)`.
    pub fn validate(&self, problem: &Game24Problem, path: &[&str]) -> Result<bool, TaskError> {
        for line in path {
            parse_equation(line)?;
        }
        if path.len() + 1 != problem.numbers.len() {
            return Ok(false);
        }
        match super::replay(self, problem, path) {
            Ok(state) => Ok(self.is_goal(problem, &state)),
            Err(_) => Ok(false),
        }
    }

    /// First solution in canonical action order, by depth-first search.
    pub fn solve(&self, problem: &Game24Problem) -> Option<Vec<Equation>> {
        fn go(task: &Game24, p: &Game24Problem, s: &Game24State, acc: &mut Vec<Equation>) -> bool {
            if task.is_goal(p, s) {
                return true;
            }
            let Ok(actions) = task.legal_actions(p, s) else { return false };
            for a in actions {
                let next = task.transition(p, s, &a).expect("legal action");
                acc.push(a);
                if go(task, p, &next, acc) {
                    return true;
                }
                acc.pop();
            }
            false
        }
        let mut acc = Vec::new();
        go(self, problem, &self.initial_state(problem), &mut acc).then_some(acc)
    }

    /// Four numbers drawn uniformly from 1..=13.
    pub fn sample_problem<R: Rng + ?Sized>(rng: &mut R) -> Game24Problem {
        Game24Problem::new((0..4).map(|_| rng.gen_range(1..=13)).collect::<Vec<i64>>())
    }
}

/// Exhaustive check over every ordered pair and operator at every level.
/// Written independently of [`Game24::legal_actions`] so it can serve as an
/// oracle for it.
pub fn solvable(numbers: &[i64]) -> bool {
    fn go(nums: &[Rational]) -> bool {
        if nums.len() == 1 {
            return nums[0] == Rational::from_integer(TARGET);
        }
        for i in 0..nums.len() {
            for j in 0..nums.len() {
                if i == j {
                    continue;
                }
                let rest: Vec<Rational> =
                    nums.iter().enumerate().filter(|(k, _)| *k != i && *k != j).map(|(_, v)| *v).collect();
                for op in [Op::Add, Op::Sub, Op::Mul, Op::Div] {
                    if let Some(r) = op.apply(nums[i], nums[j]) {
                        let mut next = rest.clone();
                        next.push(r);
                        if go(&next) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
    !numbers.is_empty() && go(&numbers.iter().map(|&n| Rational::from_integer(n)).collect::<Vec<_>>())
}

impl Task for Game24 {
    type Problem = Game24Problem;
    type State = Game24State;
    type Action = Equation;

    fn name(&self) -> &'static str {
        "game24"
    }

    fn render_problem(&self, problem: &Game24Problem) -> String {
        let nums: Vec<String> = problem.numbers.iter().map(|n| n.to_string()).collect();
        format!("Input:\n{}", nums.join(" "))
    }

    fn parse_problem(&self, text: &str) -> Result<Game24Problem, TaskError> {
        let body = text.trim().strip_prefix("Input:").unwrap_or(text);
        let numbers = body
            .split_whitespace()
            .map(|w| w.parse::<i64>().map_err(|_| TaskError::MalformedProblem(text.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        if numbers.is_empty() {
            return Err(TaskError::MalformedProblem(text.to_string()));
        }
        Ok(Game24Problem { numbers })
    }

    fn initial_state(&self, problem: &Game24Problem) -> Game24State {
        Game24State {
            numbers: problem.numbers.iter().map(|&n| Rational::from_integer(n)).collect(),
            history: Vec::new(),
        }
    }

    fn legal_actions(&self, _problem: &Game24Problem, state: &Game24State) -> Result<Vec<Equation>, TaskError> {
        let n = &state.numbers;
        if n.len() < 2 {
            return Err(TaskError::TerminalState);
        }
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for i in 0..n.len() {
            for j in (i + 1)..n.len() {
                let choices = [(i, Op::Add, j), (i, Op::Sub, j), (j, Op::Sub, i), (i, Op::Mul, j), (i, Op::Div, j), (j, Op::Div, i)];
                for (l, op, r) in choices {
                    let Some(result) = op.apply(n[l], n[r]) else { continue };
                    let eq = Equation { left: l, right: r, op, lhs: n[l], rhs: n[r], result };
                    if seen.insert(eq.to_string()) {
                        out.push(eq);
                    }
                }
            }
        }
        Ok(out)
    }

    fn transition(&self, _problem: &Game24Problem, state: &Game24State, action: &Equation) -> Result<Game24State, TaskError> {
        let n = &state.numbers;
        let ok = action.left != action.right
            && n.get(action.left) == Some(&action.lhs)
            && n.get(action.right) == Some(&action.rhs)
            && action.op.apply(action.lhs, action.rhs) == Some(action.result);
        if !ok {
            return Err(TaskError::IllegalAction(action.to_string()));
        }
        let mut numbers: Vec<Rational> =
            n.iter().enumerate().filter(|(k, _)| *k != action.left && *k != action.right).map(|(_, v)| *v).collect();
        numbers.push(action.result);
        let mut history = state.history.clone();
        history.push(action.to_string());
        Ok(Game24State { numbers, history })
    }

    fn is_goal(&self, _problem: &Game24Problem, state: &Game24State) -> bool {
        state.numbers.len() == 1 && state.numbers[0] == Rational::from_integer(TARGET)
    }

    fn render_action(&self, action: &Equation) -> String {
        action.to_string()
    }

    fn parse_action(&self, text: &str, _problem: &Game24Problem, state: &Game24State) -> Result<Equation, TaskError> {
        if state.numbers.len() < 2 {
            return Err(TaskError::TerminalState);
        }
        let eq = parse_equation(text)?;
        let illegal = || TaskError::IllegalAction(text.to_string());
        let result = eq.op.apply(eq.lhs, eq.rhs).ok_or_else(illegal)?;
        if result != eq.result {
            return Err(illegal());
        }
        let n = &state.numbers;
        let left = n.iter().position(|v| *v == eq.lhs).ok_or_else(illegal)?;
        let right = n.iter().enumerate().position(|(k, v)| k != left && *v == eq.rhs).ok_or_else(illegal)?;
        Ok(Equation { left, right, op: eq.op, lhs: eq.lhs, rhs: eq.rhs, result })
    }

    fn max_depth(&self, problem: &Game24Problem) -> usize {
        problem.numbers.len().saturating_sub(1)
    }

    fn validate_solution(&self, problem: &Game24Problem, path: &[&str]) -> bool {
        self.validate(problem, path).unwrap_or(false)
    }

    fn reference_solution(&self, problem: &Game24Problem) -> Option<Vec<Equation>> {
        self.solve(problem)
    }

    /// Closeness to 24 of the best single pairwise combination left after
    /// the move (or of the final number).
    fn heuristic(&self, problem: &Game24Problem, state: &Game24State, action: &Equation) -> f64 {
        let Ok(next) = self.transition(problem, state, action) else { return f64::MIN };
        let target = Rational::from_integer(TARGET);
        let n = &next.numbers;
        if n.len() == 1 {
            return -to_f64((n[0] - target).abs());
        }
        let mut best = f64::MAX;
        for i in 0..n.len() {
            for j in 0..n.len() {
                if i == j {
                    continue;
                }
                for op in [Op::Add, Op::Sub, Op::Mul, Op::Div] {
                    if let Some(r) = op.apply(n[i], n[j]) {
                        best = best.min(to_f64((r - target).abs()));
                    }
                }
            }
        }
        -best
    }
}
