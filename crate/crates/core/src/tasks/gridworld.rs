//! Textualized gridworld navigation.
//!
//! Coordinates are `(x, y)` with `x` growing rightward and `y` upward. Every
//! obstacle is an impassable cell. Instances are generated so that the
//! shortest start-to-goal path is unique, and a solution must be that path.

use alloc::collections::{BTreeSet, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Task, TaskError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Pos {
    pub x: i32,
    pub y: i32,
}

impl Pos {
    pub const fn new(x: i32, y: i32) -> Self {
        Pos { x, y }
    }

    fn step(self, m: Move) -> Pos {
        match m {
            Move::Up => Pos::new(self.x, self.y + 1),
            Move::Down => Pos::new(self.x, self.y - 1),
            Move::Left => Pos::new(self.x - 1, self.y),
            Move::Right => Pos::new(self.x + 1, self.y),
        }
    }

    fn manhattan(self, other: Pos) -> i32 {
        (self.x - other.x).abs() + (self.y - other.y).abs()
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

fn parse_pos(s: &str) -> Option<Pos> {
    let inner = s.strip_prefix('(')?.strip_suffix(')')?;
    let (x, y) = inner.split_once(',')?;
    Some(Pos::new(x.trim().parse().ok()?, y.trim().parse().ok()?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Move {
    Up,
    Down,
    Left,
    Right,
}

impl Move {
    pub const ALL: [Move; 4] = [Move::Up, Move::Down, Move::Left, Move::Right];

    pub fn name(self) -> &'static str {
        match self {
            Move::Up => "up",
            Move::Down => "down",
            Move::Left => "left",
            Move::Right => "right",
        }
    }

    pub fn parse(s: &str) -> Option<Move> {
        Move::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridworldSpec {
    pub width: i32,
    pub height: i32,
    pub walls: BTreeSet<Pos>,
    pub start: Pos,
    pub goal: Pos,
}

impl GridworldSpec {
    /// Open grid with the start bottom-left and the goal top-right.
    pub fn open(width: i32, height: i32) -> Self {
        GridworldSpec {
            width,
            height,
            walls: BTreeSet::new(),
            start: Pos::new(0, 0),
            goal: Pos::new(width - 1, height - 1),
        }
    }

    pub fn in_bounds(&self, p: Pos) -> bool {
        p.x >= 0 && p.y >= 0 && p.x < self.width && p.y < self.height
    }

    pub fn is_free(&self, p: Pos) -> bool {
        self.in_bounds(p) && !self.walls.contains(&p)
    }

    fn index(&self, p: Pos) -> usize {
        (p.y * self.width + p.x) as usize
    }

    fn cells(&self) -> usize {
        (self.width * self.height) as usize
    }

    /// Free neighbours in canonical move order.
    pub fn neighbours(&self, p: Pos) -> impl Iterator<Item = (Move, Pos)> + '_ {
        Move::ALL.into_iter().map(move |m| (m, p.step(m))).filter(|(_, q)| self.is_free(*q))
    }

    /// Breadth-first distances from `from`; `None` for unreachable cells.
    pub fn distances(&self, from: Pos) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.cells()];
        if !self.is_free(from) {
            return dist;
        }
        dist[self.index(from)] = Some(0);
        let mut queue = VecDeque::from([from]);
        while let Some(p) = queue.pop_front() {
            let d = dist[self.index(p)].expect("queued cells have a distance");
            for (_, q) in self.neighbours(p) {
                let slot = &mut dist[self.index(q)];
                if slot.is_none() {
                    *slot = Some(d + 1);
                    queue.push_back(q);
                }
            }
        }
        dist
    }

    /// A breadth-first shortest path from start to goal.
    pub fn shortest_path(&self) -> Result<Vec<Move>, TaskError> {
        let mut parent: Vec<Option<(Pos, Move)>> = vec![None; self.cells()];
        let mut seen = vec![false; self.cells()];
        if !self.is_free(self.start) || !self.is_free(self.goal) {
            return Err(TaskError::Unreachable);
        }
        seen[self.index(self.start)] = true;
        let mut queue = VecDeque::from([self.start]);
        while let Some(p) = queue.pop_front() {
            if p == self.goal {
                let mut moves = Vec::new();
                let mut cur = p;
                while let Some((prev, m)) = parent[self.index(cur)] {
                    moves.push(m);
                    cur = prev;
                }
                moves.reverse();
                return Ok(moves);
            }
            for (m, q) in self.neighbours(p) {
                if !seen[self.index(q)] {
                    seen[self.index(q)] = true;
                    parent[self.index(q)] = Some((p, m));
                    queue.push_back(q);
                }
            }
        }
        Err(TaskError::Unreachable)
    }

    /// Distances from `from` and, for every cell, the number of distinct
    /// shortest paths from `from` to it (dynamic program over BFS layers).
    fn layer_counts(&self, from: Pos) -> (Vec<Option<usize>>, Vec<u128>) {
        let dist = self.distances(from);
        let mut order: Vec<Pos> = (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| Pos::new(x, y)))
            .filter(|p| dist[self.index(*p)].is_some())
            .collect();
        order.sort_by_key(|p| dist[self.index(*p)]);
        let mut count = vec![0u128; self.cells()];
        if let Some(first) = order.first() {
            count[self.index(*first)] = 1;
        }
        for p in order {
            let d = dist[self.index(p)].expect("filtered");
            let c = count[self.index(p)];
            for (_, q) in self.neighbours(p) {
                if dist[self.index(q)] == Some(d + 1) {
                    let slot = &mut count[self.index(q)];
                    *slot = slot.saturating_add(c);
                }
            }
        }
        (dist, count)
    }

    /// Number of distinct shortest start-to-goal paths. Saturates at
    /// `u64::MAX`.
    pub fn shortest_path_count(&self) -> Result<u64, TaskError> {
        let (dist, count) = self.layer_counts(self.start);
        if dist[self.index(self.goal)].is_none() {
            return Err(TaskError::Unreachable);
        }
        Ok(u64::try_from(count[self.index(self.goal)]).unwrap_or(u64::MAX))
    }

    fn random_walls(&mut self, wall_density: f64, rng: &mut ChaCha8Rng) {
        for y in 0..self.height {
            for x in 0..self.width {
                let p = Pos::new(x, y);
                if p != self.start && p != self.goal && rng.gen_bool(wall_density) {
                    self.walls.insert(p);
                }
            }
        }
    }

    /// Rejection-samples wall sets (each cell other than start and goal is a
    /// wall with probability `wall_density`) until the goal is reachable by
    /// exactly one shortest path. Deterministic in `seed`.
    pub fn generate(
        width: i32,
        height: i32,
        wall_density: f64,
        seed: u64,
        max_attempts: usize,
    ) -> Result<GridworldSpec, TaskError> {
        check_size(width, height)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..max_attempts {
            let mut spec = GridworldSpec::open(width, height);
            spec.random_walls(wall_density, &mut rng);
            if spec.shortest_path_count() == Ok(1) {
                return Ok(spec);
            }
        }
        Err(TaskError::GenerationBudgetExceeded(max_attempts))
    }

    /// Samples walls as in [`GridworldSpec::generate`], rejecting only
    /// unreachable goals, then breaks shortest-path ties by walling random
    /// cells that lie on some but not all shortest paths. Each added wall
    /// keeps the shortest length and strictly lowers the path count, so the
    /// result has a unique shortest path of the originally sampled length.
    /// Rejection alone almost never succeeds beyond roughly 12x12.
    pub fn generate_with_repair(
        width: i32,
        height: i32,
        wall_density: f64,
        seed: u64,
        max_attempts: usize,
    ) -> Result<GridworldSpec, TaskError> {
        check_size(width, height)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..max_attempts {
            let mut spec = GridworldSpec::open(width, height);
            spec.random_walls(wall_density, &mut rng);
            if spec.shortest_path_count().is_err() {
                continue;
            }
            spec.break_ties(&mut rng);
            return Ok(spec);
        }
        Err(TaskError::GenerationBudgetExceeded(max_attempts))
    }

    fn break_ties(&mut self, rng: &mut ChaCha8Rng) {
        loop {
            let (from_start, n_start) = self.layer_counts(self.start);
            let (from_goal, n_goal) = self.layer_counts(self.goal);
            let gi = self.index(self.goal);
            let (Some(len), total) = (from_start[gi], n_start[gi]) else { return };
            if total <= 1 {
                return;
            }
            let optional: Vec<Pos> = (0..self.height)
                .flat_map(|y| (0..self.width).map(move |x| Pos::new(x, y)))
                .filter(|p| *p != self.start && *p != self.goal)
                .filter(|p| {
                    let i = self.index(*p);
                    match (from_start[i], from_goal[i]) {
                        (Some(a), Some(b)) if a + b == len => n_start[i].saturating_mul(n_goal[i]) < total,
                        _ => false,
                    }
                })
                .collect();
            let pick = optional[rng.gen_range(0..optional.len())];
            self.walls.insert(pick);
        }
    }
}

fn check_size(width: i32, height: i32) -> Result<(), TaskError> {
    if width < 2 || height < 2 {
        return Err(TaskError::MalformedProblem(format!("grid {width}x{height} is too small")));
    }
    Ok(())
}

/// A parsed instance plus its distance-to-goal table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridProblem {
    pub spec: GridworldSpec,
    goal_dist: Vec<Option<usize>>,
    optimal: Option<usize>,
}

impl GridProblem {
    pub fn new(spec: GridworldSpec) -> Self {
        let goal_dist = spec.distances(spec.goal);
        let optimal = if spec.is_free(spec.start) { goal_dist[spec.index(spec.start)] } else { None };
        GridProblem { spec, goal_dist, optimal }
    }

    /// Length of the shortest path, if the goal is reachable.
    pub fn optimal_len(&self) -> Option<usize> {
        self.optimal
    }

    fn goal_distance(&self, p: Pos) -> Option<usize> {
        if self.spec.in_bounds(p) {
            self.goal_dist[self.spec.index(p)]
        } else {
            None
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Gridworld;

impl Task for Gridworld {
    type Problem = GridProblem;
    type State = Pos;
    type Action = Move;

    fn name(&self) -> &'static str {
        "gridworld"
    }

    fn render_problem(&self, problem: &GridProblem) -> String {
        let s = &problem.spec;
        let walls = if s.walls.is_empty() {
            "none".to_string()
        } else {
            s.walls.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(" ")
        };
        format!("Input:\ngrid {} x {}\nwalls {}\nstart {}\ngoal {}", s.width, s.height, walls, s.start, s.goal)
    }

    fn parse_problem(&self, text: &str) -> Result<GridProblem, TaskError> {
        let bad = || TaskError::MalformedProblem(text.to_string());
        let mut width = None;
        let mut height = None;
        let mut walls = BTreeSet::new();
        let mut start = None;
        let mut goal = None;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && *l != "Input:") {
            let words: Vec<&str> = line.split_whitespace().collect();
            match words.as_slice() {
                ["grid", w, "x", h] => {
                    width = Some(w.parse::<i32>().map_err(|_| bad())?);
                    height = Some(h.parse::<i32>().map_err(|_| bad())?);
                }
                ["walls", "none"] => {}
                ["walls", rest @ ..] => {
                    for w in rest {
                        walls.insert(parse_pos(w).ok_or_else(bad)?);
                    }
                }
                ["start", p] => start = Some(parse_pos(p).ok_or_else(bad)?),
                ["goal", p] => goal = Some(parse_pos(p).ok_or_else(bad)?),
                _ => return Err(bad()),
            }
        }
        let spec = GridworldSpec {
            width: width.ok_or_else(bad)?,
            height: height.ok_or_else(bad)?,
            walls,
            start: start.ok_or_else(bad)?,
            goal: goal.ok_or_else(bad)?,
        };
        if !spec.is_free(spec.start) || !spec.is_free(spec.goal) {
            return Err(bad());
        }
        Ok(GridProblem::new(spec))
    }

    fn initial_state(&self, problem: &GridProblem) -> Pos {
        problem.spec.start
    }

    fn legal_actions(&self, problem: &GridProblem, state: &Pos) -> Result<Vec<Move>, TaskError> {
        Ok(problem.spec.neighbours(*state).map(|(m, _)| m).collect())
    }

    fn transition(&self, problem: &GridProblem, state: &Pos, action: &Move) -> Result<Pos, TaskError> {
        let next = state.step(*action);
        if problem.spec.is_free(next) {
            Ok(next)
        } else {
            Err(TaskError::IllegalAction(action.name().to_string()))
        }
    }

    fn is_goal(&self, problem: &GridProblem, state: &Pos) -> bool {
        *state == problem.spec.goal
    }

    /// The goal cannot be reached within the shortest-path length.
    fn is_dead_end(&self, problem: &GridProblem, state: &Pos, depth: usize) -> bool {
        match (problem.goal_distance(*state), problem.optimal) {
            (Some(d), Some(opt)) => depth + d > opt,
            _ => true,
        }
    }

    fn render_action(&self, action: &Move) -> String {
        action.name().to_string()
    }

    fn parse_action(&self, text: &str, problem: &GridProblem, state: &Pos) -> Result<Move, TaskError> {
        let m = Move::parse(text.trim()).ok_or_else(|| TaskError::IllegalAction(text.to_string()))?;
        self.transition(problem, state, &m)?;
        Ok(m)
    }

    fn max_depth(&self, problem: &GridProblem) -> usize {
        problem.optimal.unwrap_or(0)
    }

    fn validate_solution(&self, problem: &GridProblem, path: &[&str]) -> bool {
        match super::replay(self, problem, path) {
            Ok(end) => end == problem.spec.goal && Some(path.len()) == problem.optimal,
            Err(_) => false,
        }
    }

    fn reference_solution(&self, problem: &GridProblem) -> Option<Vec<Move>> {
        problem.spec.shortest_path().ok()
    }

    fn heuristic(&self, problem: &GridProblem, state: &Pos, action: &Move) -> f64 {
        let next = state.step(*action);
        -(next.manhattan(problem.spec.goal) as f64)
    }
}
