//! Instance generation for both tasks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;
use treelm_core::models::fnv1a64;
use treelm_core::tasks::game24::{solvable, Game24};
use treelm_core::tasks::gridworld::{GridProblem, GridworldSpec};
use treelm_core::tasks::{Gridworld, Task, TaskError, TaskKind};

use crate::config::GridGenerator;
use crate::records::Instance;

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("instance {index}: {source}")]
    Task { index: usize, source: TaskError },
    #[error("only {found} of {wanted} instances matched the filter after {draws} draws")]
    GenerationBudgetExceeded { wanted: usize, found: usize, draws: usize },
    #[error("grid sizes {min}..={max} are invalid")]
    BadSizes { min: i32, max: i32 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Filter {
    #[default]
    All,
    Solvable,
    Unsolvable,
}

impl Filter {
    pub fn from_name(s: &str) -> Option<Filter> {
        match s {
            "all" => Some(Filter::All),
            "solvable" => Some(Filter::Solvable),
            "unsolvable" => Some(Filter::Unsolvable),
            _ => None,
        }
    }

    fn keeps(self, solvable: bool) -> bool {
        match self {
            Filter::All => true,
            Filter::Solvable => solvable,
            Filter::Unsolvable => !solvable,
        }
    }
}

/// Game24 instances with four numbers drawn uniformly from 1..=13, tagged
/// with the brute-force solvability check. Draws that do not pass `filter`
/// are discarded; at most `max_draws` numbers are drawn in total.
pub fn game24_instances(
    count: usize,
    seed: u64,
    split: &str,
    filter: Filter,
    max_draws: usize,
) -> Result<Vec<Instance>, DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut draws = 0;
    while out.len() < count {
        if draws == max_draws {
            return Err(DatasetError::GenerationBudgetExceeded { wanted: count, found: out.len(), draws });
        }
        draws += 1;
        let p = Game24::sample_problem(&mut rng);
        let ok = solvable(&p.numbers);
        if !filter.keeps(ok) {
            continue;
        }
        out.push(Instance {
            id: format!("game24-{split}-{:05}", out.len()),
            task: TaskKind::Game24,
            problem: Game24.render_problem(&p),
            solvable: ok,
            split: split.to_string(),
            width: None,
            height: None,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridParams {
    pub min_size: i32,
    pub max_size: i32,
    pub wall_density: f64,
    pub generator: GridGenerator,
    pub max_attempts: usize,
}

/// Gridworld instances whose width and height are drawn independently from
/// `min_size..=max_size`, each with a unique shortest path. Instance `i`
/// depends only on `seed` and `i`.
pub fn gridworld_instances(count: usize, seed: u64, split: &str, params: &GridParams) -> Result<Vec<Instance>, DatasetError> {
    if params.min_size < 2 || params.max_size < params.min_size {
        return Err(DatasetError::BadSizes { min: params.min_size, max: params.max_size });
    }
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(&[&seed.to_le_bytes(), &(i as u64).to_le_bytes()]));
            let w = rng.gen_range(params.min_size..=params.max_size);
            let h = rng.gen_range(params.min_size..=params.max_size);
            let sub = rng.gen::<u64>();
            let spec = match params.generator {
                GridGenerator::Rejection => GridworldSpec::generate(w, h, params.wall_density, sub, params.max_attempts),
                GridGenerator::Repair => GridworldSpec::generate_with_repair(w, h, params.wall_density, sub, params.max_attempts),
            }
            .map_err(|source| DatasetError::Task { index: i, source })?;
            Ok(Instance {
                id: format!("gridworld-{split}-{i:05}"),
                task: TaskKind::Gridworld,
                problem: Gridworld.render_problem(&GridProblem::new(spec)),
                solvable: true,
                split: split.to_string(),
                width: Some(w),
                height: Some(h),
            })
        })
        .collect()
}
