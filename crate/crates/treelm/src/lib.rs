//! Command-line harness for tree-structured decoding: run configuration,
//! JSON Lines records, dataset generation, the training-data pipeline, an
//! OpenAI-compatible remote model client and experiment evaluation.

pub mod config;
pub mod datasets;
pub mod evaluate;
pub mod pipeline;
pub mod provider;
pub mod records;
pub mod remote;

/// Runs `$body` with `$t` bound to the task value for a
/// [`treelm_core::tasks::TaskKind`].
#[macro_export]
macro_rules! with_task {
    ($kind:expr, $t:ident => $body:expr) => {
        match $kind {
            treelm_core::tasks::TaskKind::Game24 => {
                let $t = treelm_core::tasks::Game24;
                $body
            }
            treelm_core::tasks::TaskKind::Gridworld => {
                let $t = treelm_core::tasks::Gridworld;
                $body
            }
        }
    };
}
