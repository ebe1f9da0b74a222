//! Batch evaluation over task sets: sessions, purity studies and
//! hyperparameter sweeps.
//!
//! With the `parallel` feature (on by default) tasks are spread over a rayon
//! pool; without it, or with `jobs == 1`, they run one after another. Output
//! order always follows input order.

use serde::{Deserialize, Serialize};

use crate::agents::Templates;
use crate::llm::{aggregate_usage, round_ratio_2dp, Backend};
use crate::metrics::pass_at_1;
use crate::orchestrator::{debug_session, SessionConfig, SessionTranscript};
use crate::runner::SuiteRunner;
use crate::task::Task;

pub fn map_sequential<T, R>(items: &[T], f: impl Fn(&T) -> R) -> Vec<R> {
    items.iter().map(f).collect()
}

/// `jobs == 0` uses rayon's default thread count.
#[cfg(feature = "parallel")]
pub fn map_parallel<T, R>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync + Send) -> Vec<R>
where
    T: Sync,
    R: Send,
{
    use rayon::prelude::*;
    if jobs == 1 || items.len() < 2 {
        return map_sequential(items, f);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .expect("thread pool");
    pool.install(|| items.par_iter().map(f).collect())
}

#[cfg(not(feature = "parallel"))]
pub fn map_parallel<T, R>(items: &[T], _jobs: usize, f: impl Fn(&T) -> R + Sync + Send) -> Vec<R>
where
    T: Sync,
    R: Send,
{
    map_sequential(items, f)
}

/// Produces the backend a given task's session talks to.
pub type BackendFactory<'a> = dyn Fn(&Task) -> Box<dyn Backend> + Sync + 'a;

pub fn run_tasks(
    tasks: &[Task],
    config: &SessionConfig,
    templates: &Templates,
    backends: &BackendFactory<'_>,
    runner: &dyn SuiteRunner,
    jobs: usize,
) -> Vec<SessionTranscript> {
    map_parallel(tasks, jobs, |task| {
        let backend = backends(task);
        debug_session(task, config, templates, backend.as_ref(), runner)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub max_attempts: usize,
    pub patience: usize,
    pub pass_at_1: f64,
    pub avg_iterations: f64,
    pub avg_prompt_tokens: f64,
    pub avg_completion_tokens: f64,
}

/// Runs the task set once per (max_attempts, patience) grid point.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    tasks: &[Task],
    base: &SessionConfig,
    attempts_grid: &[usize],
    patience_grid: &[usize],
    templates: &Templates,
    backends: &BackendFactory<'_>,
    runner: &dyn SuiteRunner,
    jobs: usize,
) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for &max_attempts in attempts_grid {
        for &patience in patience_grid {
            let config = SessionConfig {
                max_attempts,
                patience,
                ..*base
            };
            let transcripts = run_tasks(tasks, &config, templates, backends, runner, jobs);
            let solved: Vec<bool> = transcripts.iter().map(SessionTranscript::is_solved).collect();
            let iterations: usize = transcripts.iter().map(|t| t.iterations.len()).sum();
            let usage = aggregate_usage(transcripts.iter().flat_map(|t| t.exchanges()), tasks.len().max(1))
                .expect("non-zero count");
            rows.push(SweepRow {
                max_attempts,
                patience,
                pass_at_1: pass_at_1(&solved).unwrap_or(0.0),
                avg_iterations: round_ratio_2dp(iterations as u64, tasks.len().max(1) as u64),
                avg_prompt_tokens: usage.avg_prompt_tokens,
                avg_completion_tokens: usage.avg_completion_tokens,
            });
        }
    }
    rows
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = String::from("max_attempts\tpatience\tpass@1\tavg_iterations\tavg_in_tokens\tavg_out_tokens\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{:.2}\t{:.2}\t{:.2}\t{:.2}\n",
            r.max_attempts, r.patience, r.pass_at_1, r.avg_iterations, r.avg_prompt_tokens, r.avg_completion_tokens
        ));
    }
    out
}
