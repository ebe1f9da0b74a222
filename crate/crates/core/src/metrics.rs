//! Pass@k, failure taxonomy breakdowns and the aggregated run report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::llm::{aggregate_usage, round_ratio_2dp, UsageSummary};
use crate::orchestrator::{FinalStatus, SessionConfig, SessionTranscript};
use crate::rollback::StopReason;
use crate::runner::{classify_failure, FailureClass};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("no results to score")]
    Empty,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("task {task} has {have} samples, fewer than k = {k}")]
    TooFewSamples { task: usize, have: usize, k: usize },
}

/// `part / whole` as a percentage rounded to two decimals.
pub fn percent(part: usize, whole: usize) -> f64 {
    round_ratio_2dp(part as u64 * 100, whole as u64)
}

pub fn pass_at_1(solved: &[bool]) -> Result<f64, MetricError> {
    if solved.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(percent(solved.iter().filter(|s| **s).count(), solved.len()))
}

/// Literal at-least-one-of-the-first-k counting (not the unbiased estimator).
pub fn pass_at_k(samples: &[Vec<bool>], k: usize) -> Result<f64, MetricError> {
    if samples.is_empty() {
        return Err(MetricError::Empty);
    }
    if k == 0 {
        return Err(MetricError::ZeroK);
    }
    let mut solved = 0;
    for (task, s) in samples.iter().enumerate() {
        if s.len() < k {
            return Err(MetricError::TooFewSamples { task, have: s.len(), k });
        }
        if s[..k].iter().any(|x| *x) {
            solved += 1;
        }
    }
    Ok(percent(solved, samples.len()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    #[serde(rename = "PASS")]
    pub pass: usize,
    #[serde(rename = "RE")]
    pub runtime_error: usize,
    #[serde(rename = "WA")]
    pub wrong_answer: usize,
    #[serde(rename = "TLE")]
    pub time_limit: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassShares {
    #[serde(rename = "PASS")]
    pub pass: f64,
    #[serde(rename = "RE")]
    pub runtime_error: f64,
    #[serde(rename = "WA")]
    pub wrong_answer: f64,
    #[serde(rename = "TLE")]
    pub time_limit: f64,
}

impl ClassShares {
    pub fn sum(&self) -> f64 {
        self.pass + self.runtime_error + self.wrong_answer + self.time_limit
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub counts: ClassCounts,
    /// Exact fractions of classified tasks.
    pub fractions: ClassShares,
    /// The same, as percentages rounded to two decimals.
    pub percents: ClassShares,
    /// Transcripts without a final execution (operational errors before the
    /// first run); not part of the denominator.
    pub unclassified: usize,
}

pub fn breakdown_from_classes(classes: impl IntoIterator<Item = FailureClass>) -> Breakdown {
    let mut counts = ClassCounts::default();
    for class in classes {
        match class {
            FailureClass::Pass => counts.pass += 1,
            FailureClass::RuntimeError => counts.runtime_error += 1,
            FailureClass::WrongAnswer => counts.wrong_answer += 1,
            FailureClass::TimeLimitExceeded => counts.time_limit += 1,
        }
    }
    let total = counts.pass + counts.runtime_error + counts.wrong_answer + counts.time_limit;
    let (fractions, percents) = if total == 0 {
        (ClassShares::default(), ClassShares::default())
    } else {
        let frac = |n: usize| n as f64 / total as f64;
        (
            ClassShares {
                pass: frac(counts.pass),
                runtime_error: frac(counts.runtime_error),
                wrong_answer: frac(counts.wrong_answer),
                time_limit: frac(counts.time_limit),
            },
            ClassShares {
                pass: percent(counts.pass, total),
                runtime_error: percent(counts.runtime_error, total),
                wrong_answer: percent(counts.wrong_answer, total),
                time_limit: percent(counts.time_limit, total),
            },
        )
    };
    Breakdown {
        counts,
        fractions,
        percents,
        unclassified: 0,
    }
}

/// Classifies each transcript by the execution of its final code.
pub fn transcript_class(t: &SessionTranscript) -> Option<FailureClass> {
    if t.final_status == FinalStatus::Solved {
        return Some(FailureClass::Pass);
    }
    t.final_execution.as_ref().map(classify_failure)
}

pub fn failure_breakdown(transcripts: &[SessionTranscript]) -> Breakdown {
    let classes: Vec<Option<FailureClass>> = transcripts.iter().map(transcript_class).collect();
    let mut b = breakdown_from_classes(classes.iter().flatten().copied());
    b.unclassified = classes.iter().filter(|c| c.is_none()).count();
    b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task_id: String,
    pub final_status: FinalStatus,
    pub stop_reason: StopReason,
    pub iterations: usize,
    pub class: Option<FailureClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub task_count: usize,
    pub pass_at_1: f64,
    pub breakdown: Breakdown,
    pub stop_reasons: BTreeMap<String, usize>,
    pub usage: UsageSummary,
    pub configs: Vec<SessionConfig>,
    pub tasks: Vec<TaskSummary>,
}

/// Pure function of the transcripts; tasks are listed sorted by id.
pub fn run_report(transcripts: &[SessionTranscript]) -> Result<RunReport, MetricError> {
    if transcripts.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut sorted: Vec<&SessionTranscript> = transcripts.iter().collect();
    sorted.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    let solved: Vec<bool> = sorted.iter().map(|t| t.is_solved()).collect();
    let mut stop_reasons = BTreeMap::new();
    for t in &sorted {
        *stop_reasons.entry(t.stop_reason.to_string()).or_insert(0) += 1;
    }
    let mut configs: Vec<SessionConfig> = Vec::new();
    for t in &sorted {
        if !configs.contains(&t.config) {
            configs.push(t.config);
        }
    }
    let usage = aggregate_usage(sorted.iter().flat_map(|t| t.exchanges()), sorted.len()).expect("non-empty");
    Ok(RunReport {
        task_count: sorted.len(),
        pass_at_1: pass_at_1(&solved)?,
        breakdown: failure_breakdown(transcripts),
        stop_reasons,
        usage,
        configs,
        tasks: sorted
            .iter()
            .map(|t| TaskSummary {
                task_id: t.task_id.clone(),
                final_status: t.final_status,
                stop_reason: t.stop_reason,
                iterations: t.iterations.len(),
                class: transcript_class(t),
            })
            .collect(),
    })
}
