//! Per-task record of failed repair attempts and its rendering for analysis.

use serde::{Deserialize, Serialize};

use crate::runner::ExecResult;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LessonEntry {
    pub attempt_index: usize,
    pub repair_plan: String,
    pub error_feedback: String,
    pub repaired_code: String,
    pub passed_count: usize,
}

/// Lessons are scoped to one task and never shared across tasks or sessions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LessonRecord {
    pub task_id: String,
    /// Number of test cases in the task, used for "passed x/y" labels.
    pub total_cases: usize,
    pub entries: Vec<LessonEntry>,
}

/// Context of one attempt as handed over by the loop. All of plan, feedback,
/// code and score must be present when the attempt failed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AttemptMessage {
    /// Defaults to one past the last recorded attempt.
    pub attempt_index: Option<usize>,
    pub repair_plan: Option<String>,
    pub error_feedback: Option<String>,
    pub repaired_code: Option<String>,
    pub passed_count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LessonError {
    #[error("failed attempt is missing field {0}")]
    MissingField(&'static str),
    #[error("attempt index {got} does not follow {last}")]
    OutOfOrder { got: usize, last: usize },
}

impl LessonRecord {
    pub fn new(task_id: impl Into<String>, total_cases: usize) -> Self {
        Self {
            task_id: task_id.into(),
            total_cases,
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn record_outcome(
    record: &LessonRecord,
    result: ExecResult,
    message: &AttemptMessage,
) -> Result<LessonRecord, LessonError> {
    if result == ExecResult::Success {
        return Ok(record.clone());
    }
    let last = record.entries.last().map_or(0, |e| e.attempt_index);
    let attempt_index = message.attempt_index.unwrap_or(last + 1);
    if attempt_index <= last || attempt_index == 0 {
        return Err(LessonError::OutOfOrder { got: attempt_index, last });
    }
    let field = |v: &Option<String>, name| v.clone().ok_or(LessonError::MissingField(name));
    let entry = LessonEntry {
        attempt_index,
        repair_plan: field(&message.repair_plan, "repair_plan")?,
        error_feedback: field(&message.error_feedback, "error_feedback")?,
        repaired_code: field(&message.repaired_code, "repaired_code")?,
        passed_count: message.passed_count.ok_or(LessonError::MissingField("passed_count"))?,
    };
    let mut updated = record.clone();
    updated.entries.push(entry);
    Ok(updated)
}

/// Entries that always render in full once the budget is exceeded.
pub const RECENT_FULL: usize = 5;
const ERROR_EXCERPT_CHARS: usize = 600;
const SUMMARY_PLAN_CHARS: usize = 80;
const MIN_BLOCK_CHARS: usize = 80;

fn truncate_chars(text: &str, max: usize) -> String {
    if text.chars().count() <= max {
        return text.to_string();
    }
    let mut out: String = text.chars().take(max.saturating_sub(1)).collect();
    out.push('…');
    out
}

fn first_sentence(text: &str) -> &str {
    let line = text.trim().lines().next().unwrap_or("");
    match line.find(". ") {
        Some(i) => &line[..=i],
        None => line,
    }
}

fn full_block(entry: &LessonEntry, total: usize) -> String {
    format!(
        "Attempt {} (passed {}/{})\nPlan: {}\nError feedback: {}\n",
        entry.attempt_index,
        entry.passed_count,
        total,
        entry.repair_plan.trim(),
        truncate_chars(entry.error_feedback.trim(), ERROR_EXCERPT_CHARS),
    )
}

fn summary_line(entry: &LessonEntry, total: usize) -> String {
    format!(
        "Attempt {}: {} (passed {}/{})\n",
        entry.attempt_index,
        truncate_chars(first_sentence(&entry.repair_plan), SUMMARY_PLAN_CHARS),
        entry.passed_count,
        total,
    )
}

/// Renders the record chronologically. Over budget, all but the most recent
/// [`RECENT_FULL`] entries collapse to one summary line each; if that still
/// does not fit, the full blocks are clipped to share what is left.
pub fn render_lessons(record: &LessonRecord, budget: usize) -> String {
    if record.is_empty() {
        return String::new();
    }
    let total = record.total_cases;
    let blocks: Vec<String> = record.entries.iter().map(|e| full_block(e, total)).collect();
    let full: String = blocks.join("\n");
    if full.chars().count() <= budget {
        return full;
    }

    let split = record.entries.len().saturating_sub(RECENT_FULL);
    let summaries: String = record.entries[..split]
        .iter()
        .map(|e| summary_line(e, total))
        .collect();
    let recent = &blocks[split..];
    let mut out = summaries.clone();
    if !out.is_empty() {
        out.push('\n');
    }
    let recent_text = recent.join("\n");
    if out.chars().count() + recent_text.chars().count() <= budget {
        out.push_str(&recent_text);
        return out;
    }
    let remaining = budget.saturating_sub(out.chars().count());
    let share = (remaining / recent.len()).max(MIN_BLOCK_CHARS);
    let clipped: Vec<String> = recent
        .iter()
        .map(|b| {
            let mut clipped = truncate_chars(b.trim_end(), share.saturating_sub(2));
            clipped.push('\n');
            clipped
        })
        .collect();
    out.push_str(&clipped.join("\n"));
    out
}
