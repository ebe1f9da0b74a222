//! Benchmark tasks and their line-delimited JSON on-disk format.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// One independent check against a task's entry point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub case_id: String,
    pub body: String,
}

/// One benchmark problem.
///
/// Fields the loader does not recognise are kept in `extra` and written back
/// on serialization, so converted datasets can carry their own metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    pub prompt: String,
    pub entry_point: String,
    pub test_cases: Vec<TestCase>,
    pub timeout_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_solution: Option<String>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error("cannot read task file {path}: {source}")]
    Unreadable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed JSON: {message}")]
    MalformedJson { line: usize, message: String },
    #[error("line {line}: schema violation: {}", violations.join("; "))]
    Schema { line: usize, violations: Vec<String> },
    #[error("line {line}: duplicate task_id {task_id:?} (first seen on line {first_line})")]
    DuplicateTaskId {
        line: usize,
        first_line: usize,
        task_id: String,
    },
    #[error("cannot write task file: {0}")]
    Write(#[from] std::io::Error),
}

const REQUIRED_FIELDS: [&str; 5] = ["task_id", "prompt", "entry_point", "test_cases", "timeout_s"];

impl Task {
    pub fn case(&self, case_id: &str) -> Option<&TestCase> {
        self.test_cases.iter().find(|c| c.case_id == case_id)
    }
}

/// Lists every invariant the task breaks. An empty list means the task is valid.
pub fn validate_task(task: &Task) -> Vec<String> {
    let mut violations = Vec::new();
    if task.task_id.trim().is_empty() {
        violations.push("task_id empty".to_string());
    }
    if task.entry_point.trim().is_empty() {
        violations.push("entry_point empty".to_string());
    }
    if task.test_cases.is_empty() {
        violations.push("test_cases empty".to_string());
    }
    if !(task.timeout_s.is_finite() && task.timeout_s > 0.0) {
        violations.push("timeout_s must be > 0".to_string());
    }
    let mut seen = HashSet::new();
    for (i, case) in task.test_cases.iter().enumerate() {
        if case.case_id.is_empty() {
            violations.push(format!("test_cases[{i}].case_id empty"));
        } else if !seen.insert(case.case_id.as_str()) {
            violations.push(format!("test_cases[{i}].case_id {:?} duplicated", case.case_id));
        }
        if case.body.trim().is_empty() {
            violations.push(format!("test_cases[{i}].body empty"));
        }
    }
    violations
}

/// Parses a JSONL task set. Any invalid line fails the whole load.
pub fn parse_tasks(content: &str) -> Result<Vec<Task>, TaskError> {
    let mut tasks = Vec::new();
    let mut first_seen: BTreeMap<String, usize> = BTreeMap::new();
    for (idx, raw) in content.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(raw).map_err(|e| TaskError::MalformedJson {
            line,
            message: e.to_string(),
        })?;
        let Some(obj) = value.as_object() else {
            return Err(TaskError::Schema {
                line,
                violations: vec!["expected a JSON object".into()],
            });
        };
        let missing: Vec<String> = REQUIRED_FIELDS
            .iter()
            .filter(|f| !obj.contains_key(**f))
            .map(|f| format!("missing field \"{f}\""))
            .collect();
        if !missing.is_empty() {
            return Err(TaskError::Schema { line, violations: missing });
        }
        let task: Task = serde_json::from_value(value).map_err(|e| TaskError::Schema {
            line,
            violations: vec![e.to_string()],
        })?;
        let violations = validate_task(&task);
        if !violations.is_empty() {
            return Err(TaskError::Schema { line, violations });
        }
        if let Some(&first_line) = first_seen.get(&task.task_id) {
            return Err(TaskError::DuplicateTaskId {
                line,
                first_line,
                task_id: task.task_id,
            });
        }
        first_seen.insert(task.task_id.clone(), line);
        tasks.push(task);
    }
    Ok(tasks)
}

pub fn load_tasks(path: impl AsRef<Path>) -> Result<Vec<Task>, TaskError> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|source| TaskError::Unreadable {
        path: path.display().to_string(),
        source,
    })?;
    parse_tasks(&content)
}

pub fn to_jsonl(tasks: &[Task]) -> String {
    let mut out = String::new();
    for task in tasks {
        out.push_str(&serde_json::to_string(task).expect("task serializes"));
        out.push('\n');
    }
    out
}

pub fn write_tasks(path: impl AsRef<Path>, tasks: &[Task]) -> Result<(), TaskError> {
    let mut file = fs::File::create(path)?;
    file.write_all(to_jsonl(tasks).as_bytes())?;
    Ok(())
}
