//! Prompt construction and response parsing for the agent roles.
//!
//! Wording lives in plain-text templates with `{{name}}` placeholders; the
//! defaults are compiled in from `templates/` and a directory of overrides
//! can be loaded at runtime.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::task::Task;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Initial,
    Instrument,
    Analyze,
    Repair,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Initial, Role::Instrument, Role::Analyze, Role::Repair];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Initial => "initial",
            Role::Instrument => "instrument",
            Role::Analyze => "analyze",
            Role::Repair => "repair",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub role: Role,
    pub system_text: String,
    pub user_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisResult {
    pub repair_plan: String,
    #[serde(default)]
    pub instrumentation_suggestions: String,
}

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("cannot read template {name}: {source}")]
    Read {
        name: String,
        #[source]
        source: std::io::Error,
    },
    #[error("template {name} lacks placeholder {{{{{placeholder}}}}}")]
    MissingPlaceholder { name: String, placeholder: String },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("model returned a blank response")]
    BlankResponse,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    pub initial_system: String,
    pub initial_user: String,
    pub instrument_system: String,
    pub instrument_user: String,
    pub instrument_suggestions: String,
    pub analyze_system: String,
    pub analyze_user: String,
    pub analyze_no_lessons: String,
    pub repair_system: String,
    pub repair_user: String,
}

impl Default for Templates {
    fn default() -> Self {
        Self {
            initial_system: include_str!("../templates/initial.system.txt").into(),
            initial_user: include_str!("../templates/initial.user.txt").into(),
            instrument_system: include_str!("../templates/instrument.system.txt").into(),
            instrument_user: include_str!("../templates/instrument.user.txt").into(),
            instrument_suggestions: include_str!("../templates/instrument.suggestions.txt").into(),
            analyze_system: include_str!("../templates/analyze.system.txt").into(),
            analyze_user: include_str!("../templates/analyze.user.txt").into(),
            analyze_no_lessons: include_str!("../templates/analyze.no_lessons.txt").into(),
            repair_system: include_str!("../templates/repair.system.txt").into(),
            repair_user: include_str!("../templates/repair.user.txt").into(),
        }
    }
}

const REQUIRED: [(&str, &[&str]); 5] = [
    ("initial.user.txt", &["problem", "entry_point"]),
    ("instrument.user.txt", &["faulty_code", "error_feedback", "suggestions_section"]),
    ("instrument.suggestions.txt", &["suggestions"]),
    ("analyze.user.txt", &["problem", "instrumented_code", "trace", "lessons"]),
    ("repair.user.txt", &["problem", "faulty_code", "error_feedback", "repair_plan"]),
];

impl Templates {
    /// Loads overrides from `dir`; files that are absent keep the built-in text.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, TemplateError> {
        let dir = dir.as_ref();
        let mut t = Self::default();
        let slots: [(&str, &mut String); 10] = [
            ("initial.system.txt", &mut t.initial_system),
            ("initial.user.txt", &mut t.initial_user),
            ("instrument.system.txt", &mut t.instrument_system),
            ("instrument.user.txt", &mut t.instrument_user),
            ("instrument.suggestions.txt", &mut t.instrument_suggestions),
            ("analyze.system.txt", &mut t.analyze_system),
            ("analyze.user.txt", &mut t.analyze_user),
            ("analyze.no_lessons.txt", &mut t.analyze_no_lessons),
            ("repair.system.txt", &mut t.repair_system),
            ("repair.user.txt", &mut t.repair_user),
        ];
        for (name, slot) in slots {
            let path = dir.join(name);
            if path.exists() {
                *slot = fs::read_to_string(&path).map_err(|source| TemplateError::Read {
                    name: name.to_string(),
                    source,
                })?;
            }
        }
        t.check()?;
        Ok(t)
    }

    fn text(&self, name: &str) -> &str {
        match name {
            "initial.user.txt" => &self.initial_user,
            "instrument.user.txt" => &self.instrument_user,
            "instrument.suggestions.txt" => &self.instrument_suggestions,
            "analyze.user.txt" => &self.analyze_user,
            "repair.user.txt" => &self.repair_user,
            _ => "",
        }
    }

    pub fn check(&self) -> Result<(), TemplateError> {
        for (name, placeholders) in REQUIRED {
            for p in placeholders {
                if !self.text(name).contains(&format!("{{{{{p}}}}}")) {
                    return Err(TemplateError::MissingPlaceholder {
                        name: name.to_string(),
                        placeholder: p.to_string(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Single-pass `{{name}}` substitution; substituted values are never rescanned.
/// Unknown placeholders are left as written.
pub fn render(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                let name = &after[..end];
                match values.iter().find(|(k, _)| *k == name) {
                    Some((_, v)) => out.push_str(v),
                    None => {
                        out.push_str("{{");
                        out.push_str(name);
                        out.push_str("}}");
                    }
                }
                rest = &after[end + 2..];
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

fn bundle(role: Role, system: &str, user: String) -> PromptBundle {
    PromptBundle {
        role,
        system_text: system.trim_end().to_string(),
        user_text: user,
    }
}

/// Built from the problem description alone; test bodies are never shown.
pub fn build_initial_prompt(templates: &Templates, task: &Task) -> PromptBundle {
    let user = render(
        &templates.initial_user,
        &[("problem", task.prompt.trim_end()), ("entry_point", &task.entry_point)],
    );
    bundle(Role::Initial, &templates.initial_system, user)
}

pub fn build_instrumentation_prompt(
    templates: &Templates,
    faulty_code: &str,
    error_feedback: &str,
    suggestions: &str,
) -> PromptBundle {
    let section = if suggestions.trim().is_empty() {
        String::new()
    } else {
        render(&templates.instrument_suggestions, &[("suggestions", suggestions.trim_end())])
    };
    let user = render(
        &templates.instrument_user,
        &[
            ("faulty_code", faulty_code.trim_end()),
            ("error_feedback", error_feedback.trim_end()),
            ("suggestions_section", &section),
        ],
    );
    bundle(Role::Instrument, &templates.instrument_system, user)
}

pub fn build_analysis_prompt(
    templates: &Templates,
    task: &Task,
    instrumented_code: &str,
    trace: &str,
    lessons: &str,
) -> PromptBundle {
    let lessons = if lessons.trim().is_empty() {
        templates.analyze_no_lessons.trim_end()
    } else {
        lessons.trim_end()
    };
    let user = render(
        &templates.analyze_user,
        &[
            ("problem", task.prompt.trim_end()),
            ("instrumented_code", instrumented_code.trim_end()),
            ("trace", trace.trim_end()),
            ("lessons", lessons),
        ],
    );
    bundle(Role::Analyze, &templates.analyze_system, user)
}

pub fn build_repair_prompt(
    templates: &Templates,
    task: &Task,
    faulty_code: &str,
    error_feedback: &str,
    plan: &str,
) -> PromptBundle {
    let user = render(
        &templates.repair_user,
        &[
            ("problem", task.prompt.trim_end()),
            ("faulty_code", faulty_code.trim_end()),
            ("error_feedback", error_feedback.trim_end()),
            ("repair_plan", plan.trim_end()),
        ],
    );
    bundle(Role::Repair, &templates.repair_system, user)
}

/// Contents of every fenced block, in order. An unterminated final fence
/// runs to the end of the text.
fn fenced_blocks(text: &str) -> Vec<(String, String)> {
    let mut blocks = Vec::new();
    let mut current: Option<(String, Vec<&str>)> = None;
    for line in text.split('\n') {
        let trimmed = line.trim_start();
        let is_fence = trimmed.starts_with("```");
        match (&mut current, is_fence) {
            (None, true) => {
                let info = trimmed.trim_start_matches('`').trim().to_string();
                current = Some((info, Vec::new()));
            }
            (Some(_), true) => {
                let (info, lines) = current.take().expect("open block");
                blocks.push((info, lines.join("\n")));
            }
            (Some((_, lines)), false) => lines.push(line.strip_suffix('\r').unwrap_or(line)),
            (None, false) => {}
        }
    }
    if let Some((info, lines)) = current {
        blocks.push((info, lines.join("\n")));
    }
    blocks
}

/// The last non-blank fenced block, or the whole trimmed response when there is none.
pub fn parse_code_response(response: &str) -> Result<String, ParseError> {
    if response.trim().is_empty() {
        return Err(ParseError::BlankResponse);
    }
    let code = fenced_blocks(response)
        .into_iter()
        .rev()
        .map(|(_, body)| body)
        .find(|body| !body.trim().is_empty())
        .unwrap_or_else(|| response.trim().to_string());
    Ok(code)
}

#[derive(Deserialize)]
struct RawAnalysis {
    repair_plan: Option<String>,
    #[serde(default)]
    instrumentation_suggestions: Option<String>,
}

fn analysis_from_json(text: &str) -> Option<AnalysisResult> {
    let raw: RawAnalysis = serde_json::from_str(text.trim()).ok()?;
    let plan = raw.repair_plan?;
    if plan.trim().is_empty() {
        return None;
    }
    Some(AnalysisResult {
        repair_plan: plan,
        instrumentation_suggestions: raw.instrumentation_suggestions.unwrap_or_default(),
    })
}

/// Reads the last fenced JSON object; otherwise the whole text is the plan.
pub fn parse_analysis_response(response: &str) -> Result<AnalysisResult, ParseError> {
    if response.trim().is_empty() {
        return Err(ParseError::BlankResponse);
    }
    let parsed = fenced_blocks(response)
        .iter()
        .rev()
        .find_map(|(_, body)| analysis_from_json(body))
        .or_else(|| analysis_from_json(response));
    Ok(parsed.unwrap_or_else(|| AnalysisResult {
        repair_plan: response.trim().to_string(),
        instrumentation_suggestions: String::new(),
    }))
}
