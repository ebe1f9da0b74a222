//! Progress evaluation, promotion, rollback and stagnation accounting.
//!
//! Scores are passed-test counts, so they are unsigned by construction.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairState {
    pub best_code: String,
    pub best_score: usize,
    pub previous_score: usize,
    /// Consecutive attempts that failed to improve `best_score`.
    pub stagnation: usize,
    /// Code the next repair cycle starts from.
    pub next_base: String,
    /// Completed repair cycles; the initial generation is attempt 0.
    pub attempt_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accept,
    Continue,
    Rollback,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Accept => "accept",
            Decision::Continue => "continue",
            Decision::Rollback => "rollback",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    AllTestsPassed,
    MaxAttempts,
    Patience,
    OperationalError,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::AllTestsPassed => "all_tests_passed",
            StopReason::MaxAttempts => "max_attempts",
            StopReason::Patience => "patience",
            StopReason::OperationalError => "operational_error",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Continue,
    Stop(StopReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    pub max_attempts: usize,
    pub patience: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            patience: 3,
        }
    }
}

pub fn init_state(initial_code: &str, initial_score: usize) -> RepairState {
    RepairState {
        best_code: initial_code.to_string(),
        best_score: initial_score,
        previous_score: initial_score,
        stagnation: 0,
        next_base: initial_code.to_string(),
        attempt_index: 0,
    }
}

/// Scores one attempted candidate against the best and previous scores.
pub fn decide(attempted_code: &str, attempted_score: usize, state: &RepairState) -> (Decision, RepairState) {
    let mut next = state.clone();
    let decision = if attempted_score > state.best_score {
        next.best_code = attempted_code.to_string();
        next.best_score = attempted_score;
        next.next_base = attempted_code.to_string();
        next.stagnation = 0;
        Decision::Accept
    } else if attempted_score == state.best_score || attempted_score >= state.previous_score {
        next.next_base = attempted_code.to_string();
        next.stagnation = state.stagnation + 1;
        Decision::Continue
    } else {
        next.next_base = state.best_code.clone();
        next.stagnation = state.stagnation + 1;
        Decision::Rollback
    };
    next.previous_score = attempted_score;
    next.attempt_index = state.attempt_index + 1;
    (decision, next)
}

/// The attempt budget is checked before patience.
pub fn should_terminate(state: &RepairState, limits: &Limits) -> Termination {
    if state.attempt_index >= limits.max_attempts {
        Termination::Stop(StopReason::MaxAttempts)
    } else if state.stagnation >= limits.patience {
        Termination::Stop(StopReason::Patience)
    } else {
        Termination::Continue
    }
}
