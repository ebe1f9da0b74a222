//! Trace-driven iterative repair of generated programs.
//!
//! A session generates code from a problem description, runs it against the
//! task's independent test cases, and while it fails repeats a repair cycle:
//! instrument the code with `DEBUG:` print probes, run it to collect a
//! runtime trace, analyze the trace together with the record of earlier
//! failed attempts, repair the clean code according to the resulting plan,
//! and score the candidate. A rollback state machine keeps the best-scoring
//! program and decides what the next cycle starts from.
//!
//! Model calls go through [`llm::Backend`] and program execution through
//! [`executor::Executor`]; both have deterministic scripted implementations
//! so whole sessions can be reproduced and replayed offline.

pub mod agents;
pub mod batch;
pub mod driver;
pub mod executor;
pub mod lessons;
pub mod llm;
pub mod metrics;
pub mod orchestrator;
pub mod purity;
pub mod rollback;
pub mod runner;
pub mod task;

pub use agents::{AnalysisResult, PromptBundle, Role, Templates};
pub use executor::{Executor, ProcessExecutor, ScriptedCase, ScriptedExecutor};
pub use lessons::{LessonEntry, LessonRecord};
pub use llm::{Backend, ChatExchange, ScriptedBackend};
pub use orchestrator::{debug_session, replay_session, SessionConfig, SessionTranscript};
pub use rollback::{Decision, RepairState, StopReason};
pub use runner::{execute, ExecutionReport, SuiteRunner, TraceRunner, Verdict};
pub use task::{Task, TestCase};
