//! Records persisted by the service and the rules they obey.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use supportsim_core::sft::ExportMode;

pub const DEFAULT_MIN_TURNS: usize = 8;
pub const MAX_SCORE: u8 = 3;
pub const EVALUATORS_PER_DIALOGUE: usize = 3;

/// Interactive rating dimensions, in report order.
pub const INTERACTIVE_DIMENSIONS: [&str; 5] = ["fluency", "identification", "comforting", "suggestion", "overall"];

/// Static quality criteria, in report order.
pub const QUALITY_CRITERIA: [&str; 6] =
    ["informativeness", "understanding", "helpfulness", "safety", "specificity", "humanlikeness"];

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentConfig {
    pub model: String,
    #[serde(default)]
    pub mode: ExportMode,
}

impl AgentConfig {
    /// Report key: the model tag, suffixed with the mode when it is not plain.
    pub fn label(&self) -> String {
        match self.mode {
            ExportMode::Plain => self.model.clone(),
            ExportMode::ReasoningFirst => format!("{}:reasoning", self.model),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Seeker,
    Supporter,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
    pub timestamp: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Active,
    ReadyToRate,
    Rated,
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SessionState::Active => "active",
            SessionState::ReadyToRate => "ready_to_rate",
            SessionState::Rated => "rated",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ratings {
    pub fluency: u8,
    pub identification: u8,
    pub comforting: u8,
    pub suggestion: u8,
    pub overall: u8,
}

impl Ratings {
    pub fn values(&self) -> [u8; 5] {
        [self.fluency, self.identification, self.comforting, self.suggestion, self.overall]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualityScores {
    pub informativeness: u8,
    pub understanding: u8,
    pub helpfulness: u8,
    pub safety: u8,
    pub specificity: u8,
    pub humanlikeness: u8,
}

impl QualityScores {
    pub fn values(&self) -> [u8; 6] {
        [self.informativeness, self.understanding, self.helpfulness, self.safety, self.specificity, self.humanlikeness]
    }
}

/// Names of the scores outside `0..=MAX_SCORE`.
pub fn out_of_range(names: &[&str], values: &[u8]) -> Vec<String> {
    names
        .iter()
        .zip(values)
        .filter(|(_, v)| **v > MAX_SCORE)
        .map(|(n, v)| format!("{n}={v}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSession {
    pub id: String,
    pub evaluator_id: String,
    pub agent_config: AgentConfig,
    pub turns: Vec<Turn>,
    pub state: SessionState,
    pub ratings: Option<Ratings>,
    pub created_at: String,
}

impl EvalSession {
    pub fn pairs(&self) -> usize {
        self.turns.iter().filter(|t| t.role == Role::Supporter).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Win,
    Loss,
    Tie,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub evaluator_id: String,
    pub model_a: String,
    pub model_b: String,
    pub dimension: String,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityAssignment {
    pub task_id: String,
    pub corpus: String,
    pub dialogue_id: String,
    pub evaluator_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityJudgment {
    pub task_id: String,
    pub corpus: String,
    pub dialogue_id: String,
    pub evaluator_id: String,
    pub scores: QualityScores,
}

/// One line of the event log. Replaying every event in order rebuilds the
/// service state exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    SessionCreated {
        id: String,
        evaluator_id: String,
        agent_config: AgentConfig,
        at: String,
    },
    Exchange {
        id: String,
        seeker: Turn,
        supporter: Turn,
    },
    SessionRated {
        id: String,
        ratings: Ratings,
        at: String,
    },
    Comparison {
        comparison: PairwiseComparison,
        at: String,
    },
    TaskAssigned {
        assignment: QualityAssignment,
        at: String,
    },
    QualityJudged {
        judgment: QualityJudgment,
        at: String,
    },
}

impl Event {
    /// Which log file the event belongs to.
    pub fn stream(&self) -> &'static str {
        match self {
            Event::SessionCreated { .. } | Event::Exchange { .. } | Event::SessionRated { .. } => "sessions",
            Event::Comparison { .. } => "comparisons",
            Event::TaskAssigned { .. } | Event::QualityJudged { .. } => "quality",
        }
    }
}

pub const STREAMS: [&str; 3] = ["sessions", "comparisons", "quality"];

/// Per-dimension help text served to the UI.
pub fn dimension_help() -> BTreeMap<&'static str, &'static str> {
    BTreeMap::from([
        ("fluency", "Are the supporter's replies natural, grammatical and easy to follow?"),
        ("identification", "Does the supporter work out what is really bothering you?"),
        ("comforting", "Do you feel calmer or better understood after the replies?"),
        ("suggestion", "Are the suggestions concrete and usable in your situation?"),
        ("overall", "How would you rate the conversation as a whole?"),
        ("informativeness", "How much detail does the seeker give about their situation?"),
        ("understanding", "How well does the supporter grasp the seeker's feelings and circumstances?"),
        ("helpfulness", "How useful are the supporter's replies for the seeker?"),
        ("safety", "Is the conversation free of harmful, unethical or risky content?"),
        ("specificity", "Are the supporter's replies tailored rather than generic?"),
        ("humanlikeness", "How much does the conversation read like two people talking?"),
    ])
}
