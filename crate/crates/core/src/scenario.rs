//! Help-seeking scenarios and the safety / informativeness filter applied
//! before persona construction.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::word_count;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub topic: String,
    #[serde(default)]
    pub subtopics: Vec<String>,
    pub question: String,
    pub description: String,
    #[serde(default)]
    pub source: String,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed scenario: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: invalid scenario: {message}")]
    Validation { line: usize, message: String },
}

impl Scenario {
    fn check(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        if self.question.trim().is_empty() {
            return Err(format!("scenario {} has an empty question", self.id));
        }
        if self.description.trim().is_empty() {
            return Err(format!("scenario {} has an empty description", self.id));
        }
        if self.subtopics.len() > 3 {
            return Err(format!(
                "scenario {} has {} subtopics (at most 3)",
                self.id,
                self.subtopics.len()
            ));
        }
        Ok(())
    }
}

/// Reads a JSON Lines scenario file. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn load_scenarios(path: impl AsRef<Path>) -> Result<Vec<Scenario>, ScenarioError> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenarios(&raw)
}

pub fn parse_scenarios(raw: &str) -> Result<Vec<Scenario>, ScenarioError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let scenario: Scenario = serde_json::from_str(line).map_err(|e| ScenarioError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        scenario.check().map_err(|message| ScenarioError::Validation { line: line_no, message })?;
        if !seen.insert(scenario.id.clone()) {
            return Err(ScenarioError::Validation {
                line: line_no,
                message: format!("duplicate id {}", scenario.id),
            });
        }
        out.push(scenario);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub blocked_topics: BTreeSet<String>,
    pub min_description_words: usize,
}

pub const DEFAULT_MIN_DESCRIPTION_WORDS: usize = 65;

/// Keyword stems for suicide, racial discrimination and professional medical
/// treatment topics.
pub const DEFAULT_BLOCKED_TOPICS: [&str; 3] = ["suicid", "racial", "medical"];

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            blocked_topics: DEFAULT_BLOCKED_TOPICS.iter().map(|s| s.to_string()).collect(),
            min_description_words: DEFAULT_MIN_DESCRIPTION_WORDS,
        }
    }
}

impl FilterConfig {
    /// Adds blocked keywords, lowercasing them.
    pub fn block<I, S>(mut self, keywords: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        for kw in keywords {
            let kw = kw.as_ref().trim().to_lowercase();
            if !kw.is_empty() {
                self.blocked_topics.insert(kw);
            }
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum RejectReason {
    TopicBlock { keyword: String, matched: String },
    Length { words: usize, min: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejected {
    pub scenario: Scenario,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilterOutcome {
    pub kept: Vec<Scenario>,
    pub rejected: Vec<Rejected>,
}

fn rejection(s: &Scenario, cfg: &FilterConfig) -> Option<RejectReason> {
    let labels = std::iter::once(&s.topic).chain(s.subtopics.iter());
    for label in labels {
        let lowered = label.to_lowercase();
        if let Some(kw) = cfg.blocked_topics.iter().find(|kw| lowered.contains(kw.as_str())) {
            return Some(RejectReason::TopicBlock {
                keyword: kw.clone(),
                matched: label.clone(),
            });
        }
    }
    let words = word_count(&s.description);
    if words < cfg.min_description_words {
        return Some(RejectReason::Length {
            words,
            min: cfg.min_description_words,
        });
    }
    None
}

/// Partitions scenarios into kept and rejected, preserving input order in both.
pub fn filter_scenarios(scenarios: &[Scenario], cfg: &FilterConfig) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    for s in scenarios {
        match rejection(s, cfg) {
            None => out.kept.push(s.clone()),
            Some(reason) => out.rejected.push(Rejected {
                scenario: s.clone(),
                reason,
            }),
        }
    }
    out
}
