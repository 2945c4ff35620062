//! Supervised fine-tuning records: one per supporter turn, either the bare
//! response or the reasoning block followed by the response.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::{Dialogue, Speaker};
use crate::reasoning::{render_reasoning_with, Node, NodeMask, ReasoningError};

/// Line between the reasoning block and the response.
pub const RESPONSE_SENTINEL: &str = "### RESPONSE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportMode {
    #[default]
    Plain,
    #[serde(alias = "reasoning")]
    ReasoningFirst,
}

impl fmt::Display for ExportMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExportMode::Plain => "plain",
            ExportMode::ReasoningFirst => "reasoning",
        })
    }
}

impl FromStr for ExportMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "plain" => Ok(ExportMode::Plain),
            "reasoning" | "reasoning_first" | "reasoning-first" => Ok(ExportMode::ReasoningFirst),
            other => Err(format!("unknown export mode {other:?} (expected plain or reasoning)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExportConfig {
    pub mode: ExportMode,
    /// Only used by `ReasoningFirst`.
    pub node_mask: NodeMask,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    /// Every utterance before the target turn: seeker as `user`, supporter
    /// as `assistant`.
    pub messages: Vec<SftMessage>,
    pub target: String,
    pub dialogue_id: String,
    pub turn_index: usize,
    pub mode: ExportMode,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExportError {
    #[error("{dialogue_id} turn {turn_index}: missing {node} node required by the mask")]
    MissingNode { dialogue_id: String, turn_index: usize, node: Node },
    #[error("{dialogue_id} turn {turn_index}: {source}")]
    Render {
        dialogue_id: String,
        turn_index: usize,
        #[source]
        source: ReasoningError,
    },
    #[error("{dialogue_id} turn {turn_index}: supporter turn is not preceded by a seeker utterance")]
    NoSeekerContext { dialogue_id: String, turn_index: usize },
    #[error("{dialogue_id} turn {turn_index}: empty supporter text")]
    EmptyTarget { dialogue_id: String, turn_index: usize },
}

fn role(s: Speaker) -> &'static str {
    match s {
        Speaker::Seeker => "user",
        Speaker::Supporter => "assistant",
    }
}

/// Target text for `ReasoningFirst` given a rendered reasoning block.
pub fn join_target(reasoning: &str, response: &str) -> String {
    if reasoning.is_empty() {
        format!("{RESPONSE_SENTINEL}\n{response}")
    } else {
        format!("{reasoning}\n{RESPONSE_SENTINEL}\n{response}")
    }
}

/// Inverse of [`join_target`]: the response after the sentinel line.
pub fn strip_reasoning(target: &str) -> &str {
    let line = format!("{RESPONSE_SENTINEL}\n");
    target
        .match_indices(&line)
        .find(|(i, _)| *i == 0 || target[..*i].ends_with('\n'))
        .map_or(target, |(i, _)| &target[i + line.len()..])
}

fn export_dialogue(d: &Dialogue, cfg: ExportConfig) -> Result<Vec<SftRecord>, ExportError> {
    let mut out = Vec::new();
    for (pos, u) in d.utterances.iter().enumerate() {
        if u.speaker != Speaker::Supporter {
            continue;
        }
        let turn_index = u.index;
        let err_ctx = || (d.id.clone(), turn_index);
        if pos == 0 || d.utterances[pos - 1].speaker != Speaker::Seeker {
            let (dialogue_id, turn_index) = err_ctx();
            return Err(ExportError::NoSeekerContext { dialogue_id, turn_index });
        }
        let response = u.text.trim();
        if response.is_empty() {
            let (dialogue_id, turn_index) = err_ctx();
            return Err(ExportError::EmptyTarget { dialogue_id, turn_index });
        }
        let target = match cfg.mode {
            ExportMode::Plain => response.to_string(),
            ExportMode::ReasoningFirst => {
                let chain = u.reasoning.clone().unwrap_or_default();
                if let Some(&node) = chain.missing_nodes(cfg.node_mask).first() {
                    let (dialogue_id, turn_index) = err_ctx();
                    return Err(ExportError::MissingNode { dialogue_id, turn_index, node });
                }
                let block = render_reasoning_with(&chain, cfg.node_mask).map_err(|source| {
                    let (dialogue_id, turn_index) = err_ctx();
                    ExportError::Render { dialogue_id, turn_index, source }
                })?;
                join_target(&block, response)
            }
        };
        let messages = d.utterances[..pos]
            .iter()
            .map(|c| SftMessage { role: role(c.speaker).into(), content: c.text.clone() })
            .collect();
        out.push(SftRecord { messages, target, dialogue_id: d.id.clone(), turn_index, mode: cfg.mode });
    }
    Ok(out)
}

/// One record per supporter turn, ordered by dialogue id then turn index.
pub fn export_sft(corpus: &[Dialogue], cfg: ExportConfig) -> Result<Vec<SftRecord>, ExportError> {
    let per: Vec<Vec<SftRecord>> = corpus.par_iter().map(|d| export_dialogue(d, cfg)).collect::<Result<_, _>>()?;
    let mut records: Vec<SftRecord> = per.into_iter().flatten().collect();
    records.sort_by(|a, b| a.dialogue_id.cmp(&b.dialogue_id).then(a.turn_index.cmp(&b.turn_index)));
    Ok(records)
}
