//! Supporter agents that answer seekers in interactive sessions.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use supportsim_core::dialogue::{sha256_hex, Dialogue};
use supportsim_core::gateway::{ChatGateway, ChatMessage, ChatRequest, GatewayConfig, GatewayError, HttpGateway};
use supportsim_core::sft::{strip_reasoning, ExportMode, RESPONSE_SENTINEL};
use supportsim_core::storage::{read_corpus, Schema, StorageError};
use thiserror::Error;

use crate::model::{Role, Turn};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("gateway: {0}")]
    Gateway(#[from] GatewayError),
    #[error("replay corpus has no supporter turns")]
    EmptyReplay,
}

impl AgentError {
    pub fn is_retryable(&self) -> bool {
        match self {
            AgentError::Gateway(e) => e.is_retryable(),
            AgentError::EmptyReplay => false,
        }
    }
}

pub trait Agent: Send + Sync {
    /// The supporter reply to `seeker_text` given the earlier turns.
    fn reply(&self, session_id: &str, mode: ExportMode, history: &[Turn], seeker_text: &str) -> Result<String, AgentError>;
}

const SYSTEM_PROMPT: &str = "You are a warm, patient emotional-support companion talking with someone who is going through a hard time. \
Ask about their situation before offering advice, reflect their feelings, and give concrete, practical suggestions when they are ready. \
Keep each reply under 40 words.";

fn reasoning_instruction() -> String {
    format!(
        "Before each reply, reason step by step using the markers [SEEKER'S SITUATION], [SEEKER'S THOUGHT], [SEEKER'S ACTION] and \
[SUPPORTER'S STRATEGY]. Then write a line containing only {RESPONSE_SENTINEL} followed by the reply itself."
    )
}

/// Calls a chat model with the running conversation.
pub struct GatewayAgent {
    pub model: String,
    pub temperature: f64,
    pub gateway: Arc<dyn ChatGateway + Send + Sync>,
}

impl GatewayAgent {
    pub fn request(&self, mode: ExportMode, history: &[Turn], seeker_text: &str) -> ChatRequest {
        let mut system = SYSTEM_PROMPT.to_string();
        if mode == ExportMode::ReasoningFirst {
            system.push(' ');
            system.push_str(&reasoning_instruction());
        }
        let mut messages = vec![ChatMessage::system(system)];
        for t in history {
            messages.push(match t.role {
                Role::Seeker => ChatMessage::user(t.text.clone()),
                Role::Supporter => ChatMessage::assistant(t.text.clone()),
            });
        }
        messages.push(ChatMessage::user(seeker_text));
        let mut req = ChatRequest::new(self.model.clone(), messages);
        req.temperature = self.temperature;
        req.max_tokens = 1024;
        req
    }
}

impl Agent for GatewayAgent {
    fn reply(&self, session_id: &str, mode: ExportMode, history: &[Turn], seeker_text: &str) -> Result<String, AgentError> {
        let req = self.request(mode, history, seeker_text).tagged(format!("session:{session_id}"));
        let text = self.gateway.complete(&req)?.text;
        Ok(match mode {
            ExportMode::Plain => text.trim().to_string(),
            ExportMode::ReasoningFirst => strip_reasoning(&text).trim().to_string(),
        })
    }
}

/// Plays back stored supporter turns. The dialogue is picked from the
/// session id, so a session always hears the same supporter.
pub struct ReplayAgent {
    dialogues: Vec<Vec<String>>,
}

impl ReplayAgent {
    pub fn new(corpus: &[Dialogue]) -> Result<Self, AgentError> {
        let dialogues: Vec<Vec<String>> = corpus
            .iter()
            .map(|d| d.supporter_turns().map(|u| u.text.clone()).collect::<Vec<_>>())
            .filter(|turns| !turns.is_empty())
            .collect();
        if dialogues.is_empty() {
            return Err(AgentError::EmptyReplay);
        }
        Ok(Self { dialogues })
    }
}

impl Agent for ReplayAgent {
    fn reply(&self, session_id: &str, _: ExportMode, history: &[Turn], _: &str) -> Result<String, AgentError> {
        let h = sha256_hex(session_id);
        let pick = u64::from_str_radix(&h[..12], 16).expect("hex prefix") as usize % self.dialogues.len();
        let turns = &self.dialogues[pick];
        let k = history.iter().filter(|t| t.role == Role::Supporter).count();
        Ok(turns[k % turns.len()].clone())
    }
}

/// One entry of the agents file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AgentSpec {
    Gateway {
        tag: String,
        model: String,
        #[serde(default = "default_temperature")]
        temperature: f64,
        #[serde(default)]
        gateway: GatewayConfig,
    },
    Replay {
        tag: String,
        corpus: PathBuf,
    },
}

fn default_temperature() -> f64 {
    0.7
}

impl AgentSpec {
    pub fn tag(&self) -> &str {
        match self {
            AgentSpec::Gateway { tag, .. } | AgentSpec::Replay { tag, .. } => tag,
        }
    }
}

#[derive(Debug, Error)]
pub enum AgentSetupError {
    #[error("duplicate agent tag {0:?}")]
    Duplicate(String),
    #[error("agent {tag}: {message}")]
    Invalid { tag: String, message: String },
    #[error("agent {tag}: {source}")]
    Corpus {
        tag: String,
        #[source]
        source: StorageError,
    },
}

pub type AgentRegistry = BTreeMap<String, Arc<dyn Agent>>;

pub fn build_agents(specs: &[AgentSpec]) -> Result<AgentRegistry, AgentSetupError> {
    let mut out: AgentRegistry = BTreeMap::new();
    for spec in specs {
        let tag = spec.tag().to_string();
        if tag.trim().is_empty() {
            return Err(AgentSetupError::Invalid { tag, message: "empty tag".into() });
        }
        let agent: Arc<dyn Agent> = match spec {
            AgentSpec::Gateway { model, temperature, gateway, .. } => {
                let gw = HttpGateway::new(gateway.clone())
                    .map_err(|e| AgentSetupError::Invalid { tag: tag.clone(), message: e.to_string() })?;
                Arc::new(GatewayAgent { model: model.clone(), temperature: *temperature, gateway: Arc::new(gw) })
            }
            AgentSpec::Replay { corpus, .. } => {
                let dialogues: Vec<Dialogue> = read_corpus(corpus, Schema::Dialogue)
                    .map_err(|source| AgentSetupError::Corpus { tag: tag.clone(), source })?;
                Arc::new(
                    ReplayAgent::new(&dialogues)
                        .map_err(|e| AgentSetupError::Invalid { tag: tag.clone(), message: e.to_string() })?,
                )
            }
        };
        if out.insert(tag.clone(), agent).is_some() {
            return Err(AgentSetupError::Duplicate(tag));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use supportsim_core::gateway::ReplayGateway;

    fn turn(role: Role, text: &str) -> Turn {
        Turn { role, text: text.into(), timestamp: String::new() }
    }

    #[test]
    fn gateway_agent_strips_reasoning() {
        let agent = GatewayAgent {
            model: "m".into(),
            temperature: 0.0,
            gateway: Arc::new(ReplayGateway::ordinal(vec![
                "[SEEKER'S SITUATION] x\n### RESPONSE\nI hear you.".into(),
                "Plain reply".into(),
            ])),
        };
        let history = [turn(Role::Seeker, "hi"), turn(Role::Supporter, "hello")];
        let req = agent.request(ExportMode::Plain, &history, "again");
        assert_eq!(req.messages.len(), 4);
        assert_eq!(agent.reply("s", ExportMode::ReasoningFirst, &history, "x").unwrap(), "I hear you.");
        assert_eq!(agent.reply("s", ExportMode::Plain, &history, "x").unwrap(), "Plain reply");
    }

    #[test]
    fn replay_agent_is_deterministic_and_cycles() {
        let d = supportsim_core::dialogue::parse_dialogue(
            include_str!("../../../data/demo_dialogue.json"),
            "p",
            &Default::default(),
        )
        .unwrap();
        let agent = ReplayAgent::new(&[d]).unwrap();
        let mut history = Vec::new();
        let mut replies = Vec::new();
        for _ in 0..11 {
            let r = agent.reply("s1", ExportMode::Plain, &history, "x").unwrap();
            history.push(turn(Role::Seeker, "x"));
            history.push(turn(Role::Supporter, &r));
            replies.push(r);
        }
        assert!(replies[0].starts_with("Hello, how has your day been?"));
        assert_eq!(replies[10], replies[0]);
        assert!(ReplayAgent::new(&[]).is_err());
    }
}
