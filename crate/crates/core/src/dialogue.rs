//! Dialogue types, generation prompts, parsing of model output, turn
//! normalization and the generate-check-retry loop.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::extract::{first_object, first_value, normalize_key, ExtractError};
use crate::gateway::{ChatGateway, ChatMessage, ChatRequest, GatewayError};
use crate::persona::{validate_persona, Persona};
use crate::prompts::{fill_template, DIALOGUE_TEMPLATE, STRATEGY_DEFINITIONS};
use crate::qc::{check_dialogue, QcConfig, QcReport};
use crate::reasoning::{parse_reasoning_with, render_reasoning_with, Node, NodeMask, ReasoningChain, ReasoningError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Speaker {
    Seeker,
    Supporter,
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Speaker::Seeker => "Seeker",
            Speaker::Supporter => "Supporter",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<ReasoningChain>,
    pub index: usize,
}

impl Utterance {
    pub fn seeker(text: impl Into<String>) -> Self {
        Self { speaker: Speaker::Seeker, text: text.into(), reasoning: None, index: 0 }
    }

    pub fn supporter(text: impl Into<String>, reasoning: ReasoningChain) -> Self {
        Self {
            speaker: Speaker::Supporter,
            text: text.into(),
            reasoning: Some(reasoning),
            index: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub persona_id: String,
    pub utterances: Vec<Utterance>,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
    #[serde(default)]
    pub imported: bool,
}

impl Dialogue {
    pub fn supporter_turns(&self) -> impl Iterator<Item = &Utterance> {
        self.utterances.iter().filter(|u| u.speaker == Speaker::Supporter)
    }
}

pub const MIN_TURN_PAIRS: u32 = 9;
pub const MAX_TURN_PAIRS: u32 = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub target_turn_pairs: u32,
    pub max_supporter_words: usize,
    pub max_seeker_words: usize,
    pub node_mask: NodeMask,
    pub max_retries: u32,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            target_turn_pairs: 12,
            max_supporter_words: 40,
            max_seeker_words: 30,
            node_mask: NodeMask::ALL,
            max_retries: 2,
            model: "gpt-4".into(),
            temperature: 0.7,
            max_tokens: 4096,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), DialogueError> {
        if !(MIN_TURN_PAIRS..=MAX_TURN_PAIRS).contains(&self.target_turn_pairs) {
            return Err(DialogueError::Config(format!(
                "target_turn_pairs {} is outside {MIN_TURN_PAIRS}..={MAX_TURN_PAIRS}",
                self.target_turn_pairs
            )));
        }
        if self.max_supporter_words == 0 || self.max_seeker_words == 0 {
            return Err(DialogueError::Config("word limits must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum DialogueError {
    #[error("invalid generation config: {0}")]
    Config(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    NoJson(#[from] ExtractError),
    #[error("entry {entry}: {message}")]
    Shape { entry: usize, message: String },
    #[error("entry {entry} (round {round}): {source}")]
    Structure {
        entry: usize,
        round: usize,
        #[source]
        source: ReasoningError,
    },
    #[error("demonstration {path}: {message}")]
    Demo { path: String, message: String },
}

/// A profile-to-dialogue example shown to the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub id: String,
    pub text: String,
}

const PROFILE_MARK: &str = "Profile Input:";
const DIALOGUE_MARK: &str = "Dialogue Output:";

impl Demonstration {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self, DialogueError> {
        let id = id.into();
        let text = text.into();
        let p = text.find(PROFILE_MARK);
        let d = text.find(DIALOGUE_MARK);
        match (p, d) {
            (Some(p), Some(d)) if p < d => Ok(Self { id, text }),
            _ => Err(DialogueError::Demo {
                path: id,
                message: format!("expected a {PROFILE_MARK:?} section followed by {DIALOGUE_MARK:?}"),
            }),
        }
    }

    /// The demonstration as shown to the model. Under a partial mask the
    /// example reasoning is re-rendered without the masked nodes, so the
    /// example agrees with the requested structure.
    pub fn render(&self, mask: NodeMask) -> Result<String, DialogueError> {
        if mask == NodeMask::ALL {
            return Ok(self.text.trim().to_string());
        }
        let bad = |message: String| DialogueError::Demo { path: self.id.clone(), message };
        let split = self.text.find(DIALOGUE_MARK).expect("checked in new");
        let profile = self.text[..split].trim();
        let mut dialogue = first_object(&self.text[split..]).map_err(|e| bad(e.to_string()))?;
        let list = dialogue
            .iter_mut()
            .find(|(k, _)| normalize_key(k) == "dialogue")
            .and_then(|(_, v)| v.as_array_mut())
            .ok_or_else(|| bad("no Dialogue list".into()))?;
        for entry in list.iter_mut().filter_map(Value::as_object_mut) {
            let Some(key) = entry.keys().find(|k| is_reasoning_key(k)).cloned() else {
                continue;
            };
            let raw = entry[&key].as_str().unwrap_or_default().to_string();
            let chain = parse_reasoning_with(&raw, NodeMask::ALL).map_err(|e| bad(e.to_string()))?;
            let rendered = render_reasoning_with(&chain, mask).map_err(|e| bad(e.to_string()))?;
            entry.insert(key, Value::String(rendered));
        }
        let body = serde_json::to_string_pretty(&Value::Object(dialogue)).expect("json serializes");
        Ok(format!("{profile}\n\n{DIALOGUE_MARK} {body}"))
    }
}

/// Loads every `*.txt` file in `dir` as a demonstration, sorted by file name.
pub fn load_demo_pool(dir: impl AsRef<Path>) -> Result<Vec<Demonstration>, DialogueError> {
    let dir = dir.as_ref();
    let err = |message: String| DialogueError::Demo { path: dir.display().to_string(), message };
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| err(e.to_string()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let text = fs::read_to_string(&p).map_err(|e| err(format!("{}: {e}", p.display())))?;
        let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        out.push(Demonstration::new(id, text)?);
    }
    if out.is_empty() {
        return Err(err("no .txt demonstrations found".into()));
    }
    Ok(out)
}

fn structure_line(mask: NodeMask) -> String {
    mask.nodes()
        .map(|n| match n {
            Node::Situation => "[SEEKER'S SITUATION] The seeker… .",
            Node::Thought => "[SEEKER'S THOUGHT] The seeker … .",
            Node::Action => "[SEEKER'S ACTION] The seeker… .",
            Node::Strategy => "[SUPPORTER'S STRATEGY] I hereby… .",
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn build_dialogue_prompt(
    persona: &Persona,
    demonstration: &Demonstration,
    cfg: &GenerationConfig,
) -> Result<String, DialogueError> {
    cfg.validate()?;
    let violations = validate_persona(persona);
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(DialogueError::Precondition(format!(
            "persona {} is invalid: {}",
            persona.id,
            list.join("; ")
        )));
    }
    let mut values = BTreeMap::new();
    values.insert("MAX_SUPPORTER_WORDS", cfg.max_supporter_words.to_string());
    values.insert("MAX_SEEKER_WORDS", cfg.max_seeker_words.to_string());
    values.insert("STRATEGIES", STRATEGY_DEFINITIONS.trim().to_string());
    values.insert("DEMONSTRATION", demonstration.render(cfg.node_mask)?);
    values.insert("STRUCTURE", structure_line(cfg.node_mask));
    values.insert("PERSONA", persona.render_profile());
    Ok(fill_template(DIALOGUE_TEMPLATE, &values).expect("dialogue template slots are all bound"))
}

fn is_reasoning_key(k: &str) -> bool {
    normalize_key(k).contains("reasoning")
}

fn text_of(v: &Value) -> Option<String> {
    v.as_str().map(|s| s.trim().to_string())
}

fn speaker_of(label: &str) -> Option<Speaker> {
    match normalize_key(label).as_str() {
        "seeker" | "user" | "usr" | "help seeker" => Some(Speaker::Seeker),
        "supporter" | "assistant" | "sys" | "system" => Some(Speaker::Supporter),
        _ => None,
    }
}

/// Reads one `Dialogue` entry. Returns the utterance and, for supporter
/// entries, the raw reasoning text.
fn read_entry(entry: usize, obj: &Map<String, Value>) -> Result<(Speaker, String, Option<String>, Option<usize>), DialogueError> {
    let shape = |message: &str| DialogueError::Shape { entry, message: message.into() };
    let mut seeker = None;
    let mut supporter = None;
    let mut reasoning = None;
    let mut speaker = None;
    let mut generic_text = None;
    let mut round = None;
    for (k, v) in obj {
        match normalize_key(k).as_str() {
            "seeker" => seeker = Some(v),
            "supporter" => supporter = Some(v),
            "speaker" | "role" => speaker = v.as_str().and_then(speaker_of),
            "text" | "content" | "utterance" => generic_text = Some(v),
            "turn" | "round" => round = v.as_u64().map(|n| n as usize),
            _ if is_reasoning_key(k) => reasoning = text_of(v),
            _ => {}
        }
    }
    let (who, text) = match (seeker, supporter, speaker, generic_text) {
        (Some(t), None, _, _) => (Speaker::Seeker, t),
        (None, Some(t), _, _) => (Speaker::Supporter, t),
        (None, None, Some(s), Some(t)) => (s, t),
        (Some(_), Some(_), _, _) => return Err(shape("entry has both Seeker and Supporter keys")),
        _ => return Err(shape("unrecognized entry shape")),
    };
    let text = text_of(text).ok_or_else(|| shape("utterance text is not a string"))?;
    if text.is_empty() {
        return Err(shape("empty utterance text"));
    }
    if who == Speaker::Seeker && reasoning.is_some() {
        return Err(shape("seeker entry carries supporter reasoning"));
    }
    Ok((who, text, reasoning, round))
}

/// Parses a generated dialogue. Accepts `{"Dialogue": [...]}` or a bare list.
/// Indices are assigned 1..n; length and alternation are left to QC.
pub fn parse_dialogue(llm_output: &str, persona_id: &str, cfg: &GenerationConfig) -> Result<Dialogue, DialogueError> {
    let value = first_value(llm_output)?;
    let entries = match value {
        Value::Array(items) => items,
        Value::Object(obj) => {
            let found = obj.into_iter().find(|(k, _)| normalize_key(k) == "dialogue");
            match found {
                Some((_, Value::Array(items))) => items,
                Some(_) => return Err(DialogueError::Shape { entry: 0, message: "Dialogue is not a list".into() }),
                None => return Err(DialogueError::Shape { entry: 0, message: "object has no Dialogue key".into() }),
            }
        }
        _ => unreachable!("first_value yields objects or arrays"),
    };
    let mut utterances = Vec::with_capacity(entries.len());
    let mut supporter_rounds = 0;
    for (i, raw) in entries.iter().enumerate() {
        let entry = i + 1;
        let obj = raw.as_object().ok_or(DialogueError::Shape {
            entry,
            message: "entry is not an object".into(),
        })?;
        let (speaker, text, reasoning, round) = read_entry(entry, obj)?;
        let utt = match speaker {
            Speaker::Seeker => Utterance::seeker(text),
            Speaker::Supporter => {
                supporter_rounds += 1;
                let round = round.unwrap_or(supporter_rounds);
                let chain = match reasoning {
                    Some(r) => parse_reasoning_with(&r, cfg.node_mask)
                        .map_err(|source| DialogueError::Structure { entry, round, source })?,
                    None if cfg.node_mask.is_empty() => ReasoningChain::default(),
                    None => {
                        return Err(DialogueError::Structure {
                            entry,
                            round,
                            source: ReasoningError::MissingMarker(cfg.node_mask.nodes().next().expect("non-empty mask")),
                        })
                    }
                };
                Utterance::supporter(text, chain)
            }
        };
        utterances.push(utt);
    }
    for (i, u) in utterances.iter_mut().enumerate() {
        u.index = i + 1;
    }
    Ok(Dialogue {
        id: format!("d_{persona_id}"),
        persona_id: persona_id.to_string(),
        utterances,
        meta: BTreeMap::new(),
        imported: false,
    })
}

/// Merges consecutive same-speaker utterances, drops leading supporter and
/// trailing seeker turns, and renumbers from 1.
pub fn normalize_turns(utterances: Vec<Utterance>) -> Vec<Utterance> {
    let mut merged: Vec<Utterance> = Vec::with_capacity(utterances.len());
    for u in utterances {
        match merged.last_mut() {
            Some(prev) if prev.speaker == u.speaker => {
                let text = u.text.trim();
                if !text.is_empty() {
                    if !prev.text.is_empty() {
                        prev.text.push(' ');
                    }
                    prev.text.push_str(text);
                }
                match (&mut prev.reasoning, u.reasoning) {
                    (Some(a), Some(b)) => a.merge(&b),
                    (slot @ None, Some(b)) => *slot = Some(b),
                    _ => {}
                }
            }
            _ => merged.push(u),
        }
    }
    let start = merged.iter().position(|u| u.speaker == Speaker::Seeker).unwrap_or(merged.len());
    let end = merged.iter().rposition(|u| u.speaker == Speaker::Supporter).map_or(0, |i| i + 1);
    let mut out: Vec<Utterance> = if start < end { merged.drain(start..end).collect() } else { Vec::new() };
    for (i, u) in out.iter_mut().enumerate() {
        u.index = i + 1;
    }
    out
}

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error(transparent)]
    Setup(#[from] DialogueError),
    #[error("gateway failed for persona {persona_id}: {source}")]
    Gateway {
        persona_id: String,
        #[source]
        source: GatewayError,
    },
    #[error("persona {persona_id}: no acceptable dialogue after {attempts} attempts; last problem: {last_error}")]
    Exhausted {
        persona_id: String,
        attempts: u32,
        last_error: String,
        last_report: Option<Box<QcReport>>,
    },
}

/// Per-persona generator seed derived from the run seed.
pub fn persona_seed(seed: u64, persona_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(persona_id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Timestamp recorded in dialogue metadata. Replay runs use a fixed value so
/// output stays byte-identical; `SOURCE_DATE_EPOCH` pins it otherwise.
fn generation_timestamp(deterministic: bool) -> String {
    let secs = if deterministic {
        0
    } else if let Some(epoch) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse::<i64>().ok()) {
        epoch
    } else {
        chrono::Utc::now().timestamp()
    };
    chrono::DateTime::from_timestamp(secs, 0)
        .unwrap_or_default()
        .to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// The request sent for one generation attempt.
pub fn dialogue_request(prompt: String, cfg: &GenerationConfig, tag: String) -> ChatRequest {
    let mut req = ChatRequest::new(cfg.model.clone(), vec![ChatMessage::user(prompt)]).tagged(tag);
    req.temperature = cfg.temperature;
    req.max_tokens = cfg.max_tokens;
    req
}

/// Prompt, call, parse, normalize and check, retrying with a freshly drawn
/// demonstration on failure. Demonstrations are drawn with a generator seeded
/// from `(rng_seed, persona.id)`.
pub fn generate_dialogue<G: ChatGateway + ?Sized>(
    persona: &Persona,
    gateway: &G,
    demo_pool: &[Demonstration],
    cfg: &GenerationConfig,
    rng_seed: u64,
) -> Result<Dialogue, GenerationError> {
    if demo_pool.is_empty() {
        return Err(DialogueError::Precondition("demonstration pool is empty".into()).into());
    }
    cfg.validate()?;
    let qc_cfg = QcConfig::from(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(persona_seed(rng_seed, &persona.id));
    let mut last_error = String::new();
    let mut last_report = None;
    let attempts = cfg.max_retries + 1;
    for attempt in 0..attempts {
        let demo = &demo_pool[rng.gen_range(0..demo_pool.len())];
        let prompt = build_dialogue_prompt(persona, demo, cfg)?;
        let prompt_hash = sha256_hex(&prompt);
        let req = dialogue_request(prompt, cfg, format!("dialogue:{}:{attempt}", persona.id));
        let reply = gateway.complete(&req).map_err(|source| GenerationError::Gateway {
            persona_id: persona.id.clone(),
            source,
        })?;
        let mut d = match parse_dialogue(&reply.text, &persona.id, cfg) {
            Ok(d) => d,
            Err(e) => {
                log::debug!("persona {} attempt {attempt}: {e}", persona.id);
                last_error = e.to_string();
                continue;
            }
        };
        d.utterances = normalize_turns(d.utterances);
        let report = check_dialogue(&d, persona, &qc_cfg).expect("persona ids agree");
        if report.passed {
            d.meta.insert("model".into(), cfg.model.clone());
            d.meta.insert("timestamp".into(), generation_timestamp(gateway.is_deterministic()));
            d.meta.insert("demonstration".into(), demo.id.clone());
            d.meta.insert("prompt_sha256".into(), prompt_hash);
            d.meta.insert("attempts".into(), (attempt + 1).to_string());
            d.meta.insert("node_mask".into(), cfg.node_mask.to_string());
            return Ok(d);
        }
        last_error = report
            .failures
            .iter()
            .map(|f| format!("{}: {}", f.rule, f.detail))
            .collect::<Vec<_>>()
            .join("; ");
        last_report = Some(Box::new(report));
    }
    Err(GenerationError::Exhausted {
        persona_id: persona.id.clone(),
        attempts,
        last_error,
        last_report,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationFailure {
    pub persona_id: String,
    pub reason: String,
}

/// Generates one dialogue per persona on a bounded worker pool. Results are
/// ordered by persona id regardless of completion order.
pub fn generate_corpus<G: ChatGateway + ?Sized>(
    personas: &[Persona],
    gateway: &G,
    demo_pool: &[Demonstration],
    cfg: &GenerationConfig,
    rng_seed: u64,
    parallel: usize,
) -> (Vec<Dialogue>, Vec<GenerationFailure>) {
    let work = || -> Vec<(String, Result<Dialogue, GenerationError>)> {
        personas
            .par_iter()
            .map(|p| (p.id.clone(), generate_dialogue(p, gateway, demo_pool, cfg, rng_seed)))
            .collect()
    };
    let results = match rayon::ThreadPoolBuilder::new().num_threads(parallel.max(1)).build() {
        Ok(pool) => pool.install(work),
        Err(_) => work(),
    };
    let mut dialogues = Vec::new();
    let mut failures = Vec::new();
    for (persona_id, r) in results {
        match r {
            Ok(d) => dialogues.push(d),
            Err(e) => failures.push(GenerationFailure { persona_id, reason: e.to_string() }),
        }
    }
    dialogues.sort_by(|a, b| a.persona_id.cmp(&b.persona_id));
    failures.sort_by(|a, b| a.persona_id.cmp(&b.persona_id));
    (dialogues, failures)
}
