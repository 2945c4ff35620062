//! Offline stand-ins for a chat model.
//!
//! [`SimulatedGateway`] answers persona and dialogue prompts with
//! well-formed, content-derived output so the whole pipeline can run (and
//! transcripts can be recorded) without a network. [`RecordingGateway`]
//! wraps any gateway and keeps a replay transcript of what it served.

use std::sync::Mutex;

use serde_json::{json, Map, Value};

use crate::dialogue::sha256_hex;
use crate::extract::{first_object, normalize_key};
use crate::gateway::{ChatGateway, ChatRequest, Completion, GatewayError, Transcript, Usage};
use crate::persona::{BIG_FIVE_AXES, OCCUPATIONS};
use crate::reasoning::{Node, Strategy};

const PERSONA_ANCHOR: &str = "Here is the provided information.";
const DIALOGUE_ANCHOR: &str = "<Input>";
const STRUCTURE_ANCHOR: &str = "It has the following structure:";

const EMOTIONS: [&str; 8] = ["anxiety", "frustration", "sadness", "loneliness", "confusion", "guilt", "fear", "helplessness"];
const EMOJIS: [&str; 6] = ["😔", "🙂", "😟", "🤔", "😊", "💪"];

/// Deterministic pseudo-model. Identical prompts always get identical
/// answers; different prompts usually get different ones.
#[derive(Debug, Clone)]
pub struct SimulatedGateway {
    /// Supporter turns per dialogue.
    pub rounds: usize,
}

impl Default for SimulatedGateway {
    fn default() -> Self {
        Self { rounds: 12 }
    }
}

fn digest(text: &str) -> Vec<u8> {
    hex::decode(sha256_hex(text)).expect("hex digest")
}

fn string_field(obj: &Map<String, Value>, key: &str) -> String {
    obj.iter()
        .find(|(k, _)| normalize_key(k) == key)
        .and_then(|(_, v)| v.as_str())
        .unwrap_or_default()
        .to_string()
}

fn sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        cur.push(c);
        if matches!(c, '.' | '!' | '?') {
            let s = cur.trim();
            if s.split_whitespace().count() >= 3 {
                out.push(s.to_string());
            }
            cur.clear();
        }
    }
    let s = cur.trim();
    if s.split_whitespace().count() >= 3 {
        out.push(s.to_string());
    }
    out
}

fn clip_words(text: &str, max: usize) -> String {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() <= max {
        text.trim().to_string()
    } else {
        words[..max].join(" ")
    }
}

// A fixed arc through the three stages; the hash picks one of a few variants.
const ARCS: [[Strategy; 12]; 3] = {
    use Strategy::*;
    [
        [
            Question, Question, ReflectionOfFeelings, RestatementOrParaphrasing, Question, AffirmationAndReassurance,
            SelfDisclosure, ProvidingSuggestions, ShareInformation, ProvidingSuggestions, AffirmationAndReassurance, Others,
        ],
        [
            Question, ReflectionOfFeelings, Question, RestatementOrParaphrasing, ReflectionOfFeelings, SelfDisclosure,
            AffirmationAndReassurance, ProvidingSuggestions, Question, ShareInformation, ProvidingSuggestions, AffirmationAndReassurance,
        ],
        [
            Question, RestatementOrParaphrasing, Question, ReflectionOfFeelings, AffirmationAndReassurance, Question,
            ProvidingSuggestions, SelfDisclosure, ShareInformation, ProvidingSuggestions, AffirmationAndReassurance, Others,
        ],
    ]
};

fn supporter_line(s: Strategy, variant: u8) -> &'static str {
    let v = variant as usize % 2;
    match s {
        Strategy::Question => ["Could you tell me a bit more about what has been happening?", "How long have you been feeling this way, and what makes it harder?"][v],
        Strategy::RestatementOrParaphrasing => ["So it sounds like this has been weighing on you for a while.", "If I understand you, things keep piling up without a break."][v],
        Strategy::ReflectionOfFeelings => ["That sounds really exhausting, and it makes sense that you feel worn down.", "I can hear how worried and tired you are."][v],
        Strategy::SelfDisclosure => ["I have been in a similar spot before, and it felt overwhelming at first.", "I remember feeling stuck like that too, so you are not alone."][v],
        Strategy::AffirmationAndReassurance => ["You are handling a hard situation with a lot of courage.", "Reaching out like this shows real strength, and things can improve."][v],
        Strategy::ProvidingSuggestions => ["Maybe try picking one small step this week, like a short honest talk at a calm moment.", "You could set aside twenty minutes each evening to plan the next day and rest."][v],
        Strategy::ShareInformation => ["Many people find that stress eases once problems are broken into smaller concrete tasks.", "Research on sleep shows that a steady bedtime often lifts mood within a few weeks."][v],
        Strategy::Others => ["Thank you for sharing all of this with me today.", "I am glad we talked, take care of yourself."][v],
    }
}

impl SimulatedGateway {
    fn persona_reply(&self, prompt: &str) -> Result<String, GatewayError> {
        let tail = prompt.rfind(PERSONA_ANCHOR).map_or(prompt, |i| &prompt[i..]);
        let input = first_object(tail).map_err(|e| GatewayError::Response(format!("simulated model: {e}")))?;
        let topic = string_field(&input, "topic");
        let description = string_field(&input, "description");
        let h = digest(&format!("{topic}\n{description}"));
        let mentions = |words: &[&str]| {
            let lower = description.to_lowercase();
            words.iter().any(|w| lower.split(|c: char| !c.is_alphanumeric()).any(|t| t == *w))
        };
        let gender = if mentions(&["wife", "girlfriend"]) {
            "Male"
        } else if mentions(&["husband", "boyfriend"]) {
            "Female"
        } else if h[0] % 2 == 0 {
            "Female"
        } else {
            "Male"
        };
        let personality: Vec<String> = BIG_FIVE_AXES
            .iter()
            .enumerate()
            .map(|(i, (a, b))| {
                let t = if h[1] >> i & 1 == 0 { a[0] } else { b[0] };
                let mut c = t.chars();
                c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
            })
            .collect();
        let emotions = [EMOTIONS[h[3] as usize % EMOTIONS.len()], EMOTIONS[(h[3] as usize + 3) % EMOTIONS.len()]];
        let topic_l = topic.to_lowercase();
        let out = json!({
            "Gender": gender,
            "Age": 18 + h[2] as u64 % 40,
            "Occupation": OCCUPATIONS[h[4] as usize % OCCUPATIONS.len()],
            "Personality": personality,
            "Topic": topic,
            "Subtopic": [format!("{topic} stress")],
            "Problem": "",
            "Description": description,
            "Emotion Label": emotions.join(", "),
            "Previous Attempts and Effects": format!(
                "I have tried talking with friends about my {topic_l} worries, but I still feel stuck and need more support."
            ),
            "Current Goals and Expectations": format!(
                "I want to understand my feelings around {topic_l} and find practical steps I can take."
            ),
        });
        Ok(serde_json::to_string_pretty(&out).expect("persona json"))
    }

    fn dialogue_reply(&self, prompt: &str) -> Result<String, GatewayError> {
        let tail = prompt.rfind(DIALOGUE_ANCHOR).map_or(prompt, |i| &prompt[i..]);
        let profile = first_object(tail).map_err(|e| GatewayError::Response(format!("simulated model: {e}")))?;
        let structure = prompt
            .rfind(STRUCTURE_ANCHOR)
            .map(|i| prompt[i..].lines().next().unwrap_or_default())
            .unwrap_or_default();
        let nodes: Vec<Node> = Node::ALL.into_iter().filter(|n| structure.contains(n.marker())).collect();
        let nodes = if nodes.is_empty() { Node::ALL.to_vec() } else { nodes };

        let mut lines = sentences(&string_field(&profile, "description"));
        lines.extend(sentences(&string_field(&profile, "previous attempts and effects")));
        lines.extend(sentences(&string_field(&profile, "current goals and expectations")));
        if lines.is_empty() {
            lines.push("I have been feeling low lately.".into());
        }
        let emotion = string_field(&profile, "emotion label");
        let h = digest(&format!("{}\n{}", string_field(&profile, "id"), lines.join(" ")));
        let arc = &ARCS[h[0] as usize % ARCS.len()];

        let mut turns = Vec::new();
        for round in 1..=self.rounds {
            let emoji = EMOJIS[(h[round % h.len()] as usize) % EMOJIS.len()];
            let seeker = if round == 1 {
                format!("Hi, I could really use someone to talk to right now. {emoji}")
            } else {
                format!("{} {emoji}", clip_words(&lines[(round - 2) % lines.len()], 26))
            };
            turns.push(json!({"Turn": round, "Seeker": seeker}));
            let s = arc[(round - 1) % arc.len()];
            let feeling = emotion.split(',').next().unwrap_or("").trim();
            let feeling = if feeling.is_empty() { "distress" } else { feeling };
            let mut reasoning = Vec::new();
            for node in &nodes {
                let body = match node {
                    Node::Situation => format!("The Seeker is describing round {round} of their difficulty."),
                    Node::Thought => format!("The Seeker may be experiencing {feeling} and wants to be understood."),
                    Node::Action => "The Seeker is reaching out and sharing details.".to_string(),
                    Node::Strategy => format!("I hereby choose the ({}) strategy.", s.full_name()),
                };
                reasoning.push(format!("{} {body}", node.marker()));
            }
            turns.push(json!({
                "Turn": round,
                "Supporter Step by Step Reasoning": reasoning.join(" "),
                "Supporter": format!("{} {emoji}", supporter_line(s, h[(round + 7) % h.len()])),
            }));
        }
        Ok(serde_json::to_string_pretty(&json!({"Dialogue": turns})).expect("dialogue json"))
    }
}

impl ChatGateway for SimulatedGateway {
    fn complete(&self, req: &ChatRequest) -> Result<Completion, GatewayError> {
        req.validate()?;
        let prompt = req
            .messages
            .iter()
            .find(|m| m.role == crate::gateway::Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or_default();
        let text = if prompt.contains(PERSONA_ANCHOR) {
            self.persona_reply(prompt)?
        } else if prompt.contains(DIALOGUE_ANCHOR) {
            self.dialogue_reply(prompt)?
        } else {
            return Err(GatewayError::Response("simulated model: unrecognized prompt".into()));
        };
        Ok(Completion { text, usage: Usage::default() })
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

/// Forwards to an inner gateway and records every successful exchange.
pub struct RecordingGateway<G> {
    inner: G,
    transcript: Mutex<Transcript>,
}

impl<G: ChatGateway> RecordingGateway<G> {
    pub fn new(inner: G) -> Self {
        Self { inner, transcript: Mutex::new(Transcript::new()) }
    }

    pub fn transcript(&self) -> Transcript {
        self.transcript.lock().expect("transcript lock").clone()
    }
}

impl<G: ChatGateway> ChatGateway for RecordingGateway<G> {
    fn complete(&self, req: &ChatRequest) -> Result<Completion, GatewayError> {
        let c = self.inner.complete(req)?;
        self.transcript.lock().expect("transcript lock").record(req, c.text.clone());
        Ok(c)
    }

    fn is_deterministic(&self) -> bool {
        self.inner.is_deterministic()
    }
}
