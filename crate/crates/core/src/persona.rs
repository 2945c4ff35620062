//! Seeker personas: prompt construction, parsing of model output, validation
//! and batch realization from scenarios.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::extract::{first_object, normalize_key, ExtractError};
use crate::gateway::{ChatGateway, ChatMessage, ChatRequest, GatewayError};
use crate::prompts::{fill_template, BIG_FIVE_DEFINITIONS, PERSONA_TEMPLATE};
use crate::scenario::Scenario;
use crate::text::tokenize;

pub const MIN_AGE: u32 = 12;
pub const MAX_AGE: u32 = 60;

pub const OCCUPATIONS: [&str; 53] = [
    "Doctor", "Nurse", "Teacher", "University professor", "Counselor", "Lawyer", "Accountant",
    "Banker", "Corporate executive", "HR manager", "Secretary", "Software developer",
    "Network Security analyst", "Actor", "Architect", "Singer", "Writer", "Photographer",
    "Engineer", "Researcher", "Programmer", "Social worker", "Journalist", "Coach", "Athlete",
    "Driver", "Chef", "Server", "Police officer", "TV presenter", "Gardener", "Soldier",
    "Civil servant", "Nanny", "Student", "Entrepreneur", "Tour guide", "Real estate agent",
    "Designer", "Beautician", "Firefighter", "Network anchor", "Consultant", "Therapist",
    "Public relations officer", "Marketing manager", "Customer service", "Logistics manager",
    "Delivery person", "Courier", "Clerk", "Housewife", "Unemployed",
];

/// The five personality axes as (pole, pole) pairs, with accepted spellings
/// for each pole.
pub const BIG_FIVE_AXES: [(&[&str], &[&str]); 5] = [
    (&["openness"], &["closedness"]),
    (&["conscientiousness"], &["unconscientiousness"]),
    (&["extraversion", "extroversion"], &["intraversion", "introversion"]),
    (&["neuroticism"], &["emotional stability"]),
    (&["agreeableness"], &["antagonism"]),
];

const AXIS_NAMES: [&str; 5] = [
    "Openness/Closedness",
    "Conscientiousness/Unconscientiousness",
    "Extraversion/Intraversion",
    "Neuroticism/Emotional Stability",
    "Agreeableness/Antagonism",
];

/// Axis index of a trait name, if it names a pole.
pub fn trait_axis(name: &str) -> Option<usize> {
    let key = normalize_key(name);
    BIG_FIVE_AXES
        .iter()
        .position(|(a, b)| a.contains(&key.as_str()) || b.contains(&key.as_str()))
}

/// Canonical list spelling of an occupation: case-insensitive, leading
/// article dropped.
pub fn canonical_occupation(raw: &str) -> Option<&'static str> {
    let mut s = raw.trim().to_lowercase();
    for article in ["a ", "an ", "the "] {
        if let Some(rest) = s.strip_prefix(article) {
            s = rest.trim_start().to_string();
            break;
        }
    }
    let s = s.trim_end_matches('.').trim();
    OCCUPATIONS.iter().copied().find(|o| o.to_lowercase() == s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gender {
    Male,
    Female,
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Male => "Male",
            Gender::Female => "Female",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Persona {
    pub id: String,
    pub gender: Gender,
    pub age: u32,
    pub occupation: String,
    pub personality: Vec<String>,
    pub topic: String,
    pub subtopics: Vec<String>,
    pub question: String,
    pub description: String,
    pub emotion_labels: Vec<String>,
    pub previous_attempts_and_effects: String,
    pub current_goals_and_expectations: String,
    pub scenario_id: String,
}

impl Persona {
    /// All free-text persona content joined by spaces.
    pub fn free_text(&self) -> String {
        [
            self.occupation.as_str(),
            &self.topic,
            &self.subtopics.join(" "),
            &self.question,
            &self.description,
            &self.emotion_labels.join(" "),
            &self.previous_attempts_and_effects,
            &self.current_goals_and_expectations,
        ]
        .join(" ")
    }

    /// The profile as a model sees it: the form's own key names.
    pub fn profile_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("Id".into(), self.id.clone().into());
        m.insert("Gender".into(), self.gender.to_string().into());
        m.insert("Age".into(), self.age.into());
        m.insert("Occupation".into(), self.occupation.clone().into());
        m.insert("Personality".into(), self.personality.clone().into());
        m.insert("Topic".into(), self.topic.clone().into());
        m.insert("Subtopic".into(), self.subtopics.clone().into());
        m.insert("Problem".into(), self.question.clone().into());
        m.insert("Description".into(), self.description.clone().into());
        m.insert("Emotion Label".into(), self.emotion_labels.join(", ").into());
        m.insert(
            "Previous Attempts and Effects".into(),
            self.previous_attempts_and_effects.clone().into(),
        );
        m.insert(
            "Current Goals and Expectations".into(),
            self.current_goals_and_expectations.clone().into(),
        );
        Value::Object(m)
    }

    pub fn render_profile(&self) -> String {
        serde_json::to_string_pretty(&self.profile_json()).expect("profile serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PersonaError {
    #[error("scenario {scenario_id} has an empty {field}")]
    Precondition { scenario_id: String, field: &'static str },
    #[error(transparent)]
    NoJson(#[from] ExtractError),
    #[error("persona output is missing required key {0:?}")]
    MissingKey(&'static str),
    #[error("persona key {key:?} has an unusable value: {message}")]
    BadValue { key: &'static str, message: String },
}

/// Builds the persona-extraction prompt for one scenario. `demonstration` is
/// an example profile inserted verbatim.
pub fn build_persona_prompt(scenario: &Scenario, demonstration: &str) -> Result<String, PersonaError> {
    for (field, value) in [
        ("topic", &scenario.topic),
        ("question", &scenario.question),
        ("description", &scenario.description),
    ] {
        if value.trim().is_empty() {
            return Err(PersonaError::Precondition {
                scenario_id: scenario.id.clone(),
                field,
            });
        }
    }
    let json = |s: &str| serde_json::to_string(s).expect("string serializes");
    let mut values = BTreeMap::new();
    values.insert("BIG_FIVE", BIG_FIVE_DEFINITIONS.trim().to_string());
    values.insert("EXAMPLE", demonstration.trim().to_string());
    values.insert("OCCUPATIONS", OCCUPATIONS.join(", "));
    values.insert("TOPIC", json(&scenario.topic));
    values.insert("PROBLEM", json(&scenario.question));
    values.insert("DESCRIPTION", json(&scenario.description));
    Ok(fill_template(PERSONA_TEMPLATE, &values).expect("persona template slots are all bound"))
}

const KEY_ALIASES: [(&str, &[&str]); 13] = [
    ("id", &["id"]),
    ("gender", &["gender", "sex"]),
    ("age", &["age"]),
    ("occupation", &["occupation", "job"]),
    ("personality", &["personality", "personality traits"]),
    ("topic", &["topic"]),
    ("subtopic", &["subtopic", "subtopics", "sub topic", "sub topics"]),
    ("problem", &["problem", "question", "situation"]),
    ("description", &["description", "event description"]),
    ("emotion label", &["emotion label", "emotion labels", "emotion"]),
    ("previous attempts", &["previous attempts and effects", "previous attempts"]),
    (
        "current goals",
        &["current goals and expectations", "current goals and expectation", "current goals", "goals and expectations"],
    ),
    ("scenario id", &["scenario id"]),
];

fn canonical_key(raw: &str) -> Option<&'static str> {
    let key = normalize_key(raw);
    KEY_ALIASES
        .iter()
        .find(|(_, aliases)| aliases.contains(&key.as_str()))
        .map(|(canon, _)| *canon)
}

fn as_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.trim().to_string(),
        Value::Null => String::new(),
        Value::Array(items) => items.iter().map(as_text).collect::<Vec<_>>().join(", "),
        other => other.to_string(),
    }
}

/// Lists may arrive as arrays or as one comma-separated string.
fn as_list(v: &Value) -> Vec<String> {
    let raw: Vec<String> = match v {
        Value::Array(items) => items.iter().map(as_text).collect(),
        other => as_text(other).split([',', ';']).map(str::to_string).collect(),
    };
    raw.into_iter()
        .map(|s| s.trim().trim_matches(|c| c == '[' || c == ']' || c == '"').trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn parse_age(v: &Value) -> Result<u32, PersonaError> {
    let bad = |message: String| PersonaError::BadValue { key: "age", message };
    match v {
        Value::Number(n) => n
            .as_u64()
            .and_then(|n| u32::try_from(n).ok())
            .ok_or_else(|| bad(format!("{n} is not a whole number of years"))),
        Value::String(s) => {
            let digits: String = s.trim().chars().take_while(char::is_ascii_digit).collect();
            digits.parse().map_err(|_| bad(format!("{s:?} is not a number")))
        }
        other => Err(bad(format!("{other} is not a number"))),
    }
}

fn parse_gender(v: &Value) -> Result<Gender, PersonaError> {
    let s = as_text(v).to_lowercase();
    match s.as_str() {
        "male" | "m" | "man" => Ok(Gender::Male),
        "female" | "f" | "woman" => Ok(Gender::Female),
        _ => Err(PersonaError::BadValue {
            key: "gender",
            message: format!("{s:?} is neither Male nor Female"),
        }),
    }
}

/// Extracts a persona from model output. The result is not validated.
pub fn parse_persona(llm_output: &str, scenario_id: &str) -> Result<Persona, PersonaError> {
    let obj = first_object(llm_output)?;
    let mut fields: BTreeMap<&'static str, Value> = BTreeMap::new();
    for (k, v) in obj {
        if let Some(canon) = canonical_key(&k) {
            fields.entry(canon).or_insert(v);
        }
    }
    let take = |key: &'static str| fields.get(key).ok_or(PersonaError::MissingKey(key));
    let text = |key: &'static str| fields.get(key).map(as_text).unwrap_or_default();

    let gender = parse_gender(take("gender")?)?;
    let age = parse_age(take("age")?)?;
    let occupation_raw = as_text(take("occupation")?);
    let occupation = canonical_occupation(&occupation_raw)
        .map(str::to_string)
        .unwrap_or(occupation_raw);
    let personality = as_list(take("personality")?);
    let emotion_labels = as_list(take("emotion label")?);
    let previous = as_text(take("previous attempts")?);
    let goals = as_text(take("current goals")?);
    let id = match text("id") {
        s if s.is_empty() => format!("p_{scenario_id}"),
        s => s,
    };
    Ok(Persona {
        id,
        gender,
        age,
        occupation,
        personality,
        topic: text("topic"),
        subtopics: fields.get("subtopic").map(as_list).unwrap_or_default(),
        question: text("problem"),
        description: text("description"),
        emotion_labels,
        previous_attempts_and_effects: previous,
        current_goals_and_expectations: goals,
        scenario_id: scenario_id.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PersonaViolation {
    pub field: String,
    pub rule: String,
    pub detail: String,
}

impl fmt::Display for PersonaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({}): {}", self.field, self.rule, self.detail)
    }
}

const FIRST_PERSON: [&str; 10] = ["i", "me", "my", "mine", "myself", "we", "us", "our", "ours", "ourselves"];

fn is_first_person(text: &str) -> bool {
    tokenize(text).iter().any(|t| FIRST_PERSON.contains(&t.as_str()))
}

/// Checks every persona invariant. The result is sorted by field, then rule,
/// then detail; empty means valid.
pub fn validate_persona(p: &Persona) -> Vec<PersonaViolation> {
    let mut out = Vec::new();
    let mut push = |field: &str, rule: &str, detail: String| {
        out.push(PersonaViolation {
            field: field.into(),
            rule: rule.into(),
            detail,
        })
    };

    if !(MIN_AGE..=MAX_AGE).contains(&p.age) {
        push("age", "age-range", format!("{} is outside {MIN_AGE}..={MAX_AGE}", p.age));
    }

    if p.personality.len() != 5 {
        push("personality", "trait-count", format!("{} traits, expected 5", p.personality.len()));
    }
    let mut per_axis = [0usize; 5];
    for t in &p.personality {
        match trait_axis(t) {
            Some(axis) => per_axis[axis] += 1,
            None => push("personality", "unknown-trait", format!("{t:?} is not a Big Five pole")),
        }
    }
    for (axis, &count) in per_axis.iter().enumerate() {
        if count != 1 {
            push(
                "personality",
                "axis-coverage",
                format!("{count} traits from {}, expected 1", AXIS_NAMES[axis]),
            );
        }
    }

    if canonical_occupation(&p.occupation).is_none() {
        push("occupation", "occupation-list", format!("{:?} is not a listed occupation", p.occupation));
    }

    for (field, value) in [
        ("id", &p.id),
        ("scenario_id", &p.scenario_id),
        ("topic", &p.topic),
        ("question", &p.question),
        ("description", &p.description),
        ("previous_attempts_and_effects", &p.previous_attempts_and_effects),
        ("current_goals_and_expectations", &p.current_goals_and_expectations),
    ] {
        if value.trim().is_empty() {
            push(field, "non-empty", "empty".into());
        }
    }

    for (field, value) in [
        ("description", &p.description),
        ("previous_attempts_and_effects", &p.previous_attempts_and_effects),
        ("current_goals_and_expectations", &p.current_goals_and_expectations),
    ] {
        if !value.trim().is_empty() && !is_first_person(value) {
            push(field, "first-person", "no first-person pronoun".into());
        }
    }

    if !(1..=3).contains(&p.subtopics.len()) {
        push("subtopics", "subtopic-count", format!("{} subtopics, expected 1 to 3", p.subtopics.len()));
    }
    if p.emotion_labels.iter().all(|l| l.trim().is_empty()) {
        push("emotion_labels", "non-empty", "no emotion label".into());
    }

    out.sort();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RealizeOptions {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_retries: u32,
    pub parallel: usize,
}

impl Default for RealizeOptions {
    fn default() -> Self {
        Self {
            model: "gpt-4".into(),
            temperature: 0.7,
            max_tokens: 2048,
            max_retries: 2,
            parallel: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaFailure {
    pub scenario_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RealizeOutcome {
    pub personas: Vec<Persona>,
    pub failures: Vec<PersonaFailure>,
}

/// The message appended after a rejected answer.
pub fn corrective_message(problems: &[String]) -> String {
    let mut msg = String::from("Your previous answer could not be accepted:\n");
    for p in problems {
        msg.push_str("- ");
        msg.push_str(p);
        msg.push('\n');
    }
    msg.push_str("Please output the complete corrected form as a single JSON object, in the first person.");
    msg
}

/// Grounds a parsed persona in its scenario.
fn ground(mut p: Persona, s: &Scenario) -> Persona {
    p.topic = s.topic.clone();
    p.question = s.question.clone();
    p.description = s.description.clone();
    if p.subtopics.is_empty() {
        p.subtopics = s.subtopics.clone();
    }
    p.scenario_id = s.id.clone();
    p.id = format!("p_{}", s.id);
    p
}

fn realize_one<G: ChatGateway + ?Sized>(
    scenario: &Scenario,
    gateway: &G,
    demo: &str,
    opts: &RealizeOptions,
) -> Result<Persona, String> {
    let prompt = build_persona_prompt(scenario, demo).map_err(|e| e.to_string())?;
    let mut messages = vec![ChatMessage::user(prompt)];
    let mut last_problem = String::new();
    for attempt in 0..=opts.max_retries {
        let mut req = ChatRequest::new(opts.model.clone(), messages.clone())
            .tagged(format!("persona:{}:{attempt}", scenario.id));
        req.temperature = opts.temperature;
        req.max_tokens = opts.max_tokens;
        let reply = gateway
            .complete(&req)
            .map_err(|e: GatewayError| format!("gateway: {e}"))?;
        let problems = match parse_persona(&reply.text, &scenario.id) {
            Ok(p) => {
                let p = ground(p, scenario);
                let violations = validate_persona(&p);
                if violations.is_empty() {
                    return Ok(p);
                }
                violations.iter().map(ToString::to_string).collect::<Vec<_>>()
            }
            Err(e) => vec![e.to_string()],
        };
        log::debug!("scenario {} attempt {attempt}: {}", scenario.id, problems.join("; "));
        last_problem = problems.join("; ");
        messages.push(ChatMessage::assistant(reply.text));
        messages.push(ChatMessage::user(corrective_message(&problems)));
    }
    Err(format!("rejected after {} attempts: {last_problem}", opts.max_retries + 1))
}

/// Runs prompt, call, parse and validate for every scenario, re-prompting
/// with the violations on failure. Output is sorted by scenario id.
pub fn realize_personas<G: ChatGateway + ?Sized>(
    scenarios: &[Scenario],
    gateway: &G,
    demo: &str,
    opts: &RealizeOptions,
) -> RealizeOutcome {
    let work = || -> Vec<(String, Result<Persona, String>)> {
        scenarios
            .par_iter()
            .map(|s| (s.id.clone(), realize_one(s, gateway, demo, opts)))
            .collect()
    };
    let results = match rayon::ThreadPoolBuilder::new().num_threads(opts.parallel.max(1)).build() {
        Ok(pool) => pool.install(work),
        Err(_) => work(),
    };
    let mut out = RealizeOutcome::default();
    for (scenario_id, r) in results {
        match r {
            Ok(p) => out.personas.push(p),
            Err(reason) => out.failures.push(PersonaFailure { scenario_id, reason }),
        }
    }
    out.personas.sort_by(|a, b| a.scenario_id.cmp(&b.scenario_id));
    out.failures.sort_by(|a, b| a.scenario_id.cmp(&b.scenario_id));
    out
}

/// Shipped example profile used as the persona-prompt demonstration.
pub const DEMO_PROFILE: &str = include_str!("../../../data/persona_demo.json");
