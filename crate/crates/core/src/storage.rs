//! Canonical JSON Lines files and the crowdsourced-dialogue import adapter.
//!
//! Every line is a JSON object with sorted keys plus a `schema` tag, so equal
//! records always serialize to equal bytes.

use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use tempfile::NamedTempFile;
use thiserror::Error;

use crate::dialogue::{normalize_turns, Dialogue, Speaker, Utterance};
use crate::reasoning::{ReasoningChain, Strategy};

pub const SCHEMA_KEY: &str = "schema";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Schema {
    Persona,
    Dialogue,
    Sft,
}

impl Schema {
    pub const ALL: [Schema; 3] = [Schema::Persona, Schema::Dialogue, Schema::Sft];

    pub fn tag(self) -> &'static str {
        match self {
            Schema::Persona => "persona/1",
            Schema::Dialogue => "dialogue/1",
            Schema::Sft => "sft/1",
        }
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Schema {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Schema::ALL
            .into_iter()
            .find(|x| x.tag() == s)
            .ok_or_else(|| format!("unknown schema tag {s:?}"))
    }
}

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path} already exists (pass force to overwrite)")]
    Exists { path: String },
    #[error("{path}:{line}: {message}")]
    Line { path: String, line: usize, message: String },
    #[error("record does not serialize to a JSON object")]
    NotAnObject,
    #[error("record already has a {SCHEMA_KEY:?} field")]
    ReservedKey,
    #[error("failed to serialize record: {0}")]
    Serialize(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StorageError + '_ {
    move |source| StorageError::Io { path: path.display().to_string(), source }
}

/// The canonical line for a record, without the trailing newline.
pub fn canonical_line<T: Serialize>(record: &T, schema: Schema) -> Result<String, StorageError> {
    let value = serde_json::to_value(record).map_err(|e| StorageError::Serialize(e.to_string()))?;
    let Value::Object(mut map) = value else {
        return Err(StorageError::NotAnObject);
    };
    if map.contains_key(SCHEMA_KEY) {
        return Err(StorageError::ReservedKey);
    }
    map.insert(SCHEMA_KEY.into(), Value::String(schema.tag().into()));
    // serde_json's Map is ordered by key, so this is already canonical.
    serde_json::to_string(&map).map_err(|e| StorageError::Serialize(e.to_string()))
}

/// Writes to a temporary file next to the target and renames it into place
/// on [`commit`](AtomicWriter::commit). Dropping the writer without
/// committing leaves any existing file untouched.
pub struct AtomicWriter {
    target: PathBuf,
    force: bool,
    out: BufWriter<NamedTempFile>,
}

impl AtomicWriter {
    pub fn create(path: impl AsRef<Path>, force: bool) -> Result<Self, StorageError> {
        let target = path.as_ref().to_path_buf();
        if !force && target.exists() {
            return Err(StorageError::Exists { path: target.display().to_string() });
        }
        let dir = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let tmp = NamedTempFile::new_in(&dir).map_err(io_err(&dir))?;
        Ok(Self { target, force, out: BufWriter::new(tmp) })
    }

    pub fn write_line(&mut self, line: &str) -> Result<(), StorageError> {
        let target = &self.target;
        self.out.write_all(line.as_bytes()).map_err(io_err(target))?;
        self.out.write_all(b"\n").map_err(io_err(target))
    }

    pub fn commit(self) -> Result<(), StorageError> {
        let Self { target, force, out } = self;
        let tmp = out.into_inner().map_err(|e| StorageError::Io {
            path: target.display().to_string(),
            source: e.into_error(),
        })?;
        tmp.as_file().sync_all().map_err(io_err(&target))?;
        let persisted = if force { tmp.persist(&target) } else { tmp.persist_noclobber(&target) };
        persisted.map_err(|e| {
            if e.error.kind() == io::ErrorKind::AlreadyExists {
                StorageError::Exists { path: target.display().to_string() }
            } else {
                StorageError::Io { path: target.display().to_string(), source: e.error }
            }
        })?;
        Ok(())
    }
}

/// Writes records as canonical JSON Lines, atomically.
pub fn write_corpus<T: Serialize>(
    path: impl AsRef<Path>,
    schema: Schema,
    records: &[T],
    force: bool,
) -> Result<(), StorageError> {
    let mut w = AtomicWriter::create(path, force)?;
    for r in records {
        w.write_line(&canonical_line(r, schema)?)?;
    }
    w.commit()
}

/// Parses canonical JSON Lines text. Blank lines are skipped; `origin`
/// only labels errors.
pub fn parse_corpus<T: DeserializeOwned>(raw: &str, schema: Schema, origin: &str) -> Result<Vec<T>, StorageError> {
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fail = |message: String| StorageError::Line { path: origin.to_string(), line: i + 1, message };
        let value: Value = serde_json::from_str(line).map_err(|e| fail(e.to_string()))?;
        let Value::Object(mut map) = value else {
            return Err(fail("expected a JSON object".into()));
        };
        match map.remove(SCHEMA_KEY) {
            Some(Value::String(tag)) if tag == schema.tag() => {}
            Some(other) => {
                return Err(fail(format!("schema mismatch: expected {}, found {other}", schema.tag())));
            }
            None => return Err(fail(format!("missing {SCHEMA_KEY:?} tag (expected {})", schema.tag()))),
        }
        out.push(serde_json::from_value(Value::Object(map)).map_err(|e| fail(e.to_string()))?);
    }
    Ok(out)
}

pub fn read_corpus<T: DeserializeOwned>(path: impl AsRef<Path>, schema: Schema) -> Result<Vec<T>, StorageError> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(io_err(path))?;
    parse_corpus(&raw, schema, &path.display().to_string())
}

/// Schema tag of the first non-blank line, if it has one.
pub fn sniff_schema(raw: &str) -> Option<Schema> {
    let line = raw.lines().find(|l| !l.trim().is_empty())?;
    let v: Value = serde_json::from_str(line).ok()?;
    v.get(SCHEMA_KEY)?.as_str()?.parse().ok()
}

#[derive(Debug, Error)]
pub enum ImportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{locus}: {message}")]
    Record { locus: String, message: String },
}

fn locus(session: usize, turn: Option<usize>) -> String {
    match turn {
        Some(t) => format!("session {session}, turn {t}"),
        None => format!("session {session}"),
    }
}

pub fn speaker_alias(label: &str) -> Option<Speaker> {
    match label.trim().to_ascii_lowercase().replace(['-', '_'], " ").as_str() {
        "seeker" | "help seeker" | "usr" | "user" | "client" | "patient" => Some(Speaker::Seeker),
        "supporter" | "sys" | "system" | "assistant" | "helper" | "counselor" | "counsellor" | "therapist" => {
            Some(Speaker::Supporter)
        }
        _ => None,
    }
}

fn field<'a>(obj: &'a Map<String, Value>, keys: &[&str]) -> Option<&'a Value> {
    keys.iter().find_map(|k| obj.get(*k))
}

fn import_turn(turn: &Value, session: usize, t: usize) -> Result<Utterance, ImportError> {
    let err = |message: String| ImportError::Record { locus: locus(session, Some(t)), message };
    let obj = turn.as_object().ok_or_else(|| err("turn is not an object".into()))?;
    let label = field(obj, &["speaker", "role"])
        .and_then(Value::as_str)
        .ok_or_else(|| err("missing speaker".into()))?;
    let speaker = speaker_alias(label).ok_or_else(|| err(format!("unknown speaker label {label:?}")))?;
    let text = field(obj, &["text", "content", "utterance"])
        .and_then(Value::as_str)
        .ok_or_else(|| err("missing text".into()))?
        .trim()
        .to_string();
    let strategy = field(obj, &["strategy"])
        .or_else(|| obj.get("annotation").and_then(|a| a.get("strategy")))
        .filter(|v| !v.is_null());
    match speaker {
        Speaker::Seeker => Ok(Utterance::seeker(text)),
        Speaker::Supporter => {
            let mut chain = ReasoningChain::default();
            if let Some(v) = strategy {
                let label = v.as_str().ok_or_else(|| err(format!("strategy is not a string: {v}")))?;
                if !label.trim().is_empty() {
                    let s = Strategy::resolve(label).ok_or_else(|| err(format!("unknown strategy {label:?}")))?;
                    chain.strategies.push(s);
                }
            }
            Ok(Utterance::supporter(text, chain))
        }
    }
}

fn import_session(session: &Value, n: usize) -> Result<Dialogue, ImportError> {
    let (turns, obj) = match session {
        Value::Array(turns) => (turns, None),
        Value::Object(obj) => {
            let turns = field(obj, &["dialog", "dialogue", "turns", "utterances"])
                .and_then(Value::as_array)
                .ok_or_else(|| ImportError::Record {
                    locus: locus(n, None),
                    message: "session object has no dialog list".into(),
                })?;
            (turns, Some(obj))
        }
        _ => {
            return Err(ImportError::Record {
                locus: locus(n, None),
                message: "session is neither a list nor an object".into(),
            })
        }
    };
    let utterances = turns
        .iter()
        .enumerate()
        .map(|(t, v)| import_turn(v, n, t + 1))
        .collect::<Result<Vec<_>, _>>()?;
    let mut meta = std::collections::BTreeMap::new();
    let mut id = format!("imported_{n:05}");
    let mut persona_id = String::new();
    if let Some(obj) = obj {
        for (k, v) in obj {
            match (k.as_str(), v) {
                ("id", Value::String(s)) => id = s.clone(),
                ("id", Value::Number(x)) => id = x.to_string(),
                ("persona_id", Value::String(s)) => persona_id = s.clone(),
                (_, Value::String(s)) => {
                    meta.insert(k.clone(), s.clone());
                }
                _ => {}
            }
        }
    }
    Ok(Dialogue { id, persona_id, utterances: normalize_turns(utterances), meta, imported: true })
}

/// Parses sessions from a JSON array or from JSON Lines (one session per
/// line). A session is a list of `{speaker, text, strategy?}` turns or an
/// object holding such a list under `dialog`.
pub fn parse_esconv_format(raw: &str) -> Result<Vec<Dialogue>, ImportError> {
    let trimmed = raw.trim_start();
    let sessions: Vec<Value> = if trimmed.starts_with('[') {
        match serde_json::from_str::<Value>(trimmed) {
            // A top-level list of turns is a single session.
            Ok(Value::Array(items)) if items.first().is_some_and(|v| v.get("speaker").is_some() || v.get("role").is_some()) => {
                vec![Value::Array(items)]
            }
            Ok(Value::Array(items)) => items,
            Ok(_) => unreachable!("input starts with '['"),
            Err(e) => {
                return Err(ImportError::Record { locus: format!("line {}", e.line()), message: e.to_string() })
            }
        }
    } else {
        raw.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| ImportError::Record { locus: format!("line {}", i + 1), message: e.to_string() })
            })
            .collect::<Result<_, _>>()?
    };
    sessions.iter().enumerate().map(|(i, s)| import_session(s, i + 1)).collect()
}

pub fn import_esconv_format(path: impl AsRef<Path>) -> Result<Vec<Dialogue>, ImportError> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path)
        .map_err(|source| ImportError::Io { path: path.display().to_string(), source })?;
    parse_esconv_format(&raw)
}

/// The crowdsourced-session form of a dialogue (one strategy label per
/// supporter turn, or one turn per label when several were merged).
pub fn to_esconv_session(d: &Dialogue) -> Value {
    let mut turns = Vec::new();
    for u in &d.utterances {
        let strategies = u.reasoning.as_ref().map_or(&[][..], |r| &r.strategies[..]);
        let mut turn = Map::new();
        turn.insert("speaker".into(), Value::String(u.speaker.to_string().to_lowercase()));
        turn.insert("text".into(), Value::String(u.text.clone()));
        if let Some(s) = strategies.first() {
            turn.insert("strategy".into(), Value::String(s.full_name().into()));
        }
        turns.push(Value::Object(turn));
        for s in strategies.iter().skip(1) {
            let mut extra = Map::new();
            extra.insert("speaker".into(), Value::String("supporter".into()));
            extra.insert("text".into(), Value::String(String::new()));
            extra.insert("strategy".into(), Value::String(s.full_name().into()));
            turns.push(Value::Object(extra));
        }
    }
    let mut obj = Map::new();
    obj.insert("id".into(), Value::String(d.id.clone()));
    if !d.persona_id.is_empty() {
        obj.insert("persona_id".into(), Value::String(d.persona_id.clone()));
    }
    for (k, v) in &d.meta {
        obj.entry(k.clone()).or_insert_with(|| Value::String(v.clone()));
    }
    obj.insert("dialog".into(), Value::Array(turns));
    Value::Object(obj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::{parse_dialogue, GenerationConfig};
    use crate::persona::{parse_persona, Persona, DEMO_PROFILE};
    use crate::sft::{export_sft, ExportConfig, SftRecord};
    use proptest::prelude::{prop, prop_assert_eq, proptest};

    fn demo_dialogue() -> Dialogue {
        parse_dialogue(include_str!("../../../data/demo_dialogue.json"), "p_demo", &GenerationConfig::default()).unwrap()
    }

    #[test]
    fn roundtrip_each_schema() {
        let dir = tempfile::tempdir().unwrap();
        let d = demo_dialogue();
        let p = parse_persona(DEMO_PROFILE, "demo").unwrap();
        let s = export_sft(std::slice::from_ref(&d), ExportConfig::default()).unwrap();

        let path = dir.path().join("d.jsonl");
        write_corpus(&path, Schema::Dialogue, std::slice::from_ref(&d), false).unwrap();
        assert_eq!(read_corpus::<Dialogue>(&path, Schema::Dialogue).unwrap(), vec![d]);

        let path = dir.path().join("p.jsonl");
        write_corpus(&path, Schema::Persona, std::slice::from_ref(&p), false).unwrap();
        assert_eq!(read_corpus::<Persona>(&path, Schema::Persona).unwrap(), vec![p]);

        let path = dir.path().join("s.jsonl");
        write_corpus(&path, Schema::Sft, &s, false).unwrap();
        assert_eq!(read_corpus::<SftRecord>(&path, Schema::Sft).unwrap(), s);
        assert_eq!(sniff_schema(&fs::read_to_string(&path).unwrap()), Some(Schema::Sft));
    }

    #[test]
    fn canonical_lines_are_byte_stable() {
        let d = demo_dialogue();
        let a = canonical_line(&d, Schema::Dialogue).unwrap();
        let b = canonical_line(&d.clone(), Schema::Dialogue).unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("{\"id\":"));
        assert!(!a.contains('\n'));
    }

    #[test]
    fn refuses_overwrite_without_force() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        write_corpus(&path, Schema::Dialogue, &[demo_dialogue()], false).unwrap();
        assert!(matches!(
            write_corpus::<Dialogue>(&path, Schema::Dialogue, &[], false),
            Err(StorageError::Exists { .. })
        ));
        write_corpus::<Dialogue>(&path, Schema::Dialogue, &[], true).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "");
    }

    #[test]
    fn interrupted_write_keeps_original() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        write_corpus(&path, Schema::Dialogue, &[demo_dialogue()], false).unwrap();
        let before = fs::read(&path).unwrap();
        let result = std::panic::catch_unwind(|| {
            let mut w = AtomicWriter::create(&path, true).unwrap();
            w.write_line("{\"partial\":").unwrap();
            panic!("writer killed mid-stream");
        });
        assert!(result.is_err());
        assert_eq!(fs::read(&path).unwrap(), before);
        // No temp files left behind.
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn mixed_schema_names_first_bad_line() {
        let d = canonical_line(&demo_dialogue(), Schema::Dialogue).unwrap();
        let p = canonical_line(&parse_persona(DEMO_PROFILE, "x").unwrap(), Schema::Persona).unwrap();
        let raw = format!("{d}\n{d}\n{p}\n{p}\n");
        let err = parse_corpus::<Dialogue>(&raw, Schema::Dialogue, "mixed.jsonl").unwrap_err();
        match err {
            StorageError::Line { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("schema mismatch"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
        let untagged = "{\"id\":\"x\"}\n";
        assert!(matches!(parse_corpus::<Dialogue>(untagged, Schema::Dialogue, "u"), Err(StorageError::Line { line: 1, .. })));
    }

    const MERGE_EXAMPLE: &str = r#"[[
        {"speaker": "seeker", "text": "Hi."},
        {"speaker": "seeker", "text": "I lost my job last week."},
        {"speaker": "supporter", "text": "I am sorry to hear that.", "strategy": "Reflection of feelings"},
        {"speaker": "supporter", "text": "What happened?", "strategy": "Question"}
    ]]"#;

    #[test]
    fn merges_consecutive_turns() {
        let ds = parse_esconv_format(MERGE_EXAMPLE).unwrap();
        let d = &ds[0];
        assert!(d.imported);
        assert_eq!(d.utterances.len(), 2);
        assert_eq!(d.utterances[0].text, "Hi. I lost my job last week.");
        assert_eq!(d.utterances[1].text, "I am sorry to hear that. What happened?");
        let chain = d.utterances[1].reasoning.as_ref().unwrap();
        assert_eq!(chain.strategies, [Strategy::ReflectionOfFeelings, Strategy::Question]);
        assert!(chain.situation.is_empty() && chain.thought.is_empty() && chain.action.is_empty());
    }

    #[test]
    fn esconv_objects_and_trimming() {
        let raw = r#"{"emotion_type":"anxiety","dialog":[{"speaker":"supporter","content":"Hello","annotation":{"strategy":"Question"}},{"speaker":"usr","content":"hey"},{"speaker":"sys","content":"Tell me more","annotation":{"strategy":"Question"}},{"speaker":"seeker","content":"bye"}]}
{"dialog":[{"speaker":"seeker","content":"a"},{"speaker":"supporter","content":"b","annotation":{}}]}"#;
        let ds = parse_esconv_format(raw).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds[0].utterances.len(), 2);
        assert_eq!(ds[0].utterances[0].text, "hey");
        assert_eq!(ds[0].meta["emotion_type"], "anxiety");
        assert_eq!(ds[0].utterances[1].reasoning.as_ref().unwrap().strategies, [Strategy::Question]);
        assert!(ds[1].utterances[1].reasoning.as_ref().unwrap().strategies.is_empty());
        assert_ne!(ds[0].id, ds[1].id);
    }

    #[test]
    fn unknown_labels_report_locus() {
        let raw = r#"[[{"speaker":"seeker","text":"a"},{"speaker":"robot","text":"b"}]]"#;
        let err = parse_esconv_format(raw).unwrap_err().to_string();
        assert!(err.contains("session 1, turn 2") && err.contains("robot"), "{err}");
        let raw = r#"[[{"speaker":"seeker","text":"a"},{"speaker":"supporter","text":"b","strategy":"Telepathy"}]]"#;
        let err = parse_esconv_format(raw).unwrap_err().to_string();
        assert!(err.contains("session 1, turn 2") && err.contains("Telepathy"), "{err}");
    }

    #[test]
    fn reimport_is_identity() {
        let once = parse_esconv_format(MERGE_EXAMPLE).unwrap();
        let text = serde_json::to_string(&Value::Array(once.iter().map(to_esconv_session).collect())).unwrap();
        let twice = parse_esconv_format(&text).unwrap();
        assert_eq!(once, twice);
    }

    proptest! {
        #[test]
        fn import_idempotent(turns in prop::collection::vec((proptest::bool::ANY, "[a-z]{1,6}", 0usize..9), 0..14)) {
            let session: Vec<Value> = turns
                .iter()
                .map(|(sup, text, s)| {
                    let mut m = Map::new();
                    m.insert("speaker".into(), Value::String(if *sup { "supporter" } else { "seeker" }.into()));
                    m.insert("text".into(), Value::String(text.clone()));
                    if *sup && *s < 8 {
                        m.insert("strategy".into(), Value::String(Strategy::ALL[*s].full_name().into()));
                    }
                    Value::Object(m)
                })
                .collect();
            let raw = serde_json::to_string(&Value::Array(vec![Value::Array(session)])).unwrap();
            let once = parse_esconv_format(&raw).unwrap();
            let again = serde_json::to_string(&Value::Array(once.iter().map(to_esconv_session).collect())).unwrap();
            prop_assert_eq!(parse_esconv_format(&again).unwrap(), once.clone());
            let d = &once[0];
            prop_assert_eq!(normalize_turns(d.utterances.clone()), d.utterances.clone());
        }
    }
}
