//! Pulls JSON values out of free-form model output (prose, code fences,
//! trailing commentary).

use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error("no JSON {kind} found in output")]
    NotFound { kind: &'static str },
    #[error("JSON {kind} starting at byte {offset} is malformed: {message}")]
    Malformed {
        kind: &'static str,
        offset: usize,
        message: String,
    },
}

impl ExtractError {
    pub fn offset(&self) -> Option<usize> {
        match self {
            ExtractError::NotFound { .. } => None,
            ExtractError::Malformed { offset, .. } => Some(*offset),
        }
    }
}

/// End (exclusive) of the balanced value opening at `start`, ignoring
/// brackets inside strings.
fn balanced_end(text: &str, start: usize) -> Option<usize> {
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_str {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_str = false;
            }
            continue;
        }
        match b {
            b'"' => in_str = true,
            b'{' | b'[' => depth += 1,
            b'}' | b']' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

fn first_of(text: &str, openers: &[u8], kind: &'static str) -> Result<(usize, Value), ExtractError> {
    let mut first_error = None;
    for (start, b) in text.bytes().enumerate() {
        if !openers.contains(&b) {
            continue;
        }
        let Some(end) = balanced_end(text, start) else {
            first_error.get_or_insert(ExtractError::Malformed {
                kind,
                offset: start,
                message: "unbalanced brackets".into(),
            });
            continue;
        };
        match serde_json::from_str::<Value>(&text[start..end]) {
            Ok(v) => return Ok((start, v)),
            Err(e) => {
                first_error.get_or_insert(ExtractError::Malformed {
                    kind,
                    offset: start,
                    message: e.to_string(),
                });
            }
        }
    }
    Err(first_error.unwrap_or(ExtractError::NotFound { kind }))
}

/// First parseable JSON object in `text`.
pub fn first_object(text: &str) -> Result<serde_json::Map<String, Value>, ExtractError> {
    match first_of(text, b"{", "object")? {
        (_, Value::Object(m)) => Ok(m),
        _ => unreachable!("object opener yields an object"),
    }
}

/// First parseable JSON object or array, whichever comes first.
pub fn first_value(text: &str) -> Result<Value, ExtractError> {
    first_of(text, b"{[", "value").map(|(_, v)| v)
}

/// Lowercases a key and folds spaces, underscores and hyphens into single
/// spaces, so "Emotion_Label" and "emotion label" compare equal.
pub fn normalize_key(key: &str) -> String {
    key.split(|c: char| c.is_whitespace() || c == '_' || c == '-')
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}
