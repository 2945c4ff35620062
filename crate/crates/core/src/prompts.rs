//! Prompt templates shipped with the crate and a tiny `{{NAME}}` filler.

use std::collections::BTreeMap;

use thiserror::Error;

pub const PERSONA_TEMPLATE: &str = include_str!("../../../data/prompts/persona.txt");
pub const DIALOGUE_TEMPLATE: &str = include_str!("../../../data/prompts/dialogue.txt");
pub const BIG_FIVE_DEFINITIONS: &str = include_str!("../../../data/prompts/big_five.txt");
pub const STRATEGY_DEFINITIONS: &str = include_str!("../../../data/prompts/strategies.txt");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template placeholder {{{{{0}}}}} has no value")]
    Unbound(String),
    #[error("unterminated placeholder at byte {0}")]
    Unterminated(usize),
}

/// Replaces every `{{NAME}}` in one pass. Substituted values are never
/// rescanned, so user text containing braces is inserted literally.
pub fn fill_template(template: &str, values: &BTreeMap<&str, String>) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(template.len() + values.values().map(String::len).sum::<usize>());
    let mut rest = template;
    let mut consumed = 0;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        let close = after
            .find("}}")
            .ok_or(TemplateError::Unterminated(consumed + open))?;
        let name = &after[..close];
        let value = values
            .get(name)
            .ok_or_else(|| TemplateError::Unbound(name.to_string()))?;
        out.push_str(value);
        let step = open + 2 + close + 2;
        consumed += step;
        rest = &rest[step..];
    }
    out.push_str(rest);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vals(pairs: &[(&'static str, &str)]) -> BTreeMap<&'static str, String> {
        pairs.iter().map(|(k, v)| (*k, v.to_string())).collect()
    }

    #[test]
    fn fills_once() {
        let out = fill_template("a {{X}} b {{Y}}", &vals(&[("X", "{{Y}}"), ("Y", "2")])).unwrap();
        assert_eq!(out, "a {{Y}} b 2");
    }

    #[test]
    fn unbound_and_unterminated() {
        assert_eq!(
            fill_template("{{Z}}", &BTreeMap::new()),
            Err(TemplateError::Unbound("Z".into()))
        );
        assert_eq!(fill_template("ab {{Z", &BTreeMap::new()), Err(TemplateError::Unterminated(3)));
    }

    #[test]
    fn shipped_templates_have_expected_slots() {
        for slot in ["{{BIG_FIVE}}", "{{EXAMPLE}}", "{{OCCUPATIONS}}", "{{TOPIC}}", "{{PROBLEM}}", "{{DESCRIPTION}}"] {
            assert!(PERSONA_TEMPLATE.contains(slot), "{slot}");
        }
        for slot in [
            "{{MAX_SUPPORTER_WORDS}}",
            "{{MAX_SEEKER_WORDS}}",
            "{{STRATEGIES}}",
            "{{DEMONSTRATION}}",
            "{{STRUCTURE}}",
            "{{PERSONA}}",
        ] {
            assert!(DIALOGUE_TEMPLATE.contains(slot), "{slot}");
        }
    }
}
