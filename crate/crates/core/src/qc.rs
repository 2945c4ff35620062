//! Automated dialogue checks. Structural rules fail a dialogue; lexical
//! heuristics only warn.

use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::{Dialogue, GenerationConfig, Speaker};
use crate::persona::Persona;
use crate::reasoning::{extract_strategies, primary_stage, NodeMask, Stage, Strategy};
use crate::text::{content_tokens, word_count, word_overlap};

pub const R1_STRUCTURE: &str = "R1-structure";
pub const R2_COMPLETENESS: &str = "R2-reasoning-completeness";
pub const R3_STRATEGY: &str = "R3-strategy-validity";
pub const R4_LEAKAGE: &str = "R4-leakage";
pub const R5_CONSISTENCY: &str = "R5-persona-consistency";
pub const R6_STAGE_ORDER: &str = "R6-stage-order";
pub const R7_WORD_LIMIT: &str = "R7-word-limit";
pub const R8_MONOCULTURE: &str = "R8-strategy-monoculture";
pub const PERSONA_RESOLUTION: &str = "persona-resolution";

pub const MIN_UTTERANCES: usize = 18;
pub const MAX_UTTERANCES: usize = 40;
pub const LEAK_MIN_TOKEN_LEN: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QcConfig {
    pub node_mask: NodeMask,
    pub max_supporter_words: usize,
    pub max_seeker_words: usize,
    pub min_utterances: usize,
    pub max_utterances: usize,
    pub persona_overlap_min: f64,
    pub monoculture_max: f64,
}

impl Default for QcConfig {
    fn default() -> Self {
        QcConfig::from(&GenerationConfig::default())
    }
}

impl From<&GenerationConfig> for QcConfig {
    fn from(g: &GenerationConfig) -> Self {
        Self {
            node_mask: g.node_mask,
            max_supporter_words: g.max_supporter_words,
            max_seeker_words: g.max_seeker_words,
            min_utterances: MIN_UTTERANCES,
            max_utterances: MAX_UTTERANCES,
            persona_overlap_min: 0.15,
            monoculture_max: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub rule: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QcReport {
    pub dialogue_id: String,
    pub failures: Vec<Finding>,
    pub warnings: Vec<Finding>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QcError {
    #[error("dialogue {dialogue_id} belongs to persona {expected}, got persona {actual}")]
    PersonaMismatch {
        dialogue_id: String,
        expected: String,
        actual: String,
    },
}

struct Collector {
    failures: Vec<Finding>,
    warnings: Vec<Finding>,
}

impl Collector {
    fn fail(&mut self, rule: &str, detail: String) {
        self.failures.push(Finding { rule: rule.into(), detail });
    }
    fn warn(&mut self, rule: &str, detail: String) {
        self.warnings.push(Finding { rule: rule.into(), detail });
    }
}

fn check_structure(d: &Dialogue, cfg: &QcConfig, c: &mut Collector) {
    let u = &d.utterances;
    let n = u.len();
    if n == 0 {
        c.fail(R1_STRUCTURE, "dialogue has no utterances".into());
        return;
    }
    if u[0].speaker != Speaker::Seeker {
        c.fail(R1_STRUCTURE, "first utterance is not from the seeker".into());
    }
    if u[n - 1].speaker != Speaker::Supporter {
        c.fail(R1_STRUCTURE, "last utterance is not from the supporter".into());
    }
    if let Some(w) = u.windows(2).find(|w| w[0].speaker == w[1].speaker) {
        c.fail(
            R1_STRUCTURE,
            format!("utterances {} and {} are both from the {}", w[0].index, w[1].index, w[0].speaker),
        );
    }
    if !d.imported && !(cfg.min_utterances..=cfg.max_utterances).contains(&n) {
        c.fail(
            R1_STRUCTURE,
            format!("{n} utterances, expected {} to {}", cfg.min_utterances, cfg.max_utterances),
        );
    }
    for x in u {
        if x.text.trim().is_empty() {
            c.fail(R1_STRUCTURE, format!("utterance {} is empty", x.index));
        }
        if x.speaker == Speaker::Seeker && x.reasoning.is_some() {
            c.fail(R1_STRUCTURE, format!("seeker utterance {} carries reasoning", x.index));
        }
    }
    if u.iter().enumerate().any(|(i, x)| x.index != i + 1) {
        c.fail(R1_STRUCTURE, "utterance indices are not 1..n".into());
    }
}

fn check_reasoning(d: &Dialogue, cfg: &QcConfig, c: &mut Collector) {
    for u in d.supporter_turns() {
        let Some(chain) = &u.reasoning else {
            c.fail(R2_COMPLETENESS, format!("utterance {} has no reasoning", u.index));
            continue;
        };
        if d.imported {
            if chain.strategies.is_empty() {
                c.fail(R2_COMPLETENESS, format!("utterance {} has no strategy", u.index));
            }
        } else {
            let missing = chain.missing_nodes(cfg.node_mask);
            if !missing.is_empty() {
                let names: Vec<String> = missing.iter().map(ToString::to_string).collect();
                c.fail(
                    R2_COMPLETENESS,
                    format!("utterance {} is missing {}", u.index, names.join(", ")),
                );
            }
        }
        // Stored labels must be exactly what the rationale names.
        let rationale = chain.strategy_rationale.trim();
        if !rationale.is_empty() {
            let named = extract_strategies(rationale);
            if named != chain.strategies {
                c.fail(
                    R3_STRATEGY,
                    format!(
                        "utterance {}: rationale names {:?} but stored strategies are {:?}",
                        u.index,
                        named.iter().map(|s| s.abbreviation()).collect::<Vec<_>>(),
                        chain.strategies.iter().map(|s| s.abbreviation()).collect::<Vec<_>>()
                    ),
                );
            }
        }
    }
}

fn persona_vocab(p: &Persona) -> HashSet<String> {
    content_tokens(&p.free_text()).into_iter().collect()
}

/// Mean over seeker utterances of the share of distinct content tokens found
/// in the persona text. Utterances without content tokens are skipped.
pub fn seeker_persona_overlap(d: &Dialogue, persona: &Persona) -> Option<f64> {
    let vocab = persona_vocab(persona);
    let scores: Vec<f64> = d
        .utterances
        .iter()
        .filter(|u| u.speaker == Speaker::Seeker)
        .filter_map(|u| word_overlap(&u.text, &vocab))
        .collect();
    (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64)
}

fn check_heuristics(d: &Dialogue, persona: &Persona, cfg: &QcConfig, c: &mut Collector) {
    let vocab = persona_vocab(persona);
    let mut said_by_seeker: HashSet<String> = HashSet::new();
    for u in &d.utterances {
        let toks = content_tokens(&u.text);
        match u.speaker {
            Speaker::Seeker => said_by_seeker.extend(toks),
            Speaker::Supporter => {
                let mut leaked: Vec<&str> = toks
                    .iter()
                    .filter(|t| t.chars().count() >= LEAK_MIN_TOKEN_LEN)
                    .filter(|t| vocab.contains(*t) && !said_by_seeker.contains(*t))
                    .map(String::as_str)
                    .collect();
                leaked.sort_unstable();
                leaked.dedup();
                if !leaked.is_empty() {
                    c.warn(
                        R4_LEAKAGE,
                        format!("utterance {} mentions unshared persona words: {}", u.index, leaked.join(", ")),
                    );
                }
            }
        }
    }

    if let Some(overlap) = seeker_persona_overlap(d, persona) {
        if overlap < cfg.persona_overlap_min {
            c.warn(
                R5_CONSISTENCY,
                format!("mean seeker overlap {overlap:.3} is below {}", cfg.persona_overlap_min),
            );
        }
    }

    let n = d.utterances.len();
    let mut first_seen: BTreeMap<Stage, usize> = BTreeMap::new();
    for u in d.supporter_turns() {
        let strategies = u.reasoning.as_ref().map_or(&[][..], |r| &r.strategies[..]);
        if let Some(stage) = primary_stage(strategies, u.index as f64 / n as f64) {
            first_seen.entry(stage).or_insert(u.index);
        }
    }
    let order: Vec<(Stage, usize)> = first_seen.into_iter().collect();
    for (i, &(earlier, at_e)) in order.iter().enumerate() {
        for &(later, at_l) in &order[i + 1..] {
            if at_l < at_e {
                c.warn(
                    R6_STAGE_ORDER,
                    format!(
                        "{} first appears at utterance {at_l}, before {} at utterance {at_e}",
                        later.name(),
                        earlier.name()
                    ),
                );
            }
        }
    }

    for u in &d.utterances {
        let limit = match u.speaker {
            Speaker::Seeker => cfg.max_seeker_words,
            Speaker::Supporter => cfg.max_supporter_words,
        };
        let words = word_count(&u.text);
        if words > limit {
            c.warn(
                R7_WORD_LIMIT,
                format!("{} utterance {} has {words} words (limit {limit})", u.speaker, u.index),
            );
        }
    }

    let turns = d.supporter_turns().count();
    if turns > 0 {
        let mut per_strategy: HashMap<Strategy, usize> = HashMap::new();
        for u in d.supporter_turns() {
            let mut seen: Vec<Strategy> = u.reasoning.as_ref().map(|r| r.strategies.clone()).unwrap_or_default();
            seen.sort();
            seen.dedup();
            for s in seen {
                *per_strategy.entry(s).or_default() += 1;
            }
        }
        let mut heavy: Vec<(Strategy, usize)> = per_strategy
            .into_iter()
            .filter(|&(_, k)| k as f64 / turns as f64 > cfg.monoculture_max)
            .collect();
        heavy.sort();
        for (s, k) in heavy {
            c.warn(
                R8_MONOCULTURE,
                format!("{} is used in {k} of {turns} supporter turns", s.abbreviation()),
            );
        }
    }
}

/// Runs all rules in order. Pure in its inputs.
pub fn check_dialogue(d: &Dialogue, persona: &Persona, cfg: &QcConfig) -> Result<QcReport, QcError> {
    if d.persona_id != persona.id {
        return Err(QcError::PersonaMismatch {
            dialogue_id: d.id.clone(),
            expected: d.persona_id.clone(),
            actual: persona.id.clone(),
        });
    }
    let mut c = Collector { failures: Vec::new(), warnings: Vec::new() };
    check_structure(d, cfg, &mut c);
    check_reasoning(d, cfg, &mut c);
    check_heuristics(d, persona, cfg, &mut c);
    Ok(QcReport {
        dialogue_id: d.id.clone(),
        passed: c.failures.is_empty(),
        failures: c.failures,
        warnings: c.warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcSummary {
    pub dialogues: usize,
    pub passed: usize,
    pub pass_rate: f64,
    pub failures_by_rule: BTreeMap<String, usize>,
    pub warnings_by_rule: BTreeMap<String, usize>,
    pub persona_overlap_min: f64,
    pub monoculture_max: f64,
    pub min_utterances: usize,
    pub max_utterances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusQc {
    pub summary: QcSummary,
    pub reports: Vec<QcReport>,
}

/// Checks every dialogue against its persona. A dialogue whose persona is
/// not in the bank gets a failing report instead of aborting the run.
pub fn check_corpus(corpus: &[Dialogue], personas: &[Persona], cfg: &QcConfig) -> CorpusQc {
    let bank: HashMap<&str, &Persona> = personas.iter().map(|p| (p.id.as_str(), p)).collect();
    let reports: Vec<QcReport> = corpus
        .par_iter()
        .map(|d| match bank.get(d.persona_id.as_str()) {
            Some(p) => check_dialogue(d, p, cfg).expect("looked up by id"),
            None => QcReport {
                dialogue_id: d.id.clone(),
                failures: vec![Finding {
                    rule: PERSONA_RESOLUTION.into(),
                    detail: format!("persona {} is not in the bank", d.persona_id),
                }],
                warnings: Vec::new(),
                passed: false,
            },
        })
        .collect();
    let mut failures_by_rule = BTreeMap::new();
    let mut warnings_by_rule = BTreeMap::new();
    for r in &reports {
        for f in &r.failures {
            *failures_by_rule.entry(f.rule.clone()).or_insert(0) += 1;
        }
        for w in &r.warnings {
            *warnings_by_rule.entry(w.rule.clone()).or_insert(0) += 1;
        }
    }
    let passed = reports.iter().filter(|r| r.passed).count();
    let pass_rate = if reports.is_empty() { 1.0 } else { passed as f64 / reports.len() as f64 };
    CorpusQc {
        summary: QcSummary {
            dialogues: reports.len(),
            passed,
            pass_rate,
            failures_by_rule,
            warnings_by_rule,
            persona_overlap_min: cfg.persona_overlap_min,
            monoculture_max: cfg.monoculture_max,
            min_utterances: cfg.min_utterances,
            max_utterances: cfg.max_utterances,
        },
        reports,
    }
}
