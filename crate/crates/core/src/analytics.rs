//! Corpus statistics, strategy distribution over conversation stages,
//! strategy transitions and persona-coverage curves.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::{persona_seed, Dialogue, Speaker};
use crate::embeddings::{cosine, Embeddings};
use crate::persona::Persona;
use crate::reasoning::Strategy;
use crate::text::{content_tokens, tokenize, word_overlap, STOPWORDS_VERSION, TOKENIZER_VERSION};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoleStats {
    pub utterances: usize,
    pub avg_per_session: f64,
    pub avg_length: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub sessions: usize,
    pub utterances: usize,
    pub avg_utterances_per_session: f64,
    pub avg_utterance_length: f64,
    pub min_session_len: usize,
    pub max_session_len: usize,
    pub seeker: RoleStats,
    pub supporter: RoleStats,
    pub tokenizer_version: String,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Table-style corpus statistics. Lengths are in shared-tokenizer tokens.
pub fn compute_stats(corpus: &[Dialogue]) -> CorpusStats {
    let sessions = corpus.len();
    let mut tokens = [0usize; 2];
    let mut counts = [0usize; 2];
    for d in corpus {
        for u in &d.utterances {
            let r = (u.speaker == Speaker::Supporter) as usize;
            counts[r] += 1;
            tokens[r] += tokenize(&u.text).len();
        }
    }
    let utterances = counts[0] + counts[1];
    let lens = corpus.iter().map(|d| d.utterances.len());
    let role = |r: usize| RoleStats {
        utterances: counts[r],
        avg_per_session: ratio(counts[r], sessions),
        avg_length: ratio(tokens[r], counts[r]),
    };
    CorpusStats {
        sessions,
        utterances,
        avg_utterances_per_session: ratio(utterances, sessions),
        avg_utterance_length: ratio(tokens[0] + tokens[1], utterances),
        min_session_len: lens.clone().min().unwrap_or(0),
        max_session_len: lens.max().unwrap_or(0),
        seeker: role(0),
        supporter: role(1),
        tokenizer_version: TOKENIZER_VERSION.into(),
    }
}

/// Dialogue counts per persona topic; dialogues with unknown personas are
/// grouped under an empty topic.
pub fn topic_counts(corpus: &[Dialogue], personas: &[Persona]) -> BTreeMap<String, usize> {
    let topic: HashMap<&str, &str> = personas.iter().map(|p| (p.id.as_str(), p.topic.as_str())).collect();
    let mut out = BTreeMap::new();
    for d in corpus {
        let t = topic.get(d.persona_id.as_str()).copied().unwrap_or("");
        *out.entry(t.to_string()).or_insert(0) += 1;
    }
    out
}

pub const STAGE_BINS: usize = 4;

/// Quarter of the conversation (1..=4) holding position `k / n`: the smallest
/// `b` with `k / n <= b / 4`. Exact integer arithmetic.
pub fn stage_bin(k: usize, n: usize) -> usize {
    debug_assert!(k >= 1 && k <= n);
    (1..=STAGE_BINS).find(|&b| STAGE_BINS * k <= b * n).unwrap_or(STAGE_BINS)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageDistribution {
    /// Strategy abbreviation -> summed weight per bin.
    pub weights: BTreeMap<String, [f64; STAGE_BINS]>,
    /// Strategy abbreviation -> share of the bin's weight.
    pub proportion: BTreeMap<String, [f64; STAGE_BINS]>,
    pub bin_totals: [f64; STAGE_BINS],
    /// Supporter turns that carried no strategy and were left out.
    pub unlabeled_turns: usize,
}

/// Where supporter strategies fall across the four quarters of each
/// dialogue. A turn with `m` strategies adds `1/m` to each.
pub fn strategy_distribution(corpus: &[Dialogue]) -> StageDistribution {
    let mut weights: BTreeMap<Strategy, [f64; STAGE_BINS]> = BTreeMap::new();
    let mut unlabeled = 0;
    for d in corpus {
        let n = d.utterances.len();
        for u in d.supporter_turns() {
            let strategies = u.reasoning.as_ref().map_or(&[][..], |r| &r.strategies[..]);
            if strategies.is_empty() || u.index == 0 || u.index > n {
                unlabeled += 1;
                continue;
            }
            let bin = stage_bin(u.index, n) - 1;
            let w = 1.0 / strategies.len() as f64;
            for s in strategies {
                weights.entry(*s).or_insert([0.0; STAGE_BINS])[bin] += w;
            }
        }
    }
    let mut totals = [0.0; STAGE_BINS];
    for row in weights.values() {
        for (t, w) in totals.iter_mut().zip(row) {
            *t += w;
        }
    }
    let proportion = weights
        .iter()
        .map(|(s, row)| {
            let mut p = [0.0; STAGE_BINS];
            for b in 0..STAGE_BINS {
                if totals[b] > 0.0 {
                    p[b] = row[b] / totals[b];
                }
            }
            (s.abbreviation().to_string(), p)
        })
        .collect();
    StageDistribution {
        weights: weights.into_iter().map(|(s, r)| (s.abbreviation().to_string(), r)).collect(),
        proportion,
        bin_totals: totals,
        unlabeled_turns: unlabeled,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransitionTable {
    pub counts: BTreeMap<String, BTreeMap<String, usize>>,
    pub probabilities: BTreeMap<String, BTreeMap<String, f64>>,
    pub total_pairs: usize,
    /// The `top_k` strategies by turn frequency, most frequent first.
    pub top_strategies: Vec<String>,
    /// `counts` restricted to `top_strategies`.
    pub top_counts: BTreeMap<String, BTreeMap<String, usize>>,
    /// Greedy walk over the most frequent unused successor edge, starting
    /// from the most frequent opening strategy.
    pub top_path: Vec<String>,
    /// Most frequent run of five consecutive strategies, with its count.
    pub top_sequence: Vec<String>,
    pub top_sequence_count: usize,
}

pub const PATH_LEN: usize = 5;

fn first_strategies(d: &Dialogue) -> Vec<Strategy> {
    d.supporter_turns()
        .filter_map(|u| u.reasoning.as_ref().and_then(|r| r.strategies.first().copied()))
        .collect()
}

/// Most frequent key; ties go to the taxonomy's earlier member.
fn argmax<K: Ord + Copy>(m: &BTreeMap<K, usize>) -> Option<K> {
    let mut best: Option<(K, usize)> = None;
    for (&k, &c) in m {
        if c > 0 && best.is_none_or(|(_, bc)| c > bc) {
            best = Some((k, c));
        }
    }
    best.map(|(k, _)| k)
}

/// Consecutive supporter-turn transitions (first strategy of each turn).
pub fn strategy_transitions(corpus: &[Dialogue], top_k: usize) -> TransitionTable {
    let top_k = top_k.max(1);
    let seqs: Vec<Vec<Strategy>> = corpus.par_iter().map(first_strategies).collect();

    let mut counts: BTreeMap<Strategy, BTreeMap<Strategy, usize>> = BTreeMap::new();
    let mut freq: BTreeMap<Strategy, usize> = BTreeMap::new();
    let mut openings: BTreeMap<Strategy, usize> = BTreeMap::new();
    let mut windows: BTreeMap<Vec<Strategy>, usize> = BTreeMap::new();
    let mut total = 0;
    for seq in &seqs {
        for s in seq {
            *freq.entry(*s).or_insert(0) += 1;
        }
        if let Some(first) = seq.first() {
            *openings.entry(*first).or_insert(0) += 1;
        }
        for w in seq.windows(2) {
            *counts.entry(w[0]).or_default().entry(w[1]).or_insert(0) += 1;
            total += 1;
        }
        for w in seq.windows(PATH_LEN) {
            *windows.entry(w.to_vec()).or_insert(0) += 1;
        }
    }

    let mut ranked: Vec<(Strategy, usize)> = freq.iter().map(|(s, c)| (*s, *c)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let top: Vec<Strategy> = ranked.iter().take(top_k).map(|(s, _)| *s).collect();
    let top_set: HashSet<Strategy> = top.iter().copied().collect();

    let mut path = Vec::new();
    if let Some(mut cur) = argmax(&openings) {
        path.push(cur);
        let mut used: HashSet<(Strategy, Strategy)> = HashSet::new();
        while path.len() < PATH_LEN {
            let Some(row) = counts.get(&cur) else { break };
            let free: BTreeMap<Strategy, usize> = row
                .iter()
                .filter(|(to, _)| !used.contains(&(cur, **to)))
                .map(|(to, c)| (*to, *c))
                .collect();
            let Some(next) = argmax(&free) else { break };
            used.insert((cur, next));
            path.push(next);
            cur = next;
        }
    }

    let mut top_sequence = Vec::new();
    let mut top_sequence_count = 0;
    for (w, &c) in &windows {
        if c > top_sequence_count {
            top_sequence_count = c;
            top_sequence = w.clone();
        }
    }

    let name = |s: &Strategy| s.abbreviation().to_string();
    let to_named = |m: &BTreeMap<Strategy, BTreeMap<Strategy, usize>>, keep: &dyn Fn(&Strategy) -> bool| {
        m.iter()
            .filter(|(f, _)| keep(f))
            .map(|(f, row)| {
                let row: BTreeMap<String, usize> = row.iter().filter(|(t, _)| keep(t)).map(|(t, c)| (name(t), *c)).collect();
                (name(f), row)
            })
            .filter(|(_, row)| !row.is_empty())
            .collect::<BTreeMap<_, _>>()
    };
    let probabilities = counts
        .iter()
        .map(|(f, row)| {
            let sum: usize = row.values().sum();
            (name(f), row.iter().map(|(t, c)| (name(t), *c as f64 / sum as f64)).collect())
        })
        .collect();
    TransitionTable {
        counts: to_named(&counts, &|_| true),
        probabilities,
        total_pairs: total,
        top_strategies: top.iter().map(name).collect(),
        top_counts: to_named(&counts, &|s| top_set.contains(s)),
        top_path: path.iter().map(name).collect(),
        top_sequence: top_sequence.iter().map(name).collect(),
        top_sequence_count,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoveragePoint {
    /// 1-based turn index within the role.
    pub t: usize,
    pub overlap_samples: usize,
    pub word_overlap_pos: f64,
    pub word_overlap_neg: f64,
    pub embed_samples: usize,
    pub embed_sim_pos: f64,
    pub embed_sim_neg: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoleCoverage {
    pub points: Vec<CoveragePoint>,
    /// Utterances with no content tokens (left out of every curve).
    pub no_content_tokens: usize,
    /// Utterances with no in-vocabulary token (left out of embedding curves).
    pub no_embedding: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoverageCurves {
    pub seeker: RoleCoverage,
    pub supporter: RoleCoverage,
    pub neg_seed: u64,
    pub stopwords_version: String,
    pub tokenizer_version: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoverageError {
    #[error("dialogue {dialogue_id} refers to unknown persona {persona_id}")]
    UnknownPersona { dialogue_id: String, persona_id: String },
    #[error("negative sampling needs at least two personas, got {0}")]
    TooFewPersonas(usize),
    #[error("embedding table is empty")]
    NoEmbeddings,
}

struct PersonaProfile {
    vocab: HashSet<String>,
    embedding: Option<Vec<f64>>,
}

#[derive(Default, Clone)]
struct Acc {
    overlap_n: usize,
    pos: f64,
    neg: f64,
    embed_n: usize,
    epos: f64,
    eneg: f64,
}

/// Persona-coverage curves: per role and role-turn index, how much of each
/// utterance overlaps its own persona versus a randomly drawn other persona.
pub fn persona_coverage(
    corpus: &[Dialogue],
    personas: &[Persona],
    embeddings: &Embeddings,
    neg_seed: u64,
) -> Result<CoverageCurves, CoverageError> {
    if embeddings.is_empty() {
        return Err(CoverageError::NoEmbeddings);
    }
    if personas.len() < 2 {
        return Err(CoverageError::TooFewPersonas(personas.len()));
    }
    let index: HashMap<&str, usize> = personas.iter().enumerate().map(|(i, p)| (p.id.as_str(), i)).collect();
    let profiles: Vec<PersonaProfile> = personas
        .par_iter()
        .map(|p| {
            let toks = content_tokens(&p.free_text());
            PersonaProfile {
                embedding: embeddings.mean(&toks),
                vocab: toks.into_iter().collect(),
            }
        })
        .collect();

    // Resolve personas and draw negatives up front so errors surface before
    // any work and sampling is independent of scheduling.
    let mut plan = Vec::with_capacity(corpus.len());
    for d in corpus {
        let pos = *index.get(d.persona_id.as_str()).ok_or_else(|| CoverageError::UnknownPersona {
            dialogue_id: d.id.clone(),
            persona_id: d.persona_id.clone(),
        })?;
        let mut rng = ChaCha8Rng::seed_from_u64(persona_seed(neg_seed, &d.id));
        let mut neg = rng.gen_range(0..personas.len() - 1);
        if neg >= pos {
            neg += 1;
        }
        plan.push((d, pos, neg));
    }

    type RoleAcc = (BTreeMap<usize, Acc>, usize, usize);
    let per_dialogue: Vec<[RoleAcc; 2]> = plan
        .par_iter()
        .map(|&(d, pos, neg)| {
            let mut out: [RoleAcc; 2] = Default::default();
            let mut turn = [0usize; 2];
            for u in &d.utterances {
                let r = (u.speaker == Speaker::Supporter) as usize;
                turn[r] += 1;
                let (curve, no_content, no_embed) = &mut out[r];
                let (Some(op), Some(on)) = (
                    word_overlap(&u.text, &profiles[pos].vocab),
                    word_overlap(&u.text, &profiles[neg].vocab),
                ) else {
                    *no_content += 1;
                    continue;
                };
                let acc = curve.entry(turn[r]).or_default();
                acc.overlap_n += 1;
                acc.pos += op;
                acc.neg += on;
                let toks = content_tokens(&u.text);
                let sims = embeddings.mean(&toks).and_then(|v| {
                    let sp = cosine(&v, profiles[pos].embedding.as_deref()?)?;
                    let sn = cosine(&v, profiles[neg].embedding.as_deref()?)?;
                    Some((sp, sn))
                });
                match sims {
                    Some((sp, sn)) => {
                        acc.embed_n += 1;
                        acc.epos += sp;
                        acc.eneg += sn;
                    }
                    None => *no_embed += 1,
                }
            }
            out
        })
        .collect();

    let mut roles: [RoleAcc; 2] = Default::default();
    for d in per_dialogue {
        for (total, part) in roles.iter_mut().zip(d) {
            for (t, a) in part.0 {
                let e = total.0.entry(t).or_default();
                e.overlap_n += a.overlap_n;
                e.pos += a.pos;
                e.neg += a.neg;
                e.embed_n += a.embed_n;
                e.epos += a.epos;
                e.eneg += a.eneg;
            }
            total.1 += part.1;
            total.2 += part.2;
        }
    }
    let finish = |(curve, no_content, no_embed): RoleAcc| RoleCoverage {
        points: curve
            .into_iter()
            .map(|(t, a)| CoveragePoint {
                t,
                overlap_samples: a.overlap_n,
                word_overlap_pos: ratio_f(a.pos, a.overlap_n),
                word_overlap_neg: ratio_f(a.neg, a.overlap_n),
                embed_samples: a.embed_n,
                embed_sim_pos: ratio_f(a.epos, a.embed_n),
                embed_sim_neg: ratio_f(a.eneg, a.embed_n),
            })
            .collect(),
        no_content_tokens: no_content,
        no_embedding: no_embed,
    };
    let [seeker, supporter] = roles;
    Ok(CoverageCurves {
        seeker: finish(seeker),
        supporter: finish(supporter),
        neg_seed,
        stopwords_version: STOPWORDS_VERSION.into(),
        tokenizer_version: TOKENIZER_VERSION.into(),
    })
}

fn ratio_f(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// CSV with one row per strategy and one column per stage bin.
pub fn distribution_csv(d: &StageDistribution) -> String {
    let mut out = String::from("strategy,bin1,bin2,bin3,bin4\n");
    for (s, p) in &d.proportion {
        out.push_str(&format!("{s},{},{},{},{}\n", p[0], p[1], p[2], p[3]));
    }
    out
}

/// CSV transition matrix over the top strategies.
pub fn transitions_csv(t: &TransitionTable) -> String {
    let mut out = String::from("from");
    for s in &t.top_strategies {
        out.push(',');
        out.push_str(s);
    }
    out.push('\n');
    for f in &t.top_strategies {
        out.push_str(f);
        for to in &t.top_strategies {
            let c = t.top_counts.get(f).and_then(|r| r.get(to)).copied().unwrap_or(0);
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
    }
    out
}

/// CSV with one row per role and turn index.
pub fn coverage_csv(c: &CoverageCurves) -> String {
    let mut out = String::from(
        "role,t,overlap_samples,word_overlap_pos,word_overlap_neg,embed_samples,embed_sim_pos,embed_sim_neg\n",
    );
    for (role, rc) in [("seeker", &c.seeker), ("supporter", &c.supporter)] {
        for p in &rc.points {
            out.push_str(&format!(
                "{role},{},{},{},{},{},{},{}\n",
                p.t, p.overlap_samples, p.word_overlap_pos, p.word_overlap_neg, p.embed_samples, p.embed_sim_pos, p.embed_sim_neg
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::Utterance;
    use crate::persona::{parse_persona, DEMO_PROFILE};
    use crate::reasoning::ReasoningChain;

    fn chain(strategies: &[Strategy]) -> ReasoningChain {
        ReasoningChain {
            situation: "s".into(),
            thought: "t".into(),
            action: "a".into(),
            strategy_rationale: String::new(),
            strategies: strategies.to_vec(),
        }
    }

    fn dialogue(id: &str, persona: &str, turns: &[(&str, &[Strategy], &str)]) -> Dialogue {
        let mut utterances = Vec::new();
        for (seek, strategies, sup) in turns {
            utterances.push(Utterance::seeker(*seek));
            utterances.push(Utterance::supporter(*sup, chain(strategies)));
        }
        for (i, u) in utterances.iter_mut().enumerate() {
            u.index = i + 1;
        }
        Dialogue {
            id: id.into(),
            persona_id: persona.into(),
            utterances,
            meta: BTreeMap::new(),
            imported: false,
        }
    }

    fn seq(id: &str, strategies: &[Strategy]) -> Dialogue {
        let turns: Vec<(&str, &[Strategy], &str)> =
            strategies.iter().map(|s| ("hi", std::slice::from_ref(s), "hello")).collect();
        dialogue(id, "p", &turns)
    }

    #[test]
    fn stats_on_fixed_lengths() {
        let a = seq("a", &[Strategy::Question; 10]);
        let b = seq("b", &[Strategy::Question; 12]);
        let s = compute_stats(&[a.clone(), b]);
        assert_eq!((s.sessions, s.utterances, s.min_session_len, s.max_session_len), (2, 44, 20, 24));
        assert_eq!(s.avg_utterances_per_session, 22.0);
        assert_eq!(s.seeker.utterances + s.supporter.utterances, s.utterances);
        assert_eq!(s.avg_utterance_length, 1.0);
        let one = compute_stats(&[a]);
        assert_eq!(one.min_session_len, one.max_session_len);
        assert_eq!(compute_stats(&[]), CorpusStats { tokenizer_version: TOKENIZER_VERSION.into(), ..Default::default() });
    }

    #[test]
    fn bins_by_exact_position() {
        assert_eq!(stage_bin(6, 24), 1);
        assert_eq!(stage_bin(7, 24), 2);
        assert_eq!(stage_bin(12, 24), 2);
        assert_eq!(stage_bin(18, 24), 3);
        assert_eq!(stage_bin(19, 24), 4);
        assert_eq!(stage_bin(24, 24), 4);
    }

    #[test]
    fn split_weight_and_normalization() {
        let d = dialogue(
            "d",
            "p",
            &[("a", &[Strategy::Question, Strategy::ReflectionOfFeelings], "b"), ("c", &[Strategy::Question], "d")],
        );
        let dist = strategy_distribution(&[d]);
        // N = 4: index 2 -> bin 2, index 4 -> bin 4.
        assert_eq!(dist.weights["E#Qu."], [0.0, 0.5, 0.0, 1.0]);
        assert_eq!(dist.proportion["EC#RF."], [0.0, 0.5, 0.0, 0.0]);
        for b in [1, 3] {
            let s: f64 = dist.proportion.values().map(|p| p[b]).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn transitions_and_top_path() {
        use Strategy::*;
        let path = [Question, Question, ReflectionOfFeelings, ProvidingSuggestions, AffirmationAndReassurance];
        let corpus: Vec<Dialogue> = (0..3).map(|i| seq(&i.to_string(), &path)).collect();
        let t = strategy_transitions(&corpus, 5);
        assert_eq!(t.top_path, ["E#Qu.", "E#Qu.", "EC#RF.", "A#PS.", "CA#AR."]);
        assert_eq!(t.top_sequence, t.top_path);
        assert_eq!(t.total_pairs, 12);

        let t = strategy_transitions(&[seq("a", &[Question, Others]), seq("b", &[Question, ShareInformation])], 5);
        assert_eq!(t.counts["E#Qu."]["Oth."], 1);
        assert_eq!(t.counts["E#Qu."]["A#SI."], 1);

        let t = strategy_transitions(&[seq("a", &[Question]), seq("b", &[Others])], 5);
        assert_eq!(t.total_pairs, 0);
    }

    #[test]
    fn transitions_ignore_dialogue_order() {
        use Strategy::*;
        let a = seq("a", &[Question, Others, Question]);
        let b = seq("b", &[ProvidingSuggestions, Question]);
        assert_eq!(strategy_transitions(&[a.clone(), b.clone()], 3), strategy_transitions(&[b, a], 3));
    }

    #[test]
    fn top_k_restricts_graph() {
        use Strategy::*;
        let t = strategy_transitions(&[seq("a", &[Question, Question, Others])], 1);
        assert_eq!(t.top_strategies, ["E#Qu."]);
        assert_eq!(t.top_counts.len(), 1);
        assert!(!t.top_counts["E#Qu."].contains_key("Oth."));
    }

    fn persona(id: &str, description: &str) -> Persona {
        let mut p = parse_persona(DEMO_PROFILE, id).unwrap();
        p.id = id.into();
        p.description = description.into();
        p.topic = String::new();
        p.question = String::new();
        p.occupation = String::new();
        p.subtopics.clear();
        p.emotion_labels.clear();
        p.previous_attempts_and_effects = String::new();
        p.current_goals_and_expectations = String::new();
        p
    }

    #[test]
    fn coverage_basics() {
        let emb = Embeddings::from_pairs([("apples", vec![1.0, 0.0]), ("rivers", vec![0.0, 1.0])]).unwrap();
        let p1 = persona("p1", "apples orchard");
        let p2 = persona("p2", "rivers boats");
        let d = dialogue("d", "p1", &[("apples orchard", &[Strategy::Question], "zebra")]);
        let c = persona_coverage(&[d], &[p1, p2], &emb, 1).unwrap();
        let s = &c.seeker.points[0];
        assert_eq!((s.word_overlap_pos, s.word_overlap_neg), (1.0, 0.0));
        assert_eq!(s.embed_sim_pos, 1.0);
        assert_eq!(s.embed_sim_neg, 0.0);
        assert_eq!(c.supporter.points[0].word_overlap_pos, 0.0);
        assert_eq!(c.supporter.no_embedding, 1);
    }

    #[test]
    fn coverage_errors() {
        let emb = Embeddings::from_pairs([("x", vec![1.0])]).unwrap();
        let p1 = persona("p1", "x");
        let d = dialogue("d", "ghost", &[("x", &[Strategy::Question], "x")]);
        assert_eq!(persona_coverage(&[], &[p1.clone()], &emb, 0), Err(CoverageError::TooFewPersonas(1)));
        assert!(matches!(
            persona_coverage(&[d], &[p1.clone(), persona("p2", "y")], &emb, 0),
            Err(CoverageError::UnknownPersona { .. })
        ));
    }

    #[test]
    fn csv_outputs_have_headers() {
        let d = seq("a", &[Strategy::Question, Strategy::Others]);
        assert!(distribution_csv(&strategy_distribution(&[d.clone()])).starts_with("strategy,bin1"));
        let t = transitions_csv(&strategy_transitions(&[d], 2));
        assert!(t.starts_with("from,E#Qu.,Oth.\nE#Qu.,0,1\n"), "{t}");
    }
}
