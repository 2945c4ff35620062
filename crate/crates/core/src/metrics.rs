//! Automatic response metrics: BLEU-1/2, ROUGE-L, METEOR-lite, vector
//! Extrema, Distinct-1/2 and the normalized average against a baseline.
//!
//! Every score is scaled to 0..100. Per-pair work runs in parallel but sums
//! are taken in input order so results do not depend on scheduling.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;
use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::{cosine, Embeddings};
use crate::text::{tokenize, TOKENIZER_VERSION};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalPair {
    pub candidate: Vec<String>,
    pub reference: Vec<String>,
}

impl EvalPair {
    pub fn new(candidate: Vec<String>, reference: Vec<String>) -> Self {
        Self { candidate, reference }
    }

    /// Tokenizes both sides with the shared tokenizer.
    pub fn from_text(candidate: &str, reference: &str) -> Self {
        Self::new(tokenize(candidate), tokenize(reference))
    }
}

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("n must be 1 or 2, got {0}")]
    Order(usize),
    #[error("no pairs to score")]
    NoPairs,
    #[error("pair {0} has an empty reference")]
    EmptyReference(usize),
    #[error("embedding table is empty")]
    NoEmbeddings,
    #[error("baseline {metric} is {value}, must be positive")]
    Baseline { metric: &'static str, value: f64 },
    #[error("{pred} has {pred_lines} lines but {reference} has {ref_lines}")]
    LineCount {
        pred: String,
        pred_lines: usize,
        reference: String,
        ref_lines: usize,
    },
    #[error("input {0} is empty")]
    EmptyInput(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn check_pairs(pairs: &[EvalPair]) -> Result<(), MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::NoPairs);
    }
    if let Some(i) = pairs.iter().position(|p| p.reference.is_empty()) {
        return Err(MetricError::EmptyReference(i));
    }
    Ok(())
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    for g in tokens.windows(n) {
        *m.entry(g).or_insert(0) += 1;
    }
    m
}

/// Corpus-level BLEU with clipped n-gram precision, uniform weights over
/// orders 1..=n, brevity penalty and no smoothing.
pub fn bleu_n(pairs: &[EvalPair], n: usize) -> Result<f64, MetricError> {
    if !(1..=2).contains(&n) {
        return Err(MetricError::Order(n));
    }
    check_pairs(pairs)?;
    let per_pair: Vec<Vec<(usize, usize)>> = pairs
        .par_iter()
        .map(|p| {
            (1..=n)
                .map(|k| {
                    let cand = ngrams(&p.candidate, k);
                    let refs = ngrams(&p.reference, k);
                    let clipped = cand.iter().map(|(g, c)| (*c).min(*refs.get(g).unwrap_or(&0))).sum();
                    (clipped, p.candidate.len().saturating_sub(k - 1))
                })
                .collect()
        })
        .collect();
    let mut log_sum = 0.0;
    for k in 0..n {
        let (matched, total) = per_pair
            .iter()
            .fold((0usize, 0usize), |(m, t), v| (m + v[k].0, t + v[k].1));
        if matched == 0 || total == 0 {
            return Ok(0.0);
        }
        log_sum += (matched as f64 / total as f64).ln();
    }
    let c: usize = pairs.iter().map(|p| p.candidate.len()).sum();
    let r: usize = pairs.iter().map(|p| p.reference.len()).sum();
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    Ok(100.0 * bp * (log_sum / n as f64).exp())
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let above = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { above.max(row[j]) };
            diag = above;
        }
    }
    row[b.len()]
}

/// F1 from an LCS length; 0 when either side is empty or nothing matches.
pub fn rouge_l_f(lcs: usize, cand_len: usize, ref_len: usize) -> f64 {
    if lcs == 0 || cand_len == 0 || ref_len == 0 {
        return 0.0;
    }
    let p = lcs as f64 / cand_len as f64;
    let r = lcs as f64 / ref_len as f64;
    2.0 * p * r / (p + r)
}

/// Macro-averaged ROUGE-L F1.
pub fn rouge_l(pairs: &[EvalPair]) -> Result<f64, MetricError> {
    check_pairs(pairs)?;
    let scores: Vec<f64> = pairs
        .par_iter()
        .map(|p| rouge_l_f(lcs_len(&p.candidate, &p.reference), p.candidate.len(), p.reference.len()))
        .collect();
    Ok(100.0 * mean(&scores))
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn stemmer() -> &'static Stemmer {
    static S: OnceLock<Stemmer> = OnceLock::new();
    S.get_or_init(|| Stemmer::create(Algorithm::English))
}

/// Greedy two-stage alignment: exact forms, then stems, each candidate token
/// taking the leftmost free reference token. Returns (cand, ref) positions
/// sorted by candidate position.
pub fn meteor_alignment(cand: &[String], reference: &[String]) -> Vec<(usize, usize)> {
    let mut ref_used = vec![false; reference.len()];
    let mut cand_used = vec![false; cand.len()];
    let mut out = Vec::new();
    let cand_stems: Vec<String> = cand.iter().map(|t| stemmer().stem(t).into_owned()).collect();
    let ref_stems: Vec<String> = reference.iter().map(|t| stemmer().stem(t).into_owned()).collect();
    for stage in 0..2 {
        let (cs, rs) = if stage == 0 { (cand, reference) } else { (&cand_stems[..], &ref_stems[..]) };
        for (i, c) in cs.iter().enumerate() {
            if cand_used[i] {
                continue;
            }
            if let Some(j) = (0..rs.len()).find(|&j| !ref_used[j] && rs[j] == *c) {
                ref_used[j] = true;
                cand_used[i] = true;
                out.push((i, j));
            }
        }
    }
    out.sort_unstable();
    out
}

/// METEOR without the synonym stage, for one pair, in 0..1.
pub fn meteor_pair(cand: &[String], reference: &[String]) -> f64 {
    let align = meteor_alignment(cand, reference);
    let m = align.len();
    if m == 0 {
        return 0.0;
    }
    let chunks = 1 + align
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count();
    let p = m as f64 / cand.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    f_mean * (1.0 - penalty)
}

pub fn meteor_lite(pairs: &[EvalPair]) -> Result<f64, MetricError> {
    check_pairs(pairs)?;
    let scores: Vec<f64> = pairs.par_iter().map(|p| meteor_pair(&p.candidate, &p.reference)).collect();
    Ok(100.0 * mean(&scores))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtremaScore {
    pub score: f64,
    pub scored: usize,
    pub skipped: usize,
}

/// Macro-averaged cosine between extrema vectors. Pairs where either side
/// has no in-vocabulary token are skipped and counted.
pub fn extrema(pairs: &[EvalPair], embeddings: &Embeddings) -> Result<ExtremaScore, MetricError> {
    if embeddings.is_empty() {
        return Err(MetricError::NoEmbeddings);
    }
    check_pairs(pairs)?;
    let sims: Vec<Option<f64>> = pairs
        .par_iter()
        .map(|p| {
            let a = embeddings.extrema(&p.candidate)?;
            let b = embeddings.extrema(&p.reference)?;
            cosine(&a, &b)
        })
        .collect();
    let scored: Vec<f64> = sims.iter().flatten().copied().collect();
    Ok(ExtremaScore {
        score: 100.0 * mean(&scored),
        scored: scored.len(),
        skipped: sims.len() - scored.len(),
    })
}

/// Corpus-level distinct n-gram ratio.
pub fn distinct_n(candidates: &[Vec<String>], n: usize) -> Result<f64, MetricError> {
    if !(1..=2).contains(&n) {
        return Err(MetricError::Order(n));
    }
    let mut unique: HashSet<&[String]> = HashSet::new();
    let mut total = 0usize;
    for c in candidates {
        for g in c.windows(n) {
            unique.insert(g);
            total += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { 100.0 * unique.len() as f64 / total as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub b1: f64,
    pub b2: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    pub extrema: f64,
    pub d1: f64,
    pub d2: f64,
    pub n: usize,
    #[serde(default)]
    pub extrema_skipped: usize,
    #[serde(default)]
    pub tokenizer_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub navg: Option<f64>,
}

impl MetricReport {
    pub const METRICS: [&'static str; 7] = ["b1", "b2", "rouge_l", "meteor", "extrema", "d1", "d2"];

    /// A report holding only the seven values, e.g. copied from a table.
    pub fn from_values(v: [f64; 7]) -> Self {
        Self {
            b1: v[0],
            b2: v[1],
            rouge_l: v[2],
            meteor: v[3],
            extrema: v[4],
            d1: v[5],
            d2: v[6],
            n: 0,
            extrema_skipped: 0,
            tokenizer_version: TOKENIZER_VERSION.into(),
            navg: None,
        }
    }

    pub fn values(&self) -> [f64; 7] {
        [self.b1, self.b2, self.rouge_l, self.meteor, self.extrema, self.d1, self.d2]
    }
}

/// Mean of the seven per-metric ratios to the baseline. Unrounded; use
/// [`round3`] for presentation.
pub fn navg(report: &MetricReport, baseline: &MetricReport) -> Result<f64, MetricError> {
    let base = baseline.values();
    for (name, &b) in MetricReport::METRICS.iter().zip(&base) {
        if !(b > 0.0) {
            return Err(MetricError::Baseline { metric: name, value: b });
        }
    }
    let ratios: f64 = report.values().iter().zip(&base).map(|(x, b)| x / b).sum();
    Ok(ratios / 7.0)
}

pub fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// All seven metrics over already-tokenized pairs.
pub fn score_pairs(pairs: &[EvalPair], embeddings: &Embeddings) -> Result<MetricReport, MetricError> {
    let cands: Vec<Vec<String>> = pairs.iter().map(|p| p.candidate.clone()).collect();
    let ex = extrema(pairs, embeddings)?;
    Ok(MetricReport {
        b1: bleu_n(pairs, 1)?,
        b2: bleu_n(pairs, 2)?,
        rouge_l: rouge_l(pairs)?,
        meteor: meteor_lite(pairs)?,
        extrema: ex.score,
        d1: distinct_n(&cands, 1)?,
        d2: distinct_n(&cands, 2)?,
        n: pairs.len(),
        extrema_skipped: ex.skipped,
        tokenizer_version: TOKENIZER_VERSION.into(),
        navg: None,
    })
}

fn read_lines(path: &Path) -> Result<Vec<String>, MetricError> {
    let raw = fs::read_to_string(path).map_err(|source| MetricError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(raw.lines().map(str::to_string).collect())
}

/// Scores a predictions file against a references file, one response per
/// line.
pub fn evaluate_model_outputs(
    predictions: impl AsRef<Path>,
    references: impl AsRef<Path>,
    embeddings: &Embeddings,
) -> Result<MetricReport, MetricError> {
    let (pp, rp) = (predictions.as_ref(), references.as_ref());
    let pred = read_lines(pp)?;
    let refs = read_lines(rp)?;
    if pred.is_empty() {
        return Err(MetricError::EmptyInput(pp.display().to_string()));
    }
    if refs.is_empty() {
        return Err(MetricError::EmptyInput(rp.display().to_string()));
    }
    if pred.len() != refs.len() {
        return Err(MetricError::LineCount {
            pred: pp.display().to_string(),
            pred_lines: pred.len(),
            reference: rp.display().to_string(),
            ref_lines: refs.len(),
        });
    }
    let pairs: Vec<EvalPair> = pred.iter().zip(&refs).map(|(c, r)| EvalPair::from_text(c, r)).collect();
    score_pairs(&pairs, embeddings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest};

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn pair(c: &str, r: &str) -> EvalPair {
        EvalPair::new(toks(c), toks(r))
    }

    #[test]
    fn bleu_examples() {
        assert_eq!(bleu_n(&[pair("a b c", "a b c")], 2).unwrap(), 100.0);
        assert_eq!(bleu_n(&[pair("a b", "c d")], 1).unwrap(), 0.0);
        assert_abs_diff_eq!(bleu_n(&[pair("the the the", "the cat")], 1).unwrap(), 100.0 / 3.0, epsilon = 1e-12);
        // Short candidate: p1 = 1, BP = exp(1 - 4/2).
        assert_abs_diff_eq!(bleu_n(&[pair("a b", "a b c d")], 1).unwrap(), 100.0 * (-1.0f64).exp(), epsilon = 1e-12);
        assert_eq!(bleu_n(&[pair("", "a")], 1).unwrap(), 0.0);
        assert!(bleu_n(&[pair("a", "a")], 3).is_err());
        assert!(bleu_n(&[], 1).is_err());
    }

    #[test]
    fn bleu_is_corpus_level() {
        // p1 = (1 + 2) / (2 + 2), p2 = (0 + 1) / (1 + 1).
        let pairs = [pair("a x", "a b"), pair("c d", "c d")];
        let expected = 100.0 * (0.5 * ((0.75f64).ln() + (0.5f64).ln())).exp();
        assert_abs_diff_eq!(bleu_n(&pairs, 2).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn rouge_examples() {
        assert_abs_diff_eq!(rouge_l(&[pair("the cat sat", "the cat ran")]).unwrap(), 200.0 / 3.0, epsilon = 1e-12);
        assert_eq!(rouge_l(&[pair("a b", "a b")]).unwrap(), 100.0);
        assert_eq!(rouge_l(&[pair("a b", "c d")]).unwrap(), 0.0);
        assert_eq!(rouge_l(&[pair("", "c d")]).unwrap(), 0.0);
    }

    #[test]
    fn meteor_examples() {
        let m = meteor_lite(&[pair("i feel sad", "i feel sad")]).unwrap();
        assert_abs_diff_eq!(m, 100.0 * (1.0 - 0.5 / 27.0), epsilon = 1e-12);
        assert_abs_diff_eq!(m, 98.15, epsilon = 0.005);
        assert_eq!(meteor_lite(&[pair("a", "b")]).unwrap(), 0.0);
        assert_eq!(meteor_alignment(&toks("cats"), &toks("cat")), vec![(0, 0)]);
    }

    #[test]
    fn meteor_counts_chunks() {
        // "b a" vs "a b": two matches in two chunks, P = R = 1.
        let s = meteor_pair(&toks("b a"), &toks("a b"));
        assert_abs_diff_eq!(s, 1.0 - 0.5, epsilon = 1e-12);
    }

    #[test]
    fn extrema_examples() {
        let e = Embeddings::from_pairs([("x", vec![1.0, 0.0]), ("y", vec![0.0, 1.0])]).unwrap();
        let r = extrema(&[pair("x y", "y x")], &e).unwrap();
        assert_eq!(r.score, 100.0);
        let r = extrema(&[pair("x y", "x y"), pair("oov", "x")], &e).unwrap();
        assert_eq!((r.score, r.scored, r.skipped), (100.0, 1, 1));
        assert!(extrema(&[pair("x", "x")], &Embeddings::default()).is_err());
    }

    #[test]
    fn distinct_examples() {
        assert_abs_diff_eq!(distinct_n(&[toks("hello hello world")], 1).unwrap(), 200.0 / 3.0, epsilon = 1e-12);
        assert_eq!(distinct_n(&[toks("a b c")], 1).unwrap(), 100.0);
        assert_eq!(distinct_n(&[toks("a b"), toks("a b")], 2).unwrap(), 50.0);
        assert_eq!(distinct_n(&[toks("a")], 2).unwrap(), 0.0);
    }

    #[test]
    fn navg_rules() {
        let base = MetricReport::from_values([22.05, 8.96, 18.27, 15.67, 47.90, 3.47, 22.15]);
        assert_eq!(navg(&base, &base).unwrap(), 1.0);
        let mut zero = base.clone();
        zero.d1 = 0.0;
        assert!(matches!(navg(&base, &zero), Err(MetricError::Baseline { metric: "d1", .. })));
        assert_eq!(round3(1.19755), 1.198);
    }

    #[test]
    fn evaluate_files() {
        let dir = tempfile::tempdir().unwrap();
        let e = Embeddings::from_pairs([("hello", vec![1.0, 0.5]), ("there", vec![0.0, 1.0])]).unwrap();
        let p = dir.path().join("p.txt");
        let r = dir.path().join("r.txt");
        fs::write(&p, "Hello there! 😊\nhello\n").unwrap();
        fs::write(&r, "hello there\nhello\n").unwrap();
        let rep = evaluate_model_outputs(&p, &r, &e).unwrap();
        assert_eq!((rep.b1, rep.rouge_l, rep.n), (100.0, 100.0, 2));
        assert_eq!(rep.tokenizer_version, TOKENIZER_VERSION);

        fs::write(&r, "hello\n").unwrap();
        assert!(matches!(evaluate_model_outputs(&p, &r, &e), Err(MetricError::LineCount { .. })));
        fs::write(&p, "").unwrap();
        assert!(matches!(evaluate_model_outputs(&p, &r, &e), Err(MetricError::EmptyInput(_))));
    }

    fn arb_tokens() -> impl proptest::strategy::Strategy<Value = Vec<String>> {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d"]).prop_map(String::from), 0..8)
    }

    use proptest::strategy::Strategy as _;

    proptest! {
        #[test]
        fn order_invariant(mut pairs in prop::collection::vec((arb_tokens(), arb_tokens()), 1..6)) {
            pairs.iter_mut().for_each(|(_, r)| if r.is_empty() { r.push("a".into()) });
            let fwd: Vec<EvalPair> = pairs.iter().cloned().map(|(c, r)| EvalPair::new(c, r)).collect();
            let mut rev = fwd.clone();
            rev.reverse();
            prop_assert_eq!(bleu_n(&fwd, 2).unwrap(), bleu_n(&rev, 2).unwrap());
            prop_assert!((rouge_l(&fwd).unwrap() - rouge_l(&rev).unwrap()).abs() < 1e-9);
            prop_assert!(bleu_n(&fwd, 1).unwrap() <= 100.0 + 1e-9);
        }

        #[test]
        fn navg_is_scale_invariant(vals in prop::array::uniform7(0.1f64..100.0), base in prop::array::uniform7(0.1f64..100.0), k in 0.01f64..100.0) {
            let a = navg(&MetricReport::from_values(vals), &MetricReport::from_values(base)).unwrap();
            let b = navg(
                &MetricReport::from_values(vals.map(|x| x * k)),
                &MetricReport::from_values(base.map(|x| x * k)),
            ).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn lcs_matches_brute_force(a in arb_tokens(), b in arb_tokens()) {
            let brute = (0u32..(1 << a.len()))
                .filter(|mask| {
                    let sub: Vec<&String> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| &a[i]).collect();
                    let mut it = b.iter();
                    sub.iter().all(|t| it.any(|x| x == *t))
                })
                .map(|mask| mask.count_ones() as usize)
                .max()
                .unwrap_or(0);
            prop_assert_eq!(lcs_len(&a, &b), brute);
        }
    }
}
