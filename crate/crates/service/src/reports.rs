//! Aggregates over stored judgments.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{EvalSession, Outcome, PairwiseComparison, QualityJudgment, INTERACTIVE_DIMENSIONS, QUALITY_CRITERIA};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelScores {
    pub sessions: usize,
    pub means: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub win: usize,
    pub loss: usize,
    pub tie: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model_a: String,
    pub model_b: String,
    pub dimension: String,
    #[serde(flatten)]
    pub counts: OutcomeCounts,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InteractiveReport {
    /// Keyed by agent label.
    pub models: BTreeMap<String, ModelScores>,
    pub comparisons: Vec<ComparisonRow>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusScores {
    pub judgments: usize,
    pub dialogues: usize,
    pub means: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub corpora: BTreeMap<String, CorpusScores>,
}

fn means<const N: usize>(names: &[&str; N], sums: &[u64; N], n: usize) -> BTreeMap<String, f64> {
    names.iter().zip(sums).map(|(k, s)| (k.to_string(), *s as f64 / n as f64)).collect()
}

/// Mean rating per dimension over rated sessions, and pairwise outcome
/// counts per (model_a, model_b, dimension).
pub fn interactive_report<'a>(
    sessions: impl IntoIterator<Item = &'a EvalSession>,
    comparisons: &[PairwiseComparison],
) -> InteractiveReport {
    let mut acc: BTreeMap<String, (usize, [u64; 5])> = BTreeMap::new();
    for s in sessions {
        let Some(r) = s.ratings else { continue };
        let e = acc.entry(s.agent_config.label()).or_default();
        e.0 += 1;
        for (sum, v) in e.1.iter_mut().zip(r.values()) {
            *sum += v as u64;
        }
    }
    let models = acc
        .into_iter()
        .map(|(k, (n, sums))| (k, ModelScores { sessions: n, means: means(&INTERACTIVE_DIMENSIONS, &sums, n) }))
        .collect();
    let mut counts: BTreeMap<(String, String, String), OutcomeCounts> = BTreeMap::new();
    for c in comparisons {
        let e = counts.entry((c.model_a.clone(), c.model_b.clone(), c.dimension.clone())).or_default();
        match c.outcome {
            Outcome::Win => e.win += 1,
            Outcome::Loss => e.loss += 1,
            Outcome::Tie => e.tie += 1,
        }
    }
    let comparisons = counts
        .into_iter()
        .map(|((model_a, model_b, dimension), counts)| ComparisonRow { model_a, model_b, dimension, counts })
        .collect();
    InteractiveReport { models, comparisons }
}

/// Mean score per criterion for each corpus.
pub fn quality_report<'a>(judgments: impl IntoIterator<Item = &'a QualityJudgment>) -> QualityReport {
    let mut acc: BTreeMap<String, (usize, std::collections::BTreeSet<String>, [u64; 6])> = BTreeMap::new();
    for j in judgments {
        let e = acc.entry(j.corpus.clone()).or_default();
        e.0 += 1;
        e.1.insert(j.dialogue_id.clone());
        for (sum, v) in e.2.iter_mut().zip(j.scores.values()) {
            *sum += v as u64;
        }
    }
    QualityReport {
        corpora: acc
            .into_iter()
            .map(|(k, (n, ds, sums))| {
                (k, CorpusScores { judgments: n, dialogues: ds.len(), means: means(&QUALITY_CRITERIA, &sums, n) })
            })
            .collect(),
    }
}

fn csv_string(rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(&r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}

/// One table: `means` rows carry a session count and mean; `comparison`
/// rows carry win/loss/tie counts.
pub fn interactive_csv(r: &InteractiveReport) -> String {
    let mut rows = vec![["section", "model", "model_b", "dimension", "sessions", "mean", "win", "loss", "tie"]
        .map(String::from)
        .to_vec()];
    for (model, s) in &r.models {
        for d in INTERACTIVE_DIMENSIONS {
            rows.push(vec![
                "means".into(),
                model.clone(),
                String::new(),
                d.into(),
                s.sessions.to_string(),
                format!("{:.4}", s.means[d]),
                String::new(),
                String::new(),
                String::new(),
            ]);
        }
    }
    for c in &r.comparisons {
        rows.push(vec![
            "comparison".into(),
            c.model_a.clone(),
            c.model_b.clone(),
            c.dimension.clone(),
            String::new(),
            String::new(),
            c.counts.win.to_string(),
            c.counts.loss.to_string(),
            c.counts.tie.to_string(),
        ]);
    }
    csv_string(rows)
}

pub fn quality_csv(r: &QualityReport) -> String {
    let mut rows = vec![["corpus", "criterion", "judgments", "dialogues", "mean"].map(String::from).to_vec()];
    for (corpus, s) in &r.corpora {
        for c in QUALITY_CRITERIA {
            rows.push(vec![
                corpus.clone(),
                c.into(),
                s.judgments.to_string(),
                s.dialogues.to_string(),
                format!("{:.4}", s.means[c]),
            ]);
        }
    }
    csv_string(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AgentConfig, QualityScores, Ratings, SessionState};

    fn rated(model: &str, r: [u8; 5]) -> EvalSession {
        EvalSession {
            id: "s".into(),
            evaluator_id: "e".into(),
            agent_config: AgentConfig { model: model.into(), mode: Default::default() },
            turns: vec![],
            state: SessionState::Rated,
            ratings: Some(Ratings { fluency: r[0], identification: r[1], comforting: r[2], suggestion: r[3], overall: r[4] }),
            created_at: String::new(),
        }
    }

    #[test]
    fn two_sessions_average() {
        let s = [rated("m", [3, 2, 2, 3, 3]), rated("m", [1, 2, 2, 1, 1])];
        let r = interactive_report(&s, &[]);
        assert_eq!(r.models["m"].sessions, 2);
        assert!(r.models["m"].means.values().all(|v| *v == 2.0));
        assert!(interactive_csv(&r).contains("means,m,,fluency,2,2.0000,,,"));
    }

    #[test]
    fn comparison_counts() {
        let c = PairwiseComparison {
            evaluator_id: "e".into(),
            model_a: "a".into(),
            model_b: "b".into(),
            dimension: "overall".into(),
            outcome: Outcome::Win,
        };
        let r = interactive_report(&[], &[c]);
        assert_eq!(r.comparisons[0].counts, OutcomeCounts { win: 1, loss: 0, tie: 0 });
    }

    #[test]
    fn unanimous_safety() {
        let js: Vec<QualityJudgment> = ["e1", "e2", "e3"]
            .iter()
            .map(|e| QualityJudgment {
                task_id: format!("t-{e}"),
                corpus: "ssconv".into(),
                dialogue_id: "d1".into(),
                evaluator_id: e.to_string(),
                scores: QualityScores {
                    informativeness: 2,
                    understanding: 2,
                    helpfulness: 2,
                    safety: 3,
                    specificity: 1,
                    humanlikeness: 2,
                },
            })
            .collect();
        let r = quality_report(&js);
        let c = &r.corpora["ssconv"];
        assert_eq!((c.judgments, c.dialogues), (3, 1));
        assert_eq!(c.means["safety"], 3.0);
        assert!(quality_csv(&r).contains("ssconv,safety,3,1,3.0000"));
    }
}
