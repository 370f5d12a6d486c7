//! Exact-match scoring of key phrases, relations and the combined pipeline.

use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::data_io::AnnotatedCorpus;
use crate::loss::Prf;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub correct: usize,
    pub spurious: usize,
    pub missing: usize,
}

impl Scores {
    pub fn from_counts(correct: usize, spurious: usize, missing: usize) -> Self {
        let p = Prf::from_counts(correct, spurious, missing);
        Scores {
            precision: p.precision,
            recall: p.recall,
            f1: p.f1,
            correct,
            spurious,
            missing,
        }
    }

    /// Pooled counts of both.
    pub fn combine(&self, other: &Scores) -> Scores {
        Scores::from_counts(
            self.correct + other.correct,
            self.spurious + other.spurious,
            self.missing + other.missing,
        )
    }
}

impl fmt::Display for Scores {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "precision={:.4} recall={:.4} f1={:.4} correct={} spurious={} missing={}",
            self.precision, self.recall, self.f1, self.correct, self.spurious, self.missing
        )
    }
}

/// One-to-one matching of two multisets of keys.
fn match_counts<K: Eq + Hash>(gold: impl IntoIterator<Item = K>, pred: impl IntoIterator<Item = K>) -> Scores {
    let mut pool: HashMap<K, usize> = HashMap::new();
    let mut n_gold = 0;
    for k in gold {
        *pool.entry(k).or_default() += 1;
        n_gold += 1;
    }
    let (mut correct, mut spurious) = (0, 0);
    for k in pred {
        match pool.get_mut(&k) {
            Some(c) if *c > 0 => {
                *c -= 1;
                correct += 1;
            }
            _ => spurious += 1,
        }
    }
    Scores::from_counts(correct, spurious, n_gold - correct)
}

type PhraseKey = ((usize, usize), usize);

fn phrase_keys(c: &AnnotatedCorpus) -> HashMap<usize, PhraseKey> {
    c.kphrases.iter().map(|k| (k.id, (k.char_span, k.class_id))).collect()
}

/// Key phrases match on character span and class.
pub fn score_task_a(gold: &AnnotatedCorpus, pred: &AnnotatedCorpus) -> Scores {
    match_counts(
        gold.kphrases.iter().map(|k| (k.char_span, k.class_id)),
        pred.kphrases.iter().map(|k| (k.char_span, k.class_id)),
    )
}

/// Relations match on name and on both endpoints' span and class. Endpoints
/// are resolved in each corpus's own phrase list; a relation whose endpoint
/// is not found there can only be spurious (or missing).
pub fn score_task_b(gold: &AnnotatedCorpus, pred: &AnnotatedCorpus) -> Scores {
    let gk = phrase_keys(gold);
    let pk = phrase_keys(pred);
    let key = |keys: &HashMap<usize, PhraseKey>, rel: &str, s: usize, t: usize| {
        (rel.to_string(), keys.get(&s).copied(), keys.get(&t).copied())
    };
    let gold_keys = gold
        .relations
        .iter()
        .map(|r| key(&gk, gold.schema.relation_name(r.relation), r.source, r.target));
    let pred_keys = pred
        .relations
        .iter()
        .map(|r| key(&pk, pred.schema.relation_name(r.relation), r.source, r.target));
    match_counts(gold_keys, pred_keys)
}

/// Micro-average over the pooled counts of both tasks.
pub fn score_pipeline(gold: &AnnotatedCorpus, pred: &AnnotatedCorpus) -> Scores {
    score_task_a(gold, pred).combine(&score_task_b(gold, pred))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task_a: Option<Scores>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task_b: Option<Scores>,
    pub overall: Scores,
}

impl EvalReport {
    /// Scenario 1 pools both tasks, 2 scores phrases, 3 scores relations.
    pub fn new(scenario: u8, gold: &AnnotatedCorpus, pred: &AnnotatedCorpus) -> Self {
        let a = score_task_a(gold, pred);
        let b = score_task_b(gold, pred);
        match scenario {
            2 => EvalReport {
                scenario,
                task_a: Some(a),
                task_b: None,
                overall: a,
            },
            3 => EvalReport {
                scenario,
                task_a: None,
                task_b: Some(b),
                overall: b,
            },
            _ => EvalReport {
                scenario,
                task_a: Some(a),
                task_b: Some(b),
                overall: a.combine(&b),
            },
        }
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scenario {}", self.scenario)?;
        if let Some(a) = &self.task_a {
            writeln!(f, "task_a {a}")?;
        }
        if let Some(b) = &self.task_b {
            writeln!(f, "task_b {b}")?;
        }
        writeln!(f, "overall {}", self.overall)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::{parse_standoff_str, Schema};

    const TEXT: &str = "el virus ataca la célula\n";

    fn corpus(ann: &str) -> AnnotatedCorpus {
        parse_standoff_str(TEXT, ann, None, &Schema::default()).unwrap()
    }

    const GOLD: &str = "T1\tC1 3 8\tvirus\nT2\tC2 9 14\tataca\nT3\tC1 18 24\tcélula\n\
                        R1\tsubject Arg1:T2 Arg2:T1\nR2\ttarget Arg1:T2 Arg2:T3\n";

    #[test]
    fn identical_is_perfect() {
        let g = corpus(GOLD);
        for s in [score_task_a(&g, &g), score_task_b(&g, &g), score_pipeline(&g, &g)] {
            assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        }
        assert_eq!(score_pipeline(&g, &g).correct, 5);
    }

    #[test]
    fn wrong_class_is_spurious_and_missing() {
        let g = corpus("T1\tC1 3 8\tvirus\n");
        let p = corpus("T1\tC2 3 8\tvirus\n");
        let s = score_task_a(&g, &p);
        assert_eq!((s.correct, s.spurious, s.missing), (0, 1, 1));
    }

    #[test]
    fn empty_predictions() {
        let g = corpus(GOLD);
        let s = score_task_a(&g, &g.unannotated());
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn reversed_and_renamed_relations() {
        let g = corpus(GOLD);
        let rev = corpus(
            "T1\tC1 3 8\tvirus\nT2\tC2 9 14\tataca\nT3\tC1 18 24\tcélula\n\
             R1\tsubject Arg1:T1 Arg2:T2\nR2\tdomain Arg1:T2 Arg2:T3\n",
        );
        let s = score_task_b(&g, &rev);
        assert_eq!((s.correct, s.spurious, s.missing), (0, 2, 2));
    }

    #[test]
    fn relations_follow_phrase_alignment_not_ids() {
        let g = corpus(GOLD);
        let p = corpus(
            "T7\tC1 18 24\tcélula\nT8\tC2 9 14\tataca\nT9\tC1 3 8\tvirus\n\
             R1\ttarget Arg1:T8 Arg2:T7\n",
        );
        let s = score_task_b(&g, &p);
        assert_eq!((s.correct, s.spurious, s.missing), (1, 0, 1));
        // An endpoint with the wrong class cannot align.
        let q = corpus("T1\tC3 3 8\tvirus\nT2\tC2 9 14\tataca\nR1\tsubject Arg1:T2 Arg2:T1\n");
        let s = score_task_b(&g, &q);
        assert_eq!((s.correct, s.spurious), (0, 1));
    }

    #[test]
    fn pipeline_pools_counts() {
        let g = corpus(GOLD);
        let mut p = g.clone();
        p.relations.clear();
        let s = score_pipeline(&g, &p);
        assert_eq!((s.correct, s.spurious, s.missing), (3, 0, 2));
        assert_eq!(s.precision, 1.0);
        assert!(s.recall < 1.0);
    }

    #[test]
    fn report_is_machine_readable() {
        let g = corpus(GOLD);
        let r = EvalReport::new(2, &g, &g);
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v["overall"]["f1"], 1.0);
        assert!(v.get("task_b").is_none());
        assert!(r.to_string().contains("task_a precision=1.0000"));
    }
}
