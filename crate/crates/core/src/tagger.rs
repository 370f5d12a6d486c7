//! Key-phrase extraction: one binary ensemble per class, PoS-pair span
//! joining and weighted resolution of tokens claimed by several classes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data_io::{AnnotatedCorpus, KeyPhrase, Sentence};
use crate::encoding::FeatureEncoder;
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::eval::score_task_a;
use crate::train::{Dataset, TrainConfig};

pub const DEFAULT_JOIN_THRESHOLD: f64 = 0.5;
pub const DEFAULT_WEIGHT_GRID: [f64; 5] = [0.6, 0.8, 1.0, 1.2, 1.4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinRule {
    pub joined: usize,
    pub total: usize,
    pub join: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct JoinRuleEntry {
    left: String,
    right: String,
    #[serde(flatten)]
    rule: JoinRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct JoinRuleRepr {
    threshold: f64,
    default_join: bool,
    rules: Vec<JoinRuleEntry>,
}

/// Whether two adjacent positive tokens of one class belong to the same
/// phrase, decided by their PoS pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "JoinRuleRepr", into = "JoinRuleRepr")]
pub struct JoinRuleTable {
    pub threshold: f64,
    pub default_join: bool,
    pub rules: BTreeMap<(String, String), JoinRule>,
}

impl From<JoinRuleRepr> for JoinRuleTable {
    fn from(r: JoinRuleRepr) -> Self {
        JoinRuleTable {
            threshold: r.threshold,
            default_join: r.default_join,
            rules: r.rules.into_iter().map(|e| ((e.left, e.right), e.rule)).collect(),
        }
    }
}

impl From<JoinRuleTable> for JoinRuleRepr {
    fn from(t: JoinRuleTable) -> Self {
        JoinRuleRepr {
            threshold: t.threshold,
            default_join: t.default_join,
            rules: t
                .rules
                .into_iter()
                .map(|((left, right), rule)| JoinRuleEntry { left, right, rule })
                .collect(),
        }
    }
}

impl JoinRuleTable {
    /// Joins everything.
    pub fn empty(threshold: f64) -> Self {
        JoinRuleTable {
            threshold,
            default_join: true,
            rules: BTreeMap::new(),
        }
    }

    pub fn joins(&self, left: &str, right: &str) -> bool {
        self.rules
            .get(&(left.to_string(), right.to_string()))
            .map_or(self.default_join, |r| r.join)
    }
}

/// Per token, the first gold phrase (in span order) covering it.
fn covering_phrases(len: usize, phrases: &[&KeyPhrase]) -> Vec<Option<usize>> {
    let mut cover = vec![None; len];
    for (i, k) in phrases.iter().enumerate() {
        for c in cover.iter_mut().take(k.token_span.1.min(len)).skip(k.token_span.0) {
            c.get_or_insert(i);
        }
    }
    cover
}

/// Per-token class id of the covering phrase, 0 outside phrases.
pub fn token_kinds(sentence: &Sentence, phrases: &[&KeyPhrase]) -> Vec<usize> {
    covering_phrases(sentence.tokens.len(), phrases)
        .into_iter()
        .map(|c| c.map_or(0, |i| phrases[i].class_id))
        .collect()
}

/// Tallies adjacent token pairs lying in gold phrases of one class and
/// how often both are in the same phrase.
pub fn learn_join_rules(train: &AnnotatedCorpus, threshold: f64) -> JoinRuleTable {
    let mut counts: BTreeMap<(String, String), (usize, usize)> = BTreeMap::new();
    for (s, phrases) in train.sentences.iter().zip(train.phrases_by_sentence()) {
        let cover = covering_phrases(s.tokens.len(), &phrases);
        for t in 1..s.tokens.len() {
            if let (Some(a), Some(b)) = (cover[t - 1], cover[t]) {
                if phrases[a].class_id != phrases[b].class_id {
                    continue;
                }
                let e = counts
                    .entry((s.tokens[t - 1].pos.clone(), s.tokens[t].pos.clone()))
                    .or_default();
                e.1 += 1;
                if a == b {
                    e.0 += 1;
                }
            }
        }
    }
    JoinRuleTable {
        threshold,
        default_join: true,
        rules: counts
            .into_iter()
            .map(|(k, (joined, total))| {
                let join = joined as f64 / total as f64 >= threshold;
                (k, JoinRule { joined, total, join })
            })
            .collect(),
    }
}

/// Maximal runs of positive tokens, split where the PoS pair does not join.
pub fn segment<P: AsRef<str>>(bits: &[bool], pos: &[P], rules: &JoinRuleTable) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    for t in 0..bits.len() {
        if !bits[t] {
            if let Some(s) = start.take() {
                spans.push((s, t));
            }
            continue;
        }
        if let Some(s) = start {
            if !rules.joins(pos[t - 1].as_ref(), pos[t].as_ref()) {
                spans.push((s, t));
                start = Some(t);
            }
        } else {
            start = Some(t);
        }
    }
    if let Some(s) = start {
        spans.push((s, bits.len()));
    }
    spans
}

/// Per-token winning class (1-based position in `votes`) or 0.
///
/// `votes[c]` holds the bits and vote counts of class `c + 1`. A token
/// positive in several classes goes to the largest `count × weight`, ties
/// to the lower class.
pub fn resolve_class_conflicts(votes: &[(Vec<bool>, Vec<usize>)], weights: &[f64]) -> Vec<usize> {
    let len = votes.first().map_or(0, |v| v.0.len());
    (0..len)
        .map(|t| {
            let mut best: Option<(usize, f64)> = None;
            for (c, (bits, counts)) in votes.iter().enumerate() {
                if !bits[t] {
                    continue;
                }
                let score = counts[t] as f64 * weights[c];
                if best.is_none_or(|(_, b)| score > b) {
                    best = Some((c + 1, score));
                }
            }
            best.map_or(0, |(c, _)| c)
        })
        .collect()
}

/// Token bits of phrases of class `class_id`.
pub fn class_labels(sentence: &Sentence, phrases: &[&KeyPhrase], class_id: usize) -> Vec<bool> {
    let mut y = vec![false; sentence.tokens.len()];
    for k in phrases.iter().filter(|k| k.class_id == class_id) {
        for b in &mut y[k.token_span.0..k.token_span.1] {
            *b = true;
        }
    }
    y
}

/// Task-A features of every sentence.
pub fn encode_corpus(corpus: &AnnotatedCorpus, encoder: &FeatureEncoder) -> Result<Vec<Vec<f64>>> {
    corpus
        .sentences
        .iter()
        .map(|s| encoder.features_a(&s.words(), &s.pos_tags()))
        .collect()
}

pub fn class_dataset(
    corpus: &AnnotatedCorpus,
    features: &[Vec<f64>],
    feature_dim: usize,
    class_id: usize,
) -> Result<Dataset> {
    let mut d = Dataset::new(feature_dim);
    for ((s, phrases), x) in corpus.sentences.iter().zip(corpus.phrases_by_sentence()).zip(features) {
        d.push(x.clone(), class_labels(s, &phrases, class_id))?;
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassEnsemble {
    pub class_id: usize,
    pub ensemble: Ensemble,
    pub weight: f64,
}

/// Trains and prunes the ensemble for one class.
pub fn train_class_ensemble(
    train: &Dataset,
    dev: &Dataset,
    class_id: usize,
    base_seed: u64,
    cfg: &TrainConfig,
    prune_sigma: f64,
    workers: usize,
) -> Result<ClassEnsemble> {
    if train.positives() == 0 {
        return Err(Error::Config(format!("class {class_id} has no training phrases")));
    }
    let mut ensemble = Ensemble::train(train, dev, base_seed, cfg, workers, &format!("class {class_id}"))?;
    ensemble.prune(prune_sigma);
    log::info!(
        "class {class_id} kept {}/{} members",
        ensemble.kept_count(),
        ensemble.members.len()
    );
    Ok(ClassEnsemble {
        class_id,
        ensemble,
        weight: 1.0,
    })
}

/// Everything needed to tag key phrases.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyPhraseModel {
    /// Indexed by class id − 1; classes without a model get `None`.
    pub classes: Vec<Option<ClassEnsemble>>,
    pub rules: JoinRuleTable,
}

/// Per sentence, per class: (majority bits, vote counts).
pub type SentenceVotes = Vec<(Vec<bool>, Vec<usize>)>;

impl KeyPhraseModel {
    pub fn weights(&self) -> Vec<f64> {
        self.classes.iter().map(|c| c.as_ref().map_or(1.0, |c| c.weight)).collect()
    }

    pub fn set_weights(&mut self, weights: &[f64]) {
        for (c, &w) in self.classes.iter_mut().zip(weights) {
            if let Some(c) = c {
                c.weight = w;
            }
        }
    }

    /// Votes of every class ensemble on every sentence. Classes without a
    /// model vote nothing.
    pub fn votes(&self, features: &[Vec<f64>], lengths: &[usize]) -> Result<Vec<SentenceVotes>> {
        features
            .iter()
            .zip(lengths)
            .map(|(x, &len)| {
                self.classes
                    .iter()
                    .map(|c| match c {
                        Some(c) => c.ensemble.vote(x),
                        None => Ok((vec![false; len], vec![0; len])),
                    })
                    .collect()
            })
            .collect()
    }
}

/// Phrases of one sentence from its votes; ids are left at 0.
pub fn phrases_from_votes(
    sentence: &Sentence,
    votes: &SentenceVotes,
    weights: &[f64],
    rules: &JoinRuleTable,
) -> Vec<KeyPhrase> {
    let winners = resolve_class_conflicts(votes, weights);
    let pos = sentence.pos_tags();
    let mut out = Vec::new();
    for class_id in 1..=votes.len() {
        let bits: Vec<bool> = winners.iter().map(|&w| w == class_id).collect();
        for (a, b) in segment(&bits, &pos, rules) {
            out.push(KeyPhrase {
                id: 0,
                sentence_id: sentence.id,
                token_span: (a, b),
                char_span: (sentence.tokens[a].start, sentence.tokens[b - 1].end),
                class_id,
            });
        }
    }
    out.sort_by_key(|k| k.token_span);
    out
}

/// A copy of `corpus` without annotations, carrying the predicted phrases
/// numbered `1..` in document order.
pub fn corpus_from_votes(
    corpus: &AnnotatedCorpus,
    votes: &[SentenceVotes],
    weights: &[f64],
    rules: &JoinRuleTable,
) -> AnnotatedCorpus {
    let mut out = corpus.unannotated();
    for (s, v) in corpus.sentences.iter().zip(votes) {
        for mut k in phrases_from_votes(s, v, weights, rules) {
            k.id = out.kphrases.len() + 1;
            out.kphrases.push(k);
        }
    }
    out
}

pub fn predict_kphrases(
    corpus: &AnnotatedCorpus,
    model: &KeyPhraseModel,
    encoder: &FeatureEncoder,
) -> Result<AnnotatedCorpus> {
    let features = encode_corpus(corpus, encoder)?;
    let lengths: Vec<usize> = corpus.sentences.iter().map(|s| s.tokens.len()).collect();
    let votes = model.votes(&features, &lengths)?;
    Ok(corpus_from_votes(corpus, &votes, &model.weights(), &model.rules))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub weights: Vec<f64>,
    pub f1: f64,
    pub evaluations: usize,
}

/// Exhaustive search over `grid` for every class but the first, whose
/// weight stays 1.0. The objective is span+class F1 on `dev`; the first
/// combination reaching the maximum wins. Classes without a model keep 1.0.
pub fn grid_search_weights(
    dev: &AnnotatedCorpus,
    votes: &[SentenceVotes],
    rules: &JoinRuleTable,
    present: &[bool],
    grid: &[f64],
) -> Result<GridSearchResult> {
    if grid.is_empty() || grid.iter().any(|&w| !(w.is_finite() && w > 0.0)) {
        return Err(Error::Config("weight grid must be non-empty and positive".into()));
    }
    let free: Vec<usize> = present
        .iter()
        .enumerate()
        .filter(|(_, &p)| p)
        .map(|(i, _)| i)
        .skip(1)
        .collect();
    let mut weights = vec![1.0; present.len()];
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut evaluations = 0;
    let mut idx = vec![0usize; free.len()];
    loop {
        for (slot, &c) in free.iter().enumerate() {
            weights[c] = grid[idx[slot]];
        }
        let pred = corpus_from_votes(dev, votes, &weights, rules);
        let f1 = score_task_a(dev, &pred).f1;
        evaluations += 1;
        if best.as_ref().is_none_or(|(b, _)| f1 > *b) {
            best = Some((f1, weights.clone()));
        }
        // Odometer over the free classes, last class fastest.
        let mut k = free.len();
        loop {
            if k == 0 {
                let (f1, weights) = best.expect("at least one evaluation");
                return Ok(GridSearchResult {
                    weights,
                    f1,
                    evaluations,
                });
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < grid.len() {
                break;
            }
            idx[k] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::{parse_standoff_str, parse_token_columns_str, Schema};
    use std::path::Path;

    fn bits(s: &str) -> Vec<bool> {
        s.chars().map(|c| c == '1').collect()
    }

    #[test]
    fn segmentation_examples() {
        let all = JoinRuleTable::empty(0.5);
        assert_eq!(segment(&bits("1101"), &["A"; 4], &all), vec![(0, 2), (3, 4)]);
        assert!(segment(&bits("0000"), &["A"; 4], &all).is_empty());
        let mut split = JoinRuleTable::empty(0.5);
        split.rules.insert(
            ("NOUN".into(), "VERB".into()),
            JoinRule {
                joined: 1,
                total: 10,
                join: false,
            },
        );
        assert_eq!(segment(&bits("11"), &["NOUN", "VERB"], &split), vec![(0, 1), (1, 2)]);
        assert_eq!(segment(&bits("11"), &["VERB", "NOUN"], &split), vec![(0, 2)]);
    }

    #[test]
    fn conflict_examples() {
        let v = |b: &str, c: Vec<usize>| (bits(b), c);
        let votes = vec![v("1", vec![9]), v("1", vec![9])];
        assert_eq!(resolve_class_conflicts(&votes, &[1.0, 1.2]), vec![2]);
        assert_eq!(resolve_class_conflicts(&votes, &[1.0, 1.0]), vec![1]);
        let votes = vec![v("0", vec![2]), v("0", vec![0]), v("1", vec![8])];
        assert_eq!(resolve_class_conflicts(&votes, &[1.4, 1.4, 0.6]), vec![3]);
        let none = vec![v("00", vec![0, 0])];
        assert_eq!(resolve_class_conflicts(&none, &[1.0]), vec![0, 0]);
    }

    fn corpus() -> AnnotatedCorpus {
        // Ten (NOUN, NOUN) pairs: nine inside one phrase, one across two.
        let mut text = String::new();
        let mut cols = String::new();
        let mut ann = String::new();
        let mut off = 0;
        let mut t = 1;
        for i in 0..10 {
            let line = "aa bb cc";
            text.push_str(line);
            text.push('\n');
            for (j, (w, p)) in [("aa", "NOUN"), ("bb", "NOUN"), ("cc", "VERB")].iter().enumerate() {
                let s = off + j * 3;
                cols.push_str(&format!("{w}\t{p}\t{s}\t{}\n", s + 2));
            }
            cols.push('\n');
            if i < 9 {
                ann.push_str(&format!("T{t}\tC1 {} {}\taa bb\n", off, off + 5));
                t += 1;
            } else {
                ann.push_str(&format!("T{t}\tC1 {} {}\taa\nT{}\tC1 {} {}\tbb\n", off, off + 2, t + 1, off + 3, off + 5));
                t += 2;
            }
            // One (NOUN, VERB) pair inside a single phrase of the first sentence.
            if i == 0 {
                ann.clear();
                ann.push_str(&format!("T{t}\tC1 0 8\taa bb cc\n"));
                t += 1;
            }
            off += line.len() + 1;
        }
        let cols = parse_token_columns_str(&cols, Path::new("c")).unwrap();
        parse_standoff_str(&text, &ann, Some(cols), &Schema::default()).unwrap()
    }

    #[test]
    fn join_rules_from_counts() {
        let c = corpus();
        let r = learn_join_rules(&c, 0.5);
        let nn = r.rules[&("NOUN".to_string(), "NOUN".to_string())];
        assert_eq!((nn.joined, nn.total, nn.join), (9, 10, true));
        let nv = r.rules[&("NOUN".to_string(), "VERB".to_string())];
        assert_eq!((nv.joined, nv.total), (1, 1));
        assert!(r.joins("DET", "ADJ"));
        let back: JoinRuleTable = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn grid_search_counts_and_prefers_first_maximum() {
        let c = corpus();
        let lengths: Vec<usize> = c.sentences.iter().map(|s| s.tokens.len()).collect();
        let votes: Vec<SentenceVotes> = lengths
            .iter()
            .map(|&n| vec![(vec![false; n], vec![0; n]), (vec![false; n], vec![0; n])])
            .collect();
        let rules = JoinRuleTable::empty(0.5);
        let r = grid_search_weights(&c, &votes, &rules, &[true, true], &DEFAULT_WEIGHT_GRID).unwrap();
        assert_eq!(r.evaluations, 5);
        assert_eq!(r.weights, vec![1.0, 0.6]);
        let single: Vec<SentenceVotes> = votes.iter().map(|v| v[..1].to_vec()).collect();
        let r = grid_search_weights(&c, &single, &rules, &[true], &DEFAULT_WEIGHT_GRID).unwrap();
        assert_eq!((r.weights, r.evaluations), (vec![1.0], 1));
        let four: Vec<SentenceVotes> = votes.iter().map(|v| [v.clone(), v.clone()].concat()).collect();
        let r = grid_search_weights(&c, &four, &rules, &[true; 4], &DEFAULT_WEIGHT_GRID);
        assert_eq!(r.unwrap().evaluations, 125);
    }

    #[test]
    fn phrases_never_overlap() {
        let c = corpus();
        let s = &c.sentences[1];
        let votes = vec![(bits("111"), vec![3, 3, 1]), (bits("011"), vec![0, 2, 3])];
        let ks = phrases_from_votes(s, &votes, &[1.0, 1.0], &JoinRuleTable::empty(0.5));
        let spans: Vec<_> = ks.iter().map(|k| (k.token_span, k.class_id)).collect();
        assert_eq!(spans, vec![((0, 2), 1), ((2, 3), 2)]);
    }
}
