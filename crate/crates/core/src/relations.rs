//! Relation extraction: for every (relation, source phrase) a tagger marks
//! the tokens of the target phrases; targets are whole phrases hit by at
//! least one positive token.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data_io::{AnnotatedCorpus, KeyPhrase, RelationInstance};
use crate::encoding::FeatureEncoder;
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::eval::Scores;
use crate::tagger::{encode_corpus, token_kinds};
use crate::train::{Dataset, TrainConfig};

pub const DEFAULT_TOP_K: usize = 7;

/// Task-B inputs of one source phrase in one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceInput {
    pub sentence: usize,
    /// Id of the source phrase.
    pub source: usize,
    pub features: Vec<f64>,
}

/// Sentence-major source inputs, each sentence's sources in span order,
/// plus the phrases of every sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationInputs<'a> {
    pub sources: Vec<SourceInput>,
    pub phrases: Vec<Vec<&'a KeyPhrase>>,
}

/// Builds features for every phrase of `corpus` as a source.
pub fn relation_inputs<'a>(corpus: &'a AnnotatedCorpus, encoder: &FeatureEncoder) -> Result<RelationInputs<'a>> {
    let rows_a = encode_corpus(corpus, encoder)?;
    let phrases = corpus.phrases_by_sentence();
    let mut sources = Vec::new();
    for (i, (s, ks)) in corpus.sentences.iter().zip(&phrases).enumerate() {
        let kinds = token_kinds(s, ks);
        for k in ks {
            let mut mask = vec![false; s.tokens.len()];
            mask[k.token_span.0..k.token_span.1].iter_mut().for_each(|b| *b = true);
            sources.push(SourceInput {
                sentence: i,
                source: k.id,
                features: encoder.extend_b(&rows_a[i], &kinds, &mask)?,
            });
        }
    }
    Ok(RelationInputs { sources, phrases })
}

/// Target mask of `relation` for every source input: the tokens of every
/// gold target of (relation, source), all zeros when there is none.
pub fn target_masks(corpus: &AnnotatedCorpus, inputs: &RelationInputs, relation: usize) -> Vec<Vec<bool>> {
    let index = corpus.phrase_index();
    let mut targets: HashMap<usize, Vec<usize>> = HashMap::new();
    for r in corpus.relations.iter().filter(|r| r.relation == relation) {
        targets.entry(r.source).or_default().push(r.target);
    }
    inputs
        .sources
        .iter()
        .map(|src| {
            let len = corpus.sentences[src.sentence].tokens.len();
            let mut mask = vec![false; len];
            for t in targets.get(&src.source).into_iter().flatten() {
                if let Some(k) = index.get(t) {
                    mask[k.token_span.0..k.token_span.1].iter_mut().for_each(|b| *b = true);
                }
            }
            mask
        })
        .collect()
}

/// `(features, target_mask)` per phrase of one sentence, for one relation.
pub fn build_instances(
    corpus: &AnnotatedCorpus,
    sentence: usize,
    relation: usize,
    encoder: &FeatureEncoder,
) -> Result<Vec<(Vec<f64>, Vec<bool>)>> {
    let mut single = corpus.unannotated();
    single.sentences = vec![corpus.sentences[sentence].clone()];
    let sid = single.sentences[0].id;
    single.kphrases = corpus.kphrases.iter().filter(|k| k.sentence_id == sid).cloned().collect();
    single.relations = corpus.relations.iter().filter(|r| r.sentence_id == sid).cloned().collect();
    let inputs = relation_inputs(&single, encoder)?;
    let masks = target_masks(&single, &inputs, relation);
    Ok(inputs.sources.into_iter().map(|s| s.features).zip(masks).collect())
}

pub fn relation_dataset(inputs: &RelationInputs, masks: Vec<Vec<bool>>, feature_dim: usize) -> Result<Dataset> {
    let mut d = Dataset::new(feature_dim);
    for (src, y) in inputs.sources.iter().zip(masks) {
        d.push(src.features.clone(), y)?;
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationEnsemble {
    pub relation: usize,
    pub ensemble: Ensemble,
    pub dev_precision: f64,
    pub dev_f1: f64,
    pub active: bool,
}

/// Phrases other than the source with at least one positive token.
pub fn targets_from_bits(bits: &[bool], phrases: &[&KeyPhrase], source: usize) -> Vec<usize> {
    phrases
        .iter()
        .filter(|k| k.id != source && bits[k.token_span.0..k.token_span.1].iter().any(|&b| b))
        .map(|k| k.id)
        .collect()
}

pub fn predict_targets(e: &Ensemble, src: &SourceInput, phrases: &[&KeyPhrase]) -> Result<Vec<usize>> {
    let (bits, _) = e.vote(&src.features)?;
    Ok(targets_from_bits(&bits, phrases, src.source))
}

/// Pair-level scores of one ensemble on `corpus` with its gold phrases.
pub fn score_relation(
    e: &Ensemble,
    relation: usize,
    corpus: &AnnotatedCorpus,
    inputs: &RelationInputs,
) -> Result<Scores> {
    let mut gold: HashMap<(usize, usize), usize> = HashMap::new();
    for r in corpus.relations.iter().filter(|r| r.relation == relation) {
        *gold.entry((r.source, r.target)).or_default() += 1;
    }
    let n_gold: usize = gold.values().sum();
    let (mut correct, mut spurious) = (0, 0);
    for src in &inputs.sources {
        for t in predict_targets(e, src, &inputs.phrases[src.sentence])? {
            match gold.get_mut(&(src.source, t)) {
                Some(c) if *c > 0 => {
                    *c -= 1;
                    correct += 1;
                }
                _ => spurious += 1,
            }
        }
    }
    Ok(Scores::from_counts(correct, spurious, n_gold - correct))
}

#[allow(clippy::too_many_arguments)]
pub fn train_relation_ensemble(
    train: &Dataset,
    dev: &Dataset,
    relation: usize,
    name: &str,
    base_seed: u64,
    cfg: &TrainConfig,
    prune_sigma: f64,
    workers: usize,
) -> Result<RelationEnsemble> {
    if train.positives() == 0 {
        return Err(Error::Config(format!("relation {name} has no training instances")));
    }
    let mut ensemble = Ensemble::train(train, dev, base_seed, cfg, workers, &format!("relation {name}"))?;
    ensemble.prune(prune_sigma);
    log::info!(
        "relation {name} kept {}/{} members",
        ensemble.kept_count(),
        ensemble.members.len()
    );
    Ok(RelationEnsemble {
        relation,
        ensemble,
        dev_precision: 0.0,
        dev_f1: 0.0,
        active: true,
    })
}

/// Keeps one relation per (source, target) pair: the highest precision,
/// ties to the lower relation id. Exact duplicates collapse. The output
/// keeps the order in which pairs first appear.
pub fn resolve_relation_conflicts(
    candidates: Vec<RelationInstance>,
    precision: impl Fn(usize) -> f64,
) -> Vec<RelationInstance> {
    let mut order: Vec<(usize, usize, usize)> = Vec::new();
    let mut best: HashMap<(usize, usize, usize), RelationInstance> = HashMap::new();
    for c in candidates {
        if c.source == c.target {
            continue;
        }
        let key = (c.sentence_id, c.source, c.target);
        match best.get_mut(&key) {
            None => {
                order.push(key);
                best.insert(key, c);
            }
            Some(cur) => {
                let (pc, pn) = (precision(cur.relation), precision(c.relation));
                if pn > pc || (pn == pc && c.relation < cur.relation) {
                    *cur = c;
                }
            }
        }
    }
    order.into_iter().map(|k| best.remove(&k).expect("recorded key")).collect()
}

/// Activates the `k` ensembles with the highest dev F1 (ties to the lower
/// relation id). `schema_size` bounds `k`.
pub fn rank_and_filter(ensembles: &mut [RelationEnsemble], k: usize, schema_size: usize) -> Result<Vec<usize>> {
    if k > schema_size {
        return Err(Error::Config(format!("top_k {k} exceeds the {schema_size} relation types")));
    }
    let mut ranked: Vec<usize> = (0..ensembles.len()).collect();
    ranked.sort_by(|&a, &b| {
        ensembles[b]
            .dev_f1
            .total_cmp(&ensembles[a].dev_f1)
            .then(ensembles[a].relation.cmp(&ensembles[b].relation))
    });
    for e in ensembles.iter_mut() {
        e.active = false;
    }
    let mut active = Vec::new();
    for &i in ranked.iter().take(k) {
        ensembles[i].active = true;
        active.push(ensembles[i].relation);
    }
    Ok(active)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationSummary {
    pub relation: String,
    pub dev_precision: f64,
    pub dev_f1: f64,
    pub active: bool,
}

/// Relations among the phrases already in `corpus`, in sentence order.
pub fn predict_relations(
    corpus: &AnnotatedCorpus,
    ensembles: &[RelationEnsemble],
    encoder: &FeatureEncoder,
) -> Result<Vec<RelationInstance>> {
    let inputs = relation_inputs(corpus, encoder)?;
    let precision: HashMap<usize, f64> = ensembles.iter().map(|e| (e.relation, e.dev_precision)).collect();
    let mut out = Vec::new();
    let mut start = 0;
    while start < inputs.sources.len() {
        let sentence = inputs.sources[start].sentence;
        let end = inputs.sources[start..]
            .iter()
            .position(|s| s.sentence != sentence)
            .map_or(inputs.sources.len(), |p| start + p);
        let mut candidates = Vec::new();
        for src in &inputs.sources[start..end] {
            for e in ensembles.iter().filter(|e| e.active) {
                for target in predict_targets(&e.ensemble, src, &inputs.phrases[sentence])? {
                    candidates.push(RelationInstance {
                        relation: e.relation,
                        source: src.source,
                        target,
                        sentence_id: corpus.sentences[sentence].id,
                    });
                }
            }
        }
        out.extend(resolve_relation_conflicts(candidates, |r| {
            precision.get(&r).copied().unwrap_or(0.0)
        }));
        start = end;
    }
    Ok(out)
}
