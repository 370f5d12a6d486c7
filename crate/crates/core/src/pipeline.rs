//! End-to-end orchestration: training both subtasks, tuning on dev,
//! prediction per scenario and model persistence.

use std::borrow::Cow;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data_io::{AnnotatedCorpus, LexiconTagger, ModelContainer, NamedTensor, Schema, WriteOptions};
use crate::encoding::{EmbeddingTable, FeatureEncoder, PosTagSet};
use crate::ensemble::{Ensemble, Member, MemberInfo};
use crate::error::{Error, Result};
use crate::eval::score_pipeline;
use crate::nn::{NetworkDims, NetworkParams};
use crate::relations::{
    predict_relations, rank_and_filter, relation_dataset, relation_inputs, score_relation, target_masks,
    train_relation_ensemble, RelationEnsemble, RelationSummary,
};
use crate::tagger::{
    class_dataset, encode_corpus, grid_search_weights, learn_join_rules, predict_kphrases,
    train_class_ensemble, ClassEnsemble, JoinRuleTable, KeyPhraseModel,
};

/// Evaluation scenario: 1 runs both subtasks, 2 only key phrases, 3 only
/// relations over given phrases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    Pipeline,
    KeyPhrases,
    Relations,
}

impl Scenario {
    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Scenario::Pipeline),
            2 => Ok(Scenario::KeyPhrases),
            3 => Ok(Scenario::Relations),
            _ => Err(Error::Config(format!("scenario must be 1, 2 or 3, got {n}"))),
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Scenario::Pipeline => 1,
            Scenario::KeyPhrases => 2,
            Scenario::Relations => 3,
        }
    }

    /// Which annotation lines a prediction file of this scenario carries.
    pub fn write_options(self) -> WriteOptions {
        match self {
            Scenario::Pipeline => WriteOptions::default(),
            Scenario::KeyPhrases => WriteOptions {
                phrases: true,
                relations: false,
                renumber: true,
            },
            Scenario::Relations => WriteOptions {
                phrases: false,
                relations: true,
                renumber: false,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationModel {
    pub ensembles: Vec<RelationEnsemble>,
    pub top_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningRecord {
    pub weights: Vec<f64>,
    pub grid_evaluations: usize,
    pub dev_f1_before: f64,
    pub dev_f1_after: f64,
    pub active_relations: Vec<String>,
    pub relations: Vec<RelationSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineModel {
    pub schema: Schema,
    pub config: RunConfig,
    pub encoder: FeatureEncoder,
    /// Tags inputs that arrive without PoS.
    pub lexicon: LexiconTagger,
    pub kphrases: Option<KeyPhraseModel>,
    pub relations: Option<RelationModel>,
    pub tuning: Option<TuningRecord>,
}

/// Seed of member 0 of the ensemble for class `class_id`.
pub fn class_seed(base: u64, class_id: usize) -> u64 {
    base.wrapping_add(1000 * class_id as u64)
}

/// Seed of member 0 of the ensemble for relation `relation`.
pub fn relation_seed(base: u64, relation: usize) -> u64 {
    base.wrapping_add(100_000 + 1000 * relation as u64)
}

/// Embedding table from the config and a tag set of the PoS seen in `train`.
pub fn build_encoder(cfg: &RunConfig, train: &AnnotatedCorpus) -> Result<FeatureEncoder> {
    let e = &cfg.embedding;
    let table = EmbeddingTable::load(e.path.as_deref(), e.dim, e.hash_buckets, e.hash_seed)?;
    let tagset = PosTagSet::from_observed(train.sentences.iter().flat_map(|s| s.tokens.iter().map(|t| t.pos.as_str())));
    Ok(FeatureEncoder::new(table, tagset))
}

impl PipelineModel {
    /// An untrained model whose encoder and PoS lexicon come from `train`.
    pub fn for_training(cfg: &RunConfig, train: &AnnotatedCorpus) -> Result<Self> {
        cfg.validate()?;
        Ok(PipelineModel {
            schema: cfg.schema()?,
            config: cfg.clone(),
            encoder: build_encoder(cfg, train)?,
            lexicon: LexiconTagger::learn(train),
            kphrases: None,
            relations: None,
            tuning: None,
        })
    }

    pub fn dims_a(&self) -> NetworkDims {
        NetworkDims::new(self.encoder.dim_a(), self.config.train.hidden1, self.config.train.hidden2)
    }

    pub fn dims_b(&self) -> NetworkDims {
        NetworkDims::new(self.encoder.dim_b(), self.config.train.hidden1, self.config.train.hidden2)
    }

    /// Trains one pruned ensemble per class present in `train`, and the
    /// join rules.
    pub fn train_kphrases(&mut self, train: &AnnotatedCorpus, dev: &AnnotatedCorpus) -> Result<()> {
        let cfg = &self.config;
        let dim = self.encoder.dim_a();
        let xs_train = encode_corpus(train, &self.encoder)?;
        let xs_dev = encode_corpus(dev, &self.encoder)?;
        let mut classes = Vec::new();
        for class_id in 1..=self.schema.classes.len() {
            let tr = class_dataset(train, &xs_train, dim, class_id)?;
            if tr.positives() == 0 {
                log::warn!("class {} absent from training data; skipped", self.schema.class_name(class_id));
                classes.push(None);
                continue;
            }
            let dv = class_dataset(dev, &xs_dev, dim, class_id)?;
            classes.push(Some(train_class_ensemble(
                &tr,
                &dv,
                class_id,
                class_seed(cfg.seed, class_id),
                &cfg.train,
                cfg.tagger.prune_sigma,
                cfg.worker_count(),
            )?));
        }
        if classes.iter().all(Option::is_none) {
            return Err(Error::Config("no key-phrase class occurs in the training data".into()));
        }
        self.kphrases = Some(KeyPhraseModel {
            classes,
            rules: learn_join_rules(train, cfg.tagger.join_threshold),
        });
        Ok(())
    }

    /// Trains one pruned ensemble per relation present in `train`, scores
    /// them on `dev` and activates the configured top k.
    pub fn train_relations(&mut self, train: &AnnotatedCorpus, dev: &AnnotatedCorpus) -> Result<()> {
        let cfg = self.config.clone();
        let dim = self.encoder.dim_b();
        let in_train = relation_inputs(train, &self.encoder)?;
        let in_dev = relation_inputs(dev, &self.encoder)?;
        let mut ensembles = Vec::new();
        for relation in 0..self.schema.relations.len() {
            let name = self.schema.relation_name(relation).to_string();
            if !train.relations.iter().any(|r| r.relation == relation) {
                log::warn!("relation {name} absent from training data; skipped");
                continue;
            }
            let tr = relation_dataset(&in_train, target_masks(train, &in_train, relation), dim)?;
            let dv = relation_dataset(&in_dev, target_masks(dev, &in_dev, relation), dim)?;
            ensembles.push(train_relation_ensemble(
                &tr,
                &dv,
                relation,
                &name,
                relation_seed(cfg.seed, relation),
                &cfg.train,
                cfg.relations.prune_sigma,
                cfg.worker_count(),
            )?);
        }
        if ensembles.is_empty() {
            return Err(Error::Config("no relation occurs in the training data".into()));
        }
        let mut model = RelationModel {
            ensembles,
            top_k: cfg.relations.top_k,
        };
        self.score_relations(&mut model, dev)?;
        rank_and_filter(&mut model.ensembles, model.top_k, self.schema.relations.len())?;
        self.relations = Some(model);
        Ok(())
    }

    fn score_relations(&self, model: &mut RelationModel, dev: &AnnotatedCorpus) -> Result<()> {
        let inputs = relation_inputs(dev, &self.encoder)?;
        for e in &mut model.ensembles {
            let s = score_relation(&e.ensemble, e.relation, dev, &inputs)?;
            e.dev_precision = s.precision;
            e.dev_f1 = s.f1;
            log::info!(
                "relation {} dev precision {:.4} f1 {:.4}",
                self.schema.relation_name(e.relation),
                s.precision,
                s.f1
            );
        }
        Ok(())
    }

    /// Grid-searches class weights, rescoring and reranking relations on
    /// `dev`. `top_k` overrides the stored value.
    pub fn tune(&mut self, dev: &AnnotatedCorpus, top_k: Option<usize>) -> Result<TuningRecord> {
        if self.kphrases.is_none() && self.relations.is_none() {
            return Err(Error::Config("model has nothing to tune".into()));
        }
        let before = self.dev_score(dev)?;
        let mut weights = Vec::new();
        let mut evaluations = 0;
        if let Some(kp) = &self.kphrases {
            let xs = encode_corpus(dev, &self.encoder)?;
            let lengths: Vec<usize> = dev.sentences.iter().map(|s| s.tokens.len()).collect();
            let votes = kp.votes(&xs, &lengths)?;
            let present: Vec<bool> = kp.classes.iter().map(Option::is_some).collect();
            let r = grid_search_weights(dev, &votes, &kp.rules, &present, &self.config.tagger.weight_grid)?;
            log::info!("grid search: weights {:?} dev f1 {:.4} after {} evaluations", r.weights, r.f1, r.evaluations);
            weights = r.weights;
            evaluations = r.evaluations;
        }
        if let Some(kp) = &mut self.kphrases {
            kp.set_weights(&weights);
        }
        let mut summaries = Vec::new();
        let mut active = Vec::new();
        if let Some(mut rm) = self.relations.take() {
            if let Some(k) = top_k {
                rm.top_k = k;
            }
            let scored = self.score_relations(&mut rm, dev);
            let ranked = scored.and_then(|_| rank_and_filter(&mut rm.ensembles, rm.top_k, self.schema.relations.len()));
            let ids = match ranked {
                Ok(ids) => ids,
                Err(e) => {
                    self.relations = Some(rm);
                    return Err(e);
                }
            };
            active = ids.iter().map(|&r| self.schema.relation_name(r).to_string()).collect();
            summaries = self.relation_summaries(&rm);
            self.relations = Some(rm);
        }
        let after = self.dev_score(dev)?;
        let record = TuningRecord {
            weights,
            grid_evaluations: evaluations,
            dev_f1_before: before,
            dev_f1_after: after,
            active_relations: active,
            relations: summaries,
        };
        self.tuning = Some(record.clone());
        Ok(record)
    }

    fn relation_summaries(&self, rm: &RelationModel) -> Vec<RelationSummary> {
        rm.ensembles
            .iter()
            .map(|e| RelationSummary {
                relation: self.schema.relation_name(e.relation).to_string(),
                dev_precision: e.dev_precision,
                dev_f1: e.dev_f1,
                active: e.active,
            })
            .collect()
    }

    /// Dev F1 of the most complete scenario this model supports.
    fn dev_score(&self, dev: &AnnotatedCorpus) -> Result<f64> {
        let scenario = match (&self.kphrases, &self.relations) {
            (Some(_), Some(_)) => Scenario::Pipeline,
            (Some(_), None) => Scenario::KeyPhrases,
            _ => Scenario::Relations,
        };
        let pred = self.predict(dev, scenario)?;
        Ok(crate::eval::EvalReport::new(scenario.number(), dev, &pred).overall.f1)
    }

    /// `input`, PoS-tagged by the lexicon if it has no tags of its own.
    pub fn prepare<'a>(&self, input: &'a AnnotatedCorpus) -> Cow<'a, AnnotatedCorpus> {
        if input.has_pos_tags() || self.lexicon.is_empty() {
            Cow::Borrowed(input)
        } else {
            let mut c = input.clone();
            self.lexicon.apply(&mut c);
            Cow::Owned(c)
        }
    }

    /// Predictions for `input`. Scenario 3 uses the phrases of `input`.
    pub fn predict(&self, input: &AnnotatedCorpus, scenario: Scenario) -> Result<AnnotatedCorpus> {
        let prepared = self.prepare(input);
        let input = prepared.as_ref();
        let need = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("scenario {} needs a {what} model", scenario.number())))
            }
        };
        match scenario {
            Scenario::KeyPhrases | Scenario::Pipeline => need(self.kphrases.is_some(), "key-phrase")?,
            Scenario::Relations => {}
        }
        if scenario != Scenario::KeyPhrases {
            need(self.relations.is_some(), "relation")?;
        }
        let mut out = match scenario {
            Scenario::Relations => {
                if input.kphrases.is_empty() && !input.is_empty() {
                    return Err(Error::Config("scenario 3 needs key phrases in the input".into()));
                }
                let mut c = input.clone();
                c.relations.clear();
                c
            }
            _ => predict_kphrases(input, self.kphrases.as_ref().expect("checked"), &self.encoder)?,
        };
        if let Some(rm) = &self.relations {
            if scenario != Scenario::KeyPhrases {
                out.relations = predict_relations(&out, &rm.ensembles, &self.encoder)?;
            }
        }
        Ok(out)
    }

    /// Pipeline F1 of this model's scenario-1 predictions against `gold`.
    pub fn pipeline_f1(&self, gold: &AnnotatedCorpus) -> Result<f64> {
        Ok(score_pipeline(gold, &self.predict(gold, Scenario::Pipeline)?).f1)
    }
}

// ---- persistence ----

const MODEL_KIND: &str = "votelstm-pipeline";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EncoderMeta {
    dim: usize,
    hash_buckets: usize,
    hash_seed: u64,
    tags: PosTagSet,
    words: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ClassMeta {
    class: String,
    weight: f64,
    members: Vec<MemberInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct KeyPhraseMeta {
    rules: JoinRuleTable,
    classes: Vec<Option<ClassMeta>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RelationEnsembleMeta {
    relation: String,
    dev_precision: f64,
    dev_f1: f64,
    active: bool,
    members: Vec<MemberInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RelationMeta {
    top_k: usize,
    ensembles: Vec<RelationEnsembleMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelMeta {
    kind: String,
    schema: Schema,
    config: RunConfig,
    encoder: EncoderMeta,
    lexicon: LexiconTagger,
    dims_a: NetworkDims,
    dims_b: NetworkDims,
    kphrases: Option<KeyPhraseMeta>,
    relations: Option<RelationMeta>,
    tuning: Option<TuningRecord>,
}

fn push_members(tensors: &mut Vec<NamedTensor>, prefix: &str, e: &Ensemble) -> Result<()> {
    for (i, m) in e.members.iter().enumerate() {
        for (name, shape, values) in m.params.tensors() {
            tensors.push(NamedTensor::new(format!("{prefix}.{i}.{name}"), shape, values.to_vec())?);
        }
    }
    Ok(())
}

fn read_members(c: &ModelContainer, prefix: &str, dims: NetworkDims, info: &[MemberInfo]) -> Result<Ensemble> {
    let mut members = Vec::with_capacity(info.len());
    for (i, m) in info.iter().enumerate() {
        let params = NetworkParams::from_tensors(dims, |name| {
            c.tensor(&format!("{prefix}.{i}.{name}")).map(|t| t.data.clone())
        })?;
        members.push(Member {
            seed: m.seed,
            params,
            dev_f1: m.dev_f1,
            best_epoch: m.best_epoch,
            epochs_trained: m.epochs_trained,
        });
    }
    Ensemble::from_members(members, info.iter().map(|m| m.kept).collect())
}

impl PipelineModel {
    pub fn to_container(&self) -> Result<ModelContainer> {
        let table = &self.encoder.table;
        let words: Vec<String> = table.entries().map(|(w, _)| w.to_string()).collect();
        let mut tensors = Vec::new();
        if !words.is_empty() {
            let data: Vec<f64> = table.entries().flat_map(|(_, v)| v.iter().copied()).collect();
            tensors.push(NamedTensor::new("embedding", vec![words.len(), table.dim()], data)?);
        }
        let kphrases = match &self.kphrases {
            None => None,
            Some(kp) => {
                let mut classes = Vec::new();
                for c in &kp.classes {
                    classes.push(match c {
                        None => None,
                        Some(c) => {
                            let name = self.schema.class_name(c.class_id).to_string();
                            push_members(&mut tensors, &format!("a.{name}"), &c.ensemble)?;
                            Some(ClassMeta {
                                class: name,
                                weight: c.weight,
                                members: c.ensemble.info(),
                            })
                        }
                    });
                }
                Some(KeyPhraseMeta {
                    rules: kp.rules.clone(),
                    classes,
                })
            }
        };
        let relations = match &self.relations {
            None => None,
            Some(rm) => {
                let mut ensembles = Vec::new();
                for e in &rm.ensembles {
                    let name = self.schema.relation_name(e.relation).to_string();
                    push_members(&mut tensors, &format!("b.{name}"), &e.ensemble)?;
                    ensembles.push(RelationEnsembleMeta {
                        relation: name,
                        dev_precision: e.dev_precision,
                        dev_f1: e.dev_f1,
                        active: e.active,
                        members: e.ensemble.info(),
                    });
                }
                Some(RelationMeta {
                    top_k: rm.top_k,
                    ensembles,
                })
            }
        };
        let meta = ModelMeta {
            kind: MODEL_KIND.into(),
            schema: self.schema.clone(),
            config: self.config.clone(),
            encoder: EncoderMeta {
                dim: table.dim(),
                hash_buckets: table.hash_buckets(),
                hash_seed: table.hash_seed(),
                tags: self.encoder.tagset.clone(),
                words,
            },
            lexicon: self.lexicon.clone(),
            dims_a: self.dims_a(),
            dims_b: self.dims_b(),
            kphrases,
            relations,
            tuning: self.tuning.clone(),
        };
        let metadata = serde_json::to_value(&meta).map_err(|e| Error::Container(format!("metadata: {e}")))?;
        Ok(ModelContainer { metadata, tensors })
    }

    pub fn from_container(c: &ModelContainer) -> Result<Self> {
        let meta: ModelMeta = serde_json::from_value(c.metadata.clone())
            .map_err(|e| Error::Container(format!("metadata: {e}")))?;
        if meta.kind != MODEL_KIND {
            return Err(Error::Container(format!("not a pipeline model: {:?}", meta.kind)));
        }
        let schema = meta.schema;
        let mut table = EmbeddingTable::new(meta.encoder.dim, meta.encoder.hash_buckets, meta.encoder.hash_seed)?;
        if !meta.encoder.words.is_empty() {
            let t = c
                .tensor("embedding")
                .ok_or_else(|| Error::Container("missing tensor embedding".into()))?;
            if t.shape != [meta.encoder.words.len(), meta.encoder.dim] {
                return Err(Error::Container(format!("embedding tensor has shape {:?}", t.shape)));
            }
            for (w, v) in meta.encoder.words.iter().zip(t.data.chunks(meta.encoder.dim)) {
                table.insert(w.clone(), v.to_vec())?;
            }
        }
        let encoder = FeatureEncoder::new(table, meta.encoder.tags);
        if encoder.dim_a() != meta.dims_a.input || encoder.dim_b() != meta.dims_b.input {
            return Err(Error::Container("network input sizes do not match the encoder".into()));
        }
        let kphrases = match meta.kphrases {
            None => None,
            Some(kp) => {
                let mut classes = Vec::new();
                for c_meta in kp.classes {
                    classes.push(match c_meta {
                        None => None,
                        Some(m) => {
                            let class_id = schema
                                .class_id(&m.class)
                                .ok_or_else(|| Error::Container(format!("unknown class {:?}", m.class)))?;
                            Some(ClassEnsemble {
                                class_id,
                                ensemble: read_members(c, &format!("a.{}", m.class), meta.dims_a, &m.members)?,
                                weight: m.weight,
                            })
                        }
                    });
                }
                Some(KeyPhraseModel {
                    classes,
                    rules: kp.rules,
                })
            }
        };
        let relations = match meta.relations {
            None => None,
            Some(rm) => {
                let mut ensembles = Vec::new();
                for e in rm.ensembles {
                    let relation = schema
                        .relation_id(&e.relation)
                        .ok_or_else(|| Error::Container(format!("unknown relation {:?}", e.relation)))?;
                    ensembles.push(RelationEnsemble {
                        relation,
                        ensemble: read_members(c, &format!("b.{}", e.relation), meta.dims_b, &e.members)?,
                        dev_precision: e.dev_precision,
                        dev_f1: e.dev_f1,
                        active: e.active,
                    });
                }
                Some(RelationModel {
                    ensembles,
                    top_k: rm.top_k,
                })
            }
        };
        Ok(PipelineModel {
            schema,
            config: meta.config,
            encoder,
            lexicon: meta.lexicon,
            kphrases,
            relations,
            tuning: meta.tuning,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&ModelContainer::load(path)?)
    }
}
