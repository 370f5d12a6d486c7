//! Python bindings: corpora, synthetic data, training, prediction and scoring.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use votelstm::config::RunConfig;
use votelstm::data_io::{self, AnnotatedCorpus, Schema, WriteOptions};
use votelstm::ensemble;
use votelstm::eval::{EvalReport, Scores};
use votelstm::loss;
use votelstm::pipeline::{PipelineModel, Scenario};
use votelstm::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyOSError::new_err(e.to_string()),
        Error::Numeric(m) => PyRuntimeError::new_err(format!("numeric failure: {m}")),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn config(toml: Option<&str>) -> PyResult<RunConfig> {
    match toml {
        Some(t) => RunConfig::from_toml(t).map_err(to_py),
        None => Ok(RunConfig::default()),
    }
}

fn schema(toml: Option<&str>) -> PyResult<Schema> {
    config(toml)?.schema().map_err(to_py)
}

/// An annotated corpus: sentences, key phrases and relations.
#[pyclass(module = "votelstm_py", frozen)]
pub struct Corpus {
    inner: AnnotatedCorpus,
}

#[pymethods]
impl Corpus {
    /// Loads `<prefix>.txt` with optional `.ann` and `.conll`, or a corpus directory.
    #[staticmethod]
    #[pyo3(signature = (path, config=None))]
    fn load(path: PathBuf, config: Option<&str>) -> PyResult<Self> {
        let inner = data_io::load_corpus(path, &schema(config)?).map_err(to_py)?;
        Ok(Corpus { inner })
    }

    /// Builds a corpus from in-memory standoff text and annotations.
    #[staticmethod]
    #[pyo3(signature = (text, ann="", config=None))]
    fn from_standoff(text: &str, ann: &str, config: Option<&str>) -> PyResult<Self> {
        let inner = data_io::parse_standoff_str(text, ann, None, &schema(config)?).map_err(to_py)?;
        Ok(Corpus { inner })
    }

    /// Writes `.txt`, `.ann` and `.conll` under `prefix`.
    #[pyo3(signature = (prefix, phrases=true, relations=true))]
    fn save(&self, prefix: PathBuf, phrases: bool, relations: bool) -> PyResult<()> {
        let opts = WriteOptions {
            phrases,
            relations,
            renumber: phrases,
        };
        data_io::write_corpus(&self.inner, prefix, opts).map_err(to_py)
    }

    fn text(&self) -> String {
        self.inner.document_text()
    }

    fn ann(&self) -> String {
        data_io::format_annotations(&self.inner, WriteOptions::default())
    }

    /// Sentences as lists of `(word, pos)` pairs.
    fn sentences(&self) -> Vec<Vec<(String, String)>> {
        self.inner
            .sentences
            .iter()
            .map(|s| s.tokens.iter().map(|t| (t.text.clone(), t.pos.clone())).collect())
            .collect()
    }

    /// `(id, class, start, end, surface)` per key phrase.
    fn phrases(&self) -> Vec<(usize, String, usize, usize, String)> {
        let chars: Vec<char> = self.inner.document_text().chars().collect();
        self.inner
            .kphrases
            .iter()
            .map(|k| {
                let name = self.inner.schema.class_name(k.class_id).to_string();
                let (a, b) = k.char_span;
                (k.id, name, a, b, chars[a..b].iter().collect())
            })
            .collect()
    }

    /// `(relation, source id, target id)` per relation.
    fn relations(&self) -> Vec<(String, usize, usize)> {
        self.inner
            .relations
            .iter()
            .map(|r| (self.inner.schema.relation_name(r.relation).to_string(), r.source, r.target))
            .collect()
    }

    fn __len__(&self) -> usize {
        self.inner.sentences.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Corpus(sentences={}, phrases={}, relations={})",
            self.inner.sentences.len(),
            self.inner.kphrases.len(),
            self.inner.relations.len()
        )
    }
}

/// A trained or partially trained extraction pipeline.
#[pyclass(module = "votelstm_py")]
pub struct Model {
    inner: PipelineModel,
}

#[pymethods]
impl Model {
    /// An untrained model whose encoder is fitted to `train`.
    #[new]
    #[pyo3(signature = (train, config=None))]
    fn new(train: &Corpus, config: Option<&str>) -> PyResult<Self> {
        let inner = PipelineModel::for_training(&self::config(config)?, &train.inner).map_err(to_py)?;
        Ok(Model { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model {
            inner: PipelineModel::load(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    fn train_kphrases(&mut self, py: Python<'_>, train: &Corpus, dev: &Corpus) -> PyResult<()> {
        let m = &mut self.inner;
        py.detach(|| m.train_kphrases(&train.inner, &dev.inner)).map_err(to_py)
    }

    fn train_relations(&mut self, py: Python<'_>, train: &Corpus, dev: &Corpus) -> PyResult<()> {
        let m = &mut self.inner;
        py.detach(|| m.train_relations(&train.inner, &dev.inner)).map_err(to_py)
    }

    /// Tunes class weights and active relations; returns the tuning record.
    #[pyo3(signature = (dev, top_k=None))]
    fn tune<'py>(&mut self, py: Python<'py>, dev: &Corpus, top_k: Option<usize>) -> PyResult<Bound<'py, PyDict>> {
        let m = &mut self.inner;
        let r = py.detach(|| m.tune(&dev.inner, top_k)).map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("weights", r.weights)?;
        d.set_item("grid_evaluations", r.grid_evaluations)?;
        d.set_item("dev_f1_before", r.dev_f1_before)?;
        d.set_item("dev_f1_after", r.dev_f1_after)?;
        d.set_item("active_relations", r.active_relations)?;
        Ok(d)
    }

    /// Scenario 1 runs both subtasks, 2 key phrases only, 3 relations over
    /// the phrases of `corpus`.
    #[pyo3(signature = (corpus, scenario=1))]
    fn predict(&self, py: Python<'_>, corpus: &Corpus, scenario: u8) -> PyResult<Corpus> {
        let s = Scenario::from_number(scenario).map_err(to_py)?;
        let m = &self.inner;
        let inner = py.detach(|| m.predict(&corpus.inner, s)).map_err(to_py)?;
        Ok(Corpus { inner })
    }

    fn class_weights(&self) -> Option<Vec<f64>> {
        self.inner.kphrases.as_ref().map(|k| k.weights())
    }
}

fn scores_dict<'py>(py: Python<'py>, s: &Scores) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("precision", s.precision)?;
    d.set_item("recall", s.recall)?;
    d.set_item("f1", s.f1)?;
    d.set_item("correct", s.correct)?;
    d.set_item("spurious", s.spurious)?;
    d.set_item("missing", s.missing)?;
    Ok(d)
}

/// Scores `pred` against `gold` for a scenario.
#[pyfunction]
#[pyo3(signature = (gold, pred, scenario=1))]
fn evaluate<'py>(py: Python<'py>, gold: &Corpus, pred: &Corpus, scenario: u8) -> PyResult<Bound<'py, PyDict>> {
    let s = Scenario::from_number(scenario).map_err(to_py)?;
    let r = EvalReport::new(s.number(), &gold.inner, &pred.inner);
    let d = PyDict::new(py);
    d.set_item("scenario", r.scenario)?;
    if let Some(a) = &r.task_a {
        d.set_item("task_a", scores_dict(py, a)?)?;
    }
    if let Some(b) = &r.task_b {
        d.set_item("task_b", scores_dict(py, b)?)?;
    }
    d.set_item("overall", scores_dict(py, &r.overall)?)?;
    Ok(d)
}

/// Train, dev and test corpora from the configured grammar.
#[pyfunction]
#[pyo3(signature = (seed, n_train, n_dev, n_test, config=None))]
fn generate_synthetic(
    seed: u64,
    n_train: usize,
    n_dev: usize,
    n_test: usize,
    config: Option<&str>,
) -> PyResult<(Corpus, Corpus, Corpus)> {
    let cfg = self::config(config)?;
    let (a, b, c) = data_io::generate_synthetic(&cfg.grammar().map_err(to_py)?, seed, n_train, n_dev, n_test)
        .map_err(to_py)?;
    Ok((Corpus { inner: a }, Corpus { inner: b }, Corpus { inner: c }))
}

/// Differentiable F1 of probabilities `y_hat` against labels `y`.
#[pyfunction]
#[pyo3(signature = (y, y_hat, epsilon=loss::DEFAULT_EPSILON))]
fn soft_f1(y: Vec<bool>, y_hat: Vec<f64>, epsilon: f64) -> PyResult<f64> {
    let mask = vec![true; y.len()];
    loss::soft_f1(&y, &y_hat, &mask, epsilon).map_err(to_py)
}

/// `(loss, gradient)` of `1 − soft_f1`.
#[pyfunction]
#[pyo3(signature = (y, y_hat, epsilon=loss::DEFAULT_EPSILON))]
fn soft_f1_loss_and_grad(y: Vec<bool>, y_hat: Vec<f64>, epsilon: f64) -> PyResult<(f64, Vec<f64>)> {
    let mask = vec![true; y.len()];
    loss::loss_and_grad(&y, &y_hat, &mask, epsilon).map_err(to_py)
}

/// `(precision, recall, f1)` of hard predictions.
#[pyfunction]
fn exact_f1(y: Vec<bool>, pred: Vec<bool>) -> PyResult<(f64, f64, f64)> {
    let mask = vec![true; y.len()];
    let p = loss::exact_f1(&y, &pred, &mask).map_err(to_py)?;
    Ok((p.precision, p.recall, p.f1))
}

/// Which ensemble members survive pruning.
#[pyfunction]
#[pyo3(signature = (dev_f1, sigma=1.0))]
fn prune_mask(dev_f1: Vec<f64>, sigma: f64) -> Vec<bool> {
    ensemble::prune_mask(&dev_f1, sigma)
}

#[pymodule]
fn votelstm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Corpus>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(soft_f1, m)?)?;
    m.add_function(wrap_pyfunction!(soft_f1_loss_and_grad, m)?)?;
    m.add_function(wrap_pyfunction!(exact_f1, m)?)?;
    m.add_function(wrap_pyfunction!(prune_mask, m)?)?;
    Ok(())
}
