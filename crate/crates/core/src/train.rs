//! Mini-batch training of a single tagger with best-on-dev early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{self, F1Aggregation, DEFAULT_EPSILON};
use crate::nn::{
    adam_step, clip_grad_norm, init_params, network_backward, predict_sentence, AdamConfig,
    AdamState, NetworkDims, NetworkParams, SequenceBatch,
};

/// Sigmoid outputs at or above this value count as positive.
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    /// Epochs without strict dev improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub ensemble_size: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub epsilon: f64,
    pub aggregation: F1Aggregation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 32,
            patience: 100,
            max_epochs: 1000,
            hidden1: 150,
            hidden2: 32,
            ensemble_size: 15,
            clip_norm: 5.0,
            epsilon: DEFAULT_EPSILON,
            aggregation: F1Aggregation::Batch,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("adam_eps", self.adam_eps),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        if !(self.clip_norm.is_finite() && self.clip_norm >= 0.0) {
            return Err(Error::Config(format!("clip_norm must be non-negative, got {}", self.clip_norm)));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::Config(format!("epsilon must be non-negative, got {}", self.epsilon)));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("patience", self.patience),
            ("max_epochs", self.max_epochs),
            ("hidden1", self.hidden1),
            ("hidden2", self.hidden2),
            ("ensemble_size", self.ensemble_size),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

/// Unpadded sentences (`len × feature_dim` rows) with per-token labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub feature_dim: usize,
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<Vec<bool>>,
}

impl Dataset {
    pub fn new(feature_dim: usize) -> Self {
        Dataset {
            feature_dim,
            ..Dataset::default()
        }
    }

    pub fn push(&mut self, x: Vec<f64>, y: Vec<bool>) -> Result<()> {
        if self.feature_dim == 0 || x.len() != y.len() * self.feature_dim {
            return Err(Error::Shape(format!(
                "{} feature values for {} labels at width {}",
                x.len(),
                y.len(),
                self.feature_dim
            )));
        }
        if !y.is_empty() {
            self.inputs.push(x);
            self.labels.push(y);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().flatten().filter(|&&b| b).count()
    }

    pub fn tokens(&self) -> usize {
        self.labels.iter().map(Vec::len).sum()
    }
}

/// Tracks the best score; `observe` returns true once the run should stop.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    last_epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            last_epoch: 0,
        }
    }

    /// Records the score of `epoch` (1-based). The first score, and any
    /// strictly greater one, becomes the new best.
    pub fn observe(&mut self, epoch: usize, score: f64) -> bool {
        self.last_epoch = epoch;
        match self.best {
            Some((_, b)) if score <= b => {}
            _ => self.best = Some((epoch, score)),
        }
        self.should_stop()
    }

    pub fn improved_at(&self, epoch: usize) -> bool {
        matches!(self.best, Some((e, _)) if e == epoch)
    }

    pub fn should_stop(&self) -> bool {
        match self.best {
            Some((e, _)) => self.last_epoch - e >= self.patience,
            None => false,
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub params: NetworkParams,
    pub dev_f1: f64,
    pub best_epoch: usize,
    pub epochs_trained: usize,
    pub history: Vec<EpochLog>,
}

pub fn predict_probs(p: &NetworkParams, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    data.inputs.iter().map(|x| predict_sentence(p, x)).collect()
}

/// Pooled token-level exact F1 at the decision threshold.
pub fn token_f1(p: &NetworkParams, data: &Dataset) -> Result<f64> {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (x, y) in data.inputs.iter().zip(&data.labels) {
        for (prob, &gold) in predict_sentence(p, x)?.into_iter().zip(y) {
            match (gold, prob >= DECISION_THRESHOLD) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    Ok(loss::Prf::from_counts(tp, fp, fn_).f1)
}

fn make_batch(data: &Dataset, idx: &[usize]) -> Result<(SequenceBatch, Vec<bool>)> {
    let max_len = idx.iter().map(|&i| data.labels[i].len()).max().unwrap_or(0);
    let sentences: Vec<&[f64]> = idx.iter().map(|&i| data.inputs[i].as_slice()).collect();
    let batch = SequenceBatch::from_sentences(&sentences, data.feature_dim, max_len)?;
    let mut labels = vec![false; idx.len() * max_len];
    for (b, &i) in idx.iter().enumerate() {
        labels[b * max_len..b * max_len + data.labels[i].len()].copy_from_slice(&data.labels[i]);
    }
    Ok((batch, labels))
}

/// Trains one network from `init_params(seed, ..)` and returns the
/// snapshot with the best dev token F1.
pub fn fit(train: &Dataset, dev: &Dataset, seed: u64, cfg: &TrainConfig, label: &str) -> Result<FitOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config(format!("{label}: empty training set")));
    }
    if dev.feature_dim != train.feature_dim && !dev.is_empty() {
        return Err(Error::Shape(format!(
            "{label}: dev width {} differs from train width {}",
            dev.feature_dim, train.feature_dim
        )));
    }
    let dims = NetworkDims::new(train.feature_dim, cfg.hidden1, cfg.hidden2);
    let mut params = init_params(seed, dims)?;
    let mut adam = AdamState::new(&params, cfg.adam());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa076_1d64_78bd_642f);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = params.clone();
    let mut history = Vec::new();
    let eps = cfg.epsilon;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let (batch, labels) = make_batch(train, chunk)?;
            let max_len = batch.max_len();
            let (l, mut g) = network_backward(&batch, &labels, &params, |y, yh, m| match cfg.aggregation {
                F1Aggregation::Batch => loss::loss_and_grad(y, yh, m, eps),
                F1Aggregation::Sentence => loss::sentence_mean_loss_and_grad(y, yh, m, max_len, eps),
            })?;
            if !l.is_finite() || !g.is_finite() {
                return Err(Error::Numeric(format!("{label}: non-finite loss or gradient at epoch {epoch}")));
            }
            if cfg.clip_norm > 0.0 {
                clip_grad_norm(&mut g, cfg.clip_norm);
            }
            adam_step(&mut params, &g, &mut adam)?;
            if !params.is_finite() {
                return Err(Error::Numeric(format!("{label}: parameters diverged at epoch {epoch}")));
            }
            total += l;
            steps += 1;
        }
        let train_loss = total / steps as f64;
        let dev_f1 = if dev.is_empty() { 1.0 - train_loss } else { token_f1(&params, dev)? };
        log::info!("{label} epoch {epoch} train_loss {train_loss:.6} dev_f1 {dev_f1:.4}");
        history.push(EpochLog {
            epoch,
            train_loss,
            dev_f1,
        });
        let stop = stopper.observe(epoch, dev_f1);
        if stopper.improved_at(epoch) {
            best.clone_from(&params);
        }
        if stop {
            break;
        }
    }
    let (best_epoch, dev_f1) = stopper.best().expect("at least one epoch");
    Ok(FitOutcome {
        params: best,
        dev_f1,
        best_epoch,
        epochs_trained: history.len(),
        history,
    })
}
