//! Seeded ensembles of binary taggers with dev-score pruning and strict
//! majority voting.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{predict_sentence, NetworkParams};
use crate::train::{fit, Dataset, TrainConfig, DECISION_THRESHOLD};

/// Members kept at minimum by pruning (when that many exist).
pub const MIN_KEPT: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub seed: u64,
    pub params: NetworkParams,
    pub dev_f1: f64,
    pub best_epoch: usize,
    pub epochs_trained: usize,
}

/// Member summary without parameters, as stored in model metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberInfo {
    pub seed: u64,
    pub dev_f1: f64,
    pub best_epoch: usize,
    pub epochs_trained: usize,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub members: Vec<Member>,
    pub kept: Vec<bool>,
}

/// Keep-mask for a list of member dev scores.
///
/// Members strictly below `mean − sigma·σ` (population σ) are dropped, the
/// best `MIN_KEPT` survive regardless, and an even survivor count loses its
/// weakest member. Ties in rank go to the lower index.
pub fn prune_mask(dev_f1: &[f64], sigma: f64) -> Vec<bool> {
    let n = dev_f1.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = dev_f1.iter().sum::<f64>() / n as f64;
    let var = dev_f1.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / n as f64;
    let cutoff = mean - sigma * var.sqrt();
    let mut kept: Vec<bool> = dev_f1.iter().map(|&f| f >= cutoff).collect();

    // Best first; equal scores keep index order.
    let mut ranked: Vec<usize> = (0..n).collect();
    ranked.sort_by(|&a, &b| dev_f1[b].total_cmp(&dev_f1[a]).then(a.cmp(&b)));
    let floor = MIN_KEPT.min(n);
    if kept.iter().filter(|&&k| k).count() < floor {
        for &i in &ranked[..floor] {
            kept[i] = true;
        }
    }
    let count = kept.iter().filter(|&&k| k).count();
    if count % 2 == 0 {
        if let Some(&weakest) = ranked.iter().rev().find(|&&i| kept[i]) {
            kept[weakest] = false;
        }
    }
    kept
}

/// Token bits from vote counts: positive iff more than half of `k` voted.
pub fn majority(counts: &[usize], k: usize) -> Vec<bool> {
    counts.iter().map(|&c| 2 * c > k).collect()
}

impl Ensemble {
    /// Trains `cfg.ensemble_size` members with seeds `base_seed + i` on a
    /// pool of `workers` threads. Results do not depend on `workers`.
    pub fn train(
        train: &Dataset,
        dev: &Dataset,
        base_seed: u64,
        cfg: &TrainConfig,
        workers: usize,
        label: &str,
    ) -> Result<Self> {
        cfg.validate()?;
        let run = || -> Result<Vec<Member>> {
            (0..cfg.ensemble_size)
                .into_par_iter()
                .map(|i| {
                    let seed = base_seed.wrapping_add(i as u64);
                    let out = fit(train, dev, seed, cfg, &format!("{label} member {i}"))?;
                    log::info!(
                        "{label} member {i} seed {seed} best_epoch {} dev_f1 {:.4}",
                        out.best_epoch,
                        out.dev_f1
                    );
                    Ok(Member {
                        seed,
                        params: out.params,
                        dev_f1: out.dev_f1,
                        best_epoch: out.best_epoch,
                        epochs_trained: out.epochs_trained,
                    })
                })
                .collect()
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        let members = pool.install(run)?;
        let kept = vec![true; members.len()];
        Ok(Ensemble { members, kept })
    }

    pub fn from_members(members: Vec<Member>, kept: Vec<bool>) -> Result<Self> {
        if members.len() != kept.len() || !kept.iter().any(|&k| k) {
            return Err(Error::Shape(format!(
                "{} members with {} keep flags",
                members.len(),
                kept.len()
            )));
        }
        Ok(Ensemble { members, kept })
    }

    pub fn prune(&mut self, sigma: f64) {
        let f1s: Vec<f64> = self.members.iter().map(|m| m.dev_f1).collect();
        self.kept = prune_mask(&f1s, sigma);
    }

    pub fn kept_count(&self) -> usize {
        self.kept.iter().filter(|&&k| k).count()
    }

    pub fn kept_members(&self) -> impl Iterator<Item = &Member> {
        self.members.iter().zip(&self.kept).filter(|(_, &k)| k).map(|(m, _)| m)
    }

    /// Per-token count of kept members predicting positive.
    pub fn vote_counts(&self, x: &[f64]) -> Result<Vec<usize>> {
        let mut counts: Vec<usize> = Vec::new();
        for m in self.kept_members() {
            let probs = predict_sentence(&m.params, x)?;
            if counts.is_empty() {
                counts = vec![0; probs.len()];
            }
            for (c, p) in counts.iter_mut().zip(probs) {
                *c += (p >= DECISION_THRESHOLD) as usize;
            }
        }
        Ok(counts)
    }

    pub fn vote(&self, x: &[f64]) -> Result<(Vec<bool>, Vec<usize>)> {
        let counts = self.vote_counts(x)?;
        Ok((majority(&counts, self.kept_count()), counts))
    }

    pub fn info(&self) -> Vec<MemberInfo> {
        self.members
            .iter()
            .zip(&self.kept)
            .map(|(m, &kept)| MemberInfo {
                seed: m.seed,
                dev_f1: m.dev_f1,
                best_epoch: m.best_epoch,
                epochs_trained: m.epochs_trained,
                kept,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, NetworkDims};

    fn kept_indices(mask: &[bool]) -> Vec<usize> {
        mask.iter().enumerate().filter(|(_, &k)| k).map(|(i, _)| i).collect()
    }

    #[test]
    fn equal_scores_keep_all_fifteen() {
        assert_eq!(prune_mask(&[0.7; 15], 1.0), vec![true; 15]);
    }

    #[test]
    fn one_outlier_then_parity() {
        let mut f = vec![0.8; 14];
        f.push(0.1);
        let mask = prune_mask(&f, 1.0);
        assert!(!mask[14]);
        assert_eq!(mask.iter().filter(|&&k| k).count(), 13);
        // Among equal scores the highest index goes.
        assert!(!mask[13]);
    }

    #[test]
    fn floor_of_three() {
        let mut f = vec![0.1; 12];
        f.extend([0.9, 0.95, 0.99]);
        let mask = prune_mask(&f, 0.0);
        assert_eq!(kept_indices(&mask), vec![12, 13, 14]);
        let f: Vec<f64> = (0..15).map(|i| if i < 3 { 0.9 } else { 0.1 + i as f64 * 0.01 }).collect();
        let mask = prune_mask(&f, -10.0);
        assert_eq!(kept_indices(&mask), vec![0, 1, 2]);
    }

    #[test]
    fn small_ensembles() {
        assert_eq!(prune_mask(&[0.5], 1.0), vec![true]);
        assert_eq!(prune_mask(&[0.5, 0.6], 1.0), vec![false, true]);
        assert!(prune_mask(&[], 1.0).is_empty());
    }

    #[test]
    fn majority_is_strict() {
        assert_eq!(majority(&[3, 2, 1, 0], 3), vec![true, true, false, false]);
        assert_eq!(majority(&[2, 1], 2), vec![true, false]);
    }

    #[test]
    fn identical_members_vote_like_one_model() {
        let p = init_params(4, NetworkDims::new(3, 3, 2)).unwrap();
        let member = Member {
            seed: 4,
            params: p.clone(),
            dev_f1: 0.5,
            best_epoch: 1,
            epochs_trained: 1,
        };
        let e = Ensemble::from_members(vec![member; 3], vec![true; 3]).unwrap();
        let x: Vec<f64> = (0..15).map(|i| (i as f64 * 0.7).sin() * 3.0).collect();
        let single: Vec<bool> = predict_sentence(&p, &x).unwrap().iter().map(|&y| y >= 0.5).collect();
        let (bits, counts) = e.vote(&x).unwrap();
        assert_eq!(bits, single);
        assert!(counts.iter().all(|&c| c == 0 || c == 3));
        assert_eq!(e.vote(&x).unwrap(), (bits, counts));
    }
}
