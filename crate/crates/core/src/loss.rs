//! Soft-F1 surrogate loss.
//!
//! With labels `y ∈ {0,1}` and predictions `ŷ ∈ [0,1]`, the soft counts are
//! `tp_s = Σ yᵢŷᵢ` and `fp_s = Σ (1−yᵢ)ŷᵢ`, and
//!
//! ```text
//! F1_s = 2·tp_s / (|Y+| + tp_s + fp_s)
//! ```
//!
//! Training minimises `1 − F1_s`. On hard predictions the soft counts are the
//! true and false positive counts, so `F1_s` is the ordinary F1 score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Denominator guard used during training.
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// How soft counts are pooled within an optimisation step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum F1Aggregation {
    /// One F1_s over all real tokens of the batch.
    #[default]
    Batch,
    /// Mean of per-sentence F1_s.
    Sentence,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossStats {
    pub tp_s: f64,
    pub fp_s: f64,
    pub pos_count: usize,
    pub f1_s: f64,
    pub epsilon: f64,
}

fn check_lengths(y: &[bool], y_hat_len: usize, mask: &[bool]) -> Result<()> {
    if y.len() != y_hat_len || y.len() != mask.len() {
        return Err(Error::Shape(format!(
            "labels {}, predictions {}, mask {}",
            y.len(),
            y_hat_len,
            mask.len()
        )));
    }
    Ok(())
}

/// `(tp_s, fp_s, |Y+|)` over unmasked positions.
pub fn soft_counts(y: &[bool], y_hat: &[f64], mask: &[bool]) -> Result<(f64, f64, usize)> {
    check_lengths(y, y_hat.len(), mask)?;
    let (mut tp, mut fp, mut pos) = (0.0, 0.0, 0usize);
    for ((&yi, &pi), &m) in y.iter().zip(y_hat).zip(mask) {
        if !m {
            continue;
        }
        if !(0.0..=1.0).contains(&pi) {
            return Err(Error::Domain(format!("prediction {pi} outside [0,1]")));
        }
        if yi {
            tp += pi;
            pos += 1;
        } else {
            fp += pi;
        }
    }
    Ok((tp, fp, pos))
}

pub fn loss_stats(y: &[bool], y_hat: &[f64], mask: &[bool], epsilon: f64) -> Result<LossStats> {
    let (tp_s, fp_s, pos_count) = soft_counts(y, y_hat, mask)?;
    let denom = pos_count as f64 + tp_s + fp_s + epsilon;
    let f1_s = if denom > 0.0 { 2.0 * tp_s / denom } else { 0.0 };
    Ok(LossStats {
        tp_s,
        fp_s,
        pos_count,
        f1_s,
        epsilon,
    })
}

pub fn soft_f1(y: &[bool], y_hat: &[f64], mask: &[bool], epsilon: f64) -> Result<f64> {
    Ok(loss_stats(y, y_hat, mask, epsilon)?.f1_s)
}

/// `1 − F1_s` and its gradient with respect to every prediction.
///
/// With `A = tp_s`, `B = fp_s`, `P = |Y+|` and `D = P + A + B + ε`:
/// `∂F1_s/∂ŷᵢ = 2(P + B + ε)/D²` for positives and `−2A/D²` for negatives.
/// An all-negative batch therefore has a zero gradient.
pub fn loss_and_grad(
    y: &[bool],
    y_hat: &[f64],
    mask: &[bool],
    epsilon: f64,
) -> Result<(f64, Vec<f64>)> {
    let s = loss_stats(y, y_hat, mask, epsilon)?;
    let mut grad = vec![0.0; y.len()];
    let denom = s.pos_count as f64 + s.tp_s + s.fp_s + epsilon;
    if denom > 0.0 {
        let d2 = denom * denom;
        let g_pos = -2.0 * (s.pos_count as f64 + s.fp_s + epsilon) / d2;
        let g_neg = 2.0 * s.tp_s / d2;
        for ((g, &yi), &m) in grad.iter_mut().zip(y).zip(mask) {
            if m {
                *g = if yi { g_pos } else { g_neg };
            }
        }
    }
    Ok((1.0 - s.f1_s, grad))
}

/// Mean over sentences of per-sentence `1 − F1_s`, for padded
/// `[sentence][position]` layouts with `max_len` positions each.
pub fn sentence_mean_loss_and_grad(
    y: &[bool],
    y_hat: &[f64],
    mask: &[bool],
    max_len: usize,
    epsilon: f64,
) -> Result<(f64, Vec<f64>)> {
    check_lengths(y, y_hat.len(), mask)?;
    if max_len == 0 || !y.len().is_multiple_of(max_len) {
        return Err(Error::Shape(format!("{} slots with max_len {max_len}", y.len())));
    }
    let n = y.len() / max_len;
    let mut grad = vec![0.0; y.len()];
    let mut total = 0.0;
    for s in 0..n {
        let r = s * max_len..(s + 1) * max_len;
        let (l, g) = loss_and_grad(&y[r.clone()], &y_hat[r.clone()], &mask[r.clone()], epsilon)?;
        total += l;
        for (dst, src) in grad[r].iter_mut().zip(g) {
            *dst = src / n as f64;
        }
    }
    Ok((total / n.max(1) as f64, grad))
}

/// Precision, recall and F1 of hard predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// Scores from counts of correct, spurious and missing items.
    ///
    /// With nothing predicted and nothing to find, all three are 1. With no
    /// predictions, precision is 0; with no gold, recall is 0.
    pub fn from_counts(correct: usize, spurious: usize, missing: usize) -> Self {
        let predicted = correct + spurious;
        let gold = correct + missing;
        if predicted == 0 && gold == 0 {
            return Prf {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
            };
        }
        let precision = if predicted == 0 { 0.0 } else { correct as f64 / predicted as f64 };
        let recall = if gold == 0 { 0.0 } else { correct as f64 / gold as f64 };
        let f1 = if correct == 0 {
            0.0
        } else {
            2.0 * correct as f64 / (2 * correct + spurious + missing) as f64
        };
        Prf {
            precision,
            recall,
            f1,
        }
    }
}

pub fn exact_f1(y_true: &[bool], y_pred: &[bool], mask: &[bool]) -> Result<Prf> {
    check_lengths(y_true, y_pred.len(), mask)?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for ((&t, &p), &m) in y_true.iter().zip(y_pred).zip(mask) {
        if !m {
            continue;
        }
        match (t, p) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(Prf::from_counts(tp, fp, fn_))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bits(v: &[u8]) -> Vec<bool> {
        v.iter().map(|&b| b == 1).collect()
    }

    fn all(n: usize) -> Vec<bool> {
        vec![true; n]
    }

    #[test]
    fn soft_counts_examples() {
        assert_eq!(
            soft_counts(&bits(&[1, 0, 1]), &[1.0, 0.0, 0.0], &all(3)).unwrap(),
            (1.0, 0.0, 2)
        );
        assert_eq!(soft_counts(&bits(&[1, 0]), &[0.5, 0.5], &all(2)).unwrap(), (0.5, 0.5, 1));
        let (tp, fp, pos) = soft_counts(&bits(&[0, 0, 0]), &[0.9; 3], &all(3)).unwrap();
        assert_eq!((tp, pos), (0.0, 0));
        assert!((fp - 2.7).abs() < 1e-12);
    }

    #[test]
    fn soft_counts_rejects_out_of_range() {
        assert!(matches!(
            soft_counts(&bits(&[1]), &[1.5], &all(1)),
            Err(Error::Domain(_))
        ));
        assert!(soft_counts(&bits(&[1]), &[f64::NAN], &all(1)).is_err());
    }

    #[test]
    fn masked_positions_are_ignored() {
        let mask = vec![true, false];
        let (tp, fp, pos) = soft_counts(&bits(&[1, 1]), &[0.25, 7.0], &mask).unwrap();
        assert_eq!((tp, fp, pos), (0.25, 0.0, 1));
    }

    #[test]
    fn soft_f1_examples() {
        let f = soft_f1(&bits(&[1, 0, 1]), &[1.0, 0.0, 0.0], &all(3), 0.0).unwrap();
        assert!((f - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(soft_f1(&bits(&[1, 0, 1]), &[1.0, 0.0, 1.0], &all(3), 0.0).unwrap(), 1.0);
        assert_eq!(soft_f1(&bits(&[1, 0]), &[0.5, 0.5], &all(2), 0.0).unwrap(), 0.5);
    }

    #[test]
    fn closed_form_gradient_example() {
        let (loss, g) = loss_and_grad(&bits(&[1, 0, 1]), &[1.0, 0.0, 0.0], &all(3), 0.0).unwrap();
        assert!((loss - 1.0 / 3.0).abs() < 1e-15);
        assert!((g[0] + 4.0 / 9.0).abs() < 1e-15);
        assert!((g[1] - 2.0 / 9.0).abs() < 1e-15);
        assert!((g[2] + 4.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn all_negative_batch_has_zero_gradient() {
        let (loss, g) = loss_and_grad(&bits(&[0, 0, 0]), &[0.3, 0.9, 0.1], &all(3), 1e-8).unwrap();
        assert_eq!(loss, 1.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn exact_f1_examples() {
        let s = exact_f1(&bits(&[1, 0, 1]), &bits(&[1, 0, 0]), &all(3)).unwrap();
        assert_eq!((s.precision, s.recall), (1.0, 0.5));
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);
        let z = exact_f1(&bits(&[0, 0]), &bits(&[0, 0]), &all(2)).unwrap();
        assert_eq!((z.precision, z.recall, z.f1), (1.0, 1.0, 1.0));
        let fp_only = exact_f1(&bits(&[0, 0]), &bits(&[1, 0]), &all(2)).unwrap();
        assert_eq!((fp_only.precision, fp_only.recall, fp_only.f1), (0.0, 0.0, 0.0));
        let none = exact_f1(&bits(&[1, 0]), &bits(&[0, 0]), &all(2)).unwrap();
        assert_eq!((none.precision, none.recall, none.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn sentence_mean_averages_per_sentence_losses() {
        let y = bits(&[1, 0, 0, 1]);
        let yh = [1.0, 0.0, 0.5, 0.5];
        let (l, g) = sentence_mean_loss_and_grad(&y, &yh, &all(4), 2, 0.0).unwrap();
        let (l1, _) = loss_and_grad(&y[..2], &yh[..2], &all(2), 0.0).unwrap();
        let (l2, g2) = loss_and_grad(&y[2..], &yh[2..], &all(2), 0.0).unwrap();
        assert!((l - (l1 + l2) / 2.0).abs() < 1e-15);
        assert!((g[3] - g2[1] / 2.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn f1_and_loss_stay_in_unit_interval(
            cases in prop::collection::vec((any::<bool>(), 0.0f64..=1.0), 1..40)
        ) {
            let y: Vec<bool> = cases.iter().map(|c| c.0).collect();
            let yh: Vec<f64> = cases.iter().map(|c| c.1).collect();
            let (loss, _) = loss_and_grad(&y, &yh, &all(y.len()), DEFAULT_EPSILON).unwrap();
            prop_assert!((0.0..=1.0).contains(&loss));
        }

        #[test]
        fn gradient_signs(
            cases in prop::collection::vec((any::<bool>(), 0.0f64..=1.0), 1..40)
        ) {
            let y: Vec<bool> = cases.iter().map(|c| c.0).collect();
            let yh: Vec<f64> = cases.iter().map(|c| c.1).collect();
            prop_assume!(y.iter().any(|&b| b));
            let (_, g) = loss_and_grad(&y, &yh, &all(y.len()), 0.0).unwrap();
            let (tp, _, _) = soft_counts(&y, &yh, &all(y.len())).unwrap();
            for (gi, &yi) in g.iter().zip(&y) {
                // loss gradient is the negation of the F1_s gradient
                if yi {
                    prop_assert!(*gi <= 0.0);
                } else if tp > 0.0 {
                    prop_assert!(*gi > 0.0);
                } else {
                    prop_assert!(*gi >= 0.0);
                }
            }
        }

        #[test]
        fn raising_a_positive_never_lowers_f1(
            cases in prop::collection::vec((any::<bool>(), 0.0f64..=1.0), 1..30),
            pick in any::<prop::sample::Index>(),
            bump in 0.0f64..=1.0,
        ) {
            let y: Vec<bool> = cases.iter().map(|c| c.0).collect();
            let mut yh: Vec<f64> = cases.iter().map(|c| c.1).collect();
            let positives: Vec<usize> = (0..y.len()).filter(|&i| y[i]).collect();
            prop_assume!(!positives.is_empty());
            let i = positives[pick.index(positives.len())];
            let before = soft_f1(&y, &yh, &all(y.len()), 0.0).unwrap();
            yh[i] = yh[i] + (1.0 - yh[i]) * bump;
            let after = soft_f1(&y, &yh, &all(y.len()), 0.0).unwrap();
            prop_assert!(after >= before - 1e-15);
        }
    }
}
