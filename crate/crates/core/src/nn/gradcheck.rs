use super::{network_backward, network_forward, NetworkParams, SequenceBatch};
use crate::error::Result;
use crate::loss::{self, DEFAULT_EPSILON};

fn batch_loss(p: &NetworkParams, batch: &SequenceBatch, labels: &[bool]) -> Result<f64> {
    let probs = network_forward(batch, p)?;
    Ok(1.0 - loss::soft_f1(labels, &probs, batch.mask(), DEFAULT_EPSILON)?)
}

/// Max relative error between backpropagated and central-difference
/// gradients of the soft-F1 loss, over every parameter.
pub fn grad_check(p: &NetworkParams, batch: &SequenceBatch, labels: &[bool], eps: f64) -> Result<f64> {
    grad_check_with(p, batch, labels, eps, |_| {})
}

/// As [`grad_check`], but `tamper` may alter the analytic gradients first.
pub fn grad_check_with(
    p: &NetworkParams,
    batch: &SequenceBatch,
    labels: &[bool],
    eps: f64,
    tamper: impl FnOnce(&mut NetworkParams),
) -> Result<f64> {
    let (_, mut analytic) = network_backward(batch, labels, p, |y, yh, m| {
        loss::loss_and_grad(y, yh, m, DEFAULT_EPSILON)
    })?;
    tamper(&mut analytic);
    let analytic_flat: Vec<f64> = analytic
        .tensors()
        .into_iter()
        .flat_map(|(_, _, v)| v.iter().copied())
        .collect();

    let mut probe = p.clone();
    let mut worst = 0.0f64;
    let mut k = 0;
    let n_tensors = probe.tensors_mut().len();
    for ti in 0..n_tensors {
        let len = probe.tensors_mut()[ti].len();
        for j in 0..len {
            let orig = probe.tensors_mut()[ti][j];
            probe.tensors_mut()[ti][j] = orig + eps;
            let plus = batch_loss(&probe, batch, labels)?;
            probe.tensors_mut()[ti][j] = orig - eps;
            let minus = batch_loss(&probe, batch, labels)?;
            probe.tensors_mut()[ti][j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic_flat[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
            k += 1;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, NetworkDims};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_case(seed: u64) -> (NetworkParams, SequenceBatch, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = init_params(seed, NetworkDims::new(5, 4, 3)).unwrap();
        let batch_size = rng.gen_range(1..=4);
        let max_len = 8;
        let sentences: Vec<Vec<f64>> = (0..batch_size)
            .map(|_| {
                let len = rng.gen_range(1..=max_len);
                (0..len * 5).map(|_| rng.gen_range(-1.0..1.0)).collect()
            })
            .collect();
        let batch = SequenceBatch::from_sentences(&sentences, 5, max_len).unwrap();
        let mut labels: Vec<bool> = (0..batch_size * max_len).map(|_| rng.gen_bool(0.4)).collect();
        labels[0] = true;
        (p, batch, labels)
    }

    // Steps near 1e-5 are roundoff-dominated for gradients close to the
    // 1e-8 floor of the relative error; 3e-4 balances roundoff and truncation.
    #[test]
    fn random_small_nets_pass() {
        for seed in 0..5 {
            let (p, batch, labels) = random_case(seed);
            let err = grad_check(&p, &batch, &labels, 3e-4).unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let (p, batch, labels) = random_case(42);
        let err = grad_check_with(&p, &batch, &labels, 1e-5, |g| g.out_b *= 2.0).unwrap();
        assert!(err > 1e-2);
    }

    #[test]
    fn all_negative_labels_give_zero_error() {
        let (p, batch, _) = random_case(3);
        let labels = vec![false; batch.batch_size() * batch.max_len()];
        assert_eq!(grad_check(&p, &batch, &labels, 1e-5).unwrap(), 0.0);
    }
}
