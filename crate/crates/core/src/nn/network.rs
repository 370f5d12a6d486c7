use super::lstm::{backward_direction, forward_direction, DirectionTrace};
use super::{axpy, dot, sigmoid, NetworkParams, SequenceBatch};
use crate::error::{Error, Result};

pub(crate) struct SentenceTrace {
    len: usize,
    l1f: DirectionTrace,
    l1b: DirectionTrace,
    /// `len × 2H1`, `[forward; backward]` per position.
    h1: Vec<f64>,
    l2f: DirectionTrace,
    l2b: DirectionTrace,
    h2: Vec<f64>,
    pub probs: Vec<f64>,
}

fn concat_directions(f: &DirectionTrace, b: &DirectionTrace) -> Vec<f64> {
    let h = f.hidden;
    let mut out = vec![0.0; f.len * 2 * h];
    for t in 0..f.len {
        out[t * 2 * h..t * 2 * h + h].copy_from_slice(f.output_at(t));
        out[t * 2 * h + h..(t + 1) * 2 * h].copy_from_slice(b.output_at(t));
    }
    out
}

pub(crate) fn forward_sentence(p: &NetworkParams, x: &[f64], len: usize) -> SentenceTrace {
    let l1f = forward_direction(&p.layer1.forward, x, len, false);
    let l1b = forward_direction(&p.layer1.backward, x, len, true);
    let h1 = concat_directions(&l1f, &l1b);
    let l2f = forward_direction(&p.layer2.forward, &h1, len, false);
    let l2b = forward_direction(&p.layer2.backward, &h1, len, true);
    let h2 = concat_directions(&l2f, &l2b);
    let width = p.out_w.len();
    let probs = (0..len)
        .map(|t| sigmoid(p.out_b + dot(&p.out_w, &h2[t * width..(t + 1) * width])))
        .collect();
    SentenceTrace {
        len,
        l1f,
        l1b,
        h1,
        l2f,
        l2b,
        h2,
        probs,
    }
}

/// Splits `len × 2H` position-major gradients into per-step buffers for
/// the forward and backward directions.
fn split_directions(d: &[f64], len: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let mut df = vec![0.0; len * h];
    let mut db = vec![0.0; len * h];
    for t in 0..len {
        df[t * h..(t + 1) * h].copy_from_slice(&d[t * 2 * h..t * 2 * h + h]);
        let step = len - 1 - t;
        db[step * h..(step + 1) * h].copy_from_slice(&d[t * 2 * h + h..(t + 1) * 2 * h]);
    }
    (df, db)
}

/// Accumulates gradients for one sentence given ∂L/∂ŷ per real token.
pub(crate) fn backward_sentence(
    p: &NetworkParams,
    trace: &SentenceTrace,
    x: &[f64],
    d_probs: &[f64],
    g: &mut NetworkParams,
) {
    let len = trace.len;
    let width = p.out_w.len();
    let h2 = width / 2;
    let h1 = p.layer1.forward.hidden();
    let mut dh2 = vec![0.0; len * width];
    for t in 0..len {
        let y = trace.probs[t];
        let dlogit = d_probs[t] * y * (1.0 - y);
        if dlogit == 0.0 {
            continue;
        }
        g.out_b += dlogit;
        axpy(dlogit, &trace.h2[t * width..(t + 1) * width], &mut g.out_w);
        axpy(dlogit, &p.out_w, &mut dh2[t * width..(t + 1) * width]);
    }
    let (df, db) = split_directions(&dh2, len, h2);
    let mut dh1 = vec![0.0; len * 2 * h1];
    backward_direction(&p.layer2.forward, &trace.l2f, &trace.h1, &df, &mut g.layer2.forward, Some(&mut dh1));
    backward_direction(&p.layer2.backward, &trace.l2b, &trace.h1, &db, &mut g.layer2.backward, Some(&mut dh1));
    let (df, db) = split_directions(&dh1, len, h1);
    backward_direction(&p.layer1.forward, &trace.l1f, x, &df, &mut g.layer1.forward, None);
    backward_direction(&p.layer1.backward, &trace.l1b, x, &db, &mut g.layer1.backward, None);
}

fn check_batch(batch: &SequenceBatch, p: &NetworkParams) -> Result<()> {
    if batch.feature_dim() != p.input_size() {
        return Err(Error::Shape(format!(
            "batch feature_dim {} != network input {}",
            batch.feature_dim(),
            p.input_size()
        )));
    }
    Ok(())
}

/// Per-token probabilities for one unpadded sentence (`len × D` rows).
pub fn predict_sentence(p: &NetworkParams, x: &[f64]) -> Result<Vec<f64>> {
    let d = p.input_size();
    if d == 0 || !x.len().is_multiple_of(d) {
        return Err(Error::Shape(format!(
            "sentence of {} values is not a multiple of input size {d}",
            x.len()
        )));
    }
    Ok(forward_sentence(p, x, x.len() / d).probs)
}

/// Per-token probabilities laid out `[sentence][position]`. Padded
/// positions are never computed and hold 0.
pub fn network_forward(batch: &SequenceBatch, p: &NetworkParams) -> Result<Vec<f64>> {
    check_batch(batch, p)?;
    let max_len = batch.max_len();
    let mut out = vec![0.0; batch.batch_size() * max_len];
    for b in 0..batch.batch_size() {
        let len = batch.lengths()[b];
        let trace = forward_sentence(p, batch.sentence(b), len);
        out[b * max_len..b * max_len + len].copy_from_slice(&trace.probs);
    }
    Ok(out)
}

/// Exact gradients of a batch loss.
///
/// `loss_fn(labels, probs, mask)` returns the scalar loss and ∂loss/∂ŷ for
/// every slot of the padded layout; padded slots are zeroed before
/// backpropagation regardless of what it returns.
pub fn network_backward<F>(
    batch: &SequenceBatch,
    labels: &[bool],
    p: &NetworkParams,
    loss_fn: F,
) -> Result<(f64, NetworkParams)>
where
    F: FnOnce(&[bool], &[f64], &[bool]) -> Result<(f64, Vec<f64>)>,
{
    check_batch(batch, p)?;
    let max_len = batch.max_len();
    if labels.len() != batch.batch_size() * max_len {
        return Err(Error::Shape(format!(
            "labels: expected {}, got {}",
            batch.batch_size() * max_len,
            labels.len()
        )));
    }
    let traces: Vec<SentenceTrace> = (0..batch.batch_size())
        .map(|b| forward_sentence(p, batch.sentence(b), batch.lengths()[b]))
        .collect();
    let mut probs = vec![0.0; labels.len()];
    for (b, tr) in traces.iter().enumerate() {
        probs[b * max_len..b * max_len + tr.len].copy_from_slice(&tr.probs);
    }
    let (loss, mut d_probs) = loss_fn(labels, &probs, batch.mask())?;
    if d_probs.len() != probs.len() {
        return Err(Error::Shape("loss gradient length mismatch".into()));
    }
    for (d, &m) in d_probs.iter_mut().zip(batch.mask()) {
        if !m {
            *d = 0.0;
        }
    }
    let mut grads = p.zeros_like();
    for (b, tr) in traces.iter().enumerate() {
        backward_sentence(
            p,
            tr,
            batch.sentence(b),
            &d_probs[b * max_len..b * max_len + tr.len],
            &mut grads,
        );
    }
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss;
    use crate::nn::{init_params, NetworkDims};

    fn sample_sentence(len: usize, d: usize, salt: f64) -> Vec<f64> {
        (0..len * d).map(|k| ((k as f64 + salt) * 0.37).sin()).collect()
    }

    #[test]
    fn zero_params_give_one_half() {
        let p = NetworkParams::zeros(NetworkDims::new(3, 2, 2));
        let x = sample_sentence(4, 3, 0.0);
        let probs = predict_sentence(&p, &x).unwrap();
        assert!(probs.iter().all(|&y| y == 0.5));
    }

    #[test]
    fn padding_does_not_change_real_token_outputs() {
        let p = init_params(2, NetworkDims::new(3, 4, 3)).unwrap();
        let x = sample_sentence(5, 3, 1.0);
        let short = SequenceBatch::from_sentences(&[&x], 3, 10).unwrap();
        let long = SequenceBatch::from_sentences(&[&x], 3, 20).unwrap();
        let a = network_forward(&short, &p).unwrap();
        let b = network_forward(&long, &p).unwrap();
        assert_eq!(&a[..5], &b[..5]);
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let p = init_params(4, NetworkDims::new(3, 4, 3)).unwrap();
        let x = sample_sentence(4, 3, 2.0);
        let batch = SequenceBatch::from_sentences(&[&x], 3, 6).unwrap();
        let labels = vec![false; 6];
        let (_, g) = network_backward(&batch, &labels, &p, |_, probs, _| {
            Ok((0.0, vec![0.0; probs.len()]))
        })
        .unwrap();
        assert_eq!(g.l2_norm(), 0.0);
    }

    #[test]
    fn padded_features_do_not_affect_gradients() {
        let p = init_params(6, NetworkDims::new(3, 4, 3)).unwrap();
        let xs = [sample_sentence(4, 3, 0.5), sample_sentence(2, 3, 1.5)];
        let mut batch = SequenceBatch::from_sentences(&xs, 3, 6).unwrap();
        let mut labels = vec![false; 12];
        labels[0] = true;
        labels[7] = true;
        let run = |b: &SequenceBatch| {
            network_backward(b, &labels, &p, |y, yh, m| loss::loss_and_grad(y, yh, m, 1e-8))
                .unwrap()
                .1
        };
        let before = run(&batch);
        let mask = batch.mask().to_vec();
        for (slot, _) in mask.iter().enumerate().filter(|(_, &m)| !m) {
            batch.features_mut()[slot * 3..(slot + 1) * 3].fill(123.0);
        }
        let after = run(&batch);
        assert_eq!(before, after);
    }

    #[test]
    fn rejects_feature_dim_mismatch() {
        let p = init_params(6, NetworkDims::new(3, 4, 3)).unwrap();
        let batch = SequenceBatch::from_sentences(&[vec![0.0; 8]], 4, 3).unwrap();
        assert!(matches!(network_forward(&batch, &p), Err(Error::Shape(_))));
    }
}
