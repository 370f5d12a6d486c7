use super::{sigmoid, LstmDirectionParams};
use crate::error::{Error, Result};

/// A single LSTM step.
///
/// Gates `i, f, o` are sigmoids, the candidate `g` is a tanh,
/// `c_t = f⊙c_prev + i⊙g` and `h_t = o⊙tanh(c_t)`.
pub fn lstm_cell_forward(
    x_t: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    p: &LstmDirectionParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    p.check()?;
    let h = p.hidden();
    if x_t.len() != p.input_size() || h_prev.len() != h || c_prev.len() != h {
        return Err(Error::Shape(format!(
            "cell expects x:{} h:{h} c:{h}, got x:{} h:{} c:{}",
            p.input_size(),
            x_t.len(),
            h_prev.len(),
            c_prev.len()
        )));
    }
    let mut pre = p.b.clone();
    p.w.gemv_acc(x_t, &mut pre);
    p.u.gemv_acc(h_prev, &mut pre);
    let mut c = vec![0.0; h];
    let mut out = vec![0.0; h];
    activate(&mut pre, h);
    for j in 0..h {
        c[j] = pre[h + j] * c_prev[j] + pre[j] * pre[2 * h + j];
        out[j] = pre[3 * h + j] * c[j].tanh();
    }
    Ok((out, c))
}

#[inline]
fn activate(gates: &mut [f64], h: usize) {
    for v in &mut gates[..2 * h] {
        *v = sigmoid(*v);
    }
    for v in &mut gates[2 * h..3 * h] {
        *v = v.tanh();
    }
    for v in &mut gates[3 * h..] {
        *v = sigmoid(*v);
    }
}

/// Activations of one direction over a sequence, indexed by processing step.
#[derive(Debug, Clone)]
pub(crate) struct DirectionTrace {
    pub len: usize,
    pub hidden: usize,
    pub reverse: bool,
    gates: Vec<f64>,
    cells: Vec<f64>,
    tanh_cells: Vec<f64>,
    pub outputs: Vec<f64>,
}

impl DirectionTrace {
    /// Hidden state emitted at sequence position `t`.
    #[inline]
    pub fn output_at(&self, t: usize) -> &[f64] {
        let step = if self.reverse { self.len - 1 - t } else { t };
        &self.outputs[step * self.hidden..(step + 1) * self.hidden]
    }
}

#[inline]
fn position(step: usize, len: usize, reverse: bool) -> usize {
    if reverse {
        len - 1 - step
    } else {
        step
    }
}

/// Runs one direction over `len` input rows of width `p.input_size()`.
/// With `reverse`, step `s` consumes position `len-1-s`.
pub(crate) fn forward_direction(
    p: &LstmDirectionParams,
    inputs: &[f64],
    len: usize,
    reverse: bool,
) -> DirectionTrace {
    let h = p.hidden();
    let d = p.input_size();
    let mut gates = vec![0.0; len * 4 * h];
    let mut cells = vec![0.0; len * h];
    let mut tanh_cells = vec![0.0; len * h];
    let mut outputs = vec![0.0; len * h];
    for step in 0..len {
        let t = position(step, len, reverse);
        let x = &inputs[t * d..(t + 1) * d];
        let pre = &mut gates[step * 4 * h..(step + 1) * 4 * h];
        pre.copy_from_slice(&p.b);
        p.w.gemv_acc(x, pre);
        if step > 0 {
            p.u.gemv_acc(&outputs[(step - 1) * h..step * h], pre);
        }
        activate(pre, h);
        for j in 0..h {
            let c_prev = if step > 0 { cells[(step - 1) * h + j] } else { 0.0 };
            let c = pre[h + j] * c_prev + pre[j] * pre[2 * h + j];
            let tc = c.tanh();
            cells[step * h + j] = c;
            tanh_cells[step * h + j] = tc;
            outputs[step * h + j] = pre[3 * h + j] * tc;
        }
    }
    DirectionTrace {
        len,
        hidden: h,
        reverse,
        gates,
        cells,
        tanh_cells,
        outputs,
    }
}

/// Backpropagation through time for one direction.
///
/// `d_outputs` holds ∂L/∂h per processing step. Parameter gradients are
/// accumulated into `grad`; when `d_inputs` is given, ∂L/∂x is accumulated
/// there by sequence position.
pub(crate) fn backward_direction(
    p: &LstmDirectionParams,
    trace: &DirectionTrace,
    inputs: &[f64],
    d_outputs: &[f64],
    grad: &mut LstmDirectionParams,
    mut d_inputs: Option<&mut [f64]>,
) {
    let h = trace.hidden;
    let d = p.input_size();
    let len = trace.len;
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut da = vec![0.0; 4 * h];
    for step in (0..len).rev() {
        let t = position(step, len, trace.reverse);
        let g = &trace.gates[step * 4 * h..(step + 1) * 4 * h];
        for j in 0..h {
            let dh = d_outputs[step * h + j] + dh_next[j];
            let (i, f, cand, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
            let tc = trace.tanh_cells[step * h + j];
            let c_prev = if step > 0 { trace.cells[(step - 1) * h + j] } else { 0.0 };
            let d_o = dh * tc;
            let dc = dh * o * (1.0 - tc * tc) + dc_next[j];
            dc_next[j] = dc * f;
            da[j] = dc * cand * i * (1.0 - i);
            da[h + j] = dc * c_prev * f * (1.0 - f);
            da[2 * h + j] = dc * i * (1.0 - cand * cand);
            da[3 * h + j] = d_o * o * (1.0 - o);
        }
        let x = &inputs[t * d..(t + 1) * d];
        for (gb, a) in grad.b.iter_mut().zip(&da) {
            *gb += a;
        }
        grad.w.rank1_acc(&da, x);
        dh_next.fill(0.0);
        if step > 0 {
            grad.u.rank1_acc(&da, &trace.outputs[(step - 1) * h..step * h]);
            p.u.gemv_t_acc(&da, &mut dh_next);
        }
        if let Some(dx) = d_inputs.as_deref_mut() {
            p.w.gemv_t_acc(&da, &mut dx[t * d..(t + 1) * d]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, NetworkDims};

    #[test]
    fn zero_params_give_zero_state() {
        let p = LstmDirectionParams::zeros(3, 2);
        let (h, c) = lstm_cell_forward(&[0.3, -1.0, 2.0], &[0.0; 2], &[0.0; 2], &p).unwrap();
        assert_eq!(h, vec![0.0, 0.0]);
        assert_eq!(c, vec![0.0, 0.0]);
    }

    #[test]
    fn saturated_gates_drive_cell_to_one() {
        let mut p = LstmDirectionParams::zeros(2, 1);
        p.b = vec![50.0, 50.0, 50.0, 50.0];
        let (h, c) = lstm_cell_forward(&[0.0, 0.0], &[0.0], &[0.0], &p).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-12);
        assert!((h[0] - 1f64.tanh()).abs() < 1e-12);
    }

    #[test]
    fn cell_rejects_wrong_shapes() {
        let p = LstmDirectionParams::zeros(3, 2);
        assert!(lstm_cell_forward(&[0.0; 2], &[0.0; 2], &[0.0; 2], &p).is_err());
        assert!(lstm_cell_forward(&[0.0; 3], &[0.0; 1], &[0.0; 2], &p).is_err());
    }

    #[test]
    fn direction_matches_repeated_cell_calls() {
        let net = init_params(5, NetworkDims::new(3, 4, 2)).unwrap();
        let p = &net.layer1.forward;
        let xs: Vec<f64> = (0..15).map(|k| ((k * 37 % 11) as f64 - 5.0) / 4.0).collect();
        let trace = forward_direction(p, &xs, 5, false);
        let (mut h, mut c) = (vec![0.0; 4], vec![0.0; 4]);
        for t in 0..5 {
            let (nh, nc) = lstm_cell_forward(&xs[t * 3..(t + 1) * 3], &h, &c, p).unwrap();
            h = nh;
            c = nc;
            for j in 0..4 {
                assert!((trace.output_at(t)[j] - h[j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn reverse_direction_equals_forward_on_reversed_input() {
        let net = init_params(9, NetworkDims::new(3, 4, 2)).unwrap();
        let (fwd, bwd) = (&net.layer1.forward, &net.layer1.backward);
        let len = 6;
        let xs: Vec<f64> = (0..len * 3).map(|k| (k as f64 * 0.7).sin()).collect();
        let mut reversed = Vec::with_capacity(xs.len());
        for t in (0..len).rev() {
            reversed.extend_from_slice(&xs[t * 3..(t + 1) * 3]);
        }
        let via_reverse = forward_direction(bwd, &xs, len, true);
        let direct = forward_direction(bwd, &reversed, len, false);
        for t in 0..len {
            assert_eq!(via_reverse.output_at(t), direct.output_at(len - 1 - t));
        }
        // swapping in the forward params changes the result
        let other = forward_direction(fwd, &xs, len, true);
        assert_ne!(other.outputs, via_reverse.outputs);
    }
}
