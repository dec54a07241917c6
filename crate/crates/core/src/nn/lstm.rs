//! LSTM cell and bidirectional layer with backpropagation through time.
//!
//! Gate order in the fused parameter matrices is input, forget, candidate,
//! output. Initial hidden and cell states are zero.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parameters of one direction: `w_x [input, 4h]`, `w_h [h, 4h]`, `b [4h]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmDirParams {
    pub w_x: Tensor,
    pub w_h: Tensor,
    pub b: Vec<f64>,
}

impl LstmDirParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_x: Tensor::zeros(&[input, 4 * hidden]),
            w_h: Tensor::zeros(&[hidden, 4 * hidden]),
            b: vec![0.0; 4 * hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_h.shape()[0]
    }

    pub fn input(&self) -> usize {
        self.w_x.shape()[0]
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-step values cached for BPTT.
pub struct LstmCache {
    /// Post-activation gates per step: (i, f, g, o), each len h.
    gates: Vec<Vec<f64>>,
    /// Cell states per step.
    cells: Vec<Vec<f64>>,
    /// Hidden states per step.
    hiddens: Vec<Vec<f64>>,
}

/// Run one direction over `seq` ([T, input], natural time order).
/// Returns hidden states per step and the cache.
pub fn lstm_forward(seq: &Tensor, p: &LstmDirParams) -> Result<(Tensor, LstmCache)> {
    let t_len = seq.shape()[0];
    let input = seq.shape()[1];
    if input != p.input() {
        return Err(Error::ShapeError(format!(
            "lstm: input width {} vs params expecting {}",
            input,
            p.input()
        )));
    }
    let h = p.hidden();
    let mut hiddens = Vec::with_capacity(t_len);
    let mut cells = Vec::with_capacity(t_len);
    let mut gates = Vec::with_capacity(t_len);
    let mut out = Tensor::zeros(&[t_len, h]);
    let mut h_prev = vec![0.0; h];
    let mut c_prev = vec![0.0; h];
    let mut z = vec![0.0; 4 * h];
    for t in 0..t_len {
        z.copy_from_slice(&p.b);
        let x_t = seq.row(t);
        for (i, &xi) in x_t.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (zj, wj) in z.iter_mut().zip(p.w_x.row(i)) {
                *zj += xi * wj;
            }
        }
        for (i, &hi) in h_prev.iter().enumerate() {
            if hi == 0.0 {
                continue;
            }
            for (zj, wj) in z.iter_mut().zip(p.w_h.row(i)) {
                *zj += hi * wj;
            }
        }
        let mut gate = vec![0.0; 4 * h];
        let mut c_t = vec![0.0; h];
        let mut h_t = vec![0.0; h];
        for j in 0..h {
            let ig = sigmoid(z[j]);
            let fg = sigmoid(z[h + j]);
            let gg = z[2 * h + j].tanh();
            let og = sigmoid(z[3 * h + j]);
            gate[j] = ig;
            gate[h + j] = fg;
            gate[2 * h + j] = gg;
            gate[3 * h + j] = og;
            c_t[j] = fg * c_prev[j] + ig * gg;
            h_t[j] = og * c_t[j].tanh();
        }
        out.data_mut()[t * h..(t + 1) * h].copy_from_slice(&h_t);
        gates.push(gate);
        cells.push(c_t.clone());
        hiddens.push(h_t.clone());
        h_prev = h_t;
        c_prev = c_t;
    }
    Ok((out, LstmCache { gates, cells, hiddens }))
}

/// BPTT for one direction. `d_out` is the gradient w.r.t. every hidden state
/// ([T, h]). Returns the gradient w.r.t. the input sequence and accumulates
/// parameter gradients.
pub fn lstm_backward(
    seq: &Tensor,
    p: &LstmDirParams,
    cache: &LstmCache,
    d_out: &Tensor,
    grads: &mut LstmDirParams,
) -> Tensor {
    let t_len = seq.shape()[0];
    let h = p.hidden();
    let input = p.input();
    let mut d_seq = Tensor::zeros(&[t_len, input]);
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dz = vec![0.0; 4 * h];
    for t in (0..t_len).rev() {
        let gate = &cache.gates[t];
        let c_t = &cache.cells[t];
        let c_prev: &[f64] = if t == 0 { &[] } else { &cache.cells[t - 1] };
        let h_prev: &[f64] = if t == 0 { &[] } else { &cache.hiddens[t - 1] };
        for j in 0..h {
            let dh = d_out.at2(t, j) + dh_next[j];
            let (ig, fg, gg, og) = (gate[j], gate[h + j], gate[2 * h + j], gate[3 * h + j]);
            let tanh_c = c_t[j].tanh();
            let d_og = dh * tanh_c;
            let mut dc = dh * og * (1.0 - tanh_c * tanh_c) + dc_next[j];
            let cp = if t == 0 { 0.0 } else { c_prev[j] };
            let d_ig = dc * gg;
            let d_fg = dc * cp;
            let d_gg = dc * ig;
            dc *= fg;
            dc_next[j] = dc;
            dz[j] = d_ig * ig * (1.0 - ig);
            dz[h + j] = d_fg * fg * (1.0 - fg);
            dz[2 * h + j] = d_gg * (1.0 - gg * gg);
            dz[3 * h + j] = d_og * og * (1.0 - og);
        }
        // Parameter grads and upstream grads from z = x w_x + h_prev w_h + b.
        let x_t = seq.row(t);
        for (i, &xi) in x_t.iter().enumerate() {
            let gw = &mut grads.w_x.data_mut()[i * 4 * h..(i + 1) * 4 * h];
            for (g, &d) in gw.iter_mut().zip(&dz) {
                *g += xi * d;
            }
        }
        for (g, &d) in grads.b.iter_mut().zip(&dz) {
            *g += d;
        }
        {
            let d_row = &mut d_seq.data_mut()[t * input..(t + 1) * input];
            for (i, dr) in d_row.iter_mut().enumerate() {
                let w_row = p.w_x.row(i);
                let mut acc = 0.0;
                for (wj, &d) in w_row.iter().zip(&dz) {
                    acc += wj * d;
                }
                *dr = acc;
            }
        }
        if t > 0 {
            for (i, &hi) in h_prev.iter().enumerate() {
                let gw = &mut grads.w_h.data_mut()[i * 4 * h..(i + 1) * 4 * h];
                for (g, &d) in gw.iter_mut().zip(&dz) {
                    *g += hi * d;
                }
            }
            for (i, dh) in dh_next.iter_mut().enumerate() {
                let w_row = p.w_h.row(i);
                let mut acc = 0.0;
                for (wj, &d) in w_row.iter().zip(&dz) {
                    acc += wj * d;
                }
                *dh = acc;
            }
        }
    }
    d_seq
}

/// One bidirectional layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmLayer {
    pub fwd: LstmDirParams,
    pub bwd: LstmDirParams,
}

pub struct BiLstmCache {
    fwd: LstmCache,
    bwd: LstmCache,
    seq_rev: Tensor,
}

fn reverse_rows(t: &Tensor) -> Tensor {
    let (rows, cols) = (t.shape()[0], t.shape()[1]);
    let mut out = Tensor::zeros(&[rows, cols]);
    for r in 0..rows {
        out.data_mut()[(rows - 1 - r) * cols..(rows - r) * cols].copy_from_slice(t.row(r));
    }
    out
}

/// Forward + time-reversed passes, outputs concatenated per frame:
/// `out[t] = [h_fwd(t) | h_bwd(t)]` with the backward half indexed in the
/// original time order.
pub fn bilstm_forward(seq: &Tensor, layer: &BiLstmLayer) -> Result<(Tensor, BiLstmCache)> {
    if seq.shape()[0] == 0 {
        return Err(Error::ShapeError("bilstm: empty sequence".into()));
    }
    let (t_len, h) = (seq.shape()[0], layer.fwd.hidden());
    let (out_f, cache_f) = lstm_forward(seq, &layer.fwd)?;
    let seq_rev = reverse_rows(seq);
    let (out_b_rev, cache_b) = lstm_forward(&seq_rev, &layer.bwd)?;
    let mut out = Tensor::zeros(&[t_len, 2 * h]);
    for t in 0..t_len {
        out.data_mut()[t * 2 * h..t * 2 * h + h].copy_from_slice(out_f.row(t));
        out.data_mut()[t * 2 * h + h..(t + 1) * 2 * h].copy_from_slice(out_b_rev.row(t_len - 1 - t));
    }
    Ok((out, BiLstmCache { fwd: cache_f, bwd: cache_b, seq_rev }))
}

/// Backward through both directions; `d_out` is [T, 2h].
pub fn bilstm_backward(
    seq: &Tensor,
    layer: &BiLstmLayer,
    cache: &BiLstmCache,
    d_out: &Tensor,
    grads: &mut BiLstmLayer,
) -> Tensor {
    let (t_len, h) = (seq.shape()[0], layer.fwd.hidden());
    let mut d_f = Tensor::zeros(&[t_len, h]);
    let mut d_b_rev = Tensor::zeros(&[t_len, h]);
    for t in 0..t_len {
        for j in 0..h {
            d_f.set2(t, j, d_out.at2(t, j));
            d_b_rev.set2(t_len - 1 - t, j, d_out.at2(t, h + j));
        }
    }
    let dx_f = lstm_backward(seq, &layer.fwd, &cache.fwd, &d_f, &mut grads.fwd);
    let dx_b_rev = lstm_backward(&cache.seq_rev, &layer.bwd, &cache.bwd, &d_b_rev, &mut grads.bwd);
    let dx_b = reverse_rows(&dx_b_rev);
    let mut dx = dx_f;
    for (a, b) in dx.data_mut().iter_mut().zip(dx_b.data()) {
        *a += b;
    }
    dx
}
