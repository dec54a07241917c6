//! Layer primitives with hand-derived backward passes.
//!
//! Forward/backward pairs operate on single samples; minibatching happens in
//! the training loop by accumulating gradients.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// y = x W + b, with `x` a row vector, `W` shaped `[in, out]`.
pub fn dense_forward(x: &[f64], w: &Tensor, b: &[f64]) -> Result<Vec<f64>> {
    let (n_in, n_out) = (w.shape()[0], w.shape()[1]);
    if x.len() != n_in || b.len() != n_out {
        return Err(Error::ShapeError(format!(
            "dense: x len {} vs W {:?}, b len {}",
            x.len(),
            w.shape(),
            b.len()
        )));
    }
    let mut y = b.to_vec();
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = w.row(i);
        for (yj, wj) in y.iter_mut().zip(row) {
            *yj += xi * wj;
        }
    }
    Ok(y)
}

/// Gradients of `dense_forward`: returns dx and accumulates dW, db.
pub fn dense_backward(x: &[f64], w: &Tensor, dy: &[f64], dw: &mut Tensor, db: &mut [f64]) -> Vec<f64> {
    let n_in = w.shape()[0];
    let n_out = w.shape()[1];
    let mut dx = vec![0.0; n_in];
    for i in 0..n_in {
        let w_row = w.row(i);
        let mut acc = 0.0;
        for j in 0..n_out {
            acc += w_row[j] * dy[j];
        }
        dx[i] = acc;
        let dw_row = &mut dw.data_mut()[i * n_out..(i + 1) * n_out];
        let xi = x[i];
        for (dwj, dyj) in dw_row.iter_mut().zip(dy) {
            *dwj += xi * dyj;
        }
    }
    for (dbj, dyj) in db.iter_mut().zip(dy) {
        *dbj += dyj;
    }
    dx
}

pub fn relu(x: &mut [f64]) {
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Backward through ReLU given the forward *output* (0 where clipped).
pub fn relu_backward(y: &[f64], dy: &mut [f64]) {
    for (d, &yv) in dy.iter_mut().zip(y) {
        if yv <= 0.0 {
            *d = 0.0;
        }
    }
}

/// Cross-correlation with zero same-padding and stride 1.
/// `x`: [C, H, W], `k`: [OC, C, KH, KW], output [OC, H, W].
pub fn conv2d_forward(x: &Tensor, k: &Tensor, b: &[f64]) -> Result<Tensor> {
    let [c_in, h, w] = <[usize; 3]>::try_from(x.shape().to_vec())
        .map_err(|_| Error::ShapeError("conv2d expects a 3-D input".into()))?;
    let [oc, kc, kh, kw] = <[usize; 4]>::try_from(k.shape().to_vec())
        .map_err(|_| Error::ShapeError("conv2d expects 4-D kernels".into()))?;
    if kc != c_in || b.len() != oc {
        return Err(Error::ShapeError(format!(
            "conv2d: input channels {c_in} vs kernel {:?}, bias {}",
            k.shape(),
            b.len()
        )));
    }
    if kh > h + kh / 2 || kw > w + kw / 2 {
        return Err(Error::ShapeError("conv2d kernel larger than padded input".into()));
    }
    let (ph, pw) = (kh / 2, kw / 2);
    let mut y = Tensor::zeros(&[oc, h, w]);
    let xd = x.data();
    let kd = k.data();
    let yd = y.data_mut();
    for o in 0..oc {
        let y_plane = &mut yd[o * h * w..(o + 1) * h * w];
        y_plane.fill(b[o]);
        for c in 0..c_in {
            let x_plane = &xd[c * h * w..(c + 1) * h * w];
            let k_base = ((o * c_in) + c) * kh * kw;
            for di in 0..kh {
                for dj in 0..kw {
                    let kv = kd[k_base + di * kw + dj];
                    if kv == 0.0 {
                        continue;
                    }
                    // y[i][j] += kv * x[i + di - ph][j + dj - pw]
                    let i_lo = ph.saturating_sub(di);
                    let i_hi = (h + ph - di).min(h);
                    for i in i_lo..i_hi {
                        let xi = i + di - ph;
                        let j_lo = pw.saturating_sub(dj);
                        let j_hi = (w + pw - dj).min(w);
                        let xrow = &x_plane[xi * w..xi * w + w];
                        let yrow = &mut y_plane[i * w..i * w + w];
                        for j in j_lo..j_hi {
                            yrow[j] += kv * xrow[j + dj - pw];
                        }
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Gradients of `conv2d_forward`: returns dx and accumulates dk, db.
pub fn conv2d_backward(x: &Tensor, k: &Tensor, dy: &Tensor, dk: &mut Tensor, db: &mut [f64]) -> Tensor {
    let (c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (oc, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let (ph, pw) = (kh / 2, kw / 2);
    let mut dx = Tensor::zeros(&[c_in, h, w]);
    let xd = x.data();
    let kd = k.data();
    let dyd = dy.data();
    let dxd = dx.data_mut();
    let dkd = dk.data_mut();
    for o in 0..oc {
        let dy_plane = &dyd[o * h * w..(o + 1) * h * w];
        db[o] += dy_plane.iter().sum::<f64>();
        for c in 0..c_in {
            let x_plane = &xd[c * h * w..(c + 1) * h * w];
            let dx_plane = &mut dxd[c * h * w..(c + 1) * h * w];
            let k_base = ((o * c_in) + c) * kh * kw;
            for di in 0..kh {
                for dj in 0..kw {
                    let kv = kd[k_base + di * kw + dj];
                    let mut dkv = 0.0;
                    let i_lo = ph.saturating_sub(di);
                    let i_hi = (h + ph - di).min(h);
                    for i in i_lo..i_hi {
                        let xi = i + di - ph;
                        let j_lo = pw.saturating_sub(dj);
                        let j_hi = (w + pw - dj).min(w);
                        let xrow = &x_plane[xi * w..xi * w + w];
                        let dxrow = &mut dx_plane[xi * w..xi * w + w];
                        let dyrow = &dy_plane[i * w..i * w + w];
                        for j in j_lo..j_hi {
                            let g = dyrow[j];
                            dkv += g * xrow[j + dj - pw];
                            dxrow[j + dj - pw] += g * kv;
                        }
                    }
                    dkd[k_base + di * kw + dj] += dkv;
                }
            }
        }
    }
    dx
}

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
/// Returns the pooled map and the flat argmax index per output cell (first
/// occurrence in row-major order wins ties).
pub fn maxpool2d_forward(x: &Tensor) -> (Tensor, Vec<usize>) {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor::zeros(&[c, oh, ow]);
    let mut arg = vec![0usize; c * oh * ow];
    let xd = x.data();
    let yd = y.data_mut();
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for di in 0..2 {
                    for dj in 0..2 {
                        let idx = ch * h * w + (2 * i + di) * w + (2 * j + dj);
                        if xd[idx] > best {
                            best = xd[idx];
                            best_idx = idx;
                        }
                    }
                }
                let out_idx = ch * oh * ow + i * ow + j;
                yd[out_idx] = best;
                arg[out_idx] = best_idx;
            }
        }
    }
    (y, arg)
}

/// Route pooled gradients back to the argmax positions.
pub fn maxpool2d_backward(input_shape: &[usize], arg: &[usize], dy: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(input_shape);
    let dxd = dx.data_mut();
    for (out_idx, &src) in arg.iter().enumerate() {
        dxd[src] += dy.data()[out_idx];
    }
    dx
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Loss `-log p[label]` and its gradient `p - onehot(label)`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::LabelError(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let p = softmax(logits);
    let loss = -p[label].max(f64::MIN_POSITIVE).ln();
    let mut dlogits = p;
    dlogits[label] -= 1.0;
    Ok((loss, dlogits))
}

/// Inverted dropout: zero with probability `rate`, scale kept values by
/// `1/(1-rate)`. Returns the mask applied.
pub fn dropout_forward(x: &mut [f64], rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if rate <= 0.0 {
        return vec![1.0; x.len()];
    }
    let keep = 1.0 - rate;
    let mut mask = Vec::with_capacity(x.len());
    for v in x.iter_mut() {
        let m = if rng.random::<f64>() < rate { 0.0 } else { 1.0 / keep };
        *v *= m;
        mask.push(m);
    }
    mask
}

pub fn dropout_backward(mask: &[f64], dy: &mut [f64]) {
    for (d, &m) in dy.iter_mut().zip(mask) {
        *d *= m;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_identity_weights() {
        let w = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let y = dense_forward(&[1.0, 2.0], &w, &[0.0, 0.0]).unwrap();
        assert_eq!(y, vec![1.0, 2.0]);
    }

    #[test]
    fn dense_shape_mismatch() {
        let w = Tensor::zeros(&[3, 2]);
        assert!(matches!(dense_forward(&[1.0, 2.0], &w, &[0.0, 0.0]), Err(Error::ShapeError(_))));
    }

    #[test]
    fn conv_ones_hand_computed() {
        let x = Tensor::from_vec(&[1, 3, 3], vec![1.0; 9]).unwrap();
        let k = Tensor::from_vec(&[1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let y = conv2d_forward(&x, &k, &[0.0]).unwrap();
        // Zero-padded correlation over an all-ones 3x3: corners see 4 cells,
        // edges 6, center all 9.
        let expected = [4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0];
        assert_eq!(y.data(), &expected);
    }

    #[test]
    fn conv_identity_kernel() {
        let x = Tensor::from_vec(&[1, 4, 5], (0..20).map(f64::from).collect()).unwrap();
        let mut kd = vec![0.0; 9];
        kd[4] = 1.0;
        let k = Tensor::from_vec(&[1, 1, 3, 3], kd).unwrap();
        let y = conv2d_forward(&x, &k, &[0.0]).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn maxpool_examples() {
        let x = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, _) = maxpool2d_forward(&x);
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[4.0]);

        let x = Tensor::zeros(&[1, 40, 132]);
        let (y, _) = maxpool2d_forward(&x);
        assert_eq!(y.shape(), &[1, 20, 66]);
    }

    #[test]
    fn maxpool_tie_routes_to_first() {
        let x = Tensor::from_vec(&[1, 2, 2], vec![5.0, 5.0, 5.0, 5.0]).unwrap();
        let (_, arg) = maxpool2d_forward(&x);
        assert_eq!(arg, vec![0]);
        let dy = Tensor::from_vec(&[1, 1, 1], vec![2.5]).unwrap();
        let dx = maxpool2d_backward(&[1, 2, 2], &arg, &dy);
        assert_eq!(dx.data(), &[2.5, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_uniform_loss() {
        let (loss, d) = softmax_cross_entropy(&[0.0; 10], 3).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
        assert!((loss - 2.302585).abs() < 1e-6);
        for (i, g) in d.iter().enumerate() {
            let expect = if i == 3 { 0.1 - 1.0 } else { 0.1 };
            assert!((g - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_large_logit_stable() {
        let mut logits = [0.0; 10];
        logits[0] = 1000.0;
        let (loss, d) = softmax_cross_entropy(&logits, 0).unwrap();
        assert!(loss.is_finite());
        assert!(loss < 1e-6);
        assert!(d.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn softmax_label_out_of_range() {
        assert!(matches!(softmax_cross_entropy(&[0.0; 10], 10), Err(Error::LabelError(_))));
    }
}
