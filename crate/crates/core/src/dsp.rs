//! Shared STFT machinery: Hann windows, centered framing with reflect
//! padding, and the inverse transform used by the separator.
//!
//! Conventions (fixed across the crate):
//! - periodic Hann window `w[i] = 0.5 (1 - cos(2*pi*i/n))`
//! - centered analysis: the signal is reflect-padded by `n_fft/2` on both
//!   sides, frame `t` starts at `t*hop` in the padded signal, so its center
//!   sits at sample `t*hop` of the original
//! - one-sided spectra with `n_fft/2 + 1` bins
//! - inversion by windowed overlap-add normalized by the summed squared
//!   window, which is exact wherever the frames fully cover the signal
//!   (hop <= n_fft/2 guarantees that for the centered layout)

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
        .collect()
}

/// Complex one-sided spectrogram, indexed `[frame][bin]`.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub frames: Vec<Vec<Complex64>>,
    pub n_fft: usize,
    pub hop: usize,
    pub centered: bool,
}

impl Spectrogram {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn num_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Magnitudes indexed `[frame][bin]`.
    pub fn magnitudes(&self) -> Vec<Vec<f64>> {
        self.frames
            .iter()
            .map(|f| f.iter().map(|c| c.norm()).collect())
            .collect()
    }
}

/// Mirror an out-of-range index back into `0..len` without repeating the
/// edge sample (reflect padding).
fn reflect_index(mut i: i64, len: usize) -> usize {
    let n = len as i64;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Forward STFT.
///
/// Centered mode yields `1 + floor(len/hop)` frames; uncentered mode yields
/// `1 + floor((len - n_fft)/hop)` frames taken entirely inside the signal.
pub fn stft(signal: &[f64], n_fft: usize, hop: usize, centered: bool) -> Result<Spectrogram> {
    if signal.is_empty() {
        return Err(Error::DataError("stft input is empty".into()));
    }
    if n_fft < 2 || hop == 0 {
        return Err(Error::InvalidConfig("n_fft must be >= 2 and hop positive".into()));
    }
    if !centered && signal.len() < n_fft {
        return Err(Error::InsufficientAudio(format!(
            "uncentered stft needs at least n_fft = {} samples, got {}",
            n_fft,
            signal.len()
        )));
    }
    let window = hann_window(n_fft);
    let num_frames = if centered {
        1 + signal.len() / hop
    } else {
        1 + (signal.len() - n_fft) / hop
    };
    let num_bins = n_fft / 2 + 1;
    let pad = if centered { (n_fft / 2) as i64 } else { 0 };

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n_fft);
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    let mut frames = Vec::with_capacity(num_frames);
    for t in 0..num_frames {
        let start = (t * hop) as i64 - pad;
        for (i, b) in buf.iter_mut().enumerate() {
            let idx = start + i as i64;
            let s = if idx >= 0 && (idx as usize) < signal.len() {
                signal[idx as usize]
            } else if centered {
                signal[reflect_index(idx, signal.len())]
            } else {
                0.0
            };
            *b = Complex64::new(s * window[i], 0.0);
        }
        fft.process(&mut buf);
        frames.push(buf[..num_bins].to_vec());
    }
    Ok(Spectrogram { frames, n_fft, hop, centered })
}

/// Inverse STFT back to `out_len` samples.
///
/// Uses the analysis window for synthesis and divides by the accumulated
/// squared window; with the centered layout and hop <= n_fft/2 this inverts
/// `stft` to within float rounding.
pub fn istft(spec: &Spectrogram, out_len: usize) -> Result<Vec<f64>> {
    let n_fft = spec.n_fft;
    let hop = spec.hop;
    let num_bins = n_fft / 2 + 1;
    if spec.frames.iter().any(|f| f.len() != num_bins) {
        return Err(Error::ShapeError("spectrogram frame has wrong bin count".into()));
    }
    let window = hann_window(n_fft);
    let pad = if spec.centered { n_fft / 2 } else { 0 };
    let buf_len = (spec.frames.len().saturating_sub(1)) * hop + n_fft;
    let mut acc = vec![0.0f64; buf_len];
    let mut norm = vec![0.0f64; buf_len];

    let mut planner = FftPlanner::new();
    let ifft = planner.plan_fft_inverse(n_fft);
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for (t, frame) in spec.frames.iter().enumerate() {
        buf[..num_bins].copy_from_slice(frame);
        // Hermitian mirror for the real-signal inverse.
        for k in 1..n_fft - num_bins + 1 {
            buf[n_fft - k] = frame[k].conj();
        }
        ifft.process(&mut buf);
        let start = t * hop;
        for i in 0..n_fft {
            let y = buf[i].re / n_fft as f64;
            acc[start + i] += y * window[i];
            norm[start + i] += window[i] * window[i];
        }
    }
    let mut out = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let j = i + pad;
        if j < acc.len() && norm[j] > 1e-12 {
            out.push(acc[j] / norm[j]);
        } else {
            out.push(0.0);
        }
    }
    Ok(out)
}

/// One-sided magnitude spectrum of a raw block (no window). Test and
/// peak-picking helper.
pub fn fft_magnitude(block: &[f64]) -> Vec<f64> {
    let n = block.len();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let mut buf: Vec<Complex64> = block.iter().map(|&s| Complex64::new(s, 0.0)).collect();
    fft.process(&mut buf);
    buf[..n / 2 + 1].iter().map(|c| c.norm()).collect()
}
