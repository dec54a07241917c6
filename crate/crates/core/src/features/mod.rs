//! MFCC extraction: STFT magnitudes, mel filterbank, log compression, and an
//! orthonormal DCT-II, producing one fixed-shape coefficient matrix per
//! segment.

pub mod cache;

use crate::audio_io::AudioClip;
use crate::dsp;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Feature extraction parameters.
///
/// `fmax = None` means "min(20050, Nyquist)", resolved against the segment's
/// sample rate at extraction time.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub n_mfcc: usize,
    pub fmin: f64,
    pub fmax: Option<f64>,
    /// Output is right-padded with zero columns or truncated to this width.
    pub target_frames: usize,
    /// Power clamp applied before the log.
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            n_fft: 2048,
            hop: 512,
            n_mels: 128,
            n_mfcc: 40,
            fmin: 20.0,
            fmax: None,
            target_frames: 132,
            log_floor: 1e-10,
        }
    }
}

impl FeatureConfig {
    pub fn effective_fmax(&self, sample_rate: u32) -> f64 {
        let nyquist = f64::from(sample_rate) / 2.0;
        self.fmax.unwrap_or_else(|| 20050.0f64.min(nyquist))
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if self.n_mfcc > self.n_mels {
            return Err(Error::InvalidConfig(format!(
                "n_mfcc {} exceeds n_mels {}",
                self.n_mfcc, self.n_mels
            )));
        }
        if self.target_frames == 0 {
            return Err(Error::InvalidConfig("target_frames must be positive".into()));
        }
        if self.hop == 0 || self.n_fft < 2 {
            return Err(Error::InvalidConfig("need hop > 0 and n_fft >= 2".into()));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::InvalidConfig("log_floor must be positive".into()));
        }
        let fmax = self.effective_fmax(sample_rate);
        if !(self.fmin >= 0.0 && self.fmin < fmax) {
            return Err(Error::InvalidConfig(format!("need 0 <= fmin < fmax, got {} and {fmax}", self.fmin)));
        }
        if fmax > f64::from(sample_rate) / 2.0 {
            return Err(Error::InvalidConfig(format!(
                "fmax {fmax} exceeds Nyquist {}",
                f64::from(sample_rate) / 2.0
            )));
        }
        Ok(())
    }
}

/// One segment's MFCC matrix, `n_mfcc` coefficients by `target_frames`
/// columns.
#[derive(Debug, Clone, PartialEq)]
pub struct MfccMatrix {
    pub values: Tensor,
    pub segment_id: String,
}

impl MfccMatrix {
    pub fn n_coeffs(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn n_frames(&self) -> usize {
        self.values.shape()[1]
    }
}

/// Magnitude STFT as a bins-by-frames matrix.
///
/// Centered framing reflect-pads by `n_fft/2`, giving `1 + floor(len/hop)`
/// columns with column `t` centered at sample `t*hop`.
pub fn stft_mag(signal: &[f64], n_fft: usize, hop: usize, centered: bool) -> Result<Tensor> {
    let spec = dsp::stft(signal, n_fft, hop, centered)?;
    let bins = spec.num_bins();
    let frames = spec.num_frames();
    let mut out = Tensor::zeros(&[bins, frames]);
    for (t, frame) in spec.frames.iter().enumerate() {
        for (b, c) in frame.iter().enumerate() {
            out.set2(b, t, c.norm());
        }
    }
    Ok(out)
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank, `n_mels` by `n_fft/2 + 1`.
///
/// Filter centers are equally spaced on the mel scale between `fmin` and
/// `fmax`; each triangle is area-normalized to height `2 / (f_hi - f_lo)`.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32, fmin: f64, fmax: f64) -> Result<Tensor> {
    let nyquist = f64::from(sample_rate) / 2.0;
    if fmax > nyquist {
        return Err(Error::InvalidConfig(format!("fmax {fmax} exceeds Nyquist {nyquist}")));
    }
    if !(fmin >= 0.0 && fmin < fmax) {
        return Err(Error::InvalidConfig(format!("need 0 <= fmin < fmax, got {fmin} and {fmax}")));
    }
    if n_mels == 0 {
        return Err(Error::InvalidConfig("n_mels must be positive".into()));
    }
    let bins = n_fft / 2 + 1;
    let mel_lo = hz_to_mel(fmin);
    let mel_hi = hz_to_mel(fmax);
    let points: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut fb = Tensor::zeros(&[n_mels, bins]);
    for m in 0..n_mels {
        let (lo, center, hi) = (points[m], points[m + 1], points[m + 2]);
        let scale = 2.0 / (hi - lo);
        for b in 0..bins {
            let f = b as f64 * f64::from(sample_rate) / n_fft as f64;
            let rising = (f - lo) / (center - lo);
            let falling = (hi - f) / (hi - center);
            let w = rising.min(falling).max(0.0);
            fb.set2(m, b, w * scale);
        }
    }
    Ok(fb)
}

/// Orthonormal DCT-II matrix, `n_out` by `n_in`: rows satisfy D D^T = I when
/// `n_out == n_in`.
pub fn dct_matrix(n_out: usize, n_in: usize) -> Tensor {
    let mut d = Tensor::zeros(&[n_out, n_in]);
    for k in 0..n_out {
        let scale = if k == 0 { (1.0 / n_in as f64).sqrt() } else { (2.0 / n_in as f64).sqrt() };
        for n in 0..n_in {
            let v = scale
                * (std::f64::consts::PI * k as f64 * (2.0 * n as f64 + 1.0) / (2.0 * n_in as f64)).cos();
            d.set2(k, n, v);
        }
    }
    d
}

/// Full MFCC pipeline for one segment.
///
/// power spectrogram -> mel filterbank -> log10 with floor -> DCT-II ->
/// first `n_mfcc` coefficients, padded or truncated to `target_frames`
/// columns.
pub fn mfcc(segment: &AudioClip, cfg: &FeatureConfig) -> Result<MfccMatrix> {
    cfg.validate(segment.sample_rate)?;
    if segment.len() < cfg.n_fft {
        return Err(Error::InsufficientAudio(format!(
            "segment '{}' has {} samples, mfcc needs at least n_fft = {}",
            segment.source_id,
            segment.len(),
            cfg.n_fft
        )));
    }
    let fmax = cfg.effective_fmax(segment.sample_rate);
    let fb = mel_filterbank(cfg.n_mels, cfg.n_fft, segment.sample_rate, cfg.fmin, fmax)?;
    let dct = dct_matrix(cfg.n_mfcc, cfg.n_mels);
    let mag = stft_mag(&segment.samples, cfg.n_fft, cfg.hop, true)?;
    let bins = mag.shape()[0];
    let frames = mag.shape()[1];

    // Per frame: mel energies from the power spectrum, then log, then DCT.
    let mut out = Tensor::zeros(&[cfg.n_mfcc, cfg.target_frames]);
    let used_frames = frames.min(cfg.target_frames);
    let mut mel_log = vec![0.0f64; cfg.n_mels];
    for t in 0..used_frames {
        for (m, v) in mel_log.iter_mut().enumerate() {
            let weights = fb.row(m);
            let mut acc = 0.0;
            for b in 0..bins {
                let a = mag.at2(b, t);
                acc += weights[b] * a * a;
            }
            *v = acc.max(cfg.log_floor).log10();
        }
        for k in 0..cfg.n_mfcc {
            let row = dct.row(k);
            let c: f64 = row.iter().zip(&mel_log).map(|(d, x)| d * x).sum();
            out.set2(k, t, c);
        }
    }
    // Columns beyond `used_frames` stay zero (right padding).
    if !out.all_finite() {
        return Err(Error::DataError(format!(
            "non-finite MFCC entries for segment '{}'",
            segment.source_id
        )));
    }
    Ok(MfccMatrix { values: out, segment_id: segment.source_id.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise_clip(len: usize, seed: u64) -> AudioClip {
        let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15) | 1;
        let samples = (0..len)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
            })
            .collect();
        AudioClip::new(samples, 22050, format!("noise{seed}")).unwrap()
    }

    #[test]
    fn segment_frame_count_is_130() {
        let t = stft_mag(&noise_clip(66150, 1).samples, 2048, 512, true).unwrap();
        assert_eq!(t.shape(), &[1025, 130]);
    }

    #[test]
    fn zero_signal_gives_zero_magnitudes() {
        let t = stft_mag(&vec![0.0; 8000], 2048, 512, true).unwrap();
        assert!(t.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mfcc_shape_is_40_by_132() {
        let m = mfcc(&noise_clip(66150, 2), &FeatureConfig::default()).unwrap();
        assert_eq!(m.values.shape(), &[40, 132]);
        assert!(m.values.all_finite());
        // Natural frame count is 130; the last two columns are padding.
        for t in 130..132 {
            for k in 0..40 {
                assert_eq!(m.values.at2(k, t), 0.0);
            }
        }
    }

    #[test]
    fn zero_signal_concentrates_in_coefficient_zero() {
        let clip = AudioClip {
            samples: vec![0.0; 66150],
            sample_rate: 22050,
            source_id: "silence".into(),
        };
        let cfg = FeatureConfig::default();
        let m = mfcc(&clip, &cfg).unwrap();
        // log10(floor) = -10 in every mel band; orthonormal DCT of a constant
        // vector is -10 * sqrt(n_mels) in coefficient 0 and 0 elsewhere.
        let expected_c0 = -10.0 * (cfg.n_mels as f64).sqrt();
        for t in 0..130 {
            assert!((m.values.at2(0, t) - expected_c0).abs() < 1e-9);
            for k in 1..40 {
                assert!(m.values.at2(k, t).abs() < 1e-9, "coeff {k} frame {t}");
            }
        }
    }

    #[test]
    fn dct_is_orthonormal() {
        let n = 128;
        let d = dct_matrix(n, n);
        for i in 0..n {
            for j in 0..n {
                let dot: f64 = (0..n).map(|k| d.at2(i, k) * d.at2(j, k)).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-12, "({i},{j}) -> {dot}");
            }
        }
    }

    #[test]
    fn filterbank_covers_passband() {
        let fb = mel_filterbank(128, 2048, 22050, 20.0, 11025.0).unwrap();
        let bins = fb.shape()[1];
        for b in 0..bins {
            let f = b as f64 * 22050.0 / 2048.0;
            if f > 20.0 && f < 11025.0 {
                let col_sum: f64 = (0..128).map(|m| fb.at2(m, b)).sum();
                assert!(col_sum > 0.0, "bin {b} ({f:.1} Hz) uncovered");
            }
        }
    }

    #[test]
    fn two_triangle_peaks_match_mel_arithmetic() {
        // Directly evaluate the mel formula for the expected geometry.
        let (n_mels, n_fft, sr) = (2usize, 2048usize, 22050u32);
        let fb = mel_filterbank(n_mels, n_fft, sr, 0.0, 11025.0).unwrap();
        let mel_hi = 2595.0 * (1.0f64 + 11025.0 / 700.0).log10();
        let bin_hz = f64::from(sr) / n_fft as f64;
        for m in 0..n_mels {
            let lo = 700.0 * (10f64.powf(mel_hi * m as f64 / 3.0 / 2595.0) - 1.0);
            let center = 700.0 * (10f64.powf(mel_hi * (m + 1) as f64 / 3.0 / 2595.0) - 1.0);
            let hi = 700.0 * (10f64.powf(mel_hi * (m + 2) as f64 / 3.0 / 2595.0) - 1.0);
            // Expected argmax over bins of min(rising, falling).
            let expected = (0..fb.shape()[1])
                .map(|b| {
                    let f = b as f64 * bin_hz;
                    ((f - lo) / (center - lo)).min((hi - f) / (hi - center)).max(0.0)
                })
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap()
                .0;
            let got = (0..fb.shape()[1])
                .map(|b| fb.at2(m, b))
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap()
                .0;
            assert_eq!(got, expected, "filter {m}");
        }
    }

    #[test]
    fn fmax_above_nyquist_rejected() {
        assert!(matches!(
            mel_filterbank(128, 2048, 22050, 20.0, 20050.0),
            Err(Error::InvalidConfig(_))
        ));
        let cfg = FeatureConfig { fmax: Some(20050.0), ..FeatureConfig::default() };
        assert!(cfg.validate(22050).is_err());
        // Default fmax resolves to Nyquist at 22050 Hz.
        assert_eq!(FeatureConfig::default().effective_fmax(22050), 11025.0);
    }

    #[test]
    fn deterministic_and_hop_shift_moves_columns() {
        let cfg = FeatureConfig::default();
        let clip = noise_clip(66150 + 512, 9);
        let a = mfcc(
            &AudioClip::new(clip.samples[..66150].to_vec(), 22050, "a").unwrap(),
            &cfg,
        )
        .unwrap();
        let b = mfcc(
            &AudioClip::new(clip.samples[512..66150 + 512].to_vec(), 22050, "b").unwrap(),
            &cfg,
        )
        .unwrap();
        // Column t of the shifted signal equals column t+1 of the original in
        // the interior (away from the reflected edges).
        for t in 4..126 {
            for k in 0..40 {
                let d = (b.values.at2(k, t) - a.values.at2(k, t + 1)).abs();
                assert!(d < 1e-9, "k={k} t={t} d={d}");
            }
        }
        let a2 = mfcc(
            &AudioClip::new(clip.samples[..66150].to_vec(), 22050, "a").unwrap(),
            &cfg,
        )
        .unwrap();
        assert_eq!(a.values, a2.values);
    }

    #[test]
    fn short_segment_rejected() {
        let clip = noise_clip(1000, 3);
        assert!(matches!(mfcc(&clip, &FeatureConfig::default()), Err(Error::InsufficientAudio(_))));
    }
}
