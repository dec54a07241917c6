//! Per-segment separation into accompaniment and vocal stems.
//!
//! Two paths produce the same `Stems` contract: loading externally separated
//! stem files, or the built-in classical separator that median-filters the
//! magnitude spectrogram along time (sustained / accompaniment content) and
//! frequency (transient / vocal content) and applies soft Wiener-style masks.

use rustfft::num_complex::Complex64;

use crate::audio_io::{decode_wav, AudioClip};
use crate::dsp;
use crate::error::{Error, Result};

/// How a pair of stems was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SeparationMethod {
    External,
    MedianFilter,
}

/// Paired subcomponents of one segment.
#[derive(Debug, Clone)]
pub struct Stems {
    pub accompaniment: AudioClip,
    pub vocal: AudioClip,
    pub method: SeparationMethod,
}

/// Parameters of the median-filtering separator.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeparationConfig {
    /// Median window along frames (odd, >= 3).
    pub kernel_time: usize,
    /// Median window along bins (odd, >= 3).
    pub kernel_freq: usize,
    /// Exponent of the soft masks; 2 gives Wiener-style power masks.
    pub mask_power: f64,
    pub n_fft: usize,
    pub hop: usize,
}

impl Default for SeparationConfig {
    fn default() -> Self {
        Self { kernel_time: 17, kernel_freq: 17, mask_power: 2.0, n_fft: 2048, hop: 512 }
    }
}

impl SeparationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_time < 3 || self.kernel_time % 2 == 0 {
            return Err(Error::InvalidConfig("kernel_time must be odd and >= 3".into()));
        }
        if self.kernel_freq < 3 || self.kernel_freq % 2 == 0 {
            return Err(Error::InvalidConfig("kernel_freq must be odd and >= 3".into()));
        }
        if !(self.mask_power > 0.0) {
            return Err(Error::InvalidConfig("mask_power must be positive".into()));
        }
        if self.n_fft < 2 || self.hop == 0 || self.hop > self.n_fft {
            return Err(Error::InvalidConfig("need 0 < hop <= n_fft".into()));
        }
        Ok(())
    }
}

/// Load a pre-separated stem pair from WAV bytes, checking both decode to
/// exactly `expected_len` samples.
pub fn load_stems(accomp_wav: &[u8], vocal_wav: &[u8], expected_len: usize, segment_id: &str) -> Result<Stems> {
    let accompaniment = decode_wav(accomp_wav, format!("{segment_id}.accompaniment"))?;
    let vocal = decode_wav(vocal_wav, format!("{segment_id}.vocals"))?;
    for (name, clip) in [("accompaniment", &accompaniment), ("vocal", &vocal)] {
        if clip.len() != expected_len {
            return Err(Error::StemMismatch(format!(
                "{name} stem for '{segment_id}' has {} samples, expected {expected_len}",
                clip.len()
            )));
        }
    }
    if accompaniment.sample_rate != vocal.sample_rate {
        return Err(Error::StemMismatch(format!(
            "stem sample rates differ for '{segment_id}': {} vs {}",
            accompaniment.sample_rate, vocal.sample_rate
        )));
    }
    Ok(Stems { accompaniment, vocal, method: SeparationMethod::External })
}

/// Median of a fixed odd-length window read with clamped (edge-replicating)
/// indices, so every window has exactly `kernel` elements.
fn median_at<F: Fn(isize) -> f64>(get: F, center: isize, kernel: usize, scratch: &mut Vec<f64>) -> f64 {
    let half = (kernel / 2) as isize;
    scratch.clear();
    for off in -half..=half {
        scratch.push(get(center + off));
    }
    let mid = kernel / 2;
    scratch.select_nth_unstable_by(mid, f64::total_cmp);
    scratch[mid]
}

/// Median filter along the time axis (per bin). `mag[frame][bin]`.
fn median_time(mag: &[Vec<f64>], kernel: usize) -> Vec<Vec<f64>> {
    let frames = mag.len();
    let bins = mag[0].len();
    let clamp = |t: isize| t.clamp(0, frames as isize - 1) as usize;
    let mut out = vec![vec![0.0; bins]; frames];
    let mut scratch = Vec::with_capacity(kernel);
    for b in 0..bins {
        for t in 0..frames {
            out[t][b] = median_at(|i| mag[clamp(i)][b], t as isize, kernel, &mut scratch);
        }
    }
    out
}

/// Median filter along the frequency axis (per frame).
fn median_freq(mag: &[Vec<f64>], kernel: usize) -> Vec<Vec<f64>> {
    let bins = mag[0].len();
    let clamp = |b: isize| b.clamp(0, bins as isize - 1) as usize;
    let mut scratch = Vec::with_capacity(kernel);
    mag.iter()
        .map(|frame| {
            (0..bins)
                .map(|b| median_at(|i| frame[clamp(i)], b as isize, kernel, &mut scratch))
                .collect()
        })
        .collect()
}

/// Soft masks from the two median-filtered magnitude fields.
///
/// `M_h = H^p / (H^p + P^p)` elementwise with 0/0 cells set to 0.5;
/// `M_p = 1 - M_h` by construction.
fn harmonic_mask(h: &[Vec<f64>], p: &[Vec<f64>], power: f64) -> Vec<Vec<f64>> {
    h.iter()
        .zip(p)
        .map(|(hr, pr)| {
            hr.iter()
                .zip(pr)
                .map(|(&hv, &pv)| {
                    let hp = hv.powf(power);
                    let pp = pv.powf(power);
                    let denom = hp + pp;
                    if denom == 0.0 {
                        0.5
                    } else {
                        hp / denom
                    }
                })
                .collect()
        })
        .collect()
}

/// Split a segment into (accompaniment, vocal) stems with median filtering.
///
/// The accompaniment stem takes the time-smooth (harmonic) component, the
/// vocal stem the frequency-smooth (transient) remainder; the two masked
/// reconstructions sum back to the input because the masks sum to one.
pub fn median_filter_separate(segment: &AudioClip, cfg: &SeparationConfig) -> Result<Stems> {
    cfg.validate()?;
    if segment.len() < cfg.n_fft {
        return Err(Error::InsufficientAudio(format!(
            "segment '{}' has {} samples, separator needs at least n_fft = {}",
            segment.source_id,
            segment.len(),
            cfg.n_fft
        )));
    }
    let spec = dsp::stft(&segment.samples, cfg.n_fft, cfg.hop, true)?;
    let mag = spec.magnitudes();
    let h = median_time(&mag, cfg.kernel_time);
    let p = median_freq(&mag, cfg.kernel_freq);
    let mask_h = harmonic_mask(&h, &p, cfg.mask_power);

    let apply = |pick_h: bool| -> dsp::Spectrogram {
        let frames: Vec<Vec<Complex64>> = spec
            .frames
            .iter()
            .zip(&mask_h)
            .map(|(frame, mrow)| {
                frame
                    .iter()
                    .zip(mrow)
                    .map(|(c, &m)| c * if pick_h { m } else { 1.0 - m })
                    .collect()
            })
            .collect();
        dsp::Spectrogram { frames, ..spec.clone() }
    };

    let accomp = dsp::istft(&apply(true), segment.len())?;
    let vocal = dsp::istft(&apply(false), segment.len())?;
    Ok(Stems {
        accompaniment: AudioClip {
            samples: accomp,
            sample_rate: segment.sample_rate,
            source_id: format!("{}.accompaniment", segment.source_id),
        },
        vocal: AudioClip {
            samples: vocal,
            sample_rate: segment.sample_rate,
            source_id: format!("{}.vocals", segment.source_id),
        },
        method: SeparationMethod::MedianFilter,
    })
}
