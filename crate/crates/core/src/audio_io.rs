//! WAV decoding, resampling, and fixed-length segmentation.
//!
//! Everything downstream works on mono `f64` samples in `[-1, 1]`; this module
//! is the only place raw bytes are touched. The decoder handles the RIFF/WAVE
//! subset the corpus actually uses (PCM 16-bit and IEEE float 32-bit, one or
//! two channels); stereo is averaged down to mono.

use crate::error::{Error, Result};

/// Mono audio with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    /// Amplitudes in `[-1.0, 1.0]`, always finite.
    pub samples: Vec<f64>,
    /// Sample rate in Hz, always positive.
    pub sample_rate: u32,
    /// Opaque provenance string (file stem, synthesizer tag, ...).
    pub source_id: String,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32, source_id: impl Into<String>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidConfig("sample_rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::DataError("clip has no samples".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::DataError("clip contains non-finite samples".into()));
        }
        Ok(Self { samples, sample_rate, source_id: source_id.into() })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

/// One fixed-length slice of a parent clip.
#[derive(Debug, Clone)]
pub struct Segment {
    /// Exactly `seg_seconds * sample_rate` samples.
    pub clip: AudioClip,
    /// Identifier of the clip this was sliced from.
    pub parent_id: String,
    /// 0-based slice position within the parent.
    pub index: usize,
}

const FMT_PCM: u16 = 1;
const FMT_IEEE_FLOAT: u16 = 3;

struct WavFormat {
    format: u16,
    channels: u16,
    sample_rate: u32,
    bits_per_sample: u16,
}

fn read_u16(bytes: &[u8], at: usize) -> Result<u16> {
    let b: [u8; 2] = bytes
        .get(at..at + 2)
        .ok_or_else(|| Error::DecodeError("truncated chunk".into()))?
        .try_into()
        .unwrap();
    Ok(u16::from_le_bytes(b))
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    let b: [u8; 4] = bytes
        .get(at..at + 4)
        .ok_or_else(|| Error::DecodeError("truncated chunk".into()))?
        .try_into()
        .unwrap();
    Ok(u32::from_le_bytes(b))
}

/// Walk RIFF chunks, returning the format descriptor and the raw data bytes.
fn parse_wav_chunks(bytes: &[u8]) -> Result<(WavFormat, &[u8])> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::DecodeError("not a RIFF/WAVE stream".into()));
    }
    let mut pos = 12usize;
    let mut fmt: Option<WavFormat> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4)? as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::DecodeError("chunk size exceeds stream".into()))?;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::DecodeError("fmt chunk too small".into()));
                }
                fmt = Some(WavFormat {
                    format: read_u16(bytes, body_start)?,
                    channels: read_u16(bytes, body_start + 2)?,
                    sample_rate: read_u32(bytes, body_start + 4)?,
                    bits_per_sample: read_u16(bytes, body_start + 14)?,
                });
            }
            b"data" => {
                data = Some(&bytes[body_start..body_end]);
            }
            _ => {}
        }
        // Chunks are word-aligned.
        pos = body_end + (size & 1);
        if fmt.is_some() && data.is_some() {
            break;
        }
    }
    let fmt = fmt.ok_or_else(|| Error::DecodeError("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::DecodeError("missing data chunk".into()))?;
    Ok((fmt, data))
}

/// Decode a RIFF/WAVE byte stream into a mono clip.
///
/// Stereo input is averaged channel-wise; 16-bit PCM is scaled by 1/32768,
/// float input is clamped to `[-1, 1]`.
pub fn decode_wav(bytes: &[u8], source_id: impl Into<String>) -> Result<AudioClip> {
    let (fmt, data) = parse_wav_chunks(bytes)?;
    if fmt.channels == 0 || fmt.channels > 2 {
        return Err(Error::UnsupportedFormat(format!("{} channels", fmt.channels)));
    }
    if fmt.sample_rate == 0 {
        return Err(Error::DecodeError("zero sample rate".into()));
    }
    let ch = fmt.channels as usize;
    let frames: Vec<f64> = match (fmt.format, fmt.bits_per_sample) {
        (FMT_PCM, 16) => {
            if data.len() % (2 * ch) != 0 {
                return Err(Error::DecodeError("data size not a whole number of frames".into()));
            }
            data.chunks_exact(2 * ch)
                .map(|frame| {
                    frame
                        .chunks_exact(2)
                        .map(|s| f64::from(i16::from_le_bytes([s[0], s[1]])) / 32768.0)
                        .sum::<f64>()
                        / ch as f64
                })
                .collect()
        }
        (FMT_IEEE_FLOAT, 32) => {
            if data.len() % (4 * ch) != 0 {
                return Err(Error::DecodeError("data size not a whole number of frames".into()));
            }
            let mut out = Vec::with_capacity(data.len() / (4 * ch));
            for frame in data.chunks_exact(4 * ch) {
                let mut acc = 0.0f64;
                for s in frame.chunks_exact(4) {
                    let v = f64::from(f32::from_le_bytes([s[0], s[1], s[2], s[3]]));
                    if !v.is_finite() {
                        return Err(Error::DecodeError("non-finite float sample".into()));
                    }
                    acc += v.clamp(-1.0, 1.0);
                }
                out.push(acc / ch as f64);
            }
            out
        }
        (f, b) => {
            return Err(Error::UnsupportedFormat(format!("format tag {f}, {b} bits per sample")))
        }
    };
    if frames.is_empty() {
        return Err(Error::DecodeError("empty data chunk".into()));
    }
    AudioClip::new(frames, fmt.sample_rate, source_id)
}

/// Number of samples in the header-declared data chunk after mono mixdown,
/// without decoding the sample data. Used for cheap corpus scans.
pub fn wav_frame_count(bytes: &[u8]) -> Result<(u64, u32)> {
    let (fmt, data) = parse_wav_chunks(bytes)?;
    let bytes_per_frame = u64::from(fmt.channels) * u64::from(fmt.bits_per_sample / 8);
    if bytes_per_frame == 0 {
        return Err(Error::DecodeError("zero-size frames".into()));
    }
    Ok((data.len() as u64 / bytes_per_frame, fmt.sample_rate))
}

fn encode_header(out: &mut Vec<u8>, format: u16, bits: u16, sample_rate: u32, data_len: usize) {
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&format.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&sample_rate.to_le_bytes());
    let byte_rate = sample_rate * u32::from(bits / 8);
    out.extend_from_slice(&byte_rate.to_le_bytes());
    out.extend_from_slice(&(bits / 8).to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
}

/// Encode a mono clip as PCM 16-bit little-endian WAV.
///
/// Inverse of `decode_wav`'s scaling: decode(encode(x)) reproduces 16-bit
/// source samples exactly.
pub fn encode_wav_pcm16(samples: &[f64], sample_rate: u32) -> Vec<u8> {
    let mut out = Vec::with_capacity(44 + samples.len() * 2);
    encode_header(&mut out, FMT_PCM, 16, sample_rate, samples.len() * 2);
    for &s in samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

/// Encode a mono clip as IEEE float 32-bit WAV (used for stem files, which
/// should not pay a quantization round-trip).
pub fn encode_wav_f32(samples: &[f64], sample_rate: u32) -> Vec<u8> {
    let mut out = Vec::with_capacity(44 + samples.len() * 4);
    encode_header(&mut out, FMT_IEEE_FLOAT, 32, sample_rate, samples.len() * 4);
    for &s in samples {
        out.extend_from_slice(&(s.clamp(-1.0, 1.0) as f32).to_le_bytes());
    }
    out
}

/// Resample by linear interpolation. Output length is
/// `round(len * target_sr / sample_rate)`; positions past the last input
/// sample hold its value.
pub fn resample_linear(clip: &AudioClip, target_sr: u32) -> Result<AudioClip> {
    if target_sr == 0 {
        return Err(Error::InvalidConfig("target sample rate must be positive".into()));
    }
    if target_sr == clip.sample_rate {
        return Ok(clip.clone());
    }
    let n_in = clip.samples.len();
    let n_out = ((n_in as f64) * f64::from(target_sr) / f64::from(clip.sample_rate)).round() as usize;
    let n_out = n_out.max(1);
    let step = f64::from(clip.sample_rate) / f64::from(target_sr);
    let mut out = Vec::with_capacity(n_out);
    for i in 0..n_out {
        let pos = i as f64 * step;
        let lo = pos.floor() as usize;
        if lo + 1 >= n_in {
            out.push(clip.samples[n_in - 1]);
        } else {
            let frac = pos - lo as f64;
            out.push(clip.samples[lo] * (1.0 - frac) + clip.samples[lo + 1] * frac);
        }
    }
    AudioClip::new(out, target_sr, clip.source_id.clone())
}

/// Slice `count` contiguous, non-overlapping segments of `seg_seconds` each
/// from the start of the clip; trailing samples are discarded.
pub fn slice_segments(clip: &AudioClip, seg_seconds: u32, count: usize) -> Result<Vec<Segment>> {
    let seg_len = seg_seconds as usize * clip.sample_rate as usize;
    if seg_len == 0 || count == 0 {
        return Err(Error::InvalidConfig("segment length and count must be positive".into()));
    }
    let needed = seg_len * count;
    if clip.samples.len() < needed {
        return Err(Error::InsufficientAudio(format!(
            "clip '{}' has {} samples, need {} for {} x {}s segments",
            clip.source_id,
            clip.samples.len(),
            needed,
            count,
            seg_seconds
        )));
    }
    Ok((0..count)
        .map(|i| Segment {
            clip: AudioClip {
                samples: clip.samples[i * seg_len..(i + 1) * seg_len].to_vec(),
                sample_rate: clip.sample_rate,
                source_id: format!("{}_s{:02}", clip.source_id, i),
            },
            parent_id: clip.source_id.clone(),
            index: i,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pcm16_bytes(samples: &[i16], sample_rate: u32, channels: u16) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&(36 + samples.len() as u32 * 2).to_le_bytes());
        out.extend_from_slice(b"WAVE");
        out.extend_from_slice(b"fmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&sample_rate.to_le_bytes());
        out.extend_from_slice(&(sample_rate * 2 * u32::from(channels)).to_le_bytes());
        out.extend_from_slice(&(2 * channels).to_le_bytes());
        out.extend_from_slice(&16u16.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(samples.len() as u32 * 2).to_le_bytes());
        for s in samples {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out
    }

    #[test]
    fn decode_constant_mono_pcm16() {
        let samples = vec![16384i16; 22050];
        let clip = decode_wav(&pcm16_bytes(&samples, 22050, 1), "t").unwrap();
        assert_eq!(clip.len(), 22050);
        assert_eq!(clip.sample_rate, 22050);
        for &s in &clip.samples {
            assert!((s - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn decode_stereo_averages_to_zero() {
        // Interleaved (+0.4, -0.4) everywhere.
        let l = (0.4f64 * 32768.0) as i16;
        let interleaved: Vec<i16> = (0..100).flat_map(|_| [l, -l]).collect();
        let clip = decode_wav(&pcm16_bytes(&interleaved, 8000, 2), "t").unwrap();
        assert_eq!(clip.len(), 100);
        for &s in &clip.samples {
            assert_eq!(s, 0.0);
        }
    }

    #[test]
    fn decode_truncated_header_fails() {
        let bytes = pcm16_bytes(&[0i16; 10], 8000, 1);
        assert!(matches!(decode_wav(&bytes[..10], "t"), Err(Error::DecodeError(_))));
    }

    #[test]
    fn decode_rejects_unsupported() {
        let mut bytes = pcm16_bytes(&[0i16; 10], 8000, 1);
        bytes[34] = 24; // bits per sample
        assert!(matches!(decode_wav(&bytes, "t"), Err(Error::UnsupportedFormat(_))));
        let mut bytes = pcm16_bytes(&[0i16; 12], 8000, 1);
        bytes[22] = 3; // channels
        assert!(matches!(decode_wav(&bytes, "t"), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn resample_identity_when_rates_match() {
        let clip = AudioClip::new(vec![0.1, -0.2, 0.3], 22050, "t").unwrap();
        let out = resample_linear(&clip, 22050).unwrap();
        assert_eq!(out.samples, clip.samples);
    }

    #[test]
    fn resample_ramp_doubles() {
        let clip = AudioClip::new(vec![0.0, 1.0, 2.0, 3.0], 4, "ramp").unwrap();
        let out = resample_linear(&clip, 8).unwrap();
        let expected = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.0];
        assert_eq!(out.samples.len(), expected.len());
        for (a, b) in out.samples.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn resample_preserves_dominant_frequency() {
        // 440 Hz sine at 44100 -> 22050; dominant DFT bin must stay at ~440 Hz.
        let sr_in = 44100u32;
        let n = sr_in as usize; // 1 second
        let samples: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * 440.0 * i as f64 / f64::from(sr_in)).sin() * 0.5)
            .collect();
        let clip = AudioClip::new(samples, sr_in, "sine").unwrap();
        let out = resample_linear(&clip, 22050).unwrap();

        let peak_hz = |samples: &[f64], sr: u32| -> f64 {
            let n_fft = 8192.min(samples.len());
            let mags = crate::dsp::fft_magnitude(&samples[..n_fft]);
            let bin = mags
                .iter()
                .enumerate()
                .skip(1)
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            bin as f64 * f64::from(sr) / n_fft as f64
        };
        let f_in = peak_hz(&clip.samples, sr_in);
        let f_out = peak_hz(&out.samples, 22050);
        assert!((f_in - 440.0).abs() < 6.0, "input peak {f_in}");
        assert!((f_out - 440.0).abs() < 6.0, "output peak {f_out}");
    }

    #[test]
    fn slice_thirty_second_clip() {
        let clip = AudioClip::new(vec![0.25; 30 * 22050 + 123], 22050, "full").unwrap();
        let segs = slice_segments(&clip, 3, 10).unwrap();
        assert_eq!(segs.len(), 10);
        for (i, s) in segs.iter().enumerate() {
            assert_eq!(s.clip.len(), 66150);
            assert_eq!(s.index, i);
            assert_eq!(s.parent_id, "full");
        }
    }

    #[test]
    fn slice_exact_fit_single() {
        let clip = AudioClip::new(vec![0.1; 3 * 8000], 8000, "x").unwrap();
        let segs = slice_segments(&clip, 3, 1).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].clip.samples, clip.samples);
    }

    #[test]
    fn slice_too_short_fails() {
        let clip = AudioClip::new(vec![0.0; 29 * 22050], 22050, "short").unwrap();
        assert!(matches!(slice_segments(&clip, 3, 10), Err(Error::InsufficientAudio(_))));
    }

    #[test]
    fn frame_count_matches_decode() {
        let bytes = pcm16_bytes(&[1i16; 777], 22050, 1);
        let (n, sr) = wav_frame_count(&bytes).unwrap();
        assert_eq!((n, sr), (777, 22050));
    }

    proptest! {
        #[test]
        fn slices_concat_to_prefix(len in 600usize..900, sr in 10u32..40, seed in 0u64..1000) {
            let mut rng_state = seed.wrapping_mul(2654435761).wrapping_add(1);
            let samples: Vec<f64> = (0..len).map(|_| {
                rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (rng_state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
            }).collect();
            let clip = AudioClip::new(samples.clone(), sr, "p").unwrap();
            let seg_len = 2 * sr as usize;
            let count = len / seg_len;
            prop_assume!(count >= 1);
            let segs = slice_segments(&clip, 2, count).unwrap();
            let concat: Vec<f64> = segs.iter().flat_map(|s| s.clip.samples.iter().copied()).collect();
            prop_assert_eq!(&concat[..], &samples[..count * seg_len]);
        }

        #[test]
        fn pcm16_roundtrip_exact(raw in proptest::collection::vec(-32768i16..=32767, 1..400)) {
            let bytes = pcm16_bytes(&raw, 22050, 1);
            let decoded = decode_wav(&bytes, "rt").unwrap();
            let re = encode_wav_pcm16(&decoded.samples, 22050);
            let decoded2 = decode_wav(&re, "rt2").unwrap();
            prop_assert_eq!(decoded.samples, decoded2.samples);
        }
    }
}
