//! Corpus ingestion and split management: scans a genre-per-directory layout
//! into a manifest of (clip, slice) entries and assigns leakage-safe,
//! seed-deterministic train/test (and stacking A/B) partitions.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Seek, SeekFrom};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::component_rng;
use crate::separation::SeparationMethod;

/// Canonical genre ordering; directory names must match these.
pub const GENRE_NAMES: [&str; 10] = [
    "blues", "classical", "country", "disco", "hiphop", "jazz", "metal", "pop", "reggae", "rock",
];

/// A genre id/name pair from the fixed ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GenreLabel(u8);

impl GenreLabel {
    pub fn from_id(id: u8) -> Result<Self> {
        if (id as usize) < GENRE_NAMES.len() {
            Ok(Self(id))
        } else {
            Err(Error::LabelError(format!("genre id {id} out of range")))
        }
    }

    /// Accepts the canonical directory names plus "hip-hop" as an alias.
    pub fn from_name(name: &str) -> Result<Self> {
        let canon = if name == "hip-hop" { "hiphop" } else { name };
        GENRE_NAMES
            .iter()
            .position(|g| *g == canon)
            .map(|i| Self(i as u8))
            .ok_or_else(|| Error::LayoutError(format!("unknown genre '{name}'")))
    }

    pub fn id(&self) -> u8 {
        self.0
    }

    pub fn name(&self) -> &'static str {
        GENRE_NAMES[self.0 as usize]
    }
}

/// Which partition a segment belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitPart {
    Train,
    TrainA,
    TrainB,
    Test,
}

impl SplitPart {
    pub fn is_train(&self) -> bool {
        matches!(self, SplitPart::Train | SplitPart::TrainA | SplitPart::TrainB)
    }
}

/// Stem files the prepare stage wrote for one segment (paths relative to the
/// work dir).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StemPaths {
    pub accompaniment: String,
    pub vocal: String,
    pub method: SeparationMethod,
}

/// Byte offsets of the two cached MFCC records for one segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureOffsets {
    pub accompaniment: u64,
    pub vocal: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub segment_id: String,
    /// Clip path relative to the corpus root.
    pub parent_clip: String,
    pub slice_index: usize,
    pub label: GenreLabel,
    #[serde(default)]
    pub stems: Option<StemPaths>,
    #[serde(default)]
    pub features: Option<FeatureOffsets>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    /// segment_id -> partition; empty until `split` runs.
    pub split: BTreeMap<String, SplitPart>,
    pub warnings: Vec<String>,
    pub skipped_files: u32,
    pub sample_rate: u32,
    pub seg_seconds: u32,
    pub slices_per_clip: usize,
    pub config_hash: String,
}

impl Manifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| {
            Error::PipelineError(format!("missing manifest {}: {e}", path.display()))
        })?;
        Ok(serde_json::from_str(&raw)?)
    }

    pub fn segments_in(&self, part: SplitPart) -> Vec<&ManifestEntry> {
        self.entries
            .iter()
            .filter(|e| self.split.get(&e.segment_id) == Some(&part))
            .collect()
    }

    /// Parent clips per partition; used to assert clip coherence.
    pub fn parents_in(&self, part: SplitPart) -> BTreeSet<&str> {
        self.segments_in(part).iter().map(|e| e.parent_clip.as_str()).collect()
    }
}

/// Read frame count and sample rate from a WAV file's chunk headers without
/// loading the sample data.
fn wav_header_scan(path: &Path) -> Result<(u64, u32)> {
    let mut f = std::fs::File::open(path)?;
    let mut riff = [0u8; 12];
    f.read_exact(&mut riff)
        .map_err(|_| Error::DecodeError("truncated RIFF header".into()))?;
    if &riff[0..4] != b"RIFF" || &riff[8..12] != b"WAVE" {
        return Err(Error::DecodeError("not a RIFF/WAVE file".into()));
    }
    let mut fmt: Option<(u16, u32, u16)> = None; // channels, rate, bits
    loop {
        let mut head = [0u8; 8];
        if f.read_exact(&mut head).is_err() {
            return Err(Error::DecodeError("missing data chunk".into()));
        }
        let size = u32::from_le_bytes(head[4..8].try_into().unwrap()) as u64;
        match &head[0..4] {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::DecodeError("fmt chunk too small".into()));
                }
                let mut body = [0u8; 16];
                f.read_exact(&mut body)?;
                fmt = Some((
                    u16::from_le_bytes(body[2..4].try_into().unwrap()),
                    u32::from_le_bytes(body[4..8].try_into().unwrap()),
                    u16::from_le_bytes(body[14..16].try_into().unwrap()),
                ));
                f.seek(SeekFrom::Current((size - 16 + (size & 1)) as i64))?;
            }
            b"data" => {
                let (channels, rate, bits) =
                    fmt.ok_or_else(|| Error::DecodeError("data chunk before fmt".into()))?;
                let frame_bytes = u64::from(channels) * u64::from(bits / 8);
                if frame_bytes == 0 || rate == 0 {
                    return Err(Error::DecodeError("degenerate fmt chunk".into()));
                }
                return Ok((size / frame_bytes, rate));
            }
            _ => {
                f.seek(SeekFrom::Current((size + (size & 1)) as i64))?;
            }
        }
    }
}

/// Scan a `root/<genre>/<clip>.wav` corpus into a manifest.
///
/// Unknown directory names are layout errors; genres without a directory get
/// a warning. Unreadable or too-short clips are skipped and counted.
pub fn scan_corpus(
    root: &Path,
    slices_per_clip: usize,
    seg_seconds: u32,
    target_sample_rate: u32,
) -> Result<Manifest> {
    if !root.is_dir() {
        return Err(Error::LayoutError(format!(
            "corpus root {} is not a directory",
            root.display()
        )));
    }
    let mut manifest = Manifest {
        sample_rate: target_sample_rate,
        seg_seconds,
        slices_per_clip,
        ..Manifest::default()
    };
    let mut dirs: Vec<String> = Vec::new();
    for entry in std::fs::read_dir(root)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            dirs.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    dirs.sort();
    for d in &dirs {
        GenreLabel::from_name(d)?;
    }
    for genre in GENRE_NAMES {
        if !dirs.iter().any(|d| d == genre) {
            manifest.warnings.push(format!("genre directory '{genre}' missing"));
        }
    }

    let needed = slices_per_clip as u64 * u64::from(seg_seconds) * u64::from(target_sample_rate);
    let mut seen_ids = BTreeSet::new();
    for dir in &dirs {
        let label = GenreLabel::from_name(dir)?;
        let mut files: Vec<String> = std::fs::read_dir(root.join(dir))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().extension().is_some_and(|x| x == "wav"))
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        files.sort();
        if files.is_empty() {
            manifest.warnings.push(format!("genre directory '{dir}' has no wav files"));
        }
        for file in files {
            let path = root.join(dir).join(&file);
            let (frames, rate) = match wav_header_scan(&path) {
                Ok(v) => v,
                Err(e) => {
                    manifest.warnings.push(format!("skipping unreadable {dir}/{file}: {e}"));
                    manifest.skipped_files += 1;
                    continue;
                }
            };
            let frames_at_target =
                (frames as f64 * f64::from(target_sample_rate) / f64::from(rate)).round() as u64;
            if frames_at_target < needed {
                manifest.warnings.push(format!(
                    "skipping short clip {dir}/{file}: {frames_at_target} samples at target rate, need {needed}"
                ));
                manifest.skipped_files += 1;
                continue;
            }
            let stem = file.trim_end_matches(".wav").to_string();
            if !seen_ids.insert(stem.clone()) {
                return Err(Error::LayoutError(format!(
                    "duplicate clip stem '{stem}'; clip file names must be unique across genres"
                )));
            }
            for idx in 0..slices_per_clip {
                manifest.entries.push(ManifestEntry {
                    segment_id: format!("{stem}_s{idx:02}"),
                    parent_clip: format!("{dir}/{file}"),
                    slice_index: idx,
                    label,
                    stems: None,
                    features: None,
                });
            }
        }
    }
    Ok(manifest)
}

fn round_count(n: usize, fraction: f64) -> usize {
    ((n as f64) * fraction).round() as usize
}

/// Assign Train/Test. With `clip_coherent` the split is stratified by genre
/// at the clip level and every slice follows its parent; otherwise segments
/// split independently (the leakage-prone convention, kept for comparison
/// runs).
pub fn split(manifest: &mut Manifest, test_fraction: f64, seed: u64, clip_coherent: bool) -> Result<()> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::ConfigError(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    use rand::seq::SliceRandom;
    let mut rng = component_rng(seed, "split-test");
    manifest.split.clear();
    // Key by clip or by segment, then assign whole groups.
    let mut groups: BTreeMap<u8, Vec<String>> = BTreeMap::new();
    for e in &manifest.entries {
        let key = if clip_coherent { e.parent_clip.clone() } else { e.segment_id.clone() };
        let list = groups.entry(e.label.id()).or_default();
        if !clip_coherent || !list.contains(&key) {
            list.push(key);
        }
    }
    let mut test_keys: BTreeSet<String> = BTreeSet::new();
    for (_, mut list) in groups {
        list.shuffle(&mut rng);
        let n_test = round_count(list.len(), test_fraction);
        test_keys.extend(list.into_iter().take(n_test));
    }
    for e in &manifest.entries {
        let key = if clip_coherent { &e.parent_clip } else { &e.segment_id };
        let part = if test_keys.contains(key) { SplitPart::Test } else { SplitPart::Train };
        manifest.split.insert(e.segment_id.clone(), part);
    }
    Ok(())
}

/// Refine the Train partition into disjoint TrainA (base models) and TrainB
/// (meta-model), stratified by genre. `a_fraction` is TrainA's share.
pub fn split_stacking(manifest: &mut Manifest, a_fraction: f64, seed: u64, clip_coherent: bool) -> Result<()> {
    if !(a_fraction > 0.0 && a_fraction < 1.0) {
        return Err(Error::ConfigError(format!(
            "stacking fraction {a_fraction} outside (0, 1)"
        )));
    }
    if manifest.split.is_empty() {
        return Err(Error::PipelineError("train/test split must be assigned first".into()));
    }
    use rand::seq::SliceRandom;
    let mut rng = component_rng(seed, "split-ab");
    let train_entries: Vec<(String, String, u8)> = manifest
        .entries
        .iter()
        .filter(|e| manifest.split.get(&e.segment_id).is_some_and(|p| p.is_train()))
        .map(|e| (e.segment_id.clone(), e.parent_clip.clone(), e.label.id()))
        .collect();
    let mut groups: BTreeMap<u8, Vec<String>> = BTreeMap::new();
    for (seg, parent, label) in &train_entries {
        let key = if clip_coherent { parent.clone() } else { seg.clone() };
        let list = groups.entry(*label).or_default();
        if !clip_coherent || !list.contains(&key) {
            list.push(key);
        }
    }
    let mut b_keys: BTreeSet<String> = BTreeSet::new();
    for (label, mut list) in groups {
        list.shuffle(&mut rng);
        let n_b = list.len() - round_count(list.len(), a_fraction);
        if n_b == 0 || n_b == list.len() {
            return Err(Error::StratificationError(format!(
                "genre {} has {} training groups; both stacking halves need at least one",
                GENRE_NAMES[label as usize],
                list.len()
            )));
        }
        b_keys.extend(list.into_iter().take(n_b));
    }
    for (seg, parent, _) in &train_entries {
        let key = if clip_coherent { parent } else { seg };
        let part = if b_keys.contains(key) { SplitPart::TrainB } else { SplitPart::TrainA };
        manifest.split.insert(seg.clone(), part);
    }
    Ok(())
}
