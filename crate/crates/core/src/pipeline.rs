//! File-based pipeline stages: prepare -> featurize -> train-base ->
//! train-meta -> evaluate -> report. Stages communicate only through
//! artifacts in the work dir; every artifact embeds a hash of the semantic
//! config so stale or mixed artifacts are refused, and a lock file keeps
//! concurrent commands off the same work dir.

use std::collections::BTreeMap;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio_io::{self, AudioClip};
use crate::dataset::{self, FeatureOffsets, Manifest, ManifestEntry, SplitPart, StemPaths};
use crate::ensemble::{
    self, meta_io, FusionWeights, GenreWeights, MetaKind, MetaTrainConfig,
};
use crate::error::{Error, Result};
use crate::eval::{self, ConfusionMatrix, MetricsReport};
use crate::features::cache::{CacheIndex, CacheWriter, StemKind};
use crate::features::{self, FeatureConfig, MfccMatrix};
use crate::nn::{
    self, forward_accomp, forward_vocal, AccompNetConfig, ModelKind, Net, ProbVector, TrainConfig,
    VocalNetConfig,
};
use crate::separation::{self, SeparationConfig, SeparationMethod};
use crate::tensor::Tensor;

/// Built-in separator choices (external stems are selected by providing a
/// stems dir, not here).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SeparatorKind {
    #[default]
    Median,
}

/// Fusion methods the ensemble stage can train and the evaluator can score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    Mean,
    SoftVote,
    IgnoreVocal,
    IgnoreAccomp,
    StackLogreg,
    StackDense,
    StackGbdt,
}

impl EnsembleKind {
    pub const ALL: [EnsembleKind; 7] = [
        EnsembleKind::StackGbdt,
        EnsembleKind::StackLogreg,
        EnsembleKind::StackDense,
        EnsembleKind::Mean,
        EnsembleKind::SoftVote,
        EnsembleKind::IgnoreVocal,
        EnsembleKind::IgnoreAccomp,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EnsembleKind::Mean => "mean",
            EnsembleKind::SoftVote => "soft_vote",
            EnsembleKind::IgnoreVocal => "ignore_vocal",
            EnsembleKind::IgnoreAccomp => "ignore_accomp",
            EnsembleKind::StackLogreg => "stack_logreg",
            EnsembleKind::StackDense => "stack_dense",
            EnsembleKind::StackGbdt => "stack_gbdt",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| Error::ConfigError(format!("unknown ensemble kind '{s}'")))
    }

    pub fn is_stacking(&self) -> bool {
        matches!(self, EnsembleKind::StackLogreg | EnsembleKind::StackDense | EnsembleKind::StackGbdt)
    }

    /// Paper-table section this method reports under.
    pub fn section(&self) -> &'static str {
        if self.is_stacking() {
            "Stacking Ensembles"
        } else {
            "Bagging Ensembles"
        }
    }

    pub fn display_name(&self) -> &'static str {
        match self {
            EnsembleKind::Mean => "Mean Averaging",
            EnsembleKind::SoftVote => "Soft Voting",
            EnsembleKind::IgnoreVocal => "Accompaniment Only (vocal ignored)",
            EnsembleKind::IgnoreAccomp => "Vocal Only (accompaniment ignored)",
            EnsembleKind::StackLogreg => "Logistic Regression",
            EnsembleKind::StackDense => "Dense Neural Network",
            EnsembleKind::StackGbdt => "Gradient-Boosted Trees",
        }
    }
}

/// What `evaluate` scores: one base branch or one fusion method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelSelection {
    AccompCnn,
    VocalLstm,
    Fusion(EnsembleKind),
}

impl ModelSelection {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelSelection::AccompCnn => "accomp_cnn",
            ModelSelection::VocalLstm => "vocal_lstm",
            ModelSelection::Fusion(k) => k.as_str(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        match norm.as_str() {
            "accomp_cnn" | "accomp" | "cnn" => Ok(ModelSelection::AccompCnn),
            "vocal_lstm" | "vocal" | "lstm" => Ok(ModelSelection::VocalLstm),
            other => Ok(ModelSelection::Fusion(EnsembleKind::parse(other)?)),
        }
    }
}

/// Everything a run needs. Unknown JSON keys are rejected; flags override
/// individual fields after loading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus_root: PathBuf,
    pub work_dir: PathBuf,
    /// Directory of pre-separated `<segment_id>.accompaniment.wav` /
    /// `<segment_id>.vocals.wav` files; preferred over the built-in
    /// separator when present.
    pub stems_dir: Option<PathBuf>,
    pub separator: SeparatorKind,
    pub separation: SeparationConfig,
    pub features: FeatureConfig,
    pub vocal_net: VocalNetConfig,
    pub accomp_net: AccompNetConfig,
    pub train_vocal: TrainConfig,
    pub train_accomp: TrainConfig,
    pub meta: MetaTrainConfig,
    pub ensemble: EnsembleKind,
    /// Per-genre soft-voting weight table keyed by genre name; missing
    /// genres default to 0.5/0.5.
    pub fusion_weights: BTreeMap<String, GenreWeights>,
    pub test_fraction: f64,
    /// TrainA share of the training set for the stacking protocol.
    pub stack_a_fraction: f64,
    /// When false (paper-style), segments of one clip may straddle splits.
    pub clip_coherent: bool,
    pub sample_rate: u32,
    pub seg_seconds: u32,
    pub slices_per_clip: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus_root: PathBuf::from("corpus"),
            work_dir: PathBuf::from("work"),
            stems_dir: None,
            separator: SeparatorKind::Median,
            separation: SeparationConfig::default(),
            features: FeatureConfig::default(),
            vocal_net: VocalNetConfig::default(),
            accomp_net: AccompNetConfig::default(),
            train_vocal: TrainConfig::default(),
            train_accomp: TrainConfig::default(),
            meta: MetaTrainConfig::default(),
            ensemble: EnsembleKind::StackLogreg,
            fusion_weights: BTreeMap::new(),
            test_fraction: 0.2,
            stack_a_fraction: 0.8,
            clip_coherent: true,
            sample_rate: 22050,
            seg_seconds: 3,
            slices_per_clip: 10,
            seed: 42,
        }
    }
}

/// The semantic subset that determines artifact content. Filesystem
/// locations are excluded so identical runs in different directories produce
/// bit-identical artifacts.
#[derive(Serialize)]
struct SemanticView<'a> {
    external_stems: bool,
    separator: SeparatorKind,
    separation: &'a SeparationConfig,
    features: &'a FeatureConfig,
    vocal_net: &'a VocalNetConfig,
    accomp_net: &'a AccompNetConfig,
    train_vocal: &'a TrainConfig,
    train_accomp: &'a TrainConfig,
    meta: &'a MetaTrainConfig,
    ensemble: EnsembleKind,
    fusion_weights: &'a BTreeMap<String, GenreWeights>,
    test_fraction: f64,
    stack_a_fraction: f64,
    clip_coherent: bool,
    sample_rate: u32,
    seg_seconds: u32,
    slices_per_clip: usize,
    seed: u64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&raw)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.separation.validate()?;
        self.features.validate(self.sample_rate)?;
        self.train_vocal.validate()?;
        self.train_accomp.validate()?;
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::ConfigError("test_fraction must be in (0, 1)".into()));
        }
        if !(self.stack_a_fraction > 0.0 && self.stack_a_fraction < 1.0) {
            return Err(Error::ConfigError("stack_a_fraction must be in (0, 1)".into()));
        }
        if self.slices_per_clip == 0 || self.seg_seconds == 0 || self.sample_rate == 0 {
            return Err(Error::ConfigError("segmenting parameters must be positive".into()));
        }
        if self.features.n_mfcc != self.vocal_net.input_features
            || self.features.target_frames != self.vocal_net.input_frames
        {
            return Err(Error::ConfigError(
                "vocal net input shape must match (n_mfcc, target_frames)".into(),
            ));
        }
        if self.features.n_mfcc != self.accomp_net.input_height
            || self.features.target_frames != self.accomp_net.input_width
        {
            return Err(Error::ConfigError(
                "accomp net input shape must match (n_mfcc, target_frames)".into(),
            ));
        }
        FusionWeights::from_table(&self.fusion_weights)?;
        Ok(())
    }

    /// Hash of the semantic config; embedded in every artifact.
    pub fn config_hash(&self) -> String {
        let view = SemanticView {
            external_stems: self.stems_dir.is_some(),
            separator: self.separator,
            separation: &self.separation,
            features: &self.features,
            vocal_net: &self.vocal_net,
            accomp_net: &self.accomp_net,
            train_vocal: &self.train_vocal,
            train_accomp: &self.train_accomp,
            meta: &self.meta,
            ensemble: self.ensemble,
            fusion_weights: &self.fusion_weights,
            test_fraction: self.test_fraction,
            stack_a_fraction: self.stack_a_fraction,
            clip_coherent: self.clip_coherent,
            sample_rate: self.sample_rate,
            seg_seconds: self.seg_seconds,
            slices_per_clip: self.slices_per_clip,
            seed: self.seed,
        };
        let json = serde_json::to_string(&view).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Removes the lock file when dropped.
pub struct LockGuard {
    path: PathBuf,
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Which base model a train command targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseModel {
    Vocal,
    Accomp,
}

impl BaseModel {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "vocal" => Ok(BaseModel::Vocal),
            "accomp" | "accompaniment" => Ok(BaseModel::Accomp),
            other => Err(Error::ConfigError(format!("unknown base model '{other}'"))),
        }
    }

    fn stem_kind(&self) -> StemKind {
        match self {
            BaseModel::Vocal => StemKind::Vocal,
            BaseModel::Accomp => StemKind::Accompaniment,
        }
    }

    fn file_stem(&self) -> &'static str {
        match self {
            BaseModel::Vocal => "vocal",
            BaseModel::Accomp => "accomp",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrepareSummary {
    pub clips: usize,
    pub segments: usize,
    pub external_stems: usize,
    pub median_separated: usize,
    pub skipped_files: u32,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeaturizeSummary {
    pub segments: usize,
    pub records: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub model: String,
    pub train_segments: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub final_train_accuracy: f64,
    pub final_val_accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetaSummary {
    pub kind: String,
    pub stacked_on_segments: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalArtifact {
    pub model: String,
    pub config_hash: String,
    pub metrics: MetricsReport,
    pub confusion: ConfusionMatrix,
    /// Labeled extra: clip-level majority vote over segment predictions.
    pub clip_level: MetricsReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub section: String,
    pub model: String,
    pub recall: f64,
    pub precision: f64,
    pub accuracy: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub config_hash: String,
    pub test_segments: u64,
    pub rows: Vec<ReportRow>,
}

/// Bagging artifact: the frozen weight table.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct BaggingArtifact {
    kind: EnsembleKind,
    config_hash: String,
    weights: FusionWeights,
}

pub struct Pipeline {
    cfg: RunConfig,
    hash: String,
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let hash = cfg.config_hash();
        Ok(Self { cfg, hash })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    fn manifest_path(&self) -> PathBuf {
        self.cfg.work_dir.join("manifest.json")
    }

    fn cache_path(&self) -> PathBuf {
        self.cfg.work_dir.join("features.bin")
    }

    fn index_path(&self) -> PathBuf {
        self.cfg.work_dir.join("features.index.json")
    }

    fn model_stem(&self, which: BaseModel) -> PathBuf {
        self.cfg.work_dir.join("models").join(which.file_stem())
    }

    fn fusion_stem(&self, kind: EnsembleKind) -> PathBuf {
        self.cfg.work_dir.join("models").join(format!("fusion_{}", kind.as_str()))
    }

    fn eval_dir(&self) -> PathBuf {
        self.cfg.work_dir.join("eval")
    }

    /// Take the work-dir lock; fails if another command holds it.
    pub fn lock(&self) -> Result<LockGuard> {
        std::fs::create_dir_all(&self.cfg.work_dir)?;
        let path = self.cfg.work_dir.join(".lock");
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(LockGuard { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::PipelineError(
                format!(
                    "work dir {} is locked by another command (remove {} if stale)",
                    self.cfg.work_dir.display(),
                    path.display()
                ),
            )),
            Err(e) => Err(e.into()),
        }
    }

    fn load_manifest(&self) -> Result<Manifest> {
        let manifest = Manifest::load(&self.manifest_path())?;
        if manifest.config_hash != self.hash {
            return Err(Error::PipelineError(format!(
                "manifest was produced under config {} but the current config hashes to {}",
                manifest.config_hash, self.hash
            )));
        }
        Ok(manifest)
    }

    /// Scan, split, separate, and write stems + manifest.
    pub fn cmd_prepare(&self) -> Result<PrepareSummary> {
        let _lock = self.lock()?;
        if !self.cfg.corpus_root.is_dir() {
            return Err(Error::PipelineError(format!(
                "corpus root {} does not exist",
                self.cfg.corpus_root.display()
            )));
        }
        let mut manifest = dataset::scan_corpus(
            &self.cfg.corpus_root,
            self.cfg.slices_per_clip,
            self.cfg.seg_seconds,
            self.cfg.sample_rate,
        )?;
        manifest.config_hash = self.hash.clone();
        dataset::split(&mut manifest, self.cfg.test_fraction, self.cfg.seed, self.cfg.clip_coherent)?;
        dataset::split_stacking(
            &mut manifest,
            self.cfg.stack_a_fraction,
            self.cfg.seed,
            self.cfg.clip_coherent,
        )?;

        let stems_out = self.cfg.work_dir.join("stems");
        std::fs::create_dir_all(&stems_out)?;

        // Group entries per clip so each clip decodes once.
        let mut by_clip: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, e) in manifest.entries.iter().enumerate() {
            by_clip.entry(e.parent_clip.clone()).or_default().push(i);
        }
        let clip_jobs: Vec<(String, Vec<usize>)> = by_clip.into_iter().collect();
        let seg_len = self.cfg.seg_seconds as usize * self.cfg.sample_rate as usize;

        struct ClipOutcome {
            entry_updates: Vec<(usize, StemPaths)>,
            external: usize,
            median: usize,
        }

        let outcomes: Vec<Result<ClipOutcome>> = clip_jobs
            .par_iter()
            .map(|(clip_rel, entry_idxs)| -> Result<ClipOutcome> {
                let path = self.cfg.corpus_root.join(clip_rel);
                let bytes = std::fs::read(&path)?;
                let stem_name = Path::new(clip_rel)
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| clip_rel.clone());
                let clip = audio_io::decode_wav(&bytes, stem_name)?;
                let clip = audio_io::resample_linear(&clip, self.cfg.sample_rate)?;
                let segments =
                    audio_io::slice_segments(&clip, self.cfg.seg_seconds, self.cfg.slices_per_clip)?;
                let mut outcome =
                    ClipOutcome { entry_updates: Vec::new(), external: 0, median: 0 };
                for &idx in entry_idxs {
                    let entry = &manifest.entries[idx];
                    let segment = &segments[entry.slice_index];
                    debug_assert_eq!(segment.clip.len(), seg_len);
                    let stems = self.separate_segment(&entry.segment_id, &segment.clip)?;
                    match stems.method {
                        SeparationMethod::External => outcome.external += 1,
                        SeparationMethod::MedianFilter => outcome.median += 1,
                    }
                    let accomp_rel = format!("stems/{}.accompaniment.wav", entry.segment_id);
                    let vocal_rel = format!("stems/{}.vocals.wav", entry.segment_id);
                    std::fs::write(
                        self.cfg.work_dir.join(&accomp_rel),
                        audio_io::encode_wav_f32(&stems.accompaniment.samples, self.cfg.sample_rate),
                    )?;
                    std::fs::write(
                        self.cfg.work_dir.join(&vocal_rel),
                        audio_io::encode_wav_f32(&stems.vocal.samples, self.cfg.sample_rate),
                    )?;
                    outcome.entry_updates.push((
                        idx,
                        StemPaths {
                            accompaniment: accomp_rel,
                            vocal: vocal_rel,
                            method: stems.method,
                        },
                    ));
                }
                Ok(outcome)
            })
            .collect();

        let mut external = 0;
        let mut median = 0;
        for outcome in outcomes {
            let outcome = outcome?;
            external += outcome.external;
            median += outcome.median;
            for (idx, paths) in outcome.entry_updates {
                manifest.entries[idx].stems = Some(paths);
            }
        }
        manifest.save(&self.manifest_path())?;
        Ok(PrepareSummary {
            clips: clip_jobs.len(),
            segments: manifest.entries.len(),
            external_stems: external,
            median_separated: median,
            skipped_files: manifest.skipped_files,
            warnings: manifest.warnings.clone(),
        })
    }

    /// External stems when available for this segment, else the built-in
    /// median-filter separator.
    fn separate_segment(&self, segment_id: &str, segment: &AudioClip) -> Result<separation::Stems> {
        if let Some(stems_dir) = &self.cfg.stems_dir {
            let accomp = stems_dir.join(format!("{segment_id}.accompaniment.wav"));
            let vocal = stems_dir.join(format!("{segment_id}.vocals.wav"));
            if accomp.is_file() && vocal.is_file() {
                let accomp_bytes = std::fs::read(&accomp)?;
                let vocal_bytes = std::fs::read(&vocal)?;
                return separation::load_stems(&accomp_bytes, &vocal_bytes, segment.len(), segment_id);
            }
        }
        match self.cfg.separator {
            SeparatorKind::Median => separation::median_filter_separate(segment, &self.cfg.separation),
        }
    }

    /// Extract and cache both stems' MFCCs for every segment.
    pub fn cmd_featurize(&self) -> Result<FeaturizeSummary> {
        let _lock = self.lock()?;
        let mut manifest = self.load_manifest()?;
        let file = std::fs::File::create(self.cache_path())?;
        let mut writer = CacheWriter::new(BufWriter::new(file), self.hash.clone());

        let jobs: Vec<(usize, StemPaths, String, u8)> = manifest
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let stems = e.stems.clone().ok_or_else(|| {
                    Error::PipelineError(format!(
                        "segment {} has no stems; run prepare first",
                        e.segment_id
                    ))
                })?;
                Ok((i, stems, e.segment_id.clone(), e.label.id()))
            })
            .collect::<Result<_>>()?;

        let mut records = 0usize;
        // Parallel extraction in deterministic chunks, sequential writes.
        for chunk in jobs.chunks(256) {
            let extracted: Vec<Result<(usize, MfccMatrix, MfccMatrix, u8)>> = chunk
                .par_iter()
                .map(|(idx, stems, segment_id, label)| {
                    let load = |rel: &str, suffix: &str| -> Result<AudioClip> {
                        let bytes = std::fs::read(self.cfg.work_dir.join(rel))?;
                        audio_io::decode_wav(&bytes, format!("{segment_id}.{suffix}"))
                    };
                    let accomp_clip = load(&stems.accompaniment, "accompaniment")?;
                    let vocal_clip = load(&stems.vocal, "vocals")?;
                    let mut accomp = features::mfcc(&accomp_clip, &self.cfg.features)?;
                    accomp.segment_id = segment_id.clone();
                    let mut vocal = features::mfcc(&vocal_clip, &self.cfg.features)?;
                    vocal.segment_id = segment_id.clone();
                    Ok((*idx, accomp, vocal, *label))
                })
                .collect();
            for item in extracted {
                let (idx, accomp, vocal, label) = item?;
                let accomp_off = writer.append(&accomp, StemKind::Accompaniment, label)?;
                let vocal_off = writer.append(&vocal, StemKind::Vocal, label)?;
                manifest.entries[idx].features =
                    Some(FeatureOffsets { accompaniment: accomp_off, vocal: vocal_off });
                records += 2;
            }
        }
        let index = writer.finish();
        features::cache::write_index(&self.index_path(), &index)?;
        manifest.save(&self.manifest_path())?;
        Ok(FeaturizeSummary { segments: manifest.entries.len(), records })
    }

    fn load_cache_index(&self) -> Result<CacheIndex> {
        let index = features::cache::read_index(&self.index_path())?;
        if index.config_hash != self.hash {
            return Err(Error::PipelineError(format!(
                "feature cache was produced under config {} but the current config hashes to {}",
                index.config_hash, self.hash
            )));
        }
        Ok(index)
    }

    /// MFCC tensors for the given entries and stem kind, in entry order.
    fn load_features(
        &self,
        entries: &[&ManifestEntry],
        stem: StemKind,
    ) -> Result<Vec<(Tensor, usize)>> {
        let _index = self.load_cache_index()?;
        let mut file = std::fs::File::open(self.cache_path())
            .map_err(|e| Error::PipelineError(format!("missing feature cache: {e}")))?;
        let mut out = Vec::with_capacity(entries.len());
        for e in entries {
            let offsets = e.features.ok_or_else(|| {
                Error::PipelineError(format!(
                    "segment {} has no cached features; run featurize first",
                    e.segment_id
                ))
            })?;
            let offset = match stem {
                StemKind::Accompaniment => offsets.accompaniment,
                StemKind::Vocal => offsets.vocal,
            };
            let record = features::cache::read_record(&mut file, offset, &e.segment_id)?;
            out.push((record.values, e.label.id() as usize));
        }
        Ok(out)
    }

    /// Train one base model on the TrainA partition and save params+history.
    pub fn cmd_train_base(&self, which: BaseModel) -> Result<TrainSummary> {
        let _lock = self.lock()?;
        let manifest = self.load_manifest()?;
        let train_entries = manifest.segments_in(SplitPart::TrainA);
        if train_entries.is_empty() {
            return Err(Error::PipelineError(
                "no TrainA segments in manifest; run prepare first".into(),
            ));
        }
        let data = self.load_features(&train_entries, which.stem_kind())?;
        let (kind, train_cfg) = match which {
            BaseModel::Vocal => (
                ModelKind::Vocal(self.cfg.vocal_net.clone()),
                TrainConfig { seed: self.cfg.seed, ..self.cfg.train_vocal.clone() },
            ),
            BaseModel::Accomp => (
                ModelKind::Accomp(self.cfg.accomp_net.clone()),
                TrainConfig { seed: self.cfg.seed.wrapping_add(1), ..self.cfg.train_accomp.clone() },
            ),
        };
        let (net, history) = nn::train(&kind, &data, &train_cfg)?;
        std::fs::create_dir_all(self.cfg.work_dir.join("models"))?;
        let stem = self.model_stem(which);
        nn::save_model(&stem, &net, train_cfg.seed, &self.hash)?;
        std::fs::write(
            stem.with_extension("history.json"),
            serde_json::to_string_pretty(&history)?,
        )?;
        let last = history.epochs.last().expect("at least one epoch");
        Ok(TrainSummary {
            model: which.file_stem().to_string(),
            train_segments: data.len(),
            epochs_run: history.epochs.len(),
            best_epoch: history.best_epoch,
            final_train_accuracy: last.train_accuracy,
            final_val_accuracy: last.val_accuracy,
        })
    }

    fn load_base(&self, which: BaseModel) -> Result<Net> {
        let (net, _) = nn::load_model(&self.model_stem(which), Some(&self.hash))?;
        Ok(net)
    }

    fn fusion_weights_for(&self, kind: EnsembleKind) -> Result<FusionWeights> {
        Ok(match kind {
            EnsembleKind::Mean => FusionWeights::default(),
            EnsembleKind::SoftVote => FusionWeights::from_table(&self.cfg.fusion_weights)?,
            EnsembleKind::IgnoreVocal => FusionWeights::ignore_vocal(),
            EnsembleKind::IgnoreAccomp => FusionWeights::ignore_accomp(),
            _ => return Err(Error::ConfigError("not a bagging kind".into())),
        })
    }

    /// Predict both stems of the given segments with the frozen base models.
    fn predict_pairs(
        &self,
        entries: &[&ManifestEntry],
        vocal: &Net,
        accomp: &Net,
    ) -> Result<Vec<(ProbVector, ProbVector, usize)>> {
        let accomp_data = self.load_features(entries, StemKind::Accompaniment)?;
        let vocal_data = self.load_features(entries, StemKind::Vocal)?;
        accomp_data
            .par_iter()
            .zip(vocal_data.par_iter())
            .map(|((xa, label), (xv, _))| {
                let pa = forward_accomp(
                    &MfccMatrix { values: xa.clone(), segment_id: String::new() },
                    accomp,
                )?;
                let pv = forward_vocal(
                    &MfccMatrix { values: xv.clone(), segment_id: String::new() },
                    vocal,
                )?;
                Ok((pa, pv, *label))
            })
            .collect()
    }

    /// Train (stacking kinds) or freeze (bagging kinds) a fusion method.
    ///
    /// Stacking follows the disjoint-split protocol: the bases were trained
    /// on TrainA by `cmd_train_base`; here they predict TrainB, and the
    /// meta-model fits those predictions.
    pub fn cmd_train_meta(&self, kind: EnsembleKind) -> Result<MetaSummary> {
        let _lock = self.lock()?;
        std::fs::create_dir_all(self.cfg.work_dir.join("models"))?;
        let stem = self.fusion_stem(kind);
        if !kind.is_stacking() {
            let artifact = BaggingArtifact {
                kind,
                config_hash: self.hash.clone(),
                weights: self.fusion_weights_for(kind)?,
            };
            std::fs::write(stem.with_extension("json"), serde_json::to_string_pretty(&artifact)?)?;
            return Ok(MetaSummary { kind: kind.as_str().to_string(), stacked_on_segments: 0 });
        }
        let manifest = self.load_manifest()?;
        let b_entries = manifest.segments_in(SplitPart::TrainB);
        if b_entries.is_empty() {
            return Err(Error::PipelineError(
                "no TrainB segments in manifest; run prepare first".into(),
            ));
        }
        let vocal = self.load_base(BaseModel::Vocal)?;
        let accomp = self.load_base(BaseModel::Accomp)?;
        let pairs = self.predict_pairs(&b_entries, &vocal, &accomp)?;
        let inputs: Vec<ensemble::StackInput> = pairs
            .iter()
            .map(|(pa, pv, _)| ensemble::stack_features(pa, pv))
            .collect();
        let labels: Vec<usize> = pairs.iter().map(|(_, _, l)| *l).collect();
        let meta_kind = match kind {
            EnsembleKind::StackLogreg => MetaKind::LogReg,
            EnsembleKind::StackDense => MetaKind::DenseNet,
            EnsembleKind::StackGbdt => MetaKind::Gbdt,
            _ => unreachable!(),
        };
        let meta = ensemble::train_meta(meta_kind, &inputs, &labels, &self.cfg.meta, self.cfg.seed)?;
        meta_io::save_meta(&stem, &meta, self.cfg.seed, &self.hash)?;
        Ok(MetaSummary { kind: kind.as_str().to_string(), stacked_on_segments: inputs.len() })
    }

    fn load_bagging(&self, kind: EnsembleKind) -> Result<FusionWeights> {
        let path = self.fusion_stem(kind).with_extension("json");
        let raw = std::fs::read_to_string(&path).map_err(|e| {
            Error::PipelineError(format!("missing fusion artifact {}: {e}", path.display()))
        })?;
        let artifact: BaggingArtifact = serde_json::from_str(&raw)?;
        if artifact.config_hash != self.hash {
            return Err(Error::PipelineError(format!(
                "fusion artifact {} was produced under config {} but the current config hashes to {}",
                path.display(),
                artifact.config_hash,
                self.hash
            )));
        }
        Ok(artifact.weights)
    }

    /// Score one model selection on the Test partition and write artifacts.
    pub fn cmd_evaluate(&self, selection: ModelSelection) -> Result<EvalArtifact> {
        let _lock = self.lock()?;
        let artifact = self.evaluate_unlocked(selection)?;
        self.write_eval_artifact(&artifact)?;
        Ok(artifact)
    }

    fn write_eval_artifact(&self, artifact: &EvalArtifact) -> Result<()> {
        let dir = self.eval_dir();
        std::fs::create_dir_all(&dir)?;
        let base = dir.join(&artifact.model);
        std::fs::write(base.with_extension("metrics.json"), serde_json::to_string_pretty(artifact)?)?;
        std::fs::write(base.with_extension("metrics.csv"), artifact.metrics.to_csv())?;
        std::fs::write(
            base.with_extension("confusion.svg"),
            eval::confusion_svg(&artifact.confusion, &artifact.model),
        )?;
        Ok(())
    }

    fn evaluate_unlocked(&self, selection: ModelSelection) -> Result<EvalArtifact> {
        let manifest = self.load_manifest()?;
        let test_entries = manifest.segments_in(SplitPart::Test);
        if test_entries.is_empty() {
            return Err(Error::PipelineError("no Test segments in manifest; run prepare first".into()));
        }
        let truths: Vec<usize> = test_entries.iter().map(|e| e.label.id() as usize).collect();
        let parents: Vec<&str> = test_entries.iter().map(|e| e.parent_clip.as_str()).collect();
        let preds: Vec<usize> = match selection {
            ModelSelection::AccompCnn => {
                let net = self.load_base(BaseModel::Accomp)?;
                let data = self.load_features(&test_entries, StemKind::Accompaniment)?;
                data.par_iter()
                    .map(|(x, _)| {
                        let p = forward_accomp(
                            &MfccMatrix { values: x.clone(), segment_id: String::new() },
                            &net,
                        )?;
                        Ok(p.argmax())
                    })
                    .collect::<Result<_>>()?
            }
            ModelSelection::VocalLstm => {
                let net = self.load_base(BaseModel::Vocal)?;
                let data = self.load_features(&test_entries, StemKind::Vocal)?;
                data.par_iter()
                    .map(|(x, _)| {
                        let p = forward_vocal(
                            &MfccMatrix { values: x.clone(), segment_id: String::new() },
                            &net,
                        )?;
                        Ok(p.argmax())
                    })
                    .collect::<Result<_>>()?
            }
            ModelSelection::Fusion(kind) => {
                let vocal = self.load_base(BaseModel::Vocal)?;
                let accomp = self.load_base(BaseModel::Accomp)?;
                let pairs = self.predict_pairs(&test_entries, &vocal, &accomp)?;
                if kind.is_stacking() {
                    let (meta, _) = meta_io::load_meta(&self.fusion_stem(kind), Some(&self.hash))?;
                    pairs
                        .iter()
                        .map(|(pa, pv, _)| {
                            let input = ensemble::stack_features(pa, pv);
                            Ok(meta.predict(&input)?.argmax())
                        })
                        .collect::<Result<_>>()?
                } else {
                    let weights = self.load_bagging(kind)?;
                    pairs
                        .iter()
                        .map(|(pa, pv, _)| Ok(ensemble::decide(&ensemble::soft_vote(pa, pv, &weights)?)))
                        .collect::<Result<_>>()?
                }
            }
        };
        let confusion = eval::confusion(&truths, &preds)?;
        let metrics = eval::metrics(&confusion)?;
        let (clip_truths, clip_preds) = eval::clip_majority_vote(&parents, &truths, &preds)?;
        let clip_level = eval::metrics(&eval::confusion(&clip_truths, &clip_preds)?)?;
        Ok(EvalArtifact {
            model: selection.as_str().to_string(),
            config_hash: self.hash.clone(),
            metrics,
            confusion,
            clip_level,
        })
    }

    /// Consolidated comparison across the individual models and every
    /// fusion method with a trained artifact.
    pub fn cmd_report(&self) -> Result<Report> {
        let _lock = self.lock()?;
        let mut rows = Vec::new();
        let mut test_segments = 0u64;
        // Stacking and bagging rows for every trained fusion artifact.
        for kind in EnsembleKind::ALL {
            if !self.fusion_stem(kind).with_extension("json").is_file() {
                continue;
            }
            let artifact = self.evaluate_unlocked(ModelSelection::Fusion(kind))?;
            self.write_eval_artifact(&artifact)?;
            test_segments = artifact.metrics.total;
            rows.push(ReportRow {
                section: kind.section().to_string(),
                model: kind.display_name().to_string(),
                recall: artifact.metrics.recall,
                precision: artifact.metrics.precision,
                accuracy: artifact.metrics.accuracy,
                f1: artifact.metrics.f1,
            });
        }
        // Individual models.
        for (selection, name) in [
            (ModelSelection::AccompCnn, "CNN on Accompaniments"),
            (ModelSelection::VocalLstm, "LSTM on Vocals"),
        ] {
            let artifact = self.evaluate_unlocked(selection)?;
            self.write_eval_artifact(&artifact)?;
            test_segments = artifact.metrics.total;
            rows.push(ReportRow {
                section: "Individual Models".to_string(),
                model: name.to_string(),
                recall: artifact.metrics.recall,
                precision: artifact.metrics.precision,
                accuracy: artifact.metrics.accuracy,
                f1: artifact.metrics.f1,
            });
        }
        let report = Report { config_hash: self.hash.clone(), test_segments, rows };
        std::fs::write(
            self.cfg.work_dir.join("report.json"),
            serde_json::to_string_pretty(&report)?,
        )?;
        std::fs::write(self.cfg.work_dir.join("report.csv"), report.to_csv())?;
        Ok(report)
    }
}

impl Report {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("section,model,recall,precision,accuracy,f1\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6}\n",
                r.section, r.model, r.recall, r.precision, r.accuracy, r.f1
            ));
        }
        out
    }

    /// Fixed-width text table mirroring the section structure of the
    /// published comparison.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<22}{:<38}{:>8}{:>11}{:>10}{:>10}\n",
            "Type", "Model", "Recall", "Precision", "Accuracy", "F1"
        ));
        let mut last_section = "";
        for r in &self.rows {
            let section = if r.section == last_section { "" } else { r.section.as_str() };
            last_section = &r.section;
            out.push_str(&format!(
                "{:<22}{:<38}{:>7.1}%{:>10.1}%{:>9.1}%{:>9.1}%\n",
                section,
                r.model,
                r.recall * 100.0,
                r.precision * 100.0,
                r.accuracy * 100.0,
                r.f1 * 100.0
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(dir: &Path) -> RunConfig {
        RunConfig {
            corpus_root: dir.join("corpus"),
            work_dir: dir.join("work"),
            ..RunConfig::default()
        }
    }

    #[test]
    fn config_hash_ignores_paths_but_tracks_semantics() {
        let dir = tempfile::tempdir().unwrap();
        let a = tiny_config(dir.path());
        let mut b = a.clone();
        b.work_dir = dir.path().join("elsewhere");
        b.corpus_root = dir.path().join("other_corpus");
        assert_eq!(a.config_hash(), b.config_hash());
        let mut c = a.clone();
        c.seed = 43;
        assert_ne!(a.config_hash(), c.config_hash());
        let mut d = a.clone();
        d.features.n_mels = 64;
        assert_ne!(a.config_hash(), d.config_hash());
    }

    #[test]
    fn unknown_config_keys_rejected() {
        let parsed: std::result::Result<RunConfig, _> =
            serde_json::from_str(r#"{"seed": 1, "bogus_key": true}"#);
        assert!(parsed.is_err());
    }

    #[test]
    fn lock_excludes_second_command() {
        let dir = tempfile::tempdir().unwrap();
        let pipeline = Pipeline::new(tiny_config(dir.path())).unwrap();
        let guard = pipeline.lock().unwrap();
        assert!(matches!(pipeline.lock(), Err(Error::PipelineError(_))));
        drop(guard);
        assert!(pipeline.lock().is_ok());
    }

    #[test]
    fn evaluate_before_prepare_is_pipeline_error() {
        let dir = tempfile::tempdir().unwrap();
        let pipeline = Pipeline::new(tiny_config(dir.path())).unwrap();
        match pipeline.cmd_evaluate(ModelSelection::AccompCnn) {
            Err(Error::PipelineError(msg)) => assert!(msg.contains("manifest")),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn featurize_before_prepare_is_pipeline_error() {
        let dir = tempfile::tempdir().unwrap();
        let pipeline = Pipeline::new(tiny_config(dir.path())).unwrap();
        assert!(matches!(pipeline.cmd_featurize(), Err(Error::PipelineError(_))));
    }

    #[test]
    fn mismatched_config_hash_detected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        std::fs::create_dir_all(&cfg.work_dir).unwrap();
        // Manifest written under some other config hash.
        let manifest = Manifest { config_hash: "stale00".into(), ..Manifest::default() };
        manifest.save(&cfg.work_dir.join("manifest.json")).unwrap();
        let pipeline = Pipeline::new(cfg).unwrap();
        match pipeline.cmd_featurize() {
            Err(Error::PipelineError(msg)) => assert!(msg.contains("stale00")),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn model_selection_parsing() {
        assert_eq!(ModelSelection::parse("accomp").unwrap(), ModelSelection::AccompCnn);
        assert_eq!(ModelSelection::parse("vocal-lstm").unwrap(), ModelSelection::VocalLstm);
        assert_eq!(
            ModelSelection::parse("stack-logreg").unwrap(),
            ModelSelection::Fusion(EnsembleKind::StackLogreg)
        );
        assert!(ModelSelection::parse("nonsense").is_err());
    }
}
