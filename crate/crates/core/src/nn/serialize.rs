//! Model persistence: a JSON manifest describing the architecture, seed, and
//! parameter layout, plus a binary blob of little-endian f64 values in
//! declaration order. Loading cross-checks shapes and the config hash.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::model::{ModelKind, Net};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelManifest {
    #[serde(flatten)]
    pub kind: ModelKind,
    pub params: Vec<ParamSpec>,
    pub seed: u64,
    pub config_hash: String,
}

/// Write `<stem>.json` and `<stem>.bin`.
pub fn save_model(stem: &Path, net: &Net, seed: u64, config_hash: &str) -> Result<()> {
    let views = net.params();
    let manifest = ModelManifest {
        kind: net.kind(),
        params: views
            .iter()
            .map(|p| ParamSpec { name: p.name.clone(), shape: p.shape.clone() })
            .collect(),
        seed,
        config_hash: config_hash.to_string(),
    };
    let mut blob = Vec::new();
    for view in &views {
        for &v in view.data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(stem.with_extension("json"), serde_json::to_string_pretty(&manifest)?)?;
    std::fs::write(stem.with_extension("bin"), blob)?;
    Ok(())
}

/// Load a model saved by `save_model`, refusing manifests whose config hash
/// differs from `expected_hash` (pass `None` to skip the check).
pub fn load_model(stem: &Path, expected_hash: Option<&str>) -> Result<(Net, ModelManifest)> {
    let json_path = stem.with_extension("json");
    let raw = std::fs::read_to_string(&json_path).map_err(|e| {
        Error::PipelineError(format!("missing model manifest {}: {e}", json_path.display()))
    })?;
    let manifest: ModelManifest = serde_json::from_str(&raw)?;
    if let Some(expected) = expected_hash {
        if manifest.config_hash != expected {
            return Err(Error::PipelineError(format!(
                "model {} was produced under config {} but the current config hashes to {expected}",
                json_path.display(),
                manifest.config_hash
            )));
        }
    }
    let bin_path = stem.with_extension("bin");
    let blob = std::fs::read(&bin_path).map_err(|e| {
        Error::PipelineError(format!("missing model blob {}: {e}", bin_path.display()))
    })?;
    let mut net = Net::zeros(&manifest.kind)?;
    let expected_len: usize = manifest
        .params
        .iter()
        .map(|p| p.shape.iter().product::<usize>())
        .sum();
    if blob.len() != expected_len * 8 {
        return Err(Error::DataError(format!(
            "model blob {} has {} bytes, manifest declares {}",
            bin_path.display(),
            blob.len(),
            expected_len * 8
        )));
    }
    {
        let slices = net.params_mut();
        let mut offset = 0usize;
        for (slice, spec) in slices.into_iter().zip(&manifest.params) {
            if slice.len() != spec.shape.iter().product::<usize>() {
                return Err(Error::ShapeError(format!(
                    "parameter {} shape {:?} does not match architecture",
                    spec.name, spec.shape
                )));
            }
            for v in slice.iter_mut() {
                let b: [u8; 8] = blob[offset..offset + 8].try_into().unwrap();
                *v = f64::from_le_bytes(b);
                offset += 8;
            }
        }
    }
    if !net.params().iter().all(|p| p.data.iter().all(|v| v.is_finite())) {
        return Err(Error::DataError("model blob contains non-finite values".into()));
    }
    Ok((net, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::DenseNetConfig;

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("model");
        let kind = ModelKind::DenseMeta(DenseNetConfig {
            input: 6,
            hidden_sizes: vec![5],
            classes: 3,
            dropout_rate: 0.0,
        });
        let net = Net::init(&kind, 99).unwrap();
        save_model(&stem, &net, 99, "cafe0123").unwrap();
        let (loaded, manifest) = load_model(&stem, Some("cafe0123")).unwrap();
        assert_eq!(loaded, net);
        assert_eq!(manifest.seed, 99);

        // Wrong hash refused.
        assert!(matches!(load_model(&stem, Some("other")), Err(Error::PipelineError(_))));
    }

    #[test]
    fn missing_file_named_in_error() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("nope");
        match load_model(&stem, None) {
            Err(Error::PipelineError(msg)) => assert!(msg.contains("nope.json")),
            other => panic!("unexpected: {other:?}"),
        }
    }
}
