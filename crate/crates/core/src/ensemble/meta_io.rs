//! Meta-model persistence in the same manifest + little-endian f64 blob
//! format the network serializer uses: structure in JSON, every numeric
//! parameter (weights, thresholds, leaf values) in the blob in declaration
//! order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ensemble::gbdt::{GbdtModel, Node, Tree};
use crate::ensemble::logreg::LogRegModel;
use crate::ensemble::{DenseMetaModel, MetaModel};
use crate::error::{Error, Result};
use crate::nn::DenseNetConfig;

/// Blob-free tree topology; scalars live in the blob in node order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
enum NodeSpec {
    Split { feature: usize, left: usize, right: usize },
    Leaf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "meta_kind", rename_all = "snake_case")]
enum MetaSpec {
    LogReg { features: usize, classes: usize },
    DenseNet { config: DenseNetConfig },
    Gbdt { features: usize, classes: usize, shrinkage: f64, trees: Vec<Vec<Vec<NodeSpec>>> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetaManifest {
    #[serde(flatten)]
    spec: MetaSpec,
    pub seed: u64,
    pub config_hash: String,
    /// Number of f64 values in the blob.
    pub blob_len: usize,
}

fn flatten(model: &MetaModel) -> (MetaSpec, Vec<f64>) {
    match model {
        MetaModel::LogReg(m) => {
            let mut blob = m.weights.clone();
            blob.extend_from_slice(&m.bias);
            (MetaSpec::LogReg { features: m.features, classes: m.classes }, blob)
        }
        MetaModel::DenseNet(m) => {
            (MetaSpec::DenseNet { config: m.config.clone() }, m.params.clone())
        }
        MetaModel::Gbdt(m) => {
            let mut blob = Vec::new();
            let trees = m
                .trees
                .iter()
                .map(|round| {
                    round
                        .iter()
                        .map(|tree| {
                            tree.nodes
                                .iter()
                                .map(|node| match node {
                                    Node::Split { feature, threshold, left, right } => {
                                        blob.push(*threshold);
                                        NodeSpec::Split { feature: *feature, left: *left, right: *right }
                                    }
                                    Node::Leaf { value } => {
                                        blob.push(*value);
                                        NodeSpec::Leaf
                                    }
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect();
            (
                MetaSpec::Gbdt {
                    features: m.features,
                    classes: m.classes,
                    shrinkage: m.shrinkage,
                    trees,
                },
                blob,
            )
        }
    }
}

fn rebuild(spec: &MetaSpec, blob: &[f64]) -> Result<MetaModel> {
    match spec {
        MetaSpec::LogReg { features, classes } => {
            let n_w = features * classes;
            if blob.len() != n_w + classes {
                return Err(Error::DataError("logreg blob length mismatch".into()));
            }
            Ok(MetaModel::LogReg(LogRegModel {
                weights: blob[..n_w].to_vec(),
                bias: blob[n_w..].to_vec(),
                features: *features,
                classes: *classes,
            }))
        }
        MetaSpec::DenseNet { config } => {
            let model = DenseMetaModel { config: config.clone(), params: blob.to_vec() };
            model.to_net()?; // validates the length against the architecture
            Ok(MetaModel::DenseNet(model))
        }
        MetaSpec::Gbdt { features, classes, shrinkage, trees } => {
            let mut at = 0usize;
            let mut rounds = Vec::with_capacity(trees.len());
            for round in trees {
                let mut round_trees = Vec::with_capacity(round.len());
                for tree in round {
                    let mut nodes = Vec::with_capacity(tree.len());
                    for node in tree {
                        let scalar = *blob
                            .get(at)
                            .ok_or_else(|| Error::DataError("gbdt blob too short".into()))?;
                        at += 1;
                        nodes.push(match node {
                            NodeSpec::Split { feature, left, right } => Node::Split {
                                feature: *feature,
                                threshold: scalar,
                                left: *left,
                                right: *right,
                            },
                            NodeSpec::Leaf => Node::Leaf { value: scalar },
                        });
                    }
                    round_trees.push(Tree { nodes });
                }
                rounds.push(round_trees);
            }
            if at != blob.len() {
                return Err(Error::DataError("gbdt blob too long".into()));
            }
            Ok(MetaModel::Gbdt(GbdtModel {
                trees: rounds,
                features: *features,
                classes: *classes,
                shrinkage: *shrinkage,
            }))
        }
    }
}

/// Write `<stem>.json` and `<stem>.bin`.
pub fn save_meta(stem: &Path, model: &MetaModel, seed: u64, config_hash: &str) -> Result<()> {
    let (spec, blob) = flatten(model);
    let manifest = MetaManifest {
        spec,
        seed,
        config_hash: config_hash.to_string(),
        blob_len: blob.len(),
    };
    std::fs::write(stem.with_extension("json"), serde_json::to_string_pretty(&manifest)?)?;
    let mut bytes = Vec::with_capacity(blob.len() * 8);
    for v in blob {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(stem.with_extension("bin"), bytes)?;
    Ok(())
}

pub fn load_meta(stem: &Path, expected_hash: Option<&str>) -> Result<(MetaModel, MetaManifest)> {
    let json_path = stem.with_extension("json");
    let raw = std::fs::read_to_string(&json_path).map_err(|e| {
        Error::PipelineError(format!("missing meta-model manifest {}: {e}", json_path.display()))
    })?;
    let manifest: MetaManifest = serde_json::from_str(&raw)?;
    if let Some(expected) = expected_hash {
        if manifest.config_hash != expected {
            return Err(Error::PipelineError(format!(
                "meta-model {} was produced under config {} but the current config hashes to {expected}",
                json_path.display(),
                manifest.config_hash
            )));
        }
    }
    let bin_path = stem.with_extension("bin");
    let bytes = std::fs::read(&bin_path).map_err(|e| {
        Error::PipelineError(format!("missing meta-model blob {}: {e}", bin_path.display()))
    })?;
    if bytes.len() != manifest.blob_len * 8 {
        return Err(Error::DataError(format!(
            "meta blob {} has {} bytes, manifest declares {}",
            bin_path.display(),
            bytes.len(),
            manifest.blob_len * 8
        )));
    }
    let blob: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let model = rebuild(&manifest.spec, &blob)?;
    Ok((model, manifest))
}
