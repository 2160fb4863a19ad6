//! JSON weight manifests.
//!
//! ```json
//! {
//!   "version": 1,
//!   "layers": [
//!     {"name": "conv1", "kind": "conv", "dims": [20, 1, 5, 5],
//!      "blob": "conv1.bin", "bias": "conv1.bias.bin"}
//!   ],
//!   "network": {"input": [28, 28, 1], "ops": [{"op": "conv", "layer": "conv1"}]}
//! }
//! ```
//!
//! Blobs are headerless little-endian `f32` arrays in `(Num, C, H, W)` order,
//! resolved relative to the manifest. `bias` and `network` are optional; the
//! evaluator needs both.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{LayerDims, LayerKind, WeightTensor};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub version: u32,
    pub layers: Vec<ManifestLayer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkDesc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestLayer {
    pub name: String,
    pub kind: LayerKind,
    pub dims: LayerDims,
    pub blob: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<PathBuf>,
}

/// Layer topology for the evaluator. Weight-bearing ops refer to manifest
/// layers by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDesc {
    /// Input image shape `[H, W, C]`.
    pub input: [usize; 3],
    pub ops: Vec<OpDesc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase", deny_unknown_fields)]
pub enum OpDesc {
    Conv {
        layer: String,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: Padding,
    },
    Relu,
    Maxpool {
        size: usize,
        stride: usize,
    },
    Flatten,
    Dense {
        layer: String,
    },
    Softmax,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    #[default]
    Valid,
    Same,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelLayer {
    pub tensor: WeightTensor,
    pub bias: Option<Vec<f32>>,
}

/// A loaded model: weight tensors in manifest order plus optional topology.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Model {
    pub layers: Vec<ModelLayer>,
    pub network: Option<NetworkDesc>,
}

impl Model {
    pub fn tensors(&self) -> impl Iterator<Item = &WeightTensor> {
        self.layers.iter().map(|l| &l.tensor)
    }

    pub fn layer(&self, name: &str) -> Option<&ModelLayer> {
        self.layers.iter().find(|l| l.tensor.name == name)
    }
}

/// Loads the weight tensors declared by a manifest, in manifest order.
pub fn load_model(manifest_path: impl AsRef<Path>) -> Result<Vec<WeightTensor>> {
    Ok(load_manifest(manifest_path)?
        .layers
        .into_iter()
        .map(|l| l.tensor)
        .collect())
}

/// Loads tensors, biases and the optional network description.
pub fn load_manifest(manifest_path: impl AsRef<Path>) -> Result<Model> {
    let path = manifest_path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: ManifestFile = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            reason: format!("unsupported version {}", manifest.version),
        });
    }
    let base = path.parent().unwrap_or_else(|| Path::new("."));

    let mut names = HashSet::new();
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for entry in manifest.layers {
        if !names.insert(entry.name.clone()) {
            return Err(Error::Manifest {
                path: path.to_path_buf(),
                reason: format!("duplicate layer name `{}`", entry.name),
            });
        }
        let values = read_f32_blob(&base.join(&entry.blob))?;
        let tensor = WeightTensor::new(entry.name, entry.kind, entry.dims, values)?;
        let bias = match &entry.bias {
            Some(rel) => {
                let b = read_f32_blob(&base.join(rel))?;
                if b.len() != tensor.dims.num_filters {
                    return Err(Error::BlobLength {
                        layer: format!("{} (bias)", tensor.name),
                        expected: tensor.dims.num_filters,
                        actual: b.len(),
                    });
                }
                if let Some(index) = b.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        layer: format!("{} (bias)", tensor.name),
                        index,
                    });
                }
                Some(b)
            }
            None => None,
        };
        layers.push(ModelLayer { tensor, bias });
    }
    Ok(Model {
        layers,
        network: manifest.network,
    })
}

/// Writes `model` as a manifest named `manifest_name` plus one blob per
/// tensor (and bias) into `dir`. Each file is written to a temporary name and
/// renamed into place.
pub fn write_manifest(
    model: &Model,
    dir: impl AsRef<Path>,
    manifest_name: &str,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut entries = Vec::with_capacity(model.layers.len());
    for (i, layer) in model.layers.iter().enumerate() {
        let stem = format!("{i:02}_{}", sanitize(&layer.tensor.name));
        let blob = PathBuf::from(format!("{stem}.bin"));
        write_atomic(&dir.join(&blob), &f32_bytes(&layer.tensor.values))?;
        let bias = match &layer.bias {
            Some(b) => {
                let p = PathBuf::from(format!("{stem}.bias.bin"));
                write_atomic(&dir.join(&p), &f32_bytes(b))?;
                Some(p)
            }
            None => None,
        };
        entries.push(ManifestLayer {
            name: layer.tensor.name.clone(),
            kind: layer.tensor.kind,
            dims: layer.tensor.dims,
            blob,
            bias,
        });
    }
    let manifest = ManifestFile {
        version: MANIFEST_VERSION,
        layers: entries,
        network: model.network.clone(),
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    let out = dir.join(manifest_name);
    write_atomic(&out, text.as_bytes())?;
    Ok(out)
}

pub fn read_f32_blob(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            reason: format!("blob size {} is not a multiple of 4", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn f32_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_manifest_json(dir: &Path, dims: [usize; 4], blob: &[f32]) -> PathBuf {
        fs::write(dir.join("w.bin"), f32_bytes(blob)).unwrap();
        let json = format!(
            r#"{{"version": 1, "layers": [{{"name": "l0", "kind": "conv", "dims": {dims:?}, "blob": "w.bin"}}]}}"#
        );
        let p = dir.join("m.json");
        fs::write(&p, json).unwrap();
        p
    }

    #[test]
    fn single_value_layer() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_manifest_json(dir.path(), [1, 1, 1, 1], &[0.5]);
        let tensors = load_model(&p).unwrap();
        assert_eq!(tensors.len(), 1);
        assert_eq!(tensors[0].values, vec![0.5]);
    }

    #[test]
    fn count_arithmetic() {
        let dir = tempfile::tempdir().unwrap();
        let blob: Vec<f32> = (0..150).map(|i| i as f32).collect();
        let p = write_manifest_json(dir.path(), [2, 3, 5, 5], &blob);
        assert_eq!(load_model(&p).unwrap()[0].values.len(), 150);
    }

    #[test]
    fn short_blob_is_length_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let blob = vec![0.0f32; 149];
        let p = write_manifest_json(dir.path(), [2, 3, 5, 5], &blob);
        assert!(matches!(
            load_model(&p),
            Err(Error::BlobLength {
                expected: 150,
                actual: 149,
                ..
            })
        ));
    }

    #[test]
    fn missing_blob_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_manifest_json(dir.path(), [1, 1, 1, 1], &[1.0]);
        fs::remove_file(dir.path().join("w.bin")).unwrap();
        assert!(matches!(load_model(&p), Err(Error::Io { .. })));
    }

    #[test]
    fn infinite_value_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_manifest_json(dir.path(), [1, 1, 1, 2], &[1.0, f32::INFINITY]);
        assert!(matches!(load_model(&p), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn write_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let dims = LayerDims::new(2, 1, 1, 3).unwrap();
        let t = WeightTensor::new("a/b", LayerKind::Dense, dims, vec![1., -2., 3., 0., 5., 6.])
            .unwrap();
        let model = Model {
            layers: vec![ModelLayer {
                tensor: t,
                bias: Some(vec![0.25, -0.5]),
            }],
            network: Some(NetworkDesc {
                input: [1, 3, 2],
                ops: vec![
                    OpDesc::Flatten,
                    OpDesc::Dense {
                        layer: "a/b".into(),
                    },
                ],
            }),
        };
        let p = write_manifest(&model, dir.path(), "out.json").unwrap();
        assert_eq!(load_manifest(&p).unwrap(), model);
    }

    #[test]
    fn op_desc_defaults() {
        let op: OpDesc = serde_json::from_str(r#"{"op": "conv", "layer": "c"}"#).unwrap();
        assert_eq!(
            op,
            OpDesc::Conv {
                layer: "c".into(),
                stride: 1,
                padding: Padding::Valid
            }
        );
    }
}
