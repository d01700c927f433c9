//! Checkpoint container: a u64 little-endian manifest length, a JSON
//! manifest (config + ordered tensor names and shapes), then every tensor's
//! data as little-endian f32 in manifest order. The same container stores
//! model weights and optimizer moments, distinguished by `kind`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::{param_specs, ParameterStore};
use super::ModelError;
use crate::autodiff::{Scalar, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<ModelConfig>,
    tensors: Vec<TensorMeta>,
    #[serde(default)]
    extra: serde_json::Value,
}

fn ck_err(path: &Path, msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> ModelError {
    ModelError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Write tensors in the given order under `kind`.
pub fn save_bag<T: Scalar>(
    path: &Path,
    kind: &str,
    config: Option<&ModelConfig>,
    items: &[(&str, &Tensor<T>)],
    extra: serde_json::Value,
) -> Result<(), ModelError> {
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        kind: kind.to_string(),
        config: config.cloned(),
        tensors: items
            .iter()
            .map(|(name, t)| TensorMeta {
                name: (*name).to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        extra,
    };
    let manifest_json =
        serde_json::to_vec(&manifest).map_err(|e| ck_err(path, format!("manifest: {e}")))?;
    let mut f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(&(manifest_json.len() as u64).to_le_bytes())
        .map_err(|e| io_err(path, e))?;
    f.write_all(&manifest_json).map_err(|e| io_err(path, e))?;
    let mut buf = Vec::new();
    for (_, t) in items {
        buf.clear();
        buf.reserve(t.numel() * 4);
        for &v in t.data() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        f.write_all(&buf).map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

/// Read a container back; tensors come out in manifest order.
#[allow(clippy::type_complexity)]
pub fn load_bag<T: Scalar>(
    path: &Path,
) -> Result<(String, Option<ModelConfig>, Vec<(String, Tensor<T>)>, serde_json::Value), ModelError>
{
    let mut f = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut len_bytes = [0u8; 8];
    f.read_exact(&mut len_bytes)
        .map_err(|_| ck_err(path, "truncated: missing manifest length"))?;
    let manifest_len = u64::from_le_bytes(len_bytes) as usize;
    if manifest_len > 1 << 30 {
        return Err(ck_err(path, format!("absurd manifest length {manifest_len}")));
    }
    let mut manifest_json = vec![0u8; manifest_len];
    f.read_exact(&mut manifest_json)
        .map_err(|_| ck_err(path, "truncated: manifest shorter than declared"))?;
    let manifest: Manifest = serde_json::from_slice(&manifest_json)
        .map_err(|e| ck_err(path, format!("manifest: {e}")))?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(ck_err(
            path,
            format!(
                "version {} unsupported (expected {CHECKPOINT_VERSION})",
                manifest.version
            ),
        ));
    }
    let total: usize = manifest
        .tensors
        .iter()
        .map(|m| m.shape.iter().product::<usize>())
        .sum();
    let mut blob = Vec::new();
    f.read_to_end(&mut blob).map_err(|e| io_err(path, e))?;
    if blob.len() != total * 4 {
        return Err(ck_err(
            path,
            format!("data blob is {} bytes, expected {}", blob.len(), total * 4),
        ));
    }
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    let mut off = 0;
    for meta in &manifest.tensors {
        let numel: usize = meta.shape.iter().product();
        let data: Vec<T> = blob[off..off + numel * 4]
            .chunks_exact(4)
            .map(|c| T::from_f64(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        off += numel * 4;
        let t = Tensor::new(meta.shape.clone(), data)
            .map_err(|e| ck_err(path, format!("tensor {}: {e}", meta.name)))?;
        tensors.push((meta.name.clone(), t));
    }
    Ok((manifest.kind, manifest.config, tensors, manifest.extra))
}

/// Save model weights with their config; tensor order follows `param_specs`.
pub fn save_model<T: Scalar>(
    path: &Path,
    cfg: &ModelConfig,
    store: &ParameterStore<T>,
    extra: serde_json::Value,
) -> Result<(), ModelError> {
    let specs = param_specs(cfg);
    let mut items = Vec::with_capacity(specs.len());
    for spec in &specs {
        items.push((spec.name.as_str(), store.get(&spec.name)?));
    }
    save_bag(path, "model", Some(cfg), &items, extra)
}

/// Load model weights, checking the parameter list matches the stored config
/// exactly (names, order and shapes).
pub fn load_model<T: Scalar>(
    path: &Path,
) -> Result<(ModelConfig, ParameterStore<T>, serde_json::Value), ModelError> {
    let (kind, config, tensors, extra) = load_bag::<T>(path)?;
    if kind != "model" {
        return Err(ck_err(path, format!("kind {kind:?}, expected \"model\"")));
    }
    let cfg = config.ok_or_else(|| ck_err(path, "missing model config"))?;
    cfg.validate()?;
    let specs = param_specs(&cfg);
    if specs.len() != tensors.len() {
        return Err(ck_err(
            path,
            format!("{} tensors, config expects {}", tensors.len(), specs.len()),
        ));
    }
    let mut map = std::collections::BTreeMap::new();
    for (spec, (name, tensor)) in specs.iter().zip(tensors) {
        if spec.name != name {
            return Err(ck_err(
                path,
                format!("tensor {name:?} where {:?} expected", spec.name),
            ));
        }
        if spec.shape != tensor.shape() {
            return Err(ck_err(
                path,
                format!(
                    "tensor {name:?} has shape {:?}, config expects {:?}",
                    tensor.shape(),
                    spec.shape
                ),
            ));
        }
        map.insert(name, tensor);
    }
    Ok((cfg, ParameterStore::from_map(map), extra))
}

#[cfg(test)]
mod tests {
    use super::super::params::build_model;
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            model_dim: 8,
            pivot_dim: 4,
            n_heads: 2,
            ffn_dim: 16,
            n_shared_enc: 2,
            n_shared_dec: 0,
            vocab_size: 10,
            ..ModelConfig::desk(10)
        }
    }

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("ckpt-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn model_round_trip_is_exact_for_f32() {
        let c = cfg();
        let store = build_model::<f32>(&c, 9).unwrap();
        let path = tmp("model.ckpt");
        save_model(&path, &c, &store, serde_json::json!({"step": 17})).unwrap();
        let (c2, store2, extra) = load_model::<f32>(&path).unwrap();
        assert_eq!(c, c2);
        assert_eq!(extra["step"], 17);
        for (name, t) in store.iter() {
            assert_eq!(t, store2.get(name).unwrap(), "mismatch in {name}");
        }
    }

    #[test]
    fn header_layout_is_length_prefixed_json() {
        let c = cfg();
        let store = build_model::<f32>(&c, 9).unwrap();
        let path = tmp("layout.ckpt");
        save_model(&path, &c, &store, serde_json::Value::Null).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let manifest: serde_json::Value = serde_json::from_slice(&bytes[8..8 + len]).unwrap();
        assert_eq!(manifest["version"], 1);
        assert_eq!(manifest["kind"], "model");
        assert_eq!(
            manifest["tensors"][0]["name"],
            param_specs(&c)[0].name.as_str()
        );
        let total: u64 = store.n_scalars();
        assert_eq!(bytes.len(), 8 + len + (total as usize) * 4);
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let c = cfg();
        let store = build_model::<f32>(&c, 9).unwrap();
        let path = tmp("trunc.ckpt");
        save_model(&path, &c, &store, serde_json::Value::Null).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        let err = load_model::<f32>(&path).unwrap_err();
        assert!(err.to_string().contains("blob"), "{err}");
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let path = tmp("bag.ckpt");
        let t = Tensor::<f32>::zeros(vec![2, 2]);
        save_bag(&path, "optimizer", None, &[("m", &t)], serde_json::Value::Null).unwrap();
        let err = load_model::<f32>(&path).unwrap_err();
        assert!(err.to_string().contains("kind"), "{err}");
    }

    #[test]
    fn garbage_file_is_rejected() {
        let path = tmp("garbage.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(load_model::<f32>(&path).is_err());
    }

    #[test]
    fn f64_store_round_trips_through_f32_blob() {
        let c = cfg();
        let store = build_model::<f64>(&c, 9).unwrap();
        let path = tmp("f64.ckpt");
        save_model(&path, &c, &store, serde_json::Value::Null).unwrap();
        let (_, store2, _) = load_model::<f64>(&path).unwrap();
        for (name, t) in store.iter() {
            let t2 = store2.get(name).unwrap();
            for (&a, &b) in t.data().iter().zip(t2.data()) {
                assert!((a - b).abs() <= f64::from(f32::EPSILON) * a.abs().max(1.0));
            }
        }
    }
}
