//! Bit-exact parameter checkpoints.
//!
//! A checkpoint is a directory:
//!   * `manifest.txt` — one line per parameter: name, shape, byte offset
//!     and element count into the blob, in set order;
//!   * `params.blob`  — all values as little-endian f64, concatenated;
//!   * `meta.json`    — model configuration, vocabulary dump, seed and the
//!     tuned decision threshold.
//!
//! All files are written to a temporary name and renamed into place.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::model::{param_manifest, param_trainable, HinModel, ModelConfig, VocabDims};
use crate::tensor::{ParamSet, Tensor};
use crate::{HinError, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const BLOB_FILE: &str = "params.blob";
pub const META_FILE: &str = "meta.json";

/// Everything needed to rebuild and apply a model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub seed: u64,
    /// Tuned decision threshold; `None` means "predict nothing" (+∞).
    pub delta: Option<f64>,
}

impl CheckpointMeta {
    pub fn delta_or_inf(&self) -> f64 {
        self.delta.unwrap_or(f64::INFINITY)
    }
}

/// Atomically write `bytes` at `path` (write-then-rename).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let display = path.display().to_string();
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| HinError::io(&display, e))?;
        f.write_all(bytes).map_err(|e| HinError::io(&display, e))?;
        f.sync_all().map_err(|e| HinError::io(&display, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| HinError::io(&display, e))?;
    Ok(())
}

/// Save a parameter set plus metadata into `dir` (created if absent).
pub fn save_checkpoint(dir: &Path, params: &ParamSet, meta: &CheckpointMeta) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HinError::io(dir.display().to_string(), e))?;

    let mut manifest = String::new();
    let mut blob: Vec<u8> = Vec::with_capacity(params.num_elements() * 8);
    for p in params.iter() {
        let shape: Vec<String> = p.tensor.shape.iter().map(|s| s.to_string()).collect();
        manifest.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            p.name,
            shape.join("x"),
            blob.len(),
            p.tensor.len()
        ));
        for v in &p.tensor.data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(&dir.join(MANIFEST_FILE), manifest.as_bytes())?;
    write_atomic(&dir.join(BLOB_FILE), &blob)?;
    let meta_json = serde_json::to_string_pretty(meta)
        .map_err(|e| HinError::Json { path: META_FILE.into(), source: e })?;
    write_atomic(&dir.join(META_FILE), meta_json.as_bytes())?;
    Ok(())
}

fn mismatch(param: impl Into<String>, msg: impl Into<String>) -> HinError {
    HinError::CheckpointMismatch { param: param.into(), msg: msg.into() }
}

/// Load a checkpoint, validating the manifest against the configuration it
/// carries. The first disagreement with the expected parameter layout is a
/// checkpoint-mismatch error naming the parameter.
pub fn load_checkpoint(dir: &Path) -> Result<(HinModel, CheckpointMeta)> {
    let read = |name: &str| -> Result<Vec<u8>> {
        let path = dir.join(name);
        std::fs::read(&path).map_err(|e| HinError::io(path.display().to_string(), e))
    };
    let meta_bytes = read(META_FILE)?;
    let mut meta: CheckpointMeta = serde_json::from_slice(&meta_bytes)
        .map_err(|e| HinError::Json { path: dir.join(META_FILE).display().to_string(), source: e })?;
    meta.vocab.rebuild_maps();
    meta.config.validate()?;

    let dims = VocabDims {
        words: meta.vocab.tokens.len(),
        types: meta.vocab.types.len(),
    };
    let expected = param_manifest(&meta.config, &dims);

    let manifest_text = String::from_utf8(read(MANIFEST_FILE)?)
        .map_err(|_| HinError::invalid("checkpoint", "manifest is not utf-8"))?;
    let blob = read(BLOB_FILE)?;

    let mut params = ParamSet::new();
    let mut lines = manifest_text.lines();
    for (name, shape) in &expected {
        let line = lines
            .next()
            .ok_or_else(|| mismatch(name.clone(), "manifest ends early"))?;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(mismatch(name.clone(), format!("malformed manifest line `{line}`")));
        }
        if fields[0] != name {
            return Err(mismatch(
                name.clone(),
                format!("manifest names `{}` where `{name}` was expected", fields[0]),
            ));
        }
        let got_shape: Vec<usize> = fields[1]
            .split('x')
            .map(|s| s.parse::<usize>().map_err(|_| mismatch(name.clone(), "bad shape")))
            .collect::<Result<_>>()?;
        if &got_shape != shape {
            return Err(mismatch(
                name.clone(),
                format!("shape {got_shape:?} does not match expected {shape:?}"),
            ));
        }
        let offset: usize =
            fields[2].parse().map_err(|_| mismatch(name.clone(), "bad offset"))?;
        let len: usize =
            fields[3].parse().map_err(|_| mismatch(name.clone(), "bad length"))?;
        let expect_len: usize = shape.iter().product();
        if len != expect_len {
            return Err(mismatch(
                name.clone(),
                format!("length {len} does not match shape {shape:?}"),
            ));
        }
        let end = offset + len * 8;
        if end > blob.len() {
            return Err(mismatch(name.clone(), "blob ends early"));
        }
        let data: Vec<f64> = blob[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let mut tensor = Tensor::new(shape.clone(), data)?;
        tensor.requires_grad = param_trainable(name, &meta.config);
        params.add(name.clone(), tensor)?;
    }
    if let Some(extra) = lines.next() {
        if !extra.trim().is_empty() {
            let name = extra.split('\t').next().unwrap_or(extra);
            return Err(mismatch(name, "manifest has unexpected trailing parameter"));
        }
    }

    let model = HinModel::from_parts(meta.config.clone(), params)?;
    Ok((model, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, gen_synthetic, SynthSpec};

    fn model_and_vocab() -> (HinModel, Vocabulary) {
        let docs = gen_synthetic(&SynthSpec {
            documents: 2,
            entities_per_doc: 2,
            relation_count: 2,
            sentences_per_doc: 3,
            vocab_size: 30,
            seed: 5,
        })
        .unwrap();
        let (vocab, _) = build_vocab(&docs, None, 1).unwrap();
        let cfg = ModelConfig { relations: 3, ..ModelConfig::tiny() };
        (HinModel::new(cfg, &vocab, 5).unwrap(), vocab)
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let (model, vocab) = model_and_vocab();
        let dir = tempfile::tempdir().unwrap();
        let meta = CheckpointMeta {
            config: model.config.clone(),
            vocab,
            seed: 5,
            delta: Some(0.25),
        };
        save_checkpoint(dir.path(), &model.params, &meta).unwrap();
        let (loaded, meta2) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(meta2.delta, Some(0.25));
        assert_eq!(loaded.params.len(), model.params.len());
        for (a, b) in model.params.iter().zip(loaded.params.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.tensor.shape, b.tensor.shape);
            // Bit-exact: compare the raw representations.
            let bits_a: Vec<u64> = a.tensor.data.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.tensor.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b, "{}", a.name);
            assert_eq!(a.tensor.requires_grad, b.tensor.requires_grad);
        }
        // Saving the loaded model reproduces the files byte for byte.
        let dir2 = tempfile::tempdir().unwrap();
        save_checkpoint(dir2.path(), &loaded.params, &meta2).unwrap();
        for f in [MANIFEST_FILE, BLOB_FILE, META_FILE] {
            assert_eq!(
                std::fs::read(dir.path().join(f)).unwrap(),
                std::fs::read(dir2.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }

    #[test]
    fn infinite_delta_roundtrips_as_none() {
        let (model, vocab) = model_and_vocab();
        let dir = tempfile::tempdir().unwrap();
        let meta =
            CheckpointMeta { config: model.config.clone(), vocab, seed: 5, delta: None };
        save_checkpoint(dir.path(), &model.params, &meta).unwrap();
        let (_, meta2) = load_checkpoint(dir.path()).unwrap();
        assert!(meta2.delta_or_inf().is_infinite());
    }

    #[test]
    fn mismatched_config_names_the_first_bad_parameter() {
        let (model, vocab) = model_and_vocab();
        let dir = tempfile::tempdir().unwrap();
        let mut meta = CheckpointMeta {
            config: model.config.clone(),
            vocab,
            seed: 5,
            delta: None,
        };
        save_checkpoint(dir.path(), &model.params, &meta).unwrap();
        // Rewrite the meta with a different hidden size: shapes disagree.
        meta.config.hidden = 3;
        let meta_json = serde_json::to_string_pretty(&meta).unwrap();
        write_atomic(&dir.path().join(META_FILE), meta_json.as_bytes()).unwrap();
        let err = load_checkpoint(dir.path()).unwrap_err();
        match err {
            HinError::CheckpointMismatch { param, .. } => {
                assert_eq!(param, "lstm_e.fw.w_x");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let (model, vocab) = model_and_vocab();
        let dir = tempfile::tempdir().unwrap();
        let meta = CheckpointMeta {
            config: model.config.clone(),
            vocab,
            seed: 5,
            delta: None,
        };
        save_checkpoint(dir.path(), &model.params, &meta).unwrap();
        let blob = std::fs::read(dir.path().join(BLOB_FILE)).unwrap();
        write_atomic(&dir.path().join(BLOB_FILE), &blob[..blob.len() - 8]).unwrap();
        assert!(matches!(
            load_checkpoint(dir.path()),
            Err(HinError::CheckpointMismatch { .. })
        ));
    }
}
