//! Checkpoint persistence: a JSON manifest plus one raw little-endian
//! `f32` blob file holding every parameter tensor back to back.
//!
//! The manifest records tensor names, shapes and byte ranges; loading
//! validates all of them against the reconstructed architecture, so a
//! truncated blob or a tampered shape fails loudly instead of producing a
//! silently wrong model.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conditioning::{Vocabulary, NULL_TOKEN};
use crate::error::{Error, Result};
use crate::schedule::ScheduleParams;

use super::net::{DenoiserConfig, SceneModel};

pub const CHECKPOINT_VERSION: u32 = 1;

const MANIFEST_FILE: &str = "manifest.json";
const TENSORS_FILE: &str = "tensors.bin";

/// Byte range of one named tensor inside `tensors.bin`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub byte_len: u64,
}

/// Training provenance stored alongside the weights.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, Default)]
pub struct TrainingMeta {
    pub seed: u64,
    pub steps: usize,
    pub final_loss: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    vocab: Vec<String>,
    embed_dim: usize,
    arch: DenoiserConfig,
    schedule: ScheduleParams,
    training: TrainingMeta,
    tensors: Vec<TensorEntry>,
}

/// A loaded (or about to be saved) model with its vocabulary, schedule
/// parameters and training metadata.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: SceneModel<f32>,
    pub vocab: Vocabulary,
    pub schedule: ScheduleParams,
    pub training: TrainingMeta,
}

impl Checkpoint {
    pub fn arch(&self) -> DenoiserConfig {
        *self.model.net.config()
    }
}

/// Writes `manifest.json` and `tensors.bin` into `dir`, creating it if
/// necessary.
pub fn save_checkpoint(ckpt: &Checkpoint, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    // visit_params needs &mut; work on a throwaway clone of the model.
    let mut model = ckpt.model.clone();
    let mut tensors = Vec::new();
    let mut blob: Vec<u8> = Vec::new();
    for (name, mut param) in model.visit_params() {
        let offset = blob.len() as u64;
        let shape = param.shape();
        let slice = param.as_slice_mut();
        for v in slice.iter() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        tensors.push(TensorEntry { name, shape, offset, byte_len: (slice.len() * 4) as u64 });
    }
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        vocab: ckpt.vocab.names().to_vec(),
        embed_dim: ckpt.arch().embed_dim,
        arch: ckpt.arch(),
        schedule: ckpt.schedule,
        training: ckpt.training,
        tensors,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Checkpoint(format!("manifest serialization failed: {e}")))?;
    fs::write(dir.join(MANIFEST_FILE), json)?;
    fs::write(dir.join(TENSORS_FILE), blob)?;
    Ok(())
}

/// Loads and validates a checkpoint directory.
pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest_text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let manifest: Manifest = serde_json::from_str(&manifest_text)
        .map_err(|e| Error::Checkpoint(format!("corrupt manifest: {e}")))?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {} (this build reads version {CHECKPOINT_VERSION})",
            manifest.version
        )));
    }
    if manifest.vocab.first().map(String::as_str) != Some(NULL_TOKEN) {
        return Err(Error::Checkpoint("vocabulary must start with the null token".into()));
    }
    if manifest.embed_dim != manifest.arch.embed_dim {
        return Err(Error::Checkpoint(format!(
            "embed_dim {} disagrees with architecture embed_dim {}",
            manifest.embed_dim, manifest.arch.embed_dim
        )));
    }
    let vocab = Vocabulary::new(manifest.vocab[1..].iter().cloned())?;

    let blob = fs::read(dir.join(TENSORS_FILE))?;
    let mut model = SceneModel::<f32>::zeros(manifest.arch, vocab.len())?;
    let mut params = model.visit_params();
    if params.len() != manifest.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "manifest lists {} tensors, architecture has {}",
            manifest.tensors.len(),
            params.len()
        )));
    }
    for ((name, param), entry) in params.iter_mut().zip(&manifest.tensors) {
        if *name != entry.name {
            return Err(Error::Checkpoint(format!(
                "tensor order mismatch: expected `{name}`, manifest has `{}`",
                entry.name
            )));
        }
        if param.shape() != entry.shape {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` shape {:?} does not match manifest {:?}",
                param.shape(),
                entry.shape
            )));
        }
        let slice = param.as_slice_mut();
        let expected_bytes = slice.len() as u64 * 4;
        if entry.byte_len != expected_bytes {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}`: manifest byte length {} does not match shape ({expected_bytes})",
                entry.byte_len
            )));
        }
        let start = entry.offset as usize;
        let end = start + entry.byte_len as usize;
        if end > blob.len() {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` extends to byte {end} but blob has {} bytes (truncated?)",
                blob.len()
            )));
        }
        for (i, chunk) in blob[start..end].chunks_exact(4).enumerate() {
            slice[i] = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        }
    }
    drop(params);
    let total: u64 = manifest.tensors.iter().map(|t| t.byte_len).sum();
    if total != blob.len() as u64 {
        return Err(Error::Checkpoint(format!(
            "blob has {} bytes, manifest accounts for {total}",
            blob.len()
        )));
    }

    Ok(Checkpoint { model, vocab, schedule: manifest.schedule, training: manifest.training })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toymodel::scene_vocabulary;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_checkpoint() -> Checkpoint {
        let cfg = DenoiserConfig { canvas: 8, in_channels: 3, channels: [2, 3, 4], embed_dim: 6 };
        let vocab = scene_vocabulary();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = SceneModel::init(cfg, vocab.len(), &mut rng).unwrap();
        Checkpoint {
            model,
            vocab,
            schedule: ScheduleParams::default(),
            training: TrainingMeta { seed: 42, steps: 10, final_loss: 0.9 },
        }
    }

    fn params_bits(model: &SceneModel<f32>) -> Vec<(String, Vec<u32>)> {
        let mut m = model.clone();
        m.visit_params()
            .into_iter()
            .map(|(n, mut p)| (n, p.as_slice_mut().iter().map(|v| v.to_bits()).collect()))
            .collect()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = small_checkpoint();
        save_checkpoint(&ckpt, dir.path()).unwrap();
        let loaded = load_checkpoint(dir.path()).unwrap();
        assert_eq!(params_bits(&ckpt.model), params_bits(&loaded.model));
        assert_eq!(loaded.vocab, ckpt.vocab);
        assert_eq!(loaded.schedule, ckpt.schedule);
        assert_eq!(loaded.training.steps, 10);
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&small_checkpoint(), dir.path()).unwrap();
        let path = dir.path().join("tensors.bin");
        let blob = std::fs::read(&path).unwrap();
        std::fs::write(&path, &blob[..blob.len() - 16]).unwrap();
        let err = load_checkpoint(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn unknown_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&small_checkpoint(), dir.path()).unwrap();
        let path = dir.path().join("manifest.json");
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replace("\"version\": 1", "\"version\": 99")).unwrap();
        let err = load_checkpoint(dir.path()).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn tampered_shape_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&small_checkpoint(), dir.path()).unwrap();
        let path = dir.path().join("manifest.json");
        let text = std::fs::read_to_string(&path).unwrap();
        // table.rows is (9, 6); claim (9, 7) instead.
        std::fs::write(&path, text.replacen("[\n        9,\n        6\n      ]", "[\n        9,\n        7\n      ]", 1))
            .unwrap();
        let err = load_checkpoint(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");
    }

    #[test]
    fn corrupt_manifest_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&small_checkpoint(), dir.path()).unwrap();
        std::fs::write(dir.path().join("manifest.json"), "{ not json").unwrap();
        let err = load_checkpoint(dir.path()).unwrap_err();
        assert!(err.to_string().contains("corrupt manifest"), "{err}");
    }
}
