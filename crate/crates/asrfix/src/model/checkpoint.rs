//! Versioned model checkpoints.
//!
//! Layout: an 8-byte magic, a little-endian u32 format version, a
//! length-prefixed JSON header (config echo, vocabulary, opaque training
//! state, and an index of blob names and shapes), then the blobs as
//! little-endian f32 in index order: first the model parameters, then any
//! extra matrices the caller wants carried along (optimizer moments, for
//! example). Weights are stored as f32 regardless of the in-memory scalar
//! type, so an f32 training run survives a save/load round trip bit for
//! bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::scalar::Real;
use super::vocab::Vocab;
use super::{CorrectionModel, ModelConfig, ModelError};

/// Named matrices stored alongside the model parameters.
pub type BlobSet<T> = Vec<(String, Array2<T>)>;

const MAGIC: &[u8; 8] = b"ASRCKPT1";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint header error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint config mismatch at field `{field}`: saved {saved}, expected {expected}")]
    ConfigMismatch {
        field: String,
        saved: String,
        expected: String,
    },
    #[error("invalid model in checkpoint: {0}")]
    Model(#[from] ModelError),
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vocab,
    seed: u64,
    train_state: serde_json::Value,
    params: Vec<ParamEntry>,
    #[serde(default)]
    extra: Vec<ParamEntry>,
}

fn push_blob<T: Real>(blobs: &mut Vec<u8>, value: &Array2<T>) {
    for &v in value.iter() {
        blobs.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
    }
}

/// Writes the model, an opaque training-state document, and any extra
/// matrices (optimizer state and the like) to `path`.
pub fn save<T: Real>(
    path: &Path,
    model: &mut CorrectionModel<T>,
    train_state: &serde_json::Value,
    extra: &BlobSet<T>,
) -> Result<(), CheckpointError> {
    let mut entries = Vec::new();
    let mut blobs: Vec<u8> = Vec::new();
    model.visit_params(&mut |p| {
        entries.push(ParamEntry {
            name: p.name.clone(),
            rows: p.value.nrows(),
            cols: p.value.ncols(),
        });
        push_blob(&mut blobs, &p.value);
    });
    let mut extra_entries = Vec::new();
    for (name, value) in extra {
        extra_entries.push(ParamEntry {
            name: name.clone(),
            rows: value.nrows(),
            cols: value.ncols(),
        });
        push_blob(&mut blobs, value);
    }
    let header = Header {
        config: model.config.clone(),
        vocab: model.vocab.clone(),
        seed: model.seed,
        train_state: train_state.clone(),
        params: entries,
        extra: extra_entries,
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    w.write_all(&blobs)?;
    w.flush()?;
    Ok(())
}

/// A checkpoint read back into memory.
pub struct Loaded<T> {
    pub model: CorrectionModel<T>,
    pub train_state: serde_json::Value,
    pub extra: BlobSet<T>,
}

/// Reads a checkpoint back into a model plus its sidecar data.
pub fn load<T: Real>(path: &Path) -> Result<Loaded<T>, CheckpointError> {
    load_impl(path, None)
}

/// Like [`load`], but first verifies the stored config against `expected`,
/// reporting the first mismatched field by name.
pub fn load_expecting<T: Real>(
    path: &Path,
    expected: &ModelConfig,
) -> Result<Loaded<T>, CheckpointError> {
    load_impl(path, Some(expected))
}

fn load_impl<T: Real>(
    path: &Path,
    expected: Option<&ModelConfig>,
) -> Result<Loaded<T>, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    let header_len = u64::from_le_bytes(u64buf) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let mut header: Header = serde_json::from_slice(&header_bytes)?;
    header.vocab.rebuild_index();

    if let Some(exp) = expected {
        if let Some((field, saved, expected)) = first_config_mismatch(&header.config, exp) {
            return Err(CheckpointError::ConfigMismatch {
                field: field.to_owned(),
                saved,
                expected,
            });
        }
    }

    let mut model: CorrectionModel<T> =
        CorrectionModel::new(header.config, header.vocab, header.seed)?;
    let mut entries = header.params.into_iter();
    let mut failure: Option<CheckpointError> = None;
    model.visit_params(&mut |p| {
        if failure.is_some() {
            return;
        }
        let entry = match entries.next() {
            Some(e) => e,
            None => {
                failure = Some(CheckpointError::Corrupt(format!(
                    "parameter index ended before `{}`",
                    p.name
                )));
                return;
            }
        };
        if entry.name != p.name || entry.rows != p.value.nrows() || entry.cols != p.value.ncols() {
            failure = Some(CheckpointError::Corrupt(format!(
                "parameter `{}` ({}x{}) does not match stored `{}` ({}x{})",
                p.name,
                p.value.nrows(),
                p.value.ncols(),
                entry.name,
                entry.rows,
                entry.cols
            )));
            return;
        }
        if let Err(e) = read_blob(&mut r, &mut p.value) {
            failure = Some(e);
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if let Some(extra) = entries.next() {
        return Err(CheckpointError::Corrupt(format!(
            "stored parameter `{}` has no slot in this architecture",
            extra.name
        )));
    }
    let mut extra = BlobSet::with_capacity(header.extra.len());
    for entry in header.extra {
        let mut value = Array2::zeros((entry.rows, entry.cols));
        read_blob(&mut r, &mut value)?;
        extra.push((entry.name, value));
    }
    Ok(Loaded {
        model,
        train_state: header.train_state,
        extra,
    })
}

fn read_blob<T: Real>(
    r: &mut impl Read,
    value: &mut Array2<T>,
) -> Result<(), CheckpointError> {
    let mut bytes = vec![0u8; value.len() * 4];
    r.read_exact(&mut bytes)?;
    for (v, chunk) in value.iter_mut().zip(bytes.chunks_exact(4)) {
        let raw = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        *v = T::from_f64(raw as f64);
    }
    Ok(())
}

/// Compares configs field by field in declaration order; returns the first
/// differing field as `(name, saved, expected)`.
fn first_config_mismatch(
    saved: &ModelConfig,
    expected: &ModelConfig,
) -> Option<(&'static str, String, String)> {
    macro_rules! check {
        ($field:ident) => {
            if saved.$field != expected.$field {
                return Some((
                    stringify!($field),
                    format!("{:?}", saved.$field),
                    format!("{:?}", expected.$field),
                ));
            }
        };
    }
    check!(d_model);
    check!(n_heads);
    check!(ffn_mult);
    check!(n_text_layers);
    check!(n_acoustic_layers);
    check!(n_decoder_layers);
    check!(feature_width);
    check!(conv_channels);
    check!(max_src_len);
    check!(max_tgt_len);
    check!(tie_output);
    check!(use_text);
    check!(use_context);
    check!(use_acoustic);
    None
}

/// SHA-256 over the f32 little-endian bytes of every parameter whose name
/// starts with `prefix`, in visiting order. Used to prove sub-networks
/// stayed bitwise frozen across a training phase.
pub fn digest_params<T: Real>(model: &mut CorrectionModel<T>, prefix: &str) -> String {
    let mut hasher = Sha256::new();
    model.visit_params(&mut |p| {
        if p.name.starts_with(prefix) {
            hasher.update(p.name.as_bytes());
            for &v in p.value.iter() {
                hasher.update((v.to_f64() as f32).to_le_bytes());
            }
        }
    });
    format!("{:x}", hasher.finalize())
}
