//! On-disk formats: pair files and transcript files as JSON Lines, acoustic
//! features as an indexed binary container.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{CorrectionPair, DatasetError, FeatureSequence, FeatureStore};

/// One line of a hypothesis or reference transcript file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptLine {
    pub utt_id: String,
    pub hypothesis: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
    /// Dialogue context joined into one string, when the producer had it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
}

fn format_error(path: &Path, line: usize, message: impl ToString) -> DatasetError {
    DatasetError::FormatError {
        path: path.display().to_string(),
        line,
        message: message.to_string(),
    }
}

/// Writes pairs as JSON Lines, one object per pair, sorted by utterance id.
pub fn save_pairs(path: &Path, pairs: &[CorrectionPair]) -> Result<(), DatasetError> {
    let mut sorted: Vec<&CorrectionPair> = pairs.iter().collect();
    sorted.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
    let mut out = BufWriter::new(File::create(path)?);
    for pair in sorted {
        serde_json::to_writer(&mut out, pair).map_err(|e| format_error(path, 0, e))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Streaming read of a pair file; malformed lines report their line number.
pub fn load_pairs(path: &Path) -> Result<Vec<CorrectionPair>, DatasetError> {
    let reader = BufReader::new(File::open(path)?);
    let mut pairs = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: CorrectionPair =
            serde_json::from_str(&line).map_err(|e| format_error(path, idx + 1, e))?;
        pairs.push(pair);
    }
    Ok(pairs)
}

pub fn write_transcript_lines(path: &Path, lines: &[TranscriptLine]) -> Result<(), DatasetError> {
    let mut sorted: Vec<&TranscriptLine> = lines.iter().collect();
    sorted.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
    let mut out = BufWriter::new(File::create(path)?);
    for line in sorted {
        serde_json::to_writer(&mut out, line).map_err(|e| format_error(path, 0, e))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_transcript_lines(path: &Path) -> Result<Vec<TranscriptLine>, DatasetError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TranscriptLine =
            serde_json::from_str(&line).map_err(|e| format_error(path, idx + 1, e))?;
        lines.push(parsed);
    }
    Ok(lines)
}

const FEATURES_MAGIC: &[u8; 5] = b"CFRG1";

/// Binary feature container: magic, entry count, an index of
/// `(utt_id, offset, rows, cols)` records, then raw little-endian `f32`
/// frame data. Round-trips bit-exactly.
pub fn save_features(path: &Path, store: &FeatureStore) -> Result<(), DatasetError> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(FEATURES_MAGIC)?;
    out.write_all(&(store.len() as u32).to_le_bytes())?;

    // Index size is fixed once ids are known, so data offsets can be
    // computed up front. BTreeMap iteration gives sorted ids.
    let index_len: usize = store
        .keys()
        .map(|id| 2 + id.len() + 8 + 4 + 4)
        .sum();
    let mut offset = (FEATURES_MAGIC.len() + 4 + index_len) as u64;
    for (id, feats) in store {
        out.write_all(&(id.len() as u16).to_le_bytes())?;
        out.write_all(id.as_bytes())?;
        out.write_all(&offset.to_le_bytes())?;
        out.write_all(&(feats.frames.nrows() as u32).to_le_bytes())?;
        out.write_all(&(feats.frames.ncols() as u32).to_le_bytes())?;
        offset += (feats.frames.len() * 4) as u64;
    }
    for feats in store.values() {
        for &x in feats.frames.iter() {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load_features(path: &Path) -> Result<FeatureStore, DatasetError> {
    let mut file = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 5];
    file.read_exact(&mut magic)
        .map_err(|_| format_error(path, 0, "file too short for magic"))?;
    if &magic != FEATURES_MAGIC {
        return Err(format_error(path, 0, "bad magic, not a feature container"));
    }
    let n = read_u32(&mut file, path)? as usize;
    let mut index = Vec::with_capacity(n);
    for _ in 0..n {
        let id_len = read_u16(&mut file, path)? as usize;
        let mut id = vec![0u8; id_len];
        file.read_exact(&mut id)
            .map_err(|_| format_error(path, 0, "truncated index entry"))?;
        let id = String::from_utf8(id).map_err(|e| format_error(path, 0, e))?;
        let offset = read_u64(&mut file, path)?;
        let rows = read_u32(&mut file, path)? as usize;
        let cols = read_u32(&mut file, path)? as usize;
        index.push((id, offset, rows, cols));
    }
    let mut store = FeatureStore::new();
    for (id, offset, rows, cols) in index {
        file.seek(SeekFrom::Start(offset))?;
        let mut raw = vec![0u8; rows * cols * 4];
        file.read_exact(&mut raw)
            .map_err(|_| format_error(path, 0, format!("truncated frame data for '{id}'")))?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let frames = Array2::from_shape_vec((rows, cols), values)
            .map_err(|e| format_error(path, 0, e))?;
        store.insert(id, FeatureSequence { frames });
    }
    Ok(store)
}

fn read_u16(r: &mut impl Read, path: &Path) -> Result<u16, DatasetError> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)
        .map_err(|_| format_error(path, 0, "unexpected end of file"))?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32, DatasetError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| format_error(path, 0, "unexpected end of file"))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read, path: &Path) -> Result<u64, DatasetError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| format_error(path, 0, "unexpected end of file"))?;
    Ok(u64::from_le_bytes(b))
}
