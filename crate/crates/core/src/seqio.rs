//! JSON-lines sequence files.
//!
//! Line 1 is a header `{"version":1,"joints":K,"frames":n,"dims":3}` (the
//! writer also records `"count"`; readers accept headers without it). Every
//! following line holds one sequence `{"id":..,"family":..|null,"data":[n][K][3]}`.
//! Numbers are written in shortest round-trip form, so reloading is lossless.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::PoseSequence;
use crate::error::{Error, Result};
use crate::fsutil::{read_to_string, write_atomic};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub version: u32,
    pub joints: usize,
    pub frames: usize,
    pub dims: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    id: &'a str,
    family: Option<&'a str>,
    data: Vec<Vec<[f64; 3]>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordIn {
    id: String,
    family: Option<String>,
    data: Vec<Vec<Vec<f64>>>,
}

fn fmt_err(record: usize, message: impl Into<String>) -> Error {
    Error::Format {
        record,
        message: message.into(),
    }
}

/// Serializes sequences to the line format (without touching disk).
pub fn encode_sequences(seqs: &[PoseSequence]) -> Result<String> {
    let first = seqs
        .first()
        .ok_or_else(|| Error::contract("refusing to write an empty sequence file"))?;
    let (k, n) = (first.joints(), first.frames());
    let header = Header {
        version: FORMAT_VERSION,
        joints: k,
        frames: n,
        dims: 3,
        count: Some(seqs.len()),
    };
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    for (i, s) in seqs.iter().enumerate() {
        if s.joints() != k || s.frames() != n {
            return Err(Error::contract(format!(
                "sequence {} (`{}`) is {}×{}, file is {n}×{k}",
                i + 1,
                s.id,
                s.frames(),
                s.joints()
            )));
        }
        let data = (0..n)
            .map(|f| (0..k).map(|j| s.joint(f, j)).collect())
            .collect();
        let rec = RecordOut {
            id: &s.id,
            family: s.family.as_deref(),
            data,
        };
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    Ok(out)
}

/// Parses the line format. Errors carry the 1-based record number, where the
/// header is record 0.
pub fn decode_sequences(text: &str) -> Result<(Header, Vec<PoseSequence>)> {
    let mut lines = text.lines();
    let head = lines.next().ok_or_else(|| fmt_err(0, "empty file: missing header"))?;
    let header: Header = serde_json::from_str(head).map_err(|e| fmt_err(0, format!("malformed header: {e}")))?;
    if header.version != FORMAT_VERSION {
        return Err(fmt_err(0, format!("unsupported version {}", header.version)));
    }
    if header.dims != 3 {
        return Err(fmt_err(0, format!("dims must be 3, got {}", header.dims)));
    }
    if header.joints == 0 || header.frames == 0 {
        return Err(fmt_err(0, "joints and frames must be positive"));
    }
    let (k, n) = (header.joints, header.frames);
    let mut seqs = Vec::new();
    for (i, line) in lines.enumerate() {
        let rec_no = i + 1;
        if line.trim().is_empty() {
            return Err(fmt_err(rec_no, "blank line where a sequence record was expected"));
        }
        let rec: RecordIn = serde_json::from_str(line).map_err(|e| fmt_err(rec_no, format!("malformed record: {e}")))?;
        if rec.data.len() != n {
            return Err(fmt_err(
                rec_no,
                format!("sequence `{}` has {} frames, header says {n}", rec.id, rec.data.len()),
            ));
        }
        let mut flat = Vec::with_capacity(n * k * 3);
        for (f, frame) in rec.data.iter().enumerate() {
            if frame.len() != k {
                return Err(fmt_err(
                    rec_no,
                    format!("sequence `{}` frame {f} has {} joints, header says {k}", rec.id, frame.len()),
                ));
            }
            for (j, p) in frame.iter().enumerate() {
                if p.len() != 3 {
                    return Err(fmt_err(
                        rec_no,
                        format!("sequence `{}` frame {f} joint {j} has {} coordinates", rec.id, p.len()),
                    ));
                }
                flat.extend_from_slice(p);
            }
        }
        let seq = PoseSequence::new(rec.id, rec.family, n, k, flat).map_err(|e| fmt_err(rec_no, e.to_string()))?;
        seqs.push(seq);
    }
    if let Some(c) = header.count {
        if c != seqs.len() {
            return Err(fmt_err(
                seqs.len() + 1,
                format!("header announces {c} sequences but the file holds {} (truncated?)", seqs.len()),
            ));
        }
    }
    Ok((header, seqs))
}

pub fn save_sequences(path: &Path, seqs: &[PoseSequence]) -> Result<()> {
    write_atomic(path, encode_sequences(seqs)?.as_bytes())
}

pub fn load_sequences(path: &Path) -> Result<Vec<PoseSequence>> {
    Ok(decode_sequences(&read_to_string(path)?)?.1)
}
