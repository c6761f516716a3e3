use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{feature_dim, AnnotatedCorpus, AnnotatedSample, Description, FeatureSequence, Split};
use crate::error::{Error, Result};

pub const INDEX_FILE: &str = "index.jsonl";
pub const MOTION_MAGIC: &[u8; 4] = b"CARM";
pub const MOTION_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexRecord {
    id: String,
    split: Split,
    descriptions: Vec<Description>,
    motion_blob: String,
    frames: usize,
    joint_count: usize,
    fps: u32,
    #[serde(default)]
    action_ids: Vec<usize>,
}

/// `CARM`, u32 version, u32 frames, u32 dim, then row-major little-endian f32.
pub fn write_motion_blob(features: &Array2<f32>) -> Vec<u8> {
    let (f, d) = features.dim();
    let mut out = Vec::with_capacity(16 + 4 * f * d);
    out.extend_from_slice(MOTION_MAGIC);
    out.extend_from_slice(&MOTION_VERSION.to_le_bytes());
    out.extend_from_slice(&(f as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for v in features.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_motion_blob(bytes: &[u8], id: &str) -> Result<Array2<f32>> {
    let bad = |reason: String| Error::Sample {
        id: id.to_string(),
        reason,
    };
    if bytes.len() < 16 {
        return Err(bad(format!("motion blob truncated ({} bytes, header needs 16)", bytes.len())));
    }
    if &bytes[..4] != MOTION_MAGIC {
        return Err(bad("malformed header: bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != MOTION_VERSION {
        return Err(Error::Version {
            found: version,
            expected: MOTION_VERSION,
        });
    }
    let (f, d) = (word(8) as usize, word(12) as usize);
    let expected = 16 + 4 * f * d;
    if bytes.len() != expected {
        return Err(bad(format!(
            "motion blob truncated or oversized: {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    let data: Vec<f32> = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Array2::from_shape_vec((f, d), data).map_err(|e| bad(e.to_string()))
}

fn blob_name(id: &str) -> String {
    format!("motions/{id}.carm")
}

pub fn save_corpus(corpus: &AnnotatedCorpus, dir: &Path) -> Result<()> {
    let motions = dir.join("motions");
    fs::create_dir_all(&motions).map_err(|e| Error::io(&motions, e))?;
    let index_path = dir.join(INDEX_FILE);
    let mut index = Vec::new();
    for s in &corpus.samples {
        let rel = blob_name(&s.id);
        let path = dir.join(&rel);
        fs::write(&path, write_motion_blob(&s.motion.features)).map_err(|e| Error::io(&path, e))?;
        let rec = IndexRecord {
            id: s.id.clone(),
            split: s.split,
            descriptions: s.descriptions.clone(),
            motion_blob: rel,
            frames: s.motion.frames(),
            joint_count: s.motion.joint_count,
            fps: s.motion.fps,
            action_ids: s.action_ids.clone(),
        };
        serde_json::to_writer(&mut index, &rec)?;
        index.push(b'\n');
    }
    let mut f = fs::File::create(&index_path).map_err(|e| Error::io(&index_path, e))?;
    f.write_all(&index).map_err(|e| Error::io(&index_path, e))?;
    Ok(())
}

pub fn load_corpus(dir: &Path) -> Result<AnnotatedCorpus> {
    let index_path = dir.join(INDEX_FILE);
    let file = fs::File::open(&index_path).map_err(|e| Error::io(&index_path, e))?;
    let mut samples = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&index_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: IndexRecord = serde_json::from_str(&line).map_err(|e| Error::Format {
            path: index_path.clone(),
            reason: format!("line {}: {e}", lineno + 1),
        })?;
        let blob_path: PathBuf = dir.join(&rec.motion_blob);
        if !blob_path.is_file() {
            return Err(Error::MissingBlob {
                id: rec.id,
                path: blob_path,
            });
        }
        let bytes = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        let features = read_motion_blob(&bytes, &rec.id)?;
        if features.nrows() != rec.frames || features.ncols() != feature_dim(rec.joint_count.max(2)) {
            return Err(Error::Sample {
                id: rec.id,
                reason: format!(
                    "dimension mismatch: index says {} x {}, blob holds {} x {}",
                    rec.frames,
                    feature_dim(rec.joint_count.max(2)),
                    features.nrows(),
                    features.ncols()
                ),
            });
        }
        if rec.descriptions.is_empty() || rec.descriptions.iter().any(|d| d.events.is_empty()) {
            return Err(Error::Sample {
                id: rec.id,
                reason: "every sample needs a description with at least one event".into(),
            });
        }
        samples.push(AnnotatedSample {
            id: rec.id,
            motion: FeatureSequence {
                features,
                joint_count: rec.joint_count,
                fps: rec.fps,
            },
            descriptions: rec.descriptions,
            split: rec.split,
            action_ids: rec.action_ids,
        });
    }
    Ok(AnnotatedCorpus { samples })
}
