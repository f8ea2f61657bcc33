//! Binary model files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic          8 bytes   b"TKREMDL\0"
//! version        u32
//! header_len     u64
//! header         header_len bytes of JSON
//! payload        f64 LE: means, stdevs, then per learner its points
//!                (row-major, bag order) followed by its targets
//! ```
//!
//! Floats travel as raw bits, so a saved and reloaded model predicts
//! bit-identically.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Bag, EnsembleError, EnsembleModel, EnsembleSpec, Learner, Result};
use crate::data::Standardizer;
use crate::knn::{KnnRegressor, NeighborIndex, TuneResult};

pub const MAGIC: [u8; 8] = *b"TKREMDL\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    spec: EnsembleSpec,
    seed: u64,
    feature_names: Vec<String>,
    target_name: String,
    learners: Vec<LearnerHeader>,
    payload_len: u64,
}

#[derive(Serialize, Deserialize)]
struct LearnerHeader {
    bag: Bag,
    n_points: usize,
    tuning: Option<TuneResult>,
}

fn corrupt(msg: impl Into<String>) -> EnsembleError {
    EnsembleError::Corrupt(msg.into())
}

pub fn write_model<W: Write>(model: &EnsembleModel, mut w: W) -> Result<()> {
    let p = model.n_features();
    let mut payload: Vec<f64> = Vec::new();
    payload.extend(&model.standardizer.means);
    payload.extend(&model.standardizer.stdevs);
    let mut learners = Vec::with_capacity(model.learners.len());
    for l in &model.learners {
        let idx = l.regressor.index();
        payload.extend(idx.points());
        payload.extend(l.regressor.targets());
        learners.push(LearnerHeader {
            bag: l.bag.clone(),
            n_points: idx.len(),
            tuning: l.tuning.clone(),
        });
    }
    debug_assert!(payload.len() >= 2 * p);
    let header = Header {
        spec: model.spec.clone(),
        seed: model.seed,
        feature_names: model.feature_names.clone(),
        target_name: model.target_name.clone(),
        learners,
        payload_len: payload.len() as u64,
    };
    let json = serde_json::to_vec(&header).map_err(|e| corrupt(e.to_string()))?;
    w.write_all(&MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for v in payload {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_model(model: &EnsembleModel, path: impl AsRef<Path>) -> Result<()> {
    write_model(model, BufWriter::new(File::create(path)?))
}

fn read_exact_or_corrupt<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => corrupt(format!("truncated {what}")),
        _ => EnsembleError::Io(e),
    })
}

pub fn read_model<R: Read>(mut r: R) -> Result<EnsembleModel> {
    let mut magic = [0u8; 8];
    read_exact_or_corrupt(&mut r, &mut magic, "magic")?;
    if magic != MAGIC {
        return Err(corrupt("not a model file"));
    }
    let mut word = [0u8; 4];
    read_exact_or_corrupt(&mut r, &mut word, "version")?;
    let version = u32::from_le_bytes(word);
    if version != FORMAT_VERSION {
        return Err(EnsembleError::UnsupportedVersion(version));
    }
    let mut len = [0u8; 8];
    read_exact_or_corrupt(&mut r, &mut len, "header length")?;
    let header_len = u64::from_le_bytes(len);
    if header_len > 1 << 32 {
        return Err(corrupt("implausible header length"));
    }
    let mut json = vec![0u8; header_len as usize];
    read_exact_or_corrupt(&mut r, &mut json, "header")?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| corrupt(format!("bad header: {e}")))?;
    header.spec.validate()?;

    let p = header.feature_names.len();
    let expected = 2 * p + header
        .learners
        .iter()
        .map(|l| l.n_points * (l.bag.feature_indices.len() + 1))
        .sum::<usize>();
    if header.payload_len != expected as u64 {
        return Err(corrupt(format!(
            "payload length {} does not match header ({expected})",
            header.payload_len
        )));
    }
    let mut bytes = vec![0u8; expected * 8];
    read_exact_or_corrupt(&mut r, &mut bytes, "payload")?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(corrupt("trailing bytes after payload"));
    }
    let mut values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut take = |n: usize| -> Vec<f64> { values.by_ref().take(n).collect() };

    let standardizer = Standardizer {
        means: take(p),
        stdevs: take(p),
    };
    let mut learners = Vec::with_capacity(header.learners.len());
    for lh in header.learners {
        let dim = lh.bag.feature_indices.len();
        if lh.bag.feature_indices.iter().any(|&j| j >= p) {
            return Err(corrupt("feature index out of range"));
        }
        if lh.n_points != lh.bag.row_indices.len() {
            return Err(corrupt("learner point count disagrees with its bag"));
        }
        let points = take(lh.n_points * dim);
        let targets = take(lh.n_points);
        let index = NeighborIndex::build(points, dim, (0..lh.n_points).collect(), header.spec.index_kind)?;
        let regressor = KnnRegressor::new(index, targets, lh.bag.k)?;
        learners.push(Learner {
            bag: lh.bag,
            regressor,
            tuning: lh.tuning,
        });
    }
    Ok(EnsembleModel {
        spec: header.spec,
        seed: header.seed,
        standardizer,
        feature_names: header.feature_names,
        target_name: header.target_name,
        learners,
    })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<EnsembleModel> {
    read_model(BufReader::new(File::open(path)?))
}
