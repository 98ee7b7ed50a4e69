//! Binary checkpoint: magic, format version, a JSON header describing the
//! configuration and array shapes, then every array as little-endian f64.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::autodiff::Tensor;
use crate::dataio::write_atomic;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"QSIGNCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub seed: u64,
    pub step: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    seed: u64,
    step: u64,
    arrays: Vec<ArrayInfo>,
}

#[derive(Serialize, Deserialize)]
struct ArrayInfo {
    name: String,
    rows: usize,
    cols: usize,
}

pub fn save_checkpoint(path: &Path, model: &Model, seed: u64, step: u64) -> Result<()> {
    let header = Header {
        config: model.config().clone(),
        seed,
        step,
        arrays: model
            .params()
            .iter()
            .map(|(name, t)| ArrayInfo {
                name: name.to_string(),
                rows: t.rows(),
                cols: t.cols(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut buf = Vec::with_capacity(16 + json.len() + 8 * model.params().num_scalars());
    buf.extend_from_slice(MAGIC);
    buf.write_u32::<LittleEndian>(CHECKPOINT_VERSION).expect("vec write");
    buf.write_u64::<LittleEndian>(json.len() as u64).expect("vec write");
    buf.extend_from_slice(&json);
    for (_, t) in model.params().iter() {
        for &x in t.data() {
            buf.write_f64::<LittleEndian>(x).expect("vec write");
        }
    }
    write_atomic(path, &buf)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let schema = |message: String| Error::Schema {
        path: path.to_path_buf(),
        message,
    };
    let truncated = |_| schema("file is truncated".into());
    let mut cur = Cursor::new(bytes.as_slice());
    let mut magic = [0u8; 8];
    cur.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(schema("not a checkpoint file".into()));
    }
    let version = cur.read_u32::<LittleEndian>().map_err(truncated)?;
    if version != CHECKPOINT_VERSION {
        return Err(schema(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let len = cur.read_u64::<LittleEndian>().map_err(truncated)? as usize;
    let mut json = vec![0u8; len.min(bytes.len())];
    cur.read_exact(&mut json).map_err(truncated)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| schema(format!("bad header: {e}")))?;
    let mut named = Vec::with_capacity(header.arrays.len());
    for a in header.arrays {
        let n = a.rows * a.cols;
        let mut data = vec![0.0; n];
        cur.read_f64_into::<LittleEndian>(&mut data).map_err(truncated)?;
        named.push((a.name, Tensor::new(a.rows, a.cols, data)?));
    }
    if (cur.position() as usize) != bytes.len() {
        return Err(schema("trailing bytes after the last array".into()));
    }
    let model = Model::from_named(header.config, named).map_err(|e| schema(e.to_string()))?;
    Ok(Checkpoint {
        model,
        seed: header.seed,
        step: header.step,
    })
}
