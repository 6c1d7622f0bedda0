//! Binary model container.
//!
//! Layout: the 8-byte magic `XAIDCKPT`, a little-endian `u32` version, a
//! little-endian `u64` header length followed by that many bytes of header
//! JSON, then every parameter tensor in declaration order as row-major
//! little-endian `f64`.

use super::config::ModelConfig;
use super::net::Model;
use crate::data::Vocab;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"XAIDCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    id: String,
    seed: u64,
    trained: bool,
    config: ModelConfig,
    params: Vec<(String, Vec<usize>)>,
}

pub fn write_checkpoint<W: Write>(model: &Model, mut w: W) -> Result<()> {
    let header = Header {
        id: model.id.clone(),
        seed: model.seed,
        trained: model.trained,
        config: model.config.clone(),
        params: model
            .params
            .iter()
            .map(|p| (p.name.clone(), p.value.shape().to_vec()))
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for p in &model.params {
        for v in p.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Model> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    let mut model = Model::init_random(&header.config, header.seed)?;
    if model.params.len() != header.params.len() {
        return Err(Error::Checkpoint("parameter count does not match config".into()));
    }
    for (p, (name, shape)) in model.params.iter_mut().zip(&header.params) {
        if &p.name != name || p.value.shape() != shape.as_slice() {
            return Err(Error::Checkpoint(format!("parameter {name} does not match config")));
        }
        let mut buf = [0u8; 8];
        for v in p.value.data_mut() {
            r.read_exact(&mut buf)
                .map_err(|_| Error::Checkpoint(format!("truncated in {name}")))?;
            *v = f64::from_le_bytes(buf);
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    model.id = header.id;
    model.trained = header.trained;
    Ok(model)
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_checkpoint(model, std::io::BufWriter::new(file))
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    let file = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(file))
}

/// Overwrites embedding rows from a whitespace-separated word-vector text
/// file (`token v1 v2 ...` per line). Returns how many vocabulary entries
/// were found.
pub fn load_word_vectors(model: &mut Model, vocab: &Vocab, path: impl AsRef<Path>) -> Result<usize> {
    let text = std::fs::read_to_string(path)?;
    let d = model.config.embed_dim;
    let table = &mut model.params[0].value;
    let mut found = 0;
    for (i, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values = parts
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
        if values.len() != d {
            // Header lines of the `count dim` form are skipped silently.
            if i == 0 && values.len() == 1 {
                continue;
            }
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected {d} values, found {}", values.len()),
            });
        }
        if let Some(id) = vocab.get(token) {
            if id >= crate::data::RESERVED.len() && id < table.rows() {
                table.row_mut(id).copy_from_slice(&values);
                found += 1;
            }
        }
    }
    Ok(found)
}
