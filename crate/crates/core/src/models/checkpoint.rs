use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::Params;
use super::trained::{Net, TrainRecord, TrainedModel};
use crate::autodiff::Tensor;
use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"SPCK";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    net: Net,
    vocab: Vec<String>,
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    history: Vec<TrainRecord>,
}

/// Layout: magic, little-endian u32 version, u64 header length, JSON header,
/// then every parameter value as a little-endian f64 in header order.
pub fn to_bytes<S: Scalar>(model: &TrainedModel<S>) -> Result<Vec<u8>> {
    let header = Header {
        config: model.config.clone(),
        net: model.net.clone(),
        vocab: model.vocab.tokens().to_vec(),
        names: model.params.names().to_vec(),
        shapes: model
            .params
            .tensors()
            .iter()
            .map(|t| t.shape().to_vec())
            .collect(),
        history: model.history.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + 8 * model.params.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in model.params.tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    Ok(out)
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn from_bytes<S: Scalar>(bytes: &[u8]) -> Result<TrainedModel<S>> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(16..16 + len)
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body)?;
    header.config.validate()?;
    if header.names.len() != header.shapes.len() {
        return Err(bad("names and shapes disagree"));
    }
    let mut values = bytes[16 + len..].chunks_exact(8);
    let mut tensors = Vec::with_capacity(header.shapes.len());
    for shape in &header.shapes {
        let n: usize = shape.iter().product();
        let data: Vec<S> = values
            .by_ref()
            .take(n)
            .map(|c| S::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        if data.len() != n {
            return Err(bad("truncated parameter data"));
        }
        tensors.push(Tensor::new(shape.clone(), data)?);
    }
    if values.next().is_some() || !values.remainder().is_empty() {
        return Err(bad("trailing bytes after parameters"));
    }
    let mut vocab = Vocab::new();
    for (i, tok) in header.vocab.iter().enumerate() {
        if i < vocab.len() {
            if vocab.tokens()[i] != *tok {
                return Err(bad("reserved tokens do not match"));
            }
        } else {
            vocab.insert(tok);
        }
    }
    if vocab.len() != header.vocab.len() {
        return Err(bad("duplicate vocabulary entries"));
    }
    if tensors.first().map(|t| t.rows()) != Some(vocab.len()) {
        return Err(bad("embedding table does not match vocabulary"));
    }
    Ok(TrainedModel::from_parts(
        header.config,
        vocab,
        Params::from_parts(header.names, tensors),
        header.net,
        header.history,
    ))
}

pub fn save_checkpoint<S: Scalar>(model: &TrainedModel<S>, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<TrainedModel<S>> {
    from_bytes(&fs::read(path)?)
}
