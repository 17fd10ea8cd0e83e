use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::graph::ModelGraph;
use crate::data::{decode_checkpoint, encode_checkpoint};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sibling file holding the architecture descriptor of a checkpoint.
pub fn arch_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("arch")
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes the parameters to `path` and the descriptor next to it.
pub fn save_model(model: &ModelGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write(path, &encode_checkpoint(model.params())?)?;
    write(&arch_path(path), model.describe().as_bytes())
}

/// Rebuilds a model from a descriptor and a parameter map; every parameter
/// must be present with the right shape.
pub fn model_from_parts(descriptor: &str, mut params: BTreeMap<String, Tensor>) -> Result<ModelGraph> {
    let mut model = ModelGraph::from_descriptor(descriptor)?;
    let keys: Vec<String> = model.params().keys().cloned().collect();
    for key in keys {
        let t = params
            .remove(&key)
            .ok_or_else(|| Error::Data(format!("checkpoint lacks parameter `{key}`")))?;
        model.set_param(&key, t)?;
    }
    if let Some(extra) = params.keys().next() {
        return Err(Error::Data(format!("checkpoint has unexpected parameter `{extra}`")));
    }
    Ok(model)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelGraph> {
    let path = path.as_ref();
    let params = decode_checkpoint(&read(path)?)?;
    let arch_file = arch_path(path);
    let descriptor = String::from_utf8(read(&arch_file)?)
        .map_err(|_| Error::Data(format!("{} is not UTF-8", arch_file.display())))?;
    model_from_parts(&descriptor, params)
}
