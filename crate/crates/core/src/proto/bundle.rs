//! Model bundle file: one JSON document holding the whole [`ProtoModel`].

use std::fs;
use std::path::Path;

use super::ProtoModel;
use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

pub fn write_model(path: &Path, model: &ProtoModel) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(model)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_model(path: &Path) -> Result<ProtoModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let model: ProtoModel = serde_json::from_str(&text)?;
    if model.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::InvalidInput(format!(
            "{}: model format version {} (expected {MODEL_FORMAT_VERSION})",
            path.display(),
            model.format_version
        )));
    }
    Ok(model)
}
