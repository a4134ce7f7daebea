//! Named-tensor archives in the safetensors format.
//!
//! The archive header is the manifest (name, shape, dtype of every tensor).
//! A single JSON string under the `tracelink` metadata key carries whatever
//! configuration the writer wants to restore later.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use crate::autodiff::{Mat, ParamSet};
use crate::error::{Error, Result};

const META_KEY: &str = "tracelink";

fn ck(e: impl std::fmt::Display) -> Error {
    Error::Checkpoint(e.to_string())
}

/// Writes the tensors of every set, names prefixed with the set's prefix.
pub fn save(path: &Path, sets: &[(&str, &ParamSet)], meta: &str) -> Result<()> {
    let mut bytes: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
    for (prefix, set) in sets {
        for (_, name, m) in set.iter() {
            let raw: Vec<u8> = m.data.iter().flat_map(|x| x.to_le_bytes()).collect();
            bytes.push((format!("{prefix}{name}"), vec![m.rows, m.cols], raw));
        }
    }
    let views = bytes
        .iter()
        .map(|(n, shape, raw)| Ok((n.as_str(), TensorView::new(Dtype::F64, shape.clone(), raw).map_err(ck)?)))
        .collect::<Result<Vec<_>>>()?;
    let info = Some(HashMap::from([(META_KEY.to_string(), meta.to_string())]));
    let out = safetensors::serialize(views, &info).map_err(ck)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub tensors: BTreeMap<String, Mat>,
    pub meta: String,
}

pub fn load(path: &Path) -> Result<Archive> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (_, header) = SafeTensors::read_metadata(&buf).map_err(ck)?;
    let meta = header
        .metadata()
        .as_ref()
        .and_then(|m| m.get(META_KEY).cloned())
        .unwrap_or_default();
    let st = SafeTensors::deserialize(&buf).map_err(ck)?;
    let mut tensors = BTreeMap::new();
    for (name, view) in st.tensors() {
        if view.dtype() != Dtype::F64 {
            return Err(Error::Checkpoint(format!("{name}: expected F64, found {:?}", view.dtype())));
        }
        let (rows, cols) = match view.shape() {
            [r, c] => (*r, *c),
            [n] => (1, *n),
            s => return Err(Error::Checkpoint(format!("{name}: unsupported shape {s:?}"))),
        };
        let data = view
            .data()
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        tensors.insert(name, Mat::from_vec(rows, cols, data));
    }
    Ok(Archive { tensors, meta })
}

impl Archive {
    /// Overwrites every parameter of `set` with the tensor `prefix + name`.
    pub fn restore(&self, prefix: &str, set: &mut ParamSet) -> Result<()> {
        let ids: Vec<_> = set.iter().map(|(id, name, m)| (id, name.to_string(), m.shape())).collect();
        for (id, name, shape) in ids {
            let key = format!("{prefix}{name}");
            let m = self
                .tensors
                .get(&key)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))?;
            if m.shape() != shape {
                return Err(Error::Checkpoint(format!(
                    "{key}: shape {:?} does not match expected {shape:?}",
                    m.shape()
                )));
            }
            *set.get_mut(id) = m.clone();
        }
        Ok(())
    }
}
