//! Parameter checkpoints: a directory holding `manifest.txt` and one `.dwt`
//! tensor per parameter. The manifest lists each parameter's name and shape
//! so loading into a different architecture fails before any value is read.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::container::{read_tensor, scalar_data, write_tensor, DwTensor};
use super::parse_key_values;
use crate::tensor_nn::ParamTensor;
use crate::{Error, Result, Scalar};

const MANIFEST: &str = "manifest.txt";

fn shape_text(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

/// Writes `params` plus free-form `meta` entries.
pub fn save_params<T: Scalar>(dir: impl AsRef<Path>, params: &[&ParamTensor<T>], meta: &[(&str, String)]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = format!("count={}\ndtype={}\n", params.len(), T::DTYPE.name());
    for (k, v) in meta {
        manifest.push_str(&format!("meta.{k}={v}\n"));
    }
    for (i, p) in params.iter().enumerate() {
        manifest.push_str(&format!("param.{i:04}={} {}\n", p.name, shape_text(&p.shape)));
        let t = DwTensor {
            shape: p.shape.clone(),
            data: scalar_data(&p.values),
        };
        write_tensor(dir.join(format!("param_{i:04}.dwt")), &t)?;
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

/// Loads values into `params`, which must match the checkpoint's names and
/// shapes one for one. Returns the `meta` entries.
pub fn load_params<T: Scalar>(dir: impl AsRef<Path>, params: &mut [&mut ParamTensor<T>]) -> Result<BTreeMap<String, String>> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let kv = parse_key_values(&text).map_err(|source| Error::Format {
        path: path.clone(),
        source,
    })?;
    let count: usize = kv
        .get("count")
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| Error::CheckpointMismatch("manifest has no parameter count".into()))?;
    if count != params.len() {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint has {count} parameter tensors, model has {}",
            params.len()
        )));
    }
    for (i, p) in params.iter_mut().enumerate() {
        let expected = format!("{} {}", p.name, shape_text(&p.shape));
        let found = kv.get(&format!("param.{i:04}")).map(String::as_str).unwrap_or("<missing>");
        if found != expected {
            return Err(Error::CheckpointMismatch(format!(
                "parameter {i}: checkpoint has `{found}`, model expects `{expected}`"
            )));
        }
        let file = dir.join(format!("param_{i:04}.dwt"));
        let t = read_tensor(&file)?;
        if t.shape != p.shape {
            return Err(Error::CheckpointMismatch(format!("{}: tensor shape {:?}", file.display(), t.shape)));
        }
        let values = t.scalar_values::<T>().map_err(|source| Error::Format { path: file, source })?;
        p.values = values;
    }
    Ok(kv
        .into_iter()
        .filter_map(|(k, v)| k.strip_prefix("meta.").map(|k| (k.to_string(), v)))
        .collect())
}
