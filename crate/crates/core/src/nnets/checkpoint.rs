//! Parameter checkpoints.
//!
//! A checkpoint is two files sharing a stem:
//!
//! - `<stem>.bin`: the flat parameter buffer as little-endian `f64`.
//! - `<stem>.json`: a manifest with the format tag, version, parameter
//!   count, a free-form model description and the tensor layout (name,
//!   shape and offset of each tensor in the buffer).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TensorSpec;
use crate::error::{Error, Result};

pub const FORMAT: &str = "msglab-params";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub param_count: usize,
    pub model: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

impl Manifest {
    pub fn new(layout: &[TensorSpec], model: serde_json::Value) -> Self {
        let mut offset = 0;
        let tensors = layout
            .iter()
            .map(|t| {
                let e = TensorEntry { name: t.name.clone(), shape: t.shape.clone(), offset };
                offset += t.len();
                e
            })
            .collect();
        Self { format: FORMAT.into(), version: VERSION, param_count: offset, model, tensors }
    }
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}

/// Writes `<stem>.bin` and `<stem>.json`; returns both paths.
pub fn save(stem: &Path, params: &[f64], layout: &[TensorSpec], model: serde_json::Value) -> Result<[PathBuf; 2]> {
    let manifest = Manifest::new(layout, model);
    if manifest.param_count != params.len() {
        return Err(Error::DimensionMismatch(format!(
            "layout describes {} parameters, buffer has {}",
            manifest.param_count,
            params.len()
        )));
    }
    if let Some(dir) = stem.parent() {
        fs::create_dir_all(dir)?;
    }
    let (bin, json) = paths(stem);
    let bytes: Vec<u8> = params.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(&bin, bytes)?;
    fs::write(&json, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok([bin, json])
}

pub fn load(stem: &Path) -> Result<(Vec<f64>, Manifest)> {
    let (bin, json) = paths(stem);
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(json)?)?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint {} v{}",
            manifest.format, manifest.version
        )));
    }
    let bytes = fs::read(bin)?;
    if bytes.len() != 8 * manifest.param_count {
        return Err(Error::Format(format!(
            "expected {} bytes of parameters, found {}",
            8 * manifest.param_count,
            bytes.len()
        )));
    }
    let params = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((params, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnets::{Mlp, MlpSpec, Model};

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mlp = Mlp::new(MlpSpec { hidden_dims: vec![3], ..MlpSpec::linear(2, 1) }).unwrap();
        let p = mlp.init_params(&mut crate::rng::stream(0, 0));
        let stem = dir.path().join("ck/q");
        save(&stem, &p, &mlp.layout(), serde_json::to_value(mlp.spec()).unwrap()).unwrap();
        let (q, m) = load(&stem).unwrap();
        assert_eq!(p, q);
        assert_eq!(m.param_count, 13);
        assert_eq!(m.tensors[1].name, "layer0.bias");
        assert_eq!(m.tensors[1].offset, 6);
        let spec: MlpSpec = serde_json::from_value(m.model).unwrap();
        assert_eq!(&spec, mlp.spec());
    }

    #[test]
    fn length_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let layout = [TensorSpec::new("w", &[2, 2])];
        assert!(save(&dir.path().join("x"), &[1.0; 3], &layout, serde_json::Value::Null).is_err());
        save(&dir.path().join("x"), &[1.0; 4], &layout, serde_json::Value::Null).unwrap();
        fs::write(dir.path().join("x.bin"), [0u8; 12]).unwrap();
        assert!(matches!(load(&dir.path().join("x")), Err(Error::Format(_))));
    }
}
