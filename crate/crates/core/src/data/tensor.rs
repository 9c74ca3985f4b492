//! Raw tensor files: a little-endian payload (`<name>.raw`) in C order plus a
//! JSON sidecar (`<name>.json`) with `{shape, dtype, order, role}`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Float32,
    Float64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::Float32 => 4,
            Dtype::Float64 => 8,
        }
    }
}

impl std::str::FromStr for Dtype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" | "float32" => Ok(Dtype::Float32),
            "f64" | "float64" => Ok(Dtype::Float64),
            other => Err(Error::InvalidArgument(format!("unknown precision '{other}' (expected f32 or f64)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::InvalidArgument(format!("shape {shape:?} needs {n} values, got {}", values.len())));
        }
        Ok(Self { shape, values })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub shape: Vec<usize>,
    pub dtype: Dtype,
    pub order: String,
    pub role: String,
}

/// `(payload, sidecar)` paths for a tensor named by `path`; any extension is replaced.
pub fn tensor_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("raw"), path.with_extension("json"))
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_tensor(path: &Path, tensor: &Tensor, dtype: Dtype, role: &str) -> Result<()> {
    let n: usize = tensor.shape.iter().product();
    if n != tensor.values.len() {
        return Err(Error::InvalidArgument(format!("shape {:?} does not match {} values", tensor.shape, tensor.values.len())));
    }
    let mut bytes = Vec::with_capacity(n * dtype.size());
    match dtype {
        Dtype::Float32 => tensor.values.iter().for_each(|&v| bytes.extend_from_slice(&(v as f32).to_le_bytes())),
        Dtype::Float64 => tensor.values.iter().for_each(|&v| bytes.extend_from_slice(&v.to_le_bytes())),
    }
    let sidecar = Sidecar {
        shape: tensor.shape.clone(),
        dtype,
        order: "C".into(),
        role: role.into(),
    };
    let (raw, json) = tensor_paths(path);
    write_atomic(&raw, &bytes)?;
    write_atomic(&json, serde_json::to_string_pretty(&sidecar)?.as_bytes())?;
    Ok(())
}

pub fn load_sidecar(path: &Path) -> Result<Sidecar> {
    let (_, json) = tensor_paths(path);
    let text = fs::read_to_string(&json)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", json.display())))
}

/// Loads a tensor and its role. The payload size must match the sidecar exactly.
pub fn load_tensor(path: &Path) -> Result<(Tensor, String)> {
    let sidecar = load_sidecar(path)?;
    if sidecar.order != "C" {
        return Err(Error::Format(format!("unsupported order '{}'", sidecar.order)));
    }
    let (raw, _) = tensor_paths(path);
    let bytes = fs::read(&raw)?;
    let n: usize = sidecar.shape.iter().product();
    let size = sidecar.dtype.size();
    if bytes.len() != n * size {
        return Err(Error::Format(format!(
            "{}: {} bytes, sidecar shape {:?} ({:?}) needs {}",
            raw.display(),
            bytes.len(),
            sidecar.shape,
            sidecar.dtype,
            n * size
        )));
    }
    let values = match sidecar.dtype {
        Dtype::Float32 => bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
        Dtype::Float64 => bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
    };
    Ok((Tensor { shape: sidecar.shape, values }, sidecar.role))
}
