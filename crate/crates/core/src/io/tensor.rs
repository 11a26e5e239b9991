use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT: &str = "neurodec-tensors";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dtype {
    Float32,
    #[default]
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

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dtype: Dtype,
    pub data: ArrayD<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: Dtype,
    pub file: String,
    pub byte_offset: u64,
    pub byte_length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerManifest {
    pub format: String,
    pub version: u32,
    pub endianness: String,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub attributes: serde_json::Map<String, serde_json::Value>,
}

/// Named row-major tensors stored as one raw little-endian file each, plus
/// a `manifest.json` describing names, shapes, dtypes and byte extents.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorContainer {
    pub tensors: BTreeMap<String, Tensor>,
    pub attributes: serde_json::Map<String, serde_json::Value>,
}

fn check_name(name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && !name.starts_with('.')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::arg(format!("tensor name `{name}` must use [A-Za-z0-9_.-] and not start with '.'")))
    }
}

impl TensorContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, data: ArrayD<f64>, dtype: Dtype) -> Result<()> {
        let name = name.into();
        check_name(&name)?;
        self.tensors.insert(name, Tensor { dtype, data });
        Ok(())
    }

    pub fn insert_f64(&mut self, name: impl Into<String>, data: ArrayD<f64>) -> Result<()> {
        self.insert(name, data, Dtype::Float64)
    }

    pub fn get(&self, name: &str) -> Result<&ArrayD<f64>> {
        self.tensors
            .get(name)
            .map(|t| &t.data)
            .ok_or_else(|| Error::contract(format!("tensor `{name}` is missing from the container")))
    }

    pub fn get2(&self, name: &str) -> Result<Array2<f64>> {
        self.get(name)?
            .clone()
            .into_dimensionality()
            .map_err(|_| Error::contract(format!("tensor `{name}` is not rank 2")))
    }

    pub fn get3(&self, name: &str) -> Result<Array3<f64>> {
        self.get(name)?
            .clone()
            .into_dimensionality()
            .map_err(|_| Error::contract(format!("tensor `{name}` is not rank 3")))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            let file = format!("{name}.bin");
            let mut bytes = Vec::with_capacity(t.data.len() * t.dtype.size());
            // Iteration over an ArrayD is logical (row-major) order.
            for &v in t.data.iter() {
                match t.dtype {
                    Dtype::Float32 => bytes.extend_from_slice(&(v as f32).to_le_bytes()),
                    Dtype::Float64 => bytes.extend_from_slice(&v.to_le_bytes()),
                }
            }
            let path = dir.join(&file);
            std::fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.data.shape().to_vec(),
                dtype: t.dtype,
                file,
                byte_offset: 0,
                byte_length: bytes.len() as u64,
            });
        }
        let manifest = ContainerManifest {
            format: FORMAT.into(),
            version: 1,
            endianness: "LE".into(),
            tensors: entries,
            attributes: self.attributes.clone(),
        };
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: ContainerManifest = serde_json::from_str(&text)?;
        if manifest.endianness != "LE" {
            return Err(Error::contract(format!("unsupported endianness tag `{}`", manifest.endianness)));
        }
        let mut out = TensorContainer { tensors: BTreeMap::new(), attributes: manifest.attributes };
        for e in manifest.tensors {
            check_name(&e.name)?;
            if e.file.contains('/') || e.file.contains('\\') || e.file.starts_with('.') {
                return Err(Error::contract(format!("tensor file `{}` escapes the container", e.file)));
            }
            let n: usize = e.shape.iter().product();
            let expected = (n * e.dtype.size()) as u64;
            if e.byte_length != expected {
                return Err(Error::contract(format!(
                    "tensor `{}`: manifest byte length {} does not equal shape × dtype size {expected}",
                    e.name, e.byte_length
                )));
            }
            let fpath = dir.join(&e.file);
            let bytes = std::fs::read(&fpath).map_err(|err| Error::io(&fpath, err))?;
            let start = e.byte_offset as usize;
            let Some(raw) = bytes.get(start..start + expected as usize) else {
                return Err(Error::contract(format!(
                    "tensor `{}`: file holds {} bytes, manifest needs {} from offset {start}",
                    e.name,
                    bytes.len(),
                    expected
                )));
            };
            if e.byte_offset == 0 && bytes.len() as u64 != expected {
                return Err(Error::contract(format!(
                    "tensor `{}`: file length {} does not equal shape × dtype size {expected}",
                    e.name,
                    bytes.len()
                )));
            }
            let values: Vec<f64> = match e.dtype {
                Dtype::Float32 => raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect(),
                Dtype::Float64 => raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            };
            let data = ArrayD::from_shape_vec(IxDyn(&e.shape), values).expect("length checked");
            out.tensors.insert(e.name, Tensor { dtype: e.dtype, data });
        }
        Ok(out)
    }
}
