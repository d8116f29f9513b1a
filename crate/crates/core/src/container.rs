//! Binary model files.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size | content                                   |
//! |--------|------|-------------------------------------------|
//! | 0      | 8    | magic `CONJPROP`                          |
//! | 8      | 4    | format version, `u32`                     |
//! | 12     | 8    | header length `H` in bytes, `u64`         |
//! | 20     | H    | UTF-8 JSON header                         |
//! | 20 + H | ...  | tensor data, `f64`, in header order       |
//!
//! The header is an object `{"kind": .., "meta": .., "tensors": [{"name":
//! .., "shape": [..]}, ..]}`. Each tensor contributes `product(shape)`
//! values in row-major order. Values are stored as raw IEEE-754 bits, so a
//! reloaded model is bit-identical to the one written.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"CONJPROP";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("not a model file (bad magic)")]
    BadMagic,

    #[error("unsupported model file version {0}")]
    Version(u32),

    #[error("model file truncated")]
    Truncated,

    #[error("model header: {0}")]
    Header(#[from] serde_json::Error),

    #[error("model file has {0} trailing bytes")]
    Trailing(usize),

    #[error("expected a `{expected}` model, found `{found}`")]
    Kind { expected: String, found: String },

    #[error("model file lacks tensor `{0}`")]
    MissingTensor(String),

    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor size");
        Tensor {
            name: name.into(),
            shape,
            data,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    tensors: Vec<TensorInfo>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<Tensor>,
}

impl Container {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        Container {
            kind: kind.into(),
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        self.tensors.push(Tensor::new(name, shape, data));
    }

    pub fn expect_kind(&self, kind: &str) -> Result<(), ContainerError> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(ContainerError::Kind {
                expected: kind.to_owned(),
                found: self.kind.clone(),
            })
        }
    }

    /// Remove a tensor by name, checking its shape.
    pub fn take(&mut self, name: &str, shape: &[usize]) -> Result<Vec<f64>, ContainerError> {
        let pos = self
            .tensors
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| ContainerError::MissingTensor(name.to_owned()))?;
        let tensor = self.tensors.remove(pos);
        if tensor.shape != shape {
            return Err(ContainerError::Shape {
                name: name.to_owned(),
                expected: shape.to_vec(),
                found: tensor.shape,
            });
        }
        Ok(tensor.data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| TensorInfo {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let values: usize = self.tensors.iter().map(|t| t.data.len()).sum();

        let mut out = Vec::with_capacity(20 + header.len() + 8 * values);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        if bytes.len() < 20 {
            return Err(ContainerError::Truncated);
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(ContainerError::Version(version));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if body.len() < header_len {
            return Err(ContainerError::Truncated);
        }
        let header: Header = serde_json::from_slice(&body[..header_len])?;

        let mut data = &body[header_len..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for info in header.tensors {
            let n: usize = info.shape.iter().product();
            if data.len() < 8 * n {
                return Err(ContainerError::Truncated);
            }
            let values = data[..8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            data = &data[8 * n..];
            tensors.push(Tensor {
                name: info.name,
                shape: info.shape,
                data: values,
            });
        }
        if !data.is_empty() {
            return Err(ContainerError::Trailing(data.len()));
        }
        Ok(Container {
            kind: header.kind,
            meta: header.meta,
            tensors,
        })
    }
}
