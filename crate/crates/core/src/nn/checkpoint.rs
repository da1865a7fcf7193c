//! Checkpoint container: a safetensors file whose tensors are named `f32`
//! arrays and whose string metadata carries the config header.
//!
//! Reserved metadata keys:
//!
//! | key              | meaning                                        |
//! |------------------|------------------------------------------------|
//! | `format`         | always `cinesr-checkpoint`                     |
//! | `format_version` | integer, currently [`FORMAT_VERSION`]          |
//! | `kind`           | `autoencoder`, `denoiser`, `lpips`, ...        |
//!
//! Every other key is free-form header data owned by the writer.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{ArrayD, IxDyn};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;
const FORMAT_TAG: &str = "cinesr-checkpoint";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access checkpoint {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed checkpoint {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("checkpoint {path} has format version {found}, expected {expected}")]
    Version { path: PathBuf, found: String, expected: u32 },
    #[error("checkpoint {path} holds a `{found}` model, expected `{expected}`")]
    Kind { path: PathBuf, found: String, expected: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub header: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, ArrayD<f32>>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>) -> Self {
        Self { kind: kind.into(), header: BTreeMap::new(), tensors: BTreeMap::new() }
    }

    pub fn with_header(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.header.insert(key.into(), value.to_string());
        self
    }

    pub fn header_value(&self, key: &str) -> Option<&str> {
        self.header.get(key).map(String::as_str)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, String> {
        let raw: Vec<(String, Vec<usize>, Vec<u8>)> = self
            .tensors
            .iter()
            .map(|(name, arr)| {
                let bytes = arr.iter().flat_map(|v| v.to_le_bytes()).collect();
                (name.clone(), arr.shape().to_vec(), bytes)
            })
            .collect();
        let views = raw
            .iter()
            .map(|(n, s, b)| TensorView::new(Dtype::F32, s.clone(), b).map(|v| (n.clone(), v)))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let mut meta: HashMap<String, String> = self.header.clone().into_iter().collect();
        meta.insert("format".into(), FORMAT_TAG.into());
        meta.insert("format_version".into(), FORMAT_VERSION.to_string());
        meta.insert("kind".into(), self.kind.clone());
        safetensors::serialize(views, Some(meta)).map_err(|e| e.to_string())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let path = path.as_ref();
        let bytes = self
            .to_bytes()
            .map_err(|reason| CheckpointError::Malformed { path: path.into(), reason })?;
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|source| CheckpointError::Io { path: dir.into(), source })?;
        }
        // Write-then-rename so a crash never leaves a truncated checkpoint behind.
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, bytes).map_err(|source| CheckpointError::Io { path: tmp.clone(), source })?;
        fs::rename(&tmp, path).map_err(|source| CheckpointError::Io { path: path.into(), source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io { path: path.into(), source })?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            ParseError::Malformed(reason) => CheckpointError::Malformed { path: path.into(), reason },
            ParseError::Version(found) => {
                CheckpointError::Version { path: path.into(), found, expected: FORMAT_VERSION }
            }
        })
    }

    /// Load and require a particular `kind`.
    pub fn load_kind(path: impl AsRef<Path>, kind: &str) -> Result<Self, CheckpointError> {
        let ck = Self::load(path.as_ref())?;
        if ck.kind != kind {
            return Err(CheckpointError::Kind {
                path: path.as_ref().into(),
                found: ck.kind,
                expected: kind.into(),
            });
        }
        Ok(ck)
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self, ParseError> {
        let malformed = |e: safetensors::SafeTensorError| ParseError::Malformed(e.to_string());
        let (_, meta) = SafeTensors::read_metadata(bytes).map_err(malformed)?;
        let mut header: BTreeMap<String, String> =
            meta.metadata().clone().unwrap_or_default().into_iter().collect();
        if header.remove("format").as_deref() != Some(FORMAT_TAG) {
            return Err(ParseError::Malformed("missing format tag".into()));
        }
        let version = header.remove("format_version").unwrap_or_default();
        if version != FORMAT_VERSION.to_string() {
            return Err(ParseError::Version(version));
        }
        let kind = header.remove("kind").ok_or_else(|| ParseError::Malformed("missing kind".into()))?;
        let st = SafeTensors::deserialize(bytes).map_err(malformed)?;
        let mut tensors = BTreeMap::new();
        for (name, view) in st.tensors() {
            if view.dtype() != Dtype::F32 {
                return Err(ParseError::Malformed(format!("tensor `{name}` is not f32")));
            }
            let data: Vec<f32> = view
                .data()
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let arr = ArrayD::from_shape_vec(IxDyn(view.shape()), data)
                .map_err(|e| ParseError::Malformed(e.to_string()))?;
            tensors.insert(name, arr);
        }
        Ok(Self { kind, header, tensors })
    }
}

enum ParseError {
    Malformed(String),
    Version(String),
}
