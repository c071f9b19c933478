//! Rank-2 tensors in the JSON-header container format: an 8-byte
//! little-endian header length, a JSON header mapping names to dtype, shape
//! and payload offsets, then the raw little-endian payload.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use half::{bf16, f16};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const METADATA_KEY: &str = "__metadata__";
/// Upper bound on header size, rejecting absurd lengths before allocating.
const MAX_HEADER_LEN: u64 = 100 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed tensor file: {0}")]
    Format(String),
    #[error("unsupported dtype {0:?}")]
    UnsupportedDtype(String),
    #[error("tensor {name:?} has rank {rank}; only matrices are supported")]
    UnsupportedRank { name: String, rank: usize },
    #[error("no tensor named {0:?}")]
    NotFound(String),
    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),
    #[error("tensor {name:?}: {rows}x{cols} {dtype:?} needs {expected} bytes, got {actual}")]
    Size {
        name: String,
        rows: usize,
        cols: usize,
        dtype: Dtype,
        expected: usize,
        actual: usize,
    },
    #[error("tensor {name:?} has {count} rows containing NaN (first: row {first})")]
    NanRows { name: String, count: usize, first: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dtype {
    F32,
    F16,
    BF16,
}

impl Dtype {
    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F16 | Dtype::BF16 => 2,
        }
    }

    fn parse(s: &str) -> Result<Dtype, TensorError> {
        match s {
            "F32" => Ok(Dtype::F32),
            "F16" => Ok(Dtype::F16),
            "BF16" => Ok(Dtype::BF16),
            other => Err(TensorError::UnsupportedDtype(other.to_owned())),
        }
    }
}

impl std::str::FromStr for Dtype {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Dtype::parse(&s.to_ascii_uppercase())
    }
}

/// A row-major `[rows x cols]` matrix kept in its stored encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbeddingTable {
    pub name: String,
    dtype: Dtype,
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl EmbeddingTable {
    pub fn from_bytes(name: impl Into<String>, dtype: Dtype, rows: usize, cols: usize, data: Vec<u8>) -> Result<Self, TensorError> {
        let name = name.into();
        let expected = rows * cols * dtype.width();
        if data.len() != expected {
            return Err(TensorError::Size {
                name,
                rows,
                cols,
                dtype,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            name,
            dtype,
            rows,
            cols,
            data,
        })
    }

    /// Encodes `values` (row-major) into `dtype`, rounding to nearest even.
    pub fn from_f32(name: impl Into<String>, dtype: Dtype, rows: usize, cols: usize, values: &[f32]) -> Result<Self, TensorError> {
        let mut data = Vec::with_capacity(values.len() * dtype.width());
        match dtype {
            Dtype::F32 => values.iter().for_each(|v| data.extend_from_slice(&v.to_le_bytes())),
            Dtype::F16 => values.iter().for_each(|v| data.extend_from_slice(&f16::from_f32(*v).to_le_bytes())),
            Dtype::BF16 => values.iter().for_each(|v| data.extend_from_slice(&bf16::from_f32(*v).to_le_bytes())),
        }
        Self::from_bytes(name, dtype, rows, cols, data)
    }

    pub fn zeros(name: impl Into<String>, dtype: Dtype, rows: usize, cols: usize) -> Self {
        Self {
            name: name.into(),
            dtype,
            rows,
            cols,
            data: vec![0; rows * cols * dtype.width()],
        }
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn row_bytes(&self, row: usize) -> &[u8] {
        let w = self.cols * self.dtype.width();
        &self.data[row * w..(row + 1) * w]
    }

    /// Decodes the whole matrix to f32 (exact for every supported dtype).
    pub fn to_f32(&self) -> Vec<f32> {
        decode(self.dtype, &self.data)
    }

    pub fn row_f32(&self, row: usize) -> Vec<f32> {
        decode(self.dtype, self.row_bytes(row))
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Indices of rows containing NaN.
    pub fn nan_rows(&self) -> Vec<usize> {
        if self.cols == 0 {
            return Vec::new();
        }
        self.to_f32()
            .chunks_exact(self.cols)
            .enumerate()
            .filter(|(_, r)| r.iter().any(|v| v.is_nan()))
            .map(|(i, _)| i)
            .collect()
    }
}

fn decode(dtype: Dtype, bytes: &[u8]) -> Vec<f32> {
    match dtype {
        Dtype::F32 => bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect(),
        Dtype::F16 => bytes.chunks_exact(2).map(|b| f16::from_le_bytes([b[0], b[1]]).to_f32()).collect(),
        Dtype::BF16 => bytes.chunks_exact(2).map(|b| bf16::from_le_bytes([b[0], b[1]]).to_f32()).collect(),
    }
}

#[derive(Serialize)]
struct HeaderEntry {
    dtype: Dtype,
    shape: [usize; 2],
    data_offsets: [usize; 2],
}

/// Serializes tables sorted by name. Identical inputs give identical bytes.
pub fn encode_tensors(tables: &[EmbeddingTable], allow_nan: bool) -> Result<Vec<u8>, TensorError> {
    let mut sorted: Vec<&EmbeddingTable> = tables.iter().collect();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));
    for w in sorted.windows(2) {
        if w[0].name == w[1].name {
            return Err(TensorError::DuplicateName(w[0].name.clone()));
        }
    }
    let mut header = BTreeMap::new();
    let mut offset = 0;
    for t in &sorted {
        if t.name == METADATA_KEY || t.name.is_empty() {
            return Err(TensorError::Format(format!("reserved tensor name {:?}", t.name)));
        }
        if t.rows == 0 || t.cols == 0 {
            return Err(TensorError::ShapeMismatch(format!("tensor {:?} has an empty dimension", t.name)));
        }
        if !allow_nan {
            let nan = t.nan_rows();
            if let Some(&first) = nan.first() {
                return Err(TensorError::NanRows {
                    name: t.name.clone(),
                    count: nan.len(),
                    first,
                });
            }
        }
        header.insert(
            t.name.as_str(),
            HeaderEntry {
                dtype: t.dtype,
                shape: t.shape(),
                data_offsets: [offset, offset + t.data.len()],
            },
        );
        offset += t.data.len();
    }
    let mut json = serde_json::to_string(&header).expect("header serializes");
    while json.len() % 8 != 0 {
        json.push(' ');
    }
    let mut out = Vec::with_capacity(8 + json.len() + offset);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(json.as_bytes());
    for t in &sorted {
        out.extend_from_slice(&t.data);
    }
    Ok(out)
}

/// Parses a whole container, validating every header entry against the
/// payload.
pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<EmbeddingTable>, TensorError> {
    let fmt = |m: String| TensorError::Format(m);
    let len_bytes: [u8; 8] = bytes
        .get(..8)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| fmt("file shorter than the 8-byte header length".into()))?;
    let n = u64::from_le_bytes(len_bytes);
    if n > MAX_HEADER_LEN || n > (bytes.len() - 8) as u64 {
        return Err(fmt(format!("header length {n} exceeds file size {}", bytes.len())));
    }
    let n = n as usize;
    let header = std::str::from_utf8(&bytes[8..8 + n]).map_err(|_| fmt("header is not UTF-8".into()))?;
    let header: BTreeMap<String, serde_json::Value> =
        serde_json::from_str(header).map_err(|e| fmt(format!("header is not a JSON object: {e}")))?;
    let payload = &bytes[8 + n..];

    let mut entries = Vec::new();
    for (name, value) in header {
        if name == METADATA_KEY {
            continue;
        }
        let obj = value.as_object().ok_or_else(|| fmt(format!("entry {name:?} is not an object")))?;
        let dtype = obj
            .get("dtype")
            .and_then(|v| v.as_str())
            .ok_or_else(|| fmt(format!("entry {name:?} lacks dtype")))?;
        let dtype = Dtype::parse(dtype)?;
        let ints = |key: &str| -> Result<Vec<usize>, TensorError> {
            obj.get(key)
                .and_then(|v| v.as_array())
                .ok_or_else(|| fmt(format!("entry {name:?} lacks {key}")))?
                .iter()
                .map(|v| v.as_u64().map(|x| x as usize).ok_or_else(|| fmt(format!("entry {name:?}: bad {key}"))))
                .collect()
        };
        let shape = ints("shape")?;
        if shape.len() != 2 {
            return Err(TensorError::UnsupportedRank { name, rank: shape.len() });
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(fmt(format!("entry {name:?} has an empty dimension")));
        }
        let offsets = ints("data_offsets")?;
        let [begin, end] = offsets[..] else {
            return Err(fmt(format!("entry {name:?}: data_offsets must have two elements")));
        };
        let expected = shape[0]
            .checked_mul(shape[1])
            .and_then(|x| x.checked_mul(dtype.width()))
            .ok_or_else(|| fmt(format!("entry {name:?}: shape overflows")))?;
        if begin > end || end - begin != expected {
            return Err(fmt(format!(
                "entry {name:?}: offsets [{begin}, {end}) disagree with shape {shape:?} {dtype:?}"
            )));
        }
        entries.push((begin, end, name, dtype, shape[0], shape[1]));
    }
    entries.sort_by_key(|e| e.0);
    let mut cursor = 0;
    for (begin, end, name, ..) in &entries {
        if *begin != cursor {
            return Err(fmt(format!("entry {name:?} starts at {begin}, expected {cursor}")));
        }
        cursor = *end;
    }
    if cursor != payload.len() {
        return Err(fmt(format!("payload is {} bytes, header declares {cursor}", payload.len())));
    }
    let mut tables: Vec<EmbeddingTable> = entries
        .into_iter()
        .map(|(b, e, name, dtype, rows, cols)| EmbeddingTable {
            name,
            dtype,
            rows,
            cols,
            data: payload[b..e].to_vec(),
        })
        .collect();
    tables.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(tables)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TensorError + '_ {
    move |source| TensorError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Writes atomically. Rows containing NaN are rejected unless `allow_nan`.
pub fn write_tensors(path: &Path, tables: &[EmbeddingTable], allow_nan: bool) -> Result<(), TensorError> {
    let bytes = encode_tensors(tables, allow_nan)?;
    crate::write_atomic(path, &bytes).map_err(io_err(path))
}

pub fn read_all(path: &Path) -> Result<Vec<EmbeddingTable>, TensorError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode_tensors(&bytes)
}

pub fn read_tensor(path: &Path, name: &str) -> Result<EmbeddingTable, TensorError> {
    read_all(path)?
        .into_iter()
        .find(|t| t.name == name)
        .ok_or_else(|| TensorError::NotFound(name.to_owned()))
}

/// Reads `name` if given, otherwise the file's only tensor.
pub fn read_single(path: &Path, name: Option<&str>) -> Result<EmbeddingTable, TensorError> {
    if let Some(name) = name {
        return read_tensor(path, name);
    }
    let mut all = read_all(path)?;
    match all.len() {
        1 => Ok(all.remove(0)),
        0 => Err(TensorError::NotFound("<any>".into())),
        n => Err(TensorError::Format(format!(
            "{n} tensors in {}; name one of {:?}",
            path.display(),
            all.iter().map(|t| &t.name).collect::<Vec<_>>()
        ))),
    }
}
