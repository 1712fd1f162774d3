//! Checkpoint container: an 8-byte little-endian header length, a JSON header
//! mapping tensor names to `{dtype, shape, data_offsets}` (plus an optional
//! `__metadata__` string map), then the raw little-endian payload.
//!
//! Files written here are canonical: metadata first, tensors in lexicographic
//! name order, payload laid out in the same order, header padded with spaces
//! to a multiple of 8 bytes. Loading and re-saving a canonical file reproduces
//! it byte for byte.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::scalar::Element;

pub const METADATA_KEY: &str = "__metadata__";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DType {
    F64,
    F32,
    F16,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F64 => 8,
            DType::F32 => 4,
            DType::F16 => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DType::F64 => "F64",
            DType::F32 => "F32",
            DType::F16 => "F16",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "F64" => Some(DType::F64),
            "F32" => Some(DType::F32),
            "F16" => Some(DType::F16),
            _ => None,
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header at byte {offset}: {reason}")]
    MalformedHeader { offset: usize, reason: String },
    #[error("truncated payload: tensors declare {declared} bytes but only {actual} are present")]
    TruncatedPayload { declared: u64, actual: u64 },
    #[error("duplicate tensor name `{0}`")]
    DuplicateName(String),
    #[error("tensor `{name}`: shape {shape:?} implies {expected} elements but {actual} are stored")]
    ShapeMismatch {
        name: String,
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("tensor `{name}`: unsupported dtype `{dtype}`")]
    UnknownDType { name: String, dtype: String },
    #[error("tensor `{name}`: invalid payload layout: {reason}")]
    InvalidLayout { name: String, reason: String },
    #[error("invalid tensor name `{0}`")]
    InvalidName(String),
}

impl StoreError {
    /// Short stable tag for the error category.
    pub fn kind(&self) -> &'static str {
        match self {
            StoreError::Io { .. } => "io",
            StoreError::MalformedHeader { .. } => "malformed_header",
            StoreError::TruncatedPayload { .. } => "truncated_payload",
            StoreError::DuplicateName(_) => "duplicate_name",
            StoreError::ShapeMismatch { .. } => "shape_mismatch",
            StoreError::UnknownDType { .. } => "unknown_dtype",
            StoreError::InvalidLayout { .. } => "invalid_layout",
            StoreError::InvalidName(_) => "invalid_name",
        }
    }
}

/// One named parameter tensor, kept exactly as stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorRecord {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
    data: Vec<u8>,
}

fn element_count(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_name(name: &str) -> Result<(), StoreError> {
    if name.is_empty() || name == METADATA_KEY {
        return Err(StoreError::InvalidName(name.to_string()));
    }
    Ok(())
}

impl TensorRecord {
    pub fn new<E: Element>(
        name: impl Into<String>,
        shape: Vec<usize>,
        values: &[E],
    ) -> Result<Self, StoreError> {
        let name = name.into();
        check_name(&name)?;
        let expected = element_count(&shape);
        if expected != values.len() {
            return Err(StoreError::ShapeMismatch {
                name,
                shape,
                expected,
                actual: values.len(),
            });
        }
        let mut data = Vec::with_capacity(values.len() * E::DTYPE.size());
        for &v in values {
            v.write_le(&mut data);
        }
        Ok(Self {
            name,
            dtype: E::DTYPE,
            shape,
            data,
        })
    }

    pub fn from_bytes(
        name: impl Into<String>,
        dtype: DType,
        shape: Vec<usize>,
        data: Vec<u8>,
    ) -> Result<Self, StoreError> {
        let name = name.into();
        check_name(&name)?;
        let expected = element_count(&shape);
        if data.len() != expected * dtype.size() {
            return Err(StoreError::ShapeMismatch {
                name,
                shape,
                expected,
                actual: data.len() / dtype.size(),
            });
        }
        Ok(Self {
            name,
            dtype,
            shape,
            data,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dtype.size()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn bytes(&self) -> &[u8] {
        &self.data
    }

    /// Values in their stored type, or `None` if `E` is not the stored dtype.
    pub fn values<E: Element>(&self) -> Option<Vec<E>> {
        if E::DTYPE != self.dtype {
            return None;
        }
        Some(self.data.chunks_exact(self.dtype.size()).map(E::read_le).collect())
    }

    /// Values widened to f64.
    pub fn to_f64(&self) -> Vec<f64> {
        let chunks = self.data.chunks_exact(self.dtype.size());
        match self.dtype {
            DType::F64 => chunks.map(f64::read_le).collect(),
            DType::F32 => chunks.map(|c| f32::read_le(c).widen()).collect(),
            DType::F16 => chunks.map(|c| half::f16::read_le(c).widen()).collect(),
        }
    }
}

/// An ordered, name-keyed collection of tensors plus string metadata.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Checkpoint {
    tensors: BTreeMap<String, TensorRecord>,
    meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, record: TensorRecord) -> Result<(), StoreError> {
        if self.tensors.contains_key(record.name()) {
            return Err(StoreError::DuplicateName(record.name.clone()));
        }
        self.tensors.insert(record.name.clone(), record);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&TensorRecord> {
        self.tensors.get(name)
    }

    /// Tensors in canonical (lexicographic) order.
    pub fn tensors(&self) -> impl Iterator<Item = &TensorRecord> {
        self.tensors.values()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn component_count(&self) -> usize {
        self.tensors.len()
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.meta.insert(key.into(), value.into());
    }

    /// Total number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.tensors.values().map(TensorRecord::len).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = String::from("{");
        let mut first = true;
        if !self.meta.is_empty() {
            header.push_str(&serde_json::to_string(METADATA_KEY).unwrap());
            header.push(':');
            header.push_str(&serde_json::to_string(&self.meta).unwrap());
            first = false;
        }
        let mut offset = 0usize;
        for t in self.tensors.values() {
            if !first {
                header.push(',');
            }
            first = false;
            let end = offset + t.data.len();
            header.push_str(&serde_json::to_string(&t.name).unwrap());
            header.push_str(&format!(
                ":{{\"dtype\":\"{}\",\"shape\":{},\"data_offsets\":[{},{}]}}",
                t.dtype,
                serde_json::to_string(&t.shape).unwrap(),
                offset,
                end
            ));
            offset = end;
        }
        header.push('}');
        while header.len() % 8 != 0 {
            header.push(' ');
        }

        let mut out = Vec::with_capacity(8 + header.len() + offset);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for t in self.tensors.values() {
            out.extend_from_slice(&t.data);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        if bytes.len() < 8 {
            return Err(StoreError::MalformedHeader {
                offset: 0,
                reason: format!("file is {} bytes, shorter than the 8-byte length prefix", bytes.len()),
            });
        }
        let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap());
        let available = (bytes.len() - 8) as u64;
        if header_len > available {
            return Err(StoreError::MalformedHeader {
                offset: 0,
                reason: format!("declared header length {header_len} exceeds the {available} bytes after the prefix"),
            });
        }
        let header_end = 8 + header_len as usize;
        let header_bytes = &bytes[8..header_end];
        let header = std::str::from_utf8(header_bytes).map_err(|e| StoreError::MalformedHeader {
            offset: 8 + e.valid_up_to(),
            reason: "header is not valid UTF-8".into(),
        })?;
        let raw: RawHeader = serde_json::from_str(header).map_err(|e| StoreError::MalformedHeader {
            offset: 8 + json_error_offset(header, &e),
            reason: e.to_string(),
        })?;

        let payload = &bytes[header_end..];
        let mut ckpt = Checkpoint::new();
        let mut spans: Vec<(usize, usize, String)> = Vec::new();
        let mut seen_meta = false;
        let mut infos = Vec::new();

        for (key, value) in raw.0 {
            if key == METADATA_KEY {
                if seen_meta {
                    return Err(StoreError::DuplicateName(key));
                }
                seen_meta = true;
                ckpt.meta = serde_json::from_value(value).map_err(|e| StoreError::MalformedHeader {
                    offset: 8,
                    reason: format!("{METADATA_KEY} must be a string map: {e}"),
                })?;
                continue;
            }
            if key.is_empty() {
                return Err(StoreError::InvalidName(key));
            }
            if infos.iter().any(|(k, _): &(String, RawInfo)| *k == key) {
                return Err(StoreError::DuplicateName(key));
            }
            let info: RawInfo = serde_json::from_value(value).map_err(|e| StoreError::MalformedHeader {
                offset: 8,
                reason: format!("entry `{key}`: {e}"),
            })?;
            infos.push((key, info));
        }

        let mut declared_end = 0u64;
        for (name, info) in &infos {
            let dtype = DType::parse(&info.dtype).ok_or_else(|| StoreError::UnknownDType {
                name: name.clone(),
                dtype: info.dtype.clone(),
            })?;
            let [begin, end] = info.data_offsets;
            if end < begin {
                return Err(StoreError::InvalidLayout {
                    name: name.clone(),
                    reason: format!("data_offsets [{begin},{end}] are decreasing"),
                });
            }
            declared_end = declared_end.max(end);
            let expected = element_count(&info.shape);
            let stored = end - begin;
            if stored != (expected * dtype.size()) as u64 {
                return Err(StoreError::ShapeMismatch {
                    name: name.clone(),
                    shape: info.shape.clone(),
                    expected,
                    actual: (stored / dtype.size() as u64) as usize,
                });
            }
        }
        if declared_end > payload.len() as u64 {
            return Err(StoreError::TruncatedPayload {
                declared: declared_end,
                actual: payload.len() as u64,
            });
        }

        for (name, info) in &infos {
            let [begin, end] = info.data_offsets;
            spans.push((begin as usize, end as usize, name.clone()));
        }
        spans.sort();
        let mut cursor = 0usize;
        for (begin, end, name) in &spans {
            if *begin < cursor {
                return Err(StoreError::InvalidLayout {
                    name: name.clone(),
                    reason: format!("span [{begin},{end}) overlaps a previous tensor ending at {cursor}"),
                });
            }
            if *begin > cursor {
                return Err(StoreError::InvalidLayout {
                    name: name.clone(),
                    reason: format!("gap of {} bytes before span [{begin},{end})", begin - cursor),
                });
            }
            cursor = *end;
        }
        if cursor != payload.len() {
            return Err(StoreError::InvalidLayout {
                name: spans.last().map(|s| s.2.clone()).unwrap_or_default(),
                reason: format!("{} trailing bytes after the last tensor", payload.len() - cursor),
            });
        }

        for (name, info) in infos {
            let dtype = DType::parse(&info.dtype).expect("validated above");
            let [begin, end] = info.data_offsets;
            let record = TensorRecord::from_bytes(
                name,
                dtype,
                info.shape,
                payload[begin as usize..end as usize].to_vec(),
            )?;
            ckpt.insert(record)?;
        }
        Ok(ckpt)
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, StoreError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Checkpoint::from_bytes(&bytes)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<(), StoreError> {
    let path = path.as_ref();
    fs::write(path, ckpt.to_bytes()).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Deserialize)]
struct RawInfo {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [u64; 2],
}

/// Header entries in file order, duplicates preserved so they can be reported.
struct RawHeader(Vec<(String, Value)>);

impl<'de> Deserialize<'de> for RawHeader {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct EntriesVisitor;

        impl<'de> Visitor<'de> for EntriesVisitor {
            type Value = RawHeader;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a JSON object mapping tensor names to entries")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<RawHeader, A::Error> {
                let mut entries = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, Value>()? {
                    entries.push((k, v));
                }
                Ok(RawHeader(entries))
            }
        }

        deserializer.deserialize_map(EntriesVisitor)
    }
}

fn json_error_offset(text: &str, err: &serde_json::Error) -> usize {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(err.line().saturating_sub(1))
        .map(str::len)
        .sum();
    (line_start + err.column().saturating_sub(1)).min(text.len())
}
