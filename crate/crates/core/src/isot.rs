//! The ISOT checkpoint container.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! 0..4    magic "ISOT"
//! 4..8    u32 version (= 1)
//! 8..16   u64 header_len
//! 16..    header_len bytes of UTF-8 JSON
//!         {"tensors": {name: {"dtype": "f32", "shape": [..], "offset": u64}},
//!          "meta": {string: string}}
//! ..      zero padding up to the next 64-byte boundary (payload start)
//! ..      row-major f32 payloads; offsets are relative to payload start
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::bundle::{BundleError, Tensor, TensorBundle};

pub const MAGIC: [u8; 4] = *b"ISOT";
pub const VERSION: u32 = 1;
pub const PAYLOAD_ALIGN: usize = 64;
const PREAMBLE_LEN: usize = 16;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorHeader {
    dtype: String,
    shape: Vec<u64>,
    offset: u64,
}

/// Tensor table kept as a list so duplicate keys in the JSON are detectable.
#[derive(Debug, Default)]
struct TensorTable(Vec<(String, TensorHeader)>);

impl<'de> Deserialize<'de> for TensorTable {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct TableVisitor;

        impl<'de> Visitor<'de> for TableVisitor {
            type Value = TensorTable;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map of tensor names to tensor headers")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<TensorTable, A::Error> {
                let mut out = Vec::new();
                while let Some((name, header)) = map.next_entry::<String, TensorHeader>()? {
                    out.push((name, header));
                }
                Ok(TensorTable(out))
            }
        }

        deserializer.deserialize_map(TableVisitor)
    }
}

#[derive(Deserialize)]
struct Header {
    tensors: TensorTable,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct HeaderOut<'a> {
    tensors: indexmap::IndexMap<&'a str, TensorHeader>,
    meta: &'a BTreeMap<String, String>,
}

fn align_up(n: usize) -> usize {
    n.div_ceil(PAYLOAD_ALIGN) * PAYLOAD_ALIGN
}

/// Serializes a bundle into ISOT bytes.
pub fn to_bytes(bundle: &TensorBundle) -> Result<Vec<u8>, BundleError> {
    let mut tensors = indexmap::IndexMap::with_capacity(bundle.len());
    let mut offset = 0u64;
    for (name, tensor) in bundle.iter() {
        if let Some(index) = tensor.first_non_finite() {
            return Err(BundleError::NonFiniteValue {
                name: name.to_string(),
                index,
            });
        }
        tensors.insert(
            name,
            TensorHeader {
                dtype: "f32".into(),
                shape: tensor.shape().iter().map(|&d| d as u64).collect(),
                offset,
            },
        );
        offset += 4 * tensor.len() as u64;
    }
    let header = serde_json::to_vec(&HeaderOut {
        tensors,
        meta: bundle.meta(),
    })
    .map_err(|e| BundleError::HeaderMalformed(e.to_string()))?;

    let payload_start = align_up(PREAMBLE_LEN + header.len());
    let mut out = Vec::with_capacity(payload_start + offset as usize);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.resize(payload_start, 0);
    for (_, tensor) in bundle.iter() {
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses ISOT bytes into a bundle, validating every tensor.
pub fn from_bytes(bytes: &[u8]) -> Result<TensorBundle, BundleError> {
    if bytes.len() < 4 {
        return Err(BundleError::PayloadTruncated(format!(
            "file is {} bytes, shorter than the magic",
            bytes.len()
        )));
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("4-byte slice");
    if magic != MAGIC {
        return Err(BundleError::MagicMismatch(magic));
    }
    if bytes.len() < PREAMBLE_LEN {
        return Err(BundleError::PayloadTruncated(format!(
            "file is {} bytes, shorter than the {PREAMBLE_LEN}-byte preamble",
            bytes.len()
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4-byte slice"));
    if version != VERSION {
        return Err(BundleError::VersionUnsupported(version));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8-byte slice"));
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|h| h.checked_add(PREAMBLE_LEN))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| {
            BundleError::PayloadTruncated(format!(
                "header of {header_len} bytes extends past end of file ({} bytes)",
                bytes.len()
            ))
        })?;
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE_LEN..header_end])
        .map_err(|e| BundleError::HeaderMalformed(e.to_string()))?;

    let payload_start = align_up(header_end);
    let payload = bytes.get(payload_start..).unwrap_or(&[]);

    let mut bundle = TensorBundle::new();
    for (name, th) in header.tensors.0 {
        if th.dtype != "f32" {
            return Err(BundleError::UnsupportedDtype {
                name,
                dtype: th.dtype,
            });
        }
        let shape: Vec<usize> = th
            .shape
            .iter()
            .map(|&d| usize::try_from(d))
            .collect::<Result<_, _>>()
            .map_err(|_| BundleError::HeaderMalformed(format!("tensor `{name}`: extent too large")))?;
        if shape.is_empty() || shape.len() > 2 || shape.contains(&0) {
            return Err(BundleError::HeaderMalformed(format!(
                "tensor `{name}`: shape {shape:?} must be rank 1 or 2 with positive extents"
            )));
        }
        let byte_len = shape
            .iter()
            .try_fold(4usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| BundleError::HeaderMalformed(format!("tensor `{name}`: size overflows")))?;
        let start = usize::try_from(th.offset).ok();
        let range = start
            .and_then(|s| s.checked_add(byte_len).map(|e| s..e))
            .filter(|r| r.end <= payload.len())
            .ok_or_else(|| {
                BundleError::PayloadTruncated(format!(
                    "tensor `{name}` spans offset {}..+{byte_len} but the payload has {} bytes",
                    th.offset,
                    payload.len()
                ))
            })?;
        let data: Vec<f32> = payload[range]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(BundleError::NonFiniteValue { name, index });
        }
        let tensor =
            Tensor::new(shape, data).map_err(|e| BundleError::HeaderMalformed(e.to_string()))?;
        match bundle.insert(name, tensor) {
            Ok(()) => {}
            Err(BundleError::DuplicateName(n)) => {
                return Err(BundleError::HeaderMalformed(format!("duplicate tensor name `{n}`")))
            }
            Err(BundleError::EmptyName) => {
                return Err(BundleError::HeaderMalformed("empty tensor name".into()))
            }
            Err(e) => return Err(e),
        }
    }
    *bundle.meta_mut() = header.meta;
    Ok(bundle)
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<TensorBundle, BundleError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| BundleError::IoFailure {
        path: path.display().to_string(),
        source,
    })?;
    from_bytes(&bytes)
}

pub fn save_bundle(bundle: &TensorBundle, path: impl AsRef<Path>) -> Result<(), BundleError> {
    let path = path.as_ref();
    let bytes = to_bytes(bundle)?;
    std::fs::write(path, bytes).map_err(|source| BundleError::IoFailure {
        path: path.display().to_string(),
        source,
    })
}
