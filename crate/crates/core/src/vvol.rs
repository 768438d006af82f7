//! VVOL container: `"VVOL1\0"`, little-endian `u32` header length, UTF-8 JSON
//! header (`dims`, `spacing_mm`, `dtype`), then the raw x-fastest payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, ParseError, Result};
use crate::volume::{DType, Volume};

pub const MAGIC: &[u8; 6] = b"VVOL1\0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub dtype: String,
}

impl VolumeHeader {
    pub fn of(v: &Volume) -> Self {
        Self {
            dims: v.dims(),
            spacing_mm: v.spacing(),
            dtype: v.dtype().name().to_string(),
        }
    }

    fn dtype(&self) -> Result<DType> {
        DType::parse(&self.dtype)
            .ok_or_else(|| ParseError::Header(format!("unknown dtype {:?}", self.dtype)).into())
    }

    fn voxel_count(&self) -> Result<usize> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(ParseError::Mismatch(format!("dims {:?} contain zero", self.dims)).into());
        }
        self.dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| ParseError::Mismatch(format!("dims {:?} overflow", self.dims)).into())
    }
}

pub fn encode(v: &Volume) -> Vec<u8> {
    let header = serde_json::to_vec(&VolumeHeader::of(v)).expect("header serializes");
    let width = v.dtype().byte_width();
    let mut out = Vec::with_capacity(MAGIC.len() + 4 + header.len() + v.len() * width);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    encode_payload(v, &mut out);
    out
}

fn encode_payload(v: &Volume, out: &mut Vec<u8>) {
    match v.dtype() {
        DType::Uint8 => out.extend(v.data().iter().map(|&x| DType::Uint8.quantize(x) as u8)),
        DType::Uint16 => {
            for &x in v.data() {
                out.extend_from_slice(&(DType::Uint16.quantize(x) as u16).to_le_bytes());
            }
        }
        DType::Float32 => {
            for &x in v.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
}

pub fn decode(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < MAGIC.len() {
        return Err(ParseError::Truncated {
            what: "magic",
            expected: MAGIC.len(),
            found: bytes.len(),
        }
        .into());
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(ParseError::BadMagic(bytes[..MAGIC.len()].to_vec()).into());
    }
    let rest = &bytes[MAGIC.len()..];
    if rest.len() < 4 {
        return Err(ParseError::Truncated {
            what: "header length",
            expected: 4,
            found: rest.len(),
        }
        .into());
    }
    let header_len = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
    let rest = &rest[4..];
    if rest.len() < header_len {
        return Err(ParseError::Truncated {
            what: "header",
            expected: header_len,
            found: rest.len(),
        }
        .into());
    }
    let header: VolumeHeader = serde_json::from_slice(&rest[..header_len])
        .map_err(|e| ParseError::Header(e.to_string()))?;
    decode_payload(&header, &rest[header_len..])
}

fn decode_payload(header: &VolumeHeader, payload: &[u8]) -> Result<Volume> {
    let dtype = header.dtype()?;
    let count = header.voxel_count()?;
    let expected = count
        .checked_mul(dtype.byte_width())
        .ok_or_else(|| ParseError::Mismatch("payload size overflow".into()))?;
    if payload.len() < expected {
        return Err(ParseError::Truncated {
            what: "payload",
            expected,
            found: payload.len(),
        }
        .into());
    }
    if payload.len() > expected {
        return Err(ParseError::Mismatch(format!(
            "payload has {} bytes, header declares {expected}",
            payload.len()
        ))
        .into());
    }
    let data: Vec<f32> = match dtype {
        DType::Uint8 => payload.iter().map(|&b| b as f32).collect(),
        DType::Uint16 => payload
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as f32)
            .collect(),
        DType::Float32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    };
    Volume::new(header.dims, header.spacing_mm, dtype, data).map_err(|e| match e {
        Error::Parameter(m) | Error::Domain(m) | Error::Shape(m) => ParseError::Mismatch(m).into(),
        other => other,
    })
}

pub fn write_vvol(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&encode(v)).map_err(|e| Error::io(path, e))
}

pub fn read_vvol(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Imports a headerless raw payload described by a JSON sidecar using the
/// VVOL header schema.
pub fn read_raw_with_sidecar(raw: impl AsRef<Path>, sidecar: impl AsRef<Path>) -> Result<Volume> {
    let (raw, sidecar) = (raw.as_ref(), sidecar.as_ref());
    let header_bytes = fs::read(sidecar).map_err(|e| Error::io(sidecar, e))?;
    let header: VolumeHeader =
        serde_json::from_slice(&header_bytes).map_err(|e| ParseError::Header(e.to_string()))?;
    let payload = fs::read(raw).map_err(|e| Error::io(raw, e))?;
    decode_payload(&header, &payload)
}
