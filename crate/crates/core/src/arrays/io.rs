//! `.ctarr` interchange format.
//!
//! ```text
//! offset 0   8 bytes   magic "CTARR\0\0\0"
//! offset 8   8 bytes   header length N, little-endian u64
//! offset 16  N bytes   UTF-8 JSON header (ArrayHeader)
//! offset 16+N          raw little-endian payload, fastest axis first
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{ArrayKind, CtArray, Sinogram, Volume};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 8] = *b"CTARR\0\0\0";
pub const EXTENSION: &str = "ctarr";

const VOLUME_LAYOUT: &str = "x,y,z";
const SINOGRAM_LAYOUT: &str = "u,v,view";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn bytes(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayHeader {
    pub kind: ArrayKind,
    pub dtype: Precision,
    /// Axis names, fastest-varying first.
    pub layout: String,
    /// Axis lengths in `layout` order.
    pub dims: [usize; 3],
    /// Voxel edge per axis for volumes, `[du, dv]` for sinograms (mm).
    pub spacing: Vec<f64>,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub meta: Map<String, Value>,
}

impl ArrayHeader {
    fn for_array(array: &CtArray, dtype: Precision, meta: Map<String, Value>) -> Self {
        let (layout, spacing) = match array {
            CtArray::Volume(v) => (VOLUME_LAYOUT, vec![v.voxel_size(); 3]),
            CtArray::Sinogram(s) => (SINOGRAM_LAYOUT, vec![s.du(), s.dv()]),
        };
        ArrayHeader {
            kind: array.kind(),
            dtype,
            layout: layout.to_string(),
            dims: array.grid().dims(),
            spacing,
            meta,
        }
    }

    pub fn payload_bytes(&self) -> usize {
        self.dims.iter().product::<usize>() * self.dtype.bytes()
    }
}

/// Serializes `array` into the `.ctarr` byte layout.
pub fn encode(array: &CtArray, dtype: Precision, meta: Map<String, Value>) -> Result<Vec<u8>> {
    let data = array.grid().data();
    if let Some(index) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let header = ArrayHeader::for_array(array, dtype, meta);
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;

    let mut out = Vec::with_capacity(16 + json.len() + header.payload_bytes());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    match dtype {
        Precision::F32 => data.iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        Precision::F64 => data.iter().for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(CtArray, ArrayHeader)> {
    if bytes.len() < 16 || bytes[..8] != MAGIC {
        return Err(Error::Format("not a .ctarr file (bad magic)".into()));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|n| n.checked_add(16))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::Format(format!("header length {header_len} exceeds file size {}", bytes.len())))?;
    let header: ArrayHeader = serde_json::from_slice(&bytes[16..header_end])
        .map_err(|e| Error::Format(format!("malformed header: {e}")))?;

    let expected_layout = match header.kind {
        ArrayKind::Volume => VOLUME_LAYOUT,
        ArrayKind::Sinogram => SINOGRAM_LAYOUT,
    };
    if header.layout != expected_layout {
        return Err(Error::Format(format!(
            "unsupported layout `{}` for {} (expected `{expected_layout}`)",
            header.layout, header.kind
        )));
    }

    let payload = &bytes[header_end..];
    let expected = header.payload_bytes();
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "payload size mismatch: header {:?} {:?} needs {expected} bytes, found {}",
            header.dims,
            header.dtype,
            payload.len()
        )));
    }
    let data: Vec<f64> = match header.dtype {
        Precision::F32 => payload
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect(),
        Precision::F64 => payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
    };

    let [a, b, c] = header.dims;
    let spacing = |i: usize| {
        header
            .spacing
            .get(i)
            .copied()
            .ok_or_else(|| Error::Format(format!("header spacing has {} entries", header.spacing.len())))
    };
    let array = match header.kind {
        ArrayKind::Volume => CtArray::Volume(Volume::from_data(a, b, c, spacing(0)?, data)?),
        ArrayKind::Sinogram => CtArray::Sinogram(Sinogram::from_data(c, b, a, spacing(0)?, spacing(1)?, data)?),
    };
    Ok((array, header))
}

pub fn write_array(
    path: impl AsRef<Path>,
    array: &CtArray,
    dtype: Precision,
    meta: Map<String, Value>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(array, dtype, meta)?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_array(path: impl AsRef<Path>) -> Result<(CtArray, ArrayHeader)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Reads only the header of a `.ctarr` file.
pub fn read_header(path: impl AsRef<Path>) -> Result<ArrayHeader> {
    read_array(path).map(|(_, header)| header)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arrays::Grid3;

    #[test]
    fn zeros_round_trip() {
        let vol: CtArray = Volume::zeros(4, 4, 4, 0.5).into();
        let bytes = encode(&vol, Precision::F32, Map::new()).unwrap();
        let (back, header) = decode(&bytes).unwrap();
        assert_eq!(back, vol);
        assert_eq!(header.dims, [4, 4, 4]);
        assert_eq!(&bytes[..8], b"CTARR\0\0\0");
    }

    #[test]
    fn sinogram_index_survives_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ctarr");
        let data: Vec<f64> = (0..24).map(f64::from).collect();
        let sino = Sinogram::from_data(2, 3, 4, 1.0, 1.0, data).unwrap();
        write_array(&path, &sino.into(), Precision::F32, Map::new()).unwrap();
        let back = read_array(&path).unwrap().0.into_sinogram().unwrap();
        assert_eq!(back.get(1, 2, 3), 23.0);
    }

    #[test]
    fn truncated_payload_names_byte_counts() {
        let vol: CtArray = Volume::zeros(4, 4, 4, 1.0).into();
        let mut bytes = encode(&vol, Precision::F32, Map::new()).unwrap();
        bytes.truncate(bytes.len() - 4);
        let msg = decode(&bytes).unwrap_err().to_string();
        assert!(msg.contains("256") && msg.contains("252"), "{msg}");
    }

    #[test]
    fn refuses_non_finite_on_write() {
        let vol: CtArray = Volume::zeros(2, 1, 1, 1.0).into();
        let mut bad = vol.clone();
        if let CtArray::Volume(v) = &mut bad {
            v.data_mut()[1] = f64::INFINITY;
        }
        assert!(matches!(encode(&bad, Precision::F64, Map::new()), Err(Error::NonFinite { index: 1 })));
    }

    #[test]
    fn bad_magic_and_layout() {
        assert!(decode(b"NOTCTARR\0\0\0\0\0\0\0\0").is_err());
        let vol: CtArray = Volume::zeros(1, 1, 1, 1.0).into();
        let bytes = encode(&vol, Precision::F32, Map::new()).unwrap();
        let text = String::from_utf8_lossy(&bytes).replace("x,y,z", "z,y,x");
        assert!(decode(text.as_bytes()).unwrap_err().to_string().contains("layout"));
    }

    #[test]
    fn metadata_is_preserved() {
        let mut meta = Map::new();
        meta.insert("source".into(), Value::from("phantom"));
        let vol: CtArray = Volume::zeros(1, 1, 1, 1.0).into();
        let (_, header) = decode(&encode(&vol, Precision::F64, meta.clone()).unwrap()).unwrap();
        assert_eq!(header.meta, meta);
    }
}
