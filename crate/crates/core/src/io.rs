//! Raw binary persistence.
//!
//! Layout (little-endian):
//!
//! ```text
//! "TDNI"  u8 version=1  u8 kind (0 = image3d, 1 = sinogram)
//! u32 d0  u32 d1  u32 d2
//! d0*d1*d2 f32 values, row-major
//! ```
//!
//! Volumes use `(width, height, n_slices)`; sinograms use
//! `(n_bins, n_angles, 1)`. Metadata lives in a JSON sidecar next to the raw
//! file (`foo.raw` -> `foo.json`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image3D, Sinogram, SinogramKind};
use crate::phantom::DefectSpec;

pub const MAGIC: &[u8; 4] = b"TDNI";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 1 + 12;

#[derive(Debug, Clone, PartialEq)]
pub enum RawData {
    Image(Image3D),
    Sinogram(Sinogram),
}

impl RawData {
    fn kind_byte(&self) -> u8 {
        match self {
            RawData::Image(_) => 0,
            RawData::Sinogram(_) => 1,
        }
    }
}

/// Metadata carried by the JSON sidecar.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub voxel_size: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dose_level: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defect: Option<DefectMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sinogram_kind: Option<SinogramKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectMeta {
    pub spec: DefectSpec,
    pub centroid: [usize; 3],
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Serialises to the raw layout. Values are rounded to `f32`; a value that
/// is non-finite before or after rounding is rejected.
pub fn encode_raw(data: &RawData) -> Result<Vec<u8>> {
    let (dims, values): ([usize; 3], &[f64]) = match data {
        RawData::Image(img) => ([img.width(), img.height(), img.n_slices()], img.as_slice()),
        RawData::Sinogram(s) => ([s.n_bins(), s.n_angles(), 1], s.as_slice()),
    };
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * values.len());
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.push(data.kind_byte());
    for d in dims {
        let d = u32::try_from(d).map_err(|_| Error::validation(format!("dimension {d} exceeds u32")))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for (i, &v) in values.iter().enumerate() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::validation(format!("value {v} at index {i} is not representable as a finite f32")));
        }
        buf.extend_from_slice(&f.to_le_bytes());
    }
    Ok(buf)
}

/// Parses the raw layout. Sinograms are returned with `kind`.
pub fn decode_raw(bytes: &[u8], sinogram_kind: SinogramKind) -> Result<RawData> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(format!("file too short for header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format("bad magic, expected TDNI"));
    }
    if bytes[4] != VERSION {
        return Err(Error::format(format!("unsupported version {}", bytes[4])));
    }
    let kind = bytes[5];
    let dim = |i: usize| u32::from_le_bytes(bytes[6 + 4 * i..10 + 4 * i].try_into().unwrap()) as usize;
    let dims = [dim(0), dim(1), dim(2)];
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format("dimension product overflows"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != 4 * n {
        return Err(Error::format(format!(
            "payload holds {} bytes but header {}x{}x{} requires {}",
            payload.len(),
            dims[0],
            dims[1],
            dims[2],
            4 * n
        )));
    }
    let values: Vec<f64> =
        payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    match kind {
        0 => Image3D::from_vec(dims[0], dims[1], dims[2], values)
            .map(RawData::Image)
            .map_err(|e| Error::format(e.to_string())),
        1 => {
            if dims[2] != 1 {
                return Err(Error::format("sinogram must have a unit third dimension"));
            }
            Sinogram::from_vec(dims[1], dims[0], sinogram_kind, values)
                .map(RawData::Sinogram)
                .map_err(|e| Error::format(e.to_string()))
        }
        k => Err(Error::format(format!("unknown kind byte {k}"))),
    }
}

pub fn write_raw(path: &Path, data: &RawData) -> Result<()> {
    let bytes = encode_raw(data)?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Reads a raw file. A sinogram's kind comes from its sidecar when present,
/// otherwise it is read as expected counts.
pub fn read_raw(path: &Path) -> Result<RawData> {
    let bytes = fs::read(path)?;
    let kind = match read_sidecar(path) {
        Ok(sc) => sc.sinogram_kind.unwrap_or(SinogramKind::Expected),
        Err(_) => SinogramKind::Expected,
    };
    decode_raw(&bytes, kind)
}

pub fn write_image(path: &Path, img: &Image3D) -> Result<()> {
    write_raw(path, &RawData::Image(img.clone()))
}

pub fn read_image(path: &Path) -> Result<Image3D> {
    match read_raw(path)? {
        RawData::Image(img) => Ok(img),
        RawData::Sinogram(_) => Err(Error::format(format!("{} holds a sinogram, expected a volume", path.display()))),
    }
}

/// Writes the sinogram together with a sidecar recording its kind.
pub fn write_sinogram(path: &Path, sino: &Sinogram, mut meta: Sidecar) -> Result<()> {
    write_raw(path, &RawData::Sinogram(sino.clone()))?;
    meta.sinogram_kind = Some(sino.kind());
    write_sidecar(path, &meta)
}

pub fn read_sinogram(path: &Path) -> Result<Sinogram> {
    match read_raw(path)? {
        RawData::Sinogram(s) => Ok(s),
        RawData::Image(_) => Err(Error::format(format!("{} holds a volume, expected a sinogram", path.display()))),
    }
}

pub fn write_sidecar(raw_path: &Path, meta: &Sidecar) -> Result<()> {
    let mut text = serde_json::to_string_pretty(meta)?;
    text.push('\n');
    fs::write(sidecar_path(raw_path), text)?;
    Ok(())
}

pub fn read_sidecar(raw_path: &Path) -> Result<Sidecar> {
    let text = fs::read_to_string(sidecar_path(raw_path))?;
    Ok(serde_json::from_str(&text)?)
}
