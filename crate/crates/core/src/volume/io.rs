//! VV1 volume files: a JSON sidecar plus a raw little-endian f32 payload.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Image2D, Volume3D};
use crate::error::{Error, Result};

pub const VV1: &str = "VV1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    pub format: String,
    pub dims: [usize; 3],
    pub voxel_size_nm: [f64; 3],
    pub dtype: String,
    pub byte_order: String,
}

/// Strips a `.json` / `.raw` suffix so either file (or the bare stem) names the pair.
pub(crate) fn stem(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("raw") => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

pub(crate) fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub(crate) fn write_f32(path: &Path, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for &v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub(crate) fn read_f32(path: &Path, count: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() != count * 4 {
        return Err(Error::PayloadLength {
            path: path.to_path_buf(),
            expected: count * 4,
            found: bytes.len(),
        });
    }
    let mut out = Vec::with_capacity(count);
    for (index, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64;
        if !v.is_finite() {
            return Err(Error::NonFinite { index });
        }
        out.push(v);
    }
    Ok(out)
}

fn read_header(path: &Path) -> Result<VolumeHeader> {
    let text = fs::read_to_string(path)?;
    let header: VolumeHeader = serde_json::from_str(&text).map_err(|e| Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let bad = |reason: String| Error::MalformedHeader {
        path: path.to_path_buf(),
        reason,
    };
    if header.format != VV1 {
        return Err(bad(format!("format {:?}, expected {VV1:?}", header.format)));
    }
    if header.dtype != "f32" {
        return Err(bad(format!("dtype {:?}, expected \"f32\"", header.dtype)));
    }
    if header.byte_order != "little" {
        return Err(bad(format!("byte_order {:?}, expected \"little\"", header.byte_order)));
    }
    if header.dims.contains(&0) {
        return Err(Error::config(format!(
            "volume dims must all be >= 1, got {:?}",
            header.dims
        )));
    }
    Ok(header)
}

/// Writes `<stem>.json` and `<stem>.raw`. Samples are narrowed to f32.
pub fn write_volume(volume: &Volume3D, path: impl AsRef<Path>) -> Result<()> {
    let stem = stem(path.as_ref());
    if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let (nx, ny, nz) = volume.dims();
    let header = VolumeHeader {
        format: VV1.into(),
        dims: [nx, ny, nz],
        voxel_size_nm: volume.voxel_size(),
        dtype: "f32".into(),
        byte_order: "little".into(),
    };
    fs::write(with_suffix(&stem, ".json"), serde_json::to_string_pretty(&header)?)?;
    write_f32(&with_suffix(&stem, ".raw"), volume.data())
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume3D> {
    let stem = stem(path.as_ref());
    let header = read_header(&with_suffix(&stem, ".json"))?;
    let [nx, ny, nz] = header.dims;
    let data = read_f32(&with_suffix(&stem, ".raw"), nx * ny * nz)?;
    Volume3D::with_voxel_size((nx, ny, nz), header.voxel_size_nm, data)
}

/// A 2D image stored as a VV1 volume with `nz = 1`.
pub fn write_image(image: &Image2D, path: impl AsRef<Path>) -> Result<()> {
    let vol = Volume3D::new((image.nx, image.ny, 1), image.data.clone())?;
    write_volume(&vol, path)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Image2D> {
    let vol = read_volume(&path)?;
    let (nx, ny, nz) = vol.dims();
    if nz != 1 {
        return Err(Error::shape("nz = 1", format!("nz = {nz}")));
    }
    Image2D::new(nx, ny, vol.into_data())
}

/// Writes a packed bitmap: LSB-first bits in storage order.
pub(crate) fn write_bitmask(path: &Path, bits: &[bool]) -> Result<()> {
    let mut bytes = vec![0u8; bits.len().div_ceil(8)];
    for (i, _) in bits.iter().enumerate().filter(|(_, b)| **b) {
        bytes[i / 8] |= 1 << (i % 8);
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub(crate) fn read_bitmask(path: &Path, len: usize) -> Result<Vec<bool>> {
    let bytes = fs::read(path)?;
    if bytes.len() != len.div_ceil(8) {
        return Err(Error::PayloadLength {
            path: path.to_path_buf(),
            expected: len.div_ceil(8),
            found: bytes.len(),
        });
    }
    Ok((0..len).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect())
}
