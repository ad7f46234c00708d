//! Raw volume files and slice export.
//!
//! A volume `<name>.vol` is a payload of little-endian `f32` values, row-major
//! within each slice, slices concatenated. Its sidecar `<name>.vol.json` holds
//! `{"patient_id", "height", "width", "slices"}`.
//!
//! Values are stored as `f32`, so a `Volume<f32>` round-trips bit-exactly and a
//! `Volume<f64>` round-trips exactly whenever its values are `f32`-representable.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Dataset, DomainLabel, Image, Volume};
use crate::scalar::Scalar;

pub const VOLUME_EXT: &str = "vol";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    pub patient_id: String,
    pub height: usize,
    pub width: usize,
    pub slices: usize,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn read_header(path: &Path) -> Result<VolumeHeader> {
    let hp = sidecar_path(path);
    let text = fs::read_to_string(&hp).map_err(|e| Error::Header {
        path: hp.clone(),
        msg: format!("cannot read sidecar: {e}"),
    })?;
    let header: VolumeHeader = serde_json::from_str(&text).map_err(|e| Error::Header {
        path: hp.clone(),
        msg: e.to_string(),
    })?;
    if header.height == 0 || header.width == 0 || header.slices == 0 {
        return Err(Error::Header {
            path: hp,
            msg: format!(
                "contradictory dimensions {}x{}x{}",
                header.height, header.width, header.slices
            ),
        });
    }
    Ok(header)
}

pub fn load_volume<T: Scalar>(path: impl AsRef<Path>) -> Result<Volume<T>> {
    let path = path.as_ref();
    let header = read_header(path)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let plane = header.height * header.width;
    let expected = (plane * header.slices * 4) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::LengthMismatch {
            path: path.to_owned(),
            expected,
            found: bytes.len() as u64,
        });
    }
    let mut slices = Vec::with_capacity(header.slices);
    for (s, chunk) in bytes.chunks_exact(plane * 4).enumerate() {
        let mut data = Vec::with_capacity(plane);
        for (i, b) in chunk.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    path: path.to_owned(),
                    index: s * plane + i,
                });
            }
            data.push(T::lit(v as f64));
        }
        slices.push(Image::new(header.height, header.width, data)?);
    }
    Volume::new(header.patient_id, slices)
}

pub fn save_volume<T: Scalar>(v: &Volume<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (height, width) = v.dims();
    let mut payload = Vec::with_capacity(height * width * v.len() * 4);
    for s in v.slices() {
        for &x in s.as_slice() {
            payload.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
        }
    }
    fs::write(path, &payload).map_err(|e| Error::io(path, e))?;
    let header = VolumeHeader {
        patient_id: v.patient_id().to_owned(),
        height,
        width,
        slices: v.len(),
    };
    let hp = sidecar_path(path);
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    fs::write(&hp, text + "\n").map_err(|e| Error::io(hp, e))
}

/// Writes one slice as a 16-bit binary PGM, mapping `[0, 1]` linearly onto `[0, 65535]`.
pub fn export_pgm<T: Scalar>(img: &Image<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!("P5\n{} {}\n65535\n", img.width(), img.height()).into_bytes();
    for &v in img.as_slice() {
        let q = (v.as_f64().clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// All `*.vol` files in `dir`, sorted by file name.
pub fn list_volumes(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_file() && p.extension().is_some_and(|e| e == VOLUME_EXT) {
            paths.push(p);
        }
    }
    paths.sort();
    Ok(paths)
}

pub fn load_dataset<T: Scalar>(dir: impl AsRef<Path>, label: DomainLabel) -> Result<Dataset<T>> {
    let volumes = list_volumes(dir)?
        .iter()
        .map(load_volume)
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(label, volumes)
}

/// Writes each volume as `<dir>/<patient_id>.vol`.
pub fn save_dataset<T: Scalar>(ds: &Dataset<T>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for v in ds.volumes() {
        save_volume(v, dir.join(format!("{}.{VOLUME_EXT}", v.patient_id())))?;
    }
    Ok(())
}
