//! HDF5 volumes and sinogram stacks in the data-exchange layout.
//!
//! Volumes: `/exchange/data`, `f32` `(D, H, W)`. Sinogram stacks:
//! `/exchange/data`, `f32` `(angles, D, W)`, and `/exchange/theta`, `f64`
//! radians (degrees are accepted on load when `theta` carries
//! `units = "deg"`). Metadata lives in attributes of `/exchange/data`;
//! `digest` is the SHA-256 of the dims and little-endian payload.

use std::collections::BTreeMap;
use std::ffi::CString;
use std::path::Path;
use std::str::FromStr;

use hdf5::types::{FixedAscii, FixedUnicode, TypeDescriptor, VarLenAscii, VarLenUnicode};
use ndarray::{Array2, Array3, Axis};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::projector::{Sinogram, SinogramKind};
use crate::volume::{Provenance, Volume};

#[derive(Debug, Clone, PartialEq)]
pub enum AttrValue {
    Num(f64),
    Text(String),
}

impl AttrValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            AttrValue::Num(v) => Some(*v),
            AttrValue::Text(s) => s.parse().ok(),
        }
    }

    pub fn as_text(&self) -> String {
        match self {
            AttrValue::Num(v) => v.to_string(),
            AttrValue::Text(s) => s.clone(),
        }
    }
}

pub type Attrs = BTreeMap<String, AttrValue>;

const RESERVED: [&str; 4] = ["digest", "provenance", "voxel_size", "kind"];

fn h5err(path: &Path) -> impl Fn(hdf5::Error) -> Error + '_ {
    move |e| Error::Hdf5 {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

/// Hex SHA-256 over dims (`u64` LE) and values (`f32` LE).
pub fn payload_digest(dims: &[usize], values: impl Iterator<Item = f32>) -> String {
    let mut h = Sha256::new();
    for d in dims {
        h.update((*d as u64).to_le_bytes());
    }
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub fn volume_digest(v: &Volume) -> String {
    let (d, h, w) = v.dims();
    payload_digest(&[d, h, w], v.data.iter().copied())
}

/// `/exchange` without modification-time fields, so identical content gives
/// identical bytes.
fn create_exchange(file: &hdf5::File, path: &Path) -> Result<hdf5::Group> {
    use hdf5_sys::{h5g, h5i::hid_t, h5p};
    let name = CString::new("exchange").expect("static name");
    let fail = || Error::Hdf5 {
        path: path.to_path_buf(),
        reason: "cannot create /exchange".into(),
    };
    // SAFETY: plain HDF5 C calls on a valid open file id; every id created
    // here is closed before returning.
    let created = hdf5::sync::sync(|| unsafe {
        let gcpl: hid_t = h5p::H5Pcreate(*h5p::H5P_CLS_GROUP_CREATE);
        if gcpl < 0 {
            return false;
        }
        h5p::H5Pset_obj_track_times(gcpl, 0);
        let gid = h5g::H5Gcreate2(file.id(), name.as_ptr(), h5p::H5P_DEFAULT, gcpl, h5p::H5P_DEFAULT);
        h5p::H5Pclose(gcpl);
        gid >= 0 && h5g::H5Gclose(gid) >= 0
    });
    if !created {
        return Err(fail());
    }
    file.group("exchange").map_err(h5err(path))
}

fn write_attrs(ds: &hdf5::Dataset, attrs: &Attrs, path: &Path) -> Result<()> {
    for (k, v) in attrs {
        match v {
            AttrValue::Num(x) => {
                let a = ds.new_attr::<f64>().shape(()).create(k.as_str()).map_err(h5err(path))?;
                a.as_writer().write_scalar(x).map_err(h5err(path))?;
            }
            AttrValue::Text(s) => {
                let a = ds
                    .new_attr::<VarLenUnicode>()
                    .shape(())
                    .create(k.as_str())
                    .map_err(h5err(path))?;
                let s = VarLenUnicode::from_str(s).map_err(|e| Error::Hdf5 {
                    path: path.to_path_buf(),
                    reason: format!("attribute {k}: {e}"),
                })?;
                a.as_writer().write_scalar(&s).map_err(h5err(path))?;
            }
        }
    }
    Ok(())
}

/// Scalar string attribute in any of the common HDF5 string encodings.
fn text_attr(a: &hdf5::Attribute) -> Option<String> {
    let r = a.as_reader();
    match a.dtype().and_then(|t| t.to_descriptor()).ok()? {
        TypeDescriptor::VarLenUnicode => r.read_scalar::<VarLenUnicode>().ok().map(|s| s.as_str().to_string()),
        TypeDescriptor::VarLenAscii => r.read_scalar::<VarLenAscii>().ok().map(|s| s.as_str().to_string()),
        TypeDescriptor::FixedAscii(n) if n <= 256 => {
            r.read_scalar::<FixedAscii<256>>().ok().map(|s| s.as_str().to_string())
        }
        TypeDescriptor::FixedUnicode(n) if n <= 256 => {
            r.read_scalar::<FixedUnicode<256>>().ok().map(|s| s.as_str().to_string())
        }
        _ => None,
    }
}

fn read_attrs(ds: &hdf5::Dataset, path: &Path) -> Result<Attrs> {
    let mut out = Attrs::new();
    for name in ds.attr_names().map_err(h5err(path))? {
        let a = ds.attr(&name).map_err(h5err(path))?;
        // Dispatch on the stored type; a failed conversion probe makes the
        // C library print diagnostics.
        let desc = a.dtype().and_then(|t| t.to_descriptor()).map_err(h5err(path))?;
        let r = a.as_reader();
        match desc {
            TypeDescriptor::Float(_) | TypeDescriptor::Integer(_) | TypeDescriptor::Unsigned(_) => {
                out.insert(name, AttrValue::Num(r.read_scalar::<f64>().map_err(h5err(path))?));
            }
            _ => {
                if let Some(t) = text_attr(&a) {
                    out.insert(name, AttrValue::Text(t));
                }
            }
        }
    }
    Ok(out)
}

/// Writes into a sibling temporary file, then renames over `path`.
fn write_h5(path: &Path, body: impl FnOnce(&hdf5::File, &Path) -> Result<()>) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let tmp = tempfile::Builder::new()
        .suffix(".h5.tmp")
        .tempfile_in(dir)
        .map_err(|e| Error::io(dir, e))?;
    {
        let file = hdf5::File::create(tmp.path()).map_err(h5err(path))?;
        body(&file, path)?;
        file.close().map_err(h5err(path))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Saves a volume with extra attributes. Returns the payload digest.
pub fn save_volume(path: &Path, volume: &Volume, attrs: &Attrs) -> Result<String> {
    let digest = volume_digest(volume);
    write_h5(path, |file, path| {
        let g = create_exchange(file, path)?;
        let ds = g
            .new_dataset_builder()
            .obj_track_times(false)
            .with_data(&volume.data)
            .create("data")
            .map_err(h5err(path))?;
        let mut all = attrs.clone();
        for k in RESERVED {
            all.remove(k);
        }
        all.insert("digest".into(), AttrValue::Text(digest.clone()));
        all.insert("provenance".into(), AttrValue::Text(volume.provenance.as_str().into()));
        all.insert("voxel_size".into(), AttrValue::Num(volume.voxel_size as f64));
        write_attrs(&ds, &all, path)
    })?;
    Ok(digest)
}

fn check_digest(attrs: &Attrs, actual: &str, path: &Path) -> Result<()> {
    if let Some(stored) = attrs.get("digest") {
        if stored.as_text() != actual {
            return Err(Error::CorruptFile {
                path: path.to_path_buf(),
                reason: format!("digest mismatch: stored {}, computed {actual}", stored.as_text()),
            });
        }
    }
    Ok(())
}

fn open_data(path: &Path) -> Result<(hdf5::File, hdf5::Dataset)> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ));
    }
    let file = hdf5::File::open(path).map_err(h5err(path))?;
    let ds = file.dataset("exchange/data").map_err(h5err(path))?;
    Ok((file, ds))
}

/// Loads `/exchange/data`. Files without a digest attribute (e.g. facility
/// data) are accepted; provenance defaults to low-dose.
pub fn load_volume(path: &Path) -> Result<(Volume, Attrs)> {
    let (_file, ds) = open_data(path)?;
    let data: Array3<f32> = ds.read::<f32, ndarray::Ix3>().map_err(h5err(path))?;
    let attrs = read_attrs(&ds, path)?;
    let provenance = match attrs.get("provenance") {
        Some(p) => Provenance::parse(&p.as_text()).ok_or_else(|| Error::CorruptFile {
            path: path.to_path_buf(),
            reason: format!("unknown provenance `{}`", p.as_text()),
        })?,
        None => Provenance::LowDose,
    };
    let mut volume = Volume::new(data, provenance)?;
    if let Some(v) = attrs.get("voxel_size").and_then(AttrValue::as_f64) {
        volume.voxel_size = v as f32;
    }
    check_digest(&attrs, &volume_digest(&volume), path)?;
    Ok((volume, attrs))
}

pub fn sinogram_digest(sinos: &[Sinogram]) -> String {
    let (a, w) = sinos.first().map(|s| s.data.dim()).unwrap_or((0, 0));
    let mut h = Sha256::new();
    for d in [a, sinos.len(), w] {
        h.update((d as u64).to_le_bytes());
    }
    for s in sinos {
        for v in s.data.iter() {
            h.update(v.to_le_bytes());
        }
        for t in &s.angles {
            h.update(t.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Saves per-slice sinograms sharing one angle list. Returns the digest.
pub fn save_sinograms(path: &Path, sinos: &[Sinogram], attrs: &Attrs) -> Result<String> {
    let first = sinos
        .first()
        .ok_or_else(|| Error::InvalidSpec("no sinograms to save".into()))?;
    let (a, w) = first.data.dim();
    for (i, s) in sinos.iter().enumerate() {
        if s.data.dim() != (a, w) || s.angles != first.angles || s.kind != first.kind {
            return Err(Error::Shape(format!("sinogram {i} does not match sinogram 0")));
        }
    }
    let mut data = Array3::<f32>::zeros((a, sinos.len(), w));
    for (i, s) in sinos.iter().enumerate() {
        data.index_axis_mut(Axis(1), i).assign(&s.data);
    }
    let digest = sinogram_digest(sinos);
    write_h5(path, |file, path| {
        let g = create_exchange(file, path)?;
        let ds = g
            .new_dataset_builder()
            .obj_track_times(false)
            .with_data(&data)
            .create("data")
            .map_err(h5err(path))?;
        let theta = ndarray::Array1::from(first.angles.clone());
        let th = g
            .new_dataset_builder()
            .obj_track_times(false)
            .with_data(&theta)
            .create("theta")
            .map_err(h5err(path))?;
        let units = th.new_attr::<VarLenUnicode>().shape(()).create("units").map_err(h5err(path))?;
        units
            .as_writer()
            .write_scalar(&VarLenUnicode::from_str("rad").expect("ascii"))
            .map_err(h5err(path))?;
        let mut all = attrs.clone();
        for k in RESERVED {
            all.remove(k);
        }
        all.insert("digest".into(), AttrValue::Text(digest.clone()));
        all.insert("kind".into(), AttrValue::Text(first.kind.as_str().into()));
        write_attrs(&ds, &all, path)
    })?;
    Ok(digest)
}

pub fn load_sinograms(path: &Path) -> Result<(Vec<Sinogram>, Attrs)> {
    let (file, ds) = open_data(path)?;
    let data: Array3<f32> = ds.read::<f32, ndarray::Ix3>().map_err(h5err(path))?;
    let th = file.dataset("exchange/theta").map_err(h5err(path))?;
    let mut angles: Vec<f64> = th.read_raw::<f64>().map_err(h5err(path))?;
    let degrees = th
        .attr("units")
        .ok()
        .and_then(|a| text_attr(&a))
        .is_some_and(|u| matches!(u.trim(), "deg" | "degree" | "degrees"));
    if degrees {
        angles.iter_mut().for_each(|t| *t = t.to_radians());
    }
    let attrs = read_attrs(&ds, path)?;
    let kind = match attrs.get("kind") {
        Some(k) => SinogramKind::parse(&k.as_text()).ok_or_else(|| Error::CorruptFile {
            path: path.to_path_buf(),
            reason: format!("unknown sinogram kind `{}`", k.as_text()),
        })?,
        None => SinogramKind::LineIntegral,
    };
    let (a, n, _) = data.dim();
    if a != angles.len() {
        return Err(Error::CorruptFile {
            path: path.to_path_buf(),
            reason: format!("{a} projections but {} angles", angles.len()),
        });
    }
    let sinos = (0..n)
        .map(|i| {
            let rows: Array2<f32> = data.index_axis(Axis(1), i).to_owned();
            Sinogram::new(rows, angles.clone(), kind)
        })
        .collect::<Result<Vec<_>>>()?;
    check_digest(&attrs, &sinogram_digest(&sinos), path)?;
    Ok((sinos, attrs))
}

/// Hex SHA-256 of a file's bytes.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
