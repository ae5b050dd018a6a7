//! NPY I/O for little-endian `<f4` and `|u1` C-order arrays.

use std::fs;
use std::path::Path;

use npyz::{DType, NpyFile, NpyHeader, Order, WriteOptions, WriterBuilder};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{Backbone, BinaryMask, ConfidenceMap, FeatureMap};

#[derive(Debug, Clone, PartialEq)]
pub enum NpyData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: NpyData,
}

/// Typed result of [`load_npy`], dispatched on dtype and rank.
#[derive(Debug, Clone, PartialEq)]
pub enum Loaded {
    /// `(h, w, c)` float32. Tagged [`Backbone::Sam`] until retagged by the caller.
    Features(FeatureMap<f32>),
    /// `(H, W)` uint8, binarized by `v != 0`.
    Mask(BinaryMask),
    /// `(H, W)` float32 field, e.g. a confidence map or an intensity scene.
    Field(ConfidenceMap<f32>),
}

pub fn load_npy(path: impl AsRef<Path>) -> Result<Loaded> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let arr = decode(&bytes)?;
    match (arr.shape.as_slice(), arr.data) {
        (&[h, w, c], NpyData::F32(v)) => Ok(Loaded::Features(FeatureMap::new(h, w, c, v, Backbone::Sam)?)),
        (&[h, w], NpyData::U8(v)) => Ok(Loaded::Mask(BinaryMask::from_vec(
            h,
            w,
            v.into_iter().map(|b| b != 0).collect(),
        )?)),
        (&[h, w], NpyData::F32(v)) => Ok(Loaded::Field(ConfidenceMap::new(h, w, v)?)),
        (shape, data) => Err(Error::Format(format!(
            "unsupported rank/dtype combination: shape {shape:?}, dtype {}",
            match data {
                NpyData::F32(_) => "<f4",
                NpyData::U8(_) => "|u1",
            }
        ))),
    }
}

pub fn load_features(path: impl AsRef<Path>, backbone: Backbone) -> Result<FeatureMap<f32>> {
    let path = path.as_ref();
    match load_npy(path)? {
        Loaded::Features(f) => Ok(f.with_backbone(backbone)),
        _ => Err(Error::Format(format!(
            "{}: expected (h, w, c) float32 features",
            path.display()
        ))),
    }
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    match load_npy(path)? {
        Loaded::Mask(m) => Ok(m),
        _ => Err(Error::Format(format!("{}: expected (H, W) uint8 mask", path.display()))),
    }
}

pub fn load_field(path: impl AsRef<Path>) -> Result<ConfidenceMap<f32>> {
    let path = path.as_ref();
    match load_npy(path)? {
        Loaded::Field(m) => Ok(m),
        _ => Err(Error::Format(format!(
            "{}: expected (H, W) float32 field",
            path.display()
        ))),
    }
}

pub fn save_features<T: Scalar>(path: impl AsRef<Path>, f: &FeatureMap<T>) -> Result<()> {
    let data = f.as_slice().iter().map(|v| v.as_f64() as f32).collect();
    write_file(
        path,
        &NpyArray {
            shape: vec![f.height(), f.width(), f.channels()],
            data: NpyData::F32(data),
        },
    )
}

pub fn save_mask(path: impl AsRef<Path>, m: &BinaryMask) -> Result<()> {
    let data = m.as_slice().iter().map(|&b| b as u8).collect();
    write_file(
        path,
        &NpyArray {
            shape: vec![m.height(), m.width()],
            data: NpyData::U8(data),
        },
    )
}

pub fn save_field<T: Scalar>(path: impl AsRef<Path>, m: &ConfidenceMap<T>) -> Result<()> {
    let data = m.as_slice().iter().map(|v| v.as_f64() as f32).collect();
    write_file(
        path,
        &NpyArray {
            shape: vec![m.height(), m.width()],
            data: NpyData::F32(data),
        },
    )
}

fn write_file(path: impl AsRef<Path>, arr: &NpyArray) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(arr)).map_err(|e| Error::io(path, e))
}

/// Serializes as NPY (v1.0 unless the header needs more room).
pub fn encode(arr: &NpyArray) -> Vec<u8> {
    fn write<T: npyz::AutoSerialize + Copy>(shape: &[usize], data: &[T]) -> std::io::Result<Vec<u8>> {
        let mut out = Vec::new();
        let shape: Vec<u64> = shape.iter().map(|&d| d as u64).collect();
        let mut w = WriteOptions::new()
            .default_dtype()
            .shape(&shape)
            .writer(&mut out)
            .begin_nd()?;
        w.extend(data.iter().copied())?;
        w.finish()?;
        Ok(out)
    }
    match &arr.data {
        NpyData::F32(v) => write(&arr.shape, v),
        NpyData::U8(v) => write(&arr.shape, v),
    }
    .expect("writing to memory cannot fail")
}

pub fn decode(bytes: &[u8]) -> Result<NpyArray> {
    let format = |e: std::io::Error| Error::Format(e.to_string());
    let mut body = bytes;
    let header = NpyHeader::from_reader(&mut body).map_err(format)?;
    if header.order() == Order::Fortran {
        return Err(Error::UnsupportedLayout(
            "fortran_order arrays are not supported".into(),
        ));
    }
    let shape: Vec<usize> = header.shape().iter().map(|&d| d as usize).collect();
    let count: usize = shape.iter().product();
    let descr = match header.dtype() {
        DType::Plain(t) => t.to_string(),
        d => return Err(Error::Format(format!("unsupported dtype {}", d.descr()))),
    };
    let width = match descr.as_str() {
        "<f4" => 4,
        "|u1" | "<u1" => 1,
        d => return Err(Error::Format(format!("unsupported dtype {d}"))),
    };
    if body.len() != count * width {
        return Err(Error::Format(format!(
            "expected {} payload bytes, got {}",
            count * width,
            body.len()
        )));
    }
    let file = NpyFile::with_header(header, body);
    let data = if width == 4 {
        NpyData::F32(file.into_vec().map_err(format)?)
    } else {
        NpyData::U8(file.into_vec().map_err(format)?)
    };
    Ok(NpyArray { shape, data })
}
