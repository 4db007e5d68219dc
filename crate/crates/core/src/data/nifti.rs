//! Gzip-compressed single-file NIfTI-1 (`.nii.gz`) reading and writing.
//!
//! Volumes are stored with `dim = [3, W, H, D]`, so the file's fastest axis is
//! our W axis and no reordering is needed.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{SampleMeta, VolumeSample};
use crate::error::IoContext;
use crate::{Error, Result};

const HEADER: usize = 348;
const VOX_OFFSET: usize = 352;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;
const DT_UINT16: i16 = 512;

/// Voxel payload of a NIfTI file.
#[derive(Clone, Debug, PartialEq)]
pub enum Voxels {
    U8(Vec<u8>),
    F32(Vec<f32>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct NiftiVolume {
    /// `(D, H, W)`.
    pub shape: [usize; 3],
    pub voxels: Voxels,
}

fn header(shape: [usize; 3], datatype: i16, bitpix: i16) -> Vec<u8> {
    let mut h = vec![0u8; VOX_OFFSET];
    let put_i16 = |h: &mut [u8], at: usize, v: i16| h[at..at + 2].copy_from_slice(&v.to_le_bytes());
    let put_f32 = |h: &mut [u8], at: usize, v: f32| h[at..at + 4].copy_from_slice(&v.to_le_bytes());
    h[0..4].copy_from_slice(&(HEADER as i32).to_le_bytes());
    h[38] = b'r';
    let dims = [3, shape[2], shape[1], shape[0], 1, 1, 1, 1];
    for (i, d) in dims.iter().enumerate() {
        put_i16(&mut h, 40 + 2 * i, i16::try_from(*d).expect("extent fits the NIfTI-1 header"));
    }
    put_i16(&mut h, 70, datatype);
    put_i16(&mut h, 72, bitpix);
    for i in 0..8 {
        put_f32(&mut h, 76 + 4 * i, 1.0);
    }
    put_f32(&mut h, 108, VOX_OFFSET as f32);
    put_f32(&mut h, 112, 1.0);
    h[123] = 2; // millimetres
    put_i16(&mut h, 254, 1); // sform: scanner coordinates
    for (row, at) in [280usize, 296, 312].iter().enumerate() {
        put_f32(&mut h, at + 4 * row, 1.0);
    }
    h[344..348].copy_from_slice(b"n+1\0");
    h
}

pub fn write_nifti(path: &Path, shape: [usize; 3], voxels: &Voxels) -> Result<()> {
    let (dt, bitpix, payload): (i16, i16, Vec<u8>) = match voxels {
        Voxels::U8(v) => (DT_UINT8, 8, v.clone()),
        Voxels::F32(v) => (DT_FLOAT32, 32, v.iter().flat_map(|x| x.to_le_bytes()).collect()),
    };
    let n: usize = shape.iter().product();
    let count = match voxels {
        Voxels::U8(v) => v.len(),
        Voxels::F32(v) => v.len(),
    };
    if count != n {
        return Err(Error::Shape(format!("shape {shape:?} needs {n} voxels, got {count}")));
    }
    if shape.iter().any(|&d| d > i16::MAX as usize) {
        return Err(Error::Shape(format!("extent in {shape:?} exceeds the NIfTI-1 limit")));
    }
    let file = File::create(path).at(path)?;
    let mut gz = GzEncoder::new(BufWriter::new(file), Compression::default());
    gz.write_all(&header(shape, dt, bitpix)).at(path)?;
    gz.write_all(&payload).at(path)?;
    gz.finish().and_then(|mut w| w.flush()).at(path)
}

pub fn read_nifti(path: &Path) -> Result<NiftiVolume> {
    let fail = |reason: String| Error::Format { path: path.to_path_buf(), reason };
    let file = File::open(path).at(path)?;
    let mut bytes = Vec::new();
    GzDecoder::new(BufReader::new(file)).read_to_end(&mut bytes).map_err(|e| fail(format!("gzip: {e}")))?;
    if bytes.len() < HEADER {
        return Err(fail("truncated header".into()));
    }
    let i16_at = |at: usize| i16::from_le_bytes([bytes[at], bytes[at + 1]]);
    let f32_at = |at: usize| f32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]);
    if i32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) != HEADER as i32 {
        return Err(fail("not a little-endian NIfTI-1 header".into()));
    }
    if &bytes[344..348] != b"n+1\0" {
        return Err(fail("not a single-file NIfTI-1 volume".into()));
    }
    let ndim = i16_at(40);
    if !(1..=7).contains(&ndim) {
        return Err(fail(format!("invalid dimension count {ndim}")));
    }
    let dims: Vec<usize> = (1..=ndim as usize).map(|i| i16_at(40 + 2 * i).max(1) as usize).collect();
    if dims.iter().skip(3).any(|&d| d != 1) {
        return Err(fail(format!("expected a 3D volume, got dims {dims:?}")));
    }
    let extent = |i: usize| dims.get(i).copied().unwrap_or(1);
    let shape = [extent(2), extent(1), extent(0)];
    let n: usize = shape.iter().product();
    let offset = f32_at(108) as usize;
    let (slope, inter) = (f32_at(112), f32_at(116));
    let datatype = i16_at(70);
    let width = match datatype {
        DT_UINT8 => 1,
        DT_INT16 | DT_UINT16 => 2,
        DT_INT32 | DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => return Err(fail(format!("unsupported datatype code {other}"))),
    };
    let data = bytes.get(offset..offset + n * width).ok_or_else(|| fail(format!("payload shorter than {n} voxels")))?;
    let scaled = slope != 0.0 && (slope != 1.0 || inter != 0.0);
    let voxels = if datatype == DT_UINT8 && !scaled {
        Voxels::U8(data.to_vec())
    } else {
        let raw: Vec<f64> = data
            .chunks_exact(width)
            .map(|c| match datatype {
                DT_UINT8 => c[0] as f64,
                DT_INT16 => i16::from_le_bytes([c[0], c[1]]) as f64,
                DT_UINT16 => u16::from_le_bytes([c[0], c[1]]) as f64,
                DT_INT32 => i32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64,
                DT_FLOAT32 => f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64,
                _ => f64::from_le_bytes(c.try_into().expect("8-byte chunk")),
            })
            .collect();
        let f = |v: f64| if scaled { v * slope as f64 + inter as f64 } else { v };
        Voxels::F32(raw.into_iter().map(|v| f(v) as f32).collect())
    };
    Ok(NiftiVolume { shape, voxels })
}

/// Writes the image (float32) and labels (uint8) as two `.nii.gz` files.
pub fn save_nifti_pair(s: &VolumeSample, image: &Path, labels: &Path) -> Result<()> {
    s.validate()?;
    write_nifti(image, s.shape, &Voxels::F32(s.image.clone()))?;
    write_nifti(labels, s.shape, &Voxels::U8(s.labels.clone()))
}

pub fn load_nifti_pair(image: &Path, labels: &Path) -> Result<VolumeSample> {
    let img = read_nifti(image)?;
    let lab = read_nifti(labels)?;
    if img.shape != lab.shape {
        return Err(Error::Shape(format!("image shape {:?} differs from label shape {:?}", img.shape, lab.shape)));
    }
    let image = match img.voxels {
        Voxels::F32(v) => v,
        Voxels::U8(v) => v.into_iter().map(f32::from).collect(),
    };
    let labels = match lab.voxels {
        Voxels::U8(v) => v,
        Voxels::F32(v) => {
            if let Some(x) = v.iter().find(|x| x.fract() != 0.0 || **x < 0.0 || **x > 255.0) {
                return Err(Error::Format { path: labels.to_path_buf(), reason: format!("non-integer label value {x}") });
            }
            v.into_iter().map(|x| x as u8).collect()
        }
    };
    VolumeSample::new(img.shape, image, labels, SampleMeta::default())
}
