//! Scalar 3D volumes: loading, saving and symmetric zero-padding.
//!
//! Voxels are stored x-fastest (`index = x + nx * (y + ny * z)`). The x axis
//! stacks sagittal slices, y stacks coronal slices and z stacks axial slices.
//!
//! Two on-disk formats are understood:
//! - a strict NIfTI-1 subset (single-file `.nii`, little-endian, float32),
//! - raw little-endian float32 with a JSON sidecar next to it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Canonical grid of the padded volumes.
pub const DEFAULT_GRID: [usize; 3] = [256, 256, 208];

const NIFTI_HEADER_SIZE: usize = 348;
const NIFTI_DT_FLOAT32: i16 = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct Volume3D {
    dims: [usize; 3],
    data: Vec<f32>,
}

impl Volume3D {
    pub fn new(dims: [usize; 3], data: Vec<f32>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Dimension(format!("zero-sized dimension in {dims:?}")));
        }
        let expected = dims[0] * dims[1] * dims[2];
        if data.len() != expected {
            return Err(Error::Corruption(format!(
                "dims {dims:?} need {expected} voxels, payload has {}",
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 3]) -> Result<Self> {
        Self::new(dims, vec![0.0; dims[0] * dims[1] * dims[2]])
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(dims, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    /// Number of voxels outside `[0, 1]`. With `strict` a nonzero count is an error.
    pub fn check_likelihood_range(&self, strict: bool) -> Result<usize> {
        let outside = self.data.iter().filter(|v| !(0.0..=1.0).contains(*v)).count();
        if strict && outside > 0 {
            return Err(Error::Range(format!(
                "{outside} voxel(s) outside [0, 1] in a likelihood map"
            )));
        }
        Ok(outside)
    }
}

fn check_finite(data: &[f32]) -> Result<()> {
    let mut count = 0;
    let mut first = None;
    for (i, v) in data.iter().enumerate() {
        if !v.is_finite() {
            count += 1;
            first.get_or_insert(i);
        }
    }
    match first {
        None => Ok(()),
        Some(first_index) => Err(Error::NonFinite { count, first_index }),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub target_dims: [usize; 3],
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            target_dims: DEFAULT_GRID,
        }
    }
}

impl GridSpec {
    pub fn new(target_dims: [usize; 3]) -> Self {
        Self { target_dims }
    }

    /// Parses `"256,256,208"`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parameter(format!("bad grid `{s}`: {e}")))?;
        match parts.as_slice() {
            &[x, y, z] if x > 0 && y > 0 && z > 0 => Ok(Self::new([x, y, z])),
            _ => Err(Error::Parameter(format!("grid `{s}` must be three positive integers"))),
        }
    }
}

/// Low and high pad widths for one axis. The odd remainder goes to the high side.
pub fn pad_widths(input: usize, target: usize) -> Result<(usize, usize)> {
    if target < input {
        return Err(Error::Dimension(format!(
            "target size {target} smaller than input size {input}"
        )));
    }
    let total = target - input;
    Ok((total / 2, total - total / 2))
}

pub fn pad_symmetric(vol: &Volume3D, grid: &GridSpec) -> Result<Volume3D> {
    let [nx, ny, nz] = vol.dims;
    let [tx, ty, tz] = grid.target_dims;
    let (lx, _) = pad_widths(nx, tx)?;
    let (ly, _) = pad_widths(ny, ty)?;
    let (lz, _) = pad_widths(nz, tz)?;
    if vol.dims == grid.target_dims {
        return Ok(vol.clone());
    }
    let mut out = vec![0.0f32; tx * ty * tz];
    for z in 0..nz {
        for y in 0..ny {
            let src = vol.index(0, y, z);
            let dst = lx + tx * ((y + ly) + ty * (z + lz));
            out[dst..dst + nx].copy_from_slice(&vol.data[src..src + nx]);
        }
    }
    Ok(Volume3D {
        dims: grid.target_dims,
        data: out,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VolumeFormat {
    Nifti1,
    /// Little-endian f32 payload plus a `.json` sidecar with the same stem.
    Raw,
}

impl VolumeFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("nii") => VolumeFormat::Nifti1,
            _ => VolumeFormat::Raw,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            VolumeFormat::Nifti1 => "nii",
            VolumeFormat::Raw => "raw",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawSidecar {
    pub dims: [usize; 3],
    pub dtype: String,
    pub order: String,
}

impl RawSidecar {
    pub fn for_dims(dims: [usize; 3]) -> Self {
        Self {
            dims,
            dtype: "f32".into(),
            order: "x-fastest".into(),
        }
    }
}

pub fn sidecar_path(raw: &Path) -> PathBuf {
    raw.with_extension("json")
}

pub fn load_volume(path: &Path, format: VolumeFormat) -> Result<Volume3D> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        VolumeFormat::Raw => {
            let side = sidecar_path(path);
            let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
            let meta: RawSidecar = serde_json::from_str(&text)?;
            if meta.dtype != "f32" {
                return Err(Error::Format(format!("unsupported raw dtype `{}`", meta.dtype)));
            }
            if meta.order != "x-fastest" {
                return Err(Error::Format(format!("unsupported voxel order `{}`", meta.order)));
            }
            let n: usize = meta.dims.iter().product();
            if bytes.len() != n * 4 {
                return Err(Error::Corruption(format!(
                    "sidecar dims {:?} need {} bytes, file has {}",
                    meta.dims,
                    n * 4,
                    bytes.len()
                )));
            }
            Volume3D::new(meta.dims, decode_f32(&bytes))
        }
        VolumeFormat::Nifti1 => parse_nifti(&bytes),
    }
}

pub fn save_volume(vol: &Volume3D, path: &Path, format: VolumeFormat) -> Result<()> {
    match format {
        VolumeFormat::Raw => {
            fs::write(path, encode_f32(&vol.data)).map_err(|e| Error::io(path, e))?;
            let side = sidecar_path(path);
            let json = serde_json::to_string(&RawSidecar::for_dims(vol.dims))?;
            fs::write(&side, json).map_err(|e| Error::io(&side, e))
        }
        VolumeFormat::Nifti1 => {
            fs::write(path, nifti_bytes(vol)).map_err(|e| Error::io(path, e))
        }
    }
}

fn decode_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

fn encode_f32(data: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len() * 4);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn le_i16(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn le_i32(b: &[u8], off: usize) -> i32 {
    i32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

fn le_f32(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

fn parse_nifti(bytes: &[u8]) -> Result<Volume3D> {
    if bytes.len() < NIFTI_HEADER_SIZE {
        return Err(Error::Corruption(format!(
            "file of {} bytes is shorter than a NIfTI-1 header",
            bytes.len()
        )));
    }
    match le_i32(bytes, 0) {
        348 => {}
        v if v.swap_bytes() == 348 => {
            return Err(Error::Format("big-endian NIfTI is not supported".into()))
        }
        v => return Err(Error::Format(format!("sizeof_hdr is {v}, expected 348"))),
    }
    if &bytes[344..347] != b"n+1" {
        return Err(Error::Format("not a single-file NIfTI-1 (magic `n+1`)".into()));
    }
    let ndim = le_i16(bytes, 40);
    let dim: Vec<i16> = (1..=7).map(|i| le_i16(bytes, 40 + 2 * i)).collect();
    if !(1..=7).contains(&ndim) || !(3..ndim as usize).all(|i| dim[i] == 1) {
        return Err(Error::Format(format!("only 3D volumes are supported, dim = {dim:?}")));
    }
    let mut dims = [1usize; 3];
    for (i, d) in dims.iter_mut().enumerate().take((ndim as usize).min(3)) {
        if dim[i] < 1 {
            return Err(Error::Corruption(format!("non-positive dim[{}] = {}", i + 1, dim[i])));
        }
        *d = dim[i] as usize;
    }
    let datatype = le_i16(bytes, 70);
    if datatype != NIFTI_DT_FLOAT32 {
        return Err(Error::Format(format!(
            "unsupported NIfTI datatype code {datatype} (only float32 = 16)"
        )));
    }
    let vox_offset = le_f32(bytes, 108);
    if !(vox_offset >= NIFTI_HEADER_SIZE as f32) || vox_offset.fract() != 0.0 {
        return Err(Error::Corruption(format!("bad vox_offset {vox_offset}")));
    }
    let start = vox_offset as usize;
    let n = dims[0] * dims[1] * dims[2];
    let end = start + 4 * n;
    if bytes.len() < end {
        return Err(Error::Corruption(format!(
            "dims {dims:?} need {} payload bytes after offset {start}, file has {}",
            4 * n,
            bytes.len().saturating_sub(start)
        )));
    }
    let mut data = decode_f32(&bytes[start..end]);
    let slope = le_f32(bytes, 112);
    let inter = le_f32(bytes, 116);
    if slope != 0.0 && slope.is_finite() && inter.is_finite() && (slope != 1.0 || inter != 0.0) {
        for v in &mut data {
            *v = *v * slope + inter;
        }
    }
    Volume3D::new(dims, data)
}

fn nifti_bytes(vol: &Volume3D) -> Vec<u8> {
    let mut h = vec![0u8; NIFTI_HEADER_SIZE];
    h[0..4].copy_from_slice(&348i32.to_le_bytes());
    let mut dim = [1i16; 8];
    dim[0] = 3;
    for i in 0..3 {
        dim[i + 1] = vol.dims[i] as i16;
    }
    for (i, d) in dim.iter().enumerate() {
        h[40 + 2 * i..42 + 2 * i].copy_from_slice(&d.to_le_bytes());
    }
    h[70..72].copy_from_slice(&NIFTI_DT_FLOAT32.to_le_bytes());
    h[72..74].copy_from_slice(&32i16.to_le_bytes());
    for i in 0..8 {
        h[76 + 4 * i..80 + 4 * i].copy_from_slice(&1.0f32.to_le_bytes());
    }
    h[108..112].copy_from_slice(&352.0f32.to_le_bytes());
    h[112..116].copy_from_slice(&1.0f32.to_le_bytes());
    h[344..348].copy_from_slice(b"n+1\0");
    let mut out = h;
    out.extend_from_slice(&[0u8; 4]);
    out.extend_from_slice(&encode_f32(&vol.data));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(dims: [usize; 3]) -> Volume3D {
        let n = dims.iter().product::<usize>();
        Volume3D::new(dims, (0..n).map(|i| i as f32 + 1.0).collect()).unwrap()
    }

    #[test]
    fn rejects_non_finite_with_count_and_first_index() {
        let mut data = vec![0.0; 8];
        data[3] = f32::NAN;
        data[6] = f32::INFINITY;
        match Volume3D::new([2, 2, 2], data) {
            Err(Error::NonFinite { count, first_index }) => {
                assert_eq!((count, first_index), (2, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pad_even_case() {
        let v = ramp([4, 4, 4]);
        let p = pad_symmetric(&v, &GridSpec::new([6, 6, 6])).unwrap();
        assert_eq!(p.dims(), [6, 6, 6]);
        assert_eq!(p.get(0, 0, 0), 0.0);
        assert_eq!(p.get(5, 5, 5), 0.0);
        for z in 0..4 {
            for y in 0..4 {
                for x in 0..4 {
                    assert_eq!(p.get(x + 1, y + 1, z + 1), v.get(x, y, z));
                }
            }
        }
    }

    #[test]
    fn pad_widths_for_mni_grid() {
        let lows: Vec<_> = [(181, 256), (217, 256), (181, 208)]
            .iter()
            .map(|&(n, t)| pad_widths(n, t).unwrap())
            .collect();
        assert_eq!(lows, vec![(37, 38), (19, 20), (13, 14)]);
    }

    #[test]
    fn pad_odd_remainder_goes_high() {
        let v = ramp([1, 1, 1]);
        let p = pad_symmetric(&v, &GridSpec::new([4, 1, 1])).unwrap();
        assert_eq!(p.data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn pad_identity_and_error() {
        let v = ramp([3, 4, 5]);
        assert_eq!(pad_symmetric(&v, &GridSpec::new([3, 4, 5])).unwrap(), v);
        assert!(matches!(
            pad_symmetric(&v, &GridSpec::new([3, 3, 5])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn raw_round_trip_2x2x2() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.raw");
        let v = ramp([2, 2, 2]);
        save_volume(&v, &path, VolumeFormat::Raw).unwrap();
        let back = load_volume(&path, VolumeFormat::Raw).unwrap();
        assert_eq!(back.dims(), [2, 2, 2]);
        assert_eq!(back, v);
    }

    #[test]
    fn raw_payload_size_mismatch_is_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.raw");
        save_volume(&ramp([2, 2, 2]), &path, VolumeFormat::Raw).unwrap();
        fs::write(sidecar_path(&path), r#"{"dims":[2,2,3],"dtype":"f32","order":"x-fastest"}"#)
            .unwrap();
        assert!(matches!(
            load_volume(&path, VolumeFormat::Raw),
            Err(Error::Corruption(_))
        ));
    }

    #[test]
    fn nifti_int16_is_unsupported() {
        let mut bytes = nifti_bytes(&ramp([2, 2, 2]));
        bytes[70..72].copy_from_slice(&4i16.to_le_bytes());
        assert!(matches!(parse_nifti(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn nifti_scaling_applied() {
        let mut bytes = nifti_bytes(&ramp([2, 1, 1]));
        bytes[112..116].copy_from_slice(&2.0f32.to_le_bytes());
        bytes[116..120].copy_from_slice(&0.5f32.to_le_bytes());
        let v = parse_nifti(&bytes).unwrap();
        assert_eq!(v.data(), &[2.5, 4.5]);
    }

    #[test]
    fn nifti_truncated_payload_is_corruption() {
        let bytes = nifti_bytes(&ramp([2, 2, 2]));
        assert!(matches!(
            parse_nifti(&bytes[..bytes.len() - 4]),
            Err(Error::Corruption(_))
        ));
    }

    #[test]
    fn likelihood_range_warning_vs_strict() {
        let v = Volume3D::new([2, 1, 1], vec![0.5, 1.5]).unwrap();
        assert_eq!(v.check_likelihood_range(false).unwrap(), 1);
        assert!(v.check_likelihood_range(true).is_err());
    }

    #[test]
    fn grid_parse() {
        assert_eq!(GridSpec::parse("256,256,208").unwrap(), GridSpec::default());
        assert!(GridSpec::parse("1,2").is_err());
    }
}
