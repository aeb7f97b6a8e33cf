//! Minimal single-file NIfTI-1 (`.nii`, `.nii.gz`) support.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::engine::Tensor;
use crate::error::{shape_err, Error, Result};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;
const MAGIC: &[u8; 4] = b"n+1\0";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NiftiDtype {
    U8,
    I16,
    I32,
    F32,
    F64,
}

impl NiftiDtype {
    pub fn code(self) -> i16 {
        match self {
            NiftiDtype::U8 => 2,
            NiftiDtype::I16 => 4,
            NiftiDtype::I32 => 8,
            NiftiDtype::F32 => 16,
            NiftiDtype::F64 => 64,
        }
    }

    pub fn from_code(code: i16) -> Option<Self> {
        Some(match code {
            2 => NiftiDtype::U8,
            4 => NiftiDtype::I16,
            8 => NiftiDtype::I32,
            16 => NiftiDtype::F32,
            64 => NiftiDtype::F64,
            _ => return None,
        })
    }

    pub fn size(self) -> usize {
        match self {
            NiftiDtype::U8 => 1,
            NiftiDtype::I16 => 2,
            NiftiDtype::I32 | NiftiDtype::F32 => 4,
            NiftiDtype::F64 => 8,
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, NiftiDtype::F32 | NiftiDtype::F64)
    }
}

/// Voxels are stored x-fastest, as in the file.
#[derive(Clone, Debug, PartialEq)]
pub struct NiftiVolume {
    /// Extents `(nx, ny, nz, ...)`.
    pub dims: Vec<usize>,
    /// Element type on disk.
    pub dtype: NiftiDtype,
    /// Voxel spacing per axis.
    pub pixdim: Vec<f32>,
    /// Values with any slope/intercept already applied.
    pub data: Vec<f32>,
}

impl NiftiVolume {
    pub fn new(dims: Vec<usize>, dtype: NiftiDtype, data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() || dims.len() > 7 || dims.contains(&0) {
            return Err(shape_err!("invalid NIfTI dims {dims:?}"));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(shape_err!("dims {dims:?} need {n} voxels, buffer has {}", data.len()));
        }
        let pixdim = vec![1.0; dims.len()];
        Ok(NiftiVolume { dims, dtype, pixdim, data })
    }

    /// 3D volume as a `(nz, ny, nx)` tensor; no reordering is needed.
    pub fn to_tensor(&self) -> Result<Tensor<f32>> {
        if self.dims.len() < 3 || self.dims[3..].iter().any(|&d| d != 1) {
            return Err(shape_err!("expected a 3D volume, got dims {:?}", self.dims));
        }
        Tensor::from_vec(&[self.dims[2], self.dims[1], self.dims[0]], self.data.clone())
    }

    pub fn from_tensor(t: &Tensor<f32>, dtype: NiftiDtype) -> Result<Self> {
        let s = t.shape();
        if s.len() != 3 {
            return Err(shape_err!("expected a (D, H, W) tensor, got {s:?}"));
        }
        Self::new(vec![s[2], s[1], s[0]], dtype, t.data().to_vec())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    big: bool,
}

impl Reader<'_> {
    fn bytes<const N: usize>(&self, at: usize) -> [u8; N] {
        let mut b: [u8; N] = self.buf[at..at + N].try_into().expect("fixed width");
        if self.big {
            b.reverse();
        }
        b
    }
    fn i16(&self, at: usize) -> i16 {
        i16::from_le_bytes(self.bytes(at))
    }
    fn i32(&self, at: usize) -> i32 {
        i32::from_le_bytes(self.bytes(at))
    }
    fn f32(&self, at: usize) -> f32 {
        f32::from_le_bytes(self.bytes(at))
    }
    fn f64(&self, at: usize) -> f64 {
        f64::from_le_bytes(self.bytes(at))
    }
}

fn format_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Format(format!("{}: {msg}", path.display()))
}

pub fn load_nifti(path: impl AsRef<Path>) -> Result<NiftiVolume> {
    let path = path.as_ref();
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bytes = if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| format_err(path, format!("gzip: {e}")))?;
        out
    } else {
        raw
    };
    parse_nifti(&bytes).map_err(|e| format_err(path, e))
}

pub fn parse_nifti(bytes: &[u8]) -> std::result::Result<NiftiVolume, String> {
    if bytes.len() < HEADER_SIZE {
        return Err(format!("truncated header ({} bytes)", bytes.len()));
    }
    let big = match (
        i32::from_le_bytes(bytes[0..4].try_into().unwrap()),
        i32::from_be_bytes(bytes[0..4].try_into().unwrap()),
    ) {
        (348, _) => false,
        (_, 348) => true,
        (n, _) => return Err(format!("header size field is {n}, not 348")),
    };
    if &bytes[344..348] != MAGIC {
        return Err(format!("bad magic {:?}", &bytes[344..348]));
    }
    let r = Reader { buf: bytes, big };
    let rank = r.i16(40);
    if !(1..=7).contains(&rank) {
        return Err(format!("dim[0] = {rank} out of range"));
    }
    let mut dims = Vec::with_capacity(rank as usize);
    for i in 0..rank as usize {
        let d = r.i16(42 + 2 * i);
        if d < 1 {
            return Err(format!("dim[{}] = {d}", i + 1));
        }
        dims.push(d as usize);
    }
    let code = r.i16(70);
    let dtype = NiftiDtype::from_code(code).ok_or_else(|| format!("unsupported datatype code {code}"))?;
    let pixdim = (0..rank as usize).map(|i| r.f32(80 + 4 * i)).collect();
    let offset = r.f32(108);
    if !(offset >= HEADER_SIZE as f32) || offset.fract() != 0.0 {
        return Err(format!("invalid vox_offset {offset}"));
    }
    let offset = offset as usize;
    let (slope, inter) = (r.f32(112), r.f32(116));
    let n: usize = dims.iter().product();
    let need = offset + n * dtype.size();
    if bytes.len() < need {
        return Err(format!("truncated payload: need {need} bytes, file has {}", bytes.len()));
    }
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        let at = offset + i * dtype.size();
        data.push(match dtype {
            NiftiDtype::U8 => bytes[at] as f32,
            NiftiDtype::I16 => r.i16(at) as f32,
            NiftiDtype::I32 => r.i32(at) as f32,
            NiftiDtype::F32 => r.f32(at),
            NiftiDtype::F64 => r.f64(at) as f32,
        });
    }
    if slope != 0.0 && slope.is_finite() && !(slope == 1.0 && inter == 0.0) {
        data.iter_mut().for_each(|v| *v = *v * slope + inter);
    }
    Ok(NiftiVolume { dims, dtype, pixdim, data })
}

/// Header plus payload of a single-file NIfTI-1 image.
pub fn encode_nifti(vol: &NiftiVolume) -> Result<Vec<u8>> {
    let n: usize = vol.dims.iter().product();
    if vol.dims.is_empty() || vol.dims.len() > 7 || n != vol.data.len() {
        return Err(shape_err!("dims {:?} do not match {} voxels", vol.dims, vol.data.len()));
    }
    if let Some(d) = vol.dims.iter().find(|&&d| d > i16::MAX as usize) {
        return Err(shape_err!("extent {d} exceeds the NIfTI-1 limit"));
    }
    let mut h = vec![0u8; VOX_OFFSET];
    let mut put = |at: usize, b: &[u8]| h[at..at + b.len()].copy_from_slice(b);
    put(0, &(HEADER_SIZE as i32).to_le_bytes());
    put(38, b"r");
    put(40, &(vol.dims.len() as i16).to_le_bytes());
    for (i, &d) in vol.dims.iter().enumerate() {
        put(42 + 2 * i, &(d as i16).to_le_bytes());
    }
    for i in vol.dims.len()..7 {
        put(42 + 2 * i, &1i16.to_le_bytes());
    }
    put(70, &vol.dtype.code().to_le_bytes());
    put(72, &((vol.dtype.size() * 8) as i16).to_le_bytes());
    put(76, &1f32.to_le_bytes());
    let spacing = |i: usize| vol.pixdim.get(i).copied().unwrap_or(1.0);
    for i in 0..vol.dims.len() {
        put(80 + 4 * i, &spacing(i).to_le_bytes());
    }
    put(108, &(VOX_OFFSET as f32).to_le_bytes());
    // xyzt_units: millimetres.
    put(123, &[2]);
    put(254, &1i16.to_le_bytes());
    for (row, at) in [280usize, 296, 312].into_iter().enumerate() {
        put(at + 4 * row, &spacing(row).to_le_bytes());
    }
    put(344, MAGIC);

    let mut out = h;
    out.reserve(n * vol.dtype.size());
    for &v in &vol.data {
        if vol.dtype.is_integer() && (v.fract() != 0.0 || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("value {v} does not fit integer datatype {:?}", vol.dtype)));
        }
        match vol.dtype {
            NiftiDtype::U8 => out.push(v as u8),
            NiftiDtype::I16 => out.extend_from_slice(&(v as i16).to_le_bytes()),
            NiftiDtype::I32 => out.extend_from_slice(&(v as i32).to_le_bytes()),
            NiftiDtype::F32 => out.extend_from_slice(&v.to_le_bytes()),
            NiftiDtype::F64 => out.extend_from_slice(&(v as f64).to_le_bytes()),
        }
    }
    Ok(out)
}

/// Writes `.nii`, or gzip-compressed output when the path ends in `.gz`.
pub fn save_nifti(vol: &NiftiVolume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_nifti(vol)?;
    let payload = if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&bytes).and_then(|_| enc.finish()).map_err(|e| Error::io(path, e))?
    } else {
        bytes
    };
    fs::write(path, payload).map_err(|e| Error::io(path, e))
}
