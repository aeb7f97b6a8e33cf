use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::sync::Arc;

use num_traits::Float;

use super::rng::Rng;
use crate::error::{arg_err, shape_err, Result};

pub const MAX_RANK: usize = 5;

/// Floating-point element type of a tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    /// NIfTI-1 datatype code, reused as the on-disk element tag.
    pub fn code(self) -> u16 {
        match self {
            DType::F32 => 16,
            DType::F64 => 64,
        }
    }

    pub fn from_code(code: u16) -> Option<Self> {
        match code {
            16 => Some(DType::F32),
            64 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }
}

pub trait Element:
    Float + Send + Sync + Debug + Display + Default + Sum + 'static
{
    const DTYPE: DType;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Element for f64 {
    const DTYPE: DType = DType::F64;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
}

/// Dense row-major array of rank 1 to 5. The element buffer is shared and
/// never mutated through a shared handle; `data_mut` copies on write.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let n = self.data.len();
        if n <= 16 {
            write!(f, "Tensor{:?} {:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?} [{:?}, .. {} elements]", self.shape, &self.data[..8], n)
        }
    }
}

pub(crate) fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(shape_err!("rank must be in 1..={MAX_RANK}, got {}", shape.len()));
    }
    if shape.contains(&0) {
        return Err(shape_err!("zero extent in shape {shape:?}"));
    }
    Ok(shape.iter().product())
}

pub fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Shape resulting from a binary op: identical extents, or extent 1 on one side.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(shape_err!("rank mismatch {a:?} vs {b:?}"));
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(shape_err!("incompatible shapes {a:?} and {b:?}")),
        })
        .collect()
}

/// Calls `f` with the multi-index of the first element of every last-axis row,
/// in row-major order.
fn for_each_row(shape: &[usize], mut f: impl FnMut(&[usize])) {
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    if rank == 1 {
        f(&idx);
        return;
    }
    loop {
        f(&idx);
        let mut axis = rank - 2;
        loop {
            idx[axis] += 1;
            if idx[axis] < shape[axis] {
                break;
            }
            idx[axis] = 0;
            if axis == 0 {
                return;
            }
            axis -= 1;
        }
    }
}

impl<T: Element> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return Err(shape_err!(
                "shape {shape:?} needs {n} elements, buffer has {}",
                data.len()
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
        })
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let n = check_shape(shape)?;
        Self::from_vec(shape, vec![value; n])
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: Arc::new(vec![value]),
        }
    }

    /// Gaussian fill drawn sequentially from `rng`.
    pub fn normal(shape: &[usize], mean: f64, std: f64, rng: &mut Rng) -> Result<Self> {
        let n = check_shape(shape)?;
        let data = (0..n)
            .map(|_| T::from_f64(mean + std * rng.normal()))
            .collect();
        Self::from_vec(shape, data)
    }

    pub fn zeros_like(other: &Tensor<T>) -> Self {
        Tensor {
            shape: other.shape.clone(),
            data: Arc::new(vec![T::zero(); other.numel()]),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<T> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.shape)
    }

    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.rank() {
            return Err(shape_err!("index {index:?} has wrong rank for {:?}", self.shape));
        }
        let mut off = 0;
        for ((&i, &e), s) in index.iter().zip(&self.shape).zip(self.strides()) {
            if i >= e {
                return Err(shape_err!("index {index:?} out of bounds for {:?}", self.shape));
            }
            off += i * s;
        }
        Ok(off)
    }

    pub fn get(&self, index: &[usize]) -> Result<T> {
        Ok(self.data[self.offset(index)?])
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(shape_err!("item() on tensor of shape {:?}", self.shape));
        }
        Ok(self.data[0])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != self.numel() {
            return Err(shape_err!("cannot reshape {:?} into {shape:?}", self.shape));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
        })
    }

    /// Row-major little-endian element bytes.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.numel() * T::DTYPE.size());
        for &v in self.data() {
            v.write_le(&mut out);
        }
        out
    }

    pub fn from_le_bytes(shape: &[usize], bytes: &[u8]) -> Result<Self> {
        let size = T::DTYPE.size();
        let n: usize = shape.iter().product();
        if bytes.len() != n * size {
            return Err(shape_err!("{} bytes for shape {shape:?} of {}", bytes.len(), T::DTYPE.name()));
        }
        Self::from_vec(shape, bytes.chunks_exact(size).map(T::read_le).collect())
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|v| U::from_f64(v.as_f64())).collect()),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&v| f(v)).collect()),
        }
    }

    /// Elementwise binary op with singleton-axis broadcasting.
    pub fn zip_with(&self, other: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape == other.shape {
            let data = self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect();
            return Ok(Tensor {
                shape: self.shape.clone(),
                data: Arc::new(data),
            });
        }
        let out_shape = broadcast_shape(&self.shape, &other.shape)?;
        let sa = broadcast_strides(&self.shape);
        let sb = broadcast_strides(&other.shape);
        let last = out_shape.len() - 1;
        let row = out_shape[last];
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for_each_row(&out_shape, |idx| {
            let oa: usize = idx.iter().zip(&sa).map(|(i, s)| i * s).sum();
            let ob: usize = idx.iter().zip(&sb).map(|(i, s)| i * s).sum();
            for k in 0..row {
                data.push(f(self.data[oa + k * sa[last]], other.data[ob + k * sb[last]]));
            }
        });
        Ok(Tensor {
            shape: out_shape,
            data: Arc::new(data),
        })
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    pub fn sum_all(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<T> {
        if self.shape != other.shape {
            return Err(shape_err!("shape mismatch {:?} vs {:?}", self.shape, other.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reduces over `axes`. With `keepdim` the reduced axes stay as extent 1,
    /// otherwise they are removed (a full reduction yields shape `[1]`).
    pub fn reduce(&self, op: ReduceOp, axes: &[usize], keepdim: bool) -> Result<Self> {
        let (kept, _) = self.reduce_with_argmax(op, axes)?;
        if keepdim {
            Ok(kept)
        } else {
            kept.reshape(&squeeze_shape(&self.shape, axes))
        }
    }

    /// Reduction keeping dims, plus for `Max` the input offset of the first
    /// maximum of each group.
    pub(crate) fn reduce_with_argmax(
        &self,
        op: ReduceOp,
        axes: &[usize],
    ) -> Result<(Self, Vec<usize>)> {
        let rank = self.rank();
        let mut reduced = vec![false; rank];
        for &a in axes {
            if a >= rank {
                return Err(shape_err!("axis {a} out of range for rank {rank}"));
            }
            reduced[a] = true;
        }
        let out_shape: Vec<usize> = self
            .shape
            .iter()
            .zip(&reduced)
            .map(|(&e, &r)| if r { 1 } else { e })
            .collect();
        let out_strides: Vec<usize> = strides_of(&out_shape)
            .into_iter()
            .zip(&reduced)
            .map(|(s, &r)| if r { 0 } else { s })
            .collect();
        let out_n: usize = out_shape.iter().product();
        let group = self.numel() / out_n;
        let init = match op {
            ReduceOp::Max => T::neg_infinity(),
            _ => T::zero(),
        };
        let mut acc = vec![init; out_n];
        let mut arg = vec![usize::MAX; if op == ReduceOp::Max { out_n } else { 0 }];
        let last = rank - 1;
        let mut in_off = 0;
        for_each_row(&self.shape, |idx| {
            let base: usize = idx.iter().zip(&out_strides).map(|(i, s)| i * s).sum();
            for k in 0..self.shape[last] {
                let o = base + k * out_strides[last];
                let v = self.data[in_off];
                match op {
                    ReduceOp::Sum | ReduceOp::Mean => acc[o] = acc[o] + v,
                    ReduceOp::Max => {
                        if arg[o] == usize::MAX || v > acc[o] {
                            acc[o] = v;
                            arg[o] = in_off;
                        }
                    }
                }
                in_off += 1;
            }
        });
        if op == ReduceOp::Mean {
            let inv = T::one() / T::from_f64(group as f64);
            acc.iter_mut().for_each(|v| *v = *v * inv);
        }
        Ok((Tensor::from_vec(&out_shape, acc)?, arg))
    }

    pub fn concat(axis: usize, parts: &[&Tensor<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| arg_err!("concat of zero tensors"))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(shape_err!("concat axis {axis} out of range for rank {rank}"));
        }
        let mut total = 0;
        for p in parts {
            let same = p.rank() == rank
                && p
                    .shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !same {
                return Err(shape_err!(
                    "concat along {axis}: {:?} does not match {:?}",
                    p.shape,
                    first.shape
                ));
            }
            total += p.shape[axis];
        }
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let mut shape = first.shape.clone();
        shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let block = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * block..(o + 1) * block]);
            }
        }
        Tensor::from_vec(&shape, data)
    }

    /// Sub-range `[start, start+len)` along one axis.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        if axis >= self.rank() {
            return Err(shape_err!("slice axis {axis} out of range"));
        }
        if len == 0 || start + len > self.shape[axis] {
            return Err(shape_err!(
                "slice [{start}, {}) exceeds extent {} on axis {axis}",
                start + len,
                self.shape[axis]
            ));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let ext = self.shape[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * ext + start) * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Tensor::from_vec(&shape, data)
    }

    /// Window of `extents` starting at `starts`, one entry per axis.
    pub fn crop(&self, starts: &[usize], extents: &[usize]) -> Result<Self> {
        let rank = self.rank();
        if starts.len() != rank || extents.len() != rank {
            return Err(shape_err!("crop window rank does not match tensor rank {rank}"));
        }
        for a in 0..rank {
            if extents[a] == 0 || starts[a] + extents[a] > self.shape[a] {
                return Err(shape_err!(
                    "crop window start {starts:?} extent {extents:?} exceeds {:?}",
                    self.shape
                ));
            }
        }
        let strides = self.strides();
        let row = extents[rank - 1];
        let mut data = Vec::with_capacity(extents.iter().product());
        for_each_row(extents, |idx| {
            let off: usize = (0..rank).map(|a| (idx[a] + starts[a]) * strides[a]).sum();
            data.extend_from_slice(&self.data[off..off + row]);
        });
        Tensor::from_vec(extents, data)
    }

    /// Pads each axis with `before[a]` leading and `after[a]` trailing `value`s.
    pub fn pad(&self, before: &[usize], after: &[usize], value: T) -> Result<Self> {
        let rank = self.rank();
        if before.len() != rank || after.len() != rank {
            return Err(shape_err!("pad widths rank does not match tensor rank {rank}"));
        }
        let shape: Vec<usize> = (0..rank)
            .map(|a| self.shape[a] + before[a] + after[a])
            .collect();
        let mut out = vec![value; shape.iter().product()];
        let out_strides = strides_of(&shape);
        let row = self.shape[rank - 1];
        let mut in_off = 0;
        for_each_row(&self.shape, |idx| {
            let off: usize = (0..rank).map(|a| (idx[a] + before[a]) * out_strides[a]).sum();
            out[off..off + row].copy_from_slice(&self.data[in_off..in_off + row]);
            in_off += row;
        });
        Tensor::from_vec(&shape, out)
    }
}

fn broadcast_strides(shape: &[usize]) -> Vec<usize> {
    strides_of(shape)
        .into_iter()
        .zip(shape)
        .map(|(s, &e)| if e == 1 { 0 } else { s })
        .collect()
}

fn squeeze_shape(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let out: Vec<usize> = shape
        .iter()
        .enumerate()
        .filter(|(i, _)| !axes.contains(i))
        .map(|(_, &e)| e)
        .collect();
    if out.is_empty() {
        vec![1]
    } else {
        out
    }
}

/// Start offsets of a centered window: `floor((extent - target) / 2)` per axis.
pub fn center_crop_starts(extents: &[usize], target: &[usize]) -> Result<Vec<usize>> {
    if extents.len() != target.len() {
        return Err(shape_err!("crop target rank mismatch"));
    }
    extents
        .iter()
        .zip(target)
        .map(|(&e, &t)| {
            if t > e {
                Err(shape_err!("extent {e} smaller than crop target {t}"))
            } else {
                Ok((e - t) / 2)
            }
        })
        .collect()
}
