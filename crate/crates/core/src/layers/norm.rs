use rayon::prelude::*;

use super::conv::dims5;
use crate::engine::{grad_fn, Element, Tape, Tensor, Var};
use crate::error::{arg_err, shape_err, Result};

pub const GROUP_NORM_EPS: f64 = 1e-5;

/// `min(8, channels)` groups, falling back to one group per channel when that
/// does not divide the channel count.
pub fn default_groups(channels: usize) -> usize {
    let g = channels.min(8);
    if channels % g == 0 {
        g
    } else {
        channels
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupNormSpec {
    pub groups: usize,
    pub eps: f64,
}

impl GroupNormSpec {
    pub fn for_channels(channels: usize) -> Self {
        GroupNormSpec {
            groups: default_groups(channels),
            eps: GROUP_NORM_EPS,
        }
    }
}

/// Forward result plus what the gradient rule needs.
pub struct GroupNormOut<T> {
    pub y: Tensor<T>,
    pub xhat: Vec<T>,
    /// `1/sqrt(var + eps)` per (sample, group).
    pub inv_std: Vec<f64>,
}

fn validate<T: Element>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, spec: GroupNormSpec) -> Result<[usize; 5]> {
    let dims = dims5(x, "group norm input")?;
    let c = dims[1];
    if spec.groups == 0 || c % spec.groups != 0 {
        return Err(arg_err!("{} groups do not divide {c} channels", spec.groups));
    }
    if spec.eps <= 0.0 {
        return Err(arg_err!("group norm eps must be positive"));
    }
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(shape_err!(
            "group norm scale/shift shapes {:?}/{:?} do not match {c} channels",
            gamma.shape(),
            beta.shape()
        ));
    }
    Ok(dims)
}

/// Per (sample, group): `y = gamma * (x - mean) / sqrt(var + eps) + beta`,
/// statistics over the group's channels and all voxels of that sample.
pub fn group_norm_forward<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    spec: GroupNormSpec,
) -> Result<GroupNormOut<T>> {
    let [n, c, d, h, w] = validate(x, gamma, beta, spec)?;
    let cpg = c / spec.groups;
    let block = cpg * d * h * w;
    let sp = d * h * w;
    let mut xhat = vec![T::zero(); x.numel()];
    let mut y = vec![T::zero(); x.numel()];
    let mut inv_std = vec![0.0; n * spec.groups];
    xhat.par_chunks_mut(block)
        .zip(y.par_chunks_mut(block))
        .zip(inv_std.par_iter_mut())
        .enumerate()
        .for_each(|(ng, ((xh, yo), is))| {
            let src = &x.data()[ng * block..][..block];
            let mean = src.iter().map(|v| v.as_f64()).sum::<f64>() / block as f64;
            let var = src.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / block as f64;
            let inv = 1.0 / (var + spec.eps).sqrt();
            *is = inv;
            let g0 = (ng % spec.groups) * cpg;
            for (k, ((xo, yv), &xv)) in xh.iter_mut().zip(yo.iter_mut()).zip(src).enumerate() {
                let ch = g0 + k / sp;
                let nv = T::from_f64((xv.as_f64() - mean) * inv);
                *xo = nv;
                *yv = gamma.data()[ch] * nv + beta.data()[ch];
            }
        });
    Ok(GroupNormOut {
        y: Tensor::from_vec(x.shape(), y)?,
        xhat,
        inv_std,
    })
}

pub fn group_norm_backward<T: Element>(
    shape: &[usize],
    gamma: &Tensor<T>,
    spec: GroupNormSpec,
    xhat: &[T],
    inv_std: &[f64],
    grad_out: &Tensor<T>,
    need: [bool; 3],
) -> Result<[Option<Tensor<T>>; 3]> {
    let (n, c) = (shape[0], shape[1]);
    let sp: usize = shape[2..].iter().product();
    let cpg = c / spec.groups;
    let block = cpg * sp;
    let g = grad_out.data();

    let gx = if need[0] {
        let mut gx = vec![T::zero(); g.len()];
        gx.par_chunks_mut(block).enumerate().for_each(|(ng, out)| {
            let g0 = (ng % spec.groups) * cpg;
            let gs = &g[ng * block..][..block];
            let xs = &xhat[ng * block..][..block];
            let mut sum_d = 0.0;
            let mut sum_dx = 0.0;
            for k in 0..block {
                let dxh = gs[k].as_f64() * gamma.data()[g0 + k / sp].as_f64();
                sum_d += dxh;
                sum_dx += dxh * xs[k].as_f64();
            }
            let m = block as f64;
            let inv = inv_std[ng];
            for k in 0..block {
                let dxh = gs[k].as_f64() * gamma.data()[g0 + k / sp].as_f64();
                out[k] = T::from_f64(inv / m * (m * dxh - sum_d - xs[k].as_f64() * sum_dx));
            }
        });
        Some(Tensor::from_vec(shape, gx)?)
    } else {
        None
    };
    let (gg, gb) = if need[1] || need[2] {
        let mut gg = vec![T::zero(); c];
        let mut gb = vec![T::zero(); c];
        for bn in 0..n {
            for ch in 0..c {
                let off = (bn * c + ch) * sp;
                let gs = &g[off..off + sp];
                let xs = &xhat[off..off + sp];
                gg[ch] = gg[ch] + gs.iter().zip(xs).fold(T::zero(), |a, (&g, &x)| a + g * x);
                gb[ch] = gb[ch] + gs.iter().copied().sum::<T>();
            }
        }
        (
            need[1].then(|| Tensor::from_vec(&[c], gg)).transpose()?,
            need[2].then(|| Tensor::from_vec(&[c], gb)).transpose()?,
        )
    } else {
        (None, None)
    };
    Ok([gx, gg, gb])
}

impl<T: Element> Tape<T> {
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, spec: GroupNormSpec) -> Result<Var> {
        let GroupNormOut { y, xhat, inv_std } =
            group_norm_forward(self.value(x), self.value(gamma), self.value(beta), spec)?;
        self.push("group_norm", &[x, gamma, beta], y, grad_fn(move |inp, _, g, need| {
            let [gx, gg, gb] = group_norm_backward(
                inp[0].shape(),
                inp[1],
                spec,
                &xhat,
                &inv_std,
                g,
                [need[0], need[1], need[2]],
            )?;
            Ok(vec![gx, gg, gb])
        }))
    }
}
