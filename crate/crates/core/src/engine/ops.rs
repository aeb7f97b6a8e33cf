//! Differentiable versions of the generic tensor operations.

use super::tape::{grad_fn, Tape, Var};
use super::tensor::{Element, ReduceOp, Tensor};
use crate::error::{shape_err, Result};

/// Sums `grad` over the axes where `shape` is a broadcast singleton.
pub(crate) fn reduce_to_shape<T: Element>(grad: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    if grad.shape() == shape {
        return Ok(grad.clone());
    }
    let axes: Vec<usize> = shape
        .iter()
        .zip(grad.shape())
        .enumerate()
        .filter(|(_, (&s, &g))| s == 1 && g != 1)
        .map(|(i, _)| i)
        .collect();
    let reduced = grad.reduce(ReduceOp::Sum, &axes, true)?;
    if reduced.shape() != shape {
        return Err(shape_err!("cannot reduce gradient {:?} to {shape:?}", grad.shape()));
    }
    Ok(reduced)
}

/// Scatters a kept-dims reduction gradient back over the reduced axes.
fn expand_to<T: Element>(grad: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    Tensor::zeros(shape)?.add(grad)
}

impl<T: Element> Tape<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        self.push("add", &[a, b], value, grad_fn(|inp, _, g, _| {
            Ok(vec![
                Some(reduce_to_shape(g, inp[0].shape())?),
                Some(reduce_to_shape(g, inp[1].shape())?),
            ])
        }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        self.push("sub", &[a, b], value, grad_fn(|inp, _, g, _| {
            Ok(vec![
                Some(reduce_to_shape(g, inp[0].shape())?),
                Some(reduce_to_shape(&g.scale(-T::one()), inp[1].shape())?),
            ])
        }))
    }

    /// Elementwise product; either side may carry singleton axes, as for an
    /// attention map `(N,1,D,H,W)` scaling features `(N,C,D,H,W)`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).mul(self.value(b))?;
        self.push("mul", &[a, b], value, grad_fn(|inp, _, g, need| {
            let ga = if need[0] {
                Some(reduce_to_shape(&g.mul(inp[1])?, inp[0].shape())?)
            } else {
                None
            };
            let gb = if need[1] {
                Some(reduce_to_shape(&g.mul(inp[0])?, inp[1].shape())?)
            } else {
                None
            };
            Ok(vec![ga, gb])
        }))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Result<Var> {
        let value = self.value(a).scale(k);
        self.push("scale", &[a], value, grad_fn(move |_, _, g, _| {
            Ok(vec![Some(g.scale(k))])
        }))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|v| v * v);
        self.push("square", &[a], value, grad_fn(|inp, _, g, _| {
            let two = T::from_f64(2.0);
            Ok(vec![Some(g.zip_with(inp[0], |g, x| two * x * g)?)])
        }))
    }

    pub fn sum(&mut self, a: Var, axes: &[usize], keepdim: bool) -> Result<Var> {
        self.reduce(a, ReduceOp::Sum, axes, keepdim)
    }

    pub fn mean(&mut self, a: Var, axes: &[usize], keepdim: bool) -> Result<Var> {
        self.reduce(a, ReduceOp::Mean, axes, keepdim)
    }

    /// Sum of every element, shape `[1]`.
    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.value(a).rank()).collect();
        self.sum(a, &axes, false)
    }

    pub fn max(&mut self, a: Var, axes: &[usize], keepdim: bool) -> Result<Var> {
        self.reduce(a, ReduceOp::Max, axes, keepdim)
    }

    fn reduce(&mut self, a: Var, op: ReduceOp, axes: &[usize], keepdim: bool) -> Result<Var> {
        let input = self.value(a);
        let (kept, argmax) = input.reduce_with_argmax(op, axes)?;
        let kept_shape = kept.shape().to_vec();
        let group = (input.numel() / kept.numel()) as f64;
        let value = if keepdim {
            kept
        } else {
            input.reduce(op, axes, false)?
        };
        self.note_branches(argmax.iter().map(|&a| a as u64));
        self.push("reduce", &[a], value, grad_fn(move |inp, _, g, _| {
            let g = g.reshape(&kept_shape)?;
            let shape = inp[0].shape();
            let out = match op {
                ReduceOp::Sum => expand_to(&g, shape)?,
                ReduceOp::Mean => expand_to(&g.scale(T::from_f64(1.0 / group)), shape)?,
                ReduceOp::Max => {
                    let mut data = vec![T::zero(); inp[0].numel()];
                    for (&off, &gv) in argmax.iter().zip(g.data()) {
                        data[off] = data[off] + gv;
                    }
                    Tensor::from_vec(shape, data)?
                }
            };
            Ok(vec![Some(out)])
        }))
    }

    pub fn concat(&mut self, axis: usize, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat(axis, &values)?;
        let extents: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        self.push("concat", parts, value, grad_fn(move |_, _, g, need| {
            let mut start = 0;
            let mut out = Vec::with_capacity(extents.len());
            for (&len, &n) in extents.iter().zip(need) {
                out.push(if n { Some(g.slice(axis, start, len)?) } else { None });
                start += len;
            }
            Ok(out)
        }))
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let value = self.value(a).slice(axis, start, len)?;
        self.push("slice", &[a], value, grad_fn(move |inp, _, g, _| {
            let shape = inp[0].shape();
            let mut before = vec![0; shape.len()];
            let mut after = vec![0; shape.len()];
            before[axis] = start;
            after[axis] = shape[axis] - start - len;
            Ok(vec![Some(g.pad(&before, &after, T::zero())?)])
        }))
    }

    pub fn crop(&mut self, a: Var, starts: &[usize], extents: &[usize]) -> Result<Var> {
        let value = self.value(a).crop(starts, extents)?;
        let starts = starts.to_vec();
        self.push("crop", &[a], value, grad_fn(move |inp, out, g, _| {
            let after: Vec<usize> = (0..starts.len())
                .map(|i| inp[0].shape()[i] - starts[i] - out.shape()[i])
                .collect();
            Ok(vec![Some(g.pad(&starts, &after, T::zero())?)])
        }))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        self.push("reshape", &[a], value, grad_fn(|inp, _, g, _| {
            Ok(vec![Some(g.reshape(inp[0].shape())?)])
        }))
    }

    pub fn pad(&mut self, a: Var, before: &[usize], after: &[usize], value: T) -> Result<Var> {
        let out = self.value(a).pad(before, after, value)?;
        let before = before.to_vec();
        self.push("pad", &[a], out, grad_fn(move |inp, _, g, _| {
            Ok(vec![Some(g.crop(&before, inp[0].shape())?)])
        }))
    }
}
