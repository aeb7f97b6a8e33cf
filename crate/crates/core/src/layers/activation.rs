use super::conv::dims5;
use crate::engine::{grad_fn, Element, Tape, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    /// Softmax over axis 1 of a rank-5 tensor.
    SoftmaxChannels,
}

pub fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn sigmoid<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| T::one() / (T::one() + (-v).exp()))
}

/// Per-voxel softmax across channels, shifted by the channel maximum.
pub fn softmax_channels<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, d, h, w] = dims5(x, "softmax input")?;
    let sp = d * h * w;
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    let mut m = vec![T::zero(); sp];
    let mut z = vec![T::zero(); sp];
    for bn in 0..n {
        let base = bn * c * sp;
        m.copy_from_slice(&src[base..base + sp]);
        for ch in 1..c {
            for (mv, &v) in m.iter_mut().zip(&src[base + ch * sp..][..sp]) {
                *mv = mv.max(v);
            }
        }
        z.fill(T::zero());
        for ch in 0..c {
            let off = base + ch * sp;
            for k in 0..sp {
                let e = (src[off + k] - m[k]).exp();
                out[off + k] = e;
                z[k] = z[k] + e;
            }
        }
        for ch in 0..c {
            let off = base + ch * sp;
            for k in 0..sp {
                out[off + k] = out[off + k] / z[k];
            }
        }
    }
    Tensor::from_vec(x.shape(), out)
}

pub fn activation<T: Element>(kind: Activation, x: &Tensor<T>) -> Result<Tensor<T>> {
    match kind {
        Activation::Relu => Ok(relu(x)),
        Activation::Sigmoid => Ok(sigmoid(x)),
        Activation::SoftmaxChannels => softmax_channels(x),
    }
}

/// `dx = y * (dy - sum_c dy * y)` per voxel.
fn softmax_channels_backward<T: Element>(y: &Tensor<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, d, h, w] = dims5(y, "softmax output")?;
    let sp = d * h * w;
    let (yd, gd) = (y.data(), g.data());
    let mut out = vec![T::zero(); yd.len()];
    let mut dot = vec![T::zero(); sp];
    for bn in 0..n {
        let base = bn * c * sp;
        dot.fill(T::zero());
        for ch in 0..c {
            let off = base + ch * sp;
            for k in 0..sp {
                dot[k] = dot[k] + gd[off + k] * yd[off + k];
            }
        }
        for ch in 0..c {
            let off = base + ch * sp;
            for k in 0..sp {
                out[off + k] = yd[off + k] * (gd[off + k] - dot[k]);
            }
        }
    }
    Tensor::from_vec(y.shape(), out)
}

impl<T: Element> Tape<T> {
    /// Gradient at exactly zero is zero.
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let y = relu(self.value(x));
        let signs: Vec<u64> = self.value(x).data().iter().map(|&v| (v > T::zero()) as u64).collect();
        self.note_branches(signs);
        self.push("relu", &[x], y, grad_fn(|inp, _, g, _| {
            Ok(vec![Some(g.zip_with(inp[0], |g, x| if x > T::zero() { g } else { T::zero() })?)])
        }))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let y = sigmoid(self.value(x));
        self.push("sigmoid", &[x], y, grad_fn(|_, y, g, _| {
            Ok(vec![Some(g.zip_with(y, |g, y| g * y * (T::one() - y))?)])
        }))
    }

    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let y = softmax_channels(self.value(x))?;
        self.push("softmax_channels", &[x], y, grad_fn(|_, y, g, _| {
            Ok(vec![Some(softmax_channels_backward(y, g)?)])
        }))
    }

    pub fn activation(&mut self, kind: Activation, x: Var) -> Result<Var> {
        match kind {
            Activation::Relu => self.relu(x),
            Activation::Sigmoid => self.sigmoid(x),
            Activation::SoftmaxChannels => self.softmax_channels(x),
        }
    }
}
