//! 3D convolution and transposed convolution over `(N, C, D, H, W)` tensors.
//!
//! Weights are `(C_out, C_in, kd, kh, kw)` for convolution and
//! `(C_in, C_out, kd, kh, kw)` for transposed convolution, so a transposed
//! convolution with weight `w` is the exact adjoint of the convolution with
//! the same `w`, stride and padding.

use rayon::prelude::*;

use crate::engine::{grad_fn, Element, Tape, Tensor, Var};
use crate::error::{shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    /// k=3, stride 1, pad 1: spatial extents preserved.
    pub const SAME: ConvGeometry = ConvGeometry { stride: 1, pad: 1 };
    pub const POINTWISE: ConvGeometry = ConvGeometry { stride: 1, pad: 0 };
    /// k=2, stride 2: halves (conv) or doubles (transposed) each extent.
    pub const DOWN2: ConvGeometry = ConvGeometry { stride: 2, pad: 0 };
}

pub(crate) fn dims5<T: Element>(t: &Tensor<T>, what: &str) -> Result<[usize; 5]> {
    t.shape()
        .try_into()
        .map_err(|_| shape_err!("{what} must be rank 5, got {:?}", t.shape()))
}

pub fn conv_out_extent(input: usize, k: usize, geom: ConvGeometry) -> Result<usize> {
    if geom.stride == 0 {
        return Err(shape_err!("stride must be >= 1"));
    }
    if input + 2 * geom.pad < k {
        return Err(shape_err!(
            "window underflow: extent {input} with padding {} is smaller than kernel {k}",
            geom.pad
        ));
    }
    Ok((input + 2 * geom.pad - k) / geom.stride + 1)
}

/// Output positions `o` in `[lo, hi)` whose input tap `o*s + k - p` lies in `[0, n_in)`.
#[inline]
fn tap_range(n_out: usize, n_in: usize, s: usize, k: usize, p: usize) -> (usize, usize) {
    let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
    if n_in + p <= k {
        return (0, 0);
    }
    let hi = ((n_in - 1 + p - k) / s + 1).min(n_out);
    (lo, hi.max(lo))
}

#[inline]
fn axpy<T: Element>(a: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv = *yv + a * xv;
    }
}

#[inline]
fn dot<T: Element>(x: &[T], y: &[T]) -> T {
    x.iter().zip(y).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
}

struct Layout {
    n: usize,
    c_in: usize,
    c_out: usize,
    inp: [usize; 3],
    out: [usize; 3],
    k: [usize; 3],
    s: usize,
    p: usize,
}

impl Layout {
    fn in_size(&self) -> usize {
        self.inp.iter().product()
    }
    fn out_size(&self) -> usize {
        self.out.iter().product()
    }
    fn k_size(&self) -> usize {
        self.k.iter().product()
    }
}

fn check_bias<T: Element>(b: Option<&Tensor<T>>, channels: usize) -> Result<()> {
    match b {
        Some(b) if b.shape() != [channels] => Err(shape_err!(
            "bias shape {:?} does not match {channels} output channels",
            b.shape()
        )),
        _ => Ok(()),
    }
}

/// `y[n,co] = b[co] + sum_ci w[co,ci] (*) x[n,ci]`, strided and zero-padded.
pub fn conv3d_forward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    geom: ConvGeometry,
) -> Result<Tensor<T>> {
    let [n, c_in, d, h, wd] = dims5(x, "conv3d input")?;
    let [c_out, wc_in, kd, kh, kw] = dims5(w, "conv3d weight")?;
    if wc_in != c_in {
        return Err(shape_err!(
            "conv3d channel mismatch: input has {c_in}, weight expects {wc_in}"
        ));
    }
    check_bias(b, c_out)?;
    let out = [
        conv_out_extent(d, kd, geom)?,
        conv_out_extent(h, kh, geom)?,
        conv_out_extent(wd, kw, geom)?,
    ];
    let l = Layout {
        n,
        c_in,
        c_out,
        inp: [d, h, wd],
        out,
        k: [kd, kh, kw],
        s: geom.stride,
        p: geom.pad,
    };
    let data = correlate(x.data(), w.data(), b.map(|b| b.data()), &l);
    Tensor::from_vec(&[n, c_out, out[0], out[1], out[2]], data)
}

fn correlate<T: Element>(x: &[T], w: &[T], b: Option<&[T]>, l: &Layout) -> Vec<T> {
    let (isz, osz, ksz) = (l.in_size(), l.out_size(), l.k_size());
    let [_, ih, iw] = l.inp;
    let [od, oh, ow] = l.out;
    let [kd, kh, kw] = l.k;
    let (s, p) = (l.s, l.p);
    let mut out = vec![T::zero(); l.n * l.c_out * osz];
    out.par_chunks_mut(osz).enumerate().for_each(|(slab, o)| {
        let (bn, co) = (slab / l.c_out, slab % l.c_out);
        o.fill(b.map_or(T::zero(), |b| b[co]));
        for ci in 0..l.c_in {
            let xin = &x[(bn * l.c_in + ci) * isz..][..isz];
            let wk = &w[(co * l.c_in + ci) * ksz..][..ksz];
            for a in 0..kd {
                let (d_lo, d_hi) = tap_range(od, l.inp[0], s, a, p);
                for bb in 0..kh {
                    let (h_lo, h_hi) = tap_range(oh, ih, s, bb, p);
                    for cc in 0..kw {
                        let wv = wk[(a * kh + bb) * kw + cc];
                        let (w_lo, w_hi) = tap_range(ow, iw, s, cc, p);
                        if w_lo >= w_hi {
                            continue;
                        }
                        for zd in d_lo..d_hi {
                            let id = zd * s + a - p;
                            for zh in h_lo..h_hi {
                                let row = (id * ih + zh * s + bb - p) * iw;
                                let orow = &mut o[(zd * oh + zh) * ow..][..ow];
                                if s == 1 {
                                    let off = row + w_lo + cc - p;
                                    axpy(wv, &xin[off..off + (w_hi - w_lo)], &mut orow[w_lo..w_hi]);
                                } else {
                                    for zw in w_lo..w_hi {
                                        orow[zw] = orow[zw] + wv * xin[row + zw * s + cc - p];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

/// Adjoint of `correlate` with respect to its input: scatters `go` back
/// through the kernel onto an input grid of extents `l.inp`.
fn correlate_adjoint<T: Element>(go: &[T], w: &[T], l: &Layout) -> Vec<T> {
    let (isz, osz, ksz) = (l.in_size(), l.out_size(), l.k_size());
    let [_, ih, iw] = l.inp;
    let [od, oh, ow] = l.out;
    let [kd, kh, kw] = l.k;
    let (s, p) = (l.s, l.p);
    let mut gx = vec![T::zero(); l.n * l.c_in * isz];
    gx.par_chunks_mut(isz).enumerate().for_each(|(slab, g)| {
        let (bn, ci) = (slab / l.c_in, slab % l.c_in);
        for co in 0..l.c_out {
            let gout = &go[(bn * l.c_out + co) * osz..][..osz];
            let wk = &w[(co * l.c_in + ci) * ksz..][..ksz];
            for a in 0..kd {
                let (d_lo, d_hi) = tap_range(od, l.inp[0], s, a, p);
                for bb in 0..kh {
                    let (h_lo, h_hi) = tap_range(oh, ih, s, bb, p);
                    for cc in 0..kw {
                        let wv = wk[(a * kh + bb) * kw + cc];
                        let (w_lo, w_hi) = tap_range(ow, iw, s, cc, p);
                        if w_lo >= w_hi {
                            continue;
                        }
                        for zd in d_lo..d_hi {
                            let id = zd * s + a - p;
                            for zh in h_lo..h_hi {
                                let row = (id * ih + zh * s + bb - p) * iw;
                                let grow = &gout[(zd * oh + zh) * ow..][..ow];
                                if s == 1 {
                                    let off = row + w_lo + cc - p;
                                    axpy(wv, &grow[w_lo..w_hi], &mut g[off..off + (w_hi - w_lo)]);
                                } else {
                                    for zw in w_lo..w_hi {
                                        let t = row + zw * s + cc - p;
                                        g[t] = g[t] + wv * grow[zw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    gx
}

/// Gradient of `correlate` with respect to the kernel, `(c_out, c_in, k..)`.
fn correlate_kernel_grad<T: Element>(go: &[T], x: &[T], l: &Layout) -> Vec<T> {
    let (isz, osz, ksz) = (l.in_size(), l.out_size(), l.k_size());
    let [_, ih, iw] = l.inp;
    let [od, oh, ow] = l.out;
    let [kd, kh, kw] = l.k;
    let (s, p) = (l.s, l.p);
    let mut gw = vec![T::zero(); l.c_out * l.c_in * ksz];
    gw.par_chunks_mut(l.c_in * ksz).enumerate().for_each(|(co, gwc)| {
        for bn in 0..l.n {
            let gout = &go[(bn * l.c_out + co) * osz..][..osz];
            for ci in 0..l.c_in {
                let xin = &x[(bn * l.c_in + ci) * isz..][..isz];
                for a in 0..kd {
                    let (d_lo, d_hi) = tap_range(od, l.inp[0], s, a, p);
                    for bb in 0..kh {
                        let (h_lo, h_hi) = tap_range(oh, ih, s, bb, p);
                        for cc in 0..kw {
                            let (w_lo, w_hi) = tap_range(ow, iw, s, cc, p);
                            if w_lo >= w_hi {
                                continue;
                            }
                            let mut acc = T::zero();
                            for zd in d_lo..d_hi {
                                let id = zd * s + a - p;
                                for zh in h_lo..h_hi {
                                    let row = (id * ih + zh * s + bb - p) * iw;
                                    let grow = &gout[(zd * oh + zh) * ow..][..ow];
                                    if s == 1 {
                                        let off = row + w_lo + cc - p;
                                        acc = acc + dot(&grow[w_lo..w_hi], &xin[off..off + (w_hi - w_lo)]);
                                    } else {
                                        for zw in w_lo..w_hi {
                                            acc = acc + grow[zw] * xin[row + zw * s + cc - p];
                                        }
                                    }
                                }
                            }
                            let t = ci * ksz + (a * kh + bb) * kw + cc;
                            gwc[t] = gwc[t] + acc;
                        }
                    }
                }
            }
        }
    });
    gw
}

fn channel_sums<T: Element>(g: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, d, h, w] = dims5(g, "gradient")?;
    let sz = d * h * w;
    let sums = (0..c)
        .map(|ch| {
            (0..n)
                .map(|bn| g.data()[(bn * c + ch) * sz..][..sz].iter().copied().sum::<T>())
                .sum::<T>()
        })
        .collect();
    Tensor::from_vec(&[c], sums)
}

/// Gradients of `conv3d_forward` with respect to input, weight and bias.
pub fn conv3d_backward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
    geom: ConvGeometry,
    need: [bool; 3],
) -> Result<[Option<Tensor<T>>; 3]> {
    let [n, c_in, d, h, wd] = dims5(x, "conv3d input")?;
    let [c_out, _, kd, kh, kw] = dims5(w, "conv3d weight")?;
    let [_, _, od, oh, ow] = dims5(grad_out, "conv3d gradient")?;
    let l = Layout {
        n,
        c_in,
        c_out,
        inp: [d, h, wd],
        out: [od, oh, ow],
        k: [kd, kh, kw],
        s: geom.stride,
        p: geom.pad,
    };
    let gx = if need[0] {
        Some(Tensor::from_vec(x.shape(), correlate_adjoint(grad_out.data(), w.data(), &l))?)
    } else {
        None
    };
    let gw = if need[1] {
        Some(Tensor::from_vec(w.shape(), correlate_kernel_grad(grad_out.data(), x.data(), &l))?)
    } else {
        None
    };
    let gb = if need[2] { Some(channel_sums(grad_out)?) } else { None };
    Ok([gx, gw, gb])
}

/// Transposed convolution: output extent `(in - 1) * stride + k - 2 * pad`.
pub fn conv_transpose3d_forward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    geom: ConvGeometry,
) -> Result<Tensor<T>> {
    let [n, c_in, d, h, wd] = dims5(x, "transposed conv input")?;
    let [wc_in, c_out, kd, kh, kw] = dims5(w, "transposed conv weight")?;
    if wc_in != c_in {
        return Err(shape_err!(
            "transposed conv channel mismatch: input has {c_in}, weight expects {wc_in}"
        ));
    }
    check_bias(b, c_out)?;
    let up = |e: usize, k: usize| -> Result<usize> {
        let full = (e - 1) * geom.stride + k;
        full.checked_sub(2 * geom.pad)
            .filter(|&v| v > 0)
            .ok_or_else(|| shape_err!("transposed conv padding {} too large", geom.pad))
    };
    let out = [up(d, kd)?, up(h, kh)?, up(wd, kw)?];
    // The transposed conv is the input-adjoint of a conv mapping `out` -> `x`.
    let l = Layout {
        n,
        c_in: c_out,
        c_out: c_in,
        inp: out,
        out: [d, h, wd],
        k: [kd, kh, kw],
        s: geom.stride,
        p: geom.pad,
    };
    let mut data = correlate_adjoint(x.data(), w.data(), &l);
    if let Some(b) = b {
        let osz = l.in_size();
        data.par_chunks_mut(osz).enumerate().for_each(|(slab, o)| {
            let bv = b.data()[slab % c_out];
            o.iter_mut().for_each(|v| *v = *v + bv);
        });
    }
    Tensor::from_vec(&[n, c_out, out[0], out[1], out[2]], data)
}

pub fn conv_transpose3d_backward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
    geom: ConvGeometry,
    need: [bool; 3],
) -> Result<[Option<Tensor<T>>; 3]> {
    let [n, c_in, d, h, wd] = dims5(x, "transposed conv input")?;
    let [_, c_out, kd, kh, kw] = dims5(w, "transposed conv weight")?;
    let [_, _, od, oh, ow] = dims5(grad_out, "transposed conv gradient")?;
    let l = Layout {
        n,
        c_in: c_out,
        c_out: c_in,
        inp: [od, oh, ow],
        out: [d, h, wd],
        k: [kd, kh, kw],
        s: geom.stride,
        p: geom.pad,
    };
    let gx = if need[0] {
        Some(Tensor::from_vec(x.shape(), correlate(grad_out.data(), w.data(), None, &l))?)
    } else {
        None
    };
    let gw = if need[1] {
        Some(Tensor::from_vec(w.shape(), correlate_kernel_grad(x.data(), grad_out.data(), &l))?)
    } else {
        None
    };
    let gb = if need[2] { Some(channel_sums(grad_out)?) } else { None };
    Ok([gx, gw, gb])
}

impl<T: Element> Tape<T> {
    pub fn conv3d(&mut self, x: Var, w: Var, b: Var, geom: ConvGeometry) -> Result<Var> {
        let y = conv3d_forward(self.value(x), self.value(w), Some(self.value(b)), geom)?;
        self.push("conv3d", &[x, w, b], y, grad_fn(move |inp, _, g, need| {
            let [gx, gw, gb] = conv3d_backward(inp[0], inp[1], g, geom, [need[0], need[1], need[2]])?;
            Ok(vec![gx, gw, gb])
        }))
    }

    pub fn conv_transpose3d(&mut self, x: Var, w: Var, b: Var, geom: ConvGeometry) -> Result<Var> {
        let y = conv_transpose3d_forward(self.value(x), self.value(w), Some(self.value(b)), geom)?;
        self.push("conv_transpose3d", &[x, w, b], y, grad_fn(move |inp, _, g, need| {
            let [gx, gw, gb] =
                conv_transpose3d_backward(inp[0], inp[1], g, geom, [need[0], need[1], need[2]])?;
            Ok(vec![gx, gw, gb])
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Rng, Stream};

    fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
        Tensor::normal(shape, 0.0, 1.0, &mut Rng::new(seed, Stream::Init)).unwrap()
    }

    #[test]
    fn identity_pointwise_kernel() {
        let x = randn(&[1, 3, 4, 4, 4], 1);
        let mut w = vec![0.0; 9];
        for c in 0..3 {
            w[c * 3 + c] = 1.0;
        }
        let w = Tensor::from_vec(&[3, 3, 1, 1, 1], w).unwrap();
        let b = Tensor::zeros(&[3]).unwrap();
        let y = conv3d_forward(&x, &w, Some(&b), ConvGeometry::POINTWISE).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn all_ones_valid_window() {
        let x = Tensor::<f64>::ones(&[1, 1, 3, 3, 3]).unwrap();
        let w = Tensor::<f64>::ones(&[1, 1, 3, 3, 3]).unwrap();
        let y = conv3d_forward(&x, &w, None, ConvGeometry { stride: 1, pad: 0 }).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1, 1]);
        assert_eq!(y.data(), &[27.0]);
    }

    #[test]
    fn shape_contracts() {
        let x = randn(&[1, 3, 4, 6, 8], 2);
        let same = conv3d_forward(&x, &randn(&[5, 3, 3, 3, 3], 3), None, ConvGeometry::SAME).unwrap();
        assert_eq!(same.shape(), &[1, 5, 4, 6, 8]);
        let down = conv3d_forward(&x, &randn(&[2, 3, 2, 2, 2], 4), None, ConvGeometry::DOWN2).unwrap();
        assert_eq!(down.shape(), &[1, 2, 2, 3, 4]);
        let x = randn(&[1, 3, 4, 4, 4], 5);
        let up = conv_transpose3d_forward(&x, &randn(&[3, 6, 2, 2, 2], 6), None, ConvGeometry::DOWN2)
            .unwrap();
        assert_eq!(up.shape(), &[1, 6, 8, 8, 8]);
    }

    #[test]
    fn transposed_tiles_do_not_overlap() {
        let x = Tensor::<f64>::ones(&[1, 1, 2, 2, 2]).unwrap();
        let w = Tensor::<f64>::ones(&[1, 1, 2, 2, 2]).unwrap();
        let b = Tensor::zeros(&[1]).unwrap();
        let y = conv_transpose3d_forward(&x, &w, Some(&b), ConvGeometry::DOWN2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4, 4]);
        assert!(y.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn errors() {
        let x = randn(&[1, 2, 4, 4, 4], 1);
        assert!(conv3d_forward(&x, &randn(&[1, 3, 3, 3, 3], 1), None, ConvGeometry::SAME).is_err());
        assert!(conv3d_forward(&x, &randn(&[1, 2, 7, 7, 7], 1), None, ConvGeometry::SAME).is_err());
        assert!(conv3d_forward(&x, &randn(&[1, 2, 3, 3, 3], 1), Some(&randn(&[2], 1)), ConvGeometry::SAME).is_err());
        assert!(conv_transpose3d_forward(&x, &randn(&[3, 2, 2, 2, 2], 1), None, ConvGeometry::DOWN2).is_err());
        assert!(conv3d_forward(&randn(&[2, 4, 4, 4], 1), &randn(&[1, 2, 3, 3, 3], 1), None, ConvGeometry::SAME).is_err());
    }

    #[test]
    fn tap_range_matches_brute_force() {
        for n_in in 1..7 {
            for s in 1..3 {
                for p in 0..3 {
                    for k in 0..4 {
                        if n_in + 2 * p < k + 1 {
                            continue;
                        }
                        let n_out = (n_in + 2 * p - (k + 1)) / s + 1;
                        let valid: Vec<usize> = (0..n_out)
                            .filter(|&o| {
                                let t = (o * s + k) as isize - p as isize;
                                t >= 0 && (t as usize) < n_in
                            })
                            .collect();
                        let (lo, hi) = tap_range(n_out, n_in, s, k, p);
                        assert_eq!((lo..hi).collect::<Vec<_>>(), valid, "n_in={n_in} s={s} p={p} k={k}");
                    }
                }
            }
        }
    }
}
