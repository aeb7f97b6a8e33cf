use rayon::prelude::*;

use super::conv::dims5;
use crate::engine::{grad_fn, Element, Tape, Tensor, Var};
use crate::error::{shape_err, Result};

/// Output of a 2x2x2 / stride-2 max pool.
#[derive(Clone, Debug)]
pub struct Pooled<T> {
    pub values: Tensor<T>,
    /// Flat input offset of the selected element for every output voxel.
    pub argmax: Vec<usize>,
}

/// 2x2x2 max pooling with stride 2. Ties go to the lowest linear offset.
pub fn max_pool3d_forward<T: Element>(x: &Tensor<T>) -> Result<Pooled<T>> {
    let [n, c, d, h, w] = dims5(x, "max pool input")?;
    if d % 2 != 0 || h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err!("max pool needs even spatial extents, got {:?}", &x.shape()[2..]));
    }
    let (od, oh, ow) = (d / 2, h / 2, w / 2);
    let (isz, osz) = (d * h * w, od * oh * ow);
    let xd = x.data();
    let mut values = vec![T::zero(); n * c * osz];
    let mut argmax = vec![0usize; n * c * osz];
    values
        .par_chunks_mut(osz)
        .zip(argmax.par_chunks_mut(osz))
        .enumerate()
        .for_each(|(slab, (vals, args))| {
            let base = slab * isz;
            for zd in 0..od {
                for zh in 0..oh {
                    for zw in 0..ow {
                        let mut best = T::zero();
                        let mut best_off = usize::MAX;
                        // Window visited in increasing linear offset.
                        for a in 0..2 {
                            for b in 0..2 {
                                let row = base + ((2 * zd + a) * h + 2 * zh + b) * w + 2 * zw;
                                for cc in 0..2 {
                                    let v = xd[row + cc];
                                    if best_off == usize::MAX || v > best {
                                        best = v;
                                        best_off = row + cc;
                                    }
                                }
                            }
                        }
                        let o = (zd * oh + zh) * ow + zw;
                        vals[o] = best;
                        args[o] = best_off;
                    }
                }
            }
        });
    Ok(Pooled {
        values: Tensor::from_vec(&[n, c, od, oh, ow], values)?,
        argmax,
    })
}

pub fn max_pool3d_backward<T: Element>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut gx = vec![T::zero(); input_shape.iter().product()];
    for (&off, &g) in argmax.iter().zip(grad_out.data()) {
        gx[off] = gx[off] + g;
    }
    Tensor::from_vec(input_shape, gx)
}

impl<T: Element> Tape<T> {
    pub fn max_pool3d(&mut self, x: Var) -> Result<Var> {
        let Pooled { values, argmax } = max_pool3d_forward(self.value(x))?;
        self.note_branches(argmax.iter().map(|&a| a as u64));
        self.push("max_pool3d", &[x], values, grad_fn(move |inp, _, g, _| {
            Ok(vec![Some(max_pool3d_backward(inp[0].shape(), &argmax, g)?)])
        }))
    }
}
