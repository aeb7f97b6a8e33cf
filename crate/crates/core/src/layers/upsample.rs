use super::conv::dims5;
use crate::engine::{grad_fn, Element, Tape, Tensor, Var};
use crate::error::Result;

/// Nearest-neighbour 2x replication along each spatial axis.
pub fn upsample_nearest2<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, d, h, w] = dims5(x, "upsample input")?;
    let (od, oh, ow) = (2 * d, 2 * h, 2 * w);
    let src = x.data();
    let mut out = vec![T::zero(); n * c * od * oh * ow];
    for (slab, o) in out.chunks_mut(od * oh * ow).enumerate() {
        let s = &src[slab * d * h * w..][..d * h * w];
        for z in 0..od {
            for y in 0..oh {
                let row = &s[((z / 2) * h + y / 2) * w..][..w];
                let orow = &mut o[(z * oh + y) * ow..][..ow];
                for (k, v) in orow.iter_mut().enumerate() {
                    *v = row[k / 2];
                }
            }
        }
    }
    Tensor::from_vec(&[n, c, od, oh, ow], out)
}

/// Adjoint of `upsample_nearest2`: sums each 2x2x2 block.
pub fn upsample_nearest2_backward<T: Element>(g: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, od, oh, ow] = dims5(g, "upsample gradient")?;
    let (d, h, w) = (od / 2, oh / 2, ow / 2);
    let src = g.data();
    let mut out = vec![T::zero(); n * c * d * h * w];
    for (slab, o) in out.chunks_mut(d * h * w).enumerate() {
        let s = &src[slab * od * oh * ow..][..od * oh * ow];
        for z in 0..od {
            for y in 0..oh {
                let row = &s[(z * oh + y) * ow..][..ow];
                let orow = &mut o[((z / 2) * h + y / 2) * w..][..w];
                for (k, &v) in row.iter().enumerate() {
                    orow[k / 2] = orow[k / 2] + v;
                }
            }
        }
    }
    Tensor::from_vec(&[n, c, d, h, w], out)
}

impl<T: Element> Tape<T> {
    pub fn upsample_nearest2(&mut self, x: Var) -> Result<Var> {
        let y = upsample_nearest2(self.value(x))?;
        self.push("upsample_nearest2", &[x], y, grad_fn(|_, _, g, _| {
            Ok(vec![Some(upsample_nearest2_backward(g)?)])
        }))
    }
}
