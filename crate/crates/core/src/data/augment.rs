use super::subject::Sample;
use crate::engine::{Rng, Tensor};
use crate::error::{shape_err, Result};

pub const AUGMENT_PROB: f64 = 0.2;
pub const MAX_ROTATION_DEG: f64 = 10.0;
pub const NOISE_STD: f64 = 0.01;

/// Which transforms fire for one sample, drawn up front.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentPlan {
    pub flip: bool,
    /// Rotation angle in degrees.
    pub rotate: Option<f64>,
    pub scale: Option<f64>,
    /// Seed of the noise field.
    pub noise: Option<u64>,
}

impl AugmentPlan {
    pub const IDENTITY: AugmentPlan = AugmentPlan { flip: false, rotate: None, scale: None, noise: None };

    /// Four independent coin flips with probability `p`, in the order
    /// flip, rotate, scale, noise.
    pub fn draw(rng: &mut Rng, p: f64) -> Self {
        let flip = rng.bernoulli(p);
        let rotate = rng.bernoulli(p).then(|| rng.uniform_range(-MAX_ROTATION_DEG, MAX_ROTATION_DEG));
        let scale = rng.bernoulli(p).then(|| rng.uniform_range(0.9, 1.1));
        let noise = rng.bernoulli(p).then(|| rng.below(u32::MAX as usize) as u64);
        AugmentPlan { flip, rotate, scale, noise }
    }
}

pub fn augment(sample: &Sample, rng: &mut Rng, p: f64) -> Result<Sample> {
    apply_plan(sample, &AugmentPlan::draw(rng, p))
}

pub fn apply_plan(sample: &Sample, plan: &AugmentPlan) -> Result<Sample> {
    let mut out = sample.clone();
    if plan.flip {
        out.image = flip_w(&out.image)?;
        out.target = flip_w(&out.target)?;
    }
    if let Some(deg) = plan.rotate {
        out.image = rotate_bilinear(&out.image, deg)?;
        out.target = rotate_one_hot(&out.target, deg)?;
    }
    if let Some(f) = plan.scale {
        out.image = out.image.scale(f as f32);
    }
    if let Some(seed) = plan.noise {
        let mut rng = Rng::new(seed, crate::engine::Stream::Augment);
        out.image.data_mut().iter_mut().for_each(|v| *v += (NOISE_STD * rng.normal()) as f32);
    }
    Ok(out)
}

fn dims4(t: &Tensor<f32>) -> Result<[usize; 4]> {
    match *t.shape() {
        [c, d, h, w] => Ok([c, d, h, w]),
        _ => Err(shape_err!("expected (C, D, H, W), got {:?}", t.shape())),
    }
}

/// Reverses the last (W) axis.
pub fn flip_w(t: &Tensor<f32>) -> Result<Tensor<f32>> {
    let [.., w] = dims4(t)?;
    let mut out = t.clone();
    out.data_mut().chunks_mut(w).for_each(|row| row.reverse());
    Ok(out)
}

/// Source coordinates of output pixel `(y, x)` under an in-plane rotation by
/// `deg` about the slice centre.
fn source(y: usize, x: usize, h: usize, w: usize, (sin, cos): (f64, f64)) -> (f64, f64) {
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (dy, dx) = (y as f64 - cy, x as f64 - cx);
    (cy + cos * dy - sin * dx, cx + sin * dy + cos * dx)
}

/// Rotation in the H-W plane, bilinear, zero outside the volume. The D
/// coordinate is unchanged, so trilinear interpolation reduces to this.
pub fn rotate_bilinear(t: &Tensor<f32>, deg: f64) -> Result<Tensor<f32>> {
    let [_, _, h, w] = dims4(t)?;
    let sc = deg.to_radians().sin_cos();
    let mut out = vec![0.0f32; t.numel()];
    for (slice, o) in t.data().chunks(h * w).zip(out.chunks_mut(h * w)) {
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = source(y, x, h, w, sc);
                let (y0, x0) = (sy.floor(), sx.floor());
                let (fy, fx) = (sy - y0, sx - x0);
                let mut acc = 0.0;
                for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
                    for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                        let (yy, xx) = (y0 as i64 + dy, x0 as i64 + dx);
                        if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                            acc += wy * wx * slice[yy as usize * w + xx as usize] as f64;
                        }
                    }
                }
                o[y * w + x] = acc as f32;
            }
        }
    }
    Tensor::from_vec(t.shape(), out)
}

/// Nearest-neighbour rotation of a label map `(D, H, W)`; outside is 0.
pub fn rotate_labels(labels: &[u8], [d, h, w]: [usize; 3], deg: f64) -> Vec<u8> {
    let sc = deg.to_radians().sin_cos();
    let mut out = vec![0u8; labels.len()];
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = source(y, x, h, w, sc);
                let (yy, xx) = (sy.round(), sx.round());
                if yy >= 0.0 && xx >= 0.0 && (yy as usize) < h && (xx as usize) < w {
                    out[(z * h + y) * w + x] = labels[(z * h + yy as usize) * w + xx as usize];
                }
            }
        }
    }
    out
}

fn rotate_one_hot(t: &Tensor<f32>, deg: f64) -> Result<Tensor<f32>> {
    let [c, d, h, w] = dims4(t)?;
    let sp = d * h * w;
    let labels: Vec<u8> = (0..sp)
        .map(|k| (0..c).find(|&ch| t.data()[ch * sp + k] == 1.0).unwrap_or(0) as u8)
        .collect();
    let rotated = rotate_labels(&labels, [d, h, w], deg);
    super::subject::one_hot(&rotated, &[d, h, w], c)
}
