//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use ddunet::engine::Tensor;
use ddunet::objectives::{ConfusionCounts, LossConfig};

fn dims(t: &Tensor<f64>) -> [usize; 5] {
    t.shape().try_into().unwrap()
}

fn at(t: &Tensor<f64>, i: [usize; 5]) -> f64 {
    t.get(&i).unwrap()
}

/// Direct evaluation, one output element at a time.
pub fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let [n, ci, d, h, wd] = dims(x);
    let [co, _, k, _, _] = dims(w);
    let o = |e: usize| (e + 2 * pad - k) / stride + 1;
    let (od, oh, ow) = (o(d), o(h), o(wd));
    let mut out = Vec::new();
    for bn in 0..n {
        for c in 0..co {
            for z in 0..od {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut s = b.data()[c];
                        for cin in 0..ci {
                            for a in 0..k {
                                for bb in 0..k {
                                    for cc in 0..k {
                                        let iz = (z * stride + a) as isize - pad as isize;
                                        let iy = (y * stride + bb) as isize - pad as isize;
                                        let ix = (xx * stride + cc) as isize - pad as isize;
                                        if iz < 0 || iy < 0 || ix < 0 || iz >= d as isize || iy >= h as isize || ix >= wd as isize {
                                            continue;
                                        }
                                        s += at(w, [c, cin, a, bb, cc]) * at(x, [bn, cin, iz as usize, iy as usize, ix as usize]);
                                    }
                                }
                            }
                        }
                        out.push(s);
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, co, od, oh, ow], out).unwrap()
}

/// Scatter form: every input voxel spreads its kernel-weighted value.
pub fn naive_conv_transpose(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let [n, ci, d, h, wd] = dims(x);
    let [_, co, k, _, _] = dims(w);
    let o = |e: usize| (e - 1) * stride + k - 2 * pad;
    let shape = [n, co, o(d), o(h), o(wd)];
    let mut out = Tensor::<f64>::zeros(&shape).unwrap();
    for bn in 0..n {
        for c in 0..co {
            for i in 0..shape[2] * shape[3] * shape[4] {
                let off = ((bn * co + c) * shape[2] * shape[3] * shape[4]) + i;
                out.data_mut()[off] = b.data()[c];
            }
        }
    }
    for bn in 0..n {
        for cin in 0..ci {
            for z in 0..d {
                for y in 0..h {
                    for xx in 0..wd {
                        for c in 0..co {
                            for a in 0..k {
                                for bb in 0..k {
                                    for cc in 0..k {
                                        let oz = (z * stride + a) as isize - pad as isize;
                                        let oy = (y * stride + bb) as isize - pad as isize;
                                        let ox = (xx * stride + cc) as isize - pad as isize;
                                        if oz < 0 || oy < 0 || ox < 0 || oz >= shape[2] as isize || oy >= shape[3] as isize || ox >= shape[4] as isize {
                                            continue;
                                        }
                                        let idx = [bn, c, oz as usize, oy as usize, ox as usize];
                                        let off = out.offset(&idx).unwrap();
                                        out.data_mut()[off] += at(w, [cin, c, a, bb, cc]) * at(x, [bn, cin, z, y, xx]);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Independent scalar evaluation of the combined loss for `(N, C, voxels)`
/// data held as nested vectors.
pub fn oracle_total(p: &[Vec<Vec<f64>>], t: &[Vec<Vec<f64>>], cfg: &LossConfig) -> f64 {
    let classes = p[0].len();
    let mut dice = 0.0;
    for c in 0..classes {
        let (mut inter, mut ps, mut ts) = (0.0, 0.0, 0.0);
        for (pb, tb) in p.iter().zip(t) {
            for (pv, tv) in pb[c].iter().zip(&tb[c]) {
                inter += pv * tv;
                ps += pv;
                ts += tv;
            }
        }
        dice += 1.0 - (2.0 * inter + cfg.dice_eps) / (ps + ts + cfg.dice_eps);
    }
    dice /= classes as f64;

    let mut focal = 0.0;
    let mut count = 0.0;
    for (pb, tb) in p.iter().zip(t) {
        for v in 0..pb[0].len() {
            let truth = (0..classes).find(|&c| tb[c][v] == 1.0).unwrap();
            let pt: f64 = pb[truth][v];
            let clamped = pt.max(cfg.prob_eps).min(1.0 - cfg.prob_eps);
            focal += -cfg.alpha * (1.0 - pt).powf(cfg.gamma) * clamped.ln();
            count += 1.0;
        }
    }
    cfg.lambda_dice * dice + cfg.lambda_focal * focal / count
}

pub fn nested(t: &Tensor<f64>) -> Vec<Vec<Vec<f64>>> {
    let (n, c) = (t.shape()[0], t.shape()[1]);
    let sp = t.numel() / (n * c);
    (0..n)
        .map(|b| (0..c).map(|ch| t.data()[(b * c + ch) * sp..(b * c + ch + 1) * sp].to_vec()).collect())
        .collect()
}

/// Truth: slab z holds label z. Prediction: slab 1 split between labels 1 and
/// 3 by y, slab 3 predicted as background.
pub fn crafted() -> (Vec<u8>, Vec<u8>) {
    let mut truth = Vec::new();
    let mut pred = Vec::new();
    for z in 0..4u8 {
        for y in 0..4 {
            for _x in 0..4 {
                truth.push(z);
                pred.push(match z {
                    1 if y >= 2 => 3,
                    3 => 0,
                    z => z,
                });
            }
        }
    }
    (pred, truth)
}

pub fn counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> ConfusionCounts {
    ConfusionCounts { tp, fp, tn, fn_ }
}
