//! Synthetic subjects: nested ellipsoidal label shells inside a brain-like
//! ellipsoid, with label-dependent intensities, a smooth bias field and noise.

use super::subject::Subject;
use crate::engine::{Rng, Stream, Tensor};
use crate::error::{arg_err, Result};

pub const MIN_PHANTOM_SIZE: usize = 16;

/// Base intensity per raw label (rows 0, 1, 2, 4) and modality.
const INTENSITY: [[f64; 4]; 4] = [
    [0.60, 0.60, 0.45, 0.45],
    [0.30, 0.30, 0.95, 0.55],
    [0.50, 0.55, 0.80, 1.00],
    [0.40, 1.00, 0.65, 0.75],
];
const RAW_LABELS: [f32; 4] = [0.0, 1.0, 2.0, 4.0];
const NOISE: f64 = 0.03;

/// `count` subjects of extents `size^3`, each a pure function of (seed, index).
pub fn generate_phantom(seed: u64, size: usize, count: usize) -> Result<Vec<Subject>> {
    if size < MIN_PHANTOM_SIZE {
        return Err(arg_err!("phantom size must be at least {MIN_PHANTOM_SIZE}, got {size}"));
    }
    (0..count).map(|i| phantom_subject(seed, size, i)).collect()
}

pub fn phantom_subject(seed: u64, size: usize, index: usize) -> Result<Subject> {
    let mut rng = Rng::keyed(seed, Stream::Phantom, &[index as u64]);
    let s = size as f64;
    let mid = (s - 1.0) / 2.0;
    let brain: [f64; 3] = [0.44 * s, 0.42 * s, 0.40 * s];
    // Tumour centre sits on a voxel, so the innermost shell is never empty.
    let centre: Vec<f64> = (0..3).map(|_| (mid + rng.uniform_range(-0.08, 0.08) * s).round()).collect();
    let outer: Vec<f64> = (0..3).map(|_| rng.uniform_range(0.18, 0.24) * s).collect();
    let shells = [0.4, 0.7, 1.0];
    let phase: Vec<f64> = (0..6).map(|_| rng.uniform_range(0.0, std::f64::consts::TAU)).collect();

    let n = size * size * size;
    let mut label = vec![0usize; n];
    let mut inside = vec![false; n];
    for z in 0..size {
        for y in 0..size {
            for x in 0..size {
                let p = [z as f64, y as f64, x as f64];
                let k = (z * size + y) * size + x;
                let rb: f64 = (0..3).map(|a| ((p[a] - mid) / brain[a]).powi(2)).sum();
                inside[k] = rb <= 1.0;
                let rt: f64 = (0..3).map(|a| ((p[a] - centre[a]) / outer[a]).powi(2)).sum::<f64>().sqrt();
                // Shell order from the centre out: enhancing (raw 4), necrotic (1), edema (2).
                label[k] = if rt <= shells[0] {
                    3
                } else if rt <= shells[1] {
                    1
                } else if rt <= shells[2] {
                    2
                } else {
                    0
                };
            }
        }
    }

    let mut modalities: Vec<Tensor<f32>> = Vec::with_capacity(4);
    for m in 0..4 {
        let mut data = vec![0.0f32; n];
        for z in 0..size {
            for y in 0..size {
                for x in 0..size {
                    let k = (z * size + y) * size + x;
                    if !inside[k] && label[k] == 0 {
                        data[k] = (NOISE * rng.normal()).abs() as f32 * 100.0;
                        continue;
                    }
                    let (u, v, w) = (z as f64 / s, y as f64 / s, x as f64 / s);
                    let bias = 1.0 + 0.08 * (std::f64::consts::PI * u + phase[m]).sin() * (std::f64::consts::PI * v + phase[m + 1]).cos()
                        + 0.05 * (std::f64::consts::PI * w + phase[m + 2]).sin();
                    let base = INTENSITY[label[k]][m];
                    data[k] = ((base * bias + NOISE * rng.normal()) * 1000.0) as f32;
                }
            }
        }
        modalities.push(Tensor::from_vec(&[size, size, size], data)?);
    }
    let mask = label.iter().map(|&l| RAW_LABELS[l]).collect();
    let modalities: [Tensor<f32>; 4] = modalities.try_into().expect("four modalities");
    Ok(Subject {
        id: format!("phantom_{index:03}"),
        modalities,
        mask: Tensor::from_vec(&[size, size, size], mask)?,
    })
}
