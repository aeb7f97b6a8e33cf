//! Additive attention gates on skip connections.

use crate::engine::{Element, Tensor};
use crate::error::{shape_err, Result};
use crate::layers::{ConvGeometry, Exec};

/// Parameter names of one gate, in the order of [`GateParams`] fields.
pub const GATE_PARAM_NAMES: [&str; 6] = ["wx", "bx", "wg", "bg", "psi_w", "psi_b"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gating {
    /// Gate and skip share one resolution; no resampling.
    SameLevel,
    /// Gating signal from one level deeper; stride-2 projection of the skip.
    Original,
}

#[derive(Clone, Debug)]
pub struct GateParams<V> {
    pub wx: V,
    pub bx: V,
    pub wg: V,
    pub bg: V,
    pub psi_w: V,
    pub psi_b: V,
}

impl<V> GateParams<V> {
    pub fn from_fn(mut f: impl FnMut(&str) -> Result<V>) -> Result<Self> {
        Ok(GateParams {
            wx: f("wx")?,
            bx: f("bx")?,
            wg: f("wg")?,
            bg: f("bg")?,
            psi_w: f("psi_w")?,
            psi_b: f("psi_b")?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Gated<V> {
    pub x_hat: V,
    /// Single-channel map on the skip's grid.
    pub alpha: V,
}

pub fn intermediate_channels(c_x: usize) -> usize {
    (c_x / 2).max(1)
}

/// Parameter shapes `(name, shape)` of a gate for skip channels `c_x` and
/// gating channels `c_g`.
pub fn gate_param_shapes(c_x: usize, c_g: usize) -> Vec<(&'static str, Vec<usize>)> {
    let f = intermediate_channels(c_x);
    vec![
        ("wx", vec![f, c_x, 1, 1, 1]),
        ("bx", vec![f]),
        ("wg", vec![f, c_g, 1, 1, 1]),
        ("bg", vec![f]),
        ("psi_w", vec![1, f, 1, 1, 1]),
        ("psi_b", vec![1]),
    ]
}

fn spatial<T: Element>(t: &Tensor<T>) -> Result<&[usize]> {
    if t.rank() != 5 {
        return Err(shape_err!("attention gate expects rank-5 tensors, got {:?}", t.shape()));
    }
    Ok(&t.shape()[2..])
}

/// `alpha = sigmoid(psi(relu(W_x x + W_g g)))`, `x_hat = x * alpha`.
pub fn attention_gate_same_level<T: Element, E: Exec<T>>(
    ex: &mut E,
    x: &E::Value,
    g: &E::Value,
    p: &GateParams<E::Value>,
) -> Result<Gated<E::Value>> {
    let (sx, sg) = (spatial(ex.value(x))?, spatial(ex.value(g))?);
    if sx != sg {
        return Err(shape_err!("same-level gate needs equal extents, got {sx:?} and {sg:?}"));
    }
    let px = ex.conv3d(x, &p.wx, &p.bx, ConvGeometry::POINTWISE)?;
    let alpha = additive_map(ex, &px, g, p)?;
    let x_hat = ex.mul(x, &alpha)?;
    Ok(Gated { x_hat, alpha })
}

/// Skip `x` at twice the resolution of `g`: the projection of `x` is strided
/// down to `g`'s grid and the coarse map is replicated back up.
pub fn attention_gate_original<T: Element, E: Exec<T>>(
    ex: &mut E,
    x: &E::Value,
    g: &E::Value,
    p: &GateParams<E::Value>,
) -> Result<Gated<E::Value>> {
    let (sx, sg) = (spatial(ex.value(x))?, spatial(ex.value(g))?);
    if sx.iter().zip(sg).any(|(&a, &b)| a != 2 * b) {
        return Err(shape_err!("original gate needs skip extents twice the gate's, got {sx:?} and {sg:?}"));
    }
    let px = ex.conv3d(x, &p.wx, &p.bx, ConvGeometry { stride: 2, pad: 0 })?;
    let coarse = additive_map(ex, &px, g, p)?;
    let alpha = ex.upsample_nearest2(&coarse)?;
    let x_hat = ex.mul(x, &alpha)?;
    Ok(Gated { x_hat, alpha })
}

fn additive_map<T: Element, E: Exec<T>>(
    ex: &mut E,
    px: &E::Value,
    g: &E::Value,
    p: &GateParams<E::Value>,
) -> Result<E::Value> {
    let pg = ex.conv3d(g, &p.wg, &p.bg, ConvGeometry::POINTWISE)?;
    let s = ex.add(px, &pg)?;
    let s = ex.relu(&s)?;
    let logits = ex.conv3d(&s, &p.psi_w, &p.psi_b, ConvGeometry::POINTWISE)?;
    ex.sigmoid(&logits)
}

pub fn attention_gate<T: Element, E: Exec<T>>(
    ex: &mut E,
    gating: Gating,
    x: &E::Value,
    g: &E::Value,
    p: &GateParams<E::Value>,
) -> Result<Gated<E::Value>> {
    match gating {
        Gating::SameLevel => attention_gate_same_level(ex, x, g, p),
        Gating::Original => attention_gate_original(ex, x, g, p),
    }
}
