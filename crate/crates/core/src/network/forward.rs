use std::collections::BTreeMap;

use super::config::{ArchitectureConfig, Downsample};
use super::params::ModelParams;
use crate::attention::{attention_gate, GateParams};
use crate::engine::{Element, Tensor};
use crate::error::{arg_err, shape_err, Error, Result};
use crate::layers::{ConvGeometry, DropoutKey, DropoutSpec, Eager, Exec, GroupNormSpec, Mode};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardOptions {
    pub mode: Mode,
    /// Optimizer step; selects the dropout masks in train mode.
    pub step: u64,
    pub seed: u64,
    pub capture_attention: bool,
}

impl ForwardOptions {
    pub fn eval() -> Self {
        ForwardOptions { mode: Mode::Eval, step: 0, seed: 0, capture_attention: false }
    }

    pub fn train(seed: u64, step: u64) -> Self {
        ForwardOptions { mode: Mode::Train, step, seed, capture_attention: false }
    }
}

#[derive(Clone, Debug)]
pub struct AttentionMap<V> {
    /// 0 for decoder A, 1 for decoder B.
    pub decoder: usize,
    /// 0 is the finest (final) level.
    pub level: usize,
    pub alpha: V,
}

#[derive(Clone, Debug)]
pub struct ForwardArtifacts<V> {
    pub logits: V,
    pub attention: Vec<AttentionMap<V>>,
}

/// Parameters bound to an executor.
pub type Bound<V> = BTreeMap<String, V>;

pub fn bind_params<T: Element, E: Exec<T>>(ex: &mut E, params: &ModelParams<T>) -> Bound<E::Value> {
    params.iter().map(|(k, v)| (k.clone(), ex.param(v.clone()))).collect()
}

struct Ctx<'a, V> {
    params: &'a Bound<V>,
    config: &'a ArchitectureConfig,
    opts: ForwardOptions,
    dropout_site: u64,
}

impl<V: Clone> Ctx<'_, V> {
    fn p(&self, name: &str) -> Result<&V> {
        self.params
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter '{name}'")))
    }

    fn block<T: Element, E: Exec<T, Value = V>>(&mut self, ex: &mut E, prefix: &str, convs: usize, x: V) -> Result<V> {
        let mut h = x;
        for i in 0..convs {
            let pre = format!("{prefix}/{i}");
            let y = ex.conv3d(&h, self.p(&format!("{pre}/w"))?, self.p(&format!("{pre}/b"))?, ConvGeometry::SAME)?;
            let c = ex.value(&y).shape()[1];
            let y = ex.group_norm(&y, self.p(&format!("{pre}/gamma"))?, self.p(&format!("{pre}/beta"))?, GroupNormSpec::for_channels(c))?;
            h = ex.relu(&y)?;
        }
        let c = ex.value(&h).shape()[1];
        let spec = DropoutSpec { rate: self.config.dropout.rate(c), mode: self.opts.mode };
        let key = DropoutKey { seed: self.opts.seed, step: self.opts.step, layer: self.dropout_site };
        self.dropout_site += 1;
        ex.channel_dropout(&h, spec, key)
    }
}

/// Runs the model on `x` of shape `(N, in_channels, D, H, W)`.
pub fn forward<T: Element, E: Exec<T>>(
    ex: &mut E,
    params: &Bound<E::Value>,
    config: &ArchitectureConfig,
    x: &E::Value,
    opts: ForwardOptions,
) -> Result<ForwardArtifacts<E::Value>> {
    config.validate()?;
    if opts.mode == Mode::Train && !ex.records_gradients() {
        return Err(arg_err!("train-mode forward needs a gradient tape"));
    }
    let shape = ex.value(x).shape().to_vec();
    if shape.len() != 5 {
        return Err(shape_err!("network input must be rank 5, got {shape:?}"));
    }
    if shape[1] != config.in_channels {
        return Err(shape_err!("network expects {} input channels, got {}", config.in_channels, shape[1]));
    }
    let m = config.size_multiple();
    if shape[2..].iter().any(|&e| e % m != 0) {
        return Err(shape_err!("spatial extents {:?} must be divisible by {m}", &shape[2..]));
    }

    let s = config.stages();
    let mut ctx = Ctx { params, config, opts, dropout_site: 0 };
    let mut skips: Vec<E::Value> = Vec::with_capacity(s);
    let mut h = x.clone();
    for stage in 0..s {
        if stage > 0 {
            h = match config.downsample {
                Downsample::MaxPool => ex.max_pool3d(&h)?,
                Downsample::StridedConv => {
                    let pre = format!("down/{}", stage - 1);
                    ex.conv3d(&h, ctx.p(&format!("{pre}/w"))?, ctx.p(&format!("{pre}/b"))?, ConvGeometry::DOWN2)?
                }
            };
        }
        h = ctx.block(ex, &format!("enc/{stage}"), config.convs_per_stage[stage], h)?;
        skips.push(h.clone());
    }

    let mut attention = Vec::new();
    let mut heads = Vec::with_capacity(config.decoders);
    for d in 0..config.decoders {
        let tag = ArchitectureConfig::decoder_tag(d);
        let mut h = skips[s - 1].clone();
        for level in (0..s - 1).rev() {
            let pre = format!("dec{tag}/{level}");
            let up = ex.conv_transpose3d(&h, ctx.p(&format!("{pre}/up/w"))?, ctx.p(&format!("{pre}/up/b"))?, ConvGeometry { stride: 2, pad: 0 })?;
            let skip = match config.gate_prefix(d, level) {
                None => skips[level].clone(),
                Some(gp) => {
                    let gate = GateParams::from_fn(|n| ctx.p(&format!("{gp}/{n}")).cloned())?;
                    let g = match config.gating {
                        crate::attention::Gating::SameLevel => &up,
                        crate::attention::Gating::Original => &h,
                    };
                    let out = attention_gate(ex, config.gating, &skips[level], g, &gate)?;
                    if opts.capture_attention {
                        attention.push(AttentionMap { decoder: d, level, alpha: out.alpha });
                    }
                    out.x_hat
                }
            };
            let cat = ex.concat(1, &[&skip, &up])?;
            h = ctx.block(ex, &pre, config.convs_per_stage[level], cat)?;
        }
        let head = ex.conv3d(&h, ctx.p(&format!("head{tag}/w"))?, ctx.p(&format!("head{tag}/b"))?, ConvGeometry::POINTWISE)?;
        heads.push(head);
    }
    let logits = if heads.len() == 2 {
        let cat = ex.concat(1, &[&heads[0], &heads[1]])?;
        ex.conv3d(&cat, ctx.p("fuse/w")?, ctx.p("fuse/b")?, ConvGeometry::POINTWISE)?
    } else {
        heads.pop().expect("one decoder")
    };
    Ok(ForwardArtifacts { logits, attention })
}

/// Eval-mode forward without a tape.
pub fn predict<T: Element>(
    params: &ModelParams<T>,
    config: &ArchitectureConfig,
    x: &Tensor<T>,
    capture_attention: bool,
) -> Result<ForwardArtifacts<Tensor<T>>> {
    let mut ex = Eager;
    let bound = bind_params(&mut ex, params);
    let opts = ForwardOptions { capture_attention, ..ForwardOptions::eval() };
    forward(&mut ex, &bound, config, x, opts)
}
