use super::conv::dims5;
use crate::engine::{counter_uniform, grad_fn, Element, Stream, Tape, Tensor, Var};
use crate::error::{arg_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutSpec {
    pub rate: f64,
    pub mode: Mode,
}

/// Identifies one dropout draw: run seed, optimizer step and layer index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DropoutKey {
    pub seed: u64,
    pub step: u64,
    pub layer: u64,
}

/// Per-(n, c) multipliers: 0 for dropped channels, `1/(1-p)` for survivors.
pub fn channel_mask(n: usize, c: usize, rate: f64, key: DropoutKey) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(arg_err!("dropout rate must be in [0, 1), got {rate}"));
    }
    let keep = 1.0 / (1.0 - rate);
    Ok((0..n * c)
        .map(|i| {
            let u = counter_uniform(
                key.seed,
                Stream::Dropout,
                &[key.step, key.layer, (i / c) as u64, (i % c) as u64],
            );
            if u < rate {
                0.0
            } else {
                keep
            }
        })
        .collect())
}

fn apply_mask<T: Element>(x: &Tensor<T>, mask: &[f64]) -> Result<Tensor<T>> {
    let sp: usize = x.shape()[2..].iter().product();
    let mut out = x.clone();
    for (slab, &m) in out.data_mut().chunks_mut(sp).zip(mask) {
        let m = T::from_f64(m);
        slab.iter_mut().for_each(|v| *v = *v * m);
    }
    Ok(out)
}

/// Whole-channel (inverted) dropout. Identity in eval mode or at rate 0.
pub fn channel_dropout<T: Element>(x: &Tensor<T>, spec: DropoutSpec, key: DropoutKey) -> Result<Tensor<T>> {
    let [n, c, ..] = dims5(x, "dropout input")?;
    if spec.mode == Mode::Eval || spec.rate == 0.0 {
        if !(0.0..1.0).contains(&spec.rate) {
            return Err(arg_err!("dropout rate must be in [0, 1), got {}", spec.rate));
        }
        return Ok(x.clone());
    }
    apply_mask(x, &channel_mask(n, c, spec.rate, key)?)
}

impl<T: Element> Tape<T> {
    pub fn channel_dropout(&mut self, x: Var, spec: DropoutSpec, key: DropoutKey) -> Result<Var> {
        let [n, c, ..] = dims5(self.value(x), "dropout input")?;
        if spec.mode == Mode::Eval || spec.rate == 0.0 {
            let y = channel_dropout(self.value(x), spec, key)?;
            return self.push("dropout", &[x], y, grad_fn(|_, _, g, _| Ok(vec![Some(g.clone())])));
        }
        let mask = channel_mask(n, c, spec.rate, key)?;
        let y = apply_mask(self.value(x), &mask)?;
        self.push("dropout", &[x], y, grad_fn(move |_, _, g, _| Ok(vec![Some(apply_mask(g, &mask)?)])))
    }
}
