use std::collections::BTreeMap;

use super::config::{ArchitectureConfig, Downsample};
use crate::attention::gate_param_shapes;
use crate::engine::{Element, Rng, Tensor};
use crate::error::{shape_err, Error, Result};
use crate::layers::he_std;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Normal with standard deviation `sqrt(2 / fan_in)`.
    He { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

fn conv(out: &mut Vec<ParamSpec>, prefix: &str, c_out: usize, c_in: usize, k: usize) {
    out.push(ParamSpec {
        name: format!("{prefix}/w"),
        shape: vec![c_out, c_in, k, k, k],
        init: Init::He { fan_in: c_in * k * k * k },
    });
    out.push(ParamSpec { name: format!("{prefix}/b"), shape: vec![c_out], init: Init::Zeros });
}

fn conv_norm(out: &mut Vec<ParamSpec>, prefix: &str, c_out: usize, c_in: usize) {
    conv(out, prefix, c_out, c_in, 3);
    out.push(ParamSpec { name: format!("{prefix}/gamma"), shape: vec![c_out], init: Init::Ones });
    out.push(ParamSpec { name: format!("{prefix}/beta"), shape: vec![c_out], init: Init::Zeros });
}

/// Every parameter of the model in initialization order.
pub fn param_specs(config: &ArchitectureConfig) -> Result<Vec<ParamSpec>> {
    config.validate()?;
    let ch = &config.stage_channels;
    let s = config.stages();
    let mut out = Vec::new();

    for stage in 0..s {
        let mut c_in = if stage == 0 { config.in_channels } else { ch[stage - 1] };
        if stage > 0 && config.downsample == Downsample::StridedConv {
            conv(&mut out, &format!("down/{}", stage - 1), c_in, c_in, 2);
        }
        for i in 0..config.convs_per_stage[stage] {
            conv_norm(&mut out, &format!("enc/{stage}/{i}"), ch[stage], c_in);
            c_in = ch[stage];
        }
    }

    let mut shared_done = vec![false; s];
    for d in 0..config.decoders {
        let tag = ArchitectureConfig::decoder_tag(d);
        for level in (0..s - 1).rev() {
            let (c, deeper) = (ch[level], ch[level + 1]);
            // Transposed-conv weight is laid out (C_in, C_out, k, k, k).
            out.push(ParamSpec {
                name: format!("dec{tag}/{level}/up/w"),
                shape: vec![deeper, c, 2, 2, 2],
                init: Init::He { fan_in: deeper * 8 },
            });
            out.push(ParamSpec { name: format!("dec{tag}/{level}/up/b"), shape: vec![c], init: Init::Zeros });
            if let Some(prefix) = config.gate_prefix(d, level) {
                if !(prefix.starts_with("gate/") && shared_done[level]) {
                    shared_done[level] = true;
                    let c_g = match config.gating {
                        crate::attention::Gating::SameLevel => c,
                        crate::attention::Gating::Original => deeper,
                    };
                    for (name, shape) in gate_param_shapes(c, c_g) {
                        let init = if name.starts_with('b') || name == "psi_b" {
                            Init::Zeros
                        } else {
                            Init::He { fan_in: shape[1] }
                        };
                        out.push(ParamSpec { name: format!("{prefix}/{name}"), shape, init });
                    }
                }
            }
            let mut c_in = 2 * c;
            for i in 0..config.convs_per_stage[level] {
                conv_norm(&mut out, &format!("dec{tag}/{level}/{i}"), c, c_in);
                c_in = c;
            }
        }
        conv(&mut out, &format!("head{tag}"), config.num_classes, ch[0], 1);
    }
    if config.decoders == 2 {
        conv(&mut out, "fuse", config.num_classes, 2 * config.num_classes, 1);
    }
    Ok(out)
}

/// Named parameter tensors of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T: Element> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Element> Default for ModelParams<T> {
    fn default() -> Self {
        ModelParams { tensors: BTreeMap::new() }
    }
}

impl<T: Element> ModelParams<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter '{name}'")));
        }
        self.tensors.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter '{name}'")))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Sorted by name.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn cast<U: Element>(&self) -> ModelParams<U> {
        ModelParams {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Checks names and shapes against the config's parameter set.
    pub fn check_against(&self, config: &ArchitectureConfig) -> Result<()> {
        let specs = param_specs(config)?;
        if specs.len() != self.len() {
            return Err(shape_err!(
                "parameter set has {} tensors, config expects {}",
                self.len(),
                specs.len()
            ));
        }
        for s in specs {
            let t = self.get(&s.name)?;
            if t.shape() != s.shape.as_slice() {
                return Err(shape_err!("{}: shape {:?}, config expects {:?}", s.name, t.shape(), s.shape));
            }
        }
        Ok(())
    }
}

pub fn count_parameters<T: Element>(params: &ModelParams<T>) -> usize {
    params.iter().map(|(_, t)| t.numel()).sum()
}

/// Draws every parameter in spec order from `rng`.
pub fn build_model<T: Element>(config: &ArchitectureConfig, rng: &mut Rng) -> Result<ModelParams<T>> {
    let mut params = ModelParams::new();
    for spec in param_specs(config)? {
        let t = match spec.init {
            Init::He { fan_in } => Tensor::normal(&spec.shape, 0.0, he_std(fan_in), rng)?,
            Init::Zeros => Tensor::zeros(&spec.shape)?,
            Init::Ones => Tensor::ones(&spec.shape)?,
        };
        params.insert(spec.name, t)?;
    }
    Ok(params)
}
