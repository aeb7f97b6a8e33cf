use std::fmt;

use super::config::{ArchitectureConfig, Downsample};
use super::params::param_specs;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerInfo {
    pub name: String,
    pub kind: &'static str,
    /// `(C, D, H, W)` of the layer output for the described input size.
    pub output: [usize; 4],
    pub dropout: Option<f64>,
    pub parameters: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelDescription {
    pub layers: Vec<LayerInfo>,
    pub parameters: usize,
}

/// Layer list for an input of spatial size `extent^3`.
pub fn describe(config: &ArchitectureConfig, extent: usize) -> Result<ModelDescription> {
    let specs = param_specs(config)?;
    let count = |prefix: &str| -> usize {
        specs
            .iter()
            .filter(|s| s.name.starts_with(prefix) && s.name[prefix.len()..].starts_with('/'))
            .map(|s| s.numel())
            .sum()
    };
    let ch = &config.stage_channels;
    let s = config.stages();
    let mut layers = Vec::new();
    let mut push = |name: String, kind, c, e, dropout, parameters| {
        layers.push(LayerInfo { name, kind, output: [c, e, e, e], dropout, parameters });
    };
    for stage in 0..s {
        let e = extent >> stage;
        if stage > 0 {
            match config.downsample {
                Downsample::MaxPool => push(format!("pool/{}", stage - 1), "maxpool", ch[stage - 1], e, None, 0),
                Downsample::StridedConv => {
                    let n = format!("down/{}", stage - 1);
                    let p = count(&n);
                    push(n, "conv k2 s2", ch[stage - 1], e, None, p);
                }
            }
        }
        for i in 0..config.convs_per_stage[stage] {
            let n = format!("enc/{stage}/{i}");
            let p = count(&n);
            push(n, "conv k3 + groupnorm + relu", ch[stage], e, None, p);
        }
        push(format!("enc/{stage}/dropout"), "channel dropout", ch[stage], e, Some(config.dropout.rate(ch[stage])), 0);
    }
    let mut seen_gate = std::collections::BTreeSet::new();
    for d in 0..config.decoders {
        let tag = ArchitectureConfig::decoder_tag(d);
        for level in (0..s - 1).rev() {
            let e = extent >> level;
            let pre = format!("dec{tag}/{level}");
            let p = count(&format!("{pre}/up"));
            push(format!("{pre}/up"), "transposed conv k2 s2", ch[level], e, None, p);
            if let Some(g) = config.gate_prefix(d, level) {
                // A shared gate's parameters are counted where it first appears.
                let p = if seen_gate.insert(g.clone()) { count(&g) } else { 0 };
                push(g, "attention gate", 1, e, None, p);
            }
            for i in 0..config.convs_per_stage[level] {
                let n = format!("{pre}/{i}");
                let p = count(&n);
                push(n, "conv k3 + groupnorm + relu", ch[level], e, None, p);
            }
            push(format!("{pre}/dropout"), "channel dropout", ch[level], e, Some(config.dropout.rate(ch[level])), 0);
        }
        let n = format!("head{tag}");
        let p = count(&n);
        push(n, "conv k1", config.num_classes, extent, None, p);
    }
    if config.decoders == 2 {
        push("fuse".into(), "conv k1", config.num_classes, extent, None, count("fuse"));
    }
    Ok(ModelDescription { layers, parameters: specs.iter().map(|s| s.numel()).sum() })
}

impl fmt::Display for ModelDescription {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<24} {:<28} {:>18} {:>8} {:>10}", "layer", "kind", "output", "dropout", "params")?;
        for l in &self.layers {
            let [c, d, h, w] = l.output;
            let drop = l.dropout.map(|p| format!("{p:.1}")).unwrap_or_else(|| "-".into());
            writeln!(f, "{:<24} {:<28} {:>18} {:>8} {:>10}", l.name, l.kind, format!("{c}x{d}x{h}x{w}"), drop, l.parameters)?;
        }
        write!(f, "total parameters: {}", self.parameters)
    }
}
