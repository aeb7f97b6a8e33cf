use std::fmt;
use std::str::FromStr;

use crate::attention::Gating;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Attention {
    None,
    /// One gate per level, used by every decoder (1AG).
    SharedPerLevel,
    /// Separate gates for each decoder at each level (2AG).
    PerDecoderPerLevel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Downsample {
    MaxPool,
    StridedConv,
}

/// Channel-dependent dropout rates: `rates[0]` up to `thresholds[0]`
/// channels, `rates[1]` up to `thresholds[1]`, `rates[2]` above.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutSchedule {
    pub thresholds: [usize; 2],
    pub rates: [f64; 3],
}

impl Default for DropoutSchedule {
    fn default() -> Self {
        DropoutSchedule {
            thresholds: [32, 128],
            rates: [0.1, 0.2, 0.3],
        }
    }
}

impl DropoutSchedule {
    pub fn rate(&self, channels: usize) -> f64 {
        if channels <= self.thresholds[0] {
            self.rates[0]
        } else if channels <= self.thresholds[1] {
            self.rates[1]
        } else {
            self.rates[2]
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchitectureConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub stage_channels: Vec<usize>,
    pub convs_per_stage: Vec<usize>,
    pub decoders: usize,
    pub attention: Attention,
    pub gating: Gating,
    pub downsample: Downsample,
    pub dropout: DropoutSchedule,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        ArchitectureConfig {
            in_channels: 4,
            num_classes: 4,
            stage_channels: vec![16, 32, 64, 128, 256],
            convs_per_stage: vec![2, 2, 3, 3, 4],
            decoders: 2,
            attention: Attention::PerDecoderPerLevel,
            gating: Gating::SameLevel,
            downsample: Downsample::MaxPool,
            dropout: DropoutSchedule::default(),
        }
    }
}

impl ArchitectureConfig {
    /// Single decoder without gates.
    pub fn baseline() -> Self {
        ArchitectureConfig {
            decoders: 1,
            attention: Attention::None,
            ..Self::default()
        }
    }

    pub fn stages(&self) -> usize {
        self.stage_channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.in_channels == 0 || self.num_classes == 0 {
            return bad("in_channels and num_classes must be positive".into());
        }
        if self.stage_channels.len() < 2 {
            return bad(format!("need at least 2 stages, got {}", self.stage_channels.len()));
        }
        if self.stage_channels.len() != self.convs_per_stage.len() {
            return bad(format!(
                "stage_channels has {} entries but convs_per_stage has {}",
                self.stage_channels.len(),
                self.convs_per_stage.len()
            ));
        }
        if self.stage_channels.contains(&0) || self.convs_per_stage.contains(&0) {
            return bad("stage channels and conv counts must be positive".into());
        }
        if !(1..=2).contains(&self.decoders) {
            return bad(format!("decoders must be 1 or 2, got {}", self.decoders));
        }
        if self.attention == Attention::PerDecoderPerLevel && self.decoders != 2 {
            return bad("per-decoder attention requires 2 decoders".into());
        }
        let d = &self.dropout;
        if d.rates.iter().any(|r| !(0.0..1.0).contains(r)) || d.thresholds[0] > d.thresholds[1] {
            return bad(format!("invalid dropout schedule {d:?}"));
        }
        Ok(())
    }

    pub fn has_gates(&self) -> bool {
        self.attention != Attention::None
    }

    /// Spatial extents must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.stages() - 1)
    }

    pub fn decoder_tag(index: usize) -> &'static str {
        ["A", "B"][index]
    }

    /// Prefix of the gate used by `decoder` at `level`, if any.
    pub fn gate_prefix(&self, decoder: usize, level: usize) -> Option<String> {
        match self.attention {
            Attention::None => None,
            Attention::SharedPerLevel => Some(format!("gate/{level}")),
            Attention::PerDecoderPerLevel => Some(format!("gate{}/{level}", Self::decoder_tag(decoder))),
        }
    }
}

macro_rules! keyword_enum {
    ($ty:ty, $what:literal, $($name:literal => $v:expr),+ $(,)?) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($v),)+
                    _ => Err(Error::Config(format!(
                        concat!("unknown ", $what, " '{}' (expected one of: {})"),
                        s,
                        [$($name),+].join(", ")
                    ))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let name = [$(($v, $name)),+]
                    .into_iter()
                    .find(|(v, _)| v == self)
                    .map(|(_, n)| n)
                    .unwrap_or("?");
                f.write_str(name)
            }
        }
    };
}

keyword_enum!(Attention, "attention",
    "none" => Attention::None,
    "shared_per_level" => Attention::SharedPerLevel,
    "per_decoder_per_level" => Attention::PerDecoderPerLevel,
);
keyword_enum!(Gating, "gating",
    "same_level" => Gating::SameLevel,
    "original" => Gating::Original,
);
keyword_enum!(Downsample, "downsample",
    "maxpool" => Downsample::MaxPool,
    "strided_conv" => Downsample::StridedConv,
);
