//! Flat `key = value` run configuration.
//!
//! Lines are `section.key = value`; `#` starts a comment. Lists are comma
//! separated. Every key has a default and unknown keys are rejected.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::network::ArchitectureConfig;
use crate::objectives::LossConfig;
use crate::optim::{AdamWConfig, ScheduleConfig, ScheduleKind};

/// Prefix of environment overrides: `DDUNET_OPTIM_MAX_LR=3e-4` sets `optim.max_lr`.
pub const ENV_PREFIX: &str = "DDUNET_";
const SECTIONS: [&str; 5] = ["model", "loss", "optim", "data", "run"];
/// `data.dataset` value selecting generated phantoms instead of a directory.
pub const PHANTOM_DATASET: &str = "phantom";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split '{s}' (expected train or test)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimSettings {
    pub schedule: ScheduleKind,
    pub max_lr: f64,
    pub pct_start: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
    /// First warm-restart period, in epochs.
    pub t0_epochs: u64,
    pub t_mult: u64,
    pub min_lr: f64,
    pub adamw: AdamWConfig,
}

impl Default for OptimSettings {
    fn default() -> Self {
        let s = ScheduleConfig::default();
        OptimSettings {
            schedule: s.kind,
            max_lr: s.max_lr,
            pct_start: s.pct_start,
            div_factor: s.div_factor,
            final_div_factor: s.final_div_factor,
            t0_epochs: 10,
            t_mult: s.t_mult,
            min_lr: s.min_lr,
            adamw: AdamWConfig::default(),
        }
    }
}

impl OptimSettings {
    pub fn schedule_config(&self, total_steps: u64, steps_per_epoch: u64) -> ScheduleConfig {
        ScheduleConfig {
            kind: self.schedule,
            total_steps: total_steps.max(1),
            max_lr: self.max_lr,
            pct_start: self.pct_start,
            div_factor: self.div_factor,
            final_div_factor: self.final_div_factor,
            t0: (self.t0_epochs * steps_per_epoch).max(1),
            t_mult: self.t_mult,
            min_lr: self.min_lr,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataSettings {
    /// Directory of subject folders, or `phantom`.
    pub dataset: String,
    pub phantom_size: usize,
    pub phantom_count: usize,
    pub crop: [usize; 3],
    /// Fraction of subjects in the training split.
    pub split_ratio: f64,
    /// Seeds the split and phantom generation.
    pub seed: u64,
    pub augment_prob: f64,
}

impl Default for DataSettings {
    fn default() -> Self {
        DataSettings {
            dataset: PHANTOM_DATASET.into(),
            phantom_size: 128,
            phantom_count: 8,
            crop: [128; 3],
            split_ratio: 0.75,
            seed: 0,
            augment_prob: crate::data::AUGMENT_PROB,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSettings {
    pub epochs: u64,
    pub batch_size: usize,
    pub out: PathBuf,
    /// Evaluate every this many epochs (and always after the last).
    pub eval_every: u64,
    pub eval_splits: Vec<Split>,
    /// Seeds initialization, dropout, shuffling and augmentation.
    pub seed: u64,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            epochs: 50,
            batch_size: 1,
            out: PathBuf::from("runs/ddunet"),
            eval_every: 1,
            eval_splits: vec![Split::Test],
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct RunConfig {
    pub model: ArchitectureConfig,
    pub loss: LossConfig,
    pub optim: OptimSettings,
    pub data: DataSettings,
    pub run: RunSettings,
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.parse().map_err(|e| Error::Config(format!("{key} = '{v}': {e}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    v.split(',').map(|p| parse(key, p.trim())).collect()
}

fn parse_array<T: FromStr + Copy, const N: usize>(key: &str, v: &str) -> Result<[T; N]>
where
    T::Err: Display,
{
    let items: Vec<T> = parse_list(key, v)?;
    match items.len() {
        1 => Ok([items[0]; N]),
        n if n == N => Ok(std::array::from_fn(|i| items[i])),
        n => Err(Error::Config(format!("{key} needs 1 or {N} values, got {n}"))),
    }
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Defaults overridden by a config file.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value', got '{raw}'", i + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    /// Applies `DDUNET_<SECTION>_<KEY>` variables from `vars`.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<()> {
        let mut vars: Vec<_> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        vars.sort();
        for (var, value) in vars {
            let rest = var[ENV_PREFIX.len()..].to_ascii_lowercase();
            let key = SECTIONS
                .iter()
                .find_map(|s| rest.strip_prefix(&format!("{s}_")).map(|k| format!("{s}.{k}")))
                .ok_or_else(|| Error::Config(format!("environment variable {var} names no config key")))?;
            self.set(&key, value.trim())
                .map_err(|e| Error::Config(format!("{var}: {e}")))?;
        }
        Ok(())
    }

    /// `key=value` as given to `--set`.
    pub fn apply_assignment(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got '{assignment}'")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        let l = &mut self.loss;
        let o = &mut self.optim;
        let d = &mut self.data;
        let r = &mut self.run;
        match key {
            "model.in_channels" => m.in_channels = parse(key, v)?,
            "model.num_classes" => m.num_classes = parse(key, v)?,
            "model.stage_channels" => m.stage_channels = parse_list(key, v)?,
            "model.convs_per_stage" => m.convs_per_stage = parse_list(key, v)?,
            "model.decoders" => m.decoders = parse(key, v)?,
            "model.attention" => m.attention = parse(key, v)?,
            "model.gating" => m.gating = parse(key, v)?,
            "model.downsample" => m.downsample = parse(key, v)?,
            "model.dropout_thresholds" => m.dropout.thresholds = parse_array(key, v)?,
            "model.dropout_rates" => m.dropout.rates = parse_array(key, v)?,
            "loss.lambda_dice" => l.lambda_dice = parse(key, v)?,
            "loss.lambda_focal" => l.lambda_focal = parse(key, v)?,
            "loss.gamma" => l.gamma = parse(key, v)?,
            "loss.alpha" => l.alpha = parse(key, v)?,
            "loss.dice_eps" => l.dice_eps = parse(key, v)?,
            "loss.prob_eps" => l.prob_eps = parse(key, v)?,
            "optim.schedule" => o.schedule = parse(key, v)?,
            "optim.max_lr" => o.max_lr = parse(key, v)?,
            "optim.pct_start" => o.pct_start = parse(key, v)?,
            "optim.div_factor" => o.div_factor = parse(key, v)?,
            "optim.final_div_factor" => o.final_div_factor = parse(key, v)?,
            "optim.t0_epochs" => o.t0_epochs = parse(key, v)?,
            "optim.t_mult" => o.t_mult = parse(key, v)?,
            "optim.min_lr" => o.min_lr = parse(key, v)?,
            "optim.beta1" => o.adamw.beta1 = parse(key, v)?,
            "optim.beta2" => o.adamw.beta2 = parse(key, v)?,
            "optim.eps" => o.adamw.eps = parse(key, v)?,
            "optim.weight_decay" => o.adamw.weight_decay = parse(key, v)?,
            "data.dataset" => d.dataset = v.to_string(),
            "data.phantom_size" => d.phantom_size = parse(key, v)?,
            "data.phantom_count" => d.phantom_count = parse(key, v)?,
            "data.crop" => d.crop = parse_array(key, v)?,
            "data.split_ratio" => d.split_ratio = parse(key, v)?,
            "data.seed" => d.seed = parse(key, v)?,
            "data.augment_prob" => d.augment_prob = parse(key, v)?,
            "run.epochs" => r.epochs = parse(key, v)?,
            "run.batch_size" => r.batch_size = parse(key, v)?,
            "run.out" => r.out = PathBuf::from(v),
            "run.eval_every" => r.eval_every = parse(key, v)?,
            "run.eval_splits" => r.eval_splits = parse_list(key, v)?,
            "run.seed" => r.seed = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Every key with its resolved value; parses back to an equal config.
    pub fn render(&self) -> String {
        let (m, l, o, d, r) = (&self.model, &self.loss, &self.optim, &self.data, &self.run);
        let lines = [
            ("model.in_channels", m.in_channels.to_string()),
            ("model.num_classes", m.num_classes.to_string()),
            ("model.stage_channels", join(&m.stage_channels)),
            ("model.convs_per_stage", join(&m.convs_per_stage)),
            ("model.decoders", m.decoders.to_string()),
            ("model.attention", m.attention.to_string()),
            ("model.gating", m.gating.to_string()),
            ("model.downsample", m.downsample.to_string()),
            ("model.dropout_thresholds", join(&m.dropout.thresholds)),
            ("model.dropout_rates", join(&m.dropout.rates)),
            ("loss.lambda_dice", l.lambda_dice.to_string()),
            ("loss.lambda_focal", l.lambda_focal.to_string()),
            ("loss.gamma", l.gamma.to_string()),
            ("loss.alpha", l.alpha.to_string()),
            ("loss.dice_eps", l.dice_eps.to_string()),
            ("loss.prob_eps", l.prob_eps.to_string()),
            ("optim.schedule", o.schedule.to_string()),
            ("optim.max_lr", o.max_lr.to_string()),
            ("optim.pct_start", o.pct_start.to_string()),
            ("optim.div_factor", o.div_factor.to_string()),
            ("optim.final_div_factor", o.final_div_factor.to_string()),
            ("optim.t0_epochs", o.t0_epochs.to_string()),
            ("optim.t_mult", o.t_mult.to_string()),
            ("optim.min_lr", o.min_lr.to_string()),
            ("optim.beta1", o.adamw.beta1.to_string()),
            ("optim.beta2", o.adamw.beta2.to_string()),
            ("optim.eps", o.adamw.eps.to_string()),
            ("optim.weight_decay", o.adamw.weight_decay.to_string()),
            ("data.dataset", d.dataset.clone()),
            ("data.phantom_size", d.phantom_size.to_string()),
            ("data.phantom_count", d.phantom_count.to_string()),
            ("data.crop", join(&d.crop)),
            ("data.split_ratio", d.split_ratio.to_string()),
            ("data.seed", d.seed.to_string()),
            ("data.augment_prob", d.augment_prob.to_string()),
            ("run.epochs", r.epochs.to_string()),
            ("run.batch_size", r.batch_size.to_string()),
            ("run.out", r.out.display().to_string()),
            ("run.eval_every", r.eval_every.to_string()),
            ("run.eval_splits", r.eval_splits.iter().map(|s| s.name()).collect::<Vec<_>>().join(",")),
            ("run.seed", r.seed.to_string()),
        ];
        let mut out = String::new();
        let mut section = "";
        for (k, v) in lines {
            let s = k.split('.').next().unwrap_or("");
            if s != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                section = s;
            }
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.optim.adamw.validate()?;
        self.optim.schedule_config(1, 1).validate()?;
        let d = &self.data;
        if d.crop.iter().any(|&c| c == 0) {
            return Err(Error::Config("data.crop extents must be positive".into()));
        }
        if !(d.split_ratio > 0.0 && d.split_ratio <= 1.0) {
            return Err(Error::Config(format!("data.split_ratio must be in (0, 1], got {}", d.split_ratio)));
        }
        if !(0.0..=1.0).contains(&d.augment_prob) {
            return Err(Error::Config(format!("data.augment_prob must be in [0, 1], got {}", d.augment_prob)));
        }
        if d.dataset == PHANTOM_DATASET && d.phantom_count == 0 {
            return Err(Error::Config("data.phantom_count must be positive".into()));
        }
        let r = &self.run;
        if r.batch_size == 0 || r.eval_every == 0 {
            return Err(Error::Config("run.batch_size and run.eval_every must be positive".into()));
        }
        if r.eval_splits.is_empty() {
            return Err(Error::Config("run.eval_splits must name at least one split".into()));
        }
        Ok(())
    }
}
