//! Dataset assembly, the training loop and split evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::checkpoint::{Checkpoint, OptimizerState};
use super::config::{RunConfig, Split, PHANTOM_DATASET};
use crate::data::{augment, generate_phantom, list_subject_dirs, load_subject, preprocess_subject, split_dataset, Sample, Subject, NUM_LABELS};
use crate::engine::{Element, Rng, Stream, Tape, Tensor};
use crate::error::{shape_err, Error, Result};
use crate::layers::softmax_channels;
use crate::network::{bind_params, build_model, forward, predict, ArchitectureConfig, ForwardOptions, ModelParams};
use crate::objectives::{argmax_labels, evaluate_volume, labels_from_one_hot, mean_scores, metric_columns, total_loss, MeanScores, MetricsReport};
use crate::optim::AdamW;

pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const LAST_CHECKPOINT: &str = "checkpoint_last.ddun";
pub const BEST_CHECKPOINT: &str = "checkpoint_best.ddun";

#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
}

/// Checks that `extents` suit the model before any data is touched.
pub fn check_extents(model: &ArchitectureConfig, extents: &[usize]) -> Result<()> {
    let m = model.size_multiple();
    if extents.iter().any(|&e| e % m != 0) {
        return Err(shape_err!(
            "crop extents {extents:?} must be divisible by {m} for a {}-stage model",
            model.stages()
        ));
    }
    Ok(())
}

/// Checks the model against the four-modality, four-label data layout.
pub fn check_data_compatibility(model: &ArchitectureConfig) -> Result<()> {
    if model.in_channels != 4 || model.num_classes != NUM_LABELS {
        return Err(Error::Config(format!(
            "model expects {} input channels and {} classes; the data provides 4 modalities and {NUM_LABELS} labels",
            model.in_channels, model.num_classes
        )));
    }
    Ok(())
}

pub fn load_subjects(cfg: &RunConfig) -> Result<Vec<Subject>> {
    let d = &cfg.data;
    let mut subjects = if d.dataset == PHANTOM_DATASET {
        generate_phantom(d.seed, d.phantom_size, d.phantom_count)?
    } else {
        list_subject_dirs(&d.dataset)?.into_iter().map(load_subject).collect::<Result<Vec<_>>>()?
    };
    subjects.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(subjects)
}

/// Seeded split followed by preprocessing at the configured crop.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    check_data_compatibility(&cfg.model)?;
    check_extents(&cfg.model, &cfg.data.crop)?;
    let subjects = load_subjects(cfg)?;
    let ids: Vec<usize> = (0..subjects.len()).collect();
    let (train, test) = split_dataset(&ids, cfg.data.split_ratio, cfg.data.seed)?;
    let prep = |idx: Vec<usize>| -> Result<Vec<Sample>> {
        idx.into_iter().map(|i| preprocess_subject(&subjects[i], cfg.data.crop)).collect()
    };
    Ok(Dataset { train: prep(train)?, test: prep(test)? })
}

/// Stacks `(C, D, H, W)` tensors into `(N, C, D, H, W)`.
pub fn stack(items: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
    let batched = items
        .iter()
        .map(|t| {
            let mut s = vec![1];
            s.extend_from_slice(t.shape());
            t.reshape(&s)
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::concat(0, &batched.iter().collect::<Vec<_>>())
}

#[derive(Clone, Debug)]
pub struct SplitEval {
    pub loss: f64,
    pub scores: MeanScores,
    pub reports: Vec<MetricsReport>,
}

/// Eval-mode loss and metrics, averaged over subjects.
pub fn evaluate_samples<T: Element>(params: &ModelParams<T>, cfg: &RunConfig, samples: &[Sample]) -> Result<SplitEval> {
    let mut loss = 0.0;
    let mut reports = Vec::with_capacity(samples.len());
    for s in samples {
        let x = stack(&[&s.image])?.cast::<T>();
        let target = stack(&[&s.target])?.cast::<T>();
        let logits = predict(params, &cfg.model, &x, false)?.logits;
        let probs = softmax_channels(&logits)?;
        loss += total_loss(&probs, &target, &cfg.loss)?;
        reports.push(evaluate_volume(&argmax_labels(&logits)?, &labels_from_one_hot(&s.target)?)?);
    }
    Ok(SplitEval {
        loss: loss / samples.len().max(1) as f64,
        scores: mean_scores(&reports),
        reports,
    })
}

pub fn csv_header() -> String {
    let mut cols = vec!["epoch".to_string(), "split".into(), "loss".into(), "lr".into()];
    cols.extend(metric_columns());
    cols.join(",")
}

/// Floats use the shortest text that parses back to the same value.
pub fn csv_row(epoch: u64, split: Split, lr: f64, eval: &SplitEval) -> String {
    let mut row = format!("{epoch},{},{},{lr}", split.name(), eval.loss);
    for v in &eval.scores.values {
        let _ = write!(row, ",{v}");
    }
    row
}

#[derive(Clone, Debug)]
pub struct EpochRecord {
    pub epoch: u64,
    pub train_loss: f64,
    pub lr: f64,
    pub evals: Vec<(Split, SplitEval)>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub params: ModelParams<f32>,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<u64>,
    pub steps: u64,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Split used to pick the best checkpoint: test when evaluated, else the first.
fn selection_split(cfg: &RunConfig) -> Split {
    if cfg.run.eval_splits.contains(&Split::Test) {
        Split::Test
    } else {
        cfg.run.eval_splits[0]
    }
}

/// Full training run into `cfg.run.out`. `log` receives the split sizes, then
/// one line per epoch.
pub fn train(cfg: &RunConfig, mut log: impl FnMut(&str)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    log(&format!("subjects: {} train, {} test", data.train.len(), data.test.len()));
    if data.train.is_empty() {
        return Err(Error::Format("training split is empty".into()));
    }
    for &s in &cfg.run.eval_splits {
        if data.split(s).is_empty() {
            return Err(Error::Config(format!("run.eval_splits names the {} split, which is empty", s.name())));
        }
    }
    let dir = cfg.run.out.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let config_text = cfg.render();
    write_file(&dir.join(CONFIG_FILE), &config_text)?;

    let seed = cfg.run.seed;
    let mut params: ModelParams<f32> = build_model(&cfg.model, &mut Rng::new(seed, Stream::Init))?;
    let mut opt = AdamW::<f32>::new(cfg.optim.adamw);
    let batch = cfg.run.batch_size;
    let steps_per_epoch = data.train.len().div_ceil(batch) as u64;
    let schedule = cfg.optim.schedule_config(cfg.run.epochs * steps_per_epoch, steps_per_epoch);
    schedule.validate()?;

    let save = |params: &ModelParams<f32>, opt: &AdamW<f32>, name: &str| -> Result<()> {
        let ck = Checkpoint { config: config_text.clone(), params: params.clone(), optimizer: Some(OptimizerState::of(opt)) };
        ck.save(dir.join(name))
    };

    let mut csv = csv_header() + "\n";
    write_file(&dir.join(METRICS_FILE), &csv)?;
    let select = selection_split(cfg);
    let mut best: Option<(f64, u64)> = None;
    let mut epochs = Vec::new();
    let mut step = 0u64;
    let mut lr = schedule.lr(0)?;

    for epoch in 1..=cfg.run.epochs {
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        Rng::keyed(seed, Stream::Split, &[epoch]).shuffle(&mut order);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(batch) {
            let samples = chunk
                .iter()
                .map(|&i| {
                    let mut rng = Rng::keyed(seed, Stream::Augment, &[epoch, i as u64]);
                    augment(&data.train[i], &mut rng, cfg.data.augment_prob)
                })
                .collect::<Result<Vec<_>>>()?;
            let x = stack(&samples.iter().map(|s| &s.image).collect::<Vec<_>>())?;
            let target = stack(&samples.iter().map(|s| &s.target).collect::<Vec<_>>())?;

            let mut tape = Tape::<f32>::new();
            let bound = bind_params(&mut tape, &params);
            let xv = tape.constant(x);
            let out = forward(&mut tape, &bound, &cfg.model, &xv, ForwardOptions::train(seed, step))?;
            let probs = tape.softmax_channels(out.logits)?;
            let tv = tape.constant(target);
            let loss = tape.total_loss(probs, tv, cfg.loss)?;
            let value = tape.value(loss).item()?.as_f64();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("loss is {value} at step {step} (epoch {epoch})")));
            }
            let mut grads = tape.backward(loss)?;
            let grads: BTreeMap<String, Tensor<f32>> = bound
                .iter()
                .map(|(name, v)| (name.clone(), grads.take(*v).expect("parameter leaves receive gradients")))
                .collect();
            lr = schedule.lr(step)?;
            opt.step(&mut params, &grads, lr)
                .map_err(|e| match e {
                    Error::NonFinite(m) => Error::NonFinite(format!("{m} (step {step})")),
                    e => e,
                })?;
            loss_sum += value;
            step += 1;
        }
        let train_loss = loss_sum / steps_per_epoch as f64;

        let mut record = EpochRecord { epoch, train_loss, lr, evals: Vec::new() };
        let mut line = format!("epoch {epoch}/{} train_loss {train_loss:.5} lr {lr:.3e}", cfg.run.epochs);
        if epoch % cfg.run.eval_every == 0 || epoch == cfg.run.epochs {
            for &split in &cfg.run.eval_splits {
                let ev = evaluate_samples(&params, cfg, data.split(split))?;
                csv.push_str(&csv_row(epoch, split, lr, &ev));
                csv.push('\n');
                let _ = write!(line, " | {} loss {:.5} WT dice {:.4}", split.name(), ev.loss, ev.scores.wt_dice());
                if split == select && best.is_none_or(|(b, _)| ev.scores.wt_dice() > b) {
                    best = Some((ev.scores.wt_dice(), epoch));
                    save(&params, &opt, BEST_CHECKPOINT)?;
                }
                record.evals.push((split, ev));
            }
            write_file(&dir.join(METRICS_FILE), &csv)?;
        }
        log(&line);
        epochs.push(record);
    }
    save(&params, &opt, LAST_CHECKPOINT)?;
    if best.is_none() {
        save(&params, &opt, BEST_CHECKPOINT)?;
    }
    Ok(TrainOutcome { run_dir: dir, params, epochs, best_epoch: best.map(|(_, e)| e), steps: step })
}
