use crate::engine::{Element, Tensor};
use crate::error::{arg_err, shape_err, Result};

pub const NUM_CLASSES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    WholeTumor,
    TumorCore,
    Enhancing,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::WholeTumor, Region::TumorCore, Region::Enhancing];

    pub fn short_name(self) -> &'static str {
        match self {
            Region::WholeTumor => "WT",
            Region::TumorCore => "TC",
            Region::Enhancing => "ET",
        }
    }
}

pub fn region_positive_set(region: Region) -> &'static [u8] {
    match region {
        Region::WholeTumor => &[1, 2, 3],
        Region::TumorCore => &[1, 3],
        Region::Enhancing => &[3],
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn check_labels(pred: &[u8], truth: &[u8]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(shape_err!("label volumes differ in size: {} vs {}", pred.len(), truth.len()));
    }
    if let Some(bad) = pred.iter().chain(truth).find(|&&l| l as usize >= NUM_CLASSES) {
        return Err(arg_err!("label {bad} out of range 0..{NUM_CLASSES}"));
    }
    Ok(())
}

/// Binarizes both volumes by membership in `positive` and counts agreement.
pub fn confusion_counts(pred: &[u8], truth: &[u8], positive: &[u8]) -> Result<ConfusionCounts> {
    check_labels(pred, truth)?;
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.iter().zip(truth) {
        match (positive.contains(&p), positive.contains(&t)) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub dice: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

/// Dice, sensitivity and specificity. A class absent from both volumes scores
/// 1; absent from exactly one it scores 0.
pub fn metric_scores(c: ConfusionCounts) -> Scores {
    let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
    let dice = if c.tp + c.fp + c.fn_ == 0 { 1.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
    let sensitivity = match (c.tp + c.fn_, c.fp) {
        (0, 0) => 1.0,
        (0, _) => 0.0,
        _ => tp / (tp + fn_),
    };
    let specificity = if c.tn + c.fp == 0 { 1.0 } else { tn / (tn + fp) };
    Scores { dice, sensitivity, specificity }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scored {
    pub counts: ConfusionCounts,
    pub scores: Scores,
}

impl Scored {
    fn new(counts: ConfusionCounts) -> Self {
        Scored { counts, scores: metric_scores(counts) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub classes: [Scored; NUM_CLASSES],
    /// Ordered WT, TC, ET.
    pub regions: [Scored; 3],
}

pub fn evaluate_volume(pred: &[u8], truth: &[u8]) -> Result<MetricsReport> {
    check_labels(pred, truth)?;
    let mut classes = [Scored::new(ConfusionCounts::default()); NUM_CLASSES];
    for (c, slot) in classes.iter_mut().enumerate() {
        *slot = Scored::new(confusion_counts(pred, truth, &[c as u8])?);
    }
    let mut regions = [Scored::new(ConfusionCounts::default()); 3];
    for (r, slot) in Region::ALL.iter().zip(regions.iter_mut()) {
        *slot = Scored::new(confusion_counts(pred, truth, region_positive_set(*r))?);
    }
    Ok(MetricsReport { classes, regions })
}

/// Per-voxel argmax over axis 1 of `(N, C, ...)`; ties go to the lowest class.
pub fn argmax_labels<T: Element>(logits: &Tensor<T>) -> Result<Vec<u8>> {
    if logits.rank() < 2 || logits.shape()[1] > u8::MAX as usize {
        return Err(shape_err!("cannot take class argmax of shape {:?}", logits.shape()));
    }
    let (n, c) = (logits.shape()[0], logits.shape()[1]);
    let sp = logits.numel() / (n * c);
    let d = logits.data();
    let mut out = Vec::with_capacity(n * sp);
    for b in 0..n {
        for k in 0..sp {
            let mut best = 0;
            for ch in 1..c {
                if d[(b * c + ch) * sp + k] > d[(b * c + best) * sp + k] {
                    best = ch;
                }
            }
            out.push(best as u8);
        }
    }
    Ok(out)
}

/// One-hot `(C, ...)` channel-major target back to labels.
pub fn labels_from_one_hot<T: Element>(target: &Tensor<T>) -> Result<Vec<u8>> {
    let shape = target.shape();
    let mut batched = vec![1];
    batched.extend_from_slice(shape);
    argmax_labels(&target.reshape(&batched)?)
}

/// Column names of one metrics row after `epoch, split, loss, lr`.
pub fn metric_columns() -> Vec<String> {
    let mut cols: Vec<String> = (0..NUM_CLASSES).map(|c| format!("dice_c{c}")).collect();
    for kind in ["dice", "sens", "spec"] {
        for r in Region::ALL {
            cols.push(format!("{kind}_{}", r.short_name()));
        }
    }
    cols
}

/// Scores averaged over volumes, in [`metric_columns`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanScores {
    pub values: Vec<f64>,
    pub volumes: usize,
}

impl MeanScores {
    pub fn get(&self, column: &str) -> Option<f64> {
        metric_columns().iter().position(|c| c == column).map(|i| self.values[i])
    }

    pub fn wt_dice(&self) -> f64 {
        self.values[NUM_CLASSES]
    }
}

fn row(r: &MetricsReport) -> Vec<f64> {
    let mut v: Vec<f64> = r.classes.iter().map(|s| s.scores.dice).collect();
    v.extend(r.regions.iter().map(|s| s.scores.dice));
    v.extend(r.regions.iter().map(|s| s.scores.sensitivity));
    v.extend(r.regions.iter().map(|s| s.scores.specificity));
    v
}

/// Unweighted mean over volumes, accumulated in the given order.
pub fn mean_scores(reports: &[MetricsReport]) -> MeanScores {
    let width = metric_columns().len();
    let mut acc = vec![0.0; width];
    for r in reports {
        for (a, v) in acc.iter_mut().zip(row(r)) {
            *a += v;
        }
    }
    let n = reports.len().max(1) as f64;
    MeanScores { values: acc.into_iter().map(|a| a / n).collect(), volumes: reports.len() }
}
