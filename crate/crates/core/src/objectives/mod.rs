//! Losses and segmentation metrics.

mod loss;
mod metrics;

pub use loss::{dice_loss, focal_loss, total_loss, LossConfig};
pub use metrics::{
    argmax_labels, confusion_counts, evaluate_volume, labels_from_one_hot, mean_scores,
    metric_columns, metric_scores, region_positive_set, ConfusionCounts, MeanScores,
    MetricsReport, Region, Scored, Scores, NUM_CLASSES,
};
