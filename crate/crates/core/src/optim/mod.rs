//! Parameter updates and learning-rate schedules.

mod adamw;
mod schedule;

pub use adamw::{AdamW, AdamWConfig, Moments};
pub use schedule::{cawr_lr, onecycle_lr, ScheduleConfig, ScheduleKind};
