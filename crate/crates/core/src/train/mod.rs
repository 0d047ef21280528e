//! Teacher-forced training: targets, enrollments, loss and optimization.

mod enroll;
mod forced;
mod labels;
mod loss;
mod optim;
mod trainer;

pub use enroll::{el_range_frames, enrollment_dropout, sample_enrollment_runs, sample_enrollments, sample_window, DropMode};
pub use forced::{forced_loss, ForcedOutput, Forcing};
pub use labels::{build_labels, LabelMatrix};
pub use loss::{bce_loss, total_loss, LossValue, BCE_EPS};
pub use optim::{noam_lr, Adam, AdamConfig, ParamGrads, Schedule};
pub use trainer::{chunk_recordings, EpochRecord, Example, Mode, StepRecord, TrainConfig, TrainReport, Trainer};
