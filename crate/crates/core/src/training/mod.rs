//! Augmentation, parameter groups, the learning-rate schedule, the
//! optimizer and the epoch loop.

mod augment;
mod data;
mod optim;
mod schedule;
mod trainer;

pub use augment::{test_transform, train_transform, AugmentationConfig, Chw, ColorJitter};
pub use data::{epoch_batches, load_rgb, load_test_batch, stack_chw, BatchSampler, ImageCache, LabelMap, TrainLoader};
pub use optim::{build_param_groups, Adam, AdamConfig, OptimGroup, ParamGroups};
pub use schedule::ScheduleConfig;
pub use trainer::{
    checkpoint_name, train, train_until, validation_rank1, EpochMetrics, ResumeState, TrainConfig, TrainData,
    TrainOutputs, TrainReport, BEST_CHECKPOINT, LAST_CHECKPOINT,
};
