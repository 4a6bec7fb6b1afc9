//! Forecasting model, training loop, prediction and checkpoints.

pub mod checkpoint;
mod model;
pub mod predict;
pub mod sampler;
pub mod train;

pub use checkpoint::Checkpoint;
pub use model::{
    build_variant, forward, forward_on, init_params, loss_mae, loss_on, snapshot, window_gradient,
    window_loss, ForwardTrace, LossKind, ModelContext, Subgraph, Variant,
};
pub use predict::{predict, ForecastRow, ForecastTable};
pub use sampler::{sample_counties, sample_subgraph};
pub use train::{
    split_windows, train, train_split, AnchorMode, Adam, EnsemblePredictor, EpochRecord, Normalizer, Selection, SeedRun,
    TrainConfig, TrainOutcome, TrainingLog, Transform,
};
