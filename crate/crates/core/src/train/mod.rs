//! Loss, optimizer, gradient clipping, the epoch loop and grid search.

mod fit;
pub mod loss;
mod optim;
mod search;

pub use fit::{fit, fit_dataset, train_batch, EpochRecord, FitOutcome, TrainConfig};
pub use loss::{bce, bce_nll, frame_nll};
pub use optim::{adam_update, clip_global_norm, AdamState};
pub use search::{
    grid_search, rank_label, search, CellStatus, CellTrainer, DatasetTrainer, GridCell, GridOutcome, SearchReport,
    TrainedCell,
};
