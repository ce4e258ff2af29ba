//! Training and evaluation: optimizers, the train loop, leave-one-subject-
//! out cross-validation, metrics, and the type x stage sweep driver.

mod loso;
mod metrics;
mod optim;
mod sweep;
mod trainer;

pub use loso::{average_probabilities, fold_seed, loso_evaluate, EvalReport, FoldReport};
pub use metrics::{metrics, Metrics};
pub use optim::{Optimizer, OptimizerKind};
pub use sweep::{
    aggregate_rows, run_sweep, select_best, write_aggregate_csv, write_rows_csv, SweepGrid,
    SweepOptions, SweepOutcome, SweepRow, SweepState,
};
pub use trainer::{
    argmax, eval_loss, predict, predict_probs, train, EpochStats, ModelSelection, TrainOptions,
    TrainOutcome,
};
