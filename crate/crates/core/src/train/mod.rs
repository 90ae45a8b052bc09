//! Pair samplers, the siamese update, Adam with plateau halving and the
//! training loop.

pub mod data;
pub mod optim;
pub mod sampler;
pub mod step;
pub mod trainer;

pub use data::{aux_label, stack_inputs, FoldData, PairBatch, Split};
pub use optim::{adam_step, lr_on_plateau, AdamState, PlateauScheduler};
pub use sampler::{balanced_pool, loader_1, loader_2, Sampler};
pub use step::{
    gradcheck_grid, gradcheck_step, siamese_objective, siamese_step, GradCheckCase, Objective, StepOutput, GRADCHECK_LAMBDAS,
    GRADCHECK_PAIRS,
};
pub use trainer::{train, train_multitask, validate, EpochRecord, RunResult, TrainConfig, ValidationResult};
