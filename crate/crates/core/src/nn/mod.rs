//! Two-branch 1-D CNN with hand-written forward and backward passes.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader};
pub use gradcheck::{finite_diff_check, relative_error, GradCheckReport, DEFAULT_STEP, REL_FLOOR};
pub use layers::{argmax, softmax, Mode};
pub use model::{
    backward, batch_from_features, forward, init_params, BranchDims, ForwardOutput, Gradients,
    ModelDims, ModelParams,
};
pub use tensor::Tensor;
