//! The max-retrieval experiment: data, model, gradients, training and
//! size-sweep evaluation.

pub mod adam;
pub mod checkpoint;
pub mod data;
pub mod eval;
pub mod grad;
pub mod model;
pub mod train;

pub use adam::{adam_step, AdamConfig, AdamMoments};
pub use checkpoint::{load_params, save_params, Checkpoint};
pub use data::{generate_batch, generate_example, RetrievalExample, FEATURE_WIDTH, NUM_CLASSES};
pub use eval::{default_sizes, evaluate, evaluate_paired, ArmStats, EvalConfig, SizeEval};
pub use grad::{batch_loss, loss_and_grads, LossParts};
pub use model::{ForwardTrace, ModelParams, Normalizer, EMBED_DIM};
pub use train::{train, train_from, LogEntry, Precision, TrainConfig, TrainOutcome};
