//! Cross-modal mutual distillation between an image head and a counterpart
//! head.

pub mod adam;
pub mod checkpoint;
pub mod head;
pub mod loss;
pub mod trainer;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use head::{head_forward, Activation, ClusterHead, HeadGrads};
pub use loss::{
    loss_bal, loss_con, loss_dis, loss_total, loss_total_with_grads, AssignmentBatch, BatchGrads,
    LossBreakdown, LossConfig, LossTerms,
};
pub use trainer::{
    format_loss_csv, grads, predict, train, write_loss_csv, BatchInputs, DistillConfig, StepRecord,
    TrainOutput,
};
