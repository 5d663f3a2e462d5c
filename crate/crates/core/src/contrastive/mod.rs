//! Momentum-contrast pretraining.
//!
//! The query encoder `f_q` and its projection head are trained by
//! back-propagation against a queue of keys produced by the key encoder
//! `f_k`, whose weights trail `f_q` as an exponential moving average.

mod head;
mod loss;
mod momentum;
mod pretrain;
mod queue;

pub use head::{project_on_tape, ModelConfig, ProjectionHead, HEAD_PREFIX};
pub use loss::{
    cosine_similarity, info_nce_loss, info_nce_rows, nt_xent_loss, nt_xent_rows, InfoNceOutput,
};
pub use momentum::MomentumPair;
pub use pretrain::{
    embed, pretrain_epoch, similarity_gap, warmup_queue, EpochMetrics, PretrainConfig,
};
pub use queue::KeyQueue;
