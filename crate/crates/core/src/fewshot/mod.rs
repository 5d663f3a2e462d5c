//! Prototypical-network few-shot stage: episode sampling, class prototypes,
//! distance-softmax posteriors, the meta loss and encoder fine-tuning.

mod episode;
mod finetune;
mod proto;

pub use episode::{
    sample_episode, sample_episode_from, sample_split_episode, Episode, LabeledSample,
};
pub use finetune::{finetune, predict, predict_episode, EpisodeLog, Prediction};
pub use proto::{
    class_posterior, compute_prototypes, embed_images, episode_loss_rows, meta_loss, nearest_prototype,
    prototypes_from_embeddings, Distance, LossForm, MetaConfig, PrototypeSet, RIVAL_EPS,
};
