//! Momentum-contrastive self-supervised pretraining followed by
//! prototypical-network few-shot classification, on a small reverse-mode
//! autodiff engine.

pub mod augment;
pub mod checkpoint;
pub mod autodiff;
pub mod config;
pub mod contrastive;
pub mod data;
pub mod error;
pub mod fewshot;
pub mod gradcheck;
pub mod image;
pub mod metrics;
pub mod nn;
pub mod ops;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod rng;
pub mod tensor;

pub use autodiff::{Tape, Var};
pub use error::{Error, Result};
pub use image::ImageTensor;
pub use optim::{he_init, sgd_step, SgdConfig};
pub use params::{Param, ParameterSet};
pub use rng::Philox;
pub use tensor::{Real, Tensor};
