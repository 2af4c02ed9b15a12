pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod loss;
pub mod matching;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod plot;
pub mod rng;
pub mod span;
pub mod tensor;
pub mod trainer;

pub use autodiff::{Tape, Var};
pub use config::Config;
pub use error::{Error, Result};
pub use model::{MhDetr, PredictionSet};
pub use span::MomentSpan;
pub use tensor::Tensor;
