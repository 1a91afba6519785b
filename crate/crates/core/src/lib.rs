//! Shuffled contrastive video representation learning at desk scale.
//!
//! The crate bundles everything needed to pretrain and evaluate a small
//! video transformer with a shuffled-order contrastive objective alongside a
//! cross-clip visual contrastive objective:
//!
//! * [`synthdata`]: procedural sprite videos whose labels live only in motion
//!   or only in appearance,
//! * [`motion`]: motion profiling and targeted window sampling,
//! * [`augment`]: temporally consistent augmentation and group shuffling,
//! * [`model`]: the encoder and its projection heads,
//! * [`objective`]: InfoNCE and the composed losses,
//! * [`momentum`]: EMA target network and memory bank,
//! * [`trainer`]: the pretraining loop and checkpoints,
//! * [`eval`]: linear probe, shuffle sensitivity, retrieval, low-shot and
//!   per-class motion reports.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision for common uses.

pub mod augment;
pub mod config;
pub mod error;
pub mod eval;
pub mod model;
pub mod momentum;
pub mod motion;
pub mod objective;
pub mod rng;
pub mod scalar;
pub mod synthdata;
pub mod trainer;
pub mod video;

pub use config::Config;
pub use error::{Error, Result};
pub use rng::Rng;
pub use scalar::Scalar;
pub use video::{ClipSpec, VideoTensor};

/// Single-precision encoder used for training.
pub type Encoder32 = model::Encoder<f32>;
/// Double-precision encoder used for gradient checks.
pub type Encoder64 = model::Encoder<f64>;
/// Training state with single-precision weights.
pub type TrainState32 = trainer::TrainState<f32>;
pub type TrainState64 = trainer::TrainState<f64>;
pub type MemoryBank32 = momentum::MemoryBank<f32>;
pub type MemoryBank64 = momentum::MemoryBank<f64>;
