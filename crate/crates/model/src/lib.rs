//! Light-field video synthesis from a monocular video.
//!
//! For each frame the network predicts 81 appearance flows that warp a
//! shifted copy of the input into every view of a 9×9 light field, refines
//! the result with a 3-D occlusion network, and estimates optical flow
//! between consecutive frames to keep the output temporally consistent.

mod config;
pub mod convert;
mod error;
pub mod losses;
mod network;
mod persist;
mod synth;
mod train;

pub use config::NetworkConfig;
pub use error::{ModelError, Result};
pub use network::{Features, Network, Skips, LEAKY_SLOPE, PERCEP_SEED};
pub use synth::{shifted_views, synth_initial, variance_masks, Pass, PassOptions, SynthesisOutput};
pub use train::{train, train_with, LossRecord, TrainOptions, TrainOutcome, CSV_HEADER};
