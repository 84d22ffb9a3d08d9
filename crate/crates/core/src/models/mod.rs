//! Binary text classifiers, their training loop and the embedding-level
//! interfaces used by salience methods.

mod birnn;
mod checkpoint;
mod config;
mod params;
mod train;
mod trained;
mod transformer;

pub use birnn::BiRnnAttn;
pub use checkpoint::{from_bytes, load_checkpoint, save_checkpoint, to_bytes};
pub use config::{Arch, ModelConfig, Optimizer, TrainConfig};
pub use params::Params;
pub use train::train;
pub use trained::{objective_from_logit, Net, Objective, Prediction, TrainRecord, TrainedModel};
pub use transformer::TransformerEncoder;
