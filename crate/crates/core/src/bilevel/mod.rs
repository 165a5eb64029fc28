//! The alternating bi-level scheme: lower-level updates of the encoder and
//! generator, upper-level updates of the energy network.

mod adam;
mod config;
mod model;
mod steps;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use config::{EnergyLoss, GradMode, TrainConfig};
pub use model::{joint_energy, ArchSpec, BiDvlModels, DecoupledEblvm};
pub use steps::{ll_step, ll_step_with, ul_step, LlTerms, LossReport};
pub use train::{train, Recorder, TrainObserver, Trainer, SN_STEP_ITERS};
