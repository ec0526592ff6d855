//! Adam updates and the alternating calibration / reconstruction schedule.

mod adam;
mod autocal;
mod sampler;

pub use adam::{AdamConfig, AdamState};
pub use autocal::{autocal, autocal_with, reconstruct_only, reconstruct_only_with, AutocalOutput, AutocalSchedule};
pub use sampler::BatchSampler;
