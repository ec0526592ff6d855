//! Differentiable transient forward model for non-line-of-sight imaging, with
//! joint recovery of hidden-scene albedo and relay-wall scan positions.
//!
//! The model replaces the time-binning window of the classic three-bounce
//! renderer with a Gaussian impulse so that the least-squares measurement
//! residual has non-zero derivatives with respect to the scan and detection
//! positions. [`optim::autocal`] alternates Adam updates of those positions
//! with Adam updates of the albedo volume.
//!
//! Compute kernels run data-parallel through rayon when the default
//! `parallel` feature is on and fall back to sequential loops otherwise.
//! Both paths produce bit-identical results.

pub mod analysis;
pub mod error;
pub mod forward;
pub mod gradient;
pub mod init;
pub mod io;
pub mod optim;
pub mod par;
pub mod sim;
pub mod types;

pub use error::{Error, Result};
pub use forward::{all_scans, forward_gaussian, forward_rect_oracle, loss, ForwardWorkspace};
pub use gradient::{grad_loss, grad_rho_only, GradientBundle};
pub use optim::{autocal, reconstruct_only, AdamConfig, AdamState, AutocalOutput, AutocalSchedule};
pub use types::{
    total_path_length, AxisMask, BinConvention, CalibrationState, OptimizationReport, SceneConfig, TransientSet, Vec3,
    Volume, VolumeGrid,
};
