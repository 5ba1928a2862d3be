//! Microlocal tools: FBI transform and finite-lambda wavefront detection, wavefront
//! propagation through the canonical relation, and the stationary-phase pipeline.

pub mod fbi;
pub mod phase;
pub mod propagate;

pub use fbi::{
    decay_from, decay_rate_estimate, default_lambdas, fbi_coefficients, fbi_inverse, fbi_pairing, fbi_transform,
    pair_with_packet, planar_phase_grid, wavefront_scan, DecayEstimate, DetectorConfig, WavePacketFamily,
    WavefrontReport, WfClass,
};
pub use phase::{
    chi_map, chi_plus, critical_point_multistart, critical_point_solve, kernel_k_lambda, radon_kernel_direct,
    PhaseDiagnostics,
};
pub use propagate::propagate_wavefront;

use crate::fibration::FibrationError;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MicrolocalError {
    #[error(transparent)]
    Fibration(#[from] FibrationError),
    #[error("no fiber through x = {x:?} meets the parameter grid")]
    NoIncidence { x: Vec<f64> },
    #[error("v is not in the image of the left projection (best residual {residual:e})")]
    NotInImage { residual: f64 },
    #[error("complex Newton diverged (residual {residual:e})")]
    NewtonDiverged { residual: f64 },
    #[error("Hessian of the phase is degenerate (|det| = {det:e})")]
    HessianDegenerate { det: f64 },
    #[error("coordinate chart on Z failed: {0}")]
    ChartFailure(String),
}
