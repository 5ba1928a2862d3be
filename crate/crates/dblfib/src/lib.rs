//! Double fibration transforms on manifolds with boundary: forward operators,
//! Bolker checks, FBI-based wavefront detection, phase diagnostics and
//! layer-stripping recovery.

pub mod expr;
pub mod geometry;
pub mod linalg;
pub mod quad;
pub mod fibration;
pub mod transforms;
pub mod bolker;
pub mod microlocal;
pub mod recovery;
pub mod cli;
