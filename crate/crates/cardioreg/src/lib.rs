//! SDF-guided implicit neural registration of cardiac CT volumes.
//!
//! A deformable registration engine that trains a sinusoidal coordinate
//! network per frame pair of a cardiac cycle, matching CT intensities and
//! signed distance fields of the left-ventricle myocardium under a clipped
//! Jacobian-determinant regularizer. Includes a synthetic phantom with
//! analytic ground-truth motion for end-to-end validation.

pub mod edt;
pub mod error;
pub mod linalg;
pub mod io;
pub mod metrics;
pub mod objective;
pub mod phantom;
pub mod pipeline;
pub mod sdf;
pub mod siren;
pub mod volume;

pub use error::{Error, Result};
