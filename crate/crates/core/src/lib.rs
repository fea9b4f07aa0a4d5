//! Gaussian-process regression with uniform error bounds, kernel data-density
//! measures, tracking-error certificates for feedback-linearized systems and
//! an episodic data-collection loop that drives the certificate below a target.

pub mod density;
pub mod episodic;
pub mod error;
pub mod error_bounds;
pub mod gp;
pub mod kernels;
pub mod simulation;
pub mod tracking;

pub use error::{Error, Result};
pub use error_bounds::{BoundParams, DomainBox, UniformBound};
pub use gp::{GpModel, TrainingSet};
pub use kernels::{KernelFamily, KernelSpec};
