//! Element-level checkpoint minimization.
//!
//! A kernel's checkpoint variables are differentiated with reverse-mode AD;
//! elements whose derivative is exactly zero do not influence the output and
//! are left out of checkpoints. The critical regions are stored as run-length
//! masks next to the checkpoint files.

pub mod adtape;
pub mod ckpt;
pub mod kernels;
pub mod mask;
pub mod real;
pub mod scrutiny;
pub mod viz;
