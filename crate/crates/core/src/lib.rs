//! Oracle Cramér-Rao bound experiment design for undersampled k-space acquisitions.
//!
//! The crate builds candidate Fourier/SENSE measurement sets over a Cartesian grid,
//! restricts them to an exemplar's wavelet-domain support, and greedily deletes
//! acquisition groups (readout lines or k-space locations across all coils) so that
//! the trace of the support-constrained CRB grows as slowly as possible. Designed
//! patterns can be compared against uniform, CAIPI and Poisson-disc baselines by
//! retrospective undersampling and IRLS reconstruction of synthetic phantoms.

// Links the system OpenBLAS used by ndarray's gemm and ndarray-linalg.
extern crate blas_src;

pub mod baselines;
pub mod container;
pub mod crb;
pub mod design;
pub mod encoding;
pub mod error;
mod linalg;
pub mod pattern;
pub mod phantom;
pub mod recon;
pub mod sparsity;
pub mod verify;
pub mod wavelet;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
