//! Low-dose tomography toolkit: foam phantoms, parallel-beam projection,
//! FBP/SIRT reconstruction, an adversarially trained slice-stack denoiser and
//! SSIM/PSNR evaluation.

pub mod enhance;
pub mod error;
pub mod io;
pub mod losses;
pub mod nn;
pub mod phantom;
pub mod pipeline;
pub mod plot;
pub mod projector;
pub mod quality;
pub mod recon;
pub mod stages;
pub mod trainer;
pub mod volume;

pub use error::{Error, Result};
