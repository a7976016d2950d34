//! Volume-level composition of projection, degradation and reconstruction.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::projector::{
    absorption_rescale, apply_photon_noise_scaled, forward_project, subsample_angles, uniform_angles, DoseSpec,
    Sinogram,
};
use crate::recon::{fbp_volume, sirt, Filter};
use crate::volume::{Provenance, SliceImage, Volume};

/// Per-slice sinograms of `volume` at `n_angles` uniform views over 180°.
pub fn project_volume(volume: &Volume, n_angles: usize) -> Result<Vec<Sinogram>> {
    let angles = uniform_angles(n_angles);
    (0..volume.depth())
        .into_par_iter()
        .map(|i| forward_project(volume.slice(i), &angles))
        .collect()
}

pub fn subsample_volume(sinos: &[Sinogram], factor: usize) -> Result<Vec<Sinogram>> {
    sinos.iter().map(|s| subsample_angles(s, factor)).collect()
}

/// Photon-noise degradation with one absorption rescale factor for the whole
/// volume. Returns the noisy sinograms and the factor.
pub fn noisy_volume(sinos: &[Sinogram], dose: &DoseSpec) -> Result<(Vec<Sinogram>, f64)> {
    dose.validate()?;
    let refs: Vec<&Sinogram> = sinos.iter().collect();
    let k = absorption_rescale(&refs, dose.absorption_scale)?;
    let out = sinos
        .par_iter()
        .enumerate()
        .map(|(i, s)| apply_photon_noise_scaled(s, dose, k, i))
        .collect::<Result<Vec<_>>>()?;
    Ok((out, k))
}

/// Sinograms scaled by `k`, the noiseless counterpart of [`noisy_volume`].
pub fn rescaled_volume(sinos: &[Sinogram], k: f64) -> Result<Vec<Sinogram>> {
    let dose = DoseSpec {
        noiseless: true,
        ..DoseSpec::new(1.0, 0)
    };
    sinos
        .iter()
        .enumerate()
        .map(|(i, s)| apply_photon_noise_scaled(s, &dose, k, i))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Fbp(Filter),
    Sirt { iterations: usize, nonneg: bool },
}

pub fn reconstruct_volume(sinos: &[Sinogram], method: Method, provenance: Provenance) -> Result<Volume> {
    if sinos.is_empty() {
        return Err(Error::InvalidSpec("no sinograms to reconstruct".into()));
    }
    match method {
        Method::Fbp(filter) => fbp_volume(sinos, filter, provenance),
        Method::Sirt { iterations, nonneg } => {
            let slices = sinos
                .par_iter()
                .enumerate()
                .map(|(k, s)| {
                    sirt(s, iterations, nonneg).map(|mut img| {
                        img.slice_index = k;
                        img.provenance = provenance;
                        img
                    })
                })
                .collect::<Result<Vec<SliceImage>>>()?;
            Volume::from_slices(&slices, provenance)
        }
    }
}
