use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where an image or volume came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    GroundTruth,
    LowDose,
    Denoised,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::GroundTruth => "ground_truth",
            Provenance::LowDose => "low_dose",
            Provenance::Denoised => "denoised",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ground_truth" => Some(Provenance::GroundTruth),
            "low_dose" => Some(Provenance::LowDose),
            "denoised" => Some(Provenance::Denoised),
            _ => None,
        }
    }
}

/// 3D attenuation grid indexed `(depth, row, col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub data: Array3<f32>,
    pub voxel_size: f32,
    pub provenance: Provenance,
}

impl Volume {
    /// Wraps `data`, checking square slices and finite values.
    ///
    /// Reconstructions can be slightly negative, so non-negativity is only
    /// enforced by [`Volume::check_non_negative`] where the caller needs it.
    pub fn new(data: Array3<f32>, provenance: Provenance) -> Result<Self> {
        let (_, h, w) = data.dim();
        if h != w {
            return Err(Error::Geometry(format!(
                "volume slices must be square, got {h}x{w}"
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure(format!(
                "volume contains non-finite value {bad}"
            )));
        }
        Ok(Volume {
            data,
            voxel_size: 1.0,
            provenance,
        })
    }

    pub fn zeros(depth: usize, size: usize, provenance: Provenance) -> Self {
        Volume {
            data: Array3::zeros((depth, size, size)),
            voxel_size: 1.0,
            provenance,
        }
    }

    /// From a stack of equally sized slices.
    pub fn from_slices(slices: &[SliceImage], provenance: Provenance) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::Shape("cannot build a volume from zero slices".into()))?;
        let (h, w) = first.data.dim();
        let mut data = Array3::zeros((slices.len(), h, w));
        for (k, s) in slices.iter().enumerate() {
            if s.data.dim() != (h, w) {
                return Err(Error::Shape(format!(
                    "slice {k} is {:?}, expected {:?}",
                    s.data.dim(),
                    (h, w)
                )));
            }
            data.index_axis_mut(Axis(0), k).assign(&s.data);
        }
        Volume::new(data, provenance)
    }

    pub fn depth(&self) -> usize {
        self.data.dim().0
    }

    pub fn size(&self) -> usize {
        self.data.dim().2
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn slice(&self, index: usize) -> ArrayView2<'_, f32> {
        self.data.index_axis(Axis(0), index)
    }

    pub fn slice_image(&self, index: usize) -> SliceImage {
        SliceImage {
            data: self.slice(index).to_owned(),
            provenance: self.provenance,
            slice_index: index,
        }
    }

    pub fn check_non_negative(&self) -> Result<()> {
        match self.data.iter().find(|v| **v < 0.0) {
            Some(v) => Err(Error::InvalidSpec(format!(
                "volume has negative attenuation {v}"
            ))),
            None => Ok(()),
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }
}

/// One reconstructed slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceImage {
    pub data: Array2<f32>,
    pub provenance: Provenance,
    pub slice_index: usize,
}

impl SliceImage {
    pub fn new(data: Array2<f32>, provenance: Provenance, slice_index: usize) -> Self {
        SliceImage {
            data,
            provenance,
            slice_index,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.data.dim()
    }
}

/// `depth` adjacent low-dose slices centered on `center_index`, the generator
/// input for one output slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceStack {
    /// `(depth, height, width)`.
    pub data: Array3<f32>,
    pub center_index: usize,
}

impl SliceStack {
    pub fn new(data: Array3<f32>, center_index: usize) -> Result<Self> {
        let d = data.dim().0;
        if d % 2 == 0 {
            return Err(Error::InvalidSpec(format!("stack depth must be odd, got {d}")));
        }
        Ok(SliceStack { data, center_index })
    }

    /// Slices `i - d/2 ..= i + d/2` of `volume`, clamping out-of-range
    /// indices to the nearest valid slice.
    pub fn from_volume(volume: &Volume, center: usize, depth: usize) -> Result<Self> {
        if depth % 2 == 0 {
            return Err(Error::InvalidSpec(format!("stack depth must be odd, got {depth}")));
        }
        let n = volume.depth();
        if center >= n {
            return Err(Error::Index(format!("slice {center} out of range for depth {n}")));
        }
        let idx = stack_indices(center, depth, n);
        Ok(SliceStack {
            data: volume.data.select(Axis(0), &idx),
            center_index: center,
        })
    }

    pub fn depth(&self) -> usize {
        self.data.dim().0
    }

    pub fn dims(&self) -> (usize, usize) {
        let (_, h, w) = self.data.dim();
        (h, w)
    }
}

/// Source slice for each stack position, clamped to `0..n`.
pub fn stack_indices(center: usize, depth: usize, n: usize) -> Vec<usize> {
    let half = (depth / 2) as isize;
    (-half..=half)
        .map(|o| (center as isize + o).clamp(0, n as isize - 1) as usize)
        .collect()
}
