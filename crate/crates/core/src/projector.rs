//! Parallel-beam Radon transform and dose-reduction degradations.
//!
//! Pixel `(i, j)` of a `W x W` slice has its center at
//! `x = j + 0.5 - W/2`, `y = i + 0.5 - W/2`. The ray for angle `θ` and
//! detector offset `t` is `t·(cos θ, sin θ) + s·(-sin θ, cos θ)`, and detector
//! bin `k` sits at `t = k + 0.5 - W/2`.
//!
//! Line integrals use Joseph's method: the ray is sampled once per row or
//! column (whichever axis it crosses faster) with linear interpolation along
//! the other axis. Forward and back projection walk the same weights, so they
//! form an exact adjoint pair.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SinogramKind {
    LineIntegral,
    Counts,
}

impl SinogramKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SinogramKind::LineIntegral => "line_integral",
            SinogramKind::Counts => "counts",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "line_integral" => Some(SinogramKind::LineIntegral),
            "counts" => Some(SinogramKind::Counts),
            _ => None,
        }
    }
}

/// Projection data for one slice, `angles x detector_bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    pub data: Array2<f32>,
    pub angles: Vec<f64>,
    pub kind: SinogramKind,
}

impl Sinogram {
    pub fn new(data: Array2<f32>, angles: Vec<f64>, kind: SinogramKind) -> Result<Self> {
        validate_angles(&angles)?;
        if data.nrows() != angles.len() {
            return Err(Error::Shape(format!(
                "sinogram has {} rows for {} angles",
                data.nrows(),
                angles.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure("sinogram contains non-finite values".into()));
        }
        if kind == SinogramKind::Counts && data.iter().any(|&v| v < 0.0 || v.fract() != 0.0) {
            return Err(Error::InvalidSpec(
                "counts sinogram must hold non-negative integers".into(),
            ));
        }
        Ok(Sinogram { data, angles, kind })
    }

    pub fn detector_bins(&self) -> usize {
        self.data.ncols()
    }

    pub fn n_angles(&self) -> usize {
        self.angles.len()
    }

    fn require_line_integral(&self) -> Result<()> {
        match self.kind {
            SinogramKind::LineIntegral => Ok(()),
            found => Err(Error::WrongKind {
                expected: "line_integral",
                found: found.as_str(),
            }),
        }
    }
}

/// `n` angles evenly spaced over `[0, π)`.
pub fn uniform_angles(n: usize) -> Vec<f64> {
    (0..n).map(|k| k as f64 * PI / n as f64).collect()
}

pub fn validate_angles(angles: &[f64]) -> Result<()> {
    if angles.is_empty() {
        return Err(Error::InvalidSpec("angle list is empty".into()));
    }
    if let Some(a) = angles.iter().find(|a| !(**a >= 0.0 && **a < PI)) {
        return Err(Error::InvalidSpec(format!("angle {a} outside [0, π)")));
    }
    if angles.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidSpec(
            "angles must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Projection geometry for square `size x size` slices. The row-major `f64`
/// buffers used here are the working representation for the iterative
/// solvers.
#[derive(Debug, Clone)]
pub struct ParallelBeam {
    size: usize,
    angles: Vec<f64>,
}

impl ParallelBeam {
    pub fn new(size: usize, angles: Vec<f64>) -> Result<Self> {
        if size == 0 {
            return Err(Error::Geometry("slice size must be positive".into()));
        }
        validate_angles(&angles)?;
        Ok(ParallelBeam { size, angles })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn n_rays(&self) -> usize {
        self.angles.len() * self.size
    }

    /// Calls `f(pixel, weight)` for every pixel touching ray `(angle, bin)`.
    #[inline]
    fn walk_ray(&self, angle: usize, bin: usize, mut f: impl FnMut(usize, f64)) {
        let n = self.size;
        let half = n as f64 / 2.0;
        let (sin, cos) = self.angles[angle].sin_cos();
        let t = bin as f64 + 0.5 - half;
        if sin.abs() >= cos.abs() {
            let w = 1.0 / sin.abs();
            for j in 0..n {
                let x = j as f64 + 0.5 - half;
                let s = (t * cos - x) / sin;
                let y = t * sin + s * cos;
                let fy = y + half - 0.5;
                let i0 = fy.floor();
                let a = fy - i0;
                let i0 = i0 as isize;
                if i0 >= 0 && (i0 as usize) < n {
                    f(i0 as usize * n + j, w * (1.0 - a));
                }
                let i1 = i0 + 1;
                if i1 >= 0 && (i1 as usize) < n {
                    f(i1 as usize * n + j, w * a);
                }
            }
        } else {
            let w = 1.0 / cos.abs();
            for i in 0..n {
                let y = i as f64 + 0.5 - half;
                let s = (y - t * sin) / cos;
                let x = t * cos - s * sin;
                let fx = x + half - 0.5;
                let j0 = fx.floor();
                let a = fx - j0;
                let j0 = j0 as isize;
                if j0 >= 0 && (j0 as usize) < n {
                    f(i * n + j0 as usize, w * (1.0 - a));
                }
                let j1 = j0 + 1;
                if j1 >= 0 && (j1 as usize) < n {
                    f(i * n + j1 as usize, w * a);
                }
            }
        }
    }

    /// `out = A·image`, `out` laid out `angle * size + bin`.
    pub fn forward(&self, image: &[f64], out: &mut [f64]) {
        assert_eq!(image.len(), self.size * self.size);
        assert_eq!(out.len(), self.n_rays());
        for a in 0..self.angles.len() {
            for k in 0..self.size {
                let mut acc = 0.0;
                self.walk_ray(a, k, |p, w| acc += w * image[p]);
                out[a * self.size + k] = acc;
            }
        }
    }

    /// `out = Aᵀ·sino`.
    pub fn adjoint(&self, sino: &[f64], out: &mut [f64]) {
        assert_eq!(sino.len(), self.n_rays());
        assert_eq!(out.len(), self.size * self.size);
        out.iter_mut().for_each(|v| *v = 0.0);
        for a in 0..self.angles.len() {
            for k in 0..self.size {
                let v = sino[a * self.size + k];
                if v != 0.0 {
                    self.walk_ray(a, k, |p, w| out[p] += w * v);
                }
            }
        }
    }

    /// Dense system matrix, rows are rays. Only sensible for tiny grids.
    pub fn dense_matrix(&self) -> Vec<Vec<f64>> {
        let mut rows = vec![vec![0.0; self.size * self.size]; self.n_rays()];
        for a in 0..self.angles.len() {
            for k in 0..self.size {
                let row = &mut rows[a * self.size + k];
                self.walk_ray(a, k, |p, w| row[p] += w);
            }
        }
        rows
    }
}

fn square_size(slice: &ArrayView2<'_, f32>) -> Result<usize> {
    let (h, w) = slice.dim();
    if h != w {
        return Err(Error::Geometry(format!(
            "slice must be square, got {h}x{w}"
        )));
    }
    Ok(w)
}

pub fn forward_project(slice: ArrayView2<'_, f32>, angles: &[f64]) -> Result<Sinogram> {
    if angles.is_empty() {
        return Err(Error::InvalidSpec("angle list is empty".into()));
    }
    let n = square_size(&slice)?;
    let beam = ParallelBeam::new(n, angles.to_vec())?;
    let image: Vec<f64> = slice.iter().map(|&v| v as f64).collect();
    let mut out = vec![0.0; beam.n_rays()];
    beam.forward(&image, &mut out);
    let data = Array2::from_shape_vec(
        (angles.len(), n),
        out.into_iter().map(|v| v as f32).collect(),
    )
    .expect("ray count matches shape");
    Sinogram::new(data, angles.to_vec(), SinogramKind::LineIntegral)
}

pub fn backproject(sinogram: &Sinogram) -> Result<Array2<f32>> {
    sinogram.require_line_integral()?;
    let n = sinogram.detector_bins();
    let beam = ParallelBeam::new(n, sinogram.angles.clone())?;
    let sino: Vec<f64> = sinogram.data.iter().map(|&v| v as f64).collect();
    let mut out = vec![0.0; n * n];
    beam.adjoint(&sino, &mut out);
    Ok(Array2::from_shape_vec((n, n), out.into_iter().map(|v| v as f32).collect())
        .expect("pixel count matches shape"))
}

/// Keeps every `factor`-th view starting at index 0.
pub fn subsample_angles(sinogram: &Sinogram, factor: usize) -> Result<Sinogram> {
    let n = sinogram.n_angles();
    if factor == 0 || n % factor != 0 {
        return Err(Error::InvalidSpec(format!(
            "subsampling factor {factor} does not divide {n} angles"
        )));
    }
    let keep: Vec<usize> = (0..n).step_by(factor).collect();
    let data = sinogram.data.select(ndarray::Axis(0), &keep);
    let angles = keep.iter().map(|&k| sinogram.angles[k]).collect();
    Ok(Sinogram {
        data,
        angles,
        kind: sinogram.kind,
    })
}

/// Photon-starvation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoseSpec {
    /// Unattenuated counts per detector pixel, `I0`.
    pub photons_per_pixel: f64,
    /// Target mean absorption over sample-covered pixels (0.025 by default).
    pub absorption_scale: f64,
    pub seed: u64,
    /// Skip sampling and return the rescaled line integrals (`I0 → ∞`).
    pub noiseless: bool,
}

impl DoseSpec {
    pub fn new(photons_per_pixel: f64, seed: u64) -> Self {
        DoseSpec {
            photons_per_pixel,
            absorption_scale: 0.025,
            seed,
            noiseless: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.photons_per_pixel > 0.0 && self.photons_per_pixel.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "photons per pixel must be > 0, got {}",
                self.photons_per_pixel
            )));
        }
        if !(self.absorption_scale > 0.0 && self.absorption_scale <= 1.0) {
            return Err(Error::InvalidSpec(format!(
                "absorption scale must lie in (0, 1], got {}",
                self.absorption_scale
            )));
        }
        Ok(())
    }
}

/// Factor `k` such that the mean of `exp(-k·p)` over sample-covered detector
/// pixels of all `sinograms` equals `1 - absorption_scale`.
///
/// A pixel counts as covered when its line integral exceeds `1e-6` of the
/// largest one. Returns 1 when nothing is covered.
pub fn absorption_rescale(sinograms: &[&Sinogram], absorption_scale: f64) -> Result<f64> {
    if !(absorption_scale > 0.0 && absorption_scale < 1.0) {
        return Err(Error::InvalidSpec(format!(
            "absorption scale must lie in (0, 1) to be matched, got {absorption_scale}"
        )));
    }
    let max = sinograms
        .iter()
        .flat_map(|s| s.data.iter())
        .fold(0.0f64, |m, &v| m.max(v as f64));
    if max <= 0.0 {
        return Ok(1.0);
    }
    let covered: Vec<f64> = sinograms
        .iter()
        .flat_map(|s| s.data.iter())
        .map(|&v| v as f64)
        .filter(|&v| v > 1e-6 * max)
        .collect();
    let target = 1.0 - absorption_scale;
    let mean_transmission = |k: f64| {
        covered.iter().map(|&p| (-k * p).exp()).sum::<f64>() / covered.len() as f64
    };
    let (mut lo, mut hi) = (0.0, 1.0 / max);
    while mean_transmission(hi) > target {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::NumericalFailure(
                "absorption rescale did not bracket".into(),
            ));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_transmission(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Independent generator for one projection row. Depends only on
/// `(seed, slice, angle)`, so rows may be processed in any order.
pub fn row_rng(seed: u64, slice: usize, angle: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((slice as u64) << 32) | angle as u64);
    rng
}

/// Poisson-sampled photon counts `~ Poisson(I0·exp(-rescale·p))`.
pub fn photon_counts(
    sinogram: &Sinogram,
    dose: &DoseSpec,
    rescale: f64,
    slice_index: usize,
) -> Result<Sinogram> {
    sinogram.require_line_integral()?;
    dose.validate()?;
    let mut data = sinogram.data.clone();
    for (a, mut row) in data.outer_iter_mut().enumerate() {
        let mut rng = row_rng(dose.seed, slice_index, a);
        for v in row.iter_mut() {
            let mean = dose.photons_per_pixel * (-rescale * *v as f64).exp();
            *v = if mean > 0.0 {
                let dist = Poisson::new(mean).map_err(|e| {
                    Error::NumericalFailure(format!("poisson mean {mean}: {e}"))
                })?;
                dist.sample(&mut rng) as f32
            } else {
                0.0
            };
        }
    }
    Ok(Sinogram {
        data,
        angles: sinogram.angles.clone(),
        kind: SinogramKind::Counts,
    })
}

/// Noisy line integrals `-ln(max(counts, 1) / I0)` for one slice, using a
/// rescale factor shared across the volume.
pub fn apply_photon_noise_scaled(
    sinogram: &Sinogram,
    dose: &DoseSpec,
    rescale: f64,
    slice_index: usize,
) -> Result<Sinogram> {
    sinogram.require_line_integral()?;
    dose.validate()?;
    if dose.noiseless {
        let data = sinogram.data.mapv(|p| (rescale * p as f64) as f32);
        return Ok(Sinogram {
            data,
            angles: sinogram.angles.clone(),
            kind: SinogramKind::LineIntegral,
        });
    }
    let counts = photon_counts(sinogram, dose, rescale, slice_index)?;
    let i0 = dose.photons_per_pixel;
    let data = counts
        .data
        .mapv(|c| (-((c.max(1.0) as f64) / i0).ln()) as f32);
    Ok(Sinogram {
        data,
        angles: counts.angles,
        kind: SinogramKind::LineIntegral,
    })
}

/// Single-slice form: the rescale factor is computed from `sinogram` alone.
pub fn apply_photon_noise(sinogram: &Sinogram, dose: &DoseSpec) -> Result<Sinogram> {
    sinogram.require_line_integral()?;
    dose.validate()?;
    let k = absorption_rescale(&[sinogram], dose.absorption_scale)?;
    apply_photon_noise_scaled(sinogram, dose, k, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::analytic_disk;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn zero_slice_projects_to_zero() {
        let s = forward_project(Array2::zeros((16, 16)).view(), &uniform_angles(8)).unwrap();
        assert!(s.data.iter().all(|&v| v == 0.0));
        assert_eq!(s.detector_bins(), 16);
        assert_eq!(s.kind, SinogramKind::LineIntegral);
    }

    #[test]
    fn geometry_errors() {
        let r = forward_project(Array2::zeros((16, 12)).view(), &uniform_angles(4));
        assert!(matches!(r, Err(Error::Geometry(_))));
        let r = forward_project(Array2::zeros((16, 16)).view(), &[]);
        assert!(matches!(r, Err(Error::InvalidSpec(_))));
        assert!(validate_angles(&[0.0, 0.0]).is_err());
        assert!(validate_angles(&[0.0, PI]).is_err());
    }

    #[test]
    fn full_scale_acquisition_shape() {
        let angles = uniform_angles(1024);
        let beam = ParallelBeam::new(1024, angles).unwrap();
        assert_eq!(beam.n_rays(), 1024 * 1024);
    }

    #[test]
    fn disk_chord_lengths() {
        let (r, mu) = (50.0, 0.01);
        let disk = analytic_disk(r, mu as f32, 256).unwrap();
        let s = forward_project(disk.slice(0), &uniform_angles(36)).unwrap();
        for a in 0..36 {
            for k in 0..256 {
                let t = k as f64 + 0.5 - 128.0;
                if t.abs() <= 0.9 * r {
                    let exact = 2.0 * mu * (r * r - t * t).sqrt();
                    let got = s.data[[a, k]] as f64;
                    assert!((got - exact).abs() <= 0.01 * exact, "a={a} t={t}: {got} vs {exact}");
                }
            }
        }
    }

    #[test]
    fn impulse_backprojects_to_a_stripe() {
        let n = 16;
        // Angle 0: the ray for bin k is the vertical line x = t_k, i.e. column k.
        let mut data = Array2::zeros((1, n));
        data[[0, 5]] = 1.0;
        let s = Sinogram::new(data, vec![0.0], SinogramKind::LineIntegral).unwrap();
        let img = backproject(&s).unwrap();
        for i in 0..n {
            for j in 0..n {
                let expect = if j == 5 { 1.0 } else { 0.0 };
                assert!((img[[i, j]] - expect).abs() < 1e-6);
            }
        }
        // Angle π/2: bin k maps to row k.
        let mut data = Array2::zeros((1, n));
        data[[0, 3]] = 2.0;
        let s = Sinogram::new(data, vec![PI / 2.0], SinogramKind::LineIntegral).unwrap();
        let img = backproject(&s).unwrap();
        for i in 0..n {
            for j in 0..n {
                let expect = if i == 3 { 2.0 } else { 0.0 };
                assert!((img[[i, j]] - expect).abs() < 1e-5, "({i},{j}) {}", img[[i, j]]);
            }
        }
    }

    #[test]
    fn backproject_rejects_counts() {
        let s = Sinogram::new(Array2::zeros((1, 4)), vec![0.0], SinogramKind::Counts).unwrap();
        assert!(matches!(backproject(&s), Err(Error::WrongKind { .. })));
        let z = Sinogram::new(Array2::zeros((3, 8)), uniform_angles(3), SinogramKind::LineIntegral)
            .unwrap();
        assert!(backproject(&z).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adjoint_inner_product() {
        let mut rng = rand::rng();
        let beam = ParallelBeam::new(64, uniform_angles(45)).unwrap();
        let x: Vec<f64> = (0..64 * 64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..beam.n_rays()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut ax = vec![0.0; beam.n_rays()];
        let mut aty = vec![0.0; 64 * 64];
        beam.forward(&x, &mut ax);
        beam.adjoint(&y, &mut aty);
        let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
        let norm = ax.iter().map(|v| v * v).sum::<f64>().sqrt()
            * y.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((lhs - rhs).abs() / norm < 1e-12);
    }

    #[test]
    fn subsampling() {
        let angles = uniform_angles(1024);
        let s = Sinogram::new(Array2::zeros((1024, 4)), angles.clone(), SinogramKind::LineIntegral)
            .unwrap();
        let sub = subsample_angles(&s, 16).unwrap();
        assert_eq!(sub.n_angles(), 64);
        for (k, a) in sub.angles.iter().enumerate() {
            assert_eq!(*a, angles[k * 16]);
        }
        assert_eq!(subsample_angles(&s, 1).unwrap(), s);
        assert!(matches!(subsample_angles(&s, 3), Err(Error::InvalidSpec(_))));
        assert!(subsample_angles(&s, 0).is_err());
    }

    #[test]
    fn noise_errors_and_noiseless_limit() {
        let disk = analytic_disk(10.0, 0.1, 32).unwrap();
        let s = forward_project(disk.slice(0), &uniform_angles(16)).unwrap();
        let mut dose = DoseSpec::new(0.0, 1);
        assert!(matches!(apply_photon_noise(&s, &dose), Err(Error::InvalidSpec(_))));
        dose.photons_per_pixel = 1e4;
        dose.noiseless = true;
        let k = absorption_rescale(&[&s], 0.025).unwrap();
        let out = apply_photon_noise(&s, &dose).unwrap();
        let expect = s.data.mapv(|p| (k * p as f64) as f32);
        assert_eq!(out.data, expect);

        // The rescaled data hits the requested mean transmission.
        let max = s.data.iter().fold(0.0f32, |m, &v| m.max(v));
        let covered: Vec<f64> = s
            .data
            .iter()
            .filter(|&&p| p > 1e-6 * max)
            .map(|&p| (-(k * p as f64)).exp())
            .collect();
        let mean = covered.iter().sum::<f64>() / covered.len() as f64;
        assert!((mean - 0.975).abs() < 1e-9);
    }

    #[test]
    fn noise_is_seeded_and_shape_preserving() {
        let disk = analytic_disk(10.0, 0.1, 32).unwrap();
        let s = forward_project(disk.slice(0), &uniform_angles(16)).unwrap();
        let dose = DoseSpec::new(100.0, 7);
        let a = apply_photon_noise(&s, &dose).unwrap();
        let b = apply_photon_noise(&s, &dose).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.data.dim(), s.data.dim());
        assert_eq!(a.angles, s.angles);
        assert_eq!(a.kind, SinogramKind::LineIntegral);
        let c = apply_photon_noise(&s, &DoseSpec::new(100.0, 8)).unwrap();
        assert_ne!(a.data, c.data);
        assert!(a.data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn higher_dose_is_less_noisy() {
        let disk = analytic_disk(12.0, 0.1, 32).unwrap();
        let s = forward_project(disk.slice(0), &uniform_angles(32)).unwrap();
        let k = absorption_rescale(&[&s], 0.025).unwrap();
        let clean = s.data.mapv(|p| k * p as f64);
        let err = |i0: f64| {
            let noisy = apply_photon_noise(&s, &DoseSpec::new(i0, 3)).unwrap();
            noisy
                .data
                .iter()
                .zip(clean.iter())
                .map(|(a, b)| (*a as f64 - b).powi(2))
                .sum::<f64>()
        };
        assert!(err(10_000.0) < err(100.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn projection_is_linear(seed in 0u64..1000, scale in -3.0f32..3.0) {
            use rand::SeedableRng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = Array2::from_shape_fn((12, 12), |_| rng.random_range(0.0f32..1.0));
            let angles = uniform_angles(7);
            let a = forward_project(img.view(), &angles).unwrap();
            let b = forward_project(img.mapv(|v| v * scale).view(), &angles).unwrap();
            for (x, y) in a.data.iter().zip(b.data.iter()) {
                prop_assert!((x * scale - y).abs() <= 1e-4 * (1.0 + y.abs()));
            }
        }

        #[test]
        fn subsampling_composes(f1 in prop::sample::select(vec![1usize, 2, 4]),
                                f2 in prop::sample::select(vec![1usize, 2, 4, 8])) {
            let n = 64;
            let data = Array2::from_shape_fn((n, 3), |(a, b)| (a * 3 + b) as f32);
            let s = Sinogram::new(data, uniform_angles(n), SinogramKind::LineIntegral).unwrap();
            let twice = subsample_angles(&subsample_angles(&s, f1).unwrap(), f2).unwrap();
            let once = subsample_angles(&s, f1 * f2).unwrap();
            prop_assert_eq!(twice, once);
        }
    }
}
