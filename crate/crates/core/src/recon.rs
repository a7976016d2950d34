//! Filtered back projection and SIRT.

use std::f64::consts::PI;
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projector::{ParallelBeam, Sinogram, SinogramKind};
use crate::volume::{Provenance, SliceImage, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Filter {
    #[default]
    Ramp,
    SheppLogan,
    Hann,
}

impl FromStr for Filter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ramp" => Ok(Filter::Ramp),
            "shepp_logan" => Ok(Filter::SheppLogan),
            "hann" => Ok(Filter::Hann),
            other => Err(Error::InvalidSpec(format!(
                "unknown filter `{other}` (ramp, shepp_logan, hann)"
            ))),
        }
    }
}

impl Filter {
    pub fn as_str(self) -> &'static str {
        match self {
            Filter::Ramp => "ramp",
            Filter::SheppLogan => "shepp_logan",
            Filter::Hann => "hann",
        }
    }
}

fn require_line_integral(s: &Sinogram) -> Result<()> {
    if s.kind != SinogramKind::LineIntegral {
        return Err(Error::WrongKind {
            expected: "line_integral",
            found: s.kind.as_str(),
        });
    }
    if s.n_angles() == 0 {
        return Err(Error::InvalidSpec("sinogram has no angles".into()));
    }
    Ok(())
}

/// Frequency response of the band-limited ramp, built from its spatial
/// kernel (`1/4` at 0, `-1/(π n)²` at odd `n`) so the DC term is right.
fn frequency_response(len: usize, filter: Filter) -> Vec<f64> {
    let mut kernel = vec![Complex::new(0.0, 0.0); len];
    kernel[0].re = 0.25;
    for n in (1..len / 2).step_by(2) {
        let v = -1.0 / (PI * n as f64).powi(2);
        kernel[n].re = v;
        kernel[len - n].re = v;
    }
    FftPlanner::new().plan_fft_forward(len).process(&mut kernel);
    (0..len)
        .map(|k| {
            let f = if k <= len / 2 { k as f64 } else { k as f64 - len as f64 } / len as f64;
            let window = match filter {
                Filter::Ramp => 1.0,
                Filter::SheppLogan if f == 0.0 => 1.0,
                Filter::SheppLogan => (PI * f).sin() / (PI * f),
                Filter::Hann => 0.5 * (1.0 + (2.0 * PI * f).cos()),
            };
            kernel[k].re * window
        })
        .collect()
}

/// Filtered back projection. The result carries `Provenance::LowDose` and
/// slice index 0; callers relabel it.
///
/// Each view is zero-padded to the next power of two `>= 2W`, filtered, and
/// smeared back with linear interpolation; the sum is scaled by
/// `π / n_angles`. Pixels outside the inscribed circle are zeroed.
pub fn fbp(sinogram: &Sinogram, filter: Filter) -> Result<SliceImage> {
    require_line_integral(sinogram)?;
    let n = sinogram.detector_bins();
    let len = (2 * n).next_power_of_two();
    let response = frequency_response(len, filter);
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);

    let mut filtered = vec![0.0f64; sinogram.n_angles() * n];
    let mut buf = vec![Complex::new(0.0, 0.0); len];
    for (a, row) in sinogram.data.outer_iter().enumerate() {
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (b, &v) in row.iter().enumerate() {
            buf[b].re = v as f64;
        }
        fwd.process(&mut buf);
        for (c, h) in buf.iter_mut().zip(&response) {
            *c *= *h;
        }
        inv.process(&mut buf);
        for b in 0..n {
            filtered[a * n + b] = buf[b].re / len as f64;
        }
    }

    let half = n as f64 / 2.0;
    let trig: Vec<(f64, f64)> = sinogram.angles.iter().map(|a| a.sin_cos()).collect();
    let scale = PI / sinogram.n_angles() as f64;
    let mut out = Array2::<f32>::zeros((n, n));
    for i in 0..n {
        let y = i as f64 + 0.5 - half;
        for j in 0..n {
            let x = j as f64 + 0.5 - half;
            if x * x + y * y > half * half {
                continue;
            }
            let mut acc = 0.0;
            for (a, (sin, cos)) in trig.iter().enumerate() {
                let u = x * cos + y * sin + half - 0.5;
                let k0 = u.floor();
                let w = u - k0;
                let k0 = k0 as isize;
                let row = &filtered[a * n..(a + 1) * n];
                if k0 >= 0 && (k0 as usize) < n {
                    acc += (1.0 - w) * row[k0 as usize];
                }
                if k0 + 1 >= 0 && ((k0 + 1) as usize) < n {
                    acc += w * row[(k0 + 1) as usize];
                }
            }
            out[[i, j]] = (acc * scale) as f32;
        }
    }
    Ok(SliceImage::new(out, Provenance::LowDose, 0))
}

/// FBP of every slice, in parallel; output order follows input order.
pub fn fbp_volume(
    sinograms: &[Sinogram],
    filter: Filter,
    provenance: Provenance,
) -> Result<Volume> {
    let slices: Vec<SliceImage> = sinograms
        .par_iter()
        .enumerate()
        .map(|(k, s)| {
            fbp(s, filter).map(|mut img| {
                img.slice_index = k;
                img.provenance = provenance;
                img
            })
        })
        .collect::<Result<_>>()?;
    Volume::from_slices(&slices, provenance)
}

/// Whether pixel `p` of an `n x n` grid has its center inside the inscribed
/// circle of radius `half`.
pub fn in_circle(p: usize, n: usize, half: f64) -> bool {
    let (i, j) = (p / n, p % n);
    let (y, x) = (i as f64 + 0.5 - half, j as f64 + 0.5 - half);
    x * x + y * y <= half * half
}

#[derive(Debug, Clone)]
pub struct SirtOutcome {
    pub image: SliceImage,
    /// Row-weighted residual `sqrt(Σ R_i (b - Ax)_i²)` before the first
    /// iteration and after each one. This is the quantity SIRT descends.
    pub residuals: Vec<f64>,
}

/// Simultaneous iterative reconstruction from a zero start:
/// `x ← x + C·Aᵀ·R·(b − A·x)` with `R = 1/row sums`, `C = 1/column sums`.
///
/// The system is restricted to pixels inside the inscribed circle, the same
/// reconstruction region FBP uses.
pub fn sirt(sinogram: &Sinogram, iterations: usize, nonneg: bool) -> Result<SliceImage> {
    sirt_with_history(sinogram, iterations, nonneg).map(|o| o.image)
}

pub fn sirt_with_history(
    sinogram: &Sinogram,
    iterations: usize,
    nonneg: bool,
) -> Result<SirtOutcome> {
    require_line_integral(sinogram)?;
    if iterations == 0 {
        return Err(Error::InvalidSpec("SIRT needs at least one iteration".into()));
    }
    let n = sinogram.detector_bins();
    let beam = ParallelBeam::new(n, sinogram.angles.clone())?;
    let b: Vec<f64> = sinogram.data.iter().map(|&v| v as f64).collect();

    // Unknowns are the pixels inside the reconstruction circle; the rest
    // stay zero.
    let half = n as f64 / 2.0;
    let support: Vec<f64> = (0..n * n)
        .map(|p| if in_circle(p, n, half) { 1.0 } else { 0.0 })
        .collect();
    let inv = |v: f64| if v > 1e-12 { 1.0 / v } else { 0.0 };
    let mut row_sum = vec![0.0; beam.n_rays()];
    beam.forward(&support, &mut row_sum);
    let r: Vec<f64> = row_sum.into_iter().map(inv).collect();
    let mut col_sum = vec![0.0; n * n];
    beam.adjoint(&vec![1.0; beam.n_rays()], &mut col_sum);
    let c: Vec<f64> = col_sum
        .into_iter()
        .zip(&support)
        .map(|(s, m)| if *m > 0.0 { inv(s) } else { 0.0 })
        .collect();

    let mut x = vec![0.0; n * n];
    let mut ax = vec![0.0; beam.n_rays()];
    let mut resid = vec![0.0; beam.n_rays()];
    let mut update = vec![0.0; n * n];
    let weighted_norm = |res: &[f64]| {
        res.iter().zip(&r).map(|(v, w)| w * v * v).sum::<f64>().sqrt()
    };

    let mut residuals = Vec::with_capacity(iterations + 1);
    let initial = weighted_norm(&b);
    residuals.push(initial);
    for it in 0..iterations {
        beam.forward(&x, &mut ax);
        for ((res, bi), (axi, ri)) in resid.iter_mut().zip(&b).zip(ax.iter().zip(&r)) {
            *res = ri * (bi - axi);
        }
        beam.adjoint(&resid, &mut update);
        for ((xj, uj), cj) in x.iter_mut().zip(&update).zip(&c) {
            *xj += cj * uj;
            if nonneg && *xj < 0.0 {
                *xj = 0.0;
            }
        }
        beam.forward(&x, &mut ax);
        for (res, (bi, axi)) in resid.iter_mut().zip(b.iter().zip(&ax)) {
            *res = bi - axi;
        }
        let norm = weighted_norm(&resid);
        if !norm.is_finite() || norm > 10.0 * initial.max(f64::MIN_POSITIVE) {
            return Err(Error::NumericalFailure(format!(
                "SIRT diverged at iteration {}: residual {norm:e} vs initial {initial:e}",
                it + 1
            )));
        }
        residuals.push(norm);
    }
    let data = Array2::from_shape_vec((n, n), x.into_iter().map(|v| v as f32).collect())
        .expect("pixel count matches shape");
    Ok(SirtOutcome {
        image: SliceImage::new(data, Provenance::LowDose, 0),
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::analytic_disk;
    use crate::projector::{forward_project, uniform_angles};

    fn disk_rmse(filter: Filter) -> f64 {
        let (r, mu) = (50.0, 0.01);
        let disk = analytic_disk(r, mu as f32, 256).unwrap();
        let s = forward_project(disk.slice(0), &uniform_angles(360)).unwrap();
        let img = fbp(&s, filter).unwrap();
        let mut acc = 0.0;
        let mut count = 0;
        for i in 0..256 {
            for j in 0..256 {
                let (y, x) = (i as f64 + 0.5 - 128.0, j as f64 + 0.5 - 128.0);
                if (x * x + y * y).sqrt() <= r - 2.0 {
                    acc += (img.data[[i, j]] as f64 - mu).powi(2);
                    count += 1;
                }
            }
        }
        (acc / count as f64).sqrt() / mu
    }

    #[test]
    fn fbp_reconstructs_disk_level() {
        let rel = disk_rmse(Filter::Ramp);
        assert!(rel <= 0.05, "relative interior RMSE {rel}");
        // Apodized filters smooth edges but keep the plateau.
        assert!(disk_rmse(Filter::Hann) <= 0.05);
        assert!(disk_rmse(Filter::SheppLogan) <= 0.05);
    }

    #[test]
    fn fbp_zero_and_wrong_kind() {
        let z = Sinogram::new(Array2::zeros((8, 16)), uniform_angles(8), SinogramKind::LineIntegral)
            .unwrap();
        let img = fbp(&z, Filter::Ramp).unwrap();
        assert_eq!(img.dims(), (16, 16));
        assert!(img.data.iter().all(|&v| v == 0.0));
        let c = Sinogram::new(Array2::zeros((8, 16)), uniform_angles(8), SinogramKind::Counts)
            .unwrap();
        assert!(matches!(fbp(&c, Filter::Ramp), Err(Error::WrongKind { .. })));
        assert!(matches!(sirt(&c, 3, false), Err(Error::WrongKind { .. })));
    }

    #[test]
    fn fbp_is_linear() {
        let disk = analytic_disk(6.0, 1.0, 32).unwrap();
        let s = forward_project(disk.slice(0), &uniform_angles(20)).unwrap();
        let mut s2 = s.clone();
        s2.data.mapv_inplace(|v| 3.0 * v);
        let a = fbp(&s, Filter::Ramp).unwrap();
        let b = fbp(&s2, Filter::Ramp).unwrap();
        for (x, y) in a.data.iter().zip(b.data.iter()) {
            assert!((3.0 * x - y).abs() <= 1e-5 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn filter_names_round_trip() {
        for f in [Filter::Ramp, Filter::SheppLogan, Filter::Hann] {
            assert_eq!(f.as_str().parse::<Filter>().unwrap(), f);
        }
        assert!("cosine".parse::<Filter>().is_err());
    }

    #[test]
    fn sirt_zero_fixed_point() {
        let z = Sinogram::new(Array2::zeros((6, 8)), uniform_angles(6), SinogramKind::LineIntegral)
            .unwrap();
        let out = sirt(&z, 5, false).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.0));
        assert!(matches!(sirt(&z, 0, false), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn sirt_residual_decreases() {
        let disk = analytic_disk(6.0, 1.0, 16).unwrap();
        let s = forward_project(disk.slice(0), &uniform_angles(12)).unwrap();
        let out = sirt_with_history(&s, 50, false).unwrap();
        for w in out.residuals.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-6), "{} -> {}", w[0], w[1]);
        }
        assert!(out.residuals[50] < 0.1 * out.residuals[0]);
        let nn = sirt(&s, 20, true).unwrap();
        assert!(nn.data.iter().all(|&v| v >= 0.0));
    }
}
