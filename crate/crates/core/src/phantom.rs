//! Synthetic ground-truth objects: foam phantoms and analytic disks.
//!
//! A foam phantom is a solid cylinder (axis along depth, inscribed in each
//! slice) with spherical voids carved out of it. Voids may overlap; the carved
//! region is their union. Boundaries are anti-aliased by 2x2x2 supersampling
//! unless `antialias` is off, in which case each voxel is sampled once at its
//! center.

use ndarray::{Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Provenance, Volume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoamSpec {
    pub seed: u64,
    pub n_features: usize,
    pub radius_range: (f64, f64),
    pub background_attenuation: f32,
    pub feature_attenuation: f32,
    /// `(depth, height, width)`.
    pub grid: (usize, usize, usize),
    pub antialias: bool,
}

impl FoamSpec {
    /// 256³ with 2000 voids, the volume-ratio scaling of the 1024³/100000
    /// reference configuration.
    pub fn desk_scale(seed: u64) -> Self {
        Self::scaled(seed, 256)
    }

    pub fn full_scale(seed: u64) -> Self {
        FoamSpec {
            n_features: 100_000,
            radius_range: (2.0, 24.0),
            grid: (1024, 1024, 1024),
            ..Self::desk_scale(seed)
        }
    }

    /// Cubic grid of edge `size`, with feature count and radii scaled from the
    /// 256³ desk configuration.
    pub fn scaled(seed: u64, size: usize) -> Self {
        let ratio = size as f64 / 256.0;
        let n = (2000.0 * ratio.powi(3)).round() as usize;
        let rmax = (12.0 * ratio).clamp(1.0, size as f64 / 4.0);
        let rmin = (2.0 * ratio).clamp(0.75, rmax);
        FoamSpec {
            seed,
            n_features: n,
            radius_range: (rmin, rmax),
            background_attenuation: 0.01,
            feature_attenuation: 0.002,
            grid: (size, size, size),
            antialias: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (d, h, w) = self.grid;
        if d == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidSpec(format!(
                "grid dimensions must be positive, got {:?}",
                self.grid
            )));
        }
        if h != w {
            return Err(Error::InvalidSpec(format!(
                "slices must be square, got {h}x{w}"
            )));
        }
        let (rmin, rmax) = self.radius_range;
        let limit = h.min(w) as f64 / 4.0;
        if !(rmin > 0.0 && rmin <= rmax && rmax <= limit) {
            return Err(Error::InvalidSpec(format!(
                "radius range ({rmin}, {rmax}) must satisfy 0 < min <= max <= {limit}"
            )));
        }
        for (name, v) in [
            ("background_attenuation", self.background_attenuation),
            ("feature_attenuation", self.feature_attenuation),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidSpec(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    fn cylinder_radius(&self) -> f64 {
        self.grid.2 as f64 / 2.0
    }
}

/// One spherical void in continuous voxel coordinates (voxel `k` spans
/// `[k, k+1)` along each axis).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sphere {
    pub z: f64,
    pub y: f64,
    pub x: f64,
    pub r: f64,
}

impl Sphere {
    pub fn contains(&self, z: f64, y: f64, x: f64) -> bool {
        let (dz, dy, dx) = (z - self.z, y - self.y, x - self.x);
        dz * dz + dy * dy + dx * dx <= self.r * self.r
    }
}

/// The void list drawn for `spec`, in draw order. The first `k` spheres do not
/// depend on `n_features`, so a larger count only adds voids.
pub fn draw_spheres(spec: &FoamSpec) -> Vec<Sphere> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (d, h, w) = spec.grid;
    let big_r = spec.cylinder_radius();
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    let (ln_min, ln_max) = (spec.radius_range.0.ln(), spec.radius_range.1.ln());
    (0..spec.n_features)
        .map(|_| {
            let r = if ln_max > ln_min {
                rng.random_range(ln_min..ln_max).exp()
            } else {
                spec.radius_range.0
            };
            let (y, x) = loop {
                let u: f64 = rng.random_range(-1.0..1.0);
                let v: f64 = rng.random_range(-1.0..1.0);
                if u * u + v * v <= 1.0 {
                    break (cy + v * big_r, cx + u * big_r);
                }
            };
            let z = rng.random_range(0.0..d as f64);
            Sphere { z, y, x, r }
        })
        .collect()
}

pub fn generate_foam_phantom(spec: &FoamSpec) -> Result<Volume> {
    spec.validate()?;
    let spheres = draw_spheres(spec);
    let (d, h, w) = spec.grid;
    let offsets: &[f64] = if spec.antialias { &[0.25, 0.75] } else { &[0.5] };
    let ns = offsets.len();

    // Spheres touching each slice, in draw order.
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); d];
    for (k, s) in spheres.iter().enumerate() {
        let lo = (s.z - s.r).floor().max(0.0) as usize;
        let hi = ((s.z + s.r).ceil() as usize).min(d);
        for bucket in buckets.iter_mut().take(hi).skip(lo) {
            bucket.push(k);
        }
    }

    let big_r = spec.cylinder_radius();
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    let bg = spec.background_attenuation as f64;
    let fg = spec.feature_attenuation as f64;
    let per_voxel = (ns * ns * ns) as f64;

    let mut data = Array3::<f32>::zeros((d, h, w));
    data.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(z, mut plane)| {
            // Bit b of mask[(y, x)] marks subsample b as void.
            let mut mask = vec![0u8; h * w];
            for &k in &buckets[z] {
                let s = &spheres[k];
                for (iz, oz) in offsets.iter().enumerate() {
                    let dz = z as f64 + oz - s.z;
                    let rho2 = s.r * s.r - dz * dz;
                    if rho2 < 0.0 {
                        continue;
                    }
                    let rho = rho2.sqrt();
                    let y_lo = (s.y - rho - 1.0).floor().max(0.0) as usize;
                    let y_hi = ((s.y + rho + 1.0).ceil() as usize).min(h);
                    for y in y_lo..y_hi {
                        for (iy, oy) in offsets.iter().enumerate() {
                            let dy = y as f64 + oy - s.y;
                            let half2 = rho2 - dy * dy;
                            if half2 < 0.0 {
                                continue;
                            }
                            let half = half2.sqrt();
                            let (xa, xb) = (s.x - half, s.x + half);
                            let x_lo = (xa - 1.0).floor().max(0.0) as usize;
                            let x_hi = ((xb + 1.0).ceil() as usize).min(w);
                            for x in x_lo..x_hi {
                                for (ix, ox) in offsets.iter().enumerate() {
                                    let xs = x as f64 + ox;
                                    if xs >= xa && xs <= xb {
                                        let bit = (iz * ns + iy) * ns + ix;
                                        mask[y * w + x] |= 1 << bit;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            for y in 0..h {
                for x in 0..w {
                    let m = mask[y * w + x];
                    let mut acc = 0.0;
                    for (iz, _) in offsets.iter().enumerate() {
                        for (iy, oy) in offsets.iter().enumerate() {
                            for (ix, ox) in offsets.iter().enumerate() {
                                let (dy, dx) = (y as f64 + oy - cy, x as f64 + ox - cx);
                                if dy * dy + dx * dx > big_r * big_r {
                                    continue;
                                }
                                let bit = (iz * ns + iy) * ns + ix;
                                acc += if m & (1 << bit) != 0 { fg } else { bg };
                            }
                        }
                    }
                    plane[[y, x]] = (acc / per_voxel) as f32;
                }
            }
        });
    Volume::new(data, Provenance::GroundTruth)
}

/// Single-slice volume holding a centered disk of constant attenuation.
///
/// Pixel values are the disk's fractional coverage (16x16 supersampling)
/// times `attenuation`. `radius == 0` gives the zero volume.
pub fn analytic_disk(radius: f64, attenuation: f32, size: usize) -> Result<Volume> {
    if size == 0 {
        return Err(Error::InvalidSpec("disk image size must be positive".into()));
    }
    if !(radius >= 0.0 && radius < size as f64 / 2.0) {
        return Err(Error::InvalidSpec(format!(
            "disk radius {radius} must lie in (0, {})",
            size as f64 / 2.0
        )));
    }
    let mut data = Array3::<f32>::zeros((1, size, size));
    if radius == 0.0 {
        return Volume::new(data, Provenance::GroundTruth);
    }
    const SS: usize = 16;
    let c = size as f64 / 2.0;
    let r2 = radius * radius;
    for y in 0..size {
        for x in 0..size {
            // Skip pixels whose corners are all inside or all outside.
            let (y0, y1) = (y as f64 - c, y as f64 + 1.0 - c);
            let (x0, x1) = (x as f64 - c, x as f64 + 1.0 - c);
            let near_y = if y0 > 0.0 { y0 } else if y1 < 0.0 { -y1 } else { 0.0 };
            let near_x = if x0 > 0.0 { x0 } else if x1 < 0.0 { -x1 } else { 0.0 };
            let far_y = y0.abs().max(y1.abs());
            let far_x = x0.abs().max(x1.abs());
            let coverage = if far_y * far_y + far_x * far_x <= r2 {
                1.0
            } else if near_y * near_y + near_x * near_x > r2 {
                0.0
            } else {
                let mut hits = 0usize;
                for sy in 0..SS {
                    let py = y0 + (sy as f64 + 0.5) / SS as f64;
                    for sx in 0..SS {
                        let px = x0 + (sx as f64 + 0.5) / SS as f64;
                        if py * py + px * px <= r2 {
                            hits += 1;
                        }
                    }
                }
                hits as f64 / (SS * SS) as f64
            };
            data[[0, y, x]] = (coverage * attenuation as f64) as f32;
        }
    }
    Volume::new(data, Provenance::GroundTruth)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64, n: usize) -> FoamSpec {
        FoamSpec {
            seed,
            n_features: n,
            radius_range: (1.5, 6.0),
            background_attenuation: 0.01,
            feature_attenuation: 0.002,
            grid: (24, 32, 32),
            antialias: true,
        }
    }

    #[test]
    fn full_scale_configuration() {
        let spec = FoamSpec::full_scale(1);
        assert_eq!(spec.grid, (1024, 1024, 1024));
        assert_eq!(spec.n_features, 100_000);
        spec.validate().unwrap();
    }

    #[test]
    fn desk_scale_configuration() {
        let spec = FoamSpec::desk_scale(1);
        assert_eq!(spec.grid, (256, 256, 256));
        assert_eq!(spec.n_features, 2000);
        spec.validate().unwrap();
    }

    #[test]
    fn no_features_gives_plain_cylinder() {
        let v = generate_foam_phantom(&small(3, 0)).unwrap();
        let center = v.data[[5, 16, 16]];
        assert_eq!(center, 0.01);
        assert_eq!(v.data[[5, 0, 0]], 0.0);
        // Every slice identical.
        for z in 1..24 {
            assert_eq!(v.slice(z), v.slice(0));
        }
    }

    #[test]
    fn seeded_determinism() {
        let spec = small(9, 40);
        let a = generate_foam_phantom(&spec).unwrap();
        let b = generate_foam_phantom(&spec).unwrap();
        assert_eq!(a.data, b.data);
        let c = generate_foam_phantom(&small(10, 40)).unwrap();
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = small(1, 1);
        s.grid = (0, 32, 32);
        assert!(matches!(generate_foam_phantom(&s), Err(Error::InvalidSpec(_))));
        let mut s = small(1, 1);
        s.radius_range = (0.0, 2.0);
        assert!(matches!(s.validate(), Err(Error::InvalidSpec(_))));
        s.radius_range = (3.0, 2.0);
        assert!(s.validate().is_err());
        s.radius_range = (1.0, 8.5);
        assert!(s.validate().is_err());
    }

    #[test]
    fn values_stay_within_material_range() {
        let v = generate_foam_phantom(&small(5, 60)).unwrap();
        assert!(v.data.iter().all(|&x| (0.0..=0.01).contains(&x)));
        let binary = generate_foam_phantom(&FoamSpec {
            antialias: false,
            ..small(5, 60)
        })
        .unwrap();
        assert!(binary
            .data
            .iter()
            .all(|&x| x == 0.0 || x == 0.01 || x == 0.002));
    }

    #[test]
    fn more_features_never_add_mass() {
        let mut last = f64::INFINITY;
        for n in [0, 5, 20, 80] {
            let m = generate_foam_phantom(&small(11, n)).unwrap().total_mass();
            assert!(m <= last + 1e-9, "n={n}: {m} > {last}");
            last = m;
        }
    }

    #[test]
    fn disk_area_matches_pi_r_squared() {
        let v = analytic_disk(50.0, 0.01, 256).unwrap();
        let area: f64 = v.data.iter().map(|&x| x as f64 / 0.01).sum();
        let exact = std::f64::consts::PI * 2500.0;
        assert!((area - exact).abs() <= 1.0, "{area} vs {exact}");
    }

    #[test]
    fn disk_limits() {
        let zero = analytic_disk(0.0, 1.0, 16).unwrap();
        assert!(zero.data.iter().all(|&x| x == 0.0));
        assert!(analytic_disk(8.0, 1.0, 16).is_err());
        assert!(analytic_disk(-1.0, 1.0, 16).is_err());

        let v = analytic_disk(7.0, 1.0, 16).unwrap();
        // Reaches the second row/column but leaves the border empty.
        assert!(v.data[[0, 1, 8]] > 0.0);
        assert!(v.data[[0, 8, 14]] > 0.0);
        for k in 0..16 {
            for (y, x) in [(0, k), (15, k), (k, 0), (k, 15)] {
                assert_eq!(v.data[[0, y, x]], 0.0);
            }
        }
    }
}
