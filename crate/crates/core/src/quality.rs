//! SSIM/PSNR, per-slice reports and line profiles.

use std::fmt::Write as _;
use std::ops::Range;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::volume::{Provenance, SliceImage, Volume};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn gaussian_taps() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let taps: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let x = i as f64 - r;
            (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Separable "valid" filtering with the SSIM window.
fn filter_valid(img: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let (h, w) = img.dim();
    let k = taps.len();
    let (ho, wo) = (h + 1 - k, w + 1 - k);
    let mut rows = Array2::<f64>::zeros((h, wo));
    for y in 0..h {
        for x in 0..wo {
            rows[[y, x]] = (0..k).map(|t| taps[t] * img[[y, x + t]]).sum();
        }
    }
    let mut out = Array2::<f64>::zeros((ho, wo));
    for y in 0..ho {
        for x in 0..wo {
            out[[y, x]] = (0..k).map(|t| taps[t] * rows[[y + t, x]]).sum();
        }
    }
    out
}

fn same_dims(a: ArrayView2<'_, f32>, b: ArrayView2<'_, f32>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "image dims differ: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Mean local SSIM over all fully contained 11x11 Gaussian windows.
pub fn ssim_view(a: ArrayView2<'_, f32>, b: ArrayView2<'_, f32>, dynamic_range: f64) -> Result<f64> {
    same_dims(a, b)?;
    if !(dynamic_range > 0.0 && dynamic_range.is_finite()) {
        return Err(Error::InvalidSpec(format!(
            "dynamic range must be positive, got {dynamic_range}"
        )));
    }
    let (h, w) = a.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let taps = gaussian_taps();
    let x = a.mapv(|v| v as f64);
    let y = b.mapv(|v| v as f64);
    let mx = filter_valid(&x, &taps);
    let my = filter_valid(&y, &taps);
    let sxx = filter_valid(&(&x * &x), &taps);
    let syy = filter_valid(&(&y * &y), &taps);
    let sxy = filter_valid(&(&x * &y), &taps);
    let c1 = (SSIM_K1 * dynamic_range).powi(2);
    let c2 = (SSIM_K2 * dynamic_range).powi(2);
    let mut total = 0.0;
    for (((&ux, &uy), (&xx, &yy)), &xy) in mx
        .iter()
        .zip(my.iter())
        .zip(sxx.iter().zip(syy.iter()))
        .zip(sxy.iter())
    {
        let vx = xx - ux * ux;
        let vy = yy - uy * uy;
        let cov = xy - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * cov + c2))
            / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok(total / mx.len() as f64)
}

pub fn ssim(a: &SliceImage, b: &SliceImage, dynamic_range: f64) -> Result<f64> {
    ssim_view(a.data.view(), b.data.view(), dynamic_range)
}

/// PSNR in dB; `infinite` is set for identical images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Psnr {
    pub db: f64,
    pub infinite: bool,
}

pub fn psnr_view(a: ArrayView2<'_, f32>, b: ArrayView2<'_, f32>, dynamic_range: f64) -> Result<Psnr> {
    same_dims(a, b)?;
    let n = a.len() as f64;
    let mse: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(Psnr {
            db: f64::INFINITY,
            infinite: true,
        });
    }
    Ok(Psnr {
        db: 10.0 * (dynamic_range * dynamic_range / mse).log10(),
        infinite: false,
    })
}

pub fn psnr(a: &SliceImage, b: &SliceImage, dynamic_range: f64) -> Result<Psnr> {
    psnr_view(a.data.view(), b.data.view(), dynamic_range)
}

/// Values along one row segment for several images.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LineProfile {
    pub row: usize,
    pub cols: (usize, usize),
    pub series: Vec<ProfileSeries>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileSeries {
    pub provenance: Provenance,
    pub slice_index: usize,
    pub values: Vec<f32>,
}

pub fn line_profile(images: &[&SliceImage], row: usize, cols: Range<usize>) -> Result<LineProfile> {
    let mut series = Vec::with_capacity(images.len());
    for img in images {
        let (h, w) = img.dims();
        if row >= h || cols.start >= cols.end || cols.end > w {
            return Err(Error::Index(format!(
                "profile row {row}, cols {}..{} outside {h}x{w} image",
                cols.start, cols.end
            )));
        }
        series.push(ProfileSeries {
            provenance: img.provenance,
            slice_index: img.slice_index,
            values: cols.clone().map(|c| img.data[[row, c]]).collect(),
        });
    }
    Ok(LineProfile {
        row,
        cols: (cols.start, cols.end),
        series,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SliceMetrics {
    pub slice_index: usize,
    pub ssim_ld: f64,
    pub ssim_dn: f64,
    pub psnr_ld: Psnr,
    pub psnr_dn: Psnr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ColumnSummary {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportSummary {
    pub slices: usize,
    pub dynamic_range: f64,
    pub ssim_ld: ColumnSummary,
    pub ssim_dn: ColumnSummary,
    pub psnr_ld: ColumnSummary,
    pub psnr_dn: ColumnSummary,
    /// Fraction of slices where SSIM_DN > SSIM_LD.
    pub improved_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityReport {
    pub per_slice: Vec<SliceMetrics>,
    pub summary: ReportSummary,
    pub line_profiles: Vec<LineProfile>,
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

fn summarize(values: &[f64]) -> ColumnSummary {
    ColumnSummary {
        median: quantile(values, 0.5),
        q1: quantile(values, 0.25),
        q3: quantile(values, 0.75),
        min: quantile(values, 0.0),
        max: quantile(values, 1.0),
    }
}

/// Which slices count as feature-bearing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureRule {
    /// Slice variance must exceed this fraction of the volume variance.
    pub relative_variance: f64,
}

impl Default for FeatureRule {
    fn default() -> Self {
        FeatureRule {
            relative_variance: 0.01,
        }
    }
}

fn variance<'a>(values: impl Iterator<Item = &'a f32> + Clone) -> f64 {
    let (n, s) = values.clone().fold((0usize, 0.0f64), |(n, s), &v| (n + 1, s + v as f64));
    let mean = s / n as f64;
    values.map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n as f64
}

pub fn feature_slices(volume: &Volume, rule: FeatureRule) -> Vec<usize> {
    let total = variance(volume.data.iter());
    (0..volume.depth())
        .filter(|&i| {
            let s = volume.slice(i);
            variance(s.iter()) > rule.relative_variance * total
        })
        .collect()
}

pub fn build_report(gt: &Volume, ld: &Volume, dn: &Volume, rule: FeatureRule) -> Result<QualityReport> {
    if gt.dims() != ld.dims() || gt.dims() != dn.dims() {
        return Err(Error::Shape(format!(
            "report volumes differ: gt {:?}, ld {:?}, dn {:?}",
            gt.dims(),
            ld.dims(),
            dn.dims()
        )));
    }
    let (lo, hi) = gt
        .data
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = (hi - lo) as f64;
    let range = if range > 0.0 { range } else { 1.0 };
    let slices = feature_slices(gt, rule);
    let per_slice = slices
        .par_iter()
        .map(|&i| {
            let (g, l, d) = (gt.slice(i), ld.slice(i), dn.slice(i));
            Ok(SliceMetrics {
                slice_index: i,
                ssim_ld: ssim_view(g, l, range)?,
                ssim_dn: ssim_view(g, d, range)?,
                psnr_ld: psnr_view(g, l, range)?,
                psnr_dn: psnr_view(g, d, range)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let col = |f: fn(&SliceMetrics) -> f64| per_slice.iter().map(f).collect::<Vec<_>>();
    let improved = per_slice.iter().filter(|m| m.ssim_dn > m.ssim_ld).count();
    let summary = ReportSummary {
        slices: per_slice.len(),
        dynamic_range: range,
        ssim_ld: summarize(&col(|m| m.ssim_ld)),
        ssim_dn: summarize(&col(|m| m.ssim_dn)),
        psnr_ld: summarize(&col(|m| m.psnr_ld.db)),
        psnr_dn: summarize(&col(|m| m.psnr_dn.db)),
        improved_fraction: if per_slice.is_empty() {
            0.0
        } else {
            improved as f64 / per_slice.len() as f64
        },
    };

    let mut line_profiles = Vec::new();
    if let Some(&mid) = slices.get(slices.len() / 2) {
        let size = gt.size();
        let len = size.min(200);
        let start = (size - len) / 2;
        let imgs = [gt.slice_image(mid), ld.slice_image(mid), dn.slice_image(mid)];
        line_profiles.push(line_profile(&imgs.iter().collect::<Vec<_>>(), size / 2, start..start + len)?);
    }
    Ok(QualityReport {
        per_slice,
        summary,
        line_profiles,
    })
}

fn fmt_psnr(p: Psnr) -> String {
    if p.infinite {
        "inf".into()
    } else {
        format!("{}", p.db)
    }
}

impl QualityReport {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("slice\tssim_ld\tssim_dn\tpsnr_ld\tpsnr_dn\n");
        for m in &self.per_slice {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}",
                m.slice_index,
                m.ssim_ld,
                m.ssim_dn,
                fmt_psnr(m.psnr_ld),
                fmt_psnr(m.psnr_dn)
            );
        }
        s
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&serde_json::json!({
            "summary": self.summary,
            "line_profiles": self.line_profiles,
        }))
        .expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn image(f: impl Fn(usize, usize) -> f32, n: usize) -> SliceImage {
        SliceImage::new(Array2::from_shape_fn((n, n), |(y, x)| f(y, x)), Provenance::GroundTruth, 0)
    }

    #[test]
    fn ssim_self_and_constants() {
        let a = image(|y, x| ((y * 31 + x * 17) % 13) as f32 * 0.1, 24);
        assert!((ssim(&a, &a, 1.2).unwrap() - 1.0).abs() < 1e-9);
        let (ma, mb, r) = (0.3f64, 0.7f64, 1.0f64);
        let ca = image(|_, _| ma as f32, 16);
        let cb = image(|_, _| mb as f32, 16);
        let c1 = (0.01 * r).powi(2);
        let ma = ma as f32 as f64;
        let mb = mb as f32 as f64;
        let expect = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        assert!((ssim(&ca, &cb, r).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn ssim_symmetric_and_bounded() {
        let a = image(|y, x| ((y * 7 + x * 3) % 5) as f32, 20);
        let b = image(|y, x| ((y * 5 + x * 11) % 7) as f32, 20);
        let ab = ssim(&a, &b, 6.0).unwrap();
        assert!((ab - ssim(&b, &a, 6.0).unwrap()).abs() < 1e-12);
        assert!(ab <= 1.0 && ab >= -1.0);
        assert!(matches!(ssim(&a, &image(|_, _| 0.0, 12), 1.0), Err(Error::Shape(_))));
    }

    #[test]
    fn psnr_closed_form() {
        let a = image(|y, x| (y + x) as f32, 8);
        let p = psnr(&a, &a, 1.0).unwrap();
        assert!(p.infinite && p.db.is_infinite());
        let delta = 0.5f32;
        let b = image(|y, x| (y + x) as f32 + delta, 8);
        let got = psnr(&a, &b, 4.0).unwrap();
        assert!((got.db - 20.0 * (4.0f64 / delta as f64).log10()).abs() < 1e-9);
        assert_eq!(got, psnr(&b, &a, 4.0).unwrap());
        let c = image(|y, x| (y + x) as f32 + 2.0 * delta, 8);
        assert!(psnr(&a, &c, 4.0).unwrap().db < got.db);
    }

    #[test]
    fn profiles_index_directly() {
        let a = image(|y, x| (y * 100 + x) as f32, 16);
        let p = line_profile(&[&a], 3, 2..12).unwrap();
        assert_eq!(p.series[0].values.len(), 10);
        assert_eq!(p.series[0].values[0], a.data[[3, 2]]);
        assert_eq!(line_profile(&[&a], 3, 5..6).unwrap().series[0].values, vec![a.data[[3, 5]]]);
        assert!(matches!(line_profile(&[&a], 16, 0..4), Err(Error::Index(_))));
        assert!(matches!(line_profile(&[&a], 0, 10..17), Err(Error::Index(_))));
    }

    #[test]
    fn quantiles() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0], 0.5), 2.0);
        assert_eq!(quantile(&[4.0, 1.0, 2.0, 3.0], 0.5), 2.5);
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.25), 2.0);
    }

    #[test]
    fn report_edge_cases() {
        let gt = Volume::new(
            Array3::from_shape_fn((5, 16, 16), |(z, y, x)| {
                if z == 0 {
                    1.0
                } else {
                    ((y * 3 + x * 7 + z) % 5) as f32
                }
            }),
            Provenance::GroundTruth,
        )
        .unwrap();
        let ld = Volume::new(gt.data.mapv(|v| v * 0.8 + 0.1), Provenance::LowDose).unwrap();
        let r = build_report(&gt, &ld, &gt, FeatureRule::default()).unwrap();
        // Slice 0 is flat and excluded.
        let idx: Vec<usize> = r.per_slice.iter().map(|m| m.slice_index).collect();
        assert_eq!(idx, vec![1, 2, 3, 4]);
        assert!(r.per_slice.iter().all(|m| (m.ssim_dn - 1.0).abs() < 1e-9 && m.psnr_dn.infinite));
        let same = build_report(&gt, &ld, &ld, FeatureRule::default()).unwrap();
        assert!(same.per_slice.iter().all(|m| m.ssim_ld == m.ssim_dn));
        let col: Vec<f64> = same.per_slice.iter().map(|m| m.ssim_ld).collect();
        assert_eq!(same.summary.ssim_ld.median, quantile(&col, 0.5));
        assert_eq!(r.to_tsv().lines().count(), 5);
    }
}
