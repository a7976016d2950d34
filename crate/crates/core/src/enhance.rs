//! Whole-volume and streaming inference with a trained generator.

use std::collections::VecDeque;
use std::time::Instant;

use ndarray::{Array3, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::generator::{generator_forward, generator_forward_padded, GeneratorParams};
use crate::recon::in_circle;
use crate::volume::{stack_indices, Provenance, SliceImage, SliceStack, Volume};

fn check_depth(g: &GeneratorParams, d: usize) -> Result<()> {
    if g.depth != d {
        return Err(Error::Configuration(format!(
            "generator was built for depth {}, but depth {d} was requested",
            g.depth
        )));
    }
    Ok(())
}

fn run(g: &GeneratorParams, stack: &SliceStack, pad: bool) -> Result<SliceImage> {
    let mut out = if pad {
        generator_forward_padded(g, stack)
    } else {
        generator_forward(g, stack)
    }?;
    // Outside the inscribed circle a reconstruction carries no data; keep
    // it empty rather than let the network paint there.
    let center = stack.data.index_axis(Axis(0), stack.depth() / 2);
    let (h, w) = center.dim();
    if h == w {
        let outside = |p: usize| !in_circle(p, w, w as f64 / 2.0);
        if center.iter().enumerate().all(|(p, &v)| v == 0.0 || !outside(p)) {
            out.data.iter_mut().enumerate().filter(|(p, _)| outside(*p)).for_each(|(_, v)| *v = 0.0);
        }
    }
    Ok(out)
}

/// Denoises every slice of `ld` from its clamped `d`-stack.
pub fn enhance_volume(g: &GeneratorParams, ld: &Volume, d: usize) -> Result<Volume> {
    enhance_volume_with(g, ld, d, false, true)
}

/// As [`enhance_volume`]; `pad` accepts sizes that are not multiples of 8,
/// `parallel` spreads slices over the rayon pool.
pub fn enhance_volume_with(
    g: &GeneratorParams,
    ld: &Volume,
    d: usize,
    pad: bool,
    parallel: bool,
) -> Result<Volume> {
    check_depth(g, d)?;
    let n = ld.depth();
    let start = Instant::now();
    let one = |i: usize| -> Result<SliceImage> {
        let stack = SliceStack::from_volume(ld, i, d)?;
        run(g, &stack, pad)
    };
    let slices: Vec<SliceImage> = if parallel {
        (0..n).into_par_iter().map(one).collect::<Result<_>>()?
    } else {
        (0..n).map(one).collect::<Result<_>>()?
    };
    log::info!(
        "enhanced {n} slices in {:.3} s ({:.1} ms/slice)",
        start.elapsed().as_secs_f64(),
        start.elapsed().as_secs_f64() * 1e3 / n.max(1) as f64
    );
    let mut out = Volume::from_slices(&slices, Provenance::Denoised)?;
    out.voxel_size = ld.voxel_size;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StreamStats {
    pub slices: usize,
    pub max_window: usize,
}

/// Bounded-memory enhancement: slices must arrive with `slice_index`
/// 0, 1, 2, ...; enhanced slice `i` is passed to `sink` once slice
/// `i + d/2` has arrived (or at end of input).
pub fn enhance_stream<I, F>(g: &GeneratorParams, source: I, d: usize, pad: bool, mut sink: F) -> Result<StreamStats>
where
    I: IntoIterator<Item = Result<SliceImage>>,
    F: FnMut(SliceImage) -> Result<()>,
{
    check_depth(g, d)?;
    let half = d / 2;
    let mut window: VecDeque<SliceImage> = VecDeque::with_capacity(d);
    let mut stats = StreamStats::default();
    let mut next_out = 0usize;
    let mut received = 0usize;

    let emit = |i: usize, window: &VecDeque<SliceImage>, n: usize, sink: &mut F| -> Result<()> {
        let first = window.front().expect("window non-empty").slice_index;
        let (h, w) = window[0].dims();
        let mut data = Array3::zeros((d, h, w));
        for (k, j) in stack_indices(i, d, n).into_iter().enumerate() {
            data.index_axis_mut(Axis(0), k).assign(&window[j - first].data);
        }
        let out = run(g, &SliceStack::new(data, i)?, pad)?;
        sink(out)
    };

    for item in source {
        let slice = item?;
        if slice.slice_index != received {
            return Err(Error::Protocol(format!(
                "expected slice {received}, received slice {}",
                slice.slice_index
            )));
        }
        if let Some(prev) = window.back() {
            if prev.dims() != slice.dims() {
                return Err(Error::Shape(format!(
                    "slice {} is {:?}, earlier slices {:?}",
                    slice.slice_index,
                    slice.dims(),
                    prev.dims()
                )));
            }
        }
        window.push_back(slice);
        received += 1;
        stats.max_window = stats.max_window.max(window.len());
        if received > half {
            // Slice next_out + half is the newest, so the upper clamp is inert.
            emit(next_out, &window, received, &mut sink)?;
            next_out += 1;
            if next_out > half {
                window.pop_front();
            }
        }
    }
    let n = received;
    while next_out < n {
        emit(next_out, &window, n, &mut sink)?;
        next_out += 1;
        if next_out > half && window.len() > 1 {
            window.pop_front();
        }
    }
    stats.slices = n;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recon::in_circle;
use crate::nn::generator::build_generator;

    fn volume(n: usize) -> Volume {
        Volume::new(
            Array3::from_shape_fn((n, 16, 16), |(z, y, x)| ((z * 5 + y * 3 + x) % 7) as f32 * 0.01),
            Provenance::LowDose,
        )
        .unwrap()
    }

    #[test]
    fn stream_matches_volume() {
        for d in [1, 3, 5] {
            let g = build_generator(d, 1, 9).unwrap();
            let v = volume(6);
            let whole = enhance_volume(&g, &v, d).unwrap();
            let mut got = Vec::new();
            let stats = enhance_stream(&g, (0..6).map(|i| Ok(v.slice_image(i))), d, false, |s| {
                got.push(s);
                Ok(())
            })
            .unwrap();
            assert_eq!(stats.slices, 6);
            assert!(stats.max_window <= d);
            assert_eq!(got.len(), 6);
            for (i, s) in got.iter().enumerate() {
                assert_eq!(s.slice_index, i);
                assert_eq!(s.data, whole.slice(i));
            }
        }
    }

    #[test]
    fn short_streams_clamp() {
        let g = build_generator(5, 1, 2).unwrap();
        let v = volume(2);
        let whole = enhance_volume(&g, &v, 5).unwrap();
        let mut got = Vec::new();
        enhance_stream(&g, (0..2).map(|i| Ok(v.slice_image(i))), 5, false, |s| {
            got.push(s);
            Ok(())
        })
        .unwrap();
        assert_eq!(got.len(), 2);
        assert_eq!(got[1].data, whole.slice(1));
    }

    #[test]
    fn out_of_order_is_protocol_error() {
        let g = build_generator(3, 1, 0).unwrap();
        let v = volume(4);
        let err = enhance_stream(&g, [0, 2].map(|i| Ok(v.slice_image(i))), 3, false, |_| Ok(())).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
    }

    #[test]
    fn circle_masked_input_gives_masked_output() {
        let g = build_generator(1, 1, 3).unwrap();
        let mut v = volume(2);
        v.data.indexed_iter_mut().for_each(|((_, y, x), val)| {
            if !in_circle(y * 16 + x, 16, 8.0) {
                *val = 0.0;
            }
        });
        let out = enhance_volume(&g, &v, 1).unwrap();
        assert_eq!(out.data[[0, 0, 0]], 0.0);
        assert_eq!(out.data[[1, 15, 0]], 0.0);
        // Unmasked input leaves the corners alone.
        let raw = enhance_volume(&g, &volume(2), 1).unwrap();
        assert_ne!(raw.data[[0, 0, 0]], 0.0);
    }

    #[test]
    fn parallel_equals_serial_and_depth_checked() {
        let g = build_generator(3, 1, 4).unwrap();
        let v = volume(5);
        let a = enhance_volume_with(&g, &v, 3, false, true).unwrap();
        let b = enhance_volume_with(&g, &v, 3, false, false).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dims(), v.dims());
        assert_eq!(a.provenance, Provenance::Denoised);
        match enhance_volume(&g, &v, 5) {
            Err(Error::Configuration(msg)) => assert!(msg.contains('3') && msg.contains('5')),
            other => panic!("unexpected {other:?}"),
        }
    }
}
