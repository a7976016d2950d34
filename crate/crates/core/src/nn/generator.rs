//! Slice-stack denoising generator: a three-level U-Net.
//!
//! ```text
//! input (d) ─1x1→ head (b) ─3x3→ down1a (4b) ─→ down1b (4b) ────────────────┐
//!   pool1 ─→ down2a (8b) ─→ down2b (8b) ─────────────────────────────┐      │
//!     pool2 ─→ down3a (16b) ─→ down3b (16b) ──────────────────┐      │      │
//!       pool3 ─→ bottleneck (16b)                             │      │      │
//!       up3 ─ cat3 [up3, down3b] ─→ up3a (8b) ─→ up3b (8b)  ←─┘      │      │
//!     up2 ─ cat2 [up2, down2b] ─→ up2a (4b) ─→ up2b (4b)  ←──────────┘      │
//!   up1 ─ cat1 [up1, down1b] ─→ up1a (4b) ─→ up1b (4b)  ←───────────────────┘
//! ─1x1→ out_a (2b) ─1x1→ output (1, linear)
//! ```
//!
//! With the default `b = 8` the bottleneck has 128 channels at 1/8 of the
//! input size. Every convolution is zero-padded ("same") and followed by a
//! ReLU except the output. Inputs are affinely normalized with the
//! `norm.offset`/`norm.scale` buffers and outputs mapped back.

use ndarray::{s, Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::graph::{Graph, GraphBuilder, ParamSet, ParamSpec};
use super::ops::Activation;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::io::checkpoint::Checkpoint;
use crate::volume::{Provenance, SliceImage, SliceStack};

pub const NORM_OFFSET: &str = "norm.offset";
pub const NORM_SCALE: &str = "norm.scale";

/// Spatial dims must be multiples of this (three 2x poolings).
pub const SIZE_MULTIPLE: usize = 8;

pub fn generator_graph(depth: usize, base: usize) -> Graph {
    let relu = Activation::Relu;
    let mut g = GraphBuilder::new(depth);
    let head = g.conv("head", 0, base, 1, 1, relu);
    let d1 = g.conv("down1a", head, 4 * base, 3, 1, relu);
    let skip1 = g.conv("down1b", d1, 4 * base, 3, 1, relu);
    let p1 = g.maxpool("pool1", skip1);
    let d2 = g.conv("down2a", p1, 8 * base, 3, 1, relu);
    let skip2 = g.conv("down2b", d2, 8 * base, 3, 1, relu);
    let p2 = g.maxpool("pool2", skip2);
    let d3 = g.conv("down3a", p2, 16 * base, 3, 1, relu);
    let skip3 = g.conv("down3b", d3, 16 * base, 3, 1, relu);
    let p3 = g.maxpool("pool3", skip3);
    let bottleneck = g.conv("bottleneck", p3, 16 * base, 3, 1, relu);

    let u3 = g.upsample("up3", bottleneck);
    let c3 = g.concat("cat3", u3, skip3);
    let u3a = g.conv("up3a", c3, 8 * base, 3, 1, relu);
    let u3b = g.conv("up3b", u3a, 8 * base, 3, 1, relu);
    let u2 = g.upsample("up2", u3b);
    let c2 = g.concat("cat2", u2, skip2);
    let u2a = g.conv("up2a", c2, 4 * base, 3, 1, relu);
    let u2b = g.conv("up2b", u2a, 4 * base, 3, 1, relu);
    let u1 = g.upsample("up1", u2b);
    let c1 = g.concat("cat1", u1, skip1);
    let u1a = g.conv("up1a", c1, 4 * base, 3, 1, relu);
    let u1b = g.conv("up1b", u1a, 4 * base, 3, 1, relu);
    let out_a = g.conv("out_a", u1b, 2 * base, 1, 1, relu);
    g.conv("output", out_a, 1, 1, 1, Activation::Linear);
    g.finish()
}

/// He-normal kernels (std `sqrt(2 / fan_in)`), zero biases.
pub(crate) fn he_init(specs: &[ParamSpec], seed: u64) -> ParamSet<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = ParamSet::<f32>::zeros(specs.to_vec());
    for (spec, values) in set.specs.iter().zip(set.values.iter_mut()) {
        if spec.shape.len() < 2 || !spec.trainable {
            continue;
        }
        let fan_in: usize = spec.shape[1..].iter().product();
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
        for v in values.iter_mut() {
            *v = normal.sample(&mut rng) as f32;
        }
    }
    set
}

/// Generator architecture plus parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    pub depth: usize,
    pub base_channels: usize,
    pub graph: Graph,
    pub params: ParamSet<f32>,
}

/// Full tensor table: the graph's layers followed by the two normalization
/// buffers.
pub fn generator_layer_table(depth: usize, base: usize) -> Vec<ParamSpec> {
    let mut specs = generator_graph(depth, base).specs;
    for name in [NORM_OFFSET, NORM_SCALE] {
        specs.push(ParamSpec {
            name: name.into(),
            shape: vec![1],
            trainable: false,
        });
    }
    specs
}

pub fn build_generator(depth: usize, base_channels: usize, seed: u64) -> Result<GeneratorParams> {
    if depth % 2 == 0 || depth == 0 {
        return Err(Error::InvalidSpec(format!(
            "generator depth must be odd and >= 1, got {depth}"
        )));
    }
    if base_channels == 0 {
        return Err(Error::InvalidSpec("base channel count must be positive".into()));
    }
    let graph = generator_graph(depth, base_channels);
    let mut params = he_init(&generator_layer_table(depth, base_channels), seed);
    params.get_mut(NORM_SCALE).expect("buffer present")[0] = 1.0;
    Ok(GeneratorParams {
        depth,
        base_channels,
        graph,
        params,
    })
}

impl GeneratorParams {
    /// Rebuilds the architecture for a loaded parameter set.
    pub fn from_params(depth: usize, base_channels: usize, params: ParamSet<f32>) -> Result<Self> {
        if depth % 2 == 0 || depth == 0 || base_channels == 0 {
            return Err(Error::IncompatibleCheckpoint(format!(
                "bad generator geometry depth={depth} base={base_channels}"
            )));
        }
        params.check_layout(&generator_layer_table(depth, base_channels))?;
        Ok(GeneratorParams {
            depth,
            base_channels,
            graph: generator_graph(depth, base_channels),
            params,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.params.clone())
            .with_meta("kind", "generator")
            .with_meta("depth", self.depth)
            .with_meta("base_channels", self.base_channels)
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        match ckpt.meta.get("kind").map(String::as_str) {
            Some("generator") => {}
            other => {
                return Err(Error::IncompatibleCheckpoint(format!(
                    "expected a generator checkpoint, found kind {other:?}"
                )))
            }
        }
        let depth = ckpt.meta_usize("depth")?;
        let base = ckpt.meta_usize("base_channels")?;
        Self::from_params(depth, base, ckpt.params)
    }

    pub fn normalization(&self) -> (f32, f32) {
        (
            self.params.get(NORM_OFFSET).expect("buffer")[0],
            self.params.get(NORM_SCALE).expect("buffer")[0],
        )
    }

    pub fn set_normalization(&mut self, offset: f32, scale: f32) {
        self.params.get_mut(NORM_OFFSET).expect("buffer")[0] = offset;
        self.params.get_mut(NORM_SCALE).expect("buffer")[0] = scale;
    }

    pub fn trainable_count(&self) -> usize {
        self.params.trainable_count()
    }

    fn check_stack(&self, stack: &SliceStack, pad: bool) -> Result<()> {
        if stack.depth() != self.depth {
            return Err(Error::Shape(format!(
                "stack depth {} does not match generator depth {}",
                stack.depth(),
                self.depth
            )));
        }
        if !pad {
            let (h, w) = stack.dims();
            for (name, v) in [("height", h), ("width", w)] {
                if v % SIZE_MULTIPLE != 0 || v == 0 {
                    return Err(Error::Shape(format!(
                        "{name} {v} is not a multiple of {SIZE_MULTIPLE}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Normalized network input for one stack, edge-padded to a multiple of 8
    /// when `pad` is set.
    pub fn input_tensor(&self, stack: &SliceStack, pad: bool) -> Tensor<f32> {
        let (offset, scale) = self.normalization();
        let (h, w) = stack.dims();
        let (hp, wp) = if pad {
            (h.next_multiple_of(SIZE_MULTIPLE), w.next_multiple_of(SIZE_MULTIPLE))
        } else {
            (h, w)
        };
        let d = stack.depth();
        let mut data = Vec::with_capacity(d * hp * wp);
        for c in 0..d {
            for y in 0..hp {
                for x in 0..wp {
                    let v = stack.data[[c, y.min(h - 1), x.min(w - 1)]];
                    data.push((v - offset) * scale);
                }
            }
        }
        Tensor::from_vec([1, d, hp, wp], data)
    }
}

/// Tensor of a batch of normalized stacks (training path, no padding).
pub fn stacks_to_tensor<T: Real>(stacks: &[&Array3<f32>], offset: f32, scale: f32) -> Tensor<T> {
    let (d, h, w) = stacks[0].dim();
    let mut data = Vec::with_capacity(stacks.len() * d * h * w);
    for s in stacks {
        data.extend(s.iter().map(|&v| T::of(((v - offset) * scale) as f64)));
    }
    Tensor::from_vec([stacks.len(), d, h, w], data)
}

pub fn generator_forward(params: &GeneratorParams, stack: &SliceStack) -> Result<SliceImage> {
    forward_impl(params, stack, false)
}

/// As [`generator_forward`], but accepts any size by edge-padding to the next
/// multiple of 8 and cropping the result.
pub fn generator_forward_padded(params: &GeneratorParams, stack: &SliceStack) -> Result<SliceImage> {
    forward_impl(params, stack, true)
}

fn forward_impl(params: &GeneratorParams, stack: &SliceStack, pad: bool) -> Result<SliceImage> {
    params.check_stack(stack, pad)?;
    let (h, w) = stack.dims();
    let input = params.input_tensor(stack, pad);
    let wp = input.width();
    let (out, _) = params.graph.forward_lean(&params.params, input, None);
    let (offset, scale) = params.normalization();
    let full = Array2::from_shape_vec((out.height(), wp), out.into_vec())
        .expect("output is one channel");
    let data = full.slice(s![..h, ..w]).mapv(|v| v / scale + offset);
    Ok(SliceImage::new(data, Provenance::Denoised, stack.center_index))
}

/// Per-channel maps at node `tag` (default interpretation target:
/// `"bottleneck"`). The `"input"` tag returns the raw stack slices.
pub fn extract_feature_maps(
    params: &GeneratorParams,
    stack: &SliceStack,
    tag: &str,
) -> Result<Vec<Array2<f32>>> {
    let node = params.graph.node_index(tag)?;
    params.check_stack(stack, false)?;
    if node == 0 {
        return Ok(stack.data.outer_iter().map(|s| s.to_owned()).collect());
    }
    let input = params.input_tensor(stack, false);
    let (_, kept) = params.graph.forward_lean(&params.params, input, Some(node));
    let t = kept.expect("requested node kept");
    let (h, w) = (t.height(), t.width());
    Ok((0..t.channels())
        .map(|c| Array2::from_shape_vec((h, w), t.plane(0, c).to_vec()).expect("plane shape"))
        .collect())
}
