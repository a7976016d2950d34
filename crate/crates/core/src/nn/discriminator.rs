//! Critic network: six 3x3 convolutions, global average pooling and two
//! fully connected layers ending in one unbounded score.

use super::generator::he_init;
use super::graph::{Graph, GraphBuilder, ParamSet};
use super::ops::Activation;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::io::checkpoint::Checkpoint;
use crate::volume::SliceImage;

pub const LEAK: f64 = 0.2;

/// `(tag, channels, stride)` of the convolution stack.
pub const CONV_LAYERS: [(&str, usize, usize); 6] = [
    ("c1", 64, 1),
    ("c2", 64, 2),
    ("c3", 128, 1),
    ("c4", 128, 2),
    ("c5", 256, 1),
    ("c6", 4, 2),
];

pub fn discriminator_graph() -> Graph {
    let act = Activation::LeakyRelu(LEAK);
    let mut g = GraphBuilder::new(1);
    let mut last = 0;
    for (tag, c, stride) in CONV_LAYERS {
        last = g.conv(tag, last, c, 3, stride, act);
    }
    let pooled = g.global_avg_pool("pool", last);
    let hidden = g.dense("fc1", pooled, 64, act);
    g.dense("score", hidden, 1, Activation::Linear);
    g.finish()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorParams {
    pub graph: Graph,
    pub params: ParamSet<f32>,
}

pub fn build_discriminator(seed: u64) -> DiscriminatorParams {
    let graph = discriminator_graph();
    let params = he_init(&graph.specs, seed);
    DiscriminatorParams { graph, params }
}

impl DiscriminatorParams {
    pub fn from_params(params: ParamSet<f32>) -> Result<Self> {
        let graph = discriminator_graph();
        params.check_layout(&graph.specs)?;
        Ok(DiscriminatorParams { graph, params })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.params.clone()).with_meta("kind", "discriminator")
    }
}

/// Scores for a batch `[m, 1, h, w]`.
pub fn score_batch<T: Real>(graph: &Graph, params: &ParamSet<T>, batch: Tensor<T>) -> Vec<T> {
    let (out, _) = graph.forward_lean(params, batch, None);
    out.into_vec()
}

pub fn discriminator_forward(params: &DiscriminatorParams, image: &SliceImage) -> Result<f64> {
    let (h, w) = image.dims();
    if h < 8 || w < 8 {
        return Err(Error::Shape(format!(
            "discriminator input must be at least 8x8, got {h}x{w}"
        )));
    }
    let data: Vec<f32> = image.data.iter().copied().collect();
    let t = Tensor::from_vec([1, 1, h, w], data);
    let score = score_batch(&params.graph, &params.params, t)[0] as f64;
    if !score.is_finite() {
        return Err(Error::NumericalFailure(format!("discriminator score is {score}")));
    }
    Ok(score)
}

/// Multi-channel inputs are rejected; `channels` is the incoming channel count.
pub fn check_single_channel(channels: usize) -> Result<()> {
    if channels != 1 {
        return Err(Error::Shape(format!(
            "discriminator takes one channel, got {channels}"
        )));
    }
    Ok(())
}
