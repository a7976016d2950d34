//! Frozen feature networks for the perceptual loss.

use std::path::Path;
use std::str::FromStr;

use ndarray::Array3;
use sha2::{Digest, Sha256};

use super::graph::{Graph, GraphBuilder, ParamSet};
use super::ops::Activation;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::io::checkpoint::load_checkpoint;
use crate::volume::SliceImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtractorKind {
    PretrainedVgg,
    Identity,
    GaussianPyramid,
}

impl ExtractorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExtractorKind::PretrainedVgg => "pretrained_vgg",
            ExtractorKind::Identity => "identity",
            ExtractorKind::GaussianPyramid => "gaussian_pyramid",
        }
    }
}

impl FromStr for ExtractorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrained_vgg" => Ok(ExtractorKind::PretrainedVgg),
            "identity" => Ok(ExtractorKind::Identity),
            "gaussian_pyramid" => Ok(ExtractorKind::GaussianPyramid),
            _ => Err(Error::Lookup {
                tag: s.into(),
                valid: vec!["pretrained_vgg".into(), "identity".into(), "gaussian_pyramid".into()],
            }),
        }
    }
}

/// How "the first 16 layers" of VGG-19 are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerCounting {
    /// 16 convolutions (all of VGG-19's), with the 4 pools between blocks.
    WeightLayers,
    /// 16 convolution or pooling layers: through `block4_pool`.
    AllLayers,
}

impl LayerCounting {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerCounting::WeightLayers => "weight",
            LayerCounting::AllLayers => "all",
        }
    }
}

impl FromStr for LayerCounting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weight" => Ok(LayerCounting::WeightLayers),
            "all" => Ok(LayerCounting::AllLayers),
            _ => Err(Error::Lookup {
                tag: s.into(),
                valid: vec!["weight".into(), "all".into()],
            }),
        }
    }
}

/// VGG-19 convolution blocks: `(channels, convs)`.
const VGG_BLOCKS: [(usize, usize); 5] = [(64, 2), (128, 2), (256, 4), (512, 4), (512, 4)];

/// Caffe-style BGR means, for inputs scaled to 0..255.
pub const VGG_MEANS: [f32; 3] = [103.939, 116.779, 123.68];

pub const PYRAMID_SIGMAS: [f64; 3] = [1.0, 2.0, 4.0];

/// Truncated VGG-19 graph with Keras-style layer names
/// (`block{b}_conv{k}`, `block{b}_pool`).
pub fn vgg_graph(counting: LayerCounting) -> Graph {
    let mut g = GraphBuilder::new(3);
    let mut last = 0;
    let mut layers = 0;
    'outer: for (b, &(c, convs)) in VGG_BLOCKS.iter().enumerate() {
        for k in 1..=convs {
            last = g.conv(&format!("block{}_conv{k}", b + 1), last, c, 3, 1, Activation::Relu);
            layers += 1;
            if layers == 16 {
                break 'outer;
            }
        }
        last = g.maxpool(&format!("block{}_pool", b + 1), last);
        if counting == LayerCounting::AllLayers {
            layers += 1;
            if layers == 16 {
                break;
            }
        }
    }
    g.finish()
}

fn pyramid_params() -> (Graph, ParamSet<f32>) {
    let radius = (3.0 * PYRAMID_SIGMAS[2]).ceil() as usize;
    let k = 2 * radius + 1;
    let mut g = GraphBuilder::new(1);
    g.conv("blur", 0, PYRAMID_SIGMAS.len(), k, 1, Activation::Linear);
    let graph = g.finish();
    let mut params = ParamSet::<f32>::zeros(graph.specs.clone());
    let w = params.get_mut("blur.weight").expect("blur kernel");
    for (c, &sigma) in PYRAMID_SIGMAS.iter().enumerate() {
        let taps: Vec<f64> = (0..k)
            .map(|i| {
                let x = i as f64 - radius as f64;
                (-x * x / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let norm: f64 = taps.iter().sum::<f64>().powi(2);
        for y in 0..k {
            for x in 0..k {
                w[c * k * k + y * k + x] = (taps[y] * taps[x] / norm) as f32;
            }
        }
    }
    (graph, params)
}

/// Frozen perceptual feature network.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    pub kind: ExtractorKind,
    pub counting: LayerCounting,
    graph: Option<Graph>,
    params: ParamSet<f32>,
    pub channel_means: [f32; 3],
    pub input_scale: f32,
}

impl FeatureExtractor {
    pub fn identity() -> Self {
        FeatureExtractor {
            kind: ExtractorKind::Identity,
            counting: LayerCounting::WeightLayers,
            graph: None,
            params: ParamSet::zeros(Vec::new()),
            channel_means: [0.0; 3],
            input_scale: 1.0,
        }
    }

    pub fn gaussian_pyramid() -> Self {
        let (graph, params) = pyramid_params();
        FeatureExtractor {
            kind: ExtractorKind::GaussianPyramid,
            counting: LayerCounting::WeightLayers,
            graph: Some(graph),
            params,
            channel_means: [0.0; 3],
            input_scale: 1.0,
        }
    }

    /// VGG weights from a checkpoint written by `scripts/import_vgg19.py`.
    /// Extra tensors beyond the truncation point are ignored.
    pub fn pretrained_vgg(path: &Path, counting: LayerCounting) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Configuration(format!(
                "pretrained VGG weights not found at {}; convert them with \
                 scripts/import_vgg19.py or use extractor kind `gaussian_pyramid` or `identity`",
                path.display()
            )));
        }
        let ckpt = load_checkpoint(path)?;
        let graph = vgg_graph(counting);
        let mut params = ParamSet::<f32>::zeros(graph.specs.clone());
        for (spec, dst) in params.specs.iter().zip(params.values.iter_mut()) {
            let k = ckpt.params.index_of(&spec.name).ok_or_else(|| {
                Error::IncompatibleCheckpoint(format!("VGG file lacks tensor `{}`", spec.name))
            })?;
            if ckpt.params.specs[k].shape != spec.shape {
                return Err(Error::IncompatibleCheckpoint(format!(
                    "VGG tensor `{}` has shape {:?}, expected {:?}",
                    spec.name, ckpt.params.specs[k].shape, spec.shape
                )));
            }
            dst.clone_from(&ckpt.params.values[k]);
        }
        let meta_f32 = |key: &str, default: f32| -> f32 {
            ckpt.meta.get(key).and_then(|v| v.parse().ok()).unwrap_or(default)
        };
        Ok(FeatureExtractor {
            kind: ExtractorKind::PretrainedVgg,
            counting,
            graph: Some(graph),
            params,
            channel_means: [
                meta_f32("mean0", VGG_MEANS[0]),
                meta_f32("mean1", VGG_MEANS[1]),
                meta_f32("mean2", VGG_MEANS[2]),
            ],
            input_scale: meta_f32("input_scale", 255.0),
        })
    }

    /// Random-weight VGG of the given layer counting; for shape checks only.
    pub fn vgg_with_params(counting: LayerCounting, params: ParamSet<f32>) -> Result<Self> {
        let graph = vgg_graph(counting);
        params.check_layout(&graph.specs)?;
        Ok(FeatureExtractor {
            kind: ExtractorKind::PretrainedVgg,
            counting,
            graph: Some(graph),
            params,
            channel_means: VGG_MEANS,
            input_scale: 255.0,
        })
    }

    pub fn from_config(kind: ExtractorKind, weights: Option<&Path>, counting: LayerCounting) -> Result<Self> {
        match kind {
            ExtractorKind::Identity => Ok(Self::identity()),
            ExtractorKind::GaussianPyramid => Ok(Self::gaussian_pyramid()),
            ExtractorKind::PretrainedVgg => {
                let path = weights.ok_or_else(|| {
                    Error::Configuration(
                        "extractor kind `pretrained_vgg` needs a weights path; \
                         use `gaussian_pyramid` or `identity` without one"
                            .into(),
                    )
                })?;
                Self::pretrained_vgg(path, counting)
            }
        }
    }

    pub fn params(&self) -> &ParamSet<f32> {
        &self.params
    }

    /// Hex SHA-256 over the frozen tensors and constants.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.kind.as_str());
        for v in self.params.values.iter().flatten() {
            h.update(v.to_le_bytes());
        }
        for v in self.channel_means.iter().chain([&self.input_scale]) {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// `(C_f, H_f, W_f)` for an `h x w` input.
    pub fn output_dims(&self, h: usize, w: usize) -> (usize, usize, usize) {
        match &self.graph {
            None => (1, h, w),
            Some(g) => {
                let c_in = if self.kind == ExtractorKind::PretrainedVgg { 3 } else { 1 };
                let s = *g.infer_shapes([c_in, h, w]).last().expect("nodes");
                (s[0], s[1], s[2])
            }
        }
    }

    fn preprocess<T: Real>(&self, batch: &Tensor<T>) -> Tensor<T> {
        if self.kind != ExtractorKind::PretrainedVgg {
            return batch.clone();
        }
        let [n, _, h, w] = batch.shape();
        let scale = T::of(self.input_scale as f64);
        let mut data = Vec::with_capacity(n * 3 * h * w);
        for item in 0..n {
            for mean in self.channel_means {
                let m = T::of(mean as f64);
                data.extend(batch.item(item).iter().map(|&v| v * scale - m));
            }
        }
        Tensor::from_vec([n, 3, h, w], data)
    }

    /// Features of a single-channel batch `[m, 1, h, w]`.
    pub fn features<T: Real>(&self, batch: &Tensor<T>) -> Tensor<T> {
        match &self.graph {
            None => batch.clone(),
            Some(g) => {
                let params = T::view_params(&self.params);
                g.forward_lean(&params, self.preprocess(batch), None).0
            }
        }
    }

    /// Features plus the pullback of `dfeat(features)` to the input; the
    /// closure receives the features and returns the upstream gradient.
    pub fn features_vjp<T: Real>(
        &self,
        batch: &Tensor<T>,
        dfeat: impl FnOnce(&Tensor<T>) -> Tensor<T>,
    ) -> (Tensor<T>, Tensor<T>) {
        let Some(g) = &self.graph else {
            let d = dfeat(batch);
            return (batch.clone(), d);
        };
        let params = T::view_params(&self.params);
        let tape = g.forward(&params, self.preprocess(batch));
        let feats = tape.output().clone();
        let upstream = dfeat(&feats);
        let mut scratch = params.zeros_like();
        let din = g
            .backward(&params, &tape, None, upstream, &mut scratch, false, true)
            .expect("input gradient requested");
        if self.kind != ExtractorKind::PretrainedVgg {
            return (feats, din);
        }
        let [n, _, h, w] = batch.shape();
        let scale = T::of(self.input_scale as f64);
        let hw = h * w;
        let mut out = Vec::with_capacity(n * hw);
        for item in 0..n {
            let d = din.item(item);
            out.extend((0..hw).map(|p| (d[p] + d[hw + p] + d[2 * hw + p]) * scale));
        }
        (feats, Tensor::from_vec([n, 1, h, w], out))
    }

    /// Features of one image as `(C_f, H_f, W_f)`.
    pub fn feature_extract(&self, image: &SliceImage) -> Result<Array3<f32>> {
        if let Some(v) = image.data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure(format!("feature input contains {v}")));
        }
        let (h, w) = image.dims();
        let t = Tensor::from_vec([1, 1, h, w], image.data.iter().copied().collect());
        let f = self.features(&t);
        let [_, c, hf, wf] = f.shape();
        Ok(Array3::from_shape_vec((c, hf, wf), f.into_vec()).expect("feature shape"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Provenance;
    use ndarray::Array2;

    fn image(n: usize) -> SliceImage {
        SliceImage::new(
            Array2::from_shape_fn((n, n), |(y, x)| ((y * 13 + x * 7) % 11) as f32 / 11.0),
            Provenance::GroundTruth,
            0,
        )
    }

    #[test]
    fn identity_returns_input() {
        let img = image(8);
        let f = FeatureExtractor::identity().feature_extract(&img).unwrap();
        assert_eq!(f.index_axis(ndarray::Axis(0), 0), img.data);
    }

    #[test]
    fn vgg_truncation_shapes() {
        let g = vgg_graph(LayerCounting::WeightLayers);
        let convs = g.specs.len() / 2;
        assert_eq!(convs, 16);
        let s = g.infer_shapes([3, 1024, 1024]);
        assert_eq!(*s.last().unwrap(), [512, 64, 64]);
        assert_eq!(g.tags().last().unwrap(), "block5_conv4");

        let g = vgg_graph(LayerCounting::AllLayers);
        assert_eq!(g.specs.len() / 2, 12);
        assert_eq!(g.tags().last().unwrap(), "block4_pool");
        assert_eq!(*g.infer_shapes([3, 1024, 1024]).last().unwrap(), [512, 64, 64]);
    }

    #[test]
    fn missing_vgg_file_is_configuration_error() {
        let err = FeatureExtractor::pretrained_vgg(Path::new("/nonexistent/vgg.ckpt"), LayerCounting::WeightLayers)
            .unwrap_err();
        match err {
            Error::Configuration(msg) => assert!(msg.contains("gaussian_pyramid")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pyramid_is_deterministic_and_preserves_constants() {
        let ex = FeatureExtractor::gaussian_pyramid();
        let img = image(16);
        assert_eq!(ex.feature_extract(&img).unwrap(), ex.feature_extract(&img).unwrap());
        assert_eq!(ex.output_dims(16, 24), (3, 16, 24));
        // Interior of a constant image is unchanged by a normalized blur.
        let flat = SliceImage::new(Array2::from_elem((40, 40), 2.0), Provenance::GroundTruth, 0);
        let f = ex.feature_extract(&flat).unwrap();
        for c in 0..3 {
            assert!((f[[c, 20, 20]] - 2.0).abs() < 1e-5);
        }
    }
}
