//! Adversarial training loop: critic updates interleaved with generator
//! updates on random slice stacks of paired low/normal-dose volumes.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{s, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::enhance::enhance_volume;
use crate::error::{Error, Result};
use crate::io::checkpoint::save_checkpoint;
use crate::losses::{critic_objective, generator_objective, GeneratorContext, LossWeights, MixedSample, MseForm};
use crate::nn::discriminator::{build_discriminator, DiscriminatorParams};
use crate::nn::extractor::{ExtractorKind, FeatureExtractor, LayerCounting};
use crate::nn::generator::{build_generator, stacks_to_tensor, GeneratorParams, SIZE_MULTIPLE};
use crate::nn::graph::ParamSet;
use crate::nn::tensor::Tensor;
use crate::quality::{build_report, feature_slices, FeatureRule, QualityReport};
use crate::volume::{SliceImage, SliceStack, Volume};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub depth: usize,
    pub batch_size: usize,
    pub d_steps_per_g: usize,
    pub adam: AdamConfig,
    pub total_g_steps: usize,
    /// `None` trains on full slices.
    pub crop_size: Option<usize>,
    pub seed: u64,
    pub weights: LossWeights,
    pub mse_form: MseForm,
    pub extractor_kind: ExtractorKind,
    pub extractor_weights: Option<PathBuf>,
    pub layer_counting: LayerCounting,
    pub checkpoint_every: usize,
    pub base_channels: usize,
    pub feature_rule: FeatureRule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            depth: 3,
            batch_size: 4,
            d_steps_per_g: 4,
            adam: AdamConfig::default(),
            total_g_steps: 8000,
            crop_size: Some(256),
            seed: 0,
            weights: LossWeights {
                lambda_d: 10.0,
                lambda_g: 1.0,
                lambda_p: 1.0,
                lambda_v: 1.0,
            },
            mse_form: MseForm::Sum,
            extractor_kind: ExtractorKind::GaussianPyramid,
            extractor_weights: None,
            layer_counting: LayerCounting::WeightLayers,
            checkpoint_every: 1000,
            base_channels: 8,
            feature_rule: FeatureRule::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.depth % 2 == 0 {
            return bad(format!("depth must be odd, got {}", self.depth));
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        if self.d_steps_per_g == 0 {
            return bad("d_steps_per_g must be >= 1".into());
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be >= 1".into());
        }
        if let Some(c) = self.crop_size {
            if c == 0 || c % SIZE_MULTIPLE != 0 {
                return bad(format!("crop size {c} is not a positive multiple of {SIZE_MULTIPLE}"));
            }
        }
        let a = &self.adam;
        if !(a.learning_rate > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return bad(format!("invalid ADAM settings {a:?}"));
        }
        self.weights.validate()
    }
}

/// A low-dose stack and its normal-dose center slice.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub stack: SliceStack,
    pub target: SliceImage,
}

fn check_pair_volumes(ld: &Volume, nd: &Volume) -> Result<()> {
    if ld.dims() != nd.dims() {
        return Err(Error::Shape(format!(
            "low-dose volume {:?} and normal-dose volume {:?} differ",
            ld.dims(),
            nd.dims()
        )));
    }
    Ok(())
}

pub fn make_training_pair(ld: &Volume, nd: &Volume, i: usize, d: usize) -> Result<TrainingPair> {
    check_pair_volumes(ld, nd)?;
    let stack = SliceStack::from_volume(ld, i, d)?;
    Ok(TrainingPair {
        stack,
        target: nd.slice_image(i),
    })
}

/// ADAM state for one parameter set; buffers are never updated.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    m: ParamSet<f32>,
    v: ParamSet<f32>,
}

impl Adam {
    pub fn new(config: AdamConfig, like: &ParamSet<f32>) -> Self {
        Adam {
            config,
            step: 0,
            m: like.zeros_like(),
            v: like.zeros_like(),
        }
    }

    pub fn update(&mut self, params: &mut ParamSet<f32>, grads: &ParamSet<f32>) {
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let (b1, b2, eps) = (c.beta1 as f32, c.beta2 as f32, c.epsilon as f32);
        let bias1 = (1.0 - c.beta1.powi(t)) as f32;
        let bias2 = (1.0 - c.beta2.powi(t)) as f32;
        let lr = c.learning_rate as f32;
        for (k, spec) in params.specs.iter().enumerate() {
            if !spec.trainable {
                continue;
            }
            let (p, g) = (&mut params.values[k], &grads.values[k]);
            let (m, v) = (&mut self.m.values[k], &mut self.v.values[k]);
            for j in 0..p.len() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                let mh = m[j] / bias1;
                let vh = v[j] / bias2;
                p[j] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    /// Mean over this step's critic updates.
    pub w_term: f64,
    pub gp_term: f64,
    pub adv: f64,
    pub mse: f64,
    pub vgg: f64,
    pub total_g: f64,
    /// Cumulative critic updates.
    pub d_updates: usize,
}

pub const METRICS_HEADER: &str = "step\tw_term\tgp_term\tadv\tmse\tvgg\ttotal_g\td_updates";

impl MetricsRow {
    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.step, self.w_term, self.gp_term, self.adv, self.mse, self.vgg, self.total_g, self.d_updates
        )
    }
}

pub fn metrics_tsv(rows: &[MetricsRow]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{}", r.to_tsv());
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub generator: GeneratorParams,
    pub discriminator: DiscriminatorParams,
    pub metrics: Vec<MetricsRow>,
    /// `(generator step, path)` of every checkpoint written.
    pub checkpoints: Vec<(usize, PathBuf)>,
    pub extractor_digest: String,
}

/// Batch sampler over feature-bearing slices.
struct Sampler<'a> {
    ld: &'a Volume,
    nd: &'a Volume,
    slices: Vec<usize>,
    depth: usize,
    crop: usize,
    rng: ChaCha8Rng,
}

impl Sampler<'_> {
    /// `(input [m, d, c, c], target [m, 1, c, c])` in normalized units.
    fn batch(&mut self, m: usize, offset: f32, scale: f32) -> (Tensor<f32>, Tensor<f32>) {
        let (_, h, w) = self.ld.dims();
        let c = self.crop;
        let mut stacks = Vec::with_capacity(m);
        let mut targets = Vec::with_capacity(m);
        for _ in 0..m {
            let i = self.slices[self.rng.random_range(0..self.slices.len())];
            let y0 = self.rng.random_range(0..=h - c);
            let x0 = self.rng.random_range(0..=w - c);
            let idx = crate::volume::stack_indices(i, self.depth, self.ld.depth());
            let stack: Array3<f32> = self
                .ld
                .data
                .select(Axis(0), &idx)
                .slice(s![.., y0..y0 + c, x0..x0 + c])
                .to_owned();
            let target = self
                .nd
                .data
                .slice(s![i..i + 1, y0..y0 + c, x0..x0 + c])
                .to_owned();
            stacks.push(stack);
            targets.push(target);
        }
        let refs: Vec<&Array3<f32>> = stacks.iter().collect();
        let trefs: Vec<&Array3<f32>> = targets.iter().collect();
        (
            stacks_to_tensor(&refs, offset, scale),
            stacks_to_tensor(&trefs, offset, scale),
        )
    }
}

/// Mean and inverse standard deviation of the normal-dose volume.
fn normalization(nd: &Volume) -> (f32, f32) {
    let n = nd.data.len() as f64;
    let mean = nd.data.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = nd.data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean as f32, if std > 0.0 { (1.0 / std) as f32 } else { 1.0 })
}

fn checkpoint_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("generator_step{step:06}.ckpt"))
}

/// Trains a generator on `(ld, nd)`. Checkpoints and `metrics.tsv` go to
/// `out_dir` when given.
pub fn train(ld: &Volume, nd: &Volume, config: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutput> {
    config.validate()?;
    check_pair_volumes(ld, nd)?;
    let extractor = FeatureExtractor::from_config(
        config.extractor_kind,
        config.extractor_weights.as_deref(),
        config.layer_counting,
    )?;
    let extractor_digest = extractor.digest();
    let (_, h, w) = ld.dims();
    let crop = config.crop_size.unwrap_or(h.min(w));
    if crop > h.min(w) || (config.crop_size.is_none() && (h % SIZE_MULTIPLE != 0 || w % SIZE_MULTIPLE != 0)) {
        return Err(Error::InvalidSpec(format!(
            "crop {crop} does not fit {h}x{w} slices in multiples of {SIZE_MULTIPLE}"
        )));
    }
    let slices = feature_slices(nd, config.feature_rule);
    if slices.is_empty() {
        return Err(Error::InvalidSpec("no feature-bearing slices to train on".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut g = build_generator(config.depth, config.base_channels, rng.random())?;
    let mut d = build_discriminator(rng.random());
    let (offset, scale) = normalization(nd);
    g.set_normalization(offset, scale);
    let mut sampler = Sampler {
        ld,
        nd,
        slices,
        depth: config.depth,
        crop,
        rng: ChaCha8Rng::seed_from_u64(rng.random()),
    };
    let mut g_opt = Adam::new(config.adam.clone(), &g.params);
    let mut d_opt = Adam::new(config.adam.clone(), &d.params);

    let mut log_file = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let p = dir.join("metrics.tsv");
            let mut f = std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
            writeln!(f, "{METRICS_HEADER}").map_err(|e| Error::io(&p, e))?;
            Some((f, p))
        }
        None => None,
    };
    let mut checkpoints = Vec::new();
    let mut save = |g: &GeneratorParams, step: usize, name: Option<&str>| -> Result<()> {
        if let Some(dir) = out_dir {
            let path = match name {
                Some(n) => dir.join(n),
                None => checkpoint_path(dir, step),
            };
            save_checkpoint(&path, &g.to_checkpoint().with_meta("step", step))?;
            checkpoints.push((step, path));
        }
        Ok(())
    };
    save(&g, 0, None)?;

    let weights = config.weights;
    let m = config.batch_size;
    let mut metrics = Vec::with_capacity(config.total_g_steps);
    let mut d_updates = 0usize;
    for step in 1..=config.total_g_steps {
        let (input, target) = sampler.batch(m, offset, scale);
        let fake = g.graph.forward_lean(&g.params, input.clone(), None).0;
        let (mut w_sum, mut gp_sum) = (0.0, 0.0);
        let abort = |e: Error, g: &GeneratorParams, save: &mut dyn FnMut(&GeneratorParams, usize, Option<&str>) -> Result<()>| {
            save(g, step - 1, Some("generator_last_good.ckpt"))?;
            Err::<TrainOutput, _>(e)
        };
        for _ in 0..config.d_steps_per_g {
            let mixed = MixedSample::draw(m, sampler.rng.random());
            let mut grads = d.params.zeros_like();
            let terms = match critic_objective(&d.graph, &d.params, &fake, &target, &mixed, weights.lambda_d, Some(&mut grads)) {
                Ok(t) => t,
                Err(e) => return abort(e, &g, &mut save),
            };
            if !grads.is_finite() {
                return abort(Error::NumericalFailure("critic gradient is not finite".into()), &g, &mut save);
            }
            d_opt.update(&mut d.params, &grads);
            d_updates += 1;
            w_sum += terms.wasserstein;
            gp_sum += terms.penalty;
        }
        let ctx = GeneratorContext {
            critic_graph: &d.graph,
            critic_params: &d.params,
            extractor: &extractor,
            weights,
            mse_form: config.mse_form,
        };
        let mut grads = g.params.zeros_like();
        let terms = match generator_objective(&g.graph, &g.params, &input, &target, &ctx, Some(&mut grads)) {
            Ok(t) => t,
            Err(e) => return abort(e, &g, &mut save),
        };
        if !grads.is_finite() {
            return abort(Error::NumericalFailure("generator gradient is not finite".into()), &g, &mut save);
        }
        g_opt.update(&mut g.params, &grads);

        let k = config.d_steps_per_g as f64;
        let row = MetricsRow {
            step,
            w_term: w_sum / k,
            gp_term: gp_sum / k,
            adv: terms.adv,
            mse: terms.mse,
            vgg: terms.vgg,
            total_g: terms.total,
            d_updates,
        };
        if let Some((f, p)) = log_file.as_mut() {
            writeln!(f, "{}", row.to_tsv()).map_err(|e| Error::io(p.as_path(), e))?;
        }
        if step % 25 == 0 || step == 1 {
            log::info!("step {step}: {}", row.to_tsv());
        }
        metrics.push(row);
        if step % config.checkpoint_every == 0 || step == config.total_g_steps {
            save(&g, step, None)?;
        }
    }
    if let Some(dir) = out_dir {
        save_checkpoint(&dir.join("discriminator_final.ckpt"), &d.to_checkpoint())?;
    }
    Ok(TrainOutput {
        generator: g,
        discriminator: d,
        metrics,
        checkpoints,
        extractor_digest,
    })
}

/// Mean absolute values of the adversarial, pixel and perceptual terms over
/// a short warm-up run, and weights that bring all three weighted terms to
/// the size of the pixel term.
pub fn calibrate_weights(ld: &Volume, nd: &Volume, config: &TrainConfig, warmup_steps: usize) -> Result<LossWeights> {
    let mut warm = config.clone();
    warm.total_g_steps = warmup_steps.max(1);
    let out = train(ld, nd, &warm, None)?;
    let n = out.metrics.len() as f64;
    let mean_abs = |f: fn(&MetricsRow) -> f64| out.metrics.iter().map(|r| f(r).abs()).sum::<f64>() / n;
    let (adv, mse, vgg) = (mean_abs(|r| r.adv), mean_abs(|r| r.mse), mean_abs(|r| r.vgg));
    let target = config.weights.lambda_p * mse;
    let ratio = |term: f64, current: f64| if term > 0.0 && current > 0.0 { target / term } else { current };
    Ok(LossWeights {
        lambda_d: config.weights.lambda_d,
        lambda_g: ratio(adv, config.weights.lambda_g),
        lambda_p: config.weights.lambda_p,
        lambda_v: ratio(vgg, config.weights.lambda_v),
    })
}

#[derive(Debug, Clone)]
pub struct DepthAblation {
    pub depths: Vec<usize>,
    pub reports: Vec<QualityReport>,
}

/// Trains one model per depth on the training pair and evaluates each on
/// the held-out pair, with the held-out normal-dose volume as reference.
pub fn ablate_depth(
    train_pair: (&Volume, &Volume),
    test_pair: (&Volume, &Volume),
    depths: &[usize],
    base: &TrainConfig,
) -> Result<DepthAblation> {
    let mut reports = Vec::with_capacity(depths.len());
    for &depth in depths {
        let config = TrainConfig { depth, ..base.clone() };
        config.validate()?;
        let out = train(train_pair.0, train_pair.1, &config, None)?;
        let dn = enhance_volume(&out.generator, test_pair.0, depth)?;
        reports.push(build_report(test_pair.1, test_pair.0, &dn, config.feature_rule)?);
    }
    Ok(DepthAblation {
        depths: depths.to_vec(),
        reports,
    })
}
