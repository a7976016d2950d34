//! Critic and generator objectives with their parameter gradients.
//!
//! The tensor-level functions work on batches `[m, 1, h, w]` in whatever
//! units the caller feeds the networks (the trainer uses normalized units).
//! The image-level wrappers score images exactly as given.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::discriminator::{score_batch, DiscriminatorParams};
use crate::nn::extractor::FeatureExtractor;
use crate::nn::generator::{generator_forward, GeneratorParams};
use crate::nn::graph::{Graph, ParamSet};
use crate::nn::tensor::{Real, Tensor};
use crate::trainer::TrainingPair;
use crate::volume::SliceImage;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Gradient-penalty weight.
    pub lambda_d: f64,
    /// Adversarial term.
    pub lambda_g: f64,
    /// Pixel MSE term.
    pub lambda_p: f64,
    /// Perceptual term.
    pub lambda_v: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_d", self.lambda_d),
            ("lambda_g", self.lambda_g),
            ("lambda_p", self.lambda_p),
            ("lambda_v", self.lambda_v),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidSpec(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Pixel loss normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MseForm {
    /// Sum of squared differences over the image.
    #[default]
    Sum,
    /// Mean over pixels.
    Mean,
}

impl MseForm {
    pub fn as_str(self) -> &'static str {
        match self {
            MseForm::Sum => "sum",
            MseForm::Mean => "mean",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(MseForm::Sum),
            "mean" => Ok(MseForm::Mean),
            _ => Err(Error::Lookup {
                tag: s.into(),
                valid: vec!["sum".into(), "mean".into()],
            }),
        }
    }
}

/// Per-item interpolation weights for the gradient penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedSample {
    pub epsilon: Vec<f64>,
}

impl MixedSample {
    pub fn draw(m: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MixedSample {
            epsilon: (0..m).map(|_| rng.random::<f64>()).collect(),
        }
    }

    /// `eps_i · fake_i + (1 − eps_i) · real_i`.
    pub fn mix<T: Real>(&self, fake: &Tensor<T>, real: &Tensor<T>) -> Tensor<T> {
        assert_eq!(fake.shape(), real.shape());
        let mut out = fake.clone();
        for (i, &e) in self.epsilon.iter().enumerate() {
            let (e, f) = (T::of(e), T::of(1.0 - e));
            for (o, &r) in out.item_mut(i).iter_mut().zip(real.item(i)) {
                *o = e * *o + f * r;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticTerms {
    /// `mean D(fake) − mean D(real)`.
    pub wasserstein: f64,
    /// `mean (‖∇D(mixed)‖ − 1)²`, before weighting.
    pub penalty: f64,
    /// `wasserstein + lambda_d · penalty`.
    pub total: f64,
    pub grad_norms: Vec<f64>,
    pub epsilon: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorTerms {
    pub adv: f64,
    pub mse: f64,
    pub vgg: f64,
    pub total: f64,
}

fn finite(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NumericalFailure(format!("{name} term is {v}")))
    }
}

fn mean<T: Real>(v: &[T]) -> f64 {
    v.iter().map(|x| x.as_f64()).sum::<f64>() / v.len() as f64
}

/// Input gradient of the summed critic scores, with the tape of the forward.
fn critic_input_grad<T: Real>(
    graph: &Graph,
    params: &ParamSet<T>,
    x: &Tensor<T>,
) -> (crate::nn::graph::Tape<T>, Tensor<T>) {
    let tape = graph.forward(params, x.clone());
    let m = x.batch();
    let mut scratch = params.zeros_like();
    let ones = Tensor::from_vec([m, 1, 1, 1], vec![T::one(); m]);
    let g = graph
        .backward(params, &tape, None, ones, &mut scratch, false, true)
        .expect("input gradient requested");
    (tape, g)
}

/// Critic objective with gradient penalty; accumulates parameter gradients
/// into `grads` when given.
pub fn critic_objective<T: Real>(
    graph: &Graph,
    params: &ParamSet<T>,
    fake: &Tensor<T>,
    real: &Tensor<T>,
    mixed: &MixedSample,
    lambda_d: f64,
    mut grads: Option<&mut ParamSet<T>>,
) -> Result<CriticTerms> {
    let m = fake.batch();
    if m == 0 || real.shape() != fake.shape() || mixed.epsilon.len() != m {
        return Err(Error::Shape(format!(
            "critic batch mismatch: fake {:?}, real {:?}, {} epsilons",
            fake.shape(),
            real.shape(),
            mixed.epsilon.len()
        )));
    }
    let inv_m = 1.0 / m as f64;
    let fill = |v: f64| Tensor::from_vec([m, 1, 1, 1], vec![T::of(v); m]);

    let tape_f = graph.forward(params, fake.clone());
    let tape_r = graph.forward(params, real.clone());
    let w_fake = finite("critic score (generated)", mean(tape_f.output().data()))?;
    let w_real = finite("critic score (ground truth)", mean(tape_r.output().data()))?;
    if let Some(g) = grads.as_deref_mut() {
        graph.backward(params, &tape_f, None, fill(inv_m), g, true, false);
        graph.backward(params, &tape_r, None, fill(-inv_m), g, true, false);
    }
    drop((tape_f, tape_r));

    let x = mixed.mix(fake, real);
    let (tape_m, gx) = critic_input_grad(graph, params, &x);
    let mut norms = Vec::with_capacity(m);
    let mut penalty = 0.0;
    for i in 0..m {
        let n = gx.item(i).iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
        penalty += (n - 1.0).powi(2) * inv_m;
        norms.push(n);
    }
    let penalty = finite("gradient penalty", penalty)?;

    if let Some(g) = grads {
        if lambda_d > 0.0 {
            // d/dθ (‖g‖ − 1)² = v · ∂g/∂θ with v = 2(‖g‖ − 1) g/‖g‖, and
            // v · g(θ) is the critic's directional derivative along v, so
            // differentiate its tangent network.
            let mut v = gx;
            for (i, &n) in norms.iter().enumerate() {
                let c = if n > 0.0 {
                    lambda_d * inv_m * 2.0 * (n - 1.0) / n
                } else {
                    0.0
                };
                let c = T::of(c);
                v.item_mut(i).iter_mut().for_each(|e| *e = *e * c);
            }
            let tan = graph.tangent(params, &tape_m, v);
            graph.backward(params, &tape_m, Some(&tan), fill(1.0), g, false, false);
        }
    }
    let wasserstein = w_fake - w_real;
    Ok(CriticTerms {
        wasserstein,
        penalty,
        total: wasserstein + lambda_d * penalty,
        grad_norms: norms,
        epsilon: mixed.epsilon.clone(),
    })
}

fn pixel_terms<T: Real>(fake: &Tensor<T>, target: &Tensor<T>, form: MseForm) -> (f64, Tensor<T>) {
    let m = fake.batch();
    let norm = match form {
        MseForm::Sum => 1.0,
        MseForm::Mean => 1.0 / fake.plane_len() as f64,
    } / m as f64;
    let mut loss = 0.0;
    let mut grad = fake.clone();
    for (g, &t) in grad.data_mut().iter_mut().zip(target.data()) {
        let d = *g - t;
        loss += d.as_f64().powi(2);
        *g = d * T::of(2.0 * norm);
    }
    (loss * norm, grad)
}

/// `(1/m) Σ_items Σ (F(a) − F(b))²` and its gradient with respect to `a`.
fn perceptual_terms<T: Real>(
    extractor: &FeatureExtractor,
    fake: &Tensor<T>,
    target: &Tensor<T>,
    want_grad: bool,
) -> (f64, Option<Tensor<T>>) {
    let m = fake.batch() as f64;
    let ft = extractor.features(target);
    let mut loss = 0.0;
    let diff = |f: &Tensor<T>, loss: &mut f64| {
        let mut d = f.clone();
        for (x, &y) in d.data_mut().iter_mut().zip(ft.data()) {
            let e = *x - y;
            *loss += e.as_f64().powi(2);
            *x = e * T::of(2.0 / m);
        }
        d
    };
    if want_grad {
        let (_, g) = extractor.features_vjp(fake, |f| diff(f, &mut loss));
        (loss / m, Some(g))
    } else {
        let f = extractor.features(fake);
        diff(&f, &mut loss);
        (loss / m, None)
    }
}

/// Everything the generator objective needs besides its own parameters.
pub struct GeneratorContext<'a, T> {
    pub critic_graph: &'a Graph,
    pub critic_params: &'a ParamSet<T>,
    pub extractor: &'a FeatureExtractor,
    pub weights: LossWeights,
    pub mse_form: MseForm,
}

/// Weighted generator objective on one batch. `input` is `[m, d, h, w]`,
/// `target` `[m, 1, h, w]`. Accumulates gradients into `grads` when given.
pub fn generator_objective<T: Real>(
    graph: &Graph,
    params: &ParamSet<T>,
    input: &Tensor<T>,
    target: &Tensor<T>,
    ctx: &GeneratorContext<'_, T>,
    grads: Option<&mut ParamSet<T>>,
) -> Result<GeneratorTerms> {
    let w = ctx.weights;
    let tape = graph.forward(params, input.clone());
    let fake = tape.output();
    if fake.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "generated batch {:?} vs target {:?}",
            fake.shape(),
            target.shape()
        )));
    }
    let want = grads.is_some();
    let m = fake.batch() as f64;

    let (adv, adv_grad) = if want && w.lambda_g > 0.0 {
        let (tape_d, g) = critic_input_grad(ctx.critic_graph, ctx.critic_params, fake);
        (-mean(tape_d.output().data()), Some(g))
    } else {
        let s = score_batch(ctx.critic_graph, ctx.critic_params, fake.clone());
        (-mean(&s), None)
    };
    let adv = finite("adversarial", adv)?;
    let (mse, mse_grad) = pixel_terms(fake, target, ctx.mse_form);
    let mse = finite("pixel mse", mse)?;
    let (vgg, vgg_grad) = perceptual_terms(ctx.extractor, fake, target, want && w.lambda_v > 0.0);
    let vgg = finite("perceptual", vgg)?;
    let total = finite(
        "generator total",
        w.lambda_g * adv + w.lambda_p * mse + w.lambda_v * vgg,
    )?;

    if let Some(grads) = grads {
        let mut dfake = Tensor::zeros(fake.shape());
        if let Some(g) = adv_grad {
            let c = T::of(-w.lambda_g / m);
            for (d, &v) in dfake.data_mut().iter_mut().zip(g.data()) {
                *d += c * v;
            }
        }
        if w.lambda_p > 0.0 {
            let c = T::of(w.lambda_p);
            for (d, &v) in dfake.data_mut().iter_mut().zip(mse_grad.data()) {
                *d += c * v;
            }
        }
        if let Some(g) = vgg_grad {
            let c = T::of(w.lambda_v);
            for (d, &v) in dfake.data_mut().iter_mut().zip(g.data()) {
                *d += c * v;
            }
        }
        graph.backward(params, &tape, None, dfake, grads, true, false);
    }
    Ok(GeneratorTerms { adv, mse, vgg, total })
}

fn image_tensor(images: &[&SliceImage]) -> Result<Tensor<f32>> {
    let first = images
        .first()
        .ok_or_else(|| Error::Shape("empty minibatch".into()))?;
    let (h, w) = first.dims();
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if img.dims() != (h, w) {
            return Err(Error::Shape(format!(
                "minibatch images differ in size: {:?} vs {:?}",
                img.dims(),
                (h, w)
            )));
        }
        data.extend(img.data.iter().copied());
    }
    Ok(Tensor::from_vec([images.len(), 1, h, w], data))
}

fn check_same_dims(a: &SliceImage, b: &SliceImage) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "image dims differ: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Critic loss on a minibatch of training pairs, generating fakes with `g`.
pub fn discriminator_loss(
    d: &DiscriminatorParams,
    batch: &[TrainingPair],
    g: &GeneratorParams,
    weights: &LossWeights,
    seed: u64,
) -> Result<CriticTerms> {
    weights.validate()?;
    let fakes = batch
        .iter()
        .map(|p| generator_forward(g, &p.stack))
        .collect::<Result<Vec<_>>>()?;
    let fake = image_tensor(&fakes.iter().collect::<Vec<_>>())?;
    let real = image_tensor(&batch.iter().map(|p| &p.target).collect::<Vec<_>>())?;
    let mixed = MixedSample::draw(batch.len(), seed);
    critic_objective(&d.graph, &d.params, &fake, &real, &mixed, weights.lambda_d, None)
}

/// `−(1/m) Σ D(image)`.
pub fn adversarial_loss(d: &DiscriminatorParams, generated: &[SliceImage]) -> Result<f64> {
    let t = image_tensor(&generated.iter().collect::<Vec<_>>())?;
    let scores = score_batch(&d.graph, &d.params, t);
    finite("adversarial", -mean(&scores))
}

pub fn perceptual_loss(
    extractor: &FeatureExtractor,
    denoised: &SliceImage,
    target: &SliceImage,
) -> Result<f64> {
    check_same_dims(denoised, target)?;
    let a = extractor.feature_extract(denoised)?;
    let b = extractor.feature_extract(target)?;
    let s: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    finite("perceptual", s)
}

pub fn pixel_mse(denoised: &SliceImage, target: &SliceImage, form: MseForm) -> Result<f64> {
    check_same_dims(denoised, target)?;
    let s: f64 = denoised
        .data
        .iter()
        .zip(target.data.iter())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    let s = match form {
        MseForm::Sum => s,
        MseForm::Mean => s / denoised.data.len() as f64,
    };
    finite("pixel mse", s)
}

pub fn generator_loss(adv: f64, mse: f64, vgg: f64, weights: &LossWeights) -> Result<f64> {
    for (name, v) in [("adversarial", adv), ("pixel mse", mse), ("perceptual", vgg)] {
        finite(name, v)?;
    }
    weights.validate()?;
    Ok(weights.lambda_g * adv + weights.lambda_p * mse + weights.lambda_v * vgg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Provenance;
    use ndarray::Array2;

    fn img(data: Array2<f32>) -> SliceImage {
        SliceImage::new(data, Provenance::Denoised, 0)
    }

    #[test]
    fn pixel_mse_closed_forms() {
        let a = img(Array2::from_elem((6, 5), 1.0));
        let b = img(Array2::from_elem((6, 5), 1.5));
        assert!((pixel_mse(&a, &b, MseForm::Sum).unwrap() - 30.0 * 0.25).abs() < 1e-9);
        assert!((pixel_mse(&a, &b, MseForm::Mean).unwrap() - 0.25).abs() < 1e-9);
        assert_eq!(pixel_mse(&a, &a, MseForm::Sum).unwrap(), 0.0);
        let mut c = a.clone();
        c.data[[2, 3]] = 1.25;
        assert!((pixel_mse(&a, &c, MseForm::Sum).unwrap() - 0.0625).abs() < 1e-12);
        assert_eq!(pixel_mse(&a, &c, MseForm::Sum).unwrap(), pixel_mse(&c, &a, MseForm::Sum).unwrap());
        let small = img(Array2::zeros((2, 2)));
        assert!(matches!(pixel_mse(&a, &small, MseForm::Sum), Err(Error::Shape(_))));
    }

    #[test]
    fn perceptual_with_identity_collapses_to_mse() {
        let ex = FeatureExtractor::identity();
        let a = img(Array2::from_shape_fn((4, 4), |(y, x)| (y * x) as f32 * 0.1));
        let b = img(Array2::from_shape_fn((4, 4), |(y, x)| (y + x) as f32 * 0.1));
        let p = perceptual_loss(&ex, &a, &b).unwrap();
        assert!((p - pixel_mse(&a, &b, MseForm::Sum).unwrap()).abs() < 1e-9);
        assert_eq!(perceptual_loss(&ex, &a, &a).unwrap(), 0.0);
        // 2x2 features differing by 1 in one cell.
        let c = img(Array2::zeros((2, 2)));
        let mut d = c.clone();
        d.data[[1, 0]] = 1.0;
        assert_eq!(perceptual_loss(&ex, &c, &d).unwrap(), 1.0);
    }

    #[test]
    fn generator_loss_is_linear() {
        let w = LossWeights {
            lambda_d: 10.0,
            lambda_g: 1.0,
            lambda_p: 1.0,
            lambda_v: 1.0,
        };
        assert_eq!(generator_loss(1.0, 2.0, 3.0, &w).unwrap(), 6.0);
        let w2 = LossWeights {
            lambda_g: 2.0,
            lambda_p: 2.0,
            lambda_v: 2.0,
            ..w
        };
        assert_eq!(generator_loss(1.0, 2.0, 3.0, &w2).unwrap(), 12.0);
        let zero = LossWeights {
            lambda_g: 0.0,
            lambda_p: 0.0,
            lambda_v: 0.0,
            ..w
        };
        assert_eq!(generator_loss(1.0, 2.0, 3.0, &zero).unwrap(), 0.0);
        assert!(generator_loss(f64::NAN, 0.0, 0.0, &w).is_err());
        assert!(LossWeights { lambda_p: -1.0, ..w }.validate().is_err());
    }

    #[test]
    fn epsilon_endpoint_gives_generated_image() {
        let fake = Tensor::from_vec([1, 1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0]);
        let real = Tensor::from_vec([1, 1, 2, 2], vec![9.0f64; 4]);
        let mix = MixedSample { epsilon: vec![1.0] };
        assert_eq!(mix.mix(&fake, &real), fake);
        let draw = MixedSample::draw(4, 7);
        assert_eq!(draw, MixedSample::draw(4, 7));
        assert!(draw.epsilon.iter().all(|e| (0.0..1.0).contains(e)));
        assert!(draw.epsilon.windows(2).any(|w| w[0] != w[1]));
    }
}
