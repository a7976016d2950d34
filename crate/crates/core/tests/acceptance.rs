//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints one PASS/FAIL line; the process fails if any criterion
//! does.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use tomogan::enhance::enhance_volume;
use tomogan::io::checkpoint::{load_checkpoint, save_checkpoint};
use tomogan::io::config::Config;
use tomogan::losses::{
    adversarial_loss, critic_objective, generator_loss, generator_objective, pixel_mse, GeneratorContext,
    LossWeights, MixedSample, MseForm,
};
use tomogan::nn::discriminator::{build_discriminator, discriminator_graph};
use tomogan::nn::extractor::FeatureExtractor;
use tomogan::nn::generator::{build_generator, generator_forward, generator_graph, GeneratorParams};
use tomogan::nn::graph::{Graph, ParamSet};
use tomogan::nn::tensor::Tensor;
use tomogan::phantom::{analytic_disk, generate_foam_phantom, FoamSpec};
use tomogan::pipeline::{
    noisy_volume, project_volume, reconstruct_volume, rescaled_volume, subsample_volume, Method,
};
use tomogan::projector::{
    forward_project, photon_counts, uniform_angles, DoseSpec, ParallelBeam, Sinogram,
    SinogramKind,
};
use tomogan::quality::{build_report, FeatureRule, ReportSummary};
use tomogan::recon::{fbp, sirt, sirt_with_history, Filter};
use tomogan::stages::{replay, run_stage, StageRequest};
use tomogan::trainer::{train, AdamConfig, TrainConfig};
use tomogan::volume::{Provenance, SliceImage, SliceStack, Volume};

/// Desk-scale end-to-end settings.
const SIZE: usize = 128;
const VIEWS: usize = 512;
const SUBSAMPLE: usize = 16;
const I0: f64 = 500.0;
const G_STEPS: usize = 150;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(pass: bool, elapsed: Duration, limit_s: f64) -> bool {
    pass && elapsed.as_secs_f64() < limit_s
}

// 1
fn projector_chords() -> Outcome {
    let t0 = Instant::now();
    let (r, mu) = (80.0, 0.02);
    let disk = analytic_disk(r, mu as f32, 256).unwrap();
    let s = forward_project(disk.slice(0), &uniform_angles(360)).unwrap();
    let mut worst: f64 = 0.0;
    for a in 0..360 {
        for k in 0..256 {
            let t = k as f64 + 0.5 - 128.0;
            if t.abs() <= 0.9 * r {
                let exact = 2.0 * mu * (r * r - t * t).sqrt();
                worst = worst.max((s.data[[a, k]] as f64 - exact).abs() / exact);
            }
        }
    }
    let el = t0.elapsed();
    outcome(within(worst <= 0.01, el, 10.0), format!("max relative chord error {worst:.2e}, {el:.2?}"))
}

// 2
fn adjoint() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n_angles = rng.random_range(8..90);
        let mut angles: Vec<f64> = (0..n_angles).map(|_| rng.random_range(0.0..std::f64::consts::PI)).collect();
        angles.sort_by(f64::total_cmp);
        angles.dedup();
        let beam = ParallelBeam::new(64, angles).unwrap();
        let x: Vec<f64> = (0..64 * 64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..beam.n_rays()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut ax = vec![0.0; beam.n_rays()];
        let mut aty = vec![0.0; 64 * 64];
        beam.forward(&x, &mut ax);
        beam.adjoint(&y, &mut aty);
        let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
        let norm = ax.iter().map(|v| v * v).sum::<f64>().sqrt() * y.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max((lhs - rhs).abs() / norm);
    }
    let el = t0.elapsed();
    outcome(within(worst <= 1e-3, el, 5.0), format!("worst normalized gap {worst:.2e} over 20 instances, {el:.2?}"))
}

// 3
fn fbp_disk() -> Outcome {
    let t0 = Instant::now();
    let (r, mu) = (80.0, 0.02);
    let disk = analytic_disk(r, mu as f32, 256).unwrap();
    let s = forward_project(disk.slice(0), &uniform_angles(360)).unwrap();
    let img = fbp(&s, Filter::Ramp).unwrap();
    let (mut acc, mut count) = (0.0, 0usize);
    for ((i, j), &v) in img.data.indexed_iter() {
        let (y, x) = (i as f64 + 0.5 - 128.0, j as f64 + 0.5 - 128.0);
        if (x * x + y * y).sqrt() <= r - 2.0 {
            acc += (v as f64 - mu).powi(2);
            count += 1;
        }
    }
    let rel = (acc / count as f64).sqrt() / mu;
    let el = t0.elapsed();
    outcome(within(rel <= 0.05, el, 10.0), format!("interior RMSE {:.2}% of mu, {el:.2?}", rel * 100.0))
}

// 4
fn sirt_oracle() -> Outcome {
    let t0 = Instant::now();
    let n = 16;
    let img = analytic_disk(6.0, 1.0, n).unwrap().slice(0).to_owned();
    let angles = uniform_angles(24);
    let sino = forward_project(img.view(), &angles).unwrap();
    let beam = ParallelBeam::new(n, angles).unwrap();
    let rows = beam.dense_matrix();
    // Same unknowns as the solver: pixels inside the inscribed circle.
    let keep: Vec<usize> = (0..n * n)
        .filter(|&p| {
            let (y, x) = ((p / n) as f64 + 0.5 - 8.0, (p % n) as f64 + 0.5 - 8.0);
            x * x + y * y <= 64.0
        })
        .collect();
    let a = DMatrix::from_fn(rows.len(), keep.len(), |i, j| rows[i][keep[j]]);
    let b = DVector::from_iterator(rows.len(), sino.data.iter().map(|&v| v as f64));
    let sol = a.pseudo_inverse(1e-10).unwrap() * b;
    let mut oracle = DVector::zeros(n * n);
    for (k, &p) in keep.iter().enumerate() {
        oracle[p] = sol[k];
    }
    let out = sirt_with_history(&sino, 2000, false).unwrap();
    let x = DVector::from_iterator(n * n, out.image.data.iter().map(|&v| v as f64));
    let rel = (&x - &oracle).norm() / oracle.norm();
    let monotone = out.residuals.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-6));
    let el = t0.elapsed();
    outcome(
        within(rel <= 1e-2 && monotone, el, 60.0),
        format!("relative distance {rel:.2e}, residual monotone {monotone}, {el:.2?}"),
    )
}

// 5
fn noise_statistics() -> Outcome {
    let t0 = Instant::now();
    let p = 0.7;
    let mut parts = Vec::new();
    let mut pass = true;
    for (i0, seed) in [(100.0, 5u64), (10_000.0, 6)] {
        let sino = Sinogram::new(Array2::from_elem((1000, 1000), p as f32), uniform_angles(1000), SinogramKind::LineIntegral)
            .unwrap();
        let counts = photon_counts(&sino, &DoseSpec::new(i0, seed), 1.0, 0).unwrap();
        let n = counts.data.len() as f64;
        let mean = counts.data.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = counts.data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let expect = i0 * (-(p as f32) as f64).exp();
        let (em, ev) = ((mean / expect - 1.0).abs(), (var / expect - 1.0).abs());
        pass &= em <= 0.02 && ev <= 0.02;
        parts.push(format!("I0={i0}: mean {em:.2e}, var {ev:.2e} rel"));
    }
    let el = t0.elapsed();
    outcome(within(pass, el, 30.0), format!("{}, {el:.2?}", parts.join("; ")))
}

fn random_params(graph: &Graph, seed: u64, bias_scale: f64) -> ParamSet<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::<f64>::zeros(graph.specs.clone());
    for (spec, v) in p.specs.iter().zip(p.values.iter_mut()) {
        let std = if spec.shape.len() > 1 {
            (2.0 / spec.shape[1..].iter().product::<usize>() as f64).sqrt()
        } else {
            bias_scale
        };
        let n = Normal::new(0.0, std).unwrap();
        v.iter_mut().for_each(|x| *x = n.sample(&mut rng));
    }
    p
}

fn random_tensor(shape: [usize; 4], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Relative error of analytic against central-difference gradients on a
/// few coordinates of every tensor.
fn fd_error(p: &ParamSet<f64>, g: &ParamSet<f64>, seed: u64, f: impl Fn(&ParamSet<f64>) -> f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = p.clone();
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..p.values.len() {
        for _ in 0..3 {
            let j = rng.random_range(0..p.values[k].len());
            let x0 = q.values[k][j];
            q.values[k][j] = x0 + 1e-6;
            let up = f(&q);
            q.values[k][j] = x0 - 1e-6;
            let down = f(&q);
            q.values[k][j] = x0;
            let fd = (up - down) / 2e-6;
            num += (g.values[k][j] - fd).powi(2);
            den += fd * fd;
        }
    }
    (num / den).sqrt()
}

fn image(data: Array2<f32>) -> SliceImage {
    SliceImage::new(data, Provenance::Denoised, 0)
}

// 6
fn loss_suite() -> Outcome {
    let t0 = Instant::now();
    let mut notes = Vec::new();
    let mut pass = true;

    // Constant critic: zero input gradient, so the penalty is λ_D · (0 − 1)².
    let dg = discriminator_graph();
    let zero = ParamSet::<f64>::zeros(dg.specs.clone());
    let fake = random_tensor([2, 1, 16, 16], 1);
    let real = random_tensor([2, 1, 16, 16], 2);
    let terms = critic_objective(&dg, &zero, &fake, &real, &MixedSample::draw(2, 3), 10.0, None).unwrap();
    pass &= terms.total == 10.0 && terms.wasserstein == 0.0;
    notes.push(format!("constant-critic loss {}", terms.total));

    // Pixel loss closed forms.
    let a = image(Array2::from_elem((5, 6), 1.0));
    let b = image(Array2::from_elem((5, 6), 1.5));
    pass &= pixel_mse(&a, &b, MseForm::Sum).unwrap() == 7.5 && pixel_mse(&a, &b, MseForm::Mean).unwrap() == 0.25;

    // Adversarial term of a constant critic is minus that constant.
    let mut d = build_discriminator(0);
    d.params = d.params.zeros_like();
    d.params.get_mut("score.bias").unwrap()[0] = 0.75;
    let imgs = [image(Array2::from_elem((16, 16), 0.3)), image(Array2::from_elem((16, 16), -2.0))];
    pass &= adversarial_loss(&d, &imgs).unwrap() == -0.75;

    // Linearity of the combined generator loss.
    let w = LossWeights {
        lambda_d: 10.0,
        lambda_g: 0.5,
        lambda_p: 2.0,
        lambda_v: 3.0,
    };
    let l1 = generator_loss(1.0, 2.0, 3.0, &w).unwrap();
    let l2 = generator_loss(2.0, 4.0, 6.0, &w).unwrap();
    pass &= l1 == 0.5 + 4.0 + 9.0 && l2 == 2.0 * l1;

    // Gradients against central differences, f64, 16x16.
    let cp = random_params(&dg, 11, 0.1);
    let mixed = MixedSample::draw(2, 5);
    let mut cg = cp.zeros_like();
    critic_objective(&dg, &cp, &fake, &real, &mixed, 10.0, Some(&mut cg)).unwrap();
    let e_critic = fd_error(&cp, &cg, 3, |p| {
        critic_objective(&dg, p, &fake, &real, &mixed, 10.0, None).unwrap().total
    });
    let gg = generator_graph(3, 1);
    let gp = random_params(&gg, 12, 0.05);
    let input = random_tensor([2, 3, 16, 16], 13);
    let target = random_tensor([2, 1, 16, 16], 14);
    let ex = FeatureExtractor::gaussian_pyramid();
    let mut worst_g: f64 = 0.0;
    for (form, weights) in [
        (MseForm::Sum, LossWeights { lambda_g: 1.0, lambda_p: 0.0, lambda_v: 0.0, ..w }),
        (MseForm::Sum, LossWeights { lambda_g: 0.0, lambda_p: 1.0, lambda_v: 0.0, ..w }),
        (MseForm::Mean, LossWeights { lambda_g: 0.0, lambda_p: 1.0, lambda_v: 0.0, ..w }),
        (MseForm::Sum, LossWeights { lambda_g: 0.0, lambda_p: 0.0, lambda_v: 1.0, ..w }),
    ] {
        let ctx = GeneratorContext {
            critic_graph: &dg,
            critic_params: &cp,
            extractor: &ex,
            weights,
            mse_form: form,
        };
        let mut g = gp.zeros_like();
        generator_objective(&gg, &gp, &input, &target, &ctx, Some(&mut g)).unwrap();
        let e = fd_error(&gp, &g, 4, |p| generator_objective(&gg, p, &input, &target, &ctx, None).unwrap().total);
        worst_g = worst_g.max(e);
    }
    pass &= e_critic < 1e-3 && worst_g < 1e-3;
    notes.push(format!("critic FD {e_critic:.1e}, generator FD {worst_g:.1e}"));
    let el = t0.elapsed();
    outcome(within(pass, el, 120.0), format!("{}, {el:.2?}", notes.join(", ")))
}

// 7
fn architecture() -> Outcome {
    let t0 = Instant::now();
    let mut pass = true;
    let mut notes = Vec::new();
    let g = build_generator(3, 8, 1).unwrap();
    for n in [128, 256, 1024] {
        let data = Array3::from_shape_fn((3, n, n), |(c, y, x)| ((c * 7 + y * 3 + x) % 11) as f32 * 0.01);
        let out = generator_forward(&g, &SliceStack::new(data, 1).unwrap()).unwrap();
        pass &= out.dims() == (n, n);
        drop(out);
    }
    notes.push("generator 128/256/1024 shapes kept".to_string());
    let shapes = g.graph.infer_shapes([3, 256, 256]);
    let b = g.graph.node_index("bottleneck").unwrap();
    pass &= shapes[b] == [128, 32, 32];
    notes.push(format!("bottleneck {:?} at 256", shapes[b]));

    let dshapes = discriminator_graph().infer_shapes([1, 256, 256]);
    let table: Vec<[usize; 3]> = dshapes[1..7].to_vec();
    pass &= table
        == [
            [64, 256, 256],
            [64, 128, 128],
            [128, 128, 128],
            [128, 64, 64],
            [256, 64, 64],
            [4, 32, 32],
        ];
    pass &= *dshapes.last().unwrap() == [1, 1, 1];

    let dir = tempfile::tempdir().unwrap();
    let p1 = dir.path().join("a.ckpt");
    let p2 = dir.path().join("b.ckpt");
    save_checkpoint(&p1, &g.to_checkpoint()).unwrap();
    let back = GeneratorParams::from_checkpoint(load_checkpoint(&p1).unwrap()).unwrap();
    save_checkpoint(&p2, &back.to_checkpoint()).unwrap();
    let same = std::fs::read(&p1).unwrap() == std::fs::read(&p2).unwrap() && back.params == g.params;
    pass &= same;
    notes.push(format!("checkpoint round trip bitwise {same}"));
    let el = t0.elapsed();
    outcome(within(pass, el, 60.0), format!("{}, {el:.2?}", notes.join(", ")))
}

/// Low-dose and normal-dose reconstructions of one foam phantom.
fn desk_pair(seed: u64, noise: bool) -> (Volume, Volume, Vec<Sinogram>) {
    let gt = generate_foam_phantom(&FoamSpec::scaled(seed, SIZE)).unwrap();
    let full = project_volume(&gt, VIEWS).unwrap();
    let fbp = Method::Fbp(Filter::Ramp);
    if noise {
        let (noisy, k) = noisy_volume(&full, &DoseSpec::new(I0, seed + 100)).unwrap();
        let clean = rescaled_volume(&full, k).unwrap();
        let nd = reconstruct_volume(&clean, fbp, Provenance::GroundTruth).unwrap();
        let ld = reconstruct_volume(&noisy, fbp, Provenance::LowDose).unwrap();
        (ld, nd, noisy)
    } else {
        let sparse = subsample_volume(&full, SUBSAMPLE).unwrap();
        let nd = reconstruct_volume(&full, fbp, Provenance::GroundTruth).unwrap();
        let ld = reconstruct_volume(&sparse, fbp, Provenance::LowDose).unwrap();
        (ld, nd, sparse)
    }
}

fn desk_config() -> TrainConfig {
    TrainConfig {
        depth: 3,
        batch_size: 4,
        d_steps_per_g: 4,
        adam: AdamConfig {
            learning_rate: 1e-3,
            ..AdamConfig::default()
        },
        total_g_steps: G_STEPS,
        crop_size: Some(64),
        seed: 7,
        weights: LossWeights {
            lambda_d: 10.0,
            lambda_g: 1e-4,
            lambda_p: 1.0,
            lambda_v: 0.0,
        },
        mse_form: MseForm::Mean,
        checkpoint_every: G_STEPS,
        ..TrainConfig::default()
    }
}

struct EndToEnd {
    summary: ReportSummary,
    generator: GeneratorParams,
    test_sinograms: Vec<Sinogram>,
    train_time: Duration,
}

fn end_to_end(noise: bool) -> EndToEnd {
    let (ld, nd, _) = desk_pair(1, noise);
    let (ld_test, nd_test, test_sinograms) = desk_pair(2, noise);
    let t0 = Instant::now();
    let out = train(&ld, &nd, &desk_config(), None).unwrap();
    let train_time = t0.elapsed();
    let dn = enhance_volume(&out.generator, &ld_test, 3).unwrap();
    let report = build_report(&nd_test, &ld_test, &dn, FeatureRule::default()).unwrap();
    EndToEnd {
        summary: report.summary,
        generator: out.generator,
        test_sinograms,
        train_time,
    }
}

fn judge(e: &EndToEnd, elapsed: Duration) -> Outcome {
    let s = &e.summary;
    let gain = s.ssim_dn.median - s.ssim_ld.median;
    let pass = gain >= 0.15 && s.improved_fraction >= 0.95 && elapsed.as_secs_f64() <= 8.0 * 3600.0;
    outcome(
        pass,
        format!(
            "median SSIM LD {:.3} -> DN {:.3} (gain {gain:+.3}), improved on {:.1}% of {} slices, PSNR {:.1} -> {:.1} dB, training {:.0?}, total {:.0?}",
            s.ssim_ld.median,
            s.ssim_dn.median,
            s.improved_fraction * 100.0,
            s.slices,
            s.psnr_ld.median,
            s.psnr_dn.median,
            e.train_time,
            elapsed
        ),
    )
}

// 10
fn timing_order(g: &GeneratorParams, sinos: &[Sinogram]) -> Outcome {
    let picks = [SIZE / 4, SIZE / 2, 3 * SIZE / 4];
    let (mut t_sirt, mut t_fast) = (Duration::ZERO, Duration::ZERO);
    let mut ld_slices = Vec::new();
    for &i in &picks {
        let t0 = Instant::now();
        sirt(&sinos[i], 400, false).unwrap();
        t_sirt += t0.elapsed();
        let t0 = Instant::now();
        ld_slices.push(fbp(&sinos[i], Filter::Ramp).unwrap());
        t_fast += t0.elapsed();
    }
    // Each enhanced slice needs its neighbours reconstructed too, which the
    // FBP timing above covers once per slice in a volume run.
    for (k, img) in ld_slices.iter().enumerate() {
        let data = Array3::from_shape_fn((3, SIZE, SIZE), |(_, y, x)| img.data[[y, x]]);
        let t0 = Instant::now();
        generator_forward(g, &SliceStack::new(data, picks[k]).unwrap()).unwrap();
        t_fast += t0.elapsed();
    }
    let n = picks.len() as u32;
    outcome(
        t_sirt > t_fast,
        format!(
            "per slice at {SIZE}x{SIZE}: SIRT(400) {:.0?}, FBP + enhance {:.0?}",
            t_sirt / n,
            t_fast / n
        ),
    )
}

// 11
fn reproducibility() -> Outcome {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let req = |stage: &str, entries: &str, inputs: &[(&str, &Path)]| StageRequest {
        stage: stage.into(),
        config: Config::parse(entries, "acceptance").unwrap(),
        inputs: inputs.iter().map(|(k, p)| (k.to_string(), p.to_path_buf())).collect::<BTreeMap<_, _>>(),
        out_dir: run.clone(),
    };
    let f = |n: &str| run.join(n);
    let steps = [
        req("simulate", "simulate.size: int = 32\nsimulate.seed: int = 3\nsimulate.n_angles: int = 64", &[]),
        req(
            "degrade",
            "degrade.factor: int = 4\ndegrade.i0: float = 1000\ndegrade.seed: int = 9",
            &[("sino", &f("sino.h5"))],
        ),
        req(
            "reconstruct",
            "reconstruct.method: str = fbp\nreconstruct.filter: str = ramp\nreconstruct.output: str = ld",
            &[("sino", &f("sino_ld.h5"))],
        ),
        req(
            "reconstruct",
            "reconstruct.method: str = sirt\nreconstruct.iterations: int = 20\nreconstruct.output: str = nd\nreconstruct.provenance: str = ground_truth",
            &[("sino", &f("sino_nd.h5"))],
        ),
        req(
            "train",
            "train.depth: int = 3\ntrain.batch_size: int = 2\ntrain.d_steps_per_g: int = 2\ntrain.lambda_d: float = 10\n\
             train.lambda_g: float = 0.1\ntrain.lambda_p: float = 1\ntrain.lambda_v: float = 0.1\n\
             train.learning_rate: float = 1e-4\ntrain.total_g_steps: int = 3\ntrain.seed: int = 4\n\
             train.crop_size: int = 16\ntrain.base_channels: int = 2",
            &[("ld", &f("ld.h5")), ("nd", &f("nd.h5"))],
        ),
        req(
            "enhance",
            "enhance.depth: int = 3",
            &[("checkpoint", &f("generator_final.ckpt")), ("ld", &f("ld.h5"))],
        ),
        req("evaluate", "", &[("gt", &f("nd.h5")), ("ld", &f("ld.h5")), ("dn", &f("dn.h5"))]),
        req("plot", "", &[("report", &f("report.tsv")), ("metrics", &f("metrics.tsv"))]),
    ];
    let mut n_outputs = 0;
    for r in &steps {
        n_outputs += run_stage(r).unwrap().outputs.len();
    }
    let checks = replay(&run.join("manifest.json"), &dir.path().join("replayed"), None).unwrap();
    let bad: Vec<String> = checks
        .iter()
        .flat_map(|c| c.mismatched.iter().map(move |m| format!("{}:{m}", c.stage)))
        .collect();
    let el = t0.elapsed();
    outcome(
        bad.is_empty() && checks.len() == steps.len(),
        format!(
            "{} stages, {n_outputs} outputs replayed, mismatches [{}], {el:.2?}",
            checks.len(),
            bad.join(", ")
        ),
    )
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        }
    }
}

fn main() {
    // `cargo test -- --list` style probes from the test runner.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let wanted = |k: usize| only.as_ref().is_none_or(|o| o.contains(&k));
    let mut failures = 0;
    let mut report = |k: usize, name: &str, o: Outcome| {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failures += 1;
        }
        println!("criterion {k:>2} {tag} {name}: {}", o.detail);
    };

    let simple: [(usize, &str, fn() -> Outcome); 7] = [
        (1, "projector chord lengths", projector_chords),
        (2, "projector adjoint", adjoint),
        (3, "fbp disk accuracy", fbp_disk),
        (4, "sirt against dense least squares", sirt_oracle),
        (5, "photon noise statistics", noise_statistics),
        (6, "loss suite", loss_suite),
        (7, "architecture suite", architecture),
    ];
    for (k, name, f) in simple {
        if wanted(k) {
            report(k, name, guarded(f));
        }
    }

    let mut sparse_run = None;
    if wanted(8) || wanted(10) {
        let t0 = Instant::now();
        match catch_unwind(|| end_to_end(false)) {
            Ok(e) => {
                if wanted(8) {
                    report(8, "desk-scale denoising, 32 of 512 views", judge(&e, t0.elapsed()));
                }
                sparse_run = Some(e);
            }
            Err(_) => report(8, "desk-scale denoising, 32 of 512 views", outcome(false, "panicked")),
        }
    }
    if wanted(9) {
        let t0 = Instant::now();
        let o = guarded(|| {
            let e = end_to_end(true);
            judge(&e, t0.elapsed())
        });
        report(9, "desk-scale denoising, I0 = 500", o);
    }
    if wanted(10) {
        let o = match &sparse_run {
            Some(e) => guarded(|| timing_order(&e.generator, &e.test_sinograms)),
            None => outcome(false, "no trained generator"),
        };
        report(10, "SIRT(400) slower than FBP + enhance", o);
    }
    if wanted(11) {
        report(11, "manifest replay reproduces digests", guarded(reproducibility));
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
