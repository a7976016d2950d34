//! Pipeline stages as file-to-file operations, each recorded in the output
//! directory's manifest so it can be replayed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::enhance::enhance_volume_with;
use crate::error::{Error, Result};
use crate::io::checkpoint::{load_checkpoint, save_checkpoint};
use crate::io::config::Config;
use crate::io::manifest::{DirLock, FileRecord, RunManifest, StageRecord, MANIFEST_FILE};
use crate::io::volume_file::{
    file_digest, load_sinograms, load_volume, save_sinograms, save_volume, AttrValue, Attrs,
};
use crate::losses::{LossWeights, MseForm};
use crate::nn::extractor::{ExtractorKind, LayerCounting};
use crate::nn::generator::{extract_feature_maps, GeneratorParams};
use crate::phantom::{generate_foam_phantom, FoamSpec};
use crate::pipeline::{noisy_volume, project_volume, reconstruct_volume, rescaled_volume, subsample_volume, Method};
use crate::plot::{box_plot_svg, line_plot_svg, Table};
use crate::projector::DoseSpec;
use crate::quality::{build_report, FeatureRule};
use crate::recon::Filter;
use crate::trainer::{train, AdamConfig, TrainConfig};
use crate::volume::{Provenance, SliceStack, Volume};

pub const STAGES: [&str; 8] = [
    "simulate",
    "degrade",
    "reconstruct",
    "train",
    "enhance",
    "evaluate",
    "inspect",
    "plot",
];

/// Input roles per stage: `(role, required)`.
pub fn input_roles(stage: &str) -> &'static [(&'static str, bool)] {
    match stage {
        "degrade" | "reconstruct" => &[("sino", true)],
        "train" => &[("ld", true), ("nd", true), ("extractor_weights", false)],
        "enhance" | "inspect" => &[("checkpoint", true), ("ld", true)],
        "evaluate" => &[("gt", true), ("ld", true), ("dn", true)],
        "plot" => &[("report", false), ("summary", false), ("metrics", false)],
        _ => &[],
    }
}

#[derive(Debug, Clone)]
pub struct StageRequest {
    pub stage: String,
    /// Merged file and command-line entries; other stages' keys are ignored.
    pub config: Config,
    pub inputs: BTreeMap<String, PathBuf>,
    pub out_dir: PathBuf,
}

/// Files written by one stage and the seeds it consumed.
struct Produced {
    files: Vec<String>,
    seeds: BTreeMap<String, u64>,
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(|e| Error::io(p, e))
}

fn check_inputs(req: &StageRequest) -> Result<()> {
    let roles = input_roles(&req.stage);
    for role in req.inputs.keys() {
        if !roles.iter().any(|(r, _)| r == role) {
            return Err(Error::Usage(format!("{} does not take a `{role}` input", req.stage)));
        }
    }
    for (role, required) in roles {
        match req.inputs.get(*role) {
            Some(p) if !p.is_file() => {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
                ))
            }
            None if *required => return Err(Error::Usage(format!("{} needs --{role}", req.stage))),
            _ => {}
        }
    }
    Ok(())
}

/// Runs one stage under the output directory lock and appends its record to
/// the directory's manifest.
pub fn run_stage(req: &StageRequest) -> Result<StageRecord> {
    let config = req.config.resolve(&req.stage)?;
    check_inputs(req)?;
    let _lock = DirLock::acquire(&req.out_dir)?;
    let out_dir = absolute(&req.out_dir)?;
    let mut inputs = BTreeMap::new();
    for (role, p) in &req.inputs {
        let path = absolute(p)?;
        let sha256 = file_digest(&path)?;
        inputs.insert(role.clone(), FileRecord { path, sha256 });
    }
    let start = Instant::now();
    let produced = execute(&req.stage, &config, &inputs, &out_dir)?;
    let seconds = start.elapsed().as_secs_f64();
    log::info!("{} finished in {seconds:.2} s", req.stage);

    let mut outputs = BTreeMap::new();
    for name in produced.files {
        let path = out_dir.join(&name);
        if inputs.values().any(|r| r.path == path) {
            return Err(Error::Usage(format!("{} would overwrite its input {}", req.stage, path.display())));
        }
        outputs.insert(name, file_digest(&path)?);
    }
    let record = StageRecord {
        stage: req.stage.clone(),
        config: config.snapshot(),
        inputs,
        outputs,
        seeds: produced.seeds,
        seconds,
    };
    let mut manifest = RunManifest::load_or_default(&out_dir)?;
    manifest.stages.push(record.clone());
    manifest.save(&out_dir)?;
    Ok(record)
}

/// Inputs are checked for overwrites before anything is written.
fn guard_outputs(inputs: &BTreeMap<String, FileRecord>, out_dir: &Path, names: &[&str]) -> Result<()> {
    for n in names {
        let p = out_dir.join(n);
        if let Some((role, _)) = inputs.iter().find(|(_, r)| r.path == p) {
            return Err(Error::Usage(format!("output {} is the `{role}` input", p.display())));
        }
    }
    Ok(())
}

fn execute(stage: &str, cfg: &Config, inputs: &BTreeMap<String, FileRecord>, out: &Path) -> Result<Produced> {
    let input = |role: &str| inputs.get(role).map(|r| r.path.as_path());
    let mut seeds = BTreeMap::new();
    let files: Vec<String> = match stage {
        "simulate" => {
            let size = cfg.usize("simulate.size")?;
            let seed = cfg.u64("simulate.seed")?;
            let mut spec = FoamSpec::scaled(seed, size);
            if let Some(n) = cfg.opt_usize("simulate.n_features")? {
                spec.n_features = n;
            }
            if let Some(r) = cfg.opt_f64("simulate.radius_min")? {
                spec.radius_range.0 = r;
            }
            if let Some(r) = cfg.opt_f64("simulate.radius_max")? {
                spec.radius_range.1 = r;
            }
            spec.antialias = cfg.bool("simulate.antialias")?;
            seeds.insert("phantom".into(), seed);
            let gt = generate_foam_phantom(&spec)?;
            let sinos = project_volume(&gt, cfg.usize("simulate.n_angles")?)?;
            let mut attrs = Attrs::new();
            attrs.insert("phantom_seed".into(), AttrValue::Num(seed as f64));
            save_volume(&out.join("gt.h5"), &gt, &attrs)?;
            save_sinograms(&out.join("sino.h5"), &sinos, &attrs)?;
            vec!["gt.h5".into(), "sino.h5".into()]
        }
        "degrade" => {
            let factor = cfg.opt_usize("degrade.factor")?;
            let i0 = cfg.opt_f64("degrade.i0")?;
            if factor.is_none() && i0.is_none() {
                return Err(Error::Configuration(
                    "degrade needs degrade.factor, degrade.i0 or both".into(),
                ));
            }
            let (mut sinos, mut attrs) = load_sinograms(input("sino").expect("checked"))?;
            attrs.remove("digest");
            if let Some(f) = factor {
                sinos = subsample_volume(&sinos, f)?;
                attrs.insert("subsample_factor".into(), AttrValue::Num(f as f64));
            }
            let mut files = vec!["sino_ld.h5".to_string()];
            match i0 {
                Some(i0) => {
                    let seed = cfg.opt_usize("degrade.seed")?.ok_or_else(|| {
                        Error::Configuration("degrade.i0 needs an explicit degrade.seed".into())
                    })? as u64;
                    seeds.insert("noise".into(), seed);
                    let dose = DoseSpec {
                        absorption_scale: cfg.f64("degrade.absorption")?,
                        ..DoseSpec::new(i0, seed)
                    };
                    let (noisy, k) = noisy_volume(&sinos, &dose)?;
                    attrs.insert("i0".into(), AttrValue::Num(i0));
                    attrs.insert("absorption_scale".into(), AttrValue::Num(dose.absorption_scale));
                    attrs.insert("rescale_factor".into(), AttrValue::Num(k));
                    attrs.insert("noise_seed".into(), AttrValue::Num(seed as f64));
                    guard_outputs(inputs, out, &["sino_ld.h5", "sino_nd.h5"])?;
                    save_sinograms(&out.join("sino_ld.h5"), &noisy, &attrs)?;
                    // Same scale, no noise: the normal-dose reference.
                    let clean = rescaled_volume(&sinos, k)?;
                    save_sinograms(&out.join("sino_nd.h5"), &clean, &attrs)?;
                    files.push("sino_nd.h5".into());
                }
                None => {
                    guard_outputs(inputs, out, &["sino_ld.h5"])?;
                    save_sinograms(&out.join("sino_ld.h5"), &sinos, &attrs)?;
                }
            }
            files
        }
        "reconstruct" => {
            let (sinos, _) = load_sinograms(input("sino").expect("checked"))?;
            let method = match cfg.str("reconstruct.method")? {
                "fbp" => {
                    let f = cfg.opt_str("reconstruct.filter")?.ok_or_else(|| {
                        Error::Configuration("fbp needs an explicit reconstruct.filter".into())
                    })?;
                    Method::Fbp(f.parse::<Filter>()?)
                }
                "sirt" => Method::Sirt {
                    iterations: cfg.opt_usize("reconstruct.iterations")?.ok_or_else(|| {
                        Error::Configuration("sirt needs an explicit reconstruct.iterations".into())
                    })?,
                    nonneg: cfg.bool("reconstruct.nonneg")?,
                },
                other => {
                    return Err(Error::Lookup {
                        tag: other.into(),
                        valid: vec!["fbp".into(), "sirt".into()],
                    })
                }
            };
            let prov = cfg.str("reconstruct.provenance")?;
            let provenance = Provenance::parse(prov).ok_or_else(|| Error::Lookup {
                tag: prov.into(),
                valid: vec!["ground_truth".into(), "low_dose".into(), "denoised".into()],
            })?;
            let name = format!("{}.h5", cfg.str("reconstruct.output")?);
            guard_outputs(inputs, out, &[&name])?;
            let vol = reconstruct_volume(&sinos, method, provenance)?;
            let mut attrs = Attrs::new();
            attrs.insert("method".into(), AttrValue::Text(cfg.str("reconstruct.method")?.into()));
            save_volume(&out.join(&name), &vol, &attrs)?;
            vec![name]
        }
        "train" => {
            let (ld, _) = load_volume(input("ld").expect("checked"))?;
            let (nd, _) = load_volume(input("nd").expect("checked"))?;
            let tc = train_config(cfg, input("extractor_weights"))?;
            seeds.insert("train".into(), tc.seed);
            let names = ["metrics.tsv", "generator_final.ckpt", "discriminator_final.ckpt"];
            guard_outputs(inputs, out, &names)?;
            let result = train(&ld, &nd, &tc, Some(out))?;
            save_checkpoint(&out.join("generator_final.ckpt"), &result.generator.to_checkpoint())?;
            let mut files: Vec<String> = names.iter().map(|s| s.to_string()).collect();
            for (_, p) in &result.checkpoints {
                files.push(p.file_name().expect("checkpoint file").to_string_lossy().into_owned());
            }
            files.sort();
            files.dedup();
            files
        }
        "enhance" => {
            let g = GeneratorParams::from_checkpoint(load_checkpoint(input("checkpoint").expect("checked"))?)?;
            let (ld, _) = load_volume(input("ld").expect("checked"))?;
            guard_outputs(inputs, out, &["dn.h5"])?;
            let dn = enhance_volume_with(&g, &ld, cfg.usize("enhance.depth")?, cfg.bool("enhance.pad")?, true)?;
            save_volume(&out.join("dn.h5"), &dn, &Attrs::new())?;
            vec!["dn.h5".into()]
        }
        "evaluate" => {
            let (gt, _) = load_volume(input("gt").expect("checked"))?;
            let (ld, _) = load_volume(input("ld").expect("checked"))?;
            let (dn, _) = load_volume(input("dn").expect("checked"))?;
            let rule = FeatureRule {
                relative_variance: cfg.f64("evaluate.feature_variance")?,
            };
            let report = build_report(&gt, &ld, &dn, rule)?;
            guard_outputs(inputs, out, &["report.tsv", "summary.json"])?;
            crate::io::write_atomic(&out.join("report.tsv"), report.to_tsv().as_bytes())?;
            crate::io::write_atomic(&out.join("summary.json"), (report.summary_json() + "\n").as_bytes())?;
            vec!["report.tsv".into(), "summary.json".into()]
        }
        "inspect" => {
            let g = GeneratorParams::from_checkpoint(load_checkpoint(input("checkpoint").expect("checked"))?)?;
            let (ld, _) = load_volume(input("ld").expect("checked"))?;
            let tag = cfg.str("inspect.tag")?;
            let slice = cfg.usize("inspect.slice")?;
            if slice >= ld.depth() {
                return Err(Error::Index(format!("slice {slice} outside 0..{}", ld.depth())));
            }
            let stack = SliceStack::from_volume(&ld, slice, cfg.usize("inspect.depth")?)?;
            let maps = extract_feature_maps(&g, &stack, tag)?;
            let views: Vec<_> = maps.iter().map(|m| m.view()).collect();
            let data = ndarray::stack(ndarray::Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
            let vol = Volume::new(data, Provenance::LowDose)?;
            let mut attrs = Attrs::new();
            attrs.insert("feature_tag".into(), AttrValue::Text(tag.into()));
            attrs.insert("slice".into(), AttrValue::Num(slice as f64));
            let name = format!("features_{tag}_slice{slice}.h5");
            save_volume(&out.join(&name), &vol, &attrs)?;
            vec![name]
        }
        "plot" => plot(inputs, out)?,
        other => return Err(Error::Usage(format!("unknown stage `{other}`"))),
    };
    Ok(Produced { files, seeds })
}

fn train_config(cfg: &Config, extractor_weights: Option<&Path>) -> Result<TrainConfig> {
    let crop = cfg.usize("train.crop_size")?;
    Ok(TrainConfig {
        depth: cfg.usize("train.depth")?,
        batch_size: cfg.usize("train.batch_size")?,
        d_steps_per_g: cfg.usize("train.d_steps_per_g")?,
        adam: AdamConfig {
            learning_rate: cfg.f64("train.learning_rate")?,
            beta1: cfg.f64("train.beta1")?,
            beta2: cfg.f64("train.beta2")?,
            epsilon: cfg.f64("train.epsilon")?,
        },
        total_g_steps: cfg.usize("train.total_g_steps")?,
        crop_size: (crop > 0).then_some(crop),
        seed: cfg.u64("train.seed")?,
        weights: LossWeights {
            lambda_d: cfg.f64("train.lambda_d")?,
            lambda_g: cfg.f64("train.lambda_g")?,
            lambda_p: cfg.f64("train.lambda_p")?,
            lambda_v: cfg.f64("train.lambda_v")?,
        },
        mse_form: MseForm::parse(cfg.str("train.mse_form")?)?,
        extractor_kind: cfg.str("train.extractor")?.parse::<ExtractorKind>()?,
        extractor_weights: extractor_weights.map(Path::to_path_buf),
        layer_counting: cfg.str("train.layer_counting")?.parse::<LayerCounting>()?,
        checkpoint_every: cfg.usize("train.checkpoint_every")?,
        base_channels: cfg.usize("train.base_channels")?,
        feature_rule: FeatureRule::default(),
    })
}

fn read_text(p: &Path) -> Result<String> {
    std::fs::read_to_string(p).map_err(|e| Error::io(p, e))
}

fn plot(inputs: &BTreeMap<String, FileRecord>, out: &Path) -> Result<Vec<String>> {
    let mut files = Vec::new();
    let mut write = |name: &str, svg: String| -> Result<()> {
        crate::io::write_atomic(&out.join(name), svg.as_bytes())?;
        files.push(name.to_string());
        Ok(())
    };
    if let Some(r) = inputs.get("report") {
        let t = Table::parse(&read_text(&r.path)?, &r.path.display().to_string())?;
        let (ld, dn) = (t.column("ssim_ld")?, t.column("ssim_dn")?);
        write("ssim_boxplot.svg", box_plot_svg("SSIM against ground truth", "SSIM", &[("LD", ld), ("DN", dn)])?)?;
        let (ld, dn) = (t.column("psnr_ld")?, t.column("psnr_dn")?);
        write("psnr_boxplot.svg", box_plot_svg("PSNR against ground truth", "PSNR (dB)", &[("LD", ld), ("DN", dn)])?)?;
    }
    if let Some(r) = inputs.get("summary") {
        let v: serde_json::Value = serde_json::from_str(&read_text(&r.path)?).map_err(|e| Error::CorruptFile {
            path: r.path.clone(),
            reason: e.to_string(),
        })?;
        for (k, prof) in v["line_profiles"].as_array().into_iter().flatten().enumerate() {
            let c0 = prof["cols"][0].as_f64().unwrap_or(0.0);
            let series: Vec<(String, Vec<(f64, f64)>)> = prof["series"]
                .as_array()
                .into_iter()
                .flatten()
                .map(|s| {
                    let name = s["provenance"].as_str().unwrap_or("?").to_string();
                    let pts = s["values"]
                        .as_array()
                        .into_iter()
                        .flatten()
                        .enumerate()
                        .map(|(i, y)| (c0 + i as f64, y.as_f64().unwrap_or(f64::NAN)))
                        .collect();
                    (name, pts)
                })
                .collect();
            let title = format!("row {} profile", prof["row"]);
            write(&format!("profile{k}.svg"), line_plot_svg(&title, "column", "attenuation", &series)?)?;
        }
    }
    if let Some(r) = inputs.get("metrics") {
        let t = Table::parse(&read_text(&r.path)?, &r.path.display().to_string())?;
        let step = t.column("step")?;
        let series: Vec<(String, Vec<(f64, f64)>)> = ["mse", "adv", "vgg", "w_term"]
            .iter()
            .map(|c| Ok((c.to_string(), step.iter().copied().zip(t.column(c)?.iter().copied()).collect())))
            .collect::<Result<_>>()?;
        write("training.svg", line_plot_svg("training losses", "generator step", "loss", &series)?)?;
    }
    if files.is_empty() {
        return Err(Error::Usage("plot needs --report, --summary or --metrics".into()));
    }
    Ok(files)
}

/// Outcome of replaying one manifest record.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayCheck {
    pub index: usize,
    pub stage: String,
    /// Output names whose digest differs or that were not reproduced.
    pub mismatched: Vec<String>,
}

/// Re-runs the recorded stages (all, or only `only`) into `out_dir` and
/// compares output digests. Inputs must still match their recorded digests.
pub fn replay(manifest_path: &Path, out_dir: &Path, only: Option<usize>) -> Result<Vec<ReplayCheck>> {
    let manifest = RunManifest::load(manifest_path)?;
    if absolute(out_dir)? == absolute(manifest_path.parent().unwrap_or(Path::new(".")))? {
        return Err(Error::Usage("replay needs a different output directory".into()));
    }
    let mut checks = Vec::new();
    for (i, rec) in manifest.stages.iter().enumerate() {
        if only.is_some_and(|k| k != i) {
            continue;
        }
        for (role, f) in &rec.inputs {
            let now = file_digest(&f.path)?;
            if now != f.sha256 {
                return Err(Error::CorruptFile {
                    path: f.path.clone(),
                    reason: format!("`{role}` input of stage {i} changed since it was recorded"),
                });
            }
        }
        let req = StageRequest {
            stage: rec.stage.clone(),
            config: Config::from_snapshot(&rec.config)?,
            inputs: rec.inputs.iter().map(|(k, v)| (k.clone(), v.path.clone())).collect(),
            out_dir: out_dir.to_path_buf(),
        };
        let again = run_stage(&req)?;
        let mut mismatched: Vec<String> = rec
            .outputs
            .iter()
            .filter(|(k, v)| again.outputs.get(*k) != Some(*v))
            .map(|(k, _)| k.clone())
            .collect();
        mismatched.extend(again.outputs.keys().filter(|k| !rec.outputs.contains_key(*k)).cloned());
        checks.push(ReplayCheck {
            index: i,
            stage: rec.stage.clone(),
            mismatched,
        });
    }
    if let Some(k) = only.filter(|k| *k >= manifest.stages.len()) {
        return Err(Error::Index(format!(
            "stage {k} outside 0..{} in {}",
            manifest.stages.len(),
            manifest_path.display()
        )));
    }
    Ok(checks)
}

/// Default manifest location for a run directory.
pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_FILE)
}
