use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tomogan::io::config::Config;
use tomogan::stages::{replay, run_stage, StageRequest};
use tomogan::Error;

/// Low-dose tomography simulation, reconstruction and denoising.
#[derive(Parser, Debug)]
#[command(name = "tomogan", version)]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Output directory; holds the run manifest.
    #[arg(long)]
    out: PathBuf,
    /// Typed key-value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config entry, e.g. `--set train.lambda_g=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Foam phantom and its full-dose projections.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        size: Option<String>,
        #[arg(long)]
        seed: Option<String>,
        #[arg(long)]
        angles: Option<String>,
        #[arg(long)]
        features: Option<String>,
    },
    /// Angular subsampling and/or photon noise.
    Degrade {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        sino: PathBuf,
        #[arg(long)]
        factor: Option<String>,
        #[arg(long)]
        i0: Option<String>,
        #[arg(long)]
        seed: Option<String>,
        #[arg(long)]
        absorption: Option<String>,
    },
    /// FBP or SIRT of a sinogram file.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        sino: PathBuf,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        filter: Option<String>,
        #[arg(long)]
        iterations: Option<String>,
        #[arg(long)]
        provenance: Option<String>,
        /// Output file stem.
        #[arg(long)]
        name: Option<String>,
    },
    /// Adversarial training on a low/normal-dose volume pair.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ld: PathBuf,
        #[arg(long)]
        nd: PathBuf,
        #[arg(long)]
        extractor_weights: Option<PathBuf>,
        #[arg(long)]
        depth: Option<String>,
        #[arg(long)]
        steps: Option<String>,
        #[arg(long)]
        seed: Option<String>,
    },
    /// Denoise a volume with a generator checkpoint.
    Enhance {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        ld: PathBuf,
        #[arg(long)]
        depth: Option<String>,
    },
    /// SSIM/PSNR report against ground truth.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        ld: PathBuf,
        #[arg(long)]
        dn: PathBuf,
    },
    /// Dump generator feature maps for one slice.
    Inspect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        ld: PathBuf,
        #[arg(long)]
        tag: Option<String>,
        #[arg(long)]
        slice: Option<String>,
        #[arg(long)]
        depth: Option<String>,
    },
    /// SVG figures from reports and training logs.
    Plot {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        summary: Option<PathBuf>,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Re-run recorded stages and compare output digests.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Only this stage index.
        #[arg(long)]
        stage: Option<usize>,
    },
}

fn build_config(common: &Common, flags: &[(&str, &Option<String>)]) -> Result<Config, Error> {
    let mut cfg = match &common.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v)?;
    }
    Ok(cfg)
}

fn stage(
    name: &str,
    common: Common,
    flags: &[(&str, &Option<String>)],
    inputs: &[(&str, Option<PathBuf>)],
) -> Result<(), Error> {
    let req = StageRequest {
        stage: name.to_string(),
        config: build_config(&common, flags)?,
        inputs: inputs
            .iter()
            .filter_map(|(role, p)| p.clone().map(|p| (role.to_string(), p)))
            .collect::<BTreeMap<_, _>>(),
        out_dir: common.out,
    };
    let record = run_stage(&req)?;
    for (file, digest) in &record.outputs {
        println!("{file}\t{digest}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate {
            common,
            size,
            seed,
            angles,
            features,
        } => stage(
            "simulate",
            common,
            &[
                ("simulate.size", &size),
                ("simulate.seed", &seed),
                ("simulate.n_angles", &angles),
                ("simulate.n_features", &features),
            ],
            &[],
        ),
        Command::Degrade {
            common,
            sino,
            factor,
            i0,
            seed,
            absorption,
        } => stage(
            "degrade",
            common,
            &[
                ("degrade.factor", &factor),
                ("degrade.i0", &i0),
                ("degrade.seed", &seed),
                ("degrade.absorption", &absorption),
            ],
            &[("sino", Some(sino))],
        ),
        Command::Reconstruct {
            common,
            sino,
            method,
            filter,
            iterations,
            provenance,
            name,
        } => stage(
            "reconstruct",
            common,
            &[
                ("reconstruct.method", &method),
                ("reconstruct.filter", &filter),
                ("reconstruct.iterations", &iterations),
                ("reconstruct.provenance", &provenance),
                ("reconstruct.output", &name),
            ],
            &[("sino", Some(sino))],
        ),
        Command::Train {
            common,
            ld,
            nd,
            extractor_weights,
            depth,
            steps,
            seed,
        } => stage(
            "train",
            common,
            &[
                ("train.depth", &depth),
                ("train.total_g_steps", &steps),
                ("train.seed", &seed),
            ],
            &[("ld", Some(ld)), ("nd", Some(nd)), ("extractor_weights", extractor_weights)],
        ),
        Command::Enhance {
            common,
            checkpoint,
            ld,
            depth,
        } => stage(
            "enhance",
            common,
            &[("enhance.depth", &depth)],
            &[("checkpoint", Some(checkpoint)), ("ld", Some(ld))],
        ),
        Command::Evaluate { common, gt, ld, dn } => stage(
            "evaluate",
            common,
            &[],
            &[("gt", Some(gt)), ("ld", Some(ld)), ("dn", Some(dn))],
        ),
        Command::Inspect {
            common,
            checkpoint,
            ld,
            tag,
            slice,
            depth,
        } => stage(
            "inspect",
            common,
            &[
                ("inspect.tag", &tag),
                ("inspect.slice", &slice),
                ("inspect.depth", &depth),
            ],
            &[("checkpoint", Some(checkpoint)), ("ld", Some(ld))],
        ),
        Command::Plot {
            common,
            report,
            summary,
            metrics,
        } => stage(
            "plot",
            common,
            &[],
            &[("report", report), ("summary", summary), ("metrics", metrics)],
        ),
        Command::Replay { manifest, out, stage } => {
            let checks = replay(&manifest, &out, stage)?;
            let mut failed = Vec::new();
            for c in &checks {
                let status = if c.mismatched.is_empty() { "match" } else { "MISMATCH" };
                println!("{}\t{}\t{status}\t{}", c.index, c.stage, c.mismatched.join(","));
                failed.extend(c.mismatched.iter().cloned());
            }
            if failed.is_empty() {
                Ok(())
            } else {
                Err(Error::Protocol(format!("replay changed outputs: {}", failed.join(", "))))
            }
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: usage: {}", one_line(first));
            return ExitCode::from(2);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e.to_string()));
            ExitCode::from(if e.kind() == "usage" { 2 } else { 1 })
        }
    }
}
