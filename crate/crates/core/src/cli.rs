//! `adgen` command-line interface.
//!
//! Every command reads one TOML config (flags override file values) and
//! writes its artifacts into a run directory containing the resolved config,
//! so reruns with identical inputs reproduce identical numeric outputs.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand_chacha::rand_core::SeedableRng;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{make_leave_one_out_split, DomainDataset, ImageSample, SampleOrigin};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_target, sweep_reference_fraction};
use crate::fid::domain_distance_table;
use crate::inference::{build_reference_bank, export_heatmap, score_pixels, score_query};
use crate::model::Model;
use crate::mvtec::{load_image_rgb, load_mvtec_layout, write_mvtec_layout};
use crate::plot::{line_chart, Series};
use crate::synthetic::generate_synthetic_domain;
use crate::training::{model_from_checkpoint, train, TrainOptions};

pub const OUT_ROOT_ENV: &str = "ADGEN_OUT_ROOT";

#[derive(Parser)]
#[command(
    name = "adgen",
    about = "Domain-generalized textured-surface anomaly detection",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output root (overrides config and ADGEN_OUT_ROOT).
    #[arg(long)]
    pub out_root: Option<PathBuf>,
    /// Run directory name (default: <command>-<timestamp>).
    #[arg(long)]
    pub run_name: Option<String>,
    /// Dataset root override.
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    /// Target domain override.
    #[arg(long)]
    pub target: Option<String>,
    /// Seed override (training seed / evaluation bank seed).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate the configured synthetic domains as an MVTec-layout tree.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Episodic training on the leave-one-out source domains.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Step-count override.
        #[arg(long)]
        steps: Option<u64>,
        /// Resume from a checkpoint file.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the target domain.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Reference-fraction override.
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Reference-fraction sweep with a plot artifact.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated fractions override, e.g. 0.1,0.5,1.0.
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
        /// Comma-separated seeds override.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Write anomaly heatmaps for specific images.
    Localize {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Images to localize (repeat or comma-separate).
        #[arg(long, value_delimiter = ',', required = true)]
        images: Vec<PathBuf>,
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Pairwise FID table over the configured domains.
    Fid {
        #[command(flatten)]
        common: CommonArgs,
        /// Use a trained checkpoint's backbone for features.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn load_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut config = RunConfig::load(&common.config)?;
    if let Some(root) = &common.data_root {
        config.data.root = root.clone();
    }
    if let Some(target) = &common.target {
        config.data.target = target.clone();
    }
    if let Some(seed) = common.seed {
        config.train.seed = seed;
    }
    if let Some(out) = &common.out_root {
        config.output.root = Some(out.clone());
    }
    if let Some(name) = &common.run_name {
        config.output.run_name = Some(name.clone());
    }
    config.validate()?;
    Ok(config)
}

fn run_dir(config: &RunConfig, command: &str) -> Result<PathBuf> {
    let root = config
        .output
        .root
        .clone()
        .or_else(|| std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));
    let name = config.output.run_name.clone().unwrap_or_else(|| {
        let ts = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        format!("{command}-{ts}")
    });
    let dir = root.join(name);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    std::fs::write(dir.join("config.toml"), config.to_toml())
        .map_err(|e| Error::io(dir.join("config.toml"), e))?;
    Ok(dir)
}

fn require_data_root(config: &RunConfig) -> Result<()> {
    if !config.data.root.is_dir() {
        return Err(Error::Layout {
            path: config.data.root.clone(),
        });
    }
    Ok(())
}

fn load_domain(config: &RunConfig, domain: &str) -> Result<DomainDataset> {
    load_mvtec_layout(&config.data.root, domain, config.data.input_size)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Internal(format!("serialization failed: {e}")))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn cmd_synth(common: &CommonArgs) -> Result<()> {
    let config = load_config(common)?;
    let synth = config
        .synth
        .clone()
        .ok_or_else(|| Error::Config("config has no [synth] section".into()))?;
    let dir = run_dir(&config, "synth")?;
    let mut summary = Vec::new();
    for d in &synth.domains {
        let spec = config.texture_spec(d)?;
        let dataset = generate_synthetic_domain(&d.name, &spec, d.n_normal, d.n_abnormal, d.seed)?;
        write_mvtec_layout(&dataset, &config.data.root)?;
        summary.push(format!(
            "{}: {} normal, {} abnormal ({}x{})",
            d.name,
            dataset.normal.len(),
            dataset.abnormal.len(),
            spec.size,
            spec.size
        ));
    }
    let text = summary.join("\n");
    std::fs::write(dir.join("synth_summary.txt"), format!("{text}\n"))
        .map_err(|e| Error::io(dir.join("synth_summary.txt"), e))?;
    println!("wrote {} domains under {}", synth.domains.len(), config.data.root.display());
    println!("{text}");
    Ok(())
}

pub fn cmd_train(common: &CommonArgs, steps: Option<u64>, resume: Option<&Path>) -> Result<()> {
    let mut config = load_config(common)?;
    if let Some(steps) = steps {
        config.train.steps = steps;
    }
    require_data_root(&config)?;
    let dir = run_dir(&config, "train")?;

    let split = make_leave_one_out_split(
        &config.data.domains,
        &config.data.target,
        config.eval.fraction,
    )?;
    let sources: Vec<DomainDataset> = split
        .source_domains
        .iter()
        .map(|d| load_domain(&config, d))
        .collect::<Result<_>>()?;

    let resume_ckpt = match resume {
        Some(path) => Some(Checkpoint::load(path)?),
        None => None,
    };
    let opts = TrainOptions {
        model_config: config.model_config()?,
        train: config.train_config()?,
        log_path: Some(dir.join("train_log.jsonl")),
        checkpoint_dir: Some(dir.join("checkpoints")),
        resume: resume_ckpt,
    };
    let outcome = train(&sources, &opts)?;
    let last = outcome.records.last().expect("at least one step ran");
    println!(
        "trained {} steps on {:?} (target {} held out); final total loss {:.4}",
        last.step, split.source_domains, split.target_domain, last.total
    );
    println!("checkpoint: {}", dir.join("checkpoints").join("final.ckpt").display());
    Ok(())
}

pub fn cmd_eval(common: &CommonArgs, checkpoint: &Path, fraction: Option<f64>) -> Result<()> {
    let config = load_config(common)?;
    require_data_root(&config)?;
    let dir = run_dir(&config, "eval")?;
    let (model, _) = model_from_checkpoint(&Checkpoint::load(checkpoint)?)?;
    let target = load_domain(&config, &config.data.target)?;
    let fraction = fraction.unwrap_or(config.eval.fraction);
    let seed = common.seed.unwrap_or(config.train.seed);
    let report = evaluate_target(&model, &target, fraction, seed)?;
    write_json(&dir.join("eval_report.json"), &report)?;
    match report.pixel_auc {
        Some(p) => println!(
            "target {}: image AUROC {:.4}, pixel AUROC {:.4} (fraction {}, {} bank images)",
            report.target, report.image_auc, p, report.reference_fraction, report.bank_images
        ),
        None => println!(
            "target {}: image AUROC {:.4}, pixel AUROC unavailable (missing masks)",
            report.target, report.image_auc
        ),
    }
    println!("report: {}", dir.join("eval_report.json").display());
    Ok(())
}

pub fn cmd_sweep(
    common: &CommonArgs,
    checkpoint: &Path,
    fractions: Option<Vec<f64>>,
    seeds: Option<Vec<u64>>,
) -> Result<()> {
    let config = load_config(common)?;
    require_data_root(&config)?;
    let dir = run_dir(&config, "sweep")?;
    let (model, _) = model_from_checkpoint(&Checkpoint::load(checkpoint)?)?;
    let target = load_domain(&config, &config.data.target)?;
    let fractions = fractions.unwrap_or_else(|| config.eval.fractions.clone());
    let seeds = seeds.unwrap_or_else(|| config.eval.seeds.clone());
    let rows = sweep_reference_fraction(&model, &target, &fractions, &seeds)?;

    write_json(&dir.join("sweep.json"), &rows)?;
    let mut csv = String::from("fraction,mean_image_auc,mean_pixel_auc\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{}\n",
            r.fraction,
            r.mean_image_auc,
            r.mean_pixel_auc.map(|p| p.to_string()).unwrap_or_default()
        ));
    }
    std::fs::write(dir.join("sweep.csv"), csv).map_err(|e| Error::io(dir.join("sweep.csv"), e))?;

    let mut series = vec![Series {
        label: "image auc".into(),
        points: rows.iter().map(|r| (r.fraction, r.mean_image_auc)).collect(),
        color: [30, 80, 200],
    }];
    if rows.iter().all(|r| r.mean_pixel_auc.is_some()) {
        series.push(Series {
            label: "pixel auc".into(),
            points: rows
                .iter()
                .map(|r| (r.fraction, r.mean_pixel_auc.unwrap()))
                .collect(),
            color: [200, 60, 40],
        });
    }
    line_chart(&series, &dir.join("sweep.png"))?;

    for r in &rows {
        match r.mean_pixel_auc {
            Some(p) => println!(
                "fraction {:.3}: image AUROC {:.4}, pixel AUROC {:.4}",
                r.fraction, r.mean_image_auc, p
            ),
            None => println!("fraction {:.3}: image AUROC {:.4}", r.fraction, r.mean_image_auc),
        }
    }
    println!("artifacts: {}", dir.display());
    Ok(())
}

pub fn cmd_localize(
    common: &CommonArgs,
    checkpoint: &Path,
    images: &[PathBuf],
    fraction: Option<f64>,
) -> Result<()> {
    let config = load_config(common)?;
    require_data_root(&config)?;
    let dir = run_dir(&config, "localize")?;
    let (model, _) = model_from_checkpoint(&Checkpoint::load(checkpoint)?)?;
    let target = load_domain(&config, &config.data.target)?;
    let bank_pool = target.train_normals();
    let fraction = fraction.unwrap_or(config.eval.fraction);
    let seed = common.seed.unwrap_or(config.train.seed);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let bank = build_reference_bank(&bank_pool, fraction, &model, &mut rng)?;

    let mut manifest = Vec::new();
    for path in images {
        let pixels = load_image_rgb(path, config.data.input_size)?;
        let sample = ImageSample {
            pixels,
            label: 0,
            domain: config.data.target.clone(),
            mask: None,
            path: path.to_string_lossy().to_string(),
            origin: SampleOrigin::Test,
        };
        let scores = score_query(&sample, &bank, &model)?;
        let map = score_pixels(&sample, &bank, &model)?;
        let stem = dir.join(
            path.file_stem()
                .map(|s| s.to_string_lossy().to_string())
                .unwrap_or_else(|| "image".to_string()),
        );
        let (gray, overlay) = export_heatmap(&map, &sample, &stem)?;
        println!(
            "{}: score {:.4} -> {} / {}",
            path.display(),
            scores.image_score(),
            gray.display(),
            overlay.display()
        );
        manifest.push(serde_json::json!({
            "path": sample.path,
            "score": scores.image_score(),
        }));
    }
    write_json(&dir.join("scores.json"), &manifest)?;
    Ok(())
}

pub fn cmd_fid(common: &CommonArgs, checkpoint: Option<&Path>) -> Result<()> {
    let config = load_config(common)?;
    require_data_root(&config)?;
    let dir = run_dir(&config, "fid")?;
    let model = match checkpoint {
        Some(path) => model_from_checkpoint(&Checkpoint::load(path)?)?.0,
        None => Model::<f32>::new(config.model_config()?, config.train.seed)?,
    };
    let domains: Vec<DomainDataset> = config
        .data
        .domains
        .iter()
        .map(|d| load_domain(&config, d))
        .collect::<Result<_>>()?;
    let table = domain_distance_table(&model, &domains)?;
    write_json(&dir.join("fid.json"), &table)?;
    let rendered = table.render();
    std::fs::write(dir.join("fid.txt"), &rendered)
        .map_err(|e| Error::io(dir.join("fid.txt"), e))?;
    print!("{rendered}");
    let _ = std::io::stdout().flush();
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Synth { common } => cmd_synth(common),
        Command::Train {
            common,
            steps,
            resume,
        } => cmd_train(common, *steps, resume.as_deref()),
        Command::Eval {
            common,
            checkpoint,
            fraction,
        } => cmd_eval(common, checkpoint, *fraction),
        Command::Sweep {
            common,
            checkpoint,
            fractions,
            seeds,
        } => cmd_sweep(common, checkpoint, fractions.clone(), seeds.clone()),
        Command::Localize {
            common,
            checkpoint,
            images,
            fraction,
        } => cmd_localize(common, checkpoint, images, *fraction),
        Command::Fid { common, checkpoint } => cmd_fid(common, checkpoint.as_deref()),
    }
}
