//! Command implementations behind the `ctiunet` binary.
//!
//! Every command reads a [`RunConfig`], applies the command-line overrides and
//! stamps the resulting config hash into everything it writes. Exit status:
//! 0 on success, 1 when some files failed, 2 for configuration errors.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use crate::cascade::{export_intermediates, run_cascade_models};
use crate::config::{Overrides, RunConfig, TeacherConfig};
use crate::data::{generate_synthetic, load_dataset, split, write_dataset};
use crate::error::{Error, Result};
use crate::imageio;
use crate::metrics::{aggregate, MetricsReport, RunMetadata, SampleScore};
use crate::tensor::Tensor4;
use crate::train::{
    train_stage1, train_stage2, Checkpoints, GroundTruthTeacher, ModelTeacher, Teacher, TrainLog,
};
use crate::unet::{build_unet, load_model, UNetModel};

#[derive(Debug, Parser)]
#[command(
    name = "ctiunet",
    version,
    about = "Cascaded threshold-integrated U-Net"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Epochs for both training stages.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Run output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset to the data root.
    GenSynthetic(Common),
    /// Train model 1.
    TrainStage1(Common),
    /// Train model 2 on thresholded model-1 output.
    TrainStage2(Common),
    /// Run the cascade over input tiles.
    Infer(Common),
    /// Score predictions against ground truth.
    Eval(Common),
}

/// Result of a command that may fail per file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Outcome {
    pub failures: Vec<String>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            1
        }
    }
}

pub fn exit_code(result: &Result<Outcome>) -> i32 {
    match result {
        Ok(o) => o.exit_code(),
        Err(Error::Config(_) | Error::ModelFile(_)) => 2,
        Err(_) => 1,
    }
}

pub fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&c.config)?;
    cfg.apply(&Overrides {
        seed: c.seed,
        epochs: c.epochs,
        out: c.out.clone(),
    });
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn cmd_gen_synthetic(cfg: &RunConfig) -> Result<Outcome> {
    let ds = generate_synthetic(&cfg.synthetic_spec())?;
    let root = cfg.data_root();
    create_dir(&root)?;
    write_dataset(&ds, &root, Some(&cfg.hash()))?;
    log::info!(
        "wrote {} samples to {} (manifest {})",
        ds.len(),
        root.display(),
        ds.manifest_hash()
    );
    Ok(Outcome::default())
}

fn write_log(cfg: &RunConfig, log: &TrainLog, name: &str) -> Result<()> {
    let text = serde_json::to_string_pretty(log).map_err(|e| Error::harness(e.to_string()))?;
    write_file(&cfg.out.join(name), &text)
}

pub fn model1_checkpoints(cfg: &RunConfig) -> Checkpoints {
    Checkpoints::in_dir(&cfg.out, "model1")
}

pub fn model2_checkpoints(cfg: &RunConfig) -> Checkpoints {
    Checkpoints::in_dir(&cfg.out, "model2")
}

pub fn cmd_train_stage1(cfg: &RunConfig) -> Result<(UNetModel, TrainLog)> {
    // load errors abort before anything is written
    let ds = load_dataset(&cfg.data_root())?;
    let (train, val) = split(&ds, &cfg.split_spec())?;
    create_dir(&cfg.out)?;
    let mut model = build_unet(&cfg.model1, cfg.init_seed(1))?;
    model.run_hash = Some(cfg.hash());
    let mut log = train_stage1(
        &mut model,
        &train,
        &val,
        &cfg.train_options(1),
        Some(&model1_checkpoints(cfg)),
    )?;
    log.config_hash = Some(cfg.hash());
    write_log(cfg, &log, "train_stage1.json")?;
    Ok((model, log))
}

pub fn cmd_train_stage2(cfg: &RunConfig) -> Result<(UNetModel, TrainLog)> {
    let ds = load_dataset(&cfg.data_root())?;
    let (train, val) = split(&ds, &cfg.split_spec())?;
    let mut model = build_unet(&cfg.model2, cfg.init_seed(2))?;
    model.run_hash = Some(cfg.hash());
    let opts = cfg.train_options(2);
    let ckpt = model2_checkpoints(cfg);
    let run = |model: &mut UNetModel, teacher: &dyn Teacher| {
        train_stage2(
            model,
            teacher,
            &cfg.thresholds,
            &train,
            &val,
            &opts,
            Some(&ckpt),
        )
    };
    let mut log = match cfg.teacher {
        TeacherConfig::Model1 => {
            let m1 = load_model(&model1_checkpoints(cfg).best)?;
            if m1.config() != &cfg.model1 {
                return Err(Error::config(
                    "model 1 checkpoint does not match the model1 config",
                ));
            }
            create_dir(&cfg.out)?;
            run(
                &mut model,
                &ModelTeacher {
                    model: &m1,
                    window: cfg.window,
                },
            )?
        }
        TeacherConfig::GroundTruth => {
            create_dir(&cfg.out)?;
            run(&mut model, &GroundTruthTeacher)?
        }
        TeacherConfig::Noisy { .. } => {
            create_dir(&cfg.out)?;
            run(&mut model, &cfg.noisy_teacher().expect("noisy teacher"))?
        }
    };
    log.config_hash = Some(cfg.hash());
    write_log(cfg, &log, "train_stage2.json")?;
    Ok((model, log))
}

fn collect_pngs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            // masks are ground truth, not inputs
            if p.file_name().is_some_and(|n| n == "mask") {
                continue;
            }
            collect_pngs(&p, out)?;
        } else if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            out.push(p);
        }
    }
    Ok(())
}

pub fn pred_dir(cfg: &RunConfig) -> PathBuf {
    cfg.eval
        .pred
        .clone()
        .unwrap_or_else(|| cfg.out.join("pred"))
}

/// Runs the cascade over every PNG under the input directory, writing
/// `<id>_mask.png` (and intermediates) to the prediction directory.
pub fn cmd_infer(cfg: &RunConfig) -> Result<Outcome> {
    let m1 = load_model(&model1_checkpoints(cfg).best)?;
    let m2 = load_model(&model2_checkpoints(cfg).best)?;
    if m1.run_hash != m2.run_hash {
        log::warn!(
            "model checkpoints come from different runs ({:?} vs {:?})",
            m1.run_hash,
            m2.run_hash
        );
    }
    let input = cfg.infer.input.clone().unwrap_or_else(|| cfg.data_root());
    let mut files = Vec::new();
    collect_pngs(&input, &mut files)?;
    let out_dir = pred_dir(cfg);
    create_dir(&out_dir)?;
    let hash = cfg.hash();
    let mut outcome = Outcome::default();
    for path in files {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("tile")
            .to_string();
        let result = imageio::read_png(&path).and_then(|r| {
            let image = imageio::raster_to_rgb(&r);
            let out = run_cascade_models(&m1, &m2, &image, &cfg.thresholds, &cfg.window)?;
            export_intermediates(
                &out,
                &image,
                &out_dir,
                &stem,
                Some(&hash),
                cfg.infer.intermediates,
            )
        });
        match result {
            Ok(_) => log::info!("inferred {}", path.display()),
            Err(e) => {
                log::error!("{}: {e}", path.display());
                outcome.failures.push(format!("{}: {e}", path.display()));
            }
        }
    }
    Ok(outcome)
}

fn read_mask(path: &Path) -> Result<(Tensor4, Option<String>)> {
    let r = imageio::read_png(path)?;
    let mut t = Tensor4::zeros([1, 1, r.height, r.width]);
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        *v = match r.pixels[i * r.channels] {
            0 => 0.0,
            255 => 1.0,
            other => {
                return Err(Error::Image {
                    path: path.to_path_buf(),
                    message: format!("mask value {other} is not 0 or 255"),
                })
            }
        };
    }
    Ok((t, r.config_hash))
}

fn unix_time() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Scores `<id>_mask.png` predictions against the ground-truth dataset.
pub fn cmd_eval(cfg: &RunConfig) -> Result<(MetricsReport, Outcome)> {
    let gt = load_dataset(&cfg.eval.gt.clone().unwrap_or_else(|| cfg.data_root()))?;
    let dir = pred_dir(cfg);
    let mut preds: BTreeMap<String, PathBuf> = BTreeMap::new();
    for e in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
        let p = e.map_err(|e| Error::io(&dir, e))?.path();
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if let Some(id) = name.strip_suffix("_mask.png") {
            preds.insert(id.to_string(), p.clone());
        }
    }
    let mut outcome = Outcome::default();
    let mut scores = Vec::new();
    let mut hashes = BTreeMap::new();
    for s in gt.iter() {
        let Some(path) = preds.remove(&s.id) else {
            outcome.failures.push(format!("no prediction for {}", s.id));
            continue;
        };
        match read_mask(&path)
            .and_then(|(m, h)| Ok((SampleScore::from_masks(&s.id, s.condition, &m, &s.mask)?, h)))
        {
            Ok((score, h)) => {
                hashes.insert(h.unwrap_or_default(), s.id.clone());
                scores.push(score);
            }
            Err(e) => outcome.failures.push(format!("{}: {e}", path.display())),
        }
    }
    for id in preds.keys() {
        outcome
            .failures
            .push(format!("prediction {id} has no ground truth"));
    }
    if hashes.len() > 1 && !cfg.eval.force {
        return Err(Error::config(format!(
            "predictions come from {} different runs (config hashes {:?}); set eval.force to compare anyway",
            hashes.len(),
            hashes.keys().collect::<Vec<_>>()
        )));
    }
    for f in &outcome.failures {
        log::warn!("{f}");
    }
    let report = aggregate(
        &scores,
        RunMetadata {
            seed: Some(cfg.seed),
            config_hash: Some(cfg.hash()),
            timestamp: Some(unix_time()),
        },
    )?;
    create_dir(&cfg.out)?;
    write_file(&cfg.out.join("report.tsv"), &report.to_tsv())?;
    write_file(
        &cfg.out.join("report.txt"),
        &report.render_table("CTI-UNet"),
    )?;
    Ok((report, outcome))
}

/// Dispatches a parsed command line; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let (Command::GenSynthetic(c)
    | Command::TrainStage1(c)
    | Command::TrainStage2(c)
    | Command::Infer(c)
    | Command::Eval(c)) = &cli.command;
    let result = load_config(c).and_then(|cfg| match &cli.command {
        Command::GenSynthetic(_) => cmd_gen_synthetic(&cfg),
        Command::TrainStage1(_) => cmd_train_stage1(&cfg).map(|(_, log)| {
            println!(
                "stage 1: best epoch {} val DSC {:?}",
                log.best_epoch, log.best_val_dsc
            );
            Outcome::default()
        }),
        Command::TrainStage2(_) => cmd_train_stage2(&cfg).map(|(_, log)| {
            println!(
                "stage 2: best epoch {} val DSC {:?}",
                log.best_epoch, log.best_val_dsc
            );
            Outcome::default()
        }),
        Command::Infer(_) => cmd_infer(&cfg),
        Command::Eval(_) => cmd_eval(&cfg).map(|(report, outcome)| {
            print!("{}", report.render_table("CTI-UNet"));
            outcome
        }),
    });
    if let Err(e) = &result {
        log::error!("{e}");
        eprintln!("error: {e}");
    }
    exit_code(&result)
}
