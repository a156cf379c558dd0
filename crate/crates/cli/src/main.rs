//! `tacsim` — dataset generation, training, translation, evaluation, and
//! verification for the visuotactile sensor simulator.
//!
//! Exit codes: 0 success, 1 assertion failure, 2 input/schema error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use tacsim_core::config::SensorConfig;
use tacsim_core::data::{self, Manifest, Protocol, Scale, Split};
use tacsim_core::error::Error;
use tacsim_core::proximity::run_proximity_experiment;
use tacsim_core::render::{RenderParams, RenderStyle, SensorImage};
use tacsim_core::tasks::{
    run_ablation, train_classifier, train_multitask, train_regressor, LabeledDataset, TaskKind,
    TaskReport, TrainConfig,
};
use tacsim_core::translation::{
    evaluate_translation, train_pix2pix, Direction, GanConfig, Generator, PairedSet,
};

#[derive(Parser)]
#[command(name = "tacsim", version, about = "visuotactile sensor simulation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonGen {
    /// Root seed; every artifact byte is a pure function of it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// desk (fast) or paper (full-size) protocol scale.
    #[arg(long, default_value = "desk")]
    scale: String,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Render a dataset (images + JSONL manifest) for one protocol.
    Generate {
        /// object|grating|pose|contact|force|multitask|proximity|gan-pairs
        protocol: String,
        #[command(flatten)]
        common: CommonGen,
        /// Comma-separated render styles (default: all three standard ones).
        #[arg(long)]
        style: Option<String>,
    },
    /// Train a task model (classifier/regressor/multitask) from a manifest.
    Train {
        /// object|grating|pose|contact|force|multitask
        task: String,
        /// Path to manifest.jsonl; images are resolved relative to it.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "vitactip")]
        style: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        /// Mirror training images horizontally/vertically at random.
        #[arg(long, default_value_t = false)]
        augment: bool,
        /// Training-image side in pixels (must divide the stored size).
        #[arg(long, default_value_t = 64)]
        side: usize,
        /// Report (and weight) output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a marker-removal (mr) or light-removal (lr) translator.
    Translate {
        /// mr|lr
        direction: String,
        /// gan-pairs manifest for training, or an input image when
        /// --weights is given.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Apply a saved generator instead of training.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Input image to translate (apply mode).
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 1)]
        batch: usize,
        /// U-Net / PatchGAN width.
        #[arg(long, default_value_t = 32)]
        base_channels: usize,
        /// Adversarial loss weight; 0 trains a pure L1 regressor.
        #[arg(long, default_value_t = 0.1)]
        adv_weight: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate artifacts: proximity GPR or a saved translator.
    Eval {
        /// proximity|translation
        what: String,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// mr|lr (translation only)
        #[arg(long)]
        direction: Option<String>,
        #[arg(long, default_value = "vitac")]
        style: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Quick single-process timing of the hot paths.
    Bench,
    /// Re-check all manifest invariants (hash, files, split hygiene).
    Verify {
        manifest: PathBuf,
    },
    /// Run an experiment described by a JSON config file.
    Run {
        config: PathBuf,
        /// Exit 1 if any declared threshold is violated.
        #[arg(long)]
        assert: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    // Determinism first: a single worker unless explicitly raised. The
    // current pipeline is sequential either way; the cap is recorded so
    // future parallel paths inherit the contract.
    let threads: usize = std::env::var("TACSIM_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1);
    let _ = threads;
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn parse_styles(s: Option<&str>) -> Result<Vec<RenderStyle>, Error> {
    match s {
        None => Ok(vec![RenderStyle::ViTacTip, RenderStyle::ViTac, RenderStyle::TacTip]),
        Some(list) => list.split(',').map(|t| RenderStyle::from_name(t.trim())).collect(),
    }
}

fn load_manifest(path: &Path) -> Result<(Manifest, PathBuf), Error> {
    let manifest = Manifest::read(path)?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    Ok((manifest, base))
}

fn write_report(path: &Path, json: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, json)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Ok(true) = success, Ok(false) = assertion failure (exit 1),
/// Err = input/schema error (exit 2).
fn dispatch(cmd: Command) -> Result<bool, Error> {
    match cmd {
        Command::Generate { protocol, common, style } => {
            let protocol = Protocol::parse(&protocol)?;
            let scale = Scale::parse(&common.scale)?;
            let styles = parse_styles(style.as_deref())?;
            let config = SensorConfig::default();
            let params = RenderParams::default();
            let manifest = data::generate(
                protocol,
                scale,
                &common.out,
                common.seed,
                &styles,
                &config,
                &params,
            )?;
            println!(
                "generated {} records under {}",
                manifest.records.len(),
                common.out.display()
            );
            Ok(true)
        }
        Command::Train { task, manifest, style, seed, epochs, lr, batch, augment, side, out } => {
            let (manifest, base) = load_manifest(&manifest)?;
            let ds = LabeledDataset::from_manifest(&manifest, &base, &style, side)?;
            let cfg = TrainConfig { epochs, seed, lr, batch, augment };
            let kind = parse_task(&task)?;
            let report = match kind {
                TaskKind::Object | TaskKind::Grating => train_classifier(&ds, kind, &cfg)?.1,
                TaskKind::Pose | TaskKind::Contact | TaskKind::Force => {
                    train_regressor(&ds, kind, &cfg)?.1
                }
                TaskKind::Multitask => train_multitask(&ds, &cfg, true)?.1,
            };
            write_report(&out.join(format!("{}_{}.json", kind.name(), style)), &report.to_json()?)?;
            print_report(&report);
            Ok(true)
        }
        Command::Translate { direction, manifest, weights, input, seed, epochs, lr, batch, base_channels, adv_weight, out } => {
            let direction = parse_direction(&direction)?;
            match (weights, input) {
                (Some(w), Some(i)) => {
                    let gen = Generator::load(&w, direction, GanConfig::default())?;
                    let img = SensorImage::read_ppm(&i, RenderStyle::ViTacTip)?;
                    let translated = gen.translate(&img)?;
                    if let Some(dir) = out.parent() {
                        std::fs::create_dir_all(dir)?;
                    }
                    translated.write_ppm(&out)?;
                    println!("wrote {}", out.display());
                    Ok(true)
                }
                (None, None) => {
                    let path = manifest.ok_or_else(|| {
                        Error::InvalidConfig("training mode needs --manifest".into())
                    })?;
                    let (manifest, base) = load_manifest(&path)?;
                    let cfg = GanConfig { seed, epochs, lr, batch, base_channels, adv_weight, ..Default::default() };
                    let train =
                        PairedSet::from_manifest(&manifest, &base, direction, Split::Train, cfg.image_side)?;
                    let val =
                        PairedSet::from_manifest(&manifest, &base, direction, Split::Val, cfg.image_side)?;
                    let (gen, history) = train_pix2pix(&train, &val, &cfg)?;
                    std::fs::create_dir_all(&out)?;
                    gen.save(&out.join(format!("{}_gan.tsnn", direction.name())))?;
                    write_report(
                        &out.join(format!("{}_history.json", direction.name())),
                        &serde_json::to_string_pretty(&history)?,
                    )?;
                    Ok(true)
                }
                _ => Err(Error::InvalidConfig(
                    "apply mode needs both --weights and --input".into(),
                )),
            }
        }
        Command::Eval { what, manifest, weights, direction, style, out } => {
            let (manifest, base) = load_manifest(&manifest)?;
            match what.as_str() {
                "proximity" => {
                    let report = run_proximity_experiment(&manifest, &base, &style)?;
                    write_report(&out, &serde_json::to_string_pretty(&report)?)?;
                    println!(
                        "textured MSE {:.5}, flat MSE {:.5}",
                        report.textured_mse, report.flat_mse
                    );
                    Ok(true)
                }
                "translation" => {
                    let direction = parse_direction(&direction.ok_or_else(|| {
                        Error::InvalidConfig("translation eval needs --direction".into())
                    })?)?;
                    let w = weights.ok_or_else(|| {
                        Error::InvalidConfig("translation eval needs --weights".into())
                    })?;
                    let gen = Generator::load(&w, direction, GanConfig::default())?;
                    let test = PairedSet::from_manifest(
                        &manifest,
                        &base,
                        direction,
                        Split::Test,
                        gen.config.image_side,
                    )?;
                    let report = evaluate_translation(&gen, &test, None, 0)?;
                    write_report(&out, &serde_json::to_string_pretty(&report)?)?;
                    println!(
                        "n={} SSIM {:.4} PSNR {:.2} dB",
                        report.n, report.mean_ssim, report.mean_psnr_db
                    );
                    Ok(true)
                }
                other => Err(Error::InvalidConfig(format!("unknown eval target `{other}`"))),
            }
        }
        Command::Bench => {
            quick_bench()?;
            Ok(true)
        }
        Command::Verify { manifest } => {
            let (manifest, base) = load_manifest(&manifest)?;
            let config = SensorConfig::default();
            let params = RenderParams::default();
            manifest.verify(&base, &config, &params)?;
            manifest.check_split_hygiene()?;
            println!("manifest ok: {} records", manifest.records.len());
            Ok(true)
        }
        Command::Run { config, assert } => run_experiment(&config, assert),
    }
}

fn parse_task(s: &str) -> Result<TaskKind, Error> {
    match s.to_ascii_lowercase().as_str() {
        "object" => Ok(TaskKind::Object),
        "grating" => Ok(TaskKind::Grating),
        "pose" => Ok(TaskKind::Pose),
        "contact" => Ok(TaskKind::Contact),
        "force" => Ok(TaskKind::Force),
        "multitask" => Ok(TaskKind::Multitask),
        other => Err(Error::InvalidConfig(format!("unknown task `{other}`"))),
    }
}

fn parse_direction(s: &str) -> Result<Direction, Error> {
    match s.to_ascii_lowercase().as_str() {
        "mr" => Ok(Direction::MR),
        "lr" => Ok(Direction::LR),
        other => Err(Error::InvalidConfig(format!("unknown direction `{other}`"))),
    }
}

fn print_report(r: &TaskReport) {
    if !r.train_loss.is_empty() {
        let losses: Vec<String> = r.train_loss.iter().map(|l| format!("{l:.4}")).collect();
        println!("{} [{}]: train loss {}", r.task, r.style, losses.join(" "));
    }
    if let Some(acc) = r.accuracy {
        println!("{} [{}]: accuracy {:.4}", r.task, r.style, acc);
    }
    if let (Some(mae), Some(axes)) = (&r.mae, &r.axis_names) {
        for (a, m) in axes.iter().zip(mae) {
            println!("{} [{}]: {a} MAE {m:.4}", r.task, r.style);
        }
    }
    if let Some(h) = r.head_accuracy {
        println!(
            "{} [{}]: hardness {:.4} material {:.4} texture {:.4}",
            r.task, r.style, h[0], h[1], h[2]
        );
    }
}

/// JSON experiment description consumed by `tacsim run`.
#[derive(Deserialize)]
#[serde(tag = "experiment", rename_all = "lowercase")]
enum Experiment {
    Task {
        task: String,
        manifest: PathBuf,
        /// One report per style; matched scenarios across styles.
        styles: Vec<String>,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_epochs")]
        epochs: usize,
        out: PathBuf,
        #[serde(default)]
        min_accuracy: Option<f64>,
    },
    Proximity {
        manifest: PathBuf,
        #[serde(default = "default_prox_style")]
        style: String,
        out: PathBuf,
        #[serde(default)]
        max_textured_mse: Option<f64>,
    },
    Translation {
        manifest: PathBuf,
        direction: String,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_epochs")]
        epochs: usize,
        out: PathBuf,
        #[serde(default)]
        min_ssim: Option<f64>,
        #[serde(default)]
        min_psnr_db: Option<f64>,
    },
}

fn default_epochs() -> usize {
    10
}

fn default_prox_style() -> String {
    "vitac".into()
}

fn run_experiment(config_path: &Path, assert: bool) -> Result<bool, Error> {
    let text = std::fs::read_to_string(config_path)?;
    let exp: Experiment = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidConfig(format!("bad experiment config: {e}")))?;
    let mut pass = true;
    match exp {
        Experiment::Task { task, manifest, styles, seed, epochs, out, min_accuracy } => {
            let kind = parse_task(&task)?;
            let (manifest, base) = load_manifest(&manifest)?;
            let datasets = styles
                .iter()
                .map(|s| LabeledDataset::from_manifest(&manifest, &base, s, 64))
                .collect::<Result<Vec<_>, Error>>()?;
            let cfg = TrainConfig { epochs, seed, ..Default::default() };
            let reports = run_ablation(kind, &datasets, &cfg)?;
            for r in &reports {
                print_report(r);
                if let (Some(min), Some(acc)) = (min_accuracy, r.accuracy) {
                    pass &= acc >= min;
                }
            }
            write_report(
                &out.join(format!("{}_ablation.json", kind.name())),
                &serde_json::to_string_pretty(&reports)?,
            )?;
        }
        Experiment::Proximity { manifest, style, out, max_textured_mse } => {
            let (manifest, base) = load_manifest(&manifest)?;
            let report = run_proximity_experiment(&manifest, &base, &style)?;
            println!(
                "proximity [{}]: textured MSE {:.5}, flat MSE {:.5}",
                style, report.textured_mse, report.flat_mse
            );
            if let Some(max) = max_textured_mse {
                pass &= report.textured_mse <= max;
            }
            write_report(&out, &serde_json::to_string_pretty(&report)?)?;
        }
        Experiment::Translation {
            manifest,
            direction,
            seed,
            epochs,
            out,
            min_ssim,
            min_psnr_db,
        } => {
            let direction = parse_direction(&direction)?;
            let (manifest, base) = load_manifest(&manifest)?;
            let cfg = GanConfig {
                seed,
                epochs,
                early_stop_ssim: min_ssim,
                early_stop_psnr: min_psnr_db,
                ..Default::default()
            };
            let train =
                PairedSet::from_manifest(&manifest, &base, direction, Split::Train, cfg.image_side)?;
            let val =
                PairedSet::from_manifest(&manifest, &base, direction, Split::Val, cfg.image_side)?;
            let test =
                PairedSet::from_manifest(&manifest, &base, direction, Split::Test, cfg.image_side)?;
            let (gen, history) = train_pix2pix(&train, &val, &cfg)?;
            let report = evaluate_translation(&gen, &test, None, seed)?;
            println!(
                "translation [{}]: n={} SSIM {:.4} PSNR {:.2} dB",
                direction.name(),
                report.n,
                report.mean_ssim,
                report.mean_psnr_db
            );
            if let Some(min) = min_ssim {
                pass &= report.mean_ssim >= min;
            }
            if let Some(min) = min_psnr_db {
                pass &= report.mean_psnr_db >= min;
            }
            std::fs::create_dir_all(&out)?;
            gen.save(&out.join(format!("{}_gan.tsnn", direction.name())))?;
            write_report(
                &out.join(format!("{}_history.json", direction.name())),
                &serde_json::to_string_pretty(&history)?,
            )?;
            write_report(
                &out.join(format!("{}_eval.json", direction.name())),
                &serde_json::to_string_pretty(&report)?,
            )?;
        }
    }
    if assert && !pass {
        eprintln!("assertion failed: threshold violated");
        return Ok(false);
    }
    Ok(true)
}

/// Rough wall-clock numbers for the hot paths; `cargo bench` has the
/// statistically careful version.
fn quick_bench() -> Result<(), Error> {
    use std::time::Instant;
    use tacsim_core::contact::{contact_solve, IndenterShape, Pose6};
    use tacsim_core::data::ContactScenario;
    use tacsim_core::metrics::{ssim, SsimParams};
    use tacsim_core::render::render_scenario;

    let config = SensorConfig::default();
    let params = RenderParams::default();
    let sc = ContactScenario::sample_press(1, 1, IndenterShape::with_params(2, vec![5.0]));

    let t = Instant::now();
    let n = 10;
    for _ in 0..n {
        contact_solve(&sc.shape, &sc.pose, 0.0, &config)?;
    }
    println!("contact_solve: {:.1} ms/iter", t.elapsed().as_secs_f64() * 1e3 / n as f64);

    let t = Instant::now();
    let mut img = None;
    for _ in 0..n {
        img = Some(render_scenario(&sc, RenderStyle::ViTacTip, &config, &params)?);
    }
    println!("render 256x256: {:.1} ms/iter", t.elapsed().as_secs_f64() * 1e3 / n as f64);

    let a = img.unwrap();
    let b = render_scenario(
        &ContactScenario::sample_press(2, 1, IndenterShape::with_params(2, vec![5.0])),
        RenderStyle::ViTacTip,
        &config,
        &params,
    )?;
    let t = Instant::now();
    for _ in 0..n {
        ssim(&a, &b, &SsimParams::default())?;
    }
    println!("ssim 256x256: {:.1} ms/iter", t.elapsed().as_secs_f64() * 1e3 / n as f64);

    let p = Pose6::press(0.0, 0.0, 1.0, 0.0);
    let _ = p;
    Ok(())
}
