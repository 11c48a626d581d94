mod config;
mod error;
mod inspect;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use splatpress_core::codec::{self, Ordering};
use splatpress_core::metrics::{psnr, quality_report, ssim};
use splatpress_core::pipeline::{self, ply_size, run_pipeline, PipelineConfig};
use splatpress_core::quantization::{init_quantizers, quantize_scene, AttributeBits};
use splatpress_core::render::rasterize;
use splatpress_core::synth::{make_scene, Layout, SynthSpec};
use splatpress_core::views::{load_views, read_camera, read_png, save_views, write_png};
use splatpress_core::{ply, Scene, View};

use config::{Needs, Overrides};
use error::CliError;

/// Compress 3D Gaussian Splatting scenes: prune, quantize, entropy-code.
#[derive(Debug, Parser)]
#[command(name = "splatpress", version)]
struct Cli {
    /// Print machine-readable JSON reports on standard output.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Flat JSON file with pipeline settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct GammaArgs {
    /// Fraction pruned in each round.
    #[arg(long, conflicts_with = "gamma_target")]
    gamma_iter: Option<f64>,
    /// Overall fraction to prune across all rounds.
    #[arg(long)]
    gamma_target: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Prune with fine-tuning, quantization-aware fine-tuning, then encode.
    Pipeline {
        /// Input scene (.ply).
        input: PathBuf,
        /// Directory holding cameras.json and the view images.
        views: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        gamma: GammaArgs,
        /// Output container.
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Iterative pruning with fine-tuning; writes a PLY.
    Prune {
        input: PathBuf,
        views: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        gamma: GammaArgs,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Quantization-aware fine-tuning; writes a container.
    Qat {
        input: PathBuf,
        views: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Quantize at the initial step sizes and encode, without training.
    Encode {
        input: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Use this bit depth for every attribute.
        #[arg(long)]
        bits: Option<u8>,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Decode a container into a PLY with dequantized values.
    Decode {
        input: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Rasterize a PLY or container from one camera into a PNG.
    Render {
        input: PathBuf,
        /// Camera JSON: width, height, fx, fy, cx, cy, rotation, translation.
        camera: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Summarize a PLY or container: ranges, opacity histogram, entropy, sizes.
    Inspect { input: PathBuf },
    /// PSNR and SSIM between two images, optionally with a size ratio.
    Metrics {
        rendered: PathBuf,
        reference: PathBuf,
        /// Compressed file whose size enters the ratio.
        #[arg(long, requires = "original")]
        compressed: Option<PathBuf>,
        /// Uncompressed file whose size enters the ratio.
        #[arg(long, requires = "compressed")]
        original: Option<PathBuf>,
    },
    /// Generate a synthetic scene.ply plus a views directory.
    Synth {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 256)]
        gaussians: usize,
        #[arg(long, default_value_t = 0.5)]
        redundant: f64,
        #[arg(long, value_enum, default_value_t = LayoutArg::Curve)]
        layout: LayoutArg,
        #[arg(long, default_value_t = 4)]
        views: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
        #[arg(long, default_value_t = 32)]
        height: usize,
        /// Output directory.
        #[arg(long, short)]
        output: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LayoutArg {
    Curve,
    Cluster,
    Grid,
}

impl From<LayoutArg> for Layout {
    fn from(l: LayoutArg) -> Self {
        match l {
            LayoutArg::Curve => Layout::Curve,
            LayoutArg::Cluster => Layout::Cluster,
            LayoutArg::Grid => Layout::Grid,
        }
    }
}

/// A command's result: the JSON report and its one-paragraph summary.
struct Report {
    json: serde_json::Value,
    summary: String,
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn read_ply(path: &Path) -> Result<Scene, CliError> {
    ply::read_scene(&read_file(path)?).map_err(|e| CliError::from(e).in_file(path))
}

fn read_container(path: &Path) -> Result<codec::Container, CliError> {
    codec::decode(&read_file(path)?).map_err(|e| CliError::from(e).in_file(path))
}

/// Loads a scene from either file kind, telling them apart by the magic bytes.
fn read_any_scene(path: &Path) -> Result<Scene, CliError> {
    let bytes = read_file(path)?;
    let scene = if bytes.starts_with(&codec::MAGIC) {
        codec::decode(&bytes)
            .map_err(CliError::from)
            .and_then(|c| Ok(c.scene.dequantize()?))
    } else {
        ply::read_scene(&bytes).map_err(CliError::from)
    };
    scene.map_err(|e| e.in_file(path))
}

fn read_views(dir: &Path) -> Result<Vec<View>, CliError> {
    Ok(load_views(dir)?)
}

fn pipeline_config(config: &ConfigArgs, gamma: Option<&GammaArgs>, needs: Needs) -> Result<PipelineConfig, CliError> {
    let overrides = Overrides {
        seed: config.seed,
        gamma_iter: gamma.and_then(|g| g.gamma_iter),
        gamma_target: gamma.and_then(|g| g.gamma_target),
    };
    config::load(config.config.as_deref(), overrides, needs)
}

fn ordering(cfg: &PipelineConfig) -> Ordering {
    if cfg.morton {
        Ordering::Morton
    } else {
        Ordering::Original
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).expect("reports serialize")
}

fn run(command: Command) -> Result<Report, CliError> {
    match command {
        Command::Pipeline {
            input,
            views,
            config,
            gamma,
            output,
        } => {
            let cfg = pipeline_config(&config, Some(&gamma), Needs { seed: true, gamma: true })?;
            let scene = read_ply(&input)?;
            let views = read_views(&views)?;
            let out = run_pipeline(&scene, &views, &cfg)?;
            write_file(&output, &out.container)?;
            let r = &out.report;
            Ok(Report {
                summary: format!(
                    "{} → {} gaussians in {} rounds; {} bytes ({:.1}× smaller than PLY); mean PSNR {:.2} dB, SSIM {:.4}",
                    r.input_count,
                    r.final_count,
                    r.rounds.len(),
                    r.container_bytes,
                    r.compression_ratio,
                    r.mean_psnr,
                    r.mean_ssim
                ),
                json: to_json(r),
            })
        }
        Command::Prune {
            input,
            views,
            config,
            gamma,
            output,
        } => {
            let cfg = pipeline_config(&config, Some(&gamma), Needs { seed: true, gamma: true })?;
            let scene = read_ply(&input)?;
            let views = read_views(&views)?;
            let (pruned, rounds) = pipeline::prune_stage(&scene, &views, &cfg)?;
            write_file(&output, &ply::write_scene(&pruned))?;
            Ok(Report {
                summary: format!("{} → {} gaussians in {} rounds", scene.len(), pruned.len(), rounds.len()),
                json: json!({
                    "seed": cfg.seed,
                    "gamma_iter": cfg.resolved_gamma_iter()?,
                    "input_count": scene.len(),
                    "final_count": pruned.len(),
                    "rounds": rounds,
                }),
            })
        }
        Command::Qat {
            input,
            views,
            config,
            output,
        } => {
            let cfg = pipeline_config(&config, None, Needs { seed: true, gamma: false })?;
            let scene = read_ply(&input)?;
            let views = read_views(&views)?;
            let qat = pipeline::qat_stage(&scene, &views, &cfg)?;
            let quantized = quantize_scene(&qat.scene, &qat.quantizers)?;
            let (bytes, streams) = codec::encode_with_sizes(&quantized, ordering(&cfg))?;
            write_file(&output, &bytes)?;
            let (first, last) = (qat.losses.first().copied(), qat.losses.last().copied());
            Ok(Report {
                summary: match (first, last) {
                    (Some(a), Some(b)) => format!(
                        "{} steps, loss {a:.6} → {b:.6}; {} bytes",
                        qat.losses.len(),
                        bytes.len()
                    ),
                    _ => format!("no training steps; {} bytes", bytes.len()),
                },
                json: json!({
                    "seed": cfg.seed,
                    "count": scene.len(),
                    "quantizers": qat.quantizers,
                    "loss_first": first,
                    "loss_last": last,
                    "streams": streams,
                    "container_bytes": bytes.len(),
                }),
            })
        }
        Command::Encode {
            input,
            config,
            bits,
            output,
        } => {
            let mut cfg = pipeline_config(&config, None, Needs { seed: false, gamma: false })?;
            if let Some(b) = bits {
                cfg.bits = AttributeBits::uniform(b);
                cfg.validate()?;
            }
            let scene = read_ply(&input)?;
            let quantized = quantize_scene(&scene, &init_quantizers(&scene, &cfg.bits)?)?;
            let (bytes, streams) = codec::encode_with_sizes(&quantized, ordering(&cfg))?;
            write_file(&output, &bytes)?;
            Ok(Report {
                summary: format!("{} gaussians → {} bytes", scene.len(), bytes.len()),
                json: json!({
                    "count": scene.len(),
                    "quantizers": quantized.quantizers,
                    "streams": streams,
                    "raw_bytes": ply_size(scene.len()),
                    "container_bytes": bytes.len(),
                }),
            })
        }
        Command::Decode { input, output } => {
            let container = read_container(&input)?;
            let scene: Scene = container.scene.dequantize()?;
            let bytes = ply::write_scene(&scene);
            write_file(&output, &bytes)?;
            Ok(Report {
                summary: format!("{} gaussians → {}", scene.len(), output.display()),
                json: json!({ "count": scene.len(), "morton": container.morton, "ply_bytes": bytes.len() }),
            })
        }
        Command::Render { input, camera, output } => {
            let scene = read_any_scene(&input)?;
            let camera = read_camera(&camera)?;
            camera.validate()?;
            let image = rasterize(&scene, &camera)?;
            write_png(&output, &image)?;
            Ok(Report {
                summary: format!("{} gaussians → {}×{} {}", scene.len(), camera.width, camera.height, output.display()),
                json: json!({ "count": scene.len(), "width": camera.width, "height": camera.height }),
            })
        }
        Command::Inspect { input } => {
            let bytes = read_file(&input)?;
            let summary = inspect::inspect(&bytes).map_err(|e| e.in_file(&input))?;
            Ok(Report {
                summary: summary.text(),
                json: to_json(&summary),
            })
        }
        Command::Metrics {
            rendered,
            reference,
            compressed,
            original,
        } => {
            let a: splatpress_core::Image = read_png(&rendered)?;
            let b = read_png(&reference)?;
            let json = match (compressed, original) {
                (Some(c), Some(o)) => {
                    let size = |p: &Path| std::fs::metadata(p).map(|m| m.len()).map_err(|e| CliError::io(p, e));
                    to_json(&quality_report(&a, &b, size(&c)?, size(&o)?)?)
                }
                _ => {
                    let p = psnr(&a, &b)?;
                    json!({ "psnr": if p.is_finite() { json!(p) } else { json!("inf") }, "ssim": ssim(&a, &b)? })
                }
            };
            Ok(Report {
                summary: format!("PSNR {} dB, SSIM {}", json["psnr"], json["ssim"]),
                json,
            })
        }
        Command::Synth {
            seed,
            gaussians,
            redundant,
            layout,
            views,
            width,
            height,
            output,
        } => {
            let spec = SynthSpec {
                seed,
                n_gaussians: gaussians,
                fraction_redundant: redundant,
                layout: layout.into(),
                n_views: views,
                width,
                height,
            };
            let (scene, views) = make_scene::<f32>(&spec)?;
            std::fs::create_dir_all(&output).map_err(|e| CliError::io(&output, e))?;
            write_file(&output.join("scene.ply"), &ply::write_scene(&scene))?;
            save_views(&output.join("views"), &views)?;
            Ok(Report {
                summary: format!(
                    "{} gaussians and {} views → {}",
                    scene.len(),
                    views.len(),
                    output.display()
                ),
                json: json!({ "spec": spec, "scene": "scene.ply", "views": "views" }),
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(report) => {
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&report.json).expect("JSON values print"));
            } else {
                println!("{}", report.summary);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("splatpress: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
