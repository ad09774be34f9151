//! Single executable exposing the whole pipeline: pose/trajectory
//! generation, displacement encoding, dataset rendering, staged training,
//! sampling, evaluation, and the trajectory-curriculum ablation.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use motionctrl_core::camera::{make_basic_pose_sequence, poses_from_json, poses_to_json, BasicMotion};
use motionctrl_core::diffusion::{latent_to_video, make_schedule, sample, SampleConditions, SamplerKind};
use motionctrl_core::synthdata::{hex_digest, render_dataset, DatasetConfig};
use motionctrl_core::tensor::io::write_tensor_file;
use motionctrl_core::tensor::Tensor;
use motionctrl_core::trajectory::{
    encode_displacement, gaussian_filter_map, make_bezier_trajectory, trajectories_from_json,
    trajectories_to_json, TrajectorySet,
};
use motionctrl_core::training::{
    checkpoint_hash, evaluate, load_checkpoint, read_ablation_config, read_eval_manifest,
    read_stage_config, run_omcm_ablation, save_checkpoint, train_stage, write_loss_log,
    write_report,
};
use motionctrl_core::unet::{TokenSequence, UNet};

#[derive(Parser)]
#[command(name = "motionctrl", version, about = "Camera- and object-motion controlled video diffusion, desk scale")]
struct Cli {
    /// Seed override; every subcommand is deterministic for a fixed seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one of the eight basic camera pose sequences as pose JSON.
    GenPoses {
        /// pan_left|pan_right|pan_up|pan_down|zoom_in|zoom_out|rot_ccw|rot_cw
        #[arg(long)]
        kind: String,
        #[arg(long)]
        frames: usize,
        /// Units per frame for pans/zooms, radians per frame for rolls.
        #[arg(long)]
        speed: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample a Bezier trajectory (2-4 control points) into trajectory JSON.
    GenTraj {
        /// Control points as "x,y;x,y;x,y"; repeat for several trajectories.
        #[arg(long, required = true)]
        control: Vec<String>,
        #[arg(long)]
        frames: usize,
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode trajectory JSON into a displacement-map tensor binary.
    EncodeTraj {
        #[arg(long)]
        traj: PathBuf,
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
        /// Optional Gaussian filter width (latent pixels).
        #[arg(long)]
        filter_sigma: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a synthetic dataset from a dataset config JSON.
    RenderData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one stage from a stage config JSON.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample a video from a checkpoint; conditions are independently
    /// omissible.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated token ids, e.g. "2,13".
        #[arg(long)]
        tokens: String,
        /// Optional pose JSON condition.
        #[arg(long)]
        poses: Option<PathBuf>,
        /// Optional trajectory JSON condition.
        #[arg(long)]
        traj: Option<PathBuf>,
        #[arg(long, default_value_t = 25)]
        steps: usize,
        /// Use the zero-added-noise sampler.
        #[arg(long)]
        deterministic: bool,
        #[arg(long, default_value_t = 1.5)]
        filter_sigma: f64,
        /// Output prefix; writes <out>.mct, <out>.png, <out>.provenance.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint over an eval manifest into report JSON + CSV.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the dense/sparse/dense+sparse trajectory-curriculum ablation.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Serialize)]
struct Provenance<'a> {
    version: &'a str,
    seed: Option<u64>,
    config_hash: String,
}

fn write_provenance(target: &Path, is_dir: bool, seed: Option<u64>, hash_input: &str) -> Result<()> {
    let record = Provenance {
        version: env!("CARGO_PKG_VERSION"),
        seed,
        config_hash: hex_digest(hash_input.as_bytes()),
    };
    let path = if is_dir {
        std::fs::create_dir_all(target)?;
        target.join("provenance.json")
    } else {
        let mut name = target.file_name().unwrap_or_default().to_os_string();
        name.push(".provenance.json");
        target.with_file_name(name)
    };
    std::fs::write(&path, serde_json::to_string_pretty(&record)?)?;
    Ok(())
}

fn parse_control(spec: &str) -> Result<Vec<(f64, f64)>> {
    spec.split(';')
        .map(|pt| {
            let (x, y) = pt
                .split_once(',')
                .with_context(|| format!("control point `{pt}` is not x,y"))?;
            Ok((x.trim().parse()?, y.trim().parse()?))
        })
        .collect()
}

fn parse_tokens(spec: &str) -> Result<Vec<usize>> {
    spec.split(',')
        .map(|t| t.trim().parse::<usize>().context("token ids are integers"))
        .collect()
}

/// Upscaled horizontal strip of all frames for quick visual inspection.
fn write_frame_strip(path: &Path, video: &Tensor<f64>) -> Result<()> {
    let s = video.shape();
    let (l, h, w) = (s[0], s[1], s[2]);
    let scale = 4usize;
    let mut img = image::RgbImage::new((l * w * scale) as u32, (h * scale) as u32);
    for f in 0..l {
        for y in 0..h {
            for x in 0..w {
                let base = ((f * h + y) * w + x) * 3;
                let px = image::Rgb([
                    (video.data()[base].clamp(0.0, 1.0) * 255.0) as u8,
                    (video.data()[base + 1].clamp(0.0, 1.0) * 255.0) as u8,
                    (video.data()[base + 2].clamp(0.0, 1.0) * 255.0) as u8,
                ]);
                for dy in 0..scale {
                    for dx in 0..scale {
                        img.put_pixel(
                            ((f * w + x) * scale + dx) as u32,
                            (y * scale + dy) as u32,
                            px,
                        );
                    }
                }
            }
        }
    }
    img.save(path)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenPoses {
            kind,
            frames,
            speed,
            out,
        } => {
            let kind = BasicMotion::from_str(&kind)?;
            let ps = make_basic_pose_sequence(kind, frames, speed)?;
            std::fs::write(&out, poses_to_json(&ps))?;
            let hash_src = format!("gen-poses {} {frames} {speed}", kind.name());
            write_provenance(&out, false, cli.seed, &hash_src)?;
            println!("wrote {} ({} frames)", out.display(), frames);
        }
        Command::GenTraj {
            control,
            frames,
            height,
            width,
            out,
        } => {
            let mut trajectories = Vec::new();
            for spec in &control {
                let points = parse_control(spec)?;
                trajectories.push(make_bezier_trajectory(frames, &points, height, width)?);
            }
            let set = TrajectorySet::new(trajectories)?;
            std::fs::write(&out, trajectories_to_json(&set))?;
            write_provenance(&out, false, cli.seed, &format!("gen-traj {control:?} {frames}"))?;
            println!("wrote {} ({} trajectories)", out.display(), set.count());
        }
        Command::EncodeTraj {
            traj,
            height,
            width,
            filter_sigma,
            out,
        } => {
            let set = trajectories_from_json(&std::fs::read_to_string(&traj)?)?;
            let mut map = encode_displacement::<f32>(&set, height, width)?;
            if let Some(sigma) = filter_sigma {
                map = gaussian_filter_map(&map, sigma)?;
            }
            write_tensor_file(&out, &map.to_tensor())?;
            write_provenance(&out, false, cli.seed, &format!("encode-traj {height}x{width} {filter_sigma:?}"))?;
            println!("wrote {}", out.display());
        }
        Command::RenderData { config, out } => {
            let text = std::fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let mut cfg: DatasetConfig = serde_json::from_str(&text)?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let manifest = render_dataset(&cfg, &out)?;
            write_provenance(&out, true, Some(cfg.seed), &text)?;
            println!(
                "rendered {} samples into {}",
                manifest.samples.len(),
                out.display()
            );
        }
        Command::Train { config, out } => {
            let text = std::fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let mut cfg = read_stage_config(&config)?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let result = train_stage::<f32>(&cfg)?;
            save_checkpoint(&out, &result.checkpoint)?;
            write_loss_log(&out.join("loss_log.jsonl"), &result.losses)?;
            write_provenance(&out, true, Some(cfg.seed), &text)?;
            let last = result.losses.last().map(|r| r.loss);
            println!(
                "stage {} done ({} iterations, final loss {:?}); checkpoint {} [{}]",
                cfg.stage.name(),
                result.losses.len(),
                last,
                out.display(),
                checkpoint_hash(&out)?
            );
        }
        Command::Sample {
            checkpoint,
            tokens,
            poses,
            traj,
            steps,
            deterministic,
            filter_sigma,
            out,
        } => {
            let ckpt = load_checkpoint::<f32>(&checkpoint)?;
            let cfg = ckpt.config.clone();
            let model = UNet::from_param_map(&cfg, &ckpt.params, None)?;
            let schedule = make_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end)?;
            let tokens = TokenSequence::new(parse_tokens(&tokens)?);
            let rt = match &poses {
                Some(path) => {
                    let ps = poses_from_json(&std::fs::read_to_string(path)?)?;
                    let rel = motionctrl_core::camera::normalize_relative(&ps);
                    Some(motionctrl_core::camera::flatten_pose_sequence(&rel).cast::<f32>())
                }
                None => None,
            };
            let tm = match &traj {
                Some(path) => {
                    let set = trajectories_from_json(&std::fs::read_to_string(path)?)?;
                    let map = encode_displacement::<f32>(&set, cfg.height, cfg.width)?;
                    Some(gaussian_filter_map(&map, filter_sigma)?)
                }
                None => None,
            };
            let seed = cli.seed.unwrap_or(0);
            let kind = if deterministic {
                SamplerKind::Deterministic
            } else {
                SamplerKind::Ancestral
            };
            let latent = sample(
                &model,
                &schedule,
                &SampleConditions {
                    tokens: &tokens,
                    rt: rt.as_ref(),
                    trajectory_map: tm.as_ref(),
                },
                steps,
                kind,
                seed,
            )?;
            let video = latent_to_video(&latent).permute(&[0, 2, 3, 1])?;
            let mct = out.with_extension("mct");
            write_tensor_file(&mct, &video)?;
            write_frame_strip(&out.with_extension("png"), &video.cast::<f64>())?;
            write_provenance(
                &mct,
                false,
                Some(seed),
                &format!("sample {steps} {deterministic} {:?} {:?}", poses, traj),
            )?;
            println!("wrote {} and {}", mct.display(), out.with_extension("png").display());
        }
        Command::Eval {
            checkpoint,
            manifest,
            out,
        } => {
            let text = std::fs::read_to_string(&manifest)
                .with_context(|| format!("reading {}", manifest.display()))?;
            let mut m = read_eval_manifest(&manifest)?;
            if let Some(seed) = cli.seed {
                m.seed = seed;
            }
            let ckpt = load_checkpoint::<f32>(&checkpoint)?;
            let base_dir = manifest.parent().unwrap_or(Path::new("."));
            let report = evaluate(&ckpt, &m, base_dir)?;
            write_report(&out, &report)?;
            write_provenance(&out, true, Some(m.seed), &text)?;
            println!(
                "evaluated {} cases ({} failures, valid={}); cammc={:?} objmc={:?}",
                report.n_cases, report.failures, report.valid, report.cammc_mean, report.objmc_mean
            );
        }
        Command::Ablate { config, out } => {
            let text = std::fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let mut cfg = read_ablation_config(&config)?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let report = run_omcm_ablation::<f32>(&cfg, &out)?;
            write_provenance(&out, true, Some(cfg.seed), &text)?;
            println!("{}", report.table);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
