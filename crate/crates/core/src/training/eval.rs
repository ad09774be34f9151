//! Sampling-based evaluation: generate (or render) one video per case,
//! recover its motion with the synthetic-data oracles, and score CamMC /
//! ObjMC against the conditioning — plus shuffled-condition controls.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{
    cammc, flatten_pose_sequence, make_basic_pose_sequence, normalize_relative, BasicMotion,
    PoseSequence,
};
use crate::diffusion::{latent_to_video, make_schedule, sample, SampleConditions, SamplerKind};
use crate::synthdata::{
    derive_seed, detect_object_trajectory, estimate_camera_motion, render_ground_truth,
    WorldGeometry, SPRITE_PALETTE,
};
use crate::tensor::{Scalar, Tensor};
use crate::trajectory::{
    encode_displacement, gaussian_filter_map, make_bezier_trajectory, objmc, Trajectory,
    TrajectorySet,
};
use crate::unet::{TokenSequence, UNet};

use super::{CheckpointData, Result, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Sample videos from the checkpointed model.
    #[default]
    Model,
    /// Render ground-truth videos directly from the conditions, bypassing
    /// the model; measures the oracle ceiling.
    GroundTruth,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PoseSpec {
    Basic { kind: BasicMotion, speed: f64 },
    File { file: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalCase {
    pub id: String,
    pub tokens: Vec<usize>,
    #[serde(default)]
    pub pose: Option<PoseSpec>,
    #[serde(default)]
    pub trajectories: Option<Vec<Vec<[f64; 2]>>>,
    /// Palette indices aligned with `trajectories`.
    #[serde(default)]
    pub sprite_colors: Vec<usize>,
}

fn default_steps() -> usize {
    25
}
fn default_ppu() -> f64 {
    16.0
}
fn default_zoom_k() -> f64 {
    1.0
}
fn default_sigma() -> f64 {
    crate::trajectory::DEFAULT_FILTER_SIGMA
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalManifest {
    #[serde(default)]
    pub mode: EvalMode,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub sampler: SamplerKind,
    pub seed: u64,
    #[serde(default = "default_ppu")]
    pub pixels_per_unit: f64,
    #[serde(default = "default_zoom_k")]
    pub zoom_log_scale: f64,
    #[serde(default = "default_sigma")]
    pub filter_sigma: f64,
    pub cases: Vec<EvalCase>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub failed: bool,
    pub cammc: Option<f64>,
    pub cammc_shuffled: Option<f64>,
    pub objmc: Option<f64>,
    pub objmc_shuffled: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_cases: usize,
    pub failures: usize,
    /// False when oracle recovery failed on more than 10% of cases.
    pub valid: bool,
    pub cammc_mean: Option<f64>,
    pub cammc_shuffled_mean: Option<f64>,
    pub objmc_mean: Option<f64>,
    pub objmc_shuffled_mean: Option<f64>,
    pub rows: Vec<EvalRow>,
}

pub fn read_eval_manifest(path: &Path) -> Result<EvalManifest> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))
}

fn resolve_pose(
    spec: &PoseSpec,
    frames: usize,
    base_dir: &Path,
) -> Result<PoseSequence> {
    let ps = match spec {
        PoseSpec::Basic { kind, speed } => make_basic_pose_sequence(*kind, frames, *speed)?,
        PoseSpec::File { file } => {
            let text = std::fs::read_to_string(base_dir.join(file))?;
            crate::camera::poses_from_json(&text)?
        }
    };
    if ps.len() != frames {
        return Err(TrainError::Eval(format!(
            "pose sequence has {} frames, model expects {frames}",
            ps.len()
        )));
    }
    Ok(normalize_relative(&ps))
}

struct CaseOutcome {
    est_poses: Option<PoseSequence>,
    det_trajs: Option<TrajectorySet>,
    cond_poses: Option<PoseSequence>,
    cond_trajs: Option<TrajectorySet>,
    failed: bool,
}

/// Evaluate a checkpoint over an eval manifest. Per-case videos are sampled
/// (or rendered in ground-truth mode), motion is recovered by the oracles,
/// and each case is scored against its own conditioning as well as another
/// case's (the shuffled control).
pub fn evaluate<S: Scalar>(
    ckpt: &CheckpointData<S>,
    manifest: &EvalManifest,
    base_dir: &Path,
) -> Result<EvalReport> {
    let cfg = &ckpt.config;
    let model = UNet::from_param_map(cfg, &ckpt.params, None)?;
    let schedule = make_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end)?;
    let geom = WorldGeometry::for_latent(
        cfg.height,
        cfg.width,
        manifest.pixels_per_unit,
        manifest.zoom_log_scale,
    );

    let outcomes: Vec<Result<CaseOutcome>> = manifest
        .cases
        .par_iter()
        .enumerate()
        .map(|(i, case)| -> Result<CaseOutcome> {
            let cond_poses = match &case.pose {
                Some(spec) => Some(resolve_pose(spec, cfg.frames, base_dir)?),
                None => None,
            };
            let cond_trajs = match &case.trajectories {
                Some(list) => {
                    let trajs: Vec<Trajectory> = list
                        .iter()
                        .map(|pts| {
                            Trajectory::new(pts.iter().map(|&[x, y]| (x, y)).collect())
                        })
                        .collect::<std::result::Result<_, _>>()?;
                    Some(TrajectorySet::new(trajs)?)
                }
                None => None,
            };

            let case_seed = derive_seed(manifest.seed, i as u64);
            let video: Tensor<f64> = match manifest.mode {
                EvalMode::Model => {
                    let rt = cond_poses
                        .as_ref()
                        .map(|ps| flatten_pose_sequence(ps).cast::<S>());
                    let tm = match &cond_trajs {
                        Some(ts) => {
                            let map = encode_displacement::<S>(ts, cfg.height, cfg.width)?;
                            Some(gaussian_filter_map(&map, manifest.filter_sigma)?)
                        }
                        None => None,
                    };
                    let tokens = TokenSequence::new(case.tokens.clone());
                    let latent = sample(
                        &model,
                        &schedule,
                        &SampleConditions {
                            tokens: &tokens,
                            rt: rt.as_ref(),
                            trajectory_map: tm.as_ref(),
                        },
                        manifest.steps,
                        manifest.sampler,
                        case_seed,
                    )?;
                    latent_to_video(&latent).permute(&[0, 2, 3, 1])?.cast::<f64>()
                }
                EvalMode::GroundTruth => {
                    let poses = cond_poses
                        .clone()
                        .unwrap_or(PoseSequence::identity(cfg.frames)?);
                    render_ground_truth(
                        cfg.frames,
                        cfg.height,
                        cfg.width,
                        4,
                        &geom,
                        &poses,
                        cond_trajs.as_ref(),
                        &case.sprite_colors,
                        derive_seed(case_seed, 7),
                        2.4,
                    )?
                }
            };

            let mut failed = false;
            let est_poses = if cond_poses.is_some() {
                match estimate_camera_motion(&video, &geom) {
                    Ok(ps) => Some(ps),
                    Err(e) => {
                        log::warn!("case {}: camera recovery failed: {e}", case.id);
                        failed = true;
                        None
                    }
                }
            } else {
                None
            };
            let det_trajs = if let Some(cond) = &cond_trajs {
                let mut dets = Vec::with_capacity(cond.count());
                let mut ok = true;
                for (k, _) in cond.trajectories().iter().enumerate() {
                    let color_idx = case.sprite_colors.get(k).copied().unwrap_or(0);
                    match detect_object_trajectory(&video, SPRITE_PALETTE[color_idx]) {
                        Ok(t) => dets.push(t),
                        Err(e) => {
                            log::warn!("case {}: detection failed: {e}", case.id);
                            ok = false;
                            break;
                        }
                    }
                }
                if ok {
                    Some(TrajectorySet::new(dets)?)
                } else {
                    failed = true;
                    None
                }
            } else {
                None
            };
            Ok(CaseOutcome {
                est_poses,
                det_trajs,
                cond_poses,
                cond_trajs,
                failed,
            })
        })
        .collect();

    let outcomes: Vec<CaseOutcome> = outcomes.into_iter().collect::<Result<_>>()?;

    // Shuffled controls pair each estimate with the next conditioned case.
    let pose_group: Vec<usize> = (0..outcomes.len())
        .filter(|&i| outcomes[i].cond_poses.is_some())
        .collect();
    let traj_group: Vec<usize> = (0..outcomes.len())
        .filter(|&i| outcomes[i].cond_trajs.is_some())
        .collect();
    let next_in = |group: &[usize], i: usize| -> Option<usize> {
        if group.len() < 2 {
            return None;
        }
        let pos = group.iter().position(|&g| g == i)?;
        Some(group[(pos + 1) % group.len()])
    };

    let mut rows = Vec::with_capacity(outcomes.len());
    for (i, (case, out)) in manifest.cases.iter().zip(&outcomes).enumerate() {
        let cammc_val = match (&out.est_poses, &out.cond_poses) {
            (Some(est), Some(cond)) => Some(cammc(est, cond)?),
            _ => None,
        };
        let cammc_shuffled = match &out.est_poses {
            Some(est) => match next_in(&pose_group, i) {
                Some(j) => Some(cammc(est, outcomes[j].cond_poses.as_ref().unwrap())?),
                None => None,
            },
            None => None,
        };
        let objmc_val = match (&out.det_trajs, &out.cond_trajs) {
            (Some(det), Some(cond)) => Some(objmc(det, cond)?),
            _ => None,
        };
        let objmc_shuffled = match &out.det_trajs {
            Some(det) => match next_in(&traj_group, i) {
                Some(j) => {
                    let other = outcomes[j].cond_trajs.as_ref().unwrap();
                    if other.count() == det.count() {
                        Some(objmc(det, other)?)
                    } else {
                        None
                    }
                }
                None => None,
            },
            None => None,
        };
        rows.push(EvalRow {
            id: case.id.clone(),
            failed: out.failed,
            cammc: cammc_val,
            cammc_shuffled,
            objmc: objmc_val,
            objmc_shuffled,
        });
    }

    let failures = rows.iter().filter(|r| r.failed).count();
    let mean = |get: &dyn Fn(&EvalRow) -> Option<f64>| -> Option<f64> {
        let vals: Vec<f64> = rows.iter().filter_map(|r| get(r)).collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    };
    let n_cases = rows.len();
    Ok(EvalReport {
        n_cases,
        failures,
        valid: failures * 10 <= n_cases,
        cammc_mean: mean(&|r| r.cammc),
        cammc_shuffled_mean: mean(&|r| r.cammc_shuffled),
        objmc_mean: mean(&|r| r.objmc),
        objmc_shuffled_mean: mean(&|r| r.objmc_shuffled),
        rows,
    })
}

/// Write `report.json` and `report.csv` into `dir`.
pub fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(report).expect("report serializes"),
    )?;
    let mut csv = String::from("id,failed,cammc,cammc_shuffled,objmc,objmc_shuffled\n");
    let fmt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for r in &report.rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.id,
            r.failed,
            fmt(r.cammc),
            fmt(r.cammc_shuffled),
            fmt(r.objmc),
            fmt(r.objmc_shuffled)
        ));
    }
    std::fs::write(dir.join("report.csv"), csv)?;
    Ok(())
}

/// Camera-control cases covering all eight basic poses at several speeds.
/// Tokens carry only the speed bucket, never the direction.
pub fn standard_camera_cases(frames: usize) -> Vec<EvalCase> {
    let speeds = [0.03, 0.045, 0.06, 0.075];
    let mut cases = Vec::new();
    for kind in BasicMotion::ALL {
        for &speed in &speeds {
            let (s, geom) = (
                make_basic_pose_sequence(kind, frames, speed).unwrap(),
                WorldGeometry::for_latent(32, 32, default_ppu(), default_zoom_k()),
            );
            let bucket = crate::synthdata::camera_speed_token(&s, &geom);
            cases.push(EvalCase {
                id: format!("{}_{speed}", kind.name()),
                tokens: vec![bucket, crate::synthdata::vocab::COUNT_BASE],
                pose: Some(PoseSpec::Basic { kind, speed }),
                trajectories: None,
                sprite_colors: vec![],
            });
        }
    }
    cases
}

/// Object-control cases: one Bezier trajectory each, with a static camera
/// implied by omitting the pose condition.
pub fn standard_object_cases(frames: usize, height: usize, width: usize, n: usize) -> Vec<EvalCase> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x0B1EC7);
    let margin = 5.0;
    let (w, h) = (width as f64, height as f64);
    (0..n)
        .map(|i| {
            let p0 = (
                rng.random_range(margin..w - 1.0 - margin),
                rng.random_range(margin..h - 1.0 - margin),
            );
            let mut control = vec![p0];
            for _ in 0..2 {
                let last = *control.last().unwrap();
                control.push((
                    (last.0 + rng.random_range(-12.0..12.0)).clamp(margin, w - 1.0 - margin),
                    (last.1 + rng.random_range(-12.0..12.0)).clamp(margin, h - 1.0 - margin),
                ));
            }
            let traj = make_bezier_trajectory(frames, &control, height, width).unwrap();
            let color = i % SPRITE_PALETTE.len();
            EvalCase {
                id: format!("traj_{i:02}"),
                tokens: vec![
                    crate::synthdata::vocab::CAM_STATIC,
                    crate::synthdata::vocab::COUNT_BASE + 1,
                    crate::synthdata::vocab::COLOR_BASE + color,
                    crate::synthdata::vocab::SHAPE_DISK,
                ],
                pose: None,
                trajectories: Some(
                    traj.points.iter().map(|&(x, y)| [x, y]).collect::<Vec<_>>(),
                )
                .map(|pts| vec![pts]),
                sprite_colors: vec![color],
            }
        })
        .collect()
}
