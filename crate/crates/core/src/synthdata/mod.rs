//! Procedural video renderer with exact motion ground truth, plus the
//! motion-recovery oracles that score generated videos.
//!
//! The world is two-dimensional: camera motion is realized as a global
//! similarity warp of a band-limited noise background (translation from
//! `T_x, T_y`, roll from `R`, and log-scale zoom from `T_z`), and objects are
//! colored sprites composited along screen-space trajectories. Ground truth
//! is therefore analytic, and recovery reduces to image registration and
//! chroma-centroid tracking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::camera::{CameraPose, PoseSequence};
use crate::tensor::{Scalar, Tensor};
use crate::trajectory::{Trajectory, TrajectorySet};
use crate::unet::TokenSequence;

mod noise;
mod register;

pub use noise::NoiseField;

use register::FramePlane;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("camera pose is not a pure roll about the viewing axis")]
    NonRollRotation,
    #[error("camera motion estimation failed: {0}")]
    EstimationFailed(String),
    #[error("no pixels matching the sprite color in frame {frame}")]
    DetectionFailed { frame: usize },
    #[error("expected an L x H x W x 3 video tensor, got {0:?}")]
    BadVideoShape(Vec<usize>),
    #[error("invalid dataset config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Camera(#[from] crate::camera::CameraError),
    #[error(transparent)]
    Trajectory(#[from] crate::trajectory::TrajectoryError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad manifest: {0}")]
    Manifest(String),
}

pub type Result<T> = std::result::Result<T, SynthError>;

/// 2-D affine map `q = M p + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine2 {
    pub m: [[f64; 2]; 2],
    pub b: [f64; 2],
}

impl Affine2 {
    pub fn identity() -> Self {
        Affine2 {
            m: [[1.0, 0.0], [0.0, 1.0]],
            b: [0.0, 0.0],
        }
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.m[0][0] * x + self.m[0][1] * y + self.b[0],
            self.m[1][0] * x + self.m[1][1] * y + self.b[1],
        )
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Affine2) -> Affine2 {
        let mut m = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                m[i][j] = self.m[i][0] * other.m[0][j] + self.m[i][1] * other.m[1][j];
            }
        }
        let b = [
            self.m[0][0] * other.b[0] + self.m[0][1] * other.b[1] + self.b[0],
            self.m[1][0] * other.b[0] + self.m[1][1] * other.b[1] + self.b[1],
        ];
        Affine2 { m, b }
    }

    pub fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn inverse(&self) -> Option<Affine2> {
        let d = self.det();
        if d.abs() < 1e-15 {
            return None;
        }
        let m = [
            [self.m[1][1] / d, -self.m[0][1] / d],
            [-self.m[1][0] / d, self.m[0][0] / d],
        ];
        let b = [
            -(m[0][0] * self.b[0] + m[0][1] * self.b[1]),
            -(m[1][0] * self.b[0] + m[1][1] * self.b[1]),
        ];
        Some(Affine2 { m, b })
    }

    pub fn max_abs_diff(&self, other: &Affine2) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                d = d.max((self.m[i][j] - other.m[i][j]).abs());
            }
            d = d.max((self.b[i] - other.b[i]).abs());
        }
        d
    }
}

/// Fixed mapping between pose units and latent pixels.
#[derive(Debug, Clone, Copy)]
pub struct WorldGeometry {
    pub pixels_per_unit: f64,
    pub zoom_log_scale: f64,
    pub center: (f64, f64),
}

impl WorldGeometry {
    pub fn for_latent(height: usize, width: usize, pixels_per_unit: f64, zoom_log_scale: f64) -> Self {
        WorldGeometry {
            pixels_per_unit,
            zoom_log_scale,
            center: ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0),
        }
    }
}

/// Roll angle of a z-axis rotation; errors when `R` moves the z axis.
fn roll_angle(pose: &CameraPose) -> Result<f64> {
    let r = &pose.r;
    let off = r[0][2].abs()
        .max(r[1][2].abs())
        .max(r[2][0].abs())
        .max(r[2][1].abs())
        .max((r[2][2] - 1.0).abs());
    if off > 1e-9 {
        return Err(SynthError::NonRollRotation);
    }
    Ok(r[1][0].atan2(r[0][0]))
}

/// The sampling warp realizing a pose: scale by `exp(k T_z)` and roll about
/// the image center, then shift by `ppu (T_x, T_y)`. Frames sample the scene
/// through this map, so positive `T_x` makes content slide left (a rightward
/// pan) and negative `T_z` magnifies (zoom in).
pub fn pose_to_affine(pose: &CameraPose, geom: &WorldGeometry) -> Result<Affine2> {
    let phi = roll_angle(pose)?;
    let s = (geom.zoom_log_scale * pose.t[2]).exp();
    let (sin, cos) = phi.sin_cos();
    let m = [[s * cos, -s * sin], [s * sin, s * cos]];
    let (cx, cy) = geom.center;
    let b = [
        cx - m[0][0] * cx - m[0][1] * cy + geom.pixels_per_unit * pose.t[0],
        cy - m[1][0] * cx - m[1][1] * cy + geom.pixels_per_unit * pose.t[1],
    ];
    Ok(Affine2 { m, b })
}

/// Inverse of [`pose_to_affine`] for similarity warps.
pub fn affine_to_pose(a: &Affine2, geom: &WorldGeometry) -> Result<CameraPose> {
    let det = a.det();
    if det <= 0.0 {
        return Err(SynthError::EstimationFailed(
            "warp is not orientation-preserving".into(),
        ));
    }
    let s = det.sqrt();
    let phi = a.m[1][0].atan2(a.m[0][0]);
    let tz = s.ln() / geom.zoom_log_scale;
    let (cx, cy) = geom.center;
    let tx = (a.b[0] - cx + a.m[0][0] * cx + a.m[0][1] * cy) / geom.pixels_per_unit;
    let ty = (a.b[1] - cy + a.m[1][0] * cx + a.m[1][1] * cy) / geom.pixels_per_unit;
    let mut pose = CameraPose::rot_z(phi);
    pose.t = [tx, ty, tz];
    Ok(pose)
}

/// Token vocabulary used by the synthetic captions.
pub mod vocab {
    pub const PAD: usize = 0;
    pub const CAM_STATIC: usize = 1;
    pub const CAM_SLOW: usize = 2;
    pub const CAM_MEDIUM: usize = 3;
    pub const CAM_FAST: usize = 4;
    /// `COLOR_BASE + palette index`, six colors.
    pub const COLOR_BASE: usize = 5;
    pub const SHAPE_DISK: usize = 11;
    pub const SHAPE_SQUARE: usize = 12;
    /// `COUNT_BASE + sprite count`, up to eight.
    pub const COUNT_BASE: usize = 13;
    pub const SIZE: usize = 22;
}

/// Saturated sprite colors, all far from the grayscale background.
pub const SPRITE_PALETTE: [[f64; 3]; 6] = [
    [0.95, 0.15, 0.15],
    [0.15, 0.90, 0.20],
    [0.20, 0.30, 0.95],
    [0.95, 0.85, 0.10],
    [0.90, 0.15, 0.90],
    [0.10, 0.85, 0.90],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpriteShape {
    Disk,
    Square,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub samples: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    #[serde(default = "default_supersample")]
    pub supersample: usize,
    #[serde(default = "default_ppu")]
    pub pixels_per_unit: f64,
    #[serde(default = "default_zoom_k")]
    pub zoom_log_scale: f64,
    pub seed: u64,
    #[serde(default = "default_sprite_min")]
    pub sprite_min: usize,
    #[serde(default = "default_sprite_max")]
    pub sprite_max: usize,
    #[serde(default = "default_sprite_radius")]
    pub sprite_radius: f64,
    /// Dense cluster size per sprite (the "many trajectories" pool).
    #[serde(default = "default_dense_cluster")]
    pub dense_cluster: usize,
    #[serde(default = "default_p_static_camera")]
    pub p_static_camera: f64,
    #[serde(default = "default_p_complex_camera")]
    pub p_complex_camera: f64,
    #[serde(default = "default_p_static_sprite")]
    pub p_static_sprite: f64,
}

fn default_supersample() -> usize {
    4
}
fn default_ppu() -> f64 {
    16.0
}
fn default_zoom_k() -> f64 {
    1.0
}
fn default_sprite_min() -> usize {
    1
}
fn default_sprite_max() -> usize {
    2
}
fn default_sprite_radius() -> f64 {
    2.4
}
fn default_dense_cluster() -> usize {
    24
}
fn default_p_static_camera() -> f64 {
    0.12
}
fn default_p_complex_camera() -> f64 {
    0.15
}
fn default_p_static_sprite() -> f64 {
    0.2
}

impl DatasetConfig {
    pub fn geometry(&self) -> WorldGeometry {
        WorldGeometry::for_latent(
            self.height,
            self.width,
            self.pixels_per_unit,
            self.zoom_log_scale,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.height < 8 || self.width < 8 {
            return Err(SynthError::BadConfig(
                "need at least one frame and an 8x8 latent".into(),
            ));
        }
        if self.sprite_max > 6 {
            return Err(SynthError::BadConfig(
                "at most 6 sprites (one per palette color)".into(),
            ));
        }
        if self.sprite_min > self.sprite_max {
            return Err(SynthError::BadConfig("sprite_min > sprite_max".into()));
        }
        if self.supersample == 0 {
            return Err(SynthError::BadConfig("supersample must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Sprite {
    color_idx: usize,
    shape: SpriteShape,
    radius: f64,
    center_path: Trajectory,
    cluster_offsets: Vec<(f64, f64)>,
}

/// One rendered video with exact pose/trajectory/token ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticSample {
    /// `[L,H,W,3]`, values in `[0,1]`.
    pub video: Tensor<f64>,
    pub poses: PoseSequence,
    /// Sprite-center trajectories, one per sprite (absent for sprite-free
    /// camera-only samples).
    pub trajs: Option<TrajectorySet>,
    /// Dense per-sprite point clusters moving rigidly with each sprite.
    pub dense_trajs: Option<TrajectorySet>,
    pub tokens: TokenSequence,
    pub seed: u64,
    pub motion_kind: String,
    pub sprite_colors: Vec<usize>,
    pub sprite_shapes: Vec<SpriteShape>,
}

/// SplitMix64; used to derive independent per-sample seeds.
pub fn derive_seed(root: u64, index: u64) -> u64 {
    let mut z = root
        .wrapping_add(0x9E3779B97F4A7C15)
        .wrapping_add(index.wrapping_mul(0xBF58476D1CE4E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Coarse camera-speed bucket (magnitude only; direction stays exclusive to
/// the pose condition).
pub fn camera_speed_token(poses: &PoseSequence, geom: &WorldGeometry) -> usize {
    if poses.len() < 2 {
        return vocab::CAM_STATIC;
    }
    let mut total = 0.0;
    for w in poses.poses().windows(2) {
        let step = w[0].inverse().compose(&w[1]);
        let phi = step.r[1][0].atan2(step.r[0][0]);
        let px = (step.t[0].powi(2) + step.t[1].powi(2)).sqrt() * geom.pixels_per_unit;
        let rot_px = phi.abs() * geom.pixels_per_unit;
        let zoom_px = (geom.zoom_log_scale * step.t[2]).abs() * geom.pixels_per_unit;
        total += px + rot_px + zoom_px;
    }
    let per_frame = total / (poses.len() - 1) as f64;
    if per_frame < 0.05 {
        vocab::CAM_STATIC
    } else if per_frame < 0.7 {
        vocab::CAM_SLOW
    } else if per_frame < 1.4 {
        vocab::CAM_MEDIUM
    } else {
        vocab::CAM_FAST
    }
}

fn tokens_for(
    poses: &PoseSequence,
    sprites: &[Sprite],
    geom: &WorldGeometry,
) -> TokenSequence {
    let mut ids = vec![
        camera_speed_token(poses, geom),
        vocab::COUNT_BASE + sprites.len(),
    ];
    for s in sprites.iter().take(3) {
        ids.push(vocab::COLOR_BASE + s.color_idx);
        ids.push(match s.shape {
            SpriteShape::Disk => vocab::SHAPE_DISK,
            SpriteShape::Square => vocab::SHAPE_SQUARE,
        });
    }
    TokenSequence::new(ids)
}

fn sample_poses<R: Rng>(cfg: &DatasetConfig, rng: &mut R) -> (PoseSequence, String) {
    use crate::camera::{make_basic_pose_sequence, BasicMotion};
    let l = cfg.frames;
    let u: f64 = rng.random();
    if u < cfg.p_static_camera {
        return (PoseSequence::identity(l).unwrap(), "static".to_string());
    }
    let basic = |kind: BasicMotion, rng: &mut R| -> PoseSequence {
        let speed = match kind {
            BasicMotion::ZoomIn | BasicMotion::ZoomOut => rng.random_range(0.025..0.06),
            BasicMotion::RotCcw | BasicMotion::RotCw => rng.random_range(0.02..0.06),
            _ => rng.random_range(0.025..0.075),
        };
        make_basic_pose_sequence(kind, l, speed).unwrap()
    };
    if u < cfg.p_static_camera + cfg.p_complex_camera {
        // Two distinct basic motions composed per frame.
        let i = rng.random_range(0..8);
        let j = (i + rng.random_range(1..8)) % 8;
        let a = basic(BasicMotion::ALL[i], rng);
        let b = basic(BasicMotion::ALL[j], rng);
        let poses = a
            .poses()
            .iter()
            .zip(b.poses())
            .map(|(pa, pb)| pa.compose(pb))
            .collect();
        return (PoseSequence::new(poses).unwrap(), "complex".to_string());
    }
    let kind = BasicMotion::ALL[rng.random_range(0..8)];
    (basic(kind, rng), kind.name().to_string())
}

fn sample_sprites<R: Rng>(cfg: &DatasetConfig, rng: &mut R) -> Vec<Sprite> {
    let count = rng.random_range(cfg.sprite_min..=cfg.sprite_max);
    let mut palette: Vec<usize> = (0..SPRITE_PALETTE.len()).collect();
    let mut sprites = Vec::with_capacity(count);
    for _ in 0..count {
        let color_idx = palette.remove(rng.random_range(0..palette.len()));
        let shape = if rng.random::<f64>() < 0.5 {
            SpriteShape::Disk
        } else {
            SpriteShape::Square
        };
        let radius = cfg.sprite_radius * rng.random_range(0.8..1.2);
        let margin = radius + 1.5;
        let (w, h) = (cfg.width as f64, cfg.height as f64);
        let p0 = (
            rng.random_range(margin..w - 1.0 - margin),
            rng.random_range(margin..h - 1.0 - margin),
        );
        let center_path = if rng.random::<f64>() < cfg.p_static_sprite {
            Trajectory::new(vec![p0; cfg.frames]).unwrap()
        } else {
            let reach = (w.min(h) * 0.45).min(14.0);
            let mut control = vec![p0];
            for _ in 0..2 {
                let last = *control.last().unwrap();
                control.push((
                    (last.0 + rng.random_range(-reach..reach)).clamp(margin, w - 1.0 - margin),
                    (last.1 + rng.random_range(-reach..reach)).clamp(margin, h - 1.0 - margin),
                ));
            }
            crate::trajectory::make_bezier_trajectory(
                cfg.frames,
                &control,
                cfg.height,
                cfg.width,
            )
            .unwrap()
        };
        let cluster_offsets = (0..cfg.dense_cluster.saturating_sub(1))
            .map(|_| {
                let ang = rng.random_range(0.0..std::f64::consts::TAU);
                let rr = radius * 0.7 * rng.random::<f64>().sqrt();
                (rr * ang.cos(), rr * ang.sin())
            })
            .collect();
        sprites.push(Sprite {
            color_idx,
            shape,
            radius,
            center_path,
            cluster_offsets,
        });
    }
    sprites
}

fn render_video(
    cfg: &DatasetConfig,
    poses: &PoseSequence,
    sprites: &[Sprite],
    background_seed: u64,
) -> Result<Tensor<f64>> {
    let geom = cfg.geometry();
    let field = NoiseField::new(background_seed, 4, 3);
    let (l, h, w, ss) = (cfg.frames, cfg.height, cfg.width, cfg.supersample);
    let (hs, ws) = (h * ss, w * ss);
    let inv_ss2 = 1.0 / (ss * ss) as f64;
    let period_x = 2.0 * w as f64;
    let period_y = 2.0 * h as f64;
    let mut data = vec![0.0f64; l * h * w * 3];

    for (frame, pose) in poses.poses().iter().enumerate() {
        let warp = pose_to_affine(pose, &geom)?;
        let centers: Vec<(f64, f64)> = sprites
            .iter()
            .map(|s| s.center_path.points[frame])
            .collect();
        for sy in 0..hs {
            for sx in 0..ws {
                let px = (sx as f64 + 0.5) / ss as f64 - 0.5;
                let py = (sy as f64 + 0.5) / ss as f64 - 0.5;
                let (qx, qy) = warp.apply(px, py);
                let v = field.sample(qx / period_x, qy / period_y);
                let mut rgb = [v, v, v];
                for (s, &(cx, cy)) in sprites.iter().zip(&centers) {
                    let inside = match s.shape {
                        SpriteShape::Disk => {
                            (px - cx).powi(2) + (py - cy).powi(2) <= s.radius * s.radius
                        }
                        SpriteShape::Square => {
                            (px - cx).abs().max((py - cy).abs()) <= s.radius
                        }
                    };
                    if inside {
                        rgb = SPRITE_PALETTE[s.color_idx];
                    }
                }
                let base = ((frame * h + sy / ss) * w + sx / ss) * 3;
                data[base] += rgb[0] * inv_ss2;
                data[base + 1] += rgb[1] * inv_ss2;
                data[base + 2] += rgb[2] * inv_ss2;
            }
        }
    }
    Ok(Tensor::from_vec(&[l, h, w, 3], data)?)
}

/// Render one sample: a warped noise background, sprites along their
/// trajectories, and tokens describing sprite attributes plus a coarse
/// camera-speed class.
pub fn render_sample(cfg: &DatasetConfig, seed: u64) -> Result<SyntheticSample> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (poses, motion_kind) = sample_poses(cfg, &mut rng);
    let sprites = sample_sprites(cfg, &mut rng);
    let background_seed = rng.random::<u64>();
    let video = render_video(cfg, &poses, &sprites, background_seed)?;

    let geom = cfg.geometry();
    let tokens = tokens_for(&poses, &sprites, &geom);
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let clamp = |p: (f64, f64)| {
        (
            p.0.clamp(0.0, w - 1e-6),
            p.1.clamp(0.0, h - 1e-6),
        )
    };
    let trajs = if sprites.is_empty() {
        None
    } else {
        Some(TrajectorySet::new(
            sprites.iter().map(|s| s.center_path.clone()).collect(),
        )?)
    };
    let dense_trajs = if sprites.is_empty() {
        None
    } else {
        let mut all = Vec::new();
        for s in &sprites {
            all.push(s.center_path.clone());
            for &(ox, oy) in &s.cluster_offsets {
                all.push(Trajectory::new(
                    s.center_path
                        .points
                        .iter()
                        .map(|&(x, y)| clamp((x + ox, y + oy)))
                        .collect(),
                )?);
            }
        }
        Some(TrajectorySet::new(all)?)
    };
    Ok(SyntheticSample {
        video,
        poses,
        trajs,
        dense_trajs,
        tokens,
        seed,
        motion_kind,
        sprite_colors: sprites.iter().map(|s| s.color_idx).collect(),
        sprite_shapes: sprites.iter().map(|s| s.shape).collect(),
    })
}

/// Render a video directly from explicit conditions: poses drive the
/// background warp and each trajectory carries a disk sprite of the given
/// palette color. Used by ground-truth evaluation runs.
#[allow(clippy::too_many_arguments)]
pub fn render_ground_truth(
    frames: usize,
    height: usize,
    width: usize,
    supersample: usize,
    geom: &WorldGeometry,
    poses: &PoseSequence,
    trajs: Option<&TrajectorySet>,
    sprite_colors: &[usize],
    background_seed: u64,
    sprite_radius: f64,
) -> Result<Tensor<f64>> {
    if poses.len() != frames {
        return Err(SynthError::BadConfig(format!(
            "pose sequence has {} frames, expected {frames}",
            poses.len()
        )));
    }
    let cfg = DatasetConfig {
        samples: 1,
        frames,
        height,
        width,
        supersample,
        pixels_per_unit: geom.pixels_per_unit,
        zoom_log_scale: geom.zoom_log_scale,
        seed: 0,
        sprite_min: 0,
        sprite_max: 0,
        sprite_radius,
        dense_cluster: 1,
        p_static_camera: 0.0,
        p_complex_camera: 0.0,
        p_static_sprite: 0.0,
    };
    let sprites: Vec<Sprite> = match trajs {
        Some(ts) => {
            for t in ts.trajectories() {
                if t.len() != frames {
                    return Err(SynthError::BadConfig(format!(
                        "trajectory has {} points, expected {frames}",
                        t.len()
                    )));
                }
                t.check_domain(height, width)?;
            }
            ts.trajectories()
                .iter()
                .enumerate()
                .map(|(i, t)| Sprite {
                    color_idx: sprite_colors
                        .get(i)
                        .copied()
                        .unwrap_or(i % SPRITE_PALETTE.len()),
                    shape: SpriteShape::Disk,
                    radius: sprite_radius,
                    center_path: t.clone(),
                    cluster_offsets: Vec::new(),
                })
                .collect()
        }
        None => Vec::new(),
    };
    render_video(&cfg, poses, &sprites, background_seed)
}

fn video_dims(video: &Tensor<f64>) -> Result<(usize, usize, usize)> {
    let s = video.shape();
    if s.len() != 4 || s[3] != 3 || s[0] == 0 {
        return Err(SynthError::BadVideoShape(s.to_vec()));
    }
    Ok((s[0], s[1], s[2]))
}

/// Recover the camera pose sequence from a rendered or generated video by
/// registering consecutive frames under a similarity warp and mapping the
/// composed warps back through the pose parameterization. Frame 0 is the
/// identity by construction.
pub fn estimate_camera_motion(video: &Tensor<f64>, geom: &WorldGeometry) -> Result<PoseSequence> {
    let (l, h, w) = video_dims(video)?;
    let frames: Vec<FramePlane> = (0..l)
        .map(|f| FramePlane::from_rgb(h, w, &video.data()[f * h * w * 3..(f + 1) * h * w * 3]))
        .collect();
    let levels = (h.min(w) as f64 / 8.0).log2().floor() as usize + 1;
    let warps = register::consecutive_warps(&frames, levels.max(1))?;
    let mut abs = Affine2::identity();
    let mut poses = vec![affine_to_pose(&abs, geom)?];
    for b in &warps {
        abs = abs.compose(b);
        poses.push(affine_to_pose(&abs, geom)?);
    }
    Ok(PoseSequence::new(poses)?)
}

/// Per-frame chroma-threshold centroid of one sprite color, in latent
/// coordinates. Errors if any frame contains no matching pixels.
pub fn detect_object_trajectory(video: &Tensor<f64>, color: [f64; 3]) -> Result<Trajectory> {
    const THRESH: f64 = 0.30;
    let (l, h, w) = video_dims(video)?;
    let mut points = Vec::with_capacity(l);
    for f in 0..l {
        let plane = &video.data()[f * h * w * 3..(f + 1) * h * w * 3];
        let mut wsum = 0.0;
        let mut cx = 0.0;
        let mut cy = 0.0;
        for y in 0..h {
            for x in 0..w {
                let i = (y * w + x) * 3;
                let d = ((plane[i] - color[0]).powi(2)
                    + (plane[i + 1] - color[1]).powi(2)
                    + (plane[i + 2] - color[2]).powi(2))
                .sqrt();
                if d < THRESH {
                    let wgt = THRESH - d;
                    wsum += wgt;
                    cx += wgt * x as f64;
                    cy += wgt * y as f64;
                }
            }
        }
        if wsum < 1e-9 {
            return Err(SynthError::DetectionFailed { frame: f });
        }
        points.push((cx / wsum, cy / wsum));
    }
    Ok(Trajectory::new(points)?)
}

// ---------------------------------------------------------------------------
// Dataset directory layout: manifest JSON + per-sample tensor binaries and
// pose/trajectory JSON sidecars.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleEntry {
    pub seed: u64,
    pub video: String,
    pub poses: String,
    pub trajs: Option<String>,
    pub dense_trajs: Option<String>,
    pub tokens: Vec<usize>,
    pub motion_kind: String,
    pub sprite_colors: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config: DatasetConfig,
    pub config_hash: String,
    pub samples: Vec<SampleEntry>,
}

pub fn config_hash(cfg: &DatasetConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    hex_digest(json.as_bytes())
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// Render every sample of a dataset to `dir` and write its manifest.
pub fn render_dataset(cfg: &DatasetConfig, dir: &std::path::Path) -> Result<DatasetManifest> {
    use rayon::prelude::*;
    cfg.validate()?;
    std::fs::create_dir_all(dir)?;
    let samples: Vec<(usize, SyntheticSample)> = (0..cfg.samples)
        .into_par_iter()
        .map(|i| {
            let s = render_sample(cfg, derive_seed(cfg.seed, i as u64))?;
            Ok((i, s))
        })
        .collect::<Result<_>>()?;

    let mut entries = Vec::with_capacity(samples.len());
    for (i, sample) in &samples {
        let stem = format!("sample_{i:04}");
        let video_name = format!("{stem}.video.mct");
        let poses_name = format!("{stem}.poses.json");
        crate::tensor::io::write_tensor_file(dir.join(&video_name), &sample.video.cast::<f32>())?;
        std::fs::write(
            dir.join(&poses_name),
            crate::camera::poses_to_json(&sample.poses),
        )?;
        let trajs_name = match &sample.trajs {
            Some(ts) => {
                let name = format!("{stem}.trajs.json");
                std::fs::write(dir.join(&name), crate::trajectory::trajectories_to_json(ts))?;
                Some(name)
            }
            None => None,
        };
        let dense_name = match &sample.dense_trajs {
            Some(ts) => {
                let name = format!("{stem}.dense.json");
                std::fs::write(dir.join(&name), crate::trajectory::trajectories_to_json(ts))?;
                Some(name)
            }
            None => None,
        };
        entries.push(SampleEntry {
            seed: sample.seed,
            video: video_name,
            poses: poses_name,
            trajs: trajs_name,
            dense_trajs: dense_name,
            tokens: sample.tokens.ids.clone(),
            motion_kind: sample.motion_kind.clone(),
            sprite_colors: sample.sprite_colors.clone(),
        });
    }
    let manifest = DatasetManifest {
        config: cfg.clone(),
        config_hash: config_hash(cfg),
        samples: entries,
    };
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(manifest)
}

/// One dataset sample loaded for training, at training precision.
pub struct LoadedSample<S: Scalar> {
    pub video: Tensor<S>,
    pub poses: PoseSequence,
    pub trajs: Option<TrajectorySet>,
    pub dense_trajs: Option<TrajectorySet>,
    pub tokens: TokenSequence,
    pub sprite_colors: Vec<usize>,
    pub motion_kind: String,
}

pub fn read_manifest(dir: &std::path::Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(dir.join("manifest.json"))?;
    serde_json::from_str(&text).map_err(|e| SynthError::Manifest(e.to_string()))
}

pub fn load_dataset<S: Scalar>(dir: &std::path::Path) -> Result<Vec<LoadedSample<S>>> {
    let manifest = read_manifest(dir)?;
    let mut out = Vec::with_capacity(manifest.samples.len());
    for entry in &manifest.samples {
        let video = crate::tensor::io::read_tensor_file::<S, _>(dir.join(&entry.video))?;
        let poses = crate::camera::poses_from_json(&std::fs::read_to_string(
            dir.join(&entry.poses),
        )?)?;
        let trajs = match &entry.trajs {
            Some(name) => Some(crate::trajectory::trajectories_from_json(
                &std::fs::read_to_string(dir.join(name))?,
            )?),
            None => None,
        };
        let dense_trajs = match &entry.dense_trajs {
            Some(name) => Some(crate::trajectory::trajectories_from_json(
                &std::fs::read_to_string(dir.join(name))?,
            )?),
            None => None,
        };
        out.push(LoadedSample {
            video,
            poses,
            trajs,
            dense_trajs,
            tokens: TokenSequence::new(entry.tokens.clone()),
            sprite_colors: entry.sprite_colors.clone(),
            motion_kind: entry.motion_kind.clone(),
        });
    }
    Ok(out)
}
