//! Camera poses, basic-motion generators, Realestate10K-format parsing, and
//! the CamMC metric.
//!
//! A pose is a 3x3 rotation plus a 3-vector translation. Sequences fed to the
//! model are flattened to `L x 12` rows of `[R row-major, T]` after
//! normalizing every frame relative to frame 0, which removes the global
//! reference-frame ambiguity.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("pose sequence must contain at least one frame")]
    Empty,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("pose sequence lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("unknown camera motion kind `{0}`")]
    UnknownKind(String),
    #[error("speed must be non-negative, got {0}")]
    NegativeSpeed(f64),
    #[error("expected an L x 12 tensor, got shape {0:?}")]
    BadFlatShape(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, CameraError>;

/// Rigid camera pose: 3x3 rotation and 3x1 translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub r: [[f64; 3]; 3],
    pub t: [f64; 3],
}

impl CameraPose {
    pub fn identity() -> Self {
        CameraPose {
            r: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            t: [0.0, 0.0, 0.0],
        }
    }

    /// Rotation about the viewing (z) axis by `angle` radians,
    /// anticlockwise positive.
    pub fn rot_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        CameraPose {
            r: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
            t: [0.0, 0.0, 0.0],
        }
    }

    pub fn translation(t: [f64; 3]) -> Self {
        CameraPose {
            r: CameraPose::identity().r,
            t,
        }
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &CameraPose) -> CameraPose {
        let mut r = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    r[i][j] += self.r[i][k] * other.r[k][j];
                }
            }
        }
        let mut t = self.t;
        for i in 0..3 {
            for k in 0..3 {
                t[i] += self.r[i][k] * other.t[k];
            }
        }
        CameraPose { r, t }
    }

    pub fn inverse(&self) -> CameraPose {
        let mut r = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] = self.r[j][i];
            }
        }
        let mut t = [0.0; 3];
        for i in 0..3 {
            for k in 0..3 {
                t[i] -= r[i][k] * self.t[k];
            }
        }
        CameraPose { r, t }
    }

    /// Max deviation of `R^T R` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let mut err: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let mut dot = 0.0;
                for k in 0..3 {
                    dot += self.r[k][i] * self.r[k][j];
                }
                let target = if i == j { 1.0 } else { 0.0 };
                err = err.max((dot - target).abs());
            }
        }
        err
    }

    pub fn det(&self) -> f64 {
        let r = &self.r;
        r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
    }

    pub fn is_valid_rotation(&self) -> bool {
        self.orthonormality_error() < 1e-9 && (self.det() - 1.0).abs() < 1e-9
    }

    /// `[R row-major (9), T (3)]`.
    pub fn flatten_row(&self) -> [f64; 12] {
        let mut row = [0.0; 12];
        for i in 0..3 {
            for j in 0..3 {
                row[i * 3 + j] = self.r[i][j];
            }
        }
        row[9..].copy_from_slice(&self.t);
        row
    }

    pub fn from_flat_row(row: &[f64]) -> CameraPose {
        let mut r = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] = row[i * 3 + j];
            }
        }
        CameraPose {
            r,
            t: [row[9], row[10], row[11]],
        }
    }
}

/// Nonempty list of per-frame poses; frame indices are implicit `0..L-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    poses: Vec<CameraPose>,
}

impl PoseSequence {
    pub fn new(poses: Vec<CameraPose>) -> Result<Self> {
        if poses.is_empty() {
            return Err(CameraError::Empty);
        }
        Ok(PoseSequence { poses })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn poses(&self) -> &[CameraPose] {
        &self.poses
    }

    pub fn identity(frames: usize) -> Result<Self> {
        Self::new(vec![CameraPose::identity(); frames])
    }
}

/// The eight basic camera motions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasicMotion {
    PanLeft,
    PanRight,
    PanUp,
    PanDown,
    ZoomIn,
    ZoomOut,
    RotCcw,
    RotCw,
}

impl BasicMotion {
    pub const ALL: [BasicMotion; 8] = [
        BasicMotion::PanLeft,
        BasicMotion::PanRight,
        BasicMotion::PanUp,
        BasicMotion::PanDown,
        BasicMotion::ZoomIn,
        BasicMotion::ZoomOut,
        BasicMotion::RotCcw,
        BasicMotion::RotCw,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BasicMotion::PanLeft => "pan_left",
            BasicMotion::PanRight => "pan_right",
            BasicMotion::PanUp => "pan_up",
            BasicMotion::PanDown => "pan_down",
            BasicMotion::ZoomIn => "zoom_in",
            BasicMotion::ZoomOut => "zoom_out",
            BasicMotion::RotCcw => "rot_ccw",
            BasicMotion::RotCw => "rot_cw",
        }
    }
}

impl std::str::FromStr for BasicMotion {
    type Err = CameraError;

    fn from_str(s: &str) -> Result<Self> {
        BasicMotion::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| CameraError::UnknownKind(s.to_string()))
    }
}

/// Linear pose ramp for one of the eight basic motions. Frame 0 is always
/// the identity pose. Sign conventions: `pan_right` is +x, `pan_down` is +y
/// (image rows grow downward), `zoom_in` is -z, and clockwise roll is a
/// negative angle about the viewing axis.
pub fn make_basic_pose_sequence(
    kind: BasicMotion,
    frames: usize,
    speed: f64,
) -> Result<PoseSequence> {
    if speed < 0.0 {
        return Err(CameraError::NegativeSpeed(speed));
    }
    let poses = (0..frames)
        .map(|l| {
            let a = speed * l as f64;
            match kind {
                BasicMotion::PanLeft => CameraPose::translation([-a, 0.0, 0.0]),
                BasicMotion::PanRight => CameraPose::translation([a, 0.0, 0.0]),
                BasicMotion::PanUp => CameraPose::translation([0.0, -a, 0.0]),
                BasicMotion::PanDown => CameraPose::translation([0.0, a, 0.0]),
                BasicMotion::ZoomIn => CameraPose::translation([0.0, 0.0, -a]),
                BasicMotion::ZoomOut => CameraPose::translation([0.0, 0.0, a]),
                BasicMotion::RotCcw => CameraPose::rot_z(a),
                BasicMotion::RotCw => CameraPose::rot_z(-a),
            }
        })
        .collect();
    PoseSequence::new(poses)
}

/// Flatten to the model's `L x 12` condition rows.
pub fn flatten_pose_sequence(ps: &PoseSequence) -> Tensor<f64> {
    let mut data = Vec::with_capacity(ps.len() * 12);
    for pose in ps.poses() {
        data.extend_from_slice(&pose.flatten_row());
    }
    Tensor::from_vec(&[ps.len(), 12], data).unwrap()
}

pub fn unflatten_pose_sequence(t: &Tensor<f64>) -> Result<PoseSequence> {
    if t.shape().len() != 2 || t.shape()[1] != 12 || t.shape()[0] == 0 {
        return Err(CameraError::BadFlatShape(t.shape().to_vec()));
    }
    PoseSequence::new(
        t.data()
            .chunks_exact(12)
            .map(CameraPose::from_flat_row)
            .collect(),
    )
}

/// Re-express every pose relative to frame 0: `pose_l' = pose_0^-1 ∘ pose_l`.
/// Frame 0 of the result is the identity.
pub fn normalize_relative(ps: &PoseSequence) -> PoseSequence {
    let inv0 = ps.poses()[0].inverse();
    PoseSequence::new(ps.poses().iter().map(|p| inv0.compose(p)).collect()).unwrap()
}

/// Mean over frames of the Euclidean norm of the 12-dim flattened pose
/// difference, after relative normalization of both sequences.
pub fn cammc(pred: &PoseSequence, gt: &PoseSequence) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(CameraError::LengthMismatch(pred.len(), gt.len()));
    }
    let a = normalize_relative(pred);
    let b = normalize_relative(gt);
    let mut total = 0.0;
    for (pa, pb) in a.poses().iter().zip(b.poses()) {
        let ra = pa.flatten_row();
        let rb = pb.flatten_row();
        let sq: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y) * (x - y)).sum();
        total += sq.sqrt();
    }
    Ok(total / pred.len() as f64)
}

/// Pinhole intrinsics carried by Realestate10K camera files. Retained on
/// parse but unused by the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// One parsed Realestate10K camera file.
#[derive(Debug, Clone, PartialEq)]
pub struct RealestateCameras {
    pub timestamps_us: Vec<i64>,
    pub intrinsics: Vec<Intrinsics>,
    pub poses: PoseSequence,
}

/// Parse the Realestate10K camera format: one frame per line with 19
/// whitespace-separated fields — timestamp(µs), fx, fy, cx, cy, two zeros,
/// then the 12 row-major values of the 3x4 world-to-camera matrix.
pub fn parse_realestate_poses(text: &str) -> Result<RealestateCameras> {
    let mut timestamps = Vec::new();
    let mut intrinsics = Vec::new();
    let mut poses = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 19 {
            return Err(CameraError::Parse {
                line: line_no,
                msg: format!("expected 19 fields, found {}", fields.len()),
            });
        }
        let parse_f = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|e| CameraError::Parse {
                line: line_no,
                msg: format!("bad {what} `{s}`: {e}"),
            })
        };
        let ts = fields[0].parse::<i64>().map_err(|e| CameraError::Parse {
            line: line_no,
            msg: format!("bad timestamp `{}`: {e}", fields[0]),
        })?;
        let intr = Intrinsics {
            fx: parse_f(fields[1], "fx")?,
            fy: parse_f(fields[2], "fy")?,
            cx: parse_f(fields[3], "cx")?,
            cy: parse_f(fields[4], "cy")?,
        };
        // fields[5..7] are padding zeros; fields[7..19] the 3x4 pose.
        let mut r = [[0.0; 3]; 3];
        let mut t = [0.0; 3];
        for row in 0..3 {
            for col in 0..4 {
                let v = parse_f(fields[7 + row * 4 + col], "pose value")?;
                if col == 3 {
                    t[row] = v;
                } else {
                    r[row][col] = v;
                }
            }
        }
        timestamps.push(ts);
        intrinsics.push(intr);
        poses.push(CameraPose { r, t });
    }
    Ok(RealestateCameras {
        timestamps_us: timestamps,
        intrinsics,
        poses: PoseSequence::new(poses)?,
    })
}

/// Inverse of [`parse_realestate_poses`]. Floats print with Rust's shortest
/// round-trip formatting, so parse(write(x)) reproduces every field exactly.
pub fn write_realestate_poses(cams: &RealestateCameras) -> String {
    let mut out = String::new();
    for ((&ts, intr), pose) in cams
        .timestamps_us
        .iter()
        .zip(&cams.intrinsics)
        .zip(cams.poses.poses())
    {
        let mut fields: Vec<String> = vec![
            ts.to_string(),
            intr.fx.to_string(),
            intr.fy.to_string(),
            intr.cx.to_string(),
            intr.cy.to_string(),
            "0".into(),
            "0".into(),
        ];
        for row in 0..3 {
            for col in 0..3 {
                fields.push(pose.r[row][col].to_string());
            }
            fields.push(pose.t[row].to_string());
        }
        out.push_str(&fields.join(" "));
        out.push('\n');
    }
    out
}

#[derive(Serialize, Deserialize)]
struct PoseFrameJson {
    #[serde(rename = "R")]
    r: Vec<f64>,
    #[serde(rename = "T")]
    t: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PoseFileJson {
    frames: Vec<PoseFrameJson>,
}

/// Pose JSON export: `{"frames":[{"R":[9 numbers],"T":[3 numbers]}...]}`.
pub fn poses_to_json(ps: &PoseSequence) -> String {
    let file = PoseFileJson {
        frames: ps
            .poses()
            .iter()
            .map(|p| {
                let row = p.flatten_row();
                PoseFrameJson {
                    r: row[..9].to_vec(),
                    t: row[9..].to_vec(),
                }
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("pose json")
}

pub fn poses_from_json(text: &str) -> Result<PoseSequence> {
    let file: PoseFileJson = serde_json::from_str(text).map_err(|e| CameraError::Parse {
        line: 0,
        msg: format!("bad pose json: {e}"),
    })?;
    let mut poses = Vec::with_capacity(file.frames.len());
    for (i, f) in file.frames.iter().enumerate() {
        if f.r.len() != 9 || f.t.len() != 3 {
            return Err(CameraError::Parse {
                line: i,
                msg: format!("frame {i}: expected 9 R values and 3 T values"),
            });
        }
        let mut row = [0.0; 12];
        row[..9].copy_from_slice(&f.r);
        row[9..].copy_from_slice(&f.t);
        poses.push(CameraPose::from_flat_row(&row));
    }
    PoseSequence::new(poses)
}
