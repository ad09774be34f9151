//! Python bindings exposing the main types and operations: tensors with
//! reverse-mode gradients, camera poses and CamMC, trajectories and ObjMC,
//! the noise schedule, the denoiser, training stages, and evaluation.
//!
//! Tensors are `f32`; data crosses the boundary as flat lists plus shapes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use motionctrl_core::camera;
use motionctrl_core::diffusion;
use motionctrl_core::synthdata;
use motionctrl_core::tensor::{self, Tensor};
use motionctrl_core::trajectory;
use motionctrl_core::training;
use motionctrl_core::unet;

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn rt_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Dense f32 tensor with an optional reverse-mode gradient.
#[pyclass(name = "Tensor", skip_from_py_object)]
#[derive(Clone)]
struct PyTensor {
    inner: Tensor<f32>,
}

#[pymethods]
impl PyTensor {
    #[new]
    #[pyo3(signature = (shape, data, requires_grad = false))]
    fn new(shape: Vec<usize>, data: Vec<f32>, requires_grad: bool) -> PyResult<Self> {
        let inner = if requires_grad {
            Tensor::param(&shape, data).map_err(err)?
        } else {
            Tensor::from_vec(&shape, data).map_err(err)?
        };
        Ok(PyTensor { inner })
    }

    #[staticmethod]
    fn zeros(shape: Vec<usize>) -> Self {
        PyTensor {
            inner: Tensor::zeros(&shape),
        }
    }

    #[staticmethod]
    fn randn(shape: Vec<usize>, seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        PyTensor {
            inner: Tensor::randn(&shape, &mut rng),
        }
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    fn data(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    fn item(&self) -> PyResult<f32> {
        self.inner.item().map_err(err)
    }

    fn grad(&self) -> Option<Vec<f32>> {
        self.inner.grad()
    }

    fn zero_grad(&self) {
        self.inner.zero_grad();
    }

    fn backward(&self) -> PyResult<()> {
        self.inner.backward().map_err(err)
    }

    fn requires_grad(&self) -> bool {
        self.inner.requires_grad()
    }

    fn detach(&self) -> Self {
        PyTensor {
            inner: self.inner.detach(),
        }
    }

    fn add(&self, other: &PyTensor) -> PyResult<Self> {
        Ok(PyTensor {
            inner: self.inner.add(&other.inner).map_err(err)?,
        })
    }

    fn sub(&self, other: &PyTensor) -> PyResult<Self> {
        Ok(PyTensor {
            inner: self.inner.sub(&other.inner).map_err(err)?,
        })
    }

    fn mul(&self, other: &PyTensor) -> PyResult<Self> {
        Ok(PyTensor {
            inner: self.inner.mul(&other.inner).map_err(err)?,
        })
    }

    fn mul_scalar(&self, value: f32) -> Self {
        PyTensor {
            inner: self.inner.mul_scalar(value),
        }
    }

    fn matmul(&self, other: &PyTensor) -> PyResult<Self> {
        Ok(PyTensor {
            inner: self.inner.matmul(&other.inner).map_err(err)?,
        })
    }

    #[pyo3(signature = (weight, stride = 1, padding = 1))]
    fn conv2d(&self, weight: &PyTensor, stride: usize, padding: usize) -> PyResult<Self> {
        Ok(PyTensor {
            inner: self.inner.conv2d(&weight.inner, stride, padding).map_err(err)?,
        })
    }

    fn group_norm(&self, groups: usize, gamma: &PyTensor, beta: &PyTensor) -> PyResult<Self> {
        Ok(PyTensor {
            inner: self
                .inner
                .group_norm(groups, &gamma.inner, &beta.inner)
                .map_err(err)?,
        })
    }

    fn mean_all(&self) -> Self {
        PyTensor {
            inner: self.inner.mean_all(),
        }
    }

    fn sum_all(&self) -> Self {
        PyTensor {
            inner: self.inner.sum_all(),
        }
    }

    fn reshape(&self, shape: Vec<usize>) -> PyResult<Self> {
        Ok(PyTensor {
            inner: self.inner.reshape(&shape).map_err(err)?,
        })
    }

    fn permute(&self, perm: Vec<usize>) -> PyResult<Self> {
        Ok(PyTensor {
            inner: self.inner.permute(&perm).map_err(err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape())
    }
}

/// Scaled dot-product attention over `[B,T,D]` tensors.
#[pyfunction]
fn attention(q: &PyTensor, k: &PyTensor, v: &PyTensor) -> PyResult<PyTensor> {
    Ok(PyTensor {
        inner: tensor::attention(&q.inner, &k.inner, &v.inner).map_err(err)?,
    })
}

/// Adam optimizer state; `step` updates parameters in place from their
/// accumulated gradients.
#[pyclass(name = "AdamState")]
struct PyAdamState {
    inner: tensor::OptimizerState<f32>,
}

#[pymethods]
impl PyAdamState {
    #[new]
    #[pyo3(signature = (learning_rate = 1e-4))]
    fn new(learning_rate: f64) -> Self {
        PyAdamState {
            inner: tensor::OptimizerState::new(learning_rate),
        }
    }

    #[getter]
    fn step_count(&self) -> u64 {
        self.inner.step
    }

    fn step(&mut self, params: Vec<(String, Py<PyTensor>)>, py: Python<'_>) -> PyResult<()> {
        let mut borrowed: Vec<(String, PyRefMut<'_, PyTensor>)> = params
            .iter()
            .map(|(name, t)| Ok((name.clone(), t.bind(py).borrow_mut())))
            .collect::<PyResult<_>>()?;
        let mut refs: Vec<(String, &mut Tensor<f32>)> = borrowed
            .iter_mut()
            .map(|(name, t)| (name.clone(), &mut t.inner))
            .collect();
        tensor::adam_step(&mut refs, &mut self.inner).map_err(err)
    }
}

/// Per-frame camera poses (3x3 rotation + translation).
#[pyclass(name = "PoseSequence", skip_from_py_object)]
#[derive(Clone)]
struct PyPoseSequence {
    inner: camera::PoseSequence,
}

#[pymethods]
impl PyPoseSequence {
    #[staticmethod]
    fn identity(frames: usize) -> PyResult<Self> {
        Ok(PyPoseSequence {
            inner: camera::PoseSequence::identity(frames).map_err(err)?,
        })
    }

    #[staticmethod]
    fn basic(kind: &str, frames: usize, speed: f64) -> PyResult<Self> {
        let kind = camera::BasicMotion::from_str(kind).map_err(err)?;
        Ok(PyPoseSequence {
            inner: camera::make_basic_pose_sequence(kind, frames, speed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyPoseSequence {
            inner: camera::poses_from_json(text).map_err(err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn to_json(&self) -> String {
        camera::poses_to_json(&self.inner)
    }

    /// Rows `[R row-major (9), T (3)]` as an `L x 12` f32 tensor.
    fn flatten(&self) -> PyTensor {
        PyTensor {
            inner: camera::flatten_pose_sequence(&self.inner).cast::<f32>(),
        }
    }

    fn normalize_relative(&self) -> Self {
        PyPoseSequence {
            inner: camera::normalize_relative(&self.inner),
        }
    }
}

#[pyfunction]
fn cammc(pred: &PyPoseSequence, gt: &PyPoseSequence) -> PyResult<f64> {
    camera::cammc(&pred.inner, &gt.inner).map_err(err)
}

/// Parse the Realestate10K camera file format; returns the pose sequence and
/// per-frame `(fx, fy, cx, cy)` intrinsics.
#[pyfunction]
fn parse_realestate_poses(text: &str) -> PyResult<(PyPoseSequence, Vec<(f64, f64, f64, f64)>)> {
    let cams = camera::parse_realestate_poses(text).map_err(err)?;
    let intr = cams
        .intrinsics
        .iter()
        .map(|i| (i.fx, i.fy, i.cx, i.cy))
        .collect();
    Ok((PyPoseSequence { inner: cams.poses }, intr))
}

fn to_traj_set(trajs: Vec<Vec<(f64, f64)>>) -> PyResult<trajectory::TrajectorySet> {
    let list = trajs
        .into_iter()
        .map(trajectory::Trajectory::new)
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    trajectory::TrajectorySet::new(list).map_err(err)
}

#[pyfunction]
fn make_bezier_trajectory(
    frames: usize,
    control_points: Vec<(f64, f64)>,
    height: usize,
    width: usize,
) -> PyResult<Vec<(f64, f64)>> {
    Ok(
        trajectory::make_bezier_trajectory(frames, &control_points, height, width)
            .map_err(err)?
            .points,
    )
}

/// Encode trajectories into an `L x H x W x 2` displacement-map tensor.
#[pyfunction]
fn encode_displacement(
    trajs: Vec<Vec<(f64, f64)>>,
    height: usize,
    width: usize,
) -> PyResult<PyTensor> {
    let set = to_traj_set(trajs)?;
    let map = trajectory::encode_displacement::<f32>(&set, height, width).map_err(err)?;
    Ok(PyTensor {
        inner: map.to_tensor(),
    })
}

#[pyfunction]
fn gaussian_filter_map(map: &PyTensor, sigma: f64) -> PyResult<PyTensor> {
    let tm = trajectory::TrajectoryMap::from_tensor(&map.inner)
        .ok_or_else(|| err("expected an L x H x W x 2 tensor"))?;
    Ok(PyTensor {
        inner: trajectory::gaussian_filter_map(&tm, sigma).map_err(err)?.to_tensor(),
    })
}

#[pyfunction]
fn sample_sparse(
    trajs: Vec<Vec<(f64, f64)>>,
    n: usize,
    seed: u64,
) -> PyResult<Vec<Vec<(f64, f64)>>> {
    use rand::SeedableRng;
    let set = to_traj_set(trajs)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let out = trajectory::sample_sparse(&set, n, &mut rng).map_err(err)?;
    Ok(out.trajectories().iter().map(|t| t.points.clone()).collect())
}

#[pyfunction]
fn objmc(pred: Vec<Vec<(f64, f64)>>, gt: Vec<Vec<(f64, f64)>>) -> PyResult<f64> {
    trajectory::objmc(&to_traj_set(pred)?, &to_traj_set(gt)?).map_err(err)
}

/// Noise schedule over `T` timesteps (linear beta ramp).
#[pyclass(name = "NoiseSchedule")]
struct PySchedule {
    inner: diffusion::NoiseSchedule,
}

#[pymethods]
impl PySchedule {
    #[new]
    fn new(steps: usize, beta_start: f64, beta_end: f64) -> PyResult<Self> {
        Ok(PySchedule {
            inner: diffusion::make_schedule(steps, beta_start, beta_end).map_err(err)?,
        })
    }

    #[getter]
    fn alpha_bar(&self) -> Vec<f64> {
        self.inner.alpha_bar.clone()
    }

    #[getter]
    fn beta(&self) -> Vec<f64> {
        self.inner.beta.clone()
    }
}

#[pyfunction]
fn q_sample(z0: &PyTensor, t: usize, eps: &PyTensor, ns: &PySchedule) -> PyResult<PyTensor> {
    Ok(PyTensor {
        inner: diffusion::q_sample(&z0.inner, t, &eps.inner, &ns.inner).map_err(err)?,
    })
}

#[pyfunction]
fn noise_loss(pred: &PyTensor, eps: &PyTensor) -> PyResult<PyTensor> {
    Ok(PyTensor {
        inner: diffusion::noise_loss(&pred.inner, &eps.inner).map_err(err)?,
    })
}

/// The denoising network with both motion adapters.
#[pyclass(name = "UNet")]
struct PyUNet {
    inner: unet::UNet<f32>,
}

#[pymethods]
impl PyUNet {
    #[new]
    fn new(config_json: &str, seed: u64) -> PyResult<Self> {
        let cfg: unet::ModelConfig = serde_json::from_str(config_json).map_err(err)?;
        Ok(PyUNet {
            inner: unet::UNet::init(&cfg, seed).map_err(err)?,
        })
    }

    /// Load from a checkpoint directory written by the trainer or CLI.
    #[staticmethod]
    fn load(checkpoint_dir: &str) -> PyResult<Self> {
        let ckpt = training::load_checkpoint::<f32>(Path::new(checkpoint_dir)).map_err(rt_err)?;
        Ok(PyUNet {
            inner: unet::UNet::from_param_map(&ckpt.config, &ckpt.params, None).map_err(err)?,
        })
    }

    fn config(&self) -> String {
        serde_json::to_string_pretty(self.inner.config()).expect("config serializes")
    }

    fn parameter_count(&self) -> usize {
        self.inner.params_ref().iter().map(|(_, t)| t.numel()).sum()
    }

    #[pyo3(signature = (z_t, t, tokens, rt = None, trajectory_map = None))]
    fn forward(
        &self,
        z_t: &PyTensor,
        t: usize,
        tokens: Vec<usize>,
        rt: Option<&PyTensor>,
        trajectory_map: Option<&PyTensor>,
    ) -> PyResult<PyTensor> {
        let tm = match trajectory_map {
            Some(m) => Some(
                trajectory::TrajectoryMap::from_tensor(&m.inner)
                    .ok_or_else(|| err("trajectory map must be L x H x W x 2"))?,
            ),
            None => None,
        };
        let tokens = unet::TokenSequence::new(tokens);
        Ok(PyTensor {
            inner: self
                .inner
                .forward(&z_t.inner, t, &tokens, rt.map(|r| &r.inner), tm.as_ref())
                .map_err(err)?,
        })
    }
}

/// Ancestral sampling from a checkpoint; returns the video as
/// `[L,H,W,3]` in `[0,1]`.
#[pyfunction]
#[pyo3(signature = (checkpoint_dir, tokens, poses_json = None, trajectories = None, steps = 25, seed = 0, deterministic = false, filter_sigma = 1.5))]
#[allow(clippy::too_many_arguments)]
fn sample_video(
    checkpoint_dir: &str,
    tokens: Vec<usize>,
    poses_json: Option<&str>,
    trajectories: Option<Vec<Vec<(f64, f64)>>>,
    steps: usize,
    seed: u64,
    deterministic: bool,
    filter_sigma: f64,
) -> PyResult<PyTensor> {
    let ckpt = training::load_checkpoint::<f32>(Path::new(checkpoint_dir)).map_err(rt_err)?;
    let cfg = ckpt.config.clone();
    let model = unet::UNet::from_param_map(&cfg, &ckpt.params, None).map_err(err)?;
    let ns = diffusion::make_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end).map_err(err)?;
    let rt = match poses_json {
        Some(text) => {
            let ps = camera::poses_from_json(text).map_err(err)?;
            Some(camera::flatten_pose_sequence(&camera::normalize_relative(&ps)).cast::<f32>())
        }
        None => None,
    };
    let tm = match trajectories {
        Some(list) => {
            let set = to_traj_set(list)?;
            let map = trajectory::encode_displacement::<f32>(&set, cfg.height, cfg.width)
                .map_err(err)?;
            Some(trajectory::gaussian_filter_map(&map, filter_sigma).map_err(err)?)
        }
        None => None,
    };
    let tokens = unet::TokenSequence::new(tokens);
    let kind = if deterministic {
        diffusion::SamplerKind::Deterministic
    } else {
        diffusion::SamplerKind::Ancestral
    };
    let latent = diffusion::sample(
        &model,
        &ns,
        &diffusion::SampleConditions {
            tokens: &tokens,
            rt: rt.as_ref(),
            trajectory_map: tm.as_ref(),
        },
        steps,
        kind,
        seed,
    )
    .map_err(rt_err)?;
    Ok(PyTensor {
        inner: diffusion::latent_to_video(&latent)
            .permute(&[0, 2, 3, 1])
            .map_err(err)?,
    })
}

/// Render one synthetic sample; returns a dict with the video tensor, poses
/// JSON, trajectories, tokens, and metadata.
#[pyfunction]
fn render_sample(py: Python<'_>, dataset_config_json: &str, seed: u64) -> PyResult<Py<PyAny>> {
    let cfg: synthdata::DatasetConfig = serde_json::from_str(dataset_config_json).map_err(err)?;
    let s = synthdata::render_sample(&cfg, seed).map_err(rt_err)?;
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item(
        "video",
        PyTensor {
            inner: s.video.cast::<f32>(),
        }
        .into_pyobject(py)?,
    )?;
    dict.set_item("poses_json", camera::poses_to_json(&s.poses))?;
    dict.set_item(
        "trajectories",
        s.trajs
            .as_ref()
            .map(|ts| ts.trajectories().iter().map(|t| t.points.clone()).collect::<Vec<_>>()),
    )?;
    dict.set_item("tokens", s.tokens.ids.clone())?;
    dict.set_item("motion_kind", s.motion_kind.clone())?;
    dict.set_item("sprite_colors", s.sprite_colors.clone())?;
    Ok(dict.unbind().into_any())
}

/// Recover camera motion from a `[L,H,W,3]` video tensor.
#[pyfunction]
#[pyo3(signature = (video, pixels_per_unit = 16.0, zoom_log_scale = 1.0))]
fn estimate_camera_motion(
    video: &PyTensor,
    pixels_per_unit: f64,
    zoom_log_scale: f64,
) -> PyResult<PyPoseSequence> {
    let shape = video.inner.shape();
    if shape.len() != 4 {
        return Err(err("expected an L x H x W x 3 video tensor"));
    }
    let geom = synthdata::WorldGeometry::for_latent(
        shape[1],
        shape[2],
        pixels_per_unit,
        zoom_log_scale,
    );
    Ok(PyPoseSequence {
        inner: synthdata::estimate_camera_motion(&video.inner.cast::<f64>(), &geom)
            .map_err(rt_err)?,
    })
}

/// Track a sprite color (palette index 0-5) through a video.
#[pyfunction]
fn detect_object_trajectory(video: &PyTensor, color_index: usize) -> PyResult<Vec<(f64, f64)>> {
    if color_index >= synthdata::SPRITE_PALETTE.len() {
        return Err(err("palette has six colors"));
    }
    Ok(synthdata::detect_object_trajectory(
        &video.inner.cast::<f64>(),
        synthdata::SPRITE_PALETTE[color_index],
    )
    .map_err(rt_err)?
    .points)
}

/// Run one training stage from a stage-config JSON file, writing the
/// checkpoint (and loss log) into `out_dir`.
#[pyfunction]
fn train_stage(config_path: &str, out_dir: &str) -> PyResult<String> {
    let cfg = training::read_stage_config(Path::new(config_path)).map_err(rt_err)?;
    let result = training::train_stage::<f32>(&cfg).map_err(rt_err)?;
    let out = PathBuf::from(out_dir);
    training::save_checkpoint(&out, &result.checkpoint).map_err(rt_err)?;
    training::write_loss_log(&out.join("loss_log.jsonl"), &result.losses).map_err(rt_err)?;
    training::checkpoint_hash(&out).map_err(rt_err)
}

/// Evaluate a checkpoint over an eval manifest; returns the report as JSON.
#[pyfunction]
fn evaluate(checkpoint_dir: &str, manifest_path: &str, out_dir: &str) -> PyResult<String> {
    let ckpt = training::load_checkpoint::<f32>(Path::new(checkpoint_dir)).map_err(rt_err)?;
    let manifest = training::read_eval_manifest(Path::new(manifest_path)).map_err(rt_err)?;
    let base = Path::new(manifest_path).parent().unwrap_or(Path::new("."));
    let report = training::evaluate(&ckpt, &manifest, base).map_err(rt_err)?;
    training::write_report(Path::new(out_dir), &report).map_err(rt_err)?;
    Ok(serde_json::to_string_pretty(&report).expect("report serializes"))
}

/// Snapshot of a checkpoint's parameters: name -> shape.
#[pyfunction]
fn checkpoint_parameters(checkpoint_dir: &str) -> PyResult<BTreeMap<String, Vec<usize>>> {
    let ckpt = training::load_checkpoint::<f32>(Path::new(checkpoint_dir)).map_err(rt_err)?;
    Ok(ckpt
        .params
        .iter()
        .map(|(name, t)| (name.clone(), t.shape().to_vec()))
        .collect())
}

#[pymodule]
fn motionctrl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("SPRITE_PALETTE", synthdata::SPRITE_PALETTE.to_vec())?;
    m.add_class::<PyTensor>()?;
    m.add_class::<PyAdamState>()?;
    m.add_class::<PyPoseSequence>()?;
    m.add_class::<PySchedule>()?;
    m.add_class::<PyUNet>()?;
    m.add_function(wrap_pyfunction!(attention, m)?)?;
    m.add_function(wrap_pyfunction!(cammc, m)?)?;
    m.add_function(wrap_pyfunction!(parse_realestate_poses, m)?)?;
    m.add_function(wrap_pyfunction!(make_bezier_trajectory, m)?)?;
    m.add_function(wrap_pyfunction!(encode_displacement, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_filter_map, m)?)?;
    m.add_function(wrap_pyfunction!(sample_sparse, m)?)?;
    m.add_function(wrap_pyfunction!(objmc, m)?)?;
    m.add_function(wrap_pyfunction!(q_sample, m)?)?;
    m.add_function(wrap_pyfunction!(noise_loss, m)?)?;
    m.add_function(wrap_pyfunction!(sample_video, m)?)?;
    m.add_function(wrap_pyfunction!(render_sample, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_camera_motion, m)?)?;
    m.add_function(wrap_pyfunction!(detect_object_trajectory, m)?)?;
    m.add_function(wrap_pyfunction!(train_stage, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(checkpoint_parameters, m)?)?;
    Ok(())
}
