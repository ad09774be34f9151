//! Staged training: a base generator stage, the camera-adapter stage, and
//! the dense-to-sparse trajectory-adapter curriculum, with bit-level
//! parameter freezing between stages.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{flatten_pose_sequence, normalize_relative};
use crate::diffusion::{make_schedule, noise_loss, q_sample, video_to_latent};
use crate::synthdata::{derive_seed, LoadedSample};
use crate::tensor::{adam_step, OptimizerState, Scalar, Tensor};
use crate::trajectory::{
    encode_displacement, gaussian_filter_map, sample_sparse, TrajectoryMap,
};
use crate::unet::{parameter_in_stage, Stage, UNet};

pub mod ablation;
pub mod checkpoint;
pub mod eval;

pub use ablation::{read_ablation_config, run_omcm_ablation, AblationConfig, AblationReport};
pub use checkpoint::{checkpoint_hash, load_checkpoint, save_checkpoint, CheckpointData};
pub use eval::{evaluate, read_eval_manifest, write_report, EvalCase, EvalManifest, EvalMode, EvalReport, PoseSpec};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("missing or unreadable parent checkpoint: {0}")]
    MissingParent(String),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("incompatible config: {0}")]
    IncompatibleConfig(String),
    #[error("stage lineage violation: {0}")]
    StageLineage(String),
    #[error("loss became non-finite at iteration {iteration}; aborting")]
    NanLoss { iteration: usize },
    #[error("dataset unsuitable: {0}")]
    Dataset(String),
    #[error("evaluation: {0}")]
    Eval(String),
    #[error(transparent)]
    Unet(#[from] crate::unet::UnetError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error(transparent)]
    Synth(#[from] crate::synthdata::SynthError),
    #[error(transparent)]
    Diffusion(#[from] crate::diffusion::DiffusionError),
    #[error(transparent)]
    Camera(#[from] crate::camera::CameraError),
    #[error(transparent)]
    Trajectory(#[from] crate::trajectory::TrajectoryError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad config file: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// The four pipeline stages. The two trajectory stages share one trainable
/// set but differ in how they draw trajectory maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageId {
    Base,
    Cmcm,
    OmcmDense,
    OmcmSparse,
}

impl StageId {
    pub fn name(self) -> &'static str {
        match self {
            StageId::Base => "base",
            StageId::Cmcm => "cmcm",
            StageId::OmcmDense => "omcm_dense",
            StageId::OmcmSparse => "omcm_sparse",
        }
    }

    pub fn trainable(self) -> Stage {
        match self {
            StageId::Base => Stage::Base,
            StageId::Cmcm => Stage::Cmcm,
            StageId::OmcmDense | StageId::OmcmSparse => Stage::Omcm,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageConfig {
    pub stage: StageId,
    pub iterations: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    /// Directory holding a dataset `manifest.json`.
    pub dataset: PathBuf,
    pub seed: u64,
    #[serde(default)]
    pub parent_checkpoint: Option<PathBuf>,
    /// Required for `base`; later stages inherit the parent's and, when
    /// given, must match it exactly.
    #[serde(default)]
    pub model: Option<crate::unet::ModelConfig>,
    /// Permits the sparse-only ablation arm to skip the dense parent.
    #[serde(default)]
    pub ablation: bool,
    #[serde(default = "default_filter_sigma")]
    pub filter_sigma: f64,
}

fn default_batch_size() -> usize {
    16
}
fn default_learning_rate() -> f64 {
    1e-4
}
fn default_filter_sigma() -> f64 {
    crate::trajectory::DEFAULT_FILTER_SIGMA
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub stage: String,
    pub loss: f64,
}

pub struct TrainOutput<S: Scalar> {
    pub checkpoint: CheckpointData<S>,
    pub losses: Vec<LossRecord>,
}

/// Line-delimited loss log.
pub fn write_loss_log(path: &Path, records: &[LossRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("loss record serializes"));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Derived per-sample inputs for one training step.
struct StepInputs<S: Scalar> {
    t: usize,
    eps: Tensor<S>,
    rt: Option<Tensor<S>>,
    tm: Option<TrajectoryMap<S>>,
}

fn prepare_inputs<S: Scalar>(
    sample: &LoadedSample<S>,
    stage: StageId,
    timesteps: usize,
    filter_sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<StepInputs<S>> {
    let t = rng.random_range(0..timesteps);
    let s = sample.video.shape();
    let eps = Tensor::<S>::randn(&[s[0], 3, s[1], s[2]], rng);
    Ok(StepInputs {
        t,
        eps,
        rt: match stage {
            StageId::Base => None,
            _ => Some(
                flatten_pose_sequence(&normalize_relative(&sample.poses)).cast::<S>(),
            ),
        },
        tm: match stage {
            StageId::Base | StageId::Cmcm => None,
            StageId::OmcmDense => {
                let dense = sample.dense_trajs.as_ref().ok_or_else(|| {
                    TrainError::Dataset("omcm stage needs dense trajectories".into())
                })?;
                let (h, w) = video_hw(sample)?;
                Some(encode_displacement(dense, h, w)?)
            }
            StageId::OmcmSparse => {
                let dense = sample.dense_trajs.as_ref().ok_or_else(|| {
                    TrainError::Dataset("omcm stage needs dense trajectories".into())
                })?;
                let (h, w) = video_hw(sample)?;
                let max_n = dense.max_sparse.min(dense.count());
                let n = rng.random_range(1..=max_n);
                let sparse = sample_sparse(dense, n, rng)?;
                let map = encode_displacement(&sparse, h, w)?;
                Some(gaussian_filter_map(&map, filter_sigma)?)
            }
        },
    })
}

fn video_hw<S: Scalar>(sample: &LoadedSample<S>) -> Result<(usize, usize)> {
    let s = sample.video.shape();
    if s.len() != 4 {
        return Err(TrainError::Dataset(format!(
            "sample video has shape {s:?}"
        )));
    }
    Ok((s[1], s[2]))
}

/// Train one stage. Only the stage's trainable set changes; every other
/// parameter is bit-identical to the parent. Deterministic for a fixed
/// config.
pub fn train_stage<S: Scalar>(cfg: &StageConfig) -> Result<TrainOutput<S>>
where
    S: 'static,
{
    let parent = match &cfg.parent_checkpoint {
        Some(dir) => Some(load_checkpoint::<S>(dir)?),
        None => None,
    };
    // Lineage checks operate on provenance only, so the f32 instantiation in
    // the signature is irrelevant; re-wrap for the helper.
    {
        let view = parent.as_ref().map(|p| CheckpointData::<S> {
            config: p.config.clone(),
            stages: p.stages.clone(),
            params: BTreeMap::new(),
        });
        validate_lineage(cfg, view.as_ref())?;
    }

    let model_cfg = match (&parent, &cfg.model) {
        (Some(p), Some(m)) => {
            if serde_json::to_string(&p.config).unwrap() != serde_json::to_string(m).unwrap() {
                return Err(TrainError::IncompatibleConfig(
                    "stage model config differs from the parent checkpoint's".into(),
                ));
            }
            p.config.clone()
        }
        (Some(p), None) => p.config.clone(),
        (None, Some(m)) => m.clone(),
        (None, None) => {
            return Err(TrainError::Config(
                "base stage needs a model config".into(),
            ))
        }
    };
    if cfg.stage != StageId::Base && parent.is_none() {
        return Err(TrainError::MissingParent(format!(
            "{} stage requires parent_checkpoint",
            cfg.stage.name()
        )));
    }

    let mut master: BTreeMap<String, Tensor<S>> = match &parent {
        Some(p) => p.params.clone(),
        None => UNet::<S>::init(&model_cfg, derive_seed(cfg.seed, 0xC0DE))?.param_map(),
    };

    let dataset: Vec<LoadedSample<S>> = crate::synthdata::load_dataset(&cfg.dataset)?;
    if dataset.is_empty() {
        return Err(TrainError::Dataset("dataset is empty".into()));
    }
    // Validate geometry against the model.
    for s in &dataset {
        let sh = s.video.shape();
        if sh != [model_cfg.frames, model_cfg.height, model_cfg.width, 3] {
            return Err(TrainError::IncompatibleConfig(format!(
                "dataset sample shape {sh:?} does not match the model latent"
            )));
        }
    }
    // The trajectory stages draw only from samples that carry dense paths.
    let usable: Vec<usize> = match cfg.stage {
        StageId::OmcmDense | StageId::OmcmSparse => (0..dataset.len())
            .filter(|&i| dataset[i].dense_trajs.is_some())
            .collect(),
        _ => (0..dataset.len()).collect(),
    };
    if usable.is_empty() {
        return Err(TrainError::Dataset(
            "no samples with dense trajectories for the omcm stage".into(),
        ));
    }

    let stage = cfg.stage.trainable();
    let schedule = make_schedule(model_cfg.timesteps, model_cfg.beta_start, model_cfg.beta_end)?;
    let mut optimizer = OptimizerState::<S>::new(cfg.learning_rate);
    let mut losses = Vec::with_capacity(cfg.iterations);

    for iteration in 0..cfg.iterations {
        let mut pick_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, iteration as u64));
        let batch: Vec<usize> = (0..cfg.batch_size)
            .map(|_| usable[pick_rng.random_range(0..usable.len())])
            .collect();

        // Each worker owns a fresh replica so gradient accumulation order
        // stays fixed regardless of scheduling.
        let results: Vec<Result<(f64, Vec<(String, Vec<S>)>)>> = batch
            .par_iter()
            .enumerate()
            .map(|(k, &sample_idx)| {
                let mut worker_rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    cfg.seed,
                    0x5EED_0000 + (iteration * cfg.batch_size + k) as u64,
                ));
                let sample = &dataset[sample_idx];
                let inputs = prepare_inputs(
                    sample,
                    cfg.stage,
                    model_cfg.timesteps,
                    cfg.filter_sigma,
                    &mut worker_rng,
                )?;
                // [L,H,W,3] -> [L,3,H,W], mapped to [-1,1].
                let z0 = video_to_latent(&sample.video.permute(&[0, 3, 1, 2])?);
                let z_t = q_sample(&z0, inputs.t, &inputs.eps, &schedule)?;
                let replica = UNet::from_param_map(&model_cfg, &master, Some(stage))?;
                let pred = replica.forward(
                    &z_t,
                    inputs.t,
                    &sample.tokens,
                    inputs.rt.as_ref(),
                    inputs.tm.as_ref(),
                )?;
                let loss = noise_loss(&pred, &inputs.eps)?;
                let loss_value = loss.item()?.as_f64();
                loss.backward()?;
                let grads: Vec<(String, Vec<S>)> = replica
                    .params_ref()
                    .into_iter()
                    .filter(|(name, _)| parameter_in_stage(name, stage))
                    .map(|(name, tensor)| {
                        let g = tensor
                            .grad()
                            .unwrap_or_else(|| vec![S::zero(); tensor.numel()]);
                        (name, g)
                    })
                    .collect();
                Ok((loss_value, grads))
            })
            .collect();

        // Merge in batch order.
        let mut merged: BTreeMap<String, Vec<S>> = BTreeMap::new();
        let mut loss_sum = 0.0;
        for r in results {
            let (loss_value, grads) = r?;
            loss_sum += loss_value;
            for (name, g) in grads {
                match merged.get_mut(&name) {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            *a = *a + *b;
                        }
                    }
                    None => {
                        merged.insert(name, g);
                    }
                }
            }
        }
        let mean_loss = loss_sum / cfg.batch_size as f64;
        if !mean_loss.is_finite() {
            return Err(TrainError::NanLoss { iteration });
        }
        let scale = S::from_f64(1.0 / cfg.batch_size as f64);
        for (name, grad) in &merged {
            let scaled: Vec<S> = grad.iter().map(|&g| g * scale).collect();
            master
                .get(name)
                .expect("merged grads only for known params")
                .accumulate_grad(&scaled);
        }
        let mut trainable: Vec<(String, &mut Tensor<S>)> = master
            .iter_mut()
            .filter(|(name, _)| parameter_in_stage(name, stage))
            .map(|(name, tensor)| (name.clone(), tensor))
            .collect();
        adam_step(&mut trainable, &mut optimizer)?;

        losses.push(LossRecord {
            iteration,
            stage: cfg.stage.name().to_string(),
            loss: mean_loss,
        });
        if iteration % 50 == 0 {
            log::info!(
                "stage {} iteration {iteration}: loss {mean_loss:.5}",
                cfg.stage.name()
            );
        }
    }

    let mut stages = parent.map(|p| p.stages).unwrap_or_default();
    stages.push(cfg.stage.name().to_string());
    Ok(TrainOutput {
        checkpoint: CheckpointData {
            config: model_cfg,
            stages,
            params: master,
        },
        losses,
    })
}

fn validate_lineage<S: Scalar>(
    cfg: &StageConfig,
    parent: Option<&CheckpointData<S>>,
) -> Result<()> {
    let has = |stage: &str| {
        parent
            .map(|p| p.stages.iter().any(|s| s == stage))
            .unwrap_or(false)
    };
    match cfg.stage {
        StageId::Base => Ok(()),
        StageId::Cmcm if has("base") => Ok(()),
        StageId::Cmcm => Err(TrainError::StageLineage(
            "cmcm requires a base checkpoint".into(),
        )),
        StageId::OmcmDense if has("base") && has("cmcm") => Ok(()),
        StageId::OmcmDense => Err(TrainError::StageLineage(
            "omcm_dense requires base+cmcm checkpoints".into(),
        )),
        StageId::OmcmSparse => {
            if !(has("base") && has("cmcm")) {
                Err(TrainError::StageLineage(
                    "omcm_sparse requires base+cmcm checkpoints".into(),
                ))
            } else if !cfg.ablation && !has("omcm_dense") {
                Err(TrainError::StageLineage(
                    "omcm_sparse requires an omcm_dense parent (or the ablation flag)".into(),
                ))
            } else {
                Ok(())
            }
        }
    }
}

/// Run the dense stage then the sparse fine-tune; returns the final
/// checkpoint and both loss logs. The sparse phase re-draws `n` in `[1, N]`
/// per sample per step.
pub fn omcm_curriculum<S: Scalar>(
    cfg_dense: &StageConfig,
    cfg_sparse: &StageConfig,
    dense_out_dir: &Path,
) -> Result<TrainOutput<S>> {
    if cfg_dense.stage != StageId::OmcmDense || cfg_sparse.stage != StageId::OmcmSparse {
        return Err(TrainError::Config(
            "curriculum needs an omcm_dense config and an omcm_sparse config".into(),
        ));
    }
    let dense = train_stage::<S>(cfg_dense)?;
    save_checkpoint(dense_out_dir, &dense.checkpoint)?;
    let mut sparse_cfg = cfg_sparse.clone();
    sparse_cfg.parent_checkpoint = Some(dense_out_dir.to_path_buf());
    let sparse = train_stage::<S>(&sparse_cfg)?;
    let mut losses = dense.losses;
    losses.extend(sparse.losses);
    Ok(TrainOutput {
        checkpoint: sparse.checkpoint,
        losses,
    })
}

pub fn read_stage_config(path: &Path) -> Result<StageConfig> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{render_dataset, DatasetConfig};
    use crate::unet::ModelConfig;

    fn tiny_model() -> ModelConfig {
        serde_json::from_value(serde_json::json!({
            "frames": 2, "height": 16, "width": 16,
            "base_channels": 8, "channel_mults": [1, 2], "heads": 2,
            "vocab_size": 22, "text_embed_dim": 8, "timesteps": 20
        }))
        .unwrap()
    }

    fn tiny_dataset(dir: &Path, samples: usize) -> DatasetConfig {
        let cfg = DatasetConfig {
            samples,
            frames: 2,
            height: 16,
            width: 16,
            supersample: 2,
            pixels_per_unit: 8.0,
            zoom_log_scale: 1.0,
            seed: 5,
            sprite_min: 1,
            sprite_max: 1,
            sprite_radius: 1.8,
            dense_cluster: 6,
            p_static_camera: 0.2,
            p_complex_camera: 0.1,
            p_static_sprite: 0.2,
        };
        render_dataset(&cfg, dir).unwrap();
        cfg
    }

    fn stage_cfg(stage: StageId, data: &Path, iterations: usize) -> StageConfig {
        StageConfig {
            stage,
            iterations,
            batch_size: 2,
            learning_rate: 1e-3,
            dataset: data.to_path_buf(),
            seed: 11,
            parent_checkpoint: None,
            model: Some(tiny_model()),
            ablation: false,
            filter_sigma: 1.0,
        }
    }

    #[test]
    fn zero_iteration_stage_reproduces_parent_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        tiny_dataset(&data, 3);
        let base = train_stage::<f32>(&stage_cfg(StageId::Base, &data, 0)).unwrap();
        let base_dir = dir.path().join("base");
        save_checkpoint(&base_dir, &base.checkpoint).unwrap();

        let mut cfg = stage_cfg(StageId::Cmcm, &data, 0);
        cfg.parent_checkpoint = Some(base_dir);
        cfg.model = None;
        let child = train_stage::<f32>(&cfg).unwrap();
        for (name, t) in &base.checkpoint.params {
            assert_eq!(child.checkpoint.params[name].data(), t.data(), "{name}");
        }
        assert_eq!(child.checkpoint.stages, vec!["base", "cmcm"]);
    }

    #[test]
    fn stage_lineage_is_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        tiny_dataset(&data, 2);
        // cmcm without a parent fails.
        let mut cfg = stage_cfg(StageId::Cmcm, &data, 1);
        cfg.model = None;
        assert!(matches!(
            train_stage::<f32>(&cfg),
            Err(TrainError::StageLineage(_) | TrainError::MissingParent(_))
        ));
        // omcm_sparse directly on base+cmcm fails without the ablation flag.
        let base = train_stage::<f32>(&stage_cfg(StageId::Base, &data, 0)).unwrap();
        let base_dir = dir.path().join("base");
        save_checkpoint(&base_dir, &base.checkpoint).unwrap();
        let mut cmcm = stage_cfg(StageId::Cmcm, &data, 0);
        cmcm.parent_checkpoint = Some(base_dir);
        cmcm.model = None;
        let cmcm_out = train_stage::<f32>(&cmcm).unwrap();
        let cmcm_dir = dir.path().join("cmcm");
        save_checkpoint(&cmcm_dir, &cmcm_out.checkpoint).unwrap();
        let mut sparse = stage_cfg(StageId::OmcmSparse, &data, 1);
        sparse.parent_checkpoint = Some(cmcm_dir.clone());
        sparse.model = None;
        assert!(matches!(
            train_stage::<f32>(&sparse),
            Err(TrainError::StageLineage(_))
        ));
        sparse.ablation = true;
        assert!(train_stage::<f32>(&sparse).is_ok());
    }

    #[test]
    fn cmcm_stage_touches_only_its_trainable_set() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        tiny_dataset(&data, 3);
        let base = train_stage::<f32>(&stage_cfg(StageId::Base, &data, 2)).unwrap();
        let base_dir = dir.path().join("base");
        save_checkpoint(&base_dir, &base.checkpoint).unwrap();

        let mut cfg = stage_cfg(StageId::Cmcm, &data, 2);
        cfg.parent_checkpoint = Some(base_dir);
        cfg.model = None;
        let out = train_stage::<f32>(&cfg).unwrap();
        let mut changed_attn2 = false;
        for (name, t) in &out.checkpoint.params {
            let parent = &base.checkpoint.params[name];
            if parameter_in_stage(name, Stage::Cmcm) {
                if name.contains(".temporal") && name.contains(".attn2.") && t.data() != parent.data() {
                    changed_attn2 = true;
                }
            } else {
                assert_eq!(t.data(), parent.data(), "frozen `{name}` changed");
            }
        }
        assert!(changed_attn2, "attn2 weights did not move");
    }

    #[test]
    fn training_is_deterministic_per_config() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        tiny_dataset(&data, 3);
        let a = train_stage::<f32>(&stage_cfg(StageId::Base, &data, 3)).unwrap();
        let b = train_stage::<f32>(&stage_cfg(StageId::Base, &data, 3)).unwrap();
        for (name, t) in &a.checkpoint.params {
            assert_eq!(b.checkpoint.params[name].data(), t.data(), "{name}");
        }
        for (la, lb) in a.losses.iter().zip(&b.losses) {
            assert_eq!(la.loss, lb.loss);
        }
    }

    #[test]
    fn sparse_draw_counts_are_uniform() {
        // Counting oracle over the n ~ U[1, N] draw of the sparse stage.
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        tiny_dataset(&data, 2);
        let dataset: Vec<LoadedSample<f32>> = crate::synthdata::load_dataset(&data).unwrap();
        let sample = dataset
            .iter()
            .find(|s| s.dense_trajs.is_some())
            .expect("sample with dense trajectories");
        let max_n = sample
            .dense_trajs
            .as_ref()
            .unwrap()
            .max_sparse
            .min(sample.dense_trajs.as_ref().unwrap().count());
        let draws = 3000usize;
        let mut counts = vec![0usize; max_n + 1];
        for k in 0..draws {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(99, k as u64));
            let inputs =
                prepare_inputs(sample, StageId::OmcmSparse, 20, 1.0, &mut rng).unwrap();
            let tm = inputs.tm.unwrap();
            // Count written cells per frame 1 to infer n (no collisions for
            // this tiny cluster is not guaranteed, so recompute directly).
            let _ = tm;
            let mut rng2 = ChaCha8Rng::seed_from_u64(derive_seed(99, k as u64));
            let _t: usize = rng2.random_range(0..20usize);
            let _eps = Tensor::<f32>::randn(&[2, 3, 16, 16], &mut rng2);
            let n = rng2.random_range(1..=max_n);
            counts[n] += 1;
        }
        let expected = draws as f64 / max_n as f64;
        let sigma = (expected * (1.0 - 1.0 / max_n as f64)).sqrt();
        for n in 1..=max_n {
            let dev = (counts[n] as f64 - expected).abs();
            assert!(dev < 3.0 * sigma, "n={n}: count {} vs {expected}", counts[n]);
        }
    }

    #[test]
    fn diverging_loss_aborts_with_nan_error() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        tiny_dataset(&data, 2);
        let mut cfg = stage_cfg(StageId::Base, &data, 30);
        cfg.learning_rate = 1e12;
        match train_stage::<f32>(&cfg) {
            Err(TrainError::NanLoss { .. }) => {}
            other => panic!("expected NanLoss, got {:?}", other.map(|_| "ok")),
        }
    }

    #[test]
    fn evaluate_empty_manifest_yields_empty_valid_report() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        tiny_dataset(&data, 2);
        let base = train_stage::<f32>(&stage_cfg(StageId::Base, &data, 0)).unwrap();
        let manifest = EvalManifest {
            mode: EvalMode::Model,
            steps: 2,
            sampler: crate::diffusion::SamplerKind::Ancestral,
            seed: 3,
            pixels_per_unit: 8.0,
            zoom_log_scale: 1.0,
            filter_sigma: 1.0,
            cases: vec![],
        };
        let report = evaluate(&base.checkpoint, &manifest, dir.path()).unwrap();
        assert_eq!(report.n_cases, 0);
        assert!(report.valid);
        assert!(report.cammc_mean.is_none());
        eval::write_report(&dir.path().join("report"), &report).unwrap();
        assert!(dir.path().join("report/report.json").exists());
        assert!(dir.path().join("report/report.csv").exists());
    }

    #[test]
    fn ground_truth_evaluation_hits_oracle_ceiling() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        tiny_dataset(&data, 2);
        let base = train_stage::<f32>(&stage_cfg(StageId::Base, &data, 0)).unwrap();
        let mut cases = eval::standard_camera_cases(2);
        cases.truncate(4);
        let manifest = EvalManifest {
            mode: EvalMode::GroundTruth,
            steps: 2,
            sampler: crate::diffusion::SamplerKind::Deterministic,
            seed: 3,
            pixels_per_unit: 8.0,
            zoom_log_scale: 1.0,
            filter_sigma: 1.0,
            cases,
        };
        let report = evaluate(&base.checkpoint, &manifest, dir.path()).unwrap();
        assert!(report.valid);
        let cammc = report.cammc_mean.unwrap();
        assert!(cammc < 0.01, "oracle ceiling cammc {cammc}");
        // Shuffled controls pair different kinds, so they sit far higher.
        assert!(report.cammc_shuffled_mean.unwrap() > 2.0 * cammc);
    }
}
