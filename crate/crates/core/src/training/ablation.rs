//! Three-arm trajectory-curriculum ablation: dense-only, sparse-only, and
//! dense-then-sparse, each trained from the same post-camera-stage
//! checkpoint and scored on the same ObjMC evaluation set.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::tensor::Scalar;

use super::{
    evaluate, omcm_curriculum, read_eval_manifest, save_checkpoint, train_stage, Result,
    StageConfig, StageId, TrainError,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationConfig {
    /// Post-cmcm checkpoint every arm starts from.
    pub parent_checkpoint: PathBuf,
    pub dataset: PathBuf,
    pub eval_manifest: PathBuf,
    pub iterations_dense: usize,
    pub iterations_sparse: usize,
    #[serde(default = "super::default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "super::default_learning_rate")]
    pub learning_rate: f64,
    pub seed: u64,
    #[serde(default = "super::default_filter_sigma")]
    pub filter_sigma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmResult {
    pub name: String,
    pub objmc: Option<f64>,
    pub objmc_shuffled: Option<f64>,
    pub stages: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub arms: Vec<ArmResult>,
    pub table: String,
}

pub fn read_ablation_config(path: &Path) -> Result<AblationConfig> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))
}

/// Run the three arms and produce a comparison table. Every arm gets the
/// same total iteration budget (`dense + sparse`).
pub fn run_omcm_ablation<S: Scalar>(
    cfg: &AblationConfig,
    work_dir: &Path,
) -> Result<AblationReport> {
    std::fs::create_dir_all(work_dir)?;
    let manifest = read_eval_manifest(&cfg.eval_manifest)?;
    let manifest_dir = cfg
        .eval_manifest
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let total = cfg.iterations_dense + cfg.iterations_sparse;

    let stage_cfg = |stage: StageId, iterations: usize, ablation: bool| StageConfig {
        stage,
        iterations,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        dataset: cfg.dataset.clone(),
        seed: cfg.seed,
        parent_checkpoint: Some(cfg.parent_checkpoint.clone()),
        model: None,
        ablation,
        filter_sigma: cfg.filter_sigma,
    };

    let mut arms = Vec::new();

    let dense_only = train_stage::<S>(&stage_cfg(StageId::OmcmDense, total, false))?;
    save_checkpoint(&work_dir.join("arm_dense"), &dense_only.checkpoint)?;
    let report = evaluate(&dense_only.checkpoint, &manifest, &manifest_dir)?;
    arms.push(ArmResult {
        name: "dense".to_string(),
        objmc: report.objmc_mean,
        objmc_shuffled: report.objmc_shuffled_mean,
        stages: dense_only.checkpoint.stages.clone(),
    });

    let sparse_only = train_stage::<S>(&stage_cfg(StageId::OmcmSparse, total, true))?;
    save_checkpoint(&work_dir.join("arm_sparse"), &sparse_only.checkpoint)?;
    let report = evaluate(&sparse_only.checkpoint, &manifest, &manifest_dir)?;
    arms.push(ArmResult {
        name: "sparse".to_string(),
        objmc: report.objmc_mean,
        objmc_shuffled: report.objmc_shuffled_mean,
        stages: sparse_only.checkpoint.stages.clone(),
    });

    let curriculum = omcm_curriculum::<S>(
        &stage_cfg(StageId::OmcmDense, cfg.iterations_dense, false),
        &stage_cfg(StageId::OmcmSparse, cfg.iterations_sparse, false),
        &work_dir.join("arm_dense_sparse_dense_phase"),
    )?;
    save_checkpoint(&work_dir.join("arm_dense_sparse"), &curriculum.checkpoint)?;
    let report = evaluate(&curriculum.checkpoint, &manifest, &manifest_dir)?;
    arms.push(ArmResult {
        name: "dense+sparse".to_string(),
        objmc: report.objmc_mean,
        objmc_shuffled: report.objmc_shuffled_mean,
        stages: curriculum.checkpoint.stages.clone(),
    });

    let mut table = String::from("arm           ObjMC\n");
    for arm in &arms {
        let v = arm
            .objmc
            .map(|x| format!("{x:.4}"))
            .unwrap_or_else(|| "n/a".to_string());
        table.push_str(&format!("{:<13} {v}\n", arm.name));
    }
    let ordered = match (arms[0].objmc, arms[1].objmc, arms[2].objmc) {
        (Some(d), Some(s), Some(ds)) => ds <= s && s <= d,
        _ => false,
    };
    table.push_str(&format!(
        "ordering dense >= sparse >= dense+sparse: {}\n",
        if ordered { "yes" } else { "no" }
    ));

    let report = AblationReport { arms, table };
    std::fs::write(
        work_dir.join("ablation.json"),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    std::fs::write(work_dir.join("ablation_table.txt"), &report.table)?;
    Ok(report)
}
