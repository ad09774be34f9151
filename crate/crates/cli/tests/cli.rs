//! End-to-end checks of the command-line surface: exit codes, file outputs,
//! and the render -> train -> sample -> eval path on a tiny configuration.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_motionctrl"))
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

#[test]
fn unknown_subcommand_exits_one_with_usage_on_stderr() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn help_exits_zero() {
    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn gen_poses_zoom_in_writes_negative_tz_ramp() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("poses.json");
    let out = bin()
        .args(["gen-poses", "--kind", "zoom_in", "--frames", "8", "--speed", "0.05"])
        .arg("--out")
        .arg(&out_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    let frames = json["frames"].as_array().unwrap();
    assert_eq!(frames.len(), 8);
    for (l, frame) in frames.iter().enumerate() {
        let tz = frame["T"][2].as_f64().unwrap();
        assert!((tz + 0.05 * l as f64).abs() < 1e-12, "frame {l}: {tz}");
    }
    assert!(dir.path().join("poses.json.provenance.json").exists());
}

#[test]
fn gen_poses_rejects_unknown_kind() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["gen-poses", "--kind", "sideways", "--frames", "4", "--speed", "0.1"])
        .arg("--out")
        .arg(dir.path().join("p.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn traj_generation_and_encoding_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let traj_path = dir.path().join("traj.json");
    let out = bin()
        .args(["gen-traj", "--control", "2,2;10,4;14,14", "--frames", "6"])
        .args(["--height", "16", "--width", "16"])
        .arg("--out")
        .arg(&traj_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let map_path = dir.path().join("map.mct");
    let out = bin()
        .args(["encode-traj"])
        .arg("--traj")
        .arg(&traj_path)
        .args(["--height", "16", "--width", "16"])
        .arg("--out")
        .arg(&map_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let tensor: motionctrl_core::tensor::Tensor<f32> =
        motionctrl_core::tensor::io::read_tensor_file(&map_path).unwrap();
    assert_eq!(tensor.shape(), &[6, 16, 16, 2]);
}

#[test]
fn pipeline_render_train_sample_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    let dataset_cfg = dir.path().join("dataset.json");
    write(
        &dataset_cfg,
        r#"{
            "samples": 3, "frames": 2, "height": 16, "width": 16,
            "supersample": 2, "pixels_per_unit": 8.0, "seed": 4,
            "sprite_min": 1, "sprite_max": 1, "sprite_radius": 1.8,
            "dense_cluster": 6
        }"#,
    );
    let out = bin()
        .arg("render-data")
        .arg("--config")
        .arg(&dataset_cfg)
        .arg("--out")
        .arg(&data_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(data_dir.join("manifest.json").exists());
    assert!(data_dir.join("provenance.json").exists());

    let stage_cfg = dir.path().join("base.json");
    write(
        &stage_cfg,
        &format!(
            r#"{{
                "stage": "base", "iterations": 1, "batch_size": 2,
                "learning_rate": 1e-4, "dataset": {:?}, "seed": 7,
                "model": {{
                    "frames": 2, "height": 16, "width": 16,
                    "base_channels": 8, "channel_mults": [1, 2], "heads": 2,
                    "vocab_size": 22, "text_embed_dim": 8, "timesteps": 20
                }}
            }}"#,
            data_dir.to_str().unwrap()
        ),
    );
    let ckpt_dir = dir.path().join("ckpt");
    let out = bin()
        .arg("train")
        .arg("--config")
        .arg(&stage_cfg)
        .arg("--out")
        .arg(&ckpt_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(ckpt_dir.join("manifest.json").exists());
    assert!(ckpt_dir.join("params.bin").exists());
    assert!(ckpt_dir.join("loss_log.jsonl").exists());

    // Sampling succeeds with and without pose/trajectory conditions.
    let poses = dir.path().join("poses.json");
    bin()
        .args(["gen-poses", "--kind", "pan_right", "--frames", "2", "--speed", "0.05"])
        .arg("--out")
        .arg(&poses)
        .status()
        .unwrap();
    let traj = dir.path().join("traj.json");
    bin()
        .args(["gen-traj", "--control", "3,3;12,12", "--frames", "2"])
        .args(["--height", "16", "--width", "16"])
        .arg("--out")
        .arg(&traj)
        .status()
        .unwrap();

    for (name, extra) in [
        ("plain", vec![]),
        ("posed", vec!["--poses"]),
        ("both", vec!["--poses", "--traj"]),
    ] {
        let mut cmd = bin();
        cmd.arg("sample")
            .arg("--checkpoint")
            .arg(&ckpt_dir)
            .args(["--tokens", "2,14", "--steps", "2"])
            .arg("--out")
            .arg(dir.path().join(name));
        if extra.contains(&"--poses") {
            cmd.arg("--poses").arg(&poses);
        }
        if extra.contains(&"--traj") {
            cmd.arg("--traj").arg(&traj);
        }
        let out = cmd.output().unwrap();
        assert_eq!(
            out.status.code(),
            Some(0),
            "{name}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(dir.path().join(format!("{name}.mct")).exists());
        assert!(dir.path().join(format!("{name}.png")).exists());
    }

    // Determinism under a fixed --seed.
    for run in 0..2 {
        let out = bin()
            .args(["--seed", "9"])
            .arg("sample")
            .arg("--checkpoint")
            .arg(&ckpt_dir)
            .args(["--tokens", "2,14", "--steps", "2"])
            .arg("--out")
            .arg(dir.path().join(format!("det{run}")))
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
    }
    let a = std::fs::read(dir.path().join("det0.mct")).unwrap();
    let b = std::fs::read(dir.path().join("det1.mct")).unwrap();
    assert_eq!(a, b);

    // Empty eval manifest: exit 0, empty report.
    let manifest = dir.path().join("eval.json");
    write(&manifest, r#"{"seed": 1, "steps": 2, "cases": []}"#);
    let report_dir = dir.path().join("report");
    let out = bin()
        .arg("eval")
        .arg("--checkpoint")
        .arg(&ckpt_dir)
        .arg("--manifest")
        .arg(&manifest)
        .arg("--out")
        .arg(&report_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(report_dir.join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["n_cases"], 0);
    assert_eq!(report["valid"], true);
}
