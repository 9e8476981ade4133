//! End-to-end exercise of the command-line surface: synth, train, eval,
//! retrieve, export-embeddings, and error exits.

use std::path::Path;
use std::process::Command;

fn stbir() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stbir"))
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("run.cfg");
    std::fs::write(
        &path,
        "optimizer.learning_rate = 1e-3\nmcfa.epochs_per_stage = 3\nsynth.num_categories = 8\nsynth.instances_per_category = 4\nbatch_size = 8\n",
    )
    .unwrap();
    path
}

#[test]
fn full_command_flow() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("out");

    // synth writes a loadable manifest
    let manifest = dir.path().join("data.jsonl");
    let status = stbir()
        .args([
            "--config",
            cfg.to_str().unwrap(),
            "synth",
            "--manifest",
            manifest.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(manifest.exists());

    // train emits per-stage and final checkpoints plus reports
    let status = stbir()
        .args([
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "train",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    for file in ["stage0.ckpt", "stage1.ckpt", "stage2.ckpt", "final.ckpt", "loss_curves.csv"] {
        assert!(out.join(file).exists(), "{file} missing");
    }
    let curves = std::fs::read_to_string(out.join("loss_curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + 3 * 3, "header + 3 stages x 3 epochs");

    // eval prints one row per mask
    let output = stbir()
        .args([
            "--out",
            out.to_str().unwrap(),
            "eval",
            "--checkpoint",
            out.join("final.ckpt").to_str().unwrap(),
            "--manifest",
            manifest.to_str().unwrap(),
            "--mask",
            "all",
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    for label in ["fused", "sketch-only", "text-only"] {
        assert!(stdout.contains(label), "missing {label} in: {stdout}");
    }
    let eval_csv = std::fs::read_to_string(out.join("eval.csv")).unwrap();
    assert_eq!(eval_csv.lines().count(), 4);
    // monotone R@K in every row
    for line in eval_csv.lines().skip(1) {
        let cols: Vec<f64> = line.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
        assert!(cols[0] <= cols[1] && cols[1] <= cols[2], "{line}");
    }

    // retrieve with an exact gallery member's own views ranks sensibly
    let first_line = std::fs::read_to_string(&manifest).unwrap();
    let rec: serde_json::Value = serde_json::from_str(first_line.lines().next().unwrap()).unwrap();
    let join = |key: &str| {
        rec[key]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_f64().unwrap().to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    let output = stbir()
        .args([
            "retrieve",
            "--checkpoint",
            out.join("final.ckpt").to_str().unwrap(),
            "--gallery",
            manifest.to_str().unwrap(),
            "--sketch",
            &join("sketch"),
            "--text",
            &join("text"),
            "-k",
            "1",
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert_eq!(stdout.lines().count(), 2, "header + one row: {stdout}");

    // export-embeddings writes the binary format
    let emb = dir.path().join("emb.bin");
    let status = stbir()
        .args([
            "export-embeddings",
            "--checkpoint",
            out.join("final.ckpt").to_str().unwrap(),
            "--manifest",
            manifest.to_str().unwrap(),
            "--file",
            emb.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let (loaded, ids) = stbir::checkpoint::import_embeddings(&emb).unwrap();
    assert_eq!(loaded.nrows(), 32);
    assert_eq!(ids.len(), 32);
}

#[test]
fn invalid_config_exits_nonzero_with_all_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "batch_size = 1\nckfso.s = -2\nmcfa.order = SSS\n").unwrap();
    let output = stbir()
        .args(["--config", cfg.to_str().unwrap(), "train"])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("batch_size"), "{stderr}");
    assert!(stderr.contains("s must be > 0"), "{stderr}");
    assert!(stderr.contains("repeated"), "{stderr}");
}

#[test]
fn retrieve_rejects_malformed_vector() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("out");
    let manifest = dir.path().join("data.jsonl");
    assert!(stbir()
        .args([
            "--config",
            cfg.to_str().unwrap(),
            "synth",
            "--manifest",
            manifest.to_str().unwrap()
        ])
        .status()
        .unwrap()
        .success());
    assert!(stbir()
        .args([
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "train"
        ])
        .status()
        .unwrap()
        .success());
    let output = stbir()
        .args([
            "retrieve",
            "--checkpoint",
            out.join("final.ckpt").to_str().unwrap(),
            "--gallery",
            manifest.to_str().unwrap(),
            "--sketch",
            "1.0,oops",
            "--text",
            "1.0",
        ])
        .output()
        .unwrap();
    assert!(!output.status.success());
}
