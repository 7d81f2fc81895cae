//! End-to-end CLI checks through the built binary: exit codes, artifact
//! layout, and rerun determinism.

use std::path::Path;
use std::process::Command;

fn adgen() -> Command {
    Command::new(env!("CARGO_BIN_EXE_adgen"))
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let config = format!(
        r#"
[data]
root = "{root}"
domains = ["s", "c"]
target = "c"
input_size = 32

[model]
levels = 2
channels = 8
bifpn_repeats = 1
projection_dim = 8
mlp_hidden = [8, 6]

[train]
steps = 6
batch_episodes = 2
learning_rate = 1e-3
seed = 3
rank_pairs = 8
log_every = 0
checkpoint_every = 3

[eval]
fraction = 1.0
fractions = [0.5, 1.0]
seeds = [1]

[synth]
size = 32

[[synth.domains]]
name = "s"
family = "stripes"
n_normal = 8
n_abnormal = 4
seed = 21

[[synth.domains]]
name = "c"
family = "checker"
n_normal = 8
n_abnormal = 4
seed = 22

[output]
root = "{runs}"
"#,
        root = dir.join("data").display(),
        runs = dir.join("runs").display()
    );
    let path = dir.join("config.toml");
    std::fs::write(&path, config).unwrap();
    path
}

#[test]
fn missing_data_root_exits_2_with_named_path() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = adgen()
        .args(["train", "--config"])
        .arg(&config)
        .arg("--run-name")
        .arg("t")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("data"), "stderr should name the missing path: {stderr}");
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let mut text = std::fs::read_to_string(&config).unwrap();
    text.push_str("\n[bogus]\nkey = 1\n");
    std::fs::write(&config, text).unwrap();
    let out = adgen()
        .args(["synth", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn full_pipeline_and_rerun_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());

    // synth twice: byte-identical trees.
    let ok = adgen()
        .args(["synth", "--config"])
        .arg(&config)
        .args(["--run-name", "synth1"])
        .status()
        .unwrap();
    assert!(ok.success());
    let reread = |p: &Path| -> Vec<(String, Vec<u8>)> {
        let mut files = Vec::new();
        let mut stack = vec![p.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in std::fs::read_dir(&d).unwrap() {
                let e = e.unwrap().path();
                if e.is_dir() {
                    stack.push(e);
                } else {
                    files.push((
                        e.strip_prefix(p).unwrap().to_string_lossy().to_string(),
                        std::fs::read(&e).unwrap(),
                    ));
                }
            }
        }
        files.sort();
        files
    };
    let tree1 = reread(&dir.path().join("data"));
    std::fs::remove_dir_all(dir.path().join("data")).unwrap();
    let ok = adgen()
        .args(["synth", "--config"])
        .arg(&config)
        .args(["--run-name", "synth2"])
        .status()
        .unwrap();
    assert!(ok.success());
    let tree2 = reread(&dir.path().join("data"));
    assert_eq!(tree1, tree2, "synth reruns must be byte-identical");

    // train twice with the same seed: identical JSONL logs.
    for name in ["train1", "train2"] {
        let ok = adgen()
            .args(["train", "--config"])
            .arg(&config)
            .args(["--run-name", name])
            .status()
            .unwrap();
        assert!(ok.success());
    }
    let runs = dir.path().join("runs");
    let log1 = std::fs::read(runs.join("train1").join("train_log.jsonl")).unwrap();
    let log2 = std::fs::read(runs.join("train2").join("train_log.jsonl")).unwrap();
    assert!(!log1.is_empty());
    assert_eq!(log1, log2, "identical config/seed must produce identical loss logs");

    // resume from the mid-run checkpoint: the tail of the log matches.
    let mid = runs.join("train1").join("checkpoints").join("step-000003.ckpt");
    assert!(mid.is_file());
    let ok = adgen()
        .args(["train", "--config"])
        .arg(&config)
        .args(["--run-name", "resumed", "--resume"])
        .arg(&mid)
        .status()
        .unwrap();
    assert!(ok.success());
    let resumed = std::fs::read_to_string(runs.join("resumed").join("train_log.jsonl")).unwrap();
    let full_log: String = String::from_utf8(log1).unwrap();
    let tail: Vec<&str> = full_log.lines().skip(3).collect();
    let resumed_lines: Vec<&str> = resumed.lines().collect();
    assert_eq!(resumed_lines, tail, "resume must reproduce the remaining loss values");

    // eval on the final checkpoint; reruns byte-identical.
    let ckpt = runs.join("train1").join("checkpoints").join("final.ckpt");
    for name in ["eval1", "eval2"] {
        let ok = adgen()
            .args(["eval", "--config"])
            .arg(&config)
            .args(["--run-name", name, "--checkpoint"])
            .arg(&ckpt)
            .status()
            .unwrap();
        assert!(ok.success());
    }
    let rep1 = std::fs::read(runs.join("eval1").join("eval_report.json")).unwrap();
    let rep2 = std::fs::read(runs.join("eval2").join("eval_report.json")).unwrap();
    assert_eq!(rep1, rep2);
    // Resolved config is written next to the outputs.
    assert!(runs.join("eval1").join("config.toml").is_file());

    // sweep produces table + plot.
    let ok = adgen()
        .args(["sweep", "--config"])
        .arg(&config)
        .args(["--run-name", "sweep1", "--checkpoint"])
        .arg(&ckpt)
        .status()
        .unwrap();
    assert!(ok.success());
    let csv = std::fs::read_to_string(runs.join("sweep1").join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "header + one row per fraction");
    assert!(runs.join("sweep1").join("sweep.png").is_file());

    // localize writes a heatmap pair per image.
    let query = dir.path().join("data").join("c").join("test").join("good").join("000.png");
    let ok = adgen()
        .args(["localize", "--config"])
        .arg(&config)
        .args(["--run-name", "loc1", "--checkpoint"])
        .arg(&ckpt)
        .arg("--images")
        .arg(&query)
        .status()
        .unwrap();
    assert!(ok.success());
    assert!(runs.join("loc1").join("000_heat.png").is_file());
    assert!(runs.join("loc1").join("000_overlay.png").is_file());

    // fid renders the domain table.
    let out = adgen()
        .args(["fid", "--config"])
        .arg(&config)
        .args(["--run-name", "fid1", "--checkpoint"])
        .arg(&ckpt)
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("average"));
}
