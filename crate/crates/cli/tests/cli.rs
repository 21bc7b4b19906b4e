//! Command-level tests on a small synthetic IDX dataset: output layout,
//! error paths and exit codes, resume numbering, and byte-determinism of
//! the full pipeline across two identical executions.

use sfu_cli::{
    cmd_eval, cmd_partition, cmd_recover, cmd_report, cmd_train, cmd_unlearn, CliError, RunConfig,
};
use std::path::{Path, PathBuf};

/// Write a small synthetic IDX pair (28x28 images with class-coded blobs)
/// and return the four dataset paths.
fn write_synthetic_idx(dir: &Path, n_train: usize, n_test: usize, seed: u64) -> [PathBuf; 4] {
    use sfu_core::fl::synthetic_dataset;
    let write_pair = |name: &str, n: usize, s: u64| -> (PathBuf, PathBuf) {
        let ds = synthetic_dataset(n, s);
        let img_path = dir.join(format!("{name}-images-idx3-ubyte"));
        let lab_path = dir.join(format!("{name}-labels-idx1-ubyte"));
        let mut img = Vec::new();
        img.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        img.extend_from_slice(&(n as u32).to_be_bytes());
        img.extend_from_slice(&28u32.to_be_bytes());
        img.extend_from_slice(&28u32.to_be_bytes());
        for r in 0..n {
            for &v in ds.images.row(r) {
                img.push(((v + 1.0) / 2.0 * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
        std::fs::write(&img_path, img).unwrap();
        let mut lab = Vec::new();
        lab.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        lab.extend_from_slice(&(n as u32).to_be_bytes());
        lab.extend_from_slice(&ds.labels);
        std::fs::write(&lab_path, lab).unwrap();
        (img_path, lab_path)
    };
    let (ti, tl) = write_pair("train", n_train, seed);
    let (vi, vl) = write_pair("t10k", n_test, seed + 1);
    [ti, tl, vi, vl]
}

fn test_config(data: &[PathBuf; 4]) -> RunConfig {
    let json = serde_json::json!({
        "train_images": data[0],
        "train_labels": data[1],
        "test_images": data[2],
        "test_labels": data[3],
        "n_clients": 3,
        "rounds": 2,
        "batch_size": 16,
        "recovery_rounds": 1,
        "seed": 11,
        "record_timing": false,
        "keep_history": true,
        "clip_norm": 0.5,
    });
    let cfg: RunConfig = serde_json::from_value(json).unwrap();
    cfg.validate().unwrap();
    cfg
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<PathBuf> = walk(dir);
    files.sort();
    files
        .into_iter()
        .map(|p| {
            let rel = p.strip_prefix(dir).unwrap().display().to_string();
            (rel, std::fs::read(&p).unwrap())
        })
        .collect()
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out
}

#[test]
fn partition_command_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_synthetic_idx(tmp.path(), 120, 40, 1);
    let cfg = test_config(&data);

    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    cmd_partition(&cfg, &out_a).unwrap();
    cmd_partition(&cfg, &out_b).unwrap();
    assert_eq!(
        std::fs::read(out_a.join("partition.json")).unwrap(),
        std::fs::read(out_b.join("partition.json")).unwrap()
    );
    // Ten near-equal lists for the iid default on a bigger config.
    let mut big = cfg.clone();
    big.n_clients = 10;
    big.target_client = 0;
    let out_c = tmp.path().join("c");
    cmd_partition(&big, &out_c).unwrap();
    let part = sfu_core::data::Partition::load(&out_c.join("partition.json")).unwrap();
    assert_eq!(part.n_clients(), 10);
    let sizes: Vec<usize> = part.client_indices.iter().map(Vec::len).collect();
    assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
}

#[test]
fn dirichlet_partition_command_skews_histograms() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_synthetic_idx(tmp.path(), 400, 40, 2);
    let mut cfg = test_config(&data);
    cfg.partition = "dirichlet".into();
    cfg.dirichlet_beta = 0.3;
    cfg.n_clients = 10;

    // Over a few seeds, at least one client is dominated by one class.
    let mut skew_seen = false;
    for s in 0..5 {
        cfg.seed = 100 + s;
        let out = tmp.path().join(format!("d{s}"));
        cmd_partition(&cfg, &out).unwrap();
        let part = sfu_core::data::Partition::load(&out.join("partition.json")).unwrap();
        let labels = {
            let ds = sfu_core::data::load_mnist(&data[0], &data[1]).unwrap();
            ds.labels
        };
        for list in &part.client_indices {
            let mut hist = [0usize; 10];
            for &i in list {
                hist[labels[i] as usize] += 1;
            }
            if hist.iter().any(|&h| h * 2 > list.len() && list.len() >= 4) {
                skew_seen = true;
            }
        }
    }
    assert!(skew_seen, "no skew at beta=0.3 across seeds");
}

#[test]
fn invalid_config_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_synthetic_idx(tmp.path(), 60, 20, 3);
    let mut cfg = test_config(&data);
    cfg.partition = "dirichlet".into();
    cfg.dirichlet_beta = -1.0;
    let err = cfg.validate().unwrap_err();
    assert_eq!(err.exit_code(), 2);

    let mut cfg = test_config(&data);
    cfg.method = "nonsense".into();
    let err = cfg.validate().unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn train_writes_expected_layout_and_zero_rounds_is_initial() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_synthetic_idx(tmp.path(), 90, 30, 4);
    let mut cfg = test_config(&data);
    cfg.rounds = 0;
    let out = tmp.path().join("run");
    cmd_train(&cfg, &out, None).unwrap();
    for f in [
        "model.ckpt",
        "partition.json",
        "rounds.csv",
        "rounds.jsonl",
        "history.bin",
        "manifest.json",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let model = sfu_core::nn::load_checkpoint(&out.join("model.ckpt")).unwrap();
    let initial = sfu_core::nn::ModelParams::mnist_mlp(sfu_core::seed::init_seed(cfg.seed));
    assert_eq!(model, initial);
}

#[test]
fn resume_continues_round_numbering() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_synthetic_idx(tmp.path(), 90, 30, 5);
    let cfg = test_config(&data);
    let first = tmp.path().join("first");
    cmd_train(&cfg, &first, None).unwrap();

    let second = tmp.path().join("second");
    cmd_train(&cfg, &second, Some(&first)).unwrap();
    let rounds = std::fs::read_to_string(second.join("rounds.csv")).unwrap();
    let first_round_line = rounds.lines().nth(1).unwrap();
    assert!(
        first_round_line.starts_with("2,"),
        "resumed run should start at round 2, got {first_round_line}"
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(second.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["rounds_completed"], 4);
}

#[test]
fn unlearn_methods_produce_outputs_and_ul_requires_history() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_synthetic_idx(tmp.path(), 120, 40, 6);
    let cfg = test_config(&data);
    let train_dir = tmp.path().join("train");
    cmd_train(&cfg, &train_dir, None).unwrap();
    let ckpt = train_dir.join("model.ckpt");

    for method in ["sfu", "ga", "ul", "retrain"] {
        let mut m_cfg = cfg.clone();
        m_cfg.method = method.into();
        let out = tmp.path().join(format!("un_{method}"));
        cmd_unlearn(&m_cfg, &ckpt, None, &out).unwrap();
        assert!(out.join("unlearned.ckpt").exists());
        assert!(out.join("metrics.csv").exists());
        assert!(out.join("metrics.jsonl").exists());
        let manifest = std::fs::read_to_string(out.join("unlearn_manifest.json")).unwrap();
        assert!(manifest.contains(&format!("\"method\": \"{method}\"")));
        if method == "sfu" {
            assert!(manifest.contains("\"sigma\""), "sfu manifest has spectra");
            assert!(!manifest.contains("\"lambdas\""), "factors stay private");
        }
        let rows = sfu_core::eval::read_report(&out.join("metrics.jsonl")).unwrap();
        assert_eq!(rows.len(), 2);
    }

    // ul without a history file: explicit missing-prerequisite, nothing
    // written.
    let bare = tmp.path().join("bare");
    std::fs::create_dir(&bare).unwrap();
    let bare_ckpt = bare.join("model.ckpt");
    std::fs::copy(&ckpt, &bare_ckpt).unwrap();
    let mut ul_cfg = cfg.clone();
    ul_cfg.method = "ul".into();
    let out = tmp.path().join("un_missing");
    let err = cmd_unlearn(&ul_cfg, &bare_ckpt, None, &out).unwrap_err();
    assert_eq!(err.exit_code(), 4, "{err}");
    assert!(matches!(err, CliError::MissingPrerequisite(_)));
    assert!(!out.join("unlearned.ckpt").exists());
    assert!(!out.join("metrics.csv").exists());
}

#[test]
fn sfu_manifest_logs_lambdas_only_when_asked() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_synthetic_idx(tmp.path(), 90, 30, 7);
    let mut cfg = test_config(&data);
    cfg.log_lambdas = true;
    let train_dir = tmp.path().join("train");
    cmd_train(&cfg, &train_dir, None).unwrap();
    let out = tmp.path().join("un");
    cmd_unlearn(&cfg, &train_dir.join("model.ckpt"), None, &out).unwrap();
    let manifest = std::fs::read_to_string(out.join("unlearn_manifest.json")).unwrap();
    assert!(manifest.contains("\"lambdas\""));
}

#[test]
fn recover_zero_rounds_keeps_model_and_emits_nothing_per_round() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_synthetic_idx(tmp.path(), 90, 30, 8);
    let cfg = test_config(&data);
    let train_dir = tmp.path().join("train");
    cmd_train(&cfg, &train_dir, None).unwrap();
    let out = tmp.path().join("rec");
    cmd_recover(&cfg, &train_dir.join("model.ckpt"), 0, None, &out).unwrap();
    let recovered = sfu_core::nn::load_checkpoint(&out.join("recovered.ckpt")).unwrap();
    let start = sfu_core::nn::load_checkpoint(&train_dir.join("model.ckpt")).unwrap();
    assert_eq!(recovered, start);
    let rows = sfu_core::eval::read_report(&out.join("metrics.jsonl")).unwrap();
    assert!(rows.is_empty());
}

#[test]
fn eval_command_reports_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_synthetic_idx(tmp.path(), 90, 30, 9);
    let cfg = test_config(&data);
    let train_dir = tmp.path().join("train");
    cmd_train(&cfg, &train_dir, None).unwrap();
    let row = cmd_eval(&cfg, &train_dir.join("model.ckpt"), None, None).unwrap();
    assert!((0.0..=1.0).contains(&row.clean_acc));
    assert!((0.0..=1.0).contains(&row.atk_acc));
    assert_eq!(row.loss_delta, 0.0);

    // Against itself as reference, the loss delta is exactly zero.
    let row = cmd_eval(
        &cfg,
        &train_dir.join("model.ckpt"),
        Some(&train_dir.join("model.ckpt")),
        None,
    )
    .unwrap();
    assert_eq!(row.loss_delta, 0.0);
}

#[test]
fn report_collates_methods_sorted() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_synthetic_idx(tmp.path(), 120, 40, 10);
    let cfg = test_config(&data);
    let train_dir = tmp.path().join("train");
    cmd_train(&cfg, &train_dir, None).unwrap();
    let runs = tmp.path().join("runs");
    std::fs::create_dir(&runs).unwrap();
    for method in ["ul", "ga"] {
        let mut m_cfg = cfg.clone();
        m_cfg.method = method.into();
        cmd_unlearn(
            &m_cfg,
            &train_dir.join("model.ckpt"),
            None,
            &runs.join(method),
        )
        .unwrap();
    }
    let table = cmd_report(&runs).unwrap();
    let ga = table.find("| mnist | ga |").unwrap();
    let ul = table.find("| mnist | ul |").unwrap();
    assert!(ga < ul, "rows not sorted by method:\n{table}");

    // A directory without metrics is an error.
    let empty = tmp.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let err = cmd_report(&empty).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn full_pipeline_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_synthetic_idx(tmp.path(), 120, 40, 12);
    let cfg = test_config(&data); // record_timing is off in the fixture

    let run = |root: &Path| {
        let train_dir = root.join("train");
        cmd_train(&cfg, &train_dir, None).unwrap();
        let ckpt = train_dir.join("model.ckpt");
        for method in ["sfu", "ga", "ul"] {
            let mut m_cfg = cfg.clone();
            m_cfg.method = method.into();
            cmd_unlearn(&m_cfg, &ckpt, None, &root.join(format!("un_{method}"))).unwrap();
        }
        cmd_recover(
            &cfg,
            &root.join("un_sfu").join("unlearned.ckpt"),
            1,
            Some(&ckpt),
            &root.join("rec"),
        )
        .unwrap();
    };

    let root_a = tmp.path().join("exec_a");
    let root_b = tmp.path().join("exec_b");
    run(&root_a);
    run(&root_b);

    let a = tree_bytes(&root_a);
    let b = tree_bytes(&root_b);
    assert_eq!(a.len(), b.len());
    for ((name_a, bytes_a), (name_b, bytes_b)) in a.iter().zip(&b) {
        assert_eq!(name_a, name_b);
        assert_eq!(bytes_a, bytes_b, "{name_a} differs between executions");
    }
}
