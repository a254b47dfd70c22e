use std::path::Path;
use std::process::{Command, Output};

fn sparselb(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_sparselb"))
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "sparselb {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn topology_info_writes_edge_list() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = sparselb(&["--out", out, "topology-info", "--topology", "ccc:3", "--write-edges"]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("nodes      24"), "{text}");
    let edges = std::fs::read_to_string(dir.path().join("topology.txt")).unwrap();
    assert!(edges.starts_with("n_nodes=24\n"));
    assert_eq!(edges.lines().count(), 1 + 36);
}

#[test]
fn evaluate_is_bit_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str| {
        let out = dir.path().join(sub);
        sparselb(&[
            "--seed", "7", "--workers", "2", "--out", out.to_str().unwrap(),
            "evaluate", "--topology", "cyc1d:21", "--policy", "jsq", "--delta-t", "2",
            "--episodes", "5", "--horizon", "10", "--trace",
        ]);
        out
    };
    let (a, b) = (run("a"), run("b"));
    for file in ["results.csv", "results.json", "traces/cyc1d-21_jsq_dt2_ep0000.jsonl"] {
        assert_eq!(read(&a.join(file)), read(&b.join(file)), "{file}");
    }
    let csv = std::fs::read_to_string(a.join("results.csv")).unwrap();
    assert!(csv.starts_with("topology,policy,delta_t,mean_drops,ci95,episodes,seconds\n"));
    assert_eq!(std::fs::read_dir(a.join("traces")).unwrap().count(), 5);
}

#[test]
fn sweep_from_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sweep.json");
    std::fs::write(
        &config,
        r#"{
  "topologies": [{"family": "cyc1d", "n": 15}, {"family": "torus", "side": 4}],
  "delta_t": [1, 3],
  "policies": ["jsq", "rnd", "own"],
  "episodes": 4,
  "horizon": 6,
  "seed": 3
}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    sparselb(&["--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "sweep"]);
    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2 * 3);
    let json: serde_json::Value = serde_json::from_slice(&read(&out.join("results.json"))).unwrap();
    assert_eq!(json["cells"].as_array().unwrap().len(), 12);
    assert_eq!(json["cells"][0]["per_episode"].as_array().unwrap().len(), 4);
}

#[test]
fn compare_writes_rankings() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = sparselb(&[
        "--out", out, "--seed", "1", "compare", "--topology", "cyc1d:31", "--policy", "jsq,rnd",
        "--delta-t", "1", "--episodes", "10", "--horizon", "10",
    ]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("cyc1d-31 Δt=1: jsq rnd"), "{text}");
    let rankings: serde_json::Value =
        serde_json::from_slice(&read(&dir.path().join("rankings.json"))).unwrap();
    assert_eq!(rankings[0]["ranking"]["order"][0], "jsq");
}

#[test]
fn train_then_evaluate_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str| {
        let out = dir.path().join(sub);
        sparselb(&[
            "--seed", "2", "--workers", "1", "--out", out.to_str().unwrap(), "train",
            "--topology", "cyc1d:11", "--delta-t", "3", "--method", "cem", "--iterations", "2",
            "--horizon", "5",
        ]);
        out
    };
    let (a, b) = (run("a"), run("b"));
    for file in ["checkpoint.json", "training_curve.csv"] {
        assert_eq!(read(&a.join(file)), read(&b.join(file)), "{file}");
    }
    let curve = std::fs::read_to_string(a.join("training_curve.csv")).unwrap();
    assert_eq!(curve.lines().next(), Some("iteration,mean_return,kl,clip_fraction"));
    assert_eq!(curve.lines().count(), 3);

    let policy = format!("mfr:{}", a.join("checkpoint.json").display());
    let eval = dir.path().join("eval");
    sparselb(&[
        "--out", eval.to_str().unwrap(), "evaluate", "--topology", "cyc1d:11", "--policy", &policy,
        "--delta-t", "3", "--episodes", "3", "--horizon", "5",
    ]);
    let csv = std::fs::read_to_string(eval.join("results.csv")).unwrap();
    assert!(csv.contains("mfr:checkpoint"));
}

#[test]
fn train_from_config_with_ppo() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("train.json");
    std::fs::write(
        &config,
        r#"{
  "env": {"topology": {"family": "cyc1d", "n": 9}, "delta_t": 2.0, "horizon": 5},
  "method": "ppo",
  "trainer": {"batch_size": 20, "minibatch_size": 10, "epochs": 2, "hidden": [8, 8], "eval_episodes": 2},
  "seed": 4
}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    sparselb(&["--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "train"]);
    let ck: serde_json::Value = serde_json::from_slice(&read(&out.join("checkpoint.json"))).unwrap();
    assert_eq!(ck["method"], "ppo");
    assert_eq!(ck["trainer"]["sgd_iters"], 6);
    assert_eq!(ck["policy"]["layer_sizes"], serde_json::json!([6, 8, 8, 6]));
}

#[test]
fn bethe_ablation_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = sparselb(&[
        "--out", out, "bethe-ablation", "--depth", "2", "--delta-t", "1,8", "--episodes", "5",
        "--horizon", "8",
    ]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("bethe-2-3 (10 nodes)"), "{text}");
    let report: serde_json::Value = serde_json::from_slice(&read(&dir.path().join("ablation.json"))).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn bad_arguments_fail_cleanly() {
    let out = Command::new(env!("CARGO_BIN_EXE_sparselb"))
        .args(["evaluate", "--topology", "hypercube:3", "--policy", "jsq", "--delta-t", "1"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown family"));
}
