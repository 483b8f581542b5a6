use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_provfilter"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = run(args, cwd);
    assert!(out.status.success(), "{args:?}\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn query_writes_lists_and_mask() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(&["base", "--count", "12", "--seed", "3", "--out", "base"], root);
    ok(
        &["gen", "--base", "base", "--distractors", "6", "--composites", "2", "--donors", "1", "--seed", "2", "--out", "c"],
        root,
    );
    ok(&["index", "--corpus", "c/manifest.jsonl", "--backend", "hkmeans", "--params", "branching=4", "leaf_size=20", "--out", "idx"], root);
    for f in ["idx", "idx.pffs", "idx.paths"] {
        assert!(root.join(f).is_file(), "{f}");
    }
    let stdout = ok(&["query", "--index", "idx", "--image", "c/queries/q0000.jpg", "--out", "res"], root);
    assert!(stdout.starts_with("q0000\t1\t"));
    for f in ["q0000.json", "q0000.tsv", "q0000.mask.png"] {
        assert!(root.join("res").join(f).is_file(), "{f}");
    }
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(root.join("res/q0000.json")).unwrap()).unwrap();
    assert!(json["final"]["entries"].as_array().is_some_and(|e| !e.is_empty()));
    assert!(json.get("timings").is_none());
}

#[test]
fn bench_on_synthetic_descriptors() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(
        &["bench", "--synthetic", "3000", "--queries", "50", "--backends", "brute,kdtree,pq", "--params", "ksub=16", "--out", "b.tsv"],
        dir.path(),
    );
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("brute\t3000\t") && lines[1].ends_with("1.0000"));
    assert_eq!(std::fs::read_to_string(dir.path().join("b.tsv")).unwrap(), stdout);
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::create_dir_all(root.join("few")).unwrap();
    let out = run(&["gen", "--base", "few", "--distractors", "5", "--composites", "1", "--out", "c"], root);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("insufficient base images"));
    let out = run(&["index", "--corpus", "missing.jsonl", "--out", "i"], root);
    assert!(!out.status.success());
    let out = run(&["bench", "--synthetic", "100", "--params", "m=7", "--backends", "pq", "--out", "b.tsv"], root);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("must divide"));
    let out = run(&["index", "--corpus", "x", "--backend", "octree", "--out", "i"], root);
    assert!(!out.status.success());
}
