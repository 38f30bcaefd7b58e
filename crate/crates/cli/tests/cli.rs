use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_mixrec");

fn mixrec(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn generate(dir: &Path, k_priv: usize, seed: u64) -> Output {
    generate_d(dir, k_priv, seed, 2000)
}

fn generate_d(dir: &Path, k_priv: usize, seed: u64, d: usize) -> Output {
    mixrec(&[
        "generate", "--n-pub", "6", "--n-priv", "4", "--k-pub", "2", "--k-priv", &k_priv.to_string(), "--d", &d.to_string(),
        "--m", "8", "--seed", &seed.to_string(), "--out", dir.to_str().unwrap(),
    ])
}

#[test]
fn generate_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(generate(&a, 2, 9).status.success());
    assert!(generate(&b, 2, 9).status.success());
    for f in ["X_pub.mat", "X_priv.mat", "W.mat", "Y.mat", "config.toml"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    // header dims times eight bytes plus the 24-byte header
    assert_eq!(std::fs::metadata(a.join("Y.mat")).unwrap().len(), 24 + 8 * 8 * 2000);
}

#[test]
fn corrupted_y_fails_in_first_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert!(generate(&data, 2, 1).status.success());
    let y = data.join("Y.mat");
    let bytes = std::fs::read(&y).unwrap();
    std::fs::write(&y, &bytes[..bytes.len() - 5]).unwrap();
    let out_dir = tmp.path().join("out");
    let out = mixrec(&["recover-all", "--data", data.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(!out.status.success());
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["success"], Value::Bool(false));
    assert_eq!(report["stages"][0]["stage"], "gram");
    assert_eq!(report["stages"][0]["status"], "failed");
    assert_eq!(report["stages"][3]["status"], "skipped");
}

#[test]
fn k_priv_other_than_two_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert!(generate(&data, 3, 1).status.success());
    let out = mixrec(&["recover-all", "--data", data.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("k_priv"));
    assert!(!tmp.path().join("o").join("report.json").exists());
}

#[test]
fn stage_commands_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let work = tmp.path().join("work");
    assert!(generate_d(&data, 2, 4, 20_000).status.success());
    for stage in ["gram", "public", "assign", "solve"] {
        let out = mixrec(&[stage, "--data", data.to_str().unwrap(), "--work", work.to_str().unwrap()]);
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["gram.mat", "W_pub.mat", "M_priv.mat", "W_priv.mat", "root.txt", "X_tilde.mat"] {
        assert!(work.join(f).exists(), "{f}");
    }
}

#[test]
fn reduce_single_edge() {
    let tmp = tempfile::tempdir().unwrap();
    let graph = tmp.path().join("edge.txt");
    std::fs::write(&graph, "2 1\n0 1\n").unwrap();
    let out_dir = tmp.path().join("inst");
    let out = mixrec(&["reduce-maxcut", "--graph", graph.to_str().unwrap(), "--c", "1", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success());
    let w = mixrec_core::matrix::load_matrix(out_dir.join("W.mat")).unwrap();
    assert_eq!(w.shape(), (3, 2));
    assert_eq!(w.as_slice(), &[1.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
    let y = mixrec_core::matrix::load_matrix(out_dir.join("y.mat")).unwrap();
    assert_eq!(y.as_slice(), &[0.0, 1.0, 1.0]);
}

#[test]
fn malformed_edge_list_reports_line() {
    let tmp = tempfile::tempdir().unwrap();
    let graph = tmp.path().join("bad.txt");
    std::fs::write(&graph, "3 2\n0 1\n1 x\n").unwrap();
    let out = mixrec(&["reduce-maxcut", "--graph", graph.to_str().unwrap(), "--c", "1", "--out", tmp.path().join("o").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn k4_hardness_report() {
    let tmp = tempfile::tempdir().unwrap();
    let graph = tmp.path().join("k4.txt");
    std::fs::write(&graph, "4 6\n0 1\n0 2\n0 3\n1 2\n1 3\n2 3\n").unwrap();
    let out = mixrec(&["verify-hardness", "--graph", graph.to_str().unwrap(), "--c", "100", "--trials", "200"]);
    assert!(out.status.success());
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["opt"], 4);
    assert_eq!(report["bound_holds"], Value::Bool(true));
    assert_eq!(report["soundness"]["bound_holds"], Value::Bool(true));
}

#[test]
fn selftest_passes() {
    let out = mixrec(&["selftest"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
}
