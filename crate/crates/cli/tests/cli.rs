use std::path::Path;
use std::process::{Command, Output};

fn ldlc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ldlc")).args(args).output().expect("spawn ldlc")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_lattice_writes_matrix_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("h.txt");
    let res = ldlc(&["gen-lattice", "--n", "100", "--d", "5", "--seed", "3", "--out", s(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    // Header plus one line per non-zero.
    assert_eq!(text.lines().count(), 1 + 500);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("h.txt.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "gen-lattice");
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["params"]["n"], 100);
}

#[test]
fn simulate_at_high_snr_has_zero_ser() {
    let dir = tempfile::tempdir().unwrap();
    let h = dir.path().join("h.txt");
    assert!(ldlc(&["gen-lattice", "--n", "100", "--d", "5", "--out", s(&h)]).status.success());
    let csv = dir.path().join("r.csv");
    let res = ldlc(&["simulate", "--matrix", s(&h), "--db", "20", "--trials", "10", "--seed", "5", "--out", s(&csv)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "db,sigma2,trials,symbol_errors,ser,ci_low,ci_high,mean_iters,uncoded_ser");
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "20");
    assert_eq!(row[3], "0");
    assert_eq!(row[4], "0");
    assert!(dir.path().join("r.csv.manifest.json").exists());
}

#[test]
fn sweep_is_reproducible_across_thread_counts() {
    let run = |threads: &str| {
        let res = ldlc(&["--threads", threads, "sweep", "--n", "24", "--d", "3", "--db", "1,3", "--trials", "30"]);
        assert!(res.status.success());
        res.stdout
    };
    assert_eq!(run("1"), run("2"));
}

#[test]
fn decode_prints_integers_and_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let h = dir.path().join("h.txt");
    assert!(ldlc(&["gen-lattice", "--n", "12", "--d", "3", "--out", s(&h)]).status.success());
    let y = dir.path().join("y.txt");
    std::fs::write(&y, "0.01\n-0.02\n0\n0.03\n0\n0\n-0.01\n0\n0.02\n0\n0\n0\n").unwrap();
    let res = ldlc(&["decode", "--matrix", s(&h), "--y", s(&y), "--sigma2", "0.001"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let stdout = String::from_utf8(res.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 13);
    assert!(lines[..12].iter().all(|l| *l == "0"));
    let diag: serde_json::Value = serde_json::from_str(lines[12]).unwrap();
    assert_eq!(diag["converged"], true);
    assert!(diag["max_components_per_iteration"].as_array().unwrap().iter().all(|v| v.as_u64().unwrap() <= 6));
}

#[test]
fn selftest_passes() {
    let res = ldlc(&["selftest"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stdout));
    assert_eq!(String::from_utf8(res.stdout).unwrap().lines().filter(|l| l.starts_with("PASS")).count(), 5);
}

#[test]
fn exit_codes() {
    assert_eq!(ldlc(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(ldlc(&["decode", "--sigma2", "1"]).status.code(), Some(1));
    assert_eq!(ldlc(&["--help"]).status.code(), Some(0));
    assert_eq!(ldlc(&["simulate", "--matrix", "/definitely/missing", "--db", "1"]).status.code(), Some(2));
    assert_eq!(ldlc(&["sweep", "--n", "10", "--d", "3", "--db", "1", "--theta=-1"]).status.code(), Some(1));
    assert_eq!(ldlc(&["sweep", "--n", "10", "--d", "3", "--db", "1", "--shifts", "2"]).status.code(), Some(1));
    assert_eq!(ldlc(&["sweep", "--n", "10", "--d", "12", "--db", "1"]).status.code(), Some(2));
}
