use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn exitperron(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exitperron"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("EXITPERRON_THREADS", "2")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Rewrites the value column of a value.csv, passing each row's class and
/// position.
fn edit_values(src: &Path, dst: &Path, f: impl Fn(usize, &str, f64) -> f64) {
    let mut r = csv::Reader::from_path(src).unwrap();
    let mut w = csv::Writer::from_path(dst).unwrap();
    w.write_record(r.headers().unwrap()).unwrap();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.unwrap();
        let v: f64 = rec[1].parse().unwrap();
        let new = f(i, &rec[2], v);
        w.write_record([&rec[0], &new.to_string(), &rec[2]]).unwrap();
    }
    w.flush().unwrap();
}

#[test]
fn usage_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let o = exitperron(&["solve", "--problem", "bm-1d"], tmp.path());
    assert_eq!(code(&o), 1, "missing seed");
    let o = exitperron(&["solve", "--problem", "nope", "--seed", "1"], tmp.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("available: bm-1d"), "{}", stderr(&o));
    let o = exitperron(&["solve", "--problem", "bm-1d", "--file", "x.txt", "--seed", "1"], tmp.path());
    assert_eq!(code(&o), 1);
    let o = exitperron(&["solve", "--problem", "bm-1d", "--seed", "1", "--res", "2"], tmp.path());
    assert_eq!(code(&o), 1);
    let o = exitperron(&["oracle", "--problem", "drift-control-1d", "--seed", "1"], tmp.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("no closed form"));
    let o = Command::new(env!("CARGO_BIN_EXE_exitperron")).arg("--help").output().unwrap();
    assert_eq!(code(&o), 0);
}

#[test]
fn thread_variable_is_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_exitperron"))
        .args(["solve", "--problem", "bm-1d", "--seed", "1", "--out"])
        .arg(tmp.path())
        .env("EXITPERRON_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("EXITPERRON_THREADS"));
}

#[test]
fn solver_non_convergence_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let o = exitperron(&["solve", "--problem", "drift-control-1d", "--seed", "1", "--max-outer", "1"], tmp.path());
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let report = json(&tmp.path().join("residual.json"));
    assert_eq!(report["result"]["converged"], false);
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["command"], "solve");
    assert_eq!(report["seed"], 1);
}

#[test]
fn problem_file_matches_catalog_entry() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("bm.problem");
    fs::write(&file, exitperron::catalog::BM_1D).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&exitperron(&["solve", "--problem", "bm-1d", "--seed", "3"], &a)), 0);
    assert_eq!(code(&exitperron(&["solve", "--file", file.to_str().unwrap(), "--seed", "3"], &b)), 0);
    assert_eq!(fs::read(a.join("value.csv")).unwrap(), fs::read(b.join("value.csv")).unwrap());
    let (ja, jb) = (json(&a.join("residual.json")), json(&b.join("residual.json")));
    assert_eq!(ja["problem"]["sha256"], jb["problem"]["sha256"]);
    assert_eq!(jb["problem"]["source"], format!("file:{}", file.display()));
    assert!(jb["result"]["oracle_sup_error"].is_null());
}

#[test]
fn malformed_problem_file_reports_position() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("bad.problem");
    fs::write(&file, exitperron::catalog::BM_1D.replace("[reward]", "[rewards]")).unwrap();
    let o = exitperron(&["solve", "--file", file.to_str().unwrap(), "--seed", "1"], tmp.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line"), "{}", stderr(&o));
}

#[test]
fn supersolution_test_rejects_bad_fields() {
    let tmp = tempfile::tempdir().unwrap();
    let solved = tmp.path().join("solved");
    assert_eq!(code(&exitperron(&["solve", "--problem", "bm-1d", "--seed", "1", "--res", "33"], &solved)), 0);
    let value = solved.join("value.csv");

    let low = tmp.path().join("low.csv");
    edit_values(&value, &low, |_, class, v| if class == "interior" { v - 0.3 } else { v });
    let o = exitperron(
        &["verify", "super", "--problem", "bm-1d", "--seed", "1", "--res", "33", "--paths", "2000", "--field", low.to_str().unwrap()],
        &tmp.path().join("low"),
    );
    assert_eq!(code(&o), 3);

    let below_g = tmp.path().join("below_g.csv");
    edit_values(&value, &below_g, |i, _, v| if i == 0 { -0.5 } else { v });
    let o = exitperron(
        &["verify", "super", "--problem", "bm-1d", "--seed", "1", "--res", "33", "--paths", "2000", "--field", below_g.to_str().unwrap()],
        &tmp.path().join("below_g"),
    );
    assert_eq!(code(&o), 3);
    let report = json(&tmp.path().join("below_g/super.json"));
    assert_eq!(report["result"]["test"]["boundary_violation"]["excess"], 0.5);

    let o = exitperron(
        &["verify", "super", "--problem", "bm-1d", "--seed", "1", "--res", "65", "--field", value.to_str().unwrap()],
        &tmp.path().join("mismatch"),
    );
    assert_eq!(code(&o), 1, "a 33-node field on a 65-node grid");
}

#[test]
fn solved_field_round_trips_through_verify() {
    let tmp = tempfile::tempdir().unwrap();
    let solved = tmp.path().join("solved");
    assert_eq!(code(&exitperron(&["solve", "--problem", "const-reward-1d", "--seed", "1", "--res", "33", "--gnuplot"], &solved)), 0);
    assert!(solved.join("value.gnuplot").exists());
    let value = solved.join("value.csv");
    let o = exitperron(
        &["verify", "viscosity", "--problem", "const-reward-1d", "--seed", "1", "--res", "33", "--candidate", "file", "--field", value.to_str().unwrap()],
        &tmp.path().join("visc"),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let policy = fs::read_to_string(solved.join("policy.csv")).unwrap();
    assert_eq!(policy.lines().next(), Some("x1,a1"));
    assert_eq!(policy.lines().count(), 34);
}

#[test]
fn simulate_writes_one_row_per_path() {
    let tmp = tempfile::tempdir().unwrap();
    let o = exitperron(
        &["simulate", "--problem", "drift-control-1d", "--seed", "4", "--x", "0.3", "--paths", "500", "--control", "const:1"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let batch = fs::read_to_string(tmp.path().join("batch.csv")).unwrap();
    assert_eq!(batch.lines().count(), 501);
    let est = &json(&tmp.path().join("estimate.json"))["result"]["estimate"];
    for key in ["mean", "se", "n", "censored_frac", "dt", "ci99_lo", "ci99_hi"] {
        assert!(!est[key].is_null(), "{key}");
    }
    assert_eq!(est["n"], 500);
    let o = exitperron(&["simulate", "--problem", "bm-1d", "--seed", "4", "--x", "1.5"], tmp.path());
    assert_eq!(code(&o), 1);
}
