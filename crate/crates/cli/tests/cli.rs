use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn preplay(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_preplay"))
        .args(args)
        .current_dir(root())
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut reports = vec![];
    for sub in ["a", "b"] {
        let out = dir.path().join(sub);
        let o = preplay(&["run", "scenarios/palma_counter.toml", "--out-dir", out.to_str().unwrap(), "--format", "json"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let report = std::fs::read(out.join("report.json")).unwrap();
        assert_eq!(stdout(&o).as_bytes(), report.as_slice());
        for f in ["transcripts.log", "issuer_log.csv"] {
            assert!(out.join(f).is_file(), "{f}");
        }
        reports.push((report, std::fs::read(out.join("transcripts.log")).unwrap()));
    }
    assert_eq!(reports[0], reports[1]);
    let v: serde_json::Value = serde_json::from_slice(&reports[0].0).unwrap();
    assert_eq!(v["attempts"], 100);
    assert_eq!(v["experiment"]["verdict"], "IDENTICAL");
}

#[test]
fn seed_override_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let o = preplay(&["run", "scenarios/lcg_pos.toml", "--seed", "5", "--out-dir", d, "--format", "json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["seed"], 5);
}

#[test]
fn bad_inputs_exit_2_and_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seed = 1\n[generator]\nkind = \"quantum\"\n").unwrap();
    let o = preplay(&["run", cfg.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("generator") && err.contains("quantum"), "{err}");
    assert!(!dir.path().join("report.json").exists());

    std::fs::write(&cfg, "[generator]\nkind = \"strong\"\n").unwrap();
    let o = preplay(&["run", cfg.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));

    let csv = dir.path().join("empty.csv");
    std::fs::write(&csv, "date,time,un\n").unwrap();
    assert_eq!(preplay(&["analyze", csv.to_str().unwrap()]).status.code(), Some(2));
    std::fs::write(&csv, "date,time,un\n2011-06-29,10:37:24,NOTHEX\n").unwrap();
    let o = preplay(&["analyze", csv.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("row"));
}

fn analyze(file: &str) -> serde_json::Value {
    let o = preplay(&["analyze", file, "--format", "json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_str(&stdout(&o)).unwrap()
}

#[test]
fn analyze_bundled_logs() {
    let v = analyze("data/gambin.csv");
    assert_eq!(v[0]["classification"], "COUNTER");
    assert_eq!(v[0]["counter_fit"]["prefix_value"], "0x1E248");
    let v = analyze("data/charc.csv");
    assert_eq!(v[0]["stuck_bits"]["zero_mask"], "0x80F00000");
    assert_eq!(v[0]["char_c"]["present"], true);
    let v = analyze("data/pos1.csv");
    assert_eq!(v[0]["char_c"]["present"], false);
    let o = preplay(&["analyze", "data/gambin.csv"]);
    assert!(stdout(&o).contains("COUNTER"));
}

#[test]
fn committed_fixtures_are_current() {
    let o = preplay(&["gen-fixtures", "--check"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let dir = tempfile::tempdir().unwrap();
    let o = preplay(&["gen-fixtures", "--check", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}
