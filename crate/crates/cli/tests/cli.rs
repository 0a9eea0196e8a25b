use std::path::Path;
use std::process::{Command, Output};

fn ctkd(args: &[&str], config: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ctkd"));
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.args(args).output().expect("binary runs")
}

fn fixture() -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let fx = dir.path().join("fx");
    let out = ctkd(&["--seed", "3", "fixture", "--dir", fx.to_str().unwrap()], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = fx.join("config.json");
    (dir, cfg)
}

#[test]
fn missing_files_exit_with_2() {
    let out = ctkd(&["audit", "--student-vocab", "/no/such/file", "--teacher-vocab", "/no/such/file"], None);
    assert_eq!(out.status.code(), Some(2));
    let out = ctkd(&["audit"], Some(Path::new("/no/such/config.json")));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_settings_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"audit": {"no_such_key": 1}}"#).unwrap();
    assert_eq!(ctkd(&["audit"], Some(&bad)).status.code(), Some(1));

    std::fs::write(&bad, "not json").unwrap();
    assert_eq!(ctkd(&["audit"], Some(&bad)).status.code(), Some(1));

    assert_eq!(ctkd(&["no-such-command"], None).status.code(), Some(1));
    assert_eq!(ctkd(&["audit"], None).status.code(), Some(1));
}

#[test]
fn bad_numbers_exit_with_1() {
    let (_dir, cfg) = fixture();
    assert_eq!(ctkd(&["loss", "--temperature", "-1"], Some(&cfg)).status.code(), Some(1));
    assert_eq!(ctkd(&["build-w", "--beta", "0.05", "--out", "/tmp/unused.w"], Some(&cfg)).status.code(), Some(1));
    assert_eq!(ctkd(&["align", "--alpha-gap", "1"], Some(&cfg)).status.code(), Some(1));
}

#[test]
fn every_subcommand_is_repeatable() {
    let (dir, cfg) = fixture();
    let w = dir.path().join("w.jsonl");
    let w = w.to_str().unwrap();
    for args in [
        vec!["--format", "json", "audit"],
        vec!["--format", "json", "align"],
        vec!["--format", "json", "align", "--baseline"],
        vec!["build-w", "--out", w],
        vec!["--format", "json", "loss", "--mode", "gold"],
        vec!["--seed", "4", "--format", "json", "loss", "--gradcheck", "--instances", "3"],
    ] {
        let a = ctkd(&args, Some(&cfg));
        let b = ctkd(&args, Some(&cfg));
        assert!(a.status.success(), "{args:?}: {}", String::from_utf8_lossy(&a.stderr));
        assert_eq!(a.stdout, b.stdout, "{args:?}");
    }
}

#[test]
fn audit_recommends_pkl_for_the_digit_teacher() {
    let (_dir, cfg) = fixture();
    let out = ctkd(&["--format", "json", "audit"], Some(&cfg));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["recommendation"], "pkl");
}

#[test]
fn baseline_alignment_writes_records() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    std::fs::write(p("t.json"), r#"["Hello"," world","."]"#).unwrap();
    std::fs::write(p("s.json"), r#"{"tokens":["<bos>","Hello","Ġworld","."],"special_roles":{"bos":0}}"#).unwrap();
    std::fs::write(p("text.txt"), "Hello world.\n").unwrap();
    let base = [
        "align",
        "--student-vocab",
        p("s.json").to_str().unwrap(),
        "--teacher-vocab",
        p("t.json").to_str().unwrap(),
        "--input",
        p("text.txt").to_str().unwrap(),
        "--student-bos",
    ]
    .map(String::from)
    .to_vec();
    let run = |extra: &[&str]| {
        let mut args: Vec<&str> = base.iter().map(String::as_str).collect();
        args.extend(extra);
        let out = ctkd(&args, None);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    let kinds = |dump: &str| -> Vec<String> {
        dump.lines()
            .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["kind"].as_str().unwrap().to_string())
            .collect()
    };
    assert_eq!(kinds(&run(&["--baseline"])), ["super_group"]);
    assert_eq!(kinds(&run(&[])), ["gap_student_side", "match", "match", "match"]);
}

#[test]
fn empty_input_gives_empty_dump() {
    let (dir, cfg) = fixture();
    let empty = dir.path().join("empty.txt");
    std::fs::write(&empty, "").unwrap();
    let out = ctkd(&["align", "--input", empty.to_str().unwrap()], Some(&cfg));
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
}

#[test]
fn gradient_files_are_written() {
    let (dir, cfg) = fixture();
    let grads = dir.path().join("grads");
    let out = ctkd(&["--format", "json", "loss", "--grad", grads.to_str().unwrap()], Some(&cfg));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let files = report["gradient_files"].as_array().unwrap();
    assert!(files.iter().any(|f| f.as_str().unwrap().starts_with("student-")));
    for f in files {
        assert!(grads.join(f.as_str().unwrap()).exists());
    }
}
