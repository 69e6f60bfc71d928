use std::path::PathBuf;
use std::process::{Command, Output};

fn schema() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/dog_kennels.json")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcg-sql")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn enumerate_lists_the_basic_language() {
    let s = schema();
    let o = run(&["enumerate", "--schema", s.to_str().unwrap(), "--grammar-scope", "basic"]);
    assert!(o.status.success());
    let lines: Vec<_> = stdout(&o).lines().map(str::to_string).collect();
    assert_eq!(lines.len(), 7);
    assert!(lines.contains(&"SELECT prof_id FROM Treatments".to_string()));
    assert!(!lines.contains(&"SELECT treat_id FROM Dogs".to_string()));
}

#[test]
fn facts_include_tables_and_links() {
    let s = schema();
    let o = run(&["facts", "--schema", s.to_str().unwrap()]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.lines().all(|l| l.ends_with('.')));
    assert!(out.contains("table_domain"));
    assert!(out.contains("except_link"));
}

#[test]
fn gen_and_score_agree() {
    let s = schema();
    let s = s.to_str().unwrap();
    let o = run(&["gen", "--schema", s, "--grammar-scope", "basic", "--nl", "ids?"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let sql = v["sql"].as_str().unwrap();
    let p = v["probability"].as_f64().unwrap();
    let o = run(&["score", "--schema", s, "--grammar-scope", "basic", "--nl", "ids?", "--sql", sql]);
    let scored: f64 = stdout(&o).trim().parse().unwrap();
    assert!((scored - p).abs() < 1e-12);
}

#[test]
fn validate_reports_failures_with_exit_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("k.sqlite");
    let s = schema();
    let o = run(&["init-db", "--schema", s.to_str().unwrap(), "--out", db.to_str().unwrap()]);
    assert!(o.status.success());
    let good = dir.path().join("good.sql");
    std::fs::write(&good, "SELECT prof_id FROM Treatments\nSELECT COUNT(*) FROM Dogs\n").unwrap();
    let o = run(&["validate", "--db", db.to_str().unwrap(), "--sql-file", good.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let bad = dir.path().join("bad.sql");
    std::fs::write(&bad, "SELECT treat_id FROM Dogs\n").unwrap();
    let o = run(&["validate", "--db", db.to_str().unwrap(), "--sql-file", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).starts_with("FAIL"));
}

#[test]
fn trained_weights_reproduce_the_labels() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("train.jsonl");
    let params = dir.path().join("params.json");
    std::fs::write(
        &data,
        concat!(
            "{\"nl\": \"which professionals treated dogs\", \"db\": \"dog_kennels\", \"sql\": \"SELECT prof_id FROM Treatments\"}\n",
            "{\"nl\": \"names of dogs\", \"db\": \"dog_kennels\", \"sql\": \"SELECT name FROM Dogs\"}\n",
        ),
    )
    .unwrap();
    let s = schema();
    let s = s.to_str().unwrap();
    let o = run(&[
        "train", "--schema", s, "--grammar-scope", "basic", "--dataset", data.to_str().unwrap(), "--epochs", "200",
        "--lr", "0.1", "--out", params.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for (nl, want) in [("which professionals treated dogs", "SELECT prof_id FROM Treatments"), ("names of dogs", "SELECT name FROM Dogs")] {
        let o = run(&[
            "gen", "--schema", s, "--grammar-scope", "basic", "--oracle", "learned", "--params",
            params.to_str().unwrap(), "--nl", nl,
        ]);
        let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
        assert_eq!(v["sql"], want);
    }
}

#[test]
fn bad_arguments_exit_with_code_two() {
    let s = schema();
    let o = run(&["gen", "--schema", s.to_str().unwrap(), "--oracle", "nonsense", "--nl", "x"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["gen", "--schema", "/nonexistent.json", "--nl", "x"]);
    assert_eq!(o.status.code(), Some(2));
}
