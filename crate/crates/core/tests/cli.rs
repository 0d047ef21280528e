use std::path::Path;
use std::process::{Command, Output};

fn eend(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eend"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_input_is_a_clean_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = eend(dir.path(), &["score", "--ref", "nope.rttm", "--hyp", "nope.rttm"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: cannot access nope.rttm"), "{}", stderr(&o));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = eend(dir.path(), &["simulate", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.cfg"), "attn_dimension = 8\n").unwrap();
    let o = eend(dir.path(), &["simulate", "--out", "data", "--n-mixtures", "1", "--duration", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = eend(dir.path(), &["--config", "bad.cfg", "train", "--data", "data", "--out", "m.ckpt"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("attn_dimension"));
}

#[test]
fn simulate_writes_corpus_and_reports_it() {
    let dir = tempfile::tempdir().unwrap();
    let o = eend(
        dir.path(),
        &["--seed", "3", "simulate", "--out", "data", "--regime", "sc", "--n-spk", "3", "--n-mixtures", "2", "--duration", "15"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let data = dir.path().join("data");
    let recs = eend::io::load_corpus(&data).unwrap();
    assert_eq!(recs.len(), 2);
    assert!(recs.iter().all(|r| r.annotation.speakers().len() == 3));
    let o = eend(dir.path(), &["report", "--data", "data", "--json"]);
    assert!(o.status.success());
    let rep: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(rep["files"].as_array().unwrap().len(), 2);
}

#[test]
fn scoring_a_reference_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let o = eend(dir.path(), &["simulate", "--out", "data", "--n-mixtures", "3"]);
    assert!(o.status.success());
    let o = eend(dir.path(), &["score", "--ref", "data/ref.rttm", "--hyp", "data/ref.rttm", "--json", "s.jsonl"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("s.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(!lines.is_empty());
    for l in &lines {
        if let Some(d) = l["der"].as_f64() {
            assert!(d.abs() < 1e-9, "{l}");
        }
    }
}
