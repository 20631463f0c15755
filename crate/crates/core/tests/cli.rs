mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::e2e_workspace;

fn bioqa(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bioqa")).args(args).current_dir(cwd).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn ingest_index_and_search() {
    let ws = e2e_workspace();
    let dir = ws.path();
    let o = bioqa(&["ingest", "--corpus", "c", "documents.jsonl"], dir);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("120 stored"));
    let o = bioqa(&["index", "build", "--corpus", "c", "--out", "idx"], dir);
    assert!(o.status.success(), "{o:?}");

    let o = bioqa(&["index", "search", "--index", "idx", "--query", "imatinib AND kinase", "--limit", "3"], dir);
    assert!(o.status.success());
    let lines: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(lines.len(), 3);
    let scores: Vec<f64> = lines.iter().map(|l| l.split('\t').nth(1).unwrap().parse().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));

    let o = bioqa(&["index", "search", "--index", "idx", "--query", "imatinib AND ("], dir);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn query_check_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = bioqa(&["query", "check", "aspirin pain title:\"heart attack\""], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).trim_end().ends_with("(aspirin OR pain OR title:\"heart attack\")"));

    let o = bioqa(&["query", "check", "aspirin AND (pain"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("UNBALANCED_PAREN"));
}

#[test]
fn run_eval_and_replay() {
    let ws = e2e_workspace();
    let dir = ws.path();
    let run = ["run", "aplus", "--config", "config.toml", "--questions", "testset.json"];
    let o = bioqa(&[&run[..], &["--out", "first"]].concat(), dir);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["submission.json", "manifest.json", "transcript.jsonl"] {
        assert!(dir.join("first").join(f).exists(), "{f} missing");
    }

    let o =
        bioqa(&["eval", "--gold", "testset.json", "--pred", "first/submission.json", "--report", "report.json"], dir);
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("report.json")).unwrap()).unwrap();
    for t in ["yesno", "factoid", "list"] {
        assert_eq!(report["per_type"][t]["value"], 1.0, "{t}");
    }

    let o = bioqa(
        &["replay", "verify", "--manifest", "first/manifest.json", "--transcript", "first/transcript.jsonl"],
        dir,
    );
    assert!(o.status.success(), "{}", stdout(&o));

    // Answering every call from the transcript reproduces the submission.
    let o = bioqa(&[&run[..], &["--out", "again", "--replay", "first/transcript.jsonl"]].concat(), dir);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read(dir.join("first/submission.json")).unwrap(),
        std::fs::read(dir.join("again/submission.json")).unwrap()
    );
}

#[test]
fn replay_verify_flags_tampered_transcript() {
    let ws = e2e_workspace();
    let dir = ws.path();
    let o = bioqa(
        &["run", "b", "--mode", "snippets", "--config", "config.toml", "--questions", "testset.json", "--out", "o"],
        dir,
    );
    assert!(o.status.success());
    let path = dir.join("o/transcript.jsonl");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut first: serde_json::Value = serde_json::from_str(&lines[0]).unwrap();
    first["response"] = "tampered".into();
    lines[0] = first.to_string();
    lines.pop();
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    let o = bioqa(&["replay", "verify", "--manifest", "o/manifest.json", "--transcript", "o/transcript.jsonl"], dir);
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    assert!(out.contains("1 missing, 1 mismatched"), "{out}");
}

#[test]
fn retrieve_writes_one_trace_per_question() {
    let ws = e2e_workspace();
    let dir = ws.path();
    let o = bioqa(
        &[
            "retrieve",
            "--questions",
            "testset.json",
            "--index",
            "build/index",
            "--config",
            "config.toml",
            "--traces-out",
            "traces",
        ],
        dir,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_dir(dir.join("traces")).unwrap().count(), 20);
    let t: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("traces/e2e12.json")).unwrap()).unwrap();
    assert_eq!(t["hit_count_per_round"], serde_json::json!([2, 6]));
    assert_eq!(t["refinement_rounds"][0]["reason"], "too-few");
}

#[test]
fn bad_config_and_inputs_exit_two() {
    let ws = e2e_workspace();
    let dir = ws.path();
    std::fs::write(dir.join("bad.toml"), "workers = 0\n").unwrap();
    let o = bioqa(&["run", "aplus", "--config", "bad.toml", "--questions", "testset.json", "--out", "o"], dir);
    assert_eq!(o.status.code(), Some(2));
    let o = bioqa(&["run", "aplus", "--config", "config.toml", "--questions", "missing.json", "--out", "o"], dir);
    assert_eq!(o.status.code(), Some(2));
    std::fs::write(dir.join("pred.json"), r#"{"questions": [{"id": "nope", "type": "yesno", "exact_answer": "yes"}]}"#)
        .unwrap();
    let o = bioqa(&["eval", "--gold", "testset.json", "--pred", "pred.json", "--report", "r.json"], dir);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope"));
}
