use std::path::Path;
use std::process::{Command, Output};

use wia_core::pipeline::read_dataset;
use wia_gateway::stub::{StubReply, StubServer};
use wia_gateway::{PromptRenderer, TemplateSet};

fn wia(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wia")).args(args).current_dir(dir).output().unwrap()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = wia(&["frobnicate"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(text(&o).contains("Usage"), "{}", text(&o));
    assert_eq!(code(&wia(&["simgen", "--out", "x.jsonl", "--counts", "1:two"], dir.path())), 1);
    assert_eq!(code(&wia(&["--help"], dir.path())), 0);
}

#[test]
fn simgen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        std::fs::create_dir(dir.path().join(name)).unwrap();
        let o = wia(&["simgen", "--seed", "7", "--counts", "1:2,2:2,3:2,4:2", "--out", "bench.jsonl", "--trajectories", "traj", "--matches", "3"], &dir.path().join(name));
        assert_eq!(code(&o), 0, "{}", text(&o));
    }
    for file in ["bench.jsonl", "bench.jsonl.manifest.json", "bench.jsonl.config.toml", "traj/match_0000.jsonl", "traj/match_0002.jsonl"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs");
    }
    let other = wia(&["simgen", "--seed", "8", "--counts", "1:2,2:2,3:2,4:2", "--out", "c.jsonl"], dir.path());
    assert_eq!(code(&other), 0);
    assert_ne!(std::fs::read(dir.path().join("a/bench.jsonl")).unwrap(), std::fs::read(dir.path().join("c.jsonl")).unwrap());
}

#[test]
fn selftest_passes_on_a_pristine_build() {
    let dir = tempfile::tempdir().unwrap();
    let o = wia(&["selftest"], dir.path());
    assert_eq!(code(&o), 0, "{}", text(&o));
    let out = text(&o);
    assert!(out.lines().filter(|l| l.starts_with("PASS")).count() >= 10);
    assert!(!out.contains("FAIL"));
}

#[test]
fn selftest_names_a_corrupted_rule_table() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("house_rules.toml");
    std::fs::write(&table, format!("{}\n# edited\n", wia_core::sim::BUILTIN_RULES)).unwrap();
    let o = wia(&["selftest", "--rule-table", table.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 4);
    let fail = text(&o).lines().find(|l| l.starts_with("FAIL")).unwrap().to_string();
    assert!(fail.contains("rule table") && fail.contains("house_rules.toml"), "{fail}");
}

#[test]
fn selftest_names_a_tampered_template() {
    let dir = tempfile::tempdir().unwrap();
    let set = TemplateSet::builtin();
    for kind in wia_gateway::PromptKind::ALL {
        std::fs::write(dir.path().join(kind.file_name()), set.get(kind)).unwrap();
    }
    std::fs::write(dir.path().join("distill.txt"), format!("{} ", set.get(wia_gateway::PromptKind::Distill))).unwrap();
    let o = wia(&["selftest", "--templates", dir.path().to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 4);
    assert!(text(&o).lines().any(|l| l.starts_with("FAIL") && l.contains("distill")), "{}", text(&o));
}

#[test]
fn ingest_train_score_report_act() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = wia(&["simgen", "--seed", "3", "--counts", "1:3,2:3", "--out", "bench.jsonl", "--trajectories", "traj", "--matches", "6"], d);
    assert_eq!(code(&o), 0, "{}", text(&o));

    let o = wia(&["ingest", "--in", "traj", "--out", "ing.jsonl", "--max-per-hero", "4"], d);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(read_dataset(&d.join("ing.jsonl")).unwrap().iter().all(|t| t.horizon_s <= 60));
    assert!(d.join("ing.jsonl.config.toml").exists());
    assert_eq!(code(&wia(&["ingest", "--in", "traj", "--out", "x.jsonl", "--annotator", "psychic"], d)), 2);
    assert_eq!(code(&wia(&["ingest", "--in", "missing", "--out", "x.jsonl"], d)), 2);

    let o = wia(&["train", "--data", "bench.jsonl", "--steps", "20", "--out", "run", "--seed", "1"], d);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let telemetry = std::fs::read_to_string(d.join("run/telemetry.jsonl")).unwrap();
    assert_eq!(telemetry.lines().count(), 20);
    assert!(d.join("run/config.toml").exists() && d.join("run/policy.json").exists());
    assert_eq!(code(&wia(&["train", "--data", "bench.jsonl", "--group", "1", "--out", "bad"], d)), 1);

    let bench = read_dataset(&d.join("bench.jsonl")).unwrap();
    let preds: String = bench
        .iter()
        .map(|t| {
            let c = format!("<answer>{}</answer>", t.delta.to_json_string());
            serde_json::json!({"provenance": t.provenance.key(), "completion": c}).to_string() + "\n"
        })
        .collect();
    std::fs::write(d.join("pred.jsonl"), preds).unwrap();
    let o = wia(&["score", "--pred", "pred.jsonl", "--truth", "bench.jsonl", "--out", "scores.jsonl"], d);
    assert_eq!(code(&o), 0, "{}", text(&o));

    let o = wia(&["report", "--scores", "scores.jsonl", "--telemetry", "run/telemetry.jsonl", "--out", "rep"], d);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("rep/report.json")).unwrap()).unwrap();
    assert_eq!(rep["overall_score"], 1.0);
    assert_eq!(std::fs::read_to_string(d.join("rep/reward.csv")).unwrap().lines().count(), 21);

    std::fs::write(d.join("state.json"), wia_core::state::serialize_state(&bench[0].state)).unwrap();
    let o = wia(&["act", "--state", "state.json", "--k", "4", "--out", "sel.json"], d);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let sel: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("sel.json")).unwrap()).unwrap();
    assert_eq!(sel["ranked"].as_array().unwrap().len(), 4);
    assert_eq!(code(&wia(&["act", "--state", "state.json", "--k", "0"], d)), 1);
}

#[test]
fn eval_remote_against_a_loopback_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&wia(&["simgen", "--seed", "4", "--counts", "1:2,2:2,3:2,4:2", "--out", "bench.jsonl"], d)), 0);
    let bench = read_dataset(&d.join("bench.jsonl")).unwrap();
    let r = PromptRenderer::new(TemplateSet::builtin(), 8192);
    let answers: std::collections::HashMap<String, String> = bench
        .iter()
        .map(|t| (r.forecast(&t.state, t.action, t.horizon_s).unwrap(), format!("<answer>{}</answer>", t.delta.to_json_string())))
        .collect();
    let stub = StubServer::start(move |_, p| answers.get(p).map_or(StubReply::Status(404), |a| StubReply::Answer(a.clone()))).unwrap();
    std::fs::write(d.join("ep.toml"), format!("base_url = \"{}\"\nmodel = \"stub\"\nauth_env = \"WIA_CLI_TEST_TOKEN\"\n", stub.base_url())).unwrap();

    let missing = wia(&["eval-remote", "--data", "bench.jsonl", "--endpoint", "ep.toml", "--out", "remote.jsonl"], d);
    assert_eq!(code(&missing), 3);
    assert_eq!(stub.calls(), 0);

    let o = Command::new(env!("CARGO_BIN_EXE_wia"))
        .args(["eval-remote", "--data", "bench.jsonl", "--endpoint", "ep.toml", "--out", "remote.jsonl"])
        .env("WIA_CLI_TEST_TOKEN", "t")
        .current_dir(d)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert_eq!(stub.calls(), bench.len());
    let o = wia(&["report", "--scores", "remote.jsonl", "--out", "rep"], d);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("rep/report.json")).unwrap()).unwrap();
    assert_eq!(rep["overall_score"], 1.0);
    assert_eq!(rep["total"], bench.len() as u64);
}
