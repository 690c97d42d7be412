use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use predihealth::fhir::validate_resource;
use predihealth::model::Sample;
use serde_json::Value;

fn predi(dir: &Path) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_predi"));
    c.current_dir(dir);
    // keep the developer's environment out of the precedence tests
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("PREDI_")) {
        c.env_remove(k);
    }
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    predi(dir).args(args).output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stdout);
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("{e}: {text}"))
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn cohort(dir: &Path, n: &str, seed: &str) -> PathBuf {
    let out = run(dir, &["simulate", "cohort", "--n", n, "--seed", seed, "--out", "cohort.csv", "--records-out", "records.json"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    dir.join("cohort.csv")
}

#[test]
fn train_is_reproducible_and_reports_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    cohort(d, "600", "4");
    let a = run(d, &["train", "--data", "cohort.csv", "--out", "a.json", "--seed", "4", "--json", "--report", "rep.json"]);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    let b = run(d, &["train", "--data", "cohort.csv", "--out", "b.json", "--seed", "4"]);
    assert_eq!(code(&b), 0);
    assert_eq!(std::fs::read(d.join("a.json")).unwrap(), std::fs::read(d.join("b.json")).unwrap());

    let report = stdout_json(&a);
    let held = &report["report"]["held_out"]["stacked"];
    for k in ["accuracy", "precision", "sensitivity", "f1", "dor"] {
        assert!(held["metrics"].get(k).is_some(), "{k}: {held}");
    }
    for k in ["tp", "tn", "fp", "fn"] {
        assert!(held["counts"][k].is_u64(), "{k}: {held}");
    }
    let on_file: Value = serde_json::from_slice(&std::fs::read(d.join("rep.json")).unwrap()).unwrap();
    assert_eq!(on_file, report["report"]);

    let human = String::from_utf8(b.stdout).unwrap();
    assert!(human.contains("sensitivity") && human.contains("stacked"), "{human}");

    let c = run(d, &["train", "--data", "cohort.csv", "--out", "c.json", "--seed", "5"]);
    assert_eq!(code(&c), 0);
    assert_ne!(std::fs::read(d.join("a.json")).unwrap(), std::fs::read(d.join("c.json")).unwrap());
}

#[test]
fn single_class_dataset_is_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    cohort(d, "60", "1");
    let text = std::fs::read_to_string(d.join("cohort.csv")).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    let mut one_class = vec![header.to_owned()];
    one_class.extend(lines.map(|l| format!("{},0", l.rsplit_once(',').unwrap().0)));
    std::fs::write(d.join("flat.csv"), one_class.join("\n")).unwrap();

    let out = run(d, &["train", "--data", "flat.csv", "--out", "m.json"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("single class"), "{}", stderr(&out));
    assert!(!d.join("m.json").exists());

    let out = run(d, &["train", "--data", "absent.csv", "--out", "m.json"]);
    assert_eq!(code(&out), 1);
    let out = run(d, &["train", "--dta", "cohort.csv"]);
    assert_eq!(code(&out), 1, "usage errors are user errors");
    assert_eq!(code(&run(d, &["--help"])), 0);
}

#[test]
fn evaluate_and_stratify_use_the_trained_model() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    cohort(d, "400", "8");
    assert_eq!(code(&run(d, &["train", "--data", "cohort.csv", "--out", "m.json", "--seed", "8"])), 0);

    let ev = run(d, &["evaluate", "--model", "m.json", "--data", "cohort.csv", "--json"]);
    assert_eq!(code(&ev), 0, "{}", stderr(&ev));
    let ev = stdout_json(&ev);
    assert_eq!(ev["scored"], 400);
    let c = &ev["evaluation"]["counts"];
    let total: u64 = ["tp", "tn", "fp", "fn"].iter().map(|k| c[*k].as_u64().unwrap()).sum();
    assert_eq!(total, 400);

    let q = run(d, &["stratify", "--model", "m.json", "--patients", "records.json", "--json", "--top", "10", "--out", "q.json"]);
    assert_eq!(code(&q), 0, "{}", stderr(&q));
    let q = stdout_json(&q);
    let items = q["items"].as_array().unwrap();
    assert_eq!(items.len(), 10);
    let probs: Vec<f64> = items.iter().map(|i| i["probability"].as_f64().unwrap()).collect();
    assert!(probs.windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(items[0]["enrollment"], "Candidate");

    // the CSV route ranks the same patients the same way, minus enrollment
    let csv = run(d, &["stratify", "--model", "m.json", "--patients", "cohort.csv", "--json", "--top", "10"]);
    let csv = stdout_json(&csv);
    let ids = |v: &Value| v["items"].as_array().unwrap().iter().map(|i| i["patient_id"].clone()).collect::<Vec<_>>();
    assert_eq!(ids(&csv), ids(&q));

    let out = run(d, &["evaluate", "--data", "cohort.csv"]);
    assert_eq!(code(&out), 1, "no model configured");
}

#[test]
fn config_precedence_flag_env_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("predi.toml"), "seed = 11\n").unwrap();
    let seed_of = |cmd: &mut Command| -> Value {
        let out = cmd.output().unwrap();
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        stdout_json(&out)["seed"].clone()
    };
    let base = ["simulate", "cohort", "--n", "20", "--out", "x.csv", "--json"];
    assert_eq!(seed_of(predi(d).args(base)), 0);
    assert_eq!(seed_of(predi(d).args(base).args(["--config", "predi.toml"])), 11);
    assert_eq!(seed_of(predi(d).args(base).args(["--config", "predi.toml"]).env("PREDI_SEED", "12")), 12);
    assert_eq!(seed_of(predi(d).args(base).args(["--config", "predi.toml", "--seed", "13"]).env("PREDI_SEED", "12")), 13);

    let out = predi(d).args(base).env("PREDI_SEED", "twelve").output().unwrap();
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("PREDI_SEED"));
    let out = predi(d).args(base).args(["--config", "missing.toml"]).output().unwrap();
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("missing.toml"));
}

#[test]
fn offline_trace_writes_only_the_stream_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = ["simulate", "trace", "--patient", "P3", "--days", "2", "--seed", "6", "--offline"];
    let a = predi(d).args(args).args(["--out", "a.jsonl"]).output().unwrap();
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    let b = predi(d).args(args).args(["--out", "b.jsonl"]).output().unwrap();
    assert_eq!(code(&b), 0);
    let bytes = std::fs::read(d.join("a.jsonl")).unwrap();
    assert_eq!(bytes, std::fs::read(d.join("b.jsonl")).unwrap());
    let mut entries: Vec<_> = std::fs::read_dir(d).unwrap().map(|e| e.unwrap().file_name()).collect();
    entries.sort();
    assert_eq!(entries, ["a.jsonl", "b.jsonl"]);
    let first: Sample = serde_json::from_str(std::str::from_utf8(&bytes).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(first.patient_id().as_str(), "P3");

    let episode = "fluid_overload,2025-01-02T00:00:00Z,24,3";
    let c = predi(d).args(args).args(["--out", "c.jsonl", "--episode", episode]).output().unwrap();
    assert_eq!(code(&c), 0);
    assert_ne!(bytes, std::fs::read(d.join("c.jsonl")).unwrap());

    assert_eq!(code(&predi(d).args(args).output().unwrap()), 1, "--offline without --out");
    let bad = predi(d).args(args).args(["--out", "x.jsonl", "--episode", "flood,1,2,3"]).output().unwrap();
    assert_eq!(code(&bad), 1);
}

/// `predi serve` on ephemeral ports; killed on drop.
struct Server {
    child: Child,
    base: String,
}

impl Server {
    fn start(dir: &Path, extra: &[&str]) -> Server {
        let mut child = predi(dir)
            .args(["serve", "--data-dir", "data", "--http-addr", "127.0.0.1:0", "--mqtt-addr", "off", "--json"])
            .args(extra)
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let ready: Value = serde_json::from_str(&line).unwrap_or_else(|e| panic!("{e}: `{line}`"));
        assert_eq!(ready["event"], "ready");
        Server { child, base: format!("http://{}", ready["http_addr"].as_str().unwrap()) }
    }

    fn addr(&self) -> &str {
        self.base.trim_start_matches("http://")
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn get(url: &str) -> (u16, String) {
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
    rt.block_on(async {
        let r = reqwest::get(url).await.unwrap();
        (r.status().as_u16(), r.text().await.unwrap())
    })
}

#[test]
fn serve_reports_health_and_startup_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let srv = Server::start(d, &[]);
    assert_eq!(get(&format!("{}/healthz", srv.base)), (200, "ok".to_owned()));
    assert_eq!(get(&format!("{}/v1/stratify/queue", srv.base)).0, 503);

    let busy = run(d, &["serve", "--data-dir", "data2", "--http-addr", srv.addr(), "--mqtt-addr", "off"]);
    assert_eq!(code(&busy), 1);
    assert!(stderr(&busy).contains(srv.addr()), "{}", stderr(&busy));
    assert!(stderr(&busy).contains("port_in_use"));

    let bad = run(d, &["serve", "--http-addr", "127.0.0.1:0", "--mqtt-addr", "off", "--thresholds", "nope.json"]);
    assert_eq!(code(&bad), 1);
    assert!(stderr(&bad).contains("nope.json"), "{}", stderr(&bad));
    assert!(stderr(&bad).contains("bad_config"));
}

#[test]
fn online_replay_export_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let srv = Server::start(d, &[]);
    let online = |extra: &[&str]| {
        predi(d)
            .args(["simulate", "trace", "--target", &srv.base, "--credentials", "creds.json", "--json"])
            .args(extra)
            .output()
            .unwrap()
    };

    let out = online(&["--patient", "P5", "--days", "1", "--out", "p5.jsonl", "--report", "rep.json"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = stdout_json(&out);
    assert_eq!(report["accepted"], report["messages"]);
    assert!(report["rejected"].as_array().unwrap().is_empty());
    assert!(d.join("rep.json").exists());

    // same stream again: every message is an idempotent duplicate
    let again = online(&["--stream", "p5.jsonl"]);
    assert_eq!(code(&again), 0, "{}", stderr(&again));
    assert_eq!(stdout_json(&again)["duplicates"], report["messages"]);

    // one implausible value appended after the trace ends
    let text = std::fs::read_to_string(d.join("p5.jsonl")).unwrap();
    let last = text.lines().filter(|l| l.contains("\"heart_rate\"")).last().unwrap();
    let mut bad: Value = serde_json::from_str(last).unwrap();
    bad["timestamp"] = Value::from("2025-01-09T00:00:00Z");
    bad["value"] = Value::from(400.0);
    std::fs::write(d.join("bad.jsonl"), format!("{text}{bad}\n")).unwrap();
    let rej = online(&["--stream", "bad.jsonl"]);
    assert_eq!(code(&rej), 1);
    let rep = stdout_json(&rej);
    assert_eq!(rep["rejected"].as_array().unwrap().len(), 1);
    assert_eq!(rep["rejected"][0]["code"], "out_of_range");
    assert!(stderr(&rej).contains("1 of"), "{}", stderr(&rej));

    let export = |extra: &[&str]| predi(d).args(["export", "--data-dir", "data", "--patient", "P5"]).args(extra).output().unwrap();
    let window = ["--from", "2025-01-01T00:00:00Z", "--to", "2025-01-01T00:05:00Z", "--out", "b.json"];
    let out = export(&window);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let bundle: Value = serde_json::from_slice(&std::fs::read(d.join("b.json")).unwrap()).unwrap();
    let entries = bundle["entry"].as_array().unwrap();
    // heart rate, SpO2, SDNN, two blood pressures and a weight at 00:00, watch metrics again at 00:05
    assert!(!entries.is_empty());
    for e in entries {
        validate_resource(&e["resource"]).unwrap();
    }
    let times: Vec<&str> = entries.iter().map(|e| e["resource"]["effectiveDateTime"].as_str().unwrap()).collect();
    assert!(times.windows(2).all(|w| w[0] <= w[1]));

    let three = export(&["--from", "2025-01-01T00:00:00Z", "--to", "2025-01-01T00:00:00Z"]);
    let all_at_zero: Value = serde_json::from_slice(&three.stdout).unwrap();
    let n0 = all_at_zero["entry"].as_array().unwrap().len();
    let hr_only: Vec<_> = all_at_zero["entry"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|e| e["resource"]["code"]["coding"][0]["code"] == "8867-4")
        .collect();
    assert_eq!(hr_only.len(), 1, "one heart-rate sample per instant");
    assert!(n0 >= 3);

    let empty = export(&["--from", "2030-01-01T00:00:00Z", "--to", "2030-01-02T00:00:00Z", "--out", "empty.json"]);
    assert_eq!(code(&empty), 0);
    let bundle: Value = serde_json::from_slice(&std::fs::read(d.join("empty.json")).unwrap()).unwrap();
    assert_eq!(bundle["entry"].as_array().unwrap().len(), 0);

    let unknown = predi(d).args(["export", "--data-dir", "data", "--patient", "P404"]).output().unwrap();
    assert_eq!(code(&unknown), 1);
    assert!(stderr(&unknown).contains("unknown_patient"));
}

#[test]
fn unreachable_gateway_is_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let out = run(dir.path(), &["simulate", "trace", "--days", "1", "--target", &url]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("gateway_unavailable"), "{}", stderr(&out));
}
