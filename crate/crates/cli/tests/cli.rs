use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(rel)
}

fn todbias(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_todbias"))
        .args(args)
        .env_remove("TOD_MODEL_ENDPOINT")
        .env_remove("TOD_MODEL_MODE")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const BIASED_API: &str =
    r#"{"kind": "mock_biased", "axis": "gender", "attributes": ["male"], "corruption": "drop_slot"}"#;

#[test]
fn version_and_help() {
    let out = todbias(&["--version"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).starts_with("todbias "));
    assert_eq!(code(&todbias(&["--help"])), 0);
    assert_eq!(code(&todbias(&["frobnicate"])), 2);
}

#[test]
fn stats_json_counts() {
    let corpus = fixture("stats/corpus.json");
    let out = todbias(&["stats", "--corpus", p(&corpus)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["total_tokens"], 50);
    assert_eq!(v["axes"]["gender"]["male"]["count"], 4);
    assert_eq!(v["axes"]["gender"]["female"]["proportion"], 0.02);
}

#[test]
fn stats_csv() {
    let corpus = fixture("stats/corpus.json");
    let out = todbias(&["stats", "--corpus", p(&corpus), "--format", "csv"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.starts_with("axis,attribute,count,proportion\n"));
    assert!(text.contains("gender,male,4,0.08\n"), "{text}");
}

#[test]
fn missing_inputs_are_usage_errors() {
    let corpus = fixture("stats/corpus.json");
    let out = todbias(&[
        "stats",
        "--corpus",
        p(&corpus),
        "--lexicon",
        "/definitely/not/here.json",
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("/definitely/not/here.json"));
    assert_eq!(code(&todbias(&["stats"])), 2);
    assert_eq!(code(&todbias(&["attribute", "--corpus", p(&corpus)])), 2);
}

#[test]
fn malformed_corpus_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"dialogues": [{"id": 3}]}"#).unwrap();
    let out = todbias(&["stats", "--corpus", p(&bad)]);
    assert_eq!(code(&out), 5);
    assert!(String::from_utf8_lossy(&out.stderr).contains("dialogues[0]"));
}

#[test]
fn perturb_writes_corpus_and_plan() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("perturbed.json");
    let corpus = fixture("providers/corpus.json");
    let out = todbias(&[
        "perturb",
        "--corpus",
        p(&corpus),
        "--pair",
        "gender:female:male",
        "--seed",
        "1",
        "--out",
        p(&out_path),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&out_path).unwrap();
    assert!(text.contains("male psychiatrist"));
    assert!(!text.contains("female psychiatrist"));
    let plan: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("perturbed.json.plan.json")).unwrap()).unwrap();
    let plan = plan.as_array().unwrap();
    assert_eq!(plan.len(), 4);
    assert_eq!(plan[0]["w"], "female");
    assert_eq!(plan[0]["t"], "male");
    assert_eq!(plan[3]["unperturbable"], true);
}

#[test]
fn perturb_seed_changes_plan() {
    let corpus = fixture("providers/corpus.json");
    let plan_for = |seed: &str| {
        let dir = tempfile::tempdir().unwrap();
        let plan = dir.path().join("plan.json");
        let out = todbias(&[
            "perturb",
            "--corpus",
            p(&corpus),
            "--axis",
            "gender",
            "--seed",
            seed,
            "--plan",
            p(&plan),
        ]);
        assert_eq!(code(&out), 0);
        std::fs::read_to_string(plan).unwrap()
    };
    assert_eq!(plan_for("1"), plan_for("1"));
    assert_ne!(plan_for("1"), plan_for("2"));
}

#[test]
fn unperturbable_corpus_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.json");
    std::fs::write(
        &corpus,
        r#"{"dialogues": [{"id": "x", "domain": "weather", "turns": [
            {"speaker": "user", "utterance": "Is it raining in Oakland?", "gold_response": "No."}]}]}"#,
    )
    .unwrap();
    let out = todbias(&["perturb", "--corpus", p(&corpus)]);
    assert_eq!(code(&out), 0);
    let canonical = stdout(&todbias(&["perturb", "--corpus", p(&corpus), "--seed", "9"]));
    assert_eq!(stdout(&out), canonical);
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["dialogues"][0]["turns"][0]["utterance"], "Is it raining in Oakland?");
}

#[test]
fn closure_violation_exits_5_naming_the_pair() {
    let dir = tempfile::tempdir().unwrap();
    let lexicon = dir.path().join("lex.json");
    std::fs::write(
        &lexicon,
        r#"{"axes": [{"name": "gender", "attributes": ["female", "male"]}],
            "entries": [{"lexeme": "mom", "axis": "gender", "attribute": "female"},
                        {"lexeme": "dad", "axis": "gender", "attribute": "male"}],
            "substitutions": [{"lexeme": "dad", "target_attribute": "female", "replacement": "mom"}]}"#,
    )
    .unwrap();
    let corpus = dir.path().join("c.json");
    std::fs::write(
        &corpus,
        r#"{"dialogues": [{"id": "x", "domain": "travel", "turns": [
            {"speaker": "user", "utterance": "Book a flight for my mom.", "gold_response": "Done."}]}]}"#,
    )
    .unwrap();
    let out = todbias(&["perturb", "--corpus", p(&corpus), "--lexicon", p(&lexicon)]);
    assert_eq!(code(&out), 5);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("mom") && err.contains("male"), "{err}");
}

#[test]
fn run_reports_bleu_and_jga() {
    let out = todbias(&[
        "run",
        "--corpus",
        p(&fixture("mixed/corpus.json")),
        "--db",
        p(&fixture("mixed/db.json")),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["bleu"], 1.0);
    assert_eq!(v["n_dialogues"], 6);
    assert_eq!(v["traces"].as_array().unwrap().len(), 6);
}

fn attribute_mixed(extra: &[&str]) -> Output {
    let mut args = vec![
        "attribute".to_string(),
        "--corpus".into(),
        p(&fixture("mixed/corpus.json")).into(),
        "--db".into(),
        p(&fixture("mixed/db.json")).into(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    todbias(&args)
}

#[test]
fn attribute_writes_one_report_per_axis() {
    let dir = tempfile::tempdir().unwrap();
    let out = attribute_mixed(&[
        "--api-backend",
        BIASED_API,
        "--response-backend",
        "template",
        "--runs",
        "2",
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for axis in ["gender", "age", "race"] {
        let report: Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(format!("report_{axis}.json"))).unwrap())
                .unwrap();
        assert_eq!(report[0]["axis"], axis);
        assert_eq!(report[0]["status"], "ok");
        assert_eq!(report[0]["per_run"].as_array().unwrap().len(), 2);
        assert!(dir.path().join(format!("per_pair_{axis}.csv")).is_file());
    }
}

#[test]
fn attribute_is_deterministic() {
    let args = [
        "--api-backend",
        BIASED_API,
        "--response-backend",
        "template",
        "--runs",
        "1",
        "--seed",
        "7",
    ];
    let a = attribute_mixed(&args);
    let b = attribute_mixed(&[&args[..], &["--jobs", "1"]].concat());
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let csv = attribute_mixed(&[&args[..], &["--format", "csv"]].concat());
    assert!(stdout(&csv).starts_with("axis,run,step,value\n"));
}

#[test]
fn unreachable_endpoint_exits_4() {
    let out = attribute_mixed(&["--api-backend", "remote", "--endpoint", "http://127.0.0.1:9"]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn aborted_axis_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.json");
    std::fs::write(
        &corpus,
        r#"{"dialogues": [{"id": "x", "domain": "health", "turns": [
            {"speaker": "user", "utterance": "I need a female dentist.", "gold_response": "Here is a dentist."}]}]}"#,
    )
    .unwrap();
    let db = dir.path().join("db.json");
    std::fs::write(&db, r#"{"records": []}"#).unwrap();
    // every gendered utterance gets a useless answer: original helpfulness is 0
    let response = r#"{"kind": "mock_biased", "axis": "gender", "attributes": ["female", "male", "non-binary"], "degraded_response": "zzz"}"#;
    let out = todbias(&[
        "attribute",
        "--corpus",
        p(&corpus),
        "--db",
        p(&db),
        "--axis",
        "gender",
        "--runs",
        "1",
        "--response-backend",
        response,
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v[0]["status"], "aborted");
    assert!(v[0]["f_raw"].is_null());
}

#[test]
fn config_file_with_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(fixture("mixed/corpus.json"), dir.path().join("corpus.json")).unwrap();
    std::fs::copy(fixture("mixed/db.json"), dir.path().join("db.json")).unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        r#"
global_seed = 7
runs = 2
axes = ["gender"]
corpus_path = "corpus.json"
db_path = "db.json"

[api_backend]
kind = "mock_echo_gold"

[response_backend]
kind = "mock_template"
"#,
    )
    .unwrap();
    let from_file = todbias(&["attribute", "--config", p(&config)]);
    assert_eq!(code(&from_file), 0, "{}", String::from_utf8_lossy(&from_file.stderr));
    let v: Value = serde_json::from_str(&stdout(&from_file)).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 1);
    assert_eq!(v[0]["per_run"].as_array().unwrap().len(), 2);

    let overridden = todbias(&["attribute", "--config", p(&config), "--runs", "1", "--axis", "age"]);
    assert_eq!(code(&overridden), 0);
    let v: Value = serde_json::from_str(&stdout(&overridden)).unwrap();
    assert_eq!(v[0]["axis"], "age");
    assert_eq!(v[0]["per_run"].as_array().unwrap().len(), 1);

    std::fs::write(&config, "runs = \"many\"\n").unwrap();
    assert_eq!(code(&todbias(&["attribute", "--config", p(&config)])), 5);
}

#[test]
fn endpoint_from_environment() {
    let out = Command::new(env!("CARGO_BIN_EXE_todbias"))
        .args([
            "attribute",
            "--corpus",
            p(&fixture("mixed/corpus.json")),
            "--db",
            p(&fixture("mixed/db.json")),
        ])
        .args(["--api-backend", "remote"])
        .env("TOD_MODEL_ENDPOINT", "http://127.0.0.1:9")
        .output()
        .unwrap();
    assert_eq!(code(&out), 4);
}

#[test]
fn serve_mock_answers_health_checks() {
    use std::io::{Read, Write};
    use std::net::{TcpListener, TcpStream};

    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = Command::new(env!("CARGO_BIN_EXE_todbias"))
        .args(["serve-mock", "--mode", "template", "--port", &port.to_string()])
        .stderr(std::process::Stdio::null())
        .spawn()
        .unwrap();
    let mut reply = String::new();
    for _ in 0..100 {
        if let Ok(mut s) = TcpStream::connect(("127.0.0.1", port)) {
            s.write_all(b"GET /healthz HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n")
                .unwrap();
            s.read_to_string(&mut reply).unwrap();
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(50));
    }
    child.kill().unwrap();
    let _ = child.wait();
    assert!(reply.starts_with("HTTP/1.1 200"), "{reply}");
    assert!(reply.contains(r#"{"status":"ok"}"#), "{reply}");

    assert_eq!(code(&todbias(&["serve-mock", "--mode", "echo"])), 2);
    assert_eq!(code(&todbias(&["serve-mock", "--mode", "bogus"])), 2);
}
