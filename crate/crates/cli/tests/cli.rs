use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use axum::body::Body;
use axum::http::{Method, Request};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use loom_core::engine::StoryEngine;
use loom_core::store::PortfolioStore;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn loom(portfolio: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loom"))
        .arg("--portfolio")
        .arg(portfolio)
        .args(args)
        .env_remove("LOOM_CONFIG")
        .env_remove("LOOM_MOCK_SEED")
        .output()
        .unwrap()
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn replayed(portfolio: &Path) -> String {
    let script = fixtures().join("six_picks.json");
    ok(loom(portfolio, &["replay", script.to_str().unwrap(), "--seed", "7"])).trim().to_owned()
}

#[test]
fn beats_on_a_complete_session_is_a_conflict() {
    let dir = tempfile::tempdir().unwrap();
    let id = replayed(dir.path());
    let out = loom(dir.path(), &["beats", &id]);
    assert_eq!(out.status.code(), Some(5));

    let out = loom(dir.path(), &["--json", "beats", &id]);
    assert_eq!(out.status.code(), Some(5));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["class"], "conflict");
    assert_eq!(err["error"]["exit_code"], 5);
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(loom(dir.path(), &["export", "nobody"]).status.code(), Some(4));
    let out = loom(dir.path(), &["--seed", "1", "new", "--sparkle", "Rain.", "--words", "900-800"]);
    assert_eq!(out.status.code(), Some(3));
    let out = loom(dir.path(), &["--seed", "1", "new", "--sparkle", "   "]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn new_reads_a_sparkle_file() {
    let dir = tempfile::tempdir().unwrap();
    let sparkle = dir.path().join("sparkle.txt");
    std::fs::write(&sparkle, "A ferryman who charges in memories.\n").unwrap();
    let portfolio = dir.path().join("p");
    let id = ok(loom(&portfolio, &["--seed", "2", "new", "--sparkle-file", sparkle.to_str().unwrap(), "--beats", "3"]));
    let session: Value = serde_json::from_str(&ok(loom(&portfolio, &["export", id.trim(), "--format", "json"]))).unwrap();
    assert_eq!(session["sparkle"]["target_beat_count"], 3);
    assert_eq!(session["status"], "awaiting_selection");
}

#[test]
fn pick_with_an_edited_beat() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let id = ok(loom(p, &["--seed", "3", "new", "--sparkle", "The tide forgot to come back."]));
    let id = id.trim();
    let edit = p.join("beat.json");
    std::fs::write(
        &edit,
        json!({"setting": {"location": "the dry harbor", "time": "dawn"}, "characters": ["Tam"],
               "key_events": ["Tam walks onto the seabed", "A bell rings under the sand", "Tam starts digging"]})
        .to_string(),
    )
    .unwrap();
    ok(loom(p, &["--seed", "3", "pick", id, "comedy", "--edit-file", edit.to_str().unwrap()]));
    let session: Value = serde_json::from_str(&ok(loom(p, &["export", id, "--format", "json"]))).unwrap();
    assert_eq!(session["beats"][0]["setting"]["location"], "the dry harbor");
    assert_eq!(session["selection_log"], json!(["comedy"]));
    assert_eq!(session["segments"].as_array().unwrap().len(), 1);
}

#[test]
fn sessions_lists_the_portfolio() {
    let dir = tempfile::tempdir().unwrap();
    let id = replayed(dir.path());
    let listing: Value = serde_json::from_str(&ok(loom(dir.path(), &["--json", "sessions"]))).unwrap();
    assert_eq!(listing[0]["session_id"], id.as_str());
    assert_eq!(listing[0]["beats"], 6);
}

/// Per-story metrics of the fixture corpora, counted by hand.
/// (words, sentences, quoted words, locations)
const PLAIN: [(f64, f64, f64, f64); 3] = [(12.0, 2.0, 0.0, 0.0), (8.0, 2.0, 0.0, 1.0), (10.0, 3.0, 0.0, 0.0)];
const VOICED: [(f64, f64, f64, f64); 3] = [(10.0, 2.0, 2.0, 0.0), (9.0, 3.0, 2.0, 1.0), (14.0, 4.0, 1.0, 0.0)];

fn per_story(corpus: &[(f64, f64, f64, f64); 3]) -> [[f64; 4]; 3] {
    corpus.map(|(w, s, q, l)| [w, 0.4 * w / s, q / w, l])
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[test]
fn compare_matches_the_fixture_oracle() {
    let corpora = fixtures().join("corpora");
    let dir = tempfile::tempdir().unwrap();
    let out = ok(loom(
        dir.path(),
        &["--json", "compare", corpora.join("plain").to_str().unwrap(), corpora.join("voiced").to_str().unwrap()],
    ));
    let report: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["pairs"], 3);

    let (a, b) = (per_story(&PLAIN), per_story(&VOICED));
    let names = ["word_count", "gunning_fog", "dialogue_ratio", "location_count"];
    for (k, name) in names.iter().enumerate() {
        let row = &report["metrics"][k];
        assert_eq!(row["metric"], *name);
        let xs: Vec<f64> = a.iter().map(|r| r[k]).collect();
        let ys: Vec<f64> = b.iter().map(|r| r[k]).collect();
        let d: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y - x).collect();
        let close = |v: &Value, want: f64| (v.as_f64().unwrap() - want).abs() < 1e-9;
        assert!(close(&row["mean_a"], mean(&xs)), "{name} mean_a {}", row["mean_a"]);
        assert!(close(&row["mean_b"], mean(&ys)), "{name} mean_b {}", row["mean_b"]);
        assert!(close(&row["mean_diff"], mean(&d)), "{name} mean_diff");
        assert_eq!(row["df"], 2);
        let sd = sample_sd(&d);
        if sd > 0.0 {
            let t = mean(&d) / (sd / 3f64.sqrt());
            assert!(close(&row["t"], t), "{name} t {} vs {t}", row["t"]);
            // Student's t with two degrees of freedom has a closed-form tail.
            let p = 1.0 - t.abs() / (2.0 + t * t).sqrt();
            assert!(close(&row["p"], p), "{name} p {} vs {p}", row["p"]);
        }
    }
    // Identical location counts: no difference at all.
    assert_eq!(report["metrics"][3]["t"], 0.0);

    let text = ok(loom(dir.path(), &["compare", corpora.join("plain").to_str().unwrap(), corpora.join("voiced").to_str().unwrap()]));
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("metric"));
    assert!(lines[1].starts_with("word_count") && lines[1].contains("0.577") && lines[1].contains("0.6220"));
}

#[test]
fn metrics_on_a_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(loom(dir.path(), &["--json", "metrics", fixtures().join("corpora/voiced").to_str().unwrap()]));
    let entries: Value = serde_json::from_str(&out).unwrap();
    let want = per_story(&VOICED);
    for (i, e) in entries.as_array().unwrap().iter().enumerate() {
        assert_eq!(e["id"], format!("s{}", i + 1));
        assert_eq!(e["metrics"]["word_count"].as_f64().unwrap(), want[i][0]);
        assert!((e["metrics"]["gunning_fog"].as_f64().unwrap() - want[i][1]).abs() < 1e-12);
        assert!((e["metrics"]["dialogue_ratio"].as_f64().unwrap() - want[i][2]).abs() < 1e-12);
        assert_eq!(e["metrics"]["location_count"].as_f64().unwrap(), want[i][3]);
    }
}

#[test]
fn transitions_over_a_portfolio() {
    let dir = tempfile::tempdir().unwrap();
    replayed(dir.path());
    let out: Value = serde_json::from_str(&ok(loom(dir.path(), &["--json", "transitions", dir.path().to_str().unwrap()]))).unwrap();
    // mystery, romance, horror, mystery, magical_realism, adventure
    let personas: Vec<&str> = out["matrix"]["personas"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    let at = |id: &str| personas.iter().position(|p| *p == id).unwrap();
    let counts = &out["matrix"]["counts"];
    assert_eq!(counts[at("mystery")][at("romance")], 1);
    assert_eq!(counts[at("horror")][at("mystery")], 1);
    assert_eq!(counts[at("mystery")][at("magical_realism")], 1);
    let total: u64 = counts.as_array().unwrap().iter().flat_map(|r| r.as_array().unwrap()).map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(total, 5);
}

async fn call(app: &axum::Router, method: Method, uri: &str, body: Option<Value>) -> Value {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let res = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    assert!(res.status().is_success(), "{uri}: {}", res.status());
    serde_json::from_slice(&res.into_body().collect().await.unwrap().to_bytes()).unwrap()
}

/// The same scenario through the CLI and the HTTP service ends in identical exports.
#[tokio::test]
async fn cli_and_service_agree() {
    let sparkle = "A cartographer maps a city that moves at night.";
    let picks = ["scifi", "dystopian", "mystery"];

    let cli_dir = tempfile::tempdir().unwrap();
    let p = cli_dir.path();
    ok(loom(p, &["--seed", "11", "new", "--sparkle", sparkle, "--beats", "3", "--id", "atlas"]));
    for persona in picks {
        ok(loom(p, &["--seed", "11", "pick", "atlas", persona]));
    }
    ok(loom(p, &["--seed", "11", "refine", "atlas", "2", "--instruction", "Make the ending quieter."]));

    let api_dir = tempfile::tempdir().unwrap();
    let state = loom_service::AppState::new(StoryEngine::mock(11), PortfolioStore::open(api_dir.path()).unwrap());
    let app = loom_service::router(state);
    call(&app, Method::POST, "/sessions", Some(json!({"session_id": "atlas", "sparkle": {"text": sparkle, "target_beat_count": 3}}))).await;
    for (i, persona) in picks.iter().enumerate() {
        if i > 0 {
            call(&app, Method::POST, "/sessions/atlas/proposals", None).await;
        }
        call(&app, Method::POST, "/sessions/atlas/select", Some(json!({"persona_id": persona}))).await;
        call(&app, Method::POST, "/sessions/atlas/expand", None).await;
    }
    call(&app, Method::POST, "/sessions/atlas/segments/2/refine", Some(json!({"instruction": "Make the ending quieter."}))).await;

    for format in ["txt", "json"] {
        let from_cli = ok(loom(p, &["export", "atlas", "--format", format]));
        let from_api = ok(loom(api_dir.path(), &["export", "atlas", "--format", format]));
        assert_eq!(from_cli, from_api, "{format} exports differ");
    }
}
