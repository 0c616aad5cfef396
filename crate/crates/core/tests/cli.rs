use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use afm::descriptor::load_sketch_file;
use afm::feature_maps::SpectraSet;
use afm::retrieval::Index;
use afm::service::{AppState, Engine, ServiceConfig};
use serde_json::{json, Value};

fn afm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afm"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run afm")
}

fn ok(args: &[&str]) -> String {
    let out = afm(args);
    assert!(
        out.status.success(),
        "afm {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthetic corpus plus an f32 index under `dir`.
fn setup(dir: &Path) {
    let out = dir.join("c");
    ok(&["synth", "--out", s(&out), "--items", "60", "--queries", "6", "--seed", "4"]);
    ok(&["index", "--input", s(&out.join("items")), "--out", s(&dir.join("i.afm"))]);
}

#[test]
fn index_is_deterministic_and_u8_is_smaller() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let items = dir.path().join("c/items");
    let again = dir.path().join("j.afm");
    ok(&["index", "--input", s(&items), "--out", s(&again)]);
    let a = std::fs::read(dir.path().join("i.afm")).unwrap();
    let b = std::fs::read(&again).unwrap();
    assert_eq!(a, b, "re-indexing changed the file");

    let q = dir.path().join("q.afm");
    ok(&["index", "--input", s(&items), "--out", s(&q), "--quant", "u8"]);
    let ratio = std::fs::metadata(&q).unwrap().len() as f64 / a.len() as f64;
    assert!((0.2..0.35).contains(&ratio), "u8/f32 size ratio {ratio}");
}

#[test]
fn unreadable_files_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let items = dir.path().join("c/items");
    std::fs::write(items.join("zz_garbage.pts"), "not a sketch\n").unwrap();
    let out = afm(&["index", "--input", s(&items), "--out", s(&dir.path().join("k.afm"))]);
    assert!(out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("indexed 60 of 61 files (1 skipped)"), "{err}");
}

#[test]
fn missing_files_exit_2_and_name_the_path() {
    let out = afm(&["query", "--index", "/no/such/index.afm", "--query", "/no/such/q.pts"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error:") && err.contains("/no/such/index.afm"), "{err}");

    let out = afm(&["serve", "--config", "/no/such/afm.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/afm.toml"));
}

#[test]
fn bad_method_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let q = dir.path().join("c/queries/query0000.pts");
    let out = afm(&["query", "--index", s(&dir.path().join("i.afm")), "--query", s(&q), "--rank", "bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let out = afm(&["query", "--index", s(&dir.path().join("i.afm")), "--query", s(&q), "--nbhd", "2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[tokio::test(flavor = "multi_thread")]
async fn cli_and_http_agree() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let index_path = dir.path().join("i.afm");
    let qpath = dir.path().join("c/queries/query0003.pts");

    let cli: Value = serde_json::from_str(&ok(&[
        "query", "--index", s(&index_path), "--query", s(&qpath), "-k", "8", "--json",
    ]))
    .unwrap();

    let cfg = ServiceConfig::default();
    let index = Index::load(&index_path, &SpectraSet::default_set()).unwrap();
    let engine = Engine::new(index, cfg.pipeline().unwrap(), cfg.max_shift, cfg.step);
    let state = Arc::new(AppState {
        engine: Some(Arc::new(engine)),
        config: cfg,
    });
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(afm::service::serve(listener, state));

    let pl = load_sketch_file(&qpath).unwrap();
    let pts: Vec<[f64; 4]> = pl.points.iter().map(|p| [p.x, p.y, p.phi, p.w]).collect();
    let http: Value = reqwest::Client::new()
        .post(format!("http://{addr}/query"))
        .json(&json!({ "points": pts, "width": pl.width, "height": pl.height, "k": 8 }))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(cli, http);
}

#[test]
fn eval_reports_map_and_precision() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let out = ok(&[
        "eval",
        "--index",
        s(&dir.path().join("i.afm")),
        "--queries",
        s(&dir.path().join("c/queries")),
        "--gt",
        s(&dir.path().join("c/gt.txt")),
        "--rank",
        "full",
        "--rerank",
        "none",
    ]);
    let map: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("mAP\t"))
        .unwrap()
        .parse()
        .unwrap();
    assert!((0.0..=1.0).contains(&map) && map > 0.5, "{out}");
    for n in [5, 10, 25, 50] {
        assert!(out.contains(&format!("P@{n}\t")));
    }
}

#[test]
fn approx_spectra_round_trip_through_index() {
    let dir = tempfile::tempdir().unwrap();
    let spectra = dir.path().join("s.txt");
    ok(&["approx", "build-spectra", "--nfreq-x", "3", "--out", s(&spectra)]);
    let set = SpectraSet::load(&spectra).unwrap();
    let layout = set.layout();
    assert_eq!(layout.counts(), (3, 2));
    assert_eq!(layout.omega_x[0], 0.0);
    assert_eq!(layout.full_dim(), 5 * 5 * 3);
    let table = ok(&["approx", "error-table", "--spectrum", s(&spectra)]);
    assert_eq!(table.lines().count(), 4, "{table}");
}

