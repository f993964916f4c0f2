use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn finspect(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_finspect")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small corpus with `class` and `site` columns.
fn corpus(dir: &Path) -> (PathBuf, PathBuf) {
    let out = dir.join("corpus");
    let o = finspect(&["gen", "--out", s(&out), "--n", "400", "--dim", "12", "--classes", "3", "--sites", "4", "--offset", "4"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    (out.join("features.fbin"), out.join("labels.csv"))
}

#[test]
fn report_happy_path_writes_the_site() {
    let dir = tempfile::tempdir().unwrap();
    let (f, l) = corpus(dir.path());
    let rpt = dir.path().join("rpt");
    let o = finspect(&["report", "--features", s(&f), "--labels", s(&l), "--probe", "site", "--umap-grid", "15:0.1", "--out", s(&rpt)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["report.json", "summary.txt", "index.html"] {
        assert!(rpt.join(name).is_file(), "{name}");
    }
    assert!(rpt.join("assets").is_dir());
    let v = finspect(&["validate", "--report", s(&rpt.join("report.json"))]);
    assert_eq!(code(&v), 0, "{}", String::from_utf8_lossy(&v.stderr));

    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(rpt.join("report.json")).unwrap()).unwrap();
    for key in ["version", "generated_at", "datasets", "embeddings", "metrics", "probes"] {
        assert!(doc.get(key).is_some(), "{key}");
    }
    assert_eq!(doc["embeddings"].as_array().unwrap().len(), 1);
    let coords = doc["embeddings"][0]["coords"].as_array().unwrap();
    assert_eq!(coords.len(), 2 * 400);
}

#[test]
fn missing_features_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = finspect(&["report", "--labels", "l.csv", "--out", s(&dir.path().join("r"))]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--features"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = finspect(&["umap", "--frobnicate"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--frobnicate"));
}

#[test]
fn corrupt_fbin_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let (f, l) = corpus(dir.path());
    let bytes = std::fs::read(&f).unwrap();
    let bad = dir.path().join("bad.fbin");
    std::fs::write(&bad, &bytes[..bytes.len() / 2]).unwrap();
    let o = finspect(&["validate", "--features", s(&bad)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("rows"));

    let o = finspect(&["report", "--features", s(&bad), "--labels", s(&l), "--out", s(&dir.path().join("r"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn non_finite_rows_are_reported_by_index() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("f.csv");
    std::fs::write(&csv, "id,f0,f1\na,1,2\nb,NaN,3\nc,4,5\n").unwrap();
    let o = finspect(&["validate", "--features", s(&csv)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("row 1"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn unknown_probe_column_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let (f, l) = corpus(dir.path());
    let o = finspect(&["probe", "--features", s(&f), "--labels", s(&l), "--target", "nope"]);
    assert_eq!(code(&o), 1);
}

fn strip_timestamp(path: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("generated_at");
    v
}

#[test]
fn deterministic_reports_match_and_cache_is_transparent() {
    let dir = tempfile::tempdir().unwrap();
    let (f, l) = corpus(dir.path());
    let run = |name: &str, extra: &[&str]| {
        let rpt = dir.path().join(name);
        let mut args = vec![
            "report", "--deterministic", "--seed", "9", "--features", s(&f), "--labels", s(&l), "--probe", "site",
            "--umap-grid", "5,10:0.1,0.5", "--out", s(&rpt),
        ];
        args.extend_from_slice(extra);
        let o = finspect(&args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        rpt.join("report.json")
    };
    let a = run("a", &[]);
    let b = run("b", &[]);
    let c = run("c", &["--no-cache"]);
    assert_eq!(strip_timestamp(&a), strip_timestamp(&b));
    assert_eq!(strip_timestamp(&a), strip_timestamp(&c));
    let doc = strip_timestamp(&a);
    assert_eq!(doc["embeddings"].as_array().unwrap().len(), 4);
}

#[test]
fn subcommands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let (f, l) = corpus(dir.path());
    let split = dir.path().join("split.csv");
    assert_eq!(code(&finspect(&["split", "--labels", s(&l), "--group", "site", "--out", s(&split)])), 0);
    let text = std::fs::read_to_string(&split).unwrap();
    assert_eq!(text.lines().count(), 401);

    let bal = dir.path().join("bal");
    let o = finspect(&["balance", "--features", s(&f), "--labels", s(&l), "--column", "site", "--top-k", "2", "--out", s(&bal)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let labels = std::fs::read_to_string(bal.join("labels.csv")).unwrap();
    let rows = labels.lines().count() - 1;
    assert!(rows > 0 && rows % 2 == 0, "{rows}");

    let emb = dir.path().join("e.json");
    let o = finspect(&["umap", "--features", s(&bal.join("features.fbin")), "--n-neighbors", "10", "--epochs", "50", "--out", s(&emb)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let e: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&emb).unwrap()).unwrap();
    assert_eq!(e["ids"].as_array().unwrap().len(), rows);

    let probes = dir.path().join("p.json");
    let o = finspect(&["probe", "--features", s(&f), "--labels", s(&l), "--target", "site", "--target", "class", "--runs", "2", "--out", s(&probes)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let p: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&probes).unwrap()).unwrap();
    assert_eq!(p.as_array().unwrap().len(), 2);
    assert!(String::from_utf8_lossy(&o.stdout).contains("site: accuracy"));
}

#[test]
fn bundled_explorer_is_copied() {
    let dir = tempfile::tempdir().unwrap();
    let (f, l) = corpus(dir.path());
    let bundle = dir.path().join("bundle");
    std::fs::create_dir_all(bundle.join("assets")).unwrap();
    std::fs::write(bundle.join("index.html"), "<html>explorer</html>").unwrap();
    std::fs::write(bundle.join("assets/app.js"), "//").unwrap();
    let rpt = dir.path().join("rpt");
    let o = finspect(&[
        "report", "--features", s(&f), "--labels", s(&l), "--no-umap", "--probe", "class", "--assets", s(&bundle), "--out", s(&rpt),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(rpt.join("index.html")).unwrap(), "<html>explorer</html>");
    assert!(rpt.join("assets/app.js").is_file());
}
