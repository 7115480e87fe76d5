use std::path::Path;
use std::process::{Command, Output};

use saog_core::dataset::SceneDataset;
use saog_core::grammar::{GrammarSpec, ObjectInstance, ParseGraph};
use saog_core::projection::InstanceMap;
use saog_eval::criteria::brute_force_map;

fn fixture(name: &str) -> String {
    format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn saog(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_saog"))
        .args(args)
        .env_remove("SAOG_SPEC")
        .env_remove("SAOG_BIND")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = saog(args);
    assert!(
        out.status.success(),
        "saog {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let path = e.unwrap().path();
            (
                path.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&path).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn sample_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("s.json");
    ok(&["init-spec", "--out", p(&spec)]);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        ok(&[
            "sample",
            "--spec",
            p(&spec),
            "--n",
            "10",
            "--seed",
            "7",
            "--steps",
            "500",
            "--burn-in",
            "100",
            "--maps",
            "--out",
            p(out),
        ]);
    }
    let files = dir_bytes(&a);
    assert_eq!(files.len(), 1 + 10 * 3);
    assert_eq!(files, dir_bytes(&b));
    assert_eq!(SceneDataset::load(&a).unwrap().len(), 10);
}

#[test]
fn infer_matches_exhaustive_map() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = GrammarSpec::clevr_default();
    for r in &mut spec.relations {
        r.prior = 0.7;
    }
    spec.weights.relation = 2.0;
    let spec_path = tmp.path().join("s.json");
    spec.save(&spec_path).unwrap();

    let objects: Vec<ObjectInstance> =
        serde_json::from_str(&std::fs::read_to_string(fixture("three_objects.json")).unwrap())
            .unwrap();
    let truth = brute_force_map(&objects, &spec).unwrap();
    assert!(!truth.is_empty());
    let out = ok(&[
        "infer",
        "--spec",
        p(&spec_path),
        "--objects",
        &fixture("three_objects.json"),
    ]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let got: Vec<saog_core::Relation> = serde_json::from_value(v["relations"].clone()).unwrap();
    assert_eq!(got, truth);

    // The spec path can also come from the environment.
    let out = Command::new(env!("CARGO_BIN_EXE_saog"))
        .args([
            "infer",
            "--method",
            "gibbs",
            "--objects",
            &fixture("three_objects.json"),
        ])
        .env("SAOG_SPEC", &spec_path)
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let got: Vec<saog_core::Relation> = serde_json::from_value(v["relations"].clone()).unwrap();
    assert_eq!(got, truth);
}

#[test]
fn project_empty_scene_is_all_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let (simap, ppm) = (tmp.path().join("m.simap"), tmp.path().join("m.ppm"));
    ok(&[
        "project",
        "--graph",
        &fixture("empty_scene.json"),
        "--out",
        p(&simap),
        "--ppm",
        p(&ppm),
    ]);
    let map = InstanceMap::from_simap_bytes(&std::fs::read(&simap).unwrap()).unwrap();
    assert_eq!((map.width, map.height, map.channels()), (480, 320, 9));
    assert!(map.data.iter().all(|&v| v == 0.0));
    assert!(std::fs::read(&ppm).unwrap().starts_with(b"P6"));
}

#[test]
fn encode_decode_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let objects: Vec<ObjectInstance> =
        serde_json::from_str(&std::fs::read_to_string(fixture("three_objects.json")).unwrap())
            .unwrap();
    let g = ParseGraph::new(objects, vec![saog_core::Relation::new(0, 2, 0)]);
    let (json, bin, back) = (
        tmp.path().join("g.json"),
        tmp.path().join("g.spg"),
        tmp.path().join("b.json"),
    );
    g.save(&json).unwrap();
    ok(&["encode", "--graph", p(&json), "--out", p(&bin)]);
    assert_eq!(std::fs::read(&bin).unwrap().len(), 7 + 16 * 3 + 3);
    ok(&["decode", "--input", p(&bin), "--out", p(&back)]);
    let mut stored = g.clone();
    for o in &mut stored.objects {
        o.location = o.location.map(|c| c as f32 as f64);
    }
    assert_eq!(ParseGraph::load(&back).unwrap(), stored);
}

#[test]
fn ingest_then_learn() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    let spec_out = tmp.path().join("ingest_spec.json");
    ok(&[
        "ingest",
        "--scenes",
        &fixture("clevr_small.json"),
        "--out",
        p(&ds),
        "--use-directions",
        "--spec-out",
        p(&spec_out),
    ]);
    let data = SceneDataset::load(&ds).unwrap();
    assert_eq!(data.len(), 2);
    assert!(data.graphs.iter().all(|g| !g.relations.is_empty()));

    let fitted = tmp.path().join("fitted.json");
    let trace = tmp.path().join("trace.csv");
    ok(&[
        "learn",
        "--spec",
        p(&spec_out),
        "--data",
        p(&ds),
        "--out",
        p(&fitted),
        "--iterations",
        "5",
        "--samples",
        "4",
        "--steps-per-iter",
        "20",
        "--trace",
        p(&trace),
    ]);
    let spec = GrammarSpec::load(&fitted).unwrap();
    spec.validate().unwrap();
    // Two scenes with 2 and 3 objects.
    assert_eq!(
        spec.configs
            .iter()
            .map(|c| (c.objects, c.prob))
            .collect::<Vec<_>>(),
        [(2, 0.5), (3, 0.5)]
    );
    assert_eq!(std::fs::read_to_string(&trace).unwrap().lines().count(), 6);
}

#[test]
fn eval_subset_writes_report() {
    let tmp = tempfile::tempdir().unwrap();
    let report = tmp.path().join("r.json");
    let out = ok(&[
        "eval",
        "--only",
        "energy-suite,compression",
        "--report",
        p(&report),
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(
        text.lines().filter(|l| l.starts_with("PASS")).count(),
        2,
        "{text}"
    );
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["outcomes"].as_array().unwrap().len(), 2);

    let out = saog(&["eval", "--only", "no-such-criterion"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        &["frobnicate"][..],
        &["sample", "--bogus"],
        &["sample"],
        &[],
    ] {
        let out = saog(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(
            String::from_utf8_lossy(&out.stderr).contains("Usage"),
            "{args:?}"
        );
    }
}

#[test]
fn runtime_errors_exit_1_with_diagnostic() {
    let out = saog(&[
        "project",
        "--graph",
        "/nonexistent/g.json",
        "--out",
        "/tmp/x.simap",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.starts_with("error:") && err.contains("/nonexistent/g.json"),
        "{err}"
    );
}

#[cfg(unix)]
#[test]
fn serve_binds_from_env_and_snapshots_on_interrupt() {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpStream;
    use std::process::Stdio;

    let tmp = tempfile::tempdir().unwrap();
    let snaps = tmp.path().join("snaps");
    let mut child = Command::new(env!("CARGO_BIN_EXE_saog"))
        .arg("serve")
        .env("SAOG_BIND", "127.0.0.1:0")
        .env("SAOG_SNAPSHOT_DIR", &snaps)
        .env_remove("SAOG_SPEC")
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stderr = BufReader::new(child.stderr.take().unwrap());
    let mut line = String::new();
    stderr.read_line(&mut line).unwrap();
    let addr = line
        .trim()
        .strip_prefix("listening on http://")
        .unwrap_or_else(|| panic!("{line}"))
        .to_string();

    let request = |method: &str, path: &str, body: &str| {
        let mut s = TcpStream::connect(&addr).unwrap();
        write!(
            s,
            "{method} {path} HTTP/1.1\r\nHost: x\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        )
        .unwrap();
        let mut resp = String::new();
        s.read_to_string(&mut resp).unwrap();
        resp
    };
    let health = request("GET", "/health", "");
    assert!(health.starts_with("HTTP/1.1 200"), "{health}");
    assert!(health.contains(env!("CARGO_PKG_VERSION")));
    let created = request("POST", "/sessions", r#"{"seed": 3}"#);
    assert!(created.starts_with("HTTP/1.1 201"), "{created}");

    let status = Command::new("kill")
        .args(["-INT", &child.id().to_string()])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(child.wait().unwrap().success());
    let mut rest = String::new();
    stderr.read_to_string(&mut rest).unwrap();
    assert!(rest.contains("saved 1 sessions"), "{rest}");
    assert!(snaps.join("1.spg").exists());
}
