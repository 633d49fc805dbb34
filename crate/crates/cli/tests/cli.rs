//! End-to-end checks of the `wafer-dse` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_wafer-dse"));
    c.current_dir(root()).env_remove("WAFER_DSE_GNN_CMD").env_remove("RUST_LOG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("bad JSON ({e}): {}", String::from_utf8_lossy(&o.stdout)))
}

fn validate_against(schema: &str, v: &Value) {
    let s: Value = serde_json::from_str(&std::fs::read_to_string(root().join("schemas").join(schema)).unwrap()).unwrap();
    let v2 = jsonschema::validator_for(&s).expect("schema compiles");
    let errs: Vec<String> = v2.iter_errors(v).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errs.is_empty(), "{schema}: {errs:?}");
}

#[test]
fn valid_point_exits_zero() {
    let o = run(&["validate", "--point", "data/points/reference.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = json(&o);
    assert_eq!(v["passed"], true);
    assert_eq!(v["violations"].as_array().unwrap().len(), 0);
    assert_eq!(v["seed"], 42);
    validate_against("constraint_report.schema.json", &v);
}

#[test]
fn oversized_reticle_is_an_area_violation() {
    let o = run(&["validate", "--point", "data/points/reticle_860mm2.json"]);
    assert_eq!(code(&o), 1);
    let v = json(&o);
    let area = v["area"]["reticle_mm2"].as_f64().unwrap();
    assert!((860.0..861.0).contains(&area), "{area}");
    let kinds: Vec<&str> = v["violations"].as_array().unwrap().iter().map(|x| x["constraint"].as_str().unwrap()).collect();
    assert!(kinds.contains(&"Area"), "{kinds:?}");
}

#[test]
fn missing_db_row_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let db = std::fs::read_to_string(root().join("data/component_db.csv")).unwrap();
    let trimmed: String = db.lines().filter(|l| !l.starts_with("mac,WS/512,")).map(|l| format!("{l}\n")).collect();
    let path = dir.path().join("db.csv");
    std::fs::write(&path, trimmed).unwrap();
    let o = run(&["validate", "--point", "data/points/reference.json", "--component-db", path.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("component database has no entry"), "{}", stderr(&o));
}

#[test]
fn malformed_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, "{\"core\": 1}").unwrap();
    assert_eq!(code(&run(&["validate", "--point", p.to_str().unwrap()])), 2);
    assert_eq!(code(&run(&["validate", "--point", "no/such/file.json"])), 2);
    assert_eq!(code(&run(&["casestudy", "NoSuchStudy"])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
    let o = run(&["eval", "--point", "data/points/reference.json", "--benchmark", "desk-gpt-1.7b", "--fidelity", "psychic"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn unmappable_workload_exits_three() {
    let o = run(&["eval", "--point", "data/points/single_reticle_no_dram.json", "--benchmark", "desk-gpt-175b"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("cannot be mapped"), "{}", stderr(&o));
}

#[test]
fn cycle_eval_is_byte_identical() {
    let args = ["eval", "--point", "data/points/reference.json", "--benchmark", "desk-gpt-1.7b", "--fidelity", "cycle", "--seed", "9"];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let v = json(&a);
    assert_eq!(v["seed"], 9);
    assert_eq!(v["fidelity"], "CycleSim");
    validate_against("eval_report.schema.json", &v);
}

#[test]
fn gnn_without_predictor_falls_back() {
    let base = ["eval", "--point", "data/points/reference.json", "--benchmark", "desk-gpt-1.7b"];
    let gnn = run(&[&base[..], &["--fidelity", "gnn"]].concat());
    assert_eq!(code(&gnn), 0, "{}", stderr(&gnn));
    assert!(stderr(&gnn).contains("falling back to analytical"), "{}", stderr(&gnn));
    let analytical = run(&base);
    assert_eq!(json(&gnn), json(&analytical));
}

#[test]
fn link_dump_has_header() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("links.csv");
    let o = run(&[
        "eval",
        "--point",
        "data/points/reference.json",
        "--benchmark",
        "desk-gpt-1.7b",
        "--dump-links",
        p.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(p).unwrap();
    assert!(text.starts_with("wafer,x,y,dir,bytes\n"));
    assert!(text.lines().count() > 1);
}

fn explore(dir: &Path, algorithm: &str, extra: &[&str]) -> Output {
    let mut args = vec!["explore", "--spec", "configs/explore_smoke.toml", "--out", dir.to_str().unwrap(), "--algorithm", algorithm];
    args.extend_from_slice(extra);
    run(&args)
}

fn records(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn three_algorithms_keep_their_ledgers() {
    let dir = tempfile::tempdir().unwrap();
    // d0 = 2, d1 = 3, N0 = 4, N1 = 6 in the smoke spec.
    for (algo, low, high) in [("mfmobo", 6, 4), ("mobo", 0, 4), ("random", 0, 4)] {
        let o = explore(dir.path(), algo, &[]);
        assert_eq!(code(&o), 0, "{algo}: {}", stderr(&o));
        let out = dir.path().join("desk-gpt-1.7b").join(algo);
        let recs = records(&out.join("archive.jsonl"));
        let count = |f: &str| recs.iter().filter(|r| r["fidelity"] == f).count();
        assert_eq!((count("low"), count("high")), (low, high), "{algo}");
        for r in &recs {
            validate_against("archive_record.schema.json", r);
        }
        let meta: Value = serde_json::from_str(&std::fs::read_to_string(out.join("meta.json")).unwrap()).unwrap();
        validate_against("explore_meta.schema.json", &meta);
        assert_eq!(meta["seed"], 7);
        assert_eq!(meta["calls"]["low"], low);
        let hv = std::fs::read_to_string(out.join("hypervolume.csv")).unwrap();
        assert!(hv.starts_with("index,iteration,fidelity,hypervolume\n"));
        assert_eq!(hv.lines().count(), low + high + 1);
        assert!(std::fs::read_to_string(out.join("pareto.csv")).unwrap().starts_with("index,throughput,power,x\n"));
    }
}

#[test]
fn interrupted_exploration_resumes_to_the_same_archive() {
    let full = tempfile::tempdir().unwrap();
    assert_eq!(code(&explore(full.path(), "mfmobo", &[])), 0);
    let archive = |d: &Path| d.join("desk-gpt-1.7b/mfmobo/archive.jsonl");
    let expected = std::fs::read_to_string(archive(full.path())).unwrap();

    // A run killed after six records, mid-way through writing the seventh.
    let cut = tempfile::tempdir().unwrap();
    assert_eq!(code(&explore(cut.path(), "mfmobo", &[])), 0);
    let lines: Vec<&str> = expected.lines().collect();
    let torn = format!("{}\n{}", lines[..6].join("\n"), &lines[6][..lines[6].len() / 2]);
    std::fs::write(archive(cut.path()), torn).unwrap();
    let o = explore(cut.path(), "mfmobo", &["--resume"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(archive(cut.path())).unwrap(), expected);

    // A mismatching archive is refused rather than silently mixed in.
    let other = tempfile::tempdir().unwrap();
    let mut bad: Value = serde_json::from_str(lines[0]).unwrap();
    bad["x"][0] = Value::from(-1.0);
    std::fs::create_dir_all(archive(other.path()).parent().unwrap()).unwrap();
    std::fs::write(archive(other.path()), format!("{bad}\n")).unwrap();
    assert_eq!(code(&explore(other.path(), "mfmobo", &["--resume"])), 2);
}

#[test]
fn sim_conserves_flits_on_shipped_trace() {
    let o = run(&["sim", "--trace", "data/traces/line_1x6.trace", "--summary"]);
    assert_eq!(code(&o), 0);
    let v = json(&o);
    // 4096 bytes in 32-byte flits over 5 hops, router latency 2.
    assert_eq!(v["flits_injected"], 128);
    assert_eq!(v["flits_ejected"], 128);
    assert_eq!(v["flit_hops"], 640);
    assert_eq!(v["total_cycles"], 5 * 2 + 127);
}

#[test]
fn dataset_archive_matches_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ds");
    let o = run(&["gen-dataset", "--n", "3", "--seed", "5", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    validate_against("dataset_manifest.schema.json", &manifest);
    assert_eq!(manifest["seed"], 5);
    for i in 0..3 {
        let g: Value = serde_json::from_str(&std::fs::read_to_string(out.join(format!("graphs/g{i:05}.json"))).unwrap()).unwrap();
        validate_against("topology_graph.schema.json", &g);
    }
    let targets = std::fs::read_to_string(out.join("targets.csv")).unwrap();
    assert!(targets.starts_with("sample,edge,link,wait\n"));
}

#[test]
fn shipped_files_match_their_generators() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(code(&run(&["report", "defaults", "--out", out])), 0);
    assert_eq!(code(&run(&["report", "suite", "--out", out])), 0);
    for f in [
        "component_db.csv",
        "grids/desk.toml",
        "grids/full.toml",
        "yield.toml",
        "suite/desk_suite.json",
        "traces/hotspot_8x8.trace",
        "traces/line_1x6.trace",
        "traces/case00.trace",
    ] {
        let a = std::fs::read(dir.path().join(f)).unwrap();
        let b = std::fs::read(root().join("data").join(f)).unwrap();
        assert!(a == b, "data/{f} is stale; rerun `wafer-dse report defaults|suite`");
    }
    for p in ["reference.json", "reticle_860mm2.json", "single_reticle_no_dram.json"] {
        let v: Value = serde_json::from_str(&std::fs::read_to_string(root().join("data/points").join(p)).unwrap()).unwrap();
        validate_against("design_point.schema.json", &v);
    }
}

#[test]
fn integration_sweep_favours_known_good_die() {
    let o = run(&["casestudy", "IntegrationStyle", "--samples", "12"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut rows = text.lines();
    assert_eq!(rows.next(), Some("sample,spare_cols,yield_die_stitching,yield_info_sow,tokens_per_s_die_stitching,tokens_per_s_info_sow"));
    let mut n = 0;
    for r in rows {
        let f: Vec<f64> = r.split(',').map(|x| x.parse().unwrap()).collect();
        assert!(f[3] >= f[2], "{r}");
        assert!(f[5] >= f[4], "{r}");
        n += 1;
    }
    assert_eq!(n, 12);
}

#[test]
fn core_sweep_has_one_row_per_grid_value() {
    let o = run(&["casestudy", "core", "--samples", "2", "--seed", "1"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let macs: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(macs, ["64", "128", "256", "512", "1024"]);
}

#[test]
fn heterogeneity_sweep_covers_every_level() {
    let o = run(&["casestudy", "Heterogeneity", "--samples", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let levels: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    for g in ["None", "CoreLevel", "ReticleLevel", "WaferLevel"] {
        assert!(levels.contains(&g), "{levels:?}");
    }
    assert_eq!(levels.len(), 1 + 3 * 3);
}

#[test]
fn schemas_reject_incomplete_reports() {
    let o = run(&["validate", "--point", "data/points/reference.json"]);
    let mut v = json(&o);
    v.as_object_mut().unwrap().remove("passed");
    let s: Value = serde_json::from_str(&std::fs::read_to_string(root().join("schemas/constraint_report.schema.json")).unwrap()).unwrap();
    assert!(!jsonschema::validator_for(&s).unwrap().is_valid(&v));
}
