use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const DISK_COS: &str = r#"{
  "name": "disk_cos",
  "domain": {"type": "ball", "center": [0, 0], "radius": 1},
  "boundary": {"psi": "cos(theta)"},
  "task": "solve-pwb",
  "probes": [[0.5, 0]],
  "n_paths": 4000
}"#;

const DISK_COS_SIDECAR: &str = r#"{"checks": [
  {"pointer": "/results/probes/0/estimate/value", "value": 0.5, "tolerance": 0.05, "provenance": "Poisson integral of cos(theta)"}
]}"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dirichlet-lab"))
}

fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn dirichlet-lab")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_scenario(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(format!("{name}.json"));
    fs::write(&p, text).unwrap();
    p
}

fn summary(prefix: &Path) -> Value {
    let text = fs::read_to_string(prefix.with_extension("summary.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn run_writes_summary_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path(), "disk_cos", DISK_COS);
    let prefix = dir.path().join("out");
    let o = run(&["run", sc.to_str().unwrap(), "-o", prefix.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = summary(&prefix);
    assert_eq!(s["task"], "solve-pwb");
    assert_eq!(s["name"], "disk_cos");
    let est = &s["results"]["probes"][0]["estimate"];
    let (v, se) = (est["value"].as_f64().unwrap(), est["std_error"].as_f64().unwrap());
    assert!((v - 0.5).abs() <= 4.0 * se, "{v} ± {se}");
    assert!(prefix.with_extension("pwb.csv").exists());
    assert!(s["version"].as_str().unwrap().starts_with(env!("CARGO_PKG_VERSION")));
}

#[test]
fn probe_outside_the_domain_exits_2_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path(), "bad", &DISK_COS.replace("[[0.5, 0]]", "[[1.5, 0]]"));
    let o = run(&["run", sc.to_str().unwrap(), "-o", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("probes[0]"), "{}", stderr(&o));
    let o = run(&["validate", sc.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_json_and_unknown_keys_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path(), "typo", &DISK_COS.replace("\"n_paths\"", "\"n_pathz\""));
    let o = run(&["validate", sc.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("n_pathz"), "{}", stderr(&o));
    let o = run(&["validate", sc.to_str().unwrap(), "--set", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn set_overrides_reach_the_summary() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path(), "disk_cos", DISK_COS);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run(&["run", sc.to_str().unwrap(), "-o", a.to_str().unwrap()]).status.success());
    let o = run(&["run", sc.to_str().unwrap(), "--set", "sim.seed=7", "-o", b.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (sa, sb) = (summary(&a), summary(&b));
    assert_eq!(sb["seed"], 7);
    assert_eq!(sb["config"]["sim"]["seed"], 7);
    assert_ne!(sa["results"], sb["results"]);
}

#[test]
fn task_subcommands_override_the_scenario_task() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path(), "disk_cos", DISK_COS);
    let prefix = dir.path().join("h");
    let o = run(&["estimate", "hmeasure", sc.to_str().unwrap(), "-o", prefix.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(summary(&prefix)["task"], "estimate-hmeasure");
    assert!(prefix.with_extension("hmeasure.csv").exists());
}

#[test]
fn validate_and_list_shapes() {
    let o = run(&["validate", corpus_dir().join("martin_slit.json").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("martin-distance"));
    let o = run(&["list-shapes"]);
    assert!(o.status.success());
    for kind in ["ball", "box", "polygon", "slit_ball", "punctured_ball", "csg", "offset"] {
        assert!(stdout(&o).lines().any(|l| l.starts_with(kind)), "{kind} missing");
    }
}

#[test]
fn exhausted_step_budget_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let text = DISK_COS.replace("\"n_paths\": 4000", "\"n_paths\": 50, \"sim\": {\"scheme\": \"em\", \"dt\": 1e-6, \"max_steps\": 1000}");
    let sc = write_scenario(dir.path(), "slow", &text);
    let o = run(&["run", sc.to_str().unwrap(), "-o", dir.path().join("s").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn corpus_passes_and_requires_sidecars() {
    let dir = tempfile::tempdir().unwrap();
    let c = dir.path().join("c");
    fs::create_dir(&c).unwrap();
    write_scenario(&c, "disk_cos", DISK_COS);
    fs::write(c.join("disk_cos.expected.json"), DISK_COS_SIDECAR).unwrap();
    let out = dir.path().join("out");
    let o = run(&["corpus", c.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("PASS"));
    assert!(out.join("disk_cos.summary.json").exists());

    fs::write(c.join("disk_cos.expected.json"), DISK_COS_SIDECAR.replace("\"value\": 0.5", "\"value\": 0.7")).unwrap();
    let o = run(&["corpus", c.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL"));

    fs::remove_file(c.join("disk_cos.expected.json")).unwrap();
    let o = run(&["corpus", c.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing sidecar"), "{}", stderr(&o));
}

#[test]
fn summaries_do_not_depend_on_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let sc = corpus_dir().join("semilinear_bessel.json");
    let mut texts = Vec::new();
    for jobs in ["1", "3"] {
        let prefix = dir.path().join(format!("j{jobs}"));
        let o = run(&["--jobs", jobs, "run", sc.to_str().unwrap(), "-o", prefix.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        texts.push(fs::read(prefix.with_extension("summary.json")).unwrap());
    }
    assert_eq!(texts[0], texts[1]);

    let mut texts = Vec::new();
    let c = dir.path().join("c");
    fs::create_dir(&c).unwrap();
    write_scenario(&c, "disk_cos", DISK_COS);
    fs::write(c.join("disk_cos.expected.json"), DISK_COS_SIDECAR).unwrap();
    for jobs in ["1", "4"] {
        let out = dir.path().join(format!("out{jobs}"));
        let o = run(&["--jobs", jobs, "corpus", c.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(o.status.success());
        texts.push(fs::read(out.join("disk_cos.summary.json")).unwrap());
    }
    assert_eq!(texts[0], texts[1]);
}

fn schemas() -> BTreeMap<&'static str, &'static str> {
    let field = "vertex_id,x,y,value,boundary_flag,side";
    BTreeMap::from([
        ("apriori", "k,u_l1,breve_sq,bound,holds,combined_holds,slack"),
        ("compare", "probe,x,y,z,fem,fem_fine,mc,std_error,bound,pass"),
        ("delta", "probe,x,y,z,value,std_error,n_samples,fem,oracle"),
        ("field", field),
        ("good", "psi,truncation,mass,atom_value"),
        ("harmonic", field),
        ("harnack", "i,j,ratio"),
        ("hmeasure", "cell,lo,hi,count,mass,std_error"),
        ("martin", "pair,x1,y1,x2,y2,distance"),
        ("norms", "p,d_norm,d_norm_se,s_norm,s_norm_se,boundary_norm,boundary_norm_se,doob_ratio"),
        ("potential", field),
        ("pwb", "probe,x,y,z,value,std_error,n_samples,exact"),
        ("regularity", "probe,x,y,z,verdict,t0,dt,survival,std_error,ci_lo,ci_hi"),
        ("soft", "probe,stage,offset,value,std_error,target,target_std_error,doob_ratio"),
        ("trace", "cell,side,samples,converged,mean,spread"),
        ("trace_samples", "x,y,z,side,limit,converged"),
    ])
}

/// Columns that hold labels rather than numbers.
const TEXT_COLUMNS: [&str; 8] = ["cell", "side", "verdict", "holds", "combined_holds", "pass", "converged", "boundary_flag"];

#[test]
fn every_emitted_csv_matches_its_schema() {
    let dir = tempfile::tempdir().unwrap();
    let c = dir.path().join("c");
    fs::create_dir(&c).unwrap();
    for entry in fs::read_dir(corpus_dir()).unwrap() {
        let p = entry.unwrap().path();
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        // The anisotropic EM comparisons are covered by the acceptance suite.
        if !name.contains("_aniso") {
            fs::copy(&p, c.join(&name)).unwrap();
        }
    }
    let out = dir.path().join("out");
    let o = run(&["corpus", c.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stdout(&o));

    let schemas = schemas();
    let mut seen = std::collections::BTreeSet::new();
    for entry in fs::read_dir(&out).unwrap() {
        let p = entry.unwrap().path();
        let fname = p.file_name().unwrap().to_string_lossy().into_owned();
        if let Some(stem) = fname.strip_suffix(".mesh.off") {
            check_off(&p, &out.join(format!("{stem}.field.csv")));
            seen.insert("mesh.off".to_string());
            continue;
        }
        let Some(stem) = fname.strip_suffix(".csv") else { continue };
        let suffix = stem.split_once('.').map(|(_, s)| s).unwrap();
        let header = *schemas.get(suffix).unwrap_or_else(|| panic!("undocumented CSV suffix {suffix}"));
        seen.insert(suffix.to_string());
        let text = fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(header), "{fname}");
        let cols: Vec<&str> = header.split(',').collect();
        for (i, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            assert_eq!(cells.len(), cols.len(), "{fname} row {i}: {line}");
            for (col, cell) in cols.iter().zip(&cells) {
                if !TEXT_COLUMNS.contains(col) && !cell.is_empty() {
                    assert!(cell.parse::<f64>().is_ok(), "{fname} row {i} column {col}: `{cell}`");
                }
            }
        }
    }
    for suffix in schemas.keys().chain(&["mesh.off"]) {
        assert!(seen.contains(*suffix), "no corpus scenario emits {suffix}");
    }
}

/// OFF header, counts, planar vertices and in-range triangles; the vertex
/// count must match the field CSV when one was written.
fn check_off(off: &Path, field: &Path) {
    let text = fs::read_to_string(off).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("OFF"));
    let counts: Vec<usize> = lines.next().unwrap().split_whitespace().map(|c| c.parse().unwrap()).collect();
    let (nv, nt) = (counts[0], counts[1]);
    for _ in 0..nv {
        let v: Vec<f64> = lines.next().unwrap().split_whitespace().map(|c| c.parse().unwrap()).collect();
        assert_eq!(v.len(), 3);
    }
    for _ in 0..nt {
        let t: Vec<usize> = lines.next().unwrap().split_whitespace().map(|c| c.parse().unwrap()).collect();
        assert_eq!(t[0], 3);
        assert!(t[1..].iter().all(|&i| i < nv));
    }
    assert_eq!(lines.next(), None);
    if field.exists() {
        assert_eq!(fs::read_to_string(field).unwrap().lines().count() - 1, nv, "{}", field.display());
    }
}
