use super::*;

fn disk_pwb(extra: &str) -> String {
    format!(
        r#"{{"name": "disk_cos", "domain": {{"type": "ball", "center": [0, 0], "radius": 1}},
            "boundary": {{"psi": "cos(theta)"}}, "task": "solve-pwb", "probes": [[0.5, 0]],
            "n_paths": 4000{extra}}}"#
    )
}

fn validation_path(e: ScenarioError) -> String {
    match e {
        ScenarioError::Validation { path, .. } => path,
        other => panic!("expected a validation error, got {other}"),
    }
}

#[test]
fn defaults_round_trip_through_the_echo() {
    let sc = Scenario::parse(&disk_pwb(""), &[]).unwrap();
    assert_eq!(sc.sim, SimConfig::default());
    assert_eq!(sc.fem.h, 0.05);
    assert_eq!(sc.params.bins, 36);
    let back = Scenario::from_value(sc.echo()).unwrap();
    assert_eq!(back, sc);
}

#[test]
fn probe_outside_names_its_index() {
    let text = disk_pwb("").replace("[[0.5, 0]]", "[[1.5, 0]]");
    let e = Scenario::parse(&text, &[]).unwrap().resolve().unwrap_err();
    assert_eq!(e.exit_code(), 2);
    assert_eq!(validation_path(e), "probes[0]");
}

#[test]
fn schema_errors_carry_paths() {
    let e = Scenario::parse(&disk_pwb(r#", "sim": {"seed": "x"}"#), &[]).unwrap_err();
    assert_eq!(validation_path(e), "sim.seed");
    let e = Scenario::parse(&disk_pwb(r#", "bogus": 1"#), &[]).unwrap_err();
    assert!(e.to_string().contains("bogus"), "{e}");
    let e = Scenario::parse(&disk_pwb("").replace("solve-pwb", "solve-everything"), &[]).unwrap_err();
    assert_eq!(validation_path(e), "task");
    let e = Scenario::parse(&disk_pwb("").replace("cos(theta)", "cos(theta"), &[]).unwrap().resolve().unwrap_err();
    assert_eq!(validation_path(e), "boundary.psi");
}

#[test]
fn overrides_edit_nested_keys() {
    let o = vec![("sim.seed".to_string(), "7".to_string()), ("probes.0.0".to_string(), "0.25".to_string())];
    let sc = Scenario::parse(&disk_pwb(""), &o).unwrap();
    assert_eq!(sc.sim.seed, 7);
    assert_eq!(sc.probes[0], vec![0.25, 0.0]);
    let o = vec![("name".to_string(), "renamed".to_string())];
    assert_eq!(Scenario::parse(&disk_pwb(""), &o).unwrap().name, "renamed");
    let mut v = json!({"a": [1]});
    assert!(apply_override(&mut v, "a.3", "1").is_err());
}

#[test]
fn pwb_run_matches_poisson_value_and_is_deterministic() {
    let sc = Scenario::parse(&disk_pwb(""), &[]).unwrap();
    let out = run(&sc, "test").unwrap();
    let est: Estimate = serde_json::from_value(out.summary["results"]["probes"][0]["estimate"].clone()).unwrap();
    assert!((est.value - 0.5).abs() <= 4.0 * est.std_error, "{est:?}");
    assert_eq!(out.summary_text(), run(&sc, "test").unwrap().summary_text());
    assert_eq!(out.artifacts[0].suffix, "pwb");

    let echoed = Scenario::from_value(out.summary["config"].clone()).unwrap();
    assert_eq!(run(&echoed, "test").unwrap().summary, out.summary);

    let other = Scenario::parse(&disk_pwb(""), &[("sim.seed".into(), "7".into())]).unwrap();
    let e2: Estimate = serde_json::from_value(run(&other, "test").unwrap().summary["results"]["probes"][0]["estimate"].clone()).unwrap();
    assert_ne!(e2.value, est.value);
    assert!((e2.value - est.value).abs() <= 3.0 * (est.std_error.powi(2) + e2.std_error.powi(2)).sqrt());
}

#[test]
fn psi_shorthand_conflicts_with_boundary_block() {
    let e = Scenario::parse(&disk_pwb(r#", "psi": "1""#), &[]).unwrap().resolve().unwrap_err();
    assert_eq!(validation_path(e), "psi");
    let text = disk_pwb(r#", "psi": "1""#).replace(r#""boundary": {"psi": "cos(theta)"},"#, "");
    let r = Scenario::parse(&text, &[]).unwrap().resolve().unwrap();
    assert_eq!(r.boundary.eval(&BoundaryPoint::plain(Point::new(1.0, 0.0, 0.0))), 1.0);
}

#[test]
fn side_and_puncture_overrides() {
    let slit = r#"{"name": "s", "domain": {"type": "slit_ball", "radius": 1, "slit": [[-0.5, 0], [0.5, 0]]},
        "boundary": {"psi": "x", "sides": {"above": "1", "below": "-1"}}, "task": "trace"}"#;
    let r = Scenario::parse(slit, &[]).unwrap().resolve().unwrap();
    let at = |side| BoundaryPoint { position: Point::new(0.1, 0.0, 0.0), side };
    assert_eq!(r.boundary.eval(&at(Some(Side::Above))), 1.0);
    assert_eq!(r.boundary.eval(&at(Some(Side::Below))), -1.0);
    assert_eq!(r.boundary.eval(&at(Some(Side::Tip))), 0.1);

    let punct = r#"{"name": "p", "domain": {"type": "punctured_ball", "radius": 1, "removed": [0, 0]},
        "boundary": {"psi": "x", "punctures": [5]}, "task": "solve-pwb", "probes": [[0.5, 0]]}"#;
    let r = Scenario::parse(punct, &[]).unwrap().resolve().unwrap();
    assert_eq!(r.boundary.eval(&BoundaryPoint::plain(Point::zeros())), 5.0);
    let bad = punct.replace("[5]", "[5, 6]");
    let e = Scenario::parse(&bad, &[]).unwrap().resolve().unwrap_err();
    assert_eq!(validation_path(e), "boundary.punctures");
}

#[test]
fn task_requirements_are_checked() {
    let sl = r#"{"name": "s", "domain": {"type": "ball", "center": [0, 0], "radius": 1}, "task": "solve-semilinear"}"#;
    assert_eq!(validation_path(Scenario::parse(sl, &[]).unwrap().resolve().unwrap_err()), "f");
    let h = r#"{"name": "h", "domain": {"type": "ball", "center": [0, 0], "radius": 1}, "task": "check-harnack", "probes": [[0, 0]]}"#;
    assert_eq!(validation_path(Scenario::parse(h, &[]).unwrap().resolve().unwrap_err()), "params.center");
    let reg = r#"{"name": "r", "domain": {"type": "ball", "center": [0, 0], "radius": 1}, "task": "test-regularity", "probes": [[0.5, 0]]}"#;
    assert_eq!(validation_path(Scenario::parse(reg, &[]).unwrap().resolve().unwrap_err()), "probes[0]");
    let atom = r#"{"name": "a", "domain": {"type": "ball", "center": [0, 0], "radius": 1}, "task": "solve-semilinear",
        "f": "-u", "mu": {"atoms": [[[2, 0], 1.0]]}}"#;
    assert_eq!(validation_path(Scenario::parse(atom, &[]).unwrap().resolve().unwrap_err()), "mu.atoms[0]");
}

#[test]
fn sidecar_checks() {
    let summary = json!({"results": {"v": 0.51, "verdict": "regular", "flag": true}});
    let side: Sidecar = serde_json::from_value(json!({"checks": [
        {"pointer": "/results/v", "value": 0.5, "tolerance": 0.02, "provenance": "closed-form"},
        {"pointer": "/results/v", "max": 0.5, "provenance": "bound"},
        {"pointer": "/results/verdict", "equals": "regular", "provenance": "oracle"},
        {"pointer": "/results/flag", "equals": true, "provenance": "invariant"},
        {"pointer": "/results/nothing", "min": 0, "provenance": "invariant"}
    ]}))
    .unwrap();
    let got: Vec<bool> = side.evaluate(&summary).iter().map(|o| o.passed).collect();
    assert_eq!(got, vec![true, false, true, true, false]);
}

#[test]
fn task_names_round_trip() {
    for t in Task::ALL {
        assert_eq!(Task::from_name(t.name()), Some(t));
        assert_eq!(serde_json::to_value(t).unwrap(), json!(t.name()));
    }
}
