use haar_ruelle::runner::{
    cmd_eigen, cmd_histogram, cmd_verify, exit_code_for_error, ExperimentConfig, EXIT_CONFIG, EXIT_NON_CONVERGENCE,
};
use haar_ruelle::{Error, OperatorFlavor, RatioMethod};

fn base() -> serde_json::Value {
    serde_json::json!({
        "d": 2,
        "free_set": [3],
        "potential": {"builtin": "quarter_square_first_coord"},
        "beta_list": [1.0],
        "cylinder_depth": 4
    })
}

fn with(patch: serde_json::Value) -> Result<ExperimentConfig, Error> {
    let mut v = base();
    for (k, x) in patch.as_object().unwrap() {
        v[k] = x.clone();
    }
    ExperimentConfig::from_json(&v.to_string())
}

#[test]
fn defaults_are_filled_in() {
    let cfg = ExperimentConfig::from_json(&base().to_string()).unwrap();
    assert_eq!(cfg.flavor, OperatorFlavor::HutchinsonBarnsley);
    assert_eq!(cfg.iteration_steps, 9);
    assert_eq!(cfg.base_point, "|1");
    assert_eq!(cfg.ratio_method, RatioMethod::Memoized);
    assert_eq!(cfg.tolerances.eigen, 1e-13);
    assert_eq!(cfg.tolerances.verification, 1e-9);
    let exp = cfg.validate().unwrap();
    assert_eq!(exp.base_point.tail(), 1);
    assert!(exp.base_point.prefix().is_empty());
}

#[test]
fn invalid_configs_are_rejected_before_computing() {
    let bad = [
        serde_json::json!({"d": 1}),
        serde_json::json!({"d": 300}),
        serde_json::json!({"cylinder_depth": 0}),
        serde_json::json!({"cylinder_depth": 2}),
        serde_json::json!({"cylinder_depth": 13}),
        serde_json::json!({"beta_list": []}),
        serde_json::json!({"free_set": [0]}),
        serde_json::json!({"iteration_steps": 0}),
        serde_json::json!({"base_point": "1,3|1"}),
        serde_json::json!({"potential": {"builtin": "cubic"}}),
        serde_json::json!({"potential": {"depth": 1, "table": {"1": 0.0}}}),
        serde_json::json!({"potential": {"depth": 6, "table": {}}}),
        serde_json::json!({"point_mass": "1,1,1,1,1,1"}),
        serde_json::json!({"tolerances": {"verification": -1.0}}),
    ];
    for patch in bad {
        let result = with(patch.clone()).and_then(|c| c.validate().map(|_| ()));
        let err = result.expect_err(&patch.to_string());
        assert_eq!(exit_code_for_error(&err), EXIT_CONFIG, "{patch}: {err}");
    }
    assert!(ExperimentConfig::from_json("{\"d\": 2").is_err());
}

#[test]
fn non_convergence_maps_to_its_exit_code() {
    let cfg = with(serde_json::json!({"free_set": [1], "tolerances": {"max_iter": 1}})).unwrap();
    let exp = cfg.validate().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let err = cmd_eigen(&exp, dir.path()).unwrap_err();
    assert_eq!(exit_code_for_error(&err), EXIT_NON_CONVERGENCE);
}

#[test]
fn histogram_needs_a_ruelle_flavor() {
    let exp = with(serde_json::json!({"flavor": "haar"})).unwrap().validate().unwrap();
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(exit_code_for_error(&cmd_histogram(&exp, dir.path()).unwrap_err()), EXIT_CONFIG);
}

#[test]
fn commands_report_what_they_check() {
    let exp = with(serde_json::json!({"beta_list": [0.0, 2.0]})).unwrap().validate().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (o, records) = cmd_eigen(&exp, dir.path()).unwrap();
    assert!(o.passed);
    assert_eq!(records.len(), 2);
    assert!((records[0].rho - 4.0).abs() < 1e-12);

    let (o, summary) = cmd_histogram(&exp, dir.path()).unwrap();
    assert!(o.passed);
    assert!(summary.iter().all(|r| r.max_abs_diff < 1e-12));

    let (o, report) = cmd_verify(&exp, dir.path()).unwrap();
    assert!(o.passed);
    // at β = 0 both flavors give the uniform measure
    assert!(report.betas[0].flavor_l1_distance.unwrap() < 1e-12);
    assert!(report.betas[1].checks.iter().all(|c| c.tests_run == 256));

    let exp = with(serde_json::json!({"point_mass": "2,2"})).unwrap().validate().unwrap();
    let (o, report) = cmd_verify(&exp, dir.path()).unwrap();
    assert!(!o.passed);
    assert_eq!(report.betas[0].checks[0].measure, "point_mass 2,2");
    assert!(report.betas[0].checks[0].quasi_invariance > 1e-3);
}
