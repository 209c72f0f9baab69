use delayflow_web::{flow, layer, validate, DEFAULT_CONFIG};

#[test]
fn default_config_validates() {
    let v = validate(DEFAULT_CONFIG).unwrap();
    assert_eq!(v["passed"], true);
    assert_eq!(v["delta_t"].as_f64().unwrap(), 0.1 * 0.05);
    assert!(v["checks"].as_array().unwrap().iter().all(|c| c["passed"] == true));
}

#[test]
fn failing_hypothesis_is_reported_not_raised() {
    let v = validate(&DEFAULT_CONFIG.replace("beta = 1\nzeta", "beta = 0\nzeta")).unwrap();
    assert_eq!(v["passed"], false);
    assert!(validate("[model]\nbeta = (").is_err());
}

#[test]
fn flow_returns_frames_and_a_falling_energy() {
    let v = flow(DEFAULT_CONFIG).unwrap();
    let frames = v["frames"].as_array().unwrap();
    assert!(frames.len() >= 2 && frames.len() <= 61);
    assert_eq!(frames[0]["phase"].as_array().unwrap().len(), 17);
    let e: Vec<f64> = v["energy"].as_array().unwrap().iter().map(|r| r["E"].as_f64().unwrap()).collect();
    assert_eq!(e.len(), 61);
    assert!(e.last().unwrap() < &e[0]);
    assert!(v["max_lambda"].as_f64().unwrap() <= 1e-12);
}

#[test]
fn layer_reports_the_decay_fit() {
    let v = layer(DEFAULT_CONFIG).unwrap();
    assert_eq!(v["report"]["passed"], true);
    assert!(v["report"]["slope"].as_f64().unwrap() <= -0.9);
    let prepared = layer(&DEFAULT_CONFIG.replace("0.25*exp(-a)", "0.5*exp(-a)")).unwrap();
    assert_eq!(prepared["report"]["verdict"], "exact");
}
