//! Welch's t-test and Cohen's d against values produced by an independent
//! statistics package (see `fixtures/welch_reference.json`).

use lfi::stats::{cohens_d, welch_t};
use serde::Deserialize;

#[derive(Deserialize)]
struct Case {
    a: Vec<f64>,
    b: Vec<f64>,
    t: f64,
    p: f64,
    d: f64,
}

#[derive(Deserialize)]
struct Fixture {
    cases: Vec<Case>,
}

pub fn reference_cases() -> Vec<(Vec<f64>, Vec<f64>, f64, f64, f64)> {
    let text = include_str!("fixtures/welch_reference.json");
    let f: Fixture = serde_json::from_str(text).unwrap();
    f.cases.into_iter().map(|c| (c.a, c.b, c.t, c.p, c.d)).collect()
}

#[test]
fn matches_reference_within_1e6() {
    let cases = reference_cases();
    assert_eq!(cases.len(), 20);
    for (k, (a, b, t, p, d)) in cases.iter().enumerate() {
        let r = welch_t(a, b).unwrap();
        assert!((r.t - t).abs() < 1e-6, "case {k}: t {} vs {t}", r.t);
        assert!((r.p - p).abs() < 1e-6, "case {k}: p {} vs {p}", r.p);
        let got = cohens_d(a, b).unwrap();
        assert!((got - d).abs() < 1e-6, "case {k}: d {got} vs {d}");
    }
}
