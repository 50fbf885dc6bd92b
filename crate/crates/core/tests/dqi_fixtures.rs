//! Values frozen from tests/oracles/micro_corpus.py.

use std::collections::HashSet;

use dataqual::dqi::{component_scores, Component, DqiConfig};
use dataqual::synthetic::micro_corpus;
use dataqual::textstats::{jaccard, label_pmi, tokenize, Granularity};

const TOL: f64 = 1e-9;

fn score(c: Component, alpha: f64) -> f64 {
    let cfg = DqiConfig {
        pmi_alpha: alpha,
        ..DqiConfig::default()
    };
    component_scores(&micro_corpus(), None, &cfg).unwrap().get(c).unwrap()
}

#[test]
fn overlap_term() {
    assert!((score(Component::C3, 1.0) - 0.8736263736263737).abs() < TOL);
}

#[test]
fn field_overlap_term() {
    assert!((score(Component::C4, 1.0) - 0.6163114534036558).abs() < TOL);
}

#[test]
fn leakage_term() {
    assert!((score(Component::C6, 1.0) - 0.7366759373778163).abs() < TOL);
    assert!((score(Component::C6, 0.0) - 0.5503738046218973).abs() < TOL);
}

#[test]
fn pmi_of_negation() {
    let d = micro_corpus();
    let raw = label_pmi(&d, Granularity::Unigram, 0.0).unwrap();
    assert!((raw.pmi("not", "contradiction").unwrap() - 1.0).abs() < TOL);
    let smoothed = label_pmi(&d, Granularity::Unigram, 1.0).unwrap();
    assert!((smoothed.pmi("not", "contradiction").unwrap() - 0.5849625007211562).abs() < TOL);
}

#[test]
fn field_overlaps() {
    let d = micro_corpus();
    let got: Vec<f64> = d
        .samples()
        .iter()
        .map(|s| {
            let p: HashSet<String> = tokenize(&s.fields["premise"]).iter().cloned().collect();
            let h: HashSet<String> = tokenize(&s.fields["hypothesis"]).iter().cloned().collect();
            jaccard(&p, &h)
        })
        .collect();
    for (g, want) in got.iter().zip([0.125, 0.125, 1.0 / 3.0, 0.125]) {
        assert!((g - want).abs() < TOL, "{got:?}");
    }
}
