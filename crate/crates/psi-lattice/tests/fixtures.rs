//! Keeps the shipped fixture files in lockstep with the library builders.
//!
//! The files under `fixtures/` are canonical serializations of corpus
//! objects; these tests fail if either side drifts.  Regenerate with
//! `PSI_LATTICE_UPDATE=1 cargo test -p psi-lattice --test fixtures`.

use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;

use psi_lattice::corpus::{example_a, example_b, example_c, example_d};
use psi_lattice::dual::{derive_module, DeriveOptions};
use psi_lattice::report::{
    module_from_json, module_to_json, presentation_from_json, presentation_to_json, render_json,
    trivial_fixture_json,
};
use psi_lattice::Error;
use serde_json::Value;

fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// A module file whose unit matrix has one low-order coefficient flipped,
/// so shapes parse but the commutation check must fail.
fn broken_commutation() -> Value {
    let pres = example_a(3, &[1], &[0], &BTreeSet::new()).unwrap();
    let opts = DeriveOptions {
        target_prec: 24,
        gamma_prec: 16,
        gamma_seed: 6,
        level_cap: 12,
    };
    let mut md = derive_module(&pres, &opts).unwrap().module;
    let gamma = md.gamma[0].as_mut().expect("the derived module has a unit action");
    let entry = gamma.mat.at_mut(0, 0);
    let old = entry.terms.get(&vec![1i64]).copied().unwrap_or(0);
    let new = if old == 1 { 2 } else { 1 };
    entry.terms.insert(vec![1], new);
    module_to_json(&md)
}

fn canonical_fixtures() -> Vec<(&'static str, Value)> {
    vec![
        (
            "a.json",
            presentation_to_json(&example_a(3, &[1], &[0], &BTreeSet::new()).unwrap()),
        ),
        (
            "b.json",
            presentation_to_json(&example_b(3, 1, 0).unwrap().total),
        ),
        (
            "c.json",
            presentation_to_json(&example_c(3, 0, 0).unwrap().total),
        ),
        (
            "d.json",
            presentation_to_json(&example_d(3, 1, 0).unwrap().total),
        ),
        (
            "trivial_rank1_Qp.json",
            trivial_fixture_json(3, true).unwrap(),
        ),
        ("broken_commutation.json", broken_commutation()),
    ]
}

#[test]
fn fixture_files_match_the_builders() {
    let dir = fixtures_dir();
    let update = std::env::var("PSI_LATTICE_UPDATE").is_ok();
    if update {
        fs::create_dir_all(&dir).unwrap();
    }
    for (name, value) in canonical_fixtures() {
        let path = dir.join(name);
        let text = render_json(&value);
        if update {
            fs::write(&path, &text).unwrap();
        } else {
            let on_disk = fs::read_to_string(&path)
                .unwrap_or_else(|e| panic!("cannot read fixture {name}: {e}"));
            assert_eq!(on_disk, text, "fixture {name} is out of date");
        }
    }
}

#[test]
fn presentation_fixtures_parse_back() {
    for name in ["a.json", "b.json", "c.json", "d.json"] {
        let text = fs::read_to_string(fixtures_dir().join(name)).unwrap();
        let v: Value = serde_json::from_str(&text).unwrap();
        let pres = presentation_from_json(&v).unwrap();
        assert_eq!(render_json(&presentation_to_json(&pres)), text);
    }
}

#[test]
fn trivial_fixture_validates_and_broken_fixture_fails_commutation() {
    let read = |name: &str| -> Value {
        serde_json::from_str(&fs::read_to_string(fixtures_dir().join(name)).unwrap()).unwrap()
    };
    let good = module_from_json(&read("trivial_rank1_Qp.json")).unwrap();
    good.validate().unwrap();
    let bad = module_from_json(&read("broken_commutation.json")).unwrap();
    match bad.validate() {
        Err(Error::CommutationFailure(_)) => {}
        other => panic!("expected a commutation failure, got {other:?}"),
    }
}
