#[path = "support/props.rs"]
mod props;

const CASES: u32 = 1000;

fn law(name: &str) {
    if let Err(e) = props::run_law(name, CASES) {
        panic!("{name}: {e}");
    }
}

#[test]
fn duality_is_an_involution() {
    law("duality-involution");
}

#[test]
fn duality_preserves_priorities() {
    law("duality-priorities");
}

#[test]
fn unravel_exposes_a_constructor() {
    law("unravel-head");
}

#[test]
fn unravel_is_idempotent() {
    law("unravel-idempotent");
}

#[test]
fn equivalence_is_reflexive() {
    law("equiv-reflexive");
}

#[test]
fn equivalence_is_symmetric() {
    law("equiv-symmetric");
}

#[test]
fn split_remerges() {
    law("split-remerge");
}

#[test]
fn displacements_stay_flat() {
    law("disp-flat");
}

#[test]
fn literal_shifts_fold() {
    law("literal-shift");
}

#[test]
fn congruence_normalization_is_idempotent() {
    law("normalize-idempotent");
}

#[test]
fn congruence_normalization_is_confluent() {
    law("normalize-confluent");
}

#[test]
fn flags_form_a_partial_monoid() {
    law("flag-monoid");
}

#[test]
fn every_law_is_named() {
    for name in props::LAWS {
        assert!(props::run_law(name, 1).is_ok(), "{name}");
    }
}
