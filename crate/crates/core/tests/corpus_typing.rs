use prioseq::{check_program, parse_program, Code};

fn load(name: &str) -> prioseq::Program {
    let path = format!("{}/../cli/corpus/{name}.dfst", env!("CARGO_MANIFEST_DIR"));
    let src = std::fs::read_to_string(&path).expect("corpus file");
    parse_program(&src).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn verdict(name: &str) -> Vec<(Code, String)> {
    check_program(&load(name)).diagnostics.into_iter().map(|d| (d.code, d.to_string())).collect()
}

#[test]
fn accepted_programs() {
    for name in ["deadlock_fixed", "stream", "scheduler3", "tree"] {
        assert_eq!(verdict(name), vec![], "{name}");
    }
}

#[test]
fn deadlock_is_a_priority_error() {
    let v = verdict("deadlock");
    assert_eq!(v.len(), 1, "{v:?}");
    assert_eq!(v[0].0, Code::PriorityOrder);
    assert!(v[0].1.contains("2 ≮ {1}"), "{}", v[0].1);
}

#[test]
fn fast_increment_is_rejected() {
    let v = verdict("scheduler3_bad_increment");
    // the explicit receive priority no longer matches the instance at p+9
    assert_eq!(v.len(), 1, "{v:?}");
    assert_eq!(v[0].0, Code::TypeMismatch, "{v:?}");
    assert!(v[0].1.contains("p+9"), "{v:?}");
}
