//! Shared inputs for the benchmarks.

use std::path::Path;

use prioseq::{parse_program, Program};

/// Source text of a program in the CLI corpus.
pub fn source(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../cli/corpus").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn program(name: &str) -> Program {
    parse_program(&source(name)).expect("corpus programs parse")
}
