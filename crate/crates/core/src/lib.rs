//! Type checker and interpreter for a call-by-value functional language
//! with context-free session types and priorities.

pub mod algebra;
pub mod checker;
pub mod equiv;
pub mod parser;
pub mod render;
pub mod runtime;
pub mod syntax;

pub use algebra::{dual, priority_of, unravel, FormError, PrioritySet};
pub use equiv::{equiv, normalize};
pub use parser::{parse_program, FunDef, ParseError, Program};
pub use syntax::*;
pub use checker::{check_closed, check_config, check_program, Checker, Code, Diagnostic, Env, Report, Typing};
pub use runtime::{congruence_normalize, explore, run, Exploration, Outcome, RunOptions, RunResult, Scheduler, State};
