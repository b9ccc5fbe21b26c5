use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use prioseq::algebra::priority_of_binding;
use prioseq::render::type_str;
use prioseq::runtime::{self, Outcome, RunOptions, Scheduler};
use prioseq::{check_program, dual, equiv, parse_program, Delta, Diagnostic, ParseError, Program, Psi, Report, Theta};
use serde_json::json;

const OK: u8 = 0;
const TYPE_ERROR: u8 = 1;
const PARSE_ERROR: u8 = 2;
const IO_ERROR: u8 = 3;
const BUDGET: u8 = 4;
const DEADLOCK: u8 = 5;
const INTERNAL: u8 = 6;

#[derive(Parser)]
#[command(name = "prioseq", version, about = "Type checker and interpreter for prioritised context-free session types")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Scheduler seed
    #[arg(long, global = true, env = "PRIOSEQ_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value_t = 10_000)]
    max_steps: u64,
    #[arg(long, global = true, default_value_t = 50_000)]
    max_states: usize,
    /// One JSON object per line
    #[arg(long, global = true)]
    json: bool,
    /// Print every reduction step
    #[arg(long, global = true)]
    trace: bool,
    /// Re-type-check the configuration after every step
    #[arg(long, global = true)]
    check_preservation: bool,
    /// Run or explore programs the checker rejects
    #[arg(long, global = true)]
    allow_ill_typed: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Type-check a program
    Check { file: PathBuf },
    /// Run a program under a seeded scheduler
    Run { file: PathBuf },
    /// Enumerate all terminal configurations
    Explore { file: PathBuf },
    /// Print an internal view of a program
    Dump {
        file: PathBuf,
        #[arg(value_enum, default_value_t = What::Ast)]
        what: What,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum What {
    Ast,
    Types,
    Duals,
    Priorities,
}

struct Out {
    json: bool,
}

impl Out {
    fn diag(&self, file: &str, d: &Diagnostic) {
        if self.json {
            let loc = d.loc.map(|p| format!("{file}:{}:{}", p.line, p.col)).unwrap_or_else(|| format!("{file}:0:0"));
            println!("{}", json!({"level": "error", "code": d.code, "loc": loc, "msg": d.msg, "trace": d.trace}));
        } else {
            println!("{}", d.line(file));
        }
    }

    fn info(&self, code: &str, loc: &str, msg: &str) {
        if self.json {
            println!("{}", json!({"level": "info", "code": code, "loc": loc, "msg": msg, "trace": []}));
        } else {
            println!("INFO {code} {loc} {msg}");
        }
    }
}

fn parse_error_parts(e: &ParseError) -> (u32, u32) {
    match e {
        ParseError::Lexical { pos, .. } | ParseError::Syntax { pos, .. } | ParseError::UnboundAlias { pos, .. } => (pos.line, pos.col),
    }
}

fn load(file: &PathBuf, out: &Out) -> Result<Program, u8> {
    let name = file.display().to_string();
    let src = match std::fs::read_to_string(file) {
        Ok(s) => s,
        Err(e) => {
            if out.json {
                println!("{}", json!({"level": "error", "code": "io-error", "loc": format!("{name}:0:0"), "msg": e.to_string(), "trace": []}));
            } else {
                println!("ERROR io-error {name}:0:0 {e}");
            }
            return Err(IO_ERROR);
        }
    };
    parse_program(&src).map_err(|e| {
        let (l, c) = parse_error_parts(&e);
        let msg = e.to_string();
        let msg = msg.split_once(": ").map_or(msg.as_str(), |(_, m)| m);
        if out.json {
            println!("{}", json!({"level": "error", "code": "parse-error", "loc": format!("{name}:{l}:{c}"), "msg": msg, "trace": []}));
        } else {
            println!("ERROR parse-error {name}:{l}:{c} {msg}");
        }
        PARSE_ERROR
    })
}

/// Loads and checks; the report is printed only when the program is rejected.
fn load_checked(file: &PathBuf, out: &Out, allow: bool) -> Result<Program, u8> {
    let p = load(file, out)?;
    let r = check_program(&p);
    if !r.accepted() {
        let name = file.display().to_string();
        for d in &r.diagnostics {
            out.diag(&name, d);
        }
        if !allow {
            return Err(TYPE_ERROR);
        }
    }
    Ok(p)
}

fn cmd_check(file: &PathBuf, out: &Out) -> u8 {
    let p = match load(file, out) {
        Ok(p) => p,
        Err(c) => return c,
    };
    let name = file.display().to_string();
    let r = check_program(&p);
    for d in &r.diagnostics {
        out.diag(&name, d);
    }
    match (&r.main_type, r.accepted()) {
        (Some(t), true) => {
            out.info("accepted", &name, &format!("main : {}", type_str(t)));
            OK
        }
        _ => TYPE_ERROR,
    }
}

fn cmd_run(cli: &Cli, file: &PathBuf, out: &Out) -> u8 {
    let p = match load_checked(file, out, cli.allow_ill_typed) {
        Ok(p) => p,
        Err(c) => return c,
    };
    let opts = RunOptions { scheduler: Scheduler::Seeded(cli.seed), max_steps: cli.max_steps, check_preservation: cli.check_preservation, trace: cli.trace };
    let r = runtime::run(&p, &opts);
    if out.json {
        for s in &r.trace {
            println!("{}", json!({"step": s.n, "rule": s.rule, "redex": s.redex}));
        }
        println!("{}", json!({"outcome": r.outcome.label(), "steps": r.steps, "detail": r.outcome}));
    } else {
        for s in &r.trace {
            println!("{}", s.line());
        }
        println!("{}", r.outcome.label());
        match &r.outcome {
            Outcome::Deadlocked { config, blocked } => {
                for b in blocked {
                    println!("  {b}");
                }
                println!("  {config}");
            }
            Outcome::PreservationFailed { diagnostic, .. } => println!("  {diagnostic}"),
            _ => {}
        }
    }
    exit_of(&r.outcome)
}

fn exit_of(o: &Outcome) -> u8 {
    match o {
        Outcome::Finished(_) => OK,
        Outcome::BudgetExceeded(_) => BUDGET,
        Outcome::Deadlocked { .. } => DEADLOCK,
        Outcome::PreservationFailed { .. } => INTERNAL,
    }
}

fn cmd_explore(cli: &Cli, file: &PathBuf, out: &Out) -> u8 {
    let p = match load_checked(file, out, cli.allow_ill_typed) {
        Ok(p) => p,
        Err(c) => return c,
    };
    let e = runtime::explore(&p, cli.max_states);
    for (o, n) in &e.terminals {
        let detail = match o {
            Outcome::Deadlocked { config, .. } => config.clone(),
            _ => String::new(),
        };
        if out.json {
            println!("{}", json!({"terminal": o.label(), "count": n, "config": detail}));
        } else {
            println!("TERMINAL {n} {} {detail}", o.label());
        }
    }
    if out.json {
        println!("{}", json!({"states": e.states, "terminals": e.terminals.len(), "truncated": e.truncated}));
    } else {
        println!("STATES {} TERMINALS {}{}", e.states, e.terminals.len(), if e.truncated { " TRUNCATED" } else { "" });
    }
    if e.deadlocks() > 0 {
        DEADLOCK
    } else if e.truncated {
        BUDGET
    } else {
        OK
    }
}

fn dump(p: &Program, what: What) -> Vec<String> {
    match what {
        What::Ast => p.render().lines().map(str::to_string).collect(),
        What::Types => {
            let mut v: Vec<String> = p.type_defs.iter().map(|(n, t)| format!("type {n} = {}", type_str(t))).collect();
            v.extend(p.fun_defs.values().map(|d| format!("{} : {}", d.name, type_str(&d.sig))));
            let r = check_program(p);
            v.push(match &r.main_type {
                Some(t) => format!("main : {}", type_str(t)),
                None => "main : ?".into(),
            });
            v
        }
        What::Duals => p
            .type_defs
            .iter()
            .filter(|(_, t)| t.is_session())
            .map(|(n, t)| match dual(t) {
                Ok(d) => format!("dualof {n} = {}", type_str(&d)),
                Err(e) => format!("dualof {n} : {e}"),
            })
            .collect(),
        What::Priorities => priorities(p, &check_program(p)),
    }
}

/// ⌊T⌋ of every alias, once per channel created at that type and once
/// without any sequence.
fn priorities(p: &Program, r: &Report) -> Vec<String> {
    let mut v = Vec::new();
    let (delta, theta) = (Delta::new(), Theta::new());
    let by_type: BTreeMap<_, _> = p.type_defs.iter().collect();
    for (n, t) in by_type {
        let mut any = false;
        for (x, ct, seq) in &r.channels {
            let same = equiv(ct, t);
            if !same {
                continue;
            }
            any = true;
            let mut psi = Psi::new();
            psi.insert(x.clone(), ct.clone(), seq.clone());
            let shown = match priority_of_binding(x, ct, &delta, &theta, &psi) {
                Ok(s) => s.to_string(),
                Err(e) => e.to_string(),
            };
            v.push(format!("{n} {x} -> {shown}"));
        }
        if !any {
            let shown = match prioseq::priority_of(t, &delta, &theta, &Psi::new()) {
                Ok(s) => s.to_string(),
                Err(e) => e.to_string(),
            };
            v.push(format!("{n} -> {shown}"));
        }
    }
    v
}

fn cmd_dump(file: &PathBuf, what: What, out: &Out) -> u8 {
    let p = match load(file, out) {
        Ok(p) => p,
        Err(c) => return c,
    };
    for l in dump(&p, what) {
        if out.json {
            println!("{}", json!({"line": l}));
        } else {
            println!("{l}");
        }
    }
    OK
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = Out { json: cli.json };
    let code = match &cli.command {
        Command::Check { file } => cmd_check(file, &out),
        Command::Run { file } => cmd_run(&cli, file, &out),
        Command::Explore { file } => cmd_explore(&cli, file, &out),
        Command::Dump { file, what } => cmd_dump(file, *what, &out),
    };
    ExitCode::from(code)
}
