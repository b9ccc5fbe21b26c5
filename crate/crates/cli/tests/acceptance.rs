//! End-to-end acceptance criteria. Runs without the libtest harness so the
//! per-criterion verdicts are always printed.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use prioseq::runtime::{self, Outcome, RunOptions, Scheduler};
use prioseq::{check_program, parse_program, Code, Program, PrioritySeq};

#[path = "../../core/tests/support/props.rs"]
mod props;

fn corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus")
}

fn load(rel: &str) -> Program {
    let path = corpus().join(rel);
    let src = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    parse_program(&src).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

fn files(dir: &str) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(corpus().join(dir))
        .expect("corpus directory")
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".dfst"))
        .map(|n| if dir.is_empty() { n } else { format!("{dir}/{n}") })
        .collect();
    v.sort();
    v
}

/// Every accepted corpus program.
fn accepted() -> Vec<String> {
    files("").into_iter().chain(files("micro")).filter(|f| check_program(&load(f)).accepted()).collect()
}

const NONTERMINATING: [&str; 2] = ["stream.dfst", "scheduler3.dfst"];

fn cli(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_prioseq")).args(args).output().expect("binary runs");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned())
}

fn path(rel: &str) -> String {
    corpus().join(rel).display().to_string()
}

fn seeded(seed: u64, steps: u64, preservation: bool) -> RunOptions {
    RunOptions { scheduler: Scheduler::Seeded(seed), max_steps: steps, check_preservation: preservation, trace: false }
}

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let t = start.elapsed();
    ensure(t < limit, format!("took {t:?}, limit {limit:?}"))
}

fn criterion1() -> Verdict {
    let t = Instant::now();
    let r = check_program(&load("deadlock.dfst"));
    let d = r.diagnostics.first().ok_or("deadlock.dfst accepted")?;
    ensure(d.code == Code::PriorityOrder, format!("deadlock.dfst: {}", d.line("deadlock.dfst")))?;
    let p = load("deadlock_fixed.dfst");
    ensure(check_program(&p).accepted(), "deadlock_fixed.dfst rejected")?;
    for seed in 0..100 {
        let o = runtime::run(&p, &seeded(seed, 10_000, false)).outcome;
        ensure(o == Outcome::Finished("()".into()), format!("seed {seed}: {}", o.label()))?;
    }
    within(t, Duration::from_secs(1))?;
    Ok(format!("{} rejected; fixed variant Finished(()) on 100 seeds in {:?}", d.code, t.elapsed()))
}

fn criterion2() -> Verdict {
    let t = Instant::now();
    let p = load("stream.dfst");
    let r = check_program(&p);
    ensure(r.accepted(), "stream.dfst rejected")?;
    let starts: BTreeSet<(i64, i64)> = r
        .channels
        .iter()
        .filter_map(|(_, _, s)| match s {
            PrioritySeq::Progression { start, step, .. } => Some((*start, *step)),
            _ => None,
        })
        .collect();
    ensure(starts == BTreeSet::from([(1, 2), (2, 2)]), format!("sequences {starts:?}"))?;
    let (_, dump) = cli(&["dump", &path("stream.dfst"), "priorities"]);
    ensure(dump.contains("{Prog(1,2)}") && dump.contains("{Prog(2,2)}"), format!("dump priorities: {dump}"))?;
    let run = runtime::run(&p, &seeded(0, 500, true));
    ensure(run.outcome == Outcome::BudgetExceeded(500), run.outcome.label())?;
    within(t, Duration::from_secs(2))?;
    Ok(format!("Progression(1,2) and (2,2); 500 steps preserved, BudgetExceeded in {:?}", t.elapsed()))
}

fn criterion3() -> Verdict {
    let t = Instant::now();
    let p = load("scheduler3.dfst");
    ensure(check_program(&p).accepted(), "scheduler3.dfst rejected")?;
    let (code, _) = cli(&["check", &path("scheduler3_bad_increment.dfst")]);
    ensure(code == 1, format!("bad increment exit {code}"))?;
    // a round ends when the last follower hands the token back to the leader
    for seed in 0..100 {
        let mut opts = seeded(seed, 0, false);
        opts.trace = true;
        let mut steps = 400;
        loop {
            opts.max_steps = steps;
            let r = runtime::run(&p, &opts);
            if matches!(r.outcome, Outcome::Deadlocked { .. }) {
                return Err(format!("seed {seed} deadlocked"));
            }
            let nexts = r.trace.iter().filter(|s| s.rule == "R-Ch" && s.redex.starts_with("select Next")).count();
            if nexts >= 6 {
                break;
            }
            ensure(steps < 10_000, format!("seed {seed}: two rounds not reached"))?;
            steps *= 2;
        }
    }
    within(t, Duration::from_secs(5))?;
    Ok(format!("accepted; increment-12 variant exit 1; two rounds deadlock-free on 100 seeds in {:?}", t.elapsed()))
}

fn criterion4() -> Verdict {
    let t = Instant::now();
    let p = load("tree.dfst");
    ensure(check_program(&p).accepted(), "tree.dfst rejected")?;
    let o = runtime::run(&p, &seeded(0, 10_000, false)).outcome;
    ensure(o == Outcome::Finished("42".into()), o.label())?;
    within(t, Duration::from_secs(2))?;
    Ok(format!("Finished(42) in {:?}", t.elapsed()))
}

fn criterion5() -> Verdict {
    let mut runs = 0;
    for f in accepted() {
        let p = load(&f);
        for seed in 0..20 {
            let o = runtime::run(&p, &seeded(seed, 300, true)).outcome;
            if let Outcome::PreservationFailed { step, diagnostic } = &o {
                return Err(format!("{f} seed {seed} step {step}: {diagnostic}"));
            }
            ensure(!matches!(o, Outcome::Deadlocked { .. }), format!("{f} seed {seed} deadlocked"))?;
            runs += 1;
        }
    }
    Ok(format!("{runs} runs re-checked at every step"))
}

fn criterion6() -> Verdict {
    let t = Instant::now();
    let mut explored = 0;
    for f in accepted().into_iter().filter(|f| !NONTERMINATING.contains(&f.as_str())) {
        let e = runtime::explore(&load(&f), 50_000);
        ensure(!e.truncated, format!("{f}: state budget exhausted"))?;
        ensure(e.deadlocks() == 0, format!("{f}: deadlocked terminal"))?;
        ensure(e.terminals.iter().all(|(o, _)| matches!(o, Outcome::Finished(_))), format!("{f}: non-final terminal"))?;
        explored += 1;
    }
    let e = runtime::explore(&load("deadlock.dfst"), 50_000);
    ensure(e.deadlocks() > 0, "ill-typed deadlock did not deadlock")?;
    let (code, _) = cli(&["run", &path("deadlock.dfst"), "--allow-ill-typed"]);
    ensure(code == 5, format!("override run exit {code}"))?;
    within(t, Duration::from_secs(60))?;
    Ok(format!("{explored} programs deadlock-free; negative control deadlocks; {:?}", t.elapsed()))
}

fn criterion7() -> Verdict {
    for law in props::LAWS {
        props::run_law(law, 1000).map_err(|e| format!("{law}: {e}"))?;
    }
    Ok(format!("{} laws x 1000 cases", props::LAWS.len()))
}

fn criterion8() -> Verdict {
    let mut typing = BTreeSet::new();
    let mut reduction = BTreeSet::new();
    for f in files("").into_iter().chain(files("micro")).chain(files("negative")) {
        let p = load(&f);
        let r = check_program(&p);
        typing.extend(r.rules.iter().cloned());
        for d in &r.diagnostics {
            typing.extend(d.trace.iter().filter(|s| s.starts_with("T-") || s.starts_with("C-")).cloned());
        }
        if r.accepted() {
            let run = runtime::run(&p, &seeded(1, 300, true));
            for rule in run.rules {
                if rule.starts_with("T-") || rule.starts_with("C-") {
                    typing.insert(rule);
                } else {
                    reduction.insert(rule);
                }
            }
        }
    }
    typing.remove("C-Config");
    ensure(typing.len() >= 20, format!("{} typing rules: {typing:?}", typing.len()))?;
    ensure(reduction.len() >= 15, format!("{} reduction rules: {reduction:?}", reduction.len()))?;
    Ok(format!("{} typing rules, {} reduction/congruence rules", typing.len(), reduction.len()))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("deadlock rejected, fixed variant finishes", criterion1),
        ("stream priorities and bounded run", criterion2),
        ("scheduler ring", criterion3),
        ("tree sum", criterion4),
        ("preservation on the corpus", criterion5),
        ("exhaustive deadlock freedom", criterion6),
        ("algebraic laws", criterion7),
        ("rule coverage", criterion8),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(m) => println!("CRITERION {} PASS {name}: {m}", i + 1),
            Err(m) => {
                failed += 1;
                println!("CRITERION {} FAIL {name}: {m}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
