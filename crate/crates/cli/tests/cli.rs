use std::path::{Path, PathBuf};
use std::process::Command;

fn corpus(rel: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus").join(rel).display().to_string()
}

fn prioseq(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_prioseq")).args(args).env_remove("PRIOSEQ_SEED").output().expect("binary runs");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned())
}

fn scratch(name: &str, src: &str) -> PathBuf {
    let p = std::env::temp_dir().join(format!("prioseq-{}-{name}", std::process::id()));
    std::fs::write(&p, src).unwrap();
    p
}

fn dfst(dir: &str) -> Vec<String> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus").join(dir);
    let mut v: Vec<String> = std::fs::read_dir(root)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".dfst"))
        .map(|n| if dir.is_empty() { n } else { format!("{dir}/{n}") })
        .collect();
    v.sort();
    v
}

#[test]
fn check_exit_codes_for_the_example_programs() {
    for (f, want) in [
        ("deadlock.dfst", 1),
        ("deadlock_fixed.dfst", 0),
        ("stream.dfst", 0),
        ("tree.dfst", 0),
        ("scheduler3.dfst", 0),
        ("scheduler3_bad_increment.dfst", 1),
    ] {
        let (code, out) = prioseq(&["check", &corpus(f)]);
        assert_eq!(code, want, "{f}: {out}");
    }
    let (_, out) = prioseq(&["check", &corpus("deadlock.dfst")]);
    assert!(out.starts_with("ERROR priority-order "), "{out}");
    assert!(out.contains("deadlock.dfst:11:9"), "{out}");
}

#[test]
fn micro_programs_are_accepted_and_finish() {
    let micro = dfst("micro");
    assert!(micro.len() >= 10);
    for f in micro {
        let (code, out) = prioseq(&["check", &corpus(&f)]);
        assert_eq!(code, 0, "{f}: {out}");
        let (code, out) = prioseq(&["run", &corpus(&f), "--check-preservation"]);
        assert_eq!(code, 0, "{f}: {out}");
        assert!(out.starts_with("Finished("), "{f}: {out}");
    }
}

#[test]
fn negative_programs_report_their_code() {
    let neg = dfst("negative");
    assert!(neg.len() >= 10);
    for f in neg {
        let code_name = f.trim_start_matches("negative/").trim_end_matches(".dfst").replace('_', "-");
        let (code, out) = prioseq(&["check", &corpus(&f)]);
        assert_eq!(code, 1, "{f}: {out}");
        let first = out.lines().next().unwrap_or_default();
        assert!(first.starts_with(&format!("ERROR {code_name} ")), "{f}: {first}");
    }
}

#[test]
fn parse_and_io_errors() {
    let bad = scratch("bad.dfst", "main : ()\nmain = let in\n");
    let (code, out) = prioseq(&["check", bad.to_str().unwrap()]);
    assert_eq!(code, 2, "{out}");
    assert!(out.starts_with("ERROR parse-error "), "{out}");
    let (code, out) = prioseq(&["check", "/nonexistent/prog.dfst"]);
    assert_eq!(code, 3, "{out}");
    assert!(out.starts_with("ERROR io-error "), "{out}");
}

#[test]
fn run_exit_codes() {
    let (code, out) = prioseq(&["run", &corpus("deadlock_fixed.dfst"), "--seed", "7"]);
    assert_eq!((code, out.trim()), (0, "Finished(())"));
    let (code, out) = prioseq(&["run", &corpus("stream.dfst"), "--max-steps", "500"]);
    assert_eq!((code, out.trim()), (4, "BudgetExceeded(500)"));
    let (code, out) = prioseq(&["run", &corpus("deadlock.dfst"), "--allow-ill-typed"]);
    assert_eq!(code, 5, "{out}");
    assert!(out.contains("blocked on receive"), "{out}");
    let (code, _) = prioseq(&["run", &corpus("deadlock.dfst")]);
    assert_eq!(code, 1);
}

#[test]
fn seed_comes_from_the_environment() {
    let run = |env: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_prioseq"));
        c.args(["run", &corpus("tree.dfst"), "--trace"]).env_remove("PRIOSEQ_SEED");
        if let Some(s) = env {
            c.env("PRIOSEQ_SEED", s);
        }
        String::from_utf8(c.output().unwrap().stdout).unwrap()
    };
    let flag = String::from_utf8(Command::new(env!("CARGO_BIN_EXE_prioseq")).args(["run", &corpus("tree.dfst"), "--trace", "--seed", "11"]).output().unwrap().stdout).unwrap();
    assert_eq!(run(Some("11")), flag);
    assert_eq!(run(None), run(Some("0")));
}

#[test]
fn trace_lines() {
    let (code, out) = prioseq(&["run", &corpus("micro/new_close.dfst"), "--trace"]);
    assert_eq!(code, 0);
    let lines: Vec<&str> = out.lines().collect();
    assert!(lines[0].starts_with("STEP 1 RULE R-New "), "{out}");
    assert!(lines.iter().any(|l| l.contains(" RULE R-Close ")), "{out}");
    assert_eq!(*lines.last().unwrap(), "Finished(())");
}

#[test]
fn explore_counts_terminals() {
    for f in ["deadlock_fixed.dfst", "tree.dfst"] {
        let (code, out) = prioseq(&["explore", &corpus(f)]);
        assert_eq!(code, 0, "{f}: {out}");
        assert_eq!(out.lines().filter(|l| l.starts_with("TERMINAL ")).count(), 1, "{f}: {out}");
    }
    let unit = scratch("unit.dfst", "main : ()\nmain = ()\n");
    let (code, out) = prioseq(&["explore", unit.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(out.starts_with("TERMINAL 1 Finished(())"), "{out}");
    let (code, out) = prioseq(&["explore", &corpus("deadlock.dfst"), "--allow-ill-typed"]);
    assert_eq!(code, 5, "{out}");
}

#[test]
fn json_lines_are_objects() {
    let files: Vec<String> = dfst("").into_iter().chain(dfst("micro")).chain(dfst("negative")).collect();
    for f in files {
        let (_, out) = prioseq(&["check", &corpus(&f), "--json"]);
        for line in out.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap_or_else(|e| panic!("{f}: {e}: {line}"));
            for field in ["level", "code", "loc", "msg", "trace"] {
                assert!(v.get(field).is_some(), "{f}: missing {field} in {line}");
            }
        }
    }
    let (_, out) = prioseq(&["run", &corpus("tree.dfst"), "--json", "--trace"]);
    for line in out.lines() {
        assert!(serde_json::from_str::<serde_json::Value>(line).unwrap().is_object());
    }
}

#[test]
fn dump_priorities_golden() {
    let (code, out) = prioseq(&["dump", &corpus("scheduler3.dfst"), "priorities"]);
    assert_eq!(code, 0);
    let want = "\
Sched c1 -> {Prog(2,6)}
Sched c2 -> {Prog(4,6)}
Sched c3 -> {Prog(6,6)}
Worker a1 -> {Prog(1,6)}
Worker a2 -> {Prog(3,6)}
Worker a3 -> {Prog(5,6)}
";
    assert_eq!(out, want);
    let (_, out) = prioseq(&["dump", &corpus("stream.dfst"), "priorities"]);
    assert_eq!(out, "Stream w1 -> {Prog(1,2)}\nStream w2 -> {Prog(2,2)}\n");
}

#[test]
fn dump_duals_flips_directions() {
    let (_, out) = prioseq(&["dump", &corpus("stream.dfst"), "duals"]);
    assert_eq!(out.trim(), "dualof Stream = rec Stream . forallp i in (bot,top) => ?i () ; Stream");
}

#[test]
fn dump_ast_round_trips() {
    for f in dfst("").into_iter().chain(dfst("micro")) {
        let (code, once) = prioseq(&["dump", &corpus(&f), "ast"]);
        assert_eq!(code, 0, "{f}");
        let p = scratch(&f.replace('/', "-"), &once);
        let (_, twice) = prioseq(&["dump", p.to_str().unwrap(), "ast"]);
        assert_eq!(once, twice, "{f}");
    }
}
