//! Generators and algebraic laws, shared by the property tests and the
//! acceptance suite.

use std::collections::{BTreeMap, BTreeSet};

use prioseq::algebra::head_and_rest;
use prioseq::checker::split_context;
use prioseq::runtime::{congruence_normalize, flag_add};
use prioseq::*;
use proptest::prelude::*;
use proptest::test_runner::{Config as RunnerConfig, TestRunner};

fn prio() -> impl Strategy<Value = Priority> {
    (0i64..12).prop_map(Priority::Lit)
}

fn payload() -> impl Strategy<Value = Type> {
    prop_oneof![Just(Type::Int), Just(Type::Unit)]
}

/// Closed, contractive session types; `vars` are the recursion variables in
/// scope, usable only after a message.
fn session(depth: u32, vars: Vec<String>) -> BoxedStrategy<Type> {
    let leaf = prop_oneof![Just(Type::Skip), prio().prop_map(Type::Close), prio().prop_map(Type::Wait)].boxed();
    if depth == 0 {
        return leaf;
    }
    let msg = prop_oneof![
        (payload(), prio()).prop_map(|(t, p)| Type::out(t, p)),
        (payload(), prio()).prop_map(|(t, p)| Type::inp(t, p)),
    ];
    let mut tails = vec![session(depth - 1, vars.clone())];
    for v in &vars {
        tails.push(Just(Type::TVarS(v.clone())).boxed());
    }
    let guarded = (msg, proptest::strategy::Union::new(tails)).prop_map(|(m, k)| Type::seq(m, k));
    let choice = (any::<bool>(), prio(), proptest::collection::btree_map("[A-C]", session(depth - 1, vars.clone()), 1..3)).prop_map(|(int, p, m)| {
        let m: BTreeMap<Label, Type> = m.into_iter().collect();
        if int {
            Type::IntChoice(m, p)
        } else {
            Type::ExtChoice(m, p)
        }
    });
    let seq = (session(depth - 1, vars.clone()), session(depth - 1, vars.clone())).prop_map(|(a, b)| Type::seq(a, b));
    let name = format!("X{depth}");
    let mut inner = vars;
    inner.push(name.clone());
    let rec = (payload(), prio(), session(depth - 1, inner)).prop_map(move |(t, p, k)| Type::RecS(name.clone(), Box::new(Type::seq(Type::out(t, p), k))));
    prop_oneof![2 => leaf, 3 => guarded, 2 => choice, 2 => seq, 1 => rec].boxed()
}

pub fn closed_session() -> BoxedStrategy<Type> {
    session(3, vec![])
}

fn lowest(t: &Type) -> PrioritySet {
    priority_of(t, &Delta::new(), &Theta::new(), &Psi::new()).expect("ground priorities")
}

fn show(t: &Type) -> String {
    render::type_str(t)
}

pub fn duality_involution(s: Type) -> Result<(), TestCaseError> {
    let dd = dual(&dual(&s).unwrap()).unwrap();
    prop_assert!(equiv(&dd, &s), "{} vs {}", show(&dd), show(&s));
    Ok(())
}

pub fn duality_priorities(s: Type) -> Result<(), TestCaseError> {
    prop_assert_eq!(lowest(&s), lowest(&dual(&s).unwrap()));
    Ok(())
}

pub fn unravel_head(s: Type) -> Result<(), TestCaseError> {
    let (h, _) = head_and_rest(&unravel(&s));
    prop_assert!(!matches!(h, Type::RecS(..) | Type::RecF(..) | Type::Seq(..)), "head {}", show(&h));
    Ok(())
}

pub fn unravel_idempotent(s: Type) -> Result<(), TestCaseError> {
    let u = unravel(&s);
    prop_assert_eq!(unravel(&u), u);
    Ok(())
}

pub fn equiv_reflexive(s: Type) -> Result<(), TestCaseError> {
    prop_assert!(equiv(&s, &s));
    prop_assert!(equiv(&Type::seq(Type::Skip, s.clone()), &s));
    prop_assert!(equiv(&unravel(&s), &s));
    Ok(())
}

pub fn equiv_symmetric((a, b): (Type, Type)) -> Result<(), TestCaseError> {
    prop_assert_eq!(equiv(&a, &b), equiv(&b, &a));
    let u = unravel(&a);
    prop_assert_eq!(equiv(&u, &a), equiv(&a, &u));
    Ok(())
}

pub type SplitCase = (BTreeSet<String>, Vec<bool>, Vec<usize>);

pub fn split_case() -> impl Strategy<Value = SplitCase> {
    (proptest::collection::btree_set("[a-f]", 0..6), proptest::collection::vec(any::<bool>(), 6), proptest::collection::vec(0usize..3, 6))
}

pub fn split_remerge((names, lin, owner): SplitCase) -> Result<(), TestCaseError> {
    let mut g = Gamma::new();
    let mut demands = vec![BTreeSet::new(); 3];
    for (i, x) in names.iter().enumerate() {
        let t = if lin[i] { Type::Close(Priority::Lit(1)) } else { Type::Int };
        g.insert(x.clone(), t);
        demands[owner[i]].insert(x.clone());
    }
    let parts = split_context(&g, |_, t| *t == Type::Int, &demands, 0).unwrap();
    let mut merged = Gamma::new();
    for p in &parts {
        for (x, t) in p {
            if *t != Type::Int {
                prop_assert!(!merged.contains_key(x), "{} in two parts", x);
            }
            merged.insert(x.clone(), t.clone());
        }
    }
    prop_assert_eq!(merged, g);
    Ok(())
}

pub fn disp_flat((n, m): (u64, u64)) -> Result<(), TestCaseError> {
    let p = Priority::var("p");
    let twice = p.shift(n).shift(m);
    prop_assert_eq!(&twice, &p.shift(n + m));
    if let Priority::Disp(base, _) = &twice {
        prop_assert!(matches!(**base, Priority::Var(_)));
    }
    prop_assert_eq!(p.shift(n + m).offset(-(m as i64)), Some(p.shift(n)));
    Ok(())
}

pub fn literal_shift((k, n): (i64, u64)) -> Result<(), TestCaseError> {
    prop_assert_eq!(Priority::Lit(k).shift(n), Priority::Lit(k + n as i64));
    Ok(())
}

fn thread() -> impl Strategy<Value = Config> {
    prop_oneof![
        Just(Config::Thread(Flag::Child, Expr::unit())),
        (0i64..5).prop_map(|n| Config::Thread(Flag::Child, Expr::app(Expr::var("k"), Expr::Int(n)))),
        Just(Config::Thread(Flag::Child, Expr::var("c1+"))),
        Just(Config::Thread(Flag::Child, Expr::var("c1-"))),
    ]
}

pub type ConfigCase = (Vec<Config>, bool, bool);

pub fn config_case() -> impl Strategy<Value = ConfigCase> {
    (proptest::collection::vec(thread(), 0..5), any::<bool>(), any::<bool>())
}

fn nest(children: Vec<Config>, right: bool, chan: bool) -> Config {
    let mut all = vec![Config::main(Expr::Int(0))];
    all.extend(children);
    let body = if right {
        all.into_iter().rev().reduce(|acc, c| Config::par(c, acc)).unwrap()
    } else {
        all.into_iter().reduce(Config::par).unwrap()
    };
    if chan {
        Config::Nu(Box::new(Restriction { x: "c1+".into(), y: "c1-".into(), seq: PrioritySeq::Empty, cursors: (0, 0), types: None, body }))
    } else {
        body
    }
}

pub fn normalize_idempotent((children, right, chan): ConfigCase) -> Result<(), TestCaseError> {
    let n = congruence_normalize(&nest(children, right, chan));
    prop_assert_eq!(congruence_normalize(&n), n);
    Ok(())
}

pub fn normalize_confluent((children, _, chan): ConfigCase) -> Result<(), TestCaseError> {
    let mut rev = children.clone();
    rev.reverse();
    let a = congruence_normalize(&nest(children, true, chan));
    let b = congruence_normalize(&nest(rev, false, chan));
    prop_assert_eq!(a, b);
    Ok(())
}

pub fn flag_monoid((a, b): (bool, bool)) -> Result<(), TestCaseError> {
    let f = |m: bool| if m { Flag::Main } else { Flag::Child };
    let (a, b) = (f(a), f(b));
    prop_assert_eq!(flag_add(a, b), flag_add(b, a));
    prop_assert_eq!(flag_add(a, Flag::Child), Ok(a));
    prop_assert_eq!(flag_add(a, b).is_err(), a == Flag::Main && b == Flag::Main);
    Ok(())
}

fn check<S: Strategy>(cases: u32, s: S, f: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
    let mut runner = TestRunner::new(RunnerConfig { cases, failure_persistence: None, ..RunnerConfig::default() });
    runner.run(&s, f).map_err(|e| e.to_string())
}

/// Every law, by name.
pub const LAWS: [&str; 12] = [
    "duality-involution",
    "duality-priorities",
    "unravel-head",
    "unravel-idempotent",
    "equiv-reflexive",
    "equiv-symmetric",
    "split-remerge",
    "disp-flat",
    "literal-shift",
    "normalize-idempotent",
    "normalize-confluent",
    "flag-monoid",
];

/// Runs one law for `cases` generated inputs.
pub fn run_law(name: &str, cases: u32) -> Result<(), String> {
    match name {
        "duality-involution" => check(cases, closed_session(), duality_involution),
        "duality-priorities" => check(cases, closed_session(), duality_priorities),
        "unravel-head" => check(cases, closed_session(), unravel_head),
        "unravel-idempotent" => check(cases, closed_session(), unravel_idempotent),
        "equiv-reflexive" => check(cases, closed_session(), equiv_reflexive),
        "equiv-symmetric" => check(cases, (closed_session(), closed_session()), equiv_symmetric),
        "split-remerge" => check(cases, split_case(), split_remerge),
        "disp-flat" => check(cases, (0u64..50, 0u64..50), disp_flat),
        "literal-shift" => check(cases, (-100i64..100, 0u64..100), literal_shift),
        "normalize-idempotent" => check(cases, config_case(), normalize_idempotent),
        "normalize-confluent" => check(cases, config_case(), normalize_confluent),
        "flag-monoid" => check(cases, (any::<bool>(), any::<bool>()), flag_monoid),
        _ => Err(format!("no law named {name}")),
    }
}
