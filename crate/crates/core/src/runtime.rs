//! Small-step semantics: expression reduction, configuration reduction,
//! structural congruence, seeded runs and exhaustive exploration.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::algebra::{dual, head_and_rest, unravel};
use crate::checker::{Checker, Diagnostic};
use crate::parser::{FunDef, Program};
use crate::render::{config_str, const_str as const_name, expr_str, flag_str, prio_str, seq_str, type_str};
use crate::syntax::*;

/// How the next redex is picked among the enabled ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheduler {
    /// Uniform choice, reproducible from the seed.
    Seeded(u64),
    /// Thread-local steps first, then the communication of least priority.
    PriorityGuided,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Outcome {
    Finished(String),
    Deadlocked { config: String, blocked: Vec<String> },
    BudgetExceeded(u64),
    /// A reduct failed to type-check. Never produced for well-typed input.
    PreservationFailed { step: u64, diagnostic: String },
}

impl Outcome {
    pub fn label(&self) -> String {
        match self {
            Outcome::Finished(v) => format!("Finished({v})"),
            Outcome::Deadlocked { .. } => "Deadlocked".into(),
            Outcome::BudgetExceeded(n) => format!("BudgetExceeded({n})"),
            Outcome::PreservationFailed { step, .. } => format!("PreservationFailed(step {step})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TraceStep {
    pub n: u64,
    pub rule: String,
    pub redex: String,
}

impl TraceStep {
    pub fn line(&self) -> String {
        format!("STEP {} RULE {} {}", self.n, self.rule, self.redex)
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub scheduler: Scheduler,
    pub max_steps: u64,
    pub check_preservation: bool,
    pub trace: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { scheduler: Scheduler::Seeded(0), max_steps: 10_000, check_preservation: false, trace: false }
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub outcome: Outcome,
    pub steps: u64,
    pub trace: Vec<TraceStep>,
    /// Reduction, congruence and (when checked) typing rules exercised.
    pub rules: BTreeSet<String>,
}

/// One restriction of a flattened configuration.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Chan {
    pub x: Name,
    pub y: Name,
    pub seq: PrioritySeq,
    pub cursors: (u64, u64),
    pub types: Option<(Type, Type)>,
}

impl Chan {
    fn side(&self, e: &str) -> Option<usize> {
        if self.x == e {
            Some(0)
        } else if self.y == e {
            Some(1)
        } else {
            None
        }
    }

    fn cursor(&self, side: usize) -> u64 {
        if side == 0 {
            self.cursors.0
        } else {
            self.cursors.1
        }
    }

    fn cursor_mut(&mut self, side: usize) -> &mut u64 {
        if side == 0 {
            &mut self.cursors.0
        } else {
            &mut self.cursors.1
        }
    }
}

/// A configuration in normal form: restrictions floated to the top, threads
/// in a flat list with the main thread first.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct State {
    pub chans: Vec<Chan>,
    pub threads: Vec<(Flag, Expr)>,
    pub fresh: u64,
}

impl State {
    pub fn main(e: Expr) -> State {
        State { chans: Vec::new(), threads: vec![(Flag::Main, e)], fresh: 0 }
    }

    pub fn from_config(c: &Config) -> State {
        fn go(c: &Config, s: &mut State) {
            match c {
                Config::Thread(f, e) => s.threads.push((*f, e.clone())),
                Config::Par(a, b) => {
                    go(a, s);
                    go(b, s);
                }
                Config::Nu(r) => {
                    s.chans.push(Chan { x: r.x.clone(), y: r.y.clone(), seq: r.seq.clone(), cursors: r.cursors, types: r.types.clone() });
                    go(&r.body, s);
                }
            }
        }
        let mut s = State { chans: Vec::new(), threads: Vec::new(), fresh: 0 };
        go(c, &mut s);
        s.threads.sort_by_key(|(f, _)| *f != Flag::Main);
        s
    }

    pub fn to_config(&self) -> Config {
        let mut threads = self.threads.iter().rev();
        let mut body = match threads.next() {
            Some((f, e)) => Config::Thread(*f, e.clone()),
            None => Config::Thread(Flag::Child, Expr::unit()),
        };
        for (f, e) in threads {
            body = Config::Par(Box::new(Config::Thread(*f, e.clone())), Box::new(body));
        }
        for c in self.chans.iter().rev() {
            body = Config::Nu(Box::new(Restriction { x: c.x.clone(), y: c.y.clone(), seq: c.seq.clone(), cursors: c.cursors, types: c.types.clone(), body }));
        }
        body
    }

    fn chan_of(&self, e: &str) -> Option<(usize, usize)> {
        self.chans.iter().enumerate().find_map(|(i, c)| c.side(e).map(|s| (i, s)))
    }

    /// Garbage-collects finished children and unused restrictions; reports
    /// the congruence rules applied.
    pub fn normalize(&mut self, rules: &mut BTreeSet<String>) {
        self.gc_threads(rules);
        self.gc_chans(rules);
    }

    fn gc_threads(&mut self, rules: &mut BTreeSet<String>) {
        let before = self.threads.len();
        self.threads.retain(|(f, e)| !(*f == Flag::Child && is_unit(e)));
        if self.threads.len() < before {
            rules.insert("SC-ChildUnit".into());
        }
    }

    fn gc_chans(&mut self, rules: &mut BTreeSet<String>) {
        let mut used = BTreeSet::new();
        for (_, e) in &self.threads {
            e.all_vars(&mut used);
        }
        let before = self.chans.len();
        self.chans.retain(|c| used.contains(&c.x) || used.contains(&c.y));
        if self.chans.len() < before {
            rules.insert("SC-NuGc".into());
        }
    }

    /// Rendering with channels renamed in order of first occurrence; equal
    /// keys mean congruent states.
    pub fn canonical_key(&self) -> String {
        let mut order: Vec<usize> = Vec::new();
        for (_, e) in &self.threads {
            let mut vs = Vec::new();
            occurrences(e, &mut vs);
            for v in vs {
                if let Some((i, _)) = self.chan_of(&v) {
                    if !order.contains(&i) {
                        order.push(i);
                    }
                }
            }
        }
        let mut renamed = self.clone();
        let mut map: Vec<(Name, Name)> = Vec::new();
        for (k, &i) in order.iter().enumerate() {
            let c = &self.chans[i];
            map.push((c.x.clone(), format!("k{k}+")));
            map.push((c.y.clone(), format!("k{k}-")));
        }
        for (_, e) in renamed.threads.iter_mut() {
            for (from, to) in &map {
                *e = e.subst(from, &Expr::Var(to.clone()));
            }
        }
        let mut out = String::new();
        for (k, &i) in order.iter().enumerate() {
            let c = &self.chans[i];
            let ty = c.types.as_ref().map(|(a, b)| format!("{} | {}", type_str(a), type_str(b))).unwrap_or_default();
            out.push_str(&format!("(nu k{k} {} {:?} {ty}) ", seq_str(&c.seq), c.cursors));
        }
        for (f, e) in &renamed.threads {
            out.push_str(&format!("<{}: {}> ", flag_str(*f), expr_str(e)));
        }
        out
    }

    pub fn render(&self) -> String {
        config_str(&self.to_config())
    }
}

fn occurrences(e: &Expr, out: &mut Vec<Name>) {
    if let Expr::Var(x) = e {
        out.push(x.clone());
    }
    e.for_each_child(&mut |c| {
        occurrences(c, out);
    });
}

fn is_unit(e: &Expr) -> bool {
    matches!(e.strip(), Expr::Const(Const::Unit))
}

/// Congruence normal form of a configuration: finished children and unused
/// restrictions dropped, parallel composition flattened with the main thread
/// first and children in rendered order, restrictions floated outward in
/// order of first occurrence, each oriented with the smaller name first.
pub fn congruence_normalize(c: &Config) -> Config {
    let mut s = State::from_config(c);
    s.normalize(&mut BTreeSet::new());
    let mut children: Vec<(Flag, Expr)> = s.threads.iter().filter(|(f, _)| *f == Flag::Child).cloned().collect();
    children.sort_by_cached_key(|(_, e)| expr_str(e));
    let mains = s.threads.iter().filter(|(f, _)| *f == Flag::Main).cloned();
    s.threads = mains.chain(children).collect();
    let mut seen = Vec::new();
    for (_, e) in &s.threads {
        occurrences(e, &mut seen);
    }
    let rank = |c: &Chan| seen.iter().position(|v| *v == c.x || *v == c.y).unwrap_or(usize::MAX);
    s.chans.sort_by(|a, b| rank(a).cmp(&rank(b)).then_with(|| a.x.cmp(&b.x)));
    for c in s.chans.iter_mut() {
        if c.y < c.x {
            std::mem::swap(&mut c.x, &mut c.y);
            c.cursors = (c.cursors.1, c.cursors.0);
            c.types = c.types.take().map(|(a, b)| (b, a));
        }
    }
    s.to_config()
}

/// Combines the flags of two parallel threads.
pub fn flag_add(a: Flag, b: Flag) -> Result<Flag, MainMain> {
    a.add(b)
}

// ------------------------------------------------------------ expressions

/// Arities of top-level definitions: binders plus parameters.
#[derive(Clone, Debug, Default)]
pub struct Defs {
    defs: HashMap<Name, (usize, Vec<Name>, Vec<Name>, Expr)>,
}

impl Defs {
    pub fn new(funs: &BTreeMap<Name, FunDef>) -> Defs {
        let mut defs = HashMap::new();
        for (n, d) in funs {
            let mut binders = Vec::new();
            let mut t = &d.sig;
            while let Type::ForallPF { var, body, .. } | Type::ForallT { var, body, .. } = t {
                binders.push(var.clone());
                t = body;
            }
            let arity = binders.len() + d.params.len();
            defs.insert(n.clone(), (arity, binders, d.params.clone(), d.body.strip_locs()));
        }
        Defs { defs }
    }

    fn arity(&self, f: &str) -> usize {
        self.defs.get(f).map_or(0, |d| d.0)
    }
}

fn saturation(c: &Const) -> usize {
    match c {
        Const::Fork => 3,
        Const::Send => 7,
        Const::Receive => 6,
        Const::Close | Const::Wait => 2,
        Const::Select(_) => 1,
        Const::Fix => 4,
        Const::Add => 2,
        Const::Unit => 0,
    }
}

/// Values: abstractions, constants and partial applications of constants or
/// definitions, pairs of values, endpoints and instantiated endpoints.
pub fn is_value(e: &Expr, defs: &Defs) -> bool {
    match e.strip() {
        Expr::Var(_) | Expr::Int(_) | Expr::Const(_) | Expr::Abs { .. } | Expr::TAbs { .. } | Expr::PAbs { .. } => true,
        Expr::Ref(f) => defs.arity(f) > 0,
        Expr::Pair(a, b) => is_value(a, defs) && is_value(b, defs),
        Expr::App(..) | Expr::TApp(..) | Expr::PApp(..) => {
            let (head, args) = e.spine();
            let args_ok = args.iter().all(|a| match a {
                Arg::Term(t) => is_value(t, defs),
                Arg::Type(_) => true,
                Arg::Prio(p) => matches!(p, PriorityValue::Prio(_)),
            });
            match head {
                Expr::Var(_) => args.len() == 1 && matches!(args[0], Arg::Prio(PriorityValue::Prio(_))),
                Expr::Const(c) => args_ok && args.len() < saturation(c),
                Expr::Ref(f) => args_ok && args.len() < defs.arity(f),
                _ => false,
            }
        }
        _ => false,
    }
}

fn child_mut(e: &mut Expr, i: usize) -> &mut Expr {
    match (e, i) {
        (Expr::At(_, x), 0) => x,
        (Expr::App(f, _), 0) | (Expr::TApp(f, _), 0) | (Expr::PApp(f, _), 0) => f,
        (Expr::App(_, a), 1) => a,
        (Expr::Pair(a, _), 0) => a,
        (Expr::Pair(_, b), 1) => b,
        (Expr::Let { bound, .. }, 0) | (Expr::LetPair { bound, .. }, 0) => bound,
        (Expr::SeqE(a, _), 0) => a,
        (Expr::Match { scrut, .. }, 0) => scrut,
        (Expr::Inst(x), 0) => x,
        _ => unreachable!("no such evaluation position"),
    }
}

fn child(e: &Expr, i: usize) -> &Expr {
    match (e, i) {
        (Expr::At(_, x), 0) => x,
        (Expr::App(f, _), 0) | (Expr::TApp(f, _), 0) | (Expr::PApp(f, _), 0) => f,
        (Expr::App(_, a), 1) => a,
        (Expr::Pair(a, _), 0) => a,
        (Expr::Pair(_, b), 1) => b,
        (Expr::Let { bound, .. }, 0) | (Expr::LetPair { bound, .. }, 0) => bound,
        (Expr::SeqE(a, _), 0) => a,
        (Expr::Match { scrut, .. }, 0) => scrut,
        (Expr::Inst(x), 0) => x,
        _ => unreachable!("no such evaluation position"),
    }
}

/// Path to the next redex under left-to-right call-by-value, or `None` when
/// `e` is a value.
pub fn redex_path(e: &Expr, defs: &Defs) -> Option<Vec<usize>> {
    fn under(i: usize, e: &Expr, defs: &Defs) -> Option<Vec<usize>> {
        let mut p = redex_path(e, defs)?;
        p.insert(0, i);
        Some(p)
    }
    let here = Some(Vec::new());
    match e {
        Expr::At(_, x) => under(0, x, defs),
        Expr::App(f, a) => {
            if !is_value(f, defs) {
                under(0, f, defs)
            } else if !is_value(a, defs) {
                under(1, a, defs)
            } else if is_value(e, defs) {
                None
            } else {
                here
            }
        }
        Expr::TApp(f, _) => {
            if !is_value(f, defs) {
                under(0, f, defs)
            } else if is_value(e, defs) {
                None
            } else {
                here
            }
        }
        Expr::PApp(f, p) => {
            if !is_value(f, defs) {
                under(0, f, defs)
            } else if matches!(p, PriorityValue::Next(..)) || !is_value(e, defs) {
                here
            } else {
                None
            }
        }
        Expr::Pair(a, b) => {
            if !is_value(a, defs) {
                under(0, a, defs)
            } else if !is_value(b, defs) {
                under(1, b, defs)
            } else {
                None
            }
        }
        Expr::Let { bound, .. } | Expr::LetPair { bound, .. } | Expr::SeqE(bound, _) | Expr::Match { scrut: bound, .. } => {
            if !is_value(bound, defs) {
                under(0, bound, defs)
            } else {
                here
            }
        }
        Expr::Inst(_) | Expr::New(_) | Expr::NewPoly(..) => here,
        Expr::Ref(f) if defs.arity(f) == 0 => here,
        _ => None,
    }
}

/// A redex for traces: continuations of binding forms are elided.
pub fn redex_str(e: &Expr) -> String {
    match e.strip() {
        Expr::Let { var, bound, .. } => format!("let {var} = {} in ...", expr_str(bound)),
        Expr::LetPair { left, right, bound, .. } => format!("let ({left}, {right}) = {} in ...", expr_str(bound)),
        Expr::SeqE(a, _) => format!("{}; ...", expr_str(a)),
        Expr::Match { scrut, branches } => {
            let labels: Vec<&str> = branches.keys().map(|l| l.as_str()).collect();
            format!("match {} with {{{} ...}}", expr_str(scrut), labels.join(", "))
        }
        _ => expr_str(e),
    }
}

fn at_path<'e>(e: &'e Expr, path: &[usize]) -> &'e Expr {
    path.iter().fold(e, |e, &i| child(e, i))
}

fn replace_at(e: &mut Expr, path: &[usize], new: Expr) {
    let mut cur = e;
    for &i in path {
        cur = child_mut(cur, i);
    }
    *cur = new;
}

/// A communication or spawning action waiting at the head of a thread.
#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    /// Spawning and channel creation read their operands from the redex.
    Fork,
    New,
    NewPoly,
    Send { ep: Name, inst: Option<Priority>, value: Expr },
    Recv { ep: Name, inst: Option<Priority> },
    Select { ep: Name, inst: Option<Priority>, label: Label },
    Offer { ep: Name, inst: Option<Priority>, labels: Vec<Label> },
    Close { ep: Name, inst: Option<Priority> },
    Wait { ep: Name, inst: Option<Priority> },
}

impl Action {
    fn endpoint(&self) -> Option<(&Name, &Option<Priority>)> {
        match self {
            Action::Send { ep, inst, .. }
            | Action::Recv { ep, inst }
            | Action::Select { ep, inst, .. }
            | Action::Offer { ep, inst, .. }
            | Action::Close { ep, inst }
            | Action::Wait { ep, inst } => Some((ep, inst)),
            _ => None,
        }
    }

    fn verb(&self) -> &'static str {
        match self {
            Action::Fork => "fork",
            Action::New | Action::NewPoly => "new",
            Action::Send { .. } => "send",
            Action::Recv { .. } => "receive",
            Action::Select { .. } => "select",
            Action::Offer { .. } => "match",
            Action::Close { .. } => "close",
            Action::Wait { .. } => "wait",
        }
    }
}

/// What the head of a thread can do.
#[derive(Clone, Debug)]
pub enum Head {
    Value,
    /// A thread-local step: rule, redex path and reduct.
    Local(&'static str, Vec<usize>, Expr),
    /// `inst x` at the given path.
    Inst(Vec<usize>, Name),
    Act(Vec<usize>, Action),
    Stuck(String),
}

fn endpoint(v: &Expr) -> Option<(Name, Option<Priority>)> {
    match v.strip() {
        Expr::Var(x) => Some((x.clone(), None)),
        Expr::PApp(f, PriorityValue::Prio(p)) => match f.strip() {
            Expr::Var(x) => Some((x.clone(), Some(p.clone()))),
            _ => None,
        },
        _ => None,
    }
}

/// Classifies the next step of one thread.
pub fn head(e: &Expr, state: &State, defs: &Defs) -> Head {
    head_with(e, state, defs, true)
}

/// With `build` unset, local reducts are left as placeholders; scheduling
/// only needs the rule and position.
fn head_with(e: &Expr, state: &State, defs: &Defs, build: bool) -> Head {
    let mk = |f: &dyn Fn() -> Expr| if build { f() } else { Expr::unit() };
    let Some(path) = redex_path(e, defs) else {
        return Head::Value;
    };
    let r = at_path(e, &path).strip();
    let stuck = || Head::Stuck(format!("stuck at {}", expr_str(r)));
    match r {
        Expr::Let { var, bound, body } => Head::Local("E-LetElim", path, mk(&|| body.subst(var, bound))),
        Expr::LetPair { left, right, bound, body } => match bound.strip() {
            Expr::Pair(a, b) => {
                // simultaneous substitution; values carry no user binders
                let tmp = format!("{left}'pair");
                let body = mk(&|| body.subst(left, &Expr::Var(tmp.clone())).subst(right, b).subst(&tmp, a));
                Head::Local("E-PairElim", path, body)
            }
            _ => stuck(),
        },
        Expr::SeqE(a, b) if is_unit(a) => Head::Local("E-UnitElim", path, mk(&|| (**b).clone())),
        Expr::Match { scrut, branches } => match endpoint(scrut) {
            Some((ep, inst)) => Head::Act(path, Action::Offer { ep, inst, labels: branches.keys().cloned().collect() }),
            None => stuck(),
        },
        Expr::Inst(x) => match x.strip() {
            Expr::Var(x) => Head::Inst(path, x.clone()),
            _ => stuck(),
        },
        Expr::New(_) => Head::Act(path, Action::New),
        Expr::NewPoly(..) => Head::Act(path, Action::NewPoly),
        Expr::PApp(f, PriorityValue::Next(k, x)) => {
            let Some((i, side)) = state.chan_of(x) else {
                return Head::Stuck(format!("next {x}: not an endpoint"));
            };
            let c = &state.chans[i];
            match c.seq.advance(c.cursor(side)).ok().and_then(|s| s.nth(*k)) {
                Some(p) => Head::Local("E-Next", path, Expr::PApp(f.clone(), PriorityValue::Prio(p))),
                None => Head::Stuck(format!("sequence of {x} exhausted")),
            }
        }
        Expr::Ref(f) => call(f, &[], defs, build).map_or_else(stuck, |b| Head::Local("E-Call", path, b)),
        Expr::App(..) | Expr::TApp(..) | Expr::PApp(..) => {
            let (h, args) = r.spine();
            match (h, args.as_slice()) {
                (Expr::Abs { var, body, .. }, [Arg::Term(v)]) => Head::Local("E-App", path, mk(&|| body.subst(var, v))),
                (Expr::TAbs { var, body, .. }, [Arg::Type(t)]) => Head::Local("E-TApp", path, mk(&|| body.subst_type(var, t))),
                (Expr::PAbs { var, body, .. }, [Arg::Prio(PriorityValue::Prio(p))]) => Head::Local("E-PApp", path, mk(&|| body.subst_prio(var, p))),
                (Expr::Ref(f), _) => call(f, &args, defs, build).map_or_else(stuck, |b| Head::Local("E-Call", path, b)),
                (Expr::Const(c), _) => constant(c, &args, path),
                _ => stuck(),
            }
        }
        _ => stuck(),
    }
}

fn call(f: &str, args: &[Arg<'_>], defs: &Defs, build: bool) -> Option<Expr> {
    let (arity, binders, params, body) = defs.defs.get(f)?;
    if args.len() != *arity {
        return None;
    }
    if !build {
        return Some(Expr::unit());
    }
    let mut e = body.clone();
    // parameters first: their names may shadow nothing in the binder list
    for (x, a) in params.iter().zip(&args[binders.len()..]) {
        let Arg::Term(v) = a else { return None };
        e = e.subst(x, v);
    }
    for (b, a) in binders.iter().zip(args) {
        e = match a {
            Arg::Type(t) => e.subst_type(b, t),
            Arg::Prio(PriorityValue::Prio(p)) => e.subst_prio(b, p),
            _ => return None,
        };
    }
    Some(e)
}

fn constant(c: &Const, args: &[Arg<'_>], path: Vec<usize>) -> Head {
    let term = |i: usize| match args.get(i) {
        Some(Arg::Term(t)) => Some(*t),
        _ => None,
    };
    let ep = |i: usize| term(i).and_then(endpoint);
    let stuck = Head::Stuck(format!("stuck at {}", const_name(c)));
    match c {
        Const::Add => match (term(0).map(Expr::strip), term(1).map(Expr::strip)) {
            (Some(Expr::Int(a)), Some(Expr::Int(b))) => Head::Local("E-Add", path, Expr::Int(a.wrapping_add(*b))),
            _ => stuck,
        },
        Const::Fix => match (term(2), term(3)) {
            (Some(f), Some(w)) => {
                let (Some(Arg::Prio(PriorityValue::Prio(p))), Some(Arg::Type(t))) = (args.first(), args.get(1)) else {
                    return stuck;
                };
                let fix = Expr::app(Expr::tapp(Expr::papp(Expr::Const(Const::Fix), p.clone()), (*t).clone()), f.clone());
                Head::Local("E-Fix", path, Expr::app(Expr::app(f.clone(), fix), w.clone()))
            }
            _ => stuck,
        },
        Const::Fork => match term(2) {
            Some(_) => Head::Act(path, Action::Fork),
            None => stuck,
        },
        Const::Send => match (term(5), ep(6)) {
            (Some(v), Some((ep, inst))) => Head::Act(path, Action::Send { ep, inst, value: v.clone() }),
            _ => stuck,
        },
        Const::Receive => match ep(5) {
            Some((ep, inst)) => Head::Act(path, Action::Recv { ep, inst }),
            None => stuck,
        },
        Const::Close => match ep(1) {
            Some((ep, inst)) => Head::Act(path, Action::Close { ep, inst }),
            None => stuck,
        },
        Const::Wait => match ep(1) {
            Some((ep, inst)) => Head::Act(path, Action::Wait { ep, inst }),
            None => stuck,
        },
        Const::Select(l) => match ep(0) {
            Some((ep, inst)) => Head::Act(path, Action::Select { ep, inst, label: l.clone() }),
            None => stuck,
        },
        Const::Unit => stuck,
    }
}

/// One thread-local reduction of a closed expression with no channels in
/// scope. Returns the rule and the reduct.
pub fn step_expr(e: &Expr, defs: &Defs) -> Option<(&'static str, Expr)> {
    match head(e, &State::main(e.clone()), defs) {
        Head::Local(rule, path, new) => {
            let mut out = e.clone();
            replace_at(&mut out, &path, new);
            Some((rule, out))
        }
        _ => None,
    }
}

// ---------------------------------------------------------- configurations

/// An enabled configuration step.
#[derive(Clone, Debug)]
pub enum Move {
    Local(usize),
    Sync(usize, usize),
}

/// The session type left after performing one action on an endpoint of
/// type `t`.
fn advance_type(t: &Type, inst: &Option<Priority>, label: Option<&Label>) -> Option<Type> {
    let mut u = unravel(t);
    if let Type::ForallPS { var, body, .. } = &u {
        u = unravel(&body.subst_prio(var, inst.as_ref()?));
    }
    let (h, k) = head_and_rest(&u);
    match h {
        Type::Out(..) | Type::In(..) | Type::Close(_) | Type::Wait(_) => Some(k),
        Type::IntChoice(m, _) | Type::ExtChoice(m, _) => Some(Type::seq(m.get(label?)?.clone(), k)),
        _ => None,
    }
}

/// Priority of the next action on an endpoint, for guided scheduling.
fn action_priority(t: &Type, inst: &Option<Priority>) -> Option<i64> {
    let mut u = unravel(t);
    if let Type::ForallPS { var, body, .. } = &u {
        u = unravel(&body.subst_prio(var, inst.as_ref()?));
    }
    match head_and_rest(&u).0 {
        Type::Out(_, p) | Type::In(_, p) | Type::Close(p) | Type::Wait(p) | Type::IntChoice(_, p) | Type::ExtChoice(_, p) => match p.split() {
            (Base::Int, n) => Some(n),
            _ => None,
        },
        _ => None,
    }
}

/// The branch selected by `label` of the match at `path`, given the endpoint.
fn branch(e: &Expr, path: &[usize], label: &Label, ep: &Name) -> Expr {
    match at_path(e, path).strip() {
        Expr::Match { branches, .. } => {
            let (x, body) = &branches[label];
            body.subst(x, &Expr::Var(ep.clone()))
        }
        _ => unreachable!("offer at a match"),
    }
}

fn complementary(a: &Action, b: &Action) -> bool {
    matches!(
        (a, b),
        (Action::Send { .. }, Action::Recv { .. })
            | (Action::Recv { .. }, Action::Send { .. })
            | (Action::Select { .. }, Action::Offer { .. })
            | (Action::Offer { .. }, Action::Select { .. })
            | (Action::Close { .. }, Action::Wait { .. })
            | (Action::Wait { .. }, Action::Close { .. })
    )
}

pub struct Machine<'a> {
    pub defs: Defs,
    checker: Option<Checker<'a>>,
    pub rules: BTreeSet<String>,
}

impl<'a> Machine<'a> {
    pub fn new(funs: &'a BTreeMap<Name, FunDef>, check_preservation: bool) -> Self {
        Machine { defs: Defs::new(funs), checker: check_preservation.then(|| Checker::new(funs)), rules: BTreeSet::new() }
    }

    /// Heads of all threads, without building local reducts.
    pub fn heads(&self, s: &State) -> Vec<Head> {
        s.threads.iter().map(|(_, e)| head_with(e, s, &self.defs, false)).collect()
    }

    /// Enabled moves: thread-local steps by thread, then rendezvous pairs.
    pub fn moves(&self, s: &State, heads: &[Head]) -> Vec<Move> {
        let mut out = Vec::new();
        for (i, h) in heads.iter().enumerate() {
            match h {
                Head::Local(..) | Head::Inst(..) => out.push(Move::Local(i)),
                Head::Act(_, Action::Fork | Action::New | Action::NewPoly) => out.push(Move::Local(i)),
                _ => {}
            }
        }
        for i in 0..heads.len() {
            for j in i + 1..heads.len() {
                if let (Head::Act(_, a), Head::Act(_, b)) = (&heads[i], &heads[j]) {
                    if let (Some((ea, _)), Some((eb, _))) = (a.endpoint(), b.endpoint()) {
                        let same = s.chan_of(ea).zip(s.chan_of(eb)).is_some_and(|((ca, sa), (cb, sb))| ca == cb && sa != sb);
                        let label_ok = match (a, b) {
                            (Action::Select { label, .. }, Action::Offer { labels, .. }) | (Action::Offer { labels, .. }, Action::Select { label, .. }) => labels.contains(label),
                            _ => true,
                        };
                        if same && label_ok && complementary(a, b) {
                            out.push(Move::Sync(i, j));
                        }
                    }
                }
            }
        }
        out
    }

    fn priority_of_move(&self, s: &State, heads: &[Head], m: &Move) -> i64 {
        match m {
            Move::Local(_) => i64::MIN,
            Move::Sync(i, _) => {
                let Head::Act(_, a) = &heads[*i] else { return i64::MAX };
                let Some((ep, inst)) = a.endpoint() else { return i64::MAX };
                let Some((c, side)) = s.chan_of(ep) else { return i64::MAX };
                let Some(types) = &s.chans[c].types else { return i64::MAX };
                let t = if side == 0 { &types.0 } else { &types.1 };
                action_priority(t, inst).unwrap_or(i64::MAX)
            }
        }
    }

    /// Performs one move; returns the trace entry.
    pub fn apply(&mut self, s: &mut State, heads: &[Head], m: &Move) -> (String, String) {
        let (rule, redex) = match m {
            Move::Local(i) => {
                let h = match &heads[*i] {
                    Head::Local(..) => head(&s.threads[*i].1, s, &self.defs),
                    h => h.clone(),
                };
                self.apply_local(s, *i, &h)
            }
            Move::Sync(i, j) => self.apply_sync(s, (*i, &heads[*i]), (*j, &heads[*j])),
        };
        self.rules.insert(rule.clone());
        // endpoints only disappear when a session is closed
        if rule == "R-Close" {
            s.normalize(&mut self.rules);
        } else {
            s.gc_threads(&mut self.rules);
        }
        (rule, redex)
    }

    fn apply_local(&mut self, s: &mut State, i: usize, h: &Head) -> (String, String) {
        let redex = |s: &State, p: &[usize]| redex_str(at_path(&s.threads[i].1, p));
        let path = match h {
            Head::Local(_, p, _) | Head::Inst(p, _) | Head::Act(p, _) => p.clone(),
            _ => unreachable!("not a local move"),
        };
        let shown = redex(s, &path);
        if !path.is_empty() {
            self.rules.insert("E-Ctx".into());
        }
        let (rule, new) = match h {
            Head::Local(rule, _, new) => {
                self.rules.insert("R-LiftE".into());
                (rule.to_string(), new.clone())
            }
            Head::Inst(_, x) => {
                self.rules.insert("R-LiftE".into());
                let (c, side) = s.chan_of(x).expect("inst on a live endpoint");
                let ch = &mut s.chans[c];
                let p = ch.seq.advance(ch.cursor(side)).ok().and_then(|q| q.head()).expect("sequence has a next element");
                *ch.cursor_mut(side) += 1;
                ("E-PInst".to_string(), Expr::PApp(Box::new(Expr::Var(x.clone())), PriorityValue::Prio(p)))
            }
            Head::Act(_, Action::Fork) => {
                let Expr::App(_, thunk) = at_path(&s.threads[i].1, &path).strip() else { unreachable!("fork is applied") };
                let child = Expr::app((**thunk).clone(), Expr::unit());
                s.threads.push((Flag::Child, child));
                self.rules.insert("R-LiftC".into());
                ("R-Fork".to_string(), Expr::unit())
            }
            Head::Act(_, Action::New | Action::NewPoly) => {
                let (t, seq, rule) = match at_path(&s.threads[i].1, &path).strip() {
                    Expr::NewPoly(t, n1, n2) => (t.clone(), PrioritySeq::progression(*n1, *n2), "R-NewPoly"),
                    Expr::New(t) => (t.clone(), PrioritySeq::Empty, "R-New"),
                    _ => unreachable!("new at the redex"),
                };
                s.fresh += 1;
                let (x, y) = (format!("c{}+", s.fresh), format!("c{}-", s.fresh));
                let types = dual(&t).ok().map(|d| (t, d));
                s.chans.push(Chan { x: x.clone(), y: y.clone(), seq, cursors: (0, 0), types });
                self.rules.insert("SC-Extrusion".into());
                (rule.to_string(), Expr::pair(Expr::Var(x), Expr::Var(y)))
            }
            _ => unreachable!("not a local move"),
        };
        replace_at(&mut s.threads[i].1, &path, new);
        (rule, shown)
    }

    fn apply_sync(&mut self, s: &mut State, (i, hi): (usize, &Head), (j, hj): (usize, &Head)) -> (String, String) {
        let (Head::Act(pi, a), Head::Act(pj, b)) = (hi, hj) else { unreachable!("sync between actions") };
        let shown = format!("{} | {}", redex_str(at_path(&s.threads[i].1, pi)), redex_str(at_path(&s.threads[j].1, pj)));
        let (ea, ia) = a.endpoint().expect("communication action");
        let (eb, ib) = b.endpoint().expect("communication action");
        let label = match (a, b) {
            (Action::Select { label, .. }, _) | (_, Action::Select { label, .. }) => Some(label.clone()),
            _ => None,
        };
        let (c, sa) = s.chan_of(ea).expect("live endpoint");
        let ch = &mut s.chans[c];
        ch.types = ch.types.take().and_then(|(t0, t1)| {
            let (ta, tb) = if sa == 0 { (t0, t1) } else { (t1, t0) };
            let na = advance_type(&ta, ia, label.as_ref())?;
            let nb = advance_type(&tb, ib, label.as_ref())?;
            Some(if sa == 0 { (na, nb) } else { (nb, na) })
        });
        let (ra, rb, rule) = match (a, b) {
            (Action::Send { value, .. }, Action::Recv { .. }) => (Expr::Var(ea.clone()), Expr::pair(value.clone(), Expr::Var(eb.clone())), "R-Com"),
            (Action::Recv { .. }, Action::Send { value, .. }) => (Expr::pair(value.clone(), Expr::Var(ea.clone())), Expr::Var(eb.clone()), "R-Com"),
            (Action::Select { label, .. }, Action::Offer { .. }) => (Expr::Var(ea.clone()), branch(&s.threads[j].1, pj, label, eb), "R-Ch"),
            (Action::Offer { .. }, Action::Select { label, .. }) => (branch(&s.threads[i].1, pi, label, ea), Expr::Var(eb.clone()), "R-Ch"),
            _ => (Expr::unit(), Expr::unit(), "R-Close"),
        };
        replace_at(&mut s.threads[i].1, pi, ra);
        replace_at(&mut s.threads[j].1, pj, rb);
        (rule.to_string(), shown)
    }

    /// Re-checks a state; `None` when it is well typed.
    pub fn preservation(&mut self, s: &State) -> Option<Diagnostic> {
        let ck = self.checker.as_mut()?;
        ck.channels.clear();
        let r = ck.check_config(&s.to_config());
        self.rules.extend(ck.rules.iter().cloned());
        r.err()
    }

    /// Terminal classification of a state with no enabled moves.
    pub fn terminal(&self, s: &State, heads: &[Head]) -> Outcome {
        if s.threads.len() == 1 && s.threads[0].0 == Flag::Main && matches!(heads[0], Head::Value) && s.chans.is_empty() {
            return Outcome::Finished(expr_str(&s.threads[0].1));
        }
        let blocked = s
            .threads
            .iter()
            .zip(heads)
            .filter_map(|((f, e), h)| match h {
                Head::Value => None,
                Head::Act(_, a) => Some(format!("{}: blocked on {} {}", flag_str(*f), a.verb(), a.endpoint().map_or(String::new(), |(e, _)| e.clone()))),
                Head::Stuck(m) => Some(format!("{}: {m}", flag_str(*f))),
                _ => Some(format!("{}: {}", flag_str(*f), expr_str(e))),
            })
            .collect();
        Outcome::Deadlocked { config: s.render(), blocked }
    }
}

/// Initial configuration of a program: one main thread.
pub fn initial(p: &Program) -> State {
    State::main(p.main.strip_locs())
}

/// Runs a program under a scheduler until it finishes, deadlocks or runs out
/// of steps.
pub fn run(p: &Program, opts: &RunOptions) -> RunResult {
    run_state(p, initial(p), opts)
}

pub fn run_state(p: &Program, mut s: State, opts: &RunOptions) -> RunResult {
    let mut m = Machine::new(&p.fun_defs, opts.check_preservation);
    let mut rng = match opts.scheduler {
        Scheduler::Seeded(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        Scheduler::PriorityGuided => None,
    };
    let mut trace = Vec::new();
    let mut steps = 0;
    s.normalize(&mut m.rules);
    if let Some(d) = m.preservation(&s) {
        let outcome = Outcome::PreservationFailed { step: 0, diagnostic: d.to_string() };
        return RunResult { outcome, steps, trace, rules: m.rules };
    }
    let outcome = loop {
        let heads = m.heads(&s);
        let moves = m.moves(&s, &heads);
        if moves.is_empty() {
            break m.terminal(&s, &heads);
        }
        if steps >= opts.max_steps {
            break Outcome::BudgetExceeded(steps);
        }
        let mv = match rng.as_mut() {
            Some(r) => &moves[r.gen_range(0..moves.len())],
            None => moves.iter().min_by_key(|mv| m.priority_of_move(&s, &heads, mv)).expect("non-empty"),
        };
        let (rule, redex) = m.apply(&mut s, &heads, mv);
        steps += 1;
        if opts.trace {
            trace.push(TraceStep { n: steps, rule, redex });
        }
        if let Some(d) = m.preservation(&s) {
            break Outcome::PreservationFailed { step: steps, diagnostic: d.to_string() };
        }
    };
    RunResult { outcome, steps, trace, rules: m.rules }
}

/// Result of exhaustive exploration.
#[derive(Clone, Debug, Serialize)]
pub struct Exploration {
    /// Distinct terminal normal forms, with the number of transitions that
    /// reached each.
    pub terminals: Vec<(Outcome, u64)>,
    pub states: usize,
    /// The state budget ran out before the space was covered.
    pub truncated: bool,
}

impl Exploration {
    pub fn deadlocks(&self) -> usize {
        self.terminals.iter().filter(|(o, _)| matches!(o, Outcome::Deadlocked { .. })).count()
    }
}

/// Breadth-first search over all interleavings, deduplicated by canonical
/// normal form. Thread-local steps commute with every other move, so when
/// one is enabled only the first is followed.
pub fn explore(p: &Program, max_states: usize) -> Exploration {
    let mut m = Machine::new(&p.fun_defs, false);
    let mut start = initial(p);
    start.normalize(&mut m.rules);
    let mut seen: HashMap<String, ()> = HashMap::new();
    let mut terminals: Vec<(String, Outcome, u64)> = Vec::new();
    let mut queue = VecDeque::new();
    seen.insert(start.canonical_key(), ());
    queue.push_back(start);
    let mut truncated = false;
    while let Some(s) = queue.pop_front() {
        let heads = m.heads(&s);
        let mut moves = m.moves(&s, &heads);
        if moves.is_empty() {
            let key = s.canonical_key();
            let out = m.terminal(&s, &heads);
            match terminals.iter_mut().find(|(k, _, _)| *k == key) {
                Some(t) => t.2 += 1,
                None => terminals.push((key, out, 1)),
            }
            continue;
        }
        if let Some(k) = moves.iter().position(|mv| matches!(mv, Move::Local(i) if matches!(heads[*i], Head::Local(..) | Head::Inst(..)))) {
            moves = vec![moves.swap_remove(k)];
        }
        for mv in &moves {
            let mut next = s.clone();
            m.apply(&mut next, &heads, mv);
            let key = next.canonical_key();
            if seen.contains_key(&key) {
                if m.moves(&next, &m.heads(&next)).is_empty() {
                    if let Some(t) = terminals.iter_mut().find(|(k, _, _)| *k == key) {
                        t.2 += 1;
                    }
                }
                continue;
            }
            if seen.len() >= max_states {
                truncated = true;
                continue;
            }
            seen.insert(key, ());
            queue.push_back(next);
        }
    }
    Exploration { terminals: terminals.into_iter().map(|(_, o, n)| (o, n)).collect(), states: seen.len(), truncated }
}

/// Human-readable summary of the live channels of a state.
pub fn channels_str(s: &State) -> Vec<String> {
    s.chans
        .iter()
        .map(|c| {
            let head = |side: usize| c.seq.advance(c.cursor(side)).ok().and_then(|q| q.head()).map_or("-".into(), |p| prio_str(&p));
            format!("{} {} next {} / {}", c.x, c.y, head(0), head(1))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_program;

    fn prog(src: &str) -> Program {
        parse_program(src).expect("parses")
    }

    fn outcome(src: &str, seed: u64) -> Outcome {
        let p = prog(src);
        run(&p, &RunOptions { scheduler: Scheduler::Seeded(seed), max_steps: 1000, check_preservation: true, trace: false }).outcome
    }

    #[test]
    fn arithmetic() {
        assert_eq!(outcome("main : Int\nmain = add (add 1 2) 4\n", 0), Outcome::Finished("7".into()));
    }

    #[test]
    fn beta_and_lets() {
        let src = "main : Int\nmain = let (a, b) = (1, 2) in let f = \\x : Int -> add x b in (); f a\n";
        assert_eq!(outcome(src, 3), Outcome::Finished("3".into()));
    }

    #[test]
    fn close_meets_wait() {
        let src = "main : ()\nmain = let (x, y) = new (Close 1) in fork {1} {top} (\\_ : () 1-> close {1} x); wait {1} y\n";
        for seed in 0..10 {
            assert_eq!(outcome(src, seed), Outcome::Finished("()".into()));
        }
    }

    #[test]
    fn fork_spawns_child() {
        let p = prog("main : ()\nmain = fork {top} {bot} (\\_ : () 1-> ())\n");
        let m = Machine::new(&p.fun_defs, false);
        let mut s = initial(&p);
        let heads = m.heads(&s);
        let mut m = m;
        let (rule, _) = m.apply(&mut s, &heads, &Move::Local(0));
        assert_eq!(rule, "R-Fork");
        assert_eq!(s.threads.len(), 2);
        assert_eq!(expr_str(&s.threads[1].1), "(\\_ : () 1-> ()) ()");
    }

    #[test]
    fn inst_pops_the_cursor() {
        let mut s = State::main(Expr::Inst(Box::new(Expr::var("a"))));
        s.chans.push(Chan { x: "a".into(), y: "b".into(), seq: PrioritySeq::progression(2, 2), cursors: (0, 0), types: None });
        let p = prog("main : ()\nmain = ()\n");
        let mut m = Machine::new(&p.fun_defs, false);
        let heads = m.heads(&s);
        m.apply(&mut s, &heads, &Move::Local(0));
        assert_eq!(expr_str(&s.threads[0].1), "a {2}");
        assert_eq!(s.chans[0].cursors, (1, 0));
    }

    #[test]
    fn normalization_is_idempotent() {
        let c = Config::par(Config::Thread(Flag::Child, Expr::unit()), Config::main(Expr::Int(1)));
        let n = congruence_normalize(&c);
        assert_eq!(n, Config::main(Expr::Int(1)));
        assert_eq!(congruence_normalize(&n), n);
    }

    const CROSSED: &str = "main : ()
main = let (x1, y1) = new (!1 Int ; Close 3) in
       let (x2, y2) = new (!2 Int ; Close 4) in
       fork {1} {top} (\\_ : () 1->
         let (n, y2) = receive {top} @Int {2} {4} @(Wait 4) y2 in
         let x1 = send {top} @Int {1} {3} @(Close 3) n x1 in
         close {3} x1; wait {4} y2);
       let (m, y1) = receive {top} @Int {1} {3} @(Wait 3) y1 in
       let x2 = send {top} @Int {2} {4} @(Close 4) m x2 in
       wait {3} y1; close {4} x2
";

    #[test]
    fn crossed_receives_deadlock_everywhere() {
        let p = prog(CROSSED);
        let e = explore(&p, 1000);
        assert_eq!(e.terminals.len(), 1);
        assert_eq!(e.deadlocks(), 1);
        let Outcome::Deadlocked { blocked, .. } = run(&p, &RunOptions::default()).outcome else { panic!("expected a deadlock") };
        assert_eq!(blocked.len(), 2);
        assert!(blocked.iter().all(|b| b.contains("blocked on receive")));
    }

    #[test]
    fn priority_guided_fires_the_least_action() {
        let src = "main : Int
main = let (x, y) = new (!1 Int ; Close 2) in
       fork {1} {top} (\\_ : () 1-> let x = send {top} @Int {1} {2} @(Close 2) 5 x in close {2} x);
       let (n, y) = receive {top} @Int {1} {2} @(Wait 2) y in
       wait {2} y; n
";
        let p = prog(src);
        let opts = RunOptions { scheduler: Scheduler::PriorityGuided, trace: true, check_preservation: true, ..RunOptions::default() };
        let r = run(&p, &opts);
        assert_eq!(r.outcome, Outcome::Finished("5".into()));
        let comms: Vec<&str> = r.trace.iter().filter(|s| s.rule.starts_with("R-C")).map(|s| s.rule.as_str()).collect();
        assert_eq!(comms, ["R-Com", "R-Close"]);
    }

    #[test]
    fn step_expr_is_call_by_value() {
        let defs = Defs::default();
        let e = Expr::app(Expr::lam("x", Type::Int, Expr::var("x"), Mult::Un), Expr::app(Expr::app(Expr::Const(Const::Add), Expr::Int(1)), Expr::Int(2)));
        let (rule, e) = step_expr(&e, &defs).unwrap();
        assert_eq!(rule, "E-Add");
        let (rule, e) = step_expr(&e, &defs).unwrap();
        assert_eq!((rule, e), ("E-App", Expr::Int(3)));
        assert!(step_expr(&Expr::Int(3), &defs).is_none());
    }

    #[test]
    fn unit_program_explores_to_one_terminal() {
        let e = explore(&prog("main : ()\nmain = ()\n"), 100);
        assert_eq!(e.terminals.len(), 1);
        assert!(!e.truncated);
    }
}
