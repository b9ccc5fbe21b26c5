//! Algorithmic typing of expressions, top-level definitions and runtime
//! configurations.

use crate::algebra::{dual, eval_priority, head_and_rest, priority_of, priority_of_binding, priority_of_ctx, unravel, wellformed, Atom, EvalError, FormError, Prio, PrioError, PrioritySet, Tri};
use crate::equiv::Equiv;
use crate::parser::{FunDef, Program};
use crate::render::{interval_str, prio_str, type_str};
use crate::syntax::*;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Code {
    PriorityOrder,
    UnusedLinear,
    DoubleUse,
    UnboundVariable,
    NotInInterval,
    TypeMismatch,
    UnboundTypeVar,
    UnboundPrioVar,
    NonContractive,
    NestedForallS,
    AbstractionNotUnrestricted,
    NotInPsi,
    SequenceExhausted,
    NewSkip,
    NotGround,
    MainNotUnrestricted,
    BadTypeApplication,
    UnknownLabel,
    TwoMainThreads,
    ChildNotUnit,
    DualMismatch,
}

impl Code {
    pub const ALL: [Code; 21] = [
        Code::PriorityOrder,
        Code::UnusedLinear,
        Code::DoubleUse,
        Code::UnboundVariable,
        Code::NotInInterval,
        Code::TypeMismatch,
        Code::UnboundTypeVar,
        Code::UnboundPrioVar,
        Code::NonContractive,
        Code::NestedForallS,
        Code::AbstractionNotUnrestricted,
        Code::NotInPsi,
        Code::SequenceExhausted,
        Code::NewSkip,
        Code::NotGround,
        Code::MainNotUnrestricted,
        Code::BadTypeApplication,
        Code::UnknownLabel,
        Code::TwoMainThreads,
        Code::ChildNotUnit,
        Code::DualMismatch,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Code::PriorityOrder => "priority-order",
            Code::UnusedLinear => "unused-linear",
            Code::DoubleUse => "double-use",
            Code::UnboundVariable => "unbound-variable",
            Code::NotInInterval => "not-in-interval",
            Code::TypeMismatch => "type-mismatch",
            Code::UnboundTypeVar => "unbound-type-var",
            Code::UnboundPrioVar => "unbound-prio-var",
            Code::NonContractive => "non-contractive",
            Code::NestedForallS => "nested-forall-s",
            Code::AbstractionNotUnrestricted => "abstraction-not-unrestricted",
            Code::NotInPsi => "not-in-psi",
            Code::SequenceExhausted => "sequence-exhausted",
            Code::NewSkip => "new-skip",
            Code::NotGround => "not-ground",
            Code::MainNotUnrestricted => "main-not-unrestricted",
            Code::BadTypeApplication => "bad-type-application",
            Code::UnknownLabel => "unknown-label",
            Code::TwoMainThreads => "two-main-threads",
            Code::ChildNotUnit => "child-not-unit",
            Code::DualMismatch => "dual-mismatch",
        }
    }
}

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub code: Code,
    pub loc: Option<Pos>,
    pub msg: String,
    /// Rules on the path from the root of the derivation to the failure.
    pub trace: Vec<String>,
}

impl Diagnostic {
    /// `ERROR code file:line:col message`.
    pub fn line(&self, file: &str) -> String {
        let loc = match self.loc {
            Some(p) => format!("{file}:{}:{}", p.line, p.col),
            None => format!("{file}:0:0"),
        };
        format!("ERROR {} {} {}", self.code, loc, self.msg)
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.loc {
            Some(p) => write!(f, "{} at {}: {}", self.code, p, self.msg),
            None => write!(f, "{}: {}", self.code, self.msg),
        }
    }
}

impl std::error::Error for Diagnostic {}

/// Type, priority and polymorphic contexts.
#[derive(Clone, Debug, Default)]
pub struct Env {
    pub delta: Delta,
    pub theta: Theta,
    pub psi: Psi,
}

/// Result of typing an expression: its type, the sequence it introduces
/// (only for `new S n m`), and its effect.
#[derive(Clone, Debug, PartialEq)]
pub struct Typing {
    pub ty: Type,
    pub seq: PrioritySeq,
    pub eff: Priority,
}

impl Typing {
    fn pure(ty: Type) -> Typing {
        Typing { ty, seq: PrioritySeq::Empty, eff: Priority::Bot }
    }
}

type R<T> = Result<T, Diagnostic>;

/// Splits `g` among several demand sets. Bindings satisfying `unr` go
/// everywhere, bindings demanded by nobody go to `default`.
pub fn split_context(g: &Gamma, unr: impl Fn(&Name, &Type) -> bool, demands: &[BTreeSet<Name>], default: usize) -> Result<Vec<Gamma>, Name> {
    let mut out = vec![Gamma::new(); demands.len()];
    for (x, t) in g {
        if unr(x, t) {
            for o in out.iter_mut() {
                o.insert(x.clone(), t.clone());
            }
            continue;
        }
        let who: Vec<usize> = demands.iter().enumerate().filter(|(_, d)| d.contains(x)).map(|(i, _)| i).collect();
        match who.as_slice() {
            [] => {
                out[default].insert(x.clone(), t.clone());
            }
            [i] => {
                out[*i].insert(x.clone(), t.clone());
            }
            _ => return Err(x.clone()),
        }
    }
    Ok(out)
}

/// Free variables that count as uses; `next x` only reads a sequence.
pub fn uses(e: &Expr) -> BTreeSet<Name> {
    fn erase(e: &Expr) -> Expr {
        match e {
            Expr::PApp(f, PriorityValue::Next(..)) => Expr::PApp(Box::new(erase(f)), PriorityValue::Prio(Priority::Bot)),
            _ => e.map_children(&mut erase),
        }
    }
    erase(e).fv()
}

fn is_endpoint_ref(e: &Expr, c: &str) -> bool {
    match e.strip() {
        Expr::Var(x) => x == c,
        Expr::Inst(i) => matches!(i.strip(), Expr::Var(x) if x == c),
        Expr::PApp(f, _) => matches!(f.strip(), Expr::Var(x) if x == c),
        _ => false,
    }
}

/// Whether `c` is consumed in a way whose number of instantiations is not
/// visible statically: passed to a definition or a variable, captured, etc.
fn dynamic_use(e: &Expr, c: &str) -> bool {
    match e.strip() {
        Expr::Var(x) => x == c,
        Expr::Inst(i) if matches!(i.strip(), Expr::Var(x) if x == c) => false,
        Expr::App(..) | Expr::TApp(..) | Expr::PApp(..) => {
            let (head, args) = e.strip().spine();
            if matches!(head, Expr::Var(x) if x == c) && args.iter().all(|a| matches!(a, Arg::Prio(_))) {
                return false;
            }
            let const_head = matches!(head, Expr::Const(_));
            dynamic_use(head, c)
                || args.iter().any(|a| match a {
                    Arg::Term(t) => !(const_head && is_endpoint_ref(t, c)) && dynamic_use(t, c),
                    _ => false,
                })
        }
        Expr::Match { scrut, branches } => (!is_endpoint_ref(scrut, c) && dynamic_use(scrut, c)) || branches.values().any(|(x, b)| x != c && dynamic_use(b, c)),
        Expr::Abs { var, body, .. } => var != c && dynamic_use(body, c),
        Expr::Let { var, bound, body } => dynamic_use(bound, c) || (var != c && dynamic_use(body, c)),
        Expr::LetPair { left, right, bound, body } => dynamic_use(bound, c) || (left != c && right != c && dynamic_use(body, c)),
        other => {
            let mut hit = false;
            other.for_each_child(&mut |ch| {
                hit |= dynamic_use(ch, c);
            });
            hit
        }
    }
}

fn seq_of(a: Type, k: Type) -> Type {
    if k == Type::Skip {
        a
    } else {
        Type::seq(a, k)
    }
}

fn step_of(seq: &PrioritySeq) -> Option<u64> {
    match seq {
        PrioritySeq::Progression { step, .. } => Some(step.unsigned_abs()),
        PrioritySeq::Symbolic { step, .. } => Some(*step),
        _ => None,
    }
}

fn undecided(t: Tri) -> &'static str {
    if t == Tri::Unknown {
        " (undecided)"
    } else {
        ""
    }
}

fn ints(n: usize) -> Vec<Name> {
    (1..=n).map(|i| format!("i{i}")).collect()
}

/// Type of a constant; `select` has no type of its own.
pub fn const_type(c: &Const) -> Option<Type> {
    use Priority::{Bot, Top};
    let v = |s: &str| Priority::var(s);
    let unr = |d, c| Type::arrow(d, c, Top, Bot, Mult::Un);
    let full = Interval::new(Bot, true, Top, false);
    let i = ints(3);
    Some(match c {
        Const::Unit => Type::Unit,
        Const::Add => unr(Type::Int, unr(Type::Int, Type::Int)),
        Const::Send | Const::Receive => {
            let a = Type::TVarF("a".into());
            let b = Type::TVarS("b".into());
            let chan = |t: Type| if *c == Const::Send { Type::out(t, v(&i[1])) } else { Type::inp(t, v(&i[1])) };
            let inner = if *c == Const::Send {
                unr(a.clone(), Type::arrow(Type::seq(chan(a), b.clone()), b, v(&i[0]), v(&i[1]), Mult::Lin))
            } else {
                Type::arrow(Type::seq(chan(a.clone()), b.clone()), Type::prod(a, b), Top, v(&i[1]), Mult::Un)
            };
            Type::forall_pf(
                &i[0],
                full.clone(),
                Type::forall_t(
                    "a",
                    v(&i[0]),
                    Type::forall_pf(&i[1], Interval::new(Bot, true, v(&i[0]), true), Type::forall_pf(&i[2], Interval::new(v(&i[1]), true, Top, false), Type::forall_t("b", v(&i[2]), inner))),
                ),
            )
        }
        Const::Fork => Type::forall_pf(
            &i[0],
            full,
            Type::forall_pf(&i[1], Interval::new(Bot, false, Top, false), unr(Type::arrow(Type::Unit, Type::Unit, v(&i[0]), v(&i[1]), Mult::Lin), Type::Unit)),
        ),
        Const::Close | Const::Wait => {
            let end = if *c == Const::Close { Type::Close(v(&i[0])) } else { Type::Wait(v(&i[0])) };
            Type::forall_pf(&i[0], full, Type::arrow(end, Type::Unit, Top, v(&i[0]), Mult::Un))
        }
        Const::Fix => {
            let a = Type::TVarF("a".into());
            let f = unr(a.clone(), a);
            Type::forall_pf(&i[0], Interval::new(Bot, false, Top, false), Type::forall_t("a", v(&i[0]), unr(unr(f.clone(), f.clone()), f)))
        }
        Const::Select(_) => return None,
    })
}

#[derive(Clone, Debug)]
enum Binder {
    Prio(Name, Interval),
    Ty(Name, Priority),
}

/// A signature read as leading binders followed by one arrow per parameter.
#[derive(Clone, Debug)]
struct Shape {
    binders: Vec<Binder>,
    params: Vec<Type>,
    arrows: Vec<(Priority, Priority, Mult)>,
    result: Type,
}

impl Shape {
    fn arity(&self) -> usize {
        self.binders.len() + self.params.len()
    }

    fn session_params(&self) -> bool {
        self.params.iter().any(|t| matches!(unravel(t), Type::ForallPS { .. }))
    }

    fn of(def: &FunDef) -> Result<Shape, String> {
        let mut t = def.sig.clone();
        let mut binders = Vec::new();
        loop {
            match t {
                Type::ForallPF { var, interval, body } => {
                    binders.push(Binder::Prio(var, interval));
                    t = *body;
                }
                Type::ForallT { var, prio, body } => {
                    binders.push(Binder::Ty(var, prio));
                    t = *body;
                }
                other => {
                    t = other;
                    break;
                }
            }
        }
        let mut params = Vec::new();
        let mut arrows = Vec::new();
        for _ in &def.params {
            match t {
                Type::Arrow { dom, cod, lo, hi, mult } => {
                    params.push(*dom);
                    arrows.push((lo, hi, mult));
                    t = *cod;
                }
                _ => return Err(format!("signature of {} has fewer arrows than the {} parameters", def.name, def.params.len())),
            }
        }
        Ok(Shape { binders, params, arrows, result: t })
    }
}

/// How one session-polymorphic argument's sequence relates to the call.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum KeyPart {
    /// Head is the value of binder `.0` displaced by `.1`; step `.2`.
    Rel(usize, u64, u64),
    Seq(PrioritySeq),
    Opaque(u64),
    Absent,
}

const MAX_KEYS: usize = 64;

/// Outcome of checking a program.
#[derive(Clone, Debug, Default)]
pub struct Report {
    pub diagnostics: Vec<Diagnostic>,
    /// Names of typing rules used.
    pub rules: BTreeSet<String>,
    /// Endpoints bound to a `new S n m`, with their type and sequence.
    pub channels: Vec<(Name, Type, PrioritySeq)>,
    pub main_type: Option<Type>,
}

impl Report {
    pub fn accepted(&self) -> bool {
        self.diagnostics.is_empty()
    }
}

/// Post-state of a sequential prefix: the popped Ψ and what a binder
/// inherits from the endpoint it consumed.
struct After {
    psi: Psi,
    theta: Theta,
    inherit: Option<PrioritySeq>,
    fresh: Vec<Name>,
}

pub struct Checker<'a> {
    funs: &'a BTreeMap<Name, FunDef>,
    shapes: HashMap<Name, Result<Shape, String>>,
    memo: HashMap<String, R<()>>,
    in_progress: HashSet<String>,
    keys: HashMap<Name, usize>,
    checked: BTreeSet<Name>,
    pub rules: BTreeSet<String>,
    pub channels: Vec<(Name, Type, PrioritySeq)>,
    stack: Vec<&'static str>,
    pos: Option<Pos>,
    fresh: u64,
}

impl<'a> Checker<'a> {
    pub fn new(funs: &'a BTreeMap<Name, FunDef>) -> Self {
        Checker {
            funs,
            shapes: HashMap::new(),
            memo: HashMap::new(),
            in_progress: HashSet::new(),
            keys: HashMap::new(),
            checked: BTreeSet::new(),
            rules: BTreeSet::new(),
            channels: Vec::new(),
            stack: Vec::new(),
            pos: None,
            fresh: 0,
        }
    }

    fn err(&self, code: Code, msg: impl Into<String>) -> Diagnostic {
        Diagnostic { code, loc: self.pos, msg: msg.into(), trace: self.stack.iter().map(|s| s.to_string()).collect() }
    }

    fn rule(&mut self, name: &'static str) {
        self.rules.insert(name.to_string());
    }

    fn form_err(&self, e: FormError) -> Diagnostic {
        let code = match e {
            FormError::UnboundTypeVar(_) => Code::UnboundTypeVar,
            FormError::UnboundPrioVar(_) => Code::UnboundPrioVar,
            FormError::NonContractive(_) => Code::NonContractive,
            FormError::NestedForallS(_) => Code::NestedForallS,
            FormError::NotSession(_) => Code::TypeMismatch,
        };
        self.err(code, e.to_string())
    }

    fn prio_err(&self, e: PrioError) -> Diagnostic {
        let code = match e {
            PrioError::UnboundTypeVar(_) => Code::UnboundTypeVar,
            PrioError::UnboundPrioVar(_) => Code::UnboundPrioVar,
            PrioError::NotGround(_) => Code::NotGround,
        };
        self.err(code, e.to_string())
    }

    fn wf(&self, env: &Env, t: &Type) -> R<()> {
        wellformed(&env.delta, &env.theta, t).map_err(|e| self.form_err(e))
    }

    fn unrestricted(&self, env: &Env, x: &str, t: &Type) -> bool {
        priority_of_binding(x, t, &env.delta, &env.theta, &env.psi).map(|s| s.is_top()).unwrap_or(false)
    }

    fn split(&self, env: &Env, g: &Gamma, demands: &[BTreeSet<Name>], default: usize) -> R<Vec<Gamma>> {
        split_context(g, |x, t| self.unrestricted(env, x, t), demands, default).map_err(|x| self.err(Code::DoubleUse, format!("linear variable {x} is used more than once")))
    }

    fn leaf(&self, env: &Env, g: &Gamma) -> R<()> {
        for (x, t) in g {
            if !self.unrestricted(env, x, t) {
                return Err(self.err(Code::UnusedLinear, format!("linear variable {x} : {} is never used", type_str(t))));
            }
        }
        Ok(())
    }

    fn only_unrestricted(&self, env: &Env, g: &Gamma, what: &str) -> R<()> {
        for (x, t) in g {
            if !self.unrestricted(env, x, t) {
                return Err(self.err(Code::AbstractionNotUnrestricted, format!("{what} captures linear variable {x} : {}", type_str(t))));
            }
        }
        Ok(())
    }

    fn ctx_set(&self, env: &Env, g: &Gamma) -> R<PrioritySet> {
        priority_of_ctx(g, &env.delta, &env.theta, &env.psi).map_err(|e| self.prio_err(e))
    }

    fn lt_set(&self, env: &Env, p: &Priority, set: &PrioritySet, what: &str) -> R<()> {
        match set.lt(&Prio::new(&env.theta), p) {
            Tri::Yes => Ok(()),
            t => Err(self.err(Code::PriorityOrder, format!("{what} fails: {} ≮ {set}{}", prio_str(p), undecided(t)))),
        }
    }

    fn lt(&self, env: &Env, a: &Priority, b: &Priority, what: &str) -> R<()> {
        match Prio::new(&env.theta).lt(a, b) {
            Tri::Yes => Ok(()),
            t => Err(self.err(Code::PriorityOrder, format!("{what} fails: {} ≮ {}{}", prio_str(a), prio_str(b), undecided(t)))),
        }
    }

    fn le(&self, env: &Env, a: &Priority, b: &Priority, what: &str) -> R<()> {
        match Prio::new(&env.theta).le(a, b) {
            Tri::Yes => Ok(()),
            t => Err(self.err(Code::PriorityOrder, format!("{what} fails: {} ≰ {}{}", prio_str(a), prio_str(b), undecided(t)))),
        }
    }

    /// `p` is below or equal to every member of `set`.
    fn le_set(&self, env: &Env, p: &Priority, set: &PrioritySet, what: &str) -> R<()> {
        let ctx = Prio::new(&env.theta);
        for a in &set.atoms {
            let t = match a {
                Atom::Point(Priority::Top) => Tri::Yes,
                Atom::Point(q) | Atom::Prog { start: q, .. } => ctx.le(p, q),
                Atom::Span(iv) => ctx.le(p, &iv.lo),
            };
            if t != Tri::Yes {
                return Err(self.err(Code::PriorityOrder, format!("{what} fails: {} ≰ {set}{}", prio_str(p), undecided(t))));
            }
        }
        Ok(())
    }

    fn join(&self, env: &Env, a: &Priority, b: &Priority) -> Priority {
        Prio::new(&env.theta).max(a, b).unwrap_or(Priority::Top)
    }

    fn eval(&self, env: &Env, sigma: &PriorityValue) -> R<Priority> {
        let p = eval_priority(sigma, &env.psi).map_err(|e| match e {
            EvalError::NotInPsi(_) => self.err(Code::NotInPsi, e.to_string()),
            EvalError::Exhausted(_) => self.err(Code::SequenceExhausted, e.to_string()),
        })?;
        if let Some(v) = p.fpv().into_iter().find(|v| !env.theta.contains_key(v)) {
            return Err(self.err(Code::UnboundPrioVar, format!("unbound priority variable {v}")));
        }
        Ok(p)
    }

    fn equiv(&self, env: &Env, a: &Type, b: &Type) -> bool {
        a == b || Equiv::new(&env.theta).eq(a, b)
    }

    fn fresh_prio(&mut self) -> Name {
        self.fresh += 1;
        format!("%q{}", self.fresh)
    }

    /// ⌊S⌋ of the continuation of an endpoint whose remaining sequence is
    /// `seq`, when known.
    fn cont_priority(&self, env: &Env, ty: &Type, seq: Option<&PrioritySeq>) -> R<PrioritySet> {
        let r = match seq {
            Some(s) => {
                let mut psi = env.psi.clone();
                psi.insert("%k", ty.clone(), s.clone());
                priority_of_binding("%k", ty, &env.delta, &env.theta, &psi)
            }
            None => priority_of(ty, &env.delta, &env.theta, &env.psi),
        };
        r.map_err(|e| self.prio_err(e))
    }

    fn channel_seq(env: &Env, e: &Expr) -> Option<PrioritySeq> {
        match e.strip() {
            Expr::Var(x) => env.psi.get(x).cloned(),
            Expr::Inst(i) => match i.strip() {
                Expr::Var(x) => env.psi.get(x)?.tail().ok(),
                _ => None,
            },
            Expr::PApp(f, _) => match f.strip() {
                Expr::Var(x) => env.psi.get(x).cloned(),
                _ => None,
            },
            _ => None,
        }
    }

    // ------------------------------------------------------------ expressions

    pub fn check(&mut self, env: &Env, g: &Gamma, e: &Expr) -> R<Typing> {
        if let Expr::At(p, inner) = e {
            let saved = self.pos;
            self.pos = Some(*p);
            let r = self.check(env, g, inner);
            if r.is_ok() {
                self.pos = saved;
            }
            return r;
        }
        let label = match e {
            Expr::Var(_) => "T-Var",
            Expr::Ref(_) | Expr::App(..) | Expr::TApp(..) | Expr::PApp(..) => "T-App",
            Expr::Const(_) | Expr::Int(_) => "T-Const",
            Expr::Abs { .. } => "T-Abs",
            Expr::Pair(..) => "T-Pair",
            Expr::Let { .. } => "T-Let",
            Expr::LetPair { .. } => "T-LetPair",
            Expr::SeqE(..) => "T-Seq",
            Expr::TAbs { .. } => "T-TAbs",
            Expr::PAbs { .. } => "T-PAbs",
            Expr::Match { .. } => "T-Match",
            Expr::New(_) => "T-New",
            Expr::NewPoly(..) => "T-NewPoly",
            Expr::Inst(_) => "T-Inst",
            Expr::At(..) => unreachable!(),
        };
        self.stack.push(label);
        let r = self.check_inner(env, g, e);
        if r.is_ok() {
            self.stack.pop();
        }
        r
    }

    fn check_inner(&mut self, env: &Env, g: &Gamma, e: &Expr) -> R<Typing> {
        match e {
            Expr::Var(x) => {
                self.rule("T-Var");
                let t = g.get(x).cloned().ok_or_else(|| self.err(Code::UnboundVariable, format!("unbound variable {x}")))?;
                let mut rest = g.clone();
                rest.remove(x);
                self.leaf(env, &rest)?;
                Ok(Typing::pure(t))
            }
            Expr::Int(_) => {
                self.rule("T-Const");
                self.leaf(env, g)?;
                Ok(Typing::pure(Type::Int))
            }
            Expr::Const(c) => {
                self.rule("T-Const");
                self.leaf(env, g)?;
                match const_type(c) {
                    Some(t) => Ok(Typing::pure(t)),
                    None => Err(self.err(Code::TypeMismatch, "select must be applied to an endpoint")),
                }
            }
            Expr::Ref(_) | Expr::App(..) | Expr::TApp(..) | Expr::PApp(..) => self.check_spine(env, g, e),
            Expr::Abs { var, ty, body, mult } => self.check_abs(env, g, var, ty, body, *mult),
            Expr::Pair(a, b) => self.check_pair(env, g, a, b),
            Expr::Let { var, bound, body } => self.check_let(env, g, std::slice::from_ref(var), bound, body, "T-Let"),
            Expr::LetPair { left, right, bound, body } => self.check_let(env, g, &[left.clone(), right.clone()], bound, body, "T-LetPair"),
            Expr::SeqE(a, b) => self.check_let(env, g, &[], a, b, "T-Seq"),
            Expr::TAbs { var, prio, body } => {
                self.rule("T-TAbs");
                self.only_unrestricted(env, g, "type abstraction")?;
                if let Some(v) = prio.fpv().into_iter().find(|v| !env.theta.contains_key(v)) {
                    return Err(self.err(Code::UnboundPrioVar, format!("unbound priority variable {v}")));
                }
                let mut env2 = env.clone();
                env2.delta.insert(var.clone(), prio.clone());
                let tb = self.check(&env2, g, body)?;
                Ok(Typing::pure(Type::forall_t(var.clone(), prio.clone(), tb.ty)))
            }
            Expr::PAbs { var, interval, body } => {
                self.rule("T-PAbs");
                self.only_unrestricted(env, g, "priority abstraction")?;
                if let Some(v) = interval.fpv().into_iter().find(|v| !env.theta.contains_key(v)) {
                    return Err(self.err(Code::UnboundPrioVar, format!("unbound priority variable {v}")));
                }
                let mut env2 = env.clone();
                env2.theta.insert(var.clone(), interval.clone());
                let tb = self.check(&env2, g, body)?;
                Ok(Typing::pure(Type::forall_pf(var.clone(), interval.clone(), tb.ty)))
            }
            Expr::Match { scrut, branches } => self.check_match(env, g, scrut, branches),
            Expr::New(s) => {
                self.rule("T-New");
                self.leaf(env, g)?;
                self.wf(env, s)?;
                match unravel(s) {
                    Type::Skip => return Err(self.err(Code::NewSkip, format!("new on {} which is equivalent to Skip", type_str(s)))),
                    Type::ForallPS { .. } => return Err(self.err(Code::TypeMismatch, format!("new on priority-polymorphic {} needs a sequence", type_str(s)))),
                    _ => {}
                }
                let d = dual(s).map_err(|e| self.form_err(e))?;
                Ok(Typing::pure(Type::prod(s.clone(), d)))
            }
            Expr::NewPoly(s, start, step) => {
                self.rule("T-NewPoly");
                self.leaf(env, g)?;
                self.wf(env, s)?;
                if !matches!(unravel(s), Type::ForallPS { .. }) {
                    return Err(self.err(Code::TypeMismatch, format!("new with a sequence needs a priority-polymorphic session, found {}", type_str(s))));
                }
                if *step <= 0 {
                    return Err(self.err(Code::TypeMismatch, format!("sequence step must be positive, found {step}")));
                }
                let d = dual(s).map_err(|e| self.form_err(e))?;
                Ok(Typing { ty: Type::prod(s.clone(), d), seq: PrioritySeq::progression(*start, *step), eff: Priority::Bot })
            }
            Expr::Inst(inner) => {
                self.rule("T-Inst");
                let x = match inner.strip() {
                    Expr::Var(x) => x.clone(),
                    _ => return Err(self.err(Code::TypeMismatch, "inst expects a variable")),
                };
                let t = g.get(&x).cloned().ok_or_else(|| self.err(Code::UnboundVariable, format!("unbound variable {x}")))?;
                let mut rest = g.clone();
                rest.remove(&x);
                self.leaf(env, &rest)?;
                let (var, iv, body) = match unravel(&t) {
                    Type::ForallPS { var, interval, body } => (var, interval, body),
                    other => return Err(self.err(Code::TypeMismatch, format!("inst on {x} : {}, not a priority-polymorphic session", type_str(&other)))),
                };
                let seq = env.psi.get(&x).ok_or_else(|| self.err(Code::NotInPsi, format!("{x} has no priority sequence")))?;
                let p = seq.head().ok_or_else(|| self.err(Code::SequenceExhausted, format!("priority sequence of {x} is exhausted")))?;
                let t = Prio::new(&env.theta).in_interval(&p, &iv);
                if t != Tri::Yes {
                    return Err(self.err(Code::NotInInterval, format!("{} ∉ {}{}", prio_str(&p), interval_str(&iv), undecided(t))));
                }
                Ok(Typing::pure(body.subst_prio(&var, &p)))
            }
            Expr::At(..) => unreachable!(),
        }
    }

    fn check_abs(&mut self, env: &Env, g: &Gamma, var: &Name, ty: &Type, body: &Expr, mult: Mult) -> R<Typing> {
        self.rule(if mult == Mult::Lin { "T-AbsLin" } else { "T-AbsUn" });
        self.wf(env, ty)?;
        let mut captured = g.clone();
        if let Some(old) = captured.remove(var) {
            if !self.unrestricted(env, var, &old) {
                return Err(self.err(Code::UnusedLinear, format!("linear variable {var} is shadowed before use")));
            }
        }
        let set = self.ctx_set(env, &captured)?;
        if mult == Mult::Un {
            self.only_unrestricted(env, &captured, "unrestricted abstraction")?;
        }
        let lo = set.min(&Prio::new(&env.theta)).ok_or_else(|| self.err(Code::NotGround, format!("cannot order the captured context {set}")))?;
        let mut env2 = env.clone();
        env2.psi.remove(var);
        let mut gb = captured;
        gb.insert(var.clone(), ty.clone());
        let tb = self.check(&env2, &gb, body)?;
        Ok(Typing::pure(Type::arrow(ty.clone(), tb.ty, lo, tb.eff, mult)))
    }

    fn check_pair(&mut self, env: &Env, g: &Gamma, a: &Expr, b: &Expr) -> R<Typing> {
        self.rule("T-Pair");
        let parts = self.split(env, g, &[uses(a), uses(b)], 1)?;
        let ta = self.check(env, &parts[0], a)?;
        let af = self.after(env, &parts[0], a)?;
        let env2 = Env { delta: env.delta.clone(), theta: af.theta, psi: af.psi };
        let tb = self.check(&env2, &parts[1], b)?;
        let gset = self.ctx_set(&env2, &parts[1])?;
        self.lt_set(&env2, &ta.eff, &gset, "ρ₁ < ⌊Γ₂⌋")?;
        let t1 = priority_of(&ta.ty, &env2.delta, &env2.theta, &env2.psi).map_err(|e| self.prio_err(e))?;
        self.lt_set(&env2, &tb.eff, &t1, "ρ₂ < ⌊T₁⌋")?;
        let eff = self.join(&env2, &ta.eff, &tb.eff);
        self.close_scope(&af.fresh, Typing::pure(Type::prod(ta.ty, tb.ty)), eff)
    }

    fn close_scope(&self, fresh: &[Name], mut t: Typing, eff: Priority) -> R<Typing> {
        let leaks = |s: BTreeSet<Name>| fresh.iter().any(|q| s.contains(q));
        t.eff = if leaks(eff.fpv()) { Priority::Top } else { eff };
        if leaks(t.ty.fpv()) {
            return Err(self.err(Code::NotGround, format!("result type {} mentions a priority local to this expression", type_str(&t.ty))));
        }
        Ok(t)
    }

    /// Pops Ψ by the instantiations in `e1` and works out what a binder
    /// inherits from the endpoint `e1` consumed.
    fn after(&mut self, env: &Env, g1: &Gamma, e1: &Expr) -> R<After> {
        let mut psi = env.psi.clone();
        for (x, n) in e1.inst_counts() {
            if let Some((t, s)) = psi.map.get(&x).cloned() {
                let s2 = s.advance(n).map_err(|_| self.err(Code::SequenceExhausted, format!("priority sequence of {x} is exhausted")))?;
                psi.insert(x, t, s2);
            }
        }
        let consumed: Vec<Name> = uses(e1).into_iter().filter(|x| psi.contains(x) && g1.get(x).is_some_and(|t| !self.unrestricted(env, x, t))).collect();
        let mut theta = env.theta.clone();
        let mut fresh = Vec::new();
        let inherit = match consumed.as_slice() {
            [c] => {
                let seq = psi.get(c).cloned().expect("consumed endpoint is tracked");
                if !is_endpoint_ref(e1, c) && dynamic_use(e1, c) {
                    match (step_of(&seq), seq.head()) {
                        (Some(step), Some(h)) => {
                            let q = self.fresh_prio();
                            theta.insert(q.clone(), Interval::new(h, false, Priority::Top, true));
                            fresh.push(q.clone());
                            Some(PrioritySeq::Symbolic { head: Priority::var(q), step })
                        }
                        _ => None,
                    }
                } else {
                    Some(seq)
                }
            }
            _ => None,
        };
        for c in &consumed {
            psi.remove(c);
        }
        Ok(After { psi, theta, inherit, fresh })
    }

    fn check_let(&mut self, env: &Env, g: &Gamma, binders: &[Name], bound: &Expr, body: &Expr, rule: &'static str) -> R<Typing> {
        self.rule(rule);
        let mut body_uses = uses(body);
        for b in binders {
            body_uses.remove(b);
        }
        let parts = self.split(env, g, &[uses(bound), body_uses], 1)?;
        let t1 = self.check(env, &parts[0], bound)?;
        let comps: Vec<Type> = match binders.len() {
            0 => {
                if !self.equiv(env, &t1.ty, &Type::Unit) {
                    return Err(self.err(Code::TypeMismatch, format!("expected (), found {}", type_str(&t1.ty))));
                }
                vec![]
            }
            1 => vec![t1.ty.clone()],
            _ => match unravel(&t1.ty) {
                Type::Prod(a, b) => vec![*a, *b],
                other => return Err(self.err(Code::TypeMismatch, format!("expected a pair, found {}", type_str(&other)))),
            },
        };
        let af = self.after(env, &parts[0], bound)?;
        let mut psi = af.psi.restrict(|x| parts[1].contains_key(x));
        let env_mid = Env { delta: env.delta.clone(), theta: af.theta, psi: psi.clone() };
        let gset = self.ctx_set(&env_mid, &parts[1])?;
        self.lt_set(&env_mid, &t1.eff, &gset, "ρ₁ < ⌊Γ₂⌋")?;
        let mut g2 = parts[1].clone();
        for (b, t) in binders.iter().zip(&comps) {
            if let Some(old) = g2.get(b) {
                if !self.unrestricted(&env_mid, b, old) {
                    return Err(self.err(Code::UnusedLinear, format!("linear variable {b} is shadowed before use")));
                }
            }
            psi.remove(b);
            g2.insert(b.clone(), t.clone());
        }
        if binders.len() == 2 && !t1.seq.is_empty() {
            for (b, t) in binders.iter().zip(&comps) {
                psi.insert(b.clone(), t.clone(), t1.seq.clone());
                self.channels.push((b.clone(), t.clone(), t1.seq.clone()));
            }
        } else if let (2, Expr::Pair(a, b)) = (binders.len(), bound.strip()) {
            // a pair of live endpoints, as left behind by channel creation
            for (bnd, part) in binders.iter().zip([a, b]) {
                if let Expr::Var(v) = part.strip() {
                    if let Some((t, s)) = env.psi.map.get(v) {
                        psi.insert(bnd.clone(), t.clone(), s.clone());
                    }
                }
            }
        } else if let Some(seq) = af.inherit {
            let sess: Vec<(&Name, &Type)> = binders.iter().zip(&comps).filter(|(_, t)| t.is_session()).collect();
            if let [(b, t)] = sess.as_slice() {
                psi.insert((*b).clone(), (*t).clone(), seq);
            }
        }
        let env2 = Env { psi, ..env_mid };
        let t2 = self.check(&env2, &g2, body)?;
        let eff = self.join(&env2, &t1.eff, &t2.eff);
        self.close_scope(&af.fresh, Typing { ty: t2.ty, seq: t2.seq, eff: Priority::Bot }, eff)
    }

    fn check_match(&mut self, env: &Env, g: &Gamma, scrut: &Expr, branches: &BTreeMap<Label, (Name, Expr)>) -> R<Typing> {
        self.rule("T-Match");
        let mut branch_uses = BTreeSet::new();
        for (x, b) in branches.values() {
            let mut u = uses(b);
            u.remove(x);
            branch_uses.extend(u);
        }
        let parts = self.split(env, g, &[uses(scrut), branch_uses], 1)?;
        let ts = self.check(env, &parts[0], scrut)?;
        let (head, k) = head_and_rest(&ts.ty);
        let (offered, pi) = match head {
            Type::ExtChoice(m, p) => (m, p),
            other => return Err(self.err(Code::TypeMismatch, format!("match needs an external choice, found {}", type_str(&other)))),
        };
        if let Some(l) = branches.keys().find(|l| !offered.contains_key(*l)) {
            return Err(self.err(Code::UnknownLabel, format!("label {l} is not offered by {}", type_str(&ts.ty))));
        }
        if let Some(l) = offered.keys().find(|l| !branches.contains_key(*l)) {
            return Err(self.err(Code::UnknownLabel, format!("no branch for label {l}")));
        }
        let chan = Self::channel_seq(env, scrut);
        let af = self.after(env, &parts[0], scrut)?;
        let env2 = Env { delta: env.delta.clone(), theta: af.theta, psi: af.psi.restrict(|x| parts[1].contains_key(x)) };
        let gset = self.ctx_set(&env2, &parts[1])?;
        self.lt_set(&env2, &ts.eff, &gset, "ρ₁ < ⌊Γ₂⌋")?;
        self.lt_set(&env2, &pi, &gset, "π < ⌊Γ₂⌋")?;
        let mut eff = self.join(&env2, &ts.eff, &pi);
        let mut ty: Option<Type> = None;
        for (l, (x, body)) in branches {
            let sl = seq_of(offered[l].clone(), k.clone());
            let set = self.cont_priority(env, &sl, chan.as_ref())?;
            self.lt_set(env, &pi, &set, &format!("π < ⌊S_{l}⌋"))?;
            let mut gb = parts[1].clone();
            if let Some(old) = gb.get(x) {
                if !self.unrestricted(&env2, x, old) {
                    return Err(self.err(Code::UnusedLinear, format!("linear variable {x} is shadowed before use")));
                }
            }
            gb.insert(x.clone(), sl.clone());
            let mut envb = env2.clone();
            envb.psi.remove(x);
            if let Some(seq) = &af.inherit {
                envb.psi.insert(x.clone(), sl.clone(), seq.clone());
            }
            let tb = self.check(&envb, &gb, body)?;
            eff = self.join(&envb, &eff, &tb.eff);
            match &ty {
                None => ty = Some(tb.ty),
                Some(t0) => {
                    if !self.equiv(&envb, t0, &tb.ty) {
                        return Err(self.err(Code::TypeMismatch, format!("branches have types {} and {}", type_str(t0), type_str(&tb.ty))));
                    }
                }
            }
        }
        let ty = ty.ok_or_else(|| self.err(Code::TypeMismatch, "match without branches"))?;
        self.close_scope(&af.fresh, Typing::pure(ty), eff)
    }

    fn check_select(&mut self, env: &Env, g: &Gamma, l: &Label, a: &Expr) -> R<Typing> {
        self.rule("T-Sel");
        let ta = self.check(env, g, a)?;
        let (head, k) = head_and_rest(&ta.ty);
        let (branches, pi) = match head {
            Type::IntChoice(m, p) => (m, p),
            other => return Err(self.err(Code::TypeMismatch, format!("select needs an internal choice, found {}", type_str(&other)))),
        };
        if !branches.contains_key(l) {
            return Err(self.err(Code::UnknownLabel, format!("label {l} is not offered by {}", type_str(&ta.ty))));
        }
        let chan = Self::channel_seq(env, a);
        for (lab, s) in &branches {
            let cont = seq_of(s.clone(), k.clone());
            let set = self.cont_priority(env, &cont, chan.as_ref())?;
            self.lt_set(env, &pi, &set, &format!("π < ⌊S_{lab}⌋"))?;
        }
        // selection itself carries no effect
        Ok(Typing { ty: seq_of(branches[l].clone(), k), seq: PrioritySeq::Empty, eff: ta.eff })
    }

    // ----------------------------------------------------------------- spines

    fn check_spine(&mut self, env: &Env, g: &Gamma, e: &Expr) -> R<Typing> {
        let mut args: Vec<(Arg<'_>, Option<Pos>)> = Vec::new();
        let mut cur = e;
        let mut pos = None;
        loop {
            match cur {
                Expr::At(p, inner) => {
                    pos = Some(*p);
                    cur = inner;
                }
                Expr::App(f, a) => {
                    args.push((Arg::Term(a), pos.take()));
                    cur = f;
                }
                Expr::TApp(f, t) => {
                    args.push((Arg::Type(t), pos.take()));
                    cur = f;
                }
                Expr::PApp(f, p) => {
                    args.push((Arg::Prio(p), pos.take()));
                    cur = f;
                }
                _ => break,
            }
        }
        args.reverse();
        let head = cur;
        let head_pos = pos;
        let mut demands = vec![uses(head)];
        for (a, _) in &args {
            demands.push(match a {
                Arg::Term(t) => uses(t),
                _ => BTreeSet::new(),
            });
        }
        let parts = self.split(env, g, &demands, 0)?;
        let saved = self.pos;
        if head_pos.is_some() {
            self.pos = head_pos;
        }
        let mut skip = 0;
        let mut acc = match head {
            Expr::Const(Const::Select(l)) if matches!(args.first(), Some((Arg::Term(_), _))) => {
                self.leaf(env, &parts[0])?;
                let Some((Arg::Term(a), _)) = args.first() else { unreachable!() };
                skip = 1;
                self.check_select(env, &parts[1], l, a)?
            }
            Expr::Ref(f) => {
                self.rule("T-Ref");
                self.leaf(env, &parts[0])?;
                let def = self.funs.get(f).ok_or_else(|| self.err(Code::UnboundVariable, format!("unknown definition {f}")))?;
                Typing::pure(def.sig.clone())
            }
            _ => self.check(env, &parts[0], head)?,
        };
        self.pos = saved;
        for (i, (arg, p)) in args.iter().enumerate().skip(skip) {
            let saved = self.pos;
            if p.is_some() {
                self.pos = *p;
            }
            acc = match arg {
                Arg::Type(t) => self.tapp(env, acc, t)?,
                Arg::Prio(s) => self.papp(env, acc, s)?,
                Arg::Term(a) => self.app(env, acc, &parts[i + 1], a)?,
            };
            self.pos = saved;
        }
        if let Expr::Ref(f) = head {
            let shape = self.shape(f)?;
            if args.len() >= shape.arity() {
                self.check_call(env, f, &shape, &args)?;
            } else if shape.session_params() {
                return Err(self.err(Code::TypeMismatch, format!("{f} takes session-polymorphic arguments and must be applied to all {} arguments", shape.arity())));
            }
        }
        Ok(acc)
    }

    fn tapp(&mut self, env: &Env, cur: Typing, t: &Type) -> R<Typing> {
        self.rule("T-TApp");
        self.wf(env, t)?;
        match unravel(&cur.ty) {
            Type::ForallT { var, prio, body } => {
                let set = priority_of(t, &env.delta, &env.theta, &env.psi).map_err(|e| self.prio_err(e))?;
                let m = set.contains(&Prio::new(&env.theta), &prio);
                if m != Tri::Yes {
                    return Err(self.err(Code::BadTypeApplication, format!("{} ∉ ⌊{}⌋ = {set}{}", prio_str(&prio), type_str(t), undecided(m))));
                }
                Ok(Typing { ty: body.subst_type(&var, t), seq: PrioritySeq::Empty, eff: cur.eff })
            }
            other => Err(self.err(Code::BadTypeApplication, format!("type application of a value of type {}", type_str(&other)))),
        }
    }

    fn papp(&mut self, env: &Env, cur: Typing, sigma: &PriorityValue) -> R<Typing> {
        self.rule("T-PApp");
        let p = self.eval(env, sigma)?;
        match unravel(&cur.ty) {
            Type::ForallPF { var, interval, body } | Type::ForallPS { var, interval, body } => {
                let m = Prio::new(&env.theta).in_interval(&p, &interval);
                if m != Tri::Yes {
                    return Err(self.err(Code::NotInInterval, format!("{} ∉ {}{}", prio_str(&p), interval_str(&interval), undecided(m))));
                }
                Ok(Typing { ty: body.subst_prio(&var, &p), seq: PrioritySeq::Empty, eff: cur.eff })
            }
            other => Err(self.err(Code::TypeMismatch, format!("priority application of a value of type {}", type_str(&other)))),
        }
    }

    fn app(&mut self, env: &Env, cur: Typing, g_arg: &Gamma, a: &Expr) -> R<Typing> {
        self.rule("T-App");
        let (dom, cod, lo, hi) = match unravel(&cur.ty) {
            Type::Arrow { dom, cod, lo, hi, .. } => (*dom, *cod, lo, hi),
            other => return Err(self.err(Code::TypeMismatch, format!("cannot apply a value of type {}", type_str(&other)))),
        };
        let ta = self.check(env, g_arg, a)?;
        if ta.ty != dom {
            if !Equiv::new(&env.theta).sub(&ta.ty, &dom) {
                return Err(self.err(Code::TypeMismatch, format!("argument has type {}, expected {}", type_str(&ta.ty), type_str(&dom))));
            }
            self.rule("T-Eq");
        }
        let gset = self.ctx_set(env, g_arg)?;
        self.lt_set(env, &cur.eff, &gset, "ρ₁ < ⌊Γ₂⌋")?;
        self.lt(env, &ta.eff, &lo, "ρ₂ < π")?;
        let eff = self.join(env, &cur.eff, &ta.eff);
        let eff = self.join(env, &eff, &hi);
        Ok(Typing { ty: cod, seq: PrioritySeq::Empty, eff })
    }

    // ------------------------------------------------------------ definitions

    fn shape(&mut self, f: &str) -> R<Shape> {
        if !self.shapes.contains_key(f) {
            let def = self.funs.get(f).ok_or_else(|| self.err(Code::UnboundVariable, format!("unknown definition {f}")))?;
            self.shapes.insert(f.to_string(), Shape::of(def));
        }
        self.shapes[f].clone().map_err(|m| self.err(Code::TypeMismatch, m))
    }

    fn key_part(seq: &PrioritySeq, vals: &[Option<Priority>]) -> KeyPart {
        let (Some(step), Some(h)) = (step_of(seq), seq.head()) else {
            return KeyPart::Seq(seq.clone());
        };
        let (hb, hn) = h.split();
        let best = vals
            .iter()
            .enumerate()
            .filter_map(|(j, v)| {
                let (vb, vn) = v.as_ref()?.split();
                (vb == hb && hn >= vn && !matches!(hb, Base::Top | Base::Bot)).then_some(((hn - vn) as u64, j))
            })
            .min();
        match best {
            Some((off, j)) => KeyPart::Rel(j, off, step),
            None => match h {
                Priority::Lit(n) => KeyPart::Seq(PrioritySeq::Progression { start: n, step: step as i64, consumed: 0 }),
                _ => KeyPart::Opaque(step),
            },
        }
    }

    fn check_call(&mut self, env: &Env, f: &str, shape: &Shape, args: &[(Arg<'_>, Option<Pos>)]) -> R<()> {
        let nb = shape.binders.len();
        let vals: Vec<Option<Priority>> = shape
            .binders
            .iter()
            .zip(args)
            .map(|(b, (a, _))| match (b, a) {
                (Binder::Prio(..), Arg::Prio(s)) => eval_priority(s, &env.psi).ok(),
                _ => None,
            })
            .collect();
        let key: Vec<KeyPart> = shape
            .params
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if !matches!(unravel(t), Type::ForallPS { .. }) {
                    return KeyPart::Absent;
                }
                match &args[nb + i].0 {
                    Arg::Term(e) => match e.strip() {
                        Expr::Var(x) => env.psi.get(x).map_or(KeyPart::Absent, |s| Self::key_part(s, &vals)),
                        _ => KeyPart::Absent,
                    },
                    _ => KeyPart::Absent,
                }
            })
            .collect();
        self.check_def(f, shape, key)
    }

    fn check_def(&mut self, f: &str, shape: &Shape, key: Vec<KeyPart>) -> R<()> {
        let k = format!("{f}|{key:?}");
        if let Some(r) = self.memo.get(&k) {
            return r.clone();
        }
        if self.in_progress.contains(&k) {
            return Ok(());
        }
        let n = self.keys.entry(f.to_string()).or_default();
        *n += 1;
        if *n > MAX_KEYS {
            return Err(self.err(Code::NotGround, format!("{f} needs more than {MAX_KEYS} priority specialisations")));
        }
        self.in_progress.insert(k.clone());
        let saved_pos = self.pos;
        let saved_stack = std::mem::take(&mut self.stack);
        let r = self.check_def_body(f, shape, &key);
        self.pos = saved_pos;
        self.stack = saved_stack;
        self.in_progress.remove(&k);
        self.checked.insert(f.to_string());
        self.memo.insert(k, r.clone());
        r
    }

    fn check_def_body(&mut self, f: &str, shape: &Shape, key: &[KeyPart]) -> R<()> {
        let def = self.funs[f].clone();
        self.pos = Some(def.pos);
        self.stack.push("T-Def");
        self.rule("T-Def");
        let mut env = Env::default();
        for b in &shape.binders {
            match b {
                Binder::Prio(v, iv) => {
                    env.theta.insert(v.clone(), iv.clone());
                }
                Binder::Ty(v, p) => {
                    env.delta.insert(v.clone(), p.clone());
                }
            }
        }
        let mut g = Gamma::new();
        for (i, (x, t)) in def.params.iter().zip(&shape.params).enumerate() {
            g.insert(x.clone(), t.clone());
            let seq = match &key[i] {
                KeyPart::Rel(j, off, step) => match &shape.binders[*j] {
                    Binder::Prio(v, _) => Some(PrioritySeq::Symbolic { head: Priority::var(v.clone()).shift(*off), step: *step }),
                    Binder::Ty(..) => None,
                },
                KeyPart::Seq(s) => Some(s.clone()),
                KeyPart::Opaque(step) => {
                    let q = self.fresh_prio();
                    env.theta.insert(q.clone(), Interval::full_open());
                    Some(PrioritySeq::Symbolic { head: Priority::var(q), step: *step })
                }
                KeyPart::Absent => None,
            };
            if let Some(s) = seq {
                env.psi.insert(x.clone(), t.clone(), s);
            }
        }
        for (k, (lo, _, mult)) in shape.arrows.iter().enumerate() {
            let captured: Gamma = def.params[..k].iter().map(|x| (x.clone(), g[x].clone())).collect();
            if *mult == Mult::Un {
                self.only_unrestricted(&env, &captured, &format!("unrestricted arrow {} of {f}", k + 1))?;
            }
            let set = self.ctx_set(&env, &captured)?;
            self.le_set(&env, lo, &set, &format!("π ≤ ⌊Γ⌋ for arrow {} of {f}", k + 1))?;
        }
        let tb = self.check(&env, &g, &def.body)?;
        self.pos = Some(def.pos);
        let hi = shape.arrows.last().map_or(Priority::Bot, |a| a.1.clone());
        self.le(&env, &tb.eff, &hi, &format!("effect of {f} within its declared bound"))?;
        if !Equiv::new(&env.theta).sub(&tb.ty, &shape.result) {
            return Err(self.err(Code::TypeMismatch, format!("body of {f} has type {}, declared {}", type_str(&tb.ty), type_str(&shape.result))));
        }
        self.stack.pop();
        Ok(())
    }

    /// Checks a definition nobody called, relating each polymorphic
    /// endpoint to the first priority binder.
    fn check_uncalled(&mut self, f: &str) -> R<()> {
        let shape = self.shape(f)?;
        let first = shape.binders.iter().position(|b| matches!(b, Binder::Prio(..)));
        let key = shape
            .params
            .iter()
            .map(|t| match (unravel(t), first) {
                (Type::ForallPS { .. }, Some(j)) => KeyPart::Rel(j, 0, 1),
                (Type::ForallPS { .. }, None) => KeyPart::Opaque(1),
                _ => KeyPart::Absent,
            })
            .collect();
        self.check_def(f, &shape, key)
    }

    // -------------------------------------------------------------- programs

    fn check_main(&mut self, e: &Expr, pos: Pos) -> R<Type> {
        self.pos = Some(pos);
        self.stack = vec!["C-Main"];
        let env = Env::default();
        let t = self.check(&env, &Gamma::new(), e)?;
        self.rule("C-Main");
        let set = priority_of(&t.ty, &env.delta, &env.theta, &env.psi).map_err(|e| self.prio_err(e))?;
        if !set.is_top() {
            self.pos = Some(pos);
            return Err(self.err(Code::MainNotUnrestricted, format!("main has type {} with ⌊T⌋ = {set}", type_str(&t.ty))));
        }
        Ok(t.ty)
    }

    /// Checks a runtime configuration; returns its flag.
    pub fn check_config(&mut self, cfg: &Config) -> R<Flag> {
        self.pos = None;
        self.stack = vec!["C-Config"];
        let mut g = Gamma::new();
        let mut env = Env::default();
        let mut threads = Vec::new();
        self.flatten(cfg, &mut g, &mut env.psi, &mut threads)?;
        let demands: Vec<BTreeSet<Name>> = threads.iter().map(|(_, e)| uses(e)).collect();
        if threads.is_empty() {
            return Err(self.err(Code::TypeMismatch, "configuration without threads"));
        }
        if threads.len() > 1 {
            self.rule("C-Par");
        }
        let parts = self.split(&env, &g, &demands, 0)?;
        let mut flag: Option<Flag> = None;
        for ((fl, e), gi) in threads.iter().zip(&parts) {
            let env = Env { psi: env.psi.restrict(|x| gi.contains_key(x)), ..env.clone() };
            let t = self.check(&env, gi, e)?;
            match fl {
                Flag::Main => {
                    self.rule("C-Main");
                    let set = priority_of(&t.ty, &env.delta, &env.theta, &env.psi).map_err(|e| self.prio_err(e))?;
                    if !set.is_top() {
                        return Err(self.err(Code::MainNotUnrestricted, format!("main thread has type {} with ⌊T⌋ = {set}", type_str(&t.ty))));
                    }
                }
                Flag::Child => {
                    self.rule("C-Child");
                    if !self.equiv(&env, &t.ty, &Type::Unit) {
                        return Err(self.err(Code::ChildNotUnit, format!("child thread has type {}", type_str(&t.ty))));
                    }
                }
            }
            flag = Some(match flag {
                None => *fl,
                Some(f0) => f0.add(*fl).map_err(|_| self.err(Code::TwoMainThreads, "two main threads"))?,
            });
        }
        Ok(flag.expect("at least one thread"))
    }

    fn flatten(&mut self, cfg: &Config, g: &mut Gamma, psi: &mut Psi, threads: &mut Vec<(Flag, Expr)>) -> R<()> {
        match cfg {
            Config::Thread(f, e) => threads.push((*f, e.clone())),
            Config::Par(a, b) => {
                self.flatten(a, g, psi, threads)?;
                self.flatten(b, g, psi, threads)?;
            }
            Config::Nu(r) => {
                self.rule("C-New");
                let Some((tx, ty)) = &r.types else {
                    return Err(self.err(Code::TypeMismatch, format!("endpoint types of {} and {} are unknown", r.x, r.y)));
                };
                let d = dual(tx).map_err(|e| self.form_err(e))?;
                let untouched = r.cursors.0 == r.cursors.1;
                if untouched && !self.equiv(&Env::default(), &d, ty) {
                    return Err(self.err(Code::DualMismatch, format!("{} : {} is not dual to {} : {}", r.x, type_str(tx), r.y, type_str(ty))));
                }
                g.insert(r.x.clone(), tx.clone());
                g.insert(r.y.clone(), ty.clone());
                if !r.seq.is_empty() {
                    let exhausted = |_| self.err(Code::SequenceExhausted, format!("sequence of {} exhausted", r.x));
                    psi.insert(r.x.clone(), tx.clone(), r.seq.advance(r.cursors.0).map_err(exhausted)?);
                    let exhausted = |_| self.err(Code::SequenceExhausted, format!("sequence of {} exhausted", r.y));
                    psi.insert(r.y.clone(), ty.clone(), r.seq.advance(r.cursors.1).map_err(exhausted)?);
                }
                self.flatten(&r.body, g, psi, threads)?;
            }
        }
        Ok(())
    }
}

/// Type-checks every alias, signature, definition and `main`.
pub fn check_program(p: &Program) -> Report {
    let mut ck = Checker::new(&p.fun_defs);
    let mut diagnostics = Vec::new();
    for (n, t) in &p.type_defs {
        if let Err(e) = wellformed(&Delta::new(), &Theta::new(), t) {
            let mut d = ck.form_err(e);
            d.msg = format!("type {n}: {}", d.msg);
            diagnostics.push(d);
        }
    }
    for def in p.fun_defs.values() {
        ck.pos = Some(def.pos);
        if let Err(e) = wellformed(&Delta::new(), &Theta::new(), &def.sig) {
            diagnostics.push(ck.form_err(e));
        } else if let Err(d) = ck.shape(&def.name) {
            diagnostics.push(d);
        }
    }
    let mut main_type = None;
    if diagnostics.is_empty() {
        match ck.check_main(&p.main, p.main_pos) {
            Ok(t) => main_type = Some(t),
            Err(d) => diagnostics.push(d),
        }
        // definitions `main` never reached would only be guessed at
        for f in p.fun_defs.keys().filter(|_| main_type.is_some()) {
            if !ck.checked.contains(f) {
                ck.stack.clear();
                if let Err(d) = ck.check_uncalled(f) {
                    if !diagnostics.contains(&d) {
                        diagnostics.push(d);
                    }
                }
            }
        }
    }
    Report { diagnostics, rules: ck.rules, channels: ck.channels, main_type }
}

/// Checks a closed runtime configuration against a program's definitions.
pub fn check_config(funs: &BTreeMap<Name, FunDef>, cfg: &Config) -> (R<Flag>, BTreeSet<String>) {
    let mut ck = Checker::new(funs);
    let r = ck.check_config(cfg);
    (r, ck.rules)
}

/// Types a closed expression with no definitions in scope.
pub fn check_closed(e: &Expr) -> R<Typing> {
    let funs = BTreeMap::new();
    let mut ck = Checker::new(&funs);
    ck.check(&Env::default(), &Gamma::new(), e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_program;

    fn report(src: &str) -> Report {
        check_program(&parse_program(src).expect("parses"))
    }

    fn codes(src: &str) -> Vec<Code> {
        report(src).diagnostics.iter().map(|d| d.code).collect()
    }

    #[test]
    fn constants() {
        assert_eq!(codes("main : Int\nmain = add 1 2\n"), vec![]);
        assert_eq!(codes("main : ()\nmain = ()\n"), vec![]);
    }

    #[test]
    fn close_and_wait() {
        let src = "main : ()\nmain = let (x, y) = new (Close 1) in fork {1} {top} (\\_:() 1-> close {1} x); wait {1} y\n";
        assert_eq!(codes(src), vec![]);
    }

    #[test]
    fn unused_and_double() {
        let src = "main : ()\nmain = let (x, y) = new (Close 1) in ()\n";
        assert_eq!(codes(src), vec![Code::UnusedLinear]);
        let src = "main : ()\nmain = let (x, y) = new (Close 1) in close {1} x; close {1} x\n";
        assert_eq!(codes(src), vec![Code::DoubleUse]);
    }

    #[test]
    fn priority_order_violation() {
        // waits on 2 before closing 1
        let src = "type A = Close 1\ntype B = Close 2\nmain : ()\nmain = let (a, a2) = new A in let (b, b2) = new B in fork {1} {top} (\\_:() 1-> close {1} a; close {2} b); wait {2} b2; wait {1} a2\n";
        let r = report(src);
        assert_eq!(r.diagnostics.len(), 1, "{:?}", r.diagnostics);
        assert_eq!(r.diagnostics[0].code, Code::PriorityOrder);
        assert!(r.diagnostics[0].msg.contains("2 ≮ {1}"), "{}", r.diagnostics[0].msg);
    }

    #[test]
    fn new_skip_rejected() {
        assert_eq!(codes("main : ()\nmain = let (x, y) = new Skip in ()\n"), vec![Code::NewSkip]);
    }

    #[test]
    fn poly_stream_inst() {
        let src = "type S = forallp i in (bot,top) => Close i\nmain : ()\nmain = let (x, y) = new S 3 1 in fork {3} {top} (\\_:() 1-> close {3} (inst x)); wait {3} (inst y)\n";
        assert_eq!(codes(src), vec![]);
    }

    #[test]
    fn main_must_be_unrestricted() {
        let src = "main : Close 1\nmain = let (x, y) = new (Close 1) in fork {1} {top} (\\_:() 1-> wait {1} y); x\n";
        assert_eq!(codes(src), vec![Code::MainNotUnrestricted]);
    }

    #[test]
    fn split_sends_linear_once() {
        let g: Gamma = [("x".to_string(), Type::Close(Priority::Lit(1))), ("n".to_string(), Type::Int)].into();
        let d1: BTreeSet<Name> = ["x".to_string()].into();
        let parts = split_context(&g, |_, t| *t == Type::Int, &[d1.clone(), BTreeSet::new()], 1).unwrap();
        assert!(parts[0].contains_key("x") && !parts[1].contains_key("x"));
        assert!(parts[0].contains_key("n") && parts[1].contains_key("n"));
        assert_eq!(split_context(&g, |_, _| false, &[d1.clone(), d1], 1), Err("x".to_string()));
    }

    fn config_code(cfg: &Config) -> Option<Code> {
        check_config(&BTreeMap::new(), cfg).0.err().map(|d| d.code)
    }

    fn chan(seq: PrioritySeq, cursors: (u64, u64), tx: Type, ty: Type, body: Config) -> Config {
        Config::Nu(Box::new(Restriction { x: "c1+".into(), y: "c1-".into(), seq, cursors, types: Some((tx, ty)), body }))
    }

    #[test]
    fn configuration_codes() {
        let child = |e: Expr| Config::Thread(Flag::Child, e);
        assert_eq!(config_code(&Config::par(Config::main(Expr::unit()), child(Expr::unit()))), None);
        assert_eq!(config_code(&Config::par(Config::main(Expr::unit()), Config::main(Expr::unit()))), Some(Code::TwoMainThreads));
        assert_eq!(config_code(&Config::par(Config::main(Expr::unit()), child(Expr::Int(1)))), Some(Code::ChildNotUnit));
        let close = Type::Close(Priority::Lit(1));
        let bad = chan(PrioritySeq::Empty, (0, 0), close.clone(), close.clone(), Config::par(Config::main(Expr::var("c1+")), child(Expr::var("c1-"))));
        assert_eq!(config_code(&bad), Some(Code::DualMismatch));
        let poly = Type::forall_ps("i", Interval::new(Priority::Bot, true, Priority::Top, true), Type::Close(Priority::var("i")));
        let spent = chan(PrioritySeq::Finite(vec![Priority::Lit(1)]), (2, 0), poly.clone(), dual(&poly).unwrap(), Config::main(Expr::unit()));
        assert_eq!(config_code(&spent), Some(Code::SequenceExhausted));
    }
}
