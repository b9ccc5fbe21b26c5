//! Abstract syntax shared by every other module: priorities, types,
//! expressions, configurations and the typing contexts.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

pub type Name = String;
pub type Label = String;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Priority {
    Bot,
    Top,
    Lit(i64),
    Var(Name),
    /// Only ever wraps a `Var`; use [`Priority::shift`] to build one.
    Disp(Box<Priority>, u64),
}

/// The base of a priority once its displacement is stripped.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Base<'a> {
    Bot,
    Top,
    Int,
    Var(&'a str),
}

impl Priority {
    pub fn var(name: impl Into<Name>) -> Self {
        Priority::Var(name.into())
    }

    pub fn shift(&self, n: u64) -> Priority {
        if n == 0 {
            return self.clone();
        }
        match self {
            Priority::Bot => Priority::Bot,
            Priority::Top => Priority::Top,
            Priority::Lit(m) => Priority::Lit(m.saturating_add(n.min(i64::MAX as u64) as i64)),
            Priority::Var(_) => Priority::Disp(Box::new(self.clone()), n),
            Priority::Disp(b, m) => Priority::Disp(b.clone(), m + n),
        }
    }

    /// Signed shift; negative offsets are only legal on literals.
    pub fn offset(&self, n: i64) -> Option<Priority> {
        if n >= 0 {
            return Some(self.shift(n as u64));
        }
        match self {
            Priority::Bot | Priority::Top => Some(self.clone()),
            Priority::Lit(m) => Some(Priority::Lit(m.saturating_add(n))),
            Priority::Var(_) => None,
            Priority::Disp(b, m) => {
                let k = *m as i64 + n;
                if k >= 0 {
                    Some(b.shift(k as u64))
                } else {
                    None
                }
            }
        }
    }

    pub fn split(&self) -> (Base<'_>, i64) {
        match self {
            Priority::Bot => (Base::Bot, 0),
            Priority::Top => (Base::Top, 0),
            Priority::Lit(n) => (Base::Int, *n),
            Priority::Var(v) => (Base::Var(v), 0),
            Priority::Disp(b, n) => match &**b {
                Priority::Var(v) => (Base::Var(v), *n as i64),
                other => {
                    let (base, k) = other.split();
                    (base, k + *n as i64)
                }
            },
        }
    }

    pub fn is_ground(&self) -> bool {
        !matches!(self.split().0, Base::Var(_))
    }

    /// Comparison when it does not depend on any priority context: both
    /// ground, or displacements of the same variable.
    pub fn cmp_direct(&self, other: &Priority) -> Option<Ordering> {
        let (a, m) = self.split();
        let (b, n) = other.split();
        let rank = |b: &Base| match b {
            Base::Bot => 0,
            Base::Int => 1,
            Base::Top => 2,
            Base::Var(_) => 3,
        };
        match (&a, &b) {
            (Base::Var(x), Base::Var(y)) if x == y => Some(m.cmp(&n)),
            (Base::Var(_), _) | (_, Base::Var(_)) => None,
            (Base::Int, Base::Int) => Some(m.cmp(&n)),
            _ => Some(rank(&a).cmp(&rank(&b))),
        }
    }

    pub fn fpv(&self) -> BTreeSet<Name> {
        let mut s = BTreeSet::new();
        if let (Base::Var(v), _) = self.split() {
            s.insert(v.to_string());
        }
        s
    }

    pub fn subst(&self, iota: &str, pi: &Priority) -> Priority {
        match self.split() {
            (Base::Var(v), n) if v == iota => pi.shift(n as u64),
            _ => self.clone(),
        }
    }

    pub fn max(a: &Priority, b: &Priority) -> Option<Priority> {
        match a.cmp_direct(b)? {
            Ordering::Less => Some(b.clone()),
            _ => Some(a.clone()),
        }
    }

    pub fn min(a: &Priority, b: &Priority) -> Option<Priority> {
        match a.cmp_direct(b)? {
            Ordering::Greater => Some(b.clone()),
            _ => Some(a.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PriorityValue {
    Prio(Priority),
    /// `next^k x`, 1-indexed.
    Next(u32, Name),
}

impl PriorityValue {
    pub fn fpv(&self) -> BTreeSet<Name> {
        match self {
            PriorityValue::Prio(p) => p.fpv(),
            PriorityValue::Next(..) => BTreeSet::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Interval {
    pub lo: Priority,
    pub hi: Priority,
    pub lo_open: bool,
    pub hi_open: bool,
}

impl Interval {
    pub fn new(lo: Priority, lo_open: bool, hi: Priority, hi_open: bool) -> Self {
        Interval { lo, hi, lo_open, hi_open }
    }

    /// `(⊥,⊤)`
    pub fn full_open() -> Self {
        Interval::new(Priority::Bot, true, Priority::Top, true)
    }

    pub fn fpv(&self) -> BTreeSet<Name> {
        let mut s = self.lo.fpv();
        s.extend(self.hi.fpv());
        s
    }

    pub fn subst(&self, iota: &str, pi: &Priority) -> Interval {
        Interval {
            lo: self.lo.subst(iota, pi),
            hi: self.hi.subst(iota, pi),
            lo_open: self.lo_open,
            hi_open: self.hi_open,
        }
    }

    pub fn shift(&self, n: u64) -> Interval {
        Interval {
            lo: self.lo.shift(n),
            hi: self.hi.shift(n),
            ..self.clone()
        }
    }

    /// Membership decided without a priority context.
    pub fn contains_direct(&self, p: &Priority) -> Option<bool> {
        let lo = self.lo.cmp_direct(p)?;
        let hi = p.cmp_direct(&self.hi)?;
        let lo_ok = if self.lo_open { lo == Ordering::Less } else { lo != Ordering::Greater };
        let hi_ok = if self.hi_open { hi == Ordering::Less } else { hi != Ordering::Greater };
        Some(lo_ok && hi_ok)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mult {
    Lin,
    Un,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Type {
    Unit,
    /// Opaque integers, unrestricted like `Unit`.
    Int,
    Arrow {
        dom: Box<Type>,
        cod: Box<Type>,
        lo: Priority,
        hi: Priority,
        mult: Mult,
    },
    Prod(Box<Type>, Box<Type>),
    TVarF(Name),
    TVarS(Name),
    RecF(Name, Box<Type>),
    RecS(Name, Box<Type>),
    ForallT {
        var: Name,
        prio: Priority,
        body: Box<Type>,
    },
    ForallPF {
        var: Name,
        interval: Interval,
        body: Box<Type>,
    },
    ForallPS {
        var: Name,
        interval: Interval,
        body: Box<Type>,
    },
    Skip,
    Out(Box<Type>, Priority),
    In(Box<Type>, Priority),
    IntChoice(BTreeMap<Label, Type>, Priority),
    ExtChoice(BTreeMap<Label, Type>, Priority),
    Seq(Box<Type>, Box<Type>),
    Close(Priority),
    Wait(Priority),
}

impl Type {
    pub fn arrow(dom: Type, cod: Type, lo: Priority, hi: Priority, mult: Mult) -> Type {
        Type::Arrow { dom: Box::new(dom), cod: Box::new(cod), lo, hi, mult }
    }

    pub fn seq(a: Type, b: Type) -> Type {
        Type::Seq(Box::new(a), Box::new(b))
    }

    pub fn prod(a: Type, b: Type) -> Type {
        Type::Prod(Box::new(a), Box::new(b))
    }

    pub fn out(t: Type, p: Priority) -> Type {
        Type::Out(Box::new(t), p)
    }

    pub fn inp(t: Type, p: Priority) -> Type {
        Type::In(Box::new(t), p)
    }

    pub fn forall_ps(var: impl Into<Name>, interval: Interval, body: Type) -> Type {
        Type::ForallPS { var: var.into(), interval, body: Box::new(body) }
    }

    pub fn forall_pf(var: impl Into<Name>, interval: Interval, body: Type) -> Type {
        Type::ForallPF { var: var.into(), interval, body: Box::new(body) }
    }

    pub fn forall_t(var: impl Into<Name>, prio: Priority, body: Type) -> Type {
        Type::ForallT { var: var.into(), prio, body: Box::new(body) }
    }

    pub fn is_session(&self) -> bool {
        matches!(
            self,
            Type::Skip
                | Type::Out(..)
                | Type::In(..)
                | Type::IntChoice(..)
                | Type::ExtChoice(..)
                | Type::Seq(..)
                | Type::Close(_)
                | Type::Wait(_)
                | Type::RecS(..)
                | Type::ForallPS { .. }
                | Type::TVarS(_)
        )
    }

    pub fn size(&self) -> usize {
        let mut n = 1;
        self.for_each_child(&mut |c| n += c.size());
        n
    }

    fn for_each_child(&self, f: &mut dyn FnMut(&Type)) {
        match self {
            Type::Arrow { dom, cod, .. } => {
                f(dom);
                f(cod)
            }
            Type::Prod(a, b) | Type::Seq(a, b) => {
                f(a);
                f(b)
            }
            Type::RecF(_, b) | Type::RecS(_, b) => f(b),
            Type::ForallT { body, .. } | Type::ForallPF { body, .. } | Type::ForallPS { body, .. } => f(body),
            Type::Out(t, _) | Type::In(t, _) => f(t),
            Type::IntChoice(m, _) | Type::ExtChoice(m, _) => m.values().for_each(f),
            Type::Unit | Type::Int | Type::TVarF(_) | Type::TVarS(_) | Type::Skip | Type::Close(_) | Type::Wait(_) => {}
        }
    }

    pub fn ftv(&self) -> BTreeSet<Name> {
        let mut s = BTreeSet::new();
        self.ftv_into(&mut s);
        s
    }

    fn ftv_into(&self, acc: &mut BTreeSet<Name>) {
        match self {
            Type::TVarF(v) | Type::TVarS(v) => {
                acc.insert(v.clone());
            }
            Type::RecF(v, b) | Type::RecS(v, b) | Type::ForallT { var: v, body: b, .. } => {
                let mut inner = b.ftv();
                inner.remove(v);
                acc.extend(inner);
            }
            _ => self.for_each_child(&mut |c| c.ftv_into(acc)),
        }
    }

    pub fn fpv(&self) -> BTreeSet<Name> {
        let mut s = BTreeSet::new();
        self.fpv_into(&mut s);
        s
    }

    fn fpv_into(&self, acc: &mut BTreeSet<Name>) {
        match self {
            Type::Arrow { dom, cod, lo, hi, .. } => {
                acc.extend(lo.fpv());
                acc.extend(hi.fpv());
                dom.fpv_into(acc);
                cod.fpv_into(acc);
            }
            Type::ForallT { prio, body, .. } => {
                acc.extend(prio.fpv());
                body.fpv_into(acc);
            }
            Type::ForallPF { var, interval, body } | Type::ForallPS { var, interval, body } => {
                acc.extend(interval.fpv());
                let mut inner = body.fpv();
                inner.remove(var);
                acc.extend(inner);
            }
            Type::Out(t, p) | Type::In(t, p) => {
                acc.extend(p.fpv());
                t.fpv_into(acc);
            }
            Type::IntChoice(m, p) | Type::ExtChoice(m, p) => {
                acc.extend(p.fpv());
                m.values().for_each(|t| t.fpv_into(acc));
            }
            Type::Close(p) | Type::Wait(p) => acc.extend(p.fpv()),
            _ => self.for_each_child(&mut |c| c.fpv_into(acc)),
        }
    }

    /// Every name bound or free anywhere in the type, used to pick fresh names.
    pub fn all_names(&self, acc: &mut BTreeSet<Name>) {
        match self {
            Type::TVarF(v) | Type::TVarS(v) => {
                acc.insert(v.clone());
            }
            Type::RecF(v, _) | Type::RecS(v, _) | Type::ForallT { var: v, .. } | Type::ForallPF { var: v, .. } | Type::ForallPS { var: v, .. } => {
                acc.insert(v.clone());
            }
            _ => {}
        }
        acc.extend(self.fpv());
        self.for_each_child(&mut |c| c.all_names(acc));
    }

    /// Applies `f` to every child, rebuilding the node.
    pub fn map_children(&self, f: &mut dyn FnMut(&Type) -> Type) -> Type {
        match self {
            Type::Arrow { dom, cod, lo, hi, mult } => Type::Arrow {
                dom: Box::new(f(dom)),
                cod: Box::new(f(cod)),
                lo: lo.clone(),
                hi: hi.clone(),
                mult: *mult,
            },
            Type::Prod(a, b) => Type::prod(f(a), f(b)),
            Type::Seq(a, b) => Type::seq(f(a), f(b)),
            Type::RecF(v, b) => Type::RecF(v.clone(), Box::new(f(b))),
            Type::RecS(v, b) => Type::RecS(v.clone(), Box::new(f(b))),
            Type::ForallT { var, prio, body } => Type::ForallT { var: var.clone(), prio: prio.clone(), body: Box::new(f(body)) },
            Type::ForallPF { var, interval, body } => Type::ForallPF { var: var.clone(), interval: interval.clone(), body: Box::new(f(body)) },
            Type::ForallPS { var, interval, body } => Type::ForallPS { var: var.clone(), interval: interval.clone(), body: Box::new(f(body)) },
            Type::Out(t, p) => Type::out(f(t), p.clone()),
            Type::In(t, p) => Type::inp(f(t), p.clone()),
            Type::IntChoice(m, p) => Type::IntChoice(m.iter().map(|(l, t)| (l.clone(), f(t))).collect(), p.clone()),
            Type::ExtChoice(m, p) => Type::ExtChoice(m.iter().map(|(l, t)| (l.clone(), f(t))).collect(), p.clone()),
            _ => self.clone(),
        }
    }

    fn map_prios(&self, f: &dyn Fn(&Priority) -> Priority) -> Type {
        match self {
            Type::Arrow { dom, cod, lo, hi, mult } => Type::Arrow {
                dom: dom.clone(),
                cod: cod.clone(),
                lo: f(lo),
                hi: f(hi),
                mult: *mult,
            },
            Type::ForallT { var, prio, body } => Type::ForallT { var: var.clone(), prio: f(prio), body: body.clone() },
            Type::Out(t, p) => Type::Out(t.clone(), f(p)),
            Type::In(t, p) => Type::In(t.clone(), f(p)),
            Type::IntChoice(m, p) => Type::IntChoice(m.clone(), f(p)),
            Type::ExtChoice(m, p) => Type::ExtChoice(m.clone(), f(p)),
            Type::Close(p) => Type::Close(f(p)),
            Type::Wait(p) => Type::Wait(f(p)),
            _ => self.clone(),
        }
    }

    /// Capture-avoiding `self[u/gamma]`.
    pub fn subst_type(&self, gamma: &str, u: &Type) -> Type {
        match self {
            Type::TVarF(v) | Type::TVarS(v) if v == gamma => u.clone(),
            Type::RecF(v, _) | Type::RecS(v, _) | Type::ForallT { var: v, .. } if v == gamma => self.clone(),
            Type::RecF(..) | Type::RecS(..) | Type::ForallT { .. } => {
                let v = self.binder().unwrap();
                let t = if u.ftv().contains(v) {
                    let mut avoid = u.ftv();
                    self.all_names(&mut avoid);
                    let fresh = fresh_name(v, &avoid);
                    self.rename_type_binder(&fresh)
                } else {
                    self.clone()
                };
                t.map_children(&mut |c| c.subst_type(gamma, u))
            }
            Type::ForallPF { var, .. } | Type::ForallPS { var, .. } if u.fpv().contains(var) => {
                let mut avoid = u.fpv();
                self.all_names(&mut avoid);
                let fresh = fresh_name(var, &avoid);
                self.rename_prio_binder(&fresh).subst_type(gamma, u)
            }
            _ => self.map_children(&mut |c| c.subst_type(gamma, u)),
        }
    }

    /// Capture-avoiding `self[pi/iota]`, renormalising displacements.
    pub fn subst_prio(&self, iota: &str, pi: &Priority) -> Type {
        match self {
            Type::ForallPF { var, interval, body } | Type::ForallPS { var, interval, body } => {
                let interval = interval.subst(iota, pi);
                let (var, body) = if var == iota {
                    (var.clone(), (**body).clone())
                } else if pi.fpv().contains(var) {
                    let mut avoid = pi.fpv();
                    self.all_names(&mut avoid);
                    let fresh = fresh_name(var, &avoid);
                    let b = body.subst_prio(var, &Priority::Var(fresh.clone()));
                    (fresh, b.subst_prio(iota, pi))
                } else {
                    (var.clone(), body.subst_prio(iota, pi))
                };
                if matches!(self, Type::ForallPF { .. }) {
                    Type::ForallPF { var, interval, body: Box::new(body) }
                } else {
                    Type::ForallPS { var, interval, body: Box::new(body) }
                }
            }
            _ => self
                .map_prios(&|p| p.subst(iota, pi))
                .map_children(&mut |c| c.subst_prio(iota, pi)),
        }
    }

    fn binder(&self) -> Option<&Name> {
        match self {
            Type::RecF(v, _) | Type::RecS(v, _) | Type::ForallT { var: v, .. } | Type::ForallPF { var: v, .. } | Type::ForallPS { var: v, .. } => Some(v),
            _ => None,
        }
    }

    fn rename_type_binder(&self, fresh: &str) -> Type {
        let old = self.binder().unwrap().clone();
        let var_of = |b: &Type| {
            if b.is_session_var_binder() {
                Type::TVarS(fresh.to_string())
            } else {
                Type::TVarF(fresh.to_string())
            }
        };
        match self {
            Type::RecF(_, b) => Type::RecF(fresh.into(), Box::new(b.subst_type(&old, &Type::TVarF(fresh.into())))),
            Type::RecS(_, b) => Type::RecS(fresh.into(), Box::new(b.subst_type(&old, &Type::TVarS(fresh.into())))),
            Type::ForallT { prio, body, .. } => {
                let sorted = var_of(&body.sort_of_var(&old));
                Type::ForallT { var: fresh.into(), prio: prio.clone(), body: Box::new(body.subst_type(&old, &sorted)) }
            }
            _ => self.clone(),
        }
    }

    fn is_session_var_binder(&self) -> bool {
        matches!(self, Type::TVarS(_))
    }

    /// The occurrence of `v` inside `self`, used to keep the sort when renaming.
    fn sort_of_var(&self, v: &str) -> Type {
        let mut found = None;
        self.visit(&mut |t| {
            if found.is_none() {
                match t {
                    Type::TVarS(x) if x == v => found = Some(t.clone()),
                    Type::TVarF(x) if x == v => found = Some(t.clone()),
                    _ => {}
                }
            }
        });
        found.unwrap_or(Type::TVarF(v.into()))
    }

    fn rename_prio_binder(&self, fresh: &str) -> Type {
        match self {
            Type::ForallPF { var, interval, body } => Type::ForallPF {
                var: fresh.into(),
                interval: interval.clone(),
                body: Box::new(body.subst_prio(var, &Priority::Var(fresh.into()))),
            },
            Type::ForallPS { var, interval, body } => Type::ForallPS {
                var: fresh.into(),
                interval: interval.clone(),
                body: Box::new(body.subst_prio(var, &Priority::Var(fresh.into()))),
            },
            _ => self.clone(),
        }
    }

    /// Pre-order traversal.
    pub fn visit(&self, f: &mut dyn FnMut(&Type)) {
        f(self);
        self.for_each_child(&mut |c| c.visit(f));
    }

    /// Renames every binder to a canonical name determined by depth so that
    /// α-equivalent types become structurally equal.
    pub fn alpha_normalize(&self) -> Type {
        self.alpha_norm(canon_base(&[self]))
    }

    /// Like [`Type::alpha_normalize`] with canonical names starting at `base`.
    pub fn alpha_normalize_from(&self, base: usize) -> Type {
        self.alpha_norm(base)
    }

    fn alpha_norm(&self, depth: usize) -> Type {
        let canon = format!("%{depth}");
        match self {
            Type::RecF(v, b) => Type::RecF(canon.clone(), Box::new(b.subst_type(v, &Type::TVarF(canon)).alpha_norm(depth + 1))),
            Type::RecS(v, b) => Type::RecS(canon.clone(), Box::new(b.subst_type(v, &Type::TVarS(canon)).alpha_norm(depth + 1))),
            Type::ForallT { var, prio, body } => {
                let sorted = match body.sort_of_var(var) {
                    Type::TVarS(_) => Type::TVarS(canon.clone()),
                    _ => Type::TVarF(canon.clone()),
                };
                Type::ForallT { var: canon, prio: prio.clone(), body: Box::new(body.subst_type(var, &sorted).alpha_norm(depth + 1)) }
            }
            Type::ForallPF { var, interval, body } => Type::ForallPF {
                var: canon.clone(),
                interval: interval.clone(),
                body: Box::new(body.subst_prio(var, &Priority::Var(canon)).alpha_norm(depth + 1)),
            },
            Type::ForallPS { var, interval, body } => Type::ForallPS {
                var: canon.clone(),
                interval: interval.clone(),
                body: Box::new(body.subst_prio(var, &Priority::Var(canon)).alpha_norm(depth + 1)),
            },
            _ => self.map_children(&mut |c| c.alpha_norm(depth)),
        }
    }

    pub fn alpha_eq(&self, other: &Type) -> bool {
        self == other || self.alpha_normalize() == other.alpha_normalize()
    }
}

/// First canonical binder index not clashing with names already present.
pub fn canon_base(types: &[&Type]) -> usize {
    let mut names = BTreeSet::new();
    for t in types {
        t.all_names(&mut names);
    }
    names
        .iter()
        .filter_map(|n| n.strip_prefix('%').and_then(|k| k.parse::<usize>().ok()))
        .map(|k| k + 1)
        .max()
        .unwrap_or(0)
}

/// Smallest `base'n` not in `avoid`.
pub fn fresh_name(base: &str, avoid: &BTreeSet<Name>) -> Name {
    let stem = base.split('\'').next().unwrap_or(base);
    (1..)
        .map(|n| format!("{stem}'{n}"))
        .find(|c| !avoid.contains(c))
        .unwrap()
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Const {
    Fork,
    Send,
    Receive,
    Close,
    Wait,
    Unit,
    Select(Label),
    Fix,
    /// Integer addition; the only arithmetic available.
    Add,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Expr {
    Var(Name),
    /// A top-level definition.
    Ref(Name),
    Const(Const),
    Int(i64),
    Abs {
        var: Name,
        ty: Type,
        body: Box<Expr>,
        mult: Mult,
    },
    App(Box<Expr>, Box<Expr>),
    Pair(Box<Expr>, Box<Expr>),
    Let {
        var: Name,
        bound: Box<Expr>,
        body: Box<Expr>,
    },
    LetPair {
        left: Name,
        right: Name,
        bound: Box<Expr>,
        body: Box<Expr>,
    },
    SeqE(Box<Expr>, Box<Expr>),
    TAbs {
        var: Name,
        prio: Priority,
        body: Box<Expr>,
    },
    TApp(Box<Expr>, Type),
    PAbs {
        var: Name,
        interval: Interval,
        body: Box<Expr>,
    },
    PApp(Box<Expr>, PriorityValue),
    /// Each branch binds the continuation endpoint.
    Match {
        scrut: Box<Expr>,
        branches: BTreeMap<Label, (Name, Expr)>,
    },
    New(Type),
    NewPoly(Type, i64, i64),
    Inst(Box<Expr>),
    /// Source location of the wrapped node.
    At(Pos, Box<Expr>),
}

impl Expr {
    pub fn var(x: impl Into<Name>) -> Expr {
        Expr::Var(x.into())
    }

    pub fn app(f: Expr, a: Expr) -> Expr {
        Expr::App(Box::new(f), Box::new(a))
    }

    pub fn papp(f: Expr, p: Priority) -> Expr {
        Expr::PApp(Box::new(f), PriorityValue::Prio(p))
    }

    pub fn tapp(f: Expr, t: Type) -> Expr {
        Expr::TApp(Box::new(f), t)
    }

    pub fn pair(a: Expr, b: Expr) -> Expr {
        Expr::Pair(Box::new(a), Box::new(b))
    }

    pub fn unit() -> Expr {
        Expr::Const(Const::Unit)
    }

    pub fn lam(x: impl Into<Name>, ty: Type, body: Expr, mult: Mult) -> Expr {
        Expr::Abs { var: x.into(), ty, body: Box::new(body), mult }
    }

    pub fn let_(x: impl Into<Name>, e1: Expr, e2: Expr) -> Expr {
        Expr::Let { var: x.into(), bound: Box::new(e1), body: Box::new(e2) }
    }

    pub fn let_pair(x: impl Into<Name>, y: impl Into<Name>, e1: Expr, e2: Expr) -> Expr {
        Expr::LetPair { left: x.into(), right: y.into(), bound: Box::new(e1), body: Box::new(e2) }
    }

    pub fn strip(&self) -> &Expr {
        let mut e = self;
        while let Expr::At(_, inner) = e {
            e = inner;
        }
        e
    }

    /// Removes every location wrapper.
    pub fn strip_locs(&self) -> Expr {
        match self {
            Expr::At(_, e) => e.strip_locs(),
            _ => self.map_children(&mut |c| c.strip_locs()),
        }
    }

    pub fn map_children(&self, f: &mut dyn FnMut(&Expr) -> Expr) -> Expr {
        match self {
            Expr::Var(_) | Expr::Ref(_) | Expr::Const(_) | Expr::Int(_) | Expr::New(_) | Expr::NewPoly(..) => self.clone(),
            Expr::Abs { var, ty, body, mult } => Expr::Abs { var: var.clone(), ty: ty.clone(), body: Box::new(f(body)), mult: *mult },
            Expr::App(a, b) => Expr::App(Box::new(f(a)), Box::new(f(b))),
            Expr::Pair(a, b) => Expr::Pair(Box::new(f(a)), Box::new(f(b))),
            Expr::SeqE(a, b) => Expr::SeqE(Box::new(f(a)), Box::new(f(b))),
            Expr::Let { var, bound, body } => Expr::Let { var: var.clone(), bound: Box::new(f(bound)), body: Box::new(f(body)) },
            Expr::LetPair { left, right, bound, body } => Expr::LetPair {
                left: left.clone(),
                right: right.clone(),
                bound: Box::new(f(bound)),
                body: Box::new(f(body)),
            },
            Expr::TAbs { var, prio, body } => Expr::TAbs { var: var.clone(), prio: prio.clone(), body: Box::new(f(body)) },
            Expr::TApp(e, t) => Expr::TApp(Box::new(f(e)), t.clone()),
            Expr::PAbs { var, interval, body } => Expr::PAbs { var: var.clone(), interval: interval.clone(), body: Box::new(f(body)) },
            Expr::PApp(e, p) => Expr::PApp(Box::new(f(e)), p.clone()),
            Expr::Match { scrut, branches } => Expr::Match {
                scrut: Box::new(f(scrut)),
                branches: branches.iter().map(|(l, (x, b))| (l.clone(), (x.clone(), f(b)))).collect(),
            },
            Expr::Inst(e) => Expr::Inst(Box::new(f(e))),
            Expr::At(p, e) => Expr::At(*p, Box::new(f(e))),
        }
    }

    /// Visits the immediate subexpressions without rebuilding anything.
    pub fn for_each_child(&self, f: &mut dyn FnMut(&Expr)) {
        match self {
            Expr::Var(_) | Expr::Ref(_) | Expr::Const(_) | Expr::Int(_) | Expr::New(_) | Expr::NewPoly(..) => {}
            Expr::App(a, b) | Expr::Pair(a, b) | Expr::SeqE(a, b) => {
                f(a);
                f(b);
            }
            Expr::Let { bound, body, .. } | Expr::LetPair { bound, body, .. } => {
                f(bound);
                f(body);
            }
            Expr::Abs { body: e, .. } | Expr::TAbs { body: e, .. } | Expr::PAbs { body: e, .. } | Expr::TApp(e, _) | Expr::PApp(e, _) | Expr::Inst(e) | Expr::At(_, e) => f(e),
            Expr::Match { scrut, branches } => {
                f(scrut);
                for (_, b) in branches.values() {
                    f(b);
                }
            }
        }
    }

    pub fn fv(&self) -> BTreeSet<Name> {
        let mut s = BTreeSet::new();
        self.fv_into(&mut s);
        s
    }

    fn fv_into(&self, acc: &mut BTreeSet<Name>) {
        let bind = |acc: &mut BTreeSet<Name>, e: &Expr, bound: &[&Name]| {
            let mut inner = e.fv();
            for b in bound {
                inner.remove(*b);
            }
            acc.extend(inner);
        };
        match self {
            Expr::Var(x) => {
                acc.insert(x.clone());
            }
            Expr::PApp(e, PriorityValue::Next(_, x)) => {
                acc.insert(x.clone());
                e.fv_into(acc);
            }
            Expr::Abs { var, body, .. } => bind(acc, body, &[var]),
            Expr::Let { var, bound, body } => {
                bound.fv_into(acc);
                bind(acc, body, &[var]);
            }
            Expr::LetPair { left, right, bound, body } => {
                bound.fv_into(acc);
                bind(acc, body, &[left, right]);
            }
            Expr::Match { scrut, branches } => {
                scrut.fv_into(acc);
                for (x, b) in branches.values() {
                    bind(acc, b, &[x]);
                }
            }
            _ => {
                self.for_each_child(&mut |c| {
                    c.fv_into(acc);
                });
            }
        }
    }

    /// Every variable name occurring anywhere, bound or free.
    pub fn all_vars(&self, acc: &mut BTreeSet<Name>) {
        match self {
            Expr::Var(x) => {
                acc.insert(x.clone());
            }
            Expr::Abs { var, .. } | Expr::Let { var, .. } => {
                acc.insert(var.clone());
            }
            Expr::LetPair { left, right, .. } => {
                acc.insert(left.clone());
                acc.insert(right.clone());
            }
            Expr::Match { branches, .. } => {
                for (x, _) in branches.values() {
                    acc.insert(x.clone());
                }
            }
            Expr::PApp(_, PriorityValue::Next(_, x)) => {
                acc.insert(x.clone());
            }
            _ => {}
        }
        self.for_each_child(&mut |c| {
            c.all_vars(acc);
        });
    }

    /// Capture-avoiding `self[v/x]`.
    pub fn subst(&self, x: &str, v: &Expr) -> Expr {
        let fv_v = v.fv();
        self.subst_with(x, v, &fv_v)
    }

    fn subst_with(&self, x: &str, v: &Expr, fv_v: &BTreeSet<Name>) -> Expr {
        // Renames binder `b` in `body` if it would capture a free variable of v.
        let rebind = |b: &Name, body: &Expr, extra: &Expr| -> (Name, Option<Expr>) {
            if fv_v.contains(b) {
                let mut avoid = fv_v.clone();
                body.all_vars(&mut avoid);
                extra.all_vars(&mut avoid);
                avoid.insert(x.to_string());
                let fresh = fresh_name(b, &avoid);
                (fresh.clone(), Some(body.subst(b, &Expr::Var(fresh))))
            } else {
                (b.clone(), None)
            }
        };
        match self {
            Expr::Var(y) if y == x => v.clone(),
            Expr::PApp(e, PriorityValue::Next(k, y)) if y == x => {
                let e = e.subst_with(x, v, fv_v);
                match v.strip() {
                    Expr::Var(z) => Expr::PApp(Box::new(e), PriorityValue::Next(*k, z.clone())),
                    // A substituted endpoint with a resolved priority keeps the name.
                    Expr::PApp(inner, _) => match inner.strip() {
                        Expr::Var(z) => Expr::PApp(Box::new(e), PriorityValue::Next(*k, z.clone())),
                        _ => Expr::PApp(Box::new(e), PriorityValue::Next(*k, y.clone())),
                    },
                    _ => Expr::PApp(Box::new(e), PriorityValue::Next(*k, y.clone())),
                }
            }
            Expr::Abs { var, ty, body, mult } => {
                if var == x {
                    return self.clone();
                }
                let (var, renamed) = rebind(var, body, &Expr::unit());
                let body = renamed.as_ref().unwrap_or(body);
                Expr::Abs { var, ty: ty.clone(), body: Box::new(body.subst_with(x, v, fv_v)), mult: *mult }
            }
            Expr::Let { var, bound, body } => {
                let bound = Box::new(bound.subst_with(x, v, fv_v));
                if var == x {
                    return Expr::Let { var: var.clone(), bound, body: body.clone() };
                }
                let (var, renamed) = rebind(var, body, &Expr::unit());
                let body = renamed.as_ref().unwrap_or(body);
                Expr::Let { var, bound, body: Box::new(body.subst_with(x, v, fv_v)) }
            }
            Expr::LetPair { left, right, bound, body } => {
                let bound = Box::new(bound.subst_with(x, v, fv_v));
                if left == x || right == x {
                    return Expr::LetPair { left: left.clone(), right: right.clone(), bound, body: body.clone() };
                }
                let (left, renamed) = rebind(left, body, &Expr::Var(right.clone()));
                let body = renamed.as_ref().unwrap_or(body);
                let (right, renamed2) = rebind(right, body, &Expr::Var(left.clone()));
                let body = renamed2.as_ref().unwrap_or(body);
                Expr::LetPair { left, right, bound, body: Box::new(body.subst_with(x, v, fv_v)) }
            }
            Expr::Match { scrut, branches } => Expr::Match {
                scrut: Box::new(scrut.subst_with(x, v, fv_v)),
                branches: branches
                    .iter()
                    .map(|(l, (y, b))| {
                        if y == x {
                            (l.clone(), (y.clone(), b.clone()))
                        } else {
                            let (y, renamed) = rebind(y, b, &Expr::unit());
                            let b = renamed.as_ref().unwrap_or(b).subst_with(x, v, fv_v);
                            (l.clone(), (y, b))
                        }
                    })
                    .collect(),
            },
            _ => self.map_children(&mut |c| c.subst_with(x, v, fv_v)),
        }
    }

    /// Type substitution into annotations.
    pub fn subst_type(&self, gamma: &str, u: &Type) -> Expr {
        match self {
            Expr::Abs { var, ty, body, mult } => Expr::Abs {
                var: var.clone(),
                ty: ty.subst_type(gamma, u),
                body: Box::new(body.subst_type(gamma, u)),
                mult: *mult,
            },
            Expr::TApp(e, t) => Expr::TApp(Box::new(e.subst_type(gamma, u)), t.subst_type(gamma, u)),
            Expr::New(t) => Expr::New(t.subst_type(gamma, u)),
            Expr::NewPoly(t, a, b) => Expr::NewPoly(t.subst_type(gamma, u), *a, *b),
            Expr::TAbs { var, .. } if var == gamma => self.clone(),
            Expr::TAbs { var, prio, body } if u.ftv().contains(var) => {
                let mut avoid = u.ftv();
                avoid.insert(gamma.to_string());
                body.type_names(&mut avoid);
                let fresh = fresh_name(var, &avoid);
                let body = body.subst_type(var, &retag(u_sort_of(body, var), &fresh));
                Expr::TAbs { var: fresh, prio: prio.clone(), body: Box::new(body.subst_type(gamma, u)) }
            }
            Expr::PAbs { var, interval, body } if u.fpv().contains(var) => {
                let mut avoid = u.fpv();
                body.type_names(&mut avoid);
                let fresh = fresh_name(var, &avoid);
                let body = body.subst_prio(var, &Priority::Var(fresh.clone()));
                Expr::PAbs { var: fresh, interval: interval.clone(), body: Box::new(body.subst_type(gamma, u)) }
            }
            _ => self.map_children(&mut |c| c.subst_type(gamma, u)),
        }
    }

    fn type_names(&self, acc: &mut BTreeSet<Name>) {
        match self {
            Expr::Abs { ty, .. } | Expr::TApp(_, ty) | Expr::New(ty) | Expr::NewPoly(ty, ..) => ty.all_names(acc),
            Expr::TAbs { var, prio, .. } => {
                acc.insert(var.clone());
                acc.extend(prio.fpv());
            }
            Expr::PAbs { var, interval, .. } => {
                acc.insert(var.clone());
                acc.extend(interval.fpv());
            }
            Expr::PApp(_, p) => acc.extend(p.fpv()),
            _ => {}
        }
        self.for_each_child(&mut |c| {
            c.type_names(acc);
        });
    }

    /// Priority substitution into annotations and priority applications.
    pub fn subst_prio(&self, iota: &str, pi: &Priority) -> Expr {
        match self {
            Expr::Abs { var, ty, body, mult } => Expr::Abs {
                var: var.clone(),
                ty: ty.subst_prio(iota, pi),
                body: Box::new(body.subst_prio(iota, pi)),
                mult: *mult,
            },
            Expr::TApp(e, t) => Expr::TApp(Box::new(e.subst_prio(iota, pi)), t.subst_prio(iota, pi)),
            Expr::New(t) => Expr::New(t.subst_prio(iota, pi)),
            Expr::NewPoly(t, a, b) => Expr::NewPoly(t.subst_prio(iota, pi), *a, *b),
            Expr::PApp(e, PriorityValue::Prio(p)) => Expr::PApp(Box::new(e.subst_prio(iota, pi)), PriorityValue::Prio(p.subst(iota, pi))),
            Expr::TAbs { var, prio, body } => Expr::TAbs { var: var.clone(), prio: prio.subst(iota, pi), body: Box::new(body.subst_prio(iota, pi)) },
            Expr::PAbs { var, interval, body } => {
                let interval = interval.subst(iota, pi);
                if var == iota {
                    Expr::PAbs { var: var.clone(), interval, body: body.clone() }
                } else if pi.fpv().contains(var) {
                    let mut avoid = pi.fpv();
                    body.type_names(&mut avoid);
                    avoid.insert(iota.to_string());
                    let fresh = fresh_name(var, &avoid);
                    let body = body.subst_prio(var, &Priority::Var(fresh.clone())).subst_prio(iota, pi);
                    Expr::PAbs { var: fresh, interval, body: Box::new(body) }
                } else {
                    Expr::PAbs { var: var.clone(), interval, body: Box::new(body.subst_prio(iota, pi)) }
                }
            }
            _ => self.map_children(&mut |c| c.subst_prio(iota, pi)),
        }
    }

    /// Counts `inst x` occurrences and `next^k x` demands per variable.
    pub fn inst_counts(&self) -> BTreeMap<Name, u64> {
        let mut m = BTreeMap::new();
        self.inst_counts_into(&mut m);
        m
    }

    fn inst_counts_into(&self, m: &mut BTreeMap<Name, u64>) {
        if let Expr::Inst(inner) = self {
            if let Expr::Var(x) = inner.strip() {
                *m.entry(x.clone()).or_default() += 1;
                return;
            }
        }
        self.for_each_child(&mut |c| {
            c.inst_counts_into(m);
        });
    }

    /// Head and arguments of an application spine.
    pub fn spine(&self) -> (&Expr, Vec<Arg<'_>>) {
        let mut args = Vec::new();
        let mut e = self.strip();
        loop {
            match e {
                Expr::App(f, a) => {
                    args.push(Arg::Term(a));
                    e = f.strip();
                }
                Expr::TApp(f, t) => {
                    args.push(Arg::Type(t));
                    e = f.strip();
                }
                Expr::PApp(f, p) => {
                    args.push(Arg::Prio(p));
                    e = f.strip();
                }
                _ => break,
            }
        }
        args.reverse();
        (e, args)
    }
}

/// One argument of an application spine.
#[derive(Clone, Copy, Debug)]
pub enum Arg<'a> {
    Term(&'a Expr),
    Type(&'a Type),
    Prio(&'a PriorityValue),
}

fn u_sort_of(body: &Expr, var: &str) -> bool {
    let mut session = false;
    let mut check = |t: &Type| {
        t.visit(&mut |s| {
            if matches!(s, Type::TVarS(x) if x == var) {
                session = true;
            }
        })
    };
    fn walk(e: &Expr, f: &mut dyn FnMut(&Type)) {
        match e {
            Expr::Abs { ty, .. } | Expr::TApp(_, ty) | Expr::New(ty) | Expr::NewPoly(ty, ..) => f(ty),
            _ => {}
        }
        e.for_each_child(&mut |c| {
            walk(c, f);
        });
    }
    walk(body, &mut check);
    session
}

fn retag(session: bool, name: &str) -> Type {
    if session {
        Type::TVarS(name.into())
    } else {
        Type::TVarF(name.into())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Flag {
    Main,
    Child,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("two main threads in parallel")]
pub struct MainMain;

impl Flag {
    #[allow(clippy::should_implement_trait)]
    pub fn add(self, other: Flag) -> Result<Flag, MainMain> {
        match (self, other) {
            (Flag::Main, Flag::Main) => Err(MainMain),
            (Flag::Child, Flag::Child) => Ok(Flag::Child),
            _ => Ok(Flag::Main),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PrioritySeq {
    Empty,
    Finite(Vec<Priority>),
    Progression { start: i64, step: i64, consumed: u64 },
    /// A progression whose head is only known symbolically.
    Symbolic { head: Priority, step: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("priority sequence exhausted")]
pub struct Exhausted;

impl PrioritySeq {
    pub fn progression(start: i64, step: i64) -> Self {
        PrioritySeq::Progression { start, step, consumed: 0 }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            PrioritySeq::Empty => true,
            PrioritySeq::Finite(v) => v.is_empty(),
            _ => false,
        }
    }

    pub fn head(&self) -> Option<Priority> {
        self.nth(1)
    }

    /// 1-indexed element.
    pub fn nth(&self, k: u32) -> Option<Priority> {
        if k == 0 {
            return None;
        }
        let i = (k - 1) as u64;
        match self {
            PrioritySeq::Empty => None,
            PrioritySeq::Finite(v) => v.get(i as usize).cloned(),
            PrioritySeq::Progression { start, step, consumed } => {
                let idx = (consumed + i) as i64;
                Some(Priority::Lit(start.saturating_add(step.saturating_mul(idx))))
            }
            PrioritySeq::Symbolic { head, step } => Some(head.shift(step * i)),
        }
    }

    pub fn tail(&self) -> Result<PrioritySeq, Exhausted> {
        self.advance(1)
    }

    pub fn advance(&self, n: u64) -> Result<PrioritySeq, Exhausted> {
        if n == 0 {
            return Ok(self.clone());
        }
        match self {
            PrioritySeq::Empty => Err(Exhausted),
            PrioritySeq::Finite(v) => {
                if (n as usize) > v.len() {
                    Err(Exhausted)
                } else {
                    Ok(PrioritySeq::Finite(v[n as usize..].to_vec()))
                }
            }
            PrioritySeq::Progression { start, step, consumed } => Ok(PrioritySeq::Progression { start: *start, step: *step, consumed: consumed + n }),
            PrioritySeq::Symbolic { head, step } => Ok(PrioritySeq::Symbolic { head: head.shift(step * n), step: *step }),
        }
    }

    /// Splits off a finite prefix of length `n`.
    pub fn take(&self, n: u64) -> Result<(PrioritySeq, PrioritySeq), Exhausted> {
        if n == 0 {
            return Ok((PrioritySeq::Empty, self.clone()));
        }
        let prefix = (1..=n as u32).map(|k| self.nth(k).ok_or(Exhausted)).collect::<Result<Vec<_>, _>>()?;
        Ok((PrioritySeq::Finite(prefix), self.advance(n)?))
    }

    /// Concatenation, the inverse of [`PrioritySeq::take`].
    pub fn append(&self, rest: &PrioritySeq) -> PrioritySeq {
        let prefix = match self {
            PrioritySeq::Empty => return rest.clone(),
            PrioritySeq::Finite(v) if v.is_empty() => return rest.clone(),
            PrioritySeq::Finite(v) => v.clone(),
            _ => return self.clone(),
        };
        match rest {
            PrioritySeq::Empty => PrioritySeq::Finite(prefix),
            PrioritySeq::Finite(w) => PrioritySeq::Finite(prefix.iter().chain(w).cloned().collect()),
            PrioritySeq::Progression { start, step, consumed } => {
                // Re-absorb the prefix when it is exactly the consumed part.
                let k = prefix.len() as u64;
                if *consumed >= k
                    && prefix
                        .iter()
                        .enumerate()
                        .all(|(i, p)| *p == Priority::Lit(start + step * (*consumed - k + i as u64) as i64))
                {
                    PrioritySeq::Progression { start: *start, step: *step, consumed: consumed - k }
                } else {
                    PrioritySeq::Finite(prefix)
                }
            }
            PrioritySeq::Symbolic { head, step } => {
                let k = prefix.len() as i64;
                match head.offset(-(k * *step as i64)) {
                    Some(h) if prefix.iter().enumerate().all(|(i, p)| *p == h.shift(*step * i as u64)) => PrioritySeq::Symbolic { head: h, step: *step },
                    _ => PrioritySeq::Finite(prefix),
                }
            }
        }
    }
}

pub type Delta = BTreeMap<Name, Priority>;
pub type Theta = BTreeMap<Name, Interval>;
pub type Gamma = BTreeMap<Name, Type>;

/// Priority map: endpoint ↦ (type, sequence).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Psi {
    pub map: BTreeMap<Name, (Type, PrioritySeq)>,
}

impl Psi {
    pub fn new() -> Self {
        Psi::default()
    }

    pub fn get(&self, x: &str) -> Option<&PrioritySeq> {
        self.map.get(x).map(|(_, s)| s)
    }

    pub fn insert(&mut self, x: impl Into<Name>, ty: Type, seq: PrioritySeq) {
        self.map.insert(x.into(), (ty, seq));
    }

    pub fn remove(&mut self, x: &str) {
        self.map.remove(x);
    }

    pub fn contains(&self, x: &str) -> bool {
        self.map.contains_key(x)
    }

    /// Variables mapped at a type satisfying `same`.
    pub fn at_type(&self, same: impl Fn(&Type) -> bool) -> Vec<(&Name, &PrioritySeq)> {
        self.map.iter().filter(|(_, (t, _))| same(t)).map(|(x, (_, s))| (x, s)).collect()
    }

    pub fn restrict(&self, keep: impl Fn(&str) -> bool) -> Psi {
        Psi { map: self.map.iter().filter(|(x, _)| keep(x)).map(|(x, v)| (x.clone(), v.clone())).collect() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Config {
    Thread(Flag, Expr),
    Par(Box<Config>, Box<Config>),
    Nu(Box<Restriction>),
}

/// `(νxy)^π̄ C` with the runtime view of both endpoints.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Restriction {
    pub x: Name,
    pub y: Name,
    pub seq: PrioritySeq,
    /// Instantiations consumed so far by each endpoint.
    pub cursors: (u64, u64),
    /// Current session type of each endpoint, when known.
    pub types: Option<(Type, Type)>,
    pub body: Config,
}

impl Config {
    pub fn par(a: Config, b: Config) -> Config {
        Config::Par(Box::new(a), Box::new(b))
    }

    pub fn main(e: Expr) -> Config {
        Config::Thread(Flag::Main, e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: &str) -> Expr {
        Expr::var(x)
    }

    #[test]
    fn fv_basics() {
        assert_eq!(v("x").fv(), ["x".to_string()].into());
        assert!(Expr::lam("x", Type::Unit, v("x"), Mult::Lin).fv().is_empty());
        // let (n, x) = receive x in send n y; wait x; close y
        let body = Expr::let_pair(
            "n",
            "x",
            Expr::app(Expr::Const(Const::Receive), v("x")),
            Expr::SeqE(
                Box::new(Expr::app(Expr::app(Expr::Const(Const::Send), v("n")), v("y"))),
                Box::new(Expr::SeqE(
                    Box::new(Expr::app(Expr::Const(Const::Wait), v("x"))),
                    Box::new(Expr::app(Expr::Const(Const::Close), v("y"))),
                )),
            ),
        );
        assert_eq!(body.fv(), ["x".to_string(), "y".to_string()].into());
    }

    #[test]
    fn ftv_fpv() {
        let t = Type::forall_ps(
            "i",
            Interval::full_open(),
            Type::seq(Type::out(Type::Unit, Priority::var("i")), Type::TVarS("b".into())),
        );
        assert_eq!(t.ftv(), ["b".to_string()].into());
        assert!(t.fpv().is_empty());
        assert_eq!(Type::out(Type::Unit, Priority::var("i").shift(2)).fpv(), ["i".to_string()].into());
        let iv = Interval::new(Priority::Bot, true, Priority::var("i1"), true);
        assert_eq!(iv.fpv(), ["i1".to_string()].into());
    }

    #[test]
    fn prio_substitution() {
        let t = Type::out(Type::Unit, Priority::var("i"));
        assert_eq!(t.subst_prio("i", &Priority::Lit(3)), Type::out(Type::Unit, Priority::Lit(3)));
        let w = Type::Wait(Priority::var("i").shift(2));
        assert_eq!(w.subst_prio("i", &Priority::Lit(1)), Type::Wait(Priority::Lit(3)));
        let s = Type::seq(Type::TVarS("b".into()), Type::TVarS("b".into()));
        assert_eq!(s.subst_type("b", &Type::Skip), Type::seq(Type::Skip, Type::Skip));
    }

    #[test]
    fn subst_avoids_capture() {
        // (∀S j. !j;a)[ (!j) / a ] must rename the binder.
        let t = Type::forall_ps("j", Interval::full_open(), Type::seq(Type::out(Type::Unit, Priority::var("j")), Type::TVarS("a".into())));
        let u = Type::out(Type::Unit, Priority::var("j"));
        let r = t.subst_type("a", &u);
        match r {
            Type::ForallPS { var, body, .. } => {
                assert_ne!(var, "j");
                assert_eq!(*body, Type::seq(Type::out(Type::Unit, Priority::var(var.clone())), u));
            }
            _ => panic!(),
        }
        let e = Expr::lam("y", Type::Unit, v("x"), Mult::Un);
        match e.subst("x", &v("y")) {
            Expr::Abs { var, body, .. } => {
                assert_ne!(var, "y");
                assert_eq!(*body, v("y"));
            }
            _ => panic!(),
        }
    }

    #[test]
    fn flags() {
        assert_eq!(Flag::Child.add(Flag::Child), Ok(Flag::Child));
        assert_eq!(Flag::Child.add(Flag::Main), Ok(Flag::Main));
        assert_eq!(Flag::Main.add(Flag::Child), Ok(Flag::Main));
        assert!(Flag::Main.add(Flag::Main).is_err());
    }

    #[test]
    fn sequences() {
        let s = PrioritySeq::progression(1, 2);
        assert_eq!(s.head(), Some(Priority::Lit(1)));
        assert_eq!(s.nth(2), Some(Priority::Lit(3)));
        let (p, r) = s.take(1).unwrap();
        assert_eq!(p, PrioritySeq::Finite(vec![Priority::Lit(1)]));
        assert_eq!(r, PrioritySeq::Progression { start: 1, step: 2, consumed: 1 });
        assert_eq!(p.append(&r), s);
        let f = PrioritySeq::Finite(vec![Priority::Lit(2), Priority::Lit(4)]);
        let (p, r) = f.take(2).unwrap();
        assert_eq!(r, PrioritySeq::Finite(vec![]));
        assert_eq!(p, f);
        assert!(f.take(3).is_err());
    }

    #[test]
    fn direct_comparison() {
        use Ordering::*;
        assert_eq!(Priority::Bot.cmp_direct(&Priority::Lit(-5)), Some(Less));
        assert_eq!(Priority::Lit(9).cmp_direct(&Priority::Top), Some(Less));
        assert_eq!(Priority::var("p").cmp_direct(&Priority::var("p").shift(1)), Some(Less));
        assert_eq!(Priority::var("p").cmp_direct(&Priority::var("q")), None);
    }

    proptest! {
        #[test]
        fn disp_normalizes(m in -1000i64..1000, n in 0u64..1000) {
            prop_assert_eq!(Priority::Lit(m).shift(n), Priority::Lit(m + n as i64));
            prop_assert_eq!(Priority::Bot.shift(n), Priority::Bot);
            prop_assert_eq!(Priority::Top.shift(n), Priority::Top);
            let nested = Priority::var("i").shift(n).shift(m.unsigned_abs());
            let ok = match &nested {
                Priority::Disp(b, _) => matches!(**b, Priority::Var(_)),
                Priority::Var(_) => true,
                _ => false,
            };
            prop_assert!(ok);
        }

        #[test]
        fn progression_head_tail(s in -100i64..100, d in 1i64..20, k in 0u64..100) {
            let p = PrioritySeq::Progression { start: s, step: d, consumed: k };
            prop_assert_eq!(p.head(), Some(Priority::Lit(s + k as i64 * d)));
            prop_assert_eq!(p.tail().unwrap().head(), Some(Priority::Lit(s + (k as i64 + 1) * d)));
        }

        #[test]
        fn subst_removes_var(n in 0usize..4) {
            let names = ["x", "y", "z", "w"];
            let e = Expr::app(Expr::var(names[n]), Expr::pair(Expr::var("x"), Expr::lam("y", Type::Unit, Expr::var("y"), Mult::Un)));
            let r = e.subst("x", &Expr::unit());
            let mut expect = e.fv();
            expect.remove("x");
            prop_assert_eq!(r.fv(), expect);
            // idempotent when the variable is absent
            prop_assert_eq!(r.subst("x", &Expr::unit()), r.clone());
        }
    }
}
