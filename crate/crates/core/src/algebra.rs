//! Type formation, contractivity, duality, unravel, and the priority of a
//! type.

use crate::syntax::*;
use serde::Serialize;
use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum FormError {
    #[error("unbound type variable {0}")]
    UnboundTypeVar(Name),
    #[error("unbound priority variable {0}")]
    UnboundPrioVar(Name),
    #[error("non-contractive recursive type {0}")]
    NonContractive(String),
    #[error("nested priority-polymorphic session binder {0}")]
    NestedForallS(Name),
    #[error("{0} is not a session type")]
    NotSession(String),
}

// ---------------------------------------------------------------- duality

/// Dual of a session type. Payloads are left alone; recursion variables
/// occurring in payloads keep referring to the original (non-dual) type.
pub fn dual(s: &Type) -> Result<Type, FormError> {
    dual_in(s, &[])
}

fn dual_in(s: &Type, recs: &[(Name, Type)]) -> Result<Type, FormError> {
    let payload = |t: &Type| -> Type {
        // β⁻ in payload position: the original recursive type
        let mut t = t.clone();
        for (b, orig) in recs.iter().rev() {
            t = t.subst_type(b, orig);
        }
        t
    };
    Ok(match s {
        Type::Skip => Type::Skip,
        Type::Out(t, p) => Type::In(Box::new(payload(t)), p.clone()),
        Type::In(t, p) => Type::Out(Box::new(payload(t)), p.clone()),
        Type::Close(p) => Type::Wait(p.clone()),
        Type::Wait(p) => Type::Close(p.clone()),
        Type::IntChoice(m, p) => Type::ExtChoice(m.iter().map(|(l, t)| Ok((l.clone(), dual_in(t, recs)?))).collect::<Result<_, FormError>>()?, p.clone()),
        Type::ExtChoice(m, p) => Type::IntChoice(m.iter().map(|(l, t)| Ok((l.clone(), dual_in(t, recs)?))).collect::<Result<_, FormError>>()?, p.clone()),
        Type::Seq(a, b) => Type::seq(dual_in(a, recs)?, dual_in(b, recs)?),
        Type::TVarS(b) => {
            if recs.iter().any(|(r, _)| r == b) {
                Type::TVarS(b.clone())
            } else {
                return Err(FormError::NotSession(format!("free variable {b} has no dual")));
            }
        }
        Type::RecS(b, body) => {
            let mut inner: Vec<(Name, Type)> = recs.iter().filter(|(r, _)| r != b).cloned().collect();
            inner.push((b.clone(), s.clone()));
            Type::RecS(b.clone(), Box::new(dual_in(body, &inner)?))
        }
        Type::ForallPS { var, interval, body } => Type::ForallPS { var: var.clone(), interval: interval.clone(), body: Box::new(dual_in(body, recs)?) },
        other => return Err(FormError::NotSession(format!("{other:?}"))),
    })
}

// ---------------------------------------------------------- contractivity

fn nullable(t: &Type) -> bool {
    match t {
        Type::Skip => true,
        Type::Seq(a, b) => nullable(a) && nullable(b),
        Type::RecS(_, b) | Type::ForallPS { body: b, .. } => nullable(b),
        _ => false,
    }
}

/// Variables reachable without passing a communication.
fn unguarded(t: &Type) -> Option<BTreeSet<Name>> {
    Some(match t {
        Type::TVarF(v) | Type::TVarS(v) => [v.clone()].into(),
        Type::RecF(v, b) | Type::RecS(v, b) => {
            let mut s = unguarded(b)?;
            if s.contains(v) {
                return None;
            }
            s.remove(v);
            s
        }
        Type::Seq(a, b) => {
            let mut s = unguarded(a)?;
            if nullable(a) {
                s.extend(unguarded(b)?);
            } else {
                // still validate nested binders on the right
                unguarded(b)?;
            }
            s
        }
        Type::ForallPS { body, .. } => unguarded(body)?,
        _ => {
            let mut ok = true;
            t.map_children(&mut |c| {
                if unguarded(c).is_none() {
                    ok = false;
                }
                c.clone()
            });
            if !ok {
                return None;
            }
            BTreeSet::new()
        }
    })
}

/// No μ reaches its own variable through μ binders and Skip-absorbing prefixes only.
pub fn contractive(t: &Type) -> bool {
    unguarded(t).is_some()
}

// ------------------------------------------------------------- formation

pub fn wellformed(delta: &Delta, theta: &Theta, t: &Type) -> Result<(), FormError> {
    let bound: BTreeSet<Name> = delta.keys().cloned().collect();
    if !contractive(t) {
        return Err(FormError::NonContractive(crate::render::type_str(t)));
    }
    wf(&bound, theta, false, t)
}

fn wf_prio(theta: &Theta, p: &Priority) -> Result<(), FormError> {
    match p.fpv().into_iter().find(|v| !theta.contains_key(v)) {
        Some(v) => Err(FormError::UnboundPrioVar(v)),
        None => Ok(()),
    }
}

fn wf(tvars: &BTreeSet<Name>, theta: &Theta, in_s: bool, t: &Type) -> Result<(), FormError> {
    match t {
        Type::Unit | Type::Int | Type::Skip => Ok(()),
        Type::TVarF(v) | Type::TVarS(v) => {
            if tvars.contains(v) {
                Ok(())
            } else {
                Err(FormError::UnboundTypeVar(v.clone()))
            }
        }
        Type::Arrow { dom, cod, lo, hi, .. } => {
            wf_prio(theta, lo)?;
            wf_prio(theta, hi)?;
            wf(tvars, theta, in_s, dom)?;
            wf(tvars, theta, in_s, cod)
        }
        Type::Prod(a, b) | Type::Seq(a, b) => {
            wf(tvars, theta, in_s, a)?;
            wf(tvars, theta, in_s, b)
        }
        Type::RecF(v, b) | Type::RecS(v, b) => {
            if !contractive(t) {
                return Err(FormError::NonContractive(crate::render::type_str(t)));
            }
            let mut tv = tvars.clone();
            tv.insert(v.clone());
            wf(&tv, theta, in_s, b)
        }
        Type::ForallT { var, prio, body } => {
            wf_prio(theta, prio)?;
            let mut tv = tvars.clone();
            tv.insert(var.clone());
            wf(&tv, theta, in_s, body)
        }
        Type::ForallPF { var, interval, body } => {
            wf_prio(theta, &interval.lo)?;
            wf_prio(theta, &interval.hi)?;
            let mut th = theta.clone();
            th.insert(var.clone(), interval.clone());
            wf(tvars, &th, in_s, body)
        }
        Type::ForallPS { var, interval, body } => {
            if in_s {
                return Err(FormError::NestedForallS(var.clone()));
            }
            wf_prio(theta, &interval.lo)?;
            wf_prio(theta, &interval.hi)?;
            let th: Theta = [(var.clone(), interval.clone())].into();
            wf(tvars, &th, true, body)
        }
        Type::Out(p, pi) | Type::In(p, pi) => {
            wf_prio(theta, pi)?;
            wf(tvars, theta, in_s, p)
        }
        Type::IntChoice(m, pi) | Type::ExtChoice(m, pi) => {
            wf_prio(theta, pi)?;
            m.values().try_for_each(|s| wf(tvars, theta, in_s, s))
        }
        Type::Close(pi) | Type::Wait(pi) => wf_prio(theta, pi),
    }
}

// ---------------------------------------------------------------- unravel

/// Exposes the leading constructor: unfolds μ, absorbs Skip, hoists ∀S out
/// of sequential composition.
pub fn unravel(t: &Type) -> Type {
    unravel_fuel(t, &mut 10_000)
}

fn unravel_fuel(t: &Type, fuel: &mut u32) -> Type {
    if *fuel == 0 {
        return t.clone();
    }
    *fuel -= 1;
    match t {
        Type::RecF(v, b) | Type::RecS(v, b) => unravel_fuel(&b.subst_type(v, t), fuel),
        Type::Seq(a, b) => match unravel_fuel(a, fuel) {
            Type::Skip => unravel_fuel(b, fuel),
            Type::Seq(x, y) => Type::seq(*x, Type::seq(*y, (**b).clone())),
            Type::ForallPS { var, interval, body } => {
                let (var, body) = if b.fpv().contains(&var) {
                    let mut avoid = b.fpv();
                    body.all_names(&mut avoid);
                    let fresh = fresh_name(&var, &avoid);
                    let nb = body.subst_prio(&var, &Priority::Var(fresh.clone()));
                    (fresh, nb)
                } else {
                    (var, *body)
                };
                Type::ForallPS { var, interval, body: Box::new(Type::seq(body, (**b).clone())) }
            }
            h => Type::seq(h, (**b).clone()),
        },
        _ => t.clone(),
    }
}

/// Splits an unravelled session type into its head and continuation.
pub fn head_and_rest(t: &Type) -> (Type, Type) {
    match unravel(t) {
        Type::Seq(h, k) => (*h, *k),
        h => (h, Type::Skip),
    }
}

// ------------------------------------------------------ priority reasoning

/// Three-valued answer of a priority comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tri {
    Yes,
    No,
    Unknown,
}

impl Tri {
    fn and(self, o: Tri) -> Tri {
        match (self, o) {
            (Tri::No, _) | (_, Tri::No) => Tri::No,
            (Tri::Yes, Tri::Yes) => Tri::Yes,
            _ => Tri::Unknown,
        }
    }
    fn or(self, o: Tri) -> Tri {
        match (self, o) {
            (Tri::Yes, _) | (_, Tri::Yes) => Tri::Yes,
            (Tri::No, Tri::No) => Tri::No,
            _ => Tri::Unknown,
        }
    }
    pub fn holds(self) -> bool {
        self == Tri::Yes
    }
}

/// Comparisons of possibly symbolic priorities under a priority context.
pub struct Prio<'a> {
    pub theta: &'a Theta,
}

const DEPTH: u32 = 8;

impl<'a> Prio<'a> {
    pub fn new(theta: &'a Theta) -> Self {
        Prio { theta }
    }

    /// Interval a priority is known to lie in.
    pub fn bounds(&self, p: &Priority) -> Option<Interval> {
        match p.split() {
            (Base::Var(v), n) => self.theta.get(v).map(|iv| iv.shift(n as u64)),
            _ => None,
        }
    }

    pub fn lt(&self, a: &Priority, b: &Priority) -> Tri {
        self.lt_d(a, b, DEPTH)
    }

    pub fn le(&self, a: &Priority, b: &Priority) -> Tri {
        self.le_d(a, b, DEPTH)
    }

    fn lt_d(&self, a: &Priority, b: &Priority, d: u32) -> Tri {
        if let Some(o) = a.cmp_direct(b) {
            return if o == Ordering::Less { Tri::Yes } else { Tri::No };
        }
        if d == 0 {
            return Tri::Unknown;
        }
        if self.proves_lt(a, b, d) {
            return Tri::Yes;
        }
        if self.proves_le(b, a, d) {
            return Tri::No;
        }
        Tri::Unknown
    }

    fn le_d(&self, a: &Priority, b: &Priority, d: u32) -> Tri {
        if let Some(o) = a.cmp_direct(b) {
            return if o != Ordering::Greater { Tri::Yes } else { Tri::No };
        }
        if d == 0 {
            return Tri::Unknown;
        }
        if self.proves_le(a, b, d) {
            return Tri::Yes;
        }
        if self.proves_lt(b, a, d) {
            return Tri::No;
        }
        Tri::Unknown
    }

    fn proves_lt(&self, a: &Priority, b: &Priority, d: u32) -> bool {
        if let Some(iv) = self.bounds(b) {
            let r = if iv.lo_open { self.le_d(a, &iv.lo, d - 1) } else { self.lt_d(a, &iv.lo, d - 1) };
            if r == Tri::Yes {
                return true;
            }
        }
        if let Some(iv) = self.bounds(a) {
            let r = if iv.hi_open { self.le_d(&iv.hi, b, d - 1) } else { self.lt_d(&iv.hi, b, d - 1) };
            if r == Tri::Yes {
                return true;
            }
        }
        false
    }

    fn proves_le(&self, a: &Priority, b: &Priority, d: u32) -> bool {
        if let Some(iv) = self.bounds(b) {
            if self.le_d(a, &iv.lo, d - 1) == Tri::Yes {
                return true;
            }
        }
        if let Some(iv) = self.bounds(a) {
            if self.le_d(&iv.hi, b, d - 1) == Tri::Yes {
                return true;
            }
        }
        false
    }

    pub fn eq(&self, a: &Priority, b: &Priority) -> Tri {
        if a == b {
            return Tri::Yes;
        }
        match a.cmp_direct(b) {
            Some(o) => {
                if o == Ordering::Equal {
                    Tri::Yes
                } else {
                    Tri::No
                }
            }
            None => {
                if self.lt(a, b) == Tri::Yes || self.lt(b, a) == Tri::Yes {
                    Tri::No
                } else {
                    Tri::Unknown
                }
            }
        }
    }

    pub fn in_interval(&self, p: &Priority, iv: &Interval) -> Tri {
        // Containment of a variable's whole range also decides membership.
        let lo = if iv.lo_open { self.lt(&iv.lo, p) } else { self.le(&iv.lo, p) };
        let hi = if iv.hi_open { self.lt(p, &iv.hi) } else { self.le(p, &iv.hi) };
        lo.and(hi)
    }

    /// Least of two priorities when decidable.
    pub fn min(&self, a: &Priority, b: &Priority) -> Option<Priority> {
        match self.le(a, b) {
            Tri::Yes => Some(a.clone()),
            Tri::No => Some(b.clone()),
            Tri::Unknown => None,
        }
    }

    pub fn max(&self, a: &Priority, b: &Priority) -> Option<Priority> {
        match self.le(a, b) {
            Tri::Yes => Some(b.clone()),
            Tri::No => Some(a.clone()),
            Tri::Unknown => None,
        }
    }
}

// ------------------------------------------------------------ priority sets

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Atom {
    Point(Priority),
    /// `{start + k·step | k ≥ 0}`.
    Prog { start: Priority, step: u64 },
    Span(Interval),
}

/// Finite union of atoms; the codomain of ⌊T⌋.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct PrioritySet {
    pub atoms: Vec<Atom>,
}

impl PrioritySet {
    pub fn top() -> Self {
        PrioritySet { atoms: vec![Atom::Point(Priority::Top)] }
    }

    pub fn point(p: Priority) -> Self {
        PrioritySet { atoms: vec![Atom::Point(p)] }
    }

    pub fn span(iv: Interval) -> Self {
        PrioritySet { atoms: vec![Atom::Span(iv)] }
    }

    pub fn is_top(&self) -> bool {
        self.atoms.iter().all(|a| *a == Atom::Point(Priority::Top))
    }

    /// Union; `{⊤}` is dropped next to anything more urgent.
    pub fn join(&self, other: &PrioritySet) -> PrioritySet {
        let mut atoms: Vec<Atom> = Vec::new();
        for a in self.atoms.iter().chain(&other.atoms) {
            if !atoms.contains(a) {
                atoms.push(a.clone());
            }
        }
        if atoms.len() > 1 {
            atoms.retain(|a| *a != Atom::Point(Priority::Top));
        }
        if atoms.is_empty() {
            return PrioritySet::top();
        }
        PrioritySet { atoms }
    }

    /// `π` strictly below every member.
    pub fn lt(&self, ctx: &Prio, p: &Priority) -> Tri {
        self.atoms.iter().fold(Tri::Yes, |acc, a| {
            acc.and(match a {
                // ⊤ marks bindings without pending actions
                Atom::Point(Priority::Top) => Tri::Yes,
                Atom::Point(q) => ctx.lt(p, q),
                Atom::Prog { start, .. } => ctx.lt(p, start),
                Atom::Span(iv) => {
                    if iv.lo_open {
                        ctx.le(p, &iv.lo)
                    } else {
                        ctx.lt(p, &iv.lo)
                    }
                }
            })
        })
    }

    pub fn contains(&self, ctx: &Prio, p: &Priority) -> Tri {
        self.atoms.iter().fold(Tri::No, |acc, a| {
            acc.or(match a {
                Atom::Point(q) => ctx.eq(p, q),
                Atom::Prog { start, step } => match (p.split(), start.split()) {
                    ((pb, pn), (sb, sn)) if pb == sb && matches!(pb, Base::Int | Base::Var(_)) => {
                        if pn >= sn && (pn - sn) % (*step as i64) == 0 {
                            Tri::Yes
                        } else {
                            Tri::No
                        }
                    }
                    _ => match ctx.lt(p, start) {
                        Tri::Yes => Tri::No,
                        _ => Tri::Unknown,
                    },
                },
                Atom::Span(iv) => ctx.in_interval(p, iv),
            })
        })
    }

    /// The least member (a lower bound for spans with an open end).
    pub fn min(&self, ctx: &Prio) -> Option<Priority> {
        let mut best: Option<Priority> = None;
        for a in &self.atoms {
            let m = match a {
                Atom::Point(q) => q.clone(),
                Atom::Prog { start, .. } => start.clone(),
                Atom::Span(iv) => iv.lo.clone(),
            };
            best = Some(match best {
                None => m,
                Some(b) => ctx.min(&b, &m)?,
            });
        }
        best
    }

    /// Replaces atoms mentioning `iota` by the spans they range over.
    fn close_over(&self, iota: &str, iv: &Interval) -> PrioritySet {
        let atoms = self
            .atoms
            .iter()
            .map(|a| match a {
                Atom::Point(p) | Atom::Prog { start: p, .. } if p.fpv().contains(iota) => {
                    let (_, n) = p.split();
                    let span = iv.shift(n.max(0) as u64);
                    match a {
                        Atom::Point(_) => Atom::Span(span),
                        _ => Atom::Span(Interval { hi: Priority::Top, hi_open: iv.hi_open, ..span }),
                    }
                }
                Atom::Span(s) if s.fpv().contains(iota) => Atom::Span(Interval {
                    lo: if s.lo.fpv().contains(iota) { iv.lo.clone() } else { s.lo.clone() },
                    hi: if s.hi.fpv().contains(iota) { Priority::Top } else { s.hi.clone() },
                    lo_open: s.lo_open,
                    hi_open: s.hi_open,
                }),
                other => other.clone(),
            })
            .collect();
        PrioritySet { atoms }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::Point(p) => write!(f, "{}", crate::render::prio_str(p)),
            Atom::Prog { start, step } => write!(f, "Prog({},{})", crate::render::prio_str(start), step),
            Atom::Span(iv) => write!(f, "{}", crate::render::interval_str(iv)),
        }
    }
}

impl fmt::Display for PrioritySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, a) in self.atoms.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, "}}")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum PrioError {
    #[error("type variable {0} has no priority")]
    UnboundTypeVar(Name),
    #[error("priority variable {0} is unbound")]
    UnboundPrioVar(Name),
    #[error("priority not ground here: {0}")]
    NotGround(String),
}

/// ⌊T⌋.
pub fn priority_of(t: &Type, delta: &Delta, theta: &Theta, psi: &Psi) -> Result<PrioritySet, PrioError> {
    let u = unravel(t);
    let head = match &u {
        Type::Seq(h, _) => (**h).clone(),
        other => other.clone(),
    };
    Ok(match &head {
        Type::Out(_, p) | Type::In(_, p) | Type::IntChoice(_, p) | Type::ExtChoice(_, p) | Type::Close(p) | Type::Wait(p) => PrioritySet::point(p.clone()),
        Type::Arrow { lo, .. } => PrioritySet::point(lo.clone()),
        Type::Prod(a, b) => {
            let ctx = Prio::new(theta);
            let ma = priority_of(a, delta, theta, psi)?.min(&ctx);
            let mb = priority_of(b, delta, theta, psi)?.min(&ctx);
            match (ma, mb) {
                (Some(x), Some(y)) => PrioritySet::point(ctx.min(&x, &y).ok_or_else(|| PrioError::NotGround(format!("min of {} and {}", crate::render::prio_str(&x), crate::render::prio_str(&y))))?),
                _ => return Err(PrioError::NotGround("pair component".into())),
            }
        }
        Type::ForallPS { var, interval, body } => {
            let target = crate::equiv::normalize(t).alpha_normalize();
            let inst: Vec<PrioritySeq> = psi
                .at_type(|ty| crate::equiv::normalize(ty).alpha_normalize() == target)
                .into_iter()
                .map(|(_, s)| s.clone())
                .collect();
            let mut acc: Option<PrioritySet> = None;
            for seq in inst {
                let part = instances(var, interval, body, &seq, delta, theta, psi)?;
                acc = Some(match acc {
                    None => part,
                    Some(a) => a.join(&part),
                });
            }
            acc.unwrap_or_else(|| PrioritySet::span(interval.clone()))
        }
        Type::ForallPF { var, interval, body } => {
            let mut th = theta.clone();
            th.insert(var.clone(), interval.clone());
            priority_of(body, delta, &th, psi)?.close_over(var, interval)
        }
        Type::ForallT { var, prio, body } => {
            let mut d = delta.clone();
            d.insert(var.clone(), prio.clone());
            priority_of(body, &d, theta, psi)?
        }
        Type::TVarF(g) | Type::TVarS(g) => {
            let p = delta.get(g).ok_or_else(|| PrioError::UnboundTypeVar(g.clone()))?;
            match p.split() {
                (Base::Var(v), n) => {
                    let iv = theta.get(v).ok_or_else(|| PrioError::UnboundPrioVar(v.to_string()))?;
                    PrioritySet::span(iv.shift(n as u64))
                }
                _ => PrioritySet::point(p.clone()),
            }
        }
        _ => PrioritySet::top(),
    })
}

fn instances(var: &str, interval: &Interval, body: &Type, seq: &PrioritySeq, delta: &Delta, theta: &Theta, psi: &Psi) -> Result<PrioritySet, PrioError> {
    let at = |p: &Priority| priority_of(&body.subst_prio(var, p), delta, theta, psi);
    match seq {
        PrioritySeq::Empty => Ok(PrioritySet::span(interval.clone())),
        PrioritySeq::Finite(v) if v.is_empty() => Ok(PrioritySet::span(interval.clone())),
        PrioritySeq::Finite(v) => {
            let mut acc = at(&v[0])?;
            for p in &v[1..] {
                acc = acc.join(&at(p)?);
            }
            Ok(acc)
        }
        PrioritySeq::Progression { .. } | PrioritySeq::Symbolic { .. } => {
            let step = match seq {
                PrioritySeq::Progression { step, .. } => step.unsigned_abs(),
                PrioritySeq::Symbolic { step, .. } => *step,
                _ => unreachable!(),
            };
            let head = seq.head().expect("infinite sequence");
            // atoms still mentioning the binder range over the sequence
            let mut th = theta.clone();
            th.insert(var.to_string(), interval.clone());
            let generic = priority_of(&body.clone(), delta, &th, psi)?;
            Ok(PrioritySet {
                atoms: generic
                    .atoms
                    .into_iter()
                    .map(|a| match a {
                        Atom::Point(p) if p.fpv().contains(var) => Atom::Prog { start: p.subst(var, &head), step },
                        Atom::Point(p) => Atom::Point(p),
                        Atom::Prog { start, step: s } => Atom::Prog { start: start.subst(var, &head), step: s },
                        Atom::Span(iv) => Atom::Span(iv.subst(var, &head)),
                    })
                    .collect(),
            })
        }
    }
}

/// ⌊Γ⌋ for a single binding, given the endpoint's own priority sequence when
/// it has one.
pub fn priority_of_binding(x: &str, t: &Type, delta: &Delta, theta: &Theta, psi: &Psi) -> Result<PrioritySet, PrioError> {
    if let Some(seq) = psi.get(x) {
        match unravel(t) {
            Type::ForallPS { var, interval, body } => return instances(&var, &interval, &body, seq, delta, theta, psi),
            // an abstract session still follows the endpoint's sequence
            u if matches!(head_and_rest(&u).0, Type::TVarS(_)) => {
                if let Some(h) = seq.head() {
                    return Ok(match seq {
                        PrioritySeq::Progression { step, .. } => PrioritySet { atoms: vec![Atom::Prog { start: h, step: step.unsigned_abs() }] },
                        PrioritySeq::Symbolic { step, .. } => PrioritySet { atoms: vec![Atom::Prog { start: h, step: *step }] },
                        _ => PrioritySet::point(h),
                    });
                }
            }
            _ => {}
        }
    }
    priority_of(t, delta, theta, psi)
}

pub fn priority_of_ctx(gamma: &Gamma, delta: &Delta, theta: &Theta, psi: &Psi) -> Result<PrioritySet, PrioError> {
    let mut acc = PrioritySet::top();
    for (x, t) in gamma {
        acc = acc.join(&priority_of_binding(x, t, delta, theta, psi)?);
    }
    Ok(acc)
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("endpoint {0} has no priority sequence")]
    NotInPsi(Name),
    #[error("priority sequence of {0} exhausted")]
    Exhausted(Name),
}

pub fn eval_priority(sigma: &PriorityValue, psi: &Psi) -> Result<Priority, EvalError> {
    match sigma {
        PriorityValue::Prio(p) => Ok(p.clone()),
        PriorityValue::Next(k, x) => {
            let seq = psi.get(x).ok_or_else(|| EvalError::NotInPsi(x.clone()))?;
            seq.nth(*k).ok_or_else(|| EvalError::Exhausted(x.clone()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn i() -> Priority {
        Priority::var("i")
    }

    fn stream() -> Type {
        Type::RecS(
            "b".into(),
            Box::new(Type::forall_ps("i", Interval::full_open(), Type::seq(Type::out(Type::Unit, i()), Type::TVarS("b".into())))),
        )
    }

    #[test]
    fn dual_table() {
        let p = Priority::var("p");
        let r = Type::seq(Type::inp(Type::Int, p.clone()), Type::Wait(p.shift(2)));
        assert_eq!(dual(&r).unwrap(), Type::seq(Type::out(Type::Int, p.clone()), Type::Close(p.shift(2))));
        assert_eq!(dual(&Type::Skip).unwrap(), Type::Skip);
        assert_eq!(dual(&dual(&stream()).unwrap()).unwrap(), stream());
        assert!(dual(&Type::Unit).is_err());
    }

    #[test]
    fn dual_keeps_payload_recursion() {
        // μb. !b ; b  ↦  μb. ?(μb. !b ; b) ; b
        let t = Type::RecS("b".into(), Box::new(Type::seq(Type::out(Type::TVarS("b".into()), Priority::Lit(1)), Type::TVarS("b".into()))));
        let d = dual(&t).unwrap();
        assert_eq!(d, Type::RecS("b".into(), Box::new(Type::seq(Type::inp(t.clone(), Priority::Lit(1)), Type::TVarS("b".into())))));
    }

    #[test]
    fn contractivity() {
        assert!(!contractive(&Type::RecS("b".into(), Box::new(Type::TVarS("b".into())))));
        assert!(!contractive(&Type::RecS("b".into(), Box::new(Type::seq(Type::Skip, Type::TVarS("b".into()))))));
        assert!(contractive(&Type::RecS(
            "b".into(),
            Box::new(Type::seq(Type::out(Type::Unit, Priority::Lit(1)), Type::TVarS("b".into())))
        )));
        assert!(contractive(&stream()));
    }

    #[test]
    fn formation() {
        let e = Delta::new();
        let th = Theta::new();
        assert!(wellformed(&e, &th, &stream()).is_ok());
        let nested = Type::forall_ps(
            "i1",
            Interval::full_open(),
            Type::forall_ps(
                "i2",
                Interval::full_open(),
                Type::seq(Type::out(Type::Unit, Priority::var("i1")), Type::seq(Type::out(Type::Unit, Priority::var("i2")), Type::Skip)),
            ),
        );
        assert!(matches!(wellformed(&e, &th, &nested), Err(FormError::NestedForallS(_))));
        let unbound = Type::forall_t("a", Priority::var("i"), Type::seq(Type::out(Type::TVarF("a".into()), Priority::Lit(1)), Type::Skip));
        assert_eq!(wellformed(&e, &th, &unbound), Err(FormError::UnboundPrioVar("i".into())));
        assert_eq!(wellformed(&e, &th, &Type::TVarS("z".into())), Err(FormError::UnboundTypeVar("z".into())));
        let nc = Type::RecS("b".into(), Box::new(Type::seq(Type::Skip, Type::TVarS("b".into()))));
        assert!(matches!(wellformed(&e, &th, &nc), Err(FormError::NonContractive(_))));
        // side by side is fine
        assert!(wellformed(&e, &th, &Type::seq(stream(), stream())).is_ok());
    }

    #[test]
    fn unravel_cases() {
        let o = Type::out(Type::Unit, Priority::Lit(1));
        assert_eq!(unravel(&Type::seq(Type::Skip, o.clone())), o);
        let body = Type::seq(Type::out(Type::Unit, i()), Type::TVarS("b".into()));
        let r = Type::RecS("b".into(), Box::new(Type::seq(o.clone(), Type::TVarS("b".into()))));
        assert_eq!(unravel(&r), Type::seq(o.clone(), r.clone()));
        let fa = Type::forall_ps("i", Interval::full_open(), body.clone());
        let s2 = Type::Close(Priority::Lit(9));
        assert_eq!(unravel(&Type::seq(fa, s2.clone())), Type::forall_ps("i", Interval::full_open(), Type::seq(body, s2)));
    }

    #[test]
    fn priorities_of_types() {
        let (d, th, psi) = (Delta::new(), Theta::new(), Psi::new());
        let t = Type::seq(Type::inp(Type::Int, Priority::Lit(3)), Type::Wait(Priority::Lit(5)));
        assert_eq!(priority_of(&t, &d, &th, &psi).unwrap(), PrioritySet::point(Priority::Lit(3)));
        assert_eq!(priority_of(&Type::Unit, &d, &th, &psi).unwrap(), PrioritySet::top());
        let mut psi = Psi::new();
        psi.insert("x", stream(), PrioritySeq::progression(1, 2));
        let s = priority_of(&stream(), &d, &th, &psi).unwrap();
        let ctx = Prio::new(&th);
        assert_eq!(s.contains(&ctx, &Priority::Lit(5)), Tri::Yes);
        assert_eq!(s.contains(&ctx, &Priority::Lit(4)), Tri::No);
        // oracle: the first 50 heads of the sequence
        for k in 0..50 {
            assert_eq!(s.contains(&ctx, &Priority::Lit(1 + 2 * k)), Tri::Yes);
        }
    }

    #[test]
    fn set_comparisons() {
        let th = Theta::new();
        let ctx = Prio::new(&th);
        let three = PrioritySet::point(Priority::Lit(3));
        assert_eq!(three.lt(&ctx, &Priority::Lit(1)), Tri::Yes);
        assert_eq!(three.lt(&ctx, &Priority::Lit(3)), Tri::No);
        let prog = PrioritySet { atoms: vec![Atom::Prog { start: Priority::Lit(1), step: 2 }] };
        assert_eq!(prog.lt(&ctx, &Priority::Lit(0)), Tri::Yes);
        let f = Type::arrow(Type::Unit, Type::Unit, Priority::Top, Priority::Bot, Mult::Un);
        let g: Gamma = [("f".to_string(), f)].into();
        assert!(priority_of_ctx(&g, &Delta::new(), &th, &Psi::new()).unwrap().is_top());
    }

    #[test]
    fn symbolic_comparisons() {
        let mut th = Theta::new();
        th.insert("p".into(), Interval::full_open());
        th.insert("q".into(), Interval::new(Priority::var("p").shift(2), false, Priority::Top, true));
        let ctx = Prio::new(&th);
        assert_eq!(ctx.lt(&Priority::var("p").shift(1), &Priority::var("q")), Tri::Yes);
        assert_eq!(ctx.lt(&Priority::var("q"), &Priority::var("p")), Tri::No);
        assert_eq!(ctx.lt(&Priority::var("q"), &Priority::Top), Tri::Yes);
        assert_eq!(ctx.in_interval(&Priority::var("q"), &Interval::full_open()), Tri::Yes);
        assert_eq!(ctx.lt(&Priority::var("p"), &Priority::Lit(4)), Tri::Unknown);
    }

    #[test]
    fn eval_next() {
        let mut psi = Psi::new();
        psi.insert("w1", Type::Skip, PrioritySeq::progression(1, 2));
        assert_eq!(eval_priority(&PriorityValue::Next(1, "w1".into()), &psi), Ok(Priority::Lit(1)));
        assert_eq!(eval_priority(&PriorityValue::Next(2, "w1".into()), &psi), Ok(Priority::Lit(3)));
        assert_eq!(eval_priority(&PriorityValue::Prio(Priority::Lit(7)), &psi), Ok(Priority::Lit(7)));
        assert!(eval_priority(&PriorityValue::Next(1, "z".into()), &psi).is_err());
    }
}
