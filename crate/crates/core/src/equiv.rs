//! Type equivalence: Seq normalisation plus coinductive structural
//! comparison under μ-unfolding. Sound but incomplete.

use crate::algebra::unravel;
use crate::syntax::*;
use std::collections::HashSet;

/// Right-associates `;` and erases `Skip` units, everywhere.
pub fn normalize(t: &Type) -> Type {
    match t {
        Type::Seq(..) => {
            let mut parts = Vec::new();
            flatten(t, &mut parts);
            let mut parts: Vec<Type> = parts.into_iter().map(|p| normalize_inner(&p)).filter(|p| *p != Type::Skip).collect();
            match parts.len() {
                0 => Type::Skip,
                _ => {
                    let mut acc = parts.pop().unwrap();
                    while let Some(p) = parts.pop() {
                        acc = Type::seq(p, acc);
                    }
                    acc
                }
            }
        }
        _ => normalize_inner(t),
    }
}

fn normalize_inner(t: &Type) -> Type {
    match t {
        Type::Seq(..) => normalize(t),
        _ => t.map_children(&mut |c| normalize(c)),
    }
}

fn flatten(t: &Type, out: &mut Vec<Type>) {
    match t {
        Type::Seq(a, b) => {
            flatten(a, out);
            flatten(b, out);
        }
        _ => out.push(t.clone()),
    }
}

/// Subtyping direction used by [`Equiv::sub`].
#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Eq,
    Sub,
}

/// One equivalence query; the assumption set is local to it.
pub struct Equiv<'a> {
    theta: &'a Theta,
    assumed: HashSet<(Type, Type, bool)>,
    fuel: u32,
}

pub fn equiv(t1: &Type, t2: &Type) -> bool {
    Equiv::new(&Theta::new()).eq(t1, t2)
}

impl<'a> Equiv<'a> {
    pub fn new(theta: &'a Theta) -> Self {
        Equiv { theta, assumed: HashSet::new(), fuel: 20_000 }
    }

    pub fn eq(&mut self, a: &Type, b: &Type) -> bool {
        self.go(a, b, Mode::Eq)
    }

    /// `a` may be used where `b` is expected: arrows are contravariant in
    /// the domain and lower bound, covariant in the codomain and effect, and
    /// `un` is below `lin`. Session types are compared by equivalence.
    pub fn sub(&mut self, a: &Type, b: &Type) -> bool {
        self.go(a, b, Mode::Sub)
    }

    fn go(&mut self, a: &Type, b: &Type, mode: Mode) -> bool {
        if a == b {
            return true;
        }
        if self.fuel == 0 {
            return false;
        }
        self.fuel -= 1;
        let base = canon_base(&[a, b]);
        let na = normalize(a).alpha_normalize_from(base);
        let nb = normalize(b).alpha_normalize_from(base);
        if na == nb {
            return true;
        }
        let key = (na.clone(), nb.clone(), mode == Mode::Sub);
        if self.assumed.contains(&key) {
            return true;
        }
        self.assumed.insert(key);
        if na.is_session() || nb.is_session() {
            self.session(&na, &nb)
        } else {
            self.functional(&na, &nb, mode)
        }
    }

    fn prio_eq(&self, p: &Priority, q: &Priority) -> bool {
        p == q
    }

    fn session(&mut self, a: &Type, b: &Type) -> bool {
        let (ha, ka) = split(&unravel(a));
        let (hb, kb) = split(&unravel(b));
        let heads = match (&ha, &hb) {
            (Type::Skip, Type::Skip) => true,
            (Type::Out(t, p), Type::Out(u, q)) | (Type::In(t, p), Type::In(u, q)) => self.prio_eq(p, q) && self.eq(t, u),
            (Type::Close(p), Type::Close(q)) | (Type::Wait(p), Type::Wait(q)) => self.prio_eq(p, q),
            (Type::IntChoice(m, p), Type::IntChoice(n, q)) | (Type::ExtChoice(m, p), Type::ExtChoice(n, q)) => {
                self.prio_eq(p, q) && m.len() == n.len() && m.iter().all(|(l, s)| n.get(l).is_some_and(|s2| self.eq(s, s2)))
            }
            (Type::TVarS(x), Type::TVarS(y)) => x == y,
            (Type::ForallPS { var: v, interval: i, body: s }, Type::ForallPS { var: w, interval: j, body: u }) => {
                i == j && {
                    let u = u.subst_prio(w, &Priority::Var(v.clone()));
                    self.eq(s, &u)
                }
            }
            _ => false,
        };
        heads && self.eq(&ka, &kb)
    }

    fn functional(&mut self, a: &Type, b: &Type, mode: Mode) -> bool {
        let a = unravel(a);
        let b = unravel(b);
        match (&a, &b) {
            (Type::Unit, Type::Unit) | (Type::Int, Type::Int) => true,
            (Type::TVarF(x), Type::TVarF(y)) => x == y,
            (Type::Prod(a1, a2), Type::Prod(b1, b2)) => self.go(a1, b1, mode) && self.go(a2, b2, mode),
            (
                Type::Arrow { dom: d1, cod: c1, lo: l1, hi: h1, mult: m1 },
                Type::Arrow { dom: d2, cod: c2, lo: l2, hi: h2, mult: m2 },
            ) => match mode {
                Mode::Eq => m1 == m2 && l1 == l2 && h1 == h2 && self.eq(d1, d2) && self.eq(c1, c2),
                Mode::Sub => {
                    let ctx = crate::algebra::Prio::new(self.theta);
                    let mult_ok = m1 == m2 || (*m1 == Mult::Un && *m2 == Mult::Lin);
                    mult_ok && ctx.le(l2, l1).holds() && ctx.le(h1, h2).holds() && self.go(d2, d1, mode) && self.go(c1, c2, mode)
                }
            },
            (Type::ForallT { var: v, prio: p, body: s }, Type::ForallT { var: w, prio: q, body: u }) => {
                p == q && {
                    let tv = match u.as_ref() {
                        _ if mentions_session_var(u, w) => Type::TVarS(v.clone()),
                        _ => Type::TVarF(v.clone()),
                    };
                    let u = u.subst_type(w, &tv);
                    self.go(s, &u, mode)
                }
            }
            (Type::ForallPF { var: v, interval: i, body: s }, Type::ForallPF { var: w, interval: j, body: u }) => {
                i == j && {
                    let u = u.subst_prio(w, &Priority::Var(v.clone()));
                    self.go(s, &u, mode)
                }
            }
            _ => false,
        }
    }
}

fn mentions_session_var(t: &Type, v: &str) -> bool {
    let mut found = false;
    t.visit(&mut |s| {
        if matches!(s, Type::TVarS(x) if x == v) {
            found = true;
        }
    });
    found
}

fn split(t: &Type) -> (Type, Type) {
    match t {
        Type::Seq(h, k) => ((**h).clone(), (**k).clone()),
        h => (h.clone(), Type::Skip),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn o(n: i64) -> Type {
        Type::out(Type::Unit, Priority::Lit(n))
    }

    #[test]
    fn normalize_laws() {
        let (a, b, c) = (o(1), o(2), o(3));
        assert_eq!(normalize(&Type::seq(Type::seq(a.clone(), b.clone()), c.clone())), Type::seq(a.clone(), Type::seq(b.clone(), c)));
        assert_eq!(normalize(&Type::seq(Type::Skip, Type::seq(a.clone(), Type::Skip))), a);
        assert_eq!(normalize(&Type::seq(o(3), Type::Skip)), o(3));
    }

    #[test]
    fn equiv_examples() {
        let r = Type::RecS("b".into(), Box::new(Type::seq(o(1), Type::TVarS("b".into()))));
        assert!(equiv(&r, &Type::seq(o(1), r.clone())));
        assert!(equiv(&Type::seq(o(1), Type::Skip), &o(1)));
        assert!(!equiv(&o(1), &o(2)));
    }

    #[test]
    fn alpha_and_forall() {
        let f = |v: &str| Type::forall_ps(v, Interval::full_open(), Type::out(Type::Unit, Priority::var(v)));
        assert!(equiv(&f("i"), &f("j")));
        let g = |v: &str| Type::forall_pf(v, Interval::full_open(), Type::arrow(Type::Unit, Type::Unit, Priority::var(v), Priority::Bot, Mult::Un));
        assert!(equiv(&g("i"), &g("k")));
    }

    #[test]
    fn subtyping_arrows() {
        let th = Theta::new();
        let un = Type::arrow(Type::Unit, Type::Unit, Priority::Top, Priority::Bot, Mult::Un);
        let lin = Type::arrow(Type::Unit, Type::Unit, Priority::Lit(1), Priority::Lit(3), Mult::Lin);
        assert!(Equiv::new(&th).sub(&un, &lin));
        assert!(!Equiv::new(&th).sub(&lin, &un));
        assert!(!Equiv::new(&th).eq(&un, &lin));
    }
}
