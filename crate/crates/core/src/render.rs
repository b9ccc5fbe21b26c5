//! Surface-syntax printing. Output re-parses to an equal AST.

use crate::syntax::*;

pub fn prio_str(p: &Priority) -> String {
    match p {
        Priority::Bot => "bot".into(),
        Priority::Top => "top".into(),
        Priority::Lit(n) => n.to_string(),
        Priority::Var(v) => v.clone(),
        Priority::Disp(b, n) => format!("{}+{}", prio_str(b), n),
    }
}

/// A priority in a position that only admits atoms.
pub fn prio_atom(p: &Priority) -> String {
    match p {
        Priority::Disp(..) => format!("({})", prio_str(p)),
        Priority::Lit(n) if *n < 0 => format!("({n})"),
        _ => prio_str(p),
    }
}

pub fn interval_str(iv: &Interval) -> String {
    format!(
        "{}{},{}{}",
        if iv.lo_open { "(" } else { "[" },
        prio_str(&iv.lo),
        prio_str(&iv.hi),
        if iv.hi_open { ")" } else { "]" }
    )
}

pub fn prio_value_str(s: &PriorityValue) -> String {
    match s {
        PriorityValue::Prio(p) => prio_str(p),
        PriorityValue::Next(1, x) => format!("next {x}"),
        PriorityValue::Next(k, x) => format!("next{k} {x}"),
    }
}

pub fn type_str(t: &Type) -> String {
    ty(t, 0)
}

// Levels: 0 binders and arrows, 1 sequence, 2 prefix forms, 3 atoms.
fn ty(t: &Type, level: u8) -> String {
    let (s, own) = match t {
        Type::Unit => ("()".into(), 3),
        Type::Int => ("Int".into(), 3),
        Type::Skip => ("Skip".into(), 3),
        Type::TVarF(v) | Type::TVarS(v) => (v.clone(), 3),
        Type::Prod(a, b) => (format!("({}, {})", ty(a, 0), ty(b, 0)), 3),
        Type::Arrow { dom, cod, lo, hi, mult } => {
            let arrow = if *mult == Mult::Lin { "1->" } else { "->" };
            (format!("{} {}[{},{}] {}", ty(dom, 1), arrow, prio_str(lo), prio_str(hi), ty(cod, 0)), 0)
        }
        Type::RecF(v, b) | Type::RecS(v, b) => (format!("rec {v} . {}", ty(b, 0)), 0),
        Type::ForallT { var, prio, body } => (format!("forall {var} :: {} => {}", prio_atom(prio), ty(body, 0)), 0),
        Type::ForallPF { var, interval, body } | Type::ForallPS { var, interval, body } => {
            (format!("forallp {var} in {} => {}", interval_str(interval), ty(body, 0)), 0)
        }
        Type::Seq(a, b) => (format!("{} ; {}", ty(a, 2), ty(b, 1)), 1),
        Type::Out(p, pi) => (format!("!{} {}", prio_atom(pi), ty(p, 3)), 2),
        Type::In(p, pi) => (format!("?{} {}", prio_atom(pi), ty(p, 3)), 2),
        Type::Close(pi) => (format!("Close {}", prio_atom(pi)), 2),
        Type::Wait(pi) => (format!("Wait {}", prio_atom(pi)), 2),
        Type::IntChoice(m, pi) => (format!("o+{}{{{}}}", prio_atom(pi), branches(m)), 2),
        Type::ExtChoice(m, pi) => (format!("&{}{{{}}}", prio_atom(pi), branches(m)), 2),
    };
    if own < level {
        format!("({s})")
    } else {
        s
    }
}

fn branches(m: &std::collections::BTreeMap<Label, Type>) -> String {
    m.iter().map(|(l, s)| format!("{l}: {}", ty(s, 0))).collect::<Vec<_>>().join(", ")
}

pub fn const_str(c: &Const) -> String {
    match c {
        Const::Fork => "fork".into(),
        Const::Send => "send".into(),
        Const::Receive => "receive".into(),
        Const::Close => "close".into(),
        Const::Wait => "wait".into(),
        Const::Unit => "()".into(),
        Const::Select(l) => format!("select {l}"),
        Const::Fix => "fix".into(),
        Const::Add => "add".into(),
    }
}

pub fn expr_str(e: &Expr) -> String {
    ex(e, 0)
}

// Levels: 0 binders, 1 sequencing, 2 application, 3 atoms.
fn ex(e: &Expr, level: u8) -> String {
    let (s, own) = match e {
        Expr::At(_, inner) => return ex(inner, level),
        Expr::Var(x) | Expr::Ref(x) => (x.clone(), 3),
        Expr::Int(n) if *n < 0 => (format!("({n})"), 3),
        Expr::Int(n) => (n.to_string(), 3),
        Expr::Const(Const::Select(l)) => (format!("select {l}"), 2),
        Expr::Const(c) => (const_str(c), 3),
        Expr::Abs { var, ty: t, body, mult } => {
            let arrow = if *mult == Mult::Lin { "1->" } else { "->" };
            (format!("\\{var} : {} {arrow} {}", ty(t, 3), ex(body, 0)), 0)
        }
        Expr::App(f, a) => (format!("{} {}", ex(f, 2), ex(a, 3)), 2),
        Expr::TApp(f, t) => (format!("{} @{}", ex(f, 2), ty(t, 3)), 2),
        Expr::PApp(f, p) => (format!("{} {{{}}}", ex(f, 2), prio_value_str(p)), 2),
        Expr::Pair(a, b) => (format!("({}, {})", ex(a, 0), ex(b, 0)), 3),
        Expr::Let { var, bound, body } => (format!("let {var} = {} in {}", ex(bound, 0), ex(body, 0)), 0),
        Expr::LetPair { left, right, bound, body } => (format!("let ({left}, {right}) = {} in {}", ex(bound, 0), ex(body, 0)), 0),
        Expr::SeqE(a, b) => (format!("{}; {}", ex(a, 2), ex(b, 0)), 1),
        Expr::TAbs { var, prio, body } => (format!("tlam {var} :: {} => {}", prio_atom(prio), ex(body, 0)), 0),
        Expr::PAbs { var, interval, body } => (format!("plam {var} in {} => {}", interval_str(interval), ex(body, 0)), 0),
        Expr::Match { scrut, branches } => {
            let bs = branches.iter().map(|(l, (x, b))| format!("{l} {x} -> {}", ex(b, 0))).collect::<Vec<_>>().join(", ");
            (format!("match {} with {{{bs}}}", ex(scrut, 2)), 0)
        }
        Expr::New(t) => (format!("new {}", ty(t, 3)), 2),
        Expr::NewPoly(t, a, b) => (format!("new {} {a} {b}", ty(t, 3)), 2),
        Expr::Inst(x) => (format!("inst {}", ex(x, 3)), 2),
    };
    if own < level {
        format!("({s})")
    } else {
        s
    }
}

pub fn flag_str(f: Flag) -> &'static str {
    match f {
        Flag::Main => "main",
        Flag::Child => "child",
    }
}

pub fn seq_str(s: &PrioritySeq) -> String {
    match s {
        PrioritySeq::Empty => "[]".into(),
        PrioritySeq::Finite(v) => format!("[{}]", v.iter().map(prio_str).collect::<Vec<_>>().join(", ")),
        PrioritySeq::Progression { start, step, consumed } => format!("Progression({start},{step},{consumed})"),
        PrioritySeq::Symbolic { head, step } => format!("Seq({},{step})", prio_str(head)),
    }
}

/// Diagnostic form of a configuration.
pub fn config_str(c: &Config) -> String {
    match c {
        Config::Thread(f, e) => format!("<{}: {}>", flag_str(*f), expr_str(e)),
        Config::Par(a, b) => format!("{} || {}", config_str(a), config_str(b)),
        Config::Nu(r) => format!("(nu {} {})^{} ({})", r.x, r.y, seq_str(&r.seq), config_str(&r.body)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thread_form() {
        assert_eq!(config_str(&Config::main(Expr::unit())), "<main: ()>");
    }

    #[test]
    fn types_print() {
        let t = Type::seq(Type::out(Type::Unit, Priority::Lit(1)), Type::Skip);
        assert_eq!(type_str(&t), "!1 () ; Skip");
        let w = Type::Wait(Priority::var("p").shift(2));
        assert_eq!(type_str(&w), "Wait (p+2)");
    }
}
