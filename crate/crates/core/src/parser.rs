//! Surface syntax. See `docs/grammar.md` in the cli crate for the grammar.

use crate::algebra::dual;
use crate::syntax::*;
use std::collections::{BTreeMap, BTreeSet, HashMap};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("{pos}: lexical error: {msg}")]
    Lexical { pos: Pos, msg: String },
    #[error("{pos}: syntax error: {msg}{}", expected_suffix(.expected))]
    Syntax { pos: Pos, msg: String, expected: Vec<String> },
    #[error("{pos}: unbound alias {name}")]
    UnboundAlias { pos: Pos, name: Name },
}

fn expected_suffix(e: &[String]) -> String {
    if e.is_empty() {
        String::new()
    } else {
        format!(" (expected {})", e.join(" or "))
    }
}

impl ParseError {
    pub fn pos(&self) -> Pos {
        match self {
            ParseError::Lexical { pos, .. } | ParseError::Syntax { pos, .. } | ParseError::UnboundAlias { pos, .. } => *pos,
        }
    }
}

impl std::fmt::Display for Pos {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

/// A top-level function.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FunDef {
    pub name: Name,
    pub sig: Type,
    pub params: Vec<Name>,
    pub body: Expr,
    pub pos: Pos,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Program {
    pub type_defs: BTreeMap<Name, Type>,
    pub fun_defs: BTreeMap<Name, FunDef>,
    pub main: Expr,
    pub main_pos: Pos,
}

impl Program {
    /// Surface text that parses back to an equal program.
    pub fn render(&self) -> String {
        use crate::render::{expr_str, type_str};
        let mut out = String::new();
        for (n, t) in &self.type_defs {
            out.push_str(&format!("type {n} = {}\n", type_str(t)));
        }
        for f in self.fun_defs.values() {
            out.push_str(&format!("\n{} : {}\n", f.name, type_str(&f.sig)));
            let mut head = f.name.clone();
            for p in &f.params {
                head.push(' ');
                head.push_str(p);
            }
            out.push_str(&format!("{head} = {}\n", expr_str(&f.body)));
        }
        out.push_str(&format!("\nmain = {}\n", expr_str(&self.main)));
        out
    }

    /// The same program with every location wrapper removed.
    pub fn strip_locs(&self) -> Program {
        Program {
            type_defs: self.type_defs.clone(),
            fun_defs: self
                .fun_defs
                .iter()
                .map(|(n, f)| (n.clone(), FunDef { body: f.body.strip_locs(), pos: Pos { line: 0, col: 0 }, ..f.clone() }))
                .collect(),
            main: self.main.strip_locs(),
            main_pos: Pos { line: 0, col: 0 },
        }
    }
}

// ------------------------------------------------------------------ lexer

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    UIdent(String),
    Int(i64),
    Sym(&'static str),
    Eof,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    pos: Pos,
}

const SYMS: &[&str] = &["1->", "->", "::", "=>", "o+", "(", ")", "[", "]", "{", "}", ",", ";", ":", "=", ".", "!", "?", "&", "@", "\\", "+"];

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut toks = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    let ident_char = |c: char| c.is_alphanumeric() || c == '_' || c == '\'';
    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, col };
        let adv = |n: usize, i: &mut usize, col: &mut u32| {
            *i += n;
            *col += n as u32;
        };
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            adv(1, &mut i, &mut col);
            continue;
        }
        if c == '-' && chars.get(i + 1) == Some(&'-') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let prev_ident = i > 0 && ident_char(chars[i - 1]);
        let rest: String = chars[i..chars.len().min(i + 3)].iter().collect();
        // `o+` only as a standalone word
        if rest.starts_with("o+") && !prev_ident {
            toks.push(Token { tok: Tok::Sym("o+"), pos });
            adv(2, &mut i, &mut col);
            continue;
        }
        if rest.starts_with("1->") && !prev_ident {
            toks.push(Token { tok: Tok::Sym("1->"), pos });
            adv(3, &mut i, &mut col);
            continue;
        }
        let negative = c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit());
        if c.is_ascii_digit() || negative {
            let start = i;
            let mut j = i + 1;
            while j < chars.len() && chars[j].is_ascii_digit() {
                j += 1;
            }
            let text: String = chars[start..j].iter().collect();
            let n: i64 = text.parse().map_err(|_| ParseError::Lexical { pos, msg: format!("integer literal {text} out of range") })?;
            toks.push(Token { tok: Tok::Int(n), pos });
            adv(j - start, &mut i, &mut col);
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let start = i;
            let mut j = i;
            while j < chars.len() && ident_char(chars[j]) {
                j += 1;
            }
            let text: String = chars[start..j].iter().collect();
            let tok = if c.is_uppercase() { Tok::UIdent(text) } else { Tok::Ident(text) };
            toks.push(Token { tok, pos });
            adv(j - start, &mut i, &mut col);
            continue;
        }
        match SYMS.iter().find(|s| rest.starts_with(**s)) {
            Some(s) => {
                toks.push(Token { tok: Tok::Sym(s), pos });
                adv(s.len(), &mut i, &mut col);
            }
            None => return Err(ParseError::Lexical { pos, msg: format!("unexpected character {c:?}") }),
        }
    }
    toks.push(Token { tok: Tok::Eof, pos: Pos { line, col } });
    Ok(toks)
}

const EXPR_KEYWORDS: &[&str] =
    &["let", "in", "match", "with", "select", "fork", "send", "receive", "close", "wait", "fix", "add", "new", "inst", "tlam", "plam", "type"];
const TYPE_WORDS: &[&str] = &["Skip", "Close", "Wait", "Int"];

// ----------------------------------------------------------------- parser

#[derive(Clone, Debug)]
enum Decl {
    Alias { name: Name, start: usize, end: usize },
    Sig { name: Name, start: usize, end: usize },
    Def { name: Name, params: Vec<Name>, start: usize, end: usize, pos: Pos },
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    end: usize,
    aliases: HashMap<Name, (usize, usize)>,
    alias_cache: HashMap<Name, Type>,
    in_progress: Vec<Name>,
    /// Type variables in scope with a known sort, innermost last.
    tscope: Vec<(Name, Option<bool>)>,
    /// Variables seen in a session position, per open binder.
    session_marks: BTreeSet<Name>,
    locals: Vec<Name>,
    funs: BTreeSet<Name>,
}

type PResult<T> = Result<T, ParseError>;

pub fn parse_program(src: &str) -> Result<Program, ParseError> {
    let toks = lex(src)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end: 0,
        aliases: HashMap::new(),
        alias_cache: HashMap::new(),
        in_progress: Vec::new(),
        tscope: Vec::new(),
        session_marks: BTreeSet::new(),
        locals: Vec::new(),
        funs: BTreeSet::new(),
    };
    let decls = p.split_decls()?;
    let mut sigs: BTreeMap<Name, (usize, usize)> = BTreeMap::new();
    let mut defs: BTreeMap<Name, (Vec<Name>, usize, usize, Pos)> = BTreeMap::new();
    let mut order = Vec::new();
    for d in &decls {
        match d {
            Decl::Alias { name, start, end } => {
                if p.aliases.insert(name.clone(), (*start, *end)).is_some() {
                    return Err(p.err_at(*start - 3, format!("type {name} defined twice"), vec![]));
                }
            }
            Decl::Sig { name, start, end } => {
                if sigs.insert(name.clone(), (*start, *end)).is_some() {
                    return Err(p.err_at(*start - 2, format!("duplicate signature for {name}"), vec![]));
                }
            }
            Decl::Def { name, params, start, end, pos } => {
                if defs.insert(name.clone(), (params.clone(), *start, *end, *pos)).is_some() {
                    return Err(ParseError::Syntax { pos: *pos, msg: format!("{name} defined twice"), expected: vec![] });
                }
                order.push(name.clone());
            }
        }
    }
    let mut alias_names: Vec<Name> = p.aliases.keys().cloned().collect();
    alias_names.sort();
    let mut type_defs = BTreeMap::new();
    for n in alias_names {
        let pos = p.toks[p.aliases[&n].0].pos;
        type_defs.insert(n.clone(), p.expand_alias(&n, pos)?);
    }
    for n in sigs.keys() {
        if !defs.contains_key(n) {
            let pos = p.toks[sigs[n].0].pos;
            return Err(ParseError::Syntax { pos, msg: format!("signature for {n} has no definition"), expected: vec![] });
        }
    }
    p.funs = defs.keys().filter(|n| *n != "main").cloned().collect();
    let mut fun_defs = BTreeMap::new();
    let mut main = None;
    for name in order {
        let (params, start, end, pos) = defs[&name].clone();
        if name == "main" {
            if !params.is_empty() {
                return Err(ParseError::Syntax { pos, msg: "main takes no parameters".into(), expected: vec![] });
            }
            if let Some((s, e)) = sigs.get("main") {
                p.with_range(*s, *e, |p| p.full_type())?;
            }
            let body = p.with_range(start, end, |p| p.full_expr())?;
            main = Some((body, pos));
            continue;
        }
        let Some((s, e)) = sigs.get(&name).copied() else {
            return Err(ParseError::Syntax { pos, msg: format!("{name} has no signature"), expected: vec![] });
        };
        let sig = p.with_range(s, e, |p| p.full_type())?;
        p.tscope = sig_type_scope(&sig);
        p.locals = params.clone();
        let body = p.with_range(start, end, |p| p.full_expr());
        p.tscope.clear();
        p.locals.clear();
        fun_defs.insert(name.clone(), FunDef { name, sig, params, body: body?, pos });
    }
    let Some((main, main_pos)) = main else {
        let pos = p.toks.last().map(|t| t.pos).unwrap_or(Pos { line: 1, col: 1 });
        return Err(ParseError::Syntax { pos, msg: "no main definition".into(), expected: vec!["main = ...".into()] });
    };
    Ok(Program { type_defs, fun_defs, main, main_pos })
}

/// Type variables bound by the leading binders of a signature.
fn sig_type_scope(sig: &Type) -> Vec<(Name, Option<bool>)> {
    let mut out = Vec::new();
    let mut t = sig;
    loop {
        match t {
            Type::ForallT { var, body, .. } => {
                let mut session = false;
                body.visit(&mut |s| {
                    if matches!(s, Type::TVarS(x) if x == var) {
                        session = true;
                    }
                });
                out.push((var.clone(), Some(session)));
                t = body;
            }
            Type::ForallPF { body, .. } => t = body,
            _ => return out,
        }
    }
}

/// Parses a single type, resolving aliases from `aliases`.
pub fn parse_type(src: &str, aliases: &BTreeMap<Name, Type>) -> Result<Type, ParseError> {
    let toks = lex(src)?;
    let end = toks.len() - 1;
    let mut p = Parser {
        toks,
        pos: 0,
        end,
        aliases: HashMap::new(),
        alias_cache: aliases.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        in_progress: Vec::new(),
        tscope: Vec::new(),
        session_marks: BTreeSet::new(),
        locals: Vec::new(),
        funs: BTreeSet::new(),
    };
    p.full_type()
}

impl Parser {
    fn split_decls(&mut self) -> PResult<Vec<Decl>> {
        let n = self.toks.len() - 1;
        let mut starts: Vec<usize> = (0..n).filter(|&i| self.toks[i].pos.col == 1).collect();
        if n > 0 && starts.first() != Some(&0) {
            return Err(self.err_at(0, "declarations must start at column 1".into(), vec![]));
        }
        starts.push(n);
        let mut out = Vec::new();
        for w in starts.windows(2) {
            let (s, e) = (w[0], w[1]);
            let t = &self.toks[s];
            match &t.tok {
                Tok::Ident(k) if k == "type" => {
                    let name = match self.toks.get(s + 1).map(|t| &t.tok) {
                        Some(Tok::UIdent(n)) if !TYPE_WORDS.contains(&n.as_str()) => n.clone(),
                        _ => return Err(self.err_at(s + 1, "bad type declaration".into(), vec!["type name".into()])),
                    };
                    if !(s + 2 < e && self.toks[s + 2].tok == Tok::Sym("=")) {
                        return Err(self.err_at(s + 2, "bad type declaration".into(), vec!["=".into()]));
                    }
                    out.push(Decl::Alias { name, start: s + 3, end: e });
                }
                Tok::Ident(name) if !EXPR_KEYWORDS.contains(&name.as_str()) => {
                    if s + 1 < e && self.toks[s + 1].tok == Tok::Sym(":") {
                        out.push(Decl::Sig { name: name.clone(), start: s + 2, end: e });
                        continue;
                    }
                    let mut j = s + 1;
                    let mut params = Vec::new();
                    while j < e {
                        match &self.toks[j].tok {
                            Tok::Ident(x) if !EXPR_KEYWORDS.contains(&x.as_str()) => params.push(x.clone()),
                            Tok::Sym("=") => break,
                            _ => return Err(self.err_at(j, "bad definition head".into(), vec!["parameter".into(), "=".into()])),
                        }
                        j += 1;
                    }
                    if j >= e {
                        return Err(self.err_at(j, "bad definition head".into(), vec!["=".into()]));
                    }
                    out.push(Decl::Def { name: name.clone(), params, start: j + 1, end: e, pos: t.pos });
                }
                _ => return Err(self.err_at(s, "expected a declaration".into(), vec!["type".into(), "name".into()])),
            }
        }
        Ok(out)
    }

    fn with_range<T>(&mut self, start: usize, end: usize, f: impl FnOnce(&mut Parser) -> PResult<T>) -> PResult<T> {
        let saved = (self.pos, self.end);
        self.pos = start;
        self.end = end;
        let r = f(self);
        self.pos = saved.0;
        self.end = saved.1;
        r
    }

    fn peek(&self) -> &Tok {
        if self.pos >= self.end {
            &Tok::Eof
        } else {
            &self.toks[self.pos].tok
        }
    }

    fn peek_at(&self, k: usize) -> &Tok {
        if self.pos + k >= self.end {
            &Tok::Eof
        } else {
            &self.toks[self.pos + k].tok
        }
    }

    fn here(&self) -> Pos {
        if self.pos >= self.end && self.end > 0 {
            // past the declaration: blame its last token
            return self.toks[self.end - 1].pos;
        }
        self.toks[self.pos.min(self.toks.len() - 1)].pos
    }

    fn err_at(&self, i: usize, msg: String, expected: Vec<String>) -> ParseError {
        let pos = self.toks[i.min(self.toks.len() - 1)].pos;
        ParseError::Syntax { pos, msg, expected }
    }

    fn unexpected(&self, expected: &[&str]) -> ParseError {
        let found = match self.peek() {
            Tok::Ident(s) | Tok::UIdent(s) => format!("`{s}`"),
            Tok::Int(n) => format!("`{n}`"),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::Eof => "end of declaration".into(),
        };
        ParseError::Syntax { pos: self.here(), msg: format!("unexpected {found}"), expected: expected.iter().map(|s| s.to_string()).collect() }
    }

    fn bump(&mut self) {
        self.pos += 1;
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(t) if *t == s)
    }

    fn is_kw(&self, k: &str) -> bool {
        matches!(self.peek(), Tok::Ident(t) if t == k)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> PResult<()> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            Err(self.unexpected(&[s]))
        }
    }

    fn expect_kw(&mut self, k: &str) -> PResult<()> {
        if self.is_kw(k) {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected(&[k]))
        }
    }

    fn ident(&mut self) -> PResult<Name> {
        match self.peek().clone() {
            Tok::Ident(s) if !EXPR_KEYWORDS.contains(&s.as_str()) => {
                self.bump();
                Ok(s)
            }
            _ => Err(self.unexpected(&["identifier"])),
        }
    }

    fn uident(&mut self) -> PResult<Name> {
        match self.peek().clone() {
            Tok::UIdent(s) => {
                self.bump();
                Ok(s)
            }
            _ => Err(self.unexpected(&["label"])),
        }
    }

    fn int(&mut self) -> PResult<i64> {
        match self.peek().clone() {
            Tok::Int(n) => {
                self.bump();
                Ok(n)
            }
            _ => Err(self.unexpected(&["integer"])),
        }
    }

    fn finish(&self) -> PResult<()> {
        if *self.peek() == Tok::Eof {
            Ok(())
        } else {
            Err(self.unexpected(&["end of declaration"]))
        }
    }

    // ------------------------------------------------------------ priorities

    fn prio_atom(&mut self) -> PResult<Priority> {
        match self.peek().clone() {
            Tok::Ident(s) if s == "top" => {
                self.bump();
                Ok(Priority::Top)
            }
            Tok::Ident(s) if s == "bot" => {
                self.bump();
                Ok(Priority::Bot)
            }
            Tok::Ident(s) if !EXPR_KEYWORDS.contains(&s.as_str()) => {
                self.bump();
                Ok(Priority::Var(s))
            }
            Tok::Int(n) => {
                self.bump();
                Ok(Priority::Lit(n))
            }
            Tok::Sym("(") => {
                self.bump();
                let p = self.prio()?;
                self.expect_sym(")")?;
                Ok(p)
            }
            _ => Err(self.unexpected(&["priority"])),
        }
    }

    fn prio(&mut self) -> PResult<Priority> {
        // `o+` lexes as one symbol; here it is a variable named `o`
        let base = if self.is_sym("o+") {
            self.bump();
            let n = self.int()?;
            return self.displace(Priority::var("o"), n);
        } else {
            self.prio_atom()?
        };
        if self.eat_sym("+") {
            let n = self.int()?;
            return self.displace(base, n);
        }
        Ok(base)
    }

    fn displace(&self, base: Priority, n: i64) -> PResult<Priority> {
        if n < 0 {
            return Err(ParseError::Syntax { pos: self.here(), msg: "negative displacement".into(), expected: vec![] });
        }
        match &base {
            Priority::Lit(m) => m
                .checked_add(n)
                .map(Priority::Lit)
                .ok_or_else(|| ParseError::Lexical { pos: self.here(), msg: "priority out of range".into() }),
            _ => Ok(base.shift(n as u64)),
        }
    }

    fn interval(&mut self) -> PResult<Interval> {
        let lo_open = match self.peek() {
            Tok::Sym("(") => true,
            Tok::Sym("[") => false,
            _ => return Err(self.unexpected(&["(", "["])),
        };
        self.bump();
        let lo = self.prio()?;
        self.expect_sym(",")?;
        let hi = self.prio()?;
        let hi_open = match self.peek() {
            Tok::Sym(")") => true,
            Tok::Sym("]") => false,
            _ => return Err(self.unexpected(&[")", "]"])),
        };
        self.bump();
        Ok(Interval::new(lo, lo_open, hi, hi_open))
    }

    fn prio_value(&mut self) -> PResult<PriorityValue> {
        if let Tok::Ident(s) = self.peek().clone() {
            if let Some(k) = s.strip_prefix("next") {
                let k: u32 = if k.is_empty() {
                    1
                } else {
                    match k.parse() {
                        Ok(k) if k > 0 => k,
                        _ => return Ok(PriorityValue::Prio(self.prio()?)),
                    }
                };
                if matches!(self.peek_at(1), Tok::Ident(_)) {
                    self.bump();
                    let x = self.ident()?;
                    return Ok(PriorityValue::Next(k, x));
                }
            }
        }
        Ok(PriorityValue::Prio(self.prio()?))
    }

    // ----------------------------------------------------------------- types

    fn full_type(&mut self) -> PResult<Type> {
        let t = self.ty()?;
        self.finish()?;
        Ok(t)
    }

    fn expand_alias(&mut self, name: &str, pos: Pos) -> PResult<Type> {
        if let Some(t) = self.alias_cache.get(name) {
            return Ok(t.clone());
        }
        let Some(&(s, e)) = self.aliases.get(name) else {
            return Err(ParseError::UnboundAlias { pos, name: name.into() });
        };
        // Aliases see no outer type variables.
        let saved_scope = std::mem::take(&mut self.tscope);
        let saved_marks = std::mem::take(&mut self.session_marks);
        self.in_progress.push(name.into());
        self.tscope.push((name.into(), None));
        let body = self.with_range(s, e, |p| p.full_type());
        self.tscope.pop();
        self.in_progress.pop();
        let was_session = self.session_marks.contains(name);
        self.tscope = saved_scope;
        self.session_marks = saved_marks;
        let body = body?;
        let t = if body.ftv().contains(name) {
            make_rec(name, body, was_session)
        } else {
            body
        };
        if t.ftv().iter().all(|v| !self.in_progress.contains(v)) {
            self.alias_cache.insert(name.into(), t.clone());
        }
        Ok(t)
    }

    fn bind_type_var<T>(&mut self, v: &str, f: impl FnOnce(&mut Parser) -> PResult<T>) -> PResult<(T, bool)> {
        let saved = self.session_marks.remove(v);
        self.tscope.push((v.into(), None));
        let r = f(self);
        self.tscope.pop();
        let session = self.session_marks.remove(v);
        if saved {
            self.session_marks.insert(v.into());
        }
        Ok((r?, session))
    }

    fn mark_session(&mut self, t: Type) -> Type {
        match t {
            Type::TVarF(v) => {
                self.session_marks.insert(v.clone());
                Type::TVarS(v)
            }
            Type::TVarS(v) => {
                self.session_marks.insert(v.clone());
                Type::TVarS(v)
            }
            t => t,
        }
    }

    fn ty(&mut self) -> PResult<Type> {
        if self.is_kw("forall") {
            self.bump();
            let v = self.ident()?;
            self.expect_sym("::")?;
            let prio = self.prio_atom()?;
            self.expect_sym("=>")?;
            let (body, session) = self.bind_type_var(&v, |p| p.ty())?;
            let body = retag_type(body, &v, session);
            return Ok(Type::forall_t(v, prio, body));
        }
        if self.is_kw("forallp") {
            self.bump();
            let v = self.ident()?;
            self.expect_kw("in")?;
            let iv = self.interval()?;
            self.expect_sym("=>")?;
            let body = self.ty()?;
            return Ok(if body.is_session() {
                let body = self.mark_session(body);
                Type::forall_ps(v, iv, body)
            } else {
                Type::forall_pf(v, iv, body)
            });
        }
        if self.is_kw("rec") {
            self.bump();
            let v = match self.peek().clone() {
                Tok::Ident(s) | Tok::UIdent(s) if !EXPR_KEYWORDS.contains(&s.as_str()) => {
                    self.bump();
                    s
                }
                _ => return Err(self.unexpected(&["recursion variable"])),
            };
            self.expect_sym(".")?;
            let (body, session) = self.bind_type_var(&v, |p| p.ty())?;
            return Ok(make_rec(&v, body, session));
        }
        let dom = self.seq_ty()?;
        let mult = if self.eat_sym("->") {
            Mult::Un
        } else if self.eat_sym("1->") {
            Mult::Lin
        } else {
            return Ok(dom);
        };
        let (lo, hi) = if self.eat_sym("[") {
            let lo = self.prio()?;
            self.expect_sym(",")?;
            let hi = self.prio()?;
            self.expect_sym("]")?;
            (lo, hi)
        } else {
            (Priority::Top, Priority::Bot)
        };
        let cod = self.ty()?;
        Ok(Type::arrow(dom, cod, lo, hi, mult))
    }

    fn seq_ty(&mut self) -> PResult<Type> {
        let a = self.prefix_ty()?;
        if self.eat_sym(";") {
            let b = self.seq_ty_or_binder()?;
            let a = self.mark_session(a);
            let b = self.mark_session(b);
            return Ok(Type::seq(a, b));
        }
        Ok(a)
    }

    /// The right operand of `;` may be a binder form.
    fn seq_ty_or_binder(&mut self) -> PResult<Type> {
        if self.is_kw("forall") || self.is_kw("forallp") || self.is_kw("rec") {
            self.ty()
        } else {
            self.seq_ty()
        }
    }

    fn prefix_ty(&mut self) -> PResult<Type> {
        match self.peek().clone() {
            Tok::Sym("!") | Tok::Sym("?") => {
                let out = self.is_sym("!");
                self.bump();
                let p = self.prio_atom()?;
                let payload = self.atype()?;
                Ok(if out { Type::out(payload, p) } else { Type::inp(payload, p) })
            }
            Tok::Sym("o+") | Tok::Sym("&") => {
                let internal = self.is_sym("o+");
                self.bump();
                let p = self.prio_atom()?;
                let m = self.branches()?;
                Ok(if internal { Type::IntChoice(m, p) } else { Type::ExtChoice(m, p) })
            }
            Tok::UIdent(s) if s == "Close" || s == "Wait" => {
                self.bump();
                let p = self.prio_atom()?;
                Ok(if s == "Close" { Type::Close(p) } else { Type::Wait(p) })
            }
            Tok::Ident(s) if s == "dualof" => {
                let pos = self.here();
                self.bump();
                let t = self.atype()?;
                let t = self.mark_session(t);
                dual(&t).map_err(|e| ParseError::Syntax { pos, msg: format!("dualof: {e}"), expected: vec![] })
            }
            _ => self.atype(),
        }
    }

    fn branches(&mut self) -> PResult<BTreeMap<Label, Type>> {
        self.expect_sym("{")?;
        let mut m = BTreeMap::new();
        loop {
            let pos = self.here();
            let l = self.uident()?;
            self.expect_sym(":")?;
            let s = self.ty()?;
            let s = self.mark_session(s);
            if m.insert(l.clone(), s).is_some() {
                return Err(ParseError::Syntax { pos, msg: format!("duplicate label {l}"), expected: vec![] });
            }
            if !self.eat_sym(",") {
                break;
            }
        }
        self.expect_sym("}")?;
        Ok(m)
    }

    fn atype(&mut self) -> PResult<Type> {
        let pos = self.here();
        match self.peek().clone() {
            Tok::Sym("(") => {
                self.bump();
                if self.eat_sym(")") {
                    return Ok(Type::Unit);
                }
                let a = self.ty()?;
                if self.eat_sym(",") {
                    let b = self.ty()?;
                    self.expect_sym(")")?;
                    return Ok(Type::prod(a, b));
                }
                self.expect_sym(")")?;
                Ok(a)
            }
            Tok::UIdent(s) if s == "Int" => {
                self.bump();
                Ok(Type::Int)
            }
            Tok::UIdent(s) if s == "Skip" => {
                self.bump();
                Ok(Type::Skip)
            }
            Tok::UIdent(s) | Tok::Ident(s) if !EXPR_KEYWORDS.contains(&s.as_str()) && !TYPE_WORDS.contains(&s.as_str()) => {
                if ["forall", "forallp", "rec", "dualof", "top", "bot"].contains(&s.as_str()) {
                    return Err(self.unexpected(&["type"]));
                }
                self.bump();
                if let Some((_, sort)) = self.tscope.iter().rev().find(|(v, _)| *v == s) {
                    return Ok(match sort {
                        Some(true) => Type::TVarS(s),
                        _ => Type::TVarF(s),
                    });
                }
                if s.starts_with(char::is_uppercase) {
                    return self.expand_alias(&s, pos);
                }
                Ok(Type::TVarF(s))
            }
            _ => Err(self.unexpected(&["type"])),
        }
    }

    // ----------------------------------------------------------- expressions

    fn full_expr(&mut self) -> PResult<Expr> {
        let e = self.expr()?;
        self.finish()?;
        Ok(e)
    }

    fn with_locals<T>(&mut self, names: &[Name], f: impl FnOnce(&mut Parser) -> PResult<T>) -> PResult<T> {
        let n = self.locals.len();
        self.locals.extend(names.iter().cloned());
        let r = f(self);
        self.locals.truncate(n);
        r
    }

    fn expr(&mut self) -> PResult<Expr> {
        let pos = self.here();
        let e = match self.peek().clone() {
            Tok::Ident(k) if k == "let" => {
                self.bump();
                if self.eat_sym("(") {
                    let x = self.ident()?;
                    self.expect_sym(",")?;
                    let y = self.ident()?;
                    self.expect_sym(")")?;
                    self.expect_sym("=")?;
                    let bound = self.expr()?;
                    self.expect_kw("in")?;
                    let body = self.with_locals(&[x.clone(), y.clone()], |p| p.expr())?;
                    Expr::let_pair(x, y, bound, body)
                } else {
                    let x = self.ident()?;
                    self.expect_sym("=")?;
                    let bound = self.expr()?;
                    self.expect_kw("in")?;
                    let body = self.with_locals(std::slice::from_ref(&x), |p| p.expr())?;
                    Expr::let_(x, bound, body)
                }
            }
            Tok::Sym("\\") => {
                self.bump();
                let x = self.ident()?;
                self.expect_sym(":")?;
                let t = self.atype()?;
                let mult = if self.eat_sym("->") {
                    Mult::Un
                } else if self.eat_sym("1->") {
                    Mult::Lin
                } else {
                    return Err(self.unexpected(&["->", "1->"]));
                };
                let body = self.with_locals(std::slice::from_ref(&x), |p| p.expr())?;
                Expr::lam(x, t, body, mult)
            }
            Tok::Ident(k) if k == "tlam" => {
                self.bump();
                let v = self.ident()?;
                self.expect_sym("::")?;
                let prio = self.prio_atom()?;
                self.expect_sym("=>")?;
                let (body, session) = self.bind_type_var(&v, |p| p.expr())?;
                let session = session || {
                    let mut s = false;
                    expr_types(&body, &mut |t| {
                        t.visit(&mut |u| {
                            if matches!(u, Type::TVarS(x) if *x == v) {
                                s = true;
                            }
                        })
                    });
                    s
                };
                let body = if session { body.subst_type(&v, &Type::TVarS(v.clone())) } else { body };
                Expr::TAbs { var: v, prio, body: Box::new(body) }
            }
            Tok::Ident(k) if k == "plam" => {
                self.bump();
                let v = self.ident()?;
                self.expect_kw("in")?;
                let interval = self.interval()?;
                self.expect_sym("=>")?;
                let body = self.expr()?;
                Expr::PAbs { var: v, interval, body: Box::new(body) }
            }
            Tok::Ident(k) if k == "match" => {
                self.bump();
                let scrut = self.app()?;
                self.expect_kw("with")?;
                self.expect_sym("{")?;
                let mut branches = BTreeMap::new();
                loop {
                    let bpos = self.here();
                    let l = self.uident()?;
                    let x = self.ident()?;
                    self.expect_sym("->")?;
                    let body = self.with_locals(std::slice::from_ref(&x), |p| p.expr())?;
                    if branches.insert(l.clone(), (x, body)).is_some() {
                        return Err(ParseError::Syntax { pos: bpos, msg: format!("duplicate branch {l}"), expected: vec![] });
                    }
                    if !self.eat_sym(",") {
                        break;
                    }
                }
                self.expect_sym("}")?;
                Expr::Match { scrut: Box::new(scrut), branches }
            }
            _ => {
                let a = self.app()?;
                if self.eat_sym(";") {
                    let b = self.expr()?;
                    Expr::SeqE(Box::new(a), Box::new(b))
                } else {
                    return Ok(a);
                }
            }
        };
        Ok(Expr::At(pos, Box::new(e)))
    }

    fn starts_atom(&self) -> bool {
        match self.peek() {
            Tok::Ident(s) => !EXPR_KEYWORDS.contains(&s.as_str()) || ["fork", "send", "receive", "close", "wait", "fix", "add"].contains(&s.as_str()),
            Tok::Int(_) | Tok::Sym("(") => true,
            _ => false,
        }
    }

    fn app(&mut self) -> PResult<Expr> {
        let pos = self.here();
        let mut e = match self.peek().clone() {
            Tok::Ident(k) if k == "select" => {
                self.bump();
                Expr::Const(Const::Select(self.uident()?))
            }
            Tok::Ident(k) if k == "inst" => {
                self.bump();
                Expr::Inst(Box::new(self.atom()?))
            }
            Tok::Ident(k) if k == "new" => {
                self.bump();
                let t = self.atype()?;
                if let Tok::Int(_) = self.peek() {
                    let a = self.int()?;
                    let b = self.int()?;
                    Expr::NewPoly(t, a, b)
                } else {
                    Expr::New(t)
                }
            }
            _ => self.atom()?,
        };
        let mut applied = false;
        loop {
            if self.eat_sym("@") {
                e = Expr::TApp(Box::new(e), self.atype()?);
            } else if self.eat_sym("{") {
                let s = self.prio_value()?;
                self.expect_sym("}")?;
                e = Expr::PApp(Box::new(e), s);
            } else if self.starts_atom() {
                e = Expr::app(e, self.atom()?);
            } else {
                break;
            }
            applied = true;
        }
        Ok(if applied { Expr::At(pos, Box::new(e)) } else { e })
    }

    fn atom(&mut self) -> PResult<Expr> {
        let pos = self.here();
        let e = match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                match s.as_str() {
                    "fork" => Expr::Const(Const::Fork),
                    "send" => Expr::Const(Const::Send),
                    "receive" => Expr::Const(Const::Receive),
                    "close" => Expr::Const(Const::Close),
                    "wait" => Expr::Const(Const::Wait),
                    "fix" => Expr::Const(Const::Fix),
                    "add" => Expr::Const(Const::Add),
                    _ if EXPR_KEYWORDS.contains(&s.as_str()) => {
                        self.pos -= 1;
                        return Err(self.unexpected(&["expression"]));
                    }
                    _ if !self.locals.contains(&s) && self.funs.contains(&s) => Expr::Ref(s),
                    _ => Expr::Var(s),
                }
            }
            Tok::Int(n) => {
                self.bump();
                Expr::Int(n)
            }
            Tok::Sym("(") => {
                self.bump();
                if self.eat_sym(")") {
                    return Ok(Expr::At(pos, Box::new(Expr::unit())));
                }
                let a = self.expr()?;
                if self.eat_sym(",") {
                    let b = self.expr()?;
                    self.expect_sym(")")?;
                    Expr::pair(a, b)
                } else {
                    self.expect_sym(")")?;
                    return Ok(a);
                }
            }
            _ => return Err(self.unexpected(&["expression"])),
        };
        Ok(Expr::At(pos, Box::new(e)))
    }
}

fn make_rec(v: &str, body: Type, session_marked: bool) -> Type {
    let session = session_marked || body.is_session();
    let body = retag_type(body, v, session);
    if session {
        Type::RecS(v.into(), Box::new(body))
    } else {
        Type::RecF(v.into(), Box::new(body))
    }
}

fn retag_type(body: Type, v: &str, session: bool) -> Type {
    let tv = if session { Type::TVarS(v.into()) } else { Type::TVarF(v.into()) };
    body.subst_type(v, &tv)
}

fn expr_types(e: &Expr, f: &mut dyn FnMut(&Type)) {
    match e {
        Expr::Abs { ty, .. } | Expr::TApp(_, ty) | Expr::New(ty) | Expr::NewPoly(ty, ..) => f(ty),
        _ => {}
    }
    e.for_each_child(&mut |c| {
        expr_types(c, f);
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::type_str;

    fn prog(src: &str) -> Program {
        parse_program(src).unwrap_or_else(|e| panic!("{e}"))
    }

    #[test]
    fn alias_with_displacement() {
        let p = prog("type R = forallp p in (bot,top) => ?p Int; Wait (p+2)\nmain = ()\n");
        let r = &p.type_defs["R"];
        let expected = Type::forall_ps(
            "p",
            Interval::full_open(),
            Type::seq(Type::inp(Type::Int, Priority::var("p")), Type::Wait(Priority::var("p").shift(2))),
        );
        assert_eq!(r, &expected);
    }

    #[test]
    fn recursive_alias_becomes_rec() {
        let p = prog("type Stream = forallp i in (bot,top) => !i () ; Stream\nmain = ()\n");
        match &p.type_defs["Stream"] {
            Type::RecS(v, body) => {
                assert_eq!(v, "Stream");
                assert!(matches!(body.as_ref(), Type::ForallPS { .. }));
            }
            t => panic!("{}", type_str(t)),
        }
    }

    #[test]
    fn new_poly_and_unit() {
        let p = prog("type Stream = forallp i in (bot,top) => !i () ; Stream\nmain = new Stream 1 2\n");
        assert!(matches!(p.main.strip(), Expr::NewPoly(_, 1, 2)));
        let p = prog("main = ()\n");
        assert_eq!(p.main.strip_locs(), Expr::unit());
    }

    #[test]
    fn session_type_variables() {
        let p = prog("f : forall a :: top => (Skip ; a) -> (Int, a)\nf x = (1, x)\nmain = ()\n");
        let sig = &p.fun_defs["f"].sig;
        let mut vars = Vec::new();
        sig.visit(&mut |t| {
            if let Type::TVarS(v) | Type::TVarF(v) = t {
                vars.push(t.clone());
                let _ = v;
            }
        });
        assert!(vars.iter().all(|t| matches!(t, Type::TVarS(_))), "{vars:?}");
    }

    #[test]
    fn errors_carry_positions() {
        match parse_program("main = (\n") {
            Err(ParseError::Syntax { pos, .. }) => assert_eq!(pos.line, 1),
            r => panic!("{r:?}"),
        }
        assert!(matches!(parse_program("main = 99999999999999999999\n"), Err(ParseError::Lexical { .. })));
        assert!(matches!(parse_program("type A = B\nmain = ()\n"), Err(ParseError::UnboundAlias { .. })));
    }

    #[test]
    fn refs_and_locals() {
        let p = prog("f : () -> ()\nf x = x\nmain = f ()\n");
        let (head, _) = p.main.spine();
        assert_eq!(head, &Expr::Ref("f".into()));
        assert_eq!(p.fun_defs["f"].body.strip_locs(), Expr::var("x"));
    }

    #[test]
    fn prio_values() {
        let p = prog("main = close {next c} {next2 c} {p+1} {-3} {top}\n");
        let (_, args) = p.main.spine();
        let got: Vec<PriorityValue> = args
            .into_iter()
            .map(|a| match a {
                Arg::Prio(p) => p.clone(),
                _ => panic!(),
            })
            .collect();
        assert_eq!(
            got,
            vec![
                PriorityValue::Next(1, "c".into()),
                PriorityValue::Next(2, "c".into()),
                PriorityValue::Prio(Priority::var("p").shift(1)),
                PriorityValue::Prio(Priority::Lit(-3)),
                PriorityValue::Prio(Priority::Top),
            ]
        );
    }

    #[test]
    fn round_trip_small() {
        let src = "type W = forallp a in (bot,top) => o+a{Start: ?(a+2) (); W}\n\
                   g : forallp p in (bot,top) => W ->[top,bot] ()\n\
                   g w = match (inst w) with {Start w -> let (_, w) = receive {top} @() {p} @W w in g {next w} w}\n\
                   main = let (a, b) = new W 1 6 in fork {1} {top} (\\_:() 1-> g {next a} a); ()\n";
        let p = prog(src).strip_locs();
        let again = prog(&p.render()).strip_locs();
        assert_eq!(p, again, "{}", p.render());
    }
}
