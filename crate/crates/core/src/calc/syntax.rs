//! Abstract syntax, concrete grammar, parser and printer for the actor calculi.
//!
//! One AST covers all three variants. The parser rejects constructs that are
//! not part of the active [`Variant`]:
//!
//! | construct            | core | transfer | private |
//! |----------------------|------|----------|---------|
//! | `bestow e`, `B(p)`   | yes  | no       | yes     |
//! | `new T(p)`, `T(p)`   | no   | yes      | no      |
//! | `atomic e`, `release e` | no | no      | yes     |
//!
//! Concrete grammar, loosest binding first:
//!
//! ```text
//! expr    ::= 'fn' '(' ident ':' type ')' '=>' expr | app
//! app     ::= send send*                       -- juxtaposition, left-assoc
//! send    ::= prefix ('!' msg)*
//! prefix  ::= ('bestow' | 'atomic' | 'release') prefix | postfix
//! postfix ::= atom ('.' 'mutate' '(' ')')*
//! atom    ::= ident | 'unit' | 'new' type | '(' expr ')'
//! msg     ::= 'unit' | 'fn' ... | '(' msg ')'
//! type    ::= tatom ('->' type)?
//! tatom   ::= 'p' | 'c' | 'Unit' | 'B' '(' 'p' ')' | 'T' '(' 'p' ')' | '(' type ')'
//! ```
//!
//! `--` starts a line comment. A first line of the form `#variant core` selects
//! the variant for the file.
//!
//! Runtime values print with sigils: `@a1` (actor), `#l3` (location),
//! `#l3@a0` (location bestowed by `a0`) and `#l3*` (transferable location).
//! Source programs never contain them; [`parse_runtime`] accepts them so that
//! test fixtures and trace scripts can spell out machine states.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Which calculus a program is written in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Bestowed references with coalesced atomic blocks.
    Core,
    /// Passive objects with transferable ownership.
    Transfer,
    /// Bestowed references plus private message queues.
    #[serde(rename = "private")]
    PrivateQueues,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Core, Variant::Transfer, Variant::PrivateQueues];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Core => "core",
            Variant::Transfer => "transfer",
            Variant::PrivateQueues => "private",
        }
    }

    pub fn allows_bestow(self) -> bool {
        matches!(self, Variant::Core | Variant::PrivateQueues)
    }

    pub fn allows_transferable(self) -> bool {
        self == Variant::Transfer
    }

    pub fn allows_private_queues(self) -> bool {
        self == Variant::PrivateQueues
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "core" => Ok(Variant::Core),
            "transfer" => Ok(Variant::Transfer),
            "private" | "private-queues" => Ok(Variant::PrivateQueues),
            other => Err(format!("unknown variant `{other}` (expected core, transfer or private)")),
        }
    }
}

macro_rules! name_newtype {
    ($(#[$doc:meta])* $name:ident, $prefix:literal) => {
        $(#[$doc])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                s.strip_prefix($prefix)
                    .and_then(|n| n.parse().ok())
                    .map($name)
                    .ok_or_else(|| format!(concat!("expected `", $prefix, "<n>`, found `{}`"), s))
            }
        }
    };
}

name_newtype!(
    /// Actor identifier (`id` in the rules).
    ActorId,
    "a"
);
name_newtype!(
    /// Location of a passive object.
    Loc,
    "l"
);
name_newtype!(
    /// Identifier of a private message queue.
    QueueId,
    "q"
);

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Type {
    /// `c`
    Actor,
    /// `p`
    Passive,
    /// `B(p)`
    Bestowed,
    /// `T(p)`
    Transferable,
    Arrow(Box<Type>, Box<Type>),
    Unit,
}

impl Type {
    pub fn arrow(domain: Type, codomain: Type) -> Type {
        Type::Arrow(Box::new(domain), Box::new(codomain))
    }

    /// Active types may flow into message bodies.
    pub fn is_active(&self) -> bool {
        matches!(self, Type::Actor | Type::Bestowed | Type::Transferable)
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Type::Actor => f.write_str("c"),
            Type::Passive => f.write_str("p"),
            Type::Bestowed => f.write_str("B(p)"),
            Type::Transferable => f.write_str("T(p)"),
            Type::Unit => f.write_str("Unit"),
            Type::Arrow(d, c) => {
                if matches!(**d, Type::Arrow(..)) {
                    write!(f, "({d}) -> {c}")
                } else {
                    write!(f, "{d} -> {c}")
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Value {
    Lambda { param: String, ty: Type, body: Box<Expr> },
    Unit,
    Actor(ActorId),
    Loc(Loc),
    /// A location bestowed by the given actor.
    Bestowed(Loc, ActorId),
    Transferable(Loc),
}

impl Value {
    pub fn lambda(param: impl Into<String>, ty: Type, body: Expr) -> Value {
        Value::Lambda { param: param.into(), ty, body: Box::new(body) }
    }

    pub fn is_runtime_only(&self) -> bool {
        !matches!(self, Value::Lambda { .. } | Value::Unit)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Expr {
    Var(String),
    App(Box<Expr>, Box<Expr>),
    Send(Box<Expr>, Value),
    Mutate(Box<Expr>),
    New(Type),
    Bestow(Box<Expr>),
    Atomic(Box<Expr>),
    Release(Box<Expr>),
    Val(Value),
}

impl Expr {
    pub fn var(name: impl Into<String>) -> Expr {
        Expr::Var(name.into())
    }

    pub fn app(f: Expr, a: Expr) -> Expr {
        Expr::App(Box::new(f), Box::new(a))
    }

    pub fn send(target: Expr, msg: Value) -> Expr {
        Expr::Send(Box::new(target), msg)
    }

    pub fn mutate(target: Expr) -> Expr {
        Expr::Mutate(Box::new(target))
    }

    pub fn bestow(inner: Expr) -> Expr {
        Expr::Bestow(Box::new(inner))
    }

    pub fn atomic(target: Expr) -> Expr {
        Expr::Atomic(Box::new(target))
    }

    pub fn release(target: Expr) -> Expr {
        Expr::Release(Box::new(target))
    }

    pub fn unit() -> Expr {
        Expr::Val(Value::Unit)
    }

    pub fn as_value(&self) -> Option<&Value> {
        match self {
            Expr::Val(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_value(&self) -> bool {
        matches!(self, Expr::Val(_))
    }

    /// Calls `f` on every value occurring in the expression, including values
    /// nested inside lambda bodies and message positions.
    pub fn visit_values<'a>(&'a self, f: &mut impl FnMut(&'a Value)) {
        match self {
            Expr::Var(_) | Expr::New(_) => {}
            Expr::App(a, b) => {
                a.visit_values(f);
                b.visit_values(f);
            }
            Expr::Send(t, v) => {
                t.visit_values(f);
                visit_value(v, f);
            }
            Expr::Mutate(e) | Expr::Bestow(e) | Expr::Atomic(e) | Expr::Release(e) => e.visit_values(f),
            Expr::Val(v) => visit_value(v, f),
        }
    }

    /// True if no runtime-only value occurs anywhere in the expression.
    pub fn is_source(&self) -> bool {
        let mut ok = true;
        self.visit_values(&mut |v| ok &= !v.is_runtime_only());
        ok
    }
}

/// Visits `v` and every value nested inside it.
pub fn visit_value<'a>(v: &'a Value, f: &mut impl FnMut(&'a Value)) {
    f(v);
    if let Value::Lambda { body, .. } = v {
        body.visit_values(f);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SyntaxError {
    #[error("{line}:{col}: parse error: expected {}, found {found}", expected.join(" or "))]
    Parse { line: usize, col: usize, expected: Vec<String>, found: String },
    #[error("{line}:{col}: `{construct}` is not available in the {variant} variant")]
    Variant { line: usize, col: usize, construct: String, variant: Variant },
}

impl SyntaxError {
    pub fn position(&self) -> (usize, usize) {
        match self {
            SyntaxError::Parse { line, col, .. } | SyntaxError::Variant { line, col, .. } => (*line, *col),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("internal error: {0}")]
pub struct InternalError(pub String);

// ---------------------------------------------------------------------------
// Lexer

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Fn,
    Unit,
    New,
    Bestow,
    Atomic,
    Release,
    LParen,
    RParen,
    Colon,
    FatArrow,
    Arrow,
    Bang,
    Dot,
    Lit(Value),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Fn => f.write_str("`fn`"),
            Tok::Unit => f.write_str("`unit`"),
            Tok::New => f.write_str("`new`"),
            Tok::Bestow => f.write_str("`bestow`"),
            Tok::Atomic => f.write_str("`atomic`"),
            Tok::Release => f.write_str("`release`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::Colon => f.write_str("`:`"),
            Tok::FatArrow => f.write_str("`=>`"),
            Tok::Arrow => f.write_str("`->`"),
            Tok::Bang => f.write_str("`!`"),
            Tok::Dot => f.write_str("`.`"),
            Tok::Lit(v) => write!(f, "`{}`", DisplayValue(v)),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(src: &str, line_offset: usize) -> Result<Vec<Spanned>, SyntaxError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1 + line_offset, 1usize);
    let err = |line, col, expected: &str, found: String| SyntaxError::Parse {
        line,
        col,
        expected: vec![expected.to_string()],
        found,
    };
    while i < chars.len() {
        let c = chars[i];
        let (tline, tcol) = (line, col);
        let advance = |n: usize, i: &mut usize, col: &mut usize| {
            *i += n;
            *col += n;
        };
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => advance(1, &mut i, &mut col),
            '-' if chars.get(i + 1) == Some(&'-') => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '-' if chars.get(i + 1) == Some(&'>') => {
                out.push(Spanned { tok: Tok::Arrow, line: tline, col: tcol });
                advance(2, &mut i, &mut col);
            }
            '=' if chars.get(i + 1) == Some(&'>') => {
                out.push(Spanned { tok: Tok::FatArrow, line: tline, col: tcol });
                advance(2, &mut i, &mut col);
            }
            '(' | ')' | ':' | '!' | '.' => {
                let tok = match c {
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    ':' => Tok::Colon,
                    '!' => Tok::Bang,
                    _ => Tok::Dot,
                };
                out.push(Spanned { tok, line: tline, col: tcol });
                advance(1, &mut i, &mut col);
            }
            '@' | '#' => {
                let start = i;
                let mut j = i + 1;
                let want = if c == '@' { 'a' } else { 'l' };
                if chars.get(j) != Some(&want) {
                    return Err(err(tline, tcol, &format!("`{c}{want}<n>`"), c.to_string()));
                }
                j += 1;
                let digits_start = j;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
                if j == digits_start {
                    return Err(err(tline, tcol, "a numeral", chars[start..j].iter().collect()));
                }
                let n: u32 = chars[digits_start..j].iter().collect::<String>().parse().map_err(|_| {
                    err(tline, tcol, "a numeral that fits in 32 bits", chars[start..j].iter().collect())
                })?;
                let value = if c == '@' {
                    Value::Actor(ActorId(n))
                } else if chars.get(j) == Some(&'*') {
                    j += 1;
                    Value::Transferable(Loc(n))
                } else if chars.get(j) == Some(&'@') && chars.get(j + 1) == Some(&'a') {
                    let ds = j + 2;
                    let mut k = ds;
                    while k < chars.len() && chars[k].is_ascii_digit() {
                        k += 1;
                    }
                    if k == ds {
                        return Err(err(tline, tcol, "an owner `@a<n>`", chars[start..k].iter().collect()));
                    }
                    let owner: u32 = chars[ds..k].iter().collect::<String>().parse().map_err(|_| {
                        err(tline, tcol, "a numeral that fits in 32 bits", chars[start..k].iter().collect())
                    })?;
                    j = k;
                    Value::Bestowed(Loc(n), ActorId(owner))
                } else {
                    Value::Loc(Loc(n))
                };
                out.push(Spanned { tok: Tok::Lit(value), line: tline, col: tcol });
                col += j - i;
                i = j;
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '\'') {
                    i += 1;
                }
                col += i - start;
                let word: String = chars[start..i].iter().collect();
                let tok = match word.as_str() {
                    "fn" => Tok::Fn,
                    "unit" => Tok::Unit,
                    "new" => Tok::New,
                    "bestow" => Tok::Bestow,
                    "atomic" => Tok::Atomic,
                    "release" => Tok::Release,
                    _ => Tok::Ident(word),
                };
                out.push(Spanned { tok, line: tline, col: tcol });
            }
            other => return Err(err(tline, tcol, "a token", format!("`{other}`"))),
        }
    }
    out.push(Spanned { tok: Tok::Eof, line, col });
    Ok(out)
}

// ---------------------------------------------------------------------------
// Parser

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    variant: Variant,
    allow_runtime: bool,
}

type PResult<T> = Result<T, SyntaxError>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn here(&self) -> (usize, usize) {
        let t = &self.toks[self.pos];
        (t.line, t.col)
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn fail<T>(&self, expected: &[&str]) -> PResult<T> {
        let (line, col) = self.here();
        Err(SyntaxError::Parse {
            line,
            col,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: self.peek().to_string(),
        })
    }

    fn expect(&mut self, tok: Tok) -> PResult<()> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            self.fail(&[&tok.to_string()])
        }
    }

    fn gate(&self, allowed: bool, construct: &str, at: (usize, usize)) -> PResult<()> {
        if allowed {
            Ok(())
        } else {
            Err(SyntaxError::Variant { line: at.0, col: at.1, construct: construct.to_string(), variant: self.variant })
        }
    }

    fn starts_send(&self) -> bool {
        matches!(
            self.peek(),
            Tok::Ident(_) | Tok::Unit | Tok::New | Tok::LParen | Tok::Bestow | Tok::Atomic | Tok::Release | Tok::Lit(_)
        )
    }

    fn expr(&mut self) -> PResult<Expr> {
        if *self.peek() == Tok::Fn {
            return Ok(Expr::Val(self.lambda()?));
        }
        self.app()
    }

    fn lambda(&mut self) -> PResult<Value> {
        self.expect(Tok::Fn)?;
        self.expect(Tok::LParen)?;
        let param = match self.bump() {
            Tok::Ident(s) => s,
            _ => {
                self.pos -= 1;
                return self.fail(&["a parameter name"]);
            }
        };
        self.expect(Tok::Colon)?;
        let ty = self.ty()?;
        self.expect(Tok::RParen)?;
        self.expect(Tok::FatArrow)?;
        let body = self.expr()?;
        Ok(Value::Lambda { param, ty, body: Box::new(body) })
    }

    fn app(&mut self) -> PResult<Expr> {
        let mut e = self.send()?;
        while self.starts_send() {
            let arg = self.send()?;
            e = Expr::app(e, arg);
        }
        Ok(e)
    }

    fn send(&mut self) -> PResult<Expr> {
        let mut e = self.prefix()?;
        while *self.peek() == Tok::Bang {
            self.bump();
            let msg = self.message()?;
            e = Expr::send(e, msg);
        }
        Ok(e)
    }

    fn message(&mut self) -> PResult<Value> {
        match self.peek().clone() {
            Tok::Unit => {
                self.bump();
                Ok(Value::Unit)
            }
            Tok::Fn => self.lambda(),
            Tok::LParen => {
                self.bump();
                let v = self.message()?;
                self.expect(Tok::RParen)?;
                Ok(v)
            }
            Tok::Lit(v) if self.allow_runtime => {
                self.bump();
                Ok(v)
            }
            _ => self.fail(&["a lambda", "`unit`"]),
        }
    }

    fn prefix(&mut self) -> PResult<Expr> {
        let at = self.here();
        match self.peek() {
            Tok::Bestow => {
                self.gate(self.variant.allows_bestow(), "bestow", at)?;
                self.bump();
                Ok(Expr::bestow(self.prefix()?))
            }
            Tok::Atomic => {
                self.gate(self.variant.allows_private_queues(), "atomic", at)?;
                self.bump();
                Ok(Expr::atomic(self.prefix()?))
            }
            Tok::Release => {
                self.gate(self.variant.allows_private_queues(), "release", at)?;
                self.bump();
                Ok(Expr::release(self.prefix()?))
            }
            _ => self.postfix(),
        }
    }

    fn postfix(&mut self) -> PResult<Expr> {
        let mut e = self.atom()?;
        while *self.peek() == Tok::Dot {
            self.bump();
            match self.bump() {
                Tok::Ident(m) if m == "mutate" => {}
                _ => {
                    self.pos -= 1;
                    return self.fail(&["`mutate`"]);
                }
            }
            self.expect(Tok::LParen)?;
            self.expect(Tok::RParen)?;
            e = Expr::mutate(e);
        }
        Ok(e)
    }

    fn atom(&mut self) -> PResult<Expr> {
        let at = self.here();
        match self.peek().clone() {
            Tok::Ident(name) => {
                self.bump();
                Ok(Expr::Var(name))
            }
            Tok::Unit => {
                self.bump();
                Ok(Expr::unit())
            }
            Tok::New => {
                self.bump();
                let ty_at = self.here();
                let ty = self.ty()?;
                match ty {
                    Type::Passive | Type::Actor => Ok(Expr::New(ty)),
                    Type::Transferable => {
                        self.gate(self.variant.allows_transferable(), "new T(p)", at)?;
                        Ok(Expr::New(ty))
                    }
                    _ => Err(SyntaxError::Parse {
                        line: ty_at.0,
                        col: ty_at.1,
                        expected: vec!["`p`".into(), "`c`".into(), "`T(p)`".into()],
                        found: format!("`{ty}`"),
                    }),
                }
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::Lit(v) if self.allow_runtime => {
                self.bump();
                Ok(Expr::Val(v))
            }
            _ => self.fail(&["an expression"]),
        }
    }

    fn ty(&mut self) -> PResult<Type> {
        let dom = self.ty_atom()?;
        if *self.peek() == Tok::Arrow {
            self.bump();
            let cod = self.ty()?;
            Ok(Type::arrow(dom, cod))
        } else {
            Ok(dom)
        }
    }

    fn ty_atom(&mut self) -> PResult<Type> {
        let at = self.here();
        match self.peek().clone() {
            Tok::Ident(s) => match s.as_str() {
                "p" => {
                    self.bump();
                    Ok(Type::Passive)
                }
                "c" => {
                    self.bump();
                    Ok(Type::Actor)
                }
                "Unit" => {
                    self.bump();
                    Ok(Type::Unit)
                }
                "B" | "T" => {
                    self.bump();
                    self.expect(Tok::LParen)?;
                    match self.peek() {
                        Tok::Ident(p) if p == "p" => {
                            self.bump();
                        }
                        _ => return self.fail(&["`p`"]),
                    }
                    self.expect(Tok::RParen)?;
                    if s == "B" {
                        self.gate(self.variant.allows_bestow(), "B(p)", at)?;
                        Ok(Type::Bestowed)
                    } else {
                        self.gate(self.variant.allows_transferable(), "T(p)", at)?;
                        Ok(Type::Transferable)
                    }
                }
                _ => self.fail(&["a type"]),
            },
            Tok::LParen => {
                self.bump();
                let t = self.ty()?;
                self.expect(Tok::RParen)?;
                Ok(t)
            }
            _ => self.fail(&["a type"]),
        }
    }
}

/// Splits off a leading `#variant <name>` pragma line, if present.
pub fn split_pragma(source: &str) -> Result<(Option<Variant>, &str, usize), SyntaxError> {
    let first_line_end = source.find('\n').unwrap_or(source.len());
    let first = source[..first_line_end].trim();
    if let Some(rest) = first.strip_prefix("#variant") {
        let name = rest.trim();
        let variant = name.parse::<Variant>().map_err(|_| SyntaxError::Parse {
            line: 1,
            col: 10,
            expected: vec!["`core`".into(), "`transfer`".into(), "`private`".into()],
            found: format!("`{name}`"),
        })?;
        let rest_start = (first_line_end + 1).min(source.len());
        return Ok((Some(variant), &source[rest_start..], 1));
    }
    Ok((None, source, 0))
}

fn parse_with(source: &str, variant: Variant, allow_runtime: bool) -> Result<Expr, SyntaxError> {
    let (_, body, offset) = split_pragma(source)?;
    let toks = lex(body, offset)?;
    let mut p = Parser { toks, pos: 0, variant, allow_runtime };
    let e = p.expr()?;
    if *p.peek() != Tok::Eof {
        return p.fail(&["end of input"]);
    }
    Ok(e)
}

/// Parses a source program. Runtime-only values are rejected.
///
/// A `#variant` pragma line is skipped; `variant` decides what is legal.
pub fn parse(source: &str, variant: Variant) -> Result<Expr, SyntaxError> {
    parse_with(source, variant, false)
}

/// Like [`parse`], but also accepts runtime values (`@a1`, `#l3`, `#l3@a0`, `#l3*`).
pub fn parse_runtime(source: &str, variant: Variant) -> Result<Expr, SyntaxError> {
    parse_with(source, variant, true)
}

/// Parses a program file: the `#variant` pragma wins over `default` when `explicit` is `None`.
pub fn parse_program(source: &str, explicit: Option<Variant>) -> Result<(Variant, Expr), SyntaxError> {
    let (pragma, _, _) = split_pragma(source)?;
    let variant = explicit.or(pragma).unwrap_or(Variant::Core);
    Ok((variant, parse(source, variant)?))
}

/// Parses a type annotation in isolation.
pub fn parse_type(source: &str, variant: Variant) -> Result<Type, SyntaxError> {
    let toks = lex(source, 0)?;
    let mut p = Parser { toks, pos: 0, variant, allow_runtime: false };
    let t = p.ty()?;
    if *p.peek() != Tok::Eof {
        return p.fail(&["end of input"]);
    }
    Ok(t)
}

// ---------------------------------------------------------------------------
// Printer

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Prec {
    Lambda,
    App,
    Send,
    Prefix,
    Postfix,
}

struct Printer {
    out: String,
    strict: bool,
    error: Option<InternalError>,
}

impl Printer {
    fn expr(&mut self, e: &Expr, ctx: Prec) {
        match e {
            Expr::Var(x) => self.out.push_str(x),
            Expr::Val(v) => self.value(v, ctx),
            Expr::New(ty) => {
                if self.strict && !matches!(ty, Type::Passive | Type::Actor | Type::Transferable) {
                    self.error.get_or_insert_with(|| InternalError(format!("`new {ty}` has no concrete syntax")));
                }
                self.out.push_str("new ");
                self.out.push_str(&ty.to_string());
            }
            Expr::App(f, a) => self.wrap(ctx > Prec::App, |p| {
                p.expr(f, Prec::App);
                p.out.push(' ');
                p.expr(a, Prec::Send);
            }),
            Expr::Send(t, m) => self.wrap(ctx > Prec::Send, |p| {
                p.expr(t, Prec::Send);
                p.out.push_str(" ! ");
                match m {
                    Value::Lambda { .. } => {
                        p.out.push('(');
                        p.value(m, Prec::Lambda);
                        p.out.push(')');
                    }
                    _ => p.value(m, Prec::Postfix),
                }
            }),
            Expr::Mutate(t) => {
                self.expr(t, Prec::Postfix);
                self.out.push_str(".mutate()");
            }
            Expr::Bestow(t) | Expr::Atomic(t) | Expr::Release(t) => self.wrap(ctx > Prec::Prefix, |p| {
                p.out.push_str(match e {
                    Expr::Bestow(_) => "bestow ",
                    Expr::Atomic(_) => "atomic ",
                    _ => "release ",
                });
                p.expr(t, Prec::Prefix);
            }),
        }
    }

    fn value(&mut self, v: &Value, ctx: Prec) {
        match v {
            Value::Unit => self.out.push_str("unit"),
            Value::Actor(a) => {
                self.out.push('@');
                self.out.push_str(&a.to_string());
            }
            Value::Loc(l) => {
                self.out.push('#');
                self.out.push_str(&l.to_string());
            }
            Value::Bestowed(l, a) => {
                self.out.push_str(&format!("#{l}@{a}"));
            }
            Value::Transferable(l) => {
                self.out.push_str(&format!("#{l}*"));
            }
            Value::Lambda { param, ty, body } => self.wrap(ctx > Prec::Lambda, |p| {
                p.out.push_str(&format!("fn ({param} : {ty}) => "));
                p.expr(body, Prec::Lambda);
            }),
        }
    }

    fn wrap(&mut self, parens: bool, f: impl FnOnce(&mut Self)) {
        if parens {
            self.out.push('(');
        }
        f(self);
        if parens {
            self.out.push(')');
        }
    }
}

/// Renders an expression in the concrete grammar.
///
/// Fails only for ASTs the grammar cannot express, such as `new B(p)`.
pub fn pretty(e: &Expr) -> Result<String, InternalError> {
    let mut p = Printer { out: String::new(), strict: true, error: None };
    p.expr(e, Prec::Lambda);
    match p.error {
        Some(err) => Err(err),
        None => Ok(p.out),
    }
}

/// Renders a value in the concrete grammar (runtime values use sigils).
pub fn pretty_value(v: &Value) -> String {
    let mut p = Printer { out: String::new(), strict: false, error: None };
    p.value(v, Prec::Lambda);
    p.out
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut p = Printer { out: String::new(), strict: false, error: None };
        p.expr(self, Prec::Lambda);
        f.write_str(&p.out)
    }
}

struct DisplayValue<'a>(&'a Value);

impl fmt::Display for DisplayValue<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&pretty_value(self.0))
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&pretty_value(self))
    }
}
