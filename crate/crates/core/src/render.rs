//! Textual rendering of types and expressions in the surface syntax.
//!
//! Session and channel types, and surface expressions, re-parse to the same
//! structure. Internal forms (object ids, endpoints, `return`, `C[F]`) are
//! rendered for diagnostics only.

use std::fmt::{self, Display, Formatter};

use crate::syntax::{
    ChannelType, Expr, FieldTyping, MethodEntry, Payload, Record, SessionType, ValueType,
};

fn var_name(x: &str) -> String {
    // Alpha-normalised binders are not identifiers.
    match x.strip_prefix('#') {
        Some(n) => format!("X_{n}"),
        None => x.to_string(),
    }
}

fn list<T, F>(f: &mut Formatter<'_>, items: impl IntoIterator<Item = T>, mut each: F) -> fmt::Result
where
    F: FnMut(&mut Formatter<'_>, T) -> fmt::Result,
{
    for (i, it) in items.into_iter().enumerate() {
        if i > 0 {
            write!(f, ", ")?;
        }
        each(f, it)?;
    }
    Ok(())
}

impl Display for SessionType {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            SessionType::Branch(es) => {
                write!(f, "{{")?;
                list(f, es, |f, e| write!(f, "{e}"))?;
                write!(f, "}}")
            }
            SessionType::Variant(cs) => {
                write!(f, "<")?;
                list(f, cs, |f, (l, s)| write!(f, "{l}: {s}"))?;
                write!(f, ">")
            }
            SessionType::Rec(x, b) => write!(f, "rec {}. {b}", var_name(x)),
            SessionType::Var(x) => write!(f, "{}", var_name(x)),
        }
    }
}

impl Display for MethodEntry {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}(", self.result, self.name)?;
        if self.param != ValueType::Null {
            write!(f, "{}", self.param)?;
        }
        write!(f, "): {}", self.cont)
    }
}

impl Display for ValueType {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            ValueType::Null => write!(f, "Null"),
            ValueType::Enum(ls) => {
                write!(f, "{{")?;
                list(f, ls, |f, l| write!(f, "{l}"))?;
                write!(f, "}}")
            }
            ValueType::Session(s) => write!(f, "{s}"),
            ValueType::LinkThis => write!(f, "linkthis"),
            ValueType::Link(x) => write!(f, "link {x}"),
            ValueType::Object(o) => write!(f, "{}[{}]", o.class, o.typing),
        }
    }
}

fn record(f: &mut Formatter<'_>, r: &Record) -> fmt::Result {
    write!(f, "{{")?;
    list(f, r, |f, (x, t)| write!(f, "{t} {x}"))?;
    write!(f, "}}")
}

impl Display for FieldTyping {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            FieldTyping::Record(r) => record(f, r),
            FieldTyping::Variant(cs) => {
                write!(f, "<")?;
                list(f, cs, |f, (l, r)| {
                    write!(f, "{l}: ")?;
                    record(f, r)
                })?;
                write!(f, ">")
            }
        }
    }
}

impl Display for Payload {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            Payload::Value(t) => write!(f, "{t}"),
            Payload::Chan(c) => write!(f, "chan({c})"),
        }
    }
}

impl Display for ChannelType {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        let cases = |f: &mut Formatter<'_>, cs: &std::collections::BTreeMap<String, ChannelType>| {
            write!(f, "{{")?;
            list(f, cs, |f, (l, c)| write!(f, "{l}: {c}"))?;
            write!(f, "}}")
        };
        match self {
            ChannelType::End => write!(f, "End"),
            ChannelType::Var(x) => write!(f, "{}", var_name(x)),
            ChannelType::Rec(x, b) => write!(f, "rec {}. {b}", var_name(x)),
            ChannelType::Recv(p, k) => write!(f, "?{p}.{k}"),
            ChannelType::Send(p, k) => write!(f, "!{p}.{k}"),
            ChannelType::Offer(cs) => {
                write!(f, "&")?;
                cases(f, cs)
            }
            ChannelType::Select(cs) => {
                write!(f, "+")?;
                cases(f, cs)
            }
        }
    }
}

/// Expression wrapper that parenthesises a sequence when it appears where a
/// single statement is expected.
struct Stmt<'a>(&'a Expr);

impl Display for Stmt<'_> {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self.0 {
            Expr::Seq(..) => write!(f, "({})", self.0),
            e => write!(f, "{e}"),
        }
    }
}

impl Display for Expr {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Null => write!(f, "null"),
            Expr::Label(l) => write!(f, "{l}"),
            Expr::Var(x) => write!(f, "{x}"),
            Expr::New(c) => write!(f, "new {c}()"),
            Expr::Swap(x, e) => write!(f, "{x} <-> {}", Stmt(e)),
            Expr::Call(x, m, e) => write!(f, "{x}.{m}({e})"),
            Expr::SelfCall(m, e) => write!(f, "{m}({e})"),
            Expr::Seq(a, b) => write!(f, "{}; {b}", Stmt(a)),
            Expr::Switch(e, cases) => {
                write!(f, "switch ({e}) {{")?;
                for (l, c) in cases {
                    write!(f, " {l}: {c};")?;
                }
                write!(f, " }}")
            }
            Expr::While(c, b) => write!(f, "while ({c}) {{ {b} }}"),
            Expr::Spawn(c, m, e) => write!(f, "spawn {c}.{m}({e})"),
            Expr::Return(e) => write!(f, "return({e})"),
            Expr::ObjId(o) => write!(f, "@{o}"),
            Expr::Endpoint(c, p) => write!(f, "{c}{}", p.sign()),
            Expr::AccessName(n) => write!(f, "{n}"),
        }
    }
}
