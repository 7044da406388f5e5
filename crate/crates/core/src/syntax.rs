//! Abstract syntax: session types, value types, field typings, channel
//! types, expressions and declarations, plus the structural operations on
//! recursive types (substitution, unfolding, contractiveness, alpha
//! normalisation).

use std::collections::{BTreeMap, BTreeSet};

pub type Label = String;
pub type LabelSet = BTreeSet<Label>;
/// Record field typing: field name to type.
pub type Record = BTreeMap<String, ValueType>;

/// Class session type `S`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SessionType {
    /// `{T m(T'): S, ...}`; source order is kept, comparison treats it as a set.
    Branch(Vec<MethodEntry>),
    Variant(BTreeMap<Label, SessionType>),
    Rec(String, Box<SessionType>),
    Var(String),
}

/// One signature `result name(param): cont` of a branch.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MethodEntry {
    pub name: String,
    pub param: ValueType,
    pub result: ValueType,
    pub cont: SessionType,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ValueType {
    Null,
    Enum(LabelSet),
    Session(SessionType),
    LinkThis,
    Link(String),
    /// Internal object type `C[F]`, only produced while an object is open.
    Object(Box<ObjectInternal>),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObjectInternal {
    pub class: String,
    pub typing: FieldTyping,
}

/// Internal view of an object's fields.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FieldTyping {
    Record(Record),
    Variant(BTreeMap<Label, Record>),
}

/// Channel session type `Σ`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ChannelType {
    End,
    Recv(Box<Payload>, Box<ChannelType>),
    Send(Box<Payload>, Box<ChannelType>),
    Offer(BTreeMap<Label, ChannelType>),
    Select(BTreeMap<Label, ChannelType>),
    Rec(String, Box<ChannelType>),
    Var(String),
}

/// What a channel message carries: a value type or an endpoint (delegation).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Payload {
    Value(ValueType),
    Chan(ChannelType),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    Plus,
    Minus,
}

impl Polarity {
    pub fn flip(self) -> Polarity {
        match self {
            Polarity::Plus => Polarity::Minus,
            Polarity::Minus => Polarity::Plus,
        }
    }

    pub fn sign(self) -> char {
        match self {
            Polarity::Plus => '+',
            Polarity::Minus => '-',
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Expr {
    Null,
    Label(Label),
    Var(String),
    New(String),
    Swap(String, Box<Expr>),
    Call(String, String, Box<Expr>),
    SelfCall(String, Box<Expr>),
    Seq(Box<Expr>, Box<Expr>),
    Switch(Box<Expr>, BTreeMap<Label, Expr>),
    While(Box<Expr>, Box<Expr>),
    Spawn(String, String, Box<Expr>),
    Return(Box<Expr>),
    ObjId(String),
    Endpoint(String, Polarity),
    AccessName(String),
}

impl Expr {
    pub fn is_value(&self) -> bool {
        matches!(
            self,
            Expr::Null | Expr::Label(_) | Expr::ObjId(_) | Expr::Endpoint(..) | Expr::AccessName(_)
        )
    }

    pub fn swap(f: &str, e: Expr) -> Expr {
        Expr::Swap(f.to_string(), Box::new(e))
    }

    pub fn call(f: &str, m: &str, e: Expr) -> Expr {
        Expr::Call(f.to_string(), m.to_string(), Box::new(e))
    }

    pub fn seq(a: Expr, b: Expr) -> Expr {
        Expr::Seq(Box::new(a), Box::new(b))
    }

    /// `f = e`, sugar for `(f <-> e); null`.
    pub fn assign(f: &str, e: Expr) -> Expr {
        Expr::seq(Expr::swap(f, e), Expr::Null)
    }

    /// Capture-free substitution of a value for a parameter.
    pub fn subst(&self, x: &str, v: &Expr) -> Expr {
        let s = |e: &Expr| Box::new(e.subst(x, v));
        match self {
            Expr::Var(y) if y == x => v.clone(),
            Expr::Swap(f, e) => Expr::Swap(f.clone(), s(e)),
            Expr::Call(f, m, e) => Expr::Call(f.clone(), m.clone(), s(e)),
            Expr::SelfCall(m, e) => Expr::SelfCall(m.clone(), s(e)),
            Expr::Seq(a, b) => Expr::Seq(s(a), s(b)),
            Expr::Switch(e, cases) => Expr::Switch(
                s(e),
                cases.iter().map(|(l, c)| (l.clone(), c.subst(x, v))).collect(),
            ),
            Expr::While(c, b) => Expr::While(s(c), s(b)),
            Expr::Spawn(c, m, e) => Expr::Spawn(c.clone(), m.clone(), s(e)),
            Expr::Return(e) => Expr::Return(s(e)),
            other => other.clone(),
        }
    }
}

/// `req F ens F' T m(T' x)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Annotation {
    pub req: FieldTyping,
    pub ens: FieldTyping,
    pub result: ValueType,
    pub param: ValueType,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MethodDecl {
    pub name: String,
    pub param: String,
    pub body: Expr,
    pub annotation: Option<Annotation>,
    /// Source line of the method header.
    pub line: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassDecl {
    pub name: String,
    pub session: SessionType,
    pub fields: Vec<String>,
    pub methods: Vec<MethodDecl>,
    /// Named states from the `where` clause, already folded to closed types.
    pub states: BTreeMap<String, SessionType>,
}

impl ClassDecl {
    pub fn method(&self, name: &str) -> Option<&MethodDecl> {
        self.methods.iter().find(|m| m.name == name)
    }

    /// The all-`Null` field typing used for fresh objects.
    pub fn null_typing(&self) -> FieldTyping {
        FieldTyping::Record(
            self.fields.iter().map(|f| (f.clone(), ValueType::Null)).collect(),
        )
    }
}

/// A named global type: either a session type or a value type (enumeration).
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GlobalType {
    Session(SessionType),
    Value(ValueType),
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Program {
    pub classes: BTreeMap<String, ClassDecl>,
    pub class_order: Vec<String>,
    pub access_points: BTreeMap<String, ChannelType>,
    pub channels: BTreeMap<String, ChannelType>,
    pub types: BTreeMap<String, GlobalType>,
    pub main: Option<(String, String)>,
}

impl Program {
    pub fn class(&self, name: &str) -> Option<&ClassDecl> {
        self.classes.get(name)
    }

    /// The designated main method, defaulting to `Main.main`.
    pub fn main_method(&self) -> (String, String) {
        self.main
            .clone()
            .unwrap_or_else(|| ("Main".to_string(), "main".to_string()))
    }
}

pub fn enum_of<I: IntoIterator<Item = S>, S: Into<String>>(labels: I) -> ValueType {
    ValueType::Enum(labels.into_iter().map(Into::into).collect())
}

pub fn labels<I: IntoIterator<Item = S>, S: Into<String>>(labels: I) -> LabelSet {
    labels.into_iter().map(Into::into).collect()
}

impl MethodEntry {
    pub fn new(name: &str, param: ValueType, result: ValueType, cont: SessionType) -> Self {
        MethodEntry { name: name.to_string(), param, result, cont }
    }
}

impl SessionType {
    pub fn end() -> SessionType {
        SessionType::Branch(Vec::new())
    }

    pub fn rec(x: &str, body: SessionType) -> SessionType {
        SessionType::Rec(x.to_string(), Box::new(body))
    }

    pub fn var(x: &str) -> SessionType {
        SessionType::Var(x.to_string())
    }

    /// Substitute `r` for free occurrences of `x`. `r` must be closed.
    pub fn subst(&self, x: &str, r: &SessionType) -> SessionType {
        match self {
            SessionType::Var(y) if y == x => r.clone(),
            SessionType::Var(_) => self.clone(),
            SessionType::Rec(y, _) if y == x => self.clone(),
            SessionType::Rec(y, b) => SessionType::Rec(y.clone(), Box::new(b.subst(x, r))),
            SessionType::Branch(es) => SessionType::Branch(
                es.iter()
                    .map(|e| MethodEntry {
                        name: e.name.clone(),
                        param: e.param.subst(x, r),
                        result: e.result.subst(x, r),
                        cont: e.cont.subst(x, r),
                    })
                    .collect(),
            ),
            SessionType::Variant(cs) => SessionType::Variant(
                cs.iter().map(|(l, s)| (l.clone(), s.subst(x, r))).collect(),
            ),
        }
    }

    /// Unfold top-level recursion until a branch, variant or variable remains.
    pub fn unfold(&self) -> SessionType {
        let mut cur = self.clone();
        while let SessionType::Rec(x, body) = &cur {
            cur = body.subst(x, &cur);
        }
        cur
    }

    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_free(&mut Vec::new(), &mut out);
        out
    }

    fn collect_free(&self, bound: &mut Vec<String>, out: &mut BTreeSet<String>) {
        match self {
            SessionType::Var(x) => {
                if !bound.contains(x) {
                    out.insert(x.clone());
                }
            }
            SessionType::Rec(x, b) => {
                bound.push(x.clone());
                b.collect_free(bound, out);
                bound.pop();
            }
            SessionType::Branch(es) => {
                for e in es {
                    e.param.collect_free(bound, out);
                    e.result.collect_free(bound, out);
                    e.cont.collect_free(bound, out);
                }
            }
            SessionType::Variant(cs) => {
                for s in cs.values() {
                    s.collect_free(bound, out);
                }
            }
        }
    }

    pub fn is_closed(&self) -> bool {
        self.free_vars().is_empty()
    }

    /// No `rec X1 ... rec Xn . Xi` chains anywhere in the term.
    pub fn is_contractive(&self) -> bool {
        match self {
            SessionType::Var(_) => true,
            SessionType::Rec(..) => {
                let mut chain = Vec::new();
                let mut cur = self;
                while let SessionType::Rec(x, b) = cur {
                    chain.push(x.as_str());
                    cur = b;
                }
                if let SessionType::Var(y) = cur {
                    if chain.contains(&y.as_str()) {
                        return false;
                    }
                }
                cur.is_contractive()
            }
            SessionType::Branch(es) => es.iter().all(|e| {
                e.param.is_contractive() && e.result.is_contractive() && e.cont.is_contractive()
            }),
            SessionType::Variant(cs) => cs.values().all(SessionType::is_contractive),
        }
    }

    /// Alpha-normalised form: binders renamed by nesting depth, branch entries
    /// sorted, vacuous binders dropped. Equal canonical forms denote the same type.
    pub fn canon(&self) -> SessionType {
        self.canon_at(&mut Vec::new())
    }

    fn canon_at(&self, env: &mut Vec<(String, String)>) -> SessionType {
        match self {
            SessionType::Var(x) => match env.iter().rev().find(|(a, _)| a == x) {
                Some((_, b)) => SessionType::Var(b.clone()),
                None => self.clone(),
            },
            SessionType::Rec(x, b) => {
                if !b.free_vars().contains(x) {
                    return b.canon_at(env);
                }
                let fresh = format!("#{}", env.len());
                env.push((x.clone(), fresh.clone()));
                let body = b.canon_at(env);
                env.pop();
                SessionType::Rec(fresh, Box::new(body))
            }
            SessionType::Branch(es) => {
                let mut v: Vec<MethodEntry> = es
                    .iter()
                    .map(|e| MethodEntry {
                        name: e.name.clone(),
                        param: e.param.canon_at(env),
                        result: e.result.canon_at(env),
                        cont: e.cont.canon_at(env),
                    })
                    .collect();
                v.sort();
                v.dedup();
                SessionType::Branch(v)
            }
            SessionType::Variant(cs) => SessionType::Variant(
                cs.iter().map(|(l, s)| (l.clone(), s.canon_at(env))).collect(),
            ),
        }
    }

    /// Depth of the syntax tree (used by generators and tests).
    pub fn depth(&self) -> usize {
        match self {
            SessionType::Var(_) => 1,
            SessionType::Rec(_, b) => 1 + b.depth(),
            SessionType::Branch(es) => {
                1 + es.iter().map(|e| e.cont.depth()).max().unwrap_or(0)
            }
            SessionType::Variant(cs) => 1 + cs.values().map(|s| s.depth()).max().unwrap_or(0),
        }
    }
}

impl ValueType {
    pub fn session(&self) -> Option<&SessionType> {
        match self {
            ValueType::Session(s) => Some(s),
            _ => None,
        }
    }

    pub fn enum_labels(&self) -> Option<&LabelSet> {
        match self {
            ValueType::Enum(e) => Some(e),
            _ => None,
        }
    }

    /// Linear types are consumed when a parameter is read.
    pub fn is_linear(&self) -> bool {
        matches!(self, ValueType::Session(_) | ValueType::Object(_))
    }

    pub fn subst(&self, x: &str, r: &SessionType) -> ValueType {
        match self {
            ValueType::Session(s) => ValueType::Session(s.subst(x, r)),
            other => other.clone(),
        }
    }

    fn collect_free(&self, bound: &mut Vec<String>, out: &mut BTreeSet<String>) {
        if let ValueType::Session(s) = self {
            s.collect_free(bound, out);
        }
    }

    fn is_contractive(&self) -> bool {
        match self {
            ValueType::Session(s) => s.is_contractive(),
            _ => true,
        }
    }

    fn canon_at(&self, env: &mut Vec<(String, String)>) -> ValueType {
        match self {
            ValueType::Session(s) => ValueType::Session(s.canon_at(env)),
            ValueType::Object(o) => ValueType::Object(Box::new(ObjectInternal {
                class: o.class.clone(),
                typing: o.typing.canon(),
            })),
            other => other.clone(),
        }
    }

    pub fn canon(&self) -> ValueType {
        self.canon_at(&mut Vec::new())
    }
}

impl FieldTyping {
    pub fn record(&self) -> Option<&Record> {
        match self {
            FieldTyping::Record(r) => Some(r),
            FieldTyping::Variant(_) => None,
        }
    }

    pub fn is_variant(&self) -> bool {
        matches!(self, FieldTyping::Variant(_))
    }

    pub fn get(&self, f: &str) -> Option<&ValueType> {
        self.record().and_then(|r| r.get(f))
    }

    pub fn canon(&self) -> FieldTyping {
        let rc = |r: &Record| -> Record { r.iter().map(|(f, t)| (f.clone(), t.canon())).collect() };
        match self {
            FieldTyping::Record(r) => FieldTyping::Record(rc(r)),
            FieldTyping::Variant(cs) => {
                FieldTyping::Variant(cs.iter().map(|(l, r)| (l.clone(), rc(r))).collect())
            }
        }
    }
}

impl ChannelType {
    pub fn rec(x: &str, body: ChannelType) -> ChannelType {
        ChannelType::Rec(x.to_string(), Box::new(body))
    }

    pub fn subst(&self, x: &str, r: &ChannelType) -> ChannelType {
        let p = |pl: &Payload| -> Box<Payload> {
            Box::new(match pl {
                Payload::Chan(c) => Payload::Chan(c.subst(x, r)),
                v => v.clone(),
            })
        };
        match self {
            ChannelType::Var(y) if y == x => r.clone(),
            ChannelType::Rec(y, _) if y == x => self.clone(),
            ChannelType::Rec(y, b) => ChannelType::Rec(y.clone(), Box::new(b.subst(x, r))),
            ChannelType::Recv(pl, k) => ChannelType::Recv(p(pl), Box::new(k.subst(x, r))),
            ChannelType::Send(pl, k) => ChannelType::Send(p(pl), Box::new(k.subst(x, r))),
            ChannelType::Offer(cs) => {
                ChannelType::Offer(cs.iter().map(|(l, c)| (l.clone(), c.subst(x, r))).collect())
            }
            ChannelType::Select(cs) => {
                ChannelType::Select(cs.iter().map(|(l, c)| (l.clone(), c.subst(x, r))).collect())
            }
            other => other.clone(),
        }
    }

    pub fn unfold(&self) -> ChannelType {
        let mut cur = self.clone();
        while let ChannelType::Rec(x, body) = &cur {
            cur = body.subst(x, &cur);
        }
        cur
    }

    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_free(&mut Vec::new(), &mut out);
        out
    }

    fn collect_free(&self, bound: &mut Vec<String>, out: &mut BTreeSet<String>) {
        let pay = |pl: &Payload, bound: &mut Vec<String>, out: &mut BTreeSet<String>| {
            if let Payload::Chan(c) = pl {
                c.collect_free(bound, out)
            }
        };
        match self {
            ChannelType::End => {}
            ChannelType::Var(x) => {
                if !bound.contains(x) {
                    out.insert(x.clone());
                }
            }
            ChannelType::Rec(x, b) => {
                bound.push(x.clone());
                b.collect_free(bound, out);
                bound.pop();
            }
            ChannelType::Recv(pl, k) | ChannelType::Send(pl, k) => {
                pay(pl, bound, out);
                k.collect_free(bound, out);
            }
            ChannelType::Offer(cs) | ChannelType::Select(cs) => {
                for c in cs.values() {
                    c.collect_free(bound, out);
                }
            }
        }
    }

    pub fn is_contractive(&self) -> bool {
        match self {
            ChannelType::End | ChannelType::Var(_) => true,
            ChannelType::Rec(..) => {
                let mut chain = Vec::new();
                let mut cur = self;
                while let ChannelType::Rec(x, b) = cur {
                    chain.push(x.as_str());
                    cur = b;
                }
                if let ChannelType::Var(y) = cur {
                    if chain.contains(&y.as_str()) {
                        return false;
                    }
                }
                cur.is_contractive()
            }
            ChannelType::Recv(pl, k) | ChannelType::Send(pl, k) => {
                let ok = match &**pl {
                    Payload::Chan(c) => c.is_contractive(),
                    Payload::Value(ValueType::Session(s)) => s.is_contractive(),
                    _ => true,
                };
                ok && k.is_contractive()
            }
            ChannelType::Offer(cs) | ChannelType::Select(cs) => {
                cs.values().all(ChannelType::is_contractive)
            }
        }
    }

    /// Alpha-normalised form with vacuous binders dropped.
    pub fn canon(&self) -> ChannelType {
        self.canon_at(&mut Vec::new())
    }

    fn canon_at(&self, env: &mut Vec<(String, String)>) -> ChannelType {
        let pay = |pl: &Payload, env: &mut Vec<(String, String)>| -> Box<Payload> {
            Box::new(match pl {
                Payload::Chan(c) => Payload::Chan(c.canon_at(env)),
                Payload::Value(v) => Payload::Value(v.canon()),
            })
        };
        match self {
            ChannelType::End => ChannelType::End,
            ChannelType::Var(x) => match env.iter().rev().find(|(a, _)| a == x) {
                Some((_, b)) => ChannelType::Var(b.clone()),
                None => self.clone(),
            },
            ChannelType::Rec(x, b) => {
                if !b.free_vars().contains(x) {
                    return b.canon_at(env);
                }
                let fresh = format!("#{}", env.len());
                env.push((x.clone(), fresh.clone()));
                let body = b.canon_at(env);
                env.pop();
                ChannelType::Rec(fresh, Box::new(body))
            }
            ChannelType::Recv(pl, k) => ChannelType::Recv(pay(pl, env), Box::new(k.canon_at(env))),
            ChannelType::Send(pl, k) => ChannelType::Send(pay(pl, env), Box::new(k.canon_at(env))),
            ChannelType::Offer(cs) => {
                ChannelType::Offer(cs.iter().map(|(l, c)| (l.clone(), c.canon_at(env))).collect())
            }
            ChannelType::Select(cs) => {
                ChannelType::Select(cs.iter().map(|(l, c)| (l.clone(), c.canon_at(env))).collect())
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            ChannelType::End | ChannelType::Var(_) => 1,
            ChannelType::Rec(_, b) => 1 + b.depth(),
            ChannelType::Recv(_, k) | ChannelType::Send(_, k) => 1 + k.depth(),
            ChannelType::Offer(cs) | ChannelType::Select(cs) => {
                1 + cs.values().map(|c| c.depth()).max().unwrap_or(0)
            }
        }
    }
}
