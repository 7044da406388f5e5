//! Type checking: algorithm W per class, A for consistency between field
//! typings and session types, and B for expressions.
//!
//! B works over an [`Env`] that can describe either a method body being
//! checked statically (a single `this` root) or a running thread (every
//! root object of the thread's heap, the current path, live endpoints and
//! the call frames needed to type `return`).

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use thiserror::Error;

use crate::channel::{translate_access, translate_channel};
use crate::subtype::{
    equivalent_field, equivalent_value, join_records, join_value, least_param,
    subtype_field, subtype_value, JoinError,
};
use crate::syntax::{
    ChannelType, ClassDecl, Expr, FieldTyping, LabelSet, MethodEntry, ObjectInternal, Polarity,
    Program, Record, SessionType, ValueType,
};

/// Default cap on the number of A steps per class.
pub const DEFAULT_DEPTH_LIMIT: usize = 10_000;

const WIDEN_ROUNDS: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TypeError {
    #[error("method {0} is in the session type but not declared")]
    MethodUndeclared(String),
    #[error("method {method} returns {found}, signature requires {expected}")]
    ResultTypeMismatch { method: String, expected: String, found: String },
    #[error("field typing {found} does not fit session type {expected}")]
    VariantShapeMismatch { expected: String, found: String },
    #[error("consistency check exceeded {0} steps")]
    DepthLimitExceeded(usize),
    #[error("field {0} holds a variant session type and cannot be swapped")]
    SwapOnVariantField(String),
    #[error("value of type {0} discarded by sequencing")]
    DiscardedLink(String),
    #[error("switch over {scrutinee} has cases {cases}")]
    SwitchLabelCoverage { scrutinee: String, cases: String },
    #[error("cannot switch on a value of type {0}")]
    SwitchScrutinee(String),
    #[error("loop body changes field typing {expected} into {found}")]
    LoopInvariantMismatch { expected: String, found: String },
    #[error("loop condition has type {0}")]
    LoopCondition(String),
    #[error("loop body has type {0}, expected Null")]
    LoopBody(String),
    #[error("field {field} of type {found} offers no method {method}({arg})")]
    NoSuchMethod { field: String, method: String, arg: String, found: String },
    #[error("call {method}({arg}) matches several signatures")]
    AmbiguousOverload { method: String, arg: String },
    #[error("field {0} is not declared")]
    UnknownField(String),
    #[error("class {0} is not declared")]
    UnknownClass(String),
    #[error("access point {0} is not declared")]
    UnknownAccessPoint(String),
    #[error("parameter {0} is not available")]
    ParameterUnavailable(String),
    #[error("self-called method {0} has no req/ens annotation")]
    UnannotatedSelfCall(String),
    #[error("self-call {method}: {detail}")]
    SelfCallMismatch { method: String, detail: String },
    #[error("spawn {class}.{method}: method with signature Null {method}(Null) not available")]
    SpawnUnavailable { class: String, method: String },
    #[error("spawn argument has type {0}, expected Null")]
    SpawnArgument(String),
    #[error("expected a record field typing, found {0}")]
    ExpectedRecord(String),
    #[error("expected a variant field typing, found {0}")]
    ExpectedVariant(String),
    #[error("switch branches disagree: {0}")]
    BranchMismatch(String),
    #[error("annotation of {method} not met: {detail}")]
    AnnotationMismatch { method: String, detail: String },
    #[error("annotated method {0} ensures a variant field typing")]
    VariantEnsures(String),
    #[error("{0} escapes its object")]
    LinkEscapes(String),
    #[error("no main method designated")]
    MainMissing,
    #[error("main method {class}.{method} is not immediately available with a Null parameter")]
    MainUnavailable { class: String, method: String },
    #[error(transparent)]
    Join(#[from] JoinError),
    #[error("object {0} is not available here")]
    ObjectUnavailable(String),
    #[error("endpoint {0} is not available here")]
    EndpointUnavailable(String),
    #[error("current object is not open: {0}")]
    NotOpen(String),
    #[error("return outside of a method call")]
    StrayReturn,
    #[error("in {class}.{method} (line {line}): {source}")]
    InMethod { class: String, method: String, line: usize, source: Box<TypeError> },
}

impl TypeError {
    /// Machine-readable error code (innermost cause).
    pub fn code(&self) -> &'static str {
        match self {
            TypeError::MethodUndeclared(_) => "MethodUndeclared",
            TypeError::ResultTypeMismatch { .. } => "ResultTypeMismatch",
            TypeError::VariantShapeMismatch { .. } => "VariantShapeMismatch",
            TypeError::DepthLimitExceeded(_) => "DepthLimitExceeded",
            TypeError::SwapOnVariantField(_) => "SwapOnVariantField",
            TypeError::DiscardedLink(_) => "DiscardedLink",
            TypeError::SwitchLabelCoverage { .. } => "SwitchLabelCoverage",
            TypeError::SwitchScrutinee(_) => "SwitchScrutinee",
            TypeError::LoopInvariantMismatch { .. } => "LoopInvariantMismatch",
            TypeError::LoopCondition(_) => "LoopCondition",
            TypeError::LoopBody(_) => "LoopBody",
            TypeError::NoSuchMethod { .. } => "NoSuchMethod",
            TypeError::AmbiguousOverload { .. } => "AmbiguousOverload",
            TypeError::UnknownField(_) => "UnknownField",
            TypeError::UnknownClass(_) => "UnknownClass",
            TypeError::UnknownAccessPoint(_) => "UnknownAccessPoint",
            TypeError::ParameterUnavailable(_) => "ParameterUnavailable",
            TypeError::UnannotatedSelfCall(_) => "UnannotatedSelfCall",
            TypeError::SelfCallMismatch { .. } => "SelfCallMismatch",
            TypeError::SpawnUnavailable { .. } => "SpawnUnavailable",
            TypeError::SpawnArgument(_) => "SpawnArgument",
            TypeError::ExpectedRecord(_) => "ExpectedRecord",
            TypeError::ExpectedVariant(_) => "ExpectedVariant",
            TypeError::BranchMismatch(_) => "BranchMismatch",
            TypeError::AnnotationMismatch { .. } => "AnnotationMismatch",
            TypeError::VariantEnsures(_) => "VariantEnsures",
            TypeError::LinkEscapes(_) => "LinkEscapes",
            TypeError::MainMissing => "MainMissing",
            TypeError::MainUnavailable { .. } => "MainUnavailable",
            TypeError::Join(_) => "JoinUndefined",
            TypeError::ObjectUnavailable(_) => "ObjectUnavailable",
            TypeError::EndpointUnavailable(_) => "EndpointUnavailable",
            TypeError::NotOpen(_) => "NotOpen",
            TypeError::StrayReturn => "StrayReturn",
            TypeError::InMethod { source, .. } => source.code(),
        }
    }

    /// Strip method context.
    pub fn root(&self) -> &TypeError {
        match self {
            TypeError::InMethod { source, .. } => source.root(),
            e => e,
        }
    }
}

type TResult<T> = Result<T, TypeError>;

/// How `while` loops are checked.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LoopMode {
    /// The body must restore the field typing up to equivalence.
    Strict,
    /// Widen the initial field typing by joins until the body restores it.
    Widen,
}

/// Typing environment for algorithm B.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Env {
    /// Root objects with their types; the root of the current path is open.
    pub roots: BTreeMap<String, ValueType>,
    pub root: String,
    pub path: Vec<String>,
    pub param: Option<(String, ValueType)>,
    /// Endpoints occurring in the expression, with their channel types.
    pub endpoints: BTreeMap<(String, Polarity), ChannelType>,
    /// A label in the hole of the current expression is linked to this
    /// field of the current object, whose full variant type is given.
    pub pending: Option<(String, SessionType)>,
    /// Signature entry of the call at each depth of the path.
    pub frames: Vec<MethodEntry>,
}

impl Env {
    /// Environment for checking a method body of `class` under `typing`.
    pub fn method(class: &str, typing: FieldTyping, param: &str, ptype: ValueType) -> Env {
        let mut roots = BTreeMap::new();
        roots.insert(
            "this".to_string(),
            ValueType::Object(Box::new(ObjectInternal { class: class.to_string(), typing })),
        );
        Env {
            roots,
            root: "this".into(),
            path: Vec::new(),
            param: Some((param.to_string(), ptype)),
            endpoints: BTreeMap::new(),
            pending: None,
            frames: Vec::new(),
        }
    }

    /// Class and field typing of the current object.
    pub fn cur(&self) -> TResult<(String, FieldTyping)> {
        let t = self.roots.get(&self.root).ok_or_else(|| TypeError::NotOpen(self.root.clone()))?;
        let (c, f) = object_at(t, &self.path)?;
        Ok((c.to_string(), f.clone()))
    }

    pub fn cur_typing(&self) -> TResult<FieldTyping> {
        Ok(self.cur()?.1)
    }

    pub fn set_cur(&mut self, f: FieldTyping) -> TResult<()> {
        let t = self
            .roots
            .get_mut(&self.root)
            .ok_or_else(|| TypeError::NotOpen(self.root.clone()))?;
        *typing_mut(t, &self.path)? = f;
        Ok(())
    }

    fn cur_record(&self) -> TResult<Record> {
        match self.cur_typing()? {
            FieldTyping::Record(r) => Ok(r),
            v => Err(TypeError::ExpectedRecord(v.to_string())),
        }
    }

    fn cur_variant(&self) -> TResult<BTreeMap<String, Record>> {
        match self.cur_typing()? {
            FieldTyping::Variant(v) => Ok(v),
            r => Err(TypeError::ExpectedVariant(r.to_string())),
        }
    }

    /// `⋁ F_l` of a variant current typing, returning its label set.
    fn collapse(&mut self) -> TResult<(LabelSet, Record)> {
        let v = self.cur_variant()?;
        let labels: LabelSet = v.keys().cloned().collect();
        let j = join_records(v.values())?;
        self.set_cur(FieldTyping::Record(j.clone()))?;
        Ok((labels, j))
    }
}

fn object_at<'a>(t: &'a ValueType, path: &[String]) -> TResult<(&'a str, &'a FieldTyping)> {
    match t {
        ValueType::Object(o) => match path.split_first() {
            None => Ok((&o.class, &o.typing)),
            Some((f, rest)) => match &o.typing {
                FieldTyping::Record(r) => {
                    object_at(r.get(f).ok_or_else(|| TypeError::UnknownField(f.clone()))?, rest)
                }
                v => Err(TypeError::ExpectedRecord(v.to_string())),
            },
        },
        other => Err(TypeError::NotOpen(other.to_string())),
    }
}

fn typing_mut<'a>(t: &'a mut ValueType, path: &[String]) -> TResult<&'a mut FieldTyping> {
    match t {
        ValueType::Object(o) => match path.split_first() {
            None => Ok(&mut o.typing),
            Some((f, rest)) => match &mut o.typing {
                FieldTyping::Record(r) => typing_mut(
                    r.get_mut(f).ok_or_else(|| TypeError::UnknownField(f.clone()))?,
                    rest,
                ),
                v => Err(TypeError::ExpectedRecord(v.to_string())),
            },
        },
        other => Err(TypeError::NotOpen(other.to_string())),
    }
}

fn field_of(r: &Record, f: &str) -> TResult<ValueType> {
    r.get(f).cloned().ok_or_else(|| TypeError::UnknownField(f.to_string()))
}

fn with_field(mut r: Record, f: &str, t: ValueType) -> TResult<Record> {
    match r.get_mut(f) {
        Some(slot) => {
            *slot = t;
            Ok(r)
        }
        None => Err(TypeError::UnknownField(f.to_string())),
    }
}

fn is_variant_session(t: &ValueType) -> bool {
    matches!(t, ValueType::Session(s) if matches!(s.unfold(), SessionType::Variant(_)))
}

fn show_labels(ls: impl IntoIterator<Item = impl AsRef<str>>) -> String {
    let v: Vec<String> = ls.into_iter().map(|l| l.as_ref().to_string()).collect();
    format!("{{{}}}", v.join(", "))
}

/// Resolve `m(argT)` against a branch: the entry named `m` whose parameter
/// accepts `arg`, preferring the least parameter type.
pub fn resolve_signature(
    entries: &[MethodEntry],
    m: &str,
    arg: &ValueType,
) -> Result<MethodEntry, TypeError> {
    let cands: Vec<&MethodEntry> =
        entries.iter().filter(|e| e.name == m && subtype_value(arg, &e.param)).collect();
    if cands.is_empty() {
        return Err(TypeError::NoSuchMethod {
            field: String::new(),
            method: m.to_string(),
            arg: arg.to_string(),
            found: SessionType::Branch(entries.to_vec()).to_string(),
        });
    }
    least_param(&cands).cloned().ok_or_else(|| TypeError::AmbiguousOverload {
        method: m.to_string(),
        arg: arg.to_string(),
    })
}

/// Field typings and session states explored by A, per class.
pub type WitnessTable = BTreeMap<String, Vec<(SessionType, FieldTyping)>>;

/// Runs W, A and B against one program.
pub struct Checker<'p> {
    pub prog: &'p Program,
    pub mode: LoopMode,
    pub depth_limit: usize,
    steps: usize,
    /// Consistency verdicts already established (runtime use).
    cache: HashMap<(String, SessionType, FieldTyping), Result<(), TypeError>>,
    pub witnesses: WitnessTable,
}

impl<'p> Checker<'p> {
    pub fn new(prog: &'p Program) -> Checker<'p> {
        Checker {
            prog,
            mode: LoopMode::Strict,
            depth_limit: DEFAULT_DEPTH_LIMIT,
            steps: 0,
            cache: HashMap::new(),
            witnesses: BTreeMap::new(),
        }
    }

    pub fn runtime(prog: &'p Program) -> Checker<'p> {
        Checker { mode: LoopMode::Widen, ..Checker::new(prog) }
    }

    fn class(&self, c: &str) -> TResult<&'p ClassDecl> {
        self.prog.class(c).ok_or_else(|| TypeError::UnknownClass(c.to_string()))
    }

    // -- W ----------------------------------------------------------------

    /// Algorithm W for one class.
    pub fn check_class(&mut self, c: &str) -> TResult<()> {
        let decl = self.class(c)?;
        for m in &decl.methods {
            let Some(ann) = &m.annotation else { continue };
            let ctx = |e: TypeError| TypeError::InMethod {
                class: c.to_string(),
                method: m.name.clone(),
                line: m.line,
                source: Box::new(e),
            };
            if ann.ens.is_variant() {
                return Err(ctx(TypeError::VariantEnsures(m.name.clone())));
            }
            let env = Env::method(c, ann.req.clone(), &m.param, ann.param.clone());
            let (t, env) = self.b(&m.body, env).map_err(ctx)?;
            let mut out = env.cur_typing().map_err(ctx)?;
            let mut t = t;
            if t == ValueType::LinkThis {
                if let (FieldTyping::Variant(v), ValueType::Enum(e)) = (&out, &ann.result) {
                    if v.keys().all(|l| e.contains(l)) {
                        t = ValueType::Enum(v.keys().cloned().collect());
                        out = FieldTyping::Record(join_records(v.values()).map_err(|e| ctx(e.into()))?);
                    }
                }
            }
            if !subtype_value(&t, &ann.result) {
                return Err(ctx(TypeError::AnnotationMismatch {
                    method: m.name.clone(),
                    detail: format!("body has type {t}, annotation says {}", ann.result),
                }));
            }
            if !subtype_field(&out, &ann.ens) {
                return Err(ctx(TypeError::AnnotationMismatch {
                    method: m.name.clone(),
                    detail: format!("final field typing {out} is not a subtype of {}", ann.ens),
                }));
            }
        }
        self.steps = 0;
        let mut delta = HashSet::new();
        self.a(c, &decl.session, &decl.null_typing(), &mut delta)
    }

    // -- A ----------------------------------------------------------------

    /// Algorithm A, starting from an empty assumption set. Results are cached.
    pub fn consistent(&mut self, c: &str, s: &SessionType, f: &FieldTyping) -> TResult<()> {
        let key = (c.to_string(), s.canon(), f.canon());
        if let Some(r) = self.cache.get(&key) {
            return r.clone();
        }
        self.steps = 0;
        let r = self.a(c, s, f, &mut HashSet::new());
        self.cache.insert(key, r.clone());
        r
    }

    fn a(
        &mut self,
        c: &str,
        s: &SessionType,
        f: &FieldTyping,
        delta: &mut HashSet<(FieldTyping, SessionType)>,
    ) -> TResult<()> {
        let key = (f.canon(), s.canon());
        if delta.contains(&key) {
            return Ok(());
        }
        self.steps += 1;
        if self.steps > self.depth_limit {
            return Err(TypeError::DepthLimitExceeded(self.depth_limit));
        }
        match s {
            SessionType::Rec(..) => {
                delta.insert(key);
                self.a(c, &s.unfold(), f, delta)
            }
            SessionType::Var(x) => Err(TypeError::VariantShapeMismatch {
                expected: format!("closed type, found free {x}"),
                found: f.to_string(),
            }),
            SessionType::Branch(entries) => {
                let FieldTyping::Record(_) = f else {
                    return Err(TypeError::VariantShapeMismatch {
                        expected: s.to_string(),
                        found: f.to_string(),
                    });
                };
                let wit = self.witnesses.entry(c.to_string()).or_default();
                let w = (s.canon(), f.canon());
                if !wit.contains(&w) {
                    wit.push(w);
                }
                let decl = self.class(c)?;
                for e in entries {
                    let m = decl
                        .method(&e.name)
                        .ok_or_else(|| TypeError::MethodUndeclared(e.name.clone()))?;
                    let ctx = |err: TypeError| TypeError::InMethod {
                        class: c.to_string(),
                        method: m.name.clone(),
                        line: m.line,
                        source: Box::new(err),
                    };
                    let env = Env::method(c, f.clone(), &m.param, e.param.clone());
                    let (t, env) = self.b(&m.body, env).map_err(ctx)?;
                    let fo = env.cur_typing().map_err(ctx)?;
                    let next = self.result_typing(&e.name, &t, &e.result, fo).map_err(ctx)?;
                    self.a(c, &e.cont, &next, delta)?;
                }
                Ok(())
            }
            SessionType::Variant(cases) => {
                let FieldTyping::Variant(fs) = f else {
                    return Err(TypeError::VariantShapeMismatch {
                        expected: s.to_string(),
                        found: f.to_string(),
                    });
                };
                if let Some(l) = fs.keys().find(|l| !cases.contains_key(*l)) {
                    return Err(TypeError::VariantShapeMismatch {
                        expected: s.to_string(),
                        found: format!("{f} (label {l})"),
                    });
                }
                for (l, r) in fs {
                    self.a(c, &cases[l], &FieldTyping::Record(r.clone()), delta)?;
                }
                Ok(())
            }
        }
    }

    /// The three-way comparison of a body's type `t` with a signature's
    /// result `sig`, giving the field typing to continue with.
    fn result_typing(
        &self,
        method: &str,
        t: &ValueType,
        sig: &ValueType,
        fo: FieldTyping,
    ) -> TResult<FieldTyping> {
        if subtype_value(t, sig) {
            return Ok(fo);
        }
        match (t, sig, &fo) {
            (ValueType::Enum(e), ValueType::LinkThis, FieldTyping::Record(r)) => Ok(
                FieldTyping::Variant(e.iter().map(|l| (l.clone(), r.clone())).collect()),
            ),
            (ValueType::LinkThis, ValueType::Enum(e), FieldTyping::Variant(v))
                if v.keys().all(|l| e.contains(l)) =>
            {
                Ok(FieldTyping::Record(join_records(v.values())?))
            }
            _ => Err(TypeError::ResultTypeMismatch {
                method: method.to_string(),
                expected: sig.to_string(),
                found: t.to_string(),
            }),
        }
    }

    // -- B ----------------------------------------------------------------

    /// Algorithm B: type of `e` and the final environment.
    pub fn b(&mut self, e: &Expr, mut env: Env) -> TResult<(ValueType, Env)> {
        match e {
            Expr::Null => Ok((ValueType::Null, env)),
            Expr::AccessName(n) => {
                let s = self
                    .prog
                    .access_points
                    .get(n)
                    .ok_or_else(|| TypeError::UnknownAccessPoint(n.clone()))?;
                Ok((ValueType::Session(translate_access(s)), env))
            }
            Expr::Var(x) => match env.param.clone() {
                Some((y, t)) if &y == x => {
                    if t.is_linear() {
                        env.param = None;
                    }
                    Ok((t, env))
                }
                _ => Err(TypeError::ParameterUnavailable(x.clone())),
            },
            Expr::Label(l) => {
                if let Some((f, v)) = env.pending.take() {
                    if let SessionType::Variant(cs) = v.unfold() {
                        if cs.contains_key(l) {
                            let r = env.cur_record()?;
                            env.set_cur(FieldTyping::Record(with_field(
                                r,
                                &f,
                                ValueType::Session(v),
                            )?))?;
                            return Ok((ValueType::Link(f), env));
                        }
                    }
                }
                let r = env.cur_record()?;
                let mut v = BTreeMap::new();
                v.insert(l.clone(), r);
                env.set_cur(FieldTyping::Variant(v))?;
                Ok((ValueType::LinkThis, env))
            }
            Expr::New(c) => {
                let decl = self.class(c)?;
                Ok((ValueType::Session(decl.session.clone()), env))
            }
            Expr::ObjId(o) => {
                if *o == env.root {
                    return Err(TypeError::ObjectUnavailable(o.clone()));
                }
                let t = env.roots.remove(o).ok_or_else(|| TypeError::ObjectUnavailable(o.clone()))?;
                Ok((t, env))
            }
            Expr::Endpoint(c, p) => {
                let s = env
                    .endpoints
                    .remove(&(c.clone(), *p))
                    .ok_or_else(|| TypeError::EndpointUnavailable(format!("{c}{}", p.sign())))?;
                Ok((ValueType::Session(translate_channel(&s)), env))
            }
            Expr::Swap(f, e) => {
                let (t, mut env) = self.b(e, env)?;
                let (u, out) = if t == ValueType::LinkThis {
                    let (labels, g) = env.collapse()?;
                    let u = field_of(&g, f)?;
                    if is_variant_session(&u) {
                        return Err(TypeError::SwapOnVariantField(f.clone()));
                    }
                    (u, with_field(g, f, ValueType::Enum(labels))?)
                } else {
                    let r = env.cur_record()?;
                    let u = field_of(&r, f)?;
                    if is_variant_session(&u) {
                        return Err(TypeError::SwapOnVariantField(f.clone()));
                    }
                    (u, with_field(r, f, t)?)
                };
                env.set_cur(FieldTyping::Record(out))?;
                Ok((u, env))
            }
            Expr::Call(f, m, e) => {
                let (t, mut env) = self.b(e, env)?;
                let (arg, r) = if t == ValueType::LinkThis {
                    let (labels, g) = env.collapse()?;
                    (ValueType::Enum(labels), g)
                } else {
                    (t, env.cur_record()?)
                };
                let ft = field_of(&r, f)?;
                let entries = match &ft {
                    ValueType::Session(s) => match s.unfold() {
                        SessionType::Branch(es) => es,
                        _ => Vec::new(),
                    },
                    _ => Vec::new(),
                };
                let entry = resolve_signature(&entries, m, &arg).map_err(|err| match err {
                    TypeError::NoSuchMethod { method, arg, .. } => TypeError::NoSuchMethod {
                        field: f.clone(),
                        method,
                        arg,
                        found: ft.to_string(),
                    },
                    other => other,
                })?;
                let res = if entry.result == ValueType::LinkThis {
                    ValueType::Link(f.clone())
                } else {
                    entry.result.clone()
                };
                env.set_cur(FieldTyping::Record(with_field(
                    r,
                    f,
                    ValueType::Session(entry.cont.clone()),
                )?))?;
                Ok((res, env))
            }
            Expr::SelfCall(m, e) => {
                let (t, mut env) = self.b(e, env)?;
                let (c, _) = env.cur()?;
                let decl = self.class(&c)?;
                let md = decl.method(m).ok_or_else(|| TypeError::MethodUndeclared(m.clone()))?;
                let ann =
                    md.annotation.as_ref().ok_or_else(|| TypeError::UnannotatedSelfCall(m.clone()))?;
                let mismatch = |detail: String| TypeError::SelfCallMismatch { method: m.clone(), detail };
                if t == ValueType::LinkThis {
                    let (labels, g) = env.collapse()?;
                    match &ann.param {
                        ValueType::Enum(e) if labels.is_subset(e) => {}
                        p => {
                            return Err(mismatch(format!(
                                "argument {} does not fit parameter {p}",
                                show_labels(&labels)
                            )))
                        }
                    }
                    if !subtype_field(&FieldTyping::Record(g.clone()), &ann.req) {
                        return Err(mismatch(format!("field typing {{..}} does not meet {}", ann.req)));
                    }
                } else {
                    if !subtype_value(&t, &ann.param) {
                        return Err(mismatch(format!("argument {t} does not fit parameter {}", ann.param)));
                    }
                    let cur = env.cur_typing()?;
                    if !subtype_field(&cur, &ann.req) {
                        return Err(mismatch(format!("field typing {cur} does not meet {}", ann.req)));
                    }
                }
                env.set_cur(ann.ens.clone())?;
                Ok((ann.result.clone(), env))
            }
            Expr::Seq(a, b) => {
                let (t, mut env) = self.b(a, env)?;
                if let ValueType::Link(_) = t {
                    return Err(TypeError::DiscardedLink(t.to_string()));
                }
                if t == ValueType::LinkThis {
                    env.collapse()?;
                }
                self.b(b, env)
            }
            Expr::Switch(scrut, cases) => self.switch(scrut, cases, env),
            Expr::While(c, body) => self.while_loop(c, body, env),
            Expr::Spawn(c, m, e) => {
                let (t, env) = self.b(e, env)?;
                if t != ValueType::Null {
                    return Err(TypeError::SpawnArgument(t.to_string()));
                }
                let decl = self.class(c)?;
                let ok = match decl.session.unfold() {
                    SessionType::Branch(es) => es.iter().any(|x| {
                        x.name == *m && x.param == ValueType::Null && x.result == ValueType::Null
                    }),
                    _ => false,
                };
                if !ok {
                    return Err(TypeError::SpawnUnavailable { class: c.clone(), method: m.clone() });
                }
                Ok((ValueType::Null, env))
            }
            Expr::Return(e) => self.ret(e, env),
        }
    }

    fn switch(
        &mut self,
        scrut: &Expr,
        cases: &BTreeMap<String, Expr>,
        env: Env,
    ) -> TResult<(ValueType, Env)> {
        let (u, mut env) = self.b(scrut, env)?;
        let coverage = |ls: &LabelSet| -> TResult<()> {
            if ls.iter().all(|l| cases.contains_key(l)) {
                Ok(())
            } else {
                Err(TypeError::SwitchLabelCoverage {
                    scrutinee: show_labels(ls),
                    cases: show_labels(cases.keys()),
                })
            }
        };
        let mut starts: Vec<(String, Env)> = Vec::new();
        match &u {
            ValueType::Enum(ls) => {
                coverage(ls)?;
                for l in ls {
                    starts.push((l.clone(), env.clone()));
                }
            }
            ValueType::LinkThis => {
                let (ls, _) = env.collapse()?;
                coverage(&ls)?;
                for l in &ls {
                    starts.push((l.clone(), env.clone()));
                }
            }
            ValueType::Link(f) => {
                let r = env.cur_record()?;
                let ft = field_of(&r, f)?;
                let variant = match &ft {
                    ValueType::Session(s) => match s.unfold() {
                        SessionType::Variant(v) => v,
                        _ => return Err(TypeError::ExpectedVariant(ft.to_string())),
                    },
                    _ => return Err(TypeError::ExpectedVariant(ft.to_string())),
                };
                coverage(&variant.keys().cloned().collect())?;
                for (l, s) in variant {
                    let mut e = env.clone();
                    e.set_cur(FieldTyping::Record(with_field(
                        r.clone(),
                        f,
                        ValueType::Session(s),
                    )?))?;
                    starts.push((l, e));
                }
            }
            other => return Err(TypeError::SwitchScrutinee(other.to_string())),
        }
        let mut acc: Option<(ValueType, Env)> = None;
        for (l, start) in starts {
            let (t, out) = self.b(&cases[&l], start)?;
            acc = Some(match acc {
                None => (t, out),
                Some((t0, e0)) => (join_value(&t0, &t)?, join_env(&e0, &out)?),
            });
        }
        Ok(acc.expect("switch has at least one reachable case"))
    }

    fn while_loop(&mut self, cond: &Expr, body: &Expr, env: Env) -> TResult<(ValueType, Env)> {
        let mut start = env;
        let mut round = 0;
        loop {
            let (u, mut after) = self.b(cond, start.clone())?;
            let boolean = |ls: &LabelSet| ls.iter().all(|l| l == "TRUE" || l == "FALSE");
            let (body_env, exit_env) = match &u {
                ValueType::Enum(ls) if boolean(ls) => (after.clone(), after.clone()),
                ValueType::LinkThis => {
                    let v = after.cur_variant()?;
                    if !boolean(&v.keys().cloned().collect()) {
                        return Err(TypeError::LoopCondition(u.to_string()));
                    }
                    after.collapse()?;
                    (after.clone(), after)
                }
                ValueType::Link(f) => {
                    let r = after.cur_record()?;
                    let ft = field_of(&r, f)?;
                    let cases = match &ft {
                        ValueType::Session(s) => match s.unfold() {
                            SessionType::Variant(v) => v,
                            _ => return Err(TypeError::ExpectedVariant(ft.to_string())),
                        },
                        _ => return Err(TypeError::ExpectedVariant(ft.to_string())),
                    };
                    let (Some(st), Some(sf)) = (cases.get("TRUE"), cases.get("FALSE")) else {
                        return Err(TypeError::LoopCondition(ft.to_string()));
                    };
                    if cases.len() != 2 {
                        return Err(TypeError::LoopCondition(ft.to_string()));
                    }
                    let mut be = after.clone();
                    be.set_cur(FieldTyping::Record(with_field(
                        r.clone(),
                        f,
                        ValueType::Session(st.clone()),
                    )?))?;
                    let mut xe = after;
                    xe.set_cur(FieldTyping::Record(with_field(r, f, ValueType::Session(sf.clone()))?))?;
                    (be, xe)
                }
                other => return Err(TypeError::LoopCondition(other.to_string())),
            };
            let (t, end) = self.b(body, body_env)?;
            if t != ValueType::Null {
                return Err(TypeError::LoopBody(t.to_string()));
            }
            if env_equivalent(&start, &end)? {
                return Ok((ValueType::Null, exit_env));
            }
            let expected = start.cur_typing()?;
            let found = end.cur_typing()?;
            if self.mode == LoopMode::Strict || round >= WIDEN_ROUNDS {
                return Err(TypeError::LoopInvariantMismatch {
                    expected: expected.to_string(),
                    found: found.to_string(),
                });
            }
            let widened = join_env(&start, &end).map_err(|_| TypeError::LoopInvariantMismatch {
                expected: expected.to_string(),
                found: found.to_string(),
            })?;
            start = widened;
            round += 1;
        }
    }

    fn ret(&mut self, e: &Expr, env: Env) -> TResult<(ValueType, Env)> {
        let (t, mut env) = self.b(e, env)?;
        if let ValueType::Link(_) = t {
            return Err(TypeError::LinkEscapes(t.to_string()));
        }
        let f = env.path.pop().ok_or(TypeError::StrayReturn)?;
        let entry = env.frames.pop().ok_or(TypeError::StrayReturn)?;
        let parent = env.cur_record()?;
        let (class, inner) = match field_of(&parent, &f)? {
            ValueType::Object(o) => (o.class, o.typing),
            other => return Err(TypeError::NotOpen(other.to_string())),
        };
        let next = self.result_typing(&entry.name, &t, &entry.result, inner)?;
        self.consistent(&class, &entry.cont, &next)?;
        let res = if entry.result == ValueType::LinkThis {
            ValueType::Link(f.clone())
        } else {
            entry.result.clone()
        };
        env.set_cur(FieldTyping::Record(with_field(
            parent,
            &f,
            ValueType::Session(entry.cont.clone()),
        )?))?;
        Ok((res, env))
    }
}

/// Join of two environments reached along different branches.
fn join_env(a: &Env, b: &Env) -> TResult<Env> {
    if a.roots.keys().ne(b.roots.keys()) {
        return Err(TypeError::BranchMismatch(format!(
            "objects {:?} vs {:?}",
            a.roots.keys().collect::<Vec<_>>(),
            b.roots.keys().collect::<Vec<_>>()
        )));
    }
    if a.path != b.path || a.root != b.root {
        return Err(TypeError::BranchMismatch("current object differs".into()));
    }
    let param = match (&a.param, &b.param) {
        (None, None) => None,
        (Some((x, t)), Some((y, u))) if x == y => Some((x.clone(), join_value(t, u)?)),
        _ => return Err(TypeError::BranchMismatch("parameter consumed on one branch only".into())),
    };
    if a.endpoints != b.endpoints {
        return Err(TypeError::BranchMismatch("endpoint usage differs".into()));
    }
    let mut roots = BTreeMap::new();
    for (o, t) in &a.roots {
        roots.insert(o.clone(), join_value(t, &b.roots[o])?);
    }
    Ok(Env {
        roots,
        root: a.root.clone(),
        path: a.path.clone(),
        param,
        endpoints: a.endpoints.clone(),
        pending: None,
        frames: a.frames.clone(),
    })
}

fn env_equivalent(a: &Env, b: &Env) -> TResult<bool> {
    if a.roots.keys().ne(b.roots.keys()) || a.endpoints != b.endpoints {
        return Ok(false);
    }
    let params = match (&a.param, &b.param) {
        (None, None) => true,
        (Some((x, t)), Some((y, u))) => x == y && equivalent_value(t, u),
        _ => false,
    };
    if !params {
        return Ok(false);
    }
    for (o, t) in &a.roots {
        let u = &b.roots[o];
        let same = match (t, u) {
            (ValueType::Object(x), ValueType::Object(y)) => {
                x.class == y.class && equivalent_field(&x.typing, &y.typing)
            }
            _ => equivalent_value(t, u),
        };
        if !same {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Verdict for one class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassVerdict {
    pub class: String,
    pub result: Result<(), TypeError>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckReport {
    pub classes: Vec<ClassVerdict>,
    pub main: Result<(), TypeError>,
    pub witnesses: WitnessTable,
}

impl CheckReport {
    pub fn ok(&self) -> bool {
        self.main.is_ok() && self.classes.iter().all(|c| c.result.is_ok())
    }

    pub fn verdict(&self, class: &str) -> Option<&Result<(), TypeError>> {
        self.classes.iter().find(|c| c.class == class).map(|c| &c.result)
    }

    /// `CLASS <name> OK|ERR <code> <detail>` lines, then a `MAIN` line.
    pub fn lines(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .classes
            .iter()
            .map(|c| match &c.result {
                Ok(()) => format!("CLASS {} OK", c.class),
                Err(e) => format!("CLASS {} ERR {} {e}", c.class, e.code()),
            })
            .collect();
        out.push(match &self.main {
            Ok(()) => "MAIN OK".to_string(),
            Err(e) => format!("MAIN ERR {} {e}", e.code()),
        });
        out
    }
}

/// Check every class and the main designation.
pub fn check_program(p: &Program) -> CheckReport {
    let mut ck = Checker::new(p);
    let classes = p
        .class_order
        .iter()
        .map(|c| ClassVerdict { class: c.clone(), result: ck.check_class(c) })
        .collect();
    CheckReport { classes, main: check_main(p), witnesses: ck.witnesses }
}

/// The main method must be immediately available with a Null parameter.
pub fn check_main(p: &Program) -> Result<(), TypeError> {
    let (c, m) = p.main_method();
    let Some(decl) = p.class(&c) else {
        return if p.main.is_some() {
            Err(TypeError::UnknownClass(c))
        } else {
            Err(TypeError::MainMissing)
        };
    };
    let unavailable = || TypeError::MainUnavailable { class: c.clone(), method: m.clone() };
    if decl.method(&m).is_none() {
        return Err(unavailable());
    }
    match decl.session.unfold() {
        SessionType::Branch(es)
            if es.iter().any(|e| e.name == m && e.param == ValueType::Null) =>
        {
            Ok(())
        }
        _ => Err(unavailable()),
    }
}

/// Labels mentioned anywhere in a session type (for diagnostics).
pub fn session_labels(s: &SessionType) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    fn go(s: &SessionType, out: &mut BTreeSet<String>) {
        match s {
            SessionType::Branch(es) => es.iter().for_each(|e| go(&e.cont, out)),
            SessionType::Variant(cs) => {
                for (l, c) in cs {
                    out.insert(l.clone());
                    go(c, out);
                }
            }
            SessionType::Rec(_, b) => go(b, out),
            SessionType::Var(_) => {}
        }
    }
    go(s, &mut out);
    out
}
