//! Coinductive subtyping, equivalence and joins.
//!
//! Subtyping uses the assumption-set algorithm: a pair already under
//! examination is taken to hold. Keys are alpha-normalised so that the set
//! of reachable pairs is finite.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap, HashSet};

use thiserror::Error;

use crate::syntax::{FieldTyping, MethodEntry, ObjectInternal, Record, SessionType, ValueType};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum JoinError {
    #[error("join undefined: {0} with {1}")]
    Undefined(String, String),
}

fn undefined<A: std::fmt::Display, B: std::fmt::Display>(a: A, b: B) -> JoinError {
    JoinError::Undefined(a.to_string(), b.to_string())
}

type Pair = (SessionType, SessionType);

/// Cap on remembered verdicts; the memo is cleared when it is reached.
const MEMO_LIMIT: usize = 50_000;

thread_local! {
    /// Settled verdicts on canonical pairs, shared by all checks on a thread.
    static MEMO: RefCell<HashMap<Pair, bool>> = RefCell::new(HashMap::new());
}

#[derive(Default)]
struct Subtyper {
    assumed: HashSet<Pair>,
    /// Insertion order of `assumed`, for rolling back a failed attempt.
    trail: Vec<Pair>,
    /// Pairs shown not to hold. Refutation survives removing assumptions,
    /// so these stay valid across rollbacks.
    refuted: HashSet<Pair>,
}

impl Subtyper {
    fn session(&mut self, s: &SessionType, t: &SessionType) -> bool {
        if s == t {
            return true;
        }
        let key = (s.canon(), t.canon());
        if let Some(v) = MEMO.with(|m| m.borrow().get(&key).copied()) {
            return v;
        }
        if self.refuted.contains(&key) {
            return false;
        }
        if self.assumed.contains(&key) {
            return true;
        }
        self.assumed.insert(key.clone());
        self.trail.push(key.clone());
        let ok = match (s.unfold(), t.unfold()) {
            (SessionType::Branch(sub), SessionType::Branch(sup)) => sup.iter().all(|e| {
                match match_entry(&sub, e) {
                    Some(d) => self.compatible(d, e),
                    None => false,
                }
            }),
            (SessionType::Variant(a), SessionType::Variant(b)) => a
                .iter()
                .all(|(l, s)| b.get(l).is_some_and(|t| self.session(s, t))),
            _ => false,
        };
        if !ok {
            self.refuted.insert(key);
        }
        ok
    }

    /// Record the verdicts of a finished top-level check. Refutations always
    /// stand; after success every remaining assumption has been discharged.
    fn settle(self, ok: bool) -> bool {
        MEMO.with(|m| {
            let mut m = m.borrow_mut();
            if m.len() > MEMO_LIMIT {
                m.clear();
            }
            if ok {
                m.extend(self.assumed.into_iter().map(|k| (k, true)));
            }
            m.extend(self.refuted.into_iter().map(|k| (k, false)));
        });
        ok
    }

    fn rollback(&mut self, mark: usize) {
        for k in self.trail.drain(mark..) {
            self.assumed.remove(&k);
        }
    }

    /// Signature compatibility; the parameter is already matched contravariantly.
    fn compatible(&mut self, d: &MethodEntry, e: &MethodEntry) -> bool {
        let mark = self.trail.len();
        if self.value(&d.result, &e.result) && self.session(&d.cont, &e.cont) {
            return true;
        }
        self.rollback(mark);
        if let (ValueType::Enum(labels), ValueType::LinkThis) = (&d.result, &e.result) {
            let uniform = SessionType::Variant(
                labels.iter().map(|l| (l.clone(), d.cont.clone())).collect(),
            );
            if self.session(&uniform, &e.cont) {
                return true;
            }
            self.rollback(mark);
        }
        false
    }

    fn value(&mut self, t: &ValueType, u: &ValueType) -> bool {
        match (t, u) {
            (ValueType::Null, ValueType::Null) | (ValueType::LinkThis, ValueType::LinkThis) => {
                true
            }
            (ValueType::Enum(a), ValueType::Enum(b)) => a.is_subset(b),
            (ValueType::Session(s), ValueType::Session(t)) => self.session(s, t),
            (ValueType::Link(f), ValueType::Link(g)) => f == g,
            (ValueType::Object(a), ValueType::Object(b)) => {
                a.class == b.class && self.field(&a.typing, &b.typing)
            }
            _ => false,
        }
    }

    fn record(&mut self, a: &Record, b: &Record) -> bool {
        a.len() == b.len()
            && a.iter().all(|(f, t)| b.get(f).is_some_and(|u| self.value(t, u)))
    }

    fn field(&mut self, f: &FieldTyping, g: &FieldTyping) -> bool {
        match (f, g) {
            (FieldTyping::Record(a), FieldTyping::Record(b)) => self.record(a, b),
            (FieldTyping::Variant(a), FieldTyping::Variant(b)) => a
                .iter()
                .all(|(l, r)| b.get(l).is_some_and(|s| self.record(r, s))),
            _ => false,
        }
    }
}

/// Entry of the subtype branch matching the supertype entry `e`: same name,
/// contravariant parameter, most specific parameter when several match.
fn match_entry<'a>(sub: &'a [MethodEntry], e: &MethodEntry) -> Option<&'a MethodEntry> {
    let cands: Vec<&MethodEntry> = sub
        .iter()
        .filter(|d| d.name == e.name && subtype_value(&e.param, &d.param))
        .collect();
    least_param(&cands)
}

/// Candidate whose parameter is a subtype of every other candidate's.
pub(crate) fn least_param<'a>(cands: &[&'a MethodEntry]) -> Option<&'a MethodEntry> {
    match cands {
        [] => None,
        [one] => Some(one),
        _ => {
            let least: Vec<&&MethodEntry> = cands
                .iter()
                .filter(|c| cands.iter().all(|d| subtype_value(&c.param, &d.param)))
                .collect();
            match least.as_slice() {
                [one] => Some(one),
                _ => None,
            }
        }
    }
}

pub fn subtype_session(s: &SessionType, t: &SessionType) -> bool {
    let mut st = Subtyper::default();
    let ok = st.session(s, t);
    st.settle(ok)
}

pub fn subtype_value(t: &ValueType, u: &ValueType) -> bool {
    let mut st = Subtyper::default();
    let ok = st.value(t, u);
    st.settle(ok)
}

pub fn subtype_field(f: &FieldTyping, g: &FieldTyping) -> bool {
    let mut st = Subtyper::default();
    let ok = st.field(f, g);
    st.settle(ok)
}

pub fn equivalent(s: &SessionType, t: &SessionType) -> bool {
    subtype_session(s, t) && subtype_session(t, s)
}

pub fn equivalent_value(t: &ValueType, u: &ValueType) -> bool {
    subtype_value(t, u) && subtype_value(u, t)
}

pub fn equivalent_field(f: &FieldTyping, g: &FieldTyping) -> bool {
    subtype_field(f, g) && subtype_field(g, f)
}

#[derive(Default)]
struct Joiner {
    open: HashMap<(SessionType, SessionType), String>,
    used: HashSet<String>,
    counter: usize,
}

impl Joiner {
    fn session(&mut self, a: &SessionType, b: &SessionType) -> Result<SessionType, JoinError> {
        if a == b {
            return Ok(a.clone());
        }
        let key = (a.canon(), b.canon());
        if let Some(v) = self.open.get(&key) {
            self.used.insert(v.clone());
            return Ok(SessionType::Var(v.clone()));
        }
        let var = format!("J{}", self.counter);
        self.counter += 1;
        self.open.insert(key.clone(), var.clone());
        let body = match (a.unfold(), b.unfold()) {
            (SessionType::Branch(xs), SessionType::Branch(ys)) => {
                let mut out: Vec<MethodEntry> = Vec::new();
                for x in &xs {
                    for y in ys.iter().filter(|y| y.name == x.name) {
                        let Some(param) = meet_param(&x.param, &y.param) else { continue };
                        if out.iter().any(|e| e.name == x.name && e.param == param) {
                            continue;
                        }
                        // Methods whose results or continuations cannot be
                        // joined are dropped: no upper bound can offer them.
                        if let Ok((result, cont)) = self.entry(x, y) {
                            out.push(MethodEntry { name: x.name.clone(), param, result, cont });
                        }
                    }
                }
                Ok(SessionType::Branch(out))
            }
            (SessionType::Variant(xs), SessionType::Variant(ys)) => {
                let mut out = BTreeMap::new();
                for (l, s) in &xs {
                    let j = match ys.get(l) {
                        Some(t) => self.session(s, t)?,
                        None => s.clone(),
                    };
                    out.insert(l.clone(), j);
                }
                for (l, t) in &ys {
                    out.entry(l.clone()).or_insert_with(|| t.clone());
                }
                Ok(SessionType::Variant(out))
            }
            (x, y) => Err(undefined(&x, &y)),
        };
        self.open.remove(&key);
        let body = body?;
        Ok(if self.used.contains(&var) { SessionType::Rec(var, Box::new(body)) } else { body })
    }

    fn entry(
        &mut self,
        x: &MethodEntry,
        y: &MethodEntry,
    ) -> Result<(ValueType, SessionType), JoinError> {
        if let Ok(r) = self.value(&x.result, &y.result) {
            if let Ok(c) = self.session(&x.cont, &y.cont) {
                return Ok((r, c));
            }
        }
        let uniform = |labels: &crate::syntax::LabelSet, s: &SessionType| {
            SessionType::Variant(labels.iter().map(|l| (l.clone(), s.clone())).collect())
        };
        match (&x.result, &y.result) {
            (ValueType::Enum(e), ValueType::LinkThis) => {
                Ok((ValueType::LinkThis, self.session(&uniform(e, &x.cont), &y.cont)?))
            }
            (ValueType::LinkThis, ValueType::Enum(e)) => {
                Ok((ValueType::LinkThis, self.session(&x.cont, &uniform(e, &y.cont))?))
            }
            _ => Err(undefined(&x.result, &y.result)),
        }
    }

    fn value(&mut self, a: &ValueType, b: &ValueType) -> Result<ValueType, JoinError> {
        match (a, b) {
            (ValueType::Null, ValueType::Null) => Ok(ValueType::Null),
            (ValueType::LinkThis, ValueType::LinkThis) => Ok(ValueType::LinkThis),
            (ValueType::Enum(x), ValueType::Enum(y)) => {
                Ok(ValueType::Enum(x.union(y).cloned().collect()))
            }
            (ValueType::Link(f), ValueType::Link(g)) if f == g => Ok(a.clone()),
            (ValueType::Session(s), ValueType::Session(t)) => {
                Ok(ValueType::Session(self.session(s, t)?))
            }
            (ValueType::Object(x), ValueType::Object(y)) if x.class == y.class => {
                Ok(ValueType::Object(Box::new(ObjectInternal {
                    class: x.class.clone(),
                    typing: self.field(&x.typing, &y.typing)?,
                })))
            }
            _ => Err(undefined(a, b)),
        }
    }

    fn record(&mut self, a: &Record, b: &Record) -> Result<Record, JoinError> {
        if a.len() != b.len() || a.keys().any(|k| !b.contains_key(k)) {
            return Err(undefined(FieldTyping::Record(a.clone()), FieldTyping::Record(b.clone())));
        }
        a.iter().map(|(f, t)| Ok((f.clone(), self.value(t, &b[f])?))).collect()
    }

    fn field(&mut self, f: &FieldTyping, g: &FieldTyping) -> Result<FieldTyping, JoinError> {
        match (f, g) {
            (FieldTyping::Record(a), FieldTyping::Record(b)) => {
                Ok(FieldTyping::Record(self.record(a, b)?))
            }
            (FieldTyping::Variant(a), FieldTyping::Variant(b)) => {
                let mut out = BTreeMap::new();
                for (l, r) in a {
                    let j = match b.get(l) {
                        Some(s) => self.record(r, s)?,
                        None => r.clone(),
                    };
                    out.insert(l.clone(), j);
                }
                for (l, s) in b {
                    out.entry(l.clone()).or_insert_with(|| s.clone());
                }
                Ok(FieldTyping::Variant(out))
            }
            _ => Err(undefined(f, g)),
        }
    }
}

/// Greatest common parameter type for a joined signature.
fn meet_param(p: &ValueType, q: &ValueType) -> Option<ValueType> {
    match (p, q) {
        (ValueType::Enum(a), ValueType::Enum(b)) => {
            let i: crate::syntax::LabelSet = a.intersection(b).cloned().collect();
            (!i.is_empty()).then_some(ValueType::Enum(i))
        }
        _ if subtype_value(p, q) => Some(p.clone()),
        _ if subtype_value(q, p) => Some(q.clone()),
        _ => None,
    }
}

pub fn join_session(a: &SessionType, b: &SessionType) -> Result<SessionType, JoinError> {
    Joiner::default().session(a, b)
}

pub fn join_value(a: &ValueType, b: &ValueType) -> Result<ValueType, JoinError> {
    Joiner::default().value(a, b)
}

pub fn join_field(f: &FieldTyping, g: &FieldTyping) -> Result<FieldTyping, JoinError> {
    Joiner::default().field(f, g)
}

/// `⋁ F_l` over the records of a variant field typing.
pub fn join_records<'a, I: IntoIterator<Item = &'a Record>>(rs: I) -> Result<Record, JoinError> {
    let mut it = rs.into_iter();
    let first = it.next().cloned().unwrap_or_default();
    let mut j = Joiner::default();
    it.try_fold(first, |acc, r| j.record(&acc, r))
}
