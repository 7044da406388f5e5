//! Runtime monitor: tracks the typing environment along an execution,
//! re-checks every thread's state with the runtime type checker and replays
//! call traces against the class session types.
//!
//! The environment of a thread is derived from its heap together with the
//! bookkeeping kept here: the session state of every closed object, the
//! call frames, label-to-field links, endpoint types and call traces.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::channel::{chan_step, dual, translate_access, translate_channel, ChanAction};
use crate::check::{resolve_signature, Checker, Env};
use crate::heap::{Configuration, Heap, Value};
use crate::interp::{Event, Observer, Step};
use crate::subtype::equivalent;
use crate::syntax::{
    ChannelType, Expr, FieldTyping, MethodEntry, ObjectInternal, Polarity, Program, Record,
    SessionType, ValueType,
};

/// One transition of the session-type LTS: a method name or a result label.
pub fn lts_step(s: &SessionType, a: &str) -> Vec<SessionType> {
    match s.unfold() {
        SessionType::Branch(es) => {
            let by_name: Vec<SessionType> =
                es.iter().filter(|e| e.name == a).map(|e| e.cont.clone()).collect();
            if by_name.is_empty() && a.starts_with(|c: char| c.is_ascii_uppercase()) {
                vec![s.clone()]
            } else {
                by_name
            }
        }
        SessionType::Variant(cs) => cs.get(a).cloned().into_iter().collect(),
        _ => Vec::new(),
    }
}

/// Replay a trace from `s`; `Err(i)` gives the 1-based position of the
/// first action with no transition.
pub fn replay(s: &SessionType, trace: &[String]) -> Result<Vec<SessionType>, usize> {
    replay_from(vec![s.clone()], trace, 0)
}

/// Continue a replay from the states reached after `done` actions.
fn replay_from(mut cur: Vec<SessionType>, trace: &[String], done: usize) -> Result<Vec<SessionType>, usize> {
    for (i, a) in trace.iter().enumerate().skip(done) {
        let mut next: Vec<SessionType> = Vec::new();
        for st in &cur {
            for n in lts_step(st, a) {
                let c = n.canon();
                if !next.contains(&c) {
                    next.push(c);
                }
            }
        }
        if next.is_empty() {
            return Err(i + 1);
        }
        cur = next;
    }
    Ok(cur)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub kind: String,
    pub step: usize,
    pub thread: usize,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VIOLATION {} step={} thread={} {}", self.kind, self.step, self.thread, self.detail)
    }
}

#[derive(Clone, Debug)]
struct Frame {
    entry: MethodEntry,
}

/// Monitor state for one run.
pub struct Monitor<'p> {
    prog: &'p Program,
    checker: Checker<'p>,
    pub verify_states: bool,
    pub verify_traces: bool,
    /// Session type of each object that is not currently open.
    pub states: BTreeMap<String, SessionType>,
    frames: Vec<Vec<Frame>>,
    /// `(obj, g) -> (f, variant)`: field g holds a label selecting f's case.
    links: BTreeMap<(String, String), (String, SessionType)>,
    /// Label in the hole of a thread linked to a field of its current object.
    pending: Vec<Option<(String, String, SessionType)>>,
    pub theta: BTreeMap<(String, Polarity), ChannelType>,
    pub traces: BTreeMap<String, Vec<String>>,
    /// Last checked trace of each object with the states it reaches.
    replayed: BTreeMap<String, (Vec<String>, Vec<SessionType>)>,
    classes: BTreeMap<String, String>,
    pub violations: Vec<Violation>,
}

impl<'p> Monitor<'p> {
    pub fn new(prog: &'p Program, init: &Configuration) -> Monitor<'p> {
        let mut m = Monitor {
            prog,
            checker: Checker::runtime(prog),
            verify_states: true,
            verify_traces: true,
            states: BTreeMap::new(),
            frames: Vec::new(),
            links: BTreeMap::new(),
            pending: Vec::new(),
            theta: BTreeMap::new(),
            traces: BTreeMap::new(),
            replayed: BTreeMap::new(),
            classes: BTreeMap::new(),
            violations: Vec::new(),
        };
        let (_, main) = prog.main_method();
        for th in &init.threads {
            m.frames.push(Vec::new());
            m.pending.push(None);
            for (o, r) in &th.heap.objects {
                m.classes.insert(o.clone(), r.class.clone());
                if let Some(c) = prog.class(&r.class) {
                    m.states.insert(o.clone(), c.session.clone());
                }
                let tr = if *o == th.path.root { vec![main.clone()] } else { Vec::new() };
                m.traces.insert(o.clone(), tr);
            }
        }
        m
    }

    fn violation(&mut self, kind: &str, step: usize, thread: usize, detail: String) {
        self.violations.push(Violation { kind: kind.into(), step, thread, detail });
    }

    /// Runtime type of a value held by an object field or passed as argument.
    fn value_type(&self, v: &Value) -> Result<ValueType, String> {
        Ok(match v {
            Value::Null => ValueType::Null,
            Value::Label(l) => ValueType::Enum([l.clone()].into_iter().collect()),
            Value::Obj(o) => ValueType::Session(
                self.states.get(o).cloned().ok_or_else(|| format!("no session state for {o}"))?,
            ),
            Value::Endpoint(c, p) => ValueType::Session(translate_channel(
                self.theta
                    .get(&(c.clone(), *p))
                    .ok_or_else(|| format!("no channel type for {c}{}", p.sign()))?,
            )),
            Value::Access(n) => ValueType::Session(translate_access(
                self.prog.access_points.get(n).ok_or_else(|| format!("unknown access point {n}"))?,
            )),
        })
    }

    fn typing_of(&self, heap: &Heap, o: &str, rest: &[String]) -> Result<FieldTyping, String> {
        let rec = heap.get(o).ok_or_else(|| format!("object {o} missing"))?;
        let mut out = Record::new();
        let linked: BTreeMap<&String, &SessionType> = self
            .links
            .iter()
            .filter(|((x, _), _)| x == o)
            .map(|(_, (f, v))| (f, v))
            .collect();
        for (f, v) in &rec.fields {
            let t = if let Some((g, _)) = self.links.get(&(o.to_string(), f.clone())) {
                ValueType::Link(g.clone())
            } else if let Some(v) = linked.get(f) {
                ValueType::Session((*v).clone())
            } else {
                match (v, rest.split_first()) {
                    (Value::Obj(c), Some((g, more))) if g == f => {
                        let class = heap.get(c).ok_or_else(|| format!("object {c} missing"))?.class.clone();
                        ValueType::Object(Box::new(ObjectInternal {
                            class,
                            typing: self.typing_of(heap, c, more)?,
                        }))
                    }
                    _ => self.value_type(v)?,
                }
            };
            out.insert(f.clone(), t);
        }
        Ok(FieldTyping::Record(out))
    }

    /// The typing environment of thread `t` derived from the configuration.
    pub fn gamma(&self, conf: &Configuration, t: usize) -> Result<Env, String> {
        let th = &conf.threads[t];
        let mut roots = BTreeMap::new();
        for o in th.heap.roots() {
            let ty = if o == th.path.root {
                ValueType::Object(Box::new(ObjectInternal {
                    class: th.heap.get(&o).expect("root").class.clone(),
                    typing: self.typing_of(&th.heap, &o, &th.path.fields)?,
                }))
            } else {
                ValueType::Session(
                    self.states.get(&o).cloned().ok_or_else(|| format!("no session state for {o}"))?,
                )
            };
            roots.insert(o, ty);
        }
        let mut endpoints = BTreeMap::new();
        collect_endpoints(&th.expr, &mut |c, p| {
            if let Some(s) = self.theta.get(&(c.to_string(), p)) {
                endpoints.insert((c.to_string(), p), s.clone());
            }
        });
        let cur = th.heap.resolve_id(&th.path).map_err(|e| e.to_string())?;
        let pending = match &self.pending[t] {
            Some((o, f, v)) if *o == cur => Some((f.clone(), v.clone())),
            _ => None,
        };
        Ok(Env {
            roots,
            root: th.path.root.clone(),
            path: th.path.fields.clone(),
            param: None,
            endpoints,
            pending,
            frames: self.frames[t].iter().map(|f| f.entry.clone()).collect(),
        })
    }

    fn track(&mut self, before: &Configuration, step: &Step, after: &Configuration, n: usize) {
        let t = step.threads[0];
        let prev_pending = self.pending[t].take();
        let cur_before = |th: usize| before.threads[th].heap.resolve_id(&before.threads[th].path).ok();
        match &step.event {
            Event::New { obj, class } => {
                if let Some(c) = self.prog.class(class) {
                    self.states.insert(obj.clone(), c.session.clone());
                }
                self.classes.insert(obj.clone(), class.clone());
                self.traces.insert(obj.clone(), Vec::new());
            }
            Event::Swap { field, new, .. } => {
                let Some(o) = cur_before(t) else { return };
                if let Some(link) = self.links.remove(&(o.clone(), field.clone())) {
                    self.pending[t] = Some((o.clone(), link.0, link.1));
                }
                if let (Some((po, f, v)), Value::Label(_)) = (prev_pending, new) {
                    if po == o {
                        self.links.insert((o, field.clone()), (f, v));
                    }
                }
            }
            Event::Call { obj, method, arg, .. } => {
                let state = self.states.get(obj).cloned();
                let entry = match (state, self.value_type(arg)) {
                    (Some(s), Ok(at)) => match s.unfold() {
                        SessionType::Branch(es) => {
                            resolve_signature(&es, method, &at).map_err(|e| e.to_string())
                        }
                        other => Err(format!("{obj} is in variant state {other}")),
                    },
                    (None, _) => Err(format!("no session state for {obj}")),
                    (_, Err(e)) => Err(e),
                };
                match entry {
                    Ok(entry) => self.frames[t].push(Frame { entry }),
                    Err(e) => {
                        self.violation("CallUnavailable", n, t, format!("{obj}.{method}: {e}"));
                        self.frames[t].push(Frame {
                            entry: MethodEntry::new(method, ValueType::Null, ValueType::Null, SessionType::end()),
                        });
                    }
                }
                self.traces.entry(obj.clone()).or_default().push(method.clone());
            }
            Event::Return { obj, field, value } => {
                let Some(frame) = self.frames[t].pop() else {
                    self.violation("StateIllTyped", n, t, "return without frame".into());
                    return;
                };
                let cont = frame.entry.cont.clone();
                let mut next = cont.clone();
                if let Value::Label(l) = value {
                    self.traces.entry(obj.clone()).or_default().push(l.clone());
                    if let SessionType::Variant(cs) = cont.unfold() {
                        if let Some(s) = cs.get(l) {
                            next = s.clone();
                            let parent = after.threads[t].heap.resolve_id(&after.threads[t].path).ok();
                            if let Some(p) = parent {
                                self.pending[t] = Some((p, field.clone(), cont.clone()));
                            }
                        }
                    }
                }
                self.states.insert(obj.clone(), next);
            }
            Event::Switch { .. } | Event::Seq | Event::While | Event::SelfCall { .. } => {}
            Event::Init { access, chan, .. } => {
                if let Some(s) = self.prog.access_points.get(access) {
                    self.theta.insert((chan.clone(), Polarity::Plus), s.clone());
                    self.theta.insert((chan.clone(), Polarity::Minus), dual(s));
                }
            }
            Event::ComBase { chan, sender_pol, value, recv_field, .. } => {
                let label = match value {
                    Value::Label(l) => Some(l.clone()),
                    _ => None,
                };
                self.advance(chan, *sender_pol, label, step.threads[1], recv_field, after, n);
            }
            Event::ComObj { chan, sender_pol, renaming, recv_field, .. } => {
                for (old, new) in renaming {
                    if let Some(s) = self.states.remove(old) {
                        self.states.insert(new.clone(), s);
                    }
                    if let Some(tr) = self.traces.remove(old) {
                        self.traces.insert(new.clone(), tr);
                    }
                    if let Some(c) = self.classes.remove(old) {
                        self.classes.insert(new.clone(), c);
                    }
                    let moved: Vec<_> =
                        self.links.keys().filter(|(o, _)| o == old).cloned().collect();
                    for k in moved {
                        let v = self.links.remove(&k).expect("present");
                        self.links.insert((new.clone(), k.1), v);
                    }
                }
                self.advance(chan, *sender_pol, None, step.threads[1], recv_field, after, n);
            }
            Event::Spawn { class, method, obj, thread } => {
                self.frames.push(Vec::new());
                self.pending.push(None);
                debug_assert_eq!(*thread + 1, self.frames.len());
                self.classes.insert(obj.clone(), class.clone());
                self.traces.insert(obj.clone(), vec![method.clone()]);
            }
        }
    }

    /// Advance both endpoint types after a communication.
    #[allow(clippy::too_many_arguments)]
    fn advance(
        &mut self,
        chan: &str,
        p: Polarity,
        label: Option<String>,
        receiver: usize,
        recv_field: &str,
        after: &Configuration,
        n: usize,
    ) {
        let ks = (chan.to_string(), p);
        let kr = (chan.to_string(), p.flip());
        let (Some(ss), Some(sr)) = (self.theta.get(&ks).cloned(), self.theta.get(&kr).cloned()) else {
            self.violation("StateIllTyped", n, receiver, format!("untyped channel {chan}"));
            return;
        };
        let (sa, ra) = match (ss.unfold(), &label) {
            (ChannelType::Select(_), Some(l)) => (ChanAction::Select(l.clone()), ChanAction::Offer(l.clone())),
            _ => (ChanAction::Send, ChanAction::Recv),
        };
        match (chan_step(&ss, &sa), chan_step(&sr, &ra)) {
            (Some(a), Some(b)) => {
                self.theta.insert(ks, a);
                self.theta.insert(kr, b);
            }
            _ => {
                self.violation(
                    "ProtocolMismatch",
                    n,
                    receiver,
                    format!("{chan}: {ss} / {sr} cannot perform the communication"),
                );
                return;
            }
        }
        if let ChannelType::Offer(_) = sr.unfold() {
            if let SessionType::Branch(es) = translate_channel(&sr).unfold() {
                if let Some(e) = es.iter().find(|e| e.name == "receive") {
                    let cur = after.threads[receiver]
                        .heap
                        .resolve_id(&after.threads[receiver].path)
                        .ok();
                    if let Some(o) = cur {
                        self.pending[receiver] = Some((o, recv_field.to_string(), e.cont.clone()));
                    }
                }
            }
        }
    }

    /// Check the typing invariants of thread `t` in `conf`.
    pub fn check_thread(&mut self, conf: &Configuration, t: usize) -> Result<(), (String, String)> {
        let env = self.gamma(conf, t).map_err(|e| ("StateIllTyped".to_string(), e))?;
        let th = &conf.threads[t];
        if env.frames.len() != th.path.fields.len() {
            return Err((
                "StateIllTyped".into(),
                format!("{} frames for path {}", env.frames.len(), th.path),
            ));
        }
        self.check_links(&th.heap).map_err(|e| ("StateIllTyped".to_string(), e))?;
        self.checker
            .b(&th.expr, env)
            .map(|_| ())
            .map_err(|e| ("StateIllTyped".to_string(), format!("{} {e}", e.code())))
    }

    fn check_links(&self, heap: &Heap) -> Result<(), String> {
        for ((o, g), (f, v)) in &self.links {
            let Some(rec) = heap.get(o) else { continue };
            let SessionType::Variant(cs) = v.unfold() else {
                return Err(format!("{o}.{g} linked to non-variant {v}"));
            };
            let Some(Value::Label(l)) = rec.fields.get(g) else {
                return Err(format!("{o}.{g} linked but holds no label"));
            };
            let Some(expected) = cs.get(l) else {
                return Err(format!("{o}.{g} holds {l}, outside the labels of {v}"));
            };
            let actual = match rec.fields.get(f) {
                Some(Value::Obj(c)) => self.states.get(c).cloned(),
                Some(Value::Endpoint(c, p)) => {
                    self.theta.get(&(c.clone(), *p)).map(translate_channel)
                }
                _ => None,
            };
            match actual {
                Some(a) if equivalent(&a, expected) => {}
                _ => return Err(format!("{o}.{f} is not in state {expected} selected by {l}")),
            }
        }
        Ok(())
    }

    /// Endpoint uniqueness across the configuration.
    fn check_endpoints(&self, conf: &Configuration) -> Result<(), String> {
        let mut seen: BTreeSet<(String, Polarity)> = BTreeSet::new();
        for th in &conf.threads {
            let mut here = th.heap.endpoints();
            collect_endpoints(&th.expr, &mut |c, p| here.push((c.to_string(), p)));
            for e in here {
                if !self.theta.contains_key(&e) {
                    return Err(format!("endpoint {}{} has no channel type", e.0, e.1.sign()));
                }
                if !seen.insert(e.clone()) {
                    return Err(format!("endpoint {}{} occurs twice", e.0, e.1.sign()));
                }
            }
        }
        Ok(())
    }

    /// Call traces of all objects are paths of their class LTS.
    pub fn check_traces(&mut self) -> Result<(), String> {
        for (o, tr) in &self.traces {
            let Some(c) = self.classes.get(o).and_then(|c| self.prog.class(c)) else { continue };
            let (start, done) = match self.replayed.get(o) {
                Some((prefix, states)) if tr.starts_with(prefix) => (states.clone(), prefix.len()),
                _ => (vec![c.session.clone()], 0),
            };
            match replay_from(start, tr, done) {
                Ok(states) => {
                    self.replayed.insert(o.clone(), (tr.clone(), states));
                }
                Err(i) => return Err(format!("{o}: trace {} invalid at {i}", tr.join(" "))),
            }
        }
        Ok(())
    }

    /// Check every thread of `conf` now (used for the initial state).
    pub fn check_config(&mut self, conf: &Configuration, n: usize) {
        if self.verify_states {
            for t in 0..conf.threads.len() {
                if let Err((k, d)) = self.check_thread(conf, t) {
                    self.violation(&k, n, t, d);
                }
            }
            if let Err(d) = self.check_endpoints(conf) {
                self.violation("Linearity", n, 0, d);
            }
        }
        if self.verify_traces {
            if let Err(d) = self.check_traces() {
                self.violation("TraceInvalid", n, 0, d);
            }
        }
    }
}

impl Observer for Monitor<'_> {
    fn observe(&mut self, n: usize, before: &Configuration, step: &Step, after: &Configuration) {
        self.track(before, step, after, n);
        self.check_config(after, n);
    }
}

fn collect_endpoints(e: &Expr, f: &mut dyn FnMut(&str, Polarity)) {
    match e {
        Expr::Endpoint(c, p) => f(c, *p),
        Expr::Swap(_, a) | Expr::Call(_, _, a) | Expr::SelfCall(_, a) | Expr::Spawn(_, _, a) => {
            collect_endpoints(a, f)
        }
        Expr::Return(a) => collect_endpoints(a, f),
        Expr::Seq(a, b) | Expr::While(a, b) => {
            collect_endpoints(a, f);
            collect_endpoints(b, f);
        }
        Expr::Switch(a, cs) => {
            collect_endpoints(a, f);
            for c in cs.values() {
                collect_endpoints(c, f);
            }
        }
        _ => {}
    }
}
