//! Small-step interpreter for the sequential and distributed semantics.
//!
//! Each thread holds its own heap, current-object path and expression.
//! A step is either local to one thread or a rendezvous between two threads
//! (connection on an access point, or communication on a channel).

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::heap::{Configuration, CoreError, Heap, ObjectRecord, Path, Thread, Value};
use crate::syntax::{Expr, Polarity, Program};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuntimeFault {
    #[error("thread {thread}: {msg}")]
    Stuck { thread: usize, msg: String },
    #[error(transparent)]
    Heap(#[from] CoreError),
    #[error("main class {0} is not declared")]
    NoMain(String),
}

fn stuck<T>(thread: usize, msg: impl Into<String>) -> Result<T, RuntimeFault> {
    Err(RuntimeFault::Stuck { thread, msg: msg.into() })
}

/// What happened in one reduction step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Event {
    New { obj: String, class: String },
    Swap { field: String, old: Value, new: Value },
    Call { field: String, obj: String, method: String, arg: Value },
    /// `obj` is the callee, `field` the field of the caller holding it.
    Return { obj: String, field: String, value: Value },
    Switch { label: String },
    Seq,
    While,
    SelfCall { method: String },
    Init { access: String, chan: String, acc_field: String, req_field: String },
    ComBase { chan: String, sender_pol: Polarity, value: Value, send_field: String, recv_field: String },
    ComObj {
        chan: String,
        sender_pol: Polarity,
        root: String,
        renaming: BTreeMap<String, String>,
        send_field: String,
        recv_field: String,
    },
    Spawn { class: String, method: String, obj: String, thread: usize },
}

impl Event {
    pub fn rule(&self) -> &'static str {
        match self {
            Event::New { .. } => "New",
            Event::Swap { .. } => "Swap",
            Event::Call { .. } => "Call",
            Event::Return { .. } => "Return",
            Event::Switch { .. } => "Switch",
            Event::Seq => "Seq",
            Event::While => "While",
            Event::SelfCall { .. } => "SelfCall",
            Event::Init { .. } => "Init",
            Event::ComBase { .. } => "ComBase",
            Event::ComObj { .. } => "ComObj",
            Event::Spawn { .. } => "Spawn",
        }
    }

    fn detail(&self) -> String {
        match self {
            Event::New { obj, class } => format!("{obj}={class}"),
            Event::Swap { field, old, new } => format!("{field}: {old} -> {new}"),
            Event::Call { field, obj, method, arg } => format!("{field}({obj}).{method}({arg})"),
            Event::Return { obj, field, value } => format!("{field}({obj}) returns {value}"),
            Event::Switch { label } => label.clone(),
            Event::Seq | Event::While => String::new(),
            Event::SelfCall { method } => method.clone(),
            Event::Init { access, chan, .. } => format!("{access} -> {chan}"),
            Event::ComBase { chan, value, .. } => format!("{chan} carries {value}"),
            Event::ComObj { chan, root, renaming, .. } => {
                format!("{chan} carries {root} as {}", renaming.get(root).map_or("?", |s| s))
            }
            Event::Spawn { class, method, obj, thread } => {
                format!("{class}.{method} as {obj} in t{thread}")
            }
        }
    }
}

/// An event with the threads taking part (sender/acceptor first).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Step {
    pub event: Event,
    pub threads: Vec<usize>,
}

impl Step {
    /// `#<step> <rule> t<i>[,t<j>] <detail>`.
    pub fn log_line(&self, n: usize) -> String {
        let ts: Vec<String> = self.threads.iter().map(|t| format!("t{t}")).collect();
        let d = self.event.detail();
        if d.is_empty() {
            format!("#{n} {} {}", self.event.rule(), ts.join(","))
        } else {
            format!("#{n} {} {} {d}", self.event.rule(), ts.join(","))
        }
    }
}

/// Why a non-terminated thread cannot move.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ThreadStatus {
    Terminated,
    UnmatchedAccept(String),
    UnmatchedRequest(String),
    Deadlocked(String),
}

impl fmt::Display for ThreadStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThreadStatus::Terminated => write!(f, "terminated"),
            ThreadStatus::UnmatchedAccept(n) => write!(f, "unmatched-accept {n}"),
            ThreadStatus::UnmatchedRequest(n) => write!(f, "unmatched-request {n}"),
            ThreadStatus::Deadlocked(c) => write!(f, "deadlocked-on-channel {c}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    AllTerminated,
    Blocked(Vec<ThreadStatus>),
    StepLimit,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        match self {
            Outcome::AllTerminated => 0,
            Outcome::Blocked(_) => 2,
            Outcome::StepLimit => 3,
        }
    }
}

/// Location of the redex: child indices from the root of the expression.
type Hole = Vec<usize>;

fn child(e: &Expr) -> Option<&Expr> {
    match e {
        Expr::Swap(_, a)
        | Expr::Call(_, _, a)
        | Expr::SelfCall(_, a)
        | Expr::Spawn(_, _, a)
        | Expr::Return(a)
        | Expr::Seq(a, _)
        | Expr::Switch(a, _) => Some(a),
        _ => None,
    }
}

/// Decompose `e` as `E[redex]`; `None` when `e` is a value.
pub fn decompose(e: &Expr) -> Option<(Hole, &Expr)> {
    if e.is_value() {
        return None;
    }
    let mut hole = Vec::new();
    let mut cur = e;
    while let Some(c) = child(cur) {
        if c.is_value() {
            break;
        }
        hole.push(0);
        cur = c;
    }
    Some((hole, cur))
}

/// Replace the subterm at `hole` by `new`.
pub fn plug(e: &Expr, hole: &[usize], new: Expr) -> Expr {
    let Some((_, rest)) = hole.split_first() else { return new };
    let b = |a: &Expr| Box::new(plug(a, rest, new.clone()));
    match e {
        Expr::Swap(f, a) => Expr::Swap(f.clone(), b(a)),
        Expr::Call(f, m, a) => Expr::Call(f.clone(), m.clone(), b(a)),
        Expr::SelfCall(m, a) => Expr::SelfCall(m.clone(), b(a)),
        Expr::Spawn(c, m, a) => Expr::Spawn(c.clone(), m.clone(), b(a)),
        Expr::Return(a) => Expr::Return(b(a)),
        Expr::Seq(a, x) => Expr::Seq(b(a), x.clone()),
        Expr::Switch(a, cs) => Expr::Switch(b(a), cs.clone()),
        other => other.clone(),
    }
}

/// A thread waiting for a partner.
#[derive(Clone, Debug, PartialEq, Eq)]
enum Wait {
    Accept(String),
    Request(String),
    Send(String, Polarity),
    Recv(String, Polarity),
}

/// One enabled move.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Choice {
    Local(usize),
    Pair(usize, usize),
}

fn is_channel_op(m: &str) -> bool {
    matches!(m, "accept" | "request" | "send" | "receive")
}

/// Initial configuration: one thread running the main method on a fresh
/// object of the main class, parameter replaced by `null`.
pub fn initial_config(prog: &Program) -> Result<Configuration, RuntimeFault> {
    let (c, m) = prog.main_method();
    let decl = prog.class(&c).ok_or_else(|| RuntimeFault::NoMain(c.clone()))?;
    let md = decl.method(&m).ok_or_else(|| RuntimeFault::NoMain(format!("{c}.{m}")))?;
    let mut conf = Configuration::default();
    let o = conf.fresh_obj();
    let mut heap = Heap::new();
    heap.add(&o, ObjectRecord::new(&c, decl.fields.iter().cloned()))?;
    conf.threads.push(Thread {
        heap,
        path: Path::root(&o),
        expr: md.body.subst(&md.param, &Expr::Null),
    });
    Ok(conf)
}

fn value_of(e: &Expr) -> Value {
    Value::from_expr(e).expect("redex argument is a value")
}

pub struct Interp<'p> {
    pub prog: &'p Program,
    pub conf: Configuration,
    pub steps: usize,
    rng: Option<ChaCha8Rng>,
}

impl<'p> Interp<'p> {
    pub fn new(prog: &'p Program, seed: Option<u64>) -> Result<Interp<'p>, RuntimeFault> {
        Ok(Interp::with_config(prog, initial_config(prog)?, seed))
    }

    pub fn with_config(prog: &'p Program, conf: Configuration, seed: Option<u64>) -> Interp<'p> {
        Interp { prog, conf, steps: 0, rng: seed.map(ChaCha8Rng::seed_from_u64) }
    }

    fn wait_of(&self, t: usize) -> Option<Wait> {
        let th = &self.conf.threads[t];
        let (_, r) = decompose(&th.expr)?;
        let Expr::Call(f, m, arg) = r else { return None };
        if !is_channel_op(m) {
            return None;
        }
        match (th.heap.read(&th.path, f).ok()?, m.as_str()) {
            (Value::Access(n), "accept") => Some(Wait::Accept(n.clone())),
            (Value::Access(n), "request") => Some(Wait::Request(n.clone())),
            (Value::Endpoint(c, p), "send") if arg.is_value() => Some(Wait::Send(c.clone(), *p)),
            (Value::Endpoint(c, p), "receive") => Some(Wait::Recv(c.clone(), *p)),
            _ => None,
        }
    }

    fn matches(a: &Wait, b: &Wait) -> bool {
        match (a, b) {
            (Wait::Accept(n), Wait::Request(m)) | (Wait::Request(m), Wait::Accept(n)) => n == m,
            (Wait::Send(c, p), Wait::Recv(d, q)) | (Wait::Recv(d, q), Wait::Send(c, p)) => {
                c == d && *q == p.flip()
            }
            _ => false,
        }
    }

    /// All enabled moves, locals first in thread order, then pairs in
    /// lexicographic order.
    pub fn enabled(&self) -> Vec<Choice> {
        let n = self.conf.threads.len();
        let waits: Vec<Option<Wait>> = (0..n).map(|t| self.wait_of(t)).collect();
        let mut out = Vec::new();
        for (t, w) in waits.iter().enumerate() {
            if w.is_none() && !self.conf.threads[t].expr.is_value() {
                out.push(Choice::Local(t));
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                if let (Some(a), Some(b)) = (&waits[i], &waits[j]) {
                    if Self::matches(a, b) {
                        out.push(Choice::Pair(i, j));
                    }
                }
            }
        }
        out
    }

    /// Scheduler choice: first local move, else the least pair; uniform when seeded.
    pub fn choose(&mut self) -> Option<Choice> {
        let en = self.enabled();
        if en.is_empty() {
            return None;
        }
        match &mut self.rng {
            Some(rng) => Some(en[rng.gen_range(0..en.len())]),
            None => Some(en[0]),
        }
    }

    /// Perform one scheduled step; `None` when nothing is enabled.
    pub fn step(&mut self) -> Result<Option<Step>, RuntimeFault> {
        let Some(c) = self.choose() else { return Ok(None) };
        let s = self.fire(c)?;
        self.steps += 1;
        Ok(Some(s))
    }

    pub fn fire(&mut self, c: Choice) -> Result<Step, RuntimeFault> {
        match c {
            Choice::Local(t) => self.local(t),
            Choice::Pair(i, j) => self.rendezvous(i, j),
        }
    }

    fn local(&mut self, t: usize) -> Result<Step, RuntimeFault> {
        let prog = self.prog;
        let th = &self.conf.threads[t];
        let Some((hole, redex)) = decompose(&th.expr) else {
            return stuck(t, "thread has terminated");
        };
        let redex = redex.clone();
        let mut path = th.path.clone();
        let mut spawned: Option<Thread> = None;
        let (new, event) = match &redex {
            Expr::New(c) => {
                let decl = prog.class(c).ok_or_else(|| RuntimeFault::Stuck {
                    thread: t,
                    msg: format!("class {c} not declared"),
                })?;
                let o = self.conf.fresh_obj();
                self.conf.threads[t]
                    .heap
                    .add(&o, ObjectRecord::new(c, decl.fields.iter().cloned()))?;
                (Expr::ObjId(o.clone()), Event::New { obj: o, class: c.clone() })
            }
            Expr::Swap(f, v) => {
                let new = value_of(v);
                let old = self.conf.threads[t].heap.write_in_place(&path, f, new.clone())?;
                (old.to_expr(), Event::Swap { field: f.clone(), old, new })
            }
            Expr::Call(f, m, v) => {
                let th = &self.conf.threads[t];
                let target = th.heap.read(&path, f)?.clone();
                let Value::Obj(o) = &target else {
                    return stuck(t, format!("call {f}.{m} on {target}"));
                };
                let class = &th.heap.get(o).expect("resolved").class;
                let md = prog.class(class).and_then(|c| c.method(m)).ok_or_else(|| {
                    RuntimeFault::Stuck { thread: t, msg: format!("{class} has no method {m}") }
                })?;
                let body = md.body.subst(&md.param, v);
                path = path.child(f);
                (
                    Expr::Return(Box::new(body)),
                    Event::Call { field: f.clone(), obj: o.clone(), method: m.clone(), arg: value_of(v) },
                )
            }
            Expr::Return(v) => {
                let callee = self.conf.threads[t].heap.resolve_id(&path)?;
                let field = path.fields.last().cloned().ok_or_else(|| RuntimeFault::Stuck {
                    thread: t,
                    msg: "return at the root object".into(),
                })?;
                path = path.parent().expect("non-root path");
                ((**v).clone(), Event::Return { obj: callee, field, value: value_of(v) })
            }
            Expr::SelfCall(m, v) => {
                let class = self.conf.threads[t].heap.resolve(&path)?.class.clone();
                let md = prog.class(&class).and_then(|c| c.method(m)).ok_or_else(|| {
                    RuntimeFault::Stuck { thread: t, msg: format!("{class} has no method {m}") }
                })?;
                (md.body.subst(&md.param, v), Event::SelfCall { method: m.clone() })
            }
            Expr::Seq(_, b) => ((**b).clone(), Event::Seq),
            Expr::Switch(v, cases) => {
                let Expr::Label(l) = &**v else {
                    return stuck(t, format!("switch on non-label {v:?}"));
                };
                let Some(body) = cases.get(l) else {
                    return stuck(t, format!("switch has no case {l}"));
                };
                (body.clone(), Event::Switch { label: l.clone() })
            }
            Expr::While(c, b) => {
                let mut cases = BTreeMap::new();
                cases.insert("TRUE".to_string(), Expr::seq((**b).clone(), redex.clone()));
                cases.insert("FALSE".to_string(), Expr::Null);
                (Expr::Switch(c.clone(), cases), Event::While)
            }
            Expr::Spawn(c, m, _) => {
                let decl = prog.class(c).ok_or_else(|| RuntimeFault::Stuck {
                    thread: t,
                    msg: format!("class {c} not declared"),
                })?;
                let md = decl.method(m).ok_or_else(|| RuntimeFault::Stuck {
                    thread: t,
                    msg: format!("{c} has no method {m}"),
                })?;
                let o = self.conf.fresh_obj();
                let mut heap = Heap::new();
                heap.add(&o, ObjectRecord::new(c, decl.fields.iter().cloned()))?;
                spawned = Some(Thread {
                    heap,
                    path: Path::root(&o),
                    expr: md.body.subst(&md.param, &Expr::Null),
                });
                let thread = self.conf.threads.len();
                (
                    Expr::Null,
                    Event::Spawn { class: c.clone(), method: m.clone(), obj: o, thread },
                )
            }
            other => return stuck(t, format!("no rule applies to {other:?}")),
        };
        let th = &mut self.conf.threads[t];
        th.expr = plug(&th.expr, &hole, new);
        th.path = path;
        let mut threads = vec![t];
        if let Some(s) = spawned {
            threads.push(self.conf.threads.len());
            self.conf.threads.push(s);
        }
        Ok(Step { event, threads })
    }

    fn rendezvous(&mut self, i: usize, j: usize) -> Result<Step, RuntimeFault> {
        let (wi, wj) = (self.wait_of(i), self.wait_of(j));
        let (Some(wi), Some(wj)) = (wi, wj) else {
            return stuck(i, "rendezvous partner not waiting");
        };
        // Orient as (acceptor or sender, requester or receiver).
        let (a, b) = match (&wi, &wj) {
            (Wait::Accept(_), _) | (Wait::Send(..), _) => (i, j),
            _ => (j, i),
        };
        let field_of = |s: &Self, t: usize| -> (Hole, String, Expr) {
            let (hole, r) = decompose(&s.conf.threads[t].expr).expect("waiting thread");
            match r {
                Expr::Call(f, _, v) => (hole, f.clone(), (**v).clone()),
                _ => unreachable!("waiting thread has a call redex"),
            }
        };
        let (ha, fa, va) = field_of(self, a);
        let (hb, fb, _) = field_of(self, b);
        let wa = if a == i { wi } else { wj };
        let (ra, rb, event) = match wa {
            Wait::Accept(n) => {
                let c = self.conf.fresh_chan();
                (
                    Expr::Endpoint(c.clone(), Polarity::Plus),
                    Expr::Endpoint(c.clone(), Polarity::Minus),
                    Event::Init { access: n, chan: c, acc_field: fa, req_field: fb },
                )
            }
            Wait::Send(c, p) => match &va {
                Expr::ObjId(o) => {
                    let (down, up) = self.conf.threads[a].heap.split(o)?;
                    let mut phi = BTreeMap::new();
                    for x in down.desc_ordered(o) {
                        phi.insert(x, self.conf.fresh_obj());
                    }
                    let moved = down.rename(&phi)?;
                    self.conf.threads[a].heap = up;
                    let hb_heap = self.conf.threads[b].heap.union(&moved)?;
                    self.conf.threads[b].heap = hb_heap;
                    let target = phi[o].clone();
                    (
                        Expr::Null,
                        Expr::ObjId(target),
                        Event::ComObj {
                            chan: c,
                            sender_pol: p,
                            root: o.clone(),
                            renaming: phi,
                            send_field: fa,
                            recv_field: fb,
                        },
                    )
                }
                v => (
                    Expr::Null,
                    v.clone(),
                    Event::ComBase {
                        chan: c,
                        sender_pol: p,
                        value: value_of(v),
                        send_field: fa,
                        recv_field: fb,
                    },
                ),
            },
            _ => return stuck(a, "ill-oriented rendezvous"),
        };
        let ta = &mut self.conf.threads[a];
        ta.expr = plug(&ta.expr, &ha, ra);
        let tb = &mut self.conf.threads[b];
        tb.expr = plug(&tb.expr, &hb, rb);
        Ok(Step { event, threads: vec![a, b] })
    }

    /// Status of every thread when nothing is enabled.
    pub fn classify(&self) -> Vec<ThreadStatus> {
        (0..self.conf.threads.len())
            .map(|t| match self.wait_of(t) {
                None => ThreadStatus::Terminated,
                Some(Wait::Accept(n)) => ThreadStatus::UnmatchedAccept(n),
                Some(Wait::Request(n)) => ThreadStatus::UnmatchedRequest(n),
                Some(Wait::Send(c, _)) | Some(Wait::Recv(c, _)) => ThreadStatus::Deadlocked(c),
            })
            .collect()
    }

    pub fn all_terminated(&self) -> bool {
        self.conf.threads.iter().all(|t| t.expr.is_value())
    }
}

fn expr_mentions(e: &Expr, c: &str) -> bool {
    match e {
        Expr::Endpoint(d, _) => d == c,
        Expr::Swap(_, a) | Expr::Call(_, _, a) | Expr::SelfCall(_, a) | Expr::Spawn(_, _, a) => {
            expr_mentions(a, c)
        }
        Expr::Return(a) => expr_mentions(a, c),
        Expr::Seq(a, b) | Expr::While(a, b) => expr_mentions(a, c) || expr_mentions(b, c),
        Expr::Switch(a, cs) => expr_mentions(a, c) || cs.values().any(|x| expr_mentions(x, c)),
        _ => false,
    }
}

/// Threads in which channel `c` occurs, in heap or expression.
pub fn occurrences(conf: &Configuration, c: &str) -> Vec<usize> {
    conf.threads
        .iter()
        .enumerate()
        .filter(|(_, t)| {
            expr_mentions(&t.expr, c) || t.heap.endpoints().iter().any(|(d, _)| d == c)
        })
        .map(|(i, _)| i)
        .collect()
}

/// Rendezvous linearity: a communication involves both polarities of one
/// channel, and no third thread holds that channel.
pub fn rendezvous_linear(before: &Configuration, step: &Step) -> Result<(), String> {
    let (chan, pol) = match &step.event {
        Event::ComBase { chan, sender_pol, .. } | Event::ComObj { chan, sender_pol, .. } => {
            (chan, *sender_pol)
        }
        Event::Init { chan, .. } => {
            return if occurrences(before, chan).is_empty() {
                Ok(())
            } else {
                Err(format!("fresh channel {chan} already in use"))
            };
        }
        _ => return Ok(()),
    };
    let [s, r] = step.threads[..] else {
        return Err("communication without two threads".into());
    };
    let holds = |t: usize, p: Polarity| {
        before.threads[t].heap.endpoints().contains(&(chan.clone(), p))
    };
    if !holds(s, pol) || !holds(r, pol.flip()) {
        return Err(format!("{chan}: partners do not hold dual endpoints"));
    }
    let third: Vec<usize> =
        occurrences(before, chan).into_iter().filter(|t| *t != s && *t != r).collect();
    if !third.is_empty() {
        return Err(format!("{chan} also occurs in threads {third:?}"));
    }
    let count = before
        .threads
        .iter()
        .flat_map(|t| t.heap.endpoints())
        .filter(|(d, _)| d == chan)
        .count();
    if count != 2 {
        return Err(format!("{chan} has {count} endpoint occurrences"));
    }
    Ok(())
}

/// Options for [`run`].
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub steps: usize,
    pub seed: Option<u64>,
}

/// Result of a run: outcome, log lines and rendezvous linearity failures.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub outcome: Outcome,
    pub log: Vec<String>,
    pub linearity: Vec<String>,
    pub rendezvous: usize,
    pub steps: usize,
    pub final_config: Configuration,
}

/// Observer called after each step with the configurations around it.
pub trait Observer {
    fn observe(&mut self, n: usize, before: &Configuration, step: &Step, after: &Configuration);
}

impl Observer for () {
    fn observe(&mut self, _: usize, _: &Configuration, _: &Step, _: &Configuration) {}
}

pub fn run(prog: &Program, opts: &RunOptions, obs: &mut dyn Observer) -> Result<RunResult, RuntimeFault> {
    let mut it = Interp::new(prog, opts.seed)?;
    run_from(&mut it, opts.steps, obs)
}

pub fn run_from(
    it: &mut Interp<'_>,
    max: usize,
    obs: &mut dyn Observer,
) -> Result<RunResult, RuntimeFault> {
    let mut log = Vec::new();
    let mut linearity = Vec::new();
    let mut rendezvous = 0;
    let outcome = loop {
        if it.all_terminated() {
            break Outcome::AllTerminated;
        }
        if it.steps >= max {
            break Outcome::StepLimit;
        }
        let before = it.conf.clone();
        let Some(step) = it.step()? else {
            break Outcome::Blocked(it.classify());
        };
        if step.threads.len() == 2 && !matches!(step.event, Event::Spawn { .. }) {
            rendezvous += 1;
            if let Err(e) = rendezvous_linear(&before, &step) {
                linearity.push(format!("step={} {e}", it.steps));
            }
        }
        log.push(step.log_line(it.steps));
        obs.observe(it.steps, &before, &step, &it.conf);
    };
    Ok(RunResult {
        outcome,
        log,
        linearity,
        rendezvous,
        steps: it.steps,
        final_config: it.conf.clone(),
    })
}
