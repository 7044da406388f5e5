//! Shared test support: corpus loading, random type generators, widening,
//! and independent oracles for channel subtyping and class consistency.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::PathBuf;

use mst::check::{Checker, Env};
use mst::heap::Configuration;
use mst::interp::{initial_config, run, Event, Observer, Outcome, RunOptions, Step};
use mst::monitor::Monitor;
use mst::parser::{parse_program, parse_session_type};
use mst::subtype::{equivalent, equivalent_field, join_records, subtype_field, subtype_value};
use mst::syntax::{
    ChannelType, FieldTyping, MethodEntry, ObjectInternal, Payload, Program, Record, SessionType,
    ValueType,
};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const LABELS: [&str; 3] = ["A", "B", "C"];
pub const METHODS: [&str; 3] = ["m", "n", "k"];

pub fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("corpus")
}

pub fn corpus_path(rel: &str) -> String {
    corpus_dir().join(rel).to_string_lossy().into_owned()
}

pub fn load(rel: &str) -> Program {
    let text = std::fs::read_to_string(corpus_dir().join(rel)).expect("corpus file");
    parse_program(&text).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

/// Every runnable corpus program, relative to the corpus directory.
pub fn runnable_corpus() -> Vec<String> {
    let mut out = vec![
        "file.mst".to_string(),
        "algexample.mst".to_string(),
        "remote_v1.mst".to_string(),
        "remote_v2.mst".to_string(),
    ];
    let mut small: Vec<String> = std::fs::read_dir(corpus_dir().join("small"))
        .expect("small corpus")
        .map(|e| format!("small/{}", e.expect("entry").file_name().to_string_lossy()))
        .filter(|n| n.ends_with(".mst"))
        .collect();
    small.sort();
    out.extend(small);
    out
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Generators

fn label_set<R: Rng>(rng: &mut R) -> BTreeSet<String> {
    let n = rng.gen_range(1..=LABELS.len());
    LABELS.choose_multiple(rng, n).map(|l| l.to_string()).collect()
}

fn simple_value<R: Rng>(rng: &mut R) -> ValueType {
    if rng.gen_bool(0.3) {
        ValueType::Null
    } else {
        ValueType::Enum(label_set(rng))
    }
}

/// Closed, contractive class session type with `depth() <= depth`.
pub fn gen_session<R: Rng>(rng: &mut R, depth: usize) -> SessionType {
    session_in(rng, depth, &mut Vec::new())
}

fn session_in<R: Rng>(rng: &mut R, depth: usize, vars: &mut Vec<String>) -> SessionType {
    if depth <= 1 {
        return SessionType::end();
    }
    match rng.gen_range(0..10) {
        0..=5 => branch_in(rng, depth, vars),
        6..=7 if depth >= 3 => variant_in(rng, depth, vars),
        _ => {
            let x = format!("X{}", vars.len());
            vars.push(x.clone());
            let body = branch_in(rng, depth - 1, vars);
            vars.pop();
            SessionType::rec(&x, body)
        }
    }
}

fn branch_in<R: Rng>(rng: &mut R, depth: usize, vars: &mut Vec<String>) -> SessionType {
    if depth <= 1 {
        return SessionType::end();
    }
    let n = rng.gen_range(0..=METHODS.len());
    let names: Vec<&str> = METHODS.choose_multiple(rng, n).copied().collect();
    let mut entries = Vec::new();
    for m in names {
        let param = if rng.gen_bool(0.15) {
            ValueType::Session(branch_in(rng, 2, &mut Vec::new()))
        } else {
            simple_value(rng)
        };
        let cont = if !vars.is_empty() && rng.gen_bool(0.35) {
            SessionType::var(vars.choose(rng).expect("nonempty"))
        } else if depth > 3 && rng.gen_bool(0.3) {
            variant_in(rng, depth - 1, vars)
        } else {
            session_in(rng, depth - 1, vars)
        };
        let result = match (&cont, simple_value(rng)) {
            (SessionType::Variant(_), _) if rng.gen_bool(0.6) => ValueType::LinkThis,
            // an enum result naming exactly the variant's labels is the surface form of linkthis
            (SessionType::Variant(cs), ValueType::Enum(ls))
                if cs.keys().cloned().collect::<BTreeSet<_>>() == ls =>
            {
                ValueType::LinkThis
            }
            (_, v) => v,
        };
        entries.push(MethodEntry::new(m, param, result, cont));
    }
    SessionType::Branch(entries)
}

/// Variant of depth at most `depth`, which must be at least 3.
fn variant_in<R: Rng>(rng: &mut R, depth: usize, vars: &mut Vec<String>) -> SessionType {
    let mut cases = BTreeMap::new();
    for l in label_set(rng) {
        let s = if rng.gen_bool(0.2) {
            let x = format!("X{}", vars.len());
            vars.push(x.clone());
            let body = branch_in(rng, depth - 2, vars);
            vars.pop();
            SessionType::rec(&x, body)
        } else {
            branch_in(rng, depth - 1, vars)
        };
        cases.insert(l, s);
    }
    SessionType::Variant(cases)
}

/// Closed, contractive channel type with `depth() <= depth`.
pub fn gen_channel<R: Rng>(rng: &mut R, depth: usize) -> ChannelType {
    loop {
        let c = channel_in(rng, depth, &mut Vec::new(), false);
        if c.depth() <= depth {
            return c;
        }
    }
}

fn channel_in<R: Rng>(rng: &mut R, depth: usize, vars: &mut Vec<String>, guarded: bool) -> ChannelType {
    if depth <= 1 {
        return if guarded && !vars.is_empty() && rng.gen_bool(0.5) {
            ChannelType::Var(vars.choose(rng).expect("nonempty").clone())
        } else {
            ChannelType::End
        };
    }
    match rng.gen_range(0..12) {
        0 => ChannelType::End,
        1 if guarded && !vars.is_empty() => ChannelType::Var(vars.choose(rng).expect("nonempty").clone()),
        1..=2 => {
            let p = payload(rng, depth);
            ChannelType::Recv(Box::new(p), Box::new(channel_in(rng, depth - 1, vars, true)))
        }
        3..=4 => {
            let p = payload(rng, depth);
            ChannelType::Send(Box::new(p), Box::new(channel_in(rng, depth - 1, vars, true)))
        }
        5..=6 => ChannelType::Offer(chcases(rng, depth, vars)),
        7..=8 => ChannelType::Select(chcases(rng, depth, vars)),
        _ => {
            let x = format!("Y{}", vars.len());
            vars.push(x.clone());
            let body = channel_in(rng, depth - 1, vars, false);
            vars.pop();
            if body.free_vars().contains(&x) {
                ChannelType::rec(&x, body)
            } else {
                body
            }
        }
    }
}

fn chcases<R: Rng>(rng: &mut R, depth: usize, vars: &mut Vec<String>) -> BTreeMap<String, ChannelType> {
    label_set(rng)
        .into_iter()
        .map(|l| (l, channel_in(rng, depth - 1, vars, true)))
        .collect()
}

fn payload<R: Rng>(rng: &mut R, depth: usize) -> Payload {
    if depth > 3 && rng.gen_bool(0.15) {
        Payload::Chan(channel_in(rng, 2, &mut Vec::new(), false))
    } else {
        Payload::Value(simple_value(rng))
    }
}

// ---------------------------------------------------------------------------
// Widening: one random step towards a supertype.

/// Apply one widening step in a covariant position: method deletion, label
/// insertion into a variant or result enumeration, or label removal from a
/// parameter enumeration. Returns `s` unchanged if nothing applies.
pub fn widen_session<R: Rng>(rng: &mut R, s: &SessionType) -> SessionType {
    match s {
        SessionType::Var(_) => s.clone(),
        SessionType::Rec(x, b) => SessionType::rec(x, widen_session(rng, b)),
        SessionType::Variant(cs) => {
            let missing: Vec<&str> = LABELS.iter().copied().filter(|l| !cs.contains_key(*l)).collect();
            let mut cs = cs.clone();
            if !missing.is_empty() && rng.gen_bool(0.4) {
                cs.insert(missing.choose(rng).expect("nonempty").to_string(), SessionType::end());
            } else {
                let keys: Vec<String> = cs.keys().cloned().collect();
                let k = keys.choose(rng).expect("variant has cases").clone();
                let w = widen_session(rng, &cs[&k]);
                cs.insert(k, w);
            }
            SessionType::Variant(cs)
        }
        SessionType::Branch(es) => {
            if es.is_empty() {
                return s.clone();
            }
            let mut es = es.clone();
            let i = rng.gen_range(0..es.len());
            match rng.gen_range(0..4) {
                0 => {
                    es.remove(i);
                }
                1 => {
                    if let ValueType::Enum(ls) = &mut es[i].result {
                        if let Some(l) = LABELS.iter().find(|l| !ls.contains(**l)) {
                            ls.insert(l.to_string());
                        }
                    }
                }
                2 => {
                    if let ValueType::Enum(ls) = &mut es[i].param {
                        if ls.len() > 1 {
                            let l = ls.iter().next().expect("nonempty").clone();
                            ls.remove(&l);
                        }
                    }
                }
                _ => {
                    es[i].cont = widen_session(rng, &es[i].cont);
                }
            }
            SessionType::Branch(es)
        }
    }
}

/// Apply one widening step with respect to channel subtyping.
pub fn widen_channel<R: Rng>(rng: &mut R, c: &ChannelType) -> ChannelType {
    match c {
        ChannelType::End | ChannelType::Var(_) => c.clone(),
        ChannelType::Rec(x, b) => ChannelType::rec(x, widen_channel(rng, b)),
        ChannelType::Recv(p, k) => {
            if rng.gen_bool(0.5) {
                let p = match &**p {
                    Payload::Value(ValueType::Enum(ls)) => {
                        let mut ls = ls.clone();
                        if let Some(l) = LABELS.iter().find(|l| !ls.contains(**l)) {
                            ls.insert(l.to_string());
                        }
                        Payload::Value(ValueType::Enum(ls))
                    }
                    Payload::Chan(d) => Payload::Chan(widen_channel(rng, d)),
                    other => other.clone(),
                };
                ChannelType::Recv(Box::new(p), k.clone())
            } else {
                ChannelType::Recv(p.clone(), Box::new(widen_channel(rng, k)))
            }
        }
        ChannelType::Send(p, k) => {
            if rng.gen_bool(0.5) {
                let p = match &**p {
                    Payload::Value(ValueType::Enum(ls)) if ls.len() > 1 => {
                        let mut ls = ls.clone();
                        let l = ls.iter().next_back().expect("nonempty").clone();
                        ls.remove(&l);
                        Payload::Value(ValueType::Enum(ls))
                    }
                    other => other.clone(),
                };
                ChannelType::Send(Box::new(p), k.clone())
            } else {
                ChannelType::Send(p.clone(), Box::new(widen_channel(rng, k)))
            }
        }
        ChannelType::Offer(cs) => {
            let mut cs = cs.clone();
            let missing: Vec<&str> = LABELS.iter().copied().filter(|l| !cs.contains_key(*l)).collect();
            if !missing.is_empty() && rng.gen_bool(0.4) {
                cs.insert(missing.choose(rng).expect("nonempty").to_string(), ChannelType::End);
            } else {
                let keys: Vec<String> = cs.keys().cloned().collect();
                let k = keys.choose(rng).expect("cases").clone();
                let w = widen_channel(rng, &cs[&k]);
                cs.insert(k, w);
            }
            ChannelType::Offer(cs)
        }
        ChannelType::Select(cs) => {
            let mut cs = cs.clone();
            let keys: Vec<String> = cs.keys().cloned().collect();
            if keys.len() > 1 && rng.gen_bool(0.4) {
                cs.remove(keys.choose(rng).expect("cases"));
            } else {
                let k = keys.choose(rng).expect("cases").clone();
                let w = widen_channel(rng, &cs[&k]);
                cs.insert(k, w);
            }
            ChannelType::Select(cs)
        }
    }
}

// ---------------------------------------------------------------------------
// Channel subtyping oracle: receive covariant, send contravariant, offer
// accepts more labels in the supertype, select fewer.

pub fn chan_sub(a: &ChannelType, b: &ChannelType) -> bool {
    chan_sub_in(a, b, &mut HashSet::new())
}

fn chan_sub_in(a: &ChannelType, b: &ChannelType, seen: &mut HashSet<(ChannelType, ChannelType)>) -> bool {
    if !seen.insert((a.clone(), b.clone())) {
        return true;
    }
    match (a.unfold(), b.unfold()) {
        (ChannelType::End, ChannelType::End) => true,
        (ChannelType::Recv(p, k), ChannelType::Recv(q, l)) => {
            payload_sub(&p, &q, seen) && chan_sub_in(&k, &l, seen)
        }
        (ChannelType::Send(p, k), ChannelType::Send(q, l)) => {
            payload_sub(&q, &p, seen) && chan_sub_in(&k, &l, seen)
        }
        (ChannelType::Offer(cs), ChannelType::Offer(ds)) => cs
            .iter()
            .all(|(l, c)| ds.get(l).is_some_and(|d| chan_sub_in(c, d, seen))),
        (ChannelType::Select(cs), ChannelType::Select(ds)) => ds
            .iter()
            .all(|(l, d)| cs.get(l).is_some_and(|c| chan_sub_in(c, d, seen))),
        _ => false,
    }
}

fn payload_sub(p: &Payload, q: &Payload, seen: &mut HashSet<(ChannelType, ChannelType)>) -> bool {
    match (p, q) {
        (Payload::Value(ValueType::Null), Payload::Value(ValueType::Null)) => true,
        (Payload::Value(ValueType::Enum(a)), Payload::Value(ValueType::Enum(b))) => a.is_subset(b),
        (Payload::Chan(c), Payload::Chan(d)) => chan_sub_in(c, d, seen),
        _ => false,
    }
}

// ---------------------------------------------------------------------------
// Consistency oracle.

/// Session states reachable from `s`, canonicalised.
pub fn reachable_states(s: &SessionType) -> Vec<SessionType> {
    let mut out: Vec<SessionType> = Vec::new();
    let mut todo = vec![s.canon()];
    while let Some(t) = todo.pop() {
        if out.contains(&t) {
            continue;
        }
        match t.unfold() {
            SessionType::Branch(es) => todo.extend(es.iter().map(|e| e.cont.canon())),
            SessionType::Variant(cs) => todo.extend(cs.values().map(SessionType::canon)),
            _ => {}
        }
        out.push(t);
    }
    out
}

/// Outcome of typing one method body from a field typing.
#[derive(Clone, Debug)]
struct BodyTyping {
    /// Ways to finish: field typings the judgement can end in, before
    /// subsumption to a candidate.
    finals: Vec<FieldTyping>,
}

/// Candidate final typings for `entry` from `f`, per the declarative rules:
/// subsumption on the result, uniform variants for `linkthis` results, and
/// joining a variant when an enumeration is expected.
fn body_finals(prog: &Program, class: &str, entry: &MethodEntry, f: &FieldTyping) -> Option<BodyTyping> {
    let decl = prog.class(class)?;
    let m = decl.method(&entry.name)?;
    let mut ck = Checker::new(prog);
    let env = Env::method(class, f.clone(), &m.param, entry.param.clone());
    let (t, env) = ck.b(&m.body, env).ok()?;
    let fo = env.cur_typing().ok()?;
    let mut finals = Vec::new();
    match (&entry.result, &t, &fo) {
        (ValueType::LinkThis, ValueType::LinkThis, FieldTyping::Variant(_)) => finals.push(fo.clone()),
        (ValueType::LinkThis, ValueType::Enum(ls), FieldTyping::Record(r)) => {
            finals.push(FieldTyping::Variant(ls.iter().map(|l| (l.clone(), r.clone())).collect()))
        }
        (ValueType::LinkThis, _, _) => {}
        (sig, ValueType::LinkThis, FieldTyping::Variant(v)) => {
            let ls: BTreeSet<String> = v.keys().cloned().collect();
            if subtype_value(&ValueType::Enum(ls), sig) {
                if let Ok(j) = join_records(v.values()) {
                    finals.push(FieldTyping::Record(j));
                }
            }
        }
        (sig, t, _) => {
            if subtype_value(t, sig) {
                finals.push(fo.clone());
            }
        }
    }
    Some(BodyTyping { finals })
}

/// Whether relation `rel` (indices into `pairs`) is a C-consistency relation.
fn is_consistency(
    pairs: &[(FieldTyping, SessionType)],
    rel: &[bool],
    finals: &BTreeMap<(usize, usize), Option<Vec<FieldTyping>>>,
) -> bool {
    (0..pairs.len()).all(|i| !rel[i] || clauses_hold(pairs, rel, finals, i))
}

/// The two clauses of the definition for pair `i`, relative to `rel`.
fn clauses_hold(
    pairs: &[(FieldTyping, SessionType)],
    rel: &[bool],
    finals: &BTreeMap<(usize, usize), Option<Vec<FieldTyping>>>,
    i: usize,
) -> bool {
    let (f, s) = &pairs[i];
    match s.unfold() {
        SessionType::Branch(es) => {
            if f.is_variant() {
                return false;
            }
            es.iter().enumerate().all(|(k, e)| {
                let Some(Some(fin)) = finals.get(&(i, k)) else { return false };
                let cont = e.cont.canon();
                pairs.iter().enumerate().any(|(j, (g, t))| {
                    rel[j] && *t == cont && fin.iter().any(|fo| subtype_field(fo, g))
                })
            })
        }
        SessionType::Variant(cs) => {
            let FieldTyping::Variant(fs) = f else { return false };
            fs.iter().all(|(l, r)| {
                let Some(sl) = cs.get(l) else { return false };
                let sl = sl.canon();
                let fl = FieldTyping::Record(r.clone());
                pairs.iter().enumerate().any(|(j, (g, t))| rel[j] && *t == sl && *g == fl)
            })
        }
        _ => false,
    }
}

/// Candidate field typings for a class: closure of the all-Null typing under
/// method bodies, plus the given extra seeds.
pub fn candidate_typings(prog: &Program, class: &str, seeds: &[FieldTyping], limit: usize) -> Vec<FieldTyping> {
    let decl = prog.class(class).expect("class");
    let states = reachable_states(&decl.session);
    let mut out: Vec<FieldTyping> = vec![decl.null_typing().canon()];
    for s in seeds {
        let s = s.canon();
        if !out.contains(&s) {
            out.push(s);
        }
    }
    let mut i = 0;
    while i < out.len() && out.len() < limit {
        let f = out[i].clone();
        i += 1;
        let mut found = Vec::new();
        match &f {
            FieldTyping::Record(_) => {
                for s in &states {
                    if let SessionType::Branch(es) = s.unfold() {
                        for e in &es {
                            if let Some(bt) = body_finals(prog, class, e, &f) {
                                found.extend(bt.finals);
                            }
                        }
                    }
                }
            }
            FieldTyping::Variant(v) => found.extend(v.values().map(|r| FieldTyping::Record(r.clone()))),
        }
        for g in found {
            let g = g.canon();
            if !out.contains(&g) {
                out.push(g);
            }
        }
    }
    out
}

/// Verdict of exhaustive search: for each candidate pair, whether some
/// C-consistency relation over the candidate set contains it. Enumerates all
/// subsets when there are at most `max_exhaustive` pairs.
pub fn brute_force_consistency(
    prog: &Program,
    class: &str,
    typings: &[FieldTyping],
    max_exhaustive: usize,
) -> (Vec<(FieldTyping, SessionType)>, Vec<bool>) {
    let decl = prog.class(class).expect("class");
    let states = reachable_states(&decl.session);
    let pairs: Vec<(FieldTyping, SessionType)> = typings
        .iter()
        .flat_map(|f| states.iter().map(move |s| (f.clone(), s.clone())))
        .filter(|(f, s)| f.is_variant() == matches!(s.unfold(), SessionType::Variant(_)))
        .collect();
    let mut finals = BTreeMap::new();
    for (i, (f, s)) in pairs.iter().enumerate() {
        if let (SessionType::Branch(es), FieldTyping::Record(_)) = (s.unfold(), f) {
            for (k, e) in es.iter().enumerate() {
                finals.insert((i, k), body_finals(prog, class, e, f).map(|b| b.finals));
            }
        }
    }
    let n = pairs.len();
    let mut member = vec![false; n];
    if n <= max_exhaustive {
        for mask in 0u64..(1u64 << n) {
            let rel: Vec<bool> = (0..n).map(|i| mask & (1 << i) != 0).collect();
            if is_consistency(&pairs, &rel, &finals) {
                for i in 0..n {
                    member[i] |= rel[i];
                }
            }
        }
    } else {
        // The union of all relations is the largest one: drop violating
        // pairs until stable.
        member = vec![true; n];
        loop {
            let drop: Vec<usize> =
                (0..n).filter(|&i| member[i] && !clauses_hold(&pairs, &member, &finals, i)).collect();
            if drop.is_empty() {
                break;
            }
            for i in drop {
                member[i] = false;
            }
        }
    }
    (pairs, member)
}

/// Record type helper: `{T f, ...}`.
pub fn rec(fields: &[(&str, ValueType)]) -> FieldTyping {
    FieldTyping::Record(fields.iter().map(|(f, t)| (f.to_string(), t.clone())).collect::<Record>())
}

// ---------------------------------------------------------------------------
// Recording observer for replay tests.

/// Rule name and derived environment of thread 0 after each step.
pub struct Recorder<'p> {
    pub monitor: Monitor<'p>,
    pub steps: Vec<(String, Env)>,
}

impl<'p> Recorder<'p> {
    pub fn new(prog: &'p Program, init: &Configuration) -> Recorder<'p> {
        Recorder { monitor: Monitor::new(prog, init), steps: Vec::new() }
    }
}

impl Observer for Recorder<'_> {
    fn observe(&mut self, n: usize, before: &Configuration, step: &Step, after: &Configuration) {
        self.monitor.observe(n, before, step, after);
        if step.threads[0] == 0 {
            let env = self.monitor.gamma(after, 0).expect("environment derivable");
            let rule = match &step.event {
                Event::Swap { .. } => "Swap".to_string(),
                e => e.rule().to_string(),
            };
            self.steps.push((rule, env));
        }
    }
}

/// `o0`'s field types `f` and `g` in a recorded environment.
fn main_fields(env: &Env) -> Result<(ValueType, ValueType), String> {
    match &env.roots.get("o0") {
        Some(ValueType::Object(o)) => {
            let r = o.typing.record().ok_or("o0 has a variant typing")?;
            Ok((r["f"].clone(), r["g"].clone()))
        }
        other => Err(format!("o0 is not open: {other:?}")),
    }
}

fn same_type(a: &ValueType, b: &ValueType) -> bool {
    match (a, b) {
        (ValueType::Session(x), ValueType::Session(y)) => equivalent(x, y),
        (ValueType::Object(x), ValueType::Object(y)) => {
            x.class == y.class && equivalent_field(&x.typing, &y.typing)
        }
        _ => a == b,
    }
}

/// Replays `small/link_variant.mst` under the monitor and compares the
/// environment after each of the seven reference states with the expected
/// path and field types. Returns the number of states compared.
pub fn figure_replay() -> Result<usize, String> {
    let p = load("small/link_variant.mst");
    let inner = p.class("Inner").ok_or("no Inner")?.session.clone();
    let init = initial_config(&p).map_err(|e| e.to_string())?;
    let mut recorder = Recorder::new(&p, &init);
    let r = run(&p, &RunOptions { steps: 1000, seed: None }, &mut recorder).map_err(|e| e.to_string())?;
    if r.outcome != Outcome::AllTerminated {
        return Err(format!("outcome {:?}", r.outcome));
    }
    if let Some(v) = recorder.monitor.violations.first() {
        return Err(v.to_string());
    }
    let s_a = parse_session_type("{Null n(): {}}").expect("type");
    let variant = parse_session_type("<A: {Null n(): {}}, B: {}>").expect("type");
    let obj = |x: ValueType| {
        ValueType::Object(Box::new(ObjectInternal { class: "Inner".into(), typing: rec(&[("x", x)]) }))
    };
    let sess = ValueType::Session;
    let expected: [(usize, &str, &[&str], ValueType, ValueType); 7] = [
        (4, "Seq", &[], sess(inner), ValueType::Null),
        (5, "Call", &["f"], obj(ValueType::Null), ValueType::Null),
        (8, "Seq", &["f"], obj(mst::syntax::enum_of(["A"])), ValueType::Null),
        (9, "Return", &[], sess(s_a.clone()), ValueType::Null),
        (11, "Seq", &[], sess(variant), ValueType::Link("f".into())),
        (12, "Swap", &[], sess(s_a.clone()), ValueType::Null),
        (13, "Switch", &[], sess(s_a), ValueType::Null),
    ];
    for (n, rule, path, f, g) in &expected {
        let (got_rule, env) = recorder.steps.get(n - 1).ok_or(format!("run too short for step {n}"))?;
        if got_rule != rule {
            return Err(format!("step {n}: rule {got_rule}, expected {rule}"));
        }
        if env.path != *path {
            return Err(format!("step {n}: path {:?}, expected {path:?}", env.path));
        }
        let (gf, gg) = main_fields(env)?;
        if !same_type(&gf, f) || !same_type(&gg, g) {
            return Err(format!("step {n}: f {gf}, g {gg}; expected f {f}, g {g}"));
        }
    }
    let (last_f, _) = main_fields(&recorder.steps.last().ok_or("no steps")?.1)?;
    if !same_type(&last_f, &ValueType::Session(SessionType::end())) {
        return Err(format!("final f {last_f}"));
    }
    Ok(expected.len())
}
