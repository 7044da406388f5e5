//! Heaps, paths and configurations of the operational semantics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::syntax::{Expr, Polarity};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoreError {
    #[error("path {0} is undefined")]
    PathUndefined(String),
    #[error("object {obj} has no field {field}")]
    NoSuchField { obj: String, field: String },
    #[error("{0} is not a root of the heap")]
    NotARoot(String),
    #[error("heap is not complete: {0} is referenced but missing")]
    IncompleteHeap(String),
    #[error("renaming is not injective: {0} and {1} collide")]
    NotInjective(String, String),
    #[error("object {0} already present in heap")]
    DuplicateObject(String),
}

/// Runtime values stored in fields.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Null,
    Label(String),
    Obj(String),
    Endpoint(String, Polarity),
    Access(String),
}

impl Value {
    pub fn to_expr(&self) -> Expr {
        match self {
            Value::Null => Expr::Null,
            Value::Label(l) => Expr::Label(l.clone()),
            Value::Obj(o) => Expr::ObjId(o.clone()),
            Value::Endpoint(c, p) => Expr::Endpoint(c.clone(), *p),
            Value::Access(n) => Expr::AccessName(n.clone()),
        }
    }

    pub fn from_expr(e: &Expr) -> Option<Value> {
        Some(match e {
            Expr::Null => Value::Null,
            Expr::Label(l) => Value::Label(l.clone()),
            Expr::ObjId(o) => Value::Obj(o.clone()),
            Expr::Endpoint(c, p) => Value::Endpoint(c.clone(), *p),
            Expr::AccessName(n) => Value::Access(n.clone()),
            _ => return None,
        })
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => write!(f, "null"),
            Value::Label(l) => write!(f, "{l}"),
            Value::Obj(o) => write!(f, "{o}"),
            Value::Endpoint(c, p) => write!(f, "{c}{}", p.sign()),
            Value::Access(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObjectRecord {
    pub class: String,
    pub fields: BTreeMap<String, Value>,
}

impl ObjectRecord {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(class: &str, fields: I) -> Self {
        ObjectRecord {
            class: class.to_string(),
            fields: fields.into_iter().map(|f| (f.into(), Value::Null)).collect(),
        }
    }
}

/// Current-object path `o.f1...fk`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Path {
    pub root: String,
    pub fields: Vec<String>,
}

impl Path {
    pub fn root(o: &str) -> Path {
        Path { root: o.to_string(), fields: Vec::new() }
    }

    pub fn child(&self, f: &str) -> Path {
        let mut p = self.clone();
        p.fields.push(f.to_string());
        p
    }

    /// Drop the last field (R-Return).
    pub fn parent(&self) -> Option<Path> {
        let mut p = self.clone();
        p.fields.pop()?;
        Some(p)
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.root)?;
        for x in &self.fields {
            write!(f, ".{x}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Heap {
    pub objects: BTreeMap<String, ObjectRecord>,
}

impl Heap {
    pub fn new() -> Heap {
        Heap::default()
    }

    /// `h :: (o = R)`, defined only when `o` is fresh.
    pub fn add(&mut self, o: &str, r: ObjectRecord) -> Result<(), CoreError> {
        if self.objects.contains_key(o) {
            return Err(CoreError::DuplicateObject(o.to_string()));
        }
        self.objects.insert(o.to_string(), r);
        Ok(())
    }

    pub fn get(&self, o: &str) -> Option<&ObjectRecord> {
        self.objects.get(o)
    }

    /// Identifier of the object reached by `r`.
    pub fn resolve_id(&self, r: &Path) -> Result<String, CoreError> {
        let undefined = || CoreError::PathUndefined(r.to_string());
        let mut cur = r.root.clone();
        self.objects.get(&cur).ok_or_else(undefined)?;
        for f in &r.fields {
            let rec = self.objects.get(&cur).ok_or_else(undefined)?;
            match rec.fields.get(f) {
                Some(Value::Obj(o)) if self.objects.contains_key(o) => cur = o.clone(),
                _ => return Err(undefined()),
            }
        }
        Ok(cur)
    }

    pub fn resolve(&self, r: &Path) -> Result<&ObjectRecord, CoreError> {
        let id = self.resolve_id(r)?;
        Ok(&self.objects[&id])
    }

    pub fn read(&self, r: &Path, f: &str) -> Result<&Value, CoreError> {
        let id = self.resolve_id(r)?;
        self.objects[&id].fields.get(f).ok_or(CoreError::NoSuchField {
            obj: id.clone(),
            field: f.to_string(),
        })
    }

    /// `h{r.f = v}`.
    pub fn write(&self, r: &Path, f: &str, v: Value) -> Result<Heap, CoreError> {
        let mut h = self.clone();
        h.write_in_place(r, f, v)?;
        Ok(h)
    }

    pub fn write_in_place(&mut self, r: &Path, f: &str, v: Value) -> Result<Value, CoreError> {
        let id = self.resolve_id(r)?;
        let rec = self.objects.get_mut(&id).expect("resolved");
        match rec.fields.get_mut(f) {
            Some(slot) => Ok(std::mem::replace(slot, v)),
            None => Err(CoreError::NoSuchField { obj: id, field: f.to_string() }),
        }
    }

    pub fn children(&self, o: &str) -> BTreeSet<String> {
        self.objects
            .get(o)
            .map(|r| {
                r.fields
                    .values()
                    .filter_map(|v| match v {
                        Value::Obj(c) => Some(c.clone()),
                        _ => None,
                    })
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Objects that are nobody's child.
    pub fn roots(&self) -> BTreeSet<String> {
        let mut all: BTreeSet<String> = self.objects.keys().cloned().collect();
        for o in self.objects.keys() {
            for c in self.children(o) {
                all.remove(&c);
            }
        }
        all
    }

    pub fn is_complete(&self) -> bool {
        self.objects
            .keys()
            .all(|o| self.children(o).iter().all(|c| self.objects.contains_key(c)))
    }

    /// `o` together with everything reachable from it.
    pub fn desc(&self, o: &str) -> BTreeSet<String> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![o.to_string()];
        while let Some(x) = stack.pop() {
            if seen.insert(x.clone()) {
                stack.extend(self.children(&x));
            }
        }
        seen
    }

    /// Descendants in first-visit (depth-first, field order) order.
    pub fn desc_ordered(&self, o: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        self.visit(o, &mut seen, &mut out);
        out
    }

    fn visit(&self, o: &str, seen: &mut BTreeSet<String>, out: &mut Vec<String>) {
        if !seen.insert(o.to_string()) {
            return;
        }
        out.push(o.to_string());
        if let Some(r) = self.objects.get(o) {
            for v in r.fields.values() {
                if let Value::Obj(c) = v {
                    self.visit(c, seen, out);
                }
            }
        }
    }

    /// `(h↓o, h↑o)`.
    pub fn split(&self, o: &str) -> Result<(Heap, Heap), CoreError> {
        if !self.is_complete() {
            let missing = self
                .objects
                .keys()
                .flat_map(|x| self.children(x))
                .find(|c| !self.objects.contains_key(c))
                .unwrap_or_default();
            return Err(CoreError::IncompleteHeap(missing));
        }
        if !self.objects.contains_key(o) || !self.roots().contains(o) {
            return Err(CoreError::NotARoot(o.to_string()));
        }
        let d = self.desc(o);
        let mut down = Heap::new();
        let mut up = Heap::new();
        for (k, r) in &self.objects {
            if d.contains(k) {
                down.objects.insert(k.clone(), r.clone());
            } else {
                up.objects.insert(k.clone(), r.clone());
            }
        }
        Ok((down, up))
    }

    /// `h + h'` for heaps with disjoint domains.
    pub fn union(&self, other: &Heap) -> Result<Heap, CoreError> {
        let mut h = self.clone();
        for (k, r) in &other.objects {
            h.add(k, r.clone())?;
        }
        Ok(h)
    }

    /// `φ(h)`: rename object identifiers everywhere, including inside records.
    pub fn rename(&self, phi: &BTreeMap<String, String>) -> Result<Heap, CoreError> {
        let mut image: BTreeMap<&String, &String> = BTreeMap::new();
        for o in self.objects.keys() {
            let t = phi.get(o).unwrap_or(o);
            if let Some(prev) = image.insert(t, o) {
                return Err(CoreError::NotInjective(prev.clone(), o.clone()));
            }
        }
        let map = |x: &String| phi.get(x).cloned().unwrap_or_else(|| x.clone());
        let mut h = Heap::new();
        for (k, r) in &self.objects {
            let fields = r
                .fields
                .iter()
                .map(|(f, v)| {
                    let v = match v {
                        Value::Obj(c) => Value::Obj(map(c)),
                        other => other.clone(),
                    };
                    (f.clone(), v)
                })
                .collect();
            h.objects.insert(map(k), ObjectRecord { class: r.class.clone(), fields });
        }
        Ok(h)
    }

    /// Endpoints stored anywhere in the heap.
    pub fn endpoints(&self) -> Vec<(String, Polarity)> {
        let mut out = Vec::new();
        for r in self.objects.values() {
            for v in r.fields.values() {
                if let Value::Endpoint(c, p) = v {
                    out.push((c.clone(), *p));
                }
            }
        }
        out
    }
}

impl fmt::Display for Heap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, (o, r)) in self.objects.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{o}={}(", r.class)?;
            for (j, (fld, v)) in r.fields.iter().enumerate() {
                if j > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{fld}={v}")?;
            }
            write!(f, ")")?;
        }
        write!(f, "}}")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Thread {
    pub heap: Heap,
    pub path: Path,
    pub expr: Expr,
}

/// A flat parallel composition of threads under one ν-binder set.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Configuration {
    pub threads: Vec<Thread>,
    pub bound_channels: BTreeSet<String>,
    pub next_obj: usize,
    pub next_chan: usize,
}

impl Configuration {
    pub fn fresh_obj(&mut self) -> String {
        let o = format!("o{}", self.next_obj);
        self.next_obj += 1;
        o
    }

    pub fn fresh_chan(&mut self) -> String {
        let c = format!("c{}", self.next_chan);
        self.next_chan += 1;
        self.bound_channels.insert(c.clone());
        c
    }
}
