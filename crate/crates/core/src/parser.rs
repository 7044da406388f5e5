//! Parser for `.mst` source files (Style 2: signatures live in session types).
//!
//! Parsing happens in two passes. The first builds raw declarations with
//! unresolved type names; the second resolves names, folds mutually
//! recursive state definitions into μ-types and resolves bare identifiers
//! in method bodies to parameters, field reads or access names.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::channel::{translate_access, translate_channel};
use crate::syntax::{
    Annotation, ChannelType, ClassDecl, Expr, FieldTyping, GlobalType, MethodDecl, MethodEntry,
    Payload, Program, SessionType, ValueType,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at {line}:{col}: {msg}")]
    SyntaxError { line: usize, col: usize, msg: String },
    #[error("unbound state name {0}")]
    UnboundStateName(String),
    #[error("type {0} is not contractive")]
    NonContractiveType(String),
    #[error("class {0} declared twice")]
    DuplicateClass(String),
    #[error("name {0} declared twice")]
    DuplicateName(String),
    #[error("unbound identifier {name} in method {method}")]
    UnboundName { name: String, method: String },
    #[error("class {class} has no field {field}")]
    UnknownField { class: String, field: String },
    #[error("{0}")]
    Malformed(String),
}

type PResult<T> = Result<T, ParseError>;

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Sym(&'static str),
    Eof,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

const SYMBOLS: &[&str] = &[
    "<->", "{", "}", "(", ")", "<", ">", ":", ",", ";", ".", "=", "!", "?", "&", "+",
];

fn lex(text: &str) -> PResult<Vec<Token>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let advance = |i: &mut usize, line: &mut usize, col: &mut usize, c: char| {
        *i += 1;
        if c == '\n' {
            *line += 1;
            *col = 1;
        } else {
            *col += 1;
        }
    };
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            advance(&mut i, &mut line, &mut col, c);
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                { let ch = chars[i]; advance(&mut i, &mut line, &mut col, ch); }
            }
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'*') {
            let (l0, c0) = (line, col);
            advance(&mut i, &mut line, &mut col, '/');
            advance(&mut i, &mut line, &mut col, '*');
            loop {
                if i + 1 >= chars.len() {
                    return Err(ParseError::SyntaxError {
                        line: l0,
                        col: c0,
                        msg: "unterminated comment".into(),
                    });
                }
                if chars[i] == '*' && chars[i + 1] == '/' {
                    advance(&mut i, &mut line, &mut col, '*');
                    advance(&mut i, &mut line, &mut col, '/');
                    break;
                }
                { let ch = chars[i]; advance(&mut i, &mut line, &mut col, ch); }
            }
            continue;
        }
        let (tl, tc) = (line, col);
        if c.is_alphabetic() || c == '_' {
            let mut s = String::new();
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                s.push(chars[i]);
                { let ch = chars[i]; advance(&mut i, &mut line, &mut col, ch); }
            }
            out.push(Token { tok: Tok::Ident(s), line: tl, col: tc });
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 3)].iter().collect();
        match SYMBOLS.iter().find(|s| rest.starts_with(**s)) {
            Some(s) => {
                for ch in s.chars() {
                    advance(&mut i, &mut line, &mut col, ch);
                }
                out.push(Token { tok: Tok::Sym(s), line: tl, col: tc });
            }
            None => {
                return Err(ParseError::SyntaxError {
                    line: tl,
                    col: tc,
                    msg: format!("unexpected character {c:?}"),
                })
            }
        }
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}

// ---------------------------------------------------------------------------
// Raw syntax produced by the first pass.

#[derive(Clone, Debug)]
enum RawS {
    Branch(Vec<RawSig>),
    Variant(Vec<(String, RawS)>),
    Rec(String, Box<RawS>),
    /// Bare or qualified name (`Init`, `File.Init`).
    Name(String, Option<String>),
    Access(RawC),
    Chan(RawC),
}

#[derive(Clone, Debug)]
struct RawSig {
    name: String,
    param: RawV,
    result: RawV,
    cont: RawS,
}

#[derive(Clone, Debug)]
enum RawV {
    Null,
    LinkThis,
    Enum(Vec<String>),
    S(RawS),
}

#[derive(Clone, Debug)]
enum RawC {
    End,
    Recv(Box<RawP>, Box<RawC>),
    Send(Box<RawP>, Box<RawC>),
    Offer(Vec<(String, RawC)>),
    Select(Vec<(String, RawC)>),
    Rec(String, Box<RawC>),
    Name(String),
}

#[derive(Clone, Debug)]
enum RawP {
    V(RawV),
    Chan(RawC),
}

#[derive(Clone, Debug)]
struct RawMethod {
    name: String,
    param: String,
    body: Expr,
    annotation: Option<(Vec<(RawV, String)>, Vec<(RawV, String)>, RawV, RawV)>,
    line: usize,
}

#[derive(Clone, Debug)]
struct RawClass {
    name: String,
    session: RawS,
    states: Vec<(String, RawS)>,
    fields: Vec<String>,
    methods: Vec<RawMethod>,
}

#[derive(Default)]
struct RawProgram {
    classes: Vec<RawClass>,
    types: Vec<(String, RawV)>,
    channels: Vec<(String, RawC)>,
    access: Vec<(String, RawC)>,
    main: Option<(String, String)>,
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

fn is_upper(s: &str) -> bool {
    s.chars().next().is_some_and(|c| c.is_uppercase())
}

impl Parser {
    fn new(text: &str) -> PResult<Parser> {
        Ok(Parser { toks: lex(text)?, pos: 0 })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn line(&self) -> usize {
        self.toks[self.pos].line
    }

    fn err<T>(&self, msg: impl Into<String>) -> PResult<T> {
        let t = &self.toks[self.pos];
        let found = match &t.tok {
            Tok::Ident(s) => s.clone(),
            Tok::Sym(s) => s.to_string(),
            Tok::Eof => "end of input".into(),
        };
        Err(ParseError::SyntaxError {
            line: t.line,
            col: t.col,
            msg: format!("{} (found {found})", msg.into()),
        })
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    fn is_sym_at(&self, k: usize, s: &str) -> bool {
        matches!(self.peek_at(k), Tok::Sym(x) if *x == s)
    }

    fn is_kw(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Ident(x) if x == s)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, s: &str) -> bool {
        if self.is_kw(s) {
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
            self.err(format!("expected `{s}`"))
        }
    }

    fn expect_kw(&mut self, s: &str) -> PResult<()> {
        if self.eat_kw(s) {
            Ok(())
        } else {
            self.err(format!("expected `{s}`"))
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            _ => self.err("expected identifier"),
        }
    }

    fn peek_ident(&self) -> Option<&str> {
        match self.peek() {
            Tok::Ident(s) => Some(s),
            _ => None,
        }
    }

    fn ident_at(&self, k: usize) -> Option<&str> {
        match self.peek_at(k) {
            Tok::Ident(s) => Some(s),
            _ => None,
        }
    }

    fn at_eof(&self) -> bool {
        matches!(self.peek(), Tok::Eof)
    }

    // -- top level ----------------------------------------------------------

    fn program(&mut self) -> PResult<RawProgram> {
        let mut p = RawProgram::default();
        while !self.at_eof() {
            if self.eat_kw("class") {
                p.classes.push(self.class()?);
            } else if self.eat_kw("access") {
                self.expect_sym("<")?;
                let c = self.chtype()?;
                self.expect_sym(">")?;
                let n = self.ident()?;
                self.expect_sym(";")?;
                p.access.push((n, c));
            } else if self.eat_kw("channel") {
                let n = self.ident()?;
                self.expect_sym("=")?;
                let c = self.chtype()?;
                self.expect_sym(";")?;
                p.channels.push((n, c));
            } else if self.eat_kw("type") {
                let n = self.ident()?;
                self.expect_sym("=")?;
                let t = self.vtype()?;
                let states = self.where_clause()?;
                self.expect_sym(";")?;
                p.types.push((n, t));
                for (s, body) in states {
                    p.types.push((s, RawV::S(body)));
                }
            } else if self.eat_kw("main") {
                let c = self.ident()?;
                self.expect_sym(".")?;
                let m = self.ident()?;
                self.expect_sym(";")?;
                p.main = Some((c, m));
            } else {
                return self.err("expected `class`, `access`, `channel`, `type` or `main`");
            }
        }
        Ok(p)
    }

    fn where_clause(&mut self) -> PResult<Vec<(String, RawS)>> {
        let mut out = Vec::new();
        if !self.eat_kw("where") {
            return Ok(out);
        }
        loop {
            let n = self.ident()?;
            self.expect_sym("=")?;
            out.push((n, self.stype()?));
            let comma = self.is_sym(",") && self.ident_at(1).is_some() && self.is_sym_at(2, "=");
            if comma {
                self.bump();
                continue;
            }
            if self.peek_ident().is_some() && self.is_sym_at(1, "=") {
                continue;
            }
            break;
        }
        Ok(out)
    }

    fn class(&mut self) -> PResult<RawClass> {
        let name = self.ident()?;
        self.expect_sym("{")?;
        self.expect_kw("session")?;
        let session = self.stype()?;
        let states = self.where_clause()?;
        self.eat_sym(";");
        let mut fields = Vec::new();
        let mut methods = Vec::new();
        while !self.eat_sym("}") {
            if self.is_kw("fields") && !self.is_sym_at(1, "(") {
                self.bump();
                if !self.is_sym(";") {
                    fields.push(self.ident()?);
                    while self.eat_sym(",") {
                        fields.push(self.ident()?);
                    }
                }
                self.expect_sym(";")?;
            } else if self.is_kw("req") {
                methods.push(self.annotated_method()?);
            } else if self.peek_ident().is_some() && self.is_sym_at(1, "(") {
                methods.push(self.plain_method()?);
            } else if self.peek_ident().is_some() {
                fields.push(self.ident()?);
                while self.eat_sym(",") {
                    fields.push(self.ident()?);
                }
                self.expect_sym(";")?;
            } else {
                return self.err("expected field, method or `}`");
            }
        }
        Ok(RawClass { name, session, states, fields, methods })
    }

    fn plain_method(&mut self) -> PResult<RawMethod> {
        let line = self.line();
        let name = self.ident()?;
        self.expect_sym("(")?;
        let param = if self.is_sym(")") { "_".to_string() } else { self.ident()? };
        self.expect_sym(")")?;
        let body = self.block()?;
        Ok(RawMethod { name, param, body, annotation: None, line })
    }

    fn field_list(&mut self, stop_at_header: bool) -> PResult<Vec<(RawV, String)>> {
        let mut out = Vec::new();
        loop {
            if self.is_kw("ens") {
                break;
            }
            let save = self.pos;
            let t = self.vtype()?;
            let f = self.ident()?;
            if stop_at_header && self.is_sym("(") {
                self.pos = save;
                break;
            }
            out.push((t, f));
            if !self.eat_sym(",") {
                break;
            }
        }
        Ok(out)
    }

    fn annotated_method(&mut self) -> PResult<RawMethod> {
        self.expect_kw("req")?;
        let req = self.field_list(false)?;
        self.expect_kw("ens")?;
        let ens = self.field_list(true)?;
        let line = self.line();
        let result = self.vtype()?;
        let name = self.ident()?;
        self.expect_sym("(")?;
        let (ptype, param) = if self.is_sym(")") {
            (RawV::Null, "_".to_string())
        } else {
            (self.vtype()?, self.ident()?)
        };
        self.expect_sym(")")?;
        let body = self.block()?;
        Ok(RawMethod { name, param, body, annotation: Some((req, ens, result, ptype)), line })
    }

    // -- types --------------------------------------------------------------

    /// `{` starts an enumeration when followed by `Label ,` or `Label }`.
    fn brace_is_enum(&self) -> bool {
        self.is_sym("{")
            && self.ident_at(1).is_some()
            && (self.is_sym_at(2, ",") || self.is_sym_at(2, "}"))
    }

    fn vtype(&mut self) -> PResult<RawV> {
        if self.eat_kw("Null") {
            return Ok(RawV::Null);
        }
        if self.eat_kw("linkthis") {
            return Ok(RawV::LinkThis);
        }
        if self.brace_is_enum() {
            self.bump();
            let mut ls = vec![self.ident()?];
            while self.eat_sym(",") {
                ls.push(self.ident()?);
            }
            self.expect_sym("}")?;
            return Ok(RawV::Enum(ls));
        }
        Ok(RawV::S(self.stype()?))
    }

    fn stype(&mut self) -> PResult<RawS> {
        if self.eat_sym("{") {
            let mut sigs = Vec::new();
            if !self.eat_sym("}") {
                loop {
                    sigs.push(self.sig()?);
                    if self.eat_sym("}") {
                        break;
                    }
                    self.expect_sym(",")?;
                }
            }
            return Ok(RawS::Branch(sigs));
        }
        if self.is_sym("<") {
            self.bump();
            let variant = self.ident_at(0).is_some() && self.is_sym_at(1, ":");
            if variant {
                let mut cases = Vec::new();
                loop {
                    let l = self.ident()?;
                    self.expect_sym(":")?;
                    cases.push((l, self.stype()?));
                    if self.eat_sym(">") {
                        break;
                    }
                    self.expect_sym(",")?;
                }
                return Ok(RawS::Variant(cases));
            }
            let c = self.chtype()?;
            self.expect_sym(">")?;
            return Ok(RawS::Access(c));
        }
        if self.eat_kw("rec") {
            let x = self.ident()?;
            self.expect_sym(".")?;
            return Ok(RawS::Rec(x, Box::new(self.stype()?)));
        }
        if self.eat_kw("chan") {
            self.expect_sym("(")?;
            let c = self.chtype()?;
            self.expect_sym(")")?;
            return Ok(RawS::Chan(c));
        }
        if self.eat_kw("end") || self.eat_kw("End") {
            return Ok(RawS::Branch(Vec::new()));
        }
        let n = self.ident()?;
        if self.is_sym(".") && self.ident_at(1).is_some() && !self.is_sym_at(2, "(") {
            self.bump();
            let s = self.ident()?;
            return Ok(RawS::Name(n, Some(s)));
        }
        Ok(RawS::Name(n, None))
    }

    fn sig(&mut self) -> PResult<RawSig> {
        let result = self.vtype()?;
        let name = self.ident()?;
        self.expect_sym("(")?;
        let param = if self.is_sym(")") {
            RawV::Null
        } else {
            let t = self.vtype()?;
            // Optional parameter name, as in `open(String f)`.
            if self.peek_ident().is_some() {
                self.bump();
            }
            t
        };
        self.expect_sym(")")?;
        self.expect_sym(":")?;
        let cont = self.stype()?;
        Ok(RawSig { name, param, result, cont })
    }

    fn payload(&mut self) -> PResult<RawP> {
        if self.eat_kw("chan") {
            self.expect_sym("(")?;
            let c = self.chtype()?;
            self.expect_sym(")")?;
            return Ok(RawP::Chan(c));
        }
        // `Name.State.` is a qualified payload; `Name.` alone ends the payload.
        if self.peek_ident().is_some()
            && !matches!(self.peek_ident(), Some("Null" | "linkthis" | "rec" | "end" | "End"))
        {
            let n = self.ident()?;
            if self.is_sym(".") && self.ident_at(1).is_some() && self.is_sym_at(2, ".") {
                self.bump();
                let s = self.ident()?;
                return Ok(RawP::V(RawV::S(RawS::Name(n, Some(s)))));
            }
            return Ok(RawP::V(RawV::S(RawS::Name(n, None))));
        }
        Ok(RawP::V(self.vtype()?))
    }

    fn chcases(&mut self) -> PResult<Vec<(String, RawC)>> {
        self.expect_sym("{")?;
        let mut cases = Vec::new();
        loop {
            let l = self.ident()?;
            self.expect_sym(":")?;
            cases.push((l, self.chtype()?));
            if self.eat_sym("}") {
                break;
            }
            self.expect_sym(",")?;
        }
        Ok(cases)
    }

    fn chtype(&mut self) -> PResult<RawC> {
        if self.eat_kw("End") || self.eat_kw("end") {
            return Ok(RawC::End);
        }
        if self.eat_sym("?") {
            let p = self.payload()?;
            self.expect_sym(".")?;
            return Ok(RawC::Recv(Box::new(p), Box::new(self.chtype()?)));
        }
        if self.eat_sym("!") {
            let p = self.payload()?;
            self.expect_sym(".")?;
            return Ok(RawC::Send(Box::new(p), Box::new(self.chtype()?)));
        }
        if self.eat_sym("&") {
            return Ok(RawC::Offer(self.chcases()?));
        }
        if self.eat_sym("+") {
            return Ok(RawC::Select(self.chcases()?));
        }
        if self.eat_kw("rec") {
            let x = self.ident()?;
            self.expect_sym(".")?;
            return Ok(RawC::Rec(x, Box::new(self.chtype()?)));
        }
        if self.eat_sym("(") {
            let c = self.chtype()?;
            self.expect_sym(")")?;
            return Ok(c);
        }
        Ok(RawC::Name(self.ident()?))
    }

    // -- expressions --------------------------------------------------------

    fn block(&mut self) -> PResult<Expr> {
        self.expect_sym("{")?;
        let e = self.seq(&|p: &Parser| p.is_sym("}"))?;
        self.expect_sym("}")?;
        Ok(e)
    }

    /// Statements separated by `;` until `stop` holds; empty means `null`.
    fn seq(&mut self, stop: &dyn Fn(&Parser) -> bool) -> PResult<Expr> {
        let mut items = Vec::new();
        while !stop(self) {
            items.push(self.stmt()?);
            if !self.eat_sym(";") {
                break;
            }
        }
        if !stop(self) {
            return self.err("expected `;`");
        }
        let mut it = items.into_iter().rev();
        let last = it.next().unwrap_or(Expr::Null);
        Ok(it.fold(last, |acc, e| Expr::seq(e, acc)))
    }

    fn args(&mut self) -> PResult<Expr> {
        self.expect_sym("(")?;
        let e = self.seq(&|p: &Parser| p.is_sym(")"))?;
        self.expect_sym(")")?;
        Ok(e)
    }

    fn case_end(p: &Parser) -> bool {
        p.is_sym("}")
            || p.is_kw("case")
            || (p.ident_at(0).is_some_and(is_upper) && p.is_sym_at(1, ":"))
    }

    fn stmt(&mut self) -> PResult<Expr> {
        if self.eat_sym("(") {
            let e = self.seq(&|p: &Parser| p.is_sym(")"))?;
            self.expect_sym(")")?;
            return Ok(e);
        }
        let Some(id) = self.peek_ident().map(str::to_string) else {
            return self.err("expected expression");
        };
        match id.as_str() {
            "null" => {
                self.bump();
                return Ok(Expr::Null);
            }
            "new" => {
                self.bump();
                let c = self.ident()?;
                self.expect_sym("(")?;
                self.expect_sym(")")?;
                return Ok(Expr::New(c));
            }
            "spawn" => {
                self.bump();
                let c = self.ident()?;
                self.expect_sym(".")?;
                let m = self.ident()?;
                let e = self.args()?;
                return Ok(Expr::Spawn(c, m, Box::new(e)));
            }
            "while" => {
                self.bump();
                let cond = self.args()?;
                let body = if self.is_sym("{") { self.block()? } else { self.stmt()? };
                return Ok(Expr::While(Box::new(cond), Box::new(body)));
            }
            "switch" => {
                self.bump();
                let scrut = self.args()?;
                self.expect_sym("{")?;
                let mut cases = BTreeMap::new();
                while !self.eat_sym("}") {
                    self.eat_kw("case");
                    let l = self.ident()?;
                    self.expect_sym(":")?;
                    let body = self.seq(&Parser::case_end)?;
                    if cases.insert(l.clone(), body).is_some() {
                        return self.err(format!("duplicate case {l}"));
                    }
                }
                return Ok(Expr::Switch(Box::new(scrut), cases));
            }
            "return" => {
                self.bump();
                let e = self.args()?;
                return Ok(Expr::Return(Box::new(e)));
            }
            _ => {}
        }
        self.bump();
        if is_upper(&id) {
            return Ok(Expr::Label(id));
        }
        if self.eat_sym("<->") {
            let e = self.stmt()?;
            return Ok(Expr::swap(&id, e));
        }
        if self.eat_sym("=") {
            let e = self.stmt()?;
            return Ok(Expr::assign(&id, e));
        }
        if self.is_sym(".") {
            self.bump();
            let m = self.ident()?;
            let e = if self.is_sym("(") { self.args()? } else { return self.err("expected `(`") };
            return Ok(Expr::call(&id, &m, e));
        }
        if self.is_sym("(") {
            let e = self.args()?;
            return Ok(Expr::SelfCall(id, Box::new(e)));
        }
        Ok(Expr::Var(id))
    }
}

// ---------------------------------------------------------------------------
// Second pass: name resolution.

/// Where a bare state name is looked up.
#[derive(Clone, Copy)]
enum Scope<'a> {
    Global,
    Class(&'a str),
}

struct Resolver<'a> {
    raw: &'a RawProgram,
    /// Definitions currently being expanded: key to generated variable.
    stack: Vec<(String, String)>,
    used: BTreeSet<String>,
    chan_stack: Vec<(String, String)>,
    chan_used: BTreeSet<String>,
}

enum Def<'a> {
    State(&'a str, &'a RawS),
    Session(&'a RawS),
    Value(&'a RawV),
}

impl<'a> Resolver<'a> {
    fn class(&self, name: &str) -> Option<&'a RawClass> {
        self.raw.classes.iter().find(|c| c.name == name)
    }

    fn lookup(&self, scope: Scope<'a>, n: &str, q: Option<&str>) -> PResult<(String, Def<'a>)> {
        if let Some(s) = q {
            let c = self.class(n).ok_or_else(|| ParseError::UnboundStateName(format!("{n}.{s}")))?;
            let (_, body) = c
                .states
                .iter()
                .find(|(x, _)| x == s)
                .ok_or_else(|| ParseError::UnboundStateName(format!("{n}.{s}")))?;
            return Ok((format!("{n}.{s}"), Def::State(&c.name, body)));
        }
        if let Scope::Class(c) = scope {
            let cls = self.class(c).expect("scope class exists");
            if let Some((_, body)) = cls.states.iter().find(|(x, _)| x == n) {
                return Ok((format!("{c}.{n}"), Def::State(&cls.name, body)));
            }
        }
        if let Some((_, t)) = self.raw.types.iter().find(|(x, _)| x == n) {
            return Ok(match t {
                RawV::S(s) => (format!("type {n}"), Def::Session(s)),
                v => (format!("type {n}"), Def::Value(v)),
            });
        }
        if let Some(c) = self.class(n) {
            return Ok((format!("{n}.session"), Def::State(&c.name, &c.session)));
        }
        Err(ParseError::UnboundStateName(n.to_string()))
    }

    fn fresh_var(&self, base: &str) -> String {
        let taken = |v: &str| self.stack.iter().any(|(_, x)| x == v);
        if !taken(base) {
            return base.to_string();
        }
        (1..).map(|i| format!("{base}{i}")).find(|v| !taken(v)).expect("infinite supply")
    }

    fn session(&mut self, scope: Scope<'a>, vars: &[String], s: &RawS) -> PResult<SessionType> {
        Ok(match s {
            RawS::Branch(sigs) => {
                let mut es = Vec::new();
                for sig in sigs {
                    es.push(MethodEntry {
                        name: sig.name.clone(),
                        param: self.value(scope, vars, &sig.param)?,
                        result: self.value(scope, vars, &sig.result)?,
                        cont: self.session(scope, vars, &sig.cont)?,
                    });
                }
                SessionType::Branch(es)
            }
            RawS::Variant(cases) => {
                let mut m = BTreeMap::new();
                for (l, c) in cases {
                    if m.insert(l.clone(), self.session(scope, vars, c)?).is_some() {
                        return Err(ParseError::Malformed(format!("duplicate variant label {l}")));
                    }
                }
                SessionType::Variant(m)
            }
            RawS::Rec(x, b) => {
                let mut v = vars.to_vec();
                v.push(x.clone());
                SessionType::Rec(x.clone(), Box::new(self.session(scope, &v, b)?))
            }
            RawS::Name(n, None) if vars.contains(n) => SessionType::Var(n.clone()),
            RawS::Name(n, q) => self.named(scope, n, q.as_deref())?,
            RawS::Access(c) => translate_access(&self.closed_channel(c)?),
            RawS::Chan(c) => translate_channel(&self.closed_channel(c)?),
        })
    }

    fn named(&mut self, scope: Scope<'a>, n: &str, q: Option<&str>) -> PResult<SessionType> {
        let (key, def) = self.lookup(scope, n, q)?;
        if let Some((_, v)) = self.stack.iter().find(|(k, _)| *k == key) {
            let v = v.clone();
            self.used.insert(v.clone());
            return Ok(SessionType::Var(v));
        }
        let (inner, body) = match def {
            Def::State(c, b) => (Scope::Class(c), b),
            Def::Session(b) => (Scope::Global, b),
            Def::Value(_) => {
                return Err(ParseError::Malformed(format!(
                    "{n} names a value type where a session type is expected"
                )))
            }
        };
        let var = self.fresh_var(q.unwrap_or(n));
        self.stack.push((key, var.clone()));
        let r = self.session(inner, &[], body);
        self.stack.pop();
        let body = r?;
        Ok(if self.used.remove(&var) { SessionType::Rec(var, Box::new(body)) } else { body })
    }

    fn value(&mut self, scope: Scope<'a>, vars: &[String], v: &RawV) -> PResult<ValueType> {
        Ok(match v {
            RawV::Null => ValueType::Null,
            RawV::LinkThis => ValueType::LinkThis,
            RawV::Enum(ls) => ValueType::Enum(ls.iter().cloned().collect()),
            RawV::S(RawS::Name(n, None)) if !vars.contains(n) => {
                if let Ok((_, Def::Value(v))) = self.lookup(scope, n, None) {
                    return self.value(Scope::Global, &[], v);
                }
                ValueType::Session(self.session(scope, vars, &RawS::Name(n.clone(), None))?)
            }
            RawV::S(s) => ValueType::Session(self.session(scope, vars, s)?),
        })
    }

    fn closed_channel(&mut self, c: &RawC) -> PResult<ChannelType> {
        let saved = std::mem::take(&mut self.chan_stack);
        let r = self.channel(&[], c);
        self.chan_stack = saved;
        r
    }

    fn channel(&mut self, vars: &[String], c: &RawC) -> PResult<ChannelType> {
        Ok(match c {
            RawC::End => ChannelType::End,
            RawC::Recv(p, k) => {
                ChannelType::Recv(Box::new(self.payload(vars, p)?), Box::new(self.channel(vars, k)?))
            }
            RawC::Send(p, k) => {
                ChannelType::Send(Box::new(self.payload(vars, p)?), Box::new(self.channel(vars, k)?))
            }
            RawC::Offer(cs) => ChannelType::Offer(self.chcases(vars, cs)?),
            RawC::Select(cs) => ChannelType::Select(self.chcases(vars, cs)?),
            RawC::Rec(x, b) => {
                let mut v = vars.to_vec();
                v.push(x.clone());
                ChannelType::Rec(x.clone(), Box::new(self.channel(&v, b)?))
            }
            RawC::Name(n) if vars.contains(n) => ChannelType::Var(n.clone()),
            RawC::Name(n) => {
                if let Some((_, v)) = self.chan_stack.iter().find(|(k, _)| k == n) {
                    let v = v.clone();
                    self.chan_used.insert(v.clone());
                    return Ok(ChannelType::Var(v));
                }
                let (_, body) = self
                    .raw
                    .channels
                    .iter()
                    .find(|(x, _)| x == n)
                    .ok_or_else(|| ParseError::UnboundStateName(n.clone()))?;
                self.chan_stack.push((n.clone(), n.clone()));
                let r = self.channel(&[], body);
                self.chan_stack.pop();
                let body = r?;
                if self.chan_used.remove(n) {
                    ChannelType::Rec(n.clone(), Box::new(body))
                } else {
                    body
                }
            }
        })
    }

    fn chcases(
        &mut self,
        vars: &[String],
        cs: &[(String, RawC)],
    ) -> PResult<BTreeMap<String, ChannelType>> {
        let mut m = BTreeMap::new();
        for (l, c) in cs {
            if m.insert(l.clone(), self.channel(vars, c)?).is_some() {
                return Err(ParseError::Malformed(format!("duplicate choice label {l}")));
            }
        }
        Ok(m)
    }

    fn payload(&mut self, vars: &[String], p: &RawP) -> PResult<Payload> {
        Ok(match p {
            RawP::Chan(c) => Payload::Chan(self.closed_channel_keep(vars, c)?),
            RawP::V(v) => {
                let saved = std::mem::take(&mut self.stack);
                let r = self.value(Scope::Global, &[], v);
                self.stack = saved;
                Payload::Value(r?)
            }
        })
    }

    /// Delegated channel payloads may refer to enclosing channel names.
    fn closed_channel_keep(&mut self, vars: &[String], c: &RawC) -> PResult<ChannelType> {
        let r = self.channel(vars, c)?;
        if r.free_vars().is_empty() {
            return Ok(r);
        }
        // A payload mentioning an enclosing binder is closed by re-resolving
        // it from the top, which unrolls the enclosing definition once.
        let saved = std::mem::take(&mut self.chan_stack);
        let r = self.channel(&[], c);
        self.chan_stack = saved;
        let r = r?;
        if r.free_vars().is_empty() {
            Ok(r)
        } else {
            Err(ParseError::Malformed(format!("channel payload {r} is not closed")))
        }
    }
}

/// Rewrite `E m(..): <l: S_l>_{l∈E}` to `linkthis m(..): <...>`: the examples
/// write the label set where the formal syntax uses `linkthis`.
fn normalize(s: &SessionType, env: &mut Vec<(String, SessionType)>) -> SessionType {
    match s {
        SessionType::Rec(x, b) => {
            env.push((x.clone(), s.clone()));
            let nb = normalize(b, env);
            env.pop();
            SessionType::Rec(x.clone(), Box::new(nb))
        }
        SessionType::Var(_) => s.clone(),
        SessionType::Variant(cs) => {
            SessionType::Variant(cs.iter().map(|(l, c)| (l.clone(), normalize(c, env))).collect())
        }
        SessionType::Branch(es) => SessionType::Branch(
            es.iter()
                .map(|e| {
                    let result = match &e.result {
                        ValueType::Enum(ls) => match top_shape(&e.cont, env) {
                            Some(SessionType::Variant(cs))
                                if cs.keys().cloned().collect::<BTreeSet<_>>() == *ls =>
                            {
                                ValueType::LinkThis
                            }
                            _ => e.result.clone(),
                        },
                        ValueType::Session(t) => ValueType::Session(normalize(t, &mut Vec::new())),
                        r => r.clone(),
                    };
                    let param = match &e.param {
                        ValueType::Session(t) => ValueType::Session(normalize(t, &mut Vec::new())),
                        p => p.clone(),
                    };
                    MethodEntry { name: e.name.clone(), param, result, cont: normalize(&e.cont, env) }
                })
                .collect(),
        ),
    }
}

/// Outermost constructor of `s`, following variables to their binders.
fn top_shape(s: &SessionType, env: &[(String, SessionType)]) -> Option<SessionType> {
    let mut cur = s.clone();
    for _ in 0..64 {
        match cur {
            SessionType::Rec(_, b) => cur = *b,
            SessionType::Var(ref x) => {
                cur = env.iter().rev().find(|(y, _)| y == x)?.1.clone();
            }
            other => return Some(other),
        }
    }
    None
}

fn finish_session(name: &str, s: SessionType) -> PResult<SessionType> {
    let s = normalize(&s, &mut Vec::new());
    if !s.is_contractive() {
        return Err(ParseError::NonContractiveType(name.to_string()));
    }
    if !s.is_closed() {
        return Err(ParseError::UnboundStateName(
            s.free_vars().into_iter().next().unwrap_or_default(),
        ));
    }
    Ok(s)
}

fn finish_channel(name: &str, c: ChannelType) -> PResult<ChannelType> {
    if !c.is_contractive() {
        return Err(ParseError::NonContractiveType(name.to_string()));
    }
    if !c.free_vars().is_empty() {
        return Err(ParseError::UnboundStateName(
            c.free_vars().into_iter().next().unwrap_or_default(),
        ));
    }
    Ok(c)
}

/// Parse a whole program.
pub fn parse_program(text: &str) -> PResult<Program> {
    let raw = Parser::new(text)?.program()?;
    resolve_program(&raw)
}

fn resolve_program(raw: &RawProgram) -> PResult<Program> {
    let mut seen = BTreeSet::new();
    for c in &raw.classes {
        if !seen.insert(c.name.clone()) {
            return Err(ParseError::DuplicateClass(c.name.clone()));
        }
    }
    let mut names = BTreeSet::new();
    for n in raw.types.iter().map(|(n, _)| n).chain(raw.channels.iter().map(|(n, _)| n)) {
        if !names.insert(n.clone()) {
            return Err(ParseError::DuplicateName(n.clone()));
        }
    }
    let mut r = Resolver {
        raw,
        stack: Vec::new(),
        used: BTreeSet::new(),
        chan_stack: Vec::new(),
        chan_used: BTreeSet::new(),
    };
    let mut prog = Program { main: raw.main.clone(), ..Program::default() };
    for (n, c) in &raw.channels {
        let t = finish_channel(n, r.channel(&[], &RawC::Name(n.clone()))?)?;
        let _ = c;
        prog.channels.insert(n.clone(), t);
    }
    for (n, c) in &raw.access {
        if prog.access_points.contains_key(n) {
            return Err(ParseError::DuplicateName(n.clone()));
        }
        let t = finish_channel(n, r.closed_channel(c)?)?;
        prog.access_points.insert(n.clone(), t);
    }
    for (n, t) in &raw.types {
        let g = match t {
            RawV::S(_) => GlobalType::Session(finish_session(
                n,
                r.session(Scope::Global, &[], &RawS::Name(n.clone(), None))?,
            )?),
            v => GlobalType::Value(r.value(Scope::Global, &[], v)?),
        };
        prog.types.insert(n.clone(), g);
    }
    for c in &raw.classes {
        let scope = Scope::Class(&c.name);
        let session =
            finish_session(&c.name, r.named(Scope::Global, &c.name, None)?)?;
        if !matches!(session.unfold(), SessionType::Branch(_)) {
            return Err(ParseError::Malformed(format!(
                "session of class {} must be a branch",
                c.name
            )));
        }
        let mut states = BTreeMap::new();
        for (s, _) in &c.states {
            let t = finish_session(s, r.named(scope, &c.name, Some(s))?)?;
            states.insert(s.clone(), t);
        }
        let mut fields = Vec::new();
        for f in &c.fields {
            if fields.contains(f) {
                return Err(ParseError::DuplicateName(format!("{}.{f}", c.name)));
            }
            fields.push(f.clone());
        }
        let mut methods = Vec::new();
        for m in &c.methods {
            if methods.iter().any(|x: &MethodDecl| x.name == m.name) {
                return Err(ParseError::DuplicateName(format!("{}.{}", c.name, m.name)));
            }
            let annotation = match &m.annotation {
                None => None,
                Some((req, ens, res, par)) => {
                    let mut typing = |list: &Vec<(RawV, String)>| -> PResult<FieldTyping> {
                        let mut rec: BTreeMap<String, ValueType> =
                            fields.iter().map(|f| (f.clone(), ValueType::Null)).collect();
                        for (t, f) in list {
                            if !rec.contains_key(f) {
                                return Err(ParseError::UnknownField {
                                    class: c.name.clone(),
                                    field: f.clone(),
                                });
                            }
                            rec.insert(f.clone(), finish_value(r.value(scope, &[], t)?)?);
                        }
                        Ok(FieldTyping::Record(rec))
                    };
                    let req = typing(req)?;
                    let ens = typing(ens)?;
                    Some(Annotation {
                        req,
                        ens,
                        result: finish_value(r.value(scope, &[], res)?)?,
                        param: finish_value(r.value(scope, &[], par)?)?,
                    })
                }
            };
            let body = resolve_expr(&m.body, &m.param, &fields, &prog.access_points, &m.name)?;
            methods.push(MethodDecl {
                name: m.name.clone(),
                param: m.param.clone(),
                body,
                annotation,
                line: m.line,
            });
        }
        prog.class_order.push(c.name.clone());
        prog.classes.insert(
            c.name.clone(),
            ClassDecl { name: c.name.clone(), session, fields, methods, states },
        );
    }
    Ok(prog)
}

fn finish_value(v: ValueType) -> PResult<ValueType> {
    Ok(match v {
        ValueType::Session(s) => ValueType::Session(finish_session("annotation", s)?),
        other => other,
    })
}

/// Bare identifiers: parameter, then field read (`f <-> null`), then access name.
fn resolve_expr(
    e: &Expr,
    param: &str,
    fields: &[String],
    access: &BTreeMap<String, ChannelType>,
    method: &str,
) -> PResult<Expr> {
    let go = |e: &Expr| resolve_expr(e, param, fields, access, method);
    let check_field = |f: &str| -> PResult<()> {
        if fields.iter().any(|x| x == f) {
            Ok(())
        } else {
            Err(ParseError::UnboundName { name: f.to_string(), method: method.to_string() })
        }
    };
    Ok(match e {
        Expr::Var(x) if x == param && x != "_" => Expr::Var(x.clone()),
        Expr::Var(x) if fields.contains(x) => Expr::swap(x, Expr::Null),
        Expr::Var(x) if access.contains_key(x) => Expr::AccessName(x.clone()),
        Expr::Var(x) => {
            return Err(ParseError::UnboundName { name: x.clone(), method: method.to_string() })
        }
        Expr::Swap(f, b) => {
            check_field(f)?;
            Expr::Swap(f.clone(), Box::new(go(b)?))
        }
        Expr::Call(f, m, b) => {
            check_field(f)?;
            Expr::Call(f.clone(), m.clone(), Box::new(go(b)?))
        }
        Expr::SelfCall(m, b) => Expr::SelfCall(m.clone(), Box::new(go(b)?)),
        Expr::Seq(a, b) => Expr::seq(go(a)?, go(b)?),
        Expr::Switch(s, cs) => {
            let mut m = BTreeMap::new();
            for (l, c) in cs {
                m.insert(l.clone(), go(c)?);
            }
            Expr::Switch(Box::new(go(s)?), m)
        }
        Expr::While(c, b) => Expr::While(Box::new(go(c)?), Box::new(go(b)?)),
        Expr::Spawn(c, m, b) => Expr::Spawn(c.clone(), m.clone(), Box::new(go(b)?)),
        Expr::Return(b) => Expr::Return(Box::new(go(b)?)),
        other => other.clone(),
    })
}

/// Parse a standalone channel type; names refer to recursion variables only.
pub fn parse_channel_type(text: &str) -> PResult<ChannelType> {
    parse_channel_type_in(text, &Program::default())
}

/// Parse a channel type whose names may refer to the program's channel declarations.
pub fn parse_channel_type_in(text: &str, prog: &Program) -> PResult<ChannelType> {
    let mut p = Parser::new(text)?;
    let raw = p.chtype()?;
    if !p.at_eof() {
        return p.err("trailing input after channel type");
    }
    let c = resolve_standalone_channel(&raw, prog, &[])?;
    finish_channel(text, c)
}

fn resolve_standalone_channel(c: &RawC, prog: &Program, vars: &[String]) -> PResult<ChannelType> {
    let go = |c: &RawC, v: &[String]| resolve_standalone_channel(c, prog, v);
    let cases = |cs: &[(String, RawC)], v: &[String]| -> PResult<BTreeMap<String, ChannelType>> {
        cs.iter().map(|(l, c)| Ok((l.clone(), go(c, v)?))).collect()
    };
    let payload = |p: &RawP, v: &[String]| -> PResult<Payload> {
        Ok(match p {
            RawP::Chan(c) => Payload::Chan(go(c, v)?),
            RawP::V(t) => Payload::Value(standalone_value(t, prog)?),
        })
    };
    Ok(match c {
        RawC::End => ChannelType::End,
        RawC::Recv(p, k) => ChannelType::Recv(Box::new(payload(p, vars)?), Box::new(go(k, vars)?)),
        RawC::Send(p, k) => ChannelType::Send(Box::new(payload(p, vars)?), Box::new(go(k, vars)?)),
        RawC::Offer(cs) => ChannelType::Offer(cases(cs, vars)?),
        RawC::Select(cs) => ChannelType::Select(cases(cs, vars)?),
        RawC::Rec(x, b) => {
            let mut v = vars.to_vec();
            v.push(x.clone());
            ChannelType::Rec(x.clone(), Box::new(go(b, &v)?))
        }
        RawC::Name(n) if vars.contains(n) => ChannelType::Var(n.clone()),
        RawC::Name(n) => prog
            .channels
            .get(n)
            .cloned()
            .ok_or_else(|| ParseError::UnboundStateName(n.clone()))?,
    })
}

fn standalone_value(v: &RawV, prog: &Program) -> PResult<ValueType> {
    Ok(match v {
        RawV::Null => ValueType::Null,
        RawV::LinkThis => ValueType::LinkThis,
        RawV::Enum(ls) => ValueType::Enum(ls.iter().cloned().collect()),
        RawV::S(s) => {
            if let RawS::Name(n, None) = s {
                if let Some(GlobalType::Value(t)) = prog.types.get(n) {
                    return Ok(t.clone());
                }
            }
            ValueType::Session(standalone_session(s, prog, &[])?)
        }
    })
}

fn standalone_session(s: &RawS, prog: &Program, vars: &[String]) -> PResult<SessionType> {
    Ok(match s {
        RawS::Branch(sigs) => SessionType::Branch(
            sigs.iter()
                .map(|g| {
                    Ok(MethodEntry {
                        name: g.name.clone(),
                        param: standalone_value_in(&g.param, prog, vars)?,
                        result: standalone_value_in(&g.result, prog, vars)?,
                        cont: standalone_session(&g.cont, prog, vars)?,
                    })
                })
                .collect::<PResult<_>>()?,
        ),
        RawS::Variant(cs) => SessionType::Variant(
            cs.iter()
                .map(|(l, c)| Ok((l.clone(), standalone_session(c, prog, vars)?)))
                .collect::<PResult<_>>()?,
        ),
        RawS::Rec(x, b) => {
            let mut v = vars.to_vec();
            v.push(x.clone());
            SessionType::Rec(x.clone(), Box::new(standalone_session(b, prog, &v)?))
        }
        RawS::Name(n, None) if vars.contains(n) => SessionType::Var(n.clone()),
        RawS::Name(n, q) => lookup_session(prog, n, q.as_deref())?,
        RawS::Access(c) => translate_access(&resolve_standalone_channel(c, prog, &[])?),
        RawS::Chan(c) => translate_channel(&resolve_standalone_channel(c, prog, &[])?),
    })
}

fn standalone_value_in(v: &RawV, prog: &Program, vars: &[String]) -> PResult<ValueType> {
    match v {
        RawV::S(s) if !matches!(s, RawS::Name(n, None) if prog.types.contains_key(n)) => {
            Ok(ValueType::Session(standalone_session(s, prog, vars)?))
        }
        other => standalone_value(other, prog),
    }
}

/// Resolve `Name` or `Class.State` against an already parsed program.
pub fn lookup_session(prog: &Program, n: &str, q: Option<&str>) -> PResult<SessionType> {
    if let Some(s) = q {
        return prog
            .class(n)
            .and_then(|c| c.states.get(s))
            .cloned()
            .ok_or_else(|| ParseError::UnboundStateName(format!("{n}.{s}")));
    }
    if let Some(GlobalType::Session(s)) = prog.types.get(n) {
        return Ok(s.clone());
    }
    if let Some(c) = prog.class(n) {
        return Ok(c.session.clone());
    }
    Err(ParseError::UnboundStateName(n.to_string()))
}

/// Parse a session type; names resolve against `prog` (`Class.State`,
/// global types, class names).
pub fn parse_session_type_in(text: &str, prog: &Program) -> PResult<SessionType> {
    let mut p = Parser::new(text)?;
    let raw = p.stype()?;
    if !p.at_eof() {
        return p.err("trailing input after session type");
    }
    finish_session(text, standalone_session(&raw, prog, &[])?)
}

pub fn parse_session_type(text: &str) -> PResult<SessionType> {
    parse_session_type_in(text, &Program::default())
}

/// Parse a value type (`Null`, `{A, B}`, `linkthis` or a session type).
pub fn parse_value_type_in(text: &str, prog: &Program) -> PResult<ValueType> {
    let mut p = Parser::new(text)?;
    let raw = p.vtype()?;
    if !p.at_eof() {
        return p.err("trailing input after type");
    }
    match standalone_value(&raw, prog)? {
        ValueType::Session(s) => Ok(ValueType::Session(finish_session(text, s)?)),
        other => Ok(other),
    }
}

/// Parse a method body in the context of a parameter name and field list.
pub fn parse_expr(text: &str, param: &str, fields: &[String]) -> PResult<Expr> {
    let mut p = Parser::new(text)?;
    let e = p.seq(&|p: &Parser| p.at_eof())?;
    resolve_expr(&e, param, fields, &BTreeMap::new(), "<expr>")
}

/// Like [`parse_expr`], with the access points of `prog` in scope.
pub fn parse_expr_in(text: &str, param: &str, fields: &[String], prog: &Program) -> PResult<Expr> {
    let mut p = Parser::new(text)?;
    let e = p.seq(&|p: &Parser| p.at_eof())?;
    resolve_expr(&e, param, fields, &prog.access_points, "<expr>")
}
