//! Command-line front end. Each subcommand writes its report to a string and
//! returns the process exit code.

use std::fmt::Write as _;
use std::fs;

use clap::{Parser, Subcommand};

use crate::channel::{dual, translate_channel};
use crate::check::check_program;
use crate::interp::{initial_config, run_from, Interp, Outcome};
use crate::monitor::{replay, Monitor};
use crate::parser::{
    lookup_session, parse_channel_type_in, parse_program, parse_session_type_in,
    parse_value_type_in, ParseError,
};
use crate::subtype::{equivalent_value, subtype_value};
use crate::syntax::{Program, ValueType};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_VIOLATION: i32 = 4;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_PARSE: i32 = 65;

#[derive(Parser, Debug)]
#[command(name = "mst", about = "Session-typed object language: checker, interpreter and monitor")]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Type-check programs.
    Check { files: Vec<String> },
    /// Run a program.
    Run {
        file: String,
        #[arg(long, default_value_t = 10_000)]
        steps: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trace: bool,
        #[arg(long)]
        verify_states: bool,
        #[arg(long)]
        verify_traces: bool,
    },
    /// Decide subtyping between two types.
    Subtype { file: String, left: String, right: String },
    /// Decide equivalence between two types.
    Equiv { file: String, left: String, right: String },
    /// Dual of a channel type.
    Dual { expr: String },
    /// Class session type of a channel type.
    Translate { expr: String },
    /// Validate a call trace against a class session type.
    Trace { file: String, class: String, trace: String },
}

fn load(path: &str) -> Result<Program, (i32, String)> {
    let text = fs::read_to_string(path).map_err(|e| (EXIT_USAGE, format!("{path}: {e}")))?;
    parse_program(&text).map_err(|e| (EXIT_PARSE, format!("{path}: {e}")))
}

/// Merge programs given together; access points must agree.
fn merge(progs: Vec<Program>) -> Result<Program, (i32, String)> {
    let mut out = Program::default();
    for p in progs {
        for (n, s) in p.access_points {
            if let Some(prev) = out.access_points.get(&n) {
                if *prev != s {
                    return Err((EXIT_PARSE, format!("access point {n} declared with two types")));
                }
            }
            out.access_points.insert(n, s);
        }
        for (c, d) in p.classes {
            if out.classes.insert(c.clone(), d).is_some() {
                return Err((EXIT_PARSE, ParseError::DuplicateClass(c).to_string()));
            }
        }
        out.class_order.extend(p.class_order);
        out.channels.extend(p.channels);
        out.types.extend(p.types);
        if p.main.is_some() {
            out.main = p.main;
        }
    }
    Ok(out)
}

/// `Name`, `Class.State`, or any type expression.
fn value_type(prog: &Program, text: &str) -> Result<ValueType, ParseError> {
    let t = text.trim();
    if let Some((c, s)) = t.split_once('.') {
        if !c.is_empty() && c.chars().all(|x| x.is_alphanumeric() || x == '_')
            && s.chars().all(|x| x.is_alphanumeric() || x == '_')
        {
            return Ok(ValueType::Session(lookup_session(prog, c, Some(s))?));
        }
    }
    if let Ok(s) = lookup_session(prog, t, None) {
        return Ok(ValueType::Session(s));
    }
    if let Ok(c) = parse_channel_type_in(t, prog) {
        if prog.channels.contains_key(t) {
            return Ok(ValueType::Session(translate_channel(&c)));
        }
    }
    parse_value_type_in(t, prog).or_else(|e| parse_session_type_in(t, prog).map(ValueType::Session).map_err(|_| e))
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

/// Execute a parsed command; returns (exit code, output).
pub fn execute(cmd: &Command) -> (i32, String) {
    match exec(cmd) {
        Ok(r) => r,
        Err((code, msg)) => (code, format!("error: {msg}\n")),
    }
}

fn exec(cmd: &Command) -> Result<(i32, String), (i32, String)> {
    let mut out = String::new();
    match cmd {
        Command::Check { files } => {
            if files.is_empty() {
                return Err((EXIT_USAGE, "no input files".into()));
            }
            let mut code = EXIT_OK;
            for f in files {
                let p = load(f)?;
                let rep = check_program(&p);
                for l in rep.lines() {
                    let _ = writeln!(out, "{l}");
                }
                if !rep.ok() {
                    code = EXIT_CHECK_FAILED;
                }
            }
            Ok((code, out))
        }
        Command::Run { file, steps, seed, trace, verify_states, verify_traces } => {
            let files: Vec<&str> = file.split(',').collect();
            let progs = files.iter().map(|f| load(f)).collect::<Result<Vec<_>, _>>()?;
            let prog = merge(progs)?;
            let conf = initial_config(&prog).map_err(|e| (EXIT_USAGE, e.to_string()))?;
            let mut it = Interp::with_config(&prog, conf.clone(), *seed);
            let monitoring = *verify_states || *verify_traces;
            let mut mon = Monitor::new(&prog, &conf);
            mon.verify_states = *verify_states;
            mon.verify_traces = *verify_traces;
            let res = if monitoring {
                mon.check_config(&conf, 0);
                run_from(&mut it, *steps, &mut mon)
            } else {
                run_from(&mut it, *steps, &mut ())
            };
            let res = match res {
                Ok(r) => r,
                Err(e) => return Ok((EXIT_VIOLATION, format!("FAULT {e}\n"))),
            };
            if *trace {
                for l in &res.log {
                    let _ = writeln!(out, "{l}");
                }
            }
            for l in &res.linearity {
                let _ = writeln!(out, "VIOLATION Linearity {l}");
            }
            for v in &mon.violations {
                let _ = writeln!(out, "{v}");
            }
            match &res.outcome {
                Outcome::AllTerminated => {
                    let _ = writeln!(out, "TERMINATED steps={}", res.steps);
                }
                Outcome::StepLimit => {
                    let _ = writeln!(out, "STEP-LIMIT steps={}", res.steps);
                }
                Outcome::Blocked(st) => {
                    let _ = writeln!(out, "BLOCKED steps={}", res.steps);
                    for (i, s) in st.iter().enumerate() {
                        let _ = writeln!(out, "  t{i} {s}");
                    }
                }
            }
            let code = if !mon.violations.is_empty() || !res.linearity.is_empty() {
                EXIT_VIOLATION
            } else {
                res.outcome.exit_code()
            };
            Ok((code, out))
        }
        Command::Subtype { file, left, right } | Command::Equiv { file, left, right } => {
            let p = load(file)?;
            let l = value_type(&p, left).map_err(|e| (EXIT_PARSE, e.to_string()))?;
            let r = value_type(&p, right).map_err(|e| (EXIT_PARSE, e.to_string()))?;
            let b = match cmd {
                Command::Subtype { .. } => subtype_value(&l, &r),
                _ => equivalent_value(&l, &r),
            };
            let _ = writeln!(out, "{}", yes_no(b));
            Ok((EXIT_OK, out))
        }
        Command::Dual { expr } => {
            let c = parse_channel_type_in(expr, &Program::default())
                .map_err(|e| (EXIT_PARSE, e.to_string()))?;
            let _ = writeln!(out, "{}", dual(&c));
            Ok((EXIT_OK, out))
        }
        Command::Translate { expr } => {
            let c = parse_channel_type_in(expr, &Program::default())
                .map_err(|e| (EXIT_PARSE, e.to_string()))?;
            let _ = writeln!(out, "{}", translate_channel(&c));
            Ok((EXIT_OK, out))
        }
        Command::Trace { file, class, trace } => {
            let p = load(file)?;
            let c = p.class(class).ok_or_else(|| (EXIT_USAGE, format!("unknown class {class}")))?;
            let tr: Vec<String> = trace.split_whitespace().map(str::to_string).collect();
            match replay(&c.session, &tr) {
                Ok(_) => {
                    let _ = writeln!(out, "valid");
                }
                Err(i) => {
                    let _ = writeln!(out, "invalid at {i}");
                }
            }
            Ok((EXIT_OK, out))
        }
    }
}

/// Subtyping between two session types given as text in the context of `prog`.
pub fn subtype_text(prog: &Program, left: &str, right: &str) -> Result<bool, ParseError> {
    let l = value_type(prog, left)?;
    let r = value_type(prog, right)?;
    Ok(subtype_value(&l, &r))
}

/// Equivalence of two session types, both resolved against `prog`.
pub fn equivalent_text(prog: &Program, left: &str, right: &str) -> Result<bool, ParseError> {
    let l = value_type(prog, left)?;
    let r = value_type(prog, right)?;
    Ok(equivalent_value(&l, &r))
}
