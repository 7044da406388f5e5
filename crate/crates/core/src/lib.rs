//! Typestate checking for classes whose method availability is described by
//! session types, with channel-based concurrency.
//!
//! The crate provides the type language, the inference algorithm used by the
//! checker, a small-step interpreter and a runtime monitor for the typing
//! invariants.

pub mod channel;
pub mod check;
pub mod cli;
pub mod heap;
pub mod interp;
pub mod monitor;
pub mod parser;
pub mod render;
pub mod subtype;
pub mod syntax;
