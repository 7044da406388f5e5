//! Channel session types: duality and the translation of channel and
//! access-point types into class session types.

use crate::syntax::{enum_of, ChannelType, MethodEntry, Payload, SessionType, ValueType};

/// `Σ̄`: swap send/receive and select/offer; payloads are unchanged.
pub fn dual(s: &ChannelType) -> ChannelType {
    match s {
        ChannelType::End => ChannelType::End,
        ChannelType::Var(x) => ChannelType::Var(x.clone()),
        ChannelType::Rec(x, b) => ChannelType::Rec(x.clone(), Box::new(dual(b))),
        ChannelType::Recv(p, k) => ChannelType::Send(p.clone(), Box::new(dual(k))),
        ChannelType::Send(p, k) => ChannelType::Recv(p.clone(), Box::new(dual(k))),
        ChannelType::Offer(cs) => {
            ChannelType::Select(cs.iter().map(|(l, c)| (l.clone(), dual(c))).collect())
        }
        ChannelType::Select(cs) => {
            ChannelType::Offer(cs.iter().map(|(l, c)| (l.clone(), dual(c))).collect())
        }
    }
}

/// Value type of a message payload as seen by the endpoint object.
pub fn payload_type(p: &Payload) -> ValueType {
    match p {
        Payload::Value(t) => t.clone(),
        Payload::Chan(c) => ValueType::Session(translate_channel(c)),
    }
}

/// `⟦Σ⟧`.
pub fn translate_channel(s: &ChannelType) -> SessionType {
    match s {
        ChannelType::End => SessionType::end(),
        ChannelType::Var(x) => SessionType::Var(x.clone()),
        ChannelType::Rec(x, b) => SessionType::Rec(x.clone(), Box::new(translate_channel(b))),
        ChannelType::Recv(p, k) => SessionType::Branch(vec![MethodEntry::new(
            "receive",
            ValueType::Null,
            payload_type(p),
            translate_channel(k),
        )]),
        ChannelType::Send(p, k) => SessionType::Branch(vec![MethodEntry::new(
            "send",
            payload_type(p),
            ValueType::Null,
            translate_channel(k),
        )]),
        ChannelType::Offer(cs) => SessionType::Branch(vec![MethodEntry::new(
            "receive",
            ValueType::Null,
            ValueType::LinkThis,
            SessionType::Variant(
                cs.iter().map(|(l, c)| (l.clone(), translate_channel(c))).collect(),
            ),
        )]),
        ChannelType::Select(cs) => SessionType::Branch(
            cs.iter()
                .map(|(l, c)| {
                    MethodEntry::new(
                        "send",
                        enum_of([l.clone()]),
                        ValueType::Null,
                        translate_channel(c),
                    )
                })
                .collect(),
        ),
    }
}

/// `⟦⟨Σ⟩⟧ = μX.{⟦Σ̄⟧ request(Null): X, ⟦Σ⟧ accept(Null): X}`.
pub fn translate_access(s: &ChannelType) -> SessionType {
    let x = "Acc";
    SessionType::rec(
        x,
        SessionType::Branch(vec![
            MethodEntry::new(
                "request",
                ValueType::Null,
                ValueType::Session(translate_channel(&dual(s))),
                SessionType::var(x),
            ),
            MethodEntry::new(
                "accept",
                ValueType::Null,
                ValueType::Session(translate_channel(s)),
                SessionType::var(x),
            ),
        ]),
    )
}

/// One transition of a channel type, used to advance endpoint types.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ChanAction {
    /// Value or endpoint sent/received (the payload carried).
    Send,
    Recv,
    Select(String),
    Offer(String),
}

/// Advance `Σ` by an action; `None` when the action is not permitted.
pub fn chan_step(s: &ChannelType, a: &ChanAction) -> Option<ChannelType> {
    match (s.unfold(), a) {
        (ChannelType::Send(_, k), ChanAction::Send) => Some(*k),
        (ChannelType::Recv(_, k), ChanAction::Recv) => Some(*k),
        (ChannelType::Select(cs), ChanAction::Select(l)) => cs.get(l).cloned(),
        (ChannelType::Offer(cs), ChanAction::Offer(l)) => cs.get(l).cloned(),
        _ => None,
    }
}
