mod common;

use mst::cli::{equivalent_text, subtype_text};
use mst::parser::parse_session_type;
use mst::subtype::{
    equivalent, equivalent_field, join_field, join_session, join_value, subtype_field,
    subtype_session, subtype_value,
};
use mst::syntax::{enum_of, FieldTyping, SessionType, ValueType};
use proptest::prelude::*;

fn st(text: &str) -> SessionType {
    parse_session_type(text).unwrap_or_else(|e| panic!("{text}: {e}"))
}

#[test]
fn file_init_is_a_subtype_of_read_to_end() {
    let p = common::load("file.mst");
    assert!(subtype_text(&p, "File.Init", "FileReadToEnd.Init").unwrap());
    assert!(!subtype_text(&p, "FileReadToEnd.Init", "File.Init").unwrap());
}

#[test]
fn remote_file_init_equivalent_to_file_init() {
    let p = common::load("remote_v1.mst");
    assert!(equivalent_text(&p, "RemoteFile.Init", "File.Init").unwrap());
    let p = common::load("remote_v2.mst");
    assert!(equivalent_text(&p, "RemoteFile.Init", "File.Init").unwrap());
}

#[test]
fn every_branch_is_below_end() {
    for s in ["{Null m(): {}}", "{{A} m({B}): {Null n(): {}}}", "rec X. {Null m(): X}", "{}"] {
        assert!(subtype_session(&st(s), &SessionType::end()), "{s}");
    }
    assert!(!subtype_session(&SessionType::end(), &st("{Null m(): {}}")));
}

#[test]
fn variant_label_inclusion() {
    let small = st("<OK: {Null a(): {}}>");
    let big = st("<OK: {Null a(): {}}, ERROR: {}>");
    assert!(subtype_session(&small, &big));
    assert!(!subtype_session(&big, &small));
    assert!(!subtype_session(&small, &SessionType::end()));
}

#[test]
fn value_compatibility() {
    assert!(subtype_value(&enum_of(["TRUE"]), &enum_of(["TRUE", "FALSE"])));
    assert!(!subtype_value(&enum_of(["TRUE", "FALSE"]), &enum_of(["TRUE"])));
    assert!(!subtype_value(&ValueType::Null, &enum_of(["TRUE"])));
    assert!(!subtype_value(&enum_of(["TRUE"]), &ValueType::Null));
    assert!(subtype_value(&ValueType::LinkThis, &ValueType::LinkThis));
    assert!(!subtype_value(&ValueType::Link("f".into()), &ValueType::Link("g".into())));
    let s = st("{Null m(): {}}");
    assert!(subtype_value(&ValueType::Session(s), &ValueType::Session(SessionType::end())));
}

#[test]
fn parameters_are_contravariant_results_covariant() {
    assert!(subtype_session(&st("{{A} m({A, B}): {}}"), &st("{{A, B} m({A}): {}}")));
    assert!(!subtype_session(&st("{{A} m({A}): {}}"), &st("{{A} m({A, B}): {}}")));
    assert!(!subtype_session(&st("{{A, B} m(): {}}"), &st("{{A} m(): {}}")));
}

#[test]
fn enum_result_below_linkthis_with_uniform_variant() {
    // E m(): S is usable where linkthis m(): <l: S> is expected
    assert!(subtype_session(&st("{{A, B} m(): {}}"), &st("{linkthis m(): <A: {}, B: {}, C: {}>}")));
    assert!(!subtype_session(&st("{{A, B} m(): {}}"), &st("{linkthis m(): <A: {}>}")));
}

#[test]
fn overloads_are_matched_by_parameter() {
    let s = st("{Null send({A}): {Null x(): {}}, Null send({B}): {}}");
    assert!(subtype_session(&s, &st("{Null send({B}): {}}")));
    assert!(subtype_session(&s, &st("{Null send({A}): {Null x(): {}}}")));
    assert!(!subtype_session(&s, &st("{Null send({A}): {Null y(): {}}}")));
}

#[test]
fn field_subtyping() {
    let sf = |s: &str| FieldTyping::Record([("f".to_string(), ValueType::Session(st(s)))].into());
    assert!(subtype_field(&sf("{Null m(): {}}"), &sf("{}")));
    assert!(!subtype_field(&sf("{}"), &sf("{Null m(): {}}")));
    let n = common::rec(&[("f", ValueType::Null)]);
    let v1 = FieldTyping::Variant([("OK".to_string(), n.record().unwrap().clone())].into());
    let v2 = FieldTyping::Variant(
        [("OK".to_string(), n.record().unwrap().clone()), ("ERROR".to_string(), n.record().unwrap().clone())].into(),
    );
    assert!(subtype_field(&v1, &v2));
    assert!(!subtype_field(&v2, &v1));
    let other = common::rec(&[("g", ValueType::Null)]);
    assert!(!subtype_field(&n, &other));
    assert!(!subtype_field(&n, &v1));
}

#[test]
fn recursion_equals_its_unfolding() {
    let s = st("rec X. {Null m(): X}");
    assert!(equivalent(&s, &s.unfold()));
    assert!(equivalent(&s, &st("{Null m(): {Null m(): rec Y. {Null m(): Y}}}")));
    assert!(!equivalent(&s, &st("{Null m(): {}}")));
}

#[test]
fn branch_order_is_irrelevant() {
    assert!(equivalent(&st("{Null a(): {}, Null b(): {}}"), &st("{Null b(): {}, Null a(): {}}")));
}

#[test]
fn joins() {
    assert_eq!(join_value(&enum_of(["TRUE"]), &enum_of(["FALSE"])).unwrap(), enum_of(["TRUE", "FALSE"]));
    assert!(join_value(&ValueType::Null, &enum_of(["TRUE"])).is_err());
    let s = st("{Null m(): {}}");
    assert!(equivalent(&join_session(&s, &SessionType::end()).unwrap(), &SessionType::end()));
    assert!(join_session(&s, &st("<A: {}>")).is_err());
    let a = FieldTyping::Variant([("A".to_string(), common::rec(&[("f", ValueType::Null)]).record().unwrap().clone())].into());
    let b = FieldTyping::Variant(
        [("B".to_string(), common::rec(&[("f", enum_of(["X"]))]).record().unwrap().clone())].into(),
    );
    let j = join_field(&a, &b).unwrap();
    let FieldTyping::Variant(cs) = &j else { panic!("{j:?}") };
    assert_eq!(cs.len(), 2);
    assert!(equivalent_field(&join_field(&a, &a).unwrap(), &a));
    assert!(join_field(&a, &common::rec(&[("f", ValueType::Null)])).is_err());
}

#[test]
fn joining_algexample_continuations() {
    let p = common::load("algexample.mst");
    let c = p.class("C").unwrap();
    let SessionType::Branch(es) = c.session.unfold() else { panic!() };
    let SessionType::Variant(cs) = &es[0].cont else { panic!() };
    let (f, t) = (&cs["FALSE"], &cs["TRUE"]);
    let j = join_session(f, t).unwrap();
    assert!(subtype_session(f, &j) && subtype_session(t, &j));
    assert!(equivalent(&j, f));
}

fn corpus_types() -> Vec<SessionType> {
    let mut out = Vec::new();
    for f in common::runnable_corpus() {
        let p = common::load(&f);
        for c in p.classes.values() {
            out.extend(common::reachable_states(&c.session));
        }
    }
    out
}

#[test]
fn corpus_types_reflexive_and_transitive() {
    let mut ts = corpus_types();
    ts.sort();
    ts.dedup();
    assert!(ts.len() > 20);
    let sub: Vec<Vec<bool>> = ts.iter().map(|a| ts.iter().map(|b| subtype_session(a, b)).collect()).collect();
    let n = ts.len();
    for i in 0..n {
        assert!(sub[i][i], "{}", ts[i]);
        for j in (0..n).filter(|&j| sub[i][j]) {
            for k in (0..n).filter(|&k| sub[j][k]) {
                assert!(sub[i][k], "{} <: {} <: {}", ts[i], ts[j], ts[k]);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn reflexive(seed in any::<u64>()) {
        let s = common::gen_session(&mut common::rng(seed), 5);
        prop_assert!(subtype_session(&s, &s));
        prop_assert!(equivalent(&s, &s.canon()));
    }

    #[test]
    fn widening_chains_are_transitive(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let mut chain = vec![common::gen_session(&mut r, 4)];
        for _ in 0..4 {
            let next = common::widen_session(&mut r, chain.last().unwrap());
            chain.push(next);
        }
        for w in chain.windows(2) {
            prop_assert!(subtype_session(&w[0], &w[1]), "{} <: {}", w[0], w[1]);
        }
        prop_assert!(subtype_session(&chain[0], &chain[4]));
    }

    #[test]
    fn mutual_subtyping_is_equivalence(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let a = common::gen_session(&mut r, 4);
        let b = if r.gen_bool(0.5) { common::widen_session(&mut r, &a) } else { common::gen_session(&mut r, 4) };
        let both = subtype_session(&a, &b) && subtype_session(&b, &a);
        prop_assert_eq!(both, equivalent(&a, &b));
        prop_assert_eq!(equivalent(&a, &b), equivalent(&b, &a));
    }

    #[test]
    fn invariant_under_unfolding(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let a = common::gen_session(&mut r, 4);
        let b = common::widen_session(&mut r, &a);
        let wrap = SessionType::rec("Z", a.clone());
        prop_assert_eq!(subtype_session(&a, &b), subtype_session(&a.unfold(), &b));
        prop_assert_eq!(subtype_session(&a, &b), subtype_session(&a, &b.unfold()));
        prop_assert!(equivalent(&wrap, &a));
    }

    #[test]
    fn join_is_an_upper_bound(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let x = common::gen_session(&mut r, 4);
        let y = common::widen_session(&mut r, &x);
        let z = common::widen_session(&mut r, &y);
        let j = join_session(&x, &y).unwrap();
        prop_assert!(subtype_session(&x, &j) && subtype_session(&y, &j));
        prop_assert!(equivalent(&j, &y), "{} vs {}", j, y);
        prop_assert!(subtype_session(&j, &z));
        if let Ok(k) = join_session(&x, &common::gen_session(&mut r, 3)) {
            prop_assert!(subtype_session(&x, &k));
        }
    }
}

use rand::Rng;
