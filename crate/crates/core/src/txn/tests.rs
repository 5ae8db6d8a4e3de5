use num_rational::Ratio;

use super::*;
use crate::packet::PacketRecord;
use crate::scalar::{Fixed, TxnScalar};

fn fx(v: i64) -> Fixed {
    Fixed::from_int(v)
}

fn semantic(src: &str) -> SemanticError {
    match parse_transaction(src) {
        Err(ParseError::Semantic { err, .. }) => err,
        other => panic!("expected semantic error, got {other:?}"),
    }
}

#[test]
fn stfq_parses_with_expected_state() {
    let p = builtin("stfq").unwrap();
    assert_eq!(p.kind, TxnKind::Scheduling);
    assert_eq!(p.scalars.len(), 1);
    assert_eq!(p.scalars[0].name, "virtual_time");
    assert_eq!(p.maps.len(), 1);
    assert_eq!(p.maps[0].name, "last_finish");
    assert!(p.has_dequeue_hook());
}

#[test]
fn stfq_hand_steps() {
    let p = builtin("stfq").unwrap();
    let mut st = TxnState::<Fixed>::new(&p).unwrap();
    let mut a = PacketRecord::new(0, 0, 1, 100);
    let e = p.execute(&mut st, &mut a, ExecCtx::new(0, 1)).unwrap();
    assert_eq!(e.rank, 0);
    assert_eq!(st.map_entry("last_finish", 1), Some(fx(100)));

    let mut b = PacketRecord::new(1, 0, 1, 100);
    let e = p.execute(&mut st, &mut b, ExecCtx::new(0, 1)).unwrap();
    assert_eq!(e.rank, 100);
    assert_eq!(st.map_entry("last_finish", 1), Some(fx(200)));
    assert_eq!(b.get("start"), Some(100));
    assert_eq!(b.rank_out, Some(100));
}

#[test]
fn stfq_weight_divides_length() {
    let p = builtin("stfq").unwrap();
    let mut st = TxnState::<Fixed>::new(&p).unwrap();
    let mut a = PacketRecord::new(0, 0, 3, 100);
    p.execute(&mut st, &mut a, ExecCtx::new(0, 3).with_weight(fx(3)))
        .unwrap();
    // 100/3 is not an integer; the exact value survives in state.
    let lf = st.map_entry("last_finish", 3).unwrap();
    assert_eq!(lf.raw(), (100 << 16) / 3);
}

#[test]
fn stfq_dequeue_hook_advances_virtual_time() {
    let p = builtin("stfq").unwrap();
    let mut st = TxnState::<Fixed>::new(&p).unwrap();
    let mut a = PacketRecord::new(0, 0, 1, 100);
    p.execute(&mut st, &mut a, ExecCtx::new(0, 1)).unwrap();
    let mut b = PacketRecord::new(1, 0, 1, 100);
    let eb = p.execute(&mut st, &mut b, ExecCtx::new(0, 1)).unwrap();
    p.run_dequeue_hook(&mut st, &eb.fields, ExecCtx::new(5, 1))
        .unwrap();
    assert_eq!(st.scalar("virtual_time"), Some(fx(100)));
    // A new flow starts at the advanced virtual time.
    let mut c = PacketRecord::new(2, 5, 2, 100);
    let ec = p.execute(&mut st, &mut c, ExecCtx::new(5, 2)).unwrap();
    assert_eq!(ec.rank, 100);
}

#[test]
fn stfq_zero_weight_is_arithmetic_error_and_atomic() {
    let p = builtin("stfq").unwrap();
    let mut st = TxnState::<Fixed>::new(&p).unwrap();
    let before = st.clone();
    let mut a = PacketRecord::new(0, 0, 1, 100);
    let pkt_before = a.clone();
    let err = p
        .execute(&mut st, &mut a, ExecCtx::new(0, 1).with_weight(fx(0)))
        .unwrap_err();
    assert!(matches!(err, TxnError::Arithmetic(_)));
    assert_eq!(st, before);
    assert_eq!(a, pkt_before);
}

#[test]
fn lstf_subtracts_wait() {
    let p = builtin("lstf").unwrap();
    let mut st = TxnState::<Fixed>::new(&p).unwrap();
    let mut pkt = PacketRecord::new(0, 0, 0, 64)
        .with_field("slack", 100)
        .with_field("prev_wait_time", 30);
    let e = p.execute(&mut st, &mut pkt, ExecCtx::new(0, 0)).unwrap();
    assert_eq!(e.rank, 70);
    assert_eq!(pkt.get("slack"), Some(70));
}

#[test]
fn lstf_missing_field_fails() {
    let p = builtin("lstf").unwrap();
    let mut st = TxnState::<Fixed>::new(&p).unwrap();
    let mut pkt = PacketRecord::new(0, 0, 0, 64).with_field("slack", 10);
    assert_eq!(
        p.execute(&mut st, &mut pkt, ExecCtx::new(0, 0)),
        Err(TxnError::MissingField("prev_wait_time".into()))
    );
}

#[test]
fn tbf_hand_steps() {
    let p = builtin("tbf")
        .unwrap()
        .with_params([("r", Decimal::int(1)), ("B", Decimal::int(10))])
        .unwrap();
    let mut st = TxnState::<Fixed>::new(&p).unwrap();
    assert_eq!(st.scalar("tokens"), Some(fx(10)));

    let mut a = PacketRecord::new(0, 0, 0, 5);
    let e = p.execute(&mut st, &mut a, ExecCtx::new(0, 0)).unwrap();
    assert_eq!(e.rank, 0);
    assert_eq!(st.scalar("tokens"), Some(fx(5)));

    let mut b = PacketRecord::new(1, 0, 0, 8);
    let e = p.execute(&mut st, &mut b, ExecCtx::new(0, 0)).unwrap();
    assert_eq!(e.rank, 3);
    assert_eq!(b.get("send_time"), Some(3));
    assert_eq!(st.scalar("tokens"), Some(fx(-3)));
}

#[test]
fn tbf_fractional_send_time_rounds_up() {
    let p = builtin("tbf")
        .unwrap()
        .with_params([("r", Decimal::int(2)), ("B", Decimal::int(0))])
        .unwrap();
    let mut st = TxnState::<Fixed>::new(&p).unwrap();
    let mut a = PacketRecord::new(0, 0, 0, 5);
    let e = p.execute(&mut st, &mut a, ExecCtx::new(0, 0)).unwrap();
    // 5 bytes at 2 bytes/tick: 2.5 ticks, released at 3.
    assert_eq!(e.rank_value, Fixed::from_ratio(5, 2).unwrap());
    assert_eq!(e.rank, 3);
}

#[test]
fn stop_and_go_hand_steps() {
    let p = builtin("stop_and_go").unwrap();
    let mut st = TxnState::<Fixed>::new(&p).unwrap();
    let mut a = PacketRecord::new(0, 3, 0, 1);
    assert_eq!(p.execute(&mut st, &mut a, ExecCtx::new(3, 0)).unwrap().rank, 10);
    let mut b = PacketRecord::new(1, 12, 0, 1);
    assert_eq!(p.execute(&mut st, &mut b, ExecCtx::new(12, 0)).unwrap().rank, 20);
}

#[test]
fn stop_and_go_variants_differ_after_idle_gap() {
    let w = builtin("stop_and_go").unwrap();
    let i = builtin("stop_and_go_if").unwrap();
    let mut sw = TxnState::<Fixed>::new(&w).unwrap();
    let mut si = TxnState::<Fixed>::new(&i).unwrap();
    let mut a = PacketRecord::new(0, 35, 0, 1);
    let mut b = a.clone();
    assert_eq!(w.execute(&mut sw, &mut a, ExecCtx::new(35, 0)).unwrap().rank, 40);
    assert_eq!(i.execute(&mut si, &mut b, ExecCtx::new(35, 0)).unwrap().rank, 20);
}

#[test]
fn stop_and_go_rank_is_end_of_arrival_frame() {
    let p = builtin("stop_and_go").unwrap();
    let mut st = TxnState::<Fixed>::new(&p).unwrap();
    let mut now = 0u64;
    for k in 0..500u64 {
        now += (k * 7919) % 37;
        let mut pkt = PacketRecord::new(k, now, 0, 1);
        let r = p.execute(&mut st, &mut pkt, ExecCtx::new(now, 0)).unwrap().rank;
        assert_eq!(r, (now / 10 + 1) * 10, "now {now}");
    }
}

#[test]
fn min_rate_hand_steps() {
    let p = builtin("min_rate_root").unwrap();
    let mut st = TxnState::<Fixed>::new(&p).unwrap();
    let mut a = PacketRecord::new(0, 0, 0, 5);
    let e = p.execute(&mut st, &mut a, ExecCtx::new(0, 0)).unwrap();
    assert_eq!(e.rank, 0);
    assert_eq!(st.map_entry("tb", 0), Some(fx(5)));

    let mut b = PacketRecord::new(1, 0, 0, 20);
    let e = p.execute(&mut st, &mut b, ExecCtx::new(0, 0)).unwrap();
    assert_eq!(e.rank, 1);
    assert_eq!(b.get("over_min"), Some(1));
    assert_eq!(st.map_entry("tb", 0), Some(fx(5)));
}

#[test]
fn min_rate_boundary_is_over_min() {
    let p = builtin("min_rate_root").unwrap();
    let mut st = TxnState::<Fixed>::new(&p).unwrap();
    let mut a = PacketRecord::new(0, 0, 0, 10);
    assert_eq!(p.execute(&mut st, &mut a, ExecCtx::new(0, 0)).unwrap().rank, 1);
}

#[test]
fn fifo_ranks_by_arrival_time() {
    let p = builtin("fifo").unwrap();
    let mut st = TxnState::<Fixed>::new(&p).unwrap();
    let mut a = PacketRecord::new(0, 42, 0, 1);
    assert_eq!(p.execute(&mut st, &mut a, ExecCtx::new(42, 0)).unwrap().rank, 42);
}

#[test]
fn field_priority_reads_named_field() {
    let p = builtin("field_priority(tos)").unwrap();
    let mut st = TxnState::<Fixed>::new(&p).unwrap();
    let mut a = PacketRecord::new(0, 42, 0, 1).with_field("tos", 3);
    assert_eq!(p.execute(&mut st, &mut a, ExecCtx::new(42, 0)).unwrap().rank, 3);
    assert!(matches!(
        builtin("field_priority"),
        Err(TxnLangError::UnknownBuiltin(_))
    ));
    assert!(matches!(
        builtin("field_priority(a b)"),
        Err(TxnLangError::UnknownBuiltin(_))
    ));
}

#[test]
fn unknown_builtin() {
    assert!(matches!(builtin("wfq2"), Err(TxnLangError::UnknownBuiltin(_))));
}

#[test]
fn unknown_param_override() {
    let err = builtin("tbf")
        .unwrap()
        .with_params([("q", Decimal::int(1))])
        .unwrap_err();
    assert!(matches!(err, TxnLangError::UnknownParam { .. }));
}

#[test]
fn missing_rank_assignment() {
    assert_eq!(
        semantic("transaction t scheduling { p.x = 1; }"),
        SemanticError::MissingRankAssignment
    );
    assert_eq!(
        semantic("transaction t scheduling { if (p.x > 1) { p.rank = 1; } }"),
        SemanticError::MissingRankAssignment
    );
}

#[test]
fn multiple_rank_assignment() {
    assert_eq!(
        semantic("transaction t scheduling { p.rank = 1; if (now > 1) { p.rank = 2; } }"),
        SemanticError::MultipleRankAssignment
    );
}

#[test]
fn rank_in_both_branches_is_accepted() {
    parse_transaction(
        "transaction t scheduling { if (now > 1) { p.rank = 1; } else { p.rank = 2; } }",
    )
    .unwrap();
}

#[test]
fn undeclared_identifier() {
    assert_eq!(
        semantic("transaction t scheduling { p.rank = foo; }"),
        SemanticError::UndeclaredIdentifier("foo".into())
    );
    assert_eq!(
        semantic("transaction t scheduling { p.rank = m[f]; }"),
        SemanticError::UndeclaredIdentifier("m".into())
    );
}

#[test]
fn params_are_read_only() {
    assert_eq!(
        semantic("transaction t scheduling { param r = 1 r = 2; p.rank = r; }"),
        SemanticError::ReadOnly("r".into())
    );
    assert_eq!(
        semantic("transaction t scheduling { now = 2; p.rank = 1; }"),
        SemanticError::ReadOnly("now".into())
    );
}

#[test]
fn duplicate_declaration() {
    assert_eq!(
        semantic("transaction t scheduling { state a = 0 statemap a p.rank = 1; }"),
        SemanticError::Duplicate("a".into())
    );
}

#[test]
fn syntax_error_has_location() {
    let err = parse_transaction("transaction t scheduling {\n  p.rank = (1 + ;\n}").unwrap_err();
    match err {
        ParseError::Syntax { line, col, .. } => {
            assert_eq!(line, 2);
            assert_eq!(col, 17);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn predicates() {
    let p = parse_predicate("p.flow_id == 0 || p.flow_id == 1").unwrap();
    assert!(p.matches::<Fixed>(&PacketRecord::new(0, 0, 1, 1)).unwrap());
    assert!(!p.matches::<Fixed>(&PacketRecord::new(0, 0, 2, 1)).unwrap());
    let q = parse_predicate("!(p.tos >= 3) && true").unwrap();
    assert!(q.matches::<Fixed>(&PacketRecord::new(0, 0, 0, 1).with_field("tos", 1)).unwrap());
    assert!(parse_predicate("now > 3").is_err());
    assert!(parse_predicate("p.x ==").is_err());
}

#[test]
fn decimal_literals_and_negation() {
    let p = parse_transaction("transaction t scheduling { p.rank = -1.5 * -2 + 0.25; }").unwrap();
    let mut st = TxnState::<Fixed>::new(&p).unwrap();
    let mut a = PacketRecord::new(0, 0, 0, 1);
    let e = p.execute(&mut st, &mut a, ExecCtx::new(0, 0)).unwrap();
    assert_eq!(e.rank_value, Fixed::from_ratio(13, 4).unwrap());
    assert_eq!(e.rank, 3);
}

#[test]
fn statemap_default_applies_to_absent_keys() {
    let p = parse_transaction(
        "transaction t scheduling { statemap m = 7 p.rank = m[f]; m[f] = m[f] + 1; }",
    )
    .unwrap();
    let mut st = TxnState::<Fixed>::new(&p).unwrap();
    for k in [0u64, 0, 5] {
        let mut a = PacketRecord::new(0, 0, k, 1);
        p.execute(&mut st, &mut a, ExecCtx::new(0, k)).unwrap();
    }
    assert_eq!(st.map_entry("m", 0), Some(fx(9)));
    assert_eq!(st.map_entry("m", 5), Some(fx(8)));
    assert_eq!(st.map_len("m"), Some(2));
}

fn ranks<V: TxnScalar>(name: &str, pkts: &[(u64, u64, u32)]) -> Vec<u64> {
    let p = builtin(name).unwrap();
    let mut st = TxnState::<V>::new(&p).unwrap();
    pkts.iter()
        .enumerate()
        .map(|(i, &(now, flow, len))| {
            let mut pkt = PacketRecord::new(i as u64, now, flow, len);
            p.execute(&mut st, &mut pkt, ExecCtx::new(now, flow)).unwrap().rank
        })
        .collect()
}

#[test]
fn fixed_and_exact_agree_on_integral_workloads() {
    let pkts: Vec<(u64, u64, u32)> = (0..400u64)
        .map(|i| (i / 3, i % 4, 40 + ((i * 37) % 200) as u32))
        .collect();
    for name in ["stfq", "tbf", "stop_and_go", "min_rate_root", "fifo"] {
        assert_eq!(
            ranks::<Fixed>(name, &pkts),
            ranks::<Ratio<i64>>(name, &pkts),
            "{name}"
        );
    }
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn stfq_ranks_monotone_per_flow(
            pkts in prop::collection::vec((0u64..4, 1u32..1500, 1i64..5), 1..200),
            hooks in prop::collection::vec(any::<bool>(), 200),
        ) {
            let p = builtin("stfq").unwrap();
            let mut st = TxnState::<Fixed>::new(&p).unwrap();
            let mut last = [None::<u64>; 4];
            for (i, &(flow, len, w)) in pkts.iter().enumerate() {
                let mut pkt = PacketRecord::new(i as u64, i as u64, flow, len);
                let ctx = ExecCtx::new(i as u64, flow).with_weight(fx(w));
                let e = p.execute(&mut st, &mut pkt, ctx).unwrap();
                if let Some(prev) = last[flow as usize] {
                    prop_assert!(e.rank >= prev);
                }
                last[flow as usize] = Some(e.rank);
                if hooks[i] {
                    p.run_dequeue_hook(&mut st, &e.fields, ctx).unwrap();
                }
            }
        }

        #[test]
        fn tbf_window_bound(
            r in 1i64..20,
            // The bound needs a bucket at least one maximum packet deep.
            b in 1500i64..3000,
            gaps in prop::collection::vec((0u64..50, 1u32..1500), 1..150),
        ) {
            let p = builtin("tbf").unwrap()
                .with_params([("r", Decimal::int(r)), ("B", Decimal::int(b))]).unwrap();
            let mut st = TxnState::<Ratio<i64>>::new(&p).unwrap();
            let mut now = 0u64;
            let mut sends: Vec<(Ratio<i64>, i64)> = Vec::new();
            for (i, &(gap, len)) in gaps.iter().enumerate() {
                now += gap;
                let mut pkt = PacketRecord::new(i as u64, now, 0, len);
                let e = p.execute(&mut st, &mut pkt, ExecCtx::new(now, 0)).unwrap();
                sends.push((e.rank_value, len as i64));
            }
            // Send times are non-decreasing, so every window is a contiguous run.
            for i in 0..sends.len() {
                let mut bytes = 0i64;
                for j in i..sends.len() {
                    bytes += sends[j].1;
                    let span = sends[j].0 - sends[i].0;
                    let cap = Ratio::from_integer(b) + Ratio::from_integer(r) * span;
                    prop_assert!(Ratio::from_integer(bytes) <= cap);
                }
            }
        }

        #[test]
        fn execution_is_deterministic(
            pkts in prop::collection::vec((0u64..3, 1u32..500, 0u64..5), 1..100),
        ) {
            let run = || {
                let p = builtin("min_rate_root").unwrap();
                let mut st = TxnState::<Fixed>::new(&p).unwrap();
                let mut now = 0;
                let mut out = Vec::new();
                for (i, &(flow, len, gap)) in pkts.iter().enumerate() {
                    now += gap;
                    let mut pkt = PacketRecord::new(i as u64, now, flow, len);
                    out.push(p.execute(&mut st, &mut pkt, ExecCtx::new(now, flow)).unwrap());
                }
                (out, st)
            };
            prop_assert_eq!(run(), run());
        }
    }
}
