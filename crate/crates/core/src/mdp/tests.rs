use std::collections::HashMap;

use super::*;
use crate::events::BookState;
use crate::fixture::{self, FixtureParams};
use crate::lobsim;
use crate::sampling::Draws;

fn small_model(k: u32) -> FlowModel {
    fixture::flow_model(&FixtureParams { k, ..Default::default() })
}

/// Every row puts all mass on `t`; market orders have size 1.
fn forced(t: OrderType, k: u32) -> FlowModel {
    let mut m = small_model(k);
    for row in m.probs.iter_mut() {
        *row = [0.0; 6];
        row[t.index()] = 1.0;
    }
    for sizes in m.mo_size_bid.iter_mut().chain(m.mo_size_ask.iter_mut()) {
        sizes.iter_mut().enumerate().for_each(|(i, p)| *p = (i == 0) as u8 as f64);
    }
    m
}

fn resting(front: u32, behind: u32, ask: u32, m: u32) -> MdpState {
    MdpState { v_front: front, v_behind: behind, v_ask: ask, e: OrderType::LB, status: Status::Resting, m, locked: false }
}

#[test]
fn reward_table() {
    assert_eq!(reward(Fill::Market, 1), 0.5);
    assert_eq!(reward(Fill::Market, -1), -1.5);
    assert_eq!(reward(Fill::Limit, 1), 1.5);
    assert_eq!(reward(Fill::Limit, -1), -0.5);
    assert_eq!(reward(Fill::Forced, 1), -0.5);
    assert_eq!(reward(Fill::Forced, -1), -0.5);
}

#[test]
fn market_sell_fills_front_order() {
    let m = forced(OrderType::MS, 10);
    // Fill and bid depletion together: the mid continues down with
    // probability 0.81 (reward -0.5) and reverses otherwise (+1.5).
    let out = transitions(&m, &resting(1, 0, 3, 1), Action::Wait, Variant::NoCo);
    assert_eq!(out.len(), 1);
    assert_done(out[0], 0.81 * -0.5 + 0.19 * 1.5);
    let out = transitions(&m, &resting(1, 2, 3, 1), Action::Wait, Variant::NoCo);
    let expect = MdpState { v_front: 0, v_behind: 2, v_ask: 3, e: OrderType::MS, status: Status::FilledLimit, m: 1, locked: false };
    assert_eq!(out, vec![(Outcome::Next(Node::Decision(expect)), 1.0)]);
    let out = transitions(&m, &resting(2, 2, 3, 1), Action::Wait, Variant::NoCo);
    assert_eq!(out, vec![(Outcome::Next(Node::Decision(MdpState { v_front: 1, e: OrderType::MS, ..resting(2, 2, 3, 1) })), 1.0)]);
}

#[test]
fn market_action_depleting_ask_settles_at_once() {
    let m = small_model(10);
    let s = MdpState::idle(4, 1, OrderType::LS, 2);
    let out = transitions(&m, &s, Action::Market, Variant::NoCo);
    assert_eq!(out.len(), 1);
    assert_done(out[0], 0.81 * 0.5 + 0.19 * -1.5);
}

#[test]
fn asymmetric_continuation_by_side() {
    let mut m = forced(OrderType::MB, 10);
    m.theta_up = Some(0.9);
    m.theta_down = Some(0.6);
    let filled = MdpState { status: Status::FilledLimit, ..MdpState::idle(3, 1, OrderType::LB, 1) };
    assert_done(transitions(&m, &filled, Action::Wait, Variant::AllOrders)[0], 0.9 * 1.5 + 0.1 * -0.5);
    let m = forced(OrderType::MS, 10);
    let mut m2 = m.clone();
    m2.theta_down = Some(0.6);
    let filled = MdpState { status: Status::FilledMarket, ..MdpState::idle(1, 3, OrderType::LB, 1) };
    assert_done(transitions(&m2, &filled, Action::Wait, Variant::AllOrders)[0], 0.6 * -1.5 + 0.4 * 0.5);
}

fn assert_done(branch: (Outcome, f64), expect: f64) {
    match branch {
        (Outcome::Done(r), p) => {
            assert_eq!(p, 1.0);
            assert!((r - expect).abs() < 1e-12, "{r} vs {expect}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn limit_orders_join_behind_and_cancels_spare_the_trader() {
    let m = forced(OrderType::LB, 10);
    let out = transitions(&m, &resting(2, 1, 3, 1), Action::Wait, Variant::NoCo);
    assert_eq!(out, vec![(Outcome::Next(Node::Decision(resting(2, 2, 3, 1))), 1.0)]);
    // At the cap the arriving order is dropped.
    let out = transitions(&m, &resting(4, 6, 3, 1), Action::Wait, Variant::NoCo);
    assert_eq!(out, vec![(Outcome::Next(Node::Decision(resting(4, 6, 3, 1))), 1.0)]);

    let m = forced(OrderType::CB, 10);
    let out = transitions(&m, &resting(3, 2, 3, 1), Action::Wait, Variant::NoCo);
    let cb = |f, b| Outcome::Next(Node::Decision(MdpState { e: OrderType::CB, ..resting(f, b, 3, 1) }));
    assert_eq!(out, vec![(cb(2, 2), 0.5), (cb(3, 1), 0.5)]);
}

#[test]
fn cancel_on_lone_order_is_masked() {
    let mut m = small_model(10);
    for row in m.probs.iter_mut() {
        *row = [0.0, 0.0, 0.0, 0.5, 0.5, 0.0];
    }
    let out = transitions(&m, &resting(1, 0, 3, 1), Action::Wait, Variant::NoCo);
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].1, 1.0);
    assert_eq!(out[0].0, Outcome::Next(Node::Decision(MdpState { v_ask: 4, e: OrderType::LS, ..resting(1, 0, 3, 1) })));
}

#[test]
fn period_boundary_cancels_the_order_and_refills() {
    let m = forced(OrderType::MB, 10);
    let out = transitions(&m, &resting(1, 0, 1, 3), Action::Wait, Variant::NoCo);
    assert_eq!(out, vec![(Outcome::Next(Node::Refill { e: OrderType::MB, m: 2, locked: true }), 1.0)]);
    let out = transitions(&m, &resting(1, 0, 1, 1), Action::Wait, Variant::NoCo);
    assert_eq!(out, vec![(Outcome::Done(-0.5), 1.0)]);
}

#[test]
fn placing_and_cancelling_set_last_type() {
    let m = forced(OrderType::LS, 10);
    let s = MdpState::idle(3, 4, OrderType::MS, 1);
    let out = transitions(&m, &s, Action::PlaceLo, Variant::NoCo);
    assert_eq!(out[0].0, Outcome::Next(Node::Decision(MdpState { v_ask: 5, e: OrderType::LS, ..resting(4, 0, 4, 1) })));
    let out = transitions(&forced(OrderType::LS, 10), &resting(2, 3, 4, 1), Action::Cancel, Variant::NoCo);
    assert_eq!(out[0].0, Outcome::Next(Node::Decision(MdpState { v_ask: 5, e: OrderType::LS, ..MdpState::idle(4, 4, OrderType::LS, 1) })));
    // Cancelling the only order empties the bid.
    let out = transitions(&m, &resting(1, 0, 4, 1), Action::Cancel, Variant::NoCo);
    assert_eq!(out, vec![(Outcome::Done(-0.5), 1.0)]);
}

#[test]
fn admissibility_per_variant() {
    let idle = MdpState::idle(3, 3, OrderType::LB, 2);
    assert_eq!(idle.admissible(Variant::AllOrders, 10), vec![Action::Wait, Action::PlaceLo, Action::Market]);
    assert_eq!(idle.admissible(Variant::NoMo, 10), vec![Action::Wait, Action::PlaceLo]);
    let locked = MdpState { locked: true, ..idle };
    assert_eq!(locked.admissible(Variant::NoCo, 10), vec![Action::Wait, Action::PlaceLo]);
    assert_eq!(resting(1, 1, 1, 1).admissible(Variant::NoCo, 10), vec![Action::Wait]);
    assert_eq!(resting(1, 1, 1, 1).admissible(Variant::AllOrders, 10), vec![Action::Wait, Action::Cancel]);
    let full = MdpState::idle(10, 3, OrderType::LB, 1);
    assert!(!full.admissible(Variant::AllOrders, 10).contains(&Action::PlaceLo));
    let filled = MdpState { status: Status::FilledMarket, ..idle };
    assert_eq!(filled.admissible(Variant::AllOrders, 10), vec![Action::Wait]);
}

#[test]
fn state_key_round_trip() {
    let s = MdpState { locked: true, ..resting(3, 2, 7, 4) };
    assert_eq!(s.key(), "3,2,7,LB,b,4,1");
    assert_eq!(MdpState::from_key(&s.key()).unwrap(), s);
    assert!(MdpState::from_key("1,2,3,LB,z,1,0").is_err());
    assert!(MdpState::from_key("1,2,3,LB,a,1").is_err());
}

#[test]
fn rows_sum_to_one_and_absorb() {
    for variant in Variant::ALL {
        let spec = build_variant(&small_model(10), 10, 3, variant).unwrap();
        spec.validate().unwrap();
        assert!(spec.kernel.max_row_sum_error() < 1e-12);
    }
}

#[test]
fn unusable_row_fails_construction() {
    let mut m = small_model(4);
    m.usable[ReducedState { d: 2, last: OrderType::CS }.index()] = false;
    match build_mdp(&m, 4, 2) {
        Err(Error::UnusableRow { d, e }) => assert_eq!((d, e), (2, OrderType::CS)),
        other => panic!("{other:?}"),
    }
}

/// Exact value of a stationary policy on a hand-built kernel by solving
/// `(I - P) U = r` with Gaussian elimination.
fn policy_value(k: &Kernel, choice: &[usize]) -> Vec<f64> {
    let n = k.len();
    let mut a = vec![vec![0.0; n + 1]; n];
    for s in 0..n {
        a[s][s] = 1.0;
        if let Some(row) = k.rows_of(s).get(choice[s]) {
            a[s][n] = row.reward;
            for (t, p) in k.entries(row) {
                a[s][t] -= p;
            }
        }
    }
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        for r in 0..n {
            if r != c {
                let f = a[r][c] / a[c][c];
                for j in c..=n {
                    a[r][j] -= f * a[c][j];
                }
            }
        }
    }
    (0..n).map(|s| a[s][n] / a[s][s]).collect()
}

#[test]
fn value_iteration_matches_policy_enumeration() {
    // Three decision nodes with two actions each plus an absorbing node.
    let mut k = Kernel::new();
    k.push_node(0);
    k.push_row(Action::Wait, 0.2, &[(1, 0.5), (3, 0.5)]);
    k.push_row(Action::Market, -0.1, &[(2, 0.9), (3, 0.1)]);
    k.push_node(0);
    k.push_row(Action::Wait, 0.0, &[(0, 0.3), (2, 0.3), (3, 0.4)]);
    k.push_row(Action::PlaceLo, 1.0, &[(3, 1.0)]);
    k.push_node(0);
    k.push_row(Action::Wait, 1.5, &[(0, 0.2), (3, 0.8)]);
    k.push_row(Action::Cancel, -0.5, &[(1, 0.6), (3, 0.4)]);
    k.push_node(0);

    let mut best = [f64::NEG_INFINITY; 4];
    for code in 0..8 {
        let choice: Vec<usize> = (0..4).map(|s| (code >> s) & 1).collect();
        let u = policy_value(&k, &choice);
        for s in 0..4 {
            best[s] = best[s].max(u[s]);
        }
    }
    let v = value_iteration(&k, SolveOptions::with_tol(1e-13)).unwrap();
    for s in 0..4 {
        assert!((v.u[s] - best[s]).abs() < 1e-9, "{s}: {} vs {}", v.u[s], best[s]);
    }
    let pol = extract_policy(&k, &v.u);
    assert!(policy_residual(&k, &v.u, &pol) < 1e-9);
}

#[test]
fn single_period_solvers_agree_exactly() {
    let spec = build_mdp(&small_model(5), 5, 1).unwrap();
    let a = value_iteration(&spec.kernel, SolveOptions::default()).unwrap();
    let b = dynamic_value_iteration(&spec.kernel, SolveOptions::default()).unwrap();
    assert_eq!(a.u, b.u);
}

#[test]
fn solvers_agree_on_several_periods() {
    let spec = build_mdp(&small_model(5), 5, 3).unwrap();
    let opts = SolveOptions::with_tol(1e-11);
    let a = value_iteration(&spec.kernel, opts).unwrap();
    let b = dynamic_value_iteration(&spec.kernel, opts).unwrap();
    let gap = a.u.iter().zip(&b.u).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(gap < 1e-9, "{gap}");
    assert!(spec.kernel.bellman_residual(&b.u) < 1e-10);
}

#[test]
fn values_bounded_and_monotone_in_horizon() {
    let model = small_model(5);
    let spec = build_mdp(&model, 5, 3).unwrap();
    let sol = solve(&spec, SolveOptions::with_tol(1e-11)).unwrap();
    assert!(sol.values.u.iter().all(|&u| (-1.5..=1.5).contains(&u)));
    for (i, s) in spec.decision_states() {
        if s.m > 1 {
            let shorter = spec.state_index(&MdpState { m: s.m - 1, ..*s }).unwrap();
            assert!(sol.values.u[i] >= sol.values.u[shorter] - 1e-9, "{s}");
        }
        if matches!(s.status, Status::FilledLimit | Status::FilledMarket) {
            assert_eq!(sol.policy[i], Some(Action::Wait));
        }
    }
    let w: Vec<f64> = (1..=3).map(|m| spec.horizon_value(&model, &sol.values.u, m)).collect();
    assert!(w[0] <= w[1] + 1e-9 && w[1] <= w[2] + 1e-9, "{w:?}");
}

#[test]
fn restricted_variants_are_dominated() {
    let model = small_model(5);
    let opts = SolveOptions::with_tol(1e-11);
    let full = build_mdp(&model, 5, 2).unwrap();
    let u_full = solve(&full, opts).unwrap();
    for variant in [Variant::NoCo, Variant::NoMo] {
        let spec = build_variant(&model, 5, 2, variant).unwrap();
        let sol = solve(&spec, opts).unwrap();
        for (i, s) in spec.decision_states() {
            if s.locked {
                continue;
            }
            let j = full.state_index(s).unwrap();
            assert!(u_full.values.u[j] >= sol.values.u[i] - 1e-9, "{variant} {s}");
            if variant == Variant::NoMo {
                assert_ne!(sol.policy[i], Some(Action::Market));
            }
        }
    }
}

/// One market event from a state without a trader order, keyed by the next
/// `(bid, ask, e)` or by the depleted side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Key {
    Book(u32, u32, OrderType),
    Depleted(Side),
}

#[test]
fn waiting_dynamics_match_book_simulator() {
    let model = fixture::flow_model(&FixtureParams { k: 6, e_effect: 0.4, ..Default::default() });
    // A filled status tells the two depletion sides apart by their reward.
    let s = MdpState { status: Status::FilledLimit, ..MdpState::idle(2, 1, OrderType::CS, 1) };
    let mut exact: HashMap<Key, f64> = HashMap::new();
    for (o, p) in transitions(&model, &s, Action::Wait, Variant::NoCo) {
        let key = match o {
            Outcome::Next(Node::Decision(t)) => Key::Book(t.v_bid(), t.v_ask, t.e),
            Outcome::Done(r) if r > 0.0 => Key::Depleted(Side::Ask),
            Outcome::Done(_) => Key::Depleted(Side::Bid),
            other => panic!("{other:?}"),
        };
        *exact.entry(key).or_default() += p;
    }
    let n = 400_000;
    let mut seen: HashMap<Key, f64> = HashMap::new();
    let mut draws = Draws::for_path(11, 0);
    let book = BookState::new(2, 1, OrderType::CS);
    for _ in 0..n {
        let st = lobsim::step(&book, &model, None, &mut draws);
        let key = match st.event.depleted {
            Some(side) => Key::Depleted(side),
            None => Key::Book(st.state.v_bid, st.state.v_ask, st.event.etype),
        };
        *seen.entry(key).or_default() += 1.0 / n as f64;
    }
    assert_eq!(exact.len(), seen.len());
    for (key, p) in &exact {
        assert!((p - seen[key]).abs() < 0.005, "{key:?}: {p} vs {}", seen[key]);
    }
}

#[test]
fn policy_file_round_trip() {
    let spec = build_mdp(&small_model(3), 3, 2).unwrap();
    let sol = solve(&spec, SolveOptions::default()).unwrap();
    let file = PolicyFile::from_solution(&spec, &sol);
    let back = PolicyFile::from_json(&file.to_json().unwrap()).unwrap();
    assert_eq!(file, back);
    let s = MdpState::idle(2, 2, OrderType::LB, 2);
    assert_eq!(back.get(&s).unwrap().value, sol.value(&spec, &s).unwrap());
    assert!(matches!(back.get(&MdpState::idle(9, 2, OrderType::LB, 2)), Err(Error::MissingState(_))));
}

#[test]
fn region_grids_have_axes() {
    let spec = build_mdp(&small_model(3), 3, 2).unwrap();
    let sol = solve(&spec, SolveOptions::default()).unwrap();
    let g = idle_grid(&spec, &sol, OrderType::LB, 1).unwrap();
    let csv = g.to_csv();
    assert!(csv.starts_with("v_bid/v_ask,1,2,3\n1,"));
    assert_eq!(csv.lines().count(), 4);
    let c = cancel_slice(&spec, &sol, 2, OrderType::LB, 1).unwrap();
    assert_eq!(c.rows, vec![0, 1]);
    assert!(cancel_slice(&spec, &sol, 4, OrderType::LB, 1).is_err());
    assert!(idle_grid(&spec, &sol, OrderType::LB, 3).is_err());
}

#[test]
fn policy_file_rebuilds_solution() {
    let model = small_model(4);
    let spec = build_variant(&model, 4, 3, Variant::NoMo).unwrap();
    let sol = solve(&spec, SolveOptions::with_tol(1e-12)).unwrap();
    let file = PolicyFile::from_json(&PolicyFile::from_solution(&spec, &sol).to_json().unwrap()).unwrap();
    let back = file.to_solution(&spec).unwrap();
    for i in 0..spec.len() {
        assert!((back.values.u[i] - sol.values.u[i]).abs() < 1e-11, "node {:?}", spec.nodes[i]);
        if !spec.kernel.is_absorbing(i) {
            assert_eq!(back.policy[i], sol.policy[i]);
        }
    }
    assert!(back.values.residual < 1e-10);
    let other = build_variant(&model, 4, 2, Variant::NoMo).unwrap();
    assert!(file.to_solution(&other).is_err());
}

#[test]
fn stored_policy_gives_same_grids() {
    let model = small_model(4);
    let spec = build_mdp(&model, 4, 2).unwrap();
    let sol = solve(&spec, SolveOptions::default()).unwrap();
    let file = PolicyFile::from_solution(&spec, &sol);
    assert_eq!(file.idle_grid(OrderType::LS, 2).unwrap(), idle_grid(&spec, &sol, OrderType::LS, 2).unwrap());
    assert_eq!(file.cancel_slice(2, OrderType::MB, 1).unwrap(), cancel_slice(&spec, &sol, 2, OrderType::MB, 1).unwrap());
    assert!(file.idle_grid(OrderType::LS, 3).is_err());
}
