//! Built-in synthetic flow model used for demos, fixtures and closed-loop
//! tests.
//!
//! For imbalance bin `d` let `t = (d - 3) / 2`, so `t` runs from -1 at a
//! sell-heavy book to +1 at a buy-heavy one. Unnormalized next-type weights:
//!
//! | type | weight              |
//! |------|---------------------|
//! | MB   | 0.10 (1 + 0.7 t)    |
//! | MS   | 0.10 (1 - 0.7 t)    |
//! | LB   | 0.22 (1 + 0.2 t)    |
//! | LS   | 0.22 (1 - 0.2 t)    |
//! | CB   | 0.18 (1 - 0.2 t)    |
//! | CS   | 0.18 (1 + 0.2 t)    |
//!
//! The weight of the type equal to the last order `e` is multiplied by
//! `1 + e_effect` before normalizing; `e_effect = 0` gives a model in which
//! the next type depends on the imbalance bin only. Market order sizes are
//! geometric with ratio 1/2 truncated at the queue size, and both queues
//! refill from the tent distribution `w(v) = min(v, k + 1 - v)` on `1..=k`.
//! The model is mirror symmetric.

use crate::events::{L1Event, OrderType, ReducedState, N_REDUCED, N_TYPES};
use crate::flow::FlowModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixtureParams {
    pub k: u32,
    pub theta: f64,
    pub e_effect: f64,
}

impl Default for FixtureParams {
    fn default() -> Self {
        FixtureParams { k: 10, theta: 0.81, e_effect: 0.5 }
    }
}

impl FixtureParams {
    /// Same model without dependence on the last order.
    pub fn null(self) -> Self {
        FixtureParams { e_effect: 0.0, ..self }
    }
}

const BASE: [(f64, f64); N_TYPES] = [
    (0.10, 0.7),  // MB
    (0.10, -0.7), // MS
    (0.22, 0.2),  // LB
    (0.22, -0.2), // LS
    (0.18, -0.2), // CB
    (0.18, 0.2),  // CS
];

pub fn flow_row(d: u8, e: OrderType, e_effect: f64) -> [f64; N_TYPES] {
    let t = (d as f64 - 3.0) / 2.0;
    let mut w = [0.0; N_TYPES];
    for f in OrderType::ALL {
        let (base, slope) = BASE[f.index()];
        w[f.index()] = base * (1.0 + slope * t) * if f == e { 1.0 + e_effect } else { 1.0 };
    }
    let total: f64 = w.iter().sum();
    w.map(|x| x / total)
}

pub fn flow_model(params: &FixtureParams) -> FlowModel {
    let k = params.k as usize;
    assert!(k >= 1);
    let mut probs = vec![[0.0; N_TYPES]; N_REDUCED];
    for rs in ReducedState::all() {
        probs[rs.index()] = flow_row(rs.d, rs.last, params.e_effect);
    }
    let geometric = |q: usize| {
        let w: Vec<f64> = (0..q).map(|s| 0.5f64.powi(s as i32)).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|x| x / total).collect::<Vec<f64>>()
    };
    let tent: Vec<f64> = (1..=k).map(|v| v.min(k + 1 - v) as f64).collect();
    let total: f64 = tent.iter().sum();
    let refill: Vec<f64> = tent.into_iter().map(|x| x / total).collect();
    FlowModel {
        k: params.k,
        factor: 1.0,
        probs,
        usable: vec![true; N_REDUCED],
        mo_size_bid: (1..=k).map(geometric).collect(),
        mo_size_ask: (1..=k).map(geometric).collect(),
        refill_bid: refill.clone(),
        refill_ask: refill,
        theta: params.theta,
        theta_up: Some(params.theta),
        theta_down: Some(params.theta),
    }
}

/// Shares per volume unit in exported fixture streams, so estimation has a
/// non-trivial normalization to undo.
pub const LOT_SIZE: u64 = 100;

/// Multiply order sizes and queue volumes by `lot`.
pub fn scale_stream(events: &[L1Event], lot: u64) -> Vec<L1Event> {
    events
        .iter()
        .map(|e| L1Event { size: e.size * lot, bid_vol: e.bid_vol * lot, ask_vol: e.ask_vol * lot, ..*e })
        .collect()
}

/// Largest total-variation distance between two rows sharing an imbalance bin.
pub fn max_row_gap(model: &FlowModel) -> f64 {
    let mut best: f64 = 0.0;
    for d in 1..=5u8 {
        for a in OrderType::ALL {
            for b in OrderType::ALL {
                let pa = model.row(ReducedState { d, last: a });
                let pb = model.row(ReducedState { d, last: b });
                let tv: f64 = pa.iter().zip(pb).map(|(x, y)| (x - y).abs()).sum::<f64>() / 2.0;
                best = best.max(tv);
            }
        }
    }
    best
}
