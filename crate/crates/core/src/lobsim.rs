//! Event-time simulation of the best-quote book under a [`FlowModel`].
//!
//! Each step draws the next order type from `p(d, e)`, applies it to the
//! queues (unit-size limit orders and cancellations, market orders sized by
//! the queue they hit), and resolves a depletion by choosing the mid-price
//! direction and refilling both queues.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::events::{BookState, L1Event, OrderKind, OrderType, Side};
use crate::flow::FlowModel;
use crate::sampling::Draws;

/// Quotes of the first row of an exported path.
pub const EXPORT_BID_PX: i64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimEvent {
    pub etype: OrderType,
    pub size: u32,
    pub depleted: Option<Side>,
    /// +1 / -1 when the event caused a mid-price change.
    pub direction: Option<i8>,
}

impl SimEvent {
    pub fn mirror(&self) -> SimEvent {
        SimEvent {
            etype: self.etype.mirror(),
            size: self.size,
            depleted: self.depleted.map(Side::opposite),
            direction: self.direction.map(|d| -d),
        }
    }
}

/// Result of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub event: SimEvent,
    pub state: BookState,
    /// A cancellation against an empty queue was drawn and renormalized away.
    pub renormalized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimPath {
    pub initial: BookState,
    pub steps: Vec<(SimEvent, BookState)>,
    pub mid_changes: Vec<i8>,
    pub renormalized: u64,
}

impl SimPath {
    pub fn mirror(&self) -> SimPath {
        SimPath {
            initial: self.initial.mirror(),
            steps: self.steps.iter().map(|(e, s)| (e.mirror(), s.mirror())).collect(),
            mid_changes: self.mid_changes.iter().map(|d| -d).collect(),
            renormalized: self.renormalized,
        }
    }

    /// Canonical event rows with unit timestamp spacing. The first row
    /// carries the initial book; a row that changes the mid price carries
    /// the new quotes and the refilled queues.
    pub fn to_events(&self) -> Vec<L1Event> {
        let mut bid = EXPORT_BID_PX;
        let mut out = Vec::with_capacity(self.steps.len() + 1);
        out.push(L1Event {
            ts_ns: 0,
            etype: self.initial.last,
            size: 1,
            bid_px: bid,
            ask_px: bid + 1,
            bid_vol: self.initial.v_bid as u64,
            ask_vol: self.initial.v_ask as u64,
        });
        for (i, (ev, st)) in self.steps.iter().enumerate() {
            if let Some(d) = ev.direction {
                bid += d as i64;
            }
            out.push(L1Event {
                ts_ns: i as i64 + 1,
                etype: ev.etype,
                size: ev.size as u64,
                bid_px: bid,
                ask_px: bid + 1,
                bid_vol: st.v_bid as u64,
                ask_vol: st.v_ask as u64,
            });
        }
        out
    }
}

/// Mid-price direction implied by which queue emptied.
pub fn depletion_direction(side: Side) -> i8 {
    match side {
        Side::Ask => 1,
        Side::Bid => -1,
    }
}

/// Resolve a depletion: pick the mid-price direction and refill both queues.
///
/// Without a previous change the direction is the one implied by the
/// depleted side. Otherwise it repeats `prev_direction` with probability
/// `theta` and reverses it otherwise.
pub fn depletion_refill(
    depleted: Side,
    prev_direction: Option<i8>,
    model: &FlowModel,
    draws: &mut Draws,
) -> (i8, u32, u32) {
    let u = draws.uniform();
    let direction = match prev_direction {
        None => depletion_direction(depleted),
        Some(p) if u < model.theta => p,
        Some(p) => -p,
    };
    let (b, a) = draws.refill(&model.refill_bid, &model.refill_ask);
    (direction, b, a)
}

/// Draw and apply one event.
pub fn step(state: &BookState, model: &FlowModel, prev_direction: Option<i8>, draws: &mut Draws) -> Step {
    let k = model.k;
    let p = model.row(state.reduced());
    let (etype, renormalized) = draws.order_type(p, |t| t.kind() != OrderKind::Cancel || state.queue(t.queue()) > 0);
    let u_size = draws.uniform();

    let mut next = BookState { last: etype, ..*state };
    let side = etype.queue();
    let q = state.queue(side);
    let size = match etype.kind() {
        OrderKind::Limit => {
            if q < k {
                set_queue(&mut next, side, q + 1);
            }
            1
        }
        OrderKind::Cancel => {
            set_queue(&mut next, side, q - 1);
            1
        }
        OrderKind::Market => {
            let s = crate::sampling::inverse_cdf(model.mo_size(side, q), u_size) as u32 + 1;
            set_queue(&mut next, side, q - s);
            s
        }
    };

    let mut event = SimEvent { etype, size, depleted: None, direction: None };
    if next.queue(side) == 0 {
        let (dir, b, a) = depletion_refill(side, prev_direction, model, draws);
        event.depleted = Some(side);
        event.direction = Some(dir);
        next.v_bid = b;
        next.v_ask = a;
    }
    Step { event, state: next, renormalized }
}

fn set_queue(s: &mut BookState, side: Side, v: u32) {
    match side {
        Side::Bid => s.v_bid = v,
        Side::Ask => s.v_ask = v,
    }
}

/// Initial book: queues from the refill distributions, uniform last type.
pub fn initial_state(model: &FlowModel, draws: &mut Draws) -> BookState {
    let last = draws.any_order_type();
    let (v_bid, v_ask) = draws.refill(&model.refill_bid, &model.refill_ask);
    BookState { v_bid, v_ask, last }
}

/// Run one path until the `n_mid_changes`-th mid-price change.
pub fn simulate_with(model: &FlowModel, n_mid_changes: usize, draws: &mut Draws) -> SimPath {
    assert!(n_mid_changes >= 1, "need at least one mid-price change");
    let initial = initial_state(model, draws);
    let mut state = initial;
    let mut steps = Vec::new();
    let mut mid_changes = Vec::with_capacity(n_mid_changes);
    let mut renormalized = 0;
    while mid_changes.len() < n_mid_changes {
        let s = step(&state, model, mid_changes.last().copied(), draws);
        renormalized += s.renormalized as u64;
        if let Some(d) = s.event.direction {
            mid_changes.push(d);
        }
        state = s.state;
        steps.push((s.event, s.state));
    }
    SimPath { initial, steps, mid_changes, renormalized }
}

/// Deterministic in `(model, seed)`; uses path stream 0.
pub fn simulate(model: &FlowModel, n_mid_changes: usize, seed: u64) -> SimPath {
    simulate_with(model, n_mid_changes, &mut Draws::for_path(seed, 0))
}

/// Independent paths, path `i` driven by stream `(seed, i)`.
pub fn simulate_many(model: &FlowModel, n_paths: usize, n_mid_changes: usize, seed: u64) -> Vec<SimPath> {
    (0..n_paths)
        .into_par_iter()
        .map(|i| simulate_with(model, n_mid_changes, &mut Draws::for_path(seed, i as u64)))
        .collect()
}

/// Simulate `n_events` events as one continuous stream and export it.
pub fn simulate_events(model: &FlowModel, n_events: usize, seed: u64) -> Vec<L1Event> {
    let mut draws = Draws::for_path(seed, 0);
    let initial = initial_state(model, &mut draws);
    let mut state = initial;
    let mut prev = None;
    let mut steps = Vec::with_capacity(n_events);
    let mut mid_changes = Vec::new();
    while steps.len() < n_events {
        let s = step(&state, model, prev, &mut draws);
        if let Some(d) = s.event.direction {
            prev = Some(d);
            mid_changes.push(d);
        }
        state = s.state;
        steps.push((s.event, s.state));
    }
    SimPath { initial, steps, mid_changes, renormalized: 0 }.to_events()
}
