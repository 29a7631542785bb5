//! Order-placement MDP: a trader must buy one share within `M` mid-price
//! changes and may wait, post a limit order at the bid, cancel it, or buy at
//! the ask.
//!
//! Decision states carry the trader-centric book (`v_front`, `v_behind`,
//! `v_ask`), the last order type, the trader's status and the periods left.
//! Without a resting order `v_front` is 0 and `v_behind` holds the whole bid.
//! One transition applies the trader's action and, unless that depleted a
//! queue, one market event drawn from the flow model. A depletion realizes
//! the reward of a past purchase, forces a market order in the last period,
//! or starts the next period through a chance node that refills both
//! queues. The mid price continues in the direction of the depleted side
//! with the model's continuation probability and reverses otherwise.

mod io;
mod regions;
mod solve;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{bin_of, OrderKind, OrderType, ReducedState, Side};
use crate::flow::FlowModel;
use crate::lobsim::depletion_direction;

pub use io::{PolicyEntry, PolicyFile, POLICY_VERSION};
pub use regions::{cancel_fraction, cancel_slice, idle_grid, market_containment, RegionGrid};
pub use solve::{
    dynamic_value_iteration, extract_policy, policy_residual, value_iteration, Action, ActionRow, Kernel,
    SolveOptions, ValueFunction, DEFAULT_MAX_ITERS, DEFAULT_TOL, TIE_EPS,
};

/// How the share was (or will be) bought.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fill {
    Limit,
    Market,
    Forced,
}

/// Reward in ticks relative to the mid price before the purchase, given the
/// direction of the mid-price change that follows it.
pub fn reward(fill: Fill, direction: i8) -> f64 {
    match (fill, direction > 0) {
        (Fill::Market, true) => 0.5,
        (Fill::Market, false) => -1.5,
        (Fill::Limit, true) => 1.5,
        (Fill::Limit, false) => -0.5,
        (Fill::Forced, _) => -0.5,
    }
}

/// Probability that the mid price ends up moving towards the depleted side.
pub fn continuation(model: &FlowModel, side: Side) -> f64 {
    match side {
        Side::Ask => model.theta_up.unwrap_or(model.theta),
        Side::Bid => model.theta_down.unwrap_or(model.theta),
    }
}

/// Expected reward of a purchase settled by a depletion of `side`.
pub fn settled_reward(model: &FlowModel, fill: Fill, side: Side) -> f64 {
    let d = depletion_direction(side);
    let c = continuation(model, side);
    c * reward(fill, d) + (1.0 - c) * reward(fill, -d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Status {
    /// No active limit order.
    Idle,
    /// Limit order resting at the bid.
    Resting,
    /// Bought through the limit order this period.
    FilledLimit,
    /// Bought through a market order this period.
    FilledMarket,
}

impl Status {
    pub fn letter(self) -> char {
        match self {
            Status::Idle => 'a',
            Status::Resting => 'b',
            Status::FilledLimit => 'c',
            Status::FilledMarket => 'd',
        }
    }

    pub fn from_letter(c: char) -> Option<Status> {
        Some(match c {
            'a' => Status::Idle,
            'b' => Status::Resting,
            'c' => Status::FilledLimit,
            'd' => Status::FilledMarket,
            _ => return None,
        })
    }
}

/// Which actions the trader may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Variant {
    AllOrders,
    /// No cancellations, and no market order once a limit order was placed.
    NoCo,
    /// No market orders except the forced one.
    NoMo,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::AllOrders, Variant::NoCo, Variant::NoMo];

    pub fn label(self) -> &'static str {
        match self {
            Variant::AllOrders => "ALL_ORDERS",
            Variant::NoCo => "NO_CO",
            Variant::NoMo => "NO_MO",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Variant> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "ALL_ORDERS" | "ALL" => Ok(Variant::AllOrders),
            "NO_CO" => Ok(Variant::NoCo),
            "NO_MO" => Ok(Variant::NoMo),
            _ => Err(Error::InvalidArgument(format!("unknown variant {s:?}"))),
        }
    }
}

/// Decision state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MdpState {
    /// Bid orders ahead of and including the trader's; 0 without a resting order.
    pub v_front: u32,
    pub v_behind: u32,
    pub v_ask: u32,
    pub e: OrderType,
    pub status: Status,
    /// Periods remaining, at least 1.
    pub m: u32,
    /// A limit order was placed in an earlier period (tracked for `NoCo` only).
    pub locked: bool,
}

impl MdpState {
    pub fn idle(v_bid: u32, v_ask: u32, e: OrderType, m: u32) -> MdpState {
        MdpState { v_front: 0, v_behind: v_bid, v_ask, e, status: Status::Idle, m, locked: false }
    }

    pub fn v_bid(&self) -> u32 {
        self.v_front + self.v_behind
    }

    /// `"vf,vb,va,e,i,m,l"`.
    pub fn key(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.v_front,
            self.v_behind,
            self.v_ask,
            self.e,
            self.status.letter(),
            self.m,
            self.locked as u8
        )
    }

    pub fn from_key(key: &str) -> Result<MdpState> {
        let bad = || Error::InvalidArgument(format!("malformed state key {key:?}"));
        let f: Vec<&str> = key.split(',').collect();
        if f.len() != 7 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<u32>().map_err(|_| bad());
        let mut letter = f[4].chars();
        let status = match (letter.next(), letter.next()) {
            (Some(c), None) => Status::from_letter(c).ok_or_else(bad)?,
            _ => return Err(bad()),
        };
        Ok(MdpState {
            v_front: num(f[0])?,
            v_behind: num(f[1])?,
            v_ask: num(f[2])?,
            e: f[3].parse().map_err(|_| bad())?,
            status,
            m: num(f[5])?,
            locked: match f[6] {
                "0" => false,
                "1" => true,
                _ => return Err(bad()),
            },
        })
    }

    pub fn admissible(&self, variant: Variant, k: u32) -> Vec<Action> {
        let mut out = vec![Action::Wait];
        match self.status {
            Status::Idle => {
                if self.v_bid() < k {
                    out.push(Action::PlaceLo);
                }
                let market = match variant {
                    Variant::AllOrders => true,
                    Variant::NoCo => !self.locked,
                    Variant::NoMo => false,
                };
                if market {
                    out.push(Action::Market);
                }
            }
            Status::Resting => {
                if variant != Variant::NoCo {
                    out.push(Action::Cancel);
                }
            }
            Status::FilledLimit | Status::FilledMarket => {}
        }
        out
    }
}

impl fmt::Display for MdpState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

/// Kernel node: a decision state, the refill chance node that opens a
/// period with `m` periods left, or the single absorbing node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Node {
    Decision(MdpState),
    Refill { e: OrderType, m: u32, locked: bool },
    Terminal,
}

impl Node {
    pub fn is_chance(&self) -> bool {
        matches!(self, Node::Refill { .. })
    }
}

/// Where one branch of a transition leads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    Next(Node),
    /// Absorbed with the given reward.
    Done(f64),
}

/// Book after the action, before the market event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Book {
    front: u32,
    behind: u32,
    ask: u32,
    status: Status,
}

impl Book {
    fn of(s: &MdpState) -> Book {
        Book { front: s.v_front, behind: s.v_behind, ask: s.v_ask, status: s.status }
    }

    fn bid(&self) -> u32 {
        self.front + self.behind
    }
}

/// The decision problem for one variant.
#[derive(Debug, Clone)]
pub struct MdpSpec {
    pub k: u32,
    pub horizon: u32,
    pub variant: Variant,
    pub nodes: Vec<Node>,
    pub index: HashMap<Node, u32>,
    pub kernel: Kernel,
}

/// Full action set.
pub fn build_mdp(model: &FlowModel, k: u32, horizon: u32) -> Result<MdpSpec> {
    build_variant(model, k, horizon, Variant::AllOrders)
}

pub fn build_variant(model: &FlowModel, k: u32, horizon: u32, variant: Variant) -> Result<MdpSpec> {
    if k == 0 || horizon == 0 {
        return Err(Error::InvalidArgument("k and the horizon must be positive".into()));
    }
    if model.k != k {
        return Err(Error::InvalidArgument(format!("flow model has k = {}, requested {k}", model.k)));
    }
    model.check_usable()?;

    let nodes = enumerate(k, horizon, variant);
    let index: HashMap<Node, u32> = nodes.iter().enumerate().map(|(i, n)| (*n, i as u32)).collect();
    let mut kernel = Kernel::new();
    let mut entries: Vec<(u32, f64)> = Vec::new();
    for node in &nodes {
        match *node {
            Node::Terminal => {
                kernel.push_node(0);
            }
            Node::Refill { e, m, locked } => {
                kernel.push_node(m);
                entries.clear();
                for (b, pb) in model.refill_bid.iter().enumerate() {
                    for (a, pa) in model.refill_ask.iter().enumerate() {
                        let p = pb * pa;
                        if p > 0.0 {
                            let s = MdpState { locked, ..MdpState::idle(b as u32 + 1, a as u32 + 1, e, m) };
                            entries.push((index[&Node::Decision(s)], p));
                        }
                    }
                }
                kernel.push_row(Action::Wait, 0.0, &entries);
            }
            Node::Decision(s) => {
                kernel.push_node(s.m);
                for action in s.admissible(variant, k) {
                    let (reward, merged) = collapse(&transitions(model, &s, action, variant), &index);
                    kernel.push_row(action, reward, &merged);
                }
            }
        }
    }
    Ok(MdpSpec { k, horizon, variant, nodes, index, kernel })
}

/// Expected reward and merged successor distribution of a branch list.
fn collapse(outcomes: &[(Outcome, f64)], index: &HashMap<Node, u32>) -> (f64, Vec<(u32, f64)>) {
    let mut reward = 0.0;
    let mut merged: Vec<(u32, f64)> = Vec::with_capacity(outcomes.len());
    for &(o, p) in outcomes {
        let node = match o {
            Outcome::Done(r) => {
                reward += p * r;
                Node::Terminal
            }
            Outcome::Next(n) => n,
        };
        merged.push((index[&node], p));
    }
    merged.sort_by_key(|&(n, _)| n);
    merged.dedup_by(|b, a| {
        if a.0 == b.0 {
            a.1 += b.1;
            true
        } else {
            false
        }
    });
    (reward, merged)
}

fn enumerate(k: u32, horizon: u32, variant: Variant) -> Vec<Node> {
    let lock_flags: &[bool] = if variant == Variant::NoCo { &[false, true] } else { &[false] };
    let mut nodes = vec![Node::Terminal];
    for m in 1..=horizon {
        for e in OrderType::ALL {
            for &locked in lock_flags {
                if m < horizon {
                    nodes.push(Node::Refill { e, m, locked });
                }
                for bid in 1..=k {
                    for ask in 1..=k {
                        let s = MdpState { locked, ..MdpState::idle(bid, ask, e, m) };
                        nodes.push(Node::Decision(s));
                    }
                }
            }
            for front in 1..=k {
                for behind in 0..=k - front {
                    for ask in 1..=k {
                        let s = MdpState { v_front: front, v_behind: behind, v_ask: ask, e, status: Status::Resting, m, locked: false };
                        nodes.push(Node::Decision(s));
                    }
                }
            }
            for status in [Status::FilledLimit, Status::FilledMarket] {
                for bid in 1..=k {
                    for ask in 1..=k {
                        let s = MdpState { status, ..MdpState::idle(bid, ask, e, m) };
                        nodes.push(Node::Decision(s));
                    }
                }
            }
        }
    }
    nodes
}

#[derive(Clone, Copy)]
struct Ctx<'a> {
    model: &'a FlowModel,
    variant: Variant,
}

/// Resolve a queue depletion caused by `e` with the trader in `status`.
fn deplete(side: Side, status: Status, e: OrderType, s: &MdpState, cx: Ctx) -> Outcome {
    match status {
        Status::FilledLimit => Outcome::Done(settled_reward(cx.model, Fill::Limit, side)),
        Status::FilledMarket => Outcome::Done(settled_reward(cx.model, Fill::Market, side)),
        Status::Idle | Status::Resting if s.m == 1 => Outcome::Done(settled_reward(cx.model, Fill::Forced, side)),
        Status::Idle | Status::Resting => {
            let locked = cx.variant == Variant::NoCo && (s.locked || status == Status::Resting);
            Outcome::Next(Node::Refill { e, m: s.m - 1, locked })
        }
    }
}

fn settle(book: Book, e: OrderType, s: &MdpState, cx: Ctx) -> Outcome {
    if book.bid() == 0 {
        deplete(Side::Bid, book.status, e, s, cx)
    } else if book.ask == 0 {
        deplete(Side::Ask, book.status, e, s, cx)
    } else {
        Outcome::Next(Node::Decision(MdpState {
            v_front: book.front,
            v_behind: book.behind,
            v_ask: book.ask,
            e,
            status: book.status,
            m: s.m,
            locked: s.locked && book.status == Status::Idle,
        }))
    }
}

/// Apply the trader's action. Returns the book and last type after it, or
/// the outcome if the action itself depleted a queue.
fn apply_action(s: &MdpState, action: Action, cx: Ctx) -> std::result::Result<(Book, OrderType), Outcome> {
    let mut b = Book::of(s);
    let e = match action {
        Action::Wait => return Ok((b, s.e)),
        Action::PlaceLo => {
            b.front = b.bid() + 1;
            b.behind = 0;
            b.status = Status::Resting;
            OrderType::LB
        }
        Action::Cancel => {
            b.behind = b.bid() - 1;
            b.front = 0;
            b.status = Status::Idle;
            OrderType::CB
        }
        Action::Market => {
            b.ask -= 1;
            b.status = Status::FilledMarket;
            OrderType::MB
        }
    };
    if b.bid() == 0 || b.ask == 0 {
        Err(settle(b, e, s, cx))
    } else {
        Ok((b, e))
    }
}

/// All branches of one transition with their probabilities.
pub fn transitions(model: &FlowModel, s: &MdpState, action: Action, variant: Variant) -> Vec<(Outcome, f64)> {
    let cx = Ctx { model, variant };
    let (book, e) = match apply_action(s, action, cx) {
        Ok(x) => x,
        Err(o) => return vec![(o, 1.0)],
    };
    let k = model.k;
    let q = book.bid();
    let others = q - (book.status == Status::Resting) as u32;
    let p = model.row(ReducedState { d: bin_of(q as u64, book.ask as u64), last: e });
    let allowed = |t: OrderType| t != OrderType::CB || others > 0;
    let total: f64 = OrderType::ALL.iter().filter(|&&t| allowed(t)).map(|t| p[t.index()]).sum();

    let mut out = Vec::new();
    for t in OrderType::ALL {
        let pt = p[t.index()];
        if pt <= 0.0 || !allowed(t) {
            continue;
        }
        let pt = pt / total;
        let mut emit = |b: Book, w: f64| {
            if w > 0.0 {
                out.push((settle(b, t, s, cx), pt * w));
            }
        };
        match (t.kind(), t.queue()) {
            (OrderKind::Limit, Side::Bid) => emit(Book { behind: book.behind + (q < k) as u32, ..book }, 1.0),
            (OrderKind::Limit, Side::Ask) => emit(Book { ask: book.ask + (book.ask < k) as u32, ..book }, 1.0),
            (OrderKind::Cancel, Side::Ask) => emit(Book { ask: book.ask - 1, ..book }, 1.0),
            (OrderKind::Cancel, Side::Bid) => {
                let ahead = book.front.saturating_sub(1);
                if ahead > 0 {
                    emit(Book { front: book.front - 1, ..book }, ahead as f64 / others as f64);
                }
                if book.behind > 0 {
                    emit(Book { behind: book.behind - 1, ..book }, book.behind as f64 / others as f64);
                }
            }
            (OrderKind::Market, Side::Ask) => {
                for (i, &w) in model.mo_size(Side::Ask, book.ask).iter().enumerate() {
                    emit(Book { ask: book.ask - (i as u32 + 1), ..book }, w);
                }
            }
            (OrderKind::Market, Side::Bid) => {
                for (i, &w) in model.mo_size(Side::Bid, q).iter().enumerate() {
                    emit(sell_into(book, i as u32 + 1), w);
                }
            }
        }
    }
    out
}

/// Market sell of `size` against the bid; fills a resting order it reaches.
fn sell_into(book: Book, size: u32) -> Book {
    let rest = book.bid() - size;
    if book.status == Status::Resting {
        if size >= book.front {
            Book { front: 0, behind: rest, status: Status::FilledLimit, ..book }
        } else {
            Book { front: book.front - size, ..book }
        }
    } else {
        Book { front: 0, behind: rest, ..book }
    }
}

impl MdpSpec {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_index(&self, node: &Node) -> Option<usize> {
        self.index.get(node).map(|&i| i as usize)
    }

    pub fn state_index(&self, s: &MdpState) -> Option<usize> {
        self.node_index(&Node::Decision(*s))
    }

    pub fn decision_states(&self) -> impl Iterator<Item = (usize, &MdpState)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n {
            Node::Decision(s) => Some((i, s)),
            _ => None,
        })
    }

    /// Check every row sums to one and absorption is reachable everywhere.
    pub fn validate(&self) -> Result<()> {
        let err = self.kernel.max_row_sum_error();
        if err > 1e-12 {
            return Err(Error::InvalidArgument(format!("transition row sums off by {err:e}")));
        }
        if let Some(&s) = self.kernel.unreachable_absorption().first() {
            return Err(Error::InvalidArgument(format!("no absorbing node reachable from {:?}", self.nodes[s])));
        }
        Ok(())
    }

    /// Expected value with `m` periods left when the book starts freshly
    /// refilled and the last type is uniform over the six types.
    pub fn horizon_value(&self, model: &FlowModel, u: &[f64], m: u32) -> f64 {
        let mut acc = 0.0;
        for e in OrderType::ALL {
            for (b, pb) in model.refill_bid.iter().enumerate() {
                for (a, pa) in model.refill_ask.iter().enumerate() {
                    let s = MdpState::idle(b as u32 + 1, a as u32 + 1, e, m);
                    acc += pb * pa * u[self.state_index(&s).expect("idle state enumerated")];
                }
            }
        }
        acc / OrderType::ALL.len() as f64
    }
}

/// Solver output for one spec.
#[derive(Debug, Clone)]
pub struct Solution {
    pub values: ValueFunction,
    pub policy: Vec<Option<Action>>,
}

impl Solution {
    pub fn value(&self, spec: &MdpSpec, s: &MdpState) -> Option<f64> {
        spec.state_index(s).map(|i| self.values.u[i])
    }

    pub fn action(&self, spec: &MdpSpec, s: &MdpState) -> Option<Action> {
        spec.state_index(s).and_then(|i| self.policy[i])
    }
}

/// Solve with the stratified algorithm and extract the greedy policy.
pub fn solve(spec: &MdpSpec, opts: SolveOptions) -> Result<Solution> {
    let values = dynamic_value_iteration(&spec.kernel, opts)?;
    let policy = extract_policy(&spec.kernel, &values.u);
    Ok(Solution { values, policy })
}

#[cfg(test)]
mod tests;
