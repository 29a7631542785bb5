//! Strategy comparison: solve restricted variants of the placement problem
//! and replay every policy on the same simulated market.
//!
//! The trader simulation below is written against the book dynamics
//! directly rather than the MDP kernel, so agreement between simulated
//! rewards and solved values checks both.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{bin_of, BookState, OrderKind, OrderType, ReducedState, Side};
use crate::flow::FlowModel;
use crate::lobsim;
use crate::mdp::{self, reward, Action, Fill, MdpSpec, MdpState, Solution, SolveOptions, Status, Variant};
use crate::sampling::{inverse_cdf, Draws};

pub const TABLE_HEADER: &str =
    "Strategy,Mean reward,Std reward,Bought with LO %,Bought with MO %,LO cancelled %";

/// Row label used in the comparison table.
pub fn table_name(v: Variant) -> &'static str {
    match v {
        Variant::AllOrders => "All orders",
        Variant::NoCo => "No COs",
        Variant::NoMo => "No MOs",
    }
}

/// Build and solve one variant.
pub fn solve_variant(model: &FlowModel, k: u32, horizon: u32, variant: Variant, opts: SolveOptions) -> Result<(MdpSpec, Solution)> {
    let spec = mdp::build_variant(model, k, horizon, variant)?;
    let sol = mdp::solve(&spec, opts)?;
    Ok((spec, sol))
}

/// Outcome of one simulated path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathOutcome {
    pub reward: f64,
    pub by_limit: bool,
    pub placed: u32,
    pub cancelled: u32,
    /// Solved value of the path's initial state.
    pub initial_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub strategy: Variant,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub std_error: f64,
    /// Mean solved value over the simulated initial states.
    pub expected_value: f64,
    pub pct_lo: f64,
    pub pct_mo: f64,
    pub pct_cancelled: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl SimResult {
    fn from_outcomes(strategy: Variant, outcomes: &[PathOutcome], seed: u64) -> SimResult {
        let n = outcomes.len() as f64;
        let mean = outcomes.iter().map(|o| o.reward).sum::<f64>() / n;
        let var = if outcomes.len() > 1 {
            outcomes.iter().map(|o| (o.reward - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let lo = outcomes.iter().filter(|o| o.by_limit).count() as f64;
        let placed: u64 = outcomes.iter().map(|o| o.placed as u64).sum();
        let cancelled: u64 = outcomes.iter().map(|o| o.cancelled as u64).sum();
        SimResult {
            strategy,
            mean_reward: mean,
            std_reward: var.sqrt(),
            std_error: (var / n).sqrt(),
            expected_value: outcomes.iter().map(|o| o.initial_value).sum::<f64>() / n,
            pct_lo: 100.0 * lo / n,
            pct_mo: 100.0 * (n - lo) / n,
            pct_cancelled: if placed == 0 { 0.0 } else { 100.0 * cancelled as f64 / placed as f64 },
            n_paths: outcomes.len(),
            seed,
        }
    }
}

/// Market state at the start of a path: burn in until the first depletion
/// and start from the refilled book, with the depleting order as last type.
pub fn initial_book(model: &FlowModel, draws: &mut Draws) -> BookState {
    let mut state = lobsim::initial_state(model, draws);
    loop {
        let s = lobsim::step(&state, model, None, draws);
        state = s.state;
        if s.event.depleted.is_some() {
            return state;
        }
    }
}

struct Trader {
    front: u32,
    behind: u32,
    ask: u32,
    e: OrderType,
    status: Status,
    m: u32,
    locked: bool,
    placed: u32,
    cancelled: u32,
}

impl Trader {
    fn state(&self) -> MdpState {
        MdpState {
            v_front: self.front,
            v_behind: self.behind,
            v_ask: self.ask,
            e: self.e,
            status: self.status,
            m: self.m,
            locked: self.locked && self.status == Status::Idle,
        }
    }

    fn bid(&self) -> u32 {
        self.front + self.behind
    }
}

/// Play `policy` on the path `(seed, path)` for `horizon` periods.
pub fn simulate_path(
    model: &FlowModel,
    spec: &MdpSpec,
    sol: &Solution,
    horizon: u32,
    seed: u64,
    path: u64,
) -> Result<PathOutcome> {
    let mut draws = Draws::for_path(seed, path);
    let book = initial_book(model, &mut draws);
    let mut t = Trader {
        front: 0,
        behind: book.v_bid,
        ask: book.v_ask,
        e: book.last,
        status: Status::Idle,
        m: horizon,
        locked: false,
        placed: 0,
        cancelled: 0,
    };
    let missing = |s: MdpState| Error::MissingState(s.key());
    let initial_value = sol.value(spec, &t.state()).ok_or_else(|| missing(t.state()))?;
    loop {
        let s = t.state();
        let action = sol.action(spec, &s).ok_or_else(|| missing(s))?;
        if let Some((reward, by_limit)) = t.advance(action, spec.variant, model, &mut draws) {
            return Ok(PathOutcome { reward, by_limit, placed: t.placed, cancelled: t.cancelled, initial_value });
        }
    }
}

impl Trader {
    /// One decision epoch: the action, then a market event unless the
    /// action emptied a queue. Returns the reward and fill type once bought.
    fn advance(&mut self, action: Action, variant: Variant, model: &FlowModel, draws: &mut Draws) -> Option<(f64, bool)> {
        match action {
            Action::Wait => {}
            Action::PlaceLo => {
                self.front = self.bid() + 1;
                self.behind = 0;
                self.status = Status::Resting;
                self.e = OrderType::LB;
                self.placed += 1;
                self.locked |= variant == Variant::NoCo;
            }
            Action::Cancel => {
                self.behind = self.bid() - 1;
                self.front = 0;
                self.status = Status::Idle;
                self.e = OrderType::CB;
                self.cancelled += 1;
            }
            Action::Market => {
                self.ask -= 1;
                self.status = Status::FilledMarket;
                self.e = OrderType::MB;
            }
        }
        if self.bid() > 0 && self.ask > 0 {
            self.market_event(model, draws);
        }
        if self.bid() == 0 {
            self.deplete(Side::Bid, model, draws)
        } else if self.ask == 0 {
            self.deplete(Side::Ask, model, draws)
        } else {
            None
        }
    }

    fn market_event(&mut self, model: &FlowModel, draws: &mut Draws) {
        let k = model.k;
        let bid = self.bid();
        let others = bid - (self.status == Status::Resting) as u32;
        let p = model.row(ReducedState { d: bin_of(bid as u64, self.ask as u64), last: self.e });
        let (etype, _) = draws.order_type(p, |t| t != OrderType::CB || others > 0);
        let u_size = draws.uniform();
        let u_pick = draws.uniform();
        self.e = etype;
        match (etype.kind(), etype.queue()) {
            (OrderKind::Limit, Side::Bid) => self.behind += (bid < k) as u32,
            (OrderKind::Limit, Side::Ask) => self.ask += (self.ask < k) as u32,
            (OrderKind::Cancel, Side::Ask) => self.ask -= 1,
            (OrderKind::Cancel, Side::Bid) => {
                // uniform among the orders that are not the trader's
                let ahead = self.front.saturating_sub(1);
                if (u_pick * others as f64) < ahead as f64 {
                    self.front -= 1;
                } else {
                    self.behind -= 1;
                }
            }
            (OrderKind::Market, Side::Ask) => {
                self.ask -= inverse_cdf(model.mo_size(Side::Ask, self.ask), u_size) as u32 + 1;
            }
            (OrderKind::Market, Side::Bid) => {
                let size = inverse_cdf(model.mo_size(Side::Bid, bid), u_size) as u32 + 1;
                if self.status == Status::Resting && size >= self.front {
                    self.status = Status::FilledLimit;
                    self.front = 0;
                    self.behind = bid - size;
                } else if self.status == Status::Resting {
                    self.front -= size;
                } else {
                    self.behind -= size;
                }
            }
        }
    }

    fn deplete(&mut self, side: Side, model: &FlowModel, draws: &mut Draws) -> Option<(f64, bool)> {
        let towards = lobsim::depletion_direction(side);
        let mut direction = || if draws.uniform() < mdp::continuation(model, side) { towards } else { -towards };
        match self.status {
            Status::FilledLimit => Some((reward(Fill::Limit, direction()), true)),
            Status::FilledMarket => Some((reward(Fill::Market, direction()), false)),
            Status::Idle | Status::Resting if self.m == 1 => Some((reward(Fill::Forced, direction()), false)),
            Status::Idle | Status::Resting => {
                // an unfilled order is cancelled at the period boundary
                let (b, a) = draws.refill(&model.refill_bid, &model.refill_ask);
                self.m -= 1;
                self.front = 0;
                self.behind = b;
                self.ask = a;
                self.status = Status::Idle;
                None
            }
        }
    }
}

/// Simulate every policy in `bundle` on paths `0..n_paths` of `seed`.
pub fn run_simulation(
    model: &FlowModel,
    bundle: &[(&MdpSpec, &Solution)],
    n_paths: usize,
    horizon: u32,
    seed: u64,
) -> Result<Vec<SimResult>> {
    bundle
        .iter()
        .map(|&(spec, sol)| {
            if sol.policy.len() != spec.len() || spec.horizon < horizon {
                return Err(Error::InvalidArgument(format!("{} policy not solved for horizon {horizon}", spec.variant)));
            }
            let outcomes = (0..n_paths as u64)
                .into_par_iter()
                .map(|p| simulate_path(model, spec, sol, horizon, seed, p))
                .collect::<Result<Vec<_>>>()?;
            Ok(SimResult::from_outcomes(spec.variant, &outcomes, seed))
        })
        .collect()
}

/// Comparison table as CSV with the columns of [`TABLE_HEADER`].
pub fn comparison_table(results: &[SimResult]) -> String {
    let mut out = String::from(TABLE_HEADER);
    out.push('\n');
    for r in results {
        out.push_str(&format!(
            "{},{:.4},{:.4},{:.2},{:.2},{:.2}\n",
            table_name(r.strategy),
            r.mean_reward,
            r.std_reward,
            r.pct_lo,
            r.pct_mo,
            r.pct_cancelled
        ));
    }
    out
}

pub fn results_to_json(results: &[SimResult]) -> Result<String> {
    Ok(serde_json::to_string_pretty(results)?)
}
