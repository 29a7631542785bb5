//! Generic finite MDP kernel in compressed row form, Jacobi value iteration,
//! the stratified (period-by-period) variant, and policy extraction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITERS: usize = 100_000;
/// Two Q-values closer than this are treated as tied.
pub const TIE_EPS: f64 = 1e-12;

/// Trader actions, in tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Wait,
    PlaceLo,
    Cancel,
    Market,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Wait, Action::PlaceLo, Action::Cancel, Action::Market];

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Wait => "WAIT",
            Action::PlaceLo => "PLACE_LO",
            Action::Cancel => "CANCEL",
            Action::Market => "MARKET",
        }
    }
}

impl std::str::FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Action> {
        Action::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown action {s:?}")))
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One admissible action at a node: expected immediate reward plus the
/// successor distribution `next[start..end]`, `prob[start..end]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionRow {
    pub action: Action,
    pub reward: f64,
    pub start: u32,
    pub end: u32,
}

/// Transition structure. Nodes without rows are absorbing with value 0.
/// `stratum[s]` groups nodes for the stratified solver; transitions may only
/// lead to the same or a lower stratum.
#[derive(Debug, Clone, Default)]
pub struct Kernel {
    pub node_rows: Vec<u32>,
    pub rows: Vec<ActionRow>,
    pub next: Vec<u32>,
    pub prob: Vec<f64>,
    pub stratum: Vec<u32>,
}

impl Kernel {
    pub fn new() -> Self {
        Kernel { node_rows: vec![0], ..Default::default() }
    }

    /// Start a node. Rows pushed afterwards belong to it.
    pub fn push_node(&mut self, stratum: u32) -> usize {
        self.stratum.push(stratum);
        self.node_rows.push(self.rows.len() as u32);
        self.stratum.len() - 1
    }

    /// Add an action row to the most recently pushed node.
    pub fn push_row(&mut self, action: Action, reward: f64, entries: &[(u32, f64)]) {
        let start = self.next.len() as u32;
        for &(n, p) in entries {
            self.next.push(n);
            self.prob.push(p);
        }
        self.rows.push(ActionRow { action, reward, start, end: self.next.len() as u32 });
        *self.node_rows.last_mut().expect("push_node first") = self.rows.len() as u32;
    }

    pub fn len(&self) -> usize {
        self.stratum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stratum.is_empty()
    }

    pub fn rows_of(&self, s: usize) -> &[ActionRow] {
        &self.rows[self.node_rows[s] as usize..self.node_rows[s + 1] as usize]
    }

    pub fn is_absorbing(&self, s: usize) -> bool {
        self.rows_of(s).is_empty()
    }

    pub fn entries(&self, row: &ActionRow) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = row.start as usize..row.end as usize;
        self.next[r.clone()].iter().map(|&n| n as usize).zip(self.prob[r].iter().copied())
    }

    #[inline]
    pub fn q_value(&self, row: &ActionRow, u: &[f64]) -> f64 {
        let r = row.start as usize..row.end as usize;
        let mut acc = row.reward;
        for (&n, &p) in self.next[r.clone()].iter().zip(&self.prob[r]) {
            acc += p * u[n as usize];
        }
        acc
    }

    /// Largest deviation of a transition row sum from 1.
    pub fn max_row_sum_error(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (self.prob[r.start as usize..r.end as usize].iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Nodes from which no absorbing node can be reached under any actions.
    pub fn unreachable_absorption(&self) -> Vec<usize> {
        let n = self.len();
        let mut preds: Vec<Vec<u32>> = vec![Vec::new(); n];
        for s in 0..n {
            for row in self.rows_of(s) {
                for (t, p) in self.entries(row) {
                    if p > 0.0 {
                        preds[t].push(s as u32);
                    }
                }
            }
        }
        let mut seen = vec![false; n];
        let mut stack: Vec<usize> = (0..n).filter(|&s| self.is_absorbing(s)).collect();
        for &s in &stack {
            seen[s] = true;
        }
        while let Some(t) = stack.pop() {
            for &s in &preds[t] {
                if !seen[s as usize] {
                    seen[s as usize] = true;
                    stack.push(s as usize);
                }
            }
        }
        (0..n).filter(|&s| !seen[s]).collect()
    }

    fn bellman(&self, s: usize, u: &[f64]) -> f64 {
        let rows = self.rows_of(s);
        if rows.is_empty() {
            return 0.0;
        }
        rows.iter().map(|r| self.q_value(r, u)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest `|U(s) - max_a Q(s, a)|` over all nodes.
    pub fn bellman_residual(&self, u: &[f64]) -> f64 {
        (0..self.len())
            .into_par_iter()
            .map(|s| (self.bellman(s, u) - u[s]).abs())
            .reduce(|| 0.0, f64::max)
    }
}

/// Converged values plus solver accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    pub u: Vec<f64>,
    /// Number of sweeps (for the stratified solver, summed over strata).
    pub sweeps: usize,
    /// Total single-node Bellman updates performed.
    pub updates: u64,
    /// Sup-norm change of the last sweep.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: DEFAULT_TOL, max_iters: DEFAULT_MAX_ITERS }
    }
}

impl SolveOptions {
    pub fn with_tol(tol: f64) -> Self {
        SolveOptions { tol, ..Default::default() }
    }
}

/// Jacobi sweeps over `nodes`, reading the frozen previous table.
fn sweep_until(kernel: &Kernel, u: &mut [f64], nodes: &[usize], opts: SolveOptions) -> Result<(usize, f64)> {
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iters {
        let fresh: Vec<f64> = nodes.par_iter().map(|&s| kernel.bellman(s, u)).collect();
        residual = nodes
            .iter()
            .zip(&fresh)
            .map(|(&s, v)| (v - u[s]).abs())
            .fold(0.0, f64::max);
        for (&s, v) in nodes.iter().zip(fresh) {
            u[s] = v;
        }
        if residual < opts.tol {
            return Ok((it, residual));
        }
    }
    Err(Error::NotConverged { iterations: opts.max_iters, residual })
}

/// Value iteration on the whole node set from `U_0 = 0`.
pub fn value_iteration(kernel: &Kernel, opts: SolveOptions) -> Result<ValueFunction> {
    let mut u = vec![0.0; kernel.len()];
    let nodes: Vec<usize> = (0..kernel.len()).filter(|&s| !kernel.is_absorbing(s)).collect();
    let (sweeps, residual) = sweep_until(kernel, &mut u, &nodes, opts)?;
    Ok(ValueFunction { u, sweeps, updates: (sweeps * nodes.len()) as u64, residual })
}

/// Value iteration one stratum at a time in increasing order, each with the
/// lower strata frozen at their converged values.
pub fn dynamic_value_iteration(kernel: &Kernel, opts: SolveOptions) -> Result<ValueFunction> {
    let mut u = vec![0.0; kernel.len()];
    let top = kernel.stratum.iter().copied().max().unwrap_or(0);
    let mut by_stratum: Vec<Vec<usize>> = vec![Vec::new(); top as usize + 1];
    for s in 0..kernel.len() {
        if !kernel.is_absorbing(s) {
            by_stratum[kernel.stratum[s] as usize].push(s);
        }
    }
    let (mut sweeps, mut updates, mut residual) = (0, 0u64, 0.0f64);
    for nodes in by_stratum.iter().filter(|n| !n.is_empty()) {
        let (n, r) = sweep_until(kernel, &mut u, nodes, opts)?;
        sweeps += n;
        updates += (n * nodes.len()) as u64;
        residual = residual.max(r);
    }
    Ok(ValueFunction { u, sweeps, updates, residual })
}

/// Greedy policy: the first action in tie-break order whose Q-value is
/// within [`TIE_EPS`] of the best. Absorbing nodes get `None`.
pub fn extract_policy(kernel: &Kernel, u: &[f64]) -> Vec<Option<Action>> {
    (0..kernel.len())
        .into_par_iter()
        .map(|s| {
            let rows = kernel.rows_of(s);
            let best = rows.iter().map(|r| kernel.q_value(r, u)).fold(f64::NEG_INFINITY, f64::max);
            let mut cands: Vec<&ActionRow> = rows.iter().filter(|r| kernel.q_value(r, u) >= best - TIE_EPS).collect();
            cands.sort_by_key(|r| r.action);
            cands.first().map(|r| r.action)
        })
        .collect()
}

/// Largest `|U(s) - Q(s, pi(s))|`.
pub fn policy_residual(kernel: &Kernel, u: &[f64], policy: &[Option<Action>]) -> f64 {
    (0..kernel.len())
        .filter_map(|s| {
            let a = policy[s]?;
            let row = kernel.rows_of(s).iter().find(|r| r.action == a)?;
            Some((u[s] - kernel.q_value(row, u)).abs())
        })
        .fold(0.0, f64::max)
}
