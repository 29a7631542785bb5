//! Optimal-action grids over two volume axes.

use super::{Action, MdpSpec, MdpState, PolicyFile, Solution, Status};
use crate::error::{Error, Result};
use crate::events::OrderType;

#[derive(Debug, Clone, PartialEq)]
pub struct RegionGrid {
    pub row_axis: &'static str,
    pub col_axis: &'static str,
    pub rows: Vec<u32>,
    pub cols: Vec<u32>,
    /// `cells[r][c]`; `None` where the state does not exist.
    pub cells: Vec<Vec<Option<Action>>>,
}

impl RegionGrid {
    pub fn get(&self, row: u32, col: u32) -> Option<Action> {
        let r = self.rows.iter().position(|&x| x == row)?;
        let c = self.cols.iter().position(|&x| x == col)?;
        self.cells[r][c]
    }

    pub fn count(&self, action: Action) -> usize {
        self.cells.iter().flatten().filter(|&&a| a == Some(action)).count()
    }

    /// Header `row_axis/col_axis,c1,c2,...`, then one line per row value.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{}/{}", self.row_axis, self.col_axis);
        for c in &self.cols {
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
        for (r, row) in self.rows.iter().zip(&self.cells) {
            out.push_str(&r.to_string());
            for cell in row {
                out.push(',');
                if let Some(a) = cell {
                    out.push_str(a.as_str());
                }
            }
            out.push('\n');
        }
        out
    }
}

fn check_m(horizon: u32, m: u32) -> Result<()> {
    if m == 0 || m > horizon {
        return Err(Error::InvalidArgument(format!("m = {m} outside 1..={horizon}")));
    }
    Ok(())
}

fn idle_grid_by(k: u32, e: OrderType, m: u32, action: impl Fn(&MdpState) -> Option<Action>) -> RegionGrid {
    let axis: Vec<u32> = (1..=k).collect();
    let cells = axis
        .iter()
        .map(|&b| axis.iter().map(|&a| action(&MdpState::idle(b, a, e, m))).collect())
        .collect();
    RegionGrid { row_axis: "v_bid", col_axis: "v_ask", rows: axis.clone(), cols: axis, cells }
}

fn cancel_slice_by(
    k: u32,
    v_front: u32,
    e: OrderType,
    m: u32,
    action: impl Fn(&MdpState) -> Option<Action>,
) -> Result<RegionGrid> {
    if v_front == 0 || v_front > k {
        return Err(Error::InvalidArgument(format!("v_front = {v_front} outside 1..={k}")));
    }
    let rows: Vec<u32> = (0..=k - v_front).collect();
    let cols: Vec<u32> = (1..=k).collect();
    let cells = rows
        .iter()
        .map(|&behind| {
            cols.iter()
                .map(|&ask| {
                    action(&MdpState { v_front, v_behind: behind, v_ask: ask, e, status: Status::Resting, m, locked: false })
                })
                .collect()
        })
        .collect();
    Ok(RegionGrid { row_axis: "v_behind", col_axis: "v_ask", rows, cols, cells })
}

/// Action without a resting order, over bid volume (rows) and ask volume.
pub fn idle_grid(spec: &MdpSpec, sol: &Solution, e: OrderType, m: u32) -> Result<RegionGrid> {
    check_m(spec.horizon, m)?;
    Ok(idle_grid_by(spec.k, e, m, |s| sol.action(spec, s)))
}

/// Action with a resting order at fixed queue position `v_front`, over the
/// volume behind it (rows) and the ask volume.
pub fn cancel_slice(spec: &MdpSpec, sol: &Solution, v_front: u32, e: OrderType, m: u32) -> Result<RegionGrid> {
    check_m(spec.horizon, m)?;
    cancel_slice_by(spec.k, v_front, e, m, |s| sol.action(spec, s))
}

impl PolicyFile {
    /// As [`idle_grid`], read from a stored policy.
    pub fn idle_grid(&self, e: OrderType, m: u32) -> Result<RegionGrid> {
        check_m(self.horizon, m)?;
        Ok(idle_grid_by(self.k, e, m, |s| self.action(s).ok()))
    }

    /// As [`cancel_slice`], read from a stored policy.
    pub fn cancel_slice(&self, v_front: u32, e: OrderType, m: u32) -> Result<RegionGrid> {
        check_m(self.horizon, m)?;
        cancel_slice_by(self.k, v_front, e, m, |s| self.action(s).ok())
    }
}

/// Share of cells with MARKET in `later` (more periods left) that are also
/// MARKET in `earlier`, with the number of such cells. An empty region
/// counts as fully contained.
pub fn market_containment(earlier: &RegionGrid, later: &RegionGrid) -> (f64, usize) {
    let mut n = 0;
    let mut hit = 0;
    for (r1, r2) in earlier.cells.iter().zip(&later.cells) {
        for (a1, a2) in r1.iter().zip(r2) {
            if *a2 == Some(Action::Market) {
                n += 1;
                hit += (*a1 == Some(Action::Market)) as usize;
            }
        }
    }
    (if n == 0 { 1.0 } else { hit as f64 / n as f64 }, n)
}

/// Share of cancel-slice cells with positive imbalance (bid above ask,
/// counting the trader's order) whose action is CANCEL.
pub fn cancel_fraction(slice: &RegionGrid, v_front: u32) -> f64 {
    let mut n = 0;
    let mut hit = 0;
    for (behind, row) in slice.rows.iter().zip(&slice.cells) {
        for (ask, a) in slice.cols.iter().zip(row) {
            if a.is_some() && v_front + behind > *ask {
                n += 1;
                hit += (*a == Some(Action::Cancel)) as usize;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        hit as f64 / n as f64
    }
}
