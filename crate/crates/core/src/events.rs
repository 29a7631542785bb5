//! Canonical level-1 event stream: parsing, session filtering, volume
//! normalization, and the imbalance / discretization primitives.
//!
//! The CSV format is one header line followed by one row per event:
//!
//! ```text
//! ts_ns,etype,size,bid_px,ask_px,bid_vol,ask_vol
//! 1800000000000,MB,100,10000,10001,300,200
//! ```
//!
//! Prices are integer ticks. `bid_vol`/`ask_vol` are the volumes at the best
//! quotes *after* the event has been applied.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "ts_ns,etype,size,bid_px,ask_px,bid_vol,ask_vol";

/// Number of discretized imbalance bins.
pub const N_BINS: usize = 5;
/// Number of order types.
pub const N_TYPES: usize = 6;
/// Number of reduced states `(d, e)`.
pub const N_REDUCED: usize = N_BINS * N_TYPES;

/// Thirty minutes in nanoseconds.
pub const SESSION_EDGE_NS: i64 = 30 * 60 * 1_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OrderType {
    MB,
    MS,
    LB,
    LS,
    CB,
    CS,
}

/// Order kind irrespective of side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OrderKind {
    Market,
    Limit,
    Cancel,
}

/// Which best quote a queue belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Bid,
    Ask,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Bid => Side::Ask,
            Side::Ask => Side::Bid,
        }
    }
}

impl OrderType {
    pub const ALL: [OrderType; N_TYPES] = [
        OrderType::MB,
        OrderType::MS,
        OrderType::LB,
        OrderType::LS,
        OrderType::CB,
        OrderType::CS,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    #[inline]
    pub fn from_index(i: usize) -> OrderType {
        Self::ALL[i]
    }

    pub fn is_buy(self) -> bool {
        self.index().is_multiple_of(2)
    }

    pub fn kind(self) -> OrderKind {
        match self.index() / 2 {
            0 => OrderKind::Market,
            1 => OrderKind::Limit,
            _ => OrderKind::Cancel,
        }
    }

    pub fn mirror(self) -> OrderType {
        Self::from_index(self.index() ^ 1)
    }

    /// The queue this order modifies. Market buys consume the ask; limit and
    /// cancel buys act on the bid.
    pub fn queue(self) -> Side {
        match (self.kind(), self.is_buy()) {
            (OrderKind::Market, true) => Side::Ask,
            (OrderKind::Market, false) => Side::Bid,
            (_, true) => Side::Bid,
            (_, false) => Side::Ask,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OrderType::MB => "MB",
            OrderType::MS => "MS",
            OrderType::LB => "LB",
            OrderType::LS => "LS",
            OrderType::CB => "CB",
            OrderType::CS => "CS",
        }
    }
}

impl fmt::Display for OrderType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OrderType {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "MB" => Ok(OrderType::MB),
            "MS" => Ok(OrderType::MS),
            "LB" => Ok(OrderType::LB),
            "LS" => Ok(OrderType::LS),
            "CB" => Ok(OrderType::CB),
            "CS" => Ok(OrderType::CS),
            _ => Err(()),
        }
    }
}

/// One time-stamped event with the post-event best-quote snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct L1Event {
    pub ts_ns: i64,
    pub etype: OrderType,
    pub size: u64,
    pub bid_px: i64,
    pub ask_px: i64,
    pub bid_vol: u64,
    pub ask_vol: u64,
}

impl L1Event {
    pub fn spread(&self) -> i64 {
        self.ask_px - self.bid_px
    }

    /// Mid price in half ticks, to stay in integers.
    pub fn mid2(&self) -> i64 {
        self.bid_px + self.ask_px
    }
}

/// Trader-agnostic book state on the normalized volume grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BookState {
    pub v_bid: u32,
    pub v_ask: u32,
    pub last: OrderType,
}

impl BookState {
    pub fn new(v_bid: u32, v_ask: u32, last: OrderType) -> Self {
        Self { v_bid, v_ask, last }
    }

    pub fn imbalance(&self) -> f64 {
        imbalance(self.v_bid as f64, self.v_ask as f64)
    }

    pub fn reduced(&self) -> ReducedState {
        ReducedState {
            d: bin_of(self.v_bid as u64, self.v_ask as u64),
            last: self.last,
        }
    }

    pub fn queue(&self, side: Side) -> u32 {
        match side {
            Side::Bid => self.v_bid,
            Side::Ask => self.v_ask,
        }
    }

    pub fn mirror(&self) -> BookState {
        BookState {
            v_bid: self.v_ask,
            v_ask: self.v_bid,
            last: self.last.mirror(),
        }
    }
}

/// `(D, e)`: discretized imbalance bin and last order type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReducedState {
    pub d: u8,
    pub last: OrderType,
}

impl ReducedState {
    pub fn index(&self) -> usize {
        (self.d as usize - 1) * N_TYPES + self.last.index()
    }

    pub fn from_index(i: usize) -> Self {
        Self {
            d: (i / N_TYPES + 1) as u8,
            last: OrderType::from_index(i % N_TYPES),
        }
    }

    pub fn all() -> impl Iterator<Item = ReducedState> {
        (0..N_REDUCED).map(Self::from_index)
    }
}

/// `(v_bid - v_ask) / (v_bid + v_ask)`. Both zero is a contract violation.
pub fn imbalance(v_bid: f64, v_ask: f64) -> f64 {
    let total = v_bid + v_ask;
    assert!(total > 0.0, "imbalance of an empty book");
    (v_bid - v_ask) / total
}

/// Map an imbalance in `[-1, 1]` to bins 1..=5 with right-open edges at
/// -0.6, -0.2, 0.2, 0.6; the last bin is closed at 1.
pub fn discretize(i: f64) -> u8 {
    assert!((-1.0..=1.0).contains(&i), "imbalance {i} outside [-1, 1]");
    if i < -0.6 {
        1
    } else if i < -0.2 {
        2
    } else if i < 0.2 {
        3
    } else if i < 0.6 {
        4
    } else {
        5
    }
}

/// Exact integer version of `discretize(imbalance(b, a))`.
pub fn bin_of(v_bid: u64, v_ask: u64) -> u8 {
    let total = (v_bid + v_ask) as i128;
    assert!(total > 0, "imbalance of an empty book");
    // I < c/5  <=>  5 (b - a) < c (b + a)
    let diff5 = 5 * (v_bid as i128 - v_ask as i128);
    if diff5 < -3 * total {
        1
    } else if diff5 < -total {
        2
    } else if diff5 < total {
        3
    } else if diff5 < 3 * total {
        4
    } else {
        5
    }
}

/// Parse the canonical CSV event stream.
pub fn parse_stream(text: &str) -> Result<Vec<L1Event>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == CSV_HEADER => {}
        Some((_, h)) if h.trim().is_empty() && text.trim().is_empty() => return Ok(Vec::new()),
        None => return Ok(Vec::new()),
        Some((_, h)) => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header {CSV_HEADER:?}, found {h:?}"),
            })
        }
    }

    let mut out = Vec::new();
    let mut prev_ts: Option<i64> = None;
    for (idx, raw) in lines {
        let line = idx + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.is_empty() {
            continue;
        }
        let ev = parse_row(raw, line)?;
        if let Some(p) = prev_ts {
            if ev.ts_ns < p {
                return Err(Error::NonMonotoneTimestamp { line, ts: ev.ts_ns, prev: p });
            }
        }
        prev_ts = Some(ev.ts_ns);
        out.push(ev);
    }
    Ok(out)
}

fn parse_row(raw: &str, line: usize) -> Result<L1Event> {
    let fields: Vec<&str> = raw.split(',').collect();
    if fields.len() != 7 {
        return Err(Error::Parse {
            line,
            msg: format!("expected 7 fields, found {}", fields.len()),
        });
    }
    fn num<T: FromStr>(s: &str, name: &str, line: usize) -> Result<T> {
        s.trim().parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad {name} {s:?}"),
        })
    }
    let etype = fields[1]
        .trim()
        .parse::<OrderType>()
        .map_err(|_| Error::UnknownEvent { line, code: fields[1].to_string() })?;
    let ev = L1Event {
        ts_ns: num(fields[0], "ts_ns", line)?,
        etype,
        size: num(fields[2], "size", line)?,
        bid_px: num(fields[3], "bid_px", line)?,
        ask_px: num(fields[4], "ask_px", line)?,
        bid_vol: num(fields[5], "bid_vol", line)?,
        ask_vol: num(fields[6], "ask_vol", line)?,
    };
    if ev.size == 0 {
        return Err(Error::Parse { line, msg: "size must be positive".into() });
    }
    if ev.ask_px <= ev.bid_px {
        return Err(Error::Parse {
            line,
            msg: format!("crossed or locked quotes {} / {}", ev.bid_px, ev.ask_px),
        });
    }
    Ok(ev)
}

/// Serialize events to the canonical CSV format (LF line endings).
pub fn write_stream(events: &[L1Event]) -> String {
    let mut s = String::with_capacity(32 * (events.len() + 1));
    s.push_str(CSV_HEADER);
    s.push('\n');
    for e in events {
        use std::fmt::Write;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            e.ts_ns, e.etype, e.size, e.bid_px, e.ask_px, e.bid_vol, e.ask_vol
        );
    }
    s
}

/// Drop the first and last 30 minutes of the session and anything outside it.
pub fn filter_session(events: &[L1Event], open_ns: i64, close_ns: i64) -> Vec<L1Event> {
    filter_session_with(events, open_ns, close_ns, SESSION_EDGE_NS)
}

pub fn filter_session_with(
    events: &[L1Event],
    open_ns: i64,
    close_ns: i64,
    edge_ns: i64,
) -> Vec<L1Event> {
    assert!(open_ns < close_ns, "session open must precede close");
    let lo = open_ns + edge_ns;
    let hi = close_ns - edge_ns;
    events
        .iter()
        .filter(|e| e.ts_ns >= lo && e.ts_ns <= hi)
        .copied()
        .collect()
}

fn median(values: &mut [u64]) -> f64 {
    values.sort_unstable();
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2] as f64
    } else {
        (values[n / 2 - 1] as f64 + values[n / 2] as f64) / 2.0
    }
}

/// Scale sizes and queue volumes by the median order size.
///
/// Sizes round half away from zero, floor at 1 and cap at `k`; queue volumes
/// floor at 0 instead, so an emptied queue stays empty.
pub fn normalize_volumes(events: &[L1Event], k: u32) -> Result<(Vec<L1Event>, f64)> {
    if events.is_empty() {
        return Err(Error::InvalidArgument("cannot normalize an empty stream".into()));
    }
    if k < 1 {
        return Err(Error::InvalidArgument("volume cap must be at least 1".into()));
    }
    let mut sizes: Vec<u64> = events.iter().map(|e| e.size).collect();
    let factor = median(&mut sizes);
    let cap = k as f64;
    let scale = |x: u64, floor: f64| ((x as f64 / factor).round()).clamp(floor, cap) as u64;
    let out = events
        .iter()
        .map(|e| L1Event {
            size: scale(e.size, 1.0),
            bid_vol: scale(e.bid_vol, 0.0),
            ask_vol: scale(e.ask_vol, 0.0),
            ..*e
        })
        .collect();
    Ok((out, factor))
}
