//! Order-flow estimation: conditional next-type multinomials, market order
//! sizes, refill distributions, mid-price continuation, the nested-model
//! likelihood ratio test, and intensity recovery.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::events::{bin_of, L1Event, OrderKind, OrderType, ReducedState, Side, N_BINS, N_REDUCED, N_TYPES};

pub const MODEL_VERSION: u32 = 1;

/// Degrees of freedom of the nested test: the full model has 30 reduced
/// states with 5 free probabilities each (150), the null has 5 imbalance bins
/// with 5 each (25), and 150 - 25 = 125.
pub const GLRT_DF: usize = (N_REDUCED - N_BINS) * (N_TYPES - 1);

/// Every generative parameter of the event-time book model.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    pub k: u32,
    pub factor: f64,
    /// Next-type probabilities indexed by `ReducedState::index()`.
    pub probs: Vec<[f64; N_TYPES]>,
    pub usable: Vec<bool>,
    /// `mo_size_bid[q - 1][s - 1]`: probability that a market sell arriving at
    /// a bid queue of size `q` has size `s`.
    pub mo_size_bid: Vec<Vec<f64>>,
    pub mo_size_ask: Vec<Vec<f64>>,
    /// `refill_bid[v - 1]`: probability the bid refills to `v`.
    pub refill_bid: Vec<f64>,
    pub refill_ask: Vec<f64>,
    /// Pooled probability that a mid-price change repeats the previous one.
    pub theta: f64,
    pub theta_up: Option<f64>,
    pub theta_down: Option<f64>,
}

impl FlowModel {
    pub fn row(&self, rs: ReducedState) -> &[f64; N_TYPES] {
        &self.probs[rs.index()]
    }

    pub fn mo_size(&self, side: Side, q: u32) -> &[f64] {
        match side {
            Side::Bid => &self.mo_size_bid[q as usize - 1],
            Side::Ask => &self.mo_size_ask[q as usize - 1],
        }
    }

    pub fn refill(&self, side: Side) -> &[f64] {
        match side {
            Side::Bid => &self.refill_bid,
            Side::Ask => &self.refill_ask,
        }
    }

    /// One row per `(D, e)` with the next-type probabilities; unusable rows
    /// have empty cells.
    pub fn probs_csv(&self) -> String {
        let mut s = String::from("d,e");
        for t in OrderType::ALL {
            s.push_str(&format!(",{t}"));
        }
        s.push('\n');
        for rs in ReducedState::all() {
            s.push_str(&format!("{},{}", rs.d, rs.last));
            for p in self.row(rs) {
                s.push(',');
                if self.usable[rs.index()] {
                    s.push_str(&p.to_string());
                }
            }
            s.push('\n');
        }
        s
    }

    /// Fails with the first reduced state whose row could not be estimated.
    pub fn check_usable(&self) -> Result<()> {
        match self.usable.iter().position(|u| !u) {
            None => Ok(()),
            Some(i) => {
                let rs = ReducedState::from_index(i);
                Err(Error::UnusableRow { d: rs.d, e: rs.last })
            }
        }
    }

    /// Swap buy and sell labels and the two queues.
    pub fn mirror(&self) -> FlowModel {
        let mut probs = vec![[0.0; N_TYPES]; N_REDUCED];
        let mut usable = vec![false; N_REDUCED];
        for rs in ReducedState::all() {
            let m = ReducedState { d: 6 - rs.d, last: rs.last.mirror() };
            for t in OrderType::ALL {
                probs[m.index()][t.mirror().index()] = self.probs[rs.index()][t.index()];
            }
            usable[m.index()] = self.usable[rs.index()];
        }
        FlowModel {
            k: self.k,
            factor: self.factor,
            probs,
            usable,
            mo_size_bid: self.mo_size_ask.clone(),
            mo_size_ask: self.mo_size_bid.clone(),
            refill_bid: self.refill_ask.clone(),
            refill_ask: self.refill_bid.clone(),
            theta: self.theta,
            theta_up: self.theta_down,
            theta_down: self.theta_up,
        }
    }

    /// Structural checks on every distribution in the model.
    pub fn validate(&self) -> Result<()> {
        let k = self.k as usize;
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.k < 1 || self.probs.len() != N_REDUCED || self.usable.len() != N_REDUCED {
            return bad("malformed model dimensions".into());
        }
        for (i, row) in self.probs.iter().enumerate() {
            if self.usable[i] && !is_distribution(row) {
                return bad(format!("row {:?} is not a distribution", ReducedState::from_index(i)));
            }
        }
        for (name, table) in [("mo_size_bid", &self.mo_size_bid), ("mo_size_ask", &self.mo_size_ask)] {
            if table.len() != k {
                return bad(format!("{name} must have {k} rows"));
            }
            for (q, row) in table.iter().enumerate() {
                if row.len() != q + 1 || !is_distribution(row) {
                    return bad(format!("{name}[{}] is not a distribution on 1..{}", q + 1, q + 1));
                }
            }
        }
        for (name, d) in [("refill_bid", &self.refill_bid), ("refill_ask", &self.refill_ask)] {
            if d.len() != k || !is_distribution(d) {
                return bad(format!("{name} is not a distribution on 1..{k}"));
            }
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return bad(format!("theta {} outside [0, 1]", self.theta));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&FlowModelDoc::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<FlowModel> {
        let doc: FlowModelDoc = serde_json::from_str(text)?;
        let m = doc.into_model()?;
        m.validate()?;
        Ok(m)
    }
}

fn is_distribution(p: &[f64]) -> bool {
    p.iter().all(|&x| x >= 0.0 && x.is_finite()) && (p.iter().sum::<f64>() - 1.0).abs() < 1e-9
}

/// On-disk form of a [`FlowModel`].
#[derive(Debug, Serialize, Deserialize)]
struct FlowModelDoc {
    version: u32,
    k: u32,
    factor: f64,
    type_order: Vec<OrderType>,
    rows: Vec<FlowRowDoc>,
    mo_size_bid: Vec<Vec<f64>>,
    mo_size_ask: Vec<Vec<f64>>,
    refill_bid: Vec<f64>,
    refill_ask: Vec<f64>,
    theta: f64,
    theta_up: Option<f64>,
    theta_down: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FlowRowDoc {
    d: u8,
    e: OrderType,
    usable: bool,
    p: [f64; N_TYPES],
}

impl From<&FlowModel> for FlowModelDoc {
    fn from(m: &FlowModel) -> Self {
        FlowModelDoc {
            version: MODEL_VERSION,
            k: m.k,
            factor: m.factor,
            type_order: OrderType::ALL.to_vec(),
            rows: ReducedState::all()
                .map(|rs| FlowRowDoc {
                    d: rs.d,
                    e: rs.last,
                    usable: m.usable[rs.index()],
                    p: m.probs[rs.index()],
                })
                .collect(),
            mo_size_bid: m.mo_size_bid.clone(),
            mo_size_ask: m.mo_size_ask.clone(),
            refill_bid: m.refill_bid.clone(),
            refill_ask: m.refill_ask.clone(),
            theta: m.theta,
            theta_up: m.theta_up,
            theta_down: m.theta_down,
        }
    }
}

impl FlowModelDoc {
    fn into_model(self) -> Result<FlowModel> {
        if self.version != MODEL_VERSION {
            return Err(Error::Version(self.version));
        }
        if self.type_order != OrderType::ALL {
            return Err(Error::InvalidArgument("unexpected type_order".into()));
        }
        let mut probs = vec![[0.0; N_TYPES]; N_REDUCED];
        let mut usable = vec![false; N_REDUCED];
        let mut seen = [false; N_REDUCED];
        for r in self.rows {
            if !(1..=5).contains(&r.d) {
                return Err(Error::InvalidArgument(format!("bin {} out of range", r.d)));
            }
            let i = ReducedState { d: r.d, last: r.e }.index();
            probs[i] = r.p;
            usable[i] = r.usable;
            seen[i] = true;
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::InvalidArgument("model is missing reduced-state rows".into()));
        }
        Ok(FlowModel {
            k: self.k,
            factor: self.factor,
            probs,
            usable,
            mo_size_bid: self.mo_size_bid,
            mo_size_ask: self.mo_size_ask,
            refill_bid: self.refill_bid,
            refill_ask: self.refill_ask,
            theta: self.theta,
            theta_up: self.theta_up,
            theta_down: self.theta_down,
        })
    }
}

/// Sufficient statistics of a normalized stream. Counting is a commutative
/// reduction, so partitions may be counted separately and merged.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowCounts {
    pub k: u32,
    /// `transitions[rs][f]`: times `f` followed reduced state `rs`.
    pub transitions: Vec<[u64; N_TYPES]>,
    pub mo_bid: Vec<Vec<u64>>,
    pub mo_ask: Vec<Vec<u64>>,
    pub refill_bid: Vec<u64>,
    pub refill_ask: Vec<u64>,
    /// `[++, +-, -+, --]` counts of consecutive mid-price change pairs.
    pub continuation: [u64; 4],
    pub mid_changes: u64,
    /// Market orders whose recorded size exceeded the standing queue.
    pub truncated_mo: u64,
}

impl FlowCounts {
    pub fn new(k: u32) -> Self {
        let kk = k as usize;
        FlowCounts {
            k,
            transitions: vec![[0; N_TYPES]; N_REDUCED],
            mo_bid: (1..=kk).map(|q| vec![0; q]).collect(),
            mo_ask: (1..=kk).map(|q| vec![0; q]).collect(),
            refill_bid: vec![0; kk],
            refill_ask: vec![0; kk],
            continuation: [0; 4],
            mid_changes: 0,
            truncated_mo: 0,
        }
    }

    /// Count a normalized stream.
    ///
    /// A transition is counted whenever the previous row is a resting
    /// one-tick book with both queues non-empty. A spread-one row whose quotes
    /// differ from the last spread-one quotes marks a mid-price change, and its
    /// snapshot is taken as the refilled book.
    pub fn from_events(events: &[L1Event], k: u32) -> Self {
        let mut c = FlowCounts::new(k);
        let kk = k as u64;
        let mut prev: Option<&L1Event> = None;
        let mut last_quotes: Option<(i64, i64)> = None;
        let mut last_dir: Option<i8> = None;
        for ev in events {
            if let Some(p) = prev.filter(|p| is_resting(p, kk)) {
                let rs = ReducedState { d: bin_of(p.bid_vol, p.ask_vol), last: p.etype };
                c.transitions[rs.index()][ev.etype.index()] += 1;
                if ev.etype.kind() == OrderKind::Market {
                    let side = ev.etype.queue();
                    let q = match side {
                        Side::Bid => p.bid_vol,
                        Side::Ask => p.ask_vol,
                    };
                    if ev.size > q {
                        c.truncated_mo += 1;
                    }
                    let s = ev.size.min(q) as usize;
                    let table = match side {
                        Side::Bid => &mut c.mo_bid,
                        Side::Ask => &mut c.mo_ask,
                    };
                    table[q as usize - 1][s - 1] += 1;
                }
            }
            if ev.spread() == 1 {
                let quotes = (ev.bid_px, ev.ask_px);
                if let Some(lq) = last_quotes.filter(|&lq| lq != quotes) {
                    let dir: i8 = if ev.mid2() > lq.0 + lq.1 { 1 } else { -1 };
                    c.mid_changes += 1;
                    if let Some(pd) = last_dir {
                        let slot = match (pd, dir) {
                            (1, 1) => 0,
                            (1, _) => 1,
                            (_, 1) => 2,
                            _ => 3,
                        };
                        c.continuation[slot] += 1;
                    }
                    last_dir = Some(dir);
                    if (1..=kk).contains(&ev.bid_vol) {
                        c.refill_bid[ev.bid_vol as usize - 1] += 1;
                    }
                    if (1..=kk).contains(&ev.ask_vol) {
                        c.refill_ask[ev.ask_vol as usize - 1] += 1;
                    }
                }
                last_quotes = Some(quotes);
            }
            prev = Some(ev);
        }
        c
    }

    /// Merge counts from a later partition into this one.
    pub fn merge(&mut self, other: &FlowCounts) {
        assert_eq!(self.k, other.k, "cannot merge counts with different caps");
        for (a, b) in self.transitions.iter_mut().zip(&other.transitions) {
            for f in 0..N_TYPES {
                a[f] += b[f];
            }
        }
        for (a, b) in self.mo_bid.iter_mut().chain(self.mo_ask.iter_mut()).zip(other.mo_bid.iter().chain(&other.mo_ask)) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.refill_bid.iter_mut().zip(&other.refill_bid).for_each(|(x, y)| *x += y);
        self.refill_ask.iter_mut().zip(&other.refill_ask).for_each(|(x, y)| *x += y);
        for i in 0..4 {
            self.continuation[i] += other.continuation[i];
        }
        self.mid_changes += other.mid_changes;
        self.truncated_mo += other.truncated_mo;
    }

    pub fn total_transitions(&self) -> u64 {
        self.transitions.iter().flat_map(|r| r.iter()).sum()
    }
}

fn is_resting(e: &L1Event, k: u64) -> bool {
    e.spread() == 1 && e.bid_vol > 0 && e.ask_vol > 0 && e.bid_vol <= k && e.ask_vol <= k
}

fn normalize(counts: &[u64]) -> Option<Vec<f64>> {
    let total: u64 = counts.iter().sum();
    (total > 0).then(|| counts.iter().map(|&c| c as f64 / total as f64).collect())
}

/// Turn counts into model parameters.
///
/// Market-order size rows with no observations fall back to the pooled size
/// distribution for that side, truncated at the queue size. Refill
/// distributions with no observations fall back to uniform on `1..=k`.
pub fn model_from_counts(c: &FlowCounts, factor: f64, smoothing: f64) -> FlowModel {
    assert!(smoothing >= 0.0, "smoothing must be non-negative");
    let k = c.k as usize;
    let mut probs = vec![[0.0; N_TYPES]; N_REDUCED];
    let mut usable = vec![false; N_REDUCED];
    for (i, row) in c.transitions.iter().enumerate() {
        let total: u64 = row.iter().sum();
        let denom = total as f64 + N_TYPES as f64 * smoothing;
        if denom > 0.0 {
            usable[i] = true;
            for f in 0..N_TYPES {
                probs[i][f] = (row[f] as f64 + smoothing) / denom;
            }
        }
    }

    let mo_table = |table: &[Vec<u64>]| -> Vec<Vec<f64>> {
        // pooled counts by size, used for unobserved queue sizes
        let mut pooled = vec![0u64; k];
        for row in table {
            for (s, &n) in row.iter().enumerate() {
                pooled[s] += n;
            }
        }
        (1..=k)
            .map(|q| {
                normalize(&table[q - 1]).unwrap_or_else(|| {
                    let mut trunc = vec![0u64; q];
                    for (s, &n) in pooled.iter().enumerate() {
                        trunc[s.min(q - 1)] += n;
                    }
                    normalize(&trunc).unwrap_or_else(|| {
                        let mut unit = vec![0.0; q];
                        unit[0] = 1.0;
                        unit
                    })
                })
            })
            .collect()
    };
    let uniform = vec![1.0 / k as f64; k];
    let [pp, pm, mp, mm] = c.continuation.map(|x| x as f64);
    let pairs = pp + pm + mp + mm;

    FlowModel {
        k: c.k,
        factor,
        probs,
        usable,
        mo_size_bid: mo_table(&c.mo_bid),
        mo_size_ask: mo_table(&c.mo_ask),
        refill_bid: normalize(&c.refill_bid).unwrap_or_else(|| uniform.clone()),
        refill_ask: normalize(&c.refill_ask).unwrap_or(uniform),
        theta: if pairs > 0.0 { (pp + mm) / pairs } else { 0.5 },
        theta_up: (pp + pm > 0.0).then(|| pp / (pp + pm)),
        theta_down: (mp + mm > 0.0).then(|| mm / (mp + mm)),
    }
}

/// Estimate a [`FlowModel`] from a normalized stream.
pub fn estimate_flow(events: &[L1Event], k: u32, smoothing: f64) -> Result<FlowModel> {
    if k < 1 {
        return Err(Error::InvalidArgument("volume cap must be at least 1".into()));
    }
    if smoothing < 0.0 || !smoothing.is_finite() {
        return Err(Error::InvalidArgument(format!("smoothing {smoothing} must be non-negative")));
    }
    let counts = FlowCounts::from_events(events, k);
    Ok(model_from_counts(&counts, 1.0, smoothing))
}

/// Result of the nested multinomial likelihood ratio test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlrtResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    /// `counts[rs][f]`, rows indexed by `ReducedState::index()`.
    pub counts: Vec<[u64; N_TYPES]>,
}

impl GlrtResult {
    pub const CSV_HEADER: &'static str = "statistic,df,p_value,n_transitions";

    pub fn n_transitions(&self) -> u64 {
        self.counts.iter().flat_map(|r| r.iter()).sum()
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{}\n{},{},{:e},{}\n",
            Self::CSV_HEADER,
            self.statistic,
            self.df,
            self.p_value,
            self.n_transitions()
        )
    }
}

/// Test whether the next order type depends on the last order type beyond
/// the imbalance bin.
pub fn glrt(events: &[L1Event], k: u32) -> GlrtResult {
    glrt_from_counts(&FlowCounts::from_events(events, k).transitions)
}

pub fn glrt_from_counts(counts: &[[u64; N_TYPES]]) -> GlrtResult {
    assert_eq!(counts.len(), N_REDUCED);
    let mut statistic = 0.0;
    for d in 1..=N_BINS as u8 {
        let rows: Vec<&[u64; N_TYPES]> = OrderType::ALL
            .iter()
            .map(|&e| &counts[ReducedState { d, last: e }.index()])
            .collect();
        let mut marginal = [0u64; N_TYPES];
        for r in &rows {
            for f in 0..N_TYPES {
                marginal[f] += r[f];
            }
        }
        let n_d: u64 = marginal.iter().sum();
        for r in &rows {
            let n_de: u64 = r.iter().sum();
            for f in 0..N_TYPES {
                if r[f] == 0 {
                    continue;
                }
                let p_de = r[f] as f64 / n_de as f64;
                let p_d = marginal[f] as f64 / n_d as f64;
                statistic += r[f] as f64 * (p_de / p_d).ln();
            }
        }
    }
    let statistic = (2.0 * statistic).max(0.0);
    let chi = ChiSquared::new(GLRT_DF as f64).expect("positive degrees of freedom");
    GlrtResult {
        statistic,
        df: GLRT_DF,
        p_value: chi.sf(statistic).clamp(0.0, 1.0),
        counts: counts.to_vec(),
    }
}

/// Per-state sojourn statistics of the continuous-time book.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IntensityEntry {
    pub visits: u64,
    pub total_secs: f64,
    pub counts: [u64; N_TYPES],
}

impl IntensityEntry {
    /// Mean time per visit.
    pub fn holding(&self) -> f64 {
        self.total_secs / self.visits as f64
    }

    /// Arrival rate per second: `(1/T) (N_O / N)` with `T` the mean holding time.
    pub fn rate(&self, t: OrderType) -> f64 {
        (1.0 / self.holding()) * (self.counts[t.index()] as f64 / self.visits as f64)
    }

    pub fn total_rate(&self) -> f64 {
        OrderType::ALL.iter().map(|&t| self.rate(t)).sum()
    }

    /// Embedded-chain probability of the next event being `t`.
    pub fn embedded(&self, t: OrderType) -> f64 {
        self.rate(t) / self.total_rate()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IntensityTable {
    pub entries: BTreeMap<(u32, u32), IntensityEntry>,
}

impl IntensityTable {
    pub fn get(&self, v_bid: u32, v_ask: u32) -> Option<&IntensityEntry> {
        self.entries.get(&(v_bid, v_ask))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("v_bid,v_ask,visits,holding_secs");
        for t in OrderType::ALL {
            let _ = write!(s, ",rate_{t}");
        }
        s.push('\n');
        for (&(b, a), e) in &self.entries {
            let _ = write!(s, "{b},{a},{},{}", e.visits, e.holding());
            for t in OrderType::ALL {
                let _ = write!(s, ",{}", e.rate(t));
            }
            s.push('\n');
        }
        s
    }
}

/// Recover per-state arrival intensities from a time-stamped normalized stream.
/// States whose accumulated sojourn time is zero are left out.
pub fn recover_intensities(events: &[L1Event], k: u32) -> IntensityTable {
    let mut entries: BTreeMap<(u32, u32), IntensityEntry> = BTreeMap::new();
    for w in events.windows(2) {
        let (p, ev) = (&w[0], &w[1]);
        if !is_resting(p, k as u64) {
            continue;
        }
        let e = entries.entry((p.bid_vol as u32, p.ask_vol as u32)).or_default();
        e.visits += 1;
        e.total_secs += (ev.ts_ns - p.ts_ns) as f64 * 1e-9;
        e.counts[ev.etype.index()] += 1;
    }
    entries.retain(|_, e| e.total_secs > 0.0);
    IntensityTable { entries }
}
