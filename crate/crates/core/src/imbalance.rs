//! How long the imbalance signal stays informative: spread regimes,
//! mid-price continuation, and one-variable logistic classifiers of future
//! mid-price changes from imbalance sampled at three points of the interval
//! between two changes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{imbalance, BookState, L1Event};
use crate::lobsim::SimPath;

/// Spread buckets: 1 tick, 2 ticks, 3 or more.
pub const SPREAD_LABELS: [&str; 3] = ["1", "2", ">=3"];

fn spread_bucket(spread: i64) -> usize {
    (spread.max(1) as usize - 1).min(2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadStats {
    /// `transitions[from][to]` counts of regime changes.
    pub transitions: [[u64; 3]; 3],
    /// Completed regime durations in nanoseconds, per bucket.
    pub durations: [Vec<i64>; 3],
}

impl SpreadStats {
    /// Share of changes out of `from` that go to `to`; `None` if the
    /// regime was never left.
    pub fn prob(&self, from: usize, to: usize) -> Option<f64> {
        let total: u64 = self.transitions[from].iter().sum();
        (total > 0).then(|| self.transitions[from][to] as f64 / total as f64)
    }

    pub fn p_1to2(&self) -> Option<f64> {
        self.prob(0, 1)
    }

    pub fn p_2to1(&self) -> Option<f64> {
        self.prob(1, 0)
    }

    /// Transition matrix with row and column headers; empty cells for rows
    /// never left.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("from/to");
        for l in SPREAD_LABELS {
            out.push_str(&format!(",{l}"));
        }
        out.push('\n');
        for (i, l) in SPREAD_LABELS.iter().enumerate() {
            out.push_str(l);
            for j in 0..3 {
                out.push(',');
                if let Some(p) = self.prob(i, j) {
                    out.push_str(&format!("{p:.6}"));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Regime transitions and durations of the spread over a stream.
pub fn spread_stats(events: &[L1Event]) -> SpreadStats {
    let mut stats = SpreadStats { transitions: [[0; 3]; 3], durations: Default::default() };
    let Some(first) = events.first() else {
        return stats;
    };
    let mut regime = spread_bucket(first.spread());
    let mut since = first.ts_ns;
    for ev in &events[1..] {
        let b = spread_bucket(ev.spread());
        if b != regime {
            stats.transitions[regime][b] += 1;
            stats.durations[regime].push(ev.ts_ns - since);
            regime = b;
            since = ev.ts_ns;
        }
    }
    stats
}

/// `(bin_edge, count)` rows over `n_bins` equal-width bins from 0 to the
/// largest duration; the edge is the lower end of the bin.
pub fn duration_histogram(durations: &[i64], n_bins: usize) -> String {
    let mut out = String::from("bin_edge,count\n");
    let Some(&max) = durations.iter().max() else {
        return out;
    };
    let n_bins = n_bins.max(1);
    let width = (max as f64 / n_bins as f64).max(1.0);
    let mut counts = vec![0u64; n_bins];
    for &d in durations {
        counts[((d as f64 / width) as usize).min(n_bins - 1)] += 1;
    }
    for (i, c) in counts.iter().enumerate() {
        out.push_str(&format!("{},{c}\n", (i as f64 * width).round() as i64));
    }
    out
}

/// Signs of successive mid-price changes in a stream.
pub fn mid_changes(events: &[L1Event]) -> Vec<i8> {
    events
        .windows(2)
        .filter_map(|w| {
            let d = w[1].mid2() - w[0].mid2();
            (d != 0).then_some(d.signum() as i8)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuationTable {
    /// `counts[prev][next]` with index 0 for up and 1 for down.
    pub counts: [[u64; 2]; 2],
}

impl ContinuationTable {
    /// Row `prev` as percentages `[to up, to down]`; `None` if no change
    /// followed a `prev` change.
    pub fn row(&self, prev: usize) -> Option<[f64; 2]> {
        let [a, b] = self.counts[prev];
        if a + b == 0 {
            return None;
        }
        let up = 100.0 * a as f64 / (a + b) as f64;
        Some([up, 100.0 - up])
    }

    pub fn up_up(&self) -> Option<f64> {
        self.row(0).map(|r| r[0])
    }

    pub fn down_down(&self) -> Option<f64> {
        self.row(1).map(|r| r[1])
    }

    /// `+->+,+->-,-->+,-->-` percentages; empty fields for missing rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("+->+,+->-,-->+,-->-\n");
        let cells: Vec<String> = [self.row(0), self.row(1)]
            .iter()
            .flat_map(|r| match r {
                Some([x, y]) => [format!("{x:.4}"), format!("{y:.4}")],
                None => [String::new(), String::new()],
            })
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
        out
    }
}

fn sign_index(d: i8) -> usize {
    (d < 0) as usize
}

pub fn continuation_table(directions: &[i8]) -> ContinuationTable {
    let mut counts = [[0u64; 2]; 2];
    for w in directions.windows(2) {
        counts[sign_index(w[0])][sign_index(w[1])] += 1;
    }
    ContinuationTable { counts }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Anchor {
    /// Right after the previous change.
    AfterPrev,
    /// At a uniformly chosen point between the previous change and this one.
    Random,
    /// Right before the event that changes the mid price.
    Before,
}

impl Anchor {
    pub const ALL: [Anchor; 3] = [Anchor::AfterPrev, Anchor::Random, Anchor::Before];

    pub fn label(self) -> &'static str {
        match self {
            Anchor::AfterPrev => "I(t_i-1+)",
            Anchor::Random => "I(t_tau_i)",
            Anchor::Before => "I(t_i-)",
        }
    }
}

pub const HORIZONS: [usize; 3] = [1, 2, 3];

/// Imbalance at the three anchors of interval `i` and the directions of the
/// next three changes where they exist.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChangeRecord {
    pub x: [f64; 3],
    pub y: [Option<i8>; 3],
}

impl ChangeRecord {
    pub fn complete(&self) -> bool {
        self.y.iter().all(Option::is_some)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorSample {
    pub anchor: Anchor,
    pub x: f64,
    pub y: i8,
    pub horizon: usize,
}

/// One sample per anchor and available horizon.
pub fn flatten(records: &[ChangeRecord]) -> Vec<PredictorSample> {
    let mut out = Vec::new();
    for r in records {
        for (a, anchor) in Anchor::ALL.iter().enumerate() {
            for (h, y) in r.y.iter().enumerate() {
                if let Some(y) = *y {
                    out.push(PredictorSample { anchor: *anchor, x: r.x[a], y, horizon: HORIZONS[h] });
                }
            }
        }
    }
    out
}

fn record(directions: &[i8], i: usize, x: [f64; 3]) -> Option<ChangeRecord> {
    let mut y = [None; 3];
    for (h, slot) in HORIZONS.iter().zip(y.iter_mut()) {
        *slot = directions.get(i + h).copied();
    }
    y[0].is_some().then_some(ChangeRecord { x, y })
}

/// Records from simulated paths, in path order. Interval `i` of a path
/// runs from the state after change `i - 1` (the initial state for the
/// first change) to the state before change `i`; its random anchor is a
/// uniform state of that interval drawn from stream `(seed, path)`.
pub fn sample_paths(paths: &[SimPath], seed: u64) -> Vec<ChangeRecord> {
    let mut out = Vec::new();
    for (p, path) in paths.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(p as u64);
        let state = |n: usize| -> BookState { if n == 0 { path.initial } else { path.steps[n - 1].1 } };
        let mut start = 0;
        let mut i = 0;
        for (j, (ev, _)) in path.steps.iter().enumerate() {
            if ev.direction.is_none() {
                continue;
            }
            let end = j; // state before event j + 1
            let pick = rng.random_range(start..=end);
            let x = [state(start).imbalance(), state(pick).imbalance(), state(end).imbalance()];
            out.extend(record(&path.mid_changes, i, x));
            start = j + 1;
            i += 1;
        }
    }
    out
}

/// Records from a time-stamped stream. Interval `i` starts at the row of
/// change `i - 1` and ends at the row before change `i`; the random anchor
/// reads the book prevailing at a uniform clock time inside the interval.
/// The first change has no preceding interval and is skipped.
pub fn sample_stream(events: &[L1Event], seed: u64) -> Vec<ChangeRecord> {
    let rows: Vec<usize> = (1..events.len()).filter(|&r| events[r].mid2() != events[r - 1].mid2()).collect();
    let directions: Vec<i8> = rows.iter().map(|&r| (events[r].mid2() - events[r - 1].mid2()).signum() as i8).collect();
    let x_of = |r: usize| imbalance(events[r].bid_vol as f64, events[r].ask_vol as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for i in 1..rows.len() {
        let (start, end) = (rows[i - 1], rows[i] - 1);
        let (t0, t1) = (events[start].ts_ns, events[rows[i]].ts_ns);
        let pick = if t1 > t0 {
            let t = rng.random_range(t0..t1);
            start + events[start..=end].partition_point(|e| e.ts_ns <= t) - 1
        } else {
            rng.random_range(start..=end)
        };
        out.extend(record(&directions, i, [x_of(start), x_of(pick), x_of(end)]));
    }
    out
}

/// Intercept-free logistic model `P(y = 1 | x) = 1 / (1 + exp(-alpha x))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub alpha: f64,
}

impl LogisticModel {
    pub fn prob_up(&self, x: f64) -> f64 {
        1.0 / (1.0 + (-self.alpha * x).exp())
    }

    /// `+1` iff the fitted probability of an up move is at least one half.
    pub fn classify(&self, x: f64) -> i8 {
        if self.alpha * x >= 0.0 {
            1
        } else {
            -1
        }
    }

    pub fn accuracy(&self, data: &[(f64, i8)]) -> f64 {
        data.iter().filter(|&&(x, y)| self.classify(x) == y).count() as f64 / data.len() as f64
    }
}

pub const FIT_GRAD_TOL: f64 = 1e-10;
const FIT_MAX_ITERS: usize = 200;

/// Maximum-likelihood `alpha`, stopping when the mean score falls below
/// `FIT_GRAD_TOL` or the bracket around the root collapses.
pub fn fit_logistic(data: &[(f64, i8)]) -> Result<LogisticModel> {
    if data.iter().all(|&(x, _)| x == 0.0) {
        return Err(Error::DegeneratePredictor("every x is zero".into()));
    }
    let ups = data.iter().filter(|&&(_, y)| y > 0).count();
    if ups == 0 || ups == data.len() {
        return Err(Error::PerfectSeparation { direction: if ups == 0 { "-inf" } else { "+inf" } });
    }
    if data.iter().all(|&(x, y)| x * y as f64 >= 0.0) {
        return Err(Error::PerfectSeparation { direction: "+inf" });
    }
    if data.iter().all(|&(x, y)| x * y as f64 <= 0.0) {
        return Err(Error::PerfectSeparation { direction: "-inf" });
    }
    let n = data.len() as f64;
    // mean score and curvature of the negative log-likelihood
    let score = |a: f64| {
        let (mut g, mut h) = (0.0, 0.0);
        for &(x, y) in data {
            let p = 1.0 / (1.0 + (-a * x).exp());
            g += (p - (y > 0) as u8 as f64) * x;
            h += p * (1.0 - p) * x * x;
        }
        (g / n, h / n)
    };
    let (mut g, mut h) = score(0.0);
    if g.abs() < FIT_GRAD_TOL {
        return Ok(LogisticModel { alpha: 0.0 });
    }
    // The score is increasing in alpha, so bracket its root by doubling
    // and keep Newton steps inside the bracket.
    let dir = -g.signum();
    let (mut lo, mut hi) = (0.0, dir);
    while score(hi).0 * dir < 0.0 {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::FitNotConverged(0));
        }
    }
    let mut alpha = 0.0;
    for _ in 0..FIT_MAX_ITERS {
        let newton = alpha - g / h.max(f64::MIN_POSITIVE);
        let inside = (newton - lo) * (newton - hi) < 0.0;
        alpha = if inside { newton } else { 0.5 * (lo + hi) };
        (g, h) = score(alpha);
        if g.abs() < FIT_GRAD_TOL || (hi - lo).abs() <= 4.0 * f64::EPSILON * (1.0 + alpha.abs()) {
            return Ok(LogisticModel { alpha });
        }
        if g * dir < 0.0 {
            lo = alpha;
        } else {
            hi = alpha;
        }
    }
    Err(Error::FitNotConverged(FIT_MAX_ITERS))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub alpha: Option<f64>,
    pub accuracy: Option<f64>,
    pub n_train: usize,
    pub n_test: usize,
    pub error: Option<String>,
}

/// Out-of-sample accuracy per anchor (rows) and horizon (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    pub cells: Vec<Vec<Cell>>,
}

impl AccuracyMatrix {
    pub fn accuracy(&self, anchor: Anchor, horizon: usize) -> Option<f64> {
        let a = Anchor::ALL.iter().position(|&x| x == anchor)?;
        self.cells[a][horizon - 1].accuracy
    }

    /// Rows and columns laid out as anchor by horizon; empty where a fit failed.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("predictor,Delta(t_i+1),Delta(t_i+2),Delta(t_i+3)\n");
        for (anchor, row) in Anchor::ALL.iter().zip(&self.cells) {
            out.push_str(anchor.label());
            for c in row {
                out.push(',');
                if let Some(a) = c.accuracy {
                    out.push_str(&format!("{a:.4}"));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Fit the nine models on the first `train_fraction` of the records and
/// score them on the rest. With `common_support` only records with all
/// three horizons are used, so every cell sees the same intervals.
pub fn accuracy_matrix(records: &[ChangeRecord], train_fraction: f64, common_support: bool) -> Result<AccuracyMatrix> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let used: Vec<&ChangeRecord> = records.iter().filter(|r| !common_support || r.complete()).collect();
    let cut = (used.len() as f64 * train_fraction).round() as usize;
    let (train, test) = used.split_at(cut);
    let column = |set: &[&ChangeRecord], a: usize, h: usize| -> Vec<(f64, i8)> {
        set.iter().filter_map(|r| r.y[h].map(|y| (r.x[a], y))).collect()
    };
    let cells = (0..3)
        .map(|a| {
            (0..3)
                .map(|h| {
                    let (tr, te) = (column(train, a, h), column(test, a, h));
                    let base = Cell { alpha: None, accuracy: None, n_train: tr.len(), n_test: te.len(), error: None };
                    match fit_logistic(&tr) {
                        Ok(m) => Cell {
                            alpha: Some(m.alpha),
                            accuracy: (!te.is_empty()).then(|| m.accuracy(&te)),
                            ..base
                        },
                        Err(e) => Cell { error: Some(e.to_string()), ..base },
                    }
                })
                .collect()
        })
        .collect();
    Ok(AccuracyMatrix { cells })
}
