//! Acceptance run: every criterion at its stated tolerance, one result line
//! each. Exits non-zero if any criterion fails.

use std::time::Instant;

use lobmdp::events::ReducedState;
use lobmdp::fixture::{flow_model, max_row_gap, FixtureParams};
use lobmdp::flow::{estimate_flow, glrt};
use lobmdp::imbalance::{accuracy_matrix, continuation_table, sample_paths, Anchor};
use lobmdp::lobsim::{simulate, simulate_events, simulate_many};
use lobmdp::mdp::{
    build_mdp, cancel_fraction, cancel_slice, dynamic_value_iteration, idle_grid, market_containment, value_iteration,
    Action, Kernel, MdpSpec, SolveOptions, Solution, Variant,
};
use lobmdp::strategies::{comparison_table, run_simulation, solve_variant};
use lobmdp::{FlowModel, OrderType};

const K: u32 = 10;
const SEED: u64 = 2024;
const TOL: f64 = 1e-11;

struct Outcome {
    pass: bool,
    lines: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Outcome { pass: true, lines: Vec::new() }
    }

    fn check(&mut self, ok: bool, what: String) {
        self.pass &= ok;
        self.lines.push(format!("    [{}] {what}", if ok { "ok" } else { "FAIL" }));
    }

    fn note(&mut self, what: String) {
        self.lines.push(format!("    {what}"));
    }
}

fn fixture() -> FlowModel {
    flow_model(&FixtureParams::default())
}

fn estimator_recovery() -> Outcome {
    let mut o = Outcome::new();
    let truth = fixture();
    let start = Instant::now();
    let events = simulate_events(&truth, 500_000, SEED);
    let est = estimate_flow(&events, K, 0.0).expect("estimation");
    let secs = start.elapsed().as_secs_f64();
    let mut worst = (0.0f64, String::new());
    for rs in ReducedState::all() {
        for t in OrderType::ALL {
            let err = if est.usable[rs.index()] {
                (est.row(rs)[t.index()] - truth.row(rs)[t.index()]).abs()
            } else {
                f64::INFINITY
            };
            if err > worst.0 {
                worst = (err, format!("D={}, e={}, next={t}", rs.d, rs.last));
            }
        }
    }
    o.check(worst.0 <= 0.01, format!("max |p_hat - p| over 180 cells = {:.5} at {} (tolerance 0.01)", worst.0, worst.1));
    let dt = (est.theta - truth.theta).abs();
    o.check(dt <= 0.01, format!("|theta_hat - theta| = {dt:.5} (theta_hat = {:.4})", est.theta));
    o.check(secs < 60.0, format!("simulate + estimate 500000 events in {secs:.2} s"));
    o
}

/// Fixture whose largest total-variation gap between rows sharing a bin is `tv`.
fn fixture_with_gap(tv: f64) -> FlowModel {
    let (mut lo, mut hi) = (0.0, 10.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if max_row_gap(&flow_model(&FixtureParams { e_effect: mid, ..FixtureParams::default() })) < tv {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    flow_model(&FixtureParams { e_effect: 0.5 * (lo + hi), ..FixtureParams::default() })
}

fn glrt_calibration() -> Outcome {
    let mut o = Outcome::new();
    let null = flow_model(&FixtureParams::default().null());
    let reps = 200;
    let stats: Vec<(f64, f64)> = (0..reps)
        .map(|r| {
            let g = glrt(&simulate_events(&null, 100_000, SEED + 1 + r), K);
            (g.statistic, g.p_value)
        })
        .collect();
    let mean = stats.iter().map(|s| s.0).sum::<f64>() / reps as f64;
    let reject = stats.iter().filter(|s| s.1 < 0.05).count() as f64 / reps as f64;
    o.check((112.5..=137.5).contains(&mean), format!("null mean statistic {mean:.2} over {reps} runs of 100000 events (target [112.5, 137.5])"));
    o.check((0.03..=0.07).contains(&reject), format!("5%-level rejection rate {:.1}% (target [3%, 7%])", 100.0 * reject));
    let alt = fixture_with_gap(0.2);
    let g = glrt(&simulate_events(&alt, 100_000, SEED), K);
    o.check(g.p_value < 1e-6, format!("0.2-TV alternative, n = 100000: statistic {:.1}, p = {:e}", g.statistic, g.p_value));
    o
}

/// Exhaustive optimum for a kernel whose decision nodes are `0..n` and whose
/// other nodes are absorbing: best value over all deterministic policies.
fn enumerate_policies(kernel: &Kernel, n: usize) -> Vec<f64> {
    let counts: Vec<usize> = (0..n).map(|s| kernel.rows_of(s).len()).collect();
    let total: usize = counts.iter().product();
    let mut best = vec![f64::NEG_INFINITY; n];
    for code in 0..total {
        let mut c = code;
        let choice: Vec<usize> = counts
            .iter()
            .map(|&k| {
                let i = c % k;
                c /= k;
                i
            })
            .collect();
        // (I - P) u = r by Gaussian elimination
        let mut a = vec![vec![0.0; n + 1]; n];
        for s in 0..n {
            let row = &kernel.rows_of(s)[choice[s]];
            a[s][s] += 1.0;
            a[s][n] = row.reward;
            for (t, p) in kernel.entries(row) {
                if t < n {
                    a[s][t] -= p;
                }
            }
        }
        for col in 0..n {
            let piv = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
            a.swap(col, piv);
            for r in 0..n {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    for j in col..=n {
                        a[r][j] -= f * a[col][j];
                    }
                }
            }
        }
        for s in 0..n {
            best[s] = best[s].max(a[s][n] / a[s][s]);
        }
    }
    best
}

fn solver_correctness() -> Outcome {
    let mut o = Outcome::new();
    // two decision states and an absorbing one
    let mut kern = Kernel::new();
    kern.push_node(1);
    kern.push_row(Action::Wait, 0.1, &[(0, 0.5), (1, 0.3), (2, 0.2)]);
    kern.push_row(Action::Market, 0.4, &[(2, 1.0)]);
    kern.push_row(Action::PlaceLo, -0.2, &[(1, 0.9), (2, 0.1)]);
    kern.push_node(1);
    kern.push_row(Action::Wait, 0.3, &[(0, 0.6), (2, 0.4)]);
    kern.push_row(Action::Cancel, 0.0, &[(0, 1.0)]);
    kern.push_node(0);
    let exact = enumerate_policies(&kern, 2);
    let vi = value_iteration(&kern, SolveOptions::with_tol(1e-14)).expect("small VI");
    let gap = (0..2).map(|s| (vi.u[s] - exact[s]).abs()).fold(0.0, f64::max);
    o.check(gap <= 1e-9, format!("3-state MDP: |VI - enumeration| = {gap:.2e} (U = {:.6}, {:.6})", exact[0], exact[1]));

    let model = fixture();
    let spec = build_mdp(&model, K, 5).expect("K=10, M=5");
    let opts = SolveOptions::with_tol(TOL);
    let a1 = value_iteration(&spec.kernel, opts).expect("algorithm 1");
    let a2 = dynamic_value_iteration(&spec.kernel, opts).expect("algorithm 2");
    let gap = a1.u.iter().zip(&a2.u).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    o.check(gap <= 1e-8, format!("K=10, M=5: max |U_alg1 - U_alg2| = {gap:.2e} over {} nodes", spec.len()));
    let (r1, r2) = (spec.kernel.bellman_residual(&a1.u), spec.kernel.bellman_residual(&a2.u));
    o.check(r1.max(r2) < 1e-8, format!("Bellman residual {r1:.2e} (alg 1), {r2:.2e} (alg 2)"));
    let n = spec.len() as f64;
    let (e1, e2) = (a1.updates as f64 / n, a2.updates as f64 / n);
    o.check(e2 < e1, format!("full-sweep equivalents: alg 1 {e1:.1} ({} sweeps), alg 2 {e2:.1}", a1.sweeps));

    let start = Instant::now();
    let spec3 = build_mdp(&model, K, 3).expect("K=10, M=3");
    let sol3 = lobmdp::mdp::solve(&spec3, opts).expect("solve");
    let secs = start.elapsed().as_secs_f64();
    let r3 = spec3.kernel.bellman_residual(&sol3.values.u);
    o.check(secs < 60.0 && r3 < 1e-8, format!("K=10, M=3 build + solve in {secs:.2} s, residual {r3:.2e}"));
    o
}

fn solve_all(model: &FlowModel, horizon: u32) -> Vec<(MdpSpec, Solution)> {
    Variant::ALL
        .iter()
        .map(|&v| solve_variant(model, K, horizon, v, SolveOptions::with_tol(TOL)).expect("solve"))
        .collect()
}

fn structural_properties(solved: &[(MdpSpec, Solution)], model: &FlowModel) -> Outcome {
    let mut o = Outcome::new();
    let (spec, sol) = &solved[0];
    let horizon = spec.horizon;

    let (mut hit, mut n, mut later_cells) = (0.0, 0, Vec::new());
    for e in OrderType::ALL {
        let g1 = idle_grid(spec, sol, e, 1).unwrap();
        let (frac, cells) = market_containment(&g1, &idle_grid(spec, sol, e, horizon).unwrap());
        hit += frac * cells as f64;
        n += cells;
        later_cells.push(g1.count(Action::Market));
    }
    let frac = if n == 0 { 1.0 } else { hit / n as f64 };
    o.check(frac >= 0.99, format!("MARKET at m={horizon} inside MARKET at m=1: {:.1}% of {n} cells (m=1 region sizes {later_cells:?})", 100.0 * frac));
    let (mut hit, mut n) = (0.0, 0);
    for m in 2..horizon {
        for e in OrderType::ALL {
            let (f, c) = market_containment(&idle_grid(spec, sol, e, 1).unwrap(), &idle_grid(spec, sol, e, m).unwrap());
            hit += f * c as f64;
            n += c;
        }
    }
    let frac = if n == 0 { 1.0 } else { hit / n as f64 };
    o.check(frac >= 0.99, format!("MARKET at m=2..{} inside MARKET at m=1: {:.1}% of {n} cells", horizon - 1, 100.0 * frac));

    let fronts = [1, 5, 9];
    let mut monotone = true;
    let mut shown = Vec::new();
    for e in OrderType::ALL {
        let fr: Vec<f64> = fronts.iter().map(|&f| cancel_fraction(&cancel_slice(spec, sol, f, e, 1).unwrap(), f)).collect();
        monotone &= fr.windows(2).all(|w| w[1] >= w[0]);
        shown.push(format!("{e} {:.2}/{:.2}/{:.2}", fr[0], fr[1], fr[2]));
    }
    o.check(monotone, format!("CANCEL share of positive-imbalance cells at m=1 rises with v_front 1/5/9: {}", shown.join(", ")));

    let mut worst = f64::NEG_INFINITY;
    for (rspec, rsol) in &solved[1..] {
        for (i, s) in spec.decision_states() {
            if let Some(v) = rsol.value(rspec, s) {
                worst = worst.max(v - sol.values.u[i]);
            }
        }
    }
    o.check(worst <= 1e-8, format!("U_restricted - U_ALL at most {worst:.2e} over shared states"));

    for (rspec, rsol) in solved {
        let w: Vec<f64> = (1..=horizon).map(|m| rspec.horizon_value(model, &rsol.values.u, m)).collect();
        let drop = w.windows(2).map(|p| p[0] - p[1]).fold(f64::NEG_INFINITY, f64::max);
        let shown: Vec<String> = w.iter().map(|x| format!("{x:.4}")).collect();
        o.check(drop <= 1e-8, format!("{} W(1..{horizon}) = {}", rspec.variant, shown.join(" ")));
    }
    o
}

fn simulation_consistency(solved: &[(MdpSpec, Solution)], model: &FlowModel) -> Outcome {
    let mut o = Outcome::new();
    let bundle: Vec<(&MdpSpec, &Solution)> = solved.iter().map(|(s, p)| (s, p)).collect();
    let horizon = solved[0].0.horizon;
    let n_paths = 100_000;
    let start = Instant::now();
    let res = run_simulation(model, &bundle, n_paths, horizon, SEED).expect("simulation");
    o.note(format!("{n_paths} paths per strategy in {:.2} s", start.elapsed().as_secs_f64()));
    for r in &res {
        let z = (r.mean_reward - r.expected_value) / r.std_error;
        o.check(z.abs() < 3.0, format!("{}: mean {:.4}, E[U] {:.4}, SE {:.4}, z = {z:.2}", r.strategy, r.mean_reward, r.expected_value, r.std_error));
    }
    for r in &res[1..] {
        o.check(
            res[0].mean_reward >= r.mean_reward - 2.0 * r.std_error,
            format!("ALL_ORDERS {:.4} >= {} {:.4} - 2 SE", res[0].mean_reward, r.strategy, r.mean_reward),
        );
    }
    o.check(res[1].pct_cancelled == 0.0, format!("NO_CO cancelled {}%", res[1].pct_cancelled));
    let again = run_simulation(model, &bundle, n_paths, horizon, SEED).expect("simulation");
    let (t1, t2) = (comparison_table(&res), comparison_table(&again));
    o.check(t1 == t2, "rerun with the same seed gives a byte-identical table".into());
    for line in t1.lines() {
        o.note(line.to_string());
    }
    o
}

fn continuation_and_decay() -> Outcome {
    let mut o = Outcome::new();
    let theta = 0.81;
    let model = flow_model(&FixtureParams { theta, ..FixtureParams::default() });
    let path = simulate(&model, 100_000, SEED);
    let table = continuation_table(&path.mid_changes);
    let pp = table.up_up().unwrap();
    o.check((pp - 81.0).abs() <= 1.0, format!("(+ -> +) = {pp:.2}% over {} changes", path.mid_changes.len()));
    for k in 1..=5 {
        let d = &path.mid_changes;
        let agree = (0..d.len() - k).filter(|&j| d[j] == d[j + k]).count() as f64 / (d.len() - k) as f64;
        let oracle = (1.0 + (2.0 * theta - 1.0f64).powi(k as i32)) / 2.0;
        o.check((agree - oracle).abs() <= 0.01, format!("{k}-step agreement {agree:.4} vs (1 + (2 theta - 1)^{k}) / 2 = {oracle:.4}"));
    }

    let n_paths = 40_000;
    let matrix = |theta: f64, seed: u64| {
        let m = flow_model(&FixtureParams { theta, ..FixtureParams::default() });
        let recs = sample_paths(&simulate_many(&m, n_paths, 4, seed), seed);
        accuracy_matrix(&recs, 0.7, true).expect("accuracy matrix")
    };
    let acc = matrix(theta, SEED);
    let before: Vec<f64> = (1..=3).map(|h| acc.accuracy(Anchor::Before, h).unwrap_or(f64::NAN)).collect();
    o.check(
        before[0] > before[1] && before[1] > before[2],
        format!("BEFORE accuracy {:.4} / {:.4} / {:.4} strictly decreasing", before[0], before[1], before[2]),
    );
    for (h, b) in before.iter().enumerate() {
        let bound = (1.0 + (2.0 * theta - 1.0f64).powi(h as i32 + 1)) / 2.0;
        o.check(*b <= bound + 0.02, format!("horizon {}: {b:.4} <= {bound:.4} + 0.02", h + 1));
    }
    for line in acc.to_csv().lines() {
        o.note(line.to_string());
    }
    let control = matrix(0.5, SEED + 1);
    for h in 2..=3 {
        for a in Anchor::ALL {
            let v = control.accuracy(a, h).unwrap_or(f64::NAN);
            o.check((v - 0.5).abs() <= 0.02, format!("theta = 0.5, {} horizon {h}: {v:.4}", a.label()));
        }
    }
    o
}

/// Least-squares slope of `log y` on `log x`.
fn slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let (mx, my) = (lx.iter().sum::<f64>() / 3.0, ly.iter().sum::<f64>() / 3.0);
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    cov / var
}

fn rms(errs: &[f64]) -> f64 {
    (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt()
}

fn consistency_rates() -> Outcome {
    let mut o = Outcome::new();
    let truth = fixture();
    let sizes = [10_000usize, 100_000, 1_000_000];
    let reps = 8;
    // error samples per size: conditional probabilities, theta, refill, market-order sizes
    let mut errs = vec![[Vec::new(), Vec::new(), Vec::new(), Vec::new()]; sizes.len()];
    for (i, &n) in sizes.iter().enumerate() {
        for r in 0..reps {
            let events = simulate_events(&truth, n, SEED + 1000 * i as u64 + r);
            let est = estimate_flow(&events, K, 0.0).expect("estimation");
            for rs in ReducedState::all().filter(|rs| est.usable[rs.index()]) {
                for f in 0..6 {
                    errs[i][0].push(est.row(rs)[f] - truth.row(rs)[f]);
                }
            }
            errs[i][1].push(est.theta - truth.theta);
            for (a, b) in est.refill_bid.iter().chain(&est.refill_ask).zip(truth.refill_bid.iter().chain(&truth.refill_ask)) {
                errs[i][2].push(a - b);
            }
            // the smallest queue sizes see enough market orders at every n
            for q in 1..=3 {
                for (a, b) in est.mo_size_bid[q - 1].iter().zip(&truth.mo_size_bid[q - 1]) {
                    errs[i][3].push(a - b);
                }
            }
        }
    }
    let x: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
    for (j, name) in ["conditional probabilities", "theta", "refill distributions", "market-order sizes"].iter().enumerate() {
        let y: Vec<f64> = errs.iter().map(|e| rms(&e[j])).collect();
        let s = slope(&x, &y);
        o.check(
            (s + 0.5).abs() <= 0.15,
            format!("{name}: RMS error {:.2e} / {:.2e} / {:.2e}, log-log slope {s:.3}", y[0], y[1], y[2]),
        );
    }
    o
}

type Criterion<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn main() {
    let model = fixture();
    let solved = solve_all(&model, 10);
    let criteria: Vec<(&str, Criterion)> = vec![
        ("estimator recovery", Box::new(estimator_recovery)),
        ("GLRT calibration and power", Box::new(glrt_calibration)),
        ("solver correctness", Box::new(solver_correctness)),
        ("structural policy properties", Box::new(|| structural_properties(&solved, &model))),
        ("simulation consistency", Box::new(|| simulation_consistency(&solved, &model))),
        ("continuation and decay", Box::new(continuation_and_decay)),
        ("consistency rates", Box::new(consistency_rates)),
    ];
    let mut failed = 0;
    let mut summary = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = run();
        let verdict = if out.pass { "PASS" } else { "FAIL" };
        failed += !out.pass as usize;
        println!("criterion {} ({name}): {verdict} [{:.1} s]", i + 1, start.elapsed().as_secs_f64());
        for l in &out.lines {
            println!("{l}");
        }
        summary.push(format!("criterion {}: {verdict}  {name}", i + 1));
    }
    println!("\nacceptance summary");
    for s in &summary {
        println!("  {s}");
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
