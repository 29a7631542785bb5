use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use lobmdp::config::RunConfig;
use lobmdp::events::{filter_session_with, normalize_volumes, parse_stream, write_stream, L1Event};
use lobmdp::fixture::{flow_model, scale_stream, FixtureParams, LOT_SIZE};
use lobmdp::flow::{estimate_flow, glrt, recover_intensities, FlowModel};
use lobmdp::imbalance::{
    accuracy_matrix, continuation_table, duration_histogram, mid_changes, sample_stream, spread_stats, AccuracyMatrix,
    ContinuationTable, SPREAD_LABELS,
};
use lobmdp::lobsim::simulate_events;
use lobmdp::mdp::{build_variant, policy_residual, solve, MdpSpec, PolicyFile, SolveOptions, Solution, Variant};
use lobmdp::strategies::{comparison_table, results_to_json, run_simulation};
use lobmdp::{Error, OrderType, Result};

/// Event-time limit order book model: estimation, order-placement MDP and
/// strategy simulation.
#[derive(Parser)]
#[command(name = "lobmdp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

/// Flags shared by every command. Unset flags fall back to the config file,
/// then to the defaults.
#[derive(Args)]
struct Opts {
    /// Flat `key = value` config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Event CSV to read
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Directory for all written artifacts
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Volume cap K
    #[arg(long, global = true)]
    k: Option<u32>,
    /// Number of periods M
    #[arg(long, global = true)]
    periods: Option<u32>,
    /// Simulated paths per strategy
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// Seed for every random stream
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Stopping tolerance on the value change per sweep
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Additive smoothing for transition counts
    #[arg(long, global = true)]
    smoothing: Option<f64>,
    /// ALL_ORDERS, NO_CO or NO_MO; all three when omitted
    #[arg(long, global = true)]
    variant: Option<Variant>,
    /// Fixture without dependence on the last order type
    #[arg(long, global = true)]
    null: bool,
    /// Events generated by `fixture`
    #[arg(long, global = true)]
    events: Option<usize>,
    /// Continuation probability of the fixture model
    #[arg(long, global = true)]
    theta: Option<f64>,
    /// Session open timestamp in ns; with a close, events outside the session and its first and last 30 minutes are dropped
    #[arg(long, global = true)]
    session_open_ns: Option<i64>,
    /// Session close timestamp in ns
    #[arg(long, global = true)]
    session_close_ns: Option<i64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic event stream from the built-in model
    Fixture,
    /// Estimate the flow model from an event stream
    Estimate,
    /// Test whether the last order type matters beyond the imbalance bin
    Glrt,
    /// Solve the order-placement problem and write policies and regions
    Solve,
    /// Write region grids from a stored policy
    Regions {
        /// Periods left; defaults to 1 and the horizon
        #[arg(long = "m", value_delimiter = ',')]
        m: Vec<u32>,
        /// Queue positions for the cancel slices; defaults to 1, K/2 and K-1
        #[arg(long, value_delimiter = ',')]
        v_front: Vec<u32>,
    },
    /// Compare the three strategies on common random paths
    Simulate,
    /// Spread regimes, continuation and imbalance predictive power
    Imbalance {
        /// Bins of the duration histograms
        #[arg(long, default_value_t = 50)]
        bins: usize,
    },
}

impl Opts {
    fn config(&self) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        if let Some(path) = &self.config {
            c.merge_text(&read(path)?)?;
        }
        macro_rules! over {
            ($($f:ident),*) => { $( if let Some(v) = self.$f.clone() { c.$f = v; } )* };
        }
        over!(k, periods, paths, seed, tol, smoothing, events, theta, output_dir);
        if self.input.is_some() {
            c.input = self.input.clone();
        }
        if self.session_open_ns.is_some() {
            c.session_open_ns = self.session_open_ns;
        }
        if self.session_close_ns.is_some() {
            c.session_close_ns = self.session_close_ns;
        }
        c.validate()?;
        Ok(c)
    }

    fn variants(&self) -> Vec<Variant> {
        self.variant.map(|v| vec![v]).unwrap_or_else(|| Variant::ALL.to_vec())
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => e.into(),
    })
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&path, contents)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn input_or(c: &RunConfig, default: &str) -> PathBuf {
    c.input.clone().unwrap_or_else(|| c.output_dir.join(default))
}

fn policy_name(v: Variant) -> String {
    format!("policy_{}.json", v.label())
}

/// Parse, trim to the session when both ends are given, and normalize.
fn load_events(c: &RunConfig) -> Result<(Vec<L1Event>, f64)> {
    let path = c.input.clone().ok_or_else(|| Error::InvalidArgument("--input is required".into()))?;
    let mut events = parse_stream(&read(&path)?)?;
    if let (Some(open), Some(close)) = (c.session_open_ns, c.session_close_ns) {
        events = filter_session_with(&events, open, close, c.session_edge_ns);
    }
    let (events, factor) = normalize_volumes(&events, c.k)?;
    eprintln!("{} events, volume unit {factor}", events.len());
    Ok((events, factor))
}

fn load_model(c: &RunConfig) -> Result<FlowModel> {
    FlowModel::from_json(&read(&input_or(c, "model.json"))?)
}

fn cmd_fixture(c: &RunConfig, null: bool) -> Result<()> {
    let params = FixtureParams { k: c.k, theta: c.theta, e_effect: c.e_effect };
    let params = if null { params.null() } else { params };
    let model = flow_model(&params);
    let events = scale_stream(&simulate_events(&model, c.events, c.seed), LOT_SIZE);
    write(&c.output_dir, "fixture.csv", &write_stream(&events))?;
    write(&c.output_dir, "fixture_model.json", &model.to_json()?)
}

fn cmd_estimate(c: &RunConfig) -> Result<()> {
    let (events, factor) = load_events(c)?;
    let mut model = estimate_flow(&events, c.k, c.smoothing)?;
    model.factor = factor;
    let test = glrt(&events, c.k);
    write(&c.output_dir, "model.json", &model.to_json()?)?;
    write(&c.output_dir, "glrt.csv", &test.to_csv())?;
    write(&c.output_dir, "conditional_probs.csv", &model.probs_csv())?;
    write(&c.output_dir, "intensities.csv", &recover_intensities(&events, c.k).to_csv())
}

fn cmd_glrt(c: &RunConfig) -> Result<()> {
    let test = glrt(&load_events(c)?.0, c.k);
    println!("statistic {:.4} df {} p-value {:e}", test.statistic, test.df, test.p_value);
    write(&c.output_dir, "glrt.csv", &test.to_csv())
}

#[derive(Serialize)]
struct SolveReport {
    variant: Variant,
    k: u32,
    horizon: u32,
    tol: f64,
    nodes: usize,
    sweeps: usize,
    updates: u64,
    bellman_residual: f64,
    policy_residual: f64,
    /// Expected value from a fresh book with `m` periods left, `m = 1..=M`.
    horizon_values: Vec<f64>,
}

fn write_regions(c: &RunConfig, file: &PolicyFile, ms: &[u32], fronts: &[u32]) -> Result<()> {
    let dir = c.output_dir.join("regions").join(file.variant.label());
    for &m in ms {
        for e in OrderType::ALL {
            write(&dir, &format!("idle_m{m}_{e}.csv"), &file.idle_grid(e, m)?.to_csv())?;
            if file.variant != Variant::NoCo {
                for &f in fronts {
                    write(&dir, &format!("cancel_m{m}_vf{f}_{e}.csv"), &file.cancel_slice(f, e, m)?.to_csv())?;
                }
            }
        }
    }
    Ok(())
}

fn default_fronts(k: u32) -> Vec<u32> {
    let mut f = vec![1, k / 2, k - 1];
    f.dedup();
    f
}

fn cmd_solve(c: &RunConfig, variants: &[Variant]) -> Result<()> {
    let model = load_model(c)?;
    let opts = SolveOptions::with_tol(c.tol);
    for &v in variants {
        let start = Instant::now();
        let spec = build_variant(&model, model.k, c.periods, v)?;
        spec.validate()?;
        let sol = solve(&spec, opts)?;
        let report = SolveReport {
            variant: v,
            k: spec.k,
            horizon: spec.horizon,
            tol: c.tol,
            nodes: spec.len(),
            sweeps: sol.values.sweeps,
            updates: sol.values.updates,
            bellman_residual: spec.kernel.bellman_residual(&sol.values.u),
            policy_residual: policy_residual(&spec.kernel, &sol.values.u, &sol.policy),
            horizon_values: (1..=spec.horizon).map(|m| spec.horizon_value(&model, &sol.values.u, m)).collect(),
        };
        eprintln!("{v}: {} nodes solved in {:.2?}, residual {:e}", report.nodes, start.elapsed(), report.bellman_residual);
        let file = PolicyFile::from_solution(&spec, &sol);
        write(&c.output_dir, &policy_name(v), &file.to_json()?)?;
        write(&c.output_dir, &format!("solve_{}.json", v.label()), &serde_json::to_string_pretty(&report)?)?;
        let mut ms = vec![1, spec.horizon];
        ms.dedup();
        write_regions(c, &file, &ms, &default_fronts(spec.k))?;
    }
    Ok(())
}

fn cmd_regions(c: &RunConfig, variant: Option<Variant>, ms: &[u32], fronts: &[u32]) -> Result<()> {
    let path = c.input.clone().unwrap_or_else(|| c.output_dir.join(policy_name(variant.unwrap_or(Variant::AllOrders))));
    let file = PolicyFile::from_json(&read(&path)?)?;
    let ms = if ms.is_empty() {
        let mut d = vec![1, file.horizon];
        d.dedup();
        d
    } else {
        ms.to_vec()
    };
    let fronts = if fronts.is_empty() { default_fronts(file.k) } else { fronts.to_vec() };
    write_regions(c, &file, &ms, &fronts)
}

fn cmd_simulate(c: &RunConfig) -> Result<()> {
    let model = load_model(c)?;
    let mut solved: Vec<(MdpSpec, Solution)> = Vec::new();
    for v in Variant::ALL {
        let file = PolicyFile::from_json(&read(&c.output_dir.join(policy_name(v)))?)?;
        let spec = build_variant(&model, file.k, file.horizon, v)?;
        let sol = file.to_solution(&spec)?;
        solved.push((spec, sol));
    }
    let horizon = solved[0].0.horizon;
    let bundle: Vec<(&MdpSpec, &Solution)> = solved.iter().map(|(s, p)| (s, p)).collect();
    let start = Instant::now();
    let results = run_simulation(&model, &bundle, c.paths, horizon, c.seed)?;
    eprintln!("{} paths per strategy in {:.2?}", c.paths, start.elapsed());
    let table = comparison_table(&results);
    print!("{table}");
    write(&c.output_dir, "table5.csv", &table)?;
    write(&c.output_dir, "simulation.json", &results_to_json(&results)?)
}

#[derive(Serialize)]
struct ImbalanceReport {
    n_events: usize,
    n_mid_changes: usize,
    spread_transitions: [[u64; 3]; 3],
    continuation: ContinuationTable,
    accuracy: AccuracyMatrix,
}

fn cmd_imbalance(c: &RunConfig, bins: usize) -> Result<()> {
    let (events, _) = load_events(c)?;
    let spread = spread_stats(&events);
    let dirs = mid_changes(&events);
    let cont = continuation_table(&dirs);
    let acc = accuracy_matrix(&sample_stream(&events, c.seed), 0.7, true)?;
    write(&c.output_dir, "spread_transitions.csv", &spread.to_csv())?;
    for (b, label) in SPREAD_LABELS.iter().enumerate() {
        let name = format!("spread_durations_{}.csv", label.trim_start_matches(">="));
        write(&c.output_dir, &name, &duration_histogram(&spread.durations[b], bins))?;
    }
    write(&c.output_dir, "continuation.csv", &cont.to_csv())?;
    write(&c.output_dir, "accuracy.csv", &acc.to_csv())?;
    let report = ImbalanceReport {
        n_events: events.len(),
        n_mid_changes: dirs.len(),
        spread_transitions: spread.transitions,
        continuation: cont,
        accuracy: acc,
    };
    write(&c.output_dir, "imbalance.json", &serde_json::to_string_pretty(&report)?)
}

fn run(cli: Cli) -> Result<()> {
    let c = cli.opts.config()?;
    match cli.command {
        Command::Fixture => cmd_fixture(&c, cli.opts.null),
        Command::Estimate => cmd_estimate(&c),
        Command::Glrt => cmd_glrt(&c),
        Command::Solve => cmd_solve(&c, &cli.opts.variants()),
        Command::Regions { m, v_front } => cmd_regions(&c, cli.opts.variant, &m, &v_front),
        Command::Simulate => cmd_simulate(&c),
        Command::Imbalance { bins } => cmd_imbalance(&c, bins),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
