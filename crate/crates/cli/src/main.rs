use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;
use serde_json::Value;

use skybridge::association::{Direction, LinkId};
use skybridge::channel::{self, LinkClass, RadioNode};
use skybridge::harness::{self, Overrides, SweepSpec};
use skybridge::placement::{shrink_and_realign, TRACE_HEADER};
use skybridge::scenario::{build_scenario, validate, Mode, NodeKind, Scenario, ScenarioConfig};
use skybridge::LinkBudget;

#[derive(Parser)]
#[command(name = "skybridge", version, about = "Integrated satellite / HAP / balloon / ground network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate one scenario end to end and print a summary.
    Run(RunArgs),
    /// Run a parameter sweep and write the CSV (and optionally an SVG plot).
    Sweep(SweepArgs),
    /// Optimize HAP/TB positions and write them as a config patch.
    Place(PlaceArgs),
    /// Check a config (and optionally a sweep spec) without running anything.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Scenario config (JSON). Repeat to layer patches; later files win.
    #[arg(long = "config", required = true, value_name = "FILE")]
    configs: Vec<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Overrides the config's mode.
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long, default_value = "uplink")]
    direction: Direction,
    /// Run placement before the final association.
    #[arg(long)]
    place: bool,
    /// Print the budget of one directed link, e.g. `user:4,station:37`.
    #[arg(long, value_name = "TX,RX")]
    dump_link_budget: Option<String>,
    /// Print every access and back-haul association as CSV.
    #[arg(long)]
    dump_associations: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Sweep spec (JSON).
    #[arg(long, value_name = "FILE")]
    spec: PathBuf,
    #[arg(long, value_name = "PATH")]
    out_csv: PathBuf,
    #[arg(long, value_name = "PATH")]
    out_plot: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct PlaceArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long, default_value = "uplink")]
    direction: Direction,
    #[arg(long, value_name = "PATH")]
    out_patch: PathBuf,
    #[arg(long, value_name = "PATH")]
    out_trace: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_name = "FILE")]
    spec: Option<PathBuf>,
}

/// Failure classes, mapped onto the process exit code.
enum Failure {
    Input(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

fn input<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Input(e.to_string())
}

fn runtime<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Runtime(e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Place(a) => place(a),
        Command::Validate(a) => validate_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Input(msg) | Failure::Runtime(msg)) = &f;
            eprintln!("error: {msg}");
            ExitCode::from(f.code())
        }
    }
}

/// Deep-merges `patch` into `base`: objects merge key by key, anything else replaces.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn read_json(path: &Path) -> Result<Value, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn load_config(args: &ConfigArgs) -> Result<ScenarioConfig, Failure> {
    let mut value = Value::Object(Default::default());
    for path in &args.configs {
        merge(&mut value, read_json(path)?);
    }
    ScenarioConfig::from_json(&value.to_string()).map_err(input)
}

fn load_scenario(args: &ConfigArgs, mode: Option<Mode>) -> Result<Scenario, Failure> {
    let mut cfg = load_config(args)?;
    if let Some(m) = mode {
        cfg.mode = m;
    }
    let scenario = build_scenario(&cfg).map_err(input)?;
    let violations = validate(&scenario);
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(Failure::Input(format!("invalid scenario: {}", list.join("; "))));
    }
    Ok(scenario)
}

fn load_spec(path: &Path) -> Result<SweepSpec, Failure> {
    let spec: SweepSpec = serde_json::from_value(read_json(path)?).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    spec.check().map_err(input)?;
    Ok(spec)
}

#[derive(Serialize)]
struct RunSummary {
    mode: Mode,
    direction: Direction,
    users: usize,
    served: usize,
    mean_rate_bps: f64,
    min_rate_bps: f64,
    utility: f64,
}

fn run(a: RunArgs) -> Result<(), Failure> {
    let scenario = load_scenario(&a.config, a.mode)?;
    let mode = scenario.config.mode;

    if let Some(pair) = &a.dump_link_budget {
        let budget = link_budget(&scenario, pair)?;
        println!("{}", LinkBudget::CSV_HEADER);
        println!("{}", budget.csv_row());
        return Ok(());
    }

    let overrides = Overrides { placement: a.place.then(|| scenario.config.placement.clone()), ..Default::default() };
    let out = harness::run_pipeline(&scenario, a.direction, mode, &overrides).map_err(runtime)?;

    if a.dump_associations {
        print!("{}", associations_csv(&out));
        return Ok(());
    }

    let alloc = &out.allocation;
    let summary = RunSummary {
        mode,
        direction: a.direction,
        users: alloc.users.len(),
        served: alloc.users.iter().filter(|u| u.station_id.is_some()).count(),
        mean_rate_bps: alloc.mean_rate(),
        min_rate_bps: alloc.min_rate(),
        utility: alloc.utility_value,
    };
    println!("{}", serde_json::to_string_pretty(&summary).map_err(runtime)?);
    Ok(())
}

/// `direction,child,parent,medium,estimated_rate_bps`. Access rows carry the
/// allocated effective rate; back-haul rows the link capacity.
fn associations_csv(out: &harness::PointOutcome) -> String {
    let dir = out.allocation.direction;
    let mut s = String::from("direction,child,parent,medium,estimated_rate_bps\n");
    for u in &out.allocation.users {
        let parent = u.station_id.map(|id| format!("station:{id}")).unwrap_or_else(|| "none".into());
        let medium = if u.station_id.is_some() { "rf" } else { "" };
        s.push_str(&format!("{dir},user:{},{parent},{medium},{}\n", u.user_id, u.effective_rate_bps));
    }
    for (id, link) in &out.backhaul.links {
        let medium = link.medium.map(|m| m.to_string()).unwrap_or_else(|| "fiber".into());
        s.push_str(&format!("{dir},station:{id},{},{medium},{}\n", link.parent, link.capacity_bps));
    }
    for (link, load) in &out.allocation.link_load_bps {
        if let LinkId::Fiber(g) = link {
            let cap = out.scenario.gateway(*g).map(|g| g.fiber_rate_bps).unwrap_or(f64::NAN);
            info!("fiber gateway:{g} carries {load} of {cap} bit/s");
        }
    }
    s
}

enum NodeRef {
    Station(u32),
    User(u32),
    Gateway(u32),
}

impl FromStr for NodeRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, id) = s.trim().split_once(':').ok_or_else(|| format!("`{s}`: expected KIND:ID"))?;
        let id: u32 = id.parse().map_err(|_| format!("`{s}`: bad id"))?;
        match kind {
            "station" => Ok(NodeRef::Station(id)),
            "user" => Ok(NodeRef::User(id)),
            "gateway" => Ok(NodeRef::Gateway(id)),
            _ => Err(format!("`{s}`: kind must be station, user or gateway")),
        }
    }
}

fn resolve<'a>(scenario: &'a Scenario, r: &NodeRef) -> Result<&'a dyn RadioNode, Failure> {
    let node: Option<&dyn RadioNode> = match *r {
        NodeRef::Station(id) => scenario.station(id).map(|s| s as &dyn RadioNode),
        NodeRef::User(id) => scenario.user(id).map(|u| u as &dyn RadioNode),
        NodeRef::Gateway(id) => scenario.gateway(id).map(|g| g as &dyn RadioNode),
    };
    node.ok_or_else(|| Failure::Input("link endpoint does not exist".into()))
}

/// Height in the back-haul tree; the lower end of a pair owns the link's bandwidth.
fn layer(kind: NodeKind) -> u8 {
    match kind {
        NodeKind::User => 0,
        NodeKind::TetheredBalloon | NodeKind::GroundBaseStation => 1,
        NodeKind::Hap => 2,
        NodeKind::Satellite => 3,
        NodeKind::Gateway => 4,
    }
}

fn link_budget(scenario: &Scenario, pair: &str) -> Result<LinkBudget, Failure> {
    let (tx, rx) = pair.split_once(',').ok_or_else(|| Failure::Input(format!("`{pair}`: expected TX,RX")))?;
    let (tx_ref, rx_ref) = (tx.parse::<NodeRef>().map_err(Failure::Input)?, rx.parse::<NodeRef>().map_err(Failure::Input)?);
    let (tx, rx) = (resolve(scenario, &tx_ref)?, resolve(scenario, &rx_ref)?);
    let class = LinkClass::between(tx.kind(), rx.kind())
        .ok_or_else(|| Failure::Input(format!("no link class between {} and {}", tx.kind(), rx.kind())))?;
    let params = &scenario.config.channel;

    if class.is_access() {
        let serving = if tx.kind() == NodeKind::User { rx.kind() } else { tx.kind() };
        let band = scenario.config.allocation.access_bandwidth.for_kind(serving);
        return channel::rf_link_budget(tx, rx, tx.tx_power_dbm(), band, params).map_err(input);
    }
    let station_ref = |r: &NodeRef| match *r {
        NodeRef::Station(id) => scenario.station(id),
        _ => None,
    };
    let owner = if layer(tx.kind()) <= layer(rx.kind()) { station_ref(&tx_ref) } else { station_ref(&rx_ref) }
        .or_else(|| station_ref(&tx_ref))
        .or_else(|| station_ref(&rx_ref))
        .ok_or_else(|| Failure::Input("a back-haul link needs at least one station".into()))?;
    channel::best_medium(tx, rx, params, owner.backhaul_bandwidth_rf_hz, owner.backhaul_bandwidth_fso_hz).map_err(input)
}

fn sweep(a: SweepArgs) -> Result<(), Failure> {
    let cfg = load_config(&a.config)?;
    let spec = load_spec(&a.spec)?;
    let go = || harness::run_sweep(&spec, &cfg);
    let result = match a.threads {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(runtime)?.install(go),
        None => go(),
    }
    .map_err(runtime)?;
    harness::emit_csv(&result, &a.out_csv).map_err(runtime)?;
    info!("wrote {} rows to {}", result.rows.len(), a.out_csv.display());
    if let Some(plot) = &a.out_plot {
        harness::emit_plot(&result, plot).map_err(runtime)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Patch<'a> {
    station_positions: &'a std::collections::BTreeMap<u32, skybridge::Position>,
}

fn place(a: PlaceArgs) -> Result<(), Failure> {
    let scenario = load_scenario(&a.config, a.mode)?;
    let mode = scenario.config.mode;
    let targets = harness::placement_targets(&scenario, mode);
    if targets.is_empty() {
        warn!("mode {mode} has no movable stations");
    }
    let direction = a.direction;
    let outcome = shrink_and_realign(&scenario, &targets, |s| harness::pipeline_utility(s, direction), &scenario.config.placement)
        .map_err(runtime)?;
    info!("objective {} -> {} over {} rounds", outcome.initial_objective, outcome.final_objective, outcome.trace.len());

    let patch = serde_json::to_string_pretty(&Patch { station_positions: &outcome.positions }).map_err(runtime)?;
    fs::write(&a.out_patch, patch + "\n").map_err(|e| Failure::Runtime(format!("{}: {e}", a.out_patch.display())))?;
    if let Some(path) = &a.out_trace {
        let mut csv = String::from(TRACE_HEADER);
        csv.push('\n');
        for row in &outcome.trace {
            csv.push_str(&row.csv_row());
            csv.push('\n');
        }
        fs::write(path, csv).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn validate_cmd(a: ValidateArgs) -> Result<(), Failure> {
    let scenario = load_scenario(&a.config, None)?;
    if let Some(spec) = &a.spec {
        load_spec(spec)?;
    }
    println!(
        "ok: {} stations, {} users, {} gateways",
        scenario.stations.len(),
        scenario.users.len(),
        scenario.gateways.len()
    );
    Ok(())
}
