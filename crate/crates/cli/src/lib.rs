//! Command-line front end: single runs, experiment sweeps and exports.
//!
//! Results CSV columns, fixed across versions:
//!
//! ```text
//! policy,volume,proportions,seed,mean_tt,std_tt,status,throughput,layers_used,spacing_violations,zone_violations,headway_violations
//! ```
//!
//! `proportions` is `right/straight/left`, e.g. `0.5/0.25/0.25`. `status` is
//! `ok` or `failed`; the numeric fields of a failed run are empty.
//! Rows follow the run order of the matrix (volume, proportions, policy,
//! seed) whatever the number of worker threads.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use laneflex::conflict::build_conflict_matrix;
use laneflex::sim::{
    export_snapshot, parse_config, simulate, ConfigFile, MatrixConfig, MetricsReport, Policy, ScenarioConfig, SimOutput,
};
use laneflex::{Error, Result};
use serde::Serialize;

pub const CSV_HEADER: [&str; 12] = [
    "policy",
    "volume",
    "proportions",
    "seed",
    "mean_tt",
    "std_tt",
    "status",
    "throughput",
    "layers_used",
    "spacing_violations",
    "zone_violations",
    "headway_violations",
];

#[derive(Debug, Parser)]
#[command(name = "laneflex", version, about = "Lane-free formation control at unsignalized intersections")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one scenario.
    Run(RunArgs),
    /// Run every combination of an experiment matrix.
    Matrix(MatrixArgs),
    /// Write the movement conflict matrix as CSV.
    DumpConflicts(DumpArgs),
    /// Simulate one scenario and export all vehicle states at one instant.
    Snapshot(SnapshotArgs),
    /// Print a configuration file with every default filled in.
    DefaultConfig {
        /// Experiment matrix instead of a single scenario.
        #[arg(long)]
        matrix: bool,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML configuration; defaults apply to omitted fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// flexible, fixed or signalized
    #[arg(long)]
    pub policy: Option<Policy>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output directory for report.json and the optional logs.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write trajectories.csv (`t,id,x,y,v,theta,a,delta`, world frame, SI units, radians).
    #[arg(long)]
    pub log_trajectories: bool,
    /// Write planning.json: per admission round, the layer and lane of
    /// every vehicle and the node counts and cost of each path search.
    #[arg(long)]
    pub dump_planning: bool,
}

#[derive(Debug, Args)]
pub struct MatrixArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output directory; overrides the one in the file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write per-run trajectory CSVs.
    #[arg(long)]
    pub log_trajectories: bool,
    /// Worker threads, default one per core.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// File to write, standard output otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SnapshotArgs {
    #[command(flatten)]
    pub common: Common,
    /// Simulation time of the snapshot, s.
    #[arg(long)]
    pub time: f64,
    /// Length of the position trail kept per vehicle, s.
    #[arg(long, default_value_t = 5.0)]
    pub trail: f64,
    /// File to write, standard output otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::InvalidArgument(format!("{}: {e}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

/// The scenario of `--config` (defaults without one) with overrides applied.
pub fn load_scenario(c: &Common) -> Result<ScenarioConfig> {
    let mut cfg = match &c.config {
        None => ScenarioConfig::default(),
        Some(p) => match parse_config(p)? {
            ConfigFile::Scenario(s) => s,
            ConfigFile::Matrix(_) => {
                return Err(Error::Config(format!("{} is an experiment matrix; use `matrix`", p.display())))
            }
        },
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(p) = c.policy {
        cfg.policy = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// The matrix of `--config`; `--seed` and `--policy` narrow it to one value.
pub fn load_matrix(c: &Common) -> Result<MatrixConfig> {
    let mut m = match &c.config {
        None => MatrixConfig::default(),
        Some(p) => match parse_config(p)? {
            ConfigFile::Matrix(m) => m,
            ConfigFile::Scenario(_) => return Err(Error::Config(format!("{} has no [matrix] table", p.display()))),
        },
    };
    if let Some(s) = c.seed {
        m.matrix.seeds = vec![s];
    }
    if let Some(p) = c.policy {
        m.matrix.policies = vec![p];
    }
    m.validate()?;
    Ok(m)
}

fn run_one(cfg: &ScenarioConfig, out: Option<&Path>, dump_planning: bool) -> Result<SimOutput> {
    let cfg = ScenarioConfig { log_planning: dump_planning, ..cfg.clone() };
    let o = simulate(&cfg)?;
    if let Some(dir) = out {
        write(&dir.join("report.json"), &o.report.to_json())?;
        write(&dir.join("config.toml"), &cfg.to_toml())?;
        if let Some(log) = &o.trajectories {
            write(&dir.join("trajectories.csv"), &log.to_csv())?;
        }
        if let Some(p) = &o.planning {
            write(&dir.join("planning.json"), &json(p))?;
        }
    }
    Ok(o)
}

pub fn summary(r: &MetricsReport) -> String {
    let s = &r.safety;
    format!(
        "{} volume {} proportions {:?} seed {}: mean travel time {:.3} s (std {:.3}), throughput {:.0} veh/h, violations spacing {} zone {} headway {}",
        r.policy.name(),
        r.volume,
        r.proportions,
        r.seed,
        r.mean_travel_time,
        r.std_travel_time,
        r.throughput,
        s.spacing_violations,
        s.zone_violations,
        s.headway_violations
    )
}

/// Outcome of one matrix entry.
pub struct RunResult {
    pub cfg: ScenarioConfig,
    pub outcome: Result<MetricsReport>,
}

fn opt(x: f64) -> String {
    if x.is_finite() {
        x.to_string()
    } else {
        String::new()
    }
}

pub fn csv_row(r: &RunResult) -> Vec<String> {
    let c = &r.cfg;
    let mut row = vec![
        c.policy.name().to_string(),
        c.volume.to_string(),
        c.proportions.map(|p| p.to_string()).join("/"),
        c.seed.to_string(),
    ];
    match &r.outcome {
        Ok(m) => row.extend([
            opt(m.mean_travel_time),
            opt(m.std_travel_time),
            "ok".to_string(),
            opt(m.throughput),
            m.layers.map(|l| l.layers_used.to_string()).unwrap_or_default(),
            m.safety.spacing_violations.to_string(),
            m.safety.zone_violations.to_string(),
            m.safety.headway_violations.to_string(),
        ]),
        Err(_) => {
            row.extend([String::new(), String::new(), "failed".into()]);
            row.extend(std::iter::repeat_n(String::new(), CSV_HEADER.len() - row.len()));
        }
    }
    row
}

pub fn results_csv(results: &[RunResult]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in results {
        w.write_record(csv_row(r)).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

fn run_name(c: &ScenarioConfig) -> String {
    let p = c.proportions.map(|x| format!("{:.0}", x * 100.0)).join("-");
    format!("{}_v{}_p{}_s{}", c.policy.name(), c.volume, p, c.seed)
}

#[derive(Serialize)]
struct Failure<'a> {
    run: String,
    policy: &'a str,
    volume: f64,
    proportions: [f64; 3],
    seed: u64,
    error: String,
}

/// Runs every entry on `jobs` threads, writes `results.csv`, per-run JSON
/// under `runs/` and, when a run aborts, `failures.json`. Returns all
/// results in matrix order.
pub fn run_matrix(m: &MatrixConfig, out: &Path, jobs: usize, log_trajectories: bool) -> Result<Vec<RunResult>> {
    let runs: Vec<ScenarioConfig> = m.runs().into_iter().map(|c| ScenarioConfig { log_trajectories, ..c }).collect();
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<RunResult>>> = runs.iter().map(|_| Mutex::new(None)).collect();
    let write_lock = Mutex::new(());
    std::thread::scope(|s| {
        for _ in 0..jobs.max(1).min(runs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cfg) = runs.get(i) else { break };
                let outcome = simulate(cfg);
                {
                    let _g = write_lock.lock().unwrap();
                    if let Ok(o) = &outcome {
                        let name = run_name(cfg);
                        let _ = write(&out.join("runs").join(format!("{name}.json")), &o.report.to_json());
                        if let Some(log) = &o.trajectories {
                            let _ = write(&out.join("runs").join(format!("{name}.trajectories.csv")), &log.to_csv());
                        }
                    }
                }
                *slots[i].lock().unwrap() = Some(RunResult { cfg: cfg.clone(), outcome: outcome.map(|o| o.report) });
            });
        }
    });
    let results: Vec<RunResult> =
        slots.into_iter().map(|s| s.into_inner().unwrap().expect("every run executed")).collect();
    write(&out.join("results.csv"), &results_csv(&results))?;
    let failures: Vec<Failure> = results
        .iter()
        .filter_map(|r| {
            r.outcome.as_ref().err().map(|e| Failure {
                run: run_name(&r.cfg),
                policy: r.cfg.policy.name(),
                volume: r.cfg.volume,
                proportions: r.cfg.proportions,
                seed: r.cfg.seed,
                error: e.to_string(),
            })
        })
        .collect();
    let manifest = out.join("failures.json");
    if failures.is_empty() {
        if manifest.exists() {
            fs::remove_file(&manifest).map_err(|e| io_err(&manifest, e))?;
        }
    } else {
        write(&manifest, &json(&failures))?;
    }
    Ok(results)
}

/// Executes a parsed command line. `Ok(false)` means some matrix runs failed.
pub fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run(a) => {
            let mut cfg = load_scenario(&a.common)?;
            cfg.log_trajectories |= a.log_trajectories;
            if cfg.log_trajectories && a.out.is_none() {
                return Err(Error::InvalidArgument("--log-trajectories needs --out".into()));
            }
            if a.dump_planning && a.out.is_none() {
                return Err(Error::InvalidArgument("--dump-planning needs --out".into()));
            }
            let o = run_one(&cfg, a.out.as_deref(), a.dump_planning)?;
            println!("{}", summary(&o.report));
            Ok(true)
        }
        Command::Matrix(a) => {
            let m = load_matrix(&a.common)?;
            let out = a.out.unwrap_or_else(|| PathBuf::from(&m.matrix.out_dir));
            let jobs = a.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let results = run_matrix(&m, &out, jobs, a.log_trajectories)?;
            let failed = results.iter().filter(|r| r.outcome.is_err()).count();
            println!("{} runs, {} failed; results in {}", results.len(), failed, out.join("results.csv").display());
            Ok(failed == 0)
        }
        Command::DumpConflicts(a) => {
            let cfg = load_scenario(&Common { config: a.config, seed: None, policy: None })?;
            let csv = build_conflict_matrix(&cfg.geometry)?.to_csv();
            match a.out {
                Some(p) => write(&p, &csv)?,
                None => print!("{csv}"),
            }
            Ok(true)
        }
        Command::Snapshot(a) => {
            let mut cfg = load_scenario(&a.common)?;
            cfg.log_trajectories = true;
            let o = simulate(&cfg)?;
            let log = o.trajectories.expect("logging enabled");
            let snap = export_snapshot(&log, a.time, a.trail)?;
            match a.out {
                Some(p) => write(&p, &json(&snap))?,
                None => println!("{}", json(&snap)),
            }
            Ok(true)
        }
        Command::DefaultConfig { matrix } => {
            if matrix {
                print!("{}", MatrixConfig::default().to_toml());
            } else {
                print!("{}", ScenarioConfig::default().to_toml());
            }
            Ok(true)
        }
    }
}
