//! Command-line front end: single solves, Monte Carlo sweeps, grouping
//! comparisons, and group-set dumps.
//!
//! Exit codes: 0 on success, 1 on usage/validation errors (the message names
//! the offending flag or key), 2 on runtime failures.

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use relay_mimo::grouping::{self, GroupingAlgo};
use relay_mimo::harness::{self, Algorithm, SweepSpec};
use relay_mimo::scenario::{
    derive_seed, generate_topology, sample_channels, ScenarioConfig, ScenarioError,
};
use relay_mimo::solver::{self, Objective, SolverOptions};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "relay-mimo",
    about = "Multi-relay MIMO-OFDMA downlink simulator and SE/ESE optimizer",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Flat key-value config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config override `key=value`, repeatable. dBm/dB unit variants such as
    /// `p_max_b_dbm` are accepted.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Root RNG seed (overrides the config's `rng_seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Grouping algorithm.
    #[arg(long, default_value = "ocga")]
    grouping: String,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one channel sample, group its SMCs and solve it.
    Solve {
        #[command(flatten)]
        common: CommonArgs,
        /// Algorithm to run: sem, esem or rgepa.
        #[arg(long, default_value = "esem")]
        algorithm: String,
    },
    /// Run a Monte Carlo parameter sweep and emit aggregate CSV.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Sweep axis `key=v1,v2,...`, repeatable; the grid is the cartesian
        /// product with the last axis varying fastest.
        #[arg(long = "axis", value_name = "KEY=V1,V2,...")]
        axes: Vec<String>,
        /// Channel samples per grid point.
        #[arg(long, default_value_t = 100)]
        samples: usize,
        /// Algorithms to run on identical channels, repeatable.
        #[arg(long = "algorithm")]
        algorithms: Vec<String>,
        /// Worker threads (0 = all cores).
        #[arg(long, default_value_t = 0)]
        workers: usize,
        /// Optional JSON-lines dump of the per-sample records.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Compare ESGA and OCGA on identical channels across alpha values.
    CompareGrouping {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated semi-orthogonality parameters.
        #[arg(long, default_value = "0.1,0.2,0.3,0.4,0.5")]
        alphas: String,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Dump the grouped SMC sets of one channel sample as JSON.
    DumpGroups {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e)
            if e.kind() == ErrorKind::DisplayHelp || e.kind() == ErrorKind::DisplayVersion =>
        {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            eprint!("{e}");
            return 1;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    }
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Io(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

fn load_config(common: &CommonArgs) -> Result<(ScenarioConfig, GroupingAlgo), CliError> {
    let mut cfg = match &common.config {
        Some(path) => ScenarioConfig::from_file(path)?,
        None => ScenarioConfig::default(),
    };
    for pair in &common.set {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got `{pair}`")))?;
        cfg.set_field(key.trim(), value)?;
    }
    if let Some(seed) = common.seed {
        cfg.rng_seed = seed;
    }
    cfg.validate()?;
    let grouping: GroupingAlgo = common
        .grouping
        .parse()
        .map_err(|e: String| CliError::Usage(format!("--grouping: {e}")))?;
    Ok((cfg, grouping))
}

fn write_output(out: &Option<PathBuf>, content: &str) -> Result<(), CliError> {
    match out {
        Some(path) => {
            std::fs::write(path, content).map_err(|e| CliError::Runtime(e.to_string()))
        }
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn parse_algorithm(name: &str) -> Result<Algorithm, CliError> {
    name.parse()
        .map_err(|e: String| CliError::Usage(format!("--algorithm: {e}")))
}

fn build_sample(
    cfg: &ScenarioConfig,
    grouping_algo: GroupingAlgo,
) -> Result<(Vec<grouping::CandidateSet>, grouping::GroupSet), CliError> {
    let topo = generate_topology(cfg, derive_seed(cfg.rng_seed, &[0x01, 0]));
    let channels = sample_channels(cfg, &topo, derive_seed(cfg.rng_seed, &[0x02, 0]));
    grouping::build_group_set(&channels, cfg, grouping_algo)
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve { common, algorithm } => {
            let (cfg, grouping_algo) = load_config(&common)?;
            let alg = parse_algorithm(&algorithm)?;
            let (_, gs) = build_sample(&cfg, grouping_algo)?;
            let opts = SolverOptions::default();
            let result = match alg {
                Algorithm::Sem => solver::solve(&cfg, &gs, Objective::Sem, &opts),
                Algorithm::Esem => solver::solve(&cfg, &gs, Objective::Esem, &opts),
                Algorithm::RgEpa => Ok(solver::rg_epa(
                    &cfg,
                    &gs,
                    derive_seed(cfg.rng_seed, &[0x03, 0]),
                )),
            }
            .map_err(|e| CliError::Runtime(e.to_string()))?;
            let doc = serde_json::to_string_pretty(&result)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            write_output(&common.out, &(doc + "\n"))
        }
        Command::Sweep {
            common,
            axes,
            samples,
            algorithms,
            workers,
            dump,
        } => {
            let (cfg, grouping_algo) = load_config(&common)?;
            let mut parsed_axes = Vec::new();
            for axis in &axes {
                let (key, values) = axis.split_once('=').ok_or_else(|| {
                    CliError::Usage(format!("--axis expects key=v1,v2,..., got `{axis}`"))
                })?;
                let values: Result<Vec<f64>, _> =
                    values.split(',').map(|v| v.trim().parse::<f64>()).collect();
                let values = values.map_err(|_| {
                    CliError::Usage(format!("--axis {key}: values must be numbers"))
                })?;
                if values.is_empty() {
                    return Err(CliError::Usage(format!("--axis {key}: no values")));
                }
                parsed_axes.push((key.trim().to_string(), values));
            }
            let algorithms = if algorithms.is_empty() {
                vec![Algorithm::Sem, Algorithm::Esem, Algorithm::RgEpa]
            } else {
                algorithms
                    .iter()
                    .map(|a| parse_algorithm(a))
                    .collect::<Result<Vec<_>, _>>()?
            };
            let spec = SweepSpec {
                axes: parsed_axes,
                samples,
                algorithms,
                grouping: grouping_algo,
            };
            let result = harness::run_sweep(&spec, &cfg, workers).map_err(|e| match e {
                harness::HarnessError::UnknownAxis(_)
                | harness::HarnessError::NoSamples
                | harness::HarnessError::NoAlgorithms
                | harness::HarnessError::Scenario(_) => CliError::Usage(e.to_string()),
                other => CliError::Runtime(other.to_string()),
            })?;
            if let Some(path) = dump {
                std::fs::write(path, harness::records_jsonl(&result.records))
                    .map_err(|e| CliError::Runtime(e.to_string()))?;
            }
            let failures: usize = result.rows.iter().map(|r| r.failures).sum();
            write_output(&common.out, &harness::sweep_csv(&result))?;
            if failures > 0 {
                eprintln!("warning: {failures} per-sample failures excluded from the means");
            }
            Ok(())
        }
        Command::CompareGrouping {
            common,
            alphas,
            samples,
            workers,
        } => {
            let (cfg, _) = load_config(&common)?;
            let alphas: Result<Vec<f64>, _> =
                alphas.split(',').map(|v| v.trim().parse::<f64>()).collect();
            let alphas =
                alphas.map_err(|_| CliError::Usage("--alphas: values must be numbers".into()))?;
            let result = harness::compare_grouping(&cfg, &alphas, samples, workers)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            write_output(&common.out, &harness::compare_csv(&result))
        }
        Command::DumpGroups { common } => {
            let (cfg, grouping_algo) = load_config(&common)?;
            let (cands, gs) = build_sample(&cfg, grouping_algo)?;
            let doc = dump_groups_json(&cfg, &cands, &gs);
            write_output(
                &common.out,
                &(serde_json::to_string_pretty(&doc)
                    .map_err(|e| CliError::Runtime(e.to_string()))?
                    + "\n"),
            )
        }
    }
}

/// Structured dump of every subcarrier block's group set: group members,
/// transmitter tallies, and effective gains.
fn dump_groups_json(
    cfg: &ScenarioConfig,
    cands: &[grouping::CandidateSet],
    gs: &grouping::GroupSet,
) -> serde_json::Value {
    use serde_json::json;
    let blocks: Vec<serde_json::Value> = gs
        .per_subcarrier
        .iter()
        .enumerate()
        .map(|(n, groups)| {
            let cs = &cands[n];
            let groups: Vec<serde_json::Value> = groups
                .iter()
                .map(|g| {
                    let members: Vec<serde_json::Value> = g
                        .members
                        .iter()
                        .map(|&i| {
                            let smc = &cs.smcs[i as usize];
                            json!({
                                "index": i,
                                "kind": smc.kind,
                                "ue": smc.ue,
                                "rn": smc.rn,
                                "activation": smc.activation,
                                "t1_row": smc.t1_row,
                                "t2_row": smc.t2_row,
                            })
                        })
                        .collect();
                    json!({
                        "members": members,
                        "tallies": grouping::group_tallies(cs, &g.members),
                        "direct_t1": g.direct_t1,
                        "direct_t2": g.direct_t2,
                        "relays": g.relays,
                    })
                })
                .collect();
            json!({
                "subcarrier": n,
                "candidates": cs.len(),
                "groups": groups,
            })
        })
        .collect();
    json!({
        "config": cfg,
        "stats": gs.stats,
        "subcarriers": blocks,
    })
}
