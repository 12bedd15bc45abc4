//! Monte Carlo engine: parameter sweeps with paired samples, grouping
//! comparisons, statistical aggregation and structured output.
//!
//! Every channel sample draws its own topology and fading realization from a
//! stream derived from the root seed and the sample index alone, so results
//! are independent of the worker count and identical channels are reused
//! across grid points that share the channel-relevant parameters (a paired
//! design: all algorithms and all power-axis grid points of one sample see
//! the same channels).

use crate::grouping::{self, GroupingAlgo, GroupingError};
use crate::scenario::{derive_seed, generate_topology, sample_channels, ScenarioConfig};
use crate::solver::{self, Objective, SolverOptions};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("sweep axis `{0}` is not a known config field")]
    UnknownAxis(String),
    #[error("sweep needs at least one sample")]
    NoSamples,
    #[error("sweep needs at least one algorithm")]
    NoAlgorithms,
    #[error(transparent)]
    Scenario(#[from] crate::scenario::ScenarioError),
    #[error("failed to build worker pool: {0}")]
    Pool(String),
}

/// Solve algorithms the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Algorithm {
    Sem,
    Esem,
    RgEpa,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Sem => "sem",
            Algorithm::Esem => "esem",
            Algorithm::RgEpa => "rgepa",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "sem" => Ok(Algorithm::Sem),
            "esem" => Ok(Algorithm::Esem),
            "rgepa" | "rg-epa" => Ok(Algorithm::RgEpa),
            other => Err(format!("unknown algorithm `{other}`")),
        }
    }
}

/// A parameter sweep: named axes over config fields, crossed into a grid.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    /// (config key, values); the grid is the cartesian product in axis
    /// order with the last axis varying fastest.
    pub axes: Vec<(String, Vec<f64>)>,
    pub samples: usize,
    pub algorithms: Vec<Algorithm>,
    pub grouping: GroupingAlgo,
}

/// Applies one override, re-deriving the antenna-scaled circuit constants
/// when an antenna count changes (they follow the antenna counts unless
/// pinned separately).
pub fn apply_override(
    cfg: &mut ScenarioConfig,
    key: &str,
    value: f64,
) -> Result<(), crate::scenario::ScenarioError> {
    cfg.set_field(key, &value.to_string())?;
    match key {
        "n_b" => {
            cfg.p_c_b = 32.306 * cfg.n_b as f64;
            cfg.xi_b = 3.24 * cfg.n_b as f64;
        }
        "n_r" => {
            cfg.p_c_r = 21.874 * cfg.n_r as f64;
            cfg.xi_r = 4.04 * cfg.n_r as f64;
        }
        _ => {}
    }
    Ok(())
}

/// One per-sample, per-grid-point, per-algorithm observation.
#[derive(Debug, Clone, Serialize)]
pub struct SampleRecord {
    pub grid_index: usize,
    pub grid: Vec<(String, f64)>,
    pub algorithm: &'static str,
    pub sample: usize,
    pub se: f64,
    pub ese: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Post-pruning group count over all subcarrier blocks.
    pub groups: usize,
    pub error: Option<String>,
}

/// Aggregated statistics of one (grid point, algorithm) cell.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub grid: Vec<(String, f64)>,
    pub algorithm: &'static str,
    pub mean_se: f64,
    pub se_se: f64,
    pub mean_ese: f64,
    pub se_ese: f64,
    /// Mean post-pruning group count (of the grouping algorithm in use).
    pub mean_groups: f64,
    pub mean_iterations: f64,
    pub converged_fraction: f64,
    pub failures: usize,
    pub samples: usize,
}

/// Output of `run_sweep`: aggregate rows plus the raw per-sample records.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub records: Vec<SampleRecord>,
    pub grouping: GroupingAlgo,
}

/// Normalized optimality gap `(beta / beta_star) - 1` of a value against the
/// reference optimum.
pub fn normalized_gap(beta: f64, beta_star: f64) -> f64 {
    if beta_star == 0.0 {
        0.0
    } else {
        beta / beta_star - 1.0
    }
}

fn expand_grid(axes: &[(String, Vec<f64>)]) -> Vec<Vec<(String, f64)>> {
    let mut grid: Vec<Vec<(String, f64)>> = vec![Vec::new()];
    for (key, values) in axes {
        let mut next = Vec::with_capacity(grid.len() * values.len());
        for point in &grid {
            for &v in values {
                let mut p = point.clone();
                p.push((key.clone(), v));
                next.push(p);
            }
        }
        grid = next;
    }
    grid
}

/// Subset of the config that determines topology, channels and grouping
/// (everything except the power budgets and solver knobs).
fn channel_key(cfg: &ScenarioConfig) -> String {
    format!(
        "{}|{}|{}|{}|{}|{}|{:x}|{:x}|{:x}|{:x}|{:x}|{:x}|{:x}|{:x}|{:x}|{:x}|{:x}|{}",
        cfg.m,
        cfg.k,
        cfg.n,
        cfg.n_b,
        cfg.n_r,
        cfg.n_u,
        cfg.w.to_bits(),
        cfg.cell_radius.to_bits(),
        cfg.d_r.to_bits(),
        cfg.n0.to_bits(),
        cfg.delta_gamma.to_bits(),
        cfg.alpha.to_bits(),
        cfg.pl_nlos_a.to_bits(),
        cfg.pl_nlos_b.to_bits(),
        cfg.pl_los_a.to_bits(),
        cfg.pl_los_b.to_bits(),
        cfg.min_ue_distance.to_bits(),
        cfg.esga_budget,
    )
}

const TOPOLOGY_STREAM: u64 = 0x01;
const CHANNEL_STREAM: u64 = 0x02;
const RGEPA_STREAM: u64 = 0x03;

fn build_groups_for_sample(
    cfg: &ScenarioConfig,
    root_seed: u64,
    sample: usize,
    grouping: GroupingAlgo,
) -> Result<grouping::GroupSet, GroupingError> {
    let topo = generate_topology(cfg, derive_seed(root_seed, &[TOPOLOGY_STREAM, sample as u64]));
    let channels = sample_channels(
        cfg,
        &topo,
        derive_seed(root_seed, &[CHANNEL_STREAM, sample as u64]),
    );
    let (_, gs) = grouping::build_group_set(&channels, cfg, grouping)?;
    Ok(gs)
}

fn run_pool<T: Send>(
    workers: usize,
    body: impl Fn() -> T + Send,
) -> Result<T, HarnessError> {
    if workers == 0 {
        Ok(body())
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| HarnessError::Pool(e.to_string()))?;
        Ok(pool.install(body))
    }
}

/// Runs a parameter sweep: for every sample, channels are drawn once per
/// distinct channel-relevant configuration and every requested algorithm is
/// solved on those same channels (paired comparison). Per-sample grouping
/// failures (the ESGA budget) are recorded and excluded from the means, not
/// fatal. Deterministic for a fixed root seed regardless of worker count.
pub fn run_sweep(
    spec: &SweepSpec,
    base: &ScenarioConfig,
    workers: usize,
) -> Result<SweepResult, HarnessError> {
    if spec.samples == 0 {
        return Err(HarnessError::NoSamples);
    }
    if spec.algorithms.is_empty() {
        return Err(HarnessError::NoAlgorithms);
    }
    let grid = expand_grid(&spec.axes);
    // Validate axis names once up front.
    for (key, _) in &spec.axes {
        let mut probe = base.clone();
        if probe.set_field(key, "1").is_err() {
            return Err(HarnessError::UnknownAxis(key.clone()));
        }
    }
    let grid_cfgs: Vec<(Vec<(String, f64)>, ScenarioConfig)> = grid
        .iter()
        .map(|point| {
            let mut cfg = base.clone();
            for (key, value) in point {
                apply_override(&mut cfg, key, *value)?;
            }
            cfg.validate()?;
            Ok((point.clone(), cfg))
        })
        .collect::<Result<_, crate::scenario::ScenarioError>>()?;

    let root_seed = base.rng_seed;
    let grouping_algo = spec.grouping;
    let algorithms = spec.algorithms.clone();
    let grid_cfgs = Arc::new(grid_cfgs);

    let per_sample: Vec<Vec<SampleRecord>> = run_pool(workers, || {
        (0..spec.samples)
            .into_par_iter()
            .map(|sample| {
                let mut cache: HashMap<String, Arc<Result<grouping::GroupSet, String>>> =
                    HashMap::new();
                let mut records = Vec::new();
                for (grid_index, (point, cfg)) in grid_cfgs.iter().enumerate() {
                    let key = channel_key(cfg);
                    let groups = cache
                        .entry(key)
                        .or_insert_with(|| {
                            Arc::new(
                                build_groups_for_sample(cfg, root_seed, sample, grouping_algo)
                                    .map_err(|e| e.to_string()),
                            )
                        })
                        .clone();
                    for &alg in &algorithms {
                        let record = match groups.as_ref() {
                            Err(msg) => SampleRecord {
                                grid_index,
                                grid: point.clone(),
                                algorithm: alg.name(),
                                sample,
                                se: f64::NAN,
                                ese: f64::NAN,
                                iterations: 0,
                                converged: false,
                                groups: 0,
                                error: Some(msg.clone()),
                            },
                            Ok(gs) => {
                                let opts = SolverOptions::default();
                                let solved = match alg {
                                    Algorithm::Sem => {
                                        solver::solve(cfg, gs, Objective::Sem, &opts)
                                    }
                                    Algorithm::Esem => {
                                        solver::solve(cfg, gs, Objective::Esem, &opts)
                                    }
                                    Algorithm::RgEpa => Ok(solver::rg_epa(
                                        cfg,
                                        gs,
                                        derive_seed(root_seed, &[RGEPA_STREAM, sample as u64]),
                                    )),
                                };
                                match solved {
                                    Ok(res) => SampleRecord {
                                        grid_index,
                                        grid: point.clone(),
                                        algorithm: alg.name(),
                                        sample,
                                        se: res.se,
                                        ese: res.ese,
                                        iterations: res.iterations,
                                        converged: res.converged,
                                        groups: gs.stats.pruned_groups,
                                        error: None,
                                    },
                                    Err(e) => SampleRecord {
                                        grid_index,
                                        grid: point.clone(),
                                        algorithm: alg.name(),
                                        sample,
                                        se: f64::NAN,
                                        ese: f64::NAN,
                                        iterations: 0,
                                        converged: false,
                                        groups: 0,
                                        error: Some(e.to_string()),
                                    },
                                }
                            }
                        };
                        records.push(record);
                    }
                }
                records
            })
            .collect()
    })?;

    // Deterministic sequential reduce over sample index.
    let mut records = Vec::with_capacity(spec.samples * grid.len() * algorithms.len());
    for sample_records in per_sample {
        records.extend(sample_records);
    }
    records.sort_by_key(|r| (r.grid_index, algo_rank(r.algorithm), r.sample));

    let mut rows = Vec::new();
    for (grid_index, (point, _)) in grid_cfgs.iter().enumerate() {
        for &alg in &algorithms {
            let cell: Vec<&SampleRecord> = records
                .iter()
                .filter(|r| r.grid_index == grid_index && r.algorithm == alg.name())
                .collect();
            rows.push(aggregate_cell(point.clone(), alg.name(), &cell));
        }
    }
    Ok(SweepResult {
        rows,
        records,
        grouping: spec.grouping,
    })
}

fn algo_rank(name: &str) -> usize {
    match name {
        "sem" => 0,
        "esem" => 1,
        _ => 2,
    }
}

fn aggregate_cell(
    grid: Vec<(String, f64)>,
    algorithm: &'static str,
    cell: &[&SampleRecord],
) -> SweepRow {
    let ok: Vec<&&SampleRecord> = cell.iter().filter(|r| r.error.is_none()).collect();
    let failures = cell.len() - ok.len();
    let count = ok.len();
    let mean = |f: &dyn Fn(&SampleRecord) -> f64| -> f64 {
        if count == 0 {
            f64::NAN
        } else {
            ok.iter().map(|r| f(r)).sum::<f64>() / count as f64
        }
    };
    let std_err = |f: &dyn Fn(&SampleRecord) -> f64, mu: f64| -> f64 {
        if count < 2 {
            0.0
        } else {
            let var =
                ok.iter().map(|r| (f(r) - mu).powi(2)).sum::<f64>() / (count as f64 - 1.0);
            (var / count as f64).sqrt()
        }
    };
    let mean_se = mean(&|r| r.se);
    let mean_ese = mean(&|r| r.ese);
    SweepRow {
        grid,
        algorithm,
        mean_se,
        se_se: std_err(&|r| r.se, mean_se),
        mean_ese,
        se_ese: std_err(&|r| r.ese, mean_ese),
        mean_groups: mean(&|r| r.groups as f64),
        mean_iterations: mean(&|r| r.iterations as f64),
        converged_fraction: if count == 0 {
            0.0
        } else {
            ok.iter().filter(|r| r.converged).count() as f64 / count as f64
        },
        failures,
        samples: count,
    }
}

/// Grouping-comparison statistics at one alpha value.
#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub alpha: f64,
    /// Mean normalized optimality gap of OCGA against ESGA (paired SEM runs).
    pub mean_gap: f64,
    /// Total OCGA groups divided by total ESGA groups (post-pruning).
    pub count_ratio: f64,
    pub mean_groups_esga: f64,
    pub mean_groups_ocga: f64,
    pub failures: usize,
    pub samples: usize,
}

/// Per-sample observation of one grouping comparison.
#[derive(Debug, Clone, Serialize)]
pub struct CompareRecord {
    pub alpha: f64,
    pub sample: usize,
    pub se_esga: f64,
    pub se_ocga: f64,
    pub gap: f64,
    pub groups_esga: usize,
    pub groups_ocga: usize,
    pub error: Option<String>,
}

/// Output of `compare_grouping`.
#[derive(Debug, Clone)]
pub struct CompareResult {
    pub rows: Vec<CompareRow>,
    pub records: Vec<CompareRecord>,
}

/// Runs SEM with both grouping algorithms on identical channels for every
/// alpha and reports the normalized optimality gap of OCGA and the group
/// count ratio.
pub fn compare_grouping(
    base: &ScenarioConfig,
    alphas: &[f64],
    samples: usize,
    workers: usize,
) -> Result<CompareResult, HarnessError> {
    if samples == 0 {
        return Err(HarnessError::NoSamples);
    }
    let root_seed = base.rng_seed;
    let base = base.clone();
    let alphas = alphas.to_vec();

    let per_sample: Vec<Vec<CompareRecord>> = run_pool(workers, || {
        (0..samples)
            .into_par_iter()
            .map(|sample| {
                let mut records = Vec::new();
                for &alpha in &alphas {
                    let mut cfg = base.clone();
                    cfg.alpha = alpha;
                    let run = || -> Result<CompareRecord, String> {
                        let topo = generate_topology(
                            &cfg,
                            derive_seed(root_seed, &[TOPOLOGY_STREAM, sample as u64]),
                        );
                        let channels = sample_channels(
                            &cfg,
                            &topo,
                            derive_seed(root_seed, &[CHANNEL_STREAM, sample as u64]),
                        );
                        let cands =
                            grouping::enumerate_smcs(&channels, &cfg).map_err(|e| e.to_string())?;
                        let esga_set =
                            grouping::group_candidates(&cands, &cfg, GroupingAlgo::Esga)
                                .map_err(|e| e.to_string())?;
                        let ocga_set =
                            grouping::group_candidates(&cands, &cfg, GroupingAlgo::Ocga)
                                .map_err(|e| e.to_string())?;
                        let opts = SolverOptions::default();
                        let sem_esga = solver::solve(&cfg, &esga_set, Objective::Sem, &opts)
                            .map_err(|e| e.to_string())?;
                        let sem_ocga = solver::solve(&cfg, &ocga_set, Objective::Sem, &opts)
                            .map_err(|e| e.to_string())?;
                        Ok(CompareRecord {
                            alpha,
                            sample,
                            se_esga: sem_esga.se,
                            se_ocga: sem_ocga.se,
                            gap: normalized_gap(sem_ocga.se, sem_esga.se),
                            groups_esga: esga_set.stats.pruned_groups,
                            groups_ocga: ocga_set.stats.pruned_groups,
                            error: None,
                        })
                    };
                    records.push(run().unwrap_or_else(|msg| CompareRecord {
                        alpha,
                        sample,
                        se_esga: f64::NAN,
                        se_ocga: f64::NAN,
                        gap: f64::NAN,
                        groups_esga: 0,
                        groups_ocga: 0,
                        error: Some(msg),
                    }));
                }
                records
            })
            .collect()
    })?;

    let mut records: Vec<CompareRecord> = per_sample.into_iter().flatten().collect();
    records.sort_by(|a, b| {
        a.alpha
            .partial_cmp(&b.alpha)
            .unwrap()
            .then(a.sample.cmp(&b.sample))
    });

    let mut rows = Vec::new();
    for &alpha in &alphas {
        let cell: Vec<&CompareRecord> = records
            .iter()
            .filter(|r| r.alpha == alpha)
            .collect();
        let ok: Vec<&&CompareRecord> = cell.iter().filter(|r| r.error.is_none()).collect();
        let failures = cell.len() - ok.len();
        let count = ok.len();
        let mean_gap = if count == 0 {
            f64::NAN
        } else {
            ok.iter().map(|r| r.gap).sum::<f64>() / count as f64
        };
        let total_esga: usize = ok.iter().map(|r| r.groups_esga).sum();
        let total_ocga: usize = ok.iter().map(|r| r.groups_ocga).sum();
        rows.push(CompareRow {
            alpha,
            mean_gap,
            count_ratio: if total_esga == 0 {
                f64::NAN
            } else {
                total_ocga as f64 / total_esga as f64
            },
            mean_groups_esga: if count == 0 {
                f64::NAN
            } else {
                total_esga as f64 / count as f64
            },
            mean_groups_ocga: if count == 0 {
                f64::NAN
            } else {
                total_ocga as f64 / count as f64
            },
            failures,
            samples: count,
        });
    }
    Ok(CompareResult { rows, records })
}

fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

/// Renders a sweep as CSV: one column per axis, then the algorithm and the
/// aggregate statistics. Byte-deterministic for a fixed input.
pub fn sweep_csv(result: &SweepResult) -> String {
    let mut out = String::new();
    let axis_names: Vec<&str> = result
        .rows
        .first()
        .map(|r| r.grid.iter().map(|(k, _)| k.as_str()).collect())
        .unwrap_or_default();
    for name in &axis_names {
        let _ = write!(out, "{name},");
    }
    out.push_str(
        "algorithm,mean_SE,se_SE,mean_ESE,se_ESE,mean_groups_ESGA,mean_groups_OCGA,gap,failures\n",
    );
    let (esga, ocga) = match result.grouping {
        GroupingAlgo::Esga => (true, false),
        GroupingAlgo::Ocga => (false, true),
    };
    for row in &result.rows {
        for (_, v) in &row.grid {
            let _ = write!(out, "{},", fmt_float(*v));
        }
        let ge = if esga { fmt_float(row.mean_groups) } else { String::new() };
        let go = if ocga { fmt_float(row.mean_groups) } else { String::new() };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            row.algorithm,
            fmt_float(row.mean_se),
            fmt_float(row.se_se),
            fmt_float(row.mean_ese),
            fmt_float(row.se_ese),
            ge,
            go,
            "",
            row.failures
        );
    }
    out
}

/// Renders a grouping comparison as CSV with the same column layout as a
/// sweep (the alpha axis in the first column).
pub fn compare_csv(result: &CompareResult) -> String {
    let mut out = String::new();
    out.push_str(
        "alpha,algorithm,mean_SE,se_SE,mean_ESE,se_ESE,mean_groups_ESGA,mean_groups_OCGA,gap,failures\n",
    );
    for row in &result.rows {
        let _ = writeln!(
            out,
            "{},sem,,,,,{},{},{},{}",
            fmt_float(row.alpha),
            fmt_float(row.mean_groups_esga),
            fmt_float(row.mean_groups_ocga),
            fmt_float(row.mean_gap),
            row.failures
        );
    }
    out
}

/// Per-sample records as JSON lines.
pub fn records_jsonl(records: &[SampleRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("serializable record"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::default();
        cfg.n = 2;
        cfg.k = 2;
        cfg.m = 1;
        cfg.alpha = 0.25;
        cfg.rng_seed = 11;
        cfg
    }

    fn small_spec(algorithms: Vec<Algorithm>, samples: usize) -> SweepSpec {
        SweepSpec {
            axes: vec![("p_max_b_dbm".into(), vec![10.0, 20.0])],
            samples,
            algorithms,
            grouping: GroupingAlgo::Ocga,
        }
    }

    #[test]
    fn degenerate_sweep_has_zero_standard_error() {
        let cfg = small_cfg();
        let spec = SweepSpec {
            axes: vec![("p_max_b_dbm".into(), vec![20.0])],
            samples: 1,
            algorithms: vec![Algorithm::Sem],
            grouping: GroupingAlgo::Ocga,
        };
        let result = run_sweep(&spec, &cfg, 1).unwrap();
        assert_eq!(result.rows.len(), 1);
        assert_eq!(result.rows[0].se_se, 0.0);
        assert_eq!(result.rows[0].samples, 1);
        assert!(result.rows[0].mean_se.is_finite());
    }

    #[test]
    fn paired_sem_dominates_rg_epa_in_the_mean() {
        let cfg = small_cfg();
        let spec = small_spec(vec![Algorithm::Sem, Algorithm::RgEpa], 4);
        let result = run_sweep(&spec, &cfg, 0).unwrap();
        for point in 0..2 {
            let sem = &result.rows[point * 2];
            let rg = &result.rows[point * 2 + 1];
            assert_eq!(sem.algorithm, "sem");
            assert_eq!(rg.algorithm, "rgepa");
            assert!(
                sem.mean_se >= rg.mean_se - 1e-9,
                "SEM {} vs RG-EPA {}",
                sem.mean_se,
                rg.mean_se
            );
        }
    }

    #[test]
    fn sweep_is_deterministic_across_worker_counts() {
        let cfg = small_cfg();
        let spec = small_spec(vec![Algorithm::Sem, Algorithm::Esem], 3);
        let a = run_sweep(&spec, &cfg, 1).unwrap();
        let b = run_sweep(&spec, &cfg, 4).unwrap();
        assert_eq!(sweep_csv(&a), sweep_csv(&b));
        assert_eq!(records_jsonl(&a.records), records_jsonl(&b.records));
    }

    #[test]
    fn aggregation_reproduces_means_from_records() {
        let cfg = small_cfg();
        let spec = small_spec(vec![Algorithm::Esem], 3);
        let result = run_sweep(&spec, &cfg, 1).unwrap();
        for (gi, row) in result.rows.iter().enumerate() {
            let cell: Vec<&SampleRecord> = result
                .records
                .iter()
                .filter(|r| r.grid_index == gi && r.error.is_none())
                .collect();
            let mean: f64 = cell.iter().map(|r| r.se).sum::<f64>() / cell.len() as f64;
            assert_eq!(mean.to_bits(), row.mean_se.to_bits(), "bit-exact mean");
        }
    }

    #[test]
    fn unknown_axis_is_rejected() {
        let cfg = small_cfg();
        let spec = SweepSpec {
            axes: vec![("bogus".into(), vec![1.0])],
            samples: 1,
            algorithms: vec![Algorithm::Sem],
            grouping: GroupingAlgo::Ocga,
        };
        assert!(matches!(
            run_sweep(&spec, &cfg, 1),
            Err(HarnessError::UnknownAxis(k)) if k == "bogus"
        ));
    }

    #[test]
    fn normalized_gap_of_reference_is_zero() {
        assert_eq!(normalized_gap(3.25, 3.25), 0.0);
        assert!(normalized_gap(3.0, 4.0) < 0.0);
    }

    #[test]
    fn compare_grouping_reports_subunit_count_ratio() {
        let mut cfg = small_cfg();
        cfg.alpha = 0.3;
        let result = compare_grouping(&cfg, &[0.3], 2, 2).unwrap();
        assert_eq!(result.rows.len(), 1);
        let row = &result.rows[0];
        assert_eq!(row.failures, 0);
        assert!(row.count_ratio <= 1.0, "OCGA never exceeds ESGA");
        // OCGA is a restriction of ESGA, so the gap cannot be positive.
        assert!(row.mean_gap <= 1e-12, "gap {}", row.mean_gap);
    }

    #[test]
    fn antenna_override_rescales_circuit_power() {
        let mut cfg = ScenarioConfig::default();
        apply_override(&mut cfg, "n_b", 8.0).unwrap();
        assert_eq!(cfg.n_b, 8);
        assert!((cfg.p_c_b - 32.306 * 8.0).abs() < 1e-9);
    }
}
