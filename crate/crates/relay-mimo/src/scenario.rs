//! Network geometry, path losses, fading channel realizations, and the
//! configuration constants they depend on.
//!
//! All internal units are linear: Watts, Watts/Hz, Hertz, meters. dBm/dB
//! values are accepted in config files and CLI overrides through `_dbm` /
//! `_db` key variants and converted at load time.

use crate::linalg;
use crate::{C64, CMat};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by configuration parsing and scenario generation.
#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {reason}")]
    BadValue { key: String, reason: String },
    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("config I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Converts a dBm value to Watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    1e-3 * 10f64.powf(dbm / 10.0)
}

/// Converts Watts to dBm.
pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * (w / 1e-3).log10()
}

/// Converts a dB ratio to linear scale.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Link classes with distinct path-loss models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkKind {
    /// BS-to-UE, non-line-of-sight.
    BsUe,
    /// RN-to-UE, non-line-of-sight.
    RnUe,
    /// BS-to-RN backhaul, line-of-sight (RNs sit on elevated sites).
    BsRn,
}

/// All system constants for one scenario.
///
/// Defaults follow the reference parameter set: 180 kHz subcarrier blocks,
/// (4,4,2) antennas at BS/RN/UE, a 0.75 km cell with relays at half the
/// radius, 20/10 dBm BS/RN power budgets, -174 dBm/Hz noise and a 0 dB SNR
/// gap. The circuit-power terms scale with the antenna counts
/// (`32.306*N_B`, `21.874*N_R` Watts fixed, `3.24*N_B`, `4.04*N_R` transmit
/// multipliers).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Number of relay nodes.
    pub m: usize,
    /// Number of UEs.
    pub k: usize,
    /// Number of subcarrier blocks.
    pub n: usize,
    /// BS antennas.
    pub n_b: usize,
    /// RN antennas.
    pub n_r: usize,
    /// UE antennas.
    pub n_u: usize,
    /// Subcarrier-block bandwidth in Hz.
    pub w: f64,
    /// Cell radius in meters.
    pub cell_radius: f64,
    /// BS-to-RN distance as a fraction of the cell radius, in (0,1).
    pub d_r: f64,
    /// BS maximum instantaneous transmit power per phase, Watts.
    pub p_max_b: f64,
    /// Per-RN maximum instantaneous transmit power, Watts.
    pub p_max_r: f64,
    /// BS fixed circuit power, Watts.
    pub p_c_b: f64,
    /// Per-RN fixed circuit power, Watts.
    pub p_c_r: f64,
    /// BS transmit-power dissipation multiplier (> 1).
    pub xi_b: f64,
    /// RN transmit-power dissipation multiplier (> 1).
    pub xi_r: f64,
    /// Noise power spectral density, Watts/Hz.
    pub n0: f64,
    /// SNR gap of the transceivers, linear (>= 1).
    pub delta_gamma: f64,
    /// Semi-orthogonality parameter in [0,1].
    pub alpha: f64,
    /// Solver convergence threshold on the objective.
    pub epsilon: f64,
    /// Root RNG seed; per-sample streams are derived from it.
    pub rng_seed: u64,
    /// NLOS path-loss intercept in dB (loss = a + b*log10(d_km)).
    pub pl_nlos_a: f64,
    /// NLOS path-loss slope in dB/decade.
    pub pl_nlos_b: f64,
    /// LOS path-loss intercept in dB.
    pub pl_los_a: f64,
    /// LOS path-loss slope in dB/decade.
    pub pl_los_b: f64,
    /// Minimum UE distance from the BS in meters (near-field guard).
    pub min_ue_distance: f64,
    /// ESGA safety budget: maximum recorded groups per subcarrier block.
    pub esga_budget: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let n_b = 4usize;
        let n_r = 4usize;
        ScenarioConfig {
            m: 2,
            k: 2,
            n: 6,
            n_b,
            n_r,
            n_u: 2,
            w: 180e3,
            cell_radius: 750.0,
            d_r: 0.5,
            p_max_b: dbm_to_watts(20.0),
            p_max_r: dbm_to_watts(10.0),
            p_c_b: 32.306 * n_b as f64,
            p_c_r: 21.874 * n_r as f64,
            xi_b: 3.24 * n_b as f64,
            xi_r: 4.04 * n_r as f64,
            n0: dbm_to_watts(-174.0),
            delta_gamma: 1.0,
            alpha: 0.1,
            epsilon: 1e-6,
            rng_seed: 1,
            pl_nlos_a: 128.1,
            pl_nlos_b: 37.6,
            pl_los_a: 100.7,
            pl_los_b: 23.5,
            min_ue_distance: 35.0,
            esga_budget: 1_000_000,
        }
    }
}

impl ScenarioConfig {
    /// Default configuration with the circuit-power terms re-derived for the
    /// given antenna counts.
    pub fn with_antennas(n_b: usize, n_r: usize, n_u: usize) -> Self {
        ScenarioConfig {
            n_b,
            n_r,
            n_u,
            p_c_b: 32.306 * n_b as f64,
            p_c_r: 21.874 * n_r as f64,
            xi_b: 3.24 * n_b as f64,
            xi_r: 4.04 * n_r as f64,
            ..ScenarioConfig::default()
        }
    }

    /// Noise power times SNR gap on one subcarrier block, `dg * N0 * W`.
    pub fn noise_scale(&self) -> f64 {
        self.delta_gamma * self.n0 * self.w
    }

    /// Checks every invariant; returns a message naming the first violation.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let fail = |msg: &str| Err(ScenarioError::InvalidConfig(msg.to_string()));
        if self.k < 1 || self.n < 1 || self.n_b < 1 || self.n_r < 1 || self.n_u < 1 {
            return fail("K, N and all antenna counts must be >= 1");
        }
        if !(self.w > 0.0 && self.n0 > 0.0) {
            return fail("W and N0 must be positive");
        }
        if !(self.p_max_b > 0.0 && self.p_max_r > 0.0 && self.p_c_b > 0.0 && self.p_c_r > 0.0) {
            return fail("all power constants must be positive");
        }
        if !(self.xi_b > 1.0 && self.xi_r > 1.0) {
            return fail("xi_b and xi_r must exceed 1");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail("alpha must lie in [0,1]");
        }
        if !(self.d_r > 0.0 && self.d_r < 1.0) {
            return fail("d_r must lie in (0,1)");
        }
        if !(self.cell_radius > 0.0) {
            return fail("cell_radius must be positive");
        }
        if !(self.delta_gamma >= 1.0) {
            return fail("delta_gamma must be >= 1 (linear)");
        }
        if !(self.epsilon > 0.0) {
            return fail("epsilon must be positive");
        }
        if !(self.min_ue_distance >= 0.0 && self.min_ue_distance < self.cell_radius) {
            return fail("min_ue_distance must lie in [0, cell_radius)");
        }
        Ok(())
    }

    /// Path loss in dB for a link of the given kind at `distance` meters.
    ///
    /// fails on non-positive distances. Monotonically increasing in distance
    /// for both model classes.
    pub fn path_loss_db(&self, distance: f64, kind: LinkKind) -> Result<f64, ScenarioError> {
        if !(distance > 0.0) {
            return Err(ScenarioError::NonPositiveDistance(distance));
        }
        let d_km = distance / 1000.0;
        Ok(match kind {
            LinkKind::BsUe | LinkKind::RnUe => self.pl_nlos_a + self.pl_nlos_b * d_km.log10(),
            LinkKind::BsRn => self.pl_los_a + self.pl_los_b * d_km.log10(),
        })
    }

    /// Linear channel power gain (inverse path loss) for a link.
    pub fn path_gain(&self, distance: f64, kind: LinkKind) -> Result<f64, ScenarioError> {
        Ok(db_to_linear(-self.path_loss_db(distance, kind)?))
    }

    /// Applies a single `key = value` override. Accepts the plain field names
    /// plus `p_max_b_dbm`, `p_max_r_dbm`, `n0_dbm_hz` and `delta_gamma_db`
    /// unit variants. Unknown keys are rejected.
    pub fn set_field(&mut self, key: &str, raw: &str) -> Result<(), ScenarioError> {
        let bad = |reason: &str| ScenarioError::BadValue {
            key: key.to_string(),
            reason: reason.to_string(),
        };
        let fval = || -> Result<f64, ScenarioError> {
            raw.trim().parse::<f64>().map_err(|_| bad("not a number"))
        };
        let uval = || -> Result<usize, ScenarioError> {
            raw.trim()
                .parse::<usize>()
                .map_err(|_| bad("not a non-negative integer"))
        };
        match key {
            "m" => self.m = uval()?,
            "k" => self.k = uval()?,
            "n" => self.n = uval()?,
            "n_b" => self.n_b = uval()?,
            "n_r" => self.n_r = uval()?,
            "n_u" => self.n_u = uval()?,
            "w" => self.w = fval()?,
            "cell_radius" => self.cell_radius = fval()?,
            "d_r" => self.d_r = fval()?,
            "p_max_b" => self.p_max_b = fval()?,
            "p_max_r" => self.p_max_r = fval()?,
            "p_max_b_dbm" => self.p_max_b = dbm_to_watts(fval()?),
            "p_max_r_dbm" => self.p_max_r = dbm_to_watts(fval()?),
            "p_c_b" => self.p_c_b = fval()?,
            "p_c_r" => self.p_c_r = fval()?,
            "xi_b" => self.xi_b = fval()?,
            "xi_r" => self.xi_r = fval()?,
            "n0" => self.n0 = fval()?,
            "n0_dbm_hz" => self.n0 = dbm_to_watts(fval()?),
            "delta_gamma" => self.delta_gamma = fval()?,
            "delta_gamma_db" => self.delta_gamma = db_to_linear(fval()?),
            "alpha" => self.alpha = fval()?,
            "epsilon" => self.epsilon = fval()?,
            "rng_seed" => {
                self.rng_seed = raw
                    .trim()
                    .parse::<u64>()
                    .map_err(|_| bad("not a non-negative integer"))?
            }
            "pl_nlos_a" => self.pl_nlos_a = fval()?,
            "pl_nlos_b" => self.pl_nlos_b = fval()?,
            "pl_los_a" => self.pl_los_a = fval()?,
            "pl_los_b" => self.pl_los_b = fval()?,
            "min_ue_distance" => self.min_ue_distance = fval()?,
            "esga_budget" => self.esga_budget = uval()?,
            _ => return Err(ScenarioError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Parses a flat `key = value` config document. Lines starting with `#`
    /// and blank lines are ignored.
    pub fn from_str_document(text: &str) -> Result<Self, ScenarioError> {
        let mut cfg = ScenarioConfig::default();
        let mut antennas_changed = false;
        let mut circuit_overridden = [false; 4];
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ScenarioError::InvalidConfig(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim();
            cfg.set_field(key, value)?;
            match key {
                "n_b" | "n_r" => antennas_changed = true,
                "p_c_b" => circuit_overridden[0] = true,
                "p_c_r" => circuit_overridden[1] = true,
                "xi_b" => circuit_overridden[2] = true,
                "xi_r" => circuit_overridden[3] = true,
                _ => {}
            }
        }
        // The circuit model scales with the antenna counts; re-derive any term
        // the document did not pin explicitly.
        if antennas_changed {
            if !circuit_overridden[0] {
                cfg.p_c_b = 32.306 * cfg.n_b as f64;
            }
            if !circuit_overridden[1] {
                cfg.p_c_r = 21.874 * cfg.n_r as f64;
            }
            if !circuit_overridden[2] {
                cfg.xi_b = 3.24 * cfg.n_b as f64;
            }
            if !circuit_overridden[3] {
                cfg.xi_r = 4.04 * cfg.n_r as f64;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config document from a file path.
    pub fn from_file(path: &std::path::Path) -> Result<Self, ScenarioError> {
        Self::from_str_document(&std::fs::read_to_string(path)?)
    }
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a root seed and a path of indices.
///
/// Counter-based splitting: the derived seed depends only on the path, never
/// on draw order, so parallel Monte Carlo over samples is order-independent.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    let mut state = mix64(root ^ 0x6a09_e667_f3bc_c908);
    for &p in path {
        state = mix64(state ^ mix64(p));
    }
    state
}

/// Positions of every node in the cell; the BS sits at the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    /// BS position (always the origin).
    pub bs_position: [f64; 2],
    /// RN positions on the ring of radius `d_r * cell_radius`.
    pub rn_positions: Vec<[f64; 2]>,
    /// UE positions, area-uniform over the cell disc.
    pub ue_positions: Vec<[f64; 2]>,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl Topology {
    /// BS-to-UE distance.
    pub fn bs_ue_distance(&self, k: usize) -> f64 {
        dist(self.bs_position, self.ue_positions[k])
    }
    /// BS-to-RN distance.
    pub fn bs_rn_distance(&self, m: usize) -> f64 {
        dist(self.bs_position, self.rn_positions[m])
    }
    /// RN-to-UE distance.
    pub fn rn_ue_distance(&self, m: usize, k: usize) -> f64 {
        dist(self.rn_positions[m], self.ue_positions[k])
    }
}

/// Places the RNs evenly on their ring and samples UE positions uniformly
/// over the cell disc (radius `cell_radius * sqrt(u)`, uniform angle), with a
/// minimum-distance guard around the BS enforced by resampling.
pub fn generate_topology(config: &ScenarioConfig, seed: u64) -> Topology {
    let ring = config.d_r * config.cell_radius;
    let rn_positions: Vec<[f64; 2]> = (0..config.m)
        .map(|i| {
            let angle = 2.0 * std::f64::consts::PI * i as f64 / config.m as f64;
            [ring * angle.cos(), ring * angle.sin()]
        })
        .collect();
    let mut ue_positions = Vec::with_capacity(config.k);
    for k in 0..config.k {
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, &[0x0e, k as u64]));
        loop {
            let u: f64 = rng.gen();
            let r = config.cell_radius * u.sqrt();
            let theta: f64 = rng.gen::<f64>() * 2.0 * std::f64::consts::PI;
            if r >= config.min_ue_distance {
                ue_positions.push([r * theta.cos(), r * theta.sin()]);
                break;
            }
        }
    }
    Topology {
        bs_position: [0.0, 0.0],
        rn_positions,
        ue_positions,
    }
}

/// The three families of channel matrices for every subcarrier block.
///
/// Every entry combines i.i.d. circular Gaussian fading of unit variance with
/// the deterministic path-loss amplitude of its transceiver pair. Matrices
/// are guaranteed full row rank (rank-deficient draws are resampled).
#[derive(Debug, Clone)]
pub struct ChannelSet {
    /// BS-to-UE channels, `N_U x N_B`, indexed by (n, k).
    h_bu: Vec<CMat>,
    /// BS-to-RN channels, `N_R x N_B`, indexed by (n, m).
    h_br: Vec<CMat>,
    /// RN-to-UE channels, `N_U x N_R`, indexed by (n, m, k).
    h_ru: Vec<CMat>,
    n: usize,
    m: usize,
    k: usize,
}

impl ChannelSet {
    /// BS-to-UE channel on subcarrier block `n` toward UE `k`.
    pub fn h_bu(&self, n: usize, k: usize) -> &CMat {
        &self.h_bu[n * self.k + k]
    }
    /// BS-to-RN channel on subcarrier block `n` toward RN `m`.
    pub fn h_br(&self, n: usize, m: usize) -> &CMat {
        &self.h_br[n * self.m + m]
    }
    /// RN-to-UE channel on subcarrier block `n` from RN `m` toward UE `k`.
    pub fn h_ru(&self, n: usize, m: usize, k: usize) -> &CMat {
        &self.h_ru[(n * self.m + m) * self.k + k]
    }
    /// (number of BU, BR, RU matrices).
    pub fn counts(&self) -> (usize, usize, usize) {
        (self.h_bu.len(), self.h_br.len(), self.h_ru.len())
    }
    /// (N, M, K) this set was generated for.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n, self.m, self.k)
    }
}

const RANK_REL_TOL: f64 = 1e-9;

fn sample_matrix(
    rows: usize,
    cols: usize,
    amplitude: f64,
    seed: u64,
) -> CMat {
    // Resample the whole matrix on rank deficiency so the fading distribution
    // is preserved (conditioning on full rank, an almost-sure event).
    for attempt in 0u64.. {
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, &[attempt]));
        let mat = CMat::from_fn(rows, cols, |_, _| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2 * amplitude
        });
        if linalg::has_full_row_rank(&mat, RANK_REL_TOL) {
            return mat;
        }
    }
    unreachable!()
}

/// Draws one fading realization for every link and subcarrier block.
///
/// Entries are `sqrt(path gain) * CN(0,1)`, independent across antenna pairs
/// and subcarrier blocks; deterministic for a fixed `(config, topology, seed)`.
pub fn sample_channels(config: &ScenarioConfig, topology: &Topology, seed: u64) -> ChannelSet {
    let amp = |d: f64, kind: LinkKind| {
        config
            .path_gain(d, kind)
            .expect("positive distance by construction")
            .sqrt()
    };
    let mut h_bu = Vec::with_capacity(config.n * config.k);
    let mut h_br = Vec::with_capacity(config.n * config.m);
    let mut h_ru = Vec::with_capacity(config.n * config.m * config.k);
    for n in 0..config.n {
        for k in 0..config.k {
            let a = amp(topology.bs_ue_distance(k), LinkKind::BsUe);
            h_bu.push(sample_matrix(
                config.n_u,
                config.n_b,
                a,
                derive_seed(seed, &[1, n as u64, k as u64]),
            ));
        }
        for m in 0..config.m {
            let a = amp(topology.bs_rn_distance(m), LinkKind::BsRn);
            h_br.push(sample_matrix(
                config.n_r,
                config.n_b,
                a,
                derive_seed(seed, &[2, n as u64, m as u64]),
            ));
        }
        for m in 0..config.m {
            for k in 0..config.k {
                let a = amp(topology.rn_ue_distance(m, k), LinkKind::RnUe);
                h_ru.push(sample_matrix(
                    config.n_u,
                    config.n_r,
                    a,
                    derive_seed(seed, &[3, n as u64, m as u64, k as u64]),
                ));
            }
        }
    }
    ChannelSet {
        h_bu,
        h_br,
        h_ru,
        n: config.n,
        m: config.m,
        k: config.k,
    }
}
