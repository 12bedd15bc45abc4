//! Simulator and optimization library for a multi-relay MIMO-OFDMA cellular
//! downlink with joint transmit/receive beamforming.
//!
//! The downlink of one cell is modeled with a base station (BS), `M`
//! decode-and-forward relay nodes (RNs) on a ring around it, and `K` user
//! equipments (UEs) scattered in the cell, all multi-antenna, sharing `N`
//! OFDMA subcarrier blocks. Each transmission period is split into two
//! phases: in phase 1 the BS transmits to UEs and RNs, in phase 2 the BS and
//! the RNs transmit to UEs. Receive beamforming decomposes every MIMO channel
//! into effective MISO rows, called spatial multiplexing components (SMCs);
//! zero-forcing transmit beamforming then serves a semi-orthogonal group of
//! SMCs per subcarrier block without mutual interference.
//!
//! The crate is organized along the processing pipeline:
//!
//! * [`scenario`] — geometry, path loss, Rayleigh fading channel generation,
//!   and the configuration constants (with a flat key-value config format).
//! * [`beamform`] — SVD receive beamforming, joint approximate
//!   diagonalization for the second phase, and normalized zero-forcing
//!   transmit matrices with their effective channel-to-noise ratios.
//! * [`grouping`] — SMC candidate enumeration, the semi-orthogonality
//!   feasibility check, the exhaustive (ESGA) and greedy orthogonal-component
//!   (OCGA) grouping algorithms, and dominated-group pruning.
//! * [`solver`] — spectral-efficiency (SEM) and energy-spectral-efficiency
//!   (ESEM) maximization by dual decomposition with closed-form water-filling
//!   primal recovery, plus the random-grouping equal-power baseline (RG-EPA).
//! * [`harness`] — Monte Carlo sweeps with paired samples, statistical
//!   aggregation and CSV/JSONL output.

pub mod beamform;
pub mod grouping;
pub mod harness;
mod linalg;
pub mod scenario;
pub mod solver;

/// Complex scalar used throughout the crate.
pub type C64 = num_complex::Complex<f64>;

/// Complex dynamic matrix.
pub type CMat = nalgebra::DMatrix<C64>;

/// Complex dynamic row vector (one SMC vector).
pub type CRow = nalgebra::RowDVector<C64>;
