//! SMC candidates, semi-orthogonality feasibility, and the two grouping
//! algorithms.
//!
//! A spatial multiplexing component (SMC) is one effective MISO row produced
//! by receive beamforming. Three kinds exist here: a phase-1 BS-to-UE row, a
//! phase-2 BS-to-UE row, and a relay pair — one BS-to-RN row for phase 1
//! matched with one RN-to-UE row for phase 2 through the same RN, scheduled
//! as a single indivisible entity.
//!
//! Phase-2 SMCs are enumerated once per activation combination (every
//! non-empty subset of {BS, RN_1..RN_M}), because each UE designs one receive
//! matrix per combination by jointly diagonalizing the Gram matrices of the
//! transmitters active in it. A group mixes phase-2 SMCs of a single
//! combination only.
//!
//! Feasibility of adding a candidate to a group (the SMC check) requires,
//! per transmitter and phase, pairwise semi-orthogonality of the stacked
//! rows — served rows plus the auxiliary rows a transmitter dedicates to
//! nulling its interference toward the other transmitters' served SMCs —
//! together with the antenna-count and multiplexing-gain limits and the
//! per-UE receive limits.

use crate::beamform::{
    self, BeamformError, TransmitterStack, ZfbfResult, JOINT_DIAG_MAX_SWEEPS, JOINT_DIAG_TOL,
};
use crate::scenario::{ChannelSet, ScenarioConfig};
use crate::{C64, CMat, CRow};
use serde::Serialize;
use std::collections::{HashMap, HashSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GroupingError {
    #[error("semi-orthogonality is undefined for a zero vector")]
    ZeroVector,
    #[error(
        "ESGA group budget exceeded on subcarrier block {subcarrier}: {recorded} groups recorded (budget {budget})"
    )]
    BudgetExceeded {
        subcarrier: usize,
        recorded: usize,
        budget: usize,
    },
    #[error(transparent)]
    Beamform(#[from] BeamformError),
}

/// Semi-orthogonality measure `|Re(v1^H v2)| / (||v1|| ||v2||)` in [0,1]:
/// 0 for orthogonal vectors, 1 for linearly dependent ones.
pub fn semi_orthogonality(v1: &CRow, v2: &CRow) -> Result<f64, GroupingError> {
    let n1 = v1.norm();
    let n2 = v2.norm();
    if n1 <= 0.0 || n2 <= 0.0 {
        return Err(GroupingError::ZeroVector);
    }
    let dot: C64 = v1.iter().zip(v2.iter()).map(|(a, b)| a.conj() * b).sum();
    Ok(dot.re.abs() / (n1 * n2))
}

/// Absolute slack added to the alpha comparison so exactly-orthogonal rows
/// (measure zero up to round-off) pass at alpha = 0.
const SO_EPS: f64 = 1e-9;

fn pair_ok(v1: &CRow, v2: &CRow, alpha: f64) -> bool {
    match semi_orthogonality(v1, v2) {
        Ok(m) => m <= alpha + SO_EPS,
        Err(_) => false,
    }
}

/// Division-free variant with precomputed norms (hot path).
#[inline]
fn pair_ok_n(v1: &CRow, n1: f64, v2: &CRow, n2: f64, alpha: f64) -> bool {
    let mut re = 0.0;
    for (a, b) in v1.iter().zip(v2.iter()) {
        re += a.re * b.re + a.im * b.im;
    }
    re.abs() <= (alpha + SO_EPS) * n1 * n2
}

/// SMC kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum SmcKind {
    /// BS-to-UE stream in the first phase.
    DirectT1,
    /// BS-to-UE stream in the second phase.
    DirectT2,
    /// BS-to-RN stream (phase 1) paired with an RN-to-UE stream (phase 2).
    RelayPair,
}

/// Activation combination: bit 0 is the BS, bit `1 + m` is RN `m`.
pub type Activation = u32;

/// `true` when the BS is active in the combination.
pub fn bs_active(a: Activation) -> bool {
    a & 1 != 0
}

/// `true` when RN `m` is active in the combination.
pub fn rn_active(a: Activation, m: usize) -> bool {
    a & (1 << (m + 1)) != 0
}

/// One spatial multiplexing component candidate.
#[derive(Debug, Clone)]
pub struct Smc {
    pub kind: SmcKind,
    /// Destination UE.
    pub ue: usize,
    /// Relay index for relay pairs.
    pub rn: Option<usize>,
    /// Activation combination this SMC's receive matrix was designed for
    /// (phase-2 SMCs only).
    pub activation: Option<Activation>,
    /// Phase-1 row transmitted by the BS (direct-T1 row or the BS-to-RN row
    /// of a relay pair), length `N_B`.
    pub vector_t1: Option<CRow>,
    /// Phase-2 served row (BS-to-UE row for direct-T2, RN-to-UE row for a
    /// relay pair).
    pub vector_t2: Option<CRow>,
    pub norm_t1: f64,
    pub norm_t2: f64,
    /// Row index within the phase-1 effective matrix.
    pub t1_row: usize,
    /// Receive output dimension within the UE's phase-2 receive matrix.
    pub t2_row: usize,
    /// Effective BS row toward this SMC's phase-2 receive output (the
    /// auxiliary row the BS stacks to null its interference here), present
    /// when the BS is in the activation combination.
    pub rx_bs_row: Option<CRow>,
    /// Effective RN rows toward this SMC's phase-2 receive output, indexed by
    /// RN; present for RNs in the activation combination.
    pub rx_rn_rows: Vec<Option<CRow>>,
    /// Norm of `rx_bs_row` (0 when absent).
    pub rx_bs_norm: f64,
    /// Norms of `rx_rn_rows` (0 when absent).
    pub rx_rn_norms: Vec<f64>,
}

impl Smc {
    fn is_phase2(&self) -> bool {
        matches!(self.kind, SmcKind::DirectT2 | SmcKind::RelayPair)
    }
}

/// Dimension limits evaluated by the SMC check.
#[derive(Debug, Clone, Copy)]
pub struct Limits {
    pub n_b: usize,
    pub n_r: usize,
    pub n_u: usize,
    pub k: usize,
    pub m: usize,
    pub alpha: f64,
    /// Phase-1 multiplexing cap `min(N_B, K min(N_B,N_U) + M min(N_B,N_R))`.
    pub q_t1_max: usize,
    /// Phase-2 multiplexing cap `min(N_B, N_R)`.
    pub q_t2_max: usize,
}

impl Limits {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        let q_t1_max = cfg
            .n_b
            .min(cfg.k * cfg.n_b.min(cfg.n_u) + cfg.m * cfg.n_b.min(cfg.n_r));
        Limits {
            n_b: cfg.n_b,
            n_r: cfg.n_r,
            n_u: cfg.n_u,
            k: cfg.k,
            m: cfg.m,
            alpha: cfg.alpha,
            q_t1_max,
            q_t2_max: cfg.n_b.min(cfg.n_r),
        }
    }
}

/// All SMC candidates of one subcarrier block, in the canonical order
/// (kind, ue, rn, activation, row indices).
#[derive(Debug)]
pub struct CandidateSet {
    pub smcs: Vec<Smc>,
    pub limits: Limits,
    /// compat[i] holds one bit per candidate j that is not *unconditionally*
    /// incompatible with i (used to prune the grouping search; the full check
    /// still decides).
    compat: Vec<Vec<u64>>,
}

const ROW_REL_TOL: f64 = 1e-9;

/// Enumerates the full SMC candidate list of every subcarrier block:
/// phase-1 SMCs from the SVD of every BS-to-UE and BS-to-RN channel, and
/// phase-2 SMCs from the jointly-diagonalized receive matrices under each of
/// the `2^(M+1) - 1` activation combinations, with relay pairs formed for
/// every (BS-to-RN row, RN-to-UE row) combination through the same RN.
pub fn enumerate_smcs(
    channels: &ChannelSet,
    cfg: &ScenarioConfig,
) -> Result<Vec<CandidateSet>, GroupingError> {
    let limits = Limits::from_config(cfg);
    let mut out = Vec::with_capacity(cfg.n);
    for n in 0..cfg.n {
        let mut smcs = Vec::new();

        // Phase 1: direct SMCs.
        for k in 0..cfg.k {
            let eff = beamform::svd_receive_bf(channels.h_bu(n, k))?;
            for (i, (row, norm)) in eff.rows.iter().zip(&eff.row_norms).enumerate() {
                smcs.push(Smc {
                    kind: SmcKind::DirectT1,
                    ue: k,
                    rn: None,
                    activation: None,
                    vector_t1: Some(row.clone()),
                    vector_t2: None,
                    norm_t1: *norm,
                    norm_t2: 0.0,
                    t1_row: i,
                    t2_row: 0,
                    rx_bs_row: None,
                    rx_rn_rows: vec![None; cfg.m],
                    rx_bs_norm: 0.0,
                    rx_rn_norms: vec![0.0; cfg.m],
                });
            }
        }

        // Phase 1: BS-to-RN rows, kept for pairing with phase-2 RN rows.
        let mut br_rows: Vec<Vec<(usize, CRow, f64)>> = Vec::with_capacity(cfg.m);
        for m in 0..cfg.m {
            let eff = beamform::svd_receive_bf(channels.h_br(n, m))?;
            br_rows.push(
                eff.rows
                    .iter()
                    .zip(&eff.row_norms)
                    .enumerate()
                    .map(|(i, (row, norm))| (i, row.clone(), *norm))
                    .collect(),
            );
        }

        // Phase 2, one receive design per (UE, activation combination).
        for a in 1u32..(1u32 << (cfg.m + 1)) {
            let with_bs = bs_active(a);
            let active_rns: Vec<usize> = (0..cfg.m).filter(|&m| rn_active(a, m)).collect();
            for k in 0..cfg.k {
                let mut mats: Vec<CMat> = Vec::new();
                if with_bs {
                    let h = channels.h_bu(n, k);
                    mats.push(h * h.adjoint());
                }
                for &m in &active_rns {
                    let h = channels.h_ru(n, m, k);
                    mats.push(h * h.adjoint());
                }
                let r = beamform::joint_diagonalize(&mats, JOINT_DIAG_MAX_SWEEPS, JOINT_DIAG_TOL)?
                    .receive_bf;
                let eff_bs = with_bs.then(|| &r * channels.h_bu(n, k));
                let eff_rn: HashMap<usize, CMat> = active_rns
                    .iter()
                    .map(|&m| (m, &r * channels.h_ru(n, m, k)))
                    .collect();
                let max_norm = |mat: &CMat| -> f64 {
                    (0..mat.nrows())
                        .map(|i| mat.row(i).norm())
                        .fold(0.0, f64::max)
                };
                for d in 0..cfg.n_u {
                    let rx_bs_row = eff_bs.as_ref().map(|m| m.row(d).into_owned());
                    let mut rx_rn_rows: Vec<Option<CRow>> = vec![None; cfg.m];
                    for &m in &active_rns {
                        rx_rn_rows[m] = Some(eff_rn[&m].row(d).into_owned());
                    }
                    let rx_bs_norm = rx_bs_row.as_ref().map(|r| r.norm()).unwrap_or(0.0);
                    let rx_rn_norms: Vec<f64> = rx_rn_rows
                        .iter()
                        .map(|r| r.as_ref().map(|x| x.norm()).unwrap_or(0.0))
                        .collect();
                    if let (Some(eff), Some(row)) = (eff_bs.as_ref(), rx_bs_row.as_ref()) {
                        let norm = row.norm();
                        if norm > ROW_REL_TOL * max_norm(eff) {
                            smcs.push(Smc {
                                kind: SmcKind::DirectT2,
                                ue: k,
                                rn: None,
                                activation: Some(a),
                                vector_t1: None,
                                vector_t2: Some(row.clone()),
                                norm_t1: 0.0,
                                norm_t2: norm,
                                t1_row: 0,
                                t2_row: d,
                                rx_bs_row: rx_bs_row.clone(),
                                rx_rn_rows: rx_rn_rows.clone(),
                                rx_bs_norm,
                                rx_rn_norms: rx_rn_norms.clone(),
                            });
                        }
                    }
                    for &m in &active_rns {
                        let ru_row = rx_rn_rows[m].as_ref().unwrap();
                        let norm = ru_row.norm();
                        if norm <= ROW_REL_TOL * max_norm(&eff_rn[&m]) {
                            continue;
                        }
                        for (i, br, br_norm) in &br_rows[m] {
                            smcs.push(Smc {
                                kind: SmcKind::RelayPair,
                                ue: k,
                                rn: Some(m),
                                activation: Some(a),
                                vector_t1: Some(br.clone()),
                                vector_t2: Some(ru_row.clone()),
                                norm_t1: *br_norm,
                                norm_t2: norm,
                                t1_row: *i,
                                t2_row: d,
                                rx_bs_row: rx_bs_row.clone(),
                                rx_rn_rows: rx_rn_rows.clone(),
                                rx_bs_norm,
                                rx_rn_norms: rx_rn_norms.clone(),
                            });
                        }
                    }
                }
            }
        }

        smcs.sort_by(|a, b| {
            let key = |s: &Smc| {
                (
                    s.kind,
                    s.ue,
                    s.rn.map(|m| m + 1).unwrap_or(0),
                    s.activation.unwrap_or(0),
                    s.t1_row,
                    s.t2_row,
                )
            };
            key(a).cmp(&key(b))
        });
        out.push(CandidateSet::new(smcs, limits));
    }
    Ok(out)
}

impl CandidateSet {
    /// Builds a candidate set and its pairwise pruning masks.
    pub fn new(smcs: Vec<Smc>, limits: Limits) -> Self {
        let nc = smcs.len();
        let words = nc.div_ceil(64).max(1);
        let mut compat = vec![vec![u64::MAX; words]; nc];
        for i in 0..nc {
            for j in 0..=i {
                let ok = j != i && pair_unconditionally_compatible(&smcs[i], &smcs[j], &limits);
                if !ok {
                    compat[i][j / 64] &= !(1u64 << (j % 64));
                    compat[j][i / 64] &= !(1u64 << (i % 64));
                }
            }
            if nc % 64 != 0 {
                compat[i][words - 1] &= (1u64 << (nc % 64)) - 1;
            }
        }
        CandidateSet {
            smcs,
            limits,
            compat,
        }
    }

    pub fn len(&self) -> usize {
        self.smcs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.smcs.is_empty()
    }
}

/// Rejects candidate pairs that can never share a group, whatever the rest of
/// the group looks like: mismatched activation combinations, or a
/// semi-orthogonality failure inside a stack both rows are guaranteed to
/// occupy together.
fn pair_unconditionally_compatible(a: &Smc, b: &Smc, lim: &Limits) -> bool {
    if let (Some(x), Some(y)) = (a.activation, b.activation) {
        if x != y {
            return false;
        }
    }
    let alpha = lim.alpha;
    // Both transmit from the BS in phase 1.
    if let (Some(v1), Some(v2)) = (a.vector_t1.as_ref(), b.vector_t1.as_ref()) {
        if !pair_ok_n(v1, a.norm_t1, v2, b.norm_t1, alpha) {
            return false;
        }
    }
    // Served phase-2 rows sharing a transmitter stack.
    match (a.kind, b.kind) {
        (SmcKind::DirectT2, SmcKind::DirectT2) => {
            if !pair_ok_n(
                a.vector_t2.as_ref().unwrap(),
                a.norm_t2,
                b.vector_t2.as_ref().unwrap(),
                b.norm_t2,
                alpha,
            ) {
                return false;
            }
        }
        (SmcKind::RelayPair, SmcKind::RelayPair) => {
            let (ma, mb) = (a.rn.unwrap(), b.rn.unwrap());
            if ma == mb {
                if !pair_ok_n(
                    a.vector_t2.as_ref().unwrap(),
                    a.norm_t2,
                    b.vector_t2.as_ref().unwrap(),
                    b.norm_t2,
                    alpha,
                ) {
                    return false;
                }
            } else {
                // RN of a serves a and stacks an auxiliary row toward b, and
                // vice versa.
                let aux_b_at_ma = b.rx_rn_rows.get(ma).and_then(|r| r.as_ref());
                let aux_a_at_mb = a.rx_rn_rows.get(mb).and_then(|r| r.as_ref());
                match (aux_b_at_ma, aux_a_at_mb) {
                    (Some(aux_b), Some(aux_a)) => {
                        if !pair_ok_n(
                            a.vector_t2.as_ref().unwrap(),
                            a.norm_t2,
                            aux_b,
                            b.rx_rn_norms[ma],
                            alpha,
                        ) || !pair_ok_n(
                            b.vector_t2.as_ref().unwrap(),
                            b.norm_t2,
                            aux_a,
                            a.rx_rn_norms[mb],
                            alpha,
                        ) {
                            return false;
                        }
                    }
                    _ => return false,
                }
            }
        }
        (SmcKind::DirectT2, SmcKind::RelayPair) | (SmcKind::RelayPair, SmcKind::DirectT2) => {
            let (d, r) = if a.kind == SmcKind::DirectT2 {
                (a, b)
            } else {
                (b, a)
            };
            let m = r.rn.unwrap();
            // The serving RN stacks an auxiliary row toward the direct SMC,
            // and the BS one toward the relay SMC.
            let aux_d_at_rn = d.rx_rn_rows.get(m).and_then(|x| x.as_ref());
            let aux_r_at_bs = r.rx_bs_row.as_ref();
            match (aux_d_at_rn, aux_r_at_bs) {
                (Some(aux_d), Some(aux_r)) => {
                    if !pair_ok_n(
                        r.vector_t2.as_ref().unwrap(),
                        r.norm_t2,
                        aux_d,
                        d.rx_rn_norms[m],
                        alpha,
                    ) || !pair_ok_n(
                        d.vector_t2.as_ref().unwrap(),
                        d.norm_t2,
                        aux_r,
                        r.rx_bs_norm,
                        alpha,
                    ) {
                        return false;
                    }
                }
                _ => return false,
            }
        }
        _ => {}
    }
    true
}

/// Per-transmitter and per-UE occupancy of a group.
#[derive(Debug, Clone, Serialize)]
pub struct GroupTallies {
    /// Phase-1 BS streams (direct-T1 plus relay BS-to-RN rows).
    pub bs_t1: usize,
    /// Phase-2 BS stack size including auxiliary rows.
    pub bs_t2: usize,
    /// Phase-2 stack size per RN including auxiliary rows.
    pub rn_t2: Vec<usize>,
    /// Per-UE phase-2 receive counts (BS-served, RN-served).
    pub ue_rx: Vec<(usize, usize)>,
}

struct GroupView<'a> {
    t1_rows: Vec<&'a CRow>,
    bs_served: Vec<u16>,
    rn_served: Vec<Vec<u16>>,
    t2_members: Vec<u16>,
    ue_b: Vec<usize>,
    ue_r: Vec<usize>,
    activation_conflict: bool,
}

fn build_view<I>(cands: &CandidateSet, members: I) -> GroupView<'_>
where
    I: Iterator<Item = u16>,
{
    let lim = &cands.limits;
    let mut view = GroupView {
        t1_rows: Vec::new(),
        bs_served: Vec::new(),
        rn_served: vec![Vec::new(); lim.m],
        t2_members: Vec::new(),
        ue_b: vec![0; lim.k],
        ue_r: vec![0; lim.k],
        activation_conflict: false,
    };
    let mut activation: Option<Activation> = None;
    for idx in members {
        let smc = &cands.smcs[idx as usize];
        if let Some(v) = smc.vector_t1.as_ref() {
            view.t1_rows.push(v);
        }
        if smc.is_phase2() {
            view.t2_members.push(idx);
            match (activation, smc.activation) {
                (None, a) => activation = a,
                (Some(x), Some(y)) if x != y => view.activation_conflict = true,
                _ => {}
            }
            match smc.kind {
                SmcKind::DirectT2 => {
                    view.bs_served.push(idx);
                    view.ue_b[smc.ue] += 1;
                }
                SmcKind::RelayPair => {
                    view.rn_served[smc.rn.unwrap()].push(idx);
                    view.ue_r[smc.ue] += 1;
                }
                SmcKind::DirectT1 => unreachable!(),
            }
        }
    }
    view
}

fn pairwise_alpha_ok(rows: &[&CRow], alpha: f64) -> bool {
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            if !pair_ok(rows[i], rows[j], alpha) {
                return false;
            }
        }
    }
    true
}

/// Phase-2 transmitter identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TxId {
    Bs,
    Rn(usize),
}

/// Collects one phase-2 transmitter's stack: its served rows followed by the
/// auxiliary rows toward every other transmitter's served SMC. Returns `None`
/// when a required auxiliary row does not exist under the group's activation
/// combination.
fn phase2_stack<'a>(
    cands: &'a CandidateSet,
    view: &GroupView<'a>,
    tx: TxId,
) -> Option<Vec<&'a CRow>> {
    let mut rows: Vec<&CRow> = Vec::new();
    let served: &[u16] = match tx {
        TxId::Bs => &view.bs_served,
        TxId::Rn(m) => &view.rn_served[m],
    };
    for &idx in served {
        rows.push(cands.smcs[idx as usize].vector_t2.as_ref().unwrap());
    }
    for &idx in &view.t2_members {
        let smc = &cands.smcs[idx as usize];
        let victim_of_other = match tx {
            TxId::Bs => smc.kind == SmcKind::RelayPair,
            TxId::Rn(m) => smc.kind == SmcKind::DirectT2 || smc.rn != Some(m),
        };
        if !victim_of_other {
            continue;
        }
        let aux = match tx {
            TxId::Bs => smc.rx_bs_row.as_ref(),
            TxId::Rn(m) => smc.rx_rn_rows.get(m).and_then(|r| r.as_ref()),
        };
        match aux {
            Some(row) => rows.push(row),
            None => return None,
        }
    }
    Some(rows)
}

/// The SMC checking algorithm: `true` iff `candidate` can join `group`.
///
/// Verifies (i) pairwise alpha-semi-orthogonality of every per-transmitter
/// stack including required auxiliary rows, (ii) the per-transmitter antenna
/// limits, (iii) the per-UE phase-2 receive limits, and (iv) the phase-1 and
/// phase-2 multiplexing-gain caps. The group is never mutated.
pub fn smc_check(cands: &CandidateSet, group: &[u16], candidate: u16) -> bool {
    let lim = &cands.limits;
    let members = group.iter().copied().chain(std::iter::once(candidate));
    let view = build_view(cands, members);
    if view.activation_conflict {
        return false;
    }

    // Phase 1: one joint BS stack.
    if view.t1_rows.len() > lim.n_b || view.t1_rows.len() > lim.q_t1_max {
        return false;
    }
    if !pairwise_alpha_ok(&view.t1_rows, lim.alpha) {
        return false;
    }

    // Phase 2: per serving transmitter, served plus auxiliary rows.
    let mut serving: Vec<TxId> = Vec::new();
    if !view.bs_served.is_empty() {
        serving.push(TxId::Bs);
    }
    for m in 0..lim.m {
        if !view.rn_served[m].is_empty() {
            serving.push(TxId::Rn(m));
        }
    }
    for tx in serving {
        let rows = match phase2_stack(cands, &view, tx) {
            Some(rows) => rows,
            None => return false,
        };
        let antennas = match tx {
            TxId::Bs => lim.n_b,
            TxId::Rn(_) => lim.n_r,
        };
        if rows.len() > antennas {
            return false;
        }
        if !pairwise_alpha_ok(&rows, lim.alpha) {
            return false;
        }
    }

    // Per-UE receive limits.
    let mut t2_total = 0usize;
    for k in 0..lim.k {
        let b = view.ue_b[k];
        let r = view.ue_r[k];
        if b > lim.n_b.min(lim.n_u) || r > lim.n_r.min(lim.n_u) || b + r > lim.n_u {
            return false;
        }
        t2_total += b + r;
    }

    // Phase-2 multiplexing-gain cap.
    if t2_total > lim.q_t2_max {
        return false;
    }
    true
}

/// Transmitter tallies of a group (stack sizes including auxiliary rows).
pub fn group_tallies(cands: &CandidateSet, members: &[u16]) -> GroupTallies {
    let view = build_view(cands, members.iter().copied());
    let bs_t2 = if view.bs_served.is_empty() {
        0
    } else {
        phase2_stack(cands, &view, TxId::Bs)
            .map(|r| r.len())
            .unwrap_or(0)
    };
    let rn_t2 = (0..cands.limits.m)
        .map(|m| {
            if view.rn_served[m].is_empty() {
                0
            } else {
                phase2_stack(cands, &view, TxId::Rn(m))
                    .map(|r| r.len())
                    .unwrap_or(0)
            }
        })
        .collect();
    GroupTallies {
        bs_t1: view.t1_rows.len(),
        bs_t2,
        rn_t2,
        ue_rx: view
            .ue_b
            .iter()
            .copied()
            .zip(view.ue_r.iter().copied())
            .collect(),
    }
}

/// Output of one grouping run on one subcarrier block.
#[derive(Debug, Clone)]
pub struct GroupingOutcome {
    /// Distinct groups as member-index lists, in first-visit order.
    pub groups: Vec<Vec<u16>>,
    /// Number of groups recorded by the search before de-duplication.
    pub recorded: usize,
}

struct MaskIter<'a> {
    words: &'a [u64],
    word_idx: usize,
    current: u64,
}

fn mask_iter(words: &[u64]) -> MaskIter<'_> {
    MaskIter {
        words,
        word_idx: 0,
        current: words.first().copied().unwrap_or(0),
    }
}

impl Iterator for MaskIter<'_> {
    type Item = u16;
    fn next(&mut self) -> Option<u16> {
        loop {
            if self.current != 0 {
                let bit = self.current.trailing_zeros();
                self.current &= self.current - 1;
                return Some((self.word_idx * 64) as u16 + bit as u16);
            }
            self.word_idx += 1;
            if self.word_idx >= self.words.len() {
                return None;
            }
            self.current = self.words[self.word_idx];
        }
    }
}

fn and_masks(a: &[u64], b: &[u64]) -> Vec<u64> {
    a.iter().zip(b).map(|(x, y)| x & y).collect()
}

fn clear_bit(mask: &mut [u64], idx: u16) {
    mask[idx as usize / 64] &= !(1u64 << (idx as usize % 64));
}

fn full_mask(nc: usize) -> Vec<u64> {
    let words = nc.div_ceil(64).max(1);
    let mut mask = vec![u64::MAX; words];
    if nc == 0 {
        mask[0] = 0;
    } else if nc % 64 != 0 {
        mask[words - 1] = (1u64 << (nc % 64)) - 1;
    }
    mask
}

/// Incrementally maintained group state for the search algorithms. The
/// invariant is that the current members always form a feasible group; a
/// candidate is then admitted by checking only the stack rows its addition
/// introduces, equivalent to (but much cheaper than) re-running the full SMC
/// check. Push/pop snapshots make the state usable inside the ESGA recursion.
struct GroupState<'a> {
    cands: &'a CandidateSet,
    members: Vec<u16>,
    t1_rows: Vec<(&'a CRow, f64)>,
    /// Phase-2 stack rows per transmitter (index 0 = BS, 1 + m = RN m);
    /// present only while that transmitter serves at least one SMC.
    stacks: Vec<Vec<(&'a CRow, f64)>>,
    bs_served: usize,
    rn_served: Vec<usize>,
    relay_members: Vec<u16>,
    t2_members: Vec<u16>,
    ue_b: Vec<usize>,
    ue_r: Vec<usize>,
    t2_total: usize,
    activation: Option<Activation>,
    snapshots: Vec<Snapshot>,
}

struct Snapshot {
    t1_len: usize,
    stack_lens: Vec<usize>,
}

impl<'a> GroupState<'a> {
    fn new(cands: &'a CandidateSet) -> Self {
        let lim = &cands.limits;
        GroupState {
            cands,
            members: Vec::new(),
            t1_rows: Vec::new(),
            stacks: vec![Vec::new(); lim.m + 1],
            bs_served: 0,
            rn_served: vec![0; lim.m],
            relay_members: Vec::new(),
            t2_members: Vec::new(),
            ue_b: vec![0; lim.k],
            ue_r: vec![0; lim.k],
            t2_total: 0,
            activation: None,
            snapshots: Vec::new(),
        }
    }

    fn aux_row(&self, victim: &'a Smc, tx: usize) -> Option<(&'a CRow, f64)> {
        if tx == 0 {
            victim.rx_bs_row.as_ref().map(|r| (r, victim.rx_bs_norm))
        } else {
            victim
                .rx_rn_rows
                .get(tx - 1)
                .and_then(|r| r.as_ref())
                .map(|r| (r, victim.rx_rn_norms[tx - 1]))
        }
    }

    /// Rows the stack of transmitter `tx` would consist of if it started
    /// serving now: auxiliary rows toward every current phase-2 member not
    /// served by `tx` (relay members of `tx` itself are excluded by the
    /// caller's bookkeeping: a transmitter only newly-serves when it had no
    /// served members).
    fn fresh_stack_aux(&self, tx: usize, out: &mut Vec<(&'a CRow, f64)>) -> bool {
        for &idx in &self.t2_members {
            let smc = &self.cands.smcs[idx as usize];
            match self.aux_row(smc, tx) {
                Some(row) => out.push(row),
                None => return false,
            }
        }
        true
    }

    /// `true` iff `candidate` can join the current (feasible) group.
    fn admits(&self, candidate: u16) -> bool {
        let lim = &self.cands.limits;
        let alpha = lim.alpha;
        let smc = &self.cands.smcs[candidate as usize];

        // Activation consistency for phase-2 SMCs.
        if smc.is_phase2() {
            if let (Some(a), Some(b)) = (self.activation, smc.activation) {
                if a != b {
                    return false;
                }
            }
        }

        // Phase-1 stack: dimension and new pairs.
        if let Some(v) = smc.vector_t1.as_ref() {
            let len = self.t1_rows.len() + 1;
            if len > lim.n_b || len > lim.q_t1_max {
                return false;
            }
            if !self
                .t1_rows
                .iter()
                .all(|(r, n)| pair_ok_n(r, *n, v, smc.norm_t1, alpha))
            {
                return false;
            }
        }

        if !smc.is_phase2() {
            return true;
        }

        // Per-UE receive limits and the phase-2 multiplexing cap.
        let (db, dr) = match smc.kind {
            SmcKind::DirectT2 => (1usize, 0usize),
            SmcKind::RelayPair => (0, 1),
            SmcKind::DirectT1 => unreachable!(),
        };
        let b = self.ue_b[smc.ue] + db;
        let r = self.ue_r[smc.ue] + dr;
        if b > lim.n_b.min(lim.n_u) || r > lim.n_r.min(lim.n_u) || b + r > lim.n_u {
            return false;
        }
        if self.t2_total + 1 > lim.q_t2_max {
            return false;
        }

        // The transmitter that serves the candidate.
        let own_tx = match smc.kind {
            SmcKind::DirectT2 => 0usize,
            SmcKind::RelayPair => smc.rn.unwrap() + 1,
            SmcKind::DirectT1 => unreachable!(),
        };
        let own_antennas = if own_tx == 0 { lim.n_b } else { lim.n_r };
        let own_vec = smc.vector_t2.as_ref().unwrap();
        let own_serving_already = if own_tx == 0 {
            self.bs_served > 0
        } else {
            self.rn_served[own_tx - 1] > 0
        };
        if own_serving_already {
            // Existing stack gains one served row.
            let stack = &self.stacks[own_tx];
            if stack.len() + 1 > own_antennas {
                return false;
            }
            if !stack
                .iter()
                .all(|(row, n)| pair_ok_n(row, *n, own_vec, smc.norm_t2, alpha))
            {
                return false;
            }
        } else {
            // The stack springs into existence: the candidate's served row
            // plus auxiliary rows toward every existing phase-2 member.
            let mut fresh: Vec<(&CRow, f64)> = Vec::with_capacity(self.t2_members.len() + 1);
            fresh.push((own_vec, smc.norm_t2));
            if !self.fresh_stack_aux(own_tx, &mut fresh) {
                return false;
            }
            if fresh.len() > own_antennas {
                return false;
            }
            for i in 0..fresh.len() {
                for j in (i + 1)..fresh.len() {
                    if !pair_ok_n(fresh[i].0, fresh[i].1, fresh[j].0, fresh[j].1, alpha) {
                        return false;
                    }
                }
            }
        }

        // Every *other* serving transmitter gains an auxiliary row toward the
        // candidate.
        for tx in 0..=lim.m {
            if tx == own_tx {
                continue;
            }
            let serving = if tx == 0 {
                self.bs_served > 0
            } else {
                self.rn_served[tx - 1] > 0
            };
            if !serving {
                continue;
            }
            let (aux, aux_n) = match self.aux_row(smc, tx) {
                Some(row) => row,
                None => return false,
            };
            let stack = &self.stacks[tx];
            let antennas = if tx == 0 { lim.n_b } else { lim.n_r };
            if stack.len() + 1 > antennas {
                return false;
            }
            if !stack
                .iter()
                .all(|(row, n)| pair_ok_n(row, *n, aux, aux_n, alpha))
            {
                return false;
            }
        }
        true
    }

    /// Adds an admitted candidate, updating every stack.
    fn push(&mut self, candidate: u16) {
        let snapshot = Snapshot {
            t1_len: self.t1_rows.len(),
            stack_lens: self.stacks.iter().map(|s| s.len()).collect(),
        };
        self.snapshots.push(snapshot);
        self.members.push(candidate);
        let lim_m = self.cands.limits.m;
        let smc = &self.cands.smcs[candidate as usize];
        if let Some(v) = smc.vector_t1.as_ref() {
            self.t1_rows.push((v, smc.norm_t1));
        }
        if !smc.is_phase2() {
            return;
        }
        if self.activation.is_none() {
            self.activation = smc.activation;
        }
        let own_tx = match smc.kind {
            SmcKind::DirectT2 => {
                self.bs_served += 1;
                self.ue_b[smc.ue] += 1;
                0usize
            }
            SmcKind::RelayPair => {
                let m = smc.rn.unwrap();
                self.rn_served[m] += 1;
                self.ue_r[smc.ue] += 1;
                self.relay_members.push(candidate);
                m + 1
            }
            SmcKind::DirectT1 => unreachable!(),
        };
        self.t2_total += 1;

        let newly_serving = match own_tx {
            0 => self.bs_served == 1,
            m1 => self.rn_served[m1 - 1] == 1,
        };
        if newly_serving {
            let mut fresh: Vec<(&CRow, f64)> = vec![(smc.vector_t2.as_ref().unwrap(), smc.norm_t2)];
            let ok = self.fresh_stack_aux(own_tx, &mut fresh);
            debug_assert!(ok, "admitted candidate has all aux rows");
            self.stacks[own_tx] = fresh;
        } else {
            self.stacks[own_tx].push((smc.vector_t2.as_ref().unwrap(), smc.norm_t2));
        }
        // Other serving transmitters null the new victim.
        for tx in 0..=lim_m {
            if tx == own_tx {
                continue;
            }
            let serving = if tx == 0 {
                self.bs_served > 0
            } else {
                self.rn_served[tx - 1] > 0
            };
            if serving {
                let aux = self.aux_row(smc, tx).expect("admitted candidate has aux");
                self.stacks[tx].push(aux);
            }
        }
        self.t2_members.push(candidate);
    }

    fn pop(&mut self) {
        let snapshot = self.snapshots.pop().expect("push/pop balanced");
        let candidate = self.members.pop().expect("push/pop balanced");
        self.t1_rows.truncate(snapshot.t1_len);
        for (stack, &len) in self.stacks.iter_mut().zip(&snapshot.stack_lens) {
            stack.truncate(len);
        }
        let smc = &self.cands.smcs[candidate as usize];
        if smc.is_phase2() {
            match smc.kind {
                SmcKind::DirectT2 => {
                    self.bs_served -= 1;
                    self.ue_b[smc.ue] -= 1;
                }
                SmcKind::RelayPair => {
                    self.rn_served[smc.rn.unwrap()] -= 1;
                    self.ue_r[smc.ue] -= 1;
                    self.relay_members.pop();
                }
                SmcKind::DirectT1 => unreachable!(),
            }
            self.t2_total -= 1;
            self.t2_members.pop();
            if self.t2_total == 0 {
                self.activation = None;
            }
            // A transmitter that stopped serving loses its whole stack.
            if self.bs_served == 0 {
                self.stacks[0].clear();
            }
            for m in 0..self.rn_served.len() {
                if self.rn_served[m] == 0 {
                    self.stacks[m + 1].clear();
                }
            }
        }
    }
}

/// Exhaustive search-based grouping: recursively extends the current group by
/// every candidate that passes the SMC check, recording each intermediate
/// group, and de-duplicates by member set. The recorded count (pre-dedup) is
/// bounded by the configured budget; exceeding it is an error rather than a
/// silent truncation.
pub fn esga(
    cands: &CandidateSet,
    subcarrier: usize,
    budget: usize,
) -> Result<GroupingOutcome, GroupingError> {
    struct Ctx {
        // Groups of up to 8 members pack their sorted ids into a u128 key;
        // larger groups (possible only with bigger antenna arrays) fall back
        // to boxed slices.
        visited_small: HashSet<u128>,
        visited_large: HashSet<Box<[u16]>>,
        groups: Vec<Vec<u16>>,
        recorded: usize,
        budget: usize,
        subcarrier: usize,
        scratch: Vec<u16>,
    }

    impl Ctx {
        fn visit(&mut self, members: &[u16]) -> bool {
            self.scratch.clear();
            self.scratch.extend_from_slice(members);
            self.scratch.sort_unstable();
            if self.scratch.len() <= 8 {
                let mut key: u128 = self.scratch.len() as u128;
                for &m in &self.scratch {
                    key = (key << 16) | (m as u128 + 1);
                }
                self.visited_small.insert(key)
            } else {
                self.visited_large
                    .insert(self.scratch.clone().into_boxed_slice())
            }
        }
    }

    fn recurse(
        ctx: &mut Ctx,
        state: &mut GroupState<'_>,
        mask: &[u64],
    ) -> Result<(), GroupingError> {
        for c in mask_iter(mask) {
            if !state.admits(c) {
                continue;
            }
            ctx.recorded += 1;
            if ctx.recorded > ctx.budget {
                return Err(GroupingError::BudgetExceeded {
                    subcarrier: ctx.subcarrier,
                    recorded: ctx.recorded,
                    budget: ctx.budget,
                });
            }
            state.push(c);
            if ctx.visit(&state.members) {
                ctx.groups.push(state.members.clone());
                let mut child = and_masks(mask, &state.cands.compat[c as usize]);
                clear_bit(&mut child, c);
                recurse(ctx, state, &child)?;
            }
            state.pop();
        }
        Ok(())
    }

    if cands.is_empty() {
        return Ok(GroupingOutcome {
            groups: Vec::new(),
            recorded: 0,
        });
    }
    let mut ctx = Ctx {
        visited_small: HashSet::new(),
        visited_large: HashSet::new(),
        groups: Vec::new(),
        recorded: 0,
        budget,
        subcarrier,
        scratch: Vec::new(),
    };
    let mask = full_mask(cands.len());
    let mut state = GroupState::new(cands);
    recurse(&mut ctx, &mut state, &mask)?;
    Ok(GroupingOutcome {
        groups: ctx.groups,
        recorded: ctx.recorded,
    })
}

/// Gram-Schmidt norm of the component of `v` orthogonal to the span of
/// `basis`.
fn orthogonal_component_norm(v: &CRow, basis: &[&CRow]) -> f64 {
    let mut ortho: Vec<CRow> = Vec::with_capacity(basis.len());
    for b in basis {
        let mut r = (*b).clone();
        for u in &ortho {
            let coef: C64 = u.iter().zip(r.iter()).map(|(a, x)| a.conj() * x).sum();
            let scaled = u.map(|x| x * coef);
            r -= scaled;
        }
        let norm = r.norm();
        if norm > 1e-12 {
            ortho.push(r.map(|x| x / C64::new(norm, 0.0)));
        }
    }
    let mut residual = v.clone();
    for u in &ortho {
        let coef: C64 = u
            .iter()
            .zip(residual.iter())
            .map(|(a, x)| a.conj() * x)
            .sum();
        let scaled = u.map(|x| x * coef);
        residual -= scaled;
    }
    residual.norm()
}

/// Norm of the orthogonal component of a candidate against the vectors the
/// same transmitter already serves in the same phase; relay pairs take the
/// minimum over their two hops.
pub fn noc(cands: &CandidateSet, group: &[u16], candidate: u16) -> f64 {
    let smc = &cands.smcs[candidate as usize];
    let t1_basis: Vec<&CRow> = group
        .iter()
        .filter_map(|&i| cands.smcs[i as usize].vector_t1.as_ref())
        .collect();
    match smc.kind {
        SmcKind::DirectT1 => orthogonal_component_norm(smc.vector_t1.as_ref().unwrap(), &t1_basis),
        SmcKind::DirectT2 => {
            let bs_t2_basis: Vec<&CRow> = group
                .iter()
                .filter(|&&i| cands.smcs[i as usize].kind == SmcKind::DirectT2)
                .map(|&i| cands.smcs[i as usize].vector_t2.as_ref().unwrap())
                .collect();
            orthogonal_component_norm(smc.vector_t2.as_ref().unwrap(), &bs_t2_basis)
        }
        SmcKind::RelayPair => {
            let m = smc.rn.unwrap();
            let rn_basis: Vec<&CRow> = group
                .iter()
                .filter(|&&i| {
                    let s = &cands.smcs[i as usize];
                    s.kind == SmcKind::RelayPair && s.rn == Some(m)
                })
                .map(|&i| cands.smcs[i as usize].vector_t2.as_ref().unwrap())
                .collect();
            let n1 = orthogonal_component_norm(smc.vector_t1.as_ref().unwrap(), &t1_basis);
            let n2 = orthogonal_component_norm(smc.vector_t2.as_ref().unwrap(), &rn_basis);
            n1.min(n2)
        }
    }
}

/// Orthogonal component-based grouping: seeds one group per initially
/// feasible candidate and greedily extends it with the feasible candidate of
/// highest orthogonal-component norm (ties to the lowest index) until no
/// candidate passes the SMC check. Duplicated final groups are merged.
pub fn ocga(cands: &CandidateSet) -> GroupingOutcome {
    let nc = cands.len();
    let mut seen: HashSet<Box<[u16]>> = HashSet::new();
    let mut groups: Vec<Vec<u16>> = Vec::new();
    let mut recorded = 0usize;
    let mut state = GroupState::new(cands);
    for seed in 0..nc as u16 {
        if !state.admits(seed) {
            continue;
        }
        state.push(seed);
        let mut mask = full_mask(nc);
        mask = and_masks(&mask, &cands.compat[seed as usize]);
        clear_bit(&mut mask, seed);
        loop {
            let mut best: Option<(f64, u16)> = None;
            for c in mask_iter(&mask) {
                if !state.admits(c) {
                    continue;
                }
                let score = noc(cands, &state.members, c);
                let better = match best {
                    None => true,
                    Some((b, _)) => score > b,
                };
                if better {
                    best = Some((score, c));
                }
            }
            match best {
                Some((_, c)) => {
                    state.push(c);
                    mask = and_masks(&mask, &cands.compat[c as usize]);
                    clear_bit(&mut mask, c);
                }
                None => break,
            }
        }
        recorded += 1;
        let mut key = state.members.clone();
        key.sort_unstable();
        if seen.insert(key.into_boxed_slice()) {
            groups.push(state.members.clone());
        }
        while !state.members.is_empty() {
            state.pop();
        }
    }
    GroupingOutcome { groups, recorded }
}

/// One CNR-bearing direct link of a materialized group.
#[derive(Debug, Clone, Serialize)]
pub struct DirectLink {
    pub member: u16,
    pub ue: usize,
    /// Effective CNR, 1/Watts.
    pub cnr: f64,
}

/// A relay pair with both hop CNRs.
#[derive(Debug, Clone, Serialize)]
pub struct RelayLink {
    pub member: u16,
    pub ue: usize,
    pub rn: usize,
    pub cnr_br: f64,
    pub cnr_ru: f64,
}

/// A feasible group with its zero-forcing CNRs attached.
#[derive(Debug, Clone, Serialize)]
pub struct MaterializedGroup {
    pub members: Vec<u16>,
    pub direct_t1: Vec<DirectLink>,
    pub direct_t2: Vec<DirectLink>,
    pub relays: Vec<RelayLink>,
}

/// Full zero-forcing detail of one group (transmit matrices and stacks),
/// used by tests and debug dumps.
#[derive(Debug)]
pub struct GroupZf {
    /// Phase-1 stack: member ids in stack order and the BS transmit matrix.
    pub t1: Option<(Vec<u16>, ZfbfResult)>,
    /// Phase-2 stacks, one per serving transmitter.
    pub t2: Vec<Phase2Zf>,
}

#[derive(Debug)]
pub struct Phase2Zf {
    pub tx: TxId,
    /// Members served by this transmitter, in stack order.
    pub served: Vec<u16>,
    /// Victims this transmitter nulls, in stack order after the served rows.
    pub victims: Vec<u16>,
    pub stack: TransmitterStack,
    pub zf: ZfbfResult,
}

/// Materializes the zero-forcing matrices of a group.
pub fn materialize_zf(
    cands: &CandidateSet,
    members: &[u16],
    noise: f64,
) -> Result<GroupZf, BeamformError> {
    let view = build_view(cands, members.iter().copied());
    let t1 = if view.t1_rows.is_empty() {
        None
    } else {
        let rows: Vec<CRow> = view.t1_rows.iter().map(|r| (*r).clone()).collect();
        let stack_members: Vec<u16> = members
            .iter()
            .copied()
            .filter(|&i| cands.smcs[i as usize].vector_t1.is_some())
            .collect();
        Some((stack_members, beamform::zfbf_phase1(&rows, noise)?))
    };

    let mut t2 = Vec::new();
    let mut serving: Vec<TxId> = Vec::new();
    if !view.bs_served.is_empty() {
        serving.push(TxId::Bs);
    }
    for m in 0..cands.limits.m {
        if !view.rn_served[m].is_empty() {
            serving.push(TxId::Rn(m));
        }
    }
    for tx in serving {
        let served: Vec<u16> = match tx {
            TxId::Bs => view.bs_served.clone(),
            TxId::Rn(m) => view.rn_served[m].clone(),
        };
        let mut victims = Vec::new();
        let mut aux_rows = Vec::new();
        for &idx in &view.t2_members {
            let smc = &cands.smcs[idx as usize];
            let is_victim = match tx {
                TxId::Bs => smc.kind == SmcKind::RelayPair,
                TxId::Rn(m) => smc.kind == SmcKind::DirectT2 || smc.rn != Some(m),
            };
            if !is_victim {
                continue;
            }
            let aux = match tx {
                TxId::Bs => smc.rx_bs_row.clone(),
                TxId::Rn(m) => smc.rx_rn_rows.get(m).cloned().flatten(),
            };
            match aux {
                Some(row) => {
                    victims.push(idx);
                    aux_rows.push(row);
                }
                None => return Err(BeamformError::RankDeficient),
            }
        }
        let stack = TransmitterStack {
            served: served
                .iter()
                .map(|&i| cands.smcs[i as usize].vector_t2.clone().unwrap())
                .collect(),
            auxiliary: aux_rows,
        };
        let zf = beamform::zfbf_phase2(std::slice::from_ref(&stack), noise)?
            .into_iter()
            .next()
            .unwrap();
        t2.push(Phase2Zf {
            tx,
            served,
            victims,
            stack,
            zf,
        });
    }
    Ok(GroupZf { t1, t2 })
}

/// Materializes a group's CNRs from its zero-forcing matrices.
pub fn materialize_group(
    cands: &CandidateSet,
    members: &[u16],
    noise: f64,
) -> Result<MaterializedGroup, BeamformError> {
    let zf = materialize_zf(cands, members, noise)?;
    let mut direct_t1 = Vec::new();
    let mut direct_t2 = Vec::new();
    let mut relays: HashMap<u16, RelayLink> = HashMap::new();

    if let Some((stack_members, res)) = &zf.t1 {
        for (pos, &idx) in stack_members.iter().enumerate() {
            let smc = &cands.smcs[idx as usize];
            match smc.kind {
                SmcKind::DirectT1 => direct_t1.push(DirectLink {
                    member: idx,
                    ue: smc.ue,
                    cnr: res.cnrs[pos],
                }),
                SmcKind::RelayPair => {
                    relays.insert(
                        idx,
                        RelayLink {
                            member: idx,
                            ue: smc.ue,
                            rn: smc.rn.unwrap(),
                            cnr_br: res.cnrs[pos],
                            cnr_ru: 0.0,
                        },
                    );
                }
                SmcKind::DirectT2 => unreachable!(),
            }
        }
    }
    for p2 in &zf.t2 {
        for (pos, &idx) in p2.served.iter().enumerate() {
            let smc = &cands.smcs[idx as usize];
            match smc.kind {
                SmcKind::DirectT2 => direct_t2.push(DirectLink {
                    member: idx,
                    ue: smc.ue,
                    cnr: p2.zf.cnrs[pos],
                }),
                SmcKind::RelayPair => {
                    let entry = relays.get_mut(&idx).expect("relay has a phase-1 row");
                    entry.cnr_ru = p2.zf.cnrs[pos];
                }
                SmcKind::DirectT1 => unreachable!(),
            }
        }
    }
    let mut relays: Vec<RelayLink> = relays.into_values().collect();
    relays.sort_by_key(|r| (r.rn, r.member));
    direct_t1.sort_by_key(|l| l.member);
    direct_t2.sort_by_key(|l| l.member);
    Ok(MaterializedGroup {
        members: members.to_vec(),
        direct_t1,
        direct_t2,
        relays,
    })
}

type PruneKey = (usize, usize, Vec<usize>);

fn prune_key(g: &MaterializedGroup) -> PruneKey {
    let mut rns: Vec<usize> = g.relays.iter().map(|r| r.rn).collect();
    rns.sort_unstable();
    (g.direct_t1.len(), g.direct_t2.len(), rns)
}

/// `true` when `a`'s effective gains are all <= `b`'s, compared positionally
/// within each link category (both groups must share a prune key).
fn dominated_by(a: &MaterializedGroup, b: &MaterializedGroup) -> bool {
    a.direct_t1
        .iter()
        .zip(&b.direct_t1)
        .all(|(x, y)| x.cnr <= y.cnr)
        && a.direct_t2
            .iter()
            .zip(&b.direct_t2)
            .all(|(x, y)| x.cnr <= y.cnr)
        && a.relays
            .iter()
            .zip(&b.relays)
            .all(|(x, y)| x.cnr_br <= y.cnr_br && x.cnr_ru <= y.cnr_ru)
}

/// Removes every group whose effective gains are dominated elementwise by
/// another group with the same transmitters; never removes the last group of
/// a subcarrier block, and never changes the downstream optimum (a dominated
/// group can never win the per-subcarrier selection).
pub fn prune_groups(groups: Vec<MaterializedGroup>) -> Vec<MaterializedGroup> {
    let mut kept: Vec<MaterializedGroup> = Vec::with_capacity(groups.len());
    let mut key_index: HashMap<PruneKey, Vec<usize>> = HashMap::new();
    for g in groups {
        let key = prune_key(&g);
        let bucket = key_index.entry(key).or_default();
        if bucket.iter().any(|&i| dominated_by(&g, &kept[i])) {
            continue;
        }
        bucket.retain(|&i| {
            if dominated_by(&kept[i], &g) {
                kept[i].members.clear(); // tombstone
                false
            } else {
                true
            }
        });
        bucket.push(kept.len());
        kept.push(g);
    }
    kept.retain(|g| !g.members.is_empty());
    kept
}

/// Grouping algorithm selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GroupingAlgo {
    Esga,
    Ocga,
}

impl std::str::FromStr for GroupingAlgo {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "esga" => Ok(GroupingAlgo::Esga),
            "ocga" => Ok(GroupingAlgo::Ocga),
            other => Err(format!("unknown grouping algorithm `{other}`")),
        }
    }
}

/// Statistics of one grouping run over all subcarrier blocks.
#[derive(Debug, Clone, Default, Serialize)]
pub struct GroupingStats {
    /// Distinct groups emitted by the algorithm (pre-pruning).
    pub raw_groups: usize,
    /// Groups recorded before de-duplication (ESGA recursion size).
    pub recorded: usize,
    /// Groups surviving pruning, summed over subcarrier blocks.
    pub pruned_groups: usize,
    /// Groups discarded because a zero-forcing stack was ill-conditioned.
    pub discarded: usize,
}

/// Group sets of every subcarrier block, materialized and pruned, ready for
/// the solver.
#[derive(Debug)]
pub struct GroupSet {
    pub per_subcarrier: Vec<Vec<MaterializedGroup>>,
    pub stats: GroupingStats,
}

/// Runs the full grouping pipeline: enumerate candidates, group with the
/// chosen algorithm, materialize zero-forcing CNRs, prune dominated groups.
pub fn build_group_set(
    channels: &ChannelSet,
    cfg: &ScenarioConfig,
    algo: GroupingAlgo,
) -> Result<(Vec<CandidateSet>, GroupSet), GroupingError> {
    let cands = enumerate_smcs(channels, cfg)?;
    let group_set = group_candidates(&cands, cfg, algo)?;
    Ok((cands, group_set))
}

/// Grouping over already-enumerated candidates.
pub fn group_candidates(
    cands: &[CandidateSet],
    cfg: &ScenarioConfig,
    algo: GroupingAlgo,
) -> Result<GroupSet, GroupingError> {
    let noise = cfg.noise_scale();
    let mut per_subcarrier = Vec::with_capacity(cands.len());
    let mut stats = GroupingStats::default();
    for (n, cs) in cands.iter().enumerate() {
        let outcome = match algo {
            GroupingAlgo::Esga => esga(cs, n, cfg.esga_budget)?,
            GroupingAlgo::Ocga => ocga(cs),
        };
        stats.raw_groups += outcome.groups.len();
        stats.recorded += outcome.recorded;
        let mut materialized = Vec::with_capacity(outcome.groups.len());
        for members in &outcome.groups {
            match materialize_group(cs, members, noise) {
                Ok(g) => materialized.push(g),
                Err(BeamformError::IllConditioned(_)) => stats.discarded += 1,
                Err(e) => return Err(e.into()),
            }
        }
        let pruned = prune_groups(materialized);
        stats.pruned_groups += pruned.len();
        per_subcarrier.push(pruned);
    }
    Ok(GroupSet {
        per_subcarrier,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_topology, sample_channels};

    fn row(values: &[(f64, f64)]) -> CRow {
        CRow::from_iterator(values.len(), values.iter().map(|&(re, im)| C64::new(re, im)))
    }

    fn limits(n_b: usize, n_r: usize, n_u: usize, k: usize, m: usize, alpha: f64) -> Limits {
        let mut cfg = ScenarioConfig::with_antennas(n_b, n_r, n_u);
        cfg.k = k;
        cfg.m = m;
        cfg.alpha = alpha;
        Limits::from_config(&cfg)
    }

    fn direct_t1(ue: usize, t1_row: usize, v: CRow, m: usize) -> Smc {
        Smc {
            kind: SmcKind::DirectT1,
            ue,
            rn: None,
            activation: None,
            norm_t1: v.norm(),
            norm_t2: 0.0,
            vector_t1: Some(v),
            vector_t2: None,
            t1_row,
            t2_row: 0,
            rx_bs_row: None,
            rx_rn_rows: vec![None; m],
            rx_bs_norm: 0.0,
            rx_rn_norms: vec![0.0; m],
        }
    }

    #[test]
    fn semi_orthogonality_hand_values() {
        let e1 = row(&[(1.0, 0.0), (0.0, 0.0)]);
        let e2 = row(&[(0.0, 0.0), (1.0, 0.0)]);
        assert!(semi_orthogonality(&e1, &e2).unwrap() < 1e-15);
        let parallel = row(&[(3.0, 0.0), (0.0, 0.0)]);
        assert!((semi_orthogonality(&e1, &parallel).unwrap() - 1.0).abs() < 1e-15);
        let diag = row(&[(1.0, 0.0), (1.0, 0.0)]);
        let expected = 1.0 / 2f64.sqrt();
        assert!((semi_orthogonality(&e1, &diag).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn semi_orthogonality_rejects_zero_vector() {
        let z = row(&[(0.0, 0.0), (0.0, 0.0)]);
        let v = row(&[(1.0, 0.0), (0.0, 0.0)]);
        assert!(matches!(
            semi_orthogonality(&z, &v),
            Err(GroupingError::ZeroVector)
        ));
    }

    #[test]
    fn smc_check_vacuous_on_empty_group() {
        let lim = limits(4, 4, 2, 2, 0, 0.1);
        let smcs = vec![direct_t1(
            0,
            0,
            row(&[(1.0, 0.0), (0.0, 0.0), (0.0, 0.0), (0.0, 0.0)]),
            0,
        )];
        let cands = CandidateSet::new(smcs, lim);
        assert!(smc_check(&cands, &[], 0));
    }

    #[test]
    fn smc_check_rejects_parallel_same_transmitter() {
        let lim = limits(4, 4, 2, 2, 0, 0.1);
        let v = row(&[(1.0, 0.0), (0.2, 0.1), (0.0, 0.0), (0.0, 0.0)]);
        let smcs = vec![
            direct_t1(0, 0, v.clone(), 0),
            direct_t1(1, 0, v.map(|x| x * C64::new(2.0, 0.0)), 0),
        ];
        let cands = CandidateSet::new(smcs, lim);
        assert!(!smc_check(&cands, &[0], 1));
    }

    #[test]
    fn smc_check_enforces_bs_antenna_limit() {
        // N_B = 2 and two phase-1 SMCs already in the group: any further
        // phase-1 candidate fails regardless of orthogonality.
        let lim = limits(2, 4, 2, 3, 0, 1.0);
        let smcs = vec![
            direct_t1(0, 0, row(&[(1.0, 0.0), (0.0, 0.0)]), 0),
            direct_t1(1, 0, row(&[(0.0, 0.0), (1.0, 0.0)]), 0),
            direct_t1(2, 0, row(&[(1.0, 0.0), (1.0, 0.0)]), 0),
        ];
        let cands = CandidateSet::new(smcs, lim);
        assert!(smc_check(&cands, &[0], 1));
        assert!(!smc_check(&cands, &[0, 1], 2));
    }

    fn tiny_scenario(alpha: f64) -> ScenarioConfig {
        let mut cfg = ScenarioConfig::default();
        cfg.n = 2;
        cfg.k = 2;
        cfg.m = 1;
        cfg.alpha = alpha;
        cfg
    }

    #[test]
    fn enumeration_counts_follow_dimensions() {
        // K=1, M=1, N_B=N_R=4, N_U=2: 2 direct phase-1 SMCs per block and 4
        // BS-to-RN rows feeding the relay pairs.
        let mut cfg = ScenarioConfig::default();
        cfg.k = 1;
        cfg.m = 1;
        cfg.n = 1;
        let topo = generate_topology(&cfg, 3);
        let ch = sample_channels(&cfg, &topo, 3);
        let cands = enumerate_smcs(&ch, &cfg).unwrap();
        let t1 = cands[0]
            .smcs
            .iter()
            .filter(|s| s.kind == SmcKind::DirectT1)
            .count();
        assert_eq!(t1, 2);
        // Relay pairs: 4 BR rows x 2 RU rows x 2 combos containing the RN.
        let relays = cands[0]
            .smcs
            .iter()
            .filter(|s| s.kind == SmcKind::RelayPair)
            .count();
        assert_eq!(relays, 16);
        // Direct phase-2: combos with the BS = 2, times 2 output dims.
        let t2 = cands[0]
            .smcs
            .iter()
            .filter(|s| s.kind == SmcKind::DirectT2)
            .count();
        assert_eq!(t2, 4);
    }

    #[test]
    fn enumeration_without_relays_has_single_combination() {
        let mut cfg = ScenarioConfig::default();
        cfg.m = 0;
        cfg.n = 1;
        let topo = generate_topology(&cfg, 5);
        let ch = sample_channels(&cfg, &topo, 5);
        let cands = enumerate_smcs(&ch, &cfg).unwrap();
        assert!(cands[0].smcs.iter().all(|s| s.kind != SmcKind::RelayPair));
        let combos: HashSet<u32> = cands[0].smcs.iter().filter_map(|s| s.activation).collect();
        assert_eq!(combos, HashSet::from([1u32]));
    }

    #[test]
    fn enumeration_combination_count_for_two_relays() {
        let mut cfg = ScenarioConfig::default();
        cfg.m = 2;
        cfg.k = 1;
        cfg.n = 1;
        let topo = generate_topology(&cfg, 13);
        let ch = sample_channels(&cfg, &topo, 13);
        let cands = enumerate_smcs(&ch, &cfg).unwrap();
        let combos: HashSet<u32> = cands[0].smcs.iter().filter_map(|s| s.activation).collect();
        assert_eq!(combos.len(), 7, "2^3 - 1 activation subsets");
    }

    #[test]
    fn esga_hand_trace_two_compatible_candidates() {
        let lim = limits(4, 4, 2, 2, 0, 0.1);
        let smcs = vec![
            direct_t1(0, 0, row(&[(1.0, 0.0), (0.0, 0.0), (0.0, 0.0), (0.0, 0.0)]), 0),
            direct_t1(1, 0, row(&[(0.0, 0.0), (1.0, 0.0), (0.0, 0.0), (0.0, 0.0)]), 0),
        ];
        let cands = CandidateSet::new(smcs, lim);
        let out = esga(&cands, 0, 1000).unwrap();
        // Recorded: {a}, {a,b}, {b}, {b,a}; distinct: {a}, {a,b}, {b}.
        assert_eq!(out.recorded, 4);
        assert_eq!(out.groups.len(), 3);
        let sets: HashSet<Vec<u16>> = out
            .groups
            .iter()
            .map(|g| {
                let mut s = g.clone();
                s.sort_unstable();
                s
            })
            .collect();
        assert!(sets.contains(&vec![0]));
        assert!(sets.contains(&vec![1]));
        assert!(sets.contains(&vec![0, 1]));
    }

    #[test]
    fn esga_alpha_zero_keeps_singletons_for_correlated_candidates() {
        let lim = limits(4, 4, 2, 2, 0, 0.0);
        let smcs = vec![
            direct_t1(0, 0, row(&[(1.0, 0.0), (0.2, 0.0), (0.0, 0.0), (0.0, 0.0)]), 0),
            direct_t1(1, 0, row(&[(1.0, 0.0), (-0.2, 0.0), (0.0, 0.0), (0.0, 0.0)]), 0),
        ];
        let cands = CandidateSet::new(smcs, lim);
        let out = esga(&cands, 0, 1000).unwrap();
        assert_eq!(out.groups.len(), 2);
        assert!(out.groups.iter().all(|g| g.len() == 1));
    }

    #[test]
    fn esga_empty_candidates_empty_groups() {
        let lim = limits(4, 4, 2, 2, 0, 0.1);
        let cands = CandidateSet::new(vec![], lim);
        let out = esga(&cands, 0, 1000).unwrap();
        assert!(out.groups.is_empty());
        assert_eq!(out.recorded, 0);
    }

    #[test]
    fn esga_budget_is_an_error_not_a_truncation() {
        let lim = limits(4, 4, 2, 4, 0, 1.0);
        let smcs: Vec<Smc> = (0..4)
            .map(|i| {
                let mut v = vec![(0.0, 0.0); 4];
                v[i] = (1.0, 0.0);
                direct_t1(i, 0, row(&v), 0)
            })
            .collect();
        let cands = CandidateSet::new(smcs, lim);
        assert!(matches!(
            esga(&cands, 3, 5),
            Err(GroupingError::BudgetExceeded { subcarrier: 3, .. })
        ));
    }

    #[test]
    fn ocga_single_candidate_single_group() {
        let lim = limits(4, 4, 2, 2, 0, 0.1);
        let smcs = vec![direct_t1(
            0,
            0,
            row(&[(1.0, 0.0), (0.0, 0.0), (0.0, 0.0), (0.0, 0.0)]),
            0,
        )];
        let cands = CandidateSet::new(smcs, lim);
        let out = ocga(&cands);
        assert_eq!(out.groups, vec![vec![0]]);
    }

    #[test]
    fn ocga_greedy_prefers_higher_noc() {
        // Seed s, then a (norm 2) and b (norm 1), all mutually orthogonal:
        // a must be selected before b.
        let lim = limits(4, 4, 2, 3, 0, 0.1);
        let smcs = vec![
            direct_t1(0, 0, row(&[(1.0, 0.0), (0.0, 0.0), (0.0, 0.0), (0.0, 0.0)]), 0),
            direct_t1(1, 0, row(&[(0.0, 0.0), (2.0, 0.0), (0.0, 0.0), (0.0, 0.0)]), 0),
            direct_t1(2, 0, row(&[(0.0, 0.0), (0.0, 0.0), (1.0, 0.0), (0.0, 0.0)]), 0),
        ];
        let cands = CandidateSet::new(smcs, lim);
        let out = ocga(&cands);
        let from_seed0 = &out.groups[0];
        assert_eq!(from_seed0[0], 0);
        assert_eq!(from_seed0[1], 1, "higher-norm candidate first");
        assert_eq!(from_seed0[2], 2);
    }

    #[test]
    fn ocga_member_sets_are_subset_of_esga_sets() {
        let cfg = tiny_scenario(0.35);
        let topo = generate_topology(&cfg, 17);
        let ch = sample_channels(&cfg, &topo, 17);
        let cands = enumerate_smcs(&ch, &cfg).unwrap();
        for cs in &cands {
            let es = esga(cs, 0, 2_000_000).unwrap();
            let oc = ocga(cs);
            let esga_sets: HashSet<Vec<u16>> = es
                .groups
                .iter()
                .map(|g| {
                    let mut s = g.clone();
                    s.sort_unstable();
                    s
                })
                .collect();
            for g in &oc.groups {
                let mut s = g.clone();
                s.sort_unstable();
                assert!(
                    esga_sets.contains(&s),
                    "OCGA produced a set ESGA does not know: {s:?}"
                );
            }
        }
    }

    #[test]
    fn incremental_state_matches_full_check() {
        // Drive a random-ish greedy exploration with the incremental state
        // and verify every admit/reject decision against the standalone
        // check, on a real candidate set.
        let cfg = tiny_scenario(0.4);
        let topo = generate_topology(&cfg, 41);
        let ch = sample_channels(&cfg, &topo, 41);
        let cands = enumerate_smcs(&ch, &cfg).unwrap();
        for cs in &cands {
            let mut state = GroupState::new(cs);
            let mut members: Vec<u16> = Vec::new();
            for round in 0..4 {
                for c in 0..cs.len() as u16 {
                    if members.contains(&c) {
                        continue;
                    }
                    let full = smc_check(cs, &members, c);
                    let fast = state.admits(c);
                    assert_eq!(full, fast, "divergence at {c} with group {members:?}");
                    // Greedily accept every (round + c)-th admitted candidate
                    // to vary the group shapes.
                    if full && (c as usize + round) % 3 == 0 {
                        state.push(c);
                        members.push(c);
                    }
                }
                if let Some(&last) = members.last() {
                    if round % 2 == 1 {
                        state.pop();
                        members.pop();
                        let _ = last;
                    }
                }
            }
        }
    }

    #[test]
    fn every_emitted_group_replays_through_smc_check() {
        let cfg = tiny_scenario(0.3);
        let topo = generate_topology(&cfg, 23);
        let ch = sample_channels(&cfg, &topo, 23);
        let cands = enumerate_smcs(&ch, &cfg).unwrap();
        for cs in &cands {
            let es = esga(cs, 0, 2_000_000).unwrap();
            let oc = ocga(cs);
            for g in es.groups.iter().chain(oc.groups.iter()) {
                let mut partial: Vec<u16> = Vec::new();
                for &c in g {
                    assert!(smc_check(cs, &partial, c), "replay failed at {c} in {g:?}");
                    partial.push(c);
                }
            }
        }
    }

    #[test]
    fn esga_group_count_respects_theta_bound() {
        let cfg = tiny_scenario(0.3);
        let topo = generate_topology(&cfg, 29);
        let ch = sample_channels(&cfg, &topo, 29);
        let cands = enumerate_smcs(&ch, &cfg).unwrap();
        for cs in &cands {
            let es = esga(cs, 0, 2_000_000).unwrap();
            let oc = ocga(cs);
            let theta = (cs.limits.q_t1_max + cs.limits.q_t2_max) as i32;
            let bound = (cs.len() as f64).powi(theta);
            assert!((es.groups.len() as f64) <= bound);
            assert!(oc.groups.len() <= cs.len());
        }
    }

    fn gain_group(t1: &[f64], members: &[u16]) -> MaterializedGroup {
        MaterializedGroup {
            members: members.to_vec(),
            direct_t1: t1
                .iter()
                .enumerate()
                .map(|(i, &cnr)| DirectLink {
                    member: members[i],
                    ue: 0,
                    cnr,
                })
                .collect(),
            direct_t2: vec![],
            relays: vec![],
        }
    }

    #[test]
    fn prune_removes_duplicates_and_dominated_keeps_incomparable() {
        let groups = vec![
            gain_group(&[2.0, 3.0], &[0, 1]),
            gain_group(&[2.0, 3.0], &[2, 3]),
            gain_group(&[3.0, 2.0], &[4, 5]),
        ];
        let pruned = prune_groups(groups);
        assert_eq!(pruned.len(), 2);

        let groups = vec![
            gain_group(&[2.0, 3.0], &[0, 1]),
            gain_group(&[2.0, 4.0], &[2, 3]),
        ];
        let pruned = prune_groups(groups);
        assert_eq!(pruned.len(), 1);
        assert_eq!(pruned[0].members, vec![2, 3]);
    }

    #[test]
    fn prune_never_compares_across_transmitter_signatures() {
        let strong = gain_group(&[10.0], &[0]);
        let mut relay = gain_group(&[], &[1]);
        relay.relays.push(RelayLink {
            member: 1,
            ue: 0,
            rn: 0,
            cnr_br: 1.0,
            cnr_ru: 1.0,
        });
        let pruned = prune_groups(vec![strong, relay]);
        assert_eq!(pruned.len(), 2);
    }

    #[test]
    fn materialized_groups_have_exact_zero_forcing() {
        let cfg = tiny_scenario(0.4);
        let topo = generate_topology(&cfg, 31);
        let ch = sample_channels(&cfg, &topo, 31);
        let cands = enumerate_smcs(&ch, &cfg).unwrap();
        let noise = cfg.noise_scale();
        let mut checked = 0;
        for cs in &cands {
            let out = ocga(cs);
            for members in &out.groups {
                let Ok(zf) = materialize_zf(cs, members, noise) else {
                    continue;
                };
                if let Some((stack_members, res)) = &zf.t1 {
                    let rows: Vec<&CRow> = stack_members
                        .iter()
                        .map(|&i| cs.smcs[i as usize].vector_t1.as_ref().unwrap())
                        .collect();
                    for (ri, r) in rows.iter().enumerate() {
                        for ci in 0..stack_members.len() {
                            let resp: C64 =
                                (0..r.len()).map(|j| r[j] * res.transmit[(j, ci)]).sum();
                            let expected = if ri == ci { 1.0 } else { 0.0 };
                            assert!(
                                (resp - C64::new(expected, 0.0)).norm() < 1e-8,
                                "phase-1 off-target response"
                            );
                        }
                    }
                }
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn group_tallies_count_aux_rows() {
        let cfg = tiny_scenario(0.5);
        let topo = generate_topology(&cfg, 37);
        let ch = sample_channels(&cfg, &topo, 37);
        let cands = enumerate_smcs(&ch, &cfg).unwrap();
        // Find a group with one direct-T2 and one relay: BS stack should be
        // two rows (served + aux), RN stack two rows (served + aux).
        for cs in &cands {
            let out = esga(cs, 0, 500_000).unwrap();
            for g in &out.groups {
                let has_t2 = g
                    .iter()
                    .any(|&i| cs.smcs[i as usize].kind == SmcKind::DirectT2);
                let has_relay = g
                    .iter()
                    .any(|&i| cs.smcs[i as usize].kind == SmcKind::RelayPair);
                if has_t2 && has_relay && g.len() == 2 {
                    let t = group_tallies(cs, g);
                    assert_eq!(t.bs_t2, 2);
                    assert_eq!(t.rn_t2.iter().sum::<usize>(), 2);
                    return;
                }
            }
        }
        panic!("no mixed direct/relay pair group found");
    }
}
