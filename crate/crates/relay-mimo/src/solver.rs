//! Spectral-efficiency (SEM) and energy-spectral-efficiency (ESEM)
//! maximization by dual decomposition, plus the random-grouping equal-power
//! baseline (RG-EPA).
//!
//! Both problems share one engine. The ESEM objective — sum rate divided by
//! dissipated power — is a linear-fractional program; scaling every variable
//! by `t = 1/P_T` turns it into a concave program with one extra linear
//! constraint. The dual loop alternates closed-form primal recovery with
//! projected subgradient price updates:
//!
//! 1. water-filling powers per SMC, `P = [1/((xi*mu + 2*price) ln2) - 1/G]+`,
//!    with the relay pair refined so both hops carry the decode-and-forward
//!    rate `min(C_BR, C_RU)` at equal SNR;
//! 2. per subcarrier block, the group with the highest tentative sum rate is
//!    selected;
//! 3. `t` follows in closed form from the selected powers, and `mu` from the
//!    stationarity of the Lagrangian in `t`;
//! 4. the budget prices take a projected subgradient step on their slacks.
//!
//! The SEM problem is the same machinery with `mu = 0` and `t = 1` pinned.
//!
//! The reported allocation is refined after the loop: with the selection
//! frozen, the budget prices are re-solved exactly (bisection on each
//! budget's complementary-slackness condition, and for ESEM the closed-form
//! `mu` update iterated to its fixed point), which makes the power budgets,
//! the relay rate equality, and complementary slackness hold to numerical
//! precision rather than subgradient accuracy.

use crate::grouping::{GroupSet, MaterializedGroup};
use crate::scenario::{derive_seed, ScenarioConfig};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use serde::Serialize;
use thiserror::Error;

const LN2: f64 = std::f64::consts::LN_2;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("no SMC group available for selection")]
    NoGroups,
    #[error("all dual prices and mu are zero: the water level is unbounded; at least one positive price is required")]
    ZeroPrices,
}

/// Which objective the engine maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Objective {
    Sem,
    Esem,
}

/// Dual prices of the three budget families plus the energy multiplier.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualState {
    /// Phase-1 BS budget price.
    pub lambda_t1: f64,
    /// Phase-2 BS budget price.
    pub lambda_t2: f64,
    /// Per-RN phase-2 budget prices.
    pub nu: Vec<f64>,
    /// Energy-constraint multiplier (0 for SEM).
    pub mu: f64,
}

impl DualState {
    pub fn initial(m: usize, price: f64) -> Self {
        DualState {
            lambda_t1: price,
            lambda_t2: price,
            nu: vec![price; m],
            mu: 0.0,
        }
    }

    fn all_zero(&self) -> bool {
        self.lambda_t1 == 0.0
            && self.lambda_t2 == 0.0
            && self.mu == 0.0
            && self.nu.iter().all(|&v| v == 0.0)
    }
}

/// Solver knobs. Step sizes follow `delta(i) = delta0 / sqrt(i)`; the
/// defaults scale the base step with `1/P_max^2`, which keeps the price
/// oscillation proportional to the stationary price across the whole dBm
/// sweep range (the stationary price scales like `1/P_max` while the budget
/// slack scales like `P_max`).
#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Base step for the phase-1 BS price; `None` picks `1/P_max_B^2`.
    pub step_lambda_t1: Option<f64>,
    /// Base step for the phase-2 BS price; `None` picks `1/P_max_B^2`.
    pub step_lambda_t2: Option<f64>,
    /// Base step for the RN prices; `None` picks `1/P_max_R^2`.
    pub step_nu: Option<f64>,
    /// Initial value of every budget price.
    pub initial_price: f64,
    /// Initialize the dual loop from an instance-tuned warm start (a short
    /// alternation of group selection and exact budget prices), mirroring the
    /// empirically optimized initial values the reference results rely on.
    /// When false, the loop starts cold at `initial_price`.
    pub warm_start: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iterations: 5000,
            step_lambda_t1: None,
            step_lambda_t2: None,
            step_nu: None,
            initial_price: 1e-3,
            warm_start: true,
        }
    }
}

/// Water levels of the three power families (may be infinite when a family's
/// prices are all zero; the per-SMC budget cap keeps powers finite).
#[derive(Debug, Clone)]
struct WaterLevels {
    t1: f64,
    t2: f64,
    ru: Vec<f64>,
}

fn level(denom: f64) -> f64 {
    if denom > 0.0 {
        1.0 / (denom * LN2)
    } else {
        f64::INFINITY
    }
}

fn water_levels(duals: &DualState, cfg: &ScenarioConfig) -> WaterLevels {
    WaterLevels {
        t1: level(cfg.xi_b * duals.mu + 2.0 * duals.lambda_t1),
        t2: level(cfg.xi_b * duals.mu + 2.0 * duals.lambda_t2),
        ru: duals
            .nu
            .iter()
            .map(|&nu| level(cfg.xi_r * duals.mu + 2.0 * nu))
            .collect(),
    }
}

fn fill(level: f64, g: f64, cap: f64) -> f64 {
    (level - 1.0 / g).clamp(0.0, cap)
}

fn rate(g: f64, p: f64) -> f64 {
    0.5 * (1.0 + g * p).log2()
}

/// Per-SMC powers and rates of one group for given water levels (the
/// selection-independent factors).
#[derive(Debug, Clone, Default)]
pub struct GroupAlloc {
    pub p_t1: Vec<f64>,
    pub p_t2: Vec<f64>,
    pub p_br: Vec<f64>,
    pub p_ru: Vec<f64>,
    pub r_t1: Vec<f64>,
    pub r_t2: Vec<f64>,
    pub r_relay: Vec<f64>,
    pub sum_rate: f64,
}

/// Applies the decode-and-forward refinement to a relay pair's raw
/// water-filling powers: neither hop transmits more than the weaker hop can
/// carry, leaving both hop SNRs equal.
pub fn refine_relay_powers(g_br: f64, g_ru: f64, p_br: f64, p_ru: f64) -> (f64, f64) {
    let br = p_br.min(g_ru / g_br * p_ru);
    let ru = p_ru.min(g_br / g_ru * p_br);
    (br, ru)
}

fn waterfill_group_at(
    group: &MaterializedGroup,
    wl: &WaterLevels,
    cfg: &ScenarioConfig,
) -> GroupAlloc {
    let mut alloc = GroupAlloc::default();
    for link in &group.direct_t1 {
        let p = fill(wl.t1, link.cnr, cfg.p_max_b);
        alloc.r_t1.push(rate(link.cnr, p));
        alloc.p_t1.push(p);
    }
    for link in &group.direct_t2 {
        let p = fill(wl.t2, link.cnr, cfg.p_max_b);
        alloc.r_t2.push(rate(link.cnr, p));
        alloc.p_t2.push(p);
    }
    for relay in &group.relays {
        let raw_br = fill(wl.t1, relay.cnr_br, cfg.p_max_b);
        let raw_ru = fill(wl.ru[relay.rn], relay.cnr_ru, cfg.p_max_r);
        let (p_br, p_ru) = refine_relay_powers(relay.cnr_br, relay.cnr_ru, raw_br, raw_ru);
        alloc
            .r_relay
            .push(rate(relay.cnr_br, p_br).min(rate(relay.cnr_ru, p_ru)));
        alloc.p_br.push(p_br);
        alloc.p_ru.push(p_ru);
    }
    alloc.sum_rate = alloc.r_t1.iter().sum::<f64>()
        + alloc.r_t2.iter().sum::<f64>()
        + alloc.r_relay.iter().sum::<f64>();
    alloc
}

/// Water-filling primal recovery for one group (the selection-independent
/// power factors). Rejects the degenerate all-zero price configuration, whose
/// water level is unbounded.
pub fn waterfill_primal(
    duals: &DualState,
    group: &MaterializedGroup,
    cfg: &ScenarioConfig,
) -> Result<GroupAlloc, SolverError> {
    if duals.all_zero() {
        return Err(SolverError::ZeroPrices);
    }
    Ok(waterfill_group_at(group, &water_levels(duals, cfg), cfg))
}

/// Selects the group with the highest tentative sum rate (ties to the lowest
/// index).
pub fn select_group(allocs: &[GroupAlloc]) -> Result<usize, SolverError> {
    if allocs.is_empty() {
        return Err(SolverError::NoGroups);
    }
    let mut best = 0usize;
    for (j, alloc) in allocs.iter().enumerate().skip(1) {
        if alloc.sum_rate > allocs[best].sum_rate {
            best = j;
        }
    }
    Ok(best)
}

/// Power usage of the three budget families, in untransformed Watts.
#[derive(Debug, Clone, Serialize)]
pub struct Usage {
    /// Phase-1 BS: direct phase-1 plus BS-to-RN powers.
    pub t1: f64,
    /// Phase-2 BS: direct phase-2 powers.
    pub t2: f64,
    /// Phase-2 RN powers, per RN.
    pub ru: Vec<f64>,
}

impl Usage {
    fn zero(m: usize) -> Self {
        Usage {
            t1: 0.0,
            t2: 0.0,
            ru: vec![0.0; m],
        }
    }
}

fn usage_of(selected: &[Option<(usize, GroupAlloc)>], groups: &GroupSet, m: usize) -> Usage {
    let mut usage = Usage::zero(m);
    for (n, sel) in selected.iter().enumerate() {
        if let Some((j, alloc)) = sel {
            let group = &groups.per_subcarrier[n][*j];
            usage.t1 += alloc.p_t1.iter().sum::<f64>() + alloc.p_br.iter().sum::<f64>();
            usage.t2 += alloc.p_t2.iter().sum::<f64>();
            for (relay, &p) in group.relays.iter().zip(&alloc.p_ru) {
                usage.ru[relay.rn] += p;
            }
        }
    }
    usage
}

/// Total dissipated power of an allocation (fixed circuit terms plus the
/// amplifier-scaled transmit powers, halved for the two-phase split).
pub fn total_power(usage: &Usage, cfg: &ScenarioConfig) -> f64 {
    cfg.p_c_b
        + cfg.m as f64 * cfg.p_c_r
        + 0.5 * (cfg.xi_b * (usage.t1 + usage.t2) + cfg.xi_r * usage.ru.iter().sum::<f64>())
}

/// Charnes-Cooper scaling variable for the selected allocation: the
/// reciprocal of its total dissipated power.
pub fn compute_t(usage: &Usage, cfg: &ScenarioConfig) -> f64 {
    1.0 / total_power(usage, cfg)
}

/// One projected subgradient update of the budget prices plus the closed-form
/// energy-multiplier update (ESEM only). Returns the new state and whether
/// the raw `mu` went negative and was clamped.
#[allow(clippy::too_many_arguments)]
pub fn update_duals(
    duals: &DualState,
    usage: &Usage,
    sum_rate: f64,
    t: f64,
    cfg: &ScenarioConfig,
    opts: &SolverOptions,
    objective: Objective,
    iteration: usize,
) -> (DualState, bool) {
    let sqrt_i = (iteration.max(1) as f64).sqrt();
    // The ESEM subgradients are the hatted slacks, scaled down by
    // t ~ 1/P_T; the idle dissipation is the natural counter-scale.
    // Base-step scale: the ESEM subgradients are hatted slacks, shrunk by
    // t ~ 1/P_T, which the idle dissipation counter-scales. The 1e-6 factor
    // keeps the price chatter at a selection tie below the convergence
    // threshold; the warm start carries the global price search, so the
    // loop only needs local stability.
    let mode_scale = 1e-6
        * match objective {
            Objective::Sem => 1.0,
            Objective::Esem => cfg.p_c_b + cfg.m as f64 * cfg.p_c_r,
        };
    let d_t1 = opts
        .step_lambda_t1
        .unwrap_or(mode_scale / (cfg.p_max_b * cfg.p_max_b))
        / sqrt_i;
    let d_t2 = opts
        .step_lambda_t2
        .unwrap_or(mode_scale / (cfg.p_max_b * cfg.p_max_b))
        / sqrt_i;
    let d_nu = opts
        .step_nu
        .unwrap_or(mode_scale / (cfg.p_max_r * cfg.p_max_r))
        / sqrt_i;

    let slack_t1 = t * (cfg.p_max_b - usage.t1);
    let slack_t2 = t * (cfg.p_max_b - usage.t2);
    let lambda_t1 = (duals.lambda_t1 - d_t1 * slack_t1).max(0.0);
    let lambda_t2 = (duals.lambda_t2 - d_t2 * slack_t2).max(0.0);
    let nu: Vec<f64> = duals
        .nu
        .iter()
        .zip(&usage.ru)
        .map(|(&nu_m, &used)| (nu_m - d_nu * t * (cfg.p_max_r - used)).max(0.0))
        .collect();

    let mut clamped = false;
    let mu = match objective {
        Objective::Sem => 0.0,
        Objective::Esem => {
            let raw = t * (sum_rate
                + duals.lambda_t1 * (cfg.p_max_b - usage.t1)
                + duals.lambda_t2 * (cfg.p_max_b - usage.t2)
                + duals
                    .nu
                    .iter()
                    .zip(&usage.ru)
                    .map(|(&nu_m, &used)| nu_m * (cfg.p_max_r - used))
                    .sum::<f64>());
            if raw < 0.0 {
                clamped = true;
                0.0
            } else {
                raw
            }
        }
    };

    (
        DualState {
            lambda_t1,
            lambda_t2,
            nu,
            mu,
        },
        clamped,
    )
}

/// One scheduled link of a recovered allocation.
#[derive(Debug, Clone, Serialize)]
pub struct LinkReport {
    pub subcarrier: usize,
    pub kind: String,
    pub ue: usize,
    pub rn: Option<usize>,
    pub cnr: f64,
    pub cnr_ru: Option<f64>,
    /// Transmit power, Watts (the BS-to-RN hop for relay pairs).
    pub power: f64,
    pub power_ru: Option<f64>,
    /// Rate in bits/s/Hz (already halved for the two-phase period).
    pub rate: f64,
}

/// A feasible recovered allocation with its figures of merit.
#[derive(Debug, Clone, Serialize)]
pub struct Recovered {
    pub links: Vec<LinkReport>,
    /// Sum rate over all subcarrier blocks, bits/s/Hz.
    pub sum_rate: f64,
    /// Per-subcarrier-block average, bits/s/Hz.
    pub se: f64,
    /// Sum rate divided by dissipated power, bits/s/Hz/Joule.
    pub ese: f64,
    pub total_power: f64,
    pub usage: Usage,
}

/// Scales each budget family down to feasibility (if the subgradient iterate
/// overshoots), re-refines the relay pairs, and recomputes all rates.
fn recover_feasible(
    selected: &[Option<(usize, GroupAlloc)>],
    groups: &GroupSet,
    cfg: &ScenarioConfig,
) -> Recovered {
    let mut usage = usage_of(selected, groups, cfg.m);
    let f_t1 = (usage.t1 / cfg.p_max_b).max(1.0);
    let f_t2 = (usage.t2 / cfg.p_max_b).max(1.0);
    let f_ru: Vec<f64> = usage
        .ru
        .iter()
        .map(|&u| (u / cfg.p_max_r).max(1.0))
        .collect();

    let mut links = Vec::new();
    let mut sum_rate = 0.0;
    usage = Usage::zero(cfg.m);
    for (n, sel) in selected.iter().enumerate() {
        let Some((j, alloc)) = sel else { continue };
        let group = &groups.per_subcarrier[n][*j];
        for (link, &p) in group.direct_t1.iter().zip(&alloc.p_t1) {
            let p = p / f_t1;
            let r = rate(link.cnr, p);
            sum_rate += r;
            usage.t1 += p;
            links.push(LinkReport {
                subcarrier: n,
                kind: "direct_t1".into(),
                ue: link.ue,
                rn: None,
                cnr: link.cnr,
                cnr_ru: None,
                power: p,
                power_ru: None,
                rate: r,
            });
        }
        for (link, &p) in group.direct_t2.iter().zip(&alloc.p_t2) {
            let p = p / f_t2;
            let r = rate(link.cnr, p);
            sum_rate += r;
            usage.t2 += p;
            links.push(LinkReport {
                subcarrier: n,
                kind: "direct_t2".into(),
                ue: link.ue,
                rn: None,
                cnr: link.cnr,
                cnr_ru: None,
                power: p,
                power_ru: None,
                rate: r,
            });
        }
        for (relay, (&pb, &pr)) in group.relays.iter().zip(alloc.p_br.iter().zip(&alloc.p_ru)) {
            let (pb, pr) = refine_relay_powers(
                relay.cnr_br,
                relay.cnr_ru,
                pb / f_t1,
                pr / f_ru[relay.rn],
            );
            let r = rate(relay.cnr_br, pb).min(rate(relay.cnr_ru, pr));
            sum_rate += r;
            usage.t1 += pb;
            usage.ru[relay.rn] += pr;
            links.push(LinkReport {
                subcarrier: n,
                kind: "relay".into(),
                ue: relay.ue,
                rn: Some(relay.rn),
                cnr: relay.cnr_br,
                cnr_ru: Some(relay.cnr_ru),
                power: pb,
                power_ru: Some(pr),
                rate: r,
            });
        }
    }
    let total = total_power(&usage, cfg);
    Recovered {
        links,
        sum_rate,
        se: sum_rate / cfg.n as f64,
        ese: sum_rate / total,
        total_power: total,
        usage,
    }
}

/// One dual-trace sample.
#[derive(Debug, Clone, Serialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub lambda_t1: f64,
    pub lambda_t2: f64,
    pub nu: Vec<f64>,
    pub mu: f64,
    pub objective: f64,
}

/// Full solver output.
#[derive(Debug, Clone, Serialize)]
pub struct SolveResult {
    pub objective: Objective,
    /// Per-subcarrier-block spectral efficiency, bits/s/Hz.
    pub se: f64,
    /// Energy spectral efficiency, bits/s/Hz/Joule.
    pub ese: f64,
    /// Sum rate over all subcarrier blocks, bits/s/Hz.
    pub sum_rate: f64,
    /// Dissipated power of the recovered allocation, Watts.
    pub total_power: f64,
    /// Charnes-Cooper variable of the recovered allocation.
    pub t: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Selected group index per subcarrier block.
    pub selections: Vec<Option<usize>>,
    pub links: Vec<LinkReport>,
    /// Exact budget prices of the reported allocation.
    pub duals: DualState,
    /// Budget slacks `P_max - usage` of the reported allocation, Watts.
    pub slack_t1: f64,
    pub slack_t2: f64,
    pub slack_ru: Vec<f64>,
    pub mu_clamped_events: usize,
    pub trace: Vec<TraceEntry>,
}

// ---------------------------------------------------------------------------
// Exact price refinement at a fixed selection.
// ---------------------------------------------------------------------------

struct SelectedLinks {
    t1_gains: Vec<f64>,
    t2_gains: Vec<f64>,
    /// (g_br, g_ru, rn)
    relays: Vec<(f64, f64, usize)>,
}

fn collect_links(groups: &GroupSet, selection: &[Option<usize>]) -> SelectedLinks {
    let mut links = SelectedLinks {
        t1_gains: Vec::new(),
        t2_gains: Vec::new(),
        relays: Vec::new(),
    };
    for (n, sel) in selection.iter().enumerate() {
        if let Some(j) = sel {
            let g = &groups.per_subcarrier[n][*j];
            links.t1_gains.extend(g.direct_t1.iter().map(|l| l.cnr));
            links.t2_gains.extend(g.direct_t2.iter().map(|l| l.cnr));
            links
                .relays
                .extend(g.relays.iter().map(|r| (r.cnr_br, r.cnr_ru, r.rn)));
        }
    }
    links
}

fn fill_unbounded(denom: f64, g: f64) -> f64 {
    if denom <= 0.0 {
        f64::INFINITY
    } else {
        (1.0 / (denom * LN2) - 1.0 / g).max(0.0)
    }
}

/// Finds the smallest `price >= 0` making `usage(price) <= budget`, assuming
/// `usage` is non-increasing; returns 0 when the budget is slack at zero
/// price (complementary slackness).
fn budget_price<F>(usage: F, budget: f64) -> f64
where
    F: Fn(f64) -> f64,
{
    if usage(0.0) <= budget {
        return 0.0;
    }
    let mut hi = 1.0;
    for _ in 0..120 {
        if usage(hi) <= budget {
            break;
        }
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..110 {
        let mid = 0.5 * (lo + hi);
        if usage(mid) > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

struct ExactPrices {
    lambda_t1: f64,
    lambda_t2: f64,
    nu: Vec<f64>,
}

/// Exact budget prices for a fixed selection and fixed `mu`: each price is
/// either zero with a slack budget or the bisection root that makes its
/// budget exactly tight. The relay refinement couples the phase-1 and RN
/// budgets, so those prices iterate coordinate-wise to a joint fixed point.
fn exact_prices(links: &SelectedLinks, mu: f64, cfg: &ScenarioConfig, m: usize) -> ExactPrices {
    // Phase-2 BS budget stands alone.
    let lambda_t2 = budget_price(
        |lam| {
            links
                .t2_gains
                .iter()
                .map(|&g| fill_unbounded(cfg.xi_b * mu + 2.0 * lam, g))
                .sum()
        },
        cfg.p_max_b,
    );

    let p_br_raw = |lam: f64, g_br: f64| fill_unbounded(cfg.xi_b * mu + 2.0 * lam, g_br);
    let p_ru_raw = |nu_m: f64, g_ru: f64| fill_unbounded(cfg.xi_r * mu + 2.0 * nu_m, g_ru);

    let mut lambda_t1 = 0.0;
    let mut nu = vec![0.0f64; m];
    for _ in 0..25 {
        let prev = (lambda_t1, nu.clone());
        // RN budgets given the current phase-1 price.
        for rn in 0..m {
            nu[rn] = budget_price(
                |nu_m| {
                    links
                        .relays
                        .iter()
                        .filter(|&&(_, _, r)| r == rn)
                        .map(|&(g_br, g_ru, _)| {
                            let (_, ru) = refine_relay_powers(
                                g_br,
                                g_ru,
                                p_br_raw(lambda_t1, g_br),
                                p_ru_raw(nu_m, g_ru),
                            );
                            ru
                        })
                        .sum()
                },
                cfg.p_max_r,
            );
        }
        // Phase-1 budget given the RN prices.
        lambda_t1 = budget_price(
            |lam| {
                let direct: f64 = links
                    .t1_gains
                    .iter()
                    .map(|&g| fill_unbounded(cfg.xi_b * mu + 2.0 * lam, g))
                    .sum();
                let relayed: f64 = links
                    .relays
                    .iter()
                    .map(|&(g_br, g_ru, rn)| {
                        let (br, _) = refine_relay_powers(
                            g_br,
                            g_ru,
                            p_br_raw(lam, g_br),
                            p_ru_raw(nu[rn], g_ru),
                        );
                        br
                    })
                    .sum();
                direct + relayed
            },
            cfg.p_max_b,
        );
        let delta = (lambda_t1 - prev.0).abs()
            + nu.iter()
                .zip(&prev.1)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>();
        if delta <= 1e-12 * (1.0 + lambda_t1.abs()) {
            break;
        }
    }
    ExactPrices {
        lambda_t1,
        lambda_t2,
        nu,
    }
}

/// Recomputes the allocation of a fixed selection at exact prices; for ESEM
/// the closed-form `mu` update is iterated to its fixed point (at exact
/// prices every price-slack product vanishes, so the update reduces to
/// `mu <- t * sum_rate`, the current energy efficiency).
fn polish_selection(
    groups: &GroupSet,
    selection: &[Option<usize>],
    cfg: &ScenarioConfig,
    objective: Objective,
    mu_init: f64,
) -> (Recovered, DualState) {
    let links = collect_links(groups, selection);
    let mut mu = match objective {
        Objective::Sem => 0.0,
        Objective::Esem => mu_init.max(0.0),
    };
    let mut prices = exact_prices(&links, mu, cfg, cfg.m);
    if objective == Objective::Esem {
        for _ in 0..60 {
            let duals = DualState {
                lambda_t1: prices.lambda_t1,
                lambda_t2: prices.lambda_t2,
                nu: prices.nu.clone(),
                mu,
            };
            let rec = recover_at(groups, selection, &duals, cfg);
            let mu_next = rec.sum_rate / rec.total_power;
            let done = (mu_next - mu).abs() <= 1e-12 * mu_next.max(1.0);
            mu = mu_next;
            prices = exact_prices(&links, mu, cfg, cfg.m);
            if done {
                break;
            }
        }
    }
    let duals = DualState {
        lambda_t1: prices.lambda_t1,
        lambda_t2: prices.lambda_t2,
        nu: prices.nu.clone(),
        mu,
    };
    let rec = recover_at(groups, selection, &duals, cfg);
    (rec, duals)
}

/// Waterfills a fixed selection at the given duals (no per-SMC cap: exact
/// prices keep the budgets tight) and reports the feasible allocation.
fn recover_at(
    groups: &GroupSet,
    selection: &[Option<usize>],
    duals: &DualState,
    cfg: &ScenarioConfig,
) -> Recovered {
    let selected: Vec<Option<(usize, GroupAlloc)>> = selection
        .iter()
        .enumerate()
        .map(|(n, sel)| {
            sel.map(|j| {
                let group = &groups.per_subcarrier[n][j];
                let mut alloc = GroupAlloc::default();
                for link in &group.direct_t1 {
                    let p =
                        fill_unbounded(cfg.xi_b * duals.mu + 2.0 * duals.lambda_t1, link.cnr);
                    alloc.p_t1.push(p);
                    alloc.r_t1.push(rate(link.cnr, p));
                }
                for link in &group.direct_t2 {
                    let p =
                        fill_unbounded(cfg.xi_b * duals.mu + 2.0 * duals.lambda_t2, link.cnr);
                    alloc.p_t2.push(p);
                    alloc.r_t2.push(rate(link.cnr, p));
                }
                for relay in &group.relays {
                    let raw_br = fill_unbounded(
                        cfg.xi_b * duals.mu + 2.0 * duals.lambda_t1,
                        relay.cnr_br,
                    );
                    let raw_ru = fill_unbounded(
                        cfg.xi_r * duals.mu + 2.0 * duals.nu[relay.rn],
                        relay.cnr_ru,
                    );
                    let (pb, pr) =
                        refine_relay_powers(relay.cnr_br, relay.cnr_ru, raw_br, raw_ru);
                    alloc.p_br.push(pb);
                    alloc.p_ru.push(pr);
                    alloc
                        .r_relay
                        .push(rate(relay.cnr_br, pb).min(rate(relay.cnr_ru, pr)));
                }
                alloc.sum_rate = alloc.r_t1.iter().sum::<f64>()
                    + alloc.r_t2.iter().sum::<f64>()
                    + alloc.r_relay.iter().sum::<f64>();
                (j, alloc)
            })
        })
        .collect();
    recover_feasible(&selected, groups, cfg)
}

/// Dual-decomposition solve of the relaxed SEM problem (`mu = 0`, `t = 1`).
pub fn solve_sem(
    cfg: &ScenarioConfig,
    groups: &GroupSet,
    opts: &SolverOptions,
) -> Result<SolveResult, SolverError> {
    solve(cfg, groups, Objective::Sem, opts)
}

/// Dual-decomposition solve of the Charnes-Cooper-transformed ESEM problem.
pub fn solve_esem(
    cfg: &ScenarioConfig,
    groups: &GroupSet,
    opts: &SolverOptions,
) -> Result<SolveResult, SolverError> {
    solve(cfg, groups, Objective::Esem, opts)
}

/// Selects the per-subcarrier argmax groups at the given duals.
fn select_at(
    groups: &GroupSet,
    duals: &DualState,
    cfg: &ScenarioConfig,
) -> Vec<Option<(usize, GroupAlloc)>> {
    let wl = water_levels(duals, cfg);
    groups
        .per_subcarrier
        .iter()
        .map(|per_n| {
            if per_n.is_empty() {
                return None;
            }
            let allocs: Vec<GroupAlloc> = per_n
                .iter()
                .map(|g| waterfill_group_at(g, &wl, cfg))
                .collect();
            let j = select_group(&allocs).expect("non-empty");
            let alloc = allocs.into_iter().nth(j).unwrap();
            Some((j, alloc))
        })
        .collect()
}

type Selection = Vec<Option<usize>>;

fn selection_of(selected: &[Option<(usize, GroupAlloc)>]) -> Selection {
    selected.iter().map(|s| s.as_ref().map(|(j, _)| *j)).collect()
}

/// One dual-loop execution.
struct LoopRun {
    iterations: usize,
    converged: bool,
    mu_clamped_events: usize,
    trace: Vec<TraceEntry>,
}

/// Iteration horizon within which loop-visited selections join the shared
/// candidate pool. Keeping the horizon identical for the requested and the
/// silent exploration loop keeps the SEM/ESEM pools identical.
const POOL_HORIZON: usize = 300;

/// The subgradient loop: closed-form primal recovery, per-subcarrier group
/// selection, `t` and `mu` in closed form, projected subgradient steps on the
/// budget prices, until the objective stalls below the convergence threshold
/// or the iteration cap. Selections visited within the pool horizon are
/// appended to `pool` (first-visit order, with the `mu` in effect as a warm
/// hint).
fn run_loop(
    cfg: &ScenarioConfig,
    groups: &GroupSet,
    objective: Objective,
    opts: &SolverOptions,
    start: DualState,
    pool: &mut Vec<(Selection, f64)>,
    pool_seen: &mut std::collections::HashSet<Selection>,
) -> LoopRun {
    let mut duals = start;
    let mut trace = Vec::new();
    let mut prev_objective = f64::NAN;
    let mut converged = false;
    let mut iterations = 0usize;
    let mut mu_clamped_events = 0usize;

    for i in 1..=opts.max_iterations {
        iterations = i;
        let selected = select_at(groups, &duals, cfg);
        let selection = selection_of(&selected);
        if i <= POOL_HORIZON && pool_seen.insert(selection.clone()) {
            pool.push((selection, duals.mu));
        }
        let usage = usage_of(&selected, groups, cfg.m);
        let sum_rate: f64 = selected
            .iter()
            .flatten()
            .map(|(_, alloc)| alloc.sum_rate)
            .sum();
        let t = match objective {
            Objective::Sem => 1.0,
            Objective::Esem => compute_t(&usage, cfg),
        };
        let obj_value = match objective {
            Objective::Sem => sum_rate,
            Objective::Esem => t * sum_rate,
        };
        trace.push(TraceEntry {
            iteration: i,
            lambda_t1: duals.lambda_t1,
            lambda_t2: duals.lambda_t2,
            nu: duals.nu.clone(),
            mu: duals.mu,
            objective: obj_value,
        });

        if i >= 2 && (obj_value - prev_objective).abs() < cfg.epsilon {
            converged = true;
            break;
        }
        prev_objective = obj_value;

        let (next, clamped) = update_duals(&duals, &usage, sum_rate, t, cfg, opts, objective, i);
        if clamped {
            mu_clamped_events += 1;
        }
        duals = next;
    }
    LoopRun {
        iterations,
        converged,
        mu_clamped_events,
        trace,
    }
}

/// Seeds the selection pool with alternation paths (select at the current
/// prices, re-solve the prices exactly for that selection, repeat) from a
/// ladder of starting water levels, under both objectives. Deterministic and
/// independent of the objective later scored, so the SEM and ESEM solvers
/// evaluate one shared candidate pool.
fn seed_pool(
    groups: &GroupSet,
    cfg: &ScenarioConfig,
    opts: &SolverOptions,
    pool: &mut Vec<(Selection, f64)>,
    pool_seen: &mut std::collections::HashSet<Selection>,
) {
    let cold = DualState::initial(cfg.m, opts.initial_price);
    let mut starts = vec![cold];
    for shift in [0, 2, 4, 6, 8] {
        let frac = 1.0 / (1u64 << shift) as f64;
        starts.push(DualState {
            lambda_t1: 1.0 / (2.0 * LN2 * cfg.p_max_b * frac),
            lambda_t2: 1.0 / (2.0 * LN2 * cfg.p_max_b * frac),
            nu: vec![1.0 / (2.0 * LN2 * cfg.p_max_r * frac); cfg.m],
            mu: 0.0,
        });
    }
    for target in [Objective::Sem, Objective::Esem] {
        for start in &starts {
            let mut duals = start.clone();
            let mut path_seen: std::collections::HashSet<Selection> =
                std::collections::HashSet::new();
            for _ in 0..20 {
                let selected = select_at(groups, &duals, cfg);
                let selection = selection_of(&selected);
                if pool_seen.insert(selection.clone()) {
                    pool.push((selection.clone(), duals.mu));
                }
                if !path_seen.insert(selection.clone()) {
                    break;
                }
                let (_, exact) = polish_selection(groups, &selection, cfg, target, duals.mu);
                if exact == duals {
                    break;
                }
                duals = exact;
            }
        }
    }
}

/// Polishes every pool entry under `objective` and returns the best
/// (first-visit order breaks ties).
fn best_of_pool(
    groups: &GroupSet,
    cfg: &ScenarioConfig,
    objective: Objective,
    pool: &[(Selection, f64)],
) -> Option<(f64, Selection, Recovered, DualState)> {
    let mut best: Option<(f64, Selection, Recovered, DualState)> = None;
    for (selection, mu_hint) in pool {
        let (rec, exact) = polish_selection(groups, selection, cfg, objective, *mu_hint);
        let score = match objective {
            Objective::Sem => rec.sum_rate,
            Objective::Esem => rec.ese,
        };
        if best.as_ref().map(|(s, ..)| score > *s).unwrap_or(true) {
            best = Some((score, selection.clone(), rec, exact));
        }
    }
    best
}

/// Shared engine. `Objective::Sem` pins `mu = 0` and `t = 1`.
///
/// With `warm_start` enabled (the default) the returned allocation is the
/// exact-price refinement of the best selection over a deterministic shared
/// candidate pool: ladder alternation paths plus the selections visited by
/// the subgradient loops of *both* objectives, each loop warm-started at its
/// own pool optimum. The convergence flag and trace describe the requested
/// objective's loop.
pub fn solve(
    cfg: &ScenarioConfig,
    groups: &GroupSet,
    objective: Objective,
    opts: &SolverOptions,
) -> Result<SolveResult, SolverError> {
    let cold = DualState::initial(cfg.m, opts.initial_price);
    if cold.all_zero() {
        return Err(SolverError::ZeroPrices);
    }

    let mut pool: Vec<(Selection, f64)> = Vec::new();
    let mut pool_seen: std::collections::HashSet<Selection> = std::collections::HashSet::new();
    if opts.warm_start {
        seed_pool(groups, cfg, opts, &mut pool, &mut pool_seen);
    }

    let mut requested_run: Option<LoopRun> = None;
    for target in [Objective::Sem, Objective::Esem] {
        if !opts.warm_start && target != objective {
            continue;
        }
        let start = if opts.warm_start {
            best_of_pool(groups, cfg, target, &pool)
                .map(|(_, _, _, duals)| duals)
                .filter(|d| !d.all_zero())
                .unwrap_or_else(|| cold.clone())
        } else {
            cold.clone()
        };
        // The silent exploration loop only feeds the pool, so it stops at
        // the pool horizon; the requested loop runs to its own convergence.
        let loop_opts = if target == objective {
            opts.clone()
        } else {
            SolverOptions {
                max_iterations: opts.max_iterations.min(POOL_HORIZON),
                ..opts.clone()
            }
        };
        let run = run_loop(cfg, groups, target, &loop_opts, start, &mut pool, &mut pool_seen);
        if target == objective {
            requested_run = Some(run);
        }
    }
    let run = requested_run.expect("requested objective always runs");

    let (_, best_selection, recovered, report_duals) =
        best_of_pool(groups, cfg, objective, &pool).expect("pool holds at least one selection");

    let t = match objective {
        Objective::Sem => 1.0,
        Objective::Esem => 1.0 / recovered.total_power,
    };
    Ok(SolveResult {
        objective,
        se: recovered.se,
        ese: recovered.ese,
        sum_rate: recovered.sum_rate,
        total_power: recovered.total_power,
        t,
        converged: run.converged,
        iterations: run.iterations,
        selections: best_selection,
        slack_t1: cfg.p_max_b - recovered.usage.t1,
        slack_t2: cfg.p_max_b - recovered.usage.t2,
        slack_ru: recovered
            .usage
            .ru
            .iter()
            .map(|&u| cfg.p_max_r - u)
            .collect(),
        links: recovered.links,
        duals: report_duals,
        mu_clamped_events: run.mu_clamped_events,
        trace: run.trace,
    })
}

/// Random-grouping, equal-power-allocation baseline: one uniformly random
/// group per subcarrier block, each transmitter splitting its full budget
/// equally across the SMCs it serves in each phase; relay rates take the
/// weaker hop.
pub fn rg_epa(cfg: &ScenarioConfig, groups: &GroupSet, seed: u64) -> SolveResult {
    let mut selection: Vec<Option<usize>> = Vec::with_capacity(cfg.n);
    for (n, per_n) in groups.per_subcarrier.iter().enumerate() {
        if per_n.is_empty() {
            selection.push(None);
        } else {
            let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, &[0x46, n as u64]));
            selection.push(Some(rng.gen_range(0..per_n.len())));
        }
    }

    // Budget splits across all scheduled SMCs, per transmitter and phase.
    let mut count_t1 = 0usize;
    let mut count_t2 = 0usize;
    let mut count_ru = vec![0usize; cfg.m];
    for (n, sel) in selection.iter().enumerate() {
        if let Some(j) = sel {
            let g = &groups.per_subcarrier[n][*j];
            count_t1 += g.direct_t1.len() + g.relays.len();
            count_t2 += g.direct_t2.len();
            for r in &g.relays {
                count_ru[r.rn] += 1;
            }
        }
    }
    let p_t1 = if count_t1 > 0 {
        cfg.p_max_b / count_t1 as f64
    } else {
        0.0
    };
    let p_t2 = if count_t2 > 0 {
        cfg.p_max_b / count_t2 as f64
    } else {
        0.0
    };
    let p_ru: Vec<f64> = count_ru
        .iter()
        .map(|&c| if c > 0 { cfg.p_max_r / c as f64 } else { 0.0 })
        .collect();

    let mut links = Vec::new();
    let mut usage = Usage::zero(cfg.m);
    let mut sum_rate = 0.0;
    for (n, sel) in selection.iter().enumerate() {
        let Some(j) = sel else { continue };
        let g = &groups.per_subcarrier[n][*j];
        for link in &g.direct_t1 {
            let r = rate(link.cnr, p_t1);
            sum_rate += r;
            usage.t1 += p_t1;
            links.push(LinkReport {
                subcarrier: n,
                kind: "direct_t1".into(),
                ue: link.ue,
                rn: None,
                cnr: link.cnr,
                cnr_ru: None,
                power: p_t1,
                power_ru: None,
                rate: r,
            });
        }
        for link in &g.direct_t2 {
            let r = rate(link.cnr, p_t2);
            sum_rate += r;
            usage.t2 += p_t2;
            links.push(LinkReport {
                subcarrier: n,
                kind: "direct_t2".into(),
                ue: link.ue,
                rn: None,
                cnr: link.cnr,
                cnr_ru: None,
                power: p_t2,
                power_ru: None,
                rate: r,
            });
        }
        for relay in &g.relays {
            let pr = p_ru[relay.rn];
            let r = rate(relay.cnr_br, p_t1).min(rate(relay.cnr_ru, pr));
            sum_rate += r;
            usage.t1 += p_t1;
            usage.ru[relay.rn] += pr;
            links.push(LinkReport {
                subcarrier: n,
                kind: "relay".into(),
                ue: relay.ue,
                rn: Some(relay.rn),
                cnr: relay.cnr_br,
                cnr_ru: Some(relay.cnr_ru),
                power: p_t1,
                power_ru: Some(pr),
                rate: r,
            });
        }
    }
    let total = total_power(&usage, cfg);
    SolveResult {
        objective: Objective::Sem,
        se: sum_rate / cfg.n as f64,
        ese: sum_rate / total,
        sum_rate,
        total_power: total,
        t: 1.0,
        converged: true,
        iterations: 0,
        selections: selection,
        slack_t1: cfg.p_max_b - usage.t1,
        slack_t2: cfg.p_max_b - usage.t2,
        slack_ru: usage.ru.iter().map(|&u| cfg.p_max_r - u).collect(),
        links,
        duals: DualState {
            lambda_t1: 0.0,
            lambda_t2: 0.0,
            nu: vec![0.0; cfg.m],
            mu: 0.0,
        },
        mu_clamped_events: 0,
        trace: Vec::new(),
    }
}
