//! Max-min fair power control on the access link under conjugate beamforming.
//!
//! The rate bound for user k served by APs `G_k` is
//!
//! ```text
//!   SINR_k = rho (sum_{m in G_k} sqrt(p_mk) beta_hat_mk)^2
//!            / (1 + rho sum_m beta_mk sum_k' p_mk' beta_hat_mk')
//! ```
//!
//! Interference is summed over every AP, since an AP outside `G_k` still
//! radiates power meant for its own users toward user k.
//!
//! with per-AP constraint `sum_k p_mk beta_hat_mk <= 1`. The optimal common
//! SINR is found by bisection over conic feasibility problems (see
//! [`barrier`] for the cone form used).

mod barrier;

use log::{debug, warn};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::channel::AccessStats;
use crate::error::{Error, Result};

pub use barrier::FeasibilityStatus;

/// Power coefficients `p_mk`, M x K. Entries outside the serving sets are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation {
    pub p: DMatrix<f64>,
}

impl PowerAllocation {
    pub fn zeros(num_aps: usize, num_users: usize) -> Self {
        Self {
            p: DMatrix::zeros(num_aps, num_users),
        }
    }

    /// Largest normalized AP power `sum_k p_mk beta_hat_mk`.
    pub fn max_ap_load(&self, stats: &AccessStats) -> f64 {
        (0..self.p.nrows())
            .map(|m| {
                (0..self.p.ncols())
                    .map(|k| self.p[(m, k)] * stats.beta_hat[(m, k)])
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct FeasibilityOutcome {
    pub status: FeasibilityStatus,
    /// A certifying allocation when feasible.
    pub allocation: Option<PowerAllocation>,
    /// Worst constraint violation of `allocation` (0 when none or satisfied).
    pub residual: f64,
    pub newton_steps: usize,
}

impl FeasibilityOutcome {
    pub fn feasible(&self) -> bool {
        self.status == FeasibilityStatus::Feasible
    }
}

/// Solver counters of one max-min solve.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub bisection_steps: usize,
    pub newton_steps: usize,
    pub indeterminate: usize,
}

#[derive(Debug, Clone)]
pub struct MaxMinSolution {
    pub gamma_star: f64,
    pub allocation: PowerAllocation,
    pub stats: SolverStats,
}

/// SINR of every user; `groups[k]` lists the APs serving user k.
pub fn user_sinr(
    allocation: &PowerAllocation,
    groups: &[Vec<usize>],
    stats: &AccessStats,
    rho: f64,
) -> Vec<f64> {
    let p = &allocation.p;
    let (num_aps, num_users) = p.shape();
    let ap_load: Vec<f64> = (0..num_aps)
        .map(|m| {
            (0..num_users)
                .map(|k| p[(m, k)] * stats.beta_hat[(m, k)])
                .sum()
        })
        .collect();
    groups
        .iter()
        .enumerate()
        .map(|(k, group)| {
            let signal: f64 = group
                .iter()
                .map(|&m| p[(m, k)].max(0.0).sqrt() * stats.beta_hat[(m, k)])
                .sum();
            let interference: f64 = (0..num_aps).map(|m| stats.beta[(m, k)] * ap_load[m]).sum();
            rho * signal * signal / (1.0 + rho * interference)
        })
        .collect()
}

/// Per-user access spectral efficiency `log2(1 + SINR)` in bit/s/Hz.
pub fn access_rates(sinr: &[f64]) -> Vec<f64> {
    sinr.iter().map(|s| (1.0 + s).log2()).collect()
}

fn check_shapes(groups: &[Vec<usize>], stats: &AccessStats) -> Result<()> {
    if groups.len() != stats.num_ues() {
        return Err(Error::Domain(format!(
            "{} serving sets for {} users",
            groups.len(),
            stats.num_ues()
        )));
    }
    if let Some(&m) = groups.iter().flatten().find(|&&m| m >= stats.num_aps()) {
        return Err(Error::Domain(format!(
            "AP index {m} out of range for {} APs",
            stats.num_aps()
        )));
    }
    Ok(())
}

fn allocation_from_w(
    st: &barrier::Structure,
    w: &[f64],
    stats: &AccessStats,
) -> PowerAllocation {
    let mut alloc = PowerAllocation::zeros(stats.num_aps(), stats.num_ues());
    for (v, x) in st.vars.iter().zip(w) {
        alloc.p[(v.ap, v.user)] = x * x / stats.beta_hat[(v.ap, v.user)];
    }
    alloc
}

fn violation(
    alloc: &PowerAllocation,
    gamma: f64,
    groups: &[Vec<usize>],
    stats: &AccessStats,
    rho: f64,
) -> f64 {
    let load = (alloc.max_ap_load(stats) - 1.0).max(0.0);
    let sinr = user_sinr(alloc, groups, stats, rho);
    let short = sinr
        .iter()
        .map(|s| ((gamma - s) / gamma.max(1.0)).max(0.0))
        .fold(0.0, f64::max);
    load.max(short)
}

fn feasible_with(
    st: &barrier::Structure,
    gamma: f64,
    groups: &[Vec<usize>],
    stats: &AccessStats,
    rho: f64,
    tol: f64,
) -> FeasibilityOutcome {
    if gamma <= 0.0 {
        return FeasibilityOutcome {
            status: FeasibilityStatus::Feasible,
            allocation: Some(PowerAllocation::zeros(stats.num_aps(), stats.num_ues())),
            residual: 0.0,
            newton_steps: 0,
        };
    }
    let res = barrier::solve(st, gamma, &barrier::BarrierSettings::default());
    match res.status {
        FeasibilityStatus::Feasible => {
            let alloc = allocation_from_w(st, &res.w, stats);
            let residual = violation(&alloc, gamma, groups, stats, rho);
            let status = if residual <= tol {
                FeasibilityStatus::Feasible
            } else {
                FeasibilityStatus::Indeterminate
            };
            FeasibilityOutcome {
                status,
                allocation: Some(alloc),
                residual,
                newton_steps: res.newton_steps,
            }
        }
        status => FeasibilityOutcome {
            status,
            allocation: None,
            residual: 0.0,
            newton_steps: res.newton_steps,
        },
    }
}

/// Whether all users can reach SINR `gamma` simultaneously.
///
/// `tol` bounds the accepted violation of a returned allocation, relative to
/// `max(gamma, 1)` for SINR constraints and absolute for AP power.
pub fn socp_feasible(
    gamma: f64,
    groups: &[Vec<usize>],
    stats: &AccessStats,
    rho: f64,
    tol: f64,
) -> Result<FeasibilityOutcome> {
    check_shapes(groups, stats)?;
    if !gamma.is_finite() || gamma < 0.0 {
        return Err(Error::Domain(format!("SINR target must be finite and nonnegative, got {gamma}")));
    }
    let st = barrier::Structure::new(groups, stats, rho);
    Ok(feasible_with(&st, gamma, groups, stats, rho, tol))
}

/// Scales each user's power vector by `c_k <= 1` so that every SINR equals
/// `gamma`, given an allocation where every SINR is at least `gamma`.
///
/// With `A_k` the signal term and `B_kj` the interference user j causes to
/// user k at the current powers, the scaled SINRs are
/// `c_k A_k / (1 + sum_j c_j B_kj)`, so the factors solve the linear system
/// `c_k A_k - gamma sum_j B_kj c_j = gamma`. Lower powers keep the per-AP
/// constraints satisfied.
pub fn equalize(
    allocation: &PowerAllocation,
    gamma: f64,
    groups: &[Vec<usize>],
    stats: &AccessStats,
    rho: f64,
) -> Option<PowerAllocation> {
    let p = &allocation.p;
    let k_users = groups.len();
    let mut sys = DMatrix::<f64>::zeros(k_users, k_users);
    for (k, group) in groups.iter().enumerate() {
        let signal: f64 = group
            .iter()
            .map(|&m| p[(m, k)].max(0.0).sqrt() * stats.beta_hat[(m, k)])
            .sum();
        sys[(k, k)] += rho * signal * signal;
        for j in 0..k_users {
            let b: f64 = (0..p.nrows())
                .map(|m| stats.beta[(m, k)] * p[(m, j)] * stats.beta_hat[(m, j)])
                .sum();
            sys[(k, j)] -= gamma * rho * b;
        }
    }
    let rhs = nalgebra::DVector::from_element(k_users, gamma);
    let c = sys.lu().solve(&rhs)?;
    if c.iter().any(|&x| !(x >= 0.0 && x <= 1.0 + 1e-9)) {
        return None;
    }
    let mut out = allocation.clone();
    for (k, &ck) in c.iter().enumerate() {
        let ck = ck.min(1.0);
        out.p.column_mut(k).iter_mut().for_each(|x| *x *= ck);
    }
    let sinr = user_sinr(&out, groups, stats, rho);
    if sinr.iter().any(|s| *s < gamma * (1.0 - 1e-9)) {
        return None;
    }
    Some(out)
}

/// Maximizes the minimum user SINR by bisection on the common target.
///
/// Stops once the bracket width is at most `tol * max(1, lower)`; the returned
/// `gamma_star` is the minimum SINR achieved by the returned allocation, which
/// is equalized so that every user sits at `gamma_star`.
pub fn maxmin_power_bisection(
    groups: &[Vec<usize>],
    stats: &AccessStats,
    rho: f64,
    tol: f64,
) -> Result<MaxMinSolution> {
    check_shapes(groups, stats)?;
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("bisection tolerance must be positive, got {tol}")));
    }
    let st = barrier::Structure::new(groups, stats, rho);
    if let Some(user) = (0..stats.num_ues()).find(|&k| !st.user_has_vars(k)) {
        return Err(Error::DegenerateUser { user });
    }
    let mut solver_stats = SolverStats::default();
    let mut best = PowerAllocation::zeros(stats.num_aps(), stats.num_ues());
    let mut lo = 0.0;
    let mut hi = st
        .interference_free_bound()
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    if stats.num_ues() == 0 {
        hi = 0.0;
    }
    while hi - lo > tol * lo.max(1.0) {
        let mid = 0.5 * (lo + hi);
        let out = feasible_with(&st, mid, groups, stats, rho, 1e-9);
        solver_stats.bisection_steps += 1;
        solver_stats.newton_steps += out.newton_steps;
        match out.status {
            FeasibilityStatus::Feasible => {
                let alloc = out.allocation.expect("feasible outcome carries an allocation");
                let achieved = user_sinr(&alloc, groups, stats, rho)
                    .into_iter()
                    .fold(f64::INFINITY, f64::min);
                lo = achieved.max(mid).min(hi);
                best = alloc;
            }
            FeasibilityStatus::Infeasible => hi = mid,
            FeasibilityStatus::Indeterminate => {
                solver_stats.indeterminate += 1;
                warn!("feasibility at gamma = {mid:.6e} undecided; treating as infeasible");
                hi = mid;
            }
        }
    }
    let mut gamma_star = user_sinr(&best, groups, stats, rho)
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    if !gamma_star.is_finite() {
        gamma_star = 0.0;
    }
    if gamma_star > 0.0 {
        if let Some(eq) = equalize(&best, gamma_star, groups, stats, rho) {
            best = eq;
        }
    }
    debug!(
        "max-min SINR {gamma_star:.6e} after {} bisection steps, {} Newton steps",
        solver_stats.bisection_steps, solver_stats.newton_steps
    );
    Ok(MaxMinSolution {
        gamma_star,
        allocation: best,
        stats: solver_stats,
    })
}
