//! End-to-end rate assembly, single-realization orchestration and Monte Carlo
//! sweeps.
//!
//! One realization fixes the geometry and all large-scale statistics. For a
//! given grouping it solves the access max-min problem, finds a multicast beam
//! for every user group, shares the fronthaul by TDMA and takes the per-user
//! minimum of the access and the delivered fronthaul rate.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::str::FromStr;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::access_power::{access_rates, maxmin_power_bisection, user_sinr, PowerAllocation, SolverStats};
use crate::beamforming::{
    group_min_gain, multicast_beam_exhaustive, multicast_beam_heuristic, PhaseCodebook,
};
use crate::channel::{access_large_scale, build_fronthaul_channels, AccessStats, FronthaulChannelSet};
use crate::error::{Error, Result};
use crate::fronthaul_sched::{harmonic_mean, tdma_capped, tdma_equal_rate, TdmaSchedule};
use crate::grouping::{cluster_top_g, optimize_group_size, top_g_groups, GroupSizeStep};
use crate::scenario::{
    generate_grid_clusters, generate_placement, normalize_powers, realization_seed, BeamSearch,
    ClusterLayout, Placement, SystemConfig,
};

/// Fronthaul architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Every AP has its own wireless fronthaul link.
    Separate,
    /// Wired AP clusters; only cluster leaders use the wireless fronthaul.
    Mixed,
    /// Unconstrained fronthaul, full grouping.
    Fiber,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Separate => "separate",
            Mode::Mixed => "mixed",
            Mode::Fiber => "fiber",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "separate" => Ok(Mode::Separate),
            "mixed" => Ok(Mode::Mixed),
            "fiber" => Ok(Mode::Fiber),
            _ => Err(Error::Config(format!("unknown mode `{s}` (separate, mixed, fiber)"))),
        }
    }
}

/// Fronthaul time-sharing rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tdma {
    /// Equal delivered fronthaul rate for every user.
    Approach1,
    /// Equal delivered rate, capped by what each user's access link can carry.
    Approach2,
}

impl Tdma {
    pub fn as_str(&self) -> &'static str {
        match self {
            Tdma::Approach1 => "approach1",
            Tdma::Approach2 => "approach2",
        }
    }
}

impl fmt::Display for Tdma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tdma {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "approach1" | "1" => Ok(Tdma::Approach1),
            "approach2" | "2" => Ok(Tdma::Approach2),
            _ => Err(Error::Config(format!("unknown TDMA rule `{s}` (approach1, approach2)"))),
        }
    }
}

/// How the group size of a realization is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupPolicy {
    /// Group-size iteration from `group_size_init`.
    Optimize,
    Fixed(usize),
}

/// `min(B_ac R_ac_k, t_k B_fh R_fh_k)` per user, in bit/s.
pub fn end_to_end_rates(
    access_rates: &[f64],
    group_rates: &[f64],
    schedule: &TdmaSchedule,
    access_bw_hz: f64,
    fronthaul_bw_hz: f64,
) -> Vec<f64> {
    access_rates
        .iter()
        .zip(group_rates)
        .zip(&schedule.t)
        .map(|((ra, rf), t)| (access_bw_hz * ra).min(t * fronthaul_bw_hz * rf))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RealizationResult {
    pub seed: u64,
    pub mode: Mode,
    /// `None` in fiber mode.
    pub tdma: Option<Tdma>,
    pub num_aps: usize,
    pub num_users: usize,
    pub cpu_antennas: usize,
    pub fronthaul_bw_hz: f64,
    /// Group size used: APs per user, or clusters per user in mixed mode.
    pub group_size: usize,
    pub gamma_star: f64,
    pub access_sinr: Vec<f64>,
    pub per_user_access_bps: Vec<f64>,
    /// Delivered fronthaul rate `t_k B_fh R_fh_k`; infinite in fiber mode.
    pub per_user_fronthaul_bps: Vec<f64>,
    pub per_user_end_to_end_bps: Vec<f64>,
    /// Multicast group rates in bit/s/Hz (empty in fiber mode).
    pub group_rates: Vec<f64>,
    pub schedule: Option<TdmaSchedule>,
    pub allocation: PowerAllocation,
    pub access_groups: Vec<Vec<usize>>,
    pub fronthaul_groups: Vec<Vec<usize>>,
    pub solver: SolverStats,
    pub group_size_history: Vec<GroupSizeStep>,
}

impl RealizationResult {
    pub fn sum_access_bps(&self) -> f64 {
        self.per_user_access_bps.iter().sum()
    }

    pub fn sum_fronthaul_bps(&self) -> f64 {
        self.per_user_fronthaul_bps.iter().sum()
    }

    pub fn sum_end_to_end_bps(&self) -> f64 {
        self.per_user_end_to_end_bps.iter().sum()
    }

    pub fn min_end_to_end_bps(&self) -> f64 {
        self.per_user_end_to_end_bps
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Fronthaul capacity under equal delivered rates, `B_fh HM(R_fh)`.
    pub fn fronthaul_capacity_bps(&self) -> f64 {
        if self.group_rates.is_empty() {
            f64::INFINITY
        } else {
            self.fronthaul_bw_hz * harmonic_mean(&self.group_rates)
        }
    }
}

struct AccessOutcome {
    gamma_star: f64,
    sinr: Vec<f64>,
    rates: Vec<f64>,
    allocation: PowerAllocation,
    stats: SolverStats,
}

/// Geometry and large-scale statistics of one drop, with solver caches.
///
/// The caches make repeated evaluations at different group sizes or fronthaul
/// bandwidths cheap; a realization is meant to be used from one thread.
pub struct Realization {
    pub config: SystemConfig,
    pub seed: u64,
    pub placement: Placement,
    pub layout: ClusterLayout,
    pub fronthaul: FronthaulChannelSet,
    pub stats: AccessStats,
    codebook: PhaseCodebook,
    access_cache: RefCell<HashMap<Vec<Vec<usize>>, Rc<AccessOutcome>>>,
    beam_cache: RefCell<HashMap<Vec<usize>, f64>>,
}

impl Realization {
    /// Draws the geometry of `mode` from `seed`.
    pub fn generate(config: &SystemConfig, seed: u64, mode: Mode) -> Result<Self> {
        config.validate()?;
        match mode {
            Mode::Mixed => {
                let rows = config.grid_rows;
                if rows == 0 || config.num_aps % rows != 0 {
                    return Err(Error::Config(format!(
                        "mixed mode needs num_aps ({}) divisible by grid_rows ({rows})",
                        config.num_aps
                    )));
                }
                let (placement, layout) =
                    generate_grid_clusters(config, rows, config.num_aps / rows, seed)?;
                Self::from_placement(config, seed, placement, layout)
            }
            Mode::Separate | Mode::Fiber => {
                let placement = generate_placement(config, seed);
                let layout = ClusterLayout::singletons(config.num_aps);
                Self::from_placement(config, seed, placement, layout)
            }
        }
    }

    pub fn from_placement(
        config: &SystemConfig,
        seed: u64,
        placement: Placement,
        layout: ClusterLayout,
    ) -> Result<Self> {
        let powers = normalize_powers(config);
        let fronthaul = build_fronthaul_channels(&placement, config)?;
        let beta = access_large_scale(&placement, config)?;
        let stats = AccessStats::new(beta, powers.rho_t, config.pilot_length);
        let codebook = PhaseCodebook::new(config.cpu_antennas, config.phase_bits)?;
        Ok(Self {
            config: config.clone(),
            seed,
            placement,
            layout,
            fronthaul,
            stats,
            codebook,
            access_cache: RefCell::new(HashMap::new()),
            beam_cache: RefCell::new(HashMap::new()),
        })
    }

    fn rho_ac(&self) -> f64 {
        normalize_powers(&self.config).rho_ac
    }

    fn rho_fh(&self, fronthaul_bw_hz: f64) -> f64 {
        let mut cfg = self.config.clone();
        cfg.fronthaul_bw_hz = fronthaul_bw_hz;
        normalize_powers(&cfg).rho_fh
    }

    fn access(&self, groups: &[Vec<usize>]) -> Result<Rc<AccessOutcome>> {
        if let Some(hit) = self.access_cache.borrow().get(groups) {
            return Ok(Rc::clone(hit));
        }
        let rho = self.rho_ac();
        let sol = maxmin_power_bisection(groups, &self.stats, rho, self.config.bisection_tol)?;
        let sinr = user_sinr(&sol.allocation, groups, &self.stats, rho);
        let outcome = Rc::new(AccessOutcome {
            gamma_star: sol.gamma_star,
            rates: access_rates(&sinr),
            sinr,
            allocation: sol.allocation,
            stats: sol.stats,
        });
        self.access_cache
            .borrow_mut()
            .insert(groups.to_vec(), Rc::clone(&outcome));
        Ok(outcome)
    }

    /// Best multicast gain `min_m |h_m^H f|^2` found for a fronthaul group.
    fn multicast_gain(&self, group: &[usize]) -> Result<f64> {
        if let Some(&g) = self.beam_cache.borrow().get(group) {
            return Ok(g);
        }
        // The beam choice does not depend on the SNR scale.
        let sol = match self.config.beam_search {
            BeamSearch::Heuristic => multicast_beam_heuristic(group, &self.fronthaul, &self.codebook, 1.0)?,
            BeamSearch::Exhaustive => multicast_beam_exhaustive(group, &self.fronthaul, &self.codebook, 1.0)?,
        };
        let gain = group_min_gain(group, &self.fronthaul, &sol.beam);
        self.beam_cache.borrow_mut().insert(group.to_vec(), gain);
        Ok(gain)
    }

    fn groups_at(&self, mode: Mode, g: usize) -> Result<(Vec<Vec<usize>>, Vec<Vec<usize>>)> {
        match mode {
            Mode::Separate => {
                let grouping = top_g_groups(&self.stats.beta, g)?;
                let groups = grouping.groups().to_vec();
                Ok((groups.clone(), groups))
            }
            Mode::Mixed => {
                let cg = cluster_top_g(&self.stats.beta, &self.layout, g)?;
                Ok((cg.access_groups, cg.fronthaul_groups))
            }
            Mode::Fiber => {
                let all: Vec<usize> = (0..self.config.num_aps).collect();
                Ok((vec![all; self.config.num_ues], Vec::new()))
            }
        }
    }

    /// Largest admissible group size of `mode`.
    pub fn max_group_size(&self, mode: Mode) -> usize {
        match mode {
            Mode::Mixed => self.layout.num_clusters(),
            Mode::Separate | Mode::Fiber => self.config.num_aps,
        }
    }

    fn evaluate_at(&self, mode: Mode, tdma: Tdma, fronthaul_bw_hz: f64, g: usize) -> Result<RealizationResult> {
        let (access_groups, fronthaul_groups) = self.groups_at(mode, g)?;
        let access = self.access(&access_groups)?;
        let access_bw = self.config.access_bw_hz;
        let per_user_access_bps: Vec<f64> = access.rates.iter().map(|r| access_bw * r).collect();

        let (group_rates, schedule, per_user_fronthaul_bps, per_user_end_to_end_bps, tdma) = if mode == Mode::Fiber {
            let k = per_user_access_bps.len();
            (
                Vec::new(),
                None,
                vec![f64::INFINITY; k],
                per_user_access_bps.clone(),
                None,
            )
        } else {
            let rho_fh = self.rho_fh(fronthaul_bw_hz);
            let group_rates = fronthaul_groups
                .iter()
                .map(|grp| Ok((1.0 + rho_fh * self.multicast_gain(grp)?).log2()))
                .collect::<Result<Vec<f64>>>()?;
            let schedule = match tdma {
                Tdma::Approach1 => tdma_equal_rate(&group_rates)?,
                Tdma::Approach2 => {
                    let caps: Vec<f64> = access
                        .rates
                        .iter()
                        .zip(&group_rates)
                        .map(|(ra, rf)| (access_bw * ra / (fronthaul_bw_hz * rf)).max(0.0))
                        .collect();
                    tdma_capped(&group_rates, &caps)?
                }
            };
            let fronthaul_bps: Vec<f64> = schedule
                .t
                .iter()
                .zip(&group_rates)
                .map(|(t, r)| t * fronthaul_bw_hz * r)
                .collect();
            let e2e = end_to_end_rates(&access.rates, &group_rates, &schedule, access_bw, fronthaul_bw_hz);
            (group_rates, Some(schedule), fronthaul_bps, e2e, Some(tdma))
        };

        Ok(RealizationResult {
            seed: self.seed,
            mode,
            tdma,
            num_aps: self.config.num_aps,
            num_users: self.config.num_ues,
            cpu_antennas: self.config.cpu_antennas,
            fronthaul_bw_hz,
            group_size: g,
            gamma_star: access.gamma_star,
            access_sinr: access.sinr.clone(),
            per_user_access_bps,
            per_user_fronthaul_bps,
            per_user_end_to_end_bps,
            group_rates,
            schedule,
            allocation: access.allocation.clone(),
            access_groups,
            fronthaul_groups,
            solver: access.stats.clone(),
            group_size_history: Vec::new(),
        })
    }

    /// Evaluates the realization under `mode` and `tdma` at the given fronthaul
    /// bandwidth. Fiber mode ignores the policy and serves every user from
    /// every AP.
    pub fn evaluate(
        &self,
        mode: Mode,
        tdma: Tdma,
        fronthaul_bw_hz: f64,
        policy: GroupPolicy,
    ) -> Result<RealizationResult> {
        if mode == Mode::Fiber {
            return self.evaluate_at(mode, tdma, fronthaul_bw_hz, self.config.num_aps);
        }
        let upper = self.max_group_size(mode);
        match policy {
            GroupPolicy::Fixed(g) => self.evaluate_at(mode, tdma, fronthaul_bw_hz, g),
            GroupPolicy::Optimize => {
                let search = optimize_group_size(
                    |g| {
                        let r = self.evaluate_at(mode, tdma, fronthaul_bw_hz, g)?;
                        Ok((r.sum_access_bps(), r.fronthaul_capacity_bps()))
                    },
                    self.config.group_size_init,
                    (1, upper),
                )?;
                let mut result = self.evaluate_at(mode, tdma, fronthaul_bw_hz, search.g_star)?;
                result.group_size_history = search.history;
                Ok(result)
            }
        }
    }
}

/// One realization with the group size chosen by the group-size iteration.
pub fn run_realization(config: &SystemConfig, seed: u64, mode: Mode, tdma: Tdma) -> Result<RealizationResult> {
    Realization::generate(config, seed, mode)
        .and_then(|r| r.evaluate(mode, tdma, config.fronthaul_bw_hz, GroupPolicy::Optimize))
}

/// Axes of a Monte Carlo sweep. Empty lists fall back to the config value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAxes {
    pub modes: Vec<Mode>,
    pub tdma: Tdma,
    /// Fixed group sizes; empty means the group-size iteration picks G.
    pub group_sizes: Vec<usize>,
    pub fronthaul_bws_hz: Vec<f64>,
    pub num_aps: Vec<usize>,
}

impl Default for SweepAxes {
    fn default() -> Self {
        Self {
            modes: vec![Mode::Separate, Mode::Fiber],
            tdma: Tdma::Approach2,
            group_sizes: Vec::new(),
            fronthaul_bws_hz: Vec::new(),
            num_aps: Vec::new(),
        }
    }
}

/// Mean results of one sweep point over all realizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub mode: Mode,
    pub tdma: Option<Tdma>,
    pub num_aps: usize,
    pub fronthaul_bw_hz: f64,
    /// Fixed group size, or `None` when chosen per realization.
    pub group_size: Option<usize>,
    pub realizations: usize,
    pub mean_group_size: f64,
    pub mean_sum_access_bps: f64,
    /// Delivered fronthaul (infinite in fiber mode).
    pub mean_sum_fronthaul_bps: f64,
    /// `B_fh HM(R_fh)` (infinite in fiber mode).
    pub mean_fronthaul_capacity_bps: f64,
    pub mean_sum_end_to_end_bps: f64,
    pub mean_min_end_to_end_bps: f64,
    pub mean_gamma_star: f64,
    pub indeterminate_solves: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub master_seed: u64,
    pub realizations: usize,
    pub axes: SweepAxes,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn point(&self, mode: Mode, num_aps: usize, bw: f64, group_size: Option<usize>) -> Option<&SweepPoint> {
        self.points.iter().find(|p| {
            p.mode == mode && p.num_aps == num_aps && p.fronthaul_bw_hz == bw && p.group_size == group_size
        })
    }
}

#[derive(Serialize)]
struct CsvRow<'a> {
    realization_id: usize,
    seed: u64,
    mode: &'a str,
    tdma: &'a str,
    #[serde(rename = "M")]
    m: usize,
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "G")]
    g: usize,
    fronthaul_bw_hz: f64,
    user_id: usize,
    access_bps: f64,
    fronthaul_bps: f64,
    end_to_end_bps: f64,
    t_k: f64,
    gamma_star: f64,
}

/// Point key in emission order.
#[derive(Debug, Clone, Copy, PartialEq)]
struct PointKey {
    mode: Mode,
    num_aps: usize,
    bw: f64,
    group_size: Option<usize>,
}

fn point_keys(config: &SystemConfig, axes: &SweepAxes) -> Vec<PointKey> {
    let ms = if axes.num_aps.is_empty() { vec![config.num_aps] } else { axes.num_aps.clone() };
    let bws = if axes.fronthaul_bws_hz.is_empty() {
        vec![config.fronthaul_bw_hz]
    } else {
        axes.fronthaul_bws_hz.clone()
    };
    let gs: Vec<Option<usize>> = if axes.group_sizes.is_empty() {
        vec![None]
    } else {
        axes.group_sizes.iter().map(|&g| Some(g)).collect()
    };
    let mut keys = Vec::new();
    for &mode in &axes.modes {
        for &num_aps in &ms {
            for &bw in &bws {
                if mode == Mode::Fiber {
                    keys.push(PointKey { mode, num_aps, bw, group_size: None });
                } else {
                    for &g in &gs {
                        keys.push(PointKey { mode, num_aps, bw, group_size: g });
                    }
                }
            }
        }
    }
    keys
}

/// Geometry of the fiber baseline in a sweep: the AP grid when mixed mode is
/// the only fronthaul-limited mode, random drops otherwise.
pub fn fiber_geometry(modes: &[Mode]) -> Mode {
    if modes.contains(&Mode::Mixed) && !modes.contains(&Mode::Separate) {
        Mode::Mixed
    } else {
        Mode::Separate
    }
}

/// Runs every sweep point on `config.realizations` drops.
///
/// Realization `r` uses seed `realization_seed(master_seed, r)` at every point,
/// so points are compared on matched geometry. Results are ordered by point,
/// then realization, independent of the number of worker threads.
pub fn run_sweep(config: &SystemConfig, axes: &SweepAxes) -> Result<(SweepResult, Vec<Vec<RealizationResult>>)> {
    config.validate()?;
    if axes.modes.is_empty() {
        return Err(Error::Config("sweep needs at least one mode".into()));
    }
    let keys = point_keys(config, axes);
    let fiber_geometry = fiber_geometry(&axes.modes);
    let geometry_of = |mode: Mode| if mode == Mode::Fiber { fiber_geometry } else { mode };
    // One task per (geometry, M, realization); bandwidth and G reuse its caches.
    let mut tasks: Vec<(Mode, usize, usize)> = Vec::new();
    for &mode in &axes.modes {
        let geometry = geometry_of(mode);
        for key in keys.iter().filter(|k| k.mode == mode) {
            for r in 0..config.realizations {
                let task = (geometry, key.num_aps, r);
                if !tasks.contains(&task) {
                    tasks.push(task);
                }
            }
        }
    }

    let outputs: Vec<Vec<(PointKey, RealizationResult)>> = tasks
        .par_iter()
        .map(|&(geometry, num_aps, r)| {
            let seed = realization_seed(config.master_seed, r);
            let mut cfg = config.clone();
            cfg.num_aps = num_aps;
            let run = || -> Result<Vec<(PointKey, RealizationResult)>> {
                let real = Realization::generate(&cfg, seed, geometry)?;
                let mut out = Vec::new();
                for key in keys
                    .iter()
                    .filter(|k| k.num_aps == num_aps && geometry_of(k.mode) == geometry)
                {
                    let policy = key.group_size.map_or(GroupPolicy::Optimize, GroupPolicy::Fixed);
                    out.push((*key, real.evaluate(key.mode, axes.tdma, key.bw, policy)?));
                }
                Ok(out)
            };
            run().map_err(|e| Error::Realization {
                realization: r,
                seed,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut per_point: Vec<Vec<RealizationResult>> = vec![Vec::new(); keys.len()];
    for out in outputs {
        for (key, result) in out {
            let idx = keys.iter().position(|k| *k == key).expect("result belongs to a sweep point");
            per_point[idx].push(result);
        }
    }

    let points = keys
        .iter()
        .zip(&per_point)
        .map(|(key, results)| summarize(key, axes.tdma, results))
        .collect();
    let summary = SweepResult {
        master_seed: config.master_seed,
        realizations: config.realizations,
        axes: axes.clone(),
        points,
    };
    Ok((summary, per_point))
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn summarize(key: &PointKey, tdma: Tdma, results: &[RealizationResult]) -> SweepPoint {
    SweepPoint {
        mode: key.mode,
        tdma: (key.mode != Mode::Fiber).then_some(tdma),
        num_aps: key.num_aps,
        fronthaul_bw_hz: key.bw,
        group_size: key.group_size,
        realizations: results.len(),
        mean_group_size: mean(results.iter().map(|r| r.group_size as f64)),
        mean_sum_access_bps: mean(results.iter().map(RealizationResult::sum_access_bps)),
        mean_sum_fronthaul_bps: mean(results.iter().map(RealizationResult::sum_fronthaul_bps)),
        mean_fronthaul_capacity_bps: mean(results.iter().map(RealizationResult::fronthaul_capacity_bps)),
        mean_sum_end_to_end_bps: mean(results.iter().map(RealizationResult::sum_end_to_end_bps)),
        mean_min_end_to_end_bps: mean(results.iter().map(RealizationResult::min_end_to_end_bps)),
        mean_gamma_star: mean(results.iter().map(|r| r.gamma_star)),
        indeterminate_solves: results.iter().map(|r| r.solver.indeterminate).sum(),
    }
}

/// Writes one CSV row per user of every realization result.
pub fn write_rates_csv<W: Write>(out: W, per_point: &[Vec<RealizationResult>]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for results in per_point {
        for (r, res) in results.iter().enumerate() {
            for k in 0..res.num_users {
                wtr.serialize(CsvRow {
                    realization_id: r,
                    seed: res.seed,
                    mode: res.mode.as_str(),
                    tdma: res.tdma.map_or("none", |t| t.as_str()),
                    m: res.num_aps,
                    k: res.num_users,
                    n: res.cpu_antennas,
                    g: res.group_size,
                    fronthaul_bw_hz: res.fronthaul_bw_hz,
                    user_id: k,
                    access_bps: res.per_user_access_bps[k],
                    fronthaul_bps: res.per_user_fronthaul_bps[k],
                    end_to_end_bps: res.per_user_end_to_end_bps[k],
                    t_k: res.schedule.as_ref().map_or(f64::NAN, |s| s.t[k]),
                    gamma_star: res.gamma_star,
                })?;
            }
        }
    }
    wtr.flush().map_err(|e| Error::io("rates csv", e))?;
    Ok(())
}

/// File names written by [`sweep_and_emit`] inside the output directory.
pub const RATES_CSV: &str = "rates.csv";
pub const SUMMARY_JSON: &str = "summary.json";

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Runs a sweep and writes `rates.csv` and `summary.json` into `out_dir`.
///
/// Both files are created before any computation so an unwritable location
/// fails fast.
pub fn sweep_and_emit(config: &SystemConfig, axes: &SweepAxes, out_dir: &Path) -> Result<(SweepResult, PathBuf, PathBuf)> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let csv_path = out_dir.join(RATES_CSV);
    let json_path = out_dir.join(SUMMARY_JSON);
    let csv_file = create(&csv_path)?;
    let mut json_file = create(&json_path)?;

    info!(
        "sweep: {} realizations, modes {:?}, G {:?}, bandwidths {:?}, M {:?}",
        config.realizations, axes.modes, axes.group_sizes, axes.fronthaul_bws_hz, axes.num_aps
    );
    let (summary, per_point) = run_sweep(config, axes)?;
    write_rates_csv(csv_file, &per_point)?;
    serde_json::to_writer_pretty(&mut json_file, &summary)?;
    json_file
        .write_all(b"\n")
        .and_then(|_| json_file.flush())
        .map_err(|e| Error::io(json_path.display().to_string(), e))?;
    Ok((summary, csv_path, json_path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small_config() -> SystemConfig {
        SystemConfig {
            num_aps: 12,
            num_ues: 3,
            cpu_antennas: 16,
            grid_rows: 3,
            group_size_init: 3,
            realizations: 2,
            ..SystemConfig::default()
        }
    }

    #[test]
    fn end_to_end_is_the_smaller_side() {
        let s = TdmaSchedule { t: vec![0.1, 0.0], eta: 0.1 };
        let r = end_to_end_rates(&[5.0, 5.0], &[1.0, 1.0], &s, 20e6, 2e9);
        assert_relative_eq!(r[0], 100e6);
        assert_eq!(r[1], 0.0);
    }

    #[test]
    fn mode_and_tdma_round_trip() {
        for m in [Mode::Separate, Mode::Mixed, Mode::Fiber] {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
        }
        for t in [Tdma::Approach1, Tdma::Approach2] {
            assert_eq!(t.as_str().parse::<Tdma>().unwrap(), t);
        }
        assert!("wired".parse::<Mode>().is_err());
    }

    #[test]
    fn fiber_reports_access_only() {
        let cfg = small_config();
        let r = run_realization(&cfg, 3, Mode::Fiber, Tdma::Approach2).unwrap();
        assert!(r.per_user_fronthaul_bps.iter().all(|f| f.is_infinite()));
        assert_eq!(r.per_user_end_to_end_bps, r.per_user_access_bps);
        assert_eq!(r.group_size, cfg.num_aps);
    }

    #[test]
    fn approach2_never_exceeds_access() {
        let cfg = small_config();
        for mode in [Mode::Separate, Mode::Mixed] {
            let r = run_realization(&cfg, 9, mode, Tdma::Approach2).unwrap();
            for k in 0..cfg.num_ues {
                assert!(r.per_user_fronthaul_bps[k] <= r.per_user_access_bps[k] * (1.0 + 1e-9));
                assert_eq!(
                    r.per_user_end_to_end_bps[k],
                    r.per_user_access_bps[k].min(r.per_user_fronthaul_bps[k])
                );
            }
            assert!(!r.group_size_history.is_empty());
        }
    }

    #[test]
    fn unwritable_output_fails_before_work() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, b"x").unwrap();
        let err = sweep_and_emit(&small_config(), &SweepAxes::default(), &blocker.join("out")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
