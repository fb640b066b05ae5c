//! Deployment configuration, AP/UE placement and power normalization.
//!
//! All geometry is planar. Random drops are uniform over a square of side
//! `area_side_m` centered at the origin; the CPU sits at `(-cpu_offset_m, 0)`.
//! The clustered (mixed-fronthaul) layout puts the APs on a regular grid with
//! the CPU at the origin instead.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boltzmann constant (J/K).
pub const BOLTZMANN: f64 = 1.380649e-23;
/// Reference noise temperature (K).
pub const NOISE_TEMPERATURE_K: f64 = 290.0;

/// Fronthaul beam search strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BeamSearch {
    Heuristic,
    Exhaustive,
}

/// Flat system configuration. Field names double as config-file keys and
/// `--key=value` CLI overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub num_aps: usize,
    pub num_ues: usize,
    pub cpu_antennas: usize,
    pub phase_bits: u32,
    pub fronthaul_carrier_ghz: f64,
    pub access_carrier_ghz: f64,
    pub fronthaul_bw_hz: f64,
    pub access_bw_hz: f64,
    pub cpu_tx_power_dbm: f64,
    pub ap_tx_power_dbm: f64,
    pub pilot_tx_power_dbm: f64,
    pub noise_figure_db: f64,
    pub pilot_length: usize,
    pub area_side_m: f64,
    pub cpu_offset_m: f64,
    pub realizations: usize,
    pub master_seed: u64,
    pub min_distance_m: f64,
    /// Rows of the AP grid used by the mixed architecture; columns are
    /// `num_aps / grid_rows`.
    pub grid_rows: usize,
    /// Starting point of the group-size search.
    pub group_size_init: usize,
    pub beam_search: BeamSearch,
    /// Relative convergence tolerance of the max-min SINR bisection.
    pub bisection_tol: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            num_aps: 100,
            num_ues: 10,
            cpu_antennas: 128,
            phase_bits: 3,
            fronthaul_carrier_ghz: 28.0,
            access_carrier_ghz: 3.5,
            fronthaul_bw_hz: 2e9,
            access_bw_hz: 20e6,
            cpu_tx_power_dbm: 30.0,
            ap_tx_power_dbm: 10.0,
            pilot_tx_power_dbm: 10.0,
            noise_figure_db: 9.0,
            pilot_length: 10,
            area_side_m: 100.0,
            cpu_offset_m: 100.0,
            realizations: 25,
            master_seed: 0,
            min_distance_m: 1.0,
            grid_rows: 10,
            group_size_init: 10,
            beam_search: BeamSearch::Heuristic,
            bisection_tol: 1e-4,
        }
    }
}

impl SystemConfig {
    /// Parses a flat TOML key-value document; missing keys keep their defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SystemConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_toml_str(&text)
    }

    /// Returns the names of all configuration keys.
    pub fn keys() -> Vec<String> {
        match toml::Table::try_from(SystemConfig::default()) {
            Ok(table) => table.keys().cloned().collect(),
            Err(_) => Vec::new(),
        }
    }

    /// Sets one key from its textual value, e.g. `("num_aps", "50")`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut table = toml::Table::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let Some(current) = table.get(key) else {
            return Err(Error::Config(format!("unknown key `{key}`")));
        };
        let parsed = match current {
            toml::Value::String(_) => toml::Value::String(value.to_string()),
            toml::Value::Float(_) => value
                .parse::<f64>()
                .map(toml::Value::Float)
                .map_err(|e| Error::Config(format!("{key}: {e}")))?,
            toml::Value::Integer(_) => value
                .parse::<i64>()
                .map(toml::Value::Integer)
                .map_err(|e| Error::Config(format!("{key}: {e}")))?,
            _ => return Err(Error::Config(format!("{key}: unsupported value type"))),
        };
        table.insert(key.to_string(), parsed);
        let updated: SystemConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        *self = updated;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_aps", self.num_aps),
            ("num_ues", self.num_ues),
            ("cpu_antennas", self.cpu_antennas),
            ("phase_bits", self.phase_bits as usize),
            ("pilot_length", self.pilot_length),
            ("realizations", self.realizations),
            ("grid_rows", self.grid_rows),
            ("group_size_init", self.group_size_init),
        ];
        for (name, v) in counts {
            if v < 1 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.phase_bits > 16 {
            return Err(Error::Config("phase_bits must be at most 16".into()));
        }
        if !(self.fronthaul_bw_hz > 0.0 && self.access_bw_hz > 0.0) {
            return Err(Error::Config("bandwidths must be positive".into()));
        }
        if !(self.fronthaul_carrier_ghz > 0.0 && self.access_carrier_ghz > 0.0) {
            return Err(Error::Config("carrier frequencies must be positive".into()));
        }
        if self.pilot_length < self.num_ues {
            return Err(Error::Config(format!(
                "pilot_length {} is shorter than num_ues {}; orthogonal pilots need pilot_length >= num_ues",
                self.pilot_length, self.num_ues
            )));
        }
        if !(self.area_side_m >= 0.0) {
            return Err(Error::Config("area_side_m must be nonnegative".into()));
        }
        if !(self.min_distance_m > 0.0) {
            return Err(Error::Config("min_distance_m must be positive".into()));
        }
        if !(self.bisection_tol > 0.0) {
            return Err(Error::Config("bisection_tol must be positive".into()));
        }
        Ok(())
    }
}

/// A planar point in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Distance clamped from below, used before evaluating path loss.
    pub fn clamped_distance(&self, other: &Point, min_distance: f64) -> f64 {
        self.distance(other).max(min_distance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub cpu_position: Point,
    pub ap_positions: Vec<Point>,
    pub ue_positions: Vec<Point>,
}

impl Placement {
    pub fn num_aps(&self) -> usize {
        self.ap_positions.len()
    }

    pub fn num_ues(&self) -> usize {
        self.ue_positions.len()
    }
}

/// Disjoint AP clusters with one leader each. Only leaders have a wireless
/// fronthaul link; the other members are wired to their leader.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLayout {
    clusters: Vec<Vec<usize>>,
    leaders: Vec<usize>,
}

impl ClusterLayout {
    /// Builds a layout, checking that `clusters` partition `0..num_aps` and that
    /// every leader belongs to its cluster.
    pub fn new(clusters: Vec<Vec<usize>>, leaders: Vec<usize>, num_aps: usize) -> Result<Self> {
        if clusters.len() != leaders.len() {
            return Err(Error::Config(format!(
                "{} clusters but {} leaders",
                clusters.len(),
                leaders.len()
            )));
        }
        let mut seen = vec![false; num_aps];
        for (l, cluster) in clusters.iter().enumerate() {
            if cluster.is_empty() {
                return Err(Error::Config(format!("cluster {l} is empty")));
            }
            for &m in cluster {
                if m >= num_aps || seen[m] {
                    return Err(Error::Config(format!(
                        "AP {m} is out of range or assigned to more than one cluster"
                    )));
                }
                seen[m] = true;
            }
            if !cluster.contains(&leaders[l]) {
                return Err(Error::Config(format!(
                    "leader {} is not a member of cluster {l}",
                    leaders[l]
                )));
            }
        }
        if let Some(m) = seen.iter().position(|s| !s) {
            return Err(Error::Config(format!("AP {m} belongs to no cluster")));
        }
        Ok(Self { clusters, leaders })
    }

    /// Every AP is its own cluster and its own leader.
    pub fn singletons(num_aps: usize) -> Self {
        Self {
            clusters: (0..num_aps).map(|m| vec![m]).collect(),
            leaders: (0..num_aps).collect(),
        }
    }

    pub fn clusters(&self) -> &[Vec<usize>] {
        &self.clusters
    }

    pub fn leaders(&self) -> &[usize] {
        &self.leaders
    }

    pub fn num_clusters(&self) -> usize {
        self.clusters.len()
    }
}

/// Transmit powers divided by the receiver noise power of their band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedPowers {
    pub rho_fh: f64,
    pub rho_ac: f64,
    pub rho_t: f64,
}

/// Seed for realization `index`, split from `master_seed` by ChaCha stream id.
///
/// Seeds depend only on `(master_seed, index)`, so realizations can be
/// evaluated in any order or on any number of workers.
pub fn realization_seed(master_seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index as u64);
    rng.next_u64()
}

fn uniform_square(rng: &mut ChaCha8Rng, side: f64) -> Point {
    let x = (rng.gen::<f64>() - 0.5) * side;
    let y = (rng.gen::<f64>() - 0.5) * side;
    Point::new(x, y)
}

/// Drops APs and UEs uniformly over the square area; the CPU is placed at
/// `(-cpu_offset_m, 0)`.
pub fn generate_placement(config: &SystemConfig, seed: u64) -> Placement {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = config.area_side_m;
    let ap_positions = (0..config.num_aps)
        .map(|_| uniform_square(&mut rng, side))
        .collect();
    let ue_positions = (0..config.num_ues)
        .map(|_| uniform_square(&mut rng, side))
        .collect();
    Placement {
        cpu_position: Point::new(-config.cpu_offset_m, 0.0),
        ap_positions,
        ue_positions,
    }
}

/// Regular `rows x cols` AP grid over the area with the CPU at the origin.
///
/// AP `c * rows + r` sits at column `c`, row `r` (cell centers). Each column
/// is one cluster and its leader is the member closest to the CPU, the lowest
/// index winning ties. UEs are dropped uniformly as in [`generate_placement`].
pub fn generate_grid_clusters(
    config: &SystemConfig,
    rows: usize,
    cols: usize,
    seed: u64,
) -> Result<(Placement, ClusterLayout)> {
    if rows == 0 || cols == 0 || rows * cols != config.num_aps {
        return Err(Error::Config(format!(
            "a {rows}x{cols} grid does not hold num_aps = {}",
            config.num_aps
        )));
    }
    let side = config.area_side_m;
    let cpu = Point::new(0.0, 0.0);
    let coord = |i: usize, n: usize| -side / 2.0 + (i as f64 + 0.5) * side / n as f64;

    let mut ap_positions = Vec::with_capacity(rows * cols);
    let mut clusters = Vec::with_capacity(cols);
    let mut leaders = Vec::with_capacity(cols);
    for c in 0..cols {
        let mut members = Vec::with_capacity(rows);
        for r in 0..rows {
            members.push(ap_positions.len());
            ap_positions.push(Point::new(coord(c, cols), coord(r, rows)));
        }
        let mut leader = members[0];
        for &m in &members[1..] {
            if ap_positions[m].distance(&cpu) < ap_positions[leader].distance(&cpu) {
                leader = m;
            }
        }
        clusters.push(members);
        leaders.push(leader);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ue_positions = (0..config.num_ues)
        .map(|_| uniform_square(&mut rng, side))
        .collect();
    let layout = ClusterLayout::new(clusters, leaders, config.num_aps)?;
    Ok((
        Placement {
            cpu_position: cpu,
            ap_positions,
            ue_positions,
        },
        layout,
    ))
}

/// Thermal noise power `k T B F` in watts.
pub fn noise_power_w(bandwidth_hz: f64, noise_figure_db: f64) -> f64 {
    BOLTZMANN * NOISE_TEMPERATURE_K * bandwidth_hz * 10f64.powf(noise_figure_db / 10.0)
}

pub fn noise_power_dbm(bandwidth_hz: f64, noise_figure_db: f64) -> f64 {
    10.0 * (noise_power_w(bandwidth_hz, noise_figure_db) * 1e3).log10()
}

pub fn dbm_to_w(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn normalize_powers(config: &SystemConfig) -> NormalizedPowers {
    let noise_ac = noise_power_w(config.access_bw_hz, config.noise_figure_db);
    let noise_fh = noise_power_w(config.fronthaul_bw_hz, config.noise_figure_db);
    NormalizedPowers {
        rho_fh: dbm_to_w(config.cpu_tx_power_dbm) / noise_fh,
        rho_ac: dbm_to_w(config.ap_tx_power_dbm) / noise_ac,
        rho_t: dbm_to_w(config.pilot_tx_power_dbm) / noise_ac,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::collections::BTreeSet;

    #[test]
    fn defaults_are_valid() {
        SystemConfig::default().validate().unwrap();
    }

    #[test]
    fn placement_matches_default_geometry() {
        let cfg = SystemConfig::default();
        let p = generate_placement(&cfg, 7);
        assert_eq!(p.num_aps(), 100);
        assert_eq!(p.num_ues(), 10);
        assert_eq!(p.cpu_position, Point::new(-100.0, 0.0));
        for pt in p.ap_positions.iter().chain(&p.ue_positions) {
            assert!((-50.0..=50.0).contains(&pt.x) && (-50.0..=50.0).contains(&pt.y));
        }
    }

    #[test]
    fn zero_side_collapses_to_origin() {
        let cfg = SystemConfig {
            area_side_m: 0.0,
            ..SystemConfig::default()
        };
        let p = generate_placement(&cfg, 3);
        assert!(p
            .ap_positions
            .iter()
            .chain(&p.ue_positions)
            .all(|pt| pt.x == 0.0 && pt.y == 0.0));
    }

    #[test]
    fn placement_is_deterministic() {
        let cfg = SystemConfig::default();
        assert_eq!(generate_placement(&cfg, 11), generate_placement(&cfg, 11));
        assert_ne!(generate_placement(&cfg, 11), generate_placement(&cfg, 12));
    }

    #[test]
    fn realization_seeds_are_order_free() {
        let a: Vec<u64> = (0..5).map(|r| realization_seed(9, r)).collect();
        let b: Vec<u64> = (0..5).rev().map(|r| realization_seed(9, r)).collect();
        assert_eq!(a, b.into_iter().rev().collect::<Vec<_>>());
        assert_eq!(a.iter().collect::<BTreeSet<_>>().len(), 5);
    }

    #[test]
    fn grid_10x10_gives_ten_column_clusters() {
        let cfg = SystemConfig::default();
        let (p, layout) = generate_grid_clusters(&cfg, 10, 10, 1).unwrap();
        assert_eq!(p.cpu_position, Point::new(0.0, 0.0));
        assert_eq!(layout.num_clusters(), 10);
        for (cluster, &leader) in layout.clusters().iter().zip(layout.leaders()) {
            assert_eq!(cluster.len(), 10);
            let x0 = p.ap_positions[cluster[0]].x;
            assert!(cluster.iter().all(|&m| p.ap_positions[m].x == x0));
            let d = p.ap_positions[leader].distance(&p.cpu_position);
            assert!(cluster
                .iter()
                .all(|&m| p.ap_positions[m].distance(&p.cpu_position) >= d));
        }
        let all: BTreeSet<usize> = layout.clusters().iter().flatten().copied().collect();
        assert_eq!(all, (0..100).collect());
    }

    #[test]
    fn single_row_grid_is_one_cluster_per_column() {
        let cfg = SystemConfig {
            num_aps: 6,
            ..SystemConfig::default()
        };
        let (_, layout) = generate_grid_clusters(&cfg, 6, 1, 0).unwrap();
        assert_eq!(layout.num_clusters(), 1);
        assert_eq!(layout.clusters()[0], (0..6).collect::<Vec<_>>());
        assert_eq!(layout.leaders().len(), 1);
    }

    #[test]
    fn two_by_two_grid_leaders_by_distance() {
        let cfg = SystemConfig {
            num_aps: 4,
            ..SystemConfig::default()
        };
        let (p, layout) = generate_grid_clusters(&cfg, 2, 2, 0).unwrap();
        // Points (+-25, +-25) are all 25*sqrt(2) from the CPU; the tie goes to
        // the lower index, i.e. the bottom point of each column.
        assert_eq!(p.ap_positions[0], Point::new(-25.0, -25.0));
        assert_eq!(p.ap_positions[3], Point::new(25.0, 25.0));
        assert_eq!(layout.leaders(), &[0, 2]);
        assert_eq!(layout.clusters(), &[vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn grid_shape_must_match_ap_count() {
        let cfg = SystemConfig::default();
        assert!(matches!(
            generate_grid_clusters(&cfg, 5, 10, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn layout_rejects_overlap_and_foreign_leader() {
        assert!(ClusterLayout::new(vec![vec![0, 1], vec![1, 2]], vec![0, 1], 3).is_err());
        assert!(ClusterLayout::new(vec![vec![0, 1], vec![2]], vec![2, 2], 3).is_err());
        assert!(ClusterLayout::new(vec![vec![0], vec![2]], vec![0, 2], 3).is_err());
        assert!(ClusterLayout::new(vec![vec![0, 1], vec![2]], vec![1, 2], 3).is_ok());
    }

    #[test]
    fn noise_power_reference_points() {
        // k*T = -173.975 dBm/Hz; the rounded -174 dBm/Hz figure gives -91.99.
        let n20 = noise_power_dbm(20e6, 9.0);
        assert_relative_eq!(n20, -91.964_887_237_588_29, epsilon = 1e-9);
        assert!((n20 - (-91.99)).abs() < 0.05);
        let n2g = noise_power_dbm(2e9, 9.0);
        assert_relative_eq!(n2g, -71.964_887_237_588_29, epsilon = 1e-9);
        assert_relative_eq!(
            noise_power_dbm(200e6, 9.0) - n20,
            10.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn normalized_powers_table_values() {
        let p = normalize_powers(&SystemConfig::default());
        // 30 dBm over 2 GHz and 10 dBm over 20 MHz give the same SNR scale.
        assert_relative_eq!(p.rho_fh, 1.572_130_972_330_787_7e10, max_relative = 1e-12);
        assert_relative_eq!(p.rho_ac, p.rho_fh, max_relative = 1e-12);
        assert_eq!(p.rho_t, p.rho_ac);
    }

    #[test]
    fn config_overrides_and_file_parsing() {
        let mut cfg = SystemConfig::default();
        cfg.set("num_aps", "50").unwrap();
        cfg.set("fronthaul_bw_hz", "4.8e8").unwrap();
        cfg.set("beam_search", "exhaustive").unwrap();
        assert_eq!(cfg.num_aps, 50);
        assert_eq!(cfg.fronthaul_bw_hz, 4.8e8);
        assert_eq!(cfg.beam_search, BeamSearch::Exhaustive);
        assert!(cfg.set("no_such_key", "1").is_err());
        assert!(cfg.set("num_aps", "many").is_err());

        let parsed = SystemConfig::from_toml_str("num_ues = 4\narea_side_m = 20.0\n").unwrap();
        assert_eq!(parsed.num_ues, 4);
        assert_eq!(parsed.num_aps, 100);
        assert!(SystemConfig::from_toml_str("pilot_length = 2\n").is_err());
        assert!(SystemConfig::keys().contains(&"master_seed".to_string()));
    }

    #[test]
    fn validation_catches_bad_values() {
        let bad = SystemConfig {
            min_distance_m: 0.0,
            ..SystemConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SystemConfig {
            access_bw_hz: 0.0,
            ..SystemConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
