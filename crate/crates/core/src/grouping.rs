//! User-centric AP selection and the group-size search.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::ClusterLayout;

/// Serving sets `G_k` (sorted AP indices) and their inverse `U_m`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grouping {
    groups: Vec<Vec<usize>>,
    served_users: Vec<Vec<usize>>,
}

impl Grouping {
    pub fn from_groups(mut groups: Vec<Vec<usize>>, num_aps: usize) -> Result<Self> {
        let mut served_users = vec![Vec::new(); num_aps];
        for (k, group) in groups.iter_mut().enumerate() {
            group.sort_unstable();
            group.dedup();
            if group.is_empty() {
                return Err(Error::Domain(format!("user {k} has an empty serving set")));
            }
            for &m in group.iter() {
                if m >= num_aps {
                    return Err(Error::Domain(format!("AP index {m} out of range for {num_aps} APs")));
                }
                served_users[m].push(k);
            }
        }
        Ok(Self { groups, served_users })
    }

    /// Every user served by every AP.
    pub fn full(num_aps: usize, num_users: usize) -> Self {
        Self {
            groups: vec![(0..num_aps).collect(); num_users],
            served_users: vec![(0..num_users).collect(); num_aps],
        }
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn served_users(&self) -> &[Vec<usize>] {
        &self.served_users
    }

    pub fn num_users(&self) -> usize {
        self.groups.len()
    }

    pub fn num_aps(&self) -> usize {
        self.served_users.len()
    }
}

/// Indices of the `g` largest entries, ties to the lower index; sorted ascending.
fn top_indices(values: impl Iterator<Item = f64>, g: usize) -> Vec<usize> {
    let mut order: Vec<(usize, f64)> = values.enumerate().collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut top: Vec<usize> = order.into_iter().take(g).map(|(i, _)| i).collect();
    top.sort_unstable();
    top
}

/// Each user is served by its `g` strongest APs by large-scale gain.
pub fn top_g_groups(beta: &DMatrix<f64>, g: usize) -> Result<Grouping> {
    let (num_aps, num_users) = beta.shape();
    if g == 0 || g > num_aps {
        return Err(Error::Domain(format!("group size {g} outside [1, {num_aps}]")));
    }
    let groups = (0..num_users)
        .map(|k| top_indices(beta.column(k).iter().copied(), g))
        .collect();
    Grouping::from_groups(groups, num_aps)
}

/// Cluster-level selection for the mixed fronthaul architecture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterGrouping {
    pub cluster_groups: Vec<Vec<usize>>,
    /// Leader APs of the selected clusters; the multicast targets.
    pub fronthaul_groups: Vec<Vec<usize>>,
    /// All APs of the selected clusters; the access serving sets.
    pub access_groups: Vec<Vec<usize>>,
}

impl ClusterGrouping {
    pub fn access_grouping(&self, num_aps: usize) -> Result<Grouping> {
        Grouping::from_groups(self.access_groups.clone(), num_aps)
    }
}

/// Each user picks the `g` clusters with the largest summed gain
/// `sum_{m in C_l} beta_mk`.
pub fn cluster_top_g(beta: &DMatrix<f64>, layout: &ClusterLayout, g: usize) -> Result<ClusterGrouping> {
    let num_clusters = layout.num_clusters();
    if g == 0 || g > num_clusters {
        return Err(Error::Domain(format!("cluster count {g} outside [1, {num_clusters}]")));
    }
    let mut cluster_groups = Vec::with_capacity(beta.ncols());
    let mut fronthaul_groups = Vec::with_capacity(beta.ncols());
    let mut access_groups = Vec::with_capacity(beta.ncols());
    for k in 0..beta.ncols() {
        let sums = layout
            .clusters()
            .iter()
            .map(|c| c.iter().map(|&m| beta[(m, k)]).sum::<f64>());
        let chosen = top_indices(sums, g);
        let mut leaders: Vec<usize> = chosen.iter().map(|&l| layout.leaders()[l]).collect();
        leaders.sort_unstable();
        let members: BTreeSet<usize> = chosen
            .iter()
            .flat_map(|&l| layout.clusters()[l].iter().copied())
            .collect();
        cluster_groups.push(chosen);
        fronthaul_groups.push(leaders);
        access_groups.push(members.into_iter().collect());
    }
    Ok(ClusterGrouping {
        cluster_groups,
        fronthaul_groups,
        access_groups,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSizeStep {
    pub group_size: usize,
    pub sum_access: f64,
    pub sum_fronthaul: f64,
}

impl GroupSizeStep {
    pub fn score(&self) -> f64 {
        self.sum_access.min(self.sum_fronthaul)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSizeSearch {
    pub g_star: usize,
    pub history: Vec<GroupSizeStep>,
}

/// Walks G up while the fronthaul sum rate is at least the access sum rate and
/// down otherwise, until a size repeats or `2 * upper` steps are taken.
///
/// `eval(G)` returns `(sum access rate, sum fronthaul rate)`. The result is the
/// visited G with the largest `min(access, fronthaul)`, first visit winning ties.
pub fn optimize_group_size<F>(mut eval: F, g_init: usize, bounds: (usize, usize)) -> Result<GroupSizeSearch>
where
    F: FnMut(usize) -> Result<(f64, f64)>,
{
    let (lo, hi) = bounds;
    if lo == 0 || lo > hi {
        return Err(Error::Domain(format!("invalid group-size bounds [{lo}, {hi}]")));
    }
    let mut g = g_init.clamp(lo, hi);
    let mut history: Vec<GroupSizeStep> = Vec::new();
    let max_steps = 2 * hi;
    while history.len() < max_steps && !history.iter().any(|s| s.group_size == g) {
        let (sum_access, sum_fronthaul) = eval(g)?;
        history.push(GroupSizeStep {
            group_size: g,
            sum_access,
            sum_fronthaul,
        });
        g = if sum_fronthaul >= sum_access {
            (g + 1).min(hi)
        } else {
            g.saturating_sub(1).max(lo)
        };
    }
    let mut best = &history[0];
    for step in &history[1..] {
        if step.score() > best.score() {
            best = step;
        }
    }
    Ok(GroupSizeSearch {
        g_star: best.group_size,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn inverse_consistent(g: &Grouping) -> bool {
        g.groups().iter().enumerate().all(|(k, grp)| {
            grp.iter().all(|&m| g.served_users()[m].contains(&k))
        }) && g.served_users().iter().enumerate().all(|(m, users)| {
            users.iter().all(|&k| g.groups()[k].contains(&m))
        })
    }

    #[test]
    fn top_g_examples() {
        let beta = DMatrix::from_column_slice(3, 1, &[0.5, 0.2, 0.9]);
        let g = top_g_groups(&beta, 2).unwrap();
        assert_eq!(g.groups()[0], vec![0, 2]);

        let beta = DMatrix::from_column_slice(6, 1, &[0.1, 0.7, 0.3, 0.2, 0.7, 0.0]);
        let g = top_g_groups(&beta, 1).unwrap();
        assert_eq!(g.groups()[0], vec![1]);

        let beta = DMatrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64 + 1.0);
        let g = top_g_groups(&beta, 4).unwrap();
        assert!(g.groups().iter().all(|grp| grp == &vec![0, 1, 2, 3]));
        assert!(g.served_users().iter().all(|u| u == &vec![0, 1, 2]));
        assert!(inverse_consistent(&g));

        assert!(top_g_groups(&beta, 0).is_err());
        assert!(top_g_groups(&beta, 5).is_err());
    }

    #[test]
    fn cluster_examples() {
        let beta = DMatrix::from_column_slice(3, 1, &[0.1, 0.2, 0.5]);
        let layout = ClusterLayout::new(vec![vec![0, 1], vec![2]], vec![0, 2], 3).unwrap();
        let cg = cluster_top_g(&beta, &layout, 1).unwrap();
        assert_eq!(cg.cluster_groups[0], vec![1]);
        assert_eq!(cg.fronthaul_groups[0], vec![2]);
        assert_eq!(cg.access_groups[0], vec![2]);

        let cg = cluster_top_g(&beta, &layout, 2).unwrap();
        assert_eq!(cg.access_groups[0], vec![0, 1, 2]);
        assert_eq!(cg.fronthaul_groups[0], vec![0, 2]);
        assert!(cluster_top_g(&beta, &layout, 3).is_err());
    }

    #[test]
    fn singleton_clusters_match_top_g() {
        let beta = DMatrix::from_fn(7, 4, |i, j| ((i * 13 + j * 7) % 11) as f64);
        let layout = ClusterLayout::singletons(7);
        for g in 1..=7 {
            let cg = cluster_top_g(&beta, &layout, g).unwrap();
            let tg = top_g_groups(&beta, g).unwrap();
            assert_eq!(cg.access_groups, tg.groups());
            assert_eq!(cg.fronthaul_groups, cg.access_groups);
        }
    }

    #[test]
    fn size_search_climbs_to_upper_bound() {
        let s = optimize_group_size(|g| Ok((g as f64, 1e9)), 3, (1, 8)).unwrap();
        assert_eq!(s.g_star, 8);
        assert_eq!(s.history.last().unwrap().group_size, 8);
    }

    #[test]
    fn size_search_oscillation_picks_better_point() {
        // Fronthaul wins at 4, loses at 5.
        let eval = |g: usize| Ok(if g <= 4 { (10.0, 12.0) } else { (11.0, 10.5) });
        let s = optimize_group_size(eval, 4, (1, 10)).unwrap();
        assert_eq!(s.history.len(), 2);
        assert_eq!(s.g_star, 5);
    }

    #[test]
    fn size_search_finds_known_crossing() {
        // Access rises, fronthaul falls; they cross between 12 and 13.
        let eval = |g: usize| Ok((g as f64, 25.0 - g as f64 + 0.5));
        for init in [1, 5, 12, 20, 40] {
            let s = optimize_group_size(eval, init, (1, 40)).unwrap();
            assert!(s.g_star == 12 || s.g_star == 13, "init {init} -> {}", s.g_star);
            assert!(s.history.len() <= 80);
        }
    }

    proptest! {
        #[test]
        fn top_g_is_scale_invariant(
            vals in prop::collection::vec(0.0f64..1.0, 12),
            scale in 1e-6f64..1e6,
            g in 1usize..=6,
        ) {
            let beta = DMatrix::from_column_slice(6, 2, &vals);
            let a = top_g_groups(&beta, g).unwrap();
            let b = top_g_groups(&(beta * scale), g).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(inverse_consistent(&a));
        }

        #[test]
        fn size_search_terminates_on_visited_point(
            table in prop::collection::vec((0.0f64..10.0, 0.0f64..10.0), 20),
            init in 1usize..=20,
        ) {
            let s = optimize_group_size(|g| Ok(table[g - 1]), init, (1, 20)).unwrap();
            prop_assert!(s.history.len() <= 40);
            prop_assert!(s.history.iter().any(|h| h.group_size == s.g_star));
        }
    }
}
