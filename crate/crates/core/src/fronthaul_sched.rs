//! TDMA sharing of the fronthaul among the user groups.
//!
//! Group k is served during a fraction `t_k` of the frame, so its delivered
//! fronthaul rate is `t_k R_k`. Approach 1 equalizes `t_k R_k` over all users;
//! Approach 2 additionally never gives a user more airtime than its access
//! rate can use, and hands the slack to the others (water-filling with caps).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdmaSchedule {
    pub t: Vec<f64>,
    /// Common time-scaled rate `t_k R_k` of the uncapped users, bit/s/Hz.
    pub eta: f64,
}

impl TdmaSchedule {
    /// Sum of the delivered fronthaul rates `sum_k t_k R_k`.
    pub fn sum_rate(&self, group_rates: &[f64]) -> f64 {
        self.t.iter().zip(group_rates).map(|(t, r)| t * r).sum()
    }
}

fn check_rates(group_rates: &[f64]) -> Result<()> {
    match group_rates.iter().position(|r| !(*r > 0.0) || !r.is_finite()) {
        Some(group) => Err(Error::DegenerateGroup { group }),
        None => Ok(()),
    }
}

/// Harmonic mean of positive values.
pub fn harmonic_mean(values: &[f64]) -> f64 {
    values.len() as f64 / values.iter().map(|v| 1.0 / v).sum::<f64>()
}

/// Approach 1: equal delivered rates, `t_k = eta / R_k` with `eta = HM(R) / K`.
pub fn tdma_equal_rate(group_rates: &[f64]) -> Result<TdmaSchedule> {
    check_rates(group_rates)?;
    if group_rates.is_empty() {
        return Ok(TdmaSchedule { t: Vec::new(), eta: 0.0 });
    }
    let inv_sum: f64 = group_rates.iter().map(|r| 1.0 / r).sum();
    let eta = 1.0 / inv_sum;
    let t = group_rates.iter().map(|r| eta / r).collect();
    Ok(TdmaSchedule { t, eta })
}

/// Approach 2: `t_k = min(cap_k, eta / R_k)` with the largest `eta` such that
/// the fractions sum to at most one.
///
/// The water level is found exactly by walking the sorted breakpoints
/// `cap_k R_k` of the piecewise-linear budget function.
pub fn tdma_capped(group_rates: &[f64], caps: &[f64]) -> Result<TdmaSchedule> {
    check_rates(group_rates)?;
    if caps.len() != group_rates.len() {
        return Err(Error::Domain(format!(
            "{} caps for {} groups",
            caps.len(),
            group_rates.len()
        )));
    }
    if let Some(c) = caps.iter().find(|c| !(**c >= 0.0)) {
        return Err(Error::Domain(format!("time-fraction caps must be nonnegative, got {c}")));
    }
    let k = group_rates.len();
    let cap_sum: f64 = caps.iter().sum();
    if cap_sum <= 1.0 {
        let eta = caps
            .iter()
            .zip(group_rates)
            .map(|(c, r)| c * r)
            .fold(0.0, f64::max);
        return Ok(TdmaSchedule { t: caps.to_vec(), eta });
    }

    let mut order: Vec<usize> = (0..k).collect();
    let breakpoint = |i: usize| caps[i] * group_rates[i];
    order.sort_by(|&a, &b| breakpoint(a).total_cmp(&breakpoint(b)).then(a.cmp(&b)));

    // Users order[..j] are capped; the rest share the remaining time.
    let mut capped_time = 0.0;
    let mut free_inv: f64 = group_rates.iter().map(|r| 1.0 / r).sum();
    let mut eta = 0.0;
    for j in 0..=k {
        let level = (1.0 - capped_time) / free_inv;
        if j == k || level <= breakpoint(order[j]) {
            eta = level;
            break;
        }
        let i = order[j];
        capped_time += caps[i];
        free_inv -= 1.0 / group_rates[i];
    }
    let t = caps
        .iter()
        .zip(group_rates)
        .map(|(c, r)| c.min(eta / r))
        .collect();
    Ok(TdmaSchedule { t, eta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn equal_rate_examples() {
        let s = tdma_equal_rate(&[2.0, 2.0]).unwrap();
        assert_eq!(s.t, vec![0.5, 0.5]);
        assert_relative_eq!(s.sum_rate(&[2.0, 2.0]), 2.0);

        let s = tdma_equal_rate(&[1.0, 3.0]).unwrap();
        assert_relative_eq!(s.eta, 0.75);
        assert_relative_eq!(s.t[0], 0.75);
        assert_relative_eq!(s.t[1], 0.25);
        assert_relative_eq!(s.sum_rate(&[1.0, 3.0]), 1.5);
        assert_relative_eq!(harmonic_mean(&[1.0, 3.0]), 1.5);

        let s = tdma_equal_rate(&[4.2]).unwrap();
        assert_eq!(s.t, vec![1.0]);
    }

    #[test]
    fn zero_rate_is_degenerate() {
        assert!(matches!(
            tdma_equal_rate(&[1.0, 0.0]),
            Err(Error::DegenerateGroup { group: 1 })
        ));
        assert!(tdma_capped(&[0.0], &[1.0]).is_err());
    }

    #[test]
    fn capped_examples() {
        let s = tdma_capped(&[100.0, 100.0], &[0.3, 0.9]).unwrap();
        assert_relative_eq!(s.t[0], 0.3, epsilon = 1e-12);
        assert_relative_eq!(s.t[1], 0.7, epsilon = 1e-12);

        let s = tdma_capped(&[5.0, 1.0], &[0.1, 0.1]).unwrap();
        assert_eq!(s.t, vec![0.1, 0.1]);

        let s = tdma_capped(&[5.0, 1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(s.t, vec![0.0, 0.0]);
    }

    #[test]
    fn capped_matches_fine_grid_search() {
        // Maximize the smaller of (t1 R1 if below cap) over a 1e-4 grid.
        let rates = [100.0, 100.0];
        let caps = [0.3, 0.9];
        let mut best = (f64::NEG_INFINITY, 0.0);
        for i in 0..=10_000 {
            let t1 = i as f64 * 1e-4;
            let t2 = 1.0 - t1;
            if t1 > caps[0] + 1e-12 || t2 > caps[1] + 1e-12 {
                continue;
            }
            let v = (t1 * rates[0]).min(t2 * rates[1]);
            if v > best.0 {
                best = (v, t1);
            }
        }
        let s = tdma_capped(&rates, &caps).unwrap();
        assert!((s.t[0] - best.1).abs() <= 1e-4);
    }

    proptest! {
        #[test]
        fn unit_caps_reduce_to_equal_rate(rates in prop::collection::vec(0.01f64..50.0, 2..12)) {
            let caps = vec![1.0; rates.len()];
            let a = tdma_equal_rate(&rates).unwrap();
            let b = tdma_capped(&rates, &caps).unwrap();
            for (x, y) in a.t.iter().zip(&b.t) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn capped_kkt(
            pairs in prop::collection::vec((0.01f64..50.0, 0.0f64..1.0), 1..16)
        ) {
            let rates: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let caps: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let s = tdma_capped(&rates, &caps).unwrap();
            let total: f64 = s.t.iter().sum();
            prop_assert!(total <= 1.0 + 1e-9);
            let mut any_free = false;
            for i in 0..rates.len() {
                prop_assert!(s.t[i] >= 0.0 && s.t[i] <= caps[i]);
                if s.t[i] < caps[i] {
                    any_free = true;
                    prop_assert!((s.t[i] * rates[i] - s.eta).abs() <= 1e-6 * s.eta.max(1.0));
                }
            }
            if any_free {
                prop_assert!((total - 1.0).abs() <= 1e-9);
            }
        }

        #[test]
        fn equal_rate_identity(rates in prop::collection::vec(0.01f64..50.0, 1..20)) {
            let s = tdma_equal_rate(&rates).unwrap();
            let total: f64 = s.t.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-9);
            let hm = harmonic_mean(&rates);
            prop_assert!((s.sum_rate(&rates) - hm).abs() <= 1e-9 * hm.max(1.0));
            for (t, r) in s.t.iter().zip(&rates) {
                prop_assert!((t * r - s.eta).abs() <= 1e-9 * s.eta.max(1.0));
            }
        }
    }
}
