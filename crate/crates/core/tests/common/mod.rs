//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use cellfree::channel::{array_response, mmse_variance, AccessStats, FronthaulChannelSet};
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random two-AP, two-user instance with gains spread over two decades.
pub fn random_2x2(rng: &mut ChaCha8Rng) -> (AccessStats, f64) {
    let beta = DMatrix::from_fn(2, 2, |_, _| 10f64.powf(rng.gen_range(-2.0..0.0)));
    let beta_hat = beta.map(|b| mmse_variance(b, 1.0, 10));
    let rho = 10f64.powf(rng.gen_range(1.0..2.5));
    (AccessStats::from_parts(beta, beta_hat).unwrap(), rho)
}

fn min_sinr_at(mut x: [f64; 4], groups: &[Vec<usize>], stats: &AccessStats, rho: f64) -> f64 {
    // x[2m + k] = p_mk beta_hat_mk, the share of AP m's power given to user k.
    for m in 0..2 {
        for k in 0..2 {
            if !groups[k].contains(&m) {
                x[2 * m + k] = 0.0;
            }
        }
    }
    let load = [x[0] + x[1], x[2] + x[3]];
    let mut worst = f64::INFINITY;
    for k in 0..2 {
        let mut signal = 0.0;
        let mut interference = 0.0;
        for m in 0..2 {
            // sqrt(p) beta_hat = sqrt(x beta_hat)
            signal += (x[2 * m + k] * stats.beta_hat[(m, k)]).sqrt();
            interference += stats.beta[(m, k)] * load[m];
        }
        worst = worst.min(rho * signal * signal / (1.0 + rho * interference));
    }
    worst
}

/// Grid-search max-min SINR for M = K = 2.
///
/// Each AP's power is parameterized by a total share `s` and a split `a`
/// (`x_m1 = a s`, `x_m2 = (1 - a) s`) on a `steps^4` grid, followed by a
/// second `steps^4` grid over one cell around the best point.
pub fn grid_oracle_2x2(groups: &[Vec<usize>], stats: &AccessStats, rho: f64, steps: usize) -> f64 {
    let eval = |s0: f64, a0: f64, s1: f64, a1: f64| {
        min_sinr_at([a0 * s0, (1.0 - a0) * s0, a1 * s1, (1.0 - a1) * s1], groups, stats, rho)
    };
    let axis = |lo: f64, hi: f64, i: usize| lo + (hi - lo) * i as f64 / (steps - 1) as f64;
    let mut best = (f64::NEG_INFINITY, [0.0; 4]);
    let search = |lo: [f64; 4], hi: [f64; 4], best: &mut (f64, [f64; 4])| {
        for i in 0..steps {
            let s0 = axis(lo[0], hi[0], i);
            for j in 0..steps {
                let a0 = axis(lo[1], hi[1], j);
                for k in 0..steps {
                    let s1 = axis(lo[2], hi[2], k);
                    for l in 0..steps {
                        let a1 = axis(lo[3], hi[3], l);
                        let v = eval(s0, a0, s1, a1);
                        if v > best.0 {
                            *best = (v, [s0, a0, s1, a1]);
                        }
                    }
                }
            }
        }
    };
    search([0.0; 4], [1.0; 4], &mut best);
    let cell = 1.0 / (steps - 1) as f64;
    let c = best.1;
    let lo = c.map(|v| (v - cell).max(0.0));
    let hi = c.map(|v| (v + cell).min(1.0));
    search(lo, hi, &mut best);
    best.0
}

/// LOS fronthaul channels toward random directions from a random-size group.
pub fn random_fronthaul(rng: &mut ChaCha8Rng, num_aps: usize, n: usize) -> FronthaulChannelSet {
    let mut betas = Vec::new();
    let mut angles = Vec::new();
    let mut vectors = Vec::new();
    for _ in 0..num_aps {
        let theta = rng.gen_range(-PI / 2.0..PI / 2.0);
        let beta = 10f64.powf(rng.gen_range(-1.0..0.0));
        let scale = (n as f64 * beta).sqrt();
        vectors.push(array_response(theta, n).into_iter().map(|a| a * scale).collect());
        betas.push(beta);
        angles.push(theta);
    }
    FronthaulChannelSet { betas, angles, vectors }
}
