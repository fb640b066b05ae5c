//! Analog multicast beamforming at the CPU with quantized phase shifters.
//!
//! A group of APs is served by one beam; the group rate is the minimum of the
//! member rates, so the search maximizes `min_m |h_m^H f|^2` over the codebook.
//! Two searches are provided: full enumeration (small arrays only) and a
//! cyclic coordinate ascent over the per-antenna phase indices.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{array_response, departure_angle, FronthaulChannelSet};
use crate::error::{Error, Result};
use crate::scenario::Point;

/// Largest codebook the exhaustive search will enumerate.
pub const DEFAULT_ENUMERATION_CAP: u128 = 1 << 24;
/// Pass limit of the coordinate ascent.
pub const MAX_ASCENT_PASSES: usize = 50;
/// Members whose matched beams seed extra coordinate-ascent runs.
pub const MEMBER_STARTS: usize = 4;
/// Common phase rotations tried when quantizing a continuous target.
pub const QUANTIZATION_OFFSETS: usize = 8;
/// Largest `N^2 L^2 |group|` for which two-antenna moves are searched.
pub const PAIR_SEARCH_BUDGET: usize = 1 << 20;
const RELAX_ITERS: usize = 40;
const RELAX_POWER: i32 = 4;

const IMPROVEMENT_RTOL: f64 = 1e-12;

/// Phase shifter codebook: `2^q` phases spaced uniformly over `[0, 2 pi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseCodebook {
    num_antennas: usize,
    phase_bits: u32,
    phase_set: Vec<f64>,
}

impl PhaseCodebook {
    pub fn new(num_antennas: usize, phase_bits: u32) -> Result<Self> {
        if num_antennas == 0 || phase_bits == 0 || phase_bits > 16 {
            return Err(Error::Domain(format!(
                "codebook needs N >= 1 and 1 <= q <= 16, got N = {num_antennas}, q = {phase_bits}"
            )));
        }
        let levels = 1usize << phase_bits;
        let step = 2.0 * PI / levels as f64;
        Ok(Self {
            num_antennas,
            phase_bits,
            phase_set: (0..levels).map(|i| i as f64 * step).collect(),
        })
    }

    pub fn num_antennas(&self) -> usize {
        self.num_antennas
    }

    pub fn phase_bits(&self) -> u32 {
        self.phase_bits
    }

    pub fn phase_set(&self) -> &[f64] {
        &self.phase_set
    }

    pub fn levels(&self) -> usize {
        self.phase_set.len()
    }

    /// Number of distinct beams, `2^(qN)`.
    pub fn size(&self) -> u128 {
        let bits = self.phase_bits as u128 * self.num_antennas as u128;
        if bits >= 128 {
            u128::MAX
        } else {
            1u128 << bits
        }
    }

    /// Index of the codebook phase nearest to `angle`.
    pub fn quantize(&self, angle: f64) -> usize {
        let levels = self.levels() as f64;
        let step = 2.0 * PI / levels;
        let idx = (angle.rem_euclid(2.0 * PI) / step).round() as usize;
        idx % self.levels()
    }

    fn weight(&self, idx: usize) -> Complex64 {
        Complex64::from_polar(1.0 / (self.num_antennas as f64).sqrt(), self.phase_set[idx])
    }

    /// Beam whose phases are the quantized phases of `target`, i.e. the
    /// quantized matched (conjugate) beam for a channel `target`.
    pub fn quantized_match(&self, target: &[Complex64]) -> BeamVector {
        let indices = target.iter().map(|z| self.quantize(z.arg())).collect();
        BeamVector::from_indices(self, indices)
    }
}

/// A codebook beam; entries all have magnitude `1/sqrt(N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamVector {
    phase_indices: Vec<usize>,
    entries: Vec<Complex64>,
}

impl BeamVector {
    pub fn from_indices(codebook: &PhaseCodebook, phase_indices: Vec<usize>) -> Self {
        let entries = phase_indices.iter().map(|&i| codebook.weight(i)).collect();
        Self {
            phase_indices,
            entries,
        }
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn phase_indices(&self) -> &[usize] {
        &self.phase_indices
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupBeamSolution {
    pub beam: BeamVector,
    pub per_ap_rates: Vec<f64>,
    pub group_rate: f64,
}

fn inner(h: &[Complex64], f: &[Complex64]) -> Complex64 {
    h.iter().zip(f).map(|(a, b)| a.conj() * b).sum()
}

/// Fronthaul rate of one AP in bits/s/Hz.
pub fn ap_fronthaul_rate(h: &[Complex64], f: &BeamVector, rho_fh: f64) -> f64 {
    (1.0 + rho_fh * inner(h, f.entries()).norm_sqr()).log2()
}

fn solution(
    group: &[usize],
    channels: &FronthaulChannelSet,
    beam: BeamVector,
    rho_fh: f64,
) -> GroupBeamSolution {
    let per_ap_rates: Vec<f64> = group
        .iter()
        .map(|&m| ap_fronthaul_rate(&channels.vectors[m], &beam, rho_fh))
        .collect();
    let group_rate = per_ap_rates.iter().copied().fold(f64::INFINITY, f64::min);
    GroupBeamSolution {
        beam,
        per_ap_rates,
        group_rate,
    }
}

fn check_group(group: &[usize], channels: &FronthaulChannelSet, codebook: &PhaseCodebook) -> Result<()> {
    if group.is_empty() {
        return Err(Error::Domain("beam search needs a nonempty group".into()));
    }
    if let Some(&m) = group.iter().find(|&&m| m >= channels.num_aps()) {
        return Err(Error::Domain(format!("AP {m} has no fronthaul channel")));
    }
    if channels.num_antennas() != codebook.num_antennas() {
        return Err(Error::Domain(format!(
            "channels have {} antennas, codebook {}",
            channels.num_antennas(),
            codebook.num_antennas()
        )));
    }
    Ok(())
}

fn min_gain(acc: &[Complex64]) -> f64 {
    acc.iter().map(|z| z.norm_sqr()).fold(f64::INFINITY, f64::min)
}

fn improves(candidate: f64, incumbent: f64) -> bool {
    candidate > incumbent + IMPROVEMENT_RTOL * incumbent.abs()
}

/// Globally optimal codebook beam, found by enumerating all `2^(qN)` beams in
/// lexicographic order of their phase indices. Ties keep the first beam.
pub fn multicast_beam_exhaustive(
    group: &[usize],
    channels: &FronthaulChannelSet,
    codebook: &PhaseCodebook,
    rho_fh: f64,
) -> Result<GroupBeamSolution> {
    multicast_beam_exhaustive_capped(group, channels, codebook, rho_fh, DEFAULT_ENUMERATION_CAP)
}

pub fn multicast_beam_exhaustive_capped(
    group: &[usize],
    channels: &FronthaulChannelSet,
    codebook: &PhaseCodebook,
    rho_fh: f64,
    cap: u128,
) -> Result<GroupBeamSolution> {
    check_group(group, channels, codebook)?;
    let candidates = codebook.size();
    if candidates > cap {
        return Err(Error::SearchTooLarge { candidates, cap });
    }
    let n = codebook.num_antennas();
    let levels = codebook.levels();
    let hs: Vec<&[Complex64]> = group.iter().map(|&m| channels.vectors[m].as_slice()).collect();
    let weights: Vec<Complex64> = (0..levels).map(|i| codebook.weight(i)).collect();

    let mut idx = vec![0usize; n];
    let mut acc: Vec<Complex64> = hs
        .iter()
        .map(|h| h.iter().map(|z| z.conj() * weights[0]).sum())
        .collect();
    let mut best_idx = idx.clone();
    let mut best = min_gain(&acc);
    loop {
        // Odometer step, last antenna fastest.
        let mut pos = n;
        loop {
            if pos == 0 {
                let beam = BeamVector::from_indices(codebook, best_idx);
                return Ok(solution(group, channels, beam, rho_fh));
            }
            pos -= 1;
            let old = idx[pos];
            let new = (old + 1) % levels;
            idx[pos] = new;
            let dw = weights[new] - weights[old];
            for (a, h) in acc.iter_mut().zip(&hs) {
                *a += h[pos].conj() * dw;
            }
            if new != 0 {
                break;
            }
        }
        let g = min_gain(&acc);
        if improves(g, best) {
            best = g;
            best_idx.copy_from_slice(&idx);
        }
    }
}

/// Cyclic coordinate ascent over phase indices from several starts.
///
/// Continuous targets are the channel of the weakest member (smallest
/// large-scale gain), the gain-weighted mean steering vector of the group,
/// the channels of up to [`MEMBER_STARTS`] members spread evenly in angle, and
/// a relaxed continuous-phase refinement of each of these. Each target is
/// quantized under [`QUANTIZATION_OFFSETS`] common phase rotations, which do
/// not change its continuous gains but do change the rounding, and the best
/// rotation seeds one ascent. In the ascent each antenna in turn takes the
/// phase that maximizes the group's minimum gain with the others held fixed;
/// passes repeat until one makes no change or [`MAX_ASCENT_PASSES`] is
/// reached. The best run wins, earlier starts on ties.
pub fn multicast_beam_heuristic(
    group: &[usize],
    channels: &FronthaulChannelSet,
    codebook: &PhaseCodebook,
    rho_fh: f64,
) -> Result<GroupBeamSolution> {
    check_group(group, channels, codebook)?;
    let mut targets = vec![
        channels.vectors[weakest_member(group, channels)].clone(),
        mean_steering(group, channels, codebook.num_antennas()),
    ];
    let mut by_angle = group.to_vec();
    by_angle.sort_by(|&a, &b| channels.angles[a].total_cmp(&channels.angles[b]).then(a.cmp(&b)));
    let picks = MEMBER_STARTS.min(by_angle.len());
    for i in 0..picks {
        let m = by_angle[i * (by_angle.len() - 1) / (picks - 1).max(1)];
        targets.push(channels.vectors[m].clone());
    }
    let relaxed: Vec<Vec<Complex64>> = targets.iter().map(|t| relaxed_phases(group, channels, t)).collect();
    targets.extend(relaxed);

    let step = 2.0 * PI / codebook.levels() as f64 / QUANTIZATION_OFFSETS as f64;
    let mut best: Option<(BeamVector, f64)> = None;
    for target in &targets {
        let mut start: Option<(BeamVector, f64)> = None;
        for r in 0..QUANTIZATION_OFFSETS {
            let rot = Complex64::from_polar(1.0, r as f64 * step);
            let rotated: Vec<Complex64> = target.iter().map(|z| z * rot).collect();
            let beam = codebook.quantized_match(&rotated);
            let gain = group_min_gain(group, channels, &beam);
            if start.as_ref().map_or(true, |(_, g)| improves(gain, *g)) {
                start = Some((beam, gain));
            }
        }
        let (beam, gain) = coordinate_ascent(group, channels, codebook, start.expect("one offset").0);
        if best.as_ref().map_or(true, |(_, g)| improves(gain, *g)) {
            best = Some((beam, gain));
        }
    }
    let (beam, _) = best.expect("at least two starts");
    let beam = if pair_search_affordable(codebook, group.len()) {
        pair_refine(group, channels, codebook, beam)
    } else {
        beam
    };
    Ok(solution(group, channels, beam, rho_fh))
}

/// Continuous-phase refinement of `init`: repeated unit-modulus projections
/// of `sum_m w_m h_m (h_m^H f)`, with weights `(g_min / g_m)^RELAX_POWER`
/// that concentrate on the weakest members. Returns the best iterate.
fn relaxed_phases(group: &[usize], channels: &FronthaulChannelSet, init: &[Complex64]) -> Vec<Complex64> {
    let n = init.len();
    let scale = 1.0 / (n as f64).sqrt();
    let mut f: Vec<Complex64> = init.iter().map(|z| Complex64::from_polar(scale, z.arg())).collect();
    let mut best = (f64::NEG_INFINITY, f.clone());
    let mut proj = vec![Complex64::new(0.0, 0.0); group.len()];
    for _ in 0..RELAX_ITERS {
        for (p, &m) in proj.iter_mut().zip(group) {
            *p = inner(&channels.vectors[m], &f);
        }
        let gmin = min_gain(&proj);
        if gmin > best.0 {
            best = (gmin, f.clone());
        }
        let mut v = vec![Complex64::new(0.0, 0.0); n];
        for (p, &m) in proj.iter().zip(group) {
            let w = (gmin.max(f64::MIN_POSITIVE) / p.norm_sqr().max(f64::MIN_POSITIVE)).powi(RELAX_POWER);
            for (acc, h) in v.iter_mut().zip(&channels.vectors[m]) {
                *acc += h * p * w;
            }
        }
        f = v.iter().map(|z| Complex64::from_polar(scale, z.arg())).collect();
    }
    best.1
}

fn weakest_member(group: &[usize], channels: &FronthaulChannelSet) -> usize {
    group
        .iter()
        .copied()
        .min_by(|&a, &b| channels.betas[a].total_cmp(&channels.betas[b]))
        .unwrap_or(group[0])
}

fn mean_steering(group: &[usize], channels: &FronthaulChannelSet, n: usize) -> Vec<Complex64> {
    let mut mean = vec![Complex64::new(0.0, 0.0); n];
    for &m in group {
        for (acc, a) in mean.iter_mut().zip(array_response(channels.angles[m], n)) {
            *acc += a * channels.betas[m];
        }
    }
    mean
}

/// Quantized matched beams of the weakest member and of the gain-weighted
/// mean steering vector, without rotation.
pub fn initial_beams(
    group: &[usize],
    channels: &FronthaulChannelSet,
    codebook: &PhaseCodebook,
) -> (BeamVector, BeamVector) {
    let start_a = codebook.quantized_match(&channels.vectors[weakest_member(group, channels)]);
    let start_b = codebook.quantized_match(&mean_steering(group, channels, codebook.num_antennas()));
    (start_a, start_b)
}

/// Minimum of `|h_m^H f|^2` over the group.
pub fn group_min_gain(group: &[usize], channels: &FronthaulChannelSet, beam: &BeamVector) -> f64 {
    group
        .iter()
        .map(|&m| inner(&channels.vectors[m], beam.entries()).norm_sqr())
        .fold(f64::INFINITY, f64::min)
}

fn coordinate_ascent(
    group: &[usize],
    channels: &FronthaulChannelSet,
    codebook: &PhaseCodebook,
    start: BeamVector,
) -> (BeamVector, f64) {
    let (idx, gain) = ascend(group, channels, codebook, start.phase_indices, &min_gain);
    (BeamVector::from_indices(codebook, idx), gain)
}

fn pair_search_affordable(codebook: &PhaseCodebook, group_len: usize) -> bool {
    let n = codebook.num_antennas();
    let l = codebook.levels();
    n * n * l * l * group_len <= PAIR_SEARCH_BUDGET
}

/// Alternates two-antenna moves with single-antenna ascent until neither
/// improves the minimum gain.
fn pair_refine(
    group: &[usize],
    channels: &FronthaulChannelSet,
    codebook: &PhaseCodebook,
    beam: BeamVector,
) -> BeamVector {
    let levels = codebook.levels();
    let weights: Vec<Complex64> = (0..levels).map(|i| codebook.weight(i)).collect();
    let hs: Vec<&[Complex64]> = group.iter().map(|&m| channels.vectors[m].as_slice()).collect();
    let mut idx = beam.phase_indices;
    let n = idx.len();
    let mut trial = vec![Complex64::new(0.0, 0.0); hs.len()];
    for _ in 0..MAX_ASCENT_PASSES {
        let acc: Vec<Complex64> = hs
            .iter()
            .map(|h| idx.iter().zip(h.iter()).map(|(&i, z)| z.conj() * weights[i]).sum())
            .collect();
        let current = min_gain(&acc);
        let mut best: Option<(usize, usize, usize, usize, f64)> = None;
        for a in 0..n {
            for b in a + 1..n {
                for la in 0..levels {
                    let da = weights[la] - weights[idx[a]];
                    for lb in 0..levels {
                        if la == idx[a] && lb == idx[b] {
                            continue;
                        }
                        let db = weights[lb] - weights[idx[b]];
                        for (t, (s, h)) in trial.iter_mut().zip(acc.iter().zip(&hs)) {
                            *t = *s + h[a].conj() * da + h[b].conj() * db;
                        }
                        let g = min_gain(&trial);
                        if improves(g, best.map_or(current, |x| x.4)) {
                            best = Some((a, b, la, lb, g));
                        }
                    }
                }
            }
        }
        let Some((a, b, la, lb, _)) = best else {
            break;
        };
        idx[a] = la;
        idx[b] = lb;
        idx = ascend(group, channels, codebook, idx, &min_gain).0;
    }
    BeamVector::from_indices(codebook, idx)
}

fn ascend(
    group: &[usize],
    channels: &FronthaulChannelSet,
    codebook: &PhaseCodebook,
    mut idx: Vec<usize>,
    objective: &dyn Fn(&[Complex64]) -> f64,
) -> (Vec<usize>, f64) {
    let levels = codebook.levels();
    let weights: Vec<Complex64> = (0..levels).map(|i| codebook.weight(i)).collect();
    let hs: Vec<&[Complex64]> = group.iter().map(|&m| channels.vectors[m].as_slice()).collect();
    let mut acc: Vec<Complex64> = hs
        .iter()
        .map(|h| idx.iter().zip(h.iter()).map(|(&i, z)| z.conj() * weights[i]).sum())
        .collect();
    let mut current = objective(&acc);
    let mut trial = acc.clone();

    for _ in 0..MAX_ASCENT_PASSES {
        let mut changed = false;
        for n in 0..idx.len() {
            let old = idx[n];
            let mut best_level = old;
            let mut best_value = current;
            for level in (0..levels).filter(|&l| l != old) {
                let dw = weights[level] - weights[old];
                for (t, (a, h)) in trial.iter_mut().zip(acc.iter().zip(&hs)) {
                    *t = *a + h[n].conj() * dw;
                }
                let v = objective(&trial);
                if improves(v, best_value) {
                    best_value = v;
                    best_level = level;
                }
            }
            if best_level != old {
                let dw = weights[best_level] - weights[old];
                for (a, h) in acc.iter_mut().zip(&hs) {
                    *a += h[n].conj() * dw;
                }
                idx[n] = best_level;
                // Recompute from the accumulators to avoid drift in the incumbent.
                current = objective(&acc);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    (idx, current)
}

/// Array gain `N |a(theta)^H f|^2` of `beam` toward each point (at most N).
pub fn beam_gain_map(beam: &BeamVector, grid: &[Point], cpu_position: &Point, num_antennas: usize) -> Vec<f64> {
    grid.iter()
        .map(|p| {
            let a = array_response(departure_angle(cpu_position, p), num_antennas);
            num_antennas as f64 * inner(&a, beam.entries()).norm_sqr()
        })
        .collect()
}

/// Writes `x,y,gain` rows with a header.
pub fn write_gain_map_csv<W: Write>(out: W, grid: &[Point], gains: &[f64]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["x", "y", "gain"])?;
    for (p, g) in grid.iter().zip(gains) {
        wtr.write_record([p.x.to_string(), p.y.to_string(), g.to_string()])?;
    }
    wtr.flush().map_err(|e| Error::io("gain map", e))?;
    Ok(())
}

/// Regular `resolution x resolution` grid of points covering a square.
pub fn square_grid(side: f64, resolution: usize) -> Vec<Point> {
    let step = if resolution > 1 { side / (resolution - 1) as f64 } else { 0.0 };
    let origin = if resolution > 1 { -side / 2.0 } else { 0.0 };
    (0..resolution)
        .flat_map(|i| {
            (0..resolution).map(move |j| Point::new(origin + i as f64 * step, origin + j as f64 * step))
        })
        .collect()
}
