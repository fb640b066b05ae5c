//! Large-scale channel models for both links.
//!
//! The fronthaul is a pure LOS link from an N-element half-wavelength ULA at
//! the CPU: `h_m = sqrt(N beta_m) a(theta_m)` with a unit-norm array response.
//! The access link only enters the rate bound through its large-scale gains
//! `beta_mk` and the MMSE estimate variances `beta_hat_mk`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{Placement, Point, SystemConfig};

/// UMi street-canyon path loss in dB, distance in meters, carrier in GHz.
pub fn path_loss_db(distance_m: f64, carrier_ghz: f64) -> Result<f64> {
    if !(distance_m > 0.0) || !(carrier_ghz > 0.0) {
        return Err(Error::Domain(format!(
            "path loss needs positive distance and carrier, got d = {distance_m} m, f = {carrier_ghz} GHz"
        )));
    }
    Ok(32.4 + 20.0 * distance_m.log10() + 21.0 * carrier_ghz.log10())
}

pub fn db_to_linear_gain(loss_db: f64) -> f64 {
    10f64.powf(-loss_db / 10.0)
}

/// Unit-norm ULA response, element `n` has phase `pi n sin(theta)`.
pub fn array_response(theta: f64, num_antennas: usize) -> Vec<Complex64> {
    let amp = 1.0 / (num_antennas as f64).sqrt();
    let s = theta.sin();
    (0..num_antennas)
        .map(|n| Complex64::from_polar(amp, PI * n as f64 * s))
        .collect()
}

/// Azimuth of `target` seen from the CPU; the array broadside points along +x.
pub fn departure_angle(cpu: &Point, target: &Point) -> f64 {
    (target.y - cpu.y).atan2(target.x - cpu.x)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FronthaulChannelSet {
    pub betas: Vec<f64>,
    pub angles: Vec<f64>,
    pub vectors: Vec<Vec<Complex64>>,
}

impl FronthaulChannelSet {
    pub fn num_aps(&self) -> usize {
        self.betas.len()
    }

    pub fn num_antennas(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }
}

/// LOS fronthaul channels from the CPU to every AP (LOS phase taken as 1).
pub fn build_fronthaul_channels(
    placement: &Placement,
    config: &SystemConfig,
) -> Result<FronthaulChannelSet> {
    let n = config.cpu_antennas;
    let cpu = placement.cpu_position;
    let mut betas = Vec::with_capacity(placement.num_aps());
    let mut angles = Vec::with_capacity(placement.num_aps());
    let mut vectors = Vec::with_capacity(placement.num_aps());
    for ap in &placement.ap_positions {
        let d = cpu.clamped_distance(ap, config.min_distance_m);
        let beta = db_to_linear_gain(path_loss_db(d, config.fronthaul_carrier_ghz)?);
        let theta = departure_angle(&cpu, ap);
        let scale = (n as f64 * beta).sqrt();
        vectors.push(
            array_response(theta, n)
                .into_iter()
                .map(|a| a * scale)
                .collect(),
        );
        betas.push(beta);
        angles.push(theta);
    }
    Ok(FronthaulChannelSet {
        betas,
        angles,
        vectors,
    })
}

/// M x K matrix of access large-scale gains.
pub fn access_large_scale(placement: &Placement, config: &SystemConfig) -> Result<DMatrix<f64>> {
    let m = placement.num_aps();
    let k = placement.num_ues();
    let mut beta = DMatrix::zeros(m, k);
    for (i, ap) in placement.ap_positions.iter().enumerate() {
        for (j, ue) in placement.ue_positions.iter().enumerate() {
            let d = ap.clamped_distance(ue, config.min_distance_m);
            beta[(i, j)] = db_to_linear_gain(path_loss_db(d, config.access_carrier_ghz)?);
        }
    }
    Ok(beta)
}

/// MMSE channel-estimate variance for orthogonal pilots of length `pilot_length`.
pub fn mmse_variance(beta: f64, rho_t: f64, pilot_length: usize) -> f64 {
    let snr = rho_t * pilot_length as f64;
    snr * beta * beta / (1.0 + snr * beta)
}

/// Large-scale statistics of the access channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessStats {
    pub beta: DMatrix<f64>,
    pub beta_hat: DMatrix<f64>,
}

impl AccessStats {
    pub fn new(beta: DMatrix<f64>, rho_t: f64, pilot_length: usize) -> Self {
        let beta_hat = beta.map(|b| mmse_variance(b, rho_t, pilot_length));
        Self { beta, beta_hat }
    }

    /// Statistics with given matrices, mainly for synthetic test instances.
    pub fn from_parts(beta: DMatrix<f64>, beta_hat: DMatrix<f64>) -> Result<Self> {
        if beta.shape() != beta_hat.shape() {
            return Err(Error::Domain("beta and beta_hat shapes differ".into()));
        }
        Ok(Self { beta, beta_hat })
    }

    pub fn num_aps(&self) -> usize {
        self.beta.nrows()
    }

    pub fn num_ues(&self) -> usize {
        self.beta.ncols()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::generate_placement;
    use approx::assert_relative_eq;

    #[test]
    fn path_loss_reference_values() {
        assert_relative_eq!(
            path_loss_db(100.0, 28.0).unwrap(),
            102.790_318_658_186_6,
            epsilon = 1e-9
        );
        assert_relative_eq!(
            path_loss_db(1.0, 3.5).unwrap(),
            43.825_428_931_355_79,
            epsilon = 1e-9
        );
        let a = path_loss_db(7.0, 3.5).unwrap();
        let b = path_loss_db(70.0, 3.5).unwrap();
        assert_relative_eq!(b - a, 20.0, epsilon = 1e-12);
    }

    #[test]
    fn path_loss_rejects_nonpositive_inputs() {
        assert!(path_loss_db(0.0, 3.5).is_err());
        assert!(path_loss_db(10.0, -1.0).is_err());
        assert!(path_loss_db(f64::NAN, 3.5).is_err());
    }

    #[test]
    fn access_gain_at_100m() {
        let g = db_to_linear_gain(path_loss_db(100.0, 3.5).unwrap());
        assert_relative_eq!(g, 4.144_356_502_403_657e-9, max_relative = 1e-12);
    }

    #[test]
    fn fronthaul_norm_identity() {
        let cfg = SystemConfig::default();
        let p = generate_placement(&cfg, 5);
        let ch = build_fronthaul_channels(&p, &cfg).unwrap();
        for (h, beta) in ch.vectors.iter().zip(&ch.betas) {
            let norm2: f64 = h.iter().map(|z| z.norm_sqr()).sum();
            assert_relative_eq!(norm2, 128.0 * beta, max_relative = 1e-10);
        }
    }

    #[test]
    fn broadside_response_is_flat() {
        let a = array_response(0.0, 8);
        assert!(a.iter().all(|z| (z - a[0]).norm() < 1e-15));
    }

    #[test]
    fn two_element_phase_step() {
        let a = array_response(PI / 6.0, 2);
        let dphi = (a[1] / a[0]).arg();
        assert_relative_eq!(dphi, PI / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn angle_measured_from_broadside() {
        let cpu = Point::new(-100.0, 0.0);
        assert_relative_eq!(departure_angle(&cpu, &Point::new(0.0, 0.0)), 0.0);
        assert_relative_eq!(
            departure_angle(&cpu, &Point::new(0.0, 100.0)),
            PI / 4.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn access_gains_symmetry_and_monotonicity() {
        let cfg = SystemConfig::default();
        let p = Placement {
            cpu_position: Point::new(-100.0, 0.0),
            ap_positions: vec![Point::new(0.0, 0.0)],
            ue_positions: vec![
                Point::new(10.0, 0.0),
                Point::new(0.0, -10.0),
                Point::new(30.0, 0.0),
                Point::new(0.0, 0.2),
            ],
        };
        let b = access_large_scale(&p, &cfg).unwrap();
        assert_eq!(b[(0, 0)], b[(0, 1)]);
        assert!(b[(0, 2)] < b[(0, 0)]);
        // 0.2 m is clamped to the 1 m minimum distance.
        assert_relative_eq!(
            b[(0, 3)],
            db_to_linear_gain(path_loss_db(1.0, 3.5).unwrap()),
            max_relative = 1e-12
        );
    }

    #[test]
    fn mmse_variance_examples() {
        assert_relative_eq!(mmse_variance(0.01, 10.0, 10), 0.005, max_relative = 1e-12);
        assert_eq!(mmse_variance(0.0, 3.0, 10), 0.0);
        assert!((mmse_variance(1.0, 1e8, 10) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn estimate_variance_below_true_variance() {
        for &beta in &[1e-12, 1e-9, 1e-6, 1e-3, 1.0, 1e3] {
            for &rho in &[1e-3, 1.0, 1e10] {
                let bh = mmse_variance(beta, rho, 10);
                assert!(bh >= 0.0 && bh < beta, "beta={beta} rho={rho}");
            }
        }
    }
}
