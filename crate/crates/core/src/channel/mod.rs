//! Physical layer: path loss, capacity, the mutual-information decoding rule
//! and time-correlated Rayleigh fading.

mod bessel;
pub mod fading;

pub use bessel::bessel_j0;
pub use fading::{sample_fading_trace, FadingTrace, JakesProcess, LinkFading};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{dbm_to_watts, Position};

/// Physical-layer constants. All powers in watts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationParams {
    pub tx_power: f64,
    pub path_loss_exp: f64,
    pub noise_floor: f64,
    pub bandwidth: f64,
    pub cs_threshold: f64,
    pub relay_cs_threshold: f64,
    pub detection_threshold: f64,
    pub max_doppler: f64,
}

impl Default for PropagationParams {
    fn default() -> Self {
        Self {
            tx_power: dbm_to_watts(10.0),
            path_loss_exp: 3.5,
            noise_floor: dbm_to_watts(-102.0),
            bandwidth: 1e6,
            cs_threshold: dbm_to_watts(-100.0),
            relay_cs_threshold: dbm_to_watts(-100.0),
            detection_threshold: dbm_to_watts(-96.0),
            max_doppler: 11.1,
        }
    }
}

impl PropagationParams {
    /// Checks the invariants the physical model relies on.
    ///
    /// The carrier-sense thresholds are allowed to equal the noise floor: that
    /// is the degenerate "idle never sensed" configuration.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tx_power", self.tx_power),
            ("noise_floor", self.noise_floor),
            ("cs_threshold", self.cs_threshold),
            ("relay_cs_threshold", self.relay_cs_threshold),
            ("detection_threshold", self.detection_threshold),
            ("bandwidth", self.bandwidth),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.path_loss_exp <= 2.0 {
            return Err(Error::InvalidParameter(format!(
                "path loss exponent must exceed 2, got {}",
                self.path_loss_exp
            )));
        }
        if self.cs_threshold < self.noise_floor {
            return Err(Error::InvalidParameter(
                "carrier-sense threshold below the noise floor".into(),
            ));
        }
        if self.detection_threshold <= self.cs_threshold {
            return Err(Error::InvalidParameter(
                "detection threshold must exceed the carrier-sense threshold".into(),
            ));
        }
        if !(self.max_doppler >= 0.0) {
            return Err(Error::InvalidParameter("max Doppler must be >= 0".into()));
        }
        Ok(())
    }

    /// Mean received power at distance `d` (no fading).
    pub fn mean_power_at(&self, d: f64) -> f64 {
        self.tx_power * d.powf(-self.path_loss_exp)
    }

    pub fn capacity(&self, sinr: f64) -> f64 {
        shannon(sinr, self.bandwidth)
    }
}

/// Information rates and frame sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateParams {
    pub rho_data: f64,
    pub rho_ctrl: f64,
    pub payload_bits: f64,
    pub header_bits: f64,
    pub ack_bits: f64,
}

impl Default for RateParams {
    fn default() -> Self {
        Self {
            rho_data: 2.1e6,
            rho_ctrl: 0.532e6,
            payload_bits: 5000.0,
            header_bits: 112.0,
            ack_bits: 112.0,
        }
    }
}

impl RateParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rho_data", self.rho_data),
            ("rho_ctrl", self.rho_ctrl),
            ("payload_bits", self.payload_bits),
            ("header_bits", self.header_bits),
            ("ack_bits", self.ack_bits),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.rho_ctrl >= self.rho_data {
            return Err(Error::InvalidParameter(
                "control rate must be below the data rate".into(),
            ));
        }
        Ok(())
    }

    /// Payload airtime at the data rate.
    pub fn payload_duration(&self) -> f64 {
        self.payload_bits / self.rho_data
    }
}

/// A stretch of reception with constant SINR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinrSegment {
    pub duration: f64,
    pub sinr: f64,
}

impl SinrSegment {
    pub fn new(duration: f64, sinr: f64) -> Self {
        Self { duration, sinr }
    }
}

/// `P * d^-alpha` for the link between two positions.
pub fn mean_rx_power(p1: Position, p2: Position, params: &PropagationParams) -> Result<f64> {
    let d = p1.distance(&p2);
    if d == 0.0 {
        return Err(Error::CoincidentPositions { x: p1.x, y: p1.y });
    }
    Ok(params.mean_power_at(d))
}

fn shannon(sinr: f64, bandwidth: f64) -> f64 {
    bandwidth * sinr.ln_1p() / std::f64::consts::LN_2
}

/// Instantaneous link capacity `B log2(1 + sinr)` in bits/s.
pub fn capacity(sinr: f64, bandwidth: f64) -> Result<f64> {
    if !(sinr >= 0.0) {
        return Err(Error::InvalidParameter(format!("negative SINR {sinr}")));
    }
    Ok(shannon(sinr, bandwidth))
}

/// Information bits decodable from a piecewise-constant SINR profile.
pub fn decoded_bits(segments: &[SinrSegment], bandwidth: f64) -> Result<f64> {
    if segments.is_empty() {
        return Err(Error::InvalidParameter("no SINR segments".into()));
    }
    segments.iter().try_fold(0.0, |acc, seg| {
        if !(seg.duration >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "negative segment duration {}",
                seg.duration
            )));
        }
        Ok(acc + seg.duration * capacity(seg.sinr, bandwidth)?)
    })
}

/// Temporal autocorrelation of the Jakes fading model, `J0(2 pi f_d tau)`.
pub fn jakes_autocorrelation(tau: f64, max_doppler: f64) -> f64 {
    bessel_j0(2.0 * std::f64::consts::PI * max_doppler * tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mean_power_examples() {
        let p = PropagationParams::default();
        let o = Position::new(0.0, 0.0);
        let unit = PropagationParams { tx_power: 0.01, ..p };
        assert!((mean_rx_power(o, Position::new(1.0, 0.0), &unit).unwrap() - 0.01).abs() < 1e-18);
        let at60 = mean_rx_power(o, Position::new(60.0, 0.0), &p).unwrap();
        assert!((at60 - 0.01 / 60f64.powf(3.5)).abs() < 1e-22);
        assert!((at60 - 5.97e-9).abs() < 0.01e-9);
        let at100 = mean_rx_power(o, Position::new(0.0, 100.0), &p).unwrap();
        assert!((at100 - 1e-9).abs() < 1e-21);
        assert!(matches!(
            mean_rx_power(o, o, &p),
            Err(Error::CoincidentPositions { .. })
        ));
    }

    #[test]
    fn capacity_examples() {
        assert_eq!(capacity(0.0, 1e6).unwrap(), 0.0);
        assert!((capacity(1.0, 1e6).unwrap() - 1e6).abs() < 1e-6);
        assert!((capacity(3.0, 1e6).unwrap() - 2e6).abs() < 1e-6);
        assert!(capacity(-0.1, 1e6).is_err());
    }

    #[test]
    fn decoded_bits_examples() {
        let one = decoded_bits(&[SinrSegment::new(1.0, 1.0)], 1e6).unwrap();
        assert!((one - 1e6).abs() < 1e-6);
        let split = decoded_bits(&[SinrSegment::new(0.5, 1.0), SinrSegment::new(0.5, 1.0)], 1e6)
            .unwrap();
        assert!((split - one).abs() < 1e-6);
        let mixed =
            decoded_bits(&[SinrSegment::new(1e-3, 3.0), SinrSegment::new(2e-3, 1.0)], 1e6).unwrap();
        assert!((mixed - 4000.0).abs() < 1e-9);
        assert!(decoded_bits(&[], 1e6).is_err());
    }

    #[test]
    fn default_params_are_valid() {
        PropagationParams::default().validate().unwrap();
        RateParams::default().validate().unwrap();
        let bad = PropagationParams { path_loss_exp: 2.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = RateParams { rho_ctrl: 3e6, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn capacity_is_strictly_increasing_and_concave() {
        let h = 1e-3;
        let mut prev_slope = f64::INFINITY;
        for k in 0..2000 {
            let g = k as f64 * 0.05;
            let c0 = capacity(g, 1e6).unwrap();
            let c1 = capacity(g + h, 1e6).unwrap();
            let slope = (c1 - c0) / h;
            assert!(slope > 0.0);
            assert!(slope <= prev_slope + 1e-6, "not concave at {g}");
            prev_slope = slope;
        }
    }

    proptest! {
        #[test]
        fn decoded_bits_monotone(
            segs in prop::collection::vec((0.0f64..1e-2, 0.0f64..100.0), 1..8),
            idx in 0usize..8,
            bump_sinr in 0.0f64..10.0,
            bump_dur in 0.0f64..1e-3,
        ) {
            let base: Vec<_> = segs.iter().map(|&(d, g)| SinrSegment::new(d, g)).collect();
            let mut more = base.clone();
            let i = idx % more.len();
            more[i].sinr += bump_sinr;
            more[i].duration += bump_dur;
            let a = decoded_bits(&base, 1e6).unwrap();
            let b = decoded_bits(&more, 1e6).unwrap();
            prop_assert!(b >= a);
        }
    }
}
