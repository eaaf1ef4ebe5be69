//! Reactive coded cooperation: NACK quality feedback, relay rate selection
//! and the per-candidate relay contention state machine.

use std::fmt;

use rand::Rng;

use crate::channel::{capacity, RateParams};
use crate::error::{Error, Result};
use crate::units::{dbm_to_watts, db_to_linear, linear_to_db};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DharqConfig {
    /// Aggregate-power threshold for relay contention, watts.
    pub relay_cs_threshold: f64,
    /// Relay contention window, slots.
    pub cw_rel: u32,
    pub epsilon: f64,
    pub quant_levels: u32,
    /// SINR quantizer span in dB.
    pub quant_range_db: (f64, f64),
}

impl Default for DharqConfig {
    fn default() -> Self {
        Self {
            relay_cs_threshold: dbm_to_watts(-100.0),
            cw_rel: 16,
            epsilon: 0.06,
            quant_levels: 8,
            quant_range_db: (-5.0, 30.0),
        }
    }
}

impl DharqConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cw_rel < 1 {
            return Err(Error::InvalidParameter("cw_rel must be >= 1".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter("epsilon must be > 0".into()));
        }
        if self.quant_levels < 2 {
            return Err(Error::InvalidParameter("quant_levels must be >= 2".into()));
        }
        let (lo, hi) = self.quant_range_db;
        if !(hi > lo) {
            return Err(Error::InvalidParameter("empty quantizer range".into()));
        }
        if !(self.relay_cs_threshold > 0.0) {
            return Err(Error::InvalidParameter("relay carrier-sense threshold must be > 0".into()));
        }
        Ok(())
    }

    fn bin_width_db(&self) -> f64 {
        (self.quant_range_db.1 - self.quant_range_db.0) / self.quant_levels as f64
    }
}

/// Bin index of a linear SINR; values below the span map to bin 0, values
/// above it to the top bin.
pub fn quantize_sinr(gamma: f64, cfg: &DharqConfig) -> u32 {
    if !(gamma > 0.0) {
        return 0;
    }
    let k = ((linear_to_db(gamma) - cfg.quant_range_db.0) / cfg.bin_width_db()).floor();
    k.clamp(0.0, (cfg.quant_levels - 1) as f64) as u32
}

/// Lower edge of a bin as a linear SINR. Bin 0 is credited as zero so that
/// below-range reports never overstate the destination's state.
pub fn dequantize(bin: u32, cfg: &DharqConfig) -> f64 {
    if bin == 0 {
        return 0.0;
    }
    let bin = bin.min(cfg.quant_levels - 1);
    db_to_linear(cfg.quant_range_db.0 + bin as f64 * cfg.bin_width_db())
}

/// Payload of a NACK frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NackPayload {
    pub sinr_index: u32,
    pub source: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GiveUpReason {
    CsBusy,
    RateTooLow,
    Nav,
}

impl GiveUpReason {
    pub const ALL: [GiveUpReason; 3] = [Self::CsBusy, Self::RateTooLow, Self::Nav];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::CsBusy => "cs_busy",
            Self::RateTooLow => "rate_too_low",
            Self::Nav => "nav",
        }
    }
}

impl fmt::Display for GiveUpReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateDecision {
    Relay(f64),
    /// The computed rate does not beat the direct link.
    RateTooLow(f64),
    /// The destination's reported state already covers the target.
    AlreadyDecodable,
}

/// Relay information rate meeting `L (1 + eps)` decodable bits at the
/// destination, compared against the direct rate.
pub fn relay_rate(gamma_sd_tilde: f64, gamma_cd: f64, rates: &RateParams, bandwidth: f64, cfg: &DharqConfig) -> Result<RateDecision> {
    let c_sd = capacity(gamma_sd_tilde, bandwidth)?;
    let c_cd = capacity(gamma_cd, bandwidth)?;
    let den = (1.0 + cfg.epsilon) * rates.rho_data - c_sd;
    if !(den > 0.0) {
        return Ok(RateDecision::AlreadyDecodable);
    }
    let rho = rates.rho_data * c_cd / den;
    if rho <= rates.rho_data {
        Ok(RateDecision::RateTooLow(rho))
    } else {
        Ok(RateDecision::Relay(rho))
    }
}

/// Decodable bits at the destination after a relay phase at `rho_rel`,
/// with constant SINRs over each part.
pub fn combined_bits(gamma_sd: f64, gamma_cd: f64, rho_rel: f64, rates: &RateParams, bandwidth: f64) -> Result<f64> {
    let t_sd = rates.payload_bits / rates.rho_data;
    let t_cd = rates.payload_bits / rho_rel;
    Ok(t_sd * capacity(gamma_sd, bandwidth)? + t_cd * capacity(gamma_cd, bandwidth)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidatePhase {
    Contending,
    Transmitting,
    GaveUp(GiveUpReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContentionEvent {
    SlotIdle,
    PowerAboveThreshold,
    NavActive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ContentionAction {
    None,
    StartRelay { rate: f64, duration: f64 },
    Abandon(GiveUpReason),
}

/// A node that cached the source payload and decoded the NACK.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelayCandidateState {
    pub gamma_cd: f64,
    pub rate: f64,
    pub backoff_remaining: u32,
    pub phase: CandidatePhase,
}

impl RelayCandidateState {
    /// Evaluates the rate rule and, if the node qualifies, draws its
    /// contention backoff in `[1, CW_rel]`.
    pub fn enter<R: Rng + ?Sized>(
        gamma_sd_tilde: f64,
        gamma_cd: f64,
        rates: &RateParams,
        bandwidth: f64,
        cfg: &DharqConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let decision = relay_rate(gamma_sd_tilde, gamma_cd, rates, bandwidth, cfg)?;
        Ok(match decision {
            RateDecision::Relay(rate) => Self {
                gamma_cd,
                rate,
                backoff_remaining: rng.random_range(1..=cfg.cw_rel),
                phase: CandidatePhase::Contending,
            },
            RateDecision::RateTooLow(rate) => Self {
                gamma_cd,
                rate,
                backoff_remaining: 0,
                phase: CandidatePhase::GaveUp(GiveUpReason::RateTooLow),
            },
            RateDecision::AlreadyDecodable => Self {
                gamma_cd,
                rate: 0.0,
                backoff_remaining: 0,
                phase: CandidatePhase::GaveUp(GiveUpReason::RateTooLow),
            },
        })
    }

    pub fn give_up_reason(&self) -> Option<GiveUpReason> {
        match self.phase {
            CandidatePhase::GaveUp(r) => Some(r),
            _ => None,
        }
    }

    /// One contention slot. Virtual carrier sense is checked before the
    /// power measurement.
    pub fn contention_step(&mut self, event: ContentionEvent, payload_bits: f64) -> Result<ContentionAction> {
        if self.phase != CandidatePhase::Contending {
            return Err(Error::Protocol { phase: format!("{:?}", self.phase), event: format!("{event:?}") });
        }
        Ok(match event {
            ContentionEvent::NavActive => {
                self.phase = CandidatePhase::GaveUp(GiveUpReason::Nav);
                ContentionAction::Abandon(GiveUpReason::Nav)
            }
            ContentionEvent::PowerAboveThreshold => {
                self.phase = CandidatePhase::GaveUp(GiveUpReason::CsBusy);
                ContentionAction::Abandon(GiveUpReason::CsBusy)
            }
            ContentionEvent::SlotIdle => {
                self.backoff_remaining = self.backoff_remaining.saturating_sub(1);
                if self.backoff_remaining == 0 {
                    self.phase = CandidatePhase::Transmitting;
                    ContentionAction::StartRelay { rate: self.rate, duration: payload_bits / self.rate }
                } else {
                    ContentionAction::None
                }
            }
        })
    }
}

/// Best relay for the idealized variant: the candidate with the largest
/// SINR towards the destination.
pub fn ideal_relay_select(candidates: &[(usize, f64)]) -> Option<usize> {
    candidates
        .iter()
        .filter(|(_, g)| !g.is_nan())
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|&(n, _)| n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> DharqConfig {
        DharqConfig::default()
    }

    #[test]
    fn quantizer_example() {
        let c = cfg();
        assert_eq!(quantize_sinr(db_to_linear(10.0), &c), 3);
        assert!((linear_to_db(dequantize(3, &c)) - 8.125).abs() < 1e-12);
        assert_eq!(quantize_sinr(db_to_linear(-20.0), &c), 0);
        assert_eq!(quantize_sinr(0.0, &c), 0);
        assert_eq!(dequantize(0, &c), 0.0);
        assert_eq!(quantize_sinr(db_to_linear(45.0), &c), 7);
        assert!((linear_to_db(dequantize(7, &c)) - 25.625).abs() < 1e-12);
    }

    #[test]
    fn zero_credit_floor() {
        let r = RateParams::default();
        let g = dequantize(quantize_sinr(0.1, &cfg()), &cfg());
        let RateDecision::Relay(rho) = relay_rate(g, 15.0, &r, 1e6, &cfg()).unwrap() else { panic!() };
        assert!((rho - 4e6 / 1.06).abs() < 1e-6);
    }

    #[test]
    fn relay_rate_example() {
        let r = RateParams::default();
        let RateDecision::Relay(rho) = relay_rate(1.0, 7.0, &r, 1e6, &cfg()).unwrap() else { panic!() };
        // C(7) = 3 Mb/s at 1 MHz.
        let want = 2.1e6 * 3e6 / (1.06 * 2.1e6 - 1e6);
        assert!((rho - want).abs() < 1e-6 * want);
        let bits = combined_bits(1.0, 7.0, rho, &r, 1e6).unwrap();
        assert!((bits - 5300.0).abs() < 1e-9 * 5300.0);
    }

    #[test]
    fn refusal_boundaries() {
        let r = RateParams::default();
        let c = cfg();
        // C(gamma_cd) equal to the remaining requirement gives exactly rho_data.
        let need = 1.06 * 2.1e6 - 1e6;
        let g_cd = (2f64).powf(need / 1e6) - 1.0;
        match relay_rate(1.0, g_cd, &r, 1e6, &c).unwrap() {
            RateDecision::RateTooLow(rho) | RateDecision::Relay(rho) => assert!((rho - 2.1e6).abs() < 1e-3),
            d => panic!("{d:?}"),
        }
        assert_eq!(relay_rate(100.0, 3.0, &r, 1e6, &c).unwrap(), RateDecision::AlreadyDecodable);
        assert!(relay_rate(-1.0, 3.0, &r, 1e6, &c).is_err());
    }

    #[test]
    fn contention_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = RateParams::default();
        let mut a = RelayCandidateState::enter(1.0, 7.0, &r, 1e6, &cfg(), &mut rng).unwrap();
        a.backoff_remaining = 3;
        let mut b = a;
        b.backoff_remaining = 7;
        for _ in 0..2 {
            assert_eq!(a.contention_step(ContentionEvent::SlotIdle, 5000.0).unwrap(), ContentionAction::None);
            b.contention_step(ContentionEvent::SlotIdle, 5000.0).unwrap();
        }
        assert!(matches!(a.contention_step(ContentionEvent::SlotIdle, 5000.0).unwrap(), ContentionAction::StartRelay { .. }));
        assert_eq!(
            b.contention_step(ContentionEvent::PowerAboveThreshold, 5000.0).unwrap(),
            ContentionAction::Abandon(GiveUpReason::CsBusy)
        );
        assert!(b.contention_step(ContentionEvent::SlotIdle, 5000.0).is_err());
        let mut c = RelayCandidateState::enter(1.0, 7.0, &r, 1e6, &cfg(), &mut rng).unwrap();
        assert_eq!(c.contention_step(ContentionEvent::NavActive, 5000.0).unwrap(), ContentionAction::Abandon(GiveUpReason::Nav));
        let low = RelayCandidateState::enter(1.0, 0.5, &r, 1e6, &cfg(), &mut rng).unwrap();
        assert_eq!(low.give_up_reason(), Some(GiveUpReason::RateTooLow));
    }

    #[test]
    fn equal_backoffs_transmit_together() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = RateParams::default();
        let mut a = RelayCandidateState::enter(1.0, 7.0, &r, 1e6, &cfg(), &mut rng).unwrap();
        a.backoff_remaining = 4;
        let mut b = a;
        let mut started = 0;
        for _ in 0..4 {
            for s in [&mut a, &mut b] {
                if let ContentionAction::StartRelay { .. } = s.contention_step(ContentionEvent::SlotIdle, 5000.0).unwrap() {
                    started += 1;
                }
            }
        }
        assert_eq!(started, 2);
    }

    #[test]
    fn ideal_selection() {
        assert_eq!(ideal_relay_select(&[]), None);
        assert_eq!(ideal_relay_select(&[(4, 0.1)]), Some(4));
        assert_eq!(ideal_relay_select(&[(1, 0.5), (2, 3.0), (3, 1.2)]), Some(2));
    }

    proptest! {
        #[test]
        fn quantizer_is_conservative(db in -40.0f64..60.0) {
            let c = cfg();
            let g = db_to_linear(db);
            prop_assert!(dequantize(quantize_sinr(g, &c), &c) <= g);
        }

        #[test]
        fn rate_closure(g_sd in 0.0f64..3.0, g_cd in 0.0f64..1000.0) {
            let r = RateParams::default();
            let c = cfg();
            let rho = match relay_rate(g_sd, g_cd, &r, 1e6, &c).unwrap() {
                RateDecision::Relay(x) | RateDecision::RateTooLow(x) => x,
                RateDecision::AlreadyDecodable => return Ok(()),
            };
            prop_assume!(rho > 0.0);
            let bits = combined_bits(g_sd, g_cd, rho, &r, 1e6).unwrap();
            prop_assert!((bits - 5300.0).abs() < 1e-9 * 5300.0);
        }

        #[test]
        fn ideal_choice_is_scale_invariant(gs in proptest::collection::vec(0.0f64..100.0, 1..10), k in 0.01f64..100.0) {
            let a: Vec<(usize, f64)> = gs.iter().cloned().enumerate().collect();
            let b: Vec<(usize, f64)> = gs.iter().map(|g| g * k).enumerate().collect();
            let best = ideal_relay_select(&a).unwrap();
            prop_assert!(a.iter().all(|(_, g)| *g <= a[best].1));
            // Scaling can merge near-ties through rounding; compare the values.
            let other = ideal_relay_select(&b).unwrap();
            prop_assert!((a[other].1 - a[best].1).abs() <= 1e-12 * a[best].1);
        }
    }
}
