//! Jakes-model Rayleigh fading via a sum of sinusoids.
//!
//! `h(t) = M^-1/2 * sum_n exp(j (2 pi f_d cos(a_n) t + phi_n))` with arrival
//! angles `a_n = pi (n - 1/2 + theta) / M` evenly spread over a half circle
//! (random common offset `theta`) and i.i.d. uniform phases `phi_n`. The even
//! spread makes the time-averaged autocorrelation of every realization a
//! midpoint rule for `(1/pi) int_0^pi cos(x cos a) da = J0(x)`, and distinct
//! Doppler shifts make the long-run mean power exactly one.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::units::SimTime;

use super::bessel_j0;

pub const DEFAULT_OSCILLATORS: usize = 64;

#[derive(Debug, Clone)]
pub struct JakesProcess {
    max_doppler: f64,
    omegas: Vec<f64>,
    phases: Vec<f64>,
    /// Block fading gain when the Doppler spread is zero.
    frozen_gain: Option<f64>,
}

impl JakesProcess {
    pub fn new<R: Rng + ?Sized>(max_doppler: f64, rng: &mut R) -> Self {
        Self::with_oscillators(max_doppler, DEFAULT_OSCILLATORS, rng)
    }

    pub fn with_oscillators<R: Rng + ?Sized>(max_doppler: f64, m: usize, rng: &mut R) -> Self {
        assert!(m >= 1);
        if max_doppler == 0.0 {
            let g: f64 = Exp1.sample(rng);
            return Self {
                max_doppler,
                omegas: Vec::new(),
                phases: Vec::new(),
                frozen_gain: Some(g),
            };
        }
        let theta: f64 = rng.random_range(-0.5..0.5);
        let mf = m as f64;
        let omegas = (0..m)
            .map(|n| {
                let angle = PI * (n as f64 + 0.5 + theta) / mf;
                2.0 * PI * max_doppler * angle.cos()
            })
            .collect();
        let phases = (0..m).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        Self { max_doppler, omegas, phases, frozen_gain: None }
    }

    pub fn max_doppler(&self) -> f64 {
        self.max_doppler
    }

    pub fn oscillators(&self) -> usize {
        self.omegas.len()
    }

    /// Complex channel coefficient at time `t` (unit mean power).
    pub fn coefficient(&self, t: f64) -> Complex64 {
        if let Some(g) = self.frozen_gain {
            return Complex64::new(g.sqrt(), 0.0);
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for (w, p) in self.omegas.iter().zip(&self.phases) {
            acc += Complex64::from_polar(1.0, w * t + p);
        }
        acc / (self.omegas.len() as f64).sqrt()
    }

    pub fn gain(&self, t: f64) -> f64 {
        self.coefficient(t).norm_sqr()
    }

    /// Coefficients on a uniform grid `t0 + k dt`, stepping phasors instead of
    /// re-evaluating every oscillator.
    pub fn coefficients(&self, t0: f64, dt: f64, count: usize) -> Vec<Complex64> {
        if self.frozen_gain.is_some() {
            return vec![self.coefficient(t0); count];
        }
        const RESYNC: usize = 4096;
        let scale = 1.0 / (self.omegas.len() as f64).sqrt();
        let rot: Vec<Complex64> =
            self.omegas.iter().map(|w| Complex64::from_polar(1.0, w * dt)).collect();
        let mut state: Vec<Complex64> = Vec::new();
        let mut out = Vec::with_capacity(count);
        for k in 0..count {
            if k % RESYNC == 0 {
                let t = t0 + k as f64 * dt;
                state = self
                    .omegas
                    .iter()
                    .zip(&self.phases)
                    .map(|(w, p)| Complex64::from_polar(1.0, w * t + p))
                    .collect();
            } else {
                for (z, r) in state.iter_mut().zip(&rot) {
                    *z *= r;
                }
            }
            out.push(state.iter().sum::<Complex64>() * scale);
        }
        out
    }
}

/// Power-gain multipliers sampled at a fixed period.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingTrace {
    pub sample_period: f64,
    pub gains: Vec<f64>,
    coefficients: Vec<Complex64>,
}

impl FadingTrace {
    pub fn coefficients(&self) -> &[Complex64] {
        &self.coefficients
    }

    pub fn mean_gain(&self) -> f64 {
        self.gains.iter().sum::<f64>() / self.gains.len() as f64
    }

    /// Normalized autocorrelation of the complex process at a lag in samples.
    pub fn autocorrelation(&self, lag: usize) -> f64 {
        let h = &self.coefficients;
        if lag >= h.len() {
            return 0.0;
        }
        let n = h.len() - lag;
        let mut cross = Complex64::new(0.0, 0.0);
        for k in 0..n {
            cross += h[k + lag] * h[k].conj();
        }
        let power: f64 = h.iter().map(|z| z.norm_sqr()).sum::<f64>() / h.len() as f64;
        cross.re / n as f64 / power
    }
}

/// Samples one Jakes fading realization over `duration` seconds.
///
/// A period longer than the duration yields a single-sample trace.
pub fn sample_fading_trace<R: Rng + ?Sized>(
    duration: f64,
    dt: f64,
    max_doppler: f64,
    rng: &mut R,
) -> Result<FadingTrace> {
    if !(duration > 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "fading trace needs duration > 0 and dt > 0, got {duration}, {dt}"
        )));
    }
    if !(max_doppler >= 0.0) {
        return Err(Error::InvalidParameter("max Doppler must be >= 0".into()));
    }
    let count = ((duration / dt).floor() as usize).max(1);
    let process = JakesProcess::new(max_doppler, rng);
    let coefficients = process.coefficients(0.0, dt, count);
    let gains = coefficients.iter().map(|z| z.norm_sqr()).collect();
    Ok(FadingTrace { sample_period: dt, gains, coefficients })
}

/// Per-link fading as seen by the simulator.
///
/// The gain is held constant within each `sample_period` interval. Exact
/// coefficients are produced on a coarser anchor grid and linearly
/// interpolated in between, rescaled so the interpolated coefficient keeps
/// unit variance.
#[derive(Debug, Clone)]
pub struct LinkFading {
    process: JakesProcess,
    sample_ns: u64,
    anchor_ns: u64,
    anchor_corr: f64,
    rot: Vec<Complex64>,
    state: Vec<Complex64>,
    /// Index of the anchor at the left of the cached pair.
    left: u64,
    h_left: Complex64,
    h_right: Complex64,
    steps_since_sync: u32,
}

impl LinkFading {
    pub fn new(process: JakesProcess, sample_period: SimTime, anchor_period: SimTime) -> Self {
        assert!(sample_period.0 > 0 && anchor_period.0 >= sample_period.0);
        let anchor_s = anchor_period.as_secs();
        let anchor_corr = bessel_j0(2.0 * PI * process.max_doppler * anchor_s);
        let rot = process.omegas.iter().map(|w| Complex64::from_polar(1.0, w * anchor_s)).collect();
        let mut lf = Self {
            process,
            sample_ns: sample_period.0,
            anchor_ns: anchor_period.0,
            anchor_corr,
            rot,
            state: Vec::new(),
            left: 0,
            h_left: Complex64::new(0.0, 0.0),
            h_right: Complex64::new(0.0, 0.0),
            steps_since_sync: 0,
        };
        lf.sync(0);
        lf
    }

    fn sync(&mut self, left: u64) {
        let t = (left + 1) as f64 * self.anchor_ns as f64 * 1e-9;
        self.state = self
            .process
            .omegas
            .iter()
            .zip(&self.process.phases)
            .map(|(w, p)| Complex64::from_polar(1.0, w * t + p))
            .collect();
        self.left = left;
        self.h_left = self.process.coefficient(left as f64 * self.anchor_ns as f64 * 1e-9);
        self.h_right = self.right_from_state();
        self.steps_since_sync = 0;
    }

    fn right_from_state(&self) -> Complex64 {
        if self.process.frozen_gain.is_some() {
            return self.process.coefficient(0.0);
        }
        self.state.iter().sum::<Complex64>() / (self.state.len() as f64).sqrt()
    }

    fn advance(&mut self) {
        if self.steps_since_sync >= 4096 {
            self.sync(self.left + 1);
            return;
        }
        for (z, r) in self.state.iter_mut().zip(&self.rot) {
            *z *= r;
        }
        self.left += 1;
        self.h_left = self.h_right;
        self.h_right = self.right_from_state();
        self.steps_since_sync += 1;
    }

    /// Power gain for the sample interval containing `t`.
    pub fn gain(&mut self, t: SimTime) -> f64 {
        if let Some(g) = self.process.frozen_gain {
            return g;
        }
        let sample_start = t.0 / self.sample_ns * self.sample_ns;
        let k = sample_start / self.anchor_ns;
        if k > self.left && k - self.left <= 32 {
            while self.left < k {
                self.advance();
            }
        } else if k != self.left {
            self.sync(k);
        }
        let u = (sample_start - k * self.anchor_ns) as f64 / self.anchor_ns as f64;
        let h = self.h_left * (1.0 - u) + self.h_right * u;
        let var = (1.0 - u).powi(2) + u * u + 2.0 * u * (1.0 - u) * self.anchor_corr;
        h.norm_sqr() / var
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::jakes_autocorrelation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_doppler_is_block_fading() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tr = sample_fading_trace(1.0, 1e-3, 0.0, &mut rng).unwrap();
        assert_eq!(tr.gains.len(), 1000);
        assert!(tr.gains.iter().all(|&g| g == tr.gains[0]));
        assert!(tr.gains[0] > 0.0);
    }

    #[test]
    fn single_sample_when_period_exceeds_duration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tr = sample_fading_trace(1e-3, 1.0, 11.1, &mut rng).unwrap();
        assert_eq!(tr.gains.len(), 1);
        assert!(sample_fading_trace(0.0, 1.0, 11.1, &mut rng).is_err());
    }

    #[test]
    fn seeded_traces_are_identical() {
        let a = sample_fading_trace(0.5, 1e-4, 11.1, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_fading_trace(0.5, 1e-4, 11.1, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stepping_matches_direct_evaluation() {
        let p = JakesProcess::new(11.1, &mut ChaCha8Rng::seed_from_u64(2));
        let zs = p.coefficients(0.3, 1e-4, 10_000);
        for k in (0..10_000).step_by(997) {
            let d = p.coefficient(0.3 + k as f64 * 1e-4);
            assert!((zs[k] - d).norm() < 1e-9);
        }
    }

    #[test]
    fn long_trace_mean_and_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let tr = sample_fading_trace(1000.0, 1e-3, 11.1, &mut rng).unwrap();
        assert_eq!(tr.gains.len(), 1_000_000);
        let m = tr.mean_gain();
        assert!((0.99..=1.01).contains(&m), "mean {m}");
        let r10 = tr.autocorrelation(10);
        assert!((r10 - 0.8809).abs() < 0.05, "r(10ms) = {r10}");
        let r100 = tr.autocorrelation(100);
        assert!((r100 - jakes_autocorrelation(0.1, 11.1)).abs() < 0.05, "r(100ms) = {r100}");
    }

    #[test]
    fn link_fading_tracks_process() {
        let proc_ = JakesProcess::new(11.1, &mut ChaCha8Rng::seed_from_u64(4));
        let reference = proc_.clone();
        let mut lf = LinkFading::new(proc_, SimTime::from_micros(10), SimTime::from_micros(1000));
        // at anchors the interpolation is exact
        for k in [0u64, 1, 2, 3, 50, 51, 7000] {
            let t = SimTime::from_micros(k * 1000);
            let g = lf.gain(t);
            assert!((g - reference.gain(t.as_secs())).abs() < 1e-9, "anchor {k}");
        }
        // in between, the slot-held gain stays close to the exact process
        let mut worst = 0.0f64;
        for slot in 700_000u64..700_500 {
            let t = SimTime::from_micros(slot * 10 + 3);
            let g = lf.gain(t);
            let exact = reference.gain((slot * 10) as f64 * 1e-6);
            worst = worst.max((g - exact).abs() / (exact + 0.05));
        }
        assert!(worst < 0.02, "worst relative deviation {worst}");
    }
}
