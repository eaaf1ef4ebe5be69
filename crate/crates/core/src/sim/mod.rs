//! Discrete-event network simulator: topology and traffic generation,
//! per-node MAC and relay state machines over a shared fading channel, and
//! the statistics reported per replication.

mod engine;
mod metrics;
mod sweep;

pub use engine::{simulate, EventRecord, RunOutput};
pub use metrics::{mean_ci, relay_distance_cdf, MetricsReport, RelaySample, METRICS_HEADER};
pub use sweep::{sweep, SweepAxis, SweepPoint};


use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel::{PropagationParams, RateParams};
use crate::dharq::DharqConfig;
use crate::error::{Error, Result};
use crate::mac::MacConfig;
use crate::units::Position;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Protocol {
    Csma,
    Dharq,
    DharqIdealBound,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Self::Csma, Self::Dharq, Self::DharqIdealBound];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Csma => "csma",
            Self::Dharq => "dharq",
            Self::DharqIdealBound => "dharq_ideal_bound",
        }
    }

    pub fn cooperative(&self) -> bool {
        !matches!(self, Self::Csma)
    }

    /// Retry limit giving comparable reliability for each protocol.
    pub fn default_mac(&self) -> MacConfig {
        if self.cooperative() {
            MacConfig::cooperative()
        } else {
            MacConfig::basic()
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == norm)
            .ok_or_else(|| Error::Config(format!("unknown protocol '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopologySpec {
    pub nodes: usize,
    pub width: f64,
    pub height: f64,
    /// Source–destination distance of a pair pinned at the playground center.
    pub pinned_delta: Option<f64>,
    pub neighbor_radius: f64,
    pub max_retries: u32,
}

impl Default for TopologySpec {
    fn default() -> Self {
        Self { nodes: 35, width: 300.0, height: 300.0, pinned_delta: None, neighbor_radius: 60.0, max_retries: 1000 }
    }
}

impl TopologySpec {
    pub fn validate(&self) -> Result<()> {
        if self.nodes < 2 {
            return Err(Error::InvalidParameter("topology needs at least 2 nodes".into()));
        }
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(Error::InvalidParameter("playground must have positive size".into()));
        }
        if !(self.neighbor_radius > 0.0) {
            return Err(Error::InvalidParameter("neighbor_radius must be > 0".into()));
        }
        if let Some(d) = self.pinned_delta {
            if !(d > 0.0 && d <= self.width) {
                return Err(Error::InvalidParameter(format!("pinned distance {d} does not fit the playground")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub positions: Vec<Position>,
    pub width: f64,
    pub height: f64,
    /// Indices of the pinned source and destination.
    pub pinned: Option<(usize, usize)>,
}

impl Topology {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn neighbors(&self, n: usize, radius: f64) -> Vec<usize> {
        let p = self.positions[n];
        (0..self.len()).filter(|&m| m != n && self.positions[m].distance(&p) <= radius).collect()
    }
}

/// Uniform placement; the pinned pair (if any) takes indices 0 and 1.
/// Placements that leave a node without neighbors are redrawn.
pub fn generate_topology<R: Rng + ?Sized>(rng: &mut R, spec: &TopologySpec) -> Result<Topology> {
    spec.validate()?;
    for _ in 0..spec.max_retries.max(1) {
        let mut positions = Vec::with_capacity(spec.nodes);
        let pinned = spec.pinned_delta.map(|d| {
            let (cx, cy) = (spec.width / 2.0, spec.height / 2.0);
            positions.push(Position::new(cx - d / 2.0, cy));
            positions.push(Position::new(cx + d / 2.0, cy));
            (0, 1)
        });
        while positions.len() < spec.nodes {
            let p = Position::new(rng.random_range(0.0..spec.width), rng.random_range(0.0..spec.height));
            if positions.contains(&p) {
                continue;
            }
            positions.push(p);
        }
        let topo = Topology { positions, width: spec.width, height: spec.height, pinned };
        if (0..topo.len()).all(|n| !topo.neighbors(n, spec.neighbor_radius).is_empty()) {
            return Ok(topo);
        }
    }
    Err(Error::InvalidParameter(format!(
        "no topology without isolated nodes after {} draws (radius {} m)",
        spec.max_retries, spec.neighbor_radius
    )))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficConfig {
    /// Offered load per node, kbit/s.
    pub lambda: f64,
    pub neighbor_radius: f64,
    /// Simulated time, seconds.
    pub duration: f64,
    pub payload_bits: f64,
    /// Leading share of the run excluded from statistics.
    pub warmup_fraction: f64,
    /// Arrivals beyond this backlog are discarded at the source.
    pub queue_limit: usize,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self { lambda: 100.0, neighbor_radius: 60.0, duration: 10.0, payload_bits: 5000.0, warmup_fraction: 0.1, queue_limit: 50 }
    }
}

impl TrafficConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidParameter("lambda must be >= 0".into()));
        }
        if !(self.neighbor_radius > 0.0) {
            return Err(Error::InvalidParameter("neighbor_radius must be > 0".into()));
        }
        if !(self.duration > 0.0) {
            return Err(Error::InvalidParameter("duration must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::InvalidParameter("warmup_fraction must lie in [0, 1)".into()));
        }
        if self.queue_limit == 0 {
            return Err(Error::InvalidParameter("queue_limit must be >= 1".into()));
        }
        Ok(())
    }

    /// Payload arrivals per second per node.
    pub fn arrival_rate(&self) -> f64 {
        self.lambda * 1e3 / self.payload_bits
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub protocol: Protocol,
    pub props: PropagationParams,
    pub rates: RateParams,
    pub mac: MacConfig,
    pub dharq: DharqConfig,
    pub topology: TopologySpec,
    pub traffic: TrafficConfig,
    pub replications: u32,
    /// Spacing of exact fading evaluations; slots in between interpolate.
    pub fading_anchor: f64,
    /// Extra path loss applied to every link on top of `P δ^-α`, dB.
    pub reference_loss_db: f64,
    pub log_events: bool,
    pub trace_mac: bool,
}

impl RunConfig {
    pub fn new(protocol: Protocol) -> Self {
        Self {
            seed: 1,
            protocol,
            props: PropagationParams::default(),
            rates: RateParams::default(),
            mac: protocol.default_mac(),
            dharq: DharqConfig::default(),
            topology: TopologySpec::default(),
            traffic: TrafficConfig::default(),
            replications: 1,
            fading_anchor: 1e-3,
            reference_loss_db: design_reference_loss(&PropagationParams::default(), &RateParams::default(), &LinkDesign::default()),
            log_events: false,
            trace_mac: false,
        }
    }

    /// Same scenario and seed under another protocol, with that protocol's
    /// retry limit.
    pub fn with_protocol(&self, protocol: Protocol) -> Self {
        let srl = protocol.default_mac().srl;
        Self { protocol, mac: MacConfig { srl, ..self.mac }, ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        self.props.validate()?;
        self.rates.validate()?;
        self.mac.validate()?;
        self.dharq.validate()?;
        self.topology.validate()?;
        self.traffic.validate()?;
        if self.replications == 0 {
            return Err(Error::InvalidParameter("replications must be >= 1".into()));
        }
        if !(self.reference_loss_db >= 0.0 && self.reference_loss_db.is_finite()) {
            return Err(Error::InvalidParameter("reference_loss_db must be finite and >= 0".into()));
        }
        if !(self.fading_anchor >= self.mac.slot) {
            return Err(Error::InvalidParameter("fading_anchor must be at least one slot".into()));
        }
        if (self.traffic.payload_bits - self.rates.payload_bits).abs() > 0.0 {
            return Err(Error::InvalidParameter("traffic and rate payload sizes differ".into()));
        }
        if (self.mac.cs_threshold - self.props.cs_threshold).abs() > 0.0 {
            return Err(Error::InvalidParameter("MAC and channel carrier-sense thresholds differ".into()));
        }
        Ok(())
    }

    /// Seed of replication `rep`.
    pub fn replication_seed(&self, rep: u32) -> u64 {
        mix(self.seed ^ 0x5eed_0000_0000_0000, rep as u64)
    }
}

/// Link design target: the data rate succeeds with probability `success`
/// over `attempts` independent Rayleigh-faded tries at `distance`, without
/// interference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkDesign {
    pub distance: f64,
    pub attempts: u32,
    pub success: f64,
}

impl Default for LinkDesign {
    fn default() -> Self {
        Self { distance: 60.0, attempts: 4, success: 0.99 }
    }
}

/// Reference loss (dB) that makes `rates.rho_data` meet `design`.
pub fn design_reference_loss(props: &PropagationParams, rates: &RateParams, design: &LinkDesign) -> f64 {
    let threshold = (rates.rho_data / props.bandwidth * std::f64::consts::LN_2).exp_m1();
    let per_attempt_outage = (1.0 - design.success).powf(1.0 / design.attempts as f64);
    let mean_snr = threshold / -(-per_attempt_outage).ln_1p();
    let budget = props.mean_power_at(design.distance) / props.noise_floor;
    (10.0 * (budget / mean_snr).log10()).max(0.0)
}

/// Runs every replication (in parallel) and returns their reports in
/// replication order.
pub fn run(cfg: &RunConfig) -> Result<Vec<MetricsReport>> {
    cfg.validate()?;
    let quiet = RunConfig { log_events: false, trace_mac: false, ..*cfg };
    (0..cfg.replications)
        .into_par_iter()
        .map(|rep| simulate(&quiet, rep).map(|o| o.report))
        .collect()
}

pub(crate) fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over a combined word
    let mut z = a.wrapping_add(b.wrapping_mul(0x9e37_79b9_7f4a_7c15)).wrapping_add(0x632b_e59b_d9b4_e019);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Stream {
    Topology = 1,
    Traffic = 2,
    Fading = 3,
    Backoff = 4,
    Relay = 5,
}

pub(crate) fn stream(seed: u64, kind: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(seed, kind as u64), index))
}
