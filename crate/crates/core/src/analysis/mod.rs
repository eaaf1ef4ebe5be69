//! Numerical evaluation of the interferer-outage and cooperator-availability
//! distributions for a source, a destination and a single interferer under
//! carrier sensing, with block Rayleigh fading.
//!
//! Notation in code: `a` is the mean received power of the useful link
//! (`P d^-alpha`), `b` that of the interfering link, `x = |t_i|` the
//! interference-free part of the packet.

mod heatmap;
pub mod montecarlo;
mod surface;

pub use heatmap::{format_sig6, heatmap, heatmaps, write_heatmap_csv, GridSpec, HeatCell, Quantity};
pub use surface::{CoopField, CoopValues};

use std::fmt;
use std::sync::Arc;

use crate::channel::{mean_rx_power, PropagationParams, RateParams};
use crate::error::{Error, Result};
use crate::quadrature::{integrate_adaptive, AdaptiveRule, GaussLegendre};
use crate::units::Position;

/// Source, destination and interferer placement.
#[derive(Debug, Clone, Copy)]
pub struct Scenario3 {
    pub p_s: Position,
    pub p_d: Position,
    pub p_i: Position,
    pub props: PropagationParams,
    pub rates: RateParams,
}

impl Scenario3 {
    pub fn new(
        p_s: Position,
        p_d: Position,
        p_i: Position,
        props: PropagationParams,
        rates: RateParams,
    ) -> Result<Self> {
        distinct(&[p_s, p_d, p_i])?;
        props.validate()?;
        rates.validate()?;
        Ok(Self { p_s, p_d, p_i, props, rates })
    }

    /// Default parameters with the given geometry.
    pub fn with_defaults(p_s: Position, p_d: Position, p_i: Position) -> Result<Self> {
        Self::new(p_s, p_d, p_i, PropagationParams::default(), RateParams::default())
    }

    pub fn packet_duration(&self) -> f64 {
        self.rates.payload_duration()
    }
}

/// Axis-aligned rectangle in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        if !(x_max > x_min && y_max > y_min) {
            return Err(Error::InvalidParameter(format!(
                "degenerate rectangle [{x_min}, {x_max}] x [{y_min}, {y_max}]"
            )));
        }
        Ok(Self { x_min, x_max, y_min, y_max })
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn contains(&self, p: &Position) -> bool {
        (self.x_min..=self.x_max).contains(&p.x) && (self.y_min..=self.y_max).contains(&p.y)
    }
}

/// Source, destination and candidate cooperator, plus the region over which
/// the interferer position is integrated.
#[derive(Debug, Clone, Copy)]
pub struct ScenarioCoop {
    pub p_s: Position,
    pub p_d: Position,
    pub p_c: Position,
    pub region: Rect,
    pub props: PropagationParams,
    pub rates: RateParams,
}

impl ScenarioCoop {
    pub fn new(
        p_s: Position,
        p_d: Position,
        p_c: Position,
        region: Rect,
        props: PropagationParams,
        rates: RateParams,
    ) -> Result<Self> {
        distinct(&[p_s, p_d, p_c])?;
        if !(region.area() > 0.0) {
            return Err(Error::InvalidParameter("integration region has no area".into()));
        }
        props.validate()?;
        rates.validate()?;
        Ok(Self { p_s, p_d, p_c, region, props, rates })
    }

    /// Canonical geometry: S at the origin, D at (60, 0), region
    /// [-60, 180] x [-120, 120] m, default parameters.
    pub fn canonical(p_c: Position) -> Result<Self> {
        Self::new(
            Position::new(0.0, 0.0),
            Position::new(60.0, 0.0),
            p_c,
            Rect::new(-60.0, 180.0, -120.0, 120.0)?,
            PropagationParams::default(),
            RateParams::default(),
        )
    }

    pub fn packet_duration(&self) -> f64 {
        self.rates.payload_duration()
    }

    /// The source–cooperator link viewed as a three-node scenario.
    pub fn decode_scenario(&self, p_i: Position) -> Result<Scenario3> {
        Scenario3::new(self.p_s, self.p_c, p_i, self.props, self.rates)
    }

    pub fn interferer_scenario(&self, p_i: Position) -> Result<Scenario3> {
        Scenario3::new(self.p_s, self.p_d, p_i, self.props, self.rates)
    }
}

fn distinct(ps: &[Position]) -> Result<()> {
    for (i, a) in ps.iter().enumerate() {
        for b in &ps[i + 1..] {
            if a == b {
                return Err(Error::CoincidentPositions { x: a.x, y: a.y });
            }
        }
    }
    Ok(())
}

/// Density of the interferer's birth time over [-T, T].
#[derive(Clone)]
pub enum BirthTimeDist {
    Uniform { half_width: f64 },
    Density { half_width: f64, density: Arc<dyn Fn(f64) -> f64 + Send + Sync> },
}

impl fmt::Debug for BirthTimeDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Uniform { half_width } => write!(f, "Uniform(T={half_width})"),
            Self::Density { half_width, .. } => write!(f, "Density(T={half_width})"),
        }
    }
}

impl BirthTimeDist {
    pub fn uniform(half_width: f64) -> Self {
        Self::Uniform { half_width }
    }

    /// An arbitrary density; rejected unless it is non-negative and integrates
    /// to one over [-T, T] within 1e-6.
    pub fn from_density<F>(half_width: f64, density: F) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let d = Self::Density { half_width, density: Arc::new(density) };
        d.validate()?;
        Ok(d)
    }

    pub fn half_width(&self) -> f64 {
        match self {
            Self::Uniform { half_width } | Self::Density { half_width, .. } => *half_width,
        }
    }

    pub fn pdf(&self, t: f64) -> f64 {
        let tw = self.half_width();
        if t < -tw || t > tw {
            return 0.0;
        }
        match self {
            Self::Uniform { half_width } => 0.5 / half_width,
            Self::Density { density, .. } => density(t),
        }
    }

    /// Probability mass over [lo, hi].
    pub fn mass(&self, lo: f64, hi: f64) -> f64 {
        let tw = self.half_width();
        let (lo, hi) = (lo.max(-tw), hi.min(tw));
        if hi <= lo {
            return 0.0;
        }
        match self {
            Self::Uniform { half_width } => (hi - lo) / (2.0 * half_width),
            Self::Density { .. } => {
                let rule = AdaptiveRule { rel_tol: 1e-10, abs_tol: 1e-14, ..Default::default() };
                integrate_adaptive(|t| self.pdf(t), lo, hi, &rule).unwrap_or(f64::NAN)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let tw = self.half_width();
        if !(tw > 0.0) {
            return Err(Error::InvalidParameter("birth-time half width must be > 0".into()));
        }
        for k in 0..=200 {
            let t = -tw + 2.0 * tw * k as f64 / 200.0;
            if !(self.pdf(t) >= 0.0) {
                return Err(Error::InvalidParameter(format!("negative density at t = {t}")));
            }
        }
        let total = self.mass(-tw, tw);
        if !((total - 1.0).abs() <= 1e-6) {
            return Err(Error::InvalidParameter(format!(
                "birth-time density integrates to {total}, not 1"
            )));
        }
        Ok(())
    }
}

/// Numerical settings for the framework.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureConfig {
    /// Upper limit of the received-power integrals, in multiples of the
    /// exponential mean above `eta*`.
    pub eta_truncation_factor: f64,
    /// Gauss–Legendre nodes per half of the birth-time interval.
    pub ti_nodes: usize,
    /// Order of the panel rule in the adaptive power integrals.
    pub eta_nodes: usize,
    pub area_grid: GridSpec,
    pub rel_tol: f64,
    /// Spacing, in natural-log units of mean power, of the tables used for
    /// whole-grid cooperator maps.
    pub table_step: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            eta_truncation_factor: 40.0,
            ti_nodes: 32,
            eta_nodes: 16,
            area_grid: GridSpec::default(),
            rel_tol: 1e-6,
            table_step: 0.08,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eta_truncation_factor < 20.0 {
            return Err(Error::InvalidParameter("eta truncation factor must be >= 20".into()));
        }
        if self.ti_nodes < 16 || self.eta_nodes < 16 {
            return Err(Error::InvalidParameter("node counts must be >= 16".into()));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol <= 1e-2) {
            return Err(Error::InvalidParameter("rel_tol must lie in (0, 1e-2]".into()));
        }
        if !(self.table_step > 0.0 && self.table_step <= 0.5) {
            return Err(Error::InvalidParameter("table_step must lie in (0, 0.5]".into()));
        }
        self.area_grid.validate()
    }

    fn rule(&self, abs_tol: f64) -> AdaptiveRule {
        AdaptiveRule { order: self.eta_nodes, rel_tol: self.rel_tol, abs_tol, max_intervals: 4000 }
    }
}

/// Constants shared by every power integral for one parameter set.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LinkModel {
    pub noise: f64,
    pub bandwidth: f64,
    pub payload_bits: f64,
    pub packet: f64,
    pub eta_star: f64,
    /// `Lambda - N`; non-positive means idle can never be sensed.
    pub cs_margin: f64,
}

impl LinkModel {
    pub fn new(props: &PropagationParams, rates: &RateParams) -> Self {
        let noise = props.noise_floor;
        Self {
            noise,
            bandwidth: props.bandwidth,
            payload_bits: rates.payload_bits,
            packet: rates.payload_duration(),
            eta_star: noise * (std::f64::consts::LN_2 * rates.rho_data / props.bandwidth).exp_m1(),
            cs_margin: props.cs_threshold - noise,
        }
    }

    /// `eta_bar` for an interference-free time `x`; infinite at `x = 0`.
    pub fn eta_bar(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::INFINITY;
        }
        self.noise * (std::f64::consts::LN_2 * self.payload_bits / (self.bandwidth * x)).exp_m1()
    }

    /// True when the packet is (numerically) interference free.
    fn no_overlap(&self, x: f64) -> bool {
        x >= self.packet * (1.0 - 1e-12)
    }

    pub fn xi(&self, x: f64) -> Xi {
        let rest = self.packet - x;
        Xi {
            noise: self.noise,
            c1: std::f64::consts::LN_2 * self.payload_bits / (self.bandwidth * rest),
            k: x / rest,
            slope0: self.noise * self.packet / (self.eta_star * rest),
        }
    }

    /// Decoded bits with constant powers, evaluated directly.
    pub fn decoded_bits(&self, x: f64, eta_s: f64, eta_i: f64) -> f64 {
        let c = |g: f64| self.bandwidth * g.ln_1p() / std::f64::consts::LN_2;
        x * c(eta_s / self.noise) + (self.packet - x) * c(eta_s / (self.noise + eta_i))
    }
}

/// The interference power at which exactly the payload is decodable, as a
/// function of the useful received power, for a fixed overlap.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Xi {
    noise: f64,
    c1: f64,
    k: f64,
    /// d xi / d eta at eta*.
    slope0: f64,
}

impl Xi {
    #[inline]
    pub fn eval(&self, eta: f64) -> f64 {
        let r1 = (self.c1 - self.k * (eta / self.noise).ln_1p()).exp_m1();
        if r1 <= 0.0 {
            return f64::INFINITY;
        }
        (eta / r1 - self.noise).max(0.0)
    }
}

/// Probability that a node senses the medium idle while another transmits.
pub fn cs_idle_prob(p1: Position, p2: Position, props: &PropagationParams) -> Result<f64> {
    let mean = mean_rx_power(p1, p2, props)?;
    Ok(idle_prob(props.cs_threshold - props.noise_floor, mean))
}

fn idle_prob(margin: f64, mean: f64) -> f64 {
    if margin <= 0.0 {
        return 0.0;
    }
    -(-margin / mean).exp_m1()
}

/// `(eta*, eta_bar)` for a birth time `t_i`.
pub fn eta_bounds(t_i: f64, rates: &RateParams, props: &PropagationParams) -> Result<(f64, f64)> {
    let m = LinkModel::new(props, rates);
    check_birth_time(t_i, m.packet)?;
    let x = t_i.abs();
    let bar = if m.no_overlap(x) { m.eta_star } else { m.eta_bar(x) };
    Ok((m.eta_star, bar))
}

fn check_birth_time(t_i: f64, packet: f64) -> Result<()> {
    if !(t_i.abs() <= packet * (1.0 + 1e-12)) {
        return Err(Error::Domain { what: "t_i", value: t_i, lo: -packet, hi: packet });
    }
    Ok(())
}

/// Interference power at which the destination decodes exactly the payload.
pub fn xi(eta_sd: f64, t_i: f64, rates: &RateParams, props: &PropagationParams) -> Result<f64> {
    let (lo, hi) = eta_bounds(t_i, rates, props)?;
    if !(eta_sd >= lo && eta_sd < hi) {
        return Err(Error::Domain { what: "eta_sd", value: eta_sd, lo, hi });
    }
    let m = LinkModel::new(props, rates);
    Ok(m.xi(t_i.abs()).eval(eta_sd))
}

/// Outage probability with useful mean `a`, interferer mean `b` and
/// interference-free time `x`.
pub(crate) fn outage_given_means(m: &LinkModel, a: f64, b: f64, x: f64, q: &QuadratureConfig) -> Result<f64> {
    let es = m.eta_star;
    let noise_only = -(-es / a).exp_m1();
    if m.no_overlap(x) {
        return Ok(noise_only);
    }
    let eb = m.eta_bar(x);
    let factor = if eb.is_finite() { q.eta_truncation_factor } else { q.eta_truncation_factor.max(40.0) };
    let upper = eb.min(es + factor * a);
    if upper <= es {
        return Ok(noise_only);
    }
    let xi = m.xi(x);
    let integrand = |eta: f64| (-xi.eval(eta) / b - eta / a).exp() / a;
    let rule = q.rule(1e-3 * q.rel_tol * noise_only.max(1e-300));
    let integral = integrate_with_layer(integrand, es, upper, b / xi.slope0, &rule)?;
    Ok((noise_only + integral).clamp(0.0, 1.0))
}

/// Cooperator availability for an interferer still active at the end of
/// the source packet (joint decode and idle-sensing event).
pub(crate) fn coop_plus_given_means(m: &LinkModel, a: f64, b: f64, x: f64, q: &QuadratureConfig) -> Result<f64> {
    let c = m.cs_margin;
    if c <= 0.0 {
        return Ok(0.0);
    }
    let es = m.eta_star;
    let idle = -(-c / b).exp_m1();
    if m.no_overlap(x) {
        // Defensive: a birth time of exactly T leaves no overlap at all.
        return Ok((-es / a).exp() * idle);
    }
    let eb = m.eta_bar(x);
    let cap = es + q.eta_truncation_factor.max(40.0) * a;
    let xi = m.xi(x);
    let eta_tilde = solve_eta_tilde(&xi, es, eb.min(cap), c, q.rel_tol * es)?;
    let head = (-eta_tilde / a).exp() * idle;
    if eta_tilde <= es {
        return Ok(head);
    }
    let integrand = |eta: f64| -(-xi.eval(eta) / b).exp_m1() * (-eta / a).exp() / a;
    let rule = q.rule(1e-3 * q.rel_tol * head.max(1e-300));
    let integral = integrate_with_layer(integrand, es, eta_tilde, b / xi.slope0, &rule)?;
    Ok((head + integral).clamp(0.0, 1.0))
}

/// Bisection for `xi(eta) = target` on [lo, hi); clamps to `hi` when the
/// target is never reached.
fn solve_eta_tilde(xi: &Xi, lo: f64, hi: f64, target: f64, tol: f64) -> Result<f64> {
    if hi.is_nan() || lo.is_nan() {
        return Err(Error::RootFinding("NaN bracket".into()));
    }
    let mut hi = hi;
    if !hi.is_finite() {
        let mut probe = lo * 2.0;
        while xi.eval(probe) < target {
            probe *= 2.0;
            if !probe.is_finite() {
                return Err(Error::RootFinding("could not bracket eta_tilde".into()));
            }
        }
        hi = probe;
    } else if xi.eval(hi) < target {
        return Ok(hi);
    }
    let mut lo = lo;
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if xi.eval(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Splits the domain at the edge of the boundary layer near `eta*` (where
/// `exp(-xi/b)` collapses) so the adaptive rule starts from sensible panels.
fn integrate_with_layer<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    layer: f64,
    rule: &AdaptiveRule,
) -> Result<f64> {
    let mut cuts = vec![lo];
    for k in [1.0, 40.0] {
        let c = lo + k * layer;
        if c > *cuts.last().unwrap() && c < hi {
            cuts.push(c);
        }
    }
    cuts.push(hi);
    let mut total = 0.0;
    for w in cuts.windows(2) {
        total += integrate_adaptive(&mut f, w[0], w[1], rule)?;
    }
    Ok(total)
}

/// Outage at the destination given the interferer's birth time.
pub fn outage_prob_ti(s: &Scenario3, t_i: f64, q: &QuadratureConfig) -> Result<f64> {
    let m = LinkModel::new(&s.props, &s.rates);
    check_birth_time(t_i, m.packet)?;
    let a = mean_rx_power(s.p_s, s.p_d, &s.props)?;
    let b = mean_rx_power(s.p_i, s.p_d, &s.props)?;
    outage_given_means(&m, a, b, t_i.abs(), q)
}

/// Probability that the interferer gains access and causes an outage.
pub fn interferer_outage_ti(s: &Scenario3, t_i: f64, q: &QuadratureConfig) -> Result<f64> {
    Ok(cs_idle_prob(s.p_i, s.p_s, &s.props)? * outage_prob_ti(s, t_i, q)?)
}

/// Gauss–Legendre nodes over [lo, hi] ⊆ [-T, T], split at zero.
pub(crate) fn birth_time_nodes(lo: f64, hi: f64, n: usize) -> Vec<(f64, f64)> {
    let gl = GaussLegendre::cached(n);
    let mut out = Vec::new();
    let pieces: Vec<(f64, f64)> = if lo < 0.0 && hi > 0.0 { vec![(lo, 0.0), (0.0, hi)] } else { vec![(lo, hi)] };
    for (a, b) in pieces {
        if b > a {
            out.extend(gl.on_interval(a, b));
        }
    }
    out
}

/// Interferer-induced outage averaged over the birth time.
pub fn interferer_distribution(s: &Scenario3, f: &BirthTimeDist, q: &QuadratureConfig) -> Result<f64> {
    let tw = s.packet_duration();
    let m = LinkModel::new(&s.props, &s.rates);
    let a = mean_rx_power(s.p_s, s.p_d, &s.props)?;
    let b = mean_rx_power(s.p_i, s.p_d, &s.props)?;
    let idle = cs_idle_prob(s.p_i, s.p_s, &s.props)?;
    if idle == 0.0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (t, w) in birth_time_nodes(-tw, tw, q.ti_nodes) {
        total += w * f.pdf(t) * outage_given_means(&m, a, b, t.abs(), q)?;
    }
    Ok(idle * total)
}

/// Availability of C when the interferer started before the source.
pub fn coop_avail_minus(sc: &ScenarioCoop, p_i: Position, t_i: f64, q: &QuadratureConfig) -> Result<f64> {
    let tw = sc.packet_duration();
    if !(t_i <= 0.0 && t_i >= -tw * (1.0 + 1e-12)) {
        return Err(Error::Domain { what: "t_i", value: t_i, lo: -tw, hi: 0.0 });
    }
    Ok(1.0 - outage_prob_ti(&sc.decode_scenario(p_i)?, t_i, q)?)
}

/// Availability of C when the interferer is still active at the end of the
/// source packet: C must decode and sense the medium idle.
pub fn coop_avail_plus(sc: &ScenarioCoop, p_i: Position, t_i: f64, q: &QuadratureConfig) -> Result<f64> {
    let tw = sc.packet_duration();
    if !(t_i > 0.0 && t_i <= tw * (1.0 + 1e-12)) {
        return Err(Error::Domain { what: "t_i", value: t_i, lo: 0.0, hi: tw });
    }
    sc.decode_scenario(p_i)?;
    let m = LinkModel::new(&sc.props, &sc.rates);
    let a = mean_rx_power(sc.p_s, sc.p_c, &sc.props)?;
    let b = mean_rx_power(p_i, sc.p_c, &sc.props)?;
    coop_plus_given_means(&m, a, b, t_i, q)
}

/// Availability conditioned on the interferer position and birth time.
pub fn coop_avail(sc: &ScenarioCoop, p_i: Position, t_i: f64, q: &QuadratureConfig) -> Result<f64> {
    if t_i <= 0.0 {
        coop_avail_minus(sc, p_i, t_i, q)
    } else {
        coop_avail_plus(sc, p_i, t_i, q)
    }
}

/// Availability given the birth time, averaging over interferer positions
/// weighted by the interferer-outage distribution over the region.
pub fn coop_conditional(sc: &ScenarioCoop, t_i: f64, q: &QuadratureConfig) -> Result<f64> {
    let grid = GridSpec::over(&sc.region, q.area_grid.nx, q.area_grid.ny)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for p_i in grid.cell_centers() {
        if p_i == sc.p_s || p_i == sc.p_d || p_i == sc.p_c {
            continue;
        }
        let weight = interferer_outage_ti(&sc.interferer_scenario(p_i)?, t_i, q)?;
        if weight == 0.0 {
            continue;
        }
        num += weight * coop_avail(sc, p_i, t_i, q)?;
        den += weight;
    }
    if !(den > 0.0) {
        return Err(Error::ZeroDenominator);
    }
    Ok((num / den).clamp(0.0, 1.0))
}

/// A restricted birth-time integral and the density mass of its domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainIntegral {
    pub integral: f64,
    pub mass: f64,
}

impl DomainIntegral {
    /// The integral normalized by the domain mass.
    pub fn conditional(&self) -> f64 {
        if self.mass > 0.0 {
            self.integral / self.mass
        } else {
            f64::NAN
        }
    }
}

/// Cooperator availability integrated over a birth-time sub-interval.
pub fn coop_distribution(
    sc: &ScenarioCoop,
    f: &BirthTimeDist,
    domain: (f64, f64),
    q: &QuadratureConfig,
) -> Result<DomainIntegral> {
    let tw = sc.packet_duration();
    let (lo, hi) = domain;
    if !(lo >= -tw * (1.0 + 1e-12) && hi <= tw * (1.0 + 1e-12) && lo <= hi) {
        return Err(Error::Domain { what: "birth-time domain", value: lo, lo: -tw, hi: tw });
    }
    let mut integral = 0.0;
    for (t, w) in birth_time_nodes(lo, hi, q.ti_nodes) {
        integral += w * f.pdf(t) * coop_conditional(sc, t, q)?;
    }
    Ok(DomainIntegral { integral, mass: f.mass(lo, hi) })
}
