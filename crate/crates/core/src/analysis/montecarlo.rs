//! Monte Carlo estimators that sample the fading powers directly and apply
//! the decoded-bits rule, independent of the closed-form reductions used by
//! the quadrature routines.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use super::{BirthTimeDist, LinkModel, Scenario3, ScenarioCoop};
use crate::channel::mean_rx_power;
use crate::error::{Error, Result};
use crate::units::Position;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub samples: u64,
}

impl McEstimate {
    fn from_hits(hits: u64, n: u64) -> Self {
        let p = hits as f64 / n as f64;
        Self { mean: p, std_err: (p * (1.0 - p) / n as f64).sqrt(), samples: n }
    }
}

fn exp_draw<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> f64 {
    let e: f64 = Exp1.sample(rng);
    mean * e
}

fn check_n(n: u64) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidParameter("Monte Carlo needs at least one sample".into()));
    }
    Ok(())
}

struct Link3 {
    model: LinkModel,
    a_sd: f64,
    b_id: f64,
    c_is: f64,
}

impl Link3 {
    fn new(s: &Scenario3) -> Result<Self> {
        Ok(Self {
            model: LinkModel::new(&s.props, &s.rates),
            a_sd: mean_rx_power(s.p_s, s.p_d, &s.props)?,
            b_id: mean_rx_power(s.p_i, s.p_d, &s.props)?,
            c_is: mean_rx_power(s.p_i, s.p_s, &s.props)?,
        })
    }

    fn outage<R: Rng + ?Sized>(&self, rng: &mut R, x: f64) -> bool {
        let eta_sd = exp_draw(rng, self.a_sd);
        let eta_id = exp_draw(rng, self.b_id);
        self.model.decoded_bits(x, eta_sd, eta_id) < self.model.payload_bits
    }

    fn idle<R: Rng + ?Sized>(&self, rng: &mut R) -> bool {
        exp_draw(rng, self.c_is) < self.model.cs_margin
    }
}

/// Outage at D for a fixed birth time.
pub fn mc_outage_ti<R: Rng + ?Sized>(s: &Scenario3, t_i: f64, n: u64, rng: &mut R) -> Result<McEstimate> {
    check_n(n)?;
    let l = Link3::new(s)?;
    let x = t_i.abs().min(l.model.packet);
    let hits = (0..n).filter(|_| l.outage(rng, x)).count() as u64;
    Ok(McEstimate::from_hits(hits, n))
}

/// Interferer senses idle and D is in outage, for a fixed birth time.
pub fn mc_interferer_outage_ti<R: Rng + ?Sized>(s: &Scenario3, t_i: f64, n: u64, rng: &mut R) -> Result<McEstimate> {
    check_n(n)?;
    let l = Link3::new(s)?;
    let x = t_i.abs().min(l.model.packet);
    let hits = (0..n)
        .filter(|_| {
            let idle = l.idle(rng);
            let out = l.outage(rng, x);
            idle && out
        })
        .count() as u64;
    Ok(McEstimate::from_hits(hits, n))
}

/// Same event with the birth time drawn from `f` by rejection.
pub fn mc_interferer_distribution<R: Rng + ?Sized>(
    s: &Scenario3,
    f: &BirthTimeDist,
    n: u64,
    rng: &mut R,
) -> Result<McEstimate> {
    check_n(n)?;
    let l = Link3::new(s)?;
    let tw = f.half_width();
    let peak = (0..=1000).map(|k| f.pdf(-tw + 2.0 * tw * k as f64 / 1000.0)).fold(0.0, f64::max) * 1.05;
    let mut hits = 0u64;
    for _ in 0..n {
        let t = loop {
            let t = rng.random_range(-tw..=tw);
            if rng.random::<f64>() * peak <= f.pdf(t) {
                break t;
            }
        };
        let idle = l.idle(rng);
        let out = l.outage(rng, t.abs().min(l.model.packet));
        if idle && out {
            hits += 1;
        }
    }
    Ok(McEstimate::from_hits(hits, n))
}

/// C decodes the source payload (interferer started before the source).
pub fn mc_coop_minus<R: Rng + ?Sized>(
    sc: &ScenarioCoop,
    p_i: Position,
    t_i: f64,
    n: u64,
    rng: &mut R,
) -> Result<McEstimate> {
    let o = mc_outage_ti(&sc.decode_scenario(p_i)?, t_i, n, rng)?;
    Ok(McEstimate { mean: 1.0 - o.mean, ..o })
}

/// C decodes the payload and senses idle at the end of the source packet.
pub fn mc_coop_plus<R: Rng + ?Sized>(
    sc: &ScenarioCoop,
    p_i: Position,
    t_i: f64,
    n: u64,
    rng: &mut R,
) -> Result<McEstimate> {
    check_n(n)?;
    let s = sc.decode_scenario(p_i)?;
    let l = Link3::new(&s)?;
    let x = t_i.abs().min(l.model.packet);
    let hits = (0..n)
        .filter(|_| {
            let eta_sc = exp_draw(rng, l.a_sd);
            let eta_ic = exp_draw(rng, l.b_id);
            let decoded = l.model.decoded_bits(x, eta_sc, eta_ic) >= l.model.payload_bits;
            decoded && eta_ic < l.model.cs_margin
        })
        .count() as u64;
    Ok(McEstimate::from_hits(hits, n))
}

/// Availability at a fixed birth time with the interferer position drawn
/// over the region proportionally to its outage contribution: positions
/// are proposed uniformly and accepted when the interferer's own sampled
/// idle/outage event occurs, then C's event is sampled for that position.
pub fn mc_coop_conditional<R: Rng + ?Sized>(
    sc: &ScenarioCoop,
    t_i: f64,
    n: u64,
    rng: &mut R,
) -> Result<McEstimate> {
    check_n(n)?;
    let r = sc.region;
    let mut hits = 0u64;
    let mut accepted = 0u64;
    let mut proposals = 0u64;
    while accepted < n {
        proposals += 1;
        if proposals > n.saturating_mul(1_000_000) {
            return Err(Error::ZeroDenominator);
        }
        let p_i = Position::new(rng.random_range(r.x_min..r.x_max), rng.random_range(r.y_min..r.y_max));
        let Ok(s) = sc.interferer_scenario(p_i) else { continue };
        let l = Link3::new(&s)?;
        let x = t_i.abs().min(l.model.packet);
        if !(l.idle(rng) && l.outage(rng, x)) {
            continue;
        }
        let Ok(cs) = sc.decode_scenario(p_i) else { continue };
        let c = Link3::new(&cs)?;
        let eta_sc = exp_draw(rng, c.a_sd);
        let eta_ic = exp_draw(rng, c.b_id);
        let decoded = c.model.decoded_bits(x, eta_sc, eta_ic) >= c.model.payload_bits;
        let ok = if t_i <= 0.0 { decoded } else { decoded && eta_ic < c.model.cs_margin };
        accepted += 1;
        if ok {
            hits += 1;
        }
    }
    Ok(McEstimate::from_hits(hits, n))
}
