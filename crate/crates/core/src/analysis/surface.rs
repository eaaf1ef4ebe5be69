//! Tabulated cooperator-availability surfaces for whole heatmaps.
//!
//! For a fixed birth time, H^(p_i,t)(p_c) depends on the geometry only through
//! the two mean powers at C. Each birth-time node gets a table over
//! (ln a, ln b) that is filled once by adaptive quadrature and then read with
//! bicubic interpolation.

use rayon::prelude::*;

use super::{
    birth_time_nodes, coop_plus_given_means, idle_prob, outage_given_means, BirthTimeDist, GridSpec, LinkModel,
    QuadratureConfig, ScenarioCoop,
};
use crate::channel::mean_rx_power;
use crate::error::{Error, Result};
use crate::units::Position;

#[derive(Debug, Clone)]
struct Table {
    u0: f64,
    du: f64,
    nu: usize,
    v0: f64,
    dv: f64,
    nv: usize,
    data: Vec<f64>,
}

fn catmull_rom(s: f64) -> [f64; 4] {
    let s2 = s * s;
    let s3 = s2 * s;
    [
        0.5 * (-s3 + 2.0 * s2 - s),
        0.5 * (3.0 * s3 - 5.0 * s2 + 2.0),
        0.5 * (-3.0 * s3 + 4.0 * s2 + s),
        0.5 * (s3 - s2),
    ]
}

/// Base index and weights for a stencil of four points around `z`.
fn stencil(z: f64, z0: f64, dz: f64, n: usize) -> (usize, [f64; 4]) {
    let pos = (z - z0) / dz;
    let i = (pos.floor() as isize).clamp(1, n as isize - 3) as usize;
    (i - 1, catmull_rom(pos - i as f64))
}

impl Table {
    fn build<F>(u: (f64, f64), v: (f64, f64), step: f64, f: F) -> Result<Self>
    where
        F: Fn(f64, f64) -> Result<f64> + Sync,
    {
        // Two cells of padding keep every stencil inside the table.
        let axis = |(lo, hi): (f64, f64)| {
            let n = (((hi - lo) / step).ceil() as usize).max(1) + 5;
            (lo - 2.0 * step, n)
        };
        let (u0, nu) = axis(u);
        let (v0, nv) = axis(v);
        let rows: Vec<Vec<f64>> = (0..nu)
            .into_par_iter()
            .map(|iu| {
                let uu = u0 + iu as f64 * step;
                (0..nv).map(|iv| f(uu, v0 + iv as f64 * step)).collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;
        Ok(Self { u0, du: step, nu, v0, dv: step, nv, data: rows.concat() })
    }

    fn covers(&self, u: f64, v: f64) -> bool {
        let inside = |z: f64, z0: f64, dz: f64, n: usize| z >= z0 + dz && z <= z0 + (n - 3) as f64 * dz;
        inside(u, self.u0, self.du, self.nu) && inside(v, self.v0, self.dv, self.nv)
    }

    /// Interpolates along u, leaving a line over v.
    fn line_at(&self, u: f64, out: &mut Vec<f64>) {
        let (i, w) = stencil(u, self.u0, self.du, self.nu);
        out.clear();
        out.resize(self.nv, 0.0);
        for (k, wk) in w.iter().enumerate() {
            let row = &self.data[(i + k) * self.nv..(i + k + 1) * self.nv];
            for (o, r) in out.iter_mut().zip(row) {
                *o += wk * r;
            }
        }
    }

    fn on_line(&self, line: &[f64], v: f64) -> f64 {
        let (j, w) = stencil(v, self.v0, self.dv, self.nv);
        (w[0] * line[j] + w[1] * line[j + 1] + w[2] * line[j + 2] + w[3] * line[j + 3]).clamp(0.0, 1.0)
    }

    #[cfg(test)]
    fn eval(&self, u: f64, v: f64) -> f64 {
        let mut line = Vec::new();
        self.line_at(u, &mut line);
        self.on_line(&line, v)
    }
}

#[derive(Debug, Clone)]
struct Node {
    t: f64,
    /// Quadrature weight times birth-time density.
    weight: f64,
    /// I^t at each interferer cell.
    interference: Vec<f64>,
    total: f64,
    table: Table,
}

/// Cooperator availability at a given position, conditioned on the three
/// birth-time domains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoopValues {
    /// Conditional on the interferer starting before the source.
    pub minus: f64,
    /// Conditional on the interferer starting during the source packet.
    pub plus: f64,
    /// Averaged over the whole birth-time interval.
    pub average: f64,
}

/// Precomputed state for evaluating the cooperator distribution at many
/// candidate positions of one source/destination pair.
#[derive(Debug, Clone)]
pub struct CoopField {
    sc: ScenarioCoop,
    model: LinkModel,
    q: QuadratureConfig,
    interferers: Vec<Position>,
    nodes: Vec<Node>,
    mass_minus: f64,
    mass_plus: f64,
}

impl CoopField {
    /// `targets` are the candidate positions that will be evaluated; the
    /// tables are sized to cover them.
    pub fn new(sc: &ScenarioCoop, targets: &[Position], f: &BirthTimeDist, q: &QuadratureConfig) -> Result<Self> {
        q.validate()?;
        let props = &sc.props;
        let model = LinkModel::new(props, &sc.rates);
        let tw = model.packet;
        let area = GridSpec::over(&sc.region, q.area_grid.nx, q.area_grid.ny)?;
        let interferers: Vec<Position> =
            area.cell_centers().into_iter().filter(|p| *p != sc.p_s && *p != sc.p_d).collect();
        let a_sd = mean_rx_power(sc.p_s, sc.p_d, props)?;
        let mut link = Vec::with_capacity(interferers.len());
        for p in &interferers {
            let idle = idle_prob(model.cs_margin, mean_rx_power(*p, sc.p_s, props)?);
            link.push((idle, mean_rx_power(*p, sc.p_d, props)?));
        }

        let ln_mean = |d: f64| props.tx_power.ln() - props.path_loss_exp * d.ln();
        let (mut d_sc_min, mut d_sc_max) = (f64::INFINITY, 0.0f64);
        let (mut d_ic_min, mut d_ic_max) = (f64::INFINITY, 0.0f64);
        for c in targets {
            let d = c.distance(&sc.p_s);
            if d == 0.0 {
                return Err(Error::CoincidentPositions { x: c.x, y: c.y });
            }
            d_sc_min = d_sc_min.min(d);
            d_sc_max = d_sc_max.max(d);
            for p in &interferers {
                let d = c.distance(p);
                if d > 0.0 {
                    d_ic_min = d_ic_min.min(d);
                    d_ic_max = d_ic_max.max(d);
                }
            }
        }
        if targets.is_empty() || !d_ic_min.is_finite() {
            return Err(Error::InvalidParameter("no candidate/interferer pairs to tabulate".into()));
        }
        let u_range = (ln_mean(d_sc_max), ln_mean(d_sc_min));
        let v_range = (ln_mean(d_ic_max), ln_mean(d_ic_min));

        let mut nodes = Vec::new();
        for (t, w) in birth_time_nodes(-tw, tw, q.ti_nodes) {
            let x = t.abs();
            let interference: Vec<f64> = link
                .par_iter()
                .map(|&(idle, b)| {
                    if idle == 0.0 {
                        Ok(0.0)
                    } else {
                        Ok(idle * outage_given_means(&model, a_sd, b, x, q)?)
                    }
                })
                .collect::<Result<_>>()?;
            let total = interference.iter().sum();
            let table = if t <= 0.0 {
                Table::build(u_range, v_range, q.table_step, |u, v| {
                    Ok(1.0 - outage_given_means(&model, u.exp(), v.exp(), x, q)?)
                })?
            } else {
                Table::build(u_range, v_range, q.table_step, |u, v| {
                    coop_plus_given_means(&model, u.exp(), v.exp(), x, q)
                })?
            };
            nodes.push(Node { t, weight: w * f.pdf(t), interference, total, table });
        }
        Ok(Self {
            sc: *sc,
            model,
            q: *q,
            interferers,
            nodes,
            mass_minus: f.mass(-tw, 0.0),
            mass_plus: f.mass(0.0, tw),
        })
    }

    /// Availability at `p_c`, normalized per birth-time domain.
    pub fn eval(&self, p_c: Position) -> Result<CoopValues> {
        let props = &self.sc.props;
        let a = mean_rx_power(self.sc.p_s, p_c, props)?;
        let u = a.ln();
        let ln_b: Vec<Option<f64>> = self
            .interferers
            .iter()
            .map(|p| if *p == p_c { None } else { Some(props.tx_power.ln() - props.path_loss_exp * p.distance(&p_c).ln()) })
            .collect();
        let mut line = Vec::new();
        let (mut minus, mut plus) = (0.0, 0.0);
        for node in &self.nodes {
            let mut num = 0.0;
            let mut den = node.total;
            let tabulated = ln_b.iter().flatten().all(|v| node.table.covers(u, *v));
            if tabulated {
                node.table.line_at(u, &mut line);
            }
            for (w, v) in node.interference.iter().zip(&ln_b) {
                let Some(v) = v else {
                    den -= w;
                    continue;
                };
                if *w == 0.0 {
                    continue;
                }
                let h = if tabulated { node.table.on_line(&line, *v) } else { self.direct(a, v.exp(), node.t)? };
                num += w * h;
            }
            if !(den > 0.0) {
                return Err(Error::ZeroDenominator);
            }
            let h = (num / den).clamp(0.0, 1.0);
            if node.t <= 0.0 {
                minus += node.weight * h;
            } else {
                plus += node.weight * h;
            }
        }
        let norm = |s: f64, m: f64| if m > 0.0 { s / m } else { f64::NAN };
        Ok(CoopValues {
            minus: norm(minus, self.mass_minus),
            plus: norm(plus, self.mass_plus),
            average: minus + plus,
        })
    }

    fn direct(&self, a: f64, b: f64, t: f64) -> Result<f64> {
        if t <= 0.0 {
            Ok(1.0 - outage_given_means(&self.model, a, b, t.abs(), &self.q)?)
        } else {
            coop_plus_given_means(&self.model, a, b, t, &self.q)
        }
    }
}
