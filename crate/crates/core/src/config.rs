//! Sectioned TOML experiment configuration. Every key is optional and
//! overrides the built-in defaults; powers are given in dBm through `_dbm`
//! keys and converted to watts here.

use serde::{Deserialize, Serialize};

use crate::analysis::{GridSpec, QuadratureConfig};
use crate::error::{Error, Result};
use crate::sim::{Protocol, RunConfig};
use crate::units::{dbm_to_watts, watts_to_dbm};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub tx_power_dbm: Option<f64>,
    pub path_loss_exp: Option<f64>,
    pub noise_floor_dbm: Option<f64>,
    pub bandwidth_hz: Option<f64>,
    pub cs_threshold_dbm: Option<f64>,
    pub relay_cs_threshold_dbm: Option<f64>,
    pub detection_threshold_dbm: Option<f64>,
    pub max_doppler_hz: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesSection {
    pub rho_data: Option<f64>,
    pub rho_ctrl: Option<f64>,
    pub payload_bits: Option<f64>,
    pub header_bits: Option<f64>,
    pub ack_bits: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacSection {
    pub cw_start: Option<u32>,
    pub srl_csma: Option<u32>,
    pub srl_cooperative: Option<u32>,
    pub slot_s: Option<f64>,
    pub difs_s: Option<f64>,
    pub sifs_s: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DharqSection {
    pub cw_rel: Option<u32>,
    pub epsilon: Option<f64>,
    pub quant_levels: Option<u32>,
    pub quant_range_db: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    pub nodes: Option<usize>,
    pub width_m: Option<f64>,
    pub height_m: Option<f64>,
    pub pinned_delta_m: Option<f64>,
    pub neighbor_radius_m: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficSection {
    pub lambda_kbps: Option<f64>,
    pub duration_s: Option<f64>,
    pub warmup_fraction: Option<f64>,
    pub queue_limit: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub protocol: Option<String>,
    pub seed: Option<u64>,
    pub replications: Option<u32>,
    pub fading_anchor_s: Option<f64>,
    pub reference_loss_db: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    pub eta_truncation_factor: Option<f64>,
    pub ti_nodes: Option<usize>,
    pub eta_nodes: Option<usize>,
    pub rel_tol: Option<f64>,
    pub table_step: Option<f64>,
    pub grid_x_m: Option<[f64; 2]>,
    pub grid_y_m: Option<[f64; 2]>,
    pub grid_cells: Option<[usize; 2]>,
}

/// The file layout.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default)]
    pub rates: RatesSection,
    #[serde(default)]
    pub mac: MacSection,
    #[serde(default)]
    pub dharq: DharqSection,
    #[serde(default)]
    pub topology: TopologySection,
    #[serde(default)]
    pub traffic: TrafficSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

/// Resolved experiment settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentConfig {
    /// Simulation settings; `mac.srl` is replaced per protocol.
    pub run: RunConfig,
    pub srl_csma: u32,
    pub srl_cooperative: u32,
    pub quadrature: QuadratureConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let run = RunConfig::new(Protocol::Dharq);
        Self {
            run,
            srl_csma: Protocol::Csma.default_mac().srl,
            srl_cooperative: Protocol::Dharq.default_mac().srl,
            quadrature: QuadratureConfig::default(),
        }
    }
}

fn set<T: Copy>(dst: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *dst = v;
    }
}

impl ExperimentConfig {
    /// Parses TOML text over the defaults and validates the result.
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let cfg = Self::from_file(&file)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(f: &ConfigFile) -> Result<Self> {
        let mut c = Self::default();
        let r = &mut c.run;

        let ch = &f.channel;
        let p = &mut r.props;
        set(&mut p.tx_power, ch.tx_power_dbm.map(dbm_to_watts));
        set(&mut p.path_loss_exp, ch.path_loss_exp);
        set(&mut p.noise_floor, ch.noise_floor_dbm.map(dbm_to_watts));
        set(&mut p.bandwidth, ch.bandwidth_hz);
        set(&mut p.cs_threshold, ch.cs_threshold_dbm.map(dbm_to_watts));
        set(&mut p.relay_cs_threshold, ch.relay_cs_threshold_dbm.map(dbm_to_watts));
        set(&mut p.detection_threshold, ch.detection_threshold_dbm.map(dbm_to_watts));
        set(&mut p.max_doppler, ch.max_doppler_hz);
        r.mac.cs_threshold = p.cs_threshold;
        r.dharq.relay_cs_threshold = p.relay_cs_threshold;

        let rt = &f.rates;
        set(&mut r.rates.rho_data, rt.rho_data);
        set(&mut r.rates.rho_ctrl, rt.rho_ctrl);
        set(&mut r.rates.payload_bits, rt.payload_bits);
        set(&mut r.rates.header_bits, rt.header_bits);
        set(&mut r.rates.ack_bits, rt.ack_bits);
        r.traffic.payload_bits = r.rates.payload_bits;

        let m = &f.mac;
        set(&mut r.mac.cw_start, m.cw_start);
        set(&mut r.mac.slot, m.slot_s);
        set(&mut r.mac.difs, m.difs_s);
        set(&mut r.mac.sifs, m.sifs_s);
        set(&mut c.srl_csma, m.srl_csma);
        set(&mut c.srl_cooperative, m.srl_cooperative);

        let d = &f.dharq;
        set(&mut r.dharq.cw_rel, d.cw_rel);
        set(&mut r.dharq.epsilon, d.epsilon);
        set(&mut r.dharq.quant_levels, d.quant_levels);
        set(&mut r.dharq.quant_range_db, d.quant_range_db.map(|[a, b]| (a, b)));

        let t = &f.topology;
        set(&mut r.topology.nodes, t.nodes);
        set(&mut r.topology.width, t.width_m);
        set(&mut r.topology.height, t.height_m);
        if t.pinned_delta_m.is_some() {
            r.topology.pinned_delta = t.pinned_delta_m;
        }
        set(&mut r.topology.neighbor_radius, t.neighbor_radius_m);
        r.traffic.neighbor_radius = r.topology.neighbor_radius;

        let tr = &f.traffic;
        set(&mut r.traffic.lambda, tr.lambda_kbps);
        set(&mut r.traffic.duration, tr.duration_s);
        set(&mut r.traffic.warmup_fraction, tr.warmup_fraction);
        set(&mut r.traffic.queue_limit, tr.queue_limit);

        let run = &f.run;
        if let Some(name) = &run.protocol {
            r.protocol = name.parse()?;
        }
        set(&mut r.seed, run.seed);
        set(&mut r.replications, run.replications);
        set(&mut r.fading_anchor, run.fading_anchor_s);
        set(&mut r.reference_loss_db, run.reference_loss_db);

        let a = &f.analysis;
        let q = &mut c.quadrature;
        set(&mut q.eta_truncation_factor, a.eta_truncation_factor);
        set(&mut q.ti_nodes, a.ti_nodes);
        set(&mut q.eta_nodes, a.eta_nodes);
        set(&mut q.rel_tol, a.rel_tol);
        set(&mut q.table_step, a.table_step);
        let g = &mut q.area_grid;
        if let Some([lo, hi]) = a.grid_x_m {
            (g.x_min, g.x_max) = (lo, hi);
        }
        if let Some([lo, hi]) = a.grid_y_m {
            (g.y_min, g.y_max) = (lo, hi);
        }
        if let Some([nx, ny]) = a.grid_cells {
            (g.nx, g.ny) = (nx, ny);
        }

        c.run.mac.srl = c.srl_for(c.run.protocol);
        Ok(c)
    }

    /// A fully populated file equivalent to `self`.
    pub fn to_file(&self) -> ConfigFile {
        let r = &self.run;
        let p = &r.props;
        let g: &GridSpec = &self.quadrature.area_grid;
        ConfigFile {
            channel: ChannelSection {
                tx_power_dbm: Some(watts_to_dbm(p.tx_power)),
                path_loss_exp: Some(p.path_loss_exp),
                noise_floor_dbm: Some(watts_to_dbm(p.noise_floor)),
                bandwidth_hz: Some(p.bandwidth),
                cs_threshold_dbm: Some(watts_to_dbm(p.cs_threshold)),
                relay_cs_threshold_dbm: Some(watts_to_dbm(r.dharq.relay_cs_threshold)),
                detection_threshold_dbm: Some(watts_to_dbm(p.detection_threshold)),
                max_doppler_hz: Some(p.max_doppler),
            },
            rates: RatesSection {
                rho_data: Some(r.rates.rho_data),
                rho_ctrl: Some(r.rates.rho_ctrl),
                payload_bits: Some(r.rates.payload_bits),
                header_bits: Some(r.rates.header_bits),
                ack_bits: Some(r.rates.ack_bits),
            },
            mac: MacSection {
                cw_start: Some(r.mac.cw_start),
                srl_csma: Some(self.srl_csma),
                srl_cooperative: Some(self.srl_cooperative),
                slot_s: Some(r.mac.slot),
                difs_s: Some(r.mac.difs),
                sifs_s: Some(r.mac.sifs),
            },
            dharq: DharqSection {
                cw_rel: Some(r.dharq.cw_rel),
                epsilon: Some(r.dharq.epsilon),
                quant_levels: Some(r.dharq.quant_levels),
                quant_range_db: Some([r.dharq.quant_range_db.0, r.dharq.quant_range_db.1]),
            },
            topology: TopologySection {
                nodes: Some(r.topology.nodes),
                width_m: Some(r.topology.width),
                height_m: Some(r.topology.height),
                pinned_delta_m: r.topology.pinned_delta,
                neighbor_radius_m: Some(r.topology.neighbor_radius),
            },
            traffic: TrafficSection {
                lambda_kbps: Some(r.traffic.lambda),
                duration_s: Some(r.traffic.duration),
                warmup_fraction: Some(r.traffic.warmup_fraction),
                queue_limit: Some(r.traffic.queue_limit),
            },
            run: RunSection {
                protocol: Some(r.protocol.to_string()),
                seed: Some(r.seed),
                replications: Some(r.replications),
                fading_anchor_s: Some(r.fading_anchor),
                reference_loss_db: Some(r.reference_loss_db),
            },
            analysis: AnalysisSection {
                eta_truncation_factor: Some(self.quadrature.eta_truncation_factor),
                ti_nodes: Some(self.quadrature.ti_nodes),
                eta_nodes: Some(self.quadrature.eta_nodes),
                rel_tol: Some(self.quadrature.rel_tol),
                table_step: Some(self.quadrature.table_step),
                grid_x_m: Some([g.x_min, g.x_max]),
                grid_y_m: Some([g.y_min, g.y_max]),
                grid_cells: Some([g.nx, g.ny]),
            },
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_file()).expect("config serializes")
    }

    pub fn srl_for(&self, protocol: Protocol) -> u32 {
        if protocol.cooperative() {
            self.srl_cooperative
        } else {
            self.srl_csma
        }
    }

    /// Simulation settings for `protocol`.
    pub fn run_config(&self, protocol: Protocol) -> RunConfig {
        let mut r = self.run;
        r.protocol = protocol;
        r.mac.srl = self.srl_for(protocol);
        r
    }

    /// Every problem found, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let r = &self.run;
        let checks = [
            r.props.validate(),
            r.rates.validate(),
            r.mac.validate(),
            crate::mac::MacConfig { srl: self.srl_csma, ..r.mac }.validate(),
            crate::mac::MacConfig { srl: self.srl_cooperative, ..r.mac }.validate(),
            r.dharq.validate(),
            r.topology.validate(),
            r.traffic.validate(),
            self.quadrature.validate(),
            self.run_config(r.protocol).validate(),
        ];
        let mut out: Vec<String> = Vec::new();
        for e in checks.into_iter().filter_map(|c| c.err()) {
            let msg = e.to_string();
            if !out.contains(&msg) {
                out.push(msg);
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p.join("; ")))
        }
    }
}
