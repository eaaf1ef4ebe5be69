use std::fmt;
use std::str::FromStr;

use super::metrics::MetricsReport;
use super::{run, RunConfig};
use crate::error::{Error, Result};
use crate::units::dbm_to_watts;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Offered load per node, kbit/s.
    Lambda,
    /// Relay contention threshold, dBm.
    RelayCsThreshold,
    /// Distance of the pinned source–destination pair, meters.
    DeltaSd,
}

impl SweepAxis {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Lambda => "lambda",
            Self::RelayCsThreshold => "relay_cs_threshold",
            Self::DeltaSd => "delta_sd",
        }
    }

    /// `cfg` with this axis set to `value`.
    pub fn apply(&self, cfg: &RunConfig, value: f64) -> RunConfig {
        let mut c = *cfg;
        match self {
            Self::Lambda => c.traffic.lambda = value,
            Self::RelayCsThreshold => {
                c.dharq.relay_cs_threshold = dbm_to_watts(value);
                c.props.relay_cs_threshold = dbm_to_watts(value);
            }
            Self::DeltaSd => c.topology.pinned_delta = Some(value),
        }
        c
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "lambda" => Ok(Self::Lambda),
            "relay_cs_threshold" | "lambda_rel" => Ok(Self::RelayCsThreshold),
            "delta_sd" => Ok(Self::DeltaSd),
            _ => Err(Error::Config(format!("unknown sweep axis '{s}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub value: f64,
    pub reports: Vec<MetricsReport>,
    /// Replications pooled into one report.
    pub pooled: MetricsReport,
}

/// One set of replications per axis value. Values must be sorted
/// ascending.
pub fn sweep(axis: SweepAxis, values: &[f64], cfg: &RunConfig) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(Error::InvalidParameter("sweep needs at least one value".into()));
    }
    if values.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidParameter("sweep values must be strictly increasing".into()));
    }
    values
        .iter()
        .map(|&v| {
            let reports = run(&axis.apply(cfg, v))?;
            let pooled = MetricsReport::pooled(&reports).expect("at least one replication");
            Ok(SweepPoint { value: v, reports, pooled })
        })
        .collect()
}
