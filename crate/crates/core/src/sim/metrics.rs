use statrs::distribution::{ContinuousCDF, StudentsT};

use super::Protocol;

/// Distances of one relay candidate at a failed direct reception.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaySample {
    /// Candidate to destination, meters.
    pub d_cd: f64,
    /// Source to destination, meters.
    pub d_sd: f64,
}

impl RelaySample {
    /// The candidate is closer to the destination than the source is.
    pub fn advances(&self) -> bool {
        self.d_cd < self.d_sd
    }
}

/// Counters of one replication over its measurement window. Fractions are
/// derived from the counts.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub protocol: Protocol,
    pub seed: u64,
    pub window: f64,
    pub delivered_bits: f64,

    pub enqueued: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight: u64,
    pub queue_overflow: u64,

    pub data_tx: u64,
    pub success_direct: u64,
    pub lost_header: u64,
    pub coop_requested: u64,

    pub coop_rounds: u64,
    pub coop_success: u64,
    pub empty_contention: u64,
    pub failure_wo_tx: u64,
    pub failure_with_tx: u64,

    pub giveup_cs_busy: u64,
    pub giveup_rate_too_low: u64,
    pub giveup_nav: u64,

    pub relay_tx: u64,
    pub relay_collided: u64,

    pub relay_samples: Vec<RelaySample>,
}

fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else {
        0.0
    }
}

pub const METRICS_HEADER: &str = "protocol,seed,throughput_bps,pdr,success_direct,lost_header,coop_requested,\
coop_success_share,empty_contention,failure_wo_tx,failure_with_tx,giveup_cs_busy,giveup_rate_too_low,giveup_nav,\
data_tx,delivered,dropped,in_flight,queue_overflow,coop_rounds,relay_tx,relay_collided,relay_samples,relay_advancement";

impl MetricsReport {
    pub fn empty(protocol: Protocol, seed: u64, window: f64) -> Self {
        Self {
            protocol,
            seed,
            window,
            delivered_bits: 0.0,
            enqueued: 0,
            delivered: 0,
            dropped: 0,
            in_flight: 0,
            queue_overflow: 0,
            data_tx: 0,
            success_direct: 0,
            lost_header: 0,
            coop_requested: 0,
            coop_rounds: 0,
            coop_success: 0,
            empty_contention: 0,
            failure_wo_tx: 0,
            failure_with_tx: 0,
            giveup_cs_busy: 0,
            giveup_rate_too_low: 0,
            giveup_nav: 0,
            relay_tx: 0,
            relay_collided: 0,
            relay_samples: Vec::new(),
        }
    }

    /// Delivered payload bits per second over the window.
    pub fn aggregate_throughput(&self) -> f64 {
        ratio(self.delivered_bits, self.window)
    }

    pub fn pdr(&self) -> f64 {
        ratio(self.delivered as f64, (self.delivered + self.dropped) as f64)
    }

    /// Shares of DATA transmissions: success, lost header, cooperation
    /// requested (header decoded, payload not).
    pub fn outcome_shares(&self) -> [f64; 3] {
        let n = self.data_tx as f64;
        [
            ratio(self.success_direct as f64, n),
            ratio(self.lost_header as f64, n),
            ratio(self.coop_requested as f64, n),
        ]
    }

    /// Cooperative successes as a share of all DATA transmissions.
    pub fn coop_success_share(&self) -> f64 {
        ratio(self.coop_success as f64, self.data_tx as f64)
    }

    pub fn failed_rounds(&self) -> u64 {
        self.empty_contention + self.failure_wo_tx + self.failure_with_tx
    }

    /// Shares of failed cooperative rounds: empty contention, all
    /// candidates gave up, relay transmitted but decoding failed.
    pub fn coop_failure_breakdown(&self) -> [f64; 3] {
        let n = self.failed_rounds() as f64;
        [
            ratio(self.empty_contention as f64, n),
            ratio(self.failure_wo_tx as f64, n),
            ratio(self.failure_with_tx as f64, n),
        ]
    }

    pub fn giveups(&self) -> u64 {
        self.giveup_cs_busy + self.giveup_rate_too_low + self.giveup_nav
    }

    /// Shares of give-ups by reason: cs_busy, rate_too_low, nav.
    pub fn giveup_breakdown(&self) -> [f64; 3] {
        let n = self.giveups() as f64;
        [
            ratio(self.giveup_cs_busy as f64, n),
            ratio(self.giveup_rate_too_low as f64, n),
            ratio(self.giveup_nav as f64, n),
        ]
    }

    pub fn relay_advancement(&self) -> f64 {
        let n = self.relay_samples.len() as f64;
        ratio(self.relay_samples.iter().filter(|s| s.advances()).count() as f64, n)
    }

    /// One CSV row matching [`METRICS_HEADER`].
    pub fn csv_row(&self, label: &str) -> String {
        let [sd, lh, cr] = self.outcome_shares();
        let [ec, wo, wt] = self.coop_failure_breakdown();
        let [cs, rt, nav] = self.giveup_breakdown();
        format!(
            "{},{},{:.3},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{},{},{},{},{},{},{},{:.6}",
            self.protocol,
            label,
            self.aggregate_throughput(),
            self.pdr(),
            sd,
            lh,
            cr,
            self.coop_success_share(),
            ec,
            wo,
            wt,
            cs,
            rt,
            nav,
            self.data_tx,
            self.delivered,
            self.dropped,
            self.in_flight,
            self.queue_overflow,
            self.coop_rounds,
            self.relay_tx,
            self.relay_collided,
            self.relay_samples.len(),
            self.relay_advancement(),
        )
    }

    /// Pools replications by summing counters; derived fractions of the
    /// result are ratios of pooled counts.
    pub fn pooled(reports: &[MetricsReport]) -> Option<MetricsReport> {
        let first = reports.first()?;
        let mut out = MetricsReport::empty(first.protocol, first.seed, 0.0);
        for r in reports {
            out.window += r.window;
            out.delivered_bits += r.delivered_bits;
            out.enqueued += r.enqueued;
            out.delivered += r.delivered;
            out.dropped += r.dropped;
            out.in_flight += r.in_flight;
            out.queue_overflow += r.queue_overflow;
            out.data_tx += r.data_tx;
            out.success_direct += r.success_direct;
            out.lost_header += r.lost_header;
            out.coop_requested += r.coop_requested;
            out.coop_rounds += r.coop_rounds;
            out.coop_success += r.coop_success;
            out.empty_contention += r.empty_contention;
            out.failure_wo_tx += r.failure_wo_tx;
            out.failure_with_tx += r.failure_with_tx;
            out.giveup_cs_busy += r.giveup_cs_busy;
            out.giveup_rate_too_low += r.giveup_rate_too_low;
            out.giveup_nav += r.giveup_nav;
            out.relay_tx += r.relay_tx;
            out.relay_collided += r.relay_collided;
            out.relay_samples.extend_from_slice(&r.relay_samples);
        }
        Some(out)
    }
}

/// Sample mean and 95% Student-t confidence half-width.
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::INFINITY);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).map(|d| d.inverse_cdf(0.975)).unwrap_or(f64::NAN);
    (mean, t * (var / n as f64).sqrt())
}

/// Empirical CDF of candidate-to-destination distances as
/// `(distance, cumulative share)` steps.
pub fn relay_distance_cdf(report: &MetricsReport) -> Vec<(f64, f64)> {
    let mut d: Vec<f64> = report.relay_samples.iter().map(|s| s.d_cd).collect();
    d.sort_by(f64::total_cmp);
    let n = d.len() as f64;
    d.iter().enumerate().map(|(i, &x)| (x, (i + 1) as f64 / n)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shares_and_breakdowns_are_consistent() {
        let mut r = MetricsReport::empty(Protocol::Dharq, 0, 2.0);
        r.data_tx = 10;
        r.success_direct = 5;
        r.lost_header = 3;
        r.coop_requested = 2;
        r.empty_contention = 1;
        r.failure_wo_tx = 1;
        r.giveup_cs_busy = 3;
        r.giveup_nav = 1;
        r.delivered_bits = 1e4;
        assert!((r.outcome_shares().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(r.coop_failure_breakdown(), [0.5, 0.5, 0.0]);
        assert_eq!(r.giveup_breakdown(), [0.75, 0.0, 0.25]);
        assert_eq!(r.aggregate_throughput(), 5e3);
        assert_eq!(r.csv_row("0").split(',').count(), METRICS_HEADER.split(',').count());
    }

    #[test]
    fn empty_report_is_all_zero() {
        let r = MetricsReport::empty(Protocol::Csma, 0, 1.0);
        assert_eq!(r.pdr(), 0.0);
        assert_eq!(r.outcome_shares(), [0.0; 3]);
        assert!(relay_distance_cdf(&r).is_empty());
    }

    #[test]
    fn cdf_is_monotone_and_ends_at_one() {
        let mut r = MetricsReport::empty(Protocol::Dharq, 0, 1.0);
        r.relay_samples = [40.0, 10.0, 25.0, 25.0].iter().map(|&d| RelaySample { d_cd: d, d_sd: 30.0 }).collect();
        let cdf = relay_distance_cdf(&r);
        assert!(cdf.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 < w[1].1));
        assert_eq!(cdf.last().unwrap().1, 1.0);
        assert_eq!(r.relay_advancement(), 0.75);
    }

    #[test]
    fn t_interval() {
        let (m, h) = mean_ci(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        // t(0.975, 3) = 3.182446
        assert!((h - 3.182446 * (1.666_666_666_7f64 / 4.0).sqrt()).abs() < 1e-5);
    }
}
