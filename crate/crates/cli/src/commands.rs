use std::fs;
use std::time::Instant;

use dharq_core::analysis::montecarlo::{mc_coop_minus, mc_coop_plus, mc_interferer_outage_ti, mc_outage_ti};
use dharq_core::analysis::{
    coop_avail_minus, coop_avail_plus, heatmaps, interferer_outage_ti, outage_prob_ti, write_heatmap_csv,
    BirthTimeDist, Quantity, Rect, Scenario3, ScenarioCoop,
};
use dharq_core::config::ExperimentConfig;
use dharq_core::sim::{self, mean_ci, relay_distance_cdf, MetricsReport, Protocol, SweepAxis, METRICS_HEADER};
use dharq_core::units::{dbm_to_watts, Position};
use dharq_core::PropagationParams;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::output::{create, write_lines, write_manifest};
use crate::{Common, Failure};

/// Below this many draws the Monte Carlo standard error can exceed the
/// comparison tolerance.
const SAMPLE_FLOOR: u64 = 100_000;
const TOLERANCE: f64 = 0.005;

fn load(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Validation(format!("cannot read {}: {e}", path.display())))?;
            ExperimentConfig::from_toml(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    if let Some(reps) = common.reps {
        cfg.run.replications = reps;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn command_line() -> String {
    std::env::args().skip(1).collect::<Vec<_>>().join(" ")
}

pub fn analyze(common: &Common, quantities: &[Quantity]) -> Result<(), Failure> {
    let started = Instant::now();
    let cfg = load(common)?;
    let quantities = if quantities.is_empty() { Quantity::ALL.to_vec() } else { quantities.to_vec() };
    let q = cfg.quadrature;
    let grid = q.area_grid;
    let props = cfg.run.props;
    // p_c is replaced by every cell center; any valid placeholder works.
    let sc = ScenarioCoop::new(
        Position::new(0.0, 0.0),
        Position::new(60.0, 0.0),
        Position::new(1.0, 1.0),
        grid.rect(),
        props,
        cfg.run.rates,
    )?;
    let f = BirthTimeDist::uniform(sc.packet_duration());
    let maps = heatmaps(&quantities, &sc, &grid, &f, &q)?;
    let mut files = Vec::new();
    for (quantity, cells) in quantities.iter().zip(&maps) {
        let name = format!("heatmap_{quantity}.csv");
        let mut w = create(&common.out.join(&name))?;
        write_heatmap_csv(&mut w, cells)?;
        use std::io::Write;
        w.flush()?;
        if let Some(best) = cells.iter().filter(|c| c.value.is_some()).max_by(|a, b| a.value.partial_cmp(&b.value).unwrap()) {
            println!("{quantity}: argmax ({:.1}, {:.1}) = {:.6e}", best.position.x, best.position.y, best.value.unwrap());
        }
        files.push(name);
    }
    write_manifest(&common.out, &command_line(), &cfg, started.elapsed(), &files)
}

fn summary_header() -> &'static str {
    "protocol,replications,throughput_bps,throughput_ci95,pdr,pdr_ci95,success_direct,lost_header,coop_requested,\
coop_success_share,empty_contention,failure_wo_tx,failure_with_tx,giveup_cs_busy,giveup_rate_too_low,giveup_nav,\
relay_advancement,gain_vs_csma"
}

fn summary_row(label: &str, reports: &[MetricsReport], csma: Option<f64>) -> String {
    let pooled = MetricsReport::pooled(reports).expect("at least one replication");
    let (thr, thr_ci) = mean_ci(&reports.iter().map(|r| r.aggregate_throughput()).collect::<Vec<_>>());
    let (pdr, pdr_ci) = mean_ci(&reports.iter().map(|r| r.pdr()).collect::<Vec<_>>());
    let [sd, lh, cr] = pooled.outcome_shares();
    let [ec, wo, wt] = pooled.coop_failure_breakdown();
    let [cs, rt, nav] = pooled.giveup_breakdown();
    let gain = csma.map(|c| format!("{:.6}", thr / c - 1.0)).unwrap_or_default();
    format!(
        "{label},{},{thr:.3},{thr_ci:.3},{pdr:.6},{pdr_ci:.6},{sd:.6},{lh:.6},{cr:.6},{:.6},{ec:.6},{wo:.6},{wt:.6},{cs:.6},{rt:.6},{nav:.6},{:.6},{gain}",
        reports.len(),
        pooled.coop_success_share(),
        pooled.relay_advancement()
    )
}

fn mean_throughput(reports: &[MetricsReport]) -> f64 {
    reports.iter().map(|r| r.aggregate_throughput()).sum::<f64>() / reports.len() as f64
}

pub fn simulate(common: &Common, protocols: &[Protocol]) -> Result<(), Failure> {
    let started = Instant::now();
    let cfg = load(common)?;
    let protocols = if protocols.is_empty() { Protocol::ALL.to_vec() } else { protocols.to_vec() };
    let mut runs = Vec::new();
    for &p in &protocols {
        let reports = sim::run(&cfg.run_config(p))?;
        println!("{p}: throughput {:.0} bit/s over {} replications", mean_throughput(&reports), reports.len());
        runs.push((p, reports));
    }
    let csma = runs.iter().find(|(p, _)| *p == Protocol::Csma).map(|(_, r)| mean_throughput(r));

    let mut reps = Vec::new();
    let mut summary = Vec::new();
    let mut cdf = Vec::new();
    for (p, reports) in &runs {
        reps.extend(reports.iter().map(|r| r.csv_row(&r.seed.to_string())));
        summary.push(summary_row(p.as_str(), reports, csma));
        let pooled = MetricsReport::pooled(reports).expect("at least one replication");
        cdf.extend(relay_distance_cdf(&pooled).into_iter().map(|(d, c)| format!("{p},{d:.3},{c:.6}")));
    }
    write_lines(&common.out.join("replications.csv"), METRICS_HEADER, &reps)?;
    write_lines(&common.out.join("summary.csv"), summary_header(), &summary)?;
    write_lines(&common.out.join("relay_cdf.csv"), "protocol,d_cd_m,cdf", &cdf)?;
    let files = ["replications.csv", "summary.csv", "relay_cdf.csv"].map(String::from);
    write_manifest(&common.out, &command_line(), &cfg, started.elapsed(), &files)
}

pub fn sweep(common: &Common, axis: SweepAxis, values: &[f64], protocols: &[Protocol]) -> Result<(), Failure> {
    let started = Instant::now();
    let cfg = load(common)?;
    let protocols = if protocols.is_empty() { vec![Protocol::Csma, Protocol::Dharq] } else { protocols.to_vec() };
    let mut points = Vec::new();
    for &p in &protocols {
        let pts = sim::sweep(axis, values, &cfg.run_config(p))?;
        points.push((p, pts));
    }
    let csma = points.iter().find(|(p, _)| *p == Protocol::Csma).map(|(_, pts)| pts);

    let mut summary = Vec::new();
    let mut reps = Vec::new();
    for (p, pts) in &points {
        for (k, pt) in pts.iter().enumerate() {
            let base = csma.map(|c| mean_throughput(&c[k].reports));
            summary.push(format!("{},{}", pt.value, summary_row(p.as_str(), &pt.reports, base)));
            reps.extend(pt.reports.iter().map(|r| format!("{},{}", pt.value, r.csv_row(&r.seed.to_string()))));
        }
    }
    let name = format!("sweep_{axis}.csv");
    let rep_name = format!("sweep_{axis}_replications.csv");
    write_lines(&common.out.join(&name), &format!("{axis},{}", summary_header()), &summary)?;
    write_lines(&common.out.join(&rep_name), &format!("{axis},{METRICS_HEADER}"), &reps)?;
    for row in &summary {
        println!("{row}");
    }
    write_manifest(&common.out, &command_line(), &cfg, started.elapsed(), &[name, rep_name])
}

struct Check {
    name: String,
    quantity: &'static str,
    analytic: f64,
    mc: f64,
}

fn p(x: f64, y: f64) -> Position {
    Position::new(x, y)
}

pub fn validate(common: &Common, samples: u64) -> Result<(), Failure> {
    let started = Instant::now();
    let cfg = load(common)?;
    if samples == 0 {
        return Err(Failure::Validation("samples must be positive".into()));
    }
    if samples < SAMPLE_FLOOR {
        eprintln!(
            "warning: {samples} samples is below the confidence floor of {SAMPLE_FLOOR}; the +/-{TOLERANCE} comparison is not reliable"
        );
    }
    let q = cfg.quadrature;
    let rates = cfg.run.rates;
    let base = cfg.run.props;
    let weak = PropagationParams { tx_power: dbm_to_watts(-20.0), cs_threshold: dbm_to_watts(-97.0), ..base };
    let degenerate = PropagationParams { cs_threshold: base.noise_floor, ..base };
    let region = Rect::new(-60.0, 180.0, -120.0, 120.0)?;
    let scenarios = [
        ("s1", base, p(60.0, 0.0), p(80.0, 0.0), p(20.0, 10.0), 0.5),
        ("s2", base, p(60.0, 0.0), p(90.0, 10.0), p(40.0, 20.0), 0.3),
        ("s3", base, p(80.0, 0.0), p(100.0, -20.0), p(10.0, 0.0), 0.8),
        ("s4", weak, p(60.0, 0.0), p(90.0, 0.0), p(30.0, 0.0), 0.1),
        ("s5", weak, p(40.0, 30.0), p(50.0, 50.0), p(15.0, 5.0), 0.9),
        ("cs_at_noise", degenerate, p(60.0, 0.0), p(80.0, 0.0), p(20.0, 10.0), 0.5),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    let mut checks = Vec::new();
    for (name, props, p_d, p_i, p_c, frac) in scenarios {
        let s = Scenario3::new(p(0.0, 0.0), p_d, p_i, props, rates)?;
        let sc = ScenarioCoop::new(p(0.0, 0.0), p_d, p_c, region, props, rates)?;
        let t = frac * s.packet_duration();
        let mut push = |quantity, analytic, mc| checks.push(Check { name: name.to_string(), quantity, analytic, mc });
        push("outage_ti", outage_prob_ti(&s, t, &q)?, mc_outage_ti(&s, t, samples, &mut rng)?.mean);
        push("interferer_outage_ti", interferer_outage_ti(&s, t, &q)?, mc_interferer_outage_ti(&s, t, samples, &mut rng)?.mean);
        push("coop_minus", coop_avail_minus(&sc, p_i, -t, &q)?, mc_coop_minus(&sc, p_i, -t, samples, &mut rng)?.mean);
        push("coop_plus", coop_avail_plus(&sc, p_i, t, &q)?, mc_coop_plus(&sc, p_i, t, samples, &mut rng)?.mean);
    }
    let mut rows = Vec::new();
    let mut failures = 0;
    for c in &checks {
        let diff = (c.analytic - c.mc).abs();
        let ok = diff <= TOLERANCE;
        failures += usize::from(!ok);
        println!(
            "{:<12} {:<21} analytic {:.6} mc {:.6} |diff| {diff:.6} {}",
            c.name,
            c.quantity,
            c.analytic,
            c.mc,
            if ok { "pass" } else { "FAIL" }
        );
        rows.push(format!("{},{},{:.6},{:.6},{diff:.6},{ok}", c.name, c.quantity, c.analytic, c.mc));
    }
    write_lines(&common.out.join("validate.csv"), "scenario,quantity,analytic,monte_carlo,abs_diff,pass", &rows)?;
    write_manifest(&common.out, &command_line(), &cfg, started.elapsed(), &["validate.csv".to_string()])?;
    if failures > 0 {
        return Err(Failure::Validation(format!("{failures} of {} checks outside +/-{TOLERANCE}", checks.len())));
    }
    Ok(())
}
