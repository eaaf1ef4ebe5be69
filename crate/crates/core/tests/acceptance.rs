//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits 0
//! unless `ACCEPTANCE_STRICT=1` is set.

use std::time::Instant;

use dharq_core::analysis::montecarlo::*;
use dharq_core::analysis::*;
use dharq_core::channel::{jakes_autocorrelation, sample_fading_trace, PropagationParams, RateParams};
use dharq_core::dharq::{combined_bits, dequantize, quantize_sinr, relay_rate, DharqConfig, RateDecision};
use dharq_core::sim::*;
use dharq_core::units::{db_to_linear, dbm_to_watts, watts_to_dbm, Position};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const MC_DRAWS: u64 = 1_000_000;
const SIM_REPS: u32 = 20;
const SIM_DURATION: f64 = 3.0;

struct Outcome {
    id: u32,
    pass: bool,
    summary: String,
    secs: f64,
}

fn p(x: f64, y: f64) -> Position {
    Position::new(x, y)
}

fn weak_props() -> PropagationParams {
    PropagationParams { tx_power: dbm_to_watts(-20.0), cs_threshold: dbm_to_watts(-97.0), ..Default::default() }
}

fn region() -> Rect {
    Rect::new(-60.0, 180.0, -120.0, 120.0).unwrap()
}

fn criterion_1() -> (bool, String) {
    let q = QuadratureConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let configs = [
        (PropagationParams::default(), p(60.0, 0.0), p(80.0, 0.0), p(20.0, 10.0), 0.5),
        (PropagationParams::default(), p(60.0, 0.0), p(90.0, 10.0), p(40.0, 20.0), 0.3),
        (PropagationParams::default(), p(80.0, 0.0), p(100.0, -20.0), p(10.0, 0.0), 0.8),
        (weak_props(), p(60.0, 0.0), p(90.0, 0.0), p(30.0, 0.0), 0.1),
        (weak_props(), p(40.0, 30.0), p(50.0, 50.0), p(15.0, 5.0), 0.9),
    ];
    let mut worst = 0.0f64;
    let mut slowest = 0.0f64;
    for (props, p_d, p_i, p_c, frac) in configs {
        let started = Instant::now();
        let rates = RateParams::default();
        let s = Scenario3::new(p(0.0, 0.0), p_d, p_i, props, rates).unwrap();
        let sc = ScenarioCoop::new(p(0.0, 0.0), p_d, p_c, region(), props, rates).unwrap();
        let t = frac * s.packet_duration();
        let pairs = [
            (outage_prob_ti(&s, t, &q).unwrap(), mc_outage_ti(&s, t, MC_DRAWS, &mut rng).unwrap().mean),
            (interferer_outage_ti(&s, t, &q).unwrap(), mc_interferer_outage_ti(&s, t, MC_DRAWS, &mut rng).unwrap().mean),
            (coop_avail_minus(&sc, p_i, -t, &q).unwrap(), mc_coop_minus(&sc, p_i, -t, MC_DRAWS, &mut rng).unwrap().mean),
            (coop_avail_plus(&sc, p_i, t, &q).unwrap(), mc_coop_plus(&sc, p_i, t, MC_DRAWS, &mut rng).unwrap().mean),
        ];
        for (quad, mc) in pairs {
            worst = worst.max((quad - mc).abs());
        }
        slowest = slowest.max(started.elapsed().as_secs_f64());
    }
    let pass = worst <= 0.005 && slowest < 120.0;
    (pass, format!("5 configs x 4 quantities, max |quad - MC| = {worst:.5} (tol 0.005), slowest config {slowest:.1}s"))
}

fn best(cells: &[(Position, f64)]) -> (Position, f64) {
    *cells.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap()
}

fn near_mean(cells: &[(Position, f64)], c: Position, radius: f64) -> f64 {
    let v: Vec<f64> = cells.iter().filter(|x| x.0.distance(&c) <= radius).map(|x| x.1).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn analysis_criteria(out: &mut Vec<Outcome>) {
    let q = QuadratureConfig::default();
    let sc = ScenarioCoop::canonical(p(1.0, 1.0)).unwrap();
    let f = BirthTimeDist::uniform(sc.packet_duration());
    let grid = GridSpec::default();

    let started = Instant::now();
    let cells: Vec<(Position, f64)> = heatmap(Quantity::Interferer, &sc, &grid, &f, &q)
        .unwrap()
        .into_iter()
        .filter_map(|c| c.value.map(|v| (c.position, v)))
        .collect();
    let (arg, _) = best(&cells);
    let secs = started.elapsed().as_secs_f64();
    out.push(Outcome {
        id: 2,
        pass: arg.x > 60.0 && arg.y.abs() < 20.0 && secs < 300.0,
        summary: format!("interferer argmax at ({:.1}, {:.1}), want x > 60 and |y| < 20", arg.x, arg.y),
        secs,
    });

    let started = Instant::now();
    let targets: Vec<Position> =
        grid.cell_centers().into_iter().filter(|c| *c != sc.p_s && *c != sc.p_d).collect();
    let field = CoopField::new(&sc, &targets, &f, &q).unwrap();
    let values: Vec<(Position, CoopValues)> = targets.iter().map(|c| (*c, field.eval(*c).unwrap())).collect();
    let pick = |g: fn(&CoopValues) -> f64| values.iter().map(|(c, v)| (*c, g(v))).collect::<Vec<_>>();
    let minus = pick(|v| v.minus);
    let plus = pick(|v| v.plus);
    let avg = pick(|v| v.average);
    let secs = started.elapsed().as_secs_f64();

    // Relative drop from the S neighborhood to the D neighborhood.
    let gap = |cells: &[(Position, f64)]| {
        let (s, d) = (near_mean(cells, sc.p_s, 10.0), near_mean(cells, sc.p_d, 10.0));
        (s, d, 1.0 - d / s)
    };
    let (ms, md, g_minus) = gap(&minus);
    let (ps, pd, g_plus) = gap(&plus);
    out.push(Outcome {
        id: 3,
        pass: (0.03..=0.08).contains(&g_minus) && g_plus >= 1.8 * g_minus,
        summary: format!(
            "decode-only near S {ms:.5} near D {md:.5} gap {:.2}% (want 3-8); with CS near S {ps:.3e} near D {pd:.3e} gap {:.2}% = {:.1}x (want >= 1.8x)",
            100.0 * g_minus,
            100.0 * g_plus,
            g_plus / g_minus
        ),
        secs,
    });

    let (arg, _) = best(&avg);
    let dist = arg.distance(&sc.p_s);
    out.push(Outcome {
        id: 4,
        pass: dist <= 15.0,
        summary: format!("averaged cooperator argmax at ({:.1}, {:.1}), {dist:.1} m from S (want <= 15)", arg.x, arg.y),
        secs: 0.0,
    });
}

fn base(protocol: Protocol, lambda: f64) -> RunConfig {
    let mut c = RunConfig::new(protocol);
    c.traffic.lambda = lambda;
    c.traffic.duration = SIM_DURATION;
    c.replications = SIM_REPS;
    c
}

fn throughput(r: &MetricsReport) -> f64 {
    r.aggregate_throughput()
}

/// Smallest swept load whose CSMA throughput changes by less than 2% at the
/// next sweep point.
fn saturation_lambda() -> (f64, String) {
    let grid = [100.0, 200.0, 400.0, 800.0, 1600.0];
    let mut c = base(Protocol::Csma, 0.0);
    c.replications = 5;
    c.traffic.duration = 2.0;
    let pts = sweep(SweepAxis::Lambda, &grid, &c).unwrap();
    let thr: Vec<f64> = pts.iter().map(|pt| throughput(&pt.pooled) / pt.reports.len() as f64).collect();
    let text = grid.iter().zip(&thr).map(|(l, t)| format!("{l:.0}:{:.2}", t / 1e6)).collect::<Vec<_>>().join(" ");
    for k in 0..grid.len() - 1 {
        if ((thr[k + 1] - thr[k]) / thr[k]).abs() < 0.02 {
            return (grid[k], text);
        }
    }
    (grid[grid.len() - 1], text)
}

fn simulation_criteria(out: &mut Vec<Outcome>) {
    let started = Instant::now();
    let (lambda, curve) = saturation_lambda();
    println!("  saturation load {lambda} kbit/s per node (CSMA Mbit/s per load: {curve}), {:.1}s", started.elapsed().as_secs_f64());

    let started = Instant::now();
    let csma = run(&base(Protocol::Csma, lambda)).unwrap();
    let dharq = run(&base(Protocol::Dharq, lambda)).unwrap();
    let ideal = run(&base(Protocol::DharqIdealBound, lambda)).unwrap();
    let secs = started.elapsed().as_secs_f64();

    let pdr_ci = |rs: &[MetricsReport]| mean_ci(&rs.iter().map(|r| r.pdr()).collect::<Vec<_>>());
    let (pc, hc) = pdr_ci(&csma);
    let (pd, hd) = pdr_ci(&dharq);
    let band = |v: f64| (0.92..=0.98).contains(&v);
    out.push(Outcome {
        id: 5,
        pass: band(pc) && band(pd) && hc < 0.03 * pc && hd < 0.03 * pd && secs < 1800.0,
        summary: format!("PDR csma {pc:.4} +/- {hc:.4}, dharq {pd:.4} +/- {hd:.4} (want [0.92, 0.98], CI < 3%), {SIM_REPS} reps x {SIM_DURATION}s"),
        secs,
    });

    let mean_thr = |rs: &[MetricsReport]| rs.iter().map(throughput).sum::<f64>() / rs.len() as f64;
    let (tc, td, ti) = (mean_thr(&csma), mean_thr(&dharq), mean_thr(&ideal));
    let (gd, gi) = (td / tc - 1.0, ti / tc - 1.0);
    let per_seed: Vec<(f64, f64)> =
        csma.iter().zip(&dharq).zip(&ideal).map(|((c, d), i)| (throughput(d) / throughput(c) - 1.0, throughput(i) / throughput(c) - 1.0)).collect();
    let dharq_below = per_seed.iter().filter(|g| g.0 < 0.0).count();
    let ideal_below = per_seed.iter().filter(|g| g.1 < g.0).count();
    let worst_d = per_seed.iter().map(|g| g.0).fold(f64::INFINITY, f64::min);
    out.push(Outcome {
        id: 6,
        pass: (0.0..=0.12).contains(&gd) && gi >= gd && gi <= 0.18 && dharq_below == 0 && ideal_below == 0,
        summary: format!(
            "gain dharq {:+.2}% (want [0, 12]), ideal {:+.2}% (want [dharq, 18]); per-seed dharq < csma on {dharq_below}/{SIM_REPS} (worst {:+.2}%), ideal < dharq on {ideal_below}/{SIM_REPS}",
            100.0 * gd,
            100.0 * gi,
            100.0 * worst_d
        ),
        secs: 0.0,
    });

    let pooled = MetricsReport::pooled(&dharq).unwrap();
    let [direct, lost, coop_req] = pooled.outcome_shares();
    out.push(Outcome {
        id: 7,
        pass: (0.20..=0.40).contains(&lost) && coop_req < lost,
        summary: format!("dharq shares: success_direct {direct:.3}, coop_requested {coop_req:.3}, lost_header {lost:.3} (want lost in [0.20, 0.40], coop_requested < lost)"),
        secs: 0.0,
    });

    let [empty, wo_tx, with_tx] = pooled.coop_failure_breakdown();
    let [cs_busy, too_low, nav] = pooled.giveup_breakdown();
    out.push(Outcome {
        id: 8,
        pass: (0.45..=0.75).contains(&wo_tx) && (0.65..=0.90).contains(&cs_busy),
        summary: format!(
            "failed rounds: empty {empty:.3}, failure_wo_tx {wo_tx:.3}, failure_with_tx {with_tx:.3} (want wo_tx in [0.45, 0.75]); give-ups: cs_busy {cs_busy:.3}, rate_too_low {too_low:.3}, nav {nav:.3} (want cs_busy in [0.65, 0.90])"
        ),
        secs: 0.0,
    });

    let started = Instant::now();
    let mut adv = base(Protocol::Dharq, lambda);
    adv.traffic.duration = 4.0;
    let deltas = [25.0, 40.0, 60.0];
    let pts = sweep(SweepAxis::DeltaSd, &deltas, &adv).unwrap();
    let cdfs: Vec<Vec<f64>> = pts
        .iter()
        .map(|pt| {
            let mut d: Vec<f64> = pt.pooled.relay_samples.iter().map(|s| s.d_cd).collect();
            d.sort_by(f64::total_cmp);
            d
        })
        .collect();
    let quantile = |d: &[f64], q: f64| d[((q * d.len() as f64).ceil() as usize).clamp(1, d.len()) - 1];
    let nonempty = cdfs.iter().all(|d| !d.is_empty());
    let ordered = nonempty
        && (1..10).all(|k| {
            let q = k as f64 / 10.0;
            cdfs.windows(2).all(|w| quantile(&w[0], q) <= quantile(&w[1], q))
        });
    let at60 = &pts[2].pooled;
    let frac = at60.relay_advancement();
    let medians: Vec<String> =
        cdfs.iter().map(|d| if d.is_empty() { "-".into() } else { format!("{:.1}", quantile(d, 0.5)) }).collect();
    out.push(Outcome {
        id: 9,
        pass: (0.20..=0.40).contains(&frac) && ordered,
        summary: format!(
            "advancing candidates at 60 m: {frac:.3} of {} (want [0.20, 0.40]); median d_cd for 25/40/60 m: {}; decile ordering {}",
            at60.relay_samples.len(),
            medians.join("/"),
            if ordered { "holds" } else { "violated" }
        ),
        secs: started.elapsed().as_secs_f64(),
    });

    let started = Instant::now();
    let thresholds = [-104.0, -102.0, -100.0, -98.0, -97.0, -96.0, -94.0, -92.0, -90.0, -88.0, -85.0, -82.0];
    let mut sw = base(Protocol::Dharq, lambda);
    sw.replications = 10;
    let mut reference = base(Protocol::Csma, lambda);
    reference.replications = sw.replications;
    let csma_thr = throughput(&MetricsReport::pooled(&run(&reference).unwrap()).unwrap());
    let pts = sweep(SweepAxis::RelayCsThreshold, &thresholds, &sw).unwrap();
    let share: Vec<f64> = pts.iter().map(|pt| pt.pooled.coop_success_share()).collect();
    let gain: Vec<f64> = pts.iter().map(|pt| throughput(&pt.pooled) / csma_thr - 1.0).collect();
    let interior = |v: &[f64]| {
        let (k, m) = v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        let rises = v[..k].iter().any(|x| x < m);
        let falls = v[k + 1..].iter().any(|x| x < m);
        (k, k > 0 && k + 1 < v.len() && rises && falls)
    };
    let (ks, is) = interior(&share);
    let (kg, ig) = interior(&gain);
    let near = |k: usize| (thresholds[k] + 97.0).abs() <= 3.0;
    let curve = |v: &[f64]| thresholds.iter().zip(v).map(|(t, x)| format!("{t:.0}:{:.4}", x)).collect::<Vec<_>>().join(" ");
    println!("  coop success share by relay threshold: {}", curve(&share));
    println!("  throughput gain by relay threshold: {}", curve(&gain));
    out.push(Outcome {
        id: 10,
        pass: is && ig && near(ks) && near(kg),
        summary: format!(
            "coop share max at {} dBm (interior {is}), gain max at {} dBm (interior {ig}); want interior maxima within -97 +/- 3 dBm",
            thresholds[ks], thresholds[kg]
        ),
        secs: started.elapsed().as_secs_f64(),
    });
}

fn detail<'a>(d: &'a str, key: &str) -> Option<&'a str> {
    d.split(';').find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
}

fn criterion_11() -> (bool, String) {
    let mut failed: Vec<&str> = Vec::new();
    let rates = RateParams::default();
    let props = PropagationParams::default();
    let packet = rates.payload_duration();

    let mut xi_ok = true;
    for t in [0.0, 0.1 * packet, -0.5 * packet, 0.9 * packet] {
        let (es, _) = eta_bounds(t, &rates, &props).unwrap();
        xi_ok &= xi(es, t, &rates, &props).unwrap().abs() < 1e-12 * es;
    }
    // The blow-up towards the upper bound is sharp only for |t| <= T/2.
    for t in [0.25 * packet, 0.5 * packet, -0.5 * packet] {
        let (es, eb) = eta_bounds(t, &rates, &props).unwrap();
        let vals: Vec<f64> = (0..100).map(|k| xi(es + (eb - es) * k as f64 / 100.0, t, &rates, &props).unwrap()).collect();
        xi_ok &= vals.windows(2).all(|w| w[1] > w[0]);
        xi_ok &= xi(eb * (1.0 - 1e-6), t, &rates, &props).unwrap() > 1e6 * xi(0.5 * (es + eb), t, &rates, &props).unwrap();
    }
    if !xi_ok {
        failed.push("xi");
    }

    let dcfg = DharqConfig::default();
    let quant_ok = (0..=10_000).all(|k| {
        let g = db_to_linear(-40.0 + 100.0 * k as f64 / 10_000.0);
        dequantize(quantize_sinr(g, &dcfg), &dcfg) <= g
    });
    if !quant_ok {
        failed.push("quantizer");
    }

    let mut closure_ok = true;
    for i in 0..40 {
        for j in 0..40 {
            let (g_sd, g_cd) = (3.0 * i as f64 / 40.0, 1000.0 * (j as f64 / 40.0).powi(3));
            let rho = match relay_rate(g_sd, g_cd, &rates, props.bandwidth, &dcfg).unwrap() {
                RateDecision::Relay(x) | RateDecision::RateTooLow(x) => x,
                RateDecision::AlreadyDecodable => continue,
            };
            if rho > 0.0 {
                let bits = combined_bits(g_sd, g_cd, rho, &rates, props.bandwidth).unwrap();
                let want = rates.payload_bits * (1.0 + dcfg.epsilon);
                closure_ok &= (bits - want).abs() < 1e-9 * want;
            }
        }
    }
    if !closure_ok {
        failed.push("rate closure");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut mean = 0.0;
    let mut acf_err = 0.0f64;
    let runs = 20;
    for _ in 0..runs {
        let tr = sample_fading_trace(20.0, 1e-3, props.max_doppler, &mut rng).unwrap();
        mean += tr.mean_gain() / runs as f64;
        for lag in [1, 5, 10, 20] {
            let want = jakes_autocorrelation(lag as f64 * 1e-3, props.max_doppler);
            acf_err = acf_err.max((tr.autocorrelation(lag) - want).abs() / runs as f64);
        }
    }
    if (mean - 1.0).abs() > 0.1 {
        failed.push("fading mean gain");
    }

    let mut mac_ok = true;
    for protocol in Protocol::ALL {
        let mut c = RunConfig::new(protocol);
        c.traffic.lambda = 400.0;
        c.traffic.duration = 0.5;
        c.log_events = true;
        c.trace_mac = true;
        let a = simulate(&c, 1).unwrap();
        let b = simulate(&c, 1).unwrap();
        let lines = |o: &RunOutput| o.events.iter().map(|e| e.to_string()).collect::<Vec<_>>();
        mac_ok &= lines(&a) == lines(&b) && a.mac_trace == b.mac_trace && a.report == b.report;
        let cs = watts_to_dbm(c.mac.cs_threshold) + 5e-4;
        for e in a.events.iter().filter(|e| e.kind == "tx_start") {
            if detail(&e.detail, "kind") == Some("DATA") {
                let sensed: f64 = detail(&e.detail, "sensed_dbm").unwrap().parse().unwrap();
                let attempt: u32 = detail(&e.detail, "attempt").unwrap().parse().unwrap();
                mac_ok &= sensed < cs && detail(&e.detail, "nav") == Some("0") && attempt < c.mac.srl;
            }
        }
        let r = &a.report;
        mac_ok &= r.enqueued == r.delivered + r.dropped + r.in_flight;
    }
    if !mac_ok {
        failed.push("mac trace / determinism");
    }

    let pass = failed.is_empty() && acf_err < 0.05;
    (
        pass,
        format!(
            "xi, quantizer, rate closure, fading (mean gain {mean:.3}, autocorrelation error {acf_err:.3}), MAC trace and determinism{}",
            if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) }
        ),
    )
}

fn main() {
    // `cargo test` passes harness flags; a name filter that excludes us is honored.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    // ACCEPTANCE_ONLY=1,11 restricts the run; grouped criteria run together.
    let only: Option<Vec<u32>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |ids: &[u32]| only.as_ref().is_none_or(|o| ids.iter().any(|i| o.contains(i)));
    let mut out = Vec::new();

    if wanted(&[1]) {
        let started = Instant::now();
        let (pass, summary) = criterion_1();
        out.push(Outcome { id: 1, pass, summary, secs: started.elapsed().as_secs_f64() });
    }
    if wanted(&[2, 3, 4]) {
        analysis_criteria(&mut out);
    }
    if wanted(&[5, 6, 7, 8, 9, 10]) {
        simulation_criteria(&mut out);
    }
    if wanted(&[11]) {
        let started = Instant::now();
        let (pass, summary) = criterion_11();
        out.push(Outcome { id: 11, pass, summary, secs: started.elapsed().as_secs_f64() });
    }

    out.sort_by_key(|o| o.id);
    println!();
    for o in &out {
        println!("criterion {:>2}: {} [{:.1}s] {}", o.id, if o.pass { "PASS" } else { "FAIL" }, o.secs, o.summary);
    }
    let failures = out.iter().filter(|o| !o.pass).count();
    println!("{} of {} criteria pass", out.len() - failures, out.len());
    if failures > 0 && std::env::var("ACCEPTANCE_STRICT").as_deref() == Ok("1") {
        std::process::exit(1);
    }
}
