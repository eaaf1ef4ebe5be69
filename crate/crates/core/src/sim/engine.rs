use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet, VecDeque};
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::metrics::{MetricsReport, RelaySample};
use super::{generate_topology, stream, Protocol, RunConfig, Stream, Topology};
use crate::channel::{JakesProcess, LinkFading};
use crate::dharq::{
    dequantize, quantize_sinr, relay_rate, CandidatePhase, ContentionAction, ContentionEvent, GiveUpReason,
    RateDecision, RelayCandidateState,
};
use crate::error::Result;
use crate::mac::{nav_update, trace_line, Frame, FrameKind, MacAction, MacEvent, Payload, Phase};
use crate::mac::MacState;
use crate::units::{watts_to_dbm, SimTime};

/// One line of the event log.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub time: SimTime,
    pub kind: &'static str,
    pub src: usize,
    pub dst: Option<usize>,
    pub detail: String,
}

impl fmt::Display for EventRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3},{},{},", self.time.as_micros_f64(), self.kind, self.src)?;
        if let Some(d) = self.dst {
            write!(f, "{d}")?;
        }
        write!(f, ",{}", self.detail)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub topology: Topology,
    /// Empty unless `log_events` is set.
    pub events: Vec<EventRecord>,
    /// Empty unless `trace_mac` is set.
    pub mac_trace: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ev {
    TxEnd(usize),
    HeaderEnd(usize),
    /// Deferred ACK, NACK or ideal-bound relay.
    StartFrame(usize),
    Tick,
    LockResolve,
    AckTimeout { node: usize, token: u64 },
    RoundDeadline(usize),
    Arrival(usize),
    End,
}

impl Ev {
    fn prio(&self) -> u8 {
        match self {
            Ev::TxEnd(_) => 0,
            Ev::HeaderEnd(_) => 1,
            Ev::StartFrame(_) => 2,
            Ev::Tick => 3,
            Ev::LockResolve => 4,
            Ev::AckTimeout { .. } | Ev::RoundDeadline(_) => 5,
            Ev::Arrival(_) => 6,
            Ev::End => 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Scheduled {
    time: SimTime,
    prio: u8,
    seq: u64,
    ev: Ev,
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.prio, other.seq).cmp(&(self.time, self.prio, self.seq))
    }
}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
struct Tx {
    node: usize,
    frame: Frame,
    header_end: SimTime,
    end: SimTime,
    round: Option<usize>,
}

#[derive(Debug, Clone)]
struct Reception {
    tx: usize,
    header_end: SimTime,
    end: SimTime,
    last: SimTime,
    header_acc: f64,
    body_acc: f64,
    sinr_integral: f64,
    body_time: f64,
    header_ok: bool,
    integrate_body: bool,
}

impl Reception {
    fn mean_sinr(&self) -> f64 {
        if self.body_time > 0.0 {
            self.sinr_integral / self.body_time
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone)]
struct Candidate {
    round: usize,
    state: RelayCandidateState,
    start_at: SimTime,
}

#[derive(Debug, Clone)]
struct Node {
    mac: MacState,
    rx: Option<Reception>,
    transmitting: Option<usize>,
    /// A deferred frame of this node is scheduled.
    pending_frame: bool,
    /// Open cooperative round with this node as destination.
    round: Option<usize>,
    candidate: Option<Candidate>,
    cache: VecDeque<u64>,
    timer_token: u64,
    backoff_rng: ChaCha8Rng,
    traffic_rng: ChaCha8Rng,
    relay_rng: ChaCha8Rng,
    neighbors: Vec<usize>,
}

impl Node {
    fn has_role(&self) -> bool {
        self.transmitting.is_some() || self.pending_frame || self.round.is_some() || self.candidate.is_some()
    }
}

#[derive(Debug, Clone)]
struct Round {
    src: usize,
    dst: usize,
    payload_id: u64,
    source_bits: f64,
    candidates: u32,
    relays: u32,
    overlap: bool,
    open: bool,
    in_window: bool,
}

const CACHE_DEPTH: usize = 8;

struct Sim<'a> {
    cfg: &'a RunConfig,
    now: SimTime,
    seq: u64,
    queue: BinaryHeap<Scheduled>,
    nodes: Vec<Node>,
    positions: Vec<crate::units::Position>,
    mean: Vec<f64>,
    links: Vec<LinkFading>,
    /// Gain of each link for the slot it was last evaluated in.
    gain_cache: Vec<(u64, f64)>,
    /// Aggregate received power per node for one slot and active set.
    total_cache: Vec<(u64, u64, f64)>,
    active_version: u64,
    txs: Vec<Tx>,
    active: Vec<usize>,
    just_started: Vec<usize>,
    pending: Vec<(usize, Frame, Option<usize>)>,
    pending_frames: Vec<(usize, Frame, Option<usize>)>,
    rounds: Vec<Round>,
    delivered_ids: HashSet<u64>,
    next_payload: u64,
    slot: SimTime,
    sifs: SimTime,
    warmup: SimTime,
    end: SimTime,
    noise: f64,
    bandwidth: f64,
    report: MetricsReport,
    events: Vec<EventRecord>,
    mac_trace: Vec<String>,
}

/// Runs replication `rep` of `cfg`.
pub fn simulate(cfg: &RunConfig, rep: u32) -> Result<RunOutput> {
    cfg.validate()?;
    let seed = cfg.replication_seed(rep);
    let topology = generate_topology(&mut stream(seed, Stream::Topology, 0), &cfg.topology)?;
    let n = topology.len();
    let slot = cfg.mac.slot_time();
    let anchor = SimTime::from_secs((cfg.fading_anchor / cfg.mac.slot).round() * cfg.mac.slot);

    let loss = 10f64.powf(-cfg.reference_loss_db / 10.0);
    let mut mean = vec![0.0; n * n];
    let mut links = Vec::with_capacity(n * (n - 1) / 2);
    for a in 0..n {
        for b in 0..n {
            if a != b {
                mean[a * n + b] = loss * cfg.props.mean_power_at(topology.positions[a].distance(&topology.positions[b]));
            }
        }
        for b in a + 1..n {
            let mut rng = stream(seed, Stream::Fading, link_index(a, b, n) as u64);
            links.push(LinkFading::new(JakesProcess::new(cfg.props.max_doppler, &mut rng), slot, anchor));
        }
    }

    let nodes = (0..n)
        .map(|i| {
            let mut neighbors = topology.neighbors(i, cfg.traffic.neighbor_radius);
            if let Some((s, d)) = topology.pinned {
                if i == s {
                    neighbors = vec![d];
                }
            }
            Node {
                mac: MacState::new(),
                rx: None,
                transmitting: None,
                pending_frame: false,
                round: None,
                candidate: None,
                cache: VecDeque::new(),
                timer_token: 0,
                backoff_rng: stream(seed, Stream::Backoff, i as u64),
                traffic_rng: stream(seed, Stream::Traffic, i as u64),
                relay_rng: stream(seed, Stream::Relay, i as u64),
                neighbors,
            }
        })
        .collect();

    let end = SimTime::from_secs(cfg.traffic.duration);
    let warmup = SimTime::from_secs(cfg.traffic.duration * cfg.traffic.warmup_fraction);
    let window = (end.0 - warmup.0) as f64 * 1e-9;
    let mut sim = Sim {
        cfg,
        now: SimTime::ZERO,
        seq: 0,
        queue: BinaryHeap::new(),
        nodes,
        positions: topology.positions.clone(),
        mean,
        gain_cache: vec![(0, 0.0); links.len()],
        total_cache: vec![(0, 0, 0.0); n],
        active_version: 0,
        links,
        txs: Vec::new(),
        active: Vec::new(),
        just_started: Vec::new(),
        pending: Vec::new(),
        pending_frames: Vec::new(),
        rounds: Vec::new(),
        delivered_ids: HashSet::new(),
        next_payload: 0,
        slot,
        sifs: cfg.mac.sifs_time(),
        warmup,
        end,
        noise: cfg.props.noise_floor,
        bandwidth: cfg.props.bandwidth,
        report: MetricsReport::empty(cfg.protocol, seed, window),
        events: Vec::new(),
        mac_trace: Vec::new(),
    };
    sim.run()?;
    Ok(RunOutput { report: sim.report, topology, events: sim.events, mac_trace: sim.mac_trace })
}

fn link_index(a: usize, b: usize, n: usize) -> usize {
    let (a, b) = if a < b { (a, b) } else { (b, a) };
    a * (2 * n - a - 1) / 2 + (b - a - 1)
}

impl Sim<'_> {
    fn schedule(&mut self, time: SimTime, ev: Ev) {
        self.seq += 1;
        self.queue.push(Scheduled { time, prio: ev.prio(), seq: self.seq, ev });
    }

    fn log(&mut self, kind: &'static str, src: usize, dst: Option<usize>, detail: String) {
        if self.cfg.log_events {
            self.events.push(EventRecord { time: self.now, kind, src, dst, detail });
        }
    }

    fn in_window(&self) -> bool {
        self.now >= self.warmup
    }

    fn n(&self) -> usize {
        self.nodes.len()
    }

    /// Instantaneous received power of `tx_node` at `rx` for the slot
    /// containing `t`.
    fn power(&mut self, tx_node: usize, rx: usize, t: SimTime) -> f64 {
        let n = self.n();
        let key = t.0 / self.slot.0 + 1;
        let l = link_index(tx_node, rx, n);
        let gain = match self.gain_cache[l] {
            (k, g) if k == key => g,
            _ => {
                let g = self.links[l].gain(t);
                self.gain_cache[l] = (key, g);
                g
            }
        };
        self.mean[tx_node * n + rx] * gain
    }

    /// Aggregate power at `node` from all active transmissions except
    /// `skip`.
    fn sensed(&mut self, node: usize, skip: Option<usize>, t: SimTime) -> f64 {
        let key = t.0 / self.slot.0 + 1;
        let total = match self.total_cache[node] {
            (k, v, p) if k == key && v == self.active_version => p,
            _ => {
                let mut sum = 0.0;
                for i in 0..self.active.len() {
                    let src = self.txs[self.active[i]].node;
                    if src != node {
                        sum += self.power(src, node, t);
                    }
                }
                self.total_cache[node] = (key, self.active_version, sum);
                sum
            }
        };
        match skip {
            Some(id) if self.txs[id].node != node && self.active.contains(&id) => {
                (total - self.power(self.txs[id].node, node, t)).max(0.0)
            }
            _ => total,
        }
    }

    fn run(&mut self) -> Result<()> {
        let rate = self.cfg.traffic.arrival_rate();
        if rate > 0.0 {
            for i in 0..self.n() {
                let t = self.next_arrival(i, SimTime::ZERO);
                self.schedule(t, Ev::Arrival(i));
            }
        }
        self.schedule(SimTime::ZERO, Ev::Tick);
        self.schedule(self.end, Ev::End);
        while let Some(s) = self.queue.pop() {
            self.now = s.time;
            match s.ev {
                Ev::End => break,
                Ev::Tick => self.on_tick()?,
                Ev::LockResolve => self.on_lock_resolve(),
                Ev::TxEnd(id) => self.on_tx_end(id)?,
                Ev::HeaderEnd(id) => self.on_header_end(id),
                Ev::StartFrame(node) => self.on_start_frame(node)?,
                Ev::AckTimeout { node, token } => {
                    if self.nodes[node].timer_token == token {
                        self.mac_step(node, MacEvent::AckTimeout)?;
                    }
                }
                Ev::RoundDeadline(r) => self.finalize_round(r, false),
                Ev::Arrival(i) => self.on_arrival(i)?,
            }
        }
        self.report.in_flight = self.nodes.iter().map(|n| n.mac.queue.len() as u64).sum();
        Ok(())
    }

    fn next_arrival(&mut self, node: usize, from: SimTime) -> SimTime {
        let rate = self.cfg.traffic.arrival_rate();
        let exp = Exp::new(rate).expect("positive arrival rate");
        let dt = exp.sample(&mut self.nodes[node].traffic_rng);
        SimTime(from.0.saturating_add(SimTime::from_secs(dt).0.max(1)))
    }

    fn on_arrival(&mut self, node: usize) -> Result<()> {
        let next = self.next_arrival(node, self.now);
        self.schedule(next, Ev::Arrival(node));
        let k = self.nodes[node].neighbors.len();
        let pick = self.nodes[node].traffic_rng.random_range(0..k);
        let dst = self.nodes[node].neighbors[pick];
        if self.nodes[node].mac.queue.len() >= self.cfg.traffic.queue_limit {
            self.report.queue_overflow += 1;
            self.log("drop", node, Some(dst), "queue_full".into());
            return Ok(());
        }
        let payload = Payload { id: self.next_payload, dst, created: self.now };
        self.next_payload += 1;
        self.report.enqueued += 1;
        self.mac_step(node, MacEvent::Enqueue(payload))
    }

    fn mac_step(&mut self, node: usize, event: MacEvent) -> Result<()> {
        let cfg = self.cfg;
        let before = self.nodes[node].mac.phase;
        let nd = &mut self.nodes[node];
        let actions = nd.mac.step(event, self.now, &cfg.mac, &cfg.rates, &mut nd.backoff_rng)?;
        if cfg.trace_mac {
            let after = self.nodes[node].mac.phase;
            self.mac_trace.push(trace_line(self.now, node, before, &event, after, &actions));
        }
        for a in actions {
            match a {
                MacAction::StartTx { payload, .. } => {
                    let frame = Frame::data(node, payload.dst, payload.id, &cfg.rates, cfg.mac.sifs);
                    self.pending.push((node, frame, None));
                }
                MacAction::SetTimer { at } => {
                    self.nodes[node].timer_token += 1;
                    let token = self.nodes[node].timer_token;
                    self.schedule(at, Ev::AckTimeout { node, token });
                }
                MacAction::Delivered(p) | MacAction::DropPacket(p) => {
                    self.nodes[node].timer_token += 1;
                    if self.delivered_ids.remove(&p.id) {
                        self.report.delivered += 1;
                    } else {
                        self.report.dropped += 1;
                        self.log("drop", node, Some(p.dst), format!("srl;payload={}", p.id));
                    }
                }
            }
        }
        Ok(())
    }

    /// Brings every locked reception up to `to`.
    fn advance_all(&mut self, to: SimTime) {
        for node in 0..self.n() {
            if let Some(mut rec) = self.nodes[node].rx.take() {
                self.advance(node, &mut rec, to);
                self.nodes[node].rx = Some(rec);
            }
        }
    }

    fn advance(&mut self, node: usize, rec: &mut Reception, to: SimTime) {
        let to = to.min(rec.end);
        let header_bits = self.txs[rec.tx].frame.header_bits;
        let src = self.txs[rec.tx].node;
        let slot = self.slot.0;
        while rec.last < to {
            let t = rec.last;
            let in_header = t < rec.header_end;
            if !in_header && !rec.integrate_body {
                rec.last = to;
                break;
            }
            let mut seg_end = SimTime((t.0 / slot + 1) * slot).min(to);
            if in_header {
                seg_end = seg_end.min(rec.header_end);
            }
            let s = self.power(src, node, t);
            let i = self.sensed(node, Some(rec.tx), t);
            let sinr = s / (self.noise + i);
            let dt = (seg_end.0 - t.0) as f64 * 1e-9;
            let bits = dt * self.bandwidth * sinr.ln_1p() / std::f64::consts::LN_2;
            if in_header {
                rec.header_acc += bits;
                if seg_end == rec.header_end && header_bits > 0.0 {
                    rec.header_ok = rec.header_acc >= header_bits;
                }
            } else {
                rec.body_acc += bits;
                rec.sinr_integral += dt * sinr;
                rec.body_time += dt;
            }
            rec.last = seg_end;
        }
    }

    fn busy_for_mac(&mut self, node: usize) -> (bool, f64, bool) {
        let nav = self.nodes[node].mac.nav_active(self.now);
        let sensed = self.sensed(node, None, self.now) + self.noise;
        let busy = self.nodes[node].has_role() || nav || sensed >= self.cfg.mac.cs_threshold;
        (busy, sensed, nav)
    }

    fn on_tick(&mut self) -> Result<()> {
        let now = self.now;
        self.advance_all(now);
        let mut starts: Vec<(usize, f64, bool)> = Vec::new();
        let mut relay_starts: Vec<(usize, f64, f64)> = Vec::new();
        for node in 0..self.n() {
            if self.nodes[node].mac.contending() {
                let (busy, sensed, nav) = self.busy_for_mac(node);
                let ev = if busy { MacEvent::ChannelBusy } else { MacEvent::ChannelIdleSlot };
                let before = self.pending.len();
                self.mac_step(node, ev)?;
                if self.pending.len() > before {
                    starts.push((node, sensed, nav));
                }
            }
            let ready = matches!(&self.nodes[node].candidate,
                Some(c) if c.state.phase == CandidatePhase::Contending && now >= c.start_at);
            if ready {
                let nav = self.nodes[node].mac.nav_active(now);
                let sensed = self.sensed(node, None, now) + self.noise;
                let ev = if nav {
                    ContentionEvent::NavActive
                } else if sensed >= self.cfg.dharq.relay_cs_threshold {
                    ContentionEvent::PowerAboveThreshold
                } else {
                    ContentionEvent::SlotIdle
                };
                let cand = self.nodes[node].candidate.as_mut().expect("candidate");
                match cand.state.contention_step(ev, self.cfg.rates.payload_bits)? {
                    ContentionAction::None => {}
                    ContentionAction::StartRelay { rate, .. } => relay_starts.push((node, rate, sensed)),
                    ContentionAction::Abandon(reason) => {
                        let round = cand.round;
                        self.nodes[node].candidate = None;
                        self.give_up(node, round, reason);
                    }
                }
            }
        }
        let pending = std::mem::take(&mut self.pending);
        for ((node, frame, round), (_, sensed, nav)) in pending.into_iter().zip(starts) {
            self.start_tx(node, frame, round, sensed, nav);
        }
        for (node, rate, sensed) in relay_starts {
            let round = self.nodes[node].candidate.as_ref().expect("candidate").round;
            let (dst, pid) = (self.rounds[round].dst, self.rounds[round].payload_id);
            let frame = Frame::relay(node, dst, pid, rate, &self.cfg.rates);
            self.start_tx(node, frame, Some(round), sensed, false);
        }
        self.schedule(now, Ev::LockResolve);
        self.schedule(now + self.slot, Ev::Tick);
        Ok(())
    }

    fn give_up(&mut self, node: usize, round: usize, reason: GiveUpReason) {
        if self.rounds[round].in_window {
            match reason {
                GiveUpReason::CsBusy => self.report.giveup_cs_busy += 1,
                GiveUpReason::RateTooLow => self.report.giveup_rate_too_low += 1,
                GiveUpReason::Nav => self.report.giveup_nav += 1,
            }
        }
        let dst = self.rounds[round].dst;
        self.log("give_up", node, Some(dst), reason.as_str().into());
    }

    fn start_tx(&mut self, node: usize, frame: Frame, round: Option<usize>, sensed: f64, nav: bool) {
        let now = self.now;
        self.advance_all(now);
        self.nodes[node].rx = None;
        let rates = &self.cfg.rates;
        let header_end = now + SimTime::from_secs_ceil(frame.header_duration(rates));
        let end = now + SimTime::from_secs_ceil(frame.duration(rates));
        let id = self.txs.len();
        let mut detail = format!(
            "kind={};sensed_dbm={:.3};nav={};payload={}",
            frame.kind.as_str(),
            watts_to_dbm(sensed),
            nav as u8,
            frame.payload_id
        );
        if frame.kind == FrameKind::Data {
            detail.push_str(&format!(";attempt={}", self.nodes[node].mac.attempt));
        }
        let kind = frame.kind;
        let dst = frame.dst;
        if kind == FrameKind::Relay {
            if let Some(r) = round {
                let other_relay = self.active.iter().any(|&a| self.txs[a].round == Some(r));
                let rd = &mut self.rounds[r];
                rd.relays += 1;
                rd.overlap |= other_relay;
                if rd.in_window {
                    self.report.relay_tx += 1;
                }
            }
            self.log("relay_tx", node, Some(dst), format!("rate={:.0}", frame.rate));
        }
        self.txs.push(Tx { node, frame, header_end, end, round });
        self.active.push(id);
        self.active_version += 1;
        self.just_started.push(id);
        self.nodes[node].transmitting = Some(id);
        self.log("tx_start", node, Some(dst), detail);
        if header_end > now && header_end < end {
            self.schedule(header_end, Ev::HeaderEnd(id));
        }
        self.schedule(end, Ev::TxEnd(id));
    }

    fn lockable(&self, node: usize, id: usize) -> bool {
        let tx = &self.txs[id];
        if tx.node == node {
            return false;
        }
        match self.nodes[node].round {
            Some(r) => tx.round == Some(r),
            None => tx.frame.kind != FrameKind::Relay,
        }
    }

    fn on_lock_resolve(&mut self) {
        let started = std::mem::take(&mut self.just_started);
        if started.is_empty() {
            return;
        }
        let now = self.now;
        let cooperative = self.cfg.protocol.cooperative();
        for node in 0..self.n() {
            if self.nodes[node].rx.is_some() || self.nodes[node].transmitting.is_some() {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for &id in &started {
                if !self.lockable(node, id) {
                    continue;
                }
                let p = self.power(self.txs[id].node, node, now);
                if p >= self.cfg.props.detection_threshold && best.is_none_or(|(_, bp)| p > bp) {
                    best = Some((id, p));
                }
            }
            if let Some((id, _)) = best {
                let tx = &self.txs[id];
                let integrate_body = cooperative || tx.frame.dst == node || tx.frame.kind != FrameKind::Data;
                self.nodes[node].rx = Some(Reception {
                    tx: id,
                    header_end: tx.header_end,
                    end: tx.end,
                    last: now,
                    header_acc: 0.0,
                    body_acc: 0.0,
                    sinr_integral: 0.0,
                    body_time: 0.0,
                    header_ok: tx.frame.header_bits <= 0.0,
                    integrate_body,
                });
            }
        }
    }

    fn on_header_end(&mut self, id: usize) {
        let now = self.now;
        self.advance_all(now);
        let frame = self.txs[id].frame.clone();
        let cooperative = self.cfg.protocol.cooperative();
        for node in 0..self.n() {
            let Some(rec) = self.nodes[node].rx.as_mut() else { continue };
            if rec.tx != id {
                continue;
            }
            if !rec.header_ok {
                self.nodes[node].rx = None;
                continue;
            }
            if frame.dst != node {
                if !cooperative {
                    rec.integrate_body = false;
                }
                if frame.kind == FrameKind::Data {
                    nav_update(&mut self.nodes[node].mac, &frame, now);
                }
            }
        }
    }

    fn on_tx_end(&mut self, id: usize) -> Result<()> {
        let now = self.now;
        self.advance_all(now);
        self.active.retain(|&a| a != id);
        self.active_version += 1;
        let tx = self.txs[id].clone();
        self.nodes[tx.node].transmitting = None;
        self.log("tx_end", tx.node, Some(tx.frame.dst), format!("kind={}", tx.frame.kind.as_str()));

        // Receptions of this frame, in node order.
        let mut receivers: Vec<(usize, Reception)> = Vec::new();
        for node in 0..self.n() {
            if self.nodes[node].rx.as_ref().is_some_and(|r| r.tx == id) {
                receivers.push((node, self.nodes[node].rx.take().expect("reception")));
            }
        }
        match tx.frame.kind {
            FrameKind::Data => self.data_end(&tx, &receivers)?,
            FrameKind::Ack => {
                let s = tx.frame.dst;
                if let Some((_, rec)) = receivers.iter().find(|(n, _)| *n == s) {
                    let ok = rec.body_acc >= tx.frame.body_bits;
                    let mac = &self.nodes[s].mac;
                    let waiting = matches!(mac.phase, Phase::AwaitingAck | Phase::AwaitingNackWindow);
                    if ok && waiting && mac.queue.front().is_some_and(|p| p.id == tx.frame.payload_id) {
                        self.mac_step(s, MacEvent::AckReceived)?;
                    }
                }
            }
            FrameKind::Nack => self.nack_end(&tx, &receivers)?,
            FrameKind::Relay => self.relay_end(&tx, &receivers),
        }
        if self.nodes[tx.node].candidate.as_ref().is_some_and(|c| c.state.phase == CandidatePhase::Transmitting) {
            self.nodes[tx.node].candidate = None;
        }
        Ok(())
    }

    fn cache(&mut self, node: usize, pid: u64) {
        let c = &mut self.nodes[node].cache;
        if !c.contains(&pid) {
            if c.len() >= CACHE_DEPTH {
                c.pop_front();
            }
            c.push_back(pid);
        }
    }

    fn respond(&mut self, node: usize, frame: Frame, round: Option<usize>, at: SimTime) {
        self.nodes[node].pending_frame = true;
        self.pending_frames.push((node, frame, round));
        self.schedule(at, Ev::StartFrame(node));
    }

    fn on_start_frame(&mut self, node: usize) -> Result<()> {
        let Some(pos) = self.pending_frames.iter().position(|(n, _, _)| *n == node) else {
            return Ok(());
        };
        let (_, frame, round) = self.pending_frames.remove(pos);
        self.nodes[node].pending_frame = false;
        if self.nodes[node].transmitting.is_some() {
            return Ok(());
        }
        let sensed = self.sensed(node, None, self.now) + self.noise;
        let nav = self.nodes[node].mac.nav_active(self.now);
        self.start_tx(node, frame, round, sensed, nav);
        self.schedule(self.now, Ev::LockResolve);
        Ok(())
    }

    fn deliver(&mut self, pid: u64) {
        if self.delivered_ids.insert(pid) && self.in_window() {
            self.report.delivered_bits += self.cfg.rates.payload_bits;
        }
    }

    fn data_end(&mut self, tx: &Tx, receivers: &[(usize, Reception)]) -> Result<()> {
        let (s, d, pid) = (tx.node, tx.frame.dst, tx.frame.payload_id);
        let l = self.cfg.rates.payload_bits;
        let protocol = self.cfg.protocol;
        self.mac_step(s, MacEvent::TxEnd)?;

        let mut decoders = Vec::new();
        if protocol.cooperative() {
            for (node, rec) in receivers {
                if *node != d && rec.header_ok && rec.body_acc >= l {
                    self.cache(*node, pid);
                    decoders.push(*node);
                }
            }
        }
        let at_d = receivers.iter().find(|(n, _)| *n == d).map(|(_, r)| r);
        let window = self.in_window();
        if window {
            self.report.data_tx += 1;
        }
        let outcome = match at_d {
            Some(r) if r.header_ok && r.body_acc >= l => "success_direct",
            Some(r) if r.header_ok => "coop_requested",
            _ => "lost_header",
        };
        self.log("decode_result", s, Some(d), format!("{outcome};payload={pid}"));
        if window {
            match outcome {
                "success_direct" => self.report.success_direct += 1,
                "coop_requested" => self.report.coop_requested += 1,
                _ => self.report.lost_header += 1,
            }
        }
        let sifs = self.sifs;
        match outcome {
            "success_direct" => {
                self.deliver(pid);
                if !self.nodes[d].has_role() {
                    let ack = Frame::control(FrameKind::Ack, d, s, pid, &self.cfg.rates);
                    self.respond(d, ack, None, self.now + sifs);
                }
            }
            "coop_requested" if protocol.cooperative() => {
                let rec = at_d.expect("reception at destination");
                if window {
                    self.sample_relays(s, d, &decoders);
                }
                if self.nodes[d].has_role() {
                    return Ok(());
                }
                let round = self.rounds.len();
                self.rounds.push(Round {
                    src: s,
                    dst: d,
                    payload_id: pid,
                    source_bits: rec.body_acc,
                    candidates: 0,
                    relays: 0,
                    overlap: false,
                    open: true,
                    in_window: window,
                });
                if window {
                    self.report.coop_rounds += 1;
                }
                self.nodes[d].round = Some(round);
                if protocol == Protocol::Dharq {
                    self.open_nack_round(round, rec.mean_sinr());
                } else {
                    self.ideal_round(round, rec.mean_sinr(), &decoders)?;
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn sample_relays(&mut self, s: usize, d: usize, decoders: &[usize]) {
        if let Some((ps, pd)) = self.positions_pinned() {
            if (s, d) != (ps, pd) {
                return;
            }
        }
        let d_sd = self.positions[s].distance(&self.positions[d]);
        for &c in decoders {
            if c != s {
                let d_cd = self.positions[c].distance(&self.positions[d]);
                self.report.relay_samples.push(RelaySample { d_cd, d_sd });
            }
        }
    }

    fn positions_pinned(&self) -> Option<(usize, usize)> {
        self.cfg.topology.pinned_delta.map(|_| (0, 1))
    }

    fn open_nack_round(&mut self, round: usize, gamma_sd: f64) {
        let (s, d, pid) = (self.rounds[round].src, self.rounds[round].dst, self.rounds[round].payload_id);
        let cfg = self.cfg;
        let mut nack = Frame::control(FrameKind::Nack, d, s, pid, &cfg.rates);
        let bin = quantize_sinr(gamma_sd, &cfg.dharq);
        nack.nack_sinr_index = Some(bin);
        let nack_end = self.now + self.sifs + SimTime::from_secs_ceil(nack.duration(&cfg.rates));
        let deadline = nack_end
            + self.sifs
            + SimTime(self.slot.0 * (cfg.dharq.cw_rel as u64 + 1))
            + SimTime::from_secs_ceil(cfg.rates.payload_duration())
            + self.slot;
        self.log("nack", d, Some(s), format!("bin={bin};payload={pid}"));
        self.respond(d, nack, Some(round), self.now + self.sifs);
        self.schedule(deadline, Ev::RoundDeadline(round));
    }

    fn ideal_round(&mut self, round: usize, gamma_sd: f64, decoders: &[usize]) -> Result<()> {
        let (s, d, pid) = (self.rounds[round].src, self.rounds[round].dst, self.rounds[round].payload_id);
        let now = self.now;
        let mut cands = Vec::new();
        for &c in decoders {
            if c == s || self.nodes[c].has_role() {
                continue;
            }
            let p = self.power(c, d, now);
            let i = self.sensed(d, None, now);
            cands.push((c, p / (self.noise + i)));
        }
        self.rounds[round].candidates = cands.len() as u32;
        let Some(best) = crate::dharq::ideal_relay_select(&cands) else {
            self.finalize_round(round, false);
            return Ok(());
        };
        let gamma_cd = cands.iter().find(|(c, _)| *c == best).expect("selected").1;
        let cfg = self.cfg;
        let rate = match relay_rate(gamma_sd, gamma_cd, &cfg.rates, self.bandwidth, &cfg.dharq)? {
            RateDecision::Relay(r) => r,
            _ => {
                self.give_up(best, round, GiveUpReason::RateTooLow);
                self.finalize_round(round, false);
                return Ok(());
            }
        };
        let frame = Frame::relay(best, d, pid, rate, &cfg.rates);
        let dur = SimTime::from_secs_ceil(frame.duration(&cfg.rates));
        let window = self.sifs + dur + self.sifs + cfg.mac.ack_timeout(&cfg.rates);
        self.respond(best, frame, Some(round), now + self.sifs);
        self.schedule(now + self.sifs + dur + self.slot, Ev::RoundDeadline(round));
        if self.nodes[s].mac.phase == Phase::AwaitingAck {
            self.mac_step(s, MacEvent::NackReceived { window })?;
        }
        Ok(())
    }

    fn nack_end(&mut self, tx: &Tx, receivers: &[(usize, Reception)]) -> Result<()> {
        let Some(round) = tx.round else { return Ok(()) };
        let (s, d, pid) = (tx.frame.dst, tx.node, tx.frame.payload_id);
        let cfg = self.cfg;
        for (node, rec) in receivers {
            if rec.body_acc < tx.frame.body_bits {
                continue;
            }
            if *node == s {
                let mac = &self.nodes[s].mac;
                if mac.phase == Phase::AwaitingAck && mac.queue.front().is_some_and(|p| p.id == pid) {
                    let window = self.sifs
                        + SimTime(self.slot.0 * (cfg.dharq.cw_rel as u64 + 1))
                        + SimTime::from_secs_ceil(cfg.rates.payload_duration())
                        + cfg.mac.ack_timeout(&cfg.rates);
                    self.mac_step(s, MacEvent::NackReceived { window })?;
                }
                continue;
            }
            if *node == d || !self.nodes[*node].cache.contains(&pid) || self.nodes[*node].has_role() {
                continue;
            }
            self.rounds[round].candidates += 1;
            let bin = tx.frame.nack_sinr_index.unwrap_or(0);
            let gamma_sd = dequantize(bin, &cfg.dharq);
            let bandwidth = self.bandwidth;
            let rng = &mut self.nodes[*node].relay_rng;
            let state = RelayCandidateState::enter(gamma_sd, rec.mean_sinr(), &cfg.rates, bandwidth, &cfg.dharq, rng)?;
            if let Some(reason) = state.give_up_reason() {
                self.give_up(*node, round, reason);
            } else {
                self.nodes[*node].candidate = Some(Candidate { round, state, start_at: self.now + self.sifs });
            }
        }
        Ok(())
    }

    fn relay_end(&mut self, tx: &Tx, receivers: &[(usize, Reception)]) {
        let Some(round) = tx.round else { return };
        let d = tx.frame.dst;
        let rd = self.rounds[round].clone();
        if !rd.open {
            return;
        }
        let rec = receivers.iter().find(|(n, _)| *n == d).map(|(_, r)| r);
        let total = rd.source_bits + rec.map_or(0.0, |r| r.body_acc);
        let ok = rec.is_some() && total >= self.cfg.rates.payload_bits;
        let other_relay = self.active.iter().any(|&a| self.txs[a].round == Some(round));
        let label = if ok {
            "relayed_success"
        } else if rd.overlap || other_relay {
            "collided"
        } else {
            "relayed_fail"
        };
        self.log("decode_result", tx.node, Some(d), format!("{label};payload={}", tx.frame.payload_id));
        if ok {
            if rd.in_window {
                self.report.coop_success += 1;
            }
            let (s, pid) = (rd.src, rd.payload_id);
            self.deliver(pid);
            self.finalize_round(round, true);
            let ack = Frame::control(FrameKind::Ack, d, s, pid, &self.cfg.rates);
            self.respond(d, ack, None, self.now + self.sifs);
        } else if rd.overlap && rd.in_window {
            self.report.relay_collided += 1;
        }
    }

    fn finalize_round(&mut self, round: usize, success: bool) {
        if !self.rounds[round].open {
            return;
        }
        self.rounds[round].open = false;
        let rd = self.rounds[round].clone();
        let (d, s, window) = (rd.dst, rd.src, rd.in_window);
        let label = if success {
            "success"
        } else if rd.candidates == 0 {
            if window {
                self.report.empty_contention += 1;
            }
            "empty_contention"
        } else if rd.relays == 0 {
            if window {
                self.report.failure_wo_tx += 1;
            }
            "failure_wo_tx"
        } else {
            if window {
                self.report.failure_with_tx += 1;
            }
            "failure_with_tx"
        };
        if self.nodes[d].round == Some(round) {
            self.nodes[d].round = None;
        }
        for node in 0..self.n() {
            if self.nodes[node].candidate.as_ref().is_some_and(|c| c.round == round && c.state.phase == CandidatePhase::Contending) {
                self.nodes[node].candidate = None;
            }
        }
        self.log("round", s, Some(d), label.into());
    }
}
