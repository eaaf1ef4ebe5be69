//! CSMA/DCF state machine for one node: backoff, freeze/resume after DIFS,
//! retries up to the short retry limit, and virtual carrier sense.

use std::collections::VecDeque;
use std::fmt;

use rand::Rng;

use crate::channel::RateParams;
use crate::error::{Error, Result};
use crate::units::{dbm_to_watts, SimTime};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacConfig {
    pub cw_start: u32,
    pub srl: u32,
    pub slot: f64,
    pub difs: f64,
    pub sifs: f64,
    /// Carrier-sense threshold Λ, watts.
    pub cs_threshold: f64,
}

impl MacConfig {
    /// Plain CSMA: retry limit 5.
    pub fn basic() -> Self {
        Self { cw_start: 5, srl: 5, slot: 10e-6, difs: 128e-6, sifs: 10e-6, cs_threshold: dbm_to_watts(-100.0) }
    }

    /// Cooperative variant: retry limit 4.
    pub fn cooperative() -> Self {
        Self { srl: 4, ..Self::basic() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.srl < 1 {
            return Err(Error::InvalidParameter("srl must be >= 1".into()));
        }
        if self.cw_start < 1 || self.cw_start + self.srl > 31 {
            return Err(Error::InvalidParameter("cw_start out of range".into()));
        }
        if !(self.slot > 0.0 && self.difs > 0.0 && self.sifs > 0.0) {
            return Err(Error::InvalidParameter("slot, DIFS and SIFS must be > 0".into()));
        }
        if !(self.cs_threshold > 0.0) {
            return Err(Error::InvalidParameter("cs_threshold must be > 0".into()));
        }
        Ok(())
    }

    pub fn slot_time(&self) -> SimTime {
        SimTime::from_secs(self.slot)
    }

    pub fn difs_time(&self) -> SimTime {
        SimTime::from_secs(self.difs)
    }

    pub fn sifs_time(&self) -> SimTime {
        SimTime::from_secs(self.sifs)
    }

    /// SIFS plus control-frame airtime plus one slot of margin.
    pub fn ack_timeout(&self, rates: &RateParams) -> SimTime {
        self.sifs_time() + SimTime::from_secs_ceil(rates.ack_bits / rates.rho_ctrl) + self.slot_time()
    }
}

impl Default for MacConfig {
    fn default() -> Self {
        Self::basic()
    }
}

/// Uniform backoff in `[1, 2^(CW_start + i - 1)]` slots.
pub fn draw_backoff<R: Rng + ?Sized>(attempt: u32, cfg: &MacConfig, rng: &mut R) -> Result<u32> {
    if attempt >= cfg.srl {
        return Err(Error::InvalidParameter(format!("attempt {attempt} >= SRL {}", cfg.srl)));
    }
    let hi = 1u32 << (cfg.cw_start + attempt - 1);
    Ok(rng.random_range(1..=hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameKind {
    Data,
    Ack,
    Nack,
    /// Headerless incremental redundancy sent by a relay.
    Relay,
}

impl FrameKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Data => "DATA",
            Self::Ack => "ACK",
            Self::Nack => "NACK",
            Self::Relay => "RELAY",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub kind: FrameKind,
    pub src: usize,
    pub dst: usize,
    /// Bits sent at the control rate ahead of the body.
    pub header_bits: f64,
    pub body_bits: f64,
    /// Body rate, bits/s.
    pub rate: f64,
    /// Occupancy declared in the header, counted from the header end.
    pub duration_field: f64,
    pub nack_sinr_index: Option<u32>,
    pub payload_id: u64,
}

impl Frame {
    pub fn data(src: usize, dst: usize, payload_id: u64, rates: &RateParams, sifs: f64) -> Self {
        let body = rates.payload_bits / rates.rho_data;
        Self {
            kind: FrameKind::Data,
            src,
            dst,
            header_bits: rates.header_bits,
            body_bits: rates.payload_bits,
            rate: rates.rho_data,
            duration_field: body + sifs + rates.ack_bits / rates.rho_ctrl,
            nack_sinr_index: None,
            payload_id,
        }
    }

    pub fn control(kind: FrameKind, src: usize, dst: usize, payload_id: u64, rates: &RateParams) -> Self {
        Self {
            kind,
            src,
            dst,
            header_bits: 0.0,
            body_bits: rates.ack_bits,
            rate: rates.rho_ctrl,
            duration_field: 0.0,
            nack_sinr_index: None,
            payload_id,
        }
    }

    pub fn relay(src: usize, dst: usize, payload_id: u64, rate: f64, rates: &RateParams) -> Self {
        Self {
            kind: FrameKind::Relay,
            src,
            dst,
            header_bits: 0.0,
            body_bits: rates.payload_bits,
            rate,
            duration_field: 0.0,
            nack_sinr_index: None,
            payload_id,
        }
    }

    pub fn header_duration(&self, rates: &RateParams) -> f64 {
        self.header_bits / rates.rho_ctrl
    }

    pub fn duration(&self, rates: &RateParams) -> f64 {
        self.header_duration(rates) + self.body_bits / self.rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Idle,
    Backoff,
    Frozen,
    Transmitting,
    AwaitingAck,
    AwaitingNackWindow,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Idle => "idle",
            Self::Backoff => "backoff",
            Self::Frozen => "frozen",
            Self::Transmitting => "transmitting",
            Self::AwaitingAck => "awaiting_ack",
            Self::AwaitingNackWindow => "awaiting_nack_window",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MacEvent {
    Enqueue(Payload),
    ChannelBusy,
    ChannelIdleSlot,
    TxEnd,
    AckReceived,
    /// A NACK for the pending payload; the source waits `window` for the
    /// cooperative round.
    NackReceived { window: SimTime },
    AckTimeout,
}

impl MacEvent {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Enqueue(_) => "enqueue",
            Self::ChannelBusy => "channel_busy",
            Self::ChannelIdleSlot => "channel_idle_slot",
            Self::TxEnd => "tx_end",
            Self::AckReceived => "ack_rx",
            Self::NackReceived { .. } => "nack_rx",
            Self::AckTimeout => "ack_timeout",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MacAction {
    /// Start a DATA transmission of the queue head.
    StartTx { payload: Payload, attempt: u32 },
    SetTimer { at: SimTime },
    Delivered(Payload),
    DropPacket(Payload),
}

impl fmt::Display for MacAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::StartTx { payload, attempt } => write!(f, "start_tx:{}:{}", payload.id, attempt),
            Self::SetTimer { at } => write!(f, "set_timer:{:.3}", at.as_micros_f64()),
            Self::Delivered(p) => write!(f, "delivered:{}", p.id),
            Self::DropPacket(p) => write!(f, "drop_packet:{}", p.id),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Payload {
    pub id: u64,
    pub dst: usize,
    pub created: SimTime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacState {
    pub phase: Phase,
    pub attempt: u32,
    pub backoff_remaining: u32,
    pub nav_until: SimTime,
    /// Start of the current continuous idle period seen at slot ticks.
    pub idle_since: Option<SimTime>,
    pub queue: VecDeque<Payload>,
}

impl Default for MacState {
    fn default() -> Self {
        Self::new()
    }
}

impl MacState {
    pub fn new() -> Self {
        Self {
            phase: Phase::Idle,
            attempt: 0,
            backoff_remaining: 0,
            nav_until: SimTime::ZERO,
            idle_since: None,
            queue: VecDeque::new(),
        }
    }

    pub fn nav_active(&self, now: SimTime) -> bool {
        self.nav_until > now
    }

    /// Whether the node is waiting for slot ticks.
    pub fn contending(&self) -> bool {
        matches!(self.phase, Phase::Backoff | Phase::Frozen)
    }

    fn illegal(&self, event: &MacEvent) -> Error {
        Error::Protocol { phase: self.phase.as_str().into(), event: event.name().into() }
    }

    fn start_backoff<R: Rng + ?Sized>(&mut self, cfg: &MacConfig, rng: &mut R) -> Result<()> {
        self.backoff_remaining = draw_backoff(self.attempt, cfg, rng)?;
        self.phase = Phase::Backoff;
        self.idle_since = None;
        Ok(())
    }

    /// Finishes the head payload and moves on to the next one.
    fn finish<R: Rng + ?Sized>(&mut self, cfg: &MacConfig, rng: &mut R) -> Result<Payload> {
        let done = self.queue.pop_front().ok_or_else(|| Error::Protocol {
            phase: self.phase.as_str().into(),
            event: "finish with empty queue".into(),
        })?;
        self.attempt = 0;
        if self.queue.is_empty() {
            self.phase = Phase::Idle;
        } else {
            self.start_backoff(cfg, rng)?;
        }
        Ok(done)
    }

    /// Applies one event. The countdown only decrements on idle slots that
    /// follow at least DIFS of continuous idle.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        event: MacEvent,
        now: SimTime,
        cfg: &MacConfig,
        rates: &RateParams,
        rng: &mut R,
    ) -> Result<Vec<MacAction>> {
        let mut actions = Vec::new();
        match (self.phase, event) {
            (_, MacEvent::Enqueue(p)) => {
                self.queue.push_back(p);
                if self.phase == Phase::Idle {
                    self.attempt = 0;
                    self.start_backoff(cfg, rng)?;
                }
            }
            (Phase::Backoff | Phase::Frozen, MacEvent::ChannelBusy) => {
                self.phase = Phase::Frozen;
                self.idle_since = None;
            }
            (Phase::Backoff | Phase::Frozen, MacEvent::ChannelIdleSlot) => {
                self.phase = Phase::Backoff;
                let since = *self.idle_since.get_or_insert(now);
                if now >= since + cfg.difs_time() {
                    self.backoff_remaining = self.backoff_remaining.saturating_sub(1);
                    if self.backoff_remaining == 0 {
                        self.phase = Phase::Transmitting;
                        self.idle_since = None;
                        let payload = *self.queue.front().ok_or_else(|| self.illegal(&event))?;
                        actions.push(MacAction::StartTx { payload, attempt: self.attempt });
                    }
                }
            }
            (Phase::Transmitting, MacEvent::TxEnd) => {
                self.phase = Phase::AwaitingAck;
                actions.push(MacAction::SetTimer { at: now + cfg.ack_timeout(rates) });
            }
            (Phase::AwaitingAck | Phase::AwaitingNackWindow, MacEvent::AckReceived) => {
                let p = self.finish(cfg, rng)?;
                actions.push(MacAction::Delivered(p));
            }
            (Phase::AwaitingAck, MacEvent::NackReceived { window }) => {
                self.phase = Phase::AwaitingNackWindow;
                actions.push(MacAction::SetTimer { at: now + window });
            }
            (Phase::AwaitingAck | Phase::AwaitingNackWindow, MacEvent::AckTimeout) => {
                self.attempt += 1;
                if self.attempt >= cfg.srl {
                    let p = self.finish(cfg, rng)?;
                    actions.push(MacAction::DropPacket(p));
                } else {
                    self.start_backoff(cfg, rng)?;
                }
            }
            _ => return Err(self.illegal(&event)),
        }
        Ok(actions)
    }
}

/// Applies an overheard reservation.
pub fn nav_update(state: &mut MacState, overheard: &Frame, now: SimTime) {
    let until = now + SimTime::from_secs(overheard.duration_field);
    if until > state.nav_until {
        state.nav_until = until;
    }
}

/// One line of the MAC conformance trace.
pub fn trace_line(now: SimTime, node: usize, before: Phase, event: &MacEvent, after: Phase, actions: &[MacAction]) -> String {
    let action = if actions.is_empty() {
        "none".to_string()
    } else {
        actions.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(";")
    };
    format!("{:.3},{},{},{},{},{}", now.as_micros_f64(), node, before.as_str(), event.name(), after.as_str(), action)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (MacConfig, RateParams, ChaCha8Rng) {
        (MacConfig::basic(), RateParams::default(), ChaCha8Rng::seed_from_u64(7))
    }

    fn payload(id: u64) -> Payload {
        Payload { id, dst: 1, created: SimTime::ZERO }
    }

    #[test]
    fn backoff_ranges() {
        let (cfg, _, mut rng) = setup();
        let mut counts = [0u32; 16];
        let n = 100_000;
        for _ in 0..n {
            let b = draw_backoff(0, &cfg, &mut rng).unwrap();
            assert!((1..=16).contains(&b));
            counts[b as usize - 1] += 1;
        }
        let expect = n as f64 / 16.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
        // chi-square with 15 degrees of freedom, p = 0.01
        assert!(chi2 < 30.58, "chi2 = {chi2}");
        let max = (0..10_000).map(|_| draw_backoff(2, &cfg, &mut rng).unwrap()).max().unwrap();
        assert!(max <= 64 && max > 48);
        assert!(draw_backoff(5, &cfg, &mut rng).is_err());
        let a: Vec<u32> = (0..20).map(|_| draw_backoff(1, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn freeze_keeps_counter() {
        let (cfg, rates, mut rng) = setup();
        let mut m = MacState::new();
        m.step(MacEvent::Enqueue(payload(0)), SimTime::ZERO, &cfg, &rates, &mut rng).unwrap();
        m.backoff_remaining = 5;
        m.step(MacEvent::ChannelBusy, SimTime::from_micros(10), &cfg, &rates, &mut rng).unwrap();
        assert_eq!(m.phase, Phase::Frozen);
        assert_eq!(m.backoff_remaining, 5);
    }

    #[test]
    fn resumes_only_after_difs() {
        let (cfg, rates, mut rng) = setup();
        let mut m = MacState::new();
        m.step(MacEvent::Enqueue(payload(0)), SimTime::ZERO, &cfg, &rates, &mut rng).unwrap();
        m.backoff_remaining = 5;
        m.step(MacEvent::ChannelBusy, SimTime::ZERO, &cfg, &rates, &mut rng).unwrap();
        let mut t = 10;
        // 130 us is the first slot tick at or beyond DIFS = 128 us.
        while t < 140 {
            m.step(MacEvent::ChannelIdleSlot, SimTime::from_micros(t), &cfg, &rates, &mut rng).unwrap();
            t += 10;
        }
        assert_eq!(m.backoff_remaining, 5);
        m.step(MacEvent::ChannelIdleSlot, SimTime::from_micros(t), &cfg, &rates, &mut rng).unwrap();
        assert_eq!(m.backoff_remaining, 4);
        assert_eq!(m.phase, Phase::Backoff);
    }

    #[test]
    fn expiry_starts_tx_then_timeout_retries_and_drops() {
        let (cfg, rates, mut rng) = setup();
        let mut m = MacState::new();
        m.step(MacEvent::Enqueue(payload(9)), SimTime::ZERO, &cfg, &rates, &mut rng).unwrap();
        let mut now = SimTime::ZERO;
        for attempt in 0..cfg.srl {
            let mut started = None;
            while started.is_none() {
                now = now + cfg.slot_time();
                let acts = m.step(MacEvent::ChannelIdleSlot, now, &cfg, &rates, &mut rng).unwrap();
                started = acts.into_iter().find(|a| matches!(a, MacAction::StartTx { .. }));
            }
            assert_eq!(started, Some(MacAction::StartTx { payload: payload(9), attempt }));
            let acts = m.step(MacEvent::TxEnd, now, &cfg, &rates, &mut rng).unwrap();
            assert!(matches!(acts[0], MacAction::SetTimer { .. }));
            let acts = m.step(MacEvent::AckTimeout, now, &cfg, &rates, &mut rng).unwrap();
            if attempt + 1 == cfg.srl {
                assert_eq!(acts, vec![MacAction::DropPacket(payload(9))]);
                assert_eq!(m.phase, Phase::Idle);
            } else {
                assert!(acts.is_empty());
                assert_eq!(m.attempt, attempt + 1);
            }
        }
    }

    #[test]
    fn nack_extends_wait_and_ack_resets() {
        let (cfg, rates, mut rng) = setup();
        let mut m = MacState::new();
        m.step(MacEvent::Enqueue(payload(1)), SimTime::ZERO, &cfg, &rates, &mut rng).unwrap();
        m.step(MacEvent::Enqueue(payload(2)), SimTime::ZERO, &cfg, &rates, &mut rng).unwrap();
        m.phase = Phase::Transmitting;
        m.attempt = 2;
        m.step(MacEvent::TxEnd, SimTime::ZERO, &cfg, &rates, &mut rng).unwrap();
        let acts = m.step(MacEvent::NackReceived { window: SimTime::from_micros(500) }, SimTime::ZERO, &cfg, &rates, &mut rng).unwrap();
        assert_eq!(acts, vec![MacAction::SetTimer { at: SimTime::from_micros(500) }]);
        let acts = m.step(MacEvent::AckReceived, SimTime::ZERO, &cfg, &rates, &mut rng).unwrap();
        assert_eq!(acts, vec![MacAction::Delivered(payload(1))]);
        assert_eq!(m.attempt, 0);
        assert_eq!(m.phase, Phase::Backoff);
        assert!(m.backoff_remaining <= 16);
    }

    #[test]
    fn illegal_pairs_are_protocol_errors() {
        let (cfg, rates, mut rng) = setup();
        let mut m = MacState::new();
        assert!(matches!(m.step(MacEvent::AckTimeout, SimTime::ZERO, &cfg, &rates, &mut rng), Err(Error::Protocol { .. })));
        assert!(m.step(MacEvent::ChannelBusy, SimTime::ZERO, &cfg, &rates, &mut rng).is_err());
    }

    #[test]
    fn nav_max_rule() {
        let rates = RateParams::default();
        let mut m = MacState::new();
        let mut f = Frame::data(0, 1, 0, &rates, 10e-6);
        f.duration_field = 2.5e-3;
        nav_update(&mut m, &f, SimTime::from_micros(100));
        assert_eq!(m.nav_until, SimTime::from_micros(2600));
        f.duration_field = 1e-3;
        nav_update(&mut m, &f, SimTime::from_micros(200));
        assert_eq!(m.nav_until, SimTime::from_micros(2600));
        assert!(m.nav_active(SimTime::from_micros(2599)));
        assert!(!m.nav_active(SimTime::from_micros(2600)));
    }

    #[test]
    fn frame_durations() {
        let rates = RateParams::default();
        let d = Frame::data(0, 1, 0, &rates, 10e-6);
        assert!((d.duration(&rates) - (112.0 / 0.532e6 + 5000.0 / 2.1e6)).abs() < 1e-15);
        let a = Frame::control(FrameKind::Ack, 1, 0, 0, &rates);
        assert!((a.duration(&rates) - 112.0 / 0.532e6).abs() < 1e-15);
    }
}
