//! Deterministic simulated V2V link.
//!
//! Admission runs three gates in order: cooperation range, per-frame byte
//! budget, then seeded random loss. Admitted messages are delivered after a
//! fixed latency, ordered by `(deliver_at, sender_id, admission order)`.

use std::collections::BTreeMap;
use std::io::{self, Write};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wire::{accounted_payload_bytes, encoded_len, CoopMessage, FusionLevel};

pub const DEFAULT_COOP_RANGE_M: f64 = 200.0;
const NS_PER_S: u64 = 1_000_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("invalid channel config: {0}")]
    InvalidConfig(String),
    #[error("clock regression: now {now} ns is before channel clock {clock} ns")]
    ClockRegression { now: u64, clock: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    /// KB/s (1024 bytes). `inf` disables the capacity gate.
    pub capacity_kbps: f64,
    pub latency_ms: f64,
    pub drop_prob: f64,
    pub coop_range_m: f64,
    pub fps: u32,
    pub seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            capacity_kbps: f64::INFINITY,
            latency_ms: 0.0,
            drop_prob: 0.0,
            coop_range_m: DEFAULT_COOP_RANGE_M,
            fps: 5,
            seed: 0,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.capacity_kbps.is_nan() || self.capacity_kbps <= 0.0 {
            return Err(ChannelError::InvalidConfig(format!("capacity {} must be positive", self.capacity_kbps)));
        }
        if self.coop_range_m.is_nan() || self.coop_range_m <= 0.0 {
            return Err(ChannelError::InvalidConfig(format!("range {} must be positive", self.coop_range_m)));
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(ChannelError::InvalidConfig(format!("drop probability {} outside [0, 1]", self.drop_prob)));
        }
        if !(self.latency_ms.is_finite() && self.latency_ms >= 0.0) {
            return Err(ChannelError::InvalidConfig(format!("latency {} must be non-negative", self.latency_ms)));
        }
        if self.fps == 0 {
            return Err(ChannelError::InvalidConfig("fps must be positive".into()));
        }
        Ok(())
    }

    /// Byte budget of one frame window.
    pub fn frame_budget_bytes(&self) -> f64 {
        self.capacity_kbps * 1024.0 / f64::from(self.fps)
    }

    pub fn latency_ns(&self) -> u64 {
        (self.latency_ms * 1e6).round() as u64
    }

    pub fn frame_period_ns(&self) -> u64 {
        NS_PER_S / u64::from(self.fps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    OutOfRange,
    OverCapacity,
    RandomLoss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Admitted { deliver_at: u64 },
    Dropped(DropReason),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Delivered {
    pub message: CoopMessage,
    pub admitted_at: u64,
    pub deliver_at: u64,
}

/// One line of the JSON-lines trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Admit {
        t_ns: u64,
        sender_id: u32,
        level: FusionLevel,
        wire_bytes: u64,
        payload_bytes: u64,
        deliver_at_ns: u64,
    },
    Drop {
        t_ns: u64,
        sender_id: u32,
        level: FusionLevel,
        wire_bytes: u64,
        reason: DropReason,
    },
    Deliver {
        t_ns: u64,
        sender_id: u32,
        level: FusionLevel,
        wire_bytes: u64,
    },
    Select {
        t_ns: u64,
        sender_id: u32,
        available_kbps: f64,
        level: FusionLevel,
        best_effort: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ChannelCounters {
    pub admitted: u64,
    pub delivered: u64,
    pub out_of_range: u64,
    pub over_capacity: u64,
    pub random_loss: u64,
    /// Wire bytes of admitted messages.
    pub admitted_wire_bytes: u64,
    /// Accounted float payload bytes of admitted messages.
    pub admitted_payload_bytes: u64,
}

impl ChannelCounters {
    pub fn drops(&self, reason: DropReason) -> u64 {
        match reason {
            DropReason::OutOfRange => self.out_of_range,
            DropReason::OverCapacity => self.over_capacity,
            DropReason::RandomLoss => self.random_loss,
        }
    }

    pub fn add(&mut self, other: &ChannelCounters) {
        self.admitted += other.admitted;
        self.delivered += other.delivered;
        self.out_of_range += other.out_of_range;
        self.over_capacity += other.over_capacity;
        self.random_loss += other.random_loss;
        self.admitted_wire_bytes += other.admitted_wire_bytes;
        self.admitted_payload_bytes += other.admitted_payload_bytes;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct QueueKey {
    deliver_at: u64,
    sender_id: u32,
    seq: u64,
}

/// Single-owner link state: bucket fill, in-flight queue, clock, counters.
#[derive(Debug)]
pub struct ChannelState {
    cfg: ChannelConfig,
    rng: ChaCha8Rng,
    clock: u64,
    window: u64,
    fill: f64,
    queue: BTreeMap<QueueKey, (CoopMessage, u64)>,
    seq: u64,
    counters: ChannelCounters,
    /// Wire bytes charged per frame window, for auditing the capacity gate.
    window_usage: BTreeMap<u64, u64>,
    trace: Vec<TraceEvent>,
}

impl ChannelState {
    pub fn new(cfg: ChannelConfig) -> Result<Self, ChannelError> {
        cfg.validate()?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            clock: 0,
            window: 0,
            fill: cfg.frame_budget_bytes(),
            queue: BTreeMap::new(),
            seq: 0,
            counters: ChannelCounters::default(),
            window_usage: BTreeMap::new(),
            trace: Vec::new(),
            cfg,
        })
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.cfg
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn fill(&self) -> f64 {
        self.fill
    }

    pub fn counters(&self) -> &ChannelCounters {
        &self.counters
    }

    pub fn window_usage(&self) -> &BTreeMap<u64, u64> {
        &self.window_usage
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn take_trace(&mut self) -> Vec<TraceEvent> {
        std::mem::take(&mut self.trace)
    }

    fn window_of(&self, t: u64) -> u64 {
        ((u128::from(t) * u128::from(self.cfg.fps)) / u128::from(NS_PER_S)) as u64
    }

    fn advance(&mut self, now: u64) -> Result<(), ChannelError> {
        if now < self.clock {
            return Err(ChannelError::ClockRegression { now, clock: self.clock });
        }
        self.clock = now;
        let w = self.window_of(now);
        if w != self.window {
            self.window = w;
            self.fill = self.cfg.frame_budget_bytes();
        }
        Ok(())
    }

    /// Offers a message to the link at time `now` (ns).
    pub fn admit(
        &mut self,
        msg: CoopMessage,
        sender_pos: &Vector3<f64>,
        ego_pos: &Vector3<f64>,
        now: u64,
    ) -> Result<Admission, ChannelError> {
        self.advance(now)?;
        let wire_bytes = encoded_len(&msg) as u64;
        let (sender_id, level) = (msg.sender_id, msg.level());
        let reason = if (sender_pos - ego_pos).norm() > self.cfg.coop_range_m {
            Some(DropReason::OutOfRange)
        } else if wire_bytes as f64 > self.fill {
            Some(DropReason::OverCapacity)
        } else {
            // Transmitted, so the bytes are spent even if the frame is lost.
            self.fill -= wire_bytes as f64;
            *self.window_usage.entry(self.window).or_default() += wire_bytes;
            let lost = self.cfg.drop_prob > 0.0 && self.rng.random::<f64>() < self.cfg.drop_prob;
            lost.then_some(DropReason::RandomLoss)
        };
        if let Some(reason) = reason {
            match reason {
                DropReason::OutOfRange => self.counters.out_of_range += 1,
                DropReason::OverCapacity => self.counters.over_capacity += 1,
                DropReason::RandomLoss => self.counters.random_loss += 1,
            }
            self.trace.push(TraceEvent::Drop {
                t_ns: now,
                sender_id,
                level,
                wire_bytes,
                reason,
            });
            return Ok(Admission::Dropped(reason));
        }
        let deliver_at = now + self.cfg.latency_ns();
        let payload_bytes = accounted_payload_bytes(&msg);
        self.counters.admitted += 1;
        self.counters.admitted_wire_bytes += wire_bytes;
        self.counters.admitted_payload_bytes += payload_bytes;
        self.trace.push(TraceEvent::Admit {
            t_ns: now,
            sender_id,
            level,
            wire_bytes,
            payload_bytes,
            deliver_at_ns: deliver_at,
        });
        let key = QueueKey {
            deliver_at,
            sender_id,
            seq: self.seq,
        };
        self.seq += 1;
        self.queue.insert(key, (msg, now));
        Ok(Admission::Admitted { deliver_at })
    }

    /// Advances the clock to `until` and returns every message due by then.
    pub fn step(&mut self, until: u64) -> Result<Vec<Delivered>, ChannelError> {
        self.advance(until)?;
        let mut out = Vec::new();
        while let Some(entry) = self.queue.first_entry() {
            if entry.key().deliver_at > until {
                break;
            }
            let (key, (message, admitted_at)) = entry.remove_entry();
            self.trace.push(TraceEvent::Deliver {
                t_ns: key.deliver_at,
                sender_id: key.sender_id,
                level: message.level(),
                wire_bytes: encoded_len(&message) as u64,
            });
            out.push(Delivered {
                message,
                admitted_at,
                deliver_at: key.deliver_at,
            });
        }
        self.counters.delivered += out.len() as u64;
        Ok(out)
    }

    /// Records a selector decision in the trace.
    pub fn record_selection(&mut self, sender_id: u32, available_kbps: f64, level: FusionLevel, best_effort: bool) {
        self.trace.push(TraceEvent::Select {
            t_ns: self.clock,
            sender_id,
            available_kbps,
            level,
            best_effort,
        });
    }
}

pub fn write_trace_jsonl<W: Write>(events: &[TraceEvent], mut out: W) -> io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
