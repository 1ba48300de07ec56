//! Where each synthetic channel lives in the CAN traffic.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decomposer::{ByteSpan, CandidateId, Endian};
use crate::error::{Error, Result};

/// A physical quantity produced by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    Velocity,
    Rpm,
    Accelerator,
    Brake,
    Clutch,
    Steering,
    Lateral,
    Coolant,
    Voltage,
    Fuel,
}

impl Signal {
    pub const ALL: [Signal; 10] = [
        Signal::Velocity,
        Signal::Rpm,
        Signal::Accelerator,
        Signal::Brake,
        Signal::Clutch,
        Signal::Steering,
        Signal::Lateral,
        Signal::Coolant,
        Signal::Voltage,
        Signal::Fuel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Signal::Velocity => "velocity",
            Signal::Rpm => "rpm",
            Signal::Accelerator => "accelerator",
            Signal::Brake => "brake",
            Signal::Clutch => "clutch",
            Signal::Steering => "steering",
            Signal::Lateral => "lateral",
            Signal::Coolant => "coolant",
            Signal::Voltage => "voltage",
            Signal::Fuel => "fuel",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|x| x.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Channel {
    /// `raw = round(value * scale + offset)`.
    Signal { signal: Signal, scale: f64, offset: f64 },
    /// Increments once per frame, wrapping at `2^bits`.
    Counter { bits: u8 },
    Constant { value: u32 },
    /// Switches among a few values at random times.
    MultiValue { values: Vec<u32>, mean_dwell_s: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub start: u8,
    pub width: u8,
    #[serde(default)]
    pub endian: Endian,
    pub channel: Channel,
}

impl Field {
    pub fn span(&self) -> ByteSpan {
        ByteSpan { start: self.start, width: self.width, endian: self.endian }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageLayout {
    pub can_id: u16,
    pub period_ms: u32,
    pub dlc: u8,
    pub fields: Vec<Field>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Layout {
    pub messages: Vec<MessageLayout>,
}

impl Layout {
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for m in &self.messages {
            let at = format!("message {:04x}", m.can_id);
            if m.can_id > 0x7FF || !ids.insert(m.can_id) {
                return Err(Error::invalid(format!("{at}: id out of range or repeated")));
            }
            if m.dlc > 8 || m.period_ms == 0 {
                return Err(Error::invalid(format!("{at}: bad dlc or period")));
            }
            let mut used = [false; 8];
            for f in &m.fields {
                if !(1..=2).contains(&f.width) || f.start as usize + f.width as usize > m.dlc as usize {
                    return Err(Error::invalid(format!("{at}: field at byte {} exceeds the payload", f.start)));
                }
                for b in f.start..f.start + f.width {
                    if std::mem::replace(&mut used[b as usize], true) {
                        return Err(Error::invalid(format!("{at}: fields overlap at byte {b}")));
                    }
                }
                let limit = 1u64 << (8 * u32::from(f.width));
                match &f.channel {
                    Channel::Counter { bits } if u64::from(*bits) > 8 * u64::from(f.width) || *bits == 0 => {
                        return Err(Error::invalid(format!("{at}: counter does not fit its field")));
                    }
                    Channel::Constant { value } if u64::from(*value) >= limit => {
                        return Err(Error::invalid(format!("{at}: constant does not fit its field")));
                    }
                    Channel::MultiValue { values, mean_dwell_s } => {
                        if values.is_empty() || values.len() > 4 || *mean_dwell_s <= 0.0 {
                            return Err(Error::invalid(format!("{at}: multi-value field needs 1 to 4 values")));
                        }
                        if values.iter().any(|&v| u64::from(v) >= limit) {
                            return Err(Error::invalid(format!("{at}: multi-value does not fit its field")));
                        }
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    pub fn ids(&self) -> BTreeSet<u16> {
        self.messages.iter().map(|m| m.can_id).collect()
    }

    /// Candidate identity, scale and offset of a signal.
    pub fn locate(&self, signal: Signal) -> Option<(CandidateId, f64, f64)> {
        self.messages.iter().find_map(|m| {
            m.fields.iter().find_map(|f| match f.channel {
                Channel::Signal { signal: s, scale, offset } if s == signal => {
                    Some((CandidateId::new(m.can_id, f.span()), scale, offset))
                }
                _ => None,
            })
        })
    }

    /// Every (id, span) occupied by some field.
    pub fn occupied(&self) -> BTreeSet<CandidateId> {
        self.messages
            .iter()
            .flat_map(|m| m.fields.iter().map(move |f| CandidateId::new(m.can_id, f.span())))
            .collect()
    }
}

/// How many filler channels of each kind a random layout gets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseCensus {
    /// Messages whose payload never changes.
    pub constant_messages: usize,
    pub counters: usize,
    pub multi_value: usize,
    /// Smooth housekeeping channels (steering, lateral acceleration,
    /// coolant, voltage, fuel), at most five.
    pub smooth: usize,
}

impl Default for NoiseCensus {
    fn default() -> Self {
        NoiseCensus { constant_messages: 4, counters: 6, multi_value: 5, smooth: 5 }
    }
}

fn pick<T: Copy, R: Rng>(rng: &mut R, xs: &[T]) -> T {
    xs[rng.random_range(0..xs.len())]
}

fn constant<R: Rng>(rng: &mut R, start: u8) -> Field {
    let value = if rng.random_bool(0.5) { 0 } else { rng.random_range(1..=255) };
    Field { start, width: 1, endian: Endian::Big, channel: Channel::Constant { value } }
}

fn signal(signal: Signal, start: u8, width: u8, scale: f64, offset: f64) -> Field {
    Field { start, width, endian: Endian::Big, channel: Channel::Signal { signal, scale, offset } }
}

fn counter(start: u8, width: u8, bits: u8) -> Field {
    Field { start, width, endian: Endian::Big, channel: Channel::Counter { bits } }
}

/// Fills every byte not covered by `fields` with a constant.
fn fill<R: Rng>(rng: &mut R, dlc: u8, mut fields: Vec<Field>) -> Vec<Field> {
    let mut used = [false; 8];
    for f in &fields {
        for b in f.start..f.start + f.width {
            used[b as usize] = true;
        }
    }
    for b in 0..dlc {
        if !used[b as usize] {
            fields.push(constant(rng, b));
        }
    }
    fields.sort_by_key(|f| f.start);
    fields
}

/// A single-byte signal sits in the last byte of its message, right after
/// a rolling counter, so that no byte pair decodes to a copy of it.
fn last_byte_message<R: Rng>(rng: &mut R, can_id: u16, period_ms: u32, sig: Signal, scale: f64, offset: f64) -> MessageLayout {
    let dlc = rng.random_range(2..=8u8);
    let fields = vec![counter(dlc - 2, 1, 8), signal(sig, dlc - 1, 1, scale, offset)];
    MessageLayout { can_id, period_ms, dlc, fields: fill(rng, dlc, fields) }
}

/// Cadence of the five driving signals.
pub const SIGNAL_PERIOD_MS: u32 = 10;

/// A random layout with the five driving signals and the requested noise.
/// Identifiers in `exclude` are not used.
pub fn random_layout<R: Rng>(rng: &mut R, census: &NoiseCensus, exclude: &BTreeSet<u16>) -> Layout {
    let n_msgs = 5 + census.constant_messages + census.counters + census.multi_value + census.smooth;
    let mut ids: Vec<u16> = Vec::with_capacity(n_msgs);
    while ids.len() < n_msgs {
        let id = rng.random_range(0x080..0x7F0u16);
        if !exclude.contains(&id) && !ids.contains(&id) {
            ids.push(id);
        }
    }
    let mut ids = ids.into_iter();
    let mut next_id = || ids.next().expect("enough ids drawn");
    let mut messages = Vec::new();

    // velocity: two bytes at 0.1 km/h per bit, so the high byte alone has
    // too few values to survive pruning
    let start = rng.random_range(0..=6u8);
    let offset = pick(rng, &[0.0, 0.0, 20.0]);
    messages.push(MessageLayout {
        can_id: next_id(),
        period_ms: SIGNAL_PERIOD_MS,
        dlc: 8,
        fields: fill(rng, 8, vec![signal(Signal::Velocity, start, 2, 10.0, offset)]),
    });

    // rpm in two bytes
    let id = next_id();
    let start = rng.random_range(0..=6u8);
    let scale = pick(rng, &[1.0, 2.0, 4.0, 8.0]);
    messages.push(MessageLayout {
        can_id: id,
        period_ms: SIGNAL_PERIOD_MS,
        dlc: 8,
        fields: fill(rng, 8, vec![signal(Signal::Rpm, start, 2, scale, 0.0)]),
    });

    for sig in [Signal::Accelerator, Signal::Brake, Signal::Clutch] {
        let (scale, offset) = pick(rng, &[(250.0, 0.0), (200.0, 0.0), (240.0, 10.0), (254.0, 0.0)]);
        let id = next_id();
        messages.push(last_byte_message(rng, id, SIGNAL_PERIOD_MS, sig, scale, offset));
    }

    for _ in 0..census.constant_messages {
        let dlc = rng.random_range(1..=8u8);
        messages.push(MessageLayout {
            can_id: next_id(),
            period_ms: pick(rng, &[100, 200, 500, 1000]),
            dlc,
            fields: fill(rng, dlc, Vec::new()),
        });
    }
    for k in 0..census.counters {
        // every kind of counter appears once before any repeats
        let (width, bits) = [(1u8, 8u8), (2, 16), (1, 4)][k % 3];
        let dlc = rng.random_range(width.max(2)..=8u8);
        let start = rng.random_range(0..=dlc - width);
        // a counter of the same period goes with every other one
        let mut fields = vec![counter(start, width, bits)];
        if k % 2 == 1 && dlc - width >= 1 {
            let b = if start == 0 { dlc - 1 } else { 0 };
            fields.push(counter(b, 1, 4));
        }
        messages.push(MessageLayout {
            can_id: next_id(),
            period_ms: pick(rng, &[10, 20, 50, 100]),
            dlc,
            fields: fill(rng, dlc, fields),
        });
    }
    for _ in 0..census.multi_value {
        let dlc = rng.random_range(1..=8u8);
        let start = rng.random_range(0..dlc);
        let k = rng.random_range(2..=4usize);
        let mut values: Vec<u32> = Vec::with_capacity(k);
        while values.len() < k {
            let v = rng.random_range(0..=255u32);
            if !values.contains(&v) {
                values.push(v);
            }
        }
        let f = Field {
            start,
            width: 1,
            endian: Endian::Big,
            channel: Channel::MultiValue { values, mean_dwell_s: rng.random_range(5.0..60.0) },
        };
        messages.push(MessageLayout {
            can_id: next_id(),
            period_ms: pick(rng, &[20, 50, 100, 500]),
            dlc,
            fields: fill(rng, dlc, vec![f]),
        });
    }
    let mut smooth = [
        (Signal::Steering, 2u8, 10.0, 32768.0, 10u32),
        (Signal::Lateral, 1, 10.0, 128.0, 20),
        (Signal::Coolant, 1, 1.0, 40.0, 1000),
        (Signal::Voltage, 1, 10.0, 0.0, 100),
        (Signal::Fuel, 1, 2.0, 0.0, 1000),
    ];
    smooth.shuffle(rng);
    for &(sig, width, scale, offset, period) in smooth.iter().take(census.smooth.min(5)) {
        let dlc = rng.random_range(width.max(2)..=8u8);
        let start = rng.random_range(0..=dlc - width);
        messages.push(MessageLayout {
            can_id: next_id(),
            period_ms: period,
            dlc,
            fields: fill(rng, dlc, vec![signal(sig, start, width, scale, offset)]),
        });
    }
    messages.sort_by_key(|m| m.can_id);
    Layout { messages }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_layouts_are_valid_and_disjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_layout(&mut rng, &NoiseCensus::default(), &BTreeSet::new());
        a.validate().unwrap();
        let b = random_layout(&mut rng, &NoiseCensus::default(), &a.ids());
        b.validate().unwrap();
        assert!(a.ids().is_disjoint(&b.ids()));
        assert!(a.occupied().is_disjoint(&b.occupied()));
        for s in [Signal::Velocity, Signal::Rpm, Signal::Accelerator, Signal::Brake, Signal::Clutch] {
            assert!(a.locate(s).is_some());
        }
        assert_eq!(a.messages.len(), 25);
    }

    #[test]
    fn overlap_is_rejected() {
        let bad = Layout {
            messages: vec![MessageLayout {
                can_id: 0x100,
                period_ms: 10,
                dlc: 4,
                fields: vec![counter(0, 2, 16), counter(1, 1, 8)],
            }],
        };
        assert!(bad.validate().is_err());
        let toml = toml::to_string(&bad).unwrap();
        assert_eq!(toml::from_str::<Layout>(&toml).unwrap(), bad);
    }
}
