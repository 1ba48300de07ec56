//! Turning simulated drives into CAN frames and GPS fixes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};

use super::layout::{Channel, Layout, Signal};
use super::physics::{PhysicalDrive, DT};
use crate::canlog::{CanFrame, GpsPoint, GpsTrack, Timestamp};
use crate::decomposer::Endian;
use crate::error::{Error, Result};

const EARTH_RADIUS_M: f64 = 6_371_000.0;

pub fn physical(drive: &PhysicalDrive, signal: Signal) -> &[f64] {
    match signal {
        Signal::Velocity => &drive.velocity,
        Signal::Rpm => &drive.rpm,
        Signal::Accelerator => &drive.accelerator,
        Signal::Brake => &drive.brake,
        Signal::Clutch => &drive.clutch,
        Signal::Steering => &drive.steering,
        Signal::Lateral => &drive.lateral,
        Signal::Coolant => &drive.coolant,
        Signal::Voltage => &drive.voltage,
        Signal::Fuel => &drive.fuel,
    }
}

/// The raw integer a signal value is stored as.
pub fn quantize(value: f64, scale: f64, offset: f64) -> f64 {
    (value * scale + offset).round()
}

fn put(payload: &mut [u8], start: u8, width: u8, endian: Endian, value: u32) {
    let s = start as usize;
    if width == 1 {
        payload[s] = value as u8;
    } else {
        let [hi, lo] = (value as u16).to_be_bytes();
        let (a, b) = if endian == Endian::Big { (hi, lo) } else { (lo, hi) };
        payload[s] = a;
        payload[s + 1] = b;
    }
}

/// Per-field state carried from frame to frame.
enum FieldState {
    None,
    Counter(u32),
    Multi { idx: usize, until_s: f64 },
}

/// All frames of a drive, in timestamp order. `t0_us` is the timestamp of
/// the first simulation step.
pub fn encode_frames(drive: &PhysicalDrive, layout: &Layout, t0_us: u64, seed: u64) -> Result<Vec<CanFrame>> {
    layout.validate()?;
    let n = drive.len();
    let duration_us = (n as f64 * DT * 1e6) as u64;
    let mut frames = Vec::new();
    for (k, m) in layout.messages.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64 + 1);
        let period_us = u64::from(m.period_ms) * 1000;
        let phase = rng.random_range(0..period_us);
        let mut state: Vec<FieldState> = m
            .fields
            .iter()
            .map(|f| match &f.channel {
                Channel::Counter { .. } => FieldState::Counter(rng.random_range(0..256)),
                Channel::MultiValue { values, mean_dwell_s } => FieldState::Multi {
                    idx: rng.random_range(0..values.len()),
                    until_s: Exp::new(1.0 / mean_dwell_s).expect("positive rate").sample(&mut rng),
                },
                _ => FieldState::None,
            })
            .collect();
        let mut t = phase;
        while t < duration_us {
            let i = ((t as f64 / 1e6 / DT) as usize).min(n - 1);
            let mut payload = [0u8; 8];
            for (f, st) in m.fields.iter().zip(state.iter_mut()) {
                let value = match (&f.channel, st) {
                    (Channel::Signal { signal, scale, offset }, _) => {
                        let raw = quantize(physical(drive, *signal)[i], *scale, *offset);
                        let bits = 8 * u32::from(f.width);
                        if !(0.0..f64::from(1u32 << bits)).contains(&raw) {
                            return Err(Error::FieldOverflow {
                                value: raw,
                                bits,
                                location: format!("{:04x}:{} ({})", m.can_id, f.start, signal.name()),
                            });
                        }
                        raw as u32
                    }
                    (Channel::Counter { bits }, FieldState::Counter(c)) => {
                        *c = (*c + 1) % (1u32 << bits);
                        *c
                    }
                    (Channel::Constant { value }, _) => *value,
                    (Channel::MultiValue { values, mean_dwell_s }, FieldState::Multi { idx, until_s }) => {
                        let now = t as f64 / 1e6;
                        while now >= *until_s {
                            *idx = rng.random_range(0..values.len());
                            *until_s += Exp::new(1.0 / mean_dwell_s).expect("positive rate").sample(&mut rng);
                        }
                        values[*idx]
                    }
                    _ => unreachable!("state matches channel"),
                };
                put(&mut payload, f.start, f.width, f.endian, value);
            }
            // transmission jitter of up to 0.2 ms
            let jitter = rng.random_range(0..200);
            let ts = Timestamp(t0_us + t + jitter);
            frames.push(CanFrame::new(ts, m.can_id, &payload[..m.dlc as usize])?);
            t += period_us;
        }
    }
    frames.sort_by_key(|f| (f.timestamp, f.can_id));
    Ok(frames)
}

/// GPS noise: a slowly wandering offset per axis, plus rare gross errors.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct GpsNoise {
    /// Standard deviation of the position error, metres.
    pub sigma_m: f64,
    /// Fix-to-fix correlation of the error.
    pub correlation: f64,
    /// Probability that a fix is off by 40 to 120 m.
    pub glitch_rate: f64,
}

impl Default for GpsNoise {
    fn default() -> Self {
        GpsNoise { sigma_m: 3.0, correlation: 0.95, glitch_rate: 0.003 }
    }
}

/// One fix per second, starting at `t0` (seconds), from the integrated path.
pub fn gps_track(drive: &PhysicalDrive, t0: f64, origin: (f64, f64), noise: &GpsNoise, seed: u64) -> Result<GpsTrack> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let innov = Normal::new(0.0, noise.sigma_m * (1.0 - noise.correlation.powi(2)).sqrt())
        .map_err(|e| Error::invalid(e.to_string()))?;
    let (mut east, mut north) = (0.0f64, 0.0f64);
    let (mut ne, mut nn) = (0.0f64, 0.0f64);
    let mut points = Vec::new();
    let steps_per_fix = (1.0 / DT).round() as usize;
    let m_per_deg_lat = EARTH_RADIUS_M.to_radians().abs();
    let m_per_deg_lon = m_per_deg_lat * origin.0.to_radians().cos();
    for i in 0..drive.len() {
        if i % steps_per_fix == 0 {
            ne = noise.correlation * ne + innov.sample(&mut rng);
            nn = noise.correlation * nn + innov.sample(&mut rng);
            let (mut ge, mut gn) = (east + ne, north + nn);
            if rng.random::<f64>() < noise.glitch_rate {
                let d = rng.random_range(40.0..120.0);
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                ge += d * a.sin();
                gn += d * a.cos();
            }
            points.push(GpsPoint {
                t: t0 + i as f64 * DT,
                lat: origin.0 + gn / m_per_deg_lat,
                lon: origin.1 + ge / m_per_deg_lon,
            });
        }
        let d = drive.velocity[i] / 3.6 * DT;
        east += d * drive.heading[i].sin();
        north += d * drive.heading[i].cos();
    }
    GpsTrack::new(points)
}
