//! Deterministic synthetic cars: simulated drives encoded into CAN logs and
//! GPS tracks with known signal locations.

pub mod encode;
pub mod layout;
pub mod physics;

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use encode::{encode_frames, gps_track, quantize, GpsNoise};
pub use layout::{random_layout, Channel, Field, Layout, MessageLayout, NoiseCensus, Signal};
pub use physics::{random_route, simulate_drive, DriverStyle, PhysicalDrive, Segment};

use crate::canlog::{CanLog, GpsTrack};
use crate::decomposer::CandidateId;
use crate::error::{Error, Result};

/// First timestamp of generated logs, seconds.
pub const EPOCH_S: u64 = 1_481_492_683;
const GPS_ORIGIN: (f64, f64) = (47.4979, 19.0402);

fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub duration_s: f64,
    pub style: DriverStyle,
    /// A fixed layout; generated from the seed and census when absent.
    pub layout: Option<Layout>,
    pub census: NoiseCensus,
    pub gps: GpsNoise,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            duration_s: 900.0,
            style: DriverStyle::moderate(),
            layout: None,
            census: NoiseCensus::default(),
            gps: GpsNoise::default(),
            seed: 0,
        }
    }
}

impl ScenarioSpec {
    pub fn resolved_layout(&self) -> Layout {
        self.layout
            .clone()
            .unwrap_or_else(|| layout_from_seed(self.seed, &self.census))
    }
}

/// The layout a scenario without a fixed layout gets for `seed`. Drives
/// with different seeds share a car when they share this layout.
pub fn layout_from_seed(seed: u64, census: &NoiseCensus) -> Layout {
    random_layout(&mut stream(seed, 1), census, &BTreeSet::new())
}

/// Where a signal was written and how.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalLocation {
    pub candidate: CandidateId,
    pub scale: f64,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub signals: BTreeMap<String, SignalLocation>,
    pub standing_starts: usize,
    pub upshifts: usize,
}

impl GroundTruth {
    pub fn from_layout(layout: &Layout, drive: &PhysicalDrive) -> Self {
        let signals = Signal::ALL
            .into_iter()
            .filter_map(|s| {
                layout
                    .locate(s)
                    .map(|(candidate, scale, offset)| (s.name().to_string(), SignalLocation { candidate, scale, offset }))
            })
            .collect();
        GroundTruth { signals, standing_starts: drive.standing_starts, upshifts: drive.upshifts.len() }
    }

    pub fn candidate(&self, signal: Signal) -> Option<CandidateId> {
        self.signals.get(signal.name()).map(|l| l.candidate)
    }
}

/// One generated drive.
#[derive(Debug, Clone)]
pub struct SynthDrive {
    pub log: CanLog,
    pub gps: GpsTrack,
    pub truth: GroundTruth,
    pub physics: PhysicalDrive,
    pub layout: Layout,
}

/// Simulates and encodes a drive of `style` along a random route on a car
/// with the given layout.
pub fn generate_drive(
    layout: &Layout,
    style: &DriverStyle,
    duration_s: f64,
    gps: &GpsNoise,
    seed: u64,
) -> Result<SynthDrive> {
    if !(duration_s > 0.0) {
        return Err(Error::invalid("drive duration must be positive"));
    }
    let route = random_route(&mut stream(seed, 2), duration_s);
    let mut physics = simulate_drive(style, &route, seed ^ 0x5eed);
    let n = (duration_s / physics::DT).round() as usize;
    truncate(&mut physics, n);
    // drives of one scenario start at distinct times
    let t0_us = (EPOCH_S + (seed % 1000) * 10_000) * 1_000_000;
    let frames = encode_frames(&physics, layout, t0_us, seed.wrapping_add(3))?;
    let gps = gps_track(&physics, t0_us as f64 / 1e6, GPS_ORIGIN, gps, seed.wrapping_add(4))?;
    Ok(SynthDrive {
        log: CanLog::from_frames(frames).with_meta(format!("synthetic {} seed {seed}", style.name)),
        gps,
        truth: GroundTruth::from_layout(layout, &physics),
        physics,
        layout: layout.clone(),
    })
}

fn truncate(d: &mut PhysicalDrive, n: usize) {
    for v in [
        &mut d.velocity,
        &mut d.rpm,
        &mut d.accelerator,
        &mut d.brake,
        &mut d.clutch,
        &mut d.steering,
        &mut d.lateral,
        &mut d.coolant,
        &mut d.voltage,
        &mut d.fuel,
        &mut d.heading,
    ] {
        v.truncate(n);
    }
    d.gear.truncate(n);
    let end = n as f64 * physics::DT;
    d.upshifts.retain(|&t| t < end);
}

pub fn generate(spec: &ScenarioSpec) -> Result<SynthDrive> {
    generate_drive(&spec.resolved_layout(), &spec.style, spec.duration_s, &spec.gps, spec.seed)
}

/// The log as canonical text together with its ground truth.
pub fn encode_log(drive: &SynthDrive) -> (String, GroundTruth) {
    (drive.log.to_text(), drive.truth.clone())
}

/// A base car and a target car driven in the same style, with disjoint
/// identifiers and independently drawn spans, scales and noise.
pub fn make_car_pair(seed: u64, base_s: f64, target_s: f64) -> Result<(SynthDrive, SynthDrive)> {
    let census = NoiseCensus::default();
    let base_layout = random_layout(&mut stream(seed, 10), &census, &BTreeSet::new());
    let target_layout = random_layout(&mut stream(seed, 11), &census, &base_layout.ids());
    let style = DriverStyle::moderate();
    let gps = GpsNoise::default();
    let base = generate_drive(&base_layout, &style, base_s, &gps, seed.wrapping_mul(2))?;
    let target = generate_drive(&target_layout, &style, target_s, &gps, seed.wrapping_mul(2) + 1)?;
    Ok((base, target))
}
