//! Point-mass longitudinal model with a five-speed manual gearbox and a
//! rule-based driver.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Simulation step, seconds.
pub const DT: f64 = 0.01;
/// Engine rpm per km/h in each gear.
pub const GEAR_RPM_PER_KMH: [f64; 5] = [125.0, 67.0, 43.0, 32.0, 26.0];
/// Acceleration at full throttle in each gear, m/s².
const GEAR_ACCEL: [f64; 5] = [3.2, 2.4, 1.7, 1.3, 1.0];
const IDLE_RPM: f64 = 800.0;
const FULL_BRAKE: f64 = 8.0;
const MAX_SPEED: f64 = 130.0;

/// How a driver handles the pedals and gearbox.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverStyle {
    pub name: String,
    /// Highest accelerator position used when speeding up.
    pub max_accelerator: f64,
    /// Accelerator per km/h of speed deficit.
    pub accel_gain: f64,
    /// Accelerator travel per second when pressing.
    pub pedal_rate: f64,
    pub max_brake: f64,
    /// Brake per km/h of speed excess.
    pub brake_gain: f64,
    pub brake_rate: f64,
    /// Engine speed at which the driver shifts up while accelerating.
    pub shift_rpm: f64,
    /// Seconds the clutch slips at mid travel when engaging.
    pub clutch_slip_s: f64,
    /// Clutch position while slipping.
    pub slip_level: f64,
    /// Standard deviation of pedal tremor.
    pub tremor: f64,
}

impl DriverStyle {
    pub fn smooth() -> Self {
        DriverStyle {
            name: "smooth".into(),
            max_accelerator: 0.55,
            accel_gain: 0.04,
            pedal_rate: 0.8,
            max_brake: 0.35,
            brake_gain: 0.025,
            brake_rate: 0.8,
            shift_rpm: 2500.0,
            clutch_slip_s: 0.7,
            slip_level: 0.5,
            tremor: 0.012,
        }
    }

    pub fn moderate() -> Self {
        DriverStyle {
            name: "moderate".into(),
            max_accelerator: 0.75,
            accel_gain: 0.07,
            pedal_rate: 1.5,
            max_brake: 0.55,
            brake_gain: 0.045,
            brake_rate: 1.5,
            shift_rpm: 2900.0,
            clutch_slip_s: 0.55,
            slip_level: 0.5,
            tremor: 0.02,
        }
    }

    pub fn aggressive() -> Self {
        DriverStyle {
            name: "aggressive".into(),
            max_accelerator: 0.95,
            accel_gain: 0.12,
            pedal_rate: 3.0,
            max_brake: 0.8,
            brake_gain: 0.08,
            brake_rate: 3.0,
            shift_rpm: 3400.0,
            clutch_slip_s: 0.45,
            slip_level: 0.45,
            tremor: 0.03,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "smooth" => Some(Self::smooth()),
            "moderate" => Some(Self::moderate()),
            "aggressive" => Some(Self::aggressive()),
            _ => None,
        }
    }
}

/// Hold a target speed (0 = stand still) for a while.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub speed_kmh: f64,
    pub duration_s: f64,
}

/// City and suburban legs with stops, and one motorway stretch taking 15-20%
/// of the drive.
pub fn random_route<R: Rng>(rng: &mut R, duration_s: f64) -> Vec<Segment> {
    let motorway_s = duration_s * rng.random_range(0.15..0.20);
    let mut town = Vec::new();
    let mut total = 3.0;
    while total < duration_s - motorway_s {
        let (speeds, dur, stop_p): (&[f64], (f64, f64), f64) = if rng.random_bool(0.6) {
            (&[30.0, 40.0, 50.0, 50.0], (25.0, 70.0), 0.6)
        } else {
            (&[60.0, 70.0, 80.0], (40.0, 120.0), 0.35)
        };
        let speed = speeds[rng.random_range(0..speeds.len())] + rng.random_range(-3.0..3.0);
        let d = rng.random_range(dur.0..dur.1);
        town.push(Segment { speed_kmh: speed, duration_s: d });
        total += d;
        if rng.random::<f64>() < stop_p {
            let d = rng.random_range(6.0..20.0);
            town.push(Segment { speed_kmh: 0.0, duration_s: d });
            total += d;
        }
    }
    let mut motorway = Vec::new();
    let mut left = motorway_s;
    while left > 0.0 {
        let speed: f64 = [100.0, 110.0, 120.0, 125.0][rng.random_range(0..4)] + rng.random_range(-3.0..3.0);
        let d = rng.random_range(60.0..180.0f64).min(left);
        motorway.push(Segment { speed_kmh: speed.min(MAX_SPEED - 2.0), duration_s: d });
        left -= d;
    }
    let at = rng.random_range(0..=town.len());
    let mut route = vec![Segment { speed_kmh: 0.0, duration_s: 3.0 }];
    route.extend(town.drain(..at));
    route.extend(motorway);
    route.extend(town);
    route
}

/// All physical quantities at 100 Hz.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PhysicalDrive {
    /// km/h
    pub velocity: Vec<f64>,
    pub rpm: Vec<f64>,
    /// Pedal positions in [0, 1]; 1 is fully pressed.
    pub accelerator: Vec<f64>,
    pub brake: Vec<f64>,
    pub clutch: Vec<f64>,
    pub gear: Vec<u8>,
    /// Steering wheel angle, degrees.
    pub steering: Vec<f64>,
    /// m/s²
    pub lateral: Vec<f64>,
    /// °C
    pub coolant: Vec<f64>,
    /// V
    pub voltage: Vec<f64>,
    /// litres
    pub fuel: Vec<f64>,
    /// Radians from north, clockwise.
    pub heading: Vec<f64>,
    /// Start times of upshifts.
    pub upshifts: Vec<f64>,
    pub standing_starts: usize,
}

impl PhysicalDrive {
    pub fn len(&self) -> usize {
        self.velocity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.velocity.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 * DT
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    Engaged,
    /// Clutch fully pressed.
    Held,
    /// Gear change or launch, `t` seconds into the sequence.
    Shift { t: f64, to: u8, slip: bool },
}

const PRESS_S: f64 = 0.15;
const SELECT_S: f64 = 0.15;
const ENGAGE_S: f64 = 0.15;
const RELEASE_S: f64 = 0.2;

/// Clutch position, torque fraction and whether the driver keeps off the
/// accelerator, at `t` seconds into a shift. `None` once it is over.
fn shift_profile(t: f64, slip: bool, style: &DriverStyle) -> Option<(f64, f64, bool)> {
    let level = style.slip_level;
    if t < PRESS_S {
        return Some((t / PRESS_S, 0.0, true));
    }
    if t < PRESS_S + SELECT_S {
        return Some((1.0, 0.0, true));
    }
    let t = t - PRESS_S - SELECT_S;
    if !slip {
        return (t < RELEASE_S).then(|| (1.0 - t / RELEASE_S, 0.3, false));
    }
    if t < ENGAGE_S {
        return Some((1.0 - (1.0 - level) * t / ENGAGE_S, 0.2, false));
    }
    let t = t - ENGAGE_S;
    if t < style.clutch_slip_s {
        return Some((level, 0.5, false));
    }
    let t = t - style.clutch_slip_s;
    (t < RELEASE_S).then(|| (level * (1.0 - t / RELEASE_S), 0.75, false))
}

fn drag(v_kmh: f64) -> f64 {
    if v_kmh <= 0.0 {
        return 0.0;
    }
    let v = v_kmh / 3.6;
    0.04 + 0.00035 * v * v
}

/// First-order autoregressive noise with a given stationary deviation.
struct Ar1 {
    rho: f64,
    innov: Normal<f64>,
    x: f64,
}

impl Ar1 {
    fn new(sigma: f64, rho: f64) -> Self {
        let sd = sigma * (1.0 - rho * rho).sqrt();
        Ar1 {
            rho,
            innov: Normal::new(0.0, sd.max(0.0)).expect("finite deviation"),
            x: 0.0,
        }
    }

    fn step<R: Rng>(&mut self, rng: &mut R) -> f64 {
        self.x = self.rho * self.x + self.innov.sample(rng);
        self.x
    }
}

fn slew(current: f64, target: f64, up: f64, down: f64) -> f64 {
    let next = if target > current {
        (current + up * DT).min(target)
    } else {
        (current - down * DT).max(target)
    };
    if next < 1e-9 { 0.0 } else { next }
}

/// Runs the driver along the route at 100 Hz.
pub fn simulate_drive(style: &DriverStyle, route: &[Segment], seed: u64) -> PhysicalDrive {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: f64 = route.iter().map(|s| s.duration_s).sum();
    let n = (total / DT).round() as usize;
    let mut out = PhysicalDrive::default();
    for v in [
        &mut out.velocity,
        &mut out.rpm,
        &mut out.accelerator,
        &mut out.brake,
        &mut out.clutch,
        &mut out.steering,
        &mut out.lateral,
        &mut out.coolant,
        &mut out.voltage,
        &mut out.fuel,
        &mut out.heading,
    ] {
        v.reserve(n);
    }

    let mut acc_tremor = Ar1::new(style.tremor, 0.97);
    let mut brk_tremor = Ar1::new(style.tremor * 0.7, 0.97);
    let mut clutch_tremor = Ar1::new(0.006, 0.95);
    let mut rpm_noise = Ar1::new(4.0, 0.9);
    let mut wheel_noise = Ar1::new(0.05, 0.9);
    let mut curvature = Ar1::new(1.0, (-DT / 4.0f64).exp());
    let mut steer_noise = Ar1::new(0.4, 0.8);
    let mut lat_noise = Ar1::new(0.05, 0.5);
    let mut temp_noise = Ar1::new(0.15, 0.999);
    let mut volt_noise = Ar1::new(0.04, 0.99);

    let mut v = 0.0f64;
    let mut acc = 0.0f64;
    let mut brk = 0.0f64;
    let mut gear = 1u8;
    let mut rpm = IDLE_RPM;
    let mut phase = Phase::Held;
    let mut heading = rng.random_range(0.0..std::f64::consts::TAU);
    let mut fuel = 45.0 + rng.random_range(-5.0..5.0);

    let mut seg = 0usize;
    let mut seg_end = route.first().map_or(0.0, |s| s.duration_s);
    for i in 0..n {
        let t = i as f64 * DT;
        while t >= seg_end && seg + 1 < route.len() {
            seg += 1;
            seg_end += route[seg].duration_s;
        }
        let target = route.get(seg).map_or(0.0, |s| s.speed_kmh);
        let err = target - v;
        let g = usize::from(gear - 1);
        let stopped = v < 0.3;

        // what the driver would like to do
        let hold = style.max_brake.min(0.3);
        let (mut acc_t, mut brk_t) = if target == 0.0 {
            if stopped {
                (0.0, hold)
            } else {
                (0.0, (style.brake_gain * v).clamp(hold, style.max_brake))
            }
        } else if err < -4.0 {
            (0.0, (style.brake_gain * -err).clamp(0.05, style.max_brake))
        } else if err > -1.5 {
            let ff = (drag(v) + 0.02) / GEAR_ACCEL[g];
            ((ff + style.accel_gain * err).clamp(0.0, style.max_accelerator), 0.0)
        } else {
            (0.0, 0.0)
        };

        // gearbox and clutch
        match phase {
            Phase::Held => {
                gear = 1;
                if target > 0.0 && brk == 0.0 && acc_t > 0.0 {
                    if stopped {
                        out.standing_starts += 1;
                    }
                    phase = Phase::Shift { t: PRESS_S + SELECT_S, to: 1, slip: true };
                } else {
                    acc_t = 0.0;
                }
            }
            Phase::Engaged => {
                let cruising = err.abs() < 3.0;
                if gear == 1 && GEAR_RPM_PER_KMH[0] * v < 900.0 && acc_t == 0.0 {
                    phase = Phase::Held;
                } else if gear < 5 && ((rpm >= style.shift_rpm && acc_t > 0.05) || (cruising && rpm > 2300.0)) {
                    out.upshifts.push(t);
                    phase = Phase::Shift { t: 0.0, to: gear + 1, slip: true };
                } else if gear > 1 && rpm < 1100.0 && v > 12.0 {
                    phase = Phase::Shift { t: 0.0, to: gear - 1, slip: false };
                } else if v < 10.0 && brk_t > 0.0 {
                    phase = Phase::Held;
                }
            }
            Phase::Shift { .. } => {}
        }
        let (clutch, frac, lift) = match phase {
            Phase::Engaged => (0.0, 1.0, false),
            Phase::Held => (1.0, 0.0, false),
            Phase::Shift { t: ts, to, slip } => {
                if ts >= PRESS_S {
                    gear = to;
                }
                match shift_profile(ts, slip, style) {
                    Some(p) => {
                        phase = Phase::Shift { t: ts + DT, to, slip };
                        p
                    }
                    None => {
                        phase = Phase::Engaged;
                        (0.0, 1.0, false)
                    }
                }
            }
        };
        if lift {
            acc_t = 0.0;
        }

        // a foot is on one pedal at a time
        if brk_t > 0.0 || brk > 0.0 {
            acc_t = 0.0;
        }
        if acc > 0.0 {
            brk_t = 0.0;
        }
        acc = slew(acc, acc_t, style.pedal_rate, 4.0);
        brk = slew(brk, brk_t, style.brake_rate, 3.0);

        // longitudinal dynamics
        let g = usize::from(gear - 1);
        let engine_brake = if acc < 0.02 { 0.25 * frac } else { 0.0 };
        let a = acc * GEAR_ACCEL[g] * frac - brk * FULL_BRAKE - if v > 0.0 { drag(v) + engine_brake } else { 0.0 };
        v = (v + a * DT * 3.6).clamp(0.0, MAX_SPEED);

        // engine speed
        let wheel = GEAR_RPM_PER_KMH[g] * v;
        rpm = match phase {
            Phase::Engaged => wheel.max(IDLE_RPM),
            _ if frac == 0.0 => rpm + (IDLE_RPM + 2000.0 * acc - rpm) * DT / 0.3,
            _ => {
                let tau = if clutch < style.slip_level - 1e-9 { 0.08 } else { 0.25 };
                let goal = wheel.max(1000.0 + 1800.0 * acc);
                rpm + (goal - rpm) * DT / tau
            }
        };

        // pedal outputs carry tremor only while pressed
        let ta = acc_tremor.step(&mut rng);
        let tb = brk_tremor.step(&mut rng);
        let tc = clutch_tremor.step(&mut rng);
        let tw = wheel_noise.step(&mut rng);
        out.velocity.push(if v > 0.3 { (v + tw).max(0.0) } else { v });
        out.rpm.push((rpm + rpm_noise.step(&mut rng)).max(0.0));
        out.accelerator.push(if acc > 0.0 { (acc + ta).clamp(0.004, 1.0) } else { 0.0 });
        out.brake.push(if brk > 0.0 { (brk + tb).clamp(0.004, 1.0) } else { 0.0 });
        out.clutch.push(if clutch > 0.0 && clutch < 1.0 { (clutch + tc).clamp(0.004, 1.0) } else { clutch });
        out.gear.push(gear);

        // lateral motion and slow housekeeping channels
        let vm = v / 3.6;
        let kappa = curvature.step(&mut rng) * 0.012 / (1.0 + v / 25.0);
        heading = (heading + kappa * vm * DT).rem_euclid(std::f64::consts::TAU);
        out.heading.push(heading);
        out.steering.push((kappa * 2.7).atan().to_degrees() * 16.0 + steer_noise.step(&mut rng));
        out.lateral.push(vm * vm * kappa + lat_noise.step(&mut rng));
        out.coolant.push(20.0 + 70.0 * (1.0 - (-t / 400.0).exp()) + temp_noise.step(&mut rng));
        let charging = if rpm > 600.0 { 14.1 } else { 12.4 };
        out.voltage.push(charging - 0.3 * brk + volt_noise.step(&mut rng));
        fuel -= (0.0002 + acc * rpm * 1e-6) * DT;
        out.fuel.push(fuel.max(0.0));
    }
    out
}
