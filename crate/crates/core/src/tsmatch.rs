//! Dynamic time warping and GPS-derived velocity, used to find the velocity
//! signal of a log against a GPS reference.

use rayon::prelude::*;
use serde::Serialize;

use crate::canlog::{GpsPoint, GpsTrack};
use crate::decomposer::{CandidateId, CandidateSeries};
use crate::error::{Error, Result};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Provenance {
    Gps,
    Can(CandidateId),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VelocitySeries {
    pub times: Vec<f64>,
    /// km/h
    pub speeds: Vec<f64>,
    pub provenance: Provenance,
}

impl VelocitySeries {
    pub fn len(&self) -> usize {
        self.speeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speeds.is_empty()
    }
}

/// Great-circle distance in metres.
pub fn haversine_m(a: &GpsPoint, b: &GpsPoint) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * 1000.0 * h.sqrt().min(1.0).asin()
}

/// Mean speed over each pair of neighbouring fixes, stamped at the later
/// fix.
pub fn gps_to_velocity(track: &GpsTrack) -> Result<VelocitySeries> {
    if track.points.len() < 2 {
        return Err(Error::InsufficientSamples(
            "velocity needs at least two GPS points".into(),
        ));
    }
    let mut times = Vec::with_capacity(track.points.len() - 1);
    let mut speeds = Vec::with_capacity(track.points.len() - 1);
    for w in track.points.windows(2) {
        let dt = w[1].t - w[0].t;
        if dt <= 0.0 {
            return Err(Error::invalid(format!("GPS timestamps not increasing at t={}", w[1].t)));
        }
        times.push(w[1].t);
        speeds.push(haversine_m(&w[0], &w[1]) / dt * 3.6);
    }
    Ok(VelocitySeries {
        times,
        speeds,
        provenance: Provenance::Gps,
    })
}

/// Drops every sample that jumps more than `max_jump` km/h away from the
/// last kept sample. The first sample is always kept.
pub fn remove_velocity_outliers(v: &VelocitySeries, max_jump: f64) -> VelocitySeries {
    let mut times = Vec::with_capacity(v.len());
    let mut speeds = Vec::with_capacity(v.len());
    for (&t, &s) in v.times.iter().zip(&v.speeds) {
        if let Some(&last) = speeds.last() {
            let last: f64 = last;
            if (s - last).abs() > max_jump {
                continue;
            }
        }
        times.push(t);
        speeds.push(s);
    }
    VelocitySeries {
        times,
        speeds,
        provenance: v.provenance,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DtwResult {
    pub distance: f64,
    /// Number of cells on the optimal warping path.
    pub path_length: usize,
}

/// Unconstrained DTW with absolute-difference local cost.
pub fn dtw(a: &[f64], b: &[f64]) -> Result<DtwResult> {
    dtw_banded(a, b, None)
}

/// DTW restricted to a Sakoe-Chiba band of half-width `band` around the
/// (length-scaled) diagonal. `None` leaves the alignment unconstrained.
/// Two rolling rows keep memory linear in `b`.
pub fn dtw_banded(a: &[f64], b: &[f64], band: Option<usize>) -> Result<DtwResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("dtw needs two non-empty series"));
    }
    let (n, m) = (a.len(), b.len());
    let bounds = |i: usize| -> (usize, usize) {
        match band {
            None => (0, m - 1),
            Some(w) => {
                let centre = if n == 1 { 0.0 } else { i as f64 * (m - 1) as f64 / (n - 1) as f64 };
                let w = w as f64;
                let lo = (centre - w).ceil().max(0.0) as usize;
                let hi = ((centre + w).floor() as usize).min(m - 1);
                (lo.min(m - 1), hi)
            }
        }
    };

    const INF: f64 = f64::INFINITY;
    let mut prev = vec![(INF, 0usize); m];
    let mut curr = vec![(INF, 0usize); m];
    for i in 0..n {
        let (lo, hi) = bounds(i);
        curr.iter_mut().for_each(|c| *c = (INF, 0));
        for j in lo..=hi {
            let cost = (a[i] - b[j]).abs();
            let best = if i == 0 && j == 0 {
                (0.0, 0)
            } else {
                // diagonal first so that equal costs prefer the shorter path
                let mut best = (INF, 0);
                if i > 0 && j > 0 {
                    best = prev[j - 1];
                }
                if i > 0 && prev[j].0 < best.0 {
                    best = prev[j];
                }
                if j > 0 && curr[j - 1].0 < best.0 {
                    best = curr[j - 1];
                }
                best
            };
            if best.0.is_finite() {
                curr[j] = (best.0 + cost, best.1 + 1);
            }
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    let (distance, path_length) = prev[m - 1];
    if !distance.is_finite() {
        return Err(Error::invalid("band too narrow to connect the series ends"));
    }
    Ok(DtwResult { distance, path_length })
}

/// Per-second means on the grid `[t0 + k, t0 + k + 1)`, `k < seconds`.
/// Empty seconds repeat the previous value (or the first later one at the
/// start).
pub fn resample_per_second(times: &[f64], values: &[f64], t0: f64, seconds: usize) -> Vec<f64> {
    let mut sums = vec![0.0; seconds];
    let mut counts = vec![0usize; seconds];
    for (&t, &v) in times.iter().zip(values) {
        if t < t0 {
            continue;
        }
        let k = (t - t0).floor() as usize;
        if k >= seconds {
            break;
        }
        sums[k] += v;
        counts[k] += 1;
    }
    let mut out: Vec<Option<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
        .collect();
    let mut last = None;
    for v in out.iter_mut() {
        match v {
            Some(x) => last = Some(*x),
            None => *v = last,
        }
    }
    let first = out.iter().flatten().next().copied().unwrap_or(0.0);
    out.into_iter().map(|v| v.unwrap_or(first)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DtwRanking {
    pub candidate: CandidateId,
    pub distance: f64,
    pub path_length: usize,
}

/// Ranks normalized candidates by DTW distance to a velocity reference.
///
/// Both sides are cut to their common time span, resampled to 1 Hz by
/// per-second means, and divided by their maximum. Ascending by distance,
/// ties by candidate id.
pub fn rank_by_dtw(
    reference: &VelocitySeries,
    candidates: &[CandidateSeries],
    band: Option<usize>,
) -> Result<Vec<DtwRanking>> {
    if reference.len() < 2 {
        return Err(Error::InsufficientSamples("reference needs at least two samples".into()));
    }
    let (r0, r1) = (reference.times[0], *reference.times.last().expect("non-empty"));
    let mut ranking: Vec<DtwRanking> = candidates
        .par_iter()
        .filter_map(|c| {
            let (c0, c1) = c.time_range()?;
            let t0 = r0.max(c0).floor();
            let t1 = r1.min(c1);
            if t1 - t0 < 2.0 {
                return None;
            }
            let seconds = (t1 - t0).floor() as usize;
            let reference = scale_to_unit(resample_per_second(
                &reference.times,
                &reference.speeds,
                t0,
                seconds,
            ));
            let cand = scale_to_unit(resample_per_second(&c.times, &c.values(), t0, seconds));
            let r = dtw_banded(&reference, &cand, band).ok()?;
            Some(DtwRanking {
                candidate: c.id,
                distance: r.distance,
                path_length: r.path_length,
            })
        })
        .collect();
    ranking.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then_with(|| a.candidate.cmp(&b.candidate))
    });
    Ok(ranking)
}

fn scale_to_unit(mut v: Vec<f64>) -> Vec<f64> {
    let max = v.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        v.iter_mut().for_each(|x| *x /= max);
    }
    v
}
