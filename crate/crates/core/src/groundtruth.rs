//! Heuristic searches that label signals in a car with no reference data:
//! mutually exclusive pedal pairs, and the RPM/clutch pattern around gear
//! changes during standing starts.
//!
//! The thresholds are implementation-defined defaults, checked against the
//! synthetic generator's known layouts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decomposer::{CandidateId, CandidateSeries};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExclusivityConfig {
    /// Fraction of a candidate's own range above its minimum at which it
    /// counts as pressed.
    pub activity_threshold: f64,
    /// Each candidate must be active at least this fraction of the time.
    pub min_active: f64,
    /// Candidates with fewer distinct raw values are treated as
    /// piecewise-constant and skipped.
    pub min_distinct: usize,
    pub grid_s: f64,
}

impl Default for ExclusivityConfig {
    fn default() -> Self {
        ExclusivityConfig {
            activity_threshold: 0.05,
            min_active: 0.02,
            min_distinct: 10,
            grid_s: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExclusivityScore {
    pub a: CandidateId,
    pub b: CandidateId,
    pub co_active_fraction: f64,
    pub active_fraction_a: f64,
    pub active_fraction_b: f64,
}

/// Last-value-hold resampling onto `t0 + k * step`, `k < n`.
pub fn hold_resample(times: &[f64], values: &[f64], t0: f64, step: f64, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut idx = 0usize;
    for k in 0..n {
        let t = t0 + k as f64 * step;
        while idx + 1 < times.len() && times[idx + 1] <= t {
            idx += 1;
        }
        out.push(values[idx]);
    }
    out
}

/// Ranks unordered candidate pairs by how rarely both are active at once.
/// Pairs are aligned on a common grid over the span all candidates share.
/// Ascending by co-activity; ties prefer the pair with more joint evidence
/// (larger smaller-activity), then candidate ids.
pub fn exclusivity_search(
    candidates: &[CandidateSeries],
    cfg: &ExclusivityConfig,
) -> Result<Vec<ExclusivityScore>> {
    if candidates.len() < 2 {
        return Err(Error::InsufficientSamples(
            "exclusivity search needs at least two candidates".into(),
        ));
    }
    let eligible: Vec<&CandidateSeries> = candidates
        .iter()
        .filter(|c| !c.is_empty() && c.distinct_count() >= cfg.min_distinct)
        .collect();
    let Some(t0) = eligible.iter().filter_map(|c| c.time_range()).map(|r| r.0).reduce(f64::max) else {
        return Ok(Vec::new());
    };
    let t1 = eligible
        .iter()
        .filter_map(|c| c.time_range())
        .map(|r| r.1)
        .fold(f64::INFINITY, f64::min);
    if t1 <= t0 {
        return Ok(Vec::new());
    }
    let n = ((t1 - t0) / cfg.grid_s).floor() as usize + 1;

    let active: Vec<(CandidateId, Vec<bool>, f64)> = eligible
        .par_iter()
        .map(|c| {
            let grid = hold_resample(&c.times, &c.values(), t0, cfg.grid_s, n);
            let lo = grid.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let level = lo + cfg.activity_threshold * (hi - lo);
            let mask: Vec<bool> = grid.iter().map(|&v| hi > lo && v > level).collect();
            let frac = mask.iter().filter(|&&b| b).count() as f64 / n as f64;
            (c.id, mask, frac)
        })
        .filter(|(_, _, frac)| *frac >= cfg.min_active)
        .collect();

    let pairs: Vec<(usize, usize)> = (0..active.len())
        .flat_map(|i| (i + 1..active.len()).map(move |j| (i, j)))
        .collect();
    let mut scores: Vec<ExclusivityScore> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (ida, ma, fa) = &active[i];
            let (idb, mb, fb) = &active[j];
            let both = ma.iter().zip(mb).filter(|(x, y)| **x && **y).count();
            let (a, b, fa, fb) = if ida <= idb { (ida, idb, fa, fb) } else { (idb, ida, fb, fa) };
            ExclusivityScore {
                a: *a,
                b: *b,
                co_active_fraction: both as f64 / n as f64,
                active_fraction_a: *fa,
                active_fraction_b: *fb,
            }
        })
        .collect();
    scores.sort_by(|x, y| {
        x.co_active_fraction
            .total_cmp(&y.co_active_fraction)
            .then_with(|| {
                let ex = x.active_fraction_a.min(x.active_fraction_b);
                let ey = y.active_fraction_a.min(y.active_fraction_b);
                ey.total_cmp(&ex)
            })
            .then_with(|| (x.a, x.b).cmp(&(y.a, y.b)))
    });
    Ok(scores)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    /// Normalized velocity an episode must start at or below.
    pub v_low: f64,
    /// Normalized velocity an episode must reach.
    pub v_high: f64,
    /// Allowed dip below the running maximum while still "rising".
    pub tolerance: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            v_low: 0.02,
            v_high: 0.35,
            tolerance: 0.02,
        }
    }
}

/// Acceleration episodes: intervals that start at the last sample at or
/// below `v_low` and rise (within `tolerance`) until `v_high` is reached.
pub fn find_accel_episodes(velocity: &CandidateSeries, cfg: &EpisodeConfig) -> Vec<(f64, f64)> {
    let v = velocity.values();
    let t = &velocity.times;
    let mut episodes = Vec::new();
    let mut start: Option<usize> = None;
    let mut peak = f64::NEG_INFINITY;
    for i in 0..v.len() {
        if v[i] <= cfg.v_low {
            start = Some(i);
            peak = v[i];
            continue;
        }
        let Some(s) = start else { continue };
        if v[i] < peak - cfg.tolerance {
            start = None;
            continue;
        }
        peak = peak.max(v[i]);
        if v[i] >= cfg.v_high {
            episodes.push((t[s], t[i]));
            start = None;
        }
    }
    episodes
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikePlatformConfig {
    /// Minimum normalized drop after a local maximum.
    pub spike_drop: f64,
    /// Drop and re-rise must both happen within this many seconds.
    pub spike_horizon_s: f64,
    /// The peak must be the maximum of the preceding interval of this length.
    pub peak_lookback_s: f64,
    /// Required re-rise above the trough, as a fraction of the drop.
    pub rerise_fraction: f64,
    /// A platform stays within this distance of its level.
    pub platform_tolerance: f64,
    pub platform_min_s: f64,
    pub platform_max_s: f64,
    pub platform_level: (f64, f64),
    /// Half-width of the neighbourhood around a spike a platform must touch.
    pub co_occurrence_s: f64,
    /// Margin added on both sides of each episode when scanning.
    pub episode_margin_s: f64,
}

impl Default for SpikePlatformConfig {
    fn default() -> Self {
        SpikePlatformConfig {
            spike_drop: 0.15,
            spike_horizon_s: 2.0,
            peak_lookback_s: 0.5,
            rerise_fraction: 0.25,
            platform_tolerance: 0.05,
            platform_min_s: 0.3,
            platform_max_s: 3.0,
            platform_level: (0.3, 0.7),
            co_occurrence_s: 0.5,
            episode_margin_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpikePlatformScore {
    pub rpm: CandidateId,
    pub clutch: CandidateId,
    pub episode_count: usize,
    pub matched_episodes: usize,
    /// Fraction of the rpm candidate's spikes that have a platform nearby.
    pub spike_precision: f64,
    /// Fraction of the clutch candidate's platforms that have a spike nearby.
    pub platform_precision: f64,
}

impl SpikePlatformScore {
    pub fn precision(&self) -> f64 {
        self.spike_precision * self.platform_precision
    }
}

/// Times of spikes: a local maximum followed, within the horizon, by a drop
/// of at least `spike_drop` and a partial re-rise. Spikes closer together
/// than the horizon are merged.
pub fn find_spikes(times: &[f64], v: &[f64], cfg: &SpikePlatformConfig) -> Vec<f64> {
    let mut spikes: Vec<f64> = Vec::new();
    let mut lookback_start = 0usize;
    let mut i = 0usize;
    while i < v.len() {
        let t = times[i];
        while times[lookback_start] < t - cfg.peak_lookback_s {
            lookback_start += 1;
        }
        if spikes.last().is_some_and(|&s| t - s < cfg.spike_horizon_s)
            || !v[lookback_start..i].iter().all(|&x| x <= v[i])
        {
            i += 1;
            continue;
        }
        let mut trough = (i, v[i]);
        let mut found = false;
        let mut j = i + 1;
        while j < v.len() && times[j] <= t + cfg.spike_horizon_s {
            if v[j] < trough.1 {
                trough = (j, v[j]);
            }
            let drop = v[i] - trough.1;
            if drop >= cfg.spike_drop && v[j] - trough.1 >= cfg.rerise_fraction * drop {
                found = true;
                break;
            }
            j += 1;
        }
        if found {
            // the first qualifying point may sit on the rising flank
            let peak = (i..=trough.0)
                .max_by(|&a, &b| v[a].total_cmp(&v[b]).then(b.cmp(&a)))
                .expect("non-empty");
            spikes.push(times[peak]);
            i = trough.0 + 1;
        } else {
            i += 1;
        }
    }
    spikes
}

/// Platforms as `(t_start, t_end)`: maximal runs whose range stays within
/// twice the tolerance, at a mid-range level, lasting between the minimum
/// and maximum duration.
pub fn find_platforms(times: &[f64], v: &[f64], cfg: &SpikePlatformConfig) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut i = 0usize;
    let width = 2.0 * cfg.platform_tolerance;
    while i < v.len() {
        let (mut lo, mut hi) = (v[i], v[i]);
        let mut j = i;
        while j + 1 < v.len() {
            let x = v[j + 1];
            if x.max(hi) - x.min(lo) > width {
                break;
            }
            lo = lo.min(x);
            hi = hi.max(x);
            j += 1;
        }
        let dur = times[j] - times[i];
        let level = (lo + hi) / 2.0;
        if dur > cfg.platform_max_s {
            // a plateau that outlasts the limit is not a platform anywhere
            i = j + 1;
            continue;
        }
        if dur >= cfg.platform_min_s
            && dur <= cfg.platform_max_s
            && level >= cfg.platform_level.0
            && level <= cfg.platform_level.1
        {
            out.push((times[i], times[j]));
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

struct Marks {
    id: CandidateId,
    distinct: usize,
    /// Per episode.
    spikes: Vec<Vec<f64>>,
    platforms: Vec<Vec<(f64, f64)>>,
}

/// Ranks ordered (rpm, clutch) candidate pairs by the number of episodes in
/// which an rpm spike has a clutch platform within the co-occurrence
/// window. Ties prefer the pair whose spikes and platforms coincide most
/// consistently (product of both match shares), then finer resolution
/// (more distinct raw values), then candidate ids.
pub fn spike_platform_search(
    candidates: &[CandidateSeries],
    episodes: &[(f64, f64)],
    cfg: &SpikePlatformConfig,
) -> Vec<SpikePlatformScore> {
    if episodes.is_empty() || candidates.len() < 2 {
        return Vec::new();
    }
    let marks: Vec<Marks> = candidates
        .par_iter()
        .map(|c| {
            let values = c.values();
            let mut spikes = Vec::with_capacity(episodes.len());
            let mut platforms = Vec::with_capacity(episodes.len());
            for &(a, b) in episodes {
                let r = crate::decomposer::index_range(
                    &c.times,
                    a - cfg.episode_margin_s,
                    b + cfg.episode_margin_s,
                );
                let (t, v) = (&c.times[r.clone()], &values[r]);
                spikes.push(find_spikes(t, v, cfg));
                platforms.push(find_platforms(t, v, cfg));
            }
            Marks { id: c.id, distinct: c.distinct_count(), spikes, platforms }
        })
        .collect();

    let pairs: Vec<(usize, usize)> = (0..marks.len())
        .flat_map(|i| (0..marks.len()).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    let mut scores: Vec<(SpikePlatformScore, usize, usize)> = pairs
        .par_iter()
        .filter_map(|&(i, j)| {
            let (rpm, clutch) = (&marks[i], &marks[j]);
            let mut matched = 0;
            let mut spikes_total = 0;
            let mut spikes_matched = 0;
            let mut platforms_total = 0;
            let mut platforms_matched = 0;
            for e in 0..episodes.len() {
                for &(p0, p1) in &clutch.platforms[e] {
                    platforms_total += 1;
                    if rpm.spikes[e]
                        .iter()
                        .any(|&s| p0 <= s + cfg.co_occurrence_s && p1 >= s - cfg.co_occurrence_s)
                    {
                        platforms_matched += 1;
                    }
                }
                let mut hit = false;
                for &s in &rpm.spikes[e] {
                    spikes_total += 1;
                    let near = clutch.platforms[e].iter().any(|&(p0, p1)| {
                        p0 <= s + cfg.co_occurrence_s && p1 >= s - cfg.co_occurrence_s
                    });
                    if near {
                        spikes_matched += 1;
                        hit = true;
                    }
                }
                if hit {
                    matched += 1;
                }
            }
            let score = SpikePlatformScore {
                rpm: rpm.id,
                clutch: clutch.id,
                episode_count: episodes.len(),
                matched_episodes: matched,
                spike_precision: spikes_matched as f64 / spikes_total as f64,
                platform_precision: if platforms_total == 0 {
                    0.0
                } else {
                    platforms_matched as f64 / platforms_total as f64
                },
            };
            (spikes_total > 0).then_some((score, rpm.distinct, clutch.distinct))
        })
        .collect();
    scores.sort_by(|(x, xr, xc), (y, yr, yc)| {
        y.matched_episodes
            .cmp(&x.matched_episodes)
            .then_with(|| y.precision().total_cmp(&x.precision()))
            .then_with(|| (yr, yc).cmp(&(xr, xc)))
            .then_with(|| (x.rpm, x.clutch).cmp(&(y.rpm, y.clutch)))
    });
    scores.into_iter().map(|s| s.0).collect()
}
