//! Cutting per-identifier payload streams into candidate signal series.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::canlog::{dominant_dlc, CanLog};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Endian {
    #[default]
    Big,
    Little,
}

/// One byte, or two adjacent bytes decoded as an unsigned integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ByteSpan {
    pub start: u8,
    pub width: u8,
    pub endian: Endian,
}

impl ByteSpan {
    pub fn single(start: u8) -> Self {
        ByteSpan { start, width: 1, endian: Endian::Big }
    }

    pub fn pair(start: u8, endian: Endian) -> Self {
        ByteSpan { start, width: 2, endian }
    }

    pub fn end(&self) -> usize {
        self.start as usize + self.width as usize
    }

    pub fn decode(&self, payload: &[u8]) -> Option<u32> {
        let s = self.start as usize;
        match self.width {
            1 => payload.get(s).map(|&b| u32::from(b)),
            2 => {
                let (a, b) = (*payload.get(s)?, *payload.get(s + 1)?);
                Some(match self.endian {
                    Endian::Big => u32::from(a) << 8 | u32::from(b),
                    Endian::Little => u32::from(b) << 8 | u32::from(a),
                })
            }
            _ => None,
        }
    }
}

/// Identity of a candidate: message id plus byte span. Written as
/// `0410:1-2` (bytes 1 and 2, big-endian), `0410:1-2le` or `0510:3`, with
/// 0-based byte positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CandidateId {
    pub can_id: u16,
    pub span: ByteSpan,
}

impl CandidateId {
    pub fn new(can_id: u16, span: ByteSpan) -> Self {
        CandidateId { can_id, span }
    }
}

impl fmt::Display for CandidateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04x}:{}", self.can_id, self.span.start)?;
        if self.span.width == 2 {
            write!(f, "-{}", self.span.start + 1)?;
            if self.span.endian == Endian::Little {
                f.write_str("le")?;
            }
        }
        Ok(())
    }
}

impl FromStr for CandidateId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("bad candidate {s:?}, expected e.g. 0410:1-2 or 0510:3"));
        let (id, span) = s.split_once(':').ok_or_else(bad)?;
        let id = id.strip_prefix("0x").unwrap_or(id);
        let can_id = u16::from_str_radix(id, 16).map_err(|_| bad())?;
        if can_id > crate::canlog::MAX_STANDARD_ID {
            return Err(bad());
        }
        let (span, endian) = match span.strip_suffix("le") {
            Some(rest) => (rest, Endian::Little),
            None => (span, Endian::Big),
        };
        let span = match span.split_once('-') {
            Some((a, b)) => {
                let a: u8 = a.parse().map_err(|_| bad())?;
                let b: u8 = b.parse().map_err(|_| bad())?;
                if b != a + 1 || a > 6 {
                    return Err(bad());
                }
                ByteSpan::pair(a, endian)
            }
            None if endian == Endian::Big => {
                let a: u8 = span.parse().map_err(|_| bad())?;
                if a > 7 {
                    return Err(bad());
                }
                ByteSpan::single(a)
            }
            None => return Err(bad()),
        };
        Ok(CandidateId { can_id, span })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BitDistribution {
    pub can_id: u16,
    pub dlc: u8,
    pub frame_count: usize,
    /// Frames of this id whose length differs from the dominant one.
    pub dropped: usize,
    /// `probs[i]` is the fraction of frames with bit `i` set; bit 0 is the
    /// most significant bit of byte 0.
    pub probs: Vec<f64>,
}

pub fn bit_distribution(log: &CanLog, can_id: u16) -> Result<BitDistribution> {
    if !log.contains_id(can_id) {
        return Err(Error::UnknownId(can_id));
    }
    let data_frames = || log.frames_for(can_id).filter(|f| !f.rtr);
    let dlc = dominant_dlc(data_frames()).ok_or(Error::UnknownId(can_id))?;
    let nbits = dlc as usize * 8;
    let mut ones = vec![0usize; nbits];
    let mut used = 0usize;
    let mut dropped = 0usize;
    for f in data_frames() {
        if f.dlc != dlc {
            dropped += 1;
            continue;
        }
        used += 1;
        for (byte_idx, &b) in f.payload().iter().enumerate() {
            for bit in 0..8 {
                if b & (0x80 >> bit) != 0 {
                    ones[byte_idx * 8 + bit] += 1;
                }
            }
        }
    }
    Ok(BitDistribution {
        can_id,
        dlc,
        frame_count: used,
        dropped,
        probs: ones.iter().map(|&c| c as f64 / used as f64).collect(),
    })
}

/// A time series cut from one byte span of one identifier.
///
/// `normalized` is empty and `norm_max` zero until [`normalize`] runs.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSeries {
    pub id: CandidateId,
    pub times: Vec<f64>,
    pub raw: Vec<u32>,
    pub norm_max: u32,
    pub normalized: Vec<f64>,
}

impl CandidateSeries {
    pub fn from_raw(id: CandidateId, times: Vec<f64>, raw: Vec<u32>) -> Self {
        assert_eq!(times.len(), raw.len());
        CandidateSeries {
            id,
            times,
            raw,
            norm_max: 0,
            normalized: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.norm_max > 0
    }

    pub fn distinct_count(&self) -> usize {
        distinct(&self.raw)
    }

    /// Normalized values, or raw values as floats when not yet normalized.
    pub fn values(&self) -> Vec<f64> {
        if self.is_normalized() {
            self.normalized.clone()
        } else {
            self.raw.iter().map(|&v| f64::from(v)).collect()
        }
    }

    pub fn time_range(&self) -> Option<(f64, f64)> {
        Some((*self.times.first()?, *self.times.last()?))
    }
}

fn distinct(values: &[u32]) -> usize {
    values.iter().collect::<HashSet<_>>().len()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SplitOptions {
    /// Also emit little-endian byte pairs.
    pub little_endian: bool,
}

/// Spans emitted for a payload of `dlc` bytes: each byte, then each adjacent
/// pair big-endian, then optionally each pair little-endian.
pub fn spans_for(dlc: u8, opts: SplitOptions) -> Vec<ByteSpan> {
    let mut spans: Vec<ByteSpan> = (0..dlc).map(ByteSpan::single).collect();
    if dlc >= 2 {
        spans.extend((0..dlc - 1).map(|s| ByteSpan::pair(s, Endian::Big)));
        if opts.little_endian {
            spans.extend((0..dlc - 1).map(|s| ByteSpan::pair(s, Endian::Little)));
        }
    }
    spans
}

/// Every byte and adjacent byte pair of every identifier's dominant-length
/// frames. RTR frames and frames that do not advance the id's clock are
/// skipped.
pub fn candidate_series(log: &CanLog, opts: SplitOptions) -> Vec<CandidateSeries> {
    let mut out = Vec::new();
    for can_id in log.id_list() {
        let data_frames = || log.frames_for(can_id).filter(|f| !f.rtr);
        let Some(dlc) = dominant_dlc(data_frames()) else {
            continue;
        };
        let mut frames = Vec::new();
        let mut last = None;
        for f in data_frames().filter(|f| f.dlc == dlc) {
            if last.is_some_and(|t| f.timestamp <= t) {
                continue;
            }
            last = Some(f.timestamp);
            frames.push(f);
        }
        if frames.is_empty() {
            continue;
        }
        let times: Vec<f64> = frames.iter().map(|f| f.timestamp.as_secs_f64()).collect();
        for span in spans_for(dlc, opts) {
            let raw = frames
                .iter()
                .map(|f| span.decode(f.payload()).expect("span within dlc"))
                .collect();
            out.push(CandidateSeries::from_raw(
                CandidateId::new(can_id, span),
                times.clone(),
                raw,
            ));
        }
    }
    out
}

/// Drops series with fewer than `min_variation` distinct raw values, and
/// constant series whatever the threshold.
pub fn prune(series: Vec<CandidateSeries>, min_variation: usize) -> Vec<CandidateSeries> {
    series
        .into_iter()
        .filter(|s| {
            let d = s.distinct_count();
            d >= 2 && d >= min_variation
        })
        .collect()
}

/// Share of consecutive steps that must repeat one increment for a series
/// to count as a rolling counter.
pub const COUNTER_STEP_SHARE: f64 = 0.9;

/// Whether a series is a rolling counter: almost every step adds the same
/// nonzero increment, modulo the range of its span.
pub fn is_counter(series: &CandidateSeries) -> bool {
    if series.raw.len() < 3 {
        return false;
    }
    let modulus = 1u64 << (8 * u32::from(series.id.span.width));
    let mut steps: HashMap<u64, usize> = HashMap::new();
    for w in series.raw.windows(2) {
        let d = (u64::from(w[1]) + modulus - u64::from(w[0])) % modulus;
        *steps.entry(d).or_default() += 1;
    }
    let (step, count) = steps
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .expect("at least one step");
    step != 0 && count as f64 >= COUNTER_STEP_SHARE * (series.raw.len() - 1) as f64
}

/// Drops rolling counters.
pub fn drop_counters(series: Vec<CandidateSeries>) -> Vec<CandidateSeries> {
    series.into_iter().filter(|s| !is_counter(s)).collect()
}

/// Scales a series into [0, 1] by dividing by its maximum raw value.
pub fn normalize(mut series: CandidateSeries) -> Result<CandidateSeries> {
    let max = series.raw.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return Err(Error::AllZero(series.id));
    }
    let m = f64::from(max);
    series.normalized = series.raw.iter().map(|&v| f64::from(v) / m).collect();
    series.norm_max = max;
    Ok(series)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub length_s: f64,
    pub overlap: f64,
    /// Windows with fewer distinct raw values than this are not emitted.
    pub min_variation: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            length_s: 2.5,
            overlap: 0.25,
            min_variation: 7,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.length_s > 0.0 && self.length_s.is_finite()) {
            return Err(Error::invalid(format!("window length {} must be positive", self.length_s)));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::invalid(format!("overlap {} must lie in [0, 1)", self.overlap)));
        }
        Ok(())
    }

    pub fn stride(&self) -> f64 {
        self.length_s * (1.0 - self.overlap)
    }

    /// Start offsets (relative to the series start) of all windows that fit
    /// inside a series spanning `span_s` seconds.
    pub fn window_count(&self, span_s: f64) -> usize {
        if span_s + 1e-9 < self.length_s {
            return 0;
        }
        ((span_s - self.length_s) / self.stride() + 1e-9).floor() as usize + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub source: CandidateId,
    pub t_start: f64,
    pub t_end: f64,
    pub values: Vec<f64>,
    pub distinct_count: usize,
}

/// Half-open index range of samples with `t_start <= t < t_end`.
pub(crate) fn index_range(times: &[f64], t_start: f64, t_end: f64) -> std::ops::Range<usize> {
    let a = times.partition_point(|&t| t < t_start);
    let b = times.partition_point(|&t| t < t_end);
    a..b.max(a)
}

/// Cuts the window `[t_start, t_end)` out of a series if it passes the
/// emission predicate (at least two samples, enough distinct raw values).
pub fn window_at(
    series: &CandidateSeries,
    t_start: f64,
    t_end: f64,
    min_variation: usize,
) -> Option<WindowSample> {
    let r = index_range(&series.times, t_start, t_end);
    if r.len() < 2 {
        return None;
    }
    let distinct_count = distinct(&series.raw[r.clone()]);
    if distinct_count < min_variation {
        return None;
    }
    let values = if series.is_normalized() {
        series.normalized[r].to_vec()
    } else {
        series.raw[r].iter().map(|&v| f64::from(v)).collect()
    };
    Some(WindowSample {
        source: series.id,
        t_start,
        t_end,
        values,
        distinct_count,
    })
}

/// Sliding windows over a series, starting at its first sample.
pub fn windows(series: &CandidateSeries, cfg: &WindowConfig) -> Result<Vec<WindowSample>> {
    cfg.validate()?;
    let Some((t0, t1)) = series.time_range() else {
        return Ok(Vec::new());
    };
    let stride = cfg.stride();
    Ok((0..cfg.window_count(t1 - t0))
        .filter_map(|k| {
            let start = t0 + k as f64 * stride;
            window_at(series, start, start + cfg.length_s, cfg.min_variation)
        })
        .collect())
}
