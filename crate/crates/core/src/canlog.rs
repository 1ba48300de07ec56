//! Frame model and line-oriented log formats.
//!
//! A CAN log is UTF-8 text with one frame per line:
//!
//! ```text
//! 1481492683.285052 0208 000 8 00 00 32 00 0e 32 fe 3c
//! ```
//!
//! Fields are the timestamp in seconds with microsecond resolution, the
//! 11-bit identifier as four hex digits, a three character request field
//! (any nonzero digit marks a remote transmission request), the payload
//! length as one hex digit and then that many payload bytes. Input may use
//! `0x` prefixes and uppercase hex; [`CanFrame`]'s `Display` writes the
//! canonical lowercase form.
//!
//! GPS tracks are header-less `timestamp,lat,lon` CSV.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};

pub const MAX_STANDARD_ID: u16 = 0x7FF;

/// Seconds since the Unix epoch held as whole microseconds, so that
/// timestamps survive a text round trip exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub fn from_secs_f64(secs: f64) -> Self {
        Timestamp((secs * 1e6).round() as u64)
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn micros(self) -> u64 {
        self.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}", self.0 / 1_000_000, self.0 % 1_000_000)
    }
}

impl std::str::FromStr for Timestamp {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (whole, frac) = match s.split_once('.') {
            Some((w, f)) => (w, f),
            None => (s, ""),
        };
        if whole.is_empty() || !whole.bytes().all(|b| b.is_ascii_digit()) {
            return Err(format!("bad timestamp {s:?}"));
        }
        if frac.len() > 6 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(format!("bad timestamp {s:?} (at most microsecond precision)"));
        }
        let secs: u64 = whole.parse().map_err(|_| format!("bad timestamp {s:?}"))?;
        let mut micros: u64 = 0;
        for (i, b) in frac.bytes().enumerate() {
            micros += u64::from(b - b'0') * 10u64.pow(5 - i as u32);
        }
        let total = secs
            .checked_mul(1_000_000)
            .and_then(|v| v.checked_add(micros))
            .ok_or_else(|| format!("timestamp {s:?} out of range"))?;
        if total == 0 {
            return Err("timestamp must be positive".into());
        }
        Ok(Timestamp(total))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CanFrame {
    pub timestamp: Timestamp,
    pub can_id: u16,
    pub rtr: bool,
    pub dlc: u8,
    data: [u8; 8],
}

impl CanFrame {
    pub fn new(timestamp: Timestamp, can_id: u16, payload: &[u8]) -> Result<Self> {
        Self::with_rtr(timestamp, can_id, false, payload)
    }

    pub fn with_rtr(timestamp: Timestamp, can_id: u16, rtr: bool, payload: &[u8]) -> Result<Self> {
        if can_id > MAX_STANDARD_ID {
            return Err(Error::invalid(format!(
                "id {can_id:#x} exceeds 11 bits (extended identifiers are not supported)"
            )));
        }
        if payload.len() > 8 {
            return Err(Error::invalid(format!("payload of {} bytes", payload.len())));
        }
        if timestamp.0 == 0 {
            return Err(Error::invalid("timestamp must be positive"));
        }
        let mut data = [0u8; 8];
        data[..payload.len()].copy_from_slice(payload);
        Ok(CanFrame {
            timestamp,
            can_id,
            rtr,
            dlc: payload.len() as u8,
            data,
        })
    }

    pub fn payload(&self) -> &[u8] {
        &self.data[..self.dlc as usize]
    }
}

impl fmt::Display for CanFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:04x} {} {:x}",
            self.timestamp,
            self.can_id,
            if self.rtr { "001" } else { "000" },
            self.dlc
        )?;
        for b in self.payload() {
            write!(f, " {b:02x}")?;
        }
        Ok(())
    }
}

fn parse_hex(token: &str, what: &str) -> std::result::Result<u32, String> {
    let digits = token
        .strip_prefix("0x")
        .or_else(|| token.strip_prefix("0X"))
        .unwrap_or(token);
    if digits.is_empty() || digits.len() > 8 {
        return Err(format!("bad {what} {token:?}"));
    }
    u32::from_str_radix(digits, 16).map_err(|_| format!("bad {what} {token:?}"))
}

/// Parses one log line. Blank lines are the caller's concern.
pub fn parse_frame(line: &str) -> std::result::Result<CanFrame, String> {
    let mut fields = line.split_ascii_whitespace();
    let mut next = |what: &str| fields.next().ok_or_else(|| format!("missing {what}"));

    let timestamp: Timestamp = next("timestamp")?.parse()?;
    let id = parse_hex(next("id")?, "id")?;
    if id > u32::from(MAX_STANDARD_ID) {
        return Err(format!(
            "id {id:#x} exceeds 11 bits (extended identifiers are not supported)"
        ));
    }
    let request = next("request field")?;
    if !request.bytes().all(|b| b.is_ascii_digit()) {
        return Err(format!("bad request field {request:?}"));
    }
    let rtr = request.bytes().any(|b| b != b'0');
    let dlc = parse_hex(next("length")?, "length")?;
    if dlc > 8 {
        return Err(format!("length {dlc} exceeds 8"));
    }

    let mut payload = [0u8; 8];
    let mut count = 0usize;
    for token in fields {
        if count == 8 {
            return Err(format!("more than {dlc} payload bytes"));
        }
        let byte = parse_hex(token, "payload byte")?;
        if byte > 0xFF {
            return Err(format!("bad payload byte {token:?}"));
        }
        payload[count] = byte as u8;
        count += 1;
    }
    if count != dlc as usize {
        return Err(format!("length {dlc} but {count} payload bytes"));
    }

    CanFrame::with_rtr(timestamp, id as u16, rtr, &payload[..count]).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    /// Abort on the first malformed line.
    Strict,
    /// Skip malformed lines and report them.
    #[default]
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    pub line: usize,
    pub reason: String,
}

/// A time-ordered set of frames indexed by identifier. Immutable once built.
#[derive(Debug, Clone, Default)]
pub struct CanLog {
    frames: Vec<CanFrame>,
    index: BTreeMap<u16, Vec<usize>>,
    pub meta: String,
}

impl CanLog {
    /// Builds a log from frames in any order. The sort is stable, so frames
    /// sharing a timestamp keep their input order.
    pub fn from_frames(mut frames: Vec<CanFrame>) -> Self {
        frames.sort_by_key(|f| f.timestamp);
        let mut index: BTreeMap<u16, Vec<usize>> = BTreeMap::new();
        for (i, f) in frames.iter().enumerate() {
            index.entry(f.can_id).or_default().push(i);
        }
        CanLog {
            frames,
            index,
            meta: String::new(),
        }
    }

    pub fn with_meta(mut self, meta: impl Into<String>) -> Self {
        self.meta = meta.into();
        self
    }

    pub fn frames(&self) -> &[CanFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn id_list(&self) -> impl Iterator<Item = u16> + '_ {
        self.index.keys().copied()
    }

    /// Frames bearing `can_id`, in time order.
    pub fn frames_for(&self, can_id: u16) -> impl Iterator<Item = &CanFrame> + '_ {
        self.index
            .get(&can_id)
            .into_iter()
            .flatten()
            .map(move |&i| &self.frames[i])
    }

    pub fn contains_id(&self, can_id: u16) -> bool {
        self.index.contains_key(&can_id)
    }

    /// Time span covered by the log, in seconds.
    pub fn time_range(&self) -> Option<(f64, f64)> {
        Some((
            self.frames.first()?.timestamp.as_secs_f64(),
            self.frames.last()?.timestamp.as_secs_f64(),
        ))
    }

    /// Canonical text form, one line per frame.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.frames.len() * 52);
        for f in &self.frames {
            use std::fmt::Write;
            let _ = writeln!(out, "{f}");
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct ParseOutcome {
    pub log: CanLog,
    pub skipped: Vec<LineError>,
}

/// Parses a whole log. In lenient mode malformed lines are collected in
/// [`ParseOutcome::skipped`]; in strict mode the first one is returned as
/// an error. Blank lines and lines starting with `#` are ignored.
pub fn parse_log(input: &str, mode: ParseMode) -> Result<ParseOutcome> {
    let mut frames = Vec::with_capacity(input.len() / 48);
    let mut skipped = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        match parse_frame(trimmed) {
            Ok(frame) => frames.push(frame),
            Err(reason) => match mode {
                ParseMode::Strict => return Err(Error::Parse { line: i + 1, reason }),
                ParseMode::Lenient => skipped.push(LineError { line: i + 1, reason }),
            },
        }
    }
    Ok(ParseOutcome {
        log: CanLog::from_frames(frames),
        skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct IdSummary {
    pub can_id: u16,
    pub frame_count: usize,
    pub dominant_dlc: u8,
}

/// Most frequent payload length; ties go to the larger length.
pub(crate) fn dominant_dlc<'a>(frames: impl Iterator<Item = &'a CanFrame>) -> Option<u8> {
    let mut counts = [0usize; 9];
    let mut any = false;
    for f in frames {
        counts[f.dlc as usize] += 1;
        any = true;
    }
    if !any {
        return None;
    }
    (0..=8u8).rev().max_by_key(|&d| (counts[d as usize], d))
}

/// One entry per identifier, sorted by identifier.
pub fn ids(log: &CanLog) -> Vec<IdSummary> {
    log.index
        .iter()
        .map(|(&can_id, idx)| IdSummary {
            can_id,
            frame_count: idx.len(),
            dominant_dlc: dominant_dlc(idx.iter().map(|&i| &log.frames[i])).unwrap_or(0),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GpsPoint {
    pub t: f64,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GpsTrack {
    pub points: Vec<GpsPoint>,
}

impl GpsTrack {
    pub fn new(points: Vec<GpsPoint>) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            check_point(p).map_err(|reason| Error::Parse { line: i + 1, reason })?;
            if i > 0 && p.t <= points[i - 1].t {
                return Err(Error::Parse {
                    line: i + 1,
                    reason: "timestamps must be strictly increasing".into(),
                });
            }
        }
        Ok(GpsTrack { points })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for p in &self.points {
            out.push_str(&format!("{:.3},{:.7},{:.7}\n", p.t, p.lat, p.lon));
        }
        out
    }
}

fn check_point(p: &GpsPoint) -> std::result::Result<(), String> {
    if !p.t.is_finite() {
        return Err("non-finite timestamp".into());
    }
    if !(-90.0..=90.0).contains(&p.lat) {
        return Err(format!("latitude {} out of range", p.lat));
    }
    if !(-180.0..=180.0).contains(&p.lon) {
        return Err(format!("longitude {} out of range", p.lon));
    }
    Ok(())
}

pub fn parse_gps(input: &str) -> Result<GpsTrack> {
    let mut points = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |reason: String| Error::Parse { line: i + 1, reason };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(err(format!("expected 3 fields, found {}", fields.len())));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("non-numeric field {s:?}")))
        };
        let p = GpsPoint {
            t: num(fields[0])?,
            lat: num(fields[1])?,
            lon: num(fields[2])?,
        };
        check_point(&p).map_err(err)?;
        if let Some(prev) = points.last() {
            let prev: &GpsPoint = prev;
            if p.t <= prev.t {
                return Err(err("timestamps must be strictly increasing".into()));
            }
        }
        points.push(p);
    }
    Ok(GpsTrack { points })
}
