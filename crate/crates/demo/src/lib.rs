//! Browser bindings. Every operation takes log text and returns JSON; a
//! failure comes back as `{"error": "..."}`.

use canlift::canlog::{parse_gps, parse_log, CanLog, ParseMode};
use canlift::config::PipelineConfig;
use canlift::decomposer::{bit_distribution, candidate_series, normalize, windows, CandidateId, SplitOptions};
use canlift::features::{compute, FeatureSpec};
use canlift::pipeline::prepare_candidates;
use canlift::tsmatch::{gps_to_velocity, rank_by_dtw, remove_velocity_outliers};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn respond(r: Result<Value, String>) -> String {
    match r {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e }).to_string(),
    }
}

fn load(log_text: &str) -> Result<(CanLog, usize), String> {
    let parsed = parse_log(log_text, ParseMode::Lenient).map_err(|e| e.to_string())?;
    if parsed.log.is_empty() {
        return Err("the log has no frames".into());
    }
    Ok((parsed.log, parsed.skipped.len()))
}

/// Bit-set probabilities of every identifier.
pub fn bits(log_text: &str) -> Result<Value, String> {
    let (log, skipped) = load(log_text)?;
    let mut ids = Vec::new();
    for can_id in log.id_list() {
        let d = bit_distribution(&log, can_id).map_err(|e| e.to_string())?;
        ids.push(json!({
            "can_id": format!("{can_id:04x}"),
            "dlc": d.dlc,
            "frames": d.frame_count,
            "probs": d.probs,
        }));
    }
    Ok(json!({ "skipped": skipped, "ids": ids }))
}

/// Candidates ranked by DTW distance to the GPS velocity.
pub fn velocity_search(log_text: &str, gps_csv: &str, max_jump: f64, min_variation: usize, top: usize) -> Result<Value, String> {
    let (log, skipped) = load(log_text)?;
    let gps = parse_gps(gps_csv).map_err(|e| e.to_string())?;
    let cfg = PipelineConfig { max_jump, min_variation, ..Default::default() };
    cfg.validate().map_err(|e| e.to_string())?;
    let raw = gps_to_velocity(&gps).map_err(|e| e.to_string())?;
    let reference = remove_velocity_outliers(&raw, cfg.max_jump);
    let cands = prepare_candidates(&log, &cfg).map_err(|e| e.to_string())?;
    let ranking = rank_by_dtw(&reference, &cands, None).map_err(|e| e.to_string())?;
    let rows: Vec<Value> = ranking
        .iter()
        .take(top)
        .map(|r| json!({ "candidate": r.candidate.to_string(), "distance": r.distance }))
        .collect();
    Ok(json!({
        "skipped": skipped,
        "gps_points": raw.len(),
        "outliers_removed": raw.len() - reference.len(),
        "candidates": cands.len(),
        "ranking": rows,
    }))
}

/// Feature vectors of the windows of one candidate.
pub fn window_features(
    log_text: &str,
    candidate: &str,
    spec: &str,
    window_s: f64,
    overlap: f64,
    min_variation: usize,
) -> Result<Value, String> {
    let (log, _) = load(log_text)?;
    let id: CandidateId = candidate.trim().parse().map_err(|e: canlift::Error| e.to_string())?;
    let spec = FeatureSpec::by_name(spec).map_err(|e| e.to_string())?;
    let cfg = PipelineConfig { window_s, overlap, min_variation, ..Default::default() };
    cfg.validate().map_err(|e| e.to_string())?;
    let opts = SplitOptions { little_endian: id.span.endian == canlift::decomposer::Endian::Little };
    let series = candidate_series(&log, opts)
        .into_iter()
        .find(|s| s.id == id)
        .ok_or_else(|| format!("{id} is not a candidate of this log"))?;
    let series = normalize(series).map_err(|e| e.to_string())?;
    let rows: Vec<Value> = windows(&series, &cfg.window())
        .map_err(|e| e.to_string())?
        .iter()
        .map(|w| json!({ "t_start": w.t_start, "t_end": w.t_end, "values": compute(&w.values, &spec) }))
        .collect();
    Ok(json!({ "candidate": id.to_string(), "columns": spec.names(), "windows": rows }))
}

#[wasm_bindgen(js_name = bitDistribution)]
pub fn bit_distribution_json(log_text: &str) -> String {
    respond(bits(log_text))
}

#[wasm_bindgen(js_name = velocitySearch)]
pub fn velocity_search_json(log_text: &str, gps_csv: &str, max_jump: f64, min_variation: usize, top: usize) -> String {
    respond(velocity_search(log_text, gps_csv, max_jump, min_variation, top))
}

#[wasm_bindgen(js_name = windowFeatures)]
pub fn window_features_json(
    log_text: &str,
    candidate: &str,
    spec: &str,
    window_s: f64,
    overlap: f64,
    min_variation: usize,
) -> String {
    respond(window_features(log_text, candidate, spec, window_s, overlap, min_variation))
}
