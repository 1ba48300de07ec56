//! End-to-end steps shared by the CLI and the tests: candidates from a log,
//! per-candidate window features, training and locating a signal.

use rayon::prelude::*;

use crate::canlog::CanLog;
use crate::config::PipelineConfig;
use crate::decomposer::{candidate_series, drop_counters, normalize, prune, windows, CandidateId, CandidateSeries};
use crate::error::{Error, Result};
use crate::features::{compute, FeatureSpec};
use crate::learner::{locate_in, train_forest, CandidateWindows, MatchReport, SignalModel};

/// Split, prune and normalize every identifier of a log, dropping rolling
/// counters unless the configuration keeps them.
pub fn prepare_candidates(log: &CanLog, cfg: &PipelineConfig) -> Result<Vec<CandidateSeries>> {
    let mut series = prune(candidate_series(log, cfg.split()), cfg.min_variation);
    if cfg.drop_counters {
        series = drop_counters(series);
    }
    series.into_iter().map(normalize).collect()
}

/// Feature vectors of every emitted window, per candidate. Candidates
/// without any emitted window are kept with an empty list.
pub fn window_features(
    series: &[CandidateSeries],
    cfg: &PipelineConfig,
    spec: &FeatureSpec,
) -> Result<Vec<CandidateWindows>> {
    let wcfg = cfg.window();
    wcfg.validate()?;
    series
        .par_iter()
        .map(|s| {
            Ok(CandidateWindows {
                id: s.id,
                features: windows(s, &wcfg)?.iter().map(|w| compute(&w.values, spec)).collect(),
            })
        })
        .collect()
}

/// Trains a one-vs-rest model: windows of the `truths` candidates are
/// positive, windows of every other candidate negative.
pub fn train_signal(
    log: &CanLog,
    truths: &[CandidateId],
    label: &str,
    cfg: &PipelineConfig,
) -> Result<SignalModel> {
    cfg.validate()?;
    let spec = cfg.signal_spec();
    let series = prepare_candidates(log, cfg)?;
    for t in truths {
        if !series.iter().any(|s| s.id == *t) {
            return Err(Error::TruthAbsent(*t));
        }
    }
    let cands = window_features(&series, cfg, &spec)?;
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for c in cands {
        if truths.contains(&c.id) {
            pos.extend(c.features);
        } else {
            neg.extend(c.features);
        }
    }
    let names: Vec<String> = spec.names().iter().map(|s| s.to_string()).collect();
    let forest = train_forest(&pos, &neg, &names, label, &cfg.forest_params(), cfg.seed)?;
    Ok(SignalModel { forest, spec, config_hash: cfg.hash() })
}

/// Votes of a trained model over every candidate of a target log. The log
/// must be processed under the configuration the model was trained with.
pub fn locate_signal(model: &SignalModel, log: &CanLog, cfg: &PipelineConfig) -> Result<MatchReport> {
    model.config_hash.ensure_matches(&cfg.hash())?;
    let series = prepare_candidates(log, cfg)?;
    let cands = window_features(&series, cfg, &model.spec)?;
    locate_in(&model.forest, &cands)
}
