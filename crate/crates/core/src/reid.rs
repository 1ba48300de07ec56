//! Driver re-identification from time-aligned windows of several extracted
//! signals.

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decomposer::{window_at, CandidateSeries, WindowConfig};
use crate::error::{Error, Result};
use crate::features::{compute, FeatureSpec};
use crate::learner::{train_forest, ForestParams};

/// Default signal order of a fingerprint.
pub const REID_SIGNALS: [&str; 4] = ["accelerator", "brake", "velocity", "rpm"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReidConfig {
    pub window_s: f64,
    pub overlap: f64,
    /// Per-window distinct-value threshold. Pedals rest at zero for long
    /// stretches, so the default only asks for two samples.
    pub min_variation: usize,
    pub max_bins: usize,
    pub folds: usize,
    pub min_samples: usize,
    pub forest: ForestParams,
}

impl Default for ReidConfig {
    fn default() -> Self {
        ReidConfig {
            window_s: 2.5,
            overlap: 0.25,
            min_variation: 1,
            max_bins: FeatureSpec::DEFAULT_BINS,
            folds: 10,
            min_samples: 50,
            forest: ForestParams::default(),
        }
    }
}

impl ReidConfig {
    fn window(&self) -> WindowConfig {
        WindowConfig { length_s: self.window_s, overlap: self.overlap, min_variation: self.min_variation }
    }

    fn spec(&self) -> FeatureSpec {
        let mut s = FeatureSpec::reid11();
        s.max_bins = self.max_bins;
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriverSample {
    pub driver: String,
    pub t_start: f64,
    pub t_end: f64,
    /// Re-id features of each signal in turn.
    pub values: Vec<f64>,
}

/// Fingerprints of one drive: windows on a grid shared by all signals,
/// kept only where every signal yields a window.
pub fn build_driver_samples(
    signals: &[CandidateSeries],
    driver: &str,
    cfg: &ReidConfig,
) -> Result<Vec<DriverSample>> {
    let wcfg = cfg.window();
    wcfg.validate()?;
    if signals.is_empty() || signals.iter().any(|s| s.is_empty()) {
        return Err(Error::Empty("re-identification needs every signal"));
    }
    let t0 = signals.iter().filter_map(|s| s.time_range()).map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
    let t1 = signals.iter().filter_map(|s| s.time_range()).map(|r| r.1).fold(f64::INFINITY, f64::min);
    if t1 <= t0 {
        return Ok(Vec::new());
    }
    let spec = cfg.spec();
    let stride = wcfg.stride();
    Ok((0..wcfg.window_count(t1 - t0))
        .into_par_iter()
        .filter_map(|k| {
            let a = t0 + k as f64 * stride;
            let b = a + wcfg.length_s;
            let mut values = Vec::with_capacity(signals.len() * spec.len());
            for s in signals {
                let w = window_at(s, a, b, wcfg.min_variation)?;
                values.extend(compute(&w.values, &spec));
            }
            Some(DriverSample { driver: driver.to_string(), t_start: a, t_end: b, values })
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReidResult {
    pub driver_a: String,
    pub driver_b: String,
    pub fold_precision: Vec<f64>,
    pub mean_precision: f64,
}

/// Shuffled, per-class fold assignment: every sample lands in exactly one
/// test fold and both drivers are spread evenly over the folds.
pub fn fold_assignment(n: usize, folds: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % folds;
    }
    fold
}

/// Precision of each driver's predictions, averaged over the drivers that
/// received at least one prediction.
fn macro_precision(truth_a: &[bool], pred_a: &[bool]) -> f64 {
    let mut sum = 0.0;
    let mut roles = 0;
    for role in [true, false] {
        let predicted = pred_a.iter().filter(|&&p| p == role).count();
        if predicted > 0 {
            let correct = truth_a.iter().zip(pred_a).filter(|(t, p)| **p == role && **t == role).count();
            sum += correct as f64 / predicted as f64;
            roles += 1;
        }
    }
    sum / roles as f64
}

/// k-fold cross-validated binary classifier separating two drivers.
pub fn pairwise_reid(
    a: &[DriverSample],
    b: &[DriverSample],
    cfg: &ReidConfig,
    seed: u64,
) -> Result<ReidResult> {
    if cfg.folds < 2 {
        return Err(Error::invalid("cross-validation needs at least two folds"));
    }
    let need = cfg.min_samples.max(cfg.folds);
    if a.len() < need || b.len() < need {
        return Err(Error::InsufficientSamples(format!(
            "each driver needs at least {need} samples ({} and {})",
            a.len(),
            b.len()
        )));
    }
    let d = a[0].values.len();
    if a.iter().chain(b).any(|s| s.values.len() != d) {
        return Err(Error::invalid("drivers have fingerprints of different lengths"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fold_a = fold_assignment(a.len(), cfg.folds, &mut rng);
    let fold_b = fold_assignment(b.len(), cfg.folds, &mut rng);
    let names: Vec<String> = (0..d).map(|i| format!("f{i}")).collect();

    let fold_precision: Vec<f64> = (0..cfg.folds)
        .into_par_iter()
        .map(|f| {
            let split = |xs: &[DriverSample], folds: &[usize]| {
                let (mut train, mut test) = (Vec::new(), Vec::new());
                for (x, &k) in xs.iter().zip(folds) {
                    if k == f { &mut test } else { &mut train }.push(x.values.clone());
                }
                (train, test)
            };
            let (train_a, test_a) = split(a, &fold_a);
            let (train_b, test_b) = split(b, &fold_b);
            let fold_seed = seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(f as u64 + 1));
            let forest = train_forest(&train_a, &train_b, &names, "driver", &cfg.forest, fold_seed)?;
            let truth: Vec<bool> = test_a.iter().map(|_| true).chain(test_b.iter().map(|_| false)).collect();
            let pred: Vec<bool> = test_a.iter().chain(&test_b).map(|x| forest.predict(x)).collect();
            Ok(macro_precision(&truth, &pred))
        })
        .collect::<Result<_>>()?;
    let mean_precision = fold_precision.iter().sum::<f64>() / fold_precision.len() as f64;
    Ok(ReidResult {
        driver_a: a[0].driver.clone(),
        driver_b: b[0].driver.clone(),
        fold_precision,
        mean_precision,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CohortReport {
    pub drivers: Vec<String>,
    pub pairs: Vec<ReidResult>,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// Picks `k` drivers at random and cross-validates every pair of them.
pub fn cohort_reid(
    drivers: &[Vec<DriverSample>],
    k: usize,
    cfg: &ReidConfig,
    seed: u64,
) -> Result<CohortReport> {
    if k < 2 {
        return Err(Error::invalid("a cohort needs at least two drivers"));
    }
    if drivers.len() < k {
        return Err(Error::InsufficientSamples(format!("{} drivers available, {k} requested", drivers.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = index::sample(&mut rng, drivers.len(), k).into_vec();
    chosen.sort_unstable();
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect();
    let results: Vec<ReidResult> = pairs
        .par_iter()
        .enumerate()
        .map(|(p, &(i, j))| {
            let pair_seed = seed ^ (p as u64 + 1).wrapping_mul(0xd1b5_4a32_d192_ed03);
            pairwise_reid(&drivers[chosen[i]], &drivers[chosen[j]], cfg, pair_seed)
        })
        .collect::<Result<_>>()?;
    let ps: Vec<f64> = results.iter().map(|r| r.mean_precision).collect();
    Ok(CohortReport {
        drivers: chosen
            .iter()
            .map(|&i| drivers[i].first().map_or_else(|| format!("#{i}"), |s| s.driver.clone()))
            .collect(),
        mean: ps.iter().sum::<f64>() / ps.len() as f64,
        min: ps.iter().cloned().fold(f64::INFINITY, f64::min),
        max: ps.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        pairs: results,
    })
}
