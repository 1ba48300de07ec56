//! Statistical features computed over one window of normalized samples.
//!
//! Conventions: mean comparisons are strict, moments are population
//! (biased) moments, kurtosis is excess kurtosis, and change features divide
//! by the number of differences. Constant windows yield 0 for entropy,
//! skewness and kurtosis so that every value stays finite.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::decomposer::{CandidateId, WindowSample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    CountAboveMean,
    CountBelowMean,
    LongestStrikeAboveMean,
    LongestStrikeBelowMean,
    BinnedEntropy,
    MeanAbsChange,
    MeanChange,
    Minimum,
    Maximum,
    Mean,
    Median,
    StandardDeviation,
    Variance,
    Kurtosis,
    Skewness,
    /// Complexity estimate; not part of the default registry.
    CidCe,
}

impl Feature {
    /// The default registry in canonical order.
    pub const REGISTRY: [Feature; 15] = [
        Feature::CountAboveMean,
        Feature::CountBelowMean,
        Feature::LongestStrikeAboveMean,
        Feature::LongestStrikeBelowMean,
        Feature::BinnedEntropy,
        Feature::MeanAbsChange,
        Feature::MeanChange,
        Feature::Minimum,
        Feature::Maximum,
        Feature::Mean,
        Feature::Median,
        Feature::StandardDeviation,
        Feature::Variance,
        Feature::Kurtosis,
        Feature::Skewness,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::CountAboveMean => "count_above_mean",
            Feature::CountBelowMean => "count_below_mean",
            Feature::LongestStrikeAboveMean => "longest_strike_above_mean",
            Feature::LongestStrikeBelowMean => "longest_strike_below_mean",
            Feature::BinnedEntropy => "binned_entropy",
            Feature::MeanAbsChange => "mean_abs_change",
            Feature::MeanChange => "mean_change",
            Feature::Minimum => "minimum",
            Feature::Maximum => "maximum",
            Feature::Mean => "mean",
            Feature::Median => "median",
            Feature::StandardDeviation => "standard_deviation",
            Feature::Variance => "variance",
            Feature::Kurtosis => "kurtosis",
            Feature::Skewness => "skewness",
            Feature::CidCe => "cid_ce",
        }
    }

    fn rank(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Feature::REGISTRY
            .iter()
            .chain(std::iter::once(&Feature::CidCe))
            .copied()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown feature {s:?}")))
    }
}

/// An ordered selection of features plus the entropy bin count.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureSpec {
    features: Vec<Feature>,
    pub max_bins: usize,
}

impl FeatureSpec {
    pub const DEFAULT_BINS: usize = 10;

    /// Builds a spec from any subset; order is normalized to the canonical
    /// registry order and duplicates are removed.
    pub fn new(mut features: Vec<Feature>, max_bins: usize) -> Result<Self> {
        if max_bins == 0 {
            return Err(Error::invalid("max_bins must be at least 1"));
        }
        features.sort_by_key(|f| f.rank());
        features.dedup();
        if features.is_empty() {
            return Err(Error::invalid("feature spec is empty"));
        }
        Ok(FeatureSpec { features, max_bins })
    }

    /// All 15 registry features.
    pub fn full15() -> Self {
        FeatureSpec {
            features: Feature::REGISTRY.to_vec(),
            max_bins: Self::DEFAULT_BINS,
        }
    }

    /// The 11 features used for driver fingerprints.
    pub fn reid11() -> Self {
        use Feature::*;
        FeatureSpec::new(
            vec![
                CountAboveMean,
                CountBelowMean,
                LongestStrikeAboveMean,
                LongestStrikeBelowMean,
                Maximum,
                Mean,
                MeanAbsChange,
                Median,
                Minimum,
                StandardDeviation,
                Variance,
            ],
            Self::DEFAULT_BINS,
        )
        .expect("static spec")
    }

    /// `full15` plus `cid_ce`.
    pub fn full15_with_cid_ce() -> Self {
        let mut f = Feature::REGISTRY.to_vec();
        f.push(Feature::CidCe);
        FeatureSpec::new(f, Self::DEFAULT_BINS).expect("static spec")
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "full15" => Ok(Self::full15()),
            "reid11" => Ok(Self::reid11()),
            "full15+cid_ce" => Ok(Self::full15_with_cid_ce()),
            _ => Err(Error::invalid(format!(
                "unknown feature spec {name:?} (expected full15, reid11 or full15+cid_ce)"
            ))),
        }
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.features.iter().map(|f| f.name()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureVector {
    pub source: CandidateId,
    pub t_start: f64,
    pub t_end: f64,
    pub values: Vec<f64>,
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|&v| v == x[0])
}

pub fn count_above_mean(x: &[f64]) -> usize {
    let m = mean(x);
    x.iter().filter(|&&v| v > m).count()
}

pub fn count_below_mean(x: &[f64]) -> usize {
    let m = mean(x);
    x.iter().filter(|&&v| v < m).count()
}

fn longest_run(x: &[f64], pred: impl Fn(f64) -> bool) -> usize {
    let mut best = 0;
    let mut run = 0;
    for &v in x {
        if pred(v) {
            run += 1;
            best = best.max(run);
        } else {
            run = 0;
        }
    }
    best
}

pub fn longest_strike_above_mean(x: &[f64]) -> usize {
    let m = mean(x);
    longest_run(x, |v| v > m)
}

pub fn longest_strike_below_mean(x: &[f64]) -> usize {
    let m = mean(x);
    longest_run(x, |v| v < m)
}

/// Shannon entropy (natural log) of the histogram of `x` over `max_bins`
/// equal-width bins spanning the window's own range. The maximum falls in
/// the last bin.
pub fn binned_entropy(x: &[f64], max_bins: usize) -> f64 {
    let (lo, hi) = min_max(x);
    if lo == hi || max_bins == 1 {
        return 0.0;
    }
    let bins = max_bins as f64;
    let width = (hi - lo) / bins;
    let scale = bins / (hi - lo);
    let edge = |k: usize| lo + k as f64 * width;
    let mut counts = vec![0usize; max_bins];
    for &v in x {
        let mut k = (((v - lo) * scale) as usize).min(max_bins - 1);
        // keep the index consistent with the computed edges
        if k > 0 && v < edge(k) {
            k -= 1;
        } else if k + 1 < max_bins && v >= edge(k + 1) {
            k += 1;
        }
        counts[k] += 1;
    }
    let n = x.len() as f64;
    -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>()
}

/// Mean absolute difference between consecutive samples; 0 for a single
/// sample.
pub fn mean_abs_change(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    x.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (x.len() - 1) as f64
}

/// Mean difference between consecutive samples, i.e. `(last - first) /
/// (n - 1)`; 0 for a single sample.
pub fn mean_change(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    (x[x.len() - 1] - x[0]) / (x.len() - 1) as f64
}

fn min_max(x: &[f64]) -> (f64, f64) {
    x.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

pub fn median(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    median_of_sorted(sort(&mut s))
}

fn sort(s: &mut [f64]) -> &[f64] {
    s.sort_unstable_by(f64::total_cmp);
    s
}

fn median_of_sorted(s: &[f64]) -> f64 {
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Second, third and fourth central moments.
fn central_moments(x: &[f64], m: f64) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in x {
        let d = v - m;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    (m2 / n, m3 / n, m4 / n)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    pub variance: f64,
    pub kurtosis: f64,
    pub skewness: f64,
}

pub fn moments_and_order_stats(x: &[f64]) -> Moments {
    let (min, max) = min_max(x);
    let mean = mean(x);
    let median = median(x);
    if is_constant(x) {
        return Moments {
            min,
            max,
            mean,
            median,
            std: 0.0,
            variance: 0.0,
            kurtosis: 0.0,
            skewness: 0.0,
        };
    }
    let (m2, m3, m4) = central_moments(x, mean);
    Moments {
        min,
        max,
        mean,
        median,
        std: m2.sqrt(),
        variance: m2,
        kurtosis: m4 / (m2 * m2) - 3.0,
        skewness: m3 / m2.powf(1.5),
    }
}

/// `sqrt(sum((x[i+1] - x[i])^2))`, without normalization.
pub fn cid_ce(x: &[f64]) -> f64 {
    x.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>().sqrt()
}

/// Evaluates `spec` on raw sample values. Shared intermediate results are
/// computed once.
pub fn compute(x: &[f64], spec: &FeatureSpec) -> Vec<f64> {
    assert!(!x.is_empty(), "features need at least one sample");
    let m = mean(x);
    let constant = is_constant(x);
    let needs = |f: Feature| spec.features.contains(&f);
    let moments = if needs(Feature::Variance)
        || needs(Feature::StandardDeviation)
        || needs(Feature::Kurtosis)
        || needs(Feature::Skewness)
    {
        if constant {
            Some((0.0, 0.0, 0.0))
        } else {
            Some(central_moments(x, m))
        }
    } else {
        None
    };
    let sorted = needs(Feature::Median).then(|| {
        let mut s = x.to_vec();
        s.sort_unstable_by(f64::total_cmp);
        s
    });
    let (lo, hi) = min_max(x);

    spec.features
        .iter()
        .map(|&f| match f {
            Feature::CountAboveMean => x.iter().filter(|&&v| v > m).count() as f64,
            Feature::CountBelowMean => x.iter().filter(|&&v| v < m).count() as f64,
            Feature::LongestStrikeAboveMean => longest_run(x, |v| v > m) as f64,
            Feature::LongestStrikeBelowMean => longest_run(x, |v| v < m) as f64,
            Feature::BinnedEntropy => binned_entropy(x, spec.max_bins),
            Feature::MeanAbsChange => mean_abs_change(x),
            Feature::MeanChange => mean_change(x),
            Feature::Minimum => lo,
            Feature::Maximum => hi,
            Feature::Mean => m,
            Feature::Median => median_of_sorted(sorted.as_deref().expect("sorted")),
            Feature::StandardDeviation => moments.expect("moments").0.sqrt(),
            Feature::Variance => moments.expect("moments").0,
            Feature::Kurtosis => {
                let (m2, _, m4) = moments.expect("moments");
                if constant { 0.0 } else { m4 / (m2 * m2) - 3.0 }
            }
            Feature::Skewness => {
                let (m2, m3, _) = moments.expect("moments");
                if constant { 0.0 } else { m3 / m2.powf(1.5) }
            }
            Feature::CidCe => cid_ce(x),
        })
        .collect()
}

pub fn extract(window: &WindowSample, spec: &FeatureSpec) -> FeatureVector {
    FeatureVector {
        source: window.source,
        t_start: window.t_start,
        t_end: window.t_end,
        values: compute(&window.values, spec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn mean_counts() {
        assert_eq!((count_above_mean(&[1.0, 2.0, 3.0]), count_below_mean(&[1.0, 2.0, 3.0])), (1, 1));
        assert_eq!((count_above_mean(&[0.3; 5]), count_below_mean(&[0.3; 5])), (0, 0));
        assert_eq!((count_above_mean(&[0.0, 0.0, 4.0]), count_below_mean(&[0.0, 0.0, 4.0])), (1, 2));
    }

    #[test]
    fn strikes() {
        assert_eq!(longest_strike_below_mean(&[1.0, 1.0, 5.0]), 2);
        assert_eq!(longest_strike_above_mean(&[1.0, 1.0, 5.0]), 1);
        assert_eq!(longest_strike_above_mean(&[0.7; 4]), 0);
        assert_eq!(longest_strike_below_mean(&[0.7; 4]), 0);
        assert_eq!(longest_strike_above_mean(&[0.0, 3.0, 3.0, 3.0, 0.0]), 3);
    }

    #[test]
    fn entropy() {
        assert_eq!(binned_entropy(&[0.4; 9], 10), 0.0);
        let uniform: Vec<f64> = (0..10).map(|k| f64::from(k) / 9.0).collect();
        assert!(close(binned_entropy(&uniform, 10), 10f64.ln()));
        assert!(close(binned_entropy(&[0.0, 0.0, 1.0, 1.0], 2), 2f64.ln()));
        assert_eq!(binned_entropy(&[0.0, 1.0], 1), 0.0);
    }

    #[test]
    fn changes() {
        let x = [0.0, 2.0, 1.0];
        assert_eq!(mean_abs_change(&x), 1.5);
        assert_eq!(mean_change(&x), 0.5);
        let steps: Vec<f64> = (0..20).map(|i| 0.25 * f64::from(i)).collect();
        assert_eq!(mean_abs_change(&steps), 0.25);
        assert_eq!(mean_abs_change(&[0.5]), 0.0);
        assert_eq!(mean_change(&[0.5]), 0.0);
    }

    #[test]
    fn moments_by_hand() {
        let m = moments_and_order_stats(&[0.0, 0.5, 1.0]);
        assert_eq!((m.min, m.max, m.mean, m.median), (0.0, 1.0, 0.5, 0.5));
        assert!(close(m.variance, 1.0 / 6.0));
        assert_eq!(m.skewness, 0.0);
        let c = moments_and_order_stats(&[0.3; 4]);
        assert_eq!(
            (c.min, c.max, c.mean, c.median, c.std, c.variance, c.kurtosis, c.skewness),
            (0.3, 0.3, 0.3, 0.3, 0.0, 0.0, 0.0, 0.0)
        );
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        let sym = moments_and_order_stats(&[0.1, 0.2, 0.4, 0.6, 0.7]);
        assert!(sym.skewness.abs() < 1e-12);
    }

    #[test]
    fn spec_lengths_and_order() {
        assert_eq!(FeatureSpec::full15().len(), 15);
        let reid = FeatureSpec::reid11();
        assert_eq!(reid.len(), 11);
        assert_eq!(
            reid.names(),
            vec![
                "count_above_mean",
                "count_below_mean",
                "longest_strike_above_mean",
                "longest_strike_below_mean",
                "mean_abs_change",
                "minimum",
                "maximum",
                "mean",
                "median",
                "standard_deviation",
                "variance"
            ]
        );
        assert!(!FeatureSpec::full15().features().contains(&Feature::CidCe));
        assert_eq!(FeatureSpec::full15_with_cid_ce().len(), 16);
        assert!(FeatureSpec::new(vec![], 10).is_err());
        assert!(FeatureSpec::new(vec![Feature::Mean], 0).is_err());
        for f in Feature::REGISTRY {
            assert_eq!(f.name().parse::<Feature>().unwrap(), f);
        }
    }

    #[test]
    fn compute_matches_single_functions() {
        let x = [0.1, 0.9, 0.35, 0.35, 0.6, 0.2, 0.8];
        let v = compute(&x, &FeatureSpec::full15_with_cid_ce());
        let m = moments_and_order_stats(&x);
        let expect = [
            count_above_mean(&x) as f64,
            count_below_mean(&x) as f64,
            longest_strike_above_mean(&x) as f64,
            longest_strike_below_mean(&x) as f64,
            binned_entropy(&x, 10),
            mean_abs_change(&x),
            mean_change(&x),
            m.min,
            m.max,
            m.mean,
            m.median,
            m.std,
            m.variance,
            m.kurtosis,
            m.skewness,
            cid_ce(&x),
        ];
        assert_eq!(v, expect);
    }

    #[test]
    fn extraction_is_deterministic() {
        let w = WindowSample {
            source: "0100:0".parse().unwrap(),
            t_start: 0.0,
            t_end: 2.5,
            values: vec![0.0, 0.25, 0.5, 0.25, 1.0],
            distinct_count: 4,
        };
        let a = extract(&w, &FeatureSpec::full15());
        let b = extract(&w, &FeatureSpec::full15());
        assert_eq!(a.values.len(), 15);
        assert_eq!(
            a.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(extract(&w, &FeatureSpec::reid11()).values.len(), 11);
    }
}
