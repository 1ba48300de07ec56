use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{train_tree_on, DecisionTree, TreeParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub tree: TreeParams,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            tree: TreeParams::default(),
            bootstrap: true,
        }
    }
}

/// A binary random forest for one positive class.
#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<DecisionTree>,
    pub params: ForestParams,
    pub seed: u64,
    pub label: String,
    pub feature_names: Vec<String>,
    /// Number of positives (= negatives) after balancing.
    pub class_size: usize,
    /// Out-of-bag accuracy on the balanced set, when bootstrapping.
    pub oob_accuracy: Option<f64>,
}

impl Forest {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn positive_votes(&self, x: &[f64]) -> usize {
        self.trees.iter().filter(|t| t.predict(x)).count()
    }

    /// Strict majority of tree votes; ties are negative.
    pub fn predict(&self, x: &[f64]) -> bool {
        2 * self.positive_votes(x) > self.trees.len()
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_proba(x)).sum::<f64>() / self.trees.len() as f64
    }
}

/// The generator for tree `k`: same seed, its own stream. Serial and
/// parallel training therefore agree.
fn tree_rng(seed: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64 + 1);
    rng
}

/// Downsamples the larger class (uniformly, without replacement) to the
/// size of the smaller one. Returns indices into each input.
pub fn balance<R: Rng>(n_pos: usize, n_neg: usize, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let m = n_pos.min(n_neg);
    let pick = |n: usize, rng: &mut R| -> Vec<usize> {
        if n == m {
            (0..n).collect()
        } else {
            let mut v = index::sample(rng, n, m).into_vec();
            v.sort_unstable();
            v
        }
    };
    let p = pick(n_pos, rng);
    let q = pick(n_neg, rng);
    (p, q)
}

/// Trains a balanced forest: the larger class is downsampled with the
/// seeded generator, then each tree grows on a bootstrap of the balanced set.
pub fn train_forest(
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
    feature_names: &[String],
    label: &str,
    params: &ForestParams,
    seed: u64,
) -> Result<Forest> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::InsufficientSamples(format!(
            "forest {label:?} needs both classes ({} positive, {} negative)",
            positives.len(),
            negatives.len()
        )));
    }
    if params.n_trees == 0 {
        return Err(Error::invalid("forest needs at least one tree"));
    }
    let d = feature_names.len();
    if positives.iter().chain(negatives).any(|x| x.len() != d) {
        return Err(Error::invalid(format!("feature vectors must have {d} values")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (p_idx, n_idx) = balance(positives.len(), negatives.len(), &mut rng);
    assert_eq!(p_idx.len(), n_idx.len(), "training set must be balanced");
    let x: Vec<Vec<f64>> = p_idx
        .iter()
        .map(|&i| positives[i].clone())
        .chain(n_idx.iter().map(|&i| negatives[i].clone()))
        .collect();
    let y: Vec<bool> = (0..x.len()).map(|i| i < p_idx.len()).collect();
    let n = x.len();

    let grown: Vec<(DecisionTree, Vec<bool>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|k| {
            let mut rng = tree_rng(seed, k);
            let (sample, in_bag) = if params.bootstrap {
                let mut in_bag = vec![false; n];
                let sample: Vec<usize> = (0..n)
                    .map(|_| {
                        let i = rng.random_range(0..n);
                        in_bag[i] = true;
                        i
                    })
                    .collect();
                (sample, in_bag)
            } else {
                ((0..n).collect(), vec![true; n])
            };
            (train_tree_on(&x, &y, &sample, &params.tree, &mut rng), in_bag)
        })
        .collect();

    let oob_accuracy = params.bootstrap.then(|| {
        let mut correct = 0usize;
        let mut seen = 0usize;
        for i in 0..n {
            let votes: Vec<bool> = grown
                .iter()
                .filter(|(_, bag)| !bag[i])
                .map(|(t, _)| t.predict(&x[i]))
                .collect();
            if votes.is_empty() {
                continue;
            }
            seen += 1;
            let pos = votes.iter().filter(|&&v| v).count();
            if (2 * pos > votes.len()) == y[i] {
                correct += 1;
            }
        }
        if seen == 0 { 0.0 } else { correct as f64 / seen as f64 }
    });

    Ok(Forest {
        trees: grown.into_iter().map(|(t, _)| t).collect(),
        params: *params,
        seed,
        label: label.to_string(),
        feature_names: feature_names.to_vec(),
        class_size: p_idx.len(),
        oob_accuracy,
    })
}

/// Mean impurity decrease per feature, each tree normalized first, then the
/// average renormalized to sum to one. Sorted descending, ties by name.
/// A forest without any split reports zeros.
pub fn feature_importances(forest: &Forest) -> Vec<(String, f64)> {
    let d = forest.n_features();
    let mut acc = vec![0.0; d];
    for t in &forest.trees {
        let s: f64 = t.importances.iter().sum();
        if s > 0.0 {
            for (a, v) in acc.iter_mut().zip(&t.importances) {
                *a += v / s;
            }
        }
    }
    let total: f64 = acc.iter().sum();
    if total > 0.0 {
        acc.iter_mut().for_each(|a| *a /= total);
    }
    let mut out: Vec<(String, f64)> = forest.feature_names.iter().cloned().zip(acc).collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(d: usize) -> Vec<String> {
        (0..d).map(|i| format!("f{i}")).collect()
    }

    fn cloud(rng: &mut ChaCha8Rng, n: usize, centre: f64, d: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| centre + rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn balancing_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (p, n) = balance(1000, 5000, &mut rng);
        assert_eq!((p.len(), n.len()), (1000, 1000));
        assert!(n.windows(2).all(|w| w[0] < w[1]));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pos = cloud(&mut rng, 1000, 2.0, 3);
        let neg = cloud(&mut rng, 5000, -2.0, 3);
        let params = ForestParams { n_trees: 5, ..Default::default() };
        let f = train_forest(&pos, &neg, &names(3), "x", &params, 3).unwrap();
        // each tree sees a bootstrap of the 2000-sample balanced set
        assert_eq!(f.class_size, 1000);
    }

    #[test]
    fn same_seed_same_forest() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pos = cloud(&mut rng, 80, 0.5, 4);
        let neg = cloud(&mut rng, 120, -0.5, 4);
        let params = ForestParams { n_trees: 20, ..Default::default() };
        let a = train_forest(&pos, &neg, &names(4), "x", &params, 11).unwrap();
        let b = train_forest(&pos, &neg, &names(4), "x", &params, 11).unwrap();
        assert_eq!(a, b);
        let probe = cloud(&mut rng, 50, 0.0, 4);
        assert!(probe.iter().all(|x| a.predict(x) == b.predict(x)));
        let c = train_forest(&pos, &neg, &names(4), "x", &params, 12).unwrap();
        assert_ne!(a.trees, c.trees);
    }

    #[test]
    fn separable_oob() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pos = cloud(&mut rng, 300, 1.5, 5);
        let neg = cloud(&mut rng, 300, -1.5, 5);
        let f = train_forest(&pos, &neg, &names(5), "x", &ForestParams::default(), 5).unwrap();
        assert!(f.oob_accuracy.unwrap() > 0.95);
    }

    #[test]
    fn tree_order_does_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pos = cloud(&mut rng, 60, 0.3, 3);
        let neg = cloud(&mut rng, 60, -0.3, 3);
        let params = ForestParams { n_trees: 15, ..Default::default() };
        let f = train_forest(&pos, &neg, &names(3), "x", &params, 1).unwrap();
        let mut g = f.clone();
        g.trees.reverse();
        let probe = cloud(&mut rng, 100, 0.0, 3);
        assert!(probe.iter().all(|x| f.predict(x) == g.predict(x)));
    }

    #[test]
    fn importances_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pos = cloud(&mut rng, 100, 1.0, 4);
        let neg = cloud(&mut rng, 100, -1.0, 4);
        let f = train_forest(&pos, &neg, &names(4), "x", &ForestParams::default(), 2).unwrap();
        let imp = feature_importances(&f);
        assert!((imp.iter().map(|i| i.1).sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(imp.windows(2).all(|w| w[0].1 >= w[1].1));

        let pos: Vec<Vec<f64>> = (0..30).map(|i| vec![1.0 + f64::from(i)]).collect();
        let neg: Vec<Vec<f64>> = (0..30).map(|i| vec![-1.0 - f64::from(i)]).collect();
        let f = train_forest(&pos, &neg, &names(1), "x", &ForestParams::default(), 2).unwrap();
        assert_eq!(feature_importances(&f), vec![("f0".to_string(), 1.0)]);
    }

    #[test]
    fn empty_class_is_an_error() {
        assert!(train_forest(&[vec![1.0]], &[], &names(1), "x", &ForestParams::default(), 0).is_err());
    }
}
