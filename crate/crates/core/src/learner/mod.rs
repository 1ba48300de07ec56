//! Random-forest signal classifiers: trees, balanced forests, window voting
//! and the match metrics.

pub mod forest;
pub mod model_file;
pub mod report;
pub mod tree;

pub use forest::{feature_importances, train_forest, Forest, ForestParams};
pub use model_file::{read_model, write_model};
pub use report::{evaluate, locate_in, CandidateVotes, CandidateWindows, Evaluation, MatchReport};
pub use tree::{train_tree, DecisionTree, Node, TreeParams};

use crate::config::ConfigHash;
use crate::features::FeatureSpec;

/// A forest bound to the feature spec and pipeline configuration it was
/// trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalModel {
    pub forest: Forest,
    pub spec: FeatureSpec,
    pub config_hash: ConfigHash,
}
