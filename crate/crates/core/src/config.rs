//! Shared pipeline parameters and their digest.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decomposer::{SplitOptions, WindowConfig};
use crate::error::{Error, Result};
use crate::features::FeatureSpec;
use crate::learner::ForestParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub window_s: f64,
    pub overlap: f64,
    pub min_variation: usize,
    pub max_bins: usize,
    /// km/h
    pub max_jump: f64,
    pub little_endian: bool,
    /// Drop rolling counters before windowing.
    pub drop_counters: bool,
    pub forest: ForestSection,
    pub seed: u64,
}

/// Forest hyperparameters as they appear in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestSection {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// 0 selects `ceil(sqrt(d))`.
    pub features_per_split: usize,
    pub bootstrap: bool,
}

impl Default for ForestSection {
    fn default() -> Self {
        let p = ForestParams::default();
        ForestSection {
            n_trees: p.n_trees,
            max_depth: p.tree.max_depth,
            min_samples_leaf: p.tree.min_samples_leaf,
            features_per_split: 0,
            bootstrap: p.bootstrap,
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            window_s: 2.5,
            overlap: 0.25,
            min_variation: 7,
            max_bins: FeatureSpec::DEFAULT_BINS,
            max_jump: 30.0,
            little_endian: false,
            drop_counters: true,
            forest: ForestSection::default(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.window().validate()?;
        if self.min_variation == 0 {
            return Err(Error::invalid("min_variation must be at least 1"));
        }
        if self.max_bins == 0 {
            return Err(Error::invalid("max_bins must be at least 1"));
        }
        if !(self.max_jump > 0.0) {
            return Err(Error::invalid("max_jump must be positive"));
        }
        if self.forest.n_trees == 0 {
            return Err(Error::invalid("forest needs at least one tree"));
        }
        Ok(())
    }

    pub fn window(&self) -> WindowConfig {
        WindowConfig {
            length_s: self.window_s,
            overlap: self.overlap,
            min_variation: self.min_variation,
        }
    }

    pub fn split(&self) -> SplitOptions {
        SplitOptions {
            little_endian: self.little_endian,
        }
    }

    pub fn forest_params(&self) -> ForestParams {
        let f = &self.forest;
        ForestParams {
            n_trees: f.n_trees,
            tree: crate::learner::TreeParams {
                max_depth: f.max_depth,
                min_samples_leaf: f.min_samples_leaf,
                features_per_split: (f.features_per_split > 0).then_some(f.features_per_split),
            },
            bootstrap: f.bootstrap,
        }
    }

    /// The feature spec for signal extraction under this config.
    pub fn signal_spec(&self) -> FeatureSpec {
        let mut s = FeatureSpec::full15();
        s.max_bins = self.max_bins;
        s
    }

    pub fn hash(&self) -> ConfigHash {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        ConfigHash(Sha256::digest(&canonical).into())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let c: PipelineConfig =
            toml::from_str(s).map_err(|e| Error::invalid(format!("config: {e}")))?;
        c.validate()?;
        Ok(c)
    }
}

/// SHA-256 of the canonical JSON form of a [`PipelineConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConfigHash(pub [u8; 32]);

impl fmt::Display for ConfigHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl ConfigHash {
    pub fn ensure_matches(&self, other: &ConfigHash) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::ConfigMismatch {
                expected: self.to_string(),
                actual: other.to_string(),
            })
        }
    }
}
