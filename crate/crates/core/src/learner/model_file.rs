//! Binary model files.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic        8 bytes  "CANLIFT\0"
//! version      u16
//! config hash  32 bytes
//! header len   u32, then that many bytes of JSON metadata
//! tree count   u32
//! per tree:    node count u32, then fixed 27-byte node records
//!              kind u8 (0 split, 1 leaf) | feature u16 | threshold f64 |
//!              left u32 | right u32 | leaf probability f64
//! ```

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::forest::{Forest, ForestParams};
use super::tree::{DecisionTree, Node};
use super::SignalModel;
use crate::config::ConfigHash;
use crate::error::{Error, Result};
use crate::features::FeatureSpec;

pub const MAGIC: &[u8; 8] = b"CANLIFT\0";
pub const FORMAT_VERSION: u16 = 1;
const NODE_BYTES: usize = 27;

#[derive(Serialize, Deserialize)]
struct Header {
    label: String,
    seed: u64,
    params: ForestParams,
    feature_spec: FeatureSpec,
    feature_names: Vec<String>,
    class_size: usize,
    oob_accuracy: Option<f64>,
}

pub fn write_model<W: Write>(model: &SignalModel, mut w: W) -> Result<()> {
    let f = &model.forest;
    let header = serde_json::to_vec(&Header {
        label: f.label.clone(),
        seed: f.seed,
        params: f.params,
        feature_spec: model.spec.clone(),
        feature_names: f.feature_names.clone(),
        class_size: f.class_size,
        oob_accuracy: f.oob_accuracy,
    })
    .map_err(|e| Error::ModelFormat(e.to_string()))?;

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&model.config_hash.0);
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    buf.extend_from_slice(&(f.trees.len() as u32).to_le_bytes());
    for t in &f.trees {
        buf.extend_from_slice(&(t.nodes().len() as u32).to_le_bytes());
        for n in t.nodes() {
            let (kind, feature, threshold, left, right, prob) = match *n {
                Node::Split { feature, threshold, left, right } => (0u8, feature, threshold, left, right, 0.0),
                Node::Leaf { prob } => (1u8, 0, 0.0, 0, 0, prob),
            };
            buf.push(kind);
            buf.extend_from_slice(&feature.to_le_bytes());
            buf.extend_from_slice(&threshold.to_le_bytes());
            buf.extend_from_slice(&left.to_le_bytes());
            buf.extend_from_slice(&right.to_le_bytes());
            buf.extend_from_slice(&prob.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| Error::ModelFormat("truncated file".into()))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn read_model<R: Read>(mut r: R) -> Result<SignalModel> {
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    let mut c = Cursor { data: &data, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(Error::ModelFormat("not a canlift model (bad magic)".into()));
    }
    let version = c.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::ModelFormat(format!("unsupported format version {version}")));
    }
    let hash = ConfigHash(c.take(32)?.try_into().expect("32 bytes"));
    let header_len = c.u32()? as usize;
    let header: Header = serde_json::from_slice(c.take(header_len)?)
        .map_err(|e| Error::ModelFormat(format!("bad header: {e}")))?;
    let d = header.feature_names.len();
    if header.feature_spec.len() != d {
        return Err(Error::ModelFormat("feature names do not match the feature spec".into()));
    }
    let n_trees = c.u32()? as usize;
    let mut trees = Vec::with_capacity(n_trees.min(10_000));
    for _ in 0..n_trees {
        let n_nodes = c.u32()? as usize;
        if n_nodes.saturating_mul(NODE_BYTES) > data.len() {
            return Err(Error::ModelFormat("truncated file".into()));
        }
        let mut nodes = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            let kind = c.take(1)?[0];
            let feature = c.u16()?;
            let threshold = c.f64()?;
            let left = c.u32()?;
            let right = c.u32()?;
            let prob = c.f64()?;
            nodes.push(match kind {
                0 => Node::Split { feature, threshold, left, right },
                1 => Node::Leaf { prob },
                k => return Err(Error::ModelFormat(format!("bad node kind {k}"))),
            });
        }
        trees.push(DecisionTree::from_nodes(nodes, d).map_err(Error::ModelFormat)?);
    }
    if c.pos != data.len() {
        return Err(Error::ModelFormat("trailing bytes".into()));
    }
    Ok(SignalModel {
        forest: Forest {
            trees,
            params: header.params,
            seed: header.seed,
            label: header.label,
            feature_names: header.feature_names,
            class_size: header.class_size,
            oob_accuracy: header.oob_accuracy,
        },
        spec: header.feature_spec,
        config_hash: hash,
    })
}
