//! Depth-bounded CART classifier over four selected features, stored as a
//! complete binary tree so it packs into a fixed-size blob.

mod cart;
mod codec;
mod select;

use std::fmt;

pub use codec::{
    core_blob_bits, core_blob_len, decode, dequantize, encode, encode_core_blob, quantize,
    CodecError, ModelFile, FORMAT_VERSION, MAGIC,
};
pub use select::{select_features, FeatureSelection, SelectionMethod, CV_FOLDS};

use crate::labeling::TrainingSet;
use crate::phase::Scaler;
use crate::trace::{FeatureVector, PrefetcherConfig, FEATURE_NAMES, NUM_FEATURES};
use cart::{Dataset, Grower, Node};

/// Number of feature slots a tree can reference (2-bit slot IDs).
pub const NUM_SLOTS: usize = 4;
pub const MAX_DEPTH: u8 = 8;
pub const DEFAULT_DEPTH: u8 = 4;
pub const DEFAULT_MIN_LEAF: usize = 1;

/// Canonical feature IDs assigned to slots 0..4.
pub type FeatureMap = [u8; NUM_SLOTS];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TreeError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("depth limit {0} outside 1..={MAX_DEPTH}")]
    BadDepth(u8),
    #[error("invalid feature map {0:?}: need {NUM_SLOTS} distinct IDs below {NUM_FEATURES}")]
    BadFeatureMap(FeatureMap),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub slot: u8,
    /// Compared against the scaled feature; `value <= threshold` goes left.
    pub threshold: f64,
}

/// Complete binary tree of depth `depth`: `2^depth - 1` splits and
/// `2^depth` leaves, both in breadth-first order.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    depth: u8,
    feature_map: FeatureMap,
    splits: Vec<Split>,
    leaves: Vec<PrefetcherConfig>,
}

fn check_feature_map(map: &FeatureMap) -> Result<(), TreeError> {
    let distinct = (0..NUM_SLOTS).all(|i| (i + 1..NUM_SLOTS).all(|j| map[i] != map[j]));
    if !distinct || map.iter().any(|&f| f as usize >= NUM_FEATURES) {
        return Err(TreeError::BadFeatureMap(*map));
    }
    Ok(())
}

impl DecisionTree {
    /// Assembles a tree from its breadth-first arrays.
    pub fn from_parts(
        depth: u8,
        feature_map: FeatureMap,
        splits: Vec<Split>,
        leaves: Vec<PrefetcherConfig>,
    ) -> Result<Self, TreeError> {
        if depth == 0 || depth > MAX_DEPTH {
            return Err(TreeError::BadDepth(depth));
        }
        check_feature_map(&feature_map)?;
        let n_leaves = 1usize << depth;
        assert_eq!(splits.len(), n_leaves - 1, "split count must match depth");
        assert_eq!(leaves.len(), n_leaves, "leaf count must match depth");
        assert!(splits
            .iter()
            .all(|s| (s.slot as usize) < NUM_SLOTS && (0.0..=1.0).contains(&s.threshold)));
        Ok(DecisionTree {
            depth,
            feature_map,
            splits,
            leaves,
        })
    }

    pub fn depth(&self) -> u8 {
        self.depth
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.feature_map
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn leaves(&self) -> &[PrefetcherConfig] {
        &self.leaves
    }

    /// Walks exactly `depth` comparisons and returns the leaf mask.
    #[inline]
    pub fn predict(&self, x: &FeatureVector, scaler: &Scaler) -> PrefetcherConfig {
        let mut i = 0;
        for _ in 0..self.depth {
            let s = self.splits[i];
            let feature = self.feature_map[s.slot as usize] as usize;
            let v = scaler.scale(feature, x[feature]);
            i = if v <= s.threshold {
                2 * i + 1
            } else {
                2 * i + 2
            };
        }
        self.leaves[i - self.splits.len()]
    }

    fn from_node(root: &Node, depth: u8, feature_map: FeatureMap) -> Self {
        let n_leaves = 1usize << depth;
        let mut splits = vec![
            Split {
                slot: 0,
                threshold: 1.0,
            };
            n_leaves - 1
        ];
        let mut leaves = vec![PrefetcherConfig::OFF; n_leaves];
        fill(root, 0, 0, depth as usize, &mut splits, &mut leaves);
        DecisionTree {
            depth,
            feature_map,
            splits,
            leaves,
        }
    }
}

// Early leaves are replicated over every leaf position beneath them; the
// padding splits underneath keep slot 0 / threshold 1.0.
fn fill(
    node: &Node,
    pos: usize,
    level: usize,
    depth: usize,
    splits: &mut [Split],
    leaves: &mut [PrefetcherConfig],
) {
    match node {
        Node::Leaf(class) => {
            let cfg = PrefetcherConfig::from_index(*class).expect("class index within valid set");
            let span = 1usize << (depth - level);
            // leftmost leaf below `pos`
            let first = ((pos + 1) << (depth - level)) - 1 - splits.len();
            leaves[first..first + span].fill(cfg);
        }
        Node::Split {
            slot,
            threshold,
            left,
            right,
        } => {
            debug_assert!(level < depth);
            splits[pos] = Split {
                slot: *slot as u8,
                threshold: *threshold,
            };
            fill(left, 2 * pos + 1, level + 1, depth, splits, leaves);
            fill(right, 2 * pos + 2, level + 1, depth, splits, leaves);
        }
    }
}

/// A tree together with the scaler its thresholds are expressed in.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub tree: DecisionTree,
    pub scaler: Scaler,
}

impl Model {
    #[inline]
    pub fn predict(&self, x: &FeatureVector) -> PrefetcherConfig {
        self.tree.predict(x, &self.scaler)
    }

    pub fn accuracy(&self, ts: &TrainingSet) -> f64 {
        accuracy(&self.tree, &self.scaler, ts)
    }
}

pub fn predict(tree: &DecisionTree, x: &FeatureVector, scaler: &Scaler) -> PrefetcherConfig {
    tree.predict(x, scaler)
}

/// Fraction of rows whose label the tree reproduces. 1.0 on an empty set.
pub fn accuracy(tree: &DecisionTree, scaler: &Scaler, ts: &TrainingSet) -> f64 {
    if ts.is_empty() {
        return 1.0;
    }
    let hits = ts
        .rows
        .iter()
        .filter(|r| tree.predict(&r.features, scaler) == r.label)
        .count();
    hits as f64 / ts.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainOptions {
    pub depth: u8,
    pub min_leaf: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            depth: DEFAULT_DEPTH,
            min_leaf: DEFAULT_MIN_LEAF,
        }
    }
}

pub(crate) fn scaled_columns(ts: &TrainingSet, scaler: &Scaler, features: &[u8]) -> Vec<Vec<f64>> {
    features
        .iter()
        .map(|&f| {
            let f = f as usize;
            ts.rows
                .iter()
                .map(|r| scaler.scale(f, r.features[f]))
                .collect()
        })
        .collect()
}

pub(crate) fn class_labels(ts: &TrainingSet) -> Vec<usize> {
    ts.rows.iter().map(|r| r.label.index()).collect()
}

/// Grows a Gini CART tree on the mapped features and pads it to a complete
/// tree of `opts.depth`.
pub fn train_tree(
    ts: &TrainingSet,
    scaler: &Scaler,
    feature_map: FeatureMap,
    opts: TrainOptions,
) -> Result<DecisionTree, TreeError> {
    if opts.depth == 0 || opts.depth > MAX_DEPTH {
        return Err(TreeError::BadDepth(opts.depth));
    }
    check_feature_map(&feature_map)?;
    if ts.is_empty() {
        return Err(TreeError::EmptyTrainingSet);
    }
    let columns = scaled_columns(ts, scaler, &feature_map);
    let labels = class_labels(ts);
    let idx: Vec<usize> = (0..labels.len()).collect();
    let mut grower = Grower::new(
        Dataset {
            columns: &columns,
            labels: &labels,
        },
        Some(opts.depth as usize),
        opts.min_leaf,
    );
    let root = grower.grow(&idx);
    Ok(DecisionTree::from_node(&root, opts.depth, feature_map))
}

impl fmt::Display for DecisionTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self
            .feature_map
            .iter()
            .map(|&id| FEATURE_NAMES[id as usize])
            .collect();
        writeln!(f, "depth {} over [{}]", self.depth, names.join(", "))?;
        self.fmt_node(f, 0, 0)
    }
}

impl DecisionTree {
    fn fmt_node(&self, f: &mut fmt::Formatter<'_>, pos: usize, level: usize) -> fmt::Result {
        let indent = "  ".repeat(level);
        if pos >= self.splits.len() {
            return writeln!(f, "{indent}-> {}", self.leaves[pos - self.splits.len()]);
        }
        let s = self.splits[pos];
        let name = FEATURE_NAMES[self.feature_map[s.slot as usize] as usize];
        writeln!(f, "{indent}if {name} <= {:.5}:", s.threshold)?;
        self.fmt_node(f, 2 * pos + 1, level + 1)?;
        writeln!(f, "{indent}else:")?;
        self.fmt_node(f, 2 * pos + 2, level + 1)
    }
}
