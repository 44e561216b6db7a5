use std::str::FromStr;

use super::cart::{Dataset, Grower};
use super::{
    class_labels, scaled_columns, train_tree, FeatureMap, TrainOptions, TreeError, NUM_SLOTS,
};
use crate::labeling::TrainingSet;
use crate::phase::Scaler;
use crate::trace::NUM_FEATURES;

pub const CV_FOLDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelectionMethod {
    /// Rank features by total Gini decrease in an unbounded reference tree.
    #[default]
    Importance,
    /// Score every 4-subset by cross-validated accuracy of a depth-4 tree.
    Exhaustive,
}

impl FromStr for SelectionMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "importance" => Ok(SelectionMethod::Importance),
            "exhaustive" => Ok(SelectionMethod::Exhaustive),
            other => Err(format!("unknown feature selection method {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSelection {
    pub feature_map: FeatureMap,
    /// Per-feature Gini importance (importance method only).
    pub importance: Option<[f64; NUM_FEATURES]>,
    /// Cross-validated accuracy of the chosen subset (exhaustive method only).
    pub cv_accuracy: Option<f64>,
}

pub fn select_features(
    ts: &TrainingSet,
    scaler: &Scaler,
    method: SelectionMethod,
) -> Result<FeatureSelection, TreeError> {
    if ts.is_empty() {
        return Err(TreeError::EmptyTrainingSet);
    }
    match method {
        SelectionMethod::Importance => Ok(by_importance(ts, scaler)),
        SelectionMethod::Exhaustive => by_cross_validation(ts, scaler),
    }
}

fn by_importance(ts: &TrainingSet, scaler: &Scaler) -> FeatureSelection {
    let all: Vec<u8> = (0..NUM_FEATURES as u8).collect();
    let columns = scaled_columns(ts, scaler, &all);
    let labels = class_labels(ts);
    let idx: Vec<usize> = (0..labels.len()).collect();
    let mut grower = Grower::new(
        Dataset {
            columns: &columns,
            labels: &labels,
        },
        None,
        1,
    );
    grower.grow(&idx);
    let importance: [f64; NUM_FEATURES] = std::array::from_fn(|i| grower.importance[i]);

    let mut ranked: Vec<usize> = (0..NUM_FEATURES).collect();
    // stable sort keeps lower IDs first on ties
    ranked.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]));
    FeatureSelection {
        feature_map: std::array::from_fn(|i| ranked[i] as u8),
        importance: Some(importance),
        cv_accuracy: None,
    }
}

/// All `NUM_SLOTS`-subsets of the feature IDs in lexicographic order.
pub(crate) fn subsets() -> Vec<FeatureMap> {
    let mut out = Vec::new();
    let n = NUM_FEATURES as u8;
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                for d in c + 1..n {
                    out.push([a, b, c, d]);
                }
            }
        }
    }
    out
}

fn by_cross_validation(ts: &TrainingSet, scaler: &Scaler) -> Result<FeatureSelection, TreeError> {
    let folds: Vec<(TrainingSet, TrainingSet)> = (0..CV_FOLDS)
        .map(|k| {
            let (test, train): (Vec<_>, Vec<_>) = ts
                .rows
                .iter()
                .enumerate()
                .partition(|(i, _)| i % CV_FOLDS == k);
            let strip = |v: Vec<(usize, &crate::labeling::TrainingRow)>| TrainingSet {
                rows: v.into_iter().map(|(_, r)| *r).collect(),
            };
            (strip(train), strip(test))
        })
        .collect();

    let opts = TrainOptions {
        depth: 4,
        min_leaf: 1,
    };
    let mut best: Option<(FeatureMap, f64)> = None;
    for subset in subsets() {
        let mut hits = 0usize;
        for (train, test) in &folds {
            if train.is_empty() || test.is_empty() {
                continue;
            }
            let tree = train_tree(train, scaler, subset, opts)?;
            hits += test
                .rows
                .iter()
                .filter(|r| tree.predict(&r.features, scaler) == r.label)
                .count();
        }
        let acc = hits as f64 / ts.len() as f64;
        if best.is_none_or(|(_, b)| acc > b) {
            best = Some((subset, acc));
        }
    }
    let (feature_map, acc) = best.expect("at least one subset");
    debug_assert_eq!(feature_map.len(), NUM_SLOTS);
    Ok(FeatureSelection {
        feature_map,
        importance: None,
        cv_accuracy: Some(acc),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtree::tests::unit_scaler;
    use crate::labeling::TrainingRow;
    use crate::trace::{FeatureVector, PrefetcherConfig, VALID_MASKS};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set_from(f: impl Fn(&[f64; 7]) -> u8, n: usize, seed: u64) -> TrainingSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TrainingSet {
            rows: (0..n)
                .map(|_| {
                    let x: [f64; 7] = std::array::from_fn(|_| rng.random());
                    TrainingRow {
                        features: FeatureVector(x),
                        phase: 0,
                        label: PrefetcherConfig::new(f(&x)).unwrap(),
                    }
                })
                .collect(),
        }
    }

    #[test]
    fn thirty_five_subsets_in_lexicographic_order() {
        let s = subsets();
        assert_eq!(s.len(), 35);
        assert_eq!(s[0], [0, 1, 2, 3]);
        assert_eq!(s[34], [3, 4, 5, 6]);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn sole_informative_feature_ranks_first() {
        let ts = set_from(|x| if x[0] > 0.5 { 0b1111 } else { 0b0000 }, 200, 1);
        let s = unit_scaler();
        let imp = select_features(&ts, &s, SelectionMethod::Importance).unwrap();
        assert_eq!(imp.feature_map[0], 0);
        let ex = select_features(&ts, &s, SelectionMethod::Exhaustive).unwrap();
        assert_eq!(ex.feature_map[0], 0);
    }

    #[test]
    fn uniform_labels_fall_back_to_lowest_ids() {
        let ts = set_from(|_| 0b0011, 50, 2);
        let imp = select_features(&ts, &unit_scaler(), SelectionMethod::Importance).unwrap();
        assert_eq!(imp.importance.unwrap(), [0.0; 7]);
        assert_eq!(imp.feature_map, [0, 1, 2, 3]);
    }

    #[test]
    fn exhaustive_recovers_planted_subset() {
        // class index = bits of (x1, x3, x4, x6) folded into the 12 valid masks
        let planted = |x: &[f64; 7]| {
            let b = |i: usize| (x[i] > 0.5) as usize;
            let class = 8 * b(1) + 4 * b(3) + 2 * b(4) + b(6);
            VALID_MASKS[class % VALID_MASKS.len()]
        };
        let ts = set_from(planted, 1500, 3);
        let sel = select_features(&ts, &unit_scaler(), SelectionMethod::Exhaustive).unwrap();
        assert_eq!(sel.feature_map, [1, 3, 4, 6]);
        assert!(sel.cv_accuracy.unwrap() > 0.95);
    }

    #[test]
    fn empty_set_is_an_error() {
        assert_eq!(
            select_features(
                &TrainingSet::default(),
                &unit_scaler(),
                SelectionMethod::Importance
            ),
            Err(TreeError::EmptyTrainingSet)
        );
    }
}
