//! Greedy CART growth with Gini impurity over pre-scaled feature columns.

use crate::trace::VALID_MASKS;

pub(crate) const NUM_CLASSES: usize = VALID_MASKS.len();

/// Minimum impurity decrease for a split to be taken.
const MIN_DECREASE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Node {
    Leaf(usize),
    Split {
        slot: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

/// Column-major training data. `columns[slot][row]` is already scaled.
pub(crate) struct Dataset<'a> {
    pub columns: &'a [Vec<f64>],
    pub labels: &'a [usize],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Candidate {
    pub slot: usize,
    pub threshold: f64,
    /// Weighted Gini impurity of the two children.
    pub impurity: f64,
}

pub(crate) fn gini(counts: &[usize; NUM_CLASSES], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts
        .iter()
        .map(|&c| {
            let p = c as f64 / n;
            p * p
        })
        .sum::<f64>()
}

fn class_counts(labels: &[usize], idx: &[usize]) -> [usize; NUM_CLASSES] {
    let mut counts = [0; NUM_CLASSES];
    for &i in idx {
        counts[labels[i]] += 1;
    }
    counts
}

/// Most frequent class; ties go to the lowest class index (lowest mask).
pub(crate) fn majority(counts: &[usize; NUM_CLASSES]) -> usize {
    let mut best = 0;
    for c in 1..NUM_CLASSES {
        if counts[c] > counts[best] {
            best = c;
        }
    }
    best
}

/// Every admissible split of `idx`: midpoints between consecutive distinct
/// values of each slot, both children holding at least `min_leaf` rows.
/// Emitted in slot order, then ascending threshold.
pub(crate) fn candidate_splits(
    data: &Dataset<'_>,
    idx: &[usize],
    min_leaf: usize,
) -> Vec<Candidate> {
    let n = idx.len();
    let mut out = Vec::new();
    let total = class_counts(data.labels, idx);
    let mut order = idx.to_vec();
    for (slot, col) in data.columns.iter().enumerate() {
        order.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
        let mut left = [0usize; NUM_CLASSES];
        for pos in 0..n - 1 {
            left[data.labels[order[pos]]] += 1;
            let (a, b) = (col[order[pos]], col[order[pos + 1]]);
            if a == b {
                continue;
            }
            let nl = pos + 1;
            let nr = n - nl;
            if nl < min_leaf || nr < min_leaf {
                continue;
            }
            let mut right = total;
            for (r, l) in right.iter_mut().zip(&left) {
                *r -= l;
            }
            let impurity = (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr)) / n as f64;
            let mut threshold = 0.5 * (a + b);
            if threshold >= b {
                threshold = a;
            }
            out.push(Candidate {
                slot,
                threshold,
                impurity,
            });
        }
    }
    out
}

pub(crate) struct Grower<'a> {
    pub data: Dataset<'a>,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Sum over splits of `(n_node / n_total) * impurity decrease`, per slot.
    pub importance: Vec<f64>,
    total_rows: usize,
}

impl<'a> Grower<'a> {
    pub fn new(data: Dataset<'a>, max_depth: Option<usize>, min_leaf: usize) -> Self {
        let slots = data.columns.len();
        let total_rows = data.labels.len();
        Grower {
            data,
            max_depth,
            min_leaf: min_leaf.max(1),
            importance: vec![0.0; slots],
            total_rows,
        }
    }

    pub fn grow(&mut self, idx: &[usize]) -> Node {
        self.grow_at(idx, 0)
    }

    fn grow_at(&mut self, idx: &[usize], depth: usize) -> Node {
        let counts = class_counts(self.data.labels, idx);
        let leaf = Node::Leaf(majority(&counts));
        let n = idx.len();
        let parent = gini(&counts, n);
        if self.max_depth.is_some_and(|d| depth >= d) || parent == 0.0 || n < 2 * self.min_leaf {
            return leaf;
        }

        let mut best: Option<Candidate> = None;
        for c in candidate_splits(&self.data, idx, self.min_leaf) {
            if best.is_none_or(|b| c.impurity < b.impurity) {
                best = Some(c);
            }
        }
        let Some(best) = best else { return leaf };
        let decrease = parent - best.impurity;
        if decrease <= MIN_DECREASE {
            return leaf;
        }
        self.importance[best.slot] += n as f64 / self.total_rows as f64 * decrease;

        let col = &self.data.columns[best.slot];
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| col[i] <= best.threshold);
        Node::Split {
            slot: best.slot,
            threshold: best.threshold,
            left: Box::new(self.grow_at(&l, depth + 1)),
            right: Box::new(self.grow_at(&r, depth + 1)),
        }
    }
}
