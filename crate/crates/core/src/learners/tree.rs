//! CART-style trees: greedy variance-reduction splits for regression and
//! Gini splits for classification. Split thresholds are midpoints between
//! adjacent sorted feature values; ties in gain are broken by the lowest
//! feature index, then the lowest threshold, so refits are bit-identical.

use crate::accum::ExactSum;
use crate::scalar::Scalar;
use nalgebra::DMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum SplitCriterion {
    Variance,
    Gini,
}

#[derive(Debug, Clone)]
enum Node<F: Scalar> {
    Leaf { value: F },
    Split { feature: usize, threshold: F, left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub(crate) struct TreeModel<F: Scalar> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> TreeModel<F> {
    pub(crate) fn predict_row(&self, row: &[F]) -> F {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, left, right } => {
                    at = if row[*feature] < *threshold { *left } else { *right };
                }
            }
        }
    }

    #[cfg(test)]
    pub(crate) fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

struct Builder<'a, F: Scalar> {
    features: &'a DMatrix<F>,
    targets: &'a [F],
    max_depth: usize,
    min_leaf: usize,
    criterion: SplitCriterion,
    nodes: Vec<Node<F>>,
}

struct BestSplit<F> {
    feature: usize,
    threshold: F,
    gain: f64,
}

impl<'a, F: Scalar> Builder<'a, F> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let mut acc = ExactSum::new();
        for &i in idx {
            acc.add(self.targets[i]);
        }
        let value = F::cast(acc.value::<f64>() / idx.len() as f64);
        self.nodes.push(Node::Leaf { value });
        self.nodes.len() - 1
    }

    /// Node impurity times node size: SSE for regression, weighted Gini for
    /// classification. Computed from exact sums so the value only depends
    /// on the index multiset.
    fn impurity(&self, idx: &[usize]) -> f64 {
        let n = idx.len() as f64;
        match self.criterion {
            SplitCriterion::Variance => {
                let mut sum = ExactSum::new();
                let mut sumsq = ExactSum::new();
                for &i in idx {
                    let v = self.targets[i].to64();
                    sum.add_f64(v);
                    sumsq.add_f64(v * v);
                }
                let s: f64 = sum.value();
                let ss: f64 = sumsq.value();
                (ss - s * s / n).max(0.0)
            }
            SplitCriterion::Gini => {
                let ones = idx.iter().filter(|&&i| self.targets[i] > F::cast(0.5)).count() as f64;
                let p = ones / n;
                n * 2.0 * p * (1.0 - p)
            }
        }
    }

    fn best_split(&self, idx: &[usize]) -> Option<BestSplit<F>> {
        let parent = self.impurity(idx);
        let n = idx.len();
        let mut best: Option<BestSplit<F>> = None;

        let mut sorted = idx.to_vec();
        for feature in 0..self.features.ncols() {
            sorted.sort_by(|&a, &b| {
                self.features[(a, feature)]
                    .partial_cmp(&self.features[(b, feature)])
                    .expect("finite feature values")
            });

            // Exact prefix statistics over the sorted order; candidate
            // cuts sit between adjacent distinct values only.
            let mut sum = ExactSum::new();
            let mut sumsq = ExactSum::new();
            let mut ones = 0usize;
            let (total_sum, total_sumsq, total_ones) = {
                let mut s = ExactSum::new();
                let mut ss = ExactSum::new();
                let mut o = 0usize;
                for &i in &sorted {
                    let v = self.targets[i].to64();
                    s.add_f64(v);
                    ss.add_f64(v * v);
                    if self.targets[i] > F::cast(0.5) {
                        o += 1;
                    }
                }
                (s.value::<f64>(), ss.value::<f64>(), o)
            };

            for pos in 0..n - 1 {
                let i = sorted[pos];
                let v = self.targets[i].to64();
                sum.add_f64(v);
                sumsq.add_f64(v * v);
                if self.targets[i] > F::cast(0.5) {
                    ones += 1;
                }

                let left_n = pos + 1;
                let right_n = n - left_n;
                if left_n < self.min_leaf || right_n < self.min_leaf {
                    continue;
                }
                let lo = self.features[(sorted[pos], feature)];
                let hi = self.features[(sorted[pos + 1], feature)];
                if !(lo < hi) {
                    continue;
                }

                let children = match self.criterion {
                    SplitCriterion::Variance => {
                        let ls: f64 = sum.value();
                        let lss: f64 = sumsq.value();
                        let left = (lss - ls * ls / left_n as f64).max(0.0);
                        let rs = total_sum - ls;
                        let rss = total_sumsq - lss;
                        let right = (rss - rs * rs / right_n as f64).max(0.0);
                        left + right
                    }
                    SplitCriterion::Gini => {
                        let pl = ones as f64 / left_n as f64;
                        let pr = (total_ones - ones) as f64 / right_n as f64;
                        left_n as f64 * 2.0 * pl * (1.0 - pl)
                            + right_n as f64 * 2.0 * pr * (1.0 - pr)
                    }
                };
                let gain = parent - children;
                if gain > 0.0 && best.as_ref().map_or(true, |b| gain > b.gain) {
                    let threshold = (lo + hi) * F::cast(0.5);
                    best = Some(BestSplit { feature, threshold, gain });
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: &[usize], depth: usize) -> usize {
        if depth >= self.max_depth || idx.len() < 2 * self.min_leaf {
            return self.leaf(idx);
        }
        let Some(split) = self.best_split(idx) else {
            return self.leaf(idx);
        };
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.features[(i, split.feature)] < split.threshold);
        debug_assert!(left_idx.len() >= self.min_leaf && right_idx.len() >= self.min_leaf);

        let slot = self.nodes.len();
        self.nodes.push(Node::Leaf { value: F::zero() }); // placeholder
        let left = self.grow(&left_idx, depth + 1);
        let right = self.grow(&right_idx, depth + 1);
        self.nodes[slot] = Node::Split { feature: split.feature, threshold: split.threshold, left, right };
        slot
    }
}

pub(crate) fn fit_tree<F: Scalar>(
    features: &DMatrix<F>,
    targets: &[F],
    max_depth: usize,
    min_leaf: usize,
    criterion: SplitCriterion,
) -> TreeModel<F> {
    debug_assert_eq!(features.nrows(), targets.len());
    let mut builder = Builder { features, targets, max_depth, min_leaf, criterion, nodes: Vec::new() };
    let idx: Vec<usize> = (0..targets.len()).collect();
    let root = builder.grow(&idx, 0);
    debug_assert_eq!(root, 0);
    TreeModel { nodes: builder.nodes }
}
