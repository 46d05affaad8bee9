//! A single CART-style classification tree with random feature sampling at
//! each node.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub(crate) enum Node {
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        /// Class distribution at the leaf; sums to 1.
        dist: Box<[f64]>,
    },
}

#[derive(Clone, Debug)]
pub(crate) struct DecisionTree {
    nodes: Vec<Node>,
}

impl DecisionTree {
    /// Returns the leaf class distribution for one descriptor.
    pub fn predict<'a>(&'a self, values: &[f64]) -> &'a [f64] {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { dist } => return dist,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if values[*feature as usize] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    #[cfg(test)]
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

pub(crate) struct TreeParams {
    pub max_depth: usize,
    pub min_split_samples: usize,
    /// Candidate features examined per node (typically sqrt of the
    /// dimension).
    pub candidates_per_node: usize,
}

/// Trains one tree on a bootstrap sample drawn with `rng`.
///
/// `rows` are borrowed descriptors, `labels[i]` the class index of row `i`.
pub(crate) fn train_tree(
    rows: &[&[f64]],
    labels: &[usize],
    n_classes: usize,
    params: &TreeParams,
    rng: &mut ChaCha8Rng,
) -> DecisionTree {
    let n = rows.len();
    debug_assert!(n > 0 && labels.len() == n && n_classes > 0);
    let mut bootstrap: Vec<u32> = (0..n).map(|_| rng.gen_range(0..n) as u32).collect();
    let mut builder = Builder {
        rows,
        labels,
        n_classes,
        n_features: rows[0].len(),
        params,
        rng,
        nodes: Vec::new(),
        scratch: Vec::new(),
    };
    builder.grow(&mut bootstrap, 0);
    DecisionTree {
        nodes: builder.nodes,
    }
}

struct Builder<'a> {
    rows: &'a [&'a [f64]],
    labels: &'a [usize],
    n_classes: usize,
    n_features: usize,
    params: &'a TreeParams,
    rng: &'a mut ChaCha8Rng,
    nodes: Vec<Node>,
    /// Reusable (value, class) buffer for split search.
    scratch: Vec<(f64, u32)>,
}

struct BestSplit {
    impurity: f64,
    feature: usize,
    threshold: f64,
}

impl<'a> Builder<'a> {
    /// Grows the subtree over `idx` and returns its node id.
    fn grow(&mut self, idx: &mut [u32], depth: usize) -> u32 {
        let mut counts = vec![0.0f64; self.n_classes];
        for &i in idx.iter() {
            counts[self.labels[i as usize]] += 1.0;
        }
        let total = idx.len() as f64;
        let pure = counts.iter().any(|&c| c == total);
        if pure || idx.len() < self.params.min_split_samples || depth >= self.params.max_depth {
            return self.leaf(counts, total);
        }
        let Some(best) = self.find_split(idx) else {
            return self.leaf(counts, total);
        };
        // Partition deterministically: left block keeps relative order.
        let mut left: Vec<u32> = Vec::with_capacity(idx.len());
        let mut right: Vec<u32> = Vec::with_capacity(idx.len());
        for &i in idx.iter() {
            if self.rows[i as usize][best.feature] <= best.threshold {
                left.push(i);
            } else {
                right.push(i);
            }
        }
        debug_assert!(!left.is_empty() && !right.is_empty());
        let id = self.nodes.len() as u32;
        // Placeholder overwritten once both children exist.
        self.nodes.push(Node::Leaf {
            dist: Vec::new().into_boxed_slice(),
        });
        let left_id = self.grow(&mut left, depth + 1);
        let right_id = self.grow(&mut right, depth + 1);
        self.nodes[id as usize] = Node::Split {
            feature: best.feature as u32,
            threshold: best.threshold,
            left: left_id,
            right: right_id,
        };
        id
    }

    fn leaf(&mut self, mut counts: Vec<f64>, total: f64) -> u32 {
        for c in &mut counts {
            *c /= total;
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(Node::Leaf {
            dist: counts.into_boxed_slice(),
        });
        id
    }

    /// Scans a random candidate-feature subset for the threshold minimizing
    /// weighted Gini impurity. Returns `None` when every candidate is
    /// constant on `idx`.
    fn find_split(&mut self, idx: &[u32]) -> Option<BestSplit> {
        let mut best: Option<BestSplit> = None;
        let n = idx.len() as f64;
        let k = self.params.candidates_per_node.min(self.n_features).max(1);
        let mut chosen = Vec::with_capacity(k);
        while chosen.len() < k {
            let f = self.rng.gen_range(0..self.n_features);
            if !chosen.contains(&f) {
                chosen.push(f);
            }
        }
        let mut right_counts = vec![0.0f64; self.n_classes];
        let mut left_counts = vec![0.0f64; self.n_classes];
        for f in chosen {
            let mut values = std::mem::take(&mut self.scratch);
            values.clear();
            values.extend(
                idx.iter()
                    .map(|&i| (self.rows[i as usize][f], self.labels[i as usize] as u32)),
            );
            values.sort_by(|a, b| a.0.total_cmp(&b.0));
            if values[0].0 == values[values.len() - 1].0 {
                self.scratch = values;
                continue;
            }
            left_counts.iter_mut().for_each(|c| *c = 0.0);
            right_counts.iter_mut().for_each(|c| *c = 0.0);
            for &(_, c) in values.iter() {
                right_counts[c as usize] += 1.0;
            }
            let mut sq_left = 0.0f64;
            let mut sq_right: f64 = right_counts.iter().map(|&c| c * c).sum();
            let mut n_left = 0.0f64;
            for i in 0..values.len() - 1 {
                let c = values[i].1 as usize;
                // Move one sample from the right block to the left block,
                // updating the sums of squared class counts incrementally.
                sq_left += 2.0 * left_counts[c] + 1.0;
                sq_right -= 2.0 * right_counts[c] - 1.0;
                left_counts[c] += 1.0;
                right_counts[c] -= 1.0;
                n_left += 1.0;
                if values[i].0 == values[i + 1].0 {
                    continue;
                }
                let n_right = n - n_left;
                // Weighted Gini: sum over sides of n_side * (1 - sum p^2).
                let impurity = (n_left - sq_left / n_left) + (n_right - sq_right / n_right);
                if best.as_ref().map_or(true, |b| impurity < b.impurity) {
                    best = Some(BestSplit {
                        impurity,
                        feature: f,
                        threshold: 0.5 * (values[i].0 + values[i + 1].0),
                    });
                }
            }
            self.scratch = values;
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn params() -> TreeParams {
        TreeParams {
            max_depth: 12,
            min_split_samples: 3,
            candidates_per_node: 2,
        }
    }

    #[test]
    fn single_class_collapses_to_one_leaf() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 1.0]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let labels = vec![0usize; 10];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tree = train_tree(&refs, &labels, 1, &params(), &mut rng);
        assert_eq!(tree.node_count(), 1);
        assert_eq!(tree.predict(&[5.0, 1.0]), &[1.0]);
    }

    #[test]
    fn separable_classes_are_learned_exactly() {
        // Two clusters split on the first coordinate.
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            rows.push(vec![0.1 * i as f64, 0.5]);
            labels.push(0usize);
            rows.push(vec![10.0 + 0.1 * i as f64, 0.5]);
            labels.push(1usize);
        }
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let tree = train_tree(&refs, &labels, 2, &params(), &mut rng);
        for (row, &label) in rows.iter().zip(&labels) {
            let dist = tree.predict(row);
            assert_eq!(dist[label], 1.0, "row {row:?}");
        }
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|i| vec![(i % 7) as f64, (i % 3) as f64])
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let mut rng_a = ChaCha8Rng::seed_from_u64(99);
        let mut rng_b = ChaCha8Rng::seed_from_u64(99);
        let a = train_tree(&refs, &labels, 3, &params(), &mut rng_a);
        let b = train_tree(&refs, &labels, 3, &params(), &mut rng_b);
        for row in &rows {
            assert_eq!(a.predict(row), b.predict(row));
        }
    }

    #[test]
    fn leaf_distributions_sum_to_one() {
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i as f64).sin(), (i as f64).cos(), (i % 5) as f64])
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tree = train_tree(&refs, &labels, 4, &params(), &mut rng);
        for row in &rows {
            let sum: f64 = tree.predict(row).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }
}
