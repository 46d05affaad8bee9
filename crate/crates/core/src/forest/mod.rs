//! Random-forest re-identification: bagged classification trees over
//! appearance descriptors, multi-shot posterior aggregation, the pairwise
//! similarity score, and time-windowed classifier series.

mod series;
mod tree;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::types::{FeatureVector, Gallery, PersonLabel};

pub use series::{
    build_series, query_series, MatchResult, SeriesInput, WindowedForestSeries, RANKING_DEPTH,
};
use tree::{train_tree, DecisionTree, TreeParams};

/// Bagged ensemble of classification trees over one gallery's labels.
#[derive(Clone, Debug)]
pub struct RandomForest {
    trees: Vec<DecisionTree>,
    labels: Vec<PersonLabel>,
    dim: usize,
}

/// Trains a forest on the gallery. Each tree sees a bootstrap sample and
/// examines `ceil(sqrt(dim))` random candidate features per node.
pub fn train_forest(gallery: &Gallery, cfg: &PipelineConfig, seed: u64) -> Result<RandomForest> {
    if gallery.entries.is_empty() {
        return Err(Error::invalid("cannot train a forest on an empty gallery"));
    }
    let dim = gallery.entries[0].feature.dim();
    if gallery.entries.iter().any(|e| e.feature.dim() != dim) {
        return Err(Error::invalid("gallery mixes feature dimensions"));
    }
    let labels: Vec<PersonLabel> = gallery.labels().into_iter().collect();
    let class_of = |l: PersonLabel| labels.binary_search(&l).expect("label present");
    let rows: Vec<&[f64]> = gallery.entries.iter().map(|e| e.feature.values()).collect();
    let classes: Vec<usize> = gallery.entries.iter().map(|e| class_of(e.label)).collect();
    let params = TreeParams {
        max_depth: cfg.max_tree_depth,
        min_split_samples: cfg.min_split_samples,
        candidates_per_node: (dim as f64).sqrt().ceil() as usize,
    };
    let trees = (0..cfg.tree_count)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, t as u64));
            train_tree(&rows, &classes, labels.len(), &params, &mut rng)
        })
        .collect();
    Ok(RandomForest { trees, labels, dim })
}

/// Derives a stream-independent seed for substream `index`.
pub(crate) fn mix_seed(seed: u64, index: u64) -> u64 {
    // SplitMix64 finalizer over the combined value.
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RandomForest {
    /// Labels in ascending order; posterior vectors align to this.
    pub fn labels(&self) -> &[PersonLabel] {
        &self.labels
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Posterior over labels for a single appearance: the average of the
    /// leaf distributions across trees.
    pub fn predict_single(&self, v: &FeatureVector) -> Vec<f64> {
        assert_eq!(v.dim(), self.dim, "probe dimension must match training dimension");
        let mut acc = vec![0.0f64; self.labels.len()];
        for tree in &self.trees {
            for (a, p) in acc.iter_mut().zip(tree.predict(v.values())) {
                *a += p;
            }
        }
        let inv = 1.0 / self.trees.len() as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        acc
    }

    /// Multi-shot posterior: the mean of single-appearance posteriors over
    /// the probe set. Returns the winning label (ties resolve to the
    /// smallest label) and the full posterior.
    pub fn predict_multishot(&self, probe: &[FeatureVector]) -> (PersonLabel, Vec<f64>) {
        assert!(!probe.is_empty(), "probe must contain at least one appearance");
        let mut acc = vec![0.0f64; self.labels.len()];
        for v in probe {
            for (a, p) in acc.iter_mut().zip(self.predict_single(v)) {
                *a += p;
            }
        }
        let inv = 1.0 / probe.len() as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        let best = argmax_first(&acc);
        (self.labels[best], acc)
    }
}

/// Index of the maximum value; the first occurrence wins ties, which maps to
/// the smallest label because label vectors are sorted.
fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Appearance-set similarity: `exp(-min pairwise distance)` over all cross
/// pairs, in `(0, 1]`.
pub fn similarity(a: &[FeatureVector], b: &[FeatureVector]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "similarity needs non-empty sets");
    let mut min = f64::INFINITY;
    for va in a {
        for vb in b {
            let d = va.distance(vb);
            if d < min {
                min = d;
            }
        }
    }
    (-min).exp()
}
