//! Seeded synthetic datasets with community structure, used by tests,
//! benchmarks and the command-line `synth` helper.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data_io::{Dataset, Split, SplitTag};
use crate::error::{GdrError, Result};
use crate::graph::SparseGraph;
use crate::sparse::CsrMatrix;

/// Parameters of a planted-partition graph with bag-of-words features.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedPartition {
    pub n_nodes: usize,
    pub n_classes: usize,
    /// Expected degree of a node.
    pub mean_degree: f64,
    /// Fraction of a node's edges that stay inside its class.
    pub homophily: f64,
    pub n_features: usize,
    /// Active features per node.
    pub words_per_node: usize,
    /// Probability that an active feature is drawn from the node's class
    /// vocabulary rather than uniformly.
    pub feature_signal: f64,
    pub train_per_class: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Keep edges oriented (each sampled pair becomes one arc).
    pub directed: bool,
    pub seed: u64,
}

impl Default for PlantedPartition {
    fn default() -> Self {
        PlantedPartition {
            n_nodes: 300,
            n_classes: 3,
            mean_degree: 4.0,
            homophily: 0.8,
            n_features: 60,
            words_per_node: 6,
            feature_signal: 0.5,
            train_per_class: 10,
            n_val: 60,
            n_test: 120,
            directed: false,
            seed: 0,
        }
    }
}

impl PlantedPartition {
    pub fn generate(&self) -> Result<Dataset> {
        let n = self.n_nodes;
        let c = self.n_classes;
        if c == 0 || n < c {
            return Err(GdrError::Parameter("need at least one node per class".into()));
        }
        if self.train_per_class * c + self.n_val + self.n_test > n {
            return Err(GdrError::Parameter("split sizes exceed the node count".into()));
        }
        if !(0.0..=1.0).contains(&self.homophily) || !(0.0..=1.0).contains(&self.feature_signal) {
            return Err(GdrError::Parameter("probabilities must lie in [0, 1]".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
        let members: Vec<Vec<usize>> = (0..c)
            .map(|k| (0..n).filter(|&i| labels[i] == k).collect())
            .collect();

        let n_pairs = (self.mean_degree * n as f64 / 2.0).round() as usize;
        let mut pairs = std::collections::BTreeSet::new();
        let mut attempts = 0;
        while pairs.len() < n_pairs && attempts < 50 * n_pairs.max(1) {
            attempts += 1;
            let u = rng.gen_range(0..n);
            let v = if rng.gen::<f64>() < self.homophily {
                let same = &members[labels[u]];
                same[rng.gen_range(0..same.len())]
            } else {
                rng.gen_range(0..n)
            };
            if u == v {
                continue;
            }
            let key = if self.directed {
                (u, v)
            } else {
                (u.min(v), u.max(v))
            };
            if !self.directed && pairs.contains(&key) {
                continue;
            }
            if self.directed && (pairs.contains(&(u, v)) || pairs.contains(&(v, u))) {
                continue;
            }
            pairs.insert(key);
        }
        let graph = if self.directed {
            SparseGraph::new(n, pairs.iter().map(|&(u, v)| (u, v, 1.0)), true)?
        } else {
            SparseGraph::undirected_from_pairs(n, pairs.iter().map(|&(u, v)| (u, v, 1.0)))?
        };

        let f = self.n_features;
        let vocab = (f / c).max(1);
        let mut triplets = Vec::new();
        for (i, &class) in labels.iter().enumerate() {
            let mut words = std::collections::BTreeSet::new();
            while words.len() < self.words_per_node.min(f) {
                let w = if rng.gen::<f64>() < self.feature_signal {
                    (class * vocab + rng.gen_range(0..vocab)) % f
                } else {
                    rng.gen_range(0..f)
                };
                words.insert(w);
            }
            triplets.extend(words.into_iter().map(|w| (i, w, 1.0)));
        }
        let features = CsrMatrix::from_triplets(n, f, &triplets);

        // Training nodes: the first `train_per_class` members of each class,
        // then validation and test nodes in a seeded shuffled order.
        let mut tags = vec![SplitTag::Unlabeled; n];
        for m in &members {
            for &i in m.iter().take(self.train_per_class) {
                tags[i] = SplitTag::Train;
            }
        }
        let mut rest: Vec<usize> = (0..n).filter(|&i| tags[i] != SplitTag::Train).collect();
        rest.shuffle(&mut rng);
        for &i in rest.iter().take(self.n_val) {
            tags[i] = SplitTag::Val;
        }
        for &i in rest.iter().skip(self.n_val).take(self.n_test) {
            tags[i] = SplitTag::Test;
        }

        Ok(Dataset {
            name: format!("planted-{n}-{c}-{}", self.seed),
            graph,
            features,
            labels: labels.into_iter().map(Some).collect(),
            split: Split::new(tags)?,
            n_classes: c,
        })
    }
}
