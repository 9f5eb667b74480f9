//! Random forest classifier: bootstrap-bagged CART trees with Gini
//! impurity, per-split feature subsampling and majority vote.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::sim::derive_seed;

use super::PredictError;

const STREAM_TREE: u64 = 21;
const FORMAT_HEADER: &str = "spotarc-forest";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestParams {
    pub trees: usize,
    /// Features tried per split; `None` means the square root of the arity.
    pub max_features: Option<usize>,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            trees: 100,
            max_features: None,
            max_depth: None,
            min_samples_split: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf { class: usize },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { class } => return class,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    pub n_features: usize,
    pub n_classes: usize,
    trees: Vec<Tree>,
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    n_classes: usize,
    max_features: usize,
    max_depth: usize,
    min_samples_split: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

fn majority(counts: &[usize]) -> usize {
    // ties go to the lowest class index
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best
}

impl Builder<'_> {
    fn class_counts(&self, rows: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &r in rows {
            counts[self.y[r]] += 1;
        }
        counts
    }

    /// Best (feature, threshold, weighted child impurity) over a random
    /// feature subset.
    fn best_split(&mut self, rows: &[usize]) -> Option<(usize, f64)> {
        let n_features = self.x[0].len();
        let features = sample(&mut self.rng, n_features, self.max_features.min(n_features));
        let parent = self.class_counts(rows);
        let parent_impurity = gini(&parent, rows.len());
        let mut best: Option<(usize, f64, f64)> = None;
        let mut sorted: Vec<(f64, usize)> = Vec::with_capacity(rows.len());
        for f in features.iter() {
            sorted.clear();
            sorted.extend(rows.iter().map(|&r| (self.x[r][f], self.y[r])));
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = vec![0usize; self.n_classes];
            let mut right = parent.clone();
            let n = sorted.len();
            for i in 0..n - 1 {
                let (v, c) = sorted[i];
                left[c] += 1;
                right[c] -= 1;
                let next = sorted[i + 1].0;
                if next <= v {
                    continue;
                }
                let nl = i + 1;
                let nr = n - nl;
                let score = (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr)) / n as f64;
                if score < parent_impurity - 1e-12 && best.is_none_or(|b| score < b.2) {
                    let mid = v + (next - v) / 2.0;
                    // guard against the midpoint rounding up to `next`
                    let threshold = if mid < next { mid } else { v };
                    best = Some((f, threshold, score));
                }
            }
        }
        best.map(|(f, t, _)| (f, t))
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let counts = self.class_counts(&rows);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { class: majority(&counts) });
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || rows.len() < self.min_samples_split || depth >= self.max_depth {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(&rows) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&i| self.x[i][feature] <= threshold);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = Node::Split { feature, threshold, left, right };
        id
    }
}

impl RandomForest {
    /// Fits the forest. Features must be finite; `y` holds class indices
    /// below `n_classes`.
    pub fn fit(
        x: &[Vec<f64>],
        y: &[usize],
        n_classes: usize,
        params: ForestParams,
        seed: u64,
    ) -> Result<Self, PredictError> {
        if x.len() != y.len() {
            return Err(PredictError::LengthMismatch(x.len(), y.len()));
        }
        let mut seen = vec![false; n_classes];
        for &c in y {
            *seen.get_mut(c).ok_or(PredictError::DegenerateTraining)? = true;
        }
        if seen.iter().filter(|&&s| s).count() < 2 {
            return Err(PredictError::DegenerateTraining);
        }
        let n_features = x[0].len();
        if x.iter().any(|r| r.len() != n_features || r.iter().any(|v| !v.is_finite())) {
            return Err(PredictError::NonFiniteFeature);
        }
        let max_features = params
            .max_features
            .unwrap_or_else(|| ((n_features as f64).sqrt() as usize).max(1));
        let trees = (0..params.trees.max(1) as u64)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_TREE, t));
                let rows: Vec<usize> = (0..x.len()).map(|_| rng.random_range(0..x.len())).collect();
                let mut b = Builder {
                    x,
                    y,
                    n_classes,
                    max_features,
                    max_depth: params.max_depth.unwrap_or(usize::MAX),
                    min_samples_split: params.min_samples_split.max(2),
                    rng,
                    nodes: Vec::new(),
                };
                b.grow(rows, 0);
                Tree { nodes: b.nodes }
            })
            .collect();
        Ok(RandomForest { n_features, n_classes, trees })
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    /// Vote counts per class.
    pub fn votes(&self, x: &[f64]) -> Vec<usize> {
        let mut votes = vec![0; self.n_classes];
        for t in &self.trees {
            votes[t.predict(x)] += 1;
        }
        votes
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        majority(&self.votes(x))
    }

    /// Text dump: a versioned header, then one line per node.
    pub fn dump(&self) -> String {
        let mut out = format!(
            "{FORMAT_HEADER} {FORMAT_VERSION}\nfeatures {}\nclasses {}\ntrees {}\n",
            self.n_features,
            self.n_classes,
            self.trees.len()
        );
        for t in &self.trees {
            let _ = writeln!(out, "tree {}", t.nodes.len());
            for n in &t.nodes {
                let _ = match n {
                    Node::Leaf { class } => writeln!(out, "L {class}"),
                    Node::Split { feature, threshold, left, right } => {
                        writeln!(out, "S {feature} {threshold:?} {left} {right}")
                    }
                };
            }
        }
        out
    }

    /// Reads a dump back; returns the forest and the unread remainder.
    pub fn parse(text: &str) -> Result<(Self, &str), PredictError> {
        let bad = |m: &str| PredictError::ModelFormat(m.to_string());
        let mut rest = text;
        let mut line = || -> Result<&str, PredictError> {
            let (l, r) = rest.split_once('\n').ok_or_else(|| bad("truncated model"))?;
            rest = r;
            Ok(l)
        };
        let header = line()?;
        let version = header
            .strip_prefix(FORMAT_HEADER)
            .map(str::trim)
            .ok_or_else(|| bad("not a forest model"))?;
        if version != FORMAT_VERSION.to_string() {
            return Err(bad(&format!("unsupported model version {version}")));
        }
        let field = |l: &str, name: &str| -> Result<usize, PredictError> {
            l.strip_prefix(name)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| bad(&format!("expected {name}")))
        };
        let n_features = field(line()?, "features")?;
        let n_classes = field(line()?, "classes")?;
        let n_trees = field(line()?, "trees")?;
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            let n_nodes = field(line()?, "tree")?;
            let mut nodes = Vec::with_capacity(n_nodes);
            for _ in 0..n_nodes {
                let parts: Vec<&str> = line()?.split(' ').collect();
                let node = match parts.as_slice() {
                    ["L", c] => Node::Leaf {
                        class: c.parse().map_err(|_| bad("bad leaf"))?,
                    },
                    ["S", f, t, l, r] => Node::Split {
                        feature: f.parse().map_err(|_| bad("bad feature"))?,
                        threshold: t.parse().map_err(|_| bad("bad threshold"))?,
                        left: l.parse().map_err(|_| bad("bad child"))?,
                        right: r.parse().map_err(|_| bad("bad child"))?,
                    },
                    _ => return Err(bad("bad node")),
                };
                nodes.push(node);
            }
            // children always follow their parent
            let valid = nodes.iter().enumerate().all(|(i, n)| match *n {
                Node::Leaf { class } => class < n_classes,
                Node::Split { feature, left, right, .. } => {
                    feature < n_features && left > i && right > i && left.max(right) < nodes.len()
                }
            });
            if nodes.is_empty() || !valid {
                return Err(bad("inconsistent tree"));
            }
            trees.push(Tree { nodes });
        }
        Ok((RandomForest { n_features, n_classes, trees }, rest))
    }
}
