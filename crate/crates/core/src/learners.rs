//! Gradient-boosted regression trees.
//!
//! Regression boosts squared error on residuals. Classification keeps one
//! additive score per class and boosts the multiclass logistic loss with
//! per-class trees fitted to `y − p`, using the one-step Newton leaf values
//! `(K−1)/K · Σr / Σ|r|(1−|r|)`. Split search is an exact scan over the
//! sorted distinct values of every feature; ties go to the lowest feature
//! index, then the lowest threshold. Rows go left when `x < threshold`.
//!
//! Features are scanned column-wise over their nonzero entries only, so the
//! cost of a tree level is proportional to the number of nonzeros rather
//! than `rows × columns`. TFIDF blocks are mostly zeros.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ENSEMBLE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbtConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
}

impl Default for GbtConfig {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: 3,
            learning_rate: 0.1,
            min_leaf: 5,
        }
    }
}

impl GbtConfig {
    fn validate(&self) -> Result<()> {
        if self.max_depth == 0 || self.min_leaf == 0 {
            return Err(Error::Config("max_depth and min_leaf must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::Config(format!("learning rate {} not in (0, 1]", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Task {
    Regression,
    Classification { n_classes: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// Regression tree stored as a node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Self {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] < *threshold { *left } else { *right },
            }
        }
    }

    fn is_trivial(&self) -> bool {
        matches!(self.nodes.as_slice(), [Node::Leaf { value }] if *value == 0.0)
    }
}

/// Output of [`GbtEnsemble::predict`].
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Value(f64),
    Probabilities(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtEnsemble {
    pub version: u32,
    pub task: Task,
    pub n_features: usize,
    pub learning_rate: f64,
    /// One entry per output (1 for regression, K for classification).
    pub base_scores: Vec<f64>,
    /// `rounds[r][k]` is the tree of round `r` for output `k`.
    pub rounds: Vec<Vec<Tree>>,
    /// Training loss after each round (mean squared error or mean
    /// cross-entropy); the first entry is the base-only loss.
    #[serde(default)]
    pub loss_history: Vec<f64>,
}

impl GbtEnsemble {
    /// Ensemble from explicit parts, for hand-built models.
    pub fn from_parts(task: Task, n_features: usize, learning_rate: f64, base_scores: Vec<f64>, rounds: Vec<Vec<Tree>>) -> Self {
        Self {
            version: ENSEMBLE_VERSION,
            task,
            n_features,
            learning_rate,
            base_scores,
            rounds,
            loss_history: Vec::new(),
        }
    }

    pub fn n_outputs(&self) -> usize {
        self.base_scores.len()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::Domain(format!(
                "feature vector has {} entries, model expects {}",
                x.len(),
                self.n_features
            )));
        }
        Ok(())
    }

    /// Additive scores `base + lr·Σ trees`, one per output.
    pub fn raw_scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut out = self.base_scores.clone();
        for round in &self.rounds {
            for (k, tree) in round.iter().enumerate() {
                out[k] += self.learning_rate * tree.evaluate(x);
            }
        }
        Ok(out)
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let raw = self.raw_scores(x)?;
        Ok(match self.task {
            Task::Regression => Prediction::Value(raw[0]),
            Task::Classification { .. } => Prediction::Probabilities(softmax(&raw)),
        })
    }

    pub fn predict_value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.raw_scores(x)?[0])
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.raw_scores(x)?))
    }

    /// Most probable class; the lowest index wins ties.
    pub fn predict_class(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.raw_scores(x)?))
    }
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Column-major view of the nonzero entries, sorted by value.
struct Columns {
    /// `(value, row)` per feature, ascending by value then row.
    entries: Vec<Vec<(f64, u32)>>,
    /// Index of the first positive entry in each column.
    first_positive: Vec<usize>,
}

impl Columns {
    fn new(x: &[Vec<f64>], n_features: usize) -> Self {
        let mut entries: Vec<Vec<(f64, u32)>> = vec![Vec::new(); n_features];
        for (i, row) in x.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if *v != 0.0 {
                    entries[j].push((*v, i as u32));
                }
            }
        }
        let mut first_positive = Vec::with_capacity(n_features);
        for col in entries.iter_mut() {
            col.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            first_positive.push(col.partition_point(|(v, _)| *v < 0.0));
        }
        Self { entries, first_positive }
    }
}

#[derive(Clone, Copy, Default)]
struct Stats {
    sum: f64,
    count: usize,
}

impl Stats {
    fn add(&mut self, g: f64) {
        self.sum += g;
        self.count += 1;
    }

    fn score(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum * self.sum / self.count as f64
        }
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Per-node scan state while sweeping one column.
#[derive(Clone, Copy, Default)]
struct Sweep {
    left: Stats,
    prev: Option<f64>,
}

fn split_threshold(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid > lo && mid < hi {
        mid
    } else {
        hi
    }
}

/// Grows one tree on `targets` over the rows in `rows`, computing leaf
/// values with `leaf_value(rows_in_leaf)`.
fn grow_tree(
    x: &[Vec<f64>],
    columns: &Columns,
    targets: &[f64],
    cfg: &GbtConfig,
    leaf_value: &dyn Fn(&[usize]) -> f64,
) -> Tree {
    let n = targets.len();
    // Node currently holding each row; `usize::MAX` once the row sits in a leaf.
    let mut node_of = vec![0usize; n];
    let mut nodes: Vec<Node> = vec![Node::Leaf { value: 0.0 }];
    let mut members: Vec<Vec<usize>> = vec![(0..n).collect()];
    let mut frontier: Vec<usize> = vec![0];

    for _depth in 0..cfg.max_depth {
        if frontier.is_empty() {
            break;
        }
        // Local slot of each frontier node.
        let slot_of = |node: usize| frontier.iter().position(|&f| f == node);
        let totals: Vec<Stats> = frontier
            .iter()
            .map(|&f| {
                let mut s = Stats::default();
                for &r in &members[f] {
                    s.add(targets[r]);
                }
                s
            })
            .collect();
        let slots: Vec<Option<usize>> = (0..nodes.len()).map(slot_of).collect();
        let mut best: Vec<Option<Candidate>> = vec![None; frontier.len()];

        for (feature, col) in columns.entries.iter().enumerate() {
            let mut nonzero = vec![Stats::default(); frontier.len()];
            for &(_, r) in col {
                let node = node_of[r as usize];
                if node == usize::MAX {
                    continue;
                }
                if let Some(s) = slots[node] {
                    nonzero[s].add(targets[r as usize]);
                }
            }
            let mut sweep = vec![Sweep::default(); frontier.len()];
            let mut consider = |s: usize, value: f64, sweep: &mut Sweep, best: &mut Vec<Option<Candidate>>| {
                if let Some(prev) = sweep.prev {
                    if value > prev {
                        let total = totals[s];
                        let left = sweep.left;
                        let right = Stats {
                            sum: total.sum - left.sum,
                            count: total.count - left.count,
                        };
                        if left.count >= cfg.min_leaf && right.count >= cfg.min_leaf {
                            let gain = left.score() + right.score() - total.score();
                            if gain > 1e-12 && best[s].is_none_or(|b| gain > b.gain) {
                                best[s] = Some(Candidate {
                                    gain,
                                    feature,
                                    threshold: split_threshold(prev, value),
                                });
                            }
                        }
                    }
                }
                sweep.prev = Some(value);
            };
            let fp = columns.first_positive[feature];
            let visit = |range: &[(f64, u32)], sweep: &mut Vec<Sweep>, best: &mut Vec<Option<Candidate>>, consider: &mut dyn FnMut(usize, f64, &mut Sweep, &mut Vec<Option<Candidate>>)| {
                for &(v, r) in range {
                    let node = node_of[r as usize];
                    if node == usize::MAX {
                        continue;
                    }
                    if let Some(s) = slots[node] {
                        consider(s, v, &mut sweep[s], best);
                        sweep[s].left.add(targets[r as usize]);
                    }
                }
            };
            visit(&col[..fp], &mut sweep, &mut best, &mut consider);
            for s in 0..frontier.len() {
                let zeros = Stats {
                    sum: totals[s].sum - nonzero[s].sum,
                    count: totals[s].count - nonzero[s].count,
                };
                if zeros.count > 0 {
                    consider(s, 0.0, &mut sweep[s], &mut best);
                    sweep[s].left.sum += zeros.sum;
                    sweep[s].left.count += zeros.count;
                }
            }
            visit(&col[fp..], &mut sweep, &mut best, &mut consider);
        }

        let mut next = Vec::new();
        for (s, &node) in frontier.iter().enumerate() {
            match best[s] {
                Some(c) => {
                    let (l, r) = (nodes.len(), nodes.len() + 1);
                    nodes.push(Node::Leaf { value: 0.0 });
                    nodes.push(Node::Leaf { value: 0.0 });
                    members.push(Vec::new());
                    members.push(Vec::new());
                    let rows = std::mem::take(&mut members[node]);
                    for row in rows {
                        let child = if x[row][c.feature] < c.threshold { l } else { r };
                        node_of[row] = child;
                        members[child].push(row);
                    }
                    nodes[node] = Node::Split {
                        feature: c.feature,
                        threshold: c.threshold,
                        left: l,
                        right: r,
                    };
                    next.push(l);
                    next.push(r);
                }
                None => {
                    nodes[node] = Node::Leaf {
                        value: leaf_value(&members[node]),
                    };
                    for &row in &members[node] {
                        node_of[row] = usize::MAX;
                    }
                }
            }
        }
        frontier = next;
    }
    for &node in &frontier {
        nodes[node] = Node::Leaf {
            value: leaf_value(&members[node]),
        };
    }
    Tree { nodes }
}

fn check_matrix(x: &[Vec<f64>], n_targets: usize) -> Result<usize> {
    if x.len() != n_targets {
        return Err(Error::Domain(format!("{} feature rows but {} targets", x.len(), n_targets)));
    }
    if x.len() < 2 {
        return Err(Error::Domain("need at least two training rows".into()));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::Domain("feature rows have different lengths".into()));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Domain("feature matrix contains non-finite values".into()));
    }
    Ok(d)
}

fn mse(pred: &[f64], y: &[f64]) -> f64 {
    pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / y.len() as f64
}

/// Least-squares boosting. A constant target yields a base-only ensemble.
pub fn fit_regression(x: &[Vec<f64>], y: &[f64], cfg: &GbtConfig) -> Result<GbtEnsemble> {
    cfg.validate()?;
    let d = check_matrix(x, y.len())?;
    let columns = Columns::new(x, d);
    let base = y.iter().sum::<f64>() / y.len() as f64;
    let mut pred = vec![base; y.len()];
    let mut ensemble = GbtEnsemble::from_parts(Task::Regression, d, cfg.learning_rate, vec![base], Vec::new());
    ensemble.loss_history.push(mse(&pred, y));
    for _ in 0..cfg.n_trees {
        let residual: Vec<f64> = y.iter().zip(&pred).map(|(t, p)| t - p).collect();
        let leaf = |rows: &[usize]| {
            if rows.is_empty() {
                0.0
            } else {
                rows.iter().map(|&r| residual[r]).sum::<f64>() / rows.len() as f64
            }
        };
        let tree = grow_tree(x, &columns, &residual, cfg, &leaf);
        if tree.is_trivial() || residual.iter().all(|r| r.abs() < 1e-15) {
            break;
        }
        for (i, row) in x.iter().enumerate() {
            pred[i] += cfg.learning_rate * tree.evaluate(row);
        }
        ensemble.rounds.push(vec![tree]);
        ensemble.loss_history.push(mse(&pred, y));
    }
    Ok(ensemble)
}

fn cross_entropy(scores: &[Vec<f64>], y: &[usize]) -> f64 {
    scores
        .iter()
        .zip(y)
        .map(|(s, &c)| -softmax(s)[c].max(1e-300).ln())
        .sum::<f64>()
        / y.len() as f64
}

/// Multiclass logistic boosting with `max(label) + 1` classes, or
/// `n_classes` when given.
pub fn fit_classification(x: &[Vec<f64>], y: &[usize], n_classes: Option<usize>, cfg: &GbtConfig) -> Result<GbtEnsemble> {
    cfg.validate()?;
    let d = check_matrix(x, y.len())?;
    let observed = y.iter().copied().max().unwrap_or(0) + 1;
    let k = n_classes.unwrap_or(observed);
    if observed > k {
        return Err(Error::Domain(format!("label {} out of range for {k} classes", observed - 1)));
    }
    let n = y.len();
    let mut counts = vec![0usize; k];
    for &c in y {
        counts[c] += 1;
    }
    let base: Vec<f64> = counts.iter().map(|&c| (c as f64 / n as f64).max(1e-12).ln()).collect();
    let mut ensemble = GbtEnsemble::from_parts(Task::Classification { n_classes: k }, d, cfg.learning_rate, base.clone(), Vec::new());
    let mut scores = vec![base; n];
    ensemble.loss_history.push(cross_entropy(&scores, y));
    if k == 1 {
        return Ok(ensemble);
    }
    let columns = Columns::new(x, d);
    let scale = (k as f64 - 1.0) / k as f64;
    for _ in 0..cfg.n_trees {
        let probs: Vec<Vec<f64>> = scores.iter().map(|s| softmax(s)).collect();
        let mut round = Vec::with_capacity(k);
        for class in 0..k {
            let residual: Vec<f64> = probs
                .iter()
                .zip(y)
                .map(|(p, &c)| f64::from(u8::from(c == class)) - p[class])
                .collect();
            let leaf = |rows: &[usize]| {
                let num: f64 = rows.iter().map(|&r| residual[r]).sum();
                let den: f64 = rows.iter().map(|&r| residual[r].abs() * (1.0 - residual[r].abs())).sum();
                if den < 1e-12 {
                    0.0
                } else {
                    scale * num / den
                }
            };
            round.push(grow_tree(x, &columns, &residual, cfg, &leaf));
        }
        if round.iter().all(Tree::is_trivial) {
            break;
        }
        for (i, row) in x.iter().enumerate() {
            for (class, tree) in round.iter().enumerate() {
                scores[i][class] += cfg.learning_rate * tree.evaluate(row);
            }
        }
        ensemble.rounds.push(round);
        ensemble.loss_history.push(cross_entropy(&scores, y));
    }
    Ok(ensemble)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn cfg(n_trees: usize, max_depth: usize, min_leaf: usize) -> GbtConfig {
        GbtConfig {
            n_trees,
            max_depth,
            learning_rate: 0.1,
            min_leaf,
        }
    }

    #[test]
    fn constant_target_is_base_only() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let y = vec![0.5; 20];
        let m = fit_regression(&x, &y, &GbtConfig::default()).unwrap();
        assert!(m.rounds.is_empty());
        for row in &x {
            assert_eq!(m.predict_value(row).unwrap(), 0.5);
        }
    }

    #[test]
    fn step_function_fit() {
        let x: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64 / 100.0]).collect();
        let y: Vec<f64> = x.iter().map(|r| if r[0] < 0.37 { 0.0 } else { 1.0 }).collect();
        let m = fit_regression(&x, &y, &cfg(50, 1, 1)).unwrap();
        let pred: Vec<f64> = x.iter().map(|r| m.predict_value(r).unwrap()).collect();
        assert!(mse(&pred, &y) < 0.01, "mse {}", mse(&pred, &y));
    }

    #[test]
    fn training_loss_never_increases() {
        let mut rng = rng::stream(11);
        let x: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.random(), rng.random(), 0.0]).collect();
        let y: Vec<f64> = x.iter().map(|r| (6.0 * r[0]).sin() + r[1] * r[1]).collect();
        let m = fit_regression(&x, &y, &cfg(60, 3, 5)).unwrap();
        for w in m.loss_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        let labels: Vec<usize> = x.iter().map(|r| usize::from(r[0] > 0.5) + usize::from(r[1] > 0.7)).collect();
        let c = fit_classification(&x, &labels, None, &cfg(40, 3, 5)).unwrap();
        for w in c.loss_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{:?}", w);
        }
    }

    #[test]
    fn more_trees_never_hurt_training_mse() {
        let mut rng = rng::stream(12);
        let x: Vec<Vec<f64>> = (0..150).map(|_| vec![rng.random(), rng.random()]).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0] * 3.0 - r[1] + rng.random::<f64>() * 0.1).collect();
        let mut last = f64::INFINITY;
        for n in [1, 5, 20, 60] {
            let m = fit_regression(&x, &y, &cfg(n, 2, 5)).unwrap();
            let pred: Vec<f64> = x.iter().map(|r| m.predict_value(r).unwrap()).collect();
            let e = mse(&pred, &y);
            assert!(e <= last + 1e-12);
            last = e;
        }
    }

    #[test]
    fn separable_classes_fit_exactly() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64]).collect();
        let y: Vec<usize> = (0..40).map(|i| usize::from(i >= 20)).collect();
        let m = fit_classification(&x, &y, None, &GbtConfig::default()).unwrap();
        for (row, &label) in x.iter().zip(&y) {
            assert_eq!(m.predict_class(row).unwrap(), label);
            let p = m.predict_proba(row).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn uninformative_features_predict_majority() {
        let mut rng = rng::stream(13);
        let n = 2000;
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random(), rng.random()]).collect();
        let y: Vec<usize> = (0..n).map(|_| usize::from(rng.random::<f64>() < 0.3)).collect();
        let m = fit_classification(&x, &y, None, &cfg(30, 2, 50)).unwrap();
        let test: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random(), rng.random()]).collect();
        let majority = test.iter().filter(|r| m.predict_class(r).unwrap() == 0).count() as f64 / n as f64;
        assert!(majority > 0.9, "majority-class share {majority}");
    }

    #[test]
    fn single_class_always_predicted() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let m = fit_classification(&x, &[0; 10], None, &GbtConfig::default()).unwrap();
        assert_eq!(m.predict_class(&[3.0]).unwrap(), 0);
        assert_eq!(m.predict_proba(&[3.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn hand_built_ensemble() {
        let tree = Tree {
            nodes: vec![
                Node::Split {
                    feature: 0,
                    threshold: 0.5,
                    left: 1,
                    right: 2,
                },
                Node::Leaf { value: -1.0 },
                Node::Leaf { value: 1.0 },
            ],
        };
        let m = GbtEnsemble::from_parts(Task::Regression, 1, 0.1, vec![0.0], vec![vec![tree]]);
        assert!((m.predict_value(&[0.7]).unwrap() - 0.1).abs() < 1e-15);
        assert!((m.predict_value(&[0.2]).unwrap() + 0.1).abs() < 1e-15);
        assert_eq!(m.predict(&[0.7]).unwrap(), m.predict(&[0.7]).unwrap());
        let base = GbtEnsemble::from_parts(Task::Regression, 1, 0.1, vec![0.25], Vec::new());
        assert_eq!(base.predict_value(&[9.0]).unwrap(), 0.25);
    }

    #[test]
    fn dimension_mismatch_is_a_domain_error() {
        let m = GbtEnsemble::from_parts(Task::Regression, 2, 0.1, vec![0.0], Vec::new());
        assert!(matches!(m.predict(&[1.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn negative_and_zero_values_split_correctly() {
        let x: Vec<Vec<f64>> = [-2.0, -1.0, 0.0, 0.0, 1.0, 2.0].iter().map(|v| vec![*v]).collect();
        let y = [1.0, 1.0, 5.0, 5.0, 9.0, 9.0];
        let m = fit_regression(&x, &y, &GbtConfig { n_trees: 300, max_depth: 2, learning_rate: 0.5, min_leaf: 1 }).unwrap();
        for (row, t) in x.iter().zip(y) {
            assert!((m.predict_value(row).unwrap() - t).abs() < 1e-6);
        }
    }

    #[test]
    fn serialization_roundtrip() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, (i % 3) as f64]).collect();
        let y: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let m = fit_classification(&x, &y, None, &cfg(5, 2, 2)).unwrap();
        let back: GbtEnsemble = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
