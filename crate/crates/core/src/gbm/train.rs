use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::split::{leaf_weight, scan_sorted};
use super::{logistic_grad_hess, logistic_loss, GbmError, TrainConfig, TreeEnsemble, TreeNode};
use crate::dataset::FeatureVector;

/// Column-major training matrix with 0/1 labels.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub rows: Vec<Vec<f64>>,
    pub columns: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
}

impl TrainData {
    pub fn from_rows(rows: &[FeatureVector]) -> Result<Self, GbmError> {
        let first = rows.first().ok_or(GbmError::EmptyData)?;
        let p = first.values.len();
        let mut columns = vec![Vec::with_capacity(rows.len()); p];
        let mut labels = Vec::with_capacity(rows.len());
        for (i, r) in rows.iter().enumerate() {
            if r.values.len() != p {
                return Err(GbmError::DimensionMismatch {
                    expected: p,
                    got: r.values.len(),
                });
            }
            labels.push(r.label.ok_or(GbmError::Unlabeled(i))?.as_f64());
            for (c, v) in columns.iter_mut().zip(&r.values) {
                c.push(*v);
            }
        }
        Ok(Self {
            rows: rows.iter().map(|r| r.values.clone()).collect(),
            columns,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_count(&self) -> usize {
        self.columns.len()
    }
}

struct TreeBuilder<'a> {
    columns: &'a [Vec<f64>],
    grad: &'a [f64],
    hess: &'a [f64],
    cfg: &'a TrainConfig,
    pool: &'a [usize],
    goes_left: Vec<bool>,
}

impl TreeBuilder<'_> {
    /// `sorted[k]` holds the node's samples ordered by feature `pool[k]`.
    fn build(&mut self, sorted: Vec<Vec<usize>>, depth: usize) -> Result<TreeNode, GbmError> {
        let samples = &sorted[0];
        let g: f64 = samples.iter().map(|&i| self.grad[i]).sum();
        let h: f64 = samples.iter().map(|&i| self.hess[i]).sum();

        let mut best: Option<(usize, f64, f64)> = None;
        if depth < self.cfg.max_depth && samples.len() >= 2 {
            for (k, &f) in self.pool.iter().enumerate() {
                let found = scan_sorted(&sorted[k], &self.columns[f], self.grad, self.hess, (g, h), self.cfg);
                if let Some((thr, gain)) = found {
                    if best.is_none_or(|(_, _, b)| gain > b) {
                        best = Some((k, thr, gain));
                    }
                }
            }
        }

        let Some((k, threshold, _)) = best else {
            let w = leaf_weight(g, h, self.cfg.alpha, self.cfg.lambda_l2)?;
            return Ok(TreeNode::leaf(w, h));
        };
        let feature = self.pool[k];
        let col = &self.columns[feature];
        for &i in samples {
            self.goes_left[i] = col[i] <= threshold;
        }
        let mut left = Vec::with_capacity(sorted.len());
        let mut right = Vec::with_capacity(sorted.len());
        for list in &sorted {
            let (l, r): (Vec<usize>, Vec<usize>) = list.iter().partition(|&&i| self.goes_left[i]);
            left.push(l);
            right.push(r);
        }
        drop(sorted);
        let left = self.build(left, depth + 1)?;
        let right = self.build(right, depth + 1)?;
        Ok(TreeNode::split(feature, threshold, left, right))
    }
}

fn mean_loss(margins: &[f64], labels: &[f64]) -> f64 {
    margins
        .iter()
        .zip(labels)
        .map(|(&m, &y)| logistic_loss(m, y))
        .sum::<f64>()
        / labels.len() as f64
}

/// Trains an ensemble and also returns the mean training loss before the first
/// tree and after every tree.
pub fn train_with_trace(rows: &[FeatureVector], cfg: &TrainConfig) -> Result<(TreeEnsemble, Vec<f64>), GbmError> {
    cfg.validate()?;
    let data = TrainData::from_rows(rows)?;
    let n = data.len();
    let p = data.feature_count();
    let positives = data.labels.iter().filter(|&&y| y == 1.0).count();
    if positives == 0 || positives == n {
        return Err(GbmError::SingleClassData);
    }
    let base_score = cfg.base_score.unwrap_or_else(|| {
        let rate = positives as f64 / n as f64;
        (rate / (1.0 - rate)).ln()
    });

    let presorted: Vec<Vec<usize>> = data
        .columns
        .iter()
        .map(|col| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rows_per_tree = ((cfg.subsample * n as f64).round() as usize).clamp(1, n);
    let cols_per_tree = ((cfg.colsample_bytree * p as f64).round() as usize).clamp(1, p);

    let mut margins = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut in_sample = vec![false; n];
    let mut trace = Vec::with_capacity(cfg.n_estimators + 1);
    trace.push(mean_loss(&margins, &data.labels));
    let mut trees = Vec::with_capacity(cfg.n_estimators);

    for _ in 0..cfg.n_estimators {
        for i in 0..n {
            (grad[i], hess[i]) = logistic_grad_hess(margins[i], data.labels[i]);
        }
        if rows_per_tree == n {
            in_sample.fill(true);
        } else {
            in_sample.fill(false);
            for i in index::sample(&mut rng, n, rows_per_tree) {
                in_sample[i] = true;
            }
        }
        let mut pool: Vec<usize> = if cols_per_tree == p {
            (0..p).collect()
        } else {
            index::sample(&mut rng, p, cols_per_tree).into_vec()
        };
        pool.sort_unstable();

        let sorted: Vec<Vec<usize>> = pool
            .iter()
            .map(|&f| presorted[f].iter().copied().filter(|&i| in_sample[i]).collect())
            .collect();
        let mut builder = TreeBuilder {
            columns: &data.columns,
            grad: &grad,
            hess: &hess,
            cfg,
            pool: &pool,
            goes_left: vec![false; n],
        };
        let tree = builder.build(sorted, 0)?;

        for (m, row) in margins.iter_mut().zip(&data.rows) {
            *m += cfg.learning_rate * tree.eval(row);
        }
        trace.push(mean_loss(&margins, &data.labels));
        trees.push(tree);
    }

    Ok((
        TreeEnsemble {
            trees,
            learning_rate: cfg.learning_rate,
            base_score,
            feature_count: p,
        },
        trace,
    ))
}

pub fn train_ensemble(rows: &[FeatureVector], cfg: &TrainConfig) -> Result<TreeEnsemble, GbmError> {
    train_with_trace(rows, cfg).map(|(m, _)| m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SleepLabel;

    fn conjunction_rows() -> Vec<FeatureVector> {
        let mut rows = Vec::new();
        for rep in 0..10 {
            for a in 0..2 {
                for b in 0..2 {
                    let label = SleepLabel::from_bool(a == 1 && b == 1);
                    rows.push(FeatureVector::new(vec![a as f64, b as f64, (rep % 3) as f64], label));
                }
            }
        }
        rows
    }

    fn full_cfg() -> TrainConfig {
        TrainConfig {
            n_estimators: 20,
            learning_rate: 0.3,
            max_depth: 2,
            subsample: 1.0,
            colsample_bytree: 1.0,
            min_child_weight: 0.0,
            alpha: 0.0,
            lambda_l2: 1.0,
            ..Default::default()
        }
    }

    #[test]
    fn learns_conjunction_with_depth_two() {
        let rows = conjunction_rows();
        let model = train_ensemble(&rows, &full_cfg()).unwrap();
        for r in &rows {
            assert_eq!(model.classify(&r.values).unwrap(), r.label.unwrap().as_u8());
        }
    }

    #[test]
    fn loss_never_increases_with_full_sampling() {
        let (_, trace) = train_with_trace(&conjunction_rows(), &full_cfg()).unwrap();
        assert_eq!(trace.len(), 21);
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn single_class_and_empty_rejected() {
        let rows: Vec<FeatureVector> = (0..5)
            .map(|i| FeatureVector::new(vec![i as f64], SleepLabel::Good))
            .collect();
        assert_eq!(train_ensemble(&rows, &full_cfg()), Err(GbmError::SingleClassData));
        assert_eq!(train_ensemble(&[], &full_cfg()), Err(GbmError::EmptyData));
    }

    #[test]
    fn invariants_hold_after_training() {
        let cfg = TrainConfig {
            seed: 5,
            ..Default::default()
        };
        let model = train_ensemble(&conjunction_rows(), &cfg).unwrap();
        model.validate().unwrap();
        for t in &model.trees {
            assert!(t.depth() <= cfg.max_depth);
        }
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let cfg = TrainConfig {
            seed: 11,
            ..Default::default()
        };
        let a = train_ensemble(&conjunction_rows(), &cfg).unwrap();
        let b = train_ensemble(&conjunction_rows(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn explicit_base_score_is_used() {
        let cfg = TrainConfig {
            base_score: Some(0.25),
            ..full_cfg()
        };
        assert_eq!(train_ensemble(&conjunction_rows(), &cfg).unwrap().base_score, 0.25);
    }
}
