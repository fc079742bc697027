use std::cmp::Ordering;
use std::io::Write;
use std::thread;

use serde::{Deserialize, Serialize};

use super::{evaluate, train_ensemble, GbmError, Metrics, TrainConfig};
use crate::dataset::FeatureVector;

/// Candidate values for each tuned hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGrid {
    pub n_estimators: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub max_depth: Vec<usize>,
    pub subsample: Vec<f64>,
    pub colsample_bytree: Vec<f64>,
    pub min_child_weight: Vec<f64>,
    pub alpha: Vec<f64>,
    pub lambda_l2: Vec<f64>,
}

impl ParamGrid {
    /// The published search space (576 cells).
    pub fn standard() -> Self {
        Self {
            n_estimators: vec![50, 100],
            learning_rate: vec![0.01, 0.05, 0.1],
            max_depth: vec![2, 3, 4],
            subsample: vec![0.6, 0.8],
            colsample_bytree: vec![0.6, 0.8],
            min_child_weight: vec![3.0, 5.0],
            alpha: vec![0.1, 1.0],
            lambda_l2: vec![0.1, 1.0],
        }
    }

    /// A grid with a single cell equal to `cfg`.
    pub fn single(cfg: &TrainConfig) -> Self {
        Self {
            n_estimators: vec![cfg.n_estimators],
            learning_rate: vec![cfg.learning_rate],
            max_depth: vec![cfg.max_depth],
            subsample: vec![cfg.subsample],
            colsample_bytree: vec![cfg.colsample_bytree],
            min_child_weight: vec![cfg.min_child_weight],
            alpha: vec![cfg.alpha],
            lambda_l2: vec![cfg.lambda_l2],
        }
    }

    pub fn size(&self) -> usize {
        self.n_estimators.len()
            * self.learning_rate.len()
            * self.max_depth.len()
            * self.subsample.len()
            * self.colsample_bytree.len()
            * self.min_child_weight.len()
            * self.alpha.len()
            * self.lambda_l2.len()
    }

    /// Cartesian product in a fixed nesting order; `base` supplies gamma,
    /// base_score and seed.
    pub fn cells(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        let mut out = Vec::with_capacity(self.size());
        for &n_estimators in &self.n_estimators {
            for &learning_rate in &self.learning_rate {
                for &max_depth in &self.max_depth {
                    for &subsample in &self.subsample {
                        for &colsample_bytree in &self.colsample_bytree {
                            for &min_child_weight in &self.min_child_weight {
                                for &alpha in &self.alpha {
                                    for &lambda_l2 in &self.lambda_l2 {
                                        out.push(TrainConfig {
                                            n_estimators,
                                            learning_rate,
                                            max_depth,
                                            subsample,
                                            colsample_bytree,
                                            min_child_weight,
                                            alpha,
                                            lambda_l2,
                                            ..base.clone()
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub cell: usize,
    pub config: TrainConfig,
    pub metrics: Option<Metrics>,
    pub error: Option<String>,
}

impl LeaderboardRow {
    fn f1(&self) -> Option<f64> {
        self.metrics.as_ref().map(|m| m.f1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: TrainConfig,
    pub best_metrics: Metrics,
    /// Best first.
    pub leaderboard: Vec<LeaderboardRow>,
}

/// Leaderboard order: higher validation F1, then fewer trees, shallower
/// depth, lower learning rate, and finally lower cell index. Failed cells sort last.
pub fn rank(a: &LeaderboardRow, b: &LeaderboardRow) -> Ordering {
    let by_f1 = match (a.f1(), b.f1()) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    };
    by_f1
        .then(a.config.n_estimators.cmp(&b.config.n_estimators))
        .then(a.config.max_depth.cmp(&b.config.max_depth))
        .then(a.config.learning_rate.total_cmp(&b.config.learning_rate))
        .then(a.cell.cmp(&b.cell))
}

fn run_cell(cell: usize, config: TrainConfig, train: &[FeatureVector], val: &[FeatureVector]) -> LeaderboardRow {
    let outcome = train_ensemble(train, &config).and_then(|m| evaluate(&m, val));
    let (metrics, error) = match outcome {
        Ok(m) => (Some(m), None),
        Err(e) => (None, Some(e.to_string())),
    };
    LeaderboardRow {
        cell,
        config,
        metrics,
        error,
    }
}

/// Trains every cell on `train`, scores it on `val`, and returns the ranked
/// leaderboard. Cells run on a small thread pool; results are merged by cell
/// index so the outcome does not depend on scheduling.
pub fn grid_search(
    train: &[FeatureVector],
    val: &[FeatureVector],
    grid: &ParamGrid,
    base: &TrainConfig,
) -> Result<GridResult, GbmError> {
    let cells = grid.cells(base);
    if cells.is_empty() {
        return Err(GbmError::InvalidConfig("grid has no cells".into()));
    }
    if train.is_empty() || val.is_empty() {
        return Err(GbmError::EmptyData);
    }
    let workers = thread::available_parallelism().map_or(1, |n| n.get()).min(cells.len());
    let mut rows: Vec<LeaderboardRow> = if workers <= 1 {
        cells
            .into_iter()
            .enumerate()
            .map(|(i, c)| run_cell(i, c, train, val))
            .collect()
    } else {
        let indexed: Vec<(usize, TrainConfig)> = cells.into_iter().enumerate().collect();
        let chunk = indexed.len().div_ceil(workers);
        thread::scope(|s| {
            let handles: Vec<_> = indexed
                .chunks(chunk)
                .map(|part| {
                    s.spawn(move || {
                        part.iter()
                            .map(|(i, c)| run_cell(*i, c.clone(), train, val))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("grid worker panicked"))
                .collect()
        })
    };
    rows.sort_by(rank);
    let top = &rows[0];
    let Some(best_metrics) = top.metrics.clone() else {
        return Err(GbmError::InvalidConfig(format!(
            "every grid cell failed; first error: {}",
            top.error.clone().unwrap_or_default()
        )));
    };
    Ok(GridResult {
        best: top.config.clone(),
        best_metrics,
        leaderboard: rows,
    })
}

pub fn write_leaderboard_csv<W: Write>(rows: &[LeaderboardRow], out: W) -> Result<(), GbmError> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| GbmError::Io(e.to_string());
    w.write_record([
        "rank",
        "cell",
        "n_estimators",
        "learning_rate",
        "max_depth",
        "subsample",
        "colsample_bytree",
        "min_child_weight",
        "alpha",
        "lambda_l2",
        "gamma",
        "seed",
        "accuracy",
        "precision",
        "recall",
        "f1",
        "tp",
        "fp",
        "tn",
        "fn",
        "error",
    ])
    .map_err(io)?;
    for (rank, r) in rows.iter().enumerate() {
        let c = &r.config;
        let mut rec = vec![
            (rank + 1).to_string(),
            r.cell.to_string(),
            c.n_estimators.to_string(),
            c.learning_rate.to_string(),
            c.max_depth.to_string(),
            c.subsample.to_string(),
            c.colsample_bytree.to_string(),
            c.min_child_weight.to_string(),
            c.alpha.to_string(),
            c.lambda_l2.to_string(),
            c.gamma.to_string(),
            c.seed.to_string(),
        ];
        match &r.metrics {
            Some(m) => rec.extend([
                m.accuracy.to_string(),
                m.precision.to_string(),
                m.recall.to_string(),
                m.f1.to_string(),
                m.confusion.tp.to_string(),
                m.confusion.fp.to_string(),
                m.confusion.tn.to_string(),
                m.confusion.fn_.to_string(),
            ]),
            None => rec.extend(std::iter::repeat_n(String::new(), 8)),
        }
        rec.push(r.error.clone().unwrap_or_default());
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| GbmError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gbm::Confusion;

    #[test]
    fn standard_grid_is_full_cartesian_product() {
        let g = ParamGrid::standard();
        assert_eq!(g.size(), 2 * 3 * 3 * 2 * 2 * 2 * 2 * 2);
        assert_eq!(g.cells(&TrainConfig::default()).len(), 576);
    }

    fn row(cell: usize, f1: Option<f64>, trees: usize, depth: usize, eta: f64) -> LeaderboardRow {
        let metrics = f1.map(|f1| Metrics {
            f1,
            ..Metrics::from_confusion(Confusion::default())
        });
        LeaderboardRow {
            cell,
            config: TrainConfig {
                n_estimators: trees,
                max_depth: depth,
                learning_rate: eta,
                ..Default::default()
            },
            error: metrics.is_none().then(|| "x".to_string()),
            metrics,
        }
    }

    #[test]
    fn tie_rule_prefers_simpler_models() {
        let mut rows = [
            row(0, Some(0.9), 100, 2, 0.01),
            row(1, Some(0.9), 50, 4, 0.1),
            row(2, Some(0.9), 50, 3, 0.1),
            row(3, Some(0.9), 50, 3, 0.05),
            row(4, None, 50, 2, 0.01),
            row(5, Some(0.91), 100, 4, 0.1),
        ];
        rows.sort_by(rank);
        let order: Vec<usize> = rows.iter().map(|r| r.cell).collect();
        assert_eq!(order, vec![5, 3, 2, 1, 0, 4]);
    }
}
