use super::{GbmError, TrainConfig};

/// Minimizer of `G w + (H + lambda) w^2 / 2 + alpha |w|`.
pub fn leaf_weight(grad_sum: f64, hess_sum: f64, alpha: f64, lambda_l2: f64) -> Result<f64, GbmError> {
    let denom = hess_sum + lambda_l2;
    if denom == 0.0 {
        return Err(GbmError::DegenerateLeaf);
    }
    let shrunk = grad_sum.abs() - alpha;
    if shrunk <= 0.0 {
        return Ok(0.0);
    }
    Ok(-grad_sum.signum() * shrunk / denom)
}

/// Structure score `max(|G| - alpha, 0)^2 / (H + lambda)`; twice the objective
/// reduction achieved by the optimal leaf weight.
pub fn split_score(grad_sum: f64, hess_sum: f64, alpha: f64, lambda_l2: f64) -> f64 {
    let shrunk = (grad_sum.abs() - alpha).max(0.0);
    let denom = hess_sum + lambda_l2;
    if denom <= 0.0 {
        0.0
    } else {
        shrunk * shrunk / denom
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Midpoint of two adjacent distinct values, kept strictly below `hi`.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid < hi {
        mid
    } else {
        lo
    }
}

/// Scans one feature whose node samples are already sorted by value.
/// Returns the best `(threshold, gain)` with strictly positive gain.
pub(crate) fn scan_sorted(
    sorted: &[usize],
    column: &[f64],
    grad: &[f64],
    hess: &[f64],
    totals: (f64, f64),
    cfg: &TrainConfig,
) -> Option<(f64, f64)> {
    let (g_total, h_total) = totals;
    let parent = split_score(g_total, h_total, cfg.alpha, cfg.lambda_l2);
    let mut g_left = 0.0;
    let mut h_left = 0.0;
    let mut best: Option<(f64, f64)> = None;
    for w in sorted.windows(2) {
        let (i, next) = (w[0], w[1]);
        g_left += grad[i];
        h_left += hess[i];
        let (v, v_next) = (column[i], column[next]);
        if v == v_next {
            continue;
        }
        let g_right = g_total - g_left;
        let h_right = h_total - h_left;
        if h_left < cfg.min_child_weight || h_right < cfg.min_child_weight {
            continue;
        }
        let gain = 0.5
            * (split_score(g_left, h_left, cfg.alpha, cfg.lambda_l2)
                + split_score(g_right, h_right, cfg.alpha, cfg.lambda_l2)
                - parent)
            - cfg.gamma;
        if gain > 0.0 && best.is_none_or(|(_, b)| gain > b) {
            best = Some((midpoint(v, v_next), gain));
        }
    }
    best
}

/// Exact greedy split search over `feature_pool` for the samples of one node.
/// `columns[f][i]` is feature `f` of sample `i`. Returns `None` when no split
/// has positive gain with both children meeting `min_child_weight`.
/// Ties keep the earlier feature in the pool, then the lower threshold.
pub fn best_split(
    node_samples: &[usize],
    columns: &[Vec<f64>],
    grad: &[f64],
    hess: &[f64],
    feature_pool: &[usize],
    cfg: &TrainConfig,
) -> Option<SplitCandidate> {
    let g_total: f64 = node_samples.iter().map(|&i| grad[i]).sum();
    let h_total: f64 = node_samples.iter().map(|&i| hess[i]).sum();
    let mut best: Option<SplitCandidate> = None;
    let mut sorted = node_samples.to_vec();
    for &f in feature_pool {
        let col = &columns[f];
        sorted.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
        if let Some((threshold, gain)) = scan_sorted(&sorted, col, grad, hess, (g_total, h_total), cfg) {
            if best.as_ref().is_none_or(|b| gain > b.gain) {
                best = Some(SplitCandidate {
                    feature: f,
                    threshold,
                    gain,
                });
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gbm::logistic_grad_hess;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn leaf_objective(w: f64, g: f64, h: f64, alpha: f64, lambda: f64) -> f64 {
        g * w + 0.5 * (h + lambda) * w * w + alpha * w.abs()
    }

    /// Grid-scan minimizer with step 1e-4 around the origin.
    fn grid_argmin(g: f64, h: f64, alpha: f64, lambda: f64, radius: f64) -> f64 {
        let steps = (radius / 1e-4) as i64;
        (-steps..=steps)
            .map(|k| k as f64 * 1e-4)
            .min_by(|&a, &b| leaf_objective(a, g, h, alpha, lambda).total_cmp(&leaf_objective(b, g, h, alpha, lambda)))
            .unwrap()
    }

    #[test]
    fn leaf_weight_examples() {
        assert_eq!(leaf_weight(0.0, 1.0, 0.1, 1.0).unwrap(), 0.0);
        assert!((leaf_weight(1.1, 1.0, 0.1, 1.0).unwrap() - (-0.5)).abs() < 1e-12);
        assert!((leaf_weight(-2.1, 1.0, 0.1, 0.0).unwrap() - 2.0).abs() < 1e-12);
        assert!((grid_argmin(1.1, 1.0, 0.1, 1.0, 3.0) - (-0.5)).abs() < 1e-3);
        assert!((grid_argmin(-2.1, 1.0, 0.1, 0.0, 3.0) - 2.0).abs() < 1e-3);
    }

    #[test]
    fn degenerate_leaf() {
        assert_eq!(leaf_weight(1.0, 0.0, 0.0, 0.0), Err(GbmError::DegenerateLeaf));
    }

    #[test]
    fn leaf_weight_matches_grid_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let g = rng.gen_range(-3.0..3.0);
            let h = rng.gen_range(0.0..3.0);
            let alpha = rng.gen_range(0.0..1.0);
            let lambda = rng.gen_range(0.1..2.0);
            let w = leaf_weight(g, h, alpha, lambda).unwrap();
            let radius = w.abs() + 0.5;
            assert!((w - grid_argmin(g, h, alpha, lambda, radius)).abs() < 1e-3);
        }
    }

    fn toy() -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
        let xs = vec![-2.5, -2.0, -1.5, -1.0, -0.5, 0.5, 1.0, 1.5, 2.0, 2.5];
        let (g, h): (Vec<f64>, Vec<f64>) = xs
            .iter()
            .map(|&x| logistic_grad_hess(0.0, if x > 0.0 { 1.0 } else { 0.0 }))
            .unzip();
        (vec![xs], g, h)
    }

    #[test]
    fn separable_toy_splits_between_classes() {
        let (cols, g, h) = toy();
        let cfg = TrainConfig {
            alpha: 0.0,
            gamma: 0.0,
            lambda_l2: 1.0,
            min_child_weight: 0.0,
            ..Default::default()
        };
        let samples: Vec<usize> = (0..10).collect();
        let best = best_split(&samples, &cols, &g, &h, &[0], &cfg).unwrap();
        assert!(best.threshold > -0.5 && best.threshold < 0.5);

        // Independent enumeration of every candidate threshold.
        let mut xs = cols[0].clone();
        xs.sort_by(f64::total_cmp);
        let gain_at = |t: f64| {
            let (mut gl, mut hl, mut gr, mut hr) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..10 {
                if cols[0][i] <= t {
                    gl += g[i];
                    hl += h[i];
                } else {
                    gr += g[i];
                    hr += h[i];
                }
            }
            let s = |g: f64, h: f64| g * g / (h + 1.0);
            0.5 * (s(gl, hl) + s(gr, hr) - s(gl + gr, hl + hr))
        };
        let argmax = xs
            .windows(2)
            .map(|w| (w[0] + w[1]) / 2.0)
            .max_by(|&a, &b| gain_at(a).total_cmp(&gain_at(b)))
            .unwrap();
        assert_eq!(best.threshold, argmax);
        assert!((best.gain - gain_at(argmax)).abs() < 1e-12);
    }

    #[test]
    fn constant_feature_has_no_split() {
        let cols = vec![vec![1.0; 6]];
        let g = vec![-0.5, 0.5, -0.5, 0.5, -0.5, 0.5];
        let h = vec![0.25; 6];
        let samples: Vec<usize> = (0..6).collect();
        assert_eq!(best_split(&samples, &cols, &g, &h, &[0], &TrainConfig::default()), None);
    }

    #[test]
    fn min_child_weight_dominates() {
        let (cols, g, h) = toy();
        let cfg = TrainConfig {
            min_child_weight: 100.0,
            ..Default::default()
        };
        let samples: Vec<usize> = (0..10).collect();
        assert_eq!(best_split(&samples, &cols, &g, &h, &[0], &cfg), None);
    }

    #[test]
    fn gamma_can_suppress_split() {
        let (cols, g, h) = toy();
        let samples: Vec<usize> = (0..10).collect();
        let cfg = TrainConfig {
            min_child_weight: 0.0,
            alpha: 0.0,
            gamma: 100.0,
            ..Default::default()
        };
        assert_eq!(best_split(&samples, &cols, &g, &h, &[0], &cfg), None);
    }

    proptest! {
        #[test]
        fn reported_gain_matches_direct_partition(
            vals in prop::collection::vec((0u8..6, 0u8..2), 4..40),
            alpha in 0.0f64..0.5, lambda in 0.1f64..2.0,
        ) {
            let col: Vec<f64> = vals.iter().map(|v| v.0 as f64).collect();
            let (g, h): (Vec<f64>, Vec<f64>) = vals.iter().map(|v| logistic_grad_hess(0.3, v.1 as f64)).unzip();
            let cfg = TrainConfig { alpha, lambda_l2: lambda, min_child_weight: 0.0, gamma: 0.0, ..Default::default() };
            let samples: Vec<usize> = (0..col.len()).collect();
            if let Some(best) = best_split(&samples, std::slice::from_ref(&col), &g, &h, &[0], &cfg) {
                let (mut gl, mut hl, mut gr, mut hr) = (0.0, 0.0, 0.0, 0.0);
                for i in 0..col.len() {
                    if col[i] <= best.threshold { gl += g[i]; hl += h[i]; } else { gr += g[i]; hr += h[i]; }
                }
                let direct = 0.5 * (split_score(gl, hl, alpha, lambda) + split_score(gr, hr, alpha, lambda)
                    - split_score(gl + gr, hl + hr, alpha, lambda));
                prop_assert!((direct - best.gain).abs() < 1e-9);
                prop_assert!(best.gain > 0.0);
            }
        }
    }
}
