//! Minimal-change intervention planning.
//!
//! For each actionable variable `i` the planner chooses an activation `z_i`
//! and an integer improvement `0 <= delta_i <= max_step * z_i` that keeps the
//! variable within its bounds, maximizing
//!
//! ```text
//! sum_i w_i * delta_i  -  lambda * sum_i z_i
//! ```
//!
//! optionally subject to `sum_i z_i <= K`. Because weights are non-negative an
//! active variable always takes its full headroom `h_i = min(max_step, upper - baseline)`,
//! so the search is over activation sets only. Ties are broken toward fewer
//! activations, then toward lower-index variables.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::FeatureVector;
use crate::schema::SurveySchema;

/// Largest problem accepted by [`solve_enumerate`].
pub const MAX_ENUMERATE_VARIABLES: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum InterventionError {
    #[error("baseline {baseline} of `{name}` is outside [{lower}, {upper}]")]
    BaselineOutOfBounds {
        name: String,
        baseline: i64,
        lower: i64,
        upper: i64,
    },
    #[error("lambda must be non-negative, got {0}")]
    NegativeLambda(f64),
    #[error("weight of `{name}` must be finite and non-negative, got {weight}")]
    InvalidWeight { name: String, weight: f64 },
    #[error("weights do not match the actionable fields: expected `{expected}`, got `{got}`")]
    WeightMismatch { expected: String, got: String },
    #[error("baseline of `{0}` is not an integer level")]
    NonIntegerBaseline(String),
    #[error("exhaustive search supports at most {MAX_ENUMERATE_VARIABLES} variables, got {0}")]
    TooManyVariables(usize),
    #[error("cardinality {k} exceeds the {n} variables")]
    BadK { k: usize, n: usize },
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemVariable {
    pub name: String,
    pub baseline: i64,
    pub lower: i64,
    pub upper: i64,
    pub weight: f64,
}

impl ProblemVariable {
    /// Largest feasible single-variable improvement.
    pub fn headroom(&self, max_step: i64) -> i64 {
        max_step.min(self.upper - self.baseline).max(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionProblem {
    pub variables: Vec<ProblemVariable>,
    pub lambda: f64,
    #[serde(default = "default_max_step")]
    pub max_step: i64,
    #[serde(default)]
    pub cardinality_cap: Option<usize>,
}

fn default_max_step() -> i64 {
    1
}

impl InterventionProblem {
    pub fn validate(&self) -> Result<(), InterventionError> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(InterventionError::NegativeLambda(self.lambda));
        }
        for v in &self.variables {
            if v.baseline < v.lower || v.baseline > v.upper {
                return Err(InterventionError::BaselineOutOfBounds {
                    name: v.name.clone(),
                    baseline: v.baseline,
                    lower: v.lower,
                    upper: v.upper,
                });
            }
            if !(v.weight >= 0.0) || !v.weight.is_finite() {
                return Err(InterventionError::InvalidWeight {
                    name: v.name.clone(),
                    weight: v.weight,
                });
            }
        }
        if self.max_step < 0 {
            return Err(InterventionError::InvalidWeight {
                name: "max_step".into(),
                weight: self.max_step as f64,
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    fn headrooms(&self) -> Vec<i64> {
        self.variables.iter().map(|v| v.headroom(self.max_step)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, InterventionError> {
        let p: Self = serde_json::from_str(s).map_err(|e| InterventionError::Io(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, InterventionError> {
        let s = std::fs::read_to_string(path).map_err(|e| InterventionError::Io(e.to_string()))?;
        Self::from_json(&s)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BuildOptions {
    pub max_step: i64,
    pub cardinality_cap: Option<usize>,
}

impl BuildOptions {
    pub fn unit() -> Self {
        Self {
            max_step: 1,
            cardinality_cap: None,
        }
    }
}

/// Reads the actionable baselines of `record` and pairs them with `weights`,
/// which must list the actionable fields in schema order.
pub fn build_problem(
    record: &FeatureVector,
    schema: &SurveySchema,
    weights: &[(String, f64)],
    lambda: f64,
    options: BuildOptions,
) -> Result<InterventionProblem, InterventionError> {
    if record.values.len() != schema.len() {
        return Err(InterventionError::DimensionMismatch {
            expected: schema.len(),
            got: record.values.len(),
        });
    }
    let actionable = schema.actionable_indices();
    if weights.len() != actionable.len() {
        return Err(InterventionError::WeightMismatch {
            expected: schema.actionable_names().join(","),
            got: weights.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>().join(","),
        });
    }
    let mut variables = Vec::with_capacity(actionable.len());
    for (&idx, (name, weight)) in actionable.iter().zip(weights) {
        let field = &schema.fields[idx];
        if &field.name != name {
            return Err(InterventionError::WeightMismatch {
                expected: field.name.clone(),
                got: name.clone(),
            });
        }
        let raw = record.values[idx];
        if raw.fract() != 0.0 || !raw.is_finite() {
            return Err(InterventionError::NonIntegerBaseline(name.clone()));
        }
        variables.push(ProblemVariable {
            name: name.clone(),
            baseline: raw as i64,
            lower: field.lower_bound,
            upper: field.upper_bound,
            weight: *weight,
        });
    }
    let problem = InterventionProblem {
        variables,
        lambda,
        max_step: options.max_step,
        cardinality_cap: options.cardinality_cap,
    };
    problem.validate()?;
    Ok(problem)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanStatus {
    Optimal,
    NoChangeOptimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanVariable {
    pub name: String,
    pub baseline: i64,
    pub delta: i64,
    pub optimized: i64,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionPlan {
    pub variables: Vec<PlanVariable>,
    pub objective: f64,
    pub benefit: f64,
    pub count: usize,
    pub status: PlanStatus,
}

impl InterventionPlan {
    pub fn active_names(&self) -> Vec<&str> {
        self.variables
            .iter()
            .filter(|v| v.active)
            .map(|v| v.name.as_str())
            .collect()
    }

    pub fn active_mask(&self) -> Vec<bool> {
        self.variables.iter().map(|v| v.active).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

/// Objective and benefit of an activation set, summed in variable order.
fn evaluate(problem: &InterventionProblem, headroom: &[i64], active: &[bool]) -> (f64, f64, usize) {
    let mut benefit = 0.0;
    let mut count = 0;
    for ((v, &h), &on) in problem.variables.iter().zip(headroom).zip(active) {
        if on {
            benefit += v.weight * h as f64;
            count += 1;
        }
    }
    (benefit - problem.lambda * count as f64, benefit, count)
}

#[derive(Debug, Clone)]
struct Candidate {
    active: Vec<bool>,
    objective: f64,
    benefit: f64,
    count: usize,
}

impl Candidate {
    fn new(problem: &InterventionProblem, headroom: &[i64], active: Vec<bool>) -> Self {
        let (objective, benefit, count) = evaluate(problem, headroom, &active);
        Self {
            active,
            objective,
            benefit,
            count,
        }
    }

    /// `Greater` when `self` is the preferred plan.
    fn compare(&self, other: &Candidate) -> Ordering {
        self.objective
            .total_cmp(&other.objective)
            .then(other.count.cmp(&self.count))
            .then_with(|| {
                self.active
                    .iter()
                    .zip(&other.active)
                    .find(|(a, b)| a != b)
                    .map_or(
                        Ordering::Equal,
                        |(a, _)| if *a { Ordering::Greater } else { Ordering::Less },
                    )
            })
    }
}

fn into_plan(problem: &InterventionProblem, headroom: &[i64], best: Candidate) -> InterventionPlan {
    let variables = problem
        .variables
        .iter()
        .zip(headroom)
        .zip(&best.active)
        .map(|((v, &h), &on)| {
            let delta = if on { h } else { 0 };
            PlanVariable {
                name: v.name.clone(),
                baseline: v.baseline,
                delta,
                optimized: v.baseline + delta,
                active: on,
            }
        })
        .collect();
    InterventionPlan {
        variables,
        objective: best.objective,
        benefit: best.benefit,
        count: best.count,
        status: if best.count == 0 {
            PlanStatus::NoChangeOptimal
        } else {
            PlanStatus::Optimal
        },
    }
}

/// Exhaustive reference solver over every activation set.
pub fn solve_enumerate(problem: &InterventionProblem) -> Result<InterventionPlan, InterventionError> {
    let n = problem.len();
    if n > MAX_ENUMERATE_VARIABLES {
        return Err(InterventionError::TooManyVariables(n));
    }
    let headroom = problem.headrooms();
    let cap = problem.cardinality_cap.unwrap_or(n);
    let mut best = Candidate::new(problem, &headroom, vec![false; n]);
    for mask in 1u32..(1u32 << n) {
        let active: Vec<bool> = (0..n).map(|i| mask & (1 << i) != 0).collect();
        // Activating a variable with no headroom pays the penalty for nothing.
        if active.iter().zip(&headroom).any(|(&on, &h)| on && h == 0) {
            continue;
        }
        if mask.count_ones() as usize > cap {
            continue;
        }
        let cand = Candidate::new(problem, &headroom, active);
        if cand.compare(&best) == Ordering::Greater {
            best = cand;
        }
    }
    Ok(into_plan(problem, &headroom, best))
}

struct BranchAndBound<'a> {
    problem: &'a InterventionProblem,
    headroom: &'a [i64],
    /// Variable indices by descending `w_i * h_i`.
    order: Vec<usize>,
    /// `contribution[k]` of `order[k]`: `w h - lambda`.
    contribution: Vec<f64>,
    cap: usize,
    margin: f64,
    best: Candidate,
    active: Vec<bool>,
}

impl BranchAndBound<'_> {
    /// Optimistic completion value: the best `slots` positive contributions
    /// among the undecided variables (they are already sorted).
    fn bound(&self, depth: usize, slots: usize) -> f64 {
        self.contribution[depth..]
            .iter()
            .filter(|&&c| c > 0.0)
            .take(slots)
            .sum()
    }

    fn search(&mut self, depth: usize, partial: f64, count: usize) {
        if partial + self.bound(depth, self.cap - count) + self.margin < self.best.objective {
            return;
        }
        if depth == self.order.len() {
            let cand = Candidate::new(self.problem, self.headroom, self.active.clone());
            if cand.compare(&self.best) == Ordering::Greater {
                self.best = cand;
            }
            return;
        }
        let var = self.order[depth];
        if self.headroom[var] > 0 && count < self.cap {
            self.active[var] = true;
            self.search(depth + 1, partial + self.contribution[depth], count + 1);
            self.active[var] = false;
        }
        self.search(depth + 1, partial, count);
    }
}

/// Exact depth-first branch-and-bound over activation sets.
pub fn solve(problem: &InterventionProblem) -> Result<InterventionPlan, InterventionError> {
    problem.validate()?;
    let n = problem.len();
    let headroom = problem.headrooms();
    let value = |i: usize| problem.variables[i].weight * headroom[i] as f64;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| value(b).total_cmp(&value(a)).then(a.cmp(&b)));
    let contribution: Vec<f64> = order.iter().map(|&i| value(i) - problem.lambda).collect();
    // Pruning only discards branches that are worse by more than rounding could explain,
    // so ties are still resolved by the canonical comparison.
    let scale: f64 = contribution.iter().map(|c| c.abs()).sum();
    let mut bb = BranchAndBound {
        problem,
        headroom: &headroom,
        order,
        contribution,
        cap: problem.cardinality_cap.unwrap_or(n).min(n),
        margin: 1e-9 * (1.0 + scale),
        best: Candidate::new(problem, &headroom, vec![false; n]),
        active: vec![false; n],
    };
    bb.search(0, 0.0, 0);
    let best = bb.best;
    Ok(into_plan(problem, &headroom, best))
}

/// Maximizes benefit with at most `k` activations and no penalty.
pub fn solve_with_cardinality(problem: &InterventionProblem, k: usize) -> Result<InterventionPlan, InterventionError> {
    if k > problem.len() {
        return Err(InterventionError::BadK { k, n: problem.len() });
    }
    let capped = InterventionProblem {
        lambda: 0.0,
        cardinality_cap: Some(k),
        ..problem.clone()
    };
    solve(&capped)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    /// Benefit only: the activation penalty is removed.
    NoPenalty,
    /// Every variable weighs 1; the penalty is kept.
    EqualWeights,
}

impl AblationMode {
    pub fn apply(self, problem: &InterventionProblem) -> InterventionProblem {
        let mut p = problem.clone();
        match self {
            AblationMode::NoPenalty => p.lambda = 0.0,
            AblationMode::EqualWeights => p.variables.iter_mut().for_each(|v| v.weight = 1.0),
        }
        p
    }
}

pub fn ablate(problem: &InterventionProblem, mode: AblationMode) -> Result<InterventionPlan, InterventionError> {
    solve(&mode.apply(problem))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn problem(weights: &[f64], lambda: f64) -> InterventionProblem {
        InterventionProblem {
            variables: weights
                .iter()
                .enumerate()
                .map(|(i, &w)| ProblemVariable {
                    name: format!("v{i}"),
                    baseline: 1,
                    lower: 1,
                    upper: 5,
                    weight: w,
                })
                .collect(),
            lambda,
            max_step: 1,
            cardinality_cap: None,
        }
    }

    #[test]
    fn single_variable_cases() {
        let p = solve_enumerate(&problem(&[0.3], 0.2)).unwrap();
        assert_eq!(p.count, 1);
        assert!((p.objective - 0.1).abs() < 1e-12);
        let p = solve_enumerate(&problem(&[0.2], 0.2)).unwrap();
        assert_eq!(p.count, 0);
        assert_eq!(p.status, PlanStatus::NoChangeOptimal);
        assert_eq!(solve(&problem(&[0.2], 0.2)).unwrap(), p);
    }

    #[test]
    fn saturated_baselines_mean_no_change() {
        let mut p = problem(&[0.5, 0.9], 0.1);
        for v in &mut p.variables {
            v.baseline = v.upper;
        }
        let plan = solve(&p).unwrap();
        assert_eq!(plan.count, 0);
        assert_eq!(plan.objective, 0.0);
        assert_eq!(plan.status, PlanStatus::NoChangeOptimal);
    }

    #[test]
    fn equal_weights_prefer_lower_index_under_cap() {
        let p = problem(&[0.4, 0.4, 0.4], 0.0);
        let plan = solve_with_cardinality(&p, 1).unwrap();
        assert_eq!(plan.active_names(), vec!["v0"]);
        assert_eq!(
            solve_with_cardinality(&p, 4),
            Err(InterventionError::BadK { k: 4, n: 3 })
        );
    }

    #[test]
    fn validation_errors() {
        let mut p = problem(&[0.3], 0.2);
        p.variables[0].baseline = 6;
        assert!(matches!(solve(&p), Err(InterventionError::BaselineOutOfBounds { .. })));
        assert_eq!(
            solve(&problem(&[0.3], -0.1)),
            Err(InterventionError::NegativeLambda(-0.1))
        );
        assert_eq!(
            solve_enumerate(&problem(&[0.1; 21], 0.0)),
            Err(InterventionError::TooManyVariables(21))
        );
    }

    #[test]
    fn larger_steps_take_full_headroom() {
        let mut p = problem(&[0.3, 0.1], 0.5);
        p.max_step = 3;
        p.variables[1].baseline = 4;
        let plan = solve(&p).unwrap();
        assert_eq!(plan.variables[0].delta, 3);
        assert_eq!(plan.variables[1].delta, 0);
        assert!((plan.objective - 0.4).abs() < 1e-12);
        assert_eq!(plan, solve_enumerate(&p).unwrap());
    }

    #[test]
    fn plan_json_layout() {
        let plan = solve(&problem(&[0.3], 0.2)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&plan.to_json()).unwrap();
        assert_eq!(v["status"], "optimal");
        assert_eq!(v["variables"][0]["optimized"], 2);
        assert_eq!(v["count"], 1);
    }

    #[test]
    fn problem_json_round_trip() {
        let p = problem(&[0.3, 0.25], 0.2);
        assert_eq!(InterventionProblem::from_json(&p.to_json()).unwrap(), p);
    }

    fn arb_problem() -> impl Strategy<Value = InterventionProblem> {
        (
            prop::collection::vec((0u8..4, 0i64..3, 0i64..3), 1..10),
            prop::sample::select(vec![0.0, 0.1, 0.2, 0.25, 0.5]),
            prop::option::of(0usize..10),
            1i64..3,
        )
            .prop_map(|(vars, lambda, cap, max_step)| InterventionProblem {
                variables: vars
                    .into_iter()
                    .enumerate()
                    .map(|(i, (w, base, room))| ProblemVariable {
                        name: format!("v{i}"),
                        baseline: base,
                        lower: 0,
                        upper: base + room,
                        weight: w as f64 * 0.1,
                    })
                    .collect(),
                lambda,
                max_step,
                cardinality_cap: cap,
            })
    }

    proptest! {
        #[test]
        fn branch_and_bound_matches_enumeration(p in arb_problem()) {
            prop_assert_eq!(solve(&p).unwrap(), solve_enumerate(&p).unwrap());
        }

        #[test]
        fn plans_respect_bounds_and_linking(p in arb_problem()) {
            let plan = solve(&p).unwrap();
            for (v, pv) in p.variables.iter().zip(&plan.variables) {
                prop_assert!(pv.optimized >= v.lower && pv.optimized <= v.upper);
                prop_assert!(pv.delta <= p.max_step * i64::from(pv.active));
                prop_assert!(!pv.active || pv.delta >= 1);
            }
            if let Some(k) = p.cardinality_cap {
                prop_assert!(plan.count <= k);
            }
        }
    }
}
