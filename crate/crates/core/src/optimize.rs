//! Leader strategy synthesis: the full-information optimum against a
//! rational follower, maximin strategies of zero-sum games, and projected
//! gradient ascent on the stochasticity-regularized max-entropy objective.

mod lp;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::followers::{rational_action_raw, softmax, TieBreak, TypeSet};
use crate::game::{stream_rng, BimatrixGame, MixedStrategy};
use lp::{maximize, Constraint, LpOutcome, Relation};

/// Feasibility slack used when checking LP solutions.
pub const LP_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LpSolution {
    pub x: MixedStrategy,
    pub value: f64,
    /// Follower action induced at `x` (ties resolved for the leader).
    pub follower_action: usize,
}

fn clean_simplex(raw: &[f64]) -> Result<MixedStrategy> {
    let clipped: Vec<f64> = raw.iter().map(|v| v.max(0.0)).collect();
    let sum: f64 = clipped.iter().sum();
    if !(sum > 0.0) {
        return Err(Error::Singular("LP returned an empty strategy".into()));
    }
    MixedStrategy::new(clipped.iter().map(|v| v / sum).collect())
}

/// Best leader commitment against a rational follower that breaks ties in
/// the leader's favour: one LP per follower action `j`, maximizing
/// `x^T A e_j` over the leader strategies that make `j` a best response.
pub fn full_info_optimal_rational(game: &BimatrixGame) -> Result<LpSolution> {
    let m = game.leader_actions();
    let a = game.leader();
    let b = game.follower();
    let mut best: Option<LpSolution> = None;
    for j in 0..game.follower_actions() {
        let objective: Vec<f64> = (0..m).map(|i| a[(i, j)]).collect();
        let mut cons = vec![Constraint::new(vec![1.0; m], Relation::Eq, 1.0)];
        for jp in 0..game.follower_actions() {
            if jp != j {
                let coeffs = (0..m).map(|i| b[(i, jp)] - b[(i, j)]).collect();
                cons.push(Constraint::new(coeffs, Relation::Le, 0.0));
            }
        }
        let (x, value) = match maximize(&objective, &cons)? {
            LpOutcome::Optimal { x, value } => (x, value),
            LpOutcome::Infeasible => continue,
            LpOutcome::Unbounded => {
                return Err(Error::Singular("bounded LP reported unbounded".into()))
            }
        };
        if best.as_ref().is_none_or(|s| value > s.value + 1e-12) {
            best = Some(LpSolution {
                x: clean_simplex(&x)?,
                value,
                follower_action: j,
            });
        }
    }
    best.ok_or(Error::Infeasible)
}

/// Best leader commitment against a classifying follower. The region
/// classified as type `t` is a polytope, and on it the follower's action is
/// fixed, so this is one LP per type. Likelihood ties count for the leader.
pub fn full_info_optimal_classifier(
    game: &BimatrixGame,
    types: &TypeSet,
    tiebreak: TieBreak,
) -> Result<LpSolution> {
    let m = game.leader_actions();
    if types.types()[0].len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: types.types()[0].len(),
        });
    }
    let a = game.leader();
    let mut best: Option<LpSolution> = None;
    for t in 0..types.len() {
        let j = rational_action_raw(game, types.types()[t].probs(), tiebreak);
        let objective: Vec<f64> = (0..m).map(|i| a[(i, j)]).collect();
        let mut cons = vec![Constraint::new(vec![1.0; m], Relation::Eq, 1.0)];
        for u in 0..types.len() {
            if u != t {
                let coeffs = (0..m)
                    .map(|i| types.log_type(u)[i] - types.log_type(t)[i])
                    .collect();
                cons.push(Constraint::new(coeffs, Relation::Le, 0.0));
            }
        }
        let (x, value) = match maximize(&objective, &cons)? {
            LpOutcome::Optimal { x, value } => (x, value),
            LpOutcome::Infeasible => continue,
            LpOutcome::Unbounded => {
                return Err(Error::Singular("bounded LP reported unbounded".into()))
            }
        };
        if best.as_ref().is_none_or(|s| value > s.value + 1e-12) {
            best = Some(LpSolution {
                x: clean_simplex(&x)?,
                value,
                follower_action: j,
            });
        }
    }
    best.ok_or(Error::Infeasible)
}

/// Maximin strategy of the row player for payoff matrix `u` and the value
/// of the game.
pub fn zero_sum_nash(u: &DMatrix<f64>) -> Result<(MixedStrategy, f64)> {
    let (m, n) = u.shape();
    if m == 0 || n == 0 {
        return Err(Error::InvalidGame("empty payoff matrix".into()));
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidGame(
            "payoff matrix has non-finite entries".into(),
        ));
    }
    // shift so that every entry is at least 1 and the value is positive
    let shift = 1.0 - u.min();
    // variables: x_1..x_m, v
    let mut objective = vec![0.0; m + 1];
    objective[m] = 1.0;
    let mut simplex = vec![1.0; m + 1];
    simplex[m] = 0.0;
    let mut cons = vec![Constraint::new(simplex, Relation::Eq, 1.0)];
    for j in 0..n {
        let mut coeffs: Vec<f64> = (0..m).map(|i| -(u[(i, j)] + shift)).collect();
        coeffs.push(1.0);
        cons.push(Constraint::new(coeffs, Relation::Le, 0.0));
    }
    match maximize(&objective, &cons)? {
        LpOutcome::Optimal { x, value } => Ok((clean_simplex(&x[..m])?, value - shift)),
        _ => Err(Error::Singular("minimax LP failed".into())),
    }
}

/// `x^T A sigma(B^T x) - c * nu(x)^2` and its gradient in `x`.
pub fn maxent_objective(
    game: &BimatrixGame,
    x: &[f64],
    lambda: f64,
    c: f64,
) -> Result<(f64, Vec<f64>)> {
    if x.len() != game.leader_actions() {
        return Err(Error::DimensionMismatch {
            expected: game.leader_actions(),
            actual: x.len(),
        });
    }
    if !(lambda >= 0.0) {
        return Err(Error::param("lambda", "must be non-negative"));
    }
    let a = game.leader();
    let b = game.follower();
    let xv = DVector::from_column_slice(x);
    let y = DVector::from_vec(softmax(&game.follower_payoffs(x), lambda));
    let ay = a * &y;
    let atx = a.transpose() * &xv;
    // Jacobian of the softmax: lambda (diag(y) - y y^T)
    let jac = (DMatrix::from_diagonal(&y) - &y * y.transpose()) * lambda;
    let grad_sr = &ay + b * (jac * atx);
    let value = xv.dot(&ay) - c * x.iter().map(|p| p * (1.0 - p)).sum::<f64>();
    let grad = grad_sr
        .iter()
        .zip(x)
        .map(|(g, p)| g - c * (1.0 - 2.0 * p))
        .collect();
    Ok((value, grad))
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Result<MixedStrategy> {
    if v.is_empty() {
        return Err(Error::InvalidStrategy(
            "cannot project an empty vector".into(),
        ));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidStrategy(
            "vector has non-finite entries".into(),
        ));
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    let p: Vec<f64> = v.iter().map(|x| (x - theta).max(0.0)).collect();
    let sum: f64 = p.iter().sum();
    Ok(MixedStrategy::from_simplex_unchecked(
        p.iter().map(|x| x / sum).collect(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradConfig {
    /// Weight of the `nu^2` penalty.
    pub c: f64,
    pub steps: usize,
    /// Step size at iteration `t` is `step0 / sqrt(t + 1)`.
    pub step0: f64,
    /// Stop once the projected-gradient norm drops below this.
    pub tol: f64,
    /// Extra random starts on top of the main one.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for GradConfig {
    fn default() -> Self {
        GradConfig {
            c: 0.0,
            steps: 2000,
            step0: 0.05,
            tol: 1e-9,
            restarts: 0,
            seed: 0,
        }
    }
}

impl GradConfig {
    fn validate(&self) -> Result<()> {
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return Err(Error::param("c", "must be finite and non-negative"));
        }
        if !(self.step0 > 0.0 && self.step0.is_finite()) {
            return Err(Error::param("step0", "must be positive"));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::param("tol", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Start {
    /// The full-information optimum against a rational follower.
    FromLp,
    Given(MixedStrategy),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularizedSolution {
    pub x: MixedStrategy,
    pub value: f64,
    /// Objective after every accepted step, starting with the initial point.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

const MAX_HALVINGS: usize = 40;

/// Projected gradient ascent on [`maxent_objective`] with a decaying step
/// and backtracking, so the objective never decreases.
pub fn optimize_regularized(
    game: &BimatrixGame,
    lambda: f64,
    config: &GradConfig,
    start: &Start,
) -> Result<RegularizedSolution> {
    config.validate()?;
    let x0 = match start {
        Start::FromLp => full_info_optimal_rational(game)?.x,
        Start::Given(x) => {
            if x.len() != game.leader_actions() {
                return Err(Error::DimensionMismatch {
                    expected: game.leader_actions(),
                    actual: x.len(),
                });
            }
            x.clone()
        }
    };
    let main = ascend(game, lambda, config, x0)?;
    if config.restarts == 0 {
        return Ok(main);
    }
    let m = game.leader_actions();
    let others = (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(config.seed, r as u64);
            let e: Vec<f64> = (0..m).map(|_| Exp1.sample(&mut rng)).collect();
            let s: f64 = e.iter().sum();
            ascend(
                game,
                lambda,
                config,
                MixedStrategy::from_simplex_unchecked(e.iter().map(|v| v / s).collect()),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(others
        .into_iter()
        .fold(main, |best, s| if s.value > best.value { s } else { best }))
}

fn ascend(
    game: &BimatrixGame,
    lambda: f64,
    config: &GradConfig,
    x0: MixedStrategy,
) -> Result<RegularizedSolution> {
    let mut x = x0;
    let (mut value, mut grad) = maxent_objective(game, x.probs(), lambda, config.c)?;
    let mut trace = vec![value];
    let mut converged = false;
    let mut iterations = 0;
    for t in 0..config.steps {
        let unit = project_simplex(&step(x.probs(), &grad, 1.0))?;
        if unit.distance(&x) < config.tol {
            converged = true;
            break;
        }
        let mut eta = config.step0 / ((t + 1) as f64).sqrt();
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = project_simplex(&step(x.probs(), &grad, eta))?;
            let (v, g) = maxent_objective(game, cand.probs(), lambda, config.c)?;
            if v >= value {
                accepted = Some((cand, v, g));
                break;
            }
            eta *= 0.5;
        }
        iterations = t + 1;
        match accepted {
            Some((cand, v, g)) => {
                let moved = cand.distance(&x);
                x = cand;
                value = v;
                grad = g;
                trace.push(value);
                if moved < config.tol * 1e-3 {
                    converged = true;
                    break;
                }
            }
            None => {
                // no ascent even at a tiny step: stationary up to precision
                converged = true;
                break;
            }
        }
    }
    Ok(RegularizedSolution {
        x,
        value,
        trace,
        iterations,
        converged,
    })
}

fn step(x: &[f64], grad: &[f64], eta: f64) -> Vec<f64> {
    x.iter().zip(grad).map(|(p, g)| p + eta * g).collect()
}
