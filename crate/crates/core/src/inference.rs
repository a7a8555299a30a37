//! Plug-in estimation of the leader's strategy and the scalar diagnostics
//! the gap bounds consume: stochasticity, concentrability, distance to the
//! nearest response boundary, and the cooperative/zero-sum split of a game.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::followers::{rational_action_raw, FollowerModel, TIE_TOLERANCE};
use crate::game::{range, BimatrixGame, MixedStrategy};

/// Largest action count for which the subset search in [`concentrability`]
/// runs.
pub const MAX_CONCENTRABILITY_ACTIONS: usize = 20;

/// Per-action tallies of logged leader actions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ActionCounts {
    counts: Vec<u64>,
    total: u64,
}

impl ActionCounts {
    pub fn new(actions: usize) -> Self {
        ActionCounts {
            counts: vec![0; actions],
            total: 0,
        }
    }

    pub fn from_counts(counts: Vec<u64>) -> Self {
        let total = counts.iter().sum();
        ActionCounts { counts, total }
    }

    pub fn record(&mut self, action: usize) {
        self.counts[action] += 1;
        self.total += 1;
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn clear(&mut self) {
        self.counts.iter_mut().for_each(|c| *c = 0);
        self.total = 0;
    }
}

/// Empirical action frequencies `counts / total`.
pub fn plugin_estimate(counts: &ActionCounts) -> Result<MixedStrategy> {
    if counts.total == 0 {
        return Err(Error::NoData);
    }
    let total = counts.total as f64;
    Ok(MixedStrategy::from_simplex_unchecked(
        counts.counts.iter().map(|&c| c as f64 / total).collect(),
    ))
}

/// Stochasticity level `ν(x) = sqrt(Σ x_i (1 - x_i))`.
pub fn stochasticity(x: &MixedStrategy) -> f64 {
    stochasticity_sq(x.probs()).max(0.0).sqrt()
}

pub(crate) fn stochasticity_sq(x: &[f64]) -> f64 {
    x.iter().map(|p| p * (1.0 - p)).sum()
}

/// `p_z = max_C min(z(C), 1 - z(C))` over all subsets `C` of the actions.
pub fn subset_balance(x: &MixedStrategy) -> Result<f64> {
    let m = x.len();
    if m > MAX_CONCENTRABILITY_ACTIONS {
        return Err(Error::BudgetExceeded(format!(
            "subset search over {m} actions (limit {MAX_CONCENTRABILITY_ACTIONS})"
        )));
    }
    if m == 1 {
        return Ok(0.0);
    }
    let p = x.probs();
    // min(z(C), 1 - z(C)) is symmetric under complement; fix the last action out of C
    let half = 1usize << (m - 1);
    let mut best = 0.0f64;
    for mask in 0..half {
        let mut mass = 0.0;
        let mut bits = mask;
        while bits != 0 {
            let i = bits.trailing_zeros() as usize;
            mass += p[i];
            bits &= bits - 1;
        }
        best = best.max(mass.min(1.0 - mass));
    }
    Ok(best.max(0.0))
}

/// Concentrability `φ = log((1 - p_z)/p_z) / (1 - 2 p_z)`.
///
/// Returns the limit 2 at `p_z = 1/2` and `+∞` for deterministic strategies.
pub fn concentrability(x: &MixedStrategy) -> Result<f64> {
    Ok(concentrability_of_balance(subset_balance(x)?))
}

pub fn concentrability_of_balance(pz: f64) -> f64 {
    if pz <= 0.0 {
        return f64::INFINITY;
    }
    if (pz - 0.5).abs() < 1e-12 {
        return 2.0;
    }
    ((1.0 - pz) / pz).ln() / (1.0 - 2.0 * pz)
}

/// In-simplex Euclidean distance from `x` to the nearest hyperplane where the
/// follower's pure response switches.
///
/// For a rational follower the hyperplanes are `x^T B (e_i - e_j) = 0`, for a
/// classifier `<x, log x^i - log x^j> = 0`, with `i` the cell containing `x`.
/// The normal is projected onto the sum-zero subspace so the distance is
/// measured within the simplex's affine hull. Points on a boundary give 0;
/// with no boundary at all the distance is `+∞`.
pub fn boundary_distance(
    game: &BimatrixGame,
    x: &MixedStrategy,
    model: &FollowerModel,
) -> Result<f64> {
    if x.len() != game.leader_actions() {
        return Err(Error::DimensionMismatch {
            expected: game.leader_actions(),
            actual: x.len(),
        });
    }
    let x = x.probs();
    let normals: Vec<Vec<f64>> = match model {
        FollowerModel::Rational { tiebreak } => {
            let i = rational_action_raw(game, x, *tiebreak);
            let b = game.follower();
            (0..game.follower_actions())
                .filter(|&j| j != i)
                .map(|j| (0..b.nrows()).map(|r| b[(r, i)] - b[(r, j)]).collect())
                .collect()
        }
        FollowerModel::Classifier { types, .. } => {
            let i = types.classify(x);
            (0..types.len())
                .filter(|&j| j != i)
                .map(|j| {
                    types
                        .log_type(i)
                        .iter()
                        .zip(types.log_type(j))
                        .map(|(a, b)| a - b)
                        .collect()
                })
                .collect()
        }
        _ => {
            return Err(Error::param(
                "model",
                "boundary distance is defined for rational and classifier followers",
            ))
        }
    };

    let mut best = f64::INFINITY;
    for w in normals {
        let margin: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let norm = w
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            .sqrt();
        if margin.abs() <= TIE_TOLERANCE {
            return Ok(0.0);
        }
        if norm < 1e-14 {
            // margin is constant on the simplex: this pair never switches
            continue;
        }
        best = best.min(margin.abs() / norm);
    }
    Ok(best)
}

/// Cooperative / zero-sum split of a game:
/// `A = α_c Ū_c + α_z Ū_z + (c_c + c_z) J` and
/// `B = α_c Ū_c - α_z Ū_z + (c_c - c_z) J` with `Ū` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GameDecomposition {
    pub alpha_coop: f64,
    pub alpha_zero_sum: f64,
    pub shift_coop: f64,
    pub shift_zero_sum: f64,
    #[serde(skip)]
    pub coop: DMatrix<f64>,
    #[serde(skip)]
    pub zero_sum: DMatrix<f64>,
}

impl GameDecomposition {
    pub fn reconstruct_leader(&self) -> DMatrix<f64> {
        &self.coop * self.alpha_coop
            + &self.zero_sum * self.alpha_zero_sum
            + self.coop.map(|_| self.shift_coop + self.shift_zero_sum)
    }

    pub fn reconstruct_follower(&self) -> DMatrix<f64> {
        &self.coop * self.alpha_coop - &self.zero_sum * self.alpha_zero_sum
            + self.coop.map(|_| self.shift_coop - self.shift_zero_sum)
    }
}

pub fn decompose(game: &BimatrixGame) -> GameDecomposition {
    let coop = (game.leader() + game.follower()) * 0.5;
    let zero_sum = (game.leader() - game.follower()) * 0.5;
    let (coop, alpha_coop, shift_coop) = unit_range(coop);
    let (zero_sum, alpha_zero_sum, shift_zero_sum) = unit_range(zero_sum);
    GameDecomposition {
        alpha_coop,
        alpha_zero_sum,
        shift_coop,
        shift_zero_sum,
        coop,
        zero_sum,
    }
}

fn unit_range(m: DMatrix<f64>) -> (DMatrix<f64>, f64, f64) {
    let lo = m.min();
    let r = range(&m);
    if r <= 1e-15 {
        return (DMatrix::zeros(m.nrows(), m.ncols()), 0.0, lo);
    }
    (m.map(|v| (v - lo) / r), r, lo)
}

/// The diagnostics of a leader strategy that the bound evaluators take.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Diagnostics {
    pub stochasticity: f64,
    pub concentrability: f64,
    /// `None` for follower models without response boundaries.
    pub boundary_distance: Option<f64>,
    pub leader_actions: usize,
    pub follower_actions: usize,
    pub normalized: bool,
}

impl Diagnostics {
    pub fn compute(game: &BimatrixGame, x: &MixedStrategy, model: &FollowerModel) -> Result<Self> {
        let boundary_distance = if model.is_pure() {
            Some(boundary_distance(game, x, model)?)
        } else {
            None
        };
        Ok(Diagnostics {
            stochasticity: stochasticity(x),
            concentrability: concentrability(x)?,
            boundary_distance,
            leader_actions: game.leader_actions(),
            follower_actions: game.follower_actions(),
            normalized: game.is_normalized(),
        })
    }
}
