//! Follower response models and the full-information Stackelberg return.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::game::{BimatrixGame, MixedStrategy};

/// Follower utilities within this distance of the maximum count as ties.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// How a fully rational follower picks among equally good pure responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum TieBreak {
    /// Pick the response that is best for the leader; the full-information
    /// supremum is attained under this rule.
    FavorLeader,
    /// Pick the response that is worst for the leader.
    #[default]
    WorstCase,
}

/// A finite set of interior leader strategies a classifying follower
/// matches observations against.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypeSet {
    types: Vec<MixedStrategy>,
    log_types: Vec<Vec<f64>>,
}

impl TypeSet {
    pub fn new(types: Vec<MixedStrategy>) -> Result<Self> {
        let Some(first) = types.first() else {
            return Err(Error::param("types", "at least one type is required"));
        };
        let m = first.len();
        for (i, t) in types.iter().enumerate() {
            if t.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    actual: t.len(),
                });
            }
            if t.probs().iter().any(|&p| p <= 0.0) {
                return Err(Error::param(
                    "types",
                    format!("type {i} is not strictly positive"),
                ));
            }
            if types[..i].iter().any(|u| u == t) {
                return Err(Error::param("types", format!("type {i} is a duplicate")));
            }
        }
        let log_types = types
            .iter()
            .map(|t| t.probs().iter().map(|p| p.ln()).collect())
            .collect();
        Ok(TypeSet { types, log_types })
    }

    pub fn types(&self) -> &[MixedStrategy] {
        &self.types
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub(crate) fn log_type(&self, i: usize) -> &[f64] {
        &self.log_types[i]
    }

    /// Maximum-likelihood type for data `x`: maximizes `<x, log x^i>`, ties
    /// going to the lowest index.
    pub fn classify(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_ll = f64::NEG_INFINITY;
        for (i, lt) in self.log_types.iter().enumerate() {
            let ll: f64 = x.iter().zip(lt).map(|(p, l)| p * l).sum();
            if ll > best_ll + 1e-12 {
                best = i;
                best_ll = ll;
            }
        }
        best
    }
}

/// The follower's response model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum FollowerModel {
    /// Best response to the (estimated) leader strategy.
    Rational { tiebreak: TieBreak },
    /// Softmax response `σ_λ(B^T x)`; `lambda = 0` is the uniform response.
    MaxEnt { lambda: f64 },
    /// Best response to the maximum-likelihood type of the estimate.
    Classifier { types: TypeSet, tiebreak: TieBreak },
    /// The per-state softmax response of a myopic follower in a dynamic
    /// game; on a static game it coincides with `MaxEnt`.
    MyopicMaxEnt { lambda: f64 },
}

impl FollowerModel {
    pub fn rational(tiebreak: TieBreak) -> Self {
        FollowerModel::Rational { tiebreak }
    }

    pub fn maxent(lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(FollowerModel::MaxEnt { lambda })
    }

    pub fn myopic_maxent(lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(FollowerModel::MyopicMaxEnt { lambda })
    }

    pub fn classifier(types: Vec<MixedStrategy>, tiebreak: TieBreak) -> Result<Self> {
        Ok(FollowerModel::Classifier {
            types: TypeSet::new(types)?,
            tiebreak,
        })
    }

    /// The follower's mixed strategy when it believes the leader plays `x`.
    pub fn respond(&self, game: &BimatrixGame, x: &MixedStrategy) -> MixedStrategy {
        self.respond_to(game, x.probs())
    }

    pub(crate) fn respond_to(&self, game: &BimatrixGame, x: &[f64]) -> MixedStrategy {
        let n = game.follower_actions();
        match self {
            FollowerModel::Rational { tiebreak } => {
                MixedStrategy::pure(n, rational_action_raw(game, x, *tiebreak))
            }
            FollowerModel::MaxEnt { lambda } | FollowerModel::MyopicMaxEnt { lambda } => {
                MixedStrategy::from_simplex_unchecked(softmax(&game.follower_payoffs(x), *lambda))
            }
            FollowerModel::Classifier { types, tiebreak } => {
                let t = types.classify(x);
                MixedStrategy::pure(
                    n,
                    rational_action_raw(game, types.types()[t].probs(), *tiebreak),
                )
            }
        }
    }

    /// True for the piecewise-constant (pure response) models.
    pub fn is_pure(&self) -> bool {
        matches!(
            self,
            FollowerModel::Rational { .. } | FollowerModel::Classifier { .. }
        )
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::param(
            "lambda",
            format!("must be finite and >= 0, got {lambda}"),
        ));
    }
    Ok(())
}

/// `σ_λ(z)`, evaluated with max-subtraction so large `λ z` cannot overflow.
pub fn softmax(z: &[f64], lambda: f64) -> Vec<f64> {
    let n = z.len();
    if lambda == 0.0 {
        return vec![1.0 / n as f64; n];
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|v| (lambda * (v - max)).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    out
}

/// Index of the follower's pure best response to `x`.
pub fn rational_action(game: &BimatrixGame, x: &MixedStrategy, tiebreak: TieBreak) -> usize {
    assert_eq!(
        x.len(),
        game.leader_actions(),
        "strategy/game size mismatch"
    );
    rational_action_raw(game, x.probs(), tiebreak)
}

pub(crate) fn rational_action_raw(game: &BimatrixGame, x: &[f64], tiebreak: TieBreak) -> usize {
    let follower = game.follower_payoffs(x);
    let best = follower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let leader = game.leader_payoffs(x);
    let mut choice: Option<usize> = None;
    for (j, &u) in follower.iter().enumerate() {
        if u < best - TIE_TOLERANCE {
            continue;
        }
        choice = match choice {
            None => Some(j),
            Some(c) => {
                let better = match tiebreak {
                    TieBreak::FavorLeader => leader[j] > leader[c],
                    TieBreak::WorstCase => leader[j] < leader[c],
                };
                Some(if better { j } else { c })
            }
        };
    }
    choice.expect("at least one follower action")
}

/// The follower's best response `e_j` to `x`.
pub fn rational_response(
    game: &BimatrixGame,
    x: &MixedStrategy,
    tiebreak: TieBreak,
) -> MixedStrategy {
    MixedStrategy::pure(game.follower_actions(), rational_action(game, x, tiebreak))
}

/// `σ_λ(B^T x)`.
pub fn maxent_response(game: &BimatrixGame, x: &MixedStrategy, lambda: f64) -> MixedStrategy {
    assert_eq!(
        x.len(),
        game.leader_actions(),
        "strategy/game size mismatch"
    );
    MixedStrategy::from_simplex_unchecked(softmax(&game.follower_payoffs(x.probs()), lambda))
}

/// Classifies `x` into a type and best-responds to that type.
pub fn classifier_response(
    game: &BimatrixGame,
    x: &MixedStrategy,
    types: &TypeSet,
    tiebreak: TieBreak,
) -> (usize, MixedStrategy) {
    assert_eq!(
        x.len(),
        game.leader_actions(),
        "strategy/game size mismatch"
    );
    let t = types.classify(x.probs());
    let j = rational_action_raw(game, types.types()[t].probs(), tiebreak);
    (t, MixedStrategy::pure(game.follower_actions(), j))
}

/// Leader's return `SR(x) = x^T A y*(x)` when the follower knows `x`.
pub fn stackelberg_return(game: &BimatrixGame, x: &MixedStrategy, model: &FollowerModel) -> f64 {
    assert_eq!(
        x.len(),
        game.leader_actions(),
        "strategy/game size mismatch"
    );
    let y = model.respond(game, x);
    game.leader_value(x.probs(), y.probs())
}
