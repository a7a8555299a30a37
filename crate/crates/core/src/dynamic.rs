//! Finite dynamic Stackelberg games with terminal states and a myopic
//! max-entropy follower that keeps a plug-in estimate of the leader's
//! strategy for every state.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::followers::softmax;
use crate::game::{
    matrix_from_rows, matrix_rows, sample_index, stream_rng, BimatrixGame, MixedStrategy,
};
use crate::inference::{plugin_estimate, ActionCounts};
use crate::simulate::{CurveAccumulator, Moments, SimResult};

/// Tolerance on transition rows summing to one.
pub const TRANSITION_TOLERANCE: f64 = 1e-9;

/// Pure stationary follower policies enumerated by [`exploration_constants`].
pub const POLICY_BUDGET: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicGame {
    state_labels: Vec<String>,
    leader_labels: Vec<String>,
    follower_labels: Vec<String>,
    terminal: Vec<bool>,
    /// Utilities `A(s)`, `B(s)`; zero at terminal states.
    stages: Vec<BimatrixGame>,
    /// Flattened `P(s, a, b, q)`.
    transition: Vec<f64>,
    start: Vec<f64>,
}

impl DynamicGame {
    /// Builds a game from dense arrays.
    ///
    /// `transition[s][a][b]` is the next-state distribution; rows of
    /// terminal states are ignored and replaced by a self-loop.
    pub fn new(
        terminal: Vec<bool>,
        stages: Vec<BimatrixGame>,
        transition: Vec<Vec<Vec<Vec<f64>>>>,
        start: Vec<f64>,
    ) -> Result<Self> {
        let n_states = terminal.len();
        if n_states == 0 {
            return Err(Error::InvalidGame("no states".into()));
        }
        if !terminal.iter().any(|&t| t) {
            return Err(Error::InvalidGame(
                "at least one terminal state is required".into(),
            ));
        }
        if stages.len() != n_states || transition.len() != n_states {
            return Err(Error::DimensionMismatch {
                expected: n_states,
                actual: stages.len().min(transition.len()),
            });
        }
        let first = stages
            .iter()
            .zip(&terminal)
            .find(|(_, t)| !**t)
            .map(|(g, _)| g);
        let (na, nb) = match first {
            Some(g) => (g.leader_actions(), g.follower_actions()),
            None => (stages[0].leader_actions(), stages[0].follower_actions()),
        };
        let mut flat = vec![0.0; n_states * na * nb * n_states];
        let mut fixed_stages = Vec::with_capacity(n_states);
        for s in 0..n_states {
            let g = &stages[s];
            if g.leader_actions() != na || g.follower_actions() != nb {
                return Err(Error::InvalidGame(format!(
                    "state {s} has a different action set"
                )));
            }
            if terminal[s] {
                fixed_stages.push(BimatrixGame::new(
                    DMatrix::zeros(na, nb),
                    DMatrix::zeros(na, nb),
                )?);
                for a in 0..na {
                    for b in 0..nb {
                        flat[((s * na + a) * nb + b) * n_states + s] = 1.0;
                    }
                }
                continue;
            }
            fixed_stages.push(g.clone());
            if transition[s].len() != na {
                return Err(Error::InvalidGame(format!(
                    "state {s}: transition needs {na} leader rows"
                )));
            }
            for a in 0..na {
                if transition[s][a].len() != nb {
                    return Err(Error::InvalidGame(format!(
                        "state {s}: transition needs {nb} follower entries"
                    )));
                }
                for b in 0..nb {
                    let row = &transition[s][a][b];
                    if row.len() != n_states {
                        return Err(Error::InvalidGame(format!(
                            "state {s}: distribution over {n_states} states expected"
                        )));
                    }
                    check_distribution(row, &format!("transition ({s}, {a}, {b})"))?;
                    let base = ((s * na + a) * nb + b) * n_states;
                    flat[base..base + n_states].copy_from_slice(row);
                }
            }
        }
        if start.len() != n_states {
            return Err(Error::DimensionMismatch {
                expected: n_states,
                actual: start.len(),
            });
        }
        check_distribution(&start, "start distribution")?;
        Ok(DynamicGame {
            state_labels: (0..n_states).map(|s| format!("s{s}")).collect(),
            leader_labels: (0..na).map(|a| format!("a{a}")).collect(),
            follower_labels: (0..nb).map(|b| format!("b{b}")).collect(),
            terminal,
            stages: fixed_stages,
            transition: flat,
            start,
        })
    }

    pub fn states(&self) -> usize {
        self.terminal.len()
    }

    pub fn leader_actions(&self) -> usize {
        self.stages[0].leader_actions()
    }

    pub fn follower_actions(&self) -> usize {
        self.stages[0].follower_actions()
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn non_terminal(&self) -> Vec<usize> {
        (0..self.states()).filter(|&s| !self.terminal[s]).collect()
    }

    pub fn stage(&self, s: usize) -> &BimatrixGame {
        &self.stages[s]
    }

    pub fn start(&self) -> &[f64] {
        &self.start
    }

    pub fn state_labels(&self) -> &[String] {
        &self.state_labels
    }

    /// Next-state distribution after `(s, a, b)`.
    pub fn transition(&self, s: usize, a: usize, b: usize) -> &[f64] {
        let n = self.states();
        let base = ((s * self.leader_actions() + a) * self.follower_actions() + b) * n;
        &self.transition[base..base + n]
    }

    /// Parses the JSON game format (see [`DynamicGameFile`]).
    pub fn from_json(text: &str) -> Result<Self> {
        let file: DynamicGameFile = serde_json::from_str(text)?;
        file.into_game()
    }

    pub fn to_json(&self) -> String {
        let mut transitions = Vec::new();
        let mut rewards = HashMap::new();
        for s in self.non_terminal() {
            for a in 0..self.leader_actions() {
                for b in 0..self.follower_actions() {
                    let next = self
                        .transition(s, a, b)
                        .iter()
                        .enumerate()
                        .filter(|(_, &p)| p > 0.0)
                        .map(|(q, &p)| (self.state_labels[q].clone(), p))
                        .collect();
                    transitions.push(TransitionEntry {
                        state: self.state_labels[s].clone(),
                        leader: self.leader_labels[a].clone(),
                        follower: self.follower_labels[b].clone(),
                        next,
                    });
                }
            }
            rewards.insert(
                self.state_labels[s].clone(),
                StageRewards {
                    leader: matrix_rows(self.stages[s].leader()),
                    follower: matrix_rows(self.stages[s].follower()),
                },
            );
        }
        let file = DynamicGameFile {
            states: self.state_labels.clone(),
            terminal: self
                .state_labels
                .iter()
                .zip(&self.terminal)
                .filter(|(_, &t)| t)
                .map(|(l, _)| l.clone())
                .collect(),
            leader_actions: self.leader_labels.clone(),
            follower_actions: self.follower_labels.clone(),
            start: self
                .state_labels
                .iter()
                .zip(&self.start)
                .filter(|(_, &p)| p > 0.0)
                .map(|(l, &p)| (l.clone(), p))
                .collect(),
            transitions,
            rewards,
        };
        serde_json::to_string_pretty(&file).expect("game serializes")
    }

    fn with_labels(
        mut self,
        states: Vec<String>,
        leader: Vec<String>,
        follower: Vec<String>,
    ) -> Self {
        self.state_labels = states;
        self.leader_labels = leader;
        self.follower_labels = follower;
        self
    }
}

fn check_distribution(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidGame(format!(
            "{what} has a negative or non-finite entry"
        )));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > TRANSITION_TOLERANCE {
        return Err(Error::InvalidGame(format!("{what} sums to {sum}")));
    }
    Ok(())
}

/// On-disk dynamic game. States and actions are referred to by label.
///
/// ```json
/// {
///   "states": ["s0", "s1", "end"],
///   "terminal": ["end"],
///   "leader_actions": ["a0", "a1"],
///   "follower_actions": ["b0", "b1"],
///   "start": {"s0": 1.0},
///   "transitions": [
///     {"state": "s0", "leader": "a0", "follower": "b0", "next": {"s1": 0.5, "end": 0.5}}
///   ],
///   "rewards": {"s0": {"leader": [[1, 0], [0, 1]], "follower": [[0, 1], [1, 0]]}}
/// }
/// ```
///
/// Every non-terminal `(state, leader, follower)` triple needs a transition
/// entry and every non-terminal state a reward entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DynamicGameFile {
    pub states: Vec<String>,
    pub terminal: Vec<String>,
    pub leader_actions: Vec<String>,
    pub follower_actions: Vec<String>,
    pub start: HashMap<String, f64>,
    pub transitions: Vec<TransitionEntry>,
    pub rewards: HashMap<String, StageRewards>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransitionEntry {
    pub state: String,
    pub leader: String,
    pub follower: String,
    pub next: HashMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRewards {
    pub leader: Vec<Vec<f64>>,
    pub follower: Vec<Vec<f64>>,
}

fn label_index(labels: &[String]) -> Result<HashMap<&str, usize>> {
    let mut out = HashMap::new();
    for (i, l) in labels.iter().enumerate() {
        if out.insert(l.as_str(), i).is_some() {
            return Err(Error::InvalidGame(format!("duplicate label `{l}`")));
        }
    }
    Ok(out)
}

fn lookup(index: &HashMap<&str, usize>, label: &str) -> Result<usize> {
    index
        .get(label)
        .copied()
        .ok_or_else(|| Error::InvalidGame(format!("unknown label `{label}`")))
}

impl DynamicGameFile {
    pub fn into_game(self) -> Result<DynamicGame> {
        let states = label_index(&self.states)?;
        let leader = label_index(&self.leader_actions)?;
        let follower = label_index(&self.follower_actions)?;
        let n = self.states.len();
        let (na, nb) = (self.leader_actions.len(), self.follower_actions.len());
        if na == 0 || nb == 0 {
            return Err(Error::InvalidGame("empty action set".into()));
        }
        let mut terminal = vec![false; n];
        for t in &self.terminal {
            terminal[lookup(&states, t)?] = true;
        }
        let mut start = vec![0.0; n];
        for (l, p) in &self.start {
            start[lookup(&states, l)?] += p;
        }
        let mut transition = vec![vec![vec![Vec::new(); nb]; na]; n];
        for entry in &self.transitions {
            let s = lookup(&states, &entry.state)?;
            let a = lookup(&leader, &entry.leader)?;
            let b = lookup(&follower, &entry.follower)?;
            if terminal[s] {
                return Err(Error::InvalidGame(format!(
                    "terminal state `{}` has a transition",
                    entry.state
                )));
            }
            if !transition[s][a][b].is_empty() {
                return Err(Error::InvalidGame(format!(
                    "duplicate transition ({}, {}, {})",
                    entry.state, entry.leader, entry.follower
                )));
            }
            let mut row = vec![0.0; n];
            for (l, p) in &entry.next {
                row[lookup(&states, l)?] += p;
            }
            transition[s][a][b] = row;
        }
        let mut stages = Vec::with_capacity(n);
        for s in 0..n {
            if terminal[s] {
                stages.push(BimatrixGame::new(
                    DMatrix::zeros(na, nb),
                    DMatrix::zeros(na, nb),
                )?);
                continue;
            }
            for a in 0..na {
                for b in 0..nb {
                    if transition[s][a][b].is_empty() {
                        return Err(Error::InvalidGame(format!(
                            "missing transition ({}, {}, {})",
                            self.states[s], self.leader_actions[a], self.follower_actions[b]
                        )));
                    }
                }
            }
            let r = self.rewards.get(&self.states[s]).ok_or_else(|| {
                Error::InvalidGame(format!("missing rewards for `{}`", self.states[s]))
            })?;
            let stage =
                BimatrixGame::new(matrix_from_rows(&r.leader)?, matrix_from_rows(&r.follower)?)?;
            if stage.leader_actions() != na || stage.follower_actions() != nb {
                return Err(Error::InvalidGame(format!(
                    "rewards for `{}` have the wrong shape",
                    self.states[s]
                )));
            }
            stages.push(stage);
        }
        Ok(
            DynamicGame::new(terminal, stages, transition, start)?.with_labels(
                self.states,
                self.leader_actions,
                self.follower_actions,
            ),
        )
    }
}

/// One mixed strategy per state.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct StateStrategy {
    per_state: Vec<MixedStrategy>,
}

impl StateStrategy {
    pub fn new(per_state: Vec<MixedStrategy>) -> Self {
        StateStrategy { per_state }
    }

    pub fn uniform(states: usize, actions: usize) -> Self {
        StateStrategy {
            per_state: vec![MixedStrategy::uniform(actions); states],
        }
    }

    pub fn at(&self, s: usize) -> &MixedStrategy {
        &self.per_state[s]
    }

    pub fn len(&self) -> usize {
        self.per_state.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_state.is_empty()
    }

    fn check(&self, states: usize, actions: usize) -> Result<()> {
        if self.per_state.len() != states {
            return Err(Error::DimensionMismatch {
                expected: states,
                actual: self.per_state.len(),
            });
        }
        if let Some(x) = self.per_state.iter().find(|x| x.len() != actions) {
            return Err(Error::DimensionMismatch {
                expected: actions,
                actual: x.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Contraction {
    /// Largest probability of not terminating in one step.
    pub gamma: f64,
    /// True when `gamma == 1`, in which case the dynamic bounds say nothing.
    pub vacuous: bool,
}

pub fn check_contraction(game: &DynamicGame) -> Contraction {
    let mut gamma: f64 = 0.0;
    for s in game.non_terminal() {
        for a in 0..game.leader_actions() {
            for b in 0..game.follower_actions() {
                let end: f64 = game
                    .transition(s, a, b)
                    .iter()
                    .enumerate()
                    .filter(|(q, _)| game.terminal[*q])
                    .map(|(_, p)| p)
                    .sum();
                gamma = gamma.max(1.0 - end);
            }
        }
    }
    let gamma = gamma.clamp(0.0, 1.0);
    Contraction {
        gamma,
        vacuous: gamma >= 1.0 - 1e-12,
    }
}

/// State-to-state matrix on the non-terminal states under `(x, y)`.
fn chain(game: &DynamicGame, x: &StateStrategy, y: &[Vec<f64>], nt: &[usize]) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(nt.len(), nt.len());
    for (r, &s) in nt.iter().enumerate() {
        for a in 0..game.leader_actions() {
            let xa = x.at(s)[a];
            if xa == 0.0 {
                continue;
            }
            for b in 0..game.follower_actions() {
                let w = xa * y[s][b];
                if w == 0.0 {
                    continue;
                }
                let row = game.transition(s, a, b);
                for (c, &q) in nt.iter().enumerate() {
                    p[(r, c)] += w * row[q];
                }
            }
        }
    }
    p
}

fn solve(lhs: DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>> {
    let sol = lhs.lu().solve(&rhs).ok_or_else(|| {
        Error::Singular("value system is singular; does every state terminate?".into())
    })?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular(
            "value system produced non-finite values".into(),
        ));
    }
    Ok(sol)
}

/// Leader and follower values of every state when the follower plays `y(s)`.
/// Terminal states have value zero.
pub fn policy_values(
    game: &DynamicGame,
    x: &StateStrategy,
    y: &[Vec<f64>],
) -> Result<(Vec<f64>, Vec<f64>)> {
    x.check(game.states(), game.leader_actions())?;
    if y.len() != game.states() {
        return Err(Error::DimensionMismatch {
            expected: game.states(),
            actual: y.len(),
        });
    }
    let nt = game.non_terminal();
    let p = chain(game, x, y, &nt);
    let lhs = DMatrix::identity(nt.len(), nt.len()) - p;
    let rl = DVector::from_iterator(
        nt.len(),
        nt.iter()
            .map(|&s| game.stages[s].leader_value(x.at(s).probs(), &y[s])),
    );
    let rf = DVector::from_iterator(
        nt.len(),
        nt.iter()
            .map(|&s| game.stages[s].follower_value(x.at(s).probs(), &y[s])),
    );
    let vl = solve(lhs.clone(), rl)?;
    let vf = solve(lhs, rf)?;
    let mut leader = vec![0.0; game.states()];
    let mut follower = vec![0.0; game.states()];
    for (i, &s) in nt.iter().enumerate() {
        leader[s] = vl[i];
        follower[s] = vf[i];
    }
    Ok((leader, follower))
}

/// The myopic max-entropy response `sigma(B(s)^T x(s))` at every state.
pub fn myopic_response(
    game: &DynamicGame,
    x: &StateStrategy,
    lambda: f64,
) -> Result<Vec<Vec<f64>>> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::param("lambda", "must be finite and >= 0"));
    }
    x.check(game.states(), game.leader_actions())?;
    Ok((0..game.states())
        .map(|s| softmax(&game.stages[s].follower_payoffs(x.at(s).probs()), lambda))
        .collect())
}

fn start_value(game: &DynamicGame, values: &[f64]) -> f64 {
    game.start.iter().zip(values).map(|(p, v)| p * v).sum()
}

/// Expected total leader return from the start distribution when the
/// follower knows `x`.
pub fn dynamic_sr(game: &DynamicGame, x: &StateStrategy, lambda: f64) -> Result<f64> {
    let y = myopic_response(game, x, lambda)?;
    let (v, _) = policy_values(game, x, &y)?;
    Ok(start_value(game, &v))
}

/// Exploration constants: the smallest probability of ever reaching a
/// non-terminal state from the start and of returning to it, minimized over
/// follower policies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Exploration {
    pub rho: f64,
    pub mu: f64,
    /// Per non-terminal state minima, in state order.
    pub reach: Vec<f64>,
    pub revisit: Vec<f64>,
    /// Number of pure stationary policies examined.
    pub policies: usize,
    /// False when policies were sampled rather than enumerated, in which
    /// case `rho` and `mu` may overestimate the true minima.
    pub exhaustive: bool,
}

/// Reach and return probabilities of every non-terminal state under a
/// fixed follower policy, via one absorbing-chain solve per state.
fn reach_return(p: &DMatrix<f64>, start: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = p.nrows();
    let mut reach = vec![0.0; n];
    let mut ret = vec![0.0; n];
    for target in 0..n {
        // h(u): probability of hitting `target` from u at some t >= 0
        let others: Vec<usize> = (0..n).filter(|&u| u != target).collect();
        let mut h = vec![0.0; n];
        h[target] = 1.0;
        if !others.is_empty() {
            let k = others.len();
            let mut lhs = DMatrix::identity(k, k);
            let mut rhs = DVector::zeros(k);
            for (r, &u) in others.iter().enumerate() {
                rhs[r] = p[(u, target)];
                for (c, &q) in others.iter().enumerate() {
                    lhs[(r, c)] -= p[(u, q)];
                }
            }
            let sol = solve(lhs, rhs)?;
            for (r, &u) in others.iter().enumerate() {
                h[u] = sol[r].clamp(0.0, 1.0);
            }
        }
        reach[target] = start.iter().zip(&h).map(|(a, b)| a * b).sum();
        ret[target] = (0..n)
            .map(|q| p[(target, q)] * h[q])
            .sum::<f64>()
            .clamp(0.0, 1.0);
    }
    Ok((reach, ret))
}

fn exploration_for(
    game: &DynamicGame,
    x: &StateStrategy,
    nt: &[usize],
    policies: impl Iterator<Item = Vec<usize>>,
) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let nb = game.follower_actions();
    let start: Vec<f64> = nt.iter().map(|&s| game.start[s]).collect();
    let mut reach = vec![f64::INFINITY; nt.len()];
    let mut revisit = vec![f64::INFINITY; nt.len()];
    let mut count = 0;
    for policy in policies {
        let mut y = vec![vec![0.0; nb]; game.states()];
        for (i, &s) in nt.iter().enumerate() {
            y[s][policy[i]] = 1.0;
        }
        let p = chain(game, x, &y, nt);
        let (r, m) = reach_return(&p, &start)?;
        for i in 0..nt.len() {
            reach[i] = reach[i].min(r[i]);
            revisit[i] = revisit[i].min(m[i]);
        }
        count += 1;
    }
    Ok((reach, revisit, count))
}

fn summarize(reach: Vec<f64>, revisit: Vec<f64>, policies: usize, exhaustive: bool) -> Exploration {
    Exploration {
        rho: reach.iter().copied().fold(1.0, f64::min),
        mu: revisit.iter().copied().fold(1.0, f64::min),
        reach,
        revisit,
        policies,
        exhaustive,
    }
}

/// Exact exploration constants over all pure stationary follower policies.
pub fn exploration_constants(game: &DynamicGame, x: &StateStrategy) -> Result<Exploration> {
    x.check(game.states(), game.leader_actions())?;
    let nt = game.non_terminal();
    let nb = game.follower_actions();
    let total = (nb as f64).powi(nt.len() as i32);
    if total > POLICY_BUDGET as f64 {
        return Err(Error::BudgetExceeded(format!(
            "{nb}^{} pure follower policies exceed the budget of {POLICY_BUDGET}",
            nt.len()
        )));
    }
    let total = total as usize;
    let policies = (0..total).map(|mut code| {
        let mut p = vec![0; nt.len()];
        for slot in p.iter_mut() {
            *slot = code % nb;
            code /= nb;
        }
        p
    });
    let (reach, revisit, count) = exploration_for(game, x, &nt, policies)?;
    Ok(summarize(reach, revisit, count, true))
}

/// Exploration constants over `samples` random pure stationary policies,
/// for games too large to enumerate.
pub fn exploration_constants_sampled(
    game: &DynamicGame,
    x: &StateStrategy,
    samples: usize,
    seed: u64,
) -> Result<Exploration> {
    x.check(game.states(), game.leader_actions())?;
    let nt = game.non_terminal();
    let nb = game.follower_actions();
    let mut rng = stream_rng(seed, 0);
    let policies: Vec<Vec<usize>> = (0..samples)
        .map(|_| (0..nt.len()).map(|_| rng.random_range(0..nb)).collect())
        .collect();
    let (reach, revisit, count) = exploration_for(game, x, &nt, policies.into_iter())?;
    Ok(summarize(reach, revisit, count, false))
}

/// Steps after which an episode is cut: the surviving mass is below 1e-9.
pub fn horizon(gamma: f64) -> usize {
    if gamma <= 0.0 {
        1
    } else {
        ((1e-9f64).ln() / gamma.ln()).ceil().max(1.0) as usize
    }
}

/// Repeated episodes against a follower that estimates `x(s)` from every
/// leader action logged at `s` in earlier episodes (uniform before the
/// first visit).
///
/// Interaction `k` of the result is episode `k`. Per-step returns are
/// recorded as the expectation over both players' draws at the visited
/// state; the trajectory itself is sampled.
pub fn dynamic_ir_mc(
    game: &DynamicGame,
    x: &StateStrategy,
    lambda: f64,
    episodes: usize,
    trials: usize,
    seed: u64,
) -> Result<SimResult> {
    if episodes == 0 || trials == 0 {
        return Err(Error::param(
            "episodes",
            "need at least one episode and one trial",
        ));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::param("lambda", "must be finite and >= 0"));
    }
    x.check(game.states(), game.leader_actions())?;
    let contraction = check_contraction(game);
    if contraction.vacuous {
        return Err(Error::param(
            "game",
            "some action never terminates, episodes are unbounded",
        ));
    }
    let t_max = horizon(contraction.gamma);
    let block = 32;
    let starts: Vec<usize> = (0..trials).step_by(block).collect();
    let partials: Vec<CurveAccumulator> = starts
        .par_iter()
        .map(|&first| {
            let mut acc = CurveAccumulator::new(episodes);
            for trial in first..(first + block).min(trials) {
                run_episodes(
                    game,
                    x,
                    lambda,
                    episodes,
                    t_max,
                    seed,
                    trial as u64,
                    &mut acc,
                );
            }
            acc
        })
        .collect();
    let mut total = CurveAccumulator::new(episodes);
    for p in &partials {
        total.merge(p);
    }
    Ok(SimResult {
        trials,
        stats: total.into_stats(1),
        action_logs: None,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_episodes(
    game: &DynamicGame,
    x: &StateStrategy,
    lambda: f64,
    episodes: usize,
    t_max: usize,
    seed: u64,
    trial: u64,
    acc: &mut CurveAccumulator,
) {
    let mut rng = stream_rng(seed, trial);
    let na = game.leader_actions();
    let mut counts = vec![ActionCounts::new(na); game.states()];
    let uniform = MixedStrategy::uniform(na);
    let mut visits: Vec<(usize, usize)> = Vec::new();
    for k in 0..episodes {
        // responses are fixed for the whole episode
        let y: Vec<Vec<f64>> = (0..game.states())
            .map(|s| {
                let est = plugin_estimate(&counts[s]).unwrap_or_else(|_| uniform.clone());
                softmax(&game.stages[s].follower_payoffs(est.probs()), lambda)
            })
            .collect();
        let (ret_l, ret_f) = run_episode(game, x, &y, t_max, &mut rng, &mut visits);
        acc.push(k, ret_l, ret_f);
        for (s, a) in visits.drain(..) {
            counts[s].record(a);
        }
    }
}

/// Plays one episode with fixed follower responses `y`, appending the
/// visited `(state, leader action)` pairs to `visits`.
fn run_episode(
    game: &DynamicGame,
    x: &StateStrategy,
    y: &[Vec<f64>],
    t_max: usize,
    rng: &mut impl Rng,
    visits: &mut Vec<(usize, usize)>,
) -> (f64, f64) {
    let mut s = sample_index(&game.start, rng);
    let (mut ret_l, mut ret_f) = (0.0, 0.0);
    for _ in 0..t_max {
        if game.terminal[s] {
            break;
        }
        let xs = x.at(s).probs();
        ret_l += game.stages[s].leader_value(xs, &y[s]);
        ret_f += game.stages[s].follower_value(xs, &y[s]);
        let a = sample_index(xs, rng);
        let b = sample_index(&y[s], rng);
        visits.push((s, a));
        s = sample_index(game.transition(s, a, b), rng);
    }
    (ret_l, ret_f)
}

/// Monte Carlo leader return (mean, 95% half-width) when the follower plays
/// the fixed per-state responses `y`.
pub fn episode_return_mc(
    game: &DynamicGame,
    x: &StateStrategy,
    y: &[Vec<f64>],
    episodes: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    x.check(game.states(), game.leader_actions())?;
    if y.len() != game.states() || y.iter().any(|v| v.len() != game.follower_actions()) {
        return Err(Error::DimensionMismatch {
            expected: game.states(),
            actual: y.len(),
        });
    }
    let contraction = check_contraction(game);
    if contraction.vacuous {
        return Err(Error::param(
            "game",
            "some action never terminates, episodes are unbounded",
        ));
    }
    let t_max = horizon(contraction.gamma);
    let block = 4096;
    let starts: Vec<usize> = (0..episodes).step_by(block).collect();
    let partials: Vec<Moments> = starts
        .par_iter()
        .map(|&first| {
            let mut acc = Moments::default();
            let mut visits = Vec::new();
            for e in first..(first + block).min(episodes) {
                let mut rng = stream_rng(seed, e as u64);
                acc.push(run_episode(game, x, y, t_max, &mut rng, &mut visits).0);
                visits.clear();
            }
            acc
        })
        .collect();
    let mut total = Moments::default();
    for p in &partials {
        total.merge(p);
    }
    Ok((total.mean(), total.ci95()))
}

/// Outcome of [`simulation_lemma_check`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationLemmaReport {
    pub gamma: f64,
    pub epsilon: f64,
    /// `gamma * epsilon / (1 - gamma)^2`.
    pub bound: f64,
    pub perturbations: usize,
    /// Largest `|V'(s) - V(s)|` over perturbations and non-terminal states.
    pub max_deviation: f64,
    /// `max_deviation / bound` (infinite when the bound is zero and the
    /// deviation is not).
    pub max_ratio: f64,
    pub violations: usize,
}

/// Moves `y` by at most `epsilon` in L1 towards a random point of the
/// simplex.
fn perturb(y: &[f64], epsilon: f64, rng: &mut impl Rng) -> Vec<f64> {
    let e: Vec<f64> = y.iter().map(|_| Exp1.sample(rng)).collect();
    let sum: f64 = e.iter().sum();
    let z: Vec<f64> = e.iter().map(|v| v / sum).collect();
    let dist: f64 = z.iter().zip(y).map(|(a, b)| (a - b).abs()).sum();
    if dist == 0.0 {
        return y.to_vec();
    }
    let t = (epsilon / dist).min(1.0);
    y.iter().zip(&z).map(|(a, b)| a + t * (b - a)).collect()
}

/// Compares the leader's values under the myopic response against values
/// under random responses within L1 distance `epsilon` of it at every
/// state, using exact value solves.
pub fn simulation_lemma_check(
    game: &DynamicGame,
    x: &StateStrategy,
    lambda: f64,
    epsilon: f64,
    perturbations: usize,
    seed: u64,
) -> Result<SimulationLemmaReport> {
    if !(epsilon >= 0.0) {
        return Err(Error::param("epsilon", "must be non-negative"));
    }
    let contraction = check_contraction(game);
    if contraction.vacuous {
        return Err(Error::param("game", "the simulation bound needs gamma < 1"));
    }
    let gamma = contraction.gamma;
    let bound = gamma * epsilon / (1.0 - gamma).powi(2);
    let y = myopic_response(game, x, lambda)?;
    let (base, _) = policy_values(game, x, &y)?;
    let mut rng = stream_rng(seed, 0);
    let mut max_deviation: f64 = 0.0;
    let mut violations = 0;
    for _ in 0..perturbations {
        let yp: Vec<Vec<f64>> = y.iter().map(|ys| perturb(ys, epsilon, &mut rng)).collect();
        let (v, _) = policy_values(game, x, &yp)?;
        let dev = game
            .non_terminal()
            .iter()
            .map(|&s| (v[s] - base[s]).abs())
            .fold(0.0, f64::max);
        if dev > bound + 1e-12 {
            violations += 1;
        }
        max_deviation = max_deviation.max(dev);
    }
    let max_ratio = if bound > 0.0 {
        max_deviation / bound
    } else if max_deviation > 1e-12 {
        f64::INFINITY
    } else {
        0.0
    };
    Ok(SimulationLemmaReport {
        gamma,
        epsilon,
        bound,
        perturbations,
        max_deviation,
        max_ratio,
        violations,
    })
}

/// A random game with `states` non-terminal states plus one terminal state
/// (the last index). Rewards are uniform on `[0, 1]`; each `(s, a, b)`
/// continues with probability drawn from `gamma_range`, spread randomly over
/// the non-terminal states. Play starts uniformly over non-terminal states.
pub fn random_dynamic_game(
    rng: &mut impl Rng,
    states: usize,
    leader_actions: usize,
    follower_actions: usize,
    gamma_range: (f64, f64),
) -> Result<DynamicGame> {
    let (lo, hi) = gamma_range;
    if !(0.0 <= lo && lo <= hi && hi < 1.0) {
        return Err(Error::param("gamma_range", "need 0 <= lo <= hi < 1"));
    }
    if states == 0 {
        return Err(Error::param(
            "states",
            "need at least one non-terminal state",
        ));
    }
    let n = states + 1;
    let mut stages = Vec::with_capacity(n);
    let mut transition = Vec::with_capacity(n);
    for _ in 0..states {
        let a = DMatrix::from_fn(leader_actions, follower_actions, |_, _| rng.random::<f64>());
        let b = DMatrix::from_fn(leader_actions, follower_actions, |_, _| rng.random::<f64>());
        stages.push(BimatrixGame::new(a, b)?);
        let mut rows = vec![vec![Vec::new(); follower_actions]; leader_actions];
        for row_a in rows.iter_mut() {
            for cell in row_a.iter_mut() {
                let cont = if hi > lo {
                    rng.random_range(lo..=hi)
                } else {
                    lo
                };
                let e: Vec<f64> = (0..states).map(|_| Exp1.sample(rng)).collect();
                let sum: f64 = e.iter().sum();
                let mut dist: Vec<f64> = e.iter().map(|v| cont * v / sum).collect();
                dist.push(1.0 - cont);
                *cell = dist;
            }
        }
        transition.push(rows);
    }
    stages.push(BimatrixGame::new(
        DMatrix::zeros(leader_actions, follower_actions),
        DMatrix::zeros(leader_actions, follower_actions),
    )?);
    transition.push(Vec::new());
    let mut start = vec![1.0 / states as f64; states];
    start.push(0.0);
    let mut terminal = vec![false; states];
    terminal.push(true);
    DynamicGame::new(terminal, stages, transition, start)
}

/// A random strategy drawn uniformly from the simplex at every state.
pub fn random_state_strategy(rng: &mut impl Rng, states: usize, actions: usize) -> StateStrategy {
    StateStrategy::new(
        (0..states)
            .map(|_| {
                let e: Vec<f64> = (0..actions).map(|_| Exp1.sample(rng)).collect();
                let sum: f64 = e.iter().sum();
                MixedStrategy::from_simplex_unchecked(e.iter().map(|v| v / sum).collect())
            })
            .collect(),
    )
}
