//! Preset experiments: the car/pedestrian curves, the tug-of-war table, the
//! regularized random-game sweep and the converse example. Every preset
//! returns plain data and can render itself as CSV.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::converse_threshold;
use crate::error::{Error, Result};
use crate::followers::{stackelberg_return, FollowerModel, TieBreak};
use crate::game::{normalize_game, stream_rng, BimatrixGame, MixedStrategy};
use crate::inference::stochasticity;
use crate::optimize::{optimize_regularized, GradConfig, Start};
use crate::parametric::{tug_ir, tug_sr, GaussianStrategy, TugOfWarGame};
use crate::simulate::{
    average_return_curve, inference_return_exact, run_repeated, running_mean, SimConfig, SimResult,
};

/// `A` and `C` i.i.d. uniform on `[0, 1]`, `B = A/2 + C/2`.
pub fn random_correlated_game(rng: &mut impl Rng, m: usize, n: usize) -> BimatrixGame {
    let a = nalgebra::DMatrix::from_fn(m, n, |_, _| rng.random::<f64>());
    let c = nalgebra::DMatrix::from_fn(m, n, |_, _| rng.random::<f64>());
    let b = (&a + &c) * 0.5;
    BimatrixGame::new(a, b).expect("finite entries")
}

/// Independent uniform utilities rescaled to unit range.
pub fn random_normalized_game(rng: &mut impl Rng, m: usize, n: usize) -> BimatrixGame {
    loop {
        let a = nalgebra::DMatrix::from_fn(m, n, |_, _| rng.random::<f64>());
        let b = nalgebra::DMatrix::from_fn(m, n, |_, _| rng.random::<f64>());
        let (g, _) = normalize_game(&BimatrixGame::new(a, b).expect("finite entries"));
        if g.is_normalized() {
            return g;
        }
    }
}

/// A strategy drawn uniformly from the simplex.
pub fn random_strategy(rng: &mut impl Rng, m: usize) -> MixedStrategy {
    let e: Vec<f64> = (0..m).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    MixedStrategy::new(e.iter().map(|v| v / s).collect()).expect("valid simplex point")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CarPedestrianConfig {
    pub lambdas: Vec<f64>,
    /// Probabilities of Stop.
    pub stop_probs: Vec<f64>,
    pub interactions: usize,
    pub trials: usize,
    pub seed: u64,
}

impl Default for CarPedestrianConfig {
    fn default() -> Self {
        CarPedestrianConfig {
            lambdas: vec![5.0, 100.0],
            stop_probs: vec![0.5, 0.53, 0.6, 0.7, 0.77, 0.8, 0.9, 1.0],
            interactions: 100,
            trials: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CarPedestrianCurve {
    pub lambda: f64,
    pub stop_prob: f64,
    pub stackelberg_return: f64,
    pub result: SimResult,
    /// Running mean of the per-interaction returns from `k = 2`.
    pub average: Vec<f64>,
}

pub fn car_pedestrian_experiment(config: &CarPedestrianConfig) -> Result<Vec<CarPedestrianCurve>> {
    let game = BimatrixGame::car_pedestrian();
    let cells: Vec<(f64, f64)> = config
        .lambdas
        .iter()
        .flat_map(|&l| config.stop_probs.iter().map(move |&p| (l, p)))
        .collect();
    cells
        .par_iter()
        .map(|&(lambda, p)| {
            let model = FollowerModel::maxent(lambda)?;
            let x = MixedStrategy::new(vec![p, 1.0 - p])?;
            let result = run_repeated(
                &game,
                &x,
                &model,
                &SimConfig::new(config.interactions, config.trials, config.seed),
            )?;
            let average = average_return_curve(&result);
            Ok(CarPedestrianCurve {
                lambda,
                stop_prob: p,
                stackelberg_return: stackelberg_return(&game, &x, &model),
                result,
                average,
            })
        })
        .collect()
}

/// Columns `lambda,p,k,mean_leader,ci_leader,average_return`, from `k = 2`.
pub fn car_pedestrian_csv(curves: &[CarPedestrianCurve]) -> String {
    let mut out = String::from("lambda,p,k,mean_leader,ci_leader,average_return\n");
    for c in curves {
        let stats = c.result.stats.iter().filter(|s| s.k >= 2);
        for (s, avg) in stats.zip(&c.average) {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                c.lambda, c.stop_prob, s.k, s.mean_leader, s.ci_leader, avg
            ));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TugRow {
    pub sd: f64,
    /// Observations available to the follower; `None` for full information.
    pub k: Option<u64>,
    pub ir: f64,
}

/// `IR(s, k)` for every `s` in `sds` and `k = 1..=k_max`, plus the
/// full-information row of each `s`.
pub fn tug_of_war_table(game: &TugOfWarGame, sds: &[f64], k_max: u64) -> Result<Vec<TugRow>> {
    let mut rows = Vec::new();
    for &sd in sds {
        let x = GaussianStrategy::new(0.0, sd)?;
        for k in 1..=k_max {
            rows.push(TugRow {
                sd,
                k: Some(k),
                ir: tug_ir(&x, game, k)?,
            });
        }
        rows.push(TugRow {
            sd,
            k: None,
            ir: tug_sr(&x, game),
        });
    }
    Ok(rows)
}

/// The default spread grid `0.1, 0.2, ..., 5.0`.
pub fn tug_default_grid() -> Vec<f64> {
    (1..=50).map(|i| i as f64 / 10.0).collect()
}

/// Columns `s,k,IR`; the full-information row has `k = inf`.
pub fn tug_of_war_csv(rows: &[TugRow]) -> String {
    let mut out = String::from("s,k,IR\n");
    for r in rows {
        let k = r.k.map_or_else(|| "inf".to_string(), |k| k.to_string());
        out.push_str(&format!("{},{},{}\n", r.sd, k, r.ir));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RandomGamesConfig {
    pub games: usize,
    pub size: usize,
    pub lambda: f64,
    pub cs: Vec<f64>,
    pub interactions: usize,
    /// Simulated runs per game and regularization weight.
    pub trials: usize,
    pub seed: u64,
    pub grad: GradConfig,
}

impl Default for RandomGamesConfig {
    fn default() -> Self {
        RandomGamesConfig {
            games: 200,
            size: 4,
            lambda: 100.0,
            cs: vec![0.0, 1.0, 10.0, 100.0],
            interactions: 100,
            trials: 100,
            seed: 0,
            // from the rational optimum alone a large `c` only reaches the
            // nearest vertex
            grad: GradConfig {
                restarts: 8,
                ..GradConfig::default()
            },
        }
    }
}

impl RandomGamesConfig {
    /// The sweep at the size used for the published figure.
    pub fn full_scale() -> Self {
        RandomGamesConfig {
            games: 10_000,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularizedCell {
    pub c: f64,
    pub x: MixedStrategy,
    pub stochasticity: f64,
    pub stackelberg_return: f64,
    /// Mean leader return at `k = 2..=K`.
    pub returns: Vec<f64>,
}

impl RegularizedCell {
    /// Running average of `returns`.
    pub fn average(&self) -> Vec<f64> {
        running_mean(self.returns.iter().copied())
    }

    /// Average return over `k = 2..=k_max`.
    pub fn average_until(&self, k_max: usize) -> f64 {
        let n = k_max.saturating_sub(1).min(self.returns.len()).max(1);
        self.returns[..n].iter().sum::<f64>() / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RandomGamesResult {
    pub config: RandomGamesConfig,
    /// `cells[g][i]` belongs to game `g` and `config.cs[i]`.
    pub cells: Vec<Vec<RegularizedCell>>,
}

impl RandomGamesResult {
    /// Average-return curve for `cs[c_index]`, averaged over games.
    pub fn mean_average_curve(&self, c_index: usize) -> Vec<f64> {
        let len = self.config.interactions - 1;
        let mut acc = vec![0.0; len];
        for game in &self.cells {
            for (a, v) in acc.iter_mut().zip(game[c_index].average()) {
                *a += v;
            }
        }
        acc.iter().map(|v| v / self.cells.len() as f64).collect()
    }

    pub fn mean_stochasticity(&self, c_index: usize) -> f64 {
        self.cells
            .iter()
            .map(|g| g[c_index].stochasticity)
            .sum::<f64>()
            / self.cells.len() as f64
    }

    /// Columns `c,k,average_return,mean_nu`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("c,k,average_return,mean_nu\n");
        for (i, c) in self.config.cs.iter().enumerate() {
            let nu = self.mean_stochasticity(i);
            for (j, v) in self.mean_average_curve(i).iter().enumerate() {
                out.push_str(&format!("{},{},{},{}\n", c, j + 2, v, nu));
            }
        }
        out
    }
}

/// For every random game and every `c`, optimizes the regularized strategy
/// from the rational optimum and simulates it. All weights of one game share
/// the simulation seed.
pub fn random_games_experiment(config: &RandomGamesConfig) -> Result<RandomGamesResult> {
    if config.games == 0 || config.cs.is_empty() {
        return Err(Error::param(
            "games",
            "need at least one game and one weight",
        ));
    }
    let model = FollowerModel::maxent(config.lambda)?;
    let cells = (0..config.games)
        .into_par_iter()
        .map(|g| {
            let mut rng = stream_rng(config.seed, g as u64);
            let game = random_correlated_game(&mut rng, config.size, config.size);
            let sim_seed = rng.random::<u64>();
            config
                .cs
                .iter()
                .map(|&c| {
                    let grad = GradConfig {
                        c,
                        ..config.grad.clone()
                    };
                    let sol = optimize_regularized(&game, config.lambda, &grad, &Start::FromLp)?;
                    let mut sim = SimConfig::new(config.interactions, config.trials, sim_seed);
                    sim.first_interaction = crate::simulate::FirstInteraction::Skip;
                    let res = run_repeated(&game, &sol.x, &model, &sim)?;
                    Ok(RegularizedCell {
                        c,
                        stochasticity: stochasticity(&sol.x),
                        stackelberg_return: stackelberg_return(&game, &sol.x, &model),
                        returns: res.stats.iter().map(|s| s.mean_leader).collect(),
                        x: sol.x,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RandomGamesResult {
        config: config.clone(),
        cells,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConverseRow {
    pub k: usize,
    pub stackelberg_return: f64,
    pub inference_return: f64,
    pub gap: f64,
}

/// Exact gap of `x = [1/2 + ε, 1/2 - ε]` in the converse example against a
/// rational follower, for `k = 2..=k_max` (default: the converse threshold).
pub fn converse_table(epsilon: f64, k_max: Option<usize>) -> Result<Vec<ConverseRow>> {
    let threshold = converse_threshold(epsilon)?;
    let k_max = k_max.unwrap_or(threshold.floor().max(2.0) as usize);
    let game = BimatrixGame::converse_example();
    let model = FollowerModel::rational(TieBreak::WorstCase);
    let x = MixedStrategy::new(vec![0.5 + epsilon, 0.5 - epsilon])?;
    let sr = stackelberg_return(&game, &x, &model);
    (2..=k_max)
        .into_par_iter()
        .map(|k| {
            let ir = inference_return_exact(&game, &x, &model, k)?;
            Ok(ConverseRow {
                k,
                stackelberg_return: sr,
                inference_return: ir,
                gap: sr - ir,
            })
        })
        .collect()
}

/// Columns `k,SR,IR,gap`.
pub fn converse_csv(rows: &[ConverseRow]) -> String {
    let mut out = String::from("k,SR,IR,gap\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.k, r.stackelberg_return, r.inference_return, r.gap
        ));
    }
    out
}
