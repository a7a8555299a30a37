//! Repeated play of a static bimatrix game against a follower that responds
//! to the plug-in estimate of the leader's strategy.
//!
//! [`inference_return_exact`] enumerates every possible empirical count
//! vector and is the oracle for the Monte Carlo engine [`run_repeated`].

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::followers::{stackelberg_return, FollowerModel};
use crate::game::{sample_action, stream_rng, BimatrixGame, MixedStrategy};
use crate::inference::{plugin_estimate, ActionCounts};

/// z-score of a two-sided 95% normal interval.
pub const Z95: f64 = 1.96;

/// Trials handled sequentially by one parallel work item.
const TRIAL_BLOCK: usize = 128;

/// What the follower does before it has seen any leader action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum FirstInteraction {
    /// Respond uniformly at random; recorded but not part of averages.
    #[default]
    Uniform,
    /// Leave interaction 1 out of the results entirely.
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    /// Number of interactions `K` per trial.
    pub interactions: usize,
    pub trials: usize,
    pub seed: u64,
    pub first_interaction: FirstInteraction,
    /// Keep the sampled leader actions of every trial.
    pub record_actions: bool,
}

impl SimConfig {
    pub fn new(interactions: usize, trials: usize, seed: u64) -> Self {
        SimConfig {
            interactions,
            trials,
            seed,
            first_interaction: FirstInteraction::Uniform,
            record_actions: false,
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.interactions < 2 {
            return Err(Error::param("interactions", "need K >= 2"));
        }
        if self.trials == 0 {
            return Err(Error::param("trials", "need at least one trial"));
        }
        Ok(())
    }
}

/// Across-trial statistics of one interaction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InteractionStats {
    pub k: usize,
    pub mean_leader: f64,
    /// 95% confidence half-width `1.96 sd / sqrt(trials)`.
    pub ci_leader: f64,
    pub mean_follower: f64,
    pub ci_follower: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub trials: usize,
    /// One entry per recorded interaction, in increasing `k`.
    pub stats: Vec<InteractionStats>,
    #[serde(skip)]
    pub action_logs: Option<Vec<Vec<usize>>>,
}

impl SimResult {
    pub fn stats_at(&self, k: usize) -> Option<&InteractionStats> {
        self.stats.iter().find(|s| s.k == k)
    }

    /// CSV with columns `k,mean_leader,ci_leader,mean_follower,ci_follower`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,mean_leader,ci_leader,mean_follower,ci_follower\n");
        for s in &self.stats {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                s.k, s.mean_leader, s.ci_leader, s.mean_follower, s.ci_follower
            ));
        }
        out
    }
}

/// Streaming mean/variance with Chan's merge, so identical samples give an
/// exactly zero variance.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Moments {
    count: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub(crate) fn push(&mut self, v: f64) {
        self.count += 1.0;
        let delta = v - self.mean;
        self.mean += delta / self.count;
        self.m2 += delta * (v - self.mean);
    }

    pub(crate) fn merge(&mut self, other: &Moments) {
        if other.count == 0.0 {
            return;
        }
        if self.count == 0.0 {
            *self = *other;
            return;
        }
        let total = self.count + other.count;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count / total;
        self.m2 += other.m2 + delta * delta * self.count * other.count / total;
        self.count = total;
    }

    pub(crate) fn mean(&self) -> f64 {
        self.mean
    }

    /// Half-width of the 95% interval for the mean (sample sd).
    pub(crate) fn ci95(&self) -> f64 {
        if self.count < 2.0 {
            return 0.0;
        }
        let var = (self.m2 / (self.count - 1.0)).max(0.0);
        Z95 * var.sqrt() / self.count.sqrt()
    }
}

/// Per-interaction leader and follower accumulators.
#[derive(Debug, Clone)]
pub(crate) struct CurveAccumulator {
    leader: Vec<Moments>,
    follower: Vec<Moments>,
}

impl CurveAccumulator {
    pub(crate) fn new(len: usize) -> Self {
        CurveAccumulator {
            leader: vec![Moments::default(); len],
            follower: vec![Moments::default(); len],
        }
    }

    pub(crate) fn push(&mut self, idx: usize, leader: f64, follower: f64) {
        self.leader[idx].push(leader);
        self.follower[idx].push(follower);
    }

    pub(crate) fn merge(&mut self, other: &CurveAccumulator) {
        for (a, b) in self.leader.iter_mut().zip(&other.leader) {
            a.merge(b);
        }
        for (a, b) in self.follower.iter_mut().zip(&other.follower) {
            a.merge(b);
        }
    }

    /// Stats for slot `idx` labelled as interaction `first_k + idx`.
    pub(crate) fn into_stats(self, first_k: usize) -> Vec<InteractionStats> {
        self.leader
            .iter()
            .zip(&self.follower)
            .enumerate()
            .map(|(idx, (l, f))| InteractionStats {
                k: first_k + idx,
                mean_leader: l.mean(),
                ci_leader: l.ci95(),
                mean_follower: f.mean(),
                ci_follower: f.ci95(),
            })
            .collect()
    }
}

/// Runs `trials` independent sequences of `K` interactions, in parallel and
/// deterministically in the seed.
///
/// At interaction `k` the follower responds to the plug-in estimate of the
/// `k-1` logged leader actions. The recorded leader return is the
/// expectation `x^T A y_k` over the leader's own draw; the logged action that
/// feeds the estimate is sampled.
pub fn run_repeated(
    game: &BimatrixGame,
    x: &MixedStrategy,
    model: &FollowerModel,
    config: &SimConfig,
) -> Result<SimResult> {
    config.validate()?;
    if x.len() != game.leader_actions() {
        return Err(Error::DimensionMismatch {
            expected: game.leader_actions(),
            actual: x.len(),
        });
    }
    let first_k = match config.first_interaction {
        FirstInteraction::Uniform => 1,
        FirstInteraction::Skip => 2,
    };
    let slots = config.interactions + 1 - first_k;
    let blocks: Vec<(usize, usize)> = (0..config.trials)
        .step_by(TRIAL_BLOCK)
        .map(|start| (start, (start + TRIAL_BLOCK).min(config.trials)))
        .collect();

    let partials: Vec<(CurveAccumulator, Vec<Vec<usize>>)> = blocks
        .par_iter()
        .map(|&(start, end)| {
            let mut acc = CurveAccumulator::new(slots);
            let mut logs = Vec::new();
            for trial in start..end {
                let log = run_trial(game, x, model, config, trial as u64, first_k, &mut acc);
                if config.record_actions {
                    logs.push(log);
                }
            }
            (acc, logs)
        })
        .collect();

    let mut total = CurveAccumulator::new(slots);
    let mut action_logs = config.record_actions.then(Vec::new);
    for (acc, logs) in partials {
        total.merge(&acc);
        if let Some(all) = action_logs.as_mut() {
            all.extend(logs);
        }
    }
    Ok(SimResult {
        trials: config.trials,
        stats: total.into_stats(first_k),
        action_logs,
    })
}

fn run_trial(
    game: &BimatrixGame,
    x: &MixedStrategy,
    model: &FollowerModel,
    config: &SimConfig,
    trial: u64,
    first_k: usize,
    acc: &mut CurveAccumulator,
) -> Vec<usize> {
    let mut rng = stream_rng(config.seed, trial);
    let mut counts = ActionCounts::new(game.leader_actions());
    let mut log = Vec::new();
    let uniform = MixedStrategy::uniform(game.follower_actions());
    for k in 1..=config.interactions {
        if k >= first_k {
            let y = match plugin_estimate(&counts) {
                Ok(estimate) => model.respond(game, &estimate),
                Err(_) => uniform.clone(),
            };
            acc.push(
                k - first_k,
                game.leader_value(x.probs(), y.probs()),
                game.follower_value(x.probs(), y.probs()),
            );
        }
        let action = sample_action(x, &mut rng);
        counts.record(action);
        if config.record_actions {
            log.push(action);
        }
    }
    log
}

/// Enumeration budget of [`inference_return_exact`]: two leader actions up
/// to this `k`...
pub const EXACT_BUDGET_TWO_ACTIONS: usize = 100_000;
/// ...and up to four leader actions up to this `k`.
pub const EXACT_BUDGET_SMALL: usize = 50;

/// True when `inference_return_exact(game, x, _, k)` fits the enumeration
/// budget.
pub fn exact_within_budget(leader_actions: usize, k: usize) -> bool {
    match leader_actions {
        0 => false,
        1 | 2 => k <= EXACT_BUDGET_TWO_ACTIONS,
        3 | 4 => k <= EXACT_BUDGET_SMALL,
        _ => false,
    }
}

/// Exact `IR_k(x)`: the leader's expected return at interaction `k` when
/// the follower responds to the plug-in estimate of `k-1` i.i.d. draws.
///
/// Sums over every count vector with its multinomial probability,
/// accumulated in log space.
pub fn inference_return_exact(
    game: &BimatrixGame,
    x: &MixedStrategy,
    model: &FollowerModel,
    k: usize,
) -> Result<f64> {
    if x.len() != game.leader_actions() {
        return Err(Error::DimensionMismatch {
            expected: game.leader_actions(),
            actual: x.len(),
        });
    }
    if k < 2 {
        return Err(Error::param(
            "k",
            "the follower has no observations before k = 2",
        ));
    }
    let m = x.len();
    if !exact_within_budget(m, k) {
        return Err(Error::BudgetExceeded(format!(
            "exact enumeration with {m} leader actions at k = {k}"
        )));
    }
    let draws = k - 1;
    let ln_fact = ln_factorials(draws);
    let ln_x: Vec<f64> = x.probs().iter().map(|p| p.ln()).collect();
    let mut total = 0.0;
    let mut counts = vec![0usize; m];
    let mut estimate = vec![0.0; m];
    for_each_composition(draws, m, &mut counts, &mut |c| {
        let mut ln_p = ln_fact[draws];
        for (i, &ci) in c.iter().enumerate() {
            if ci > 0 {
                if x[i] == 0.0 {
                    return;
                }
                ln_p += ci as f64 * ln_x[i] - ln_fact[ci];
            }
        }
        let p = ln_p.exp();
        if p == 0.0 {
            return;
        }
        for (e, &ci) in estimate.iter_mut().zip(c) {
            *e = ci as f64 / draws as f64;
        }
        let y = model.respond_to(game, &estimate);
        total += p * game.leader_value(x.probs(), y.probs());
    });
    Ok(total)
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..=n {
        acc += (i as f64).ln();
        out.push(acc);
    }
    out
}

/// Calls `f` with every vector of `parts` non-negative integers summing to
/// `total`.
fn for_each_composition(
    total: usize,
    parts: usize,
    buf: &mut [usize],
    f: &mut dyn FnMut(&[usize]),
) {
    fn rec(pos: usize, remaining: usize, buf: &mut [usize], f: &mut dyn FnMut(&[usize])) {
        if pos + 1 == buf.len() {
            buf[pos] = remaining;
            f(buf);
            return;
        }
        for c in 0..=remaining {
            buf[pos] = c;
            rec(pos + 1, remaining - c, buf, f);
        }
    }
    debug_assert_eq!(buf.len(), parts);
    rec(0, total, buf, f);
}

/// One point of an inferability gap curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapPoint {
    pub k: usize,
    /// `SR(x) - IR_k(x)`.
    pub gap: f64,
    /// 95% half-width; zero when computed exactly.
    pub ci: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapCurve {
    pub stackelberg_return: f64,
    pub exact: bool,
    pub points: Vec<GapPoint>,
}

impl GapCurve {
    pub fn cumulative_gap(&self) -> f64 {
        self.points.iter().map(|p| p.gap).sum()
    }

    /// Half-width of the cumulative gap, adding per-k widths (conservative).
    pub fn cumulative_ci(&self) -> f64 {
        self.points.iter().map(|p| p.ci).sum()
    }
}

/// Monte Carlo settings used when exact enumeration is out of budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MonteCarloFallback {
    pub trials: usize,
    pub seed: u64,
}

/// `SR(x) - IR_k(x)` for `k = 2..=K`, exactly when the budget allows and by
/// simulation otherwise.
pub fn inferability_gap_curve(
    game: &BimatrixGame,
    x: &MixedStrategy,
    model: &FollowerModel,
    interactions: usize,
    fallback: MonteCarloFallback,
) -> Result<GapCurve> {
    if interactions < 2 {
        return Err(Error::param("interactions", "need K >= 2"));
    }
    let sr = stackelberg_return(game, x, model);
    if exact_within_budget(x.len(), interactions) {
        let points = (2..=interactions)
            .map(|k| {
                Ok(GapPoint {
                    k,
                    gap: sr - inference_return_exact(game, x, model, k)?,
                    ci: 0.0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok(GapCurve {
            stackelberg_return: sr,
            exact: true,
            points,
        });
    }
    let mut config = SimConfig::new(interactions, fallback.trials, fallback.seed);
    config.first_interaction = FirstInteraction::Skip;
    let sim = run_repeated(game, x, model, &config)?;
    Ok(GapCurve {
        stackelberg_return: sr,
        exact: false,
        points: sim
            .stats
            .iter()
            .map(|s| GapPoint {
                k: s.k,
                gap: sr - s.mean_leader,
                ci: s.ci_leader,
            })
            .collect(),
    })
}

/// Running mean of the per-interaction mean leader return from `k = 2` on:
/// entry `i` averages interactions `2..=i+2`.
pub fn average_return_curve(result: &SimResult) -> Vec<f64> {
    running_mean(
        result
            .stats
            .iter()
            .filter(|s| s.k >= 2)
            .map(|s| s.mean_leader),
    )
}

pub fn running_mean(values: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut sum = 0.0;
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            sum += v;
            sum / (i + 1) as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::followers::TieBreak;

    fn strat(p: &[f64]) -> MixedStrategy {
        MixedStrategy::new(p.to_vec()).unwrap()
    }

    #[test]
    fn compositions_cover_the_simplex_lattice() {
        let mut count = 0;
        let mut buf = vec![0; 3];
        for_each_composition(4, 3, &mut buf, &mut |c| {
            assert_eq!(c.iter().sum::<usize>(), 4);
            count += 1;
        });
        // C(4 + 2, 2)
        assert_eq!(count, 15);
    }

    #[test]
    fn exact_second_interaction_on_car_pedestrian() {
        let g = BimatrixGame::car_pedestrian();
        let worst = FollowerModel::rational(TieBreak::WorstCase);
        let x = strat(&[0.5, 0.5]);
        let ir = inference_return_exact(&g, &x, &worst, 2).unwrap();
        // p * 2(1-p) + (1-p) * (-8)(1-p) at p = 1/2
        assert!((ir + 1.5).abs() < 1e-12);
    }

    #[test]
    fn deterministic_leader_has_no_gap() {
        let g = BimatrixGame::car_pedestrian();
        for model in [
            FollowerModel::rational(TieBreak::WorstCase),
            FollowerModel::maxent(5.0).unwrap(),
        ] {
            let x = MixedStrategy::pure(2, 1);
            let sr = stackelberg_return(&g, &x, &model);
            for k in [2, 3, 10, 40] {
                assert_eq!(inference_return_exact(&g, &x, &model, k).unwrap(), sr);
            }
            let curve = inferability_gap_curve(
                &g,
                &x,
                &model,
                20,
                MonteCarloFallback {
                    trials: 10,
                    seed: 0,
                },
            )
            .unwrap();
            assert!(curve.exact);
            assert!(curve.points.iter().all(|p| p.gap == 0.0));
        }
    }

    #[test]
    fn converse_alternative_strategy_is_capped() {
        let g = BimatrixGame::converse_example();
        let worst = FollowerModel::rational(TieBreak::WorstCase);
        for eps in [0.01, 0.05, 0.2] {
            let z = strat(&[0.5 - eps, 0.5 + eps]);
            for k in 2..60 {
                let ir = inference_return_exact(&g, &z, &worst, k).unwrap();
                assert!(ir <= 0.25 + eps / 2.0 + 1e-12, "k={k} eps={eps} ir={ir}");
            }
        }
    }

    #[test]
    fn budget_is_enforced() {
        let g = BimatrixGame::from_rows(&vec![vec![0.0; 2]; 5], &vec![vec![0.0; 2]; 5]).unwrap();
        let model = FollowerModel::rational(TieBreak::WorstCase);
        assert!(matches!(
            inference_return_exact(&g, &MixedStrategy::uniform(5), &model, 3),
            Err(Error::BudgetExceeded(_))
        ));
        let g3 = BimatrixGame::from_rows(&vec![vec![0.0; 2]; 3], &vec![vec![0.0; 2]; 3]).unwrap();
        assert!(inference_return_exact(&g3, &MixedStrategy::uniform(3), &model, 50).is_ok());
        assert!(inference_return_exact(&g3, &MixedStrategy::uniform(3), &model, 51).is_err());
        assert!(inference_return_exact(&g3, &MixedStrategy::uniform(3), &model, 1).is_err());
    }

    #[test]
    fn large_k_two_actions_stays_finite() {
        let g = BimatrixGame::converse_example();
        let worst = FollowerModel::rational(TieBreak::WorstCase);
        let x = strat(&[0.51, 0.49]);
        let ir = inference_return_exact(&g, &x, &worst, 100_000).unwrap();
        let sr = stackelberg_return(&g, &x, &worst);
        assert!(ir.is_finite());
        // 1e5 draws put the estimate on the right side almost surely
        assert!((sr - ir).abs() < 1e-6);
    }

    #[test]
    fn monte_carlo_deterministic_leader_is_exact() {
        let g = BimatrixGame::car_pedestrian();
        let worst = FollowerModel::rational(TieBreak::WorstCase);
        let x = MixedStrategy::pure(2, 0);
        let res = run_repeated(&g, &x, &worst, &SimConfig::new(10, 50, 3)).unwrap();
        assert_eq!(res.stats.len(), 10);
        for s in res.stats.iter().filter(|s| s.k >= 2) {
            assert_eq!(s.mean_leader, 0.0);
            assert_eq!(s.ci_leader, 0.0);
        }
    }

    #[test]
    fn skip_policy_drops_first_interaction() {
        let g = BimatrixGame::car_pedestrian();
        let model = FollowerModel::maxent(1.0).unwrap();
        let mut cfg = SimConfig::new(5, 20, 1);
        cfg.first_interaction = FirstInteraction::Skip;
        let res = run_repeated(&g, &strat(&[0.3, 0.7]), &model, &cfg).unwrap();
        assert_eq!(res.stats.first().unwrap().k, 2);
        assert_eq!(res.stats.len(), 4);
        assert_eq!(average_return_curve(&res).len(), 4);
    }

    #[test]
    fn monte_carlo_is_reproducible_and_logs_actions() {
        let g = BimatrixGame::car_pedestrian();
        let model = FollowerModel::maxent(5.0).unwrap();
        let mut cfg = SimConfig::new(12, 300, 77);
        cfg.record_actions = true;
        let a = run_repeated(&g, &strat(&[0.6, 0.4]), &model, &cfg).unwrap();
        let b = run_repeated(&g, &strat(&[0.6, 0.4]), &model, &cfg).unwrap();
        assert_eq!(a, b);
        let logs = a.action_logs.as_ref().unwrap();
        assert_eq!(logs.len(), 300);
        assert!(logs.iter().all(|l| l.len() == 12));
        assert_eq!(a.to_csv(), b.to_csv());
        assert!(a
            .to_csv()
            .starts_with("k,mean_leader,ci_leader,mean_follower,ci_follower\n"));
    }

    #[test]
    fn monte_carlo_matches_exact() {
        let g = BimatrixGame::car_pedestrian();
        let cases = [
            (
                FollowerModel::rational(TieBreak::WorstCase),
                strat(&[0.5, 0.5]),
            ),
            (FollowerModel::maxent(5.0).unwrap(), strat(&[0.7, 0.3])),
            (FollowerModel::maxent(100.0).unwrap(), strat(&[0.53, 0.47])),
        ];
        for (model, x) in cases {
            let res = run_repeated(&g, &x, &model, &SimConfig::new(8, 20_000, 9)).unwrap();
            for k in 2..=8 {
                let exact = inference_return_exact(&g, &x, &model, k).unwrap();
                let s = res.stats_at(k).unwrap();
                assert!(
                    (s.mean_leader - exact).abs() <= 4.0 * s.ci_leader + 1e-12,
                    "k={k} mc={} exact={exact} ci={}",
                    s.mean_leader,
                    s.ci_leader
                );
            }
        }
    }

    #[test]
    fn car_pedestrian_second_interaction_by_simulation() {
        let g = BimatrixGame::car_pedestrian();
        let worst = FollowerModel::rational(TieBreak::WorstCase);
        let res = run_repeated(
            &g,
            &strat(&[0.5, 0.5]),
            &worst,
            &SimConfig::new(2, 100_000, 4),
        )
        .unwrap();
        let s = res.stats_at(2).unwrap();
        let sigma = s.ci_leader / Z95;
        assert!((s.mean_leader + 1.5).abs() <= 3.0 * sigma);
    }

    #[test]
    fn near_deterministic_curve_is_flat() {
        let g = BimatrixGame::car_pedestrian();
        let model = FollowerModel::maxent(100.0).unwrap();
        let res = run_repeated(
            &g,
            &strat(&[0.9, 0.1]),
            &model,
            &SimConfig::new(100, 2000, 5),
        )
        .unwrap();
        let avg = average_return_curve(&res);
        assert_eq!(avg.len(), 99);
        // the follower waits unless it saw no stops yet; IR_k -> 0.2 fast
        for s in res.stats.iter().filter(|s| s.k >= 10) {
            assert!(
                (s.mean_leader - 0.2).abs() < 0.01,
                "k={} {}",
                s.k,
                s.mean_leader
            );
        }
        assert!((avg.last().unwrap() - 0.2).abs() < 0.01);
    }

    #[test]
    fn running_mean_examples() {
        assert_eq!(running_mean([0.0, 2.0, 2.0]), vec![0.0, 1.0, 4.0 / 3.0]);
        for v in running_mean([0.7; 4]) {
            assert!((v - 0.7).abs() < 1e-15);
        }
    }

    #[test]
    fn moments_merge_matches_sequential() {
        let values: Vec<f64> = (0..100).map(|i| ((i * 37) % 11) as f64 * 0.3).collect();
        let mut all = Moments::default();
        values.iter().for_each(|&v| all.push(v));
        let mut a = Moments::default();
        let mut b = Moments::default();
        values[..30].iter().for_each(|&v| a.push(v));
        values[30..].iter().for_each(|&v| b.push(v));
        a.merge(&b);
        assert!((a.mean() - all.mean()).abs() < 1e-12);
        assert!((a.ci95() - all.ci95()).abs() < 1e-12);
    }
}
