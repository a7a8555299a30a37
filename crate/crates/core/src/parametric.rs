//! Gaussian strategies in the tug-of-war game: the leader draws `a`, the
//! follower draws `b`, and the leader scores 1 when `a + b` lands in
//! `[c_low, c_high]`.

use libm::erfc;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::stream_rng;
use crate::simulate::Moments;

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    if z == f64::INFINITY {
        return 1.0;
    }
    if z == f64::NEG_INFINITY {
        return 0.0;
    }
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `P(lo <= N(mean, sd^2) <= hi)`, with a point mass when `sd == 0`.
pub fn normal_interval_prob(mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    if sd == 0.0 {
        return if (lo..=hi).contains(&mean) { 1.0 } else { 0.0 };
    }
    if sd.is_infinite() {
        return 0.0;
    }
    let a = (lo - mean) / sd;
    let b = (hi - mean) / sd;
    // evaluate in the lighter tail to keep precision
    if a > 0.0 {
        normal_cdf(-a) - normal_cdf(-b)
    } else {
        normal_cdf(b) - normal_cdf(a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TugOfWarGame {
    pub c_low: f64,
    pub c_high: f64,
}

impl TugOfWarGame {
    pub fn new(c_low: f64, c_high: f64) -> Result<Self> {
        if !(c_low >= 0.0 && c_low < c_high && c_high.is_finite()) {
            return Err(Error::InvalidGame(format!(
                "tug of war needs 0 <= c_low < c_high, got [{c_low}, {c_high}]"
            )));
        }
        Ok(TugOfWarGame { c_low, c_high })
    }

    /// The default band `[0.01, 5]`.
    pub fn standard() -> Self {
        TugOfWarGame {
            c_low: 0.01,
            c_high: 5.0,
        }
    }

    /// Mean of `a + b` when the follower offsets the leader's mean.
    pub fn target_sum(&self) -> f64 {
        -(self.c_high + self.c_low) / 2.0
    }

    /// The follower's deterministic reply to an estimated leader mean.
    pub fn follower_reply(&self, leader_mean: f64) -> f64 {
        self.target_sum() - leader_mean
    }

    pub fn leader_reward(&self, a: f64, b: f64) -> f64 {
        if (self.c_low..=self.c_high).contains(&(a + b)) {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianStrategy {
    pub mean: f64,
    pub sd: f64,
}

impl GaussianStrategy {
    pub fn new(mean: f64, sd: f64) -> Result<Self> {
        if !mean.is_finite() {
            return Err(Error::InvalidStrategy(format!("mean {mean} is not finite")));
        }
        if !(sd >= 0.0) {
            return Err(Error::InvalidStrategy(format!(
                "standard deviation {sd} is negative"
            )));
        }
        Ok(GaussianStrategy { mean, sd })
    }
}

/// Leader return against a follower that knows the leader's mean.
pub fn tug_sr(leader: &GaussianStrategy, game: &TugOfWarGame) -> f64 {
    normal_interval_prob(game.target_sum(), leader.sd, game.c_low, game.c_high)
}

/// Leader return when the follower offsets the sample mean of `k` observed
/// leader actions. The sum `a + b` then has variance `s^2 (1 + 1/k)`.
pub fn tug_ir(leader: &GaussianStrategy, game: &TugOfWarGame, k: u64) -> Result<f64> {
    if k == 0 {
        return Err(Error::param(
            "k",
            "the follower needs at least one observation",
        ));
    }
    let sd = leader.sd * (1.0 + 1.0 / k as f64).sqrt();
    Ok(normal_interval_prob(
        game.target_sum(),
        sd,
        game.c_low,
        game.c_high,
    ))
}

/// Monte Carlo estimate of [`tug_ir`] with its 95% half-width.
///
/// Each trial samples `k` leader actions, lets the follower reply to their
/// mean, then samples the scored leader action.
pub fn tug_ir_monte_carlo(
    leader: &GaussianStrategy,
    game: &TugOfWarGame,
    k: u64,
    trials: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if k == 0 {
        return Err(Error::param(
            "k",
            "the follower needs at least one observation",
        ));
    }
    if trials == 0 {
        return Err(Error::param("trials", "need at least one trial"));
    }
    let normal =
        Normal::new(leader.mean, leader.sd).map_err(|e| Error::InvalidStrategy(e.to_string()))?;
    let block = 1024;
    let partials: Vec<Moments> = (0..trials)
        .step_by(block)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&start| {
            let mut acc = Moments::default();
            for trial in start..(start + block).min(trials) {
                let mut rng = stream_rng(seed, trial as u64);
                let mean = (0..k).map(|_| normal.sample(&mut rng)).sum::<f64>() / k as f64;
                let b = game.follower_reply(mean);
                let a = normal.sample(&mut rng);
                acc.push(game.leader_reward(a, b));
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

/// Sum over `k` of `L_l * L_f * sqrt(MSE_k)`.
pub fn bound_parametric(l_leader: f64, l_follower: f64, mse: &[f64]) -> Result<f64> {
    if let Some(bad) = mse.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::param(
            "mse",
            format!("entries must be non-negative, got {bad}"),
        ));
    }
    Ok(mse.iter().map(|v| l_leader * l_follower * v.sqrt()).sum())
}
