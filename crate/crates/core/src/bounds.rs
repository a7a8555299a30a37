//! Closed-form upper bounds on the inferability gap, the converse threshold,
//! and the sample-size condition for dynamic games.
//!
//! The per-interaction bounds assume utilities with unit range. The
//! `*_from` helpers take [`Diagnostics`] and log a warning when those came
//! from a game that is not normalized.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::inference::{Diagnostics, GameDecomposition};

/// Per-interaction bound values for `k = 2..=K` and their sum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub per_k: Vec<f64>,
    pub cumulative: f64,
    /// Parameters the bound was evaluated at.
    pub inputs: Vec<(&'static str, f64)>,
}

impl BoundReport {
    fn build(
        interactions: usize,
        inputs: Vec<(&'static str, f64)>,
        term: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        if interactions < 2 {
            return Err(Error::param("K", "need K >= 2"));
        }
        let per_k: Vec<f64> = (2..=interactions).map(|k| term((k - 1) as f64)).collect();
        let cumulative = per_k.iter().sum();
        Ok(BoundReport {
            per_k,
            cumulative,
            inputs,
        })
    }

    /// Bound at interaction `k`.
    pub fn at(&self, k: usize) -> Option<f64> {
        k.checked_sub(2).and_then(|i| self.per_k.get(i)).copied()
    }
}

fn non_negative(name: &'static str, v: f64) -> Result<()> {
    if !(v >= 0.0) {
        return Err(Error::param(name, format!("must be non-negative, got {v}")));
    }
    Ok(())
}

/// Max-entropy follower: `λ n sqrt(m) ν / (4 sqrt(k - 1))` per interaction.
pub fn bound_maxent(
    lambda: f64,
    n: usize,
    m: usize,
    nu: f64,
    interactions: usize,
) -> Result<BoundReport> {
    non_negative("lambda", lambda)?;
    non_negative("nu", nu)?;
    let c = lambda * n as f64 * (m as f64).sqrt() * nu / 4.0;
    BoundReport::build(
        interactions,
        vec![
            ("lambda", lambda),
            ("n", n as f64),
            ("m", m as f64),
            ("nu", nu),
        ],
        |j| c / j.sqrt(),
    )
}

/// Rational follower: `ν / (d sqrt(k - 1))` per interaction.
pub fn bound_rational(nu: f64, d: f64, interactions: usize) -> Result<BoundReport> {
    non_negative("nu", nu)?;
    if !(d > 0.0) {
        return Err(Error::OnBoundary(format!(
            "boundary distance {d}: the strategy sits on a response boundary and the bound is vacuous"
        )));
    }
    BoundReport::build(interactions, vec![("nu", nu), ("d", d)], |j| {
        nu / (d * j.sqrt())
    })
}

/// Rational follower, exponential form: `2^m exp(-(k - 1) φ d^2 / 4)`.
pub fn bound_rational_chernoff(
    m: usize,
    phi: f64,
    d: f64,
    interactions: usize,
) -> Result<BoundReport> {
    if !(phi >= 2.0 - 1e-12) {
        return Err(Error::param(
            "phi",
            format!("concentrability is at least 2, got {phi}"),
        ));
    }
    non_negative("d", d)?;
    let scale = 2f64.powi(m as i32);
    let rate = if d == 0.0 { 0.0 } else { phi * d * d / 4.0 };
    BoundReport::build(
        interactions,
        vec![("m", m as f64), ("phi", phi), ("d", d)],
        |j| {
            if rate.is_infinite() {
                0.0
            } else {
                scale * (-j * rate).exp()
            }
        },
    )
}

/// Largest `k` up to which the converse example keeps a gap of at least
/// `ε`: `(1 - 20ε + 128ε² + 80ε³ - 400ε⁴) / (32ε²)`.
pub fn converse_threshold(epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::param("epsilon", "must lie in (0, 1/2)"));
    }
    let e = epsilon;
    Ok((1.0 - 20.0 * e + 128.0 * e * e + 80.0 * e.powi(3) - 400.0 * e.powi(4)) / (32.0 * e * e))
}

/// `(2 α_c, 2 α_z)`: how far the best inference return can fall below the
/// best full-information return, using the zero-sum equilibrium strategy
/// and the follower's favourite pure row respectively.
pub fn prop2_gap_guarantees(decomp: &GameDecomposition) -> (f64, f64) {
    (2.0 * decomp.alpha_coop, 2.0 * decomp.alpha_zero_sum)
}

/// Dynamic games with a myopic max-entropy follower:
/// `λ |B| sqrt(|A|) γ ε / (sqrt(2) (1 - γ)^2 sqrt(φ_min))`.
pub fn bound_dynamic(
    lambda: f64,
    leader_actions: usize,
    follower_actions: usize,
    gamma: f64,
    epsilon: f64,
    phi_min: f64,
) -> Result<f64> {
    non_negative("lambda", lambda)?;
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::param("gamma", "must lie in [0, 1)"));
    }
    if !(epsilon > 0.0) {
        return Err(Error::param("epsilon", "must be positive"));
    }
    if !(phi_min >= 2.0 - 1e-12) {
        return Err(Error::param("phi_min", "concentrability is at least 2"));
    }
    if phi_min.is_infinite() {
        return Ok(0.0);
    }
    Ok(
        lambda * follower_actions as f64 * (leader_actions as f64).sqrt() * gamma * epsilon
            / (std::f64::consts::SQRT_2 * (1.0 - gamma).powi(2) * phi_min.sqrt()),
    )
}

/// Number of episodes after which [`bound_dynamic`] holds with probability
/// `1 - δ`:
/// `6 max(320 |A| / ε² ln(1/ε) ln(9 |S| / (5δ)) (1 - μ), ln(3 |S| / δ)) / ρ`.
pub fn thm3_sample_threshold(
    epsilon: f64,
    delta: f64,
    leader_actions: usize,
    states: usize,
    rho: f64,
    mu: f64,
) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::param("epsilon", "must lie in (0, 1)"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param("delta", "must lie in (0, 1)"));
    }
    if !(rho > 0.0) {
        return Err(Error::param("rho", "must be positive"));
    }
    if !(0.0..1.0).contains(&mu) {
        return Err(Error::param("mu", "must lie in [0, 1)"));
    }
    let s = states as f64;
    let visits = 320.0 * leader_actions as f64 / (epsilon * epsilon)
        * (1.0 / epsilon).ln()
        * (9.0 * s / (5.0 * delta)).ln()
        * (1.0 - mu);
    let confidence = (3.0 * s / delta).ln();
    Ok(6.0 * visits.max(confidence) / rho)
}

fn warn_unnormalized(diag: &Diagnostics) {
    if !diag.normalized {
        log::warn!(
            "bound evaluated on diagnostics of a game whose utilities do not have unit range"
        );
    }
}

pub fn bound_maxent_from(
    diag: &Diagnostics,
    lambda: f64,
    interactions: usize,
) -> Result<BoundReport> {
    warn_unnormalized(diag);
    bound_maxent(
        lambda,
        diag.follower_actions,
        diag.leader_actions,
        diag.stochasticity,
        interactions,
    )
}

pub fn bound_rational_from(diag: &Diagnostics, interactions: usize) -> Result<BoundReport> {
    warn_unnormalized(diag);
    let d = diag.boundary_distance.ok_or_else(|| {
        Error::param("model", "the rational bound needs a pure-response follower")
    })?;
    bound_rational(diag.stochasticity, d, interactions)
}

pub fn bound_rational_chernoff_from(
    diag: &Diagnostics,
    interactions: usize,
) -> Result<BoundReport> {
    warn_unnormalized(diag);
    let d = diag.boundary_distance.ok_or_else(|| {
        Error::param("model", "the rational bound needs a pure-response follower")
    })?;
    bound_rational_chernoff(diag.leader_actions, diag.concentrability, d, interactions)
}
