//! Acceptance criteria. Runs without the libtest harness so that every
//! criterion prints one PASS/FAIL line even when the output is captured.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::Rng;

use inferability::bounds::{bound_maxent, bound_rational, converse_threshold};
use inferability::dynamic::{random_dynamic_game, random_state_strategy, simulation_lemma_check};
use inferability::experiments::{
    car_pedestrian_experiment, random_games_experiment, random_normalized_game, random_strategy,
    CarPedestrianConfig, RandomGamesConfig,
};
use inferability::followers::{maxent_response, stackelberg_return};
use inferability::game::{sample_action, stream_rng};
use inferability::inference::{
    boundary_distance, decompose, plugin_estimate, stochasticity, ActionCounts,
};
use inferability::optimize::{full_info_optimal_rational, maxent_objective, zero_sum_nash};
use inferability::parametric::{tug_ir, tug_sr, GaussianStrategy, TugOfWarGame};
use inferability::simulate::{inferability_gap_curve, inference_return_exact, MonteCarloFallback};
use inferability::{BimatrixGame, FollowerModel, MixedStrategy, TieBreak};

type Outcome = Result<String, String>;

struct Criterion {
    id: u32,
    title: &'static str,
    limit: Duration,
    check: fn() -> Outcome,
}

fn ensure(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn strat(p: &[f64]) -> MixedStrategy {
    MixedStrategy::new(p.to_vec()).unwrap()
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

fn ac1() -> Outcome {
    let game = BimatrixGame::car_pedestrian();
    let model = FollowerModel::rational(TieBreak::WorstCase);
    let ir =
        inference_return_exact(&game, &strat(&[0.5, 0.5]), &model, 2).map_err(|e| e.to_string())?;
    ensure((ir + 1.5).abs() <= 1e-12, format!("IR_2 = {ir}"))
}

fn ac2() -> Outcome {
    let car =
        full_info_optimal_rational(&BimatrixGame::car_pedestrian()).map_err(|e| e.to_string())?;
    let conv =
        full_info_optimal_rational(&BimatrixGame::converse_example()).map_err(|e| e.to_string())?;
    ensure(
        (car.value - 1.0).abs() <= 1e-8 && (conv.value - 0.5).abs() <= 1e-8,
        format!("car-pedestrian {}, converse {}", car.value, conv.value),
    )
}

fn ac3() -> Outcome {
    let eps = 0.01;
    let threshold = converse_threshold(eps).map_err(|e| e.to_string())?;
    if threshold.floor() as usize != 254 {
        return Err(format!("threshold {threshold}"));
    }
    let game = BimatrixGame::converse_example();
    let model = FollowerModel::rational(TieBreak::WorstCase);
    let x = strat(&[0.5 + eps, 0.5 - eps]);
    let sr = stackelberg_return(&game, &x, &model);
    let mut min_gap = f64::INFINITY;
    for k in 2..=254 {
        let ir = inference_return_exact(&game, &x, &model, k).map_err(|e| e.to_string())?;
        min_gap = min_gap.min(sr - ir);
    }
    ensure(
        min_gap >= eps,
        format!("threshold {threshold:.4}, min gap over k=2..254 is {min_gap:.6}"),
    )
}

/// The seeded battery shared by the soundness sweeps.
fn battery() -> Vec<BimatrixGame> {
    (0..20)
        .map(|g| {
            let mut rng = stream_rng(2024, g);
            let m = rng.random_range(2..=4);
            let n = rng.random_range(2..=4);
            random_normalized_game(&mut rng, m, n)
        })
        .collect()
}

const SWEEP_K: usize = 50;

fn fallback(seed: u64) -> MonteCarloFallback {
    MonteCarloFallback {
        trials: 10_000,
        seed,
    }
}

fn ac4() -> Outcome {
    let mut cases = 0;
    let mut worst: f64 = f64::NEG_INFINITY;
    for (g, game) in battery().iter().enumerate() {
        let mut rng = stream_rng(77, g as u64);
        let x = random_strategy(&mut rng, game.leader_actions());
        for lambda in [1.0, 5.0] {
            let model = FollowerModel::maxent(lambda).unwrap();
            let curve = inferability_gap_curve(game, &x, &model, SWEEP_K, fallback(g as u64))
                .map_err(|e| e.to_string())?;
            let bound = bound_maxent(
                lambda,
                game.follower_actions(),
                game.leader_actions(),
                stochasticity(&x),
                SWEEP_K,
            )
            .map_err(|e| e.to_string())?;
            let slack = 4.0 * curve.cumulative_ci() + 1e-9;
            let excess = curve.cumulative_gap() - bound.cumulative;
            worst = worst.max(excess);
            if excess > slack {
                return Err(format!(
                    "game {g}, lambda {lambda}: gap {} > bound {}",
                    curve.cumulative_gap(),
                    bound.cumulative
                ));
            }
            cases += 1;
        }
    }
    Ok(format!("{cases} cases, largest gap - bound = {worst:.4}"))
}

fn ac5() -> Outcome {
    let model = FollowerModel::rational(TieBreak::WorstCase);
    let mut cases = 0;
    let mut worst: f64 = f64::NEG_INFINITY;
    for (g, game) in battery().iter().enumerate() {
        let mut rng = stream_rng(78, g as u64);
        // rejection-sample a strategy away from every response boundary
        let mut picked = None;
        for _ in 0..1000 {
            let x = random_strategy(&mut rng, game.leader_actions());
            let d = boundary_distance(game, &x, &model).map_err(|e| e.to_string())?;
            if d >= 0.05 {
                picked = Some((x, d));
                break;
            }
        }
        let Some((x, d)) = picked else { continue };
        let curve = inferability_gap_curve(game, &x, &model, SWEEP_K, fallback(g as u64))
            .map_err(|e| e.to_string())?;
        let d_bound = if d.is_finite() { d } else { f64::MAX };
        let bound =
            bound_rational(stochasticity(&x), d_bound, SWEEP_K).map_err(|e| e.to_string())?;
        let slack = 4.0 * curve.cumulative_ci() + 1e-9;
        let excess = curve.cumulative_gap() - bound.cumulative;
        worst = worst.max(excess);
        if excess > slack {
            return Err(format!(
                "game {g}: gap {} > bound {}",
                curve.cumulative_gap(),
                bound.cumulative
            ));
        }
        cases += 1;
    }
    ensure(
        cases >= 15,
        format!("{cases} games with d >= 0.05, largest gap - bound = {worst:.4}"),
    )
}

fn ac6() -> Outcome {
    let x = strat(&[0.5, 0.3, 0.2]);
    let k = 11;
    let trials = 100_000;
    let mut rng = stream_rng(6, 0);
    let mut total = 0.0;
    for _ in 0..trials {
        let mut counts = ActionCounts::new(3);
        for _ in 0..k - 1 {
            counts.record(sample_action(&x, &mut rng));
        }
        let est = plugin_estimate(&counts).unwrap();
        total += est.distance(&x).powi(2);
    }
    let mean = total / trials as f64;
    let exact = stochasticity(&x).powi(2) / (k - 1) as f64;
    ensure(
        (mean - 0.062).abs() <= 0.002 && (exact - 0.062).abs() < 1e-12,
        format!("MC {mean:.5}, exact {exact:.5}"),
    )
}

fn ac7() -> Outcome {
    let mut rng = stream_rng(7, 0);
    let mut worst_soft: f64 = 0.0;
    let mut worst_lin: f64 = 0.0;
    for _ in 0..10_000 {
        let m = rng.random_range(2..=5);
        let n = rng.random_range(2..=5);
        let game = random_normalized_game(&mut rng, m, n);
        let lambda = rng.random_range(0.0..50.0);
        let x = random_strategy(&mut rng, m);
        let xp = random_strategy(&mut rng, m);
        let y = maxent_response(&game, &x, lambda);
        let yp = maxent_response(&game, &xp, lambda);
        let lhs = norm(y.probs().iter().zip(yp.probs()).map(|(a, b)| a - b));
        let rhs = lambda * ((n * m) as f64).sqrt() / 2.0 * x.distance(&xp);
        worst_soft = worst_soft.max(lhs / rhs.max(1e-300));
        if lhs > rhs + 1e-12 {
            return Err(format!("softmax Lipschitz violated: {lhs} > {rhs}"));
        }
        let u = random_strategy(&mut rng, n);
        let up = random_strategy(&mut rng, n);
        let diff: Vec<f64> = u
            .probs()
            .iter()
            .zip(up.probs())
            .map(|(a, b)| a - b)
            .collect();
        let lhs = game
            .leader_payoffs(x.probs())
            .iter()
            .zip(&diff)
            .map(|(a, d)| a * d)
            .sum::<f64>()
            .abs();
        let rhs = (n as f64).sqrt() / 2.0 * norm(diff.iter().copied());
        worst_lin = worst_lin.max(lhs / rhs.max(1e-300));
        if lhs > rhs + 1e-12 {
            return Err(format!("return Lipschitz violated: {lhs} > {rhs}"));
        }
    }
    Ok(format!(
        "max ratios {worst_soft:.3} (softmax), {worst_lin:.3} (return)"
    ))
}

fn ac8() -> Outcome {
    let mut rng = stream_rng(8, 0);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let a = DMatrix::from_fn(4, 4, |_, _| rng.random::<f64>());
        let b = DMatrix::from_fn(4, 4, |_, _| rng.random::<f64>());
        let game = BimatrixGame::new(a, b).unwrap();
        let x = random_strategy(&mut rng, 4).into_vec();
        let c = rng.random_range(0.0..2.0);
        for lambda in [1.0, 10.0, 100.0] {
            let (_, grad) = maxent_objective(&game, &x, lambda, c).map_err(|e| e.to_string())?;
            let fd: Vec<f64> = (0..4)
                .map(|i| {
                    let mut up = x.clone();
                    let mut down = x.clone();
                    up[i] += h;
                    down[i] -= h;
                    let fu = maxent_objective(&game, &up, lambda, c).unwrap().0;
                    let fdn = maxent_objective(&game, &down, lambda, c).unwrap().0;
                    (fu - fdn) / (2.0 * h)
                })
                .collect();
            let err = norm(grad.iter().zip(&fd).map(|(g, f)| g - f))
                / norm(grad.iter().copied()).max(1e-12);
            worst = worst.max(err);
        }
    }
    ensure(worst <= 1e-4, format!("largest relative error {worst:.2e}"))
}

/// Spearman rank correlation; ties get average ranks.
fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for t in i..=j {
                r[idx[t]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let mean = (ra.len() as f64 + 1.0) / 2.0;
    let cov: f64 = ra
        .iter()
        .zip(&rb)
        .map(|(x, y)| (x - mean) * (y - mean))
        .sum();
    let va: f64 = ra.iter().map(|x| (x - mean).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mean).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn ac9() -> Outcome {
    let config = CarPedestrianConfig {
        lambdas: vec![100.0],
        stop_probs: vec![0.9, 0.53],
        interactions: 100,
        trials: 10_000,
        seed: 9,
    };
    let curves = car_pedestrian_experiment(&config).map_err(|e| e.to_string())?;
    let high = curves[0].average.last().copied().unwrap();
    let low = &curves[1].average;
    let ks: Vec<f64> = (2..=100).map(|k| k as f64).collect();
    let rho = spearman(&ks, low);
    let margin = high - low.last().unwrap();
    ensure(
        margin >= 0.1 && rho > 0.9,
        format!("average at K=100: p=0.9 {high:.4}, p=0.53 {:.4} (margin {margin:.4}); Spearman {rho:.4}", low.last().unwrap()),
    )
}

fn ac10a() -> Outcome {
    let game = TugOfWarGame::standard();
    let narrow = GaussianStrategy::new(0.0, 0.5).unwrap();
    let wide = GaussianStrategy::new(0.0, 2.0).unwrap();
    let mut detail = Vec::new();
    let mut ok = true;
    for k in 1..=5 {
        let a = tug_ir(&narrow, &game, k).map_err(|e| e.to_string())?;
        let b = tug_ir(&wide, &game, k).map_err(|e| e.to_string())?;
        ok &= a > b;
        detail.push(format!("k={k}: {a:.2e} vs {b:.4}"));
    }
    ensure(ok, format!("IR(s=0.5) vs IR(s=2): {}", detail.join(", ")))
}

fn ac10b() -> Outcome {
    let game = TugOfWarGame::standard();
    let sr: Vec<f64> = (1..=50)
        .map(|i| tug_sr(&GaussianStrategy::new(0.0, i as f64 / 10.0).unwrap(), &game))
        .collect();
    let peak = sr
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    let rising = sr[..=peak].windows(2).all(|w| w[1] >= w[0]);
    let falling = sr[peak..].windows(2).all(|w| w[1] <= w[0]);
    ensure(
        rising && falling,
        format!(
            "grid maximum at s = {:.1} with SR {:.4}",
            (peak + 1) as f64 / 10.0,
            sr[peak]
        ),
    )
}

fn ac11() -> Outcome {
    let config = RandomGamesConfig {
        games: 200,
        cs: vec![0.0, 100.0],
        seed: 11,
        ..RandomGamesConfig::default()
    };
    let result = random_games_experiment(&config).map_err(|e| e.to_string())?;
    let diffs: Vec<f64> = result
        .cells
        .iter()
        .map(|g| g[1].average_until(10) - g[0].average_until(10))
        .collect();
    let n = diffs.len();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let mut rng = stream_rng(11, 1);
    let mut boot: Vec<f64> = (0..5000)
        .map(|_| (0..n).map(|_| diffs[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    boot.sort_by(f64::total_cmp);
    let (lo, hi) = (boot[125], boot[4874]);
    let late0 = *result.mean_average_curve(0).last().unwrap();
    let late100 = *result.mean_average_curve(1).last().unwrap();
    ensure(
        mean > 0.0 && lo > 0.0 && late0 >= late100 - 0.02,
        format!(
            "early paired diff {mean:.4} (95% CI [{lo:.4}, {hi:.4}]); at K=100: c=0 {late0:.4}, c=100 {late100:.4}"
        ),
    )
}

fn ac12() -> Outcome {
    let mut worst: f64 = 0.0;
    for g in 0..20 {
        let mut rng = stream_rng(12, g);
        let game = random_dynamic_game(&mut rng, 3, 2, 2, (0.5, 0.8)).map_err(|e| e.to_string())?;
        let x = random_state_strategy(&mut rng, game.states(), 2);
        let lambda = rng.random_range(0.5..20.0);
        let report =
            simulation_lemma_check(&game, &x, lambda, 0.1, 100, g).map_err(|e| e.to_string())?;
        worst = worst.max(report.max_ratio);
        if report.gamma > 0.8 + 1e-12 || report.violations > 0 {
            return Err(format!(
                "game {g}: gamma {}, {} violations",
                report.gamma, report.violations
            ));
        }
    }
    Ok(format!(
        "20 games x 100 perturbations, largest deviation/bound {worst:.3}"
    ))
}

fn ac13() -> Outcome {
    let model = FollowerModel::rational(TieBreak::WorstCase);
    let mut checked_b = 0;
    for g in 0..50 {
        let mut rng = stream_rng(13, g);
        let game = random_normalized_game(&mut rng, 3, 3);
        let best_sr = full_info_optimal_rational(&game)
            .map_err(|e| e.to_string())?
            .value;
        let decomp = decompose(&game);
        let (coop_gap, zs_gap) = (2.0 * decomp.alpha_coop, 2.0 * decomp.alpha_zero_sum);

        let neg_b = -game.follower().clone();
        let (x_star, _) = zero_sum_nash(&neg_b).map_err(|e| e.to_string())?;
        let ir = inference_return_exact(&game, &x_star, &model, 2).map_err(|e| e.to_string())?;
        if ir < best_sr - coop_gap - 1e-9 {
            return Err(format!("game {g} (a): IR_2 {ir} < {best_sr} - {coop_gap}"));
        }

        let b = game.follower();
        let max = b.max();
        let argmax: Vec<(usize, usize)> = (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .filter(|&(i, j)| b[(i, j)] == max)
            .collect();
        if let [(i, _)] = argmax[..] {
            let ir = inference_return_exact(&game, &MixedStrategy::pure(3, i), &model, 2)
                .map_err(|e| e.to_string())?;
            if ir < best_sr - zs_gap - 1e-9 {
                return Err(format!("game {g} (b): IR_2 {ir} < {best_sr} - {zs_gap}"));
            }
            checked_b += 1;
        }
    }
    Ok(format!(
        "50 games for (a), {checked_b} with a unique follower maximum for (b)"
    ))
}

const CRITERIA: &[Criterion] = &[
    Criterion {
        id: 1,
        title: "car-pedestrian exact IR_2",
        limit: Duration::from_millis(1),
        check: ac1,
    },
    Criterion {
        id: 2,
        title: "full-information LP optima",
        limit: Duration::from_millis(10),
        check: ac2,
    },
    Criterion {
        id: 3,
        title: "converse gap up to k=254",
        limit: Duration::from_secs(10),
        check: ac3,
    },
    Criterion {
        id: 4,
        title: "max-entropy bound soundness",
        limit: Duration::from_secs(300),
        check: ac4,
    },
    Criterion {
        id: 5,
        title: "rational bound soundness",
        limit: Duration::from_secs(300),
        check: ac5,
    },
    Criterion {
        id: 6,
        title: "plug-in mean squared error",
        limit: Duration::from_secs(5),
        check: ac6,
    },
    Criterion {
        id: 7,
        title: "Lipschitz constants",
        limit: Duration::from_secs(30),
        check: ac7,
    },
    Criterion {
        id: 8,
        title: "objective gradient",
        limit: Duration::from_secs(30),
        check: ac8,
    },
    Criterion {
        id: 9,
        title: "car-pedestrian curves",
        limit: Duration::from_secs(120),
        check: ac9,
    },
    Criterion {
        id: 10,
        title: "tug of war (a): narrow spread wins early",
        limit: Duration::from_secs(1),
        check: ac10a,
    },
    Criterion {
        id: 10,
        title: "tug of war (b): unimodal full-information return",
        limit: Duration::from_secs(1),
        check: ac10b,
    },
    Criterion {
        id: 11,
        title: "regularized random games",
        limit: Duration::from_secs(600),
        check: ac11,
    },
    Criterion {
        id: 12,
        title: "simulation lemma",
        limit: Duration::from_secs(30),
        check: ac12,
    },
    Criterion {
        id: 13,
        title: "cooperative / competitive guarantees",
        limit: Duration::from_secs(300),
        check: ac13,
    },
];

fn main() -> ExitCode {
    // `cargo test <filter>` forwards the filter; flags are ignored
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let selected: Vec<&Criterion> = CRITERIA
        .iter()
        .filter(|c| {
            filters.is_empty()
                || filters.iter().any(|f| {
                    format!("ac{}", c.id).contains(f.as_str()) || c.title.contains(f.as_str())
                })
        })
        .collect();
    // quiet the panic hook; failures are reported on the criterion line
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for c in &selected {
        // warm-up so that the tight limits measure the computation, not page faults
        if c.limit < Duration::from_millis(20) {
            let _ = catch_unwind(AssertUnwindSafe(c.check));
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let (pass, detail) = match outcome {
            Ok(d) if elapsed <= c.limit => (true, d),
            Ok(d) => (false, format!("{d}; too slow")),
            Err(d) => (false, d),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "[AC-{}] {} {} ({:.3?}, limit {:?}): {}",
            c.id,
            if pass { "PASS" } else { "FAIL" },
            c.title,
            elapsed,
            c.limit,
            detail
        );
    }
    println!(
        "acceptance: {} passed, {} failed",
        selected.len() - failed,
        failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
