//! Bimatrix games, mixed strategies and the seeded sampling primitives every
//! other module builds on.
//!
//! The leader owns the rows of both utility matrices, the follower the
//! columns. Game files are JSON objects `{"A": [[..]], "B": [[..]]}` stored
//! row-major; strategy files are plain JSON arrays of probabilities.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest deviation of a strategy's sum from 1 that is silently renormalized.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-6;

/// The seedable generator used by every simulation in the crate.
pub type SimRng = ChaCha8Rng;

/// Independent stream `stream` of the generator seeded with `seed`.
///
/// ChaCha is counter based, so distinct stream ids never overlap and trial
/// `t` sees the same numbers no matter which thread runs it.
pub fn stream_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A probability vector over a finite action set.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct MixedStrategy {
    probs: Vec<f64>,
}

impl MixedStrategy {
    /// Validates and renormalizes `probs`.
    ///
    /// Entries must be finite and non-negative (values above `-1e-12` are
    /// clipped to zero); a sum within [`RENORMALIZE_TOLERANCE`] of one is
    /// rescaled, anything further off is rejected.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidStrategy("empty probability vector".into()));
        }
        let mut probs = probs;
        for (i, p) in probs.iter_mut().enumerate() {
            if !p.is_finite() {
                return Err(Error::InvalidStrategy(format!("entry {i} is not finite")));
            }
            if *p < 0.0 {
                if *p < -1e-12 {
                    return Err(Error::InvalidStrategy(format!(
                        "entry {i} is negative ({p})"
                    )));
                }
                *p = 0.0;
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > RENORMALIZE_TOLERANCE {
            return Err(Error::InvalidStrategy(format!(
                "probabilities sum to {sum}, not 1"
            )));
        }
        if sum != 1.0 {
            probs.iter_mut().for_each(|p| *p /= sum);
        }
        Ok(MixedStrategy { probs })
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform strategy over an empty action set");
        MixedStrategy {
            probs: vec![1.0 / n as f64; n],
        }
    }

    /// The vertex `e_i` of the `n`-simplex.
    pub fn pure(n: usize, i: usize) -> Self {
        assert!(i < n, "pure action {i} out of range for {n} actions");
        let mut probs = vec![0.0; n];
        probs[i] = 1.0;
        MixedStrategy { probs }
    }

    /// Builds a strategy from values already known to lie on the simplex,
    /// such as count ratios. Only checked in debug builds.
    pub(crate) fn from_simplex_unchecked(probs: Vec<f64>) -> Self {
        debug_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        MixedStrategy { probs }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }

    /// Index of the action played with probability one, if any.
    pub fn pure_action(&self) -> Option<usize> {
        self.probs.iter().position(|&p| p == 1.0)
    }

    /// Euclidean distance to another strategy of the same size.
    pub fn distance(&self, other: &MixedStrategy) -> f64 {
        assert_eq!(self.len(), other.len());
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Parses a strategy file (a JSON array of probabilities).
    pub fn from_json(text: &str) -> Result<Self> {
        let probs: Vec<f64> = serde_json::from_str(text)?;
        MixedStrategy::new(probs)
    }
}

impl std::ops::Index<usize> for MixedStrategy {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.probs[i]
    }
}

/// Leader and follower utility matrices of a two-player bimatrix game.
#[derive(Debug, Clone, PartialEq)]
pub struct BimatrixGame {
    leader: DMatrix<f64>,
    follower: DMatrix<f64>,
}

impl BimatrixGame {
    pub fn new(leader: DMatrix<f64>, follower: DMatrix<f64>) -> Result<Self> {
        if leader.nrows() == 0 || leader.ncols() == 0 {
            return Err(Error::InvalidGame(
                "utility matrices must be non-empty".into(),
            ));
        }
        if leader.shape() != follower.shape() {
            return Err(Error::InvalidGame(format!(
                "leader matrix is {}x{} but follower matrix is {}x{}",
                leader.nrows(),
                leader.ncols(),
                follower.nrows(),
                follower.ncols()
            )));
        }
        if leader.iter().chain(follower.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidGame("utilities must be finite".into()));
        }
        Ok(BimatrixGame { leader, follower })
    }

    /// Builds a game from row-major nested vectors.
    pub fn from_rows(leader: &[Vec<f64>], follower: &[Vec<f64>]) -> Result<Self> {
        Self::new(matrix_from_rows(leader)?, matrix_from_rows(follower)?)
    }

    /// Leader utilities `A` (rows = leader actions).
    pub fn leader(&self) -> &DMatrix<f64> {
        &self.leader
    }

    /// Follower utilities `B`.
    pub fn follower(&self) -> &DMatrix<f64> {
        &self.follower
    }

    /// Number of leader actions `m`.
    pub fn leader_actions(&self) -> usize {
        self.leader.nrows()
    }

    /// Number of follower actions `n`.
    pub fn follower_actions(&self) -> usize {
        self.leader.ncols()
    }

    /// True when both matrices have an entry range of one (within 1e-9).
    pub fn is_normalized(&self) -> bool {
        (range(&self.leader) - 1.0).abs() <= 1e-9 && (range(&self.follower) - 1.0).abs() <= 1e-9
    }

    /// `x^T A e_j` for every follower action `j`.
    pub fn leader_payoffs(&self, x: &[f64]) -> Vec<f64> {
        column_payoffs(&self.leader, x)
    }

    /// `x^T B e_j` for every follower action `j`, i.e. `B^T x`.
    pub fn follower_payoffs(&self, x: &[f64]) -> Vec<f64> {
        column_payoffs(&self.follower, x)
    }

    /// `x^T A y` without dimension checks beyond debug assertions.
    pub(crate) fn leader_value(&self, x: &[f64], y: &[f64]) -> f64 {
        bilinear(&self.leader, x, y)
    }

    pub(crate) fn follower_value(&self, x: &[f64], y: &[f64]) -> f64 {
        bilinear(&self.follower, x, y)
    }

    /// The Table I car/pedestrian game: the car (leader) chooses Stop or
    /// Proceed, the pedestrian (follower) chooses Wait or Cross.
    pub fn car_pedestrian() -> Self {
        Self::from_rows(
            &[vec![0.0, 0.0], vec![2.0, -8.0]],
            &[vec![2.0, 1.0], vec![0.0, 1.0]],
        )
        .expect("static game is valid")
    }

    /// The 2x2 game used for the converse bound, where the best full
    /// information return is 1/2.
    pub fn converse_example() -> Self {
        Self::from_rows(
            &[vec![0.0, 0.0], vec![1.0, 0.0]],
            &[vec![2.0, 1.0], vec![0.0, 1.0]],
        )
        .expect("static game is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GameFile = serde_json::from_str(text)?;
        Self::from_rows(&file.leader, &file.follower)
    }

    pub fn to_json(&self) -> String {
        let file = GameFile {
            leader: matrix_rows(&self.leader),
            follower: matrix_rows(&self.follower),
        };
        serde_json::to_string_pretty(&file).expect("matrices serialize")
    }
}

#[derive(Serialize, Deserialize)]
struct GameFile {
    #[serde(rename = "A")]
    leader: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    follower: Vec<Vec<f64>>,
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(Error::InvalidGame(
            "utility matrices must be non-empty".into(),
        ));
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != ncols) {
        return Err(Error::InvalidGame(format!(
            "row {bad} has {} entries, expected {ncols}",
            rows[bad].len()
        )));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub(crate) fn range(m: &DMatrix<f64>) -> f64 {
    m.max() - m.min()
}

fn column_payoffs(m: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(m.nrows(), x.len());
    (0..m.ncols())
        .map(|j| m.column(j).iter().zip(x).map(|(a, p)| a * p).sum())
        .collect()
}

fn bilinear(m: &DMatrix<f64>, x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(m.nrows(), x.len());
    debug_assert_eq!(m.ncols(), y.len());
    let mut total = 0.0;
    for (j, &yj) in y.iter().enumerate() {
        if yj == 0.0 {
            continue;
        }
        let col: f64 = m.column(j).iter().zip(x).map(|(a, p)| a * p).sum();
        total += col * yj;
    }
    total
}

/// Affine map that brought a utility matrix to unit range:
/// `original = scale * normalized + shift`, entrywise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormalizationInfo {
    pub scale_leader: f64,
    pub shift_leader: f64,
    pub scale_follower: f64,
    pub shift_follower: f64,
}

/// Rescales both utility matrices to an entry range of exactly one.
///
/// Matrices that already have unit range, and constant matrices, pass
/// through untouched with scale 1 and shift 0.
pub fn normalize_game(game: &BimatrixGame) -> (BimatrixGame, NormalizationInfo) {
    let (leader, scale_leader, shift_leader) = normalize_matrix(&game.leader);
    let (follower, scale_follower, shift_follower) = normalize_matrix(&game.follower);
    (
        BimatrixGame { leader, follower },
        NormalizationInfo {
            scale_leader,
            shift_leader,
            scale_follower,
            shift_follower,
        },
    )
}

fn normalize_matrix(m: &DMatrix<f64>) -> (DMatrix<f64>, f64, f64) {
    let r = range(m);
    if r == 0.0 || (r - 1.0).abs() <= 1e-12 {
        return (m.clone(), 1.0, 0.0);
    }
    let lo = m.min();
    (m.map(|v| (v - lo) / r), r, lo)
}

/// `(x^T A y, x^T B y)`.
pub fn expected_return(
    game: &BimatrixGame,
    x: &MixedStrategy,
    y: &MixedStrategy,
) -> Result<(f64, f64)> {
    if x.len() != game.leader_actions() {
        return Err(Error::DimensionMismatch {
            expected: game.leader_actions(),
            actual: x.len(),
        });
    }
    if y.len() != game.follower_actions() {
        return Err(Error::DimensionMismatch {
            expected: game.follower_actions(),
            actual: y.len(),
        });
    }
    Ok((
        game.leader_value(x.probs(), y.probs()),
        game.follower_value(x.probs(), y.probs()),
    ))
}

/// Draws action `i` with probability `x_i`.
pub fn sample_action<R: Rng + ?Sized>(x: &MixedStrategy, rng: &mut R) -> usize {
    sample_index(x.probs(), rng)
}

pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding sliver above the cumulative sum
    last
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_renormalizes_small_drift_and_rejects_large() {
        let s = MixedStrategy::new(vec![0.5, 0.5 + 1e-8]).unwrap();
        assert!((s.probs().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(MixedStrategy::new(vec![0.5, 0.6]).is_err());
        assert!(MixedStrategy::new(vec![1.1, -0.1]).is_err());
        assert!(MixedStrategy::new(vec![f64::NAN, 1.0]).is_err());
        assert!(MixedStrategy::new(vec![]).is_err());
    }

    #[test]
    fn game_rejects_shape_mismatch_and_non_finite() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 3.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        assert!(BimatrixGame::new(a.clone(), b).is_err());
        let b = DMatrix::from_row_slice(2, 2, &[0.0, f64::INFINITY, 2.0, 3.0]);
        assert!(BimatrixGame::new(a, b).is_err());
        assert!(BimatrixGame::from_rows(
            &[vec![1.0, 2.0], vec![1.0]],
            &[vec![1.0, 2.0], vec![1.0]]
        )
        .is_err());
    }

    #[test]
    fn normalize_car_pedestrian_leader() {
        let (g, info) = normalize_game(&BimatrixGame::car_pedestrian());
        assert_eq!(info.scale_leader, 10.0);
        assert_eq!(info.shift_leader, -8.0);
        let expected = [[0.8, 0.8], [1.0, 0.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((g.leader()[(i, j)] - expected[i][j]).abs() < 1e-15);
            }
        }
        // follower range is 2 - 0 = 2
        assert_eq!(info.scale_follower, 2.0);
        assert!(g.is_normalized());
    }

    #[test]
    fn normalize_identity_and_constant_cases() {
        let unit = BimatrixGame::from_rows(
            &[vec![0.5, 1.5], vec![1.0, 0.7]],
            &[vec![3.0, 3.0], vec![3.0, 3.0]],
        )
        .unwrap();
        let (g, info) = normalize_game(&unit);
        assert_eq!(g, unit);
        assert_eq!((info.scale_leader, info.shift_leader), (1.0, 0.0));
        assert_eq!((info.scale_follower, info.shift_follower), (1.0, 0.0));
    }

    #[test]
    fn expected_return_examples() {
        let g = BimatrixGame::car_pedestrian();
        let stop = MixedStrategy::pure(2, 0);
        let wait = MixedStrategy::pure(2, 0);
        assert_eq!(expected_return(&g, &stop, &wait).unwrap(), (0.0, 2.0));

        let g = BimatrixGame::converse_example();
        let u = MixedStrategy::uniform(2);
        assert!((expected_return(&g, &u, &u).unwrap().0 - 0.25).abs() < 1e-15);

        for i in 0..2 {
            for j in 0..2 {
                let (l, f) =
                    expected_return(&g, &MixedStrategy::pure(2, i), &MixedStrategy::pure(2, j))
                        .unwrap();
                assert_eq!((l, f), (g.leader()[(i, j)], g.follower()[(i, j)]));
            }
        }
        assert!(matches!(
            expected_return(&g, &MixedStrategy::uniform(3), &u),
            Err(Error::DimensionMismatch {
                expected: 2,
                actual: 3
            })
        ));
    }

    #[test]
    fn sampling_is_deterministic_and_respects_support() {
        let x = MixedStrategy::new(vec![1.0, 0.0]).unwrap();
        let mut rng = stream_rng(7, 0);
        assert!((0..1000).all(|_| sample_action(&x, &mut rng) == 0));

        let x = MixedStrategy::uniform(3);
        let a: Vec<usize> = {
            let mut r = stream_rng(42, 3);
            (0..100).map(|_| sample_action(&x, &mut r)).collect()
        };
        let b: Vec<usize> = {
            let mut r = stream_rng(42, 3);
            (0..100).map(|_| sample_action(&x, &mut r)).collect()
        };
        assert_eq!(a, b);
        let c: Vec<usize> = {
            let mut r = stream_rng(42, 4);
            (0..100).map(|_| sample_action(&x, &mut r)).collect()
        };
        assert_ne!(a, c);
    }

    #[test]
    fn sampling_frequency_matches_probability() {
        let x = MixedStrategy::uniform(2);
        let mut rng = stream_rng(2024, 0);
        let draws = 1_000_000;
        let zeros = (0..draws)
            .filter(|_| sample_action(&x, &mut rng) == 0)
            .count();
        // 3 sigma of a fair binomial with 1e6 draws is 0.0015
        assert!((zeros as f64 / draws as f64 - 0.5).abs() < 0.002);
    }

    #[test]
    fn json_round_trip() {
        let g = BimatrixGame::car_pedestrian();
        let back = BimatrixGame::from_json(&g.to_json()).unwrap();
        assert_eq!(g, back);
        assert!(BimatrixGame::from_json(r#"{"A": [[1, 2]], "B": [[1]]}"#).is_err());
        assert!(BimatrixGame::from_json("not json").is_err());
        let s = MixedStrategy::from_json("[0.25, 0.75]").unwrap();
        assert_eq!(s.probs(), &[0.25, 0.75]);
    }
}
