//! Dense two-phase tableau simplex with Bland's rule. Meant for the small
//! problems in this crate, not as a general solver.

use crate::error::{Error, Result};

const PIVOT_EPS: f64 = 1e-11;
const FEASIBILITY_EPS: f64 = 1e-9;
const MAX_PIVOTS: usize = 50_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub(crate) struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Constraint {
    pub fn new(coeffs: Vec<f64>, relation: Relation, rhs: f64) -> Self {
        Constraint {
            coeffs,
            relation,
            rhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    /// Reduced costs; `obj_rhs` holds minus the current objective.
    obj: Vec<f64>,
    obj_rhs: f64,
    /// Columns allowed to enter the basis.
    allowed: Vec<bool>,
}

impl Tableau {
    fn set_objective(&mut self, costs: &[f64]) {
        self.obj = costs.to_vec();
        self.obj_rhs = 0.0;
        for (r, &b) in self.basis.iter().enumerate() {
            let cb = self.obj[b];
            if cb != 0.0 {
                for (o, v) in self.obj.iter_mut().zip(&self.rows[r]) {
                    *o -= cb * v;
                }
                self.obj_rhs -= cb * self.rhs[r];
            }
        }
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.rows[row][col];
        for v in self.rows[row].iter_mut() {
            *v /= p;
        }
        self.rhs[row] /= p;
        self.rows[row][col] = 1.0;
        let pivot_row = self.rows[row].clone();
        let pivot_rhs = self.rhs[row];
        for r in 0..self.rows.len() {
            if r == row {
                continue;
            }
            let f = self.rows[r][col];
            if f != 0.0 {
                for (v, pv) in self.rows[r].iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                self.rows[r][col] = 0.0;
                self.rhs[r] -= f * pivot_rhs;
            }
        }
        let f = self.obj[col];
        if f != 0.0 {
            for (v, pv) in self.obj.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
            self.obj[col] = 0.0;
            self.obj_rhs -= f * pivot_rhs;
        }
        self.basis[row] = col;
    }

    /// Maximizes the current objective. Returns false when unbounded.
    fn run(&mut self) -> Result<bool> {
        for _ in 0..MAX_PIVOTS {
            // Bland: lowest-index improving column, then lowest-index basic
            // variable among the ratio-test ties.
            let Some(col) =
                (0..self.obj.len()).find(|&j| self.allowed[j] && self.obj[j] > PIVOT_EPS)
            else {
                return Ok(true);
            };
            let mut best: Option<(usize, f64)> = None;
            for r in 0..self.rows.len() {
                let a = self.rows[r][col];
                if a > PIVOT_EPS {
                    let ratio = self.rhs[r] / a;
                    best = match best {
                        None => Some((r, ratio)),
                        Some((br, bratio)) => {
                            if ratio < bratio - 1e-12
                                || (ratio <= bratio + 1e-12 && self.basis[r] < self.basis[br])
                            {
                                Some((r, ratio))
                            } else {
                                Some((br, bratio))
                            }
                        }
                    };
                }
            }
            match best {
                None => return Ok(false),
                Some((row, _)) => self.pivot(row, col),
            }
        }
        Err(Error::Singular("simplex pivot limit reached".into()))
    }
}

/// Maximizes `objective . x` over `x >= 0` subject to `constraints`.
pub(crate) fn maximize(objective: &[f64], constraints: &[Constraint]) -> Result<LpOutcome> {
    let n = objective.len();
    let m = constraints.len();
    for c in constraints {
        if c.coeffs.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: c.coeffs.len(),
            });
        }
    }
    // normalize to non-negative right-hand sides
    let normalized: Vec<(Vec<f64>, Relation, f64)> = constraints
        .iter()
        .map(|c| {
            if c.rhs < 0.0 {
                let rel = match c.relation {
                    Relation::Le => Relation::Ge,
                    Relation::Ge => Relation::Le,
                    Relation::Eq => Relation::Eq,
                };
                (c.coeffs.iter().map(|v| -v).collect(), rel, -c.rhs)
            } else {
                (c.coeffs.clone(), c.relation, c.rhs)
            }
        })
        .collect();

    let n_slack = normalized.iter().filter(|c| c.1 != Relation::Eq).count();
    let n_art = normalized.iter().filter(|c| c.1 != Relation::Le).count();
    let width = n + n_slack + n_art;
    let mut rows = vec![vec![0.0; width]; m];
    let mut rhs = vec![0.0; m];
    let mut basis = vec![0; m];
    let mut slack = n;
    let mut art = n + n_slack;
    for (r, (coeffs, rel, b)) in normalized.iter().enumerate() {
        rows[r][..n].copy_from_slice(coeffs);
        rhs[r] = *b;
        match rel {
            Relation::Le => {
                rows[r][slack] = 1.0;
                basis[r] = slack;
                slack += 1;
            }
            Relation::Ge => {
                rows[r][slack] = -1.0;
                slack += 1;
                rows[r][art] = 1.0;
                basis[r] = art;
                art += 1;
            }
            Relation::Eq => {
                rows[r][art] = 1.0;
                basis[r] = art;
                art += 1;
            }
        }
    }
    let is_art = |j: usize| j >= n + n_slack;
    let mut t = Tableau {
        rows,
        rhs,
        basis,
        obj: vec![],
        obj_rhs: 0.0,
        allowed: vec![true; width],
    };

    if n_art > 0 {
        let costs: Vec<f64> = (0..width)
            .map(|j| if is_art(j) { -1.0 } else { 0.0 })
            .collect();
        t.set_objective(&costs);
        t.run()?;
        if -t.obj_rhs < -FEASIBILITY_EPS {
            return Ok(LpOutcome::Infeasible);
        }
        // drive zero-level artificials out of the basis
        let mut r = 0;
        while r < t.rows.len() {
            if is_art(t.basis[r]) {
                let col = (0..n + n_slack).find(|&j| t.rows[r][j].abs() > PIVOT_EPS);
                match col {
                    Some(col) => {
                        t.pivot(r, col);
                        r += 1;
                    }
                    None => {
                        // redundant constraint
                        t.rows.remove(r);
                        t.rhs.remove(r);
                        t.basis.remove(r);
                    }
                }
            } else {
                r += 1;
            }
        }
        for j in n + n_slack..width {
            t.allowed[j] = false;
        }
    }

    let mut costs = vec![0.0; width];
    costs[..n].copy_from_slice(objective);
    t.set_objective(&costs);
    if !t.run()? {
        return Ok(LpOutcome::Unbounded);
    }
    let mut x = vec![0.0; n];
    for (r, &b) in t.basis.iter().enumerate() {
        if b < n {
            x[b] = t.rhs[r];
        }
    }
    let value = objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpOutcome::Optimal { x, value })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn optimal(out: LpOutcome) -> (Vec<f64>, f64) {
        match out {
            LpOutcome::Optimal { x, value } => (x, value),
            other => panic!("expected optimum, got {other:?}"),
        }
    }

    #[test]
    fn textbook_problem() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36
        let cons = vec![
            Constraint::new(vec![1.0, 0.0], Relation::Le, 4.0),
            Constraint::new(vec![0.0, 2.0], Relation::Le, 12.0),
            Constraint::new(vec![3.0, 2.0], Relation::Le, 18.0),
        ];
        let (x, v) = optimal(maximize(&[3.0, 5.0], &cons).unwrap());
        assert!((v - 36.0).abs() < 1e-9);
        assert!((x[0] - 2.0).abs() < 1e-9 && (x[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn equality_and_ge_constraints() {
        // max -x - y, x + y = 2, x >= 0.5 -> value -2
        let cons = vec![
            Constraint::new(vec![1.0, 1.0], Relation::Eq, 2.0),
            Constraint::new(vec![1.0, 0.0], Relation::Ge, 0.5),
        ];
        let (x, v) = optimal(maximize(&[-1.0, -1.0], &cons).unwrap());
        assert!((v + 2.0).abs() < 1e-9);
        assert!(x[0] >= 0.5 - 1e-9);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let cons = vec![
            Constraint::new(vec![1.0], Relation::Le, 1.0),
            Constraint::new(vec![1.0], Relation::Ge, 2.0),
        ];
        assert_eq!(maximize(&[1.0], &cons).unwrap(), LpOutcome::Infeasible);
        let cons = vec![Constraint::new(vec![1.0, -1.0], Relation::Le, 1.0)];
        assert_eq!(maximize(&[1.0, 0.0], &cons).unwrap(), LpOutcome::Unbounded);
    }

    #[test]
    fn negative_rhs_and_redundant_rows() {
        // -x <= -1 means x >= 1; duplicated equality is redundant
        let cons = vec![
            Constraint::new(vec![-1.0, 0.0], Relation::Le, -1.0),
            Constraint::new(vec![1.0, 1.0], Relation::Eq, 3.0),
            Constraint::new(vec![2.0, 2.0], Relation::Eq, 6.0),
        ];
        let (x, v) = optimal(maximize(&[0.0, 1.0], &cons).unwrap());
        assert!((v - 2.0).abs() < 1e-9);
        assert!((x[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_problem_terminates() {
        // classic cycling example under the largest-coefficient rule
        let cons = vec![
            Constraint::new(vec![0.5, -5.5, -2.5, 9.0], Relation::Le, 0.0),
            Constraint::new(vec![0.5, -1.5, -0.5, 1.0], Relation::Le, 0.0),
            Constraint::new(vec![1.0, 0.0, 0.0, 0.0], Relation::Le, 1.0),
        ];
        let (x, v) = optimal(maximize(&[10.0, -57.0, -9.0, -24.0], &cons).unwrap());
        assert!((v - 1.0).abs() < 1e-9);
        assert!((x[0] - 1.0).abs() < 1e-9 && (x[2] - 1.0).abs() < 1e-9);
    }
}
