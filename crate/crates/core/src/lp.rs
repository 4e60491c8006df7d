//! Exact rational linear programming: a two-phase tableau simplex with
//! Bland's rule, matrix-game solves, and dense linear-system solving.
//!
//! Everything here runs on `BigRational`, so results are exact and pivoting
//! is deterministic (smallest-index rule throughout).

use num::{One, Signed, Zero};

use crate::game::MixedAction;
use crate::{Error, Rational, Result};

/// Outcome of `maximize`: optimal objective, primal point, and the duals of
/// the `Ax <= b` rows.
#[derive(Debug, Clone)]
pub struct SimplexSolution {
    pub objective: Rational,
    pub x: Vec<Rational>,
    pub duals: Vec<Rational>,
}

/// Solves `max c.x  s.t.  A x <= b, x >= 0` exactly.
///
/// Returns an error when the program is infeasible or unbounded.
pub fn maximize(c: &[Rational], a: &[Vec<Rational>], b: &[Rational]) -> Result<SimplexSolution> {
    let m = a.len();
    let n = c.len();
    for row in a {
        if row.len() != n {
            return Err(Error::Dimension("LP row width".into()));
        }
    }
    if b.len() != m {
        return Err(Error::Dimension("LP rhs length".into()));
    }

    // Column layout: [vars 0..n | slacks n..n+m | artificials | rhs last].
    let needs_artificial: Vec<bool> = b.iter().map(|v| v.is_negative()).collect();
    let n_art = needs_artificial.iter().filter(|&&x| x).count();
    let width = n + m + n_art + 1;
    let rhs_col = width - 1;

    let mut tableau: Vec<Vec<Rational>> = Vec::with_capacity(m + 1);
    let mut basis: Vec<usize> = Vec::with_capacity(m);
    let mut art_index = 0usize;
    for i in 0..m {
        let mut row = vec![Rational::zero(); width];
        let flip = needs_artificial[i];
        for j in 0..n {
            row[j] = if flip { -a[i][j].clone() } else { a[i][j].clone() };
        }
        row[n + i] = if flip { -Rational::one() } else { Rational::one() };
        row[rhs_col] = if flip { -b[i].clone() } else { b[i].clone() };
        if flip {
            let col = n + m + art_index;
            row[col] = Rational::one();
            basis.push(col);
            art_index += 1;
        } else {
            basis.push(n + i);
        }
        tableau.push(row);
    }

    if n_art > 0 {
        // Phase 1: maximize minus the sum of artificials.
        let mut obj = vec![Rational::zero(); width];
        for j in n + m..n + m + n_art {
            obj[j] = -Rational::one();
        }
        tableau.push(obj);
        price_out(&mut tableau, &basis);
        pivot_until_optimal(&mut tableau, &mut basis, rhs_col)?;
        let phase1 = tableau[m][rhs_col].clone();
        if !phase1.is_zero() {
            return Err(Error::LinearProgram("infeasible".into()));
        }
        // Drive any artificial still in the basis out of it.
        for i in 0..m {
            if basis[i] >= n + m {
                let pivot_col = (0..n + m).find(|&j| !tableau[i][j].is_zero());
                match pivot_col {
                    Some(j) => pivot(&mut tableau, &mut basis, i, j),
                    None => {} // Redundant row; its basis entry stays at zero.
                }
            }
        }
        tableau.pop();
        // Blank out artificial columns so phase 2 never re-enters them.
        for row in tableau.iter_mut() {
            for j in n + m..n + m + n_art {
                row[j] = Rational::zero();
            }
        }
    }

    // Phase 2 objective row.
    let mut obj = vec![Rational::zero(); width];
    for j in 0..n {
        obj[j] = c[j].clone();
    }
    tableau.push(obj);
    price_out(&mut tableau, &basis);
    pivot_until_optimal(&mut tableau, &mut basis, rhs_col)?;

    let m_rows = m;
    let mut x = vec![Rational::zero(); n];
    for i in 0..m_rows {
        if basis[i] < n {
            x[basis[i]] = tableau[i][rhs_col].clone();
        }
    }
    // Dual of row i = objective-row entry under slack i, negated back.
    let mut duals = Vec::with_capacity(m_rows);
    for i in 0..m_rows {
        let v = -tableau[m_rows][n + i].clone();
        duals.push(if needs_artificial[i] { -v } else { v });
    }
    // The objective row's rhs tracks minus the current objective value.
    let objective = -tableau[m_rows][rhs_col].clone();
    Ok(SimplexSolution {
        objective,
        x,
        duals,
    })
}

/// Rewrites the objective row so basic columns have zero reduced cost.
fn price_out(tableau: &mut [Vec<Rational>], basis: &[usize]) {
    let m = basis.len();
    for i in 0..m {
        let coeff = tableau[m][basis[i]].clone();
        if coeff.is_zero() {
            continue;
        }
        let row = tableau[i].clone();
        let obj = &mut tableau[m];
        for j in 0..row.len() {
            let delta = &coeff * &row[j];
            obj[j] -= delta;
        }
    }
}

fn pivot_until_optimal(
    tableau: &mut Vec<Vec<Rational>>,
    basis: &mut [usize],
    rhs_col: usize,
) -> Result<()> {
    let m = basis.len();
    loop {
        // Bland: entering column = smallest index with positive reduced cost.
        let entering = (0..rhs_col).find(|&j| tableau[m][j].is_positive());
        let Some(col) = entering else {
            return Ok(());
        };
        let mut best: Option<(Rational, usize)> = None;
        for i in 0..m {
            if tableau[i][col].is_positive() {
                let ratio = &tableau[i][rhs_col] / &tableau[i][col];
                match &best {
                    None => best = Some((ratio, i)),
                    Some((r, bi)) => {
                        if ratio < *r || (ratio == *r && basis[i] < basis[*bi]) {
                            best = Some((ratio, i));
                        }
                    }
                }
            }
        }
        let Some((_, row)) = best else {
            return Err(Error::LinearProgram("unbounded".into()));
        };
        pivot(tableau, basis, row, col);
    }
}

fn pivot(tableau: &mut [Vec<Rational>], basis: &mut [usize], row: usize, col: usize) {
    let piv = tableau[row][col].clone();
    for v in tableau[row].iter_mut() {
        *v /= piv.clone();
    }
    let pivot_row = tableau[row].clone();
    for (i, r) in tableau.iter_mut().enumerate() {
        if i == row {
            continue;
        }
        let factor = r[col].clone();
        if factor.is_zero() {
            continue;
        }
        for (v, p) in r.iter_mut().zip(&pivot_row) {
            *v -= &factor * p;
        }
    }
    basis[row] = col;
}

/// Exact solution of a zero-sum matrix game; rows maximize, columns minimize.
#[derive(Debug, Clone)]
pub struct MatrixGameSolution {
    pub value: Rational,
    pub row_strategy: MixedAction,
    pub col_strategy: MixedAction,
}

/// Solves the matrix game `matrix[row][col]` exactly (row player maximizes).
///
/// Deterministic: ties are broken by smallest action index, both in the
/// closed-form small cases and through Bland's rule inside the simplex.
pub fn solve_matrix_game(matrix: &[Vec<Rational>]) -> Result<MatrixGameSolution> {
    let m = matrix.len();
    if m == 0 || matrix[0].is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let n = matrix[0].len();
    for row in matrix {
        if row.len() != n {
            return Err(Error::Dimension("ragged matrix".into()));
        }
    }

    if m == 1 {
        let (j, value) = argmin(&matrix[0]);
        return Ok(MatrixGameSolution {
            value,
            row_strategy: MixedAction::pure(1, 0),
            col_strategy: MixedAction::pure(n, j),
        });
    }
    if n == 1 {
        let col: Vec<Rational> = matrix.iter().map(|r| r[0].clone()).collect();
        let (i, value) = argmax(&col);
        return Ok(MatrixGameSolution {
            value,
            row_strategy: MixedAction::pure(m, i),
            col_strategy: MixedAction::pure(1, 0),
        });
    }
    if let Some(sol) = pure_saddle(matrix) {
        return Ok(sol);
    }
    if m == 2 && n == 2 {
        return Ok(mixed_2x2(matrix));
    }
    simplex_matrix_game(matrix)
}

fn argmin(xs: &[Rational]) -> (usize, Rational) {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x < xs[best] {
            best = i;
        }
    }
    (best, xs[best].clone())
}

fn argmax(xs: &[Rational]) -> (usize, Rational) {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    (best, xs[best].clone())
}

/// Pure saddle point, if any: an entry minimal in its row and maximal in its
/// column; scanned in lexicographic order.
fn pure_saddle(matrix: &[Vec<Rational>]) -> Option<MatrixGameSolution> {
    let m = matrix.len();
    let n = matrix[0].len();
    for i in 0..m {
        for j in 0..n {
            let v = &matrix[i][j];
            let row_min = (0..n).all(|jj| &matrix[i][jj] >= v);
            let col_max = (0..m).all(|ii| &matrix[ii][j] <= v);
            if row_min && col_max {
                return Some(MatrixGameSolution {
                    value: v.clone(),
                    row_strategy: MixedAction::pure(m, i),
                    col_strategy: MixedAction::pure(n, j),
                });
            }
        }
    }
    None
}

/// Indifference solution for a 2x2 game without a pure saddle.
fn mixed_2x2(matrix: &[Vec<Rational>]) -> MatrixGameSolution {
    let a = &matrix[0][0];
    let b = &matrix[0][1];
    let c = &matrix[1][0];
    let d = &matrix[1][1];
    let denom = a - b - c + d;
    let p = (d - c) / &denom; // weight on row 0
    let q = (d - b) / &denom; // weight on column 0
    let value = (a * d - b * c) / &denom;
    MatrixGameSolution {
        value,
        row_strategy: MixedAction::new(vec![p.clone(), Rational::one() - p]).unwrap(),
        col_strategy: MixedAction::new(vec![q.clone(), Rational::one() - q]).unwrap(),
    }
}

fn simplex_matrix_game(matrix: &[Vec<Rational>]) -> Result<MatrixGameSolution> {
    let m = matrix.len();
    let n = matrix[0].len();
    // Shift so every entry is at least one; the value shifts with it.
    let min_entry = matrix
        .iter()
        .flat_map(|r| r.iter())
        .min()
        .unwrap()
        .clone();
    let shift = Rational::one() - &min_entry;
    // Column player's scaled LP: max sum(w) s.t. M' w <= 1, w >= 0.
    let a: Vec<Vec<Rational>> = matrix
        .iter()
        .map(|row| row.iter().map(|v| v + &shift).collect())
        .collect();
    let c = vec![Rational::one(); n];
    let b = vec![Rational::one(); m];
    let sol = maximize(&c, &a, &b)?;
    if !sol.objective.is_positive() {
        return Err(Error::LinearProgram("degenerate matrix game".into()));
    }
    let shifted_value = Rational::one() / &sol.objective;
    let col: Vec<Rational> = sol.x.iter().map(|w| w * &shifted_value).collect();
    let row: Vec<Rational> = sol.duals.iter().map(|u| u * &shifted_value).collect();
    Ok(MatrixGameSolution {
        value: shifted_value - shift,
        row_strategy: MixedAction::new(row)
            .map_err(|_| Error::LinearProgram("dual not a distribution".into()))?,
        col_strategy: MixedAction::new(col)
            .map_err(|_| Error::LinearProgram("primal not a distribution".into()))?,
    })
}

/// Best split `mu` over `points` (each a payoff pair) maximizing the worst
/// slack `min_k (sum mu_e points[e][k] - floor[k])`; the split is feasible
/// for "both coordinates at least their floor" iff the returned slack is
/// nonnegative.
pub fn best_two_sided_mixture(
    points: &[[Rational; 2]],
    floors: &[Rational; 2],
) -> Result<(Rational, Vec<Rational>)> {
    if points.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    // Matrix game with the mixture as the ROW (maximizing) player and the
    // two coordinates as the adversary's columns.
    let matrix: Vec<Vec<Rational>> = points
        .iter()
        .map(|p| (0..2).map(|k| &p[k] - &floors[k]).collect())
        .collect();
    let sol = solve_matrix_game(&matrix)?;
    Ok((sol.value, sol.row_strategy.probs().to_vec()))
}

/// Solves the dense linear system `A x = b` exactly by Gaussian elimination.
///
/// Returns `None` when `A` is singular.
pub fn solve_linear(a: &[Vec<Rational>], b: &[Rational]) -> Option<Vec<Rational>> {
    let n = a.len();
    if n == 0 {
        return Some(Vec::new());
    }
    let mut aug: Vec<Vec<Rational>> = a
        .iter()
        .zip(b)
        .map(|(row, rhs)| {
            let mut r = row.clone();
            r.push(rhs.clone());
            r
        })
        .collect();
    for col in 0..n {
        let pivot_row = (col..n).find(|&r| !aug[r][col].is_zero())?;
        aug.swap(col, pivot_row);
        let piv = aug[col][col].clone();
        for v in aug[col].iter_mut() {
            *v /= piv.clone();
        }
        for r in 0..n {
            if r != col && !aug[r][col].is_zero() {
                let factor = aug[r][col].clone();
                let base = aug[col].clone();
                for (v, p) in aug[r].iter_mut().zip(&base) {
                    *v -= &factor * p;
                }
            }
        }
    }
    Some(aug.into_iter().map(|row| row[n].clone()).collect())
}
