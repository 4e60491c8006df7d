//! Zero-sum value oracles: matrix-game solves, discounted Shapley iteration,
//! vanishing-discount estimation, recursive and Büchi value iteration,
//! candidate mixed-action families, and δ-maxmin strategies.

use num::{One, Signed, Zero};
use serde::Serialize;

use crate::game::{
    expected_value, rational_from_f64, rational_to_f64, ActionId, History, MixedAction,
    MixedActionSetFamily, Objective, Player, StateId, StationaryStrategy, StochasticGame,
    TransitionKernel,
};
use crate::lp;
use crate::{Error, Rational, Result};

/// How trustworthy a computed value vector is.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Accuracy {
    /// Exact rational fixed point.
    Exact,
    /// Iterative result; `tol` bounds the reported error.
    Approximate { tol: f64 },
}

impl Accuracy {
    pub fn is_exact(&self) -> bool {
        matches!(self, Accuracy::Exact)
    }

    /// Margin for strict comparisons against these values.
    pub fn margin(&self, fallback: f64) -> Rational {
        match self {
            Accuracy::Exact => Rational::zero(),
            Accuracy::Approximate { tol } => rational_from_f64(tol.max(fallback)),
        }
    }
}

/// Per-state maxmin values of one player.
#[derive(Debug, Clone)]
pub struct ValueVector {
    pub player: Player,
    pub values: Vec<Rational>,
    pub accuracy: Accuracy,
}

impl ValueVector {
    pub fn get(&self, s: StateId) -> &Rational {
        &self.values[s]
    }

    pub fn to_report(&self) -> ValueReport {
        ValueReport {
            player: self.player.to_string(),
            values: self
                .values
                .iter()
                .map(|v| format!("{}", rational_to_f64(v)))
                .collect(),
            exact: self
                .values
                .iter()
                .map(crate::game::format_rational)
                .collect(),
            accuracy: self.accuracy.clone(),
        }
    }
}

/// JSON form of a value vector: decimal strings plus exact fractions and the
/// tolerance tag.
#[derive(Debug, Clone, Serialize)]
pub struct ValueReport {
    pub player: String,
    pub values: Vec<String>,
    pub exact: Vec<String>,
    pub accuracy: Accuracy,
}

/// Solves the matrix game `matrix[a1][a2]` whose entries are payoffs to
/// `maximizer`. Returns the value and an optimal mixed action per player,
/// oriented so `.1` is player 1's and `.2` player 2's.
pub fn solve_matrix_game(
    matrix: &[Vec<Rational>],
    maximizer: Player,
) -> Result<(Rational, MixedAction, MixedAction)> {
    match maximizer {
        Player::One => {
            let sol = lp::solve_matrix_game(matrix)?;
            Ok((sol.value, sol.row_strategy, sol.col_strategy))
        }
        Player::Two => {
            if matrix.is_empty() || matrix[0].is_empty() {
                return Err(Error::EmptyMatrix);
            }
            // Player 2 maximizes over columns: transpose so rows maximize.
            let n1 = matrix.len();
            let n2 = matrix[0].len();
            let t: Vec<Vec<Rational>> = (0..n2)
                .map(|j| (0..n1).map(|i| matrix[i][j].clone()).collect())
                .collect();
            let sol = lp::solve_matrix_game(&t)?;
            Ok((sol.value, sol.col_strategy, sol.row_strategy))
        }
    }
}

/// One-shot value at a history: builds the action-pair matrix of expected
/// successor valuations `D(h, a1, a2, s')` and solves it for `maximizer`.
pub fn one_shot_value<D>(
    game: &StochasticGame,
    kernel: &TransitionKernel,
    valuation: D,
    h: &History,
    maximizer: Player,
) -> Result<(Rational, MixedAction, MixedAction)>
where
    D: Fn(&History, ActionId, ActionId, StateId) -> Rational,
{
    let s = h.final_state();
    let n1 = game.num_actions(Player::One);
    let n2 = game.num_actions(Player::Two);
    let mut matrix = vec![vec![Rational::zero(); n2]; n1];
    for (a1, row) in matrix.iter_mut().enumerate() {
        for (a2, cell) in row.iter_mut().enumerate() {
            let dist = kernel.row(s, a1, a2);
            let mut acc = Rational::zero();
            for (t, p) in dist.iter().enumerate() {
                if p.is_positive() {
                    acc += p * valuation(h, a1, a2, t);
                }
            }
            *cell = acc;
        }
    }
    solve_matrix_game(&matrix, maximizer)
}

/// One-shot value on a state-indexed valuation (the common case).
pub fn one_shot_state_value(
    game: &StochasticGame,
    kernel: &TransitionKernel,
    values: &[Rational],
    s: StateId,
    maximizer: Player,
) -> Result<(Rational, MixedAction, MixedAction)> {
    let h = History::start(s);
    one_shot_value(game, kernel, |_, _, _, t| values[t].clone(), &h, maximizer)
}

/// Snaps a float onto the dyadic 2^-36 grid, exactly.
pub(crate) fn quantize(x: f64) -> Rational {
    const SCALE: f64 = 68719476736.0; // 2^36
    let v = (x * SCALE).round();
    Rational::new((v as i128).into(), (SCALE as i128).into())
}

/// Best rational approximation with a bounded denominator, by continued
/// fractions. Iterative solvers land near small-denominator fixed points;
/// reconstruction recovers them for exact verification.
pub fn reconstruct_rational(x: f64, max_den: i64) -> Rational {
    if !x.is_finite() {
        return Rational::zero();
    }
    let negative = x < 0.0;
    let mut frac = x.abs();
    // Convergents p/q of the continued fraction.
    let (mut p0, mut q0, mut p1, mut q1) = (0i128, 1i128, 1i128, 0i128);
    for _ in 0..64 {
        let a = frac.floor();
        if a > i64::MAX as f64 {
            break;
        }
        let ai = a as i128;
        let p2 = ai * p1 + p0;
        let q2 = ai * q1 + q0;
        if q2 > max_den as i128 {
            break;
        }
        p0 = p1;
        q0 = q1;
        p1 = p2;
        q1 = q2;
        let rem = frac - a;
        if rem < 1e-12 {
            break;
        }
        frac = 1.0 / rem;
    }
    if q1 == 0 {
        return quantize(x);
    }
    let mut out = Rational::new(p1.into(), q1.into());
    if negative {
        out = -out;
    }
    out
}

/// Float matrix-game value for the hot iterative loops (rows maximize).
/// Closed forms for the small shapes, exact simplex on the dyadic grid
/// otherwise.
fn matrix_game_value_f64(matrix: &[Vec<f64>]) -> Result<f64> {
    let m = matrix.len();
    let n = matrix[0].len();
    if m == 1 {
        return Ok(matrix[0].iter().cloned().fold(f64::INFINITY, f64::min));
    }
    if n == 1 {
        return Ok(matrix.iter().map(|r| r[0]).fold(f64::NEG_INFINITY, f64::max));
    }
    // Pure saddle point.
    for i in 0..m {
        for j in 0..n {
            let v = matrix[i][j];
            if (0..n).all(|jj| matrix[i][jj] >= v) && (0..m).all(|ii| matrix[ii][j] <= v) {
                return Ok(v);
            }
        }
    }
    if m == 2 && n == 2 {
        let (a, b, c, d) = (matrix[0][0], matrix[0][1], matrix[1][0], matrix[1][1]);
        return Ok((a * d - b * c) / (a - b - c + d));
    }
    let q: Vec<Vec<Rational>> = matrix
        .iter()
        .map(|r| r.iter().map(|&x| quantize(x)).collect())
        .collect();
    Ok(rational_to_f64(&lp::solve_matrix_game(&q)?.value))
}

/// Float value oriented for either maximizer.
fn value_f64_for(matrix: &[Vec<f64>], maximizer: Player) -> Result<f64> {
    match maximizer {
        Player::One => matrix_game_value_f64(matrix),
        Player::Two => {
            let n1 = matrix.len();
            let n2 = matrix[0].len();
            let t: Vec<Vec<f64>> = (0..n2)
                .map(|j| (0..n1).map(|i| matrix[i][j]).collect())
                .collect();
            matrix_game_value_f64(&t)
        }
    }
}

/// Solver knobs shared by the iterative oracles.
#[derive(Debug, Clone)]
pub struct ValueConfig {
    pub tol: f64,
    /// Geometric λ-grid for the vanishing-discount estimate.
    pub lambda_grid: Vec<f64>,
    pub max_sweeps: usize,
    /// Sweeps attempted in exact arithmetic before falling back to floats.
    pub exact_sweeps: usize,
}

impl Default for ValueConfig {
    fn default() -> Self {
        ValueConfig {
            tol: 1e-9,
            lambda_grid: (1..=10).map(|k| 0.5f64.powi(k)).collect(),
            max_sweeps: 100_000,
            exact_sweeps: 200,
        }
    }
}

/// Discounted value with weight `lambda` on the current stage payoff: the
/// fixed point of `v = val[lambda g + (1 - lambda) E v]`, so `lambda -> 0`
/// is the patient limit.
///
/// Iterative: floats inside, rational snapshots out, accuracy tagged. Also
/// returns both players' stationary strategies from the final sweep.
pub fn discounted_value(
    game: &StochasticGame,
    player: Player,
    lambda: f64,
    tol: f64,
) -> Result<(ValueVector, [StationaryStrategy; 2])> {
    if lambda <= 0.0 || lambda >= 1.0 {
        return Err(Error::InvalidParameter("lambda must be in (0,1)".into()));
    }
    let payoffs = match game.objective(player) {
        Objective::Discounted { payoffs, .. } | Objective::LongRunAverage { payoffs } => payoffs,
        o => {
            return Err(Error::ObjectiveData(format!(
                "discounted iteration needs stage payoffs, objective is {}",
                o.kind()
            )))
        }
    };
    let n = game.num_states();
    let n1 = game.num_actions(Player::One);
    let n2 = game.num_actions(Player::Two);
    let g: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|s| {
            (0..n1)
                .map(|a1| {
                    (0..n2)
                        .map(|a2| rational_to_f64(payoffs.get(s, a1, a2)))
                        .collect()
                })
                .collect()
        })
        .collect();
    let kernel_f64: Vec<Vec<Vec<Vec<f64>>>> = (0..n)
        .map(|s| {
            (0..n1)
                .map(|a1| {
                    (0..n2)
                        .map(|a2| {
                            game.kernel
                                .row(s, a1, a2)
                                .iter()
                                .map(rational_to_f64)
                                .collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    let build_matrix = |s: usize, v: &[f64]| -> Vec<Vec<f64>> {
        (0..n1)
            .map(|a1| {
                (0..n2)
                    .map(|a2| {
                        let cont: f64 = kernel_f64[s][a1][a2]
                            .iter()
                            .zip(v)
                            .map(|(p, vv)| p * vv)
                            .sum();
                        lambda * g[s][a1][a2] + (1.0 - lambda) * cont
                    })
                    .collect()
            })
            .collect()
    };
    let solve_sweep = |v: &[f64],
                       want_strategies: bool|
     -> Result<(Vec<f64>, Vec<MixedAction>, Vec<MixedAction>)> {
        let mut next = vec![0.0f64; n];
        let mut s1 = Vec::new();
        let mut s2 = Vec::new();
        for s in 0..n {
            let matrix = build_matrix(s, v);
            if want_strategies {
                let q: Vec<Vec<Rational>> = matrix
                    .iter()
                    .map(|r| r.iter().map(|&x| quantize(x)).collect())
                    .collect();
                let (val, x1, x2) = solve_matrix_game(&q, player)?;
                next[s] = rational_to_f64(&val);
                s1.push(x1);
                s2.push(x2);
            } else {
                next[s] = value_f64_for(&matrix, player)?;
            }
        }
        Ok((next, s1, s2))
    };

    let mut v = vec![0.0f64; n];
    // Contraction factor is (1 - lambda); stop when the sweep delta
    // guarantees accuracy `tol`.
    let stop = (tol * lambda / (2.0 * (1.0 - lambda))).max(1e-14);
    let mut sweeps = 0usize;
    loop {
        let (next, _, _) = solve_sweep(&v, false)?;
        let delta = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        v = next;
        sweeps += 1;
        if delta < stop {
            break;
        }
        if sweeps > 2_000_000 {
            return Err(Error::NoConvergence(format!(
                "discounted iteration residual {delta} after {sweeps} sweeps"
            )));
        }
    }

    let (final_v, strat1, strat2) = solve_sweep(&v, true)?;
    Ok((
        ValueVector {
            player,
            values: final_v.iter().map(|&x| quantize(x)).collect(),
            accuracy: Accuracy::Approximate { tol },
        },
        [
            StationaryStrategy {
                player: Player::One,
                actions: strat1,
            },
            StationaryStrategy {
                player: Player::Two,
                actions: strat2,
            },
        ],
    ))
}

/// Value iteration for recursive-absorbing payoffs: absorbing states fixed at
/// `gamma`, nonabsorbing states initialized at the objective's default.
///
/// Exact sweeps run first; an exact fixed point reached monotonically (all
/// absorbing payoffs on one side of the default) is the game value.
/// Otherwise iteration continues in floats and reports the residual.
pub fn recursive_value_vector(
    game: &StochasticGame,
    player: Player,
    config: &ValueConfig,
) -> Result<(ValueVector, [StationaryStrategy; 2])> {
    let default = match game.objective(player) {
        Objective::RecursiveAbsorbing { default } => default.clone(),
        o => {
            return Err(Error::ObjectiveData(format!(
                "recursive value iteration on objective {}",
                o.kind()
            )))
        }
    };
    let n = game.num_states();
    let mut v: Vec<Rational> = (0..n)
        .map(|s| {
            if game.is_absorbing(s) {
                game.gamma_of(player, s).clone()
            } else {
                default.clone()
            }
        })
        .collect();

    // Monotone pattern: all absorbing payoffs on one side of the default.
    let increasing = game
        .absorbing
        .iter()
        .all(|&s| game.gamma_of(player, s) >= &default);
    let decreasing = game
        .absorbing
        .iter()
        .all(|&s| game.gamma_of(player, s) <= &default);
    let pattern = increasing || decreasing;

    let mut exact = false;
    for _ in 0..config.exact_sweeps {
        let (next, _) = recursive_sweep_exact(game, player, &v)?;
        if pattern {
            let ok = v
                .iter()
                .zip(&next)
                .all(|(old, new)| if increasing { new >= old } else { new <= old });
            if !ok {
                return Err(Error::ValueCheck(
                    "recursive sweep broke monotonicity".into(),
                ));
            }
        }
        let fixed = v == next;
        v = next;
        if fixed {
            exact = pattern;
            break;
        }
        if denominator_bits(&v) > 512 {
            break;
        }
    }

    if exact {
        let (_, strats) = recursive_sweep_exact(game, player, &v)?;
        return Ok((
            ValueVector {
                player,
                values: v,
                accuracy: Accuracy::Exact,
            },
            package_strategies(strats),
        ));
    }

    // Float continuation.
    let mut vf: Vec<f64> = v.iter().map(rational_to_f64).collect();
    let mut residual = f64::INFINITY;
    for _ in 0..config.max_sweeps {
        let next = recursive_sweep_f64(game, player, &vf)?;
        residual = next
            .iter()
            .zip(&vf)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        vf = next;
        if residual < config.tol {
            break;
        }
    }
    // Reconstruct nearby small-denominator rationals and certify them with
    // an exact guarantee/cap bracket from the induced stationary strategies.
    // The iteration residual alone is not a sound error bound on slowly
    // mixing chains.
    let snapped: Vec<Rational> = (0..n)
        .map(|s| {
            if game.is_absorbing(s) {
                game.gamma_of(player, s).clone()
            } else {
                reconstruct_rational(vf[s], 1 << 24)
            }
        })
        .collect();
    let (_, strats) = recursive_sweep_exact(game, player, &snapped)?;
    let pair = package_strategies(strats);
    let own = &pair[player.index()];
    let opp = &pair[player.opponent().index()];
    match stationary_bracket(game, player, own, opp, &default) {
        Ok((floor, cap)) => {
            if floor == cap {
                let (_, strats) = recursive_sweep_exact(game, player, &floor)?;
                Ok((
                    ValueVector {
                        player,
                        values: floor,
                        accuracy: Accuracy::Exact,
                    },
                    package_strategies(strats),
                ))
            } else {
                let width = (0..n)
                    .map(|s| {
                        let lo = (&snapped[s] - &floor[s]).abs();
                        let hi = (&cap[s] - &snapped[s]).abs();
                        rational_to_f64(&lo.max(hi))
                    })
                    .fold(0.0f64, f64::max);
                Ok((
                    ValueVector {
                        player,
                        values: snapped,
                        accuracy: Accuracy::Approximate {
                            tol: width.max(config.tol),
                        },
                    },
                    pair,
                ))
            }
        }
        // Mixed-sign payoffs leave no exact bracket; report the residual.
        Err(_) => Ok((
            ValueVector {
                player,
                values: snapped,
                accuracy: Accuracy::Approximate {
                    tol: residual.max(config.tol) * 1e3,
                },
            },
            pair,
        )),
    }
}

/// Exact value bracket of a stationary candidate pair: `floor` is what the
/// maximizer guarantees with her component against anything, `cap` what the
/// opponent's component concedes at most. The true maxmin value lies between
/// them; equality pins it.
fn stationary_bracket(
    game: &StochasticGame,
    player: Player,
    own: &StationaryStrategy,
    opp: &StationaryStrategy,
    default: &Rational,
) -> Result<(Vec<Rational>, Vec<Rational>)> {
    let floor = stationary_side_value(game, player, own, false, default)?;
    let cap = stationary_side_value(game, player, opp, true, default)?;
    Ok((floor, cap))
}

/// Value of the single-controller game where `fixed` is frozen and the other
/// side optimizes `player`'s recursive payoff (maximizing when
/// `controller_maximizes`, else minimizing).
fn stationary_side_value(
    game: &StochasticGame,
    player: Player,
    fixed: &StationaryStrategy,
    controller_maximizes: bool,
    default: &Rational,
) -> Result<Vec<Rational>> {
    let controller = if controller_maximizes {
        player
    } else {
        player.opponent()
    };
    let n = game.num_states();
    let n_own = game.num_actions(controller);
    let sign = if controller_maximizes {
        Rational::one()
    } else {
        -Rational::one()
    };
    let terminal: Vec<Option<Rational>> = (0..n)
        .map(|s| {
            if game.is_absorbing(s) {
                Some(&sign * &(game.gamma_of(player, s) - default))
            } else {
                None
            }
        })
        .collect();
    let mut transitions = vec![Vec::new(); n];
    for s in 0..n {
        if game.is_absorbing(s) {
            continue;
        }
        let mut acts = Vec::with_capacity(n_own);
        for a in 0..n_own {
            let pure = MixedAction::pure(n_own, a);
            let (x1, x2) = match controller {
                Player::One => (&pure, fixed.action(s)),
                Player::Two => (fixed.action(s), &pure),
            };
            let dist = crate::game::step_distribution(game, &game.kernel, s, x1, x2)?;
            acts.push(
                dist.into_iter()
                    .enumerate()
                    .filter(|(_, p)| p.is_positive())
                    .collect(),
            );
        }
        transitions[s] = acts;
    }
    let mdp = crate::mdp::AbsorbingMdp {
        terminal,
        transitions,
    };
    let (values, _) = crate::mdp::solve_absorbing_mdp(&mdp)?;
    Ok(values
        .into_iter()
        .map(|v| &sign * &v + default)
        .collect())
}

fn package_strategies(strats: [Vec<MixedAction>; 2]) -> [StationaryStrategy; 2] {
    let [s1, s2] = strats;
    [
        StationaryStrategy {
            player: Player::One,
            actions: s1,
        },
        StationaryStrategy {
            player: Player::Two,
            actions: s2,
        },
    ]
}

fn recursive_sweep_exact(
    game: &StochasticGame,
    player: Player,
    v: &[Rational],
) -> Result<(Vec<Rational>, [Vec<MixedAction>; 2])> {
    let n = game.num_states();
    let n1 = game.num_actions(Player::One);
    let n2 = game.num_actions(Player::Two);
    let mut next = Vec::with_capacity(n);
    let mut strat1 = Vec::with_capacity(n);
    let mut strat2 = Vec::with_capacity(n);
    for s in 0..n {
        if game.is_absorbing(s) {
            next.push(v[s].clone());
            strat1.push(MixedAction::pure(n1, 0));
            strat2.push(MixedAction::pure(n2, 0));
            continue;
        }
        let mut matrix = vec![vec![Rational::zero(); n2]; n1];
        for (a1, row) in matrix.iter_mut().enumerate() {
            for (a2, cell) in row.iter_mut().enumerate() {
                let krow = game.kernel.row(s, a1, a2);
                *cell = krow
                    .iter()
                    .zip(v)
                    .filter(|(p, _)| p.is_positive())
                    .map(|(p, vv)| p * vv)
                    .sum();
            }
        }
        let (val, x1, x2) = solve_matrix_game(&matrix, player)?;
        next.push(val);
        strat1.push(x1);
        strat2.push(x2);
    }
    Ok((next, [strat1, strat2]))
}

fn recursive_sweep_f64(game: &StochasticGame, player: Player, v: &[f64]) -> Result<Vec<f64>> {
    let n = game.num_states();
    let n1 = game.num_actions(Player::One);
    let n2 = game.num_actions(Player::Two);
    let mut next = Vec::with_capacity(n);
    for s in 0..n {
        if game.is_absorbing(s) {
            next.push(v[s]);
            continue;
        }
        let matrix: Vec<Vec<f64>> = (0..n1)
            .map(|a1| {
                (0..n2)
                    .map(|a2| {
                        game.kernel
                            .row(s, a1, a2)
                            .iter()
                            .zip(v)
                            .map(|(p, vv)| rational_to_f64(p) * vv)
                            .sum()
                    })
                    .collect()
            })
            .collect();
        next.push(value_f64_for(&matrix, player)?);
    }
    Ok(next)
}

fn denominator_bits(v: &[Rational]) -> u64 {
    v.iter().map(|x| x.denom().bits()).max().unwrap_or(0)
}

/// Long-run-average maxmin estimate by Richardson extrapolation of the
/// discounted values along a halving λ-grid. The delta between the last two
/// extrapolations is the reported error.
pub fn long_run_average_values(
    game: &StochasticGame,
    player: Player,
    config: &ValueConfig,
) -> Result<ValueVector> {
    if config.lambda_grid.len() < 2 {
        return Err(Error::InvalidParameter("lambda grid too short".into()));
    }
    let n = game.num_states();
    let mut prev: Option<Vec<f64>> = None;
    let mut extrapolated = vec![0.0f64; n];
    let mut last_delta = f64::INFINITY;
    let mut prev_extrap: Option<Vec<f64>> = None;
    for &lambda in &config.lambda_grid {
        let (vv, _) = discounted_value(game, player, lambda, config.tol)?;
        let cur: Vec<f64> = vv.values.iter().map(rational_to_f64).collect();
        if let Some(p) = &prev {
            // v(λ) ~ v0 + c λ on a halving grid: v0 ~ 2 v(λ/2) - v(λ).
            for s in 0..n {
                extrapolated[s] = 2.0 * cur[s] - p[s];
            }
            if let Some(pe) = &prev_extrap {
                last_delta = extrapolated
                    .iter()
                    .zip(pe)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
            }
            prev_extrap = Some(extrapolated.clone());
        }
        prev = Some(cur);
    }
    Ok(ValueVector {
        player,
        values: extrapolated.iter().map(|&x| quantize(x)).collect(),
        accuracy: Accuracy::Approximate {
            tol: last_delta.max(config.tol),
        },
    })
}

/// Discounted values along the grid, for trend reports and consistency tests.
pub fn discounted_grid(
    game: &StochasticGame,
    player: Player,
    config: &ValueConfig,
) -> Result<Vec<(f64, Vec<f64>)>> {
    config
        .lambda_grid
        .iter()
        .map(|&l| {
            let (vv, _) = discounted_value(game, player, l, config.tol)?;
            Ok((l, vv.values.iter().map(rational_to_f64).collect()))
        })
        .collect()
}

/// Büchi probability via the nested fixpoint νY.μX of one-shot operators:
/// target states read the outer vector, others the inner one. Float
/// iteration with caps; always approximate.
fn buchi_probability(
    game: &StochasticGame,
    player: Player,
    target: &std::collections::BTreeSet<StateId>,
    config: &ValueConfig,
) -> Result<Vec<f64>> {
    let n = game.num_states();
    let n1 = game.num_actions(Player::One);
    let n2 = game.num_actions(Player::Two);
    let mut outer = vec![1.0f64; n];
    let inner_tol = config.tol.max(1e-10);
    for _round in 0..500 {
        let mut x = vec![0.0f64; n];
        for _ in 0..config.max_sweeps {
            let mut next = vec![0.0f64; n];
            let mut delta: f64 = 0.0;
            for s in 0..n {
                let source: &[f64] = if target.contains(&s) { &outer } else { &x };
                let matrix: Vec<Vec<f64>> = (0..n1)
                    .map(|a1| {
                        (0..n2)
                            .map(|a2| {
                                game.kernel
                                    .row(s, a1, a2)
                                    .iter()
                                    .zip(source)
                                    .map(|(p, vv)| rational_to_f64(p) * vv)
                                    .sum()
                            })
                            .collect()
                    })
                    .collect();
                next[s] = value_f64_for(&matrix, player)?;
                delta = delta.max((next[s] - x[s]).abs());
            }
            x = next;
            if delta < inner_tol {
                break;
            }
        }
        let outer_delta: f64 = outer
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        outer = x;
        if outer_delta < inner_tol {
            return Ok(outer);
        }
    }
    Err(Error::NoConvergence(
        "Büchi nested fixpoint did not stabilize".into(),
    ))
}

fn buchi_values(
    game: &StochasticGame,
    player: Player,
    config: &ValueConfig,
) -> Result<ValueVector> {
    let (set, win, lose, complemented) = match game.objective(player) {
        Objective::Buchi { target, win, lose } => {
            (target.clone(), win.clone(), lose.clone(), false)
        }
        Objective::CoBuchi { avoid, win, lose } => (avoid.clone(), win.clone(), lose.clone(), true),
        o => {
            return Err(Error::ObjectiveData(format!(
                "Büchi iteration on objective {}",
                o.kind()
            )))
        }
    };
    // Co-Büchi for the maximizer is one minus the opponent-maximized Büchi
    // probability of the avoid set (the game is determined).
    let probs = if complemented {
        let p = buchi_probability(game, player.opponent(), &set, config)?;
        p.into_iter().map(|x| 1.0 - x).collect::<Vec<f64>>()
    } else {
        buchi_probability(game, player, &set, config)?
    };
    let winf = rational_to_f64(&win);
    let losef = rational_to_f64(&lose);
    Ok(ValueVector {
        player,
        values: probs
            .iter()
            .map(|&p| quantize(losef + (winf - losef) * p))
            .collect(),
        accuracy: Accuracy::Approximate { tol: 1e-6 },
    })
}

/// Maxmin value dispatch per objective.
///
/// Rejects objectives that are neither shift-invariant nor discounted with a
/// diagnostic, as their values are history-dependent.
pub fn maxmin_values(
    game: &StochasticGame,
    player: Player,
    config: &ValueConfig,
) -> Result<ValueVector> {
    match game.objective(player) {
        Objective::Discounted { lambda, .. } => {
            let l = rational_to_f64(lambda);
            Ok(discounted_value(game, player, l, config.tol)?.0)
        }
        Objective::LongRunAverage { .. } => long_run_average_values(game, player, config),
        Objective::RecursiveAbsorbing { .. } => Ok(recursive_value_vector(game, player, config)?.0),
        Objective::Buchi { .. } | Objective::CoBuchi { .. } => buchi_values(game, player, config),
        o => Err(Error::NotShiftInvariant(format!(
            "objective not shift-invariant: {}",
            o.kind()
        ))),
    }
}

/// Exact values of the even-stage-entry payoff on the product with the stage
/// parity: `values[s][p]` is the maxmin value at state `s` when the current
/// stage has parity `p` (0 = even, 1 = odd). Stage counting starts at 1.
pub fn even_stage_entry_values(
    game: &StochasticGame,
    player: Player,
) -> Result<Vec<[Rational; 2]>> {
    let target = match game.objective(player) {
        Objective::EvenStageEntry { target } => *target,
        o => {
            return Err(Error::ObjectiveData(format!(
                "even-stage analysis on objective {}",
                o.kind()
            )))
        }
    };
    let n = game.num_states();
    let n1 = game.num_actions(Player::One);
    let n2 = game.num_actions(Player::Two);
    let mut v = vec![[Rational::zero(), Rational::zero()]; n];
    for _sweep in 0..10_000 {
        let mut next = v.clone();
        for s in 0..n {
            for parity in 0..2 {
                if s == target && parity == 0 {
                    next[s][parity] = Rational::one();
                    continue;
                }
                let mut matrix = vec![vec![Rational::zero(); n2]; n1];
                for (a1, row) in matrix.iter_mut().enumerate() {
                    for (a2, cell) in row.iter_mut().enumerate() {
                        let krow = game.kernel.row(s, a1, a2);
                        *cell = krow
                            .iter()
                            .enumerate()
                            .filter(|(_, p)| p.is_positive())
                            .map(|(t, p)| p * &v[t][1 - parity])
                            .sum();
                    }
                }
                let (val, _, _) = solve_matrix_game(&matrix, player)?;
                next[s][parity] = val;
            }
        }
        if next == v {
            return Ok(v);
        }
        v = next;
    }
    Err(Error::NoConvergence(
        "even-stage-entry values did not reach a fixed point".into(),
    ))
}

/// Subgame value of the even-stage-entry payoff at a history.
pub fn even_stage_entry_subgame_value(
    game: &StochasticGame,
    player: Player,
    h: &History,
) -> Result<Rational> {
    let target = match game.objective(player) {
        Objective::EvenStageEntry { target } => *target,
        o => {
            return Err(Error::ObjectiveData(format!(
                "even-stage analysis on objective {}",
                o.kind()
            )))
        }
    };
    // Already achieved along the history?
    for (idx, &s) in h.states().iter().enumerate() {
        let stage = idx + 1;
        if s == target && stage % 2 == 0 {
            return Ok(Rational::one());
        }
    }
    let v = even_stage_entry_values(game, player)?;
    let parity = h.len() % 2; // parity of the current stage
    Ok(v[h.final_state()][parity].clone())
}

/// Collects stationary discounted optimal mixed actions for `player` along
/// the λ-grid, clusters them per state under the L∞ metric with radius
/// `cluster_tol`, and returns one renormalized centroid per cluster.
pub fn candidate_y(
    game: &StochasticGame,
    player: Player,
    lambda_grid: &[f64],
    cluster_tol: f64,
) -> Result<Vec<Vec<MixedAction>>> {
    if lambda_grid.is_empty() {
        return Err(Error::InvalidParameter("empty lambda grid".into()));
    }
    if cluster_tol <= 0.0 {
        return Err(Error::InvalidParameter("cluster_tol must be > 0".into()));
    }
    let n = game.num_states();
    let mut per_state: Vec<Vec<MixedAction>> = vec![Vec::new(); n];
    for &lambda in lambda_grid {
        let strats = optimal_stationary(game, player, lambda)?;
        for s in 0..n {
            per_state[s].push(strats.action(s).clone());
        }
    }
    let radius = rational_from_f64(cluster_tol);
    let mut out = Vec::with_capacity(n);
    for mixes in per_state {
        // Greedy clustering in grid order keeps the result deterministic.
        let mut clusters: Vec<Vec<MixedAction>> = Vec::new();
        for mix in mixes {
            let mut placed = false;
            for cluster in clusters.iter_mut() {
                if cluster[0].linf_distance(&mix) <= radius {
                    cluster.push(mix.clone());
                    placed = true;
                    break;
                }
            }
            if !placed {
                clusters.push(vec![mix]);
            }
        }
        let reps: Vec<MixedAction> = clusters.into_iter().map(|c| centroid(&c)).collect();
        out.push(reps);
    }
    Ok(out)
}

/// `player`'s own optimal stationary strategy for the λ-discounted proxy:
/// discounted when stage payoffs exist, otherwise the recursive oracle.
fn optimal_stationary(
    game: &StochasticGame,
    player: Player,
    lambda: f64,
) -> Result<StationaryStrategy> {
    let strats = match game.objective(player) {
        Objective::Discounted { .. } | Objective::LongRunAverage { .. } => {
            discounted_value(game, player, lambda, 1e-9)?.1
        }
        Objective::RecursiveAbsorbing { .. } => {
            recursive_value_vector(game, player, &ValueConfig::default())?.1
        }
        o => {
            return Err(Error::ObjectiveData(format!(
                "no stationary discounted proxy for objective {}",
                o.kind()
            )))
        }
    };
    Ok(strats[player.index()].clone())
}

/// Candidate family for both players on the same grid.
pub fn candidate_family(
    game: &StochasticGame,
    lambda_grid: &[f64],
    cluster_tol: f64,
) -> Result<MixedActionSetFamily> {
    let c1 = candidate_y(game, Player::One, lambda_grid, cluster_tol)?;
    let c2 = candidate_y(game, Player::Two, lambda_grid, cluster_tol)?;
    MixedActionSetFamily::new([c1, c2])
}

fn centroid(cluster: &[MixedAction]) -> MixedAction {
    let n = cluster[0].len();
    let k = Rational::from_integer((cluster.len() as i64).into());
    let mut sums = vec![Rational::zero(); n];
    for mix in cluster {
        for (acc, p) in sums.iter_mut().zip(mix.probs()) {
            *acc += p;
        }
    }
    for v in sums.iter_mut() {
        *v /= k.clone();
    }
    MixedAction::new(sums).expect("centroid of distributions is a distribution")
}

/// A state-indexed stand-in for the history-valued payoff lower bounds: a
/// value per state plus the δ at which its one-shot dominance is certified.
#[derive(Debug, Clone)]
pub struct ValueFunctionProxy {
    pub player: Player,
    pub values: Vec<Rational>,
    pub delta: Rational,
}

impl ValueFunctionProxy {
    pub fn from_value_vector(vv: &ValueVector, delta: Rational) -> Self {
        ValueFunctionProxy {
            player: vv.player,
            values: vv.values.clone(),
            delta,
        }
    }

    /// Checks the submartingale-generating property: the one-shot value on
    /// the proxy at each state is at least the proxy value minus δ.
    pub fn validate(&self, game: &StochasticGame, kernel: &TransitionKernel) -> Result<()> {
        for s in 0..game.num_states() {
            if game.is_absorbing(s) {
                continue;
            }
            let (val, _, _) = one_shot_state_value(game, kernel, &self.values, s, self.player)?;
            if val < &self.values[s] - &self.delta {
                return Err(Error::ValueCheck(format!(
                    "proxy not one-shot dominated at state {}",
                    game.state_name(s)
                )));
            }
        }
        Ok(())
    }
}

/// δ-maxmin stationary strategy: at every state the returned mixed action is
/// optimal in the one-shot game on the proxy, so the proxy is a
/// δ-submartingale under it against any opponent action.
pub fn delta_maxmin_strategy(
    game: &StochasticGame,
    player: Player,
    proxy: &ValueFunctionProxy,
) -> Result<StationaryStrategy> {
    proxy.validate(game, &game.kernel)?;
    let n = game.num_states();
    let mut actions = Vec::with_capacity(n);
    for s in 0..n {
        if game.is_absorbing(s) {
            actions.push(MixedAction::pure(game.num_actions(player), 0));
            continue;
        }
        let (_, x1, x2) = one_shot_state_value(game, &game.kernel, &proxy.values, s, player)?;
        actions.push(match player {
            Player::One => x1,
            Player::Two => x2,
        });
    }
    let strategy = StationaryStrategy { player, actions };
    // One-step dominance check at every state and opponent action.
    let opp = player.opponent();
    for s in 0..n {
        if game.is_absorbing(s) {
            continue;
        }
        for a_j in 0..game.num_actions(opp) {
            let opp_pure = MixedAction::pure(game.num_actions(opp), a_j);
            let (x1, x2) = match player {
                Player::One => (strategy.action(s).clone(), opp_pure),
                Player::Two => (opp_pure, strategy.action(s).clone()),
            };
            let got = expected_value(game, &game.kernel, &proxy.values, s, &x1, &x2)?;
            if got < &proxy.values[s] - &proxy.delta {
                return Err(Error::ValueCheck(format!(
                    "delta-maxmin dominance failed at state {}",
                    game.state_name(s)
                )));
            }
        }
    }
    Ok(strategy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::game::parse_rational;

    #[test]
    fn matrix_game_orientation_for_player_two() {
        // Payoffs to player 2; she maximizes over columns.
        let m: Vec<Vec<Rational>> = vec![
            vec![Rational::zero(), Rational::one()],
            vec![Rational::one(), Rational::zero()],
        ];
        let (v, x1, x2) = solve_matrix_game(&m, Player::Two).unwrap();
        assert_eq!(v, parse_rational("1/2").unwrap());
        assert_eq!(x1, MixedAction::uniform(2));
        assert_eq!(x2, MixedAction::uniform(2));
    }

    #[test]
    fn one_shot_on_constant_valuation_is_constant() {
        let game = fixtures::g_loop();
        let h = History::start(0);
        let c = parse_rational("7/3").unwrap();
        let (v, _, _) =
            one_shot_value(&game, &game.kernel, |_, _, _, _| c.clone(), &h, Player::One).unwrap();
        assert_eq!(v, c);
    }

    #[test]
    fn discounted_single_state_equals_stage_payoff() {
        let doc = r#"{
            "states": ["s"],
            "actions": {"p1": ["a"], "p2": ["b"]},
            "kernel": [{"from": "s", "a1": "a", "a2": "b", "to": "s", "prob": "1"}],
            "absorbing": {},
            "objective": {
                "p1": {"type": "discounted", "lambda": "1/2", "payoffs": [
                    {"state": "s", "a1": "a", "a2": "b", "value": "7/2"}
                ]},
                "p2": {"type": "discounted", "lambda": "1/2", "payoffs": []}
            }
        }"#;
        let game = crate::game::load_game(doc).unwrap();
        let (vv, _) = discounted_value(&game, Player::One, 0.5, 1e-10).unwrap();
        assert!((rational_to_f64(vv.get(0)) - 3.5).abs() < 1e-8);
    }

    #[test]
    fn discounted_big_match_value_is_half() {
        let game = fixtures::g_bm();
        for lambda in [0.5, 0.9, 0.99] {
            let (vv, _) = discounted_value(&game, Player::One, lambda, 1e-9).unwrap();
            assert!(
                (rational_to_f64(vv.get(0)) - 0.5).abs() < 1e-7,
                "lambda {lambda} value {}",
                rational_to_f64(vv.get(0))
            );
        }
    }

    #[test]
    fn recursive_values_on_g_abs_are_gamma() {
        let game = fixtures::g_abs();
        let (v1, _) = recursive_value_vector(&game, Player::One, &ValueConfig::default()).unwrap();
        let (v2, _) = recursive_value_vector(&game, Player::Two, &ValueConfig::default()).unwrap();
        assert!(v1.accuracy.is_exact());
        assert_eq!(v1.get(0), &parse_rational("-1").unwrap());
        assert_eq!(v2.get(0), &parse_rational("1").unwrap());
    }

    #[test]
    fn recursive_values_on_g_loop() {
        let game = fixtures::g_loop();
        let (v1, _) = recursive_value_vector(&game, Player::One, &ValueConfig::default()).unwrap();
        let (v2, _) = recursive_value_vector(&game, Player::Two, &ValueConfig::default()).unwrap();
        assert!(v1.accuracy.is_exact());
        assert!(v2.accuracy.is_exact());
        // Player 1 is held at -1 everywhere; player 2 cannot force the joint
        // exit alone, so her maxmin stays at the nonabsorbed default 1.
        assert_eq!(v1.get(0), &parse_rational("-1").unwrap());
        assert_eq!(v1.get(1), &parse_rational("-1").unwrap());
        assert_eq!(v2.get(0), &parse_rational("1").unwrap());
        assert_eq!(v2.get(1), &parse_rational("1").unwrap());
        assert_eq!(v2.get(2), &parse_rational("2").unwrap());
    }

    #[test]
    fn maxmin_rejects_even_stage_objective() {
        let game = fixtures::g_ex1();
        let err = maxmin_values(&game, Player::One, &ValueConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NotShiftInvariant(_)), "{err}");
    }

    #[test]
    fn even_stage_values_match_parity() {
        let game = fixtures::g_ex1();
        let v = even_stage_entry_values(&game, Player::One).unwrap();
        // At state 2 (index 1): worth 1 when the current stage is even.
        assert_eq!(v[1][0], Rational::one());
        assert_eq!(v[1][1], Rational::zero());
        // From state 1 player 1 can always time the drop: value 1 both ways.
        assert_eq!(v[0][0], Rational::one());
        assert_eq!(v[0][1], Rational::one());
    }

    #[test]
    fn even_stage_subgame_values() {
        let game = fixtures::g_ex1();
        // History (1, B, 2): state 2 at stage 2 (even) -> value 1.
        let h = History::new(&game, vec![0, 1], vec![(1, 0)]).unwrap();
        assert_eq!(
            even_stage_entry_subgame_value(&game, Player::One, &h).unwrap(),
            Rational::one()
        );
        // History (1, T, 1, B, 2): state 2 at stage 3 (odd) -> value 0.
        let h = History::new(&game, vec![0, 0, 1], vec![(0, 0), (1, 0)]).unwrap();
        assert_eq!(
            even_stage_entry_subgame_value(&game, Player::One, &h).unwrap(),
            Rational::zero()
        );
    }

    #[test]
    fn candidate_y_constant_strategy_is_singleton() {
        let bm = fixtures::g_bm();
        // Player 2's Big-Match optimum is uniform at every λ.
        let cells = candidate_y(&bm, Player::Two, &[0.5, 0.25, 0.125], 1e-3).unwrap();
        assert_eq!(cells[0].len(), 1);
        let dist = cells[0][0].linf_distance(&MixedAction::uniform(2));
        assert!(rational_to_f64(&dist) < 1e-6);
    }

    #[test]
    fn candidate_y_separates_distinct_optima() {
        let bm = fixtures::g_bm();
        // Player 1's Big-Match T-weight is λ/(1+λ): differs per grid point.
        let cells = candidate_y(&bm, Player::One, &[0.5, 0.25], 1e-6).unwrap();
        assert_eq!(cells[0].len(), 2);
    }

    #[test]
    fn delta_maxmin_on_constant_proxy() {
        let game = fixtures::g_loop();
        let proxy = ValueFunctionProxy {
            player: Player::Two,
            values: vec![Rational::one(), Rational::one(), parse_rational("2").unwrap()],
            delta: parse_rational("1/1000").unwrap(),
        };
        let strat = delta_maxmin_strategy(&game, Player::Two, &proxy).unwrap();
        assert_eq!(strat.actions.len(), 3);
    }

    #[test]
    fn big_match_lra_extrapolation_near_half() {
        let game = fixtures::g_bm();
        let vv = long_run_average_values(&game, Player::One, &ValueConfig::default()).unwrap();
        assert!((rational_to_f64(vv.get(0)) - 0.5).abs() < 1e-3);
    }

    #[test]
    fn buchi_values_on_controlled_cycles() {
        // Player 1 can choose to cycle through the target forever.
        let doc = r#"{
            "states": ["A", "B"],
            "actions": {"p1": ["stay", "go"], "p2": ["w"]},
            "kernel": [
                {"from": "A", "a1": "stay", "a2": "w", "to": "A", "prob": "1"},
                {"from": "A", "a1": "go", "a2": "w", "to": "B", "prob": "1"},
                {"from": "B", "a1": "stay", "a2": "w", "to": "A", "prob": "1"},
                {"from": "B", "a1": "go", "a2": "w", "to": "A", "prob": "1"}
            ],
            "absorbing": {},
            "objective": {
                "p1": {"type": "buchi", "target": ["B"]},
                "p2": {"type": "co_buchi", "avoid": ["B"]}
            }
        }"#;
        let game = crate::game::load_game(doc).unwrap();
        let v1 = maxmin_values(&game, Player::One, &ValueConfig::default()).unwrap();
        assert!((rational_to_f64(v1.get(0)) - 1.0).abs() < 1e-6);
        assert!((rational_to_f64(v1.get(1)) - 1.0).abs() < 1e-6);
        // Player 2 is a dummy: she cannot keep the play away from B, so her
        // co-Büchi value is zero (player 1 adversarially revisits B).
        let v2 = maxmin_values(&game, Player::Two, &ValueConfig::default()).unwrap();
        assert!(rational_to_f64(v2.get(0)).abs() < 1e-6);
    }

    #[test]
    fn buchi_value_zero_when_opponent_blocks() {
        // Player 2 decides whether the target is ever reached.
        let doc = r#"{
            "states": ["A", "B"],
            "actions": {"p1": ["w"], "p2": ["block", "allow"]},
            "kernel": [
                {"from": "A", "a1": "w", "a2": "block", "to": "A", "prob": "1"},
                {"from": "A", "a1": "w", "a2": "allow", "to": "B", "prob": "1"},
                {"from": "B", "a1": "w", "a2": "block", "to": "A", "prob": "1"},
                {"from": "B", "a1": "w", "a2": "allow", "to": "A", "prob": "1"}
            ],
            "absorbing": {},
            "objective": {
                "p1": {"type": "buchi", "target": ["B"]},
                "p2": {"type": "buchi", "target": ["A"]}
            }
        }"#;
        let game = crate::game::load_game(doc).unwrap();
        let v1 = maxmin_values(&game, Player::One, &ValueConfig::default()).unwrap();
        assert!(rational_to_f64(v1.get(0)).abs() < 1e-6);
        // Player 2 always revisits A.
        let v2 = maxmin_values(&game, Player::Two, &ValueConfig::default()).unwrap();
        assert!((rational_to_f64(v2.get(0)) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn maxmin_one_step_inequality_on_corpus() {
        // For exact values: max over own actions of the expected
        // continuation value is at least the current value, against any
        // opponent mixed action.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5150);
        for seed in 0..40u64 {
            let game = fixtures::random_game(seed, &fixtures::RandomGameConfig::default());
            for player in Player::BOTH {
                let (vv, _) = recursive_value_vector(&game, player, &ValueConfig::default())
                    .unwrap();
                if !vv.accuracy.is_exact() {
                    continue;
                }
                let opp = player.opponent();
                let n_opp = game.num_actions(opp);
                let n_own = game.num_actions(player);
                for s in game.nonabsorbing() {
                    for _ in 0..4 {
                        let mut w: Vec<u32> = (0..n_opp).map(|_| rng.gen_range(0..8)).collect();
                        if w.iter().all(|&x| x == 0) {
                            w[0] = 1;
                        }
                        let total: u32 = w.iter().sum();
                        let x_j = MixedAction::new(
                            w.iter().map(|&k| Rational::new(k.into(), total.into())).collect(),
                        )
                        .unwrap();
                        let best = (0..n_own)
                            .map(|a| {
                                let pure = MixedAction::pure(n_own, a);
                                let (x1, x2) = match player {
                                    Player::One => (&pure, &x_j),
                                    Player::Two => (&x_j, &pure),
                                };
                                expected_value(&game, &game.kernel, &vv.values, s, x1, x2)
                                    .unwrap()
                            })
                            .max()
                            .unwrap();
                        assert!(
                            best >= vv.values[s],
                            "one-step maxmin inequality failed at seed {seed}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn candidate_y_guards_continuation_value() {
        // Actions from the candidate family keep the owner's expected
        // continuation value at least her current value, up to the grid and
        // cluster tolerance.
        for seed in 0..30u64 {
            let game = fixtures::random_game(seed, &fixtures::RandomGameConfig::default());
            let grid = [0.5, 0.25, 0.125];
            for player in Player::BOTH {
                let (vv, _) = recursive_value_vector(&game, player, &ValueConfig::default())
                    .unwrap();
                if !vv.accuracy.is_exact() {
                    continue;
                }
                let cells = candidate_y(&game, player, &grid, 1e-3).unwrap();
                let tol = rational_from_f64(2e-3);
                let opp = player.opponent();
                for s in game.nonabsorbing() {
                    for y in &cells[s] {
                        for a in 0..game.num_actions(opp) {
                            let pure = MixedAction::pure(game.num_actions(opp), a);
                            let (x1, x2) = match player {
                                Player::One => (y, &pure),
                                Player::Two => (&pure, y),
                            };
                            let ev =
                                expected_value(&game, &game.kernel, &vv.values, s, x1, x2)
                                    .unwrap();
                            assert!(
                                ev >= &vv.values[s] - &tol,
                                "candidate action lowered the value at seed {seed}"
                            );
                        }
                    }
                }
            }
        }
    }
}
