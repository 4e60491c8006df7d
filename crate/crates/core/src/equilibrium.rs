//! Strategy transformers and the ε-equilibrium assembler: trimmed
//! strategies, the ζ deviation statistic, stopping-time detectors, in-set
//! equilibrium automata, exit-implementation phases, punishment, and the
//! global profile with history compression.

use std::collections::{BTreeMap, BTreeSet};

use num::{One, Signed, Zero};
use serde::Serialize;

use crate::game::{
    rational_from_f64, step_probability_into, ActionId, History, MixedAction,
    MixedActionSetFamily, Objective, Player, StateId, StationaryStrategy, StochasticGame,
};
use crate::recursive::{best_response_recursive, EquilibriumCertificate, RecursiveGame};
use crate::structure::{funnel_to, Decomposition, ExitController, F3Set, Funnel};
use crate::values::{recursive_value_vector, ValueConfig};
use crate::{Error, Rational, Result};

// ---------------------------------------------------------------------------
// Trimmed strategies
// ---------------------------------------------------------------------------

/// Removes, at every state of the set, the actions that leave the set with
/// probability at least `rho` against the opponent's mixed action, and
/// renormalizes. Outside the set the strategies are untouched.
///
/// Fails when a state's entire support would be trimmed.
pub fn trim_strategy(
    game: &StochasticGame,
    set: &BTreeSet<StateId>,
    pair: [&StationaryStrategy; 2],
    rho: &Rational,
) -> Result<([StationaryStrategy; 2], [Vec<BTreeSet<ActionId>>; 2])> {
    if !rho.is_positive() {
        return Err(Error::InvalidParameter("rho must be positive".into()));
    }
    let n = game.num_states();
    let mut trimmed_sets = [vec![BTreeSet::new(); n], vec![BTreeSet::new(); n]];
    let mut out = [pair[0].clone(), pair[1].clone()];
    for player in Player::BOTH {
        let i = player.index();
        let opp = player.opponent();
        for &s in set {
            let mut removed = BTreeSet::new();
            for a in 0..game.num_actions(player) {
                let pure = MixedAction::pure(game.num_actions(player), a);
                let (x1, x2) = match player {
                    Player::One => (&pure, pair[opp.index()].action(s)),
                    Player::Two => (pair[opp.index()].action(s), &pure),
                };
                let stay = step_probability_into(game, &game.kernel, set, s, x1, x2)?;
                let leave = Rational::one() - stay;
                if leave >= *rho {
                    removed.insert(a);
                }
            }
            let source = pair[i].action(s);
            let kept = source.condition_off(&removed).ok_or_else(|| {
                Error::EmptyTrimmedSupport(game.state_name(s).to_string())
            })?;
            out[i].actions[s] = kept;
            trimmed_sets[i][s] = removed;
        }
    }
    Ok((out, trimmed_sets))
}

// ---------------------------------------------------------------------------
// The ζ statistic
// ---------------------------------------------------------------------------

/// One ζ increment: the probability that the monitor's mixed action against
/// the opponent's realized action would have left the set.
pub fn zeta_step(
    game: &StochasticGame,
    set: &BTreeSet<StateId>,
    monitor: Player,
    own_mix: &MixedAction,
    opponent_action: ActionId,
    s: StateId,
) -> Result<Rational> {
    if !set.contains(&s) {
        return Err(Error::NotNonabsorbing(format!(
            "zeta step outside the set at {}",
            game.state_name(s)
        )));
    }
    let opp = monitor.opponent();
    let pure = MixedAction::pure(game.num_actions(opp), opponent_action);
    let (x1, x2) = match monitor {
        Player::One => (own_mix, &pure),
        Player::Two => (&pure, own_mix),
    };
    let stay = step_probability_into(game, &game.kernel, set, s, x1, x2)?;
    Ok(Rational::one() - stay)
}

/// Exhaustive check of the ζ identity: the expectation of the accumulated ζ
/// at the stopping time equals the probability that the set is left within
/// the first θ states. Both sides exact; the stopping time is the horizon
/// `t` truncated by an optional history predicate.
pub fn zeta_expectation_identity(
    game: &StochasticGame,
    set: &BTreeSet<StateId>,
    pair: [&StationaryStrategy; 2],
    monitor: Player,
    start: StateId,
    horizon: usize,
    stop_early: Option<&dyn Fn(&History) -> bool>,
) -> Result<(Rational, Rational)> {
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be positive".into()));
    }
    if !set.contains(&start) {
        return Err(Error::NotNonabsorbing("start outside the set".into()));
    }
    let mut expected_zeta = Rational::zero();
    let mut exit_prob = Rational::zero();

    struct Walk<'a> {
        game: &'a StochasticGame,
        set: &'a BTreeSet<StateId>,
        pair: [&'a StationaryStrategy; 2],
        monitor: Player,
        horizon: usize,
        stop_early: Option<&'a dyn Fn(&History) -> bool>,
    }

    impl Walk<'_> {
        fn go(
            &self,
            h: &History,
            prob: Rational,
            zeta: Rational,
            in_set: bool,
            e_acc: &mut Rational,
            p_acc: &mut Rational,
        ) -> Result<()> {
            let stopped = h.len() >= self.horizon
                || self.stop_early.map(|f| f(h)).unwrap_or(false);
            if stopped {
                *e_acc += &prob * &zeta;
                if !in_set {
                    *p_acc += prob;
                }
                return Ok(());
            }
            let s = h.final_state();
            let x1 = self.pair[0].action(s);
            let x2 = self.pair[1].action(s);
            for a1 in x1.support() {
                for a2 in x2.support() {
                    let w = x1.prob(a1) * x2.prob(a2);
                    let increment = if in_set {
                        let (own, opp_action) = match self.monitor {
                            Player::One => (x1, a2),
                            Player::Two => (x2, a1),
                        };
                        zeta_step(self.game, self.set, self.monitor, own, opp_action, s)?
                    } else {
                        Rational::zero()
                    };
                    let row = self.game.kernel.row(s, a1, a2);
                    for (t, p) in row.iter().enumerate() {
                        if !p.is_positive() {
                            continue;
                        }
                        let h2 = h.extend(self.game, a1, a2, t)?;
                        self.go(
                            &h2,
                            &prob * &w * p,
                            &zeta + &increment,
                            in_set && self.set.contains(&t),
                            e_acc,
                            p_acc,
                        )?;
                    }
                }
            }
            Ok(())
        }
    }

    let walk = Walk {
        game,
        set,
        pair,
        monitor,
        horizon,
        stop_early,
    };
    walk.go(
        &History::start(start),
        Rational::one(),
        Rational::zero(),
        true,
        &mut expected_zeta,
        &mut exit_prob,
    )?;
    if expected_zeta != exit_prob {
        return Err(Error::ValueCheck(format!(
            "zeta identity violated: E={} P={}",
            crate::game::format_rational(&expected_zeta),
            crate::game::format_rational(&exit_prob)
        )));
    }
    Ok((expected_zeta, exit_prob))
}

// ---------------------------------------------------------------------------
// Detectors
// ---------------------------------------------------------------------------

/// ζ accumulators are quantized onto the 2^-32 grid with increments rounded
/// up, so detection can only come earlier and product verification stays on
/// a finite grid.
pub const ZETA_GRID_BITS: u32 = 32;

/// Rounds a rational increment up to grid units.
pub fn zeta_units_ceil(x: &Rational) -> u64 {
    use num::ToPrimitive;
    let scaled = x * Rational::from_integer((1i64 << ZETA_GRID_BITS).into());
    scaled.ceil().to_integer().to_u64().unwrap_or(u64::MAX)
}

/// Which detector fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Trigger {
    /// Zero-probability action observed.
    Theta0,
    /// Payoff-determination test failed.
    Theta1,
    /// Accumulated ζ crossed the threshold.
    Theta2,
}

/// Detector configuration and precomputed tables for a stationary pair on a
/// set.
#[derive(Debug, Clone)]
pub struct DetectorBundle {
    pub set: BTreeSet<StateId>,
    pub sigma: [StationaryStrategy; 2],
    /// Threshold in grid units: θ2 fires strictly above it.
    pub zeta_threshold_units: u64,
    pub mu: Rational,
    pub horizon: usize,
    pub target: [Rational; 2],
    /// θ1 fires on reaching a state where the determination probability
    /// dropped below `1 - mu` (per-state table; stationary play).
    pub theta1_fires_at: Vec<bool>,
}

/// Runtime detector state; updated from public history only.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DetectorState {
    pub zeta_units: [u64; 2],
    pub trigger: Option<(Trigger, Player)>,
    /// Set once the play leaves the monitored set; detectors disarm.
    pub disarmed: bool,
}

impl DetectorState {
    pub fn fresh() -> Self {
        DetectorState {
            zeta_units: [0, 0],
            trigger: None,
            disarmed: false,
        }
    }
}

/// Builds the detector bundle: the θ2 threshold `sqrt(mu)` on the grid and
/// the θ1 per-state determination table at horizon `horizon`.
pub fn make_detectors(
    game: &StochasticGame,
    set: &BTreeSet<StateId>,
    sigma: [&StationaryStrategy; 2],
    mu: &Rational,
    horizon: usize,
    target: [Rational; 2],
) -> Result<DetectorBundle> {
    if horizon == 0 {
        return Err(Error::InvalidParameter("detector horizon must be positive".into()));
    }
    if !mu.is_positive() || *mu >= Rational::one() {
        return Err(Error::InvalidParameter("mu must lie in (0,1)".into()));
    }
    // sqrt(mu) rounded down onto the grid: firing comes earlier, not later.
    let mu_f = crate::game::rational_to_f64(mu);
    let sqrt_mu = mu_f.sqrt();
    let threshold_units = (sqrt_mu * (1u64 << ZETA_GRID_BITS) as f64).floor() as u64;

    let determination = determination_probabilities(game, set, sigma, horizon, &target)?;
    let one_minus_mu = Rational::one() - mu;
    let theta1_fires_at = determination
        .iter()
        .map(|p| p < &one_minus_mu)
        .collect();
    Ok(DetectorBundle {
        set: set.clone(),
        sigma: [sigma[0].clone(), sigma[1].clone()],
        zeta_threshold_units: threshold_units,
        mu: mu.clone(),
        horizon,
        target,
        theta1_fires_at,
    })
}

/// Per state: an upper bound on the probability, under the stationary pair,
/// of staying in the set for `horizon` further stages with the windowed
/// payoff statistic matching the target. Exact per-player dynamic programs;
/// taking the minimum across players errs toward late detection.
fn determination_probabilities(
    game: &StochasticGame,
    set: &BTreeSet<StateId>,
    sigma: [&StationaryStrategy; 2],
    horizon: usize,
    target: &[Rational; 2],
) -> Result<Vec<Rational>> {
    let n = game.num_states();
    // Stay probabilities by remaining horizon.
    let mut stay = vec![Rational::zero(); n];
    for &s in set {
        stay[s] = Rational::one();
    }
    let step_rows: Vec<Option<Vec<Rational>>> = (0..n)
        .map(|s| {
            if set.contains(&s) {
                Some(
                    crate::game::step_distribution(
                        game,
                        &game.kernel,
                        s,
                        sigma[0].action(s),
                        sigma[1].action(s),
                    )
                    .expect("step distribution"),
                )
            } else {
                None
            }
        })
        .collect();
    for _ in 0..horizon {
        let mut next = vec![Rational::zero(); n];
        for &s in set {
            let row = step_rows[s].as_ref().unwrap();
            next[s] = set.iter().map(|&t| &row[t] * &stay[t]).sum();
        }
        stay = next;
    }

    let mut bound = stay.clone();
    for player in Player::BOTH {
        let matched = match game.objective(player) {
            Objective::RecursiveAbsorbing { default } => {
                // Staying in the (nonabsorbing) set realizes the default.
                if &target[player.index()] == default {
                    None // no extra constraint beyond staying
                } else {
                    Some(vec![Rational::zero(); n]) // unreachable target
                }
            }
            Objective::LongRunAverage { .. } => Some(lra_match_probability(
                game,
                set,
                sigma,
                horizon,
                player,
                &target[player.index()],
            )?),
            Objective::Buchi { target: t, win, .. } => Some(buchi_match_probability(
                game,
                set,
                sigma,
                horizon,
                t,
                &target[player.index()] == win,
            )?),
            _ => None,
        };
        if let Some(m) = matched {
            for s in 0..n {
                if m[s] < bound[s] {
                    bound[s] = m[s].clone();
                }
            }
        }
    }
    Ok(bound)
}

/// P(stay for the window and the window average of the player's stage
/// payoffs equals the target), by a dynamic program over (state, sum).
fn lra_match_probability(
    game: &StochasticGame,
    set: &BTreeSet<StateId>,
    sigma: [&StationaryStrategy; 2],
    horizon: usize,
    player: Player,
    target: &Rational,
) -> Result<Vec<Rational>> {
    let payoffs = game
        .objective(player)
        .stage_payoffs()
        .ok_or_else(|| Error::ObjectiveData("stage payoffs required".into()))?;
    let n = game.num_states();
    let goal = target * Rational::from_integer((horizon as i64).into());
    // Backward DP: f_k(s, acc) = P(stay k more stages, final sum acc' = goal).
    type Layer = BTreeMap<(StateId, Rational), Rational>;
    let mut layer: Layer = BTreeMap::new();
    for &s in set {
        layer.insert((s, goal.clone()), Rational::one());
    }
    for _ in 0..horizon {
        let mut next: Layer = BTreeMap::new();
        for &s in set {
            let x1 = sigma[0].action(s);
            let x2 = sigma[1].action(s);
            for a1 in x1.support() {
                for a2 in x2.support() {
                    let w = x1.prob(a1) * x2.prob(a2);
                    let g = payoffs.get(s, a1, a2);
                    let row = game.kernel.row(s, a1, a2);
                    for (t, p) in row.iter().enumerate() {
                        if !p.is_positive() || !set.contains(&t) {
                            continue;
                        }
                        // Entries reachable forward would explode; key the
                        // DP on "remaining sum needed".
                        for ((ts, rem), prob) in layer.iter() {
                            if *ts != t {
                                continue;
                            }
                            let need = rem - g;
                            let entry = next
                                .entry((s, need.clone()))
                                .or_insert_with(Rational::zero);
                            *entry += &w * p * prob;
                        }
                    }
                }
            }
        }
        if next.len() > 200_000 {
            return Err(Error::NoConvergence(
                "windowed-average DP exceeded its size cap".into(),
            ));
        }
        layer = next;
    }
    let mut out = vec![Rational::zero(); n];
    for ((s, rem), prob) in layer {
        if rem.is_zero() {
            out[s] += prob;
        }
    }
    Ok(out)
}

/// P(stay for the window and the visit indicator of the target set matches).
fn buchi_match_probability(
    game: &StochasticGame,
    set: &BTreeSet<StateId>,
    sigma: [&StationaryStrategy; 2],
    horizon: usize,
    target: &BTreeSet<StateId>,
    must_visit: bool,
) -> Result<Vec<Rational>> {
    let n = game.num_states();
    // DP over (state, visited-flag), backward over the window.
    let mut f = vec![[Rational::zero(), Rational::zero()]; n];
    for &s in set {
        // At the end of the window: match iff visited == must_visit.
        f[s] = [
            if !must_visit { Rational::one() } else { Rational::zero() },
            if must_visit { Rational::one() } else { Rational::zero() },
        ];
    }
    for _ in 0..horizon {
        let mut next = vec![[Rational::zero(), Rational::zero()]; n];
        for &s in set {
            let row = crate::game::step_distribution(
                game,
                &game.kernel,
                s,
                sigma[0].action(s),
                sigma[1].action(s),
            )?;
            for visited in 0..2 {
                let mut acc = Rational::zero();
                for (t, p) in row.iter().enumerate() {
                    if !p.is_positive() || !set.contains(&t) {
                        continue;
                    }
                    let v2 = if visited == 1 || target.contains(&t) { 1 } else { 0 };
                    acc += p * &f[t][v2];
                }
                next[s][visited] = acc;
            }
        }
        f = next;
    }
    Ok((0..n)
        .map(|s| {
            let visited0 = if target.contains(&s) { 1 } else { 0 };
            f[s][visited0].clone()
        })
        .collect())
}

/// Advances a detector state on one observed stage: `s` is the state where
/// the actions were played, `next` the state reached.
pub fn detector_step(
    game: &StochasticGame,
    bundle: &DetectorBundle,
    state: &DetectorState,
    s: StateId,
    a1: ActionId,
    a2: ActionId,
    next: StateId,
) -> Result<DetectorState> {
    let mut st = state.clone();
    if st.disarmed || st.trigger.is_some() {
        return Ok(st);
    }
    if !bundle.set.contains(&s) {
        st.disarmed = true;
        return Ok(st);
    }
    // θ0: zero-probability action.
    for player in Player::BOTH {
        let (mix, action) = match player {
            Player::One => (bundle.sigma[0].action(s), a1),
            Player::Two => (bundle.sigma[1].action(s), a2),
        };
        if !mix.prob(action).is_positive() {
            st.trigger = Some((Trigger::Theta0, player));
            return Ok(st);
        }
    }
    // θ2: quantized ζ per monitor; the offender is the monitored opponent.
    for monitor in Player::BOTH {
        let (own, opp_action) = match monitor {
            Player::One => (bundle.sigma[0].action(s), a2),
            Player::Two => (bundle.sigma[1].action(s), a1),
        };
        let inc = zeta_step(game, &bundle.set, monitor, own, opp_action, s)?;
        let units = zeta_units_ceil(&inc);
        let idx = monitor.index();
        st.zeta_units[idx] = st.zeta_units[idx].saturating_add(units);
        if st.zeta_units[idx] > bundle.zeta_threshold_units {
            st.trigger = Some((Trigger::Theta2, monitor.opponent()));
            return Ok(st);
        }
    }
    // Location update and θ1 on arrival.
    if !bundle.set.contains(&next) {
        st.disarmed = true;
        return Ok(st);
    }
    if bundle.theta1_fires_at[next] {
        st.trigger = Some((Trigger::Theta1, Player::One));
        // θ1 is symmetric; the offender attribution is nominal since both
        // players switch to mutual punishment.
    }
    Ok(st)
}

// ---------------------------------------------------------------------------
// Punishment
// ---------------------------------------------------------------------------

/// Stationary strategy of the punisher holding the punished player near her
/// maxmin value, with a certified guarantee bound when the objective allows
/// an exact best-response solve.
///
/// Candidate punishers come from the fixed-point matrix solves, the first
/// value-iteration sweep, and small-discount proxies; each is certified by
/// the punished player's exact best response. The fixed-point candidate
/// alone can be unsound: at the fixed point, "staying" ties with real
/// punishment in the self-referential accounting without ever realizing it.
pub fn punishment_strategy(
    game: &StochasticGame,
    punished: Player,
    delta: f64,
) -> Result<(StationaryStrategy, Option<Rational>)> {
    let punisher = punished.opponent();
    match game.objective(punished) {
        Objective::RecursiveAbsorbing { default } => {
            let config = ValueConfig::default();
            let (vv, strats) = recursive_value_vector(game, punished, &config)?;
            let aux = RecursiveGame {
                game: shift_default_to_zero(game, punished, default.clone()),
                dummy: BTreeSet::new(),
            };
            let mut candidates: Vec<StationaryStrategy> =
                vec![strats[punisher.index()].clone()];
            candidates.extend(first_sweep_minimizer(game, punished)?);
            for lambda in [1.0 / 16.0, 1.0 / 128.0, 1.0 / 1024.0] {
                candidates.push(discounted_punisher(&aux, punished, lambda)?);
            }
            let tol = rational_from_f64(delta);
            let mut last_failure = String::new();
            for strategy in candidates {
                let (br, _) = best_response_recursive(&aux, &strategy, punished)?;
                let mut worst = Rational::zero();
                let mut ok = true;
                for s in game.nonabsorbing() {
                    let achieved = &br[s] + default;
                    let bound = &vv.values[s] + &tol;
                    let slack = &achieved - &bound;
                    if slack > worst {
                        worst = slack.clone();
                    }
                    if achieved > &bound + &vv.accuracy.margin(1e-9) {
                        ok = false;
                        last_failure = format!(
                            "best response {} > {} at {}",
                            crate::game::rational_to_f64(&achieved),
                            crate::game::rational_to_f64(&bound),
                            game.state_name(s),
                        );
                        break;
                    }
                }
                if ok {
                    return Ok((strategy, Some(worst)));
                }
            }
            Err(Error::ValueCheck(format!(
                "punishment guarantee failed: {last_failure}"
            )))
        }
        Objective::Discounted { lambda, .. } => {
            let l = crate::game::rational_to_f64(lambda);
            let (_, strats) = crate::values::discounted_value(game, punished, l, delta)?;
            Ok((strats[punisher.index()].clone(), None))
        }
        Objective::LongRunAverage { .. } => {
            // Discounted proxy at a small discount.
            let (_, strats) = crate::values::discounted_value(game, punished, 1e-3, delta)?;
            Ok((strats[punisher.index()].clone(), None))
        }
        o => Err(Error::ValueOracle(format!(
            "no punishment oracle for objective {}",
            o.kind()
        ))),
    }
}

/// Same game with the punished player's recursive default shifted to zero,
/// so the terminal-reward solvers apply.
fn shift_default_to_zero(
    game: &StochasticGame,
    player: Player,
    default: Rational,
) -> StochasticGame {
    let mut g = game.clone();
    g.objectives[player.index()] = Objective::RecursiveAbsorbing {
        default: Rational::zero(),
    };
    for pair in g.gamma.values_mut() {
        pair[player.index()] = &pair[player.index()] - &default;
    }
    g
}

/// The opponent's minimizing mixed actions from the first value-iteration
/// sweep (continuation pinned at the punished player's default): ties are
/// not yet masked by the fixed point there.
fn first_sweep_minimizer(
    game: &StochasticGame,
    punished: Player,
) -> Result<Option<StationaryStrategy>> {
    let Objective::RecursiveAbsorbing { default } = game.objective(punished) else {
        return Ok(None);
    };
    let punisher = punished.opponent();
    let n = game.num_states();
    let init: Vec<Rational> = (0..n)
        .map(|s| {
            if game.is_absorbing(s) {
                game.gamma_of(punished, s).clone()
            } else {
                default.clone()
            }
        })
        .collect();
    let mut actions = Vec::with_capacity(n);
    for s in 0..n {
        if game.is_absorbing(s) {
            actions.push(MixedAction::pure(game.num_actions(punisher), 0));
            continue;
        }
        let (_, x1, x2) =
            crate::values::one_shot_state_value(game, &game.kernel, &init, s, punished)?;
        actions.push(match punisher {
            Player::One => x1,
            Player::Two => x2,
        });
    }
    Ok(Some(StationaryStrategy {
        player: punisher,
        actions,
    }))
}

/// The opponent's optimal stationary strategy in the λ-discounted zero-sum
/// version of the shifted recursive game: small discounts break stay-forever
/// ties toward actual absorption.
fn discounted_punisher(
    aux: &RecursiveGame,
    punished: Player,
    lambda: f64,
) -> Result<StationaryStrategy> {
    let game = &aux.game;
    let punisher = punished.opponent();
    let n = game.num_states();
    let gamma: Vec<f64> = (0..n)
        .map(|s| {
            if game.is_absorbing(s) {
                crate::game::rational_to_f64(game.gamma_of(punished, s))
            } else {
                0.0
            }
        })
        .collect();
    let mut v = gamma.clone();
    for _ in 0..20_000 {
        let mut delta: f64 = 0.0;
        let mut next = v.clone();
        for s in 0..n {
            if game.is_absorbing(s) {
                continue;
            }
            let matrix: Vec<Vec<Rational>> = (0..game.num_actions(Player::One))
                .map(|a1| {
                    (0..game.num_actions(Player::Two))
                        .map(|a2| {
                            let cont: f64 = game
                                .kernel
                                .row(s, a1, a2)
                                .iter()
                                .zip(&v)
                                .map(|(p, vv)| crate::game::rational_to_f64(p) * vv)
                                .sum();
                            crate::values::quantize((1.0 - lambda) * cont)
                        })
                        .collect()
                })
                .collect();
            let (val, _, _) = crate::values::solve_matrix_game(&matrix, punished)?;
            next[s] = crate::game::rational_to_f64(&val);
            delta = delta.max((next[s] - v[s]).abs());
        }
        v = next;
        if delta < 1e-12 {
            break;
        }
    }
    let mut actions = Vec::with_capacity(n);
    for s in 0..n {
        if game.is_absorbing(s) {
            actions.push(MixedAction::pure(game.num_actions(punisher), 0));
            continue;
        }
        let matrix: Vec<Vec<Rational>> = (0..game.num_actions(Player::One))
            .map(|a1| {
                (0..game.num_actions(Player::Two))
                    .map(|a2| {
                        let cont: f64 = game
                            .kernel
                            .row(s, a1, a2)
                            .iter()
                            .zip(&v)
                            .map(|(p, vv)| crate::game::rational_to_f64(p) * vv)
                            .sum();
                        crate::values::quantize((1.0 - lambda) * cont)
                    })
                    .collect()
            })
            .collect();
        let (_, x1, x2) = crate::values::solve_matrix_game(&matrix, punished)?;
        actions.push(match punisher {
            Player::One => x1,
            Player::Two => x2,
        });
    }
    Ok(StationaryStrategy {
        player: punisher,
        actions,
    })
}

// ---------------------------------------------------------------------------
// In-set equilibrium automaton
// ---------------------------------------------------------------------------

/// The strategy pair of the in-set construction: follow the stationary pair,
/// run the detectors, and on a trigger switch to mutual punishment.
#[derive(Debug, Clone)]
pub struct InSetProfile {
    pub set: BTreeSet<StateId>,
    pub sigma: [StationaryStrategy; 2],
    pub punish: [StationaryStrategy; 2],
    pub detectors: DetectorBundle,
    pub claimed_epsilon: f64,
}

/// Phase of the in-set automaton.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum InSetPhase {
    Playing(DetectorState),
    Punishing(Trigger),
    /// The play left the set; detectors disarmed, stationary play continues.
    Exited,
}

impl InSetProfile {
    pub fn initial_phase(&self, s: StateId) -> InSetPhase {
        if self.set.contains(&s) {
            let st = DetectorState::fresh();
            if self.detectors.theta1_fires_at[s] {
                // Determination already hopeless at the entry state.
                return InSetPhase::Punishing(Trigger::Theta1);
            }
            InSetPhase::Playing(st)
        } else {
            InSetPhase::Exited
        }
    }

    pub fn prescribed(&self, phase: &InSetPhase, s: StateId) -> [MixedAction; 2] {
        match phase {
            InSetPhase::Playing(_) | InSetPhase::Exited => {
                [self.sigma[0].action(s).clone(), self.sigma[1].action(s).clone()]
            }
            InSetPhase::Punishing(_) => {
                [self.punish[0].action(s).clone(), self.punish[1].action(s).clone()]
            }
        }
    }

    pub fn step_phase(
        &self,
        game: &StochasticGame,
        phase: &InSetPhase,
        s: StateId,
        a1: ActionId,
        a2: ActionId,
        next: StateId,
    ) -> Result<InSetPhase> {
        Ok(match phase {
            InSetPhase::Punishing(t) => InSetPhase::Punishing(*t),
            InSetPhase::Exited => InSetPhase::Exited,
            InSetPhase::Playing(st) => {
                let st2 = detector_step(game, &self.detectors, st, s, a1, a2, next)?;
                if let Some((t, _)) = st2.trigger {
                    InSetPhase::Punishing(t)
                } else if st2.disarmed {
                    InSetPhase::Exited
                } else {
                    InSetPhase::Playing(st2)
                }
            }
        })
    }
}

/// Builds the in-set equilibrium automaton pair around a stationary pair on
/// a set, with detectors at level `mu` and punishment at the opponents'
/// maxmin values. The claimed ε is recorded for downstream verification,
/// not asserted here.
pub fn in_set_equilibrium(
    game: &StochasticGame,
    set: &BTreeSet<StateId>,
    sigma: [&StationaryStrategy; 2],
    target: [Rational; 2],
    mu: &Rational,
    horizon: usize,
    claimed_epsilon: f64,
) -> Result<InSetProfile> {
    let detectors = make_detectors(game, set, sigma, mu, horizon, target)?;
    let (p1, _) = punishment_strategy(game, Player::Two, 1e-6)?;
    let (p2, _) = punishment_strategy(game, Player::One, 1e-6)?;
    Ok(InSetProfile {
        set: set.clone(),
        sigma: [sigma[0].clone(), sigma[1].clone()],
        punish: [p2, p1],
        detectors,
        claimed_epsilon,
    })
}

// ---------------------------------------------------------------------------
// Global assembly
// ---------------------------------------------------------------------------

/// One scheduled joint-exit attempt.
#[derive(Debug, Clone)]
pub struct JointAttempt {
    pub state: StateId,
    pub a1: ActionId,
    pub a2: ActionId,
    pub base: (MixedAction, MixedAction),
    /// Per-player per-visit attempt probabilities; the product is
    /// proportional to the mixture weight of this exit.
    pub flip: [Rational; 2],
    /// Funnel steering the play to `state`.
    pub funnel: BTreeMap<StateId, (MixedAction, MixedAction)>,
}

/// How one set of the third family is exited in the real game.
#[derive(Debug, Clone)]
pub enum PlanKind {
    /// Player 2's unilateral exit at `state`.
    UnilateralTwo {
        state: StateId,
        x1: MixedAction,
        x2: MixedAction,
        funnel: BTreeMap<StateId, (MixedAction, MixedAction)>,
    },
    /// Cycle over scheduled joint attempts.
    Joint { schedule: Vec<JointAttempt> },
    /// Player 1's unilateral exit at `state` (second-family sets); inner
    /// first-family sets run their own plans while the play crosses them.
    UnilateralOne {
        state: StateId,
        exit_mix: MixedAction,
        y2: MixedAction,
        funnel: BTreeMap<StateId, (MixedAction, MixedAction)>,
        nested: Vec<ExitPlan>,
    },
}

/// The exit plan of one third-family set.
#[derive(Debug, Clone)]
pub struct ExitPlan {
    pub set: BTreeSet<StateId>,
    pub kind: PlanKind,
}

/// Phase of the assembled automaton pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    FollowAux,
    Exit {
        plan: usize,
        /// Joint-exit schedule position.
        step: usize,
        /// Quantized ζ accumulators scoped to the current segment.
        zeta: [u64; 2],
    },
    Punish(Trigger),
    Absorbed,
}

/// The assembled strategy pair: a shared deterministic memory over public
/// history plus per-player action rules.
#[derive(Debug, Clone)]
pub struct AssembledProfile {
    pub plans: Vec<ExitPlan>,
    /// State -> index of the plan owning it.
    pub state_plan: Vec<Option<usize>>,
    pub sigma_r: [StationaryStrategy; 2],
    pub punish: [StationaryStrategy; 2],
    pub zeta_threshold_units: u64,
    pub epsilon: f64,
    pub uncertified: bool,
    /// Mutation toggle for verification tests: when false, detectors never
    /// switch the play to punishment.
    pub punishment_enabled: bool,
}

fn realize_funnel(
    family: &MixedActionSetFamily,
    funnel: &Funnel,
    n1: usize,
    n2: usize,
) -> BTreeMap<StateId, (MixedAction, MixedAction)> {
    funnel
        .iter()
        .map(|(&s, product)| (s, product.realize(family, s, n1, n2)))
        .collect()
}

/// Assembles the global profile: follow the auxiliary equilibrium outside
/// the third family, run exit plans inside it, punish on detected
/// deviations, and restart the auxiliary play after each completed segment
/// (the deleted-history compression).
pub fn assemble_global(
    game: &StochasticGame,
    decomposition: &Decomposition,
    family: &MixedActionSetFamily,
    certificate: &EquilibriumCertificate,
    epsilon: f64,
    mu: &Rational,
) -> Result<AssembledProfile> {
    let n1 = game.num_actions(Player::One);
    let n2 = game.num_actions(Player::Two);
    let mut plans = Vec::new();

    let f1_plan = |c: &crate::structure::F1Set| -> Result<ExitPlan> {
        let kind = match &c.controller {
            ExitController::PlayerTwo(exit) => {
                let funnel = funnel_to(
                    game,
                    &game.kernel,
                    &c.states,
                    family,
                    exit.state,
                    1 << 16,
                )
                .ok_or_else(|| Error::NotCommunicating(format!(
                    "no funnel to the exit state in {:?}",
                    game.state_names(&c.states)
                )))?;
                PlanKind::UnilateralTwo {
                    state: exit.state,
                    x1: exit.opponent_mix.clone(),
                    x2: MixedAction::pure(n2, exit.action),
                    funnel: realize_funnel(family, &funnel, n1, n2),
                }
            }
            ExitController::Joint(mix) => {
                let max_w = mix
                    .iter()
                    .map(|(_, w)| w.clone())
                    .max()
                    .ok_or_else(|| Error::ValueCheck("empty joint mixture".into()))?;
                let quarter = Rational::new(1.into(), 4.into());
                let mut schedule = Vec::new();
                for (exit, w) in mix {
                    let funnel = funnel_to(
                        game,
                        &game.kernel,
                        &c.states,
                        family,
                        exit.state,
                        1 << 16,
                    )
                    .ok_or_else(|| Error::NotCommunicating(format!(
                        "no funnel to a joint exit state in {:?}",
                        game.state_names(&c.states)
                    )))?;
                    schedule.push(JointAttempt {
                        state: exit.state,
                        a1: exit.a1,
                        a2: exit.a2,
                        base: exit.witness.clone(),
                        flip: [&quarter * w / &max_w, quarter.clone()],
                        funnel: realize_funnel(family, &funnel, n1, n2),
                    });
                }
                PlanKind::Joint { schedule }
            }
        };
        Ok(ExitPlan {
            set: c.states.clone(),
            kind,
        })
    };

    for entry in &decomposition.f3 {
        match entry {
            F3Set::FromF1(c) => plans.push(f1_plan(c)?),
            F3Set::FromF2(d) => {
                // Inner first-family sets inside this second-family set.
                let mut nested = Vec::new();
                for c in &decomposition.f1 {
                    if c.states.is_subset(&d.states) {
                        // The inner exit distribution must stay inside the set.
                        for (t, p) in c.q.iter().enumerate() {
                            if p.is_positive() && !d.states.contains(&t) {
                                return Err(Error::ValueCheck(format!(
                                    "inner exit of {:?} leaves its host set",
                                    game.state_names(&c.states)
                                )));
                            }
                        }
                        nested.push(f1_plan(c)?);
                    }
                }
                // Restricted family for realizing the funnel mixes.
                let mut cells1: Vec<Vec<MixedAction>> = (0..game.num_states())
                    .map(|s| family.cell(Player::One, s).to_vec())
                    .collect();
                for (&s, cell) in &d.y1d {
                    cells1[s] = cell.clone();
                }
                let restricted = family.with_player_cells(Player::One, cells1);
                let half = Rational::new(1.into(), 2.into());
                let exit_pure = MixedAction::pure(n1, d.exit.action);
                let exit_mix = decomposition.z1.action(d.exit.state).mix(&exit_pure, &half);
                plans.push(ExitPlan {
                    set: d.states.clone(),
                    kind: PlanKind::UnilateralOne {
                        state: d.exit.state,
                        exit_mix,
                        y2: d.exit.opponent_mix.clone(),
                        funnel: realize_funnel(&restricted, &d.funnel, n1, n2),
                        nested,
                    },
                });
            }
        }
    }

    let mut state_plan = vec![None; game.num_states()];
    for (k, plan) in plans.iter().enumerate() {
        for &s in &plan.set {
            state_plan[s] = Some(k);
        }
    }

    let (p_of_two, _) = punishment_strategy(game, Player::Two, 1e-6)?;
    let (p_of_one, _) = punishment_strategy(game, Player::One, 1e-6)?;

    let mu_f = crate::game::rational_to_f64(mu);
    let threshold_units = (mu_f.sqrt() * (1u64 << ZETA_GRID_BITS) as f64).floor() as u64;

    Ok(AssembledProfile {
        plans,
        state_plan,
        sigma_r: certificate.strategies.clone(),
        punish: [p_of_two, p_of_one],
        zeta_threshold_units: threshold_units,
        epsilon,
        uncertified: !certificate.certified,
        punishment_enabled: true,
    })
}

impl AssembledProfile {
    pub fn disable_punishment(&mut self) {
        self.punishment_enabled = false;
    }

    /// Corrupts the first plan's exit for mutation tests: player 2's exit
    /// action is replaced by the lexicographically first other action.
    pub fn corrupt_exit(&mut self, game: &StochasticGame) {
        for plan in self.plans.iter_mut() {
            match &mut plan.kind {
                PlanKind::UnilateralTwo { x2, .. } => {
                    let n2 = game.num_actions(Player::Two);
                    let current = x2.support()[0];
                    let other = (0..n2).find(|&a| a != current).unwrap_or(current);
                    *x2 = MixedAction::pure(n2, other);
                    return;
                }
                PlanKind::Joint { schedule } => {
                    if let Some(att) = schedule.first_mut() {
                        let n2 = game.num_actions(Player::Two);
                        att.a2 = (0..n2).find(|a| *a != att.a2).unwrap_or(att.a2);
                    }
                    return;
                }
                PlanKind::UnilateralOne { exit_mix, .. } => {
                    let n1 = exit_mix.len();
                    // Drop the exit component: play the pure funnel base.
                    let support = exit_mix.support();
                    if let Some(&first) = support.first() {
                        *exit_mix = MixedAction::pure(n1, first);
                    }
                    return;
                }
            }
        }
    }

    pub fn initial_phase(&self, s: StateId) -> Phase {
        match self.state_plan[s] {
            Some(k) => Phase::Exit {
                plan: k,
                step: 0,
                zeta: [0, 0],
            },
            None => Phase::FollowAux,
        }
    }

    /// The designated attempt state of a plan at a schedule position.
    fn attempt_state(plan: &ExitPlan, step: usize) -> Option<StateId> {
        match &plan.kind {
            PlanKind::UnilateralTwo { state, .. } => Some(*state),
            PlanKind::Joint { schedule } => Some(schedule[step % schedule.len()].state),
            PlanKind::UnilateralOne { state, .. } => Some(*state),
        }
    }

    /// Schedule length of a plan; the step index wraps modulo this, keeping
    /// the memory finite.
    fn schedule_len(plan: &ExitPlan) -> usize {
        match &plan.kind {
            PlanKind::Joint { schedule } => schedule.len(),
            _ => 1,
        }
    }

    fn plan_prescribed(
        &self,
        plan: &ExitPlan,
        step: usize,
        s: StateId,
    ) -> Option<[MixedAction; 2]> {
        match &plan.kind {
            PlanKind::UnilateralTwo {
                state,
                x1,
                x2,
                funnel,
            } => {
                if s == *state {
                    Some([x1.clone(), x2.clone()])
                } else {
                    funnel.get(&s).map(|(m1, m2)| [m1.clone(), m2.clone()])
                }
            }
            PlanKind::Joint { schedule } => {
                let att = &schedule[step % schedule.len()];
                if s == att.state {
                    let p1 = MixedAction::pure(att.base.0.len(), att.a1);
                    let p2 = MixedAction::pure(att.base.1.len(), att.a2);
                    Some([
                        att.base.0.mix(&p1, &att.flip[0]),
                        att.base.1.mix(&p2, &att.flip[1]),
                    ])
                } else {
                    att.funnel.get(&s).map(|(m1, m2)| [m1.clone(), m2.clone()])
                }
            }
            PlanKind::UnilateralOne {
                state,
                exit_mix,
                y2,
                funnel,
                nested,
            } => {
                for inner in nested {
                    if inner.set.contains(&s) {
                        return self.plan_prescribed(inner, 0, s);
                    }
                }
                if s == *state {
                    Some([exit_mix.clone(), y2.clone()])
                } else {
                    funnel.get(&s).map(|(m1, m2)| [m1.clone(), m2.clone()])
                }
            }
        }
    }

    /// Action rule: the mixed action pair prescribed at `(phase, s)`.
    pub fn prescribed(&self, phase: &Phase, s: StateId) -> Result<[MixedAction; 2]> {
        match phase {
            Phase::Absorbed => Ok(default_pair(&self.sigma_r)),
            Phase::Punish(_) => Ok([
                self.punish[0].action(s).clone(),
                self.punish[1].action(s).clone(),
            ]),
            Phase::FollowAux => Ok([
                self.sigma_r[0].action(s).clone(),
                self.sigma_r[1].action(s).clone(),
            ]),
            Phase::Exit { plan, step, .. } => {
                self.plan_prescribed(&self.plans[*plan], *step, s).ok_or_else(|| {
                    Error::Dimension(format!("no prescription at state index {s} in exit plan"))
                })
            }
        }
    }

    /// Phase update from one observed stage. Deterministic in the public
    /// history; both players run it identically.
    pub fn step_phase(
        &self,
        game: &StochasticGame,
        phase: &Phase,
        s: StateId,
        a1: ActionId,
        a2: ActionId,
        next: StateId,
    ) -> Result<Phase> {
        let landing = |next: StateId| -> Phase {
            if game.is_absorbing(next) {
                Phase::Absorbed
            } else {
                match self.state_plan[next] {
                    Some(k) => Phase::Exit {
                        plan: k,
                        step: 0,
                        zeta: [0, 0],
                    },
                    None => Phase::FollowAux,
                }
            }
        };
        Ok(match phase {
            Phase::Absorbed => Phase::Absorbed,
            Phase::Punish(t) => Phase::Punish(*t),
            Phase::FollowAux => {
                // Support test against the auxiliary strategies.
                if self.punishment_enabled {
                    for player in Player::BOTH {
                        let (mix, action) = match player {
                            Player::One => (self.sigma_r[0].action(s), a1),
                            Player::Two => (self.sigma_r[1].action(s), a2),
                        };
                        if !mix.prob(action).is_positive() {
                            return Ok(Phase::Punish(Trigger::Theta0));
                        }
                    }
                }
                landing(next)
            }
            Phase::Exit { plan, step, zeta } => {
                let p = &self.plans[*plan];
                let prescribed = self
                    .plan_prescribed(p, *step, s)
                    .ok_or_else(|| Error::Dimension("exit plan prescription".into()))?;
                if self.punishment_enabled
                    && (!prescribed[0].prob(a1).is_positive()
                        || !prescribed[1].prob(a2).is_positive())
                {
                    return Ok(Phase::Punish(Trigger::Theta0));
                }
                // ζ scoped to the segment, exempting the sanctioned attempt
                // state of the current sub-plan.
                let attempt = current_attempt_state(p, *step, s);
                let mut z = *zeta;
                if attempt != Some(s) {
                    for monitor in Player::BOTH {
                        let (own, opp_action) = match monitor {
                            Player::One => (&prescribed[0], a2),
                            Player::Two => (&prescribed[1], a1),
                        };
                        let inc = zeta_step(game, &p.set, monitor, own, opp_action, s)?;
                        let units = zeta_units_ceil(&inc);
                        let idx = monitor.index();
                        // Saturate just past the threshold so the memory
                        // stays finite even with punishment disabled.
                        z[idx] = z[idx]
                            .saturating_add(units)
                            .min(self.zeta_threshold_units + 1);
                        if self.punishment_enabled && z[idx] > self.zeta_threshold_units {
                            return Ok(Phase::Punish(Trigger::Theta2));
                        }
                    }
                }
                if !p.set.contains(&next) {
                    // Segment complete: the memory of it is dropped.
                    landing(next)
                } else {
                    let advanced = if Self::attempt_state(p, *step) == Some(s) {
                        (step + 1) % Self::schedule_len(p)
                    } else {
                        *step
                    };
                    Phase::Exit {
                        plan: *plan,
                        step: advanced,
                        zeta: z,
                    }
                }
            }
        })
    }
}

/// The attempt state considering nested plans: when `s` sits inside a nested
/// first-family set, the nested plan's designated state is the sanctioned one.
fn current_attempt_state(plan: &ExitPlan, step: usize, s: StateId) -> Option<StateId> {
    if let PlanKind::UnilateralOne { nested, .. } = &plan.kind {
        for inner in nested {
            if inner.set.contains(&s) {
                return AssembledProfile::attempt_state(inner, 0);
            }
        }
    }
    AssembledProfile::attempt_state(plan, step)
}

fn default_pair(sigma: &[StationaryStrategy; 2]) -> [MixedAction; 2] {
    [
        MixedAction::pure(sigma[0].actions[0].len(), 0),
        MixedAction::pure(sigma[1].actions[0].len(), 0),
    ]
}

// ---------------------------------------------------------------------------
// History compression
// ---------------------------------------------------------------------------

/// Removes the completed exit segments from a history: stages spent inside
/// third-family sets collapse into the single transition out of them, which
/// matches a positive transition of the rewritten kernel.
pub fn compress_history(
    game: &StochasticGame,
    decomposition: &Decomposition,
    h: &History,
) -> Result<Vec<StateId>> {
    let f3 = decomposition.f3_states();
    let mut out: Vec<StateId> = Vec::new();
    let states = h.states();
    let mut idx = 0;
    while idx < states.len() {
        let s = states[idx];
        out.push(s);
        if f3.contains(&s) {
            // Skip to the first state outside the segment's set.
            let set = decomposition
                .f3
                .iter()
                .find(|e| e.states().contains(&s))
                .expect("state in F3")
                .states();
            let mut j = idx + 1;
            while j < states.len() && set.contains(&states[j]) {
                j += 1;
            }
            if j < states.len() {
                // The compressed transition must be possible under p_tilde.
                let t = states[j];
                let positive = decomposition.p_tilde.prob(t, s, 0, 0).is_positive();
                if !positive {
                    return Err(Error::ZeroProbabilityTransition(j));
                }
            }
            idx = j;
        } else {
            idx += 1;
        }
    }
    let _ = game;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::game::parse_rational;
    use crate::structure::{decompose, StructureConfig};
    use crate::recursive::{build_auxiliary, recursive_epsilon_equilibrium, EquilibriumSearchConfig};

    fn loop_world() -> (
        StochasticGame,
        MixedActionSetFamily,
        Decomposition,
        EquilibriumCertificate,
    ) {
        let game = fixtures::g_loop();
        let family = fixtures::g_loop_family();
        let (v1, _) = recursive_value_vector(&game, Player::One, &ValueConfig::default()).unwrap();
        let (v2, _) = recursive_value_vector(&game, Player::Two, &ValueConfig::default()).unwrap();
        let dec = decompose(&game, &family, [&v1, &v2], &StructureConfig::default()).unwrap();
        let aux = build_auxiliary(&game, &dec).unwrap();
        let cert =
            recursive_epsilon_equilibrium(&aux, 0.05, &EquilibriumSearchConfig::default())
                .unwrap();
        (game, family, dec, cert)
    }

    #[test]
    fn trim_removes_leaving_action() {
        let game = fixtures::g_loop();
        let set: BTreeSet<StateId> = [0, 1].into_iter().collect();
        // Player 1 mixes 70/30 between a and ahat; player 2 plays bhat, so
        // ahat leaves with probability 1 at state 1.
        let x1 = StationaryStrategy {
            player: Player::One,
            actions: vec![
                MixedAction::new(vec![
                    parse_rational("7/10").unwrap(),
                    parse_rational("3/10").unwrap(),
                ])
                .unwrap(),
                MixedAction::pure(2, 0),
                MixedAction::pure(2, 0),
            ],
        };
        let x2 = StationaryStrategy {
            player: Player::Two,
            actions: vec![MixedAction::pure(2, 1), MixedAction::pure(2, 0), MixedAction::pure(2, 0)],
        };
        let rho = parse_rational("1/2").unwrap();
        let ([t1, _t2], trimmed) = trim_strategy(&game, &set, [&x1, &x2], &rho).unwrap();
        assert!(trimmed[0][0].contains(&1));
        assert_eq!(t1.action(0), &MixedAction::pure(2, 0));
        // Outside the set nothing changes.
        assert_eq!(t1.action(2), x1.action(2));
    }

    #[test]
    fn trim_can_empty_a_support() {
        let game = fixtures::g_loop();
        let set: BTreeSet<StateId> = [0, 1].into_iter().collect();
        let x1 = StationaryStrategy {
            player: Player::One,
            actions: vec![MixedAction::pure(2, 1), MixedAction::pure(2, 0), MixedAction::pure(2, 0)],
        };
        let x2 = StationaryStrategy {
            player: Player::Two,
            actions: vec![MixedAction::pure(2, 1), MixedAction::pure(2, 0), MixedAction::pure(2, 0)],
        };
        let rho = parse_rational("1/2").unwrap();
        let err = trim_strategy(&game, &set, [&x1, &x2], &rho).unwrap_err();
        assert!(matches!(err, Error::EmptyTrimmedSupport(_)));
    }

    #[test]
    fn trim_distance_bounded_by_trimmed_mass() {
        let game = fixtures::g_loop();
        let set: BTreeSet<StateId> = [0, 1].into_iter().collect();
        let x1 = StationaryStrategy {
            player: Player::One,
            actions: vec![
                MixedAction::new(vec![
                    parse_rational("3/5").unwrap(),
                    parse_rational("2/5").unwrap(),
                ])
                .unwrap(),
                MixedAction::pure(2, 0),
                MixedAction::pure(2, 0),
            ],
        };
        let x2 = StationaryStrategy {
            player: Player::Two,
            actions: vec![MixedAction::pure(2, 1), MixedAction::pure(2, 0), MixedAction::pure(2, 0)],
        };
        let rho = parse_rational("1/2").unwrap();
        let ([t1, t2], trimmed) = trim_strategy(&game, &set, [&x1, &x2], &rho).unwrap();
        for (player, (orig, new)) in [(0usize, (&x1, &t1)), (1, (&x2, &t2))] {
            for &s in &set {
                let mass: Rational = trimmed[player][s]
                    .iter()
                    .map(|&a| orig.action(s).prob(a).clone())
                    .sum();
                let dist = orig.action(s).linf_distance(new.action(s));
                assert!(dist <= mass, "distance exceeded trimmed mass");
            }
        }
        // Single-stage ζ jump under the trimmed pair stays below ρ plus the
        // trimmed mass at every in-set state.
        for &s in &set {
            for monitor in Player::BOTH {
                let own = match monitor {
                    Player::One => t1.action(s),
                    Player::Two => t2.action(s),
                };
                let opp = monitor.opponent();
                let opp_strategy = match opp {
                    Player::One => &t1,
                    Player::Two => &t2,
                };
                for a_j in opp_strategy.action(s).support() {
                    let inc = zeta_step(&game, &set, monitor, own, a_j, s).unwrap();
                    let trimmed_mass: Rational = trimmed[monitor.index()][s]
                        .iter()
                        .map(|&a| {
                            match monitor {
                                Player::One => x1.action(s).prob(a).clone(),
                                Player::Two => x2.action(s).prob(a).clone(),
                            }
                        })
                        .sum();
                    assert!(
                        inc <= &rho + &trimmed_mass,
                        "zeta jump {} above rho + trimmed mass at state {}",
                        crate::game::rational_to_f64(&inc),
                        game.state_name(s)
                    );
                }
            }
        }
    }

    #[test]
    fn trim_noop_when_supports_safe() {
        let game = fixtures::g_loop();
        let set: BTreeSet<StateId> = [0, 1].into_iter().collect();
        let x1 = StationaryStrategy {
            player: Player::One,
            actions: vec![MixedAction::pure(2, 1), MixedAction::pure(2, 0), MixedAction::pure(2, 0)],
        };
        let x2 = StationaryStrategy {
            player: Player::Two,
            actions: vec![MixedAction::pure(2, 0); 3],
        };
        let rho = parse_rational("1/100").unwrap();
        let ([t1, t2], trimmed) = trim_strategy(&game, &set, [&x1, &x2], &rho).unwrap();
        assert!(trimmed[0].iter().all(|b| b.is_empty()));
        assert_eq!(t1.actions, x1.actions);
        assert_eq!(t2.actions, x2.actions);
    }

    #[test]
    fn zeta_step_matches_kernel_row() {
        let game = fixtures::g_loop();
        let set: BTreeSet<StateId> = [0, 1].into_iter().collect();
        // Monitor 2 watches player 1 playing ahat while she plays bhat.
        let inc = zeta_step(
            &game,
            &set,
            Player::Two,
            &MixedAction::pure(2, 1),
            1,
            0,
        )
        .unwrap();
        assert!(inc.is_one());
        // Against the safe action b the increment vanishes.
        let inc0 = zeta_step(&game, &set, Player::Two, &MixedAction::pure(2, 0), 1, 0).unwrap();
        assert!(inc0.is_zero());
    }

    #[test]
    fn zeta_identity_exact_on_loop() {
        let game = fixtures::g_loop();
        let set: BTreeSet<StateId> = [0, 1].into_iter().collect();
        let x1 = StationaryStrategy {
            player: Player::One,
            actions: vec![
                MixedAction::new(vec![
                    parse_rational("1/2").unwrap(),
                    parse_rational("1/2").unwrap(),
                ])
                .unwrap(),
                MixedAction::pure(2, 0),
                MixedAction::pure(2, 0),
            ],
        };
        let x2 = StationaryStrategy {
            player: Player::Two,
            actions: vec![
                MixedAction::new(vec![
                    parse_rational("2/3").unwrap(),
                    parse_rational("1/3").unwrap(),
                ])
                .unwrap(),
                MixedAction::pure(2, 0),
                MixedAction::pure(2, 0),
            ],
        };
        for monitor in Player::BOTH {
            for horizon in 1..=4 {
                let (e, p) = zeta_expectation_identity(
                    &game,
                    &set,
                    [&x1, &x2],
                    monitor,
                    0,
                    horizon,
                    None,
                )
                .unwrap();
                assert_eq!(e, p);
            }
        }
    }

    #[test]
    fn zeta_identity_with_early_stopping() {
        let game = fixtures::g_loop();
        let set: BTreeSet<StateId> = [0, 1].into_iter().collect();
        let x1 = StationaryStrategy {
            player: Player::One,
            actions: vec![MixedAction::uniform(2); 3],
        };
        let x2 = StationaryStrategy {
            player: Player::Two,
            actions: vec![MixedAction::uniform(2); 3],
        };
        // Stop when state 2 (index 1) is reached, truncated at 4.
        let stop = |h: &History| h.final_state() == 1;
        let (e, p) = zeta_expectation_identity(
            &game,
            &set,
            [&x1, &x2],
            Player::One,
            0,
            4,
            Some(&stop),
        )
        .unwrap();
        assert_eq!(e, p);
    }

    #[test]
    fn detectors_quiet_on_compliant_play() {
        let game = fixtures::g_loop();
        let set: BTreeSet<StateId> = [0, 1].into_iter().collect();
        let safe = StationaryStrategy {
            player: Player::One,
            actions: vec![MixedAction::pure(2, 0); 3],
        };
        let safe2 = StationaryStrategy {
            player: Player::Two,
            actions: vec![MixedAction::pure(2, 0); 3],
        };
        let mu = parse_rational("1/100").unwrap();
        let bundle = make_detectors(
            &game,
            &set,
            [&safe, &safe2],
            &mu,
            16,
            [parse_rational("-1").unwrap(), parse_rational("1").unwrap()],
        )
        .unwrap();
        let mut st = DetectorState::fresh();
        let mut s = 0usize;
        for _ in 0..64 {
            let next = if s == 0 { 1 } else { 0 };
            st = detector_step(&game, &bundle, &st, s, 0, 0, next).unwrap();
            assert!(st.trigger.is_none());
            s = next;
        }
    }

    #[test]
    fn theta0_fires_on_zero_probability_action() {
        let game = fixtures::g_loop();
        let set: BTreeSet<StateId> = [0, 1].into_iter().collect();
        let safe = StationaryStrategy {
            player: Player::One,
            actions: vec![MixedAction::pure(2, 0); 3],
        };
        let safe2 = StationaryStrategy {
            player: Player::Two,
            actions: vec![MixedAction::pure(2, 0); 3],
        };
        let mu = parse_rational("1/100").unwrap();
        let bundle = make_detectors(
            &game,
            &set,
            [&safe, &safe2],
            &mu,
            16,
            [parse_rational("-1").unwrap(), parse_rational("1").unwrap()],
        )
        .unwrap();
        let st = DetectorState::fresh();
        let st = detector_step(&game, &bundle, &st, 0, 1, 0, 1).unwrap();
        assert_eq!(st.trigger, Some((Trigger::Theta0, Player::One)));
    }

    #[test]
    fn theta2_fires_after_accumulated_pressure() {
        let game = fixtures::g_loop();
        let set: BTreeSet<StateId> = [0, 1].into_iter().collect();
        // Player 1's prescribed mix at state 1 leans on ahat: bhat plays by
        // player 2 build leaving pressure against it.
        let sigma1 = StationaryStrategy {
            player: Player::One,
            actions: vec![
                MixedAction::new(vec![
                    parse_rational("3/4").unwrap(),
                    parse_rational("1/4").unwrap(),
                ])
                .unwrap(),
                MixedAction::pure(2, 0),
                MixedAction::pure(2, 0),
            ],
        };
        let sigma2 = StationaryStrategy {
            player: Player::Two,
            actions: vec![MixedAction::uniform(2), MixedAction::pure(2, 0), MixedAction::pure(2, 0)],
        };
        let mu = parse_rational("1/100").unwrap();
        let bundle = make_detectors(
            &game,
            &set,
            [&sigma1, &sigma2],
            &mu,
            8,
            [parse_rational("-1").unwrap(), parse_rational("1").unwrap()],
        )
        .unwrap();
        // Player 2 keeps playing bhat at state 1: increment 1/4 per visit;
        // threshold sqrt(1/100) = 0.1 crossed on the first visit.
        let st = DetectorState::fresh();
        let st = detector_step(&game, &bundle, &st, 0, 0, 1, 1).unwrap();
        assert_eq!(st.trigger, Some((Trigger::Theta2, Player::Two)));
    }

    #[test]
    fn punishment_holds_player_two_to_maxmin_on_loop() {
        let game = fixtures::g_loop();
        let (punisher, worst) = punishment_strategy(&game, Player::Two, 1e-6).unwrap();
        assert_eq!(punisher.player, Player::One);
        // Player 1 punishes by avoiding ahat; player 2's maxmin is 1.
        assert!(worst.unwrap() <= rational_from_f64(1e-6));
        assert_eq!(punisher.action(0), &MixedAction::pure(2, 0));
    }

    #[test]
    fn assembled_profile_funnels_and_exits() {
        let (game, family, dec, cert) = loop_world();
        let mu = parse_rational("1/100").unwrap();
        let profile = assemble_global(&game, &dec, &family, &cert, 0.05, &mu).unwrap();
        assert!(!profile.uncertified);
        assert_eq!(profile.plans.len(), 1);
        // Starting inside the cycle: exit phase prescribed the witness pair
        // at state 1 (x1 = ahat, a2 = bhat).
        let phase = profile.initial_phase(0);
        let pair = profile.prescribed(&phase, 0).unwrap();
        assert_eq!(pair[0], MixedAction::pure(2, 1));
        assert_eq!(pair[1], MixedAction::pure(2, 1));
        // At state 2 the funnel steers back to state 1 safely.
        let pair = profile.prescribed(&phase, 1).unwrap();
        assert!(pair[0].prob(0).is_positive() || pair[0].prob(1).is_positive());
        // Compliant exit: phase moves to Absorbed.
        let next_phase = profile
            .step_phase(&game, &phase, 0, 1, 1, 2)
            .unwrap();
        assert_eq!(next_phase, Phase::Absorbed);
    }

    #[test]
    fn assembled_profile_punishes_refusal() {
        let (game, family, dec, cert) = loop_world();
        let mu = parse_rational("1/100").unwrap();
        let profile = assemble_global(&game, &dec, &family, &cert, 0.05, &mu).unwrap();
        let phase = profile.initial_phase(0);
        // Player 1 refuses the exit action (plays a instead of ahat).
        let next_phase = profile.step_phase(&game, &phase, 0, 0, 1, 1).unwrap();
        assert_eq!(next_phase, Phase::Punish(Trigger::Theta0));
        // With punishment disabled the deviation is tolerated.
        let mut soft = profile.clone();
        soft.disable_punishment();
        let next_phase = soft.step_phase(&game, &phase, 0, 0, 1, 1).unwrap();
        assert!(matches!(next_phase, Phase::Exit { .. }));
    }

    #[test]
    fn compress_history_drops_exit_segment() {
        let (game, _family, dec, _cert) = loop_world();
        // Real history: 1 -> 2 -> 1 -> star.
        let h = History::new(
            &game,
            vec![0, 1, 0, 2],
            vec![(1, 0), (0, 0), (1, 1)],
        )
        .unwrap();
        let compressed = compress_history(&game, &dec, &h).unwrap();
        // The whole in-set segment collapses onto the entry state.
        assert_eq!(compressed, vec![0, 2]);
    }

    #[test]
    fn in_set_profile_runs_and_punishes() {
        let game = fixtures::g_loop();
        let set: BTreeSet<StateId> = [0, 1].into_iter().collect();
        let sigma1 = StationaryStrategy {
            player: Player::One,
            actions: vec![MixedAction::pure(2, 0); 3],
        };
        let sigma2 = StationaryStrategy {
            player: Player::Two,
            actions: vec![MixedAction::pure(2, 0); 3],
        };
        let mu = parse_rational("1/100").unwrap();
        let profile = in_set_equilibrium(
            &game,
            &set,
            [&sigma1, &sigma2],
            [parse_rational("-1").unwrap(), parse_rational("1").unwrap()],
            &mu,
            16,
            0.05,
        )
        .unwrap();
        let phase = profile.initial_phase(0);
        assert!(matches!(phase, InSetPhase::Playing(_)));
        // Compliant step keeps playing.
        let phase2 = profile.step_phase(&game, &phase, 0, 0, 0, 1).unwrap();
        assert!(matches!(phase2, InSetPhase::Playing(_)));
        // Off-support action punishes.
        let phase3 = profile.step_phase(&game, &phase, 0, 1, 0, 1).unwrap();
        assert_eq!(phase3, InSetPhase::Punishing(Trigger::Theta0));
    }
}
