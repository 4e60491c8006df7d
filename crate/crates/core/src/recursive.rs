//! The auxiliary recursive game on the rewritten kernel: construction,
//! values, a stationary ε-equilibrium search with exact certification, and
//! exact absorption probabilities.

use std::collections::BTreeSet;

use num::{One, Signed, Zero};
use serde::Serialize;

use crate::game::{
    rational_to_f64, MixedAction, Objective, Player, StateId, StationaryStrategy, StochasticGame,
};
use crate::lp;
use crate::mdp::{solve_absorbing_mdp, AbsorbingMdp};
use crate::structure::Decomposition;
use crate::values::{recursive_value_vector, ValueConfig, ValueVector};
use crate::{Error, Rational, Result};

/// The auxiliary recursive game: kernel `p_tilde`, payoff `gamma` on
/// absorption and zero otherwise, with every state of the third family
/// acting as a dummy (its transitions ignore the actions).
#[derive(Debug, Clone)]
pub struct RecursiveGame {
    pub game: StochasticGame,
    /// States whose transitions are action-independent.
    pub dummy: BTreeSet<StateId>,
}

/// Builds the auxiliary game from a decomposition.
pub fn build_auxiliary(game: &StochasticGame, decomposition: &Decomposition) -> Result<RecursiveGame> {
    let f3_states = decomposition.f3_states();
    let mut aux = game.with_kernel(decomposition.p_tilde.clone());
    aux.objectives = [
        Objective::RecursiveAbsorbing {
            default: Rational::zero(),
        },
        Objective::RecursiveAbsorbing {
            default: Rational::zero(),
        },
    ];
    Ok(RecursiveGame {
        game: aux,
        dummy: f3_states,
    })
}

/// Values of the auxiliary game for both players, with the runtime check
/// that they dominate the original values on the nonabsorbing states.
pub fn recursive_values(
    aux: &RecursiveGame,
    original: [&ValueVector; 2],
    tol: f64,
) -> Result<[ValueVector; 2]> {
    let config = ValueConfig {
        tol,
        ..ValueConfig::default()
    };
    let v1 = recursive_value_vector(&aux.game, Player::One, &config)?.0;
    let v2 = recursive_value_vector(&aux.game, Player::Two, &config)?.0;
    let out = [v1, v2];
    for p in Player::BOTH {
        let i = p.index();
        // The dominance check allows the stated tolerance plus whatever
        // accuracy the two value computations themselves carry.
        let slack = crate::game::rational_from_f64(tol)
            + out[i].accuracy.margin(0.0)
            + original[i].accuracy.margin(0.0);
        for s in aux.game.nonabsorbing() {
            if out[i].values[s] < &original[i].values[s] - &slack {
                return Err(Error::ValueCheck(format!(
                    "auxiliary value of {} at {} fell below the original value: {} < {}",
                    p,
                    aux.game.state_name(s),
                    rational_to_f64(&out[i].values[s]),
                    rational_to_f64(&original[i].values[s]),
                )));
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Absorption probabilities
// ---------------------------------------------------------------------------

/// Exact absorption probabilities of the chain induced by a stationary pair:
/// for each state, the probability of eventually reaching an absorbing
/// state.
pub fn absorption_probability(
    game: &StochasticGame,
    x1: &StationaryStrategy,
    x2: &StationaryStrategy,
) -> Result<Vec<Rational>> {
    let n = game.num_states();
    let mut rows = Vec::with_capacity(n);
    for s in 0..n {
        rows.push(crate::game::step_distribution(
            game,
            &game.kernel,
            s,
            x1.action(s),
            x2.action(s),
        )?);
    }
    absorption_of_chain(&rows, &game.absorbing)
}

/// Absorption probabilities for an explicit chain.
pub fn absorption_of_chain(
    rows: &[Vec<Rational>],
    absorbing: &BTreeSet<StateId>,
) -> Result<Vec<Rational>> {
    let n = rows.len();
    // States that can reach an absorbing state at all.
    let mut can_reach: BTreeSet<StateId> = absorbing.clone();
    loop {
        let mut changed = false;
        for s in 0..n {
            if can_reach.contains(&s) {
                continue;
            }
            if (0..n).any(|t| rows[s][t].is_positive() && can_reach.contains(&t)) {
                can_reach.insert(s);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let transient: Vec<StateId> = (0..n)
        .filter(|s| !absorbing.contains(s) && can_reach.contains(s))
        .collect();
    let index: std::collections::BTreeMap<StateId, usize> = transient
        .iter()
        .enumerate()
        .map(|(k, &s)| (s, k))
        .collect();
    let m = transient.len();
    let mut a = vec![vec![Rational::zero(); m]; m];
    let mut b = vec![Rational::zero(); m];
    for (&s, &k) in index.iter() {
        a[k][k] = Rational::one();
        for t in 0..n {
            if !rows[s][t].is_positive() {
                continue;
            }
            if absorbing.contains(&t) {
                b[k] += &rows[s][t];
            } else if let Some(&kt) = index.get(&t) {
                a[k][kt] -= &rows[s][t];
            }
            // Unable-to-reach states contribute zero.
        }
    }
    let sol = lp::solve_linear(&a, &b)
        .ok_or_else(|| Error::ValueOracle("absorption system singular".into()))?;
    let mut out = vec![Rational::zero(); n];
    for &s in absorbing {
        out[s] = Rational::one();
    }
    for (&s, &k) in index.iter() {
        out[s] = sol[k].clone();
    }
    Ok(out)
}

/// Exact distribution over absorbing states reached from each start state
/// under a stationary pair; used for on-path recursive payoffs.
pub fn absorption_distribution(
    rows: &[Vec<Rational>],
    absorbing: &BTreeSet<StateId>,
) -> Result<Vec<Vec<Rational>>> {
    let n = rows.len();
    let mut out = vec![vec![Rational::zero(); n]; n];
    for &target in absorbing {
        // Probability of being absorbed at `target` specifically: make
        // every other absorbing state a zero sink.
        let single: BTreeSet<StateId> = [target].into_iter().collect();
        let mut rows2 = rows.to_vec();
        for &other in absorbing {
            if other != target {
                // Redirect to a self-loop that never reaches `target`.
                let mut row = vec![Rational::zero(); n];
                row[other] = Rational::one();
                rows2[other] = row;
            }
        }
        let probs = absorption_of_chain(&rows2, &single)?;
        for s in 0..n {
            out[s][target] = probs[s].clone();
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Equilibrium search with certification
// ---------------------------------------------------------------------------

/// A stationary profile for the auxiliary game with exact best-response
/// gaps, absorption bound, and the claimed ε.
#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumCertificate {
    pub strategies: [StationaryStrategy; 2],
    /// Maximal best-response gap per player over the initial states.
    pub gaps: [String; 2],
    /// Exact lower bound on the absorption probability over initial states.
    pub absorption: String,
    pub epsilon: String,
    pub certified: bool,
}

impl EquilibriumCertificate {
    pub fn gap(&self, player: Player) -> Rational {
        crate::game::parse_rational(&self.gaps[player.index()]).expect("stored gap")
    }

    pub fn absorption_bound(&self) -> Rational {
        crate::game::parse_rational(&self.absorption).expect("stored bound")
    }
}

/// Search knobs for the stationary equilibrium search.
#[derive(Debug, Clone)]
pub struct EquilibriumSearchConfig {
    pub lambda_grid: Vec<f64>,
    pub br_rounds: usize,
    pub restarts: usize,
}

impl Default for EquilibriumSearchConfig {
    fn default() -> Self {
        EquilibriumSearchConfig {
            lambda_grid: (1..=10).map(|k| 0.5f64.powi(k)).collect(),
            br_rounds: 120,
            restarts: 4,
        }
    }
}

/// Checks the absorbing-property precondition: under the fully mixed
/// player-2 strategy, every stationary reply of player 1 is absorbing.
/// Returns the offending closed set when it fails.
pub fn absorbing_property_violation(aux: &RecursiveGame) -> Option<BTreeSet<StateId>> {
    let game = &aux.game;
    let n2 = game.num_actions(Player::Two);
    let u2 = MixedAction::uniform(n2);
    let mut f: BTreeSet<StateId> = game.nonabsorbing();
    loop {
        let keep: BTreeSet<StateId> = f
            .iter()
            .copied()
            .filter(|&s| {
                (0..game.num_actions(Player::One)).any(|a1| {
                    let pure = MixedAction::pure(game.num_actions(Player::One), a1);
                    crate::game::step_probability_into(game, &game.kernel, &f, s, &pure, &u2)
                        .map(|p| p.is_one())
                        .unwrap_or(false)
                })
            })
            .collect();
        let done = keep.len() == f.len();
        f = keep;
        if done {
            break;
        }
    }
    if f.is_empty() {
        None
    } else {
        Some(f)
    }
}

/// Exact best-response value and stationary policy of `responder` against a
/// stationary opponent in the recursive game.
pub fn best_response_recursive(
    aux: &RecursiveGame,
    opponent: &StationaryStrategy,
    responder: Player,
) -> Result<(Vec<Rational>, StationaryStrategy)> {
    let game = &aux.game;
    let n = game.num_states();
    let n_own = game.num_actions(responder);
    let terminal: Vec<Option<Rational>> = (0..n)
        .map(|s| {
            if game.is_absorbing(s) {
                Some(game.gamma_of(responder, s).clone())
            } else {
                None
            }
        })
        .collect();
    let mut transitions = vec![Vec::new(); n];
    for s in 0..n {
        if terminal[s].is_some() {
            continue;
        }
        let mut acts = Vec::with_capacity(n_own);
        for a in 0..n_own {
            let pure = MixedAction::pure(n_own, a);
            let (x1, x2) = match responder {
                Player::One => (&pure, opponent.action(s)),
                Player::Two => (opponent.action(s), &pure),
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
    if game.absorbing.is_empty() {
        // No terminals at all: the total reward is identically zero.
        let values = vec![Rational::zero(); n];
        let policy = StationaryStrategy {
            player: responder,
            actions: (0..n).map(|_| MixedAction::pure(n_own, 0)).collect(),
        };
        return Ok((values, policy));
    }
    let mdp = AbsorbingMdp {
        terminal,
        transitions,
    };
    let (values, policy) = solve_absorbing_mdp(&mdp)?;
    Ok((
        values,
        StationaryStrategy {
            player: responder,
            actions: (0..n)
                .map(|s| {
                    if game.is_absorbing(s) {
                        MixedAction::pure(n_own, 0)
                    } else {
                        MixedAction::pure(n_own, policy[s])
                    }
                })
                .collect(),
        },
    ))
}

/// On-path expected recursive payoffs of a stationary pair, exactly.
pub fn on_path_recursive_payoffs(
    aux: &RecursiveGame,
    x1: &StationaryStrategy,
    x2: &StationaryStrategy,
) -> Result<[Vec<Rational>; 2]> {
    let game = &aux.game;
    let n = game.num_states();
    let mut rows = Vec::with_capacity(n);
    for s in 0..n {
        rows.push(crate::game::step_distribution(
            game,
            &game.kernel,
            s,
            x1.action(s),
            x2.action(s),
        )?);
    }
    let dist = absorption_distribution(&rows, &game.absorbing)?;
    let mut out = [vec![Rational::zero(); n], vec![Rational::zero(); n]];
    for p in Player::BOTH {
        for s in 0..n {
            out[p.index()][s] = game
                .absorbing
                .iter()
                .map(|&t| &dist[s][t] * game.gamma_of(p, t))
                .sum();
        }
    }
    Ok(out)
}

fn snap_strategy(strategy: &StationaryStrategy) -> StationaryStrategy {
    let actions = strategy
        .actions
        .iter()
        .map(|m| {
            let scale = Rational::from_integer(65536.into());
            let mut probs: Vec<Rational> = m
                .probs()
                .iter()
                .map(|p| {
                    let scaled = (p * &scale).round();
                    scaled / &scale
                })
                .collect();
            let total: Rational = probs.iter().sum();
            if total.is_zero() {
                return m.clone();
            }
            for p in probs.iter_mut() {
                *p /= total.clone();
            }
            MixedAction::new(probs).unwrap_or_else(|_| m.clone())
        })
        .collect();
    StationaryStrategy {
        player: strategy.player,
        actions,
    }
}

/// Certifies a candidate stationary pair in the recursive game: exact best
/// responses, exact on-path payoffs, exact absorption bound.
pub fn certify_profile(
    aux: &RecursiveGame,
    x1: &StationaryStrategy,
    x2: &StationaryStrategy,
    epsilon: f64,
) -> Result<EquilibriumCertificate> {
    let game = &aux.game;
    let on_path = on_path_recursive_payoffs(aux, x1, x2)?;
    let (br1, _) = best_response_recursive(aux, x2, Player::One)?;
    let (br2, _) = best_response_recursive(aux, x1, Player::Two)?;
    let mut gaps = [Rational::zero(), Rational::zero()];
    for s in 0..game.num_states() {
        if game.is_absorbing(s) {
            continue;
        }
        let g1 = &br1[s] - &on_path[0][s];
        let g2 = &br2[s] - &on_path[1][s];
        if g1 > gaps[0] {
            gaps[0] = g1;
        }
        if g2 > gaps[1] {
            gaps[1] = g2;
        }
    }
    let absorption = absorption_probability(game, x1, x2)?;
    let bound = (0..game.num_states())
        .map(|s| absorption[s].clone())
        .min()
        .unwrap_or_else(Rational::one);
    let eps = crate::game::rational_from_f64(epsilon);
    let certified = gaps[0] <= eps && gaps[1] <= eps;
    Ok(EquilibriumCertificate {
        strategies: [x1.clone(), x2.clone()],
        gaps: [
            crate::game::format_rational(&gaps[0]),
            crate::game::format_rational(&gaps[1]),
        ],
        absorption: crate::game::format_rational(&bound),
        epsilon: format!("{epsilon}"),
        certified,
    })
}

/// Searches for a stationary ε-equilibrium of the recursive game: candidate
/// profiles from the value oracles and damped best-response iteration along
/// a discount grid, each candidate certified by exact best responses. The
/// best uncertified candidate is returned (flagged) when the search fails.
pub fn recursive_epsilon_equilibrium(
    aux: &RecursiveGame,
    epsilon: f64,
    config: &EquilibriumSearchConfig,
) -> Result<EquilibriumCertificate> {
    if epsilon <= 0.0 {
        return Err(Error::InvalidParameter("epsilon must be positive".into()));
    }
    let game = &aux.game;
    for &s in &game.absorbing {
        if !game.gamma_of(Player::Two, s).is_positive() {
            return Err(Error::InvalidParameter(format!(
                "positivity precondition fails: gamma_2({}) <= 0",
                game.state_name(s)
            )));
        }
    }
    if let Some(f) = absorbing_property_violation(aux) {
        return Err(Error::InvalidParameter(format!(
            "absorbing-property precondition fails on {:?}",
            game.state_names(&f)
        )));
    }

    let mut best: Option<EquilibriumCertificate> = None;
    let consider = |cand: EquilibriumCertificate,
                        best: &mut Option<EquilibriumCertificate>|
     -> bool {
        let better = match best {
            None => true,
            Some(b) => {
                let worst_new = cand.gap(Player::One).max(cand.gap(Player::Two));
                let worst_old = b.gap(Player::One).max(b.gap(Player::Two));
                worst_new < worst_old
            }
        };
        if better {
            *best = Some(cand.clone());
        }
        cand.certified
    };

    // Seed candidates from the zero-sum value oracles.
    let vc = ValueConfig::default();
    let (_, s1) = recursive_value_vector(game, Player::One, &vc)?;
    let (_, s2) = recursive_value_vector(game, Player::Two, &vc)?;
    let seeds: Vec<[StationaryStrategy; 2]> = vec![
        [s1[0].clone(), s2[1].clone()],
        [s2[0].clone(), s1[1].clone()],
        [s1[0].clone(), s1[1].clone()],
        [s2[0].clone(), s2[1].clone()],
    ];
    for [x1, x2] in seeds {
        let cand = certify_profile(aux, &snap_strategy(&x1), &snap_strategy(&x2), epsilon)?;
        if consider(cand, &mut best) {
            return Ok(best.unwrap());
        }
    }

    // Damped best-response iteration along the discount grid.
    for &lambda in &config.lambda_grid {
        for restart in 0..config.restarts {
            let mut x1 = initial_strategy(game, Player::One, restart);
            let mut x2 = initial_strategy(game, Player::Two, restart);
            let mut seen: BTreeSet<String> = BTreeSet::new();
            for round in 0..config.br_rounds {
                let b1 = discounted_best_response_f64(aux, &x2, Player::One, lambda)?;
                let b2 = discounted_best_response_f64(aux, &x1, Player::Two, lambda)?;
                let w = 1.0 / (2.0 + round as f64);
                x1 = damp(&x1, &b1, w);
                x2 = damp(&x2, &b2, w);
                let key = fingerprint(&x1, &x2);
                if !seen.insert(key) {
                    break; // cycling
                }
            }
            let cand = certify_profile(aux, &snap_strategy(&x1), &snap_strategy(&x2), epsilon)?;
            if consider(cand, &mut best) {
                return Ok(best.unwrap());
            }
            // Also try the undamped pure best responses to each other.
            let b1 = discounted_best_response_f64(aux, &x2, Player::One, lambda)?;
            let b2 = discounted_best_response_f64(aux, &x1, Player::Two, lambda)?;
            let cand = certify_profile(aux, &snap_strategy(&b1), &snap_strategy(&b2), epsilon)?;
            if consider(cand, &mut best) {
                return Ok(best.unwrap());
            }
        }
    }
    Ok(best.expect("at least one candidate was certified"))
}

fn initial_strategy(game: &StochasticGame, player: Player, variant: usize) -> StationaryStrategy {
    let n_own = game.num_actions(player);
    StationaryStrategy {
        player,
        actions: (0..game.num_states())
            .map(|s| match variant {
                0 => MixedAction::uniform(n_own),
                1 => MixedAction::pure(n_own, 0),
                2 => MixedAction::pure(n_own, (s + 1) % n_own.max(1)),
                _ => MixedAction::uniform(n_own),
            })
            .collect(),
    }
}

fn damp(old: &StationaryStrategy, new: &StationaryStrategy, w: f64) -> StationaryStrategy {
    let wr = crate::values::quantize(w);
    StationaryStrategy {
        player: old.player,
        actions: old
            .actions
            .iter()
            .zip(&new.actions)
            .map(|(a, b)| a.mix(b, &wr))
            .collect(),
    }
}

fn fingerprint(x1: &StationaryStrategy, x2: &StationaryStrategy) -> String {
    let fmt = |x: &StationaryStrategy| -> String {
        x.actions
            .iter()
            .flat_map(|m| m.probs().iter().map(|p| format!("{:.6};", rational_to_f64(p))))
            .collect()
    };
    format!("{}|{}", fmt(x1), fmt(x2))
}

/// Float best response in the λ-discounted version of the recursive game
/// (stage payoff zero, absorbing states locked at gamma).
fn discounted_best_response_f64(
    aux: &RecursiveGame,
    opponent: &StationaryStrategy,
    responder: Player,
    lambda: f64,
) -> Result<StationaryStrategy> {
    let game = &aux.game;
    let n = game.num_states();
    let n_own = game.num_actions(responder);
    let gamma: Vec<f64> = (0..n)
        .map(|s| {
            if game.is_absorbing(s) {
                rational_to_f64(game.gamma_of(responder, s))
            } else {
                0.0
            }
        })
        .collect();
    // Precompute transition rows against the opponent.
    let mut rows: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n];
    for s in 0..n {
        if game.is_absorbing(s) {
            continue;
        }
        let mut acts = Vec::with_capacity(n_own);
        for a in 0..n_own {
            let pure = MixedAction::pure(n_own, a);
            let (x1, x2) = match responder {
                Player::One => (&pure, opponent.action(s)),
                Player::Two => (opponent.action(s), &pure),
            };
            let dist = crate::game::step_distribution(game, &game.kernel, s, x1, x2)?;
            acts.push(dist.iter().map(rational_to_f64).collect());
        }
        rows[s] = acts;
    }
    let mut v: Vec<f64> = gamma.clone();
    for _ in 0..20_000 {
        let mut delta: f64 = 0.0;
        let mut next = v.clone();
        for s in 0..n {
            if game.is_absorbing(s) {
                continue;
            }
            let best = (0..n_own)
                .map(|a| {
                    (1.0 - lambda)
                        * rows[s][a]
                            .iter()
                            .zip(&v)
                            .map(|(p, vv)| p * vv)
                            .sum::<f64>()
                })
                .fold(f64::NEG_INFINITY, f64::max);
            next[s] = best;
            delta = delta.max((best - v[s]).abs());
        }
        v = next;
        if delta < 1e-12 {
            break;
        }
    }
    let actions = (0..n)
        .map(|s| {
            if game.is_absorbing(s) {
                return MixedAction::pure(n_own, 0);
            }
            let mut best_a = 0;
            let mut best_v = f64::NEG_INFINITY;
            for a in 0..n_own {
                let q = (1.0 - lambda)
                    * rows[s][a]
                        .iter()
                        .zip(&v)
                        .map(|(p, vv)| p * vv)
                        .sum::<f64>();
                if q > best_v + 1e-12 {
                    best_v = q;
                    best_a = a;
                }
            }
            MixedAction::pure(n_own, best_a)
        })
        .collect();
    Ok(StationaryStrategy {
        player: responder,
        actions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::structure::{decompose, StructureConfig};
    use crate::values::recursive_value_vector;

    fn loop_aux() -> (StochasticGame, RecursiveGame, ValueVector, ValueVector) {
        let game = fixtures::g_loop();
        let family = fixtures::g_loop_family();
        let (v1, _) = recursive_value_vector(&game, Player::One, &ValueConfig::default()).unwrap();
        let (v2, _) = recursive_value_vector(&game, Player::Two, &ValueConfig::default()).unwrap();
        let dec = decompose(&game, &family, [&v1, &v2], &StructureConfig::default()).unwrap();
        let aux = build_auxiliary(&game, &dec).unwrap();
        (game, aux, v1, v2)
    }

    #[test]
    fn auxiliary_from_loop_marks_cycle_dummy() {
        let (_, aux, _, _) = loop_aux();
        assert_eq!(aux.dummy, [0, 1].into_iter().collect::<BTreeSet<_>>());
        // Dummy rows are action independent.
        for s in [0usize, 1] {
            let base = aux.game.kernel.row(s, 0, 0).to_vec();
            for a1 in 0..2 {
                for a2 in 0..2 {
                    assert_eq!(aux.game.kernel.row(s, a1, a2), &base[..]);
                }
            }
        }
    }

    #[test]
    fn auxiliary_values_dominate_original() {
        let (_, aux, v1, v2) = loop_aux();
        let vr = recursive_values(&aux, [&v1, &v2], 1e-6).unwrap();
        // Absorption is sure under p_tilde, so both auxiliary values hit gamma.
        assert_eq!(vr[0].values[0], crate::game::parse_rational("-1").unwrap());
        assert_eq!(vr[1].values[0], crate::game::parse_rational("2").unwrap());
    }

    #[test]
    fn absorption_probability_geometric_exit() {
        let (_, aux, _, _) = loop_aux();
        let x1 = StationaryStrategy {
            player: Player::One,
            actions: vec![MixedAction::pure(2, 0); 3],
        };
        let x2 = StationaryStrategy {
            player: Player::Two,
            actions: vec![MixedAction::pure(2, 0); 3],
        };
        let probs = absorption_probability(&aux.game, &x1, &x2).unwrap();
        // Half the mass leaves per visit: absorption almost sure.
        assert!(probs[0].is_one());
        assert!(probs[1].is_one());
    }

    #[test]
    fn non_absorbing_pair_has_zero_probability() {
        let game = fixtures::g_loop();
        // Both players avoid the joint pair: play cycles forever.
        let x1 = StationaryStrategy {
            player: Player::One,
            actions: vec![MixedAction::pure(2, 0); 3],
        };
        let x2 = StationaryStrategy {
            player: Player::Two,
            actions: vec![MixedAction::pure(2, 0); 3],
        };
        let probs = absorption_probability(&game, &x1, &x2).unwrap();
        assert!(probs[0].is_zero());
        assert!(probs[1].is_zero());
    }

    #[test]
    fn loop_equilibrium_certified_with_full_absorption() {
        let (_, aux, _, _) = loop_aux();
        let cert =
            recursive_epsilon_equilibrium(&aux, 0.1, &EquilibriumSearchConfig::default()).unwrap();
        assert!(cert.certified);
        assert!(cert.absorption_bound().is_one());
        assert!(cert.gap(Player::One).is_zero());
        assert!(cert.gap(Player::Two).is_zero());
    }

    #[test]
    fn all_absorbing_game_trivial_certificate() {
        let game = fixtures::g_abs();
        let aux = RecursiveGame {
            game: {
                let mut g = game.clone();
                g.objectives = [
                    Objective::RecursiveAbsorbing {
                        default: Rational::zero(),
                    },
                    Objective::RecursiveAbsorbing {
                        default: Rational::zero(),
                    },
                ];
                g
            },
            dummy: BTreeSet::new(),
        };
        let cert =
            recursive_epsilon_equilibrium(&aux, 0.05, &EquilibriumSearchConfig::default())
                .unwrap();
        assert!(cert.certified);
        assert!(cert.absorption_bound().is_one());
    }

    #[test]
    fn best_response_prefers_staying_for_player_one() {
        // Player 1 with negative absorbing payoffs avoids absorption when a
        // safe loop exists.
        let (_, aux, _, _) = loop_aux();
        let x2 = StationaryStrategy {
            player: Player::Two,
            actions: vec![MixedAction::pure(2, 0); 3],
        };
        let (values, _) = best_response_recursive(&aux, &x2, Player::One).unwrap();
        // Under p_tilde the cycle states leak to star regardless: value -1.
        assert_eq!(values[0], crate::game::parse_rational("-1").unwrap());
        // In the original game player 1 could avoid star; in the auxiliary
        // game the dummy rows make absorption certain.
    }

    #[test]
    fn mixed_sign_terminal_rejected() {
        let mdp = AbsorbingMdp {
            terminal: vec![
                None,
                Some(Rational::one()),
                Some(-Rational::one()),
            ],
            transitions: vec![
                vec![
                    vec![(1, Rational::new(1.into(), 2.into())), (2, Rational::new(1.into(), 2.into()))],
                ],
                Vec::new(),
                Vec::new(),
            ],
        };
        assert!(solve_absorbing_mdp(&mdp).is_err());
    }

    #[test]
    fn positive_mdp_picks_best_terminal() {
        // Node 0 chooses between terminal 1 (value 1) and terminal 2 (value 2).
        let mdp = AbsorbingMdp {
            terminal: vec![None, Some(Rational::one()), Some(Rational::from_integer(2.into()))],
            transitions: vec![
                vec![
                    vec![(1, Rational::one())],
                    vec![(2, Rational::one())],
                ],
                Vec::new(),
                Vec::new(),
            ],
        };
        let (values, policy) = solve_absorbing_mdp(&mdp).unwrap();
        assert_eq!(values[0], Rational::from_integer(2.into()));
        assert_eq!(policy[0], 1);
    }

    #[test]
    fn negative_mdp_avoids_absorption_when_possible() {
        // Node 0: stay at 0 or absorb at -1. Staying is optimal.
        let mdp = AbsorbingMdp {
            terminal: vec![None, Some(-Rational::one())],
            transitions: vec![
                vec![
                    vec![(0, Rational::one())],
                    vec![(1, Rational::one())],
                ],
                Vec::new(),
            ],
        };
        let (values, policy) = solve_absorbing_mdp(&mdp).unwrap();
        assert!(values[0].is_zero());
        assert_eq!(policy[0], 0);
    }

    #[test]
    fn negative_mdp_minimizes_loss_when_forced() {
        // Node 0 must absorb: -2 directly or via node 1 to -1.
        let mdp = AbsorbingMdp {
            terminal: vec![None, None, Some(-Rational::from_integer(2.into())), Some(-Rational::one())],
            transitions: vec![
                vec![
                    vec![(2, Rational::one())],
                    vec![(1, Rational::one())],
                ],
                vec![vec![(3, Rational::one())]],
                Vec::new(),
                Vec::new(),
            ],
        };
        let (values, policy) = solve_absorbing_mdp(&mdp).unwrap();
        assert_eq!(values[0], -Rational::one());
        assert_eq!(policy[0], 1);
    }
}
