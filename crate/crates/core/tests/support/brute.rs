//! Definitional evaluators for the structural predicates, written directly
//! from the definitions and kept independent of the library's search
//! machinery: hitting is decided by exact linear absorption probabilities
//! rather than graph condensation, and mixture feasibility by hull geometry
//! rather than the simplex.

use std::collections::{BTreeMap, BTreeSet};

use num::{One, Signed, Zero};
use shiftgame::game::{
    step_probability_into, ActionId, MixedAction, MixedActionSetFamily, Player, StateId,
    StochasticGame, TransitionKernel,
};
use shiftgame::Rational;

/// Direct closure check: every family pair keeps the set with probability 1.
pub fn closed(
    game: &StochasticGame,
    kernel: &TransitionKernel,
    set: &BTreeSet<StateId>,
    family: &MixedActionSetFamily,
) -> bool {
    set.iter().all(|&s| {
        family.cell(Player::One, s).iter().all(|x1| {
            family.cell(Player::Two, s).iter().all(|x2| {
                step_probability_into(game, kernel, set, s, x1, x2)
                    .map(|p| p.is_one())
                    .unwrap_or(false)
            })
        })
    })
}

/// All pairwise-safe support products at a state that contain the support of
/// some base pair of the family.
fn support_products(
    game: &StochasticGame,
    kernel: &TransitionKernel,
    set: &BTreeSet<StateId>,
    family: &MixedActionSetFamily,
    s: StateId,
) -> Vec<(Vec<ActionId>, Vec<ActionId>)> {
    let n1 = game.num_actions(Player::One);
    let n2 = game.num_actions(Player::Two);
    let safe = |t1: &[ActionId], t2: &[ActionId]| -> bool {
        t1.iter().all(|&a1| {
            t2.iter()
                .all(|&a2| kernel.prob_into(set, s, a1, a2).is_one())
        })
    };
    let mut out = Vec::new();
    for x1 in family.cell(Player::One, s) {
        for x2 in family.cell(Player::Two, s) {
            let s1 = x1.support();
            let s2 = x2.support();
            for m1 in 0..(1usize << n1) {
                let t1: Vec<ActionId> = (0..n1).filter(|a| m1 & (1 << a) != 0).collect();
                if !s1.iter().all(|a| t1.contains(a)) {
                    continue;
                }
                for m2 in 0..(1usize << n2) {
                    let t2: Vec<ActionId> = (0..n2).filter(|a| m2 & (1 << a) != 0).collect();
                    if !s2.iter().all(|a| t2.contains(a)) {
                        continue;
                    }
                    if safe(&t1, &t2) && !out.contains(&(t1.clone(), t2.clone())) {
                        out.push((t1.clone(), t2));
                    }
                }
            }
        }
    }
    out
}

/// P(stay in the set forever and hit the target) = 1 under one support
/// assignment, decided by exact absorption probabilities of the uniform
/// chain on the products.
fn assignment_hits(
    game: &StochasticGame,
    kernel: &TransitionKernel,
    set: &BTreeSet<StateId>,
    assignment: &BTreeMap<StateId, (Vec<ActionId>, Vec<ActionId>)>,
    from: StateId,
    target: StateId,
) -> bool {
    // Chain over the set states under uniform mixing on the products.
    let n = game.num_states();
    let mut rows = vec![vec![Rational::zero(); n]; n];
    for (&s, (t1, t2)) in assignment {
        let x1 = MixedAction::uniform_over(game.num_actions(Player::One), t1);
        let x2 = MixedAction::uniform_over(game.num_actions(Player::Two), t2);
        rows[s] = shiftgame::game::step_distribution(game, kernel, s, &x1, &x2).unwrap();
    }
    // Safety: all mass stays within the assigned states.
    for (&s, _) in assignment {
        let stay: Rational = assignment.keys().map(|&t| rows[s][t].clone()).sum();
        if !stay.is_one() {
            return false;
        }
    }
    let _ = set;
    // Hitting: make the target absorbing and ask for probability one.
    let mut stopped = rows.clone();
    let mut row = vec![Rational::zero(); n];
    row[target] = Rational::one();
    stopped[target] = row;
    for s in 0..n {
        if !assignment.contains_key(&s) && s != target {
            let mut r = vec![Rational::zero(); n];
            r[s] = Rational::one();
            stopped[s] = r;
        }
    }
    let absorbing: BTreeSet<StateId> = [target].into_iter().collect();
    let probs = shiftgame::recursive::absorption_of_chain(&stopped, &absorbing).unwrap();
    probs[from].is_one()
}

/// Direct communication check: closure plus, per ordered pair, some support
/// assignment that stays almost surely and hits almost surely.
pub fn communicating(
    game: &StochasticGame,
    kernel: &TransitionKernel,
    set: &BTreeSet<StateId>,
    family: &MixedActionSetFamily,
) -> bool {
    if !closed(game, kernel, set, family) {
        return false;
    }
    let states: Vec<StateId> = set.iter().copied().collect();
    let products: Vec<Vec<(Vec<ActionId>, Vec<ActionId>)>> = states
        .iter()
        .map(|&s| support_products(game, kernel, set, family, s))
        .collect();
    if products.iter().any(|p| p.is_empty()) {
        return false;
    }
    for &from in &states {
        for &to in &states {
            if from == to {
                continue;
            }
            // Enumerate assignments.
            let mut idx = vec![0usize; states.len()];
            let mut found = false;
            'outer: loop {
                let assignment: BTreeMap<StateId, (Vec<ActionId>, Vec<ActionId>)> = states
                    .iter()
                    .zip(&idx)
                    .map(|(&s, &i)| (s, products[states.iter().position(|&x| x == s).unwrap()][i].clone()))
                    .collect();
                if assignment_hits(game, kernel, set, &assignment, from, to) {
                    found = true;
                    break;
                }
                let mut k = 0;
                loop {
                    if k == idx.len() {
                        break 'outer;
                    }
                    idx[k] += 1;
                    if idx[k] < products[k].len() {
                        break;
                    }
                    idx[k] = 0;
                    k += 1;
                }
            }
            if !found {
                return false;
            }
        }
    }
    true
}

/// Literal unilateral exits: `(s, a_i, x_j)` with a leave probability and a
/// same-player family action staying surely.
pub fn unilateral_exits(
    game: &StochasticGame,
    kernel: &TransitionKernel,
    set: &BTreeSet<StateId>,
    family: &MixedActionSetFamily,
    player: Player,
) -> Vec<(StateId, ActionId, MixedAction)> {
    let opp = player.opponent();
    let mut out = Vec::new();
    for &s in set {
        for x_j in family.cell(opp, s) {
            let has_witness = family.cell(player, s).iter().any(|x_i| {
                let (x1, x2) = match player {
                    Player::One => (x_i, x_j),
                    Player::Two => (x_j, x_i),
                };
                step_probability_into(game, kernel, set, s, x1, x2)
                    .unwrap()
                    .is_one()
            });
            if !has_witness {
                continue;
            }
            for a in 0..game.num_actions(player) {
                let pure = MixedAction::pure(game.num_actions(player), a);
                let (x1, x2) = match player {
                    Player::One => (&pure, x_j),
                    Player::Two => (x_j, &pure),
                };
                let stay = step_probability_into(game, kernel, set, s, x1, x2).unwrap();
                if stay < Rational::one() {
                    out.push((s, a, x_j.clone()));
                }
            }
        }
    }
    out
}

/// Literal joint exits: `(s, a1, a2)` with both unilateral deviations safe
/// under some witness pair and the joint pair leaving.
pub fn joint_exits(
    game: &StochasticGame,
    kernel: &TransitionKernel,
    set: &BTreeSet<StateId>,
    family: &MixedActionSetFamily,
) -> Vec<(StateId, ActionId, ActionId)> {
    let n1 = game.num_actions(Player::One);
    let n2 = game.num_actions(Player::Two);
    let mut out = Vec::new();
    for &s in set {
        for a1 in 0..n1 {
            for a2 in 0..n2 {
                if kernel.prob_into(set, s, a1, a2).is_one() {
                    continue;
                }
                let p1 = MixedAction::pure(n1, a1);
                let p2 = MixedAction::pure(n2, a2);
                let witnessed = family.cell(Player::One, s).iter().any(|x1| {
                    family.cell(Player::Two, s).iter().any(|x2| {
                        step_probability_into(game, kernel, set, s, x1, x2)
                            .unwrap()
                            .is_one()
                            && step_probability_into(game, kernel, set, s, &p1, x2)
                                .unwrap()
                                .is_one()
                            && step_probability_into(game, kernel, set, s, x1, &p2)
                                .unwrap()
                                .is_one()
                    })
                });
                if witnessed {
                    out.push((s, a1, a2));
                }
            }
        }
    }
    out
}

fn exit_value(
    game: &StochasticGame,
    kernel: &TransitionKernel,
    player: Player,
    exit: &(StateId, ActionId, MixedAction),
    v: &[Rational],
) -> Rational {
    let pure = MixedAction::pure(game.num_actions(player), exit.1);
    let (x1, x2) = match player {
        Player::One => (&pure, &exit.2),
        Player::Two => (&exit.2, &pure),
    };
    shiftgame::game::expected_value(game, kernel, v, exit.0, x1, x2).unwrap()
}

/// H-value by a literal scan over the finite candidate triplets.
pub fn h_value(
    game: &StochasticGame,
    kernel: &TransitionKernel,
    set: &BTreeSet<StateId>,
    family: &MixedActionSetFamily,
    player: Player,
    v: &[Rational],
) -> Rational {
    let opp = player.opponent();
    let mut best: Option<Rational> = None;
    for &s in set {
        for a in 0..game.num_actions(player) {
            let pure = MixedAction::pure(game.num_actions(player), a);
            for x_j in family.cell(opp, s) {
                let (x1, x2) = match player {
                    Player::One => (&pure, x_j),
                    Player::Two => (x_j, &pure),
                };
                let val = shiftgame::game::expected_value(game, kernel, v, s, x1, x2).unwrap();
                best = Some(match best {
                    None => val,
                    Some(b) => {
                        if val > b {
                            val
                        } else {
                            b
                        }
                    }
                });
            }
        }
    }
    best.unwrap()
}

/// Literal classification flags: (controlled_by, jointly_controlled,
/// blocked_to).
pub fn classify(
    game: &StochasticGame,
    kernel: &TransitionKernel,
    set: &BTreeSet<StateId>,
    family: &MixedActionSetFamily,
    v: [&Vec<Rational>; 2],
) -> ([bool; 2], bool, [bool; 2]) {
    let h = [
        h_value(game, kernel, set, family, Player::One, v[0]),
        h_value(game, kernel, set, family, Player::Two, v[1]),
    ];
    let mut controlled = [false, false];
    let mut blocked = [true, true];
    for player in Player::BOTH {
        let i = player.index();
        let max_vi = set.iter().map(|&s| v[i][s].clone()).max().unwrap();
        for exit in unilateral_exits(game, kernel, set, family, player) {
            let own = exit_value(game, kernel, player, &exit, v[i]);
            let other = exit_value(game, kernel, player, &exit, v[1 - i]);
            if own >= h[i] && other >= h[1 - i] {
                controlled[i] = true;
            }
            if own >= max_vi {
                blocked[i] = false;
            }
        }
    }

    // Joint controllability: the payoff-pair hull meets the upper-right
    // quadrant at (H1, H2). Checking vertices and segment crossings is
    // exact and exhaustive in the plane.
    let points: Vec<[Rational; 2]> = joint_exits(game, kernel, set, family)
        .iter()
        .map(|&(s, a1, a2)| {
            let p1 = MixedAction::pure(game.num_actions(Player::One), a1);
            let p2 = MixedAction::pure(game.num_actions(Player::Two), a2);
            [
                shiftgame::game::expected_value(game, kernel, v[0], s, &p1, &p2).unwrap(),
                shiftgame::game::expected_value(game, kernel, v[1], s, &p1, &p2).unwrap(),
            ]
        })
        .collect();
    let jointly = hull_meets_quadrant(&points, &h);
    (controlled, jointly, blocked)
}

/// Does the convex hull of `points` intersect `{x >= floor.0, y >= floor.1}`?
fn hull_meets_quadrant(points: &[[Rational; 2]], floor: &[Rational; 2]) -> bool {
    if points
        .iter()
        .any(|p| p[0] >= floor[0] && p[1] >= floor[1])
    {
        return true;
    }
    // A segment between a point with x >= floor.x (but y short) and one with
    // y >= floor.y (but x short) may cross the corner.
    for a in points {
        for b in points {
            // Parameterize c(t) = a + t (b - a), t in [0, 1]; look for t with
            // both coordinates at least the floor. The coordinates are
            // monotone in t, so the witness interval is [t_x, 1] x [0, t_y]
            // style; intersect exactly.
            let (ax, ay, bx, by) = (&a[0], &a[1], &b[0], &b[1]);
            let dx = bx - ax;
            let dy = by - ay;
            // t range where x(t) >= floor.x.
            let tx = range_where_at_least(ax, &dx, &floor[0]);
            let ty = range_where_at_least(ay, &dy, &floor[1]);
            if let (Some((lo1, hi1)), Some((lo2, hi2))) = (tx, ty) {
                let lo = if lo1 > lo2 { lo1 } else { lo2 };
                let hi = if hi1 < hi2 { hi1 } else { hi2 };
                if lo <= hi {
                    return true;
                }
            }
        }
    }
    false
}

/// The sub-interval of [0,1] where `a + t d >= c`, if nonempty.
fn range_where_at_least(
    a: &Rational,
    d: &Rational,
    c: &Rational,
) -> Option<(Rational, Rational)> {
    let zero = Rational::zero();
    let one = Rational::one();
    if d.is_zero() {
        return if a >= c { Some((zero, one)) } else { None };
    }
    let t = (c - a) / d;
    if d.is_positive() {
        let lo = if t > zero { t } else { zero };
        if lo <= one {
            Some((lo, one))
        } else {
            None
        }
    } else {
        let hi = if t < one { t } else { one };
        if hi >= zero {
            Some((zero, hi))
        } else {
            None
        }
    }
}
