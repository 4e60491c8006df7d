//! Structural decomposition: communicating sets, exits, controlled/blocked
//! classification, the set families `F1`/`F2`/`F3` with exit distributions,
//! and the rewritten kernels `p_hat` and `p_tilde`.
//!
//! All predicates are exact over rationals. When value vectors are iterative
//! rather than exact, strict comparisons use a configurable margin and the
//! reports say so.

use std::collections::{BTreeMap, BTreeSet};

use num::{One, Signed, Zero};
use serde::Serialize;

use crate::game::{
    expected_value, step_probability_into, ActionId, KernelTag, MixedAction,
    MixedActionSetFamily, Player, StateId, StationaryStrategy, StochasticGame, TransitionKernel,
};
use crate::lp;
use crate::values::ValueVector;
use crate::{Error, Rational, Result};

/// Knobs for the decomposition searches.
#[derive(Debug, Clone)]
pub struct StructureConfig {
    /// Strictness margin replacing exact inequalities when values are
    /// iterative.
    pub margin: f64,
    /// Refuse subset enumeration beyond this many nonabsorbing states.
    pub subset_cap: usize,
    /// Cap on support-product assignment combinations per communication test.
    pub assignment_cap: usize,
    /// Cap on stationary strategies enumerated in the `p_tilde` audit.
    pub audit_strategy_cap: usize,
}

impl Default for StructureConfig {
    fn default() -> Self {
        StructureConfig {
            margin: 1e-6,
            subset_cap: 20,
            assignment_cap: 1 << 16,
            audit_strategy_cap: 4096,
        }
    }
}

fn margin_for(values: &ValueVector, config: &StructureConfig) -> Rational {
    values.accuracy.margin(config.margin)
}

// ---------------------------------------------------------------------------
// Closure and communication
// ---------------------------------------------------------------------------

fn check_subset_of_nonabsorbing(game: &StochasticGame, set: &BTreeSet<StateId>) -> Result<()> {
    if set.is_empty() {
        return Err(Error::NotNonabsorbing("empty set".into()));
    }
    for &s in set {
        if game.is_absorbing(s) {
            return Err(Error::NotNonabsorbing(game.state_name(s).to_string()));
        }
    }
    Ok(())
}

/// Condition 1 of communication: under every mixed-action pair of the family
/// the set cannot be left. Exact rational check over the finite lists.
pub fn is_closed(
    game: &StochasticGame,
    kernel: &TransitionKernel,
    set: &BTreeSet<StateId>,
    family: &MixedActionSetFamily,
) -> Result<bool> {
    check_subset_of_nonabsorbing(game, set)?;
    for &s in set {
        for x1 in family.cell(Player::One, s) {
            for x2 in family.cell(Player::Two, s) {
                let stay = step_probability_into(game, kernel, set, s, x1, x2)?;
                if !stay.is_one() {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// One state's admissible support product: action subsets per player whose
/// pure combinations all keep the play inside the set, containing the
/// support of some base pair from the family.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SupportProduct {
    pub p1: Vec<ActionId>,
    pub p2: Vec<ActionId>,
    /// Index of the base pair `(i, j)` into the family cells at this state.
    pub base: (usize, usize),
}

impl SupportProduct {
    /// A concrete stationary perturbation on this product: half the base
    /// pair, half uniform over the grown support.
    pub fn realize(
        &self,
        family: &MixedActionSetFamily,
        s: StateId,
        n1: usize,
        n2: usize,
    ) -> (MixedAction, MixedAction) {
        let half = Rational::new(1.into(), 2.into());
        let b1 = &family.cell(Player::One, s)[self.base.0];
        let b2 = &family.cell(Player::Two, s)[self.base.1];
        let u1 = MixedAction::uniform_over(n1, &self.p1);
        let u2 = MixedAction::uniform_over(n2, &self.p2);
        (b1.mix(&u1, &half), b2.mix(&u2, &half))
    }
}

/// Stationary funnel witnessing one ordered communication pair: a support
/// product per state of the set.
pub type Funnel = BTreeMap<StateId, SupportProduct>;

/// Witness for a communicating set: one funnel per ordered state pair.
#[derive(Debug, Clone, Default)]
pub struct CommunicationWitness {
    pub funnels: BTreeMap<(StateId, StateId), Funnel>,
}

/// Pure action pairs at `s` that keep the play inside `set` with
/// probability one.
fn safe_pairs(
    game: &StochasticGame,
    kernel: &TransitionKernel,
    set: &BTreeSet<StateId>,
    s: StateId,
) -> Vec<(ActionId, ActionId)> {
    let n1 = game.num_actions(Player::One);
    let n2 = game.num_actions(Player::Two);
    let mut out = Vec::new();
    for a1 in 0..n1 {
        for a2 in 0..n2 {
            if kernel.prob_into(set, s, a1, a2).is_one() {
                out.push((a1, a2));
            }
        }
    }
    out
}

fn product_is_safe(safe: &BTreeSet<(ActionId, ActionId)>, t1: &[ActionId], t2: &[ActionId]) -> bool {
    t1.iter()
        .all(|&a1| t2.iter().all(|&a2| safe.contains(&(a1, a2))))
}

/// All admissible support products at `s`: grown greedily per base pair,
/// plus the full enumeration of safe supersets (deduplicated).
fn candidate_products(
    game: &StochasticGame,
    kernel: &TransitionKernel,
    set: &BTreeSet<StateId>,
    family: &MixedActionSetFamily,
    s: StateId,
    exhaustive: bool,
) -> Vec<SupportProduct> {
    let n1 = game.num_actions(Player::One);
    let n2 = game.num_actions(Player::Two);
    let safe: BTreeSet<(ActionId, ActionId)> =
        safe_pairs(game, kernel, set, s).into_iter().collect();
    let mut out: Vec<SupportProduct> = Vec::new();
    let push = |p: SupportProduct, out: &mut Vec<SupportProduct>| {
        if !out.iter().any(|q| q.p1 == p.p1 && q.p2 == p.p2) {
            out.push(p);
        }
    };
    for (bi, x1) in family.cell(Player::One, s).iter().enumerate() {
        for (bj, x2) in family.cell(Player::Two, s).iter().enumerate() {
            let s1 = x1.support();
            let s2 = x2.support();
            if !product_is_safe(&safe, &s1, &s2) {
                continue;
            }
            // Greedy growth in lexicographic action order.
            let mut t1 = s1.clone();
            let mut t2 = s2.clone();
            for a in 0..n1 {
                if !t1.contains(&a) {
                    let mut cand = t1.clone();
                    cand.push(a);
                    cand.sort_unstable();
                    if product_is_safe(&safe, &cand, &t2) {
                        t1 = cand;
                    }
                }
            }
            for b in 0..n2 {
                if !t2.contains(&b) {
                    let mut cand = t2.clone();
                    cand.push(b);
                    cand.sort_unstable();
                    if product_is_safe(&safe, &t1, &cand) {
                        t2 = cand;
                    }
                }
            }
            push(
                SupportProduct {
                    p1: t1,
                    p2: t2,
                    base: (bi, bj),
                },
                &mut out,
            );
            if exhaustive {
                // Every safe superset product of the base supports.
                let extra1: Vec<ActionId> = (0..n1).filter(|a| !s1.contains(a)).collect();
                let extra2: Vec<ActionId> = (0..n2).filter(|b| !s2.contains(b)).collect();
                for m1 in 0..(1usize << extra1.len()) {
                    for m2 in 0..(1usize << extra2.len()) {
                        let mut t1 = s1.clone();
                        for (k, &a) in extra1.iter().enumerate() {
                            if m1 & (1 << k) != 0 {
                                t1.push(a);
                            }
                        }
                        let mut t2 = s2.clone();
                        for (k, &b) in extra2.iter().enumerate() {
                            if m2 & (1 << k) != 0 {
                                t2.push(b);
                            }
                        }
                        t1.sort_unstable();
                        t2.sort_unstable();
                        if product_is_safe(&safe, &t1, &t2) {
                            push(
                                SupportProduct {
                                    p1: t1,
                                    p2: t2,
                                    base: (bi, bj),
                                },
                                &mut out,
                            );
                        }
                    }
                }
            }
        }
    }
    out
}

/// Successor states (within the set) induced by a support product at `s`.
fn product_successors(
    kernel: &TransitionKernel,
    s: StateId,
    product: &SupportProduct,
) -> BTreeSet<StateId> {
    let mut out = BTreeSet::new();
    for &a1 in &product.p1 {
        for &a2 in &product.p2 {
            for (t, p) in kernel.row(s, a1, a2).iter().enumerate() {
                if p.is_positive() {
                    out.insert(t);
                }
            }
        }
    }
    out
}

/// Strongly connected components of a small digraph (Kosaraju).
fn sccs(nodes: &[StateId], succ: &BTreeMap<StateId, BTreeSet<StateId>>) -> Vec<BTreeSet<StateId>> {
    let node_set: BTreeSet<StateId> = nodes.iter().copied().collect();
    let mut order = Vec::new();
    let mut seen = BTreeSet::new();
    for &start in nodes {
        if seen.contains(&start) {
            continue;
        }
        // Iterative post-order DFS.
        let mut stack = vec![(start, false)];
        while let Some((u, processed)) = stack.pop() {
            if processed {
                order.push(u);
                continue;
            }
            if !seen.insert(u) {
                continue;
            }
            stack.push((u, true));
            if let Some(next) = succ.get(&u) {
                for &w in next {
                    if node_set.contains(&w) && !seen.contains(&w) {
                        stack.push((w, false));
                    }
                }
            }
        }
    }
    let mut rev: BTreeMap<StateId, BTreeSet<StateId>> = BTreeMap::new();
    for (&u, next) in succ {
        for &w in next {
            if node_set.contains(&u) && node_set.contains(&w) {
                rev.entry(w).or_default().insert(u);
            }
        }
    }
    let mut assigned = BTreeSet::new();
    let mut components = Vec::new();
    for &u in order.iter().rev() {
        if assigned.contains(&u) {
            continue;
        }
        let mut comp = BTreeSet::new();
        let mut stack = vec![u];
        while let Some(v) = stack.pop() {
            if !assigned.insert(v) {
                continue;
            }
            comp.insert(v);
            if let Some(prev) = rev.get(&v) {
                for &w in prev {
                    if !assigned.contains(&w) {
                        stack.push(w);
                    }
                }
            }
        }
        components.push(comp);
    }
    components
}

/// Exact almost-sure-hitting test on a support digraph: with `target` made
/// terminal, every bottom strongly connected component reachable from
/// `from` must be `{target}`.
fn almost_surely_hits(
    succ: &BTreeMap<StateId, BTreeSet<StateId>>,
    from: StateId,
    target: StateId,
) -> bool {
    if from == target {
        return true;
    }
    let mut stopped = succ.clone();
    stopped.insert(target, BTreeSet::new());
    // Reachable set from `from`.
    let mut reach = BTreeSet::new();
    let mut stack = vec![from];
    while let Some(u) = stack.pop() {
        if !reach.insert(u) {
            continue;
        }
        if let Some(next) = stopped.get(&u) {
            for &w in next {
                if !reach.contains(&w) {
                    stack.push(w);
                }
            }
        }
    }
    if !reach.contains(&target) {
        return false;
    }
    let nodes: Vec<StateId> = reach.iter().copied().collect();
    let comps = sccs(&nodes, &stopped);
    for comp in comps {
        let leaves = comp.iter().any(|&u| {
            stopped
                .get(&u)
                .map(|next| next.iter().any(|w| reach.contains(w) && !comp.contains(w)))
                .unwrap_or(false)
        });
        if leaves {
            continue;
        }
        // Bottom component: must be exactly the terminal target.
        if !(comp.len() == 1 && comp.contains(&target)) {
            return false;
        }
    }
    true
}

/// States reachable from `start` in the support digraph.
fn reachable_from(
    succ: &BTreeMap<StateId, BTreeSet<StateId>>,
    start: StateId,
) -> BTreeSet<StateId> {
    let mut reach = BTreeSet::new();
    let mut stack = vec![start];
    while let Some(u) = stack.pop() {
        if !reach.insert(u) {
            continue;
        }
        if let Some(next) = succ.get(&u) {
            for &w in next {
                if !reach.contains(&w) {
                    stack.push(w);
                }
            }
        }
    }
    reach
}

/// Searches for a per-state support-product assignment whose induced chain
/// stays in the set forever and hits `target` almost surely from `from`
/// (from every state of the set when `from` is `None`).
///
/// States without any safe support product simply get no successors; play
/// reaching one would leak out of the set, so assignments routing through
/// them are rejected by the hit and stay tests.
fn find_funnel(
    game: &StochasticGame,
    kernel: &TransitionKernel,
    set: &BTreeSet<StateId>,
    family: &MixedActionSetFamily,
    from: Option<StateId>,
    target: StateId,
    cap: usize,
) -> Option<Funnel> {
    let states: Vec<StateId> = set.iter().copied().collect();
    let try_assignment = |capable: &[StateId], choice: &[&SupportProduct]| -> Option<Funnel> {
        let succ: BTreeMap<StateId, BTreeSet<StateId>> = capable
            .iter()
            .zip(choice)
            .map(|(&s, prod)| (s, product_successors(kernel, s, prod)))
            .collect();
        // Staying in the set forever after the hit: every state reachable
        // from the target must carry a safe product.
        let stays = reachable_from(&succ, target)
            .iter()
            .all(|u| succ.contains_key(u));
        if !stays {
            return None;
        }
        let hit_ok = match from {
            Some(f) => almost_surely_hits(&succ, f, target),
            None => capable.iter().all(|&f| almost_surely_hits(&succ, f, target)),
        };
        if !hit_ok {
            return None;
        }
        Some(
            capable
                .iter()
                .zip(choice)
                .map(|(&s, p)| (s, (*p).clone()))
                .collect(),
        )
    };

    // Greedy first: per state the first greedily grown product.
    let greedy: Vec<(StateId, Vec<SupportProduct>)> = states
        .iter()
        .map(|&s| (s, candidate_products(game, kernel, set, family, s, false)))
        .collect();
    let capable: Vec<StateId> = greedy
        .iter()
        .filter(|(_, c)| !c.is_empty())
        .map(|(s, _)| *s)
        .collect();
    if !capable.contains(&target) || from.map(|f| !capable.contains(&f)).unwrap_or(false) {
        return None;
    }
    if from.is_none() && capable.len() != states.len() {
        return None;
    }
    let greedy_lists: Vec<&Vec<SupportProduct>> = greedy
        .iter()
        .filter(|(_, c)| !c.is_empty())
        .map(|(_, c)| c)
        .collect();
    let first: Vec<&SupportProduct> = greedy_lists.iter().map(|c| &c[0]).collect();
    if let Some(f) = try_assignment(&capable, &first) {
        return Some(f);
    }

    // Full biclique enumeration fallback.
    let full: Vec<Vec<SupportProduct>> = capable
        .iter()
        .map(|&s| candidate_products(game, kernel, set, family, s, true))
        .collect();
    let mut total: usize = 1;
    for c in &full {
        total = total.saturating_mul(c.len());
        if total > cap {
            return None;
        }
    }
    let mut idx = vec![0usize; capable.len()];
    loop {
        let choice: Vec<&SupportProduct> = idx.iter().zip(&full).map(|(&i, c)| &c[i]).collect();
        if let Some(f) = try_assignment(&capable, &choice) {
            return Some(f);
        }
        // Next index vector.
        let mut k = 0;
        loop {
            if k == idx.len() {
                return None;
            }
            idx[k] += 1;
            if idx[k] < full[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Public funnel search: one stationary support-product assignment steering
/// the play from every state of the set to `target` almost surely without
/// leaving the set. Used by the exit-implementation machinery.
pub fn funnel_to(
    game: &StochasticGame,
    kernel: &TransitionKernel,
    set: &BTreeSet<StateId>,
    family: &MixedActionSetFamily,
    target: StateId,
    cap: usize,
) -> Option<Funnel> {
    find_funnel(game, kernel, set, family, None, target, cap)
}

/// Communication test: closure plus, for every ordered state pair, a
/// stationary perturbation of the family that stays in the set almost surely
/// and hits the target almost surely. Returns the witness funnels.
pub fn is_communicating(
    game: &StochasticGame,
    kernel: &TransitionKernel,
    set: &BTreeSet<StateId>,
    family: &MixedActionSetFamily,
    config: &StructureConfig,
) -> Result<(bool, CommunicationWitness)> {
    if !is_closed(game, kernel, set, family)? {
        return Err(Error::NotClosed(format!(
            "{:?}",
            game.state_names(set)
        )));
    }
    let mut witness = CommunicationWitness::default();
    for &from in set {
        for &to in set {
            if from == to {
                continue;
            }
            match find_funnel(game, kernel, set, family, Some(from), to, config.assignment_cap) {
                Some(f) => {
                    witness.funnels.insert((from, to), f);
                }
                None => return Ok((false, CommunicationWitness::default())),
            }
        }
    }
    Ok((true, witness))
}

// ---------------------------------------------------------------------------
// Exits
// ---------------------------------------------------------------------------

/// A unilateral exit `(s, a_i, x_j)`: the deviating player's action leaves
/// the set with positive probability while the same player has a family
/// action keeping the play inside against `x_j`.
#[derive(Debug, Clone, Serialize)]
pub struct UnilateralExit {
    pub state: StateId,
    pub player: Player,
    pub action: ActionId,
    pub opponent_mix: MixedAction,
    pub stay_witness: MixedAction,
    #[serde(serialize_with = "crate::game::serialize_rational")]
    pub leave_prob: Rational,
}

/// A joint exit `(s, a1, a2)` with the witnessing family pair.
#[derive(Debug, Clone, Serialize)]
pub struct JointExit {
    pub state: StateId,
    pub a1: ActionId,
    pub a2: ActionId,
    pub witness: (MixedAction, MixedAction),
    #[serde(serialize_with = "crate::game::serialize_rational")]
    pub leave_prob: Rational,
}

/// All exits of a set: unilateral per player and joint.
#[derive(Debug, Clone, Default)]
pub struct ExitSets {
    pub unilateral: [Vec<UnilateralExit>; 2],
    pub joint: Vec<JointExit>,
}

/// Exact enumeration of unilateral and joint exits over the finite family
/// lists.
pub fn enumerate_exits(
    game: &StochasticGame,
    kernel: &TransitionKernel,
    set: &BTreeSet<StateId>,
    family: &MixedActionSetFamily,
) -> Result<ExitSets> {
    check_subset_of_nonabsorbing(game, set)?;
    let mut out = ExitSets::default();
    for &s in set {
        for player in Player::BOTH {
            let opp = player.opponent();
            for opp_mix in family.cell(opp, s) {
                // Stay witness for the deviating player.
                let witness = family.cell(player, s).iter().find(|x_i| {
                    let (x1, x2) = orient(player, x_i, opp_mix);
                    step_probability_into(game, kernel, set, s, x1, x2)
                        .map(|p| p.is_one())
                        .unwrap_or(false)
                });
                let Some(stay) = witness else { continue };
                for a in 0..game.num_actions(player) {
                    let pure = MixedAction::pure(game.num_actions(player), a);
                    let (x1, x2) = orient(player, &pure, opp_mix);
                    let stay_prob = step_probability_into(game, kernel, set, s, x1, x2)?;
                    if stay_prob < Rational::one() {
                        out.unilateral[player.index()].push(UnilateralExit {
                            state: s,
                            player,
                            action: a,
                            opponent_mix: opp_mix.clone(),
                            stay_witness: stay.clone(),
                            leave_prob: Rational::one() - stay_prob,
                        });
                    }
                }
            }
        }
        // Joint exits.
        let n1 = game.num_actions(Player::One);
        let n2 = game.num_actions(Player::Two);
        for a1 in 0..n1 {
            for a2 in 0..n2 {
                let leave = Rational::one() - kernel.prob_into(set, s, a1, a2);
                if !leave.is_positive() {
                    continue;
                }
                let p1 = MixedAction::pure(n1, a1);
                let p2 = MixedAction::pure(n2, a2);
                let mut found = None;
                'search: for x1 in family.cell(Player::One, s) {
                    for x2 in family.cell(Player::Two, s) {
                        let pair_stays =
                            step_probability_into(game, kernel, set, s, x1, x2)?.is_one();
                        let a1_stays =
                            step_probability_into(game, kernel, set, s, &p1, x2)?.is_one();
                        let a2_stays =
                            step_probability_into(game, kernel, set, s, x1, &p2)?.is_one();
                        if pair_stays && a1_stays && a2_stays {
                            found = Some((x1.clone(), x2.clone()));
                            break 'search;
                        }
                    }
                }
                if let Some(witness) = found {
                    out.joint.push(JointExit {
                        state: s,
                        a1,
                        a2,
                        witness,
                        leave_prob: leave,
                    });
                }
            }
        }
    }
    Ok(out)
}

fn orient<'a>(
    player: Player,
    own: &'a MixedAction,
    opp: &'a MixedAction,
) -> (&'a MixedAction, &'a MixedAction) {
    match player {
        Player::One => (own, opp),
        Player::Two => (opp, own),
    }
}

/// Expected continuation value of `v` through a unilateral exit.
pub fn exit_expected_value(
    game: &StochasticGame,
    kernel: &TransitionKernel,
    exit: &UnilateralExit,
    v: &[Rational],
) -> Result<Rational> {
    let pure = MixedAction::pure(game.num_actions(exit.player), exit.action);
    let (x1, x2) = orient(exit.player, &pure, &exit.opponent_mix);
    expected_value(game, kernel, v, exit.state, x1, x2)
}

fn joint_expected_value(
    game: &StochasticGame,
    kernel: &TransitionKernel,
    exit: &JointExit,
    v: &[Rational],
) -> Result<Rational> {
    let p1 = MixedAction::pure(game.num_actions(Player::One), exit.a1);
    let p2 = MixedAction::pure(game.num_actions(Player::Two), exit.a2);
    expected_value(game, kernel, v, exit.state, &p1, &p2)
}

// ---------------------------------------------------------------------------
// H-values and classification
// ---------------------------------------------------------------------------

/// `H_i(C, X)`: the maximal expected continuation maxmin value of `player`
/// over `(s, a_i, x_j)` with the opponent restricted to the family cells.
/// Returns the maximum and an attaining triplet.
pub fn h_value(
    game: &StochasticGame,
    kernel: &TransitionKernel,
    set: &BTreeSet<StateId>,
    family: &MixedActionSetFamily,
    player: Player,
    v: &ValueVector,
    config: &StructureConfig,
) -> Result<(Rational, (StateId, ActionId, MixedAction))> {
    check_subset_of_nonabsorbing(game, set)?;
    let opp = player.opponent();
    let mut best: Option<(Rational, (StateId, ActionId, MixedAction))> = None;
    for &s in set {
        for a in 0..game.num_actions(player) {
            let pure = MixedAction::pure(game.num_actions(player), a);
            for x_j in family.cell(opp, s) {
                let (x1, x2) = orient(player, &pure, x_j);
                let val = expected_value(game, kernel, &v.values, s, x1, x2)?;
                if best.as_ref().map(|(b, _)| val > *b).unwrap_or(true) {
                    best = Some((val, (s, a, x_j.clone())));
                }
            }
        }
    }
    let (h, arg) = best.ok_or(Error::EmptyMatrix)?;
    let max_v = set.iter().map(|&s| v.values[s].clone()).max().unwrap();
    let margin = margin_for(v, config);
    if h < &max_v - &margin {
        return Err(Error::ValueCheck(format!(
            "H_{}(C) fell below the maximal maxmin value in C",
            player
        )));
    }
    Ok((h, arg))
}

/// Classification of a communicating set against a family and value vectors.
#[derive(Debug, Clone)]
pub struct SetClassification {
    pub set: BTreeSet<StateId>,
    pub h: [Rational; 2],
    /// Witness exit making the set controlled by the player, if any.
    pub controlled_by: [Option<UnilateralExit>; 2],
    /// Mixture over joint exits satisfying both H-floors, if any.
    pub jointly_controlled: Option<Vec<(JointExit, Rational)>>,
    pub blocked_to: [bool; 2],
    /// Best unilateral exit per player by expected own continuation value.
    pub best_exit: [Option<UnilateralExit>; 2],
    pub exits: ExitSets,
}

/// Classifies a communicating set: controlled/jointly controlled/blocked
/// flags with witnesses, per the exit definitions.
pub fn classify_set(
    game: &StochasticGame,
    kernel: &TransitionKernel,
    set: &BTreeSet<StateId>,
    family: &MixedActionSetFamily,
    v: [&ValueVector; 2],
    config: &StructureConfig,
) -> Result<SetClassification> {
    let (comm, _) = is_communicating(game, kernel, set, family, config)?;
    if !comm {
        return Err(Error::NotCommunicating(format!(
            "{:?}",
            game.state_names(set)
        )));
    }
    let exits = enumerate_exits(game, kernel, set, family)?;
    let mut h = [Rational::zero(), Rational::zero()];
    for p in Player::BOTH {
        h[p.index()] = h_value(game, kernel, set, family, p, v[p.index()], config)?.0;
    }
    let margins = [
        margin_for(v[0], config),
        margin_for(v[1], config),
    ];

    let mut controlled_by: [Option<UnilateralExit>; 2] = [None, None];
    let mut best_exit: [Option<UnilateralExit>; 2] = [None, None];
    let mut blocked_to = [true, true];
    for p in Player::BOTH {
        let i = p.index();
        let max_vi = set.iter().map(|&s| v[i].values[s].clone()).max().unwrap();
        let mut best_val: Option<Rational> = None;
        for exit in &exits.unilateral[i] {
            let own = exit_expected_value(game, kernel, exit, &v[i].values)?;
            if best_val.as_ref().map(|b| own > *b).unwrap_or(true) {
                best_val = Some(own.clone());
                best_exit[i] = Some(exit.clone());
            }
            // Blocked: every unilateral exit strictly lowers the value.
            if own >= &max_vi - &margins[i] {
                blocked_to[i] = false;
            }
            // Controlled: this exit satisfies both players' H-floors.
            let other = exit_expected_value(game, kernel, exit, &v[1 - i].values)?;
            let ok_own = own >= &h[i] - &margins[i];
            let ok_other = other >= &h[1 - i] - &margins[1 - i];
            if ok_own && ok_other {
                let better = match &controlled_by[i] {
                    None => true,
                    Some(cur) => {
                        let cur_own = exit_expected_value(game, kernel, cur, &v[i].values)?;
                        own > cur_own
                    }
                };
                if better {
                    controlled_by[i] = Some(exit.clone());
                }
            }
        }
    }

    // Joint controllability via the exact two-constraint mixture program.
    let jointly_controlled = if exits.joint.is_empty() {
        None
    } else {
        let points: Vec<[Rational; 2]> = exits
            .joint
            .iter()
            .map(|e| {
                Ok([
                    joint_expected_value(game, kernel, e, &v[0].values)?,
                    joint_expected_value(game, kernel, e, &v[1].values)?,
                ])
            })
            .collect::<Result<_>>()?;
        let floors = [
            &h[0] - &margins[0],
            &h[1] - &margins[1],
        ];
        let (slack, weights) = lp::best_two_sided_mixture(&points, &floors)?;
        if slack.is_negative() {
            None
        } else {
            Some(
                exits
                    .joint
                    .iter()
                    .cloned()
                    .zip(weights)
                    .filter(|(_, w)| w.is_positive())
                    .collect(),
            )
        }
    };

    Ok(SetClassification {
        set: set.clone(),
        h,
        controlled_by,
        jointly_controlled,
        blocked_to,
        best_exit,
        exits,
    })
}

// ---------------------------------------------------------------------------
// Families F1, F2, F3
// ---------------------------------------------------------------------------

/// Who implements the exit of an `F1` set.
#[derive(Debug, Clone)]
pub enum ExitController {
    /// Player 2's unilateral exit.
    PlayerTwo(UnilateralExit),
    /// Mixture over joint exits.
    Joint(Vec<(JointExit, Rational)>),
}

/// One set of the first family with its chosen exit distribution.
#[derive(Debug, Clone)]
pub struct F1Set {
    pub states: BTreeSet<StateId>,
    pub controller: ExitController,
    /// The exit distribution `q` over all states.
    pub q: Vec<Rational>,
    pub h: [Rational; 2],
}

/// One set of the second family.
#[derive(Debug, Clone)]
pub struct F2Set {
    pub states: BTreeSet<StateId>,
    /// Player 1's restricted cells on the set (`Y1^D`).
    pub y1d: BTreeMap<StateId, Vec<MixedAction>>,
    /// The selected player-1 exit: `(state, a1, y2)`.
    pub exit: UnilateralExit,
    pub q: Vec<Rational>,
    pub h: [Rational; 2],
    /// Stationary funnel moving every state of the set to the exit state
    /// under `p_hat`.
    pub funnel: Funnel,
}

/// A member of the third family with its provenance.
#[derive(Debug, Clone)]
pub enum F3Set {
    FromF1(F1Set),
    FromF2(F2Set),
}

impl F3Set {
    pub fn states(&self) -> &BTreeSet<StateId> {
        match self {
            F3Set::FromF1(c) => &c.states,
            F3Set::FromF2(d) => &d.states,
        }
    }

    pub fn q(&self) -> &[Rational] {
        match self {
            F3Set::FromF1(c) => &c.q,
            F3Set::FromF2(d) => &d.q,
        }
    }
}

/// Full structural decomposition of a game against a family.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub f1: Vec<F1Set>,
    pub f2: Vec<F2Set>,
    pub f3: Vec<F3Set>,
    pub p_hat: TransitionKernel,
    pub p_tilde: TransitionKernel,
    /// The stationary player-1 strategy used by the `F2` machinery.
    pub z1: StationaryStrategy,
}

impl Decomposition {
    pub fn f1_states(&self) -> BTreeSet<StateId> {
        self.f1.iter().flat_map(|c| c.states.iter().copied()).collect()
    }

    pub fn f2_states(&self) -> BTreeSet<StateId> {
        self.f2.iter().flat_map(|d| d.states.iter().copied()).collect()
    }

    pub fn f3_states(&self) -> BTreeSet<StateId> {
        self.f3.iter().flat_map(|e| e.states().iter().copied()).collect()
    }
}

fn subsets_ascending(states: &[StateId]) -> Vec<BTreeSet<StateId>> {
    let n = states.len();
    let mut all: Vec<BTreeSet<StateId>> = (1..(1usize << n))
        .map(|mask| {
            (0..n)
                .filter(|k| mask & (1 << k) != 0)
                .map(|k| states[k])
                .collect()
        })
        .collect();
    all.sort_by_key(|s| s.len());
    all
}

fn values_constant(
    set: &BTreeSet<StateId>,
    v: &ValueVector,
    config: &StructureConfig,
) -> bool {
    let margin = margin_for(v, config);
    let lo = set.iter().map(|&s| v.values[s].clone()).min().unwrap();
    let hi = set.iter().map(|&s| v.values[s].clone()).max().unwrap();
    hi - lo <= margin
}

/// Builds the first family: maximal communicating sets with constant values
/// that are blocked to player 1, each with an exit distribution chosen per
/// the controlled-by-2 / jointly-controlled dichotomy, and the kernel
/// `p_hat` resolving them.
pub fn build_f1(
    game: &StochasticGame,
    family: &MixedActionSetFamily,
    v: [&ValueVector; 2],
    config: &StructureConfig,
) -> Result<(Vec<F1Set>, TransitionKernel)> {
    let s0: Vec<StateId> = game.nonabsorbing().into_iter().collect();
    if s0.len() > config.subset_cap {
        return Err(Error::InvalidParameter(format!(
            "subset enumeration over {} states exceeds the cap {}",
            s0.len(),
            config.subset_cap
        )));
    }

    let mut qualifying: Vec<(BTreeSet<StateId>, SetClassification)> = Vec::new();
    for set in subsets_ascending(&s0) {
        if !is_closed(game, &game.kernel, &set, family)? {
            continue;
        }
        if !values_constant(&set, v[0], config) || !values_constant(&set, v[1], config) {
            continue;
        }
        let (comm, _) = is_communicating(game, &game.kernel, &set, family, config)?;
        if !comm {
            continue;
        }
        let class = classify_set(game, &game.kernel, &set, family, v, config)?;
        if !class.blocked_to[Player::One.index()] {
            continue;
        }
        qualifying.push((set, class));
    }

    // (P4): retain maximal sets only.
    let mut f1_sets: Vec<(BTreeSet<StateId>, SetClassification)> = Vec::new();
    for (set, class) in &qualifying {
        let maximal = !qualifying
            .iter()
            .any(|(other, _)| other.len() > set.len() && set.is_subset(other));
        if maximal {
            f1_sets.push((set.clone(), class.clone()));
        }
    }
    for (i, (a, _)) in f1_sets.iter().enumerate() {
        for (b, _) in f1_sets.iter().skip(i + 1) {
            if !a.is_disjoint(b) {
                return Err(Error::ValueCheck(format!(
                    "maximal F1 sets intersect: {:?} and {:?}",
                    game.state_names(a),
                    game.state_names(b)
                )));
            }
        }
    }

    let mut out = Vec::new();
    for (set, class) in f1_sets {
        let controller = match &class.controlled_by[Player::Two.index()] {
            Some(exit) => ExitController::PlayerTwo(exit.clone()),
            None => match &class.jointly_controlled {
                Some(mix) => ExitController::Joint(mix.clone()),
                None => {
                    return Err(Error::DichotomyViolated {
                        set: game.state_names(&set),
                        detail: "neither controlled by player 2 nor jointly controlled; \
                                 tolerance failure or inconsistent family"
                            .into(),
                    })
                }
            },
        };
        let q = exit_distribution(game, &controller)?;
        out.push(F1Set {
            states: set,
            controller,
            q,
            h: class.h.clone(),
        });
    }
    let p_hat = rewrite_kernel(game, KernelTag::PHat, &collect_rewrites_f1(&out));
    Ok((out, p_hat))
}

fn exit_distribution(game: &StochasticGame, controller: &ExitController) -> Result<Vec<Rational>> {
    let n = game.num_states();
    match controller {
        ExitController::PlayerTwo(exit) => {
            let pure = MixedAction::pure(game.num_actions(Player::Two), exit.action);
            crate::game::step_distribution(
                game,
                &game.kernel,
                exit.state,
                &exit.opponent_mix,
                &pure,
            )
        }
        ExitController::Joint(mix) => {
            let mut q = vec![Rational::zero(); n];
            for (exit, w) in mix {
                let row = game.kernel.row(exit.state, exit.a1, exit.a2);
                for t in 0..n {
                    if row[t].is_positive() {
                        q[t] += w * &row[t];
                    }
                }
            }
            Ok(q)
        }
    }
}

fn collect_rewrites_f1(f1: &[F1Set]) -> Vec<(BTreeSet<StateId>, Vec<Rational>)> {
    f1.iter()
        .map(|c| (c.states.clone(), c.q.clone()))
        .collect()
}

/// Rewrites the kernel: states of each listed set get the action-independent
/// row `q/2 + U/2`; everything else keeps the base kernel.
fn rewrite_kernel(
    game: &StochasticGame,
    tag: KernelTag,
    rewrites: &[(BTreeSet<StateId>, Vec<Rational>)],
) -> TransitionKernel {
    let n = game.num_states();
    let n1 = game.num_actions(Player::One);
    let n2 = game.num_actions(Player::Two);
    let half = Rational::new(1.into(), 2.into());
    let mut rows = Vec::with_capacity(n);
    for s in 0..n {
        let rewritten = rewrites.iter().find(|(set, _)| set.contains(&s));
        let row_for = |a1: usize, a2: usize| -> Vec<Rational> {
            match rewritten {
                Some((set, q)) => {
                    let u = Rational::new(1.into(), (set.len() as i64).into());
                    (0..n)
                        .map(|t| {
                            let mut p = &half * &q[t];
                            if set.contains(&t) {
                                p += &half * &u;
                            }
                            p
                        })
                        .collect()
                }
                None => game.kernel.row(s, a1, a2).to_vec(),
            }
        };
        rows.push(
            (0..n1)
                .map(|a1| (0..n2).map(|a2| row_for(a1, a2)).collect())
                .collect(),
        );
    }
    TransitionKernel::new(tag, rows)
}

/// Player 1's restricted cell `Y1^D(s)`: inside `S_F1` the full family cell;
/// outside, the mixed actions of player 1 whose set-leaving opponent actions
/// all strictly lower player 2's expected maxmin value.
///
/// The underlying definition ranges over the whole simplex of player 1; the
/// computable candidate list is the family cell enlarged with every pure
/// action, which covers the trap strategies the second family exists to
/// resolve.
fn y1d_cell(
    game: &StochasticGame,
    set: &BTreeSet<StateId>,
    s: StateId,
    family: &MixedActionSetFamily,
    f1_states: &BTreeSet<StateId>,
    v2: &ValueVector,
    config: &StructureConfig,
) -> Result<Vec<MixedAction>> {
    if f1_states.contains(&s) {
        return Ok(family.cell(Player::One, s).to_vec());
    }
    let margin = margin_for(v2, config);
    let v2d = v2.values[*set.iter().next().unwrap()].clone();
    let n1 = game.num_actions(Player::One);
    let n2 = game.num_actions(Player::Two);
    let mut candidates: Vec<MixedAction> = family.cell(Player::One, s).to_vec();
    for a1 in 0..n1 {
        let pure = MixedAction::pure(n1, a1);
        if !candidates.contains(&pure) {
            candidates.push(pure);
        }
    }
    let mut out = Vec::new();
    for x1 in candidates {
        let mut ok = true;
        for a2 in 0..n2 {
            let pure = MixedAction::pure(n2, a2);
            let stay = step_probability_into(game, &game.kernel, set, s, &x1, &pure)?;
            if stay < Rational::one() {
                let ev = expected_value(game, &game.kernel, &v2.values, s, &x1, &pure)?;
                if ev >= &v2d - &margin {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            out.push(x1);
        }
    }
    Ok(out)
}

/// Builds the second family on top of `p_hat`: maximal sets with constant
/// player-2 value whose restricted family communicates under `p_hat`, each
/// with player 1's value-respecting exit, plus the stationary strategy `z1`.
pub fn build_f2(
    game: &StochasticGame,
    p_hat: &TransitionKernel,
    family: &MixedActionSetFamily,
    v: [&ValueVector; 2],
    f1: &[F1Set],
    config: &StructureConfig,
) -> Result<(Vec<F2Set>, StationaryStrategy)> {
    let s0: Vec<StateId> = game.nonabsorbing().into_iter().collect();
    let f1_states: BTreeSet<StateId> = f1.iter().flat_map(|c| c.states.iter().copied()).collect();

    let mut qualifying: Vec<(BTreeSet<StateId>, BTreeMap<StateId, Vec<MixedAction>>)> = Vec::new();
    'candidates: for set in subsets_ascending(&s0) {
        if !values_constant(&set, v[1], config) {
            continue;
        }
        // Restricted family on the candidate set.
        let mut y1d = BTreeMap::new();
        for &s in &set {
            let cell = y1d_cell(game, &set, s, family, &f1_states, v[1], config)?;
            if cell.is_empty() {
                continue 'candidates;
            }
            y1d.insert(s, cell);
        }
        // (P'2) asks only for the communication funnels under p_hat; closure
        // of the restricted family is not part of the membership test. The
        // diagonal pairs matter: staying in the set forever is required even
        // when the target is the start state.
        let restricted = restricted_family(game, family, &y1d);
        let communicates = set.iter().all(|&to| {
            set.iter().all(|&from| {
                find_funnel(
                    game,
                    p_hat,
                    &set,
                    &restricted,
                    Some(from),
                    to,
                    config.assignment_cap,
                )
                .is_some()
            })
        });
        if !communicates {
            continue;
        }
        qualifying.push((set, y1d));
    }

    // Maximal sets only; then disjointness.
    let mut maximal: Vec<(BTreeSet<StateId>, BTreeMap<StateId, Vec<MixedAction>>)> = Vec::new();
    for (set, y1d) in &qualifying {
        if !qualifying
            .iter()
            .any(|(other, _)| other.len() > set.len() && set.is_subset(other))
        {
            maximal.push((set.clone(), y1d.clone()));
        }
    }
    for (i, (a, _)) in maximal.iter().enumerate() {
        for (b, _) in maximal.iter().skip(i + 1) {
            if !a.is_disjoint(b) {
                return Err(Error::ValueCheck(format!(
                    "maximal F2 sets intersect: {:?} and {:?}",
                    game.state_names(a),
                    game.state_names(b)
                )));
            }
        }
    }

    let n1 = game.num_actions(Player::One);
    let mut z1_actions: Vec<MixedAction> = (0..game.num_states())
        .map(|s| family.cell(Player::One, s)[0].clone())
        .collect();
    let mut out = Vec::new();
    for (set, y1d) in maximal {
        let restricted = restricted_family(game, family, &y1d);
        // Player-1 exits of the set under the original kernel.
        let exits = enumerate_exits(game, &game.kernel, &set, &restricted)?;
        let margin1 = margin_for(v[0], config);
        let margin2 = margin_for(v[1], config);
        let (h1, _) = h_value(game, &game.kernel, &set, &restricted, Player::One, v[0], config)?;
        let (h2, _) = h_value(game, &game.kernel, &set, &restricted, Player::Two, v[1], config)?;
        let mut best: Option<(Rational, UnilateralExit)> = None;
        for exit in &exits.unilateral[Player::One.index()] {
            let e1 = exit_expected_value(game, &game.kernel, exit, &v[0].values)?;
            let e2 = exit_expected_value(game, &game.kernel, exit, &v[1].values)?;
            if e1 >= &h1 - &margin1 && e2 >= &h2 - &margin2 {
                if best.as_ref().map(|(b, _)| e1 > *b).unwrap_or(true) {
                    best = Some((e1, exit.clone()));
                }
            }
        }
        let Some((_, exit)) = best else {
            return Err(Error::DichotomyViolated {
                set: game.state_names(&set),
                detail: "no player-1 exit satisfies both H-floors; tolerance failure \
                         or inconsistent family"
                    .into(),
            });
        };
        if f1_states.contains(&exit.state) {
            return Err(Error::ValueCheck(format!(
                "F2 exit state {} lies inside an F1 set",
                game.state_name(exit.state)
            )));
        }
        let pure = MixedAction::pure(n1, exit.action);
        let q = crate::game::step_distribution(
            game,
            &game.kernel,
            exit.state,
            &pure,
            &exit.opponent_mix,
        )?;
        // Funnel under p_hat reaching the exit state from everywhere.
        let funnel = find_funnel(
            game,
            p_hat,
            &set,
            &restricted,
            None,
            exit.state,
            config.assignment_cap,
        )
        .ok_or_else(|| Error::NotCommunicating(format!(
            "no stationary funnel to the exit state in {:?}",
            game.state_names(&set)
        )))?;
        // z1: the funnel bases off the exit state, a restricted cell at it.
        for (&s, product) in &funnel {
            if s != exit.state {
                z1_actions[s] = restricted.cell(Player::One, s)[product.base.0].clone();
            }
        }
        z1_actions[exit.state] = y1d[&exit.state][0].clone();
        out.push(F2Set {
            states: set,
            y1d,
            exit,
            q,
            h: [h1, h2],
            funnel,
        });
    }
    Ok((
        out,
        StationaryStrategy {
            player: Player::One,
            actions: z1_actions,
        },
    ))
}

fn restricted_family(
    game: &StochasticGame,
    family: &MixedActionSetFamily,
    y1d: &BTreeMap<StateId, Vec<MixedAction>>,
) -> MixedActionSetFamily {
    let mut cells1: Vec<Vec<MixedAction>> = (0..game.num_states())
        .map(|s| family.cell(Player::One, s).to_vec())
        .collect();
    for (&s, cell) in y1d {
        cells1[s] = cell.clone();
    }
    family.with_player_cells(Player::One, cells1)
}

/// Builds the third family (`F2` plus the `F1` sets disjoint from it) and
/// the kernel `p_tilde` resolving every set of it.
pub fn build_f3(
    game: &StochasticGame,
    f1: &[F1Set],
    f2: &[F2Set],
) -> Result<(Vec<F3Set>, TransitionKernel)> {
    let f2_states: BTreeSet<StateId> = f2.iter().flat_map(|d| d.states.iter().copied()).collect();
    let mut f3: Vec<F3Set> = Vec::new();
    let mut rewrites = Vec::new();
    for d in f2 {
        rewrites.push((d.states.clone(), d.q.clone()));
        f3.push(F3Set::FromF2(d.clone()));
    }
    for c in f1 {
        if c.states.is_disjoint(&f2_states) {
            rewrites.push((c.states.clone(), c.q.clone()));
            f3.push(F3Set::FromF1(c.clone()));
        }
    }
    for (i, a) in f3.iter().enumerate() {
        for b in f3.iter().skip(i + 1) {
            if !a.states().is_disjoint(b.states()) {
                return Err(Error::ValueCheck("F3 sets intersect".into()));
            }
        }
    }
    let p_tilde = rewrite_kernel(game, KernelTag::PTilde, &rewrites);
    Ok((f3, p_tilde))
}

/// Runs the full decomposition pipeline against a family and value vectors.
pub fn decompose(
    game: &StochasticGame,
    family: &MixedActionSetFamily,
    v: [&ValueVector; 2],
    config: &StructureConfig,
) -> Result<Decomposition> {
    let (f1, p_hat) = build_f1(game, family, v, config)?;
    let (f2, z1) = build_f2(game, &p_hat, family, v, &f1, config)?;
    let (f3, p_tilde) = build_f3(game, &f1, &f2)?;
    Ok(Decomposition {
        f1,
        f2,
        f3,
        p_hat,
        p_tilde,
        z1,
    })
}

// ---------------------------------------------------------------------------
// Audit
// ---------------------------------------------------------------------------

/// A counterexample found by the audit, as state names.
#[derive(Debug, Clone, Serialize)]
pub struct AuditFinding {
    pub kind: String,
    pub states: Vec<String>,
    pub detail: String,
}

/// Result of the exhaustive structural audit; findings are data, not errors.
#[derive(Debug, Clone, Default, Serialize)]
pub struct AuditReport {
    pub findings: Vec<AuditFinding>,
    /// True when the strategy enumeration hit its cap and was truncated.
    pub truncated: bool,
}

impl AuditReport {
    pub fn clean(&self) -> bool {
        self.findings.is_empty()
    }
}

/// Exhaustive search for forbidden configurations: sets closed under the
/// family w.r.t. `p_hat` that are blocked to player 1 with constant values,
/// and sets closed under `(x1, X2)` w.r.t. `p_tilde` that are blocked to
/// player 2 with constant player-2 values, for stationary `x1` drawn from
/// the family cells plus `z1`.
pub fn audit_structure(
    game: &StochasticGame,
    decomposition: &Decomposition,
    family: &MixedActionSetFamily,
    v: [&ValueVector; 2],
    config: &StructureConfig,
) -> Result<AuditReport> {
    let s0: Vec<StateId> = game.nonabsorbing().into_iter().collect();
    let mut report = AuditReport::default();
    if s0.is_empty() {
        return Ok(report);
    }
    if s0.len() > config.subset_cap {
        return Err(Error::InvalidParameter("audit subset cap exceeded".into()));
    }
    let margin1 = margin_for(v[0], config);
    let margin2 = margin_for(v[1], config);

    // Forbidden configuration on p_hat.
    for set in subsets_ascending(&s0) {
        if !is_closed(game, &decomposition.p_hat, &set, family)? {
            continue;
        }
        if !values_constant(&set, v[0], config) || !values_constant(&set, v[1], config) {
            continue;
        }
        let exits = enumerate_exits(game, &game.kernel, &set, family)?;
        let max_v1 = set.iter().map(|&s| v[0].values[s].clone()).max().unwrap();
        let blocked = exits.unilateral[0]
            .iter()
            .map(|e| exit_expected_value(game, &game.kernel, e, &v[0].values))
            .collect::<Result<Vec<_>>>()?
            .iter()
            .all(|ev| *ev < &max_v1 - &margin1);
        if blocked {
            report.findings.push(AuditFinding {
                kind: "p_hat_closed_blocked".into(),
                states: game.state_names(&set),
                detail: "closed under the family w.r.t. p_hat, blocked to player 1, \
                         constant values"
                    .into(),
            });
        }
    }

    // Forbidden configuration on p_tilde, quantified over stationary x1.
    let mut x1_candidates: Vec<StationaryStrategy> = Vec::new();
    let mut total: usize = 1;
    for s in 0..game.num_states() {
        total = total.saturating_mul(family.cell(Player::One, s).len());
    }
    if total > config.audit_strategy_cap {
        report.truncated = true;
    } else {
        let mut idx = vec![0usize; game.num_states()];
        loop {
            x1_candidates.push(StationaryStrategy {
                player: Player::One,
                actions: (0..game.num_states())
                    .map(|s| family.cell(Player::One, s)[idx[s]].clone())
                    .collect(),
            });
            let mut k = 0;
            loop {
                if k == idx.len() {
                    break;
                }
                idx[k] += 1;
                if idx[k] < family.cell(Player::One, k).len() {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if idx.iter().all(|&i| i == 0) {
                break;
            }
        }
    }
    x1_candidates.push(decomposition.z1.clone());

    for x1 in &x1_candidates {
        for set in subsets_ascending(&s0) {
            if !values_constant(&set, v[1], config) {
                continue;
            }
            // (C'1): closed under (x1, X2) w.r.t. p_tilde.
            let fam_x1 = family.with_player_cells(
                Player::One,
                x1.actions.iter().map(|m| vec![m.clone()]).collect(),
            );
            if !is_closed(game, &decomposition.p_tilde, &set, &fam_x1)? {
                continue;
            }
            // (C'2): blocked to player 2 under p_tilde.
            let exits = enumerate_exits(game, &decomposition.p_tilde, &set, &fam_x1)?;
            let max_v2 = set.iter().map(|&s| v[1].values[s].clone()).max().unwrap();
            let blocked = exits.unilateral[1]
                .iter()
                .map(|e| exit_expected_value(game, &decomposition.p_tilde, e, &v[1].values))
                .collect::<Result<Vec<_>>>()?
                .iter()
                .all(|ev| *ev < &max_v2 - &margin2);
            if blocked {
                report.findings.push(AuditFinding {
                    kind: "p_tilde_closed_blocked".into(),
                    states: game.state_names(&set),
                    detail: "closed under (x1, X2) w.r.t. p_tilde and blocked to \
                             player 2 with constant player-2 values"
                        .into(),
                });
            }
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Serialization of the decomposition report
// ---------------------------------------------------------------------------

/// JSON form of the full decomposition.
#[derive(Debug, Clone, Serialize)]
pub struct DecompositionReport {
    pub f1: Vec<FamilySetReport>,
    pub f2: Vec<FamilySetReport>,
    pub f3: Vec<FamilySetReport>,
    pub p_hat: Vec<KernelRowReport>,
    pub p_tilde: Vec<KernelRowReport>,
    pub z1: Vec<Vec<String>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FamilySetReport {
    pub states: Vec<String>,
    pub controller: String,
    /// Exit distribution as a sparse fraction map.
    pub q: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelRowReport {
    pub state: String,
    pub rewritten: bool,
    /// Sparse row (identical across action pairs when rewritten).
    pub rows: BTreeMap<String, BTreeMap<String, String>>,
}

impl Decomposition {
    pub fn to_report(&self, game: &StochasticGame) -> DecompositionReport {
        let sparse_q = |q: &[Rational]| -> BTreeMap<String, String> {
            q.iter()
                .enumerate()
                .filter(|(_, p)| p.is_positive())
                .map(|(t, p)| (game.state_name(t).to_string(), crate::game::format_rational(p)))
                .collect()
        };
        let set_report = |states: &BTreeSet<StateId>, controller: String, q: &[Rational]| {
            FamilySetReport {
                states: game.state_names(states),
                controller,
                q: sparse_q(q),
            }
        };
        let kernel_report = |kernel: &TransitionKernel| -> Vec<KernelRowReport> {
            let rewritten: BTreeSet<StateId> = self
                .f3
                .iter()
                .flat_map(|e| e.states().iter().copied())
                .collect();
            (0..game.num_states())
                .map(|s| {
                    let mut rows = BTreeMap::new();
                    for a1 in 0..game.num_actions(Player::One) {
                        for a2 in 0..game.num_actions(Player::Two) {
                            let key = format!(
                                "{}|{}",
                                game.actions[0][a1], game.actions[1][a2]
                            );
                            let row = kernel.row(s, a1, a2);
                            let sparse: BTreeMap<String, String> = row
                                .iter()
                                .enumerate()
                                .filter(|(_, p)| p.is_positive())
                                .map(|(t, p)| {
                                    (
                                        game.state_name(t).to_string(),
                                        crate::game::format_rational(p),
                                    )
                                })
                                .collect();
                            rows.insert(key, sparse);
                        }
                    }
                    KernelRowReport {
                        state: game.state_name(s).to_string(),
                        rewritten: rewritten.contains(&s),
                        rows,
                    }
                })
                .collect()
        };
        DecompositionReport {
            f1: self
                .f1
                .iter()
                .map(|c| {
                    let controller = match &c.controller {
                        ExitController::PlayerTwo(e) =>

                            format!("player2:{}:{}", game.state_name(e.state), game.actions[1][e.action]),
                        ExitController::Joint(_) => "joint".into(),
                    };
                    set_report(&c.states, controller, &c.q)
                })
                .collect(),
            f2: self
                .f2
                .iter()
                .map(|d| {
                    set_report(
                        &d.states,
                        format!(
                            "player1:{}:{}",
                            game.state_name(d.exit.state),
                            game.actions[0][d.exit.action]
                        ),
                        &d.q,
                    )
                })
                .collect(),
            f3: self
                .f3
                .iter()
                .map(|e| {
                    let provenance = match e {
                        F3Set::FromF1(_) => "f1".to_string(),
                        F3Set::FromF2(_) => "f2".to_string(),
                    };
                    set_report(e.states(), provenance, e.q())
                })
                .collect(),
            p_hat: kernel_report(&self.p_hat),
            p_tilde: kernel_report(&self.p_tilde),
            z1: self
                .z1
                .actions
                .iter()
                .map(|m| m.probs().iter().map(crate::game::format_rational).collect())
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::values::{recursive_value_vector, ValueConfig};

    fn loop_setup() -> (StochasticGame, MixedActionSetFamily, ValueVector, ValueVector) {
        let game = fixtures::g_loop();
        let family = fixtures::g_loop_family();
        let (v1, _) = recursive_value_vector(&game, Player::One, &ValueConfig::default()).unwrap();
        let (v2, _) = recursive_value_vector(&game, Player::Two, &ValueConfig::default()).unwrap();
        (game, family, v1, v2)
    }

    #[test]
    fn loop_set_is_closed_under_safe_family() {
        let (game, family, _, _) = loop_setup();
        let set: BTreeSet<StateId> = [0, 1].into_iter().collect();
        assert!(is_closed(&game, &game.kernel, &set, &family).unwrap());
    }

    #[test]
    fn loop_set_not_closed_when_family_allows_joint_pair() {
        let game = fixtures::g_loop();
        // Player 2's family cell at state 1 puts mass on bhat.
        let family = MixedActionSetFamily::new([
            vec![
                vec![MixedAction::pure(2, 1)],
                vec![MixedAction::pure(2, 0)],
                vec![MixedAction::pure(2, 0)],
            ],
            vec![
                vec![MixedAction::uniform(2)],
                vec![MixedAction::pure(2, 0)],
                vec![MixedAction::pure(2, 0)],
            ],
        ])
        .unwrap();
        let set: BTreeSet<StateId> = [0, 1].into_iter().collect();
        assert!(!is_closed(&game, &game.kernel, &set, &family).unwrap());
    }

    #[test]
    fn singleton_closed_set_communicates() {
        let game = fixtures::g_abs();
        // Absorbing-only game has no nonabsorbing singleton; use a self-loop.
        let doc = r#"{
            "states": ["s", "t"],
            "actions": {"p1": ["a"], "p2": ["b"]},
            "kernel": [
                {"from": "s", "a1": "a", "a2": "b", "to": "s", "prob": "1"},
                {"from": "t", "a1": "a", "a2": "b", "to": "t", "prob": "1"}
            ],
            "absorbing": {"t": {"g1": "-1", "g2": "1"}},
            "objective": {
                "p1": {"type": "recursive_absorbing", "default": "-1"},
                "p2": {"type": "recursive_absorbing", "default": "1"}
            }
        }"#;
        let _ = game;
        let game = crate::game::load_game(doc).unwrap();
        let family = fixtures::singleton_family(&game, 1);
        let set: BTreeSet<StateId> = [0].into_iter().collect();
        let (ok, _) =
            is_communicating(&game, &game.kernel, &set, &family, &StructureConfig::default())
                .unwrap();
        assert!(ok);
    }

    #[test]
    fn communication_requires_closure_first() {
        let game = fixtures::g_loop();
        let family = MixedActionSetFamily::new([
            vec![
                vec![MixedAction::pure(2, 1)],
                vec![MixedAction::pure(2, 0)],
                vec![MixedAction::pure(2, 0)],
            ],
            vec![
                vec![MixedAction::pure(2, 1)], // bhat: the joint pair leaves
                vec![MixedAction::pure(2, 0)],
                vec![MixedAction::pure(2, 0)],
            ],
        ])
        .unwrap();
        let set: BTreeSet<StateId> = [0, 1].into_iter().collect();
        let err = is_communicating(&game, &game.kernel, &set, &family, &StructureConfig::default())
            .unwrap_err();
        assert!(matches!(err, crate::Error::NotClosed(_)));
    }

    #[test]
    fn loop_set_communicates_via_cycle() {
        let (game, family, _, _) = loop_setup();
        let set: BTreeSet<StateId> = [0, 1].into_iter().collect();
        let (ok, witness) =
            is_communicating(&game, &game.kernel, &set, &family, &StructureConfig::default())
                .unwrap();
        assert!(ok);
        assert!(witness.funnels.contains_key(&(0, 1)));
        assert!(witness.funnels.contains_key(&(1, 0)));
    }

    #[test]
    fn loop_exits_enumerated() {
        let (game, family, _, _) = loop_setup();
        let set: BTreeSet<StateId> = [0, 1].into_iter().collect();
        let exits = enumerate_exits(&game, &game.kernel, &set, &family).unwrap();
        // Player 2 exits via bhat at state 1 against x1 = ahat.
        assert_eq!(exits.unilateral[1].len(), 1);
        let e = &exits.unilateral[1][0];
        assert_eq!(e.state, 0);
        assert_eq!(e.action, 1);
        assert!(e.leave_prob.is_one());
        // Player 1 has no exits: with x2 = b every row stays.
        assert!(exits.unilateral[0].is_empty());
        // No joint exits under this family (the witness x1 must avoid ahat).
        assert!(exits.joint.is_empty());
    }

    #[test]
    fn loop_classification_controlled_by_two() {
        let (game, family, v1, v2) = loop_setup();
        let set: BTreeSet<StateId> = [0, 1].into_iter().collect();
        let class = classify_set(
            &game,
            &game.kernel,
            &set,
            &family,
            [&v1, &v2],
            &StructureConfig::default(),
        )
        .unwrap();
        assert!(class.blocked_to[0]);
        assert!(!class.blocked_to[1]);
        assert!(class.controlled_by[1].is_some());
        assert!(class.jointly_controlled.is_none());
        // H-levels: player 1 pinned at -1, player 2 reaches 2 via the exit.
        assert_eq!(class.h[0], crate::game::parse_rational("-1").unwrap());
        assert_eq!(class.h[1], crate::game::parse_rational("2").unwrap());
    }

    #[test]
    fn loop_f1_is_the_cycle_with_point_mass_exit() {
        let (game, family, v1, v2) = loop_setup();
        let (f1, p_hat) =
            build_f1(&game, &family, [&v1, &v2], &StructureConfig::default()).unwrap();
        assert_eq!(f1.len(), 1);
        let c = &f1[0];
        assert_eq!(c.states, [0, 1].into_iter().collect::<BTreeSet<_>>());
        assert!(matches!(c.controller, ExitController::PlayerTwo(_)));
        // q is the point mass on star.
        assert!(c.q[2].is_one());
        // p_hat on the cycle states: 1/2 to star, 1/4 on each cycle state.
        let quarter = crate::game::parse_rational("1/4").unwrap();
        let half = crate::game::parse_rational("1/2").unwrap();
        for s in [0usize, 1] {
            let row = p_hat.row(s, 0, 0);
            assert_eq!(row[2], half);
            assert_eq!(row[0], quarter);
            assert_eq!(row[1], quarter);
        }
    }

    #[test]
    fn loop_f2_empty_and_f3_equals_f1() {
        let (game, family, v1, v2) = loop_setup();
        let dec = decompose(&game, &family, [&v1, &v2], &StructureConfig::default()).unwrap();
        assert!(dec.f2.is_empty());
        assert_eq!(dec.f3.len(), 1);
        assert!(matches!(dec.f3[0], F3Set::FromF1(_)));
        // p_tilde equals p_hat when F2 is empty.
        for s in 0..game.num_states() {
            assert_eq!(dec.p_tilde.row(s, 0, 0), dec.p_hat.row(s, 0, 0));
        }
    }

    #[test]
    fn loop_audit_clean() {
        let (game, family, v1, v2) = loop_setup();
        let dec = decompose(&game, &family, [&v1, &v2], &StructureConfig::default()).unwrap();
        let report =
            audit_structure(&game, &dec, &family, [&v1, &v2], &StructureConfig::default())
                .unwrap();
        assert!(report.clean(), "{:?}", report.findings);
    }

    #[test]
    fn corrupted_exit_distribution_flagged_by_audit() {
        let (game, family, v1, v2) = loop_setup();
        let mut dec = decompose(&game, &family, [&v1, &v2], &StructureConfig::default()).unwrap();
        // Corrupt q: keep the play inside the set instead of leaving it.
        let bad_q = vec![Rational::one(), Rational::zero(), Rational::zero()];
        if let F3Set::FromF1(c) = &mut dec.f3[0] {
            c.q = bad_q.clone();
        }
        dec.f1[0].q = bad_q;
        let rewrites = collect_rewrites_f1(&dec.f1);
        dec.p_hat = rewrite_kernel(&game, KernelTag::PHat, &rewrites);
        dec.p_tilde = rewrite_kernel(&game, KernelTag::PTilde, &rewrites);
        let report =
            audit_structure(&game, &dec, &family, [&v1, &v2], &StructureConfig::default())
                .unwrap();
        assert!(!report.clean());
    }

    #[test]
    fn absorbing_only_game_audit_vacuous() {
        let game = fixtures::g_abs();
        let family = fixtures::singleton_family(&game, 0);
        let (v1, _) = recursive_value_vector(&game, Player::One, &ValueConfig::default()).unwrap();
        let (v2, _) = recursive_value_vector(&game, Player::Two, &ValueConfig::default()).unwrap();
        let dec = decompose(&game, &family, [&v1, &v2], &StructureConfig::default()).unwrap();
        assert!(dec.f1.is_empty() && dec.f2.is_empty() && dec.f3.is_empty());
        let report =
            audit_structure(&game, &dec, &family, [&v1, &v2], &StructureConfig::default())
                .unwrap();
        assert!(report.clean());
    }

    #[test]
    fn high_mass_actions_rarely_leak_communicating_sets() {
        // On a communicating set, any family action carrying mass at least
        // 0.1 on some pure action keeps the leave probability of that action
        // below 0.1 against every opposing cell (a fixed-parameter form of
        // the mass-leak bound; exact closure makes it sharp here).
        let (game, family, _, _) = loop_setup();
        let set: BTreeSet<StateId> = [0, 1].into_iter().collect();
        let eta = crate::game::parse_rational("1/10").unwrap();
        for &s in &set {
            for player in Player::BOTH {
                let opp = player.opponent();
                for x in family.cell(player, s) {
                    for a in x.support() {
                        if x.prob(a) < &eta {
                            continue;
                        }
                        let pure = MixedAction::pure(game.num_actions(player), a);
                        for y in family.cell(opp, s) {
                            let (x1, x2) = match player {
                                Player::One => (&pure, y),
                                Player::Two => (y, &pure),
                            };
                            let stay =
                                crate::game::step_probability_into(&game, &game.kernel, &set, s, x1, x2)
                                    .unwrap();
                            let leak = Rational::one() - stay;
                            assert!(leak <= eta, "high-mass action leaks the set");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn h_value_on_closed_constant_set_equals_value() {
        // A set with no exits at all: H equals the constant value.
        let doc = r#"{
            "states": ["x", "y", "t"],
            "actions": {"p1": ["a"], "p2": ["b"]},
            "kernel": [
                {"from": "x", "a1": "a", "a2": "b", "to": "y", "prob": "1"},
                {"from": "y", "a1": "a", "a2": "b", "to": "x", "prob": "1"},
                {"from": "t", "a1": "a", "a2": "b", "to": "t", "prob": "1"}
            ],
            "absorbing": {"t": {"g1": "-1", "g2": "1"}},
            "objective": {
                "p1": {"type": "recursive_absorbing", "default": "-1"},
                "p2": {"type": "recursive_absorbing", "default": "1"}
            }
        }"#;
        let game = crate::game::load_game(doc).unwrap();
        let family = fixtures::singleton_family(&game, 3);
        let (v2, _) = recursive_value_vector(&game, Player::Two, &ValueConfig::default()).unwrap();
        let set: BTreeSet<StateId> = [0, 1].into_iter().collect();
        let (h, _) = h_value(
            &game,
            &game.kernel,
            &set,
            &family,
            Player::Two,
            &v2,
            &StructureConfig::default(),
        )
        .unwrap();
        assert_eq!(h, Rational::one());
    }
}
