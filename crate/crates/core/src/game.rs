//! Game model: states, actions, exact rational kernel, objectives, histories,
//! mixed actions, and payoff normalization.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num::{BigInt, One, Signed, Zero};
use serde::de::Error as _;
use serde::{Deserialize, Serialize};

use crate::{Error, Rational, Result};

/// Index of a state in [`StochasticGame::states`].
pub type StateId = usize;
/// Index of an action in one player's action set.
pub type ActionId = usize;

/// One of the two players.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Player {
    One,
    Two,
}

impl Player {
    pub const BOTH: [Player; 2] = [Player::One, Player::Two];

    pub fn index(self) -> usize {
        match self {
            Player::One => 0,
            Player::Two => 1,
        }
    }

    pub fn opponent(self) -> Player {
        match self {
            Player::One => Player::Two,
            Player::Two => Player::One,
        }
    }
}

impl fmt::Display for Player {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Player::One => write!(f, "p1"),
            Player::Two => write!(f, "p2"),
        }
    }
}

/// Parses an exact fraction string such as `"3/4"`, `"-1"`, or `"0.25"`.
///
/// Decimal notation is converted exactly (finite decimals only).
pub fn parse_rational(text: &str) -> Result<Rational> {
    let t = text.trim();
    if let Some((num, den)) = t.split_once('/') {
        let n: BigInt = num
            .trim()
            .parse()
            .map_err(|_| Error::Schema(format!("bad fraction numerator in {t:?}")))?;
        let d: BigInt = den
            .trim()
            .parse()
            .map_err(|_| Error::Schema(format!("bad fraction denominator in {t:?}")))?;
        if d.is_zero() {
            return Err(Error::Schema(format!("zero denominator in {t:?}")));
        }
        return Ok(Rational::new(n, d));
    }
    if let Some((int, frac)) = t.split_once('.') {
        let digits = frac.trim();
        let scale = BigInt::from(10u32).pow(digits.len() as u32);
        let int_part: BigInt = if int.trim().is_empty() || int.trim() == "-" {
            BigInt::zero()
        } else {
            int.trim()
                .parse()
                .map_err(|_| Error::Schema(format!("bad decimal in {t:?}")))?
        };
        let frac_part: BigInt = digits
            .parse()
            .map_err(|_| Error::Schema(format!("bad decimal in {t:?}")))?;
        let negative = t.starts_with('-');
        let mag = int_part.magnitude() * scale.magnitude() + frac_part.magnitude();
        let mut value = Rational::new(BigInt::from(mag), scale);
        if negative {
            value = -value;
        }
        return Ok(value);
    }
    let n: BigInt = t
        .parse()
        .map_err(|_| Error::Schema(format!("bad rational {t:?}")))?;
    Ok(Rational::from_integer(n))
}

/// Formats a rational as `"num/den"` (or `"num"` for integers).
pub fn format_rational(x: &Rational) -> String {
    if x.denom().is_one() {
        x.numer().to_string()
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}

/// Exact conversion of an `f64` to a rational (dyadic).
pub fn rational_from_f64(x: f64) -> Rational {
    Rational::from_float(x).expect("finite float")
}

/// Nearest `f64` below-or-equal magnitude; fine for tolerance reporting.
pub fn rational_to_f64(x: &Rational) -> f64 {
    use num::ToPrimitive;
    x.to_f64().unwrap_or(f64::NAN)
}

/// Rounds `x` down to the largest multiple of `grid` that is ≤ `x`.
pub fn floor_to_grid(x: &Rational, grid: &Rational) -> Rational {
    let q = (x / grid).floor();
    q * grid
}

/// Serde adapter: vectors of exact rationals as fraction strings.
pub mod rational_vec {
    use serde::{Deserialize, Deserializer, Serializer};

    use super::{format_rational, parse_rational};
    use crate::Rational;

    pub fn serialize<S: Serializer>(
        xs: &[Rational],
        ser: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        ser.collect_seq(xs.iter().map(format_rational))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        de: D,
    ) -> std::result::Result<Vec<Rational>, D::Error> {
        let raw = Vec::<String>::deserialize(de)?;
        raw.iter()
            .map(|s| parse_rational(s).map_err(serde::de::Error::custom))
            .collect()
    }
}

/// A probability distribution over one player's actions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixedAction {
    #[serde(with = "rational_vec")]
    probs: Vec<Rational>,
}

impl MixedAction {
    pub fn new(probs: Vec<Rational>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidParameter("empty mixed action".into()));
        }
        let mut sum = Rational::zero();
        for p in &probs {
            if p.is_negative() {
                return Err(Error::InvalidParameter(
                    "mixed action with negative mass".into(),
                ));
            }
            sum += p;
        }
        if !sum.is_one() {
            return Err(Error::InvalidParameter(format!(
                "mixed action mass {} != 1",
                format_rational(&sum)
            )));
        }
        Ok(MixedAction { probs })
    }

    /// Point mass on `action` out of `n` actions.
    pub fn pure(n: usize, action: ActionId) -> Self {
        let mut probs = vec![Rational::zero(); n];
        probs[action] = Rational::one();
        MixedAction { probs }
    }

    /// Uniform distribution over all `n` actions.
    pub fn uniform(n: usize) -> Self {
        let p = Rational::new(BigInt::one(), BigInt::from(n));
        MixedAction {
            probs: vec![p; n],
        }
    }

    /// Uniform distribution over a nonempty subset of actions.
    pub fn uniform_over(n: usize, support: &[ActionId]) -> Self {
        let mut probs = vec![Rational::zero(); n];
        let p = Rational::new(BigInt::one(), BigInt::from(support.len()));
        for &a in support {
            probs[a] = p.clone();
        }
        MixedAction { probs }
    }

    pub fn prob(&self, a: ActionId) -> &Rational {
        &self.probs[a]
    }

    pub fn probs(&self) -> &[Rational] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn support(&self) -> Vec<ActionId> {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, p)| p.is_positive())
            .map(|(a, _)| a)
            .collect()
    }

    /// Convex combination `(1 - w) * self + w * other`, exact.
    pub fn mix(&self, other: &MixedAction, w: &Rational) -> MixedAction {
        let one_minus = Rational::one() - w;
        let probs = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| &one_minus * a + w * b)
            .collect();
        MixedAction { probs }
    }

    /// L∞ distance between two mixed actions over the same action set.
    pub fn linf_distance(&self, other: &MixedAction) -> Rational {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .max()
            .unwrap_or_else(Rational::zero)
    }

    /// Renormalizes `self` conditioned on not playing the given actions.
    ///
    /// Fails when the remaining mass is zero.
    pub fn condition_off(&self, removed: &BTreeSet<ActionId>) -> Option<MixedAction> {
        let mut kept = self.probs.clone();
        for &a in removed {
            kept[a] = Rational::zero();
        }
        let mass: Rational = kept.iter().sum();
        if !mass.is_positive() {
            return None;
        }
        for p in &mut kept {
            *p /= mass.clone();
        }
        Some(MixedAction { probs: kept })
    }
}

/// A stationary strategy: one mixed action per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryStrategy {
    pub player: Player,
    pub actions: Vec<MixedAction>,
}

impl StationaryStrategy {
    pub fn action(&self, s: StateId) -> &MixedAction {
        &self.actions[s]
    }
}

/// Which transition table a computation runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelTag {
    /// The game's own kernel `p`.
    P,
    /// The rewritten kernel with `F1` sets resolved.
    PHat,
    /// The rewritten kernel with all `F3` sets resolved.
    PTilde,
}

impl fmt::Display for KernelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelTag::P => write!(f, "p"),
            KernelTag::PHat => write!(f, "p_hat"),
            KernelTag::PTilde => write!(f, "p_tilde"),
        }
    }
}

/// A dense transition table `[s][a1][a2] -> distribution over states`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionKernel {
    pub tag: KernelTag,
    rows: Vec<Vec<Vec<Vec<Rational>>>>,
}

impl TransitionKernel {
    pub fn new(tag: KernelTag, rows: Vec<Vec<Vec<Vec<Rational>>>>) -> Self {
        TransitionKernel { tag, rows }
    }

    pub fn row(&self, s: StateId, a1: ActionId, a2: ActionId) -> &[Rational] {
        &self.rows[s][a1][a2]
    }

    pub fn prob(&self, to: StateId, s: StateId, a1: ActionId, a2: ActionId) -> &Rational {
        &self.rows[s][a1][a2][to]
    }

    /// Probability of landing in `set` from `s` under a pure action pair.
    pub fn prob_into(
        &self,
        set: &BTreeSet<StateId>,
        s: StateId,
        a1: ActionId,
        a2: ActionId,
    ) -> Rational {
        set.iter()
            .map(|&t| self.rows[s][a1][a2][t].clone())
            .sum()
    }

    pub fn num_states(&self) -> usize {
        self.rows.len()
    }
}

/// Per-player stage payoffs `g(s, a1, a2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StagePayoffs(pub Vec<Vec<Vec<Rational>>>);

impl StagePayoffs {
    pub fn get(&self, s: StateId, a1: ActionId, a2: ActionId) -> &Rational {
        &self.0[s][a1][a2]
    }

    fn shift(&mut self, c: &Rational) {
        for per_state in &mut self.0 {
            for per_a1 in per_state {
                for v in per_a1 {
                    *v += c;
                }
            }
        }
    }

    fn round_down(&mut self, grid: &Rational) {
        for per_state in &mut self.0 {
            for per_a1 in per_state {
                for v in per_a1 {
                    *v = floor_to_grid(v, grid);
                }
            }
        }
    }

    fn values(&self) -> Vec<Rational> {
        self.0
            .iter()
            .flat_map(|s| s.iter().flat_map(|r| r.iter().cloned()))
            .collect()
    }
}

/// One player's payoff objective over runs.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    /// Normalized discounted payoff with weight `lambda` on the current stage;
    /// `lambda -> 0` is the patient limit.
    Discounted {
        lambda: Rational,
        payoffs: StagePayoffs,
    },
    /// Long-run average of stage payoffs.
    LongRunAverage { payoffs: StagePayoffs },
    /// `win` if the target set is visited infinitely often, else `lose`.
    Buchi {
        target: BTreeSet<StateId>,
        win: Rational,
        lose: Rational,
    },
    /// `win` if the avoid set is visited only finitely often, else `lose`.
    CoBuchi {
        avoid: BTreeSet<StateId>,
        win: Rational,
        lose: Rational,
    },
    /// Absorbing payoff `gamma` at the absorbed state, `default` if the run
    /// never absorbs.
    RecursiveAbsorbing { default: Rational },
    /// `1` if the target state is entered at an even stage, else `0`.
    /// Tail-measurable but not shift-invariant; kept as a rejection fixture.
    EvenStageEntry { target: StateId },
}

impl Objective {
    /// Whether removing a finite prefix of the run leaves the payoff unchanged.
    pub fn shift_invariant(&self) -> bool {
        matches!(
            self,
            Objective::LongRunAverage { .. }
                | Objective::Buchi { .. }
                | Objective::CoBuchi { .. }
                | Objective::RecursiveAbsorbing { .. }
        )
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Objective::Discounted { .. } => "discounted",
            Objective::LongRunAverage { .. } => "long_run_average",
            Objective::Buchi { .. } => "buchi",
            Objective::CoBuchi { .. } => "co_buchi",
            Objective::RecursiveAbsorbing { .. } => "recursive_absorbing",
            Objective::EvenStageEntry { .. } => "even_stage_entry",
        }
    }

    pub fn stage_payoffs(&self) -> Option<&StagePayoffs> {
        match self {
            Objective::Discounted { payoffs, .. } | Objective::LongRunAverage { payoffs } => {
                Some(payoffs)
            }
            _ => None,
        }
    }

    /// Payoff data carried by the variant itself (absorbing γ excluded).
    fn own_values(&self) -> Vec<Rational> {
        match self {
            Objective::Discounted { payoffs, .. } | Objective::LongRunAverage { payoffs } => {
                payoffs.values()
            }
            Objective::Buchi { win, lose, .. } | Objective::CoBuchi { win, lose, .. } => {
                vec![win.clone(), lose.clone()]
            }
            Objective::RecursiveAbsorbing { default } => vec![default.clone()],
            Objective::EvenStageEntry { .. } => {
                vec![Rational::zero(), Rational::one()]
            }
        }
    }
}

/// A finite two-player stochastic game with exact rational transitions.
///
/// Action sets are global per player; per-state restrictions are emulated by
/// duplicating rows in the input document. Absorbing states self-loop under
/// every action pair and carry a declared payoff pair `gamma`.
#[derive(Debug, Clone)]
pub struct StochasticGame {
    pub states: Vec<String>,
    pub actions: [Vec<String>; 2],
    pub kernel: TransitionKernel,
    pub absorbing: BTreeSet<StateId>,
    pub gamma: BTreeMap<StateId, [Rational; 2]>,
    pub objectives: [Objective; 2],
}

impl StochasticGame {
    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_actions(&self, player: Player) -> usize {
        self.actions[player.index()].len()
    }

    pub fn state_name(&self, s: StateId) -> &str {
        &self.states[s]
    }

    pub fn state_names(&self, set: &BTreeSet<StateId>) -> Vec<String> {
        set.iter().map(|&s| self.states[s].clone()).collect()
    }

    pub fn is_absorbing(&self, s: StateId) -> bool {
        self.absorbing.contains(&s)
    }

    /// The nonabsorbing states `S_0`.
    pub fn nonabsorbing(&self) -> BTreeSet<StateId> {
        (0..self.num_states())
            .filter(|s| !self.absorbing.contains(s))
            .collect()
    }

    pub fn objective(&self, player: Player) -> &Objective {
        &self.objectives[player.index()]
    }

    pub fn gamma_of(&self, player: Player, s: StateId) -> &Rational {
        &self.gamma[&s][player.index()]
    }

    /// Bound `M` on the absolute payoff data of both objectives, γ included.
    pub fn payoff_bound(&self) -> Rational {
        let mut best = Rational::zero();
        for p in Player::BOTH {
            for v in self.objectives[p.index()].own_values() {
                let a = v.abs();
                if a > best {
                    best = a;
                }
            }
        }
        for pair in self.gamma.values() {
            for v in pair {
                let a = v.abs();
                if a > best {
                    best = a;
                }
            }
        }
        best
    }

    /// Moves the game to a rewritten kernel while keeping everything else.
    pub fn with_kernel(&self, kernel: TransitionKernel) -> StochasticGame {
        let mut g = self.clone();
        g.kernel = kernel;
        g
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_states();
        for s in 0..n {
            for a1 in 0..self.num_actions(Player::One) {
                for a2 in 0..self.num_actions(Player::Two) {
                    let row = self.kernel.row(s, a1, a2);
                    if row.len() != n {
                        return Err(Error::Dimension(format!(
                            "kernel row at {} has length {}",
                            self.states[s],
                            row.len()
                        )));
                    }
                    let sum: Rational = row.iter().sum();
                    if !sum.is_one() {
                        return Err(Error::RowNotStochastic {
                            state: self.states[s].clone(),
                            a1: self.actions[0][a1].clone(),
                            a2: self.actions[1][a2].clone(),
                            sum: format_rational(&sum),
                        });
                    }
                    if self.absorbing.contains(&s) && !self.kernel.prob(s, s, a1, a2).is_one() {
                        return Err(Error::AbsorbingNotSelfLoop(
                            self.states[s].clone(),
                            self.actions[0][a1].clone(),
                            self.actions[1][a2].clone(),
                        ));
                    }
                }
            }
        }
        for &s in &self.absorbing {
            if !self.gamma.contains_key(&s) {
                return Err(Error::MissingAbsorbingPayoff(self.states[s].clone()));
            }
        }
        Ok(())
    }
}

/// A finite history `(s^1, a^1, ..., s^t)` with only positive transitions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct History {
    states: Vec<StateId>,
    actions: Vec<(ActionId, ActionId)>,
}

impl History {
    /// Starts a history at an initial state.
    pub fn start(s: StateId) -> Self {
        History {
            states: vec![s],
            actions: Vec::new(),
        }
    }

    /// Builds a history, rejecting any zero-probability transition.
    pub fn new(
        game: &StochasticGame,
        states: Vec<StateId>,
        actions: Vec<(ActionId, ActionId)>,
    ) -> Result<Self> {
        if states.is_empty() || states.len() != actions.len() + 1 {
            return Err(Error::Dimension("history shape".into()));
        }
        for (k, &(a1, a2)) in actions.iter().enumerate() {
            let p = game.kernel.prob(states[k + 1], states[k], a1, a2);
            if !p.is_positive() {
                return Err(Error::ZeroProbabilityTransition(k + 1));
            }
        }
        Ok(History { states, actions })
    }

    /// Extends by one stage, rejecting zero-probability transitions.
    pub fn extend(
        &self,
        game: &StochasticGame,
        a1: ActionId,
        a2: ActionId,
        next: StateId,
    ) -> Result<Self> {
        let p = game.kernel.prob(next, self.final_state(), a1, a2);
        if !p.is_positive() {
            return Err(Error::ZeroProbabilityTransition(self.len()));
        }
        let mut h = self.clone();
        h.states.push(next);
        h.actions.push((a1, a2));
        Ok(h)
    }

    /// Current stage of the history (number of states).
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn final_state(&self) -> StateId {
        *self.states.last().unwrap()
    }

    pub fn states(&self) -> &[StateId] {
        &self.states
    }

    pub fn actions(&self) -> &[(ActionId, ActionId)] {
        &self.actions
    }

    /// True when every state along the history lies in `set`.
    pub fn remains_in(&self, set: &BTreeSet<StateId>) -> bool {
        self.states.iter().all(|s| set.contains(s))
    }
}

/// Per state and player, a nonempty finite list of mixed actions; the
/// computable stand-in for the limit family `Y`.
#[derive(Debug, Clone)]
pub struct MixedActionSetFamily {
    /// `cells[player][state]` — lists indexed over all states; absorbing
    /// states carry a trivial cell that is never consulted.
    pub cells: [Vec<Vec<MixedAction>>; 2],
}

impl MixedActionSetFamily {
    pub fn new(cells: [Vec<Vec<MixedAction>>; 2]) -> Result<Self> {
        for side in &cells {
            for cell in side {
                if cell.is_empty() {
                    return Err(Error::InvalidParameter(
                        "empty mixed-action cell in family".into(),
                    ));
                }
            }
        }
        Ok(MixedActionSetFamily { cells })
    }

    /// Singleton family from a stationary strategy pair.
    pub fn from_pair(x1: &StationaryStrategy, x2: &StationaryStrategy) -> Self {
        MixedActionSetFamily {
            cells: [
                x1.actions.iter().map(|m| vec![m.clone()]).collect(),
                x2.actions.iter().map(|m| vec![m.clone()]).collect(),
            ],
        }
    }

    pub fn cell(&self, player: Player, s: StateId) -> &[MixedAction] {
        &self.cells[player.index()][s]
    }

    /// Replaces one player's cells, keeping the other side.
    pub fn with_player_cells(&self, player: Player, cells: Vec<Vec<MixedAction>>) -> Self {
        let mut out = self.clone();
        out.cells[player.index()] = cells;
        out
    }
}

/// One-step distribution over states from `s` under a mixed action pair.
pub fn step_distribution(
    game: &StochasticGame,
    kernel: &TransitionKernel,
    s: StateId,
    x1: &MixedAction,
    x2: &MixedAction,
) -> Result<Vec<Rational>> {
    if x1.len() != game.num_actions(Player::One) || x2.len() != game.num_actions(Player::Two) {
        return Err(Error::Dimension("mixed action over wrong action set".into()));
    }
    let n = game.num_states();
    let mut out = vec![Rational::zero(); n];
    for (a1, p1) in x1.probs().iter().enumerate() {
        if !p1.is_positive() {
            continue;
        }
        for (a2, p2) in x2.probs().iter().enumerate() {
            if !p2.is_positive() {
                continue;
            }
            let w = p1 * p2;
            let row = kernel.row(s, a1, a2);
            for t in 0..n {
                if row[t].is_positive() {
                    out[t] += &w * &row[t];
                }
            }
        }
    }
    Ok(out)
}

/// Expected value of `g` one step from `s`: `Σ p(s'|s,x) g(s')`, exact.
pub fn expected_value(
    game: &StochasticGame,
    kernel: &TransitionKernel,
    g: &[Rational],
    s: StateId,
    x1: &MixedAction,
    x2: &MixedAction,
) -> Result<Rational> {
    let dist = step_distribution(game, kernel, s, x1, x2)?;
    Ok(dist
        .iter()
        .zip(g)
        .map(|(p, v)| p * v)
        .sum())
}

/// Probability that one step from `s` lands inside `set`.
pub fn step_probability_into(
    game: &StochasticGame,
    kernel: &TransitionKernel,
    set: &BTreeSet<StateId>,
    s: StateId,
    x1: &MixedAction,
    x2: &MixedAction,
) -> Result<Rational> {
    let dist = step_distribution(game, kernel, s, x1, x2)?;
    Ok(set.iter().map(|&t| dist[t].clone()).sum())
}

/// Record of the affine payoff map applied by [`normalize`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormalizationRecord {
    /// Additive shift per player (`new = old + shift`, then grid rounding).
    pub shift: [String; 2],
    /// The ε-grid the payoffs were floored to.
    pub grid: String,
    /// States converted from `solved` annotations to absorbing.
    pub solved_states: Vec<String>,
}

impl NormalizationRecord {
    pub fn shift_rational(&self, player: Player) -> Result<Rational> {
        parse_rational(&self.shift[player.index()])
    }
}

/// Applies the payoff normalization: player 1's payoff data shifted so its
/// maximum is −1, player 2's so its minimum is +1, all data floored to the
/// ε-grid, and `solved`-annotated states rewritten as absorbing.
pub fn normalize(
    game: &StochasticGame,
    eps: &Rational,
    solved: &BTreeMap<StateId, [Rational; 2]>,
) -> Result<(StochasticGame, NormalizationRecord)> {
    if !eps.is_positive() {
        return Err(Error::InvalidParameter("epsilon must be positive".into()));
    }
    let mut g = game.clone();

    // Solved annotations first: mark absorbing, install declared payoffs.
    let mut solved_names = Vec::new();
    for (&s, pair) in solved {
        if g.absorbing.contains(&s) {
            continue;
        }
        g.absorbing.insert(s);
        g.gamma.insert(s, pair.clone());
        solved_names.push(g.states[s].clone());
        let n = g.num_states();
        let mut rows = g.kernel.rows_mut_clone();
        for a1 in 0..g.num_actions(Player::One) {
            for a2 in 0..g.num_actions(Player::Two) {
                let mut row = vec![Rational::zero(); n];
                row[s] = Rational::one();
                rows[s][a1][a2] = row;
            }
        }
        g.kernel = TransitionKernel::new(g.kernel.tag, rows);
    }

    // Collect payoff data per player to find the required shifts.
    let mut shifts = [Rational::zero(), Rational::zero()];
    for p in Player::BOTH {
        let mut vals = g.objectives[p.index()].own_values();
        for (&s, pair) in &g.gamma {
            if g.absorbing.contains(&s) {
                vals.push(pair[p.index()].clone());
            }
        }
        if vals.is_empty() {
            return Err(Error::ObjectiveData(format!(
                "player {p} has no payoff data to normalize"
            )));
        }
        if matches!(g.objectives[p.index()], Objective::EvenStageEntry { .. }) {
            return Err(Error::ObjectiveData(
                "even-stage-entry payoffs are not affinely adjustable".into(),
            ));
        }
        let shift = match p {
            Player::One => {
                let max = vals.iter().max().unwrap().clone();
                -Rational::one() - max
            }
            Player::Two => {
                let min = vals.iter().min().unwrap().clone();
                Rational::one() - min
            }
        };
        shifts[p.index()] = shift;
    }

    for p in Player::BOTH {
        let c = shifts[p.index()].clone();
        match &mut g.objectives[p.index()] {
            Objective::Discounted { payoffs, .. } | Objective::LongRunAverage { payoffs } => {
                payoffs.shift(&c);
                payoffs.round_down(eps);
            }
            Objective::Buchi { win, lose, .. } | Objective::CoBuchi { win, lose, .. } => {
                *win = floor_to_grid(&(&*win + &c), eps);
                *lose = floor_to_grid(&(&*lose + &c), eps);
            }
            Objective::RecursiveAbsorbing { default } => {
                *default = floor_to_grid(&(&*default + &c), eps);
            }
            Objective::EvenStageEntry { .. } => unreachable!(),
        }
        for pair in g.gamma.values_mut() {
            pair[p.index()] = floor_to_grid(&(&pair[p.index()] + &c), eps);
        }
    }

    g.validate()?;
    let record = NormalizationRecord {
        shift: [
            format_rational(&shifts[0]),
            format_rational(&shifts[1]),
        ],
        grid: format_rational(eps),
        solved_states: solved_names,
    };
    Ok((g, record))
}

impl TransitionKernel {
    fn rows_mut_clone(&self) -> Vec<Vec<Vec<Vec<Rational>>>> {
        self.rows.clone()
    }
}

// ---------------------------------------------------------------------------
// JSON document loading
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct RawKernelEntry {
    from: String,
    a1: String,
    a2: String,
    to: String,
    prob: String,
}

#[derive(Debug, Deserialize)]
struct RawAbsorbing {
    g1: String,
    g2: String,
}

#[derive(Debug, Deserialize)]
struct RawStagePayoff {
    state: String,
    a1: String,
    a2: String,
    value: String,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum RawObjective {
    Discounted {
        lambda: String,
        payoffs: Vec<RawStagePayoff>,
    },
    LongRunAverage {
        payoffs: Vec<RawStagePayoff>,
    },
    Buchi {
        target: Vec<String>,
        #[serde(default)]
        win: Option<String>,
        #[serde(default)]
        lose: Option<String>,
    },
    CoBuchi {
        avoid: Vec<String>,
        #[serde(default)]
        win: Option<String>,
        #[serde(default)]
        lose: Option<String>,
    },
    RecursiveAbsorbing {
        #[serde(default)]
        default: Option<String>,
    },
    EvenStageEntry {
        target: String,
    },
}

#[derive(Debug, Deserialize)]
struct RawActions {
    p1: Vec<String>,
    p2: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct RawObjectives {
    p1: RawObjective,
    p2: RawObjective,
}

#[derive(Debug, Deserialize)]
struct RawGame {
    states: Vec<String>,
    actions: RawActions,
    kernel: Vec<RawKernelEntry>,
    #[serde(default)]
    absorbing: BTreeMap<String, RawAbsorbing>,
    objective: RawObjectives,
    #[serde(default)]
    solved: BTreeMap<String, RawAbsorbing>,
}

fn lookup(names: &[String], name: &str, what: &str) -> Result<usize> {
    names
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| Error::Schema(format!("unknown {what} {name:?}")))
}

fn parse_stage_payoffs(
    states: &[String],
    actions: &[Vec<String>; 2],
    raw: &[RawStagePayoff],
) -> Result<StagePayoffs> {
    let mut table =
        vec![vec![vec![Rational::zero(); actions[1].len()]; actions[0].len()]; states.len()];
    for e in raw {
        let s = lookup(states, &e.state, "state")?;
        let a1 = lookup(&actions[0], &e.a1, "p1 action")?;
        let a2 = lookup(&actions[1], &e.a2, "p2 action")?;
        table[s][a1][a2] = parse_rational(&e.value)?;
    }
    Ok(StagePayoffs(table))
}

fn parse_objective(
    states: &[String],
    actions: &[Vec<String>; 2],
    raw: &RawObjective,
) -> Result<Objective> {
    Ok(match raw {
        RawObjective::Discounted { lambda, payoffs } => {
            let l = parse_rational(lambda)?;
            if !l.is_positive() || l >= Rational::one() {
                return Err(Error::Schema("lambda must lie in (0,1)".into()));
            }
            Objective::Discounted {
                lambda: l,
                payoffs: parse_stage_payoffs(states, actions, payoffs)?,
            }
        }
        RawObjective::LongRunAverage { payoffs } => Objective::LongRunAverage {
            payoffs: parse_stage_payoffs(states, actions, payoffs)?,
        },
        RawObjective::Buchi { target, win, lose } => Objective::Buchi {
            target: target
                .iter()
                .map(|n| lookup(states, n, "state"))
                .collect::<Result<_>>()?,
            win: win
                .as_deref()
                .map(parse_rational)
                .transpose()?
                .unwrap_or_else(Rational::one),
            lose: lose
                .as_deref()
                .map(parse_rational)
                .transpose()?
                .unwrap_or_else(Rational::zero),
        },
        RawObjective::CoBuchi { avoid, win, lose } => Objective::CoBuchi {
            avoid: avoid
                .iter()
                .map(|n| lookup(states, n, "state"))
                .collect::<Result<_>>()?,
            win: win
                .as_deref()
                .map(parse_rational)
                .transpose()?
                .unwrap_or_else(Rational::one),
            lose: lose
                .as_deref()
                .map(parse_rational)
                .transpose()?
                .unwrap_or_else(Rational::zero),
        },
        RawObjective::RecursiveAbsorbing { default } => Objective::RecursiveAbsorbing {
            default: default
                .as_deref()
                .map(parse_rational)
                .transpose()?
                .unwrap_or_else(Rational::zero),
        },
        RawObjective::EvenStageEntry { target } => Objective::EvenStageEntry {
            target: lookup(states, target, "state")?,
        },
    })
}

/// Parses and validates a JSON game document.
///
/// Probabilities and payoffs are exact fraction strings. Unlisted kernel
/// entries default to probability zero; every `(state, a1, a2)` row must sum
/// to exactly one.
pub fn load_game(document: &str) -> Result<StochasticGame> {
    let raw: RawGame =
        serde_json::from_str(document).map_err(|e| Error::Schema(e.to_string()))?;
    load_raw(raw)
}

/// [`load_game`] plus the `solved` annotations as a separate map, for
/// feeding [`normalize`].
pub fn load_game_with_solved(
    document: &str,
) -> Result<(StochasticGame, BTreeMap<StateId, [Rational; 2]>)> {
    let raw: RawGame =
        serde_json::from_str(document).map_err(|e| Error::Schema(e.to_string()))?;
    let mut solved = BTreeMap::new();
    for (name, pair) in &raw.solved {
        let s = lookup(&raw.states, name, "state")?;
        solved.insert(
            s,
            [parse_rational(&pair.g1)?, parse_rational(&pair.g2)?],
        );
    }
    let game = load_raw(raw)?;
    Ok((game, solved))
}

fn load_raw(raw: RawGame) -> Result<StochasticGame> {
    if raw.states.is_empty() {
        return Err(Error::Schema("empty state list".into()));
    }
    if raw.actions.p1.is_empty() || raw.actions.p2.is_empty() {
        return Err(Error::Schema("empty action set".into()));
    }
    let states = raw.states.clone();
    let actions = [raw.actions.p1.clone(), raw.actions.p2.clone()];
    let n = states.len();
    let mut rows =
        vec![vec![vec![vec![Rational::zero(); n]; actions[1].len()]; actions[0].len()]; n];
    for e in &raw.kernel {
        let s = lookup(&states, &e.from, "state")?;
        let a1 = lookup(&actions[0], &e.a1, "p1 action")?;
        let a2 = lookup(&actions[1], &e.a2, "p2 action")?;
        let t = lookup(&states, &e.to, "state")?;
        rows[s][a1][a2][t] += parse_rational(&e.prob)?;
    }

    let mut absorbing = BTreeSet::new();
    let mut gamma = BTreeMap::new();
    for (name, pair) in &raw.absorbing {
        let s = lookup(&states, name, "state")?;
        absorbing.insert(s);
        gamma.insert(
            s,
            [parse_rational(&pair.g1)?, parse_rational(&pair.g2)?],
        );
    }

    let objectives = [
        parse_objective(&states, &actions, &raw.objective.p1)?,
        parse_objective(&states, &actions, &raw.objective.p2)?,
    ];

    let game = StochasticGame {
        states,
        actions,
        kernel: TransitionKernel::new(KernelTag::P, rows),
        absorbing,
        gamma,
        objectives,
    };
    game.validate()?;
    Ok(game)
}

/// Serialize helper so reports can carry exact rationals as fraction strings.
pub fn serialize_rational<S: serde::Serializer>(
    x: &Rational,
    ser: S,
) -> std::result::Result<S::Ok, S::Error> {
    ser.serialize_str(&format_rational(x))
}

/// Deserialize counterpart of [`serialize_rational`].
pub fn deserialize_rational<'de, D: serde::Deserializer<'de>>(
    de: D,
) -> std::result::Result<Rational, D::Error> {
    let s = String::deserialize(de)?;
    parse_rational(&s).map_err(|e| D::Error::custom(e.to_string()))
}
