//! Monte-Carlo run engine, payoff estimation for the shipped objectives,
//! exact best responses against finite-memory opponents via product
//! construction, and ε-equilibrium verification reports.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use num::{One, Signed, Zero};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::equilibrium::{AssembledProfile, InSetPhase, InSetProfile, Phase, Trigger};
use crate::game::{
    rational_to_f64, ActionId, MixedAction, Objective, Player, StateId, StationaryStrategy,
    StochasticGame,
};
use crate::lp;
use crate::mdp::{solve_absorbing_mdp, AbsorbingMdp};
use crate::recursive::absorption_of_chain;
use crate::{Error, Rational, Result};

// ---------------------------------------------------------------------------
// The finite-memory profile abstraction
// ---------------------------------------------------------------------------

/// A strategy pair with shared deterministic memory over the public history.
pub trait StrategyProfile {
    type Mem: Clone + Ord + std::fmt::Debug;

    fn initial(&self, s: StateId) -> Self::Mem;
    fn prescribed(
        &self,
        game: &StochasticGame,
        mem: &Self::Mem,
        s: StateId,
    ) -> Result<[MixedAction; 2]>;
    fn advance(
        &self,
        game: &StochasticGame,
        mem: &Self::Mem,
        s: StateId,
        a1: ActionId,
        a2: ActionId,
        next: StateId,
    ) -> Result<Self::Mem>;
    /// Detector trigger recorded in the memory, if the profile has one.
    fn trigger(&self, _mem: &Self::Mem) -> Option<Trigger> {
        None
    }
}

/// A stationary pair as a trivial (memoryless) profile.
#[derive(Debug, Clone)]
pub struct StationaryPair {
    pub x1: StationaryStrategy,
    pub x2: StationaryStrategy,
}

impl StrategyProfile for StationaryPair {
    type Mem = ();

    fn initial(&self, _s: StateId) {}

    fn prescribed(
        &self,
        _game: &StochasticGame,
        _mem: &(),
        s: StateId,
    ) -> Result<[MixedAction; 2]> {
        Ok([self.x1.action(s).clone(), self.x2.action(s).clone()])
    }

    fn advance(
        &self,
        _game: &StochasticGame,
        _mem: &(),
        _s: StateId,
        _a1: ActionId,
        _a2: ActionId,
        _next: StateId,
    ) -> Result<()> {
        Ok(())
    }
}

impl StrategyProfile for AssembledProfile {
    type Mem = Phase;

    fn initial(&self, s: StateId) -> Phase {
        self.initial_phase(s)
    }

    fn prescribed(
        &self,
        _game: &StochasticGame,
        mem: &Phase,
        s: StateId,
    ) -> Result<[MixedAction; 2]> {
        AssembledProfile::prescribed(self, mem, s)
    }

    fn advance(
        &self,
        game: &StochasticGame,
        mem: &Phase,
        s: StateId,
        a1: ActionId,
        a2: ActionId,
        next: StateId,
    ) -> Result<Phase> {
        self.step_phase(game, mem, s, a1, a2, next)
    }

    fn trigger(&self, mem: &Phase) -> Option<Trigger> {
        match mem {
            Phase::Punish(t) => Some(*t),
            _ => None,
        }
    }
}

impl StrategyProfile for InSetProfile {
    type Mem = InSetPhase;

    fn initial(&self, s: StateId) -> InSetPhase {
        self.initial_phase(s)
    }

    fn prescribed(
        &self,
        _game: &StochasticGame,
        mem: &InSetPhase,
        s: StateId,
    ) -> Result<[MixedAction; 2]> {
        Ok(InSetProfile::prescribed(self, mem, s))
    }

    fn advance(
        &self,
        game: &StochasticGame,
        mem: &InSetPhase,
        s: StateId,
        a1: ActionId,
        a2: ActionId,
        next: StateId,
    ) -> Result<InSetPhase> {
        self.step_phase(game, mem, s, a1, a2, next)
    }

    fn trigger(&self, mem: &InSetPhase) -> Option<Trigger> {
        match mem {
            InSetPhase::Playing(st) => st.trigger.map(|(t, _)| t),
            InSetPhase::Punishing(t) => Some(*t),
            InSetPhase::Exited => None,
        }
    }
}

/// Detector-trigger details for the in-set profile (which test, which stage).
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct TriggerRecord {
    pub trigger: String,
    pub stage: usize,
}

// ---------------------------------------------------------------------------
// Monte-Carlo simulation
// ---------------------------------------------------------------------------

/// One simulated run.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub start: String,
    /// First stage at which the play stood on an absorbing state.
    pub absorption_time: Option<usize>,
    pub absorbed_state: Option<String>,
    pub trigger: Option<TriggerRecord>,
    pub payoff: [f64; 2],
}

/// Aggregated simulation statistics; aggregates always equal recomputation
/// from the records.
#[derive(Debug, Clone, Serialize)]
pub struct SimulationStats {
    pub seed: u64,
    pub runs: usize,
    pub horizon: usize,
    pub mean_payoff: [f64; 2],
    /// Normal-approximation standard error of the mean payoffs.
    pub payoff_se: [f64; 2],
    pub absorption_rate: f64,
    pub trigger_rate: f64,
    /// Sampling standard error of the trigger rate.
    pub trigger_se: f64,
    pub records: Vec<RunRecord>,
}

impl SimulationStats {
    /// Optional CSV of the per-run records.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("run,start,absorption_time,absorbed_state,trigger,stage,payoff1,payoff2\n");
        for (k, r) in self.records.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                k,
                r.start,
                r.absorption_time.map(|t| t.to_string()).unwrap_or_default(),
                r.absorbed_state.clone().unwrap_or_default(),
                r.trigger.as_ref().map(|t| t.trigger.clone()).unwrap_or_default(),
                r.trigger.as_ref().map(|t| t.stage.to_string()).unwrap_or_default(),
                r.payoff[0],
                r.payoff[1],
            ));
        }
        out
    }
}

fn sample_index(rng: &mut ChaCha8Rng, probs: &[Rational]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (k, p) in probs.iter().enumerate() {
        let pf = rational_to_f64(p);
        if pf <= 0.0 {
            continue;
        }
        acc += pf;
        last = k;
        if u < acc {
            return k;
        }
    }
    last
}

/// Per-objective payoff of one truncated run.
fn run_payoff(
    game: &StochasticGame,
    player: Player,
    states: &[StateId],
    actions: &[(ActionId, ActionId)],
) -> f64 {
    match game.objective(player) {
        Objective::RecursiveAbsorbing { default } => {
            let absorbed = states.iter().find(|s| game.is_absorbing(**s));
            match absorbed {
                Some(&s) => rational_to_f64(game.gamma_of(player, s)),
                None => rational_to_f64(default),
            }
        }
        Objective::LongRunAverage { payoffs } | Objective::Discounted { payoffs, .. } => {
            // Truncated average; the discounted variant also reports the
            // plain average over the horizon for simplicity of estimation.
            if actions.is_empty() {
                return 0.0;
            }
            let total: f64 = actions
                .iter()
                .enumerate()
                .map(|(k, &(a1, a2))| rational_to_f64(payoffs.get(states[k], a1, a2)))
                .sum();
            total / actions.len() as f64
        }
        Objective::Buchi { target, win, lose } => {
            // Visit indicator over the tail window (last quarter).
            let tail = states.len().saturating_sub(states.len() / 4);
            let visited = states[tail..].iter().any(|s| target.contains(s));
            rational_to_f64(if visited { win } else { lose })
        }
        Objective::CoBuchi { avoid, win, lose } => {
            let tail = states.len().saturating_sub(states.len() / 4);
            let visited = states[tail..].iter().any(|s| avoid.contains(s));
            rational_to_f64(if visited { lose } else { win })
        }
        Objective::EvenStageEntry { target } => {
            let hit = states
                .iter()
                .enumerate()
                .any(|(k, s)| s == target && (k + 1) % 2 == 0);
            if hit {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Simulates `n_runs` independent runs of a profile from `start`.
///
/// Reproducible: run `k` draws from the master seed's stream `k`, so the
/// same seed yields identical statistics on any platform.
pub fn simulate<P: StrategyProfile>(
    game: &StochasticGame,
    profile: &P,
    start: StateId,
    horizon: usize,
    n_runs: usize,
    seed: u64,
) -> Result<SimulationStats> {
    if horizon == 0 || n_runs == 0 {
        return Err(Error::InvalidParameter(
            "horizon and runs must be positive".into(),
        ));
    }
    let mut records = Vec::with_capacity(n_runs);
    for run in 0..n_runs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(run as u64);
        let mut mem = profile.initial(start);
        let mut s = start;
        let mut states = vec![s];
        let mut actions = Vec::new();
        let mut trigger: Option<TriggerRecord> = None;
        let mut absorption_time = if game.is_absorbing(s) { Some(1) } else { None };
        for stage in 1..horizon {
            let [x1, x2] = profile.prescribed(game, &mem, s)?;
            let a1 = sample_index(&mut rng, x1.probs());
            let a2 = sample_index(&mut rng, x2.probs());
            let row = game.kernel.row(s, a1, a2);
            let next = sample_index(&mut rng, row);
            let new_mem = profile.advance(game, &mem, s, a1, a2, next)?;
            if trigger.is_none() {
                if let Some(t) = profile.trigger(&new_mem) {
                    trigger = Some(TriggerRecord {
                        trigger: format!("{t:?}"),
                        stage: stage + 1,
                    });
                }
            }
            mem = new_mem;
            actions.push((a1, a2));
            states.push(next);
            s = next;
            if absorption_time.is_none() && game.is_absorbing(s) {
                absorption_time = Some(stage + 1);
            }
        }
        let payoff = [
            run_payoff(game, Player::One, &states, &actions),
            run_payoff(game, Player::Two, &states, &actions),
        ];
        records.push(RunRecord {
            start: game.state_name(start).to_string(),
            absorption_time,
            absorbed_state: states
                .iter()
                .find(|s| game.is_absorbing(**s))
                .map(|&s| game.state_name(s).to_string()),
            trigger,
            payoff,
        });
    }

    let n = records.len() as f64;
    let mut mean = [0.0f64; 2];
    for r in &records {
        mean[0] += r.payoff[0];
        mean[1] += r.payoff[1];
    }
    mean[0] /= n;
    mean[1] /= n;
    let mut var = [0.0f64; 2];
    for r in &records {
        var[0] += (r.payoff[0] - mean[0]).powi(2);
        var[1] += (r.payoff[1] - mean[1]).powi(2);
    }
    let payoff_se = [
        (var[0] / (n * n.max(2.0) - n)).sqrt(),
        (var[1] / (n * n.max(2.0) - n)).sqrt(),
    ];
    let absorbed = records.iter().filter(|r| r.absorption_time.is_some()).count() as f64;
    let triggered = records.iter().filter(|r| r.trigger.is_some()).count() as f64;
    let trigger_rate = triggered / n;
    let trigger_se = (trigger_rate * (1.0 - trigger_rate) / n).sqrt();
    Ok(SimulationStats {
        seed,
        runs: n_runs,
        horizon,
        mean_payoff: mean,
        payoff_se,
        absorption_rate: absorbed / n,
        trigger_rate,
        trigger_se,
        records,
    })
}

// ---------------------------------------------------------------------------
// Product construction
// ---------------------------------------------------------------------------

/// The product of game states with profile memory, explored from the
/// per-state initial memories.
pub struct ProductSpace<M> {
    pub nodes: Vec<(StateId, M)>,
    pub index: BTreeMap<(StateId, M), usize>,
    /// Entry node per game state.
    pub entry: Vec<usize>,
}

/// Explores the reachable product space under all responder actions.
pub fn explore_product<P: StrategyProfile>(
    game: &StochasticGame,
    profile: &P,
    responder: Player,
    cap: usize,
) -> Result<ProductSpace<P::Mem>> {
    let mut nodes: Vec<(StateId, P::Mem)> = Vec::new();
    let mut index: BTreeMap<(StateId, P::Mem), usize> = BTreeMap::new();
    let mut queue: VecDeque<usize> = VecDeque::new();
    let mut entry = Vec::with_capacity(game.num_states());
    for s in 0..game.num_states() {
        let key = (s, profile.initial(s));
        let id = match index.get(&key) {
            Some(&id) => id,
            None => {
                let id = nodes.len();
                nodes.push(key.clone());
                index.insert(key, id);
                queue.push_back(id);
                id
            }
        };
        entry.push(id);
    }
    while let Some(id) = queue.pop_front() {
        let (s, mem) = nodes[id].clone();
        if game.is_absorbing(s) {
            continue;
        }
        let prescribed = profile.prescribed(game, &mem, s)?;
        let opp_mix = &prescribed[responder.opponent().index()];
        for a_resp in 0..game.num_actions(responder) {
            for a_opp in opp_mix.support() {
                let (a1, a2) = match responder {
                    Player::One => (a_resp, a_opp),
                    Player::Two => (a_opp, a_resp),
                };
                let row = game.kernel.row(s, a1, a2);
                for (t, p) in row.iter().enumerate() {
                    if !p.is_positive() {
                        continue;
                    }
                    let next_mem = profile.advance(game, &mem, s, a1, a2, t)?;
                    let key = (t, next_mem);
                    if !index.contains_key(&key) {
                        let nid = nodes.len();
                        if nid >= cap {
                            return Err(Error::NoConvergence(format!(
                                "product space exceeded the cap of {cap} nodes"
                            )));
                        }
                        nodes.push(key.clone());
                        index.insert(key, nid);
                        queue.push_back(nid);
                    }
                }
            }
        }
    }
    Ok(ProductSpace {
        nodes,
        index,
        entry,
    })
}

// ---------------------------------------------------------------------------
// Best responses
// ---------------------------------------------------------------------------

/// How a best-response value was computed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum BrMethod {
    ExactProductMdp,
    VanishingDiscount { error: f64 },
    Sampled { half_width: f64 },
}

/// Best-response computation output: value per initial game state for the
/// responder, and the method used.
#[derive(Debug, Clone)]
pub struct BestResponse {
    pub responder: Player,
    pub values: Vec<Rational>,
    pub method: BrMethod,
}

/// Exact (or, for the average payoff on large products, extrapolated) best
/// response of `responder` against the opponent side of a finite-memory
/// profile. When the reachable product memory exceeds the cap, a sampled
/// lower-bound estimate with a declared statistical error takes over.
pub fn best_response<P: StrategyProfile>(
    game: &StochasticGame,
    profile: &P,
    responder: Player,
    cap: usize,
) -> Result<BestResponse> {
    let space = match explore_product(game, profile, responder, cap) {
        Ok(space) => space,
        Err(Error::NoConvergence(_)) => {
            return sampled_best_response(game, profile, responder);
        }
        Err(e) => return Err(e),
    };
    match game.objective(responder) {
        Objective::RecursiveAbsorbing { default } => {
            let values = recursive_product_br(game, profile, responder, &space, default)?;
            Ok(BestResponse {
                responder,
                values,
                method: BrMethod::ExactProductMdp,
            })
        }
        Objective::LongRunAverage { .. } => lra_product_br(game, profile, responder, &space),
        Objective::Discounted { lambda, .. } => {
            let values =
                discounted_product_br(game, profile, responder, &space, lambda.clone())?;
            Ok(BestResponse {
                responder,
                values,
                method: BrMethod::ExactProductMdp,
            })
        }
        Objective::Buchi { target, win, lose } => {
            let values = buchi_product_br(
                game,
                profile,
                responder,
                &space,
                &target.clone(),
                &win.clone(),
                &lose.clone(),
                false,
            )?;
            Ok(BestResponse {
                responder,
                values,
                method: BrMethod::ExactProductMdp,
            })
        }
        o => Err(Error::ValueOracle(format!(
            "no best-response solver for objective {}",
            o.kind()
        ))),
    }
}

/// Sampled lower-bound best response: the best mean payoff of a pool of
/// stationary responder candidates against the profile's opponent side,
/// estimated by simulation. A heuristic floor on the true best response;
/// the half-width reports the sampling error of the best candidate.
fn sampled_best_response<P: StrategyProfile>(
    game: &StochasticGame,
    profile: &P,
    responder: Player,
) -> Result<BestResponse> {
    struct ResponderOverride<'a, P: StrategyProfile> {
        inner: &'a P,
        responder: Player,
        strategy: StationaryStrategy,
    }
    impl<P: StrategyProfile> StrategyProfile for ResponderOverride<'_, P> {
        type Mem = P::Mem;
        fn initial(&self, s: StateId) -> P::Mem {
            self.inner.initial(s)
        }
        fn prescribed(
            &self,
            game: &StochasticGame,
            mem: &P::Mem,
            s: StateId,
        ) -> Result<[MixedAction; 2]> {
            let mut pair = self.inner.prescribed(game, mem, s)?;
            pair[self.responder.index()] = self.strategy.action(s).clone();
            Ok(pair)
        }
        fn advance(
            &self,
            game: &StochasticGame,
            mem: &P::Mem,
            s: StateId,
            a1: ActionId,
            a2: ActionId,
            next: StateId,
        ) -> Result<P::Mem> {
            self.inner.advance(game, mem, s, a1, a2, next)
        }
    }

    let n_own = game.num_actions(responder);
    let mut candidates: Vec<StationaryStrategy> = Vec::new();
    for a in 0..n_own {
        candidates.push(StationaryStrategy {
            player: responder,
            actions: vec![MixedAction::pure(n_own, a); game.num_states()],
        });
    }
    candidates.push(StationaryStrategy {
        player: responder,
        actions: vec![MixedAction::uniform(n_own); game.num_states()],
    });
    let mut rng = ChaCha8Rng::seed_from_u64(0x5a3d);
    for _ in 0..8 {
        candidates.push(StationaryStrategy {
            player: responder,
            actions: (0..game.num_states())
                .map(|_| MixedAction::pure(n_own, rng.gen_range(0..n_own)))
                .collect(),
        });
    }

    let runs = 512;
    let horizon = 512;
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    for cand in candidates {
        let wrapped = ResponderOverride {
            inner: profile,
            responder,
            strategy: cand,
        };
        let mut per_state = Vec::with_capacity(game.num_states());
        let mut worst_se: f64 = 0.0;
        let mut mean_total = 0.0;
        for s in 0..game.num_states() {
            let stats = simulate(game, &wrapped, s, horizon, runs, 0x5a3d)?;
            per_state.push(stats.mean_payoff[responder.index()]);
            worst_se = worst_se.max(stats.payoff_se[responder.index()]);
            mean_total += stats.mean_payoff[responder.index()];
        }
        if best.as_ref().map(|(m, _, _)| mean_total > *m).unwrap_or(true) {
            best = Some((mean_total, worst_se, per_state));
        }
    }
    let (_, se, per_state) = best.expect("candidate pool nonempty");
    Ok(BestResponse {
        responder,
        values: per_state.iter().map(|&x| crate::values::quantize(x)).collect(),
        method: BrMethod::Sampled {
            half_width: 3.0 * se,
        },
    })
}

/// Sparse responder-action transitions on the product.
fn product_transitions<P: StrategyProfile>(
    game: &StochasticGame,
    profile: &P,
    responder: Player,
    space: &ProductSpace<P::Mem>,
) -> Result<Vec<Vec<Vec<(usize, Rational)>>>> {
    let n_own = game.num_actions(responder);
    let mut out = vec![Vec::new(); space.nodes.len()];
    for (id, (s, mem)) in space.nodes.iter().enumerate() {
        if game.is_absorbing(*s) {
            continue;
        }
        let prescribed = profile.prescribed(game, mem, *s)?;
        let opp_mix = prescribed[responder.opponent().index()].clone();
        let mut acts = Vec::with_capacity(n_own);
        for a_resp in 0..n_own {
            let mut dist: BTreeMap<usize, Rational> = BTreeMap::new();
            for a_opp in opp_mix.support() {
                let w = opp_mix.prob(a_opp).clone();
                let (a1, a2) = match responder {
                    Player::One => (a_resp, a_opp),
                    Player::Two => (a_opp, a_resp),
                };
                let row = game.kernel.row(*s, a1, a2);
                for (t, p) in row.iter().enumerate() {
                    if !p.is_positive() {
                        continue;
                    }
                    let next_mem = profile.advance(game, mem, *s, a1, a2, t)?;
                    let nid = space.index[&(t, next_mem)];
                    *dist.entry(nid).or_insert_with(Rational::zero) += &w * p;
                }
            }
            acts.push(dist.into_iter().collect());
        }
        out[id] = acts;
    }
    Ok(out)
}

fn recursive_product_br<P: StrategyProfile>(
    game: &StochasticGame,
    profile: &P,
    responder: Player,
    space: &ProductSpace<P::Mem>,
    default: &Rational,
) -> Result<Vec<Rational>> {
    let transitions = product_transitions(game, profile, responder, space)?;
    let terminal: Vec<Option<Rational>> = space
        .nodes
        .iter()
        .map(|(s, _)| {
            if game.is_absorbing(*s) {
                Some(game.gamma_of(responder, *s) - default)
            } else {
                None
            }
        })
        .collect();
    let mdp = AbsorbingMdp {
        terminal,
        transitions,
    };
    let (values, _) = solve_absorbing_mdp(&mdp)?;
    Ok(space
        .entry
        .iter()
        .map(|&id| &values[id] + default)
        .collect())
}

fn discounted_product_br<P: StrategyProfile>(
    game: &StochasticGame,
    profile: &P,
    responder: Player,
    space: &ProductSpace<P::Mem>,
    lambda: Rational,
) -> Result<Vec<Rational>> {
    let payoffs = game
        .objective(responder)
        .stage_payoffs()
        .ok_or_else(|| Error::ObjectiveData("stage payoffs required".into()))?
        .clone();
    let transitions = product_transitions(game, profile, responder, space)?;
    let n = space.nodes.len();
    let n_own = game.num_actions(responder);
    // Stage payoff of (node, responder action) against the opponent mix.
    let mut reward = vec![vec![Rational::zero(); n_own]; n];
    for (id, (s, mem)) in space.nodes.iter().enumerate() {
        let prescribed = profile.prescribed(game, mem, *s)?;
        let opp_mix = prescribed[responder.opponent().index()].clone();
        for a_resp in 0..n_own {
            let mut acc = Rational::zero();
            for a_opp in opp_mix.support() {
                let (a1, a2) = match responder {
                    Player::One => (a_resp, a_opp),
                    Player::Two => (a_opp, a_resp),
                };
                acc += opp_mix.prob(a_opp) * payoffs.get(*s, a1, a2);
            }
            reward[id][a_resp] = acc;
        }
    }
    // Exact policy iteration; the discount makes every policy proper.
    let one_minus = Rational::one() - &lambda;
    let mut policy = vec![0usize; n];
    loop {
        // Evaluate: (I - (1-λ) P_π) v = λ r_π.
        let mut a = vec![vec![Rational::zero(); n]; n];
        let mut b = vec![Rational::zero(); n];
        for id in 0..n {
            a[id][id] = Rational::one();
            if transitions[id].is_empty() {
                // Absorbing node: v = stage payoff under the only behavior.
                b[id] = &lambda * &reward[id].first().cloned().unwrap_or_else(Rational::zero)
                    / (Rational::one() - &one_minus);
                continue;
            }
            for (t, p) in &transitions[id][policy[id]] {
                a[id][*t] -= &one_minus * p;
            }
            b[id] = &lambda * &reward[id][policy[id]];
        }
        let v = lp::solve_linear(&a, &b)
            .ok_or_else(|| Error::ValueOracle("discounted evaluation singular".into()))?;
        let mut improved = false;
        for id in 0..n {
            if transitions[id].is_empty() {
                continue;
            }
            let mut best = policy[id];
            let mut best_q = q_value(&reward[id][policy[id]], &transitions[id][policy[id]], &v, &lambda, &one_minus);
            for act in 0..transitions[id].len() {
                if act == policy[id] {
                    continue;
                }
                let q = q_value(&reward[id][act], &transitions[id][act], &v, &lambda, &one_minus);
                if q > best_q {
                    best_q = q;
                    best = act;
                }
            }
            if best != policy[id] {
                policy[id] = best;
                improved = true;
            }
        }
        if !improved {
            // Absorbing-node rewards: stage payoff there is constant.
            let mut values = vec![Rational::zero(); game.num_states()];
            for (s, &id) in space.entry.iter().enumerate() {
                values[s] = v[id].clone();
            }
            return Ok(values);
        }
    }
}

fn q_value(
    r: &Rational,
    row: &[(usize, Rational)],
    v: &[Rational],
    lambda: &Rational,
    one_minus: &Rational,
) -> Rational {
    let cont: Rational = row.iter().map(|(t, p)| p * &v[*t]).sum();
    lambda * r + one_minus * &cont
}

/// Exact long-run-average best response by exhaustive pure-policy
/// enumeration when the product is small; vanishing-discount otherwise.
fn lra_product_br<P: StrategyProfile>(
    game: &StochasticGame,
    profile: &P,
    responder: Player,
    space: &ProductSpace<P::Mem>,
) -> Result<BestResponse> {
    let transitions = product_transitions(game, profile, responder, space)?;
    let payoffs = game
        .objective(responder)
        .stage_payoffs()
        .ok_or_else(|| Error::ObjectiveData("stage payoffs required".into()))?
        .clone();
    let n = space.nodes.len();
    let n_own = game.num_actions(responder);
    let mut reward = vec![vec![Rational::zero(); n_own]; n];
    for (id, (s, mem)) in space.nodes.iter().enumerate() {
        let prescribed = profile.prescribed(game, mem, *s)?;
        let opp_mix = prescribed[responder.opponent().index()].clone();
        for a_resp in 0..n_own {
            let mut acc = Rational::zero();
            for a_opp in opp_mix.support() {
                let (a1, a2) = match responder {
                    Player::One => (a_resp, a_opp),
                    Player::Two => (a_opp, a_resp),
                };
                acc += opp_mix.prob(a_opp) * payoffs.get(*s, a1, a2);
            }
            reward[id][a_resp] = acc;
        }
    }
    let decision: Vec<usize> = (0..n).filter(|&id| !transitions[id].is_empty()).collect();
    let mut policy_count: usize = 1;
    for _ in &decision {
        policy_count = policy_count.saturating_mul(n_own);
        if policy_count > 4096 {
            break;
        }
    }
    if policy_count <= 4096 {
        // Exhaustive: the uniform gain-optimal policy dominates per state.
        let mut best: Option<Vec<Rational>> = None;
        let mut assignment = vec![0usize; decision.len()];
        loop {
            let mut policy = vec![0usize; n];
            for (k, &id) in decision.iter().enumerate() {
                policy[id] = assignment[k];
            }
            let gains = policy_gains(&transitions, &reward, &policy)?;
            best = Some(match best {
                None => gains,
                Some(cur) => cur
                    .into_iter()
                    .zip(gains)
                    .map(|(a, b)| if b > a { b } else { a })
                    .collect(),
            });
            // Increment the assignment vector.
            let mut k = 0;
            loop {
                if k == assignment.len() {
                    let values = space
                        .entry
                        .iter()
                        .map(|&id| best.as_ref().unwrap()[id].clone())
                        .collect();
                    return Ok(BestResponse {
                        responder,
                        values,
                        method: BrMethod::ExactProductMdp,
                    });
                }
                assignment[k] += 1;
                if assignment[k] < n_own {
                    break;
                }
                assignment[k] = 0;
                k += 1;
            }
            if assignment.iter().all(|&x| x == 0) {
                let values = space
                    .entry
                    .iter()
                    .map(|&id| best.as_ref().unwrap()[id].clone())
                    .collect();
                return Ok(BestResponse {
                    responder,
                    values,
                    method: BrMethod::ExactProductMdp,
                });
            }
        }
    }
    // Vanishing-discount fallback on the product.
    let mut prev: Option<Vec<f64>> = None;
    let mut extrapolated = vec![0.0f64; n];
    let mut error = f64::INFINITY;
    let mut prev_extrap: Option<Vec<f64>> = None;
    for k in 1..=10 {
        let lambda = 0.5f64.powi(k);
        let v = discounted_vi_f64(&transitions, &reward, lambda);
        if let Some(p) = &prev {
            for id in 0..n {
                extrapolated[id] = 2.0 * v[id] - p[id];
            }
            if let Some(pe) = &prev_extrap {
                error = extrapolated
                    .iter()
                    .zip(pe)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
            }
            prev_extrap = Some(extrapolated.clone());
        }
        prev = Some(v);
    }
    Ok(BestResponse {
        responder,
        values: space
            .entry
            .iter()
            .map(|&id| crate::values::quantize(extrapolated[id]))
            .collect(),
        method: BrMethod::VanishingDiscount { error },
    })
}

fn discounted_vi_f64(
    transitions: &[Vec<Vec<(usize, Rational)>>],
    reward: &[Vec<Rational>],
    lambda: f64,
) -> Vec<f64> {
    let n = transitions.len();
    let mut v = vec![0.0f64; n];
    loop {
        let mut delta: f64 = 0.0;
        let mut next = vec![0.0f64; n];
        for id in 0..n {
            if transitions[id].is_empty() {
                let r = reward[id]
                    .first()
                    .map(rational_to_f64)
                    .unwrap_or(0.0);
                next[id] = r;
                delta = delta.max((next[id] - v[id]).abs());
                continue;
            }
            let best = (0..transitions[id].len())
                .map(|a| {
                    lambda * rational_to_f64(&reward[id][a])
                        + (1.0 - lambda)
                            * transitions[id][a]
                                .iter()
                                .map(|(t, p)| rational_to_f64(p) * v[*t])
                                .sum::<f64>()
                })
                .fold(f64::NEG_INFINITY, f64::max);
            next[id] = best;
            delta = delta.max((best - v[id]).abs());
        }
        v = next;
        if delta < 1e-12 {
            return v;
        }
    }
}

/// Exact per-state gains of one pure policy on the product (multichain).
fn policy_gains(
    transitions: &[Vec<Vec<(usize, Rational)>>],
    reward: &[Vec<Rational>],
    policy: &[usize],
) -> Result<Vec<Rational>> {
    let n = transitions.len();
    // Chain rows under the policy.
    let rows: Vec<Vec<(usize, Rational)>> = (0..n)
        .map(|id| {
            if transitions[id].is_empty() {
                vec![(id, Rational::one())]
            } else {
                transitions[id][policy[id]].clone()
            }
        })
        .collect();
    let classes = recurrent_classes(&rows);
    // Gain of each class: stationary average of the policy rewards.
    let mut gain_of_node = vec![None; n];
    for class in &classes {
        let pi = stationary_distribution(&rows, class)?;
        let g: Rational = class
            .iter()
            .zip(&pi)
            .map(|(&id, w)| {
                let r = if transitions[id].is_empty() {
                    reward[id].first().cloned().unwrap_or_else(Rational::zero)
                } else {
                    reward[id][policy[id]].clone()
                };
                w * &r
            })
            .sum();
        for &id in class {
            gain_of_node[id] = Some(g.clone());
        }
    }
    // Transient gains: absorption-weighted class gains.
    let mut dense = vec![vec![Rational::zero(); n]; n];
    for (id, row) in rows.iter().enumerate() {
        for (t, p) in row {
            dense[id][*t] = p.clone();
        }
    }
    let mut out = vec![Rational::zero(); n];
    // For each class, absorption probability from every node.
    for class in &classes {
        let mut collapsed = dense.clone();
        // Other recurrent nodes become self-looping dead ends.
        for other in &classes {
            if other == class {
                continue;
            }
            for &id in other {
                let mut row = vec![Rational::zero(); n];
                row[id] = Rational::one();
                collapsed[id] = row;
            }
        }
        let target: BTreeSet<usize> = class.iter().copied().collect();
        let probs = absorption_of_chain(&collapsed, &target)?;
        let g = gain_of_node[*class.iter().next().unwrap()]
            .clone()
            .unwrap();
        for id in 0..n {
            if gain_of_node[id].is_none() {
                out[id] += &probs[id] * &g;
            }
        }
    }
    for id in 0..n {
        if let Some(g) = &gain_of_node[id] {
            out[id] = g.clone();
        }
    }
    Ok(out)
}

/// Bottom strongly connected classes of a sparse chain.
fn recurrent_classes(rows: &[Vec<(usize, Rational)>]) -> Vec<Vec<usize>> {
    let n = rows.len();
    let succ: BTreeMap<usize, BTreeSet<usize>> = (0..n)
        .map(|id| {
            (
                id,
                rows[id]
                    .iter()
                    .filter(|(_, p)| p.is_positive())
                    .map(|(t, _)| *t)
                    .collect(),
            )
        })
        .collect();
    // Tarjan-free: iterate Kosaraju via the shared helper style.
    let mut order = Vec::new();
    let mut seen = vec![false; n];
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut stack = vec![(start, false)];
        while let Some((u, processed)) = stack.pop() {
            if processed {
                order.push(u);
                continue;
            }
            if seen[u] {
                continue;
            }
            seen[u] = true;
            stack.push((u, true));
            for &w in &succ[&u] {
                if !seen[w] {
                    stack.push((w, false));
                }
            }
        }
    }
    let mut rev: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (u, next) in &succ {
        for &w in next {
            rev[w].push(*u);
        }
    }
    let mut assigned = vec![false; n];
    let mut classes = Vec::new();
    for &u in order.iter().rev() {
        if assigned[u] {
            continue;
        }
        let mut comp = Vec::new();
        let mut stack = vec![u];
        while let Some(v) = stack.pop() {
            if assigned[v] {
                continue;
            }
            assigned[v] = true;
            comp.push(v);
            for &w in &rev[v] {
                if !assigned[w] {
                    stack.push(w);
                }
            }
        }
        comp.sort_unstable();
        classes.push(comp);
    }
    // Keep bottom classes only: no edge leaving the class.
    classes
        .into_iter()
        .filter(|comp| {
            comp.iter().all(|&u| {
                succ[&u]
                    .iter()
                    .all(|w| comp.binary_search(w).is_ok())
            })
        })
        .collect()
}

/// Exact stationary distribution of the chain restricted to one recurrent
/// class.
fn stationary_distribution(
    rows: &[Vec<(usize, Rational)>],
    class: &[usize],
) -> Result<Vec<Rational>> {
    let m = class.len();
    let index: BTreeMap<usize, usize> = class.iter().enumerate().map(|(k, &u)| (u, k)).collect();
    // pi (P - I) = 0 with sum pi = 1: replace the last column equation.
    let mut a = vec![vec![Rational::zero(); m]; m];
    let mut b = vec![Rational::zero(); m];
    for col in 0..m {
        if col == m - 1 {
            for row in 0..m {
                a[col][row] = Rational::one();
            }
            b[col] = Rational::one();
            continue;
        }
        // Column equation: sum_u pi_u P(u -> class[col]) - pi_col = 0.
        for (&u, &k) in index.iter() {
            for (t, p) in &rows[u] {
                if *t == class[col] {
                    a[col][k] += p;
                }
            }
        }
        a[col][col] -= Rational::one();
    }
    lp::solve_linear(&a, &b)
        .ok_or_else(|| Error::ValueOracle("stationary distribution singular".into()))
}

fn buchi_product_br<P: StrategyProfile>(
    game: &StochasticGame,
    profile: &P,
    responder: Player,
    space: &ProductSpace<P::Mem>,
    target: &BTreeSet<StateId>,
    win: &Rational,
    lose: &Rational,
    complement: bool,
) -> Result<Vec<Rational>> {
    let transitions = product_transitions(game, profile, responder, space)?;
    let n = space.nodes.len();
    // Maximal end components via iterative refinement.
    let mecs = maximal_end_components(&transitions);
    let mut winning: BTreeSet<usize> = BTreeSet::new();
    for (nodes, _) in &mecs {
        let accepts = nodes
            .iter()
            .any(|&id| target.contains(&space.nodes[id].0));
        let good = if complement { !accepts } else { accepts };
        if good {
            winning.extend(nodes.iter().copied());
        }
    }
    // Max probability of reaching the winning region: positive MDP with
    // terminal reward one.
    let terminal: Vec<Option<Rational>> = (0..n)
        .map(|id| {
            if winning.contains(&id) {
                Some(Rational::one())
            } else if transitions[id].is_empty() {
                Some(Rational::zero())
            } else {
                None
            }
        })
        .collect();
    let trans2: Vec<Vec<Vec<(usize, Rational)>>> = (0..n)
        .map(|id| {
            if terminal[id].is_some() {
                Vec::new()
            } else {
                transitions[id].clone()
            }
        })
        .collect();
    let mdp = AbsorbingMdp {
        terminal,
        transitions: trans2,
    };
    let (probs, _) = solve_absorbing_mdp(&mdp)?;
    Ok(space
        .entry
        .iter()
        .map(|&id| lose + (win - lose) * &probs[id])
        .collect())
}

/// Maximal end components of a single-controller sparse MDP: pairs of
/// (nodes, allowed actions per node).
fn maximal_end_components(
    transitions: &[Vec<Vec<(usize, Rational)>>],
) -> Vec<(Vec<usize>, BTreeMap<usize, Vec<usize>>)> {
    let n = transitions.len();
    let mut out = Vec::new();
    // Work queue of candidate node sets.
    let mut queue: Vec<BTreeSet<usize>> = vec![(0..n).collect()];
    while let Some(candidate) = queue.pop() {
        // Allowed actions keep all mass inside the candidate.
        let mut allowed: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let mut nodes: BTreeSet<usize> = BTreeSet::new();
        for &id in &candidate {
            if transitions[id].is_empty() {
                // Absorbing: a trivial self end component handled separately.
                continue;
            }
            let acts: Vec<usize> = (0..transitions[id].len())
                .filter(|&a| {
                    transitions[id][a]
                        .iter()
                        .all(|(t, _)| candidate.contains(t))
                })
                .collect();
            if !acts.is_empty() {
                allowed.insert(id, acts);
                nodes.insert(id);
            }
        }
        if nodes.is_empty() {
            continue;
        }
        if nodes.len() < candidate.len() {
            queue.push(nodes);
            continue;
        }
        // Split into strongly connected parts under allowed actions.
        let rows: Vec<Vec<(usize, Rational)>> = (0..n)
            .map(|id| {
                if let Some(acts) = allowed.get(&id) {
                    acts.iter()
                        .flat_map(|&a| transitions[id][a].iter().cloned())
                        .collect()
                } else {
                    vec![(id, Rational::one())]
                }
            })
            .collect();
        let classes = strongly_connected(&rows, &nodes);
        if classes.len() == 1 && classes[0].len() == nodes.len() {
            out.push((classes[0].clone(), allowed));
        } else {
            for class in classes {
                if !class.is_empty() {
                    queue.push(class.into_iter().collect());
                }
            }
        }
    }
    out
}

fn strongly_connected(
    rows: &[Vec<(usize, Rational)>],
    nodes: &BTreeSet<usize>,
) -> Vec<Vec<usize>> {
    // Kosaraju restricted to `nodes`.
    let mut order = Vec::new();
    let mut seen: BTreeSet<usize> = BTreeSet::new();
    for &start in nodes {
        if seen.contains(&start) {
            continue;
        }
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
            for (w, _) in &rows[u] {
                if nodes.contains(w) && !seen.contains(w) {
                    stack.push((*w, false));
                }
            }
        }
    }
    let mut rev: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &u in nodes {
        for (w, _) in &rows[u] {
            if nodes.contains(w) {
                rev.entry(*w).or_default().push(u);
            }
        }
    }
    let mut assigned: BTreeSet<usize> = BTreeSet::new();
    let mut out = Vec::new();
    for &u in order.iter().rev() {
        if assigned.contains(&u) {
            continue;
        }
        let mut comp = Vec::new();
        let mut stack = vec![u];
        while let Some(v) = stack.pop() {
            if !assigned.insert(v) {
                continue;
            }
            comp.push(v);
            if let Some(prev) = rev.get(&v) {
                for &w in prev {
                    if !assigned.contains(&w) {
                        stack.push(w);
                    }
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

// ---------------------------------------------------------------------------
// On-path values and verification
// ---------------------------------------------------------------------------

/// Exact on-path values of a profile: both players' expected payoffs from
/// each initial state under the induced product chain.
pub fn on_path_values<P: StrategyProfile>(
    game: &StochasticGame,
    profile: &P,
    cap: usize,
) -> Result<[Vec<Rational>; 2]> {
    // The on-path chain explores only prescribed supports.
    let mut nodes: Vec<(StateId, P::Mem)> = Vec::new();
    let mut index: BTreeMap<(StateId, P::Mem), usize> = BTreeMap::new();
    let mut queue: VecDeque<usize> = VecDeque::new();
    let mut entry = Vec::with_capacity(game.num_states());
    for s in 0..game.num_states() {
        let key = (s, profile.initial(s));
        let id = match index.get(&key) {
            Some(&id) => id,
            None => {
                let id = nodes.len();
                nodes.push(key.clone());
                index.insert(key, id);
                queue.push_back(id);
                id
            }
        };
        entry.push(id);
    }
    let mut rows_sparse: Vec<Vec<(usize, Rational)>> = Vec::new();
    let mut stage_payoff: Vec<[Rational; 2]> = Vec::new();
    while let Some(id) = queue.pop_front() {
        let (s, mem) = nodes[id].clone();
        while rows_sparse.len() <= id {
            rows_sparse.push(Vec::new());
            stage_payoff.push([Rational::zero(), Rational::zero()]);
        }
        if game.is_absorbing(s) {
            rows_sparse[id] = vec![(id, Rational::one())];
            for p in Player::BOTH {
                stage_payoff[id][p.index()] = match game.objective(p) {
                    Objective::LongRunAverage { payoffs }
                    | Objective::Discounted { payoffs, .. } => payoffs.get(s, 0, 0).clone(),
                    _ => Rational::zero(),
                };
            }
            continue;
        }
        let [x1, x2] = profile.prescribed(game, &mem, s)?;
        let mut dist: BTreeMap<usize, Rational> = BTreeMap::new();
        let mut pay = [Rational::zero(), Rational::zero()];
        for a1 in x1.support() {
            for a2 in x2.support() {
                let w = x1.prob(a1) * x2.prob(a2);
                for p in Player::BOTH {
                    if let Some(payoffs) = game.objective(p).stage_payoffs() {
                        pay[p.index()] += &w * payoffs.get(s, a1, a2);
                    }
                }
                let row = game.kernel.row(s, a1, a2);
                for (t, pr) in row.iter().enumerate() {
                    if !pr.is_positive() {
                        continue;
                    }
                    let next_mem = profile.advance(game, &mem, s, a1, a2, t)?;
                    let key = (t, next_mem);
                    let nid = match index.get(&key) {
                        Some(&nid) => nid,
                        None => {
                            let nid = nodes.len();
                            if nid >= cap {
                                return Err(Error::NoConvergence(
                                    "on-path product exceeded its cap".into(),
                                ));
                            }
                            nodes.push(key.clone());
                            index.insert(key, nid);
                            queue.push_back(nid);
                            nid
                        }
                    };
                    *dist.entry(nid).or_insert_with(Rational::zero) += &w * pr;
                }
            }
        }
        rows_sparse[id] = dist.into_iter().collect();
        stage_payoff[id] = pay;
    }
    let n = nodes.len();
    while rows_sparse.len() < n {
        rows_sparse.push(Vec::new());
        stage_payoff.push([Rational::zero(), Rational::zero()]);
    }

    let mut out = [vec![Rational::zero(); game.num_states()], vec![
        Rational::zero();
        game.num_states()
    ]];
    for p in Player::BOTH {
        let values = match game.objective(p) {
            Objective::RecursiveAbsorbing { default } => {
                // Absorption distribution over absorbing product nodes.
                let absorbing: BTreeSet<usize> = (0..n)
                    .filter(|&id| game.is_absorbing(nodes[id].0))
                    .collect();
                let dense: Vec<Vec<Rational>> = sparse_to_dense(&rows_sparse, n);
                let reach = absorption_of_chain(&dense, &absorbing)?;
                let mut vals = vec![Rational::zero(); n];
                // Value = default * P(no absorption) + sum over targets.
                for &t in &absorbing {
                    let single: BTreeSet<usize> = [t].into_iter().collect();
                    let mut collapsed = dense.clone();
                    for &o in &absorbing {
                        if o != t {
                            let mut row = vec![Rational::zero(); n];
                            row[o] = Rational::one();
                            collapsed[o] = row;
                        }
                    }
                    let probs = absorption_of_chain(&collapsed, &single)?;
                    let g = game.gamma_of(p, nodes[t].0).clone();
                    for id in 0..n {
                        vals[id] += &probs[id] * &g;
                    }
                }
                for id in 0..n {
                    let no_abs = Rational::one() - &reach[id];
                    vals[id] += &no_abs * default;
                }
                vals
            }
            Objective::LongRunAverage { .. } => {
                let reward: Vec<Vec<Rational>> = stage_payoff
                    .iter()
                    .map(|pair| vec![pair[p.index()].clone()])
                    .collect();
                let trans: Vec<Vec<Vec<(usize, Rational)>>> = rows_sparse
                    .iter()
                    .map(|row| vec![row.clone()])
                    .collect();
                policy_gains(&trans, &reward, &vec![0usize; n])?
            }
            Objective::Discounted { lambda, .. } => {
                // (I - (1-λ)P) v = λ r.
                let one_minus = Rational::one() - lambda;
                let mut a = vec![vec![Rational::zero(); n]; n];
                let mut b = vec![Rational::zero(); n];
                for id in 0..n {
                    a[id][id] = Rational::one();
                    for (t, pr) in &rows_sparse[id] {
                        a[id][*t] -= &one_minus * pr;
                    }
                    b[id] = lambda * &stage_payoff[id][p.index()];
                }
                lp::solve_linear(&a, &b)
                    .ok_or_else(|| Error::ValueOracle("on-path discounted solve".into()))?
            }
            Objective::Buchi { target, win, lose } => {
                buchi_on_path(&rows_sparse, &nodes, target, win, lose, false)?
            }
            Objective::CoBuchi { avoid, win, lose } => {
                buchi_on_path(&rows_sparse, &nodes, avoid, win, lose, true)?
            }
            o => {
                return Err(Error::ValueOracle(format!(
                    "no on-path evaluation for objective {}",
                    o.kind()
                )))
            }
        };
        for (s, &id) in entry.iter().enumerate() {
            out[p.index()][s] = values[id].clone();
        }
    }
    Ok(out)
}

fn sparse_to_dense(rows: &[Vec<(usize, Rational)>], n: usize) -> Vec<Vec<Rational>> {
    rows.iter()
        .map(|row| {
            let mut dense = vec![Rational::zero(); n];
            for (t, p) in row {
                dense[*t] = p.clone();
            }
            dense
        })
        .collect()
}

fn buchi_on_path<M>(
    rows: &[Vec<(usize, Rational)>],
    nodes: &[(StateId, M)],
    set: &BTreeSet<StateId>,
    win: &Rational,
    lose: &Rational,
    complement: bool,
) -> Result<Vec<Rational>> {
    let n = rows.len();
    let classes = recurrent_classes(rows);
    let mut accepting_nodes: BTreeSet<usize> = BTreeSet::new();
    for class in &classes {
        let visits = class.iter().any(|&id| set.contains(&nodes[id].0));
        let good = if complement { !visits } else { visits };
        if good {
            accepting_nodes.extend(class.iter().copied());
        }
    }
    // Probability of being absorbed into an accepting class.
    let dense = sparse_to_dense(rows, n);
    let mut collapsed = dense.clone();
    for class in &classes {
        let accept = class.iter().any(|id| accepting_nodes.contains(id));
        if !accept {
            for &id in class {
                let mut row = vec![Rational::zero(); n];
                row[id] = Rational::one();
                collapsed[id] = row;
            }
        }
    }
    let probs = absorption_of_chain(&collapsed, &accepting_nodes)?;
    Ok(probs
        .iter()
        .map(|p| lose + (win - lose) * p)
        .collect())
}

/// Verdict of an equilibrium verification.
#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    /// Max best-response gap per player over nonabsorbing initial states.
    pub gaps: [String; 2],
    pub gaps_f64: [f64; 2],
    pub method: [BrMethod; 2],
    pub epsilon: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// On-path values per player and state (decimal strings).
    pub on_path: [Vec<String>; 2],
}

/// Verifies an ε-equilibrium claim: exact on-path values, best responses per
/// player, and the per-player gap verdict at `epsilon + tolerance`.
pub fn verify_equilibrium<P: StrategyProfile>(
    game: &StochasticGame,
    profile: &P,
    epsilon: f64,
    tolerance: f64,
    cap: usize,
) -> Result<VerificationReport> {
    let on_path = on_path_values(game, profile, cap)?;
    let br1 = best_response(game, profile, Player::One, cap)?;
    let br2 = best_response(game, profile, Player::Two, cap)?;
    let mut gaps = [Rational::zero(), Rational::zero()];
    for s in 0..game.num_states() {
        if game.is_absorbing(s) {
            continue;
        }
        let g1 = &br1.values[s] - &on_path[0][s];
        let g2 = &br2.values[s] - &on_path[1][s];
        if g1 > gaps[0] {
            gaps[0] = g1;
        }
        if g2 > gaps[1] {
            gaps[1] = g2;
        }
    }
    let budget = crate::game::rational_from_f64(epsilon + tolerance);
    let pass = gaps[0] <= budget && gaps[1] <= budget;
    Ok(VerificationReport {
        gaps: [
            crate::game::format_rational(&gaps[0]),
            crate::game::format_rational(&gaps[1]),
        ],
        gaps_f64: [rational_to_f64(&gaps[0]), rational_to_f64(&gaps[1])],
        method: [br1.method, br2.method],
        epsilon,
        tolerance,
        pass,
        on_path: [
            on_path[0].iter().map(|v| rational_to_f64(v).to_string()).collect(),
            on_path[1].iter().map(|v| rational_to_f64(v).to_string()).collect(),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::game::parse_rational;

    fn pure_pair(game: &StochasticGame, a1: ActionId, a2: ActionId) -> StationaryPair {
        StationaryPair {
            x1: StationaryStrategy {
                player: Player::One,
                actions: (0..game.num_states())
                    .map(|_| MixedAction::pure(game.num_actions(Player::One), a1))
                    .collect(),
            },
            x2: StationaryStrategy {
                player: Player::Two,
                actions: (0..game.num_states())
                    .map(|_| MixedAction::pure(game.num_actions(Player::Two), a2))
                    .collect(),
            },
        }
    }

    #[test]
    fn simulate_absorbing_game_immediate() {
        let game = fixtures::g_abs();
        let pair = pure_pair(&game, 0, 0);
        let stats = simulate(&game, &pair, 0, 8, 50, 7).unwrap();
        assert_eq!(stats.absorption_rate, 1.0);
        assert!(stats
            .records
            .iter()
            .all(|r| r.absorption_time == Some(1)));
        assert!((stats.mean_payoff[0] + 1.0).abs() < 1e-12);
        assert!((stats.mean_payoff[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn simulate_reproducible_given_seed() {
        let game = fixtures::g_loop();
        let pair = pure_pair(&game, 1, 1);
        let a = simulate(&game, &pair, 0, 64, 100, 42).unwrap();
        let b = simulate(&game, &pair, 0, 64, 100, 42).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn product_space_of_stationary_pair_is_flat() {
        let game = fixtures::g_loop();
        let pair = pure_pair(&game, 0, 0);
        let space = explore_product(&game, &pair, Player::One, 10_000).unwrap();
        assert_eq!(space.nodes.len(), game.num_states());
    }

    #[test]
    fn best_response_in_loop_recursive() {
        let game = fixtures::g_loop();
        // Player 2 plays bhat everywhere; player 1 decides absorption.
        let pair = pure_pair(&game, 0, 1);
        let br = best_response(&game, &pair, Player::One, 10_000).unwrap();
        assert_eq!(br.method, BrMethod::ExactProductMdp);
        // Player 1's payoffs are -1 whether absorbed or not.
        assert_eq!(br.values[0], parse_rational("-1").unwrap());
        // Player 2's best response against player 1 playing ahat: play bhat,
        // absorb at gamma_2 = 2.
        let pair = pure_pair(&game, 1, 0);
        let br = best_response(&game, &pair, Player::Two, 10_000).unwrap();
        assert_eq!(br.values[0], parse_rational("2").unwrap());
    }

    #[test]
    fn best_response_matches_exhaustive_enumeration() {
        // Cross-check the recursive product solve against brute force over
        // the responder's pure stationary policies.
        for seed in [3u64, 11, 19] {
            let game = fixtures::random_game(seed, &fixtures::RandomGameConfig::default());
            let family = fixtures::singleton_family(&game, seed);
            let opp = StationaryStrategy {
                player: Player::Two,
                actions: (0..game.num_states())
                    .map(|s| family.cell(Player::Two, s)[0].clone())
                    .collect(),
            };
            let pair = StationaryPair {
                x1: StationaryStrategy {
                    player: Player::One,
                    actions: (0..game.num_states())
                        .map(|s| family.cell(Player::One, s)[0].clone())
                        .collect(),
                },
                x2: opp.clone(),
            };
            let br = best_response(&game, &pair, Player::One, 10_000).unwrap();
            // Brute force.
            let aux = crate::recursive::RecursiveGame {
                game: game.clone(),
                dummy: Default::default(),
            };
            let mut best: Option<Vec<Rational>> = None;
            for cand in fixtures::pure_stationary_strategies(&game, Player::One) {
                let on = crate::recursive::on_path_recursive_payoffs(&aux, &cand, &opp).unwrap();
                // Adjust for the nonabsorbed default of the original game.
                let probs = crate::recursive::absorption_probability(&game, &cand, &opp).unwrap();
                let default = match game.objective(Player::One) {
                    Objective::RecursiveAbsorbing { default } => default.clone(),
                    _ => unreachable!(),
                };
                let vals: Vec<Rational> = (0..game.num_states())
                    .map(|s| &on[0][s] + (Rational::one() - &probs[s]) * &default)
                    .collect();
                best = Some(match best {
                    None => vals,
                    Some(cur) => cur
                        .into_iter()
                        .zip(vals)
                        .map(|(a, b)| if b > a { b } else { a })
                        .collect(),
                });
            }
            let brute = best.unwrap();
            for s in 0..game.num_states() {
                assert_eq!(br.values[s], brute[s], "seed {seed} state {s}");
            }
        }
    }

    #[test]
    fn verify_absorbing_game_passes_trivially() {
        let game = fixtures::g_abs();
        let pair = pure_pair(&game, 0, 0);
        let report = verify_equilibrium(&game, &pair, 0.01, 1e-9, 10_000).unwrap();
        assert!(report.pass);
        assert_eq!(report.gaps_f64, [0.0, 0.0]);
    }

    #[test]
    fn verify_detects_profitable_deviation() {
        let game = fixtures::g_loop();
        // Player 1 cooperates (ahat) but player 2 refuses the exit: player
        // 2's best response reaches gamma_2 = 2 while on-path stays at 1.
        let pair = pure_pair(&game, 1, 0);
        let report = verify_equilibrium(&game, &pair, 0.05, 1e-9, 10_000).unwrap();
        assert!(!report.pass);
        assert!(report.gaps_f64[1] > 0.9);
    }

    #[test]
    fn on_path_lra_values_from_recurrent_class() {
        let game = fixtures::g_bm();
        // Both stationary: P1 plays B forever, P2 plays L: stage payoff for
        // P1 alternates? In go, (B, L) keeps the play at go with payoff 0
        // for P1 and 1 for P2.
        let pair = pure_pair(&game, 1, 0);
        let on = on_path_values(&game, &pair, 10_000).unwrap();
        assert_eq!(on[0][0], Rational::zero());
        assert_eq!(on[1][0], Rational::one());
    }

    #[test]
    fn empirical_frequencies_match_exact_chain() {
        let game = fixtures::g_loop();
        // Mixing pair with absorption probability strictly between 0 and 1
        // per stage; compare the sampled absorption rate to the exact one.
        let mix = MixedAction::new(vec![
            parse_rational("1/2").unwrap(),
            parse_rational("1/2").unwrap(),
        ])
        .unwrap();
        let pair = StationaryPair {
            x1: StationaryStrategy {
                player: Player::One,
                actions: vec![mix.clone(), MixedAction::pure(2, 0), MixedAction::pure(2, 0)],
            },
            x2: StationaryStrategy {
                player: Player::Two,
                actions: vec![mix, MixedAction::pure(2, 0), MixedAction::pure(2, 0)],
            },
        };
        let horizon = 400;
        let n_runs = 4000;
        let stats = simulate(&game, &pair, 0, horizon, n_runs, 99).unwrap();
        // Exact absorption by the chain: within the horizon this chain has
        // absorbed with probability 1 - (3/4)^(visits to state 1) ~ 1.
        let exact = crate::recursive::absorption_probability(&game, &pair.x1, &pair.x2).unwrap();
        let p = crate::game::rational_to_f64(&exact[0]);
        let se = (p * (1.0 - p) / n_runs as f64).sqrt().max(1e-3);
        assert!(
            (stats.absorption_rate - p).abs() <= 3.0 * se + 0.01,
            "sampled {} vs exact {}",
            stats.absorption_rate,
            p
        );
    }

    #[test]
    fn verification_antisymmetric_under_relabeling() {
        // Swap the two players everywhere (roles, actions, payoffs); the
        // per-player gaps of the relabeled profile swap too.
        let game = fixtures::g_loop();
        let mirrored = {
            let doc = fixtures::g_loop_document()
                .replace("\"a1\":", "\"atmp\":")
                .replace("\"a2\":", "\"a1\":")
                .replace("\"atmp\":", "\"a2\":")
                .replace("\"p1\":", "\"ptmp\":")
                .replace("\"p2\":", "\"p1\":")
                .replace("\"ptmp\":", "\"p2\":")
                .replace("\"g1\":", "\"gtmp\":")
                .replace("\"g2\":", "\"g1\":")
                .replace("\"gtmp\":", "\"g2\":");
            crate::game::load_game(&doc).unwrap()
        };
        // Original: player 1 cooperates with the exit, player 2 refuses it.
        let pair = pure_pair(&game, 1, 0);
        let report = verify_equilibrium(&game, &pair, 0.05, 1e-9, 10_000).unwrap();
        // Mirrored: player 2 cooperates, player 1 refuses.
        let mirrored_pair = pure_pair(&mirrored, 0, 1);
        let mirrored_report =
            verify_equilibrium(&mirrored, &mirrored_pair, 0.05, 1e-9, 10_000).unwrap();
        assert_eq!(report.gaps_f64[1], mirrored_report.gaps_f64[0]);
        assert_eq!(report.gaps_f64[0], mirrored_report.gaps_f64[1]);
    }

    #[test]
    fn lra_best_response_exact_on_big_match() {
        let game = fixtures::g_bm();
        // P2 plays L forever; P1's best response: play T at go (absorb at
        // hi with payoff 1 forever).
        let pair = pure_pair(&game, 1, 0);
        let br = best_response(&game, &pair, Player::One, 10_000).unwrap();
        assert_eq!(br.method, BrMethod::ExactProductMdp);
        assert_eq!(br.values[0], Rational::one());
    }
}
