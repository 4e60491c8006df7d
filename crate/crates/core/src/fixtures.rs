//! Shared example games and a seeded random-game generator for stress tests.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::game::{load_game, MixedAction, Player, StochasticGame};
use crate::{game, Rational};

/// Minimal game: one absorbing state with payoff pair `(-1, 1)`.
pub fn g_abs_document() -> &'static str {
    r#"{
        "states": ["star"],
        "actions": {"p1": ["a"], "p2": ["b"]},
        "kernel": [
            {"from": "star", "a1": "a", "a2": "b", "to": "star", "prob": "1"}
        ],
        "absorbing": {"star": {"g1": "-1", "g2": "1"}},
        "objective": {
            "p1": {"type": "recursive_absorbing", "default": "-1"},
            "p2": {"type": "recursive_absorbing", "default": "1"}
        }
    }"#
}

pub fn g_abs() -> StochasticGame {
    load_game(g_abs_document()).expect("fixture g_abs")
}

/// Three-state one-player game whose payoff (target state entered at an even
/// stage) is tail-measurable but not shift-invariant. Player 2 is a dummy.
pub fn g_ex1_document() -> &'static str {
    r#"{
        "states": ["1", "2", "3"],
        "actions": {"p1": ["T", "B"], "p2": ["w"]},
        "kernel": [
            {"from": "1", "a1": "T", "a2": "w", "to": "1", "prob": "1"},
            {"from": "1", "a1": "B", "a2": "w", "to": "2", "prob": "1"},
            {"from": "2", "a1": "T", "a2": "w", "to": "3", "prob": "1"},
            {"from": "2", "a1": "B", "a2": "w", "to": "3", "prob": "1"},
            {"from": "3", "a1": "T", "a2": "w", "to": "2", "prob": "1"},
            {"from": "3", "a1": "B", "a2": "w", "to": "2", "prob": "1"}
        ],
        "absorbing": {},
        "objective": {
            "p1": {"type": "even_stage_entry", "target": "2"},
            "p2": {"type": "even_stage_entry", "target": "2"}
        }
    }"#
}

pub fn g_ex1() -> StochasticGame {
    load_game(g_ex1_document()).expect("fixture g_ex1")
}

/// Big-Match-style game: one nonabsorbing state, 2x2 actions, two absorbing
/// states, long-run-average objectives with zero-sum stage payoffs.
pub fn g_bm_document() -> &'static str {
    r#"{
        "states": ["go", "hi", "lo"],
        "actions": {"p1": ["T", "B"], "p2": ["L", "R"]},
        "kernel": [
            {"from": "go", "a1": "T", "a2": "L", "to": "hi", "prob": "1"},
            {"from": "go", "a1": "T", "a2": "R", "to": "lo", "prob": "1"},
            {"from": "go", "a1": "B", "a2": "L", "to": "go", "prob": "1"},
            {"from": "go", "a1": "B", "a2": "R", "to": "go", "prob": "1"},
            {"from": "hi", "a1": "T", "a2": "L", "to": "hi", "prob": "1"},
            {"from": "hi", "a1": "T", "a2": "R", "to": "hi", "prob": "1"},
            {"from": "hi", "a1": "B", "a2": "L", "to": "hi", "prob": "1"},
            {"from": "hi", "a1": "B", "a2": "R", "to": "hi", "prob": "1"},
            {"from": "lo", "a1": "T", "a2": "L", "to": "lo", "prob": "1"},
            {"from": "lo", "a1": "T", "a2": "R", "to": "lo", "prob": "1"},
            {"from": "lo", "a1": "B", "a2": "L", "to": "lo", "prob": "1"},
            {"from": "lo", "a1": "B", "a2": "R", "to": "lo", "prob": "1"}
        ],
        "absorbing": {"hi": {"g1": "1", "g2": "0"}, "lo": {"g1": "0", "g2": "1"}},
        "objective": {
            "p1": {"type": "long_run_average", "payoffs": [
                {"state": "go", "a1": "T", "a2": "L", "value": "1"},
                {"state": "go", "a1": "B", "a2": "R", "value": "1"},
                {"state": "hi", "a1": "T", "a2": "L", "value": "1"},
                {"state": "hi", "a1": "T", "a2": "R", "value": "1"},
                {"state": "hi", "a1": "B", "a2": "L", "value": "1"},
                {"state": "hi", "a1": "B", "a2": "R", "value": "1"}
            ]},
            "p2": {"type": "long_run_average", "payoffs": [
                {"state": "go", "a1": "T", "a2": "R", "value": "1"},
                {"state": "go", "a1": "B", "a2": "L", "value": "1"},
                {"state": "lo", "a1": "T", "a2": "L", "value": "1"},
                {"state": "lo", "a1": "T", "a2": "R", "value": "1"},
                {"state": "lo", "a1": "B", "a2": "L", "value": "1"},
                {"state": "lo", "a1": "B", "a2": "R", "value": "1"}
            ]}
        }
    }"#
}

pub fn g_bm() -> StochasticGame {
    load_game(g_bm_document()).expect("fixture g_bm")
}

/// Two nonabsorbing states cycling into each other; the single pair
/// `(ahat, bhat)` in state 1 leads to an absorbing state with payoffs
/// `(-1, 2)`. Nonabsorbed defaults `(-1, 1)` keep the payoffs normalized.
pub fn g_loop_document() -> &'static str {
    r#"{
        "states": ["1", "2", "star"],
        "actions": {"p1": ["a", "ahat"], "p2": ["b", "bhat"]},
        "kernel": [
            {"from": "1", "a1": "a", "a2": "b", "to": "2", "prob": "1"},
            {"from": "1", "a1": "a", "a2": "bhat", "to": "2", "prob": "1"},
            {"from": "1", "a1": "ahat", "a2": "b", "to": "2", "prob": "1"},
            {"from": "1", "a1": "ahat", "a2": "bhat", "to": "star", "prob": "1"},
            {"from": "2", "a1": "a", "a2": "b", "to": "1", "prob": "1"},
            {"from": "2", "a1": "a", "a2": "bhat", "to": "1", "prob": "1"},
            {"from": "2", "a1": "ahat", "a2": "b", "to": "1", "prob": "1"},
            {"from": "2", "a1": "ahat", "a2": "bhat", "to": "1", "prob": "1"},
            {"from": "star", "a1": "a", "a2": "b", "to": "star", "prob": "1"},
            {"from": "star", "a1": "a", "a2": "bhat", "to": "star", "prob": "1"},
            {"from": "star", "a1": "ahat", "a2": "b", "to": "star", "prob": "1"},
            {"from": "star", "a1": "ahat", "a2": "bhat", "to": "star", "prob": "1"}
        ],
        "absorbing": {"star": {"g1": "-1", "g2": "2"}},
        "objective": {
            "p1": {"type": "recursive_absorbing", "default": "-1"},
            "p2": {"type": "recursive_absorbing", "default": "1"}
        }
    }"#
}

pub fn g_loop() -> StochasticGame {
    load_game(g_loop_document()).expect("fixture g_loop")
}

/// The mixed-action family used with `g_loop` in the worked examples:
/// player 1 commits to `ahat`, player 2 to the safe `b`, so the set `{1, 2}`
/// is closed, blocked to player 1, and player 2 owns the exit to `star`.
pub fn g_loop_family() -> game::MixedActionSetFamily {
    let g = g_loop();
    let n1 = g.num_actions(Player::One);
    let n2 = g.num_actions(Player::Two);
    game::MixedActionSetFamily::new([
        vec![
            vec![MixedAction::pure(n1, 1)], // state 1: ahat
            vec![MixedAction::pure(n1, 0)], // state 2: a
            vec![MixedAction::pure(n1, 0)],
        ],
        vec![
            vec![MixedAction::pure(n2, 0)], // state 1: b
            vec![MixedAction::pure(n2, 0)], // state 2: b
            vec![MixedAction::pure(n2, 0)],
        ],
    ])
    .expect("fixture family")
}

/// Parameters for the random-game generator.
#[derive(Debug, Clone)]
pub struct RandomGameConfig {
    pub max_states: usize,
    pub max_actions: usize,
    /// Denominator of the kernel probabilities (rows are k/denom grids).
    pub denominator: u32,
}

impl Default for RandomGameConfig {
    fn default() -> Self {
        RandomGameConfig {
            max_states: 4,
            max_actions: 2,
            denominator: 4,
        }
    }
}

/// Deterministic random small game with recursive-absorbing objectives and
/// normalized payoffs: absorbing pairs in `[-2, -1] x [1, 2]`, defaults
/// `(-1, 1)`.
pub fn random_game(seed: u64, config: &RandomGameConfig) -> StochasticGame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_states = rng.gen_range(2..=config.max_states.max(2));
    let n_abs = rng.gen_range(1..n_states);
    let n1 = rng.gen_range(1..=config.max_actions);
    let n2 = rng.gen_range(1..=config.max_actions);
    let denom = config.denominator;

    let states: Vec<String> = (0..n_states).map(|i| format!("s{i}")).collect();
    let p1: Vec<String> = (0..n1).map(|i| format!("a{i}")).collect();
    let p2: Vec<String> = (0..n2).map(|i| format!("b{i}")).collect();

    let mut kernel = Vec::new();
    for s in 0..n_states {
        let absorbing = s >= n_states - n_abs;
        for a1 in 0..n1 {
            for a2 in 0..n2 {
                if absorbing {
                    kernel.push(serde_json::json!({
                        "from": states[s], "a1": p1[a1], "a2": p2[a2],
                        "to": states[s], "prob": "1"
                    }));
                    continue;
                }
                // Distribute `denom` grains over the states.
                let mut grains = vec![0u32; n_states];
                for _ in 0..denom {
                    grains[rng.gen_range(0..n_states)] += 1;
                }
                for (t, &g) in grains.iter().enumerate() {
                    if g > 0 {
                        kernel.push(serde_json::json!({
                            "from": states[s], "a1": p1[a1], "a2": p2[a2],
                            "to": states[t], "prob": format!("{g}/{denom}")
                        }));
                    }
                }
            }
        }
    }

    let g1_choices = ["-1", "-3/2", "-2"];
    let g2_choices = ["1", "3/2", "2"];
    let mut absorbing = serde_json::Map::new();
    for s in (n_states - n_abs)..n_states {
        absorbing.insert(
            states[s].clone(),
            serde_json::json!({
                "g1": g1_choices[rng.gen_range(0..g1_choices.len())],
                "g2": g2_choices[rng.gen_range(0..g2_choices.len())]
            }),
        );
    }

    let doc = serde_json::json!({
        "states": states,
        "actions": {"p1": p1, "p2": p2},
        "kernel": kernel,
        "absorbing": absorbing,
        "objective": {
            "p1": {"type": "recursive_absorbing", "default": "-1"},
            "p2": {"type": "recursive_absorbing", "default": "1"}
        }
    });
    load_game(&doc.to_string()).expect("generated game")
}

/// Singleton mixed-action family with one deterministic or uniform cell per
/// state and player, drawn from the same seed stream as the game.
pub fn singleton_family(game: &StochasticGame, seed: u64) -> game::MixedActionSetFamily {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f00d);
    let mut cells: [Vec<Vec<MixedAction>>; 2] = [Vec::new(), Vec::new()];
    for p in Player::BOTH {
        let n = game.num_actions(p);
        for _s in 0..game.num_states() {
            let cell = if n > 1 && rng.gen_bool(0.25) {
                MixedAction::uniform(n)
            } else {
                MixedAction::pure(n, rng.gen_range(0..n))
            };
            cells[p.index()].push(vec![cell]);
        }
    }
    game::MixedActionSetFamily::new(cells).expect("singleton family")
}

/// All-pure-profiles iterator helper: every stationary pure strategy of one
/// player, used by exhaustive cross-checks.
pub fn pure_stationary_strategies(
    game: &StochasticGame,
    player: Player,
) -> Vec<crate::game::StationaryStrategy> {
    let n_actions = game.num_actions(player);
    let n_states = game.num_states();
    let total = n_actions.pow(n_states as u32);
    let mut out = Vec::with_capacity(total);
    for code in 0..total {
        let mut c = code;
        let mut actions = Vec::with_capacity(n_states);
        for _ in 0..n_states {
            actions.push(MixedAction::pure(n_actions, c % n_actions));
            c /= n_actions;
        }
        out.push(crate::game::StationaryStrategy { player, actions });
    }
    out
}

/// Convenience: the exact rational `1/2`.
pub fn one_half() -> Rational {
    Rational::new(1.into(), 2.into())
}
