//! Property tests over random games and mixed actions.

use proptest::prelude::*;

use shiftgame::fixtures::{self, RandomGameConfig};
use shiftgame::game::{
    expected_value, normalize, parse_rational, step_distribution, MixedAction, Player,
};
use shiftgame::Rational;

use num::{One, Signed, Zero};

fn arb_mixed(n: usize) -> impl Strategy<Value = MixedAction> {
    proptest::collection::vec(0u32..16, n).prop_map(move |mut weights| {
        if weights.iter().all(|&w| w == 0) {
            weights[0] = 1;
        }
        let total: u32 = weights.iter().sum();
        MixedAction::new(
            weights
                .iter()
                .map(|&w| Rational::new(w.into(), total.into()))
                .collect(),
        )
        .unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// One-step distributions are exact probability vectors for any game,
    /// state, and mixed action pair.
    #[test]
    fn step_distribution_is_stochastic(seed in 0u64..500, w1 in arb_mixed(2), w2 in arb_mixed(2)) {
        let game = fixtures::random_game(seed, &RandomGameConfig::default());
        let x1 = fit(&w1, game.num_actions(Player::One));
        let x2 = fit(&w2, game.num_actions(Player::Two));
        for s in 0..game.num_states() {
            let dist = step_distribution(&game, &game.kernel, s, &x1, &x2).unwrap();
            let total: Rational = dist.iter().sum();
            prop_assert!(total.is_one());
            prop_assert!(dist.iter().all(|p| !p.is_negative()));
        }
    }

    /// One-shot expectations are bilinear: mixing strategies mixes values.
    #[test]
    fn expected_value_is_bilinear(
        seed in 0u64..500,
        w1a in arb_mixed(2),
        w1b in arb_mixed(2),
        w2 in arb_mixed(2),
        num in 0i64..8,
    ) {
        let game = fixtures::random_game(seed, &RandomGameConfig::default());
        let n = game.num_states();
        let g: Vec<Rational> = (0..n).map(|k| Rational::new((k as i64 + 1).into(), 3.into())).collect();
        let a = fit(&w1a, game.num_actions(Player::One));
        let b = fit(&w1b, game.num_actions(Player::One));
        let opp = fit(&w2, game.num_actions(Player::Two));
        let t = Rational::new(num.into(), 8.into());
        let mixed = a.mix(&b, &t);
        for s in 0..n {
            let va = expected_value(&game, &game.kernel, &g, s, &a, &opp).unwrap();
            let vb = expected_value(&game, &game.kernel, &g, s, &b, &opp).unwrap();
            let vm = expected_value(&game, &game.kernel, &g, s, &mixed, &opp).unwrap();
            prop_assert_eq!(vm, (Rational::one() - &t) * va + &t * vb);
        }
    }

    /// Normalization puts player 1's payoff data at or below -1 and player
    /// 2's at or above 1, on the epsilon grid.
    #[test]
    fn normalize_ranges_and_grid(seed in 0u64..500) {
        let game = fixtures::random_game(seed, &RandomGameConfig::default());
        let eps = parse_rational("1/10").unwrap();
        let (normed, record) = normalize(&game, &eps, &Default::default()).unwrap();
        for (_, pair) in &normed.gamma {
            prop_assert!(pair[0] <= -Rational::one());
            prop_assert!(pair[1] >= Rational::one());
            for v in pair {
                let on_grid = (v / &eps).is_integer();
                prop_assert!(on_grid);
            }
        }
        // The recorded shift maps old data onto the new, up to grid rounding.
        let s1 = record.shift_rational(Player::One).unwrap();
        for (&s, pair) in &game.gamma {
            let expected = shiftgame::game::floor_to_grid(&(&pair[0] + &s1), &eps);
            prop_assert_eq!(&normed.gamma[&s][0], &expected);
        }
    }
}

fn fit(m: &MixedAction, n: usize) -> MixedAction {
    if m.len() == n {
        return m.clone();
    }
    // Truncate or extend by collapsing mass onto the first action.
    let mut probs = vec![Rational::zero(); n];
    for (i, p) in m.probs().iter().enumerate() {
        let k = if i < n { i } else { 0 };
        probs[k] += p;
    }
    MixedAction::new(probs).unwrap()
}
