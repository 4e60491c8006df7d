//! The ζ statistic and the deviation detectors: the exact expectation
//! identity, strategy trimming, and an in-set automaton catching a deviator.
//!
//! ```bash
//! cargo run --example zeta_detectors
//! ```

use std::collections::BTreeSet;

use shiftgame::equilibrium::{in_set_equilibrium, trim_strategy, zeta_expectation_identity};
use shiftgame::fixtures;
use shiftgame::game::{
    parse_rational, rational_to_f64, MixedAction, Player, StateId, StationaryStrategy,
};

fn main() {
    let game = fixtures::g_loop();
    let set: BTreeSet<StateId> = [0, 1].into_iter().collect();

    // A mixing pair: the identity E[zeta] = P(exit within the horizon) holds
    // exactly at every horizon.
    let x1 = StationaryStrategy {
        player: Player::One,
        actions: vec![MixedAction::uniform(2); 3],
    };
    let x2 = StationaryStrategy {
        player: Player::Two,
        actions: vec![MixedAction::uniform(2); 3],
    };
    for horizon in 1..=4 {
        let (e, p) =
            zeta_expectation_identity(&game, &set, [&x1, &x2], Player::One, 0, horizon, None)
                .unwrap();
        println!(
            "horizon {horizon}: E[zeta] = P(exit) = {} (exact)",
            rational_to_f64(&e)
        );
        assert_eq!(e, p);
    }

    // Trimming removes the actions that leave the set against the current
    // opponent mix and renormalizes the rest.
    let leaky = StationaryStrategy {
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
    let opp = StationaryStrategy {
        player: Player::Two,
        actions: vec![MixedAction::pure(2, 1), MixedAction::pure(2, 0), MixedAction::pure(2, 0)],
    };
    let rho = parse_rational("1/2").unwrap();
    let ([trimmed, _], removed) = trim_strategy(&game, &set, [&leaky, &opp], &rho).unwrap();
    println!(
        "trimmed actions at state 1: {:?}; resulting mix {:?}",
        removed[0][0],
        trimmed
            .action(0)
            .probs()
            .iter()
            .map(rational_to_f64)
            .collect::<Vec<_>>()
    );

    // An in-set automaton: compliant play runs clean, a zero-probability
    // action triggers punishment immediately.
    let safe = StationaryStrategy {
        player: Player::One,
        actions: vec![MixedAction::pure(2, 0); 3],
    };
    let safe2 = StationaryStrategy {
        player: Player::Two,
        actions: vec![MixedAction::pure(2, 0); 3],
    };
    let mu = parse_rational("1/100").unwrap();
    let profile = in_set_equilibrium(
        &game,
        &set,
        [&safe, &safe2],
        [parse_rational("-1").unwrap(), parse_rational("1").unwrap()],
        &mu,
        32,
        0.05,
    )
    .unwrap();
    let phase = profile.initial_phase(0);
    let compliant = profile.step_phase(&game, &phase, 0, 0, 0, 1).unwrap();
    let deviant = profile.step_phase(&game, &phase, 0, 1, 0, 1).unwrap();
    println!("compliant step -> {compliant:?}");
    println!("off-support step -> {deviant:?}");
}
