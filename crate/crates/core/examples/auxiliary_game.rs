//! Build the auxiliary recursive game, compare its values to the original
//! ones, and search for a certified stationary ε-equilibrium.
//!
//! ```bash
//! cargo run --example auxiliary_game
//! ```

use shiftgame::fixtures;
use shiftgame::game::{rational_to_f64, Player};
use shiftgame::recursive::{
    absorption_probability, build_auxiliary, recursive_epsilon_equilibrium, recursive_values,
    EquilibriumSearchConfig,
};
use shiftgame::structure::{decompose, StructureConfig};
use shiftgame::values::{recursive_value_vector, ValueConfig};

fn main() {
    let game = fixtures::g_loop();
    let family = fixtures::g_loop_family();
    let vc = ValueConfig::default();
    let (v1, _) = recursive_value_vector(&game, Player::One, &vc).unwrap();
    let (v2, _) = recursive_value_vector(&game, Player::Two, &vc).unwrap();
    let dec = decompose(&game, &family, [&v1, &v2], &StructureConfig::default()).unwrap();

    let aux = build_auxiliary(&game, &dec).unwrap();
    println!(
        "auxiliary game: {} dummy state(s): {:?}",
        aux.dummy.len(),
        aux.game.state_names(&aux.dummy)
    );

    let vr = recursive_values(&aux, [&v1, &v2], 1e-6).unwrap();
    for (p, v) in Player::BOTH.iter().zip(&vr) {
        println!(
            "auxiliary values of {p}: {:?}",
            v.values.iter().map(rational_to_f64).collect::<Vec<_>>()
        );
    }

    let cert =
        recursive_epsilon_equilibrium(&aux, 0.01, &EquilibriumSearchConfig::default()).unwrap();
    println!(
        "certificate: certified = {}, gaps = {:?}, absorption bound = {}",
        cert.certified, cert.gaps, cert.absorption
    );

    let probs =
        absorption_probability(&aux.game, &cert.strategies[0], &cert.strategies[1]).unwrap();
    for s in 0..aux.game.num_states() {
        println!(
            "absorption from {}: {}",
            aux.game.state_name(s),
            rational_to_f64(&probs[s])
        );
    }
}
