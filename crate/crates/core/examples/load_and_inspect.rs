//! Parse and validate a game document, then print its basic anatomy.
//!
//! ```bash
//! cargo run --example load_and_inspect
//! ```

use shiftgame::fixtures;
use shiftgame::game::{rational_to_f64, Player};

fn main() {
    let game = fixtures::g_loop();
    println!("states ({}): {:?}", game.num_states(), game.states);
    println!(
        "actions: p1 {:?}, p2 {:?}",
        game.actions[0], game.actions[1]
    );
    println!(
        "absorbing: {:?}",
        game.state_names(&game.absorbing)
    );
    for (&s, pair) in &game.gamma {
        println!(
            "  gamma({}) = ({}, {})",
            game.state_name(s),
            rational_to_f64(&pair[0]),
            rational_to_f64(&pair[1])
        );
    }
    for p in Player::BOTH {
        println!("objective of {p}: {}", game.objective(p).kind());
    }
    println!("payoff bound M = {}", rational_to_f64(&game.payoff_bound()));

    // Validation in action: a non-stochastic row is rejected.
    let bad = r#"{
        "states": ["s"],
        "actions": {"p1": ["a"], "p2": ["b"]},
        "kernel": [{"from": "s", "a1": "a", "a2": "b", "to": "s", "prob": "9/10"}],
        "absorbing": {},
        "objective": {
            "p1": {"type": "recursive_absorbing"},
            "p2": {"type": "recursive_absorbing"}
        }
    }"#;
    match shiftgame::game::load_game(bad) {
        Err(e) => println!("as expected, bad document rejected: {e}"),
        Ok(_) => unreachable!(),
    }
}
