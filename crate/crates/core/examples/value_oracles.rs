//! The value oracles on the Big-Match fixture: discounted values along a
//! grid, the vanishing-discount average estimate, recursive values on the
//! cycle fixture, and the candidate mixed-action family.
//!
//! ```bash
//! cargo run --example value_oracles
//! ```

use shiftgame::fixtures;
use shiftgame::game::{rational_to_f64, Player};
use shiftgame::values::{
    candidate_y, discounted_value, long_run_average_values, recursive_value_vector, ValueConfig,
};

fn main() {
    let bm = fixtures::g_bm();
    println!("Big-Match discounted values of player 1 at state `go`:");
    for lambda in [0.5, 0.25, 0.125, 0.0625] {
        let (vv, _) = discounted_value(&bm, Player::One, lambda, 1e-9).unwrap();
        println!("  lambda = {lambda:<7}: {}", rational_to_f64(vv.get(0)));
    }

    let config = ValueConfig::default();
    let avg = long_run_average_values(&bm, Player::One, &config).unwrap();
    println!(
        "vanishing-discount average estimate: {} ({:?})",
        rational_to_f64(avg.get(0)),
        avg.accuracy
    );

    println!("\ncandidate mixed actions of player 1 at `go` (clustered):");
    let cells = candidate_y(&bm, Player::One, &[0.5, 0.25, 0.125], 1e-3).unwrap();
    for mix in &cells[0] {
        println!(
            "  T with {:.4}, B with {:.4}",
            rational_to_f64(mix.prob(0)),
            rational_to_f64(mix.prob(1))
        );
    }

    let lp = fixtures::g_loop();
    for p in Player::BOTH {
        let (vv, _) = recursive_value_vector(&lp, p, &config).unwrap();
        println!(
            "\nrecursive maxmin of {p} on the cycle fixture ({:?}):",
            vv.accuracy
        );
        for s in 0..lp.num_states() {
            println!("  v({}) = {}", lp.state_name(s), rational_to_f64(vv.get(s)));
        }
    }
}
