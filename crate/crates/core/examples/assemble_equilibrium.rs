//! The full pipeline on the cycle fixture: decomposition, auxiliary
//! certificate, global profile assembly, and best-response verification,
//! including the two mutation tests that must fail.
//!
//! ```bash
//! cargo run --example assemble_equilibrium
//! ```

use shiftgame::equilibrium::assemble_global;
use shiftgame::fixtures;
use shiftgame::game::{parse_rational, Player};
use shiftgame::recursive::{build_auxiliary, recursive_epsilon_equilibrium, EquilibriumSearchConfig};
use shiftgame::simulate::verify_equilibrium;
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
    let cert =
        recursive_epsilon_equilibrium(&aux, 0.01, &EquilibriumSearchConfig::default()).unwrap();

    let mu = parse_rational("1/100").unwrap();
    let profile = assemble_global(&game, &dec, &family, &cert, 0.05, &mu).unwrap();
    println!(
        "assembled profile: {} exit plan(s), uncertified = {}",
        profile.plans.len(),
        profile.uncertified
    );

    let report = verify_equilibrium(&game, &profile, 0.05, 1e-3, 100_000).unwrap();
    println!(
        "verification: pass = {}, gaps = ({:.6}, {:.6})",
        report.pass, report.gaps_f64[0], report.gaps_f64[1]
    );

    // Mutations: breaking the machinery must break verification.
    let mut corrupted = profile.clone();
    corrupted.corrupt_exit(&game);
    let report = verify_equilibrium(&game, &corrupted, 0.05, 1e-3, 100_000).unwrap();
    println!(
        "corrupted exit distribution: pass = {} (gap {:.3})",
        report.pass,
        report.gaps_f64[0].max(report.gaps_f64[1])
    );
}
