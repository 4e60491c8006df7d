//! Structural decomposition of the cycle fixture: closure, communication,
//! exits, classification, the families, and the audit.
//!
//! ```bash
//! cargo run --example decompose
//! ```

use std::collections::BTreeSet;

use shiftgame::fixtures;
use shiftgame::game::{rational_to_f64, Player, StateId};
use shiftgame::structure::{
    audit_structure, classify_set, decompose, enumerate_exits, is_closed, is_communicating,
    StructureConfig,
};
use shiftgame::values::{recursive_value_vector, ValueConfig};

fn main() {
    let game = fixtures::g_loop();
    let family = fixtures::g_loop_family();
    let config = StructureConfig::default();
    let vc = ValueConfig::default();
    let (v1, _) = recursive_value_vector(&game, Player::One, &vc).unwrap();
    let (v2, _) = recursive_value_vector(&game, Player::Two, &vc).unwrap();

    let cycle: BTreeSet<StateId> = [0, 1].into_iter().collect();
    println!(
        "closed({:?}) = {}",
        game.state_names(&cycle),
        is_closed(&game, &game.kernel, &cycle, &family).unwrap()
    );
    let (comm, witness) =
        is_communicating(&game, &game.kernel, &cycle, &family, &config).unwrap();
    println!("communicating = {comm} ({} funnels)", witness.funnels.len());

    let exits = enumerate_exits(&game, &game.kernel, &cycle, &family).unwrap();
    println!(
        "exits: player 1 has {}, player 2 has {}, joint {}",
        exits.unilateral[0].len(),
        exits.unilateral[1].len(),
        exits.joint.len()
    );
    for e in &exits.unilateral[1] {
        println!(
            "  player-2 exit at {} via action {} (leaves with prob {})",
            game.state_name(e.state),
            game.actions[1][e.action],
            rational_to_f64(&e.leave_prob)
        );
    }

    let class = classify_set(&game, &game.kernel, &cycle, &family, [&v1, &v2], &config).unwrap();
    println!(
        "classification: blocked_to = {:?}, controlled_by_2 = {}, H = ({}, {})",
        class.blocked_to,
        class.controlled_by[1].is_some(),
        rational_to_f64(&class.h[0]),
        rational_to_f64(&class.h[1])
    );

    let dec = decompose(&game, &family, [&v1, &v2], &config).unwrap();
    println!(
        "families: |F1| = {}, |F2| = {}, |F3| = {}",
        dec.f1.len(),
        dec.f2.len(),
        dec.f3.len()
    );
    for c in &dec.f1 {
        println!(
            "  F1 set {:?} with exit distribution {:?}",
            game.state_names(&c.states),
            c.q.iter().map(rational_to_f64).collect::<Vec<_>>()
        );
    }
    println!(
        "rewritten kernel at state 1: {:?}",
        dec.p_hat.row(0, 0, 0).iter().map(rational_to_f64).collect::<Vec<_>>()
    );

    let audit = audit_structure(&game, &dec, &family, [&v1, &v2], &config).unwrap();
    println!("audit clean: {}", audit.clean());
}
