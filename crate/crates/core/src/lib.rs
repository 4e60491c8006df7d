//! Toolkit for finite two-player stochastic games with shift-invariant payoffs.
//!
//! The crate builds, analyzes, and verifies ε-equilibrium strategy profiles
//! through the following pipeline:
//!
//! 1. [`game`] — the game model: states, global action sets, an exact rational
//!    transition kernel, per-player objectives, and payoff normalization.
//! 2. [`values`] — zero-sum value oracles: exact matrix-game solves, discounted
//!    Shapley iteration, vanishing-discount estimation of long-run-average
//!    values, recursive and Büchi value iteration, and extraction of candidate
//!    mixed-action families from discounted optima.
//! 3. [`structure`] — the structural decomposition: communicating sets, exits,
//!    controlled/blocked classification, the set families `F1`/`F2`/`F3` with
//!    their exit distributions, and the rewritten kernels `p_hat` and `p_tilde`.
//! 4. [`recursive`] — the auxiliary recursive game built on `p_tilde`, its
//!    values, and a stationary ε-equilibrium search with exact certification.
//! 5. [`equilibrium`] — strategy transformers (trimming, the ζ deviation
//!    statistic, stopping-time detectors) and the global strategy-automaton
//!    assembly with punishment and history compression.
//! 6. [`simulate`] — Monte-Carlo runs, exact best responses against
//!    finite-memory opponents, and equilibrium verification reports.
//!
//! All kernel arithmetic and one-shot expectations are exact rationals;
//! floating point appears only inside iterative solvers, whose results carry
//! explicit tolerance tags. Game values, decomposition reports, certificates,
//! and verification reports all serialize to JSON.
//!
//! # Examples
//!
//! Each major capability has a runnable example:
//!
//! ```text
//! cargo run --example load_and_inspect      # parse and validate a game document
//! cargo run --example value_oracles         # discounted, average, recursive values
//! cargo run --example decompose             # communicating sets, exits, F1/F2/F3
//! cargo run --example auxiliary_game        # build and solve the recursive game
//! cargo run --example assemble_equilibrium  # global profile assembly + verification
//! cargo run --example simulate_profile      # Monte-Carlo runs and absorption stats
//! cargo run --example zeta_detectors        # ζ identity and detector calibration
//! ```
//!
//! The `shiftgame` binary chains the same steps behind subcommands
//! (`values`, `decompose`, `aux`, `equilibrium`, `simulate`, `verify`,
//! `audit`); see the README for flags.
//!
//! Games, kernels, and reports are immutable after construction and safe to
//! share across threads; simulation runs take per-run seeded streams.

pub mod cli;
pub mod equilibrium;
mod error;
pub mod fixtures;
pub mod game;
mod lp;
pub mod mdp;
pub mod recursive;
pub mod simulate;
pub mod structure;
pub mod values;

pub use error::Error;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;

/// Exact rational scalar used throughout the kernel and payoff arithmetic.
pub type Rational = num::BigRational;
