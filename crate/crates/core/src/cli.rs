//! Command-line pipeline: chains the analysis modules behind subcommands
//! and emits machine-readable JSON reports.
//!
//! Exit codes: 0 on success, 2 when a certificate or verification does not
//! hold (UNCERTIFIED / FAIL), 1 on errors. All structured output is JSON;
//! human summaries go to standard output. Identical configuration and seed
//! produce byte-identical reports.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::game::{parse_rational, Player, StochasticGame};
use crate::recursive::{
    build_auxiliary, recursive_epsilon_equilibrium, recursive_values, EquilibriumSearchConfig,
};
use crate::structure::{audit_structure, decompose, StructureConfig};
use crate::values::{candidate_family, maxmin_values, ValueConfig};
use crate::{Error, Result};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SHIFTGAME_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "shiftgame",
    about = "Decomposition and equilibrium toolkit for two-player stochastic games",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct CommonOpts {
    /// Path to the JSON game document.
    #[arg(long)]
    input: PathBuf,
    /// Equilibrium slack ε in (0, 1).
    #[arg(long, default_value = "0.05")]
    epsilon: f64,
    /// Detector level μ.
    #[arg(long, default_value = "0.01")]
    mu: f64,
    /// Trimming threshold ρ.
    #[arg(long, default_value = "0.01")]
    rho: f64,
    /// δ-maxmin slack.
    #[arg(long, default_value = "0.001")]
    delta: f64,
    /// Comma-separated λ grid for discounted proxies.
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    /// Clustering radius for the candidate mixed-action family.
    #[arg(long, default_value = "0.001")]
    cluster_tol: f64,
    /// Detector determination horizon.
    #[arg(long, default_value = "64")]
    det_horizon: usize,
    /// Master seed for simulation streams.
    #[arg(long, default_value = "1")]
    seed: u64,
    /// Output directory (defaults to $SHIFTGAME_OUT, then the working dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Monte-Carlo runs.
    #[arg(long, default_value = "1000")]
    runs: usize,
    /// Simulation horizon.
    #[arg(long, default_value = "1000")]
    horizon: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Maxmin values and the candidate mixed-action family.
    Values(CommonOpts),
    /// Structural decomposition: families F1/F2/F3 plus the audit.
    Decompose(CommonOpts),
    /// Auxiliary recursive game: values and an equilibrium certificate.
    Aux(CommonOpts),
    /// Assemble the global strategy profile.
    Equilibrium(CommonOpts),
    /// Monte-Carlo simulation of the assembled profile.
    Simulate(CommonOpts),
    /// Best-response verification of the assembled profile.
    Verify(CommonOpts),
    /// Exhaustive structural audit report.
    Audit(CommonOpts),
}

/// Validated pipeline configuration.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub epsilon: f64,
    pub mu: f64,
    pub rho: f64,
    pub delta: f64,
    pub lambda_grid: Vec<f64>,
    pub cluster_tol: f64,
    pub det_horizon: usize,
    pub seed: u64,
    pub runs: usize,
    pub horizon: usize,
    pub out_dir: PathBuf,
}

impl PipelineConfig {
    fn from_opts(opts: &CommonOpts) -> Result<Self> {
        if !(0.0..1.0).contains(&opts.epsilon) || opts.epsilon <= 0.0 {
            return Err(Error::InvalidParameter("epsilon must lie in (0,1)".into()));
        }
        for (name, v) in [
            ("mu", opts.mu),
            ("rho", opts.rho),
            ("delta", opts.delta),
            ("cluster-tol", opts.cluster_tol),
        ] {
            if v <= 0.0 {
                return Err(Error::InvalidParameter(format!("{name} must be positive")));
            }
        }
        if opts.det_horizon == 0 {
            return Err(Error::InvalidParameter("det-horizon must be positive".into()));
        }
        let out_dir = opts
            .out
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(PipelineConfig {
            epsilon: opts.epsilon,
            mu: opts.mu,
            rho: opts.rho,
            delta: opts.delta,
            lambda_grid: opts
                .lambda_grid
                .clone()
                .unwrap_or_else(|| (1..=10).map(|k| 0.5f64.powi(k)).collect()),
            cluster_tol: opts.cluster_tol,
            det_horizon: opts.det_horizon,
            seed: opts.seed,
            runs: opts.runs,
            horizon: opts.horizon,
            out_dir,
        })
    }

    fn value_config(&self) -> ValueConfig {
        ValueConfig {
            lambda_grid: self.lambda_grid.clone(),
            ..ValueConfig::default()
        }
    }
}

/// Runs the CLI; returns the process exit code.
pub fn run(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            // clap renders help/version as "errors" with exit code 0.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (opts, action): (&CommonOpts, fn(&StochasticGame, &PipelineConfig) -> Result<i32>) =
        match &cli.command {
            Command::Values(o) => (o, cmd_values),
            Command::Decompose(o) => (o, cmd_decompose),
            Command::Aux(o) => (o, cmd_aux),
            Command::Equilibrium(o) => (o, cmd_equilibrium),
            Command::Simulate(o) => (o, cmd_simulate),
            Command::Verify(o) => (o, cmd_verify),
            Command::Audit(o) => (o, cmd_audit),
        };
    match run_command(opts, action) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn run_command(
    opts: &CommonOpts,
    action: fn(&StochasticGame, &PipelineConfig) -> Result<i32>,
) -> Result<i32> {
    let config = PipelineConfig::from_opts(opts)?;
    let document = std::fs::read_to_string(&opts.input)?;
    let game = crate::game::load_game(&document)?;
    std::fs::create_dir_all(&config.out_dir)?;
    action(&game, &config)
}

fn write_report<T: Serialize>(config: &PipelineConfig, name: &str, report: &T) -> Result<()> {
    let path = config.out_dir.join(name);
    let json = serde_json::to_string_pretty(report)?;
    std::fs::write(&path, json)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_values(game: &StochasticGame, config: &PipelineConfig) -> Result<i32> {
    let vc = config.value_config();
    let v1 = maxmin_values(game, Player::One, &vc)?;
    let v2 = maxmin_values(game, Player::Two, &vc)?;
    let family = candidate_family(game, &config.lambda_grid, config.cluster_tol)?;
    #[derive(Serialize)]
    struct ValuesReport {
        values: [crate::values::ValueReport; 2],
        family: BTreeMap<String, [Vec<Vec<String>>; 2]>,
    }
    let mut fam = BTreeMap::new();
    for s in 0..game.num_states() {
        let cell = |player: Player| -> Vec<Vec<String>> {
            family
                .cell(player, s)
                .iter()
                .map(|m| m.probs().iter().map(crate::game::format_rational).collect())
                .collect()
        };
        fam.insert(
            game.state_name(s).to_string(),
            [cell(Player::One), cell(Player::Two)],
        );
    }
    let report = ValuesReport {
        values: [v1.to_report(), v2.to_report()],
        family: fam,
    };
    write_report(config, "values.json", &report)?;
    println!(
        "maxmin values ready for {} states ({} / {})",
        game.num_states(),
        if v1.accuracy.is_exact() { "exact" } else { "iterative" },
        if v2.accuracy.is_exact() { "exact" } else { "iterative" },
    );
    Ok(0)
}

fn pipeline_decomposition(
    game: &StochasticGame,
    config: &PipelineConfig,
) -> Result<(
    crate::values::ValueVector,
    crate::values::ValueVector,
    crate::game::MixedActionSetFamily,
    crate::structure::Decomposition,
)> {
    let vc = config.value_config();
    let v1 = maxmin_values(game, Player::One, &vc)?;
    let v2 = maxmin_values(game, Player::Two, &vc)?;
    let family = candidate_family(game, &config.lambda_grid, config.cluster_tol)?;
    let dec = decompose(game, &family, [&v1, &v2], &StructureConfig::default())?;
    Ok((v1, v2, family, dec))
}

fn cmd_decompose(game: &StochasticGame, config: &PipelineConfig) -> Result<i32> {
    let (v1, v2, family, dec) = pipeline_decomposition(game, config)?;
    let audit = audit_structure(game, &dec, &family, [&v1, &v2], &StructureConfig::default())?;
    #[derive(Serialize)]
    struct Report {
        decomposition: crate::structure::DecompositionReport,
        audit: crate::structure::AuditReport,
    }
    let clean = audit.clean();
    write_report(
        config,
        "decomposition.json",
        &Report {
            decomposition: dec.to_report(game),
            audit,
        },
    )?;
    println!(
        "families: |F1|={} |F2|={} |F3|={}; audit {}",
        dec.f1.len(),
        dec.f2.len(),
        dec.f3.len(),
        if clean { "clean" } else { "found issues" },
    );
    Ok(0)
}

fn cmd_aux(game: &StochasticGame, config: &PipelineConfig) -> Result<i32> {
    let (v1, v2, _family, dec) = pipeline_decomposition(game, config)?;
    let aux = build_auxiliary(game, &dec)?;
    let vr = recursive_values(&aux, [&v1, &v2], 1e-6)?;
    let search = EquilibriumSearchConfig {
        lambda_grid: config.lambda_grid.clone(),
        ..EquilibriumSearchConfig::default()
    };
    let cert = recursive_epsilon_equilibrium(&aux, config.epsilon / 5.0, &search)?;
    #[derive(Serialize)]
    struct Report {
        values: [crate::values::ValueReport; 2],
        certificate: crate::recursive::EquilibriumCertificate,
    }
    let certified = cert.certified;
    write_report(
        config,
        "aux.json",
        &Report {
            values: [vr[0].to_report(), vr[1].to_report()],
            certificate: cert,
        },
    )?;
    println!(
        "auxiliary game solved; certificate {}",
        if certified { "CERTIFIED" } else { "UNCERTIFIED" }
    );
    Ok(if certified { 0 } else { 2 })
}

fn assemble(
    game: &StochasticGame,
    config: &PipelineConfig,
) -> Result<crate::equilibrium::AssembledProfile> {
    let (v1, v2, family, dec) = pipeline_decomposition(game, config)?;
    let aux = build_auxiliary(game, &dec)?;
    let _ = recursive_values(&aux, [&v1, &v2], 1e-6)?;
    let search = EquilibriumSearchConfig {
        lambda_grid: config.lambda_grid.clone(),
        ..EquilibriumSearchConfig::default()
    };
    let cert = recursive_epsilon_equilibrium(&aux, config.epsilon / 5.0, &search)?;
    let mu = parse_rational(&format!("{}", config.mu))
        .or_else(|_| Ok::<_, Error>(crate::game::rational_from_f64(config.mu)))?;
    crate::equilibrium::assemble_global(game, &dec, &family, &cert, config.epsilon, &mu)
}

/// Serializable view of the assembled automaton pair.
#[derive(Serialize)]
struct ProfileReport {
    uncertified: bool,
    plans: Vec<PlanReport>,
    sigma_r: [Vec<Vec<String>>; 2],
    punish: [Vec<Vec<String>>; 2],
    zeta_threshold_units: u64,
    epsilon: f64,
    seed_note: String,
}

#[derive(Serialize)]
struct PlanReport {
    states: Vec<String>,
    kind: String,
}

fn profile_report(
    game: &StochasticGame,
    profile: &crate::equilibrium::AssembledProfile,
) -> ProfileReport {
    let strat = |s: &crate::game::StationaryStrategy| -> Vec<Vec<String>> {
        s.actions
            .iter()
            .map(|m| m.probs().iter().map(crate::game::format_rational).collect())
            .collect()
    };
    ProfileReport {
        uncertified: profile.uncertified,
        plans: profile
            .plans
            .iter()
            .map(|p| PlanReport {
                states: game.state_names(&p.set),
                kind: match &p.kind {
                    crate::equilibrium::PlanKind::UnilateralTwo { .. } => "player2-exit".into(),
                    crate::equilibrium::PlanKind::Joint { .. } => "joint-exit".into(),
                    crate::equilibrium::PlanKind::UnilateralOne { .. } => "player1-exit".into(),
                },
            })
            .collect(),
        sigma_r: [
            strat(&profile.sigma_r[0]),
            strat(&profile.sigma_r[1]),
        ],
        punish: [strat(&profile.punish[0]), strat(&profile.punish[1])],
        zeta_threshold_units: profile.zeta_threshold_units,
        epsilon: profile.epsilon,
        seed_note: "randomness is supplied per run as seed streams".into(),
    }
}

fn cmd_equilibrium(game: &StochasticGame, config: &PipelineConfig) -> Result<i32> {
    let profile = assemble(game, config)?;
    let uncertified = profile.uncertified;
    write_report(config, "equilibrium.json", &profile_report(game, &profile))?;
    println!(
        "assembled profile with {} exit plan(s){}",
        profile.plans.len(),
        if uncertified { " (UNCERTIFIED)" } else { "" }
    );
    Ok(if uncertified { 2 } else { 0 })
}

fn cmd_simulate(game: &StochasticGame, config: &PipelineConfig) -> Result<i32> {
    let profile = assemble(game, config)?;
    let start = game.nonabsorbing().into_iter().next().unwrap_or(0);
    let stats = crate::simulate::simulate(
        game,
        &profile,
        start,
        config.horizon,
        config.runs,
        config.seed,
    )?;
    write_report(config, "simulate.json", &stats)?;
    std::fs::write(config.out_dir.join("simulate.csv"), stats.to_csv())?;
    println!(
        "{} runs: absorption rate {:.4}, mean payoffs ({:.4}, {:.4})",
        stats.runs, stats.absorption_rate, stats.mean_payoff[0], stats.mean_payoff[1]
    );
    Ok(if profile.uncertified { 2 } else { 0 })
}

fn cmd_verify(game: &StochasticGame, config: &PipelineConfig) -> Result<i32> {
    let profile = assemble(game, config)?;
    let report =
        crate::simulate::verify_equilibrium(game, &profile, config.epsilon, 1e-3, 200_000)?;
    let pass = report.pass;
    write_report(config, "verify.json", &report)?;
    println!(
        "verification {} (gaps {:.6} / {:.6} at epsilon {})",
        if pass { "PASS" } else { "FAIL" },
        report.gaps_f64[0],
        report.gaps_f64[1],
        config.epsilon
    );
    Ok(if pass { 0 } else { 2 })
}

fn cmd_audit(game: &StochasticGame, config: &PipelineConfig) -> Result<i32> {
    let (v1, v2, family, dec) = pipeline_decomposition(game, config)?;
    let audit = audit_structure(game, &dec, &family, [&v1, &v2], &StructureConfig::default())?;
    let clean = audit.clean();
    write_report(config, "audit.json", &audit)?;
    println!(
        "audit {}: {} finding(s)",
        if clean { "clean" } else { "flagged" },
        audit.findings.len()
    );
    Ok(0)
}
