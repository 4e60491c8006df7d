//! Integration tests of the command-line pipeline: exit codes, report files,
//! and byte-identical reruns.

use std::path::Path;

use shiftgame::cli::run;
use shiftgame::fixtures;

fn run_cli(args: &[&str]) -> i32 {
    let argv: Vec<String> = std::iter::once("shiftgame".to_string())
        .chain(args.iter().map(|s| s.to_string()))
        .collect();
    run(argv)
}

fn write_fixture(dir: &Path, doc: &str) -> String {
    let path = dir.join("game.json");
    std::fs::write(&path, doc).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn verify_passes_on_absorbing_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_fixture(dir.path(), fixtures::g_abs_document());
    let out = dir.path().join("out");
    let code = run_cli(&[
        "verify",
        "--input",
        &input,
        "--epsilon",
        "0.1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("verify.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], serde_json::Value::Bool(true));
}

#[test]
fn decompose_reports_family_on_loop_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_fixture(dir.path(), fixtures::g_loop_document());
    let out = dir.path().join("out");
    let code = run_cli(&["decompose", "--input", &input, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.join("decomposition.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["decomposition"]["f1"].as_array().unwrap().len(), 1);
    assert!(report["audit"]["findings"].as_array().unwrap().is_empty());
}

#[test]
fn aux_certifies_loop_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_fixture(dir.path(), fixtures::g_loop_document());
    let out = dir.path().join("out");
    let code = run_cli(&["aux", "--input", &input, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
}

#[test]
fn bad_input_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_fixture(dir.path(), "{\"not\": \"a game\"}");
    let code = run_cli(&["values", "--input", &input]);
    assert_eq!(code, 1);
    let code = run_cli(&["values", "--input", "/nonexistent/game.json"]);
    assert_eq!(code, 1);
}

#[test]
fn invalid_epsilon_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_fixture(dir.path(), fixtures::g_abs_document());
    let code = run_cli(&["verify", "--input", &input, "--epsilon", "1.5"]);
    assert_eq!(code, 1);
}

#[test]
fn pipeline_outputs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_fixture(dir.path(), fixtures::g_loop_document());
    let out1 = dir.path().join("a");
    let out2 = dir.path().join("b");
    for (cmd, file) in [
        ("decompose", "decomposition.json"),
        ("simulate", "simulate.json"),
        ("verify", "verify.json"),
    ] {
        for out in [&out1, &out2] {
            let code = run_cli(&[
                cmd,
                "--input",
                &input,
                "--seed",
                "9",
                "--runs",
                "50",
                "--horizon",
                "100",
                "--out",
                out.to_str().unwrap(),
            ]);
            assert!(code == 0 || code == 2, "{cmd} exited {code}");
        }
        let a = std::fs::read(out1.join(file)).unwrap();
        let b = std::fs::read(out2.join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
}
#[test]
fn sampled_fallback_engages_on_tiny_cap() {
    use std::collections::BTreeSet;
    let game = shiftgame::fixtures::g_loop();
    let set: BTreeSet<usize> = [0, 1].into_iter().collect();
    let safe = shiftgame::game::StationaryStrategy {
        player: shiftgame::game::Player::One,
        actions: vec![shiftgame::game::MixedAction::pure(2, 0); 3],
    };
    let safe2 = shiftgame::game::StationaryStrategy {
        player: shiftgame::game::Player::Two,
        actions: vec![shiftgame::game::MixedAction::pure(2, 0); 3],
    };
    let mu = shiftgame::game::parse_rational("1/100").unwrap();
    let profile = shiftgame::equilibrium::in_set_equilibrium(
        &game,
        &set,
        [&safe, &safe2],
        [
            shiftgame::game::parse_rational("-1").unwrap(),
            shiftgame::game::parse_rational("1").unwrap(),
        ],
        &mu,
        16,
        0.05,
    )
    .unwrap();
    // The detector memory needs more than the initial nodes: a tiny cap
    // pushes the solver onto the sampled estimate.
    let br =
        shiftgame::simulate::best_response(&game, &profile, shiftgame::game::Player::Two, 4)
            .unwrap();
    assert!(matches!(
        br.method,
        shiftgame::simulate::BrMethod::Sampled { .. }
    ));
}
