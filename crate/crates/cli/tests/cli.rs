use std::path::Path;
use std::process::Command;

use hierctl::leader::DualMethod;
use hierctl::scenario::Scenario;

fn hierctl(args: &[&str], out: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_hierctl"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn write_scenario(dir: &Path, s: &Scenario) -> String {
    let p = dir.join("scenario.toml");
    std::fs::write(&p, s.to_toml_string().unwrap()).unwrap();
    p.to_string_lossy().into_owned()
}

fn small() -> Scenario {
    let mut s = Scenario::default_kolmogorov();
    s.grid.points = vec![9, 9];
    s.grid.time_steps = 8;
    s.solver.vi_samples = 20;
    s.fk.points = 17;
    s.fk.time_steps = 16;
    s.fk.n_paths = 5_000;
    s
}

#[test]
fn negative_alpha_exits_with_config_error_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let text = small().to_toml_string().unwrap().replace("alpha = 0.1", "alpha = -1.0");
    assert!(text.contains("alpha = -1.0"));
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, text).unwrap();
    let out = hierctl(&["stackelberg", "--scenario", p.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("problem.alpha"), "{err}");
}

#[test]
fn unknown_keys_and_missing_files_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let text = small().to_toml_string().unwrap().replace("beta = ", "bta = ");
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, text).unwrap();
    let out = hierctl(&["follower", "--scenario", p.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bta"));
    let out = hierctl(&["follower", "--scenario", "/nonexistent.toml"], &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn selftest_passes_on_the_builtin_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let out = hierctl(&["selftest"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["passed"], true);
    assert_eq!(summary["results"]["hormander_rank"], 2);
    assert!(dir.path().join("fields/selftest_probe.bin").exists());
}

#[test]
fn stackelberg_summary_is_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path(), &small());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let out = hierctl(&["stackelberg", "--scenario", &sc, "--seed", "7", "--threads", "1"], &a);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let out = hierctl(&["stackelberg", "--scenario", &sc, "--seed", "7", "--threads", "3"], &b);
    assert_eq!(out.status.code(), Some(0));
    let sa = std::fs::read(a.join("summary.json")).unwrap();
    let sb = std::fs::read(b.join("summary.json")).unwrap();
    assert_eq!(sa, sb);

    let summary: serde_json::Value = serde_json::from_slice(&sa).unwrap();
    let r = &summary["results"];
    let alpha = r["alpha"].as_f64().unwrap();
    assert!(r["terminal_error"].as_f64().unwrap() <= alpha + 1e-6);
    assert!(a.join("fields/xi_star.bin").exists());
    assert!(a.join("fields/u1_star_007.csv").exists());
}

#[test]
fn follower_sweep_and_fk_pipelines_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path(), &small());
    for cmd in ["follower", "sweep-alpha", "fk-check"] {
        let out_dir = dir.path().join(cmd);
        let out = hierctl(&[cmd, "--scenario", &sc, "--no-fields"], &out_dir);
        assert_eq!(out.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(out_dir.join("summary.json").exists());
    }
    let sweep: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("sweep-alpha/summary.json")).unwrap()).unwrap();
    assert_eq!(sweep["results"]["levels"].as_array().unwrap().len(), 4);
}

#[test]
fn loose_dual_solves_fail_with_solver_or_invariant_codes() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = small();
    s.solver.stackelberg.dual.method = DualMethod::ProximalGradient;
    s.solver.stackelberg.dual.tol = 1e-1;
    let sc = write_scenario(dir.path(), &s);
    let out = hierctl(&["stackelberg", "--scenario", &sc, "--no-fields"], &dir.path().join("loose"));
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));

    s.solver.stackelberg.dual.tol = 1e-12;
    s.solver.stackelberg.dual.max_iter = 1;
    let sc = write_scenario(dir.path(), &s);
    let out = hierctl(&["stackelberg", "--scenario", &sc, "--no-fields"], &dir.path().join("capped"));
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
