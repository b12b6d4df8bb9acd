//! Scenario-driven pipelines behind the `hierctl` binary.
//!
//! Every run writes `summary.json` and a `fields/` directory into its output
//! directory. Exit codes: 0 success, 2 configuration error, 3 solver
//! failure, 4 invariant violation.

pub mod io;

use std::path::{Path, PathBuf};

use hierctl::duality::duality_report;
use hierctl::follower::eval_j1;
use hierctl::leader::{StackelbergSolution, StackelbergSolver};
use hierctl::mesh::{inner_product, Field, FieldKind, Grid, GridConfig};
use hierctl::operator::{adjoint_of, assemble_generator, hormander_rank};
use hierctl::scenario::{sample_field, FieldSpec, Scenario, Setup};
use hierctl::sde::feynman_kac_check;
use hierctl::{Error, Result};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::io::{dump_field, FieldFormat};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_INVARIANT: i32 = 4;

/// Variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "HIERCTL_OUT";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Follower,
    Stackelberg,
    SweepAlpha,
    FkCheck,
    Selftest,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Follower => "follower",
            Command::Stackelberg => "stackelberg",
            Command::SweepAlpha => "sweep-alpha",
            Command::FkCheck => "fk-check",
            Command::Selftest => "selftest",
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    /// `None` selects the built-in scenario: the default Kolmogorov instance,
    /// or the trivial one for `selftest`.
    pub scenario: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub threads: Option<usize>,
    pub write_fields: bool,
}

#[derive(Debug)]
pub struct Outcome {
    pub exit_code: i32,
    pub message: String,
    pub summary_path: Option<PathBuf>,
}

/// One named invariant with its measured value and bound.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

impl Check {
    fn at_most(name: &str, value: f64, bound: f64) -> Check {
        Check {
            name: name.into(),
            value,
            bound,
            pass: value <= bound,
        }
    }

    fn at_least(name: &str, value: f64, bound: f64) -> Check {
        Check {
            name: name.into(),
            value,
            bound,
            pass: value >= bound,
        }
    }
}

pub fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::InvalidParameter { .. }
        | Error::InvalidGrid(_)
        | Error::InvalidMask(_)
        | Error::InvalidCoefficients(_) => EXIT_CONFIG,
        Error::TerminalConstraint { .. } => EXIT_INVARIANT,
        _ => EXIT_SOLVER,
    }
}

pub fn load_scenario(command: Command, path: Option<&Path>) -> Result<Scenario> {
    match path {
        Some(p) => Scenario::load(p),
        None if command == Command::Selftest => Ok(Scenario::trivial()),
        None => Ok(Scenario::default_kolmogorov()),
    }
}

/// Runs one pipeline end to end.
pub fn run(command: Command, opts: &RunOptions) -> Outcome {
    let scenario = match load_scenario(command, opts.scenario.as_deref()) {
        Ok(s) => s,
        Err(e) => {
            return Outcome {
                exit_code: EXIT_CONFIG,
                message: e.to_string(),
                summary_path: None,
            }
        }
    };
    let body = || -> Result<(Value, Vec<Check>)> {
        std::fs::create_dir_all(opts.out.join("fields"))?;
        match command {
            Command::Follower => follower(&scenario, opts),
            Command::Stackelberg => stackelberg(&scenario, opts),
            Command::SweepAlpha => sweep_alpha(&scenario, opts),
            Command::FkCheck => fk_check(&scenario, opts),
            Command::Selftest => selftest(&scenario, opts),
        }
    };
    let result = match opts.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(body),
            Err(e) => Err(Error::Config(format!("cannot build thread pool: {e}"))),
        },
        None => body(),
    };
    let (results, checks) = match result {
        Ok(r) => r,
        Err(e) => {
            return Outcome {
                exit_code: exit_code_for(&e),
                message: e.to_string(),
                summary_path: None,
            }
        }
    };
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    let summary = json!({
        "command": command.name(),
        "seed": opts.seed,
        "passed": failed.is_empty(),
        "checks": checks,
        "results": results,
        "scenario": scenario,
    });
    let path = opts.out.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    if let Err(e) = std::fs::write(&path, text) {
        return Outcome {
            exit_code: EXIT_SOLVER,
            message: format!("cannot write {}: {e}", path.display()),
            summary_path: None,
        };
    }
    if failed.is_empty() {
        Outcome {
            exit_code: EXIT_OK,
            message: format!("{}: all {} checks passed", command.name(), checks.len()),
            summary_path: Some(path),
        }
    } else {
        Outcome {
            exit_code: EXIT_INVARIANT,
            message: format!("{}: failed checks: {}", command.name(), failed.join(", ")),
            summary_path: Some(path),
        }
    }
}

fn dump(opts: &RunOptions, grid: &Grid, rel: &str, field: &Field) -> Result<()> {
    if !opts.write_fields {
        return Ok(());
    }
    for format in [FieldFormat::Binary, FieldFormat::Csv] {
        let p = opts.out.join("fields").join(format!("{rel}.{}", format.extension()));
        dump_field(field, grid, &p, format)?;
    }
    Ok(())
}

fn follower(scenario: &Scenario, opts: &RunOptions) -> Result<(Value, Vec<Check>)> {
    let setup = scenario.build()?;
    let f = setup.leader.follower();
    let u1 = setup.follower_u1()?;
    let br = f.best_response(&u1, &setup.y_rf)?;
    let stationarity = f.stationarity_residual(&br, &u1, &setup.y_rf)?;
    let j2 = f.eval_j2(&u1, &br.u2_star, &setup.y_rf)?;
    let g = &setup.grid;
    dump(opts, g, "u2_star", br.u2_star.values())?;
    dump(opts, g, "y", &br.y)?;
    dump(opts, g, "p", &br.p)?;
    let results = json!({
        "j1": eval_j1(&u1, g)?,
        "j2": j2,
        "u2_norm": br.u2_star.norm(g),
        "stationarity_residual": stationarity,
        "fixed_point_residual": br.residual,
        "coupled_method": f.system().resolved_method(),
        "solver_iterations": br.report.iterations,
    });
    Ok((results, vec![Check::at_most("follower_stationarity", stationarity, 1e-7)]))
}

struct Solved {
    sol: StackelbergSolution,
    target: Field,
    results: Value,
    checks: Vec<Check>,
}

fn solve_and_check(setup: &Setup, solver: &StackelbergSolver, target: &Field, alpha: f64, seed: u64) -> Result<Solved> {
    let s = &setup.scenario;
    let g = &setup.grid;
    let leader = &setup.leader;
    let opts = &s.solver.stackelberg;
    let sol = solver.solve(target, alpha, opts)?;
    let y0_t = solver.background().y0.terminal();
    let report = duality_report(&sol, leader, target, &y0_t)?;
    let vi = leader.check_variational_inequality(&sol.xi_star, target, alpha, s.solver.vi_samples, &setup.y_rf, seed)?;
    let (u1, br) = leader.terminal_state(&sol.xi_star, &setup.y_rf)?;
    let f = leader.follower();
    let stationarity = f.stationarity_residual(&br, &u1, &setup.y_rf)?;
    let j2 = f.eval_j2(&u1, &br.u2_star, &setup.y_rf)?;
    let xi_norm = sol.xi_star.norm(g);
    let u_norm = sol.u1_star.norm(g);
    let checks = vec![
        Check::at_most("terminal_constraint", sol.terminal_error, alpha + opts.tol_controllability),
        Check::at_most("duality_gap", report.gap.abs(), 1e-6 * (1.0 + report.primal_value.abs())),
        Check::at_most("duality_identity", report.identity_error, 1e-10 * u_norm * xi_norm + 1e-13),
        Check::at_least("variational_inequality", vi, -1e-6 * (1.0 + xi_norm)),
        Check::at_most("follower_stationarity", stationarity, 1e-7),
    ];
    let results = json!({
        "alpha": alpha,
        "beta": s.problem.beta,
        "terminal_error": sol.terminal_error,
        "target_norm": target.norm(g),
        "free_terminal_error": y0_t.sub(target)?.norm(g),
        "j1": sol.primal_value,
        "j2": j2,
        "xi_norm": xi_norm,
        "u1_norm": u_norm,
        "duality": report,
        "vi_min": vi,
        "dual_method": opts.dual.method,
        "dual_residual": sol.dual_residual,
        "dual_iterations": sol.dual_iterations,
        "follower_residual": sol.follower_residual,
        "follower_stationarity": stationarity,
    });
    Ok(Solved {
        sol,
        target: target.clone(),
        results,
        checks,
    })
}

fn dump_solution(opts: &RunOptions, g: &Grid, prefix: &str, s: &Solved) -> Result<()> {
    dump(opts, g, &format!("{prefix}u1_star"), s.sol.u1_star.values())?;
    dump(opts, g, &format!("{prefix}u2_star"), s.sol.u2_star.values())?;
    dump(opts, g, &format!("{prefix}y"), &s.sol.y)?;
    dump(opts, g, &format!("{prefix}y_terminal"), &s.sol.y.terminal())?;
    dump(opts, g, &format!("{prefix}xi_star"), s.sol.xi_star.field())?;
    dump(opts, g, &format!("{prefix}target"), &s.target)
}

fn stackelberg(scenario: &Scenario, opts: &RunOptions) -> Result<(Value, Vec<Check>)> {
    let setup = scenario.build()?;
    let solver = setup.solver()?;
    let target = setup.target(solver.background())?;
    let alpha = setup.alpha(&target);
    info!("stackelberg solve with alpha {alpha:.4e}");
    let solved = solve_and_check(&setup, &solver, &target, alpha, opts.seed)?;
    dump_solution(opts, &setup.grid, "", &solved)?;
    Ok((solved.results, solved.checks))
}

fn sweep_alpha(scenario: &Scenario, opts: &RunOptions) -> Result<(Value, Vec<Check>)> {
    let setup = scenario.build()?;
    let solver = setup.solver()?;
    let target = setup.target(solver.background())?;
    let tnorm = target.norm(&setup.grid);
    // the Gramian is shared by all levels
    solver.gramian()?;
    let levels: Vec<(usize, f64)> = scenario.sweep.alpha_factors.iter().copied().enumerate().collect();
    let solved = levels
        .par_iter()
        .map(|&(i, factor)| {
            let s = solve_and_check(&setup, &solver, &target, factor * tnorm, opts.seed)?;
            dump_solution(opts, &setup.grid, &format!("level_{i:02}/"), &s)?;
            Ok((factor, s))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut checks = Vec::new();
    let mut rows = Vec::new();
    for (i, (factor, s)) in solved.iter().enumerate() {
        for c in &s.checks {
            checks.push(Check {
                name: format!("level_{i:02}.{}", c.name),
                ..c.clone()
            });
        }
        let mut r = s.results.clone();
        r["alpha_factor"] = json!(factor);
        rows.push(r);
    }
    let mut order: Vec<usize> = (0..solved.len()).collect();
    order.sort_by(|&a, &b| solved[b].1.sol.alpha.total_cmp(&solved[a].1.sol.alpha));
    // J1 along decreasing alpha; report the worst decrease
    let worst = order
        .windows(2)
        .map(|w| solved[w[0]].1.sol.primal_value - solved[w[1]].1.sol.primal_value)
        .fold(f64::NEG_INFINITY, f64::max);
    if order.len() > 1 {
        let scale = solved.iter().map(|(_, s)| s.sol.primal_value.abs()).fold(1.0, f64::max);
        checks.push(Check::at_most("j1_monotone_in_alpha", worst, 1e-10 * scale));
    }
    Ok((json!({ "target_norm": tnorm, "levels": rows }), checks))
}

fn fk_check(scenario: &Scenario, opts: &RunOptions) -> Result<(Value, Vec<Check>)> {
    scenario.validate()?;
    let fk = &scenario.fk;
    let coeffs = scenario.coefficients()?;
    let dim = scenario.grid.lower.len();
    let grid = Grid::new(GridConfig {
        points: vec![fk.points; dim],
        time_steps: fk.time_steps,
        horizon: fk.horizon,
        ..scenario.grid_config()
    })?;
    let payoff = sample_field(&grid, &fk.payoff, true)?;
    let dt = fk.horizon / fk.time_steps as f64;
    let r = feynman_kac_check(&coeffs, &payoff, fk.horizon, &grid, dt, fk.n_paths, opts.seed)?;
    let h = grid.spacing().iter().copied().fold(0.0, f64::max);
    let c = fk.margin_constant * payoff.max_abs();
    let margin = 3.0 * r.std_error + c * (h + dt);
    let diff = (r.mc_value - r.pde_value).abs();
    dump(opts, &grid, "payoff", &payoff)?;
    let results = json!({
        "mc_value": r.mc_value,
        "pde_value": r.pde_value,
        "std_error": r.std_error,
        "exit_fraction": r.exit_fraction,
        "abs_difference": diff,
        "margin": margin,
        "h": h,
        "dt": dt,
        "n_paths": fk.n_paths,
    });
    Ok((results, vec![Check::at_most("feynman_kac_agreement", diff, margin)]))
}

fn random_interior(grid: &Grid, rng: &mut ChaCha8Rng) -> Field {
    let values = (0..grid.n_nodes()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut f = Field::from_values(grid, FieldKind::Slice, values).expect("length matches the grid");
    f.zero_boundary(grid);
    f
}

fn selftest(scenario: &Scenario, opts: &RunOptions) -> Result<(Value, Vec<Check>)> {
    let setup = scenario.build()?;
    let g = &setup.grid;
    let mut checks = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let a = assemble_generator(g, &setup.coeffs, 0.0)?;
    let a_star = adjoint_of(&a, g)?;
    let mut worst_adjoint: f64 = 0.0;
    for _ in 0..20 {
        let y = random_interior(g, &mut rng);
        let p = random_interior(g, &mut rng);
        let lhs = inner_product(&a.apply(g, &y)?, &p, g)?;
        let rhs = inner_product(&y, &a_star.apply(g, &p)?, g)?;
        worst_adjoint = worst_adjoint.max((lhs - rhs).abs() / (y.norm(g) * p.norm(g)));
    }
    checks.push(Check::at_most("adjoint_identity", worst_adjoint, 1e-12));

    let rank = match hormander_rank(&setup.coeffs, g) {
        Ok(r) => Some(r),
        Err(Error::NotApplicable(_)) => None,
        Err(e) => return Err(e),
    };
    if let Some(r) = rank {
        checks.push(Check::at_least("hormander_rank", r as f64, g.dim() as f64));
    }

    let f = setup.leader.follower();
    let u1 = setup.follower_u1()?;
    let br = f.best_response(&u1, &setup.y_rf)?;
    checks.push(Check::at_most(
        "follower_stationarity",
        f.stationarity_residual(&br, &u1, &setup.y_rf)?,
        1e-7,
    ));

    let solver = setup.solver()?;
    let (z, _) = setup.leader.apply_h_full(&u1)?;
    let split = solver.background().y0.add(&z)?;
    let decomposition = br.y.sub(&split)?.norm(g) / (1.0 + br.y.norm(g));
    checks.push(Check::at_most("decomposition", decomposition, 1e-8));

    let target = setup.target(solver.background())?;
    let alpha = setup.alpha(&target);
    let solved = solve_and_check(&setup, &solver, &target, alpha, opts.seed)?;
    checks.extend(solved.checks.iter().cloned());
    if matches!(scenario.target, FieldSpec::Background) {
        let gap = solved.results["duality"]["gap"].as_f64().unwrap_or(f64::NAN).abs();
        checks.push(Check::at_most("trivial_u1_zero", solved.sol.u1_star.norm(g), 1e-10));
        checks.push(Check::at_most("trivial_terminal_error", solved.sol.terminal_error, 1e-10));
        checks.push(Check::at_most("trivial_duality_gap", gap, 1e-10));
    }

    // binary dumps must read back bit for bit
    let probe = random_interior(g, &mut rng);
    let path = opts.out.join("fields").join("selftest_probe.bin");
    dump_field(&probe, g, &path, FieldFormat::Binary)?;
    let back = io::read_field(&path, g)?;
    let mismatches = probe
        .values()
        .iter()
        .zip(back.values())
        .filter(|(a, b)| a.to_bits() != b.to_bits())
        .count();
    checks.push(Check::at_most("binary_round_trip_mismatches", mismatches as f64, 0.0));
    dump_solution(opts, g, "", &solved)?;

    let results = json!({
        "hormander_rank": rank,
        "adjoint_identity": worst_adjoint,
        "decomposition": decomposition,
        "stackelberg": solved.results,
    });
    Ok((results, checks))
}
