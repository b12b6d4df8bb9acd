//! Euler-Maruyama simulation of the diffusion chain and a Feynman-Kac
//! comparison against the backward equation of the discrete generator.
//!
//! Noise enters only the first block: `dx^1 = f_1 dt + sigma dW`,
//! `dx^j = f_j(x^{j-1}, ..., x^n) dt` for `j >= 2`. Path `i` draws from a
//! ChaCha8 stream seeded with `seed` and stream id `i`, so ensembles are
//! reproducible regardless of thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Field, FieldKind, Grid};
use crate::operator::CoefficientSet;
use crate::pde_solvers::{Propagator, StepSolve};

#[derive(Clone, Debug, PartialEq)]
pub struct PathEnsemble {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    /// Terminal states, one per path.
    pub states: Vec<Vec<f64>>,
    /// True for paths stopped at the boundary of the domain.
    pub absorbed: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeynmanKac {
    pub mc_value: f64,
    pub pde_value: f64,
    pub std_error: f64,
    pub exit_fraction: f64,
}

fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && horizon > 0.0) {
        return Err(Error::param("fk.dt", "time step and horizon must be positive"));
    }
    let steps = (horizon / dt).round();
    if steps < 1.0 || (steps * dt - horizon).abs() > 1e-9 * horizon {
        return Err(Error::param("fk.dt", format!("{dt} does not divide the horizon {horizon}")));
    }
    Ok(steps as usize)
}

/// Free-space simulation (no absorption).
pub fn simulate_chain(
    coeffs: &CoefficientSet,
    x0: &[f64],
    horizon: f64,
    dt: f64,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    simulate(coeffs, x0, horizon, dt, n_paths, seed, None)
}

/// Simulation stopped at the first step outside the open domain of `grid`.
pub fn simulate_chain_absorbed(
    coeffs: &CoefficientSet,
    x0: &[f64],
    horizon: f64,
    dt: f64,
    n_paths: usize,
    seed: u64,
    grid: &Grid,
) -> Result<PathEnsemble> {
    simulate(coeffs, x0, horizon, dt, n_paths, seed, Some(grid))
}

fn simulate(
    coeffs: &CoefficientSet,
    x0: &[f64],
    horizon: f64,
    dt: f64,
    n_paths: usize,
    seed: u64,
    domain: Option<&Grid>,
) -> Result<PathEnsemble> {
    let dim = coeffs.n_subsystems() * coeffs.d_per_subsystem();
    if x0.len() != dim {
        return Err(Error::ShapeMismatch(format!("start point has {} coordinates, expected {dim}", x0.len())));
    }
    if n_paths == 0 {
        return Err(Error::param("fk.n_paths", "need at least one path"));
    }
    let steps = step_count(horizon, dt)?;
    let d = coeffs.d_per_subsystem();
    let m = coeffs.noise_dim();
    let sq = dt.sqrt();

    let paths: Vec<(Vec<f64>, bool)> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut x = x0.to_vec();
            let mut dw = vec![0.0; m];
            for s in 0..steps {
                let t = s as f64 * dt;
                let f = coeffs.full_drift(t, &x);
                let sigma = coeffs.sigma(t, &x);
                for v in dw.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v = sq * z;
                }
                for a in 0..dim {
                    x[a] += f[a] * dt;
                }
                for a in 0..d {
                    x[a] += (0..m).map(|b| sigma[(a, b)] * dw[b]).sum::<f64>();
                }
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::BlowUp(format!("path {i} became non-finite at step {s}")));
                }
                if let Some(g) = domain {
                    if !g.contains(&x) {
                        return Ok((x, true));
                    }
                }
            }
            Ok((x, false))
        })
        .collect::<Result<Vec<_>>>()?;
    let (states, absorbed) = paths.into_iter().unzip();
    Ok(PathEnsemble {
        n_paths,
        dt,
        seed,
        states,
        absorbed,
    })
}

/// Compares `E[payoff(X_T)]` from the domain centre with the discrete
/// backward value `-dv/dt = A v`, `v(T) = payoff`, evaluated there.
pub fn feynman_kac_check(
    coeffs: &CoefficientSet,
    payoff: &Field,
    horizon: f64,
    grid: &Grid,
    dt: f64,
    n_paths: usize,
    seed: u64,
) -> Result<FeynmanKac> {
    if payoff.kind() != FieldKind::Slice || payoff.n_nodes() != grid.n_nodes() {
        return Err(Error::ShapeMismatch("payoff must be a slice field on the grid".into()));
    }
    let steps = step_count(horizon, dt)?;
    let x0 = grid.center();
    let mut pay = payoff.clone();
    pay.zero_boundary(grid);

    let ens = simulate_chain_absorbed(coeffs, &x0, horizon, dt, n_paths, seed, grid)?;
    let samples: Vec<f64> = ens
        .states
        .iter()
        .zip(&ens.absorbed)
        .map(|(x, &out)| if out { 0.0 } else { grid.interpolate(pay.values(), x) })
        .collect();
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    let exits = ens.absorbed.iter().filter(|&&a| a).count() as f64 / n;

    let pde_grid = grid.with_time(horizon, steps)?;
    let prop = Propagator::new(&pde_grid, coeffs, StepSolve::Direct)?;
    let v0 = prop.value_at_start(&pde_grid.restrict(pay.values()))?;
    let pde_value = pde_grid.interpolate(&pde_grid.extend(&v0), &x0);

    Ok(FeynmanKac {
        mc_value: mean,
        pde_value,
        std_error: (var / n).sqrt(),
        exit_fraction: exits,
    })
}
