//! The leader's approximate-controllability problem, solved in the dual.
//!
//! With `y0` the state of the leader-free coupled system and `H u1 = z(T)`
//! the terminal state of the `(z, q)` system driven by `u1`, the leader wants
//! `||y0(T) + H u1 - y_tg|| <= alpha` at least cost `J1(u1)`. Its dual is
//!
//! ```text
//! D(xi) = 1/2 ||H* xi||^2 + alpha ||xi|| - (xi, y_tg - y0(T))
//! ```
//!
//! and the optimal strategy is `u1 = H* xi = phi chi1`.

use std::sync::{Arc, OnceLock};
use std::time::Instant;

use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::follower::{eval_j1, BestResponse, Follower};
use crate::mesh::{inner_product, Control, Field, FieldKind, Grid, Role};
use crate::pde_solvers::{interior_slice, interior_spacetime, slice_from_interior, spacetime_from_interior};

/// Terminal-layer dual variable.
#[derive(Clone, Debug, PartialEq)]
pub struct DualVariable {
    xi: Field,
}

impl DualVariable {
    pub fn new(grid: &Grid, xi: Field) -> Result<Self> {
        if xi.kind() != FieldKind::Slice || xi.n_nodes() != grid.n_nodes() {
            return Err(Error::ShapeMismatch("dual variable must be a slice field on the grid".into()));
        }
        if !xi.vanishes_on_boundary(grid) {
            return Err(Error::param("xi", "must vanish on the boundary"));
        }
        Ok(DualVariable { xi })
    }

    pub fn zeros(grid: &Grid) -> Self {
        DualVariable {
            xi: Field::zeros_slice(grid),
        }
    }

    pub fn from_interior(grid: &Grid, values: &[f64]) -> Result<Self> {
        Ok(DualVariable {
            xi: slice_from_interior(grid, values)?,
        })
    }

    pub fn field(&self) -> &Field {
        &self.xi
    }

    pub fn interior(&self, grid: &Grid) -> Vec<f64> {
        grid.restrict(self.xi.values())
    }

    pub fn norm(&self, grid: &Grid) -> f64 {
        self.xi.norm(grid)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualIterate {
    pub iteration: usize,
    pub objective: f64,
    /// Norm of the gradient mapping `(xi - prox(xi - s grad)) / s`, or the
    /// relative residual in conjugate-gradient mode.
    pub residual: f64,
    pub step: f64,
    pub xi_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualMethod {
    ProximalGradient,
    /// Exact minimizer from the eigenpairs of the assembled Gramian: for
    /// `||b|| > alpha` the optimum solves `(M + mu) xi = b` with
    /// `mu ||xi|| = alpha`, a monotone scalar equation in `mu`.
    Spectral,
    /// Conjugate gradient on the smooth part; only for `alpha = 0`.
    ConjugateGradient,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GramianBackend {
    /// Build `H H*` once as a dense matrix over interior nodes.
    Assembled,
    /// Two coupled solves per application.
    MatrixFree,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DualOptions {
    pub method: DualMethod,
    pub backend: GramianBackend,
    /// Monotone restarted extrapolation on top of the proximal step.
    pub accelerated: bool,
    pub tol: f64,
    pub max_iter: usize,
    pub initial_step: f64,
    pub backtrack: f64,
}

impl Default for DualOptions {
    fn default() -> Self {
        DualOptions {
            method: DualMethod::Spectral,
            backend: GramianBackend::Assembled,
            accelerated: true,
            tol: 1e-10,
            max_iter: 200_000,
            initial_step: 1.0,
            backtrack: 0.5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DualSolution {
    pub xi: DualVariable,
    pub objective: f64,
    pub residual: f64,
    pub iterations: usize,
    pub history: Vec<DualIterate>,
}

#[derive(Clone, Debug)]
pub struct Background {
    pub y0: Field,
    pub p0: Field,
}

/// `H H*` as a symmetric matrix in the nodal basis of interior nodes:
/// `G_ij = <H* e_i, H* e_j>`, so `||H* xi||^2 = c^T G c` for nodal values `c`.
#[derive(Clone, Debug)]
pub struct Gramian {
    matrix: DMatrix<f64>,
    /// Eigenpairs of `W^-1/2 G W^-1/2`, from the singular values of the
    /// factor so that small eigenvalues keep their relative accuracy.
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
}

impl Gramian {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn apply(&self, c: &[f64]) -> Vec<f64> {
        (&self.matrix * DVector::from_column_slice(c)).as_slice().to_vec()
    }

    /// Eigenvalues of `H H*` in the weighted metric, descending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }
}

#[derive(Clone, Debug)]
pub struct StackelbergSolution {
    pub u1_star: Control,
    pub u2_star: Control,
    pub xi_star: DualVariable,
    pub y: Field,
    pub p: Field,
    pub terminal_error: f64,
    pub alpha: f64,
    /// `D(xi*)`, the minimum of the dual functional.
    pub dual_value: f64,
    /// `J1(u1*)`
    pub primal_value: f64,
    pub dual_residual: f64,
    pub dual_iterations: usize,
    pub follower_residual: f64,
    pub history: Vec<DualIterate>,
}

fn sort_descending(values: Vec<f64>, vectors: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let vals = order.iter().map(|&i| values[i]).collect();
    let vecs = DMatrix::from_fn(vectors.nrows(), order.len(), |r, c| vectors[(r, order[c])]);
    (vals, vecs)
}

fn dot_w(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    a.iter().zip(b).zip(w).map(|((x, y), w)| w * x * y).sum()
}

fn norm_w(a: &[f64], w: &[f64]) -> f64 {
    dot_w(a, a, w).sqrt()
}

/// Proximal map of `tau ||.||`: block soft-thresholding.
pub fn block_soft_threshold(v: &[f64], tau: f64, w: &[f64]) -> Vec<f64> {
    let nv = norm_w(v, w);
    if nv <= tau || nv == 0.0 {
        return vec![0.0; v.len()];
    }
    let f = 1.0 - tau / nv;
    v.iter().map(|x| f * x).collect()
}

/// `(y(T) - target, xi_hat - xi) + alpha (||xi_hat|| - ||xi||)`
pub fn variational_value(grid: &Grid, y_t: &Field, target: &Field, xi: &Field, xi_hat: &Field, alpha: f64) -> Result<f64> {
    let e = y_t.sub(target)?;
    let d = xi_hat.sub(xi)?;
    Ok(inner_product(&e, &d, grid)? + alpha * (xi_hat.norm(grid) - xi.norm(grid)))
}

/// Leader-level operators built on a follower problem.
#[derive(Debug)]
pub struct Leader {
    follower: Follower,
}

impl Leader {
    pub fn new(follower: Follower) -> Self {
        Leader { follower }
    }

    pub fn follower(&self) -> &Follower {
        &self.follower
    }

    pub fn grid(&self) -> &Grid {
        self.follower.grid()
    }

    fn zeros_flat(&self) -> Vec<f64> {
        vec![0.0; self.grid().n_interior() * self.grid().n_time_steps()]
    }

    /// Leader-free coupled system with tracking `y_rf`.
    pub fn solve_background(&self, y_rf: &Field) -> Result<Background> {
        let grid = self.grid();
        let tracking = interior_spacetime(grid, y_rf)?;
        let sol = self.follower.system().solve(&self.zeros_flat(), &tracking, None)?;
        Ok(Background {
            y0: spacetime_from_interior(grid, &sol.y)?,
            p0: spacetime_from_interior(grid, &sol.p)?,
        })
    }

    /// `(z, q)` driven by `u1 chi1` with zero tracking.
    pub fn apply_h_full(&self, u1: &Control) -> Result<(Field, Field)> {
        if u1.role() != Role::Leader || u1.mask() != self.follower.u1_mask() {
            return Err(Error::InvalidMask("H acts on leader controls supported on U1".into()));
        }
        let grid = self.grid();
        let forcing = interior_spacetime(grid, u1.values())?;
        let sol = self.follower.system().solve(&forcing, &self.zeros_flat(), None)?;
        Ok((spacetime_from_interior(grid, &sol.y)?, spacetime_from_interior(grid, &sol.p)?))
    }

    /// `H u1 = z(T)`
    pub fn apply_h(&self, u1: &Control) -> Result<Field> {
        Ok(self.apply_h_full(u1)?.0.terminal())
    }

    /// `(phi, theta)` with `phi(T) = xi`.
    pub fn apply_h_star_full(&self, xi: &DualVariable) -> Result<(Field, Field)> {
        let grid = self.grid();
        let (phi, theta) = self.h_star_interior(&interior_slice(grid, xi.field())?)?;
        Ok((spacetime_from_interior(grid, &phi)?, spacetime_from_interior(grid, &theta)?))
    }

    fn h_star_interior(&self, xi: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let z = self.zeros_flat();
        let sol = self.follower.system().solve(&z, &z, Some(xi))?;
        Ok((sol.p, sol.y))
    }

    /// `H* xi = phi chi1`
    pub fn apply_h_star(&self, xi: &DualVariable) -> Result<Control> {
        let (phi, _) = self.apply_h_star_full(xi)?;
        Control::new(phi, self.follower.u1_mask().clone(), Role::Leader)
    }

    /// Assembles the Gramian with one coupled solve per interior node.
    pub fn gramian(&self) -> Result<Gramian> {
        let start = Instant::now();
        let grid = self.grid();
        let n = grid.n_interior();
        let k_steps = grid.n_time_steps();
        let weights = grid.interior_weights();
        let support: Vec<usize> = grid
            .interior_nodes()
            .iter()
            .enumerate()
            .filter(|(_, &node)| self.follower.u1_mask().contains(node))
            .map(|(i, _)| i)
            .collect();
        let scale: Vec<f64> = support.iter().map(|&i| (grid.dt() * weights[i]).sqrt()).collect();
        let rows = k_steps * support.len();
        let columns: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                let (phi, _) = self.h_star_interior(&e)?;
                let mut col = Vec::with_capacity(rows);
                for k in 0..k_steps {
                    for (s, &i) in support.iter().enumerate() {
                        col.push(scale[s] * phi[k * n + i]);
                    }
                }
                Ok(col)
            })
            .collect::<Result<Vec<_>>>()?;
        let phi = DMatrix::from_fn(rows, n, |r, c| columns[c][r]);
        let g = phi.tr_mul(&phi);
        let matrix = (&g + g.transpose()) * 0.5;
        let scaled = DMatrix::from_fn(rows, n, |r, c| columns[c][r] / weights[c].sqrt());
        let (eigenvalues, eigenvectors) = if rows >= n {
            let svd = scaled.svd(false, true);
            let vt = svd.v_t.ok_or_else(|| Error::Singular("Gramian factor SVD failed".into()))?;
            (svd.singular_values.iter().map(|s| s * s).collect(), vt.transpose())
        } else {
            // fewer rows than nodes: the row space carries the spectrum
            let svd = scaled.transpose().svd(true, false);
            let u = svd.u.ok_or_else(|| Error::Singular("Gramian factor SVD failed".into()))?;
            (svd.singular_values.iter().map(|s| s * s).collect(), u)
        };
        let (eigenvalues, eigenvectors) = sort_descending(eigenvalues, eigenvectors);
        info!("assembled {n}x{n} Gramian in {:.2}s", start.elapsed().as_secs_f64());
        Ok(Gramian {
            matrix,
            eigenvalues,
            eigenvectors,
        })
    }

    /// `W H H* xi` in interior nodal values (the Gramian product without
    /// assembling it).
    pub fn apply_gramian_free(&self, c: &[f64]) -> Result<Vec<f64>> {
        let grid = self.grid();
        let n = grid.n_interior();
        let (phi, _) = self.h_star_interior(c)?;
        let mut u = phi;
        let chi1: Vec<bool> = grid
            .interior_nodes()
            .iter()
            .map(|&node| self.follower.u1_mask().contains(node))
            .collect();
        for (idx, v) in u.iter_mut().enumerate() {
            if !chi1[idx % n] {
                *v = 0.0;
            }
        }
        let sol = self.follower.system().solve(&u, &self.zeros_flat(), None)?;
        let k_last = grid.n_time_steps() - 1;
        let w = grid.interior_weights();
        Ok(sol.y[k_last * n..].iter().zip(&w).map(|(z, w)| w * z).collect())
    }

    /// Minimizes the dual functional for `b = target - y0_t`.
    pub fn solve_dual(
        &self,
        target: &Field,
        alpha: f64,
        y0_t: &Field,
        opts: &DualOptions,
        gramian: Option<&Gramian>,
    ) -> Result<DualSolution> {
        let grid = self.grid();
        if !target.vanishes_on_boundary(grid) {
            return Err(Error::param("target", "must vanish on the boundary"));
        }
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::param("problem.alpha", format!("must be nonnegative, got {alpha}")));
        }
        if !(opts.initial_step > 0.0 && opts.backtrack > 0.0 && opts.backtrack < 1.0) {
            return Err(Error::param("solver.dual", "step must be positive and backtrack factor in (0, 1)"));
        }
        let b: Vec<f64> = interior_slice(grid, &target.sub(y0_t)?)?;
        let owned;
        let gram = match (opts.backend, gramian) {
            (GramianBackend::Assembled, Some(g)) => Some(g),
            (GramianBackend::Assembled, None) => {
                owned = self.gramian()?;
                Some(&owned)
            }
            (GramianBackend::MatrixFree, _) => None,
        };
        let apply = |c: &[f64]| -> Result<Vec<f64>> {
            match gram {
                Some(g) => Ok(g.apply(c)),
                None => self.apply_gramian_free(c),
            }
        };
        let w = grid.interior_weights();
        match opts.method {
            DualMethod::ProximalGradient => proximal_gradient(grid, &apply, &b, &w, alpha, opts),
            DualMethod::Spectral => {
                let g = gram.ok_or_else(|| {
                    Error::param("solver.stackelberg.dual.backend", "the spectral method needs the assembled Gramian")
                })?;
                spectral(grid, g, &b, &w, alpha)
            }
            DualMethod::ConjugateGradient => {
                if alpha != 0.0 {
                    return Err(Error::param(
                        "solver.dual.method",
                        "conjugate gradient handles only alpha = 0",
                    ));
                }
                conjugate_gradient(grid, &apply, &b, &w, opts)
            }
        }
    }

    /// `y(T; xi)` from the full optimality system: `u1 = H* xi`, then the
    /// follower's best response.
    pub fn terminal_state(&self, xi: &DualVariable, y_rf: &Field) -> Result<(Control, BestResponse)> {
        let u1 = self.apply_h_star(xi)?;
        let br = self.follower.best_response(&u1, y_rf)?;
        Ok((u1, br))
    }

    /// Minimum of the variational-inequality functional over `n_samples`
    /// random `xi_hat` plus `xi_hat = 0` and `xi_hat = 2 xi`.
    pub fn check_variational_inequality(
        &self,
        xi: &DualVariable,
        target: &Field,
        alpha: f64,
        n_samples: usize,
        y_rf: &Field,
        seed: u64,
    ) -> Result<f64> {
        let grid = self.grid();
        let (_, br) = self.terminal_state(xi, y_rf)?;
        let y_t = br.y.terminal();
        let xi_f = xi.field();
        let mut candidates = vec![Field::zeros_slice(grid), xi_f.scaled(2.0)];
        let scale = xi.norm(grid).max(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = grid.n_interior();
        let w = grid.interior_weights();
        for s in 0..n_samples {
            let eta: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let en = norm_w(&eta, &w);
            let r: f64 = rng.random_range(0.0..2.0) * scale;
            let mut dir = slice_from_interior(grid, &eta.iter().map(|v| r * v / en).collect::<Vec<_>>())?;
            if s % 2 == 0 {
                dir.axpy(1.0, xi_f)?;
            }
            candidates.push(dir);
        }
        let mut min = f64::INFINITY;
        for c in &candidates {
            min = min.min(variational_value(grid, &y_t, target, xi_f, c, alpha)?);
        }
        Ok(min)
    }

    /// Smallest `||H* xi|| / ||xi||` over random `xi`.
    pub fn observability_ratio(&self, n_samples: usize, seed: u64) -> Result<f64> {
        let grid = self.grid();
        let n = grid.n_interior();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut min = f64::INFINITY;
        for _ in 0..n_samples {
            let c: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let xi = DualVariable::from_interior(grid, &c)?;
            let u = self.apply_h_star(&xi)?;
            min = min.min(u.norm(grid) / xi.norm(grid));
        }
        Ok(min)
    }
}

fn proximal_gradient(
    grid: &Grid,
    apply: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    b: &[f64],
    w: &[f64],
    alpha: f64,
    opts: &DualOptions,
) -> Result<DualSolution> {
    let n = b.len();
    let smooth = |c: &[f64], gc: &[f64]| 0.5 * c.iter().zip(gc).map(|(x, y)| x * y).sum::<f64>() - dot_w(b, c, w);
    let grad_of = |gc: &[f64]| -> Vec<f64> { gc.iter().zip(w).zip(b).map(|((g, w), b)| g / w - b).collect() };

    let mut x = vec![0.0; n];
    let mut gx = vec![0.0; n];
    let mut fx = 0.0;
    let mut y = x.clone();
    let mut gy = gx.clone();
    let mut t = 1.0f64;
    let mut s = opts.initial_step;
    let mut history = Vec::new();
    let mut residual = f64::INFINITY;
    let mut iterations = 0;

    // One backtracked proximal step from `(p, gp)`; returns the new point,
    // its Gramian image, smooth value and the gradient-mapping norm.
    let step_from = |p: &[f64], gp: &[f64], s: &mut f64| -> Result<(Vec<f64>, Vec<f64>, f64, f64)> {
        let grad = grad_of(gp);
        let fp = smooth(p, gp);
        loop {
            let v: Vec<f64> = p.iter().zip(&grad).map(|(a, g)| a - *s * g).collect();
            let z = block_soft_threshold(&v, alpha * *s, w);
            let gz = apply(&z)?;
            let fz = smooth(&z, &gz);
            let d: Vec<f64> = z.iter().zip(p).map(|(a, b)| a - b).collect();
            let nd = norm_w(&d, w);
            let model = fp + dot_w(&grad, &d, w) + nd * nd / (2.0 * *s);
            if fz <= model + 1e-13 * (1.0 + fp.abs()) {
                return Ok((z, gz, fz, nd / *s));
            }
            *s *= opts.backtrack;
            if *s < 1e-30 {
                return Err(Error::BlowUp("dual step size underflow".into()));
            }
        }
    };

    while iterations < opts.max_iter {
        iterations += 1;
        let (z, gz, fz_smooth, res_y) = step_from(&y, &gy, &mut s)?;
        let fz = fz_smooth + alpha * norm_w(&z, w);
        if opts.accelerated && fz > fx && y != x {
            // restart from the last accepted point
            t = 1.0;
            y.clone_from(&x);
            gy.clone_from(&gx);
            continue;
        }
        residual = res_y;
        let x_prev = std::mem::replace(&mut x, z);
        let gx_prev = std::mem::replace(&mut gx, gz);
        fx = fz;
        if opts.accelerated {
            let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_new;
            t = t_new;
            for i in 0..n {
                y[i] = x[i] + beta * (x[i] - x_prev[i]);
                gy[i] = gx[i] + beta * (gx[i] - gx_prev[i]);
            }
        } else {
            y.clone_from(&x);
            gy.clone_from(&gx);
        }
        history.push(DualIterate {
            iteration: iterations,
            objective: fx,
            residual,
            step: s,
            xi_norm: norm_w(&x, w),
        });
        if residual <= opts.tol {
            if !opts.accelerated || y == x {
                break;
            }
            // the mapping was measured at the extrapolated point; confirm at x
            let mut s_chk = s;
            let (_, _, _, res_x) = step_from(&x, &gx, &mut s_chk)?;
            residual = res_x;
            if res_x <= opts.tol {
                break;
            }
        }
    }
    debug!("dual solve: {iterations} iterations, residual {residual:.3e}, step {s:.3e}");
    if residual > opts.tol {
        return Err(Error::DualNotConverged {
            iterations,
            residual,
            history,
        });
    }
    Ok(DualSolution {
        xi: DualVariable::from_interior(grid, &x)?,
        objective: fx,
        residual,
        iterations,
        history,
    })
}

fn spectral(grid: &Grid, gram: &Gramian, b: &[f64], w: &[f64], alpha: f64) -> Result<DualSolution> {
    let n = b.len();
    let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let beta = DVector::from_iterator(n, b.iter().zip(&sw).map(|(b, s)| b * s));
    let q = &gram.eigenvectors;
    let bq = q.tr_mul(&beta);
    let lam: Vec<f64> = gram.eigenvalues.iter().map(|l| l.max(0.0)).collect();
    let bq2: Vec<f64> = bq.iter().map(|v| v * v).collect();
    // psi(mu) = mu ||(M + mu)^-1 beta|| = ||target - y(T)||, increasing in mu
    let psi = |mu: f64| -> f64 {
        lam.iter()
            .zip(&bq2)
            .map(|(l, b2)| {
                let r = mu / (l + mu);
                r * r * b2
            })
            .sum::<f64>()
            .sqrt()
    };
    let zero = |history| DualSolution {
        xi: DualVariable::zeros(grid),
        objective: 0.0,
        residual: 0.0,
        iterations: 0,
        history,
    };
    let bnorm = bq2.iter().sum::<f64>().sqrt();
    if bnorm <= alpha {
        return Ok(zero(Vec::new()));
    }
    let coords: Vec<f64> = if alpha == 0.0 {
        // pure least squares on the range of M
        let lmax = lam.first().copied().unwrap_or(0.0);
        lam.iter()
            .zip(bq.iter())
            .map(|(&l, &v)| if l > 1e-14 * lmax { v / l } else { 0.0 })
            .collect()
    } else {
        let mut hi = lam.first().copied().unwrap_or(1.0).max(1e-300);
        while psi(hi) < alpha {
            hi *= 2.0;
        }
        let mut lo = hi;
        while psi(lo) >= alpha {
            lo *= 0.5;
            if lo < 1e-300 {
                return Err(Error::NotApplicable(format!(
                    "alpha = {alpha:.3e} is below the unreachable part of the target"
                )));
            }
        }
        // bisection in log scale down to adjacent floats
        for _ in 0..2000 {
            let mid = (lo * hi).sqrt();
            if mid <= lo || mid >= hi {
                break;
            }
            if psi(mid) < alpha {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mu = if (psi(hi) - alpha).abs() < (psi(lo) - alpha).abs() { hi } else { lo };
        lam.iter().zip(bq.iter()).map(|(l, v)| v / (l + mu)).collect()
    };
    let d = q * DVector::from_vec(coords);
    let c: Vec<f64> = d.iter().zip(&sw).map(|(d, s)| d / s).collect();
    let gc = gram.apply(&c);
    let objective = 0.5 * c.iter().zip(&gc).map(|(a, b)| a * b).sum::<f64>() - dot_w(b, &c, w) + alpha * norm_w(&c, w);
    // gradient mapping with the step 1 / lambda_max, the same measure as PG
    let s = 1.0 / lam.first().copied().unwrap_or(1.0).max(1e-300);
    let grad: Vec<f64> = gc.iter().zip(w).zip(b).map(|((g, w), b)| g / w - b).collect();
    let v: Vec<f64> = c.iter().zip(&grad).map(|(a, g)| a - s * g).collect();
    let z = block_soft_threshold(&v, alpha * s, w);
    let diff: Vec<f64> = z.iter().zip(&c).map(|(a, b)| a - b).collect();
    let residual = norm_w(&diff, w) / s;
    debug!("spectral dual solve: objective {objective:.6e}, mapping residual {residual:.3e}");
    let xi_norm = norm_w(&c, w);
    Ok(DualSolution {
        xi: DualVariable::from_interior(grid, &c)?,
        objective,
        residual,
        iterations: 1,
        history: vec![DualIterate {
            iteration: 1,
            objective,
            residual,
            step: s,
            xi_norm,
        }],
    })
}

fn conjugate_gradient(
    grid: &Grid,
    apply: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    b: &[f64],
    w: &[f64],
    opts: &DualOptions,
) -> Result<DualSolution> {
    // G c = W b in the Euclidean product; G is symmetric positive semidefinite.
    let n = b.len();
    let rhs: Vec<f64> = b.iter().zip(w).map(|(b, w)| b * w).collect();
    let rn = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut x = vec![0.0; n];
    let mut history = Vec::new();
    if rn == 0.0 {
        return Ok(DualSolution {
            xi: DualVariable::from_interior(grid, &x)?,
            objective: 0.0,
            residual: 0.0,
            iterations: 0,
            history,
        });
    }
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    let mut iterations = 0;
    let mut residual = 1.0;
    while iterations < opts.max_iter && residual > opts.tol {
        iterations += 1;
        let ap = apply(&p)?;
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            break;
        }
        let a = rr / pap;
        for i in 0..n {
            x[i] += a * p[i];
            r[i] -= a * ap[i];
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        residual = rr_new.sqrt() / rn;
        let gx = apply(&x)?;
        let objective = 0.5 * x.iter().zip(&gx).map(|(a, b)| a * b).sum::<f64>() - dot_w(b, &x, w);
        history.push(DualIterate {
            iteration: iterations,
            objective,
            residual,
            step: a,
            xi_norm: norm_w(&x, w),
        });
        for i in 0..n {
            p[i] = r[i] + (rr_new / rr) * p[i];
        }
        rr = rr_new;
    }
    if residual > opts.tol {
        return Err(Error::DualNotConverged {
            iterations,
            residual,
            history,
        });
    }
    let objective = history.last().map_or(0.0, |h| h.objective);
    Ok(DualSolution {
        xi: DualVariable::from_interior(grid, &x)?,
        objective,
        residual,
        iterations,
        history,
    })
}

/// Solves the full leader-follower problem for a fixed reference, caching
/// the background state and the Gramian across `alpha` levels and targets.
#[derive(Debug)]
pub struct StackelbergSolver {
    leader: Arc<Leader>,
    y_rf: Field,
    background: Background,
    gramian: OnceLock<Gramian>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StackelbergOptions {
    pub dual: DualOptions,
    /// Allowed excess of `||y(T) - target||` over `alpha`.
    pub tol_controllability: f64,
}

impl Default for StackelbergOptions {
    fn default() -> Self {
        StackelbergOptions {
            dual: DualOptions::default(),
            tol_controllability: 1e-6,
        }
    }
}

impl StackelbergSolver {
    pub fn new(leader: Arc<Leader>, y_rf: Field) -> Result<Self> {
        let background = leader.solve_background(&y_rf)?;
        Ok(StackelbergSolver {
            leader,
            y_rf,
            background,
            gramian: OnceLock::new(),
        })
    }

    pub fn leader(&self) -> &Arc<Leader> {
        &self.leader
    }

    pub fn background(&self) -> &Background {
        &self.background
    }

    pub fn reference(&self) -> &Field {
        &self.y_rf
    }

    pub fn gramian(&self) -> Result<&Gramian> {
        if let Some(g) = self.gramian.get() {
            return Ok(g);
        }
        let g = self.leader.gramian()?;
        Ok(self.gramian.get_or_init(|| g))
    }

    pub fn solve_dual(&self, target: &Field, alpha: f64, opts: &DualOptions) -> Result<DualSolution> {
        let gram = match opts.backend {
            GramianBackend::Assembled => Some(self.gramian()?),
            GramianBackend::MatrixFree => None,
        };
        self.leader
            .solve_dual(target, alpha, &self.background.y0.terminal(), opts, gram)
    }

    /// Background, dual solve, `u1* = H* xi*`, follower response, then the
    /// terminal-constraint check.
    pub fn solve(&self, target: &Field, alpha: f64, opts: &StackelbergOptions) -> Result<StackelbergSolution> {
        let grid = self.leader.grid();
        let dual = self.solve_dual(target, alpha, &opts.dual)?;
        let (u1_star, br) = self.leader.terminal_state(&dual.xi, &self.y_rf)?;
        let terminal_error = br.y.terminal().sub(target)?.norm(grid);
        let primal_value = eval_j1(&u1_star, grid)?;
        let sol = StackelbergSolution {
            u1_star,
            u2_star: br.u2_star,
            xi_star: dual.xi,
            y: br.y,
            p: br.p,
            terminal_error,
            alpha,
            dual_value: dual.objective,
            primal_value,
            dual_residual: dual.residual,
            dual_iterations: dual.iterations,
            follower_residual: br.residual,
            history: dual.history,
        };
        let bound = alpha + opts.tol_controllability;
        if terminal_error > bound {
            return Err(Error::TerminalConstraint {
                error: terminal_error,
                bound,
            });
        }
        Ok(sol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{make_mask, BoxRegion, GridConfig, MaskLabel};
    use crate::operator::CoefficientSet;
    use crate::pde_solvers::{CoupledOptions, CoupledSystem, Propagator, StepSolve};
    use std::collections::BTreeMap;

    fn leader(points: usize, steps: usize) -> Leader {
        let g = Grid::new(GridConfig::uniform(2, 1, points, -1.0, 1.0, steps, 1.0)).unwrap();
        let c = CoefficientSet::from_registry("kolmogorov", 2, 1, &BTreeMap::new()).unwrap();
        let prop = Arc::new(Propagator::new(&g, &c, StepSolve::Direct).unwrap());
        let b = |lo: [f64; 2], hi: [f64; 2]| BoxRegion {
            lower: lo.to_vec(),
            upper: hi.to_vec(),
        };
        let u1 = make_mask(&g, &b([-0.8, -0.8], [-0.2, 0.8]), MaskLabel::U1).unwrap();
        let u2 = make_mask(&g, &b([0.2, -0.8], [0.8, 0.8]), MaskLabel::U2).unwrap();
        let sys = Arc::new(CoupledSystem::new(prop, 1.0, &u2, CoupledOptions::default()).unwrap());
        Leader::new(Follower::new(sys, u1, u2).unwrap())
    }

    fn bump(g: &Grid) -> Field {
        let mut f = Field::from_fn(g, |x| (-((x[0] - 0.1).powi(2) + x[1].powi(2)) / 0.1).exp());
        f.zero_boundary(g);
        f
    }

    #[test]
    fn soft_threshold_shrinks_or_kills() {
        let w = vec![1.0, 1.0];
        assert_eq!(block_soft_threshold(&[3.0, 4.0], 5.0, &w), vec![0.0, 0.0]);
        let z = block_soft_threshold(&[3.0, 4.0], 1.0, &w);
        assert!((z[0] - 2.4).abs() < 1e-15 && (z[1] - 3.2).abs() < 1e-15);
    }

    #[test]
    fn zero_inputs_give_zero_outputs() {
        let l = leader(7, 4);
        let g = l.grid().clone();
        let bg = l.solve_background(&Field::zeros_spacetime(&g)).unwrap();
        assert!(bg.y0.is_zero() && bg.p0.is_zero());
        assert!(l.apply_h(&Control::zeros(&g, l.follower().u1_mask(), Role::Leader)).unwrap().is_zero());
        assert!(l.apply_h_star(&DualVariable::zeros(&g)).unwrap().values().is_zero());
    }

    #[test]
    fn gramian_matches_matrix_free_products() {
        let l = leader(7, 4);
        let g = l.grid().clone();
        let gram = l.gramian().unwrap();
        let c: Vec<f64> = (0..g.n_interior()).map(|i| (i as f64 * 0.7).sin()).collect();
        let a = gram.apply(&c);
        let b = l.apply_gramian_free(&c).unwrap();
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn easy_target_gives_zero_multiplier() {
        let l = leader(7, 4);
        let g = l.grid().clone();
        let y0t = Field::zeros_slice(&g);
        let target = bump(&g).scaled(0.01);
        let alpha = 1.01 * target.norm(&g);
        let sol = l.solve_dual(&target, alpha, &y0t, &DualOptions::default(), None).unwrap();
        assert!(sol.xi.field().is_zero());
    }

    #[test]
    fn plain_and_accelerated_agree_and_decrease() {
        let l = leader(7, 6);
        let g = l.grid().clone();
        let target = bump(&g);
        let alpha = 0.3 * target.norm(&g);
        let gram = l.gramian().unwrap();
        let y0t = Field::zeros_slice(&g);
        let mut opts = DualOptions {
            method: DualMethod::ProximalGradient,
            accelerated: false,
            tol: 1e-9,
            ..DualOptions::default()
        };
        let plain = l.solve_dual(&target, alpha, &y0t, &opts, Some(&gram)).unwrap();
        for pair in plain.history.windows(2) {
            assert!(pair[1].objective <= pair[0].objective + 1e-13 * (1.0 + pair[0].objective.abs()), "{:?} -> {:?}", pair[0], pair[1]);
        }
        opts.accelerated = true;
        let fast = l.solve_dual(&target, alpha, &y0t, &opts, Some(&gram)).unwrap();
        for pair in fast.history.windows(2) {
            assert!(pair[1].objective <= pair[0].objective + 1e-13 * (1.0 + pair[0].objective.abs()), "{:?} -> {:?}", pair[0], pair[1]);
        }
        let d = fast.xi.field().sub(plain.xi.field()).unwrap();
        assert!(d.norm(&g) <= 1e-6 * (1.0 + plain.xi.norm(&g)));
        opts.method = DualMethod::Spectral;
        let exact = l.solve_dual(&target, alpha, &y0t, &opts, Some(&gram)).unwrap();
        let d = exact.xi.field().sub(fast.xi.field()).unwrap();
        assert!(d.norm(&g) <= 1e-6 * (1.0 + exact.xi.norm(&g)));
        assert!(exact.objective <= fast.objective + 1e-12 * (1.0 + fast.objective.abs()));
    }

    #[test]
    fn spectral_needs_assembled_gramian() {
        let l = leader(5, 2);
        let g = l.grid().clone();
        let opts = DualOptions {
            method: DualMethod::Spectral,
            backend: GramianBackend::MatrixFree,
            ..DualOptions::default()
        };
        assert!(l.solve_dual(&bump(&g), 0.1, &Field::zeros_slice(&g), &opts, None).is_err());
    }

    #[test]
    fn gramian_spectrum_is_consistent() {
        let l = leader(7, 4);
        let gram = l.gramian().unwrap();
        let w = l.grid().interior_weights();
        let ev = gram.eigenvalues();
        assert!(ev.windows(2).all(|p| p[0] >= p[1]) && ev.iter().all(|&v| v >= 0.0));
        // trace of W^-1/2 G W^-1/2
        let tr: f64 = (0..w.len()).map(|i| gram.matrix()[(i, i)] / w[i]).sum();
        assert!((tr - ev.iter().sum::<f64>()).abs() <= 1e-12 * tr);
    }

    #[test]
    fn cg_mode_requires_zero_alpha() {
        let l = leader(5, 2);
        let g = l.grid().clone();
        let opts = DualOptions {
            method: DualMethod::ConjugateGradient,
            ..DualOptions::default()
        };
        let t = bump(&g);
        assert!(l.solve_dual(&t, 0.1, &Field::zeros_slice(&g), &opts, None).is_err());
    }
}
