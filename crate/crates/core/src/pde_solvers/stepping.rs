//! Implicit Euler marching.
//!
//! Forward: `S_k y^k = y^{k-1} + dt s^k` with `S_k = I - dt A(t_k)`.
//! Backward: `S*_k p^k = p^{k+1} + dt g^k` with `S*_k = W^{-1} S_k^T W` and
//! `p^{K+1}` the terminal data. With these two recursions
//!
//! ```text
//! sum_k dt (g^k, y^k) + (xi, y^K) = sum_k dt (p^k, s^k)      (y^0 = 0)
//! ```
//!
//! holds exactly, which is what every duality identity downstream relies on.
//! Vectors here are interior-only and space-time vectors are flat,
//! slice-major (`K * n_interior`).

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::banded::BandedLu;
use super::krylov::{linear_solve, SolverReport};
use super::sparse::SparseMatrix;
use crate::error::{Error, Result};
use crate::mesh::{Field, FieldKind, Grid};
use crate::operator::{assemble_generator, CoefficientSet, DiscreteOperator};

/// How each step system is solved.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSolve {
    /// Banded LU, factored once per distinct step matrix.
    Direct,
    /// Jacobi-preconditioned BiCGStab.
    Iterative { tol: f64, max_iter: usize },
}

impl Default for StepSolve {
    fn default() -> Self {
        StepSolve::Direct
    }
}

#[derive(Debug)]
struct Step {
    generator: DiscreteOperator,
    matrix: SparseMatrix,
    adjoint: SparseMatrix,
    lu: Option<BandedLu>,
    lu_t: Option<BandedLu>,
}

/// Step matrices for one grid and coefficient set, shared by all marches.
#[derive(Debug)]
pub struct Propagator {
    grid: Grid,
    steps: Vec<Arc<Step>>,
    weights: Vec<f64>,
    solve: StepSolve,
}

fn merge(total: &mut SolverReport, r: &SolverReport) {
    total.iterations += r.iterations;
    total.residual = total.residual.max(r.residual);
    total.converged &= r.converged;
}

impl Propagator {
    /// Assembles the generator at every slice time when the coefficients are
    /// time dependent, once otherwise.
    pub fn new(grid: &Grid, coeffs: &CoefficientSet, solve: StepSolve) -> Result<Self> {
        let k_steps = grid.n_time_steps();
        let weights = grid.interior_weights();
        let build = |t: f64| -> Result<Arc<Step>> {
            let generator = assemble_generator(grid, coeffs, t)?;
            let matrix = generator.matrix().shifted(-grid.dt(), 1.0)?;
            let inv: Vec<f64> = weights.iter().map(|w| 1.0 / w).collect();
            let adjoint = matrix.transpose().scale_rows_cols(&inv, &weights);
            let (lu, lu_t) = match solve {
                StepSolve::Direct => (
                    Some(BandedLu::factor(&matrix)?),
                    Some(BandedLu::factor(&matrix.transpose())?),
                ),
                StepSolve::Iterative { .. } => (None, None),
            };
            Ok(Arc::new(Step {
                generator,
                matrix,
                adjoint,
                lu,
                lu_t,
            }))
        };
        let steps = if coeffs.is_time_dependent() {
            (0..k_steps).map(|k| build(grid.slice_time(k))).collect::<Result<Vec<_>>>()?
        } else {
            let s = build(grid.slice_time(0))?;
            vec![s; k_steps]
        };
        Ok(Propagator {
            grid: grid.clone(),
            steps,
            weights,
            solve,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n_interior(&self) -> usize {
        self.weights.len()
    }

    pub fn n_slices(&self) -> usize {
        self.steps.len()
    }

    pub fn interior_weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn step_solve(&self) -> StepSolve {
        self.solve
    }

    pub fn generator(&self, k: usize) -> &DiscreteOperator {
        &self.steps[k].generator
    }

    /// `S_k = I - dt A(t_k)` over interior nodes.
    pub fn step_matrix(&self, k: usize) -> &SparseMatrix {
        &self.steps[k].matrix
    }

    /// `S*_k = W^{-1} S_k^T W`.
    pub fn adjoint_step_matrix(&self, k: usize) -> &SparseMatrix {
        &self.steps[k].adjoint
    }

    /// Solves `S_k x = rhs` in place.
    pub fn solve_step(&self, k: usize, rhs: &mut [f64]) -> Result<SolverReport> {
        let step = &self.steps[k];
        match self.solve {
            StepSolve::Direct => {
                step.lu.as_ref().expect("direct step without factorization").solve_in_place(rhs);
                Ok(SolverReport::exact())
            }
            StepSolve::Iterative { tol, max_iter } => {
                let (x, report) = linear_solve(&step.matrix, rhs, tol, max_iter)?;
                if !report.converged {
                    return Err(Error::LinearSolve(report));
                }
                rhs.copy_from_slice(&x);
                Ok(report)
            }
        }
    }

    /// Solves `S*_k x = rhs` in place.
    pub fn solve_adjoint_step(&self, k: usize, rhs: &mut [f64]) -> Result<SolverReport> {
        let step = &self.steps[k];
        match self.solve {
            StepSolve::Direct => {
                // S* x = b  <=>  S^T (W x) = W b
                for (v, w) in rhs.iter_mut().zip(&self.weights) {
                    *v *= w;
                }
                step.lu_t.as_ref().expect("direct step without factorization").solve_in_place(rhs);
                for (v, w) in rhs.iter_mut().zip(&self.weights) {
                    *v /= w;
                }
                Ok(SolverReport::exact())
            }
            StepSolve::Iterative { tol, max_iter } => {
                let (x, report) = linear_solve(&step.adjoint, rhs, tol, max_iter)?;
                if !report.converged {
                    return Err(Error::LinearSolve(report));
                }
                rhs.copy_from_slice(&x);
                Ok(report)
            }
        }
    }

    fn check_len(&self, what: &str, v: &[f64], expected: usize) -> Result<()> {
        if v.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "{what} has length {}, expected {expected}",
                v.len()
            )));
        }
        Ok(())
    }

    /// Forward march from `initial` (interior values at `t = 0`).
    pub fn forward(&self, source: &[f64], initial: &[f64]) -> Result<(Vec<f64>, SolverReport)> {
        let n = self.n_interior();
        let k_steps = self.n_slices();
        self.check_len("source", source, n * k_steps)?;
        self.check_len("initial state", initial, n)?;
        let start = Instant::now();
        let dt = self.grid.dt();
        let mut out = vec![0.0; n * k_steps];
        let mut total = SolverReport::exact();
        for k in 0..k_steps {
            let (done, rest) = out.split_at_mut(k * n);
            let prev = if k == 0 { initial } else { &done[(k - 1) * n..] };
            let cur = &mut rest[..n];
            for i in 0..n {
                cur[i] = prev[i] + dt * source[k * n + i];
            }
            let r = self.solve_step(k, cur)?;
            merge(&mut total, &r);
        }
        total.wall_time = start.elapsed().as_secs_f64();
        Ok((out, total))
    }

    /// Backward march from `terminal` (the layer after the last slice).
    pub fn backward(&self, source: &[f64], terminal: &[f64]) -> Result<(Vec<f64>, SolverReport)> {
        let n = self.n_interior();
        let k_steps = self.n_slices();
        self.check_len("source", source, n * k_steps)?;
        self.check_len("terminal state", terminal, n)?;
        let start = Instant::now();
        let dt = self.grid.dt();
        let mut out = vec![0.0; n * k_steps];
        let mut total = SolverReport::exact();
        for k in (0..k_steps).rev() {
            let (head, tail) = out.split_at_mut((k + 1) * n);
            let next = if k + 1 == k_steps { terminal } else { &tail[..n] };
            let cur = &mut head[k * n..];
            for i in 0..n {
                cur[i] = next[i] + dt * source[k * n + i];
            }
            let r = self.solve_adjoint_step(k, cur)?;
            merge(&mut total, &r);
        }
        total.wall_time = start.elapsed().as_secs_f64();
        Ok((out, total))
    }

    /// Backward value march `-dv/dt = A v`, `v(T) = terminal`, returning `v(0)`.
    ///
    /// This is the Kolmogorov backward equation of the diffusion, driven by the
    /// generator itself rather than its adjoint.
    pub fn value_at_start(&self, terminal: &[f64]) -> Result<Vec<f64>> {
        self.check_len("terminal state", terminal, self.n_interior())?;
        let mut v = terminal.to_vec();
        for k in (0..self.n_slices()).rev() {
            self.solve_step(k, &mut v)?;
        }
        Ok(v)
    }
}

/// Interior values of every slice of a space-time field, flattened.
pub fn interior_spacetime(grid: &Grid, field: &Field) -> Result<Vec<f64>> {
    if field.kind() != FieldKind::SpaceTime || field.n_nodes() != grid.n_nodes() || field.n_slices() != grid.n_time_steps()
    {
        return Err(Error::ShapeMismatch("expected a space-time field on this grid".into()));
    }
    let mut out = Vec::with_capacity(grid.n_interior() * grid.n_time_steps());
    for k in 0..grid.n_time_steps() {
        out.extend(grid.restrict(field.slice(k)));
    }
    Ok(out)
}

/// Interior values of a slice field.
pub fn interior_slice(grid: &Grid, field: &Field) -> Result<Vec<f64>> {
    if field.kind() != FieldKind::Slice || field.n_nodes() != grid.n_nodes() {
        return Err(Error::ShapeMismatch("expected a slice field on this grid".into()));
    }
    Ok(grid.restrict(field.values()))
}

/// Space-time field from flat interior values (zero on the boundary).
pub fn spacetime_from_interior(grid: &Grid, flat: &[f64]) -> Result<Field> {
    let n = grid.n_interior();
    if flat.len() != n * grid.n_time_steps() {
        return Err(Error::ShapeMismatch(format!(
            "flat space-time vector has length {}, expected {}",
            flat.len(),
            n * grid.n_time_steps()
        )));
    }
    let mut values = Vec::with_capacity(grid.n_nodes() * grid.n_time_steps());
    for chunk in flat.chunks(n) {
        values.extend(grid.extend(chunk));
    }
    Field::from_values(grid, FieldKind::SpaceTime, values)
}

pub fn slice_from_interior(grid: &Grid, v: &[f64]) -> Result<Field> {
    Field::from_values(grid, FieldKind::Slice, grid.extend(v))
}

fn require_zero_boundary(grid: &Grid, field: &Field, key: &str) -> Result<()> {
    if !field.vanishes_on_boundary(grid) {
        return Err(Error::param(key, "must vanish on the boundary"));
    }
    Ok(())
}

/// Implicit Euler solution of `dy/dt = A y + source`, zero on the boundary.
pub fn solve_forward(grid: &Grid, coeffs: &CoefficientSet, source: &Field, initial: &Field) -> Result<Field> {
    let prop = Propagator::new(grid, coeffs, StepSolve::Direct)?;
    forward_field(&prop, source, initial)
}

/// Implicit Euler solution of `-dp/dt = A* p + source`, `p(T) = terminal`.
pub fn solve_backward(grid: &Grid, coeffs: &CoefficientSet, source: &Field, terminal: &Field) -> Result<Field> {
    let prop = Propagator::new(grid, coeffs, StepSolve::Direct)?;
    backward_field(&prop, source, terminal)
}

pub fn forward_field(prop: &Propagator, source: &Field, initial: &Field) -> Result<Field> {
    let grid = prop.grid();
    require_zero_boundary(grid, initial, "initial")?;
    let (y, _) = prop.forward(&interior_spacetime(grid, source)?, &interior_slice(grid, initial)?)?;
    spacetime_from_interior(grid, &y)
}

pub fn backward_field(prop: &Propagator, source: &Field, terminal: &Field) -> Result<Field> {
    let grid = prop.grid();
    require_zero_boundary(grid, terminal, "terminal")?;
    let (p, _) = prop.backward(&interior_spacetime(grid, source)?, &interior_slice(grid, terminal)?)?;
    spacetime_from_interior(grid, &p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{inner_product, GridConfig};
    use nalgebra::DVector;
    use std::collections::BTreeMap;

    fn kolmogorov(n: usize) -> CoefficientSet {
        CoefficientSet::from_registry("kolmogorov", n, 1, &BTreeMap::new()).unwrap()
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let g = Grid::new(GridConfig::uniform(2, 1, 7, -1.0, 1.0, 5, 1.0)).unwrap();
        let c = kolmogorov(2);
        let y = solve_forward(&g, &c, &Field::zeros_spacetime(&g), &Field::zeros_slice(&g)).unwrap();
        assert!(y.is_zero());
        let p = solve_backward(&g, &c, &Field::zeros_spacetime(&g), &Field::zeros_slice(&g)).unwrap();
        assert!(p.is_zero());
    }

    #[test]
    fn one_step_matches_dense_solves() {
        let g = Grid::new(GridConfig::uniform(2, 1, 5, -1.0, 1.0, 1, 0.25)).unwrap();
        let c = kolmogorov(2);
        let prop = Propagator::new(&g, &c, StepSolve::Direct).unwrap();
        let dense = prop.step_matrix(0).to_dense();
        let n = g.n_interior();
        let src: Vec<f64> = (0..n).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect();
        let (y, _) = prop.forward(&src, &vec![0.0; n]).unwrap();
        let rhs = DVector::from_iterator(n, src.iter().map(|s| g.dt() * s));
        let oracle = dense.clone().lu().solve(&rhs).unwrap();
        for i in 0..n {
            assert!((y[i] - oracle[i]).abs() < 1e-14);
        }
        let xi: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let (p, _) = prop.backward(&vec![0.0; n], &xi).unwrap();
        let w = DVector::from_vec(g.interior_weights());
        let wxi = w.component_mul(&DVector::from_vec(xi));
        let oracle = dense.transpose().lu().solve(&wxi).unwrap().component_div(&w);
        for i in 0..n {
            assert!((p[i] - oracle[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn iterative_steps_agree_with_direct() {
        let g = Grid::new(GridConfig::uniform(2, 1, 9, -1.0, 1.0, 4, 1.0)).unwrap();
        let c = kolmogorov(2);
        let direct = Propagator::new(&g, &c, StepSolve::Direct).unwrap();
        let iter = Propagator::new(&g, &c, StepSolve::Iterative { tol: 1e-13, max_iter: 500 }).unwrap();
        let n = g.n_interior();
        let src: Vec<f64> = (0..4 * n).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
        let (a, _) = direct.forward(&src, &vec![0.0; n]).unwrap();
        let (b, rep) = iter.forward(&src, &vec![0.0; n]).unwrap();
        assert!(rep.converged);
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10 * scale);
        }
    }

    #[test]
    fn summation_by_parts_identity() {
        let g = Grid::new(GridConfig::uniform(2, 1, 9, -1.0, 1.0, 6, 1.0)).unwrap();
        let c = CoefficientSet::from_registry("rotation", 2, 1, &BTreeMap::new()).unwrap();
        let prop = Propagator::new(&g, &c, StepSolve::Direct).unwrap();
        let s = Field::spacetime_from_fn(&g, |t, x| (1.0 - x[0] * x[0]) * (1.0 - x[1] * x[1]) * (t + x[0]));
        let src = Field::spacetime_from_fn(&g, |t, x| (1.0 - x[0] * x[0]) * (1.0 - x[1] * x[1]) * (x[1] - t).cos());
        let mut xi = Field::from_fn(&g, |x| (2.0 * x[0]).sin() + x[1]);
        xi.zero_boundary(&g);
        let y = forward_field(&prop, &s, &Field::zeros_slice(&g)).unwrap();
        let p = backward_field(&prop, &src, &xi).unwrap();
        let lhs = inner_product(&src, &y, &g).unwrap() + inner_product(&xi, &y.terminal(), &g).unwrap();
        let rhs = inner_product(&p, &s, &g).unwrap();
        assert!((lhs - rhs).abs() < 1e-13 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn recovers_eigenmode_decay() {
        let g = Grid::new(GridConfig::uniform(2, 1, 17, -1.0, 1.0, 8, 0.5)).unwrap();
        let c = CoefficientSet::from_registry("constant", 2, 1, &BTreeMap::new()).unwrap();
        let h = g.spacing()[0];
        let k = std::f64::consts::FRAC_PI_2;
        // 1/2 d^2/dx1^2 only: mu_h = 1/2 * (2 cos(k h) - 2) / h^2
        let mu = 0.5 * (2.0 * (k * h).cos() - 2.0) / (h * h);
        let mut init = Field::from_fn(&g, |x| (k * (x[0] + 1.0)).sin() * (k * (x[1] + 1.0)).sin());
        init.zero_boundary(&g);
        let y = solve_forward(&g, &c, &Field::zeros_spacetime(&g), &init).unwrap();
        let factor = 1.0 / (1.0 - g.dt() * mu);
        let mut expected = init.values().to_vec();
        for step in 0..g.n_time_steps() {
            expected.iter_mut().for_each(|v| *v *= factor);
            for (a, b) in y.slice(step).iter().zip(&expected) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nonzero_boundary_initial_rejected() {
        let g = Grid::new(GridConfig::uniform(2, 1, 5, -1.0, 1.0, 2, 1.0)).unwrap();
        let c = kolmogorov(2);
        let one = Field::from_fn(&g, |_| 1.0);
        assert!(solve_forward(&g, &c, &Field::zeros_spacetime(&g), &one).is_err());
    }
}
