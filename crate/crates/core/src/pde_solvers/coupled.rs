//! Coupled forward-backward optimality systems
//!
//! ```text
//! dy/dt  = A y + f - (1/beta) chi2 p,   y(0) = 0
//! -dp/dt = A* p + (y - r),              p(T) = p_T
//! ```
//!
//! in the discrete form
//!
//! ```text
//! S_k y^k - y^{k-1} + (dt/beta) chi2 p^k = dt f^k
//! S*_k p^k - p^{k+1} - dt y^k            = -dt r^k,   p^{K+1} = p_T
//! ```
//!
//! The follower system `(y, p)`, the background `(y0, p0)`, the leader's
//! `(z, q)` and the dual `(theta, phi)` are all instances; only the data differ.

use std::sync::{Arc, OnceLock};
use std::time::Instant;

use log::debug;
use serde::{Deserialize, Serialize};

use super::banded::BandedLu;
use super::krylov::SolverReport;
use super::sparse::SparseMatrix;
use super::stepping::Propagator;
use crate::error::{Error, Result};
use crate::mesh::SubdomainMask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoupledMethod {
    /// Space-time KKT system, banded direct factorization.
    Monolithic,
    /// Damped fixed-point sweeps of forward and backward marches.
    Picard,
    /// Monolithic up to `monolithic_cutoff` unknowns, Picard above.
    Auto,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoupledOptions {
    pub method: CoupledMethod,
    /// Number of space-time unknowns `2 K n_interior` above which `Auto`
    /// switches to Picard.
    pub monolithic_cutoff: usize,
    /// Initial relaxation factor; halved whenever the change increases.
    pub damping: f64,
    /// Relative change between successive adjoint iterates.
    pub picard_tol: f64,
    pub picard_max_iter: usize,
}

impl Default for CoupledOptions {
    fn default() -> Self {
        CoupledOptions {
            method: CoupledMethod::Auto,
            monolithic_cutoff: 50_000,
            damping: 0.5,
            picard_tol: 1e-12,
            picard_max_iter: 500,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CoupledSolution {
    /// Flat interior states, slice-major.
    pub y: Vec<f64>,
    pub p: Vec<f64>,
    pub report: SolverReport,
    pub method: CoupledMethod,
}

/// The coupled operator for one propagator, `beta` and follower mask.
/// The KKT factorization is built on first use and reused afterwards.
#[derive(Debug)]
pub struct CoupledSystem {
    prop: Arc<Propagator>,
    beta: f64,
    chi2: Vec<f64>,
    options: CoupledOptions,
    kkt: OnceLock<std::result::Result<BandedLu, String>>,
}

fn wnorm(v: &[f64], w: &[f64]) -> f64 {
    let n = w.len();
    v.iter()
        .enumerate()
        .map(|(i, x)| w[i % n] * x * x)
        .sum::<f64>()
        .sqrt()
}

impl CoupledSystem {
    pub fn new(prop: Arc<Propagator>, beta: f64, follower_mask: &SubdomainMask, options: CoupledOptions) -> Result<Self> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::param("problem.beta", format!("must be positive, got {beta}")));
        }
        if !(options.damping > 0.0 && options.damping <= 1.0) {
            return Err(Error::param("solver.damping", "must lie in (0, 1]"));
        }
        let grid = prop.grid();
        if follower_mask.indicator().len() != grid.n_nodes() {
            return Err(Error::ShapeMismatch("follower mask does not match the grid".into()));
        }
        let chi2 = grid
            .interior_nodes()
            .iter()
            .map(|&node| if follower_mask.contains(node) { 1.0 } else { 0.0 })
            .collect();
        Ok(CoupledSystem {
            prop,
            beta,
            chi2,
            options,
            kkt: OnceLock::new(),
        })
    }

    pub fn propagator(&self) -> &Arc<Propagator> {
        &self.prop
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn options(&self) -> &CoupledOptions {
        &self.options
    }

    /// Interior indicator of the follower subdomain.
    pub fn chi2(&self) -> &[f64] {
        &self.chi2
    }

    pub fn n_unknowns(&self) -> usize {
        2 * self.prop.n_slices() * self.prop.n_interior()
    }

    pub fn resolved_method(&self) -> CoupledMethod {
        match self.options.method {
            CoupledMethod::Auto if self.n_unknowns() <= self.options.monolithic_cutoff => CoupledMethod::Monolithic,
            CoupledMethod::Auto => CoupledMethod::Picard,
            m => m,
        }
    }

    pub fn solve(&self, forcing: &[f64], tracking: &[f64], p_terminal: Option<&[f64]>) -> Result<CoupledSolution> {
        self.solve_with(self.resolved_method(), forcing, tracking, p_terminal)
    }

    pub fn solve_with(
        &self,
        method: CoupledMethod,
        forcing: &[f64],
        tracking: &[f64],
        p_terminal: Option<&[f64]>,
    ) -> Result<CoupledSolution> {
        let n = self.prop.n_interior();
        let len = n * self.prop.n_slices();
        if forcing.len() != len || tracking.len() != len || p_terminal.is_some_and(|t| t.len() != n) {
            return Err(Error::ShapeMismatch("coupled system data do not match the grid".into()));
        }
        match method {
            CoupledMethod::Monolithic => self.monolithic(forcing, tracking, p_terminal),
            CoupledMethod::Picard => self.picard(forcing, tracking, p_terminal),
            CoupledMethod::Auto => self.solve(forcing, tracking, p_terminal),
        }
    }

    /// Space-time KKT matrix, ordered `(y^1, p^1, y^2, p^2, ...)` so that it is
    /// banded with half-bandwidth `2 n_interior`.
    pub fn kkt_matrix(&self) -> Result<SparseMatrix> {
        let n = self.prop.n_interior();
        let k_steps = self.prop.n_slices();
        let dt = self.prop.grid().dt();
        let yi = |k: usize, i: usize| 2 * k * n + i;
        let pi = |k: usize, i: usize| (2 * k + 1) * n + i;
        let mut t = Vec::new();
        for k in 0..k_steps {
            let s = self.prop.step_matrix(k);
            let sa = self.prop.adjoint_step_matrix(k);
            for r in 0..n {
                for (c, v) in s.row(r) {
                    t.push((yi(k, r), yi(k, c), v));
                }
                if k > 0 {
                    t.push((yi(k, r), yi(k - 1, r), -1.0));
                }
                if self.chi2[r] != 0.0 {
                    t.push((yi(k, r), pi(k, r), dt / self.beta * self.chi2[r]));
                }
                for (c, v) in sa.row(r) {
                    t.push((pi(k, r), pi(k, c), v));
                }
                if k + 1 < k_steps {
                    t.push((pi(k, r), pi(k + 1, r), -1.0));
                }
                t.push((pi(k, r), yi(k, r), -dt));
            }
        }
        SparseMatrix::from_triplets(2 * n * k_steps, 2 * n * k_steps, t)
    }

    fn kkt_rhs(&self, forcing: &[f64], tracking: &[f64], p_terminal: Option<&[f64]>) -> Vec<f64> {
        let n = self.prop.n_interior();
        let k_steps = self.prop.n_slices();
        let dt = self.prop.grid().dt();
        let mut b = vec![0.0; 2 * n * k_steps];
        for k in 0..k_steps {
            for i in 0..n {
                b[2 * k * n + i] = dt * forcing[k * n + i];
                b[(2 * k + 1) * n + i] = -dt * tracking[k * n + i];
            }
        }
        if let Some(term) = p_terminal {
            let off = (2 * k_steps - 1) * n;
            for i in 0..n {
                b[off + i] += term[i];
            }
        }
        b
    }

    fn monolithic(&self, forcing: &[f64], tracking: &[f64], p_terminal: Option<&[f64]>) -> Result<CoupledSolution> {
        let start = Instant::now();
        let lu = self
            .kkt
            .get_or_init(|| {
                let t0 = Instant::now();
                let out = self
                    .kkt_matrix()
                    .and_then(|m| BandedLu::factor(&m))
                    .map_err(|e| e.to_string());
                debug!(
                    "factored space-time system with {} unknowns in {:.2}s",
                    self.n_unknowns(),
                    t0.elapsed().as_secs_f64()
                );
                out
            })
            .as_ref()
            .map_err(|msg| Error::Singular(msg.clone()))?;
        let mut x = self.kkt_rhs(forcing, tracking, p_terminal);
        lu.solve_in_place(&mut x);
        let n = self.prop.n_interior();
        let k_steps = self.prop.n_slices();
        let mut y = Vec::with_capacity(n * k_steps);
        let mut p = Vec::with_capacity(n * k_steps);
        for k in 0..k_steps {
            y.extend_from_slice(&x[2 * k * n..(2 * k + 1) * n]);
            p.extend_from_slice(&x[(2 * k + 1) * n..(2 * k + 2) * n]);
        }
        Ok(CoupledSolution {
            y,
            p,
            report: SolverReport {
                iterations: 1,
                residual: 0.0,
                converged: true,
                wall_time: start.elapsed().as_secs_f64(),
            },
            method: CoupledMethod::Monolithic,
        })
    }

    /// `y = forward(f - chi2 p / beta)`
    pub fn state_from_adjoint(&self, forcing: &[f64], p: &[f64]) -> Result<Vec<f64>> {
        let n = self.prop.n_interior();
        let src: Vec<f64> = forcing
            .iter()
            .zip(p)
            .enumerate()
            .map(|(idx, (f, q))| f - self.chi2[idx % n] * q / self.beta)
            .collect();
        Ok(self.prop.forward(&src, &vec![0.0; n])?.0)
    }

    /// `p = backward(y - r, p_T)`
    pub fn adjoint_from_state(&self, y: &[f64], tracking: &[f64], p_terminal: Option<&[f64]>) -> Result<Vec<f64>> {
        let n = self.prop.n_interior();
        let src: Vec<f64> = y.iter().zip(tracking).map(|(a, b)| a - b).collect();
        let zero = vec![0.0; n];
        Ok(self.prop.backward(&src, p_terminal.unwrap_or(&zero))?.0)
    }

    fn picard(&self, forcing: &[f64], tracking: &[f64], p_terminal: Option<&[f64]>) -> Result<CoupledSolution> {
        let start = Instant::now();
        let w = self.prop.interior_weights();
        let opts = &self.options;
        let mut p = vec![0.0; forcing.len()];
        let mut omega = opts.damping;
        let mut last = f64::INFINITY;
        let mut change = f64::INFINITY;
        let mut iterations = 0;
        while iterations < opts.picard_max_iter {
            iterations += 1;
            let y = self.state_from_adjoint(forcing, &p)?;
            let p_new = self.adjoint_from_state(&y, tracking, p_terminal)?;
            let diff: Vec<f64> = p_new.iter().zip(&p).map(|(a, b)| a - b).collect();
            let scale = wnorm(&p_new, w);
            change = if scale == 0.0 { wnorm(&diff, w) } else { wnorm(&diff, w) / scale };
            if !change.is_finite() {
                return Err(Error::BlowUp(format!("Picard iterate became non-finite at sweep {iterations}")));
            }
            if change > last {
                omega *= 0.5;
            }
            last = change;
            for (q, d) in p.iter_mut().zip(&diff) {
                *q += omega * d;
            }
            if change <= opts.picard_tol {
                break;
            }
        }
        if change > opts.picard_tol {
            return Err(Error::FixedPoint {
                iterations,
                residual: change,
            });
        }
        let y = self.state_from_adjoint(forcing, &p)?;
        debug!("Picard converged in {iterations} sweeps (change {change:.2e}, omega {omega})");
        Ok(CoupledSolution {
            y,
            p,
            report: SolverReport {
                iterations,
                residual: change,
                converged: true,
                wall_time: start.elapsed().as_secs_f64(),
            },
            method: CoupledMethod::Picard,
        })
    }

    /// Relative residual of both discrete equations at `(y, p)`.
    pub fn residual(&self, sol: &CoupledSolution, forcing: &[f64], tracking: &[f64], p_terminal: Option<&[f64]>) -> Result<f64> {
        let m = self.kkt_matrix()?;
        let b = self.kkt_rhs(forcing, tracking, p_terminal);
        let n = self.prop.n_interior();
        let mut x = Vec::with_capacity(b.len());
        for k in 0..self.prop.n_slices() {
            x.extend_from_slice(&sol.y[k * n..(k + 1) * n]);
            x.extend_from_slice(&sol.p[k * n..(k + 1) * n]);
        }
        let r = m.matvec(&x);
        let num: f64 = r.iter().zip(&b).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(if den == 0.0 { num } else { num / den })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{make_mask, BoxRegion, Grid, GridConfig, MaskLabel};
    use crate::operator::CoefficientSet;
    use crate::pde_solvers::StepSolve;
    use std::collections::BTreeMap;

    fn setup(points: usize, steps: usize, beta: f64) -> CoupledSystem {
        let g = Grid::new(GridConfig::uniform(2, 1, points, -1.0, 1.0, steps, 1.0)).unwrap();
        let c = CoefficientSet::from_registry("kolmogorov", 2, 1, &BTreeMap::new()).unwrap();
        let prop = Arc::new(Propagator::new(&g, &c, StepSolve::Direct).unwrap());
        let u2 = make_mask(
            &g,
            &BoxRegion {
                lower: vec![0.2, -0.8],
                upper: vec![0.8, 0.8],
            },
            MaskLabel::U2,
        )
        .unwrap();
        CoupledSystem::new(prop, beta, &u2, CoupledOptions::default()).unwrap()
    }

    fn data(len: usize, seed: f64) -> Vec<f64> {
        (0..len).map(|i| ((i as f64 + 1.0) * seed).sin()).collect()
    }

    #[test]
    fn homogeneous_system_has_zero_solution() {
        let sys = setup(7, 4, 1.0);
        let len = sys.n_unknowns() / 2;
        for m in [CoupledMethod::Monolithic, CoupledMethod::Picard] {
            let sol = sys.solve_with(m, &vec![0.0; len], &vec![0.0; len], None).unwrap();
            assert!(sol.y.iter().chain(&sol.p).all(|v| *v == 0.0));
        }
    }

    #[test]
    fn monolithic_and_picard_agree() {
        let sys = setup(7, 8, 1.0);
        let len = sys.n_unknowns() / 2;
        let n = sys.propagator().n_interior();
        let (f, r, term) = (data(len, 0.37), data(len, 1.3), data(n, 0.71));
        let a = sys.solve_with(CoupledMethod::Monolithic, &f, &r, Some(&term)).unwrap();
        let b = sys.solve_with(CoupledMethod::Picard, &f, &r, Some(&term)).unwrap();
        for (x, y) in a.y.iter().zip(&b.y).chain(a.p.iter().zip(&b.p)) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
        assert!(sys.residual(&a, &f, &r, Some(&term)).unwrap() < 1e-13);
    }

    #[test]
    fn huge_beta_decouples() {
        let sys = setup(7, 4, 1e12);
        let len = sys.n_unknowns() / 2;
        let n = sys.propagator().n_interior();
        let f = data(len, 0.5);
        let sol = sys.solve(&f, &vec![0.0; len], None).unwrap();
        let (plain, _) = sys.propagator().forward(&f, &vec![0.0; n]).unwrap();
        for (a, b) in sol.y.iter().zip(&plain) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn rejects_nonpositive_beta() {
        let sys = setup(5, 2, 1.0);
        let g = sys.propagator().grid().clone();
        let mask = make_mask(
            &g,
            &BoxRegion {
                lower: vec![-1.0, -1.0],
                upper: vec![1.0, 1.0],
            },
            MaskLabel::U2,
        )
        .unwrap();
        assert!(CoupledSystem::new(sys.propagator().clone(), 0.0, &mask, CoupledOptions::default()).is_err());
        assert!(CoupledSystem::new(sys.propagator().clone(), -1.0, &mask, CoupledOptions::default()).is_err());
    }
}
