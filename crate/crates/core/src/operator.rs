//! Discrete generator of the degenerate diffusion chain and its adjoint.
//!
//! The generator acts as
//!
//! ```text
//! (A y)(x) = 1/2 tr(a D^2_{x^1} y) + f_1 . D_{x^1} y + sum_{j>=2} f_j . D_{x^j} y
//! ```
//!
//! with centered second differences on the diffused block `x^1` and
//! first-order upwind differences for every drift component (forward
//! difference where the drift is positive, backward where it is negative).
//! With diagonal diffusion this makes `A` a Markov-chain generator:
//! nonnegative off-diagonals and nonpositive row sums.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Field, FieldKind, Grid};
use crate::pde_solvers::SparseMatrix;

pub type MatrixFn = Arc<dyn Fn(f64, &[f64]) -> DMatrix<f64> + Send + Sync>;
/// Drift of one block. `f_1` receives the full state; `f_j` for `j >= 2`
/// receives only `(x^{j-1}, ..., x^n)`.
pub type DriftFn = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;

/// Coefficients `sigma, f_1, ..., f_n` of the diffusion chain.
#[derive(Clone)]
pub struct CoefficientSet {
    name: String,
    n: usize,
    d: usize,
    noise_dim: usize,
    sigma: MatrixFn,
    drifts: Vec<DriftFn>,
    lambda: f64,
    time_dependent: bool,
}

impl fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("d", &self.d)
            .field("noise_dim", &self.noise_dim)
            .field("lambda", &self.lambda)
            .field("time_dependent", &self.time_dependent)
            .finish()
    }
}

impl CoefficientSet {
    /// `sigma` returns a `d x noise_dim` matrix; `drifts` holds `f_1..f_n`.
    /// `lambda` is the required lower bound on the spectrum of `sigma sigma^T`.
    pub fn new(
        name: impl Into<String>,
        n: usize,
        d: usize,
        noise_dim: usize,
        sigma: MatrixFn,
        drifts: Vec<DriftFn>,
        lambda: f64,
    ) -> Result<Self> {
        if n < 2 || d == 0 || noise_dim == 0 {
            return Err(Error::InvalidCoefficients(format!(
                "need n >= 2, d >= 1, m >= 1 (got n={n}, d={d}, m={noise_dim})"
            )));
        }
        if drifts.len() != n {
            return Err(Error::InvalidCoefficients(format!(
                "expected {n} drift blocks, got {}",
                drifts.len()
            )));
        }
        Ok(CoefficientSet {
            name: name.into(),
            n,
            d,
            noise_dim,
            sigma,
            drifts,
            lambda,
            time_dependent: false,
        })
    }

    pub fn with_time_dependence(mut self, yes: bool) -> Self {
        self.time_dependent = yes;
        self
    }

    /// Built-in coefficient families.
    ///
    /// * `kolmogorov`: `sigma I`, `f_1 = -damping x^1`, `f_j = coupling x^{j-1}`
    /// * `constant`: `sigma I`, `f_j = drift_j` (componentwise constant)
    /// * `rotation`: `sigma I`, `f_1 = -omega x^2`, `f_j = omega x^{j-1}`
    /// * `oscillating`: kolmogorov with `coupling (1 + amplitude sin(2 pi frequency t))`
    pub fn from_registry(name: &str, n: usize, d: usize, params: &BTreeMap<String, f64>) -> Result<Self> {
        let get = |key: &str, default: f64| params.get(key).copied().unwrap_or(default);
        let known: &[&str] = match name {
            "kolmogorov" => &["sigma", "coupling", "damping", "lambda"],
            "constant" => &["sigma", "lambda", "drift_1", "drift_2", "drift_3", "drift_4", "drift_5", "drift_6"],
            "rotation" => &["sigma", "omega", "lambda"],
            "oscillating" => &["sigma", "coupling", "amplitude", "frequency", "lambda"],
            other => {
                return Err(Error::param(
                    "coefficients.name",
                    format!("unknown coefficient family `{other}` (known: kolmogorov, constant, rotation, oscillating)"),
                ))
            }
        };
        if let Some(bad) = params.keys().find(|k| !known.contains(&k.as_str())) {
            return Err(Error::param(
                &format!("coefficients.params.{bad}"),
                format!("not a parameter of `{name}`"),
            ));
        }
        let sigma = get("sigma", 1.0);
        if !sigma.is_finite() {
            return Err(Error::param("coefficients.params.sigma", "must be finite"));
        }
        let lambda = get("lambda", 0.5 * sigma * sigma);
        let sigma_fn: MatrixFn = Arc::new(move |_, _| DMatrix::identity(d, d) * sigma);
        let block = move |xs: &[f64], scale: f64| -> Vec<f64> { xs[..d].iter().map(|v| scale * v).collect() };

        let mut drifts: Vec<DriftFn> = Vec::with_capacity(n);
        let mut time_dependent = false;
        match name {
            "kolmogorov" => {
                let coupling = get("coupling", 1.0);
                let damping = get("damping", 0.0);
                drifts.push(Arc::new(move |_, x| block(x, -damping)));
                for _ in 2..=n {
                    drifts.push(Arc::new(move |_, xs| block(xs, coupling)));
                }
            }
            "constant" => {
                for j in 1..=n {
                    let c = get(&format!("drift_{j}"), 0.0);
                    drifts.push(Arc::new(move |_, _| vec![c; d]));
                }
            }
            "rotation" => {
                let omega = get("omega", 1.0);
                drifts.push(Arc::new(move |_, x| x[d..2 * d].iter().map(|v| -omega * v).collect()));
                for _ in 2..=n {
                    drifts.push(Arc::new(move |_, xs| block(xs, omega)));
                }
            }
            "oscillating" => {
                let coupling = get("coupling", 1.0);
                let amplitude = get("amplitude", 0.5);
                let frequency = get("frequency", 1.0);
                time_dependent = true;
                drifts.push(Arc::new(move |_, _| vec![0.0; d]));
                for _ in 2..=n {
                    drifts.push(Arc::new(move |t, xs| {
                        let c = coupling * (1.0 + amplitude * (2.0 * std::f64::consts::PI * frequency * t).sin());
                        block(xs, c)
                    }));
                }
            }
            _ => unreachable!(),
        }
        Ok(CoefficientSet::new(name, n, d, d, sigma_fn, drifts, lambda)?.with_time_dependence(time_dependent))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_subsystems(&self) -> usize {
        self.n
    }

    pub fn d_per_subsystem(&self) -> usize {
        self.d
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn is_time_dependent(&self) -> bool {
        self.time_dependent
    }

    pub fn sigma(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        (self.sigma)(t, x)
    }

    /// `a = sigma sigma^T`
    pub fn diffusion(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        let s = self.sigma(t, x);
        &s * s.transpose()
    }

    /// Drift of block `j` (1-based), evaluated with the chain's argument restriction.
    pub fn drift(&self, j: usize, t: f64, x: &[f64]) -> Vec<f64> {
        if j == 1 {
            (self.drifts[0])(t, x)
        } else {
            (self.drifts[j - 1])(t, &x[(j - 2) * self.d..])
        }
    }

    /// Full drift vector `F = [f_1, ..., f_n]`.
    pub fn full_drift(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n * self.d);
        for j in 1..=self.n {
            out.extend(self.drift(j, t, x));
        }
        out
    }

    fn check_dims(&self, grid: &Grid) -> Result<()> {
        if grid.n_subsystems() != self.n || grid.d_per_subsystem() != self.d {
            return Err(Error::ShapeMismatch(format!(
                "coefficients are for n={}, d={} but the grid has n={}, d={}",
                self.n,
                self.d,
                grid.n_subsystems(),
                grid.d_per_subsystem()
            )));
        }
        Ok(())
    }
}

/// Samples the chain structure: perturbing coordinates that `f_j` must not
/// read leaves it unchanged.
pub fn check_chain_structure(coeffs: &CoefficientSet, grid: &Grid, samples: usize, seed: u64) -> bool {
    let d = coeffs.d;
    let dim = coeffs.n * d;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..samples {
        let x: Vec<f64> = (0..dim)
            .map(|a| rng.random_range(grid.lower()[a]..grid.upper()[a]))
            .collect();
        let t = rng.random_range(0.0..grid.horizon());
        for j in 2..=coeffs.n {
            let base = coeffs.drift(j, t, &x);
            let mut y = x.clone();
            for v in y.iter_mut().take((j - 2) * d) {
                *v += rng.random_range(-1.0..1.0);
            }
            if coeffs.drift(j, t, &y) != base {
                return false;
            }
        }
    }
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Convention {
    Generator,
    Adjoint,
}

/// Operator over interior unknowns (Dirichlet data eliminated).
#[derive(Clone, Debug)]
pub struct DiscreteOperator {
    matrix: SparseMatrix,
    /// Full stencil with columns over all grid nodes, kept for the generator
    /// so it can be applied to fields with nonzero boundary data.
    stencil: Option<SparseMatrix>,
    time: f64,
    convention: Convention,
}

impl DiscreteOperator {
    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn convention(&self) -> Convention {
        self.convention
    }

    /// Applies the operator to a slice field. Boundary values are read
    /// through the stencil when available; the result is zero on the boundary.
    pub fn apply(&self, grid: &Grid, y: &Field) -> Result<Field> {
        if y.kind() != FieldKind::Slice || y.n_nodes() != grid.n_nodes() {
            return Err(Error::ShapeMismatch("operator applies to slice fields on its grid".into()));
        }
        let interior_out = match &self.stencil {
            Some(full) => full.matvec(y.values()),
            None => self.matrix.matvec(&grid.restrict(y.values())),
        };
        Field::from_values(grid, FieldKind::Slice, grid.extend(&interior_out))
    }
}

/// Assembles the generator at time `t`.
pub fn assemble_generator(grid: &Grid, coeffs: &CoefficientSet, t: f64) -> Result<DiscreteOperator> {
    coeffs.check_dims(grid)?;
    if !(coeffs.lambda > 0.0) {
        return Err(Error::InvalidCoefficients(format!(
            "ellipticity bound lambda must be positive, got {}",
            coeffs.lambda
        )));
    }
    let dim = grid.dim();
    let d = coeffs.d;
    let h = grid.spacing().to_vec();
    let strides = grid.strides().to_vec();

    let rows: Vec<Result<Vec<(usize, f64)>>> = grid
        .interior_nodes()
        .par_iter()
        .map(|&node| {
            let x = grid.coords(node);
            let a = coeffs.diffusion(t, &x);
            let f = coeffs.full_drift(t, &x);
            if a.iter().chain(f.iter()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidCoefficients(format!("non-finite coefficient at x = {x:?}, t = {t}")));
            }
            let least = if d == 1 {
                a[(0, 0)]
            } else {
                SymmetricEigen::new(a.clone()).eigenvalues.min()
            };
            if least < coeffs.lambda {
                return Err(Error::InvalidCoefficients(format!(
                    "least eigenvalue {least:.3e} of a(t, x) below lambda = {:.3e} at x = {x:?}",
                    coeffs.lambda
                )));
            }
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(1 + 2 * dim + 2 * d * d);
            let mut center = 0.0;
            for p in 0..d {
                let c = 0.5 * a[(p, p)] / (h[p] * h[p]);
                row.push((node + strides[p], c));
                row.push((node - strides[p], c));
                center -= 2.0 * c;
                for q in (p + 1)..d {
                    let c = 0.5 * (a[(p, q)] + a[(q, p)]) / (4.0 * h[p] * h[q]);
                    if c != 0.0 {
                        row.push((node + strides[p] + strides[q], c));
                        row.push((node - strides[p] - strides[q], c));
                        row.push((node + strides[p] - strides[q], -c));
                        row.push((node - strides[p] + strides[q], -c));
                    }
                }
            }
            for axis in 0..dim {
                let v = f[axis];
                if v > 0.0 {
                    row.push((node + strides[axis], v / h[axis]));
                    center -= v / h[axis];
                } else if v < 0.0 {
                    row.push((node - strides[axis], -v / h[axis]));
                    center += v / h[axis];
                }
            }
            row.push((node, center));
            Ok(row)
        })
        .collect();

    let mut full = Vec::new();
    let mut interior = Vec::new();
    for (r, row) in rows.into_iter().enumerate() {
        for (col, v) in row? {
            full.push((r, col, v));
            if let Some(ic) = grid.interior_index(col) {
                interior.push((r, ic, v));
            }
        }
    }
    let n_int = grid.n_interior();
    Ok(DiscreteOperator {
        matrix: SparseMatrix::from_triplets(n_int, n_int, interior)?,
        stencil: Some(SparseMatrix::from_triplets(n_int, grid.n_nodes(), full)?),
        time: t,
        convention: Convention::Generator,
    })
}

/// Adjoint in the discrete L2 product: `A* = W^{-1} A^T W`.
pub fn adjoint_of(op: &DiscreteOperator, grid: &Grid) -> Result<DiscreteOperator> {
    if op.matrix.nrows() != grid.n_interior() {
        return Err(Error::ShapeMismatch(format!(
            "operator has {} rows, grid has {} interior nodes",
            op.matrix.nrows(),
            grid.n_interior()
        )));
    }
    let w = grid.interior_weights();
    let w_inv: Vec<f64> = w.iter().map(|v| 1.0 / v).collect();
    Ok(DiscreteOperator {
        matrix: op.matrix.transpose().scale_rows_cols(&w_inv, &w),
        stencil: None,
        time: op.time,
        convention: match op.convention {
            Convention::Generator => Convention::Adjoint,
            Convention::Adjoint => Convention::Generator,
        },
    })
}

/// Rank of the Kalman-type matrix `[B, M B, ..., M^{nd-1} B]` at the domain
/// centre, where `M` is the drift Jacobian and `B = G sigma`.
///
/// Only defined for affine drift and constant diffusion; anything else is
/// refused rather than linearized.
pub fn hormander_rank(coeffs: &CoefficientSet, grid: &Grid) -> Result<usize> {
    coeffs.check_dims(grid)?;
    let dim = grid.dim();
    let d = coeffs.d;
    let t = 0.0;
    let c = grid.center();
    let f0 = coeffs.full_drift(t, &c);
    let scale: f64 = grid
        .lower()
        .iter()
        .zip(grid.upper())
        .map(|(lo, hi)| hi - lo)
        .fold(0.0, f64::max);
    let delta = 1e-3 * scale;

    let mut jac = DMatrix::<f64>::zeros(dim, dim);
    for b in 0..dim {
        let mut xp = c.clone();
        let mut xm = c.clone();
        xp[b] += delta;
        xm[b] -= delta;
        let fp = coeffs.full_drift(t, &xp);
        let fm = coeffs.full_drift(t, &xm);
        for a in 0..dim {
            jac[(a, b)] = (fp[a] - fm[a]) / (2.0 * delta);
        }
    }

    let sigma0 = coeffs.sigma(t, &c);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let f_scale = 1.0 + jac.amax() * scale + f0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for _ in 0..32 {
        let x: Vec<f64> = (0..dim)
            .map(|a| rng.random_range(grid.lower()[a]..grid.upper()[a]))
            .collect();
        let fx = coeffs.full_drift(t, &x);
        for a in 0..dim {
            let lin: f64 = f0[a] + (0..dim).map(|b| jac[(a, b)] * (x[b] - c[b])).sum::<f64>();
            if (fx[a] - lin).abs() > 1e-8 * f_scale {
                return Err(Error::NotApplicable(format!(
                    "drift component {a} is not affine (deviation {:.3e} at {x:?})",
                    (fx[a] - lin).abs()
                )));
            }
        }
        let sx = coeffs.sigma(t, &x);
        if (&sx - &sigma0).amax() > 1e-12 * (1.0 + sigma0.amax()) {
            return Err(Error::NotApplicable("diffusion coefficient is not constant".into()));
        }
    }

    let m = coeffs.noise_dim;
    let mut b = DMatrix::<f64>::zeros(dim, m);
    b.view_mut((0, 0), (d, m)).copy_from(&sigma0);
    let mut kalman = DMatrix::<f64>::zeros(dim, dim * m);
    let mut block = b;
    for k in 0..dim {
        kalman.view_mut((0, k * m), (dim, m)).copy_from(&block);
        block = &jac * block;
    }
    let smax = kalman.clone().svd(false, false).singular_values.max();
    if smax == 0.0 {
        return Ok(0);
    }
    Ok(kalman.rank(1e-10 * smax))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{inner_product, GridConfig};

    fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn grid(points: usize) -> Grid {
        Grid::new(GridConfig::uniform(2, 1, points, -1.0, 1.0, 4, 1.0)).unwrap()
    }

    #[test]
    fn exact_on_quadratics() {
        let g = grid(9);
        // a = 2 means sigma = sqrt(2)
        let c = CoefficientSet::from_registry("constant", 2, 1, &params(&[("sigma", 2f64.sqrt())])).unwrap();
        let op = assemble_generator(&g, &c, 0.0).unwrap();
        let y = Field::from_fn(&g, |x| x[0] * x[0]);
        let ay = op.apply(&g, &y).unwrap();
        for &n in g.interior_nodes() {
            assert!((ay.values()[n] - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn transport_of_linear_function() {
        let g = grid(9);
        let c = CoefficientSet::from_registry("kolmogorov", 2, 1, &BTreeMap::new()).unwrap();
        let op = assemble_generator(&g, &c, 0.0).unwrap();
        let y = Field::from_fn(&g, |x| x[1]);
        let ay = op.apply(&g, &y).unwrap();
        for &n in g.interior_nodes() {
            let x = g.coords(n);
            assert!((ay.values()[n] - x[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn stencil_respects_nonzero_bound() {
        let g = Grid::new(GridConfig::uniform(3, 1, 5, -1.0, 1.0, 2, 1.0)).unwrap();
        let c = CoefficientSet::from_registry("rotation", 3, 1, &BTreeMap::new()).unwrap();
        let op = assemble_generator(&g, &c, 0.0).unwrap();
        let (n, d) = (3, 1);
        let bound = 1 + 2 * n * d + d * (d + 1);
        for r in 0..op.matrix().nrows() {
            assert!(op.matrix().row_nnz(r) <= bound);
        }
    }

    #[test]
    fn degenerate_or_nan_coefficients_rejected() {
        let g = grid(5);
        let zero = CoefficientSet::from_registry("constant", 2, 1, &params(&[("sigma", 0.0)])).unwrap();
        assert!(assemble_generator(&g, &zero, 0.0).is_err());
        let nan = CoefficientSet::from_registry("kolmogorov", 2, 1, &params(&[("coupling", f64::NAN)])).unwrap();
        assert!(assemble_generator(&g, &nan, 0.0).is_err());
        let weak = CoefficientSet::from_registry("constant", 2, 1, &params(&[("sigma", 1.0), ("lambda", 2.0)])).unwrap();
        assert!(assemble_generator(&g, &weak, 0.0).is_err());
    }

    #[test]
    fn unknown_registry_entries_rejected() {
        assert!(CoefficientSet::from_registry("nope", 2, 1, &BTreeMap::new()).is_err());
        assert!(CoefficientSet::from_registry("kolmogorov", 2, 1, &params(&[("omega", 1.0)])).is_err());
    }

    #[test]
    fn pure_diffusion_is_self_adjoint() {
        let g = grid(9);
        let c = CoefficientSet::from_registry("constant", 2, 1, &BTreeMap::new()).unwrap();
        let op = assemble_generator(&g, &c, 0.0).unwrap();
        let adj = adjoint_of(&op, &g).unwrap();
        assert!(op.matrix().max_abs_diff(adj.matrix()) <= 1e-14 * op.matrix().to_dense().amax());
    }

    #[test]
    fn adjoint_is_an_involution() {
        let g = grid(9);
        let c = CoefficientSet::from_registry("kolmogorov", 2, 1, &BTreeMap::new()).unwrap();
        let op = assemble_generator(&g, &c, 0.0).unwrap();
        let back = adjoint_of(&adjoint_of(&op, &g).unwrap(), &g).unwrap();
        assert_eq!(back.convention(), Convention::Generator);
        assert!(op.matrix().max_abs_diff(back.matrix()) <= 1e-13);
    }

    #[test]
    fn duality_on_kolmogorov_instance() {
        let g = grid(11);
        let c = CoefficientSet::from_registry("kolmogorov", 2, 1, &BTreeMap::new()).unwrap();
        let op = assemble_generator(&g, &c, 0.0).unwrap();
        let adj = adjoint_of(&op, &g).unwrap();
        let y = Field::from_fn(&g, |x| (3.0 * x[0]).sin() * (1.0 - x[1] * x[1]) + x[0] * x[1]);
        let mut y = y;
        y.zero_boundary(&g);
        let mut p = Field::from_fn(&g, |x| (x[0] - 0.3 * x[1]).exp());
        p.zero_boundary(&g);
        let lhs = inner_product(&op.apply(&g, &y).unwrap(), &p, &g).unwrap();
        let rhs = inner_product(&y, &adj.apply(&g, &p).unwrap(), &g).unwrap();
        assert!((lhs - rhs).abs() <= 1e-12 * y.norm(&g) * p.norm(&g));
    }

    #[test]
    fn kalman_ranks() {
        let g2 = grid(5);
        let kolm = CoefficientSet::from_registry("kolmogorov", 2, 1, &BTreeMap::new()).unwrap();
        assert_eq!(hormander_rank(&kolm, &g2).unwrap(), 2);
        let decoupled = CoefficientSet::from_registry("constant", 2, 1, &BTreeMap::new()).unwrap();
        assert_eq!(hormander_rank(&decoupled, &g2).unwrap(), 1);
        let g3 = Grid::new(GridConfig::uniform(3, 1, 5, -1.0, 1.0, 2, 1.0)).unwrap();
        let kolm3 = CoefficientSet::from_registry("kolmogorov", 3, 1, &BTreeMap::new()).unwrap();
        assert_eq!(hormander_rank(&kolm3, &g3).unwrap(), 3);
    }

    #[test]
    fn nonaffine_drift_is_refused() {
        let g = grid(5);
        let sigma: MatrixFn = Arc::new(|_, _| DMatrix::identity(1, 1));
        let drifts: Vec<DriftFn> = vec![Arc::new(|_, _| vec![0.0]), Arc::new(|_, xs| vec![xs[0].sin()])];
        let c = CoefficientSet::new("sine", 2, 1, 1, sigma, drifts, 0.5).unwrap();
        assert!(matches!(hormander_rank(&c, &g), Err(Error::NotApplicable(_))));
    }

    #[test]
    fn chain_structure_holds_for_registry() {
        let g = Grid::new(GridConfig::uniform(3, 1, 5, -1.0, 1.0, 2, 1.0)).unwrap();
        for name in ["kolmogorov", "constant", "rotation", "oscillating"] {
            let c = CoefficientSet::from_registry(name, 3, 1, &BTreeMap::new()).unwrap();
            assert!(check_chain_structure(&c, &g, 20, 7), "{name}");
        }
    }
}
