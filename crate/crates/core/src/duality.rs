//! Conjugate functionals and the duality-gap diagnostic.
//!
//! Sign convention: the primal infimum equals minus the dual infimum, so the
//! reported gap is `primal + dual` and vanishes at optimality.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::follower::eval_j1;
use crate::leader::{DualVariable, Leader, StackelbergSolution};
use crate::mesh::{inner_product, Control, Field, Grid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    pub primal_value: f64,
    pub dual_value: f64,
    pub gap: f64,
    /// `|(z(T), xi) - <phi, u1>_{(0,T) x U1}|`
    pub identity_error: f64,
}

/// The quadratic leader cost is its own conjugate under the `L2` pairing.
pub fn conjugate_j1(u1: &Control, grid: &Grid) -> Result<f64> {
    eval_j1(u1, grid)
}

/// `(xi, target - y0(T)) + alpha ||xi||`
pub fn conjugate_j2(xi: &DualVariable, target: &Field, y0_t: &Field, alpha: f64, grid: &Grid) -> Result<f64> {
    let b = target.sub(y0_t)?;
    Ok(inner_product(xi.field(), &b, grid)? + alpha * xi.norm(grid))
}

/// `D(xi) = J1*(H* xi) + J2*(-xi)`
pub fn dual_functional(
    leader: &Leader,
    xi: &DualVariable,
    target: &Field,
    y0_t: &Field,
    alpha: f64,
) -> Result<f64> {
    let grid = leader.grid();
    let u = leader.apply_h_star(xi)?;
    let neg = DualVariable::new(grid, xi.field().scaled(-1.0))?;
    Ok(conjugate_j1(&u, grid)? + conjugate_j2(&neg, target, y0_t, alpha, grid)?)
}

/// `|(H u1, xi) - <u1, H* xi>|` with both sides from independent solves.
pub fn identity_error(leader: &Leader, u1: &Control, xi: &DualVariable) -> Result<f64> {
    let grid = leader.grid();
    let z_t = leader.apply_h(u1)?;
    let phi_u = leader.apply_h_star(xi)?;
    let lhs = inner_product(&z_t, xi.field(), grid)?;
    let rhs = inner_product(u1.values(), phi_u.values(), grid)?;
    Ok((lhs - rhs).abs())
}

pub fn duality_report(
    sol: &StackelbergSolution,
    leader: &Leader,
    target: &Field,
    y0_t: &Field,
) -> Result<DualityReport> {
    let grid = leader.grid();
    let primal_value = conjugate_j1(&sol.u1_star, grid)?;
    let dual_value = dual_functional(leader, &sol.xi_star, target, y0_t, sol.alpha)?;
    Ok(DualityReport {
        primal_value,
        dual_value,
        gap: primal_value + dual_value,
        identity_error: identity_error(leader, &sol.u1_star, &sol.xi_star)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::GridConfig;

    #[test]
    fn conjugate_j2_is_positively_homogeneous() {
        let g = Grid::new(GridConfig::uniform(2, 1, 7, -1.0, 1.0, 2, 1.0)).unwrap();
        let mut t = Field::from_fn(&g, |x| x[0] + 2.0 * x[1]);
        t.zero_boundary(&g);
        let y0 = Field::zeros_slice(&g);
        let mut xi = Field::from_fn(&g, |x| (x[0] * x[1]).cos());
        xi.zero_boundary(&g);
        let xi1 = DualVariable::new(&g, xi.clone()).unwrap();
        let xi2 = DualVariable::new(&g, xi.scaled(2.0)).unwrap();
        let a = conjugate_j2(&xi1, &t, &y0, 0.3, &g).unwrap();
        let b = conjugate_j2(&xi2, &t, &y0, 0.3, &g).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-14 * a.abs().max(1.0));
        assert_eq!(conjugate_j2(&DualVariable::zeros(&g), &t, &y0, 0.3, &g).unwrap(), 0.0);
        let d = DualVariable::new(&g, t.clone()).unwrap();
        let n = t.norm(&g);
        assert!((conjugate_j2(&d, &t, &y0, 0.3, &g).unwrap() - (n * n + 0.3 * n)).abs() < 1e-14);
    }
}
