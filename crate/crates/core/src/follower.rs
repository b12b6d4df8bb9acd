//! The follower's best response to a leader strategy.
//!
//! For fixed `u1` the follower minimizes
//!
//! ```text
//! J2(u1, u2) = 1/2 ||y - y_rf||^2 + beta/2 ||u2||^2
//! ```
//!
//! over controls on `U2`. The minimizer is `u2 = -p chi2 / beta` where
//! `(y, p)` solves the coupled forward-backward system.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{inner_product, Control, Field, Grid, Role, SubdomainMask};
use crate::pde_solvers::{
    interior_spacetime, spacetime_from_interior, CoupledMethod, CoupledSystem, Propagator, SolverReport,
};

#[derive(Clone, Debug)]
pub struct BestResponse {
    pub u2_star: Control,
    pub y: Field,
    pub p: Field,
    /// Relative change of the adjoint under one further forward-backward sweep.
    pub residual: f64,
    pub report: SolverReport,
}

/// `J1(u1) = 1/2 ||u1||^2` over `(0, T) x U1`.
pub fn eval_j1(u1: &Control, grid: &Grid) -> Result<f64> {
    let v = u1.values();
    Ok(0.5 * inner_product(v, v, grid)?)
}

/// Follower problem on one grid: propagator, `beta`, and both subdomains.
#[derive(Debug)]
pub struct Follower {
    system: Arc<CoupledSystem>,
    u1_mask: SubdomainMask,
    u2_mask: SubdomainMask,
}

impl Follower {
    pub fn new(system: Arc<CoupledSystem>, u1_mask: SubdomainMask, u2_mask: SubdomainMask) -> Result<Self> {
        if !u1_mask.is_disjoint(&u2_mask) {
            return Err(Error::InvalidMask("leader and follower subdomains overlap".into()));
        }
        Ok(Follower {
            system,
            u1_mask,
            u2_mask,
        })
    }

    pub fn system(&self) -> &Arc<CoupledSystem> {
        &self.system
    }

    pub fn propagator(&self) -> &Arc<Propagator> {
        self.system.propagator()
    }

    pub fn grid(&self) -> &Grid {
        self.system.propagator().grid()
    }

    pub fn beta(&self) -> f64 {
        self.system.beta()
    }

    pub fn u1_mask(&self) -> &SubdomainMask {
        &self.u1_mask
    }

    pub fn u2_mask(&self) -> &SubdomainMask {
        &self.u2_mask
    }

    fn check_control(&self, u: &Control, role: Role) -> Result<()> {
        let mask = match role {
            Role::Leader => &self.u1_mask,
            Role::Follower => &self.u2_mask,
        };
        if u.role() != role || u.mask() != mask {
            return Err(Error::InvalidMask(format!("{role:?} control is not supported on its subdomain")));
        }
        Ok(())
    }

    pub fn best_response(&self, u1: &Control, y_rf: &Field) -> Result<BestResponse> {
        self.best_response_with(self.system.resolved_method(), u1, y_rf)
    }

    /// Best response using an explicit coupled-solve method.
    pub fn best_response_with(&self, method: CoupledMethod, u1: &Control, y_rf: &Field) -> Result<BestResponse> {
        self.check_control(u1, Role::Leader)?;
        let grid = self.grid();
        let forcing = interior_spacetime(grid, u1.values())?;
        let tracking = interior_spacetime(grid, y_rf)?;
        let sol = self.system.solve_with(method, &forcing, &tracking, None)?;

        // one more sweep measures how close (y, p) is to the fixed point
        let y_chk = self.system.state_from_adjoint(&forcing, &sol.p)?;
        let p_chk = self.system.adjoint_from_state(&y_chk, &tracking, None)?;
        let w = self.propagator().interior_weights();
        let n = w.len();
        let (mut num, mut den) = (0.0, 0.0);
        for (i, (a, b)) in p_chk.iter().zip(&sol.p).enumerate() {
            num += w[i % n] * (a - b) * (a - b);
            den += w[i % n] * a * a;
        }
        let residual = if den == 0.0 { num.sqrt() } else { (num / den).sqrt() };

        let p = spacetime_from_interior(grid, &sol.p)?;
        let y = spacetime_from_interior(grid, &sol.y)?;
        let u2_star = Control::new(p.scaled(-1.0 / self.beta()), self.u2_mask.clone(), Role::Follower)?;
        Ok(BestResponse {
            u2_star,
            y,
            p,
            residual,
            report: sol.report,
        })
    }

    /// State driven by `u1 chi1 + u2 chi2` from `y(0) = 0`.
    pub fn state(&self, u1: &Control, u2: &Control) -> Result<Field> {
        self.check_control(u1, Role::Leader)?;
        self.check_control(u2, Role::Follower)?;
        let grid = self.grid();
        let src = u1.values().add(u2.values())?;
        let (y, _) = self
            .propagator()
            .forward(&interior_spacetime(grid, &src)?, &vec![0.0; grid.n_interior()])?;
        spacetime_from_interior(grid, &y)
    }

    /// Adjoint `p` of the tracking term at the state of `(u1, u2)`.
    pub fn adjoint(&self, u1: &Control, u2: &Control, y_rf: &Field) -> Result<Field> {
        let grid = self.grid();
        let y = self.state(u1, u2)?;
        let src = y.sub(y_rf)?;
        let (p, _) = self
            .propagator()
            .backward(&interior_spacetime(grid, &src)?, &vec![0.0; grid.n_interior()])?;
        spacetime_from_interior(grid, &p)
    }

    pub fn eval_j2(&self, u1: &Control, u2: &Control, y_rf: &Field) -> Result<f64> {
        let grid = self.grid();
        let y = self.state(u1, u2)?;
        let e = y.sub(y_rf)?;
        Ok(0.5 * inner_product(&e, &e, grid)? + 0.5 * self.beta() * inner_product(u2.values(), u2.values(), grid)?)
    }

    /// Adjoint-based gradient `p chi2 + beta u2` of `J2` in `u2`.
    pub fn gradient_j2(&self, u1: &Control, u2: &Control, y_rf: &Field) -> Result<Field> {
        let p = self.adjoint(u1, u2, y_rf)?;
        let mut g = Control::new(p, self.u2_mask.clone(), Role::Follower)?.into_field();
        g.axpy(self.beta(), u2.values())?;
        Ok(g)
    }

    /// `||p chi2 + beta u2|| / (1 + ||u2||)` with `p` recomputed from scratch.
    pub fn stationarity_residual(&self, br: &BestResponse, u1: &Control, y_rf: &Field) -> Result<f64> {
        let grid = self.grid();
        let g = self.gradient_j2(u1, &br.u2_star, y_rf)?;
        Ok(g.norm(grid) / (1.0 + br.u2_star.norm(grid)))
    }
}
