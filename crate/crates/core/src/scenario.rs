//! Scenario files: grid, coefficients, subdomains, target, reference,
//! weights and solver options, in TOML.
//!
//! ```toml
//! [grid]
//! n_subsystems = 2
//! d_per_subsystem = 1
//! points = [17, 17]
//! lower = [-1.0, -1.0]
//! upper = [1.0, 1.0]
//! time_steps = 32
//! horizon = 1.0
//!
//! [coefficients]
//! name = "kolmogorov"
//! params = { sigma = 1.0, coupling = 1.0 }
//!
//! [controls]
//! leader_box = { lower = [-0.8, -0.8], upper = [-0.2, 0.8] }
//! follower_box = { lower = [0.2, -0.8], upper = [0.8, 0.8] }
//!
//! [target]
//! kind = "gaussian_bump"
//! center = [0.0, 0.0]
//! width = 0.25
//!
//! [problem]
//! alpha = 0.1
//! alpha_relative = true
//! beta = 1.0
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::follower::Follower;
use crate::leader::{Background, Leader, StackelbergOptions, StackelbergSolver};
use crate::mesh::{make_mask, BoxRegion, Control, Field, Grid, GridConfig, MaskLabel, Role, SubdomainMask};
use crate::operator::CoefficientSet;
use crate::pde_solvers::{CoupledOptions, CoupledSystem, Propagator, StepSolve};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n_subsystems: usize,
    pub d_per_subsystem: usize,
    pub points: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub time_steps: usize,
    pub horizon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSpec {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSpec {
    pub leader_box: BoxSpec,
    pub follower_box: BoxSpec,
}

/// Spatial profile of a target, reference or payoff.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    /// `amplitude exp(-|x - center|^2 / (2 width^2))`
    GaussianBump {
        center: Vec<f64>,
        width: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// `amplitude prod_a sin(m_a pi (x_a - lower_a) / (upper_a - lower_a))`
    Eigenmode {
        modes: Vec<u32>,
        #[serde(default = "one")]
        amplitude: f64,
    },
    Constant {
        value: f64,
    },
    Zero,
    /// The free terminal state `y0(T)`; only meaningful as a target.
    Background,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeProfile {
    Constant,
    /// `t / T`
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    pub field: FieldSpec,
    #[serde(default = "constant_profile")]
    pub time_profile: TimeProfile,
}

fn constant_profile() -> TimeProfile {
    TimeProfile::Constant
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub alpha: f64,
    /// Read `alpha` as a fraction of `||target||`.
    #[serde(default)]
    pub alpha_relative: bool,
    #[serde(default = "one")]
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub step: StepSolve,
    pub coupled: CoupledOptions,
    pub stackelberg: StackelbergOptions,
    pub vi_samples: usize,
}

impl Default for SolverSpec {
    fn default() -> Self {
        SolverSpec {
            step: StepSolve::Direct,
            coupled: CoupledOptions::default(),
            stackelberg: StackelbergOptions::default(),
            vi_samples: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub alpha_factors: Vec<f64>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            alpha_factors: vec![0.4, 0.2, 0.1, 0.05],
        }
    }
}

/// Leader control used by the follower-only pipeline; constant in time and
/// restricted to the leader box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FollowerSpec {
    pub u1: FieldSpec,
}

impl Default for FollowerSpec {
    fn default() -> Self {
        FollowerSpec {
            u1: FieldSpec::Constant { value: 1.0 },
        }
    }
}

/// Feynman-Kac check settings. The check uses the scenario's coefficients on
/// its spatial box with its own resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FkSpec {
    pub points: usize,
    pub horizon: f64,
    pub time_steps: usize,
    pub n_paths: usize,
    pub payoff: FieldSpec,
    /// Constant in the `C (h + dt)` margin, in units of `max |payoff|`.
    pub margin_constant: f64,
}

impl Default for FkSpec {
    fn default() -> Self {
        FkSpec {
            points: 33,
            horizon: 0.1,
            time_steps: 64,
            n_paths: 100_000,
            payoff: FieldSpec::GaussianBump {
                center: vec![0.0, 0.0],
                width: 0.25,
                amplitude: 1.0,
            },
            margin_constant: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub grid: GridSpec,
    pub coefficients: CoefficientSpec,
    pub controls: ControlSpec,
    pub target: FieldSpec,
    #[serde(default = "zero_reference")]
    pub reference: ReferenceSpec,
    pub problem: ProblemSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub follower: FollowerSpec,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub fk: FkSpec,
}

fn zero_reference() -> ReferenceSpec {
    ReferenceSpec {
        field: FieldSpec::Zero,
        time_profile: TimeProfile::Constant,
    }
}

impl Scenario {
    /// Kolmogorov chain on `(-1, 1)^2`, 17x17 nodes, 32 steps to `T = 1`,
    /// Gaussian-bump target.
    pub fn default_kolmogorov() -> Self {
        Scenario {
            grid: GridSpec {
                n_subsystems: 2,
                d_per_subsystem: 1,
                points: vec![17, 17],
                lower: vec![-1.0, -1.0],
                upper: vec![1.0, 1.0],
                time_steps: 32,
                horizon: 1.0,
            },
            coefficients: CoefficientSpec {
                name: "kolmogorov".into(),
                params: BTreeMap::new(),
            },
            controls: ControlSpec {
                leader_box: BoxSpec {
                    lower: vec![-0.8, -0.8],
                    upper: vec![-0.2, 0.8],
                },
                follower_box: BoxSpec {
                    lower: vec![0.2, -0.8],
                    upper: vec![0.8, 0.8],
                },
            },
            target: FieldSpec::GaussianBump {
                center: vec![0.0, 0.0],
                width: 0.25,
                amplitude: 1.0,
            },
            reference: ReferenceSpec {
                field: FieldSpec::GaussianBump {
                    center: vec![0.5, 0.0],
                    width: 0.3,
                    amplitude: 0.5,
                },
                time_profile: TimeProfile::Linear,
            },
            problem: ProblemSpec {
                alpha: 0.1,
                alpha_relative: true,
                beta: 1.0,
            },
            solver: SolverSpec::default(),
            follower: FollowerSpec::default(),
            sweep: SweepSpec::default(),
            fk: FkSpec::default(),
        }
    }

    /// Small instance whose target is the free terminal state.
    pub fn trivial() -> Self {
        let mut s = Scenario::default_kolmogorov();
        s.grid.points = vec![9, 9];
        s.grid.time_steps = 8;
        s.target = FieldSpec::Background;
        s.problem.alpha = 0.05;
        s.problem.alpha_relative = false;
        s.fk.points = 17;
        s.fk.n_paths = 20_000;
        s.fk.time_steps = 16;
        s
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Scenario::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks everything that can be checked without building the grid.
    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        if !(p.alpha.is_finite() && p.alpha > 0.0) {
            return Err(Error::param("problem.alpha", format!("must be positive, got {}", p.alpha)));
        }
        if !(p.beta.is_finite() && p.beta > 0.0) {
            return Err(Error::param("problem.beta", format!("must be positive, got {}", p.beta)));
        }
        let dim = self.grid.n_subsystems * self.grid.d_per_subsystem;
        for (key, b) in [
            ("controls.leader_box", &self.controls.leader_box),
            ("controls.follower_box", &self.controls.follower_box),
        ] {
            if b.lower.len() != dim || b.upper.len() != dim {
                return Err(Error::param(key, format!("needs {dim} lower and upper bounds")));
            }
        }
        for (key, f) in [("target", &self.target), ("reference.field", &self.reference.field), ("fk.payoff", &self.fk.payoff), ("follower.u1", &self.follower.u1)] {
            check_field_spec(key, f, dim)?;
        }
        if matches!(self.reference.field, FieldSpec::Background) {
            return Err(Error::param("reference.field.kind", "`background` is only valid for the target"));
        }
        if matches!(self.follower.u1, FieldSpec::Background) {
            return Err(Error::param("follower.u1.kind", "`background` is only valid for the target"));
        }
        if matches!(self.fk.payoff, FieldSpec::Background) {
            return Err(Error::param("fk.payoff.kind", "`background` is only valid for the target"));
        }
        if self.sweep.alpha_factors.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::param("sweep.alpha_factors", "all factors must be positive"));
        }
        let c = &self.solver.coupled;
        if !(c.damping > 0.0 && c.damping <= 1.0) {
            return Err(Error::param("solver.coupled.damping", "must lie in (0, 1]"));
        }
        if !(c.picard_tol > 0.0) {
            return Err(Error::param("solver.coupled.picard_tol", "must be positive"));
        }
        let d = &self.solver.stackelberg.dual;
        if !(d.tol > 0.0) {
            return Err(Error::param("solver.stackelberg.dual.tol", "must be positive"));
        }
        if !(d.backtrack > 0.0 && d.backtrack < 1.0) {
            return Err(Error::param("solver.stackelberg.dual.backtrack", "must lie in (0, 1)"));
        }
        if self.fk.points < 3 || self.fk.time_steps == 0 || self.fk.n_paths == 0 || !(self.fk.horizon > 0.0) {
            return Err(Error::param("fk", "needs points >= 3, positive time_steps, n_paths and horizon"));
        }
        Ok(())
    }

    pub fn grid_config(&self) -> GridConfig {
        GridConfig {
            n_subsystems: self.grid.n_subsystems,
            d_per_subsystem: self.grid.d_per_subsystem,
            points: self.grid.points.clone(),
            lower: self.grid.lower.clone(),
            upper: self.grid.upper.clone(),
            time_steps: self.grid.time_steps,
            horizon: self.grid.horizon,
        }
    }

    pub fn coefficients(&self) -> Result<CoefficientSet> {
        CoefficientSet::from_registry(
            &self.coefficients.name,
            self.grid.n_subsystems,
            self.grid.d_per_subsystem,
            &self.coefficients.params,
        )
    }

    /// Builds every solver object the pipelines need.
    pub fn build(&self) -> Result<Setup> {
        self.validate()?;
        let grid = Grid::new(self.grid_config())?;
        let coeffs = self.coefficients()?;
        let region = |b: &BoxSpec| BoxRegion {
            lower: b.lower.clone(),
            upper: b.upper.clone(),
        };
        let u1_mask = make_mask(&grid, &region(&self.controls.leader_box), MaskLabel::U1)?;
        let u2_mask = make_mask(&grid, &region(&self.controls.follower_box), MaskLabel::U2)?;
        SubdomainMask::union(&u1_mask, &u2_mask)?;
        let prop = Arc::new(Propagator::new(&grid, &coeffs, self.solver.step)?);
        let system = Arc::new(CoupledSystem::new(prop, self.problem.beta, &u2_mask, self.solver.coupled.clone())?);
        let follower = Follower::new(system, u1_mask.clone(), u2_mask.clone())?;
        let leader = Arc::new(Leader::new(follower));
        let y_rf = reference_field(&grid, &self.reference)?;
        Ok(Setup {
            scenario: self.clone(),
            grid,
            coeffs,
            u1_mask,
            u2_mask,
            leader,
            y_rf,
        })
    }
}

fn check_field_spec(key: &str, f: &FieldSpec, dim: usize) -> Result<()> {
    match f {
        FieldSpec::GaussianBump { center, width, amplitude } => {
            if center.len() != dim {
                return Err(Error::param(&format!("{key}.center"), format!("needs {dim} coordinates")));
            }
            if !(width.is_finite() && *width > 0.0) {
                return Err(Error::param(&format!("{key}.width"), "must be positive"));
            }
            if !amplitude.is_finite() {
                return Err(Error::param(&format!("{key}.amplitude"), "must be finite"));
            }
        }
        FieldSpec::Eigenmode { modes, amplitude } => {
            if modes.len() != dim || modes.contains(&0) {
                return Err(Error::param(&format!("{key}.modes"), format!("needs {dim} positive mode numbers")));
            }
            if !amplitude.is_finite() {
                return Err(Error::param(&format!("{key}.amplitude"), "must be finite"));
            }
        }
        FieldSpec::Constant { value } => {
            if !value.is_finite() {
                return Err(Error::param(&format!("{key}.value"), "must be finite"));
            }
        }
        FieldSpec::Zero | FieldSpec::Background => {}
    }
    Ok(())
}

/// Samples a spatial profile on the grid. Boundary values are zeroed when
/// `zero_boundary` is set.
pub fn sample_field(grid: &Grid, spec: &FieldSpec, zero_boundary: bool) -> Result<Field> {
    let mut f = match spec {
        FieldSpec::GaussianBump { center, width, amplitude } => Field::from_fn(grid, |x| {
            let r2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
            amplitude * (-r2 / (2.0 * width * width)).exp()
        }),
        FieldSpec::Eigenmode { modes, amplitude } => {
            let (lo, hi) = (grid.lower().to_vec(), grid.upper().to_vec());
            Field::from_fn(grid, |x| {
                let mut v = *amplitude;
                for a in 0..x.len() {
                    v *= (modes[a] as f64 * std::f64::consts::PI * (x[a] - lo[a]) / (hi[a] - lo[a])).sin();
                }
                v
            })
        }
        FieldSpec::Constant { value } => Field::from_fn(grid, |_| *value),
        FieldSpec::Zero => Field::zeros_slice(grid),
        FieldSpec::Background => {
            return Err(Error::param("kind", "`background` needs the solved background state"));
        }
    };
    if zero_boundary {
        f.zero_boundary(grid);
    }
    Ok(f)
}

/// Reference trajectory `y_rf(t, x) = profile(t) * field(x)`.
pub fn reference_field(grid: &Grid, spec: &ReferenceSpec) -> Result<Field> {
    let slice = sample_field(grid, &spec.field, false)?;
    let mut out = Field::repeat_slice(grid, &slice);
    if spec.time_profile == TimeProfile::Linear {
        for k in 0..grid.n_time_steps() {
            let s = grid.slice_time(k) / grid.horizon();
            out.slice_mut(k).iter_mut().for_each(|v| *v *= s);
        }
    }
    Ok(out)
}

/// Everything built from a scenario.
#[derive(Debug)]
pub struct Setup {
    pub scenario: Scenario,
    pub grid: Grid,
    pub coeffs: CoefficientSet,
    pub u1_mask: SubdomainMask,
    pub u2_mask: SubdomainMask,
    pub leader: Arc<Leader>,
    pub y_rf: Field,
}

impl Setup {
    /// Solves the background state; the returned solver caches the Gramian.
    pub fn solver(&self) -> Result<StackelbergSolver> {
        StackelbergSolver::new(self.leader.clone(), self.y_rf.clone())
    }

    pub fn target(&self, background: &Background) -> Result<Field> {
        match &self.scenario.target {
            FieldSpec::Background => Ok(background.y0.terminal()),
            spec => sample_field(&self.grid, spec, true),
        }
    }

    /// The follower pipeline's leader control.
    pub fn follower_u1(&self) -> Result<Control> {
        let slice = sample_field(&self.grid, &self.scenario.follower.u1, false)?;
        Control::new(Field::repeat_slice(&self.grid, &slice), self.u1_mask.clone(), Role::Leader)
    }

    /// `alpha`, scaled by `||target||` when configured as relative.
    pub fn alpha(&self, target: &Field) -> f64 {
        let p = &self.scenario.problem;
        if p.alpha_relative {
            p.alpha * target.norm(&self.grid)
        } else {
            p.alpha
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scenario_round_trips_through_toml() {
        let s = Scenario::default_kolmogorov();
        let text = s.to_toml_string().unwrap();
        assert_eq!(Scenario::from_toml_str(&text).unwrap(), s);
    }

    #[test]
    fn negative_alpha_names_the_key() {
        let mut s = Scenario::default_kolmogorov();
        s.problem.alpha = -1.0;
        let text = s.to_toml_string().unwrap();
        let err = Scenario::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("problem.alpha"), "{err}");
    }

    #[test]
    fn unknown_keys_and_registry_names_are_rejected() {
        let text = Scenario::default_kolmogorov().to_toml_string().unwrap();
        assert!(Scenario::from_toml_str(&text.replace("beta", "betta")).is_err());
        let mut s = Scenario::default_kolmogorov();
        s.coefficients.name = "nope".into();
        assert!(s.build().is_err());
    }

    #[test]
    fn overlapping_boxes_are_rejected() {
        let mut s = Scenario::trivial();
        s.controls.follower_box.lower[0] = -0.5;
        assert!(matches!(s.build(), Err(Error::InvalidMask(_))));
    }

    #[test]
    fn linear_reference_scales_with_time() {
        let s = Scenario::default_kolmogorov();
        let setup = s.build().unwrap();
        let g = &setup.grid;
        let last = setup.y_rf.terminal();
        let first = setup.y_rf.slice_field(0);
        let ratio = first.norm(g) / last.norm(g);
        assert!((ratio - g.slice_time(0) / g.horizon()).abs() < 1e-14);
    }
}
