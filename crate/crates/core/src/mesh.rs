//! Tensor-product discretization of `(0, T) x Omega`.
//!
//! Nodes are stored row-major (axis 0 slowest). Space-time fields hold one
//! spatial slice per implicit time step: slice `k` lives at `t_{k+1} = (k+1) dt`
//! and carries quadrature weight `dt`. The initial layer is not stored; it is
//! zero for every state in this crate and is passed explicitly where needed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters accepted by [`Grid::new`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub n_subsystems: usize,
    pub d_per_subsystem: usize,
    /// Points per spatial axis, including both boundary nodes.
    pub points: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub time_steps: usize,
    pub horizon: f64,
}

impl GridConfig {
    /// Square `[lo, hi]^(n d)` domain with the same point count on every axis.
    pub fn uniform(n: usize, d: usize, points: usize, lo: f64, hi: f64, steps: usize, horizon: f64) -> Self {
        let dim = n * d;
        GridConfig {
            n_subsystems: n,
            d_per_subsystem: d,
            points: vec![points; dim],
            lower: vec![lo; dim],
            upper: vec![hi; dim],
            time_steps: steps,
            horizon,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Grid {
    config: GridConfig,
    spacing: Vec<f64>,
    strides: Vec<usize>,
    n_nodes: usize,
    boundary: Vec<bool>,
    interior: Vec<usize>,
    interior_of: Vec<Option<usize>>,
    weights: Vec<f64>,
    dt: f64,
}

impl Grid {
    pub fn new(config: GridConfig) -> Result<Self> {
        let dim = config.n_subsystems * config.d_per_subsystem;
        if config.n_subsystems < 2 {
            return Err(Error::InvalidGrid(format!(
                "n_subsystems must be >= 2, got {}",
                config.n_subsystems
            )));
        }
        if config.d_per_subsystem == 0 {
            return Err(Error::InvalidGrid("d_per_subsystem must be >= 1".into()));
        }
        if config.points.len() != dim || config.lower.len() != dim || config.upper.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "expected {dim} axes (n * d), got points={}, lower={}, upper={}",
                config.points.len(),
                config.lower.len(),
                config.upper.len()
            )));
        }
        for (axis, &p) in config.points.iter().enumerate() {
            if p < 3 {
                return Err(Error::InvalidGrid(format!(
                    "axis {axis} has {p} points; at least 3 are required"
                )));
            }
        }
        let mut spacing = Vec::with_capacity(dim);
        for axis in 0..dim {
            let (lo, hi) = (config.lower[axis], config.upper[axis]);
            if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
                return Err(Error::InvalidGrid(format!(
                    "axis {axis} bounds [{lo}, {hi}] are not increasing"
                )));
            }
            spacing.push((hi - lo) / (config.points[axis] - 1) as f64);
        }
        if config.time_steps == 0 {
            return Err(Error::InvalidGrid("time_steps must be positive".into()));
        }
        if !(config.horizon.is_finite() && config.horizon > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "horizon must be positive, got {}",
                config.horizon
            )));
        }
        let dt = config.horizon / config.time_steps as f64;

        let mut strides = vec![1usize; dim];
        for axis in (0..dim.saturating_sub(1)).rev() {
            strides[axis] = strides[axis + 1] * config.points[axis + 1];
        }
        let n_nodes: usize = config.points.iter().product();
        let cell: f64 = spacing.iter().product();

        let mut boundary = vec![false; n_nodes];
        let mut weights = vec![0.0; n_nodes];
        let mut interior = Vec::new();
        let mut interior_of = vec![None; n_nodes];
        let mut idx = vec![0usize; dim];
        for node in 0..n_nodes {
            let mut rem = node;
            for axis in 0..dim {
                idx[axis] = rem / strides[axis];
                rem %= strides[axis];
            }
            let mut w = cell;
            let mut on_boundary = false;
            for axis in 0..dim {
                if idx[axis] == 0 || idx[axis] == config.points[axis] - 1 {
                    on_boundary = true;
                    w *= 0.5;
                }
            }
            boundary[node] = on_boundary;
            weights[node] = w;
            if !on_boundary {
                interior_of[node] = Some(interior.len());
                interior.push(node);
            }
        }

        Ok(Grid {
            config,
            spacing,
            strides,
            n_nodes,
            boundary,
            interior,
            interior_of,
            weights,
            dt,
        })
    }

    /// Same spatial grid with a different time discretization.
    pub fn with_time(&self, horizon: f64, time_steps: usize) -> Result<Grid> {
        let mut cfg = self.config.clone();
        cfg.horizon = horizon;
        cfg.time_steps = time_steps;
        Grid::new(cfg)
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.points.len()
    }

    pub fn n_subsystems(&self) -> usize {
        self.config.n_subsystems
    }

    pub fn d_per_subsystem(&self) -> usize {
        self.config.d_per_subsystem
    }

    pub fn points(&self) -> &[usize] {
        &self.config.points
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn lower(&self) -> &[f64] {
        &self.config.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.config.upper
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_interior(&self) -> usize {
        self.interior.len()
    }

    pub fn n_time_steps(&self) -> usize {
        self.config.time_steps
    }

    pub fn horizon(&self) -> f64 {
        self.config.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Time of stored slice `k` (right endpoint of step `k + 1`).
    pub fn slice_time(&self, k: usize) -> f64 {
        (k + 1) as f64 * self.dt
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    /// Node indices of the interior, in unknown order.
    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior
    }

    pub fn interior_index(&self, node: usize) -> Option<usize> {
        self.interior_of[node]
    }

    /// Trapezoidal quadrature weight of every node.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn interior_weights(&self) -> Vec<f64> {
        self.interior.iter().map(|&n| self.weights[n]).collect()
    }

    pub fn multi_index(&self, node: usize) -> Vec<usize> {
        let mut rem = node;
        self.strides
            .iter()
            .map(|&s| {
                let i = rem / s;
                rem %= s;
                i
            })
            .collect()
    }

    pub fn node_of(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn coords(&self, node: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        self.coords_into(node, &mut x);
        x
    }

    pub fn coords_into(&self, node: usize, out: &mut [f64]) {
        let mut rem = node;
        for axis in 0..self.dim() {
            let i = rem / self.strides[axis];
            rem %= self.strides[axis];
            out[axis] = self.config.lower[axis] + i as f64 * self.spacing[axis];
        }
    }

    pub fn center(&self) -> Vec<f64> {
        self.config
            .lower
            .iter()
            .zip(&self.config.upper)
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower().iter().zip(self.upper()))
            .all(|(&v, (&lo, &hi))| v > lo && v < hi)
    }

    /// Interior values of a full-grid vector.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.interior.iter().map(|&n| full[n]).collect()
    }

    /// Full-grid vector with the given interior values and zero on the boundary.
    pub fn extend(&self, interior: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.n_nodes];
        for (&n, &v) in self.interior.iter().zip(interior) {
            full[n] = v;
        }
        full
    }

    /// Multilinear interpolation of a full-grid vector. Points outside the box
    /// are clamped to it.
    pub fn interpolate(&self, full: &[f64], x: &[f64]) -> f64 {
        let dim = self.dim();
        let mut base = vec![0usize; dim];
        let mut frac = vec![0.0; dim];
        for axis in 0..dim {
            let p = self.config.points[axis];
            let s = ((x[axis] - self.config.lower[axis]) / self.spacing[axis]).clamp(0.0, (p - 1) as f64);
            let i = (s.floor() as usize).min(p - 2);
            base[axis] = i;
            frac[axis] = s - i as f64;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << dim) {
            let mut w = 1.0;
            let mut node = 0;
            for axis in 0..dim {
                let bit = (corner >> axis) & 1;
                w *= if bit == 1 { frac[axis] } else { 1.0 - frac[axis] };
                node += (base[axis] + bit) * self.strides[axis];
            }
            if w != 0.0 {
                acc += w * full[node];
            }
        }
        acc
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskLabel {
    U,
    U1,
    U2,
}

/// Axis-aligned box `[lower_k, upper_k]` per axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubdomainMask {
    indicator: Vec<bool>,
    label: MaskLabel,
}

impl SubdomainMask {
    pub fn indicator(&self) -> &[bool] {
        &self.indicator
    }

    pub fn label(&self) -> MaskLabel {
        self.label
    }

    pub fn contains(&self, node: usize) -> bool {
        self.indicator[node]
    }

    pub fn count(&self) -> usize {
        self.indicator.iter().filter(|&&b| b).count()
    }

    /// Discrete measure of the mask under the grid quadrature.
    pub fn measure(&self, grid: &Grid) -> f64 {
        self.indicator
            .iter()
            .zip(grid.weights())
            .filter(|(b, _)| **b)
            .map(|(_, w)| w)
            .sum()
    }

    pub fn is_disjoint(&self, other: &SubdomainMask) -> bool {
        self.indicator
            .iter()
            .zip(&other.indicator)
            .all(|(a, b)| !(*a && *b))
    }

    /// Node-wise union of the leader and follower masks.
    pub fn union(u1: &SubdomainMask, u2: &SubdomainMask) -> Result<SubdomainMask> {
        if u1.indicator.len() != u2.indicator.len() {
            return Err(Error::ShapeMismatch("masks live on different grids".into()));
        }
        if !u1.is_disjoint(u2) {
            return Err(Error::InvalidMask("U1 and U2 overlap".into()));
        }
        Ok(SubdomainMask {
            indicator: u1
                .indicator
                .iter()
                .zip(&u2.indicator)
                .map(|(a, b)| *a || *b)
                .collect(),
            label: MaskLabel::U,
        })
    }

    /// Zero every value off the mask, slice by slice.
    pub fn apply(&self, values: &mut [f64]) {
        let n = self.indicator.len();
        for chunk in values.chunks_mut(n) {
            for (v, &on) in chunk.iter_mut().zip(&self.indicator) {
                if !on {
                    *v = 0.0;
                }
            }
        }
    }
}

/// Mask of the interior nodes lying in `region` (closed box).
pub fn make_mask(grid: &Grid, region: &BoxRegion, label: MaskLabel) -> Result<SubdomainMask> {
    let dim = grid.dim();
    if region.lower.len() != dim || region.upper.len() != dim {
        return Err(Error::InvalidMask(format!(
            "box has {} / {} bounds for a {dim}-dimensional grid",
            region.lower.len(),
            region.upper.len()
        )));
    }
    for axis in 0..dim {
        let (lo, hi) = (region.lower[axis], region.upper[axis]);
        if !(lo < hi) {
            return Err(Error::InvalidMask(format!("axis {axis}: box [{lo}, {hi}] is empty")));
        }
        if lo < grid.lower()[axis] || hi > grid.upper()[axis] {
            return Err(Error::InvalidMask(format!(
                "axis {axis}: box [{lo}, {hi}] leaves the domain [{}, {}]",
                grid.lower()[axis],
                grid.upper()[axis]
            )));
        }
    }
    let eps = 1e-12;
    let mut indicator = vec![false; grid.n_nodes()];
    let mut x = vec![0.0; dim];
    for &node in grid.interior_nodes() {
        grid.coords_into(node, &mut x);
        let inside = (0..dim).all(|a| x[a] >= region.lower[a] - eps && x[a] <= region.upper[a] + eps);
        indicator[node] = inside;
    }
    let mask = SubdomainMask { indicator, label };
    if mask.count() == 0 {
        return Err(Error::InvalidMask("box contains no interior node".into()));
    }
    Ok(mask)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FieldKind {
    Slice,
    SpaceTime,
}

/// Scalar grid function, either one spatial slice or all stored time slices.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    kind: FieldKind,
    n_nodes: usize,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros_slice(grid: &Grid) -> Self {
        Field {
            kind: FieldKind::Slice,
            n_nodes: grid.n_nodes(),
            values: vec![0.0; grid.n_nodes()],
        }
    }

    pub fn zeros_spacetime(grid: &Grid) -> Self {
        Field {
            kind: FieldKind::SpaceTime,
            n_nodes: grid.n_nodes(),
            values: vec![0.0; grid.n_nodes() * grid.n_time_steps()],
        }
    }

    pub fn from_values(grid: &Grid, kind: FieldKind, values: Vec<f64>) -> Result<Self> {
        let expected = match kind {
            FieldKind::Slice => grid.n_nodes(),
            FieldKind::SpaceTime => grid.n_nodes() * grid.n_time_steps(),
        };
        if values.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "{kind:?} field needs {expected} values, got {}",
                values.len()
            )));
        }
        Ok(Field {
            kind,
            n_nodes: grid.n_nodes(),
            values,
        })
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut x = vec![0.0; grid.dim()];
        let values = (0..grid.n_nodes())
            .map(|n| {
                grid.coords_into(n, &mut x);
                f(&x)
            })
            .collect();
        Field {
            kind: FieldKind::Slice,
            n_nodes: grid.n_nodes(),
            values,
        }
    }

    /// Space-time field sampled at the stored slice times.
    pub fn spacetime_from_fn(grid: &Grid, f: impl Fn(f64, &[f64]) -> f64) -> Self {
        let mut x = vec![0.0; grid.dim()];
        let mut values = Vec::with_capacity(grid.n_nodes() * grid.n_time_steps());
        for k in 0..grid.n_time_steps() {
            let t = grid.slice_time(k);
            for n in 0..grid.n_nodes() {
                grid.coords_into(n, &mut x);
                values.push(f(t, &x));
            }
        }
        Field {
            kind: FieldKind::SpaceTime,
            n_nodes: grid.n_nodes(),
            values,
        }
    }

    /// Space-time field whose every slice equals `slice`.
    pub fn repeat_slice(grid: &Grid, slice: &Field) -> Self {
        let mut values = Vec::with_capacity(grid.n_nodes() * grid.n_time_steps());
        for _ in 0..grid.n_time_steps() {
            values.extend_from_slice(&slice.values);
        }
        Field {
            kind: FieldKind::SpaceTime,
            n_nodes: grid.n_nodes(),
            values,
        }
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_slices(&self) -> usize {
        self.values.len() / self.n_nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        &self.values[k * self.n_nodes..(k + 1) * self.n_nodes]
    }

    pub fn slice_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.n_nodes..(k + 1) * self.n_nodes]
    }

    /// Slice `k` of a space-time field as a standalone slice field.
    pub fn slice_field(&self, k: usize) -> Field {
        Field {
            kind: FieldKind::Slice,
            n_nodes: self.n_nodes,
            values: self.slice(k).to_vec(),
        }
    }

    /// Last stored slice, i.e. the value at `t = T`.
    pub fn terminal(&self) -> Field {
        self.slice_field(self.n_slices() - 1)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn zero_boundary(&mut self, grid: &Grid) {
        let n = self.n_nodes;
        for chunk in self.values.chunks_mut(n) {
            for (node, v) in chunk.iter_mut().enumerate() {
                if grid.is_boundary(node) {
                    *v = 0.0;
                }
            }
        }
    }

    pub fn vanishes_on_boundary(&self, grid: &Grid) -> bool {
        self.values
            .chunks(self.n_nodes)
            .all(|chunk| chunk.iter().enumerate().all(|(n, v)| !grid.is_boundary(n) || *v == 0.0))
    }

    fn check_same(&self, other: &Field) -> Result<()> {
        if self.kind != other.kind || self.values.len() != other.values.len() {
            return Err(Error::ShapeMismatch(format!(
                "{:?}[{}] vs {:?}[{}]",
                self.kind,
                self.values.len(),
                other.kind,
                other.values.len()
            )));
        }
        Ok(())
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &Field) -> Result<()> {
        self.check_same(other)?;
        for (s, o) in self.values.iter_mut().zip(&other.values) {
            *s += a * o;
        }
        Ok(())
    }

    pub fn scale(&mut self, a: f64) {
        self.values.iter_mut().for_each(|v| *v *= a);
    }

    pub fn scaled(&self, a: f64) -> Field {
        let mut f = self.clone();
        f.scale(a);
        f
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        let mut f = self.clone();
        f.axpy(-1.0, other)?;
        Ok(f)
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        let mut f = self.clone();
        f.axpy(1.0, other)?;
        Ok(f)
    }

    pub fn norm(&self, grid: &Grid) -> f64 {
        inner_product(self, self, grid).map(f64::sqrt).unwrap_or(f64::NAN)
    }
}

/// Discrete L2 product: trapezoidal in space, right-endpoint rule in time.
pub fn inner_product(a: &Field, b: &Field, grid: &Grid) -> Result<f64> {
    a.check_same(b)?;
    if a.n_nodes != grid.n_nodes() {
        return Err(Error::ShapeMismatch(format!(
            "field has {} nodes, grid has {}",
            a.n_nodes,
            grid.n_nodes()
        )));
    }
    let w = grid.weights();
    let slice_dot = |x: &[f64], y: &[f64]| -> f64 { x.iter().zip(y).zip(w).map(|((p, q), w)| w * p * q).sum() };
    Ok(match a.kind {
        FieldKind::Slice => slice_dot(&a.values, &b.values),
        FieldKind::SpaceTime => {
            if a.n_slices() != grid.n_time_steps() {
                return Err(Error::ShapeMismatch(format!(
                    "space-time field has {} slices, grid has {} steps",
                    a.n_slices(),
                    grid.n_time_steps()
                )));
            }
            let n = grid.n_nodes();
            grid.dt()
                * a.values
                    .chunks(n)
                    .zip(b.values.chunks(n))
                    .map(|(x, y)| slice_dot(x, y))
                    .sum::<f64>()
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Leader,
    Follower,
}

/// Space-time control supported on a subdomain.
#[derive(Clone, Debug, PartialEq)]
pub struct Control {
    values: Field,
    mask: SubdomainMask,
    role: Role,
}

impl Control {
    /// Wraps `values`, zeroing everything off `mask`.
    pub fn new(mut values: Field, mask: SubdomainMask, role: Role) -> Result<Self> {
        if values.kind() != FieldKind::SpaceTime {
            return Err(Error::ShapeMismatch("controls are space-time fields".into()));
        }
        if values.n_nodes() != mask.indicator.len() {
            return Err(Error::ShapeMismatch("control and mask live on different grids".into()));
        }
        mask.apply(values.values_mut());
        Ok(Control { values, mask, role })
    }

    pub fn zeros(grid: &Grid, mask: &SubdomainMask, role: Role) -> Self {
        Control {
            values: Field::zeros_spacetime(grid),
            mask: mask.clone(),
            role,
        }
    }

    pub fn values(&self) -> &Field {
        &self.values
    }

    pub fn mask(&self) -> &SubdomainMask {
        &self.mask
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn into_field(self) -> Field {
        self.values
    }

    pub fn norm(&self, grid: &Grid) -> f64 {
        self.values.norm(grid)
    }

    pub fn scaled(&self, a: f64) -> Control {
        Control {
            values: self.values.scaled(a),
            mask: self.mask.clone(),
            role: self.role,
        }
    }

    /// True when every value off the mask is exactly zero.
    pub fn is_supported_on_mask(&self) -> bool {
        let n = self.mask.indicator.len();
        self.values
            .values()
            .chunks(n)
            .all(|c| c.iter().zip(&self.mask.indicator).all(|(v, &on)| on || *v == 0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid17() -> Grid {
        Grid::new(GridConfig::uniform(2, 1, 17, -1.0, 1.0, 32, 1.0)).unwrap()
    }

    #[test]
    fn spacing_and_time_step() {
        let g = grid17();
        assert_eq!(g.spacing(), &[0.125, 0.125]);
        assert_eq!(g.dt(), 1.0 / 32.0);
        assert_eq!(g.n_nodes(), 289);
        assert_eq!(g.n_interior(), 225);
    }

    #[test]
    fn smallest_grid_has_one_interior_node() {
        let g = Grid::new(GridConfig::uniform(2, 1, 3, -1.0, 1.0, 1, 1.0)).unwrap();
        assert_eq!(g.n_interior(), 1);
        assert_eq!(g.coords(g.interior_nodes()[0]), vec![0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = GridConfig::uniform(2, 1, 5, -1.0, 1.0, 4, 1.0);
        cfg.points = vec![0, 5];
        assert!(Grid::new(cfg).is_err());
        let mut cfg = GridConfig::uniform(2, 1, 5, -1.0, 1.0, 4, 1.0);
        cfg.lower[1] = 2.0;
        assert!(Grid::new(cfg).is_err());
        let mut cfg = GridConfig::uniform(2, 1, 5, -1.0, 1.0, 4, 1.0);
        cfg.points.push(5);
        assert!(Grid::new(cfg).is_err());
        assert!(Grid::new(GridConfig::uniform(2, 1, 5, -1.0, 1.0, 0, 1.0)).is_err());
        assert!(Grid::new(GridConfig::uniform(2, 1, 5, -1.0, 1.0, 4, -1.0)).is_err());
        assert!(Grid::new(GridConfig::uniform(1, 2, 5, -1.0, 1.0, 4, 1.0)).is_err());
    }

    #[test]
    fn whole_interior_mask() {
        let g = grid17();
        let region = BoxRegion {
            lower: vec![-1.0, -1.0],
            upper: vec![1.0, 1.0],
        };
        let m = make_mask(&g, &region, MaskLabel::U).unwrap();
        assert_eq!(m.count(), g.n_interior());
        assert!(g.interior_nodes().iter().all(|&n| m.contains(n)));
    }

    #[test]
    fn disjoint_boxes_and_union() {
        let g = grid17();
        let u1 = make_mask(
            &g,
            &BoxRegion {
                lower: vec![-0.8, -0.8],
                upper: vec![-0.2, 0.8],
            },
            MaskLabel::U1,
        )
        .unwrap();
        let u2 = make_mask(
            &g,
            &BoxRegion {
                lower: vec![0.2, -0.8],
                upper: vec![0.8, 0.8],
            },
            MaskLabel::U2,
        )
        .unwrap();
        assert!(u1.is_disjoint(&u2));
        let u = SubdomainMask::union(&u1, &u2).unwrap();
        assert_eq!(u.count(), u1.count() + u2.count());
        assert!(SubdomainMask::union(&u1, &u1).is_err());
    }

    #[test]
    fn box_outside_or_empty_is_rejected() {
        let g = grid17();
        let outside = BoxRegion {
            lower: vec![1.5, 1.5],
            upper: vec![2.0, 2.0],
        };
        assert!(make_mask(&g, &outside, MaskLabel::U1).is_err());
        let between_nodes = BoxRegion {
            lower: vec![0.01, 0.01],
            upper: vec![0.1, 0.1],
        };
        assert!(make_mask(&g, &between_nodes, MaskLabel::U1).is_err());
    }

    #[test]
    fn measure_of_square() {
        let g = grid17();
        let one = Field::from_fn(&g, |_| 1.0);
        assert_abs_diff_eq!(inner_product(&one, &one, &g).unwrap(), 4.0, epsilon = 1e-12);
        let zero = Field::zeros_slice(&g);
        assert_eq!(inner_product(&one, &zero, &g).unwrap(), 0.0);
    }

    #[test]
    fn sine_square_integral_converges_at_second_order() {
        // closed form: int_{-1}^{1} sin^2(pi x) dx * int_{-1}^{1} dy = 1 * 2
        let mut errs = Vec::new();
        for p in [9usize, 17, 33] {
            let g = Grid::new(GridConfig::uniform(2, 1, p, -1.0, 1.0, 1, 1.0)).unwrap();
            let f = Field::from_fn(&g, |x| (std::f64::consts::PI * x[0]).sin());
            let v = inner_product(&f, &f, &g).unwrap();
            errs.push((v - 2.0).abs());
            assert!((v - 2.0).abs() <= 4.0 * g.spacing()[0].powi(2));
        }
        assert!(errs.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    }

    #[test]
    fn spacetime_product_integrates_over_time() {
        let g = grid17();
        let one = Field::spacetime_from_fn(&g, |_, _| 1.0);
        assert_abs_diff_eq!(inner_product(&one, &one, &g).unwrap(), 4.0, epsilon = 1e-12);
        assert!(inner_product(&one, &Field::from_fn(&g, |_| 1.0), &g).is_err());
    }

    #[test]
    fn control_is_masked_and_mask_is_idempotent() {
        let g = grid17();
        let u1 = make_mask(
            &g,
            &BoxRegion {
                lower: vec![-0.8, -0.8],
                upper: vec![-0.2, 0.8],
            },
            MaskLabel::U1,
        )
        .unwrap();
        let raw = Field::spacetime_from_fn(&g, |t, x| 1.0 + t + x[0] * x[1]);
        let c = Control::new(raw, u1.clone(), Role::Leader).unwrap();
        assert!(c.is_supported_on_mask());
        let mut twice = c.values().clone();
        u1.apply(twice.values_mut());
        assert_eq!(&twice, c.values());
    }

    #[test]
    fn interpolation_reproduces_bilinear_functions() {
        let g = Grid::new(GridConfig::uniform(2, 1, 9, -1.0, 1.0, 1, 1.0)).unwrap();
        let f = Field::from_fn(&g, |x| 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1]);
        for p in [[0.13, -0.41], [0.0, 0.0], [-0.99, 0.77]] {
            let exact = 1.0 + 2.0 * p[0] - p[1] + 0.5 * p[0] * p[1];
            assert_abs_diff_eq!(g.interpolate(f.values(), &p), exact, epsilon = 1e-13);
        }
    }
}
