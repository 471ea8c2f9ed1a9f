//! Rectangular lattices over `Ḡ`, sampled fields on them, and the monotone
//! HJB solver.

mod scheme;
mod solve;

pub use scheme::{discretize, Scheme, SchemeRow, Stencil, StencilTarget};
pub use solve::{
    bellman_residual, bellman_residual_with, refine_study, solve_policy_iteration, PolicyEvaluation, RefinementRow,
    RefinementTable, ResidualReport, Solution, SolveOptions,
};

use alloc::collections::VecDeque;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::model::{ControlProblem, ControlSet, DomainGeometry, ModelError, PointClass};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("resolution {0} on axis {1} is below the minimum of 3")]
    Resolution(usize, usize),
    #[error("grid dimension {0} is not supported (1..=3)")]
    Dimension(usize),
    #[error("degenerate grid: {0}")]
    Degenerate(alloc::string::String),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("point {0:?} lies outside every grid cell")]
    OutsideGrid(Vec<f64>),
    #[error("field has {got} values, grid has {expected} nodes")]
    FieldLength { expected: usize, got: usize },
    #[error(
        "monotonicity violated at node {node} (action {action}): weight deficit {deficit:e}"
    )]
    Monotonicity { node: usize, action: usize, deficit: f64 },
    #[error("unsupported stencil at node {node}: {reason}")]
    Stencil { node: usize, reason: &'static str },
    #[error("tolerance must be positive")]
    Tolerance,
    #[error("refinement levels must be nested (n_fine - 1 = 2 (n_coarse - 1)); got {0} then {1}")]
    NotNested(usize, usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Uniform tensor lattice covering the bounding box of `Ḡ`. Node indices are
/// linear with the first axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    counts: Vec<usize>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
    classes: Vec<PointClass>,
    domain: DomainGeometry,
}

pub fn build_grid(domain: &DomainGeometry, resolution: &[usize]) -> Result<Grid, GridError> {
    Grid::new(domain, resolution)
}

impl Grid {
    pub fn new(domain: &DomainGeometry, resolution: &[usize]) -> Result<Grid, GridError> {
        let d = domain.dim();
        if d == 0 || d > 3 {
            return Err(GridError::Dimension(d));
        }
        if resolution.len() != d {
            return Err(GridError::Degenerate(alloc::format!(
                "{} resolutions for a {}-dimensional domain",
                resolution.len(),
                d
            )));
        }
        for (axis, &n) in resolution.iter().enumerate() {
            if n < 3 {
                return Err(GridError::Resolution(n, axis + 1));
            }
        }
        let (lo, hi) = domain.bounding_box();
        let spacing: Vec<f64> =
            (0..d).map(|i| (hi[i] - lo[i]) / ((resolution[i] - 1) as f64)).collect();
        if spacing.iter().any(|h| !(*h > 0.0)) {
            return Err(GridError::Degenerate("zero spacing".into()));
        }
        let mut strides = vec![1usize; d];
        for i in 1..d {
            strides[i] = strides[i - 1] * resolution[i - 1];
        }
        let mut grid = Grid {
            counts: resolution.to_vec(),
            lo,
            hi,
            spacing,
            strides,
            classes: Vec::new(),
            domain: domain.clone(),
        };
        let n: usize = resolution.iter().product();
        let mut x = vec![0.0; d];
        grid.classes = (0..n)
            .map(|idx| {
                grid.coords_into(idx, &mut x);
                domain.classify(&x)
            })
            .collect();
        Ok(grid)
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(0.0, f64::max)
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn domain(&self) -> &DomainGeometry {
        &self.domain
    }

    pub fn class(&self, idx: usize) -> PointClass {
        self.classes[idx]
    }

    pub fn classes(&self) -> &[PointClass] {
        &self.classes
    }

    pub fn axis_coord(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.counts[axis] {
            self.hi[axis]
        } else {
            self.lo[axis] + (i as f64) * self.spacing[axis]
        }
    }

    pub fn multi_index(&self, idx: usize) -> Vec<usize> {
        let mut rem = idx;
        self.counts
            .iter()
            .map(|&n| {
                let i = rem % n;
                rem /= n;
                i
            })
            .collect()
    }

    pub fn linear_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn coords(&self, idx: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        self.coords_into(idx, &mut x);
        x
    }

    pub fn coords_into(&self, idx: usize, out: &mut [f64]) {
        let mut rem = idx;
        for axis in 0..self.dim() {
            let n = self.counts[axis];
            out[axis] = self.axis_coord(axis, rem % n);
            rem /= n;
        }
    }

    /// Neighbor `idx + offset·e_axis`, if it exists on the lattice.
    pub fn neighbor(&self, idx: usize, axis: usize, offset: isize) -> Option<usize> {
        let i = (idx / self.strides[axis]) % self.counts[axis];
        let j = i as isize + offset;
        if j < 0 || j >= self.counts[axis] as isize {
            return None;
        }
        Some((idx as isize + offset * self.strides[axis] as isize) as usize)
    }

    /// Neighbor that exists and is not exterior.
    pub fn inside_neighbor(&self, idx: usize, axis: usize, offset: isize) -> Option<usize> {
        self.neighbor(idx, axis, offset).filter(|&j| self.classes[j] != PointClass::Exterior)
    }

    pub fn interior_nodes(&self) -> Vec<usize> {
        self.nodes_of(PointClass::Interior)
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        self.nodes_of(PointClass::Boundary)
    }

    fn nodes_of(&self, class: PointClass) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.classes[i] == class).collect()
    }

    /// Nearest lattice node to `x` (coordinates clamped to the box).
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let multi: Vec<usize> = (0..self.dim())
            .map(|axis| {
                let s = (x[axis] - self.lo[axis]) / self.spacing[axis];
                let r = libm::round(s);
                (r.max(0.0) as usize).min(self.counts[axis] - 1)
            })
            .collect();
        self.linear_index(&multi)
    }

    /// Same lattice (counts, extent, domain).
    pub fn same_as(&self, other: &Grid) -> bool {
        core::ptr::eq(self, other)
            || (self.counts == other.counts
                && self.lo == other.lo
                && self.hi == other.hi
                && self.domain == other.domain)
    }

    /// Multilinear interpolation of node values. Coordinates within 1e-10
    /// cell widths of a node snap to it, so nodes reproduce exactly.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> Result<f64, GridError> {
        let d = self.dim();
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for axis in 0..d {
            let n = self.counts[axis];
            let s = (x[axis] - self.lo[axis]) / self.spacing[axis];
            if !(s >= -1e-9 && s <= (n - 1) as f64 + 1e-9) {
                return Err(GridError::OutsideGrid(x.to_vec()));
            }
            let r = libm::round(s);
            if (s - r).abs() <= 1e-10 {
                let i = r as usize;
                // a snapped top node becomes the right end of the last cell
                if i == n - 1 {
                    base[axis] = n - 2;
                    frac[axis] = 1.0;
                } else {
                    base[axis] = i;
                    frac[axis] = 0.0;
                }
            } else {
                let i = (libm::floor(s).max(0.0) as usize).min(n - 2);
                base[axis] = i;
                frac[axis] = (s - i as f64).clamp(0.0, 1.0);
            }
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = 0;
            for axis in 0..d {
                let hi = (corner >> axis) & 1 == 1;
                let t = frac[axis];
                if hi {
                    if t == 0.0 {
                        w = 0.0;
                        break;
                    }
                    w *= t;
                    idx += (base[axis] + 1) * self.strides[axis];
                } else {
                    if t == 1.0 {
                        w = 0.0;
                        break;
                    }
                    w *= 1.0 - t;
                    idx += base[axis] * self.strides[axis];
                }
            }
            if w != 0.0 {
                acc += w * values[idx];
            }
        }
        Ok(acc)
    }
}

/// Grid-sampled candidate function on `Ḡ` (a value function estimate, a
/// stochastic semi-solution, a test function).
///
/// Exterior nodes (ball domains) carry an extension used only by the
/// interpolation in cells that straddle the curved boundary.
#[derive(Debug, Clone)]
pub struct ValueField {
    grid: Arc<Grid>,
    values: Vec<f64>,
    boundary_consistent: bool,
}

impl ValueField {
    pub fn new(
        grid: Arc<Grid>,
        values: Vec<f64>,
        boundary_consistent: bool,
    ) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::FieldLength { expected: grid.len(), got: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::Degenerate(alloc::format!("non-finite value at node {}", i)));
        }
        Ok(ValueField { grid, values, boundary_consistent })
    }

    pub fn constant(grid: Arc<Grid>, c: f64) -> Self {
        let n = grid.len();
        ValueField { grid, values: vec![c; n], boundary_consistent: false }
    }

    pub fn from_fn(grid: Arc<Grid>, mut f: impl FnMut(&[f64]) -> f64) -> Result<Self, GridError> {
        let mut x = vec![0.0; grid.dim()];
        let values = (0..grid.len())
            .map(|i| {
                grid.coords_into(i, &mut x);
                f(&x)
            })
            .collect();
        ValueField::new(grid, values, false)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, node: usize) -> f64 {
        self.values[node]
    }

    pub fn is_boundary_consistent(&self) -> bool {
        self.boundary_consistent
    }

    /// Re-derives the flag: boundary node values equal `g` within `τ_geo`
    /// (relative to `max(1, |g|)`).
    pub fn with_boundary_check(mut self, p: &ControlProblem) -> Result<Self, GridError> {
        self.boundary_consistent = self.matches_boundary_data(p)?;
        Ok(self)
    }

    pub fn matches_boundary_data(&self, p: &ControlProblem) -> Result<bool, GridError> {
        let mut x = vec![0.0; self.grid.dim()];
        for i in self.grid.boundary_nodes() {
            self.grid.coords_into(i, &mut x);
            let g = p.boundary_at(&x)?;
            if (self.values[i] - g).abs() > crate::model::GEOMETRY_TOL * g.abs().max(1.0) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn same_grid(&self, other: &ValueField) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || self.grid.same_as(&other.grid)
    }

    pub fn interpolate(&self, x: &[f64]) -> Result<f64, GridError> {
        self.grid.interpolate(&self.values, x)
    }

    /// Reads the field the way the stopped process sees it: on `∂G` a
    /// boundary-consistent field reports `g`, everywhere else the
    /// interpolant.
    pub fn value_at(&self, p: &ControlProblem, x: &[f64]) -> Result<f64, GridError> {
        if self.boundary_consistent && p.domain().classify(x) != PointClass::Interior {
            let y = p.domain().project_to_boundary(x);
            return Ok(p.boundary_at(&y)?);
        }
        self.interpolate(x)
    }

    /// Max of `|value|` over non-exterior nodes.
    pub fn sup_norm(&self) -> f64 {
        self.values
            .iter()
            .zip(self.grid.classes())
            .filter(|(_, c)| **c != PointClass::Exterior)
            .map(|(v, _)| v.abs())
            .fold(0.0, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ValueField {
        ValueField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            boundary_consistent: false,
        }
    }

    /// Applies `f` at interior nodes only; boundary and exterior nodes and
    /// the boundary flag are kept.
    pub fn map_interior(&self, f: impl Fn(f64) -> f64) -> ValueField {
        let values = self
            .values
            .iter()
            .zip(self.grid.classes())
            .map(|(&v, c)| if *c == PointClass::Interior { f(v) } else { v })
            .collect();
        ValueField { grid: self.grid.clone(), values, boundary_consistent: self.boundary_consistent }
    }

    pub(crate) fn from_parts(grid: Arc<Grid>, values: Vec<f64>, boundary_consistent: bool) -> Self {
        ValueField { grid, values, boundary_consistent }
    }
}

/// Feedback control sampled on the grid. Every non-interior node carries
/// the action of its nearest interior node (breadth-first over lattice
/// neighbors) so lookups near `∂G` stay meaningful.
#[derive(Debug, Clone)]
pub struct PolicyField {
    grid: Arc<Grid>,
    control: ControlSet,
    actions: Vec<usize>,
}

impl PolicyField {
    /// `interior_actions[k]` is the `A_h` index at the k-th interior node.
    pub fn new(
        grid: Arc<Grid>,
        control: ControlSet,
        interior_actions: &[usize],
    ) -> Result<Self, GridError> {
        let interior = grid.interior_nodes();
        if interior.len() != interior_actions.len() {
            return Err(GridError::FieldLength {
                expected: interior.len(),
                got: interior_actions.len(),
            });
        }
        if interior_actions.iter().any(|&a| a >= control.len()) {
            return Err(GridError::Degenerate("policy action outside A_h".into()));
        }
        let n = grid.len();
        let mut actions = vec![usize::MAX; n];
        let mut queue = VecDeque::new();
        for (&node, &a) in interior.iter().zip(interior_actions) {
            actions[node] = a;
            queue.push_back(node);
        }
        while let Some(node) = queue.pop_front() {
            for axis in 0..grid.dim() {
                for off in [-1isize, 1] {
                    if let Some(nb) = grid.neighbor(node, axis, off) {
                        if actions[nb] == usize::MAX {
                            actions[nb] = actions[node];
                            queue.push_back(nb);
                        }
                    }
                }
            }
        }
        for a in actions.iter_mut() {
            if *a == usize::MAX {
                *a = 0;
            }
        }
        Ok(PolicyField { grid, control, actions })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn control_set(&self) -> &ControlSet {
        &self.control
    }

    pub fn action_index(&self, node: usize) -> usize {
        self.actions[node]
    }

    pub fn action_at_node(&self, node: usize) -> &[f64] {
        self.control.action(self.actions[node])
    }

    /// Nearest-node lookup.
    pub fn lookup(&self, x: &[f64]) -> &[f64] {
        self.action_at_node(self.grid.nearest_node(x))
    }
}

/// Discrete jet (gradient and Hessian) of node values at `node`: central
/// differences where both neighbors exist, one-sided three-point formulas
/// otherwise. `None` when some axis has no usable stencil.
pub(crate) fn discrete_jet(
    grid: &Grid,
    values: &[f64],
    node: usize,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let d = grid.dim();
    let mut grad = vec![0.0; d];
    let mut hess = vec![0.0; d * d];
    let u0 = values[node];
    for i in 0..d {
        let h = grid.spacing()[i];
        let fwd = grid.inside_neighbor(node, i, 1);
        let bwd = grid.inside_neighbor(node, i, -1);
        match (fwd, bwd) {
            (Some(f), Some(b)) => {
                grad[i] = (values[f] - values[b]) / (2.0 * h);
                hess[i * d + i] = (values[f] - 2.0 * u0 + values[b]) / (h * h);
            }
            (Some(f), None) => {
                let ff = grid.inside_neighbor(node, i, 2)?;
                grad[i] = (-3.0 * u0 + 4.0 * values[f] - values[ff]) / (2.0 * h);
                hess[i * d + i] = (u0 - 2.0 * values[f] + values[ff]) / (h * h);
            }
            (None, Some(b)) => {
                let bb = grid.inside_neighbor(node, i, -2)?;
                grad[i] = (3.0 * u0 - 4.0 * values[b] + values[bb]) / (2.0 * h);
                hess[i * d + i] = (u0 - 2.0 * values[b] + values[bb]) / (h * h);
            }
            (None, None) => return None,
        }
    }
    for i in 0..d {
        for j in (i + 1)..d {
            let hi = grid.spacing()[i];
            let hj = grid.spacing()[j];
            let diag = |si: isize, sj: isize| -> Option<f64> {
                let a = grid.neighbor(node, i, si)?;
                let b = grid.neighbor(a, j, sj)?;
                (grid.class(b) != PointClass::Exterior).then(|| values[b])
            };
            let mixed = match (diag(1, 1), diag(1, -1), diag(-1, 1), diag(-1, -1)) {
                (Some(pp), Some(pm), Some(mp), Some(mm)) => (pp - pm - mp + mm) / (4.0 * hi * hj),
                _ => {
                    // one-sided in whichever quadrant is available
                    let mut found = None;
                    for (si, sj) in [(1isize, 1isize), (1, -1), (-1, 1), (-1, -1)] {
                        let (Some(ui), Some(uj), Some(uij)) = (
                            grid.inside_neighbor(node, i, si),
                            grid.inside_neighbor(node, j, sj),
                            diag(si, sj),
                        ) else {
                            continue;
                        };
                        let s = (si * sj) as f64;
                        found = Some(s * (uij - values[ui] - values[uj] + u0) / (hi * hj));
                        break;
                    }
                    found?
                }
            };
            hess[i * d + j] = mixed;
            hess[j * d + i] = mixed;
        }
    }
    Some((grad, hess))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::p1;

    fn unit_interval(n: usize) -> Arc<Grid> {
        Arc::new(Grid::new(&DomainGeometry::new_box(&[(0.0, 1.0)]).unwrap(), &[n]).unwrap())
    }

    #[test]
    fn build_grid_examples() {
        let g = unit_interval(5);
        let xs: Vec<f64> = (0..5).map(|i| g.coords(i)[0]).collect();
        assert_eq!(xs, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.boundary_nodes(), vec![0, 4]);
        assert_eq!(g.interior_nodes().len(), 3);

        let disc = DomainGeometry::new_ball(&[0.0, 0.0], 1.0).unwrap();
        let g = Grid::new(&disc, &[9, 9]).unwrap();
        assert_eq!(g.class(0), PointClass::Exterior);
        assert_eq!(g.class(80), PointClass::Exterior);
        assert_eq!(g.class(g.linear_index(&[4, 4])), PointClass::Interior);
        assert_eq!(g.class(g.linear_index(&[8, 4])), PointClass::Boundary);

        let err = Grid::new(&DomainGeometry::new_box(&[(0.0, 1.0)]).unwrap(), &[2]).unwrap_err();
        assert_eq!(err, GridError::Resolution(2, 1));
    }

    #[test]
    fn interpolation_examples() {
        let g = unit_interval(5);
        let f = ValueField::from_fn(g.clone(), |x| x[0] * x[0]).unwrap();
        for i in 0..5 {
            assert_eq!(f.interpolate(&g.coords(i)).unwrap(), f.value(i));
        }
        let two = unit_interval(3);
        let lin = ValueField::new(two, vec![0.0, 0.0, 1.0], false).unwrap();
        assert_eq!(lin.interpolate(&[0.75]).unwrap(), 0.5);
        assert!(matches!(f.interpolate(&[1.5]), Err(GridError::OutsideGrid(_))));
    }

    #[test]
    fn bilinear_is_exact_on_bilinear_functions() {
        let b = DomainGeometry::new_box(&[(0.0, 1.0), (0.0, 2.0)]).unwrap();
        let g = Arc::new(Grid::new(&b, &[5, 9]).unwrap());
        let f = ValueField::from_fn(g, |x| 1.0 + 2.0 * x[0] - x[1] + 3.0 * x[0] * x[1]).unwrap();
        for &(x, y) in &[(0.1, 0.3), (0.77, 1.91), (0.5, 0.25), (1.0, 2.0)] {
            let v = f.interpolate(&[x, y]).unwrap();
            assert!((v - (1.0 + 2.0 * x - y + 3.0 * x * y)).abs() < 1e-13);
        }
    }

    #[test]
    fn policy_fill_uses_nearest_interior_action() {
        let g = unit_interval(5);
        let c = ControlSet::new(&[(-1.0, 1.0)], &[3]).unwrap();
        let pf = PolicyField::new(g, c, &[0, 1, 2]).unwrap();
        assert_eq!(pf.lookup(&[0.0]), &[-1.0]);
        assert_eq!(pf.lookup(&[0.99]), &[1.0]);
        assert_eq!(pf.lookup(&[0.5]), &[0.0]);
    }

    #[test]
    fn boundary_consistency_flag() {
        let g = unit_interval(5);
        let v = ValueField::from_fn(g, |x| x[0]).unwrap().with_boundary_check(&p1()).unwrap();
        assert!(v.is_boundary_consistent());
        let w = v.map(|t| t + 0.1).with_boundary_check(&p1()).unwrap();
        assert!(!w.is_boundary_consistent());
        assert_eq!(v.value_at(&p1(), &[1.0]).unwrap(), 1.0);
    }

    #[test]
    fn jet_of_quadratic() {
        let b = DomainGeometry::new_box(&[(0.0, 1.0), (0.0, 1.0)]).unwrap();
        let g = Arc::new(Grid::new(&b, &[9, 9]).unwrap());
        let f = ValueField::from_fn(g.clone(), |x| x[0] * x[0] + 3.0 * x[0] * x[1] - x[1]).unwrap();
        for node in [g.linear_index(&[4, 4]), g.linear_index(&[0, 3]), g.linear_index(&[8, 8])] {
            let x = g.coords(node);
            let (grad, hess) = discrete_jet(&g, f.values(), node).unwrap();
            assert!((grad[0] - (2.0 * x[0] + 3.0 * x[1])).abs() < 1e-12);
            assert!((grad[1] - (3.0 * x[0] - 1.0)).abs() < 1e-12);
            assert!((hess[0] - 2.0).abs() < 1e-9);
            assert!((hess[1] - 3.0).abs() < 1e-9);
            assert!(hess[3].abs() < 1e-9);
        }
    }
}
