use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::{Grid, GridError};
use crate::model::{ControlProblem, PointClass};

/// Where a stencil coefficient points: a lattice node, or a point on a
/// curved boundary between a node and its exterior neighbor (cut cell),
/// which carries the Dirichlet value `g` there.
#[derive(Debug, Clone, PartialEq)]
pub enum StencilTarget {
    Node(usize),
    Boundary { point: Vec<f64>, value: f64 },
}

/// Raw generator stencil at one interior node for one action:
/// `f + Σ c_y (v_y − v)` approximates `f + L^a v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stencil {
    pub node: usize,
    pub action: usize,
    pub running: f64,
    pub coeffs: Vec<(StencilTarget, f64)>,
}

impl Stencil {
    /// `Q = Σ c_y`.
    pub fn total(&self) -> f64 {
        self.coeffs.iter().map(|(_, c)| c).sum()
    }

    /// `f + Σ c_y (v_y − v)` for node values `v` (boundary targets read their own value).
    pub fn apply(&self, values: &[f64]) -> f64 {
        let v0 = values[self.node];
        self.running
            + self
                .coeffs
                .iter()
                .map(|(t, c)| {
                    let vy = match t {
                        StencilTarget::Node(j) => values[*j],
                        StencilTarget::Boundary { value, .. } => *value,
                    };
                    c * (vy - v0)
                })
                .sum::<f64>()
    }
}

/// Substochastic Markov-chain row: the update
/// `v ← reward + boundary_term + Σ weight_j v_j` for one (node, action).
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeRow {
    pub node: usize,
    pub action: usize,
    /// Weights to lattice nodes, sorted by node index.
    pub weights: Vec<(usize, f64)>,
    /// Σ weight · g over cut-cell boundary targets.
    pub boundary_term: f64,
    /// Σ weight over cut-cell boundary targets.
    pub boundary_weight: f64,
    /// `f / (β + Q)`
    pub reward: f64,
    /// `1 / Q` (infinite when the row has no transitions).
    pub dt_eff: f64,
    /// `Q = Σ c_y`
    pub total_rate: f64,
}

impl SchemeRow {
    /// Sum of all transition weights; strictly below one whenever `β > 0`.
    pub fn weight_sum(&self) -> f64 {
        self.boundary_weight + self.weights.iter().map(|(_, w)| w).sum::<f64>()
    }

    pub fn apply(&self, values: &[f64]) -> f64 {
        self.reward
            + self.boundary_term
            + self.weights.iter().map(|&(j, w)| w * values[j]).sum::<f64>()
    }
}

/// All scheme rows for a problem on a grid, indexed by
/// `interior_position · |A_h| + action`.
#[derive(Debug, Clone)]
pub struct Scheme {
    grid: Arc<Grid>,
    problem: ControlProblem,
    interior: Vec<usize>,
    position: Vec<usize>,
    n_actions: usize,
    stencils: Vec<Stencil>,
    rows: Vec<SchemeRow>,
    dirichlet: Vec<f64>,
}

impl Scheme {
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn problem(&self) -> &ControlProblem {
        &self.problem
    }

    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    /// Position of `node` among the interior nodes.
    pub fn interior_position(&self, node: usize) -> Option<usize> {
        let k = self.position[node];
        (k != usize::MAX).then_some(k)
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn rows(&self) -> &[SchemeRow] {
        &self.rows
    }

    pub fn row(&self, k: usize, action: usize) -> &SchemeRow {
        &self.rows[k * self.n_actions + action]
    }

    pub fn stencil(&self, k: usize, action: usize) -> &Stencil {
        &self.stencils[k * self.n_actions + action]
    }

    /// Node values outside the unknowns: `g` on boundary nodes, `g` at the
    /// projection onto `∂G` on exterior nodes, zero on interior nodes.
    pub fn dirichlet_values(&self) -> &[f64] {
        &self.dirichlet
    }
}

const NEGATIVE_ROUNDOFF: f64 = 1e-12;

/// Builds the Kushner–Dupuis monotone rows: upwind first differences for
/// the drift, (non-uniform) central second differences on the diagonal of
/// `σσᵀ`, and the seven-point split stencil for cross terms in `d = 2`.
pub fn discretize(p: &ControlProblem, grid: Arc<Grid>) -> Result<Scheme, GridError> {
    let d = grid.dim();
    if d != p.dim_state() || grid.domain() != p.domain() {
        return Err(GridError::Degenerate("grid does not cover the problem domain".into()));
    }
    let beta = p.discount();
    let interior = grid.interior_nodes();
    let mut position = vec![usize::MAX; grid.len()];
    for (k, &node) in interior.iter().enumerate() {
        position[node] = k;
    }
    let mut dirichlet = vec![0.0; grid.len()];
    let mut x = vec![0.0; d];
    for node in 0..grid.len() {
        match grid.class(node) {
            PointClass::Interior => {}
            PointClass::Boundary => {
                grid.coords_into(node, &mut x);
                dirichlet[node] = p.boundary_at(&x)?;
            }
            PointClass::Exterior => {
                grid.coords_into(node, &mut x);
                dirichlet[node] = p.boundary_at(&p.domain().project_to_boundary(&x))?;
            }
        }
    }

    let n_actions = p.control_set().len();
    let mut stencils = Vec::with_capacity(interior.len() * n_actions);
    let mut rows = Vec::with_capacity(interior.len() * n_actions);
    let mut b = vec![0.0; d];
    let mut cov = vec![0.0; d * d];
    for &node in &interior {
        grid.coords_into(node, &mut x);
        for (ai, a) in p.control_set().iter().enumerate() {
            p.drift_at(&x, a, &mut b)?;
            p.covariance_at(&x, a, &mut cov)?;
            let f = p.running_at(&x, a)?;
            let st = build_stencil(p, &grid, node, ai, &x, &b, &cov, f)?;
            rows.push(normalize(&st, beta));
            stencils.push(st);
        }
    }
    Ok(Scheme { grid, problem: p.clone(), interior, position, n_actions, stencils, rows, dirichlet })
}

#[allow(clippy::too_many_arguments)]
fn build_stencil(
    p: &ControlProblem,
    grid: &Grid,
    node: usize,
    action: usize,
    x: &[f64],
    b: &[f64],
    cov: &[f64],
    running: f64,
) -> Result<Stencil, GridError> {
    let d = grid.dim();
    let mut coeffs: Vec<(StencilTarget, f64)> = Vec::with_capacity(4 * d);
    let mut add = |target: StencilTarget, c: f64| {
        if c == 0.0 {
            return;
        }
        if let Some(e) = coeffs.iter_mut().find(|(t, _)| *t == target) {
            e.1 += c;
        } else {
            coeffs.push((target, c));
        }
    };

    for i in 0..d {
        let h = grid.spacing()[i];
        let side = |dir: isize| -> Result<(StencilTarget, f64), GridError> {
            match grid.inside_neighbor(node, i, dir) {
                Some(j) => Ok((StencilTarget::Node(j), h)),
                None => {
                    let t = p.domain().axis_distance_to_boundary(x, i, dir as f64);
                    if !(t > 0.0) || t > h * (1.0 + 1e-12) {
                        return Err(GridError::Stencil {
                            node,
                            reason: "interior node without a neighbor along an axis",
                        });
                    }
                    let mut y = x.to_vec();
                    y[i] += dir as f64 * t;
                    let y = p.domain().project_to_boundary(&y);
                    let value = p.boundary_at(&y)?;
                    Ok((StencilTarget::Boundary { point: y, value }, t))
                }
            }
        };
        let (fwd, hp) = side(1)?;
        let (bwd, hm) = side(-1)?;
        let aii = cov[i * d + i];
        let bp = b[i].max(0.0);
        let bm = (-b[i]).max(0.0);
        add(fwd, aii / (hp * (hp + hm)) + bp / hp);
        add(bwd, aii / (hm * (hp + hm)) + bm / hm);
    }

    for i in 0..d {
        for j in (i + 1)..d {
            let aij = cov[i * d + j];
            if aij.abs() <= 1e-14 {
                continue;
            }
            if d > 2 {
                return Err(GridError::Stencil {
                    node,
                    reason: "cross-derivative terms are supported only for d <= 2",
                });
            }
            let hij = grid.spacing()[i] * grid.spacing()[j];
            let s: isize = if aij > 0.0 { 1 } else { -1 };
            let c = aij.abs() / (2.0 * hij);
            let missing = GridError::Stencil {
                node,
                reason: "cross-derivative stencil leaves the lattice",
            };
            let nb = |axis: usize, dir: isize| {
                grid.inside_neighbor(node, axis, dir).ok_or_else(|| missing.clone())
            };
            let diag = |si: isize, sj: isize| {
                grid.neighbor(node, i, si)
                    .and_then(|n1| grid.neighbor(n1, j, sj))
                    .filter(|&n2| grid.class(n2) != PointClass::Exterior)
                    .ok_or_else(|| missing.clone())
            };
            let (ip, im, jp, jm) = (nb(i, 1)?, nb(i, -1)?, nb(j, 1)?, nb(j, -1)?);
            let (d1, d2) = (diag(1, s)?, diag(-1, -s)?);
            add(StencilTarget::Node(d1), c);
            add(StencilTarget::Node(d2), c);
            for n in [ip, im, jp, jm] {
                add(StencilTarget::Node(n), -c);
            }
        }
    }

    let scale = coeffs.iter().map(|(_, c)| c.abs()).fold(0.0, f64::max);
    for (_, c) in coeffs.iter_mut() {
        if *c < 0.0 {
            if *c >= -NEGATIVE_ROUNDOFF * scale {
                *c = 0.0;
            } else {
                return Err(GridError::Monotonicity { node, action, deficit: -*c });
            }
        }
    }
    coeffs.retain(|(_, c)| *c > 0.0);
    coeffs.sort_by(|a, b| match (&a.0, &b.0) {
        (StencilTarget::Node(x), StencilTarget::Node(y)) => x.cmp(y),
        (StencilTarget::Node(_), _) => core::cmp::Ordering::Less,
        (_, StencilTarget::Node(_)) => core::cmp::Ordering::Greater,
        _ => core::cmp::Ordering::Equal,
    });
    Ok(Stencil { node, action, running, coeffs })
}

fn normalize(st: &Stencil, beta: f64) -> SchemeRow {
    let q = st.total();
    let denom = beta + q;
    let mut weights = Vec::with_capacity(st.coeffs.len());
    let mut boundary_term = 0.0;
    let mut boundary_weight = 0.0;
    for (t, c) in &st.coeffs {
        let w = c / denom;
        match t {
            StencilTarget::Node(j) => weights.push((*j, w)),
            StencilTarget::Boundary { value, .. } => {
                boundary_term += w * value;
                boundary_weight += w;
            }
        }
    }
    SchemeRow {
        node: st.node,
        action: st.action,
        weights,
        boundary_term,
        boundary_weight,
        reward: st.running / denom,
        dt_eff: if q > 0.0 { 1.0 / q } else { f64::INFINITY },
        total_rate: q,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ValueField;
    use crate::model::{ControlSet, DomainGeometry, ProblemBuilder};
    use crate::testing::{disc, p1, p2, p3};

    fn grid_for(p: &ControlProblem, n: usize) -> Arc<Grid> {
        Arc::new(Grid::new(p.domain(), &vec![n; p.dim_state()]).unwrap())
    }

    #[test]
    fn p1_center_row() {
        let p = p1();
        let s = discretize(&p, grid_for(&p, 5)).unwrap();
        let row = s.row(1, 0);
        assert_eq!(row.node, 2);
        assert_eq!(row.weights, vec![(1, 8.0 / 17.0), (3, 8.0 / 17.0)]);
        assert!((row.weight_sum() - 16.0 / 17.0).abs() < 1e-15);
        assert_eq!(row.dt_eff, 1.0 / 16.0);
    }

    #[test]
    fn exact_on_quadratics() {
        let p = p1();
        let g = grid_for(&p, 9);
        let s = discretize(&p, g.clone()).unwrap();
        let phi = ValueField::from_fn(g, |x| x[0] * x[0]).unwrap();
        for k in 0..s.interior().len() {
            let st = s.stencil(k, 0);
            let v = phi.value(st.node);
            let r = p.discount() * v - st.apply(phi.values());
            assert!((r - (v - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn upwind_direction() {
        let p = p2();
        let s = discretize(&p, grid_for(&p, 5)).unwrap();
        let up = s.stencil(1, 20);
        let down = s.stencil(1, 0);
        let h = 0.25;
        let c = |st: &Stencil, n: usize| {
            st.coeffs.iter().find(|(t, _)| *t == StencilTarget::Node(n)).unwrap().1
        };
        assert_eq!(c(up, 3) - c(up, 1), 1.0 / h);
        assert_eq!(c(down, 1) - c(down, 3), 1.0 / h);
    }

    #[test]
    fn cut_cells_on_disc() {
        let p = disc();
        let g = grid_for(&p, 10);
        let s = discretize(&p, g).unwrap();
        let mut cut = 0;
        for row in s.rows() {
            assert!(row.weights.iter().all(|(_, w)| *w >= 0.0));
            assert!(row.weight_sum() < 1.0);
            cut += (row.boundary_weight > 0.0) as usize;
        }
        assert!(cut > 0);
        // harmonic x1 is reproduced up to the cut-cell first-order error
        for k in 0..s.interior().len() {
            let st = s.stencil(k, 0);
            let vals: Vec<f64> = (0..s.grid().len()).map(|i| s.grid().coords(i)[0]).collect();
            let lap = st.apply(&vals);
            assert!(lap.abs() < 1e-9, "{lap}");
        }
    }

    #[test]
    fn cross_terms_and_dominance() {
        let base = |sigma: [[&str; 2]; 2]| {
            ProblemBuilder::new(2, 2)
                .discount(1.0)
                .drift(&["0", "0"])
                .diffusion(&sigma)
                .running("0")
                .boundary("0")
                .control(ControlSet::new(&[(0.0, 0.0)], &[1]).unwrap())
                .domain(DomainGeometry::new_box(&[(0.0, 1.0), (0.0, 1.0)]).unwrap())
                .build()
                .unwrap()
        };
        // σσᵀ = [[1, 0.5], [0.5, 1.25]]: dominant, seven points
        let ok = base([["1", "0"], ["0.5", "1"]]);
        let s = discretize(&ok, grid_for(&ok, 5)).unwrap();
        assert_eq!(s.stencil(4, 0).coeffs.len(), 6);
        let g = s.grid().clone();
        let q = ValueField::from_fn(g, |x| x[0] * x[1] + x[0] * x[0]).unwrap();
        let st = s.stencil(4, 0);
        assert!((st.apply(q.values()) - (0.5 + 1.0)).abs() < 1e-12);
        // σσᵀ = [[1, 3], [3, 10]] is not diagonally dominant
        let bad = base([["1", "0"], ["3", "1"]]);
        match discretize(&bad, grid_for(&bad, 5)).unwrap_err() {
            GridError::Monotonicity { deficit, .. } => assert!(deficit > 0.0),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn all_catalog_rows_nonnegative() {
        for p in [p1(), p2(), p3(), disc()] {
            let s = discretize(&p, grid_for(&p, 17)).unwrap();
            for row in s.rows() {
                assert!(row.weights.iter().all(|(_, w)| *w >= 0.0));
                assert!(row.boundary_weight >= 0.0);
                assert!(row.weight_sum() <= 1.0);
            }
        }
    }
}
