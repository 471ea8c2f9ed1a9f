use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::{discretize, Grid, GridError, PolicyField, Scheme, ValueField};
use crate::linalg::BandMatrix;
use crate::model::{ControlProblem, PointClass};

/// How each Howard step evaluates the current policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyEvaluation {
    /// Banded LU on `(I − W_π) v = r_π`.
    Direct,
    /// Undamped fixed-point sweeps in red/black order down to `tol / 10`.
    RedBlack { max_sweeps: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_outer: usize,
    pub evaluation: PolicyEvaluation,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: 1e-10, max_outer: 200, evaluation: PolicyEvaluation::Direct }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub value: ValueField,
    pub policy: PolicyField,
    pub converged: bool,
    pub outer_iterations: usize,
    /// Total red/black sweeps (zero for direct evaluation).
    pub inner_sweeps: usize,
    /// `max_k |v_k − max_a T_a v_k|` over interior nodes.
    pub fixed_point_residual: f64,
    /// Largest drop `v_prev − v_next` between successive policy evaluations.
    pub ascent_violation: f64,
    /// Sup-norm change at the last outer iteration.
    pub last_change: f64,
}

pub fn solve_policy_iteration(
    scheme: &Scheme,
    options: SolveOptions,
) -> Result<Solution, GridError> {
    if !(options.tol > 0.0) {
        return Err(GridError::Tolerance);
    }
    let grid = scheme.grid().clone();
    let n_int = scheme.interior().len();
    let na = scheme.n_actions();
    let mut values = scheme.dirichlet_values().to_vec();
    let mut policy = vec![0usize; n_int];
    let mut outer = 0;
    let mut sweeps = 0;
    let mut ascent_violation: f64 = 0.0;
    let mut last_change = 0.0;
    let mut converged = n_int == 0;

    if n_int > 0 {
        improve(scheme, &values, &mut policy);
        let mut evaluated = false;
        while outer < options.max_outer {
            outer += 1;
            let next = match options.evaluation {
                PolicyEvaluation::Direct => evaluate_direct(scheme, &policy, &values)?,
                PolicyEvaluation::RedBlack { max_sweeps } => {
                    let (v, s) =
                        evaluate_red_black(scheme, &policy, &values, options.tol / 10.0, max_sweeps);
                    sweeps += s;
                    v
                }
            };
            let mut change: f64 = 0.0;
            for &node in scheme.interior() {
                let delta = next[node] - values[node];
                change = change.max(delta.abs());
                if evaluated {
                    ascent_violation = ascent_violation.max(-delta);
                }
            }
            values = next;
            last_change = change;
            let mut candidate = policy.clone();
            improve(scheme, &values, &mut candidate);
            let stable = candidate == policy;
            policy = candidate;
            if (evaluated && change < options.tol) || stable {
                converged = true;
                break;
            }
            evaluated = true;
        }
    }

    let mut residual: f64 = 0.0;
    for (k, &node) in scheme.interior().iter().enumerate() {
        let best = (0..na)
            .map(|a| scheme.row(k, a).apply(&values))
            .fold(f64::NEG_INFINITY, f64::max);
        residual = residual.max((values[node] - best).abs());
    }
    let value = ValueField::from_parts(grid.clone(), values, true);
    let policy = PolicyField::new(grid, scheme.problem().control_set().clone(), &policy)?;
    Ok(Solution {
        value,
        policy,
        converged,
        outer_iterations: outer,
        inner_sweeps: sweeps,
        fixed_point_residual: residual,
        ascent_violation,
        last_change,
    })
}

/// Greedy step: per interior node the first action maximizing the row value.
fn improve(scheme: &Scheme, values: &[f64], policy: &mut [usize]) {
    for (k, slot) in policy.iter_mut().enumerate() {
        let mut best = f64::NEG_INFINITY;
        let mut arg = 0;
        for a in 0..scheme.n_actions() {
            let v = scheme.row(k, a).apply(values);
            if v > best {
                best = v;
                arg = a;
            }
        }
        *slot = arg;
    }
}

fn evaluate_direct(
    scheme: &Scheme,
    policy: &[usize],
    template: &[f64],
) -> Result<Vec<f64>, GridError> {
    let n = scheme.interior().len();
    let mut kl = 0usize;
    let mut ku = 0usize;
    for (k, &a) in policy.iter().enumerate() {
        for &(j, _) in &scheme.row(k, a).weights {
            if let Some(kj) = scheme.interior_position(j) {
                if kj < k {
                    kl = kl.max(k - kj);
                } else {
                    ku = ku.max(kj - k);
                }
            }
        }
    }
    let mut m = BandMatrix::zeros(n, kl, ku);
    let mut rhs = vec![0.0; n];
    let dirichlet = scheme.dirichlet_values();
    for (k, &a) in policy.iter().enumerate() {
        let row = scheme.row(k, a);
        m.add(k, k, 1.0);
        let mut r = row.reward + row.boundary_term;
        for &(j, w) in &row.weights {
            match scheme.interior_position(j) {
                Some(kj) => m.add(k, kj, -w),
                None => r += w * dirichlet[j],
            }
        }
        rhs[k] = r;
    }
    let sol = m
        .solve(&rhs)
        .ok_or_else(|| GridError::Degenerate("singular policy-evaluation system".into()))?;
    let mut values = template.to_vec();
    for (k, &node) in scheme.interior().iter().enumerate() {
        values[node] = sol[k];
    }
    Ok(values)
}

fn evaluate_red_black(
    scheme: &Scheme,
    policy: &[usize],
    start: &[f64],
    tol: f64,
    max_sweeps: usize,
) -> (Vec<f64>, usize) {
    let grid = scheme.grid();
    let color: Vec<usize> = scheme
        .interior()
        .iter()
        .map(|&node| grid.multi_index(node).iter().sum::<usize>() % 2)
        .collect();
    let mut values = start.to_vec();
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        sweeps += 1;
        let mut change: f64 = 0.0;
        for c in 0..2 {
            for (k, &node) in scheme.interior().iter().enumerate() {
                if color[k] != c {
                    continue;
                }
                let v = scheme.row(k, policy[k]).apply(&values);
                change = change.max((v - values[node]).abs());
                values[node] = v;
            }
        }
        if change < tol {
            break;
        }
    }
    (values, sweeps)
}

/// Per-node HJB residual `β v − max_a [f + Σ c_y (v_y − v)]` with the
/// solver's stencils.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    /// `(node, residual)` for every interior node.
    pub per_node: Vec<(usize, f64)>,
    pub sup: f64,
    pub mean: f64,
}

pub fn bellman_residual(p: &ControlProblem, field: &ValueField) -> Result<ResidualReport, GridError> {
    let scheme = discretize(p, field.grid().clone())?;
    bellman_residual_with(&scheme, field)
}

pub fn bellman_residual_with(
    scheme: &Scheme,
    field: &ValueField,
) -> Result<ResidualReport, GridError> {
    if !field.grid().same_as(scheme.grid()) {
        return Err(GridError::GridMismatch);
    }
    let beta = scheme.problem().discount();
    let values = field.values();
    let mut per_node = Vec::with_capacity(scheme.interior().len());
    for (k, &node) in scheme.interior().iter().enumerate() {
        let best = (0..scheme.n_actions())
            .map(|a| scheme.stencil(k, a).apply(values))
            .fold(f64::NEG_INFINITY, f64::max);
        per_node.push((node, beta * values[node] - best));
    }
    let sup = per_node.iter().map(|(_, r)| r.abs()).fold(0.0, f64::max);
    let mean = if per_node.is_empty() {
        0.0
    } else {
        per_node.iter().map(|(_, r)| r.abs()).sum::<f64>() / per_node.len() as f64
    };
    Ok(ResidualReport { per_node, sup, mean })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinementRow {
    /// Coarse spacing (largest axis) of the compared pair.
    pub h: f64,
    pub diff_sup: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementTable {
    pub rows: Vec<RefinementRow>,
    /// Differences strictly decrease down the table.
    pub monotone: bool,
}

/// Solves on each resolution (same count on every axis) and compares
/// successive solutions on the coarse nodes.
pub fn refine_study(
    p: &ControlProblem,
    resolutions: &[usize],
    options: SolveOptions,
) -> Result<RefinementTable, GridError> {
    for w in resolutions.windows(2) {
        if w[1] - 1 != 2 * (w[0] - 1) {
            return Err(GridError::NotNested(w[0], w[1]));
        }
    }
    let d = p.dim_state();
    let mut solutions: Vec<ValueField> = Vec::new();
    if resolutions.len() >= 2 {
        for &n in resolutions {
            let grid = Arc::new(Grid::new(p.domain(), &vec![n; d])?);
            let scheme = discretize(p, grid)?;
            solutions.push(solve_policy_iteration(&scheme, options)?.value);
        }
    }
    let mut rows = Vec::new();
    for pair in solutions.windows(2) {
        let (coarse, fine) = (&pair[0], &pair[1]);
        let cg = coarse.grid();
        let fg = fine.grid();
        let mut diff: f64 = 0.0;
        for node in 0..cg.len() {
            if cg.class(node) == PointClass::Exterior {
                continue;
            }
            let fine_multi: Vec<usize> = cg.multi_index(node).iter().map(|i| 2 * i).collect();
            let fnode = fg.linear_index(&fine_multi);
            diff = diff.max((coarse.value(node) - fine.value(fnode)).abs());
        }
        rows.push(RefinementRow { h: cg.max_spacing(), diff_sup: diff });
    }
    let monotone = rows.windows(2).all(|w| w[1].diff_sup < w[0].diff_sup);
    Ok(RefinementTable { rows, monotone })
}
