use alloc::vec;
use alloc::vec::Vec;

use super::PerronError;
use crate::grid::{discrete_jet, ValueField};
use crate::model::{ControlProblem, PointClass};

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    /// Hessian shifts `λ` applied as `D²u ± λI`.
    pub lambdas: Vec<f64>,
    pub tol: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { lambdas: vec![1e-6, 1e-2, 1.0], tol: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRecord {
    pub node: usize,
    pub point: Vec<f64>,
    pub class: PointClass,
    /// Worst subsolution residual over the shifts; `≤ tol` passes.
    pub sub_residual: f64,
    /// Worst supersolution residual over the shifts; `≥ −tol` passes.
    pub super_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViscosityReport {
    pub records: Vec<ProbeRecord>,
    /// Nodes without a usable discrete jet.
    pub skipped: Vec<usize>,
    pub tol: f64,
    pub max_sub: f64,
    pub min_super: f64,
    pub sub_pass: bool,
    pub super_pass: bool,
}

/// Probes the viscosity inequalities at grid nodes with quadratic test
/// functions built from the discrete jet. On `∂G` the generalized boundary
/// condition is used: `min(βu − H, u − g) ≤ 0` and `max(βu − H, u − g) ≥ 0`.
pub fn viscosity_probe(
    p: &ControlProblem,
    field: &ValueField,
    nodes: &[usize],
    cfg: &ProbeConfig,
) -> Result<ViscosityReport, PerronError> {
    if cfg.lambdas.is_empty() || cfg.lambdas.iter().any(|l| !(*l >= 0.0)) {
        return Err(PerronError::Config("probe shifts must be nonnegative".into()));
    }
    let grid = field.grid();
    let d = grid.dim();
    let beta = p.discount();
    let mut records = Vec::with_capacity(nodes.len());
    let mut skipped = Vec::new();
    for &node in nodes {
        if node >= grid.len() {
            return Err(PerronError::Config(alloc::format!("node {node} is not on the grid")));
        }
        let class = grid.class(node);
        if class == PointClass::Exterior {
            continue;
        }
        let Some((grad, hess)) = discrete_jet(grid, field.values(), node) else {
            skipped.push(node);
            continue;
        };
        let x = grid.coords(node);
        let u = field.value(node);
        let mut sub = f64::NEG_INFINITY;
        let mut sup = f64::INFINITY;
        let mut shifted = hess.clone();
        for &lambda in &cfg.lambdas {
            for i in 0..d {
                shifted[i * d + i] = hess[i * d + i] + lambda;
            }
            sub = sub.max(beta * u - p.hamiltonian(&x, &grad, &shifted)?.value);
            for i in 0..d {
                shifted[i * d + i] = hess[i * d + i] - lambda;
            }
            sup = sup.min(beta * u - p.hamiltonian(&x, &grad, &shifted)?.value);
        }
        if class == PointClass::Boundary {
            let gap = u - p.boundary_at(&x)?;
            sub = sub.min(gap);
            sup = sup.max(gap);
        }
        records.push(ProbeRecord { node, point: x, class, sub_residual: sub, super_residual: sup });
    }
    let max_sub = records.iter().map(|r| r.sub_residual).fold(f64::NEG_INFINITY, f64::max);
    let min_super = records.iter().map(|r| r.super_residual).fold(f64::INFINITY, f64::min);
    Ok(ViscosityReport {
        sub_pass: max_sub <= cfg.tol,
        super_pass: min_super >= -cfg.tol,
        records,
        skipped,
        tol: cfg.tol,
        max_sub,
        min_super,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::testing::{p1, sinh_oracle};
    use alloc::sync::Arc;

    #[test]
    fn analytic_solution_passes_both_probes() {
        let p = p1();
        let g = Arc::new(Grid::new(p.domain(), &[1025]).unwrap());
        let v = ValueField::from_fn(g.clone(), |x| sinh_oracle(x[0])).unwrap();
        let nodes: Vec<usize> = (0..g.len()).collect();
        let r = viscosity_probe(&p, &v, &nodes, &ProbeConfig::default()).unwrap();
        assert!(r.sub_pass && r.super_pass, "{} {}", r.max_sub, r.min_super);
        assert!(r.skipped.is_empty());
    }

    #[test]
    fn shifted_solution_fails_one_side() {
        let p = p1();
        let g = Arc::new(Grid::new(p.domain(), &[257]).unwrap());
        let nodes: Vec<usize> = (0..g.len()).collect();
        let up = ValueField::from_fn(g.clone(), |x| sinh_oracle(x[0]) + 0.1).unwrap();
        let r = viscosity_probe(&p, &up, &nodes, &ProbeConfig::default()).unwrap();
        assert!(!r.sub_pass && r.super_pass);
        let down = ValueField::from_fn(g, |x| sinh_oracle(x[0]) - 0.1).unwrap();
        let r = viscosity_probe(&p, &down, &nodes, &ProbeConfig::default()).unwrap();
        assert!(r.sub_pass && !r.super_pass);
    }

    #[test]
    fn rejects_negative_shift() {
        let p = p1();
        let g = Arc::new(Grid::new(p.domain(), &[9]).unwrap());
        let v = ValueField::constant(g, 0.0);
        let cfg = ProbeConfig { lambdas: vec![-1.0], tol: 1e-3 };
        assert!(matches!(viscosity_probe(&p, &v, &[1], &cfg), Err(PerronError::Config(_))));
    }
}
