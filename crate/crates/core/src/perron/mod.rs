//! Stochastic Perron apparatus: constant certificates, lattice closure,
//! Z-process sub/supermartingale tests, bump constructions, monotone
//! envelopes, viscosity probes, the sandwich check and DPP residuals.
//!
//! A stochastic subsolution needs *some* control making its Z-process
//! submartingale-like; that control is supplied by a [`ControlBuilder`].
//! A stochastic supersolution must work for *every* control; the test
//! samples a finite list. Reports name exactly what was tested.

mod bump;
mod probe;
mod verify;

pub use bump::{
    bump_down, bump_up, envelope_iterate, BumpBuilder, BumpOutcome, BumpRejection, BumpSpec,
    EnvelopeConfig, EnvelopeResult, EnvelopeSeed, LocalJetProposer,
};
pub use probe::{viscosity_probe, ProbeConfig, ProbeRecord, ViscosityReport};
pub use verify::{
    check_sandwich, dpp_residual, DppConfig, DppPoint, DppReport, DppRuleRecord, SandwichReport,
};

use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::grid::{Grid, GridError, ValueField};
use crate::model::{ControlProblem, ModelError, PointClass};
use crate::sim::{
    mean_se, simulate_with, z_process, ControlBuilder, ControlSpec, RandomizedStart, SimError,
    SimParams, StoppingRule,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PerronError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(
        "boundary condition violated for the {direction} test at x={point:?}: \
         candidate {value}, g {g} (excess {excess:e})"
    )]
    BoundaryViolation { direction: Direction, point: Vec<f64>, value: f64, g: f64, excess: f64 },
    #[error("bump rejected: {0}")]
    BumpRejected(BumpRejection),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Sub,
    Super,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Sub => "sub",
            Direction::Super => "super",
        })
    }
}

/// `min{f̲/β, g̲}` from the sampled reward bounds.
pub fn subsolution_constant(p: &ControlProblem) -> f64 {
    let b = p.reward_bounds();
    (b.f_min / p.discount()).min(b.g_min)
}

/// `max{f̄/β, ḡ}` from the sampled reward bounds.
pub fn supersolution_constant(p: &ControlProblem) -> f64 {
    let b = p.reward_bounds();
    (b.f_max / p.discount()).max(b.g_max)
}

pub fn constant_subsolution(
    p: &ControlProblem,
    grid: Arc<Grid>,
) -> Result<ValueField, PerronError> {
    Ok(ValueField::constant(grid, subsolution_constant(p)).with_boundary_check(p)?)
}

pub fn constant_supersolution(
    p: &ControlProblem,
    grid: Arc<Grid>,
) -> Result<ValueField, PerronError> {
    Ok(ValueField::constant(grid, supersolution_constant(p)).with_boundary_check(p)?)
}

fn lattice_op(
    a: &ValueField,
    b: &ValueField,
    op: fn(f64, f64) -> f64,
) -> Result<ValueField, PerronError> {
    if !a.same_grid(b) {
        return Err(GridError::GridMismatch.into());
    }
    let values = a.values().iter().zip(b.values()).map(|(&x, &y)| op(x, y)).collect();
    Ok(ValueField::new(
        a.grid().clone(),
        values,
        a.is_boundary_consistent() && b.is_boundary_consistent(),
    )?)
}

/// Nodewise maximum.
pub fn lattice_join(a: &ValueField, b: &ValueField) -> Result<ValueField, PerronError> {
    lattice_op(a, b, f64::max)
}

/// Nodewise minimum.
pub fn lattice_meet(a: &ValueField, b: &ValueField) -> Result<ValueField, PerronError> {
    lattice_op(a, b, f64::min)
}

/// Selects, per start `ξ`, the builder of the candidate with the largest
/// value at `ξ`, the earlier entry winning ties. With two entries this is
/// the composite that uses `B1` on `{u1(ξ) ≥ u2(ξ)}` and `B2` elsewhere.
#[derive(Clone)]
pub struct MaxSelectBuilder {
    problem: ControlProblem,
    entries: Vec<(ValueField, Arc<dyn ControlBuilder>)>,
}

impl MaxSelectBuilder {
    pub fn new(problem: ControlProblem, entries: Vec<(ValueField, Arc<dyn ControlBuilder>)>) -> Self {
        MaxSelectBuilder { problem, entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn select(&self, start: &[f64]) -> Option<&Arc<dyn ControlBuilder>> {
        let mut best: Option<(f64, &Arc<dyn ControlBuilder>)> = None;
        for (field, builder) in &self.entries {
            let v = field.value_at(&self.problem, start).unwrap_or(f64::NEG_INFINITY);
            if best.is_none_or(|(b, _)| v > b) {
                best = Some((v, builder));
            }
        }
        best.map(|(_, b)| b)
    }
}

impl ControlBuilder for MaxSelectBuilder {
    fn control_for(&self, t0: f64, start: &[f64]) -> ControlSpec {
        match self.select(start) {
            Some(b) => b.control_for(t0, start),
            None => ControlSpec::Constant(self.problem.control_set().action(0).to_vec()),
        }
    }

    fn describe(&self) -> String {
        alloc::format!("max-select over {} candidates", self.entries.len())
    }
}

/// Simulation and tolerance settings shared by the martingale tests.
#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleConfig {
    pub dt: f64,
    pub n_paths: usize,
    pub t_max: f64,
    pub seed: u64,
    pub rules: Vec<StoppingRule>,
    /// Exit-bias coefficient; defaults to `0.5 (‖u‖∞ + ‖f‖∞/β)`.
    pub c_bias: Option<f64>,
}

impl MartingaleConfig {
    pub fn new(p: &ControlProblem, dt: f64, n_paths: usize, t_max: f64, seed: u64) -> Self {
        MartingaleConfig {
            dt,
            n_paths,
            t_max,
            seed,
            rules: StoppingRule::default_family(p.domain()),
            c_bias: None,
        }
    }

    fn params(&self) -> SimParams {
        SimParams {
            dt: self.dt,
            n_paths: self.n_paths,
            t_max: self.t_max,
            seed: self.seed,
            record_paths: true,
        }
    }
}

/// One (control, stopping rule) line of a martingale test.
#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleRecord {
    pub control: String,
    pub rule: String,
    /// Mean of `Z_ρ − Z_τ`.
    pub mean: f64,
    pub se: f64,
    pub n: usize,
    pub censored: usize,
    pub eps_stat: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleReport {
    pub direction: Direction,
    pub records: Vec<MartingaleRecord>,
    pub c_bias: f64,
    pub dt: f64,
    pub pass: bool,
}

impl MartingaleReport {
    /// Most adverse record: smallest `mean + eps` (sub) or largest
    /// `mean − eps` (super).
    pub fn worst(&self) -> Option<&MartingaleRecord> {
        let key = |r: &MartingaleRecord| match self.direction {
            Direction::Sub => r.mean + r.eps_stat,
            Direction::Super => -(r.mean - r.eps_stat),
        };
        self.records.iter().min_by(|a, b| key(a).total_cmp(&key(b)))
    }
}

fn default_c_bias(p: &ControlProblem, u: &ValueField) -> f64 {
    0.5 * (u.sup_norm() + p.reward_bounds().f_sup_norm() / p.discount())
}

/// Points on `∂G` where the boundary inequality is checked: boundary grid
/// nodes plus the deterministic boundary sample of the domain.
fn boundary_points(p: &ControlProblem, u: &ValueField) -> Vec<Vec<f64>> {
    let grid = u.grid();
    let mut pts: Vec<Vec<f64>> = grid.boundary_nodes().into_iter().map(|i| grid.coords(i)).collect();
    pts.extend(p.domain().boundary_sample(9));
    pts
}

fn check_boundary(
    p: &ControlProblem,
    u: &ValueField,
    direction: Direction,
    tol: f64,
) -> Result<(), PerronError> {
    for y in boundary_points(p, u) {
        let value = u.interpolate(&y)?;
        let g = p.boundary_at(&y)?;
        let excess = match direction {
            Direction::Sub => value - g,
            Direction::Super => g - value,
        };
        if excess > tol {
            return Err(PerronError::BoundaryViolation { direction, point: y, value, g, excess });
        }
    }
    Ok(())
}

fn records_for(
    p: &ControlProblem,
    u: &ValueField,
    builder: &dyn ControlBuilder,
    starts: &RandomizedStart,
    cfg: &MartingaleConfig,
    c_bias: f64,
    direction: Direction,
) -> Result<Vec<MartingaleRecord>, PerronError> {
    let batch = simulate_with(p, starts, builder, &cfg.params())?;
    let bias = c_bias * libm::sqrt(cfg.dt);
    let mut out = Vec::with_capacity(cfg.rules.len());
    for rule in &cfg.rules {
        let pairs = z_process(p, u, &batch, rule)?;
        let diffs: Vec<f64> = pairs.iter().map(|z| z.z_stop - z.z_start).collect();
        let (mean, se) = mean_se(&diffs);
        let eps_stat = 3.0 * se + bias;
        let pass = match direction {
            Direction::Sub => mean >= -eps_stat,
            Direction::Super => mean <= eps_stat,
        };
        out.push(MartingaleRecord {
            control: batch.control.clone(),
            rule: rule.to_string(),
            mean,
            se,
            n: diffs.len(),
            censored: pairs.iter().filter(|z| z.censored).count(),
            eps_stat,
            pass,
        });
    }
    Ok(out)
}

/// Statistical check that `u` is a stochastic subsolution: `u ≤ g` on the
/// sampled boundary and, under the control produced by `builder`, the mean
/// of `Z_ρ − Z_τ` is `≥ −ε_stat` for every tested stopping rule.
pub fn test_submartingale(
    p: &ControlProblem,
    u: &ValueField,
    builder: &dyn ControlBuilder,
    starts: &RandomizedStart,
    cfg: &MartingaleConfig,
) -> Result<MartingaleReport, PerronError> {
    let c_bias = cfg.c_bias.unwrap_or_else(|| default_c_bias(p, u));
    check_boundary(p, u, Direction::Sub, c_bias * libm::sqrt(cfg.dt) + 1e-9)?;
    let records = records_for(p, u, builder, starts, cfg, c_bias, Direction::Sub)?;
    let pass = records.iter().all(|r| r.pass);
    Ok(MartingaleReport { direction: Direction::Sub, records, c_bias, dt: cfg.dt, pass })
}

/// Statistical check that `w` is a stochastic supersolution: `w ≥ g` on the
/// sampled boundary and, for every listed control, the mean of
/// `Z_ρ − Z_τ` is `≤ ε_stat`. All controls share the seed (common random
/// numbers).
pub fn test_supermartingale(
    p: &ControlProblem,
    w: &ValueField,
    controls: &[ControlSpec],
    starts: &RandomizedStart,
    cfg: &MartingaleConfig,
) -> Result<MartingaleReport, PerronError> {
    if controls.is_empty() {
        return Err(PerronError::Config("no controls to test".into()));
    }
    let c_bias = cfg.c_bias.unwrap_or_else(|| default_c_bias(p, w));
    check_boundary(p, w, Direction::Super, c_bias * libm::sqrt(cfg.dt) + 1e-9)?;
    let mut records = Vec::new();
    for ctrl in controls {
        records.extend(records_for(p, w, ctrl, starts, cfg, c_bias, Direction::Super)?);
    }
    let pass = records.iter().all(|r| r.pass);
    Ok(MartingaleReport { direction: Direction::Super, records, c_bias, dt: cfg.dt, pass })
}

/// Every constant action in `A_h`, the sampled control family used for
/// supersolution tests by default.
pub fn constant_controls(p: &ControlProblem) -> Vec<ControlSpec> {
    p.control_set().iter().map(|a| ControlSpec::Constant(a.to_vec())).collect()
}

/// Starts drawn uniformly over the interior grid nodes with `τ` uniform on
/// `[0, t0_max]`.
pub fn interior_node_starts(grid: &Grid, t0_max: f64) -> RandomizedStart {
    let nodes = grid
        .classes()
        .iter()
        .enumerate()
        .filter(|(_, c)| **c == PointClass::Interior)
        .map(|(i, _)| grid.coords(i))
        .collect();
    RandomizedStart::UniformNodes { t0_max, nodes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{discretize, solve_policy_iteration, SolveOptions};
    use crate::testing::{p1, p3};
    use alloc::vec;

    fn grid(p: &ControlProblem, n: usize) -> Arc<Grid> {
        Arc::new(Grid::new(p.domain(), &[n]).unwrap())
    }

    #[test]
    fn constant_examples() {
        assert_eq!(subsolution_constant(&p3()), 0.0);
        assert_eq!(supersolution_constant(&p3()), 0.5);
        assert_eq!(subsolution_constant(&p1()), 0.0);
        assert_eq!(supersolution_constant(&p1()), 1.0);
        let p = crate::model::ProblemBuilder::new(1, 1)
            .discount(1.0)
            .drift(&["0"])
            .diffusion(&[["1"]])
            .running("-2")
            .boundary("1")
            .control(crate::model::ControlSet::new(&[(0.0, 0.0)], &[1]).unwrap())
            .domain(crate::model::DomainGeometry::new_box(&[(0.0, 1.0)]).unwrap())
            .build()
            .unwrap();
        assert_eq!(subsolution_constant(&p), -2.0);
        let q = crate::model::ProblemBuilder::new(1, 1)
            .discount(2.0)
            .drift(&["0"])
            .diffusion(&[["1"]])
            .running("4")
            .boundary("1")
            .control(crate::model::ControlSet::new(&[(0.0, 0.0)], &[1]).unwrap())
            .domain(crate::model::DomainGeometry::new_box(&[(0.0, 1.0)]).unwrap())
            .build()
            .unwrap();
        assert_eq!(supersolution_constant(&q), 2.0);
        let g = grid(&p3(), 9);
        assert!(constant_subsolution(&p3(), g.clone()).unwrap().is_boundary_consistent());
        assert!(!constant_supersolution(&p3(), g).unwrap().is_boundary_consistent());
    }

    #[test]
    fn lattice_examples() {
        let g = grid(&p1(), 9);
        let zero = ValueField::constant(g.clone(), 0.0);
        let neg = ValueField::constant(g.clone(), -1.0);
        assert_eq!(lattice_join(&zero, &neg).unwrap().values(), zero.values());
        let u = ValueField::from_fn(g, |x| libm::sin(7.0 * x[0])).unwrap();
        assert_eq!(lattice_meet(&u, &u).unwrap().values(), u.values());
        let other = grid(&p1(), 17);
        assert!(matches!(
            lattice_join(&zero, &ValueField::constant(other, 0.0)),
            Err(PerronError::Grid(GridError::GridMismatch))
        ));
    }

    fn cfg(p: &ControlProblem, n: usize) -> MartingaleConfig {
        MartingaleConfig::new(p, 1e-3, n, 10.0, 17)
    }

    #[test]
    fn constant_certificates_on_p3() {
        let p = p3();
        let g = grid(&p, 17);
        let starts = interior_node_starts(&g, 0.2);
        let u = constant_subsolution(&p, g.clone()).unwrap();
        for a in constant_controls(&p) {
            let r = test_submartingale(&p, &u, &a, &starts, &cfg(&p, 1000)).unwrap();
            assert!(r.pass, "{r:?}");
            assert_eq!(r.records[0].mean, 0.0);
        }
        let w = constant_supersolution(&p, g).unwrap();
        let r = test_supermartingale(&p, &w, &constant_controls(&p), &starts, &cfg(&p, 1000)).unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(r.records.len(), 3 * 6);
    }

    #[test]
    fn shifted_solution_fails() {
        let p = p1();
        let g = grid(&p, 33);
        let sol = solve_policy_iteration(&discretize(&p, g.clone()).unwrap(), SolveOptions::default())
            .unwrap();
        let ctrl = ControlSpec::Markov(Arc::new(sol.policy.clone()));
        let starts = RandomizedStart::at(&[0.5]);
        let mut c = cfg(&p, 2000);
        c.rules = vec![StoppingRule::Start, StoppingRule::Exit];
        let up = sol.value.map_interior(|v| v + 0.2);
        let r = test_submartingale(&p, &up, &ctrl, &starts, &c).unwrap();
        assert!(!r.pass);
        assert!(r.records[0].pass && !r.records[1].pass);
        assert!((r.records[1].mean + 0.2).abs() < 0.05, "{:?}", r.records[1]);
        let down = sol.value.map_interior(|v| v - 0.2);
        let r = test_supermartingale(&p, &down, std::slice::from_ref(&ctrl), &starts, &c).unwrap();
        assert!(!r.pass);
        let r = test_submartingale(&p, &sol.value, &ctrl, &starts, &c).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn boundary_fail_fast() {
        let p = p1();
        let g = grid(&p, 17);
        let high = ValueField::constant(g, 0.5);
        let err = test_submartingale(
            &p,
            &high,
            &ControlSpec::Constant(vec![0.0]),
            &RandomizedStart::at(&[0.5]),
            &cfg(&p, 10),
        )
        .unwrap_err();
        match err {
            PerronError::BoundaryViolation { point, excess, .. } => {
                assert_eq!(point, vec![0.0]);
                assert!((excess - 0.5).abs() < 1e-12);
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn max_select_follows_larger_candidate() {
        let p = p3();
        let g = grid(&p, 9);
        let left = ValueField::from_fn(g.clone(), |x| 1.0 - x[0]).unwrap();
        let right = ValueField::from_fn(g, |x| x[0]).unwrap();
        let b = MaxSelectBuilder::new(
            p.clone(),
            vec![
                (left, Arc::new(ControlSpec::Constant(vec![-1.0])) as Arc<dyn ControlBuilder>),
                (right, Arc::new(ControlSpec::Constant(vec![1.0]))),
            ],
        );
        let pick = |x: f64| match b.control_for(0.0, &[x]) {
            ControlSpec::Constant(a) => a[0],
            _ => unreachable!(),
        };
        assert_eq!(pick(0.2), -1.0);
        assert_eq!(pick(0.8), 1.0);
        assert_eq!(pick(0.5), -1.0);
    }
}
