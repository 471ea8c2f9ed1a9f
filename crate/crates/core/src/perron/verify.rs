use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::PerronError;
use crate::grid::{GridError, ValueField};
use crate::model::{ControlProblem, PointClass};
use crate::sim::{mean_se, simulate, z_process, ControlSpec, RandomizedStart, SimParams, StoppingRule};

/// Pointwise ordering `u ≤ v̂ ≤ w` up to a tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct SandwichReport {
    /// `min (v̂ − u)` over interior points and where it is attained.
    pub lower_margin: f64,
    pub lower_at: Vec<f64>,
    /// `min (w − v̂)` over interior points and where it is attained.
    pub upper_margin: f64,
    pub upper_at: Vec<f64>,
    pub boundary_lower_margin: f64,
    pub boundary_upper_margin: f64,
    /// `max (w − u)`.
    pub max_gap: f64,
    pub eps: f64,
    pub points: usize,
    pub pass: bool,
}

/// Checks `u − ε ≤ v̂ ≤ w + ε` with `ε = eps_base + 3·se` at `points`, or at
/// every non-exterior node of `v̂`'s grid when `points` is empty.
pub fn check_sandwich(
    u: &ValueField,
    vhat: &ValueField,
    w: &ValueField,
    points: &[Vec<f64>],
    se: f64,
    eps_base: f64,
) -> Result<SandwichReport, PerronError> {
    let grid = vhat.grid();
    let owned;
    let points = if points.is_empty() {
        owned = (0..grid.len())
            .filter(|&i| grid.class(i) != PointClass::Exterior)
            .map(|i| grid.coords(i))
            .collect::<Vec<_>>();
        &owned[..]
    } else {
        points
    };
    if points.is_empty() {
        return Err(GridError::Degenerate("no points to compare".into()).into());
    }
    let eps = eps_base + 3.0 * se;
    let domain = grid.domain();
    let mut r = SandwichReport {
        lower_margin: f64::INFINITY,
        lower_at: Vec::new(),
        upper_margin: f64::INFINITY,
        upper_at: Vec::new(),
        boundary_lower_margin: f64::INFINITY,
        boundary_upper_margin: f64::INFINITY,
        max_gap: f64::NEG_INFINITY,
        eps,
        points: points.len(),
        pass: false,
    };
    for x in points {
        let (a, b, c) = (u.interpolate(x)?, vhat.interpolate(x)?, w.interpolate(x)?);
        r.max_gap = r.max_gap.max(c - a);
        match domain.classify(x) {
            PointClass::Interior => {
                if b - a < r.lower_margin {
                    r.lower_margin = b - a;
                    r.lower_at = x.clone();
                }
                if c - b < r.upper_margin {
                    r.upper_margin = c - b;
                    r.upper_at = x.clone();
                }
            }
            PointClass::Boundary => {
                r.boundary_lower_margin = r.boundary_lower_margin.min(b - a);
                r.boundary_upper_margin = r.boundary_upper_margin.min(c - b);
            }
            PointClass::Exterior => return Err(GridError::OutsideGrid(x.clone()).into()),
        }
    }
    r.pass = [r.lower_margin, r.upper_margin, r.boundary_lower_margin, r.boundary_upper_margin]
        .iter()
        .all(|m| *m >= -eps);
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DppConfig {
    /// Coefficient of `√Δt` in the tolerance.
    pub c_bias: f64,
    /// Coefficient of the grid spacing `h` in the tolerance.
    pub c_h: f64,
}

impl Default for DppConfig {
    fn default() -> Self {
        DppConfig { c_bias: 0.5, c_h: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DppRuleRecord {
    pub rule: String,
    /// Best bracket `max_α E[∫ e^{−βs} f ds + e^{−βρ} v̂(X_ρ)]` over the policies.
    pub bracket: f64,
    pub se: f64,
    pub best_control: String,
    /// `v̂(x) − bracket`.
    pub residual: f64,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DppPoint {
    pub point: Vec<f64>,
    pub value: f64,
    pub on_boundary: bool,
    pub rules: Vec<DppRuleRecord>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DppReport {
    pub points: Vec<DppPoint>,
    pub max_abs_residual: f64,
    pub pass: bool,
}

/// Dynamic-programming residual of `v̂` at each point for each stopping
/// rule, maximizing the bracket over the sampled `policies`. All policies
/// share `params.seed`. Points on `∂G` have `ρ = τ` and residual `0`.
pub fn dpp_residual(
    p: &ControlProblem,
    vhat: &ValueField,
    points: &[Vec<f64>],
    policies: &[ControlSpec],
    rules: &[StoppingRule],
    params: &SimParams,
    cfg: &DppConfig,
) -> Result<DppReport, PerronError> {
    if policies.is_empty() || rules.is_empty() {
        return Err(PerronError::Config("dpp needs at least one policy and one rule".into()));
    }
    let h = vhat.grid().max_spacing();
    let base_tol = cfg.c_bias * libm::sqrt(params.dt) + cfg.c_h * h;
    let params = SimParams { record_paths: true, ..*params };
    let mut out = Vec::with_capacity(points.len());
    for x in points {
        let value = vhat.value_at(p, x)?;
        match p.domain().classify(x) {
            PointClass::Exterior => return Err(GridError::OutsideGrid(x.clone()).into()),
            PointClass::Boundary => {
                let rules = rules
                    .iter()
                    .map(|r| DppRuleRecord {
                        rule: r.to_string(),
                        bracket: value,
                        se: 0.0,
                        best_control: "none".into(),
                        residual: 0.0,
                        tol: base_tol,
                        pass: true,
                    })
                    .collect();
                out.push(DppPoint { point: x.clone(), value, on_boundary: true, rules, pass: true });
                continue;
            }
            PointClass::Interior => {}
        }
        let start = RandomizedStart::at(x);
        let mut best: Vec<Option<(f64, f64, String)>> = rules.iter().map(|_| None).collect();
        for policy in policies {
            let batch = simulate(p, &start, policy, &params)?;
            for (slot, rule) in best.iter_mut().zip(rules) {
                let z: Vec<f64> = z_process(p, vhat, &batch, rule)?.iter().map(|z| z.z_stop).collect();
                let (mean, se) = mean_se(&z);
                if slot.as_ref().is_none_or(|(m, _, _)| mean > *m) {
                    *slot = Some((mean, se, batch.control.clone()));
                }
            }
        }
        let rules: Vec<DppRuleRecord> = best
            .into_iter()
            .zip(rules)
            .map(|(b, rule)| {
                let (bracket, se, best_control) = b.expect("at least one policy");
                let residual = value - bracket;
                let tol = 3.0 * se + base_tol;
                DppRuleRecord {
                    rule: rule.to_string(),
                    bracket,
                    se,
                    best_control,
                    residual,
                    tol,
                    pass: residual.abs() <= tol,
                }
            })
            .collect();
        let pass = rules.iter().all(|r| r.pass);
        out.push(DppPoint { point: x.clone(), value, on_boundary: false, rules, pass });
    }
    let max_abs_residual = out
        .iter()
        .flat_map(|pt| pt.rules.iter().map(|r| r.residual.abs()))
        .fold(0.0, f64::max);
    let pass = out.iter().all(|pt| pt.pass);
    Ok(DppReport { points: out, max_abs_residual, pass })
}
