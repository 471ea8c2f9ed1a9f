//! Euler–Maruyama simulation of the controlled diffusion with discrete exit
//! detection, Monte Carlo value estimates and Z-process evaluation.
//!
//! Every path draws from its own ChaCha8 stream selected by the path index,
//! so a batch is a pure function of its parameters and the seed no matter
//! how paths are scheduled across threads.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::grid::{GridError, PolicyField, ValueField};
use crate::model::{dist, ControlProblem, DomainGeometry, ModelError, PointClass};

/// Two-sided 99% standard normal quantile.
pub const Z99: f64 = 2.5758293035489004;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("non-finite state on path {path} at step {step}")]
    NonFinite { path: usize, step: usize },
    #[error("invalid simulation parameters: {0}")]
    Params(String),
    #[error("stopping rule `{0}` needs recorded paths")]
    PathsNotRecorded(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimParams {
    pub dt: f64,
    pub n_paths: usize,
    pub t_max: f64,
    pub seed: u64,
    /// Keep full state paths and running-integral prefixes (needed by
    /// intermediate stopping rules).
    pub record_paths: bool,
}

impl SimParams {
    fn check(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::Params(format!("dt must be positive (got {})", self.dt)));
        }
        if self.n_paths == 0 {
            return Err(SimError::Params("n_paths must be at least 1".into()));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(SimError::Params(format!("t_max must be positive (got {})", self.t_max)));
        }
        Ok(())
    }
}

/// Realizations of a randomized initial condition `(τ, ξ)`.
#[derive(Debug, Clone, PartialEq)]
pub enum RandomizedStart {
    Fixed { t0: f64, point: Vec<f64> },
    /// `τ` uniform on `[0, t0_max]`, `ξ` uniform over the listed points.
    UniformNodes { t0_max: f64, nodes: Vec<Vec<f64>> },
    /// Path `i` starts from entry `i mod len`.
    Explicit(Vec<(f64, Vec<f64>)>),
}

impl RandomizedStart {
    pub fn at(point: &[f64]) -> Self {
        RandomizedStart::Fixed { t0: 0.0, point: point.to_vec() }
    }

    fn latest_start(&self) -> f64 {
        match self {
            RandomizedStart::Fixed { t0, .. } => *t0,
            RandomizedStart::UniformNodes { t0_max, .. } => *t0_max,
            RandomizedStart::Explicit(v) => v.iter().map(|(t, _)| *t).fold(0.0, f64::max),
        }
    }

    fn check(&self, d: usize) -> Result<(), SimError> {
        let pts: Vec<&Vec<f64>> = match self {
            RandomizedStart::Fixed { point, .. } => vec![point],
            RandomizedStart::UniformNodes { nodes, .. } => nodes.iter().collect(),
            RandomizedStart::Explicit(v) => v.iter().map(|(_, x)| x).collect(),
        };
        if pts.is_empty() {
            return Err(SimError::Params("randomized start has no points".into()));
        }
        if pts.iter().any(|x| x.len() != d) {
            return Err(SimError::Params("start point has the wrong dimension".into()));
        }
        if self.latest_start() < 0.0 {
            return Err(SimError::Params("start times must be nonnegative".into()));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng, path: usize) -> (f64, Vec<f64>) {
        match self {
            RandomizedStart::Fixed { t0, point } => (*t0, point.clone()),
            RandomizedStart::UniformNodes { t0_max, nodes } => {
                let t0 = if *t0_max > 0.0 { rng.random::<f64>() * t0_max } else { 0.0 };
                let i = rng.random_range(0..nodes.len());
                (t0, nodes[i].clone())
            }
            RandomizedStart::Explicit(v) => v[path % v.len()].clone(),
        }
    }
}

/// Event at which a concatenated control switches.
#[derive(Debug, Clone, PartialEq)]
pub enum SwitchRule {
    /// First step with `|X − center| ≥ radius` (checked from the start).
    LeaveBall { center: Vec<f64>, radius: f64 },
}

impl SwitchRule {
    fn fires(&self, x: &[f64]) -> bool {
        match self {
            SwitchRule::LeaveBall { center, radius } => dist(x, center) >= *radius,
        }
    }
}

/// Produces a control for a path that (re)starts at time `t0` from `start`.
pub trait ControlBuilder: Send + Sync {
    fn control_for(&self, t0: f64, start: &[f64]) -> ControlSpec;
    fn describe(&self) -> String;
}

/// How the control process is produced along a path.
#[derive(Clone)]
pub enum ControlSpec {
    Constant(Vec<f64>),
    /// Feedback from a policy field, held constant over each time step.
    Markov(Arc<PolicyField>),
    /// Run `first` until `switch` fires, then the control `second` builds
    /// from the switching time and state.
    Concatenated { first: Box<ControlSpec>, switch: SwitchRule, second: Arc<dyn ControlBuilder> },
}

impl ControlSpec {
    pub fn describe(&self) -> String {
        match self {
            ControlSpec::Constant(a) => format!("constant {:?}", a),
            ControlSpec::Markov(pf) => format!("markov policy on {:?} grid", pf.grid().counts()),
            ControlSpec::Concatenated { first, switch, second } => {
                let SwitchRule::LeaveBall { center, radius } = switch;
                format!(
                    "{} until |X - {:?}| >= {}, then {}",
                    first.describe(),
                    center,
                    radius,
                    second.describe()
                )
            }
        }
    }

    fn check(&self, p: &ControlProblem) -> Result<(), SimError> {
        match self {
            ControlSpec::Constant(a) => {
                if !p.control_set().contains(a) {
                    return Err(SimError::Params(format!("action {:?} lies outside A", a)));
                }
            }
            ControlSpec::Markov(pf) => {
                if pf.control_set() != p.control_set() {
                    return Err(SimError::Params("policy uses a different control set".into()));
                }
            }
            ControlSpec::Concatenated { first, .. } => first.check(p)?,
        }
        Ok(())
    }
}

impl fmt::Debug for ControlSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe())
    }
}

impl ControlBuilder for ControlSpec {
    fn control_for(&self, _t0: f64, _start: &[f64]) -> ControlSpec {
        self.clone()
    }

    fn describe(&self) -> String {
        ControlSpec::describe(self)
    }
}

/// Per-path control state: resolves concatenations as the path unfolds.
struct ActiveControl {
    spec: ControlSpec,
}

impl ActiveControl {
    fn action<'a>(&'a mut self, t: f64, x: &[f64]) -> &'a [f64] {
        loop {
            let next = match &self.spec {
                ControlSpec::Concatenated { switch, second, .. } if switch.fires(x) => {
                    second.control_for(t, x)
                }
                _ => break,
            };
            self.spec = next;
        }
        Self::resolve(&self.spec, x)
    }

    fn resolve<'a>(spec: &'a ControlSpec, x: &[f64]) -> &'a [f64] {
        match spec {
            ControlSpec::Constant(a) => a,
            ControlSpec::Markov(pf) => pf.lookup(x),
            ControlSpec::Concatenated { first, .. } => Self::resolve(first, x),
        }
    }
}

/// One simulated path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub path: usize,
    pub t0: f64,
    pub start: Vec<f64>,
    /// Number of Euler steps taken.
    pub steps: usize,
    /// Step index at which the state first left `G`; `None` when censored.
    pub exit_index: Option<usize>,
    /// `t0 + steps·Δt`.
    pub exit_time: f64,
    pub censored: bool,
    /// `∫_{t0}^{exit} e^{−βs} f ds` by the trapezoidal rule.
    pub running: f64,
    /// `g` at the projection of the exit state onto `∂G` (zero if censored).
    pub terminal: f64,
    /// State at the last index (raw, not projected).
    pub final_state: Vec<f64>,
    /// Row-major `(steps + 1) × d` states when recording.
    pub states: Option<Vec<f64>>,
    /// Running integral up to each index when recording.
    pub running_prefix: Option<Vec<f64>>,
}

impl PathRecord {
    /// `∫ e^{−βs} f ds + e^{−βσ} g(X_σ)` (terminal term dropped when censored).
    pub fn payoff(&self, beta: f64) -> f64 {
        if self.censored {
            self.running
        } else {
            self.running + libm::exp(-beta * self.exit_time) * self.terminal
        }
    }

    pub fn state(&self, k: usize, d: usize) -> Option<&[f64]> {
        self.states.as_ref().map(|s| &s[k * d..(k + 1) * d])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub seed: u64,
    pub dt: f64,
    pub t_max: f64,
    pub dim: usize,
    pub control: String,
    pub paths: Vec<PathRecord>,
}

impl TrajectoryBatch {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn censored_fraction(&self) -> f64 {
        self.paths.iter().filter(|p| p.censored).count() as f64 / self.paths.len().max(1) as f64
    }
}

pub fn simulate(
    p: &ControlProblem,
    start: &RandomizedStart,
    ctrl: &ControlSpec,
    params: &SimParams,
) -> Result<TrajectoryBatch, SimError> {
    ctrl.check(p)?;
    simulate_with(p, start, ctrl, params)
}

/// Like [`simulate`], but each path asks `builder` for its control given
/// its own realized start `(τ, ξ)`.
pub fn simulate_with(
    p: &ControlProblem,
    start: &RandomizedStart,
    builder: &dyn ControlBuilder,
    params: &SimParams,
) -> Result<TrajectoryBatch, SimError> {
    params.check()?;
    start.check(p.dim_state())?;
    if start.latest_start() > params.t_max {
        return Err(SimError::Params("t_max is earlier than the latest start time".into()));
    }
    let paths = map_paths(params.n_paths, |i| simulate_path(p, start, builder, params, i))?;
    Ok(TrajectoryBatch {
        seed: params.seed,
        dt: params.dt,
        t_max: params.t_max,
        dim: p.dim_state(),
        control: builder.describe(),
        paths,
    })
}

#[cfg(feature = "parallel")]
fn map_paths<T: Send>(
    n: usize,
    f: impl Fn(usize) -> Result<T, SimError> + Sync + Send,
) -> Result<Vec<T>, SimError> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_paths<T>(n: usize, f: impl Fn(usize) -> Result<T, SimError>) -> Result<Vec<T>, SimError> {
    (0..n).map(f).collect()
}

fn simulate_path(
    p: &ControlProblem,
    start: &RandomizedStart,
    builder: &dyn ControlBuilder,
    params: &SimParams,
    path: usize,
) -> Result<PathRecord, SimError> {
    let d = p.dim_state();
    let m = p.dim_noise();
    let beta = p.discount();
    let dt = params.dt;
    let sqdt = libm::sqrt(dt);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(path as u64);
    let (t0, xi) = start.sample(&mut rng, path);

    let mut rec = PathRecord {
        path,
        t0,
        start: xi.clone(),
        steps: 0,
        exit_index: None,
        exit_time: t0,
        censored: false,
        running: 0.0,
        terminal: 0.0,
        final_state: xi.clone(),
        states: params.record_paths.then(|| xi.clone()),
        running_prefix: params.record_paths.then(|| vec![0.0]),
    };
    if p.domain().classify(&xi) != PointClass::Interior {
        rec.exit_index = Some(0);
        rec.terminal = p.boundary_at(&p.domain().project_to_boundary(&xi))?;
        return Ok(rec);
    }

    let n_max = libm::floor((params.t_max - t0) / dt + 1e-9) as usize;
    let mut control = ActiveControl { spec: builder.control_for(t0, &xi) };
    let mut x = xi;
    let mut next = vec![0.0; d];
    let mut b = vec![0.0; d];
    let mut s = vec![0.0; d * m];
    let mut z = vec![0.0; m];
    let mut running = 0.0;
    for k in 0..n_max {
        let t = t0 + k as f64 * dt;
        let a = control.action(t, &x);
        p.drift_at(&x, a, &mut b)?;
        p.diffusion_at(&x, a, &mut s)?;
        let f_left = libm::exp(-beta * t) * p.running_at(&x, a)?;
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        for i in 0..d {
            let noise: f64 = (0..m).map(|l| s[i * m + l] * z[l]).sum();
            next[i] = x[i] + b[i] * dt + noise * sqdt;
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite { path, step: k + 1 });
        }
        let exited = p.domain().classify(&next) != PointClass::Interior;
        let t_next = t0 + (k + 1) as f64 * dt;
        let f_right = if exited {
            let y = p.domain().project_to_boundary(&next);
            libm::exp(-beta * t_next) * p.running_at(&y, a)?
        } else {
            libm::exp(-beta * t_next) * p.running_at(&next, a)?
        };
        running += 0.5 * dt * (f_left + f_right);
        core::mem::swap(&mut x, &mut next);
        if let Some(st) = rec.states.as_mut() {
            st.extend_from_slice(&x);
        }
        if let Some(rp) = rec.running_prefix.as_mut() {
            rp.push(running);
        }
        rec.steps = k + 1;
        if exited {
            rec.exit_index = Some(k + 1);
            rec.terminal = p.boundary_at(&p.domain().project_to_boundary(&x))?;
            break;
        }
    }
    rec.censored = rec.exit_index.is_none();
    rec.exit_time = t0 + rec.steps as f64 * dt;
    rec.running = running;
    rec.final_state = x;
    Ok(rec)
}

/// Sample mean, standard error and 99% interval of a functional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueEstimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
    pub censored_frac: f64,
    pub dt: f64,
    pub ci99_lo: f64,
    pub ci99_hi: f64,
    /// `e^{−β T_max} ‖g‖∞`, the bias from dropping censored payoffs.
    pub truncation_bound: f64,
}

/// Mean and standard error (`n − 1` denominator; zero for a single sample).
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, libm::sqrt(var / n as f64))
}

pub fn estimate_from_batch(p: &ControlProblem, batch: &TrajectoryBatch) -> ValueEstimate {
    let beta = p.discount();
    let payoffs: Vec<f64> = batch.paths.iter().map(|r| r.payoff(beta)).collect();
    let (mean, se) = mean_se(&payoffs);
    let b = p.reward_bounds();
    let g_sup = b.g_min.abs().max(b.g_max.abs());
    ValueEstimate {
        mean,
        se,
        n: payoffs.len(),
        censored_frac: batch.censored_fraction(),
        dt: batch.dt,
        ci99_lo: mean - Z99 * se,
        ci99_hi: mean + Z99 * se,
        truncation_bound: libm::exp(-beta * batch.t_max) * g_sup,
    }
}

/// Monte Carlo estimate of `J(x, α)`.
pub fn estimate_value(
    p: &ControlProblem,
    x: &[f64],
    ctrl: &ControlSpec,
    params: &SimParams,
) -> Result<ValueEstimate, SimError> {
    let params = SimParams { record_paths: false, ..*params };
    let batch = simulate(p, &RandomizedStart::at(x), ctrl, &params)?;
    Ok(estimate_from_batch(p, &batch))
}

/// Stopping times `ρ ∈ [τ, σ]` available to the Z-process tests. All of
/// them are truncated at exit.
#[derive(Debug, Clone, PartialEq)]
pub enum StoppingRule {
    /// `ρ = τ`.
    Start,
    /// `ρ = (τ + t*) ∧ σ`.
    FixedTime(f64),
    /// First time `|X − center| ≥ radius`, or `σ`.
    LeaveBall { center: Vec<f64>, radius: f64 },
    /// First time `|X − ξ| ≥ radius`, or `σ`.
    LeaveBallAroundStart { radius: f64 },
    /// `ρ = σ`.
    Exit,
}

impl StoppingRule {
    fn needs_paths(&self) -> bool {
        !matches!(self, StoppingRule::Start | StoppingRule::Exit)
    }

    /// The standard family: start, three fixed times, leaving the
    /// half-inradius ball around the start, exit.
    pub fn default_family(domain: &DomainGeometry) -> Vec<StoppingRule> {
        vec![
            StoppingRule::Start,
            StoppingRule::FixedTime(0.01),
            StoppingRule::FixedTime(0.05),
            StoppingRule::FixedTime(0.1),
            StoppingRule::LeaveBallAroundStart { radius: 0.5 * inradius(domain) },
            StoppingRule::Exit,
        ]
    }
}

impl fmt::Display for StoppingRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StoppingRule::Start => write!(f, "tau"),
            StoppingRule::FixedTime(t) => write!(f, "fixed({t})"),
            StoppingRule::LeaveBall { center, radius } => write!(f, "leave_ball({center:?}, {radius})"),
            StoppingRule::LeaveBallAroundStart { radius } => write!(f, "leave_ball_start({radius})"),
            StoppingRule::Exit => write!(f, "exit"),
        }
    }
}

fn inradius(domain: &DomainGeometry) -> f64 {
    match domain {
        DomainGeometry::Box { lo, hi } => {
            lo.iter().zip(hi).map(|(l, h)| 0.5 * (h - l)).fold(f64::INFINITY, f64::min)
        }
        DomainGeometry::Ball { radius, .. } => *radius,
    }
}

/// `(Z_τ, Z_ρ)` for one path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZPair {
    pub path: usize,
    pub z_start: f64,
    pub z_stop: f64,
    pub stop_time: f64,
    /// The rule had not fired when the path was censored at `T_max`.
    pub censored: bool,
}

/// Evaluates `Z_t = ∫_τ^t e^{−βs} f ds + e^{−βt} u(X_t)` at `τ` and `ρ`.
pub fn z_process(
    p: &ControlProblem,
    u: &ValueField,
    batch: &TrajectoryBatch,
    rule: &StoppingRule,
) -> Result<Vec<ZPair>, SimError> {
    let beta = p.discount();
    let d = p.dim_state();
    let mut out = Vec::with_capacity(batch.len());
    for rec in &batch.paths {
        if rule.needs_paths() && rec.states.is_none() && rec.steps > 0 {
            return Err(SimError::PathsNotRecorded(format!("{rule}")));
        }
        let z_start = libm::exp(-beta * rec.t0) * u.value_at(p, &rec.start)?;
        let end = rec.steps;
        let (k, fired) = match rule {
            StoppingRule::Start => (0, true),
            StoppingRule::Exit => (end, !rec.censored),
            StoppingRule::FixedTime(t) => {
                let k = libm::round(t / batch.dt) as usize;
                if k <= end {
                    (k, true)
                } else {
                    (end, !rec.censored)
                }
            }
            StoppingRule::LeaveBall { center, radius } => {
                first_leave(rec, d, center, *radius, end)
            }
            StoppingRule::LeaveBallAroundStart { radius } => {
                first_leave(rec, d, &rec.start, *radius, end)
            }
        };
        let stop_time = rec.t0 + k as f64 * batch.dt;
        let z_stop = if k == 0 {
            z_start
        } else {
            let (x, running) = if k == end {
                (rec.final_state.as_slice(), rec.running)
            } else {
                let x = rec.state(k, d).expect("recorded");
                (x, rec.running_prefix.as_ref().expect("recorded")[k])
            };
            let ux = if rec.exit_index == Some(k) {
                u.value_at(p, &p.domain().project_to_boundary(x))?
            } else {
                u.value_at(p, x)?
            };
            running + libm::exp(-beta * stop_time) * ux
        };
        out.push(ZPair { path: rec.path, z_start, z_stop, stop_time, censored: !fired });
    }
    Ok(out)
}

fn first_leave(rec: &PathRecord, d: usize, center: &[f64], radius: f64, end: usize) -> (usize, bool) {
    for k in 0..end {
        if let Some(x) = rec.state(k, d) {
            if dist(x, center) >= radius {
                return (k, true);
            }
        }
    }
    (end, !rec.censored || dist(&rec.final_state, center) >= radius)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{p1, p3, sinh_oracle};
    use alloc::sync::Arc;

    fn params(dt: f64, n: usize, seed: u64) -> SimParams {
        SimParams { dt, n_paths: n, t_max: 20.0, seed, record_paths: true }
    }

    #[test]
    fn exit_detection_contract() {
        let p = p1();
        let b = simulate(&p, &RandomizedStart::at(&[0.5]), &ControlSpec::Constant(vec![0.0]), &params(1e-3, 20, 7))
            .unwrap();
        for rec in &b.paths {
            let k = rec.exit_index.unwrap();
            for i in 0..k {
                assert!(p.domain().is_interior(rec.state(i, 1).unwrap()));
            }
            assert!(!p.domain().is_interior(rec.state(k, 1).unwrap()));
            assert_eq!(rec.exit_time, k as f64 * 1e-3);
        }
    }

    #[test]
    fn boundary_start_exits_immediately() {
        let p = p1();
        let b = simulate(&p, &RandomizedStart::at(&[0.0]), &ControlSpec::Constant(vec![0.0]), &params(1e-3, 5, 1))
            .unwrap();
        for rec in &b.paths {
            assert_eq!(rec.exit_index, Some(0));
            assert_eq!(rec.exit_time, 0.0);
            assert_eq!(rec.running, 0.0);
        }
        let e = estimate_value(&p, &[0.0], &ControlSpec::Constant(vec![0.0]), &params(1e-3, 50, 1)).unwrap();
        assert_eq!((e.mean, e.se), (0.0, 0.0));
    }

    #[test]
    fn same_seed_same_batch() {
        let p = p1();
        let run = |seed| {
            simulate(&p, &RandomizedStart::at(&[0.3]), &ControlSpec::Constant(vec![0.0]), &params(1e-3, 50, seed))
                .unwrap()
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }

    #[test]
    fn p1_estimate_matches_oracle() {
        let p = p1();
        let e = estimate_value(
            &p,
            &[0.5],
            &ControlSpec::Constant(vec![0.0]),
            &SimParams { dt: 1e-3, n_paths: 20_000, t_max: 20.0, seed: 3, record_paths: false },
        )
        .unwrap();
        assert!((e.mean - sinh_oracle(0.5)).abs() < 3.0 * e.se + 1e-3_f64.sqrt(), "{e:?}");
        assert!(e.ci99_lo <= e.mean && e.mean <= e.ci99_hi);
    }

    #[test]
    fn exit_time_laplace_transform() {
        let p = p1();
        let prm = SimParams { dt: 1e-3, n_paths: 10_000, t_max: 20.0, seed: 21, record_paths: false };
        let b = simulate(&p, &RandomizedStart::at(&[0.5]), &ControlSpec::Constant(vec![0.0]), &prm).unwrap();
        assert!(b.paths.iter().all(|r| !r.censored));
        let xs: Vec<f64> = b.paths.iter().map(|r| libm::exp(-r.exit_time)).collect();
        let (mean, se) = mean_se(&xs);
        let laplace = |half_width: f64| 1.0 / libm::cosh(core::f64::consts::SQRT_2 * half_width);
        let exact = laplace(0.5);
        assert!((mean - exact).abs() < 3.0 * se + 0.5 * prm.dt.sqrt(), "{mean} vs {exact} (se {se})");
        // Monitoring only at multiples of dt behaves like continuous
        // monitoring of an interval widened by 0.5826·√dt on each side.
        let shifted = laplace(0.5 + 0.5826 * prm.dt.sqrt());
        assert!((mean - shifted).abs() < 3.0 * se, "{mean} vs {shifted} (se {se})");
    }

    #[test]
    fn censoring_bound_covers_horizon_change() {
        let p = p1();
        let run = |t_max| {
            let prm = SimParams { dt: 1e-3, n_paths: 4000, t_max, seed: 8, record_paths: false };
            estimate_value(&p, &[0.5], &ControlSpec::Constant(vec![0.0]), &prm).unwrap()
        };
        let (short, long) = (run(0.2), run(0.4));
        assert!(short.censored_frac > 0.0);
        let bound = libm::exp(-0.2);
        assert!((short.truncation_bound - bound).abs() < 1e-15, "{short:?}");
        assert!((short.mean - long.mean).abs() <= bound + 3.0 * short.se.max(long.se));
    }

    #[test]
    fn p3_estimate_within_constant_bounds() {
        let p = p3();
        for a in [-1.0, 0.0, 1.0] {
            let e = estimate_value(&p, &[0.3], &ControlSpec::Constant(vec![a]), &params(1e-3, 500, 9)).unwrap();
            assert!(e.mean >= -3.0 * e.se && e.mean <= 0.5 + 3.0 * e.se);
        }
    }

    #[test]
    fn z_process_identities() {
        let p = p3();
        let grid = Arc::new(crate::grid::Grid::new(p.domain(), &[9]).unwrap());
        let zero = ValueField::constant(grid.clone(), 0.0);
        let b = simulate(&p, &RandomizedStart::at(&[0.5]), &ControlSpec::Constant(vec![0.0]), &params(1e-3, 40, 2))
            .unwrap();
        for z in z_process(&p, &zero, &b, &StoppingRule::Exit).unwrap() {
            let exact = (1.0 - libm::exp(-2.0 * z.stop_time)) / 2.0;
            assert!((z.z_stop - exact).abs() < 1e-6);
        }
        let c = ValueField::constant(grid, 0.7);
        for z in z_process(&p, &c, &b, &StoppingRule::Start).unwrap() {
            assert_eq!(z.z_stop, z.z_start);
            assert_eq!(z.z_start, 0.7);
        }
        let p = p1();
        let grid = Arc::new(crate::grid::Grid::new(p.domain(), &[9]).unwrap());
        let c = ValueField::constant(grid, 0.7);
        let start = RandomizedStart::Explicit(vec![(0.3, vec![0.5]), (0.0, vec![0.25])]);
        let b = simulate(&p, &start, &ControlSpec::Constant(vec![0.0]), &params(1e-3, 10, 4)).unwrap();
        for rule in StoppingRule::default_family(p.domain()) {
            for z in z_process(&p, &c, &b, &rule).unwrap() {
                let t0 = b.paths[z.path].t0;
                assert_eq!(z.z_start, 0.7 * libm::exp(-t0));
                assert!((z.z_stop - 0.7 * libm::exp(-z.stop_time)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn concatenated_control_switches_once() {
        let second = ControlSpec::Constant(vec![-1.0]);
        let ctrl = ControlSpec::Concatenated {
            first: Box::new(ControlSpec::Constant(vec![1.0])),
            switch: SwitchRule::LeaveBall { center: vec![0.5], radius: 0.1 },
            second: Arc::new(second),
        };
        let mut active = ActiveControl { spec: ctrl };
        assert_eq!(active.action(0.0, &[0.5]), &[1.0]);
        assert_eq!(active.action(0.1, &[0.61]), &[-1.0]);
        assert_eq!(active.action(0.2, &[0.5]), &[-1.0]);
    }

    #[test]
    fn unrecorded_paths_reject_intermediate_rules() {
        let p = p1();
        let grid = Arc::new(crate::grid::Grid::new(p.domain(), &[9]).unwrap());
        let c = ValueField::constant(grid, 0.0);
        let mut prm = params(1e-3, 3, 1);
        prm.record_paths = false;
        let b = simulate(&p, &RandomizedStart::at(&[0.5]), &ControlSpec::Constant(vec![0.0]), &prm).unwrap();
        assert!(z_process(&p, &c, &b, &StoppingRule::Exit).is_ok());
        assert!(matches!(
            z_process(&p, &c, &b, &StoppingRule::FixedTime(0.01)),
            Err(SimError::PathsNotRecorded(_))
        ));
    }
}
