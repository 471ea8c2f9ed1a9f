//! Problem instances: controlled diffusion coefficients, running reward,
//! boundary payoff, discount, control set and domain.
//!
//! The state dimension is written `d` throughout; the same quantity is
//! sometimes called `n` in the control literature.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::expr::{EvalError, Expr, ParseError};

/// Width of the band around `∂G` inside which a point counts as boundary.
pub const GEOMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{field}: {source}")]
    Syntax {
        field: String,
        #[source]
        source: ParseError,
    },
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("discount must be positive (got {0})")]
    Discount(f64),
    #[error("control set is not a nonempty compact box: {0}")]
    ControlSet(String),
    #[error("invalid domain: {0}")]
    Domain(String),
    #[error("evaluating {what} at x={x:?}, a={a:?}: {source}")]
    Eval {
        what: &'static str,
        x: Vec<f64>,
        a: Vec<f64>,
        #[source]
        source: EvalError,
    },
}

/// Compact box `A ⊂ R^k` with its finite uniform discretization `A_h`.
///
/// `A_h` is enumerated lexicographically over per-axis indices, first axis
/// slowest. An axis with a single point uses its lower bound.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSet {
    lo: Vec<f64>,
    hi: Vec<f64>,
    points: Vec<usize>,
    actions: Vec<f64>,
}

impl ControlSet {
    pub fn new(bounds: &[(f64, f64)], points: &[usize]) -> Result<Self, ModelError> {
        let k = bounds.len();
        if k == 0 {
            return Err(ModelError::ControlSet("control dimension must be at least 1".into()));
        }
        if points.len() != k {
            return Err(ModelError::Dimension(alloc::format!(
                "control has {} bounds but {} point counts",
                k,
                points.len()
            )));
        }
        for (i, &(lo, hi)) in bounds.iter().enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(ModelError::ControlSet(alloc::format!("axis {} is unbounded", i + 1)));
            }
            if lo > hi {
                return Err(ModelError::ControlSet(alloc::format!(
                    "axis {}: lo {} > hi {}",
                    i + 1,
                    lo,
                    hi
                )));
            }
            if points[i] == 0 {
                return Err(ModelError::ControlSet(alloc::format!("axis {} has no points", i + 1)));
            }
        }
        let lo: Vec<f64> = bounds.iter().map(|b| b.0).collect();
        let hi: Vec<f64> = bounds.iter().map(|b| b.1).collect();
        let total: usize = points.iter().product();
        let mut actions = Vec::with_capacity(total * k);
        let mut idx = vec![0usize; k];
        for _ in 0..total {
            for axis in 0..k {
                actions.push(axis_point(lo[axis], hi[axis], points[axis], idx[axis]));
            }
            // odometer, last axis fastest
            for axis in (0..k).rev() {
                idx[axis] += 1;
                if idx[axis] < points[axis] {
                    break;
                }
                idx[axis] = 0;
            }
        }
        Ok(ControlSet { lo, hi, points: points.to_vec(), actions })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Number of points in `A_h`.
    pub fn len(&self) -> usize {
        self.actions.len() / self.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn action(&self, i: usize) -> &[f64] {
        let k = self.dim();
        &self.actions[i * k..(i + 1) * k]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.actions.chunks(self.dim())
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    /// Box membership with the geometric tolerance.
    pub fn contains(&self, a: &[f64]) -> bool {
        a.len() == self.dim()
            && a.iter().zip(self.lo.iter().zip(&self.hi)).all(|(&v, (&lo, &hi))| {
                v >= lo - GEOMETRY_TOL && v <= hi + GEOMETRY_TOL
            })
    }

    /// Index in `A_h` of an action exactly equal to `a`, if any.
    pub fn index_of(&self, a: &[f64]) -> Option<usize> {
        self.iter().position(|b| b == a)
    }
}

fn axis_point(lo: f64, hi: f64, n: usize, i: usize) -> f64 {
    if n == 1 {
        lo
    } else if i == n - 1 {
        hi
    } else {
        lo + (hi - lo) * (i as f64) / ((n - 1) as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointClass {
    Interior,
    Boundary,
    Exterior,
}

/// The open domain `G`. The exit set is `G` itself, so a path exits the
/// first time it is not classified interior.
#[derive(Debug, Clone, PartialEq)]
pub enum DomainGeometry {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

impl DomainGeometry {
    pub fn new_box(bounds: &[(f64, f64)]) -> Result<Self, ModelError> {
        if bounds.is_empty() {
            return Err(ModelError::Domain("box needs at least one axis".into()));
        }
        for (i, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite()) || hi - lo <= GEOMETRY_TOL {
                return Err(ModelError::Domain(alloc::format!(
                    "axis {} [{}, {}] has no volume",
                    i + 1,
                    lo,
                    hi
                )));
            }
        }
        Ok(DomainGeometry::Box {
            lo: bounds.iter().map(|b| b.0).collect(),
            hi: bounds.iter().map(|b| b.1).collect(),
        })
    }

    pub fn new_ball(center: &[f64], radius: f64) -> Result<Self, ModelError> {
        if center.is_empty() {
            return Err(ModelError::Domain("ball needs at least one axis".into()));
        }
        if !(radius.is_finite() && radius > GEOMETRY_TOL) || center.iter().any(|c| !c.is_finite())
        {
            return Err(ModelError::Domain(alloc::format!("ball radius {} is degenerate", radius)));
        }
        Ok(DomainGeometry::Ball { center: center.to_vec(), radius })
    }

    pub fn dim(&self) -> usize {
        match self {
            DomainGeometry::Box { lo, .. } => lo.len(),
            DomainGeometry::Ball { center, .. } => center.len(),
        }
    }

    /// Positive inside, zero on `∂G`, negative outside. For the box this is
    /// the distance to the nearest face when inside.
    pub fn depth(&self, x: &[f64]) -> f64 {
        match self {
            DomainGeometry::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(&v, (&l, &h))| (v - l).min(h - v))
                .fold(f64::INFINITY, f64::min),
            DomainGeometry::Ball { center, radius } => radius - dist(x, center),
        }
    }

    pub fn classify(&self, x: &[f64]) -> PointClass {
        let m = self.depth(x);
        if m > GEOMETRY_TOL {
            PointClass::Interior
        } else if m >= -GEOMETRY_TOL {
            PointClass::Boundary
        } else {
            PointClass::Exterior
        }
    }

    pub fn is_interior(&self, x: &[f64]) -> bool {
        self.classify(x) == PointClass::Interior
    }

    /// Nearest point of `∂G`. Boundary points are returned unchanged.
    pub fn project_to_boundary(&self, x: &[f64]) -> Vec<f64> {
        match self.classify(x) {
            PointClass::Boundary => return x.to_vec(),
            PointClass::Exterior => {
                if let DomainGeometry::Box { lo, hi } = self {
                    return x.iter().zip(lo.iter().zip(hi)).map(|(&v, (&l, &h))| v.clamp(l, h)).collect();
                }
            }
            PointClass::Interior => {}
        }
        match self {
            DomainGeometry::Box { lo, hi } => {
                let mut best = (f64::INFINITY, 0usize, 0.0);
                for i in 0..x.len() {
                    let dl = x[i] - lo[i];
                    let dh = hi[i] - x[i];
                    if dl < best.0 {
                        best = (dl, i, lo[i]);
                    }
                    if dh < best.0 {
                        best = (dh, i, hi[i]);
                    }
                }
                let mut y = x.to_vec();
                y[best.1] = best.2;
                y
            }
            DomainGeometry::Ball { center, radius } => {
                let r = dist(x, center);
                if r == 0.0 {
                    let mut y = center.clone();
                    y[0] += radius;
                    return y;
                }
                x.iter().zip(center).map(|(&v, &c)| c + radius * (v - c) / r).collect()
            }
        }
    }

    /// Outward unit normal at (or nearest to) a boundary point. Box corners
    /// get the normalized sum of the active face normals.
    pub fn outward_normal(&self, x: &[f64]) -> Vec<f64> {
        match self {
            DomainGeometry::Box { lo, hi } => {
                let tol = 1e-9 * lo.iter().zip(hi).map(|(l, h)| h - l).fold(1.0, f64::max);
                let mut n: Vec<f64> = (0..x.len())
                    .map(|i| {
                        if (x[i] - lo[i]).abs() <= tol {
                            -1.0
                        } else if (hi[i] - x[i]).abs() <= tol {
                            1.0
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let norm = libm::sqrt(n.iter().map(|v| v * v).sum());
                if norm == 0.0 {
                    let y = self.project_to_boundary(x);
                    return self.outward_normal(&y);
                }
                n.iter_mut().for_each(|v| *v /= norm);
                n
            }
            DomainGeometry::Ball { center, .. } => {
                let r = dist(x, center);
                if r == 0.0 {
                    let mut n = vec![0.0; x.len()];
                    n[0] = 1.0;
                    return n;
                }
                x.iter().zip(center).map(|(&v, &c)| (v - c) / r).collect()
            }
        }
    }

    /// Axis-aligned bounding box of `Ḡ` as (lo, hi).
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            DomainGeometry::Box { lo, hi } => (lo.clone(), hi.clone()),
            DomainGeometry::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
        }
    }

    /// Distance from an interior point `x` along `dir · e_axis` to `∂G`.
    pub fn axis_distance_to_boundary(&self, x: &[f64], axis: usize, dir: f64) -> f64 {
        match self {
            DomainGeometry::Box { lo, hi } => {
                if dir > 0.0 {
                    hi[axis] - x[axis]
                } else {
                    x[axis] - lo[axis]
                }
            }
            DomainGeometry::Ball { center, radius } => {
                // |x + t·dir·e - c|² = r², t > 0
                let off = (x[axis] - center[axis]) * dir;
                let r2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                let rest = r2 - radius * radius;
                let disc = (off * off - rest).max(0.0);
                (-off + libm::sqrt(disc)).max(0.0)
            }
        }
    }

    /// Deterministic sample of `∂G`: box faces on a `per_axis` lattice
    /// (corners included), or axis extremes plus an even spread on the sphere.
    pub fn boundary_sample(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let per_axis = per_axis.max(2);
        match self {
            DomainGeometry::Box { lo, hi } => lattice(lo, hi, per_axis)
                .into_iter()
                .filter(|x| self.classify(x) == PointClass::Boundary)
                .collect(),
            DomainGeometry::Ball { center, radius } => {
                let d = center.len();
                let mut out = Vec::new();
                for axis in 0..d {
                    for s in [-1.0, 1.0] {
                        let mut y = center.clone();
                        y[axis] += s * radius;
                        out.push(y);
                    }
                }
                let n = 8 * per_axis;
                match d {
                    2 => {
                        for i in 0..n {
                            let th = 2.0 * core::f64::consts::PI * (i as f64 + 0.5) / n as f64;
                            out.push(vec![
                                center[0] + radius * libm::cos(th),
                                center[1] + radius * libm::sin(th),
                            ]);
                        }
                    }
                    3 => {
                        // Fibonacci sphere
                        let golden = core::f64::consts::PI * (3.0 - libm::sqrt(5.0));
                        for i in 0..n {
                            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                            let r = libm::sqrt(1.0 - z * z);
                            let th = golden * i as f64;
                            out.push(vec![
                                center[0] + radius * r * libm::cos(th),
                                center[1] + radius * r * libm::sin(th),
                                center[2] + radius * z,
                            ]);
                        }
                    }
                    _ => {}
                }
                out
            }
        }
    }
}

pub(crate) fn dist(x: &[f64], y: &[f64]) -> f64 {
    libm::sqrt(x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Tensor lattice with `n` points per axis over `[lo, hi]`.
pub(crate) fn lattice(lo: &[f64], hi: &[f64], n: usize) -> Vec<Vec<f64>> {
    let d = lo.len();
    let total = n.pow(d as u32);
    let mut out = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        let mut x = Vec::with_capacity(d);
        for axis in 0..d {
            let i = rem % n;
            rem /= n;
            x.push(axis_point(lo[axis], hi[axis], n, i));
        }
        out.push(x);
    }
    out
}

/// Sampled bounds of `f` over `Ḡ × A_h` and of `g` over `∂G`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBounds {
    pub f_min: f64,
    pub f_max: f64,
    pub g_min: f64,
    pub g_max: f64,
}

impl RewardBounds {
    fn empty() -> Self {
        RewardBounds {
            f_min: f64::INFINITY,
            f_max: f64::NEG_INFINITY,
            g_min: f64::INFINITY,
            g_max: f64::NEG_INFINITY,
        }
    }

    pub fn f_sup_norm(&self) -> f64 {
        self.f_min.abs().max(self.f_max.abs())
    }
}

/// A validated instance of the discounted exit-time control problem.
#[derive(Debug, Clone)]
pub struct ControlProblem {
    dim_state: usize,
    dim_noise: usize,
    drift: Vec<Expr>,
    diffusion: Vec<Expr>,
    running: Expr,
    boundary: Expr,
    discount: f64,
    control: ControlSet,
    domain: DomainGeometry,
    lipschitz_bound: Option<f64>,
    bounds: RewardBounds,
}

/// Collects the textual pieces of a problem; [`ProblemBuilder::build`]
/// parses and validates them.
#[derive(Debug, Clone, Default)]
pub struct ProblemBuilder {
    dim_state: usize,
    dim_noise: usize,
    discount: Option<f64>,
    drift: Option<Vec<String>>,
    diffusion: Option<Vec<Vec<String>>>,
    running: Option<String>,
    boundary: Option<String>,
    control: Option<ControlSet>,
    domain: Option<DomainGeometry>,
    lipschitz_bound: Option<f64>,
}

impl ProblemBuilder {
    pub fn new(dim_state: usize, dim_noise: usize) -> Self {
        ProblemBuilder { dim_state, dim_noise, ..Default::default() }
    }

    pub fn discount(mut self, beta: f64) -> Self {
        self.discount = Some(beta);
        self
    }

    pub fn drift<S: AsRef<str>>(mut self, components: &[S]) -> Self {
        self.drift = Some(components.iter().map(|s| s.as_ref().to_string()).collect());
        self
    }

    /// Rows of `σ`, each of length `m`.
    pub fn diffusion<S: AsRef<str>, R: AsRef<[S]>>(mut self, rows: &[R]) -> Self {
        self.diffusion = Some(
            rows.iter()
                .map(|r| r.as_ref().iter().map(|s| s.as_ref().to_string()).collect())
                .collect(),
        );
        self
    }

    pub fn running(mut self, f: &str) -> Self {
        self.running = Some(f.to_string());
        self
    }

    pub fn boundary(mut self, g: &str) -> Self {
        self.boundary = Some(g.to_string());
        self
    }

    pub fn control(mut self, control: ControlSet) -> Self {
        self.control = Some(control);
        self
    }

    pub fn domain(mut self, domain: DomainGeometry) -> Self {
        self.domain = Some(domain);
        self
    }

    pub fn lipschitz_bound(mut self, k: f64) -> Self {
        self.lipschitz_bound = Some(k);
        self
    }

    pub fn build(self) -> Result<ControlProblem, ModelError> {
        let d = self.dim_state;
        let m = self.dim_noise;
        if d == 0 || m == 0 {
            return Err(ModelError::Dimension(alloc::format!(
                "dim_state = {}, dim_noise = {}; both must be at least 1",
                d,
                m
            )));
        }
        let beta = self.discount.ok_or(ModelError::MissingField("discount"))?;
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(ModelError::Discount(beta));
        }
        let drift_src = self.drift.ok_or(ModelError::MissingField("drift"))?;
        let diff_src = self.diffusion.ok_or(ModelError::MissingField("diffusion"))?;
        let running_src = self.running.ok_or(ModelError::MissingField("running"))?;
        let boundary_src = self.boundary.ok_or(ModelError::MissingField("boundary"))?;
        let control = self.control.ok_or(ModelError::MissingField("control"))?;
        let domain = self.domain.ok_or(ModelError::MissingField("domain"))?;

        if drift_src.len() != d {
            return Err(ModelError::Dimension(alloc::format!(
                "drift has {} components, expected {}",
                drift_src.len(),
                d
            )));
        }
        if diff_src.len() != d || diff_src.iter().any(|r| r.len() != m) {
            return Err(ModelError::Dimension(alloc::format!(
                "diffusion must be {}x{}, got {} rows with lengths {:?}",
                d,
                m,
                diff_src.len(),
                diff_src.iter().map(|r| r.len()).collect::<Vec<_>>()
            )));
        }
        if domain.dim() != d {
            return Err(ModelError::Dimension(alloc::format!(
                "domain has dimension {}, expected {}",
                domain.dim(),
                d
            )));
        }
        let k = control.dim();

        let parse = |field: String, src: &str| -> Result<Expr, ModelError> {
            Expr::parse(src).map_err(|source| ModelError::Syntax { field, source })
        };
        let mut drift = Vec::with_capacity(d);
        for (i, s) in drift_src.iter().enumerate() {
            drift.push(parse(alloc::format!("drift[{}]", i + 1), s)?);
        }
        let mut diffusion = Vec::with_capacity(d * m);
        for (i, row) in diff_src.iter().enumerate() {
            for (j, s) in row.iter().enumerate() {
                diffusion.push(parse(alloc::format!("diffusion[{},{}]", i + 1, j + 1), s)?);
            }
        }
        let running = parse("running".into(), &running_src)?;
        let boundary = parse("boundary".into(), &boundary_src)?;

        let check_vars = |name: &str, e: &Expr, allow_actions: bool| -> Result<(), ModelError> {
            if e.max_state_var() > d {
                return Err(ModelError::Dimension(alloc::format!(
                    "{} references x{} but dim_state = {}",
                    name,
                    e.max_state_var(),
                    d
                )));
            }
            let amax = e.max_action_var();
            if (!allow_actions && amax > 0) || amax > k {
                return Err(ModelError::Dimension(alloc::format!(
                    "{} references a{} but {} action components are available",
                    name,
                    amax,
                    if allow_actions { k } else { 0 }
                )));
            }
            Ok(())
        };
        for e in drift.iter().chain(&diffusion) {
            check_vars("dynamics", e, true)?;
        }
        check_vars("running", &running, true)?;
        check_vars("boundary", &boundary, false)?;

        let mut p = ControlProblem {
            dim_state: d,
            dim_noise: m,
            drift,
            diffusion,
            running,
            boundary,
            discount: beta,
            control,
            domain,
            lipschitz_bound: self.lipschitz_bound,
            bounds: RewardBounds::empty(),
        };
        p.bounds = p.lattice_bounds()?;
        Ok(p)
    }
}

/// A quadratic test function
/// `φ(x) = c + g·(x−x₀) + ½ (x−x₀)ᵀ M (x−x₀)` with explicit jet.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProbe {
    pub center: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    /// Row-major `d × d`, symmetric.
    pub hess: Vec<f64>,
}

impl QuadraticProbe {
    pub fn new(center: Vec<f64>, value: f64, grad: Vec<f64>, hess: Vec<f64>) -> Self {
        QuadraticProbe { center, value, grad, hess }
    }

    pub fn constant(center: Vec<f64>, value: f64) -> Self {
        let d = center.len();
        QuadraticProbe { center, value, grad: vec![0.0; d], hess: vec![0.0; d * d] }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let mut lin = 0.0;
        let mut quad = 0.0;
        for i in 0..d {
            let di = x[i] - self.center[i];
            lin += self.grad[i] * di;
            for j in 0..d {
                quad += di * self.hess[i * d + j] * (x[j] - self.center[j]);
            }
        }
        self.value + lin + 0.5 * quad
    }

    pub fn grad_at(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .map(|i| {
                self.grad[i]
                    + (0..d).map(|j| self.hess[i * d + j] * (x[j] - self.center[j])).sum::<f64>()
            })
            .collect()
    }

    /// `φ + c`.
    pub fn shifted(&self, c: f64) -> Self {
        QuadraticProbe { value: self.value + c, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianValue {
    pub value: f64,
    /// Index into `A_h` of the first maximizer.
    pub action_index: usize,
}

impl ControlProblem {
    pub fn dim_state(&self) -> usize {
        self.dim_state
    }

    pub fn dim_noise(&self) -> usize {
        self.dim_noise
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn control_set(&self) -> &ControlSet {
        &self.control
    }

    pub fn domain(&self) -> &DomainGeometry {
        &self.domain
    }

    pub fn lipschitz_bound(&self) -> Option<f64> {
        self.lipschitz_bound
    }

    pub fn drift_exprs(&self) -> &[Expr] {
        &self.drift
    }

    /// Row-major `d × m`.
    pub fn diffusion_exprs(&self) -> &[Expr] {
        &self.diffusion
    }

    pub fn running_expr(&self) -> &Expr {
        &self.running
    }

    pub fn boundary_expr(&self) -> &Expr {
        &self.boundary
    }

    /// Bounds of `f` and `g` on the deterministic validation lattice.
    pub fn reward_bounds(&self) -> RewardBounds {
        self.bounds
    }

    fn eval_err(what: &'static str, x: &[f64], a: &[f64], source: EvalError) -> ModelError {
        ModelError::Eval { what, x: x.to_vec(), a: a.to_vec(), source }
    }

    pub fn drift_at(&self, x: &[f64], a: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
        for (o, e) in out.iter_mut().zip(&self.drift) {
            *o = e.eval(x, a).map_err(|s| Self::eval_err("drift", x, a, s))?;
        }
        Ok(())
    }

    /// Fills `out` (row-major `d × m`) with `σ(x, a)`.
    pub fn diffusion_at(&self, x: &[f64], a: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
        for (o, e) in out.iter_mut().zip(&self.diffusion) {
            *o = e.eval(x, a).map_err(|s| Self::eval_err("diffusion", x, a, s))?;
        }
        Ok(())
    }

    /// Fills `out` (row-major `d × d`) with `σσᵀ(x, a)`.
    pub fn covariance_at(&self, x: &[f64], a: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
        let d = self.dim_state;
        let m = self.dim_noise;
        let mut s = vec![0.0; d * m];
        self.diffusion_at(x, a, &mut s)?;
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = (0..m).map(|l| s[i * m + l] * s[j * m + l]).sum();
            }
        }
        Ok(())
    }

    pub fn running_at(&self, x: &[f64], a: &[f64]) -> Result<f64, ModelError> {
        self.running.eval(x, a).map_err(|s| Self::eval_err("running reward", x, a, s))
    }

    pub fn boundary_at(&self, x: &[f64]) -> Result<f64, ModelError> {
        self.boundary.eval(x, &[]).map_err(|s| Self::eval_err("boundary payoff", x, &[], s))
    }

    /// `f(x,a) + b(x,a)·p + ½ Tr(σσᵀ(x,a) M)` for one action.
    pub fn hamiltonian_term(
        &self,
        x: &[f64],
        a: &[f64],
        grad: &[f64],
        hess: &[f64],
    ) -> Result<f64, ModelError> {
        let d = self.dim_state;
        let mut b = vec![0.0; d];
        self.drift_at(x, a, &mut b)?;
        let mut cov = vec![0.0; d * d];
        self.covariance_at(x, a, &mut cov)?;
        let f = self.running_at(x, a)?;
        let drift_term: f64 = b.iter().zip(grad).map(|(u, v)| u * v).sum();
        let trace: f64 = (0..d * d).map(|ij| cov[ij] * hess[ij]).sum();
        Ok(f + drift_term + 0.5 * trace)
    }

    /// `H(x, p, M) = max_{a ∈ A_h} [f + b·p + ½ Tr(σσᵀ M)]`. Ties resolve to
    /// the first action in enumeration order.
    pub fn hamiltonian(
        &self,
        x: &[f64],
        grad: &[f64],
        hess: &[f64],
    ) -> Result<HamiltonianValue, ModelError> {
        let mut best = HamiltonianValue { value: f64::NEG_INFINITY, action_index: 0 };
        for (i, a) in self.control.iter().enumerate() {
            let v = self.hamiltonian_term(x, a, grad, hess)?;
            if v > best.value {
                best = HamiltonianValue { value: v, action_index: i };
            }
        }
        Ok(best)
    }

    /// `(L^a φ)(x) = b(x,a)·φ_x(x) + ½ Tr(σσᵀ(x,a) φ_xx)` for a quadratic probe.
    pub fn generator_apply(
        &self,
        phi: &QuadraticProbe,
        x: &[f64],
        a: &[f64],
    ) -> Result<f64, ModelError> {
        let d = self.dim_state;
        let mut b = vec![0.0; d];
        self.drift_at(x, a, &mut b)?;
        let mut cov = vec![0.0; d * d];
        self.covariance_at(x, a, &mut cov)?;
        let g = phi.grad_at(x);
        let drift_term: f64 = b.iter().zip(&g).map(|(u, v)| u * v).sum();
        let trace: f64 = (0..d * d).map(|ij| cov[ij] * phi.hess[ij]).sum();
        Ok(drift_term + 0.5 * trace)
    }

    /// Deterministic validation points inside `Ḡ` (9 per axis on the bounding box).
    pub(crate) fn validation_points(&self) -> Vec<Vec<f64>> {
        let (lo, hi) = self.domain.bounding_box();
        lattice(&lo, &hi, 9)
            .into_iter()
            .filter(|x| self.domain.classify(x) != PointClass::Exterior)
            .collect()
    }

    fn lattice_bounds(&self) -> Result<RewardBounds, ModelError> {
        let mut b = RewardBounds::empty();
        for x in self.validation_points() {
            for a in self.control.iter() {
                let f = self.running_at(&x, a)?;
                b.f_min = b.f_min.min(f);
                b.f_max = b.f_max.max(f);
            }
        }
        for x in self.domain.boundary_sample(9) {
            let g = self.boundary_at(&x)?;
            b.g_min = b.g_min.min(g);
            b.g_max = b.g_max.max(g);
        }
        Ok(b)
    }
}

/// Sampled standing-assumption diagnostics. These are evidence only: a
/// finite sample cannot certify global Lipschitz continuity.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub samples: usize,
    /// max |b(x,a) − b(y,a)| / |x − y|
    pub drift_lipschitz: f64,
    /// max |σ(x,a) − σ(y,a)|_F / |x − y|
    pub diffusion_lipschitz: f64,
    /// max (|b(x,a) − b(y,a)| + |σ(x,a) − σ(y,a)|) / |x − y|
    pub lipschitz_ratio: f64,
    /// max (|b(x,a)| + |σ(x,a)|) / (1 + |x|)
    pub growth_ratio: f64,
    pub bounds: RewardBounds,
    pub k_bound: Option<f64>,
    pub k_violation: bool,
}

impl Diagnostics {
    pub const NOTE: &'static str =
        "ratios are maxima over a finite sample; global Lipschitz continuity is not certified";
}

pub fn validate_assumptions(
    p: &ControlProblem,
    n_samples: usize,
    seed: u64,
) -> Result<Diagnostics, ModelError> {
    let n_samples = n_samples.max(2);
    let d = p.dim_state;
    let m = p.dim_noise;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = p.domain.bounding_box();

    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n_samples);
    let mut attempts = 0usize;
    while pts.len() < n_samples && attempts < 1000 * n_samples {
        attempts += 1;
        let x: Vec<f64> = (0..d).map(|i| lo[i] + (hi[i] - lo[i]) * rng.random::<f64>()).collect();
        if p.domain.classify(&x) != PointClass::Exterior {
            pts.push(x);
        }
    }
    // Corners/center of the validation lattice make sure extremes are seen.
    let mut all = p.validation_points();
    all.extend(pts.iter().cloned());

    let mut bounds = p.bounds;
    for x in &pts {
        for a in p.control.iter() {
            let f = p.running_at(x, a)?;
            bounds.f_min = bounds.f_min.min(f);
            bounds.f_max = bounds.f_max.max(f);
        }
        let y = p.domain.project_to_boundary(x);
        let g = p.boundary_at(&y)?;
        bounds.g_min = bounds.g_min.min(g);
        bounds.g_max = bounds.g_max.max(g);
    }

    let norm = |v: &[f64]| libm::sqrt(v.iter().map(|t| t * t).sum());
    let mut bx = vec![0.0; d];
    let mut by = vec![0.0; d];
    let mut sx = vec![0.0; d * m];
    let mut sy = vec![0.0; d * m];
    let mut drift_lip: f64 = 0.0;
    let mut diff_lip: f64 = 0.0;
    let mut lip: f64 = 0.0;
    let mut growth: f64 = 0.0;
    for (i, x) in all.iter().enumerate() {
        let y = &all[(i + 1) % all.len()];
        let dxy = dist(x, y);
        for a in p.control.iter() {
            p.drift_at(x, a, &mut bx)?;
            p.diffusion_at(x, a, &mut sx)?;
            growth = growth.max((norm(&bx) + norm(&sx)) / (1.0 + norm(x)));
            if dxy > 0.0 {
                p.drift_at(y, a, &mut by)?;
                p.diffusion_at(y, a, &mut sy)?;
                let db: Vec<f64> = bx.iter().zip(&by).map(|(u, v)| u - v).collect();
                let ds: Vec<f64> = sx.iter().zip(&sy).map(|(u, v)| u - v).collect();
                let rb = norm(&db) / dxy;
                let rs = norm(&ds) / dxy;
                drift_lip = drift_lip.max(rb);
                diff_lip = diff_lip.max(rs);
                lip = lip.max(rb + rs);
            }
        }
    }
    let k_violation = match p.lipschitz_bound {
        Some(k) => lip > k || growth > k,
        None => false,
    };
    Ok(Diagnostics {
        samples: all.len(),
        drift_lipschitz: drift_lip,
        diffusion_lipschitz: diff_lip,
        lipschitz_ratio: lip,
        growth_ratio: growth,
        bounds,
        k_bound: p.lipschitz_bound,
        k_violation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{p1, p2, p3};

    #[test]
    fn control_set_enumeration() {
        let c = ControlSet::new(&[(-1.0, 1.0)], &[21]).unwrap();
        assert_eq!(c.len(), 21);
        assert_eq!(c.action(0), &[-1.0]);
        assert_eq!(c.action(20), &[1.0]);
        assert_eq!(c.action(10), &[0.0]);
        assert!(c.iter().all(|a| c.contains(a)));

        let c2 = ControlSet::new(&[(0.0, 1.0), (2.0, 3.0)], &[2, 3]).unwrap();
        assert_eq!(c2.len(), 6);
        assert_eq!(c2.action(0), &[0.0, 2.0]);
        assert_eq!(c2.action(1), &[0.0, 2.5]);
        assert_eq!(c2.action(3), &[1.0, 2.0]);

        assert!(ControlSet::new(&[(1.0, 0.0)], &[3]).is_err());
        assert!(ControlSet::new(&[(0.0, f64::INFINITY)], &[3]).is_err());
        assert!(ControlSet::new(&[(0.0, 1.0)], &[0]).is_err());
    }

    #[test]
    fn domain_classification() {
        let g = DomainGeometry::new_box(&[(0.0, 1.0)]).unwrap();
        assert_eq!(g.classify(&[0.5]), PointClass::Interior);
        assert_eq!(g.classify(&[0.0]), PointClass::Boundary);
        assert_eq!(g.classify(&[1.0 + 5e-13]), PointClass::Boundary);
        assert_eq!(g.classify(&[1.0 + 1e-9]), PointClass::Exterior);
        assert_eq!(g.project_to_boundary(&[1.3]), vec![1.0]);
        assert_eq!(g.project_to_boundary(&[0.2]), vec![0.0]);
        assert_eq!(g.outward_normal(&[1.0]), vec![1.0]);

        let b = DomainGeometry::new_ball(&[0.0, 0.0], 1.0).unwrap();
        assert_eq!(b.classify(&[0.0, 0.0]), PointClass::Interior);
        assert_eq!(b.classify(&[1.0, 0.0]), PointClass::Boundary);
        assert_eq!(b.classify(&[1.0, 1.0]), PointClass::Exterior);
        let y = b.project_to_boundary(&[2.0, 0.0]);
        assert_eq!(y, vec![1.0, 0.0]);
        let t = b.axis_distance_to_boundary(&[0.5, 0.0], 0, 1.0);
        assert!((t - 0.5).abs() < 1e-15);
        let t = b.axis_distance_to_boundary(&[0.0, 0.6], 0, -1.0);
        assert!((t - 0.8).abs() < 1e-12);
        assert!(DomainGeometry::new_box(&[(0.0, 0.0)]).is_err());
        assert!(DomainGeometry::new_ball(&[0.0], 0.0).is_err());
    }

    #[test]
    fn builder_validation() {
        assert!(p1().control_set().len() == 1);
        assert_eq!(p2().control_set().len(), 21);
        let err = ProblemBuilder::new(1, 1)
            .discount(-1.0)
            .drift(&["0"])
            .diffusion(&[["1"]])
            .running("0")
            .boundary("x1")
            .control(ControlSet::new(&[(0.0, 0.0)], &[1]).unwrap())
            .domain(DomainGeometry::new_box(&[(0.0, 1.0)]).unwrap())
            .build()
            .unwrap_err();
        assert_eq!(err, ModelError::Discount(-1.0));
        assert!(err.to_string().contains("discount must be positive"));

        let base = || {
            ProblemBuilder::new(1, 1)
                .discount(1.0)
                .running("0")
                .boundary("x1")
                .control(ControlSet::new(&[(0.0, 0.0)], &[1]).unwrap())
                .domain(DomainGeometry::new_box(&[(0.0, 1.0)]).unwrap())
        };
        let err = base().drift(&["0"]).diffusion(&[["1", "0"]]).build().unwrap_err();
        assert!(matches!(err, ModelError::Dimension(_)));
        let err = base().drift(&["x2"]).diffusion(&[["1"]]).build().unwrap_err();
        assert!(matches!(err, ModelError::Dimension(_)));
        let err = base().drift(&["1 +"]).diffusion(&[["1"]]).build().unwrap_err();
        assert!(matches!(err, ModelError::Syntax { .. }));
        let err = base().diffusion(&[["1"]]).build().unwrap_err();
        assert_eq!(err, ModelError::MissingField("drift"));
        let err = base().drift(&["0"]).diffusion(&[["1"]]).boundary("a1").build().unwrap_err();
        assert!(matches!(err, ModelError::Dimension(_)));
        // f must be finite on the validation sample
        let err = base().drift(&["0"]).diffusion(&[["1"]]).running("1 / (x1 - 0.5)").build();
        assert!(matches!(err, Err(ModelError::Eval { .. })));
    }

    #[test]
    fn hamiltonian_examples() {
        let p = p2();
        // zero jet: only f survives
        let h = p.hamiltonian(&[0.3], &[0.0], &[0.0]).unwrap();
        assert_eq!(h.value, 0.0);
        assert_eq!(h.action_index, 0);
        // linear maximization over the box
        let h = p.hamiltonian(&[0.3], &[1.0], &[0.0]).unwrap();
        assert_eq!(h.value, 1.0);
        assert_eq!(p.control_set().action(h.action_index), &[1.0]);
        // single action substitution
        let h = p1().hamiltonian(&[0.5], &[2.0], &[4.0]).unwrap();
        assert_eq!(h.value, 2.0);
    }

    #[test]
    fn hamiltonian_reports_offending_action() {
        let p = ProblemBuilder::new(1, 1)
            .discount(1.0)
            .drift(&["0"])
            .diffusion(&[["sqrt(x1 - a1)"]])
            .running("0")
            .boundary("0")
            .control(ControlSet::new(&[(0.0, 0.0)], &[1]).unwrap())
            .domain(DomainGeometry::new_box(&[(0.0, 1.0)]).unwrap())
            .build()
            .unwrap();
        assert!(p.hamiltonian(&[0.5], &[0.0], &[1.0]).is_ok());
        match p.hamiltonian(&[-0.5], &[0.0], &[1.0]).unwrap_err() {
            ModelError::Eval { a, x, .. } => {
                assert_eq!(a, vec![0.0]);
                assert_eq!(x, vec![-0.5]);
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn generator_examples() {
        let sq = QuadraticProbe::new(vec![0.0], 0.0, vec![0.0], vec![2.0]);
        for x in [0.1, 0.5, 0.9] {
            assert_eq!(p1().generator_apply(&sq, &[x], &[0.0]).unwrap(), 1.0);
        }
        assert_eq!(p2().generator_apply(&sq, &[0.5], &[1.0]).unwrap(), 2.0);
        let c = QuadraticProbe::constant(vec![0.5], 3.0);
        assert_eq!(p2().generator_apply(&c, &[0.2], &[-1.0]).unwrap(), 0.0);
        assert_eq!(p3().generator_apply(&c, &[0.2], &[1.0]).unwrap(), 0.0);
    }

    #[test]
    fn diagnostics_examples() {
        let d = validate_assumptions(&p1(), 64, 3).unwrap();
        assert_eq!(d.lipschitz_ratio, 0.0);
        assert!(d.growth_ratio <= 1.0);
        assert_eq!((d.bounds.f_min, d.bounds.f_max), (0.0, 0.0));
        assert_eq!((d.bounds.g_min, d.bounds.g_max), (0.0, 1.0));

        let d = validate_assumptions(&p2(), 64, 3).unwrap();
        assert_eq!(d.drift_lipschitz, 0.0);
        assert!(d.growth_ratio <= 2.0);

        let sq = ProblemBuilder::new(1, 1)
            .discount(1.0)
            .drift(&["x1 * x1"])
            .diffusion(&[["1"]])
            .running("0")
            .boundary("0")
            .control(ControlSet::new(&[(0.0, 0.0)], &[1]).unwrap())
            .domain(DomainGeometry::new_box(&[(0.0, 1.0)]).unwrap())
            .lipschitz_bound(2.0)
            .build()
            .unwrap();
        let d = validate_assumptions(&sq, 200, 11).unwrap();
        // brute force over the same consecutive pairs: |x² − y²|/|x − y| = x + y
        assert!(d.drift_lipschitz > 0.0 && d.drift_lipschitz <= 2.0);
        assert!(!d.k_violation);
    }
}
