use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use super::{lattice_join, lattice_meet, Direction, MaxSelectBuilder, PerronError};
use crate::grid::{discrete_jet, ValueField};
use crate::model::{dist, lattice, ControlProblem, PointClass, QuadraticProbe};
use crate::sim::{ControlBuilder, ControlSpec, SwitchRule};

/// Local perturbation `φ ± η` of a quadratic probe on `B_ε(x₀) ∩ Ḡ`.
#[derive(Debug, Clone, PartialEq)]
pub struct BumpSpec {
    pub center: Vec<f64>,
    /// `ε`
    pub radius: f64,
    /// `η`
    pub height: f64,
    pub probe: QuadraticProbe,
    /// Index into `A_h` of the action used inside the ball (upward bumps).
    pub action: usize,
    /// Sample lattice points per axis over the cube around `x₀`.
    pub sample_per_axis: usize,
}

impl BumpSpec {
    pub fn new(center: Vec<f64>, radius: f64, height: f64, probe: QuadraticProbe, action: usize) -> Self {
        BumpSpec { center, radius, height, probe, action, sample_per_axis: 5 }
    }
}

/// Why a bump was not accepted.
#[derive(Debug, Clone, PartialEq)]
pub enum BumpRejection {
    Degenerate(&'static str),
    /// Generator inequality fails at `point` (`value` is the signed
    /// left-hand side: it must be `< 0` up, `> 0` down).
    SignCondition { point: Vec<f64>, value: f64 },
    /// `φ + η < g` (up) or `φ − η > g` (down) fails at a boundary point;
    /// `value` is `φ ± η − g`.
    BoundaryCondition { point: Vec<f64>, value: f64 },
    /// `η` is not below the margin between the candidate and `φ` on the shell.
    ShellMargin { margin: f64, height: f64 },
}

impl fmt::Display for BumpRejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BumpRejection::Degenerate(why) => write!(f, "degenerate bump: {why}"),
            BumpRejection::SignCondition { point, value } => {
                write!(f, "generator sign condition fails at {point:?} ({value:e})")
            }
            BumpRejection::BoundaryCondition { point, value } => {
                write!(f, "boundary sign condition fails at {point:?} ({value:e})")
            }
            BumpRejection::ShellMargin { margin, height } => {
                write!(f, "shell margin {margin:e} does not exceed height {height:e}")
            }
        }
    }
}

/// An accepted bump.
#[derive(Debug, Clone)]
pub struct BumpOutcome {
    pub field: ValueField,
    pub spec: BumpSpec,
    /// Sampled shell margin `δ′`.
    pub margin: f64,
    /// Least favorable sampled value of the generator inequality.
    pub worst_sign: f64,
    /// Nodes whose value changed.
    pub changed_nodes: Vec<usize>,
}

impl BumpOutcome {
    /// Control for the bumped subsolution: for starts `ξ` in
    /// `B_{ε/2}(x₀)` where `φ + η > u(ξ)` run the inner action until the
    /// path leaves `B_{ε/2}(x₀)`, then hand over to `fallback`; elsewhere use
    /// `fallback` directly.
    pub fn builder(
        &self,
        p: &ControlProblem,
        base: &ValueField,
        fallback: Arc<dyn ControlBuilder>,
    ) -> BumpBuilder {
        BumpBuilder {
            problem: p.clone(),
            base: base.clone(),
            spec: self.spec.clone(),
            action: p.control_set().action(self.spec.action).to_vec(),
            fallback,
        }
    }
}

#[derive(Clone)]
pub struct BumpBuilder {
    problem: ControlProblem,
    base: ValueField,
    spec: BumpSpec,
    action: Vec<f64>,
    fallback: Arc<dyn ControlBuilder>,
}

impl BumpBuilder {
    fn in_gamma(&self, start: &[f64]) -> bool {
        let s = &self.spec;
        if dist(start, &s.center) >= 0.5 * s.radius {
            return false;
        }
        let u = self.base.value_at(&self.problem, start).unwrap_or(f64::INFINITY);
        s.probe.eval(start) + s.height > u
    }
}

impl ControlBuilder for BumpBuilder {
    fn control_for(&self, t0: f64, start: &[f64]) -> ControlSpec {
        if self.in_gamma(start) {
            ControlSpec::Concatenated {
                first: alloc::boxed::Box::new(ControlSpec::Constant(self.action.clone())),
                switch: SwitchRule::LeaveBall {
                    center: self.spec.center.clone(),
                    radius: 0.5 * self.spec.radius,
                },
                second: self.fallback.clone(),
            }
        } else {
            self.fallback.control_for(t0, start)
        }
    }

    fn describe(&self) -> String {
        format!(
            "action {:?} inside B({:?}, {}) then {}",
            self.action,
            self.spec.center,
            0.5 * self.spec.radius,
            self.fallback.describe()
        )
    }
}

struct Samples {
    interior: Vec<Vec<f64>>,
    boundary: Vec<Vec<f64>>,
    shell: Vec<Vec<f64>>,
}

fn samples(p: &ControlProblem, field: &ValueField, spec: &BumpSpec) -> Samples {
    let d = p.dim_state();
    let eps = spec.radius;
    let x0 = &spec.center;
    let lo: Vec<f64> = x0.iter().map(|c| c - eps).collect();
    let hi: Vec<f64> = x0.iter().map(|c| c + eps).collect();
    let n = spec.sample_per_axis.max(2);
    let mut cloud = lattice(&lo, &hi, n);
    cloud.push(x0.clone());
    let grid = field.grid();
    let mut x = vec![0.0; d];
    for node in 0..grid.len() {
        grid.coords_into(node, &mut x);
        if dist(&x, x0) <= eps {
            cloud.push(x.clone());
        }
    }
    let domain = p.domain();
    let mut out = Samples { interior: Vec::new(), boundary: Vec::new(), shell: Vec::new() };
    let mut projected = Vec::new();
    for y in cloud {
        let r = dist(&y, x0);
        if r > eps {
            continue;
        }
        match domain.classify(&y) {
            PointClass::Interior => out.interior.push(y.clone()),
            PointClass::Boundary => out.boundary.push(y.clone()),
            PointClass::Exterior => {}
        }
        projected.push(domain.project_to_boundary(&y));
        if r >= 0.5 * eps && domain.classify(&y) != PointClass::Exterior {
            out.shell.push(y);
        }
    }
    projected.extend(domain.boundary_sample(9));
    for y in projected {
        let r = dist(&y, x0);
        if r <= eps {
            if r >= 0.5 * eps {
                out.shell.push(y.clone());
            }
            out.boundary.push(y);
        }
    }
    out
}

/// Sampled `min (u − φ)` (up) or `min (φ − w)` (down) over the shell
/// `S_ε = (B̄_ε \ B_{ε/2}) ∩ Ḡ`; `+∞` when the shell misses `Ḡ`.
pub(crate) fn shell_margin(
    p: &ControlProblem,
    field: &ValueField,
    spec: &BumpSpec,
    direction: Direction,
) -> Result<f64, PerronError> {
    let s = samples(p, field, spec);
    margin_on(field, &spec.probe, &s.shell, direction)
}

fn margin_on(
    field: &ValueField,
    probe: &QuadraticProbe,
    shell: &[Vec<f64>],
    direction: Direction,
) -> Result<f64, PerronError> {
    let mut m = f64::INFINITY;
    for y in shell {
        let u = field.interpolate(y)?;
        let phi = probe.eval(y);
        m = m.min(match direction {
            Direction::Sub => u - phi,
            Direction::Super => phi - u,
        });
    }
    Ok(m)
}

fn bump(
    p: &ControlProblem,
    field: &ValueField,
    spec: &BumpSpec,
    direction: Direction,
) -> Result<BumpOutcome, PerronError> {
    let d = p.dim_state();
    let reject = |r: BumpRejection| Err(PerronError::BumpRejected(r));
    if !(spec.radius > 0.0) {
        return reject(BumpRejection::Degenerate("radius must be positive"));
    }
    if !(spec.height > 0.0) {
        return reject(BumpRejection::Degenerate("height must be positive"));
    }
    if spec.center.len() != d || spec.probe.dim() != d {
        return reject(BumpRejection::Degenerate("dimension mismatch"));
    }
    if spec.action >= p.control_set().len() {
        return reject(BumpRejection::Degenerate("action index outside A_h"));
    }
    if p.domain().classify(&spec.center) == PointClass::Exterior {
        return reject(BumpRejection::Degenerate("center outside the closed domain"));
    }
    let beta = p.discount();
    let eta = spec.height;
    let phi = &spec.probe;
    let s = samples(p, field, spec);

    let mut worst = match direction {
        Direction::Sub => f64::NEG_INFINITY,
        Direction::Super => f64::INFINITY,
    };
    let a = p.control_set().action(spec.action);
    for y in &s.interior {
        match direction {
            Direction::Sub => {
                let lhs = beta * (phi.eval(y) + eta) - p.generator_apply(phi, y, a)? - p.running_at(y, a)?;
                if lhs >= 0.0 {
                    return reject(BumpRejection::SignCondition { point: y.clone(), value: lhs });
                }
                worst = worst.max(lhs);
            }
            Direction::Super => {
                let h = p.hamiltonian(y, &phi.grad_at(y), &phi.hess)?;
                let lhs = beta * (phi.eval(y) - eta) - h.value;
                if lhs <= 0.0 {
                    return reject(BumpRejection::SignCondition { point: y.clone(), value: lhs });
                }
                worst = worst.min(lhs);
            }
        }
    }
    for y in &s.boundary {
        let g = p.boundary_at(y)?;
        let (value, ok) = match direction {
            Direction::Sub => {
                let v = phi.eval(y) + eta - g;
                (v, v < 0.0)
            }
            Direction::Super => {
                let v = phi.eval(y) - eta - g;
                (v, v > 0.0)
            }
        };
        if !ok {
            return reject(BumpRejection::BoundaryCondition { point: y.clone(), value });
        }
    }
    let margin = margin_on(field, phi, &s.shell, direction)?;
    if !(margin > eta) {
        return reject(BumpRejection::ShellMargin { margin, height: eta });
    }

    let grid = field.grid();
    let mut values = field.values().to_vec();
    let mut changed = Vec::new();
    let mut boundary_touched = false;
    let mut x = vec![0.0; d];
    for (node, v) in values.iter_mut().enumerate() {
        if grid.class(node) == PointClass::Exterior {
            continue;
        }
        grid.coords_into(node, &mut x);
        if dist(&x, &spec.center) > spec.radius {
            continue;
        }
        let candidate = match direction {
            Direction::Sub => (phi.eval(&x) + eta).max(*v),
            Direction::Super => (phi.eval(&x) - eta).min(*v),
        };
        if candidate != *v {
            *v = candidate;
            changed.push(node);
            boundary_touched |= grid.class(node) == PointClass::Boundary;
        }
    }
    let consistent = field.is_boundary_consistent() && !boundary_touched;
    Ok(BumpOutcome {
        field: ValueField::new(grid.clone(), values, consistent)?,
        spec: spec.clone(),
        margin,
        worst_sign: worst,
        changed_nodes: changed,
    })
}

/// `u^η = (φ + η) ∨ u` on `B_ε ∩ Ḡ`, `u` elsewhere, after checking on a
/// sample lattice that `β(φ+η) − L^aφ − f(·,a) < 0` inside, `φ + η < g` on
/// `∂G`, and that `η` is below the shell margin `min (u − φ)`.
pub fn bump_up(
    p: &ControlProblem,
    u: &ValueField,
    spec: &BumpSpec,
) -> Result<BumpOutcome, PerronError> {
    bump(p, u, spec, Direction::Sub)
}

/// `w^η = (φ − η) ∧ w` on `B_ε ∩ Ḡ` after checking
/// `β(φ−η) − H(x, Dφ, D²φ) > 0` inside, `φ − η > g` on `∂G`, and the shell
/// margin `min (φ − w) > η`.
pub fn bump_down(
    p: &ControlProblem,
    w: &ValueField,
    spec: &BumpSpec,
) -> Result<BumpOutcome, PerronError> {
    bump(p, w, spec, Direction::Super)
}

/// Proposes bumps from the discrete jet of the current field.
///
/// Interior nodes where the field is a strict sub- (super-) solution of the
/// HJB inequality get a probe with the field's gradient and Hessian shifted
/// by `∓κ I`, where `κ` spends the fraction `t` of the residual on
/// curvature and leaves `1 − t` for the height. Boundary nodes
/// where the field is strictly below (above) `g` get a probe that is steep
/// along the outward normal so that it stays under (over) the field inside.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalJetProposer {
    /// Bump radii in multiples of the largest grid spacing; tried in order.
    pub radii: Vec<f64>,
    /// Fractions `t` of the interior residual moved into curvature; tried in order.
    pub curvature_splits: Vec<f64>,
    /// `η` as a fraction of the admissible height.
    pub height_fraction: f64,
    /// Use every `node_stride`-th node as a center.
    pub node_stride: usize,
    /// Minimal residual or boundary gap worth a proposal.
    pub min_gap: f64,
}

impl Default for LocalJetProposer {
    fn default() -> Self {
        LocalJetProposer {
            radii: vec![2.0, 4.0, 8.0],
            curvature_splits: vec![0.5, 0.75, 0.9],
            height_fraction: 0.5,
            node_stride: 1,
            min_gap: 1e-9,
        }
    }
}

impl LocalJetProposer {
    /// Proposals grouped by center node, each group in trial order.
    pub fn propose(
        &self,
        p: &ControlProblem,
        field: &ValueField,
        direction: Direction,
    ) -> Result<Vec<Vec<BumpSpec>>, PerronError> {
        let grid = field.grid();
        let d = grid.dim();
        let h = grid.max_spacing();
        let beta = p.discount();
        let sign = match direction {
            Direction::Sub => 1.0,
            Direction::Super => -1.0,
        };
        let mut cov = vec![0.0; d * d];
        let mut groups = Vec::new();
        for node in (0..grid.len()).step_by(self.node_stride.max(1)) {
            let class = grid.class(node);
            if class == PointClass::Exterior {
                continue;
            }
            let Some((grad, hess)) = discrete_jet(grid, field.values(), node) else {
                continue;
            };
            let x0 = grid.coords(node);
            let u0 = field.value(node);
            let mut max_tr: f64 = 0.0;
            for a in p.control_set().iter() {
                p.covariance_at(&x0, a, &mut cov)?;
                max_tr = max_tr.max((0..d).map(|i| cov[i * d + i]).sum());
            }
            if !(max_tr > 0.0) {
                continue;
            }
            let mut group = Vec::new();
            match class {
                PointClass::Interior => {
                    let h0 = p.hamiltonian(&x0, &grad, &hess)?;
                    let res = beta * u0 - h0.value;
                    // strict sub: res < 0; strict super: res > 0
                    let strength = -sign * res;
                    if strength <= self.min_gap {
                        continue;
                    }
                    let tr = match direction {
                        Direction::Sub => {
                            p.covariance_at(&x0, p.control_set().action(h0.action_index), &mut cov)?;
                            (0..d).map(|i| cov[i * d + i]).sum()
                        }
                        Direction::Super => max_tr,
                    };
                    if !(tr > 0.0) {
                        continue;
                    }
                    for &t in &self.curvature_splits {
                        let kappa = 2.0 * t * strength / tr;
                        let mut hq = hess.clone();
                        for i in 0..d {
                            hq[i * d + i] -= sign * kappa;
                        }
                        let probe = QuadraticProbe::new(x0.clone(), u0, grad.clone(), hq);
                        let cap = (1.0 - t) * strength / beta;
                        for r in &self.radii {
                            if let Some(spec) = self.finish(p, field, &probe, r * h, cap, direction)? {
                                group.push(spec);
                            }
                        }
                    }
                }
                PointClass::Boundary => {
                    let g0 = p.boundary_at(&x0)?;
                    let gap = sign * (g0 - u0);
                    if gap <= self.min_gap {
                        continue;
                    }
                    let n = p.domain().outward_normal(&x0);
                    let kappa = 2.0 * beta * gap / max_tr;
                    for r in &self.radii {
                        let eps = r * h;
                        let slope = 2.0 * gap / eps;
                        let gq: Vec<f64> =
                            grad.iter().zip(&n).map(|(g, ni)| g + sign * slope * ni).collect();
                        let mut hq = hess.clone();
                        for i in 0..d {
                            hq[i * d + i] += sign * kappa;
                        }
                        let probe = QuadraticProbe::new(x0.clone(), u0, gq, hq);
                        if let Some(spec) = self.finish(p, field, &probe, eps, gap, direction)? {
                            group.push(spec);
                        }
                    }
                }
                PointClass::Exterior => unreachable!(),
            }
            if !group.is_empty() {
                groups.push(group);
            }
        }
        Ok(groups)
    }

    fn finish(
        &self,
        p: &ControlProblem,
        field: &ValueField,
        probe: &QuadraticProbe,
        eps: f64,
        cap: f64,
        direction: Direction,
    ) -> Result<Option<BumpSpec>, PerronError> {
        let x0 = &probe.center;
        let action = p.hamiltonian(x0, &probe.grad, &probe.hess)?.action_index;
        let mut spec = BumpSpec::new(x0.clone(), eps, 0.0, probe.clone(), action);
        let margin = shell_margin(p, field, &spec, direction)?;
        let eta = self.height_fraction * margin.min(cap);
        if !(eta > 0.0) || !eta.is_finite() {
            return Ok(None);
        }
        spec.height = eta;
        Ok(Some(spec))
    }
}

/// Starting candidate for an envelope sequence with the builder that makes
/// it a stochastic subsolution (ignored for downward sequences).
#[derive(Clone)]
pub struct EnvelopeSeed {
    pub field: ValueField,
    pub builder: Arc<dyn ControlBuilder>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeConfig {
    pub direction: Direction,
    pub rounds: usize,
    pub proposer: LocalJetProposer,
}

#[derive(Clone)]
pub struct EnvelopeResult {
    /// `u_0 ≤ u_1 ≤ …` (up) or `w_0 ≥ w_1 ≥ …` (down), nodewise.
    pub sequence: Vec<ValueField>,
    /// Builder for the last upward field (max-select over bump builders).
    pub builder: Option<Arc<dyn ControlBuilder>>,
    pub accepted: usize,
    pub rejected: usize,
    pub log: Vec<String>,
}

impl EnvelopeResult {
    pub fn last(&self) -> &ValueField {
        self.sequence.last().expect("sequence holds the seed join")
    }
}

impl fmt::Debug for EnvelopeResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EnvelopeResult")
            .field("rounds", &(self.sequence.len() - 1))
            .field("accepted", &self.accepted)
            .field("rejected", &self.rejected)
            .finish()
    }
}

/// Builds the monotone sequence: every round joins (meets) the current
/// field with all accepted bumps of it and with the seeds.
pub fn envelope_iterate(
    p: &ControlProblem,
    seeds: &[EnvelopeSeed],
    cfg: &EnvelopeConfig,
) -> Result<EnvelopeResult, PerronError> {
    let combine = match cfg.direction {
        Direction::Sub => lattice_join,
        Direction::Super => lattice_meet,
    };
    let Some(first) = seeds.first() else {
        return Err(PerronError::Config("envelope needs at least one seed".into()));
    };
    let mut current = first.field.clone();
    for s in &seeds[1..] {
        current = combine(&current, &s.field)?;
    }
    let up = cfg.direction == Direction::Sub;
    let mut builder: Option<Arc<dyn ControlBuilder>> = up.then(|| {
        Arc::new(MaxSelectBuilder::new(
            p.clone(),
            seeds.iter().map(|s| (s.field.clone(), s.builder.clone())).collect(),
        )) as Arc<dyn ControlBuilder>
    });
    let mut sequence = vec![current.clone()];
    let mut accepted = 0;
    let mut rejected = 0;
    let mut log = Vec::new();
    for round in 0..cfg.rounds {
        let groups = cfg.proposer.propose(p, &current, cfg.direction)?;
        let mut next = current.clone();
        let mut entries: Vec<(ValueField, Arc<dyn ControlBuilder>)> = Vec::new();
        if let Some(b) = &builder {
            entries.push((current.clone(), b.clone()));
        }
        let (mut acc, mut rej) = (0, 0);
        for group in groups {
            for spec in group {
                match bump(p, &current, &spec, cfg.direction) {
                    Ok(outcome) => {
                        next = combine(&next, &outcome.field)?;
                        if let Some(b) = &builder {
                            let bb = outcome.builder(p, &current, b.clone());
                            entries.push((outcome.field.clone(), Arc::new(bb)));
                        }
                        acc += 1;
                        break;
                    }
                    Err(PerronError::BumpRejected(_)) => rej += 1,
                    Err(e) => return Err(e),
                }
            }
        }
        for s in seeds {
            next = combine(&next, &s.field)?;
            if up {
                entries.push((s.field.clone(), s.builder.clone()));
            }
        }
        if up {
            builder = Some(Arc::new(MaxSelectBuilder::new(p.clone(), entries)));
        }
        log.push(format!("round {}: {} accepted, {} rejected", round + 1, acc, rej));
        accepted += acc;
        rejected += rej;
        current = next;
        sequence.push(current.clone());
    }
    Ok(EnvelopeResult { sequence, builder, accepted, rejected, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::testing::{p1, p3};

    fn grid(p: &ControlProblem, n: usize) -> Arc<crate::grid::Grid> {
        Arc::new(Grid::new(p.domain(), &[n]).unwrap())
    }

    fn concave(x0: f64, value: f64, k: f64) -> QuadraticProbe {
        QuadraticProbe::new(vec![x0], value, vec![0.0], vec![k])
    }

    #[test]
    fn bump_up_raises_center_by_height() {
        let p = p3();
        let u = ValueField::constant(grid(&p, 33), 0.0).with_boundary_check(&p).unwrap();
        let spec = BumpSpec::new(vec![0.5], 0.6, 0.05, concave(0.5, 0.0, -1.5), 0);
        let out = bump_up(&p, &u, &spec).unwrap();
        assert_eq!(out.field.value(16), 0.05);
        assert!(out.field.values().iter().zip(u.values()).all(|(a, b)| a >= b));
        assert!(out.field.is_boundary_consistent());
        assert!(out.margin > 0.05);
    }

    #[test]
    fn flat_probe_meets_sign_condition_but_not_the_shell_margin() {
        let p = p3();
        let u = ValueField::constant(grid(&p, 33), 0.0);
        let spec = BumpSpec::new(vec![0.5], 0.2, 0.05, concave(0.5, 0.0, 0.0), 0);
        match bump_up(&p, &u, &spec).unwrap_err() {
            PerronError::BumpRejected(BumpRejection::ShellMargin { margin, .. }) => {
                assert_eq!(margin, 0.0)
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn bump_up_rejections() {
        let p = p3();
        let u = ValueField::constant(grid(&p, 33), 0.0);
        let big = BumpSpec::new(vec![0.5], 0.6, 0.5, concave(0.5, 0.0, -1.5), 0);
        assert!(matches!(
            bump_up(&p, &u, &big),
            Err(PerronError::BumpRejected(BumpRejection::ShellMargin { .. }))
                | Err(PerronError::BumpRejected(BumpRejection::SignCondition { .. }))
        ));
        let mid = BumpSpec::new(vec![0.5], 0.6, 0.08, concave(0.5, 0.0, -1.5), 0);
        assert!(matches!(
            bump_up(&p, &u, &mid),
            Err(PerronError::BumpRejected(BumpRejection::ShellMargin { .. }))
        ));
        let at_boundary = BumpSpec::new(vec![0.0], 0.2, 0.05, concave(0.0, 0.0, -1.5), 0);
        match bump_up(&p, &u, &at_boundary).unwrap_err() {
            PerronError::BumpRejected(BumpRejection::BoundaryCondition { point, value }) => {
                assert_eq!(point, vec![0.0]);
                assert!((value - 0.05).abs() < 1e-15);
            }
            e => panic!("{e:?}"),
        }
        let zero = BumpSpec::new(vec![0.5], 0.0, 0.05, concave(0.5, 0.0, -1.5), 0);
        assert!(matches!(
            bump_up(&p, &u, &zero),
            Err(PerronError::BumpRejected(BumpRejection::Degenerate(_)))
        ));
    }

    #[test]
    fn bump_down_examples() {
        let p = p3();
        let g = grid(&p, 33);
        let half = ValueField::constant(g.clone(), 0.5);
        let flat = BumpSpec::new(vec![0.5], 0.2, 0.05, concave(0.5, 0.5, 0.0), 0);
        match bump_down(&p, &half, &flat).unwrap_err() {
            PerronError::BumpRejected(BumpRejection::SignCondition { value, .. }) => {
                assert!((value + 0.1).abs() < 1e-12)
            }
            e => panic!("{e:?}"),
        }
        let one = ValueField::constant(g.clone(), 1.0);
        let spec = BumpSpec::new(vec![0.5], 0.8, 0.1, concave(0.5, 1.0, 1.5), 0);
        let out = bump_down(&p, &one, &spec).unwrap();
        assert_eq!(out.field.value(16), 0.9);
        assert!(out.field.values().iter().all(|v| *v <= 1.0));
        let zero = BumpSpec::new(vec![0.5], 0.0, 0.1, concave(0.5, 1.0, 1.5), 0);
        assert!(matches!(
            bump_down(&p, &one, &zero),
            Err(PerronError::BumpRejected(BumpRejection::Degenerate(_)))
        ));
    }

    #[test]
    fn bump_leaves_outside_untouched() {
        let p = p3();
        let g = grid(&p, 65);
        let u = ValueField::constant(g.clone(), 0.0);
        let spec = BumpSpec::new(vec![0.5], 0.3, 0.01, concave(0.5, 0.0, -1.0), 0);
        let out = bump_up(&p, &u, &spec).unwrap();
        for node in 0..g.len() {
            if (g.coords(node)[0] - 0.5).abs() > 0.3 {
                assert_eq!(out.field.value(node), 0.0);
            }
        }
    }

    #[test]
    fn envelope_sequences_are_monotone() {
        for p in [p1(), p3()] {
            let g = grid(&p, 33);
            let ctrl: Arc<dyn ControlBuilder> =
                Arc::new(ControlSpec::Constant(p.control_set().action(0).to_vec()));
            let sub = super::super::constant_subsolution(&p, g.clone()).unwrap();
            let sup = super::super::constant_supersolution(&p, g.clone()).unwrap();
            for (seed, direction) in [(sub, Direction::Sub), (sup, Direction::Super)] {
                let cfg = EnvelopeConfig { direction, rounds: 6, proposer: LocalJetProposer::default() };
                let r = envelope_iterate(&p, &[EnvelopeSeed { field: seed, builder: ctrl.clone() }], &cfg)
                    .unwrap();
                assert!(r.accepted > 0, "{direction}: {:?}", r.log);
                for w in r.sequence.windows(2) {
                    for (a, b) in w[0].values().iter().zip(w[1].values()) {
                        match direction {
                            Direction::Sub => assert!(b >= a),
                            Direction::Super => assert!(b <= a),
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn envelope_without_bumps_is_constant() {
        let p = p3();
        let g = grid(&p, 17);
        let ctrl: Arc<dyn ControlBuilder> = Arc::new(ControlSpec::Constant(vec![0.0]));
        let proposer = LocalJetProposer { radii: vec![], ..LocalJetProposer::default() };
        let cfg = EnvelopeConfig { direction: Direction::Sub, rounds: 3, proposer };
        let seed = ValueField::constant(g, 0.0);
        let r = envelope_iterate(&p, &[EnvelopeSeed { field: seed.clone(), builder: ctrl }], &cfg).unwrap();
        assert_eq!(r.sequence.len(), 4);
        assert!(r.sequence.iter().all(|f| f.values() == seed.values()));
    }
}
