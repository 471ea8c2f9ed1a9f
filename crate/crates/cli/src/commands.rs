use std::path::Path;
use std::sync::Arc;

use exitperron_core::grid::{
    bellman_residual_with, discretize, refine_study, PolicyEvaluation, Solution, SolveOptions,
};
use exitperron_core::model::PointClass;
use exitperron_core::perron::{
    check_sandwich, constant_controls, constant_subsolution, constant_supersolution, dpp_residual,
    envelope_iterate, interior_node_starts, subsolution_constant, supersolution_constant,
    test_submartingale, test_supermartingale, viscosity_probe, Direction, DppConfig,
    EnvelopeConfig, EnvelopeResult, EnvelopeSeed, LocalJetProposer, MartingaleConfig,
    MartingaleReport, PerronError, ProbeConfig,
};
use exitperron_core::sim::{
    estimate_from_batch, simulate, ControlBuilder, ControlSpec, RandomizedStart, SimParams,
    StoppingRule,
};
use exitperron_core::{ControlProblem, Grid, ValueField};
use serde::Serialize;

use crate::args::{
    Candidate, Command, Common, DppArgs, Evaluation, MartingaleArgs, OracleArgs, RefineArgs,
    SandwichArgs, SimArgs, SimulateArgs, SolveArgs, SolverArgs, VerifyCommand, ViscosityArgs,
};
use crate::output::{self, ProblemEcho, Report, SCHEMA_VERSION};
use crate::{catalog, oracle, problem_file, Cli, CliError, Outcome};

pub fn dispatch(cli: &Cli) -> Result<Outcome, CliError> {
    match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Verify(VerifyCommand::Sub(a)) => cmd_verify_martingale(a, Direction::Sub),
        Command::Verify(VerifyCommand::Super(a)) => cmd_verify_martingale(a, Direction::Super),
        Command::Verify(VerifyCommand::Sandwich(a)) => cmd_verify_sandwich(a),
        Command::Verify(VerifyCommand::Dpp(a)) => cmd_verify_dpp(a),
        Command::Verify(VerifyCommand::Viscosity(a)) => cmd_verify_viscosity(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Refine(a) => cmd_refine(a),
    }
}

pub struct Loaded {
    pub problem: ControlProblem,
    pub echo: ProblemEcho,
    /// Catalog name, when the problem came from the catalog.
    pub name: Option<String>,
}

pub fn load(common: &Common) -> Result<Loaded, CliError> {
    match (&common.problem, &common.file) {
        (Some(name), None) => {
            let text = catalog::lookup(name).ok_or_else(|| {
                CliError::Config(format!(
                    "unknown catalog problem `{name}` (available: {})",
                    catalog::names().join(", ")
                ))
            })?;
            Ok(Loaded {
                problem: problem_file::parse_problem(text)?,
                echo: ProblemEcho::new(format!("catalog:{name}"), text),
                name: Some(name.clone()),
            })
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            Ok(Loaded {
                problem: problem_file::parse_problem(&text)?,
                echo: ProblemEcho::new(format!("file:{}", path.display()), &text),
                name: None,
            })
        }
        _ => Err(CliError::Config("give exactly one of --problem or --file".into())),
    }
}

fn write_report<C: Serialize, R: Serialize>(
    common: &Common,
    file: &str,
    command: &str,
    loaded: &Loaded,
    config: &C,
    result: R,
) -> Result<(), CliError> {
    let path = output::out_path(&common.out, file)?;
    let report = Report {
        schema_version: SCHEMA_VERSION,
        command,
        problem: &loaded.echo,
        seed: common.seed,
        config,
        result,
    };
    output::write_json(&path, &report)
}

fn make_grid(p: &ControlProblem, res: usize) -> Result<Arc<Grid>, CliError> {
    Ok(Arc::new(Grid::new(p.domain(), &vec![res; p.dim_state()])?))
}

fn solve_options(s: &SolverArgs) -> SolveOptions {
    SolveOptions {
        tol: s.tol,
        max_outer: s.max_outer,
        evaluation: match s.evaluation {
            Evaluation::Direct => PolicyEvaluation::Direct,
            Evaluation::RedBlack => PolicyEvaluation::RedBlack { max_sweeps: s.max_sweeps },
        },
    }
}

fn solve_on(p: &ControlProblem, grid: Arc<Grid>, s: &SolverArgs) -> Result<Solution, CliError> {
    Ok(exitperron_core::grid::solve_policy_iteration(&discretize(p, grid)?, solve_options(s))?)
}

fn parse_f64_list(s: &str, what: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("{what}: `{}` is not a number", t.trim())))
        })
        .collect()
}

fn parse_points(s: &str, d: usize) -> Result<Vec<Vec<f64>>, CliError> {
    let pts: Vec<Vec<f64>> =
        s.split(';').filter(|t| !t.trim().is_empty()).map(|t| parse_f64_list(t, "point")).collect::<Result<_, _>>()?;
    if pts.is_empty() {
        return Err(CliError::Config("no points given".into()));
    }
    if let Some(bad) = pts.iter().find(|x| x.len() != d) {
        return Err(CliError::Config(format!("point {bad:?} does not have {d} coordinates")));
    }
    Ok(pts)
}

fn check_inside(p: &ControlProblem, pts: &[Vec<f64>]) -> Result<(), CliError> {
    match pts.iter().find(|x| p.domain().classify(x) == PointClass::Exterior) {
        Some(x) => Err(CliError::Config(format!("point {x:?} lies outside the closed domain"))),
        None => Ok(()),
    }
}

/// Resolves control tokens; the grid solution is computed at most once.
struct Controls<'a> {
    p: &'a ControlProblem,
    grid: Arc<Grid>,
    solver: &'a SolverArgs,
    solution: Option<Solution>,
}

impl<'a> Controls<'a> {
    fn new(p: &'a ControlProblem, grid: Arc<Grid>, solver: &'a SolverArgs) -> Self {
        Controls { p, grid, solver, solution: None }
    }

    fn with_solution(mut self, sol: Solution) -> Self {
        self.solution = Some(sol);
        self
    }

    fn solution(&mut self) -> Result<&Solution, CliError> {
        if self.solution.is_none() {
            self.solution = Some(solve_on(self.p, self.grid.clone(), self.solver)?);
        }
        Ok(self.solution.as_ref().expect("just set"))
    }

    fn parse(&mut self, spec: &str) -> Result<Vec<ControlSpec>, CliError> {
        let mut out = Vec::new();
        for token in spec.split_whitespace() {
            match token {
                "optimal" => {
                    let sol = self.solution()?;
                    if !sol.converged {
                        return Err(CliError::Config(
                            "the grid solve behind `optimal` did not converge".into(),
                        ));
                    }
                    out.push(ControlSpec::Markov(Arc::new(sol.policy.clone())));
                }
                "constants" => out.extend(constant_controls(self.p)),
                t => {
                    let Some(list) = t.strip_prefix("const:") else {
                        return Err(CliError::Config(format!(
                            "unknown control `{t}` (use optimal, constants or const:a1,...)"
                        )));
                    };
                    let a = parse_f64_list(list, "control")?;
                    if !self.p.control_set().contains(&a) {
                        return Err(CliError::Config(format!("action {a:?} is outside A")));
                    }
                    out.push(ControlSpec::Constant(a));
                }
            }
        }
        if out.is_empty() {
            return Err(CliError::Config("no controls given".into()));
        }
        Ok(out)
    }
}

fn non_exterior(grid: &Grid) -> impl Iterator<Item = usize> + '_ {
    (0..grid.len()).filter(|&i| grid.class(i) != PointClass::Exterior)
}

#[derive(Serialize)]
struct SolveResult {
    converged: bool,
    outer_iterations: usize,
    inner_sweeps: usize,
    fixed_point_residual: f64,
    last_change: f64,
    ascent_violation: f64,
    hjb_residual_sup: f64,
    hjb_residual_mean: f64,
    nodes: usize,
    interior_nodes: usize,
    h: f64,
    value_min: f64,
    value_max: f64,
    lower_bound: f64,
    upper_bound: f64,
    within_constant_bounds: bool,
    oracle_sup_error: Option<f64>,
}

pub fn cmd_solve(a: &SolveArgs) -> Result<Outcome, CliError> {
    let loaded = load(&a.common)?;
    let p = &loaded.problem;
    let grid = make_grid(p, a.solver.res)?;
    let scheme = discretize(p, grid.clone())?;
    let sol = exitperron_core::grid::solve_policy_iteration(&scheme, solve_options(&a.solver))?;
    let residual = bellman_residual_with(&scheme, &sol.value)?;
    let values: Vec<f64> = non_exterior(&grid).map(|i| sol.value.value(i)).collect();
    let value_min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let value_max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lower_bound = subsolution_constant(p);
    let upper_bound = supersolution_constant(p);
    let oracle_sup_error = loaded.name.as_deref().and_then(oracle::for_problem).map(|f| {
        non_exterior(&grid)
            .map(|i| (sol.value.value(i) - f(&grid.coords(i)).value).abs())
            .fold(0.0, f64::max)
    });

    let dir = &a.common.out;
    output::write_value_csv(&output::out_path(dir, "value.csv")?, &sol.value)?;
    output::write_policy_csv(&output::out_path(dir, "policy.csv")?, &sol.policy)?;
    if a.gnuplot {
        let d = p.dim_state();
        let plot = if d == 1 { "plot 'value.csv' every ::1 using 1:2 with lines" } else { "splot 'value.csv' every ::1 using 1:2:3 with points" };
        output::write_gnuplot(&output::out_path(dir, "value.gnuplot")?, "value", plot)?;
    }
    let result = SolveResult {
        converged: sol.converged,
        outer_iterations: sol.outer_iterations,
        inner_sweeps: sol.inner_sweeps,
        fixed_point_residual: sol.fixed_point_residual,
        last_change: sol.last_change,
        ascent_violation: sol.ascent_violation,
        hjb_residual_sup: residual.sup,
        hjb_residual_mean: residual.mean,
        nodes: grid.len(),
        interior_nodes: scheme.interior().len(),
        h: grid.max_spacing(),
        value_min,
        value_max,
        lower_bound,
        upper_bound,
        within_constant_bounds: value_min >= lower_bound - 1e-8 && value_max <= upper_bound + 1e-8,
        oracle_sup_error,
    };
    write_report(&a.common, "residual.json", "solve", &loaded, a, result)?;
    Ok(if sol.converged { Outcome::Pass } else { Outcome::NonConvergence })
}

#[derive(Serialize)]
struct EstimateRecord {
    mean: f64,
    se: f64,
    n: usize,
    censored_frac: f64,
    dt: f64,
    ci99_lo: f64,
    ci99_hi: f64,
}

#[derive(Serialize)]
struct OracleComparison {
    value: f64,
    abs_error: f64,
}

#[derive(Serialize)]
struct SimulateResult {
    estimate: EstimateRecord,
    truncation_bound: f64,
    start: Vec<f64>,
    control: String,
    oracle: Option<OracleComparison>,
}

fn sim_params(s: &SimArgs, seed: u64, record_paths: bool) -> SimParams {
    SimParams { dt: s.dt, n_paths: s.paths, t_max: s.tmax, seed, record_paths }
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<Outcome, CliError> {
    let loaded = load(&a.common)?;
    let p = &loaded.problem;
    let x = parse_points(&a.x, p.dim_state())?;
    if x.len() != 1 {
        return Err(CliError::Config("simulate takes a single start point".into()));
    }
    check_inside(p, &x)?;
    let x = x.into_iter().next().expect("one point");
    let grid = make_grid(p, a.solver.res)?;
    let mut controls = Controls::new(p, grid, &a.solver);
    let ctrl = controls.parse(&a.control)?.swap_remove(0);
    let batch = simulate(p, &RandomizedStart::at(&x), &ctrl, &sim_params(&a.sim, a.common.seed, false))?;
    let est = estimate_from_batch(p, &batch);
    let dir = &a.common.out;
    output::write_batch_csv(&output::out_path(dir, "batch.csv")?, &batch, p.discount())?;
    let oracle = loaded.name.as_deref().and_then(oracle::for_problem).map(|f| {
        let v = f(&x).value;
        OracleComparison { value: v, abs_error: (est.mean - v).abs() }
    });
    let result = SimulateResult {
        estimate: EstimateRecord {
            mean: est.mean,
            se: est.se,
            n: est.n,
            censored_frac: est.censored_frac,
            dt: est.dt,
            ci99_lo: est.ci99_lo,
            ci99_hi: est.ci99_hi,
        },
        truncation_bound: est.truncation_bound,
        start: x,
        control: batch.control.clone(),
        oracle,
    };
    write_report(&a.common, "estimate.json", "simulate", &loaded, a, result)?;
    Ok(Outcome::Pass)
}

#[derive(Serialize)]
struct MartingaleRecordOut {
    control: String,
    rule: String,
    mean: f64,
    se: f64,
    n: usize,
    censored: usize,
    eps_stat: f64,
    pass: bool,
}

#[derive(Serialize)]
struct BoundaryViolationOut {
    point: Vec<f64>,
    value: f64,
    g: f64,
    excess: f64,
}

#[derive(Serialize)]
struct MartingaleOut {
    direction: String,
    pass: bool,
    c_bias: Option<f64>,
    dt: f64,
    max_se: f64,
    boundary_violation: Option<BoundaryViolationOut>,
    records: Vec<MartingaleRecordOut>,
}

impl MartingaleOut {
    fn from_result(direction: Direction, dt: f64, r: Result<MartingaleReport, PerronError>) -> Result<Self, CliError> {
        match r {
            Ok(rep) => Ok(MartingaleOut {
                direction: direction.to_string(),
                pass: rep.pass,
                c_bias: Some(rep.c_bias),
                dt,
                max_se: rep.records.iter().map(|r| r.se).fold(0.0, f64::max),
                boundary_violation: None,
                records: rep
                    .records
                    .into_iter()
                    .map(|r| MartingaleRecordOut {
                        control: r.control,
                        rule: r.rule,
                        mean: r.mean,
                        se: r.se,
                        n: r.n,
                        censored: r.censored,
                        eps_stat: r.eps_stat,
                        pass: r.pass,
                    })
                    .collect(),
            }),
            Err(PerronError::BoundaryViolation { point, value, g, excess, .. }) => Ok(MartingaleOut {
                direction: direction.to_string(),
                pass: false,
                c_bias: None,
                dt,
                max_se: 0.0,
                boundary_violation: Some(BoundaryViolationOut { point, value, g, excess }),
                records: Vec::new(),
            }),
            Err(e) => Err(e.into()),
        }
    }
}

#[derive(Serialize)]
struct MartingaleResult {
    field: String,
    controls: Vec<String>,
    test: MartingaleOut,
}

fn martingale_config(p: &ControlProblem, s: &SimArgs, seed: u64, c_bias: Option<f64>) -> MartingaleConfig {
    let mut cfg = MartingaleConfig::new(p, s.dt, s.paths, s.tmax, seed);
    cfg.c_bias = c_bias;
    cfg
}

pub fn cmd_verify_martingale(a: &MartingaleArgs, direction: Direction) -> Result<Outcome, CliError> {
    let loaded = load(&a.common)?;
    let p = &loaded.problem;
    let grid = make_grid(p, a.solver.res)?;
    let (field, field_name) = match &a.field {
        Some(path) => (output::read_value_csv(path, grid.clone(), p)?, format!("file:{}", path.display())),
        None => match direction {
            Direction::Sub => (constant_subsolution(p, grid.clone())?, format!("constant {}", subsolution_constant(p))),
            Direction::Super => {
                (constant_supersolution(p, grid.clone())?, format!("constant {}", supersolution_constant(p)))
            }
        },
    };
    let default_controls = match direction {
        Direction::Sub => "optimal",
        Direction::Super => "constants",
    };
    let mut controls = Controls::new(p, grid.clone(), &a.solver);
    let mut specs = controls.parse(a.controls.as_deref().unwrap_or(default_controls))?;
    let starts = interior_node_starts(&grid, a.t0_max);
    let cfg = martingale_config(p, &a.sim, a.common.seed, a.c_bias);
    let report = match direction {
        Direction::Sub => {
            specs.truncate(1);
            test_submartingale(p, &field, &specs[0], &starts, &cfg)
        }
        Direction::Super => test_supermartingale(p, &field, &specs, &starts, &cfg),
    };
    let test = MartingaleOut::from_result(direction, a.sim.dt, report)?;
    let pass = test.pass;
    let result = MartingaleResult {
        field: field_name,
        controls: specs.iter().map(|c| c.describe()).collect(),
        test,
    };
    let (file, command) = match direction {
        Direction::Sub => ("sub.json", "verify sub"),
        Direction::Super => ("super.json", "verify super"),
    };
    write_report(&a.common, file, command, &loaded, a, result)?;
    Ok(Outcome::from_pass(pass))
}

#[derive(Serialize)]
struct EnvelopeOut {
    source: String,
    rounds: usize,
    accepted: usize,
    rejected: usize,
    log: Vec<String>,
    martingale: Option<MartingaleOut>,
}

#[derive(Serialize)]
struct SandwichOut {
    lower_margin: f64,
    lower_at: Vec<f64>,
    upper_margin: f64,
    upper_at: Vec<f64>,
    boundary_lower_margin: f64,
    boundary_upper_margin: f64,
    max_gap: f64,
    eps: f64,
    points: usize,
    pass: bool,
}

#[derive(Serialize)]
struct SandwichResult {
    solver_converged: bool,
    lower: EnvelopeOut,
    upper: EnvelopeOut,
    se: f64,
    sandwich: SandwichOut,
    pass: bool,
}

pub fn cmd_verify_sandwich(a: &SandwichArgs) -> Result<Outcome, CliError> {
    let loaded = load(&a.common)?;
    let p = &loaded.problem;
    let grid = make_grid(p, a.solver.res)?;
    let sol = solve_on(p, grid.clone(), &a.solver)?;
    if !sol.converged {
        eprintln!("grid solve did not converge");
        return Ok(Outcome::NonConvergence);
    }
    let proposer = LocalJetProposer {
        radii: parse_f64_list(&a.radii, "radii")?,
        height_fraction: a.height_fraction,
        ..LocalJetProposer::default()
    };
    let seed_builder: Arc<dyn ControlBuilder> =
        Arc::new(ControlSpec::Constant(p.control_set().action(0).to_vec()));
    let envelope = |field: ValueField, direction| -> Result<EnvelopeResult, CliError> {
        let cfg = EnvelopeConfig { direction, rounds: a.rounds, proposer: proposer.clone() };
        Ok(envelope_iterate(p, &[EnvelopeSeed { field, builder: seed_builder.clone() }], &cfg)?)
    };
    let starts = interior_node_starts(&grid, a.t0_max);
    let mcfg = martingale_config(p, &a.sim, a.common.seed, None);

    let (lower, lower_out) = match &a.lower {
        Some(path) => (output::read_value_csv(path, grid.clone(), p)?, file_envelope(path)),
        None => {
            let env = envelope(constant_subsolution(p, grid.clone())?, Direction::Sub)?;
            let builder = env.builder.clone().expect("upward envelopes carry a builder");
            let martingale = (a.sim.paths > 0)
                .then(|| {
                    MartingaleOut::from_result(
                        Direction::Sub,
                        a.sim.dt,
                        test_submartingale(p, env.last(), builder.as_ref(), &starts, &mcfg),
                    )
                })
                .transpose()?;
            (env.last().clone(), envelope_out("upward envelope from the constant subsolution", &env, martingale))
        }
    };
    let (upper, upper_out) = match &a.upper {
        Some(path) => (output::read_value_csv(path, grid.clone(), p)?, file_envelope(path)),
        None => {
            let env = envelope(constant_supersolution(p, grid.clone())?, Direction::Super)?;
            let martingale = (a.sim.paths > 0)
                .then(|| {
                    MartingaleOut::from_result(
                        Direction::Super,
                        a.sim.dt,
                        test_supermartingale(p, env.last(), &constant_controls(p), &starts, &mcfg),
                    )
                })
                .transpose()?;
            (env.last().clone(), envelope_out("downward envelope from the constant supersolution", &env, martingale))
        }
    };
    let se = [&lower_out, &upper_out]
        .iter()
        .filter_map(|e| e.martingale.as_ref().map(|m| m.max_se))
        .fold(0.0, f64::max);
    let r = check_sandwich(&lower, &sol.value, &upper, &[], se, a.eps)?;
    let martingale_pass = [&lower_out, &upper_out]
        .iter()
        .all(|e| e.martingale.as_ref().is_none_or(|m| m.pass));
    let pass = r.pass && martingale_pass;
    let result = SandwichResult {
        solver_converged: sol.converged,
        lower: lower_out,
        upper: upper_out,
        se,
        sandwich: SandwichOut {
            lower_margin: r.lower_margin,
            lower_at: r.lower_at,
            upper_margin: r.upper_margin,
            upper_at: r.upper_at,
            boundary_lower_margin: r.boundary_lower_margin,
            boundary_upper_margin: r.boundary_upper_margin,
            max_gap: r.max_gap,
            eps: r.eps,
            points: r.points,
            pass: r.pass,
        },
        pass,
    };
    write_report(&a.common, "sandwich.json", "verify sandwich", &loaded, a, result)?;
    Ok(Outcome::from_pass(pass))
}

fn file_envelope(path: &Path) -> EnvelopeOut {
    EnvelopeOut {
        source: format!("file:{}", path.display()),
        rounds: 0,
        accepted: 0,
        rejected: 0,
        log: Vec::new(),
        martingale: None,
    }
}

fn envelope_out(source: &str, env: &EnvelopeResult, martingale: Option<MartingaleOut>) -> EnvelopeOut {
    EnvelopeOut {
        source: source.to_string(),
        rounds: env.sequence.len() - 1,
        accepted: env.accepted,
        rejected: env.rejected,
        log: env.log.clone(),
        martingale,
    }
}

/// `n` evenly spaced interior points on a segment through the domain, plus
/// the segment's two boundary endpoints.
fn default_dpp_points(p: &ControlProblem, n: usize) -> Vec<Vec<f64>> {
    let (lo, hi) = p.domain().bounding_box();
    let (a, b) = match p.domain() {
        exitperron_core::DomainGeometry::Box { .. } => (lo, hi),
        exitperron_core::DomainGeometry::Ball { center, radius } => {
            let mut a = center.clone();
            let mut b = center.clone();
            a[0] -= radius;
            b[0] += radius;
            (a, b)
        }
    };
    let at = |t: f64| -> Vec<f64> { a.iter().zip(&b).map(|(x, y)| x + t * (y - x)).collect() };
    let mut pts: Vec<Vec<f64>> = (1..=n).map(|i| at(i as f64 / (n + 1) as f64)).collect();
    pts.push(a.clone());
    pts.push(b.clone());
    pts
}

#[derive(Serialize)]
struct DppRuleOut {
    rule: String,
    bracket: f64,
    se: f64,
    best_control: String,
    residual: f64,
    tol: f64,
    pass: bool,
}

#[derive(Serialize)]
struct DppPointOut {
    point: Vec<f64>,
    value: f64,
    on_boundary: bool,
    pass: bool,
    rules: Vec<DppRuleOut>,
}

#[derive(Serialize)]
struct DppResult {
    h: f64,
    policies: Vec<String>,
    rules: Vec<String>,
    max_abs_residual: f64,
    pass: bool,
    points: Vec<DppPointOut>,
}

pub fn cmd_verify_dpp(a: &DppArgs) -> Result<Outcome, CliError> {
    let loaded = load(&a.common)?;
    let p = &loaded.problem;
    let grid = make_grid(p, a.solver.res)?;
    let sol = solve_on(p, grid.clone(), &a.solver)?;
    if !sol.converged {
        eprintln!("grid solve did not converge");
        return Ok(Outcome::NonConvergence);
    }
    let points = match &a.points {
        Some(s) => parse_points(s, p.dim_state())?,
        None => default_dpp_points(p, a.interior_points),
    };
    check_inside(p, &points)?;
    let vhat = sol.value.clone();
    let mut controls = Controls::new(p, grid.clone(), &a.solver).with_solution(sol);
    let policies = controls.parse(&a.policies)?;
    let rules = StoppingRule::default_family(p.domain());
    let report = dpp_residual(
        p,
        &vhat,
        &points,
        &policies,
        &rules,
        &sim_params(&a.sim, a.common.seed, true),
        &DppConfig { c_bias: a.c_bias, c_h: a.c_h },
    )?;
    let result = DppResult {
        h: grid.max_spacing(),
        policies: policies.iter().map(|c| c.describe()).collect(),
        rules: rules.iter().map(|r| r.to_string()).collect(),
        max_abs_residual: report.max_abs_residual,
        pass: report.pass,
        points: report
            .points
            .into_iter()
            .map(|pt| DppPointOut {
                point: pt.point,
                value: pt.value,
                on_boundary: pt.on_boundary,
                pass: pt.pass,
                rules: pt
                    .rules
                    .into_iter()
                    .map(|r| DppRuleOut {
                        rule: r.rule,
                        bracket: r.bracket,
                        se: r.se,
                        best_control: r.best_control,
                        residual: r.residual,
                        tol: r.tol,
                        pass: r.pass,
                    })
                    .collect(),
            })
            .collect(),
    };
    write_report(&a.common, "dpp.json", "verify dpp", &loaded, a, result)?;
    Ok(Outcome::from_pass(report.pass))
}

#[derive(Serialize)]
struct ProbeOut {
    point: Vec<f64>,
    class: String,
    sub_residual: f64,
    super_residual: f64,
}

#[derive(Serialize)]
struct ViscosityResult {
    candidate: String,
    nodes_probed: usize,
    skipped: Vec<Vec<f64>>,
    tol: f64,
    max_sub: f64,
    min_super: f64,
    sub_pass: bool,
    super_pass: bool,
    worst_sub: Option<ProbeOut>,
    worst_super: Option<ProbeOut>,
    pass: bool,
}

pub fn cmd_verify_viscosity(a: &ViscosityArgs) -> Result<Outcome, CliError> {
    let loaded = load(&a.common)?;
    let p = &loaded.problem;
    let grid = make_grid(p, a.solver.res)?;
    let (field, candidate) = match a.candidate {
        Candidate::Oracle => {
            let name = loaded.name.as_deref().unwrap_or("");
            let f = oracle::for_problem(name)
                .ok_or_else(|| CliError::Config(format!("no closed form registered for `{name}`")))?;
            (ValueField::from_fn(grid.clone(), |x| f(x).value)?, "oracle".to_string())
        }
        Candidate::Solution => {
            let sol = solve_on(p, grid.clone(), &a.solver)?;
            if !sol.converged {
                eprintln!("grid solve did not converge");
                return Ok(Outcome::NonConvergence);
            }
            (sol.value, "solution".to_string())
        }
        Candidate::File => {
            let path = a.field.as_ref().ok_or_else(|| CliError::Config("--candidate file needs --field".into()))?;
            (output::read_value_csv(path, grid.clone(), p)?, format!("file:{}", path.display()))
        }
    };
    let nodes: Vec<usize> = (0..grid.len())
        .filter(|&i| match grid.class(i) {
            PointClass::Interior => true,
            PointClass::Boundary => a.include_boundary,
            PointClass::Exterior => false,
        })
        .collect();
    let cfg = ProbeConfig { lambdas: parse_f64_list(&a.lambdas, "lambdas")?, tol: a.visc_tol };
    let r = viscosity_probe(p, &field, &nodes, &cfg)?;
    let to_out = |rec: &exitperron_core::perron::ProbeRecord| ProbeOut {
        point: rec.point.clone(),
        class: format!("{:?}", rec.class).to_lowercase(),
        sub_residual: rec.sub_residual,
        super_residual: rec.super_residual,
    };
    let worst_sub = r.records.iter().max_by(|x, y| x.sub_residual.total_cmp(&y.sub_residual)).map(to_out);
    let worst_super = r.records.iter().min_by(|x, y| x.super_residual.total_cmp(&y.super_residual)).map(to_out);
    let pass = r.sub_pass && r.super_pass;
    let result = ViscosityResult {
        candidate,
        nodes_probed: r.records.len(),
        skipped: r.skipped.iter().map(|&i| grid.coords(i)).collect(),
        tol: r.tol,
        max_sub: r.max_sub,
        min_super: r.min_super,
        sub_pass: r.sub_pass,
        super_pass: r.super_pass,
        worst_sub,
        worst_super,
        pass,
    };
    write_report(&a.common, "viscosity.json", "verify viscosity", &loaded, a, result)?;
    Ok(Outcome::from_pass(pass))
}

pub fn cmd_oracle(a: &OracleArgs) -> Result<Outcome, CliError> {
    let loaded = load(&a.common)?;
    let p = &loaded.problem;
    let name = loaded.name.as_deref().unwrap_or("");
    let f = oracle::for_problem(name).ok_or_else(|| {
        CliError::Config(format!("no closed form registered for `{}`", loaded.echo.source))
    })?;
    let points = match &a.x {
        Some(s) => parse_points(s, p.dim_state())?,
        None => {
            let grid = make_grid(p, a.res)?;
            non_exterior(&grid).map(|i| grid.coords(i)).collect()
        }
    };
    check_inside(p, &points)?;
    let d = p.dim_state();
    let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    header.extend(["value".to_string(), "truncation_bound".to_string()]);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<f64>> = points
        .iter()
        .map(|x| {
            let v = f(x);
            let mut row = x.clone();
            row.extend([v.value, v.truncation_bound]);
            row
        })
        .collect();
    output::write_table(&output::out_path(&a.common.out, "oracle.csv")?, &header, &rows)?;
    Ok(Outcome::Pass)
}

#[derive(Serialize)]
struct RefineRowOut {
    h: f64,
    diff_sup: f64,
}

#[derive(Serialize)]
struct RefineResult {
    resolutions: Vec<usize>,
    rows: Vec<RefineRowOut>,
    monotone: bool,
}

pub fn cmd_refine(a: &RefineArgs) -> Result<Outcome, CliError> {
    let loaded = load(&a.common)?;
    let p = &loaded.problem;
    let resolutions: Vec<usize> = a
        .resolutions
        .split(',')
        .map(|t| t.trim().parse().map_err(|_| CliError::Config(format!("bad resolution `{}`", t.trim()))))
        .collect::<Result<_, _>>()?;
    if resolutions.len() < 3 {
        return Err(CliError::Config("refine needs at least three resolutions".into()));
    }
    let options = SolveOptions { tol: a.tol, max_outer: a.max_outer, ..SolveOptions::default() };
    let table = refine_study(p, &resolutions, options)?;
    let dir = &a.common.out;
    let rows: Vec<Vec<f64>> = table.rows.iter().map(|r| vec![r.h, r.diff_sup]).collect();
    output::write_table(&output::out_path(dir, "refine.csv")?, &["h", "diff_sup"], &rows)?;
    if a.gnuplot {
        output::write_gnuplot(
            &output::out_path(dir, "refine.gnuplot")?,
            "refinement",
            "set logscale xy\nplot 'refine.csv' every ::1 using 1:2 with linespoints",
        )?;
    }
    let result = RefineResult {
        resolutions,
        rows: table.rows.iter().map(|r| RefineRowOut { h: r.h, diff_sup: r.diff_sup }).collect(),
        monotone: table.monotone,
    };
    write_report(&a.common, "refine.json", "refine", &loaded, a, result)?;
    Ok(Outcome::from_pass(table.monotone))
}
