#![allow(dead_code)]

use exitperron_core::{ControlProblem, ControlSet, DomainGeometry, ProblemBuilder};

fn interval_problem(beta: f64, drift: &str, running: &str, boundary: &str, control: ControlSet) -> ControlProblem {
    ProblemBuilder::new(1, 1)
        .discount(beta)
        .drift(&[drift])
        .diffusion(&[["1"]])
        .running(running)
        .boundary(boundary)
        .control(control)
        .domain(DomainGeometry::new_box(&[(0.0, 1.0)]).unwrap())
        .build()
        .unwrap()
}

pub fn bm_1d() -> ControlProblem {
    interval_problem(1.0, "0", "0", "x1", ControlSet::new(&[(0.0, 0.0)], &[1]).unwrap())
}

pub fn drift_control_1d() -> ControlProblem {
    interval_problem(1.0, "a1", "0", "1", ControlSet::new(&[(-1.0, 1.0)], &[21]).unwrap())
}

pub fn const_reward_1d() -> ControlProblem {
    interval_problem(2.0, "0", "1", "0", ControlSet::new(&[(-1.0, 1.0)], &[3]).unwrap())
}

pub fn disc_2d() -> ControlProblem {
    ProblemBuilder::new(2, 2)
        .discount(1.0)
        .drift(&["0", "0"])
        .diffusion(&[["1", "0"], ["0", "1"]])
        .running("0")
        .boundary("x1")
        .control(ControlSet::new(&[(0.0, 0.0)], &[1]).unwrap())
        .domain(DomainGeometry::new_ball(&[0.0, 0.0], 1.0).unwrap())
        .build()
        .unwrap()
}

pub fn catalog() -> Vec<(&'static str, ControlProblem)> {
    vec![
        ("bm-1d", bm_1d()),
        ("drift-control-1d", drift_control_1d()),
        ("const-reward-1d", const_reward_1d()),
        ("disc-2d", disc_2d()),
    ]
}

pub fn sinh_oracle(x: f64) -> f64 {
    (std::f64::consts::SQRT_2 * x).sinh() / std::f64::consts::SQRT_2.sinh()
}
