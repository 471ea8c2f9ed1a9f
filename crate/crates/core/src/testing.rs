use crate::model::{ControlProblem, ControlSet, DomainGeometry, ProblemBuilder};

fn unit_interval() -> DomainGeometry {
    DomainGeometry::new_box(&[(0.0, 1.0)]).unwrap()
}

pub fn p1() -> ControlProblem {
    ProblemBuilder::new(1, 1)
        .discount(1.0)
        .drift(&["0"])
        .diffusion(&[["1"]])
        .running("0")
        .boundary("x1")
        .control(ControlSet::new(&[(0.0, 0.0)], &[1]).unwrap())
        .domain(unit_interval())
        .build()
        .unwrap()
}

pub fn p2() -> ControlProblem {
    ProblemBuilder::new(1, 1)
        .discount(1.0)
        .drift(&["a1"])
        .diffusion(&[["1"]])
        .running("0")
        .boundary("1")
        .control(ControlSet::new(&[(-1.0, 1.0)], &[21]).unwrap())
        .domain(unit_interval())
        .build()
        .unwrap()
}

pub fn p3() -> ControlProblem {
    ProblemBuilder::new(1, 1)
        .discount(2.0)
        .drift(&["0"])
        .diffusion(&[["1"]])
        .running("1")
        .boundary("0")
        .control(ControlSet::new(&[(-1.0, 1.0)], &[3]).unwrap())
        .domain(unit_interval())
        .build()
        .unwrap()
}

pub fn disc() -> ControlProblem {
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

pub fn sinh_oracle(x: f64) -> f64 {
    libm::sinh(core::f64::consts::SQRT_2 * x) / libm::sinh(core::f64::consts::SQRT_2)
}
